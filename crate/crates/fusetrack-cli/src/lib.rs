//! Command implementations shared between the binary and its tests.

use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fusetrack_core::bbox::BBox;
use fusetrack_core::config::{AugMode, RunConfig};
use fusetrack_core::data::metrics::{
    average_overlap, normalized_center_error, normalized_precision, precision, success_auc,
    MetricReport, SequenceScores,
};
use fusetrack_core::data::synth::{generate_sequence, SynthConfig};
use fusetrack_core::data::Sequence;
use fusetrack_core::fusion::{FusionMode, PeMode};
use fusetrack_core::heads::LossMode;
use fusetrack_core::model::{model_gradcheck, TrackModel};
use fusetrack_core::params::ParamStore;
use fusetrack_core::tracker::{track_sequence, CropSpec, make_crop};
use fusetrack_core::train::{train, TrainOutcome};
use fusetrack_core::Graph;

/// Coordinates probed per parameter by the `gradcheck` command; keeps the
/// full-model audit to seconds while still touching every parameter.
pub const GRADCHECK_COORDS_PER_PARAM: usize = 6;

/// Seed offset separating held-out evaluation sequences from the
/// training corpus.
pub const HOLDOUT_SEED_OFFSET: u64 = 10_000;

/// Load a checkpoint and rebuild its model, auditing that the stored
/// parameters exactly match the shapes the embedded config implies.
pub fn load_model(ckpt: &Path) -> Result<(ParamStore, TrackModel, RunConfig)> {
    let (store, config_json) = ParamStore::load(ckpt)
        .with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let cfg = RunConfig::from_json(&config_json)?;
    let mut expected = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let model = TrackModel::init(&mut expected, &cfg.model, &mut rng);
    let expect_names: Vec<&str> = expected.names().collect();
    let got_names: Vec<&str> = store.names().collect();
    if expect_names != got_names {
        bail!(
            "checkpoint/config mismatch: expected {} parameters, found {}",
            expect_names.len(),
            got_names.len()
        );
    }
    for (name, p) in expected.iter() {
        let q = store.get(name).expect("names already matched");
        if p.shape != q.shape {
            bail!(
                "checkpoint/config mismatch: {name} has shape {:?}, config implies {:?}",
                q.shape,
                p.shape
            );
        }
    }
    Ok((store, model, cfg))
}

/// Results file: one `frame,x,y,w,h` line per frame, 1-based frames,
/// frame 1 being the ground-truth init box.
pub fn write_results(path: &Path, init_gt: &BBox, boxes: &[BBox]) -> Result<()> {
    let mut text = String::new();
    text.push_str(&format!(
        "1,{},{},{},{}\n",
        init_gt.x, init_gt.y, init_gt.w, init_gt.h
    ));
    for (i, b) in boxes.iter().enumerate() {
        text.push_str(&format!("{},{},{},{},{}\n", i + 2, b.x, b.y, b.w, b.h));
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn parse_results(text: &str) -> Result<Vec<(usize, BBox)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 5 {
            bail!("malformed results line {}: {raw:?}", i + 1);
        }
        let frame: usize = parts[0]
            .parse()
            .with_context(|| format!("bad frame number on line {}", i + 1))?;
        let v: Vec<f64> = parts[1..]
            .iter()
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("bad box on line {}", i + 1))?;
        out.push((frame, BBox::new(v[0], v[1], v[2], v[3])));
    }
    Ok(out)
}

/// Per-frame IoUs of a prediction list against a sequence, excluding the
/// ground-truth init frame.
pub fn sequence_ious(preds: &[(usize, BBox)], seq: &Sequence) -> Result<Vec<f64>> {
    if preds.len() != seq.len() {
        bail!(
            "frame count mismatch: {} result lines, {} frames",
            preds.len(),
            seq.len()
        );
    }
    let mut ious = Vec::new();
    for (frame, b) in preds {
        if *frame < 1 || *frame > seq.len() {
            bail!("result frame {frame} outside sequence of {} frames", seq.len());
        }
        if *frame == 1 {
            continue;
        }
        ious.push(b.iou(&seq.gt[frame - 1]));
    }
    Ok(ious)
}

/// Score a results file against one sequence's ground truth.
pub fn eval_results(results: &Path, seq: &Sequence) -> Result<MetricReport> {
    let text = std::fs::read_to_string(results)
        .with_context(|| format!("reading {}", results.display()))?;
    let preds = parse_results(&text)?;
    let ious = sequence_ious(&preds, seq)?;
    let mut center_errors = Vec::new();
    let mut norm_errors = Vec::new();
    for (frame, b) in &preds {
        if *frame == 1 {
            continue;
        }
        let gt = &seq.gt[frame - 1];
        let (px, py) = b.center();
        let (gx, gy) = gt.center();
        center_errors.push(((px - gx).powi(2) + (py - gy).powi(2)).sqrt());
        norm_errors.push(normalized_center_error(px - gx, py - gy, gt.w, gt.h));
    }
    let suc = success_auc(&ious)?;
    let pre = precision(&center_errors, 20.0)?;
    let npre = normalized_precision(&norm_errors)?;
    let (mao, msr50, msr75) = average_overlap(std::slice::from_ref(&ious))?;
    Ok(MetricReport {
        suc,
        pre,
        npre,
        mao,
        msr50,
        msr75,
        per_sequence: vec![SequenceScores {
            name: seq.name.clone(),
            suc,
            pre,
            npre,
        }],
    })
}

pub fn format_report_table(r: &MetricReport) -> String {
    let mut s = String::new();
    s.push_str("metric  value\n");
    for (name, v) in [
        ("suc", r.suc),
        ("pre", r.pre),
        ("npre", r.npre),
        ("mao", r.mao),
        ("msr50", r.msr50),
        ("msr75", r.msr75),
    ] {
        s.push_str(&format!("{name:<8}{v:.4}\n"));
    }
    s
}

/// Full-model gradient audit, aggregated per top-level parameter group.
pub fn gradcheck_report(cfg: &RunConfig) -> Result<(f64, Vec<(String, f64)>)> {
    cfg.validate()?;
    let report = model_gradcheck(cfg, GRADCHECK_COORDS_PER_PARAM)?;
    let mut groups: std::collections::BTreeMap<String, f64> = Default::default();
    for (name, err) in &report.per_param {
        let group = name.split('.').next().unwrap_or(name).to_string();
        let e = groups.entry(group).or_insert(0.0);
        *e = e.max(*err);
    }
    Ok((report.max_rel_error, groups.into_iter().collect()))
}

/// Held-out synthetic sequences, disjoint from the training corpus by
/// seed range.
pub fn holdout_sequences(cfg: &RunConfig, n: usize) -> Result<Vec<Sequence>> {
    (0..n)
        .map(|i| {
            Ok(generate_sequence(&SynthConfig {
                frame_width: cfg.data.frame_width,
                frame_height: cfg.data.frame_height,
                n_frames: cfg.data.frames_per_sequence,
                distractors: cfg.data.distractors,
                seed: cfg.data.synth_seed + HOLDOUT_SEED_OFFSET + i as u64,
                ..SynthConfig::default()
            })?)
        })
        .collect()
}

/// Mean per-sequence success AUC of a trained model over sequences.
pub fn mean_suc(
    model: &TrackModel,
    store: &ParamStore,
    cfg: &RunConfig,
    seqs: &[Sequence],
) -> Result<f64> {
    let mut acc = 0.0;
    for seq in seqs {
        let boxes = track_sequence(model, store, &cfg.model, &cfg.track, &seq.frames, &seq.gt[0])?;
        let ious: Vec<f64> = boxes
            .iter()
            .zip(&seq.gt[1..])
            .map(|(b, gt)| b.iou(gt))
            .collect();
        acc += success_auc(&ious)?;
    }
    Ok(acc / seqs.len() as f64)
}

/// SUC of the "static box" baseline that reports the init box forever.
pub fn static_baseline_suc(seqs: &[Sequence]) -> Result<f64> {
    let mut acc = 0.0;
    for seq in seqs {
        let ious: Vec<f64> = seq.gt[1..].iter().map(|gt| seq.gt[0].iou(gt)).collect();
        acc += success_auc(&ious)?;
    }
    Ok(acc / seqs.len() as f64)
}

struct AblateRow {
    label: String,
    params: usize,
    suc: f64,
}

fn run_variant(cfg: &RunConfig, label: &str, holdout: &[Sequence]) -> Result<AblateRow> {
    let TrainOutcome { store, model, .. } = train(cfg)?;
    Ok(AblateRow {
        label: label.to_string(),
        params: store.count_parameters(),
        suc: mean_suc(&model, &store, cfg, holdout)?,
    })
}

/// Train (or for `hann`, reuse) paired configs differing in one axis and
/// tabulate SUC and parameter counts.
pub fn ablate(base: &RunConfig, axis: &str) -> Result<String> {
    base.validate()?;
    let holdout = holdout_sequences(base, 6)?;
    let rows = match axis {
        "fusion" => {
            let mut a = base.clone();
            a.model.fusion_mode = FusionMode::Concat;
            let mut b = base.clone();
            b.model.fusion_mode = FusionMode::Cross;
            vec![
                run_variant(&a, "fusion=concat", &holdout)?,
                run_variant(&b, "fusion=cross", &holdout)?,
            ]
        }
        "pe" => {
            let mut a = base.clone();
            a.model.pe_mode = PeMode::Untied;
            let mut b = base.clone();
            b.model.pe_mode = PeMode::Sine;
            vec![
                run_variant(&a, "pe=untied", &holdout)?,
                run_variant(&b, "pe=sine", &holdout)?,
            ]
        }
        "loss" => {
            let mut a = base.clone();
            a.model.loss_mode = LossMode::Varifocal;
            let mut b = base.clone();
            b.model.loss_mode = LossMode::Bce;
            vec![
                run_variant(&a, "loss=varifocal", &holdout)?,
                run_variant(&b, "loss=bce", &holdout)?,
            ]
        }
        "aug" => {
            let mut a = base.clone();
            a.train.aug = AugMode::Strong;
            let mut b = base.clone();
            b.train.aug = AugMode::Weak;
            vec![
                run_variant(&a, "aug=strong", &holdout)?,
                run_variant(&b, "aug=weak", &holdout)?,
            ]
        }
        // inference-only axis: one training run, two window settings
        "hann" => {
            let TrainOutcome { store, model, .. } = train(base)?;
            let params = store.count_parameters();
            let mut off = base.clone();
            off.track.gamma = 0.0;
            vec![
                AblateRow {
                    label: format!("hann gamma={}", base.track.gamma),
                    params,
                    suc: mean_suc(&model, &store, base, &holdout)?,
                },
                AblateRow {
                    label: "hann gamma=0".to_string(),
                    params,
                    suc: mean_suc(&model, &store, &off, &holdout)?,
                },
            ]
        }
        other => bail!("unknown ablation axis {other:?} (fusion|pe|loss|aug|hann)"),
    };
    let mut s = String::from("variant             params      suc\n");
    for r in &rows {
        s.push_str(&format!("{:<20}{:<12}{:.4}\n", r.label, r.params, r.suc));
    }
    s.push_str(&format!("delta suc           {:+.4}\n", rows[0].suc - rows[1].suc));
    Ok(s)
}

/// Dump post-softmax attention maps of one tracking forward (template vs
/// second frame) as one binary file per attention call and head:
/// `u32 rows, u32 cols` little-endian, then row-major f32.
pub fn dump_attention(
    model: &TrackModel,
    store: &ParamStore,
    cfg: &RunConfig,
    seq: &Sequence,
    dir: &Path,
) -> Result<()> {
    if seq.len() < 2 {
        bail!("attention dump needs at least 2 frames");
    }
    std::fs::create_dir_all(dir)?;
    let t_spec = CropSpec::around(
        &seq.gt[0],
        cfg.track.template_area_factor,
        cfg.model.template_size,
    );
    let template = make_crop(&seq.frames[0], &t_spec);
    let s_spec = CropSpec::around(
        &seq.gt[0],
        cfg.track.search_area_factor,
        cfg.model.search_size,
    );
    let search = make_crop(&seq.frames[1], &s_spec);
    let mut g = Graph::new();
    model.forward(&mut g, store, &template, &search)?;
    for (call, &probe) in g.attn_probes.iter().enumerate() {
        let shape = g.shape(probe).to_vec();
        let (heads, rows, cols) = (shape[0], shape[1], shape[2]);
        let data = g.data(probe);
        for h in 0..heads {
            let mut buf = Vec::with_capacity(8 + rows * cols * 4);
            buf.extend_from_slice(&(rows as u32).to_le_bytes());
            buf.extend_from_slice(&(cols as u32).to_le_bytes());
            for v in &data[h * rows * cols..(h + 1) * rows * cols] {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            let path = dir.join(format!("attn{call:02}_head{h}.bin"));
            std::fs::write(&path, buf)
                .with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(())
}
