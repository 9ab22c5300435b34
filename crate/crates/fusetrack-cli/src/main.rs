//! Command-line entry points: train, track, eval, gradcheck, ablate.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use fusetrack_cli::{
    ablate, eval_results, format_report_table, gradcheck_report, load_model, write_results,
};
use fusetrack_core::config::RunConfig;
use fusetrack_core::data::seqio::load_sequence_dir;
use fusetrack_core::tracker::track_sequence;
use fusetrack_core::train::{train, LogRow};

#[derive(Parser)]
#[command(name = "fusetrack", about = "Siamese transformer tracker", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AblateAxis {
    Fusion,
    Pe,
    Loss,
    Aug,
    Hann,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model from a TOML config, writing a checkpoint and a CSV
    /// loss log next to it.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track a sequence directory with a trained checkpoint.
    Track {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the Hanning blend weight from the checkpoint config.
        #[arg(long)]
        gamma: Option<f64>,
        /// Dump first-step attention maps (one binary file per attention
        /// call) into this directory.
        #[arg(long)]
        dump_attn: Option<PathBuf>,
    },
    /// Score a results file against a sequence's ground truth.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference audit of the full model's gradients.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train paired configs differing in one axis and compare.
    Ablate {
        #[arg(long, value_enum)]
        axis: AblateAxis,
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Train { config, out } => cmd_train(&config, &out),
        Cmd::Track {
            ckpt,
            seq,
            out,
            gamma,
            dump_attn,
        } => cmd_track(&ckpt, &seq, &out, gamma, dump_attn.as_deref()),
        Cmd::Eval { results, seq, out } => cmd_eval(&results, &seq, &out),
        Cmd::Gradcheck { config } => cmd_gradcheck(config.as_deref()),
        Cmd::Ablate { axis, config } => cmd_ablate(axis, &config),
    }
}

fn cmd_train(config: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::from_path(config)?;
    let outcome = train(&cfg)?;
    outcome.store.save(out, &cfg.to_json())?;
    let log_path = out.with_extension("losses.csv");
    let mut csv = String::from(LogRow::csv_header());
    csv.push('\n');
    for row in &outcome.log {
        csv.push_str(&row.to_csv());
        csv.push('\n');
    }
    std::fs::write(&log_path, csv)
        .with_context(|| format!("writing loss log {}", log_path.display()))?;
    let last = outcome.log.last().expect("at least one step");
    println!(
        "trained {} steps, final loss {:.4}, checkpoint {}",
        outcome.log.len(),
        last.total,
        out.display()
    );
    Ok(())
}

fn cmd_track(
    ckpt: &Path,
    seq_dir: &Path,
    out: &Path,
    gamma: Option<f64>,
    dump_attn: Option<&Path>,
) -> Result<()> {
    let (store, model, mut cfg) = load_model(ckpt)?;
    if let Some(g) = gamma {
        if !(0.0..=1.0).contains(&g) {
            bail!("gamma {g} outside [0,1]");
        }
        cfg.track.gamma = g;
    }
    let seq = load_sequence_dir(seq_dir)?;
    if let Some(dir) = dump_attn {
        fusetrack_cli::dump_attention(&model, &store, &cfg, &seq, dir)?;
    }
    let boxes = track_sequence(&model, &store, &cfg.model, &cfg.track, &seq.frames, &seq.gt[0])?;
    write_results(out, &seq.gt[0], &boxes)?;
    println!("tracked {} frames -> {}", seq.len(), out.display());
    Ok(())
}

fn cmd_eval(results: &Path, seq_dir: &Path, out: &Path) -> Result<()> {
    let seq = load_sequence_dir(seq_dir)?;
    let report = eval_results(results, &seq)?;
    std::fs::write(out, serde_json::to_string_pretty(&report)?)?;
    print!("{}", format_report_table(&report));
    Ok(())
}

fn cmd_gradcheck(config: Option<&Path>) -> Result<()> {
    let cfg = match config {
        Some(p) => RunConfig::from_path(p)?,
        None => RunConfig::default(),
    };
    let (max_rel, groups) = gradcheck_report(&cfg)?;
    println!("group               max_rel_error");
    for (group, err) in &groups {
        println!("{group:<20}{err:.3e}");
    }
    println!("overall             {max_rel:.3e}");
    if max_rel >= 1e-3 {
        bail!("gradient check failed: max relative error {max_rel:.3e} >= 1e-3");
    }
    println!("PASS");
    Ok(())
}

fn cmd_ablate(axis: AblateAxis, config: &Path) -> Result<()> {
    let cfg = RunConfig::from_path(config)?;
    let axis = match axis {
        AblateAxis::Fusion => "fusion",
        AblateAxis::Pe => "pe",
        AblateAxis::Loss => "loss",
        AblateAxis::Aug => "aug",
        AblateAxis::Hann => "hann",
    };
    let table = ablate(&cfg, axis)?;
    print!("{table}");
    Ok(())
}
