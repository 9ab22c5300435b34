//! Full tracking model: shared-weight backbone over both crops, token
//! fusion (concatenated self-attention or the cross-attention variant),
//! a search-query decoder, and the classification/regression heads.

use rand::Rng;

use crate::attention::AttentionConfig;
use crate::backbone::{Backbone, BackboneConfig};
use crate::bbox::BBox;
use crate::config::ModelConfig;
use crate::fusion::{
    decode, encode, encode_cross_variant, CrossBiases, CrossBlock, DecoderBlock, EncoderBlock,
    FusionMode, PeMode,
};
use crate::heads::{
    assign_targets, classification_loss, bce_loss_variant, compute_loss_weights, regression_loss,
    Heads, LossMode, LossWeights, ResponseMap,
};
use crate::image::{normalize_image, Image, NormConstants};
use crate::params::ParamStore;
use crate::pe::{sinusoidal_pe, Source, SourceGrid, UntiedPeParams};
use crate::tensor::{Graph, Tensor, TensorError};

#[derive(Debug, Clone)]
enum FusionStage {
    Concat(Vec<EncoderBlock>),
    Cross(Vec<CrossBlock>),
}

#[derive(Debug, Clone)]
pub struct TrackModel {
    pub cfg: ModelConfig,
    pub norm: NormConstants,
    backbone: Backbone,
    stage: FusionStage,
    enc_pe: Option<UntiedPeParams>,
    dec_pe: Option<UntiedPeParams>,
    decoder: DecoderBlock,
    heads: Heads,
}

/// One forward pass over a (template, search) crop pair.
#[derive(Debug, Clone, Copy)]
pub struct ModelOutput {
    pub response: ResponseMap,
    pub search_grid: SourceGrid,
}

#[derive(Debug, Clone, Copy)]
pub struct LossReport {
    pub total: Tensor,
    pub cls: Tensor,
    pub reg: Tensor,
}

impl TrackModel {
    pub fn template_grid(cfg: &ModelConfig) -> SourceGrid {
        let s = cfg.template_size / cfg.stride;
        SourceGrid {
            source: Source::Template,
            h: s,
            w: s,
        }
    }

    pub fn search_grid(cfg: &ModelConfig) -> SourceGrid {
        let s = cfg.search_size / cfg.stride;
        SourceGrid {
            source: Source::Search,
            h: s,
            w: s,
        }
    }

    pub fn init<R: Rng>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let backbone = Backbone::init(
            store,
            BackboneConfig {
                stride: cfg.stride,
                d_model: cfg.d_model,
                n_heads: cfg.n_heads,
                depth: 1,
            },
            rng,
        );
        let stage = match cfg.fusion_mode {
            FusionMode::Concat => FusionStage::Concat(
                (0..cfg.depth)
                    .map(|i| {
                        EncoderBlock::init(store, &format!("encoder.block{i}"), cfg.d_model, rng)
                    })
                    .collect(),
            ),
            FusionMode::Cross => FusionStage::Cross(
                (0..cfg.depth)
                    .map(|i| CrossBlock::init(store, &format!("encoder.block{i}"), cfg.d_model, rng))
                    .collect(),
            ),
        };
        let (enc_pe, dec_pe) = match cfg.pe_mode {
            PeMode::Untied => (
                Some(UntiedPeParams::init(
                    store,
                    "enc",
                    cfg.d_model,
                    cfg.n_heads,
                    Self::template_grid(cfg),
                    Self::search_grid(cfg),
                    rng,
                )),
                Some(UntiedPeParams::init(
                    store,
                    "dec",
                    cfg.d_model,
                    cfg.n_heads,
                    Self::template_grid(cfg),
                    Self::search_grid(cfg),
                    rng,
                )),
            ),
            PeMode::Sine => (None, None),
        };
        let decoder = DecoderBlock::init(store, "decoder", cfg.d_model, rng);
        let heads = Heads::init(store, cfg.d_model, rng);
        TrackModel {
            cfg: cfg.clone(),
            norm: NormConstants::default(),
            backbone,
            stage,
            enc_pe,
            dec_pe,
            decoder,
            heads,
        }
    }

    pub fn attn_cfg(&self) -> AttentionConfig {
        AttentionConfig::new(self.cfg.d_model, self.cfg.n_heads)
    }

    /// Raw crops in, response map out. Crops must match the configured
    /// template/search sizes.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        template: &Image,
        search: &Image,
    ) -> Result<ModelOutput, TensorError> {
        for (img, want, what) in [
            (template, self.cfg.template_size, "template"),
            (search, self.cfg.search_size, "search"),
        ] {
            if img.width != want || img.height != want {
                return Err(TensorError::InvalidShape {
                    op: "model_forward",
                    shape: vec![img.height, img.width],
                    reason: format!("{what} crop must be {want}x{want}"),
                });
            }
        }
        let tz = normalize_image(template, &self.norm);
        let sx = normalize_image(search, &self.norm);
        let z = self.backbone.extract(g, store, &tz, Source::Template)?;
        let x = self.backbone.extract(g, store, &sx, Source::Search)?;
        let cfg = self.attn_cfg();
        let (mut z_tokens, mut x_tokens) = (z.tokens, x.tokens);

        if self.cfg.pe_mode == PeMode::Sine {
            // sinusoids re-injected at the fusion input, no logit bias
            for (t, grid) in [(&mut z_tokens, z.grid), (&mut x_tokens, x.grid)] {
                let pe = g.constant(
                    &[grid.len(), self.cfg.d_model],
                    sinusoidal_pe(grid.h, grid.w, self.cfg.d_model)?,
                );
                *t = g.add(*t, pe)?;
            }
        }

        let (z_out, x_out) = match &self.stage {
            FusionStage::Concat(blocks) => {
                let bias = match &self.enc_pe {
                    Some(pe) => Some(pe.fusion_bias(
                        g,
                        store,
                        &[Source::Template, Source::Search],
                        &[Source::Template, Source::Search],
                    )?),
                    None => None,
                };
                encode(g, store, z_tokens, x_tokens, blocks, cfg, bias)?
            }
            FusionStage::Cross(blocks) => {
                let biases = match &self.enc_pe {
                    Some(pe) => CrossBiases {
                        z_self: Some(pe.fusion_bias(
                            g,
                            store,
                            &[Source::Template],
                            &[Source::Template],
                        )?),
                        x_self: Some(pe.fusion_bias(
                            g,
                            store,
                            &[Source::Search],
                            &[Source::Search],
                        )?),
                        z_to_x: Some(pe.fusion_bias(
                            g,
                            store,
                            &[Source::Template],
                            &[Source::Search],
                        )?),
                        x_to_z: Some(pe.fusion_bias(
                            g,
                            store,
                            &[Source::Search],
                            &[Source::Template],
                        )?),
                    },
                    None => CrossBiases::default(),
                };
                encode_cross_variant(g, store, z_tokens, x_tokens, blocks, cfg, biases)?
            }
        };

        let dec_bias = match &self.dec_pe {
            Some(pe) => Some(pe.fusion_bias(
                g,
                store,
                &[Source::Search],
                &[Source::Template, Source::Search],
            )?),
            None => None,
        };
        let features = decode(g, store, z_out, x_out, &self.decoder, cfg, dec_bias)?;
        let response = self.heads.forward(g, store, features)?;
        Ok(ModelOutput {
            response,
            search_grid: x.grid,
        })
    }

    /// Training loss for one pair. `frozen` pins the detached loss weights
    /// (IACS targets and GIoU weights), which the finite-difference check
    /// needs; normal training passes `None` to recompute them.
    pub fn loss(
        &self,
        g: &mut Graph,
        out: &ModelOutput,
        gt_in_search: &BBox,
        frozen: Option<&LossWeights>,
    ) -> Result<(LossReport, LossWeights), TensorError> {
        let grid = out.search_grid;
        let crop = (self.cfg.search_size as f64, self.cfg.search_size as f64);
        let computed;
        let weights = match frozen {
            Some(w) => w,
            None => {
                let assignment = assign_targets(gt_in_search, grid.h, grid.w, self.cfg.stride);
                computed = compute_loss_weights(
                    g.data(out.response.r_cls),
                    g.data(out.response.r_reg),
                    &assignment,
                    grid.w,
                    self.cfg.stride,
                    crop.0,
                    crop.1,
                );
                &computed
            }
        };
        let cls = match self.cfg.loss_mode {
            LossMode::Varifocal => classification_loss(g, out.response.r_cls, weights)?,
            LossMode::Bce => bce_loss_variant(g, out.response.r_cls, weights)?,
        };
        let reg = regression_loss(
            g,
            out.response.r_reg,
            weights,
            grid.w,
            self.cfg.stride,
            crop.0,
            crop.1,
            gt_in_search,
        )?;
        let total = g.add(cls, reg)?;
        Ok((LossReport { total, cls, reg }, weights.clone()))
    }
}

/// Finite-difference audit of the whole model: build a fresh model from
/// the config, run one (template, search, gt) pair through the total
/// loss, and compare analytic gradients against central differences on
/// up to `coords_per_param` coordinates of every parameter. The detached
/// loss weights are frozen at the base point so the comparison sees the
/// same stop-gradient function the backward pass differentiates.
pub fn model_gradcheck(
    run_cfg: &crate::config::RunConfig,
    coords_per_param: usize,
) -> Result<crate::gradcheck::FdReport, TensorError> {
    use crate::data::sample::{sample_training_pair, TrainingPair};
    use crate::data::synth::{generate_sequence, SynthConfig};
    use crate::gradcheck::{clone_store, fd_check_sampled};
    use rand::SeedableRng;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(run_cfg.train.seed);
    let mut store = ParamStore::new();
    let model = TrackModel::init(&mut store, &run_cfg.model, &mut rng);
    let seq = generate_sequence(&SynthConfig {
        frame_width: run_cfg.data.frame_width,
        frame_height: run_cfg.data.frame_height,
        n_frames: 4,
        seed: run_cfg.data.synth_seed,
        ..SynthConfig::default()
    })
    .expect("synth config for gradcheck is valid");
    let pair: TrainingPair = sample_training_pair(
        &seq,
        0,
        2,
        run_cfg.model.template_size,
        run_cfg.model.search_size,
        run_cfg.track.template_area_factor,
        run_cfg.track.search_area_factor,
        crate::config::AugMode::Weak,
        &mut rng,
    );
    let gt = pair.gt_in_search;

    // freeze the detached weights at the base point
    let frozen = {
        let mut g = Graph::new();
        let out = model.forward(&mut g, &store, &pair.template, &pair.search)?;
        model.loss(&mut g, &out, &gt, None)?.1
    };
    let run = |s: &ParamStore| -> Result<(f64, Graph, Tensor), TensorError> {
        let mut g = Graph::new();
        let out = model.forward(&mut g, s, &pair.template, &pair.search)?;
        let (report, _) = model.loss(&mut g, &out, &gt, Some(&frozen))?;
        let v = g.scalar(report.total);
        Ok((v, g, report.total))
    };
    let (_, mut graph, total) = run(&store)?;
    graph.backward(total)?;
    store.zero_grads();
    graph.write_grads(&mut store)?;
    let mut analytic = clone_store(&store);
    for (name, p) in store.iter() {
        analytic.get_mut(name).unwrap().grad = p.grad.clone();
    }
    Ok(fd_check_sampled(
        &store,
        |s| run(s).expect("forward succeeded at base point").0,
        &analytic,
        coords_per_param,
        run_cfg.train.seed,
    ))
}
