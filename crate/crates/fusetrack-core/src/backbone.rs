//! Toy patch-embedding backbone.
//!
//! Non-overlapping `s x s` patches are linearly embedded to `d_model`
//! channels, a fixed 2-D sinusoid is added once, and a few plain pre-norm
//! transformer blocks refine the tokens. Template and search crops go
//! through the same parameter names (the Siamese contract). The interface
//! is the seam where a hierarchical windowed-attention backbone could be
//! plugged in instead.

use rand::Rng;

use crate::attention::AttentionConfig;
use crate::fusion::EncoderBlock;
use crate::image::Image;
use crate::nn::Linear;
use crate::params::ParamStore;
use crate::pe::{sinusoidal_pe, Source, SourceGrid};
use crate::tensor::{Graph, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BackboneConfig {
    pub stride: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Number of post-embedding transformer blocks.
    pub depth: usize,
}

/// Tokens plus their grid geometry and origin tag.
#[derive(Debug, Clone, Copy)]
pub struct TokenSet {
    pub tokens: Tensor,
    pub grid: SourceGrid,
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    pub embed: Linear,
    pub blocks: Vec<EncoderBlock>,
}

impl Backbone {
    pub fn init<R: Rng>(store: &mut ParamStore, cfg: BackboneConfig, rng: &mut R) -> Self {
        let patch_dim = cfg.stride * cfg.stride * 3;
        let embed = Linear::init(store, "backbone.embed", patch_dim, cfg.d_model, rng);
        let blocks = (0..cfg.depth)
            .map(|i| EncoderBlock::init(store, &format!("backbone.block{i}"), cfg.d_model, rng))
            .collect();
        Backbone { cfg, embed, blocks }
    }

    /// Normalized crop -> token set on the `crop/stride` grid.
    pub fn extract(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        crop: &Image,
        source: Source,
    ) -> Result<TokenSet, TensorError> {
        let s = self.cfg.stride;
        if crop.width % s != 0 || crop.height % s != 0 {
            return Err(TensorError::InvalidShape {
                op: "extract",
                shape: vec![crop.height, crop.width],
                reason: format!("crop size not divisible by stride {s}"),
            });
        }
        let (gh, gw) = (crop.height / s, crop.width / s);
        let patch_dim = s * s * 3;
        let mut patches = Vec::with_capacity(gh * gw * patch_dim);
        for pi in 0..gh {
            for pj in 0..gw {
                for y in 0..s {
                    for x in 0..s {
                        let px = crop.get(pj * s + x, pi * s + y);
                        patches.extend_from_slice(&px);
                    }
                }
            }
        }
        let patches = g.constant(&[gh * gw, patch_dim], patches);
        let mut tokens = self.embed.forward(g, store, patches)?;
        let pe = g.constant(
            &[gh * gw, self.cfg.d_model],
            sinusoidal_pe(gh, gw, self.cfg.d_model)?,
        );
        tokens = g.add(tokens, pe)?;
        let attn_cfg = AttentionConfig::new(self.cfg.d_model, self.cfg.n_heads);
        for block in &self.blocks {
            tokens = block.forward(g, store, tokens, attn_cfg, None)?;
        }
        Ok(TokenSet {
            tokens,
            grid: SourceGrid {
                source,
                h: gh,
                w: gw,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn backbone(stride: usize, depth: usize) -> (ParamStore, Backbone) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cfg = BackboneConfig {
            stride,
            d_model: 8,
            n_heads: 2,
            depth,
        };
        let b = Backbone::init(&mut store, cfg, &mut rng);
        (store, b)
    }

    #[test]
    fn grid_is_input_over_stride() {
        let (store, b) = backbone(16, 0);
        let mut g = Graph::new();
        let crop = Image::new(224, 224);
        let t = b.extract(&mut g, &store, &crop, Source::Search).unwrap();
        assert_eq!((t.grid.h, t.grid.w), (14, 14));
        assert_eq!(g.shape(t.tokens), &[196, 8]);
        let crop = Image::new(112, 112);
        let t = b.extract(&mut g, &store, &crop, Source::Template).unwrap();
        assert_eq!(t.grid.len(), 49);
    }

    #[test]
    fn indivisible_crop_rejected() {
        let (store, b) = backbone(16, 0);
        let mut g = Graph::new();
        let crop = Image::new(100, 100);
        assert!(b.extract(&mut g, &store, &crop, Source::Search).is_err());
    }

    #[test]
    fn zero_image_zero_bias_gives_pure_pe_tokens() {
        let (mut store, b) = backbone(4, 0);
        store
            .get_mut("backbone.embed.b")
            .unwrap()
            .data
            .iter_mut()
            .for_each(|v| *v = 0.0);
        let mut g = Graph::new();
        let crop = Image::new(8, 8);
        let t = b.extract(&mut g, &store, &crop, Source::Search).unwrap();
        let pe = sinusoidal_pe(2, 2, 8).unwrap();
        for (a, b) in g.data(t.tokens).iter().zip(&pe) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn template_and_search_touch_identical_parameters() {
        let (store, b) = backbone(4, 1);
        let mut g = Graph::new();
        let tcrop = Image::new(8, 8);
        let scrop = Image::new(16, 16);
        b.extract(&mut g, &store, &tcrop, Source::Template).unwrap();
        let after_template: Vec<String> = touched(&g);
        let mut g2 = Graph::new();
        b.extract(&mut g2, &store, &scrop, Source::Search).unwrap();
        let after_search: Vec<String> = touched(&g2);
        assert_eq!(after_template, after_search);
        assert!(!after_template.is_empty());
    }

    fn touched(g: &Graph) -> Vec<String> {
        let mut names = g.param_leaf_names();
        names.sort();
        names.dedup();
        names
    }
}
