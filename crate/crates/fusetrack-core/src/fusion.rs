//! Feature fusion: the concatenation-based encoder, the cross-attention
//! decoder, and the cross-attention-based fusion variant used for the
//! ablation axis.
//!
//! Concat mode joins template and search tokens into one sequence, so both
//! branches share every MSA/FFN weight; the cross variant keeps separate
//! weights per branch and therefore strictly more parameters at equal
//! config.

use rand::Rng;

use crate::attention::{multi_head_attention, AttentionConfig, AttnWeights};
use crate::nn::{Ffn, LayerNorm};
use crate::params::ParamStore;
use crate::tensor::{Graph, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    Concat,
    Cross,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeMode {
    Untied,
    Sine,
}

/// One pre-norm encoder block: `U + MSA(LN(U))`, then `U + FFN(LN(U))`.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub ln1: LayerNorm,
    pub msa: AttnWeights,
    pub ln2: LayerNorm,
    pub ffn: Ffn,
}

impl EncoderBlock {
    pub fn init<R: Rng>(store: &mut ParamStore, prefix: &str, d_model: usize, rng: &mut R) -> Self {
        EncoderBlock {
            ln1: LayerNorm::init(store, &format!("{prefix}.ln1"), d_model),
            msa: AttnWeights::init(store, &format!("{prefix}.msa"), d_model, rng),
            ln2: LayerNorm::init(store, &format!("{prefix}.ln2"), d_model),
            ffn: Ffn::init(store, &format!("{prefix}.ffn"), d_model, 4 * d_model, rng),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        u: Tensor,
        cfg: AttentionConfig,
        bias: Option<Tensor>,
    ) -> Result<Tensor, TensorError> {
        let normed = self.ln1.forward(g, store, u)?;
        let p = self.msa.leaves(g, store);
        let attn = multi_head_attention(g, normed, normed, normed, &p, cfg, bias)?;
        let u = g.add(u, attn)?;
        let normed = self.ln2.forward(g, store, u)?;
        let f = self.ffn.forward(g, store, normed)?;
        g.add(u, f)
    }

    /// Cross-attention step reusing this block's MSA weights is not wanted
    /// in the cross variant; see [`CrossBlock`].
    pub fn forward_cross_attn(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q: Tensor,
        kv: Tensor,
        cfg: AttentionConfig,
        bias: Option<Tensor>,
    ) -> Result<Tensor, TensorError> {
        let qn = self.ln1.forward(g, store, q)?;
        let kn = self.ln1.forward(g, store, kv)?;
        let p = self.msa.leaves(g, store);
        let attn = multi_head_attention(g, qn, kn, kn, &p, cfg, bias)?;
        let q = g.add(q, attn)?;
        let normed = self.ln2.forward(g, store, q)?;
        let f = self.ffn.forward(g, store, normed)?;
        g.add(q, f)
    }
}

/// Concatenation fusion (template tokens first). `bias` is the shared
/// positional logit term injected into every block's MSA.
pub fn encode(
    g: &mut Graph,
    store: &ParamStore,
    z_tokens: Tensor,
    x_tokens: Tensor,
    blocks: &[EncoderBlock],
    cfg: AttentionConfig,
    bias: Option<Tensor>,
) -> Result<(Tensor, Tensor), TensorError> {
    let dz = *g.shape(z_tokens).last().unwrap();
    let dx = *g.shape(x_tokens).last().unwrap();
    if dz != dx {
        return Err(TensorError::ShapeMismatch {
            op: "encode",
            lhs: g.shape(z_tokens).to_vec(),
            rhs: g.shape(x_tokens).to_vec(),
        });
    }
    let lz = g.shape(z_tokens)[0];
    let lx = g.shape(x_tokens)[0];
    let mut u = g.concat0(&[z_tokens, x_tokens])?;
    for block in blocks {
        u = block.forward(g, store, u, cfg, bias)?;
    }
    let z_out = g.slice_rows(u, 0, lz)?;
    let x_out = g.slice_rows(u, lz, lz + lx)?;
    Ok((z_out, x_out))
}

/// Decoder: one multi-head cross-attention block where only the search
/// tokens act as queries against `Concat(z, x)`, then an FFN residual.
#[derive(Debug, Clone)]
pub struct DecoderBlock {
    pub ln_q: LayerNorm,
    pub ln_kv: LayerNorm,
    pub mca: AttnWeights,
    pub ln2: LayerNorm,
    pub ffn: Ffn,
}

impl DecoderBlock {
    pub fn init<R: Rng>(store: &mut ParamStore, prefix: &str, d_model: usize, rng: &mut R) -> Self {
        DecoderBlock {
            ln_q: LayerNorm::init(store, &format!("{prefix}.ln_q"), d_model),
            ln_kv: LayerNorm::init(store, &format!("{prefix}.ln_kv"), d_model),
            mca: AttnWeights::init(store, &format!("{prefix}.mca"), d_model, rng),
            ln2: LayerNorm::init(store, &format!("{prefix}.ln2"), d_model),
            ffn: Ffn::init(store, &format!("{prefix}.ffn"), d_model, 4 * d_model, rng),
        }
    }
}

pub fn decode(
    g: &mut Graph,
    store: &ParamStore,
    z_out: Tensor,
    x_out: Tensor,
    dec: &DecoderBlock,
    cfg: AttentionConfig,
    bias: Option<Tensor>,
) -> Result<Tensor, TensorError> {
    let u = g.concat0(&[z_out, x_out])?;
    let qn = dec.ln_q.forward(g, store, x_out)?;
    let kn = dec.ln_kv.forward(g, store, u)?;
    let p = dec.mca.leaves(g, store);
    let attn = multi_head_attention(g, qn, kn, kn, &p, cfg, bias)?;
    let x = g.add(x_out, attn)?;
    let normed = dec.ln2.forward(g, store, x)?;
    let f = dec.ffn.forward(g, store, normed)?;
    g.add(x, f)
}

/// One block of the cross-attention-based fusion variant: self-attention
/// within each branch, then cross-attention from each branch to the other,
/// then per-branch FFNs. No weights are shared across branches.
#[derive(Debug, Clone)]
pub struct CrossBlock {
    pub z_self: EncoderBlock,
    pub x_self: EncoderBlock,
    pub z_cross: EncoderBlock,
    pub x_cross: EncoderBlock,
}

impl CrossBlock {
    pub fn init<R: Rng>(store: &mut ParamStore, prefix: &str, d_model: usize, rng: &mut R) -> Self {
        CrossBlock {
            z_self: EncoderBlock::init(store, &format!("{prefix}.z_self"), d_model, rng),
            x_self: EncoderBlock::init(store, &format!("{prefix}.x_self"), d_model, rng),
            z_cross: EncoderBlock::init(store, &format!("{prefix}.z_cross"), d_model, rng),
            x_cross: EncoderBlock::init(store, &format!("{prefix}.x_cross"), d_model, rng),
        }
    }
}

/// Positional biases for the four attention calls inside a [`CrossBlock`].
#[derive(Debug, Clone, Copy, Default)]
pub struct CrossBiases {
    pub z_self: Option<Tensor>,
    pub x_self: Option<Tensor>,
    pub z_to_x: Option<Tensor>,
    pub x_to_z: Option<Tensor>,
}

pub fn encode_cross_variant(
    g: &mut Graph,
    store: &ParamStore,
    z_tokens: Tensor,
    x_tokens: Tensor,
    blocks: &[CrossBlock],
    cfg: AttentionConfig,
    biases: CrossBiases,
) -> Result<(Tensor, Tensor), TensorError> {
    let mut z = z_tokens;
    let mut x = x_tokens;
    for b in blocks {
        let z1 = b.z_self.forward(g, store, z, cfg, biases.z_self)?;
        let x1 = b.x_self.forward(g, store, x, cfg, biases.x_self)?;
        let z2 = b.z_cross.forward_cross_attn(g, store, z1, x1, cfg, biases.z_to_x)?;
        let x2 = b.x_cross.forward_cross_attn(g, store, x1, z1, cfg, biases.x_to_z)?;
        z = z2;
        x = x2;
    }
    Ok((z, x))
}
