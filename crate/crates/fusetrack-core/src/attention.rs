//! Multi-head self- and cross-attention.
//!
//! Positional information enters only through an optional additive
//! pre-softmax logit bias, so the attention code never sees positional
//! encoding internals. With a bias present the content logits are scaled by
//! `1/sqrt(2 * d_head)` (the untied split of the logit budget), otherwise
//! by the classic `1/sqrt(d_head)`.

use rand::Rng;

use crate::params::ParamStore;
use crate::tensor::{Graph, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub n_heads: usize,
}

impl AttentionConfig {
    pub fn new(d_model: usize, n_heads: usize) -> Self {
        assert!(
            d_model % n_heads == 0,
            "d_model {d_model} not divisible by {n_heads} heads"
        );
        AttentionConfig { d_model, n_heads }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Parameter names of one attention module's projections.
#[derive(Debug, Clone)]
pub struct AttnWeights {
    pub wq: String,
    pub wk: String,
    pub wv: String,
    pub wo: String,
}

impl AttnWeights {
    pub fn init<R: Rng>(store: &mut ParamStore, prefix: &str, d_model: usize, rng: &mut R) -> Self {
        let names = AttnWeights {
            wq: format!("{prefix}.wq"),
            wk: format!("{prefix}.wk"),
            wv: format!("{prefix}.wv"),
            wo: format!("{prefix}.wo"),
        };
        for n in [&names.wq, &names.wk, &names.wv, &names.wo] {
            store.insert_trunc_normal(n, &[d_model, d_model], 0.02, rng);
        }
        names
    }

    pub fn leaves(&self, g: &mut Graph, store: &ParamStore) -> AttnParams {
        AttnParams {
            wq: g.param(store, &self.wq),
            wk: g.param(store, &self.wk),
            wv: g.param(store, &self.wv),
            wo: g.param(store, &self.wo),
        }
    }
}

/// Graph leaves for one attention call.
#[derive(Debug, Clone, Copy)]
pub struct AttnParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

/// Pre-softmax content logits `[n_heads, L_q, L_k]` at the given scale.
pub fn attention_logits(
    g: &mut Graph,
    q_tokens: Tensor,
    k_tokens: Tensor,
    p: &AttnParams,
    cfg: AttentionConfig,
    scale: f64,
) -> Result<Tensor, TensorError> {
    let q = g.matmul(q_tokens, p.wq)?;
    let k = g.matmul(k_tokens, p.wk)?;
    let qh = g.split_heads(q, cfg.n_heads)?;
    let kh = g.split_heads(k, cfg.n_heads)?;
    let kt = g.transpose_batched(kh)?;
    let logits = g.matmul(qh, kt)?;
    Ok(g.scale(logits, scale))
}

/// `MultiHead(Q,K,V)`: per-head scaled dot-product attention, heads
/// concatenated and projected by `W_O`. `bias`, when given, is added to the
/// pre-softmax logits per head.
pub fn multi_head_attention(
    g: &mut Graph,
    q_tokens: Tensor,
    k_tokens: Tensor,
    v_tokens: Tensor,
    p: &AttnParams,
    cfg: AttentionConfig,
    bias: Option<Tensor>,
) -> Result<Tensor, TensorError> {
    let lq = g.shape(q_tokens)[0];
    let lk = g.shape(k_tokens)[0];
    if g.shape(k_tokens)[0] != g.shape(v_tokens)[0] {
        return Err(TensorError::ShapeMismatch {
            op: "multi_head_attention",
            lhs: g.shape(k_tokens).to_vec(),
            rhs: g.shape(v_tokens).to_vec(),
        });
    }
    for t in [q_tokens, k_tokens, v_tokens] {
        if *g.shape(t).last().unwrap() != cfg.d_model {
            return Err(TensorError::InvalidShape {
                op: "multi_head_attention",
                shape: g.shape(t).to_vec(),
                reason: format!("channel dim != d_model {}", cfg.d_model),
            });
        }
    }
    let scale = match bias {
        Some(_) => 1.0 / (2.0 * cfg.d_head() as f64).sqrt(),
        None => 1.0 / (cfg.d_head() as f64).sqrt(),
    };
    let mut logits = attention_logits(g, q_tokens, k_tokens, p, cfg, scale)?;
    if let Some(b) = bias {
        if g.shape(b) != [cfg.n_heads, lq, lk] {
            return Err(TensorError::ShapeMismatch {
                op: "attention_bias",
                lhs: g.shape(b).to_vec(),
                rhs: vec![cfg.n_heads, lq, lk],
            });
        }
        logits = g.add(logits, b)?;
    }
    let attn = g.softmax(logits);
    g.attn_probes.push(attn);
    let v = g.matmul(v_tokens, p.wv)?;
    let vh = g.split_heads(v, cfg.n_heads)?;
    let ctx = g.matmul(attn, vh)?;
    let merged = g.merge_heads(ctx)?;
    g.matmul(merged, p.wo)
}

/// Post-softmax attention maps `[n_heads, L_q, L_k]`, for debug dumps.
pub fn attention_maps(
    g: &mut Graph,
    q_tokens: Tensor,
    k_tokens: Tensor,
    p: &AttnParams,
    cfg: AttentionConfig,
    bias: Option<Tensor>,
) -> Result<Tensor, TensorError> {
    let scale = match bias {
        Some(_) => 1.0 / (2.0 * cfg.d_head() as f64).sqrt(),
        None => 1.0 / (cfg.d_head() as f64).sqrt(),
    };
    let mut logits = attention_logits(g, q_tokens, k_tokens, p, cfg, scale)?;
    if let Some(b) = bias {
        logits = g.add(logits, b)?;
    }
    Ok(g.softmax(logits))
}
