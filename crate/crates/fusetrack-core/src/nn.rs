//! Small named-parameter layers shared by the backbone, fusion and heads.

use rand::Rng;

use crate::params::ParamStore;
use crate::tensor::{Graph, Tensor, TensorError};

/// Linear layer `x W + b` with parameters registered under `prefix`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: String,
    pub b: String,
}

impl Linear {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        let l = Linear {
            w: format!("{prefix}.w"),
            b: format!("{prefix}.b"),
        };
        store.insert_trunc_normal(&l.w, &[d_in, d_out], 0.02, rng);
        store.insert_zeros(&l.b, &[d_out]);
        l
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Tensor,
    ) -> Result<Tensor, TensorError> {
        let w = g.param(store, &self.w);
        let b = g.param(store, &self.b);
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    }
}

/// Layer norm affine parameters (gain starts at 1, bias at 0).
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: String,
    pub bias: String,
}

impl LayerNorm {
    pub fn init(store: &mut ParamStore, prefix: &str, d: usize) -> Self {
        let ln = LayerNorm {
            gain: format!("{prefix}.gain"),
            bias: format!("{prefix}.bias"),
        };
        store.insert(&ln.gain, &[d], vec![1.0; d]);
        store.insert_zeros(&ln.bias, &[d]);
        ln
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Tensor,
    ) -> Result<Tensor, TensorError> {
        let gain = g.param(store, &self.gain);
        let bias = g.param(store, &self.bias);
        g.layernorm(x, gain, bias)
    }
}

/// Two-layer MLP with GELU after the first layer, hidden dim 4x by
/// convention at the call sites.
#[derive(Debug, Clone)]
pub struct Ffn {
    pub l1: Linear,
    pub l2: Linear,
}

impl Ffn {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        d_hidden: usize,
        rng: &mut R,
    ) -> Self {
        Ffn {
            l1: Linear::init(store, &format!("{prefix}.l1"), d_model, d_hidden, rng),
            l2: Linear::init(store, &format!("{prefix}.l2"), d_hidden, d_model, rng),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Tensor,
    ) -> Result<Tensor, TensorError> {
        let h = self.l1.forward(g, store, x)?;
        let h = g.gelu(h);
        self.l2.forward(g, store, h)
    }
}
