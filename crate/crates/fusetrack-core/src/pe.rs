//! Untied positional encoding with relative positional bias, generalized to
//! 2-D grids and to concatenation fusion, plus the fixed sinusoidal
//! baseline.
//!
//! Per source (template or search) there is one learnable vertical and one
//! horizontal embedding table, shared across heads. Per head and per source
//! there are projection matrices for queries and keys, and per head and
//! source pair a table of learnable relative-offset scalars. One parameter
//! set serves all encoder layers; the decoder owns a second set.

use rand::Rng;

use crate::params::ParamStore;
use crate::tensor::{Graph, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Template,
    Search,
}

impl Source {
    pub fn key(self) -> &'static str {
        match self {
            Source::Template => "template",
            Source::Search => "search",
        }
    }
}

/// A source tag together with its token grid shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceGrid {
    pub source: Source,
    pub h: usize,
    pub w: usize,
}

impl SourceGrid {
    pub fn len(&self) -> usize {
        self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Names and shapes of one untied-PE parameter set (one per scope:
/// encoder or decoder).
#[derive(Debug, Clone)]
pub struct UntiedPeParams {
    pub prefix: String,
    pub d_model: usize,
    pub n_heads: usize,
    pub template: SourceGrid,
    pub search: SourceGrid,
}

impl UntiedPeParams {
    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn grid(&self, s: Source) -> SourceGrid {
        match s {
            Source::Template => self.template,
            Source::Search => self.search,
        }
    }

    /// Register all parameters. Embeddings start from N(0, 0.02); the
    /// relative-bias tables start at zero so training begins as pure
    /// content attention.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        n_heads: usize,
        template: SourceGrid,
        search: SourceGrid,
        rng: &mut R,
    ) -> Self {
        let me = UntiedPeParams {
            prefix: prefix.to_string(),
            d_model,
            n_heads,
            template,
            search,
        };
        let dh = me.d_head();
        for s in [Source::Template, Source::Search] {
            let grid = me.grid(s);
            let k = s.key();
            store.insert_trunc_normal(&format!("{prefix}.p1.{k}"), &[grid.h, d_model], 0.02, rng);
            store.insert_trunc_normal(&format!("{prefix}.p2.{k}"), &[grid.w, d_model], 0.02, rng);
            store.insert_trunc_normal(&format!("{prefix}.uq.{k}"), &[n_heads, d_model, dh], 0.02, rng);
            store.insert_trunc_normal(&format!("{prefix}.uk.{k}"), &[n_heads, d_model, dh], 0.02, rng);
        }
        for g in [Source::Template, Source::Search] {
            for h in [Source::Template, Source::Search] {
                let (qg, kg) = (me.grid(g), me.grid(h));
                let ndi = qg.h + kg.h - 1;
                let ndj = qg.w + kg.w - 1;
                store.insert_zeros(
                    &format!("{prefix}.relbias.{}.{}", g.key(), h.key()),
                    &[n_heads, ndi * ndj],
                );
            }
        }
        me
    }

    /// Token-order embedding `e_{(i,j)} = p1_i + p2_j`, flattened row-major
    /// to `[H*W, d_model]`.
    fn source_embedding(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        s: Source,
    ) -> Result<Tensor, TensorError> {
        let grid = self.grid(s);
        let p1 = g.param(store, &format!("{}.p1.{}", self.prefix, s.key()));
        let p2 = g.param(store, &format!("{}.p2.{}", self.prefix, s.key()));
        let v = g.repeat_rows(p1, grid.w)?;
        let h = g.tile_rows(p2, grid.h)?;
        g.add(v, h)
    }

    fn head_proj(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        which: &str,
        s: Source,
        head: usize,
    ) -> Result<Tensor, TensorError> {
        let u = g.param(store, &format!("{}.{which}.{}", self.prefix, s.key()));
        let row = g.slice_rows(u, head, head + 1)?;
        g.reshape(row, &[self.d_model, self.d_head()])
    }

    /// Untied absolute term for one head:
    /// `(1/sqrt(2 d_head)) [(p1+p2)U^Q_g][(p1+p2)U^K_h]^T`, `[L_q, L_k]`.
    pub fn untied_abs_term(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q_source: Source,
        k_source: Source,
        head: usize,
    ) -> Result<Tensor, TensorError> {
        let eq = self.source_embedding(g, store, q_source)?;
        let ek = self.source_embedding(g, store, k_source)?;
        let uq = self.head_proj(g, store, "uq", q_source, head)?;
        let uk = self.head_proj(g, store, "uk", k_source, head)?;
        let pq = g.matmul(eq, uq)?;
        let pk = g.matmul(ek, uk)?;
        let pkt = g.transpose2d(pk)?;
        let term = g.matmul(pq, pkt)?;
        Ok(g.scale(term, 1.0 / (2.0 * self.d_head() as f64).sqrt()))
    }

    /// Relative-bias lookup `b[m-i, n-j, g, h]` for one head, `[L_q, L_k]`.
    pub fn relative_bias_term(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q_source: Source,
        k_source: Source,
        head: usize,
    ) -> Result<Tensor, TensorError> {
        let (qg, kg) = (self.grid(q_source), self.grid(k_source));
        let ndj = qg.w + kg.w - 1;
        let len = (qg.h + kg.h - 1) * ndj;
        let table = g.param(
            store,
            &format!(
                "{}.relbias.{}.{}",
                self.prefix,
                q_source.key(),
                k_source.key()
            ),
        );
        let flat = g.reshape(table, &[self.n_heads * len])?;
        let mut idx = Vec::with_capacity(qg.len() * kg.len());
        for i in 0..qg.h {
            for j in 0..qg.w {
                for m in 0..kg.h {
                    for n in 0..kg.w {
                        let di = m as isize - i as isize + (qg.h as isize - 1);
                        let dj = n as isize - j as isize + (qg.w as isize - 1);
                        idx.push(head * len + di as usize * ndj + dj as usize);
                    }
                }
            }
        }
        let vals = g.gather(flat, &idx)?;
        g.reshape(vals, &[qg.len(), kg.len()])
    }

    /// One head's positional logit block matrix for the given concatenation
    /// layouts: untied absolute term plus relative bias per source pair.
    pub fn fusion_bias_head(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        query_layout: &[Source],
        key_layout: &[Source],
        head: usize,
    ) -> Result<Tensor, TensorError> {
        let rows: usize = query_layout.iter().map(|&s| self.grid(s).len()).sum();
        let cols: usize = key_layout.iter().map(|&s| self.grid(s).len()).sum();
        let mut blocks = Vec::new();
        let mut ro = 0;
        for &qs in query_layout {
            let mut co = 0;
            for &ks in key_layout {
                let abs = self.untied_abs_term(g, store, qs, ks, head)?;
                let rel = self.relative_bias_term(g, store, qs, ks, head)?;
                let blk = g.add(abs, rel)?;
                blocks.push((blk, ro, co));
                co += self.grid(ks).len();
            }
            ro += self.grid(qs).len();
        }
        g.assemble_blocks(rows, cols, &blocks)
    }

    /// Full [`n_heads`, L_q, L_k] attention logit bias. Built once per
    /// forward pass and shared by every layer in the scope.
    pub fn fusion_bias(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        query_layout: &[Source],
        key_layout: &[Source],
    ) -> Result<Tensor, TensorError> {
        let heads: Vec<Tensor> = (0..self.n_heads)
            .map(|h| self.fusion_bias_head(g, store, query_layout, key_layout, h))
            .collect::<Result<_, _>>()?;
        g.stack0(&heads)
    }
}

/// Fixed 2-D sinusoid: first half of the channels encode the row index,
/// second half the column index, each as interleaved sin/cos pairs.
/// Returns row-major `[h*w, d_model]`.
pub fn sinusoidal_pe(h: usize, w: usize, d_model: usize) -> Result<Vec<f64>, TensorError> {
    if d_model % 2 != 0 {
        return Err(TensorError::InvalidShape {
            op: "sinusoidal_pe",
            shape: vec![d_model],
            reason: "odd d_model".into(),
        });
    }
    let half = d_model / 2;
    let enc1d = |pos: usize, c: usize| -> f64 {
        let k = c / 2;
        let freq = 1.0 / 10000f64.powf(2.0 * k as f64 / half as f64);
        let v = pos as f64 * freq;
        if c % 2 == 0 {
            v.sin()
        } else {
            v.cos()
        }
    };
    let mut out = Vec::with_capacity(h * w * d_model);
    for i in 0..h {
        for j in 0..w {
            for c in 0..half {
                out.push(enc1d(i, c));
            }
            for c in 0..half {
                out.push(enc1d(j, c));
            }
        }
    }
    Ok(out)
}
