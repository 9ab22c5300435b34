//! Forward ops and their backward closures.
//!
//! Shapes are validated up front; each op captures the `Rc` data buffers it
//! needs and returns per-parent gradient vectors from its backward closure.

use std::rc::Rc;

use super::{numel, Graph, Tensor, TensorError};

fn same_shape(
    op: &'static str,
    a: &[usize],
    b: &[usize],
) -> Result<(), TensorError> {
    if a != b {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    Ok(())
}

impl Graph {
    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, TensorError> {
        same_shape("add", self.shape(a), self.shape(b))?;
        let (da, db) = (self.node_data_rc(a), self.node_data_rc(b));
        let out: Vec<f64> = da.iter().zip(db.iter()).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.binary(a, b, shape, out, move |g| (g.to_vec(), g.to_vec())))
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, TensorError> {
        same_shape("sub", self.shape(a), self.shape(b))?;
        let (da, db) = (self.node_data_rc(a), self.node_data_rc(b));
        let out: Vec<f64> = da.iter().zip(db.iter()).map(|(x, y)| x - y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.binary(a, b, shape, out, move |g| {
            (g.to_vec(), g.iter().map(|v| -v).collect())
        }))
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, TensorError> {
        same_shape("mul", self.shape(a), self.shape(b))?;
        let (da, db) = (self.node_data_rc(a), self.node_data_rc(b));
        let out: Vec<f64> = da.iter().zip(db.iter()).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let (ca, cb) = (da, db);
        Ok(self.binary(a, b, shape, out, move |g| {
            (
                g.iter().zip(cb.iter()).map(|(gi, y)| gi * y).collect(),
                g.iter().zip(ca.iter()).map(|(gi, x)| gi * x).collect(),
            )
        }))
    }

    pub fn div(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, TensorError> {
        same_shape("div", self.shape(a), self.shape(b))?;
        let (da, db) = (self.node_data_rc(a), self.node_data_rc(b));
        let out: Vec<f64> = da.iter().zip(db.iter()).map(|(x, y)| x / y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.binary(a, b, shape, out, move |g| {
            (
                g.iter().zip(db.iter()).map(|(gi, y)| gi / y).collect(),
                g.iter()
                    .zip(da.iter().zip(db.iter()))
                    .map(|(gi, (x, y))| -gi * x / (y * y))
                    .collect(),
            )
        }))
    }

    pub fn scale(&mut self, a: Tensor, c: f64) -> Tensor {
        let da = self.node_data_rc(a);
        let out: Vec<f64> = da.iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        self.unary(a, shape, out, move |g| g.iter().map(|gi| gi * c).collect())
    }

    pub fn add_scalar(&mut self, a: Tensor, c: f64) -> Tensor {
        let da = self.node_data_rc(a);
        let out: Vec<f64> = da.iter().map(|x| x + c).collect();
        let shape = self.shape(a).to_vec();
        self.unary(a, shape, out, move |g| g.to_vec())
    }

    pub fn neg(&mut self, a: Tensor) -> Tensor {
        self.scale(a, -1.0)
    }

    /// Broadcast-add a `[d]` bias over the last axis of `x`.
    pub fn add_bias(&mut self, x: Tensor, b: Tensor) -> Result<Tensor, TensorError> {
        let d = *self.shape(x).last().unwrap();
        if self.shape(b) != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let (dx, db) = (self.node_data_rc(x), self.node_data_rc(b));
        let out: Vec<f64> = dx
            .iter()
            .enumerate()
            .map(|(i, v)| v + db[i % d])
            .collect();
        let shape = self.shape(x).to_vec();
        Ok(self.binary(x, b, shape, out, move |g| {
            let mut gb = vec![0.0; d];
            for (i, gi) in g.iter().enumerate() {
                gb[i % d] += gi;
            }
            (g.to_vec(), gb)
        }))
    }

    /// Matrix product. Supports `[n,k]x[k,m]`, batched `[b,n,k]x[b,k,m]`,
    /// and a 2-D operand broadcast against a batched one.
    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        let (batch, n, k, m, a2, b2) = match (sa.len(), sb.len()) {
            (2, 2) => {
                if sa[1] != sb[0] {
                    return Err(mismatch());
                }
                (1, sa[0], sa[1], sb[1], true, true)
            }
            (3, 3) => {
                if sa[0] != sb[0] || sa[2] != sb[1] {
                    return Err(mismatch());
                }
                (sa[0], sa[1], sa[2], sb[2], false, false)
            }
            (3, 2) => {
                if sa[2] != sb[0] {
                    return Err(mismatch());
                }
                (sa[0], sa[1], sa[2], sb[1], false, true)
            }
            (2, 3) => {
                if sa[1] != sb[1] {
                    return Err(mismatch());
                }
                (sb[0], sa[0], sa[1], sb[2], true, false)
            }
            _ => return Err(mismatch()),
        };
        let (da, db) = (self.node_data_rc(a), self.node_data_rc(b));
        let mut out = vec![0.0; batch * n * m];
        for t in 0..batch {
            let ao = if a2 { 0 } else { t * n * k };
            let bo = if b2 { 0 } else { t * k * m };
            let oo = t * n * m;
            matmul_into(&da[ao..ao + n * k], &db[bo..bo + k * m], n, k, m, &mut out[oo..oo + n * m]);
        }
        let out_shape = if sa.len() == 2 && sb.len() == 2 {
            vec![n, m]
        } else {
            vec![batch, n, m]
        };
        Ok(self.binary(a, b, out_shape, out, move |g| {
            // dA = G B^T, dB = A^T G, summed over the batch for broadcast sides
            let mut ga = vec![0.0; if a2 { n * k } else { batch * n * k }];
            let mut gb = vec![0.0; if b2 { k * m } else { batch * k * m }];
            for t in 0..batch {
                let ao = if a2 { 0 } else { t * n * k };
                let bo = if b2 { 0 } else { t * k * m };
                let go = t * n * m;
                let gslice = &g[go..go + n * m];
                // ga += G * B^T
                for i in 0..n {
                    for j in 0..k {
                        let mut acc = 0.0;
                        for l in 0..m {
                            acc += gslice[i * m + l] * db[bo + j * m + l];
                        }
                        ga[ao + i * k + j] += acc;
                    }
                }
                // gb += A^T * G
                for i in 0..k {
                    for j in 0..m {
                        let mut acc = 0.0;
                        for l in 0..n {
                            acc += da[ao + l * k + i] * gslice[l * m + j];
                        }
                        gb[bo + i * m + j] += acc;
                    }
                }
            }
            (ga, gb)
        }))
    }

    pub fn transpose2d(&mut self, a: Tensor) -> Result<Tensor, TensorError> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(TensorError::InvalidShape {
                op: "transpose2d",
                shape: s,
                reason: "expects rank 2".into(),
            });
        }
        let (n, m) = (s[0], s[1]);
        let da = self.node_data_rc(a);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = da[i * m + j];
            }
        }
        Ok(self.unary(a, vec![m, n], out, move |g| {
            let mut ga = vec![0.0; n * m];
            for i in 0..n {
                for j in 0..m {
                    ga[i * m + j] = g[j * n + i];
                }
            }
            ga
        }))
    }

    /// `[b,n,m]` -> `[b,m,n]`.
    pub fn transpose_batched(&mut self, a: Tensor) -> Result<Tensor, TensorError> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 {
            return Err(TensorError::InvalidShape {
                op: "transpose_batched",
                shape: s,
                reason: "expects rank 3".into(),
            });
        }
        let (b, n, m) = (s[0], s[1], s[2]);
        let da = self.node_data_rc(a);
        let mut out = vec![0.0; b * n * m];
        for t in 0..b {
            for i in 0..n {
                for j in 0..m {
                    out[t * n * m + j * n + i] = da[t * n * m + i * m + j];
                }
            }
        }
        Ok(self.unary(a, vec![b, m, n], out, move |g| {
            let mut ga = vec![0.0; b * n * m];
            for t in 0..b {
                for i in 0..n {
                    for j in 0..m {
                        ga[t * n * m + i * m + j] = g[t * n * m + j * n + i];
                    }
                }
            }
            ga
        }))
    }

    /// `[n, h*dh]` -> `[h, n, dh]`.
    pub fn split_heads(&mut self, a: Tensor, heads: usize) -> Result<Tensor, TensorError> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || s[1] % heads != 0 {
            return Err(TensorError::InvalidShape {
                op: "split_heads",
                shape: s,
                reason: format!("not divisible into {heads} heads"),
            });
        }
        let (n, d) = (s[0], s[1]);
        let dh = d / heads;
        let da = self.node_data_rc(a);
        let mut out = vec![0.0; n * d];
        for h in 0..heads {
            for i in 0..n {
                for c in 0..dh {
                    out[h * n * dh + i * dh + c] = da[i * d + h * dh + c];
                }
            }
        }
        Ok(self.unary(a, vec![heads, n, dh], out, move |g| {
            let mut ga = vec![0.0; n * d];
            for h in 0..heads {
                for i in 0..n {
                    for c in 0..dh {
                        ga[i * d + h * dh + c] = g[h * n * dh + i * dh + c];
                    }
                }
            }
            ga
        }))
    }

    /// `[h, n, dh]` -> `[n, h*dh]`, inverse of [`Graph::split_heads`].
    pub fn merge_heads(&mut self, a: Tensor) -> Result<Tensor, TensorError> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 {
            return Err(TensorError::InvalidShape {
                op: "merge_heads",
                shape: s,
                reason: "expects rank 3".into(),
            });
        }
        let (heads, n, dh) = (s[0], s[1], s[2]);
        let d = heads * dh;
        let da = self.node_data_rc(a);
        let mut out = vec![0.0; n * d];
        for h in 0..heads {
            for i in 0..n {
                for c in 0..dh {
                    out[i * d + h * dh + c] = da[h * n * dh + i * dh + c];
                }
            }
        }
        Ok(self.unary(a, vec![n, d], out, move |g| {
            let mut ga = vec![0.0; n * d];
            for h in 0..heads {
                for i in 0..n {
                    for c in 0..dh {
                        ga[h * n * dh + i * dh + c] = g[i * d + h * dh + c];
                    }
                }
            }
            ga
        }))
    }

    /// Softmax over the last axis, stabilized by max subtraction.
    pub fn softmax(&mut self, a: Tensor) -> Tensor {
        let s = self.shape(a).to_vec();
        let d = *s.last().expect("softmax on rank-0 tensor");
        let da = self.node_data_rc(a);
        let rows = da.len() / d;
        let mut out = vec![0.0; da.len()];
        for r in 0..rows {
            let row = &da[r * d..(r + 1) * d];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mx).exp();
                sum += *o;
            }
            for o in &mut out[r * d..(r + 1) * d] {
                *o /= sum;
            }
        }
        let y = Rc::new(out.clone());
        self.unary(a, s, out, move |g| {
            let mut ga = vec![0.0; y.len()];
            for r in 0..rows {
                let yr = &y[r * d..(r + 1) * d];
                let gr = &g[r * d..(r + 1) * d];
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for c in 0..d {
                    ga[r * d + c] = yr[c] * (gr[c] - dot);
                }
            }
            ga
        })
    }

    /// Pre-affine layer norm over the last axis followed by `gain`/`bias`.
    pub fn layernorm(
        &mut self,
        x: Tensor,
        gain: Tensor,
        bias: Tensor,
    ) -> Result<Tensor, TensorError> {
        const EPS: f64 = 1e-5;
        let s = self.shape(x).to_vec();
        let d = *s.last().unwrap();
        if d < 1 {
            return Err(TensorError::InvalidShape {
                op: "layernorm",
                shape: s,
                reason: "channel dimension < 1".into(),
            });
        }
        same_shape("layernorm/gain", self.shape(gain), &[d])?;
        same_shape("layernorm/bias", self.shape(bias), &[d])?;
        let (dx, dg, db) = (
            self.node_data_rc(x),
            self.node_data_rc(gain),
            self.node_data_rc(bias),
        );
        let rows = dx.len() / d;
        let mut out = vec![0.0; dx.len()];
        let mut xhat = vec![0.0; dx.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &dx[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + EPS).sqrt();
            inv_std[r] = istd;
            for c in 0..d {
                let h = (row[c] - mean) * istd;
                xhat[r * d + c] = h;
                out[r * d + c] = h * dg[c] + db[c];
            }
        }
        let xhat = Rc::new(xhat);
        let inv_std = Rc::new(inv_std);
        let rg = self.requires_grad(x) || self.requires_grad(gain) || self.requires_grad(bias);
        let dgc = dg.clone();
        let node = if rg {
            let back = move |g: &[f64]| {
                let mut gx = vec![0.0; xhat.len()];
                let mut gg = vec![0.0; d];
                let mut gb = vec![0.0; d];
                for r in 0..rows {
                    let hr = &xhat[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let mut sum_gy = 0.0;
                    let mut sum_gyh = 0.0;
                    for c in 0..d {
                        let gy = gr[c] * dgc[c];
                        sum_gy += gy;
                        sum_gyh += gy * hr[c];
                        gg[c] += gr[c] * hr[c];
                        gb[c] += gr[c];
                    }
                    let istd = inv_std[r];
                    for c in 0..d {
                        let gy = gr[c] * dgc[c];
                        gx[r * d + c] =
                            istd * (gy - sum_gy / d as f64 - hr[c] * sum_gyh / d as f64);
                    }
                }
                vec![gx, gg, gb]
            };
            self.push_custom(s, out, vec![x.0, gain.0, bias.0], Box::new(back))
        } else {
            self.push_custom_nograd(s, out, vec![x.0, gain.0, bias.0])
        };
        Ok(node)
    }

    /// Exact-erf GELU, `x * Phi(x)`.
    pub fn gelu(&mut self, a: Tensor) -> Tensor {
        let da = self.node_data_rc(a);
        let out: Vec<f64> = da.iter().map(|&x| x * norm_cdf(x)).collect();
        let s = self.shape(a).to_vec();
        self.unary(a, s, out, move |g| {
            g.iter()
                .zip(da.iter())
                .map(|(gi, &x)| gi * (norm_cdf(x) + x * norm_pdf(x)))
                .collect()
        })
    }

    pub fn sigmoid(&mut self, a: Tensor) -> Tensor {
        let da = self.node_data_rc(a);
        let out: Vec<f64> = da.iter().map(|&x| sigmoid(x)).collect();
        let y = Rc::new(out.clone());
        let s = self.shape(a).to_vec();
        self.unary(a, s, out, move |g| {
            g.iter()
                .zip(y.iter())
                .map(|(gi, &p)| gi * p * (1.0 - p))
                .collect()
        })
    }

    pub fn log(&mut self, a: Tensor) -> Tensor {
        let da = self.node_data_rc(a);
        let out: Vec<f64> = da.iter().map(|x| x.ln()).collect();
        let s = self.shape(a).to_vec();
        self.unary(a, s, out, move |g| {
            g.iter().zip(da.iter()).map(|(gi, x)| gi / x).collect()
        })
    }

    pub fn powf(&mut self, a: Tensor, p: f64) -> Tensor {
        let da = self.node_data_rc(a);
        let out: Vec<f64> = da.iter().map(|x| x.powf(p)).collect();
        let s = self.shape(a).to_vec();
        self.unary(a, s, out, move |g| {
            g.iter()
                .zip(da.iter())
                .map(|(gi, x)| gi * p * x.powf(p - 1.0))
                .collect()
        })
    }

    pub fn relu(&mut self, a: Tensor) -> Tensor {
        let da = self.node_data_rc(a);
        let out: Vec<f64> = da.iter().map(|x| x.max(0.0)).collect();
        let s = self.shape(a).to_vec();
        self.unary(a, s, out, move |g| {
            g.iter()
                .zip(da.iter())
                .map(|(gi, &x)| if x > 0.0 { *gi } else { 0.0 })
                .collect()
        })
    }

    /// Elementwise max; gradient follows the winning side (ties go to `a`).
    pub fn maximum(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, TensorError> {
        same_shape("maximum", self.shape(a), self.shape(b))?;
        let (da, db) = (self.node_data_rc(a), self.node_data_rc(b));
        let out: Vec<f64> = da.iter().zip(db.iter()).map(|(x, y)| x.max(*y)).collect();
        let s = self.shape(a).to_vec();
        Ok(self.binary(a, b, s, out, move |g| {
            let mut ga = vec![0.0; g.len()];
            let mut gb = vec![0.0; g.len()];
            for i in 0..g.len() {
                if da[i] >= db[i] {
                    ga[i] = g[i];
                } else {
                    gb[i] = g[i];
                }
            }
            (ga, gb)
        }))
    }

    pub fn minimum(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, TensorError> {
        same_shape("minimum", self.shape(a), self.shape(b))?;
        let (da, db) = (self.node_data_rc(a), self.node_data_rc(b));
        let out: Vec<f64> = da.iter().zip(db.iter()).map(|(x, y)| x.min(*y)).collect();
        let s = self.shape(a).to_vec();
        Ok(self.binary(a, b, s, out, move |g| {
            let mut ga = vec![0.0; g.len()];
            let mut gb = vec![0.0; g.len()];
            for i in 0..g.len() {
                if da[i] <= db[i] {
                    ga[i] = g[i];
                } else {
                    gb[i] = g[i];
                }
            }
            (ga, gb)
        }))
    }

    /// Clamp into `[lo, hi]`; gradient passes only inside the interval.
    pub fn clamp(&mut self, a: Tensor, lo: f64, hi: f64) -> Tensor {
        let da = self.node_data_rc(a);
        let out: Vec<f64> = da.iter().map(|x| x.clamp(lo, hi)).collect();
        let s = self.shape(a).to_vec();
        self.unary(a, s, out, move |g| {
            g.iter()
                .zip(da.iter())
                .map(|(gi, &x)| if x > lo && x < hi { *gi } else { 0.0 })
                .collect()
        })
    }

    pub fn sum(&mut self, a: Tensor) -> Tensor {
        let da = self.node_data_rc(a);
        let total: f64 = da.iter().sum();
        let n = da.len();
        self.unary(a, vec![1], vec![total], move |g| vec![g[0]; n])
    }

    pub fn mean(&mut self, a: Tensor) -> Tensor {
        let n = numel(self.shape(a)) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&mut self, a: Tensor, shape: &[usize]) -> Result<Tensor, TensorError> {
        if numel(shape) != numel(self.shape(a)) {
            return Err(TensorError::InvalidShape {
                op: "reshape",
                shape: shape.to_vec(),
                reason: format!("element count differs from {:?}", self.shape(a)),
            });
        }
        let data = self.node_data_rc(a).as_ref().clone();
        Ok(self.unary(a, shape.to_vec(), data, |g| g.to_vec()))
    }

    /// Concatenate along the first axis; trailing shapes must agree.
    pub fn concat0(&mut self, parts: &[Tensor]) -> Result<Tensor, TensorError> {
        assert!(!parts.is_empty());
        let tail = self.shape(parts[0])[1..].to_vec();
        let mut rows = 0usize;
        for &p in parts {
            same_shape("concat0", &self.shape(p)[1..], &tail)?;
            rows += self.shape(p)[0];
        }
        let row_len: usize = tail.iter().product::<usize>().max(1);
        let mut data = Vec::with_capacity(rows * row_len);
        let mut sizes = Vec::new();
        for &p in parts {
            let d = self.node_data_rc(p);
            sizes.push(d.len());
            data.extend_from_slice(&d);
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&tail);
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        let parents: Vec<usize> = parts.iter().map(|p| p.0).collect();
        if rg {
            let back = move |g: &[f64]| {
                let mut outs = Vec::with_capacity(sizes.len());
                let mut off = 0;
                for &sz in &sizes {
                    outs.push(g[off..off + sz].to_vec());
                    off += sz;
                }
                outs
            };
            Ok(self.push_custom(shape, data, parents, Box::new(back)))
        } else {
            Ok(self.push_custom_nograd(shape, data, parents))
        }
    }

    /// Rows `start..end` along the first axis.
    pub fn slice_rows(
        &mut self,
        a: Tensor,
        start: usize,
        end: usize,
    ) -> Result<Tensor, TensorError> {
        let s = self.shape(a).to_vec();
        if s.is_empty() || end > s[0] || start > end {
            return Err(TensorError::InvalidShape {
                op: "slice_rows",
                shape: s,
                reason: format!("range {start}..{end} out of bounds"),
            });
        }
        let row_len: usize = s[1..].iter().product::<usize>().max(1);
        let total = s[0] * row_len;
        let da = self.node_data_rc(a);
        let data = da[start * row_len..end * row_len].to_vec();
        let mut shape = vec![end - start];
        shape.extend_from_slice(&s[1..]);
        Ok(self.unary(a, shape, data, move |g| {
            let mut ga = vec![0.0; total];
            ga[start * row_len..end * row_len].copy_from_slice(g);
            ga
        }))
    }

    /// Gather rows by index along the first axis (backward scatter-adds).
    pub fn select_rows(&mut self, a: Tensor, idx: &[usize]) -> Result<Tensor, TensorError> {
        let s = self.shape(a).to_vec();
        let row_len: usize = s[1..].iter().product::<usize>().max(1);
        for &i in idx {
            if i >= s[0] {
                return Err(TensorError::InvalidShape {
                    op: "select_rows",
                    shape: s,
                    reason: format!("index {i} out of bounds"),
                });
            }
        }
        let da = self.node_data_rc(a);
        let mut data = Vec::with_capacity(idx.len() * row_len);
        for &i in idx {
            data.extend_from_slice(&da[i * row_len..(i + 1) * row_len]);
        }
        let mut shape = vec![idx.len()];
        shape.extend_from_slice(&s[1..]);
        let total = s[0] * row_len;
        let idx = idx.to_vec();
        Ok(self.unary(a, shape, data, move |g| {
            let mut ga = vec![0.0; total];
            for (k, &i) in idx.iter().enumerate() {
                for c in 0..row_len {
                    ga[i * row_len + c] += g[k * row_len + c];
                }
            }
            ga
        }))
    }

    /// Column `j` of a `[n,m]` tensor as a `[n]` vector.
    pub fn column(&mut self, a: Tensor, j: usize) -> Result<Tensor, TensorError> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || j >= s[1] {
            return Err(TensorError::InvalidShape {
                op: "column",
                shape: s,
                reason: format!("column {j} invalid"),
            });
        }
        let (n, m) = (s[0], s[1]);
        let da = self.node_data_rc(a);
        let data: Vec<f64> = (0..n).map(|i| da[i * m + j]).collect();
        Ok(self.unary(a, vec![n], data, move |g| {
            let mut ga = vec![0.0; n * m];
            for i in 0..n {
                ga[i * m + j] = g[i];
            }
            ga
        }))
    }

    /// Repeat each row `k` times consecutively: `[n,d]` -> `[n*k,d]`.
    pub fn repeat_rows(&mut self, a: Tensor, k: usize) -> Result<Tensor, TensorError> {
        let s = self.shape(a).to_vec();
        let row_len: usize = s[1..].iter().product::<usize>().max(1);
        let n = s[0];
        let da = self.node_data_rc(a);
        let mut data = Vec::with_capacity(n * k * row_len);
        for i in 0..n {
            for _ in 0..k {
                data.extend_from_slice(&da[i * row_len..(i + 1) * row_len]);
            }
        }
        let mut shape = vec![n * k];
        shape.extend_from_slice(&s[1..]);
        Ok(self.unary(a, shape, data, move |g| {
            let mut ga = vec![0.0; n * row_len];
            for i in 0..n {
                for r in 0..k {
                    for c in 0..row_len {
                        ga[i * row_len + c] += g[(i * k + r) * row_len + c];
                    }
                }
            }
            ga
        }))
    }

    /// Tile the whole block of rows `k` times: `[n,d]` -> `[k*n,d]`.
    pub fn tile_rows(&mut self, a: Tensor, k: usize) -> Result<Tensor, TensorError> {
        let s = self.shape(a).to_vec();
        let row_len: usize = s[1..].iter().product::<usize>().max(1);
        let n = s[0];
        let da = self.node_data_rc(a);
        let mut data = Vec::with_capacity(n * k * row_len);
        for _ in 0..k {
            data.extend_from_slice(&da);
        }
        let mut shape = vec![k * n];
        shape.extend_from_slice(&s[1..]);
        Ok(self.unary(a, shape, data, move |g| {
            let mut ga = vec![0.0; n * row_len];
            for r in 0..k {
                for c in 0..n * row_len {
                    ga[c] += g[r * n * row_len + c];
                }
            }
            ga
        }))
    }

    /// Gather from a flat `[n]` tensor by arbitrary indices.
    pub fn gather(&mut self, a: Tensor, idx: &[usize]) -> Result<Tensor, TensorError> {
        let s = self.shape(a).to_vec();
        let n = numel(&s);
        for &i in idx {
            if i >= n {
                return Err(TensorError::InvalidShape {
                    op: "gather",
                    shape: s,
                    reason: format!("index {i} out of bounds"),
                });
            }
        }
        let da = self.node_data_rc(a);
        let data: Vec<f64> = idx.iter().map(|&i| da[i]).collect();
        let idx = idx.to_vec();
        let m = idx.len();
        Ok(self.unary(a, vec![m], data, move |g| {
            let mut ga = vec![0.0; n];
            for (k, &i) in idx.iter().enumerate() {
                ga[i] += g[k];
            }
            ga
        }))
    }

    /// Place 2-D blocks into a zero-initialized `[rows, cols]` matrix at the
    /// given (row, col) offsets. Blocks must not overlap.
    pub fn assemble_blocks(
        &mut self,
        rows: usize,
        cols: usize,
        blocks: &[(Tensor, usize, usize)],
    ) -> Result<Tensor, TensorError> {
        let mut data = vec![0.0; rows * cols];
        let mut spans = Vec::new();
        for &(b, ro, co) in blocks {
            let s = self.shape(b).to_vec();
            if s.len() != 2 || ro + s[0] > rows || co + s[1] > cols {
                return Err(TensorError::InvalidShape {
                    op: "assemble_blocks",
                    shape: s,
                    reason: format!("block does not fit at ({ro},{co}) in {rows}x{cols}"),
                });
            }
            let db = self.node_data_rc(b);
            for i in 0..s[0] {
                for j in 0..s[1] {
                    data[(ro + i) * cols + co + j] = db[i * s[1] + j];
                }
            }
            spans.push((ro, co, s[0], s[1]));
        }
        let rg = blocks.iter().any(|&(b, _, _)| self.requires_grad(b));
        let parents: Vec<usize> = blocks.iter().map(|&(b, _, _)| b.0).collect();
        if rg {
            let back = move |g: &[f64]| {
                spans
                    .iter()
                    .map(|&(ro, co, h, w)| {
                        let mut gb = vec![0.0; h * w];
                        for i in 0..h {
                            for j in 0..w {
                                gb[i * w + j] = g[(ro + i) * cols + co + j];
                            }
                        }
                        gb
                    })
                    .collect()
            };
            Ok(self.push_custom(vec![rows, cols], data, parents, Box::new(back)))
        } else {
            Ok(self.push_custom_nograd(vec![rows, cols], data, parents))
        }
    }

    /// Stack `[n,m]` matrices into `[k,n,m]`.
    pub fn stack0(&mut self, parts: &[Tensor]) -> Result<Tensor, TensorError> {
        let s = self.shape(parts[0]).to_vec();
        let mut reshaped = Vec::with_capacity(parts.len());
        let mut shape = vec![1];
        shape.extend_from_slice(&s);
        for &p in parts {
            same_shape("stack0", self.shape(p), &s)?;
            let r = self.reshape(p, &shape)?;
            reshaped.push(r);
        }
        self.concat0(&reshaped)
    }
}

impl Graph {
    fn push_custom(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<usize>,
        back: super::BackwardFn,
    ) -> Tensor {
        self.push(shape, data, true, parents, Some(back))
    }

    fn push_custom_nograd(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<usize>,
    ) -> Tensor {
        self.push(shape, data, false, parents, None)
    }
}

pub(crate) fn matmul_into(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        for l in 0..k {
            let av = a[i * k + l];
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * m..(l + 1) * m];
            let orow = &mut out[i * m..(i + 1) * m];
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Standard normal CDF via erf.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Abramowitz & Stegun 7.1.26 with refinement; |err| < 1.2e-7 which is
/// below every tolerance used here.
pub fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let y = 1.0
        - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
            + 0.254829592)
            * t
            * (-x * x).exp();
    sign * y
}
