//! Classification / regression heads, target assignment and the losses:
//! varifocal loss against the IoU-aware classification score, and the
//! score-weighted GIoU regression loss.
//!
//! The IACS target `q` and the GIoU weight `p` are treated as fixed
//! weights (stop-gradient): they are recomputed every step from detached
//! predictions but no gradient flows through them.

use rand::Rng;

use crate::bbox::BBox;
use crate::nn::Linear;
use crate::params::ParamStore;
use crate::tensor::{Graph, Tensor, TensorError};

pub const VFL_ALPHA: f64 = 0.75;
pub const VFL_GAMMA: f64 = 2.0;
const P_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Varifocal,
    Bce,
}

/// Three-layer perceptron, hidden dim = d_model, GELU between layers.
#[derive(Debug, Clone)]
pub struct Mlp3 {
    pub l1: Linear,
    pub l2: Linear,
    pub l3: Linear,
}

impl Mlp3 {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        Mlp3 {
            l1: Linear::init(store, &format!("{prefix}.l1"), d_model, d_model, rng),
            l2: Linear::init(store, &format!("{prefix}.l2"), d_model, d_model, rng),
            l3: Linear::init(store, &format!("{prefix}.l3"), d_model, d_out, rng),
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
        let h = self.l2.forward(g, store, h)?;
        let h = g.gelu(h);
        self.l3.forward(g, store, h)
    }
}

#[derive(Debug, Clone)]
pub struct Heads {
    pub cls: Mlp3,
    pub reg: Mlp3,
}

/// Head outputs on the search grid: `r_cls` is `[L,1]` in (0,1), `r_reg`
/// is `[L,4]` normalized (l,t,r,b) edge distances in (0,1).
#[derive(Debug, Clone, Copy)]
pub struct ResponseMap {
    pub r_cls: Tensor,
    pub r_reg: Tensor,
}

impl Heads {
    pub fn init<R: Rng>(store: &mut ParamStore, d_model: usize, rng: &mut R) -> Self {
        Heads {
            cls: Mlp3::init(store, "head.cls", d_model, 1, rng),
            reg: Mlp3::init(store, "head.reg", d_model, 4, rng),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        features: Tensor,
    ) -> Result<ResponseMap, TensorError> {
        let cls_logits = self.cls.forward(g, store, features)?;
        let r_cls = g.sigmoid(cls_logits);
        let reg_logits = self.reg.forward(g, store, features)?;
        // sigmoid keeps the normalized edge distances in (0,1)
        let r_reg = g.sigmoid(reg_logits);
        Ok(ResponseMap { r_cls, r_reg })
    }
}

/// Per-location training targets on the search grid.
#[derive(Debug, Clone)]
pub struct AssignmentTarget {
    pub positive_idx: Vec<usize>,
    pub gt: BBox,
    /// True when the ground truth covered no token center and the nearest
    /// center was promoted instead.
    pub fallback_used: bool,
}

/// Token centers inside the ground-truth box are positives; if none is,
/// the nearest center is promoted so every sample trains at least one
/// location.
pub fn assign_targets(gt: &BBox, grid_h: usize, grid_w: usize, stride: usize) -> AssignmentTarget {
    let mut positive_idx = Vec::new();
    let mut best = (f64::INFINITY, 0usize);
    for i in 0..grid_h {
        for j in 0..grid_w {
            let cx = (j as f64 + 0.5) * stride as f64;
            let cy = (i as f64 + 0.5) * stride as f64;
            let idx = i * grid_w + j;
            if gt.contains(cx, cy) {
                positive_idx.push(idx);
            }
            let (gx, gy) = gt.center();
            let d = (cx - gx).powi(2) + (cy - gy).powi(2);
            if d < best.0 {
                best = (d, idx);
            }
        }
    }
    let fallback_used = positive_idx.is_empty();
    if fallback_used {
        positive_idx.push(best.1);
    }
    AssignmentTarget {
        positive_idx,
        gt: *gt,
        fallback_used,
    }
}

/// Token-center box decode: `(l,t,r,b)` normalized distances at `idx` ->
/// pixel box in crop coordinates. Degenerate extents clamp to 1 px.
pub fn decode_box(
    idx: usize,
    r_reg: &[f64],
    grid_w: usize,
    stride: usize,
    crop_w: f64,
    crop_h: f64,
) -> BBox {
    let (i, j) = (idx / grid_w, idx % grid_w);
    let cx = (j as f64 + 0.5) * stride as f64;
    let cy = (i as f64 + 0.5) * stride as f64;
    let (l, t, r, b) = (
        r_reg[idx * 4],
        r_reg[idx * 4 + 1],
        r_reg[idx * 4 + 2],
        r_reg[idx * 4 + 3],
    );
    let x = cx - l * crop_w;
    let y = cy - t * crop_h;
    let w = ((l + r) * crop_w).max(1.0);
    let h = ((t + b) * crop_h).max(1.0);
    BBox { x, y, w, h }
}

/// Inverse of [`decode_box`] at one location, used for round-trip tests.
pub fn encode_box(
    idx: usize,
    gt: &BBox,
    grid_w: usize,
    stride: usize,
    crop_w: f64,
    crop_h: f64,
) -> [f64; 4] {
    let (i, j) = (idx / grid_w, idx % grid_w);
    let cx = (j as f64 + 0.5) * stride as f64;
    let cy = (i as f64 + 0.5) * stride as f64;
    [
        (cx - gt.x) / crop_w,
        (cy - gt.y) / crop_h,
        (gt.x2() - cx) / crop_w,
        (gt.y2() - cy) / crop_h,
    ]
}

/// Scalar varifocal loss at one location.
pub fn varifocal(p: f64, q: f64, alpha: f64, gamma: f64) -> f64 {
    let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
    if q > 0.0 {
        -q * (q * p.ln() + (1.0 - q) * (1.0 - p).ln())
    } else {
        -alpha * p.powf(gamma) * (1.0 - p).ln()
    }
}

/// Scalar binary cross-entropy against a hard label.
pub fn bce(p: f64, label: f64) -> f64 {
    let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// Predicted boxes for the positive locations, differentiable through
/// `r_reg`. Returns `(x1, y1, x2, y2)` coordinate vectors of length `P`.
pub fn decode_boxes_graph(
    g: &mut Graph,
    r_reg: Tensor,
    positives: &[usize],
    grid_w: usize,
    stride: usize,
    crop_w: f64,
    crop_h: f64,
) -> Result<(Tensor, Tensor, Tensor, Tensor), TensorError> {
    let sel = g.select_rows(r_reg, positives)?;
    let l = g.column(sel, 0)?;
    let t = g.column(sel, 1)?;
    let r = g.column(sel, 2)?;
    let b = g.column(sel, 3)?;
    let n = positives.len();
    let cx: Vec<f64> = positives
        .iter()
        .map(|&idx| ((idx % grid_w) as f64 + 0.5) * stride as f64)
        .collect();
    let cy: Vec<f64> = positives
        .iter()
        .map(|&idx| ((idx / grid_w) as f64 + 0.5) * stride as f64)
        .collect();
    let cx = g.constant(&[n], cx);
    let cy = g.constant(&[n], cy);
    let lw = g.scale(l, crop_w);
    let rw = g.scale(r, crop_w);
    let th = g.scale(t, crop_h);
    let bh = g.scale(b, crop_h);
    let x1 = g.sub(cx, lw)?;
    let x2 = g.add(cx, rw)?;
    let y1 = g.sub(cy, th)?;
    let y2 = g.add(cy, bh)?;
    Ok((x1, y1, x2, y2))
}

/// GIoU between decoded positive boxes and a fixed ground-truth box, as a
/// `[P]` graph tensor.
pub fn giou_graph(
    g: &mut Graph,
    coords: (Tensor, Tensor, Tensor, Tensor),
    gt: &BBox,
) -> Result<Tensor, TensorError> {
    let (x1, y1, x2, y2) = coords;
    let n = g.shape(x1)[0];
    let gx1 = g.constant(&[n], vec![gt.x; n]);
    let gy1 = g.constant(&[n], vec![gt.y; n]);
    let gx2 = g.constant(&[n], vec![gt.x2(); n]);
    let gy2 = g.constant(&[n], vec![gt.y2(); n]);

    let ix1 = g.maximum(x1, gx1)?;
    let iy1 = g.maximum(y1, gy1)?;
    let ix2 = g.minimum(x2, gx2)?;
    let iy2 = g.minimum(y2, gy2)?;
    let iw = g.sub(ix2, ix1)?;
    let iw = g.relu(iw);
    let ih = g.sub(iy2, iy1)?;
    let ih = g.relu(ih);
    let inter = g.mul(iw, ih)?;

    let pw = g.sub(x2, x1)?;
    let ph = g.sub(y2, y1)?;
    let parea = g.mul(pw, ph)?;
    let garea = g.constant(&[n], vec![gt.area(); n]);
    let sum = g.add(parea, garea)?;
    let union = g.sub(sum, inter)?;
    // union >= gt area > 0, no epsilon needed
    let iou = g.div(inter, union)?;

    let ex1 = g.minimum(x1, gx1)?;
    let ey1 = g.minimum(y1, gy1)?;
    let ex2 = g.maximum(x2, gx2)?;
    let ey2 = g.maximum(y2, gy2)?;
    let ew = g.sub(ex2, ex1)?;
    let eh = g.sub(ey2, ey1)?;
    let encl = g.mul(ew, eh)?;
    let gap = g.sub(encl, union)?;
    let frac = g.div(gap, encl)?;
    g.sub(iou, frac)
}

/// Fixed per-location loss weights, computed once per step from detached
/// predictions.
#[derive(Debug, Clone)]
pub struct LossWeights {
    /// IACS target per location: IoU(decoded box, gt) for positives, 0
    /// for negatives.
    pub q: Vec<f64>,
    /// Predicted score per positive, in positive-index order.
    pub p_weight: Vec<f64>,
    pub positives: Vec<usize>,
    pub n_loc: usize,
}

/// Recompute `q` and the GIoU weights from current (detached) predictions.
pub fn compute_loss_weights(
    r_cls: &[f64],
    r_reg: &[f64],
    assignment: &AssignmentTarget,
    grid_w: usize,
    stride: usize,
    crop_w: f64,
    crop_h: f64,
) -> LossWeights {
    let n_loc = r_cls.len();
    let mut q = vec![0.0; n_loc];
    let mut p_weight = Vec::with_capacity(assignment.positive_idx.len());
    for &idx in &assignment.positive_idx {
        let pred = decode_box(idx, r_reg, grid_w, stride, crop_w, crop_h);
        q[idx] = pred.iou(&assignment.gt);
        p_weight.push(r_cls[idx]);
    }
    LossWeights {
        q,
        p_weight,
        positives: assignment.positive_idx.clone(),
        n_loc,
    }
}

/// Varifocal classification loss over the map, normalized by the positive
/// count (min 1). `q` comes in through `weights` and is not differentiated.
pub fn classification_loss(
    g: &mut Graph,
    r_cls: Tensor,
    weights: &LossWeights,
) -> Result<Tensor, TensorError> {
    let n = weights.n_loc;
    let flat = g.reshape(r_cls, &[n])?;
    let p = g.clamp(flat, P_CLAMP, 1.0 - P_CLAMP);
    let qv = g.constant(&[n], weights.q.clone());
    let pos_mask: Vec<f64> = {
        let mut m = vec![0.0; n];
        for &i in &weights.positives {
            m[i] = 1.0;
        }
        m
    };
    let neg_mask: Vec<f64> = pos_mask.iter().map(|v| 1.0 - v).collect();
    let pos_mask = g.constant(&[n], pos_mask);
    let neg_mask = g.constant(&[n], neg_mask);

    // positives: -q (q log p + (1-q) log(1-p))
    let log_p = g.log(p);
    let one = g.constant(&[n], vec![1.0; n]);
    let one_minus_p = g.sub(one, p)?;
    let log_1p = g.log(one_minus_p);
    let q_log_p = g.mul(qv, log_p)?;
    let one_minus_q = {
        let o = g.constant(&[n], vec![1.0; n]);
        g.sub(o, qv)?
    };
    let t2 = g.mul(one_minus_q, log_1p)?;
    let inner = g.add(q_log_p, t2)?;
    let pos_term = g.mul(qv, inner)?;
    let pos_term = g.neg(pos_term);
    let pos_term = g.mul(pos_term, pos_mask)?;

    // negatives: -alpha p^gamma log(1-p)
    let p_pow = g.powf(p, VFL_GAMMA);
    let neg_term = g.mul(p_pow, log_1p)?;
    let neg_term = g.scale(neg_term, -VFL_ALPHA);
    let neg_term = g.mul(neg_term, neg_mask)?;

    let total = g.add(pos_term, neg_term)?;
    let s = g.sum(total);
    Ok(g.scale(s, 1.0 / weights.positives.len().max(1) as f64))
}

/// BCE ablation: hard 1/0 labels, mean over the map.
pub fn bce_loss_variant(
    g: &mut Graph,
    r_cls: Tensor,
    weights: &LossWeights,
) -> Result<Tensor, TensorError> {
    let n = weights.n_loc;
    let flat = g.reshape(r_cls, &[n])?;
    let p = g.clamp(flat, P_CLAMP, 1.0 - P_CLAMP);
    let mut label = vec![0.0; n];
    for &i in &weights.positives {
        label[i] = 1.0;
    }
    let y = g.constant(&[n], label);
    let log_p = g.log(p);
    let one = g.constant(&[n], vec![1.0; n]);
    let one_minus_p = g.sub(one, p)?;
    let log_1p = g.log(one_minus_p);
    let a = g.mul(y, log_p)?;
    let one_minus_y = {
        let o = g.constant(&[n], vec![1.0; n]);
        g.sub(o, y)?
    };
    let b = g.mul(one_minus_y, log_1p)?;
    let s = g.add(a, b)?;
    let s = g.neg(s);
    Ok(g.mean(s))
}

/// Score-weighted GIoU loss over positives, normalized by positive count.
pub fn regression_loss(
    g: &mut Graph,
    r_reg: Tensor,
    weights: &LossWeights,
    grid_w: usize,
    stride: usize,
    crop_w: f64,
    crop_h: f64,
    gt: &BBox,
) -> Result<Tensor, TensorError> {
    let npos = weights.positives.len();
    if npos == 0 {
        return Ok(g.scalar_const(0.0));
    }
    let coords = decode_boxes_graph(g, r_reg, &weights.positives, grid_w, stride, crop_w, crop_h)?;
    let giou = giou_graph(g, coords, gt)?;
    let one = g.constant(&[npos], vec![1.0; npos]);
    let gap = g.sub(one, giou)?;
    let w = g.constant(&[npos], weights.p_weight.clone());
    let weighted = g.mul(w, gap)?;
    let s = g.sum(weighted);
    Ok(g.scale(s, 1.0 / npos as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn vfl_hand_values() {
        // q=0, p=0.5: -0.75 * 0.25 * ln(0.5)
        assert!((varifocal(0.5, 0.0, 0.75, 2.0) - 0.12998).abs() < 1e-4);
        // q=0.5, p=0.5: -0.5 * ln(0.5)
        assert!((varifocal(0.5, 0.5, 0.75, 2.0) - 0.34657).abs() < 1e-4);
        // perfect positive
        assert!(varifocal(1.0 - 1e-9, 1.0, 0.75, 2.0) < 1e-4);
    }

    #[test]
    fn vfl_reduces_to_bce_at_q1() {
        for p in [0.1, 0.35, 0.6, 0.9] {
            assert!((varifocal(p, 1.0, 0.75, 2.0) - bce(p, 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn bce_hand_values() {
        assert!((bce(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-9);
        // the probability clamp floors perfect-prediction loss at ~1e-6
        assert!(bce(1.0 - 1e-9, 1.0) < 2e-6);
    }

    #[test]
    fn assign_full_cover_and_centered() {
        let gt = BBox::new(0.0, 0.0, 224.0, 224.0);
        let a = assign_targets(&gt, 14, 14, 16);
        assert_eq!(a.positive_idx.len(), 196);
        // 112x112 gt at (50,50): centers 56,72,...,152 per axis, 7x7
        let gt = BBox::new(50.0, 50.0, 112.0, 112.0);
        let a = assign_targets(&gt, 14, 14, 16);
        assert_eq!(a.positive_idx.len(), 49);
    }

    #[test]
    fn assign_tiny_offcenter_gets_one_fallback_positive() {
        // smaller than the stride and between centers
        let gt = BBox::new(18.0, 18.0, 3.0, 3.0);
        let a = assign_targets(&gt, 4, 4, 16);
        assert_eq!(a.positive_idx.len(), 1);
        assert!(a.fallback_used);
    }

    #[test]
    fn decode_box_centered_hand_geometry() {
        // l=t=r=b=0.25 at the center token of a 14x14/224 grid
        let mut r_reg = vec![0.0; 196 * 4];
        let idx = 7 * 14 + 7;
        r_reg[idx * 4..idx * 4 + 4].copy_from_slice(&[0.25; 4]);
        let b = decode_box(idx, &r_reg, 14, 16, 224.0, 224.0);
        assert!((b.w - 112.0).abs() < 1e-9 && (b.h - 112.0).abs() < 1e-9);
        let (cx, cy) = b.center();
        assert!((cx - 120.0).abs() < 1e-9 && (cy - 120.0).abs() < 1e-9);
    }

    #[test]
    fn decode_zero_distances_clamps_to_one_px() {
        let r_reg = vec![0.0; 4];
        let b = decode_box(0, &r_reg, 1, 16, 16.0, 16.0);
        assert_eq!((b.w, b.h), (1.0, 1.0));
    }

    #[test]
    fn encode_decode_round_trip() {
        let gt = BBox::new(40.0, 30.0, 80.0, 60.0);
        for idx in 0..196 {
            let enc = encode_box(idx, &gt, 14, 16, 224.0, 224.0);
            let mut r_reg = vec![0.0; 196 * 4];
            r_reg[idx * 4..idx * 4 + 4].copy_from_slice(&enc);
            let dec = decode_box(idx, &r_reg, 14, 16, 224.0, 224.0);
            assert!((dec.x - gt.x).abs() < 1e-4);
            assert!((dec.y - gt.y).abs() < 1e-4);
            assert!((dec.w - gt.w).abs() < 1e-4);
            assert!((dec.h - gt.h).abs() < 1e-4);
        }
    }

    #[test]
    fn giou_graph_matches_plain_geometry() {
        let gt = BBox::new(10.0, 10.0, 20.0, 15.0);
        let mut g = Graph::new();
        // two candidate boxes as raw coordinates
        let x1 = g.constant(&[2], vec![12.0, 40.0]);
        let y1 = g.constant(&[2], vec![8.0, 40.0]);
        let x2 = g.constant(&[2], vec![28.0, 55.0]);
        let y2 = g.constant(&[2], vec![22.0, 50.0]);
        let giou = giou_graph(&mut g, (x1, y1, x2, y2), &gt).unwrap();
        let d = g.data(giou);
        let b1 = BBox::new(12.0, 8.0, 16.0, 14.0);
        let b2 = BBox::new(40.0, 40.0, 15.0, 10.0);
        assert!((d[0] - b1.giou(&gt)).abs() < 1e-9);
        assert!((d[1] - b2.giou(&gt)).abs() < 1e-9);
    }

    #[test]
    fn classification_loss_two_location_hand_sum() {
        let mut g = Graph::new();
        let r_cls = g.constant(&[2, 1], vec![0.8, 0.3]);
        let weights = LossWeights {
            q: vec![0.6, 0.0],
            p_weight: vec![0.8],
            positives: vec![0],
            n_loc: 2,
        };
        let loss = classification_loss(&mut g, r_cls, &weights).unwrap();
        let expect = varifocal(0.8, 0.6, VFL_ALPHA, VFL_GAMMA)
            + varifocal(0.3, 0.0, VFL_ALPHA, VFL_GAMMA);
        assert!((g.scalar(loss) - expect).abs() < 1e-9);
    }

    #[test]
    fn regression_loss_direct_value() {
        // one positive with weight 0.8 and giou 0.5 -> 0.4. Use a box
        // whose giou with gt is exactly 0.5: gt [0,0,2,1], pred [0,0,1,1]
        let gt = BBox::new(8.0 - 1.0, 8.0 - 0.5, 2.0, 1.0);
        let mut r_reg = vec![0.0; 4];
        // center of the single 16px token is (8,8); choose distances for a
        // box [7,7.5]..[8,8.5] (1x1, half the gt): l=1/16... use encode
        let pred = BBox::new(7.0, 7.5, 1.0, 1.0);
        let enc = [
            (8.0 - pred.x) / 16.0,
            (8.0 - pred.y) / 16.0,
            (pred.x2() - 8.0) / 16.0,
            (pred.y2() - 8.0) / 16.0,
        ];
        r_reg.copy_from_slice(&enc);
        let giou = pred.giou(&gt);
        assert!((giou - 0.5).abs() < 1e-9);
        let mut g = Graph::new();
        let reg = g.constant(&[1, 4], r_reg);
        let weights = LossWeights {
            q: vec![0.5],
            p_weight: vec![0.8],
            positives: vec![0],
            n_loc: 1,
        };
        let loss =
            regression_loss(&mut g, reg, &weights, 1, 16, 16.0, 16.0, &gt).unwrap();
        assert!((g.scalar(loss) - 0.4).abs() < 1e-9);
    }

    #[test]
    fn perfect_predictions_zero_losses() {
        let gt = BBox::new(4.0, 4.0, 8.0, 8.0);
        let mut g = Graph::new();
        let r_cls = g.constant(&[1, 1], vec![1.0 - 1e-9]);
        let enc = [
            (8.0 - gt.x) / 16.0,
            (8.0 - gt.y) / 16.0,
            (gt.x2() - 8.0) / 16.0,
            (gt.y2() - 8.0) / 16.0,
        ];
        let r_reg = g.constant(&[1, 4], enc.to_vec());
        let weights = LossWeights {
            q: vec![1.0],
            p_weight: vec![1.0],
            positives: vec![0],
            n_loc: 1,
        };
        let cls = classification_loss(&mut g, r_cls, &weights).unwrap();
        let reg = regression_loss(&mut g, r_reg, &weights, 1, 16, 16.0, 16.0, &gt).unwrap();
        assert!(g.scalar(cls) < 1e-4);
        assert!(g.scalar(reg) < 1e-9);
    }

    #[test]
    fn zero_p_weight_kills_regression_loss() {
        let gt = BBox::new(2.0, 2.0, 5.0, 5.0);
        let mut g = Graph::new();
        let r_reg = g.constant(&[1, 4], vec![0.1, 0.2, 0.3, 0.1]);
        let weights = LossWeights {
            q: vec![0.4],
            p_weight: vec![0.0],
            positives: vec![0],
            n_loc: 1,
        };
        let loss = regression_loss(&mut g, r_reg, &weights, 1, 16, 16.0, 16.0, &gt).unwrap();
        assert_eq!(g.scalar(loss), 0.0);
    }

    #[test]
    fn loss_gradients_pass_fd_check_on_toy_map() {
        use crate::gradcheck::{clone_store, fd_check};
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut store = ParamStore::new();
        let heads = Heads::init(&mut store, 8, &mut rng);
        let feats: Vec<f64> = (0..4 * 8).map(|_| {
            use rand::Rng as _;
            rng.gen_range(-1.0..1.0)
        }).collect();
        let gt = BBox::new(5.0, 5.0, 20.0, 20.0);
        let assignment = assign_targets(&gt, 2, 2, 16);
        // freeze the detached weights at the base point
        let weights = {
            let mut g = Graph::new();
            let x = g.constant(&[4, 8], feats.clone());
            let out = heads.forward(&mut g, &store, x).unwrap();
            compute_loss_weights(
                g.data(out.r_cls),
                g.data(out.r_reg),
                &assignment,
                2,
                16,
                32.0,
                32.0,
            )
        };
        let run = |s: &ParamStore| -> (f64, Graph, Tensor) {
            let mut g = Graph::new();
            let x = g.constant(&[4, 8], feats.clone());
            let out = heads.forward(&mut g, s, x).unwrap();
            let cls = classification_loss(&mut g, out.r_cls, &weights).unwrap();
            let reg =
                regression_loss(&mut g, out.r_reg, &weights, 2, 16, 32.0, 32.0, &gt).unwrap();
            let total = g.add(cls, reg).unwrap();
            (g.scalar(total), g, total)
        };
        let (_, mut graph, total) = run(&store);
        graph.backward(total).unwrap();
        store.zero_grads();
        graph.write_grads(&mut store).unwrap();
        let mut analytic = clone_store(&store);
        for (name, p) in store.iter() {
            analytic.get_mut(name).unwrap().grad = p.grad.clone();
        }
        let r = fd_check(&store, |s| run(s).0, &analytic);
        assert!(r.max_rel_error < 1e-3, "max rel err {}", r.max_rel_error);
    }

    #[test]
    fn head_shapes_and_zero_weight_cls() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let heads = Heads::init(&mut store, 8, &mut rng);
        for suffix in ["l1", "l2", "l3"] {
            let p = store.get_mut(&format!("head.cls.{suffix}.w")).unwrap();
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let x = g.constant(&[196, 8], vec![0.3; 196 * 8]);
        let out = heads.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.shape(out.r_cls), &[196, 1]);
        assert_eq!(g.shape(out.r_reg), &[196, 4]);
        for v in g.data(out.r_cls) {
            assert_eq!(*v, 0.5);
        }
    }

    #[test]
    fn gradient_reaches_both_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let heads = Heads::init(&mut store, 8, &mut rng);
        let gt = BBox::new(4.0, 4.0, 20.0, 20.0);
        let assignment = assign_targets(&gt, 2, 2, 16);
        let mut g = Graph::new();
        let x = g.constant(&[4, 8], (0..32).map(|v| (v as f64).sin()).collect());
        let out = heads.forward(&mut g, &store, x).unwrap();
        let weights = compute_loss_weights(
            g.data(out.r_cls),
            g.data(out.r_reg),
            &assignment,
            2,
            16,
            32.0,
            32.0,
        );
        let cls = classification_loss(&mut g, out.r_cls, &weights).unwrap();
        let reg = regression_loss(&mut g, out.r_reg, &weights, 2, 16, 32.0, 32.0, &gt).unwrap();
        let total = g.add(cls, reg).unwrap();
        g.backward(total).unwrap();
        store.zero_grads();
        g.write_grads(&mut store).unwrap();
        for branch in ["head.cls", "head.reg"] {
            let any_nonzero = store
                .iter()
                .filter(|(n, _)| n.starts_with(branch))
                .any(|(_, p)| p.grad.iter().any(|v| *v != 0.0));
            assert!(any_nonzero, "{branch} got no gradient");
        }
    }
}
