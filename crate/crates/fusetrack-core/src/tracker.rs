//! Inference pipeline: square context crops around the target, the
//! Hanning motion prior blended into the classification map, and the
//! frame-by-frame tracking loop with a frozen first-frame template.

use crate::bbox::BBox;
use crate::config::{ModelConfig, TrackConfig};
use crate::heads::decode_box;
use crate::image::Image;
use crate::model::TrackModel;
use crate::params::ParamStore;
use crate::tensor::{Graph, TensorError};

/// Affine mapping between frame coordinates and a square resized crop.
/// `crop = (frame - origin) / scale`, `frame = origin + crop * scale`.
#[derive(Debug, Clone, Copy)]
pub struct CropSpec {
    pub origin_x: f64,
    pub origin_y: f64,
    /// Frame pixels per crop pixel.
    pub scale: f64,
    pub out_size: usize,
}

impl CropSpec {
    /// Square crop of side `sqrt(w*h) * area_factor` centered on the box.
    pub fn around(target: &BBox, area_factor: f64, out_size: usize) -> CropSpec {
        let side = (target.w * target.h).sqrt() * area_factor;
        let (cx, cy) = target.center();
        CropSpec {
            origin_x: cx - side / 2.0,
            origin_y: cy - side / 2.0,
            scale: side / out_size as f64,
            out_size,
        }
    }

    pub fn frame_to_crop(&self, b: &BBox) -> BBox {
        BBox {
            x: (b.x - self.origin_x) / self.scale,
            y: (b.y - self.origin_y) / self.scale,
            w: b.w / self.scale,
            h: b.h / self.scale,
        }
    }

    pub fn crop_to_frame(&self, b: &BBox) -> BBox {
        BBox {
            x: self.origin_x + b.x * self.scale,
            y: self.origin_y + b.y * self.scale,
            w: b.w * self.scale,
            h: b.h * self.scale,
        }
    }
}

/// Resample the frame through `spec` with bilinear interpolation; pixels
/// outside the frame take the frame's mean color.
pub fn make_crop(frame: &Image, spec: &CropSpec) -> Image {
    let fill = frame.mean_rgb();
    let n = spec.out_size;
    let mut out = Image::new(n, n);
    for v in 0..n {
        for u in 0..n {
            let fx = spec.origin_x + (u as f64 + 0.5) * spec.scale;
            let fy = spec.origin_y + (v as f64 + 0.5) * spec.scale;
            out.set(u, v, frame.sample_bilinear(fx - 0.5, fy - 0.5, fill));
        }
    }
    out
}

/// 2-D Hanning window on the response grid, outer product of
/// `0.5 (1 - cos(2 pi n / (N-1)))`, peak 1 at the center.
pub fn hanning_window(h: usize, w: usize) -> Vec<f64> {
    let axis = |n: usize| -> Vec<f64> {
        if n == 1 {
            return vec![1.0];
        }
        (0..n)
            .map(|i| {
                0.5 * (1.0
                    - (2.0 * std::f64::consts::PI * i as f64 / (n as f64 - 1.0)).cos())
            })
            .collect()
    };
    let (wy, wx) = (axis(h), axis(w));
    let mut out = Vec::with_capacity(h * w);
    for y in &wy {
        for x in &wx {
            out.push(y * x);
        }
    }
    out
}

/// Blend the motion prior into the classification map:
/// `r' = (1 - gamma) r + gamma hann`.
pub fn apply_hanning(r_cls: &[f64], window: &[f64], gamma: f64) -> Vec<f64> {
    assert_eq!(r_cls.len(), window.len());
    r_cls
        .iter()
        .zip(window)
        .map(|(r, h)| (1.0 - gamma) * r + gamma * h)
        .collect()
}

/// Clip a predicted box to the frame rectangle (1 px minimum extent), so
/// a bad prediction cannot blow up the next search crop.
pub fn clamp_to_frame(b: &BBox, frame: &Image) -> BBox {
    let (fw, fh) = (frame.width as f64, frame.height as f64);
    let x1 = b.x.clamp(0.0, fw - 1.0);
    let y1 = b.y.clamp(0.0, fh - 1.0);
    let x2 = b.x2().clamp(x1 + 1.0, fw);
    let y2 = b.y2().clamp(y1 + 1.0, fh);
    BBox {
        x: x1,
        y: y1,
        w: x2 - x1,
        h: y2 - y1,
    }
}

#[derive(Debug, Clone)]
pub struct Tracker {
    /// Template crop taken on the first frame and never updated.
    template_crop: Image,
    pub prev_box: BBox,
    cfg: TrackConfig,
}

impl Tracker {
    /// First frame plus ground truth: freeze the template and seed the
    /// motion state.
    pub fn init(
        model_cfg: &ModelConfig,
        track_cfg: &TrackConfig,
        frame: &Image,
        gt: &BBox,
    ) -> Tracker {
        let spec = CropSpec::around(gt, track_cfg.template_area_factor, model_cfg.template_size);
        Tracker {
            template_crop: make_crop(frame, &spec),
            prev_box: *gt,
            cfg: track_cfg.clone(),
        }
    }

    /// One frame: crop around the previous box, run the model, window the
    /// scores, decode the argmax box back into frame coordinates.
    pub fn step(
        &mut self,
        model: &TrackModel,
        store: &ParamStore,
        frame: &Image,
    ) -> Result<BBox, TensorError> {
        let spec = CropSpec::around(
            &self.prev_box,
            self.cfg.search_area_factor,
            model.cfg.search_size,
        );
        let search = make_crop(frame, &spec);
        let mut g = Graph::new();
        let out = model.forward(&mut g, store, &self.template_crop, &search)?;
        let grid = out.search_grid;
        let window = hanning_window(grid.h, grid.w);
        let scores = apply_hanning(g.data(out.response.r_cls), &window, self.cfg.gamma);
        let best = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        let crop_box = decode_box(
            best,
            g.data(out.response.r_reg),
            grid.w,
            model.cfg.stride,
            model.cfg.search_size as f64,
            model.cfg.search_size as f64,
        );
        let frame_box = clamp_to_frame(&spec.crop_to_frame(&crop_box), frame);
        self.prev_box = frame_box;
        Ok(frame_box)
    }

    pub fn template_crop(&self) -> &Image {
        &self.template_crop
    }
}

/// Run a tracker over a whole sequence; output starts at frame 2 (frame 1
/// is the ground-truth init), so `results.len() == frames.len() - 1`.
pub fn track_sequence(
    model: &TrackModel,
    store: &ParamStore,
    model_cfg: &ModelConfig,
    track_cfg: &TrackConfig,
    frames: &[Image],
    init_gt: &BBox,
) -> Result<Vec<BBox>, TensorError> {
    let mut tracker = Tracker::init(model_cfg, track_cfg, &frames[0], init_gt);
    frames[1..]
        .iter()
        .map(|f| tracker.step(model, store, f))
        .collect()
}
