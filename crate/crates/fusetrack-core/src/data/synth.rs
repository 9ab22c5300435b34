//! Seeded synthetic tracking sequences: a textured rectangle target
//! bouncing inside a textured frame among distractor shapes.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Sequence;
use crate::bbox::BBox;
use crate::image::Image;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub frame_width: usize,
    pub frame_height: usize,
    pub n_frames: usize,
    /// Initial target size in pixels.
    pub target_w: f64,
    pub target_h: f64,
    /// Frame-to-frame speed in pixels plus a random-walk component.
    pub velocity: f64,
    pub walk_sigma: f64,
    /// Per-frame multiplicative scale jitter, log-uniform in
    /// `[1/(1+jitter), 1+jitter]`.
    pub scale_jitter: f64,
    pub distractors: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            frame_width: 128,
            frame_height: 128,
            n_frames: 24,
            target_w: 20.0,
            target_h: 16.0,
            velocity: 3.0,
            walk_sigma: 0.6,
            scale_jitter: 0.03,
            distractors: 2,
            seed: 1,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("target {0}x{1} does not fit in frame {2}x{3}")]
    TargetTooLarge(f64, f64, usize, usize),
}

struct Body {
    cx: f64,
    cy: f64,
    vx: f64,
    vy: f64,
    w: f64,
    h: f64,
    color: [f64; 3],
    /// Checker cell size driving the body texture.
    cell: usize,
}

impl Body {
    fn bbox(&self) -> BBox {
        BBox {
            x: self.cx - self.w / 2.0,
            y: self.cy - self.h / 2.0,
            w: self.w,
            h: self.h,
        }
    }

    /// Advance one frame, reflecting off the walls so the body always
    /// stays fully inside the frame.
    fn advance(&mut self, fw: f64, fh: f64, rng: &mut ChaCha8Rng, walk_sigma: f64) {
        use rand_distr::Distribution;
        let normal = rand_distr::Normal::new(0.0, walk_sigma).unwrap();
        self.vx += normal.sample(rng);
        self.vy += normal.sample(rng);
        self.cx += self.vx;
        self.cy += self.vy;
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        if self.cx < hw {
            self.cx = 2.0 * hw - self.cx;
            self.vx = -self.vx;
        }
        if self.cx > fw - hw {
            self.cx = 2.0 * (fw - hw) - self.cx;
            self.vx = -self.vx;
        }
        if self.cy < hh {
            self.cy = 2.0 * hh - self.cy;
            self.vy = -self.vy;
        }
        if self.cy > fh - hh {
            self.cy = 2.0 * (fh - hh) - self.cy;
            self.vy = -self.vy;
        }
        self.cx = self.cx.clamp(hw, fw - hw);
        self.cy = self.cy.clamp(hh, fh - hh);
    }

    fn paint(&self, img: &mut Image) {
        let b = self.bbox();
        let x0 = b.x.max(0.0) as usize;
        let y0 = b.y.max(0.0) as usize;
        let x1 = (b.x2().ceil() as usize).min(img.width);
        let y1 = (b.y2().ceil() as usize).min(img.height);
        for y in y0..y1 {
            for x in x0..x1 {
                let dark = ((x / self.cell) + (y / self.cell)) % 2 == 0;
                let mut k = if dark { 0.6 } else { 1.0 };
                // body-anchored brightness ramp so different parts of an
                // object are visually distinct (gives box regression a cue)
                let u = ((x as f64 + 0.5 - b.x) / b.w).clamp(0.0, 1.0);
                let v = ((y as f64 + 0.5 - b.y) / b.h).clamp(0.0, 1.0);
                k *= 0.55 + 0.45 * (u + v);
                img.set(x, y, [
                    (self.color[0] * k).min(1.0),
                    (self.color[1] * k).min(1.0),
                    (self.color[2] * k).min(1.0),
                ]);
            }
        }
    }
}

fn paint_background(img: &mut Image, rng: &mut ChaCha8Rng) {
    let base = [
        rng.gen_range(0.1..0.4),
        rng.gen_range(0.1..0.4),
        rng.gen_range(0.1..0.4),
    ];
    // static per-sequence noise texture, regenerated identically per frame
    // from its own stream so frames share the background
    let mut tex = ChaCha8Rng::seed_from_u64(rng.gen());
    for y in 0..img.height {
        for x in 0..img.width {
            let n: f64 = tex.gen_range(-0.05..0.05);
            img.set(
                x,
                y,
                [
                    (base[0] + n).clamp(0.0, 1.0),
                    (base[1] + n).clamp(0.0, 1.0),
                    (base[2] + n).clamp(0.0, 1.0),
                ],
            );
        }
    }
}

/// Deterministic sequence render; same config (including seed) gives
/// bit-identical frames and ground truth.
pub fn generate_sequence(cfg: &SynthConfig) -> Result<Sequence, SynthError> {
    let (fw, fh) = (cfg.frame_width as f64, cfg.frame_height as f64);
    if cfg.target_w > fw || cfg.target_h > fh {
        return Err(SynthError::TargetTooLarge(
            cfg.target_w,
            cfg.target_h,
            cfg.frame_width,
            cfg.frame_height,
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut background = Image::new(cfg.frame_width, cfg.frame_height);
    paint_background(&mut background, &mut rng);

    let dir = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut target = Body {
        cx: rng.gen_range(cfg.target_w / 2.0..fw - cfg.target_w / 2.0),
        cy: rng.gen_range(cfg.target_h / 2.0..fh - cfg.target_h / 2.0),
        vx: cfg.velocity * dir.cos(),
        vy: cfg.velocity * dir.sin(),
        w: cfg.target_w,
        h: cfg.target_h,
        // the target is always warm-colored so it is learnable
        color: [rng.gen_range(0.7..1.0), rng.gen_range(0.1..0.4), rng.gen_range(0.1..0.4)],
        cell: 4,
    };
    let mut distractors: Vec<Body> = (0..cfg.distractors)
        .map(|i| {
            let w = rng.gen_range(8.0..24.0_f64).min(fw / 2.0);
            let h = rng.gen_range(8.0..24.0_f64).min(fh / 2.0);
            let dir = rng.gen_range(0.0..std::f64::consts::TAU);
            // alternate hard (warm, target-like) and easy (cool) distractors
            // so appearance alone cannot always resolve identity
            let color = if i % 2 == 0 {
                [rng.gen_range(0.5..0.9), rng.gen_range(0.1..0.4), rng.gen_range(0.1..0.4)]
            } else {
                [rng.gen_range(0.1..0.4), rng.gen_range(0.3..0.8), rng.gen_range(0.5..1.0)]
            };
            // hard distractors start near the target so they keep crossing
            // the tracked region; easy ones spawn anywhere
            let (cx, cy) = if i % 2 == 0 {
                (
                    (target.cx + rng.gen_range(-40.0..40.0)).clamp(w / 2.0, fw - w / 2.0),
                    (target.cy + rng.gen_range(-40.0..40.0)).clamp(h / 2.0, fh - h / 2.0),
                )
            } else {
                (
                    rng.gen_range(w / 2.0..fw - w / 2.0),
                    rng.gen_range(h / 2.0..fh - h / 2.0),
                )
            };
            Body {
                cx,
                cy,
                vx: cfg.velocity * dir.cos(),
                vy: cfg.velocity * dir.sin(),
                w,
                h,
                color,
                cell: 4,
            }
        })
        .collect();

    let mut frames = Vec::with_capacity(cfg.n_frames);
    let mut gt = Vec::with_capacity(cfg.n_frames);
    for f in 0..cfg.n_frames {
        if f > 0 {
            for d in &mut distractors {
                d.advance(fw, fh, &mut rng, cfg.walk_sigma);
            }
            if cfg.scale_jitter > 0.0 {
                let hi = 1.0 + cfg.scale_jitter;
                let s = (rng.gen_range(-(hi.ln())..hi.ln())).exp();
                target.w = (target.w * s).clamp(6.0, fw / 2.0);
                target.h = (target.h * s).clamp(6.0, fh / 2.0);
            }
            target.advance(fw, fh, &mut rng, cfg.walk_sigma);
        }
        let mut frame = background.clone();
        for d in &distractors {
            d.paint(&mut frame);
        }
        // target painted last so it is never occluded
        target.paint(&mut frame);
        frames.push(frame);
        gt.push(target.bbox());
    }
    Ok(Sequence {
        name: format!("synth-{}", cfg.seed),
        frames,
        gt,
    })
}
