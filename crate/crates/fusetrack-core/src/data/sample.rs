//! Training-pair sampling: template crop from one frame, search crop
//! from another, with optional random translation and scale so the
//! target is not always centered in the search image.

use rand::Rng;

use super::Sequence;
use crate::bbox::BBox;
use crate::config::AugMode;
use crate::image::Image;
use crate::tracker::{make_crop, CropSpec};

#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub template: Image,
    pub search: Image,
    /// Ground truth in search-crop pixel coordinates.
    pub gt_in_search: BBox,
    /// Affine used for the search crop, kept so search-space boxes can be
    /// mapped back to frame coordinates in tests.
    pub search_spec: CropSpec,
}

/// Draw a (template, search) crop pair from two frames of one sequence.
/// Strong augmentation offsets the crop center uniformly within +-25% of
/// the crop side and scales it log-uniformly in [0.75, 1.33]; weak keeps
/// the target centered at the nominal context scale.
pub fn sample_training_pair<R: Rng>(
    seq: &Sequence,
    template_frame: usize,
    search_frame: usize,
    template_size: usize,
    search_size: usize,
    template_area_factor: f64,
    search_area_factor: f64,
    aug: AugMode,
    rng: &mut R,
) -> TrainingPair {
    let t_gt = &seq.gt[template_frame];
    let s_gt = &seq.gt[search_frame];
    let t_spec = CropSpec::around(t_gt, template_area_factor, template_size);
    let template = make_crop(&seq.frames[template_frame], &t_spec);

    let mut s_spec = CropSpec::around(s_gt, search_area_factor, search_size);
    if aug == AugMode::Strong {
        let side = s_spec.scale * search_size as f64;
        let scale = rng.gen_range((0.75_f64).ln()..(1.33_f64).ln()).exp();
        let new_side = side * scale;
        let (cx, cy) = s_gt.center();
        let dx = rng.gen_range(-0.25..0.25) * new_side;
        let dy = rng.gen_range(-0.25..0.25) * new_side;
        s_spec = CropSpec {
            origin_x: cx + dx - new_side / 2.0,
            origin_y: cy + dy - new_side / 2.0,
            scale: new_side / search_size as f64,
            out_size: search_size,
        };
    }
    let search = make_crop(&seq.frames[search_frame], &s_spec);
    TrainingPair {
        template,
        search,
        gt_in_search: s_spec.frame_to_crop(s_gt),
        search_spec: s_spec,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_sequence, SynthConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq() -> Sequence {
        generate_sequence(&SynthConfig::default()).unwrap()
    }

    #[test]
    fn weak_mode_centers_target() {
        let seq = seq();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = sample_training_pair(&seq, 0, 3, 32, 64, 2.0, 4.0, AugMode::Weak, &mut rng);
        let (cx, cy) = p.gt_in_search.center();
        assert!((cx - 32.0).abs() < 1e-9 && (cy - 32.0).abs() < 1e-9);
    }

    #[test]
    fn strong_mode_seeded_reproducible_and_offcenter() {
        let seq = seq();
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let a = sample_training_pair(&seq, 0, 3, 32, 64, 2.0, 4.0, AugMode::Strong, &mut r1);
        let b = sample_training_pair(&seq, 0, 3, 32, 64, 2.0, 4.0, AugMode::Strong, &mut r2);
        assert_eq!(a.search.data, b.search.data);
        assert_eq!(a.gt_in_search.x, b.gt_in_search.x);
        // with a random draw the target is almost surely not dead center
        let (cx, cy) = a.gt_in_search.center();
        assert!((cx - 32.0).abs() > 1e-6 || (cy - 32.0).abs() > 1e-6);
    }

    #[test]
    fn strong_offsets_bounded_by_quarter_side() {
        let seq = seq();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let p = sample_training_pair(&seq, 0, 5, 32, 64, 2.0, 4.0, AugMode::Strong, &mut rng);
            let (cx, cy) = p.gt_in_search.center();
            // center offset in crop px is at most 25% of the crop side
            assert!((cx - 32.0).abs() <= 16.0 + 1e-9);
            assert!((cy - 32.0).abs() <= 16.0 + 1e-9);
        }
    }

    #[test]
    fn gt_maps_back_to_frame_through_spec() {
        let seq = seq();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for aug in [AugMode::Weak, AugMode::Strong] {
            let p = sample_training_pair(&seq, 0, 4, 32, 64, 2.0, 4.0, aug, &mut rng);
            let back = p.search_spec.crop_to_frame(&p.gt_in_search);
            let gt = &seq.gt[4];
            assert!((back.x - gt.x).abs() < 0.5);
            assert!((back.y - gt.y).abs() < 0.5);
            assert!((back.w - gt.w).abs() < 0.5);
            assert!((back.h - gt.h).abs() < 0.5);
        }
    }
}
