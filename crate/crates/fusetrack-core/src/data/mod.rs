//! Synthetic sequence generation, sequence IO, training-pair sampling
//! and the OPE evaluation metrics.

pub mod metrics;
pub mod sample;
pub mod seqio;
pub mod synth;

use crate::bbox::BBox;
use crate::image::Image;

/// An ordered sequence of frames with one ground-truth box per frame.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<Image>,
    pub gt: Vec<BBox>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}
