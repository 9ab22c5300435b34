//! From-scratch Siamese transformer tracker.
//!
//! Template and search crops are embedded by a shared patch backbone,
//! fused by a concatenation-based transformer encoder with untied
//! positional encoding, decoded by a single cross-attention block, and
//! read out by IoU-aware classification and box-regression heads.
//! Everything runs on the tape-based tensor engine in [`tensor`].

pub mod attention;
pub mod nn;
pub mod backbone;
pub mod bbox;
pub mod config;
pub mod data;
pub mod fusion;
pub mod gradcheck;
pub mod heads;
pub mod image;
pub mod model;
pub mod optim;
pub mod params;
pub mod pe;
pub mod tensor;
pub mod tracker;
pub mod train;

pub use bbox::BBox;
pub use params::ParamStore;
pub use tensor::{Graph, Tensor, TensorError};
