//! Audio-conditioned graph-convolutional adversarial network for 2D dance
//! motion synthesis.

pub mod audio;
pub mod checkpoint;
pub mod dataset;
pub mod eval;
pub mod graphnet;
pub mod nn;
pub mod optim;
pub mod latent;
pub mod skeleton;
pub mod tensor;
pub mod training;
