//! Verification oracle: procedural labeled phantoms, ground-truth camera
//! trajectories, synthetic features with controlled noise, and a naive
//! brute-force visibility implementation.
//!
//! Everything here is a pure function of its spec and seed, so reruns are
//! bit-identical and tests can rely on exact ground truth.

mod features;
mod oracle;
mod phantom_gen;
mod trajectory;

pub use features::{build_reference_model, synthesize_features, NoiseSpec, SynthesizedFeatures};
pub use oracle::brute_force_visibility;
pub use phantom_gen::{generate_phantom, CalyxCenterline, CenterlineTree, PhantomSpec};
pub use trajectory::{generate_trajectory, perturb_trajectory, PosedFrame, TrajectorySpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("phantom generation failed: {0}")]
    GenerationFailed(String),
    #[error("calyx {0} does not exist in the phantom")]
    UnknownCalyx(u32),
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
}
