//! Camera localization and exploration-coverage assessment for labeled
//! cavity phantoms.
//!
//! The library is organized around a two-stage pipeline:
//!
//! 1. A reference reconstruction (point cloud + posed frames) is registered
//!    to a labeled anatomy mesh with ICP ([`registration`]), and the quality
//!    of that reconstruction is measured ([`registration::metrics`]).
//! 2. Query video frames are localized against the reference model through
//!    descriptor retrieval, essential-matrix match verification, and robust
//!    absolute pose estimation ([`localization`]), then turned into
//!    per-calyx visitation scores by ray-cast visibility ([`visitation`]).
//!
//! [`sim`] provides a procedural phantom generator, ground-truth camera
//! trajectories, and synthetic features so the whole pipeline can be
//! exercised and verified without real endoscopy data. [`assess`] ties the
//! stages together behind file-based configs for the CLI.

pub mod assess;
pub mod cloud;
pub mod formats;
pub mod geom;
pub mod localization;
pub mod phantom;
pub mod registration;
pub mod sim;
pub mod util;
pub mod visitation;

pub use geom::{PinholeCamera, Ray, RigidTransform, SimilarityTransform, TriMesh};
pub use phantom::LabeledMesh;
