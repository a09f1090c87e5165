//! Multi-view 3D keypoint estimation with multivariate t-distributions.
//!
//! Each keypoint is modelled as a 3D multivariate t-distribution. Its mean is
//! initialised by linear triangulation and then refined, together with its
//! scale matrix, by minimising the negative log-likelihood of the 2D labels
//! under the distribution's para-perspective image in every camera.

pub mod camera;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod gradcheck;
pub mod io;
pub mod simulator;
pub mod tdist;
pub mod triangulation;

pub use camera::{AffineApprox, Camera, ParaPerspectiveMap};
pub use error::{Error, Result};
pub use estimator::{fit_keypoint, FitConfig, KeypointEstimate, ScaleChol};
pub use tdist::{MvtDist, MvtDist2, MvtDist3};
pub use triangulation::{triangulate_dlt, Heatmap, TriangulationResult};
