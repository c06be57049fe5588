pub mod bundle;
pub mod config;
pub mod error;
pub mod geom;
pub mod joint;
pub mod mesh;
pub mod par;
pub mod partition;
pub mod pipeline;
pub mod rgbd;
pub mod simplify;
pub mod synth;
pub mod texel;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use mesh::IndexedMesh;

/// `max` that propagates NaN.
pub(crate) fn nan_max(a: f64, b: f64) -> f64 {
    if a >= b {
        a
    } else if b > a {
        b
    } else {
        f64::NAN
    }
}
