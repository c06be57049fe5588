//! Pipeline thresholds and weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every tunable of the pipeline. Serialized as JSON for config files and
/// stage bundles; missing fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Maximum angle between merged plane normals, degrees.
    pub eps_normal_deg: f64,
    /// Maximum mean vertex-to-plane distance for merging, meters.
    pub eps_distance: f64,
    /// Maximum |cos| between the centroid ray and either normal.
    pub eps_cos: f64,
    /// Compactness weight of the partition energy.
    pub alpha: f64,
    /// Smallest covariance eigenvalue (m^2) below which a cluster is flat enough.
    pub split_eigen_threshold: f64,
    /// Lloyd iterations per partition round.
    pub partition_lloyd_iters: usize,
    /// Upper bound on the number of partition clusters.
    pub max_clusters: usize,
    /// Texel spacing on plane patches, meters.
    pub texel_density: f64,
    pub keyframe_interval: usize,
    pub lambda2: f64,
    pub lambda3: f64,
    pub simplify_ratio: f64,
    pub min_cluster_faces: usize,
    pub max_outer: usize,
    pub tol: f64,
    /// Gauss-Newton steps per block per outer iteration.
    pub inner_iters: usize,
    pub vis_depth_tol: f64,
    /// Maximum angle between viewing ray and plane normal, degrees.
    pub vis_max_angle_deg: f64,
    /// Outer iterations between visibility refreshes (0 = never).
    pub vis_refresh_every: usize,
    pub grid_cols: usize,
    pub grid_rows: usize,
    pub grayscale: bool,
    /// Hold the first keyframe's pose fixed during joint optimization.
    pub anchor_first_frame: bool,
    /// Depth units per meter; `None` uses the format default.
    pub depth_scale: Option<f64>,
    /// Factor memory above which the geometry solve switches to conjugate gradients.
    pub cholesky_budget_bytes: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            eps_normal_deg: 8.0,
            eps_distance: 0.05,
            eps_cos: 80f64.to_radians().cos(),
            alpha: 1e-20,
            split_eigen_threshold: 1e-5,
            partition_lloyd_iters: 6,
            max_clusters: 4096,
            texel_density: 0.0025,
            keyframe_interval: 10,
            lambda2: 0.1,
            lambda3: 1.0,
            simplify_ratio: 0.02,
            min_cluster_faces: 2,
            max_outer: 30,
            tol: 1e-5,
            inner_iters: 1,
            vis_depth_tol: 0.02,
            vis_max_angle_deg: 75.0,
            vis_refresh_every: 5,
            grid_cols: 20,
            grid_rows: 16,
            grayscale: false,
            anchor_first_frame: false,
            depth_scale: None,
            cholesky_budget_bytes: 2 << 30,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eps_normal_deg", self.eps_normal_deg),
            ("eps_distance", self.eps_distance),
            ("eps_cos", self.eps_cos),
            ("alpha", self.alpha),
            ("split_eigen_threshold", self.split_eigen_threshold),
            ("texel_density", self.texel_density),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("tol", self.tol),
            ("vis_depth_tol", self.vis_depth_tol),
            ("vis_max_angle_deg", self.vis_max_angle_deg),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.simplify_ratio > 0.0 && self.simplify_ratio < 1.0) {
            return Err(Error::InvalidInput(format!(
                "simplify_ratio must lie in (0, 1), got {}",
                self.simplify_ratio
            )));
        }
        if self.keyframe_interval == 0 {
            return Err(Error::InvalidInput("keyframe_interval must be >= 1".into()));
        }
        if self.grid_cols < 2 || self.grid_rows < 2 {
            return Err(Error::InvalidInput("correction grid needs at least 2x2 vertices".into()));
        }
        if self.min_cluster_faces == 0 {
            return Err(Error::InvalidInput("min_cluster_faces must be >= 1".into()));
        }
        if let Some(s) = self.depth_scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::InvalidInput(format!("depth_scale must be positive, got {s}")));
            }
        }
        Ok(())
    }
}
