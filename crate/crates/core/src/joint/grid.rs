//! Per-frame non-rigid correction field `F(u) = u + Σ_l δ_l(u) f_l`.

use serde::{Deserialize, Serialize};

/// Lattice of 2D pixel offsets with vertices spread evenly over
/// `[0, W] × [0, H]`, stored row-major (`l = row · cols + col`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionGrid {
    pub cols: usize,
    pub rows: usize,
    pub width: f64,
    pub height: f64,
    pub offsets: Vec<[f64; 2]>,
}

/// Warped point, its Jacobian `∂F/∂u` (`jacobian[r][c] = ∂F_r/∂u_c`) and
/// the four active lattice vertices with their bilinear weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Warp {
    pub point: [f64; 2],
    pub jacobian: [[f64; 2]; 2],
    pub weights: [(usize, f64); 4],
}

impl CorrectionGrid {
    pub fn new(cols: usize, rows: usize, width: f64, height: f64) -> Self {
        assert!(cols >= 2 && rows >= 2, "correction grid needs at least 2x2 vertices");
        Self {
            cols,
            rows,
            width,
            height,
            offsets: vec![[0.0; 2]; cols * rows],
        }
    }

    /// Number of scalar unknowns (two per vertex).
    pub fn num_params(&self) -> usize {
        2 * self.offsets.len()
    }

    pub fn spacing(&self) -> [f64; 2] {
        [self.width / (self.cols - 1) as f64, self.height / (self.rows - 1) as f64]
    }

    /// Σ_l f_lᵀ f_l.
    pub fn energy(&self) -> f64 {
        self.offsets.iter().map(|f| f[0] * f[0] + f[1] * f[1]).sum()
    }

    /// Scalar parameter `k` (vertex `k / 2`, component `k % 2`).
    pub fn param(&self, k: usize) -> f64 {
        self.offsets[k / 2][k % 2]
    }

    pub fn param_mut(&mut self, k: usize) -> &mut f64 {
        &mut self.offsets[k / 2][k % 2]
    }

    /// `None` outside `[0, W] × [0, H]`.
    pub fn warp(&self, u: [f64; 2]) -> Option<Warp> {
        if !(u[0] >= 0.0 && u[1] >= 0.0 && u[0] <= self.width && u[1] <= self.height) {
            return None;
        }
        let [hx, hy] = self.spacing();
        let (sx, sy) = (u[0] / hx, u[1] / hy);
        let c0 = (sx.floor() as usize).min(self.cols - 2);
        let r0 = (sy.floor() as usize).min(self.rows - 2);
        let (a, b) = (sx - c0 as f64, sy - r0 as f64);
        let l00 = r0 * self.cols + c0;
        let ids = [l00, l00 + 1, l00 + self.cols, l00 + self.cols + 1];
        let w = [(1.0 - a) * (1.0 - b), a * (1.0 - b), (1.0 - a) * b, a * b];
        let dw = [
            [-(1.0 - b) / hx, -(1.0 - a) / hy],
            [(1.0 - b) / hx, -a / hy],
            [-b / hx, (1.0 - a) / hy],
            [b / hx, a / hy],
        ];
        let mut point = u;
        let mut jacobian = [[1.0, 0.0], [0.0, 1.0]];
        for k in 0..4 {
            let f = self.offsets[ids[k]];
            for r in 0..2 {
                point[r] += w[k] * f[r];
                for c in 0..2 {
                    jacobian[r][c] += f[r] * dw[k][c];
                }
            }
        }
        Some(Warp {
            point,
            jacobian,
            weights: [(ids[0], w[0]), (ids[1], w[1]), (ids[2], w[2]), (ids[3], w[3])],
        })
    }
}
