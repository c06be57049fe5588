//! Joint texture optimization: texel colors, plane parameters, camera
//! poses and per-frame correction grids, by alternating minimization of
//! `E_tex = E_c + λ₁E_p + λ₂E_s`.

mod grid;

pub use grid::{CorrectionGrid, Warp};

use std::io::Write;
use std::ops::Range;
use std::path::Path;

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::mesh::Point3;
use crate::par;
use crate::partition::PlaneProxy;
use crate::rgbd::{self, DepthImage, Image, Intrinsics, Pose};
use crate::texel::TexelSample;

/// Frames seeing fewer texels are left untouched by the pose block.
pub const MIN_FRAME_TEXELS: usize = 20;
/// Step halvings tried before a Gauss-Newton step is rejected.
pub const MAX_HALVINGS: usize = 5;

/// A keyframe as seen by the optimizer.
#[derive(Debug, Clone)]
pub struct JointFrame {
    pub index: usize,
    pub pose: Pose,
    pub grid: CorrectionGrid,
    pub image: Image,
    pub depth: DepthImage,
}

impl JointFrame {
    pub fn new(index: usize, pose: Pose, image: Image, depth: DepthImage, cfg: &PipelineConfig) -> Self {
        let grid = CorrectionGrid::new(cfg.grid_cols, cfg.grid_rows, image.width as f64, image.height as f64);
        Self {
            index,
            pose,
            grid,
            image,
            depth,
        }
    }
}

/// Energies after one outer iteration (iteration 0 is the initial state).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub iteration: usize,
    pub e_c: f64,
    pub e_p: f64,
    pub e_s: f64,
    pub e_tex: f64,
}

/// `q = p − (pᵀn + w) n` for a possibly unnormalized `n`.
pub fn project_raw(p: &Point3, n: &Vector3<f64>, w: f64) -> Point3 {
    p - n * (p.dot(n) + w)
}

/// One texel seen in one frame: residual `C − I(F(π(x)))` with
/// `x = R q + t`, and its derivatives.
#[derive(Debug, Clone, Copy)]
pub struct Observation {
    /// Unused channels are zero.
    pub r: [f64; 3],
    pub x: Vector3<f64>,
    /// `∂r_c/∂x`.
    pub dr_dx: [Vector3<f64>; 3],
    /// `∂r_c/∂F(u)`.
    pub dr_dwarp: [[f64; 2]; 3],
    pub warp: Warp,
    pub channels: usize,
}

/// Sampled color `I(F(π(R q + t)))`, or `None` when the point is behind
/// the camera or the warped pixel leaves the image.
pub fn sample_color(q: &Point3, pose: &Pose, grid: &CorrectionGrid, image: &Image, k: &Intrinsics) -> Option<[f64; 3]> {
    let x = pose.transform(q);
    if !(x.z > 1e-9) {
        return None;
    }
    let warp = grid.warp([x.x * k.fx / x.z + k.cx, x.y * k.fy / x.z + k.cy])?;
    image.sample(warp.point[0], warp.point[1]).map(|s| s.value)
}

pub fn observe(
    q: &Point3,
    color: &[f64; 3],
    pose: &Pose,
    grid: &CorrectionGrid,
    image: &Image,
    k: &Intrinsics,
) -> Option<Observation> {
    let x = pose.transform(q);
    if !(x.z > 1e-9) {
        return None;
    }
    let warp = grid.warp([x.x * k.fx / x.z + k.cx, x.y * k.fy / x.z + k.cy])?;
    let s = image.sample(warp.point[0], warp.point[1])?;
    let iz = 1.0 / x.z;
    let du_dx = [
        [k.fx * iz, 0.0, -k.fx * x.x * iz * iz],
        [0.0, k.fy * iz, -k.fy * x.y * iz * iz],
    ];
    let j = warp.jacobian;
    let mut obs = Observation {
        r: [0.0; 3],
        x,
        dr_dx: [Vector3::zeros(); 3],
        dr_dwarp: [[0.0; 2]; 3],
        warp,
        channels: image.channels,
    };
    for c in 0..image.channels {
        obs.r[c] = color[c] - s.value[c];
        let dw = [-s.dx[c], -s.dy[c]];
        obs.dr_dwarp[c] = dw;
        let du = [dw[0] * j[0][0] + dw[1] * j[1][0], dw[0] * j[0][1] + dw[1] * j[1][1]];
        obs.dr_dx[c] = Vector3::new(
            du[0] * du_dx[0][0],
            du[1] * du_dx[1][1],
            du[0] * du_dx[0][2] + du[1] * du_dx[1][2],
        );
    }
    Some(obs)
}

impl Observation {
    pub fn sq_norm(&self) -> f64 {
        self.r.iter().map(|r| r * r).sum()
    }

    /// `∂r_c/∂(ω, ν)` for the left update `x' = (I + [ω]×) x + ν`.
    pub fn pose_jacobian(&self) -> [[f64; 6]; 3] {
        let mut out = [[0.0; 6]; 3];
        for c in 0..self.channels {
            let g = self.dr_dx[c];
            let w = self.x.cross(&g);
            out[c] = [w.x, w.y, w.z, g.x, g.y, g.z];
        }
        out
    }

    /// `∂r_c/∂(n, w)` for a texel at `p` projected with the raw plane `(n, w)`.
    pub fn plane_jacobian(&self, p: &Point3, n: &Vector3<f64>, w: f64, pose: &Pose) -> [[f64; 4]; 3] {
        let s = p.dot(n) + w;
        let mut out = [[0.0; 4]; 3];
        for c in 0..self.channels {
            let g = pose.rotation.transpose() * self.dr_dx[c];
            let gn = g.dot(n);
            let dn = -(g * s + p * gn);
            out[c] = [dn.x, dn.y, dn.z, -gn];
        }
        out
    }

    /// `(parameter index, ∂r/∂f)` for the eight active grid scalars.
    pub fn grid_jacobian(&self) -> [(usize, [f64; 3]); 8] {
        let mut out = [(0, [0.0; 3]); 8];
        for (k, &(l, wt)) in self.warp.weights.iter().enumerate() {
            for comp in 0..2 {
                let mut d = [0.0; 3];
                for c in 0..self.channels {
                    d[c] = self.dr_dwarp[c][comp] * wt;
                }
                out[2 * k + comp] = (2 * l + comp, d);
            }
        }
        out
    }
}

/// Per-texel visibility lists (ascending texel ids) for every frame.
pub fn compute_visibility(
    frames: &[JointFrame],
    proxies: &[PlaneProxy],
    texels: &[TexelSample],
    k: &Intrinsics,
    cfg: &PipelineConfig,
) -> Vec<Vec<u32>> {
    par::map_slice(frames, |f| {
        texels
            .iter()
            .enumerate()
            .filter(|(_, t)| {
                let pr = &proxies[t.plane];
                rgbd::visible(&pr.project(&t.p), &pr.normal, &f.pose, &f.depth, k, cfg)
            })
            .map(|(i, _)| i as u32)
            .collect()
    })
}

/// Optimizer state. Texels must be grouped by plane id.
#[derive(Debug, Clone)]
pub struct TexOptState {
    pub frames: Vec<JointFrame>,
    pub proxies: Vec<PlaneProxy>,
    pub texels: Vec<TexelSample>,
    pub colors: Vec<[f64; 3]>,
    /// Texel appears in at least one visibility list.
    pub observed: Vec<bool>,
    pub visibility: Vec<Vec<u32>>,
    pub intrinsics: Intrinsics,
    pub lambda1: f64,
    pub lambda2: f64,
    pub trace: Vec<EnergyRecord>,
    /// Step norms of the last plane and pose blocks.
    pub last_plane_steps: Vec<f64>,
    pub last_frame_steps: Vec<f64>,
    pub cfg: PipelineConfig,
    plane_ranges: Vec<Range<usize>>,
}

impl TexOptState {
    /// Visibility from the frames' depth maps and current poses.
    pub fn new(
        frames: Vec<JointFrame>,
        proxies: Vec<PlaneProxy>,
        texels: Vec<TexelSample>,
        intrinsics: Intrinsics,
        cfg: &PipelineConfig,
    ) -> Result<Self> {
        let vis = compute_visibility(&frames, &proxies, &texels, &intrinsics, cfg);
        Self::with_visibility(frames, proxies, texels, intrinsics, vis, cfg)
    }

    pub fn with_visibility(
        frames: Vec<JointFrame>,
        proxies: Vec<PlaneProxy>,
        texels: Vec<TexelSample>,
        intrinsics: Intrinsics,
        visibility: Vec<Vec<u32>>,
        cfg: &PipelineConfig,
    ) -> Result<Self> {
        if visibility.len() != frames.len() {
            return Err(Error::InvalidInput("one visibility list per frame required".into()));
        }
        if let Some(f) = frames.iter().find(|f| f.image.channels != frames[0].image.channels) {
            return Err(Error::InvalidInput(format!("frame {} has a different channel count", f.index)));
        }
        for (i, v) in visibility.iter().enumerate() {
            if v.windows(2).any(|w| w[0] >= w[1]) || v.last().is_some_and(|&t| t as usize >= texels.len()) {
                return Err(Error::InvalidInput(format!("visibility list of frame {i} is not an ascending texel list")));
            }
        }
        let mut plane_ranges = vec![0..0; proxies.len()];
        let mut start = 0;
        for i in 0..=texels.len() {
            if i == texels.len() || texels[i].plane != texels[start].plane {
                if start < i {
                    let p = texels[start].plane;
                    if p >= proxies.len() || !plane_ranges[p].is_empty() {
                        return Err(Error::InvalidInput(format!(
                            "texels must be grouped by plane and reference existing planes (plane {p})"
                        )));
                    }
                    plane_ranges[p] = start..i;
                }
                start = i;
            }
        }
        let mut observed = vec![false; texels.len()];
        for v in &visibility {
            for &t in v {
                observed[t as usize] = true;
            }
        }
        let colors = texels.iter().map(|t| t.color.map(f64::from)).collect();
        Ok(Self {
            frames,
            proxies,
            texels,
            colors,
            observed,
            visibility,
            intrinsics,
            lambda1: 1.0,
            lambda2: cfg.lambda2,
            trace: Vec::new(),
            last_plane_steps: Vec::new(),
            last_frame_steps: Vec::new(),
            cfg: cfg.clone(),
            plane_ranges,
        })
    }

    pub fn channels(&self) -> usize {
        self.frames.first().map_or(3, |f| f.image.channels)
    }

    pub fn plane_range(&self, plane: usize) -> Range<usize> {
        self.plane_ranges[plane].clone()
    }

    pub fn observe_with(&self, t: usize, proxy: &PlaneProxy, pose: &Pose, grid: &CorrectionGrid, image: &Image) -> Option<Observation> {
        let q = proxy.project(&self.texels[t].p);
        observe(&q, &self.colors[t], pose, grid, image, &self.intrinsics)
    }

    /// Photometric energy of frame `i` under a candidate pose and grid.
    fn frame_photo(&self, i: usize, pose: &Pose, grid: &CorrectionGrid) -> f64 {
        let f = &self.frames[i];
        let mut e = 0.0;
        for &t in &self.visibility[i] {
            let t = t as usize;
            let pr = &self.proxies[self.texels[t].plane];
            if let Some(o) = self.observe_with(t, pr, pose, grid, &f.image) {
                e += o.sq_norm();
            }
        }
        e
    }

    fn frame_energy(&self, i: usize, pose: &Pose, grid: &CorrectionGrid) -> f64 {
        self.frame_photo(i, pose, grid) + self.lambda2 * grid.energy()
    }

    fn visible_in_plane(&self, i: usize, range: &Range<usize>) -> &[u32] {
        let v = &self.visibility[i];
        let a = v.partition_point(|&t| (t as usize) < range.start);
        let b = v.partition_point(|&t| (t as usize) < range.end);
        &v[a..b]
    }

    fn plane_distances(&self, j: usize, proxy: &PlaneProxy) -> f64 {
        self.plane_ranges[j]
            .clone()
            .map(|t| proxy.signed_distance(&self.texels[t].p).powi(2))
            .sum()
    }

    /// Local energy of plane `j` under a candidate proxy.
    fn plane_energy(&self, j: usize, proxy: &PlaneProxy) -> f64 {
        let range = self.plane_ranges[j].clone();
        let mut e = 0.0;
        for (i, f) in self.frames.iter().enumerate() {
            for &t in self.visible_in_plane(i, &range) {
                if let Some(o) = self.observe_with(t as usize, proxy, &f.pose, &f.grid, &f.image) {
                    e += o.sq_norm();
                }
            }
        }
        e + self.lambda1 * self.plane_distances(j, proxy)
    }

    /// `E_c` as a sum of per-frame sums in frame order.
    pub fn energy_photo(&self) -> f64 {
        let per = par::map_range(self.frames.len(), |i| {
            let f = &self.frames[i];
            self.frame_photo(i, &f.pose, &f.grid)
        });
        per.iter().sum()
    }

    /// `E_p` as a sum of per-plane sums in plane order.
    pub fn energy_plane(&self) -> f64 {
        (0..self.proxies.len()).map(|j| self.plane_distances(j, &self.proxies[j])).sum()
    }

    pub fn energy_offset(&self) -> f64 {
        self.frames.iter().map(|f| f.grid.energy()).sum()
    }

    pub fn energies(&self, iteration: usize) -> EnergyRecord {
        let (e_c, e_p, e_s) = (self.energy_photo(), self.energy_plane(), self.energy_offset());
        EnergyRecord {
            iteration,
            e_c,
            e_p,
            e_s,
            e_tex: e_c + self.lambda1 * e_p + self.lambda2 * e_s,
        }
    }

    /// Each texel takes the mean of its in-image samples, accumulated in
    /// frame order. Texels without samples keep their color; returns how
    /// many those are.
    pub fn update_colors(&mut self) -> usize {
        let samples: Vec<Vec<Option<[f64; 3]>>> = par::map_range(self.frames.len(), |i| {
            let f = &self.frames[i];
            self.visibility[i]
                .iter()
                .map(|&t| {
                    let t = t as usize;
                    let q = self.proxies[self.texels[t].plane].project(&self.texels[t].p);
                    sample_color(&q, &f.pose, &f.grid, &f.image, &self.intrinsics)
                })
                .collect()
        });
        let n = self.texels.len();
        let mut sum = vec![[0.0f64; 3]; n];
        let mut count = vec![0u32; n];
        for (i, s) in samples.iter().enumerate() {
            for (&t, v) in self.visibility[i].iter().zip(s) {
                if let Some(v) = v {
                    let t = t as usize;
                    for c in 0..3 {
                        sum[t][c] += v[c];
                    }
                    count[t] += 1;
                }
            }
        }
        let mut stale = 0;
        for t in 0..n {
            if count[t] > 0 {
                let k = count[t] as f64;
                self.colors[t] = sum[t].map(|s| s / k);
            } else if self.observed[t] {
                stale += 1;
            }
        }
        stale
    }

    /// One Gauss-Newton pass per plane (in parallel); returns step norms.
    pub fn gn_update_planes(&mut self) -> Vec<f64> {
        let results = par::map_range(self.proxies.len(), |j| self.plane_step(j));
        let mut steps = Vec::with_capacity(results.len());
        for (j, (p, s)) in results.into_iter().enumerate() {
            self.proxies[j] = p;
            steps.push(s);
        }
        self.last_plane_steps = steps.clone();
        steps
    }

    fn plane_step(&self, j: usize) -> (PlaneProxy, f64) {
        let range = self.plane_ranges[j].clone();
        let mut proxy = self.proxies[j];
        let mut total = 0.0;
        if range.is_empty() {
            return (proxy, total);
        }
        let mut e0 = self.plane_energy(j, &proxy);
        for _ in 0..self.cfg.inner_iters.max(1) {
            let (n, w) = (proxy.normal, proxy.offset);
            let mut h = Matrix4::<f64>::zeros();
            let mut g = Vector4::<f64>::zeros();
            for (i, f) in self.frames.iter().enumerate() {
                for &t in self.visible_in_plane(i, &range) {
                    let t = t as usize;
                    let Some(o) = self.observe_with(t, &proxy, &f.pose, &f.grid, &f.image) else {
                        continue;
                    };
                    let jac = o.plane_jacobian(&self.texels[t].p, &n, w, &f.pose);
                    for c in 0..o.channels {
                        let jc = Vector4::from(jac[c]);
                        h += jc * jc.transpose();
                        g += jc * o.r[c];
                    }
                }
            }
            for t in range.clone() {
                let p = self.texels[t].p;
                let a = Vector4::new(p.x, p.y, p.z, 1.0);
                h += a * a.transpose() * self.lambda1;
                g += a * (self.lambda1 * (p.dot(&n) + w));
            }
            // gauge: no change along the current normal
            let mu = (h.trace() / 4.0).max(1e-12);
            let nn = n * n.transpose() * mu;
            for a in 0..3 {
                for b in 0..3 {
                    h[(a, b)] += nn[(a, b)];
                }
            }
            let Some(chol) = h.cholesky() else {
                warn!("plane {j}: singular normal equations, skipped");
                break;
            };
            let delta = -chol.solve(&g);
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..=MAX_HALVINGS {
                let nn = n + Vector3::new(delta[0], delta[1], delta[2]) * alpha;
                let ww = w + delta[3] * alpha;
                let s = nn.norm();
                if s > 0.0 && s.is_finite() {
                    let normal = nn / s;
                    let offset = ww / s;
                    let cand = PlaneProxy {
                        normal,
                        offset,
                        centroid: proxy.centroid - normal * (normal.dot(&proxy.centroid) + offset),
                    };
                    let e = self.plane_energy(j, &cand);
                    if e <= e0 {
                        proxy = cand;
                        e0 = e;
                        total += alpha * delta.norm();
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        debug!("plane {j}: step {total:.3e}, local energy {e0:.6e}");
        (proxy, total)
    }

    /// One joint Gauss-Newton pass over each frame's pose and grid (in
    /// parallel); returns step norms.
    pub fn gn_update_poses_and_grids(&mut self) -> Vec<f64> {
        let results = par::map_range(self.frames.len(), |i| self.frame_step(i));
        let mut steps = Vec::with_capacity(results.len());
        for (f, (pose, grid, s)) in self.frames.iter_mut().zip(results) {
            f.pose = pose;
            f.grid = grid;
            steps.push(s);
        }
        self.last_frame_steps = steps.clone();
        steps
    }

    fn frame_step(&self, i: usize) -> (Pose, CorrectionGrid, f64) {
        let f = &self.frames[i];
        let mut pose = f.pose;
        let mut grid = f.grid.clone();
        let mut total = 0.0;
        if self.visibility[i].len() < MIN_FRAME_TEXELS {
            warn!("frame {}: only {} visible texels, skipped", f.index, self.visibility[i].len());
            return (pose, grid, total);
        }
        let anchored = self.cfg.anchor_first_frame && i == 0;
        let np = if anchored { 0 } else { 6 };
        let n = np + grid.num_params();
        let mut e0 = self.frame_energy(i, &pose, &grid);
        for _ in 0..self.cfg.inner_iters.max(1) {
            let mut h = vec![0.0f64; n * n];
            let mut g = vec![0.0f64; n];
            let mut idx = [0usize; 14];
            let mut val = [[0.0f64; 14]; 3];
            for &t in &self.visibility[i] {
                let t = t as usize;
                let pr = &self.proxies[self.texels[t].plane];
                let Some(o) = self.observe_with(t, pr, &pose, &grid, &f.image) else {
                    continue;
                };
                let mut m = 0;
                if !anchored {
                    let jp = o.pose_jacobian();
                    for k in 0..6 {
                        idx[m] = k;
                        for c in 0..o.channels {
                            val[c][m] = jp[c][k];
                        }
                        m += 1;
                    }
                }
                for (k, d) in o.grid_jacobian() {
                    idx[m] = np + k;
                    for c in 0..o.channels {
                        val[c][m] = d[c];
                    }
                    m += 1;
                }
                for c in 0..o.channels {
                    let v = &val[c];
                    for a in 0..m {
                        g[idx[a]] += v[a] * o.r[c];
                        let row = idx[a] * n;
                        for b in a..m {
                            h[row + idx[b]] += v[a] * v[b];
                        }
                    }
                }
            }
            for k in 0..grid.num_params() {
                h[(np + k) * n + np + k] += self.lambda2;
                g[np + k] += self.lambda2 * grid.param(k);
            }
            let hm = DMatrix::from_fn(n, n, |r, c| if r <= c { h[r * n + c] } else { h[c * n + r] });
            let Some(chol) = hm.cholesky() else {
                warn!("frame {}: singular normal equations, skipped", f.index);
                break;
            };
            let delta = -chol.solve(&DVector::from_vec(g));
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..=MAX_HALVINGS {
                let mut cp = pose;
                if !anchored {
                    let d: [f64; 6] = std::array::from_fn(|k| alpha * delta[k]);
                    cp = pose.apply_delta(&d);
                }
                let mut cg = grid.clone();
                for k in 0..cg.num_params() {
                    *cg.param_mut(k) += alpha * delta[np + k];
                }
                let e = self.frame_energy(i, &cp, &cg);
                if e <= e0 {
                    pose = cp;
                    grid = cg;
                    e0 = e;
                    total += alpha * delta.norm();
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        debug!("frame {}: step {total:.3e}, local energy {e0:.6e}", f.index);
        (pose, grid, total)
    }

    /// Colors from the current visibility, then `λ₁ = E_c / E_p` and the
    /// iteration-0 trace record. `E_p` is floored at `1e-12` per texel so a
    /// texel set lying exactly on its planes still gives a finite weight.
    pub fn initialize(&mut self) -> Result<EnergyRecord> {
        self.update_colors();
        let e_c = self.energy_photo();
        let e_p = self.energy_plane();
        let floor = 1e-12 * self.texels.len().max(1) as f64;
        self.lambda1 = if e_c > 0.0 { e_c / e_p.max(floor) } else { 1.0 };
        let rec = self.energies(0);
        check_finite(&rec)?;
        info!(
            "joint: {} frames, {} texels ({} observed), lambda1 {:.6e}, E_tex {:.6e}",
            self.frames.len(),
            self.texels.len(),
            self.observed.iter().filter(|&&o| o).count(),
            self.lambda1,
            rec.e_tex
        );
        self.trace = vec![rec];
        Ok(rec)
    }

    /// Recomputes visibility from the current poses and planes, keeping it
    /// only if `E_tex` (after recoloring) does not increase.
    fn refresh_visibility(&mut self, current: f64) -> bool {
        let vis = compute_visibility(&self.frames, &self.proxies, &self.texels, &self.intrinsics, &self.cfg);
        if vis == self.visibility {
            return false;
        }
        let old_vis = std::mem::replace(&mut self.visibility, vis);
        let old_colors = self.colors.clone();
        let old_observed = self.observed.clone();
        self.observed.iter_mut().for_each(|o| *o = false);
        for v in &self.visibility {
            for &t in v {
                self.observed[t as usize] = true;
            }
        }
        self.update_colors();
        let e = self.energies(0).e_tex;
        if e <= current {
            debug!("visibility refreshed: E_tex {current:.6e} -> {e:.6e}");
            true
        } else {
            self.visibility = old_vis;
            self.colors = old_colors;
            self.observed = old_observed;
            false
        }
    }

    /// Alternates colors, planes, and poses with grids until `max_outer`
    /// iterations or a relative decrease below `tol`. The trace is
    /// non-increasing: an iteration that would raise `E_tex` is undone and
    /// ends the loop.
    pub fn optimize(&mut self) -> Result<&[EnergyRecord]> {
        if self.trace.is_empty() {
            self.initialize()?;
        }
        let mut prev = *self.trace.last().unwrap();
        let start = prev.iteration;
        for k in start + 1..=start + self.cfg.max_outer {
            let every = self.cfg.vis_refresh_every;
            let saved = (
                self.frames.iter().map(|f| (f.pose, f.grid.clone())).collect::<Vec<_>>(),
                self.proxies.clone(),
                self.colors.clone(),
                self.visibility.clone(),
                self.observed.clone(),
            );
            if every > 0 && k > 1 && (k - 1) % every == 0 {
                self.refresh_visibility(prev.e_tex);
            }
            self.update_colors();
            self.gn_update_planes();
            self.gn_update_poses_and_grids();
            let rec = self.energies(k);
            check_finite(&rec)?;
            if rec.e_tex > prev.e_tex {
                warn!("outer iteration {k} raised E_tex ({:.6e} > {:.6e}); undone", rec.e_tex, prev.e_tex);
                let (poses, proxies, colors, vis, observed) = saved;
                for (f, (p, g)) in self.frames.iter_mut().zip(poses) {
                    f.pose = p;
                    f.grid = g;
                }
                self.proxies = proxies;
                self.colors = colors;
                self.visibility = vis;
                self.observed = observed;
                break;
            }
            info!(
                "joint iteration {k}: E_c {:.6e} E_p {:.6e} E_s {:.6e} E_tex {:.6e}",
                rec.e_c, rec.e_p, rec.e_s, rec.e_tex
            );
            self.trace.push(rec);
            let rel = if prev.e_tex > 0.0 { (prev.e_tex - rec.e_tex) / prev.e_tex } else { 0.0 };
            prev = rec;
            if rel < self.cfg.tol {
                break;
            }
        }
        Ok(&self.trace)
    }

    /// Swaps in new frame images (e.g. color after a grayscale run) and
    /// recomputes texel colors with the final poses and grids.
    pub fn recolor(&mut self, images: Vec<Image>) -> Result<()> {
        if images.len() != self.frames.len() {
            return Err(Error::InvalidInput("one image per frame required".into()));
        }
        for (f, im) in self.frames.iter_mut().zip(images) {
            f.image = im;
        }
        self.update_colors();
        Ok(())
    }

    /// Texels with their optimized colors (a single channel is replicated).
    pub fn colored_texels(&self) -> Vec<TexelSample> {
        let gray = self.channels() == 1;
        self.texels
            .iter()
            .zip(&self.colors)
            .map(|(t, c)| {
                let mut t = *t;
                t.color = if gray { [c[0] as f32; 3] } else { c.map(|v| v as f32) };
                t
            })
            .collect()
    }
}

fn check_finite(rec: &EnergyRecord) -> Result<()> {
    for (term, v) in [("E_c", rec.e_c), ("E_p", rec.e_p), ("E_s", rec.e_s), ("E_tex", rec.e_tex)] {
        if !v.is_finite() {
            log::error!("non-finite {term} at iteration {}: {rec:?}", rec.iteration);
            return Err(Error::NonFiniteEnergy {
                term,
                iteration: rec.iteration,
            });
        }
    }
    Ok(())
}

/// Writes `iteration,E_c,E_p,E_s,E_tex` rows.
pub fn write_trace_csv(path: &Path, trace: &[EnergyRecord]) -> Result<()> {
    let mut out = String::from("iteration,E_c,E_p,E_s,E_tex\n");
    for r in trace {
        out.push_str(&format!("{},{:e},{:e},{:e},{:e}\n", r.iteration, r.e_c, r.e_p, r.e_s, r.e_tex));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
