//! Plane-consistent vertex refinement: minimize
//! `E_g + λ₃‖LX‖²_F` over vertex positions by one sparse SPD solve.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{graph_laplacian, IndexedMesh, Point3, SparseMatrix};
use crate::partition::PlaneProxy;
use crate::texel::TexelSample;

/// Normal equations `A V = B` with three right-hand sides.
#[derive(Debug, Clone)]
pub struct GeomSystem {
    pub a: SparseMatrix,
    pub rhs: Vec<[f64; 3]>,
    pub lambda3: f64,
    /// Texel rows touching each vertex.
    pub constrained: Vec<bool>,
}

impl GeomSystem {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
}

/// Accumulates one barycentric row per texel (target: the texel point
/// projected on its plane) plus `λ₃ LᵀL`.
pub fn assemble(mesh: &IndexedMesh, texels: &[TexelSample], proxies: &[PlaneProxy], lambda3: f64) -> Result<GeomSystem> {
    let n = mesh.num_vertices();
    // per-face sums of b bᵀ and b qᵀ, in texel order
    let mut bb = vec![[[0.0f64; 3]; 3]; mesh.num_faces()];
    let mut bq = vec![[[0.0f64; 3]; 3]; mesh.num_faces()];
    let mut touched = vec![false; mesh.num_faces()];
    for t in texels {
        let proxy = proxies
            .get(t.plane)
            .ok_or_else(|| Error::InvalidInput(format!("texel references plane {}", t.plane)))?;
        if t.face >= mesh.num_faces() {
            return Err(Error::InvalidInput(format!("texel references face {}", t.face)));
        }
        let q = proxy.project(&t.p);
        touched[t.face] = true;
        for i in 0..3 {
            for j in 0..3 {
                bb[t.face][i][j] += t.bary[i] * t.bary[j];
            }
            for c in 0..3 {
                bq[t.face][i][c] += t.bary[i] * q[c];
            }
        }
    }
    let lap = graph_laplacian(mesh)?;
    let mut trip: Vec<(usize, usize, f64)> = lap.gram().scaled(lambda3).triplets().collect();
    let mut rhs = vec![[0.0; 3]; n];
    let mut constrained = vec![false; n];
    for f in 0..mesh.num_faces() {
        if !touched[f] {
            continue;
        }
        let face = mesh.faces[f];
        for i in 0..3 {
            constrained[face[i]] = true;
            for j in 0..3 {
                trip.push((face[i], face[j], bb[f][i][j]));
            }
            for c in 0..3 {
                rhs[face[i]][c] += bq[f][i][c];
            }
        }
    }
    let a = SparseMatrix::from_triplets(n, n, &trip);
    // every connected component needs at least one texel row
    let (comp, ncomp) = mesh.vertex_components();
    let mut has_row = vec![false; ncomp];
    let mut size = vec![0usize; ncomp];
    for v in 0..n {
        size[comp[v]] += 1;
        has_row[comp[v]] |= constrained[v];
    }
    if let Some(c) = (0..ncomp).find(|&c| !has_row[c]) {
        let vertex = (0..n).find(|&v| comp[v] == c).unwrap();
        return Err(Error::UnconstrainedComponent {
            vertex,
            vertices: size[c],
        });
    }
    Ok(GeomSystem {
        a,
        rhs,
        lambda3,
        constrained,
    })
}

/// `(E_g, E_t)` at vertex positions `v`.
pub fn energy_vert(
    mesh: &IndexedMesh,
    v: &[Point3],
    texels: &[TexelSample],
    proxies: &[PlaneProxy],
) -> Result<(f64, f64)> {
    let mut eg = 0.0;
    for t in texels {
        let [a, b, c] = mesh.faces[t.face];
        let x = v[a] * t.bary[0] + v[b] * t.bary[1] + v[c] * t.bary[2];
        eg += (x - proxies[t.plane].project(&t.p)).norm_squared();
    }
    let lap = graph_laplacian(mesh)?;
    let mut et = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = v.iter().map(|p| p[c]).collect();
        et += lap.mul_vec(&x).iter().map(|r| r * r).sum::<f64>();
    }
    Ok((eg, et))
}

/// Bytes of the Cholesky factor's nonzeros.
fn factor_bytes(a: &SparseColMat<usize, f64>) -> Result<usize> {
    let sym = faer::sparse::linalg::cholesky::factorize_symbolic_cholesky(
        a.symbolic(),
        Side::Lower,
        Default::default(),
        Default::default(),
    )
    .map_err(|e| Error::Factorization(format!("symbolic analysis failed: {e:?}")))?;
    Ok(sym.len_val() * std::mem::size_of::<f64>())
}

/// Solves `A V = B`: sparse Cholesky, or Jacobi-preconditioned conjugate
/// gradients when the factor would exceed `budget_bytes`.
pub fn solve(system: &GeomSystem, budget_bytes: usize) -> Result<Vec<Point3>> {
    let n = system.n();
    let trip: Vec<Triplet<usize, usize, f64>> = system.a.triplets().map(|(r, c, v)| Triplet::new(r, c, v)).collect();
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip)
        .map_err(|e| Error::Factorization(format!("{e:?}")))?;
    let x = if factor_bytes(&a)? <= budget_bytes {
        let llt = a.sp_cholesky(Side::Lower).map_err(|e| {
            let min_diag = (0..n).map(|i| system.a.get(i, i)).fold(f64::INFINITY, f64::min);
            let free = system.constrained.iter().position(|c| !c);
            Error::Factorization(format!(
                "{e:?}; smallest diagonal {min_diag:e}; first vertex without texel rows: {free:?}"
            ))
        })?;
        let mut b = Mat::<f64>::from_fn(n, 3, |i, j| system.rhs[i][j]);
        llt.solve_in_place(b.as_mut());
        (0..n).map(|i| Point3::new(b[(i, 0)], b[(i, 1)], b[(i, 2)])).collect()
    } else {
        warn!("geometry factor exceeds memory budget; using conjugate gradients");
        conjugate_gradient(&system.a, &system.rhs)
    };
    if let Some(i) = x.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::Factorization(format!("non-finite solution at vertex {i}")));
    }
    let resid = residual_inf(&system.a, &x, &system.rhs);
    let bmax = system.rhs.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(resid < 1e-8 * (1.0 + bmax)) {
        return Err(Error::Factorization(format!("residual {resid:e} too large")));
    }
    Ok(x)
}

pub fn residual_inf(a: &SparseMatrix, x: &[Point3], b: &[[f64; 3]]) -> f64 {
    let mut worst = 0.0f64;
    for c in 0..3 {
        let xc: Vec<f64> = x.iter().map(|p| p[c]).collect();
        for (r, v) in a.mul_vec(&xc).iter().enumerate() {
            worst = worst.max((v - b[r][c]).abs());
        }
    }
    worst
}

fn conjugate_gradient(a: &SparseMatrix, b: &[[f64; 3]]) -> Vec<Point3> {
    let n = a.nrows();
    let diag: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    let mut out = vec![Point3::zeros(); n];
    for c in 0..3 {
        let rhs: Vec<f64> = b.iter().map(|r| r[c]).collect();
        let bnorm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut x = vec![0.0; n];
        let mut r = rhs.clone();
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        for _ in 0..10 * n.max(100) {
            let ap = a.mul_vec(&p);
            let pap = p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
            if !(rz > 0.0 && pap > 0.0) {
                break;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if r.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-14 * bnorm.max(1e-300) {
                break;
            }
            z = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        for i in 0..n {
            out[i][c] = x[i];
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeomReport {
    pub e_g_before: f64,
    pub e_t_before: f64,
    pub e_g_after: f64,
    pub e_t_after: f64,
    pub lambda3: f64,
}

impl GeomReport {
    pub fn e_vert_before(&self) -> f64 {
        self.e_g_before + self.lambda3 * self.e_t_before
    }
    pub fn e_vert_after(&self) -> f64 {
        self.e_g_after + self.lambda3 * self.e_t_after
    }
}

/// Moves every vertex to the minimizer of `E_vert`; connectivity is unchanged.
pub fn optimize_geometry(
    mesh: &IndexedMesh,
    texels: &[TexelSample],
    proxies: &[PlaneProxy],
    lambda3: f64,
    budget_bytes: usize,
) -> Result<(IndexedMesh, GeomReport)> {
    let system = assemble(mesh, texels, proxies, lambda3)?;
    let v = solve(&system, budget_bytes)?;
    let (e_g_before, e_t_before) = energy_vert(mesh, &mesh.vertices, texels, proxies)?;
    let (e_g_after, e_t_after) = energy_vert(mesh, &v, texels, proxies)?;
    let report = GeomReport {
        e_g_before,
        e_t_before,
        e_g_after,
        e_t_after,
        lambda3,
    };
    info!(
        "geometry: E_g {e_g_before:.6e} -> {e_g_after:.6e}, E_t {e_t_before:.6e} -> {e_t_after:.6e}"
    );
    let mut out = mesh.clone();
    out.vertices = v;
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::tests::grid;
    use nalgebra::{DMatrix, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn z0() -> PlaneProxy {
        PlaneProxy::from_point_normal(Point3::zeros(), Vector3::z())
    }

    fn random_texels(mesh: &IndexedMesh, n: usize, rng: &mut ChaCha8Rng) -> Vec<TexelSample> {
        (0..n)
            .map(|k| {
                let face = k % mesh.num_faces();
                let (a, b) = (rng.random::<f64>(), rng.random::<f64>());
                let (a, b) = if a + b > 1.0 { (1.0 - a, 1.0 - b) } else { (a, b) };
                let bary = [a, b, 1.0 - a - b];
                let [p0, p1, p2] = mesh.corners(face);
                TexelSample {
                    p: p0 * bary[0] + p1 * bary[1] + p2 * bary[2],
                    face,
                    bary,
                    plane: 0,
                    uv: [0, 0],
                    color: [0.0; 3],
                }
            })
            .collect()
    }

    fn dense_oracle(mesh: &IndexedMesh, texels: &[TexelSample], proxy: &PlaneProxy, l3: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = mesh.num_vertices();
        let nb = mesh.vertex_neighbors();
        let mut lap = DMatrix::zeros(n, n);
        for i in 0..n {
            lap[(i, i)] = 1.0;
            for &j in &nb[i] {
                lap[(i, j)] = -1.0 / nb[i].len() as f64;
            }
        }
        let mut rows = DMatrix::zeros(texels.len(), n);
        let mut tgt = DMatrix::zeros(texels.len(), 3);
        for (r, t) in texels.iter().enumerate() {
            for k in 0..3 {
                rows[(r, mesh.faces[t.face][k])] += t.bary[k];
            }
            let q = proxy.project(&t.p);
            for c in 0..3 {
                tgt[(r, c)] = q[c];
            }
        }
        let a = rows.transpose() * &rows + lap.transpose() * &lap * l3;
        let b = rows.transpose() * tgt;
        (a, b)
    }

    fn bumpy(nx: usize, sigma: f64, seed: u64) -> IndexedMesh {
        let mut m = grid(nx, nx, 1.0 / nx as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rand_distr::Normal::new(0.0, sigma).unwrap();
        use rand_distr::Distribution;
        for v in &mut m.vertices {
            v.z = d.sample(&mut rng);
        }
        m
    }

    #[test]
    fn assembly_matches_dense() {
        let m = bumpy(2, 0.01, 1); // 9 vertices
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let texels = random_texels(&m, 30, &mut rng);
        let sys = assemble(&m, &texels, &[z0()], 1.0).unwrap();
        let (a, b) = dense_oracle(&m, &texels, &z0(), 1.0);
        let sa = sys.a.to_dense();
        assert!((sa - &a).abs().max() < 1e-10);
        for i in 0..m.num_vertices() {
            for c in 0..3 {
                assert!((sys.rhs[i][c] - b[(i, c)]).abs() < 1e-10);
            }
        }
        assert!(sys.a.asymmetry() < 1e-12);
    }

    #[test]
    fn zero_texels_is_unconstrained() {
        let m = grid(2, 2, 0.5);
        assert!(matches!(assemble(&m, &[], &[z0()], 1.0), Err(Error::UnconstrainedComponent { .. })));
    }

    #[test]
    fn non_finite_texel_fails_numerically() {
        let m = bumpy(2, 0.01, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut texels = random_texels(&m, 30, &mut rng);
        texels[4].p.y = f64::NAN;
        let sys = assemble(&m, &texels, &[z0()], 1.0).unwrap();
        let err = solve(&sys, usize::MAX).unwrap_err();
        assert!(matches!(err, Error::Factorization(_)) && err.is_numeric());
    }

    #[test]
    fn centroid_texel_has_zero_residual() {
        let m = grid(1, 1, 1.0);
        let t = TexelSample {
            p: m.face_centroid(0),
            face: 0,
            bary: [1.0 / 3.0; 3],
            plane: 0,
            uv: [0, 0],
            color: [0.0; 3],
        };
        let (eg, _) = energy_vert(&m, &m.vertices, &[t], &[z0()]).unwrap();
        assert!(eg < 1e-30);
    }

    #[test]
    fn sparse_solve_matches_dense() {
        let m = bumpy(3, 0.01, 5); // 16 vertices
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let texels = random_texels(&m, 60, &mut rng);
        let sys = assemble(&m, &texels, &[z0()], 1.0).unwrap();
        let x = solve(&sys, usize::MAX).unwrap();
        let (a, b) = dense_oracle(&m, &texels, &z0(), 1.0);
        let dense = a.lu().solve(&b).unwrap();
        for i in 0..m.num_vertices() {
            for c in 0..3 {
                assert!((x[i][c] - dense[(i, c)]).abs() < 1e-8);
            }
        }
        let cg = solve(&sys, 0).unwrap();
        let worst = (0..m.num_vertices()).map(|i| (cg[i] - x[i]).norm()).fold(0.0, crate::nan_max);
        assert!(worst < 1e-8, "{worst:e}");
    }

    #[test]
    fn bumpy_plane_flattens() {
        let m = bumpy(20, 0.005, 9);
        let clusters = crate::partition::ClusterSet {
            face_labels: vec![0; m.num_faces()],
            proxies: vec![z0()],
        };
        let atlas = crate::texel::build_atlas(&m, &clusters, 0.0025).unwrap();
        let (out, rep) = optimize_geometry(&m, &atlas.texels, &[z0()], 1.0, usize::MAX).unwrap();
        let rms = |v: &[Point3]| (v.iter().map(|p| p.z * p.z).sum::<f64>() / v.len() as f64).sqrt();
        assert!(rms(&out.vertices) < 0.25 * rms(&m.vertices));
        assert!(rep.e_vert_after() <= rep.e_vert_before());
        let nb = m.vertex_neighbors();
        for (v, p) in out.vertices.iter().enumerate() {
            if nb[v].len() == 6 {
                assert!(p.z.abs() < 1e-3);
            }
        }
        assert_eq!(out.faces, m.faces);
    }

    #[test]
    fn second_solve_is_a_fixed_point() {
        let m = bumpy(12, 0.005, 4);
        let clusters = crate::partition::ClusterSet {
            face_labels: vec![0; m.num_faces()],
            proxies: vec![z0()],
        };
        let atlas = crate::texel::build_atlas(&m, &clusters, 0.005).unwrap();
        let (once, _) = optimize_geometry(&m, &atlas.texels, &[z0()], 1.0, usize::MAX).unwrap();
        let (twice, rep) = optimize_geometry(&once, &atlas.texels, &[z0()], 1.0, usize::MAX).unwrap();
        for (a, b) in once.vertices.iter().zip(&twice.vertices) {
            assert!((a - b).norm() < 1e-9);
        }
        assert!((rep.e_vert_after() - rep.e_vert_before()).abs() <= 1e-12 * rep.e_vert_before().max(1.0));
    }

    #[test]
    fn cube_corners_stay() {
        let m = crate::synth::tessellated_box(Point3::zeros(), Point3::new(1.0, 1.0, 1.0), 4, true);
        let cfg = crate::config::PipelineConfig::default();
        let clusters = crate::partition::partition_planes(&m, &cfg).unwrap();
        assert_eq!(clusters.num_clusters(), 6);
        let atlas = crate::texel::build_atlas(&m, &clusters, 0.0025).unwrap();
        let corner_shift = |lambda3: f64| {
            let (out, _) = optimize_geometry(&m, &atlas.texels, &clusters.proxies, lambda3, usize::MAX).unwrap();
            out.vertices
                .iter()
                .zip(&m.vertices)
                .filter(|(_, b)| (0..3).all(|k| b[k] == 0.0 || b[k] == 1.0))
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, crate::nan_max)
        };
        // the Laplacian pulls corners inward by a few texel-weighted units
        let s1 = corner_shift(1.0);
        assert!(s1 < 1e-4, "{s1:e}");
        let s0 = corner_shift(1e-6);
        assert!(s0 < 1e-9, "{s0:e}");
    }
}
