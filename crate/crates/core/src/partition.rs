//! Planar partition of a dense mesh into clusters with PCA plane proxies,
//! followed by greedy merging of adjacent near-coplanar clusters.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use log::{debug, info};
use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::mesh::{IndexedMesh, Point3};
use crate::par;

/// Plane `{x : n·x + w = 0}` with the centroid of the points it was fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneProxy {
    pub normal: Vector3<f64>,
    pub offset: f64,
    pub centroid: Point3,
}

impl PlaneProxy {
    /// Plane through `point` with the given (normalized here) normal.
    pub fn from_point_normal(point: Point3, normal: Vector3<f64>) -> Self {
        let n = normal.normalize();
        Self {
            normal: n,
            offset: -n.dot(&point),
            centroid: point,
        }
    }

    pub fn signed_distance(&self, p: &Point3) -> f64 {
        self.normal.dot(p) + self.offset
    }

    /// Orthogonal projection `q = p - (pᵀn + w) n`.
    pub fn project(&self, p: &Point3) -> Point3 {
        p - self.normal * self.signed_distance(p)
    }
}

/// Result of a PCA plane fit.
#[derive(Debug, Clone, Copy)]
pub struct PlaneFit {
    pub proxy: PlaneProxy,
    /// Covariance eigenvalues, ascending (m²).
    pub eigenvalues: [f64; 3],
}

/// Fits a plane by PCA: centroid plus the eigenvector of the smallest
/// covariance eigenvalue. The normal is flipped to agree with
/// `orientation` when given (typically the summed face area vectors).
pub fn fit_proxy(points: &[Point3], orientation: Option<Vector3<f64>>) -> Result<PlaneProxy> {
    fit_plane(points, orientation).map(|f| f.proxy)
}

pub fn fit_plane(points: &[Point3], orientation: Option<Vector3<f64>>) -> Result<PlaneFit> {
    if points.len() < 3 {
        return Err(Error::DegeneratePoints(format!("{} points, need 3", points.len())));
    }
    let c = points.iter().sum::<Point3>() / points.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    cov /= points.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let ev = [
        eig.eigenvalues[order[0]].max(0.0),
        eig.eigenvalues[order[1]].max(0.0),
        eig.eigenvalues[order[2]].max(0.0),
    ];
    if ev[2] <= 0.0 || ev[1] <= 1e-12 * ev[2] {
        return Err(Error::DegeneratePoints("points are collinear or coincident".into()));
    }
    let mut n: Vector3<f64> = eig.eigenvectors.column(order[0]).normalize();
    if let Some(o) = orientation {
        if o.dot(&n) < 0.0 {
            n = -n;
        }
    }
    Ok(PlaneFit {
        proxy: PlaneProxy {
            normal: n,
            offset: -n.dot(&c),
            centroid: c,
        },
        eigenvalues: ev,
    })
}

/// Mean of `|n_j·v + w_j|` over the points of cluster i.
pub fn avg_distance(points: &[Point3], proxy: &PlaneProxy) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    points.iter().map(|p| proxy.signed_distance(p).abs()).sum::<f64>() / points.len() as f64
}

/// Angle between two vectors in degrees, accurate near 0 and 180.
pub fn angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b)).to_degrees()
}

/// The three merge conditions on a pair of adjacent clusters.
pub fn can_merge(
    points_i: &[Point3],
    proxy_i: &PlaneProxy,
    points_j: &[Point3],
    proxy_j: &PlaneProxy,
    cfg: &PipelineConfig,
) -> bool {
    cheap_merge_test(proxy_i, proxy_j, cfg).is_some()
        && avg_distance(points_i, proxy_j) < cfg.eps_distance
        && avg_distance(points_j, proxy_i) < cfg.eps_distance
}

/// Normal-angle and centroid-ray conditions; returns the normal angle when
/// both hold.
fn cheap_merge_test(a: &PlaneProxy, b: &PlaneProxy, cfg: &PipelineConfig) -> Option<f64> {
    let theta = angle_deg(&a.normal, &b.normal);
    if !(theta < cfg.eps_normal_deg) {
        return None;
    }
    let r = a.centroid - b.centroid;
    let len = r.norm();
    if len > 0.0 {
        let ci = (r.dot(&a.normal) / len).abs();
        let cj = (r.dot(&b.normal) / len).abs();
        if !(ci < cfg.eps_cos && cj < cfg.eps_cos) {
            return None;
        }
    }
    Some(theta)
}

/// Per-face cluster labels and one proxy per cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub face_labels: Vec<usize>,
    pub proxies: Vec<PlaneProxy>,
}

impl ClusterSet {
    pub fn num_clusters(&self) -> usize {
        self.proxies.len()
    }

    pub fn cluster_faces(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.proxies.len()];
        for (f, &l) in self.face_labels.iter().enumerate() {
            out[l].push(f);
        }
        out
    }

    /// Distinct vertices of each cluster's faces, sorted.
    pub fn cluster_vertices(&self, mesh: &IndexedMesh) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.proxies.len()];
        for (f, &l) in self.face_labels.iter().enumerate() {
            out[l].extend_from_slice(&mesh.faces[f]);
        }
        for v in &mut out {
            v.sort_unstable();
            v.dedup();
        }
        out
    }

    /// Clusters sharing at least one mesh edge.
    pub fn adjacency(&self, mesh: &IndexedMesh) -> Vec<BTreeSet<usize>> {
        let mut adj = vec![BTreeSet::new(); self.proxies.len()];
        for e in mesh.edges() {
            for &f in &e.faces {
                for &g in &e.faces {
                    let (a, b) = (self.face_labels[f], self.face_labels[g]);
                    if a != b {
                        adj[a].insert(b);
                    }
                }
            }
        }
        adj
    }

    /// Majority label of the faces around each vertex (ties to the smaller
    /// label). Vertices without faces get `usize::MAX`.
    pub fn vertex_labels(&self, mesh: &IndexedMesh) -> Vec<usize> {
        let mut counts: Vec<Vec<(usize, usize)>> = vec![Vec::new(); mesh.num_vertices()];
        for (f, face) in mesh.faces.iter().enumerate() {
            let l = self.face_labels[f];
            for &v in face {
                match counts[v].iter_mut().find(|(k, _)| *k == l) {
                    Some(e) => e.1 += 1,
                    None => counts[v].push((l, 1)),
                }
            }
        }
        counts
            .iter()
            .map(|c| {
                c.iter()
                    .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                    .map(|e| e.0)
                    .unwrap_or(usize::MAX)
            })
            .collect()
    }

    /// Refits every proxy to its cluster's vertices.
    pub fn refit(&mut self, mesh: &IndexedMesh) -> Result<()> {
        let faces = self.cluster_faces();
        let fits = par::map_slice(&faces, |fs| fit_cluster(mesh, fs));
        for (k, fit) in fits.into_iter().enumerate() {
            self.proxies[k] = fit?.proxy;
        }
        Ok(())
    }

    /// Renumbers clusters by their smallest face index, dropping empty ones.
    pub fn canonicalize(&mut self) {
        let mut map = vec![usize::MAX; self.proxies.len()];
        let mut proxies = Vec::new();
        for l in self.face_labels.iter_mut() {
            if map[*l] == usize::MAX {
                map[*l] = proxies.len();
                proxies.push(self.proxies[*l]);
            }
            *l = map[*l];
        }
        self.proxies = proxies;
    }

    /// Deterministic debug color per face, keyed by cluster id.
    pub fn face_colors(&self) -> Vec<[u8; 3]> {
        self.face_labels.iter().map(|&l| cluster_color(l)).collect()
    }
}

/// Golden-ratio hue walk; stable for a given cluster id.
pub fn cluster_color(id: usize) -> [u8; 3] {
    let h = (id as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let (s, v) = (0.65, 0.95);
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let (r, g, b) = match i as u32 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8]
}

fn fit_cluster(mesh: &IndexedMesh, faces: &[usize]) -> Result<PlaneFit> {
    let mut vs: Vec<usize> = faces.iter().flat_map(|&f| mesh.faces[f]).collect();
    vs.sort_unstable();
    vs.dedup();
    let pts: Vec<Point3> = vs.iter().map(|&v| mesh.vertices[v]).collect();
    let orient: Vector3<f64> = faces.iter().map(|&f| mesh.face_cross(f)).sum();
    match fit_plane(&pts, Some(orient)) {
        Ok(f) => Ok(f),
        // a single sliver or a strip of collinear points: use the face plane
        Err(_) => {
            let n = if orient.norm() > 0.0 { orient.normalize() } else { Vector3::z() };
            let c = pts.iter().sum::<Point3>() / pts.len().max(1) as f64;
            Ok(PlaneFit {
                proxy: PlaneProxy::from_point_normal(c, n),
                eigenvalues: [0.0; 3],
            })
        }
    }
}

/// L2 integral of the squared plane distance over a face, plus the
/// compactness term.
fn face_energy(mesh: &IndexedMesh, f: usize, proxy: &PlaneProxy, alpha: f64) -> f64 {
    let [a, b, c] = mesh.corners(f);
    let (da, db, dc) = (
        proxy.signed_distance(&a),
        proxy.signed_distance(&b),
        proxy.signed_distance(&c),
    );
    let area = mesh.face_area(f);
    let g = (a + b + c) / 3.0;
    area / 6.0 * (da * da + db * db + dc * dc + da * db + db * dc + dc * da)
        + alpha * area * (g - proxy.centroid).norm_squared()
}

/// Grows all clusters at once from their seed faces, always assigning the
/// cheapest (face, cluster) pair next.
fn flood(
    mesh: &IndexedMesh,
    adj: &[Vec<usize>],
    seeds: &[usize],
    proxies: &[PlaneProxy],
    alpha: f64,
) -> Vec<usize> {
    let mut label = vec![usize::MAX; mesh.num_faces()];
    let mut heap = BinaryHeap::new();
    for (k, &s) in seeds.iter().enumerate() {
        label[s] = k;
    }
    for (k, &s) in seeds.iter().enumerate() {
        for &g in &adj[s] {
            if label[g] == usize::MAX {
                let e = face_energy(mesh, g, &proxies[k], alpha);
                heap.push(Reverse((OrdF64(e), g, k)));
            }
        }
    }
    while let Some(Reverse((_, f, k))) = heap.pop() {
        if label[f] != usize::MAX {
            continue;
        }
        label[f] = k;
        for &g in &adj[f] {
            if label[g] == usize::MAX {
                let e = face_energy(mesh, g, &proxies[k], alpha);
                heap.push(Reverse((OrdF64(e), g, k)));
            }
        }
    }
    label
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);
impl Eq for OrdF64 {}
impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

fn group_by_label(labels: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); k];
    for (f, &l) in labels.iter().enumerate() {
        out[l].push(f);
    }
    out
}

/// Variational partition into near-planar connected clusters, without the
/// merge step.
///
/// Each round runs Lloyd iterations (flood from seeds, reseed at the
/// best-fitting face, refit) and then splits every cluster whose smallest
/// covariance eigenvalue exceeds `cfg.split_eigen_threshold` by seeding a new
/// cluster at its worst-fitting face.
pub fn partition_initial(mesh: &IndexedMesh, cfg: &PipelineConfig) -> Result<ClusterSet> {
    if mesh.faces.is_empty() {
        return Err(Error::InvalidMesh("mesh has no faces".into()));
    }
    let adj = mesh.face_adjacency();
    let alpha = cfg.alpha;

    // one seed per connected component of the face graph
    let mut comp = vec![usize::MAX; mesh.num_faces()];
    let mut seeds = Vec::new();
    for start in 0..mesh.num_faces() {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = seeds.len();
        seeds.push(start);
        comp[start] = id;
        let mut stack = vec![start];
        while let Some(f) = stack.pop() {
            for &g in &adj[f] {
                if comp[g] == usize::MAX {
                    comp[g] = id;
                    stack.push(g);
                }
            }
        }
    }
    let mut labels = comp;
    let mut fits: Vec<PlaneFit> = {
        let groups = group_by_label(&labels, seeds.len());
        par::map_slice(&groups, |g| fit_cluster(mesh, g)).into_iter().collect::<Result<_>>()?
    };

    let mut round = 0;
    loop {
        round += 1;
        for _ in 0..cfg.partition_lloyd_iters.max(1) {
            let groups = group_by_label(&labels, seeds.len());
            let new_seeds: Vec<usize> = groups
                .iter()
                .zip(&fits)
                .map(|(g, fit)| {
                    *g.iter()
                        .min_by(|&&a, &&b| {
                            face_energy(mesh, a, &fit.proxy, alpha)
                                .total_cmp(&face_energy(mesh, b, &fit.proxy, alpha))
                                .then(a.cmp(&b))
                        })
                        .expect("clusters are never empty")
                })
                .collect();
            let proxies: Vec<PlaneProxy> = fits.iter().map(|f| f.proxy).collect();
            let new_labels = flood(mesh, &adj, &new_seeds, &proxies, alpha);
            let groups = group_by_label(&new_labels, new_seeds.len());
            fits = par::map_slice(&groups, |g| fit_cluster(mesh, g))
                .into_iter()
                .collect::<Result<_>>()?;
            let stable = new_labels == labels;
            labels = new_labels;
            seeds = new_seeds;
            if stable {
                break;
            }
        }

        let mut bad: Vec<(f64, usize)> = fits
            .iter()
            .enumerate()
            .filter(|(_, f)| f.eigenvalues[0] > cfg.split_eigen_threshold)
            .map(|(k, f)| (f.eigenvalues[0], k))
            .collect();
        debug!(
            "partition round {round}: {} clusters, {} above flatness threshold",
            seeds.len(),
            bad.len()
        );
        if bad.is_empty() || seeds.len() >= cfg.max_clusters {
            break;
        }
        bad.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        bad.truncate(cfg.max_clusters - seeds.len());
        let groups = group_by_label(&labels, seeds.len());
        let mut proxies: Vec<PlaneProxy> = fits.iter().map(|f| f.proxy).collect();
        for &(_, k) in &bad {
            let worst = *groups[k]
                .iter()
                .max_by(|&&a, &&b| {
                    face_energy(mesh, a, &proxies[k], alpha)
                        .total_cmp(&face_energy(mesh, b, &proxies[k], alpha))
                        .then(b.cmp(&a))
                })
                .unwrap();
            seeds.push(worst);
            let n = mesh.face_normal(worst);
            let n = if n.norm() > 0.0 { n } else { proxies[k].normal };
            proxies.push(PlaneProxy::from_point_normal(mesh.face_centroid(worst), n));
        }
        labels = flood(mesh, &adj, &seeds, &proxies, alpha);
        let groups = group_by_label(&labels, seeds.len());
        fits = par::map_slice(&groups, |g| fit_cluster(mesh, g))
            .into_iter()
            .collect::<Result<_>>()?;
    }

    let mut set = ClusterSet {
        face_labels: labels,
        proxies: fits.iter().map(|f| f.proxy).collect(),
    };
    set.canonicalize();
    Ok(set)
}

/// Full partition: variational clustering followed by plane merging.
pub fn partition_planes(mesh: &IndexedMesh, cfg: &PipelineConfig) -> Result<ClusterSet> {
    let initial = partition_initial(mesh, cfg)?;
    let before = initial.num_clusters();
    let merged = merge_planes(mesh, initial, cfg)?;
    info!(
        "partition: {} faces -> {before} clusters, {} after merging",
        mesh.num_faces(),
        merged.num_clusters()
    );
    Ok(merged)
}

/// Greedy best-first merging of adjacent clusters, smallest normal angle
/// first, until no adjacent pair passes [`can_merge`]. Proxies are refit
/// after every merge.
pub fn merge_planes(mesh: &IndexedMesh, clusters: ClusterSet, cfg: &PipelineConfig) -> Result<ClusterSet> {
    let mut set = clusters;
    let k = set.num_clusters();
    let mut adj = set.adjacency(mesh);
    let mut verts = set.cluster_vertices(mesh);
    let mut faces = set.cluster_faces();
    let mut alive = vec![true; k];
    let mut version = vec![0usize; k];
    let mut dist_cache: HashMap<(usize, usize), (usize, usize, bool)> = HashMap::new();
    let points = |vs: &[usize]| -> Vec<Point3> { vs.iter().map(|&v| mesh.vertices[v]).collect() };
    let mut pts: Vec<Vec<Point3>> = verts.iter().map(|v| points(v)).collect();

    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..k {
            if !alive[i] {
                continue;
            }
            for &j in adj[i].range(i + 1..) {
                let Some(theta) = cheap_merge_test(&set.proxies[i], &set.proxies[j], cfg) else {
                    continue;
                };
                if let Some((t, bi, bj)) = best {
                    if (theta, i, j) >= (t, bi, bj) {
                        continue;
                    }
                }
                let ok = match dist_cache.get(&(i, j)) {
                    Some(&(vi, vj, ok)) if vi == version[i] && vj == version[j] => ok,
                    _ => {
                        let ok = avg_distance(&pts[i], &set.proxies[j]) < cfg.eps_distance
                            && avg_distance(&pts[j], &set.proxies[i]) < cfg.eps_distance;
                        dist_cache.insert((i, j), (version[i], version[j], ok));
                        ok
                    }
                };
                if ok {
                    best = Some((theta, i, j));
                }
            }
        }
        let Some((theta, i, j)) = best else { break };
        debug!("merge clusters {i} and {j} (normal angle {theta:.3} deg)");

        // fold j into i
        alive[j] = false;
        version[i] += 1;
        let fj = std::mem::take(&mut faces[j]);
        for &f in &fj {
            set.face_labels[f] = i;
        }
        faces[i].extend(fj);
        faces[i].sort_unstable();
        let vj = std::mem::take(&mut verts[j]);
        let mut merged_v = std::mem::take(&mut verts[i]);
        merged_v.extend(vj);
        merged_v.sort_unstable();
        merged_v.dedup();
        pts[i] = points(&merged_v);
        pts[j].clear();
        verts[i] = merged_v;
        set.proxies[i] = fit_cluster(mesh, &faces[i])?.proxy;

        let nj = std::mem::take(&mut adj[j]);
        for &m in &nj {
            adj[m].remove(&j);
            if m != i {
                adj[m].insert(i);
                adj[i].insert(m);
            }
        }
        adj[i].remove(&i);
        adj[i].remove(&j);
    }
    set.canonicalize();
    Ok(set)
}
