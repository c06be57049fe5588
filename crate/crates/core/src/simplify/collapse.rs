//! Quadrics and a lazily-invalidated edge-collapse engine.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::ops::{Add, AddAssign};

use nalgebra::{Matrix3, Matrix4, SymmetricEigen, Vector3, Vector4};

use crate::mesh::Point3;

/// Symmetric 4×4 quadric stored as its upper triangle
/// `[aa, ab, ac, ad, bb, bc, bd, cc, cd, dd]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Quadric(pub [f64; 10]);

impl Quadric {
    pub fn zero() -> Self {
        Self([0.0; 10])
    }

    /// `w · ppᵀ` for the plane `p = (n, d)`.
    pub fn from_plane(n: &Vector3<f64>, d: f64, weight: f64) -> Self {
        let (a, b, c) = (n.x, n.y, n.z);
        Self([a * a, a * b, a * c, a * d, b * b, b * c, b * d, c * c, c * d, d * d].map(|x| x * weight))
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let q = &self.0;
        Matrix4::new(
            q[0], q[1], q[2], q[3], q[1], q[4], q[5], q[6], q[2], q[5], q[7], q[8], q[3], q[6], q[8], q[9],
        )
    }

    /// `[x 1] Q [x 1]ᵀ`.
    pub fn eval(&self, p: &Point3) -> f64 {
        let q = &self.0;
        let (x, y, z) = (p.x, p.y, p.z);
        q[0] * x * x
            + 2.0 * q[1] * x * y
            + 2.0 * q[2] * x * z
            + 2.0 * q[3] * x
            + q[4] * y * y
            + 2.0 * q[5] * y * z
            + 2.0 * q[6] * y
            + q[7] * z * z
            + 2.0 * q[8] * z
            + q[9]
    }

    /// Unique minimizer when the 3×3 block has condition number below 1e8.
    pub fn minimizer(&self) -> Option<Point3> {
        let q = &self.0;
        let a = Matrix3::new(q[0], q[1], q[2], q[1], q[4], q[5], q[2], q[5], q[7]);
        let eig = SymmetricEigen::new(a);
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if !(min > 0.0) || max / min >= 1e8 {
            return None;
        }
        let rhs = -Vector3::new(q[3], q[6], q[8]);
        // A⁻¹ = V Λ⁻¹ Vᵀ
        let inv = eig.eigenvectors * Matrix3::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l)) * eig.eigenvectors.transpose();
        Some(inv * rhs)
    }

    pub fn eval_h(&self, v: &Vector4<f64>) -> f64 {
        (v.transpose() * self.matrix() * v)[0]
    }
}

impl Add for Quadric {
    type Output = Quadric;
    fn add(mut self, rhs: Quadric) -> Quadric {
        self += rhs;
        self
    }
}

impl AddAssign for Quadric {
    fn add_assign(&mut self, rhs: Quadric) {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a += b;
        }
    }
}

impl std::ops::Sub for Quadric {
    type Output = Quadric;
    fn sub(mut self, rhs: Quadric) -> Quadric {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a -= b;
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Key(f64);
impl Eq for Key {}
impl PartialOrd for Key {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Key {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&o.0)
    }
}

/// cos 30°: a collapse may not tilt a face beyond 30° from its cluster
/// plane unless it already was.
const MIN_PLANE_COS: f64 = 0.866_025_403_784_438_6;

/// Which edges the engine may collapse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum EdgeFilter {
    /// Any edge not joining two locked vertices.
    Unlocked,
    /// Edges touching a cluster boundary or the mesh boundary.
    Boundary,
}

/// Mutable triangle soup with vertex-face incidence, supporting edge
/// collapses with topology and orientation checks.
pub(crate) struct Collapser {
    pub pos: Vec<Point3>,
    pub quad: Vec<Quadric>,
    pub faces: Vec<[usize; 3]>,
    pub face_alive: Vec<bool>,
    pub face_label: Vec<usize>,
    pub vf: Vec<Vec<usize>>,
    pub locked: Vec<bool>,
    /// Extra neighbors considered by the link condition (edges that exist
    /// outside this soup).
    pub extra: Vec<Vec<usize>>,
    pub vlabel: Vec<usize>,
    pub cluster_count: Vec<usize>,
    /// Plane normal of each face label; empty disables the tilt check.
    pub label_normals: Vec<Vector3<f64>>,
    pub alive_faces: usize,
    version: Vec<u32>,
    heap: BinaryHeap<Reverse<(Key, usize, usize, u32, u32)>>,
    filter: EdgeFilter,
}

pub(crate) struct Plan {
    pub keep: usize,
    pub remove: usize,
    pub pos: Point3,
    pub cost: f64,
}

impl Collapser {
    pub fn new(
        pos: Vec<Point3>,
        quad: Vec<Quadric>,
        faces: Vec<[usize; 3]>,
        face_label: Vec<usize>,
        num_clusters: usize,
        locked: Vec<bool>,
        vlabel: Vec<usize>,
        filter: EdgeFilter,
    ) -> Self {
        let n = pos.len();
        let mut vf = vec![Vec::new(); n];
        let mut cluster_count = vec![0; num_clusters];
        for (f, face) in faces.iter().enumerate() {
            for &v in face {
                vf[v].push(f);
            }
            cluster_count[face_label[f]] += 1;
        }
        Self {
            pos,
            quad,
            face_alive: vec![true; faces.len()],
            alive_faces: faces.len(),
            faces,
            face_label,
            vf,
            locked,
            extra: vec![Vec::new(); n],
            vlabel,
            cluster_count,
            label_normals: Vec::new(),
            version: vec![0; n],
            heap: BinaryHeap::new(),
            filter,
        }
    }

    fn neighbors(&self, v: usize, with_extra: bool) -> Vec<usize> {
        let mut out: Vec<usize> = self.vf[v]
            .iter()
            .flat_map(|&f| self.faces[f])
            .filter(|&u| u != v)
            .collect();
        if with_extra {
            out.extend_from_slice(&self.extra[v]);
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    fn edge_faces(&self, a: usize, b: usize) -> Vec<usize> {
        self.vf[a].iter().copied().filter(|&f| self.faces[f].contains(&b)).collect()
    }

    fn on_mesh_boundary(&self, v: usize) -> bool {
        self.neighbors(v, false).iter().any(|&u| self.edge_faces(v, u).len() == 1)
    }

    fn on_boundary(&self, v: usize) -> bool {
        let fs = &self.vf[v];
        fs.iter().any(|&f| self.face_label[f] != self.face_label[fs[0]]) || self.on_mesh_boundary(v)
    }

    fn eligible(&self, a: usize, b: usize) -> bool {
        if self.locked[a] && self.locked[b] {
            return false;
        }
        match self.filter {
            EdgeFilter::Unlocked => true,
            EdgeFilter::Boundary => self.on_boundary(a) || self.on_boundary(b),
        }
    }

    pub fn plan(&self, a: usize, b: usize) -> Option<Plan> {
        if self.locked[a] && self.locked[b] {
            return None;
        }
        let (keep, remove) = if self.locked[b] {
            (b, a)
        } else if self.locked[a] {
            (a, b)
        } else {
            (a.min(b), a.max(b))
        };
        let q = self.quad[a] + self.quad[b];
        let (pa, pb) = (self.pos[a], self.pos[b]);
        let mid = (pa + pb) * 0.5;
        let pos = if self.locked[keep] {
            self.pos[keep]
        } else {
            let reach = 2.0 * (pa - pb).norm();
            match q.minimizer() {
                Some(p) if (p - mid).norm() <= reach => p,
                _ => {
                    let mut best = (q.eval(&mid), mid);
                    for p in [pa, pb] {
                        let c = q.eval(&p);
                        if c < best.0 {
                            best = (c, p);
                        }
                    }
                    best.1
                }
            }
        };
        Some(Plan {
            keep,
            remove,
            pos,
            cost: q.eval(&pos).max(0.0),
        })
    }

    fn push_edge(&mut self, a: usize, b: usize) {
        if !self.eligible(a, b) {
            return;
        }
        if let Some(p) = self.plan(a, b) {
            let key = p.cost + 1e-12 * (self.pos[a] - self.pos[b]).norm_squared();
            let (x, y) = (a.min(b), a.max(b));
            self.heap
                .push(Reverse((Key(key), x, y, self.version[x], self.version[y])));
        }
    }

    pub fn seed_heap(&mut self) {
        for f in 0..self.faces.len() {
            if !self.face_alive[f] {
                continue;
            }
            let face = self.faces[f];
            for k in 0..3 {
                let (a, b) = (face[k], face[(k + 1) % 3]);
                // each interior edge is seen twice; push once from the face
                // where a < b appears in winding order, or from the single face
                let ef = self.edge_faces(a, b);
                if a < b || ef.len() == 1 {
                    self.push_edge(a, b);
                }
            }
        }
    }

    /// Topological and geometric validity of a planned collapse.
    fn valid(&self, p: &Plan) -> bool {
        let (a, b) = (p.keep, p.remove);
        let ef = self.edge_faces(a, b);
        if ef.is_empty() {
            return false;
        }
        // link condition
        let na = self.neighbors(a, true);
        let nb = self.neighbors(b, true);
        let common = na.iter().filter(|x| nb.binary_search(x).is_ok()).count();
        let mut opposite: Vec<usize> = ef
            .iter()
            .flat_map(|&f| self.faces[f])
            .filter(|&v| v != a && v != b)
            .collect();
        opposite.sort_unstable();
        opposite.dedup();
        if common != opposite.len() {
            return false;
        }
        // do not pinch the mesh boundary
        if ef.len() > 1 && self.on_mesh_boundary(a) && self.on_mesh_boundary(b) {
            return false;
        }
        // every cluster keeps a face
        let mut lost: Vec<usize> = ef.iter().map(|&f| self.face_label[f]).collect();
        lost.sort_unstable();
        for l in lost.chunk_by(|x, y| x == y) {
            if self.cluster_count[l[0]] <= l.len() {
                return false;
            }
        }
        // orientation and area of the surviving faces
        let mut new_faces: Vec<[usize; 3]> = Vec::new();
        for &v in &[a, b] {
            for &f in &self.vf[v] {
                let face = self.faces[f];
                if face.contains(&a) && face.contains(&b) {
                    continue;
                }
                let old = face.map(|u| self.pos[u]);
                let new = face.map(|u| if u == a || u == b { p.pos } else { self.pos[u] });
                let co = (old[1] - old[0]).cross(&(old[2] - old[0]));
                let cn = (new[1] - new[0]).cross(&(new[2] - new[0]));
                let scale = (new[1] - new[0])
                    .norm_squared()
                    .max((new[2] - new[0]).norm_squared())
                    .max((new[2] - new[1]).norm_squared());
                if co.dot(&cn) <= 0.0 || cn.norm() <= 1e-10 * scale {
                    return false;
                }
                if let Some(n) = self.label_normals.get(self.face_label[f]) {
                    let (cos_new, cos_old) = (cn.normalize().dot(n).abs(), co.normalize().dot(n).abs());
                    if cos_new < MIN_PLANE_COS && cos_new < cos_old {
                        return false;
                    }
                }
                if v == b {
                    let mut s = face.map(|u| if u == b { a } else { u });
                    s.sort_unstable();
                    new_faces.push(s);
                }
            }
        }
        // no duplicated triangles
        for &f in &self.vf[a] {
            let mut s = self.faces[f];
            s.sort_unstable();
            if new_faces.contains(&s) {
                return false;
            }
        }
        true
    }

    fn label_weight(&self, v: usize) -> usize {
        self.vf[v].iter().filter(|&&f| self.face_label[f] == self.vlabel[v]).count()
    }

    fn apply(&mut self, p: &Plan) {
        let (a, b) = (p.keep, p.remove);
        if self.label_weight(b) > self.label_weight(a) {
            self.vlabel[a] = self.vlabel[b];
        }
        let fb = std::mem::take(&mut self.vf[b]);
        for f in fb {
            if self.faces[f].contains(&a) {
                self.face_alive[f] = false;
                self.alive_faces -= 1;
                self.cluster_count[self.face_label[f]] -= 1;
                for u in self.faces[f] {
                    if u != b {
                        self.vf[u].retain(|&g| g != f);
                    }
                }
            } else {
                for u in self.faces[f].iter_mut() {
                    if *u == b {
                        *u = a;
                    }
                }
                self.vf[a].push(f);
            }
        }
        let extra_b = std::mem::take(&mut self.extra[b]);
        for u in extra_b {
            if u != a && !self.extra[a].contains(&u) {
                self.extra[a].push(u);
            }
        }
        let qb = self.quad[b];
        self.quad[a] += qb;
        self.pos[a] = p.pos;
        self.version[a] += 1;
        self.version[b] += 1;
    }

    /// Collapses edges cheapest-first until `stop` holds or no valid edge
    /// remains. Returns the number of collapses.
    pub fn run(&mut self, mut stop: impl FnMut(&Self) -> bool) -> usize {
        let mut count = 0;
        while !stop(self) {
            let Some(Reverse((_, x, y, vx, vy))) = self.heap.pop() else { break };
            if self.version[x] != vx || self.version[y] != vy || self.vf[x].is_empty() || self.vf[y].is_empty() {
                continue;
            }
            if !self.eligible(x, y) {
                continue;
            }
            let Some(plan) = self.plan(x, y) else { continue };
            if !self.valid(&plan) {
                continue;
            }
            self.apply(&plan);
            count += 1;
            let keep = plan.keep;
            for n in self.neighbors(keep, false) {
                self.push_edge(keep, n);
            }
        }
        count
    }
}
