//! Indexed triangle meshes shared by every pipeline stage.

mod io;
mod laplacian;

pub use io::{load_mesh, save_ply, save_textured_mesh, LoadedMesh, PlyFormat, TexturedMeshFiles};
pub use laplacian::{graph_laplacian, SparseMatrix};

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Point3 = Vector3<f64>;

/// Vertices in meters plus triangle index triples.
///
/// Faces always reference valid vertices and never repeat an index; both
/// constructors enforce this.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedMesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
    /// Optional per-vertex cluster id.
    pub vertex_labels: Option<Vec<usize>>,
}

impl IndexedMesh {
    /// Builds a mesh, rejecting out-of-range or degenerate faces.
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let (mesh, dropped) = Self::from_raw(vertices, faces)?;
        if dropped > 0 {
            return Err(Error::InvalidMesh(format!("{dropped} degenerate faces")));
        }
        Ok(mesh)
    }

    /// Builds a mesh, dropping faces with repeated indices. Returns the
    /// number of dropped faces.
    pub fn from_raw(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<(Self, usize)> {
        let n = vertices.len();
        if let Some(v) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh(format!("vertex {v} has non-finite coordinates")));
        }
        let mut kept = Vec::with_capacity(faces.len());
        let mut dropped = 0;
        for (fi, f) in faces.into_iter().enumerate() {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} references vertex out of range ({:?}, {n} vertices)",
                    f
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                dropped += 1;
            } else {
                kept.push(f);
            }
        }
        Ok((
            Self {
                vertices,
                faces: kept,
                vertex_labels: None,
            },
            dropped,
        ))
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn corners(&self, f: usize) -> [Point3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Cross product of two edges; half of it is the area vector.
    pub fn face_cross(&self, f: usize) -> Point3 {
        let [a, b, c] = self.corners(f);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    /// Unit normal, or zero for a zero-area face.
    pub fn face_normal(&self, f: usize) -> Point3 {
        let c = self.face_cross(f);
        let n = c.norm();
        if n > 0.0 {
            c / n
        } else {
            Point3::zeros()
        }
    }

    pub fn face_centroid(&self, f: usize) -> Point3 {
        let [a, b, c] = self.corners(f);
        (a + b + c) / 3.0
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Sorted, deduplicated one-ring of every vertex.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.vertices.len()];
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                nb[a].push(b);
                nb[b].push(a);
            }
        }
        for l in &mut nb {
            l.sort_unstable();
            l.dedup();
        }
        nb
    }

    pub fn vertex_faces(&self) -> Vec<Vec<usize>> {
        let mut vf = vec![Vec::new(); self.vertices.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            for &v in f {
                vf[v].push(fi);
            }
        }
        vf
    }

    /// Every undirected edge with its incident faces, sorted by edge key.
    pub fn edges(&self) -> Vec<Edge> {
        let mut half: Vec<(usize, usize, usize)> = Vec::with_capacity(self.faces.len() * 3);
        for (fi, f) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                half.push((a.min(b), a.max(b), fi));
            }
        }
        half.sort_unstable();
        let mut out: Vec<Edge> = Vec::with_capacity(half.len() / 2 + 1);
        for (a, b, f) in half {
            match out.last_mut() {
                Some(e) if e.v == [a, b] => e.faces.push(f),
                _ => out.push(Edge {
                    v: [a, b],
                    faces: vec![f],
                }),
            }
        }
        out
    }

    /// Faces sharing an edge with each face, sorted.
    pub fn face_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.faces.len()];
        for e in self.edges() {
            for (i, &f) in e.faces.iter().enumerate() {
                for &g in &e.faces[i + 1..] {
                    adj[f].push(g);
                    adj[g].push(f);
                }
            }
        }
        for l in &mut adj {
            l.sort_unstable();
            l.dedup();
        }
        adj
    }

    /// Connected component id of every vertex (isolated vertices get their
    /// own component) and the component count.
    pub fn vertex_components(&self) -> (Vec<usize>, usize) {
        let n = self.vertices.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for f in &self.faces {
            for k in 1..3 {
                let (ra, rb) = (find(&mut parent, f[0]), find(&mut parent, f[k]));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let mut id = vec![usize::MAX; n];
        let mut comp = vec![0; n];
        let mut count = 0;
        for v in 0..n {
            let r = find(&mut parent, v);
            if id[r] == usize::MAX {
                id[r] = count;
                count += 1;
            }
            comp[v] = id[r];
        }
        (comp, count)
    }

    /// Removes vertices not referenced by any face. Returns the old-to-new map.
    pub fn compact(&mut self) -> Vec<Option<usize>> {
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &v in f {
                used[v] = true;
            }
        }
        let mut map = vec![None; self.vertices.len()];
        let mut verts = Vec::new();
        let mut labels = Vec::new();
        for (v, &u) in used.iter().enumerate() {
            if u {
                map[v] = Some(verts.len());
                verts.push(self.vertices[v]);
                if let Some(l) = &self.vertex_labels {
                    labels.push(l[v]);
                }
            }
        }
        for f in &mut self.faces {
            for v in f.iter_mut() {
                *v = map[*v].expect("referenced vertex");
            }
        }
        self.vertices = verts;
        if self.vertex_labels.is_some() {
            self.vertex_labels = Some(labels);
        }
        map
    }
}

/// An undirected edge `v[0] < v[1]` and the faces containing it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub v: [usize; 2],
    pub faces: Vec<usize>,
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub fn grid(nx: usize, ny: usize, step: f64) -> IndexedMesh {
        let mut v = Vec::new();
        for j in 0..=ny {
            for i in 0..=nx {
                v.push(Point3::new(i as f64 * step, j as f64 * step, 0.0));
            }
        }
        let idx = |i: usize, j: usize| j * (nx + 1) + i;
        let mut f = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                f.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
                f.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
            }
        }
        IndexedMesh::new(v, f).unwrap()
    }

    #[test]
    fn drops_degenerate_faces() {
        let v = vec![Point3::zeros(), Point3::x(), Point3::y()];
        let (m, dropped) = IndexedMesh::from_raw(v.clone(), vec![[0, 1, 2], [0, 0, 1]]).unwrap();
        assert_eq!((m.num_faces(), dropped), (1, 1));
        assert!(IndexedMesh::new(v.clone(), vec![[0, 0, 1]]).is_err());
        assert!(IndexedMesh::from_raw(v, vec![[0, 1, 3]]).is_err());
    }

    #[test]
    fn grid_topology() {
        let m = grid(3, 2, 1.0);
        assert_eq!(m.num_faces(), 12);
        let edges = m.edges();
        let boundary = edges.iter().filter(|e| e.faces.len() == 1).count();
        assert_eq!(boundary, 10);
        assert_eq!(edges.len(), 3 * 3 + 4 * 2 + 6);
        assert!((m.total_area() - 6.0).abs() < 1e-12);
        let (_, ncomp) = m.vertex_components();
        assert_eq!(ncomp, 1);
    }

    fn random_mesh() -> impl Strategy<Value = IndexedMesh> {
        (3usize..12).prop_flat_map(|n| {
            (
                proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), n),
                proptest::collection::vec((0..n, 0..n, 0..n), 1..20),
            )
                .prop_map(|(v, f)| {
                    let v = v.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect();
                    let f = f.into_iter().map(|(a, b, c)| [a, b, c]).collect();
                    IndexedMesh::from_raw(v, f).unwrap().0
                })
        })
    }

    proptest! {
        #[test]
        fn adjacency_is_symmetric(m in random_mesh()) {
            let nb = m.vertex_neighbors();
            for (i, l) in nb.iter().enumerate() {
                prop_assert!(!l.contains(&i));
                for &j in l {
                    prop_assert!(nb[j].binary_search(&i).is_ok());
                }
            }
            let fa = m.face_adjacency();
            for (f, l) in fa.iter().enumerate() {
                for &g in l {
                    prop_assert!(fa[g].binary_search(&f).is_ok());
                }
            }
        }
    }
}
