use nalgebra::DMatrix;

use super::IndexedMesh;
use crate::error::{Error, Result};

/// Compressed sparse row matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed in
    /// input order, so the result is deterministic for a fixed triplet order.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut slots = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0f64; triplets.len()];
        for &(r, c, v) in triplets {
            let s = slots[r];
            cols[s] = c;
            vals[s] = v;
            slots[r] += 1;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for r in 0..nrows {
            order.clear();
            order.extend(counts[r]..counts[r + 1]);
            // stable: equal columns keep input order before summation
            order.sort_by_key(|&s| cols[s]);
            for &s in &order {
                if col_idx.len() > row_ptr[r] && *col_idx.last().unwrap() == cols[s] {
                    *values.last_mut().unwrap() += vals[s];
                } else {
                    col_idx.push(cols[s]);
                    values.push(vals[s]);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(col, value)` pairs of one row, sorted by column.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let s = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[s.clone()].iter().copied().zip(self.values[s].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let s = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[s.clone()].binary_search(&c) {
            Ok(k) => self.values[s.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &t)
    }

    /// `selfᵀ · self`, accumulated row by row.
    pub fn gram(&self) -> Self {
        let mut t = Vec::new();
        for r in 0..self.nrows {
            let row: Vec<_> = self.row(r).collect();
            for &(i, a) in &row {
                for &(j, b) in &row {
                    t.push((i, j, a * b));
                }
            }
        }
        Self::from_triplets(self.ncols, self.ncols, &t)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v *= s);
        m
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        self.triplets()
            .map(|(r, c, v)| (v - self.get(c, r)).abs())
            .fold(0.0, crate::nan_max)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            d[(r, c)] += v;
        }
        d
    }
}

/// Uniform graph Laplacian: `L_ii = 1`, `L_ij = -1/|N(i)|` for neighbors.
///
/// Rows sum to zero; the matrix is not symmetric when valences differ.
pub fn graph_laplacian(mesh: &IndexedMesh) -> Result<SparseMatrix> {
    if mesh.vertices.is_empty() {
        return Err(Error::InvalidMesh("mesh has no vertices".into()));
    }
    let nb = mesh.vertex_neighbors();
    let mut t = Vec::with_capacity(nb.iter().map(|l| l.len() + 1).sum());
    for (i, l) in nb.iter().enumerate() {
        if l.is_empty() {
            return Err(Error::IsolatedVertex(i));
        }
        let w = -1.0 / l.len() as f64;
        t.push((i, i, 1.0));
        t.extend(l.iter().map(|&j| (i, j, w)));
    }
    Ok(SparseMatrix::from_triplets(nb.len(), nb.len(), &t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Point3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn triangle() -> IndexedMesh {
        IndexedMesh::new(vec![Point3::zeros(), Point3::x(), Point3::y()], vec![[0, 1, 2]]).unwrap()
    }

    #[test]
    fn triangle_rows() {
        let l = graph_laplacian(&triangle()).unwrap();
        for r in 0..3 {
            let mut row: Vec<f64> = l.row(r).map(|(_, v)| v).collect();
            row.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(row, vec![-0.5, -0.5, 1.0]);
        }
    }

    #[test]
    fn isolated_vertex_is_named() {
        let mut m = triangle();
        m.vertices.push(Point3::z());
        match graph_laplacian(&m) {
            Err(Error::IsolatedVertex(3)) => {}
            other => panic!("{other:?}"),
        }
    }

    fn random_mesh(rng: &mut ChaCha8Rng, n: usize) -> IndexedMesh {
        let v: Vec<Point3> = (0..n)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        // a fan over consecutive vertices guarantees every vertex has a neighbor
        let mut f: Vec<[usize; 3]> = (1..n - 1).map(|i| [0, i, i + 1]).collect();
        for _ in 0..n {
            let (a, b, c) = (rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n));
            f.push([a, b, c]);
        }
        IndexedMesh::from_raw(v, f).unwrap().0
    }

    #[test]
    fn constants_in_kernel_and_frobenius_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let m = random_mesh(&mut rng, 10);
            let l = graph_laplacian(&m).unwrap();
            let ones = vec![1.0; 10];
            assert!(l.mul_vec(&ones).iter().all(|x| x.abs() < 1e-12));

            // ‖LX‖²_F against Σ_i ‖v_i − mean(N(i))‖²
            let mut lx = 0.0;
            for k in 0..3 {
                let col: Vec<f64> = m.vertices.iter().map(|v| v[k]).collect();
                lx += l.mul_vec(&col).iter().map(|x| x * x).sum::<f64>();
            }
            let nb = m.vertex_neighbors();
            let mut direct = 0.0;
            for (i, l) in nb.iter().enumerate() {
                let mean = l.iter().map(|&j| m.vertices[j]).sum::<Point3>() / l.len() as f64;
                direct += (m.vertices[i] - mean).norm_squared();
            }
            assert!((lx - direct).abs() < 1e-12 * (1.0 + direct));

            let g = l.gram();
            assert!(g.asymmetry() < 1e-12);
        }
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = SparseMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, 4.0)]);
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.transpose().get(1, 0), 3.0);
    }
}
