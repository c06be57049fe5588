//! Plane patches, fixed-density texel sampling and atlas packing.

use log::{debug, warn};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{IndexedMesh, Point3};
use crate::par;
use crate::partition::{ClusterSet, PlaneProxy};
use crate::rgbd::Image;

/// Largest atlas side, texels.
pub const MAX_ATLAS: usize = 16384;
/// Empty texels kept around each patch in the atlas.
pub const PATCH_PADDING: usize = 1;

/// One texture sample on a plane patch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TexelSample {
    pub p: Point3,
    pub face: usize,
    pub bary: [f64; 3],
    pub plane: usize,
    /// Pixel in the atlas (column, row).
    pub uv: [u32; 2],
    pub color: [f32; 3],
}

/// Orthonormal in-plane frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneBasis {
    pub origin: Point3,
    pub u: Vector3<f64>,
    pub v: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl PlaneBasis {
    /// `u` is the coordinate axis of the normal's smallest component crossed
    /// with the normal; `v = n × u`.
    pub fn for_proxy(proxy: &PlaneProxy) -> Self {
        let n = proxy.normal.normalize();
        let k = (0..3)
            .min_by(|&a, &b| n[a].abs().total_cmp(&n[b].abs()).then(a.cmp(&b)))
            .unwrap();
        let mut e = Vector3::zeros();
        e[k] = 1.0;
        let u = e.cross(&n);
        // Gram-Schmidt against n for round-off
        let u = (u - n * n.dot(&u)).normalize();
        let v = n.cross(&u).normalize();
        Self {
            origin: proxy.project(&proxy.centroid),
            u,
            v,
            normal: n,
        }
    }

    pub fn to_2d(&self, q: &Point3) -> [f64; 2] {
        let d = q - self.origin;
        [d.dot(&self.u), d.dot(&self.v)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanePatch {
    pub plane: usize,
    pub basis: PlaneBasis,
    /// Cluster faces, ascending.
    pub faces: Vec<usize>,
    /// Projected 2D corners of each face.
    pub corners: Vec<[[f64; 2]; 3]>,
    /// Faces whose projection has (near) zero area.
    pub degenerate: Vec<bool>,
    /// Lower-left corner of the texel grid in patch coordinates.
    pub grid_min: [f64; 2],
    /// Texel grid size (columns, rows).
    pub grid_size: [usize; 2],
    pub density: f64,
    /// Top-left pixel of the grid in the atlas.
    pub atlas_offset: [usize; 2],
}

/// Projects a cluster onto its proxy plane and lays out its texel grid.
pub fn build_patch(
    plane: usize,
    faces: &[usize],
    proxy: &PlaneProxy,
    mesh: &IndexedMesh,
    density: f64,
) -> Result<PlanePatch> {
    if faces.is_empty() {
        return Err(Error::InvalidInput(format!("cluster {plane} is empty")));
    }
    let basis = PlaneBasis::for_proxy(proxy);
    let mut sorted = faces.to_vec();
    sorted.sort_unstable();
    let mut corners = Vec::with_capacity(sorted.len());
    let mut degenerate = Vec::with_capacity(sorted.len());
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for &f in &sorted {
        let c = mesh.corners(f).map(|p| basis.to_2d(&proxy.project(&p)));
        let area2 = cross2(c[0], c[1], c[2]);
        let deg = area2.abs() <= 1e-9 * 2.0 * mesh.face_area(f).max(1e-300);
        if !deg {
            for p in &c {
                for k in 0..2 {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
        }
        corners.push(c);
        degenerate.push(deg);
    }
    if degenerate.iter().all(|&d| d) {
        return Err(Error::DegeneratePatch { cluster: plane });
    }
    let count = |k: usize| (((hi[k] - lo[k]) / density) - 1e-9).ceil().max(1.0) as usize;
    Ok(PlanePatch {
        plane,
        basis,
        faces: sorted,
        corners,
        degenerate,
        grid_min: lo,
        grid_size: [count(0), count(1)],
        density,
        atlas_offset: [0, 0],
    })
}

fn cross2(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
}

/// Barycentric coordinates of `p` in the 2D triangle `t`.
pub fn barycentric_2d(t: &[[f64; 2]; 3], p: [f64; 2]) -> [f64; 3] {
    let area = cross2(t[0], t[1], t[2]);
    let b0 = cross2(p, t[1], t[2]) / area;
    let b1 = cross2(t[0], p, t[2]) / area;
    [b0, b1, 1.0 - b0 - b1]
}

impl PlanePatch {
    /// Patch coordinates of texel `(i, j)`'s center.
    pub fn texel_center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.grid_min[0] + (i as f64 + 0.5) * self.density,
            self.grid_min[1] + (j as f64 + 0.5) * self.density,
        ]
    }

    /// Atlas pixel coordinates (continuous, pixel centers at +0.5) of a
    /// point in patch coordinates.
    pub fn atlas_coords(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.atlas_offset[0] as f64 + (p[0] - self.grid_min[0]) / self.density,
            self.atlas_offset[1] as f64 + (p[1] - self.grid_min[1]) / self.density,
        ]
    }
}

/// Texels at grid points inside the projected faces. A grid point on an
/// edge shared by several faces goes to the lowest face index.
pub fn sample_texels(patch: &PlanePatch, mesh: &IndexedMesh) -> Vec<TexelSample> {
    let [nx, ny] = patch.grid_size;
    let d = patch.density;
    let mut owner: Vec<u32> = vec![u32::MAX; nx * ny];
    let mut bary: Vec<[f64; 3]> = vec![[0.0; 3]; nx * ny];
    for (k, c) in patch.corners.iter().enumerate() {
        if patch.degenerate[k] {
            continue;
        }
        let lo = [0, 1].map(|a| c.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min));
        let hi = [0, 1].map(|a| c.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max));
        let range = |a: usize, n: usize| {
            let first = ((lo[a] - patch.grid_min[a]) / d - 0.5).ceil().max(0.0) as usize;
            let last = ((hi[a] - patch.grid_min[a]) / d - 0.5).floor().min(n as f64 - 1.0);
            (first, last)
        };
        let (i0, i1) = range(0, nx);
        let (j0, j1) = range(1, ny);
        if i1 < 0.0 || j1 < 0.0 {
            continue;
        }
        for j in j0..=j1 as usize {
            for i in i0..=i1 as usize {
                let idx = j * nx + i;
                if owner[idx] != u32::MAX {
                    continue;
                }
                let b = barycentric_2d(c, patch.texel_center(i, j));
                if b.iter().all(|&x| x >= -1e-12) {
                    owner[idx] = k as u32;
                    bary[idx] = b;
                }
            }
        }
    }
    let mut out = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let idx = j * nx + i;
            if owner[idx] == u32::MAX {
                continue;
            }
            let f = patch.faces[owner[idx] as usize];
            let b = bary[idx];
            let [a, bb, c] = mesh.corners(f);
            out.push(TexelSample {
                p: a * b[0] + bb * b[1] + c * b[2],
                face: f,
                bary: b,
                plane: patch.plane,
                uv: [(patch.atlas_offset[0] + i) as u32, (patch.atlas_offset[1] + j) as u32],
                color: [0.0; 3],
            });
        }
    }
    out
}

/// Atlas size plus the top-left corner of each patch grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtlasLayout {
    pub width: usize,
    pub height: usize,
    pub offsets: Vec<[usize; 2]>,
}

/// Shelf packing, tallest patches first, each surrounded by
/// [`PATCH_PADDING`] empty texels.
pub fn pack_atlas(sizes: &[[usize; 2]]) -> Result<AtlasLayout> {
    let pad = PATCH_PADDING;
    for (i, s) in sizes.iter().enumerate() {
        if s[0] + 2 * pad > MAX_ATLAS || s[1] + 2 * pad > MAX_ATLAS {
            return Err(Error::PatchTooLarge {
                patch: i,
                width: s[0],
                height: s[1],
                limit: MAX_ATLAS,
            });
        }
    }
    let area: usize = sizes.iter().map(|s| (s[0] + 2 * pad) * (s[1] + 2 * pad)).sum();
    let widest = sizes.iter().map(|s| s[0] + 2 * pad).max().unwrap_or(0);
    let width = widest.max((area as f64 * 1.1).sqrt().ceil() as usize).min(MAX_ATLAS);
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b][1].cmp(&sizes[a][1]).then(a.cmp(&b)));
    let mut offsets = vec![[0, 0]; sizes.len()];
    let (mut x, mut y, mut shelf) = (0usize, 0usize, 0usize);
    for i in order {
        let (w, h) = (sizes[i][0] + 2 * pad, sizes[i][1] + 2 * pad);
        if x + w > width {
            y += shelf;
            x = 0;
            shelf = 0;
        }
        offsets[i] = [x + pad, y + pad];
        x += w;
        shelf = shelf.max(h);
    }
    let height = y + shelf;
    if height > MAX_ATLAS {
        return Err(Error::InvalidInput(format!(
            "texels do not fit one {MAX_ATLAS}x{MAX_ATLAS} atlas; increase the texel density"
        )));
    }
    Ok(AtlasLayout {
        width: width.max(1),
        height: height.max(1),
        offsets,
    })
}

/// Patches and texels for every cluster of a (simplified) mesh.
#[derive(Debug, Clone)]
pub struct TexelAtlas {
    pub patches: Vec<PlanePatch>,
    pub layout: AtlasLayout,
    pub texels: Vec<TexelSample>,
}

/// Builds patches in parallel, packs them, and samples texels.
pub fn build_atlas(mesh: &IndexedMesh, clusters: &ClusterSet, density: f64) -> Result<TexelAtlas> {
    if !(density > 0.0) {
        return Err(Error::InvalidInput("texel density must be positive".into()));
    }
    let groups = clusters.cluster_faces();
    let ids: Vec<usize> = (0..groups.len()).collect();
    let built = par::map_slice(&ids, |&c| build_patch(c, &groups[c], &clusters.proxies[c], mesh, density));
    let mut patches = Vec::with_capacity(built.len());
    for p in built {
        patches.push(p?);
    }
    let layout = pack_atlas(&patches.iter().map(|p| p.grid_size).collect::<Vec<_>>())?;
    for (p, o) in patches.iter_mut().zip(&layout.offsets) {
        p.atlas_offset = *o;
    }
    let per_patch = par::map_slice(&patches, |p| sample_texels(p, mesh));
    let mut texels = Vec::new();
    for (p, t) in patches.iter().zip(per_patch) {
        if t.is_empty() {
            warn!("plane {} produced no texels", p.plane);
        }
        debug!("plane {}: {}x{} grid, {} texels", p.plane, p.grid_size[0], p.grid_size[1], t.len());
        texels.extend(t);
    }
    Ok(TexelAtlas {
        patches,
        layout,
        texels,
    })
}

impl TexelAtlas {
    /// Per-face atlas UVs in `[0, 1]²` (v pointing up), one triple per mesh face.
    pub fn face_uvs(&self, mesh: &IndexedMesh) -> Vec<[[f64; 2]; 3]> {
        let mut uvs = vec![[[0.0; 2]; 3]; mesh.num_faces()];
        let (w, h) = (self.layout.width as f64, self.layout.height as f64);
        for p in &self.patches {
            for (k, &f) in p.faces.iter().enumerate() {
                uvs[f] = p.corners[k].map(|c| {
                    let a = p.atlas_coords(c);
                    [(a[0] / w).clamp(0.0, 1.0), (1.0 - a[1] / h).clamp(0.0, 1.0)]
                });
            }
        }
        uvs
    }

    /// Atlas image from the texel colors; pixels without a texel take the
    /// mean of filled neighbors, two rings deep.
    pub fn render_image(&self, texels: &[TexelSample]) -> Image {
        let (w, h) = (self.layout.width, self.layout.height);
        let mut img = Image::new(w, h, 3);
        let mut filled = vec![false; w * h];
        for t in texels {
            let (x, y) = (t.uv[0] as usize, t.uv[1] as usize);
            for c in 0..3 {
                img.set(x, y, c, t.color[c]);
            }
            filled[y * w + x] = true;
        }
        for _ in 0..2 {
            let prev = filled.clone();
            let src = img.clone();
            for y in 0..h {
                for x in 0..w {
                    if prev[y * w + x] {
                        continue;
                    }
                    let mut acc = [0.0f32; 3];
                    let mut n = 0;
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                                continue;
                            }
                            let (nx, ny) = (nx as usize, ny as usize);
                            if prev[ny * w + nx] {
                                for (c, a) in acc.iter_mut().enumerate() {
                                    *a += src.get(nx, ny, c);
                                }
                                n += 1;
                            }
                        }
                    }
                    if n > 0 {
                        for (c, a) in acc.iter().enumerate() {
                            img.set(x, y, c, a / n as f32);
                        }
                        filled[y * w + x] = true;
                    }
                }
            }
        }
        img
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::tests::grid;
    use crate::partition::fit_proxy;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn z_plane() -> PlaneProxy {
        PlaneProxy::from_point_normal(Point3::new(0.5, 0.5, 0.0), Vector3::z())
    }

    fn all_faces(m: &IndexedMesh) -> Vec<usize> {
        (0..m.num_faces()).collect()
    }

    #[test]
    fn basis_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let n = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            let b = PlaneBasis::for_proxy(&PlaneProxy::from_point_normal(Point3::zeros(), n));
            assert!((b.u.norm() - 1.0).abs() < 1e-12 && (b.v.norm() - 1.0).abs() < 1e-12);
            assert!(b.u.dot(&b.v).abs() < 1e-12);
            assert!(b.u.dot(&b.normal).abs() < 1e-12 && b.v.dot(&b.normal).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_square_patch() {
        let m = grid(4, 4, 0.25);
        let p = build_patch(0, &all_faces(&m), &z_plane(), &m, 0.0025).unwrap();
        let xs: Vec<f64> = p.corners.iter().flatten().map(|c| c[0]).collect();
        let ys: Vec<f64> = p.corners.iter().flatten().map(|c| c[1]).collect();
        let span = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((span(&xs) - 1.0).abs() < 1e-12 && (span(&ys) - 1.0).abs() < 1e-12);
        let area: f64 = p.corners.iter().map(|c| cross2(c[0], c[1], c[2]).abs() / 2.0).sum();
        assert!((area - 1.0).abs() < 1e-12);
        assert_eq!(p.grid_size, [400, 400]);
        let t = sample_texels(&p, &m);
        assert_eq!(t.len(), 400 * 400);
    }

    #[test]
    fn tilted_patch_is_isometric() {
        let mut m = grid(5, 5, 0.2);
        let (c, s) = (45f64.to_radians().cos(), 45f64.to_radians().sin());
        for v in &mut m.vertices {
            *v = Point3::new(v.x, v.y * c, v.y * s);
        }
        let proxy = fit_proxy(&m.vertices, Some(m.face_cross(0))).unwrap();
        let p = build_patch(0, &all_faces(&m), &proxy, &m, 0.01).unwrap();
        let a2: f64 = p.corners.iter().map(|c| cross2(c[0], c[1], c[2])).sum::<f64>() / 2.0;
        assert!((a2 - m.total_area()).abs() < 1e-9, "{a2}");
        assert!(p.corners.iter().all(|c| cross2(c[0], c[1], c[2]) > 0.0));
    }

    #[test]
    fn texels_on_coplanar_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut m = grid(6, 6, 0.1);
        let n = Vector3::new(0.2, -0.3, 1.0).normalize();
        let u = n.cross(&Vector3::x()).normalize();
        let v = n.cross(&u);
        for p in &mut m.vertices {
            let (x, y) = (p.x + rng.random_range(-0.01..0.01), p.y + rng.random_range(-0.01..0.01));
            *p = Point3::new(0.1, 0.2, 0.3) + u * x + v * y;
        }
        let proxy = fit_proxy(&m.vertices, Some(n)).unwrap();
        let patch = build_patch(0, &all_faces(&m), &proxy, &m, 0.005).unwrap();
        let texels = sample_texels(&patch, &m);
        assert!(!texels.is_empty());
        let mut seen = std::collections::HashSet::new();
        for t in &texels {
            assert!(proxy.signed_distance(&t.p).abs() < 1e-9);
            let s: f64 = t.bary.iter().sum();
            assert!((s - 1.0).abs() < 1e-9 && t.bary.iter().all(|&b| b >= -1e-9));
            let [a, b, c] = m.corners(t.face);
            assert!((a * t.bary[0] + b * t.bary[1] + c * t.bary[2] - t.p).norm() < 1e-7);
            assert!(seen.insert(t.uv));
        }
        // count ~ area / density²
        let expected = m.total_area() / 0.005f64.powi(2);
        assert!((texels.len() as f64 - expected).abs() / expected < 0.05);
    }

    #[test]
    fn centroid_texel_bary() {
        let t = [[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]];
        let b = barycentric_2d(&t, [1.0, 1.0]);
        assert!(b.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn shared_edge_goes_to_lower_face() {
        // two faces sharing the diagonal; grid points on the diagonal
        let m = grid(1, 1, 1.0);
        let p = build_patch(0, &[0, 1], &z_plane(), &m, 0.1).unwrap();
        let t = sample_texels(&p, &m);
        assert_eq!(t.len(), 100);
        for s in &t {
            let d = s.p.x - s.p.y;
            if d.abs() < 1e-12 {
                assert_eq!(s.face, 0);
            }
        }
    }

    #[test]
    fn packing_examples() {
        let l = pack_atlas(&[[10, 10]]).unwrap();
        assert!(l.width >= 12 && l.height >= 12);
        let l = pack_atlas(&[[10, 10], [10, 10]]).unwrap();
        let (a, b) = (l.offsets[0], l.offsets[1]);
        let sep_x = if a[0] < b[0] { b[0] as i64 - (a[0] + 10) as i64 } else { a[0] as i64 - (b[0] + 10) as i64 };
        let sep_y = if a[1] < b[1] { b[1] as i64 - (a[1] + 10) as i64 } else { a[1] as i64 - (b[1] + 10) as i64 };
        assert!(sep_x.max(sep_y) >= 2);
        assert!(matches!(pack_atlas(&[[20000, 3]]), Err(Error::PatchTooLarge { .. })));
    }

    proptest! {
        #[test]
        fn packing_never_overlaps(sizes in proptest::collection::vec((1usize..80, 1usize..80), 1..25)) {
            let sizes: Vec<[usize; 2]> = sizes.into_iter().map(|(a, b)| [a, b]).collect();
            let l = pack_atlas(&sizes).unwrap();
            for i in 0..sizes.len() {
                let (a, sa) = (l.offsets[i], sizes[i]);
                prop_assert!(a[0] + sa[0] + PATCH_PADDING <= l.width && a[1] + sa[1] + PATCH_PADDING <= l.height);
                for j in i + 1..sizes.len() {
                    let (b, sb) = (l.offsets[j], sizes[j]);
                    let gap_x = (b[0] as i64 - (a[0] + sa[0]) as i64).max(a[0] as i64 - (b[0] + sb[0]) as i64);
                    let gap_y = (b[1] as i64 - (a[1] + sa[1]) as i64).max(a[1] as i64 - (b[1] + sb[1]) as i64);
                    prop_assert!(gap_x.max(gap_y) >= 2 * PATCH_PADDING as i64);
                }
            }
        }
    }

    #[test]
    fn atlas_dilation_fills_gutter() {
        let m = grid(2, 2, 0.5);
        let clusters = ClusterSet {
            face_labels: vec![0; m.num_faces()],
            proxies: vec![z_plane()],
        };
        let mut atlas = build_atlas(&m, &clusters, 0.1).unwrap();
        for t in &mut atlas.texels {
            t.color = [1.0, 0.5, 0.25];
        }
        let img = atlas.render_image(&atlas.texels);
        assert_eq!(img.pixel(0, 0)[0], 1.0);
        let uvs = atlas.face_uvs(&m);
        assert!(uvs.iter().flatten().all(|uv| (0.0..=1.0).contains(&uv[0]) && (0.0..=1.0).contains(&uv[1])));
    }
}
