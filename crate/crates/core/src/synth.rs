//! Synthetic planar scenes with known planes, a z-buffer rasterizer for
//! RGB-D frames, and a ray-cast oracle.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::{Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::mesh::{IndexedMesh, Point3};
use crate::par;
use crate::joint::{JointFrame, TexOptState};
use crate::partition::{ClusterSet, PlaneProxy};
use crate::texel::build_atlas;
use crate::rgbd::{DepthImage, FrameData, Image, Intrinsics, Pose};

/// Albedo as a function of the world-space point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Pattern {
    Solid([f64; 3]),
    /// Sum of two plane waves per channel, wavelength in meters.
    Sinusoid { base: [f64; 3], amp: [f64; 3], wavelength: f64 },
    Checker { a: [f64; 3], b: [f64; 3], size: f64 },
}

impl Default for Pattern {
    fn default() -> Self {
        Pattern::Sinusoid {
            base: [0.5, 0.5, 0.5],
            amp: [0.3, 0.3, 0.3],
            wavelength: 0.5,
        }
    }
}

const WAVES: [([f64; 3], [f64; 3], f64); 3] = [
    ([0.83, 0.47, 0.30], [-0.21, 0.62, 0.76], 0.3),
    ([0.15, 0.88, 0.45], [0.71, -0.35, 0.61], 1.1),
    ([0.52, 0.26, 0.81], [0.43, 0.77, -0.47], 2.0),
];

impl Pattern {
    pub fn color(&self, p: &Point3) -> [f64; 3] {
        match *self {
            Pattern::Solid(c) => c,
            Pattern::Sinusoid { base, amp, wavelength } => {
                let k = std::f64::consts::TAU / wavelength;
                std::array::from_fn(|c| {
                    let (a, b, phase) = WAVES[c];
                    let a = Vector3::from(a);
                    let b = Vector3::from(b);
                    base[c] + amp[c] * 0.5 * ((k * a.dot(p) + phase).sin() + (0.61 * k * b.dot(p)).sin())
                })
            }
            Pattern::Checker { a, b, size } => {
                let s = (p.x / size).floor() + (p.y / size).floor() + (p.z / size).floor();
                if (s as i64).rem_euclid(2) == 0 {
                    a
                } else {
                    b
                }
            }
        }
    }
}

/// Planar rectangle `origin + s·u + t·v`, `s, t ∈ [0, 1]`, front side along `u × v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub origin: Point3,
    pub u: Vector3<f64>,
    pub v: Vector3<f64>,
    pub pattern: Pattern,
}

impl Rect {
    pub fn normal(&self) -> Vector3<f64> {
        self.u.cross(&self.v).normalize()
    }

    pub fn plane(&self) -> PlaneProxy {
        PlaneProxy::from_point_normal(self.origin + 0.5 * (self.u + self.v), self.normal())
    }

    pub fn area(&self) -> f64 {
        self.u.cross(&self.v).norm()
    }

    /// Ray parameter of the hit with this rectangle, if any.
    pub fn intersect(&self, origin: &Point3, dir: &Vector3<f64>) -> Option<f64> {
        let n = self.u.cross(&self.v);
        let denom = n.dot(dir);
        if denom.abs() < 1e-15 {
            return None;
        }
        let t = n.dot(&(self.origin - origin)) / denom;
        if t <= 0.0 {
            return None;
        }
        let d = origin + dir * t - self.origin;
        let s = d.dot(&self.u) / self.u.norm_squared();
        let r = d.dot(&self.v) / self.v.norm_squared();
        let eps = 1e-12;
        ((-eps..=1.0 + eps).contains(&s) && (-eps..=1.0 + eps).contains(&r)).then_some(t)
    }
}

/// The six sides of an axis-aligned box in the order
/// `[z-min, z-max, y-min, y-max, x-min, x-max]`, facing inward or outward.
pub fn box_rects(min: Point3, max: Point3, inward: bool, pattern: Pattern) -> [Rect; 6] {
    let d = max - min;
    let (x, y, z) = (Vector3::x() * d.x, Vector3::y() * d.y, Vector3::z() * d.z);
    let sides = [
        (min, x, y),
        (min + z, y, x),
        (min, z, x),
        (min + y, x, z),
        (min, y, z),
        (min + x, z, y),
    ];
    sides.map(|(o, u, v)| {
        let (u, v) = if inward { (u, v) } else { (v, u) };
        Rect {
            origin: o,
            u,
            v,
            pattern,
        }
    })
}

/// Axis-aligned box standing in the scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub min: Point3,
    pub max: Point3,
    /// Omit the bottom face (box resting on the floor).
    pub on_floor: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Gaussian depth noise, meters.
    pub depth_sigma: f64,
    /// Gaussian image blur, pixels.
    pub blur_sigma: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            depth_sigma: 0.0,
            blur_sigma: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Room extent; the room spans `[0, x] × [0, y] × [0, z]`.
    pub room: Option<[f64; 3]>,
    pub boxes: Vec<BoxSpec>,
    /// Target triangle leg length of the dense mesh, meters.
    pub edge_length: f64,
    pub pattern: Pattern,
    pub cameras: Vec<Pose>,
    pub intrinsics: Intrinsics,
    pub noise: NoiseModel,
}

impl SceneSpec {
    /// A 4 × 3 × 2.5 m room with one box, viewed by `frames` cameras turning
    /// around the room center.
    pub fn cube_room(frames: usize) -> Self {
        let room = [4.0, 3.0, 2.5];
        let center = Point3::new(2.0, 1.5, 1.3);
        Self {
            room: Some(room),
            boxes: vec![BoxSpec {
                min: Point3::new(2.6, 0.4, 0.0),
                max: Point3::new(3.4, 1.1, 0.7),
                on_floor: true,
            }],
            edge_length: 0.02,
            pattern: Pattern::default(),
            cameras: orbit_cameras(center, 0.4, frames, 0.35),
            intrinsics: Intrinsics {
                fx: 160.0,
                fy: 160.0,
                cx: 159.5,
                cy: 119.5,
                width: 320,
                height: 240,
                depth_scale: 5000.0,
            },
            noise: NoiseModel::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if !(self.edge_length > 0.0 && self.edge_length.is_finite()) {
            return Err(Error::InvalidInput("edge_length must be positive".into()));
        }
        if let Some(r) = self.room {
            if r.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::InvalidInput("room dimensions must be positive".into()));
            }
            for c in &self.cameras {
                let p = c.center();
                if (0..3).any(|k| !(p[k] > 0.0 && p[k] < r[k])) {
                    return Err(Error::InvalidInput(format!("camera at {p:?} outside the room")));
                }
            }
        }
        for b in &self.boxes {
            if (0..3).any(|k| !(b.max[k] > b.min[k])) {
                return Err(Error::InvalidInput("box with non-positive extent".into()));
            }
        }
        Ok(())
    }
}

/// Cameras on a circle of radius `radius` around `center`, each looking
/// outward and slightly down by `pitch` radians.
pub fn orbit_cameras(center: Point3, radius: f64, n: usize, pitch: f64) -> Vec<Pose> {
    (0..n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n.max(1) as f64;
            let dir = Vector3::new(a.cos(), a.sin(), 0.0);
            let eye = center + dir * radius;
            let look = Vector3::new(dir.x * pitch.cos(), dir.y * pitch.cos(), -pitch.sin());
            Pose::look_at(eye, eye + look, Vector3::z())
        })
        .collect()
}

/// Built scene: the rectangles, their exact planes, and the dense welded mesh.
#[derive(Debug, Clone)]
pub struct Scene {
    pub rects: Vec<Rect>,
    pub planes: Vec<PlaneProxy>,
    pub mesh: IndexedMesh,
    /// Rectangle that generated each face.
    pub face_rect: Vec<usize>,
}

fn weld_key(p: &Point3) -> [i64; 3] {
    [p.x, p.y, p.z].map(|c| (c * 1e7).round() as i64)
}

/// Triangulates rectangles on regular grids and welds coincident vertices.
pub fn mesh_from_rects(rects: &[Rect], divisions: &[(usize, usize)]) -> (IndexedMesh, Vec<usize>) {
    let mut verts = Vec::new();
    let mut index: HashMap<[i64; 3], usize> = HashMap::new();
    let mut faces = Vec::new();
    let mut face_rect = Vec::new();
    for (ri, (r, &(nu, nv))) in rects.iter().zip(divisions).enumerate() {
        let mut ids = vec![0usize; (nu + 1) * (nv + 1)];
        for j in 0..=nv {
            for i in 0..=nu {
                let p = r.origin + r.u * (i as f64 / nu as f64) + r.v * (j as f64 / nv as f64);
                let id = *index.entry(weld_key(&p)).or_insert_with(|| {
                    verts.push(p);
                    verts.len() - 1
                });
                ids[j * (nu + 1) + i] = id;
            }
        }
        let at = |i: usize, j: usize| ids[j * (nu + 1) + i];
        for j in 0..nv {
            for i in 0..nu {
                faces.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
                faces.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
                face_rect.extend([ri, ri]);
            }
        }
    }
    (IndexedMesh::new(verts, faces).expect("grid faces are valid"), face_rect)
}

/// Closed box with `n × n` cells per side.
pub fn tessellated_box(min: Point3, max: Point3, n: usize, outward: bool) -> IndexedMesh {
    let rects = box_rects(min, max, !outward, Pattern::default());
    mesh_from_rects(&rects, &[(n, n); 6]).0
}

/// Box with edges and corners rounded to `radius`, sampled on a grid of
/// spacing about `edge_length`.
pub fn rounded_box(min: Point3, max: Point3, radius: f64, edge_length: f64) -> IndexedMesh {
    let rects = box_rects(min, max, false, Pattern::default());
    let divs: Vec<(usize, usize)> = rects
        .iter()
        .map(|r| divisions_for(r, edge_length))
        .collect();
    let (mut mesh, _) = mesh_from_rects(&rects, &divs);
    let lo = min.add_scalar(radius);
    let hi = max.add_scalar(-radius);
    for v in &mut mesh.vertices {
        let c = Point3::new(v.x.clamp(lo.x, hi.x), v.y.clamp(lo.y, hi.y), v.z.clamp(lo.z, hi.z));
        let d = *v - c;
        if d.norm() > 0.0 {
            *v = c + d.normalize() * radius;
        }
    }
    mesh
}

fn divisions_for(r: &Rect, edge: f64) -> (usize, usize) {
    (
        ((r.u.norm() / edge).round() as usize).max(1),
        ((r.v.norm() / edge).round() as usize).max(1),
    )
}

/// Rectangles of the spec, room first (inward) then boxes (outward).
pub fn scene_rects(spec: &SceneSpec) -> Vec<Rect> {
    let mut rects = Vec::new();
    if let Some([x, y, z]) = spec.room {
        rects.extend(box_rects(Point3::zeros(), Point3::new(x, y, z), true, spec.pattern));
    }
    for b in &spec.boxes {
        let sides = box_rects(b.min, b.max, false, spec.pattern);
        rects.extend(sides.iter().skip(usize::from(b.on_floor)).copied());
    }
    rects
}

pub fn build_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let rects = scene_rects(spec);
    if rects.is_empty() {
        return Err(Error::InvalidInput("scene has no surfaces".into()));
    }
    let divs: Vec<(usize, usize)> = rects.iter().map(|r| divisions_for(r, spec.edge_length)).collect();
    let (mesh, face_rect) = mesh_from_rects(&rects, &divs);
    let planes = rects.iter().map(Rect::plane).collect();
    Ok(Scene {
        rects,
        planes,
        mesh,
        face_rect,
    })
}

const NEAR: f64 = 1e-3;

/// Renders color (pattern albedo) and z-depth by rasterizing each rectangle
/// as two triangles against a z-buffer.
pub fn render(scene: &Scene, pose: &Pose, k: &Intrinsics) -> (Image, DepthImage) {
    let (w, h) = (k.width, k.height);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut owner = vec![usize::MAX; w * h];
    let inv = pose.inverse();
    for (ri, r) in scene.rects.iter().enumerate() {
        let corners = [r.origin, r.origin + r.u, r.origin + r.u + r.v, r.origin + r.v];
        let cam: Vec<Vector3<f64>> = corners.iter().map(|p| pose.transform(p)).collect();
        let n_c = pose.rotation * r.normal();
        let w_c = -n_c.dot(&pose.transform(&r.origin));
        for tri in [[0, 1, 2], [0, 2, 3]] {
            let poly = clip_near(&[cam[tri[0]], cam[tri[1]], cam[tri[2]]]);
            if poly.len() < 3 {
                continue;
            }
            let proj: Vec<[f64; 2]> = poly.iter().map(|v| k.project(v).unwrap()).collect();
            for t in 1..proj.len() - 1 {
                raster_triangle([proj[0], proj[t], proj[t + 1]], w, h, |x, y| {
                    let d = Vector3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
                    let denom = n_c.dot(&d);
                    if denom.abs() < 1e-15 {
                        return;
                    }
                    let z = -w_c / denom;
                    let i = y * w + x;
                    if z > NEAR && z < zbuf[i] {
                        zbuf[i] = z;
                        owner[i] = ri;
                    }
                });
            }
        }
    }
    let mut color = Image::new(w, h, 3);
    let mut depth = DepthImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if owner[i] == usize::MAX {
                continue;
            }
            let z = zbuf[i];
            depth.data[i] = z as f32;
            let pc = k.unproject(x as f64, y as f64, z);
            let pw = inv.transform(&pc);
            let c = scene.rects[owner[i]].pattern.color(&pw);
            for ch in 0..3 {
                color.set(x, y, ch, c[ch] as f32);
            }
        }
    }
    (color, depth)
}

fn clip_near(tri: &[Vector3<f64>; 3]) -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let (a, b) = (tri[i], tri[(i + 1) % 3]);
        let (ina, inb) = (a.z >= NEAR, b.z >= NEAR);
        if ina {
            out.push(a);
        }
        if ina != inb {
            let t = (NEAR - a.z) / (b.z - a.z);
            out.push(a + (b - a) * t);
        }
    }
    out
}

/// Calls `f` for every pixel center inside the triangle (edges inclusive).
fn raster_triangle(p: [[f64; 2]; 3], w: usize, h: usize, mut f: impl FnMut(usize, usize)) {
    let area = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    if area.abs() < 1e-12 {
        return;
    }
    let xmin = p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min).floor().max(0.0);
    let xmax = p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max).ceil().min(w as f64 - 1.0);
    let ymin = p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min).floor().max(0.0);
    let ymax = p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max).ceil().min(h as f64 - 1.0);
    if xmin > xmax || ymin > ymax {
        return;
    }
    let edge = |a: [f64; 2], b: [f64; 2], x: f64, y: f64| (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
    for y in ymin as usize..=ymax as usize {
        for x in xmin as usize..=xmax as usize {
            let (fx, fy) = (x as f64, y as f64);
            let e0 = edge(p[1], p[2], fx, fy) * area.signum();
            let e1 = edge(p[2], p[0], fx, fy) * area.signum();
            let e2 = edge(p[0], p[1], fx, fy) * area.signum();
            if e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0 {
                f(x, y);
            }
        }
    }
}

/// Renders one frame with the spec's noise model. Noise is seeded by
/// `(noise.seed, index)`.
pub fn render_frame(scene: &Scene, pose: &Pose, k: &Intrinsics, noise: &NoiseModel, index: usize) -> FrameData {
    let (mut color, mut depth) = render(scene, pose, k);
    if noise.blur_sigma > 0.0 {
        color = color.gaussian_blur(noise.blur_sigma);
    }
    if noise.depth_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let n = Normal::new(0.0, noise.depth_sigma).unwrap();
        for d in depth.data.iter_mut().filter(|d| **d > 0.0) {
            *d = (*d as f64 + n.sample(&mut rng)).max(0.0) as f32;
        }
    }
    FrameData {
        index,
        timestamp: index as f64 / 30.0,
        color,
        depth,
        pose: *pose,
        blur: 0.0,
    }
}

/// Renders every camera of the spec, in parallel.
pub fn render_sequence(scene: &Scene, spec: &SceneSpec) -> Vec<FrameData> {
    let idx: Vec<usize> = (0..spec.cameras.len()).collect();
    par::map_slice(&idx, |&i| render_frame(scene, &spec.cameras[i], &spec.intrinsics, &spec.noise, i))
}

/// Nearest rectangle hit along a ray: (ray parameter, rectangle index).
pub fn raycast(scene: &Scene, origin: &Point3, dir: &Vector3<f64>) -> Option<(f64, usize)> {
    scene
        .rects
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.intersect(origin, dir).map(|t| (t, i)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
}

/// Analytic visibility of a surface point: the ray from the camera through
/// the point hits nothing in front of it (beyond the depth tolerance), the
/// point projects inside the 1-pixel margin and is not seen at a grazing angle.
pub fn visible_oracle(
    scene: &Scene,
    pose: &Pose,
    k: &Intrinsics,
    point: &Point3,
    normal: &Vector3<f64>,
    cfg: &PipelineConfig,
) -> bool {
    let x = pose.transform(point);
    let Ok([u, v]) = k.project(&x) else { return false };
    if !(u >= 1.0 && v >= 1.0 && u <= k.width as f64 - 2.0 && v <= k.height as f64 - 2.0) {
        return false;
    }
    let c = pose.center();
    let dir = (point - c).normalize();
    let Some((t, _)) = raycast(scene, &c, &dir) else { return false };
    let z_hit = pose.transform(&(c + dir * t)).z;
    (z_hit - x.z).abs() < cfg.vis_depth_tol && (-dir.dot(normal)).abs() > cfg.vis_max_angle_deg.to_radians().cos()
}

/// Left-perturbs each pose by a rotation about a random axis of angle in
/// `[0, deg]` and a translation of length in `[0, mm]` millimeters.
pub fn perturb(poses: &[Pose], deg: f64, mm: f64, seed: u64) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    poses
        .iter()
        .map(|p| {
            let axis = random_unit(&mut rng);
            let dir = random_unit(&mut rng);
            let angle = rng.random::<f64>() * deg.to_radians();
            let len = rng.random::<f64>() * mm * 1e-3;
            let r = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner();
            Pose::new(r, dir * len).compose(p)
        })
        .collect()
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// Writes frames in the TUM layout read by [`crate::rgbd::load_sequence`].
pub fn write_tum_sequence(dir: &Path, k: &Intrinsics, frames: &[FrameData]) -> Result<()> {
    for sub in ["rgb", "depth"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let results = par::map_slice(frames, |f| -> Result<()> {
        f.color.save_png(&dir.join(format!("rgb/{:06}.png", f.index)))?;
        f.depth.save_png(&dir.join(format!("depth/{:06}.png", f.index)), k.depth_scale)
    });
    results.into_iter().collect::<Result<()>>()?;
    let mut rgb = String::from("# timestamp filename\n");
    let mut depth = rgb.clone();
    let mut gt = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for f in frames {
        rgb += &format!("{:.6} rgb/{:06}.png\n", f.timestamp, f.index);
        depth += &format!("{:.6} depth/{:06}.png\n", f.timestamp, f.index);
        let t = f.pose.to_tum();
        gt += &format!(
            "{:.6} {} {} {} {} {} {} {}\n",
            f.timestamp, t[0], t[1], t[2], t[3], t[4], t[5], t[6]
        );
    }
    for (name, body) in [("rgb.txt", rgb), ("depth.txt", depth), ("groundtruth.txt", gt)] {
        fs::write(dir.join(name), body).map_err(|e| Error::io(dir.join(name), e))?;
    }
    let mut intr = format!("{} {} {} {} {} {}", k.fx, k.fy, k.cx, k.cy, k.width, k.height);
    if k.depth_scale != 5000.0 {
        intr += &format!(" {}", k.depth_scale);
    }
    fs::write(dir.join("intrinsics.txt"), intr + "\n").map_err(|e| Error::io(dir.join("intrinsics.txt"), e))
}

/// Writes a complete synthetic dataset under `dir`: `mesh.ply` (the dense
/// mesh), `sequence/` (TUM layout), `planes.json` (ground-truth proxies)
/// and `scene.json` (the spec).
pub fn write_dataset(spec: &SceneSpec, dir: &Path) -> Result<Scene> {
    let scene = build_scene(spec)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    crate::mesh::save_ply(&scene.mesh, dir.join("mesh.ply"), crate::mesh::PlyFormat::BinaryLittleEndian, None)?;
    let frames = render_sequence(&scene, spec);
    write_tum_sequence(&dir.join("sequence"), &spec.intrinsics, &frames)?;
    for (name, json) in [
        ("planes.json", serde_json::to_vec_pretty(&scene.planes)),
        ("scene.json", serde_json::to_vec_pretty(spec)),
    ] {
        let path = dir.join(name);
        let bytes = json.map_err(|e| Error::Json {
            path: path.clone(),
            source: e,
        })?;
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(scene)
}

impl Scene {
    /// Ground-truth partition: one cluster per rectangle.
    pub fn clusters(&self) -> ClusterSet {
        ClusterSet {
            face_labels: self.face_rect.clone(),
            proxies: self.planes.clone(),
        }
    }
}

/// A texture-optimization problem on a rendered scene: texels sampled on
/// the ground-truth planes at `density`, frames rendered at the spec's
/// cameras and then perturbed by up to `pose_noise = (deg, mm)`.
/// Returns the state and the true poses.
pub fn texture_problem(
    spec: &SceneSpec,
    density: f64,
    pose_noise: (f64, f64),
    seed: u64,
    cfg: &PipelineConfig,
) -> Result<(TexOptState, Vec<Pose>)> {
    let scene = build_scene(spec)?;
    let atlas = build_atlas(&scene.mesh, &scene.clusters(), density)?;
    let rendered = render_sequence(&scene, spec);
    let noisy = perturb(&spec.cameras, pose_noise.0, pose_noise.1, seed);
    let frames = rendered
        .into_iter()
        .zip(&noisy)
        .map(|(f, p)| {
            let image = if cfg.grayscale { f.color.to_gray() } else { f.color };
            JointFrame::new(f.index, *p, image, f.depth, cfg)
        })
        .collect();
    let state = TexOptState::new(frames, scene.planes.clone(), atlas.texels, spec.intrinsics, cfg)?;
    Ok((state, spec.cameras.clone()))
}
