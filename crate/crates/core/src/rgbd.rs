//! RGB-D keyframe sequences: intrinsics, poses, images, blur scoring,
//! keyframe selection, projection and visibility.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::mesh::Point3;
use crate::par;

/// Pinhole intrinsics. Pixel coordinates put integer values at pixel centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Depth-image units per meter.
    pub depth_scale: f64,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64
            && self.depth_scale > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid intrinsics {self:?}")))
        }
    }

    /// Perspective projection of a camera-space point.
    pub fn project(&self, v: &Vector3<f64>) -> Result<[f64; 2]> {
        if v.z <= 1e-9 {
            return Err(Error::BehindCamera(v.z));
        }
        Ok([v.x * self.fx / v.z + self.cx, v.y * self.fy / v.z + self.cy])
    }

    /// Same as [`Intrinsics::project`] for a homogeneous point `(v0, v1, v2, v3)`.
    pub fn project_h(&self, v: &[f64; 4]) -> Result<[f64; 2]> {
        self.project(&Vector3::new(v[0], v[1], v[2]))
    }

    /// Camera-space point at pixel `(u, v)` with z-depth `depth`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth)
    }

    /// Reads `fx fy cx cy width height [depth_scale]`.
    pub fn load(path: &Path, default_depth_scale: f64) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let vals: Vec<f64> = text
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, e.to_string()))?;
        if vals.len() != 6 && vals.len() != 7 {
            return Err(Error::parse(path, format!("expected 6 or 7 numbers, found {}", vals.len())));
        }
        let k = Intrinsics {
            fx: vals[0],
            fy: vals[1],
            cx: vals[2],
            cy: vals[3],
            width: vals[4] as usize,
            height: vals[5] as usize,
            depth_scale: vals.get(6).copied().unwrap_or(default_depth_scale),
        };
        k.validate()?;
        Ok(k)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = format!(
            "{} {} {} {} {} {}\n",
            self.fx, self.fy, self.cx, self.cy, self.width, self.height
        );
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Rigid world-to-camera transform `x_c = R x_w + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Nearest rotation matrix (SVD polar factor with det = +1).
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * vt;
    }
    r
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn transform(&self, p: &Point3) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Camera placed at `eye` looking at `target` (camera y axis points
    /// roughly along `-up`, image rows grow downward).
    pub fn look_at(eye: Point3, target: Point3, up: Vector3<f64>) -> Self {
        let z = (target - eye).normalize();
        let x = z.cross(&up).normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Self {
            rotation: r,
            translation: -(r * eye),
        }
    }

    /// Left-multiplied linearized update: `x' = (I + [ω]×)(R x + t) + ν`,
    /// re-orthonormalized. `delta = (ω, ν)`.
    pub fn apply_delta(&self, delta: &[f64; 6]) -> Self {
        let w = Vector3::new(delta[0], delta[1], delta[2]);
        let nu = Vector3::new(delta[3], delta[4], delta[5]);
        let m = Matrix3::identity() + skew(&w);
        Self {
            rotation: orthonormalize(&(m * self.rotation)),
            translation: m * self.translation + nu,
        }
    }

    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max()
    }

    /// Rotation angle (degrees) and translation norm (meters) of `self · other⁻¹`.
    pub fn error_to(&self, other: &Pose) -> (f64, f64) {
        let d = self.compose(&other.inverse());
        let c = ((d.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        (c.acos().to_degrees(), d.translation.norm())
    }

    /// From a camera-to-world TUM record `tx ty tz qx qy qz qw`.
    pub fn from_tum(vals: &[f64; 7]) -> Self {
        let q = UnitQuaternion::from_quaternion(Quaternion::new(vals[6], vals[3], vals[4], vals[5]));
        let c2w = Pose {
            rotation: q.to_rotation_matrix().into_inner(),
            translation: Vector3::new(vals[0], vals[1], vals[2]),
        };
        c2w.inverse()
    }

    /// Camera-to-world TUM record `tx ty tz qx qy qz qw`.
    pub fn to_tum(&self) -> [f64; 7] {
        let c2w = self.inverse();
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(c2w.rotation));
        let t = c2w.translation;
        [t.x, t.y, t.z, q.i, q.j, q.k, q.w]
    }
}

/// Row-major float image with 1 or 3 channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

/// Bilinear sample with its exact derivative in x and y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub value: [f64; 3],
    pub dx: [f64; 3],
    pub dy: [f64; 3],
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            *o = self.get(x, y, c) as f64;
        }
        out
    }

    /// Rec. 601 luma as a single-channel image.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let mut g = Image::new(self.width, self.height, 1);
        for i in 0..self.width * self.height {
            let p = &self.data[i * 3..i * 3 + 3];
            g.data[i] = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
        }
        g
    }

    /// True when `(x, y)` lies inside the bilinear domain `[0, W-1] × [0, H-1]`.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }

    /// Bilinear interpolation; `None` outside the domain.
    pub fn sample(&self, x: f64, y: f64) -> Option<Sample> {
        if !self.contains(x, y) || self.width < 2 || self.height < 2 {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width - 2);
        let y0 = (y.floor() as usize).min(self.height - 2);
        let a = x - x0 as f64;
        let b = y - y0 as f64;
        let mut s = Sample {
            value: [0.0; 3],
            dx: [0.0; 3],
            dy: [0.0; 3],
        };
        for c in 0..self.channels {
            let i00 = self.get(x0, y0, c) as f64;
            let i10 = self.get(x0 + 1, y0, c) as f64;
            let i01 = self.get(x0, y0 + 1, c) as f64;
            let i11 = self.get(x0 + 1, y0 + 1, c) as f64;
            s.value[c] = (1.0 - a) * (1.0 - b) * i00 + a * (1.0 - b) * i10 + (1.0 - a) * b * i01 + a * b * i11;
            s.dx[c] = (1.0 - b) * (i10 - i00) + b * (i11 - i01);
            s.dy[c] = (1.0 - a) * (i01 - i00) + a * (i11 - i10);
        }
        Some(s)
    }

    /// Separable Gaussian blur with edge replication.
    pub fn gaussian_blur(&self, sigma: f64) -> Image {
        if sigma <= 0.0 {
            return self.clone();
        }
        let r = (3.0 * sigma).ceil() as isize;
        let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
        let s: f64 = k.iter().sum();
        k.iter_mut().for_each(|x| *x /= s);
        let pass = |src: &Image, horizontal: bool| -> Image {
            let mut out = Image::new(src.width, src.height, src.channels);
            for y in 0..src.height {
                for x in 0..src.width {
                    for c in 0..src.channels {
                        let mut acc = 0.0;
                        for (j, w) in k.iter().enumerate() {
                            let o = j as isize - r;
                            let (sx, sy) = if horizontal {
                                ((x as isize + o).clamp(0, src.width as isize - 1) as usize, y)
                            } else {
                                (x, (y as isize + o).clamp(0, src.height as isize - 1) as usize)
                            };
                            acc += w * src.get(sx, sy, c) as f64;
                        }
                        out.set(x, y, c, acc as f32);
                    }
                }
            }
            out
        };
        pass(&pass(self, true), false)
    }

    pub fn load(path: &Path, grayscale: bool) -> Result<Image> {
        let img = image::open(path)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                source: e,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let mut out = Image::new(w as usize, h as usize, 3);
        for (o, v) in out.data.iter_mut().zip(img.as_raw()) {
            *o = *v as f32 / 255.0;
        }
        Ok(if grayscale { out.to_gray() } else { out })
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let mut img = image::RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let p = self.pixel(x, y);
                let q = if self.channels == 1 { [p[0]; 3] } else { p };
                let px = q.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
                img.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        img
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

/// Depth in meters, 0 = invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn load(path: &Path, depth_scale: f64) -> Result<DepthImage> {
        let img = image::open(path)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                source: e,
            })?
            .to_luma16();
        let (w, h) = img.dimensions();
        Ok(DepthImage {
            width: w as usize,
            height: h as usize,
            data: img.as_raw().iter().map(|&d| (d as f64 / depth_scale) as f32).collect(),
        })
    }

    pub fn save_png(&self, path: &Path, depth_scale: f64) -> Result<()> {
        let raw: Vec<u16> = self
            .data
            .iter()
            .map(|&d| (d as f64 * depth_scale).round().clamp(0.0, 65535.0) as u16)
            .collect();
        let img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer size matches");
        img.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

/// One frame of a sequence.
#[derive(Debug, Clone)]
pub struct FrameData {
    pub index: usize,
    pub timestamp: f64,
    pub color: Image,
    pub depth: DepthImage,
    pub pose: Pose,
    pub blur: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequenceFormat {
    Tum,
    Icl,
    Bundlefusion,
}

impl SequenceFormat {
    pub fn default_depth_scale(self) -> f64 {
        match self {
            SequenceFormat::Tum | SequenceFormat::Icl => 5000.0,
            SequenceFormat::Bundlefusion => 1000.0,
        }
    }
}

impl std::str::FromStr for SequenceFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tum" => Ok(Self::Tum),
            "icl" => Ok(Self::Icl),
            "bundlefusion" => Ok(Self::Bundlefusion),
            _ => Err(Error::InvalidInput(format!("unknown sequence format {s:?}"))),
        }
    }
}

/// Intrinsics and frames loaded from disk.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub intrinsics: Intrinsics,
    pub frames: Vec<FrameData>,
}

const ASSOCIATION_WINDOW: f64 = 0.02;

fn read_lines(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| (i + 1, l.split_whitespace().map(str::to_owned).collect()))
        .collect())
}

fn parse_stamped_files(path: &Path) -> Result<Vec<(f64, String)>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, t)| {
            if t.len() < 2 {
                return Err(Error::parse(path, format!("line {n}: expected `timestamp filename`")));
            }
            let ts = t[0]
                .parse()
                .map_err(|_| Error::parse(path, format!("line {n}: bad timestamp")))?;
            Ok((ts, t[1].clone()))
        })
        .collect()
}

/// Parses a TUM trajectory into (timestamp, world-to-camera pose).
pub fn parse_tum_trajectory(path: &Path) -> Result<Vec<(f64, Pose)>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, t)| {
            if t.len() != 8 {
                return Err(Error::parse(path, format!("line {n}: expected 8 fields, found {}", t.len())));
            }
            let v: Vec<f64> = t
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path, format!("line {n}: {e}")))?;
            Ok((v[0], Pose::from_tum(&[v[1], v[2], v[3], v[4], v[5], v[6], v[7]])))
        })
        .collect()
}

fn nearest<T>(items: &[(f64, T)], t: f64) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, (ts, _)) in items.iter().enumerate() {
        let d = (ts - t).abs();
        if d <= ASSOCIATION_WINDOW && best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    best.map(|b| b.1)
}

struct FrameFiles {
    timestamp: f64,
    color: PathBuf,
    depth: PathBuf,
    pose: Pose,
}

fn tum_files(dir: &Path) -> Result<Vec<FrameFiles>> {
    let rgb = parse_stamped_files(&dir.join("rgb.txt"))?;
    let depth = parse_stamped_files(&dir.join("depth.txt"))?;
    let gt_path = dir.join("groundtruth.txt");
    if !gt_path.exists() {
        return Err(Error::InvalidInput(format!("missing trajectory {}", gt_path.display())));
    }
    let traj = parse_tum_trajectory(&gt_path)?;
    let mut out = Vec::new();
    for (t, file) in &rgb {
        let (Some(d), Some(p)) = (nearest(&depth, *t), nearest(&traj, *t)) else {
            continue;
        };
        out.push(FrameFiles {
            timestamp: *t,
            color: dir.join(file),
            depth: dir.join(&depth[d].1),
            pose: traj[p].1,
        });
    }
    Ok(out)
}

fn parse_matrix4(path: &Path) -> Result<Pose> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: Vec<f64> = text
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::parse(path, e.to_string()))?;
    if v.len() != 16 {
        return Err(Error::parse(path, format!("expected a 4x4 matrix, found {} numbers", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::parse(path, "non-finite pose (tracking failure)"));
    }
    let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
    let c2w = Pose::new(orthonormalize(&r), Vector3::new(v[3], v[7], v[11]));
    Ok(c2w.inverse())
}

fn bundlefusion_files(dir: &Path) -> Result<Vec<FrameFiles>> {
    let mut stems: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.strip_suffix(".pose.txt").map(str::to_owned)
        })
        .collect();
    stems.sort();
    if stems.is_empty() {
        return Err(Error::InvalidInput(format!("missing trajectory: no *.pose.txt in {}", dir.display())));
    }
    let mut out = Vec::new();
    for (i, s) in stems.iter().enumerate() {
        let color = ["png", "jpg"]
            .iter()
            .map(|ext| dir.join(format!("{s}.color.{ext}")))
            .find(|p| p.exists());
        let depth = dir.join(format!("{s}.depth.png"));
        let Some(color) = color else { continue };
        if !depth.exists() {
            continue;
        }
        match parse_matrix4(&dir.join(format!("{s}.pose.txt"))) {
            Ok(pose) => out.push(FrameFiles {
                timestamp: i as f64,
                color,
                depth,
                pose,
            }),
            Err(e) => warn!("skipping frame {s}: {e}"),
        }
    }
    Ok(out)
}

/// Loads a sequence directory. All formats read `intrinsics.txt`
/// (`fx fy cx cy width height`) from the directory root.
pub fn load_sequence(dir: &Path, format: SequenceFormat, cfg: &PipelineConfig) -> Result<Sequence> {
    let scale = cfg.depth_scale.unwrap_or(format.default_depth_scale());
    let mut intrinsics = Intrinsics::load(&dir.join("intrinsics.txt"), scale)?;
    if let Some(s) = cfg.depth_scale {
        intrinsics.depth_scale = s;
    }
    let files = match format {
        SequenceFormat::Tum | SequenceFormat::Icl => tum_files(dir)?,
        SequenceFormat::Bundlefusion => bundlefusion_files(dir)?,
    };
    if files.is_empty() {
        return Err(Error::InvalidInput(format!("no associable frames in {}", dir.display())));
    }
    let loaded = par::map_slice(&files, |f| -> Result<(Image, DepthImage)> {
        let c = Image::load(&f.color, cfg.grayscale)?;
        let d = DepthImage::load(&f.depth, intrinsics.depth_scale)?;
        if c.width != intrinsics.width || c.height != intrinsics.height || d.width != c.width || d.height != c.height {
            return Err(Error::InvalidInput(format!(
                "{}: image size does not match intrinsics",
                f.color.display()
            )));
        }
        Ok((c, d))
    });
    let mut frames = Vec::with_capacity(files.len());
    for (i, (f, r)) in files.iter().zip(loaded).enumerate() {
        let (color, depth) = r?;
        frames.push(FrameData {
            index: i,
            timestamp: f.timestamp,
            color,
            depth,
            pose: f.pose,
            blur: 0.0,
        });
    }
    let blurs = par::map_slice(&frames, |f| blurriness(&f.color));
    for (f, b) in frames.iter_mut().zip(blurs) {
        f.blur = b;
    }
    info!("loaded {} frames from {}", frames.len(), dir.display());
    Ok(Sequence { intrinsics, frames })
}

/// No-reference blur score in `[0, 1]`, higher is blurrier. The image is
/// re-blurred with 9-tap box filters along each axis; the score is the
/// larger relative loss of neighboring-pixel variation. Constant images
/// score 0.
pub fn blurriness(image: &Image) -> f64 {
    let g = image.to_gray();
    let (w, h) = (g.width, g.height);
    if w < 2 || h < 2 {
        return 0.0;
    }
    let f = |x: usize, y: usize| g.data[y * w + x] as f64;
    let box9 = |horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for o in -4isize..=4 {
                    let (sx, sy) = if horizontal {
                        ((x as isize + o).clamp(0, w as isize - 1) as usize, y)
                    } else {
                        (x, (y as isize + o).clamp(0, h as isize - 1) as usize)
                    };
                    s += f(sx, sy);
                }
                out[y * w + x] = s / 9.0;
            }
        }
        out
    };
    let bv = box9(false);
    let bh = box9(true);
    let (mut sfv, mut svv, mut sfh, mut svh) = (0.0, 0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if y > 0 {
                let df = (f(x, y) - f(x, y - 1)).abs();
                let db = (bv[y * w + x] - bv[(y - 1) * w + x]).abs();
                sfv += df;
                svv += (df - db).max(0.0);
            }
            if x > 0 {
                let df = (f(x, y) - f(x - 1, y)).abs();
                let db = (bh[y * w + x] - bh[y * w + x - 1]).abs();
                sfh += df;
                svh += (df - db).max(0.0);
            }
        }
    }
    let ratio = |sf: f64, sv: f64| if sf > 0.0 { (sf - sv) / sf } else { 0.0 };
    ratio(sfv, svv).max(ratio(sfh, svh)).clamp(0.0, 1.0)
}

/// Index of the least blurry frame in each consecutive window of
/// `interval` frames (ties to the lower index).
pub fn select_keyframes(blur: &[f64], interval: usize) -> Vec<usize> {
    let interval = interval.max(1);
    (0..blur.len())
        .step_by(interval)
        .map(|start| {
            let end = (start + interval).min(blur.len());
            (start..end)
                .min_by(|&a, &b| blur[a].total_cmp(&blur[b]).then(a.cmp(&b)))
                .unwrap()
        })
        .collect()
}

/// Visibility test for a point on a plane with normal `normal`: in front
/// of the camera, inside the image with a 1-pixel margin, not seen at a
/// grazing angle, and every pixel of its bilinear footprint agrees with the
/// depth of that plane along the pixel ray.
pub fn visible(
    point: &Point3,
    normal: &Vector3<f64>,
    pose: &Pose,
    depth: &DepthImage,
    intr: &Intrinsics,
    cfg: &PipelineConfig,
) -> bool {
    let x = pose.transform(point);
    let Ok([u, v]) = intr.project(&x) else {
        return false;
    };
    if !(u >= 1.0 && v >= 1.0 && u <= (depth.width as f64 - 2.0) && v <= (depth.height as f64 - 2.0)) {
        return false;
    }
    let ray = (point - pose.center()).normalize();
    if !((-ray.dot(normal)).abs() > cfg.vis_max_angle_deg.to_radians().cos()) {
        return false;
    }
    let n_c = pose.rotation * normal;
    let num = n_c.dot(&x);
    let (x0, y0) = (u.floor() as usize, v.floor() as usize);
    for (px, py) in [(x0, y0), (x0 + 1, y0), (x0, y0 + 1), (x0 + 1, y0 + 1)] {
        let d = Vector3::new((px as f64 - intr.cx) / intr.fx, (py as f64 - intr.cy) / intr.fy, 1.0);
        let plane_z = num / n_c.dot(&d);
        let z = depth.get(px, py) as f64;
        if !(z > 0.0) || !((z - plane_z).abs() < cfg.vis_depth_tol) {
            return false;
        }
    }
    true
}
