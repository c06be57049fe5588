//! Stage handoff bundles: a directory with `bundle.json`, `mesh.ply`, and
//! optionally `texels.bin` and `atlas.png`.
//!
//! `texels.bin` layout (little-endian): magic `PLTX`, `u32` format version,
//! `u64` record count, then one 80-byte record per texel:
//! `u32 plane_id, u32 face_id, f64 bary[3], f64 p[3], u32 uv[2], f32 color[3]`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::joint::EnergyRecord;
use crate::mesh::{load_mesh, save_ply, IndexedMesh, PlyFormat};
use crate::partition::PlaneProxy;
use crate::rgbd::{Image, Pose};
use crate::texel::TexelSample;

pub const SCHEMA_VERSION: u32 = 1;
pub const TEXEL_MAGIC: &[u8; 4] = b"PLTX";
pub const TEXEL_FORMAT_VERSION: u32 = 1;
pub const TEXEL_RECORD_BYTES: usize = 80;

pub const MANIFEST_FILE: &str = "bundle.json";
pub const MESH_FILE: &str = "mesh.ply";
pub const TEXEL_FILE: &str = "texels.bin";
pub const ATLAS_FILE: &str = "atlas.png";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Partition,
    Simplify,
    Texture,
    Geometry,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Partition, Stage::Simplify, Stage::Texture, Stage::Geometry];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Partition => "partition",
            Stage::Simplify => "simplify",
            Stage::Texture => "texture",
            Stage::Geometry => "geometry",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidInput(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeRecord {
    /// Index into the loaded sequence.
    pub index: usize,
    pub pose: Pose,
}

/// Contents of `bundle.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub stage: Stage,
    pub config: PipelineConfig,
    /// Face and vertex counts of the dense input mesh.
    pub input_faces: usize,
    pub input_vertices: usize,
    pub clusters_initial: usize,
    pub face_labels: Vec<usize>,
    pub proxies: Vec<PlaneProxy>,
    #[serde(default)]
    pub keyframes: Vec<KeyframeRecord>,
    #[serde(default)]
    pub face_uvs: Vec<[[f64; 2]; 3]>,
    #[serde(default)]
    pub energy_trace: Vec<EnergyRecord>,
}

#[derive(Debug, Clone)]
pub struct Bundle {
    pub manifest: Manifest,
    pub mesh: IndexedMesh,
    pub texels: Vec<TexelSample>,
    pub atlas: Option<Image>,
}

impl Bundle {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let m = &self.manifest;
        if m.face_labels.len() != self.mesh.num_faces() {
            return Err(Error::InvalidInput("bundle face labels do not match the mesh".into()));
        }
        let json_path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_vec_pretty(m).map_err(|e| Error::Json {
            path: json_path.clone(),
            source: e,
        })?;
        fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
        save_ply(&self.mesh, dir.join(MESH_FILE), PlyFormat::BinaryLittleEndian, None)?;
        let texel_path = dir.join(TEXEL_FILE);
        if self.texels.is_empty() {
            remove_if_present(&texel_path)?;
        } else {
            write_texels(&texel_path, &self.texels)?;
        }
        let atlas_path = dir.join(ATLAS_FILE);
        match &self.atlas {
            Some(a) => a.save_png(&atlas_path)?,
            None => remove_if_present(&atlas_path)?,
        }
        Ok(())
    }

    /// Reads a bundle, rejecting other schema versions and stages.
    pub fn read(dir: &Path, expected: Stage) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        if manifest.stage != expected {
            return Err(Error::StageMismatch {
                expected: expected.to_string(),
                found: manifest.stage.to_string(),
            });
        }
        let mesh = load_mesh(dir.join(MESH_FILE))?.mesh;
        if manifest.face_labels.len() != mesh.num_faces() {
            return Err(Error::parse(dir.join(MANIFEST_FILE), "face label count does not match mesh.ply"));
        }
        if let Some(&l) = manifest.face_labels.iter().find(|&&l| l >= manifest.proxies.len()) {
            return Err(Error::parse(dir.join(MANIFEST_FILE), format!("face label {l} has no proxy")));
        }
        let texel_path = dir.join(TEXEL_FILE);
        let texels = if texel_path.exists() { read_texels(&texel_path)? } else { Vec::new() };
        let atlas_path = dir.join(ATLAS_FILE);
        let atlas = if atlas_path.exists() { Some(Image::load(&atlas_path, false)?) } else { None };
        Ok(Self {
            manifest,
            mesh,
            texels,
            atlas,
        })
    }
}

fn remove_if_present(path: &Path) -> Result<()> {
    match fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Parses `bundle.json`, checking the schema version before anything else.
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let json_err = |e| Error::Json {
        path: path.clone(),
        source: e,
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(json_err)?;
    let found = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::parse(&path, "missing schema_version"))?;
    if found != SCHEMA_VERSION as u64 {
        return Err(Error::SchemaMismatch {
            expected: SCHEMA_VERSION,
            found: found.min(u32::MAX as u64) as u32,
        });
    }
    serde_json::from_value(value).map_err(json_err)
}

pub fn write_texels(path: &Path, texels: &[TexelSample]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(TEXEL_MAGIC).map_err(io)?;
    w.write_all(&TEXEL_FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(texels.len() as u64).to_le_bytes()).map_err(io)?;
    let mut rec = [0u8; TEXEL_RECORD_BYTES];
    for t in texels {
        encode_texel(t, &mut rec)?;
        w.write_all(&rec).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_texels(path: &Path) -> Result<Vec<TexelSample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut r = BufReader::new(file);
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|_| Error::parse(path, "truncated texel header"))?;
    if &header[0..4] != TEXEL_MAGIC {
        return Err(Error::parse(path, "not a texel file (bad magic)"));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != TEXEL_FORMAT_VERSION {
        return Err(Error::parse(path, format!("unsupported texel format version {version}")));
    }
    let count = u64::from_le_bytes(header[8..16].try_into().unwrap());
    if len != 16 + count * TEXEL_RECORD_BYTES as u64 {
        return Err(Error::parse(path, format!("file size does not match {count} records")));
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut rec = [0u8; TEXEL_RECORD_BYTES];
    for _ in 0..count {
        r.read_exact(&mut rec).map_err(|e| Error::io(path, e))?;
        out.push(decode_texel(&rec));
    }
    Ok(out)
}

fn encode_texel(t: &TexelSample, out: &mut [u8; TEXEL_RECORD_BYTES]) -> Result<()> {
    let id = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::InvalidInput(format!("{what} {v} does not fit the texel format")))
    };
    let mut at = 0;
    let mut put = |bytes: &[u8]| {
        out[at..at + bytes.len()].copy_from_slice(bytes);
        at += bytes.len();
    };
    put(&id(t.plane, "plane id")?.to_le_bytes());
    put(&id(t.face, "face id")?.to_le_bytes());
    for b in t.bary {
        put(&b.to_le_bytes());
    }
    for c in t.p.iter() {
        put(&c.to_le_bytes());
    }
    for u in t.uv {
        put(&u.to_le_bytes());
    }
    for c in t.color {
        put(&c.to_le_bytes());
    }
    Ok(())
}

fn decode_texel(rec: &[u8; TEXEL_RECORD_BYTES]) -> TexelSample {
    let u32_at = |i: usize| u32::from_le_bytes(rec[i..i + 4].try_into().unwrap());
    let f64_at = |i: usize| f64::from_le_bytes(rec[i..i + 8].try_into().unwrap());
    let f32_at = |i: usize| f32::from_le_bytes(rec[i..i + 4].try_into().unwrap());
    TexelSample {
        plane: u32_at(0) as usize,
        face: u32_at(4) as usize,
        bary: [f64_at(8), f64_at(16), f64_at(24)],
        p: crate::mesh::Point3::new(f64_at(32), f64_at(40), f64_at(48)),
        uv: [u32_at(56), u32_at(60)],
        color: [f32_at(64), f32_at(68), f32_at(72)],
    }
}

/// Where a stage bundle lives under an output directory.
pub fn stage_dir(out: &Path, stage: Stage) -> PathBuf {
    out.join(format!("{stage}.bundle"))
}
