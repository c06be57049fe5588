//! End-to-end driver: partition, merge, simplify, texture atlas, keyframes,
//! joint texture optimization, geometry refinement, export.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::bundle::{self, Bundle, KeyframeRecord, Manifest, Stage, SCHEMA_VERSION};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::geom::{optimize_geometry, GeomReport};
use crate::joint::{write_trace_csv, EnergyRecord, JointFrame, TexOptState};
use crate::mesh::{load_mesh, save_ply, save_textured_mesh, IndexedMesh, PlyFormat};
use crate::partition::{merge_planes, partition_initial, ClusterSet};
use crate::rgbd::{load_sequence, select_keyframes, Image, Sequence, SequenceFormat};
use crate::simplify::{make_plan, simplify_two_step};
use crate::texel::build_atlas;

pub const REPORT_FILE: &str = "report.json";
pub const CLUSTER_PLY: &str = "clusters.ply";
pub const ENERGY_CSV: &str = "energy.csv";
pub const MODEL_OBJ: &str = "model.obj";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

/// Summary of one run. Everything except `stage_seconds` is a
/// deterministic function of inputs and config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub stage_seconds: Vec<StageTime>,
    pub stopped_after: Option<Stage>,
    pub input_vertices: usize,
    pub input_faces: usize,
    pub output_vertices: usize,
    pub output_faces: usize,
    pub face_ratio: f64,
    pub clusters_initial: usize,
    pub clusters_merged: usize,
    pub frames: usize,
    pub keyframes: Vec<usize>,
    pub texels: usize,
    pub texels_observed: usize,
    pub lambda1: f64,
    pub energy_trace: Vec<EnergyRecord>,
    pub geometry: Option<GeomReport>,
    pub warnings: Vec<String>,
    /// Files written, relative to the output directory.
    pub artifacts: Vec<String>,
}

impl RunReport {
    /// The report with wall-clock times removed.
    pub fn metrics(&self) -> RunReport {
        RunReport {
            stage_seconds: Vec::new(),
            ..self.clone()
        }
    }

    pub fn seconds(&self, stage: &str) -> Option<f64> {
        self.stage_seconds.iter().find(|s| s.stage == stage).map(|s| s.seconds)
    }

    fn time(&mut self, stage: &str, t0: Instant) {
        let seconds = t0.elapsed().as_secs_f64();
        info!("stage {stage}: {seconds:.2} s");
        self.stage_seconds.push(StageTime {
            stage: stage.into(),
            seconds,
        });
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

/// Result of the partition stage on the dense mesh.
#[derive(Debug, Clone)]
pub struct Partitioned {
    pub clusters: ClusterSet,
    pub clusters_initial: usize,
}

pub fn partition_stage(mesh: &IndexedMesh, cfg: &PipelineConfig) -> Result<Partitioned> {
    let initial = partition_initial(mesh, cfg)?;
    let clusters_initial = initial.num_clusters();
    let clusters = merge_planes(mesh, initial, cfg)?;
    info!(
        "partition: {} faces, {clusters_initial} clusters, {} after merging",
        mesh.num_faces(),
        clusters.num_clusters()
    );
    Ok(Partitioned {
        clusters,
        clusters_initial,
    })
}

/// Simplified mesh with per-face labels; clusters left without faces are
/// dropped and the labels renumbered.
pub fn simplify_stage(mesh: &IndexedMesh, clusters: &ClusterSet, cfg: &PipelineConfig) -> Result<(IndexedMesh, ClusterSet)> {
    let plan = make_plan(mesh, clusters, cfg.simplify_ratio, cfg.min_cluster_faces);
    let s = simplify_two_step(mesh, clusters, &plan)?;
    let set = drop_empty_clusters(ClusterSet {
        face_labels: s.face_labels,
        proxies: clusters.proxies.clone(),
    });
    info!(
        "simplify: {} -> {} faces ({} after step 1), {} clusters",
        mesh.num_faces(),
        s.mesh.num_faces(),
        s.step1_faces,
        set.num_clusters()
    );
    Ok((s.mesh, set))
}

pub fn drop_empty_clusters(set: ClusterSet) -> ClusterSet {
    let mut used = vec![false; set.proxies.len()];
    for &l in &set.face_labels {
        used[l] = true;
    }
    let mut remap = vec![usize::MAX; used.len()];
    let mut proxies = Vec::new();
    for (i, &u) in used.iter().enumerate() {
        if u {
            remap[i] = proxies.len();
            proxies.push(set.proxies[i]);
        }
    }
    ClusterSet {
        face_labels: set.face_labels.iter().map(|&l| remap[l]).collect(),
        proxies,
    }
}

/// Output of the joint optimization on the simplified mesh.
#[derive(Debug, Clone)]
pub struct Textured {
    /// Labels of the simplified mesh with optimized proxies.
    pub clusters: ClusterSet,
    pub texels: Vec<crate::texel::TexelSample>,
    pub atlas: Image,
    pub face_uvs: Vec<[[f64; 2]; 3]>,
    pub keyframes: Vec<KeyframeRecord>,
    pub trace: Vec<EnergyRecord>,
    pub lambda1: f64,
    pub texels_observed: usize,
    pub sequence_frames: usize,
}

pub fn texture_stage(mesh: &IndexedMesh, clusters: &ClusterSet, seq: &Sequence, cfg: &PipelineConfig) -> Result<Textured> {
    let atlas = build_atlas(mesh, clusters, cfg.texel_density)?;
    let blur: Vec<f64> = seq.frames.iter().map(|f| f.blur).collect();
    let keys = select_keyframes(&blur, cfg.keyframe_interval);
    info!(
        "texture: {} texels on a {}x{} atlas, {} keyframes of {} frames",
        atlas.texels.len(),
        atlas.layout.width,
        atlas.layout.height,
        keys.len(),
        seq.frames.len()
    );
    let frames: Vec<JointFrame> = keys
        .iter()
        .map(|&i| {
            let f = &seq.frames[i];
            let image = if cfg.grayscale { f.color.to_gray() } else { f.color.clone() };
            JointFrame::new(i, f.pose, image, f.depth.clone(), cfg)
        })
        .collect();
    let mut st = TexOptState::new(frames, clusters.proxies.clone(), atlas.texels.clone(), seq.intrinsics, cfg)?;
    st.optimize()?;
    if cfg.grayscale && seq.frames.first().is_some_and(|f| f.color.channels == 3) {
        st.recolor(keys.iter().map(|&i| seq.frames[i].color.clone()).collect())?;
    }
    let texels = st.colored_texels();
    let image = atlas.render_image(&texels);
    Ok(Textured {
        clusters: ClusterSet {
            face_labels: clusters.face_labels.clone(),
            proxies: st.proxies.clone(),
        },
        face_uvs: atlas.face_uvs(mesh),
        atlas: image,
        keyframes: st
            .frames
            .iter()
            .map(|f| KeyframeRecord {
                index: f.index,
                pose: f.pose,
            })
            .collect(),
        trace: st.trace.clone(),
        lambda1: st.lambda1,
        texels_observed: st.observed.iter().filter(|&&o| o).count(),
        sequence_frames: seq.frames.len(),
        texels,
    })
}

pub fn geometry_stage(mesh: &IndexedMesh, textured: &Textured, cfg: &PipelineConfig) -> Result<(IndexedMesh, GeomReport)> {
    optimize_geometry(
        mesh,
        &textured.texels,
        &textured.clusters.proxies,
        cfg.lambda3,
        cfg.cholesky_budget_bytes,
    )
}

/// What a stage left behind, kept so a later failure can dump it.
enum Completed {
    None,
    Partition(Bundle),
    Simplify(Bundle),
    Texture(Bundle),
}

fn manifest(stage: Stage, cfg: &PipelineConfig, report: &RunReport, clusters: &ClusterSet) -> Manifest {
    Manifest {
        schema_version: SCHEMA_VERSION,
        stage,
        config: cfg.clone(),
        input_faces: report.input_faces,
        input_vertices: report.input_vertices,
        clusters_initial: report.clusters_initial,
        face_labels: clusters.face_labels.clone(),
        proxies: clusters.proxies.clone(),
        keyframes: Vec::new(),
        face_uvs: Vec::new(),
        energy_trace: Vec::new(),
    }
}

fn texture_bundle(mesh: IndexedMesh, t: &Textured, cfg: &PipelineConfig, report: &RunReport) -> Bundle {
    let mut m = manifest(Stage::Texture, cfg, report, &t.clusters);
    m.keyframes = t.keyframes.clone();
    m.face_uvs = t.face_uvs.clone();
    m.energy_trace = t.trace.clone();
    Bundle {
        manifest: m,
        mesh,
        texels: t.texels.clone(),
        atlas: Some(t.atlas.clone()),
    }
}

fn textured_from_bundle(b: &Bundle) -> Result<Textured> {
    let m = &b.manifest;
    let atlas = b
        .atlas
        .clone()
        .ok_or_else(|| Error::InvalidInput("texture bundle has no atlas image".into()))?;
    if b.texels.is_empty() {
        return Err(Error::InvalidInput("texture bundle has no texels".into()));
    }
    if m.face_uvs.len() != b.mesh.num_faces() {
        return Err(Error::InvalidInput("texture bundle uv count does not match the mesh".into()));
    }
    Ok(Textured {
        clusters: ClusterSet {
            face_labels: m.face_labels.clone(),
            proxies: m.proxies.clone(),
        },
        texels: b.texels.clone(),
        atlas,
        face_uvs: m.face_uvs.clone(),
        keyframes: m.keyframes.clone(),
        trace: m.energy_trace.clone(),
        lambda1: 0.0,
        texels_observed: 0,
        sequence_frames: 0,
    })
}

fn stage_error(stage: Stage, e: Error) -> Error {
    Error::Stage {
        stage: stage.name(),
        source: Box::new(e),
    }
}

fn rel(out: &Path, p: &Path) -> String {
    p.strip_prefix(out).unwrap_or(p).to_string_lossy().into_owned()
}

/// Runs every stage on an in-memory mesh. The sequence is requested only
/// when the texture stage is reached. On a stage failure the last
/// completed stage's bundle is written to `<out>/<stage>.bundle` and the
/// error names the failing stage.
pub fn run_pipeline(
    mesh: IndexedMesh,
    sequence: impl FnOnce() -> Result<Sequence>,
    out: &Path,
    cfg: &PipelineConfig,
    stop_after: Option<Stage>,
) -> Result<RunReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut report = RunReport {
        schema_version: SCHEMA_VERSION,
        input_vertices: mesh.num_vertices(),
        input_faces: mesh.num_faces(),
        ..Default::default()
    };
    let mut completed = Completed::None;
    let result = run_stages(mesh, sequence, out, cfg, stop_after, &mut report, &mut completed);
    if let Err(e) = result {
        let dump = match completed {
            Completed::None => None,
            Completed::Partition(b) | Completed::Simplify(b) | Completed::Texture(b) => Some(b),
        };
        if let Some(b) = dump {
            let dir = bundle::stage_dir(out, b.manifest.stage);
            match b.write(&dir) {
                Ok(()) => warn!("wrote completed-stage bundle to {}", dir.display()),
                Err(w) => warn!("could not dump completed-stage bundle: {w}"),
            }
        }
        return Err(e);
    }
    report.stopped_after = stop_after;
    let path = out.join(REPORT_FILE);
    report.artifacts.push(REPORT_FILE.into());
    report.write(&path)?;
    Ok(report)
}

fn run_stages(
    mesh: IndexedMesh,
    sequence: impl FnOnce() -> Result<Sequence>,
    out: &Path,
    cfg: &PipelineConfig,
    stop_after: Option<Stage>,
    report: &mut RunReport,
    completed: &mut Completed,
) -> Result<()> {
    let t0 = Instant::now();
    let part = partition_stage(&mesh, cfg).map_err(|e| stage_error(Stage::Partition, e))?;
    report.time("partition", t0);
    report.clusters_initial = part.clusters_initial;
    report.clusters_merged = part.clusters.num_clusters();
    let ply = out.join(CLUSTER_PLY);
    save_ply(&mesh, &ply, PlyFormat::BinaryLittleEndian, Some(&part.clusters.face_colors()))?;
    report.artifacts.push(rel(out, &ply));
    report.output_vertices = mesh.num_vertices();
    report.output_faces = mesh.num_faces();
    report.face_ratio = 1.0;
    if stop_after == Some(Stage::Partition) {
        return Ok(());
    }
    *completed = Completed::Partition(Bundle {
        manifest: manifest(Stage::Partition, cfg, report, &part.clusters),
        mesh: mesh.clone(),
        texels: Vec::new(),
        atlas: None,
    });

    let t0 = Instant::now();
    let (simple, clusters) = simplify_stage(&mesh, &part.clusters, cfg).map_err(|e| stage_error(Stage::Simplify, e))?;
    drop(mesh);
    report.time("simplify", t0);
    report.output_vertices = simple.num_vertices();
    report.output_faces = simple.num_faces();
    report.face_ratio = simple.num_faces() as f64 / report.input_faces.max(1) as f64;
    if stop_after == Some(Stage::Simplify) {
        let b = Bundle {
            manifest: manifest(Stage::Simplify, cfg, report, &clusters),
            mesh: simple,
            texels: Vec::new(),
            atlas: None,
        };
        let dir = bundle::stage_dir(out, Stage::Simplify);
        b.write(&dir)?;
        report.artifacts.push(rel(out, &dir));
        return Ok(());
    }
    *completed = Completed::Simplify(Bundle {
        manifest: manifest(Stage::Simplify, cfg, report, &clusters),
        mesh: simple.clone(),
        texels: Vec::new(),
        atlas: None,
    });

    let t0 = Instant::now();
    let seq = sequence()?;
    report.time("load_sequence", t0);
    let t0 = Instant::now();
    let textured = texture_stage(&simple, &clusters, &seq, cfg).map_err(|e| stage_error(Stage::Texture, e))?;
    drop(seq);
    report.time("texture", t0);
    record_texture(report, &textured);
    let csv = out.join(ENERGY_CSV);
    write_trace_csv(&csv, &textured.trace)?;
    report.artifacts.push(rel(out, &csv));
    if stop_after == Some(Stage::Texture) {
        let dir = bundle::stage_dir(out, Stage::Texture);
        texture_bundle(simple, &textured, cfg, report).write(&dir)?;
        report.artifacts.push(rel(out, &dir));
        return Ok(());
    }
    *completed = Completed::Texture(texture_bundle(simple.clone(), &textured, cfg, report));

    let t0 = Instant::now();
    let (refined, geo) = geometry_stage(&simple, &textured, cfg).map_err(|e| stage_error(Stage::Geometry, e))?;
    report.time("geometry", t0);
    report.geometry = Some(geo);
    let t0 = Instant::now();
    export(out, &refined, &textured, report)?;
    report.time("export", t0);
    Ok(())
}

fn record_texture(report: &mut RunReport, t: &Textured) {
    report.keyframes = t.keyframes.iter().map(|k| k.index).collect();
    report.frames = t.sequence_frames;
    report.texels = t.texels.len();
    report.texels_observed = t.texels_observed;
    report.lambda1 = t.lambda1;
    report.energy_trace = t.trace.clone();
    let unseen = t.texels.len().saturating_sub(t.texels_observed);
    if t.texels_observed > 0 && unseen > 0 {
        report
            .warnings
            .push(format!("{unseen} texels not visible in any keyframe (colored by atlas dilation)"));
    }
    if let (Some(a), Some(b)) = (t.trace.first(), t.trace.last()) {
        if b.e_tex > a.e_tex {
            report.warnings.push("energy trace increased".into());
        }
    }
}

fn export(out: &Path, mesh: &IndexedMesh, t: &Textured, report: &mut RunReport) -> Result<()> {
    let files = save_textured_mesh(mesh, &t.atlas.to_rgb8(), &t.face_uvs, out.join(MODEL_OBJ))?;
    for p in [&files.obj, &files.mtl, &files.png] {
        report.artifacts.push(rel(out, p));
    }
    Ok(())
}

/// Loads the dense mesh and sequence from disk and runs [`run_pipeline`].
pub fn run_all(
    mesh_path: &Path,
    sequence_dir: &Path,
    format: SequenceFormat,
    out: &Path,
    cfg: &PipelineConfig,
    stop_after: Option<Stage>,
) -> Result<RunReport> {
    cfg.validate()?;
    let loaded = load_mesh(mesh_path)?;
    let dropped = loaded.dropped_faces;
    // color is always loaded; grayscale optimization converts per keyframe
    let load_cfg = PipelineConfig {
        grayscale: false,
        ..cfg.clone()
    };
    let mut report = run_pipeline(
        loaded.mesh,
        || load_sequence(sequence_dir, format, &load_cfg),
        out,
        cfg,
        stop_after,
    )?;
    if dropped > 0 {
        report.warnings.push(format!("{dropped} degenerate input faces dropped"));
        report.write(&out.join(REPORT_FILE))?;
    }
    Ok(report)
}

/// Stage entry points with bundle handoff.
pub fn run_partition(mesh_path: &Path, out: &Path, cfg: &PipelineConfig) -> Result<Bundle> {
    cfg.validate()?;
    let mesh = load_mesh(mesh_path)?.mesh;
    let part = partition_stage(&mesh, cfg).map_err(|e| stage_error(Stage::Partition, e))?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    save_ply(&mesh, out.join(CLUSTER_PLY), PlyFormat::BinaryLittleEndian, Some(&part.clusters.face_colors()))?;
    let report = RunReport {
        input_faces: mesh.num_faces(),
        input_vertices: mesh.num_vertices(),
        clusters_initial: part.clusters_initial,
        ..Default::default()
    };
    let b = Bundle {
        manifest: manifest(Stage::Partition, cfg, &report, &part.clusters),
        mesh,
        texels: Vec::new(),
        atlas: None,
    };
    b.write(&bundle::stage_dir(out, Stage::Partition))?;
    Ok(b)
}

fn report_from(m: &Manifest) -> RunReport {
    RunReport {
        input_faces: m.input_faces,
        input_vertices: m.input_vertices,
        clusters_initial: m.clusters_initial,
        ..Default::default()
    }
}

pub fn run_simplify(input: &Path, out: &Path, cfg: &PipelineConfig) -> Result<Bundle> {
    cfg.validate()?;
    let b = Bundle::read(input, Stage::Partition)?;
    let clusters = ClusterSet {
        face_labels: b.manifest.face_labels.clone(),
        proxies: b.manifest.proxies.clone(),
    };
    let (simple, clusters) = simplify_stage(&b.mesh, &clusters, cfg).map_err(|e| stage_error(Stage::Simplify, e))?;
    let nb = Bundle {
        manifest: manifest(Stage::Simplify, cfg, &report_from(&b.manifest), &clusters),
        mesh: simple,
        texels: Vec::new(),
        atlas: None,
    };
    nb.write(&bundle::stage_dir(out, Stage::Simplify))?;
    Ok(nb)
}

pub fn run_texture(
    input: &Path,
    sequence_dir: &Path,
    format: SequenceFormat,
    out: &Path,
    cfg: &PipelineConfig,
) -> Result<Bundle> {
    cfg.validate()?;
    let b = Bundle::read(input, Stage::Simplify)?;
    let clusters = ClusterSet {
        face_labels: b.manifest.face_labels.clone(),
        proxies: b.manifest.proxies.clone(),
    };
    let load_cfg = PipelineConfig {
        grayscale: false,
        ..cfg.clone()
    };
    let seq = load_sequence(sequence_dir, format, &load_cfg)?;
    let t = texture_stage(&b.mesh, &clusters, &seq, cfg).map_err(|e| stage_error(Stage::Texture, e))?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_trace_csv(&out.join(ENERGY_CSV), &t.trace)?;
    let nb = texture_bundle(b.mesh, &t, cfg, &report_from(&b.manifest));
    nb.write(&bundle::stage_dir(out, Stage::Texture))?;
    Ok(nb)
}

/// Geometry refinement and export; returns the refined mesh and the OBJ path.
pub fn run_geometry(input: &Path, out: &Path, cfg: &PipelineConfig) -> Result<(IndexedMesh, GeomReport, PathBuf)> {
    cfg.validate()?;
    let b = Bundle::read(input, Stage::Texture)?;
    let t = textured_from_bundle(&b)?;
    let (refined, geo) = geometry_stage(&b.mesh, &t, cfg).map_err(|e| stage_error(Stage::Geometry, e))?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut report = report_from(&b.manifest);
    export(out, &refined, &t, &mut report)?;
    let mut m = b.manifest.clone();
    m.stage = Stage::Geometry;
    Bundle {
        manifest: m,
        mesh: refined.clone(),
        texels: b.texels,
        atlas: b.atlas,
    }
    .write(&bundle::stage_dir(out, Stage::Geometry))?;
    Ok((refined, geo, out.join(MODEL_OBJ)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::PlaneProxy;
    use crate::mesh::Point3;
    use nalgebra::Vector3;

    #[test]
    fn empty_clusters_are_dropped() {
        let p = PlaneProxy::from_point_normal(Point3::zeros(), Vector3::z());
        let set = ClusterSet {
            face_labels: vec![2, 0, 2],
            proxies: vec![p, p, p],
        };
        let d = drop_empty_clusters(set);
        assert_eq!(d.face_labels, vec![1, 0, 1]);
        assert_eq!(d.proxies.len(), 2);
    }

    #[test]
    fn metrics_drop_timings_only() {
        let mut r = RunReport {
            input_faces: 10,
            ..Default::default()
        };
        r.time("x", Instant::now());
        let m = r.metrics();
        assert!(m.stage_seconds.is_empty());
        assert_eq!(m.input_faces, 10);
        assert!(r.seconds("x").is_some());
    }
}
