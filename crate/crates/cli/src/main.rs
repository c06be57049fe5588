use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use planelite::bundle::{self, Stage};
use planelite::pipeline;
use planelite::rgbd::SequenceFormat;
use planelite::synth::{self, SceneSpec};
use planelite::{par, Error, PipelineConfig};

#[derive(Parser, Debug)]
#[command(name = "planelite", version, about = "Planar simplification and texture optimization of RGB-D reconstructions")]
struct Cli {
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0, global = true)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every stage from a dense mesh and an RGB-D sequence.
    All {
        /// Dense input mesh (PLY or OBJ).
        #[arg(long)]
        mesh: PathBuf,
        /// Sequence directory.
        #[arg(long)]
        sequence: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Stop after this stage (partition, simplify, texture, geometry).
        #[arg(long)]
        stop_after: Option<Stage>,
        #[command(flatten)]
        seq: SeqArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Partition and merge planes; writes partition.bundle.
    Partition {
        #[arg(long)]
        mesh: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Simplify a partition bundle; writes simplify.bundle.
    Simplify {
        /// Partition bundle directory.
        #[arg(long)]
        input: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Build texels and run the joint optimization; writes texture.bundle.
    Texture {
        /// Simplify bundle directory.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        sequence: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seq: SeqArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Refine vertices against the optimized planes and export the model.
    Geometry {
        /// Texture bundle directory.
        #[arg(long)]
        input: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Render a synthetic room with ground truth.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 12)]
        frames: usize,
        /// Dense mesh edge length, meters.
        #[arg(long, default_value_t = 0.02)]
        edge_length: f64,
        /// Depth noise sigma, meters.
        #[arg(long, default_value_t = 0.0)]
        depth_noise: f64,
        /// Image blur sigma, pixels.
        #[arg(long, default_value_t = 0.0)]
        blur: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct SeqArgs {
    /// Sequence layout: tum, icl or bundlefusion.
    #[arg(long, default_value = "tum")]
    format: SequenceFormat,
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Merge normal threshold, degrees.
    #[arg(long)]
    eps_normal: Option<f64>,
    /// Merge distance threshold, meters.
    #[arg(long)]
    eps_distance: Option<f64>,
    /// Merge view-angle cosine bound.
    #[arg(long)]
    eps_cos: Option<f64>,
    /// Partition compactness weight.
    #[arg(long)]
    alpha: Option<f64>,
    /// Texel spacing, meters.
    #[arg(long)]
    texel_density: Option<f64>,
    /// Frames per keyframe window.
    #[arg(long)]
    keyframe_interval: Option<usize>,
    /// Correction-grid smoothness weight.
    #[arg(long)]
    lambda2: Option<f64>,
    /// Texel-to-vertex weight of the geometry solve.
    #[arg(long)]
    lambda3: Option<f64>,
    /// Target output/input face ratio.
    #[arg(long)]
    simplify_ratio: Option<f64>,
    #[arg(long)]
    min_cluster_faces: Option<usize>,
    /// Outer iterations of the joint optimization.
    #[arg(long)]
    max_outer: Option<usize>,
    /// Relative energy decrease that stops the joint optimization.
    #[arg(long)]
    tol: Option<f64>,
    /// Depth test tolerance, meters.
    #[arg(long)]
    vis_depth_tol: Option<f64>,
    /// Correction grid vertices as COLSxROWS.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<(usize, usize)>,
    /// Optimize on luminance only.
    #[arg(long)]
    grayscale: bool,
    /// Hold the first keyframe pose fixed.
    #[arg(long)]
    anchor_first_frame: bool,
    /// Depth units per meter.
    #[arg(long)]
    depth_scale: Option<f64>,
    /// RNG seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (c, r) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected COLSxROWS, got {s:?}"))?;
    let c = c.trim().parse().map_err(|e| format!("bad grid columns: {e}"))?;
    let r = r.trim().parse().map_err(|e| format!("bad grid rows: {e}"))?;
    Ok((c, r))
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => {
                let bytes = std::fs::read(p).map_err(|e| Error::Io {
                    path: p.clone(),
                    source: e,
                })?;
                serde_json::from_slice(&bytes).map_err(|e| Error::Json {
                    path: p.clone(),
                    source: e,
                })?
            }
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {$(
                if let Some(v) = self.$flag { cfg.$field = v; }
            )*};
        }
        set!(
            eps_normal => eps_normal_deg,
            eps_distance => eps_distance,
            eps_cos => eps_cos,
            alpha => alpha,
            texel_density => texel_density,
            keyframe_interval => keyframe_interval,
            lambda2 => lambda2,
            lambda3 => lambda3,
            simplify_ratio => simplify_ratio,
            min_cluster_faces => min_cluster_faces,
            max_outer => max_outer,
            tol => tol,
            vis_depth_tol => vis_depth_tol,
            seed => seed
        );
        if let Some((c, r)) = self.grid {
            cfg.grid_cols = c;
            cfg.grid_rows = r;
        }
        if self.grayscale {
            cfg.grayscale = true;
        }
        if self.anchor_first_frame {
            cfg.anchor_first_frame = true;
        }
        if self.depth_scale.is_some() {
            cfg.depth_scale = self.depth_scale;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::All {
            mesh,
            sequence,
            out,
            stop_after,
            seq,
            cfg,
        } => {
            let cfg = cfg.resolve()?;
            let r = pipeline::run_all(&mesh, &sequence, seq.format, &out, &cfg, stop_after)?;
            info!(
                "{} -> {} faces (ratio {:.4}), {} clusters, report in {}",
                r.input_faces,
                r.output_faces,
                r.face_ratio,
                r.clusters_merged,
                out.join(pipeline::REPORT_FILE).display()
            );
            for w in &r.warnings {
                log::warn!("{w}");
            }
        }
        Command::Partition { mesh, out, cfg } => {
            let cfg = cfg.resolve()?;
            let b = pipeline::run_partition(&mesh, &out, &cfg)?;
            done(&out, Stage::Partition, b.manifest.proxies.len());
        }
        Command::Simplify { input, out, cfg } => {
            let cfg = cfg.resolve()?;
            let b = pipeline::run_simplify(&input, &out, &cfg)?;
            info!("{} faces", b.mesh.num_faces());
            done(&out, Stage::Simplify, b.manifest.proxies.len());
        }
        Command::Texture {
            input,
            sequence,
            out,
            seq,
            cfg,
        } => {
            let cfg = cfg.resolve()?;
            let b = pipeline::run_texture(&input, &sequence, seq.format, &out, &cfg)?;
            info!("{} texels", b.texels.len());
            done(&out, Stage::Texture, b.manifest.proxies.len());
        }
        Command::Geometry { input, out, cfg } => {
            let cfg = cfg.resolve()?;
            let (_, geo, obj) = pipeline::run_geometry(&input, &out, &cfg)?;
            info!(
                "vertex energy {:.3e} -> {:.3e}; model in {}",
                geo.e_vert_before(),
                geo.e_vert_after(),
                obj.display()
            );
        }
        Command::Synth {
            out,
            frames,
            edge_length,
            depth_noise,
            blur,
            seed,
        } => {
            let mut spec = SceneSpec::cube_room(frames);
            spec.edge_length = edge_length;
            spec.noise.depth_sigma = depth_noise;
            spec.noise.blur_sigma = blur;
            spec.noise.seed = seed;
            spec.validate()?;
            let scene = synth::write_dataset(&spec, &out)?;
            info!(
                "{} faces, {} frames written to {}",
                scene.mesh.num_faces(),
                frames,
                out.display()
            );
        }
    }
    Ok(())
}

fn done(out: &Path, stage: Stage, planes: usize) {
    info!("{planes} planes; bundle in {}", bundle::stage_dir(out, stage).display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet {
        log::LevelFilter::Warn
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Info,
            1 => log::LevelFilter::Debug,
            _ => log::LevelFilter::Trace,
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp_millis()
        .init();
    let threads = cli.threads;
    let result = if threads > 0 {
        par::with_threads(threads, || run(cli.command))
    } else {
        run(cli.command)
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
