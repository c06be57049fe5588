use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use planelite::par::with_threads;
use planelite::pipeline::{partition_stage, simplify_stage};
use planelite::synth::{self, SceneSpec};
use planelite::texel::build_atlas;
use planelite::PipelineConfig;

fn thread_counts() -> Vec<usize> {
    let n = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    if n > 1 {
        vec![1, n]
    } else {
        vec![1]
    }
}

fn stages(c: &mut Criterion) {
    let cfg = PipelineConfig::default();
    let mut spec = SceneSpec::cube_room(8);
    spec.edge_length = 0.04;
    let scene = synth::build_scene(&spec).unwrap();
    let part = partition_stage(&scene.mesh, &cfg).unwrap();

    let mut g = c.benchmark_group("partition");
    g.sample_size(10);
    for t in thread_counts() {
        g.bench_with_input(BenchmarkId::from_parameter(t), &t, |b, &t| {
            b.iter(|| with_threads(t, || partition_stage(&scene.mesh, &cfg).unwrap()))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("simplify");
    g.sample_size(10);
    for t in thread_counts() {
        g.bench_with_input(BenchmarkId::from_parameter(t), &t, |b, &t| {
            b.iter(|| with_threads(t, || simplify_stage(&scene.mesh, &part.clusters, &cfg).unwrap()))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("atlas");
    g.sample_size(10);
    for t in thread_counts() {
        g.bench_with_input(BenchmarkId::from_parameter(t), &t, |b, &t| {
            b.iter(|| with_threads(t, || build_atlas(&scene.mesh, &scene.clusters(), 0.01).unwrap()))
        });
    }
    g.finish();
}

fn joint_iteration(c: &mut Criterion) {
    let cfg = PipelineConfig::default();
    let spec = SceneSpec::cube_room(8);
    let (mut state, _) = synth::texture_problem(&spec, 0.02, (0.5, 5.0), 1, &cfg).unwrap();
    state.initialize().unwrap();
    let mut g = c.benchmark_group("joint_iteration");
    g.sample_size(10);
    for t in thread_counts() {
        g.bench_with_input(BenchmarkId::from_parameter(t), &t, |b, &t| {
            b.iter(|| {
                with_threads(t, || {
                    let mut s = state.clone();
                    s.update_colors();
                    s.gn_update_planes();
                    s.gn_update_poses_and_grids();
                    s.energies(1)
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, stages, joint_iteration);
criterion_main!(benches);
