use std::path::Path;
use std::process::{Command, Output};

use planelite::bundle::{self, Stage};
use planelite::pipeline::RunReport;

const FAST: &[&str] = &[
    "--texel-density",
    "0.02",
    "--keyframe-interval",
    "1",
    "--max-outer",
    "4",
    "--grid",
    "10x8",
];

fn planelite(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_planelite"))
        .args(["-q"])
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path) {
    ok(planelite(&["synth", "--out", s(dir), "--frames", "6", "--edge-length", "0.05"]));
    for f in ["mesh.ply", "planes.json", "scene.json", "sequence/intrinsics.txt"] {
        assert!(dir.join(f).exists(), "{f}");
    }
}

#[test]
fn all_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let out = tmp.path().join("out");
    let (mesh, seq) = (data.join("mesh.ply"), data.join("sequence"));
    let mut args = vec![
        "all",
        "--mesh",
        s(&mesh),
        "--sequence",
        s(&seq),
        "--out",
        s(&out),
    ];
    args.extend(FAST);
    ok(planelite(&args));
    let r: RunReport = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert!(r.output_faces > 0 && r.output_faces < r.input_faces);
    assert_eq!(r.frames, 6);
    assert!(!r.energy_trace.is_empty());
    assert!(out.join("model.obj").exists());
}

#[test]
fn stop_after_partition() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let out = tmp.path().join("out");
    ok(planelite(&[
        "all",
        "--mesh",
        s(&data.join("mesh.ply")),
        "--sequence",
        s(&data.join("sequence")),
        "--out",
        s(&out),
        "--stop-after",
        "partition",
    ]));
    let mut names: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["clusters.ply", "report.json"]);
}

#[test]
fn stages_chain_through_bundles() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let out = tmp.path().join("out");
    let o = s(&out);
    let part = bundle::stage_dir(&out, Stage::Partition);
    let simp = bundle::stage_dir(&out, Stage::Simplify);
    let tex = bundle::stage_dir(&out, Stage::Texture);
    ok(planelite(&["partition", "--mesh", s(&data.join("mesh.ply")), "--out", o]));
    ok(planelite(&["simplify", "--input", s(&part), "--out", o]));
    let seq = data.join("sequence");
    let mut args = vec!["texture", "--input", s(&simp), "--sequence", s(&seq), "--out", o];
    args.extend(FAST);
    ok(planelite(&args));
    ok(planelite(&["geometry", "--input", s(&tex), "--out", o]));
    assert!(out.join("model.obj").exists());
    assert!(bundle::stage_dir(&out, Stage::Geometry).join(bundle::MANIFEST_FILE).exists());

    // wrong upstream bundle is an input error
    let wrong = planelite(&["geometry", "--input", s(&simp), "--out", o]);
    assert_eq!(wrong.status.code(), Some(2));

    // a corrupted texel position makes the solve fail numerically
    let blob = tex.join(bundle::TEXEL_FILE);
    let mut texels = bundle::read_texels(&blob).unwrap();
    texels[0].p.x = f64::NAN;
    bundle::write_texels(&blob, &texels).unwrap();
    let numeric = planelite(&["geometry", "--input", s(&tex), "--out", o]);
    assert_eq!(numeric.status.code(), Some(3), "{}", String::from_utf8_lossy(&numeric.stderr));
}

#[test]
fn config_file_and_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"simplify_ratio": 1.5}"#).unwrap();
    let out = tmp.path().join("out");
    // invalid config value
    let r = planelite(&["partition", "--mesh", "nowhere.ply", "--out", s(&out), "--config", s(&cfg)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("simplify_ratio"));
    // flag overrides file
    let r = planelite(&[
        "partition",
        "--mesh",
        "nowhere.ply",
        "--out",
        s(&out),
        "--config",
        s(&cfg),
        "--simplify-ratio",
        "0.02",
    ]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("nowhere.ply"));
}

#[test]
fn bad_arguments_are_input_errors() {
    assert_eq!(planelite(&["all", "--mesh", "x"]).status.code(), Some(2));
    let r = planelite(&["partition", "--mesh", "x.ply", "--out", "y", "--grid", "20by16"]);
    assert_eq!(r.status.code(), Some(2));
    let r = planelite(&["partition", "--mesh", "x.ply", "--out", "y", "--grid", "1x16"]);
    assert_eq!(r.status.code(), Some(2));
    let r = planelite(&["synth", "--out", "y", "--edge-length", "-1"]);
    assert_eq!(r.status.code(), Some(2));
}
