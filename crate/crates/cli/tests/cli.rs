use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use supr::fitting::{fit, self_test_problems, shape_sweep, FitProblem, FreeParameters};
use supr::io::mesh::encode_mesh;
use supr::io::{encode, load_container, read_mesh, write_mesh, MeshFormat};
use supr::params::{write_json, CoefficientFile, ContactFile, MaskFile, PartFile};
use supr::synth::{synth_model, SynthOptions};
use supr::{separate, ContactState, ModelContainer, PoseState};
use tempfile::TempDir;

fn supr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_supr")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = supr(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
    model_path: PathBuf,
    model: ModelContainer,
}

impl Fixture {
    fn new(seed: u64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let model_path = dir.path().join("toy.supr");
        ok(&["synth", "--out", s(&model_path), "--seed", &seed.to_string()]);
        let model = load_container(&model_path).unwrap();
        Self { dir, model_path, model }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Deterministic non-trivial parameters written as files.
    fn params(&self) -> (PathBuf, PathBuf, PathBuf, supr::ModelParams) {
        let k = self.model.n_joints();
        let pose = PoseState {
            joint_rotations: (0..k).map(|j| [0.1 * j as f64, -0.05, 0.02 * j as f64]).collect(),
            global_translation: [0.1, -0.2, 0.3],
        };
        let beta: Vec<f64> = (0..6).map(|i| 0.3 - 0.1 * i as f64).collect();
        let psi = vec![0.5, -0.25];
        let (pp, sp, ep) = (self.path("pose.json"), self.path("shape.json"), self.path("expr.json"));
        write_json(&pp, &pose).unwrap();
        write_json(&sp, &CoefficientFile { coefficients: beta.clone() }).unwrap();
        write_json(&ep, &CoefficientFile { coefficients: psi.clone() }).unwrap();
        (pp, sp, ep, supr::ModelParams { beta, pose, expression: psi })
    }
}

#[test]
fn synth_is_deterministic_and_matches_the_library() {
    let f = Fixture::new(3);
    let again = f.path("again.supr");
    ok(&["synth", "--out", s(&again), "--seed", "3"]);
    let bytes = std::fs::read(&f.model_path).unwrap();
    assert_eq!(bytes, std::fs::read(&again).unwrap());
    assert_eq!(bytes, encode(&synth_model(&SynthOptions::toy(3)).unwrap()));

    let custom = f.path("custom.supr");
    ok(&["synth", "--out", s(&custom), "--seed", "1", "--vertices", "150", "--joints", "6"]);
    assert_eq!(std::fs::read(&custom).unwrap(), encode(&synth_model(&SynthOptions::new(1, 150, 6)).unwrap()));
}

#[test]
fn pose_with_zero_parameters_returns_the_template() {
    let f = Fixture::new(4);
    let (pp, sp) = (f.path("rest.json"), f.path("zero.json"));
    write_json(&pp, &PoseState::rest(f.model.n_joints())).unwrap();
    write_json(&sp, &CoefficientFile { coefficients: vec![0.0; 4] }).unwrap();
    let out = f.path("rest.ply");
    ok(&["pose", "--model", s(&f.model_path), "--pose", s(&pp), "--shape", s(&sp), "--expr", s(&sp), "--out", s(&out)]);
    assert_eq!(read_mesh(&out).unwrap().vertices, f.model.template);
}

#[test]
fn pose_output_is_byte_identical_to_the_library() {
    let f = Fixture::new(5);
    let (pp, sp, ep, params) = f.params();
    let mesh = f.model.forward_params(&params).unwrap();
    for (name, fmt, format) in [("a.obj", None, MeshFormat::Obj), ("b.mesh", Some("ply"), MeshFormat::Ply)] {
        let out = f.path(name);
        let mut args = vec!["pose", "--model", s(&f.model_path), "--pose", s(&pp), "--shape", s(&sp)];
        args.extend(["--expr", s(&ep), "--out", s(&out)]);
        if let Some(fmt) = fmt {
            args.extend(["--format", fmt]);
        }
        ok(&args);
        assert_eq!(std::fs::read(&out).unwrap(), encode_mesh(&mesh, format), "{name}");
    }
}

#[test]
fn separated_part_poses_like_the_full_model() {
    let f = Fixture::new(6);
    let name = f.model.parts[0].name.clone();
    let part_path = f.path("part.supr");
    ok(&["separate", "--model", s(&f.model_path), "--part", &name, "--out", s(&part_path)]);
    let part = separate(&f.model, &f.model.parts[0]).unwrap();
    assert_eq!(std::fs::read(&part_path).unwrap(), encode(&part.model));

    // pose only the part's joints, then pose the part with the restricted pose
    let (_, sp, ep, mut params) = f.params();
    for j in 0..f.model.n_joints() {
        if !part.joint_map.contains(&j) {
            params.pose.joint_rotations[j] = [0.0; 3];
        }
    }
    let (full_pose, part_pose) = (f.path("full_pose.json"), f.path("part_pose.json"));
    write_json(&full_pose, &params.pose).unwrap();
    write_json(&part_pose, &part.restrict_pose(&params.pose)).unwrap();
    let (full_out, part_out) = (f.path("full.ply"), f.path("part.ply"));
    ok(&["pose", "--model", s(&f.model_path), "--pose", s(&full_pose), "--shape", s(&sp), "--expr", s(&ep), "--out", s(&full_out)]);
    ok(&["pose", "--model", s(&part_path), "--pose", s(&part_pose), "--shape", s(&sp), "--expr", s(&ep), "--out", s(&part_out)]);
    let full = read_mesh(&full_out).unwrap().vertices;
    let local = read_mesh(&part_out).unwrap().vertices;
    for (a, b) in local.iter().zip(part.restrict_vertices(&full)) {
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-10);
        }
    }

    let label_out = f.path("label.supr");
    ok(&["separate", "--model", s(&f.model_path), "--part", "head", "--out", s(&label_out)]);
    let spec_file = f.path("spec.json");
    let whole = PartFile {
        name: "all".into(),
        vertex_indices: (0..f.model.n_vertices()).collect(),
    };
    write_json(&spec_file, &whole).unwrap();
    ok(&["separate", "--model", s(&f.model_path), "--part", s(&spec_file), "--out", s(&f.path("all.supr"))]);
}

#[test]
fn fit_report_and_mesh_match_the_library() {
    let f = Fixture::new(7);
    let (_, _, _, mut params) = f.params();
    params.expression = vec![];
    let target = f.model.forward_params(&params).unwrap();
    let target_path = f.path("target.ply");
    write_mesh(&target_path, &target, MeshFormat::Ply).unwrap();
    let weights: Vec<f64> = (0..f.model.n_vertices()).map(|v| if v % 5 == 0 { 0.0 } else { 1.0 }).collect();
    let mask = f.path("mask.json");
    write_json(&mask, &MaskFile { weights: weights.clone() }).unwrap();
    let out = f.path("fitted.obj");
    let run = ok(&[
        "fit", "--model", s(&f.model_path), "--target", s(&target_path), "--mask", s(&mask), "--components", "6",
        "--max-iters", "40", "--tol", "1e-10", "--out", s(&out),
    ]);

    let mut problem = FitProblem::new(&f.model, target.vertices);
    problem.vertex_weights = weights;
    problem.free = FreeParameters::pose_and_shape(6);
    problem.settings.max_iterations = 40;
    problem.settings.tolerance = 1e-10;
    let report = fit(&f.model, &problem).unwrap();
    assert_eq!(String::from_utf8(run.stdout).unwrap(), serde_json::to_string_pretty(&report).unwrap() + "\n");
    let mesh = f.model.forward_params(&report.params).unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), encode_mesh(&mesh, MeshFormat::Obj));
}

#[test]
fn eval_self_test_sweep_matches_the_library_and_is_monotone() {
    let f = Fixture::new(8);
    let out = f.path("sweep.csv");
    ok(&[
        "eval", "--model", s(&f.model_path), "--components", "2,4,8,16", "--self-test", "6", "--seed", "9",
        "--jobs", "2", "--out", s(&out),
    ]);
    let csv = std::fs::read_to_string(&out).unwrap();
    let problems = self_test_problems(&f.model, 6, 9).unwrap();
    assert_eq!(csv, shape_sweep(&f.model, &problems, &[2, 4, 8, 16], 1).unwrap().to_csv());
    let means: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(means.len(), 4);
    assert!(means.windows(2).all(|w| w[1] <= w[0]), "{means:?}");

    let stdout = ok(&["eval", "--model", s(&f.model_path), "--components", "2,4,8,16", "--self-test", "6", "--seed", "9"]);
    assert_eq!(String::from_utf8(stdout.stdout).unwrap(), csv);
}

#[test]
fn foot_deform_matches_the_library() {
    let f = Fixture::new(9);
    let (pp, sp, _, params) = f.params();
    let n = f.model.foot_nets[0].vertex_indices.len();
    let contact = ContactFile {
        left: Some(ContactState::from_bools(&(0..n).map(|i| i % 2 == 0).collect::<Vec<_>>())),
        right: None,
    };
    let cp = f.path("contact.json");
    write_json(&cp, &contact).unwrap();
    let out = f.path("feet.ply");
    ok(&["foot-deform", "--model", s(&f.model_path), "--pose", s(&pp), "--shape", s(&sp), "--contact", s(&cp), "--out", s(&out)]);
    let mesh = f
        .model
        .forward_with_contact(&params.beta, &params.pose, &[], contact.left.as_ref(), None)
        .unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), encode_mesh(&mesh, MeshFormat::Ply));
}

#[test]
fn validate_reports_categories() {
    let f = Fixture::new(10);
    let out = ok(&["validate", "--model", s(&f.model_path)]);
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("ok: 200 vertices, 8 joints"));

    let mut bytes = std::fs::read(&f.model_path).unwrap();
    let last = bytes.len() - 3;
    bytes[last] ^= 0xff;
    let bad = f.path("bad.supr");
    std::fs::write(&bad, &bytes).unwrap();
    let out = supr(&["validate", "--model", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[load/checksum]:"));

    let mut model = f.model.clone();
    model.skinning_weights.values[0] = 0.5;
    std::fs::write(&bad, encode(&model)).unwrap();
    let out = supr(&["validate", "--model", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[invalid-model/skinning-row-sum]:"));
}

#[test]
fn compute_errors_exit_with_status_one() {
    let f = Fixture::new(11);
    let bad = f.path("bad.json");
    std::fs::write(&bad, "{\"coefficients\": [1, 2").unwrap();
    let out = supr(&["pose", "--model", s(&f.model_path), "--shape", s(&bad), "--out", s(&f.path("x.obj"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[params]:"));

    let too_many = f.path("many.json");
    write_json(&too_many, &CoefficientFile { coefficients: vec![0.0; 99] }).unwrap();
    let out = supr(&["pose", "--model", s(&f.model_path), "--shape", s(&too_many), "--out", s(&f.path("x.obj"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[invalid-argument]:"));
}

#[test]
fn usage_errors_exit_with_status_two() {
    let f = Fixture::new(12);
    let m = s(&f.model_path);
    let missing = f.path("missing.supr");
    let cases: Vec<Vec<&str>> = vec![
        vec!["frobnicate"],
        vec!["pose", "--model", m],
        vec!["pose", "--model", s(&missing), "--out", "x.obj"],
        vec!["pose", "--model", m, "--out", "x.stl"],
        vec!["pose", "--model", m, "--out", "x.obj", "--format", "stl"],
        vec!["synth", "--out", "x.supr", "--preset", "full", "--vertices", "10", "--joints", "3"],
        vec!["synth", "--out", "x.supr", "--vertices", "10"],
        vec!["eval", "--model", m, "--components", "2,4"],
        vec!["separate", "--model", m, "--part", "tail", "--out", "x.supr"],
    ];
    for args in cases {
        let out = supr(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error"), "{args:?}");
    }
}
