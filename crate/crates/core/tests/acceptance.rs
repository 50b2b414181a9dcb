//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{max_abs_diff, random_params, random_vec3, small_rotation};
use supr::fitting::{fit, shape_sweep, v2v_loss, FitProblem, FreeParameters};
use supr::io::container::{decode, encode, read_manifest, ContainerManifest, ALIGN, FORMAT_VERSION, HEADER_LEN, MAGIC};
use supr::oracle::oracle_forward;
use supr::synth::{synth_model, SynthOptions};
use supr::{
    separate, ContactState, Error, LoadError, ModelContainer, ModelParams, ParamTangent, PartSpec, PoseState,
    ValidationKind,
};

fn full_size() -> &'static ModelContainer {
    static MODEL: OnceLock<ModelContainer> = OnceLock::new();
    MODEL.get_or_init(|| synth_model(&SynthOptions::full_size(0)).expect("full-size synthesis"))
}

fn toy(seed: u64) -> ModelContainer {
    synth_model(&SynthOptions::toy(seed)).expect("toy synthesis")
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// 1 ------------------------------------------------------------------------
fn zero_pose_identity() -> Outcome {
    let mut worst = 0.0f64;
    for model in [&toy(0), full_size()] {
        let p = ModelParams::zeros(model);
        let out = model.forward_params(&p).unwrap();
        worst = worst.max(max_abs_diff(&out.vertices, &model.template));
    }
    outcome(worst < 1e-12, format!("max |forward(0,0,0) - template| = {worst:.3e} (toy and full-size)"))
}

// 2 ------------------------------------------------------------------------
fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut cases = 0;
    for seed in 0..10 {
        let model = synth_model(&SynthOptions {
            mean_offsets: seed % 2 == 1,
            ..SynthOptions::toy(100 + seed)
        })
        .unwrap();
        assert!(model.n_vertices() <= 200 && model.n_joints() <= 8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10 {
            let p = random_params(&model, &mut rng, 1.5);
            let fast = model.forward_params(&p).unwrap().vertices;
            let slow = oracle_forward(&model, &p.beta, &p.pose, &p.expression).unwrap();
            worst = worst.max(max_abs_diff(&fast, &slow));
            cases += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-10 && elapsed < Duration::from_secs(10),
        format!("{cases} toy cases, max deviation {worst:.3e}, {:.2} s", elapsed.as_secs_f64()),
    )
}

// 3 ------------------------------------------------------------------------
fn structural_sparsity() -> Outcome {
    let mut violations = 0;
    let mut moved = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..100 {
        let model = toy(200 + trial % 5);
        let k = model.n_joints();
        let j = rng.random_range(0..k);
        let p = random_params(&model, &mut rng, 1.0);
        let mut rest = p.pose.clone();
        rest.joint_rotations = vec![[0.0; 3]; k];
        let mut posed = rest.clone();
        posed.joint_rotations[j] = small_rotation(&mut rng, 3.0);
        let a = model.forward(&p.beta, &rest, &p.expression).unwrap().vertices;
        let b = model.forward(&p.beta, &posed, &p.expression).unwrap().vertices;

        let sub = model.tree.subtree(j);
        let mut predicted = vec![false; model.n_vertices()];
        for (v, slot) in predicted.iter_mut().enumerate() {
            *slot = model.skinning_weights.row(v).any(|(jj, w)| w != 0.0 && sub.contains(&jj));
        }
        for block in &model.pose_blendshapes.blocks {
            if model.tree.neighbor_sets[block.joint].contains(&j) {
                block.vertices.iter().for_each(|&v| predicted[v] = true);
            }
        }
        for v in 0..model.n_vertices() {
            if a[v] != b[v] {
                moved += 1;
                if !predicted[v] {
                    violations += 1;
                }
            }
        }
    }
    outcome(
        violations == 0,
        format!("100 single-joint poses, {moved} displaced vertices, {violations} outside the predicted sets"),
    )
}

// 4 ------------------------------------------------------------------------
fn part_consistency() -> Outcome {
    let mut worst = 0.0f64;
    let mut poses = [0usize; 2];
    let toy_model = toy(4);
    for (mi, model) in [&toy_model, full_size()].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(40 + mi as u64);
        for spec in &model.parts {
            // the part's own regressor and the sliced-and-renormalized fallback
            let fallback = PartSpec::new(spec.name.clone(), spec.vertex_indices.clone());
            for part_spec in [spec, &fallback] {
                let part = separate(model, part_spec).unwrap();
                for _ in 0..25 {
                    let mut p = random_params(model, &mut rng, 0.0);
                    for &j in &part.joint_map {
                        p.pose.joint_rotations[j] = random_vec3(&mut rng, 1.2);
                    }
                    let full = model.forward_params(&p).unwrap().vertices;
                    let local = part
                        .model
                        .forward(&p.beta, &part.restrict_pose(&p.pose), &p.expression)
                        .unwrap()
                        .vertices;
                    worst = worst.max(max_abs_diff(&local, &part.restrict_vertices(&full)));
                    poses[mi] += 1;
                }
            }
        }
    }
    outcome(
        worst < 1e-10 && poses.iter().all(|&n| n >= 200),
        format!(
            "{} toy and {} full-size part poses, max deviation {worst:.3e}",
            poses[0], poses[1]
        ),
    )
}

// 5 ------------------------------------------------------------------------
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-300)
}

fn gradient_correctness() -> Outcome {
    let model = toy(5);
    let k = model.n_joints();
    let (s, e) = (model.shape_space.component_count, model.expression_space.component_count);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-6;
    let mut worst_fwd = 0.0f64;
    let mut worst_loss = 0.0f64;
    let classes = ["rotation", "shape", "expression", "translation"];
    for class in classes {
        for _ in 0..50 {
            let p = random_params(&model, &mut rng, 1.0);
            let mut dir = ParamTangent::default();
            match class {
                "rotation" => dir.rotations = (0..k).map(|_| random_vec3(&mut rng, 1.0)).collect(),
                "shape" => dir.beta = (0..s).map(|_| rng.random_range(-1.0..1.0)).collect(),
                "expression" => dir.expression = (0..e).map(|_| rng.random_range(-1.0..1.0)).collect(),
                _ => dir.translation = random_vec3(&mut rng, 1.0),
            }
            let shifted = |sign: f64| {
                let mut q = p.clone();
                for (b, d) in q.beta.iter_mut().zip(&dir.beta) {
                    *b += sign * h * d;
                }
                for (x, d) in q.expression.iter_mut().zip(&dir.expression) {
                    *x += sign * h * d;
                }
                for (r, d) in q.pose.joint_rotations.iter_mut().zip(&dir.rotations) {
                    (0..3).for_each(|a| r[a] += sign * h * d[a]);
                }
                (0..3).for_each(|a| q.pose.global_translation[a] += sign * h * dir.translation[a]);
                q
            };
            let (plus, minus) = (shifted(1.0), shifted(-1.0));

            let (_, jvp) = model.forward_jvp(&p.beta, &p.pose, &p.expression, &dir).unwrap();
            let fp = model.forward_params(&plus).unwrap().vertices;
            let fm = model.forward_params(&minus).unwrap().vertices;
            let fd: Vec<f64> = fp
                .iter()
                .zip(&fm)
                .flat_map(|(a, b)| (0..3).map(move |i| (a[i] - b[i]) / (2.0 * h)))
                .collect();
            let an: Vec<f64> = jvp.iter().flatten().copied().collect();
            worst_fwd = worst_fwd.max(rel_err(&an, &fd));

            // loss against an unrelated target, every parameter free
            let target = model.forward_params(&random_params(&model, &mut rng, 1.0)).unwrap().vertices;
            let mut problem = FitProblem::new(&model, target);
            problem.free = FreeParameters {
                translation: true,
                pose: true,
                shape_components: s,
                expression_components: e,
            };
            let (_, grad) = v2v_loss(&model, &p, &problem).unwrap();
            let mut flat_dir = dir.translation.to_vec();
            for j in 0..k {
                flat_dir.extend_from_slice(&dir.rotations.get(j).copied().unwrap_or([0.0; 3]));
            }
            flat_dir.extend((0..s).map(|i| dir.beta.get(i).copied().unwrap_or(0.0)));
            flat_dir.extend((0..e).map(|i| dir.expression.get(i).copied().unwrap_or(0.0)));
            let analytic: f64 = grad.iter().zip(&flat_dir).map(|(g, d)| g * d).sum();
            let lp = v2v_loss(&model, &plus, &problem).unwrap().0;
            let lm = v2v_loss(&model, &minus, &problem).unwrap().0;
            worst_loss = worst_loss.max(rel_err(&[analytic], &[(lp - lm) / (2.0 * h)]));
        }
    }
    outcome(
        worst_fwd < 1e-4 && worst_loss < 1e-4,
        format!(
            "4 parameter classes × 50 trials, max relative error: forward {worst_fwd:.2e}, v2v loss {worst_loss:.2e}"
        ),
    )
}

// 6 ------------------------------------------------------------------------
fn recovery_problem(model: &ModelContainer, rng: &mut ChaCha8Rng, shape_used: usize) -> (FitProblem, ModelParams) {
    let mut truth = random_params(model, rng, 0.6);
    truth.expression.iter_mut().for_each(|x| *x = 0.0);
    truth.beta.iter_mut().skip(shape_used).for_each(|b| *b = 0.0);
    let target = model.forward_params(&truth).unwrap().vertices;
    let mut problem = FitProblem::new(model, target);
    let mut init = ModelParams::zeros(model);
    init.pose = PoseState {
        joint_rotations: truth
            .pose
            .joint_rotations
            .iter()
            .map(|r| {
                let d = small_rotation(rng, 5f64.to_radians());
                [r[0] + d[0], r[1] + d[1], r[2] + d[2]]
            })
            .collect(),
        global_translation: truth.pose.global_translation,
    };
    problem.init = init;
    (problem, truth)
}

fn fit_recovery() -> Outcome {
    let model = toy(6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut ok = 0;
    let mut slowest = Duration::ZERO;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (problem, _) = recovery_problem(&model, &mut rng, model.shape_space.component_count);
        let t = Instant::now();
        let report = fit(&model, &problem).unwrap();
        slowest = slowest.max(t.elapsed());
        worst = worst.max(report.v2v);
        ok += (report.v2v < 1e-3) as usize;
    }
    outcome(
        ok >= 95 && slowest < Duration::from_secs(30),
        format!(
            "{ok}/100 fits with v2v < 1e-3 (worst {worst:.2e}), slowest fit {:.3} s",
            slowest.as_secs_f64()
        ),
    )
}

// 7 ------------------------------------------------------------------------
fn shape_sweep_protocol() -> Outcome {
    let model = toy(7);
    let generating = model.shape_space.component_count;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let problems: Vec<FitProblem> = (0..20)
        .map(|_| recovery_problem(&model, &mut rng, generating).0)
        .collect();
    let counts = [2, 4, 8, generating];
    let table = shape_sweep(&model, &problems, &counts, 4).unwrap();
    let means: Vec<f64> = table.rows.iter().map(|r| r.mean_mabs).collect();
    let monotone = means.windows(2).all(|w| w[1] <= w[0]);
    let last = *means.last().unwrap();
    outcome(
        monotone && last < 1e-3 && table.failures.is_empty(),
        format!(
            "mean mabs at {counts:?} components: {}; failures {}",
            means.iter().map(|m| format!("{m:.3e}")).collect::<Vec<_>>().join(", "),
            table.failures.len()
        ),
    )
}

// 8 ------------------------------------------------------------------------
fn foot_mask_exactness() -> Outcome {
    let mut leaks = 0;
    let mut nonzero_foot = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let toy_model = toy(8);
    for (i, model) in [&toy_model, full_size()].into_iter().enumerate() {
        let trials = if i == 0 { 60 } else { 40 };
        for _ in 0..trials {
            let p = random_params(model, &mut rng, 0.8);
            let contact = |rng: &mut ChaCha8Rng, side: supr::FootSide| {
                let n = model.foot_net(side).unwrap().vertex_indices.len();
                ContactState::from_bools(&(0..n).map(|_| rng.random_bool(0.5)).collect::<Vec<_>>())
            };
            let (l, r) = (contact(&mut rng, supr::FootSide::Left), contact(&mut rng, supr::FootSide::Right));
            let off = model.foot_offsets(&p.beta, &p.pose, Some(&l), Some(&r)).unwrap();
            let mut foot = vec![false; model.n_vertices()];
            for net in &model.foot_nets {
                net.vertex_indices.iter().for_each(|&v| foot[v] = true);
            }
            for (v, o) in off.iter().enumerate() {
                if foot[v] {
                    nonzero_foot += o.iter().any(|x| *x != 0.0) as usize;
                } else if o.iter().any(|x| x.to_bits() != 0) {
                    leaks += 1;
                }
            }
        }
    }

    // width declarations that break 4·|foot joints| + 2 + |foot vertices|
    let model = full_size();
    let declared = model.foot_nets[0].encoder[0].inputs;
    let mut rejected = 0;
    let mutations: Vec<Box<dyn Fn(&mut ModelContainer)>> = vec![
        Box::new(|m| {
            m.foot_nets[0].joint_indices.pop();
        }),
        Box::new(|m| {
            let net = &mut m.foot_nets[1];
            net.vertex_indices.pop();
            let len = net.vertex_indices.len() * 3 * net.shape_coeff_count;
            net.shape_basis.truncate(len);
        }),
        Box::new(|m| {
            let net = &mut m.foot_nets[0];
            net.shape_coeff_count = 3;
            net.shape_basis = vec![0.0; net.vertex_indices.len() * 9];
        }),
        Box::new(|m| {
            let l = &mut m.foot_nets[1].encoder[0];
            l.inputs += 1;
            l.weight = vec![0.0; l.inputs * l.outputs];
        }),
    ];
    for mutate in &mutations {
        let mut bad = model.clone();
        mutate(&mut bad);
        let direct = matches!(bad.validate(), Err(ref e) if e.kind == ValidationKind::FootWidth);
        let loaded = matches!(decode(&encode(&bad)), Err(LoadError::Invalid(ref e)) if e.kind == ValidationKind::FootWidth);
        rejected += (direct && loaded) as usize;
    }
    outcome(
        leaks == 0 && nonzero_foot > 0 && declared == 320 && rejected == mutations.len(),
        format!(
            "100 inputs, {leaks} non-foot offsets nonzero; full-size input width {declared}; {rejected}/{} width corruptions rejected",
            mutations.len()
        ),
    )
}

// 9 ------------------------------------------------------------------------
fn assemble(manifest: &ContainerManifest, data: &[u8]) -> Vec<u8> {
    let json = serde_json::to_vec(manifest).unwrap();
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.resize((HEADER_LEN + json.len()).div_ceil(ALIGN) * ALIGN, 0);
    out.extend_from_slice(data);
    out
}

fn category(r: Result<ModelContainer, LoadError>) -> String {
    match r {
        Ok(_) => "accepted".into(),
        Err(LoadError::Invalid(e)) => format!("invalid-model/{}", e.kind.as_str()),
        Err(e) => e.category().into(),
    }
}

fn serialization() -> Outcome {
    let mut exact = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let opts = SynthOptions {
            shape_components: rng.random_range(1..10),
            expression_components: rng.random_range(1..6),
            mean_offsets: rng.random_bool(0.5),
            foot_nets: rng.random_bool(0.5),
            reach: rng.random_range(0.0..1.0),
            ..SynthOptions::new(seed, rng.random_range(300..600), rng.random_range(6..14))
        };
        let mut model = synth_model(&opts).unwrap();
        if seed % 5 == 0 {
            let spec = model.parts[0].clone();
            model = separate(&model, &spec).unwrap().model;
        }
        let bytes = encode(&model);
        if let Ok(back) = decode(&bytes) {
            exact += (back == model && encode(&back) == bytes) as usize;
        }
    }

    let model = toy(9);
    let good = encode(&model);
    let (manifest, data) = read_manifest(&good).unwrap();
    let data = data.to_vec();
    let data_start = good.len() - data.len();
    let mut cases: Vec<(&str, Vec<u8>, &str)> = Vec::new();
    let mut push = |name: &'static str, bytes: Vec<u8>, want: &'static str| cases.push((name, bytes, want));

    let mut b = good.clone();
    b[0] = b'X';
    push("bad magic", b, "magic");
    let mut b = good.clone();
    b[8] = 2;
    push("future version", b, "version");
    push("empty file", Vec::new(), "truncated");
    push("header only", good[..12].to_vec(), "truncated");
    push("cut inside manifest", good[..HEADER_LEN + 40].to_vec(), "truncated");
    push("cut inside data", good[..data_start + data.len() / 2].to_vec(), "truncated");
    push("last byte missing", good[..good.len() - 1].to_vec(), "truncated");
    let mut b = good.clone();
    b[data_start + 5] ^= 0x40;
    push("flipped data bit", b, "checksum");
    let mut b = good.clone();
    let last = b.len() - 1;
    b[last] ^= 1;
    push("flipped padding byte", b, "checksum");
    let mut b = good.clone();
    b[HEADER_LEN] = b'X';
    push("garbled manifest", b, "manifest");
    let mut b = good.clone();
    b.extend_from_slice(&[0; 64]);
    push("trailing bytes", b, "manifest");
    let mut m = manifest.clone();
    m.tensors.get_mut("template").unwrap().shape = vec![model.n_vertices() + 1, 3];
    push("shape disagrees with length", assemble(&m, &data), "manifest");
    let mut m = manifest.clone();
    m.tensors.get_mut("faces").unwrap().offset += 4;
    push("misaligned tensor", assemble(&m, &data), "manifest");
    let mut m = manifest.clone();
    let off = m.tensors["template"].offset;
    m.tensors.get_mut("part_labels").unwrap().offset = off;
    push("overlapping tensors", assemble(&m, &data), "manifest");

    let mut push_model = |name: &'static str, f: &dyn Fn(&mut ModelContainer), want: &'static str| {
        let mut bad = model.clone();
        f(&mut bad);
        cases.push((name, encode(&bad), want));
    };
    push_model("skinning row sum", &|m| m.skinning_weights.values[0] += 0.25, "invalid-model/skinning-row-sum");
    push_model("regressor row sum", &|m| m.joint_regressor.values[0] *= 2.0, "invalid-model/regressor-row");
    push_model(
        "foot width",
        &|m| {
            m.foot_nets[0].joint_indices.push(0);
        },
        "invalid-model/foot-width",
    );
    push_model("tree order", &|m| m.tree.parents[1] = Some(5), "invalid-model/tree");
    push_model("face index", &|m| m.faces[0][1] = 100_000, "invalid-model/face");
    push_model("non-finite template", &|m| m.template[3][1] = f64::NAN, "invalid-model/non-finite");

    let total = cases.len();
    let mut wrong = Vec::new();
    for (name, bytes, want) in &cases {
        let got = category(decode(bytes));
        if got != *want {
            wrong.push(format!("{name}: got {got}, want {want}"));
        }
    }
    outcome(
        exact == 50 && total == 20 && wrong.is_empty(),
        format!(
            "{exact}/50 bitwise round trips; {}/{total} corruptions rejected with the right category{}",
            total - wrong.len(),
            if wrong.is_empty() { String::new() } else { format!(" ({})", wrong.join("; ")) }
        ),
    )
}

// 10 -----------------------------------------------------------------------
fn performance() -> Outcome {
    let model = full_size();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let params: Vec<ModelParams> = (0..23).map(|_| random_params(model, &mut rng, 0.8)).collect();
    for p in &params[..3] {
        std::hint::black_box(model.forward_params(p).unwrap());
    }
    let start = Instant::now();
    for p in &params[3..] {
        std::hint::black_box(model.forward_params(p).unwrap());
    }
    let per_call = start.elapsed() / 20;
    let refused = matches!(
        oracle_forward(model, &[], &PoseState::rest(model.n_joints()), &[]),
        Err(Error::Refused(_))
    );
    outcome(
        per_call < Duration::from_millis(10) && refused,
        format!(
            "full-size forward (N={}, K={}, 300 shape, 100 expression coefficients) {:.3} ms per call; dense oracle refused: {refused}",
            model.n_vertices(),
            model.n_joints(),
            per_call.as_secs_f64() * 1e3
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("zero-pose identity", zero_pose_identity),
        ("oracle equivalence", oracle_equivalence),
        ("structural sparsity", structural_sparsity),
        ("part/full consistency", part_consistency),
        ("gradient correctness", gradient_correctness),
        ("fit recovery", fit_recovery),
        ("shape-sweep protocol", shape_sweep_protocol),
        ("foot mask exactness", foot_mask_exactness),
        ("serialization", serialization),
        ("performance", performance),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        failed += !o.pass as usize;
        println!(
            "acceptance {:>2} {:<22} {}  {}",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
