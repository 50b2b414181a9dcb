use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use supr::fitting::{fit, self_test_problems, shape_sweep, FitProblem, FreeParameters, OptimizerSettings};
use supr::io::mesh::encode_mesh;
use supr::io::{load_container, read_mesh, save_container, MeshFormat};
use supr::params::{read_json, CoefficientFile, ContactFile, MaskFile, PartFile};
use supr::synth::{synth_model, SynthOptions};
use supr::{separate, ModelContainer, ModelParams, PartLabel, PartSpec, PoseState, TriangleMesh};

use crate::{
    require_file, CliError, Command, EvalArgs, FitArgs, FitSettings, FootArgs, Format, MeshOut, ParamArgs,
    PoseArgs, Preset, SeparateArgs, SynthArgs, ValidateArgs,
};

type CmdResult = Result<(), CliError>;

pub fn run(command: Command) -> CmdResult {
    match command {
        Command::Synth(a) => synth(a),
        Command::Pose(a) => pose(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Separate(a) => separate_cmd(a),
        Command::Eval(a) => eval(a),
        Command::FootDeform(a) => foot(a),
        Command::Validate(a) => validate(a),
    }
}

fn load_model(path: &Path) -> Result<ModelContainer, CliError> {
    require_file(path)?;
    let model = load_container(path)?;
    info!("loaded {} ({} vertices, {} joints)", path.display(), model.n_vertices(), model.n_joints());
    Ok(model)
}

fn mesh_format(out: &MeshOut) -> Result<MeshFormat, CliError> {
    match out.format {
        Some(Format::Obj) => Ok(MeshFormat::Obj),
        Some(Format::Ply) => Ok(MeshFormat::Ply),
        None => match MeshFormat::from_path(&out.out) {
            Some(f) => Ok(f),
            None => Err(CliError::Usage(format!(
                "cannot infer a mesh format from '{}'; pass --format obj|ply",
                out.out.display()
            ))),
        },
    }
}

fn write_out(path: &Path, bytes: &[u8]) -> CmdResult {
    fs::write(path, bytes).map_err(|e| CliError::Compute(e.into()))
}

fn write_mesh_out(out: &MeshOut, format: MeshFormat, mesh: &TriangleMesh) -> CmdResult {
    write_out(&out.out, &encode_mesh(mesh, format))
}

/// Checks every parameter path, then reads the files; absent files mean
/// zero coefficients and the rest pose.
fn check_params(p: &ParamArgs) -> CmdResult {
    [&p.pose, &p.shape, &p.expr].into_iter().flatten().try_for_each(|f| require_file(f))
}

fn read_params(model: &ModelContainer, p: &ParamArgs) -> Result<ModelParams, CliError> {
    let coeffs = |f: &Option<PathBuf>| -> Result<Vec<f64>, CliError> {
        Ok(match f {
            Some(path) => read_json::<CoefficientFile>(path)?.coefficients,
            None => Vec::new(),
        })
    };
    let pose = match &p.pose {
        Some(path) => read_json::<PoseState>(path)?,
        None => PoseState::rest(model.n_joints()),
    };
    Ok(ModelParams {
        beta: coeffs(&p.shape)?,
        pose,
        expression: coeffs(&p.expr)?,
    })
}

fn optimizer(s: &FitSettings) -> OptimizerSettings {
    let mut o = OptimizerSettings::default();
    if let Some(m) = s.max_iters {
        o.max_iterations = m;
    }
    if let Some(t) = s.tol {
        o.tolerance = t;
    }
    o
}

fn synth(a: SynthArgs) -> CmdResult {
    let opts = match (a.vertices, a.joints, a.preset) {
        (Some(n), Some(k), _) => SynthOptions::new(a.seed, n, k),
        (_, _, Preset::Full) => SynthOptions::full_size(a.seed),
        _ => SynthOptions::toy(a.seed),
    };
    let model = synth_model(&opts)?;
    save_container(&a.out, &model)?;
    info!("wrote {}", a.out.display());
    Ok(())
}

fn pose(a: PoseArgs) -> CmdResult {
    let format = mesh_format(&a.mesh)?;
    check_params(&a.params)?;
    let model = load_model(&a.model)?;
    let params = read_params(&model, &a.params)?;
    let mesh = model.forward_params(&params)?;
    write_mesh_out(&a.mesh, format, &mesh)
}

fn fit_cmd(a: FitArgs) -> CmdResult {
    let format = mesh_format(&a.mesh)?;
    require_file(&a.target)?;
    if let Some(m) = &a.mask {
        require_file(m)?;
    }
    let model = load_model(&a.model)?;
    let target = read_mesh(&a.target)?;
    let mut problem = FitProblem::new(&model, target.vertices);
    if let Some(m) = &a.mask {
        problem.vertex_weights = read_json::<MaskFile>(m)?.weights;
    }
    problem.free = FreeParameters::pose_and_shape(a.components.unwrap_or(model.shape_space.component_count));
    problem.settings = optimizer(&a.settings);
    let report = fit(&model, &problem)?;
    info!("fit finished after {} iterations ({:?})", report.iterations, report.termination);
    let mesh = model.forward_params(&report.params)?;
    write_mesh_out(&a.mesh, format, &mesh)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}

fn part_spec(model: &ModelContainer, part: &str) -> Result<PartSpec, CliError> {
    if part.ends_with(".json") {
        let path = Path::new(part);
        require_file(path)?;
        let f: PartFile = read_json(path)?;
        return Ok(PartSpec::new(f.name, f.vertex_indices));
    }
    if let Some(stored) = model.parts.iter().find(|p| p.name == part) {
        return Ok(stored.clone());
    }
    match PartLabel::from_name(part) {
        Some(label) => Ok(PartSpec::from_label(model, label)),
        None => Err(CliError::Usage(format!(
            "unknown part '{part}'; expected a stored part, a label or a .json file"
        ))),
    }
}

fn separate_cmd(a: SeparateArgs) -> CmdResult {
    let model = load_model(&a.model)?;
    let spec = part_spec(&model, &a.part)?;
    let part = separate(&model, &spec)?;
    info!(
        "part '{}': {} vertices, {} joints",
        spec.name,
        part.vertex_map.len(),
        part.joint_map.len()
    );
    save_container(&a.out, &part.model)?;
    Ok(())
}

fn eval(a: EvalArgs) -> CmdResult {
    a.targets.iter().try_for_each(|t| require_file(t))?;
    let model = load_model(&a.model)?;
    let settings = optimizer(&a.settings);
    let mut problems = match a.self_test {
        Some(count) => self_test_problems(&model, count, a.seed)?,
        None => a
            .targets
            .iter()
            .map(|t| Ok(FitProblem::new(&model, read_mesh(t)?.vertices)))
            .collect::<Result<Vec<_>, supr::Error>>()?,
    };
    problems.iter_mut().for_each(|p| p.settings = settings);
    let table = shape_sweep(&model, &problems, &a.components, a.jobs)?;
    for f in &table.failures {
        eprintln!(
            "warning: problem {} at {} components failed: error[{}]: {}",
            f.problem, f.component_count, f.category, f.message
        );
    }
    let csv = table.to_csv();
    match &a.out {
        Some(path) => write_out(path, csv.as_bytes()),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn foot(a: FootArgs) -> CmdResult {
    let format = mesh_format(&a.mesh)?;
    check_params(&a.params)?;
    require_file(&a.contact)?;
    let model = load_model(&a.model)?;
    let params = read_params(&model, &a.params)?;
    let contact: ContactFile = read_json(&a.contact)?;
    let mesh = model.forward_with_contact(
        &params.beta,
        &params.pose,
        &params.expression,
        contact.left.as_ref(),
        contact.right.as_ref(),
    )?;
    write_mesh_out(&a.mesh, format, &mesh)
}

fn validate(a: ValidateArgs) -> CmdResult {
    let model = load_model(&a.model)?;
    model.validate().map_err(supr::Error::from)?;
    println!(
        "ok: {} vertices, {} joints, {} faces, {} shape and {} expression components, {} pose blocks, {} parts, {} foot networks",
        model.n_vertices(),
        model.n_joints(),
        model.faces.len(),
        model.shape_space.component_count,
        model.expression_space.component_count,
        model.pose_blendshapes.blocks.len(),
        model.parts.len(),
        model.foot_nets.len()
    );
    Ok(())
}
