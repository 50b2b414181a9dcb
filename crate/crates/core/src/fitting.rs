//! Registration fitting by vertex-to-vertex least squares.
//!
//! The optimizer is Levenberg–Marquardt on the weighted mean squared vertex
//! distance. Jacobian columns are forward-mode directional derivatives of the
//! model. A step is kept only if it lowers the objective, so the recorded
//! objective trace never increases. Optimization runs in stages (global
//! alignment, then all joint rotations, then every free parameter) that
//! share one iteration budget.

use std::fmt::Write as _;

use log::debug;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{PoseState, Vec3};
use crate::model::{ModelContainer, ModelParams, ParamTangent};

/// Which parameters the optimizer may change. Shape and expression are
/// truncated to their leading components; the rest stay at their initial
/// values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreeParameters {
    pub translation: bool,
    pub pose: bool,
    pub shape_components: usize,
    pub expression_components: usize,
}

impl FreeParameters {
    pub fn pose_only() -> Self {
        Self {
            translation: true,
            pose: true,
            shape_components: 0,
            expression_components: 0,
        }
    }

    pub fn pose_and_shape(shape_components: usize) -> Self {
        Self {
            shape_components,
            ..Self::pose_only()
        }
    }

    fn any(&self) -> bool {
        self.translation || self.pose || self.shape_components > 0 || self.expression_components > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    /// Jacobian evaluations across all stages.
    pub max_iterations: usize,
    /// Threshold for both the gradient infinity norm and the relative
    /// objective decrease of an accepted step.
    pub tolerance: f64,
    pub initial_damping: f64,
    /// Rejected trial steps tolerated per iteration before giving up.
    pub max_rejections: usize,
    pub staged: bool,
    /// L2 prior weight on the free joint rotations.
    pub pose_prior: f64,
    /// L2 prior weight on the free shape and expression coefficients.
    pub shape_prior: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-12,
            initial_damping: 1e-3,
            max_rejections: 12,
            staged: true,
            pose_prior: 0.0,
            shape_prior: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitProblem {
    /// Registration in the model's topology.
    pub target_vertices: Vec<Vec3>,
    /// Nonnegative per-vertex weights; zero removes a vertex from the fit.
    pub vertex_weights: Vec<f64>,
    /// Vertices scored by the reported mean absolute error; defaults to the
    /// vertices with positive weight.
    pub evaluation_mask: Option<Vec<bool>>,
    pub free: FreeParameters,
    pub settings: OptimizerSettings,
    pub init: ModelParams,
}

impl FitProblem {
    /// Unit weights, pose + translation + all shape components free, zero
    /// initialization.
    pub fn new(model: &ModelContainer, target_vertices: Vec<Vec3>) -> Self {
        Self {
            vertex_weights: vec![1.0; target_vertices.len()],
            target_vertices,
            evaluation_mask: None,
            free: FreeParameters::pose_and_shape(model.shape_space.component_count),
            settings: OptimizerSettings::default(),
            init: ModelParams::zeros(model),
        }
    }

    pub fn validate(&self, model: &ModelContainer) -> Result<()> {
        let n = model.n_vertices();
        if self.target_vertices.len() != n || self.vertex_weights.len() != n {
            return Err(Error::arg(format!(
                "target has {} vertices and {} weights, model has {n} vertices",
                self.target_vertices.len(),
                self.vertex_weights.len()
            )));
        }
        if self.evaluation_mask.as_ref().is_some_and(|m| m.len() != n) {
            return Err(Error::arg("evaluation mask length differs from vertex count"));
        }
        if self.vertex_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::arg("vertex weights must be finite and nonnegative"));
        }
        if !self.vertex_weights.iter().any(|w| *w > 0.0) {
            return Err(Error::arg("every vertex weight is zero"));
        }
        for (t, w) in self.target_vertices.iter().zip(&self.vertex_weights) {
            if *w > 0.0 && !t.iter().all(|x| x.is_finite()) {
                return Err(Error::arg("target vertex is not finite"));
            }
        }
        if !self.free.any() {
            return Err(Error::arg("no free parameters"));
        }
        if self.free.shape_components > model.shape_space.component_count
            || self.free.expression_components > model.expression_space.component_count
        {
            return Err(Error::arg("more free components than the model provides"));
        }
        if self.init.beta.len() > model.shape_space.component_count
            || self.init.expression.len() > model.expression_space.component_count
        {
            return Err(Error::arg("initial coefficients exceed the model's spaces"));
        }
        self.init.pose.validate(model.n_joints())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    GradientTolerance,
    RelativeDecrease,
    /// No damped step lowered the objective.
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: ModelParams,
    /// Objective at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
    /// Mean vertex distance over the weighted vertices.
    pub v2v: f64,
    /// Mean vertex distance over the evaluation mask.
    pub mabs: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
}

/// Mean Euclidean distance between corresponding vertices, over `mask`
/// (all vertices when absent).
pub fn mean_distance(a: &[Vec3], b: &[Vec3], mask: Option<&[bool]>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, (p, q)) in a.iter().zip(b).enumerate() {
        if mask.is_none_or(|m| m[i]) {
            sum += ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Positions of the free parameters in the optimizer vector:
/// `[translation | rotations of free joints | β prefix | ψ prefix]`.
#[derive(Debug, Clone, PartialEq)]
struct ParamLayout {
    translation: bool,
    joints: Vec<usize>,
    shape: usize,
    expression: usize,
}

impl ParamLayout {
    fn full(free: &FreeParameters, n_joints: usize) -> Self {
        Self {
            translation: free.translation,
            joints: if free.pose { (0..n_joints).collect() } else { Vec::new() },
            shape: free.shape_components,
            expression: free.expression_components,
        }
    }

    fn stages(free: &FreeParameters, n_joints: usize, staged: bool) -> Vec<Self> {
        let full = Self::full(free, n_joints);
        if !staged {
            return vec![full];
        }
        let global = Self {
            joints: full.joints.iter().copied().filter(|&j| j == 0).collect(),
            shape: 0,
            expression: 0,
            ..full.clone()
        };
        let pose = Self {
            shape: 0,
            expression: 0,
            ..full.clone()
        };
        let mut out: Vec<Self> = Vec::new();
        for s in [global, pose, full] {
            if s.len() > 0 && out.last() != Some(&s) {
                out.push(s);
            }
        }
        out
    }

    fn len(&self) -> usize {
        3 * self.translation as usize + 3 * self.joints.len() + self.shape + self.expression
    }

    fn pack(&self, p: &ModelParams) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.len());
        if self.translation {
            x.extend_from_slice(&p.pose.global_translation);
        }
        for &j in &self.joints {
            x.extend_from_slice(&p.pose.joint_rotations[j]);
        }
        x.extend_from_slice(&p.beta[..self.shape]);
        x.extend_from_slice(&p.expression[..self.expression]);
        x
    }

    fn unpack(&self, x: &[f64], base: &ModelParams) -> ModelParams {
        let mut p = base.clone();
        let mut i = 0;
        if self.translation {
            p.pose.global_translation.copy_from_slice(&x[..3]);
            i = 3;
        }
        for &j in &self.joints {
            p.pose.joint_rotations[j].copy_from_slice(&x[i..i + 3]);
            i += 3;
        }
        p.beta[..self.shape].copy_from_slice(&x[i..i + self.shape]);
        i += self.shape;
        p.expression[..self.expression].copy_from_slice(&x[i..i + self.expression]);
        p
    }

    fn tangent(&self, idx: usize, n_joints: usize) -> ParamTangent {
        let mut t = ParamTangent::default();
        let mut i = idx;
        if self.translation {
            if i < 3 {
                t.translation[i] = 1.0;
                return t;
            }
            i -= 3;
        }
        if i < 3 * self.joints.len() {
            t.rotations = vec![[0.0; 3]; n_joints];
            t.rotations[self.joints[i / 3]][i % 3] = 1.0;
            return t;
        }
        i -= 3 * self.joints.len();
        if i < self.shape {
            t.beta = vec![0.0; i + 1];
            t.beta[i] = 1.0;
            return t;
        }
        i -= self.shape;
        t.expression = vec![0.0; i + 1];
        t.expression[i] = 1.0;
        t
    }

    /// Prior weight of each vector entry.
    fn prior(&self, settings: &OptimizerSettings) -> Vec<f64> {
        let mut d = vec![0.0; 3 * self.translation as usize];
        d.extend(std::iter::repeat_n(settings.pose_prior, 3 * self.joints.len()));
        d.extend(std::iter::repeat_n(settings.shape_prior, self.shape + self.expression));
        d
    }
}

/// Working state: the problem with full-length coefficient vectors.
struct Objective<'a> {
    model: &'a ModelContainer,
    problem: &'a FitProblem,
    weight_sum: f64,
    active: Vec<usize>,
}

impl<'a> Objective<'a> {
    fn new(model: &'a ModelContainer, problem: &'a FitProblem) -> Self {
        let active = (0..model.n_vertices()).filter(|&v| problem.vertex_weights[v] > 0.0).collect();
        Self {
            model,
            problem,
            weight_sum: problem.vertex_weights.iter().sum(),
            active,
        }
    }

    fn padded(&self, p: &ModelParams) -> ModelParams {
        let mut p = p.clone();
        p.beta.resize(self.model.shape_space.component_count, 0.0);
        p.expression.resize(self.model.expression_space.component_count, 0.0);
        p
    }

    fn prior_term(&self, layout: &ParamLayout, x: &[f64]) -> f64 {
        layout
            .prior(&self.problem.settings)
            .iter()
            .zip(x)
            .map(|(l, v)| l * v * v)
            .sum()
    }

    /// Objective value, or `None` when the parameters are outside the model's
    /// domain.
    fn value(&self, layout: &ParamLayout, x: &[f64], base: &ModelParams) -> Option<f64> {
        let p = layout.unpack(x, base);
        let verts = self.model.forward_vertices(&p.beta, &p.pose, &p.expression, None).ok()?;
        let mut sum = 0.0;
        for &v in &self.active {
            let w = self.problem.vertex_weights[v];
            let t = &self.problem.target_vertices[v];
            sum += w * ((verts[v][0] - t[0]).powi(2) + (verts[v][1] - t[1]).powi(2) + (verts[v][2] - t[2]).powi(2));
        }
        Some(sum / self.weight_sum + self.prior_term(layout, x))
    }

    /// Objective, gradient and Gauss–Newton matrix at `x`.
    fn linearize(&self, layout: &ParamLayout, x: &[f64], base: &ModelParams) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let p = layout.unpack(x, base);
        let k = self.model.n_joints();
        let np = layout.len();
        let columns: Vec<Vec<Vec3>> = (0..np)
            .map(|i| {
                self.model
                    .forward_jvp(&p.beta, &p.pose, &p.expression, &layout.tangent(i, k))
                    .map(|(_, t)| t)
            })
            .collect::<Result<_>>()?;
        let verts = self.model.forward_vertices(&p.beta, &p.pose, &p.expression, None)?;
        let scale = 2.0 / self.weight_sum;
        let mut grad = DVector::<f64>::zeros(np);
        let mut h = DMatrix::<f64>::zeros(np, np);
        let mut sum = 0.0;
        for &v in &self.active {
            let w = self.problem.vertex_weights[v];
            let t = &self.problem.target_vertices[v];
            sum += w * ((verts[v][0] - t[0]).powi(2) + (verts[v][1] - t[1]).powi(2) + (verts[v][2] - t[2]).powi(2));
            for a in 0..3 {
                let r = verts[v][a] - t[a];
                for i in 0..np {
                    let ji = columns[i][v][a];
                    if ji == 0.0 {
                        continue;
                    }
                    grad[i] += scale * w * ji * r;
                    for j in i..np {
                        h[(i, j)] += scale * w * ji * columns[j][v][a];
                    }
                }
            }
        }
        for i in 0..np {
            for j in 0..i {
                h[(i, j)] = h[(j, i)];
            }
        }
        for (i, l) in layout.prior(&self.problem.settings).into_iter().enumerate() {
            grad[i] += 2.0 * l * x[i];
            h[(i, i)] += 2.0 * l;
        }
        Ok((sum / self.weight_sum + self.prior_term(layout, x), grad, h))
    }
}

/// Weighted mean squared vertex distance at `params` and its gradient with
/// respect to the free parameters (`[translation | rotations | β | ψ]`).
pub fn v2v_loss(model: &ModelContainer, params: &ModelParams, problem: &FitProblem) -> Result<(f64, Vec<f64>)> {
    problem.validate(model)?;
    let obj = Objective::new(model, problem);
    let base = obj.padded(params);
    let layout = ParamLayout::full(&problem.free, model.n_joints());
    let x = layout.pack(&base);
    let (f, g, _) = obj.linearize(&layout, &x, &base)?;
    Ok((f, g.iter().copied().collect()))
}

pub fn fit(model: &ModelContainer, problem: &FitProblem) -> Result<FitReport> {
    problem.validate(model)?;
    let settings = &problem.settings;
    let obj = Objective::new(model, problem);
    let mut params = obj.padded(&problem.init);
    let stages = ParamLayout::stages(&problem.free, model.n_joints(), settings.staged);

    let first = &stages[0];
    let start = obj
        .value(first, &first.pack(&params), &params)
        .filter(|f| f.is_finite())
        .ok_or_else(|| Error::NumericalFailure {
            message: "objective is not finite at the initialization".into(),
            trace: Vec::new(),
        })?;
    let mut trace = vec![start];
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;

    for (s, layout) in stages.iter().enumerate() {
        let last_stage = s + 1 == stages.len();
        let remaining = settings.max_iterations - iterations;
        let budget = if last_stage { remaining } else { remaining.min(settings.max_iterations.div_ceil(4)) };
        let mut x = layout.pack(&params);
        let mut damping = settings.initial_damping;
        termination = Termination::MaxIterations;
        for _ in 0..budget {
            let (f, g, h) = obj.linearize(layout, &x, &params)?;
            iterations += 1;
            if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalFailure {
                    message: "objective or gradient became non-finite".into(),
                    trace,
                });
            }
            if g.amax() < settings.tolerance {
                termination = Termination::GradientTolerance;
                break;
            }
            let mut accepted = None;
            for _ in 0..settings.max_rejections {
                let mut lhs = h.clone();
                for i in 0..lhs.nrows() {
                    lhs[(i, i)] += damping * (h[(i, i)] + 1e-9);
                }
                let step = match lhs.cholesky() {
                    Some(c) => c.solve(&(-&g)),
                    None => {
                        damping *= 4.0;
                        continue;
                    }
                };
                let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
                match obj.value(layout, &trial, &params) {
                    Some(ft) if ft.is_finite() && ft < f => {
                        accepted = Some((trial, ft));
                        damping = (damping / 3.0).max(1e-12);
                        break;
                    }
                    _ => damping *= 4.0,
                }
            }
            let Some((trial, ft)) = accepted else {
                termination = Termination::Stalled;
                break;
            };
            x = trial;
            trace.push(ft);
            debug!("stage {s} iteration {iterations}: objective {ft:e}");
            if (f - ft) <= settings.tolerance * f.max(f64::MIN_POSITIVE) || ft == 0.0 {
                termination = Termination::RelativeDecrease;
                break;
            }
        }
        params = layout.unpack(&x, &params);
        if iterations >= settings.max_iterations {
            break;
        }
    }

    let converged = !matches!(termination, Termination::MaxIterations) && iterations > 0;
    let verts = model.forward_vertices(&params.beta, &params.pose, &params.expression, None)?;
    let weighted: Vec<bool> = problem.vertex_weights.iter().map(|w| *w > 0.0).collect();
    let eval = problem.evaluation_mask.as_deref().unwrap_or(&weighted);
    Ok(FitReport {
        v2v: mean_distance(&verts, &problem.target_vertices, Some(&weighted)),
        mabs: mean_distance(&verts, &problem.target_vertices, Some(eval)),
        params,
        objective_trace: trace,
        iterations,
        converged,
        termination,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub component_count: usize,
    pub mean_mabs: f64,
    pub std_mabs: f64,
    /// Successful fits contributing to the row.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub problem: usize,
    pub component_count: usize,
    pub category: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("component_count,mean_mabs,std_mabs,n\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.component_count, r.mean_mabs, r.std_mabs, r.n);
        }
        s
    }
}

/// Fits every problem at each shape component count (ascending) and
/// tabulates the evaluation error. Each problem's fit at one count starts
/// from its solution at the previous count. Problems run on a pool of
/// `jobs` threads.
pub fn shape_sweep(
    model: &ModelContainer,
    problems: &[FitProblem],
    component_counts: &[usize],
    jobs: usize,
) -> Result<SweepTable> {
    if component_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::arg("component counts must be strictly ascending"));
    }
    if component_counts.last().is_some_and(|&c| c > model.shape_space.component_count) {
        return Err(Error::arg("component count exceeds the shape space"));
    }
    let run = |(i, problem): (usize, &FitProblem)| -> Vec<std::result::Result<f64, SweepFailure>> {
        let mut init = problem.init.clone();
        component_counts
            .iter()
            .map(|&c| {
                let mut p = problem.clone();
                p.free.shape_components = c;
                p.init = init.clone();
                fit(model, &p)
                    .map(|r| {
                        init = r.params;
                        r.mabs
                    })
                    .map_err(|e| SweepFailure {
                        problem: i,
                        component_count: c,
                        category: e.category().to_string(),
                        message: e.to_string(),
                    })
            })
            .collect()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::arg(format!("worker pool: {e}")))?;
    let results: Vec<_> = pool.install(|| problems.par_iter().enumerate().map(run).collect());

    let mut rows = Vec::with_capacity(component_counts.len());
    let mut failures = Vec::new();
    for (ci, &c) in component_counts.iter().enumerate() {
        let mut errs = Vec::new();
        for r in &results {
            match &r[ci] {
                Ok(e) => errs.push(*e),
                Err(f) => failures.push(f.clone()),
            }
        }
        let n = errs.len();
        let mean = if n == 0 { f64::NAN } else { errs.iter().sum::<f64>() / n as f64 };
        let var = if n == 0 { f64::NAN } else { errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n as f64 };
        rows.push(SweepRow {
            component_count: c,
            mean_mabs: mean,
            std_mabs: var.sqrt(),
            n,
        });
    }
    Ok(SweepTable { rows, failures })
}

/// Generative self-test population: targets produced by the model itself
/// from shapes drawn uniformly in `[-1, 1]` over every shape component, in
/// the rest pose, with zero-initialized fits.
pub fn self_test_problems(model: &ModelContainer, count: usize, seed: u64) -> Result<Vec<FitProblem>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rest = PoseState::rest(model.n_joints());
    (0..count)
        .map(|_| {
            let beta: Vec<f64> = (0..model.shape_space.component_count)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let target = model.forward(&beta, &rest, &[])?.vertices;
            Ok(FitProblem::new(model, target))
        })
        .collect()
}
