//! The full forward model: shaped and corrected template, joint regression
//! and linear blend skinning.

use serde::{Deserialize, Serialize};

use crate::blendshape::{joint_quaternions, LinearShapeSpace, SparsePoseBlendshapes};
use crate::error::{Error, Result, ValidationError, ValidationKind};
use crate::foot::FootDeformNet;
use crate::io::mesh::TriangleMesh;
use crate::kinematics::{quat_from_axis_angle, quat_to_matrix, skinning_transforms, KinematicTree, PoseState, Vec3, V3};
use crate::part::PartSpec;
use crate::real::{Dual, Real};
use crate::sparse::CsrMatrix;

pub type PosedMesh = TriangleMesh;

/// Maximum number of joints influencing one vertex.
pub const MAX_INFLUENCES: usize = 8;
const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartLabel {
    Body,
    Head,
    HandL,
    HandR,
    FootL,
    FootR,
}

impl PartLabel {
    pub const ALL: [PartLabel; 6] = [
        PartLabel::Body,
        PartLabel::Head,
        PartLabel::HandL,
        PartLabel::HandR,
        PartLabel::FootL,
        PartLabel::FootR,
    ];

    /// The separable body parts (everything except the trunk).
    pub const PARTS: [PartLabel; 5] = [
        PartLabel::Head,
        PartLabel::HandL,
        PartLabel::HandR,
        PartLabel::FootL,
        PartLabel::FootR,
    ];

    pub fn code(self) -> u32 {
        self as u32
    }

    pub fn from_code(c: u32) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            PartLabel::Body => "body",
            PartLabel::Head => "head",
            PartLabel::HandL => "hand-l",
            PartLabel::HandR => "hand-r",
            PartLabel::FootL => "foot-l",
            PartLabel::FootR => "foot-r",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name() == s)
    }
}

/// Index maps from a separated part back to the model it was cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct Lineage {
    pub vertex_map: Vec<usize>,
    pub joint_map: Vec<usize>,
}

/// Shape, pose and expression coefficients of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: Vec<f64>,
    pub pose: PoseState,
    pub expression: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(model: &ModelContainer) -> Self {
        Self {
            beta: vec![0.0; model.shape_space.component_count],
            pose: PoseState::rest(model.n_joints()),
            expression: vec![0.0; model.expression_space.component_count],
        }
    }
}

/// A direction in parameter space for forward-mode derivatives. Vectors may
/// be shorter than the matching parameter vectors (missing entries are 0).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamTangent {
    pub beta: Vec<f64>,
    pub rotations: Vec<Vec3>,
    pub translation: Vec3,
    pub expression: Vec<f64>,
}

/// Every learned tensor of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelContainer {
    pub template: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    /// `N × K`, row-stochastic, at most [`MAX_INFLUENCES`] entries per row.
    pub skinning_weights: CsrMatrix,
    /// `K × N`, nonnegative rows summing to one.
    pub joint_regressor: CsrMatrix,
    pub shape_space: LinearShapeSpace,
    pub expression_space: LinearShapeSpace,
    pub pose_blendshapes: SparsePoseBlendshapes,
    pub tree: KinematicTree,
    pub part_labels: Vec<PartLabel>,
    pub parts: Vec<PartSpec>,
    pub foot_nets: Vec<FootDeformNet>,
    pub lineage: Option<Lineage>,
}

impl ModelContainer {
    pub fn n_vertices(&self) -> usize {
        self.template.len()
    }

    pub fn n_joints(&self) -> usize {
        self.tree.len()
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let n = self.n_vertices();
        let k = self.n_joints();
        let dim = |msg: String| Err(ValidationError::new(ValidationKind::Dimension, msg));
        self.tree.validate()?;
        if n == 0 {
            return dim("empty template".into());
        }
        if !self.template.iter().flatten().all(|v| v.is_finite()) {
            return Err(ValidationError::new(ValidationKind::NonFinite, "template"));
        }
        if self.part_labels.len() != n {
            return dim(format!("{} part labels for {n} vertices", self.part_labels.len()));
        }
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v >= n) {
                return Err(ValidationError::new(ValidationKind::Face, format!("face {i} index out of range")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(ValidationError::new(ValidationKind::Face, format!("face {i} is degenerate")));
            }
        }

        let w = &self.skinning_weights;
        if w.rows != n || w.cols != k {
            return dim(format!("skinning is {}×{}, expected {n}×{k}", w.rows, w.cols));
        }
        w.check_structure()
            .map_err(|e| ValidationError::new(ValidationKind::Dimension, format!("skinning: {e}")))?;
        for v in 0..n {
            if w.row_nnz(v) > MAX_INFLUENCES {
                return Err(ValidationError::new(
                    ValidationKind::SkinningSparsity,
                    format!("vertex {v} has {} influences", w.row_nnz(v)),
                ));
            }
            for (_, x) in w.row(v) {
                if !x.is_finite() {
                    return Err(ValidationError::new(ValidationKind::NonFinite, format!("skinning row {v}")));
                }
                if x < 0.0 {
                    return Err(ValidationError::new(
                        ValidationKind::SkinningNegative,
                        format!("vertex {v} has a negative weight"),
                    ));
                }
            }
            if (w.row_sum(v) - 1.0).abs() > ROW_SUM_TOL {
                return Err(ValidationError::new(
                    ValidationKind::SkinningRowSum,
                    format!("vertex {v} weights sum to {}", w.row_sum(v)),
                ));
            }
        }

        let r = &self.joint_regressor;
        if r.rows != k || r.cols != n {
            return dim(format!("joint regressor is {}×{}, expected {k}×{n}", r.rows, r.cols));
        }
        r.check_structure()
            .map_err(|e| ValidationError::new(ValidationKind::Dimension, format!("joint regressor: {e}")))?;
        check_regressor_rows(r)?;

        self.shape_space.validate(n, "shape")?;
        self.expression_space.validate(n, "expression")?;
        self.pose_blendshapes.validate(n, &self.tree)?;
        for p in &self.parts {
            p.validate(n)?;
        }
        for net in &self.foot_nets {
            net.validate(n, k)?;
        }
        if let Some(l) = &self.lineage {
            if l.vertex_map.len() != n || l.joint_map.len() != k {
                return Err(ValidationError::new(ValidationKind::Lineage, "index map lengths differ from model"));
            }
        }
        Ok(())
    }

    fn check_lengths(&self, beta: usize, psi: usize) -> Result<()> {
        self.shape_space.check_coeffs(beta)?;
        self.expression_space.check_coeffs(psi)
    }

    /// Joint locations of the shaped template `T̄ + B_S(β)`.
    pub fn regress_joints(&self, beta: &[f64]) -> Result<Vec<Vec3>> {
        self.check_lengths(beta.len(), 0)?;
        let shaped = self.shaped_template(beta);
        Ok(self.regress(&shaped))
    }

    /// `T̄ + B_S(β) + B_P(θ) + B_E(ψ)`.
    pub fn unposed_surface(&self, beta: &[f64], pose: &PoseState, psi: &[f64]) -> Result<Vec<Vec3>> {
        self.check_lengths(beta.len(), psi.len())?;
        pose.validate(self.n_joints())?;
        let mut v = self.shaped_template(beta);
        self.add_pose_and_expression(&pose.joint_rotations, psi, &mut v);
        Ok(v)
    }

    /// Linear blend skinning of `vertices` about `joints`.
    pub fn skin(&self, vertices: &[Vec3], joints: &[Vec3], pose: &PoseState) -> Result<Vec<Vec3>> {
        pose.validate(self.n_joints())?;
        if vertices.len() != self.n_vertices() || joints.len() != self.n_joints() {
            return Err(Error::arg("vertex or joint count does not match the model"));
        }
        Ok(self.skin_generic(vertices, joints, &pose.joint_rotations, pose.global_translation))
    }

    pub fn forward(&self, beta: &[f64], pose: &PoseState, psi: &[f64]) -> Result<PosedMesh> {
        let vertices = self.forward_vertices(beta, pose, psi, None)?;
        Ok(self.mesh(vertices))
    }

    pub fn forward_params(&self, params: &ModelParams) -> Result<PosedMesh> {
        self.forward(&params.beta, &params.pose, &params.expression)
    }

    pub(crate) fn mesh(&self, vertices: Vec<Vec3>) -> PosedMesh {
        TriangleMesh {
            vertices,
            faces: self.faces.clone(),
            labels: None,
        }
    }

    /// Posed vertices; `extra` is added to the corrected template before
    /// skinning.
    pub(crate) fn forward_vertices(
        &self,
        beta: &[f64],
        pose: &PoseState,
        psi: &[f64],
        extra: Option<&[Vec3]>,
    ) -> Result<Vec<Vec3>> {
        self.check_lengths(beta.len(), psi.len())?;
        pose.validate(self.n_joints())?;
        Ok(self.evaluate(beta, &pose.joint_rotations, pose.global_translation, psi, extra))
    }

    /// Posed vertices and their directional derivative along `dir`.
    pub fn forward_jvp(
        &self,
        beta: &[f64],
        pose: &PoseState,
        psi: &[f64],
        dir: &ParamTangent,
    ) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
        self.check_lengths(beta.len(), psi.len())?;
        pose.validate(self.n_joints())?;
        if dir.beta.len() > beta.len() || dir.expression.len() > psi.len() || dir.rotations.len() > self.n_joints() {
            return Err(Error::arg("tangent is longer than the parameters"));
        }
        let lift = |x: &[f64], d: &[f64]| -> Vec<Dual> {
            x.iter()
                .enumerate()
                .map(|(i, &v)| Dual::new(v, d.get(i).copied().unwrap_or(0.0)))
                .collect()
        };
        let b = lift(beta, &dir.beta);
        let e = lift(psi, &dir.expression);
        let rots: Vec<V3<Dual>> = pose
            .joint_rotations
            .iter()
            .enumerate()
            .map(|(j, aa)| {
                let d = dir.rotations.get(j).copied().unwrap_or([0.0; 3]);
                [Dual::new(aa[0], d[0]), Dual::new(aa[1], d[1]), Dual::new(aa[2], d[2])]
            })
            .collect();
        let t = pose.global_translation;
        let tr = [
            Dual::new(t[0], dir.translation[0]),
            Dual::new(t[1], dir.translation[1]),
            Dual::new(t[2], dir.translation[2]),
        ];
        let out = self.evaluate(&b, &rots, tr, &e, None);
        let value = out.iter().map(|p| [p[0].re, p[1].re, p[2].re]).collect();
        let tangent = out.iter().map(|p| [p[0].eps, p[1].eps, p[2].eps]).collect();
        Ok((value, tangent))
    }

    pub(crate) fn evaluate<T: Real>(
        &self,
        beta: &[T],
        rotations: &[V3<T>],
        translation: V3<T>,
        psi: &[T],
        extra: Option<&[Vec3]>,
    ) -> Vec<V3<T>> {
        let mut v = self.shaped_template(beta);
        let joints = self.regress(&v);
        self.add_pose_and_expression(rotations, psi, &mut v);
        if let Some(extra) = extra {
            for (p, e) in v.iter_mut().zip(extra) {
                p[0] += T::cst(e[0]);
                p[1] += T::cst(e[1]);
                p[2] += T::cst(e[2]);
            }
        }
        self.skin_generic(&v, &joints, rotations, translation)
    }

    fn shaped_template<T: Real>(&self, beta: &[T]) -> Vec<V3<T>> {
        let mut v: Vec<V3<T>> = self
            .template
            .iter()
            .zip(&self.shape_space.mean_offset)
            .map(|(t, m)| [T::cst(t[0] + m[0]), T::cst(t[1] + m[1]), T::cst(t[2] + m[2])])
            .collect();
        self.shape_space.accumulate(beta, &mut v);
        v
    }

    fn add_pose_and_expression<T: Real>(&self, rotations: &[V3<T>], psi: &[T], v: &mut [V3<T>]) {
        for (p, m) in v.iter_mut().zip(&self.expression_space.mean_offset) {
            if m.iter().any(|x| *x != 0.0) {
                p[0] += T::cst(m[0]);
                p[1] += T::cst(m[1]);
                p[2] += T::cst(m[2]);
            }
        }
        self.expression_space.accumulate(psi, v);
        let quats = joint_quaternions(rotations);
        self.pose_blendshapes.accumulate(&quats, &self.tree, v);
    }

    fn regress<T: Real>(&self, shaped: &[V3<T>]) -> Vec<V3<T>> {
        (0..self.n_joints())
            .map(|j| {
                let mut acc = [T::zero(); 3];
                for (v, w) in self.joint_regressor.row(j) {
                    acc[0] += shaped[v][0] * w;
                    acc[1] += shaped[v][1] * w;
                    acc[2] += shaped[v][2] * w;
                }
                acc
            })
            .collect()
    }

    fn skin_generic<T: Real>(
        &self,
        vertices: &[V3<T>],
        joints: &[V3<T>],
        rotations: &[V3<T>],
        translation: V3<T>,
    ) -> Vec<V3<T>> {
        let mats: Vec<_> = rotations.iter().map(|aa| quat_to_matrix(quat_from_axis_angle(*aa))).collect();
        let transforms = skinning_transforms(&mats, joints, &self.tree.parents, translation);
        vertices
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut acc = [T::zero(); 3];
                for (j, w) in self.skinning_weights.row(i) {
                    let (r, t) = &transforms[j];
                    for a in 0..3 {
                        acc[a] += (r[a][0] * p[0] + r[a][1] * p[1] + r[a][2] * p[2] + t[a]) * w;
                    }
                }
                acc
            })
            .collect()
    }
}

pub(crate) fn check_regressor_rows(r: &CsrMatrix) -> Result<(), ValidationError> {
    for j in 0..r.rows {
        for (_, x) in r.row(j) {
            if !x.is_finite() {
                return Err(ValidationError::new(ValidationKind::NonFinite, format!("regressor row {j}")));
            }
            if x < 0.0 {
                return Err(ValidationError::new(
                    ValidationKind::RegressorRow,
                    format!("joint {j} has a negative regressor weight"),
                ));
            }
        }
        if (r.row_sum(j) - 1.0).abs() > ROW_SUM_TOL {
            return Err(ValidationError::new(
                ValidationKind::RegressorRow,
                format!("joint {j} regressor sums to {}", r.row_sum(j)),
            ));
        }
    }
    Ok(())
}
