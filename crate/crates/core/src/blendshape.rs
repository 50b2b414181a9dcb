//! Additive corrective fields: PCA shape/expression spaces and the sparse
//! per-joint pose correctives.

use crate::error::{Error, Result, ValidationError, ValidationKind};
use crate::kinematics::{quat_from_axis_angle, KinematicTree, PoseState, Vec3, V3};
use crate::real::Real;

/// Components fused per pass over the output; one pass per component is
/// bound by re-reading the output.
const GROUP: usize = 8;

#[inline]
fn accumulate_group<T: Real, const G: usize>(out: &mut [T], group: [(T, &[f32]); G]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = group[0].0 * group[0].1[i] as f64;
        for &(c, b) in &group[1..] {
            acc += c * b[i] as f64;
        }
        *o += acc;
    }
}

/// Linear (PCA) offset space over all model vertices.
///
/// The basis is stored component-major (`[S, N, 3]`) in single precision so
/// that truncated coefficient vectors only touch the leading components.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearShapeSpace {
    pub mean_offset: Vec<Vec3>,
    pub basis: Vec<f32>,
    pub component_count: usize,
}

impl LinearShapeSpace {
    pub fn zeros(n_vertices: usize, components: usize) -> Self {
        Self {
            mean_offset: vec![[0.0; 3]; n_vertices],
            basis: vec![0.0; components * n_vertices * 3],
            component_count: components,
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.mean_offset.len()
    }

    /// Offsets of component `k`, flattened `[N, 3]`.
    pub fn component(&self, k: usize) -> &[f32] {
        let stride = self.n_vertices() * 3;
        &self.basis[k * stride..(k + 1) * stride]
    }

    pub fn component_mut(&mut self, k: usize) -> &mut [f32] {
        let stride = self.n_vertices() * 3;
        &mut self.basis[k * stride..(k + 1) * stride]
    }

    pub fn value(&self, vertex: usize, axis: usize, k: usize) -> f64 {
        self.basis[(k * self.n_vertices() + vertex) * 3 + axis] as f64
    }

    pub fn shape_offsets(&self, coeffs: &[f64]) -> Result<Vec<Vec3>> {
        self.check_coeffs(coeffs.len())?;
        let mut out = self.mean_offset.clone();
        self.accumulate(coeffs, &mut out);
        Ok(out)
    }

    pub(crate) fn check_coeffs(&self, len: usize) -> Result<()> {
        if len > self.component_count {
            return Err(Error::arg(format!(
                "{len} coefficients given for a space of {} components",
                self.component_count
            )));
        }
        Ok(())
    }

    /// `out += Σ_k coeffs[k]·component(k)`; shorter coefficient vectors act
    /// as zero-padded.
    pub(crate) fn accumulate<T: Real>(&self, coeffs: &[T], out: &mut [V3<T>]) {
        let active: Vec<(T, &[f32])> = coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_exact_zero())
            .map(|(k, &c)| (c, self.component(k)))
            .collect();
        let flat = out.as_flattened_mut();
        let mut groups = active.chunks_exact(GROUP);
        for g in &mut groups {
            accumulate_group::<T, GROUP>(flat, std::array::from_fn(|i| g[i]));
        }
        for &single in groups.remainder() {
            accumulate_group::<T, 1>(flat, [single]);
        }
    }

    /// Rows restricted to `vertices`, in the given order.
    pub fn slice_vertices(&self, vertices: &[usize]) -> LinearShapeSpace {
        let n = vertices.len();
        let mut out = LinearShapeSpace::zeros(n, self.component_count);
        for (i, &v) in vertices.iter().enumerate() {
            out.mean_offset[i] = self.mean_offset[v];
        }
        for k in 0..self.component_count {
            let src = self.component(k).to_vec();
            let dst = out.component_mut(k);
            for (i, &v) in vertices.iter().enumerate() {
                dst[i * 3..i * 3 + 3].copy_from_slice(&src[v * 3..v * 3 + 3]);
            }
        }
        out
    }

    pub fn validate(&self, n_vertices: usize, what: &str) -> Result<(), ValidationError> {
        if self.mean_offset.len() != n_vertices || self.basis.len() != self.component_count * n_vertices * 3 {
            return Err(ValidationError::new(
                ValidationKind::Dimension,
                format!("{what} space does not match {n_vertices} vertices"),
            ));
        }
        if self.component_count == 0 {
            return Err(ValidationError::new(
                ValidationKind::Dimension,
                format!("{what} space has no components"),
            ));
        }
        if !self.basis.iter().all(|v| v.is_finite()) || !self.mean_offset.iter().flatten().all(|v| v.is_finite()) {
            return Err(ValidationError::new(ValidationKind::NonFinite, format!("{what} space")));
        }
        Ok(())
    }
}

/// Pose corrective of one joint: the activated vertex set `V_j`, the nonzero
/// activation weights on it, and the `|V_j| × 3 × F` coefficient block.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseBlock {
    pub joint: usize,
    pub vertices: Vec<usize>,
    pub activation: Vec<f64>,
    /// Row-major `[|V_j|, 3, feature_len]`.
    pub coeffs: Vec<f64>,
    pub feature_len: usize,
}

impl PoseBlock {
    pub fn coeff(&self, local_vertex: usize, axis: usize, f: usize) -> f64 {
        self.coeffs[(local_vertex * 3 + axis) * self.feature_len + f]
    }

    fn add_contribution<T: Real>(&self, feature: &[T], out: &mut [V3<T>]) {
        let fl = self.feature_len;
        for (i, (&v, &a)) in self.vertices.iter().zip(&self.activation).enumerate() {
            for axis in 0..3 {
                let row = &self.coeffs[(i * 3 + axis) * fl..(i * 3 + axis + 1) * fl];
                let mut acc = T::zero();
                for (&c, &x) in row.iter().zip(feature) {
                    acc += x * c;
                }
                out[v][axis] += acc * a;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsePoseBlendshapes {
    pub n_vertices: usize,
    pub blocks: Vec<PoseBlock>,
}

impl SparsePoseBlendshapes {
    pub fn empty(n_vertices: usize) -> Self {
        Self {
            n_vertices,
            blocks: Vec::new(),
        }
    }

    pub fn block_for(&self, joint: usize) -> Option<&PoseBlock> {
        self.blocks.iter().find(|b| b.joint == joint)
    }

    /// Offsets from explicitly supplied per-block features (one feature
    /// vector per entry of `blocks`, same order).
    pub fn offsets_from_features(&self, features: &[Vec<f64>]) -> Result<Vec<Vec3>> {
        if features.len() != self.blocks.len() {
            return Err(Error::arg("one feature vector per pose block is required"));
        }
        let mut out = vec![[0.0; 3]; self.n_vertices];
        for (b, f) in self.blocks.iter().zip(features) {
            if f.len() != b.feature_len {
                return Err(Error::arg(format!("joint {} expects {} features", b.joint, b.feature_len)));
            }
            if f.iter().all(|x| *x == 0.0) {
                continue;
            }
            b.add_contribution(f, &mut out);
        }
        Ok(out)
    }

    /// Contribution of the single block of `joint` for `pose`.
    pub fn joint_contribution(&self, joint: usize, pose: &PoseState, tree: &KinematicTree) -> Result<Vec<Vec3>> {
        self.check(pose, tree)?;
        let mut out = vec![[0.0; 3]; self.n_vertices];
        if let Some(b) = self.block_for(joint) {
            let quats = joint_quaternions::<f64>(&pose.joint_rotations);
            let f = block_feature(&quats, &tree.neighbor_sets[b.joint]);
            b.add_contribution(&f, &mut out);
        }
        Ok(out)
    }

    pub fn pose_offsets(&self, pose: &PoseState, tree: &KinematicTree) -> Result<Vec<Vec3>> {
        self.check(pose, tree)?;
        let quats = joint_quaternions::<f64>(&pose.joint_rotations);
        let mut out = vec![[0.0; 3]; self.n_vertices];
        self.accumulate(&quats, tree, &mut out);
        Ok(out)
    }

    fn check(&self, pose: &PoseState, tree: &KinematicTree) -> Result<()> {
        pose.validate(tree.len())?;
        for b in &self.blocks {
            if b.joint >= tree.len() || b.feature_len != 4 * tree.neighbor_sets[b.joint].len() {
                return Err(Error::arg(format!("pose block for joint {} does not match the tree", b.joint)));
            }
        }
        Ok(())
    }

    pub(crate) fn accumulate<T: Real>(&self, quats: &[[T; 4]], tree: &KinematicTree, out: &mut [V3<T>]) {
        for b in &self.blocks {
            let f = block_feature(quats, &tree.neighbor_sets[b.joint]);
            if f.iter().all(|x| x.is_exact_zero()) {
                continue;
            }
            b.add_contribution(&f, out);
        }
    }

    pub fn validate(&self, n_vertices: usize, tree: &KinematicTree) -> Result<(), ValidationError> {
        let bad = |msg: String| Err(ValidationError::new(ValidationKind::PoseBlock, msg));
        if self.n_vertices != n_vertices {
            return Err(ValidationError::new(
                ValidationKind::Dimension,
                format!("pose blendshapes cover {} vertices, model has {n_vertices}", self.n_vertices),
            ));
        }
        let mut seen = vec![false; tree.len()];
        for b in &self.blocks {
            if b.joint >= tree.len() {
                return bad(format!("block for joint {} out of range", b.joint));
            }
            if std::mem::replace(&mut seen[b.joint], true) {
                return bad(format!("two blocks for joint {}", b.joint));
            }
            let ne = &tree.neighbor_sets[b.joint];
            if ne.is_empty() || b.feature_len != 4 * ne.len() {
                return bad(format!("joint {} block feature width {} != 4·|ne|", b.joint, b.feature_len));
            }
            if b.activation.len() != b.vertices.len() || b.coeffs.len() != b.vertices.len() * 3 * b.feature_len {
                return bad(format!("joint {} block tensor sizes inconsistent", b.joint));
            }
            let mut vs = b.vertices.clone();
            vs.sort_unstable();
            if vs.windows(2).any(|w| w[0] == w[1]) || vs.last().is_some_and(|&v| v >= n_vertices) {
                return bad(format!("joint {} block has repeated or out-of-range vertices", b.joint));
            }
            if b.activation.contains(&0.0) {
                return bad(format!("joint {} stores a zero activation weight", b.joint));
            }
            if !b.activation.iter().chain(&b.coeffs).all(|v| v.is_finite()) {
                return Err(ValidationError::new(
                    ValidationKind::NonFinite,
                    format!("pose block of joint {}", b.joint),
                ));
            }
        }
        Ok(())
    }
}

pub(crate) fn joint_quaternions<T: Real>(rotations: &[[T; 3]]) -> Vec<[T; 4]> {
    rotations.iter().map(|aa| quat_from_axis_angle(*aa)).collect()
}

pub(crate) fn block_feature<T: Real>(quats: &[[T; 4]], ne: &[usize]) -> Vec<T> {
    let mut f = Vec::with_capacity(4 * ne.len());
    for &k in ne {
        let q = quats[k];
        f.extend_from_slice(&[q[0] - T::one(), q[1], q[2], q[3]]);
    }
    f
}
