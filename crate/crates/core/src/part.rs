//! Cutting a standalone body-part model out of a full model.
//!
//! A joint belongs to a part when it carries skinning weight or pose
//! corrective activation on any part vertex. The resulting joint set is
//! closed under ancestors up to its lowest common ancestor so the part keeps
//! a single rooted tree. Skinning columns, corrective blocks and neighbor
//! sets are then sliced to that set; nothing is renormalized except the
//! joint regressor in fallback mode.

use log::warn;

use crate::blendshape::{LinearShapeSpace, PoseBlock, SparsePoseBlendshapes};
use crate::error::{Error, Result, ValidationError, ValidationKind};
use crate::foot::FootDeformNet;
use crate::kinematics::{KinematicTree, PoseState, Vec3};
use crate::model::{check_regressor_rows, Lineage, ModelContainer, PartLabel};
use crate::sparse::CsrMatrix;

/// Vertex subset defining a body part, with optional part-local assets.
#[derive(Debug, Clone, PartialEq)]
pub struct PartSpec {
    pub name: String,
    pub vertex_indices: Vec<usize>,
    /// Shape space over the part vertices (in `vertex_indices` order).
    pub local_shape_basis: Option<LinearShapeSpace>,
    /// `|J_bp| × |V_bp|` regressor; rows follow the influencing joint order.
    pub local_joint_regressor: Option<CsrMatrix>,
}

impl PartSpec {
    pub fn new(name: impl Into<String>, vertex_indices: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            vertex_indices,
            local_shape_basis: None,
            local_joint_regressor: None,
        }
    }

    pub fn from_label(model: &ModelContainer, label: PartLabel) -> Self {
        let vs = (0..model.n_vertices()).filter(|&v| model.part_labels[v] == label).collect();
        Self::new(label.name(), vs)
    }

    pub fn whole(model: &ModelContainer) -> Self {
        Self::new("whole", (0..model.n_vertices()).collect())
    }

    pub fn validate(&self, n_vertices: usize) -> Result<(), ValidationError> {
        let bad = |m: String| Err(ValidationError::new(ValidationKind::Part, format!("part '{}': {m}", self.name)));
        if self.vertex_indices.is_empty() {
            return bad("no vertices".into());
        }
        let mut seen = vec![false; n_vertices];
        for &v in &self.vertex_indices {
            if v >= n_vertices {
                return bad(format!("vertex {v} out of range"));
            }
            if std::mem::replace(&mut seen[v], true) {
                return bad(format!("vertex {v} listed twice"));
            }
        }
        if let Some(s) = &self.local_shape_basis {
            s.validate(self.vertex_indices.len(), "local shape")?;
        }
        if let Some(r) = &self.local_joint_regressor {
            if r.cols != self.vertex_indices.len() {
                return bad("local joint regressor width differs from vertex count".into());
            }
            r.check_structure().or_else(bad)?;
            check_regressor_rows(r)?;
        }
        Ok(())
    }
}

/// A separated part plus maps back to the model it was cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct PartModel {
    pub model: ModelContainer,
    /// Part vertex → source vertex.
    pub vertex_map: Vec<usize>,
    /// Part joint → source joint.
    pub joint_map: Vec<usize>,
}

impl PartModel {
    pub fn restrict_pose(&self, pose: &PoseState) -> PoseState {
        PoseState {
            joint_rotations: self.joint_map.iter().map(|&j| pose.joint_rotations[j]).collect(),
            global_translation: pose.global_translation,
        }
    }

    pub fn restrict_vertices(&self, vertices: &[Vec3]) -> Vec<Vec3> {
        self.vertex_map.iter().map(|&v| vertices[v]).collect()
    }
}

fn part_mask(model: &ModelContainer, part: &PartSpec) -> Result<Vec<bool>> {
    part.validate(model.n_vertices())
        .map_err(|e| Error::InvalidPart(e.detail))?;
    let mut mask = vec![false; model.n_vertices()];
    part.vertex_indices.iter().for_each(|&v| mask[v] = true);
    Ok(mask)
}

fn influence_flags(model: &ModelContainer, mask: &[bool]) -> Vec<bool> {
    let mut flags = vec![false; model.n_joints()];
    for (v, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        for (j, w) in model.skinning_weights.row(v) {
            if w.abs() > 0.0 {
                flags[j] = true;
            }
        }
    }
    for b in &model.pose_blendshapes.blocks {
        if b.vertices.iter().zip(&b.activation).any(|(&v, a)| mask[v] && a.abs() > 0.0) {
            flags[b.joint] = true;
        }
    }
    flags
}

/// Whether joint `j` skins or activates any vertex of `part`.
pub fn joint_influences(model: &ModelContainer, part: &PartSpec, j: usize) -> Result<bool> {
    if j >= model.n_joints() {
        return Err(Error::arg(format!("joint {j} out of range")));
    }
    let mask = part_mask(model, part)?;
    Ok(influence_flags(model, &mask)[j])
}

/// Influencing joints plus the ancestors connecting them to their lowest
/// common ancestor, ascending (hence topologically ordered).
pub fn influencing_joint_set(model: &ModelContainer, part: &PartSpec) -> Result<Vec<usize>> {
    let mask = part_mask(model, part)?;
    let flags = influence_flags(model, &mask);
    let raw: Vec<usize> = (0..flags.len()).filter(|&j| flags[j]).collect();
    if raw.is_empty() {
        return Err(Error::InvalidPart(format!("no joint influences part '{}'", part.name)));
    }
    Ok(close_under_ancestors(&model.tree, &raw))
}

fn close_under_ancestors(tree: &KinematicTree, joints: &[usize]) -> Vec<usize> {
    let ancestors = |j: usize| {
        let mut chain = vec![j];
        let mut cur = j;
        while let Some(p) = tree.parent(cur) {
            chain.push(p);
            cur = p;
        }
        chain
    };
    // lowest common ancestor: deepest joint on every root path
    let mut common = ancestors(joints[0]);
    for &j in &joints[1..] {
        let a = ancestors(j);
        common.retain(|c| a.contains(c));
    }
    let lca = common[0];
    let mut inside = vec![false; tree.len()];
    for &j in joints {
        let mut cur = j;
        loop {
            inside[cur] = true;
            if cur == lca {
                break;
            }
            cur = tree.parent(cur).expect("lca is an ancestor");
        }
    }
    (0..tree.len()).filter(|&j| inside[j]).collect()
}

/// Slices `model` down to `part`.
pub fn separate(model: &ModelContainer, part: &PartSpec) -> Result<PartModel> {
    let mask = part_mask(model, part)?;
    let joints = influencing_joint_set(model, part)?;
    let vmap = part.vertex_indices.clone();
    let mut vinv = vec![usize::MAX; model.n_vertices()];
    vmap.iter().enumerate().for_each(|(i, &v)| vinv[v] = i);
    let mut jinv = vec![usize::MAX; model.n_joints()];
    joints.iter().enumerate().for_each(|(i, &j)| jinv[j] = i);
    let kp = joints.len();

    let template = vmap.iter().map(|&v| model.template[v]).collect();
    let faces = model
        .faces
        .iter()
        .filter(|f| f.iter().all(|&v| mask[v]))
        .map(|f| [vinv[f[0]], vinv[f[1]], vinv[f[2]]])
        .collect();
    let skin_rows: Vec<Vec<(usize, f64)>> = vmap
        .iter()
        .map(|&v| model.skinning_weights.row(v).map(|(j, w)| (jinv[j], w)).collect())
        .collect();
    let skinning_weights = CsrMatrix::from_rows(kp, &skin_rows);

    // Tree and corrective blocks.
    let parents = joints
        .iter()
        .map(|&j| if j == joints[0] { None } else { model.tree.parent(j).map(|p| jinv[p]) })
        .collect();
    let names = joints.iter().map(|&j| model.tree.joint_names[j].clone()).collect();
    let mut neighbor_sets = Vec::with_capacity(kp);
    let mut blocks = Vec::new();
    for (pj, &j) in joints.iter().enumerate() {
        let ne = &model.tree.neighbor_sets[j];
        let kept: Vec<usize> = (0..ne.len()).filter(|&s| jinv[ne[s]] != usize::MAX).collect();
        let mut part_ne: Vec<usize> = kept.iter().map(|&s| jinv[ne[s]]).collect();
        let block = model.pose_blendshapes.block_for(j);
        if let Some(b) = block {
            if let Some(pb) = slice_block(b, ne, &kept, &mask, &vinv, pj, &model.tree.joint_names[j])? {
                blocks.push(pb);
            }
        }
        if part_ne.is_empty() && pj != 0 {
            part_ne.push(pj);
        }
        neighbor_sets.push(part_ne);
    }
    // blocks whose neighbor set was replaced by the self fallback carry no coefficients
    blocks.retain(|b: &PoseBlock| b.feature_len == 4 * neighbor_sets[b.joint].len());
    let tree = KinematicTree::new(parents, names, neighbor_sets)?;

    let joint_regressor = match &part.local_joint_regressor {
        Some(r) => {
            if r.rows != kp {
                return Err(Error::InvalidPart(format!(
                    "local joint regressor has {} rows, part has {kp} joints",
                    r.rows
                )));
            }
            r.clone()
        }
        None => fallback_regressor(model, &joints, &vinv, vmap.len(), &part.name)?,
    };
    let shape_space = match &part.local_shape_basis {
        Some(s) => s.clone(),
        None => model.shape_space.slice_vertices(&vmap),
    };
    let expression_space = model.expression_space.slice_vertices(&vmap);
    let foot_nets = model
        .foot_nets
        .iter()
        .filter(|n| n.vertex_indices.iter().all(|&v| mask[v]) && n.joint_indices.iter().all(|&j| jinv[j] != usize::MAX))
        .map(|n| FootDeformNet {
            vertex_indices: n.vertex_indices.iter().map(|&v| vinv[v]).collect(),
            joint_indices: n.joint_indices.iter().map(|&j| jinv[j]).collect(),
            ..n.clone()
        })
        .collect();
    let lineage = match &model.lineage {
        Some(l) => Lineage {
            vertex_map: vmap.iter().map(|&v| l.vertex_map[v]).collect(),
            joint_map: joints.iter().map(|&j| l.joint_map[j]).collect(),
        },
        None => Lineage {
            vertex_map: vmap.clone(),
            joint_map: joints.clone(),
        },
    };

    let part_model = ModelContainer {
        template,
        faces,
        skinning_weights,
        joint_regressor,
        shape_space,
        expression_space,
        pose_blendshapes: SparsePoseBlendshapes {
            n_vertices: vmap.len(),
            blocks,
        },
        tree,
        part_labels: vmap.iter().map(|&v| model.part_labels[v]).collect(),
        parts: Vec::new(),
        foot_nets,
        lineage: Some(lineage),
    };
    part_model.validate().map_err(|e| {
        if e.kind == ValidationKind::SkinningRowSum {
            Error::ModelInconsistency(format!("part skinning lost mass: {}", e.detail))
        } else {
            Error::Validation(e)
        }
    })?;
    Ok(PartModel {
        model: part_model,
        vertex_map: vmap,
        joint_map: joints,
    })
}

fn slice_block(
    b: &PoseBlock,
    ne: &[usize],
    kept: &[usize],
    mask: &[bool],
    vinv: &[usize],
    part_joint: usize,
    name: &str,
) -> Result<Option<PoseBlock>> {
    let locals: Vec<usize> = (0..b.vertices.len()).filter(|&i| mask[b.vertices[i]]).collect();
    if locals.is_empty() {
        return Ok(None);
    }
    for s in (0..ne.len()).filter(|s| !kept.contains(s)) {
        for &i in &locals {
            for a in 0..3 {
                if (0..4).any(|c| b.coeff(i, a, 4 * s + c) != 0.0) {
                    return Err(Error::ModelInconsistency(format!(
                        "corrective of joint '{name}' depends on joint {} outside the part on part vertex {}",
                        ne[s], b.vertices[i]
                    )));
                }
            }
        }
    }
    if kept.is_empty() {
        return Ok(None);
    }
    let fl = 4 * kept.len();
    let mut coeffs = Vec::with_capacity(locals.len() * 3 * fl);
    for &i in &locals {
        for a in 0..3 {
            for &s in kept {
                for c in 0..4 {
                    coeffs.push(b.coeff(i, a, 4 * s + c));
                }
            }
        }
    }
    Ok(Some(PoseBlock {
        joint: part_joint,
        vertices: locals.iter().map(|&i| vinv[b.vertices[i]]).collect(),
        activation: locals.iter().map(|&i| b.activation[i]).collect(),
        coeffs,
        feature_len: fl,
    }))
}

fn fallback_regressor(
    model: &ModelContainer,
    joints: &[usize],
    vinv: &[usize],
    n_part: usize,
    name: &str,
) -> Result<CsrMatrix> {
    let mut renormalized = 0;
    let mut rows = Vec::with_capacity(joints.len());
    for &j in joints {
        let row: Vec<(usize, f64)> = model
            .joint_regressor
            .row(j)
            .filter(|(v, _)| vinv[*v] != usize::MAX)
            .map(|(v, w)| (vinv[v], w))
            .collect();
        let mass: f64 = row.iter().map(|(_, w)| w).sum();
        if mass <= 0.0 {
            return Err(Error::InvalidPart(format!(
                "joint '{}' has no regressor support inside part '{name}'; supply a local joint regressor",
                model.tree.joint_names[j]
            )));
        }
        if mass != model.joint_regressor.row_sum(j) {
            renormalized += 1;
            rows.push(row.into_iter().map(|(v, w)| (v, w / mass)).collect());
        } else {
            rows.push(row);
        }
    }
    if renormalized > 0 {
        warn!("part '{name}': {renormalized} sliced joint regressor rows renormalized (no local regressor supplied)");
    }
    Ok(CsrMatrix::from_rows(n_part, &rows))
}
