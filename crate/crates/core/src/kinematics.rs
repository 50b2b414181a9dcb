//! Rotations, rigid transforms, kinematic-tree traversal and the per-joint
//! quaternion pose features that drive the pose-corrective blendshapes.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationError, ValidationKind};
use crate::real::Real;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub(crate) type V3<T> = [T; 3];
pub(crate) type M3<T> = [[T; 3]; 3];

/// Rooted joint hierarchy. Joint 0 is the root; every other joint's parent
/// has a smaller index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicTree {
    pub parents: Vec<Option<usize>>,
    pub joint_names: Vec<String>,
    /// `neighbor_sets[j]` lists the joints whose rotations condition the
    /// pose corrective of joint `j`, in feature order.
    pub neighbor_sets: Vec<Vec<usize>>,
}

impl KinematicTree {
    pub fn new(
        parents: Vec<Option<usize>>,
        joint_names: Vec<String>,
        neighbor_sets: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let tree = Self {
            parents,
            joint_names,
            neighbor_sets,
        };
        tree.validate()?;
        Ok(tree)
    }

    /// Tree whose neighbor sets are built with [`default_neighbor_sets`].
    pub fn with_default_neighbors(parents: Vec<Option<usize>>, joint_names: Vec<String>) -> Result<Self> {
        let neighbor_sets = default_neighbor_sets(&parents);
        Self::new(parents, joint_names, neighbor_sets)
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parents[j]
    }

    pub fn children(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.parents
            .iter()
            .enumerate()
            .filter(move |(_, p)| **p == Some(j))
            .map(|(k, _)| k)
    }

    /// `true` if `a` is `d` or one of its ancestors.
    pub fn is_ancestor_or_self(&self, a: usize, d: usize) -> bool {
        let mut cur = Some(d);
        while let Some(c) = cur {
            if c == a {
                return true;
            }
            cur = self.parents[c];
        }
        false
    }

    /// Joint `j` together with all of its descendants, ascending.
    pub fn subtree(&self, j: usize) -> Vec<usize> {
        let mut inside = vec![false; self.len()];
        inside[j] = true;
        for k in j + 1..self.len() {
            if let Some(p) = self.parents[k] {
                inside[k] = inside[p];
            }
        }
        (0..self.len()).filter(|&k| inside[k]).collect()
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let k = self.parents.len();
        let err = |kind, msg: String| Err(ValidationError::new(kind, msg));
        if k == 0 {
            return err(ValidationKind::Tree, "empty kinematic tree".into());
        }
        if self.joint_names.len() != k || self.neighbor_sets.len() != k {
            return err(
                ValidationKind::Dimension,
                format!(
                    "tree has {k} parents, {} names, {} neighbor sets",
                    self.joint_names.len(),
                    self.neighbor_sets.len()
                ),
            );
        }
        if self.parents[0].is_some() {
            return err(ValidationKind::Tree, "joint 0 must be the root".into());
        }
        for (j, p) in self.parents.iter().enumerate().skip(1) {
            match p {
                None => return err(ValidationKind::Tree, format!("joint {j} is a second root")),
                Some(p) if *p >= j => {
                    return err(
                        ValidationKind::Tree,
                        format!("joint {j} has parent {p}; parents must precede children"),
                    )
                }
                _ => {}
            }
        }
        for (j, ne) in self.neighbor_sets.iter().enumerate() {
            if j > 0 && ne.is_empty() {
                return err(ValidationKind::NeighborSet, format!("joint {j} has an empty neighbor set"));
            }
            for (i, &n) in ne.iter().enumerate() {
                if n >= k {
                    return err(ValidationKind::NeighborSet, format!("joint {j} lists neighbor {n} >= {k}"));
                }
                if ne[..i].contains(&n) {
                    return err(ValidationKind::NeighborSet, format!("joint {j} lists neighbor {n} twice"));
                }
            }
        }
        Ok(())
    }
}

/// The joint itself, its parent and its children, excluding the root: the
/// global orientation never conditions a corrective.
pub fn default_neighbor_sets(parents: &[Option<usize>]) -> Vec<Vec<usize>> {
    let k = parents.len();
    (0..k)
        .map(|j| {
            if j == 0 {
                return Vec::new();
            }
            let mut ne = Vec::new();
            if let Some(p) = parents[j] {
                if p != 0 {
                    ne.push(p);
                }
            }
            ne.push(j);
            ne.extend((0..k).filter(|&c| parents[c] == Some(j)));
            ne
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn to_matrix(self) -> Mat3 {
        quat_to_matrix(self.to_array())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        translation: [0.0; 3],
    };

    pub fn apply(&self, p: Vec3) -> Vec3 {
        let r = mat_vec(&self.rotation, &p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let t = self.apply(other.translation);
        RigidTransform {
            rotation: mat_mul(&self.rotation, &other.rotation),
            translation: t,
        }
    }
}

/// Per-joint axis-angle rotations plus a global translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseState {
    pub joint_rotations: Vec<Vec3>,
    pub global_translation: Vec3,
}

impl PoseState {
    pub fn rest(joint_count: usize) -> Self {
        Self {
            joint_rotations: vec![[0.0; 3]; joint_count],
            global_translation: [0.0; 3],
        }
    }

    pub fn joint_count(&self) -> usize {
        self.joint_rotations.len()
    }

    pub fn validate(&self, joint_count: usize) -> Result<()> {
        if self.joint_rotations.len() != joint_count {
            return Err(Error::arg(format!(
                "pose has {} joint rotations, model has {joint_count} joints",
                self.joint_rotations.len()
            )));
        }
        if !self.global_translation.iter().all(|v| v.is_finite()) {
            return Err(Error::arg("non-finite global translation"));
        }
        for (j, aa) in self.joint_rotations.iter().enumerate() {
            if !aa.iter().all(|v| v.is_finite()) {
                return Err(Error::arg(format!("non-finite rotation at joint {j}")));
            }
            if norm(aa) >= 2.0 * PI {
                return Err(Error::arg(format!("rotation at joint {j} exceeds 2π")));
            }
        }
        Ok(())
    }
}

pub fn axis_angle_to_quaternion(aa: Vec3) -> Result<UnitQuaternion> {
    if !aa.iter().all(|v| v.is_finite()) {
        return Err(Error::arg("non-finite axis-angle"));
    }
    let [w, x, y, z] = quat_from_axis_angle(aa);
    Ok(UnitQuaternion { w, x, y, z })
}

/// Rotation-matrix exponential of an axis-angle vector, computed directly
/// from the axis and angle without going through quaternions.
pub fn rodrigues(aa: Vec3) -> Mat3 {
    let theta = norm(&aa);
    let k = skew(&aa);
    let k2 = mat_mul(&k, &k);
    let (a, b) = if theta < 1e-6 {
        (1.0 - theta * theta / 6.0, 0.5 - theta * theta / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    };
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = if i == j { 1.0 } else { 0.0 } + a * k[i][j] + b * k2[i][j];
        }
    }
    r
}

/// Concatenation over `ne(j)` of `q(θ_k) − (1,0,0,0)`.
pub fn pose_feature(pose: &PoseState, tree: &KinematicTree, j: usize) -> Result<Vec<f64>> {
    if j >= tree.len() {
        return Err(Error::arg(format!("joint {j} out of range for {} joints", tree.len())));
    }
    if tree.parent(j).is_none() {
        return Err(Error::arg("pose feature requested for the root joint"));
    }
    if pose.joint_count() != tree.len() {
        return Err(Error::arg("pose and tree joint counts differ"));
    }
    let mut f = Vec::with_capacity(4 * tree.neighbor_sets[j].len());
    for &k in &tree.neighbor_sets[j] {
        let q = axis_angle_to_quaternion(pose.joint_rotations[k])?;
        f.extend_from_slice(&[q.w - 1.0, q.x, q.y, q.z]);
    }
    Ok(f)
}

/// Skinning transforms: maps a rest-pose point rigidly attached to joint `k`
/// to its posed position.
pub fn world_transforms(pose: &PoseState, joints: &[Vec3], tree: &KinematicTree) -> Result<Vec<RigidTransform>> {
    pose.validate(tree.len())?;
    if joints.len() != tree.len() {
        return Err(Error::arg("joint location count differs from tree size"));
    }
    if !joints.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::arg("non-finite joint locations"));
    }
    let rotations: Vec<Mat3> = pose
        .joint_rotations
        .iter()
        .map(|aa| quat_to_matrix(quat_from_axis_angle(*aa)))
        .collect();
    Ok(skinning_transforms(&rotations, joints, &tree.parents, pose.global_translation)
        .into_iter()
        .map(|(rotation, translation)| RigidTransform { rotation, translation })
        .collect())
}

// ---- generic kernels shared by evaluation and forward-mode derivatives ----

pub(crate) fn quat_from_axis_angle<T: Real>(aa: V3<T>) -> [T; 4] {
    let t2 = aa[0] * aa[0] + aa[1] * aa[1] + aa[2] * aa[2];
    let (w, s) = if t2.value() < 1e-8 {
        // 4th-order series of cos(t/2) and sin(t/2)/t.
        let t4 = t2 * t2;
        (
            T::one() - t2 * (1.0 / 8.0) + t4 * (1.0 / 384.0),
            T::cst(0.5) - t2 * (1.0 / 48.0) + t4 * (1.0 / 3840.0),
        )
    } else {
        let t = t2.sqrt();
        let h = t * 0.5;
        (h.cos(), h.sin() / t)
    };
    let q = [w, s * aa[0], s * aa[1], s * aa[2]];
    if w.value() < 0.0 {
        [-q[0], -q[1], -q[2], -q[3]]
    } else {
        q
    }
}

pub(crate) fn quat_to_matrix<T: Real>(q: [T; 4]) -> M3<T> {
    let [w, x, y, z] = q;
    let one = T::one();
    [
        [
            one - (y * y + z * z) * 2.0,
            (x * y - w * z) * 2.0,
            (x * z + w * y) * 2.0,
        ],
        [
            (x * y + w * z) * 2.0,
            one - (x * x + z * z) * 2.0,
            (y * z - w * x) * 2.0,
        ],
        [
            (x * z - w * y) * 2.0,
            (y * z + w * x) * 2.0,
            one - (x * x + y * y) * 2.0,
        ],
    ]
}

/// Forward kinematics producing `(R_world, t_world − R_world·j)` per joint.
pub(crate) fn skinning_transforms<T: Real>(
    rotations: &[M3<T>],
    joints: &[V3<T>],
    parents: &[Option<usize>],
    translation: V3<T>,
) -> Vec<(M3<T>, V3<T>)> {
    let k = parents.len();
    let mut world: Vec<(M3<T>, V3<T>)> = Vec::with_capacity(k);
    for j in 0..k {
        let g = match parents[j] {
            None => (rotations[j], add3(joints[j], translation)),
            Some(p) => {
                let (rp, tp) = &world[p];
                let local = sub3(joints[j], joints[p]);
                (mat_mul(rp, &rotations[j]), add3(mat_vec(rp, &local), *tp))
            }
        };
        world.push(g);
    }
    world
        .into_iter()
        .zip(joints)
        .map(|((r, t), jl)| {
            let rj = mat_vec(&r, jl);
            (r, sub3(t, rj))
        })
        .collect()
}

#[inline]
pub(crate) fn mat_mul<T: Real>(a: &M3<T>, b: &M3<T>) -> M3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

#[inline]
pub(crate) fn mat_vec<T: Real>(a: &M3<T>, v: &V3<T>) -> V3<T> {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

#[inline]
pub(crate) fn add3<T: Real>(a: V3<T>, b: V3<T>) -> V3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub(crate) fn sub3<T: Real>(a: V3<T>, b: V3<T>) -> V3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn norm(v: &Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn skew(v: &Vec3) -> Mat3 {
    [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
}
