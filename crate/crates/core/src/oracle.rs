//! Brute-force reference evaluation of the forward model.
//!
//! Every sparse tensor is expanded to a dense array and evaluated with plain
//! loops, 4×4 homogeneous transforms and a matrix-exponential rotation. Only
//! the raw fields of [`ModelContainer`] are read; no evaluation routine of
//! the optimized path is called.

use crate::error::{Error, Result};
use crate::kinematics::{PoseState, Vec3};
use crate::model::ModelContainer;

/// Largest number of dense array entries the oracle will allocate.
pub const ORACLE_LIMIT: usize = 1_000_000;

/// Entries of every dense array built by [`oracle_forward`]: skinning and
/// regressor matrices, both PCA bases and one expanded block at a time.
pub fn dense_footprint(model: &ModelContainer) -> usize {
    let n = model.template.len();
    let k = model.tree.parents.len();
    let comps = model.shape_space.component_count + model.expression_space.component_count;
    let block = model.pose_blendshapes.blocks.iter().map(|b| n * (1 + 3 * b.feature_len)).max().unwrap_or(0);
    2 * n * k + 3 * n * comps + block
}

type Mat4 = [[f64; 4]; 4];

fn mat4_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn homogeneous(r: [[f64; 3]; 3], t: Vec3) -> Mat4 {
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&r[i]);
        m[i][3] = t[i];
    }
    m[3][3] = 1.0;
    m
}

/// `exp([ω]×)` via `I + sinθ K + (1 − cosθ) K²`.
fn exp_so3(w: Vec3) -> [[f64; 3]; 3] {
    let theta = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    let mut r = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    if theta == 0.0 {
        return r;
    }
    let u = [w[0] / theta, w[1] / theta, w[2] / theta];
    let k = [[0.0, -u[2], u[1]], [u[2], 0.0, -u[0]], [-u[1], u[0], 0.0]];
    let (s, c) = theta.sin_cos();
    for i in 0..3 {
        for j in 0..3 {
            let k2: f64 = (0..3).map(|m| k[i][m] * k[m][j]).sum();
            r[i][j] += s * k[i][j] + (1.0 - c) * k2;
        }
    }
    r
}

/// Half-angle quaternion `(w, x, y, z)` with `w ≥ 0`.
fn quaternion(w: Vec3) -> [f64; 4] {
    let theta = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    if theta == 0.0 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    let s = (theta / 2.0).sin() / theta;
    let q = [(theta / 2.0).cos(), w[0] * s, w[1] * s, w[2] * s];
    if q[0] < 0.0 {
        q.map(|x| -x)
    } else {
        q
    }
}

fn dense_csr(rows: usize, cols: usize, row_ptr: &[usize], col_idx: &[usize], values: &[f64]) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; cols]; rows];
    for r in 0..rows {
        for i in row_ptr[r]..row_ptr[r + 1] {
            d[r][col_idx[i]] += values[i];
        }
    }
    d
}

/// Dense evaluation of `W(T̄ + B_S(β) + B_P(θ) + B_E(ψ), J(β), θ)`.
pub fn oracle_forward(model: &ModelContainer, beta: &[f64], pose: &PoseState, psi: &[f64]) -> Result<Vec<Vec3>> {
    let n = model.template.len();
    let k = model.tree.parents.len();
    let footprint = dense_footprint(model);
    if footprint > ORACLE_LIMIT {
        return Err(Error::Refused(format!(
            "dense oracle is limited to {ORACLE_LIMIT} array entries, model (N={n}, K={k}) needs {footprint}"
        )));
    }
    if pose.joint_rotations.len() != k
        || beta.len() > model.shape_space.component_count
        || psi.len() > model.expression_space.component_count
    {
        return Err(Error::arg("parameter sizes do not match the model"));
    }

    let sw = &model.skinning_weights;
    let weights = dense_csr(n, k, &sw.row_ptr, &sw.col_idx, &sw.values);
    let jr = &model.joint_regressor;
    let regressor = dense_csr(k, n, &jr.row_ptr, &jr.col_idx, &jr.values);

    // Dense shape and expression bases, [component][vertex][axis].
    let dense_basis = |basis: &[f32], comps: usize| -> Vec<Vec<Vec3>> {
        (0..comps)
            .map(|c| (0..n).map(|v| std::array::from_fn(|a| basis[(c * n + v) * 3 + a] as f64)).collect())
            .collect()
    };
    let shape = dense_basis(&model.shape_space.basis, model.shape_space.component_count);
    let expr = dense_basis(&model.expression_space.basis, model.expression_space.component_count);

    let mut shaped = vec![[0.0; 3]; n];
    for v in 0..n {
        for a in 0..3 {
            let mut x = model.template[v][a] + model.shape_space.mean_offset[v][a];
            for (c, &b) in beta.iter().enumerate() {
                x += b * shape[c][v][a];
            }
            shaped[v][a] = x;
        }
    }
    let mut joints = vec![[0.0; 3]; k];
    for j in 0..k {
        for v in 0..n {
            for a in 0..3 {
                joints[j][a] += regressor[j][v] * shaped[v][a];
            }
        }
    }

    // Pose correctives: dense activation and coefficient arrays per joint.
    let quats: Vec<[f64; 4]> = pose.joint_rotations.iter().map(|&w| quaternion(w)).collect();
    let mut posed_rest = shaped.clone();
    for block in &model.pose_blendshapes.blocks {
        let ne = &model.tree.neighbor_sets[block.joint];
        let mut feature = Vec::with_capacity(4 * ne.len());
        for &m in ne {
            let q = quats[m];
            feature.extend_from_slice(&[q[0] - 1.0, q[1], q[2], q[3]]);
        }
        let f = block.feature_len;
        let mut activation = vec![0.0; n];
        let mut coeffs = vec![vec![[0.0; 3]; f]; n];
        for (i, &v) in block.vertices.iter().enumerate() {
            activation[v] = block.activation[i];
            for a in 0..3 {
                for (c, slot) in coeffs[v].iter_mut().enumerate() {
                    slot[a] = block.coeffs[(i * 3 + a) * f + c];
                }
            }
        }
        for v in 0..n {
            for a in 0..3 {
                let mut s = 0.0;
                for c in 0..f {
                    s += coeffs[v][c][a] * feature[c];
                }
                posed_rest[v][a] += activation[v] * s;
            }
        }
    }
    for v in 0..n {
        for a in 0..3 {
            posed_rest[v][a] += model.expression_space.mean_offset[v][a];
            for (c, &p) in psi.iter().enumerate() {
                posed_rest[v][a] += p * expr[c][v][a];
            }
        }
    }

    // Forward kinematics in homogeneous coordinates.
    let mut world: Vec<Mat4> = Vec::with_capacity(k);
    for j in 0..k {
        let r = exp_so3(pose.joint_rotations[j]);
        let g = match model.tree.parents[j] {
            None => homogeneous(r, joints[j]),
            Some(p) => {
                let rel = std::array::from_fn(|a| joints[j][a] - joints[p][a]);
                mat4_mul(&world[p], &homogeneous(r, rel))
            }
        };
        world.push(g);
    }
    let identity = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let skin: Vec<Mat4> = (0..k)
        .map(|j| mat4_mul(&world[j], &homogeneous(identity, joints[j].map(|x| -x))))
        .collect();

    let t = pose.global_translation;
    let mut out = vec![[0.0; 3]; n];
    for v in 0..n {
        let p = [posed_rest[v][0], posed_rest[v][1], posed_rest[v][2], 1.0];
        let mut blended = [[0.0; 4]; 4];
        for j in 0..k {
            for r in 0..4 {
                for c in 0..4 {
                    blended[r][c] += weights[v][j] * skin[j][r][c];
                }
            }
        }
        for a in 0..3 {
            out[v][a] = (0..4).map(|c| blended[a][c] * p[c]).sum::<f64>() + t[a];
        }
    }
    Ok(out)
}
