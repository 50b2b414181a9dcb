#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use supr::{ModelContainer, ModelParams, PoseState, Vec3};

pub fn random_vec3(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
    if scale == 0.0 {
        return [0.0; 3];
    }
    std::array::from_fn(|_| rng.random_range(-scale..scale))
}

pub fn random_pose(rng: &mut ChaCha8Rng, joints: usize, scale: f64) -> PoseState {
    PoseState {
        joint_rotations: (0..joints).map(|_| random_vec3(rng, scale)).collect(),
        global_translation: random_vec3(rng, 0.5),
    }
}

pub fn random_params(model: &ModelContainer, rng: &mut ChaCha8Rng, pose_scale: f64) -> ModelParams {
    ModelParams {
        beta: (0..model.shape_space.component_count).map(|_| rng.random_range(-2.0..2.0)).collect(),
        pose: random_pose(rng, model.n_joints(), pose_scale),
        expression: (0..model.expression_space.component_count).map(|_| rng.random_range(-2.0..2.0)).collect(),
    }
}

/// Axis-angle vector with norm at most `max_angle`.
pub fn small_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> Vec3 {
    let axis = loop {
        let a = random_vec3(rng, 1.0);
        let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
        if n > 1e-3 && n <= 1.0 {
            break a.map(|x| x / n);
        }
    };
    let angle = rng.random_range(0.0..max_angle);
    axis.map(|x| x * angle)
}

pub fn max_abs_diff(a: &[Vec3], b: &[Vec3]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(p, q)| (0..3).map(move |i| (p[i] - q[i]).abs()))
        .fold(0.0, f64::max)
}
