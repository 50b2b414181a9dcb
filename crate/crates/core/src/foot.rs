//! Contact-conditioned foot deformation: an encoder/decoder MLP whose
//! per-foot-vertex offsets are added to the corrected template before
//! skinning. Inference only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationError, ValidationKind};
use crate::kinematics::{axis_angle_to_quaternion, PoseState, Vec3};
use crate::model::{ModelContainer, PosedMesh};

pub const LATENT_WIDTH: usize = 16;
pub const FOOT_SHAPE_COEFFS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FootSide {
    Left,
    Right,
}

impl FootSide {
    pub fn name(self) -> &'static str {
        match self {
            FootSide::Left => "left",
            FootSide::Right => "right",
        }
    }
}

/// Fully connected layer, `weight` row-major `[outputs, inputs]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).fold(*b, |acc, (w, v)| acc + w * v))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FootDeformNet {
    pub side: FootSide,
    pub vertex_indices: Vec<usize>,
    /// Ankle/toe joints whose quaternions lead the input feature.
    pub joint_indices: Vec<usize>,
    /// Local foot shape components, row-major `[|vertices|, 3, shape_coeff_count]`.
    pub shape_basis: Vec<f64>,
    pub shape_coeff_count: usize,
    pub negative_slope: f64,
    pub encoder: Vec<DenseLayer>,
    pub decoder: Vec<DenseLayer>,
}

/// Binary per-foot-vertex ground contact flags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct ContactState(Vec<u8>);

impl ContactState {
    pub fn new(flags: Vec<u8>) -> Result<Self> {
        if let Some(bad) = flags.iter().find(|&&c| c > 1) {
            return Err(Error::arg(format!("contact flag {bad} is not 0 or 1")));
        }
        Ok(Self(flags))
    }

    pub fn none(len: usize) -> Self {
        Self(vec![0; len])
    }

    pub fn full(len: usize) -> Self {
        Self(vec![1; len])
    }

    pub fn from_bools(flags: &[bool]) -> Self {
        Self(flags.iter().map(|&b| b as u8).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn flags(&self) -> &[u8] {
        &self.0
    }
}

impl TryFrom<Vec<u8>> for ContactState {
    type Error = String;
    fn try_from(v: Vec<u8>) -> std::result::Result<Self, String> {
        ContactState::new(v).map_err(|e| e.to_string())
    }
}

impl From<ContactState> for Vec<u8> {
    fn from(c: ContactState) -> Vec<u8> {
        c.0
    }
}

impl FootDeformNet {
    pub fn input_width(&self) -> usize {
        4 * self.joint_indices.len() + self.shape_coeff_count + self.vertex_indices.len()
    }

    pub fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.encoder.iter().chain(&self.decoder)
    }

    /// `[foot joint quaternions | β_foot | contact]`.
    pub fn feature(&self, pose: &PoseState, beta_foot: &[f64], contact: &ContactState) -> Result<Vec<f64>> {
        if contact.len() != self.vertex_indices.len() {
            return Err(Error::arg(format!(
                "contact vector has {} entries, foot has {} vertices",
                contact.len(),
                self.vertex_indices.len()
            )));
        }
        if beta_foot.len() != self.shape_coeff_count {
            return Err(Error::arg(format!("foot shape needs {} coefficients", self.shape_coeff_count)));
        }
        let mut f = Vec::with_capacity(self.input_width());
        for &j in &self.joint_indices {
            let aa = pose
                .joint_rotations
                .get(j)
                .ok_or_else(|| Error::arg(format!("pose has no joint {j}")))?;
            f.extend_from_slice(&axis_angle_to_quaternion(*aa)?.to_array());
        }
        f.extend_from_slice(beta_foot);
        f.extend(contact.flags().iter().map(|&c| c as f64));
        Ok(f)
    }

    /// Decoder output (`3·|vertices|` values) for an input feature.
    pub fn infer(&self, feature: &[f64]) -> Result<Vec<f64>> {
        if feature.len() != self.input_width() {
            return Err(Error::arg("feature width does not match the network"));
        }
        let slope = self.negative_slope;
        let count = self.encoder.len() + self.decoder.len();
        let mut x = feature.to_vec();
        for (i, layer) in self.layers().enumerate() {
            if layer.inputs != x.len() {
                return Err(Error::arg("layer widths do not chain"));
            }
            x = layer.forward(&x);
            if i + 1 < count {
                x.iter_mut().for_each(|v| {
                    if *v < 0.0 {
                        *v *= slope
                    }
                });
            }
        }
        Ok(x)
    }

    /// Offsets over all `n_vertices`; exactly zero away from the foot.
    pub fn offsets(
        &self,
        pose: &PoseState,
        beta_foot: &[f64],
        contact: &ContactState,
        n_vertices: usize,
    ) -> Result<Vec<Vec3>> {
        if self.vertex_indices.iter().any(|&v| v >= n_vertices) {
            return Err(Error::arg("foot vertex index beyond model size"));
        }
        let out = self.infer(&self.feature(pose, beta_foot, contact)?)?;
        let mut offsets = vec![[0.0; 3]; n_vertices];
        for (i, &v) in self.vertex_indices.iter().enumerate() {
            offsets[v] = [out[3 * i], out[3 * i + 1], out[3 * i + 2]];
        }
        Ok(offsets)
    }

    /// Least-squares coordinates of the body shape offsets at the foot
    /// vertices in the local foot shape basis.
    pub fn project_shape(&self, shape_offsets: &[Vec3]) -> Vec<f64> {
        let s = self.shape_coeff_count;
        let mut gram = nalgebra::DMatrix::<f64>::zeros(s, s);
        let mut rhs = nalgebra::DVector::<f64>::zeros(s);
        for (i, &v) in self.vertex_indices.iter().enumerate() {
            for a in 0..3 {
                let row = &self.shape_basis[(i * 3 + a) * s..(i * 3 + a + 1) * s];
                for p in 0..s {
                    rhs[p] += row[p] * shape_offsets[v][a];
                    for q in 0..s {
                        gram[(p, q)] += row[p] * row[q];
                    }
                }
            }
        }
        match gram.clone().cholesky() {
            Some(c) => c.solve(&rhs).iter().copied().collect(),
            None => vec![0.0; s],
        }
    }

    pub fn validate(&self, n_vertices: usize, n_joints: usize) -> Result<(), ValidationError> {
        let net = |msg: String| Err(ValidationError::new(ValidationKind::FootNetwork, msg));
        let side = self.side.name();
        let mut vs = self.vertex_indices.clone();
        vs.sort_unstable();
        if vs.is_empty() || vs.windows(2).any(|w| w[0] == w[1]) || vs.last().is_some_and(|&v| v >= n_vertices) {
            return net(format!("{side} foot vertex indices invalid"));
        }
        if self.joint_indices.is_empty() || self.joint_indices.iter().any(|&j| j >= n_joints) {
            return net(format!("{side} foot joint indices invalid"));
        }
        if self.shape_basis.len() != self.vertex_indices.len() * 3 * self.shape_coeff_count {
            return net(format!("{side} foot shape basis size"));
        }
        if self.encoder.is_empty() || self.decoder.is_empty() {
            return net(format!("{side} foot network needs encoder and decoder layers"));
        }
        let declared = self.encoder[0].inputs;
        if declared != self.input_width() {
            return Err(ValidationError::new(
                ValidationKind::FootWidth,
                format!(
                    "{side} foot input width {declared} != 4·{} + {} + {}",
                    self.joint_indices.len(),
                    self.shape_coeff_count,
                    self.vertex_indices.len()
                ),
            ));
        }
        let mut width = declared;
        for l in self.layers() {
            if l.inputs != width || l.weight.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return net(format!("{side} foot layer sizes do not chain"));
            }
            if !l.weight.iter().chain(&l.bias).all(|v| v.is_finite()) {
                return Err(ValidationError::new(ValidationKind::NonFinite, format!("{side} foot network")));
            }
            width = l.outputs;
        }
        if self.encoder.last().unwrap().outputs != LATENT_WIDTH {
            return net(format!("{side} foot latent width must be {LATENT_WIDTH}"));
        }
        if width != 3 * self.vertex_indices.len() {
            return net(format!("{side} foot decoder emits {width} values, expected 3·{}", self.vertex_indices.len()));
        }
        if !self.negative_slope.is_finite() || !self.shape_basis.iter().all(|v| v.is_finite()) {
            return Err(ValidationError::new(ValidationKind::NonFinite, format!("{side} foot parameters")));
        }
        Ok(())
    }
}

impl ModelContainer {
    pub fn foot_net(&self, side: FootSide) -> Option<&FootDeformNet> {
        self.foot_nets.iter().find(|n| n.side == side)
    }

    /// Sum of the masked foot offsets for the supplied contact vectors; a
    /// foot without a contact vector contributes nothing.
    pub fn foot_offsets(
        &self,
        beta: &[f64],
        pose: &PoseState,
        contact_left: Option<&ContactState>,
        contact_right: Option<&ContactState>,
    ) -> Result<Vec<Vec3>> {
        if self.foot_nets.is_empty() {
            return Err(Error::Unsupported("model has no foot deformation network".into()));
        }
        pose.validate(self.n_joints())?;
        let n = self.n_vertices();
        let shape = self.shape_space.shape_offsets(beta)?;
        let mut total = vec![[0.0; 3]; n];
        for (side, contact) in [(FootSide::Left, contact_left), (FootSide::Right, contact_right)] {
            let Some(contact) = contact else { continue };
            let net = self
                .foot_net(side)
                .ok_or_else(|| Error::Unsupported(format!("model has no {} foot network", side.name())))?;
            let beta_foot = net.project_shape(&shape);
            let off = net.offsets(pose, &beta_foot, contact, n)?;
            for &v in &net.vertex_indices {
                for a in 0..3 {
                    total[v][a] += off[v][a];
                }
            }
        }
        Ok(total)
    }

    /// Forward model with the foot deformation added to the corrected
    /// template before skinning.
    pub fn forward_with_contact(
        &self,
        beta: &[f64],
        pose: &PoseState,
        psi: &[f64],
        contact_left: Option<&ContactState>,
        contact_right: Option<&ContactState>,
    ) -> Result<PosedMesh> {
        let offsets = self.foot_offsets(beta, pose, contact_left, contact_right)?;
        let extra = (contact_left.is_some() || contact_right.is_some()).then_some(offsets.as_slice());
        let v = self.forward_vertices(beta, pose, psi, extra)?;
        Ok(self.mesh(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_net(rng: &mut ChaCha8Rng, verts: Vec<usize>, joints: Vec<usize>) -> FootDeformNet {
        let input = 4 * joints.len() + 2 + verts.len();
        let widths = [input, 24, 20, LATENT_WIDTH, 24, 3 * verts.len()];
        let mut layers: Vec<DenseLayer> = widths
            .windows(2)
            .map(|w| {
                let mut l = DenseLayer::zeros(w[0], w[1]);
                l.weight.iter_mut().for_each(|x| *x = rng.random_range(-0.5..0.5));
                l.bias.iter_mut().for_each(|x| *x = rng.random_range(-0.5..0.5));
                l
            })
            .collect();
        let decoder = layers.split_off(3);
        FootDeformNet {
            side: FootSide::Left,
            shape_basis: (0..verts.len() * 6).map(|_| rng.random_range(-1.0..1.0)).collect(),
            vertex_indices: verts,
            joint_indices: joints,
            shape_coeff_count: 2,
            negative_slope: 0.1,
            encoder: layers,
            decoder,
        }
    }

    fn naive_mlp(net: &FootDeformNet, x: &[f64]) -> Vec<f64> {
        let layers: Vec<&DenseLayer> = net.layers().collect();
        let mut h = x.to_vec();
        for (li, l) in layers.iter().enumerate() {
            let mut out = vec![0.0; l.outputs];
            for o in 0..l.outputs {
                let mut s = l.bias[o];
                for i in 0..l.inputs {
                    s += l.weight[o * l.inputs + i] * h[i];
                }
                out[o] = if li + 1 < layers.len() && s < 0.0 { 0.1 * s } else { s };
            }
            h = out;
        }
        h
    }

    #[test]
    fn feature_layout_and_rest_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = random_net(&mut rng, vec![3, 4, 5], vec![1, 2]);
        let pose = PoseState::rest(3);
        let f = net.feature(&pose, &[0.0, 0.0], &ContactState::none(3)).unwrap();
        assert_eq!(f.len(), 4 * 2 + 2 + 3);
        assert_eq!(f, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let f = net.feature(&pose, &[0.5, -1.0], &ContactState::full(3)).unwrap();
        assert_eq!(&f[8..], &[0.5, -1.0, 1.0, 1.0, 1.0]);
        assert!(net.feature(&pose, &[0.0, 0.0], &ContactState::none(4)).is_err());
    }

    #[test]
    fn contact_flags_must_be_binary() {
        assert!(ContactState::new(vec![0, 1, 2]).is_err());
    }

    #[test]
    fn matches_naive_layer_loop_and_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = random_net(&mut rng, vec![1, 4, 6, 7], vec![2, 3]);
        let mut pose = PoseState::rest(5);
        pose.joint_rotations[2] = [0.2, -0.3, 0.1];
        let contact = ContactState::new(vec![1, 0, 1, 1]).unwrap();
        let f = net.feature(&pose, &[0.3, 0.7], &contact).unwrap();
        let fast = net.infer(&f).unwrap();
        let slow = naive_mlp(&net, &f);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
        let off = net.offsets(&pose, &[0.3, 0.7], &contact, 10).unwrap();
        for v in [0, 2, 3, 5, 8, 9] {
            assert_eq!(off[v], [0.0; 3]);
        }
        assert_eq!(off[6], [slow[6], slow[7], slow[8]]);
        let again = net.offsets(&pose, &[0.3, 0.7], &contact, 10).unwrap();
        assert_eq!(off, again);
    }

    #[test]
    fn zero_network_gives_zero_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = random_net(&mut rng, vec![0, 1], vec![1]);
        for l in net.encoder.iter_mut().chain(net.decoder.iter_mut()) {
            l.weight.iter_mut().for_each(|x| *x = 0.0);
            l.bias.iter_mut().for_each(|x| *x = 0.0);
        }
        let off = net.offsets(&PoseState::rest(2), &[1.0, 1.0], &ContactState::full(2), 4).unwrap();
        assert!(off.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn width_arithmetic_is_validated() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = random_net(&mut rng, vec![0, 1, 2], vec![1]);
        assert!(net.validate(5, 2).is_ok());
        net.joint_indices.push(0);
        assert_eq!(net.validate(5, 2).unwrap_err().kind, ValidationKind::FootWidth);
    }

    #[test]
    fn shape_projection_recovers_coordinates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = random_net(&mut rng, vec![0, 2, 3], vec![1]);
        let coords = [0.4, -1.3];
        let mut offsets = vec![[0.0; 3]; 4];
        for (i, &v) in net.vertex_indices.iter().enumerate() {
            for a in 0..3 {
                offsets[v][a] = (0..2).map(|k| net.shape_basis[(i * 3 + a) * 2 + k] * coords[k]).sum();
            }
        }
        let got = net.project_shape(&offsets);
        assert!((got[0] - coords[0]).abs() < 1e-10 && (got[1] - coords[1]).abs() < 1e-10);
    }
}
