//! Deterministic pseudo-random model containers.
//!
//! Generated models satisfy every container invariant and are built so that
//! part separation is exact:
//!
//! * template coordinates sit on a 2^-12 grid and skinning weights are
//!   multiples of 2^-16 whose rows sum to exactly one;
//! * corrective coefficients that would couple a vertex to a joint outside
//!   the influencing set of its region are zero;
//! * every joint is regressed from "anchor pairs", two vertices placed
//!   symmetrically about the joint (in position and in every shape
//!   component). A joint gets one pair in each region whose influencing set
//!   contains it, with dyadic pair weights, so slicing the regressor to any
//!   one region and renormalizing gives the same joint location.
//!
//! All stored floating-point values are exactly representable in `f32`.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::blendshape::{LinearShapeSpace, PoseBlock, SparsePoseBlendshapes};
use crate::error::{Error, Result};
use crate::foot::{ContactState, DenseLayer, FootDeformNet, FootSide, FOOT_SHAPE_COEFFS, LATENT_WIDTH};
use crate::kinematics::{KinematicTree, PoseState, Vec3};
use crate::model::{ModelContainer, PartLabel, MAX_INFLUENCES};
use crate::part::{influencing_joint_set, PartSpec};
use crate::sparse::CsrMatrix;

/// Joint counts of the full-size layout, in [`PartLabel::ALL`] order.
pub const FULL_SIZE_JOINTS: [usize; 6] = [14, 3, 16, 16, 13, 13];
pub const FULL_SIZE_VERTICES: usize = 10475;
pub const FULL_SIZE_FOOT_VERTICES: usize = 266;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub seed: u64,
    pub n_vertices: usize,
    pub n_joints: usize,
    pub shape_components: usize,
    pub expression_components: usize,
    /// Joints per region in [`PartLabel::ALL`] order; derived from
    /// `n_joints` when absent.
    pub region_joints: Option<[usize; 6]>,
    /// Vertices per foot region; proportional to joint count when absent.
    pub foot_vertices: Option<usize>,
    /// Skinning influences per vertex, including the home joint.
    pub max_influences: usize,
    /// Probability that a vertex skinned to joint `j` is activated by `j`'s
    /// corrective.
    pub density: f64,
    /// Relative probability that a vertex of a neighboring joint is also
    /// activated, which lets correctives cross region boundaries.
    pub reach: f64,
    /// Skin every vertex to its home joint only and activate home vertices
    /// only.
    pub disjoint_supports: bool,
    /// Nonzero mean offsets in the shape and expression spaces. These move
    /// the zero-parameter surface away from the template.
    pub mean_offsets: bool,
    pub foot_nets: bool,
    /// Attach part-local joint regressors to the generated part specs.
    pub part_regressors: bool,
}

impl SynthOptions {
    pub fn new(seed: u64, n_vertices: usize, n_joints: usize) -> Self {
        Self {
            seed,
            n_vertices,
            n_joints,
            shape_components: 16,
            expression_components: 8,
            region_joints: None,
            foot_vertices: None,
            max_influences: 3,
            density: 0.8,
            reach: 0.3,
            disjoint_supports: false,
            mean_offsets: false,
            foot_nets: false,
            part_regressors: true,
        }
    }

    /// 200 vertices, 8 joints, with toy foot networks.
    pub fn toy(seed: u64) -> Self {
        Self {
            foot_nets: true,
            ..Self::new(seed, 200, 8)
        }
    }

    /// Full-size dimensions: 10475 vertices, 75 joints, 300 shape and 100
    /// expression components, 266-vertex feet with 13 joints each.
    pub fn full_size(seed: u64) -> Self {
        Self {
            shape_components: 300,
            expression_components: 100,
            region_joints: Some(FULL_SIZE_JOINTS),
            foot_vertices: Some(FULL_SIZE_FOOT_VERTICES),
            foot_nets: true,
            ..Self::new(seed, FULL_SIZE_VERTICES, 75)
        }
    }

    fn check(&self) -> Result<()> {
        if self.n_vertices < 4 || self.n_joints < 2 {
            return Err(Error::arg("need at least 4 vertices and 2 joints"));
        }
        if self.shape_components == 0 || self.expression_components == 0 {
            return Err(Error::arg("shape and expression spaces need at least one component"));
        }
        if !(self.density > 0.0 && self.density <= 1.0) || !(0.0..=1.0).contains(&self.reach) {
            return Err(Error::arg("density must lie in (0, 1] and reach in [0, 1]"));
        }
        if self.max_influences == 0 || self.max_influences > MAX_INFLUENCES {
            return Err(Error::arg(format!("max_influences must lie in 1..={MAX_INFLUENCES}")));
        }
        if let Some(r) = self.region_joints {
            if r.iter().sum::<usize>() != self.n_joints || r[0] == 0 {
                return Err(Error::arg("region joint counts must sum to n_joints with a nonempty body"));
            }
        }
        Ok(())
    }
}

fn grid(x: f64, bits: i32) -> f64 {
    let s = 2f64.powi(bits);
    (x * s).round() / s
}

fn f32_round(x: f64) -> f64 {
    x as f32 as f64
}

/// Body gets its proportional share; the rest is split over the parts, one
/// joint each first when there are enough.
fn allocate_joints(k: usize) -> [usize; 6] {
    let total: usize = FULL_SIZE_JOINTS.iter().sum();
    let body = ((k * FULL_SIZE_JOINTS[0]) as f64 / total as f64).round().max(1.0) as usize;
    let body = body.min(k - 1);
    let mut out = [0; 6];
    out[0] = body;
    let rest = k - body;
    if rest < 5 {
        (1..=rest).for_each(|i| out[i] = 1);
        return out;
    }
    (1..6).for_each(|i| out[i] = 1);
    let extra = rest - 5;
    let shares: Vec<f64> = (1..6).map(|i| (FULL_SIZE_JOINTS[i] - 1) as f64).collect();
    let sum: f64 = shares.iter().sum();
    let exact: Vec<f64> = shares.iter().map(|s| extra as f64 * s / sum).collect();
    let mut given = 0;
    for i in 0..5 {
        out[i + 1] += exact[i].floor() as usize;
        given += exact[i].floor() as usize;
    }
    let mut order: Vec<usize> = (0..5).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    for &i in order.iter().take(extra - given) {
        out[i + 1] += 1;
    }
    out
}

fn largest_remainder(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|&w| total as f64 * w as f64 / sum as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let left = total - out.iter().sum::<usize>();
    for &i in order.iter().take(left) {
        out[i] += 1;
    }
    out
}

struct Layout {
    /// Joint ids of each region, in [`PartLabel::ALL`] order.
    region_joints: Vec<Vec<usize>>,
    joint_region: Vec<usize>,
    parents: Vec<Option<usize>>,
    names: Vec<String>,
    /// Vertex ids of each region.
    region_vertices: Vec<Vec<usize>>,
    labels: Vec<PartLabel>,
    home: Vec<usize>,
}

fn layout(opts: &SynthOptions, rng: &mut ChaCha8Rng) -> Result<Layout> {
    let counts = opts.region_joints.unwrap_or_else(|| allocate_joints(opts.n_joints));
    let mut region_joints = vec![Vec::new(); 6];
    let mut joint_region = Vec::new();
    let mut parents: Vec<Option<usize>> = Vec::new();
    let mut names = Vec::new();
    for (r, &c) in counts.iter().enumerate() {
        for i in 0..c {
            let j = parents.len();
            let parent = if r == 0 {
                match j {
                    0 => None,
                    _ if rng.random_bool(0.6) => Some(j - 1),
                    _ => Some(rng.random_range(0..j)),
                }
            } else if i == 0 {
                let body = &region_joints[0];
                // head hangs off the end of the spine chain
                Some(if r == 1 { *body.last().unwrap() } else { body[rng.random_range(0..body.len())] })
            } else if rng.random_bool(0.6) {
                Some(j - 1)
            } else {
                let own: &Vec<usize> = &region_joints[r];
                Some(own[rng.random_range(0..own.len())])
            };
            parents.push(parent);
            names.push(format!("{}_{i}", PartLabel::ALL[r].name()));
            region_joints[r].push(j);
            joint_region.push(r);
        }
    }

    let n = opts.n_vertices;
    let mut vcounts = [0; 6];
    let mut free: Vec<usize> = (0..6).filter(|&r| counts[r] > 0).collect();
    let mut remaining = n;
    if let Some(fv) = opts.foot_vertices {
        for r in [4, 5] {
            if counts[r] > 0 {
                if remaining <= fv {
                    return Err(Error::arg("foot vertex counts exceed the vertex budget"));
                }
                vcounts[r] = fv;
                remaining -= fv;
                free.retain(|&x| x != r);
            }
        }
    }
    if remaining < free.len() {
        return Err(Error::arg("fewer vertices than populated regions"));
    }
    // one vertex per region first, the rest proportional to joint count
    let weights: Vec<usize> = free.iter().map(|&r| counts[r]).collect();
    let share = largest_remainder(remaining - free.len(), &weights);
    for (i, &r) in free.iter().enumerate() {
        vcounts[r] = 1 + share[i];
    }

    let mut region_vertices = vec![Vec::new(); 6];
    let mut labels = Vec::with_capacity(n);
    let mut home = Vec::with_capacity(n);
    for r in 0..6 {
        for i in 0..vcounts[r] {
            region_vertices[r].push(labels.len());
            labels.push(PartLabel::ALL[r]);
            home.push(region_joints[r][i % counts[r]]);
        }
    }
    Ok(Layout {
        region_joints,
        joint_region,
        parents,
        names,
        region_vertices,
        labels,
        home,
    })
}

fn children(parents: &[Option<usize>], j: usize) -> Vec<usize> {
    (0..parents.len()).filter(|&c| parents[c] == Some(j)).collect()
}

fn skinning(opts: &SynthOptions, lay: &Layout, rng: &mut ChaCha8Rng) -> CsrMatrix {
    let k = lay.parents.len();
    let rows: Vec<Vec<(usize, f64)>> = lay
        .home
        .iter()
        .map(|&h| {
            if opts.disjoint_supports || opts.max_influences == 1 {
                return vec![(h, 1.0)];
            }
            let mut cands: Vec<usize> = lay.parents[h].into_iter().chain(children(&lay.parents, h)).collect();
            cands.shuffle(rng);
            let extras = rng.random_range(0..=cands.len().min(opts.max_influences - 1));
            let cap = 0.6 / extras.max(1) as f64;
            let mut row = Vec::with_capacity(extras + 1);
            let mut rest = 1.0;
            for &c in &cands[..extras] {
                let w = grid(rng.random_range(0.02..cap), 16);
                rest -= w;
                row.push((c, w));
            }
            row.push((h, rest));
            row
        })
        .collect();
    CsrMatrix::from_rows(k, &rows)
}

fn pose_blocks(opts: &SynthOptions, lay: &Layout, tree: &KinematicTree, rng: &mut ChaCha8Rng) -> Vec<PoseBlock> {
    let coeff = Normal::new(0.0, 0.02).unwrap();
    let mut blocks = Vec::new();
    for j in 0..tree.len() {
        let ne = &tree.neighbor_sets[j];
        if ne.is_empty() {
            continue;
        }
        let mut vertices = Vec::new();
        for (v, &h) in lay.home.iter().enumerate() {
            let p = if h == j {
                opts.density
            } else if !opts.disjoint_supports && ne.contains(&h) {
                opts.density * opts.reach
            } else {
                continue;
            };
            if rng.random_bool(p) {
                vertices.push(v);
            }
        }
        if vertices.is_empty() {
            continue;
        }
        let fl = 4 * ne.len();
        let activation = vertices.iter().map(|_| grid(rng.random_range(0.25..1.0), 16).max(0.25)).collect();
        let coeffs = (0..vertices.len() * 3 * fl).map(|_| f32_round(coeff.sample(rng))).collect();
        blocks.push(PoseBlock {
            joint: j,
            vertices,
            activation,
            coeffs,
            feature_len: fl,
        });
    }
    blocks
}

fn random_space(n: usize, components: usize, scale: f64, support: &[usize], rng: &mut ChaCha8Rng) -> LinearShapeSpace {
    let mut space = LinearShapeSpace::zeros(n, components);
    for k in 0..components {
        let dist = Normal::new(0.0, scale / (1.0 + k as f64).sqrt()).unwrap();
        let comp = space.component_mut(k);
        for &v in support {
            for a in 0..3 {
                comp[3 * v + a] = dist.sample(rng) as f32;
            }
        }
    }
    space
}

/// Builds a synthetic model. Identical options give identical models.
pub fn synth_model(opts: &SynthOptions) -> Result<ModelContainer> {
    opts.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let lay = layout(opts, &mut rng)?;
    let n = opts.n_vertices;
    let k = lay.parents.len();
    let tree = KinematicTree::with_default_neighbors(lay.parents.clone(), lay.names.clone())?;

    // Skeleton and template.
    let mut joints: Vec<Vec3> = Vec::with_capacity(k);
    for j in 0..k {
        let p = match lay.parents[j] {
            None => [0.0, 0.875, 0.0],
            Some(p) => {
                let p = joints[p];
                let len = rng.random_range(0.08..0.2);
                let d: Vec3 = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-3);
                std::array::from_fn(|a| p[a] + len * d[a] / norm)
            }
        };
        joints.push(p.map(|x| grid(x, 12)));
    }
    let mut template: Vec<Vec3> = lay
        .home
        .iter()
        .map(|&h| std::array::from_fn(|a| grid(joints[h][a] + rng.random_range(-0.06..0.06), 12)))
        .collect();

    let skinning_weights = skinning(opts, &lay, &mut rng);
    let mut blocks = pose_blocks(opts, &lay, &tree, &mut rng);

    // Influencing joint set of every populated region.
    let provisional = ModelContainer {
        template: template.clone(),
        faces: Vec::new(),
        skinning_weights: skinning_weights.clone(),
        joint_regressor: CsrMatrix::empty(k, n),
        shape_space: LinearShapeSpace::zeros(n, 1),
        expression_space: LinearShapeSpace::zeros(n, 1),
        pose_blendshapes: SparsePoseBlendshapes {
            n_vertices: n,
            blocks: blocks.clone(),
        },
        tree: tree.clone(),
        part_labels: lay.labels.clone(),
        parts: Vec::new(),
        foot_nets: Vec::new(),
        lineage: None,
    };
    let mut jbp: Vec<Vec<usize>> = vec![Vec::new(); 6];
    for r in 0..6 {
        if !lay.region_vertices[r].is_empty() {
            let spec = PartSpec::new(PartLabel::ALL[r].name(), lay.region_vertices[r].clone());
            jbp[r] = influencing_joint_set(&provisional, &spec)?;
        }
    }

    // Decouple each region's vertices from joints outside its influencing set.
    for b in &mut blocks {
        let ne = &tree.neighbor_sets[b.joint];
        for (i, &v) in b.vertices.iter().enumerate() {
            let inside = &jbp[PartLabel::ALL.iter().position(|&l| l == lay.labels[v]).unwrap()];
            for (s, nj) in ne.iter().enumerate() {
                if !inside.contains(nj) {
                    for a in 0..3 {
                        let row = (i * 3 + a) * b.feature_len;
                        b.coeffs[row + 4 * s..row + 4 * s + 4].fill(0.0);
                    }
                }
            }
        }
    }

    // Shape and expression spaces.
    let all: Vec<usize> = (0..n).collect();
    let mut shape_space = random_space(n, opts.shape_components, 0.02, &all, &mut rng);
    let face = if lay.region_vertices[1].is_empty() { &all } else { &lay.region_vertices[1] };
    let mut expression_space = random_space(n, opts.expression_components, 0.01, face, &mut rng);
    if opts.mean_offsets {
        let d = Normal::new(0.0, 0.005).unwrap();
        for v in 0..n {
            shape_space.mean_offset[v] = std::array::from_fn(|_| grid(d.sample(&mut rng), 20));
        }
        for &v in face {
            expression_space.mean_offset[v] = std::array::from_fn(|_| grid(d.sample(&mut rng), 20));
        }
    }

    // Anchor pairs and the joint regressor.
    let mut next_free = [0usize; 6];
    let mut reg_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
    let mut pair_of = vec![vec![None; k]; 6];
    for j in 0..k {
        let mut regions: Vec<usize> = (0..6).filter(|&r| jbp[r].contains(&j)).collect();
        if regions.is_empty() {
            let home = lay.joint_region[j];
            let r = if lay.region_vertices[home].len() >= 2 { home } else { 0 };
            regions.push(r);
        }
        let pairs = regions.len();
        let shape_center: Vec<Vec3> = (0..opts.shape_components)
            .map(|c| {
                let d = Normal::new(0.0, 0.02 / (1.0 + c as f64).sqrt()).unwrap();
                std::array::from_fn(|_| grid(d.sample(&mut rng), 20))
            })
            .collect();
        let mean_center: Vec3 = std::array::from_fn(|_| grid(rng.random_range(-0.01..0.01), 20));
        for (p, &r) in regions.iter().enumerate() {
            let at = next_free[r];
            let verts = &lay.region_vertices[r];
            if at + 2 > verts.len() {
                return Err(Error::arg(format!(
                    "region '{}' has {} vertices, too few for its joint regressor anchors",
                    PartLabel::ALL[r].name(),
                    verts.len()
                )));
            }
            next_free[r] += 2;
            let (vp, vm) = (verts[at], verts[at + 1]);
            let d: Vec3 = std::array::from_fn(|_| grid(rng.random_range(-0.03..0.03), 12));
            template[vp] = std::array::from_fn(|a| joints[j][a] + d[a]);
            template[vm] = std::array::from_fn(|a| joints[j][a] - d[a]);
            for (c, center) in shape_center.iter().enumerate() {
                let e = Normal::new(0.0, 0.01 / (1.0 + c as f64).sqrt()).unwrap();
                let comp = shape_space.component_mut(c);
                for a in 0..3 {
                    let off = grid(e.sample(&mut rng), 20);
                    comp[3 * vp + a] = (center[a] + off) as f32;
                    comp[3 * vm + a] = (center[a] - off) as f32;
                }
            }
            if opts.mean_offsets {
                for a in 0..3 {
                    let off = grid(rng.random_range(-0.004..0.004), 20);
                    shape_space.mean_offset[vp][a] = mean_center[a] + off;
                    shape_space.mean_offset[vm][a] = mean_center[a] - off;
                }
            }
            let w = if p + 1 < pairs {
                2f64.powi(-(p as i32 + 2))
            } else {
                2f64.powi(-(pairs as i32))
            };
            reg_rows[j].push((vp, w));
            reg_rows[j].push((vm, w));
            pair_of[r][j] = Some((vp, vm));
        }
    }
    let joint_regressor = CsrMatrix::from_rows(n, &reg_rows);

    let mut faces = Vec::new();
    for verts in &lay.region_vertices {
        for w in verts.windows(3) {
            faces.push([w[0], w[1], w[2]]);
        }
    }

    let mut parts = Vec::new();
    for label in PartLabel::PARTS {
        let r = label as usize;
        let verts = &lay.region_vertices[r];
        if verts.is_empty() {
            continue;
        }
        let mut spec = PartSpec::new(label.name(), verts.clone());
        if opts.part_regressors && jbp[r].iter().all(|&j| pair_of[r][j].is_some()) {
            let local = |v: usize| verts.binary_search(&v).expect("anchor lies in region");
            let rows: Vec<Vec<(usize, f64)>> = jbp[r]
                .iter()
                .map(|&j| {
                    let (vp, vm) = pair_of[r][j].unwrap();
                    vec![(local(vp), 0.5), (local(vm), 0.5)]
                })
                .collect();
            spec.local_joint_regressor = Some(CsrMatrix::from_rows(verts.len(), &rows));
        }
        parts.push(spec);
    }

    let mut model = ModelContainer {
        template,
        faces,
        skinning_weights,
        joint_regressor,
        shape_space,
        expression_space,
        pose_blendshapes: SparsePoseBlendshapes { n_vertices: n, blocks },
        tree,
        part_labels: lay.labels.clone(),
        parts,
        foot_nets: Vec::new(),
        lineage: None,
    };
    if opts.foot_nets {
        for (side, r) in [(FootSide::Left, 4), (FootSide::Right, 5)] {
            if !lay.region_joints[r].is_empty() && !lay.region_vertices[r].is_empty() {
                let net = toy_foot_net(
                    &model,
                    side,
                    lay.region_vertices[r].clone(),
                    lay.region_joints[r].clone(),
                    &mut rng,
                )?;
                model.foot_nets.push(net);
            }
        }
    }
    model.validate()?;
    Ok(model)
}

/// Random hidden layers; the final layer is fitted by ridge regression so
/// that contact vertices are pulled halfway down to the lowest foot vertex.
fn toy_foot_net(
    model: &ModelContainer,
    side: FootSide,
    vertices: Vec<usize>,
    joints: Vec<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<FootDeformNet> {
    let nv = vertices.len();
    let width = 4 * joints.len() + FOOT_SHAPE_COEFFS + nv;
    let dims = [width, 64, 32, LATENT_WIDTH, 64, 3 * nv];
    let mut layers: Vec<DenseLayer> = dims
        .windows(2)
        .map(|w| {
            let d = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).unwrap();
            let b = Normal::new(0.0, 0.1).unwrap();
            DenseLayer {
                inputs: w[0],
                outputs: w[1],
                weight: (0..w[0] * w[1]).map(|_| f32_round(d.sample(rng))).collect(),
                bias: (0..w[1]).map(|_| f32_round(b.sample(rng))).collect(),
            }
        })
        .collect();
    let basis = Normal::new(0.0, 0.01).unwrap();
    let decoder = layers.split_off(3);
    let mut net = FootDeformNet {
        side,
        shape_basis: (0..nv * 3 * FOOT_SHAPE_COEFFS).map(|_| f32_round(basis.sample(rng))).collect(),
        vertex_indices: vertices,
        joint_indices: joints,
        shape_coeff_count: FOOT_SHAPE_COEFFS,
        negative_slope: 0.1,
        encoder: layers,
        decoder,
    };

    let floor = net
        .vertex_indices
        .iter()
        .map(|&v| model.template[v][1])
        .fold(f64::INFINITY, f64::min);
    let samples = 384;
    let hidden = net.decoder[0].outputs;
    let mut h = DMatrix::<f64>::zeros(samples, hidden + 1);
    let mut y = DMatrix::<f64>::zeros(samples, 3 * nv);
    let rot = Normal::new(0.0, 0.3).unwrap();
    for s in 0..samples {
        let mut pose = PoseState::rest(model.n_joints());
        for &j in &net.joint_indices {
            pose.joint_rotations[j] = std::array::from_fn(|_| rot.sample(rng));
        }
        let beta_foot: Vec<f64> = (0..FOOT_SHAPE_COEFFS).map(|_| rng.random_range(-2.0..2.0)).collect();
        let flags: Vec<bool> = (0..nv).map(|_| rng.random_bool(0.5)).collect();
        let mut x = net.feature(&pose, &beta_foot, &ContactState::from_bools(&flags))?;
        let slope = net.negative_slope;
        for layer in net.layers().take(4) {
            x = layer.forward(&x);
            x.iter_mut().filter(|v| **v < 0.0).for_each(|v| *v *= slope);
        }
        for (c, &xv) in x.iter().enumerate() {
            h[(s, c)] = xv;
        }
        h[(s, hidden)] = 1.0;
        for (i, &v) in net.vertex_indices.iter().enumerate() {
            if flags[i] {
                y[(s, 3 * i + 1)] = 0.5 * (floor - model.template[v][1]);
            }
        }
    }
    let mut gram = h.transpose() * &h;
    for d in 0..=hidden {
        gram[(d, d)] += 1e-3;
    }
    let rhs = h.transpose() * &y;
    let sol = gram
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure {
            message: "foot network fit is singular".into(),
            trace: Vec::new(),
        })?
        .solve(&rhs);
    let last = &mut net.decoder[1];
    for o in 0..last.outputs {
        for i in 0..hidden {
            last.weight[o * hidden + i] = f32_round(sol[(i, o)]);
        }
        last.bias[o] = f32_round(sol[(hidden, o)]);
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_allocation() {
        assert_eq!(allocate_joints(75), FULL_SIZE_JOINTS);
        assert_eq!(allocate_joints(8), [1, 1, 2, 2, 1, 1]);
        assert_eq!(allocate_joints(2), [1, 1, 0, 0, 0, 0]);
        assert_eq!(allocate_joints(5), [1, 1, 1, 1, 1, 0]);
        for k in 2..120 {
            assert_eq!(allocate_joints(k).iter().sum::<usize>(), k);
        }
    }

    #[test]
    fn deterministic() {
        let opts = SynthOptions::new(0, 100, 5);
        assert_eq!(synth_model(&opts).unwrap(), synth_model(&opts).unwrap());
        let other = SynthOptions::new(1, 100, 5);
        assert_ne!(synth_model(&opts).unwrap(), synth_model(&other).unwrap());
    }

    #[test]
    fn skinning_rows_sum_exactly_to_one() {
        let m = synth_model(&SynthOptions::toy(3)).unwrap();
        for v in 0..m.n_vertices() {
            assert_eq!(m.skinning_weights.row_sum(v), 1.0);
        }
    }

    #[test]
    fn stored_values_are_single_precision() {
        let m = synth_model(&SynthOptions {
            mean_offsets: true,
            ..SynthOptions::toy(4)
        })
        .unwrap();
        let exact = |x: &f64| *x as f32 as f64 == *x;
        assert!(m.template.iter().flatten().all(exact));
        assert!(m.joint_regressor.values.iter().all(exact));
        assert!(m.skinning_weights.values.iter().all(exact));
        assert!(m.shape_space.mean_offset.iter().flatten().all(exact));
        for b in &m.pose_blendshapes.blocks {
            assert!(b.coeffs.iter().chain(&b.activation).all(exact));
        }
        for net in &m.foot_nets {
            assert!(net.layers().all(|l| l.weight.iter().chain(&l.bias).all(exact)));
        }
    }

    #[test]
    fn rest_joints_are_regressed_exactly() {
        let m = synth_model(&SynthOptions::toy(5)).unwrap();
        let j = m.regress_joints(&[]).unwrap();
        // root sits at the fixed origin of the skeleton
        assert_eq!(j[0], [0.0, 0.875, 0.0]);
    }

    #[test]
    fn infeasible_knobs() {
        assert!(synth_model(&SynthOptions::new(0, 3, 2)).is_err());
        assert!(synth_model(&SynthOptions {
            density: 0.0,
            ..SynthOptions::new(0, 100, 5)
        })
        .is_err());
        assert!(matches!(
            synth_model(&SynthOptions::new(0, 12, 10)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn foot_widths() {
        let m = synth_model(&SynthOptions::toy(0)).unwrap();
        assert_eq!(m.foot_nets.len(), 2);
        for net in &m.foot_nets {
            assert_eq!(net.encoder[0].inputs, net.input_width());
        }
    }
}
