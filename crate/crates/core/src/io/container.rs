//! Single-file model container.
//!
//! Layout:
//!
//! ```text
//! offset 0   magic  b"SUPRMDL\0"
//! offset 8   u32 LE format version
//! offset 12  u32 LE reserved (0)
//! offset 16  u64 LE manifest length in bytes
//! offset 24  manifest: compact UTF-8 JSON, zero-padded to a 64-byte boundary
//! then       tensor data, each tensor 64-byte aligned, little-endian
//! ```
//!
//! The manifest records the model metadata, a directory of named tensors
//! (dtype `f32` or `u32`, shape, offset and byte length relative to the start
//! of the data section) and the SHA-256 of the data section. Floating-point
//! tensors are stored in single precision; values that are already
//! representable in `f32` round-trip exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blendshape::{LinearShapeSpace, PoseBlock, SparsePoseBlendshapes};
use crate::error::{LoadError, Result};
use crate::foot::{DenseLayer, FootDeformNet, FootSide};
use crate::kinematics::{KinematicTree, Vec3};
use crate::model::{Lineage, ModelContainer, PartLabel};
use crate::part::PartSpec;
use crate::sparse::CsrMatrix;

pub const MAGIC: [u8; 8] = *b"SUPRMDL\0";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;
pub const ALIGN: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContainerManifest {
    pub format_version: u32,
    pub data_length: u64,
    pub data_sha256: String,
    pub metadata: ModelMetadata,
    pub tensors: BTreeMap<String, TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMetadata {
    pub n_vertices: usize,
    pub n_joints: usize,
    pub n_faces: usize,
    pub shape_components: usize,
    pub expression_components: usize,
    pub tree: KinematicTree,
    pub pose_blocks: Vec<BlockMeta>,
    pub parts: Vec<PartMeta>,
    pub foot_nets: Vec<FootMeta>,
    pub lineage: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockMeta {
    pub joint: usize,
    pub vertex_count: usize,
    pub feature_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartMeta {
    pub name: String,
    pub vertex_count: usize,
    pub local_shape_components: Option<usize>,
    pub local_regressor_rows: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FootMeta {
    pub side: FootSide,
    pub vertex_count: usize,
    pub joint_count: usize,
    pub shape_coeff_count: usize,
    pub negative_slope: f64,
    /// `[inputs, outputs]` per layer.
    pub encoder: Vec<[usize; 2]>,
    pub decoder: Vec<[usize; 2]>,
}

fn align(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------- encode

#[derive(Default)]
struct TensorWriter {
    tensors: BTreeMap<String, TensorEntry>,
    data: Vec<u8>,
    inexact: usize,
}

impl TensorWriter {
    fn begin(&mut self, name: String, dtype: &str, shape: Vec<usize>, count: usize) {
        let offset = align(self.data.len());
        self.data.resize(offset, 0);
        self.tensors.insert(
            name,
            TensorEntry {
                dtype: dtype.into(),
                shape,
                offset: offset as u64,
                length: (count * 4) as u64,
            },
        );
    }

    fn f64s(&mut self, name: impl Into<String>, shape: Vec<usize>, values: impl IntoIterator<Item = f64>) {
        let values: Vec<f64> = values.into_iter().collect();
        self.begin(name.into(), "f32", shape, values.len());
        for v in values {
            let s = v as f32;
            if s as f64 != v && !v.is_nan() {
                self.inexact += 1;
            }
            self.data.extend_from_slice(&s.to_le_bytes());
        }
    }

    fn f32s(&mut self, name: impl Into<String>, shape: Vec<usize>, values: &[f32]) {
        self.begin(name.into(), "f32", shape, values.len());
        values.iter().for_each(|v| self.data.extend_from_slice(&v.to_le_bytes()));
    }

    fn vec3s(&mut self, name: impl Into<String>, values: &[Vec3]) {
        self.f64s(name, vec![values.len(), 3], values.iter().flatten().copied());
    }

    fn u32s(&mut self, name: impl Into<String>, shape: Vec<usize>, values: impl IntoIterator<Item = usize>) {
        let values: Vec<usize> = values.into_iter().collect();
        self.begin(name.into(), "u32", shape, values.len());
        for v in values {
            let v = u32::try_from(v).expect("index exceeds u32 range");
            self.data.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn csr(&mut self, prefix: &str, m: &CsrMatrix) {
        self.u32s(format!("{prefix}.row_ptr"), vec![m.rows + 1], m.row_ptr.iter().copied());
        self.u32s(format!("{prefix}.col_idx"), vec![m.nnz()], m.col_idx.iter().copied());
        self.f64s(format!("{prefix}.values"), vec![m.nnz()], m.values.iter().copied());
    }

    fn shape_space(&mut self, prefix: &str, s: &LinearShapeSpace) {
        let n = s.n_vertices();
        self.vec3s(format!("{prefix}.mean"), &s.mean_offset);
        self.f32s(format!("{prefix}.basis"), vec![s.component_count, n, 3], &s.basis);
    }
}

/// Serializes without validating.
pub fn encode(model: &ModelContainer) -> Vec<u8> {
    let n = model.n_vertices();
    let k = model.n_joints();
    let mut w = TensorWriter::default();
    w.vec3s("template", &model.template);
    w.u32s("faces", vec![model.faces.len(), 3], model.faces.iter().flatten().copied());
    w.u32s("part_labels", vec![n], model.part_labels.iter().map(|l| l.code() as usize));
    w.csr("skinning", &model.skinning_weights);
    w.csr("joint_regressor", &model.joint_regressor);
    w.shape_space("shape", &model.shape_space);
    w.shape_space("expression", &model.expression_space);

    let mut pose_blocks = Vec::new();
    for (i, b) in model.pose_blendshapes.blocks.iter().enumerate() {
        let p = format!("pose.{i:04}");
        w.u32s(format!("{p}.vertices"), vec![b.vertices.len()], b.vertices.iter().copied());
        w.f64s(format!("{p}.activation"), vec![b.activation.len()], b.activation.iter().copied());
        w.f64s(
            format!("{p}.coeffs"),
            vec![b.vertices.len(), 3, b.feature_len],
            b.coeffs.iter().copied(),
        );
        pose_blocks.push(BlockMeta {
            joint: b.joint,
            vertex_count: b.vertices.len(),
            feature_len: b.feature_len,
        });
    }

    let mut parts = Vec::new();
    for (i, part) in model.parts.iter().enumerate() {
        let p = format!("part.{i:02}");
        w.u32s(format!("{p}.vertices"), vec![part.vertex_indices.len()], part.vertex_indices.iter().copied());
        if let Some(s) = &part.local_shape_basis {
            w.shape_space(&format!("{p}.shape"), s);
        }
        if let Some(r) = &part.local_joint_regressor {
            w.csr(&format!("{p}.joint_regressor"), r);
        }
        parts.push(PartMeta {
            name: part.name.clone(),
            vertex_count: part.vertex_indices.len(),
            local_shape_components: part.local_shape_basis.as_ref().map(|s| s.component_count),
            local_regressor_rows: part.local_joint_regressor.as_ref().map(|r| r.rows),
        });
    }

    let mut foot_nets = Vec::new();
    for net in &model.foot_nets {
        let p = format!("foot.{}", net.side.name());
        w.u32s(format!("{p}.vertices"), vec![net.vertex_indices.len()], net.vertex_indices.iter().copied());
        w.u32s(format!("{p}.joints"), vec![net.joint_indices.len()], net.joint_indices.iter().copied());
        w.f64s(
            format!("{p}.shape_basis"),
            vec![net.vertex_indices.len(), 3, net.shape_coeff_count],
            net.shape_basis.iter().copied(),
        );
        for (stage, layers) in [("encoder", &net.encoder), ("decoder", &net.decoder)] {
            for (l, layer) in layers.iter().enumerate() {
                let q = format!("{p}.{stage}.{l}");
                w.f64s(
                    format!("{q}.weight"),
                    vec![layer.outputs, layer.inputs],
                    layer.weight.iter().copied(),
                );
                w.f64s(format!("{q}.bias"), vec![layer.outputs], layer.bias.iter().copied());
            }
        }
        let dims = |ls: &[DenseLayer]| ls.iter().map(|l| [l.inputs, l.outputs]).collect();
        foot_nets.push(FootMeta {
            side: net.side,
            vertex_count: net.vertex_indices.len(),
            joint_count: net.joint_indices.len(),
            shape_coeff_count: net.shape_coeff_count,
            negative_slope: net.negative_slope,
            encoder: dims(&net.encoder),
            decoder: dims(&net.decoder),
        });
    }

    if let Some(l) = &model.lineage {
        w.u32s("lineage.vertex_map", vec![l.vertex_map.len()], l.vertex_map.iter().copied());
        w.u32s("lineage.joint_map", vec![l.joint_map.len()], l.joint_map.iter().copied());
    }
    if w.inexact > 0 {
        warn!("{} values are not representable in single precision and were rounded", w.inexact);
    }

    let data_len = align(w.data.len());
    w.data.resize(data_len, 0);
    let manifest = ContainerManifest {
        format_version: FORMAT_VERSION,
        data_length: data_len as u64,
        data_sha256: hex(&Sha256::digest(&w.data)),
        metadata: ModelMetadata {
            n_vertices: n,
            n_joints: k,
            n_faces: model.faces.len(),
            shape_components: model.shape_space.component_count,
            expression_components: model.expression_space.component_count,
            tree: model.tree.clone(),
            pose_blocks,
            parts,
            foot_nets,
            lineage: model.lineage.is_some(),
        },
        tensors: w.tensors,
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");

    let data_start = align(HEADER_LEN + json.len());
    let mut out = Vec::with_capacity(data_start + data_len);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.resize(data_start, 0);
    out.extend_from_slice(&w.data);
    out
}

/// Validates, then writes the container atomically (temp file + rename).
pub fn save_container(path: &Path, model: &ModelContainer) -> Result<()> {
    model.validate()?;
    let bytes = encode(model);
    let tmp = path.with_extension("tmp-write");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_container(path: &Path) -> Result<ModelContainer> {
    let bytes = fs::read(path)?;
    Ok(decode(&bytes)?)
}

// ---------------------------------------------------------------- decode

/// Parses and checks the header and manifest; returns the manifest and the
/// verified data section.
pub fn read_manifest(bytes: &[u8]) -> Result<(ContainerManifest, &[u8]), LoadError> {
    if bytes.len() >= MAGIC.len() && bytes[..8] != MAGIC {
        return Err(LoadError::Magic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(LoadError::Truncated(format!("{} byte header", bytes.len())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(LoadError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let manifest_len = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let manifest_end = (HEADER_LEN as u64).saturating_add(manifest_len);
    if manifest_end > bytes.len() as u64 {
        return Err(LoadError::Truncated("manifest extends past end of file".into()));
    }
    let manifest_end = manifest_end as usize;
    let manifest: ContainerManifest =
        serde_json::from_slice(&bytes[HEADER_LEN..manifest_end]).map_err(|e| LoadError::Manifest(e.to_string()))?;
    if manifest.format_version != version {
        return Err(LoadError::Manifest("manifest and header versions differ".into()));
    }
    let data_start = align(manifest_end);
    let data_end = (data_start as u64).saturating_add(manifest.data_length);
    if data_end > bytes.len() as u64 {
        return Err(LoadError::Truncated(format!(
            "{} data bytes declared, {} present",
            manifest.data_length,
            bytes.len().saturating_sub(data_start)
        )));
    }
    if data_end < bytes.len() as u64 {
        return Err(LoadError::Manifest("trailing bytes after tensor data".into()));
    }
    let data = &bytes[data_start..];
    if hex(&Sha256::digest(data)) != manifest.data_sha256 {
        return Err(LoadError::Checksum);
    }
    check_directory(&manifest)?;
    Ok((manifest, data))
}

fn check_directory(m: &ContainerManifest) -> Result<(), LoadError> {
    let mut spans = Vec::new();
    for (name, t) in &m.tensors {
        let bad = |msg: &str| Err(LoadError::Manifest(format!("tensor '{name}': {msg}")));
        if t.dtype != "f32" && t.dtype != "u32" {
            return bad("unknown dtype");
        }
        let count = t.shape.iter().try_fold(1u64, |a, &d| a.checked_mul(d as u64));
        if count.and_then(|c| c.checked_mul(4)) != Some(t.length) {
            return bad("length does not match shape");
        }
        if t.offset % ALIGN as u64 != 0 {
            return bad("misaligned");
        }
        if t.offset.checked_add(t.length).is_none_or(|e| e > m.data_length) {
            return bad("extends past data section");
        }
        spans.push((t.offset, t.offset + t.length, name));
    }
    spans.sort();
    for w in spans.windows(2) {
        if w[0].1 > w[1].0 {
            return Err(LoadError::Manifest(format!("tensors '{}' and '{}' overlap", w[0].2, w[1].2)));
        }
    }
    Ok(())
}

struct TensorReader<'a> {
    manifest: &'a ContainerManifest,
    data: &'a [u8],
}

impl TensorReader<'_> {
    fn raw(&self, name: &str, dtype: &str, shape: &[usize]) -> Result<&[u8], LoadError> {
        let t = self
            .manifest
            .tensors
            .get(name)
            .ok_or_else(|| LoadError::Manifest(format!("missing tensor '{name}'")))?;
        if t.dtype != dtype {
            return Err(LoadError::Manifest(format!("tensor '{name}' should be {dtype}")));
        }
        if t.shape != shape {
            return Err(LoadError::Manifest(format!(
                "tensor '{name}' has shape {:?}, metadata implies {shape:?}",
                t.shape
            )));
        }
        Ok(&self.data[t.offset as usize..(t.offset + t.length) as usize])
    }

    fn f32s(&self, name: &str, shape: &[usize]) -> Result<Vec<f32>, LoadError> {
        Ok(self
            .raw(name, "f32", shape)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn f64s(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>, LoadError> {
        Ok(self.f32s(name, shape)?.into_iter().map(f64::from).collect())
    }

    fn vec3s(&self, name: &str, n: usize) -> Result<Vec<Vec3>, LoadError> {
        Ok(self.f64s(name, &[n, 3])?.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    fn u32s(&self, name: &str, shape: &[usize]) -> Result<Vec<usize>, LoadError> {
        Ok(self
            .raw(name, "u32", shape)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect())
    }

    fn len_of(&self, name: &str) -> Result<usize, LoadError> {
        match self.manifest.tensors.get(name).map(|t| t.shape.as_slice()) {
            Some([n]) => Ok(*n),
            _ => Err(LoadError::Manifest(format!("tensor '{name}' missing or not 1-D"))),
        }
    }

    fn csr(&self, prefix: &str, rows: usize, cols: usize) -> Result<CsrMatrix, LoadError> {
        let nnz = self.len_of(&format!("{prefix}.col_idx"))?;
        Ok(CsrMatrix {
            rows,
            cols,
            row_ptr: self.u32s(&format!("{prefix}.row_ptr"), &[rows + 1])?,
            col_idx: self.u32s(&format!("{prefix}.col_idx"), &[nnz])?,
            values: self.f64s(&format!("{prefix}.values"), &[nnz])?,
        })
    }

    fn shape_space(&self, prefix: &str, n: usize, s: usize) -> Result<LinearShapeSpace, LoadError> {
        Ok(LinearShapeSpace {
            mean_offset: self.vec3s(&format!("{prefix}.mean"), n)?,
            basis: self.f32s(&format!("{prefix}.basis"), &[s, n, 3])?,
            component_count: s,
        })
    }
}

/// Decodes and validates a container image.
pub fn decode(bytes: &[u8]) -> Result<ModelContainer, LoadError> {
    let (manifest, data) = read_manifest(bytes)?;
    let r = TensorReader {
        manifest: &manifest,
        data,
    };
    let md = &manifest.metadata;
    let (n, k) = (md.n_vertices, md.n_joints);
    if md.tree.len() != k {
        return Err(LoadError::Manifest("tree size differs from joint count".into()));
    }

    let faces = r
        .u32s("faces", &[md.n_faces, 3])?
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    let part_labels = r
        .u32s("part_labels", &[n])?
        .into_iter()
        .map(|c| PartLabel::from_code(c as u32).ok_or_else(|| LoadError::Manifest(format!("unknown part label {c}"))))
        .collect::<Result<_, _>>()?;

    let mut blocks = Vec::with_capacity(md.pose_blocks.len());
    for (i, b) in md.pose_blocks.iter().enumerate() {
        let p = format!("pose.{i:04}");
        blocks.push(PoseBlock {
            joint: b.joint,
            vertices: r.u32s(&format!("{p}.vertices"), &[b.vertex_count])?,
            activation: r.f64s(&format!("{p}.activation"), &[b.vertex_count])?,
            coeffs: r.f64s(&format!("{p}.coeffs"), &[b.vertex_count, 3, b.feature_len])?,
            feature_len: b.feature_len,
        });
    }

    let mut parts = Vec::with_capacity(md.parts.len());
    for (i, pm) in md.parts.iter().enumerate() {
        let p = format!("part.{i:02}");
        let local_shape_basis = match pm.local_shape_components {
            Some(s) => Some(r.shape_space(&format!("{p}.shape"), pm.vertex_count, s)?),
            None => None,
        };
        let local_joint_regressor = match pm.local_regressor_rows {
            Some(rows) => Some(r.csr(&format!("{p}.joint_regressor"), rows, pm.vertex_count)?),
            None => None,
        };
        parts.push(PartSpec {
            name: pm.name.clone(),
            vertex_indices: r.u32s(&format!("{p}.vertices"), &[pm.vertex_count])?,
            local_shape_basis,
            local_joint_regressor,
        });
    }

    let mut foot_nets = Vec::with_capacity(md.foot_nets.len());
    for fm in &md.foot_nets {
        let p = format!("foot.{}", fm.side.name());
        let layers = |stage: &str, dims: &[[usize; 2]]| -> Result<Vec<DenseLayer>, LoadError> {
            dims.iter()
                .enumerate()
                .map(|(l, &[inputs, outputs])| {
                    let q = format!("{p}.{stage}.{l}");
                    Ok(DenseLayer {
                        inputs,
                        outputs,
                        weight: r.f64s(&format!("{q}.weight"), &[outputs, inputs])?,
                        bias: r.f64s(&format!("{q}.bias"), &[outputs])?,
                    })
                })
                .collect()
        };
        foot_nets.push(FootDeformNet {
            side: fm.side,
            vertex_indices: r.u32s(&format!("{p}.vertices"), &[fm.vertex_count])?,
            joint_indices: r.u32s(&format!("{p}.joints"), &[fm.joint_count])?,
            shape_basis: r.f64s(&format!("{p}.shape_basis"), &[fm.vertex_count, 3, fm.shape_coeff_count])?,
            shape_coeff_count: fm.shape_coeff_count,
            negative_slope: fm.negative_slope,
            encoder: layers("encoder", &fm.encoder)?,
            decoder: layers("decoder", &fm.decoder)?,
        });
    }

    let lineage = if md.lineage {
        Some(Lineage {
            vertex_map: r.u32s("lineage.vertex_map", &[n])?,
            joint_map: r.u32s("lineage.joint_map", &[k])?,
        })
    } else {
        None
    };

    let model = ModelContainer {
        template: r.vec3s("template", n)?,
        faces,
        skinning_weights: r.csr("skinning", n, k)?,
        joint_regressor: r.csr("joint_regressor", k, n)?,
        shape_space: r.shape_space("shape", n, md.shape_components)?,
        expression_space: r.shape_space("expression", n, md.expression_components)?,
        pose_blendshapes: SparsePoseBlendshapes { n_vertices: n, blocks },
        tree: md.tree.clone(),
        part_labels,
        parts,
        foot_nets,
        lineage,
    };
    model.validate()?;
    Ok(model)
}
