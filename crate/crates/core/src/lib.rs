//! Sparse, part-separable statistical body model.
//!
//! The forward model adds shape, sparse pose-corrective and expression
//! offsets to a template mesh, regresses joint locations from the shaped
//! template and poses the result with linear blend skinning. Pose correctives
//! are driven by the quaternion features of each joint's neighbor set and
//! only touch that joint's activated vertices, which lets head, hands and
//! feet be cut out as standalone models with identical output.

pub mod blendshape;
pub mod error;
pub mod fitting;
pub mod foot;
pub mod io;
pub mod kinematics;
pub mod model;
pub mod oracle;
pub mod params;
pub mod part;
pub mod real;
pub mod sparse;
pub mod synth;

pub use blendshape::{LinearShapeSpace, PoseBlock, SparsePoseBlendshapes};
pub use error::{Error, LoadError, Result, ValidationError, ValidationKind};
pub use foot::{ContactState, DenseLayer, FootDeformNet, FootSide};
pub use io::{MeshFormat, TriangleMesh};
pub use kinematics::{KinematicTree, PoseState, RigidTransform, UnitQuaternion, Vec3};
pub use model::{Lineage, ModelContainer, ModelParams, ParamTangent, PartLabel, PosedMesh};
pub use part::{separate, PartModel, PartSpec};
pub use sparse::CsrMatrix;
