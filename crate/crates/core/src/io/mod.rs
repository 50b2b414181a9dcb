pub mod container;
pub mod mesh;

pub use container::{decode, encode, load_container, save_container};
pub use mesh::{read_mesh, write_mesh, MeshFormat, TriangleMesh};
