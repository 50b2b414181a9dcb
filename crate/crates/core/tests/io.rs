mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::random_params;
use supr::io::{decode, encode, load_container, read_mesh, save_container, write_mesh, MeshFormat};
use supr::synth::{synth_model, SynthOptions};

#[test]
fn posed_mesh_export_round_trips_in_every_format() {
    let model = synth_model(&SynthOptions::toy(21)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mesh = model.forward_params(&random_params(&model, &mut rng, 1.0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (name, format) in [("m.obj", MeshFormat::Obj), ("m.ply", MeshFormat::Ply), ("a.ply", MeshFormat::PlyAscii)] {
        let path = dir.path().join(name);
        write_mesh(&path, &mesh, format).unwrap();
        let back = read_mesh(&path).unwrap();
        assert_eq!(back.vertices, mesh.vertices, "{name}");
        assert_eq!(back.faces, mesh.faces, "{name}");
    }
}

#[test]
fn container_files_round_trip() {
    let model = synth_model(&SynthOptions::toy(22)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.supr");
    save_container(&path, &model).unwrap();
    let loaded = load_container(&path).unwrap();
    assert_eq!(loaded, model);
    assert_eq!(std::fs::read(&path).unwrap(), encode(&model));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn random_containers_round_trip(seed in 0u64..1_000, n in 120usize..400, k in 5usize..12, feet: bool) {
        let model = synth_model(&SynthOptions { foot_nets: feet, ..SynthOptions::new(seed, n, k) }).unwrap();
        let bytes = encode(&model);
        let back = decode(&bytes).unwrap();
        prop_assert!(back == model);
        prop_assert!(encode(&back) == bytes);
    }
}
