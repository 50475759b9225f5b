use std::path::Path;

use neucolor::checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
use neucolor::config::RunConfig;
use neucolor::dataset::{encode_png_mask, load_dataset, save_dataset, IDENTITY4, MASKS_DIR};
use neucolor::fsutil::atomic_write;
use neucolor::ply::{decode_ply, encode_ply, read_ply, write_ply};
use neucolor::Error;
use neucolor_core::fields::{Architecture, ModelConfig, Variant};
use neucolor_core::geometry::CameraPose;
use neucolor_core::mesher::ColoredMesh;
use neucolor_core::synth::{generate, CameraRig, SceneSpec};
use neucolor_core::trainer::{TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_scene() -> neucolor_core::synth::SynthDataset {
    generate(&SceneSpec {
        cameras: CameraRig {
            count: 3,
            test_count: 1,
            width: 12,
            height: 10,
            ..CameraRig::default()
        },
        ..SceneSpec::default()
    })
    .unwrap()
}

fn max_pose_diff(a: &CameraPose, b: &CameraPose) -> f64 {
    let ra = a.rotation().unwrap();
    let rb = b.rotation().unwrap();
    let r = (ra - rb).abs().max();
    let t = (a.translation - b.translation).abs().max();
    let k = (a.intrinsics - b.intrinsics).abs().max();
    r.max(t).max(k)
}

// Scale 0.4, a rotation about (1, 2, 2)/3 and an offset.
#[rustfmt::skip]
fn scale_mat() -> [f64; 16] {
    let (s, c) = (0.3f64.sin(), 0.3f64.cos());
    let (x, y, z) = (1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0);
    let r = [
        c + x * x * (1.0 - c), x * y * (1.0 - c) - z * s, x * z * (1.0 - c) + y * s,
        y * x * (1.0 - c) + z * s, c + y * y * (1.0 - c), y * z * (1.0 - c) - x * s,
        z * x * (1.0 - c) - y * s, z * y * (1.0 - c) + x * s, c + z * z * (1.0 - c),
    ];
    let k = 0.4;
    [
        k * r[0], k * r[1], k * r[2], 0.1,
        k * r[3], k * r[4], k * r[5], -0.2,
        k * r[6], k * r[7], k * r[8], 0.05,
        0.0, 0.0, 0.0, 1.0,
    ]
}

#[test]
fn dataset_round_trip_reproduces_poses() {
    let synth = small_scene();
    for mat in [IDENTITY4, scale_mat()] {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &synth.train, &mat).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.scale_mat, mat);
        let ds = &loaded.dataset;
        assert_eq!(ds.len(), synth.train.len());
        for (a, b) in ds.poses.iter().zip(&synth.train.poses) {
            assert!(max_pose_diff(a, b) < 1e-9, "{}", max_pose_diff(a, b));
        }
        for (a, b) in ds.images.iter().zip(&synth.train.images) {
            assert_eq!(a, b);
        }
        // Loading twice indexes identically.
        assert_eq!(load_dataset(dir.path()).unwrap(), loaded);
    }
}

#[test]
fn dataset_without_masks_disables_mask_loss() {
    let mut synth = small_scene();
    for img in &mut synth.train.images {
        img.mask = None;
    }
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &synth.train, &IDENTITY4).unwrap();
    assert!(!dir.path().join(MASKS_DIR).exists());
    let loaded = load_dataset(dir.path()).unwrap();
    assert!(loaded.dataset.images.iter().all(|i| i.mask.is_none()));
    let t = Trainer::new(&loaded.dataset, TrainConfig::default()).unwrap();
    assert!(!t.uses_masks());
    assert_eq!(t.config.loss.lambda_m, 0.0);
}

#[test]
fn mismatched_mask_names_the_file() {
    let synth = small_scene();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &synth.train, &IDENTITY4).unwrap();
    let name = &synth.train.names[1];
    let path = dir.path().join(MASKS_DIR).join(name);
    atomic_write(&path, &encode_png_mask(5, 5, &[true; 25])).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Format { .. }), "{err:?}");
    assert!(err.to_string().contains(name.as_str()), "{err}");
}

#[test]
fn image_without_camera_is_an_error() {
    let synth = small_scene();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &synth.train, &IDENTITY4).unwrap();
    std::fs::copy(
        dir.path().join("images").join(&synth.train.names[0]),
        dir.path().join("images").join("zzz.png"),
    )
    .unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().contains("zzz.png"), "{err}");
}

#[test]
fn singular_scale_mat_is_rejected() {
    let synth = small_scene();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &synth.train, &IDENTITY4).unwrap();
    let cams = dir.path().join("cameras.json");
    let text = std::fs::read_to_string(&cams).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["scale_mat"][0] = 0.0.into();
    std::fs::write(&cams, v.to_string()).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().contains("scale_mat"), "{err}");
}

fn random_mesh(seed: u64) -> ColoredMesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 50;
    ColoredMesh {
        vertices: (0..n).map(|_| [rng.random::<f32>() as f64, rng.random::<f32>() as f64, -1.5]).collect(),
        triangles: (0..80)
            .map(|_| [0, 1, 2].map(|_| rng.random_range(0..n as u32)))
            .collect(),
        colors: (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect(),
    }
}

#[test]
fn ply_round_trip_is_exact_after_quantization() {
    let mesh = random_mesh(5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ply");
    write_ply(&mesh, &path).unwrap();
    let back = read_ply(&path).unwrap();
    assert_eq!(back.vertices, mesh.vertices);
    assert_eq!(back.triangles, mesh.triangles);
    for (a, b) in back.colors.iter().zip(&mesh.colors) {
        for k in 0..3 {
            let q = (b[k] * 255.0 + 0.5).floor() / 255.0;
            assert_eq!(a[k], q);
        }
    }
    // Writing the decoded mesh reproduces the file byte for byte.
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(encode_ply(&back), bytes);
}

#[test]
fn empty_ply_has_a_valid_header() {
    let bytes = encode_ply(&ColoredMesh::default());
    let text = String::from_utf8_lossy(&bytes);
    assert!(text.starts_with("ply\nformat binary_little_endian 1.0\n"));
    assert!(text.contains("element vertex 0\n"));
    assert!(text.contains("element face 0\n"));
    assert!(text.ends_with("end_header\n"));
    let back = decode_ply(&bytes, Path::new("empty.ply")).unwrap();
    assert!(back.vertices.is_empty() && back.triangles.is_empty());
}

#[test]
fn half_quantizes_to_128() {
    let mesh = ColoredMesh {
        vertices: vec![[0.0; 3]],
        triangles: vec![],
        colors: vec![[0.5, 0.0, 1.0]],
    };
    let bytes = encode_ply(&mesh);
    assert_eq!(&bytes[bytes.len() - 3..], &[128, 0, 255]);
}

#[test]
fn truncated_ply_is_rejected() {
    let bytes = encode_ply(&random_mesh(1));
    let err = decode_ply(&bytes[..bytes.len() - 7], Path::new("t.ply")).unwrap_err();
    assert!(matches!(err, Error::Format { .. }));
}

fn trained_checkpoint() -> Checkpoint {
    let synth = small_scene();
    let train = TrainConfig {
        total_iters: 20,
        warmup_iters: 2,
        rays_per_batch: 8,
        optimize_poses: true,
        ..TrainConfig::default()
    };
    let model = ModelConfig {
        variant: Variant::ColorNeus,
        architecture: Architecture {
            sdf_hidden_dim: 8,
            sdf_hidden_layers: 2,
            feature_dim: 4,
            color_hidden_dim: 8,
            color_hidden_layers: 1,
            relight_hidden_dim: 8,
            relight_hidden_layers: 1,
            ..Architecture::default()
        },
        ..ModelConfig::default()
    };
    let t = Trainer::new(&synth.train, train.clone()).unwrap();
    let mut state = t.init_state(model);
    for _ in 0..3 {
        t.step(&mut state).unwrap();
    }
    Checkpoint { train, state }
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let ck = trained_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    save_checkpoint(&ck, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(encode_checkpoint(&back), std::fs::read(&path).unwrap());
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back.state.params.values), bits(&ck.state.params.values));
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let bytes = encode_checkpoint(&trained_checkpoint());
    let p = Path::new("x.ckpt");
    assert!(decode_checkpoint(&bytes[..bytes.len() - 1], p).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode_checkpoint(&extra, p).is_err());
    let mut magic = bytes;
    magic[0] = b'X';
    assert!(decode_checkpoint(&magic, p).unwrap_err().to_string().contains("magic"));
}

#[test]
fn config_defaults_and_unknown_keys() {
    let empty = RunConfig::from_toml("").unwrap();
    assert_eq!(empty, RunConfig::default());
    let toy = RunConfig::toy();
    assert_eq!(RunConfig::from_toml(&toy.to_toml()).unwrap(), toy);
    let partial = RunConfig::from_toml("[train]\nseed = 7\n[train.loss]\nlambda_r = 0.0\n").unwrap();
    assert_eq!(partial.train.seed, 7);
    assert_eq!(partial.train.loss.lambda_r, 0.0);
    assert_eq!(partial.train.loss.lambda_e, 0.1);
    for bad in ["bogus = 1", "[train]\nlearning_rate = 1.0", "[model.architecture]\nwidth = 3"] {
        let err = RunConfig::from_toml(bad).unwrap_err();
        assert!(err.contains("unknown field"), "{err}");
    }
}

#[test]
fn shipped_toy_config_parses() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml");
    let cfg = RunConfig::load(&path).unwrap();
    assert_eq!(cfg.model, RunConfig::toy().model);
    assert_eq!(cfg.train, RunConfig::toy().train);
}
