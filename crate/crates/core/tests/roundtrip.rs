//! Files written by the harness read back to the same values.

use proptest::prelude::*;

use dynrecon::harness::io::{decode_tensor, encode_tensor};
use dynrecon::harness::{generate_phantom, load_image, load_tensor, run_reconstruction, save_tensor, PhantomSpec, TrainConfig};
use dynrecon::mri::{make_vds_mask, MaskKind};
use dynrecon::tenf::{load_checkpoint, save_checkpoint, ImageModel, TenfConfig, TenfModel};
use dynrecon::patching::{block_match, pad_replicate};
use dynrecon::tensor::DenseTensor;

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn tensor_bytes_round_trip(shape in prop::collection::vec(1usize..5, 1..5), seed in any::<u64>()) {
        let mut s = seed;
        let t = DenseTensor::from_fn(&shape, |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            f64::from_bits(s >> 2)
        }).unwrap();
        let back = decode_tensor(&encode_tensor(&t)).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn truncated_bytes_are_rejected(cut in 1usize..40) {
        let t = DenseTensor::from_fn(&[2, 3], |i| i[0] as f64 - i[1] as f64).unwrap();
        let bytes = encode_tensor(&t);
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(decode_tensor(&bytes[..keep]).is_err());
    }
}

#[test]
fn configs_round_trip_through_toml() {
    let cfg = TrainConfig {
        acceleration: 12.0,
        mask_kind: MaskKind::PseudoSpiral,
        ranks: [3, 3, 5, 2, 7],
        global_ranks: Some([9, 9, 4, 2]),
        lambda_s: 0.0,
        output_dir: Some("out/run".into()),
        ..TrainConfig::default()
    };
    assert_eq!(TrainConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);

    let spec = PhantomSpec {
        nx: 40,
        noise_std: 0.0,
        ..PhantomSpec::default()
    };
    let text = toml::to_string(&spec).unwrap();
    assert_eq!(PhantomSpec::from_toml_str(&text).unwrap(), spec);
}

#[test]
fn run_outputs_reload() {
    let ph = generate_phantom(&PhantomSpec {
        nx: 10,
        ny: 10,
        nt: 3,
        coils: 2,
        ..PhantomSpec::default()
    })
    .unwrap();
    let mask = make_vds_mask(10, 10, 3, 2.0, 2, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        iterations: 3,
        k: 3,
        search_window: 2,
        ranks: [2, 2, 3, 2, 3],
        hidden: 8,
        output_dir: Some(dir.path().to_path_buf()),
        ..TrainConfig::default()
    };
    let out = run_reconstruction(&cfg, &ph.kspace, &ph.sensitivities, &mask, Some(&ph.truth)).unwrap();
    assert_eq!(load_image(&dir.path().join("recon.bin")).unwrap(), out.image);
    assert_eq!(load_image(&dir.path().join("recon_raw.bin")).unwrap(), out.before_replacement);
    assert_eq!(load_image(&dir.path().join("x_init.bin")).unwrap(), out.x_init);
    let written = TrainConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(written, cfg);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config_hash"], serde_json::Value::String(cfg.hash()));
}

#[test]
fn checkpoints_round_trip() {
    let x = generate_phantom(&PhantomSpec {
        nx: 8,
        ny: 8,
        nt: 2,
        coils: 1,
        ..PhantomSpec::default()
    })
    .unwrap()
    .truth;
    let (xp, pad) = pad_replicate(&x, 2).unwrap();
    let map = block_match(&xp, &pad, 2, 2, 1).unwrap();
    let cfg = TenfConfig {
        ranks: [2, 2, 2, 2, 2],
        hidden: 6,
        ..TenfConfig::default()
    };
    let model = TenfModel::init(&map, &cfg, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(model.params(), cfg.omega, dir.path(), "model").unwrap();
    let (store, omega) = load_checkpoint(dir.path(), "model").unwrap();
    assert_eq!(omega, cfg.omega);
    assert_eq!(store.len(), model.params().len());
    for i in 0..store.len() {
        assert_eq!(store.get(i).name, model.params().get(i).name);
        assert_eq!(store.value(i), model.params().value(i));
    }

    let p = dir.path().join("t.bin");
    save_tensor(model.params().value(0), &p).unwrap();
    assert_eq!(&load_tensor(&p).unwrap(), model.params().value(0));
}
