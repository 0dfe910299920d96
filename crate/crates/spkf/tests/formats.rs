use std::path::Path;

use spkf::checkpoint::{self, CheckpointMeta};
use spkf::config::{parse_layers, CvMode, RunConfig};
use spkf::container::{decode, encode};
use spkf_core::model::{build_model, ApproxLayers};
use spkf_core::{ModelConfig, Tensor};

const HERE: &str = "test";

#[test]
fn container_layout() {
    let t = Tensor::new(&[2, 3], vec![1.0, -2.5, 0.0, 1e-300, f64::MAX, -0.0]).unwrap();
    let bytes = encode(&t);
    assert_eq!(&bytes[..4], b"SPKT");
    assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
    assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 2);
    assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
    assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 3);
    assert_eq!(f64::from_le_bytes(bytes[32..40].try_into().unwrap()), -2.5);
    assert_eq!(bytes.len(), 8 + 16 + 48);
    let back = decode(&bytes, Path::new(HERE)).unwrap();
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(back.shape(), t.shape());
    assert_eq!(bits(&back), bits(&t));
}

#[test]
fn container_rejects_damage() {
    let bytes = encode(&Tensor::zeros(&[4]));
    let here = Path::new(HERE);
    assert!(decode(&bytes[..bytes.len() - 3], here).is_err());
    assert!(decode(&bytes[..6], here).is_err());
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(decode(&magic, here).is_err());
    let mut version = bytes.clone();
    version[4] = 9;
    assert!(decode(&version, here).is_err());
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(decode(&trailing, here).is_err());
    let mut huge = bytes;
    huge[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
    assert!(decode(&huge, here).is_err());
}

#[test]
fn config_presets_and_overrides() {
    let det = RunConfig::parse("task=detection").unwrap();
    assert_eq!((det.model.conv_channels, det.model.encoders), (8, 1));
    let pred = RunConfig::parse("# comment\ntask = prediction\n\nseed=7 # trailing").unwrap();
    assert_eq!((pred.model.conv_channels, pred.model.encoders, pred.seed), (32, 2, 7));
    assert_eq!(pred.train.seed, 7);

    let cfg = RunConfig::parse("task=prediction\nk=4\nn_encoders=1\nD=16\nT=4\nT_th=1\ntau=3\nv_th=0.8\nv_reset=0.1").unwrap();
    let m = &cfg.model;
    assert_eq!((m.conv_channels, m.encoders, m.embed_dim, m.timesteps), (4, 1, 16, 4));
    assert_eq!((m.approx.timesteps, m.approx.threshold), (4, 1));
    assert_eq!((m.lif.tau, m.lif.v_th, m.lif.v_reset), (3.0, 0.8, 0.1));

    // T below the default threshold pulls the threshold down with it.
    assert_eq!(RunConfig::parse("T=1").unwrap().model.approx.threshold, 1);
    assert_eq!(RunConfig::parse("cv=pooled").unwrap().ingest.cv, CvMode::Pooled);
}

#[test]
fn config_errors() {
    for bad in ["bogus=1", "task=sleep", "k=two", "seed", "k=1\nk=2", "approx=maybe", "cv=sometimes"] {
        assert!(RunConfig::parse(bad).is_err(), "{bad}");
    }
    let cfg = RunConfig::parse("T=4\nT_th=6").unwrap();
    assert!(cfg.validate().is_err());
    assert!(RunConfig::parse("folds=1").unwrap().validate().is_err());
    assert!(RunConfig::parse("early_stop_window=3").is_err());
}

#[test]
fn config_text_round_trips() {
    let cfg = RunConfig::parse(
        "task=prediction\nD=16\nattention_scale=0.3\npool_kernel=1x32\npool_stride=1x16\napprox=off\n\
         approx_layers=qkv,mlp\noptimizer=sgd\nmomentum=0.5\nearly_stop_accuracy=0.9\nearly_stop_window=8\n\
         stride_ictal=0.5\ncv=pooled\nfolds=5",
    )
    .unwrap();
    assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    assert_eq!(parse_layers("qkv,mlp").unwrap(), ApproxLayers::QKV | ApproxLayers::MLP);
    assert_eq!(parse_layers("all").unwrap(), ApproxLayers::ALL);
    assert!(parse_layers("qkv,conv").is_err());
}

#[test]
fn checkpoint_round_trip() {
    let cfg = ModelConfig {
        embed_dim: 8,
        ..ModelConfig::prediction()
    };
    let model = build_model(&cfg, 11).unwrap();
    let meta = CheckpointMeta {
        case: "chb03".into(),
        fold: 4,
        seed: 99,
    };
    let bytes = checkpoint::encode(&model, &meta);
    assert!(bytes.starts_with(b"SPKF-CHECKPOINT 1\n"));
    let back = checkpoint::decode(&bytes, Path::new(HERE)).unwrap();
    assert_eq!(back.meta, meta);
    assert_eq!(back.model.config, cfg);
    assert_eq!(back.model.state_dict(), model.state_dict());
    assert_eq!(checkpoint::encode(&back.model, &back.meta), bytes);

    let here = Path::new(HERE);
    assert!(checkpoint::decode(&bytes[..bytes.len() - 10], here).is_err());
    let text = String::from_utf8_lossy(&bytes[..200]).replace("D=8", "D=9");
    let mut wrong = text.into_bytes();
    wrong.extend_from_slice(&bytes[200..]);
    assert!(checkpoint::decode(&wrong, here).is_err());
}
