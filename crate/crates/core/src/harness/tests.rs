use super::*;
use crate::error::Error;
use crate::policy::ModelKind;
use crate::trainer::{ReturnMode, RewardSharing};

#[test]
fn empty_config_gives_documented_defaults() {
    let c = Config::parse("").unwrap();
    assert_eq!(c.env.preset, "combat_5v5");
    assert_eq!(c.model.kind, ModelKind::Msmarl);
    assert_eq!(c.model.hidden, 50);
    assert!(c.model.use_occupancy && c.model.share_slaves);
    assert_eq!(c.trainer.sigma, 0.05);
    assert_eq!(c.trainer.learning_rate, Some(0.001));
    assert_eq!(c.trainer.batch_size, Some(144));
    assert_eq!(c.trainer.batches_per_epoch, 100);
    assert_eq!(c.trainer.return_mode, ReturnMode::ToDate);
    assert_eq!(c.trainer.reward_sharing, RewardSharing::PerAgent);
    assert!(!c.trainer.baseline);
    assert_eq!(c.trainer.clip_grad_norm, 5.0);
    assert_eq!(c.trainer.eval_episodes, 100);
}

#[test]
fn family_defaults_follow_the_preset() {
    let t = Config::parse("[env]\npreset = \"traffic_hard\"").unwrap();
    assert_eq!((t.trainer.batch_size, t.trainer.learning_rate), (Some(16), Some(0.001)));
    let a = Config::parse("[env]\npreset = \"arena_m15v16\"").unwrap();
    assert_eq!((a.trainer.batch_size, a.trainer.learning_rate), (Some(4), Some(0.0005)));
    let explicit = Config::parse("[env]\npreset = \"arena_m5v6\"\n[trainer]\nbatch_size = 9").unwrap();
    assert_eq!(explicit.trainer.batch_size, Some(9));
}

#[test]
fn commnet_runs_on_continuous_presets() {
    let c = Config::parse("[env]\npreset = \"arena_m5v6\"\n[model]\nkind = \"commnet\"").unwrap();
    let p = c.policy().unwrap();
    assert_eq!(p.config().kind, ModelKind::Commnet);
}

#[test]
fn invalid_fields_are_named() {
    let err = Config::parse("[trainer]\nbatch_size = 0").unwrap_err();
    assert!(matches!(err, Error::InvalidConfig(_)));
    assert!(err.to_string().contains("batch_size"), "{err}");

    let err = Config::parse("[trainer]\nbatch_size = 0\nsigma = -1.0\nepochs = 0").unwrap_err();
    let msg = err.to_string();
    for field in ["batch_size", "sigma", "epochs"] {
        assert!(msg.contains(field), "{msg}");
    }

    let err = Config::parse("[model]\nkind = \"commnet\"\nshare_slaves = false").unwrap_err();
    assert!(err.to_string().contains("share_slaves"));

    let err = Config::parse("[env]\npreset = \"nowhere\"").unwrap_err();
    assert!(err.to_string().contains("nowhere"));
}

#[test]
fn unknown_keys_and_types_are_rejected() {
    let err = Config::parse("[trainer]\nbatchsize = 3").unwrap_err();
    assert!(matches!(err, Error::ConfigParse(_)));
    assert!(err.to_string().contains("batchsize"), "{err}");
    assert!(Config::parse("[mystery]\nx = 1").is_err());
    let err = Config::parse("[trainer]\nepochs = \"many\"").unwrap_err();
    assert!(err.to_string().contains("epochs"), "{err}");
}

#[test]
fn resolved_text_round_trips() {
    let c = Config::parse("[env]\npreset = \"combat_3v3\"\nhorizon = 7\n[trainer]\nseed = 4").unwrap();
    let text = c.to_toml().unwrap();
    let back = Config::parse(&text).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.hash().unwrap(), c.hash().unwrap());
    assert_eq!(back.scenario().unwrap().horizon(), 7);
    let other = Config::parse("[trainer]\nseed = 5").unwrap();
    assert_ne!(other.hash().unwrap(), c.hash().unwrap());
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let c = Config::parse("[env]\npreset = \"combat_3v3\"\n[model]\nhidden = 6").unwrap();
    let p = c.policy().unwrap();
    let ck = Checkpoint::from_policy(&p, c.hash().unwrap(), 3, c.to_toml().unwrap());
    let bytes = ck.encode();
    assert_eq!(&bytes[..8], MAGIC);
    let back = Checkpoint::decode(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.encode(), bytes);

    let mut q = Config::parse("[env]\npreset = \"combat_3v3\"\n[model]\nhidden = 6\n[trainer]\nseed = 9")
        .unwrap()
        .policy()
        .unwrap();
    assert_ne!(q.params(), p.params());
    back.apply(&mut q).unwrap();
    assert_eq!(q.params(), p.params());
}

#[test]
fn truncated_or_corrupt_checkpoints_fail_cleanly() {
    let c = Config::parse("[env]\npreset = \"combat_3v3\"\n[model]\nhidden = 4").unwrap();
    let bytes = Checkpoint::from_policy(&c.policy().unwrap(), c.hash().unwrap(), 0, c.to_toml().unwrap()).encode();
    for cut in [0, 5, 8, 12, 44, 60, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(Checkpoint::decode(&bytes[..cut]), Err(Error::Checkpoint(_))), "cut {cut}");
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::decode(&extra).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::decode(&bad).is_err());
    let mut version = bytes;
    version[8] = 9;
    assert!(Checkpoint::decode(&version).unwrap_err().to_string().contains("version"));
}

#[test]
fn checkpoint_shape_mismatch_names_tensor() {
    let small = Config::parse("[env]\npreset = \"combat_3v3\"\n[model]\nhidden = 4").unwrap();
    let big = Config::parse("[env]\npreset = \"combat_3v3\"\n[model]\nhidden = 5").unwrap();
    let ck = Checkpoint::from_policy(&small.policy().unwrap(), small.hash().unwrap(), 0, String::new());
    let mut p = big.policy().unwrap();
    let before = p.params().clone();
    let err = ck.apply(&mut p).unwrap_err().to_string();
    assert!(err.contains("slave.encoder.weight"), "{err}");
    assert_eq!(p.params(), &before);
}

#[test]
fn curves_average_training_rows_per_epoch() {
    let row = |epoch, batch: Option<usize>, ret: f64, win| MetricsRow {
        epoch,
        batch,
        mean_return: ret,
        win_rate: Some(win),
        grad_norm: batch.map(|_| 1.0),
        sigma: None,
        episode_len_mean: 1.0,
        wall_ms: 0,
    };
    let rows = vec![
        row(0, Some(0), 1.0, 0.0),
        row(0, Some(1), 3.0, 1.0),
        row(0, None, 9.0, 0.25),
        row(1, Some(0), -1.0, 0.0),
    ];
    let c = curves("a", &rows);
    assert_eq!(c.len(), 2);
    assert_eq!(c[0].mean_return, 2.0);
    assert_eq!(c[0].train_win_rate, Some(0.5));
    assert_eq!(c[0].eval_win_rate, Some(0.25));
    assert_eq!(c[1].eval_win_rate, None);
}
