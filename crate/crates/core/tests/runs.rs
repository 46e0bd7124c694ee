use std::path::Path;

use msmarl::harness::{self, Checkpoint, Config};

fn config(dir: &Path, name: &str, epochs: usize, extra: &str) -> Config {
    let text = format!(
        "[env]\npreset = \"combat_3v3\"\nhorizon = 15\n\n[model]\nkind = \"msmarl_gcm\"\nhidden = 10\n\n\
         [trainer]\nepochs = {epochs}\nbatches_per_epoch = 2\nbatch_size = 3\nlearning_rate = 0.05\n\
         eval_episodes = 6\nbaseline = true\nseed = 11\n{extra}\n\n\
         [harness]\noutput_dir = {:?}\nrun_name = {name:?}\n",
        dir.display().to_string()
    );
    Config::parse(&text).unwrap()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn identical_configs_give_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let a = harness::train(&config(tmp.path(), "a", 2, ""), false).unwrap();
    let b = harness::train(&config(tmp.path(), "b", 2, ""), false).unwrap();
    let ma = read(&tmp.path().join("a").join(harness::METRICS));
    let mb = read(&tmp.path().join("b").join(harness::METRICS));
    assert_eq!(ma, mb);
    assert_eq!(a.eval, b.eval);
    let text = String::from_utf8(ma).unwrap();
    assert!(text.starts_with(harness::HEADER));
    assert_eq!(text.lines().count(), 1 + 2 * (2 + 1));
}

#[test]
fn different_seed_changes_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let base = config(tmp.path(), "a", 1, "");
    let mut other = base.clone();
    other.trainer.seed = 12;
    other.harness.run_name = Some("b".into());
    harness::train(&base, false).unwrap();
    harness::train(&other, false).unwrap();
    assert_ne!(
        read(&tmp.path().join("a").join(harness::METRICS)),
        read(&tmp.path().join("b").join(harness::METRICS))
    );
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    harness::train(&config(tmp.path(), "full", 3, ""), false).unwrap();

    harness::train(&config(tmp.path(), "split", 1, ""), false).unwrap();
    let resumed = harness::train(&config(tmp.path(), "split", 3, ""), true).unwrap();
    assert_eq!(resumed.epoch, 3);

    let full = tmp.path().join("full");
    let split = tmp.path().join("split");
    for epoch in 0..=3 {
        let a = Checkpoint::load(&harness::checkpoint_path(&full, epoch)).unwrap();
        let b = Checkpoint::load(&harness::checkpoint_path(&split, epoch)).unwrap();
        assert_eq!(a.tensors, b.tensors, "epoch {epoch}");
    }
    assert_eq!(read(&full.join(harness::METRICS)), read(&split.join(harness::METRICS)));
}

#[test]
fn resume_discards_rows_of_unfinished_epochs() {
    let tmp = tempfile::tempdir().unwrap();
    harness::train(&config(tmp.path(), "full", 2, ""), false).unwrap();
    harness::train(&config(tmp.path(), "cut", 2, ""), false).unwrap();
    let cut = tmp.path().join("cut");
    std::fs::remove_file(harness::checkpoint_path(&cut, 2)).unwrap();
    harness::train(&config(tmp.path(), "cut", 2, ""), true).unwrap();
    assert_eq!(
        read(&tmp.path().join("full").join(harness::METRICS)),
        read(&cut.join(harness::METRICS))
    );
}

#[test]
fn checkpoint_reproduces_recorded_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    let summary = harness::train(&config(tmp.path(), "r", 2, ""), false).unwrap();
    let again = harness::eval_checkpoint(&summary.checkpoint, 6, None).unwrap();
    assert_eq!(again, summary.eval);
    let recorded: harness::RunSummary = serde_json::from_slice(&read(
        &tmp.path().join("r").join(harness::EVAL_SUMMARY),
    ))
    .unwrap();
    assert_eq!(recorded, summary);

    let bytes = read(&summary.checkpoint);
    let reencoded = Checkpoint::decode(&bytes).unwrap().encode();
    assert_eq!(reencoded, bytes);
    let rows = harness::read_metrics(&tmp.path().join("r").join(harness::METRICS)).unwrap();
    let last_eval = rows.iter().rev().find(|r| r.is_eval()).unwrap();
    assert_eq!(last_eval.win_rate, Some(summary.eval.win_rate));
}

#[test]
fn run_directory_is_self_describing() {
    let tmp = tempfile::tempdir().unwrap();
    let c = config(tmp.path(), "d", 1, "");
    harness::train(&c, false).unwrap();
    let dir = tmp.path().join("d");
    let echoed = std::fs::read_to_string(dir.join(harness::RESOLVED_CONFIG)).unwrap();
    assert_eq!(Config::parse(&echoed).unwrap(), c);
    let ck = Checkpoint::load(&harness::checkpoint_path(&dir, 1)).unwrap();
    assert_eq!(ck.config_text, echoed);
    assert_eq!(ck.config_hash, c.hash().unwrap());
    assert_eq!(ck.epoch, 1);
}

#[test]
fn rollout_dump_replays() {
    let tmp = tempfile::tempdir().unwrap();
    for preset in ["combat_3v3", "arena_m5v6", "traffic_hard"] {
        let mut c = config(tmp.path(), preset, 1, "");
        c.env.preset = preset.into();
        c.trainer.batch_size = Some(1);
        c.trainer.batches_per_epoch = 1;
        c.trainer.eval_episodes = 1;
        let s = harness::train(&c, false).unwrap();
        for sample in [false, true] {
            let dump = harness::dump_rollout(&s.checkpoint, Some(5), sample).unwrap();
            let path = tmp.path().join(format!("{preset}-{sample}.json"));
            harness::write_rollout_dump(&dump, &path).unwrap();
            let back = harness::read_rollout_dump(&path).unwrap();
            assert_eq!(back, dump);
            harness::replay_dump(&back).unwrap();
            let mut broken = back.clone();
            if let Some(step) = broken.trajectory.steps.iter_mut().find(|s| s.rewards.iter().any(|&r| r != 0.0)) {
                step.rewards[0] += 0.5;
                assert!(harness::replay_dump(&broken).is_err());
            }
        }
    }
}
