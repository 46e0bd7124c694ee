use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use msmarl::harness::{self, RunSummary};
use msmarl::trainer::EvalSummary;

fn msmarl(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msmarl"))
        .args(args)
        .env("MSMARL_OUTPUT_DIR", out_dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_config(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let path = dir.join(format!("{name}.toml"));
    let text = format!(
        "[env]\npreset = \"combat_3v3\"\nhorizon = 12\n\n[model]\nhidden = 8\n\n\
         [trainer]\nepochs = 1\nbatches_per_epoch = 1\nbatch_size = 1\neval_episodes = 5\n{extra}\n"
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn usage_errors_exit_nonzero_with_help() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [&[][..], &["bogus"][..], &["eval"][..], &["train", "a", "--frobnicate"][..]] {
        let out = msmarl(args, tmp.path());
        assert!(!out.status.success(), "{args:?}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains("Usage"), "{args:?}: {err}");
    }
}

#[test]
fn invalid_config_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad", "");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("batch_size = 1", "batch_size = 0");
    std::fs::write(&cfg, text).unwrap();
    let out = msmarl(&["train", cfg.to_str().unwrap()], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch_size"));

    std::fs::write(&cfg, "[trainer]\nlearning_rat = 0.1\n").unwrap();
    let out = msmarl(&["train", cfg.to_str().unwrap()], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));
}

#[test]
fn train_eval_rollout_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "smoke", "");
    let summary: RunSummary = serde_json::from_str(&ok(&msmarl(&["train", cfg.to_str().unwrap()], tmp.path()))).unwrap();
    let run = tmp.path().join("smoke");
    for f in ["config.resolved.toml", "metrics.csv", "eval_summary.json", "checkpoints/epoch_0000.ckpt", "checkpoints/epoch_0001.ckpt"] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert_eq!(summary.epoch, 1);

    let ckpt = summary.checkpoint.to_str().unwrap().to_string();
    let eval: EvalSummary = serde_json::from_str(&ok(&msmarl(&["eval", &ckpt, "--episodes", "5"], tmp.path()))).unwrap();
    assert_eq!(eval, summary.eval);

    let dump = tmp.path().join("trace.json");
    let out = ok(&msmarl(&["rollout", &ckpt, "--dump", dump.to_str().unwrap(), "--sample"], tmp.path()));
    assert!(out.contains("steps"));
    let trace = harness::read_rollout_dump(&dump).unwrap();
    assert!(!trace.greedy);
    harness::replay_dump(&trace).unwrap();
    assert!(trace.steps.iter().any(|s| s.decomposition.iter().any(Option::is_some)));

    let mut tampered = trace.clone();
    if let Some(s) = tampered.steps.first_mut() {
        s.positions[0] = Some([99.0, 99.0]);
        assert!(harness::replay_dump(&tampered).is_err());
    }

    let again = msmarl(&["train", cfg.to_str().unwrap()], tmp.path());
    assert!(!again.status.success(), "re-training into a finished run must ask for --resume");
    ok(&msmarl(&["train", cfg.to_str().unwrap(), "--resume"], tmp.path()));
}

#[test]
fn gradcheck_reports_success() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "gc", "return_mode = \"to_go\"");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("horizon = 12", "horizon = 3");
    std::fs::write(&cfg, text).unwrap();
    let out = ok(&msmarl(&["gradcheck", cfg.to_str().unwrap(), "--params", "20"], tmp.path()));
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["checked"], 20);
    assert!(report["max_rel_error"].as_f64().unwrap() < 1e-4);
}

#[test]
fn export_curves_tags_rows_by_run() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["alpha", "beta"] {
        let cfg = write_config(tmp.path(), name, "epochs = 2");
        let text = std::fs::read_to_string(&cfg).unwrap().replace("epochs = 1\n", "");
        std::fs::write(&cfg, text).unwrap();
        ok(&msmarl(&["train", cfg.to_str().unwrap()], tmp.path()));
    }
    let a = tmp.path().join("alpha/metrics.csv");
    let b = tmp.path().join("beta/metrics.csv");
    let out_path = tmp.path().join("curves.csv");
    ok(&msmarl(
        &["export-curves", a.to_str().unwrap(), b.to_str().unwrap(), "--out", out_path.to_str().unwrap()],
        tmp.path(),
    ));
    let text = std::fs::read_to_string(&out_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("run,epoch,"));
    let keys: Vec<(String, String)> = lines[1..]
        .iter()
        .map(|l| {
            let mut f = l.split(',');
            (f.next().unwrap().to_string(), f.next().unwrap().to_string())
        })
        .collect();
    let expected: Vec<(String, String)> = ["alpha", "beta"]
        .iter()
        .flat_map(|r| (0..2).map(move |e| (r.to_string(), e.to_string())))
        .collect();
    assert_eq!(keys, expected);

    let stdout = ok(&msmarl(&["export-curves", a.to_str().unwrap()], tmp.path()));
    assert_eq!(stdout.lines().count(), 3);
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            harness::Config::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 4);
}
