use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use molmm_cli::{run, CliError, RunConfig, RunDir};

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn molmm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_molmm"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn tiny_config(out: &Path) -> String {
    let ws = workspace();
    format!(
        r#"
out = "{}"
[paths]
corpus = "{}"
captions = "{}"
[data]
max_molecules = 20
logp_preamble = false
[bpe]
vocab_size = 300
"#,
        out.display(),
        ws.join("data/corpus_5k.smi").display(),
        ws.join("data/captions.tsv").display()
    )
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn train_lm_before_train_vq_is_a_missing_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = write_config(tmp.path(), &tiny_config(&out));
    let cfg = cfg.to_str().unwrap();
    assert!(molmm(&["curate", "--config", cfg], tmp.path()).status.success());
    let o = molmm(&["train-lm", "--config", cfg], tmp.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train-vq"));
    // the lock is released after a failed command
    assert!(!out.join(".lock").exists());
}

#[test]
fn invalid_configs_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let base = tiny_config(&out);
    let cases = [
        format!("{base}\nbogus_key = 1\n"),
        format!("{base}\n[lm]\ndim = 64\nheads = 3\n"),
        format!("{base}\n[vq]\nchannels = []\n"),
        base.replace("corpus_5k.smi", "missing.smi"),
        "seed = \"zero\"".to_string(),
    ];
    for text in &cases {
        let cfg = write_config(tmp.path(), text);
        let o = molmm(&["curate", "--config", cfg.to_str().unwrap()], tmp.path());
        assert_eq!(o.status.code(), Some(2), "{text}\n{}", String::from_utf8_lossy(&o.stderr));
    }
    // no output directory anywhere
    let o = molmm(&["eval"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = molmm(&["curate", "--config", tmp.path().join("absent.toml").to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn curate_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = write_config(tmp.path(), &tiny_config(&out));
    let cfg = cfg.to_str().unwrap();
    assert!(molmm(&["curate", "--config", cfg, "--seed", "7"], tmp.path()).status.success());
    let first = tree(&out);
    assert!(first.iter().any(|(p, _)| p.ends_with("train.jsonl")));
    assert!(molmm(&["curate", "--config", cfg, "--seed", "7"], tmp.path()).status.success());
    assert_eq!(first, tree(&out));
    // another seed gives another split
    assert!(molmm(&["curate", "--config", cfg, "--seed", "8"], tmp.path()).status.success());
    assert_ne!(first, tree(&out));
}

#[test]
fn task_flag_restricts_curation() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = write_config(tmp.path(), &tiny_config(&out));
    let o = molmm(&["curate", "--config", cfg.to_str().unwrap(), "--task", "img2smiles"], tmp.path());
    assert!(o.status.success());
    let train = fs::read_to_string(out.join("data/train.jsonl")).unwrap();
    assert!(train.lines().count() > 0);
    assert!(train.lines().all(|l| l.contains(r#""task":"img2smiles""#)));
    let resolved = fs::read_to_string(out.join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("task = \"img2smiles\""));
    let o = molmm(&["curate", "--config", cfg.to_str().unwrap(), "--task", "nonsense"], tmp.path());
    assert!(!o.status.success());
}

#[test]
fn locked_run_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = RunConfig::from_toml(&tiny_config(&out)).unwrap().resolve(None, None, None);
    let dir = RunDir::new(&out);
    let guard = dir.lock().unwrap();
    assert!(matches!(dir.lock(), Err(CliError::Locked(_))));
    let err = run(molmm_cli::Command::Curate, &cfg).unwrap_err();
    assert!(matches!(err, CliError::Locked(_)));
    assert_eq!(err.exit_code(), 1);
    drop(guard);
    assert!(!dir.lock_path().exists());
    run(molmm_cli::Command::Curate, &cfg).unwrap();
    assert!(!dir.lock_path().exists());
}

#[test]
fn eval_on_golden_transcripts_reproduces_golden_report() {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden");
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    for rel in ["data/train.jsonl", "generate/eval_records.jsonl"] {
        fs::create_dir_all(out.join(rel).parent().unwrap()).unwrap();
        fs::copy(fixture.join(rel), out.join(rel)).unwrap();
    }
    let o = molmm(&["eval", "--out", out.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let got = fs::read_to_string(out.join("eval/metrics.jsonl")).unwrap();
    let want = fs::read_to_string(fixture.join("metrics.jsonl")).unwrap();
    assert_eq!(got, want);
    let o = molmm(&["report", "--out", out.to_str().unwrap()], tmp.path());
    assert!(o.status.success());
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(String::from_utf8_lossy(&o.stdout), report);
    for task in ["img2caption", "img2property", "img2smiles", "property2img", "img2img"] {
        assert!(report.contains(task), "{task} missing from report");
    }
}

#[test]
fn report_before_eval_is_a_missing_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let o = molmm(&["report", "--out", tmp.path().join("run").to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(3));
    let o = molmm(&["generate", "--out", tmp.path().join("run").to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn shipped_configs_validate() {
    let ws = workspace();
    for name in ["smoke", "desk"] {
        let cfg = RunConfig::load(&ws.join(format!("configs/{name}.toml"))).unwrap().resolve(None, None, None);
        cfg.validate().unwrap();
        // the config round-trips through its own serialization
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
