use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rym(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rym"));
    cmd.args(args)
        .env_remove("RYM_MUSIC_URL")
        .env_remove("RYM_IMAGE_URL")
        .env_remove("RYM_EMBED_URL")
        .env_remove("RYM_REWRITER_URL");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixtures(dir: &Path) -> PathBuf {
    let out = rym(
        &[
            "fixtures",
            "--out",
            dir.to_str().unwrap(),
            "--sessions",
            "3",
            "--duration-s",
            "20",
            "--iterations",
            "10",
        ],
        &[],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    PathBuf::from(String::from_utf8_lossy(&out.stdout).trim())
}

#[test]
fn validate_prints_the_defaulted_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures(dir.path());
    let out = rym(&["validate", "--config", cfg.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("crossfade_s = 0.04"), "{text}");
    assert!(text.contains("out_dim = 7"), "{text}");
}

#[test]
fn bad_config_exits_2_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures(dir.path());
    let text = fs::read_to_string(&cfg).unwrap();
    fs::write(&cfg, format!("foo = 1\n{text}")).unwrap();
    let out = rym(&["ingest", "--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("foo"), "{}", stderr(&out));
}

#[test]
fn missing_dependency_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures(dir.path());
    let out = rym(&["generate", "--config", cfg.to_str().unwrap(), "--mock"], &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("ingest/sessions.json"), "{}", stderr(&out));
}

#[test]
fn locked_run_directory_exits_6() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures(dir.path());
    let run_dir = dir.path().join("runs/locked");
    fs::create_dir_all(&run_dir).unwrap();
    fs::write(run_dir.join(".lock"), "1\n").unwrap();
    let out = rym(&["ingest", "--config", cfg.to_str().unwrap(), "--run-id", "locked"], &[]);
    assert_eq!(out.status.code(), Some(6), "{}", stderr(&out));
}

#[test]
fn mock_run_all_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures(dir.path());
    let out = rym(&["run-all", "--config", cfg.to_str().unwrap(), "--mock"], &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = PathBuf::from(String::from_utf8_lossy(&out.stdout).trim());
    assert!(summary.ends_with("report/summary.md"));
    assert!(fs::read_to_string(summary).unwrap().contains("## Deliverables"));
    assert!(stderr(&out).contains("stage report: done"));
}

#[test]
fn environment_overrides_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures(dir.path());
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("mock = true", "mock = false\nmax_retries = 0\ntimeout_s = 2.0")
        .replace("use_rewriter = true", "use_rewriter = false");
    fs::write(&cfg, text).unwrap();
    let c = cfg.to_str().unwrap();
    for stage in ["ingest", "train", "decode", "timeline", "prompts"] {
        let out = rym(&[stage, "--config", c], &[]);
        assert!(out.status.success(), "{stage}: {}", stderr(&out));
    }
    let out = rym(&["generate", "--config", c], &[]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("RYM_MUSIC_URL"));

    // nothing listens on port 9; the environment endpoint is used and fails
    let env = [("RYM_MUSIC_URL", "http://127.0.0.1:9"), ("RYM_IMAGE_URL", "http://127.0.0.1:9")];
    let out = rym(&["generate", "--config", c], &env);
    assert_eq!(out.status.code(), Some(5), "{}", stderr(&out));
    assert!(stderr(&out).contains("127.0.0.1:9"), "{}", stderr(&out));
}
