//! Staged runs: configuration, run directories, manifests and the stage
//! graph tying every module together.
//!
//! A run lives in `<output_dir>/<run_id>/`. Each stage writes its files into
//! a hidden `.<stage>.partial/` directory that is renamed to `<stage>/` only
//! after every file is written, so an interrupted stage never leaves a
//! readable partial output. The manifest is rewritten atomically after each
//! stage.

pub mod config;
pub mod fixtures;
pub mod manifest;
mod stages;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

pub use config::{validate_config, LoadedConfig, PipelineConfig};
pub use manifest::{Deliverables, OutputRef, RunManifest, StageRecord};
pub use stages::{EvaluationReport, EVALUATION_REPORT_SCHEMA_VERSION};

use crate::error::{Error, Result};
use crate::util::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Train,
    Decode,
    Timeline,
    Prompts,
    Generate,
    Assemble,
    Evaluate,
    Report,
}

impl Stage {
    /// Pipeline order, which is also a topological order of the graph.
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Train,
        Stage::Decode,
        Stage::Timeline,
        Stage::Prompts,
        Stage::Generate,
        Stage::Assemble,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Train => "train",
            Stage::Decode => "decode",
            Stage::Timeline => "timeline",
            Stage::Prompts => "prompts",
            Stage::Generate => "generate",
            Stage::Assemble => "assemble",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    pub fn dependencies(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            Ingest => &[],
            Train => &[Ingest],
            Decode => &[Ingest, Train],
            Timeline => &[Ingest, Decode],
            Prompts => &[Ingest, Timeline],
            Generate => &[Ingest, Timeline, Prompts],
            Assemble => &[Timeline, Generate],
            Evaluate => &[Ingest, Decode, Timeline, Prompts, Generate, Assemble],
            Report => &[Ingest, Train, Decode, Timeline, Prompts, Generate, Assemble, Evaluate],
        }
    }

    /// The file whose presence marks the stage as done, relative to the run
    /// directory.
    pub fn primary_artifact(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest/sessions.json",
            Stage::Train => "train/model.ckpt",
            Stage::Decode => "decode/traces.json",
            Stage::Timeline => "timeline/timeline.json",
            Stage::Prompts => "prompts/prompts.json",
            Stage::Generate => "generate/assets.json",
            Stage::Assemble => "assemble/soundtrack.wav",
            Stage::Evaluate => "evaluate/eval_report.json",
            Stage::Report => "report/summary.md",
        }
    }

    /// Stages that (transitively) consume this one's outputs.
    pub fn dependents(self) -> Vec<Stage> {
        let mut out: Vec<Stage> = Vec::new();
        for s in Stage::ALL {
            if s.dependencies().iter().any(|d| *d == self || out.contains(d)) {
                out.push(s);
            }
        }
        out
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown stage {s:?}")))
    }
}

/// Makes a stage fail after writing this many files, leaving its partial
/// directory behind as a crash would.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultPlan {
    pub stage: Stage,
    pub after_files: usize,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub run_id: Option<String>,
    /// Use mock clients whatever the config says.
    pub force_mock: bool,
    pub fault: Option<FaultPlan>,
}

/// Default run id: the first 12 hex digits of the config's sha256.
pub fn default_run_id(config: &LoadedConfig) -> String {
    config.sha256[..12].to_string()
}

fn check_run_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "run id {id:?} must be non-empty ASCII letters, digits, '-', '_' or '.'"
        )))
    }
}

struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(dir.to_path_buf())),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Collects one stage's files in its partial directory.
pub(crate) struct StageWriter {
    stage: Stage,
    partial: PathBuf,
    files: Vec<String>,
    fail_after: Option<usize>,
}

impl StageWriter {
    pub(crate) fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        if let Some(n) = self.fail_after {
            if self.files.len() >= n {
                return Err(Error::invalid(format!(
                    "injected fault in stage {} after {n} files",
                    self.stage
                )));
            }
        }
        let path = self.partial.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub(crate) fn json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("stage output serializes");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub(crate) fn text(&mut self, name: &str, text: &str) -> Result<()> {
        self.write(name, text.as_bytes())
    }
}

/// An open run directory, locked for the lifetime of the value.
pub struct Run {
    config: LoadedConfig,
    dir: PathBuf,
    manifest: RunManifest,
    options: RunOptions,
    _lock: RunLock,
}

impl Run {
    /// Creates or reopens `<output_dir>/<run_id>/`. Reopening requires the
    /// same config text the run was started with.
    pub fn open(config: LoadedConfig, options: RunOptions) -> Result<Run> {
        let run_id = options.run_id.clone().unwrap_or_else(|| default_run_id(&config));
        check_run_id(&run_id)?;
        let dir = config.output_dir().join(&run_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let lock = RunLock::acquire(&dir)?;
        let manifest_path = dir.join("manifest.json");
        let manifest = if manifest_path.exists() {
            let m = RunManifest::load(&manifest_path)?;
            if m.config_snapshot != config.text {
                return Err(Error::Config(format!(
                    "run {run_id} was started with a different config; use another --run-id"
                )));
            }
            m
        } else {
            let snapshot = dir.join("config.toml");
            crate::util::atomic_write(&snapshot, config.text.as_bytes())?;
            RunManifest::new(&run_id, &config.text, &config.sha256)
        };
        let mut run = Run {
            config,
            dir,
            manifest,
            options,
            _lock: lock,
        };
        run.manifest.inputs = run.input_digests()?;
        run.save_manifest()?;
        Ok(run)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn config(&self) -> &LoadedConfig {
        &self.config
    }

    pub fn mock(&self) -> bool {
        self.options.force_mock || self.config.config.clients.mock
    }

    fn input_digests(&self) -> Result<std::collections::BTreeMap<String, String>> {
        self.config
            .input_files()
            .into_iter()
            .map(|f| {
                let full = self.config.resolve(&f);
                let bytes = fs::read(&full).map_err(|e| Error::io(&full, e))?;
                Ok((f.to_string_lossy().into_owned(), sha256_hex(&bytes)))
            })
            .collect()
    }

    fn save_manifest(&self) -> Result<()> {
        self.manifest.save(&self.dir.join("manifest.json"))
    }

    pub(crate) fn path(&self, relative: &str) -> PathBuf {
        self.dir.join(relative)
    }

    /// Errors with the first missing dependency artifact.
    pub fn check_dependencies(&self, stage: Stage) -> Result<()> {
        for dep in stage.dependencies() {
            let artifact = dep.primary_artifact();
            if self.manifest.stage(dep.name()).is_none() || !self.path(artifact).is_file() {
                return Err(Error::MissingDependency {
                    stage: dep.name().to_string(),
                    artifact: artifact.to_string(),
                });
            }
        }
        Ok(())
    }

    /// Runs one stage. Outputs of stages downstream of it are removed, since
    /// they no longer match their inputs.
    pub fn run_stage(&mut self, stage: Stage) -> Result<&StageRecord> {
        self.check_dependencies(stage)?;
        let wrap = |e: Error| Error::Stage {
            stage: stage.name().to_string(),
            source: Box::new(e),
        };
        log::info!("stage {stage}: start");
        let started_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let clock = Instant::now();
        let partial = self.dir.join(format!(".{stage}.partial"));
        if partial.exists() {
            fs::remove_dir_all(&partial).map_err(|e| wrap(Error::io(&partial, e)))?;
        }
        fs::create_dir_all(&partial).map_err(|e| wrap(Error::io(&partial, e)))?;
        let mut writer = StageWriter {
            stage,
            partial: partial.clone(),
            files: Vec::new(),
            fail_after: self
                .options
                .fault
                .filter(|f| f.stage == stage)
                .map(|f| f.after_files),
        };
        let result = stages::execute(self, stage, &mut writer);
        if let Err(e) = result {
            if self.options.fault.is_none_or(|f| f.stage != stage) {
                let _ = fs::remove_dir_all(&partial);
            }
            return Err(wrap(e));
        }

        for dependent in stage.dependents() {
            let d = self.dir.join(dependent.name());
            if d.exists() {
                fs::remove_dir_all(&d).map_err(|e| wrap(Error::io(&d, e)))?;
            }
            self.manifest.forget(dependent.name());
        }
        let final_dir = self.dir.join(stage.name());
        if final_dir.exists() {
            fs::remove_dir_all(&final_dir).map_err(|e| wrap(Error::io(&final_dir, e)))?;
        }
        fs::rename(&partial, &final_dir).map_err(|e| wrap(Error::io(&final_dir, e)))?;

        let mut outputs = Vec::with_capacity(writer.files.len());
        for name in &writer.files {
            let rel = format!("{stage}/{name}");
            let full = self.path(&rel);
            let bytes = fs::read(&full).map_err(|e| wrap(Error::io(&full, e)))?;
            outputs.push(OutputRef {
                path: rel,
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
            });
        }
        self.manifest.record(StageRecord {
            stage: stage.name().to_string(),
            started_at,
            wall_time_s: clock.elapsed().as_secs_f64(),
            mock: self.mock(),
            outputs,
        });
        if stage == Stage::Report {
            self.manifest.deliverables = Deliverables {
                soundtrack_wav: Some(Stage::Assemble.primary_artifact().to_string()),
                video_manifest: Some("assemble/video_manifest.json".to_string()),
                eval_report: Some(Stage::Evaluate.primary_artifact().to_string()),
            };
        } else if stage.dependents().contains(&Stage::Report) {
            self.manifest.deliverables = Deliverables::default();
        }
        self.save_manifest().map_err(wrap)?;
        log::info!("stage {stage}: done in {:.2} s", clock.elapsed().as_secs_f64());
        Ok(self.manifest.stage(stage.name()).expect("just recorded"))
    }

    pub fn run_all(&mut self) -> Result<()> {
        for stage in Stage::ALL {
            self.run_stage(stage)?;
        }
        Ok(())
    }
}

/// Loads the config, opens the run and runs one stage.
pub fn run_stage(config_path: &Path, stage: Stage, options: RunOptions) -> Result<RunManifest> {
    let config = validate_config(config_path)?;
    let mut run = Run::open(config, options)?;
    run.run_stage(stage)?;
    Ok(run.manifest.clone())
}

/// Loads the config, opens the run and runs every stage in order.
pub fn run_all(config_path: &Path, options: RunOptions) -> Result<RunManifest> {
    let config = validate_config(config_path)?;
    let mut run = Run::open(config, options)?;
    run.run_all()?;
    Ok(run.manifest.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_is_topologically_ordered() {
        for (i, s) in Stage::ALL.iter().enumerate() {
            for d in s.dependencies() {
                assert!(Stage::ALL[..i].contains(d), "{s} depends on later {d}");
            }
        }
        let mut all: Vec<Stage> = Stage::ALL[..8].to_vec();
        all.sort();
        let mut report: Vec<Stage> = Stage::Report.dependencies().to_vec();
        report.sort();
        assert_eq!(all, report);
    }

    #[test]
    fn dependents_are_transitive() {
        assert_eq!(Stage::Report.dependents(), vec![]);
        assert_eq!(Stage::Ingest.dependents(), Stage::ALL[1..].to_vec());
        assert_eq!(
            Stage::Generate.dependents(),
            vec![Stage::Assemble, Stage::Evaluate, Stage::Report]
        );
    }

    #[test]
    fn names_parse_back() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("render".parse::<Stage>().is_err());
    }

    #[test]
    fn run_ids_are_checked() {
        assert!(check_run_id("abc-1.2_x").is_ok());
        for bad in ["", ".hidden", "a/b", "a b"] {
            assert!(check_run_id(bad).is_err(), "{bad}");
        }
    }
}
