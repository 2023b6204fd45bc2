//! Experiment harness: declarative specs, seeded runs, run manifests,
//! comparisons and plot data.
//!
//! A run directory holds `curve.csv`, `report.json`, any extra artifacts and
//! `manifest.json`, which lists every other file with its SHA-256.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nmf::write_matrix_csv;
use crate::optimizer::{LearningCurve, RunStatus, Sense};

pub mod compare;
pub mod figure;
pub mod run;
pub mod selftest;
pub mod spec;

pub use compare::{compare_runs, Comparison, ComparisonRow};
pub use figure::{emit_figure_data, FigureKind};
pub use run::{execute, Diagnostics, RunRecord, RunReport};
pub use selftest::{selftest, Check};
pub use spec::{Algorithm, DataSpec, ExperimentSpec, Preprocessing};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "BOUNDOPT_OUT";

/// Output root used when neither `--out` nor [`OUT_ENV`] is given.
pub const DEFAULT_OUT_ROOT: &str = "runs";

pub const CURVE_FILE: &str = "curve.csv";
pub const REPORT_FILE: &str = "report.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunManifest {
    pub spec: ExperimentSpec,
    pub version: String,
    pub wall_clock_seconds: f64,
    pub status: RunStatus,
    pub iterations: usize,
    pub final_objective: f64,
    pub predicted_rate: Option<f64>,
    pub observed_rate: Option<f64>,
    pub files: Vec<FileEntry>,
    /// Directory the manifest was loaded from or written to.
    #[serde(skip)]
    pub dir: PathBuf,
}

impl RunManifest {
    /// Loads `manifest.json` from a run directory (or the file itself).
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&file).map_err(|e| Error::Parse {
            path: file.clone(),
            message: e.to_string(),
        })?;
        let mut manifest: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: file.clone(),
            message: e.to_string(),
        })?;
        manifest.dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    /// Recomputes every checksum; returns the names of files that differ.
    pub fn verify(&self) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for entry in &self.files {
            let bytes = std::fs::read(self.dir.join(&entry.name))?;
            if sha256_hex(&bytes) != entry.sha256 || bytes.len() as u64 != entry.bytes {
                bad.push(entry.name.clone());
            }
        }
        Ok(bad)
    }

    pub fn sense(&self) -> Sense {
        sense_of(self.spec.algorithm)
    }

    pub fn curve(&self) -> Result<LearningCurve> {
        let path = self.dir.join(CURVE_FILE);
        let text = std::fs::read_to_string(&path)?;
        LearningCurve::from_csv(&text, self.sense()).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse { path, message },
            other => other,
        })
    }

    pub fn report(&self) -> Result<RunReport> {
        let path = self.dir.join(REPORT_FILE);
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path,
            message: e.to_string(),
        })
    }
}

pub fn sense_of(algorithm: Algorithm) -> Sense {
    match algorithm {
        Algorithm::Nmf | Algorithm::Cccp => Sense::Minimize,
        _ => Sense::Maximize,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Output root: `BOUNDOPT_OUT` if set, else `runs`.
pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT), PathBuf::from)
}

/// Run directory for `spec`: the explicit directory if given, else the
/// spec's `outputs` under `root`, else a name derived from the spec.
pub fn resolve_run_dir(spec: &ExperimentSpec, explicit: Option<&Path>, root: &Path) -> PathBuf {
    if let Some(dir) = explicit {
        return dir.to_path_buf();
    }
    match &spec.outputs {
        Some(p) if p.is_absolute() => p.clone(),
        Some(p) => root.join(p),
        None => {
            let label: String = spec
                .label()
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
                .collect();
            let slug: Vec<&str> = label.split('-').filter(|s| !s.is_empty()).collect();
            root.join(format!("{}-seed{}", slug.join("-"), spec.data_spec.seed))
        }
    }
}

/// Runs `spec` and writes its run directory at `dir`.
///
/// Files are assembled in a sibling staging directory which then replaces
/// `dir`, so readers never see a half-written run. An existing `dir` is only
/// replaced if it is itself a run directory.
pub fn run_experiment(spec: &ExperimentSpec, dir: &Path) -> Result<RunManifest> {
    let started = Instant::now();
    let record = execute(spec)?;
    write_run(&record, dir, started.elapsed().as_secs_f64())
}

pub fn write_run(record: &RunRecord, dir: &Path, wall_clock_seconds: f64) -> Result<RunManifest> {
    if dir.exists() && !(dir.is_dir() && dir.join(MANIFEST_FILE).is_file()) {
        return Err(Error::config(
            "outputs",
            format!("{} exists and is not a run directory", dir.display()),
        ));
    }
    let parent = dir
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent)?;
    let leaf = dir
        .file_name()
        .map_or_else(|| "run".into(), |n| n.to_string_lossy().into_owned());
    let staging = parent.join(format!(".{leaf}.partial-{}", std::process::id()));
    if staging.exists() {
        std::fs::remove_dir_all(&staging)?;
    }
    std::fs::create_dir(&staging)?;

    let result = (|| -> Result<RunManifest> {
        let mut names = vec![CURVE_FILE.to_string(), REPORT_FILE.to_string()];
        std::fs::write(staging.join(CURVE_FILE), record.outcome.curve.to_csv())?;
        let mut report = serde_json::to_string_pretty(&record.report)?;
        report.push('\n');
        std::fs::write(staging.join(REPORT_FILE), report)?;
        for artifact in &record.artifacts {
            write_matrix_csv(&staging.join(&artifact.name), &artifact.matrix)?;
            names.push(artifact.name.clone());
        }
        let mut files = Vec::with_capacity(names.len());
        for name in names {
            let bytes = std::fs::read(staging.join(&name))?;
            files.push(FileEntry {
                name,
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            });
        }
        let diag = record.report.diagnostics.as_ref();
        let manifest = RunManifest {
            spec: record.spec.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_seconds,
            status: record.report.status,
            iterations: record.report.iterations,
            final_objective: record.report.final_objective,
            predicted_rate: diag.and_then(Diagnostics::predicted_rate),
            observed_rate: diag.and_then(Diagnostics::observed_rate),
            files,
            dir: dir.to_path_buf(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(staging.join(MANIFEST_FILE), text)?;
        Ok(manifest)
    })();

    match result {
        Ok(manifest) => {
            if dir.exists() {
                std::fs::remove_dir_all(dir)?;
            }
            std::fs::rename(&staging, dir)?;
            Ok(manifest)
        }
        Err(e) => {
            let _ = std::fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cccp(name: &str) -> ExperimentSpec {
        ExperimentSpec::new(Algorithm::Cccp, DataSpec::default())
            .with_preprocessing(&[Preprocessing::Decomposition(name.into())])
    }

    #[test]
    fn run_directory_round_trips() {
        let root = tempfile::tempdir().unwrap();
        let dir = root.path().join("dec2");
        let written = run_experiment(&cccp("dec2"), &dir).unwrap();
        let loaded = RunManifest::load(&dir).unwrap();
        assert_eq!(loaded.spec, written.spec);
        assert_eq!(loaded.iterations, written.iterations);
        assert!(loaded.verify().unwrap().is_empty());
        let curve = loaded.curve().unwrap();
        assert_eq!(curve.len(), loaded.iterations + 1);
        assert_eq!(*curve.display_objectives().last().unwrap(), loaded.final_objective);
        assert_eq!(loaded.report().unwrap().iterations, loaded.iterations);

        std::fs::write(dir.join(CURVE_FILE), "tampered").unwrap();
        assert_eq!(loaded.verify().unwrap(), vec![CURVE_FILE.to_string()]);
    }

    #[test]
    fn reruns_are_byte_identical() {
        let root = tempfile::tempdir().unwrap();
        let a = run_experiment(&cccp("dec1"), &root.path().join("a")).unwrap();
        let b = run_experiment(&cccp("dec1"), &root.path().join("b")).unwrap();
        assert_eq!(a.files, b.files);
        // rerunning into the same directory replaces it
        run_experiment(&cccp("dec1"), &root.path().join("a")).unwrap();
        assert!(RunManifest::load(&root.path().join("a"))
            .unwrap()
            .verify()
            .unwrap()
            .is_empty());
    }

    #[test]
    fn refuses_to_replace_foreign_directories() {
        let root = tempfile::tempdir().unwrap();
        std::fs::write(root.path().join("keep.txt"), "x").unwrap();
        let err = run_experiment(&cccp("dec1"), root.path()).unwrap_err();
        assert!(err.is_config());
        assert!(root.path().join("keep.txt").exists());
    }

    #[test]
    fn run_dirs_resolve_against_root() {
        let spec = cccp("dec3");
        let root = Path::new("/tmp/r");
        assert_eq!(
            resolve_run_dir(&spec, None, root),
            root.join("cccp-decomposition-dec3-seed0")
        );
        let mut named = spec.clone();
        named.outputs = Some("x/y".into());
        assert_eq!(resolve_run_dir(&named, None, root), root.join("x/y"));
        assert_eq!(resolve_run_dir(&named, Some(Path::new("z")), root), PathBuf::from("z"));
    }
}
