//! Report envelope, output-directory lock, and CSV side tables. Envelope
//! bodies are `serde_json::Value`s with sorted keys, so two runs of the same
//! config differ only in the timestamp line.

use serde::Serialize;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use weylab::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
    Inconclusive,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Pass => 0,
            Outcome::Fail => 2,
            Outcome::Inconclusive => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Outcome::Pass => "pass",
            Outcome::Fail => "fail",
            Outcome::Inconclusive => "inconclusive",
        }
    }

    pub fn of(pass: bool) -> Outcome {
        if pass {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }
}

#[derive(Serialize)]
struct Envelope<'a> {
    version: &'a str,
    config_hash: &'a str,
    command: &'a str,
    timestamp: String,
    outcome: &'a str,
    body: &'a serde_json::Value,
}

/// Write `<command>.json` into the output directory and return its path.
pub fn write_envelope(
    out_dir: &Path,
    command: &str,
    config_hash: &str,
    outcome: Outcome,
    body: &serde_json::Value,
) -> Result<PathBuf> {
    let env = Envelope {
        version: env!("CARGO_PKG_VERSION"),
        config_hash,
        command,
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        outcome: outcome.label(),
        body,
    };
    let path = out_dir.join(format!("{command}.json"));
    let mut text = serde_json::to_string_pretty(&env)?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}

/// Exclusive marker for the output directory; removed on drop. A stale file
/// from a crashed run has to be deleted by hand, which the message says.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<DirLock> {
        let path = dir.join(".weylab.lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = write!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::config(format!(
                "output directory is locked by {} — another run is active, or remove the file if one crashed",
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Serialize)]
pub struct SigmaRow {
    pub truncation: usize,
    pub k: usize,
    pub sigma: f64,
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::Other, e))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    for r in rows {
        w.serialize(r).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Leading singular values per truncation in (truncation, k, sigma) rows.
pub fn sigma_rows(truncations: &[usize], leading: &[Vec<f64>]) -> Vec<SigmaRow> {
    let mut rows = Vec::new();
    for (t, sig) in truncations.iter().zip(leading) {
        for (k, &s) in sig.iter().enumerate() {
            rows.push(SigmaRow { truncation: *t, k, sigma: s });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released_on_drop() {
        let dir = tempfile::tempdir().unwrap();
        let lock = DirLock::acquire(dir.path()).unwrap();
        assert!(DirLock::acquire(dir.path()).is_err());
        drop(lock);
        let again = DirLock::acquire(dir.path()).unwrap();
        drop(again);
        assert!(!dir.path().join(".weylab.lock").exists());
    }

    #[test]
    fn envelope_lands_under_command_name() {
        let dir = tempfile::tempdir().unwrap();
        let body = serde_json::json!({"alpha": 1});
        let p = write_envelope(dir.path(), "probe", "deadbeef", Outcome::Pass, &body).unwrap();
        assert_eq!(p.file_name().unwrap(), "probe.json");
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(v["outcome"], "pass");
        assert_eq!(v["config_hash"], "deadbeef");
        assert_eq!(v["body"]["alpha"], 1);
    }

    #[test]
    fn csv_rows_tabulate_all_truncations() {
        let dir = tempfile::tempdir().unwrap();
        let rows = sigma_rows(&[4, 8], &[vec![2.0, 1.0], vec![2.5, 1.5, 0.5]]);
        assert_eq!(rows.len(), 5);
        let path = dir.path().join("sigmas.csv");
        write_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("truncation,k,sigma\n"));
        assert_eq!(text.lines().count(), 6);
    }
}
