//! CSV formatting and run directories.

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

/// Environment variable naming the default output root.
pub const OUTDIR_ENV: &str = "SASOLVER_OUTDIR";
pub const DEFAULT_OUTDIR: &str = "runs";

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        // keeps -0 and 0 apart without the exponent noise
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    format!("{x:.16e}")
}

#[derive(Clone, Debug)]
pub struct Csv {
    columns: usize,
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self { columns: header.len(), text: format!("{}\n", header.join(",")) }
    }

    /// `cells` must match the header width.
    pub fn row(&mut self, cells: &[String]) {
        assert_eq!(cells.len(), self.columns, "csv row width");
        let _ = writeln!(self.text, "{}", cells.join(","));
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.text.into_bytes()
    }
}

/// A file produced by a command, written once the command has finished.
#[derive(Clone, Debug)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn csv(name: &str, csv: Csv) -> Self {
        Self { name: name.into(), bytes: csv.into_bytes() }
    }

    pub fn json<T: serde::Serialize>(name: &str, value: &T) -> Self {
        let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
        bytes.push(b'\n');
        Self { name: name.into(), bytes }
    }
}

/// Resolution order: explicit value, then the environment, then `runs`.
pub fn output_root(explicit: Option<&str>) -> PathBuf {
    explicit
        .map(PathBuf::from)
        .or_else(|| std::env::var_os(OUTDIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTDIR))
}

/// Creates `<root>/<command>-<timestamp>`, adding `-2`, `-3`, … on collision.
pub fn create_run_dir(root: &Path, command: &str) -> io::Result<PathBuf> {
    std::fs::create_dir_all(root)?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    let base = format!("{command}-{stamp}");
    for k in 1.. {
        let dir = if k == 1 { root.join(&base) } else { root.join(format!("{base}-{k}")) };
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
    unreachable!()
}

pub fn write_artifacts(dir: &Path, artifacts: &[Artifact]) -> io::Result<()> {
    for a in artifacts {
        std::fs::write(dir.join(&a.name), &a.bytes)?;
    }
    Ok(())
}
