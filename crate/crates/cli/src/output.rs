//! CSV/JSON rendering and the run manifest sidecar.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// 17 significant digits, enough to round-trip any f64.
pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

/// A table whose CSV header is fixed and whose JSON form is an array of
/// objects keyed by the same column names.
pub trait Table: Serialize {
    const HEADER: &'static [&'static str];
    fn cells(&self) -> Vec<String>;
}

pub fn render<T: Table>(rows: &[T], format: Format) -> Result<String, CliError> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(T::HEADER)?;
            for r in rows {
                w.write_record(r.cells())?;
            }
            let bytes = w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        Format::Json => Ok(serde_json::to_string_pretty(rows)? + "\n"),
    }
}

pub fn render_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// Rendered outputs of one run. `extras` are written next to the primary
/// output as `<stem>.<kind>.<ext>`.
#[derive(Debug, Clone, Default)]
pub struct Rendered {
    pub primary: String,
    pub extras: Vec<(&'static str, String)>,
    /// Set when a checked property failed; the process exits with 1.
    pub violation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
    pub outputs: Vec<PathBuf>,
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = OsString::from(out.as_os_str());
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn extra_path(out: &Path, kind: &str, ext: &str) -> PathBuf {
    out.with_extension(format!("{kind}.{ext}"))
}

/// Creates missing parent directories.
pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, contents).map_err(io)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        a: f64,
        b: u64,
    }

    impl Table for Row {
        const HEADER: &'static [&'static str] = &["a", "b"];
        fn cells(&self) -> Vec<String> {
            vec![float(self.a), self.b.to_string()]
        }
    }

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, std::f64::consts::PI, 1e-300, -2.5e17] {
            assert_eq!(float(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(float(0.1), "1.0000000000000001e-1");
    }

    #[test]
    fn csv_and_json_share_columns() {
        let rows = [Row { a: 0.5, b: 3 }];
        assert_eq!(
            render(&rows, Format::Csv).unwrap(),
            "a,b\n5.0000000000000000e-1,3\n"
        );
        let json: serde_json::Value =
            serde_json::from_str(&render(&rows, Format::Json).unwrap()).unwrap();
        assert_eq!(json[0]["a"], 0.5);
        assert_eq!(json[0]["b"], 3);
    }

    #[test]
    fn sidecar_paths() {
        let out = Path::new("/tmp/x/metrics.csv");
        assert_eq!(
            manifest_path(out),
            Path::new("/tmp/x/metrics.csv.manifest.json")
        );
        assert_eq!(
            extra_path(out, "latent", "csv"),
            Path::new("/tmp/x/metrics.latent.csv")
        );
    }
}
