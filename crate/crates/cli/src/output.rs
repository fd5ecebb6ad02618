//! CSV tables and metadata sidecars. Nothing here depends on wall-clock time
//! or thread count, so identical inputs give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub struct RunContext {
    pub command: &'static str,
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub config_hash: String,
}

impl RunContext {
    pub fn new(command: &'static str, config: RunConfig, out_dir: PathBuf) -> Result<Self, CliError> {
        fs::create_dir_all(&out_dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", out_dir.display())))?;
        let config_hash = hex::encode(Sha256::digest(config.canonical().as_bytes()));
        Ok(Self {
            command,
            config,
            out_dir,
            config_hash,
        })
    }

    pub fn header_lines(&self) -> Vec<String> {
        vec![
            format!("micromaser {VERSION}"),
            format!("command = {}", self.command),
            format!("config_sha256 = {}", self.config_hash),
            format!("seed = {}", self.config.seed),
        ]
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.out_dir.join(file)
    }

    /// Writes `# `-prefixed header lines, a column line and the rows.
    pub fn write_csv(&self, file: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<PathBuf, CliError> {
        let mut text = String::new();
        for line in self.header_lines() {
            writeln!(text, "# {line}").unwrap();
        }
        writeln!(text, "{}", columns.join(",")).unwrap();
        for row in rows {
            writeln!(text, "{}", row.join(",")).unwrap();
        }
        let path = self.path(file);
        write_file(&path, text.as_bytes())?;
        Ok(path)
    }

    /// `<command>.meta.toml`: provenance plus a summary table.
    pub fn write_sidecar(&self, summary: &[(&str, String)]) -> Result<PathBuf, CliError> {
        let mut text = String::new();
        writeln!(text, "version = \"{VERSION}\"").unwrap();
        writeln!(text, "command = \"{}\"", self.command).unwrap();
        writeln!(text, "config_sha256 = \"{}\"", self.config_hash).unwrap();
        writeln!(text, "seed = {}", self.config.seed).unwrap();
        writeln!(text, "\n[summary]").unwrap();
        for (k, v) in summary {
            writeln!(text, "{k} = {v}").unwrap();
        }
        writeln!(text, "\n[config]").unwrap();
        for line in self.config.canonical().lines() {
            // Nest the config tables under [config.*].
            match line.strip_prefix('[') {
                Some(rest) => writeln!(text, "[config.{rest}").unwrap(),
                None => writeln!(text, "{line}").unwrap(),
            }
        }
        let path = self.path(&format!("{}.meta.toml", self.command));
        write_file(&path, text.as_bytes())?;
        Ok(path)
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

pub fn num(x: f64) -> String {
    format!("{x:e}")
}

/// A TOML value for a summary entry.
pub fn toml_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}
