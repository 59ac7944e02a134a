//! Run directories, metadata and CSV emission.
//!
//! Every file a run writes is a pure function of the configuration, so two
//! runs with the same config and seed produce byte-identical output.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::dynamics::GAUGE;
use crate::error::{Error, Result};
use crate::units;

const LOCK_NAME: &str = ".lock";

/// Output directory held for the lifetime of one command.
#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
    lock: PathBuf,
}

impl RunDir {
    /// Creates `path` if needed and takes its lock file. Fails if another run
    /// holds the lock.
    pub fn create(path: &Path) -> Result<Self> {
        fs::create_dir_all(path)?;
        let lock = path.join(LOCK_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(Error::Precondition(format!(
                    "output directory {} is in use ({} exists; remove it if no run is active)",
                    path.display(),
                    lock.display()
                )));
            }
            Err(e) => return Err(e.into()),
        }
        Ok(Self {
            path: path.to_path_buf(),
            lock,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// `run_metadata`: command, config hash, code version and unit table.
    pub fn write_metadata(
        &self,
        cfg: &RunConfig,
        command: &str,
        extra: &[(String, String)],
    ) -> Result<()> {
        let mut pairs = vec![
            ("command".to_string(), command.to_string()),
            (
                "code_version".to_string(),
                env!("CARGO_PKG_VERSION").to_string(),
            ),
            ("config_sha256".to_string(), config_hash(cfg)),
            ("seed".to_string(), cfg.numerics.seed.to_string()),
            ("gauge".to_string(), GAUGE.to_string()),
            ("internal_hbar".to_string(), "1".to_string()),
            ("internal_length".to_string(), "um".to_string()),
            ("internal_time".to_string(), "ps".to_string()),
            ("internal_mass_kg".to_string(), num(units::KG_PER_MASS_UNIT)),
            (
                "internal_energy_J".to_string(),
                num(units::JOULE_PER_ENERGY_UNIT),
            ),
            (
                "internal_frequency_rad_per_s".to_string(),
                num(units::RAD_PER_S_PER_FREQ_UNIT),
            ),
            (
                "internal_velocity_m_per_s".to_string(),
                num(units::M_PER_S_PER_VELOCITY_UNIT),
            ),
        ];
        pairs.extend(extra.iter().cloned());
        self.write_report("run_metadata", &pairs)?;
        fs::write(self.file("config.conf"), cfg.to_text())?;
        Ok(())
    }

    /// Plain `key = value` lines.
    pub fn write_report(&self, name: &str, pairs: &[(String, String)]) -> Result<()> {
        let mut w = BufWriter::new(File::create(self.file(name))?);
        for (k, v) in pairs {
            writeln!(w, "{k} = {v}")?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV with `# key=value` metadata lines above the header row.
    pub fn write_csv<I>(
        &self,
        name: &str,
        meta: &[(String, String)],
        header: &[&str],
        rows: I,
    ) -> Result<PathBuf>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let path = self.file(name);
        let mut file = BufWriter::new(File::create(&path)?);
        for (k, v) in meta {
            writeln!(file, "# {k}={v}")?;
        }
        let mut w = csv::Writer::from_writer(file);
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(path)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

/// SHA-256 of the canonical config text, hex encoded.
pub fn config_hash(cfg: &RunConfig) -> String {
    Sha256::digest(cfg.to_text().as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Shortest round-trip form; non-finite values become empty fields.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:e}")
    } else {
        String::new()
    }
}

/// Splits a CSV produced by [`RunDir::write_csv`] into metadata pairs and
/// the remaining CSV text.
pub fn split_metadata(text: &str) -> (Vec<(String, String)>, String) {
    let mut meta = Vec::new();
    let mut body = String::new();
    for line in text.lines() {
        match line.strip_prefix("# ") {
            Some(rest) if body.is_empty() => {
                let (k, v) = rest.split_once('=').unwrap_or((rest, ""));
                meta.push((k.to_string(), v.to_string()));
            }
            _ => {
                body.push_str(line);
                body.push('\n');
            }
        }
    }
    (meta, body)
}
