//! Run manifest and output files. Every CSV carries the manifest as `#`
//! lines; wall-clock time and output digests only go to `manifest.txt`, so
//! the CSVs of two runs with the same manifest are byte-identical.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rdthreshold::io::{write_field, write_table, write_trajectory};
use rdthreshold::{Config, Field, Trajectory};
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone)]
pub struct RunManifest {
    pub tool: String,
    /// Subcommand and its arguments.
    pub command: String,
    pub config: Vec<String>,
    /// `(path, sha256)` of every input file.
    pub inputs: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: String, config: &Config) -> Self {
        RunManifest {
            tool: format!("rdthreshold {}", env!("CARGO_PKG_VERSION")),
            command,
            config: config.echo(),
            inputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), CliError> {
        let digest = sha256_file(path)?;
        self.inputs.push((path.display().to_string(), digest));
        Ok(())
    }

    /// Refreshes the config echo after values were resolved (calibration).
    pub fn update_config(&mut self, config: &Config) {
        self.config = config.echo();
    }

    pub fn header(&self) -> Vec<String> {
        let mut out = vec![format!("tool = {}", self.tool), format!("command = {}", self.command)];
        out.extend(self.config.iter().cloned());
        for (p, d) in &self.inputs {
            out.push(format!("input {p} sha256 = {d}"));
        }
        out
    }
}

pub struct Outputs {
    dir: PathBuf,
    pub manifest: RunManifest,
    written: Vec<PathBuf>,
    started: Instant,
}

impl Outputs {
    pub fn new(dir: &Path, manifest: RunManifest) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Usage(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            manifest,
            written: Vec::new(),
            started: Instant::now(),
        })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(path);
        Ok(BufWriter::new(f))
    }

    pub fn field(&mut self, name: &str, field: &Field, column: &str) -> Result<(), CliError> {
        let header = self.manifest.header();
        let w = self.create(name)?;
        write_field(w, field, column, &header)?;
        Ok(())
    }

    pub fn table(&mut self, name: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let header = self.manifest.header();
        let w = self.create(name)?;
        write_table(w, &header, columns, rows)?;
        Ok(())
    }

    pub fn trajectory(&mut self, name: &str, traj: &Trajectory, extra: &[String]) -> Result<(), CliError> {
        let mut header = self.manifest.header();
        header.extend(extra.iter().cloned());
        let w = self.create(name)?;
        write_trajectory(w, traj, &header)?;
        Ok(())
    }

    /// Writes `manifest.txt` with the wall-clock time and output digests.
    pub fn finish(self) -> Result<PathBuf, CliError> {
        let mut lines = self.manifest.header();
        lines.push(format!("wall_clock_seconds = {:.3}", self.started.elapsed().as_secs_f64()));
        for p in &self.written {
            lines.push(format!("output {} sha256 = {}", p.display(), sha256_file(p)?));
        }
        let path = self.dir.join("manifest.txt");
        let mut f = File::create(&path).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
        for l in lines {
            writeln!(f, "# {l}").map_err(rdthreshold::Error::from)?;
        }
        Ok(path)
    }
}
