//! Run directories: resumable CSV tables, state files and manifests.
//!
//! Tables are streamed to `<file>.partial` in fixed-size chunks of rows, in
//! canonical order, and renamed into place once complete. A state file
//! written before any compute records the config hash so an interrupted run
//! can continue with `--resume`.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Git-style content hash: SHA-256 over `"blob <len>\0" + bytes`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(path.display().to_string(), e)
}

/// Write via a sibling temp file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunState {
    subcommand: String,
    config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSummary {
    pub file: String,
    pub rows: usize,
    /// Rows with a non-zero `error_code`.
    pub poisoned: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config_path: String,
    pub config_hash: String,
    /// Hash of the raw config file, before overrides.
    pub config_file_hash: String,
    pub overrides: Vec<String>,
    pub seed: u64,
    pub threads: usize,
    pub resolved_config: serde_json::Value,
    /// Derived quantities (material parameters, grids, `V_d`, ...).
    pub derived: serde_json::Value,
    pub constants: serde_json::Map<String, serde_json::Value>,
    pub timings: Vec<Timing>,
    pub warnings: Vec<String>,
    pub outputs: Vec<TableSummary>,
    pub extra_files: Vec<String>,
    pub resumed: bool,
    pub status: String,
    pub exit_code: i32,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub enum Start {
    Fresh,
    /// Partial outputs from an interrupted run with the same hash.
    Continue,
    /// A finished run with the same hash; nothing to do.
    Complete(i32),
}

pub struct RunDir {
    pub dir: PathBuf,
    pub stem: String,
    pub config_hash: String,
    /// Stop after this many newly written chunks (testing interruption).
    pub stop_after: Option<usize>,
    written: usize,
}

impl RunDir {
    pub fn new(dir: PathBuf, stem: &str, config_hash: String, stop_after: Option<usize>) -> Self {
        RunDir {
            dir,
            stem: stem.to_string(),
            config_hash,
            stop_after,
            written: 0,
        }
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.path(&format!("{}.manifest.json", self.stem))
    }

    fn state_path(&self) -> PathBuf {
        self.path(&format!("{}.state.json", self.stem))
    }

    /// Decide how to start; creates the directory and state file.
    pub fn start(&mut self, resume: bool) -> Result<Start> {
        let manifest = self.manifest_path();
        if resume {
            if manifest.exists() {
                let m: Manifest = serde_json::from_slice(&fs::read(&manifest).map_err(io_err(&manifest))?)?;
                if m.config_hash != self.config_hash {
                    return Err(CliError::Resume(format!(
                        "{} was produced by config hash {}, current config hashes to {}",
                        manifest.display(),
                        m.config_hash,
                        self.config_hash
                    )));
                }
                if m.status == "complete" && m.outputs.iter().all(|o| self.path(&o.file).exists()) {
                    return Ok(Start::Complete(m.exit_code));
                }
            }
            let state = self.state_path();
            if !state.exists() {
                return Err(CliError::Resume(format!("no interrupted `{}` run in {}", self.stem, self.dir.display())));
            }
            let s: RunState = serde_json::from_slice(&fs::read(&state).map_err(io_err(&state))?)?;
            if s.config_hash != self.config_hash || s.subcommand != self.stem {
                return Err(CliError::Resume(format!(
                    "interrupted run used config hash {}, current config hashes to {}",
                    s.config_hash, self.config_hash
                )));
            }
            return Ok(Start::Continue);
        }
        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        if manifest.exists() {
            fs::remove_file(&manifest).map_err(io_err(&manifest))?;
        }
        let state = RunState {
            subcommand: self.stem.clone(),
            config_hash: self.config_hash.clone(),
        };
        write_atomic(&self.state_path(), &serde_json::to_vec_pretty(&state)?)?;
        Ok(Start::Fresh)
    }

    /// Stream a table of `n_chunks × rows_per_chunk` rows. On resume,
    /// complete chunks already on disk are kept and only the rest computed.
    pub fn table<F>(
        &mut self,
        file: &str,
        header: &[String],
        n_chunks: usize,
        rows_per_chunk: usize,
        resume: bool,
        mut compute: F,
    ) -> Result<TableSummary>
    where
        F: FnMut(usize) -> Result<Vec<Vec<String>>>,
    {
        let final_path = self.path(file);
        let partial = self.path(&format!("{file}.partial"));
        let header_line = csv_line(header)?;
        let expected_rows = n_chunks * rows_per_chunk;

        let mut done = 0;
        if resume && !partial.exists() && final_path.exists() {
            let rows = data_rows(&final_path, &header_line)?;
            if rows == expected_rows {
                return summarize(&final_path, file);
            }
        }
        if resume && partial.exists() {
            let rows = data_rows(&partial, &header_line)?;
            done = (rows / rows_per_chunk.max(1)).min(n_chunks);
            truncate_rows(&partial, done * rows_per_chunk)?;
        } else {
            write_atomic(&partial, header_line.as_bytes())?;
        }

        let mut out = OpenOptions::new().append(true).open(&partial).map_err(io_err(&partial))?;
        for chunk in done..n_chunks {
            if self.stop_after.is_some_and(|n| self.written >= n) {
                return Err(CliError::Interrupted(self.written));
            }
            let rows = compute(chunk)?;
            if rows.len() != rows_per_chunk {
                return Err(CliError::Config(format!(
                    "{file}: chunk {chunk} produced {} rows, expected {rows_per_chunk}",
                    rows.len()
                )));
            }
            let mut buf = String::new();
            for r in &rows {
                buf.push_str(&csv_line(r)?);
            }
            out.write_all(buf.as_bytes()).map_err(io_err(&partial))?;
            out.sync_data().map_err(io_err(&partial))?;
            self.written += 1;
        }
        drop(out);
        fs::rename(&partial, &final_path).map_err(io_err(&final_path))?;
        summarize(&final_path, file)
    }

    pub fn finish(&self, manifest: &Manifest) -> Result<()> {
        write_atomic(&self.manifest_path(), &serde_json::to_vec_pretty(manifest)?)?;
        let state = self.state_path();
        if state.exists() {
            fs::remove_file(&state).map_err(io_err(&state))?;
        }
        Ok(())
    }
}

fn csv_line(fields: &[String]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(fields)?;
    let bytes = w.into_inner().map_err(|e| CliError::Io("csv buffer".into(), e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Complete data rows after a matching header.
fn data_rows(path: &Path, header_line: &str) -> Result<usize> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(f);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(io_err(path))?;
    if first != header_line {
        return Err(CliError::Resume(format!("{} has a different header", path.display())));
    }
    let mut rows = 0;
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(io_err(path))?;
        if n == 0 || !line.ends_with('\n') {
            break;
        }
        rows += 1;
    }
    Ok(rows)
}

/// Keep the header and the first `rows` data rows.
fn truncate_rows(path: &Path, rows: usize) -> Result<()> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut newlines = 0;
    let mut end = bytes.len();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'\n' {
            newlines += 1;
            if newlines == rows + 1 {
                end = i + 1;
                break;
            }
        }
    }
    let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
    f.set_len(end as u64).map_err(io_err(path))?;
    f.sync_all().map_err(io_err(path))
}

fn summarize(path: &Path, file: &str) -> Result<TableSummary> {
    let mut reader = csv::Reader::from_path(path)?;
    let code_col = reader.headers()?.iter().position(|h| h == "error_code");
    let mut rows = 0;
    let mut poisoned = 0;
    for rec in reader.records() {
        let rec = rec?;
        rows += 1;
        if let Some(c) = code_col {
            if rec.get(c).is_some_and(|v| v != "0") {
                poisoned += 1;
            }
        }
    }
    Ok(TableSummary {
        file: file.to_string(),
        rows,
        poisoned,
    })
}
