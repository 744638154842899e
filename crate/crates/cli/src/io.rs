//! File output: temp-then-rename writes and JSON-lines logs.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use mixq_core::pareto::EvalRecord;
use serde::{Deserialize, Serialize};

use crate::config::SCHEMA_VERSION;

fn temp_path(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = temp_path(path);
    let res = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    res
}

/// One line of a run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogLine {
    pub schema_version: u32,
    pub config_hash: String,
    pub command: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub duplicate: bool,
    pub record: EvalRecord,
}

impl LogLine {
    pub fn new(config_hash: &str, command: &str, record: EvalRecord) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            config_hash: config_hash.to_string(),
            command: command.to_string(),
            duplicate: false,
            record,
        }
    }
}

/// Parsed lines, or the 1-based number of the first bad line with its error.
pub fn read_log(text: &str) -> Result<Vec<LogLine>, (usize, String)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e.to_string())))
        .collect()
}

/// Append-only writer; each line goes out in a single write.
pub struct LogWriter {
    file: File,
}

impl LogWriter {
    pub fn append(path: &Path) -> std::io::Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file })
    }

    pub fn write(&mut self, line: &LogLine) -> std::io::Result<()> {
        let mut s = serde_json::to_string(line).map_err(std::io::Error::other)?;
        s.push('\n');
        self.file.write_all(s.as_bytes())?;
        self.file.flush()
    }
}

/// Drops an unterminated final line left by an interrupted write.
pub fn trim_partial_tail(path: &Path) -> std::io::Result<String> {
    let text = fs::read_to_string(path)?;
    if text.is_empty() || text.ends_with('\n') {
        return Ok(text);
    }
    let keep = text.rfind('\n').map_or(0, |i| i + 1);
    let f = OpenOptions::new().write(true).open(path)?;
    f.set_len(keep as u64)?;
    Ok(text[..keep].to_string())
}
