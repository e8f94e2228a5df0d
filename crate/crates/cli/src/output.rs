//! Output files. Each starts with exactly one provenance line carrying the
//! resolved configuration, its hash, the seed, versions and a timestamp, so
//! reruns can be compared by skipping the first line.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone)]
pub struct Provenance {
    value: Value,
}

impl Provenance {
    pub fn new<S: Serialize>(command: &str, seed: u64, settings: &S, jobs: Option<usize>) -> Self {
        let config = serde_json::to_value(settings).expect("settings serialize");
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Self {
            value: json!({
                "tool": "dream",
                "version": env!("CARGO_PKG_VERSION"),
                "core_version": dream_core::VERSION,
                "command": command,
                "seed": seed,
                "config_hash": config_hash(&config),
                "config": config,
                "jobs": jobs,
                "timestamp": timestamp,
            }),
        }
    }

    pub fn as_value(&self) -> &Value {
        &self.value
    }

    /// `# {json}` header line for CSV and JSON-lines outputs.
    pub fn comment_line(&self) -> String {
        format!("# {}", self.value)
    }
}

/// First 16 hex digits of the SHA-256 of the canonical config JSON.
pub fn config_hash(config: &Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Create `path`, write the provenance comment, then the body.
pub fn write_with_header<F>(path: &Path, prov: &Provenance, body: F) -> CliResult<()>
where
    F: FnOnce(&mut BufWriter<File>) -> dream_core::Result<()>,
{
    write_raw(path, |w| {
        writeln!(w, "{}", prov.comment_line())?;
        body(w)
    })
}

/// Create `path` and let `body` write everything, header included.
pub fn write_raw<F>(path: &Path, body: F) -> CliResult<()>
where
    F: FnOnce(&mut BufWriter<File>) -> dream_core::Result<()>,
{
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_ctx = |e: dream_core::Error| match e {
        dream_core::Error::Io(io) => CliError::io(path, io),
        other => CliError::from(other),
    };
    body(&mut w).map_err(io_ctx)?;
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

/// Refuse to write over any input file.
pub fn check_distinct(inputs: &[&Path], outputs: &[&Path]) -> CliResult<()> {
    let canon = |p: &Path| -> PathBuf { std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf()) };
    for o in outputs {
        let oc = canon(o);
        if inputs.iter().any(|i| canon(i) == oc) {
            return Err(CliError::config(format!("output {} would overwrite an input file", o.display())));
        }
    }
    for (i, a) in outputs.iter().enumerate() {
        if outputs[i + 1..].iter().any(|b| canon(a) == canon(b)) {
            return Err(CliError::config(format!("output {} is named twice", a.display())));
        }
    }
    Ok(())
}

/// `dir/stem.suffix` next to `path`, e.g. `a.jsonl` -> `a.metrics.csv`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_depends_only_on_config() {
        let a = Provenance::new("qd", 1, &json!({"batch": 32}), Some(1));
        let b = Provenance::new("qd", 1, &json!({"batch": 32}), Some(4));
        let c = Provenance::new("qd", 1, &json!({"batch": 16}), Some(1));
        assert_eq!(a.as_value()["config_hash"], b.as_value()["config_hash"]);
        assert_ne!(a.as_value()["config_hash"], c.as_value()["config_hash"]);
        assert!(!a.comment_line().contains('\n'));
    }

    #[test]
    fn sibling_names() {
        assert_eq!(sibling(Path::new("out/a.jsonl"), "metrics.csv"), PathBuf::from("out/a.metrics.csv"));
    }

    #[test]
    fn outputs_may_not_alias_inputs() {
        let a = Path::new("x/a.jsonl");
        assert!(check_distinct(&[a], &[Path::new("x/b.jsonl")]).is_ok());
        assert!(check_distinct(&[a], &[a]).is_err());
        assert!(check_distinct(&[], &[a, a]).is_err());
    }
}
