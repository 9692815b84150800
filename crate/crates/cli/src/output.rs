//! Output files. Each one opens with a metadata header carrying the tool
//! version, the fully resolved configuration and the seed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

use gcpo_core::diagnostics::{
    DEFAULT_FOLDS, DEFAULT_REPLICATES, DEFAULT_TOP_FRACTION, DEFAULT_TRIM,
};
use gcpo_core::{DEFAULT_ALPHA_BASE, DEFAULT_ENTAILMENT_THRESHOLD, DEFAULT_EPSILON};

/// Run-wide settings, echoed in every header whether or not a command uses them.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub alpha_base: f64,
    pub epsilon: f64,
    pub entailment_threshold: f64,
    pub seed: u64,
    pub bootstrap: usize,
    pub trim: usize,
    pub folds: usize,
    pub top_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            alpha_base: DEFAULT_ALPHA_BASE,
            epsilon: DEFAULT_EPSILON,
            entailment_threshold: DEFAULT_ENTAILMENT_THRESHOLD,
            seed: 42,
            bootstrap: DEFAULT_REPLICATES,
            trim: DEFAULT_TRIM,
            folds: DEFAULT_FOLDS,
            top_fraction: DEFAULT_TOP_FRACTION,
        }
    }
}

/// The header object. `--threads` is deliberately absent so that outputs do
/// not depend on the worker count.
pub fn meta(command: &str, run: &RunConfig, args: &impl Serialize) -> Result<Value> {
    Ok(serde_json::json!({
        "tool": "gcpo",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": run.seed,
        "config": {
            "run": run,
            "args": serde_json::to_value(args)?,
        },
    }))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

pub struct JsonlWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: &Path, meta: &Value) -> Result<Self> {
        let mut w = JsonlWriter {
            path: path.to_path_buf(),
            out: create(path)?,
        };
        w.write(&serde_json::json!({ "meta": meta }))?;
        Ok(w)
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out
            .write_all(b"\n")
            .with_context(|| format!("writing {}", self.path.display()))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out
            .flush()
            .with_context(|| format!("writing {}", self.path.display()))
    }
}

/// Writes a whole JSONL file: header, then one line per record.
pub fn write_jsonl<T: Serialize>(path: &Path, meta: &Value, records: &[T]) -> Result<()> {
    let mut w = JsonlWriter::create(path, meta)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    meta: &'a Value,
    #[serde(flatten)]
    body: &'a T,
}

/// Writes a pretty JSON object whose first key is `meta`.
pub fn write_json<T: Serialize>(path: &Path, meta: &Value, body: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, &Document { meta, body })?;
    out.write_all(b"\n")
        .and_then(|_| out.flush())
        .with_context(|| format!("writing {}", path.display()))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes a CSV file preceded by a `# meta: {...}` comment line.
pub fn write_csv(path: &Path, meta: &Value, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = create(path)?;
    let mut text = format!("# meta: {}\n", serde_json::to_string(meta)?);
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        let fields: Vec<String> = row.iter().map(|f| csv_field(f)).collect();
        text.push_str(&fields.join(","));
        text.push('\n');
    }
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .with_context(|| format!("writing {}", path.display()))
}

pub fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}
