use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const TOOL: &str = "tracekit";
pub const MANIFEST: &str = "manifest.json";

/// Identifies the run that produced a file.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(command: &str, config_hash: String, seed: u64) -> Self {
        Provenance {
            tool: TOOL,
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_hash,
            seed,
        }
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("provenance serializes")
    }

    /// Comment line heading text outputs (`#` is skipped by the corpus
    /// reader).
    pub fn header_line(&self) -> String {
        format!(
            "# {} {} {} config_hash={} seed={}\n",
            self.tool, self.version, self.command, self.config_hash, self.seed
        )
    }
}

/// Output directory of one command. Every file goes through here so it
/// carries the provenance and lands in the manifest.
pub struct OutputDir {
    root: PathBuf,
    provenance: Provenance,
    written: BTreeMap<String, String>,
}

impl OutputDir {
    pub fn create(root: &Path, provenance: Provenance) -> anyhow::Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            provenance,
            written: BTreeMap::new(),
        })
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Writes raw bytes; callers embed the provenance themselves.
    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.written.insert(rel.replace('\\', "/"), hex::encode(Sha256::digest(bytes)));
        Ok(path)
    }

    /// Pretty JSON with a top-level `provenance` key. `value` must serialize
    /// to an object.
    pub fn write_json(&mut self, rel: &str, value: &impl Serialize) -> anyhow::Result<PathBuf> {
        let mut v = serde_json::to_value(value)?;
        let obj = v.as_object_mut().context("JSON outputs must be objects")?;
        obj.insert("provenance".into(), self.provenance.to_value());
        let mut bytes = serde_json::to_vec_pretty(&v)?;
        bytes.push(b'\n');
        self.write_bytes(rel, &bytes)
    }

    /// Text (CSV, JSONL, cards) preceded by the provenance comment line.
    pub fn write_text(&mut self, rel: &str, body: &str) -> anyhow::Result<PathBuf> {
        let mut text = self.provenance.header_line();
        text.push_str(body);
        self.write_bytes(rel, text.as_bytes())
    }

    /// Merges this run's files into `manifest.json`, keeping entries written
    /// by earlier commands into the same directory.
    pub fn finish(self) -> anyhow::Result<Vec<String>> {
        let path = self.root.join(MANIFEST);
        let mut files: BTreeMap<String, Value> = match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice::<Value>(&bytes)
                .ok()
                .and_then(|v| v.get("files").cloned())
                .and_then(|f| serde_json::from_value(f).ok())
                .unwrap_or_default(),
            Err(_) => BTreeMap::new(),
        };
        for (rel, sha) in &self.written {
            files.insert(
                rel.clone(),
                json!({
                    "sha256": sha,
                    "command": self.provenance.command,
                    "config_hash": self.provenance.config_hash,
                    "seed": self.provenance.seed,
                }),
            );
        }
        let manifest = json!({ "tool": TOOL, "version": env!("CARGO_PKG_VERSION"), "files": files });
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(self.written.into_keys().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_accumulates_across_commands() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = OutputDir::create(dir.path(), Provenance::new("ingest", "aa".into(), 1)).unwrap();
        a.write_text("x.csv", "a,b\n").unwrap();
        a.finish().unwrap();
        let mut b = OutputDir::create(dir.path(), Provenance::new("train", "bb".into(), 1)).unwrap();
        b.write_json("y.json", &json!({"k": 1})).unwrap();
        b.finish().unwrap();
        let m: Value = serde_json::from_slice(&fs::read(dir.path().join(MANIFEST)).unwrap()).unwrap();
        assert_eq!(m["files"]["x.csv"]["command"], "ingest");
        assert_eq!(m["files"]["y.json"]["config_hash"], "bb");
        let text = fs::read_to_string(dir.path().join("x.csv")).unwrap();
        assert!(text.starts_with("# tracekit ") && text.contains("config_hash=aa seed=1"));
        let y: Value = serde_json::from_slice(&fs::read(dir.path().join("y.json")).unwrap()).unwrap();
        assert_eq!(y["provenance"]["seed"], 1);
    }

    #[test]
    fn non_object_json_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = OutputDir::create(dir.path(), Provenance::new("x", "h".into(), 0)).unwrap();
        assert!(a.write_json("z.json", &[1, 2]).is_err());
    }
}
