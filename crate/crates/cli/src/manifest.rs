//! Run manifest: what a pipeline produced and how the verdicts came out.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dsre_core::io::sha256_file;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTiming {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileRecord {
    /// Path relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// A single named check with its statistic and threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verdict {
    pub check: String,
    pub pass: bool,
    pub statistic: f64,
    pub threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_wrap: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct RunManifest {
    pub config_hash: String,
    pub env_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed_override: Option<u64>,
    pub stages: Vec<StageTiming>,
    pub files: Vec<FileRecord>,
    pub verdicts: Vec<Verdict>,
    /// Set when the run aborted; the manifest is written regardless.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunManifest {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    /// Record every regular file currently in the output directory.
    pub fn collect_files(&mut self, output_dir: &Path) -> anyhow::Result<()> {
        self.files.clear();
        let mut paths: Vec<PathBuf> = Vec::new();
        collect_recursive(output_dir, &mut paths)?;
        paths.sort();
        for path in paths {
            if path.file_name().map(|n| n == "manifest.json").unwrap_or(false) {
                continue; // the manifest cannot list its own final hash
            }
            let meta = std::fs::metadata(&path)?;
            let rel = path
                .strip_prefix(output_dir)
                .unwrap_or(&path)
                .to_string_lossy()
                .into_owned();
            self.files.push(FileRecord {
                path: rel,
                bytes: meta.len(),
                sha256: sha256_file(&path)?,
            });
        }
        Ok(())
    }

    pub fn write(&self, output_dir: &Path) -> anyhow::Result<()> {
        let file = std::fs::File::create(output_dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }
}

fn collect_recursive(dir: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            collect_recursive(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}
