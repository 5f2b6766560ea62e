//! Run manifests: resolved settings, input checksums and outputs, enough to
//! repeat a command exactly. No timestamps, so reruns write identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use textgcn::corpus::{ITEM_IDS_FILE, TEST_FILE, TITLES_FILE, TRAIN_FILE, USER_IDS_FILE, VAL_FILE};

use crate::config::{Resolved, Resolver};

#[derive(Clone, Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: &'static str,
    pub parallel: bool,
    pub threads: usize,
    pub config: BTreeMap<String, Resolved>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub results: Value,
}

impl Manifest {
    pub fn new(command: &str, resolver: &Resolver, threads: usize) -> Self {
        Self {
            command: command.to_owned(),
            version: env!("CARGO_PKG_VERSION"),
            parallel: textgcn::par::is_parallel(),
            threads,
            config: resolver.entries.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            results: Value::Null,
        }
    }

    pub fn input_file(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    /// Hashes the split files present in a dataset directory.
    pub fn input_dataset(&mut self, dir: &Path) -> Result<()> {
        for name in [TRAIN_FILE, VAL_FILE, TEST_FILE, TITLES_FILE, USER_IDS_FILE, ITEM_IDS_FILE] {
            let p = dir.join(name);
            if p.exists() {
                self.input_file(&p)?;
            }
        }
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// `<dir>/manifest.json` for directory outputs, `<file>.manifest.json` for
/// single files.
pub fn manifest_path(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join("manifest.json")
    } else {
        let mut s = out.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }
}
