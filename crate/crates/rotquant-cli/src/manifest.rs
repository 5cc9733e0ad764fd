//! Run manifest written alongside every output: the resolved configuration,
//! seed, tool version and input digests. Identical manifest plus identical
//! inputs means identical outputs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::CmdError;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub version: &'static str,
    pub seed: u64,
    /// Every flag after defaulting, as a stable JSON object.
    pub config: serde_json::Value,
    /// FNV-1a 64-bit digests of the input files, keyed by role.
    pub input_digests: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &'static str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config,
            input_digests: BTreeMap::new(),
        }
    }

    pub fn digest_input(&mut self, role: &str, path: &Path) -> Result<(), CmdError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CmdError::format(format!("{}: {e}", path.display())))?;
        self.input_digests.insert(
            role.to_string(),
            format!("fnv1a64:{:016x}", fnv1a64(&bytes)),
        );
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), CmdError> {
        let bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        write_atomic(&out_dir.join("run_manifest.json"), &bytes)
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

/// Atomic write (temp + rename) for report/trace/manifest files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CmdError> {
    rotquant::io::atomic_write(path, bytes).map_err(|e| CmdError::format(e.to_string()))
}

pub fn ensure_out_dir(dir: &Path) -> Result<(), CmdError> {
    std::fs::create_dir_all(dir).map_err(|e| CmdError::format(format!("{}: {e}", dir.display())))
}
