//! Dataset on disk: `episodes.jsonl` (one episode per line) plus
//! `manifest.json` carrying the layout, profile, seeds and content hash.
//!
//! The manifest's `episodes_sha256` is the digest of the episode file's
//! bytes; loads verify it, and downstream files reference a dataset by
//! that digest. Split assignment and percentile tags are functions of
//! (dataset, seed), so they are not stored separately.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use corrkit_core::simulator::{BoardLayout, Dataset, Episode, SimProfile, SplitTag};

use crate::config::{sha256_hex, SCHEMA_VERSION};
use crate::error::{CliError, Result};
use crate::io::atomic::{read_bytes, read_string, write_atomic};

pub const EPISODES_FILE: &str = "episodes.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    /// Hash of the effective run config that generated the dataset.
    pub config_hash: String,
    /// Digest of `episodes.jsonl` as written.
    pub episodes_sha256: String,
    pub seed: u64,
    pub n_episodes: usize,
    pub n_corrected: usize,
    pub layout: BoardLayout,
    pub profile: SimProfile,
    /// Base 60/10/30 split, index-aligned with the episode file.
    pub split: Vec<SplitTag>,
}

/// Serializes episodes one per line; the exact bytes feed the digest.
fn episodes_bytes(episodes: &[Episode]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for ep in episodes {
        serde_json::to_writer(&mut out, ep)
            .map_err(|e| CliError::config(format!("episode serialization: {e}")))?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Writes `episodes.jsonl` and `manifest.json` under `dir`.
pub fn save_dataset(dir: &Path, ds: &Dataset, profile: &SimProfile, config_hash: &str) -> Result<DatasetManifest> {
    let bytes = episodes_bytes(&ds.episodes)?;
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        config_hash: config_hash.to_string(),
        episodes_sha256: sha256_hex(&bytes),
        seed: ds.seed,
        n_episodes: ds.episodes.len(),
        n_corrected: ds.corrected_count(),
        layout: ds.layout.clone(),
        profile: profile.clone(),
        split: ds.split.clone(),
    };
    write_atomic(&dir.join(EPISODES_FILE), &bytes)?;
    let manifest_json = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| CliError::config(format!("manifest serialization: {e}")))?;
    write_atomic(&dir.join(MANIFEST_FILE), &manifest_json)?;
    Ok(manifest)
}

/// Loads and verifies a dataset directory.
///
/// Refuses episode files whose digest differs from the manifest and
/// manifests from other schema versions.
pub fn load_dataset(dir: &Path) -> Result<(Dataset, DatasetManifest)> {
    let manifest_text = read_string(&dir.join(MANIFEST_FILE))?;
    let manifest: DatasetManifest = serde_json::from_str(&manifest_text)
        .map_err(|e| CliError::config(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(CliError::config(format!(
            "dataset schema version {} does not match binary schema {SCHEMA_VERSION}",
            manifest.schema_version
        )));
    }
    let bytes = read_bytes(&dir.join(EPISODES_FILE))?;
    let digest = sha256_hex(&bytes);
    if digest != manifest.episodes_sha256 {
        return Err(CliError::config(format!(
            "episode file digest {digest} does not match manifest {}",
            manifest.episodes_sha256
        )));
    }
    let mut episodes = Vec::with_capacity(manifest.n_episodes);
    for (i, line) in bytes.split(|&b| b == b'\n').enumerate() {
        if line.is_empty() {
            continue;
        }
        let ep: Episode = serde_json::from_slice(line)
            .map_err(|e| CliError::config(format!("episode line {}: {e}", i + 1)))?;
        episodes.push(ep);
    }
    if episodes.len() != manifest.n_episodes || manifest.split.len() != episodes.len() {
        return Err(CliError::config(format!(
            "manifest promises {} episodes, file has {}",
            manifest.n_episodes,
            episodes.len()
        )));
    }
    let ds = Dataset {
        layout: manifest.layout.clone(),
        episodes,
        split: manifest.split.clone(),
        seed: manifest.seed,
    };
    Ok((ds, manifest))
}

/// Resolves a dataset argument: the directory itself or one containing
/// the standard pair of files.
pub fn dataset_dir(arg: &Path) -> Result<PathBuf> {
    if arg.join(MANIFEST_FILE).exists() {
        Ok(arg.to_path_buf())
    } else {
        Err(CliError::usage(format!(
            "{} is not a dataset directory (no {MANIFEST_FILE})",
            arg.display()
        )))
    }
}
