use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::pointcloud::io::{decode_cloud, write_cloud};
use crate::synth::{generate_set, Dataset, LabelAccess};

/// The three sets of a run.
pub struct Domains {
    pub source: Dataset,
    /// Training targets; labels are evaluation-only.
    pub target: Dataset,
    /// Held-out target scenes for scoring.
    pub target_val: Dataset,
}

pub const SET_NAMES: [&str; 3] = ["source", "target", "target_val"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSet {
    pub name: String,
    pub access: LabelAccess,
    /// Relative to the manifest directory.
    pub files: Vec<String>,
    /// Hex SHA-256 per file.
    pub digests: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub sets: Vec<ManifestSet>,
}

pub const MANIFEST: &str = "manifest.json";

pub fn generate_domains(cfg: &RunConfig) -> Result<Domains> {
    let (src, tgt) = (cfg.source_spec(), cfg.target_spec()?);
    let n = cfg.domains.scenes;
    Ok(Domains {
        source: generate_set(&src, n, cfg.seed, 0, LabelAccess::Training)?,
        target: generate_set(&tgt, n, cfg.seed, 1, LabelAccess::EvaluationOnly)?,
        target_val: generate_set(&tgt, cfg.domains.eval_scenes, cfg.seed, 2, LabelAccess::EvaluationOnly)?,
    })
}

/// Sets from `domains.data_dir` when configured, otherwise generated.
pub fn load_domains(cfg: &RunConfig) -> Result<Domains> {
    match &cfg.domains.data_dir {
        None => generate_domains(cfg),
        Some(dir) => read_domains(dir),
    }
}

fn hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Write every set as PCRV files plus a manifest.
pub fn write_domains(dir: &Path, domains: &Domains, seed: u64) -> Result<Manifest> {
    let mut sets = Vec::new();
    for (name, set) in SET_NAMES.iter().zip([&domains.source, &domains.target, &domains.target_val]) {
        let sub = dir.join(name);
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let mut files = Vec::new();
        let mut digests = Vec::new();
        for (i, cloud) in set.clouds().iter().enumerate() {
            let rel = format!("{name}/{i:05}.pcrv");
            let path = dir.join(&rel);
            write_cloud(&path, cloud)?;
            digests.push(hex(&std::fs::read(&path).map_err(|e| Error::io(&path, e))?));
            files.push(rel);
        }
        sets.push(ManifestSet {
            name: name.to_string(),
            access: set.access(),
            files,
            digests,
        });
    }
    let manifest = Manifest { seed, sets };
    let path = dir.join(MANIFEST);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_domains(dir: &Path) -> Result<Domains> {
    let manifest = read_manifest(dir)?;
    let load = |name: &str| -> Result<Dataset> {
        let set = manifest
            .sets
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::format(dir.join(MANIFEST), format!("no '{name}' set")))?;
        if set.digests.len() != set.files.len() {
            return Err(Error::format(dir.join(MANIFEST), format!("'{name}' lists {} files but {} digests", set.files.len(), set.digests.len())));
        }
        let clouds = set
            .files
            .iter()
            .zip(&set.digests)
            .map(|(f, want)| {
                let path = dir.join(f);
                let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
                if &hex(&bytes) != want {
                    return Err(Error::format(&path, "content does not match the manifest digest"));
                }
                decode_cloud(&bytes, &path)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset::new(clouds, set.access))
    };
    Ok(Domains {
        source: load("source")?,
        target: load("target")?,
        target_val: load("target_val")?,
    })
}
