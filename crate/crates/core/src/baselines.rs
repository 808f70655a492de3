//! The baseline pool candidates are derived from.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admission::DatasetId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRecord {
    pub baseline_id: String,
    pub dataset: DatasetId,
    pub source: String,
    pub hp: BTreeMap<String, serde_json::Value>,
    pub transform_ref: String,
}

/// One entry of a `manifest.json`; `file` is relative to the manifest.
#[derive(Debug, Clone, Deserialize)]
struct ManifestEntry {
    baseline_id: String,
    dataset: DatasetId,
    file: String,
    #[serde(default)]
    hp: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    transform_ref: String,
}

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Manifest { path: String, source: serde_json::Error },
    #[error("baseline {0} has empty source")]
    EmptySource(String),
    #[error("baseline id {0} appears twice")]
    DuplicateId(String),
    #[error("baseline pool is empty")]
    Empty,
}

const BUILTIN_MANIFEST: &str = include_str!("../assets/baselines/manifest.json");
const BUILTIN_SOURCES: &[(&str, &str)] = &[
    ("cifar10_plain.py", include_str!("../assets/baselines/cifar10_plain.py")),
    ("cifar10_wide.py", include_str!("../assets/baselines/cifar10_wide.py")),
    ("cifar100_plain.py", include_str!("../assets/baselines/cifar100_plain.py")),
    ("cifar100_deep.py", include_str!("../assets/baselines/cifar100_deep.py")),
    ("svhn_plain.py", include_str!("../assets/baselines/svhn_plain.py")),
    ("svhn_narrow.py", include_str!("../assets/baselines/svhn_narrow.py")),
    ("mnist_plain.py", include_str!("../assets/baselines/mnist_plain.py")),
    ("mnist_tiny.py", include_str!("../assets/baselines/mnist_tiny.py")),
    ("celeba_plain.py", include_str!("../assets/baselines/celeba_plain.py")),
    ("celeba_wide.py", include_str!("../assets/baselines/celeba_wide.py")),
    ("imagenette_plain.py", include_str!("../assets/baselines/imagenette_plain.py")),
    ("imagenette_deep.py", include_str!("../assets/baselines/imagenette_deep.py")),
];

/// Twelve small convolutional models, two per dataset.
pub fn builtin() -> Vec<BaselineRecord> {
    let entries: Vec<ManifestEntry> =
        serde_json::from_str(BUILTIN_MANIFEST).expect("bundled manifest is valid");
    entries
        .into_iter()
        .map(|e| {
            let source = BUILTIN_SOURCES
                .iter()
                .find(|(name, _)| *name == e.file)
                .map(|(_, src)| src.to_string())
                .expect("bundled manifest names a bundled file");
            record(e, source)
        })
        .collect()
}

fn record(e: ManifestEntry, source: String) -> BaselineRecord {
    BaselineRecord {
        baseline_id: e.baseline_id,
        dataset: e.dataset,
        source,
        hp: e.hp,
        transform_ref: e.transform_ref,
    }
}

/// Reads a `manifest.json` and the sources it lists.
pub fn load_manifest(path: &Path) -> Result<Vec<BaselineRecord>, BaselineError> {
    let io = |p: &Path| {
        let p = p.display().to_string();
        move |source| BaselineError::Io { path: p, source }
    };
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    let entries: Vec<ManifestEntry> = serde_json::from_str(&text).map_err(|source| BaselineError::Manifest {
        path: path.display().to_string(),
        source,
    })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let file = dir.join(&e.file);
        let source = std::fs::read_to_string(&file).map_err(io(&file))?;
        out.push(record(e, source));
    }
    validate(&out)?;
    Ok(out)
}

pub fn validate(pool: &[BaselineRecord]) -> Result<(), BaselineError> {
    if pool.is_empty() {
        return Err(BaselineError::Empty);
    }
    let mut seen = std::collections::BTreeSet::new();
    for b in pool {
        if b.source.trim().is_empty() {
            return Err(BaselineError::EmptySource(b.baseline_id.clone()));
        }
        if !seen.insert(b.baseline_id.as_str()) {
            return Err(BaselineError::DuplicateId(b.baseline_id.clone()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_pool_covers_every_dataset_twice() {
        let pool = builtin();
        validate(&pool).unwrap();
        for d in DatasetId::ALL {
            assert_eq!(pool.iter().filter(|b| b.dataset == d).count(), 2, "{d}");
        }
    }

    #[test]
    fn manifest_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("m.py"), "import torch\n").unwrap();
        let manifest = dir.path().join("manifest.json");
        std::fs::write(
            &manifest,
            r#"[{"baseline_id":"m","dataset":"MNIST","file":"m.py","hp":{"lr":0.01}}]"#,
        )
        .unwrap();
        let pool = load_manifest(&manifest).unwrap();
        assert_eq!(pool[0].dataset, DatasetId::Mnist);
        assert_eq!(pool[0].source, "import torch\n");

        std::fs::write(&manifest, r#"[{"baseline_id":"m","dataset":"MNIST","file":"gone.py"}]"#).unwrap();
        assert!(matches!(load_manifest(&manifest), Err(BaselineError::Io { .. })));
    }
}
