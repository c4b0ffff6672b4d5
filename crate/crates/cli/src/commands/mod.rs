pub mod calibrate;
pub mod detect;
pub mod evaluate;
pub mod gen_data;
pub mod train;

use std::path::{Path, PathBuf};

use avuc_core::bayes::Checkpoint;
use avuc_core::diffcore::Tensor;
use avuc_core::shiftlab::{Dataset, Descriptor, ShiftKind};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const TRAIN_FILE: &str = "train.csv";
pub const VAL_FILE: &str = "val.csv";
pub const TEST_FILE: &str = "test.csv";
pub const OOD_FILE: &str = "ood.csv";
pub const SHIFT_DIR: &str = "shift";
pub const DESCRIPTOR_FILE: &str = "descriptor.json";

/// Written by `gen-data` next to the CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataDescriptor {
    pub seed: u64,
    pub class_count: usize,
    pub dim: usize,
    pub source: Descriptor,
    pub shifts: Vec<ShiftEntry>,
    pub ood: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftEntry {
    pub kind: ShiftKind,
    pub intensity: u8,
    pub file: String,
}

pub fn shift_file_name(kind: ShiftKind, intensity: u8) -> String {
    format!("{SHIFT_DIR}/{kind}_{intensity}.csv")
}

pub fn read_descriptor(dir: &Path) -> Result<DataDescriptor, CliError> {
    let path = dir.join(DESCRIPTOR_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn read_dataset(path: &Path, class_count: Option<usize>) -> Result<Dataset, CliError> {
    Dataset::read_csv(path, class_count).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Train, validation and test splits of a `gen-data` directory, in one dataset.
pub fn load_data_dir(dir: &Path) -> Result<(DataDescriptor, Dataset), CliError> {
    let desc = read_descriptor(dir)?;
    let parts = [TRAIN_FILE, VAL_FILE, TEST_FILE]
        .iter()
        .map(|f| read_dataset(&dir.join(f), Some(desc.class_count)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut splits = Vec::new();
    for p in &parts {
        if p.dim() != desc.dim {
            return Err(CliError::Config(format!("feature count {} differs from descriptor {}", p.dim(), desc.dim)));
        }
        data.extend_from_slice(p.features.data());
        labels.extend_from_slice(&p.labels);
        splits.extend_from_slice(&p.splits);
    }
    let n = labels.len();
    let ds = Dataset {
        features: Tensor::matrix(n, desc.dim, data)?,
        labels,
        splits,
        class_count: desc.class_count,
        descriptor: desc.source.clone(),
    };
    Ok((desc, ds))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::load(path).map_err(|e| match e {
        avuc_core::Error::Io(io) => CliError::Config(format!("cannot read {}: {io}", path.display())),
        other => CliError::Config(format!("{}: {other}", path.display())),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(avuc_core::Error::from)?;
    std::fs::write(path, text).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(format!("creating {}", path.display()), e))
}

/// Seed from `--seed`, else the optional config, else 0.
pub fn resolve_seed(flag: Option<u64>, config: Option<&ExperimentConfig>) -> u64 {
    flag.or(config.map(|c| c.seed)).unwrap_or(0)
}

pub fn load_optional_config(path: Option<&Path>) -> Result<Option<ExperimentConfig>, CliError> {
    path.map(ExperimentConfig::load).transpose()
}

/// `dir/stem.suffix` next to `path`, e.g. `model.json` -> `model.history.csv`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}
