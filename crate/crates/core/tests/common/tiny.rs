use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use subnet_tda::experiment::{ExperimentConfig, MANIFEST_FILE};

/// The ci-scale layout shrunk to a few seconds of work.
pub fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::bundled("ci-scale").unwrap();
    c.name = "tiny".into();
    c.corpus.train_per_language = 40;
    c.corpus.test_per_language = 8;
    c.model.num_layers = 2;
    c.model.heads_per_layer = 2;
    c.model.model_dim = 8;
    c.model.ffn_dim = 16;
    c.model.classifier_hidden_dim = 4;
    c.train.full.epochs = 3;
    c.train.full.learning_rate = 0.01;
    c.train.sft.learning_rate = 0.01;
    c.train.sft.epochs = 3;
    c.influence.dim = 16;
    c.influence.top_m = 5;
    c.variants.random_seeds = vec![1];
    c
}

pub fn write_config(dir: &Path, config: &ExperimentConfig) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, config.to_toml()).unwrap();
    path
}

/// Every file under `dir` except manifests, keyed by relative path.
pub fn read_tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != MANIFEST_FILE {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Directories under `dir` that hold a run manifest.
pub fn manifest_dirs(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        if d.join(MANIFEST_FILE).exists() {
            out.push(d.clone());
        }
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            }
        }
    }
    out.sort();
    out
}
