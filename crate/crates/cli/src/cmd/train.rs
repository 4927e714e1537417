use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use mapprior::io::read_trajectory;
use mapprior::prior::{train, ModelConfig, PriorModel, TrainConfig, WindowDataset};
use mapprior::NoiseProfile;
use serde::{Deserialize, Serialize};

use super::{split_name, sub_seed};
use crate::manifest::{load_config, RunManifest};
use crate::{mapsel, Common};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainCommandConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Augmentation noise applied to training windows.
    pub noise: NoiseProfile,
    /// Equalize the total loss weight of feasible regions across components.
    pub balanced_weights: bool,
}

impl Default for TrainCommandConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            noise: NoiseProfile::pedestrian(),
            balanced_weights: false,
        }
    }
}

/// Ground-truth trajectory files of a data directory, sorted by name.
pub fn gt_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).with_context(|| format!("reading data directory {}", dir.display()))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.with_context(|| format!("reading data directory {}", dir.display()))?.path();
        let is_gt = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(split_name)
            .is_some_and(|(_, suffix)| suffix == "gt");
        if is_gt {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn run(common: &Common, data: &Path, epochs: Option<usize>, batches_per_epoch: Option<usize>) -> Result<()> {
    let t0 = Instant::now();
    let mut cfg: TrainCommandConfig = load_config(common.config.as_deref())?;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = batches_per_epoch {
        cfg.train.max_batches_per_epoch = Some(b);
    }
    cfg.model.validate()?;
    cfg.train.validate()?;
    let map = mapsel::load(&common.map)?;
    let files = gt_files(data)?;
    if files.is_empty() {
        bail!("no *_gt.csv trajectories in {}", data.display());
    }
    let trajs = files
        .iter()
        .map(|p| read_trajectory(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let dataset = WindowDataset::new(
        &map,
        &trajs,
        cfg.model.window_len,
        cfg.model.crop_size,
        cfg.noise,
        cfg.train.val_fraction,
    )?
    .with_balanced_weights(cfg.balanced_weights);
    log::info!("{} training and {} validation windows", dataset.n_train(), dataset.n_val());

    let mut model = PriorModel::new(cfg.model.clone(), sub_seed(common.seed, 0, 0))?;
    let t_train = Instant::now();
    let report = train(&mut model, &dataset, &cfg.train, sub_seed(common.seed, 1, 0))?;
    let train_s = t_train.elapsed().as_secs_f64();

    let weights = common.out.join("weights.json");
    let log_path = common.out.join("train_log.csv");
    model.save(&weights)?;
    report.write_csv(&log_path)?;

    let mut manifest = RunManifest::new("train", common.seed, &common.map, &cfg)?;
    manifest.inputs = files;
    manifest.outputs = vec![weights.clone(), weights.with_extension("bin"), log_path];
    manifest.timings.insert("train_s".into(), train_s);
    manifest.timings.insert("total_s".into(), t0.elapsed().as_secs_f64());
    manifest.write(&common.out.join("manifest.json"))
}
