//! Run manifest: everything needed to repeat a training run exactly.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use crispdec::io::kv;
use crispdec::wsss::TrainConfig;

pub const RUN_FILE: &str = "run.txt";
const CONFIG_PREFIX: &str = "config.";

#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub version: String,
    pub data_dir: PathBuf,
    pub dataset_hash: String,
    pub dataset_seed: u64,
    pub checkpoint: PathBuf,
    pub teacher: Option<PathBuf>,
    pub steps_csv: PathBuf,
    pub epochs_csv: PathBuf,
    pub config: TrainConfig,
}

impl RunManifest {
    pub fn render(&self) -> String {
        let mut pairs = vec![
            ("version", self.version.clone()),
            ("data_dir", self.data_dir.display().to_string()),
            ("dataset_hash", self.dataset_hash.clone()),
            ("dataset_seed", self.dataset_seed.to_string()),
            ("train_seed", self.config.seed.to_string()),
            ("checkpoint", self.checkpoint.display().to_string()),
            (
                "teacher",
                self.teacher
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            ("steps_csv", self.steps_csv.display().to_string()),
            ("epochs_csv", self.epochs_csv.display().to_string()),
        ];
        let config: Vec<(String, String)> = self
            .config
            .to_pairs()
            .into_iter()
            .map(|(k, v)| (format!("{CONFIG_PREFIX}{k}"), v))
            .collect();
        pairs.extend(config.iter().map(|(k, v)| (k.as_str(), v.clone())));
        kv::render(pairs)
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let map = kv::parse(text)?;
        let get = |k: &str| {
            map.get(k)
                .with_context(|| format!("run manifest lacks {k}"))
        };
        let mut config = TrainConfig::default();
        for (k, v) in &map {
            if let Some(key) = k.strip_prefix(CONFIG_PREFIX) {
                config.set(key, v)?;
            }
        }
        config.validate()?;
        let train_seed: u64 = get("train_seed")?.parse().context("train_seed")?;
        if train_seed != config.seed {
            bail!(
                "train_seed {train_seed} disagrees with config.seed {}",
                config.seed
            );
        }
        let teacher = get("teacher")?;
        Ok(RunManifest {
            version: get("version")?.clone(),
            data_dir: get("data_dir")?.into(),
            dataset_hash: get("dataset_hash")?.clone(),
            dataset_seed: get("dataset_seed")?.parse().context("dataset_seed")?,
            checkpoint: get("checkpoint")?.into(),
            teacher: (!teacher.is_empty()).then(|| teacher.into()),
            steps_csv: get("steps_csv")?.into(),
            epochs_csv: get("epochs_csv")?.into(),
            config,
        })
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let path = dir.join(RUN_FILE);
        std::fs::write(&path, self.render()).with_context(|| format!("writing {}", path.display()))
    }
}
