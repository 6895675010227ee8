//! Checkpoint directories: parameters, their manifest, and the training
//! configuration needed to rebuild the model.

use std::path::Path;

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::io::{kv, read_text, write_bytes};
use crate::model::Model;
use crate::params::ParamStore;

pub const CONFIG_FILE: &str = "config.txt";
pub const MODEL_FILE: &str = "model.txt";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub classes: usize,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.params.save(dir)?;
        write_bytes(&dir.join(CONFIG_FILE), self.config.render().as_bytes())?;
        let model = kv::render([("classes", self.classes.to_string())]);
        write_bytes(&dir.join(MODEL_FILE), model.as_bytes())
    }

    /// Load a checkpoint and check its parameters against the model its
    /// configuration describes.
    pub fn load(dir: &Path) -> Result<Self> {
        let config = TrainConfig::parse(&read_text(&dir.join(CONFIG_FILE))?)?;
        let model = kv::parse(&read_text(&dir.join(MODEL_FILE))?)?;
        let classes: usize = match model.get("classes") {
            Some(v) if model.len() == 1 => kv::value("classes", v)?,
            _ => {
                return Err(Error::Manifest(format!(
                    "{MODEL_FILE} must hold exactly one key, classes"
                )))
            }
        };
        let params = ParamStore::load(dir)?;
        Model::new(config.model_config(classes)?)?
            .init(0)?
            .check_same_manifest(&params)?;
        Ok(Checkpoint {
            config,
            classes,
            params,
        })
    }
}
