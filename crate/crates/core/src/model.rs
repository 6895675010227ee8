//! Encoder and decoder wired together over one parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decoder::{Decoder, DecoderConfig, DecoderOutputs, ForwardOptions};
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamStore};
use crate::synthdata::encoder::{Encoder, EncoderConfig};
use crate::tensor::{Graph, Var};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

#[derive(Clone, Debug)]
pub struct Model {
    encoder: Encoder,
    decoder: Decoder,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        if cfg.encoder.channels != cfg.decoder.in_channels {
            return Err(Error::invalid(format!(
                "encoder channels {:?} differ from decoder inputs {:?}",
                cfg.encoder.channels, cfg.decoder.in_channels
            )));
        }
        Ok(Model {
            encoder: Encoder::new(cfg.encoder),
            decoder: Decoder::new(cfg.decoder)?,
        })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn classes(&self) -> usize {
        self.decoder.config().classes
    }

    /// Fresh parameters drawn from a seeded generator.
    pub fn init(&self, seed: u64) -> Result<ParamStore> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.encoder.init_params(&mut store, &mut rng)?;
        self.decoder.init_params(&mut store, &mut rng)?;
        store.quantize();
        Ok(store)
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        b: &Bindings,
        image: Var,
        opts: ForwardOptions,
    ) -> Result<DecoderOutputs> {
        let pyramid = self.encoder.forward(g, b, image)?;
        self.decoder.forward(g, b, &pyramid, opts)
    }
}
