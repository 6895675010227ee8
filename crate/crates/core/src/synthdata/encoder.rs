//! Small strided CNN standing in for a pretrained backbone.

use rand_chacha::ChaCha8Rng;

use crate::decoder::{add_conv, apply_conv};
use crate::error::{Error, Result};
use crate::params::{Bindings, Group, ParamStore};
use crate::tensor::{Graph, Var};

/// Input side lengths must be multiples of this.
pub const STRIDE: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub stem: usize,
    pub channels: [usize; 4],
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            in_channels: 3,
            stem: 8,
            channels: [8, 16, 24, 32],
        }
    }
}

/// A stride-2 stem followed by four stride-2 3×3 conv + relu stages, giving
/// levels at strides 4, 8, 16 and 32.
#[derive(Clone, Debug)]
pub struct Encoder {
    cfg: EncoderConfig,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig) -> Self {
        Encoder { cfg }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        let c = &self.cfg;
        add_conv(
            store,
            "enc.stem",
            Group::Encoder,
            [c.stem, c.in_channels, 3, 3],
            2.0,
            0.0,
            rng,
        )?;
        let mut cin = c.stem;
        for (i, &cout) in c.channels.iter().enumerate() {
            add_conv(
                store,
                &format!("enc.stage{}", i + 1),
                Group::Encoder,
                [cout, cin, 3, 3],
                2.0,
                0.0,
                rng,
            )?;
            cin = cout;
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, b: &Bindings, image: Var) -> Result<[Var; 4]> {
        let s = g.shape(image).to_vec();
        if s.len() != 4
            || s[1] != self.cfg.in_channels
            || !s[2].is_multiple_of(STRIDE)
            || !s[3].is_multiple_of(STRIDE)
            || s[2] == 0
            || s[3] == 0
        {
            return Err(Error::shape(format!(
                "encoder input must be N×{}×H×W with H, W positive multiples of {STRIDE}, got {s:?}",
                self.cfg.in_channels
            )));
        }
        let x = apply_conv(g, b, "enc.stem", image, 2)?;
        let mut x = g.relu(x)?;
        let mut levels = Vec::with_capacity(4);
        for i in 1..=4 {
            let y = apply_conv(g, b, &format!("enc.stage{i}"), x, 2)?;
            x = g.relu(y)?;
            levels.push(x);
        }
        Ok([levels[0], levels[1], levels[2], levels[3]])
    }
}
