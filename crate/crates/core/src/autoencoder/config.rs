use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ConvGeometry;

pub const ENCODER_CONVS: usize = 7;
pub const DECODER_PAIRS: usize = 5;
pub const KERNEL: usize = 3;
pub const PADDING: usize = 1;

/// Architecture and training hyperparameters of the autoencoder.
///
/// Every encoder layer is a 3x3 convolution with padding 1. Each decoder pair
/// is a 3x3 stride-1 convolution followed by a transposed convolution with
/// kernel `stride + 2` and padding 1, which scales the map by `stride`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeConfig {
    pub input_hw: (usize, usize),
    pub latent_dim: usize,
    pub encoder_channels: Vec<usize>,
    pub encoder_strides: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub decoder_strides: Vec<usize>,
    /// ReLU on the embedding layer, as in every other encoder layer.
    pub latent_relu: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig {
            input_hw: (64, 64),
            latent_dim: 64,
            encoder_channels: vec![16, 32, 32, 64, 64, 128, 128],
            encoder_strides: vec![2, 1, 2, 1, 2, 1, 2],
            decoder_channels: vec![128, 64, 32, 16, 3],
            decoder_strides: vec![1, 2, 2, 2, 2],
            latent_relu: true,
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Shapes derived from a validated config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Geometry {
    /// Map size entering each encoder conv.
    pub encoder_inputs: Vec<(usize, usize)>,
    /// Channels and map size at the bottleneck, before flattening.
    pub bottleneck: (usize, usize, usize),
    /// Map size after each decoder pair.
    pub decoder_outputs: Vec<(usize, usize)>,
}

impl Geometry {
    pub fn flat_features(&self) -> usize {
        let (c, h, w) = self.bottleneck;
        c * h * w
    }
}

impl AeConfig {
    /// Small, fast variant for desk-scale experiments at 32x32.
    pub fn compact(input_hw: (usize, usize)) -> Self {
        AeConfig {
            input_hw,
            encoder_channels: vec![8, 8, 16, 16, 32, 32, 32],
            decoder_channels: vec![32, 16, 16, 8, 3],
            ..AeConfig::default()
        }
    }

    pub fn transposed_kernel(stride: usize) -> usize {
        stride + 2
    }

    /// Checks layer counts and that the decoder output closes on the input size.
    pub fn geometry(&self) -> Result<Geometry> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.latent_dim == 0 {
            return fail("latent_dim must be at least 1".into());
        }
        if self.encoder_channels.len() != ENCODER_CONVS || self.encoder_strides.len() != ENCODER_CONVS
        {
            return fail(format!(
                "encoder needs exactly {ENCODER_CONVS} conv layers (channels and strides)"
            ));
        }
        if self.decoder_channels.len() != DECODER_PAIRS || self.decoder_strides.len() != DECODER_PAIRS
        {
            return fail(format!(
                "decoder needs exactly {DECODER_PAIRS} conv/transposed-conv pairs"
            ));
        }
        if self.decoder_channels.last() != Some(&3) {
            return fail("decoder must end with 3 channels".into());
        }
        if self
            .encoder_channels
            .iter()
            .chain(&self.decoder_channels)
            .any(|&c| c == 0)
            || self
                .encoder_strides
                .iter()
                .chain(&self.decoder_strides)
                .any(|&s| s == 0)
        {
            return fail("channel counts and strides must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be finite and non-negative".into());
        }

        let (mut h, mut w) = self.input_hw;
        if h == 0 || w == 0 {
            return fail("input_hw must be positive".into());
        }
        let mut encoder_inputs = Vec::with_capacity(ENCODER_CONVS);
        for (i, &s) in self.encoder_strides.iter().enumerate() {
            if h < KERNEL || w < KERNEL {
                return fail(format!(
                    "encoder conv {}: {h}x{w} map is smaller than the {KERNEL}x{KERNEL} kernel",
                    i + 1
                ));
            }
            encoder_inputs.push((h, w));
            h = ConvGeometry::narrow_extent(h, KERNEL, s, PADDING).expect("checked above");
            w = ConvGeometry::narrow_extent(w, KERNEL, s, PADDING).expect("checked above");
        }
        let bottleneck = (*self.encoder_channels.last().unwrap(), h, w);

        let mut decoder_outputs = Vec::with_capacity(DECODER_PAIRS);
        for (i, &s) in self.decoder_strides.iter().enumerate() {
            let k = Self::transposed_kernel(s);
            h = ConvGeometry::wide_extent(h, k, s, PADDING).ok_or_else(|| {
                Error::Config(format!("decoder pair {}: transposed conv collapses the map", i + 1))
            })?;
            w = ConvGeometry::wide_extent(w, k, s, PADDING).ok_or_else(|| {
                Error::Config(format!("decoder pair {}: transposed conv collapses the map", i + 1))
            })?;
            decoder_outputs.push((h, w));
        }
        if (h, w) != self.input_hw {
            return fail(format!(
                "decoder output {h}x{w} does not match input {}x{} (decoder pair {})",
                self.input_hw.0, self.input_hw.1, DECODER_PAIRS
            ));
        }
        Ok(Geometry {
            encoder_inputs,
            bottleneck,
            decoder_outputs,
        })
    }
}
