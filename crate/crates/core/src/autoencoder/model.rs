use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{AeConfig, Geometry, KERNEL, PADDING};
use crate::error::{Error, Result};
use crate::tensor::{adam_step, AdamConfig, AdamState, Tape, Tensor, Var};

// Independent random streams derived from the model seed.
const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum Activation {
    Relu,
    Sigmoid,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum LayerKind {
    Conv { stride: usize },
    ConvTranspose { stride: usize },
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layer {
    name: String,
    kind: LayerKind,
    activation: Activation,
    /// Index of the weight tensor; the bias follows it.
    param: usize,
}

/// Per-epoch mean reconstruction losses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
}

/// The convolutional autoencoder: parameters, layer plan and training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeModel {
    config: AeConfig,
    encoder: Vec<Layer>,
    decoder: Vec<Layer>,
    params: Vec<Tensor>,
    pub history: LossHistory,
}

/// Embeddings in input order, one row per image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_matrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.values)
    }
}

fn kaiming_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: f64) -> Tensor {
    let bound = (6.0 / fan_in).sqrt();
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and buffer agree")
}

impl AeModel {
    /// Builds a freshly initialised model; fails if the geometry does not close.
    pub fn build(config: AeConfig) -> Result<Self> {
        let geometry = config.geometry()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(INIT_STREAM);

        let mut params = Vec::new();
        let push = |params: &mut Vec<Tensor>, weight: Tensor, out: usize| {
            params.push(weight);
            params.push(Tensor::zeros(&[out]));
            params.len() - 2
        };

        let mut encoder = Vec::new();
        let mut c_in = 3;
        for (i, (&c_out, &stride)) in config
            .encoder_channels
            .iter()
            .zip(&config.encoder_strides)
            .enumerate()
        {
            let fan_in = (c_in * KERNEL * KERNEL) as f64;
            let w = kaiming_uniform(&mut rng, &[c_out, c_in, KERNEL, KERNEL], fan_in);
            encoder.push(Layer {
                name: format!("encoder.conv{}", i + 1),
                kind: LayerKind::Conv { stride },
                activation: Activation::Relu,
                param: push(&mut params, w, c_out),
            });
            c_in = c_out;
        }
        let flat = geometry.flat_features();
        let w = kaiming_uniform(&mut rng, &[config.latent_dim, flat], flat as f64);
        encoder.push(Layer {
            name: "encoder.linear".into(),
            kind: LayerKind::Linear,
            activation: if config.latent_relu {
                Activation::Relu
            } else {
                Activation::None
            },
            param: push(&mut params, w, config.latent_dim),
        });

        let mut decoder = Vec::new();
        let w = kaiming_uniform(&mut rng, &[flat, config.latent_dim], config.latent_dim as f64);
        decoder.push(Layer {
            name: "decoder.linear".into(),
            kind: LayerKind::Linear,
            activation: Activation::Relu,
            param: push(&mut params, w, flat),
        });
        let mut c_in = geometry.bottleneck.0;
        let pairs = config.decoder_channels.len();
        for (i, (&c_out, &stride)) in config
            .decoder_channels
            .iter()
            .zip(&config.decoder_strides)
            .enumerate()
        {
            let fan_in = (c_in * KERNEL * KERNEL) as f64;
            let w = kaiming_uniform(&mut rng, &[c_in, c_in, KERNEL, KERNEL], fan_in);
            decoder.push(Layer {
                name: format!("decoder.pair{}.conv", i + 1),
                kind: LayerKind::Conv { stride: 1 },
                activation: Activation::Relu,
                param: push(&mut params, w, c_in),
            });
            let k = AeConfig::transposed_kernel(stride);
            // inputs reaching one output pixel of the transposed conv
            let fan_in = (c_in * k * k) as f64 / (stride * stride) as f64;
            let w = kaiming_uniform(&mut rng, &[c_in, c_out, k, k], fan_in);
            decoder.push(Layer {
                name: format!("decoder.pair{}.deconv", i + 1),
                kind: LayerKind::ConvTranspose { stride },
                activation: if i + 1 == pairs {
                    Activation::Sigmoid
                } else {
                    Activation::Relu
                },
                param: push(&mut params, w, c_out),
            });
            c_in = c_out;
        }

        Ok(AeModel {
            config,
            encoder,
            decoder,
            params,
            history: LossHistory::default(),
        })
    }

    pub fn config(&self) -> &AeConfig {
        &self.config
    }

    pub fn geometry(&self) -> Geometry {
        self.config.geometry().expect("validated at build")
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Layer names in evaluation order.
    pub fn layer_names(&self) -> Vec<&str> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .map(|l| l.name.as_str())
            .collect()
    }

    fn register(&self, tape: &mut Tape, tracked: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if tracked {
                    tape.leaf(p.clone().tracked())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect()
    }

    fn apply(tape: &mut Tape, layer: &Layer, vars: &[Var], x: Var) -> Result<Var> {
        let (w, b) = (vars[layer.param], vars[layer.param + 1]);
        let y = match layer.kind {
            LayerKind::Conv { stride } => tape.conv2d(x, w, b, stride, PADDING)?,
            LayerKind::ConvTranspose { stride } => tape.conv_transpose2d(x, w, b, stride, PADDING)?,
            LayerKind::Linear => tape.linear(x, w, b)?,
        };
        match layer.activation {
            Activation::Relu => tape.relu(y),
            Activation::Sigmoid => tape.sigmoid(y),
            Activation::None => Ok(y),
        }
    }

    fn encode(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let n = tape.value(x).shape()[0];
        let flat = self.geometry().flat_features();
        let (last, convs) = self.encoder.split_last().expect("encoder has layers");
        let mut h = x;
        for layer in convs {
            h = Self::apply(tape, layer, vars, h)?;
        }
        let h = tape.reshape(h, &[n, flat])?;
        Self::apply(tape, last, vars, h)
    }

    fn decode(&self, tape: &mut Tape, vars: &[Var], z: Var) -> Result<Var> {
        let n = tape.value(z).shape()[0];
        let (c, h, w) = self.geometry().bottleneck;
        let (first, rest) = self.decoder.split_first().expect("decoder has layers");
        let y = Self::apply(tape, first, vars, z)?;
        let mut y = tape.reshape(y, &[n, c, h, w])?;
        for layer in rest {
            y = Self::apply(tape, layer, vars, y)?;
        }
        Ok(y)
    }

    fn check_images(&self, images: &[Tensor]) -> Result<()> {
        let (h, w) = self.config.input_hw;
        for (i, img) in images.iter().enumerate() {
            if img.shape() != [3, h, w] {
                return Err(Error::shape(
                    "autoencoder",
                    format!("image {i} has shape {:?}, expected [3, {h}, {w}]", img.shape()),
                ));
            }
        }
        Ok(())
    }

    fn batch(images: &[&Tensor]) -> Result<Tensor> {
        Tensor::stack(images)
    }

    /// Encoder output for every image, in input order.
    pub fn embed(&self, images: &[Tensor]) -> Result<EmbeddingMatrix> {
        self.check_images(images)?;
        let mut values = Vec::with_capacity(images.len() * self.config.latent_dim);
        for chunk in images.chunks(self.config.batch_size) {
            let refs: Vec<&Tensor> = chunk.iter().collect();
            let mut tape = Tape::new();
            let vars = self.register(&mut tape, false);
            let x = tape.constant(Self::batch(&refs)?);
            let z = self.encode(&mut tape, &vars, x)?;
            values.extend_from_slice(tape.value(z).data());
        }
        Ok(EmbeddingMatrix {
            rows: images.len(),
            cols: self.config.latent_dim,
            values,
        })
    }

    /// Decoder output for every image; values lie in (0, 1).
    pub fn reconstruct(&self, images: &[Tensor]) -> Result<Vec<Tensor>> {
        self.check_images(images)?;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(self.config.batch_size) {
            let refs: Vec<&Tensor> = chunk.iter().collect();
            let mut tape = Tape::new();
            let vars = self.register(&mut tape, false);
            let x = tape.constant(Self::batch(&refs)?);
            let z = self.encode(&mut tape, &vars, x)?;
            let y = self.decode(&mut tape, &vars, z)?;
            out.extend(tape.value(y).unstack());
        }
        Ok(out)
    }

    /// Mean squared reconstruction error over all elements of `images`.
    pub fn reconstruction_loss(&self, images: &[Tensor]) -> Result<f64> {
        self.check_images(images)?;
        let mut total = 0.0;
        for chunk in images.chunks(self.config.batch_size) {
            let refs: Vec<&Tensor> = chunk.iter().collect();
            let mut tape = Tape::new();
            let vars = self.register(&mut tape, false);
            let x = tape.constant(Self::batch(&refs)?);
            let z = self.encode(&mut tape, &vars, x)?;
            let y = self.decode(&mut tape, &vars, z)?;
            let loss = tape.mse_loss(y, x)?;
            total += tape.value(loss).item().expect("scalar") * chunk.len() as f64;
        }
        Ok(total / images.len() as f64)
    }

    /// Minibatch Adam on the reconstruction MSE for `config.epochs` epochs.
    ///
    /// Batches are drawn from a seeded shuffle, so repeated runs are identical.
    /// The validation set must be a separate buffer from the training set.
    pub fn train(&mut self, train_set: &[Tensor], val_set: &[Tensor]) -> Result<&LossHistory> {
        if train_set.is_empty() {
            return Err(Error::Usage("training set is empty".into()));
        }
        if !val_set.is_empty() && std::ptr::eq(train_set.as_ptr(), val_set.as_ptr()) {
            return Err(Error::Usage(
                "validation set must be a separate copy of the images, not the training tensors"
                    .into(),
            ));
        }
        self.check_images(train_set)?;
        self.check_images(val_set)?;

        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(SHUFFLE_STREAM);
        let adam_config = AdamConfig {
            learning_rate: self.config.learning_rate,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(adam_config, &self.params);
        let mut order: Vec<usize> = (0..train_set.len()).collect();

        for epoch in 0..self.config.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for (batch_index, idx) in order.chunks(self.config.batch_size).enumerate() {
                let refs: Vec<&Tensor> = idx.iter().map(|&i| &train_set[i]).collect();
                let loss = self
                    .train_step(&refs, &mut adam)
                    .map_err(|e| match e {
                        Error::Numeric { op, detail } => Error::numeric(
                            op,
                            format!("{detail} (epoch {}, batch {})", epoch + 1, batch_index + 1),
                        ),
                        other => other,
                    })?;
                if !loss.is_finite() {
                    return Err(Error::numeric(
                        "train",
                        format!("loss {loss} at epoch {}, batch {}", epoch + 1, batch_index + 1),
                    ));
                }
                total += loss * idx.len() as f64;
            }
            self.history.train.push(total / train_set.len() as f64);
            if !val_set.is_empty() {
                let val = self.reconstruction_loss(val_set)?;
                self.history.validation.push(val);
            }
            log::debug!(
                "epoch {}: train {:.6} val {:?}",
                epoch + 1,
                self.history.train.last().unwrap(),
                self.history.validation.last()
            );
        }
        Ok(&self.history)
    }

    fn train_step(&mut self, batch: &[&Tensor], adam: &mut AdamState) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, true);
        let x = tape.constant(Self::batch(batch)?);
        let z = self.encode(&mut tape, &vars, x)?;
        let y = self.decode(&mut tape, &vars, z)?;
        let loss = tape.mse_loss(y, x)?;
        tape.backward(loss)?;
        for (p, &v) in self.params.iter_mut().zip(&vars) {
            p.zero_grad();
            match tape.grad(v) {
                Some(g) => p.accumulate_grad(g)?,
                None => p.accumulate_grad(&vec![0.0; p.numel()])?,
            }
        }
        adam_step(&mut self.params, adam)?;
        self.params.iter_mut().for_each(Tensor::zero_grad);
        Ok(tape.value(loss).item().expect("scalar"))
    }
}
