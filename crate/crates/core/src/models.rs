//! The conditional generator and discriminator.
//!
//! Generator: `[z ‖ one_hot(y)] → dense → (s, s, 8b) → deconv×3 (BN, activation) → deconv(1) → tanh`
//! where `s = image_size / 8` and `b = base_filters`.
//! Discriminator: `[image ‖ label planes] → conv×4 (spectral norm, LeakyReLU) → flatten → dense → sigmoid`.

use rand::Rng;

use crate::autodiff::{Activation, Gradients, Graph, Parameter, Var};
use crate::error::{Error, Result};
use crate::layers::{dropout, BatchNorm, Conv2d, Deconv2d, Dense, Mode};
use crate::tensor::{Element, Tensor};

/// Number of emotion classes; labels are `0..NUM_CLASSES`.
pub const NUM_CLASSES: usize = 7;

pub const EMOTIONS: [&str; NUM_CLASSES] = [
    "Angry", "Disgust", "Fear", "Happy", "Neutral", "Sad", "Surprise",
];

const KERNEL: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub latent_dim: usize,
    pub base_filters: usize,
    pub image_size: usize,
    /// Activation after each generator batch-norm.
    pub generator_activation: Activation,
    /// LeakyReLU slope after each discriminator conv.
    pub discriminator_slope: f64,
    pub dropout: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            latent_dim: 150,
            base_filters: 64,
            image_size: 64,
            generator_activation: Activation::LeakyRelu(0.4),
            discriminator_slope: 0.4,
            dropout: 0.0,
        }
    }
}

impl ArchConfig {
    /// The reduced architecture used for desk-scale runs and tests.
    pub fn scaled(latent_dim: usize, base_filters: usize, image_size: usize) -> Self {
        ArchConfig {
            latent_dim,
            base_filters,
            image_size,
            ..ArchConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.base_filters == 0 || self.image_size == 0 {
            return Err(Error::Config(
                "architecture dimensions must be positive".into(),
            ));
        }
        if !self.image_size.is_multiple_of(16) {
            return Err(Error::Config(format!(
                "image size {} must be a multiple of 16",
                self.image_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        let slope_ok = |a: f64| a > 0.0 && a < 1.0;
        if !slope_ok(self.discriminator_slope) {
            return Err(Error::Config(format!(
                "discriminator slope {} outside (0, 1)",
                self.discriminator_slope
            )));
        }
        if let Activation::LeakyRelu(a) = self.generator_activation {
            if !slope_ok(a) {
                return Err(Error::Config(format!("generator slope {a} outside (0, 1)")));
            }
        }
        Ok(())
    }

    pub fn generator_input(&self) -> usize {
        self.latent_dim + NUM_CLASSES
    }

    pub fn seed_extent(&self) -> usize {
        self.image_size / 8
    }

    pub fn flatten_width(&self) -> usize {
        let s = self.image_size / 16;
        s * s * 8 * self.base_filters
    }
}

fn check_label(label: usize) -> Result<()> {
    if label >= NUM_CLASSES {
        return Err(Error::Label {
            label,
            classes: NUM_CLASSES,
        });
    }
    Ok(())
}

/// A class label with its one-hot encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionVector<T: Element> {
    pub label: usize,
    pub one_hot: Tensor<T>,
}

impl<T: Element> ConditionVector<T> {
    pub fn new(label: usize) -> Result<Self> {
        check_label(label)?;
        let mut one_hot = Tensor::zeros(&[NUM_CLASSES]);
        one_hot.data_mut()[label] = T::one();
        Ok(ConditionVector { label, one_hot })
    }
}

/// Noise vector `z` joined with the one-hot label.
#[derive(Debug, Clone)]
pub struct LatentInput<T: Element> {
    pub z: Tensor<T>,
    pub y: ConditionVector<T>,
    pub joint: Tensor<T>,
}

impl<T: Element> LatentInput<T> {
    pub fn new(z: Tensor<T>, label: usize) -> Result<Self> {
        let y = ConditionVector::new(label)?;
        let mut joint = z.data().to_vec();
        joint.extend_from_slice(y.one_hot.data());
        let joint = Tensor::new(&[joint.len()], joint)?;
        Ok(LatentInput { z, y, joint })
    }
}

/// `(N, 7)` one-hot rows for a batch of labels.
pub fn one_hot_batch<T: Element>(labels: &[usize]) -> Result<Tensor<T>> {
    let mut t = Tensor::zeros(&[labels.len().max(1), NUM_CLASSES]);
    for (i, &l) in labels.iter().enumerate() {
        check_label(l)?;
        t.data_mut()[i * NUM_CLASSES + l] = T::one();
    }
    Ok(t)
}

/// Replicates the one-hot vector over an `h × w` plane: channel `c` is the constant `one_hot[c]`.
pub fn broadcast_label<T: Element>(y: &ConditionVector<T>, h: usize, w: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(h * w * NUM_CLASSES);
    for _ in 0..h * w {
        data.extend_from_slice(y.one_hot.data());
    }
    Tensor::new(&[h, w, NUM_CLASSES], data).unwrap()
}

/// `(N, h, w, 7)` label planes for a batch.
pub fn label_planes<T: Element>(labels: &[usize], h: usize, w: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(labels.len() * h * w * NUM_CLASSES);
    for &l in labels {
        let y = ConditionVector::<T>::new(l)?;
        data.extend_from_slice(broadcast_label(&y, h, w).data());
    }
    Tensor::new(&[labels.len(), h, w, NUM_CLASSES], data)
}

#[derive(Debug, Clone)]
pub struct Generator<T: Element> {
    pub config: ArchConfig,
    pub dense: Dense<T>,
    pub blocks: Vec<(Deconv2d<T>, BatchNorm<T>)>,
    pub output: Deconv2d<T>,
}

impl<T: Element> Generator<T> {
    pub fn new<R: Rng + ?Sized>(config: &ArchConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let b = config.base_filters;
        let s = config.seed_extent();
        let dense = Dense::new("gen.dense", config.generator_input(), s * s * 8 * b, rng);
        let widths = [8 * b, 4 * b, 2 * b, b];
        let blocks = (0..3)
            .map(|i| {
                (
                    Deconv2d::new(
                        &format!("gen.deconv{}", i + 1),
                        widths[i],
                        widths[i + 1],
                        KERNEL,
                        2,
                        rng,
                    ),
                    BatchNorm::new(&format!("gen.bn{}", i + 1), widths[i + 1]),
                )
            })
            .collect();
        let output = Deconv2d::new("gen.out", b, 1, KERNEL, 1, rng);
        Ok(Generator {
            config: config.clone(),
            dense,
            blocks,
            output,
        })
    }

    /// `z` is `(N, latent_dim)`; returns `(N, image, image, 1)` in `[-1, 1]`.
    pub fn forward(
        &mut self,
        g: &mut Graph<T>,
        z: Var,
        labels: &[usize],
        mode: Mode,
    ) -> Result<Var> {
        self.forward_traced(g, z, labels, mode, &mut Vec::new())
    }

    /// [`Generator::forward`] that also records the shape after each stage.
    pub fn forward_traced(
        &mut self,
        g: &mut Graph<T>,
        z: Var,
        labels: &[usize],
        mode: Mode,
        trace: &mut Vec<Vec<usize>>,
    ) -> Result<Var> {
        let n = labels.len();
        if g.shape(z) != [n, self.config.latent_dim] {
            return Err(Error::dim(
                "generator",
                format!(
                    "noise {:?} does not match {} labels × latent {}",
                    g.shape(z),
                    n,
                    self.config.latent_dim
                ),
            ));
        }
        let y = g.constant(one_hot_batch(labels)?);
        let joint = g.concat(&[z, y], 1)?;
        trace.push(g.shape(joint).to_vec());
        let h = self.dense.forward(g, joint)?;
        trace.push(g.shape(h).to_vec());
        let s = self.config.seed_extent();
        let mut h = g.reshape(h, &[n, s, s, 8 * self.config.base_filters])?;
        trace.push(g.shape(h).to_vec());
        for (deconv, bn) in &mut self.blocks {
            h = deconv.forward(g, h)?;
            h = bn.forward(g, h, mode)?;
            h = g.activation(h, self.config.generator_activation)?;
            trace.push(g.shape(h).to_vec());
        }
        let h = self.output.forward(g, h)?;
        let out = g.tanh(h)?;
        trace.push(g.shape(out).to_vec());
        Ok(out)
    }

    /// Inference-mode sampling outside of any training graph.
    pub fn generate(&mut self, z: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let out = self.forward(&mut g, zv, labels, Mode::Infer)?;
        Ok(g.value(out).clone())
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut p = self.dense.params();
        for (d, bn) in &self.blocks {
            p.extend(d.params());
            p.extend(bn.params());
        }
        p.extend(self.output.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut p = self.dense.params_mut();
        for (d, bn) in &mut self.blocks {
            p.extend(d.params_mut());
            p.extend(bn.params_mut());
        }
        p.extend(self.output.params_mut());
        p
    }

    /// Every persistent tensor (parameters, then batch-norm running statistics) by name.
    pub fn state(&self) -> Vec<(String, &Tensor<T>)> {
        let mut s: Vec<(String, &Tensor<T>)> = self
            .params()
            .into_iter()
            .map(|p| (p.name.clone(), &p.value))
            .collect();
        for (_, bn) in &self.blocks {
            s.extend(bn.buffers());
        }
        s
    }

    pub fn state_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut s: Vec<(String, &mut Tensor<T>)> = Vec::new();
        let Generator {
            dense,
            blocks,
            output,
            ..
        } = self;
        for p in dense.params_mut() {
            s.push((p.name.clone(), &mut p.value));
        }
        let mut buffers = Vec::new();
        for (d, bn) in blocks.iter_mut() {
            for p in d.params_mut() {
                s.push((p.name.clone(), &mut p.value));
            }
            let BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
                ..
            } = bn;
            let base = gamma.name.trim_end_matches(".gamma").to_string();
            s.push((gamma.name.clone(), &mut gamma.value));
            s.push((beta.name.clone(), &mut beta.value));
            buffers.push((format!("{base}.running_mean"), running_mean));
            buffers.push((format!("{base}.running_var"), running_var));
        }
        for p in output.params_mut() {
            s.push((p.name.clone(), &mut p.value));
        }
        s.extend(buffers);
        s
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    pub fn accumulate(&mut self, grads: &Gradients<T>) -> Result<()> {
        for p in self.params_mut() {
            p.accumulate(grads)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Discriminator<T: Element> {
    pub config: ArchConfig,
    pub convs: Vec<Conv2d<T>>,
    pub head: Dense<T>,
}

impl<T: Element> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(config: &ArchConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let b = config.base_filters;
        let widths = [1 + NUM_CLASSES, b, 2 * b, 4 * b, 8 * b];
        let convs = (0..4)
            .map(|i| {
                Conv2d::new(
                    &format!("disc.conv{}", i + 1),
                    widths[i],
                    widths[i + 1],
                    KERNEL,
                    2,
                    true,
                    rng,
                )
            })
            .collect();
        let head = Dense::new("disc.dense", config.flatten_width(), 1, rng);
        Ok(Discriminator {
            config: config.clone(),
            convs,
            head,
        })
    }

    /// Zeroes the final dense layer so the network outputs exactly 0.5.
    pub fn zero_head(&mut self) {
        self.head.kernel.value.fill(T::zero());
        self.head.bias.value.fill(T::zero());
    }

    /// One round of power iteration on every spectrally normalized conv.
    pub fn update_spectral(&mut self) -> Result<()> {
        self.convs.iter_mut().try_for_each(|c| c.update_spectral())
    }

    /// Pre-sigmoid scores `(N, 1)` for `images` `(N, H, W, 1)` conditioned on `labels`.
    pub fn forward_logits<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        images: Var,
        labels: &[usize],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        self.forward_traced(g, images, labels, mode, rng, &mut Vec::new())
    }

    /// [`Discriminator::forward_logits`] that also records the shape after each stage.
    pub fn forward_traced<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        images: Var,
        labels: &[usize],
        mode: Mode,
        rng: &mut R,
        trace: &mut Vec<Vec<usize>>,
    ) -> Result<Var> {
        let size = self.config.image_size;
        let expected = [labels.len(), size, size, 1];
        if g.shape(images) != expected {
            return Err(Error::dim(
                "discriminator",
                format!("images {:?}, expected {expected:?}", g.shape(images)),
            ));
        }
        let planes = g.constant(label_planes(labels, size, size)?);
        let mut h = g.concat(&[images, planes], 3)?;
        trace.push(g.shape(h).to_vec());
        for conv in &self.convs {
            h = conv.forward(g, h)?;
            h = g.leaky_relu(h, self.config.discriminator_slope)?;
            h = dropout(g, h, self.config.dropout, mode, rng)?;
            trace.push(g.shape(h).to_vec());
        }
        let h = g.flatten(h)?;
        trace.push(g.shape(h).to_vec());
        let out = self.head.forward(g, h)?;
        trace.push(g.shape(out).to_vec());
        Ok(out)
    }

    /// Probability `(N, 1)` that each image is real for its label.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        images: Var,
        labels: &[usize],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let logits = self.forward_logits(g, images, labels, mode, rng)?;
        g.sigmoid(logits)
    }

    /// Inference-mode scores outside of any training graph.
    pub fn score(&self, images: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        // infer mode draws no random numbers
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let p = self.forward(&mut g, x, labels, Mode::Infer, &mut rng)?;
        Ok(g.value(p).clone())
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut p: Vec<&Parameter<T>> = self.convs.iter().flat_map(|c| c.params()).collect();
        p.extend(self.head.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut p: Vec<&mut Parameter<T>> =
            self.convs.iter_mut().flat_map(|c| c.params_mut()).collect();
        p.extend(self.head.params_mut());
        p
    }

    /// Every persistent tensor (parameters, then spectral state) by name.
    pub fn state(&self) -> Vec<(String, &Tensor<T>)> {
        let mut s: Vec<(String, &Tensor<T>)> = self
            .params()
            .into_iter()
            .map(|p| (p.name.clone(), &p.value))
            .collect();
        for c in &self.convs {
            s.extend(c.buffers());
        }
        s
    }

    pub fn state_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut s: Vec<(String, &mut Tensor<T>)> = Vec::new();
        let mut buffers = Vec::new();
        for c in self.convs.iter_mut() {
            let Conv2d {
                kernel,
                bias,
                spectral,
                ..
            } = c;
            let base = kernel.name.trim_end_matches(".kernel").to_string();
            s.push((kernel.name.clone(), &mut kernel.value));
            s.push((bias.name.clone(), &mut bias.value));
            if let Some(sn) = spectral {
                buffers.push((format!("{base}.sn_u"), &mut sn.u));
                buffers.push((format!("{base}.sn_v"), &mut sn.v));
            }
        }
        for p in self.head.params_mut() {
            s.push((p.name.clone(), &mut p.value));
        }
        s.extend(buffers);
        s
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    pub fn accumulate(&mut self, grads: &Gradients<T>) -> Result<()> {
        for p in self.params_mut() {
            p.accumulate(grads)?;
        }
        Ok(())
    }
}
