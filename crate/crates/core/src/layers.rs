//! Neural layers shared by both networks.

use log::warn;
use rand::Rng;

use crate::autodiff::{Graph, Parameter, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Standard deviation of the normal kernel initializer.
pub const INIT_STD: f64 = 0.02;
pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

fn init_kernel<T: Element, R: Rng + ?Sized>(
    name: String,
    shape: &[usize],
    rng: &mut R,
) -> Parameter<T> {
    Parameter::new(name, Tensor::randn(shape, INIT_STD, rng))
}

fn zero_bias<T: Element>(name: String, len: usize) -> Parameter<T> {
    Parameter::new(name, Tensor::zeros(&[len]))
}

/// Fully connected layer: `x · kernel + bias`.
#[derive(Debug, Clone)]
pub struct Dense<T: Element> {
    pub kernel: Parameter<T>,
    pub bias: Parameter<T>,
}

impl<T: Element> Dense<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Dense {
            kernel: init_kernel(format!("{name}.kernel"), &[inputs, outputs], rng),
            bias: zero_bias(format!("{name}.bias"), outputs),
        }
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let k = g.param(&self.kernel);
        let b = g.param(&self.bias);
        let y = g.matmul(x, k)?;
        g.add(y, b)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.kernel, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.kernel, &self.bias]
    }
}

/// Power-iteration state for spectral normalization of a conv kernel.
///
/// The kernel `[kh, kw, c_in, c_out]` is viewed as the matrix `W` of shape
/// `(c_out, kh·kw·c_in)`. `u` has length `c_out` and `v` has length `kh·kw·c_in`.
#[derive(Debug, Clone)]
pub struct SpectralState<T: Element> {
    pub u: Tensor<T>,
    pub v: Tensor<T>,
    pub iterations: usize,
}

impl<T: Element> SpectralState<T> {
    pub fn new<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let mut u = Tensor::<f64>::randn(&[rows], 1.0, rng).into_data();
        normalize(&mut u);
        let mut v = Tensor::<f64>::randn(&[cols], 1.0, rng).into_data();
        normalize(&mut v);
        SpectralState {
            u: Tensor::new(&[rows], u.into_iter().map(T::lit).collect()).unwrap(),
            v: Tensor::new(&[cols], v.into_iter().map(T::lit).collect()).unwrap(),
            iterations: 1,
        }
    }

    /// Runs `steps` rounds of `v ← Wᵀu/‖Wᵀu‖, u ← Wv/‖Wv‖`. A zero kernel leaves the state unchanged.
    pub fn power_iterate(&mut self, kernel: &Tensor<T>, steps: usize) -> Result<()> {
        let (rows, cols) = self.check(kernel)?;
        let k: Vec<f64> = kernel.to_f64_vec();
        let mut u = self.u.to_f64_vec();
        let mut v = self.v.to_f64_vec();
        for _ in 0..steps {
            let mut wt_u = vec![0.0; cols];
            for (j, out) in wt_u.iter_mut().enumerate() {
                let row = &k[j * rows..(j + 1) * rows];
                *out = row.iter().zip(&u).map(|(a, b)| a * b).sum();
            }
            if norm(&wt_u) < 1e-12 {
                warn!("spectral normalization skipped: kernel is numerically zero");
                return Ok(());
            }
            normalize(&mut wt_u);
            v = wt_u;
            let mut w_v = vec![0.0; rows];
            for (j, &vj) in v.iter().enumerate() {
                let row = &k[j * rows..(j + 1) * rows];
                for (o, &kv) in w_v.iter_mut().zip(row) {
                    *o += kv * vj;
                }
            }
            if norm(&w_v) < 1e-12 {
                warn!("spectral normalization skipped: kernel is numerically zero");
                return Ok(());
            }
            normalize(&mut w_v);
            u = w_v;
        }
        self.u = Tensor::new(&[rows], u.into_iter().map(T::lit).collect())?;
        self.v = Tensor::new(&[cols], v.into_iter().map(T::lit).collect())?;
        Ok(())
    }

    /// `σ̂ = uᵀ W v` for the current kernel, or `None` when it is not positive.
    pub fn sigma(&self, kernel: &Tensor<T>) -> Result<Option<f64>> {
        let (rows, _) = self.check(kernel)?;
        let u = self.u.to_f64_vec();
        let mut s = 0.0;
        for (j, &vj) in self.v.data().iter().enumerate() {
            let row = &kernel.data()[j * rows..(j + 1) * rows];
            let dot: f64 = row.iter().zip(&u).map(|(a, b)| a.as_f64() * b).sum();
            s += dot * vj.as_f64();
        }
        Ok((s > 1e-12).then_some(s))
    }

    fn check(&self, kernel: &Tensor<T>) -> Result<(usize, usize)> {
        let rows = *kernel.shape().last().unwrap();
        let cols = kernel.len() / rows;
        if rows != self.u.len() || cols != self.v.len() {
            return Err(Error::dim(
                "spectral_normalize",
                format!(
                    "kernel {:?} does not match state u[{}], v[{}]",
                    kernel.shape(),
                    self.u.len(),
                    self.v.len()
                ),
            ));
        }
        Ok((rows, cols))
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn normalize(x: &mut [f64]) {
    let n = norm(x).max(1e-12);
    x.iter_mut().for_each(|v| *v /= n);
}

/// Runs power iteration on `state` and returns `kernel / σ̂` together with `σ̂`.
/// A numerically zero kernel is returned unchanged with `σ̂ = 1`.
pub fn spectral_normalize<T: Element>(
    kernel: &Tensor<T>,
    state: &mut SpectralState<T>,
    steps: usize,
) -> Result<(Tensor<T>, f64)> {
    state.power_iterate(kernel, steps)?;
    match state.sigma(kernel)? {
        Some(s) => {
            let inv = T::lit(1.0 / s);
            Ok((kernel.map(|x| x * inv), s))
        }
        None => {
            warn!("spectral normalization skipped: sigma is not positive");
            Ok((kernel.clone(), 1.0))
        }
    }
}

/// Strided 2-D convolution with "same" padding and optional spectral normalization.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Element> {
    pub kernel: Parameter<T>,
    pub bias: Parameter<T>,
    pub stride: usize,
    pub spectral: Option<SpectralState<T>>,
    name: String,
}

impl<T: Element> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        spectral: bool,
        rng: &mut R,
    ) -> Self {
        let k = init_kernel(
            format!("{name}.kernel"),
            &[kernel, kernel, c_in, c_out],
            rng,
        );
        let spectral = spectral.then(|| {
            let mut s = SpectralState::new(c_out, kernel * kernel * c_in, rng);
            s.power_iterate(&k.value, 1)
                .expect("state built for this kernel");
            s
        });
        Conv2d {
            kernel: k,
            bias: zero_bias(format!("{name}.bias"), c_out),
            stride,
            spectral,
            name: name.to_string(),
        }
    }

    /// Advances the spectral power iteration by the configured number of steps.
    pub fn update_spectral(&mut self) -> Result<()> {
        if let Some(s) = &mut self.spectral {
            let steps = s.iterations;
            s.power_iterate(&self.kernel.value, steps)?;
        }
        Ok(())
    }

    /// Forward pass; the spectral estimate is read from the stored state and treated as a constant.
    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let mut k = g.param(&self.kernel);
        if let Some(s) = &self.spectral {
            if let Some(sigma) = s.sigma(&self.kernel.value)? {
                k = g.scale(k, T::lit(1.0 / sigma));
            }
        }
        let b = g.param(&self.bias);
        let y = g.conv2d(x, k, self.stride)?;
        g.add(y, b)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.kernel, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.kernel, &self.bias]
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        match &self.spectral {
            Some(s) => vec![
                (format!("{}.sn_u", self.name), &s.u),
                (format!("{}.sn_v", self.name), &s.v),
            ],
            None => vec![],
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        match &mut self.spectral {
            Some(s) => vec![
                (format!("{}.sn_u", self.name), &mut s.u),
                (format!("{}.sn_v", self.name), &mut s.v),
            ],
            None => vec![],
        }
    }
}

/// Transposed convolution; output extent is input extent × stride.
#[derive(Debug, Clone)]
pub struct Deconv2d<T: Element> {
    pub kernel: Parameter<T>,
    pub bias: Parameter<T>,
    pub stride: usize,
}

impl<T: Element> Deconv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        Deconv2d {
            kernel: init_kernel(
                format!("{name}.kernel"),
                &[kernel, kernel, c_out, c_in],
                rng,
            ),
            bias: zero_bias(format!("{name}.bias"), c_out),
            stride,
        }
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let k = g.param(&self.kernel);
        let b = g.param(&self.bias);
        let y = g.conv2d_transpose(x, k, self.stride)?;
        g.add(y, b)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.kernel, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.kernel, &self.bias]
    }
}

/// Per-channel batch normalization with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm<T: Element> {
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub epsilon: f64,
    name: String,
}

impl<T: Element> BatchNorm<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: Parameter::new(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
            name: name.to_string(),
        }
    }

    /// Train mode normalizes by batch statistics and folds them into the running
    /// statistics (`r ← momentum·r + (1 − momentum)·batch`, unbiased variance).
    pub fn forward(&mut self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<Var> {
        let gamma = g.param(&self.gamma);
        let beta = g.param(&self.beta);
        match mode {
            Mode::Train => {
                let (y, mean, var) = g.batch_norm_train(x, gamma, beta, self.epsilon)?;
                let m = g.value(x).len() / mean.len();
                let unbias = T::lit(m as f64 / (m as f64 - 1.0));
                let mom = T::lit(self.momentum);
                let rest = T::one() - mom;
                for (r, &b) in self.running_mean.data_mut().iter_mut().zip(&mean) {
                    *r = mom * *r + rest * b;
                }
                for (r, &b) in self.running_var.data_mut().iter_mut().zip(&var) {
                    *r = mom * *r + rest * b * unbias;
                }
                Ok(y)
            }
            Mode::Infer => g.batch_norm_fixed(
                x,
                gamma,
                beta,
                self.running_mean.data(),
                self.running_var.data(),
                self.epsilon,
            ),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.gamma, &self.beta]
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            (format!("{}.running_mean", self.name), &self.running_mean),
            (format!("{}.running_var", self.name), &self.running_var),
        ]
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![
            (
                format!("{}.running_mean", self.name),
                &mut self.running_mean,
            ),
            (format!("{}.running_var", self.name), &mut self.running_var),
        ]
    }
}

/// Inverted dropout: in train mode each element is zeroed with probability `rate`
/// and survivors are scaled by `1 / (1 − rate)`; infer mode is the identity.
pub fn dropout<T: Element, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    x: Var,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Contract(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    if rate == 0.0 || mode == Mode::Infer {
        return Ok(x);
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let shape = g.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let mask = (0..n)
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    let m = g.constant(Tensor::new(&shape, mask)?);
    g.mul(x, m)
}
