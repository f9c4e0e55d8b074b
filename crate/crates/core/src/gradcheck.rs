//! Finite-difference verification of every differentiable operation, in 64-bit mode.
//!
//! Each check differentiates `sum(r ⊙ op(x))` for a fixed random `r`, so every output
//! element contributes with a distinct weight.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{finite_diff_check, Activation, Graph, Parameter, Var};
use crate::error::{Error, Result};
use crate::layers::{dropout, BatchNorm, Conv2d, Deconv2d, Dense, Mode};
use crate::loss;
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub error: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.error < TOLERANCE
    }
}

/// Reduces `y` to `sum(r ⊙ y)` with `r` fixed by the shape of `y`.
fn project(g: &mut Graph<f64>, y: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(shape.iter().product::<usize>() as u64);
    let r = g.constant(Tensor::rand_uniform(&shape, -1.0, 1.0, &mut rng));
    let w = g.mul(y, r)?;
    Ok(g.sum(w))
}

/// Random values in `[-1, -0.1] ∪ [0.1, 1]`, away from activation kinks.
fn off_kink(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, v).unwrap()
}

/// Gradient of `f` with respect to the parameter selected by `pick`, against central
/// differences taken by perturbing that parameter on clones of `layer`.
fn check_param<L: Clone>(
    layer: &L,
    pick: fn(&mut L) -> &mut Parameter<f64>,
    f: impl Fn(&mut Graph<f64>, &mut L) -> Result<Var>,
) -> Result<f64> {
    let mut base = layer.clone();
    let mut g = Graph::new();
    let out = f(&mut g, &mut base)?;
    let grads = g.backward(out)?;
    let p = pick(&mut base);
    let analytic = grads
        .param(&p.name)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(p.value.shape()));
    let eval = |delta: f64, i: usize| -> Result<f64> {
        let mut l = layer.clone();
        pick(&mut l).value.data_mut()[i] += delta;
        let mut g = Graph::new();
        let out = f(&mut g, &mut l)?;
        let y = g.value(out).item()?;
        if !y.is_finite() {
            return Err(Error::Oracle(format!("f evaluated to {y}")));
        }
        Ok(y)
    };
    let mut worst: f64 = 0.0;
    for i in 0..analytic.len() {
        let central = (eval(STEP, i)? - eval(-STEP, i)?) / (2.0 * STEP);
        worst = worst.max((analytic.data()[i] - central).abs() / central.abs().max(1.0));
    }
    Ok(worst)
}

fn dense_kernel(l: &mut Dense<f64>) -> &mut Parameter<f64> {
    &mut l.kernel
}
fn dense_bias(l: &mut Dense<f64>) -> &mut Parameter<f64> {
    &mut l.bias
}
fn conv_kernel(l: &mut Conv2d<f64>) -> &mut Parameter<f64> {
    &mut l.kernel
}
fn conv_bias(l: &mut Conv2d<f64>) -> &mut Parameter<f64> {
    &mut l.bias
}
fn deconv_kernel(l: &mut Deconv2d<f64>) -> &mut Parameter<f64> {
    &mut l.kernel
}
fn deconv_bias(l: &mut Deconv2d<f64>) -> &mut Parameter<f64> {
    &mut l.bias
}
fn bn_gamma(l: &mut BatchNorm<f64>) -> &mut Parameter<f64> {
    &mut l.gamma
}
fn bn_beta(l: &mut BatchNorm<f64>) -> &mut Parameter<f64> {
    &mut l.beta
}

/// Runs every check; returns one entry per (operation, argument).
pub fn run_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name: &str, error: f64| {
        out.push(GradCheck {
            name: name.to_string(),
            error,
        })
    };

    // graph primitives
    let a = Tensor::randn(&[3, 4], 1.0, &mut rng);
    let b = Tensor::randn(&[4, 2], 1.0, &mut rng);
    let bc = b.clone();
    push(
        "matmul wrt a",
        finite_diff_check(
            |g, x| {
                let w = g.constant(bc.clone());
                let y = g.matmul(x, w)?;
                project(g, y)
            },
            &a,
            STEP,
        )?,
    );
    let row = Tensor::randn(&[4], 1.0, &mut rng);
    let ac = a.clone();
    push(
        "broadcast add wrt row",
        finite_diff_check(
            |g, x| {
                let m = g.constant(ac.clone());
                let y = g.add(m, x)?;
                project(g, y)
            },
            &row,
            STEP,
        )?,
    );
    let other = Tensor::randn(&[3, 2], 1.0, &mut rng);
    push(
        "concat wrt first",
        finite_diff_check(
            |g, x| {
                let o = g.constant(other.clone());
                let y = g.concat(&[x, o], 1)?;
                project(g, y)
            },
            &a,
            STEP,
        )?,
    );

    // activations
    let x = off_kink(&[3, 4], &mut rng);
    for (name, act) in [
        ("leaky_relu(0.4)", Activation::LeakyRelu(0.4)),
        ("relu", Activation::Relu),
        ("tanh", Activation::Tanh),
        ("sigmoid", Activation::Sigmoid),
    ] {
        push(
            name,
            finite_diff_check(
                |g, v| {
                    let y = g.activation(v, act)?;
                    project(g, y)
                },
                &x,
                STEP,
            )?,
        );
    }

    // dense
    let dense = Dense::<f64>::new("dense", 3, 4, &mut rng);
    let dense = randomize(dense, |l| vec![&mut l.kernel, &mut l.bias], &mut rng);
    let x = Tensor::randn(&[2, 3], 1.0, &mut rng);
    push(
        "dense wrt input",
        finite_diff_check(
            |g, v| {
                let y = dense.forward(g, v)?;
                project(g, y)
            },
            &x,
            STEP,
        )?,
    );
    let xc = x.clone();
    let f = move |g: &mut Graph<f64>, l: &mut Dense<f64>| {
        let v = g.constant(xc.clone());
        let y = l.forward(g, v)?;
        project(g, y)
    };
    push("dense wrt kernel", check_param(&dense, dense_kernel, &f)?);
    push("dense wrt bias", check_param(&dense, dense_bias, &f)?);

    // conv2d, both strides
    for stride in [1, 2] {
        let conv = Conv2d::<f64>::new("conv", 2, 3, 4, stride, false, &mut rng);
        let conv = randomize(conv, |l| vec![&mut l.kernel, &mut l.bias], &mut rng);
        let x = Tensor::randn(&[2, 4, 4, 2], 1.0, &mut rng);
        push(
            &format!("conv2d s{stride} wrt input"),
            finite_diff_check(
                |g, v| {
                    let y = conv.forward(g, v)?;
                    project(g, y)
                },
                &x,
                STEP,
            )?,
        );
        let xc = x.clone();
        let f = move |g: &mut Graph<f64>, l: &mut Conv2d<f64>| {
            let v = g.constant(xc.clone());
            let y = l.forward(g, v)?;
            project(g, y)
        };
        push(
            &format!("conv2d s{stride} wrt kernel"),
            check_param(&conv, conv_kernel, &f)?,
        );
        push(
            &format!("conv2d s{stride} wrt bias"),
            check_param(&conv, conv_bias, &f)?,
        );
    }

    // conv2d_transpose, both strides
    for (stride, extent) in [(1, 4), (2, 2)] {
        let de = Deconv2d::<f64>::new("deconv", 3, 2, 4, stride, &mut rng);
        let de = randomize(de, |l| vec![&mut l.kernel, &mut l.bias], &mut rng);
        let x = Tensor::randn(&[2, extent, extent, 3], 1.0, &mut rng);
        push(
            &format!("conv2d_transpose s{stride} wrt input"),
            finite_diff_check(
                |g, v| {
                    let y = de.forward(g, v)?;
                    project(g, y)
                },
                &x,
                STEP,
            )?,
        );
        let xc = x.clone();
        let f = move |g: &mut Graph<f64>, l: &mut Deconv2d<f64>| {
            let v = g.constant(xc.clone());
            let y = l.forward(g, v)?;
            project(g, y)
        };
        push(
            &format!("conv2d_transpose s{stride} wrt kernel"),
            check_param(&de, deconv_kernel, &f)?,
        );
        push(
            &format!("conv2d_transpose s{stride} wrt bias"),
            check_param(&de, deconv_bias, &f)?,
        );
    }

    // batch norm in both modes
    let mut bn = BatchNorm::<f64>::new("bn", 3);
    bn = randomize(bn, |l| vec![&mut l.gamma, &mut l.beta], &mut rng);
    bn.running_mean = Tensor::randn(&[3], 0.5, &mut rng);
    bn.running_var = Tensor::rand_uniform(&[3], 0.5, 2.0, &mut rng);
    let x = Tensor::randn(&[4, 2, 2, 3], 1.0, &mut rng);
    for (mode, label) in [(Mode::Train, "train"), (Mode::Infer, "infer")] {
        push(
            &format!("batchnorm {label} wrt input"),
            finite_diff_check(
                |g, v| {
                    let y = bn.clone().forward(g, v, mode)?;
                    project(g, y)
                },
                &x,
                STEP,
            )?,
        );
        let xc = x.clone();
        let f = move |g: &mut Graph<f64>, l: &mut BatchNorm<f64>| {
            let v = g.constant(xc.clone());
            let y = l.forward(g, v, mode)?;
            project(g, y)
        };
        push(
            &format!("batchnorm {label} wrt gamma"),
            check_param(&bn, bn_gamma, &f)?,
        );
        push(
            &format!("batchnorm {label} wrt beta"),
            check_param(&bn, bn_beta, &f)?,
        );
    }

    // dropout with a fixed mask
    let x = Tensor::randn(&[4, 4], 1.0, &mut rng);
    push(
        "dropout(0.3) wrt input",
        finite_diff_check(
            |g, v| {
                let mut r = ChaCha8Rng::seed_from_u64(11);
                let y = dropout(g, v, 0.3, Mode::Train, &mut r)?;
                project(g, y)
            },
            &x,
            STEP,
        )?,
    );

    // losses on probabilities inside the clamp range
    let p = Tensor::rand_uniform(&[4, 1], 0.05, 0.95, &mut rng);
    let q = Tensor::rand_uniform(&[4, 1], 0.05, 0.95, &mut rng);
    push(
        "bce(real) wrt p",
        finite_diff_check(|g, v| Ok(loss::bce(g, v, loss::Target::Real)), &p, STEP)?,
    );
    push(
        "bce(fake) wrt p",
        finite_diff_check(|g, v| Ok(loss::bce(g, v, loss::Target::Fake)), &p, STEP)?,
    );
    let qc = q.clone();
    push(
        "d_loss wrt real_p",
        finite_diff_check(
            |g, v| {
                let f = g.constant(qc.clone());
                loss::d_loss(g, v, f)
            },
            &p,
            STEP,
        )?,
    );
    let pc = p.clone();
    push(
        "d_loss wrt fake_p",
        finite_diff_check(
            |g, v| {
                let r = g.constant(pc.clone());
                loss::d_loss(g, r, v)
            },
            &q,
            STEP,
        )?,
    );
    push(
        "g_loss wrt fake_p",
        finite_diff_check(|g, v| Ok(loss::g_loss(g, v)), &q, STEP)?,
    );

    // spectrally normalized conv; the estimate is a constant of the forward pass
    let mut sn = Conv2d::<f64>::new("sn", 2, 3, 4, 2, true, &mut rng);
    sn = randomize(sn, |l| vec![&mut l.kernel, &mut l.bias], &mut rng);
    for _ in 0..5 {
        sn.update_spectral()?;
    }
    let sigma = sn
        .spectral
        .as_ref()
        .and_then(|s| s.sigma(&sn.kernel.value).ok().flatten())
        .ok_or_else(|| Error::Oracle("spectral estimate is not positive".into()))?;
    let x = Tensor::randn(&[2, 4, 4, 2], 1.0, &mut rng);
    push(
        "spectral conv2d wrt input",
        finite_diff_check(
            |g, v| {
                let y = sn.forward(g, v)?;
                project(g, y)
            },
            &x,
            STEP,
        )?,
    );
    let xc = x.clone();
    let stride = sn.stride;
    let bias = sn.bias.value.clone();
    push(
        "spectral conv2d wrt kernel (frozen sigma)",
        finite_diff_check(
            |g, k| {
                let v = g.constant(xc.clone());
                let k = g.scale(k, 1.0 / sigma);
                let b = g.constant(bias.clone());
                let y = g.conv2d(v, k, stride)?;
                let y = g.add(y, b)?;
                project(g, y)
            },
            &sn.kernel.value,
            STEP,
        )?,
    );
    let xc = x.clone();
    let f = move |g: &mut Graph<f64>, l: &mut Conv2d<f64>| {
        let v = g.constant(xc.clone());
        let y = l.forward(g, v)?;
        project(g, y)
    };
    push("spectral conv2d wrt bias", check_param(&sn, conv_bias, &f)?);

    Ok(out)
}

/// Replaces the selected parameters with unit-scale random values so checks do not
/// run in the tiny-weight regime of the network initializer.
fn randomize<L>(
    mut layer: L,
    pick: fn(&mut L) -> Vec<&mut Parameter<f64>>,
    rng: &mut ChaCha8Rng,
) -> L {
    for p in pick(&mut layer) {
        let shape = p.value.shape().to_vec();
        p.value = Tensor::randn(&shape, 0.5, rng);
    }
    layer
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let results = run_suite(3).unwrap();
        assert!(results.len() >= 30);
        for r in &results {
            assert!(r.passed(), "{} error {:e}", r.name, r.error);
        }
    }
}
