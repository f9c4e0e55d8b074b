//! Adversarial binary cross-entropy losses.

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::tensor::Element;

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Real,
    Fake,
}

/// Batch-mean `−[t·ln p + (1 − t)·ln(1 − p)]`.
pub fn bce<T: Element>(g: &mut Graph<T>, p: Var, target: Target) -> Var {
    let t = match target {
        Target::Real => T::one(),
        Target::Fake => T::zero(),
    };
    g.bce(p, t, T::lit(PROB_CLAMP))
}

/// Discriminator loss: `bce(real, 1) + bce(fake, 0)`.
///
/// Callers detach generated images before scoring them so only the
/// discriminator receives gradient.
pub fn d_loss<T: Element>(g: &mut Graph<T>, real_p: Var, fake_p: Var) -> Result<Var> {
    let real = bce(g, real_p, Target::Real);
    let fake = bce(g, fake_p, Target::Fake);
    g.add(real, fake)
}

/// Non-saturating generator loss: `bce(fake, 1)`.
pub fn g_loss<T: Element>(g: &mut Graph<T>, fake_p: Var) -> Var {
    bce(g, fake_p, Target::Real)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use crate::tensor::Tensor;
    use std::f64::consts::LN_2;

    fn eval(p: &[f64], f: impl Fn(&mut Graph<f64>, Var) -> Var) -> f64 {
        let mut g = Graph::new();
        let v = g.constant(Tensor::from_f64(&[p.len(), 1], p).unwrap());
        let l = f(&mut g, v);
        g.value(l).data()[0]
    }

    #[test]
    fn bce_examples() {
        for target in [Target::Real, Target::Fake] {
            let l = eval(&[0.5, 0.5], |g, p| bce(g, p, target));
            assert!((l - LN_2).abs() < 1e-12);
        }
        let l = eval(&[1.0], |g, p| bce(g, p, Target::Real));
        assert!(l <= 1.2e-7 && l > 0.0);
        let l = eval(&[0.9, 0.8], |g, p| bce(g, p, Target::Real));
        assert!((l - 0.1643).abs() < 1e-4);
    }

    #[test]
    fn bce_clamp_in_single_precision() {
        let mut g = Graph::<f32>::new();
        let p = g.constant(Tensor::from_f64(&[1, 1], &[1.0]).unwrap());
        let l = bce(&mut g, p, Target::Real);
        assert!(g.value(l).data()[0] <= 1.2e-7);
        let q = g.constant(Tensor::from_f64(&[1, 1], &[0.0]).unwrap());
        let l = bce(&mut g, q, Target::Real);
        assert!(g.value(l).data()[0].is_finite());
    }

    #[test]
    fn bce_propagates_nan() {
        let l = eval(&[0.5, f64::NAN], |g, p| bce(g, p, Target::Real));
        assert!(l.is_nan());
    }

    #[test]
    fn d_loss_examples() {
        let mut g = Graph::<f64>::new();
        let r = g.constant(Tensor::from_f64(&[2, 1], &[0.5, 0.5]).unwrap());
        let f = g.constant(Tensor::from_f64(&[2, 1], &[0.5, 0.5]).unwrap());
        let l = d_loss(&mut g, r, f).unwrap();
        assert!((g.value(l).data()[0] - 2.0 * LN_2).abs() < 1e-12);

        let r = g.constant(Tensor::from_f64(&[1, 1], &[1.0]).unwrap());
        let f = g.constant(Tensor::from_f64(&[1, 1], &[0.0]).unwrap());
        let l = d_loss(&mut g, r, f).unwrap();
        assert!(g.value(l).data()[0] < 1e-6);

        let r = g.constant(Tensor::from_f64(&[1, 1], &[0.9]).unwrap());
        let f = g.constant(Tensor::from_f64(&[1, 1], &[0.2]).unwrap());
        let l = d_loss(&mut g, r, f).unwrap();
        let expect = -(0.9f64.ln()) - 0.8f64.ln();
        assert!((g.value(l).data()[0] - expect).abs() < 1e-12);
        assert!((expect - 0.3285).abs() < 1e-4);
    }

    #[test]
    fn g_loss_examples() {
        assert!((eval(&[0.5], g_loss) - LN_2).abs() < 1e-12);
        assert!(eval(&[1.0], g_loss) < 1e-6);
        let l = eval(&[0.25, 0.75], g_loss);
        assert!((l - 0.8370).abs() < 1e-4);
    }

    #[test]
    fn bce_gradient() {
        let p = Tensor::from_f64(&[3, 1], &[0.2, 0.55, 0.9]).unwrap();
        for target in [Target::Real, Target::Fake] {
            let err = finite_diff_check(|g, v| Ok(bce(g, v, target)), &p, 1e-6).unwrap();
            assert!(err < 1e-6, "{err}");
        }
    }
}
