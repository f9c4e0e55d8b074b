use cgan_core::layers::{spectral_normalize, SpectralState};
use cgan_core::Tensor;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `(c_out, kh·kw·c_in)` view of a `[kh, kw, c_in, c_out]` kernel.
fn matrix(kernel: &Tensor<f64>) -> DMatrix<f64> {
    let rows = *kernel.shape().last().unwrap();
    let cols = kernel.len() / rows;
    DMatrix::from_fn(rows, cols, |o, j| kernel.data()[j * rows + o])
}

fn top_singular(m: &DMatrix<f64>) -> f64 {
    let eig = (m.transpose() * m).symmetric_eigen();
    eig.eigenvalues.iter().cloned().fold(0.0, f64::max).sqrt()
}

fn estimate(kernel: &Tensor<f64>, iterations: usize, seed: u64) -> (f64, Tensor<f64>) {
    let rows = *kernel.shape().last().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = SpectralState::new(rows, kernel.len() / rows, &mut rng);
    let (w, sigma) = spectral_normalize(kernel, &mut state, iterations).unwrap();
    (sigma, w)
}

fn singular_values(m: &DMatrix<f64>) -> (f64, f64) {
    let mut ev: Vec<f64> = (m.transpose() * m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    (ev[0].max(0.0).sqrt(), ev[1].max(0.0).sqrt())
}

#[test]
fn eight_by_eighteen_matches_eigendecomposition() {
    let mut separated = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kernel = Tensor::<f64>::randn(&[3, 3, 2, 8], 1.0, &mut rng);
        let (s1, s2) = singular_values(&matrix(&kernel));
        assert!((top_singular(&matrix(&kernel)) - s1).abs() < 1e-9);
        let (sigma, _) = estimate(&kernel, 20, seed + 100);
        let err = (sigma - s1).abs();
        // 20 iterations contract the error by (σ₂/σ₁)^40
        if (s2 / s1).powi(40) < 1e-2 {
            separated += 1;
            assert!(err < 1e-3, "seed {seed}: |σ̂ - σ| = {err:e}");
        }
        assert!(sigma <= s1 * (1.0 + 1e-12));
    }
    assert!(
        separated >= 10,
        "only {separated} of 20 matrices had a usable spectral gap"
    );
}

#[test]
fn repeated_normalization_is_idempotent_at_convergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let kernel = Tensor::<f64>::randn(&[3, 3, 2, 8], 1.0, &mut rng);
    let mut state = SpectralState::new(8, 18, &mut rng);
    let (_, a) = spectral_normalize(&kernel, &mut state, 100).unwrap();
    let (_, b) = spectral_normalize(&kernel, &mut state, 1).unwrap();
    assert!((a - b).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn normalized_kernel_has_unit_top_singular_value(
        seed in any::<u64>(),
        k in 1usize..=4,
        c_out in 1usize..=16,
        c_in_frac in 0.0f64..1.0,
        scale in 0.01f64..10.0,
    ) {
        let c_in = 1 + (c_in_frac * (64 / (k * k)) as f64) as usize;
        let c_in = c_in.min(64 / (k * k));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kernel = Tensor::<f64>::randn(&[k, k, c_in, c_out], scale, &mut rng);
        let (sigma, w) = estimate(&kernel, 200, seed ^ 1);
        let truth = top_singular(&matrix(&kernel));
        prop_assert!(sigma <= truth * (1.0 + 1e-9));
        prop_assert!((top_singular(&matrix(&w)) - 1.0).abs() < 1e-2);
    }
}
