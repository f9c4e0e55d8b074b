use cgan_core::autodiff::finite_diff_check;
use cgan_core::layers::Mode;
use cgan_core::loss;
use cgan_core::models::{ArchConfig, Discriminator, Generator};
use cgan_core::{Graph, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn scaled() -> ArchConfig {
    ArchConfig::scaled(16, 8, 16)
}

fn tiny() -> ArchConfig {
    ArchConfig::scaled(3, 1, 16)
}

#[test]
fn scaled_networks_run_end_to_end() {
    let cfg = scaled();
    let mut r = rng(0);
    let mut gen = Generator::<f32>::new(&cfg, &mut r).unwrap();
    let disc = Discriminator::<f32>::new(&cfg, &mut r).unwrap();
    let z = Tensor::randn(&[3, 16], 1.0, &mut r);
    let mut g = Graph::new();
    let zv = g.constant(z);
    let mut trace = Vec::new();
    let img = gen
        .forward_traced(&mut g, zv, &[0, 4, 6], Mode::Train, &mut trace)
        .unwrap();
    assert_eq!(
        trace,
        vec![
            vec![3, 23],
            vec![3, 256],
            vec![3, 2, 2, 64],
            vec![3, 4, 4, 32],
            vec![3, 8, 8, 16],
            vec![3, 16, 16, 8],
            vec![3, 16, 16, 1],
        ]
    );
    let mut dtrace = Vec::new();
    let logits = disc
        .forward_traced(&mut g, img, &[0, 4, 6], Mode::Train, &mut r, &mut dtrace)
        .unwrap();
    assert_eq!(
        dtrace,
        vec![
            vec![3, 16, 16, 8],
            vec![3, 8, 8, 8],
            vec![3, 4, 4, 16],
            vec![3, 2, 2, 32],
            vec![3, 1, 1, 64],
            vec![3, 64],
            vec![3, 1],
        ]
    );
    let p = g.sigmoid(logits).unwrap();
    assert!(g.value(p).data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn zero_head_scores_exactly_half() {
    let cfg = scaled();
    let mut r = rng(1);
    let mut disc = Discriminator::<f64>::new(&cfg, &mut r).unwrap();
    disc.zero_head();
    let images = Tensor::rand_uniform(&[5, 16, 16, 1], -1.0, 1.0, &mut r);
    let p = disc.score(&images, &[0, 1, 2, 3, 4]).unwrap();
    assert!(p.data().iter().all(|&v| v == 0.5));
}

#[test]
fn discriminator_logit_depends_on_label() {
    let cfg = scaled();
    let mut r = rng(2);
    let disc = Discriminator::<f64>::new(&cfg, &mut r).unwrap();
    let image = Tensor::rand_uniform(&[1, 16, 16, 1], -1.0, 1.0, &mut r);
    let logit = |label: usize| {
        let mut g = Graph::new();
        let x = g.constant(image.clone());
        let l = disc
            .forward_logits(&mut g, x, &[label], Mode::Infer, &mut rng(0))
            .unwrap();
        g.value(l).data()[0]
    };
    assert_ne!(logit(2), logit(5));
}

#[test]
fn generator_output_depends_on_label() {
    let cfg = scaled();
    let mut r = rng(3);
    let mut gen = Generator::<f64>::new(&cfg, &mut r).unwrap();
    let z = Tensor::randn(&[1, 16], 1.0, &mut r);
    let a = gen.generate(&z, &[1]).unwrap();
    let b = gen.generate(&z, &[2]).unwrap();
    assert!(a.max_abs_diff(&b) > 0.0);
}

#[test]
fn builds_are_reproducible() {
    let cfg = scaled();
    let a = Generator::<f32>::new(&cfg, &mut rng(9)).unwrap();
    let b = Generator::<f32>::new(&cfg, &mut rng(10)).unwrap();
    let names = |g: &Generator<f32>| -> Vec<(String, Vec<usize>)> {
        g.state()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect()
    };
    assert_eq!(names(&a), names(&b));
    assert_eq!(a.param_count(), b.param_count());
    let c = Generator::<f32>::new(&cfg, &mut rng(9)).unwrap();
    assert_eq!(a.dense.kernel.value, c.dense.kernel.value);
}

#[test]
fn discriminator_loss_leaves_generator_gradients_zero() {
    let cfg = scaled();
    let mut r = rng(4);
    let mut gen = Generator::<f64>::new(&cfg, &mut r).unwrap();
    let disc = Discriminator::<f64>::new(&cfg, &mut r).unwrap();
    let labels = [0, 3];
    let mut g = Graph::new();
    let z = g.constant(Tensor::randn(&[2, 16], 1.0, &mut r));
    let fake = gen.forward(&mut g, z, &labels, Mode::Train).unwrap();
    let fake = g.detach(fake);
    let real = g.constant(Tensor::rand_uniform(&[2, 16, 16, 1], -1.0, 1.0, &mut r));
    let pr = disc
        .forward(&mut g, real, &labels, Mode::Train, &mut r)
        .unwrap();
    let pf = disc
        .forward(&mut g, fake, &labels, Mode::Train, &mut r)
        .unwrap();
    let l = loss::d_loss(&mut g, pr, pf).unwrap();
    let grads = g.backward(l).unwrap();
    let before: Vec<_> = gen.params().iter().map(|p| p.value.clone()).collect();
    gen.zero_grad();
    gen.accumulate(&grads).unwrap();
    for p in gen.params() {
        assert!(
            p.grad.data().iter().all(|&v| v == 0.0),
            "{} has gradient",
            p.name
        );
    }
    let after: Vec<_> = gen.params().iter().map(|p| p.value.clone()).collect();
    assert_eq!(before, after);
    assert!(grads.param("disc.conv1.kernel").is_some());
}

#[test]
fn generator_loss_gradient_through_both_networks() {
    let cfg = tiny();
    let mut r = rng(5);
    let gen = Generator::<f64>::new(&cfg, &mut r).unwrap();
    let mut disc = Discriminator::<f64>::new(&cfg, &mut r).unwrap();
    for p in disc.params_mut() {
        let shape = p.value.shape().to_vec();
        p.value = Tensor::randn(&shape, 0.3, &mut r);
    }
    disc.update_spectral().unwrap();
    let z = Tensor::randn(&[2, 3], 1.0, &mut r);
    let err = finite_diff_check(
        |g, zv| {
            // infer mode keeps the objective a fixed function of z
            let img = gen.clone().forward(g, zv, &[1, 5], Mode::Infer)?;
            let p = disc.forward(g, img, &[1, 5], Mode::Infer, &mut rng(0))?;
            Ok(loss::g_loss(g, p))
        },
        &z,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "g_loss wrt z: {err:e}");
}

#[test]
fn discriminator_loss_gradient_wrt_images() {
    let cfg = tiny();
    let mut r = rng(6);
    let mut disc = Discriminator::<f64>::new(&cfg, &mut r).unwrap();
    for p in disc.params_mut() {
        let shape = p.value.shape().to_vec();
        p.value = Tensor::randn(&shape, 0.3, &mut r);
    }
    disc.update_spectral().unwrap();
    let real = Tensor::rand_uniform(&[2, 16, 16, 1], -1.0, 1.0, &mut r);
    let fake = Tensor::rand_uniform(&[2, 16, 16, 1], -1.0, 1.0, &mut r);
    let err = finite_diff_check(
        |g, x| {
            let f = g.constant(fake.clone());
            let pr = disc.forward(g, x, &[0, 6], Mode::Train, &mut rng(0))?;
            let pf = disc.forward(g, f, &[2, 3], Mode::Train, &mut rng(0))?;
            loss::d_loss(g, pr, pf)
        },
        &real,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "d_loss wrt real images: {err:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generator_output_is_bounded(seed in any::<u64>(), label in 0usize..7, scale in 0.1f64..10.0) {
        let cfg = tiny();
        let mut r = rng(seed);
        let mut gen = Generator::<f32>::new(&cfg, &mut r).unwrap();
        let z = Tensor::randn(&[2, 3], scale, &mut r);
        let img = gen.generate(&z, &[label, label]).unwrap();
        prop_assert_eq!(img.shape(), &[2, 16, 16, 1]);
        prop_assert!(img.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn discriminator_output_is_a_probability(seed in any::<u64>(), label in 0usize..7) {
        let cfg = tiny();
        let mut r = rng(seed);
        let disc = Discriminator::<f32>::new(&cfg, &mut r).unwrap();
        let images = Tensor::rand_uniform(&[2, 16, 16, 1], -1.0, 1.0, &mut r);
        let p = disc.score(&images, &[label, 6 - label]).unwrap();
        prop_assert_eq!(p.shape(), &[2, 1]);
        prop_assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
