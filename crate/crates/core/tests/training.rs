use std::fs;

use cgan_core::checkpoint::Checkpoint;
use cgan_core::config::{RunConfig, TrainConfig};
use cgan_core::data::{LabeledDataset, Pixels};
use cgan_core::models::ArchConfig;
use cgan_core::training::{self, RunDir, Trainer, DISCRIMINATOR_KIND, GENERATOR_KIND};
use cgan_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dataset(rows: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<u8> = (0..rows).map(|i| (i % 7) as u8).collect();
    let pixels: Vec<u8> = (0..rows * 256).map(|_| rng.random()).collect();
    LabeledDataset::from_raw(16, labels, pixels)
        .unwrap()
        .normalize()
        .unwrap()
}

fn tiny(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        sample_grid: 0,
        arch: ArchConfig::scaled(4, 1, 16),
        ..Default::default()
    }
}

fn run_config(train: TrainConfig) -> RunConfig {
    RunConfig {
        train,
        ..Default::default()
    }
}

fn bits(t: &Trainer<f32>) -> Vec<Vec<u32>> {
    let mut out: Vec<Vec<u32>> = t
        .gen
        .state()
        .into_iter()
        .chain(t.disc.state())
        .map(|(_, v)| v.data().iter().map(|x| x.to_bits()).collect())
        .collect();
    for opt in [&t.gen_opt, &t.disc_opt] {
        for m in opt.m.iter().chain(&opt.v) {
            out.push(m.data().iter().map(|x| x.to_bits()).collect());
        }
    }
    out
}

#[test]
fn one_log_record_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let run = RunDir::new(dir.path());
    let (trainer, records) =
        training::train::<f32>(&run_config(tiny(3)), &dataset(10, 0), &run).unwrap();
    assert_eq!(records.len(), 3);
    assert_eq!(trainer.step, 9);
    let losses = fs::read_to_string(run.losses()).unwrap();
    let rows: Vec<&str> = losses.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "epoch,g_loss,d_loss,seconds");
    assert_eq!(rows.len(), 4);
    assert!(losses.contains("# batch_size=4\n"));
    assert!(losses.contains("# dataset_rows=10\n"));
    let steps = fs::read_to_string(run.steps()).unwrap();
    assert_eq!(steps.lines().count(), 10);
    assert!(run.checkpoint(GENERATOR_KIND, "final").exists());
    assert!(run.checkpoint(DISCRIMINATOR_KIND, "final").exists());
}

#[test]
fn identical_runs_produce_identical_step_logs() {
    let data = dataset(12, 1);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    training::train::<f32>(&run_config(tiny(2)), &data, &RunDir::new(a.path())).unwrap();
    training::train::<f32>(&run_config(tiny(2)), &data, &RunDir::new(b.path())).unwrap();
    let read = |d: &tempfile::TempDir| fs::read_to_string(RunDir::new(d.path()).steps()).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn different_seeds_diverge() {
    let data = dataset(8, 2);
    let mut c = tiny(1);
    let mut a = Trainer::<f32>::new(&c).unwrap();
    c.seed = 1;
    let mut b = Trainer::<f32>::new(&c).unwrap();
    a.run_epoch(&data, |_| Ok(())).unwrap();
    b.run_epoch(&data, |_| Ok(())).unwrap();
    assert_ne!(bits(&a), bits(&b));
}

#[test]
fn resume_mid_epoch_is_bit_exact() {
    let data = dataset(14, 3);
    let config = tiny(2);
    let mut straight = Trainer::<f32>::new(&config).unwrap();
    let mut straight_steps = Vec::new();
    for _ in 0..2 {
        straight
            .run_epoch(&data, |s| {
                straight_steps.push(s.losses);
                Ok(())
            })
            .unwrap();
    }

    let mut first = Trainer::<f32>::new(&config).unwrap();
    let mut resumed_steps = Vec::new();
    let done = first
        .run_batches(&data, 2, |s| {
            resumed_steps.push(s.losses);
            Ok(())
        })
        .unwrap();
    assert!(done.is_none());
    let gen = Checkpoint::decode(&first.generator_checkpoint().encode()).unwrap();
    let disc = Checkpoint::decode(&first.discriminator_checkpoint().encode()).unwrap();
    drop(first);
    let mut second = Trainer::<f32>::from_checkpoints(&gen, &disc).unwrap();
    assert_eq!(second.step, 2);
    assert_eq!(second.batch_cursor, 2);
    while second.epoch < 2 {
        second
            .run_epoch(&data, |s| {
                resumed_steps.push(s.losses);
                Ok(())
            })
            .unwrap();
    }
    assert_eq!(straight.step, second.step);
    assert_eq!(bits(&straight), bits(&second));
    assert_eq!(straight_steps.len(), resumed_steps.len());
    for (a, b) in straight_steps.iter().zip(&resumed_steps) {
        assert_eq!(a.d_loss.to_bits(), b.d_loss.to_bits());
        assert_eq!(a.g_loss.to_bits(), b.g_loss.to_bits());
    }
}

#[test]
fn swapped_checkpoints_are_rejected() {
    let t = Trainer::<f32>::new(&tiny(1)).unwrap();
    let gen = t.generator_checkpoint();
    let disc = t.discriminator_checkpoint();
    assert!(matches!(
        training::load_generator::<f32>(&disc),
        Err(Error::Checkpoint(_))
    ));
    assert!(matches!(
        training::load_discriminator::<f32>(&gen),
        Err(Error::Checkpoint(_))
    ));
    assert!(matches!(
        Trainer::<f32>::from_checkpoints(&disc, &gen),
        Err(Error::Checkpoint(_))
    ));
}

#[test]
fn default_checkpoint_names_the_dense_kernel_shape() {
    let t = Trainer::<f32>::new(&TrainConfig::default()).unwrap();
    let ckpt = t.generator_checkpoint();
    let dense = ckpt.get("gen.dense.kernel").unwrap();
    assert_eq!(dense.shape, vec![157, 32768]);
    let gen = training::load_generator::<f32>(&ckpt).unwrap();
    assert_eq!(gen.param_count(), 7_932_225);
}

#[test]
fn checkpoint_files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let run = RunDir::new(dir.path());
    let (trainer, _) = training::train::<f32>(&run_config(tiny(1)), &dataset(8, 4), &run).unwrap();
    let gen = Checkpoint::load(run.checkpoint(GENERATOR_KIND, "final")).unwrap();
    let disc = Checkpoint::load(run.checkpoint(DISCRIMINATOR_KIND, "final")).unwrap();
    let restored = Trainer::<f32>::from_checkpoints(&gen, &disc).unwrap();
    assert_eq!(bits(&trainer), bits(&restored));
    assert_eq!(restored.epoch, 1);
    assert_eq!(training::config_from_meta(&gen).unwrap(), tiny(1));
}

#[test]
fn divergence_stops_training_and_keeps_the_partial_log() {
    let dir = tempfile::tempdir().unwrap();
    let run = RunDir::new(dir.path());
    let clean = dataset(12, 5);
    let mut pixels = match clean.pixels() {
        Pixels::Normalized(p) => p.clone(),
        Pixels::Raw(_) => unreachable!(),
    };
    pixels[7 * 256 + 100] = f32::NAN;
    let poisoned = LabeledDataset::from_normalized(16, clean.labels().to_vec(), pixels).unwrap();
    let err = training::train::<f32>(&run_config(tiny(3)), &poisoned, &run).unwrap_err();
    let Error::Divergence { epoch, step, .. } = err else {
        panic!("expected divergence, got {err}");
    };
    assert!(epoch >= 1 && step >= 1);
    let steps = fs::read_to_string(run.steps()).unwrap();
    assert_eq!(steps.lines().count() as u64, step);
    assert!(run.losses().exists());
}

#[test]
fn epoch_samples_are_written_per_class() {
    let dir = tempfile::tempdir().unwrap();
    let run = RunDir::new(dir.path());
    let mut config = tiny(1);
    config.sample_grid = 2;
    training::train::<f32>(&run_config(config), &dataset(4, 6), &run).unwrap();
    let mut names: Vec<String> = fs::read_dir(run.samples())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 14);
    assert_eq!(names[0], "epoch1_class0_0.pgm");
    let (w, h, px) = cgan_core::pgm::read(run.samples().join("epoch1_class6_1.pgm")).unwrap();
    assert_eq!((w, h, px.len()), (16, 16, 256));
}

#[test]
fn raw_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dataset(4, 7).denormalize().unwrap();
    let err =
        training::train::<f32>(&run_config(tiny(1)), &raw, &RunDir::new(dir.path())).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}
