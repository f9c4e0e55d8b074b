//! Alternating adversarial training, loss telemetry, epoch snapshots and checkpoints.
//!
//! Every random draw comes from a ChaCha8 stream keyed by `(seed, purpose, index)`,
//! so a run is fully determined by its config and the step counters.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::checkpoint::Checkpoint;
use crate::config::{FakeLabels, NoiseKind, RunConfig, TrainConfig};
use crate::data::{self, denormalize_value, LabeledDataset, SHUFFLE_ALGORITHM};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::loss;
use crate::models::{Discriminator, Generator, NUM_CLASSES};
use crate::optim::AdamState;
use crate::pgm;
use crate::tensor::{Element, Tensor};

/// Purposes that key the independent random streams of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Step = 3,
    Snapshot = 4,
    Augment = 5,
}

pub fn stream_rng(seed: u64, purpose: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 56) | (index & ((1 << 56) - 1)));
    rng
}

/// `(n, latent)` noise drawn from the configured distribution.
pub fn sample_noise<T: Element, R: Rng + ?Sized>(
    kind: NoiseKind,
    n: usize,
    latent: usize,
    rng: &mut R,
) -> Tensor<T> {
    match kind {
        NoiseKind::Normal => Tensor::randn(&[n, latent], 1.0, rng),
        NoiseKind::Uniform => Tensor::rand_uniform(&[n, latent], -1.0, 1.0, rng),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub d_loss: f64,
    pub g_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub losses: StepLosses,
}

/// Mean losses of one epoch (numbered from 1) and its wall time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRecord {
    pub epoch: usize,
    pub g_loss: f64,
    pub d_loss: f64,
    pub seconds: f64,
}

/// Both networks, their optimizer states and the progress counters.
#[derive(Debug, Clone)]
pub struct Trainer<T: Element> {
    pub config: TrainConfig,
    pub gen: Generator<T>,
    pub disc: Discriminator<T>,
    pub gen_opt: AdamState<T>,
    pub disc_opt: AdamState<T>,
    /// Completed steps over the whole run.
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed batches within the current epoch.
    pub batch_cursor: usize,
    epoch_d_sum: f64,
    epoch_g_sum: f64,
}

fn set_spectral_iterations<T: Element>(disc: &mut Discriminator<T>, n: usize) {
    for c in &mut disc.convs {
        if let Some(s) = &mut c.spectral {
            s.iterations = n;
        }
    }
}

impl<T: Element> Trainer<T> {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(config.seed, Stream::Init, 0);
        let gen = Generator::new(&config.arch, &mut rng)?;
        let mut disc = Discriminator::new(&config.arch, &mut rng)?;
        if config.zero_disc_head {
            disc.zero_head();
        }
        set_spectral_iterations(&mut disc, config.spectral_iterations);
        let gen_opt = AdamState::new(config.adam(), &gen.params());
        let disc_opt = AdamState::new(config.adam(), &disc.params());
        Ok(Trainer {
            config: config.clone(),
            gen,
            disc,
            gen_opt,
            disc_opt,
            step: 0,
            epoch: 0,
            batch_cursor: 0,
            epoch_d_sum: 0.0,
            epoch_g_sum: 0.0,
        })
    }

    /// One discriminator update on the real batch and detached fakes, then one
    /// generator update on fresh fakes scored by the updated discriminator.
    pub fn train_step(&mut self, images: &Tensor<T>, labels: &[usize]) -> Result<StepLosses> {
        let n = labels.len();
        if n == 0 || images.shape().first() != Some(&n) {
            return Err(Error::Contract(format!(
                "batch of {n} labels with images {:?}",
                images.shape()
            )));
        }
        let cfg = &self.config;
        let latent = cfg.arch.latent_dim;
        let mut rng = stream_rng(cfg.seed, Stream::Step, self.step);
        let fake_labels: Vec<usize> = match cfg.fake_labels {
            FakeLabels::CopyReal => labels.to_vec(),
            FakeLabels::Uniform => (0..n).map(|_| rng.random_range(0..NUM_CLASSES)).collect(),
        };

        self.disc.update_spectral()?;
        let z = sample_noise::<T, _>(cfg.noise, n, latent, &mut rng);
        let fakes = {
            let mut g = Graph::new();
            let zv = g.constant(z);
            let out = self.gen.forward(&mut g, zv, &fake_labels, Mode::Train)?;
            g.value(out).clone()
        };
        let d_loss = {
            let mut g = Graph::new();
            let real = g.constant(images.clone());
            let fake = g.constant(fakes);
            let p_real = self
                .disc
                .forward(&mut g, real, labels, Mode::Train, &mut rng)?;
            let p_fake = self
                .disc
                .forward(&mut g, fake, &fake_labels, Mode::Train, &mut rng)?;
            let l = loss::d_loss(&mut g, p_real, p_fake)?;
            let value = g.value(l).item()?.as_f64();
            if !value.is_finite() {
                return Err(self.diverged(value, f64::NAN));
            }
            let grads = g.backward(l)?;
            self.disc.zero_grad();
            self.disc.accumulate(&grads)?;
            self.disc_opt.step(self.disc.params_mut())?;
            value
        };

        let z = sample_noise::<T, _>(cfg.noise, n, latent, &mut rng);
        let g_loss = {
            let mut g = Graph::new();
            let zv = g.constant(z);
            let fake = self.gen.forward(&mut g, zv, &fake_labels, Mode::Train)?;
            let p = self
                .disc
                .forward(&mut g, fake, &fake_labels, Mode::Train, &mut rng)?;
            let l = loss::g_loss(&mut g, p);
            let value = g.value(l).item()?.as_f64();
            if !value.is_finite() {
                return Err(self.diverged(d_loss, value));
            }
            let grads = g.backward(l)?;
            self.gen.zero_grad();
            self.gen.accumulate(&grads)?;
            self.gen_opt.step(self.gen.params_mut())?;
            value
        };
        self.step += 1;
        Ok(StepLosses { d_loss, g_loss })
    }

    /// The abort error for a non-finite loss at the current step.
    fn diverged(&self, d_loss: f64, g_loss: f64) -> Error {
        Error::Divergence {
            epoch: self.epoch + 1,
            step: self.step + 1,
            d_loss,
            g_loss,
        }
    }

    /// Epoch `epoch` (0-based) batch order.
    pub fn epoch_batches(&self, len: usize, epoch: usize) -> Result<Vec<Vec<usize>>> {
        let seed = stream_rng(self.config.seed, Stream::Shuffle, epoch as u64).random::<u64>();
        data::batches(len, self.config.batch_size, seed)
    }

    /// Runs the remaining batches of the current epoch; returns the epoch record once it completes.
    pub fn run_epoch(
        &mut self,
        data: &LabeledDataset,
        mut on_step: impl FnMut(&StepRecord) -> Result<()>,
    ) -> Result<TrainLogRecord> {
        self.run_batches(data, usize::MAX, &mut on_step)?
            .ok_or_else(|| Error::Contract("epoch did not complete".into()))
    }

    /// Runs at most `limit` batches; returns the epoch record if the epoch finished.
    pub fn run_batches(
        &mut self,
        data: &LabeledDataset,
        limit: usize,
        mut on_step: impl FnMut(&StepRecord) -> Result<()>,
    ) -> Result<Option<TrainLogRecord>> {
        let start = Instant::now();
        let order = self.epoch_batches(data.len(), self.epoch)?;
        let mut done = 0;
        while self.batch_cursor < order.len() && done < limit {
            let (images, labels) = data.gather::<T>(&order[self.batch_cursor])?;
            let losses = self.train_step(&images, &labels)?;
            self.batch_cursor += 1;
            self.epoch_d_sum += losses.d_loss;
            self.epoch_g_sum += losses.g_loss;
            done += 1;
            on_step(&StepRecord {
                step: self.step,
                epoch: self.epoch + 1,
                losses,
            })?;
        }
        if self.batch_cursor < order.len() {
            return Ok(None);
        }
        let steps = order.len() as f64;
        let record = TrainLogRecord {
            epoch: self.epoch + 1,
            g_loss: self.epoch_g_sum / steps,
            d_loss: self.epoch_d_sum / steps,
            seconds: start.elapsed().as_secs_f64(),
        };
        self.epoch += 1;
        self.batch_cursor = 0;
        self.epoch_d_sum = 0.0;
        self.epoch_g_sum = 0.0;
        Ok(Some(record))
    }

    /// Fixed per-run noise and labels for epoch snapshots, `grid` per class in class order.
    pub fn snapshot_inputs(&self) -> (Tensor<T>, Vec<usize>) {
        let grid = self.config.sample_grid;
        let mut rng = stream_rng(self.config.seed, Stream::Snapshot, 0);
        let z = sample_noise(
            self.config.noise,
            (NUM_CLASSES * grid).max(1),
            self.config.arch.latent_dim,
            &mut rng,
        );
        let labels = (0..NUM_CLASSES)
            .flat_map(|c| std::iter::repeat_n(c, grid))
            .collect();
        (z, labels)
    }

    fn meta(&self) -> Vec<(String, String)> {
        let run = RunConfig {
            train: self.config.clone(),
            ..Default::default()
        };
        let mut m: Vec<(String, String)> = run
            .train_pairs()
            .into_iter()
            .map(|(k, v)| (format!("config.{k}"), v))
            .collect();
        m.push(("trainer.step".into(), self.step.to_string()));
        m.push(("trainer.epoch".into(), self.epoch.to_string()));
        m.push(("trainer.batch_cursor".into(), self.batch_cursor.to_string()));
        m.push(("trainer.epoch_d_sum".into(), self.epoch_d_sum.to_string()));
        m.push(("trainer.epoch_g_sum".into(), self.epoch_g_sum.to_string()));
        m
    }

    pub fn generator_checkpoint(&self) -> Checkpoint {
        let state = self.gen.state();
        network_checkpoint(GENERATOR_KIND, state, &self.gen_opt, self.meta())
    }

    pub fn discriminator_checkpoint(&self) -> Checkpoint {
        let state = self.disc.state();
        network_checkpoint(DISCRIMINATOR_KIND, state, &self.disc_opt, self.meta())
    }

    /// Rebuilds a trainer that continues exactly where the checkpointed one stopped.
    pub fn from_checkpoints(gen: &Checkpoint, disc: &Checkpoint) -> Result<Self> {
        let config = config_from_meta(gen)?;
        if config_from_meta(disc)? != config {
            return Err(Error::Checkpoint(
                "generator and discriminator checkpoints come from different configs".into(),
            ));
        }
        for key in ["trainer.step", "trainer.epoch", "trainer.batch_cursor"] {
            if gen.meta_str(key)? != disc.meta_str(key)? {
                return Err(Error::Checkpoint(format!("checkpoints disagree on {key}")));
            }
        }
        let mut t = Trainer::new(&config)?;
        restore_network(gen, GENERATOR_KIND, t.gen.state_mut(), &mut t.gen_opt)?;
        restore_network(
            disc,
            DISCRIMINATOR_KIND,
            t.disc.state_mut(),
            &mut t.disc_opt,
        )?;
        t.step = gen.meta_parse("trainer.step")?;
        t.epoch = gen.meta_parse("trainer.epoch")?;
        t.batch_cursor = gen.meta_parse("trainer.batch_cursor")?;
        t.epoch_d_sum = gen.meta_parse("trainer.epoch_d_sum")?;
        t.epoch_g_sum = gen.meta_parse("trainer.epoch_g_sum")?;
        Ok(t)
    }
}

pub const GENERATOR_KIND: &str = "generator";
pub const DISCRIMINATOR_KIND: &str = "discriminator";

fn network_checkpoint<T: Element>(
    kind: &str,
    state: Vec<(String, &Tensor<T>)>,
    opt: &AdamState<T>,
    meta: Vec<(String, String)>,
) -> Checkpoint {
    let mut c = Checkpoint::new(kind);
    for (name, t) in state {
        c.push(name, t);
    }
    for (i, name) in opt.names.iter().enumerate() {
        c.push(format!("adam.m.{name}"), &opt.m[i]);
        c.push(format!("adam.v.{name}"), &opt.v[i]);
    }
    c.meta.extend(meta);
    c.meta.insert("adam.step".into(), opt.step.to_string());
    c
}

fn restore_network<T: Element>(
    ckpt: &Checkpoint,
    kind: &str,
    state: Vec<(String, &mut Tensor<T>)>,
    opt: &mut AdamState<T>,
) -> Result<()> {
    let mut expected: Vec<String> = state.iter().map(|(n, _)| n.clone()).collect();
    for name in &opt.names {
        expected.push(format!("adam.m.{name}"));
        expected.push(format!("adam.v.{name}"));
    }
    ckpt.expect_names(kind, expected.iter().map(String::as_str))?;
    load_state(ckpt, state)?;
    for i in 0..opt.names.len() {
        let name = &opt.names[i];
        opt.m[i] = checked(ckpt, &format!("adam.m.{name}"), opt.m[i].shape())?;
        opt.v[i] = checked(ckpt, &format!("adam.v.{name}"), opt.v[i].shape())?;
    }
    opt.step = ckpt.meta_parse("adam.step")?;
    Ok(())
}

fn checked<T: Element>(ckpt: &Checkpoint, name: &str, shape: &[usize]) -> Result<Tensor<T>> {
    let t = ckpt.tensor::<T>(name)?;
    if t.shape() != shape {
        return Err(Error::Checkpoint(format!(
            "{name} has shape {:?}, expected {shape:?}",
            t.shape()
        )));
    }
    Ok(t)
}

fn load_state<T: Element>(ckpt: &Checkpoint, state: Vec<(String, &mut Tensor<T>)>) -> Result<()> {
    for (name, slot) in state {
        *slot = checked(ckpt, &name, slot.shape())?;
    }
    Ok(())
}

/// The training configuration echoed into a checkpoint.
pub fn config_from_meta(ckpt: &Checkpoint) -> Result<TrainConfig> {
    let mut run = RunConfig::default();
    let mut found = false;
    for (k, v) in &ckpt.meta {
        if let Some(key) = k.strip_prefix("config.") {
            run.set(key, v)
                .map_err(|e| Error::Checkpoint(format!("bad config echo: {e}")))?;
            found = true;
        }
    }
    if !found {
        return Err(Error::Checkpoint(
            "checkpoint carries no config echo".into(),
        ));
    }
    Ok(run.train)
}

/// Loads the generator weights and running statistics of a generator checkpoint.
pub fn load_generator<T: Element>(ckpt: &Checkpoint) -> Result<Generator<T>> {
    let config = config_from_meta(ckpt)?;
    let mut rng = stream_rng(config.seed, Stream::Init, 0);
    let mut gen = Generator::new(&config.arch, &mut rng)?;
    let mut expected: Vec<String> = gen.state().into_iter().map(|(n, _)| n).collect();
    expected.extend(
        ckpt.tensors
            .iter()
            .filter(|t| t.name.starts_with("adam."))
            .map(|t| t.name.clone()),
    );
    ckpt.expect_names(GENERATOR_KIND, expected.iter().map(String::as_str))?;
    load_state(ckpt, gen.state_mut())?;
    Ok(gen)
}

/// Loads the weights and spectral state of a discriminator checkpoint.
pub fn load_discriminator<T: Element>(ckpt: &Checkpoint) -> Result<Discriminator<T>> {
    let config = config_from_meta(ckpt)?;
    let mut rng = stream_rng(config.seed, Stream::Init, 0);
    let mut disc = Discriminator::new(&config.arch, &mut rng)?;
    set_spectral_iterations(&mut disc, config.spectral_iterations);
    let mut expected: Vec<String> = disc.state().into_iter().map(|(n, _)| n).collect();
    expected.extend(
        ckpt.tensors
            .iter()
            .filter(|t| t.name.starts_with("adam."))
            .map(|t| t.name.clone()),
    );
    ckpt.expect_names(DISCRIMINATOR_KIND, expected.iter().map(String::as_str))?;
    load_state(ckpt, disc.state_mut())?;
    Ok(disc)
}

/// `round((x+1)·127.5)` bytes of a `(N, H, W, 1)` image batch, one vector per image.
pub fn to_bytes<T: Element>(images: &Tensor<T>) -> Vec<Vec<u8>> {
    let per: usize = images.shape()[1..].iter().product();
    images
        .data()
        .chunks(per)
        .map(|img| img.iter().map(|x| denormalize_value(x.as_f64())).collect())
        .collect()
}

/// Writes `epoch{E}_class{C}_{i}.pgm` for every snapshot input; returns the paths.
pub fn emit_epoch_samples<T: Element>(
    gen: &mut Generator<T>,
    epoch: usize,
    out_dir: &Path,
    z: &Tensor<T>,
    labels: &[usize],
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    if labels.is_empty() {
        return Ok(Vec::new());
    }
    let images = gen.generate(z, labels)?;
    let side = gen.config.image_size;
    let mut seen = [0usize; NUM_CLASSES];
    let mut paths = Vec::with_capacity(labels.len());
    for (bytes, &c) in to_bytes(&images).iter().zip(labels) {
        let path = out_dir.join(format!("epoch{epoch}_class{c}_{}.pgm", seen[c]));
        seen[c] += 1;
        pgm::write(&path, side, side, bytes)?;
        paths.push(path);
    }
    Ok(paths)
}

/// File layout of a training run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn losses(&self) -> PathBuf {
        self.root.join("losses.csv")
    }

    pub fn steps(&self) -> PathBuf {
        self.root.join("steps.csv")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.txt")
    }

    pub fn samples(&self) -> PathBuf {
        self.root.join("samples")
    }

    pub fn checkpoint(&self, kind: &str, tag: &str) -> PathBuf {
        self.root
            .join("checkpoints")
            .join(format!("{kind}_{tag}.ckpt"))
    }
}

struct LogFile {
    path: PathBuf,
    out: BufWriter<File>,
}

impl LogFile {
    fn create(path: PathBuf, header: &str) -> Result<Self> {
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut log = LogFile {
            path,
            out: BufWriter::new(f),
        };
        log.line(header)?;
        Ok(log)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}").map_err(|e| Error::io(&self.path, e))
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Trains for `config.train.epochs` epochs on a normalized dataset, writing the
/// run directory as it goes. The loss logs are flushed after every epoch.
pub fn train<T: Element>(
    config: &RunConfig,
    data: &LabeledDataset,
    run: &RunDir,
) -> Result<(Trainer<T>, Vec<TrainLogRecord>)> {
    config.validate()?;
    let tc = &config.train;
    if !data.is_normalized() {
        return Err(Error::Contract(
            "training needs a normalized dataset".into(),
        ));
    }
    if data.side() != tc.arch.image_size {
        return Err(Error::Config(format!(
            "dataset images are {0}x{0}, architecture expects {1}x{1}",
            data.side(),
            tc.arch.image_size
        )));
    }
    fs::create_dir_all(run.root.join("checkpoints")).map_err(|e| Error::io(&run.root, e))?;
    let config_text = config.to_text();
    fs::write(run.config(), &config_text).map_err(|e| Error::io(run.config(), e))?;

    let mut header: String = config_text.lines().map(|l| format!("# {l}\n")).collect();
    header.push_str(&format!(
        "# shuffle={SHUFFLE_ALGORITHM}\n# dataset_rows={}\n",
        data.len()
    ));
    header.push_str("epoch,g_loss,d_loss,seconds");
    let mut losses = LogFile::create(run.losses(), &header)?;
    let mut steps = LogFile::create(run.steps(), "step,epoch,d_loss,g_loss")?;

    let mut trainer = Trainer::<T>::new(tc)?;
    let (snap_z, snap_labels) = trainer.snapshot_inputs();
    let mut records = Vec::with_capacity(tc.epochs);
    while trainer.epoch < tc.epochs {
        let result = trainer.run_epoch(data, |s| {
            steps.line(&format!(
                "{},{},{},{}",
                s.step, s.epoch, s.losses.d_loss, s.losses.g_loss
            ))
        });
        steps.flush()?;
        let record = result?;
        losses.line(&format!(
            "{},{},{},{:.3}",
            record.epoch, record.g_loss, record.d_loss, record.seconds
        ))?;
        losses.flush()?;
        info!(
            "epoch {}/{}: g_loss {:.4} d_loss {:.4} ({:.1}s)",
            record.epoch, tc.epochs, record.g_loss, record.d_loss, record.seconds
        );
        records.push(record);
        if tc.sample_grid > 0 {
            emit_epoch_samples(
                &mut trainer.gen,
                record.epoch,
                &run.samples(),
                &snap_z,
                &snap_labels,
            )?;
        }
        if tc.checkpoint_every > 0 && record.epoch % tc.checkpoint_every == 0 {
            let tag = format!("epoch{}", record.epoch);
            save_checkpoints(&trainer, run, &tag)?;
        }
    }
    save_checkpoints(&trainer, run, "final")?;
    Ok((trainer, records))
}

pub fn save_checkpoints<T: Element>(trainer: &Trainer<T>, run: &RunDir, tag: &str) -> Result<()> {
    trainer
        .generator_checkpoint()
        .save(run.checkpoint(GENERATOR_KIND, tag))?;
    trainer
        .discriminator_checkpoint()
        .save(run.checkpoint(DISCRIMINATOR_KIND, tag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ArchConfig;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            epochs: 1,
            sample_grid: 1,
            arch: ArchConfig::scaled(4, 2, 16),
            ..TrainConfig::default()
        }
    }

    fn tiny_data(n: usize) -> LabeledDataset {
        let labels: Vec<u8> = (0..n).map(|i| (i % NUM_CLASSES) as u8).collect();
        let pixels: Vec<u8> = (0..n * 256).map(|i| (i * 37 % 256) as u8).collect();
        LabeledDataset::from_raw(16, labels, pixels)
            .unwrap()
            .normalize()
            .unwrap()
    }

    #[test]
    fn streams_are_independent_and_repeatable() {
        let a = stream_rng(7, Stream::Step, 3).random::<u64>();
        assert_eq!(a, stream_rng(7, Stream::Step, 3).random::<u64>());
        assert_ne!(a, stream_rng(7, Stream::Step, 4).random::<u64>());
        assert_ne!(a, stream_rng(7, Stream::Shuffle, 3).random::<u64>());
        assert_ne!(a, stream_rng(8, Stream::Step, 3).random::<u64>());
    }

    #[test]
    fn step_counts_and_records() {
        let mut t = Trainer::<f32>::new(&tiny_config()).unwrap();
        let data = tiny_data(10);
        let mut seen = Vec::new();
        let rec = t
            .run_epoch(&data, |s| {
                seen.push(s.step);
                Ok(())
            })
            .unwrap();
        assert_eq!(seen, vec![1, 2, 3]);
        assert_eq!(rec.epoch, 1);
        assert!(rec.d_loss.is_finite() && rec.g_loss.is_finite());
        assert_eq!((t.epoch, t.batch_cursor, t.step), (1, 0, 3));
    }

    #[test]
    fn snapshot_grid_layout() {
        let t = Trainer::<f32>::new(&tiny_config()).unwrap();
        let (z, labels) = t.snapshot_inputs();
        assert_eq!(z.shape(), &[7, 4]);
        assert_eq!(labels, vec![0, 1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn divergence_reports_position() {
        let mut t = Trainer::<f32>::new(&tiny_config()).unwrap();
        t.epoch = 2;
        t.step = 9;
        let e = t.diverged(f64::INFINITY, 0.5);
        assert!(matches!(
            e,
            Error::Divergence {
                epoch: 3,
                step: 10,
                ..
            }
        ));
        assert!(e.to_string().contains("inf"));
    }
}
