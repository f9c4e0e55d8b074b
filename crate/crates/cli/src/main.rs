use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use cgan_core::augment::{self, Manifest};
use cgan_core::checkpoint::Checkpoint;
use cgan_core::config::RunConfig;
use cgan_core::data::{self, LabeledDataset};
use cgan_core::models::{EMOTIONS, NUM_CLASSES};
use cgan_core::training::{self, RunDir};
use cgan_core::{gradcheck, pgm, Error};

/// Conditional GAN for label-conditioned facial-expression synthesis.
#[derive(Parser)]
#[command(name = "cgan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a generator/discriminator pair and write a run directory.
    Train(TrainArgs),
    /// Sample PGM images from a generator checkpoint.
    Generate(GenerateArgs),
    /// Balance a dataset with filtered synthetic samples.
    Augment(AugmentArgs),
    /// Report the class distribution of a dataset.
    Inspect(InspectArgs),
    /// Check every analytic gradient against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct ArchFlags {
    /// Latent noise width.
    #[arg(long)]
    latent: Option<usize>,
    /// Filters in the widest generator block is 8× this value.
    #[arg(long)]
    base_filters: Option<usize>,
    /// Image side; a multiple of 16.
    #[arg(long)]
    image_size: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// `emotion,pixels` CSV or CGDS archive.
    #[arg(long)]
    data: PathBuf,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// `key=value` settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    arch: ArchFlags,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Class code 0-6, or `all`.
    #[arg(long)]
    class: String,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    gen: PathBuf,
    #[arg(long)]
    disc: PathBuf,
    /// Output CGDS archive; the manifest is written beside it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Minimum discriminator confidence, in [0, 1).
    #[arg(long)]
    tau: Option<String>,
    /// `match-max` or `explicit:n0,n1,n2,n3,n4,n5,n6`.
    #[arg(long)]
    policy: Option<String>,
    /// Draw budget per needed sample.
    #[arg(long)]
    oversample: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    data: PathBuf,
    /// Image side of CSV input.
    #[arg(long, default_value_t = data::DEFAULT_SIDE)]
    side: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum Failure {
    Verification(String),
    Engine(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Engine(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Verification(_) => 1,
            Failure::Engine(e) => match e {
                Error::Config(_) | Error::Label { .. } | Error::Plan(_) => 2,
                Error::Parse { .. }
                | Error::Format(_)
                | Error::Checkpoint(_)
                | Error::Io { .. }
                | Error::Dimension { .. }
                | Error::Contract(_) => 3,
                Error::Divergence { .. }
                | Error::Exhausted { .. }
                | Error::DegenerateBatch(_)
                | Error::Oracle(_) => 4,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Verification(m) => m.clone(),
            Failure::Engine(e) => e.to_string(),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_target(false)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Generate(a) => generate(a),
        Command::Augment(a) => augment(a),
        Command::Inspect(a) => inspect(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn train(a: TrainArgs) -> Outcome {
    let mut cfg = load_config(a.config.as_deref())?;
    let overrides = [
        ("epochs", a.epochs.map(|v| v.to_string())),
        ("batch_size", a.batch.map(|v| v.to_string())),
        ("lr", a.lr),
        ("seed", a.seed.map(|v| v.to_string())),
        ("latent_dim", a.arch.latent.map(|v| v.to_string())),
        ("base_filters", a.arch.base_filters.map(|v| v.to_string())),
        ("image_size", a.arch.image_size.map(|v| v.to_string())),
    ];
    for (k, v) in overrides {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set `{kv}`: expected key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    let raw = data::load_any(&a.data, cfg.train.arch.image_size)?;
    let ds = raw.normalize()?;
    info!("{} rows from {}", ds.len(), a.data.display());
    let run = RunDir::new(&a.out);
    let (trainer, records) = training::train::<f32>(&cfg, &ds, &run)?;
    if let Some(last) = records.last() {
        println!(
            "trained {} epochs ({} steps): g_loss {:.4} d_loss {:.4}",
            records.len(),
            trainer.step,
            last.g_loss,
            last.d_loss
        );
    }
    println!("run directory: {}", a.out.display());
    Ok(())
}

fn parse_classes(spec: &str) -> Result<Vec<usize>, Error> {
    if spec == "all" {
        return Ok((0..NUM_CLASSES).collect());
    }
    let c: usize = spec
        .parse()
        .map_err(|_| Error::Config(format!("class `{spec}`: expected 0-6 or all")))?;
    if c >= NUM_CLASSES {
        return Err(Error::Label {
            label: c,
            classes: NUM_CLASSES,
        });
    }
    Ok(vec![c])
}

fn generate(a: GenerateArgs) -> Outcome {
    let classes = parse_classes(&a.class)?;
    if a.count == 0 {
        return Err(Error::Config("--count must be positive".into()).into());
    }
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let config = training::config_from_meta(&ckpt)?;
    let mut gen = training::load_generator::<f32>(&ckpt)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let side = config.arch.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut written = 0;
    for &c in &classes {
        let z = training::sample_noise(config.noise, a.count, config.arch.latent_dim, &mut rng);
        let images = gen.generate(&z, &vec![c; a.count])?;
        for (i, bytes) in training::to_bytes(&images).iter().enumerate() {
            pgm::write(a.out.join(format!("class{c}_{i}.pgm")), side, side, bytes)?;
            written += 1;
        }
    }
    println!("wrote {written} images to {}", a.out.display());
    Ok(())
}

fn file_identity(path: &Path) -> Result<String, Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let digest = Sha256::digest(&bytes);
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok(format!("{} sha256:{hex}", path.display()))
}

fn augment(a: AugmentArgs) -> Outcome {
    let mut cfg = load_config(a.config.as_deref())?;
    for (k, v) in [
        ("tau", a.tau),
        ("policy", a.policy),
        ("oversample", a.oversample),
    ] {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    cfg.validate()?;
    let gen_ckpt = Checkpoint::load(&a.gen)?;
    let disc_ckpt = Checkpoint::load(&a.disc)?;
    let mut gen = training::load_generator::<f32>(&gen_ckpt)?;
    let disc = training::load_discriminator::<f32>(&disc_ckpt)?;
    let noise = training::config_from_meta(&gen_ckpt)?.noise;
    let side = gen.config.image_size;

    let real: LabeledDataset = data::load_any(&a.data, side)?;
    let stats = real.class_distribution();
    let s = &cfg.augment;
    let plan = augment::plan_balance(&stats, &s.policy, s.tau, s.oversample)?;
    info!("deficits {:?}", plan.deficits);
    let synthetic = augment::synthesize(&mut gen, &disc, &plan, noise, a.seed)?;
    let manifest = Manifest::new(
        &stats,
        &synthetic,
        s.tau,
        a.seed,
        &s.policy,
        file_identity(&a.gen)?,
    );
    let merged = augment::merge_export(&real, &synthetic, &a.out, &manifest)?;

    let (mut drawn, mut accepted) = (0, 0);
    for f in &synthetic {
        drawn += f.drawn;
        accepted += f.accepted();
        if f.drawn > 0 {
            println!(
                "class {} {:<8} accepted {:>6} of {:>6} draws, rate {:.4}",
                f.class,
                EMOTIONS[f.class],
                f.accepted(),
                f.drawn,
                f.rate().unwrap_or(0.0)
            );
        }
    }
    if drawn > 0 {
        println!("acceptance rate {:.4}", accepted as f64 / drawn as f64);
    } else {
        println!("acceptance rate n/a (already balanced)");
    }
    println!("{}", merged.class_distribution());
    println!(
        "wrote {} rows ({} real, {} synthetic) to {}",
        merged.len(),
        manifest.real_total(),
        manifest.synthetic_total(),
        a.out.display()
    );
    Ok(())
}

fn inspect(a: InspectArgs) -> Outcome {
    let ds = data::load_any(&a.data, a.side)?;
    println!("{}", ds.class_distribution());
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Outcome {
    let results = gradcheck::run_suite(a.seed)?;
    let mut failed = 0;
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!("{status:<4} {:<45} {:.2e}", r.name, r.error);
        if !r.passed() {
            failed += 1;
        }
    }
    println!(
        "{} of {} checks below {:e}",
        results.len() - failed,
        results.len(),
        gradcheck::TOLERANCE
    );
    if failed > 0 {
        return Err(Failure::Verification(format!(
            "{failed} gradient checks failed"
        )));
    }
    Ok(())
}
