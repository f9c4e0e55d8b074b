//! Minority-class synthesis: plan per-class deficits, generate label-conditioned
//! samples filtered by discriminator confidence, and export the merged dataset.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use rand::Rng;

use crate::config::{NoiseKind, TargetPolicy};
use crate::data::{save_archive, ClassStats, LabeledDataset, Pixels};
use crate::error::{Error, Result};
use crate::models::{Discriminator, Generator, EMOTIONS, NUM_CLASSES};
use crate::tensor::Element;
use crate::training::{sample_noise, stream_rng, to_bytes, Stream};

const GENERATION_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPlan {
    pub targets: [usize; NUM_CLASSES],
    /// `target − current`, never negative.
    pub deficits: [usize; NUM_CLASSES],
    pub tau: f64,
    /// Draw budget per needed sample.
    pub oversample: usize,
}

impl AugmentPlan {
    pub fn total_deficit(&self) -> usize {
        self.deficits.iter().sum()
    }
}

/// Per-class deficits for `policy`; explicit targets may not be below current counts.
pub fn plan_balance(
    stats: &ClassStats,
    policy: &TargetPolicy,
    tau: f64,
    oversample: usize,
) -> Result<AugmentPlan> {
    if stats.total == 0 {
        return Err(Error::Plan("cannot plan for an empty dataset".into()));
    }
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::Plan(format!("threshold {tau} outside [0, 1)")));
    }
    if oversample == 0 {
        return Err(Error::Plan("oversample factor must be positive".into()));
    }
    let targets = match policy {
        TargetPolicy::MatchMax => [stats.max_count(); NUM_CLASSES],
        TargetPolicy::Explicit(t) => {
            for c in 0..NUM_CLASSES {
                if t[c] < stats.counts[c] {
                    return Err(Error::Plan(format!(
                        "target {} for class {c} ({}) is below its current count {}",
                        t[c], EMOTIONS[c], stats.counts[c]
                    )));
                }
            }
            *t
        }
    };
    let mut deficits = [0; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        deficits[c] = targets[c] - stats.counts[c];
    }
    Ok(AugmentPlan {
        targets,
        deficits,
        tau,
        oversample,
    })
}

/// Accepted samples of one class and the draw bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Filtered {
    pub class: usize,
    /// Accepted images as bytes, row-major.
    pub images: Vec<Vec<u8>>,
    /// Discriminator confidence of each accepted image.
    pub scores: Vec<f64>,
    pub drawn: usize,
}

impl Filtered {
    pub fn accepted(&self) -> usize {
        self.images.len()
    }

    /// `accepted / drawn`, or `None` before any draw.
    pub fn rate(&self) -> Option<f64> {
        (self.drawn > 0).then(|| self.accepted() as f64 / self.drawn as f64)
    }
}

/// Samples `G(z|class)` in batches and keeps images with `D(image|class) ≥ tau`,
/// until `n_needed` are accepted or `max_draws` have been drawn. Both networks run
/// in inference mode. Falling short of `n_needed` is an exhaustion error.
#[allow(clippy::too_many_arguments)]
pub fn generate_filtered<T: Element, R: Rng + ?Sized>(
    gen: &mut Generator<T>,
    disc: &Discriminator<T>,
    class: usize,
    n_needed: usize,
    tau: f64,
    noise: NoiseKind,
    rng: &mut R,
    max_draws: usize,
) -> Result<Filtered> {
    if class >= NUM_CLASSES {
        return Err(Error::Label {
            label: class,
            classes: NUM_CLASSES,
        });
    }
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::Plan(format!("threshold {tau} outside [0, 1)")));
    }
    let mut out = Filtered {
        class,
        images: Vec::with_capacity(n_needed),
        scores: Vec::with_capacity(n_needed),
        drawn: 0,
    };
    let latent = gen.config.latent_dim;
    while out.accepted() < n_needed && out.drawn < max_draws {
        let batch = GENERATION_BATCH
            .min(n_needed - out.accepted())
            .min(max_draws - out.drawn);
        let labels = vec![class; batch];
        let z = sample_noise::<T, _>(noise, batch, latent, rng);
        let images = gen.generate(&z, &labels)?;
        let scores = disc.score(&images, &labels)?;
        out.drawn += batch;
        for (bytes, s) in to_bytes(&images).into_iter().zip(scores.data()) {
            let s = s.as_f64();
            if s >= tau && out.accepted() < n_needed {
                out.images.push(bytes);
                out.scores.push(s);
            }
        }
    }
    if out.accepted() < n_needed {
        return Err(Error::Exhausted {
            class,
            drawn: out.drawn,
            accepted: out.accepted(),
            rate: out.rate().unwrap_or(0.0),
            tau,
        });
    }
    Ok(out)
}

/// Runs [`generate_filtered`] for every class with a deficit, each class on its own
/// random stream so results do not depend on class order.
pub fn synthesize<T: Element>(
    gen: &mut Generator<T>,
    disc: &Discriminator<T>,
    plan: &AugmentPlan,
    noise: NoiseKind,
    seed: u64,
) -> Result<Vec<Filtered>> {
    let mut out = Vec::with_capacity(NUM_CLASSES);
    for (class, (&need, name)) in plan.deficits.iter().zip(EMOTIONS).enumerate() {
        let mut rng = stream_rng(seed, Stream::Augment, class as u64);
        let f = generate_filtered(
            gen,
            disc,
            class,
            need,
            plan.tau,
            noise,
            &mut rng,
            need.saturating_mul(plan.oversample),
        )?;
        if need > 0 {
            info!(
                "class {class} ({name}): accepted {} of {} draws",
                f.accepted(),
                f.drawn
            );
        }
        out.push(f);
    }
    Ok(out)
}

/// Real rows first, then synthetic rows grouped by class in the order given.
pub fn merge(real: &LabeledDataset, synthetic: &[Filtered]) -> Result<LabeledDataset> {
    let side = real.side();
    let per = side * side;
    let mut labels = real.labels().to_vec();
    let mut pixels = match real.pixels() {
        Pixels::Raw(p) => p.clone(),
        Pixels::Normalized(_) => real.denormalize()?.raw_bytes().unwrap_or_default().to_vec(),
    };
    for f in synthetic {
        for img in &f.images {
            if img.len() != per {
                return Err(Error::Contract(format!(
                    "synthetic class {} image has {} pixels, real images have {per}",
                    f.class,
                    img.len()
                )));
            }
            labels.push(f.class as u8);
            pixels.extend_from_slice(img);
        }
    }
    LabeledDataset::from_raw(side, labels, pixels)
}

/// Provenance of a merged dataset, written next to the archive as `key=value` text.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub real_counts: [usize; NUM_CLASSES],
    pub synthetic_counts: [usize; NUM_CLASSES],
    pub drawn: [usize; NUM_CLASSES],
    pub tau: f64,
    pub seed: u64,
    pub policy: String,
    /// Identity of the generator checkpoint, e.g. its path and content digest.
    pub generator: String,
}

impl Manifest {
    pub fn new(
        real: &ClassStats,
        synthetic: &[Filtered],
        tau: f64,
        seed: u64,
        policy: &TargetPolicy,
        generator: impl Into<String>,
    ) -> Self {
        let mut synthetic_counts = [0; NUM_CLASSES];
        let mut drawn = [0; NUM_CLASSES];
        for f in synthetic {
            synthetic_counts[f.class] += f.accepted();
            drawn[f.class] += f.drawn;
        }
        Manifest {
            real_counts: real.counts,
            synthetic_counts,
            drawn,
            tau,
            seed,
            policy: policy.to_string(),
            generator: generator.into(),
        }
    }

    pub fn real_total(&self) -> usize {
        self.real_counts.iter().sum()
    }

    pub fn synthetic_total(&self) -> usize {
        self.synthetic_counts.iter().sum()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "generator={}", self.generator);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "tau={}", self.tau);
        let _ = writeln!(s, "policy={}", self.policy);
        let _ = writeln!(s, "real_total={}", self.real_total());
        let _ = writeln!(s, "synthetic_total={}", self.synthetic_total());
        for (c, name) in EMOTIONS.iter().enumerate() {
            let rate = if self.drawn[c] > 0 {
                (self.synthetic_counts[c] as f64 / self.drawn[c] as f64).to_string()
            } else {
                "n/a".into()
            };
            let _ = writeln!(s, "class{c}.name={name}");
            let _ = writeln!(s, "class{c}.real={}", self.real_counts[c]);
            let _ = writeln!(s, "class{c}.synthetic={}", self.synthetic_counts[c]);
            let _ = writeln!(s, "class{c}.drawn={}", self.drawn[c]);
            let _ = writeln!(s, "class{c}.acceptance_rate={rate}");
        }
        s
    }
}

pub fn manifest_path(archive: &Path) -> PathBuf {
    let mut name = archive.as_os_str().to_owned();
    name.push(".manifest");
    PathBuf::from(name)
}

/// Writes the merged dataset as a CGDS archive and its manifest beside it.
pub fn merge_export(
    real: &LabeledDataset,
    synthetic: &[Filtered],
    out_path: &Path,
    manifest: &Manifest,
) -> Result<LabeledDataset> {
    let merged = merge(real, synthetic)?;
    if manifest.real_total() + manifest.synthetic_total() != merged.len() {
        return Err(Error::Contract(format!(
            "manifest counts {} + {} do not add up to {} rows",
            manifest.real_total(),
            manifest.synthetic_total(),
            merged.len()
        )));
    }
    save_archive(&merged, out_path)?;
    let mpath = manifest_path(out_path);
    std::fs::write(&mpath, manifest.to_text()).map_err(|e| Error::io(&mpath, e))?;
    Ok(merged)
}
