//! Labeled grayscale datasets: CSV ingest, the CGDS archive format, normalization,
//! seeded batching and class statistics.
//!
//! CGDS layout (little-endian):
//!
//! ```text
//! "CGDS" | version u16 | dtype u8 | label count u32 | rank u8 | extents u32 × rank
//!        | labels (u8 × count) | images (count × H × W × C values of dtype)
//! ```

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::{EMOTIONS, NUM_CLASSES};
use crate::tensor::{DType, Element, Tensor};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"CGDS";
pub const ARCHIVE_VERSION: u16 = 1;
pub const DEFAULT_SIDE: usize = 64;
/// Recorded in run logs so batch order can be replayed.
pub const SHUFFLE_ALGORITHM: &str = "chacha8-fisher-yates";

#[derive(Debug, Clone, PartialEq)]
pub enum Pixels {
    Raw(Vec<u8>),
    Normalized(Vec<f32>),
}

/// Images `(N, side, side, 1)` with labels in `0..7`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    side: usize,
    labels: Vec<u8>,
    pixels: Pixels,
}

#[inline]
pub fn normalize_byte(b: u8) -> f32 {
    b as f32 / 127.5 - 1.0
}

/// `round((x + 1) · 127.5)` clamped to `[0, 255]`.
#[inline]
pub fn denormalize_value(x: f64) -> u8 {
    ((x + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

impl LabeledDataset {
    pub fn from_raw(side: usize, labels: Vec<u8>, pixels: Vec<u8>) -> Result<Self> {
        Self::build(side, labels, Pixels::Raw(pixels))
    }

    pub fn from_normalized(side: usize, labels: Vec<u8>, pixels: Vec<f32>) -> Result<Self> {
        Self::build(side, labels, Pixels::Normalized(pixels))
    }

    fn build(side: usize, labels: Vec<u8>, pixels: Pixels) -> Result<Self> {
        if labels.is_empty() || side == 0 {
            return Err(Error::Contract(
                "dataset must contain at least one image".into(),
            ));
        }
        let per = side * side;
        let len = match &pixels {
            Pixels::Raw(p) => p.len(),
            Pixels::Normalized(p) => p.len(),
        };
        if len != labels.len() * per {
            return Err(Error::dim(
                "dataset",
                format!(
                    "{} labels need {} pixels, got {len}",
                    labels.len(),
                    labels.len() * per
                ),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Label {
                label: bad as usize,
                classes: NUM_CLASSES,
            });
        }
        Ok(LabeledDataset {
            side,
            labels,
            pixels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.len(), self.side, self.side, 1]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn pixels(&self) -> &Pixels {
        &self.pixels
    }

    pub fn is_normalized(&self) -> bool {
        matches!(self.pixels, Pixels::Normalized(_))
    }

    /// Pixel bytes of a raw dataset.
    pub fn raw_bytes(&self) -> Option<&[u8]> {
        match &self.pixels {
            Pixels::Raw(p) => Some(p),
            Pixels::Normalized(_) => None,
        }
    }

    /// Maps bytes to `x / 127.5 − 1`.
    pub fn normalize(&self) -> Result<LabeledDataset> {
        match &self.pixels {
            Pixels::Raw(p) => Ok(LabeledDataset {
                side: self.side,
                labels: self.labels.clone(),
                pixels: Pixels::Normalized(p.iter().map(|&b| normalize_byte(b)).collect()),
            }),
            Pixels::Normalized(_) => Err(Error::Contract("dataset is already normalized".into())),
        }
    }

    pub fn denormalize(&self) -> Result<LabeledDataset> {
        match &self.pixels {
            Pixels::Normalized(p) => Ok(LabeledDataset {
                side: self.side,
                labels: self.labels.clone(),
                pixels: Pixels::Raw(p.iter().map(|&x| denormalize_value(x as f64)).collect()),
            }),
            Pixels::Raw(_) => Err(Error::Contract("dataset is not normalized".into())),
        }
    }

    /// Images at `indices` as a `(B, side, side, 1)` tensor in `[-1, 1]`, plus their labels.
    pub fn gather<T: Element>(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let Pixels::Normalized(p) = &self.pixels else {
            return Err(Error::Contract(
                "training batches need a normalized dataset".into(),
            ));
        };
        let per = self.side * self.side;
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Contract(format!("index {i} out of {}", self.len())));
            }
            data.extend(p[i * per..(i + 1) * per].iter().map(|&x| T::lit(x as f64)));
            labels.push(self.labels[i] as usize);
        }
        let t = Tensor::new(&[indices.len(), self.side, self.side, 1], data)?;
        Ok((t, labels))
    }

    pub fn class_distribution(&self) -> ClassStats {
        ClassStats::from_labels(self.labels.iter().map(|&l| l as usize))
    }
}

/// Reads a `emotion,pixels` CSV of 64×64 images.
pub fn load_csv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    load_csv_with_side(path, DEFAULT_SIDE)
}

/// Reads a `emotion,pixels` CSV whose rows hold `side × side` space-separated bytes.
/// Extra trailing columns (such as a usage split) are ignored.
pub fn load_csv_with_side(path: impl AsRef<Path>, side: usize) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(std::io::BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 1,
            detail: e.to_string(),
        })?
        .clone();
    if headers.get(0).map(str::trim) != Some("emotion")
        || headers.get(1).map(str::trim) != Some("pixels")
    {
        return Err(Error::Parse {
            row: 1,
            detail: format!(
                "expected header `emotion,pixels`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let per = side * side;
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = reader.read_record(&mut record).map_err(|e| Error::Parse {
            row: e.position().map_or(0, |p| p.line() as usize),
            detail: e.to_string(),
        })?;
        if !more {
            break;
        }
        let row = record
            .position()
            .map_or(labels.len() + 2, |p| p.line() as usize);
        let label_field = record.get(0).unwrap_or("").trim();
        let label: usize = label_field.parse().map_err(|_| Error::Parse {
            row,
            detail: format!("label `{label_field}` is not an integer"),
        })?;
        if label >= NUM_CLASSES {
            return Err(Error::Parse {
                row,
                detail: format!("label {label} outside 0..{NUM_CLASSES}"),
            });
        }
        let field = record.get(1).ok_or_else(|| Error::Parse {
            row,
            detail: "missing pixels column".into(),
        })?;
        let start = pixels.len();
        for tok in field.split_ascii_whitespace() {
            let v: u16 = tok.parse().map_err(|_| Error::Parse {
                row,
                detail: format!("pixel `{tok}` is not an integer"),
            })?;
            if v > 255 {
                return Err(Error::Parse {
                    row,
                    detail: format!("pixel {v} outside 0..=255"),
                });
            }
            pixels.push(v as u8);
        }
        let count = pixels.len() - start;
        if count != per {
            return Err(Error::Parse {
                row,
                detail: format!("expected {per} pixels, found {count}"),
            });
        }
        labels.push(label as u8);
    }
    if labels.is_empty() {
        return Err(Error::Format(format!("{}: no data rows", path.display())));
    }
    LabeledDataset::from_raw(side, labels, pixels)
}

/// Writes a dataset as `emotion,pixels` CSV. Raw datasets only.
pub fn save_csv(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = ds
        .raw_bytes()
        .ok_or_else(|| Error::Contract("CSV export needs raw byte images".into()))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let per = ds.side * ds.side;
    let mut line = String::with_capacity(per * 4 + 8);
    let io = |e| Error::io(path, e);
    w.write_all(b"emotion,pixels\n").map_err(io)?;
    for (i, &l) in ds.labels.iter().enumerate() {
        use std::fmt::Write as _;
        line.clear();
        let _ = write!(line, "{l},");
        for (j, b) in bytes[i * per..(i + 1) * per].iter().enumerate() {
            if j > 0 {
                line.push(' ');
            }
            let _ = write!(line, "{b}");
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn encode_archive(ds: &LabeledDataset) -> Vec<u8> {
    let (dtype, payload) = match &ds.pixels {
        Pixels::Raw(p) => (DType::U8, p.clone()),
        Pixels::Normalized(p) => {
            let mut out = Vec::with_capacity(p.len() * 4);
            p.iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
            (DType::F32, out)
        }
    };
    let mut out = Vec::with_capacity(32 + ds.labels.len() + payload.len());
    out.extend_from_slice(ARCHIVE_MAGIC);
    out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    out.push(dtype as u8);
    out.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    let shape = ds.shape();
    out.push(shape.len() as u8);
    for e in shape {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    out.extend_from_slice(&ds.labels);
    out.extend_from_slice(&payload);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated archive: {what} needs {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_archive(bytes: &[u8]) -> Result<LabeledDataset> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4, "magic")? != ARCHIVE_MAGIC {
        return Err(Error::Format("bad magic, expected CGDS".into()));
    }
    let version = c.u16("version")?;
    if version != ARCHIVE_VERSION {
        return Err(Error::Format(format!("unknown archive version {version}")));
    }
    let code = c.u8("dtype")?;
    let dtype = match DType::from_code(code) {
        Some(d @ (DType::U8 | DType::F32)) => d,
        _ => return Err(Error::Format(format!("unsupported dtype code {code}"))),
    };
    let count = c.u32("label count")? as usize;
    let rank = c.u8("rank")? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(c.u32("extent")? as usize);
    }
    if rank != 4 || shape[0] != count || shape[1] != shape[2] || shape[3] != 1 {
        return Err(Error::Format(format!(
            "shape {shape:?} is not ({count}, side, side, 1)"
        )));
    }
    let labels = c.take(count, "labels")?.to_vec();
    let n: usize = shape.iter().product();
    let payload = c.take(n * dtype.size(), "images")?;
    if c.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            bytes.len() - c.pos
        )));
    }
    let side = shape[1];
    let ds = match dtype {
        DType::U8 => LabeledDataset::from_raw(side, labels, payload.to_vec()),
        _ => LabeledDataset::from_normalized(
            side,
            labels,
            payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        ),
    };
    ds.map_err(|e| Error::Format(e.to_string()))
}

pub fn save_archive(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_archive(ds)).map_err(|e| Error::io(path, e))
}

pub fn load_archive(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_archive(&bytes)
}

/// Loads a CGDS archive (detected by magic) or a CSV with `side × side` images.
pub fn load_any(path: impl AsRef<Path>, side: usize) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let mut magic = [0u8; 4];
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let n = f.read(&mut magic).map_err(|e| Error::io(path, e))?;
    if n == 4 && &magic == ARCHIVE_MAGIC {
        load_archive(path)
    } else {
        load_csv_with_side(path, side)
    }
}

/// One epoch of index batches: a seeded permutation of `0..len` cut into chunks of
/// `batch_size`, the last possibly shorter.
pub fn batches(len: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if len == 0 {
        return Err(Error::Contract("cannot batch an empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Contract("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Per-class counts for the seven emotion labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub counts: [usize; NUM_CLASSES],
    pub total: usize,
    /// Largest count over smallest non-zero count.
    pub imbalance_ratio: f64,
    /// Set when at least one class has no samples (excluded from the ratio).
    pub has_empty_class: bool,
}

impl ClassStats {
    pub fn from_counts(counts: [usize; NUM_CLASSES]) -> Self {
        let total = counts.iter().sum();
        let max = counts.iter().copied().max().unwrap_or(0);
        let min_nonzero = counts.iter().copied().filter(|&c| c > 0).min();
        let imbalance_ratio = match min_nonzero {
            Some(m) => max as f64 / m as f64,
            None => 1.0,
        };
        ClassStats {
            counts,
            total,
            imbalance_ratio,
            has_empty_class: counts.contains(&0),
        }
    }

    pub fn from_labels(labels: impl IntoIterator<Item = usize>) -> Self {
        let mut counts = [0; NUM_CLASSES];
        for l in labels {
            counts[l] += 1;
        }
        Self::from_counts(counts)
    }

    pub fn max_count(&self) -> usize {
        self.counts.iter().copied().max().unwrap_or(0)
    }
}

impl fmt::Display for ClassStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<5} {:<9} {:>8}", "Label", "Emotion", "Images")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(f, "{i} {} {c}", EMOTIONS[i])?;
        }
        writeln!(f, "total {}", self.total)?;
        write!(f, "imbalance {:.2}", self.imbalance_ratio)?;
        if self.has_empty_class {
            write!(f, " (empty classes excluded)")?;
        }
        Ok(())
    }
}
