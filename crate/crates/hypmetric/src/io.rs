//! Feature-file ingestion, split configuration, the synthetic hierarchical
//! generator, and the embedding export format.
//!
//! Feature files ("HYPF") are little-endian and checksummed:
//!
//! ```text
//! magic "HYPF" | version u32 | count u64 | dim u32 | label_width u32
//! count * ( dim * f32 | label u32 )
//! crc32 over all preceding bytes
//! ```
//!
//! Embedding exports ("HYPE") follow the same layout with f64 coordinates, a
//! per-record uncertainty value, and the curvature recorded in the header.

use std::ops::Range;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: [u8; 4] = *b"HYPF";
pub const FEATURE_VERSION: u32 = 1;
pub const EMBEDDING_MAGIC: [u8; 4] = *b"HYPE";
pub const EMBEDDING_VERSION: u32 = 1;

/// One backbone feature vector with its class label. Features are stored in
/// 32-bit and widened to 64-bit when they enter the math.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub feature: Vec<f32>,
    pub label: u32,
    /// Record index within its file, assigned on read / generation.
    pub id: u64,
}

impl FeatureRecord {
    pub fn widened(&self) -> Vec<f64> {
        self.feature.iter().map(|&v| v as f64).collect()
    }
}

fn check_uniform_dim(records: &[FeatureRecord]) -> Result<usize> {
    let dim = records.first().map_or(0, |r| r.feature.len());
    for r in records {
        if r.feature.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: r.feature.len(),
            });
        }
    }
    Ok(dim)
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated {
                expected: self.pos + n,
                got: self.buf.len(),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Strips and verifies the trailing CRC32; also rejects wrong magic upfront.
pub(crate) fn open_checked<'a>(buf: &'a [u8], magic: &[u8; 4]) -> Result<Reader<'a>> {
    if buf.len() < 4 || &buf[..4] != magic {
        return Err(Error::BadMagic { expected: *magic });
    }
    if buf.len() < 8 {
        return Err(Error::Truncated {
            expected: 8,
            got: buf.len(),
        });
    }
    let body = &buf[..buf.len() - 4];
    let stored = u32::from_le_bytes(buf[buf.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    let mut r = Reader::new(body);
    r.take(4)?; // magic
    Ok(r)
}

pub(crate) fn seal(mut buf: Vec<u8>) -> Vec<u8> {
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn write_features(path: &Path, records: &[FeatureRecord]) -> Result<()> {
    let dim = check_uniform_dim(records)?;
    let mut buf = Vec::with_capacity(24 + records.len() * (4 * dim + 4) + 4);
    buf.extend_from_slice(&FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(records.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&4u32.to_le_bytes()); // label width in bytes
    for r in records {
        for &v in &r.feature {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&r.label.to_le_bytes());
    }
    std::fs::write(path, seal(buf))?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureRecord>> {
    let buf = std::fs::read(path)?;
    let mut r = open_checked(&buf, &FEATURE_MAGIC)?;
    let version = r.u32()?;
    if version != FEATURE_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            current: FEATURE_VERSION,
        });
    }
    let count = r.u64()? as usize;
    let dim = r.u32()? as usize;
    let label_width = r.u32()?;
    if label_width != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            got: label_width as usize,
        });
    }
    let mut records = Vec::with_capacity(count);
    for id in 0..count {
        let mut feature = Vec::with_capacity(dim);
        for index in 0..dim {
            let v = r.f32()?;
            if !v.is_finite() {
                return Err(Error::NonFiniteInput { index });
            }
            feature.push(v);
        }
        let label = r.u32()?;
        records.push(FeatureRecord {
            feature,
            label,
            id: id as u64,
        });
    }
    Ok(records)
}

/// Named class ranges for a train/test split; ranges are half-open and must
/// be pairwise disjoint.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitSpec {
    pub train: Vec<Range<u32>>,
    pub test: Vec<Range<u32>>,
}

impl SplitSpec {
    /// Parses lines of the form `train: 0..100` or `test: 100..150, 180..200`.
    /// `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = SplitSpec::default();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (name, ranges) = line.split_once(':').ok_or(Error::SplitParse {
                line: line_no,
                msg: "expected `train:` or `test:` followed by ranges".into(),
            })?;
            let target = match name.trim() {
                "train" => &mut spec.train,
                "test" => &mut spec.test,
                other => {
                    return Err(Error::SplitParse {
                        line: line_no,
                        msg: format!("unknown split name `{other}`"),
                    })
                }
            };
            for part in ranges.split(',') {
                let part = part.trim();
                if part.is_empty() {
                    continue;
                }
                let (a, b) = part.split_once("..").ok_or(Error::SplitParse {
                    line: line_no,
                    msg: format!("range `{part}` must be `start..end`"),
                })?;
                let start: u32 = a.trim().parse().map_err(|_| Error::SplitParse {
                    line: line_no,
                    msg: format!("bad range start `{a}`"),
                })?;
                let end: u32 = b.trim().parse().map_err(|_| Error::SplitParse {
                    line: line_no,
                    msg: format!("bad range end `{b}`"),
                })?;
                if start >= end {
                    return Err(Error::SplitParse {
                        line: line_no,
                        msg: format!("empty range {start}..{end}"),
                    });
                }
                target.push(start..end);
            }
        }
        spec.check_disjoint()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn check_disjoint(&self) -> Result<()> {
        let mut all: Vec<&Range<u32>> = self.train.iter().chain(self.test.iter()).collect();
        all.sort_by_key(|r| (r.start, r.end));
        for pair in all.windows(2) {
            if pair[1].start < pair[0].end {
                return Err(Error::SplitParse {
                    line: 0,
                    msg: format!(
                        "ranges {}..{} and {}..{} overlap",
                        pair[0].start, pair[0].end, pair[1].start, pair[1].end
                    ),
                });
            }
        }
        Ok(())
    }

    fn side_of(&self, label: u32) -> Option<bool> {
        if self.train.iter().any(|r| r.contains(&label)) {
            Some(true)
        } else if self.test.iter().any(|r| r.contains(&label)) {
            Some(false)
        } else {
            None
        }
    }
}

/// Partitions records by class range; every label must fall in exactly one
/// side of the split.
pub fn apply_split(
    records: &[FeatureRecord],
    spec: &SplitSpec,
) -> Result<(Vec<FeatureRecord>, Vec<FeatureRecord>)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for r in records {
        match spec.side_of(r.label) {
            Some(true) => train.push(r.clone()),
            Some(false) => test.push(r.clone()),
            None => return Err(Error::UnknownClass(r.label)),
        }
    }
    Ok((train, test))
}

/// Synthetic hierarchical feature generator. Class centers sit at the leaves
/// of a balanced binary tree of random offsets whose norms halve per level;
/// the leaf-level offset norm equals `separation`, so nearest class centers
/// end up roughly `sqrt(2) * separation` apart.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub depth: usize,
    /// Isotropic Gaussian spread around each class center.
    pub sigma: f64,
    /// Leaf-level offset norm; keep `sigma < separation` for a separable set.
    pub separation: f64,
    pub seed: u64,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.per_class == 0 || self.dim == 0 || self.depth == 0 {
            return Err(Error::InvalidConfig(
                "classes, per-class, dim and depth must all be positive".into(),
            ));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sigma must be a nonnegative finite real, got {}",
                self.sigma
            )));
        }
        if !(self.separation.is_finite() && self.separation > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "separation must be a positive finite real, got {}",
                self.separation
            )));
        }
        let leaves = 1usize
            .checked_shl(self.depth as u32)
            .unwrap_or(usize::MAX);
        if self.classes > leaves {
            return Err(Error::InvalidConfig(format!(
                "{} classes do not fit in a depth-{} tree ({} leaves)",
                self.classes, self.depth, leaves
            )));
        }
        Ok(())
    }
}

fn unit_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Leaf centers of the offset tree; exposed for tests.
pub(crate) fn synth_centers(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![vec![0.0; spec.dim]];
    for level in 1..=spec.depth {
        // Root-level offsets are the longest; each level halves them so the
        // leaf level ends at `separation`.
        let norm = spec.separation * 2f64.powi((spec.depth - level) as i32);
        let mut next = Vec::with_capacity(centers.len() * 2);
        for parent in &centers {
            for _ in 0..2 {
                let dir = unit_direction(rng, spec.dim);
                next.push(
                    parent
                        .iter()
                        .zip(&dir)
                        .map(|(p, d)| p + norm * d)
                        .collect(),
                );
            }
        }
        centers = next;
    }
    centers
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<FeatureRecord>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers = synth_centers(spec, &mut rng);
    let mut records = Vec::with_capacity(spec.classes * spec.per_class);
    for class in 0..spec.classes {
        let center = &centers[class];
        for _ in 0..spec.per_class {
            let feature: Vec<f32> = center
                .iter()
                .map(|&m| {
                    let noise: f64 = rng.sample(StandardNormal);
                    (m + spec.sigma * noise) as f32
                })
                .collect();
            records.push(FeatureRecord {
                feature,
                label: class as u32,
                id: records.len() as u64,
            });
        }
    }
    Ok(records)
}

/// One exported embedding: ball coordinates, clamped uncertainty, label.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub coords: Vec<f64>,
    pub uncertainty: f64,
    pub label: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub curvature: f64,
    pub dim: usize,
    pub records: Vec<EmbeddingRecord>,
}

pub fn write_embeddings(path: &Path, file: &EmbeddingFile) -> Result<()> {
    for r in &file.records {
        if r.coords.len() != file.dim {
            return Err(Error::DimensionMismatch {
                expected: file.dim,
                got: r.coords.len(),
            });
        }
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(&EMBEDDING_MAGIC);
    buf.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    buf.extend_from_slice(&(file.records.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(file.dim as u32).to_le_bytes());
    buf.extend_from_slice(&file.curvature.to_le_bytes());
    for r in &file.records {
        for &v in &r.coords {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&r.uncertainty.to_le_bytes());
        buf.extend_from_slice(&r.label.to_le_bytes());
    }
    std::fs::write(path, seal(buf))?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingFile> {
    let buf = std::fs::read(path)?;
    let mut r = open_checked(&buf, &EMBEDDING_MAGIC)?;
    let version = r.u32()?;
    if version != EMBEDDING_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            current: EMBEDDING_VERSION,
        });
    }
    let count = r.u64()? as usize;
    let dim = r.u32()? as usize;
    let curvature = r.f64()?;
    if !(curvature.is_finite() && curvature > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "embedding file carries a non-positive curvature {curvature}"
        )));
    }
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let mut coords = Vec::with_capacity(dim);
        for _ in 0..dim {
            coords.push(r.f64()?);
        }
        let uncertainty = r.f64()?;
        let label = r.u32()?;
        records.push(EmbeddingRecord {
            coords,
            uncertainty,
            label,
        });
    }
    Ok(EmbeddingFile {
        curvature,
        dim,
        records,
    })
}
