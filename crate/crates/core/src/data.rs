//! Group-annotated binary classification data: loading, splitting, label
//! corruption and a synthetic two-group benchmark.
//!
//! Every randomized operation takes an explicit `u64` seed and draws from a
//! ChaCha8 stream, so outputs are a pure function of `(inputs, seed)`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};

/// One labeled, group-annotated example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: u8,
    pub group: usize,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: u8, group: usize) -> Self {
        Self {
            features,
            label,
            group,
        }
    }

    /// Label as a real number, for loss and metric arithmetic.
    #[inline]
    pub fn y(&self) -> f64 {
        f64::from(self.label)
    }
}

/// An ordered collection of samples sharing one feature dimension.
///
/// Construction checks feature lengths, finiteness and binary labels. The
/// stronger "contiguous groups starting at 0" invariant is checked by
/// [`Dataset::check_groups`]; subsets produced by splitting or group
/// filtering are allowed to miss groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<Sample>,
    feature_dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, feature_dim: usize) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != feature_dim {
                return Err(AuditError::DimensionMismatch {
                    expected: feature_dim,
                    actual: s.features.len(),
                });
            }
            if s.label > 1 {
                return Err(AuditError::Domain(format!(
                    "sample {i} has non-binary label {}",
                    s.label
                )));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(AuditError::Domain(format!(
                    "sample {i} has a non-finite feature"
                )));
            }
        }
        Ok(Self {
            samples,
            feature_dim,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Sample count per group id, ordered by id.
    pub fn group_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.samples {
            *counts.entry(s.group).or_insert(0) += 1;
        }
        counts
    }

    /// Verifies that group ids form `0..G` with every group populated.
    pub fn check_groups(&self) -> Result<()> {
        let counts = self.group_counts();
        for (expected, (&id, _)) in counts.iter().enumerate() {
            if id != expected {
                return Err(AuditError::Domain(format!(
                    "group ids must be contiguous from 0; group {expected} has no samples"
                )));
            }
        }
        Ok(())
    }

    /// New dataset made of the given indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            feature_dim: self.feature_dim,
        }
    }

    /// Samples belonging to one group, in original order.
    pub fn filter_group(&self, group: usize) -> Dataset {
        Dataset {
            samples: self
                .samples
                .iter()
                .filter(|s| s.group == group)
                .cloned()
                .collect(),
            feature_dim: self.feature_dim,
        }
    }

    /// All samples except index `skip`.
    pub fn without(&self, skip: usize) -> Dataset {
        Dataset {
            samples: self
                .samples
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != skip)
                .map(|(_, s)| s.clone())
                .collect(),
            feature_dim: self.feature_dim,
        }
    }

    /// Copy with the labels at `indices` replaced by `1 - y`.
    pub fn with_flipped(&self, indices: &[usize]) -> Dataset {
        let mut out = self.clone();
        for &i in indices {
            let s = &mut out.samples[i];
            s.label = 1 - s.label;
        }
        out
    }

    /// Writes the dataset as CSV with columns `x0..x{d-1},label,group`.
    ///
    /// Floats use the shortest representation that round-trips exactly.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = std::io::BufWriter::new(File::create(path)?);
        let mut header: Vec<String> = (0..self.feature_dim).map(|j| format!("x{j}")).collect();
        header.push("label".into());
        header.push("group".into());
        writeln!(w, "{}", header.join(","))?;
        for s in &self.samples {
            for v in &s.features {
                write!(w, "{v},")?;
            }
            writeln!(w, "{},{}", s.label, s.group)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Column names used when reading a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Feature columns in order. Empty means "every column except label and group".
    pub features: Vec<String>,
    pub label: String,
    pub group: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            features: Vec::new(),
            label: "label".into(),
            group: "group".into(),
        }
    }
}

/// Reads a header-carrying CSV file into a [`Dataset`].
///
/// Line numbers in parse errors are 1-based file lines (the header is line 1).
pub fn load_csv<P: AsRef<Path>>(path: P, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| AuditError::Schema(format!("missing column `{name}`")))
    };
    let label_col = find(&schema.label)?;
    let group_col = find(&schema.group)?;
    let feature_cols: Vec<usize> = if schema.features.is_empty() {
        (0..headers.len())
            .filter(|&c| c != label_col && c != group_col)
            .collect()
    } else {
        schema
            .features
            .iter()
            .map(|f| find(f))
            .collect::<Result<_>>()?
    };
    if feature_cols.is_empty() {
        return Err(AuditError::Schema("no feature columns".into()));
    }

    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |c: usize| record.get(c).map(str::trim).unwrap_or("");
        let mut features = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            let v: f64 = cell(c).parse().map_err(|_| AuditError::Parse {
                line,
                message: format!(
                    "non-numeric value `{}` in column `{}`",
                    cell(c),
                    &headers[c]
                ),
            })?;
            if !v.is_finite() {
                return Err(AuditError::Parse {
                    line,
                    message: format!("non-finite value in column `{}`", &headers[c]),
                });
            }
            features.push(v);
        }
        let label = match cell(label_col) {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(AuditError::Parse {
                    line,
                    message: format!("label must be 0 or 1, found `{other}`"),
                })
            }
        };
        let group: usize = cell(group_col).parse().map_err(|_| AuditError::Parse {
            line,
            message: format!(
                "group must be a non-negative integer, found `{}`",
                cell(group_col)
            ),
        })?;
        samples.push(Sample {
            features,
            label,
            group,
        });
    }
    let data = Dataset::new(samples, feature_cols.len())?;
    data.check_groups()?;
    Ok(data)
}

/// Index partition produced by [`split_indices`]. Each part is sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffled 56/14/30 partition of `0..n`: 30% held out, and 20% of the
/// remaining 70% reserved for validation.
pub fn split_indices(n: usize, seed: u64) -> Result<SplitIndices> {
    if n < 10 {
        return Err(AuditError::Size(format!(
            "need at least 10 samples to split, got {n}"
        )));
    }
    // round-half-up in integer arithmetic: round(0.30 n) and round(0.14 n)
    let n_test = (30 * n + 50) / 100;
    let n_val = (14 * n + 50) / 100;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = idx[..n_test].to_vec();
    let mut val = idx[n_test..n_test + n_val].to_vec();
    let mut train = idx[n_test + n_val..].to_vec();
    test.sort_unstable();
    val.sort_unstable();
    train.sort_unstable();
    Ok(SplitIndices { train, val, test })
}

/// Splits a dataset into (train, validation, test) per [`split_indices`].
pub fn split(data: &Dataset, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let parts = split_indices(data.len(), seed)?;
    Ok((
        data.subset(&parts.train),
        data.subset(&parts.val),
        data.subset(&parts.test),
    ))
}

/// Which samples are eligible for label flipping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipScope {
    #[default]
    All,
    Group(usize),
}

/// Record of one label-corruption draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipRecord {
    pub fraction: f64,
    pub seed: u64,
    /// Sorted ascending.
    pub flipped_indices: Vec<usize>,
}

impl FlipRecord {
    /// Re-applies the recorded flips. Applying twice restores the original.
    pub fn apply(&self, data: &Dataset) -> Dataset {
        data.with_flipped(&self.flipped_indices)
    }

    pub fn contains(&self, index: usize) -> bool {
        self.flipped_indices.binary_search(&index).is_ok()
    }
}

/// Flips `round(fraction * pool)` labels, drawn uniformly without
/// replacement from the scope's pool.
pub fn flip_labels(
    data: &Dataset,
    fraction: f64,
    seed: u64,
    scope: FlipScope,
) -> Result<(Dataset, FlipRecord)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(AuditError::Domain(format!(
            "flip fraction {fraction} outside [0, 1]"
        )));
    }
    let pool: Vec<usize> = match scope {
        FlipScope::All => (0..data.len()).collect(),
        FlipScope::Group(g) => (0..data.len())
            .filter(|&i| data.samples[i].group == g)
            .collect(),
    };
    if pool.is_empty() && fraction > 0.0 {
        return Err(AuditError::Domain(
            "no samples eligible for flipping".into(),
        ));
    }
    let count = (fraction * pool.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flipped: Vec<usize> = rand::seq::index::sample(&mut rng, pool.len(), count)
        .into_iter()
        .map(|k| pool[k])
        .collect();
    flipped.sort_unstable();
    let record = FlipRecord {
        fraction,
        seed,
        flipped_indices: flipped,
    };
    Ok((record.apply(data), record))
}

/// Parameters of the synthetic two-group task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub n: usize,
    pub dim: usize,
    pub epsilon: f64,
    pub separation: f64,
    pub seed: u64,
}

impl SyntheticTask {
    pub fn new(n: usize, dim: usize, epsilon: f64, seed: u64) -> Self {
        Self {
            n,
            dim,
            epsilon,
            separation: 2.0,
            seed,
        }
    }

    pub fn generate(&self) -> Result<Dataset> {
        make_synthetic_group_task(self.n, self.dim, self.epsilon, self.separation, self.seed)
    }
}

/// Balanced binary task with a class-skewed minority group.
///
/// Labels are exactly balanced. Group 1 (the minority) holds
/// `round(2 * epsilon * n)` samples, of which a `1/2 + epsilon` share comes
/// from the positive class and `1/2 - epsilon` from the negative class; the
/// remaining samples form group 0. Features are `±(separation/2) u` for the
/// two classes plus standard Gaussian noise, with `u` a random unit direction;
/// group membership carries no feature signal.
pub fn make_synthetic_group_task(
    n: usize,
    dim: usize,
    epsilon: f64,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(AuditError::Domain(format!(
            "n must be even and positive, got {n}"
        )));
    }
    if dim == 0 {
        return Err(AuditError::Domain(
            "feature dimension must be at least 1".into(),
        ));
    }
    if !(0.0..=0.5).contains(&epsilon) {
        return Err(AuditError::Domain(format!(
            "epsilon {epsilon} outside [0, 1/2]"
        )));
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(AuditError::Domain(format!(
            "separation must be finite and >= 0, got {separation}"
        )));
    }
    let half = n / 2;
    let minority = (2.0 * epsilon * n as f64).round() as usize;
    if minority == 0 || minority >= n {
        return Err(AuditError::Domain(format!(
            "epsilon {epsilon} leaves one group empty (minority size {minority} of {n})"
        )));
    }
    let minority_pos = (((0.5 + epsilon) * minority as f64).round() as usize)
        .min(half)
        .max(minority.saturating_sub(half));
    let minority_neg = minority - minority_pos;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = random_unit(&mut rng, dim);

    let mut layout: Vec<(u8, usize)> = Vec::with_capacity(n);
    layout.extend(std::iter::repeat_n((1u8, 1usize), minority_pos));
    layout.extend(std::iter::repeat_n((1u8, 0usize), half - minority_pos));
    layout.extend(std::iter::repeat_n((0u8, 1usize), minority_neg));
    layout.extend(std::iter::repeat_n((0u8, 0usize), half - minority_neg));
    layout.shuffle(&mut rng);

    let offset = separation / 2.0;
    let samples = layout
        .into_iter()
        .map(|(label, group)| {
            let sign = if label == 1 { 1.0 } else { -1.0 };
            let features = (0..dim)
                .map(|j| {
                    let noise: f64 = rng.sample(StandardNormal);
                    sign * offset * u[j] + noise
                })
                .collect();
            Sample {
                features,
                label,
                group,
            }
        })
        .collect();
    let data = Dataset::new(samples, dim)?;
    data.check_groups()?;
    Ok(data)
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            return v;
        }
    }
}
