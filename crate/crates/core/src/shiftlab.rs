//! Synthetic classification data, graded distribution shifts and far-away
//! out-of-distribution sets.
//!
//! Shift kinds and their parameter at intensity `i` (1 to 5):
//!
//! | kind           | transform                                                        |
//! |----------------|------------------------------------------------------------------|
//! | `gauss_noise`  | `x + N(0, (0.1 i)^2)` per feature                                |
//! | `feature_blur` | `x_j <- (1 - a) x_j + a (x_{j-1} + x_{j+1}) / 2`, `a = 0.15 i`, circular |
//! | `rotation`     | rotate features 0 and 1 about the origin by `15 i` degrees       |
//! | `scale`        | `x (1 + 0.2 i)`                                                  |
//! | `mean_shift`   | `x + 0.2 i u` with `u` the unit diagonal `(1, ..., 1) / sqrt(d)` |

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::seed::{self, stream};
use crate::{Error, Result};

/// Label used for out-of-distribution rows.
pub const OOD_LABEL: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split tag {other:?}"))),
        }
    }
}

/// How a dataset was produced; enough to regenerate it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum Descriptor {
    TwoMoons {
        n: usize,
        noise: f64,
        seed: u64,
    },
    Blobs {
        n: usize,
        classes: usize,
        dim: usize,
        spread: f64,
        seed: u64,
    },
    Shifted {
        base: Box<Descriptor>,
        shift: ShiftSpec,
    },
    Ood {
        base: Box<Descriptor>,
        n: usize,
        seed: u64,
    },
    /// Loaded from a file with no recorded provenance.
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[n, d]`
    pub features: Tensor,
    /// Class index, or [`OOD_LABEL`].
    pub labels: Vec<i64>,
    pub splits: Vec<Split>,
    pub class_count: usize,
    pub descriptor: Descriptor,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows tagged with `split`.
    pub fn subset(&self, split: Split) -> Dataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.splits[i] == split).collect();
        self.select(&idx)
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            splits: idx.iter().map(|&i| self.splits[i]).collect(),
            class_count: self.class_count,
            descriptor: self.descriptor.clone(),
        }
    }

    /// Labels as class indices; fails on out-of-distribution rows.
    pub fn class_labels(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .map(|&y| {
                usize::try_from(y)
                    .ok()
                    .filter(|&c| c < self.class_count)
                    .ok_or_else(|| Error::invalid(format!("label {y} is not a class index")))
            })
            .collect()
    }

    pub fn class_counts(&self, split: Split) -> Vec<usize> {
        let mut c = vec![0; self.class_count];
        for (&y, &s) in self.labels.iter().zip(&self.splits) {
            if s == split && y >= 0 {
                c[y as usize] += 1;
            }
        }
        c
    }

    /// Largest Euclidean norm over the rows of `split`.
    pub fn max_norm(&self, split: Split) -> f64 {
        (0..self.len())
            .filter(|&i| self.splits[i] == split)
            .map(|i| norm(self.features.row(i)))
            .fold(0.0, f64::max)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        header.push("split".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.features.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.labels[i].to_string());
            rec.push(self.splits[i].as_str().to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read the CSV layout written by [`Dataset::write_csv`]. `class_count` defaults
    /// to one more than the largest label.
    pub fn read_csv(path: impl AsRef<Path>, class_count: Option<usize>) -> Result<Dataset> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let cols = header.len();
        if cols < 3 || &header[cols - 2] != "label" || &header[cols - 1] != "split" {
            return Err(Error::Format("dataset header must be f0,...,label,split".into()));
        }
        let d = cols - 2;
        for (j, h) in header.iter().take(d).enumerate() {
            if h != format!("f{j}") {
                return Err(Error::Format(format!("column {j} should be f{j}, found {h:?}")));
            }
        }
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut splits = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            for j in 0..d {
                let v: f64 = rec[j]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad feature value {:?}", &rec[j])))?;
                data.push(v);
            }
            labels.push(
                rec[d]
                    .parse::<i64>()
                    .map_err(|_| Error::Format(format!("bad label {:?}", &rec[d])))?,
            );
            splits.push(rec[d + 1].parse()?);
        }
        let n = labels.len();
        let inferred = labels.iter().copied().max().unwrap_or(-1).max(-1) + 1;
        let class_count = class_count.unwrap_or(inferred as usize);
        if labels.iter().any(|&y| y < OOD_LABEL || y >= class_count as i64) {
            return Err(Error::Format("label outside [-1, class_count)".into()));
        }
        Ok(Dataset {
            features: Tensor::matrix(n, d, data)?,
            labels,
            splits,
            class_count,
            descriptor: Descriptor::External,
        })
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Stratified 60/20/20 split so that every class appears in the training split.
fn assign_splits(labels: &[i64], class_count: usize, seed_value: u64) -> Vec<Split> {
    let mut rng = seed::rng(seed::derive(seed_value, stream::SPLIT));
    let mut splits = vec![Split::Train; labels.len()];
    for c in 0..class_count as i64 {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_val = n / 5;
        let n_test = n / 5;
        for (k, &i) in idx.iter().enumerate() {
            splits[i] = if k < n - n_val - n_test {
                Split::Train
            } else if k < n - n_test {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    splits
}

/// Two interleaving half circles with isotropic Gaussian noise.
pub fn make_two_moons(n: usize, noise: f64, seed_value: u64) -> Result<Dataset> {
    if n < 10 {
        return Err(Error::invalid("two_moons needs at least 10 points"));
    }
    if !(noise >= 0.0) {
        return Err(Error::invalid("noise must be non-negative"));
    }
    let mut rng = seed::rng(seed::derive(seed_value, stream::DATA));
    let n_outer = n / 2;
    let n_inner = n - n_outer;
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n_outer {
        let t = std::f64::consts::PI * i as f64 / (n_outer - 1) as f64;
        data.extend([t.cos(), t.sin()]);
        labels.push(0);
    }
    for i in 0..n_inner {
        let t = std::f64::consts::PI * i as f64 / (n_inner - 1) as f64;
        data.extend([1.0 - t.cos(), 0.5 - t.sin()]);
        labels.push(1);
    }
    if noise > 0.0 {
        for v in &mut data {
            *v += noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let splits = assign_splits(&labels, 2, seed_value);
    Ok(Dataset {
        features: Tensor::matrix(n, 2, data)?,
        labels,
        splits,
        class_count: 2,
        descriptor: Descriptor::TwoMoons {
            n,
            noise,
            seed: seed_value,
        },
    })
}

/// Isotropic Gaussian clusters with centres drawn uniformly from `[-10, 10]^d`.
pub fn make_blobs(n: usize, classes: usize, dim: usize, spread: f64, seed_value: u64) -> Result<Dataset> {
    if classes < 2 || dim == 0 || n < 5 * classes {
        return Err(Error::invalid("blobs need >= 2 classes, dim >= 1 and 5 points per class"));
    }
    if !(spread >= 0.0) {
        return Err(Error::invalid("spread must be non-negative"));
    }
    let mut rng = seed::rng(seed::derive(seed_value, stream::DATA));
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect())
        .collect();
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for &m in &centres[c] {
            data.push(m + spread * rng.sample::<f64, _>(StandardNormal));
        }
        labels.push(c as i64);
    }
    let splits = assign_splits(&labels, classes, seed_value);
    Ok(Dataset {
        features: Tensor::matrix(n, dim, data)?,
        labels,
        splits,
        class_count: classes,
        descriptor: Descriptor::Blobs {
            n,
            classes,
            dim,
            spread,
            seed: seed_value,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    GaussNoise,
    FeatureBlur,
    Rotation,
    Scale,
    MeanShift,
}

impl ShiftKind {
    pub const ALL: [ShiftKind; 5] = [
        ShiftKind::GaussNoise,
        ShiftKind::FeatureBlur,
        ShiftKind::Rotation,
        ShiftKind::Scale,
        ShiftKind::MeanShift,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ShiftKind::GaussNoise => "gauss_noise",
            ShiftKind::FeatureBlur => "feature_blur",
            ShiftKind::Rotation => "rotation",
            ShiftKind::Scale => "scale",
            ShiftKind::MeanShift => "mean_shift",
        }
    }
}

impl fmt::Display for ShiftKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShiftKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ShiftKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown shift kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    pub kind: ShiftKind,
    /// 1 (mild) to 5 (severe).
    pub intensity: u8,
    pub seed: u64,
}

impl ShiftSpec {
    pub fn new(kind: ShiftKind, intensity: u8, seed: u64) -> Self {
        Self { kind, intensity, seed }
    }
}

/// Transform the features of `dataset`; labels, split tags and size are unchanged.
pub fn apply_shift(dataset: &Dataset, spec: &ShiftSpec) -> Result<Dataset> {
    if !(1..=5).contains(&spec.intensity) {
        return Err(Error::invalid(format!("shift intensity {} outside 1..=5", spec.intensity)));
    }
    let i = spec.intensity as f64;
    let d = dataset.dim();
    let mut out = dataset.features.clone();
    let mut rng = seed::rng(seed::derive(spec.seed, stream::SHIFT));
    match spec.kind {
        ShiftKind::GaussNoise => {
            let sigma = 0.1 * i;
            for v in out.data_mut() {
                *v += sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        ShiftKind::FeatureBlur => {
            let a = 0.15 * i;
            if d > 1 {
                for r in 0..dataset.len() {
                    let src = dataset.features.row(r);
                    let row = &mut out.data_mut()[r * d..(r + 1) * d];
                    for j in 0..d {
                        let nb = 0.5 * (src[(j + d - 1) % d] + src[(j + 1) % d]);
                        row[j] = (1.0 - a) * src[j] + a * nb;
                    }
                }
            }
        }
        ShiftKind::Rotation => {
            if d < 2 {
                return Err(Error::invalid("rotation needs at least two features"));
            }
            let theta = (15.0 * i).to_radians();
            let (s, c) = theta.sin_cos();
            for row in out.data_mut().chunks_exact_mut(d) {
                let (x, y) = (row[0], row[1]);
                row[0] = c * x - s * y;
                row[1] = s * x + c * y;
            }
        }
        ShiftKind::Scale => {
            let k = 1.0 + 0.2 * i;
            for v in out.data_mut() {
                *v *= k;
            }
        }
        ShiftKind::MeanShift => {
            let step = 0.2 * i / (d as f64).sqrt();
            for v in out.data_mut() {
                *v += step;
            }
        }
    }
    Ok(Dataset {
        features: out,
        labels: dataset.labels.clone(),
        splits: dataset.splits.clone(),
        class_count: dataset.class_count,
        descriptor: Descriptor::Shifted {
            base: Box::new(dataset.descriptor.clone()),
            shift: *spec,
        },
    })
}

/// Points on a shell at 4 to 6 times the training radius, in uniformly random
/// directions, labelled [`OOD_LABEL`] and tagged `test`. The minimum distance to
/// any training point exceeds twice the training radius.
pub fn make_ood(dataset: &Dataset, n: usize, seed_value: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("OOD set needs at least one point"));
    }
    let radius = dataset.max_norm(Split::Train);
    if !(radius > 0.0) {
        return Err(Error::invalid("training split is empty or degenerate"));
    }
    let d = dataset.dim();
    let mut rng = seed::rng(seed::derive(seed_value, stream::OOD));
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let mut dir: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let len = norm(&dir).max(1e-12);
        let r = radius * rng.random_range(4.0..6.0);
        for v in &mut dir {
            *v *= r / len;
        }
        data.extend(dir);
    }
    Ok(Dataset {
        features: Tensor::matrix(n, d, data)?,
        labels: vec![OOD_LABEL; n],
        splits: vec![Split::Test; n],
        class_count: dataset.class_count,
        descriptor: Descriptor::Ood {
            base: Box::new(dataset.descriptor.clone()),
            n,
            seed: seed_value,
        },
    })
}
