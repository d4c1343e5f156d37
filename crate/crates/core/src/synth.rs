//! Seed-deterministic generators for the synthetic benchmarks.
//!
//! Every generator is a pure function of its parameters and seed. Datasets
//! serialize to a CSV with header `x_1,…,x_d,label` (0-based labels) plus a
//! JSON sidecar holding the generator name, parameters, seed and class count.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::optim::LinearModel;
use crate::seed::rng_from_seed;

/// Default cap on Gaussian draws in [`gen_separated_means`].
pub const DEFAULT_REJECTION_BUDGET: usize = 1_000_000;

/// Standard deviation of the Gaussian the cluster means are drawn from.
pub const DEFAULT_MEAN_SPREAD: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: String,
    pub params: Value,
    pub seed: Option<u64>,
    pub num_classes: usize,
}

/// Labeled points stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    meta: DatasetMeta,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, dim: usize, labels: Vec<usize>, meta: DatasetMeta) -> Result<Self> {
        let m = meta.num_classes;
        if m < 2 {
            return Err(Error::TooFewClasses(m));
        }
        if labels.is_empty() {
            return Err(Error::InvalidParameter("dataset needs at least one point".into()));
        }
        if inputs.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch(inputs.len(), labels.len() * dim));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= m) {
            return Err(Error::LabelOutOfRange { label, m });
        }
        if let Some((index, &value)) = inputs.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self {
            inputs,
            dim,
            labels,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.meta.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.labels.iter().enumerate().map(|(i, &y)| (self.input(i), y))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.dim).map(|i| format!("x_{i}")).collect();
        header.push("label".into());
        out.write_record(&header)?;
        for (x, y) in self.iter() {
            let mut rec: Vec<String> = x.iter().map(|v| format!("{v:?}")).collect();
            rec.push(y.to_string());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Parses the CSV format. With `num_classes` absent, the class count is
    /// taken as the largest label plus one.
    pub fn read_csv(r: impl Read, num_classes: Option<usize>) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let cols = header.len();
        if cols == 0 || &header[cols - 1] != "label" {
            return Err(Error::Parse("last column must be `label`".into()));
        }
        let dim = cols - 1;
        for (i, name) in header.iter().take(dim).enumerate() {
            if name != format!("x_{}", i + 1) {
                return Err(Error::Parse(format!("column {} must be x_{}, got {name:?}", i + 1, i + 1)));
            }
        }
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != cols {
                return Err(Error::Parse(format!("row {} has {} fields, expected {cols}", row + 1, rec.len())));
            }
            for field in rec.iter().take(dim) {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {}: bad number {field:?}", row + 1)))?;
                inputs.push(v);
            }
            let label: usize = rec[dim]
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("row {}: bad label {:?}", row + 1, &rec[dim])))?;
            labels.push(label);
        }
        let m = match num_classes {
            Some(m) => m,
            None => labels.iter().max().map_or(0, |&l| l.saturating_add(1)),
        };
        let meta = DatasetMeta {
            generator: "csv".into(),
            params: json!({}),
            seed: None,
            num_classes: m,
        };
        Self::new(inputs, dim, labels, meta)
    }

    /// Writes `path` as CSV and the metadata next to it as `<stem>.json`.
    pub fn save(&self, path: &Path) -> Result<PathBuf> {
        self.write_csv(File::create(path)?)?;
        let sidecar = sidecar_path(path);
        let mut f = File::create(&sidecar)?;
        serde_json::to_writer_pretty(&mut f, &self.meta)?;
        writeln!(f)?;
        Ok(sidecar)
    }

    /// Reads a dataset saved by [`Dataset::save`]; the sidecar is optional.
    pub fn load(path: &Path) -> Result<Self> {
        let sidecar = sidecar_path(path);
        let meta: Option<DatasetMeta> = if sidecar.exists() {
            Some(serde_json::from_reader(File::open(&sidecar)?)?)
        } else {
            None
        };
        let mut data = Self::read_csv(File::open(path)?, meta.as_ref().map(|m| m.num_classes))?;
        if let Some(meta) = meta {
            data.meta = meta;
        }
        Ok(data)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn standard_normal_vec(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Uniform draw from the simplex (Dirichlet(1, …, 1)).
pub fn dirichlet_ones(rng: &mut impl Rng, m: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// The first benchmark: 68 copies of the origin in R², 10 each for classes
/// 0 and 1 and 8 each for classes 2..8.
pub fn gen_exp1() -> Dataset {
    let counts = [10, 10, 8, 8, 8, 8, 8, 8];
    let labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    let meta = DatasetMeta {
        generator: "exp1".into(),
        params: json!({ "class_counts": counts, "dim": 2 }),
        seed: None,
        num_classes: counts.len(),
    };
    Dataset::new(vec![0.0; labels.len() * 2], 2, labels, meta).expect("static dataset is valid")
}

/// Greedy rejection sampling of `n` points from `N(0, spread² I)` in R^d
/// with pairwise ℓ2 distance at least `c √d`.
pub fn gen_separated_means(
    n: usize,
    d: usize,
    c: f64,
    spread: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>> {
    gen_separated_means_with_budget(n, d, c, spread, rng, DEFAULT_REJECTION_BUDGET)
}

pub fn gen_separated_means_with_budget(
    n: usize,
    d: usize,
    c: f64,
    spread: f64,
    rng: &mut impl Rng,
    budget: usize,
) -> Result<Vec<Vec<f64>>> {
    if n == 0 || d == 0 || !(c > 0.0) || !(spread > 0.0) || !spread.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "need N >= 1, d >= 1, c > 0, spread > 0; got N = {n}, d = {d}, c = {c}, spread = {spread}"
        )));
    }
    let min_sq = c * c * d as f64;
    let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut draws = 0;
    while accepted.len() < n {
        if draws == budget {
            return Err(Error::BudgetExhausted {
                budget,
                accepted: accepted.len(),
                wanted: n,
            });
        }
        draws += 1;
        let mut cand = standard_normal_vec(rng, d);
        cand.iter_mut().for_each(|v| *v *= spread);
        let far = accepted.iter().all(|a| {
            a.iter().zip(&cand).map(|(x, y)| (x - y).powi(2)).sum::<f64>() >= min_sq
        });
        if far {
            accepted.push(cand);
        }
    }
    Ok(accepted)
}

/// Overlapping-mixture benchmark parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exp2Params {
    pub n_means: usize,
    pub dim: usize,
    pub separation: f64,
    pub mean_spread: f64,
    /// Means per class, `K`.
    pub means_per_class: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub num_classes: usize,
}

/// Class count of the mixture benchmark when none is given.
pub const DEFAULT_EXP2_CLASSES: usize = 10;

impl Exp2Params {
    /// Defaults with [`DEFAULT_EXP2_CLASSES`] classes.
    pub fn with_means(n_means: usize) -> Self {
        Self {
            n_means,
            dim: 2,
            separation: 2.0,
            mean_spread: DEFAULT_MEAN_SPREAD,
            means_per_class: 5,
            train_per_class: 40,
            test_per_class: 7,
            num_classes: DEFAULT_EXP2_CLASSES,
        }
    }
}

fn gaussian_point(rng: &mut impl Rng, mean: &[f64], out: &mut Vec<f64>) {
    out.extend(mean.iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)));
}

/// Each class mixes `K` of the `N` separated means with Dirichlet(1)
/// weights; train and test share the means and class structure.
pub fn gen_exp2(p: &Exp2Params, seed: u64) -> Result<(Dataset, Dataset)> {
    if p.means_per_class == 0 || p.means_per_class > p.n_means {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= K <= N, got K = {}, N = {}",
            p.means_per_class, p.n_means
        )));
    }
    if p.train_per_class == 0 || p.test_per_class == 0 || p.num_classes < 2 {
        return Err(Error::InvalidParameter(
            "need L_train, L_test >= 1 and M >= 2".into(),
        ));
    }
    let mut rng = rng_from_seed(seed);
    let means = gen_separated_means(p.n_means, p.dim, p.separation, p.mean_spread, &mut rng)?;
    let mut structure = Vec::with_capacity(p.num_classes);
    for _ in 0..p.num_classes {
        let chosen = sample(&mut rng, p.n_means, p.means_per_class).into_vec();
        let mix = dirichlet_ones(&mut rng, p.means_per_class);
        let picker = WeightedIndex::new(&mix)
            .map_err(|e| Error::InvalidParameter(format!("mixing weights: {e}")))?;
        structure.push((chosen, picker));
    }
    let mut split = |per_class: usize, name: &str| -> Result<Dataset> {
        let mut inputs = Vec::with_capacity(p.num_classes * per_class * p.dim);
        let mut labels = Vec::with_capacity(p.num_classes * per_class);
        for (class, (chosen, picker)) in structure.iter().enumerate() {
            for _ in 0..per_class {
                let mean = &means[chosen[picker.sample(&mut rng)]];
                gaussian_point(&mut rng, mean, &mut inputs);
                labels.push(class);
            }
        }
        let meta = DatasetMeta {
            generator: format!("exp2/{name}"),
            params: serde_json::to_value(p)?,
            seed: Some(seed),
            num_classes: p.num_classes,
        };
        Dataset::new(inputs, p.dim, labels, meta)
    };
    let train = split(p.train_per_class, "train")?;
    let test = split(p.test_per_class, "test")?;
    Ok((train, test))
}

/// Separated-cluster benchmark parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exp3Params {
    pub n_means: usize,
    pub dim: usize,
    pub separation: f64,
    pub mean_spread: f64,
    /// Classes per mean.
    pub k: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

impl Exp3Params {
    pub fn with_means(n_means: usize) -> Self {
        Self {
            n_means,
            dim: 5,
            separation: 2.0,
            mean_spread: DEFAULT_MEAN_SPREAD,
            k: 5,
            train_per_class: 20,
            test_per_class: 7,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.n_means * self.k
    }
}

/// Every mean spawns `k` classes of identically distributed points, so
/// classes `j·k .. (j+1)·k` cannot be told apart.
pub fn gen_exp3(p: &Exp3Params, seed: u64) -> Result<(Dataset, Dataset)> {
    if p.k == 0 || p.train_per_class == 0 || p.test_per_class == 0 || p.num_classes() < 2 {
        return Err(Error::InvalidParameter(
            "need k, l_train, l_test >= 1 and N·k >= 2".into(),
        ));
    }
    let mut rng = rng_from_seed(seed);
    let means = gen_separated_means(p.n_means, p.dim, p.separation, p.mean_spread, &mut rng)?;
    let mut split = |per_class: usize, name: &str| -> Result<Dataset> {
        let mut inputs = Vec::with_capacity(p.num_classes() * per_class * p.dim);
        let mut labels = Vec::with_capacity(p.num_classes() * per_class);
        for (j, mean) in means.iter().enumerate() {
            for class in j * p.k..(j + 1) * p.k {
                for _ in 0..per_class {
                    gaussian_point(&mut rng, mean, &mut inputs);
                    labels.push(class);
                }
            }
        }
        let meta = DatasetMeta {
            generator: format!("exp3/{name}"),
            params: serde_json::to_value(p)?,
            seed: Some(seed),
            num_classes: p.num_classes(),
        };
        Dataset::new(inputs, p.dim, labels, meta)
    };
    let train = split(p.train_per_class, "train")?;
    let test = split(p.test_per_class, "test")?;
    Ok((train, test))
}

/// Rows of the reference top-2 separator for [`gen_linear_sep_dataset`].
pub const W_SEP: [[f64; 3]; 3] = [[2.0, 0.0, 0.0], [1.0, 1.0, 0.0], [3.0, 0.0, 1.0]];

pub fn w_sep() -> LinearModel {
    LinearModel::from_rows(&W_SEP.map(|r| r.to_vec())).expect("static matrix is valid")
}

/// Seven points in R³ that a linear map separates top-2 but not top-1:
/// two each of `(e₁, 0)`, `(e₂, 1)`, `(e₃, 2)` and one `(−e₁, 0)`.
pub fn gen_linear_sep_dataset() -> Dataset {
    let e = |i: usize, sign: f64| {
        let mut v = vec![0.0; 3];
        v[i] = sign;
        v
    };
    let points = [
        (e(0, 1.0), 0),
        (e(0, 1.0), 0),
        (e(1, 1.0), 1),
        (e(1, 1.0), 1),
        (e(2, 1.0), 2),
        (e(2, 1.0), 2),
        (e(0, -1.0), 0),
    ];
    let inputs = points.iter().flat_map(|(x, _)| x.clone()).collect();
    let labels = points.iter().map(|&(_, y)| y).collect();
    let meta = DatasetMeta {
        generator: "linear_sep".into(),
        params: json!({ "w_sep": W_SEP }),
        seed: None,
        num_classes: 3,
    };
    Dataset::new(inputs, 3, labels, meta).expect("static dataset is valid")
}
