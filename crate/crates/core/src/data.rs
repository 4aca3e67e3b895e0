//! Datasets: synthetic Gaussian blobs, CSV ingestion, disjoint splits and
//! out-of-distribution sampling.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower edge of the box that blob centers are drawn from.
pub const CENTER_LO: f64 = 0.3;
/// Upper edge of the box that blob centers are drawn from.
pub const CENTER_HI: f64 = 0.7;

/// Ground-truth label of a sample. Out-of-distribution points have no class,
/// which compares unequal to every label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Truth {
    Class(usize),
    NoClass,
}

impl Truth {
    /// True when the ground truth equals `label`; `NoClass` never does.
    pub fn is(self, label: usize) -> bool {
        self == Truth::Class(label)
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Synthetic {
        task: BlobTask,
        sample_seed: u64,
        per_class: usize,
    },
    File(PathBuf),
    /// A subset of another dataset.
    Derived(Box<Provenance>),
}

/// A blob classification task: per-class centers fixed by `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobTask {
    pub seed: u64,
    pub classes: usize,
    pub dim: usize,
    pub spread: f64,
}

impl BlobTask {
    pub fn new(seed: u64, classes: usize, dim: usize, spread: f64) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid(format!("classes must be >= 2, got {classes}")));
        }
        if dim < 2 {
            return Err(Error::invalid(format!("dim must be >= 2, got {dim}")));
        }
        if !(spread > 0.0 && spread.is_finite()) {
            return Err(Error::invalid(format!("spread must be > 0, got {spread}")));
        }
        Ok(Self {
            seed,
            classes,
            dim,
            spread,
        })
    }

    /// Class centers, one row per class.
    pub fn centers(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.classes)
            .map(|_| {
                (0..self.dim)
                    .map(|_| rng.random_range(CENTER_LO..CENTER_HI))
                    .collect()
            })
            .collect()
    }

    /// Draw `per_class` samples of every class using an independent sampling seed.
    pub fn sample(&self, per_class: usize, sample_seed: u64) -> Result<Dataset> {
        if per_class == 0 {
            return Err(Error::invalid("per_class must be >= 1"));
        }
        let centers = self.centers();
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed ^ 0x9e37_79b9_7f4a_7c15);
        let n = self.classes * per_class;
        let mut data = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..per_class {
            for (c, center) in centers.iter().enumerate() {
                for &m in center {
                    let z: f64 = rng.sample(StandardNormal);
                    data.push((m + self.spread * z).clamp(0.0, 1.0));
                }
                labels.push(c);
            }
        }
        Dataset::new(
            Tensor::new(vec![n, self.dim], data)?,
            labels,
            self.classes,
            Provenance::Synthetic {
                task: *self,
                sample_seed,
                per_class,
            },
        )
    }
}

/// Labelled samples with features in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    class_count: usize,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(
        features: Tensor,
        labels: Vec<usize>,
        class_count: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "Dataset::new",
                left: features.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if labels.len() < class_count {
            return Err(Error::invalid(format!(
                "dataset has {} samples but {class_count} classes",
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::invalid(format!("label {l} >= class count {class_count}")));
        }
        if let Some(v) = features.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("feature value {v} outside [0, 1]")));
        }
        Ok(Self {
            features,
            labels,
            class_count,
            provenance,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// The same samples with a different recorded origin, for example the
    /// synthetic task a reloaded CSV was generated from.
    pub fn with_provenance(self, provenance: Provenance) -> Self {
        Self { provenance, ..self }
    }

    /// Ground truth of every sample.
    pub fn truth(&self) -> Vec<Truth> {
        self.labels.iter().map(|&l| Truth::Class(l)).collect()
    }

    /// Rows at `idx` as a derived dataset. No minimum size is enforced.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            provenance: Provenance::Derived(Box::new(self.provenance.clone())),
        }
    }

    /// Indices of samples whose label is `class`.
    pub fn indices_of(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    /// Per-class centers: the generating centers for synthetic data, class
    /// means otherwise.
    pub fn class_centers(&self) -> Vec<Vec<f64>> {
        if let Some(task) = self.task() {
            return task.centers();
        }
        let d = self.dim();
        let mut sums = vec![vec![0.0; d]; self.class_count];
        let mut counts = vec![0usize; self.class_count];
        for (i, &l) in self.labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(self.features.row(i)) {
                *s += v;
            }
        }
        for (s, &c) in sums.iter_mut().zip(&counts) {
            for v in s.iter_mut() {
                *v /= c.max(1) as f64;
            }
        }
        sums
    }

    /// The generating task, when the data is synthetic (directly or by subset).
    pub fn task(&self) -> Option<BlobTask> {
        let mut p = &self.provenance;
        loop {
            match p {
                Provenance::Synthetic { task, .. } => return Some(*task),
                Provenance::File(_) => return None,
                Provenance::Derived(inner) => p = inner,
            }
        }
    }

    /// Write as CSV with header `f0,...,f{d-1},label`.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.features.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.labels[i].to_string());
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Read a CSV written by [`Dataset::save_csv`] or by hand.
    pub fn load_csv(path: &Path) -> Result<Dataset> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| csv_err(path, e))?;
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
        let d = header.len().saturating_sub(1);
        let header_ok = d >= 1
            && header.get(d) == Some("label")
            && (0..d).all(|j| header.get(j) == Some(format!("f{j}").as_str()));
        if !header_ok {
            return Err(parse_err(1, "header must be f0,...,f{d-1},label".into()));
        }
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            if rec.len() != d + 1 {
                return Err(parse_err(line, format!("expected {} fields, got {}", d + 1, rec.len())));
            }
            for j in 0..d {
                let raw = rec[j].trim();
                let v: f64 = raw
                    .parse()
                    .map_err(|_| parse_err(line, format!("column f{j}: cannot parse {raw:?}")))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(parse_err(line, format!("column f{j}: value {v} outside [0, 1]")));
                }
                data.push(v);
            }
            let raw = rec[d].trim();
            let l: usize = raw
                .parse()
                .map_err(|_| parse_err(line, format!("column label: cannot parse {raw:?}")))?;
            labels.push(l);
        }
        if labels.is_empty() {
            return Err(parse_err(1, "no data rows".into()));
        }
        let c = labels.iter().max().map(|m| m + 1).unwrap_or(0);
        let mut seen = vec![false; c];
        for &l in &labels {
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(parse_err(
                1,
                format!("labels are not dense: class {missing} never occurs below max {}", c - 1),
            ));
        }
        let n = labels.len();
        Dataset::new(
            Tensor::new(vec![n, d], data)?,
            labels,
            c,
            Provenance::File(path.to_path_buf()),
        )
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

/// Generate a blob dataset: centers and samples both derive from `seed`.
pub fn gen_blobs(seed: u64, classes: usize, dim: usize, per_class: usize, spread: f64) -> Result<Dataset> {
    BlobTask::new(seed, classes, dim, spread)?.sample(per_class, seed)
}

/// Three pairwise disjoint parts of one parent dataset.
#[derive(Debug, Clone)]
pub struct DisjointSplit {
    pub part_a: Dataset,
    pub part_b: Dataset,
    pub holdout: Dataset,
    /// Parent indices of each part, in the order they appear.
    pub indices: [Vec<usize>; 3],
}

/// Seeded shuffle followed by contiguous cuts of the given fractions.
pub fn split_disjoint(ds: &Dataset, fractions: [f64; 3], seed: u64) -> Result<DisjointSplit> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || fractions.iter().sum::<f64>() > 1.0 + 1e-9 {
        return Err(Error::invalid(format!(
            "fractions must be non-negative and sum to at most 1, got {fractions:?}"
        )));
    }
    let n = ds.len();
    let sizes: Vec<usize> = fractions
        .iter()
        .map(|f| ((n as f64) * f + 1e-9).floor() as usize)
        .collect();
    if let Some(k) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::invalid(format!("split part {k} would be empty")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let a = order[..sizes[0]].to_vec();
    let b = order[sizes[0]..sizes[0] + sizes[1]].to_vec();
    let h = order[sizes[0] + sizes[1]..sizes[0] + sizes[1] + sizes[2]].to_vec();
    Ok(DisjointSplit {
        part_a: ds.subset(&a),
        part_b: ds.subset(&b),
        holdout: ds.subset(&h),
        indices: [a, b, h],
    })
}

/// Draws allowed per requested out-of-distribution point.
const OOD_DRAWS_PER_POINT: usize = 10_000;

/// Uniform points in `[0, 1]^d` far from the data: more than three spreads
/// from every class center for synthetic data, farther than the largest
/// nearest-neighbour distance from every sample for ingested data.
pub fn sample_ood(ds: &Dataset, count: usize, seed: u64) -> Result<Tensor> {
    if count == 0 {
        return Err(Error::invalid("count must be >= 1"));
    }
    let d = ds.dim();
    let accept: Box<dyn Fn(&[f64]) -> bool> = match ds.task() {
        Some(task) => {
            let centers = task.centers();
            let r2 = (3.0 * task.spread).powi(2);
            Box::new(move |x: &[f64]| centers.iter().all(|c| sq_dist(x, c) > r2))
        }
        None => {
            let r2 = max_nearest_neighbour_sq(ds.features());
            let feats = ds.features().clone();
            Box::new(move |x: &[f64]| (0..feats.rows()).all(|i| sq_dist(x, feats.row(i)) > r2))
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count * d);
    let mut draws = 0usize;
    let budget = OOD_DRAWS_PER_POINT * count;
    let mut got = 0;
    while got < count {
        if draws >= budget {
            return Err(Error::Unsatisfiable(format!(
                "only {got} of {count} out-of-distribution points found in {budget} draws"
            )));
        }
        draws += 1;
        let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        if accept(&x) {
            out.extend_from_slice(&x);
            got += 1;
        }
    }
    Tensor::new(vec![count, d], out)
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn max_nearest_neighbour_sq(x: &Tensor) -> f64 {
    let n = x.rows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let nearest = (0..n)
            .filter(|&j| j != i)
            .map(|j| sq_dist(x.row(i), x.row(j)))
            .fold(f64::INFINITY, f64::min);
        if nearest.is_finite() {
            worst = worst.max(nearest);
        }
    }
    worst
}
