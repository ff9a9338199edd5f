//! Datasets: IDX and CIFAR-10 binary ingestion, synthetic blobs, fold splits.

mod idx;
mod synth;

use std::path::Path;

pub use idx::{load_cifar_binary, load_mnist_idx, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels};
pub use synth::synth_blobs;

use crate::error::{Error, Result};
use crate::numcore::{Rng, Scalar};

/// Labeled examples with features in `[0, 1]^d`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<S> {
    features: Vec<S>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
    provenance: String,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(
        features: Vec<S>,
        labels: Vec<usize>,
        dim: usize,
        classes: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if dim == 0 || classes < 2 {
            return Err(Error::invalid("dataset needs d ≥ 1 and m ≥ 2"));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::shape(format!(
                "{} feature values for {} examples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::invalid(format!("label {bad} outside {classes} classes")));
        }
        if features.iter().any(|v| !(*v >= S::zero() && *v <= S::one())) {
            return Err(Error::invalid("feature values must lie in [0, 1]"));
        }
        Ok(Self {
            features,
            labels,
            dim,
            classes,
            provenance: provenance.into(),
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

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn x(&self, i: usize) -> &[S] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn features(&self) -> &[S] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Number of examples of each class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// The examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.x(i));
        }
        Self {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
            classes: self.classes,
            provenance: format!("{}[subset of {}]", self.provenance, indices.len()),
        }
    }

    pub fn cast<T: Scalar>(&self) -> Dataset<T> {
        Dataset {
            features: self.features.iter().map(|v| T::lit(v.as_f64())).collect(),
            labels: self.labels.clone(),
            dim: self.dim,
            classes: self.classes,
            provenance: self.provenance.clone(),
        }
    }

    /// Writes rows of `label, x_1, ..., x_d`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e: csv::Error| Error::io(path, e.into());
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(io)?;
        for i in 0..self.len() {
            let mut row = Vec::with_capacity(self.dim + 1);
            row.push(self.labels[i].to_string());
            row.extend(self.x(i).iter().map(|v| v.as_f64().to_string()));
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a file written by [`Dataset::write_csv`].
    pub fn read_csv(path: impl AsRef<Path>, classes: usize) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| Error::io(path, e.into()))?;
        let (mut features, mut labels, mut dim) = (Vec::new(), Vec::new(), None);
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::malformed(path, e.to_string()))?;
            let bad = |what: &str| Error::malformed(path, format!("row {}: {what}", line + 1));
            let d = rec.len().checked_sub(1).filter(|&d| d > 0).ok_or_else(|| bad("no features"))?;
            if *dim.get_or_insert(d) != d {
                return Err(bad("ragged row"));
            }
            labels.push(rec[0].trim().parse::<usize>().map_err(|_| bad("bad label"))?);
            for field in rec.iter().skip(1) {
                let v: f64 = field.trim().parse().map_err(|_| bad("bad feature"))?;
                features.push(S::lit(v));
            }
        }
        let dim = dim.ok_or_else(|| Error::malformed(path, "empty file"))?;
        Dataset::new(features, labels, dim, classes, format!("csv:{}", path.display()))
            .map_err(|e| Error::malformed(path, e.to_string()))
    }
}

/// Assignment of example indices to `k` folds, one of which is held out.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    assignment: Vec<usize>,
    k: usize,
    validation: usize,
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn validation_fold(&self) -> usize {
        self.validation
    }

    /// Fold of each example index.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// The same assignment with a different held-out fold.
    pub fn with_validation(mut self, fold: usize) -> Result<Self> {
        if fold >= self.k {
            return Err(Error::invalid(format!("fold {fold} out of {}", self.k)));
        }
        self.validation = fold;
        Ok(self)
    }

    /// Indices in `fold`, ascending.
    pub fn fold(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn validation_indices(&self) -> Vec<usize> {
        self.fold(self.validation)
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != self.validation)
            .collect()
    }
}

/// Seeded shuffle followed by contiguous assignment to `k` folds; fold 0 is
/// held out for validation.
pub fn split_folds(n: usize, k: usize, rng: &mut Rng) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::invalid("need at least two folds"));
    }
    if n < k {
        return Err(Error::invalid(format!("{n} examples cannot fill {k} folds")));
    }
    let order = rng.permutation(n);
    let (base, extra) = (n / k, n % k);
    let mut assignment = vec![0; n];
    let mut pos = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &i in &order[pos..pos + size] {
            assignment[i] = fold;
        }
        pos += size;
    }
    Ok(FoldSplit {
        assignment,
        k,
        validation: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_sizes() {
        let s = split_folds(10, 5, &mut Rng::new(1)).unwrap();
        assert_eq!(s.sizes(), vec![2; 5]);
        let mut sizes = split_folds(11, 5, &mut Rng::new(1)).unwrap().sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
        assert!(split_folds(3, 5, &mut Rng::new(1)).is_err());
        assert!(split_folds(10, 1, &mut Rng::new(1)).is_err());
    }

    #[test]
    fn split_is_seeded() {
        let a = split_folds(50, 5, &mut Rng::new(9)).unwrap();
        let b = split_folds(50, 5, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        let mut all = a.train_indices();
        all.extend(a.validation_indices());
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::<f64>::new(vec![0.5; 4], vec![0, 1], 2, 2, "t").is_ok());
        assert!(Dataset::<f64>::new(vec![0.5; 4], vec![0, 2], 2, 2, "t").is_err());
        assert!(Dataset::<f64>::new(vec![1.5, 0.0], vec![0], 2, 2, "t").is_err());
        assert!(Dataset::<f64>::new(vec![0.5; 3], vec![0, 1], 2, 2, "t").is_err());
    }

    #[test]
    fn subset_and_counts() {
        let d = Dataset::<f64>::new(vec![0.1, 0.2, 0.3], vec![1, 0, 1], 1, 3, "t").unwrap();
        assert_eq!(d.class_counts(), vec![1, 2, 0]);
        let s = d.subset(&[2, 1]);
        assert_eq!(s.features(), &[0.3, 0.2]);
        assert_eq!(s.labels(), &[1, 0]);
    }
}
