use std::fmt::Write as _;
use std::path::Path;

use super::{certify_dataset, CertificationRecord, Perturbation};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Network;
use crate::numcore::Scalar;

/// Fraction of each class's examples that are not certified against each
/// other class. Rows are true classes, columns targets; the diagonal is 0.
#[derive(Clone, Debug, PartialEq)]
pub struct PairGrid {
    classes: usize,
    /// Row-major; `None` where the row's class has no examples.
    entries: Vec<Option<f64>>,
    counts: Vec<usize>,
}

impl PairGrid {
    /// Tallies records that carry a bound for every other class.
    pub fn from_records(records: &[CertificationRecord], classes: usize) -> Result<Self> {
        let mut failures = vec![0usize; classes * classes];
        let mut counts = vec![0usize; classes];
        for r in records {
            if r.label >= classes {
                return Err(Error::invalid(format!("record label {} outside {classes} classes", r.label)));
            }
            counts[r.label] += 1;
            for j in (0..classes).filter(|&j| j != r.label) {
                let t = r.targets.iter().find(|t| t.target == j).ok_or_else(|| {
                    Error::invalid(format!("record {} has no bound against class {j}", r.id))
                })?;
                if !t.certified {
                    failures[r.label * classes + j] += 1;
                }
            }
        }
        let entries = (0..classes * classes)
            .map(|k| {
                let (i, j) = (k / classes, k % classes);
                if i == j {
                    Some(0.0)
                } else if counts[i] == 0 {
                    None
                } else {
                    Some(failures[k] as f64 / counts[i] as f64)
                }
            })
            .collect();
        Ok(Self {
            classes,
            entries,
            counts,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, from: usize, to: usize) -> Option<f64> {
        self.entries[from * self.classes + to]
    }

    /// Examples seen per true class.
    pub fn class_counts(&self) -> &[usize] {
        &self.counts
    }

    /// Off-diagonal pairs sorted by decreasing entry; ties keep row-major order.
    pub fn ranked_pairs(&self) -> Vec<((usize, usize), f64)> {
        let mut pairs: Vec<_> = (0..self.classes)
            .flat_map(|i| (0..self.classes).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j)
            .filter_map(|(i, j)| self.get(i, j).map(|v| ((i, j), v)))
            .collect();
        pairs.sort_by(|a, b| b.1.total_cmp(&a.1));
        pairs
    }

    /// CSV with class labels along the first row and column, six decimals,
    /// `NA` for missing entries.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class");
        for j in 0..self.classes {
            write!(out, ",{j}").expect("string write");
        }
        out.push('\n');
        for i in 0..self.classes {
            write!(out, "{i}").expect("string write");
            for j in 0..self.classes {
                match self.get(i, j) {
                    Some(v) => write!(out, ",{v:.6}"),
                    None => write!(out, ",NA"),
                }
                .expect("string write");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Certifies every example against every other class and tallies the grid.
pub fn pairwise_grid<S: Scalar>(net: &Network<S>, data: &Dataset<S>, pert: &Perturbation<S>) -> Result<PairGrid> {
    PairGrid::from_records(&certify_dataset(net, data, pert)?, data.classes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::TargetBound;

    fn rec(id: usize, label: usize, verdicts: &[(usize, bool)]) -> CertificationRecord {
        CertificationRecord {
            id,
            label,
            targets: verdicts
                .iter()
                .map(|&(target, certified)| TargetBound {
                    target,
                    bound: if certified { 1.0 } else { -1.0 },
                    certified,
                })
                .collect(),
        }
    }

    #[test]
    fn tallies_and_csv() {
        let recs = vec![
            rec(0, 0, &[(1, false), (2, true)]),
            rec(1, 0, &[(1, true), (2, true)]),
            rec(2, 1, &[(0, false), (2, false)]),
        ];
        let g = PairGrid::from_records(&recs, 3).unwrap();
        assert_eq!(g.get(0, 1), Some(0.5));
        assert_eq!(g.get(1, 2), Some(1.0));
        assert_eq!(g.get(2, 0), None);
        assert_eq!(g.get(2, 2), Some(0.0));
        assert_eq!(
            g.to_csv(),
            "class,0,1,2\n0,0.000000,0.500000,0.000000\n1,1.000000,0.000000,1.000000\n2,NA,NA,0.000000\n"
        );
        assert_eq!(g.ranked_pairs()[0], ((1, 0), 1.0));
    }

    #[test]
    fn incomplete_records_are_rejected() {
        assert!(PairGrid::from_records(&[rec(0, 0, &[(1, true)])], 3).is_err());
    }
}
