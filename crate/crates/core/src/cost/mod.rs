//! Cost matrices, task families and cost-sensitive metrics.
//!
//! `C[j][j']` is the harm of an adversary turning a class-`j` input into a
//! `j'` prediction. Examples of class `j` are *candidates* when row `j` has
//! any nonzero entry; metrics are averaged over candidates only.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::certify::{CertificationRecord, PairGrid};
use crate::error::{Error, Result};
use crate::numcore::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    m: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    /// Validates a row-major `m × m` matrix: finite, nonnegative, zero diagonal.
    pub fn new(m: usize, entries: Vec<f64>) -> Result<Self> {
        if m < 2 {
            return Err(Error::CostMatrix(format!("need at least two classes, got {m}")));
        }
        if entries.len() != m * m {
            return Err(Error::CostMatrix(format!("{} entries for a {m}×{m} matrix", entries.len())));
        }
        for (k, &v) in entries.iter().enumerate() {
            let (i, j) = (k / m, k % m);
            if !v.is_finite() || v < 0.0 {
                return Err(Error::CostMatrix(format!("entry ({i},{j}) = {v} is not a nonnegative number")));
            }
            if i == j && v != 0.0 {
                return Err(Error::CostMatrix(format!("diagonal entry ({i},{i}) = {v} must be zero")));
            }
        }
        Ok(Self { m, entries })
    }

    pub fn zeros(m: usize) -> Self {
        Self::new(m, vec![0.0; m * m]).expect("zero matrix is valid")
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::CostMatrix("matrix is not square".into()));
        }
        Self::new(m, rows.concat())
    }

    pub fn classes(&self) -> usize {
        self.m
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.entries[from * self.m + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.entries[from * self.m..(from + 1) * self.m]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// `Ω_j`: targets with nonzero cost from class `j`.
    pub fn targets_of(&self, from: usize) -> Vec<usize> {
        (0..self.m).filter(|&t| self.get(from, t) != 0.0).collect()
    }

    pub fn is_binary(&self) -> bool {
        self.entries.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Nonzero off-diagonal cells over `m² − m`.
    pub fn sparsity(&self) -> f64 {
        let nonzero = self.entries.iter().filter(|&&v| v != 0.0).count();
        nonzero as f64 / (self.m * self.m - self.m) as f64
    }

    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        Self::new(self.m, self.entries.iter().map(|v| v * lambda).collect())
    }

    /// CSV text: one row per line, shortest round-tripping decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.m {
            let row: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Parses CSV text; a first row that is not all numbers is a header.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::CostMatrix(e.to_string()))?;
            if rec.iter().all(|f| f.is_empty()) {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            match parsed {
                Ok(row) => rows.push(row),
                Err(_) if line == 0 => continue,
                Err(e) => return Err(Error::CostMatrix(format!("row {}: {e}", line + 1))),
            }
        }
        Self::from_rows(&rows)
    }

    pub fn parse_cost_matrix(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text)
    }
}

/// A family of cost matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskSpec {
    /// Only `source → target` is costly.
    SinglePair { source: usize, target: usize },
    /// Every transformation of `seed` is costly.
    SingleSeed { seed: usize },
    /// Every transformation into `target` is costly.
    SingleTarget { target: usize },
    /// Union of listed pairs and full seed rows.
    Multiple {
        #[serde(default)]
        pairs: Vec<(usize, usize)>,
        #[serde(default)]
        seeds: Vec<usize>,
    },
    /// `count` distinct off-diagonal pairs drawn without replacement.
    RandomPairs { count: usize, seed: u64 },
    /// `(i − j)²` when `j > i`.
    SmallLarge,
    /// `(i − j)²` when `i > j`.
    LargeSmall,
    /// `(i − j)²` when `j > i` and `0.1` when `i > j`.
    SmallLargeDense,
}

impl TaskSpec {
    /// Every odd class as a seed.
    pub fn odd_seeds(m: usize) -> Self {
        TaskSpec::Multiple {
            pairs: Vec::new(),
            seeds: (1..m).step_by(2).collect(),
        }
    }

    /// The `k` pairs with the largest entries of `grid`.
    pub fn top_pairs(grid: &PairGrid, k: usize) -> Self {
        TaskSpec::Multiple {
            pairs: grid.ranked_pairs().into_iter().take(k).map(|(p, _)| p).collect(),
            seeds: Vec::new(),
        }
    }
}

pub fn make_task(spec: &TaskSpec, m: usize) -> Result<CostMatrix> {
    let check = |c: usize| {
        if c < m {
            Ok(c)
        } else {
            Err(Error::invalid(format!("class {c} outside {m} classes")))
        }
    };
    let mut e = vec![0.0; m * m];
    let mut set = |i: usize, j: usize, v: f64| {
        if i != j {
            e[i * m + j] = v;
        }
    };
    match spec {
        TaskSpec::SinglePair { source, target } => {
            if check(*source)? == check(*target)? {
                return Err(Error::invalid("a pair needs two different classes"));
            }
            set(*source, *target, 1.0);
        }
        TaskSpec::SingleSeed { seed } => {
            let s = check(*seed)?;
            (0..m).for_each(|j| set(s, j, 1.0));
        }
        TaskSpec::SingleTarget { target } => {
            let t = check(*target)?;
            (0..m).for_each(|i| set(i, t, 1.0));
        }
        TaskSpec::Multiple { pairs, seeds } => {
            for &(i, j) in pairs {
                if check(i)? == check(j)? {
                    return Err(Error::invalid("a pair needs two different classes"));
                }
                set(i, j, 1.0);
            }
            for &s in seeds {
                let s = check(s)?;
                (0..m).for_each(|j| set(s, j, 1.0));
            }
        }
        TaskSpec::RandomPairs { count, seed } => {
            let cells: Vec<(usize, usize)> = (0..m)
                .flat_map(|i| (0..m).map(move |j| (i, j)))
                .filter(|(i, j)| i != j)
                .collect();
            if *count > cells.len() {
                return Err(Error::invalid(format!("only {} off-diagonal pairs exist", cells.len())));
            }
            let mut rng = Rng::new(*seed).substream("random-pairs");
            for k in rng.sample_indices(cells.len(), *count) {
                let (i, j) = cells[k];
                set(i, j, 1.0);
            }
        }
        TaskSpec::SmallLarge | TaskSpec::LargeSmall | TaskSpec::SmallLargeDense => {
            for i in 0..m {
                for j in 0..m {
                    let sq = ((i as f64) - (j as f64)).powi(2);
                    let v = match spec {
                        TaskSpec::SmallLarge => if j > i { sq } else { 0.0 },
                        TaskSpec::LargeSmall => if i > j { sq } else { 0.0 },
                        _ => if j > i { sq } else { 0.1 },
                    };
                    set(i, j, v);
                }
            }
        }
    }
    CostMatrix::new(m, e)
}

/// `Ω_j`, `δ_j` and per-class counts `N_j` for a labeled set.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSets {
    pub omega: Vec<Vec<usize>>,
    pub delta: Vec<bool>,
    pub counts: Vec<usize>,
}

impl TargetSets {
    /// `Σ_{j : δ_j} N_j`.
    pub fn candidates(&self) -> usize {
        self.delta
            .iter()
            .zip(&self.counts)
            .filter(|(&d, _)| d)
            .map(|(_, &n)| n)
            .sum()
    }
}

pub fn target_sets(cost: &CostMatrix, labels: &[usize]) -> Result<TargetSets> {
    let m = cost.classes();
    let mut counts = vec![0; m];
    for &y in labels {
        if y >= m {
            return Err(Error::invalid(format!("label {y} outside {m} classes")));
        }
        counts[y] += 1;
    }
    let omega: Vec<Vec<usize>> = (0..m).map(|j| cost.targets_of(j)).collect();
    Ok(TargetSets {
        delta: omega.iter().map(|o| !o.is_empty()).collect(),
        omega,
        counts,
    })
}

/// Per candidate record: the costs of the targets it is not certified against.
fn candidate_failures<'a>(
    records: &'a [CertificationRecord],
    cost: &'a CostMatrix,
) -> impl Iterator<Item = Result<Vec<f64>>> + 'a {
    records
        .iter()
        .filter(move |r| r.label < cost.classes() && !cost.targets_of(r.label).is_empty())
        .map(move |r| {
            cost.targets_of(r.label)
                .into_iter()
                .filter_map(|t| match r.targets.iter().find(|b| b.target == t) {
                    None => Some(Err(Error::invalid(format!(
                        "record {} has no bound against class {t}",
                        r.id
                    )))),
                    Some(b) if !b.certified => Some(Ok(cost.get(r.label, t))),
                    Some(_) => None,
                })
                .collect()
        })
}

fn check_labels(records: &[CertificationRecord], cost: &CostMatrix) -> Result<()> {
    match records.iter().find(|r| r.label >= cost.classes()) {
        Some(r) => Err(Error::invalid(format!("record {} has label {} outside the cost matrix", r.id, r.label))),
        None => Ok(()),
    }
}

/// Fraction of candidate examples not certified against every target in
/// their row of `cost`.
pub fn cs_robust_error(records: &[CertificationRecord], cost: &CostMatrix) -> Result<f64> {
    check_labels(records, cost)?;
    let (mut total, mut failed) = (0usize, 0usize);
    for f in candidate_failures(records, cost) {
        total += 1;
        failed += usize::from(!f?.is_empty());
    }
    if total == 0 {
        return Err(Error::UndefinedMetric("no candidate examples for this cost matrix"));
    }
    Ok(failed as f64 / total as f64)
}

/// Average over candidates of the summed cost of uncertified targets.
pub fn robust_cost(records: &[CertificationRecord], cost: &CostMatrix) -> Result<f64> {
    check_labels(records, cost)?;
    let (mut total, mut sum) = (0usize, 0.0);
    for f in candidate_failures(records, cost) {
        total += 1;
        sum += f?.iter().sum::<f64>();
    }
    if total == 0 {
        return Err(Error::UndefinedMetric("no candidate examples for this cost matrix"));
    }
    Ok(sum / total as f64)
}

/// `(1/N) Σ_i C[y_i][ŷ_i]`.
pub fn misclassification_cost(predictions: &[usize], labels: &[usize], cost: &CostMatrix) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let m = cost.classes();
    if let Some(&bad) = predictions.iter().chain(labels).find(|&&c| c >= m) {
        return Err(Error::invalid(format!("class {bad} outside {m} classes")));
    }
    if labels.is_empty() {
        return Err(Error::UndefinedMetric("no examples"));
    }
    let total: f64 = predictions.iter().zip(labels).map(|(&p, &y)| cost.get(y, p)).sum();
    Ok(total / labels.len() as f64)
}

/// Fraction of examples not certified against every other class.
pub fn overall_robust_error(records: &[CertificationRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::UndefinedMetric("no examples"));
    }
    Ok(records.iter().filter(|r| !r.certified()).count() as f64 / records.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::TargetBound;

    fn rec(id: usize, label: usize, signs: &[(usize, bool)]) -> CertificationRecord {
        CertificationRecord {
            id,
            label,
            targets: signs
                .iter()
                .map(|&(target, ok)| TargetBound {
                    target,
                    bound: if ok { 0.5 } else { -0.5 },
                    certified: ok,
                })
                .collect(),
        }
    }

    #[test]
    fn task_shapes() {
        let pair = make_task(&TaskSpec::SinglePair { source: 0, target: 2 }, 10).unwrap();
        assert_eq!(pair.sparsity(), 1.0 / 90.0);
        let sl = make_task(&TaskSpec::SmallLarge, 10).unwrap();
        assert_eq!((sl.get(0, 9), sl.get(9, 0)), (81.0, 0.0));
        let ls = make_task(&TaskSpec::LargeSmall, 10).unwrap();
        assert_eq!((ls.get(9, 0), ls.get(0, 9)), (81.0, 0.0));
        let dense = make_task(&TaskSpec::SmallLargeDense, 10).unwrap();
        assert_eq!((dense.get(2, 1), dense.get(1, 2), dense.get(3, 3)), (0.1, 1.0, 0.0));
        for (spec, nz) in [
            (TaskSpec::SingleSeed { seed: 3 }, 9.0),
            (TaskSpec::SingleTarget { target: 3 }, 9.0),
            (TaskSpec::odd_seeds(10), 45.0),
            (TaskSpec::RandomPairs { count: 10, seed: 4 }, 10.0),
        ] {
            let c = make_task(&spec, 10).unwrap();
            assert_eq!(c.sparsity(), nz / 90.0, "{spec:?}");
            assert!(c.is_binary());
        }
        assert!(make_task(&TaskSpec::SingleSeed { seed: 10 }, 10).is_err());
    }

    #[test]
    fn target_set_bookkeeping() {
        let z = target_sets(&CostMatrix::zeros(3), &[0, 1]).unwrap();
        assert!(z.delta.iter().all(|d| !d));
        let pair = make_task(&TaskSpec::SinglePair { source: 0, target: 2 }, 10).unwrap();
        let labels: Vec<usize> = (0..100).map(|i| i % 10).collect();
        let t = target_sets(&pair, &labels).unwrap();
        assert_eq!(t.omega[0], vec![2]);
        assert_eq!(t.delta.iter().filter(|&&d| d).count(), 1);
        assert_eq!(t.counts, vec![10; 10]);
        assert_eq!(t.candidates(), 10);
    }

    #[test]
    fn hand_counted_metrics() {
        let c = make_task(&TaskSpec::SingleSeed { seed: 0 }, 3).unwrap();
        let recs = vec![
            rec(0, 0, &[(1, true), (2, true)]),
            rec(1, 0, &[(1, true), (2, false)]),
            rec(2, 0, &[(1, false), (2, false)]),
            rec(3, 0, &[(1, true), (2, true)]),
            rec(4, 1, &[(0, false), (2, false)]),
        ];
        assert_eq!(cs_robust_error(&recs, &c).unwrap(), 0.5);
        let weighted = CostMatrix::from_rows(&[vec![0.0, 4.0, 1.0], vec![0.0; 3], vec![0.0; 3]]).unwrap();
        let two = vec![rec(0, 0, &[(1, false), (2, false)]), rec(1, 0, &[(1, true), (2, true)])];
        assert_eq!(robust_cost(&two, &weighted).unwrap(), 2.5);
        assert!(matches!(
            robust_cost(&two, &CostMatrix::zeros(3)),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn misclassification_average() {
        let c = make_task(&TaskSpec::SmallLarge, 10).unwrap();
        assert_eq!(misclassification_cost(&[0, 3], &[0, 0], &c).unwrap(), 4.5);
        assert_eq!(misclassification_cost(&[5, 6], &[5, 6], &c).unwrap(), 0.0);
    }

    #[test]
    fn csv_parsing() {
        let mut rows = vec![vec![0.0; 10]; 10];
        rows[0][2] = 1.0;
        let text: String = rows
            .iter()
            .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",") + "\n")
            .collect();
        let c = CostMatrix::parse_csv(&text).unwrap();
        assert_eq!(c, make_task(&TaskSpec::SinglePair { source: 0, target: 2 }, 10).unwrap());
        let with_header = "a,b,c\n0,1,0\n0,0,0\n2.5,0,0\n";
        assert_eq!(CostMatrix::parse_csv(with_header).unwrap().get(2, 0), 2.5);
        assert!(CostMatrix::parse_csv("0,1\n0,1\n").is_err());
        assert!(CostMatrix::parse_csv("0,-1\n0,0\n").is_err());
        assert!(CostMatrix::parse_csv("0,1,0\n0,0\n").is_err());
        assert!(CostMatrix::parse_csv("0,1\n0,x\n").is_err());
        let sl = make_task(&TaskSpec::SmallLargeDense, 10).unwrap();
        assert_eq!(CostMatrix::parse_csv(&sl.to_csv()).unwrap(), sl);
    }
}
