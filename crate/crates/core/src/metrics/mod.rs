//! Partition comparison: Hungarian-matched accuracy, NMI and ARI.
//!
//! All three metrics are computed from a [`ContingencyTable`] whose rows are
//! gold classes and whose columns are predicted clusters. Documents left
//! unmatched by classification form one extra predicted cluster.

mod assignment;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use assignment::{max_weight_assignment, min_cost_assignment};

use crate::error::MetricsError;
use crate::exec::{map_indexed, Execution};
use crate::model::{Assigned, Assignment, Dataset};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    rows: usize,
    cols: usize,
    counts: Vec<u64>,
    row_sums: Vec<u64>,
    col_sums: Vec<u64>,
    total: u64,
}

impl ContingencyTable {
    /// Builds the table from a dense count matrix.
    pub fn from_counts(counts: &[Vec<u64>]) -> Self {
        let rows = counts.len();
        let cols = counts.first().map_or(0, Vec::len);
        assert!(
            counts.iter().all(|r| r.len() == cols),
            "ragged count matrix"
        );
        let flat: Vec<u64> = counts.iter().flatten().copied().collect();
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..cols)
            .map(|j| counts.iter().map(|r| r[j]).sum())
            .collect();
        let total = flat.iter().sum();
        Self {
            rows,
            cols,
            counts: flat,
            row_sums,
            col_sums,
            total,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.cols + col]
    }

    pub fn row_sums(&self) -> &[u64] {
        &self.row_sums
    }

    pub fn col_sums(&self) -> &[u64] {
        &self.col_sums
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    fn nonzero_cells(&self) -> impl Iterator<Item = u64> + '_ {
        self.counts.iter().copied().filter(|&c| c > 0)
    }
}

/// Cross-tabulates two labelings. Class and cluster ids may be arbitrary;
/// rows and columns follow ascending id order and only ids that occur get a
/// row or column.
pub fn build_contingency(gold: &[usize], pred: &[usize]) -> Result<ContingencyTable, MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    if gold.is_empty() {
        return Err(MetricsError::Empty);
    }
    let dense = |ids: &[usize]| -> BTreeMap<usize, usize> {
        let mut map: BTreeMap<usize, usize> = ids.iter().map(|&id| (id, 0)).collect();
        for (i, slot) in map.values_mut().enumerate() {
            *slot = i;
        }
        map
    };
    let rows = dense(gold);
    let cols = dense(pred);
    let mut counts = vec![vec![0u64; cols.len()]; rows.len()];
    for (g, p) in gold.iter().zip(pred) {
        counts[rows[g]][cols[p]] += 1;
    }
    Ok(ContingencyTable::from_counts(&counts))
}

/// Fraction of documents correctly placed under the best one-to-one matching
/// of predicted clusters to gold classes. The table is zero-padded to square.
pub fn accuracy_hungarian(table: &ContingencyTable) -> f64 {
    if table.total() == 0 {
        return 0.0;
    }
    let n = table.rows().max(table.cols());
    let weights: Vec<Vec<i64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i < table.rows() && j < table.cols() {
                        table.get(i, j) as i64
                    } else {
                        0
                    }
                })
                .collect()
        })
        .collect();
    let (_, matched) = max_weight_assignment(&weights);
    matched as f64 / table.total() as f64
}

/// Shannon entropy (nats) of the distribution given by `counts / total`.
///
/// Counts are summed in sorted order so that equal multisets of counts give
/// bit-identical entropies regardless of how clusters are numbered.
fn entropy<I: IntoIterator<Item = u64>>(counts: I, total: u64) -> f64 {
    let mut counts: Vec<u64> = counts.into_iter().filter(|&c| c > 0).collect();
    counts.sort_unstable();
    let n = total as f64;
    counts
        .into_iter()
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalized by the arithmetic mean of the two entropies.
///
/// Two single-cluster partitions score 1.0.
pub fn nmi(table: &ContingencyTable) -> f64 {
    let total = table.total();
    if total == 0 {
        return 0.0;
    }
    let h_gold = entropy(table.row_sums().iter().copied(), total);
    let h_pred = entropy(table.col_sums().iter().copied(), total);
    if h_gold == 0.0 && h_pred == 0.0 {
        return 1.0;
    }
    let h_joint = entropy(table.nonzero_cells(), total);
    let mutual = (h_gold + h_pred) - h_joint;
    let mean = (h_gold + h_pred) / 2.0;
    (mutual / mean).clamp(0.0, 1.0)
}

fn pairs(n: u64) -> u128 {
    let n = u128::from(n);
    n * n.saturating_sub(1) / 2
}

/// Adjusted Rand index from pair counts.
pub fn ari(table: &ContingencyTable) -> f64 {
    let index: u128 = table.nonzero_cells().map(pairs).sum();
    let sum_rows: u128 = table.row_sums().iter().copied().map(pairs).sum();
    let sum_cols: u128 = table.col_sums().iter().copied().map(pairs).sum();
    let all_pairs = pairs(table.total());
    if all_pairs == 0 {
        return 1.0;
    }
    let expected = sum_rows as f64 * sum_cols as f64 / all_pairs as f64;
    let max_index = 0.5 * (sum_rows as f64 + sum_cols as f64);
    let index = index as f64;
    if max_index == expected {
        return if index == expected { 1.0 } else { 0.0 };
    }
    (index - expected) / (max_index - expected)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
}

impl Scores {
    pub fn from_table(table: &ContingencyTable) -> Self {
        Self {
            acc: accuracy_hungarian(table),
            nmi: nmi(table),
            ari: ari(table),
        }
    }
}

pub fn score_partitions(gold: &[usize], pred: &[usize]) -> Result<Scores, MetricsError> {
    build_contingency(gold, pred).map(|t| Scores::from_table(&t))
}

/// Scores many `(gold, pred)` instances at once.
pub fn score_many(
    instances: &[(Vec<usize>, Vec<usize>)],
    exec: Execution,
) -> Vec<Result<Scores, MetricsError>> {
    map_indexed(exec, instances.len(), |i| {
        let (gold, pred) = &instances[i];
        score_partitions(gold, pred)
    })
}

/// ARI of `gold` against `shuffles` random permutations of `pred`.
///
/// Shuffle `i` draws from its own ChaCha stream, so sequential and parallel
/// execution return identical values.
pub fn ari_shuffle_null(
    gold: &[usize],
    pred: &[usize],
    shuffles: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<f64>, MetricsError> {
    build_contingency(gold, pred)?;
    Ok(map_indexed(exec, shuffles, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut shuffled = pred.to_vec();
        shuffled.shuffle(&mut rng);
        let table = build_contingency(gold, &shuffled).expect("lengths already checked");
        ari(&table)
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub k_true: usize,
    /// Non-empty predicted label clusters; the unmatched bucket is not counted.
    pub k_pred: usize,
    pub granularity_diff: i64,
    pub unmatched_count: usize,
    pub n_documents: usize,
}

/// Scores a classification against the dataset's gold labels.
pub fn evaluate(dataset: &Dataset, assignment: &Assignment) -> Result<EvalReport, MetricsError> {
    let gold_set = dataset
        .gold_label_set()
        .ok_or(MetricsError::MissingGoldLabels)?;
    if assignment.len() != dataset.len() {
        return Err(MetricsError::CoverageMismatch {
            assigned: assignment.len(),
            docs: dataset.len(),
        });
    }
    let gold_index: BTreeMap<&str, usize> = gold_set
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let gold = dataset
        .documents()
        .iter()
        .map(|d| {
            d.gold_label
                .as_deref()
                .map(|l| gold_index[l])
                .ok_or(MetricsError::MissingGoldLabels)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let unmatched_id = assignment.label_set().len();
    let pred: Vec<usize> = assignment
        .slots()
        .iter()
        .map(|a| match a {
            Assigned::Label(i) => *i,
            Assigned::Unmatched => unmatched_id,
        })
        .collect();
    let table = build_contingency(&gold, &pred)?;
    let scores = Scores::from_table(&table);
    let mut used: Vec<usize> = pred
        .iter()
        .copied()
        .filter(|&p| p != unmatched_id)
        .collect();
    used.sort_unstable();
    used.dedup();
    let k_true = gold_set.len();
    let k_pred = used.len();
    Ok(EvalReport {
        acc: scores.acc,
        nmi: scores.nmi,
        ari: scores.ari,
        k_true,
        k_pred,
        granularity_diff: k_pred as i64 - k_true as i64,
        unmatched_count: assignment.unmatched_count(),
        n_documents: dataset.len(),
    })
}
