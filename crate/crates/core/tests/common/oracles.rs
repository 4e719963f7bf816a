//! Reference implementations of the clustering metrics, written directly
//! from their textbook definitions and sharing no code with the library.
#![allow(dead_code)]

use std::collections::HashMap;

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let distinct: Vec<usize> = labels.iter().copied().sorted().dedup().collect();
    let ids = labels
        .iter()
        .map(|l| distinct.binary_search(l).unwrap())
        .collect();
    (ids, distinct.len())
}

/// Best accuracy over every one-to-one map of predicted clusters onto gold
/// clusters, by exhaustive enumeration.
pub fn brute_force_accuracy(gold: &[usize], pred: &[usize]) -> f64 {
    let (g, kg) = compact(gold);
    let (p, kp) = compact(pred);
    let k = kg.max(kp);
    let best = (0..k)
        .permutations(k)
        .map(|perm| {
            g.iter()
                .zip(&p)
                .filter(|(gi, pi)| perm[**pi] == **gi)
                .count()
        })
        .max()
        .unwrap_or(0);
    best as f64 / gold.len() as f64
}

/// Mutual information over the arithmetic mean of the two entropies,
/// accumulated point by point from empirical probabilities.
pub fn direct_nmi(gold: &[usize], pred: &[usize]) -> f64 {
    let n = gold.len() as f64;
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    let mut pg: HashMap<usize, f64> = HashMap::new();
    let mut pp: HashMap<usize, f64> = HashMap::new();
    for (&g, &p) in gold.iter().zip(pred) {
        *joint.entry((g, p)).or_default() += 1.0 / n;
        *pg.entry(g).or_default() += 1.0 / n;
        *pp.entry(p).or_default() += 1.0 / n;
    }
    let entropy = |m: &HashMap<usize, f64>| -m.values().map(|q| q * q.ln()).sum::<f64>();
    let (hg, hp) = (entropy(&pg), entropy(&pp));
    if hg == 0.0 && hp == 0.0 {
        return 1.0;
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(g, p), &q)| q * (q / (pg[&g] * pp[&p])).ln())
        .sum();
    (mi / ((hg + hp) / 2.0)).clamp(0.0, 1.0)
}

/// Adjusted Rand index from the four pair counts, enumerating every pair.
pub fn pair_counting_ari(gold: &[usize], pred: &[usize]) -> f64 {
    let n = gold.len();
    let (mut both, mut only_gold, mut only_pred, mut neither) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..n {
        for j in i + 1..n {
            match (gold[i] == gold[j], pred[i] == pred[j]) {
                (true, true) => both += 1.0,
                (true, false) => only_gold += 1.0,
                (false, true) => only_pred += 1.0,
                (false, false) => neither += 1.0,
            }
        }
    }
    let den =
        (both + only_gold) * (only_gold + neither) + (both + only_pred) * (only_pred + neither);
    if den == 0.0 {
        return 1.0;
    }
    2.0 * (both * neither - only_gold * only_pred) / den
}

/// Random `(gold, pred)` pair with sparse, non-contiguous cluster ids.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    max_n: usize,
    max_k: usize,
) -> (Vec<usize>, Vec<usize>) {
    let n = rng.random_range(1..=max_n);
    let kg = rng.random_range(1..=max_k);
    let kp = rng.random_range(1..=max_k);
    let gold = (0..n).map(|_| rng.random_range(0..kg) * 7 + 3).collect();
    let pred = (0..n).map(|_| rng.random_range(0..kp) * 5 + 11).collect();
    (gold, pred)
}

pub fn instances(
    seed: u64,
    count: usize,
    max_n: usize,
    max_k: usize,
) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| random_instance(&mut rng, max_n, max_k))
        .collect()
}
