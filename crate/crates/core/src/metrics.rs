//! Evaluation and reward primitives: answer normalization, exact match,
//! token F1, Kendall rank correlation, the IoU-weighted rank reward, and the
//! IR/FR/AR aggregation used in reports.

use std::collections::BTreeMap;
use std::hash::Hash;

use crate::error::{Error, Result};

/// A multiset of normalized answer tokens.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnswerTokens {
    counts: BTreeMap<String, usize>,
    total: usize,
}

impl AnswerTokens {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut counts = BTreeMap::new();
        let mut total = 0;
        for t in tokens {
            *counts.entry(t.into()).or_insert(0) += 1;
            total += 1;
        }
        AnswerTokens { counts, total }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    fn intersection_size(&self, other: &AnswerTokens) -> usize {
        self.counts
            .iter()
            .map(|(t, &n)| n.min(other.counts.get(t).copied().unwrap_or(0)))
            .sum()
    }
}

/// Lowercases, strips punctuation, drops the articles {a, an, the}, collapses
/// whitespace, and tokenizes on whitespace.
pub fn normalize_answer(text: &str) -> AnswerTokens {
    let lowered: String = text
        .chars()
        .map(|c| {
            if c.is_ascii_punctuation() {
                ' '
            } else {
                c.to_ascii_lowercase()
            }
        })
        .collect();
    AnswerTokens::from_tokens(
        lowered
            .split_whitespace()
            .filter(|t| !matches!(*t, "a" | "an" | "the")),
    )
}

/// 1 iff the two normalized token multisets are equal.
pub fn exact_match(pred: &AnswerTokens, gold: &AnswerTokens) -> u8 {
    u8::from(pred == gold)
}

/// Token-level F1: harmonic mean of precision and recall over the multiset
/// intersection. Both empty scores 1; one-sided empty scores 0.
pub fn f1(pred: &AnswerTokens, gold: &AnswerTokens) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let num_same = pred.intersection_size(gold);
    if num_same == 0 {
        return 0.0;
    }
    let precision = num_same as f64 / pred.len() as f64;
    let recall = num_same as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Tau-a between two orderings of one distinct-element set, via inversion
/// counting: tau = 1 - 4*inversions / (n*(n-1)).
///
/// Returns `None` for fewer than two elements (undefined; callers apply their
/// own fallback).
pub fn kendall_tau<T: Eq + Hash + Clone + Ord>(order_a: &[T], order_b: &[T]) -> Option<f64> {
    let n = order_a.len();
    if n < 2 || order_b.len() != n {
        return None;
    }
    // Rank of each element under order_b, then count inversions of order_a's
    // rank image with mergesort.
    let mut rank: std::collections::HashMap<&T, usize> = std::collections::HashMap::new();
    for (i, v) in order_b.iter().enumerate() {
        rank.insert(v, i);
    }
    let mut ranks: Vec<usize> = Vec::with_capacity(n);
    for v in order_a {
        ranks.push(*rank.get(v)?);
    }
    let inversions = count_inversions(&mut ranks);
    let pairs = (n * (n - 1) / 2) as f64;
    Some(1.0 - 4.0 * inversions as f64 / (2.0 * pairs))
}

fn count_inversions(xs: &mut [usize]) -> u64 {
    let n = xs.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = xs.split_at_mut(mid);
    let mut inv = count_inversions(left) + count_inversions(right);
    let merged = {
        let mut out = Vec::with_capacity(n);
        let (mut i, mut j) = (0, 0);
        while i < left.len() && j < right.len() {
            if left[i] <= right[j] {
                out.push(left[i]);
                i += 1;
            } else {
                inv += (left.len() - i) as u64;
                out.push(right[j]);
                j += 1;
            }
        }
        out.extend_from_slice(&left[i..]);
        out.extend_from_slice(&right[j..]);
        out
    };
    xs.copy_from_slice(&merged);
    inv
}

/// Jaccard index of the deduplicated record sets times `(tau + 1) / 2`, where
/// tau compares common elements ordered by first appearance in each list.
///
/// Conventions: both empty scores 1; fewer than two common elements falls back
/// to tau = 1 so singleton exact matches score 1.
pub fn iou_kendall_reward<T: Eq + Hash + Clone + Ord>(a: &[T], g: &[T]) -> f64 {
    let dedup = |xs: &[T]| {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for x in xs {
            if seen.insert(x.clone()) {
                out.push(x.clone());
            }
        }
        out
    };
    let a = dedup(a);
    let g = dedup(g);
    if a.is_empty() && g.is_empty() {
        return 1.0;
    }
    let gset: std::collections::HashSet<&T> = g.iter().collect();
    let aset: std::collections::HashSet<&T> = a.iter().collect();
    let common_in_a: Vec<T> = a.iter().filter(|x| gset.contains(x)).cloned().collect();
    let common_in_g: Vec<T> = g.iter().filter(|x| aset.contains(x)).cloned().collect();
    let inter = common_in_a.len();
    let union = a.len() + g.len() - inter;
    if union == 0 {
        return 1.0;
    }
    let iou = inter as f64 / union as f64;
    let tau = kendall_tau(&common_in_a, &common_in_g).unwrap_or(1.0);
    iou * (tau + 1.0) / 2.0
}

/// Per-trial reward aggregation: carry-forward pads each task's rewards to K
/// slots, then IR = slot 1, FR = slot K, AR = mean of all K slots, each
/// averaged over tasks and scaled by 100.
pub fn aggregate_metrics(reward_matrix: &[Vec<f64>], k: usize) -> Result<(f64, f64, f64)> {
    if reward_matrix.is_empty() {
        return Err(Error::Data("empty task set in aggregation".into()));
    }
    if k == 0 {
        return Err(Error::Config("K must be >= 1".into()));
    }
    let (mut ir, mut fr, mut ar) = (0.0, 0.0, 0.0);
    for rewards in reward_matrix {
        if rewards.is_empty() || rewards.len() > k {
            return Err(Error::Data(format!(
                "task reward list length {} invalid for K={k}",
                rewards.len()
            )));
        }
        let last = *rewards.last().unwrap();
        let slot = |i: usize| rewards.get(i).copied().unwrap_or(last);
        ir += slot(0);
        fr += slot(k - 1);
        ar += (0..k).map(slot).sum::<f64>() / k as f64;
    }
    let n = reward_matrix.len() as f64;
    Ok((100.0 * ir / n, 100.0 * fr / n, 100.0 * ar / n))
}
