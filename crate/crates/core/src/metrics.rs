//! Estimators and distances over response collections.
//!
//! Everything here consumes pre-grouped data: category indices, probability
//! vectors, embedding sets or correctness rows. Grouping and labelling happen
//! upstream.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::math::{argmax, euclidean, mean};
use crate::rng::substream;

const PROB_SUM_TOLERANCE: f64 = 1e-9;

/// Probability vector over `m` categories with optional answer labels.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct CategoryDistribution {
    probs: Vec<f64>,
    support_labels: Option<Vec<String>>,
}

impl CategoryDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::EmptyInput("category distribution"));
        }
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(invalid("probabilities must be finite and non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(invalid(format!("probabilities sum to {total}, not 1")));
        }
        Ok(CategoryDistribution {
            probs,
            support_labels: None,
        })
    }

    pub fn with_labels(probs: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if labels.len() != probs.len() {
            return Err(Error::SupportMismatch {
                left: probs.len(),
                right: labels.len(),
            });
        }
        let mut d = Self::new(probs)?;
        d.support_labels = Some(labels);
        Ok(d)
    }

    /// Relative frequencies of `counts`.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyInput("category counts"));
        }
        Self::new(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    /// Empirical distribution of category indices over `[0, m)`.
    pub fn from_samples(samples: &[usize], m: usize) -> Result<Self> {
        let mut counts = vec![0u64; m];
        for &s in samples {
            if s >= m {
                return Err(invalid(format!("category {s} outside [0, {m})")));
            }
            counts[s] += 1;
        }
        Self::from_counts(&counts)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn support_labels(&self) -> Option<&[String]> {
        self.support_labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Most probable category, smallest index on ties.
    pub fn mode(&self) -> usize {
        argmax(&self.probs).unwrap_or(0)
    }
}

/// Most frequent category; ties go to the smallest index.
pub fn majority_vote(samples: &[usize]) -> Result<usize> {
    let max = samples
        .iter()
        .copied()
        .max()
        .ok_or(Error::EmptyInput("majority vote samples"))?;
    let mut counts = vec![0u32; max + 1];
    for &s in samples {
        counts[s] += 1;
    }
    Ok(vote_counts(&counts))
}

/// Majority vote over a tally; ties go to the smallest index.
#[inline]
pub(crate) fn vote_counts(counts: &[u32]) -> usize {
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    best
}

/// Sum over `x` with `p(x) + q(x) > 0` of `(p(x) - q(x))^2 / (p(x) + q(x))`.
pub fn chi_squared_distance(p: &CategoryDistribution, q: &CategoryDistribution) -> Result<f64> {
    chi_squared(p.probs(), q.probs())
}

/// [`chi_squared_distance`] over raw probability (or frequency) slices.
pub fn chi_squared(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::SupportMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    Ok(p.iter()
        .zip(q)
        .filter(|(a, b)| *a + *b > 0.0)
        .map(|(a, b)| (a - b) * (a - b) / (a + b))
        .sum())
}

fn centroid<V: AsRef<[f64]>>(set: &[V], what: &'static str) -> Result<Vec<f64>> {
    let first = set.first().ok_or(Error::EmptyInput(what))?.as_ref();
    let dim = first.len();
    let mut acc = vec![0.0; dim];
    for v in set {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(Error::SupportMismatch {
                left: dim,
                right: v.len(),
            });
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let n = set.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Euclidean distance between the arithmetic means of two embedding sets.
pub fn l2_centroid_distance<A: AsRef<[f64]>, B: AsRef<[f64]>>(a: &[A], b: &[B]) -> Result<f64> {
    let ca = centroid(a, "first embedding set")?;
    let cb = centroid(b, "second embedding set")?;
    if ca.len() != cb.len() {
        return Err(Error::SupportMismatch {
            left: ca.len(),
            right: cb.len(),
        });
    }
    Ok(euclidean(&ca, &cb))
}

/// Fraction of examples whose distance strictly dropped from ensemble size
/// one to the larger ensemble. Pairs are `(distance_at_1, distance_at_n)`.
pub fn pi_continuous(per_example: &[(f64, f64)]) -> Result<f64> {
    if per_example.is_empty() {
        return Err(Error::EmptyInput("distance pairs"));
    }
    if per_example.iter().any(|&(a, b)| !(a >= 0.0) || !(b >= 0.0)) {
        return Err(invalid("distances must be non-negative"));
    }
    let decreased = per_example.iter().filter(|(d1, dn)| dn < d1).count();
    Ok(decreased as f64 / per_example.len() as f64)
}

/// How a disagreement between the two modal answers is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum PiSoftRule {
    /// The mean of `|p_i - q_j|` over examples, taken literally as the
    /// estimate (no complement, and no special case for `i != j`).
    Appendix,
    /// `1 - mean mismatch`, where the mismatch is `|p_i - q_i|` when the modes
    /// agree and `1` when they differ.
    #[default]
    Reconciled,
}

/// Soft mismatch for one example under `rule`.
pub fn soft_mismatch(
    p: &CategoryDistribution,
    q: &CategoryDistribution,
    rule: PiSoftRule,
) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::SupportMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let (i, j) = (p.mode(), q.mode());
    let (pi, qj) = (p.probs()[i], q.probs()[j]);
    Ok(match rule {
        PiSoftRule::Appendix => (pi - qj).abs(),
        PiSoftRule::Reconciled if i == j => (pi - qj).abs(),
        PiSoftRule::Reconciled => 1.0,
    })
}

/// Categorical estimate of the variance-component share from per-example
/// source/target answer distributions.
pub fn pi_categorical(
    pairs: &[(CategoryDistribution, CategoryDistribution)],
    rule: PiSoftRule,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("distribution pairs"));
    }
    let mut total = 0.0;
    for (p, q) in pairs {
        total += soft_mismatch(p, q, rule)?;
    }
    let mean_mismatch = total / pairs.len() as f64;
    Ok(match rule {
        PiSoftRule::Appendix => mean_mismatch,
        PiSoftRule::Reconciled => 1.0 - mean_mismatch,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Role {
    Source,
    Target,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Source => "source",
            Role::Target => "target",
        }
    }
}

/// Per-question correctness in the source language and in each target language.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrectnessTable {
    source: BTreeMap<String, bool>,
    target: BTreeMap<(String, String), bool>,
}

impl CorrectnessTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one row. Source rows are keyed by question alone (each question
    /// has a single source language).
    pub fn insert(
        &mut self,
        question: &str,
        language: &str,
        role: Role,
        correct: bool,
    ) -> Result<()> {
        let clash = match role {
            Role::Source => self.source.insert(question.to_string(), correct).is_some(),
            Role::Target => self
                .target
                .insert((question.to_string(), language.to_string()), correct)
                .is_some(),
        };
        if clash {
            return Err(Error::Duplicate(format!(
                "({question}, {language}, {})",
                role.as_str()
            )));
        }
        Ok(())
    }

    pub fn target_rows(&self) -> usize {
        self.target.len()
    }

    pub fn source_rows(&self) -> usize {
        self.source.len()
    }

    /// Fraction of source questions answered correctly.
    pub fn source_accuracy(&self) -> Option<f64> {
        if self.source.is_empty() {
            return None;
        }
        let hits = self.source.values().filter(|c| **c).count();
        Some(hits as f64 / self.source.len() as f64)
    }
}

/// `100 * mean over (q, l)` of "correct in the source and in target `l`".
pub fn transfer_score(table: &CorrectnessTable) -> Result<f64> {
    if table.target.is_empty() {
        return Err(Error::EmptyInput("target correctness rows"));
    }
    let mut both = 0usize;
    for ((question, _), &tgt) in &table.target {
        let src = *table
            .source
            .get(question)
            .ok_or_else(|| Error::MissingSource {
                question: question.clone(),
            })?;
        if src && tgt {
            both += 1;
        }
    }
    Ok(100.0 * both as f64 / table.target.len() as f64)
}

/// Relative frequency of the (majority-vote) mode.
pub fn confidence(samples: &[usize]) -> Result<f64> {
    let mode = majority_vote(samples)?;
    let hits = samples.iter().filter(|&&s| s == mode).count();
    Ok(hits as f64 / samples.len() as f64)
}

/// Maps raw answer text to a canonical form.
pub trait Normalizer {
    fn normalize(&self, raw: &str) -> String;
}

impl<F: Fn(&str) -> String> Normalizer for F {
    fn normalize(&self, raw: &str) -> String {
        self(raw)
    }
}

/// Trims and collapses internal whitespace. The full text policy (Unicode
/// folding, punctuation) lives with the log tooling.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceNormalizer;

impl Normalizer for WhitespaceNormalizer {
    fn normalize(&self, raw: &str) -> String {
        let mut out = String::with_capacity(raw.len());
        for word in raw.split_whitespace() {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(word);
        }
        out
    }
}

/// Canonical mode of free-text answers with its count. Categories are indexed
/// in order of first appearance, so ties go to the answer seen first.
pub fn canonical_mode<S: AsRef<str>>(
    samples: &[S],
    normalizer: &dyn Normalizer,
) -> Option<(String, usize)> {
    let mut labels: Vec<String> = Vec::new();
    let mut counts: Vec<u32> = Vec::new();
    for s in samples {
        let key = normalizer.normalize(s.as_ref());
        match labels.iter().position(|l| *l == key) {
            Some(i) => counts[i] += 1,
            None => {
                labels.push(key);
                counts.push(1);
            }
        }
    }
    if labels.is_empty() {
        return None;
    }
    let best = vote_counts(&counts);
    Some((labels.swap_remove(best), counts[best] as usize))
}

/// Whether the canonical modes of two answer lists coincide.
pub fn mode_match<S: AsRef<str>, T: AsRef<str>>(
    source: &[S],
    target: &[T],
    normalizer: &dyn Normalizer,
) -> Result<bool> {
    let (a, _) = canonical_mode(source, normalizer).ok_or(Error::EmptyInput("source answers"))?;
    let (b, _) = canonical_mode(target, normalizer).ok_or(Error::EmptyInput("target answers"))?;
    Ok(a == b)
}

/// Mean absolute difference of `(source, target)` pairs.
pub fn mae(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("answer pairs"));
    }
    Ok(pairs.iter().map(|(a, b)| (a - b).abs()).sum::<f64>() / pairs.len() as f64)
}

// Linear interpolation between order statistics of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(rank) as usize;
    let hi = libm::ceil(rank) as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
    }
}

/// Minimum number of bootstrap resamples.
pub const MIN_RESAMPLES: usize = 1000;

/// Percentile bootstrap interval for the mean.
pub fn bootstrap_ci(values: &[f64], level: f64, resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(invalid("bootstrap needs at least two values"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid("confidence level must lie in (0, 1)"));
    }
    if resamples < MIN_RESAMPLES {
        return Err(invalid(format!(
            "bootstrap needs at least {MIN_RESAMPLES} resamples"
        )));
    }
    let mut rng = substream(seed, &[0xB007]);
    let n = values.len();
    let mut buf = vec![0.0; n];
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = values[rng.random_range(0..n)];
            }
            mean(&buf)
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((percentile(&means, alpha), percentile(&means, 1.0 - alpha)))
}

/// Floor distance among answers known to be correct.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct OracleDistance {
    pub value: f64,
    pub ci: (f64, f64),
    /// Questions contributing (those with at least two correct answers).
    pub questions: usize,
}

/// Mean pairwise L2 distance among correct-answer embeddings per question,
/// averaged over questions, with a bootstrap interval over the per-question
/// values. `Ok(None)` when no question has two correct answers.
pub fn oracle_distance<V: AsRef<[f64]>>(
    correct_by_question: &[Vec<V>],
    level: f64,
    resamples: usize,
    seed: u64,
) -> Result<Option<OracleDistance>> {
    let mut per_question = Vec::new();
    for answers in correct_by_question {
        if answers.len() < 2 {
            continue;
        }
        let dim = answers[0].as_ref().len();
        let mut total = 0.0;
        let mut pairs = 0usize;
        for (i, a) in answers.iter().enumerate() {
            let a = a.as_ref();
            if a.len() != dim {
                return Err(Error::SupportMismatch {
                    left: dim,
                    right: a.len(),
                });
            }
            for b in &answers[i + 1..] {
                let b = b.as_ref();
                if b.len() != dim {
                    return Err(Error::SupportMismatch {
                        left: dim,
                        right: b.len(),
                    });
                }
                total += euclidean(a, b);
                pairs += 1;
            }
        }
        per_question.push(total / pairs as f64);
    }
    if per_question.is_empty() {
        return Ok(None);
    }
    let value = mean(&per_question);
    let ci = if per_question.len() >= 2 {
        bootstrap_ci(&per_question, level, resamples, seed)?
    } else {
        (value, value)
    };
    Ok(Some(OracleDistance {
        value,
        ci,
        questions: per_question.len(),
    }))
}

/// Agreement averaged within one confidence bin.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ConfidenceBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// `None` for an empty bin.
    pub mean_agreement: Option<f64>,
}

impl ConfidenceBin {
    pub fn center(&self) -> f64 {
        (self.lower + self.upper) / 2.0
    }
}

/// Bins `(confidence, agreed)` points into `n_bins` equal-width bins on
/// `[0, 1]`; the last bin is closed on the right.
pub fn bin_confidence(points: &[(f64, bool)], n_bins: usize) -> Result<Vec<ConfidenceBin>> {
    if n_bins == 0 {
        return Err(invalid("need at least one confidence bin"));
    }
    let mut hits = vec![0usize; n_bins];
    let mut counts = vec![0usize; n_bins];
    for &(c, agreed) in points {
        if !(0.0..=1.0).contains(&c) {
            return Err(invalid(format!("confidence {c} outside [0, 1]")));
        }
        // nudge so that e.g. 0.7 * 10 does not land below its bin edge
        let b = (libm::floor(c * n_bins as f64 + 1e-9) as usize).min(n_bins - 1);
        counts[b] += 1;
        hits[b] += usize::from(agreed);
    }
    Ok((0..n_bins)
        .map(|b| ConfidenceBin {
            lower: b as f64 / n_bins as f64,
            upper: (b + 1) as f64 / n_bins as f64,
            count: counts[b],
            mean_agreement: (counts[b] > 0).then(|| hits[b] as f64 / counts[b] as f64),
        })
        .collect())
}
