//! Metrics over grouped response logs.

use serde::Serialize;
use xgap_core::math::spearman;
use xgap_core::metrics::{
    bin_confidence, chi_squared, confidence, l2_centroid_distance, mae, majority_vote,
    oracle_distance, pi_categorical, pi_continuous, transfer_score, CategoryDistribution,
    ConfidenceBin, CorrectnessTable, OracleDistance, PiSoftRule, Role,
};

use crate::ingest::{QuestionGroup, ResponseRecord};

pub const NO_TARGET_DATA: &str = "no target data";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyzeOptions {
    pub rule: PiSoftRule,
    pub n_bins: usize,
    /// Larger ensemble size for the continuous mixing estimate.
    pub ensemble_size: usize,
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            rule: PiSoftRule::Reconciled,
            n_bins: 5,
            ensemble_size: 10,
            level: 0.95,
            resamples: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub n: usize,
    pub value: f64,
    pub questions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfidenceSection {
    pub bins: Vec<ConfidenceBin>,
    pub spearman: Option<f64>,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub records: usize,
    pub questions: usize,
    pub target_languages: Vec<String>,
    pub notes: Vec<String>,
    pub source_accuracy: Option<f64>,
    pub transfer_score: Option<f64>,
    pub pi_categorical: Option<f64>,
    pub pi_continuous: Option<f64>,
    pub pi_continuous_questions: usize,
    pub confidence: Option<ConfidenceSection>,
    pub chi_squared_curve: Vec<CurveRow>,
    pub l2_curve: Vec<CurveRow>,
    pub mae: Option<f64>,
    pub mae_questions: usize,
    pub oracle_distance: Option<OracleDistance>,
}

fn category(r: &ResponseRecord) -> &str {
    // fill_derived populates this before analysis; fall back to raw text
    r.category.as_deref().unwrap_or(&r.raw_text)
}

/// Category labels of one question in first-appearance order, source first.
struct Labels<'a> {
    names: Vec<&'a str>,
}

impl<'a> Labels<'a> {
    fn new(g: &'a QuestionGroup) -> Self {
        let mut names: Vec<&str> = Vec::new();
        for r in g.records() {
            let c = category(r);
            if !names.contains(&c) {
                names.push(c);
            }
        }
        Labels { names }
    }

    fn index(&self, r: &ResponseRecord) -> usize {
        let c = category(r);
        self.names
            .iter()
            .position(|n| *n == c)
            .expect("label collected")
    }

    fn indices<'r>(&self, records: impl IntoIterator<Item = &'r ResponseRecord>) -> Vec<usize> {
        records.into_iter().map(|r| self.index(r)).collect()
    }
}

fn first_labelled(records: &[ResponseRecord]) -> Option<bool> {
    records.iter().find_map(|r| r.correct)
}

/// First `n` records of every target language, or `None` when a language has
/// fewer than `n`.
fn pooled_prefix(g: &QuestionGroup, n: usize) -> Option<Vec<&ResponseRecord>> {
    let mut out = Vec::new();
    for recs in g.target_records.values() {
        if recs.len() < n {
            return None;
        }
        out.extend(&recs[..n]);
    }
    Some(out)
}

fn embeddings<'r>(records: impl IntoIterator<Item = &'r ResponseRecord>) -> Option<Vec<&'r [f64]>> {
    records
        .into_iter()
        .map(|r| r.embedding.as_deref())
        .collect()
}

fn mean_numeric<'r>(records: impl IntoIterator<Item = &'r ResponseRecord>) -> Option<f64> {
    let values: Vec<f64> = records
        .into_iter()
        .filter_map(|r| r.answer_numeric)
        .map(|v| v as f64)
        .collect();
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn analyze(
    groups: &[QuestionGroup],
    options: &AnalyzeOptions,
) -> Result<AnalysisReport, xgap_core::Error> {
    let records = groups.iter().map(|g| g.records().count()).sum();
    let mut target_languages: Vec<String> = groups
        .iter()
        .flat_map(|g| g.target_records.keys().cloned())
        .collect();
    target_languages.sort();
    target_languages.dedup();
    let has_targets = !target_languages.is_empty();
    let mut notes = Vec::new();
    if !has_targets {
        notes.push(NO_TARGET_DATA.to_string());
    }

    // Correctness: the first labelled record per (question, language, role).
    let mut table = CorrectnessTable::new();
    for g in groups {
        let src_lang = g.source_language.as_deref().unwrap_or_default();
        if let Some(c) = first_labelled(&g.source_records) {
            table.insert(&g.question_id, src_lang, Role::Source, c)?;
        }
        for (lang, recs) in &g.target_records {
            if let Some(c) = first_labelled(recs) {
                table.insert(&g.question_id, lang, Role::Target, c)?;
            }
        }
    }
    if table.source_rows() == 0 && table.target_rows() == 0 {
        notes.push("no correctness labels".to_string());
    }
    let transfer = if table.target_rows() > 0 {
        Some(transfer_score(&table)?)
    } else {
        None
    };

    let mut pairs = Vec::new();
    let mut distance_pairs = Vec::new();
    let mut points = Vec::new();
    let mut mae_pairs = Vec::new();
    let mut oracle_sets: Vec<Vec<&[f64]>> = Vec::new();
    let n_max = groups
        .iter()
        .map(|g| g.source_records.len())
        .max()
        .unwrap_or(0);
    let mut chi_sums = vec![(0.0, 0usize); n_max];
    let mut l2_sums = vec![(0.0, 0usize); n_max];

    for g in groups {
        let labels = Labels::new(g);
        let m = labels.names.len();
        let src_idx = labels.indices(&g.source_records);

        if has_targets && g.targets().next().is_some() {
            let tgt_idx = labels.indices(g.targets());
            pairs.push((
                CategoryDistribution::from_samples(&src_idx, m)?,
                CategoryDistribution::from_samples(&tgt_idx, m)?,
            ));
            let src_conf = confidence(&src_idx)?;
            let src_mode = majority_vote(&src_idx)?;
            for recs in g.target_records.values() {
                let t = labels.indices(recs);
                points.push((src_conf, majority_vote(&t)? == src_mode));
            }

            for n in 1..=g.source_records.len() {
                let Some(tgt) = pooled_prefix(g, n) else {
                    break;
                };
                let src = &g.source_records[..n];
                let p = CategoryDistribution::from_samples(&labels.indices(src), m)?;
                let q =
                    CategoryDistribution::from_samples(&labels.indices(tgt.iter().copied()), m)?;
                let slot = &mut chi_sums[n - 1];
                slot.0 += chi_squared(p.probs(), q.probs())?;
                slot.1 += 1;
                if let (Some(a), Some(b)) = (embeddings(src), embeddings(tgt.iter().copied())) {
                    let slot = &mut l2_sums[n - 1];
                    slot.0 += l2_centroid_distance(&a, &b)?;
                    slot.1 += 1;
                }
            }

            let n_big = options.ensemble_size.min(g.source_records.len());
            if n_big >= 2 {
                let at = |n: usize| -> Option<Result<f64, xgap_core::Error>> {
                    let tgt = pooled_prefix(g, n)?;
                    let a = embeddings(&g.source_records[..n])?;
                    let b = embeddings(tgt)?;
                    Some(l2_centroid_distance(&a, &b))
                };
                if let (Some(d1), Some(dn)) = (at(1), at(n_big)) {
                    distance_pairs.push((d1?, dn?));
                }
            }

            if let (Some(a), Some(b)) = (mean_numeric(&g.source_records), mean_numeric(g.targets()))
            {
                mae_pairs.push((a, b));
            }
        }

        let correct: Option<Vec<&[f64]>> = g
            .records()
            .filter(|r| r.correct == Some(true))
            .map(|r| r.embedding.as_deref())
            .collect();
        if let Some(set) = correct {
            oracle_sets.push(set);
        }
    }

    let curve = |sums: &[(f64, usize)]| -> Vec<CurveRow> {
        sums.iter()
            .enumerate()
            .filter(|(_, (_, k))| *k > 0)
            .map(|(i, (total, k))| CurveRow {
                n: i + 1,
                value: total / *k as f64,
                questions: *k,
            })
            .collect()
    };

    let confidence_section = if points.is_empty() {
        None
    } else {
        let bins = bin_confidence(&points, options.n_bins)?;
        let (centers, means): (Vec<f64>, Vec<f64>) = bins
            .iter()
            .filter_map(|b| b.mean_agreement.map(|a| (b.center(), a)))
            .unzip();
        Some(ConfidenceSection {
            spearman: spearman(&centers, &means),
            bins,
            pairs: points.len(),
        })
    };

    Ok(AnalysisReport {
        records,
        questions: groups.len(),
        target_languages,
        notes,
        source_accuracy: table.source_accuracy(),
        transfer_score: transfer,
        pi_categorical: if pairs.is_empty() {
            None
        } else {
            Some(pi_categorical(&pairs, options.rule)?)
        },
        pi_continuous: if distance_pairs.is_empty() {
            None
        } else {
            Some(pi_continuous(&distance_pairs)?)
        },
        pi_continuous_questions: distance_pairs.len(),
        confidence: confidence_section,
        chi_squared_curve: curve(&chi_sums),
        l2_curve: curve(&l2_sums),
        mae: if mae_pairs.is_empty() {
            None
        } else {
            Some(mae(&mae_pairs)?)
        },
        mae_questions: mae_pairs.len(),
        oracle_distance: oracle_distance(
            &oracle_sets,
            options.level,
            options.resamples,
            options.seed,
        )?,
    })
}
