//! Monte Carlo experiments built from the samplers.
//!
//! Each operation takes a master seed and addresses its randomness through
//! [`substream`] paths, so a result depends only on its inputs and never on
//! how the caller schedules work.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

use crate::error::{invalid, Error, Result};
use crate::math::{dot, mean, sample_variance, spearman};
use crate::metrics::{
    bin_confidence, chi_squared, l2_centroid_distance, pi_categorical, pi_continuous, vote_counts,
    CategoryDistribution, ConfidenceBin, PiSoftRule,
};
use crate::model::{CategorySampler, LogitProfile, ResponseModel, SamplingPath, TargetMixture};
use crate::rng::{standard_normal, substream, SimRng};

/// Smallest accepted Monte Carlo budget.
pub const MIN_TRIALS: usize = 100;
/// Default Monte Carlo budget per point.
pub const DEFAULT_TRIALS: usize = 100_000;
/// Default jitter added to one-hot response embeddings.
pub const DEFAULT_JITTER: f64 = 0.05;
/// Batches used to attach a standard error to plug-in distances.
const DISTANCE_BATCHES: usize = 10;

// Substream tags, one per experiment family.
const TAG_AGREEMENT: u64 = 1;
const TAG_MODE: u64 = 2;
const TAG_CURVE: u64 = 3;
const TAG_QUESTION: u64 = 4;
const TAG_PI: u64 = 5;
const TAG_CONFIDENCE: u64 = 6;
const TAG_MECHANISM: u64 = 7;

/// Seed for an independent unit of work (a grid cell, say) under `seed`.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    substream(seed, path).next_u64()
}

/// Quantity tracked along an ensembling curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum CurveMetric {
    /// Probability that the voted source and target categories coincide.
    #[default]
    ModeAgreement,
    /// Chi-squared distance between the voted source and target category
    /// distributions.
    ChiSquared,
    /// L2 distance between centroids of voted-response embeddings.
    L2Centroid,
    /// Mean absolute difference of voted category indices.
    Mae,
}

impl CurveMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            CurveMetric::ModeAgreement => "mode-agreement",
            CurveMetric::ChiSquared => "chi-squared",
            CurveMetric::L2Centroid => "l2-centroid",
            CurveMetric::Mae => "mae",
        }
    }

    /// Whether larger values mean closer source and target behaviour.
    pub fn is_similarity(self) -> bool {
        matches!(self, CurveMetric::ModeAgreement)
    }
}

/// One parameter point of a Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct SimConfig {
    profile: LogitProfile,
    mixture: TargetMixture,
    n_max: usize,
    trials: usize,
    seed: u64,
    diagnostics: bool,
    path: SamplingPath,
    metric: CurveMetric,
    jitter: f64,
}

impl SimConfig {
    /// The source profile is taken from `mixture`.
    pub fn new(mixture: TargetMixture, n_max: usize, trials: usize, seed: u64) -> Result<Self> {
        if n_max == 0 {
            return Err(invalid("n_max must be at least 1"));
        }
        if trials < MIN_TRIALS {
            return Err(invalid(format!("trials must be at least {MIN_TRIALS}")));
        }
        Ok(SimConfig {
            profile: mixture.source().clone(),
            mixture,
            n_max,
            trials,
            seed,
            diagnostics: false,
            path: SamplingPath::Categorical,
            metric: CurveMetric::ModeAgreement,
            jitter: DEFAULT_JITTER,
        })
    }

    /// Records the realised share of variance-component target draws.
    pub fn with_diagnostics(mut self, on: bool) -> Self {
        self.diagnostics = on;
        self
    }

    pub fn with_path(mut self, path: SamplingPath) -> Self {
        self.path = path;
        self
    }

    pub fn with_metric(mut self, metric: CurveMetric) -> Self {
        self.metric = metric;
        self
    }

    pub fn with_jitter(mut self, jitter: f64) -> Result<Self> {
        if !(jitter >= 0.0) || !jitter.is_finite() {
            return Err(invalid("embedding jitter must be finite and non-negative"));
        }
        self.jitter = jitter;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn profile(&self) -> &LogitProfile {
        &self.profile
    }

    pub fn mixture(&self) -> &TargetMixture {
        &self.mixture
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn trials(&self) -> usize {
        self.trials
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn diagnostics(&self) -> bool {
        self.diagnostics
    }

    pub fn path(&self) -> SamplingPath {
        self.path
    }

    pub fn metric(&self) -> CurveMetric {
        self.metric
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }
}

/// Monte Carlo agreement between voted source and target responses.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct AgreementEstimate {
    pub point: f64,
    pub stderr: f64,
    pub trials: usize,
    pub ensemble_size: usize,
    /// Share of target draws that came from the variance component, when
    /// diagnostics are on.
    pub variance_share: Option<f64>,
}

/// One point of an [`AgreementCurve`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct CurvePoint {
    pub ensemble_size: usize,
    pub value: f64,
    pub stderr: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct AgreementCurve {
    pub metric: CurveMetric,
    pub points: Vec<CurvePoint>,
}

impl AgreementCurve {
    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    /// Spearman correlation between ensemble size and value.
    pub fn trend(&self) -> Option<f64> {
        let sizes: Vec<f64> = self.points.iter().map(|p| p.ensemble_size as f64).collect();
        spearman(&sizes, &self.values())
    }
}

fn binomial_stderr(p: f64, trials: usize) -> f64 {
    libm::sqrt(p * (1.0 - p) / trials as f64)
}

/// Majority vote over `n` draws; `counts` is scratch space of length `m`.
#[inline]
fn voted_draw<M: ResponseModel, R: Rng + ?Sized>(
    model: &M,
    n: usize,
    sampler: &mut CategorySampler,
    counts: &mut [u32],
    rng: &mut R,
) -> usize {
    counts.fill(0);
    for _ in 0..n {
        counts[model.draw_category(sampler, rng)] += 1;
    }
    vote_counts(counts)
}

/// Agreement rate of `n`-vote source and target responses.
pub fn estimate_agreement(config: &SimConfig, n: usize) -> Result<AgreementEstimate> {
    if n == 0 || n > config.n_max {
        return Err(invalid(format!(
            "ensemble size {n} outside [1, {}]",
            config.n_max
        )));
    }
    let mut rng = substream(config.seed, &[TAG_AGREEMENT, n as u64]);
    let mut sampler = CategorySampler::new(config.path);
    let m = config.profile.m();
    let mut src_counts = vec![0u32; m];
    let mut tgt_counts = vec![0u32; m];
    let mut agreed = 0usize;
    let mut variance_draws = 0usize;
    for _ in 0..config.trials {
        let s = voted_draw(&config.profile, n, &mut sampler, &mut src_counts, &mut rng);
        let t = if config.diagnostics {
            tgt_counts.fill(0);
            for _ in 0..n {
                let (c, kappa) = sampler.draw_target(&config.mixture, &mut rng);
                tgt_counts[c] += 1;
                variance_draws += usize::from(kappa);
            }
            vote_counts(&tgt_counts)
        } else {
            voted_draw(&config.mixture, n, &mut sampler, &mut tgt_counts, &mut rng)
        };
        agreed += usize::from(s == t);
    }
    let point = agreed as f64 / config.trials as f64;
    Ok(AgreementEstimate {
        point,
        stderr: binomial_stderr(point, config.trials),
        trials: config.trials,
        ensemble_size: n,
        variance_share: config
            .diagnostics
            .then(|| variance_draws as f64 / (config.trials * n) as f64),
    })
}

/// Empirical modal category of single draws and its frequency.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ModeEstimate {
    pub mode: usize,
    pub probability: f64,
    pub stderr: f64,
    pub trials: usize,
}

pub fn estimate_mode_probability<M: ResponseModel>(
    model: &M,
    trials: usize,
    seed: u64,
    path: SamplingPath,
) -> Result<ModeEstimate> {
    if trials < MIN_TRIALS {
        return Err(invalid(format!("trials must be at least {MIN_TRIALS}")));
    }
    let mut rng = substream(seed, &[TAG_MODE]);
    let mut sampler = CategorySampler::new(path);
    let mut counts = vec![0u32; model.categories()];
    for _ in 0..trials {
        counts[model.draw_category(&mut sampler, &mut rng)] += 1;
    }
    let mode = vote_counts(&counts);
    let probability = counts[mode] as f64 / trials as f64;
    Ok(ModeEstimate {
        mode,
        probability,
        stderr: binomial_stderr(probability, trials),
        trials,
    })
}

fn embed(category: usize, m: usize, jitter: f64, rng: &mut SimRng) -> Vec<f64> {
    let mut v = vec![0.0; m];
    v[category] = 1.0;
    if jitter > 0.0 {
        for x in v.iter_mut() {
            *x += jitter * standard_normal(rng);
        }
    }
    v
}

// Plug-in distance between source and target voted responses: the full-sample
// value plus a standard error from equal batches.
fn distance_point(config: &SimConfig, n: usize, rng: &mut SimRng) -> Result<CurvePoint> {
    let m = config.profile.m();
    let mut sampler = CategorySampler::new(config.path);
    let mut counts = vec![0u32; m];
    let trials = config.trials;
    let mut src = Vec::with_capacity(trials);
    let mut tgt = Vec::with_capacity(trials);
    for _ in 0..trials {
        src.push(voted_draw(
            &config.profile,
            n,
            &mut sampler,
            &mut counts,
            rng,
        ));
        tgt.push(voted_draw(
            &config.mixture,
            n,
            &mut sampler,
            &mut counts,
            rng,
        ));
    }
    let distance = |s: &[usize], t: &[usize], rng: &mut SimRng| -> Result<f64> {
        match config.metric {
            CurveMetric::ChiSquared => {
                let p = CategoryDistribution::from_samples(s, m)?;
                let q = CategoryDistribution::from_samples(t, m)?;
                chi_squared(p.probs(), q.probs())
            }
            CurveMetric::L2Centroid => {
                let es: Vec<Vec<f64>> =
                    s.iter().map(|&c| embed(c, m, config.jitter, rng)).collect();
                let et: Vec<Vec<f64>> =
                    t.iter().map(|&c| embed(c, m, config.jitter, rng)).collect();
                l2_centroid_distance(&es, &et)
            }
            CurveMetric::Mae => Ok(s
                .iter()
                .zip(t)
                .map(|(&a, &b)| a.abs_diff(b) as f64)
                .sum::<f64>()
                / s.len() as f64),
            CurveMetric::ModeAgreement => unreachable!("agreement is estimated directly"),
        }
    };
    let value = distance(&src, &tgt, rng)?;
    let size = trials / DISTANCE_BATCHES;
    let mut batches = Vec::with_capacity(DISTANCE_BATCHES);
    for b in 0..DISTANCE_BATCHES {
        let range = b * size..(b + 1) * size;
        batches.push(distance(&src[range.clone()], &tgt[range], rng)?);
    }
    Ok(CurvePoint {
        ensemble_size: n,
        value,
        stderr: libm::sqrt(sample_variance(&batches) / DISTANCE_BATCHES as f64),
        trials,
    })
}

/// The configured metric at one ensemble size.
pub fn curve_point(config: &SimConfig, n: usize) -> Result<CurvePoint> {
    if config.metric == CurveMetric::ModeAgreement {
        let e = estimate_agreement(config, n)?;
        return Ok(CurvePoint {
            ensemble_size: n,
            value: e.point,
            stderr: e.stderr,
            trials: e.trials,
        });
    }
    if n == 0 || n > config.n_max {
        return Err(invalid(format!(
            "ensemble size {n} outside [1, {}]",
            config.n_max
        )));
    }
    let mut rng = substream(config.seed, &[TAG_CURVE, n as u64]);
    distance_point(config, n, &mut rng)
}

/// The configured metric over ensemble sizes `1..=n_max`.
pub fn sweep_ensemble(config: &SimConfig) -> Result<AgreementCurve> {
    let points = (1..=config.n_max)
        .map(|n| curve_point(config, n))
        .collect::<Result<Vec<_>>>()?;
    Ok(AgreementCurve {
        metric: config.metric,
        points,
    })
}

/// Distribution over questions: top gap and noise drawn uniformly, categories
/// optionally permuted, and the target fixed to one mixture component.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ProfileGenerator {
    pub m: usize,
    pub gap: (f64, f64),
    pub sigma: (f64, f64),
    /// Spacing of the categories below the runner-up.
    pub step: f64,
    pub tau: f64,
    pub eta: f64,
    /// Noise of the bias component; `None` reuses the question's source noise.
    pub bias_sigma: Option<f64>,
    pub permute: bool,
}

impl Default for ProfileGenerator {
    fn default() -> Self {
        ProfileGenerator {
            m: 4,
            gap: (0.0, 4.0),
            sigma: (0.5, 1.5),
            step: 1.0,
            tau: 1.5,
            eta: 1.5,
            bias_sigma: None,
            permute: true,
        }
    }
}

fn uniform_in(range: (f64, f64), rng: &mut SimRng) -> f64 {
    range.0 + (range.1 - range.0) * rng.random::<f64>()
}

impl ProfileGenerator {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(invalid("generator needs m >= 2"));
        }
        for (name, (lo, hi)) in [("gap", self.gap), ("sigma", self.sigma)] {
            if !(lo >= 0.0) || !(hi >= lo) || !hi.is_finite() {
                return Err(invalid(format!("{name} range must satisfy 0 <= lo <= hi")));
            }
        }
        if !(self.tau >= 1.0) || !(self.eta >= 1.0) {
            return Err(invalid("tau and eta must be at least 1"));
        }
        Ok(())
    }

    /// Whether every question gets the same profile.
    pub fn is_degenerate(&self) -> bool {
        self.gap.0 == self.gap.1 && self.sigma.0 == self.sigma.1 && !self.permute
    }

    /// One question. `variance` picks the target component.
    pub fn sample(&self, variance: bool, rng: &mut SimRng) -> Result<TargetMixture> {
        let gap = uniform_in(self.gap, rng);
        let sigma = uniform_in(self.sigma, rng);
        let base = LogitProfile::with_top_gap(self.m, gap, self.step, sigma)?;
        let profile = if self.permute {
            let mut mu = base.mu().to_vec();
            mu.shuffle(rng);
            LogitProfile::new(mu, sigma)?
        } else {
            base
        };
        if variance {
            TargetMixture::variance_only(profile, self.tau, self.eta)
        } else {
            TargetMixture::rotated_bias(profile, self.bias_sigma.unwrap_or(sigma))
        }
    }
}

/// Question-averaged curve: each question gets its own profile from
/// `generator` (target component drawn with probability `pi`) and the curve
/// is averaged pointwise. The stderr is the spread across questions.
pub fn sweep_questions(
    generator: &ProfileGenerator,
    pi: f64,
    n_questions: usize,
    template: &SimConfig,
) -> Result<AgreementCurve> {
    generator.validate()?;
    if n_questions < 2 {
        return Err(invalid("need at least two questions"));
    }
    let mut per_n: Vec<Vec<f64>> = vec![Vec::with_capacity(n_questions); template.n_max];
    for q in 0..n_questions {
        let mut rng = substream(template.seed, &[TAG_QUESTION, q as u64]);
        let variance = rng.random::<f64>() < pi;
        let mixture = generator.sample(variance, &mut rng)?;
        let config = SimConfig {
            profile: mixture.source().clone(),
            mixture,
            seed: rng.next_u64(),
            ..template.clone()
        };
        for (n, slot) in per_n.iter_mut().enumerate() {
            slot.push(curve_point(&config, n + 1)?.value);
        }
    }
    let points = per_n
        .iter()
        .enumerate()
        .map(|(i, values)| CurvePoint {
            ensemble_size: i + 1,
            value: mean(values),
            stderr: libm::sqrt(sample_variance(values) / values.len() as f64),
            trials: template.trials,
        })
        .collect();
    Ok(AgreementCurve {
        metric: template.metric,
        points,
    })
}

/// Synthetic dataset for checking both mixing-coefficient estimators.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PiRecoveryConfig {
    pub true_pi: f64,
    pub n_questions: usize,
    /// Voted responses drawn per question and language.
    pub per_question_draws: usize,
    pub ensemble_size: usize,
    pub generator: ProfileGenerator,
    pub rule: PiSoftRule,
    pub jitter: f64,
    pub seed: u64,
}

impl PiRecoveryConfig {
    pub fn new(true_pi: f64, seed: u64) -> Self {
        PiRecoveryConfig {
            true_pi,
            n_questions: 500,
            per_question_draws: 200,
            ensemble_size: 10,
            generator: ProfileGenerator {
                gap: (2.0, 5.0),
                ..ProfileGenerator::default()
            },
            rule: PiSoftRule::Reconciled,
            jitter: DEFAULT_JITTER,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct PiRecoveryReport {
    pub true_pi: f64,
    /// Fraction of questions that actually drew the variance component.
    pub realized_pi: f64,
    pub pi_categorical: f64,
    pub pi_continuous: f64,
    pub n_questions: usize,
    pub warnings: Vec<String>,
}

/// Fixes each question's target component by a `Bernoulli(true_pi)` coin and
/// runs both estimators.
///
/// The categorical estimator compares the distributions of voted answers.
/// The continuous one asks whether the distance between source and target
/// embedding centroids shrinks from single responses to voted responses.
pub fn pi_recovery_experiment(config: &PiRecoveryConfig) -> Result<PiRecoveryReport> {
    if !(0.0..=1.0).contains(&config.true_pi) {
        return Err(invalid("true pi must lie in [0, 1]"));
    }
    if config.n_questions < 50 {
        return Err(invalid("pi recovery needs at least 50 questions"));
    }
    if config.per_question_draws < 2 || config.ensemble_size < 2 {
        return Err(invalid(
            "need at least two draws and an ensemble of at least two",
        ));
    }
    if !(config.jitter >= 0.0) {
        return Err(invalid("embedding jitter must be non-negative"));
    }
    config.generator.validate()?;
    let m = config.generator.m;
    let draws = config.per_question_draws;
    let mut warnings = Vec::new();
    if config.generator.is_degenerate() {
        warnings.push(String::from(
            "profile generator has no spread: every question shares one profile",
        ));
    }

    let mut sampler = CategorySampler::new(SamplingPath::Categorical);
    let mut counts = vec![0u32; m];
    let mut pairs = Vec::with_capacity(config.n_questions);
    let mut distances = Vec::with_capacity(config.n_questions);
    let mut variance_questions = 0usize;
    for q in 0..config.n_questions {
        let mut rng = substream(config.seed, &[TAG_PI, q as u64]);
        let variance = rng.random::<f64>() < config.true_pi;
        variance_questions += usize::from(variance);
        let mixture = config.generator.sample(variance, &mut rng)?;
        let source = mixture.source();

        let mut side = |n: usize, target: bool, rng: &mut SimRng| -> Vec<usize> {
            (0..draws)
                .map(|_| {
                    if target {
                        voted_draw(&mixture, n, &mut sampler, &mut counts, rng)
                    } else {
                        voted_draw(source, n, &mut sampler, &mut counts, rng)
                    }
                })
                .collect()
        };
        let single_s = side(1, false, &mut rng);
        let single_t = side(1, true, &mut rng);
        let voted_s = side(config.ensemble_size, false, &mut rng);
        let voted_t = side(config.ensemble_size, true, &mut rng);

        pairs.push((
            CategoryDistribution::from_samples(&voted_s, m)?,
            CategoryDistribution::from_samples(&voted_t, m)?,
        ));

        let mut centroid_distance = |s: &[usize], t: &[usize]| -> Result<f64> {
            let es: Vec<Vec<f64>> = s
                .iter()
                .map(|&c| embed(c, m, config.jitter, &mut rng))
                .collect();
            let et: Vec<Vec<f64>> = t
                .iter()
                .map(|&c| embed(c, m, config.jitter, &mut rng))
                .collect();
            l2_centroid_distance(&es, &et)
        };
        let d1 = centroid_distance(&single_s, &single_t)?;
        let dn = centroid_distance(&voted_s, &voted_t)?;
        distances.push((d1, dn));
    }

    let report = PiRecoveryReport {
        true_pi: config.true_pi,
        realized_pi: variance_questions as f64 / config.n_questions as f64,
        pi_categorical: pi_categorical(&pairs, config.rule)?,
        pi_continuous: pi_continuous(&distances)?,
        n_questions: config.n_questions,
        warnings,
    };
    Ok(report)
}

/// Questions with heterogeneous confidence, binned by source confidence.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConfidenceCurveConfig {
    pub generator: ProfileGenerator,
    /// Probability that a question's target is the variance component.
    pub pi: f64,
    pub n_questions: usize,
    /// Responses per question and language used for the modes and confidence.
    pub draws: usize,
    pub n_bins: usize,
    pub seed: u64,
}

impl ConfidenceCurveConfig {
    pub fn new(pi: f64, seed: u64) -> Self {
        ConfidenceCurveConfig {
            generator: ProfileGenerator::default(),
            pi,
            n_questions: 5000,
            draws: 10,
            n_bins: 5,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ConfidenceCurve {
    pub bins: Vec<ConfidenceBin>,
    /// Rank correlation of bin centre against mean agreement over non-empty bins.
    pub spearman: Option<f64>,
}

impl ConfidenceCurve {
    /// The highest non-empty bin.
    pub fn top_bin(&self) -> Option<&ConfidenceBin> {
        self.bins.iter().rev().find(|b| b.count > 0)
    }
}

pub fn confidence_agreement_curve(config: &ConfidenceCurveConfig) -> Result<ConfidenceCurve> {
    if config.n_bins < 3 {
        return Err(invalid("need at least three confidence bins"));
    }
    if config.draws == 0 || config.n_questions == 0 {
        return Err(Error::EmptyInput("confidence curve questions"));
    }
    if !(0.0..=1.0).contains(&config.pi) {
        return Err(invalid("pi must lie in [0, 1]"));
    }
    config.generator.validate()?;
    let m = config.generator.m;
    let mut sampler = CategorySampler::new(SamplingPath::Categorical);
    let mut counts = vec![0u32; m];
    let mut points = Vec::with_capacity(config.n_questions);
    for q in 0..config.n_questions {
        let mut rng = substream(config.seed, &[TAG_CONFIDENCE, q as u64]);
        let variance = rng.random::<f64>() < config.pi;
        let mixture = config.generator.sample(variance, &mut rng)?;
        let src = voted_draw(
            mixture.source(),
            config.draws,
            &mut sampler,
            &mut counts,
            &mut rng,
        );
        let confidence = counts[src] as f64 / config.draws as f64;
        let tgt = voted_draw(&mixture, config.draws, &mut sampler, &mut counts, &mut rng);
        points.push((confidence, src == tgt));
    }
    let bins = bin_confidence(&points, config.n_bins)?;
    let (centers, means): (Vec<f64>, Vec<f64>) = bins
        .iter()
        .filter_map(|b| b.mean_agreement.map(|a| (b.center(), a)))
        .unzip();
    Ok(ConfidenceCurve {
        spearman: spearman(&centers, &means),
        bins,
    })
}

/// Linear readout of a shared semantic vector plus a language vector through
/// random weights.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MechanismConfig {
    pub semantic: Vec<f64>,
    pub lang_a: Vec<f64>,
    pub lang_b: Vec<f64>,
    pub sigma: f64,
    pub trials: usize,
    pub seed: u64,
    /// Mean of the weights. Defaults to `semantic` with its component along
    /// `lang_a - lang_b` removed.
    pub weight_mean: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct MechanismReport {
    pub source_var: f64,
    pub target_var: f64,
    pub predicted_source_var: f64,
    pub predicted_target_var: f64,
    /// `r_s . (lang_a - lang_b)`; the predicted target variance assumes zero.
    pub shift_alignment: f64,
}

pub const ORTHOGONALITY_TOLERANCE: f64 = 1e-9;

pub fn mechanism_variance_demo(config: &MechanismConfig) -> Result<MechanismReport> {
    let d = config.semantic.len();
    if d == 0 {
        return Err(Error::EmptyInput("semantic vector"));
    }
    for v in [&config.lang_a, &config.lang_b] {
        if v.len() != d {
            return Err(Error::SupportMismatch {
                left: d,
                right: v.len(),
            });
        }
    }
    if !(config.sigma > 0.0) || !config.sigma.is_finite() {
        return Err(invalid("sigma must be positive"));
    }
    if config.trials < 2 {
        return Err(invalid("need at least two trials"));
    }
    let shift: Vec<f64> = config
        .lang_a
        .iter()
        .zip(&config.lang_b)
        .map(|(a, b)| a - b)
        .collect();
    let shift_sq = dot(&shift, &shift);
    let weight_mean = match &config.weight_mean {
        Some(w) => {
            if w.len() != d {
                return Err(Error::SupportMismatch {
                    left: d,
                    right: w.len(),
                });
            }
            w.clone()
        }
        None if shift_sq > 0.0 => {
            let c = dot(&config.semantic, &shift) / shift_sq;
            config
                .semantic
                .iter()
                .zip(&shift)
                .map(|(s, l)| s - c * l)
                .collect()
        }
        None => config.semantic.clone(),
    };
    let residual = dot(&weight_mean, &shift);
    if libm::fabs(residual) > ORTHOGONALITY_TOLERANCE {
        return Err(Error::NotOrthogonal { dot: residual });
    }

    let r_s: Vec<f64> = config
        .semantic
        .iter()
        .zip(&config.lang_a)
        .map(|(s, l)| s + l)
        .collect();
    let r_t: Vec<f64> = config
        .semantic
        .iter()
        .zip(&config.lang_b)
        .map(|(s, l)| s + l)
        .collect();
    let mut rng = substream(config.seed, &[TAG_MECHANISM]);
    let mut w = vec![0.0; d];
    let mut src = Welford::default();
    let mut tgt = Welford::default();
    for _ in 0..config.trials {
        for (wi, mi) in w.iter_mut().zip(&weight_mean) {
            *wi = mi + config.sigma * standard_normal(&mut rng);
        }
        src.push(dot(&w, &r_s));
        tgt.push(dot(&w, &r_t));
    }
    let s2 = config.sigma * config.sigma;
    Ok(MechanismReport {
        source_var: src.variance(),
        target_var: tgt.variance(),
        predicted_source_var: s2 * dot(&r_s, &r_s),
        predicted_target_var: s2 * dot(&r_s, &r_s) + s2 * shift_sq,
        shift_alignment: dot(&r_s, &shift),
    })
}

#[derive(Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn variance(&self) -> f64 {
        self.m2 / (self.n - 1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(mixture: TargetMixture, n_max: usize, trials: usize) -> SimConfig {
        SimConfig::new(mixture, n_max, trials, 11).unwrap()
    }

    #[test]
    fn config_contract() {
        let src = LogitProfile::new(vec![1.0, 0.0], 1.0).unwrap();
        let mix = TargetMixture::variance_only(src, 1.0, 1.0).unwrap();
        assert!(SimConfig::new(mix.clone(), 0, 1000, 0).is_err());
        assert!(SimConfig::new(mix.clone(), 1, 99, 0).is_err());
        let c = config(mix, 3, 100);
        assert!(estimate_agreement(&c, 0).is_err());
        assert!(estimate_agreement(&c, 4).is_err());
    }

    #[test]
    fn near_deterministic_agreement() {
        let src = LogitProfile::new(vec![10.0, 0.0], 0.0).unwrap();
        let c = config(
            TargetMixture::variance_only(src, 1.0, 1.0).unwrap(),
            5,
            20_000,
        );
        for n in [1, 5] {
            let e = estimate_agreement(&c, n).unwrap();
            assert!(e.point > 0.999, "{e:?}");
        }
    }

    #[test]
    fn uniform_collision_probability() {
        let src = LogitProfile::new(vec![0.0; 4], 0.0).unwrap();
        let c = config(
            TargetMixture::variance_only(src, 1.0, 1.0).unwrap(),
            1,
            100_000,
        );
        let e = estimate_agreement(&c, 1).unwrap();
        assert!((e.point - 0.25).abs() < 3.0 * e.stderr + 1e-3, "{e:?}");
    }

    #[test]
    fn diagnostics_report_variance_share() {
        let src = LogitProfile::new(vec![2.0, 0.0, -1.0], 1.0).unwrap();
        let mix = TargetMixture::new(src, 0.3, 2.0, 2.0, vec![0.0, 2.0, 0.0], 1.0).unwrap();
        let c = config(mix, 1, 50_000).with_diagnostics(true);
        let share = estimate_agreement(&c, 1).unwrap().variance_share.unwrap();
        assert!((share - 0.3).abs() < 0.01, "{share}");
    }

    #[test]
    fn mode_probability_closed_form() {
        let src = LogitProfile::new(vec![10.0, 0.0], 0.0).unwrap();
        let e = estimate_mode_probability(&src, 100_000, 1, SamplingPath::Categorical).unwrap();
        assert_eq!(e.mode, 0);
        let expected = 1.0 / (1.0 + libm::exp(-10.0));
        assert!((e.probability - expected).abs() < 3.0 * e.stderr + 1e-4);
        assert!(estimate_mode_probability(&src, 10, 1, SamplingPath::Categorical).is_err());
    }

    #[test]
    fn single_point_curve_matches_agreement() {
        let src = LogitProfile::new(vec![1.0, 0.0, 0.5], 1.0).unwrap();
        let c = config(
            TargetMixture::variance_only(src, 2.0, 2.0).unwrap(),
            1,
            5000,
        );
        let curve = sweep_ensemble(&c).unwrap();
        let e = estimate_agreement(&c, 1).unwrap();
        assert_eq!(curve.points.len(), 1);
        assert_eq!(curve.points[0].value, e.point);
    }

    #[test]
    fn distance_metrics_have_errors_attached() {
        let src = LogitProfile::new(vec![1.0, 0.0, 0.5], 1.0).unwrap();
        let base = config(
            TargetMixture::variance_only(src, 2.0, 2.0).unwrap(),
            3,
            2000,
        );
        for metric in [
            CurveMetric::ChiSquared,
            CurveMetric::L2Centroid,
            CurveMetric::Mae,
        ] {
            let curve = sweep_ensemble(&base.clone().with_metric(metric)).unwrap();
            assert_eq!(curve.metric, metric);
            assert_eq!(curve.points.len(), 3);
            assert!(curve
                .points
                .iter()
                .all(|p| p.value >= 0.0 && p.stderr > 0.0));
        }
    }

    #[test]
    fn generator_respects_components() {
        let g = ProfileGenerator::default();
        let mut rng = substream(5, &[0]);
        for _ in 0..100 {
            let v = g.sample(true, &mut rng).unwrap();
            assert_eq!(v.pi(), 1.0);
            let b = g.sample(false, &mut rng).unwrap();
            assert_eq!(b.pi(), 0.0);
            assert_ne!(crate::math::argmax(b.bias_mu()), Some(b.source().mode()));
        }
    }

    #[test]
    fn pi_recovery_warns_on_degenerate_generator() {
        let mut c = PiRecoveryConfig::new(1.0, 3);
        c.n_questions = 50;
        c.per_question_draws = 20;
        c.generator = ProfileGenerator {
            gap: (3.0, 3.0),
            sigma: (1.0, 1.0),
            permute: false,
            ..ProfileGenerator::default()
        };
        let r = pi_recovery_experiment(&c).unwrap();
        assert_eq!(r.warnings.len(), 1);
        c.n_questions = 49;
        assert!(pi_recovery_experiment(&c).is_err());
    }

    #[test]
    fn deterministic_questions_fill_top_bin() {
        let mut c = ConfidenceCurveConfig::new(1.0, 2);
        c.n_questions = 200;
        c.generator = ProfileGenerator {
            gap: (30.0, 30.0),
            sigma: (0.0, 0.0),
            tau: 1.0,
            eta: 1.0,
            ..ProfileGenerator::default()
        };
        let curve = confidence_agreement_curve(&c).unwrap();
        let filled: Vec<&ConfidenceBin> = curve.bins.iter().filter(|b| b.count > 0).collect();
        assert_eq!(filled.len(), 1);
        assert_eq!(filled[0].upper, 1.0);
        assert_eq!(filled[0].mean_agreement, Some(1.0));
        c.n_bins = 2;
        assert!(confidence_agreement_curve(&c).is_err());
    }

    #[test]
    fn mechanism_predictions_and_checks() {
        let mut c = MechanismConfig {
            semantic: vec![1.0, 0.0],
            lang_a: vec![0.0, 0.0],
            lang_b: vec![0.0, 1.0],
            sigma: 1.0,
            trials: 1000,
            seed: 0,
            weight_mean: None,
        };
        let r = mechanism_variance_demo(&c).unwrap();
        assert_eq!(r.predicted_source_var, 1.0);
        assert_eq!(r.predicted_target_var, 2.0);

        c.lang_b = c.lang_a.clone();
        let r = mechanism_variance_demo(&c).unwrap();
        assert_eq!(r.predicted_target_var, r.predicted_source_var);
        assert_eq!(r.source_var, r.target_var);

        c.lang_b = vec![0.0, 1.0];
        c.weight_mean = Some(vec![0.0, 1.0]);
        assert!(matches!(
            mechanism_variance_demo(&c),
            Err(Error::NotOrthogonal { .. })
        ));
    }
}
