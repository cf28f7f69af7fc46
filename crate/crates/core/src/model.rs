//! The generative response model.
//!
//! Responses live in a normalised categorical space `[0, m)`. A [`LogitProfile`]
//! is the source-language latent; a [`TargetMixture`] layers the target-language
//! latent over it.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::math::{argmax, softmax_into, top_two};
use crate::rng::{gumbel, standard_normal};

/// Logit mean vector and isotropic logit noise for one question.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct LogitProfile {
    mu: Vec<f64>,
    sigma: f64,
}

impl LogitProfile {
    /// Requires at least two finite means and a finite `sigma >= 0`.
    pub fn new(mu: Vec<f64>, sigma: f64) -> Result<Self> {
        validate_logits(&mu, sigma)?;
        Ok(LogitProfile { mu, sigma })
    }

    /// `[gap, 0, -step, -2 step, ...]`: a top gap of `gap` over the runner-up,
    /// with the remaining categories spaced `step` apart below it.
    pub fn with_top_gap(m: usize, gap: f64, step: f64, sigma: f64) -> Result<Self> {
        if m < 2 {
            return Err(invalid("response space needs m >= 2"));
        }
        if !(gap >= 0.0) || !(step >= 0.0) {
            return Err(invalid("gap and step must be non-negative"));
        }
        let mut mu = Vec::with_capacity(m);
        mu.push(gap);
        mu.extend((0..m - 1).map(|k| -(k as f64) * step));
        Self::new(mu, sigma)
    }

    pub fn m(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Largest mean.
    pub fn mu0(&self) -> f64 {
        top_two(&self.mu).0
    }

    /// Second-largest mean (equal to `mu0` on a tie).
    pub fn mu1(&self) -> f64 {
        top_two(&self.mu).1
    }

    pub fn mu_min(&self) -> f64 {
        self.mu.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `mu0 - mu1`, zero on ties.
    pub fn top_gap(&self) -> f64 {
        let (a, b) = top_two(&self.mu);
        a - b
    }

    /// Modal category of the mean vector, smallest index on ties.
    pub fn mode(&self) -> usize {
        argmax(&self.mu).unwrap_or(0)
    }

    /// Profile with means divided by `tau` and variance multiplied by `eta`.
    pub fn flattened(&self, tau: f64, eta: f64) -> Result<Self> {
        if !(tau >= 1.0) || !(eta >= 1.0) || !tau.is_finite() || !eta.is_finite() {
            return Err(invalid("flattening needs finite tau >= 1 and eta >= 1"));
        }
        Ok(LogitProfile {
            mu: self.mu.iter().map(|m| m / tau).collect(),
            sigma: libm::sqrt(eta) * self.sigma,
        })
    }

    /// Adds `c` to every mean.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        Self::new(self.mu.iter().map(|m| m + c).collect(), self.sigma)
    }
}

fn validate_logits(mu: &[f64], sigma: f64) -> Result<()> {
    if mu.len() < 2 {
        return Err(invalid("response space needs m >= 2"));
    }
    if mu.iter().any(|x| !x.is_finite()) {
        return Err(invalid("logit means must be finite"));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(invalid("logit sigma must be finite and >= 0"));
    }
    Ok(())
}

/// Target-language latent: a Bernoulli(`pi`) mixture of the flattened source
/// (variance component) and an unrelated bias component.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct TargetMixture {
    source: LogitProfile,
    pi: f64,
    tau: f64,
    eta: f64,
    bias_mu: Vec<f64>,
    bias_sigma: f64,
    #[cfg_attr(feature = "serde", serde(skip))]
    variance: Option<LogitProfile>,
}

impl TargetMixture {
    /// General mixture; the bias mode is not checked against the source mode.
    pub fn new(
        source: LogitProfile,
        pi: f64,
        tau: f64,
        eta: f64,
        bias_mu: Vec<f64>,
        bias_sigma: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&pi) {
            return Err(invalid("mixing coefficient pi must lie in [0, 1]"));
        }
        if bias_mu.len() != source.m() {
            return Err(Error::SupportMismatch {
                left: source.m(),
                right: bias_mu.len(),
            });
        }
        validate_logits(&bias_mu, bias_sigma)?;
        let variance = source.flattened(tau, eta)?;
        Ok(TargetMixture {
            source,
            pi,
            tau,
            eta,
            bias_mu,
            bias_sigma,
            variance: Some(variance),
        })
    }

    /// Mixture whose bias component encodes a knowledge barrier: the bias mode
    /// must differ from the source mode.
    pub fn knowledge_barrier(
        source: LogitProfile,
        pi: f64,
        tau: f64,
        eta: f64,
        bias_mu: Vec<f64>,
        bias_sigma: f64,
    ) -> Result<Self> {
        let mode = source.mode();
        if bias_mu.len() == source.m() && argmax(&bias_mu) == Some(mode) {
            return Err(Error::SharedMode { mode });
        }
        Self::new(source, pi, tau, eta, bias_mu, bias_sigma)
    }

    /// Pure variance component (`pi = 1`). The bias slot mirrors the source and
    /// is never sampled.
    pub fn variance_only(source: LogitProfile, tau: f64, eta: f64) -> Result<Self> {
        let bias_mu = source.mu.clone();
        let bias_sigma = source.sigma;
        Self::new(source, 1.0, tau, eta, bias_mu, bias_sigma)
    }

    /// Pure bias component (`pi = 0`) with the source means cyclically shifted
    /// one category to the right, so the bias mode sits next to the source mode.
    pub fn rotated_bias(source: LogitProfile, bias_sigma: f64) -> Result<Self> {
        let mut bias_mu = source.mu.clone();
        bias_mu.rotate_right(1);
        Self::knowledge_barrier(source, 0.0, 1.0, 1.0, bias_mu, bias_sigma)
    }

    pub fn source(&self) -> &LogitProfile {
        &self.source
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn bias_mu(&self) -> &[f64] {
        &self.bias_mu
    }

    pub fn bias_sigma(&self) -> f64 {
        self.bias_sigma
    }

    pub fn m(&self) -> usize {
        self.source.m()
    }

    /// `N(mu_s / tau, eta sigma_s^2 I)`.
    pub fn variance_component(&self) -> LogitProfile {
        match &self.variance {
            Some(v) => v.clone(),
            None => self
                .source
                .flattened(self.tau, self.eta)
                .expect("validated at construction"),
        }
    }

    /// `N(mu_b, sigma_b^2 I)`.
    pub fn bias_component(&self) -> LogitProfile {
        LogitProfile {
            mu: self.bias_mu.clone(),
            sigma: self.bias_sigma,
        }
    }
}

/// One sampled response.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseDraw {
    pub category: usize,
    /// Mixture indicator, only for target draws (`true` = variance component).
    pub kappa: Option<bool>,
    /// Realised logits, kept only when diagnostics are requested.
    pub logits: Option<Vec<f64>>,
}

/// How a category is drawn from realised logits `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SamplingPath {
    /// `Categorical(softmax(z))` by inverse CDF.
    #[default]
    Categorical,
    /// `argmax(z + g)` with `g` i.i.d. Gumbel(0, 1).
    GumbelMax,
}

/// Scratch-buffer sampler for hot loops. Both paths draw the Gaussian logit
/// noise identically; they differ only in how the category is then chosen.
#[derive(Debug, Clone)]
pub struct CategorySampler {
    path: SamplingPath,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

impl CategorySampler {
    pub fn new(path: SamplingPath) -> Self {
        CategorySampler {
            path,
            logits: Vec::new(),
            probs: Vec::new(),
        }
    }

    pub fn path(&self) -> SamplingPath {
        self.path
    }

    /// Draws a category from `N(mu, sigma^2 I)` logits.
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&mut self, mu: &[f64], sigma: f64, rng: &mut R) -> usize {
        let m = mu.len();
        self.logits.resize(m, 0.0);
        for (z, &mean) in self.logits.iter_mut().zip(mu) {
            *z = if sigma > 0.0 {
                mean + sigma * standard_normal(rng)
            } else {
                mean
            };
        }
        match self.path {
            SamplingPath::Categorical => {
                self.probs.resize(m, 0.0);
                softmax_into(&self.logits, &mut self.probs);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut last_positive = 0;
                for (k, &p) in self.probs.iter().enumerate() {
                    if p > 0.0 {
                        last_positive = k;
                    }
                    acc += p;
                    if u < acc {
                        return k;
                    }
                }
                // rounding left u above the accumulated mass
                last_positive
            }
            SamplingPath::GumbelMax => {
                let mut best = 0;
                let mut best_score = f64::NEG_INFINITY;
                for (k, &z) in self.logits.iter().enumerate() {
                    let score = z + gumbel(rng);
                    if score > best_score {
                        best = k;
                        best_score = score;
                    }
                }
                best
            }
        }
    }

    /// Draws from a source profile.
    #[inline]
    pub fn draw_source<R: Rng + ?Sized>(&mut self, profile: &LogitProfile, rng: &mut R) -> usize {
        self.draw(&profile.mu, profile.sigma, rng)
    }

    /// Draws from a target mixture, returning `(category, kappa)`.
    #[inline]
    pub fn draw_target<R: Rng + ?Sized>(
        &mut self,
        mixture: &TargetMixture,
        rng: &mut R,
    ) -> (usize, bool) {
        let kappa = rng.random::<f64>() < mixture.pi;
        let category = if kappa {
            match &mixture.variance {
                Some(v) => self.draw(&v.mu, v.sigma, rng),
                None => {
                    let v = mixture.variance_component();
                    self.draw(&v.mu, v.sigma, rng)
                }
            }
        } else {
            self.draw(&mixture.bias_mu, mixture.bias_sigma, rng)
        };
        (category, kappa)
    }

    /// Logits `z` realised by the most recent draw (Gumbel noise excluded).
    pub fn last_logits(&self) -> Vec<f64> {
        self.logits.clone()
    }
}

/// Anything responses can be drawn from.
pub trait ResponseModel {
    fn categories(&self) -> usize;
    fn draw_category<R: Rng + ?Sized>(&self, sampler: &mut CategorySampler, rng: &mut R) -> usize;
}

impl ResponseModel for LogitProfile {
    fn categories(&self) -> usize {
        self.m()
    }

    #[inline]
    fn draw_category<R: Rng + ?Sized>(&self, sampler: &mut CategorySampler, rng: &mut R) -> usize {
        sampler.draw_source(self, rng)
    }
}

impl ResponseModel for TargetMixture {
    fn categories(&self) -> usize {
        self.m()
    }

    #[inline]
    fn draw_category<R: Rng + ?Sized>(&self, sampler: &mut CategorySampler, rng: &mut R) -> usize {
        sampler.draw_target(self, rng).0
    }
}

/// Source draw via the categorical path.
pub fn sample_source<R: Rng + ?Sized>(profile: &LogitProfile, rng: &mut R) -> ResponseDraw {
    sample_source_with(profile, rng, SamplingPath::Categorical, false)
}

pub fn sample_source_with<R: Rng + ?Sized>(
    profile: &LogitProfile,
    rng: &mut R,
    path: SamplingPath,
    keep_logits: bool,
) -> ResponseDraw {
    let mut sampler = CategorySampler::new(path);
    let category = sampler.draw_source(profile, rng);
    ResponseDraw {
        category,
        kappa: None,
        logits: keep_logits.then(|| sampler.last_logits()),
    }
}

/// Target draw via the categorical path.
pub fn sample_target<R: Rng + ?Sized>(mixture: &TargetMixture, rng: &mut R) -> ResponseDraw {
    sample_target_with(mixture, rng, SamplingPath::Categorical, false)
}

pub fn sample_target_with<R: Rng + ?Sized>(
    mixture: &TargetMixture,
    rng: &mut R,
    path: SamplingPath,
    keep_logits: bool,
) -> ResponseDraw {
    let mut sampler = CategorySampler::new(path);
    let (category, kappa) = sampler.draw_target(mixture, rng);
    ResponseDraw {
        category,
        kappa: Some(kappa),
        logits: keep_logits.then(|| sampler.last_logits()),
    }
}
