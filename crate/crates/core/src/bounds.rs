//! Closed-form bounds on source–target agreement and on mode probability.
//!
//! Every bound replaces the Gumbel noise of the Gumbel-max sampler by a
//! Gaussian surrogate of fixed variance and then reduces the argmax to pairwise
//! normal-CDF comparisons. The derivations do not agree on that variance: the
//! knowledge-barrier upper bound and the mode lower bounds use 2, the agreement
//! bounds under the variance component use 1. [`SurrogateVariance`] carries the
//! three constants separately and defaults to those values.

use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::math::{argmax, normal_cdf, top_two};
use crate::model::LogitProfile;

/// Variance of the Gaussian stand-in for Gumbel(0, 1) noise, per bound family.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SurrogateVariance {
    /// Knowledge-barrier (bias component) agreement upper bound.
    pub prop1: f64,
    /// Variance-component agreement bounds.
    pub prop2: f64,
    /// Mode-probability lower bounds.
    pub prop3: f64,
}

impl Default for SurrogateVariance {
    fn default() -> Self {
        SurrogateVariance {
            prop1: 2.0,
            prop2: 1.0,
            prop3: 2.0,
        }
    }
}

impl SurrogateVariance {
    /// Same variance for every bound, for sensitivity runs.
    pub fn uniform(v: f64) -> Result<Self> {
        let s = SurrogateVariance {
            prop1: v,
            prop2: v,
            prop3: v,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        for v in [self.prop1, self.prop2, self.prop3] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid("gumbel surrogate variance must be finite and > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BoundKind {
    Prop1Upper,
    Prop2Upper,
    Prop2Lower,
    Prop3SourceLower,
    Prop3TargetLower,
}

impl BoundKind {
    pub const ALL: [BoundKind; 5] = [
        BoundKind::Prop1Upper,
        BoundKind::Prop2Upper,
        BoundKind::Prop2Lower,
        BoundKind::Prop3SourceLower,
        BoundKind::Prop3TargetLower,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BoundKind::Prop1Upper => "prop1_upper",
            BoundKind::Prop2Upper => "prop2_upper",
            BoundKind::Prop2Lower => "prop2_lower",
            BoundKind::Prop3SourceLower => "prop3_source_lower",
            BoundKind::Prop3TargetLower => "prop3_target_lower",
        }
    }
}

impl core::fmt::Display for BoundKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Upper bound that may have been clamped to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClampedBound {
    pub value: f64,
    pub raw: f64,
    pub clamped: bool,
}

// gap / (tau * sqrt(2 (sigma^2 + c)))
#[inline]
fn z_score(gap: f64, sigma_sq: f64, surrogate: f64, tau: f64) -> f64 {
    gap / (tau * libm::sqrt(2.0 * (sigma_sq + surrogate)))
}

fn check_flattening(tau: f64, eta: f64) -> Result<()> {
    if !(tau >= 1.0) || !(eta >= 1.0) || !tau.is_finite() || !eta.is_finite() {
        return Err(invalid("bounds need finite tau >= 1 and eta >= 1"));
    }
    Ok(())
}

fn powi(x: f64, n: usize) -> f64 {
    libm::pow(x, n as f64)
}

/// Upper bound on `Pr(y_s = y_t)` when the target is the bias component:
/// `p1 (1 - p2) + p2 (1 - p1)` with `p1`, `p2` the surrogate probabilities of
/// each side's top category beating its runner-up.
pub fn prop1_upper(source: &LogitProfile, bias_mu: &[f64], bias_sigma: f64) -> Result<f64> {
    prop1_upper_with(
        source,
        bias_mu,
        bias_sigma,
        SurrogateVariance::default().prop1,
    )
}

pub fn prop1_upper_with(
    source: &LogitProfile,
    bias_mu: &[f64],
    bias_sigma: f64,
    surrogate: f64,
) -> Result<f64> {
    let bias = LogitProfile::new(bias_mu.to_vec(), bias_sigma)?;
    if bias.m() != source.m() {
        return Err(Error::SupportMismatch {
            left: source.m(),
            right: bias.m(),
        });
    }
    if argmax(bias_mu) == Some(source.mode()) {
        return Err(Error::SharedMode {
            mode: source.mode(),
        });
    }
    SurrogateVariance::uniform(surrogate)?;
    let s = source.sigma();
    let p1 = normal_cdf(z_score(source.top_gap(), s * s, surrogate, 1.0));
    let p2 = normal_cdf(z_score(
        bias.top_gap(),
        bias_sigma * bias_sigma,
        surrogate,
        1.0,
    ));
    Ok(p1 * (1.0 - p2) + p2 * (1.0 - p1))
}

/// Upper bound on `Pr(y_s = y_t)` under the variance component, clamped to 1.
///
/// Uses the spread `max(mu) - min(mu)`: `m Phi(a)^(m-1) Phi(b)^(m-1)`.
pub fn prop2_upper(source: &LogitProfile, tau: f64, eta: f64) -> Result<ClampedBound> {
    prop2_upper_with(source, tau, eta, SurrogateVariance::default().prop2)
}

pub fn prop2_upper_with(
    source: &LogitProfile,
    tau: f64,
    eta: f64,
    surrogate: f64,
) -> Result<ClampedBound> {
    check_flattening(tau, eta)?;
    SurrogateVariance::uniform(surrogate)?;
    let m = source.m();
    let spread = source.mu0() - source.mu_min();
    let s2 = source.sigma() * source.sigma();
    let a = normal_cdf(z_score(spread, s2, surrogate, 1.0));
    let b = normal_cdf(z_score(spread, eta * s2, surrogate, tau));
    let raw = m as f64 * powi(a, m - 1) * powi(b, m - 1);
    Ok(ClampedBound {
        value: raw.min(1.0),
        raw,
        clamped: raw > 1.0,
    })
}

/// Lower bound on `Pr(y_s = y_t)` under the variance component, keeping only
/// the term for the source mode.
pub fn prop2_lower(source: &LogitProfile, tau: f64, eta: f64) -> Result<f64> {
    prop2_lower_with(source, tau, eta, SurrogateVariance::default().prop2)
}

pub fn prop2_lower_with(source: &LogitProfile, tau: f64, eta: f64, surrogate: f64) -> Result<f64> {
    check_flattening(tau, eta)?;
    SurrogateVariance::uniform(surrogate)?;
    let m = source.m();
    let gap = source.top_gap();
    let s2 = source.sigma() * source.sigma();
    let a = normal_cdf(z_score(gap, s2, surrogate, 1.0));
    let b = normal_cdf(z_score(gap, eta * s2, surrogate, tau));
    Ok(powi(a, m - 1) * powi(b, m - 1))
}

/// Lower bounds on the probability of the modal response, `(source, target)`,
/// the target taken from the variance component.
pub fn prop3_mode_lower(source: &LogitProfile, tau: f64, eta: f64) -> Result<(f64, f64)> {
    prop3_mode_lower_with(source, tau, eta, SurrogateVariance::default().prop3)
}

pub fn prop3_mode_lower_with(
    source: &LogitProfile,
    tau: f64,
    eta: f64,
    surrogate: f64,
) -> Result<(f64, f64)> {
    check_flattening(tau, eta)?;
    SurrogateVariance::uniform(surrogate)?;
    let m = source.m();
    let gap = source.top_gap();
    let s2 = source.sigma() * source.sigma();
    let src = powi(normal_cdf(z_score(gap, s2, surrogate, 1.0)), m - 1);
    let tgt = powi(normal_cdf(z_score(gap, eta * s2, surrogate, tau)), m - 1);
    Ok((src, tgt))
}

/// Parameters a bound was evaluated at.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundParams {
    pub m: usize,
    pub mu0: f64,
    pub mu1: f64,
    pub mu_min: f64,
    pub sigma_s: f64,
    pub tau: f64,
    pub eta: f64,
    pub bias_mu0: Option<f64>,
    pub bias_mu1: Option<f64>,
    pub bias_sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundReport {
    pub params: BoundParams,
    pub bound_kind: BoundKind,
    pub value: f64,
    pub clamped: bool,
}

/// All bounds defined at one parameter point. The knowledge-barrier bound is
/// included only when `bias` is given and its mode differs from the source's.
pub fn bound_reports(
    source: &LogitProfile,
    tau: f64,
    eta: f64,
    bias: Option<(&[f64], f64)>,
    surrogate: &SurrogateVariance,
) -> Result<Vec<BoundReport>> {
    surrogate.validate()?;
    let (bias_mu0, bias_mu1) = match bias {
        Some((mu, _)) => {
            let (a, b) = top_two(mu);
            (Some(a), Some(b))
        }
        None => (None, None),
    };
    let params = BoundParams {
        m: source.m(),
        mu0: source.mu0(),
        mu1: source.mu1(),
        mu_min: source.mu_min(),
        sigma_s: source.sigma(),
        tau,
        eta,
        bias_mu0,
        bias_mu1,
        bias_sigma: bias.map(|(_, s)| s),
    };
    let report = |kind, value, clamped| BoundReport {
        params: params.clone(),
        bound_kind: kind,
        value,
        clamped,
    };
    let mut out = Vec::with_capacity(5);
    if let Some((mu, sigma)) = bias {
        match prop1_upper_with(source, mu, sigma, surrogate.prop1) {
            Ok(v) => out.push(report(BoundKind::Prop1Upper, v, false)),
            Err(Error::SharedMode { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    let upper = prop2_upper_with(source, tau, eta, surrogate.prop2)?;
    out.push(report(BoundKind::Prop2Upper, upper.value, upper.clamped));
    let lower = prop2_lower_with(source, tau, eta, surrogate.prop2)?;
    out.push(report(BoundKind::Prop2Lower, lower, false));
    let (src, tgt) = prop3_mode_lower_with(source, tau, eta, surrogate.prop3)?;
    out.push(report(BoundKind::Prop3SourceLower, src, false));
    out.push(report(BoundKind::Prop3TargetLower, tgt, false));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_abs_diff_eq;

    fn profile(mu: &[f64], sigma: f64) -> LogitProfile {
        LogitProfile::new(mu.to_vec(), sigma).unwrap()
    }

    #[test]
    fn prop1_tied_tops_give_one_half() {
        let src = profile(&[1.0, 1.0, 0.0], 1.0);
        // bias mode at index 1 (first max), source mode at 0
        let v = prop1_upper(&src, &[0.0, 2.0, 2.0], 0.7).unwrap();
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn prop1_vanishes_in_the_deterministic_limit() {
        let src = profile(&[30.0, 0.0], 0.0);
        let v = prop1_upper_with(&src, &[0.0, 30.0], 0.0, 1e-6).unwrap();
        assert!(v < 1e-12, "{v}");
    }

    #[test]
    fn prop1_rejects_shared_mode() {
        let src = profile(&[2.0, 0.0], 1.0);
        assert_eq!(
            prop1_upper(&src, &[3.0, 1.0], 1.0),
            Err(Error::SharedMode { mode: 0 })
        );
        assert!(prop1_upper(&src, &[0.0, 1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn prop2_symmetric_case() {
        let src = profile(&[0.0, 0.0], 1.3);
        let up = prop2_upper(&src, 2.0, 3.0).unwrap();
        assert_abs_diff_eq!(up.value, 0.5, epsilon = 1e-15);
        assert!(!up.clamped);
        assert_abs_diff_eq!(prop2_lower(&src, 2.0, 3.0).unwrap(), 0.25, epsilon = 1e-15);

        let src5 = profile(&[0.0; 5], 1.0);
        let raw = prop2_upper(&src5, 1.0, 1.0).unwrap().raw;
        assert_abs_diff_eq!(raw, 5.0 * 0.5f64.powi(8), epsilon = 1e-15);
    }

    #[test]
    fn prop2_upper_clamps_in_the_deterministic_limit() {
        let src = profile(&[3.0, 0.0, -1.0], 0.0);
        let up = prop2_upper_with(&src, 1.0, 1.0, 1e-4).unwrap();
        assert!(up.clamped);
        assert_eq!(up.value, 1.0);
        assert!((up.raw - 3.0).abs() < 1e-9);
        let low = prop2_lower_with(&src, 1.0, 1.0, 1e-4).unwrap();
        assert!(low > 1.0 - 1e-12);
    }

    #[test]
    fn prop2_rejects_bad_flattening() {
        let src = profile(&[1.0, 0.0], 1.0);
        assert!(prop2_upper(&src, 0.5, 1.0).is_err());
        assert!(prop2_lower(&src, 1.0, 0.9).is_err());
        assert!(prop3_mode_lower(&src, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn prop3_coincides_without_flattening() {
        let src = profile(&[1.0, 1.0], 0.4);
        assert_eq!(prop3_mode_lower(&src, 3.0, 2.0).unwrap(), (0.5, 0.5));
        let src = profile(&[2.5, 0.0, -1.0, -2.0], 1.2);
        let (a, b) = prop3_mode_lower(&src, 1.0, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reports_cover_every_kind_and_skip_shared_modes() {
        let src = profile(&[2.0, 0.0, -1.0], 1.0);
        let bias = vec![-1.0, 2.0, 0.0];
        let rows = bound_reports(
            &src,
            2.0,
            2.0,
            Some((&bias, 1.0)),
            &SurrogateVariance::default(),
        )
        .unwrap();
        let kinds: Vec<_> = rows.iter().map(|r| r.bound_kind).collect();
        assert_eq!(kinds, BoundKind::ALL.to_vec());
        let shared = vec![2.0, 0.0, -1.0];
        let rows = bound_reports(
            &src,
            2.0,
            2.0,
            Some((&shared, 1.0)),
            &SurrogateVariance::default(),
        )
        .unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.value)));
    }

    #[test]
    fn surrogate_override_must_be_positive() {
        assert!(SurrogateVariance::uniform(0.0).is_err());
        assert!(SurrogateVariance::uniform(1.5).is_ok());
    }
}
