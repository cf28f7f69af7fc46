//! Experiment specifications, shipped presets and their parallel execution.
//!
//! A spec is a TOML document with an `[experiment]` table whose `kind` picks
//! one of [`Experiment`]'s variants. Presets are the files under `presets/`,
//! compiled into the binary.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use xgap_core::bounds::{
    prop1_upper_with, prop2_lower_with, prop2_upper_with, prop3_mode_lower_with, SurrogateVariance,
};
use xgap_core::model::{LogitProfile, SamplingPath, TargetMixture};
use xgap_core::simulate::{
    confidence_agreement_curve, curve_point, derive_seed, estimate_mode_probability,
    mechanism_variance_demo, sweep_questions, ConfidenceCurveConfig, CurveMetric, MechanismConfig,
    ProfileGenerator, SimConfig, DEFAULT_TRIALS,
};

use crate::output::Table;
use crate::CliError;

const PRESETS: &[(&str, &str)] = &[
    ("prop2-grid", include_str!("../presets/prop2-grid.toml")),
    ("prop1-grid", include_str!("../presets/prop1-grid.toml")),
    ("fig3a-analog", include_str!("../presets/fig3a-analog.toml")),
    ("fig3b-analog", include_str!("../presets/fig3b-analog.toml")),
    ("fig4-analog", include_str!("../presets/fig4-analog.toml")),
    ("mechanism", include_str!("../presets/mechanism.toml")),
    ("smoke", include_str!("../presets/smoke.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(name, _)| *name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spec {
    #[serde(default)]
    pub description: String,
    /// Used when no seed is passed on the command line.
    #[serde(default)]
    pub seed: u64,
    pub experiment: Experiment,
}

impl Spec {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn preset(name: &str) -> Result<Self, CliError> {
        let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
            let known: Vec<&str> = preset_names().collect();
            CliError::Usage(format!(
                "unknown preset {name:?} (known: {})",
                known.join(", ")
            ))
        })?;
        Self::parse(text)
    }

    /// Replaces the Monte Carlo budget of experiments that have one.
    pub fn override_trials(&mut self, trials: usize) {
        match &mut self.experiment {
            Experiment::Grid(g) => g.trials = trials,
            Experiment::Questions(q) => q.trials = trials,
            Experiment::Mechanism(m) => m.trials = trials,
            Experiment::Confidence(_) => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    /// Full factorial grid of single-question parameter points.
    Grid(GridSpec),
    /// One curve averaged over generated questions.
    Questions(QuestionsSpec),
    /// Source confidence against agreement, one curve per mixing coefficient.
    Confidence(ConfidenceSpec),
    /// Linear readout variances for a list of vector configurations.
    Mechanism(MechanismSpec),
}

fn default_pi() -> Vec<f64> {
    vec![1.0]
}
fn default_step() -> f64 {
    1.0
}
fn default_n_max() -> usize {
    10
}
fn default_trials() -> usize {
    DEFAULT_TRIALS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub m: Vec<usize>,
    pub gap: Vec<f64>,
    pub sigma: Vec<f64>,
    pub tau: Vec<f64>,
    /// Omitted means `eta = tau` cell by cell.
    #[serde(default)]
    pub eta: Option<Vec<f64>>,
    #[serde(default = "default_pi")]
    pub pi: Vec<f64>,
    /// Spacing of the categories below the runner-up.
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    /// Ensemble sizes to evaluate; omitted means every size up to `n_max`.
    #[serde(default)]
    pub ensemble_sizes: Option<Vec<usize>>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub metric: CurveMetric,
    #[serde(default)]
    pub path: SamplingPath,
    /// Also estimate single-draw modal frequencies.
    #[serde(default)]
    pub modes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionsSpec {
    #[serde(default)]
    pub generator: ProfileGenerator,
    #[serde(default = "default_pi_scalar")]
    pub pi: f64,
    pub n_questions: usize,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub metric: CurveMetric,
    #[serde(default)]
    pub path: SamplingPath,
}

fn default_pi_scalar() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidenceSpec {
    #[serde(default)]
    pub generator: ProfileGenerator,
    #[serde(default = "default_pi")]
    pub pi: Vec<f64>,
    pub n_questions: usize,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_bins")]
    pub n_bins: usize,
}

fn default_draws() -> usize {
    10
}
fn default_bins() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismCase {
    pub semantic: Vec<f64>,
    pub lang_a: Vec<f64>,
    pub lang_b: Vec<f64>,
    pub sigma: f64,
    #[serde(default)]
    pub weight_mean: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismSpec {
    pub cases: Vec<MechanismCase>,
    #[serde(default = "default_trials")]
    pub trials: usize,
}

/// One parameter point of a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub index: usize,
    pub m: usize,
    pub gap: f64,
    pub sigma: f64,
    pub tau: f64,
    pub eta: f64,
    pub pi: f64,
}

impl Cell {
    pub fn profile(&self, step: f64) -> Result<LogitProfile, xgap_core::Error> {
        LogitProfile::with_top_gap(self.m, self.gap, step, self.sigma)
    }

    /// `pi = 1` is the pure variance component. Otherwise the bias component
    /// is the source means rotated one category to the right, with the
    /// source noise.
    pub fn mixture(&self, step: f64) -> Result<TargetMixture, xgap_core::Error> {
        let source = self.profile(step)?;
        if self.pi == 1.0 {
            return TargetMixture::variance_only(source, self.tau, self.eta);
        }
        let mut bias = source.mu().to_vec();
        bias.rotate_right(1);
        TargetMixture::knowledge_barrier(source, self.pi, self.tau, self.eta, bias, self.sigma)
    }
}

impl GridSpec {
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &m in &self.m {
            for &gap in &self.gap {
                for &sigma in &self.sigma {
                    for (t, &tau) in self.tau.iter().enumerate() {
                        let etas = match &self.eta {
                            Some(e) => e.clone(),
                            None => vec![self.tau[t]],
                        };
                        for eta in etas {
                            for &pi in &self.pi {
                                out.push(Cell {
                                    index: out.len(),
                                    m,
                                    gap,
                                    sigma,
                                    tau,
                                    eta,
                                    pi,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        match &self.ensemble_sizes {
            Some(s) => s.clone(),
            None => (1..=self.n_max).collect(),
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let sizes = self.sizes();
        if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Config(
                "ensemble sizes must be non-empty and strictly increasing".into(),
            ));
        }
        if sizes[0] == 0 || *sizes.last().unwrap() > self.n_max {
            return Err(CliError::Config(format!(
                "ensemble sizes must lie in [1, n_max = {}]",
                self.n_max
            )));
        }
        if self.m.is_empty() || self.gap.is_empty() || self.sigma.is_empty() || self.tau.is_empty()
        {
            return Err(CliError::Config(
                "every grid axis needs at least one value".into(),
            ));
        }
        Ok(())
    }
}

/// Builds a thread pool honouring `XGAP_THREADS`.
pub fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var("XGAP_THREADS") {
        let n: usize = raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
            CliError::Usage(format!(
                "XGAP_THREADS must be a positive integer, got {raw:?}"
            ))
        })?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start worker threads: {e}")))
}

fn cell_error(cell: &Cell, e: xgap_core::Error) -> CliError {
    CliError::Config(format!(
        "cell {} (m={}, gap={}, sigma={}, tau={}, eta={}, pi={}): {e}",
        cell.index, cell.m, cell.gap, cell.sigma, cell.tau, cell.eta, cell.pi
    ))
}

/// Rows of a finished experiment: the main table and an optional second one.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub table: Table,
    pub extra: Option<(&'static str, Table)>,
}

pub fn run(
    spec: &Spec,
    seed: u64,
    surrogate: &SurrogateVariance,
    pool: &rayon::ThreadPool,
) -> Result<Outcome, CliError> {
    match &spec.experiment {
        Experiment::Grid(g) => run_grid(g, seed, surrogate, pool),
        Experiment::Questions(q) => run_questions(q, seed, pool),
        Experiment::Confidence(c) => run_confidence(c, seed, pool),
        Experiment::Mechanism(m) => run_mechanism(m, seed, pool),
    }
}

fn opt(v: Option<f64>) -> Value {
    v.map_or(Value::Null, |x| json!(x))
}

fn run_grid(
    g: &GridSpec,
    seed: u64,
    surrogate: &SurrogateVariance,
    pool: &rayon::ThreadPool,
) -> Result<Outcome, CliError> {
    g.validate()?;
    let cells = g.cells();
    let sizes = g.sizes();
    // Check every cell up front so configuration errors surface before work.
    let configs = cells
        .iter()
        .map(|c| {
            let mixture = c.mixture(g.step).map_err(|e| cell_error(c, e))?;
            SimConfig::new(
                mixture,
                g.n_max,
                g.trials,
                derive_seed(seed, &[c.index as u64]),
            )
            .map(|s| s.with_metric(g.metric).with_path(g.path))
            .map_err(|e| cell_error(c, e))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let results = pool.install(|| {
        cells
            .par_iter()
            .zip(&configs)
            .map(|(cell, config)| {
                let points = sizes
                    .iter()
                    .map(|&n| curve_point(config, n))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| cell_error(cell, e))?;
                let modes = if g.modes {
                    let s = estimate_mode_probability(
                        config.profile(),
                        g.trials,
                        config.seed(),
                        g.path,
                    );
                    let t = estimate_mode_probability(
                        config.mixture(),
                        g.trials,
                        config.seed(),
                        g.path,
                    );
                    Some((
                        s.map_err(|e| cell_error(cell, e))?,
                        t.map_err(|e| cell_error(cell, e))?,
                    ))
                } else {
                    None
                };
                Ok((points, modes))
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;

    let mut table = Table::new([
        "cell",
        "m",
        "gap",
        "sigma",
        "tau",
        "eta",
        "pi",
        "metric",
        "n",
        "point",
        "stderr",
        "lower_bound",
        "upper_bound",
        "upper_clamped",
    ]);
    let mut modes_table = Table::new([
        "cell",
        "m",
        "gap",
        "sigma",
        "tau",
        "eta",
        "pi",
        "source_mode",
        "source_probability",
        "source_stderr",
        "source_lower_bound",
        "target_mode",
        "target_probability",
        "target_stderr",
        "target_lower_bound",
    ]);
    for ((cell, config), (points, modes)) in cells.iter().zip(&configs).zip(results) {
        let profile = config.profile();
        // Closed-form bounds describe single draws, so they sit on the n = 1 row.
        let (lower, upper, clamped) = if g.metric == CurveMetric::ModeAgreement {
            if cell.pi == 1.0 {
                let lo = prop2_lower_with(profile, cell.tau, cell.eta, surrogate.prop2)
                    .map_err(|e| cell_error(cell, e))?;
                let hi = prop2_upper_with(profile, cell.tau, cell.eta, surrogate.prop2)
                    .map_err(|e| cell_error(cell, e))?;
                (Some(lo), Some(hi.value), Some(hi.clamped))
            } else if cell.pi == 0.0 {
                let mix = config.mixture();
                let hi =
                    prop1_upper_with(profile, mix.bias_mu(), mix.bias_sigma(), surrogate.prop1)
                        .map_err(|e| cell_error(cell, e))?;
                (None, Some(hi), None)
            } else {
                (None, None, None)
            }
        } else {
            (None, None, None)
        };
        for p in &points {
            let first = p.ensemble_size == 1;
            table.push(vec![
                json!(cell.index),
                json!(cell.m),
                json!(cell.gap),
                json!(cell.sigma),
                json!(cell.tau),
                json!(cell.eta),
                json!(cell.pi),
                json!(g.metric.as_str()),
                json!(p.ensemble_size),
                json!(p.value),
                json!(p.stderr),
                opt(lower.filter(|_| first)),
                opt(upper.filter(|_| first)),
                clamped.filter(|_| first).map_or(Value::Null, Value::Bool),
            ]);
        }
        if let Some((s, t)) = modes {
            let (s_lb, t_lb) = prop3_mode_lower_with(profile, cell.tau, cell.eta, surrogate.prop3)
                .map_err(|e| cell_error(cell, e))?;
            modes_table.push(vec![
                json!(cell.index),
                json!(cell.m),
                json!(cell.gap),
                json!(cell.sigma),
                json!(cell.tau),
                json!(cell.eta),
                json!(cell.pi),
                json!(s.mode),
                json!(s.probability),
                json!(s.stderr),
                json!(s_lb),
                json!(t.mode),
                json!(t.probability),
                json!(t.stderr),
                json!(t_lb),
            ]);
        }
    }
    Ok(Outcome {
        table,
        extra: g.modes.then_some(("modes", modes_table)),
    })
}

fn run_questions(
    q: &QuestionsSpec,
    seed: u64,
    pool: &rayon::ThreadPool,
) -> Result<Outcome, CliError> {
    let mixture = q
        .generator
        .sample(true, &mut xgap_core::rng::substream(seed, &[]))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let template = SimConfig::new(mixture, q.n_max, q.trials, seed)
        .map_err(|e| CliError::Config(e.to_string()))?
        .with_metric(q.metric)
        .with_path(q.path);
    let curve = pool
        .install(|| sweep_questions(&q.generator, q.pi, q.n_questions, &template))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let trend = curve.trend();
    let mut table = Table::new([
        "metric",
        "pi",
        "n",
        "value",
        "stderr",
        "questions",
        "trend_spearman",
    ]);
    for p in &curve.points {
        table.push(vec![
            json!(q.metric.as_str()),
            json!(q.pi),
            json!(p.ensemble_size),
            json!(p.value),
            json!(p.stderr),
            json!(q.n_questions),
            opt(trend),
        ]);
    }
    Ok(Outcome { table, extra: None })
}

fn run_confidence(
    c: &ConfidenceSpec,
    seed: u64,
    pool: &rayon::ThreadPool,
) -> Result<Outcome, CliError> {
    if c.pi.is_empty() {
        return Err(CliError::Config(
            "confidence experiment needs at least one pi".into(),
        ));
    }
    let curves = pool.install(|| {
        c.pi.par_iter()
            .enumerate()
            .map(|(i, &pi)| {
                let config = ConfidenceCurveConfig {
                    generator: c.generator.clone(),
                    pi,
                    n_questions: c.n_questions,
                    draws: c.draws,
                    n_bins: c.n_bins,
                    seed: derive_seed(seed, &[i as u64]),
                };
                confidence_agreement_curve(&config).map_err(|e| CliError::Config(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut table = Table::new([
        "pi",
        "bin_lower",
        "bin_upper",
        "count",
        "mean_agreement",
        "spearman",
    ]);
    for (&pi, curve) in c.pi.iter().zip(&curves) {
        for b in &curve.bins {
            table.push(vec![
                json!(pi),
                json!(b.lower),
                json!(b.upper),
                json!(b.count),
                opt(b.mean_agreement),
                opt(curve.spearman),
            ]);
        }
    }
    Ok(Outcome { table, extra: None })
}

fn run_mechanism(
    m: &MechanismSpec,
    seed: u64,
    pool: &rayon::ThreadPool,
) -> Result<Outcome, CliError> {
    let reports = pool.install(|| {
        m.cases
            .par_iter()
            .enumerate()
            .map(|(i, case)| {
                let config = MechanismConfig {
                    semantic: case.semantic.clone(),
                    lang_a: case.lang_a.clone(),
                    lang_b: case.lang_b.clone(),
                    sigma: case.sigma,
                    trials: m.trials,
                    seed: derive_seed(seed, &[i as u64]),
                    weight_mean: case.weight_mean.clone(),
                };
                mechanism_variance_demo(&config)
                    .map_err(|e| CliError::Config(format!("case {i}: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut table = Table::new([
        "case",
        "source_var",
        "predicted_source_var",
        "target_var",
        "predicted_target_var",
        "shift_alignment",
    ]);
    for (i, r) in reports.iter().enumerate() {
        table.push(vec![
            json!(i),
            json!(r.source_var),
            json!(r.predicted_source_var),
            json!(r.target_var),
            json!(r.predicted_target_var),
            json!(r.shift_alignment),
        ]);
    }
    Ok(Outcome { table, extra: None })
}

/// Closed-form bounds for every cell of a grid, one row per (cell, bound).
pub fn bounds_table(g: &GridSpec, surrogate: &SurrogateVariance) -> Result<Table, CliError> {
    let mut table = Table::new([
        "cell",
        "m",
        "gap",
        "sigma",
        "tau",
        "eta",
        "mu0",
        "mu1",
        "mu_min",
        "bias_mu0",
        "bias_mu1",
        "bias_sigma",
        "bound_kind",
        "value",
        "clamped",
    ]);
    for cell in g.cells() {
        let profile = cell.profile(g.step).map_err(|e| cell_error(&cell, e))?;
        let mut bias = profile.mu().to_vec();
        bias.rotate_right(1);
        let reports = xgap_core::bounds::bound_reports(
            &profile,
            cell.tau,
            cell.eta,
            Some((&bias, cell.sigma)),
            surrogate,
        )
        .map_err(|e| cell_error(&cell, e))?;
        for r in reports {
            let p = &r.params;
            table.push(vec![
                json!(cell.index),
                json!(p.m),
                json!(cell.gap),
                json!(p.sigma_s),
                json!(p.tau),
                json!(p.eta),
                json!(p.mu0),
                json!(p.mu1),
                json!(p.mu_min),
                opt(p.bias_mu0),
                opt(p.bias_mu1),
                opt(p.bias_sigma),
                json!(r.bound_kind.as_str()),
                json!(r.value),
                json!(r.clamped),
            ]);
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses() {
        for name in preset_names() {
            let spec = Spec::preset(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(!spec.description.is_empty(), "{name}");
        }
        assert!(Spec::preset("nope").is_err());
    }

    #[test]
    fn grid_cells_are_the_full_product() {
        let Experiment::Grid(g) = Spec::preset("prop2-grid").unwrap().experiment else {
            panic!("prop2-grid is a grid");
        };
        let cells = g.cells();
        assert_eq!(cells.len(), 3 * 4 * 3 * 3);
        assert!(cells.iter().all(|c| c.tau == c.eta && c.pi == 1.0));
        assert!(cells.iter().enumerate().all(|(i, c)| c.index == i));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "[experiment]\nkind = \"grid\"\nm = [2]\ngap = [1.0]\nsigma = [1.0]\ntau = [1.0]\nbogus = 1\n";
        assert!(Spec::parse(text).is_err());
    }
}
