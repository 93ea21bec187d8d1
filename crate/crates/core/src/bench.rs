//! Risk evaluation and Monte-Carlo experiments.
//!
//! An experiment simulates `reps` independent stationary paths for every
//! horizon, fits the configured estimator to each and records the weighted
//! risk `int (S_hat - S)^2 f^2` together with the unweighted error on
//! `[-1, 1]`. Replication seeds are a fixed hash of `(master seed, T, r)`,
//! so reports do not depend on scheduling or on the number of threads.

use std::fmt;
use std::fs;
use std::path::{Path as FsPath, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::estimator::{adaptive_drift, default_x_grid, nonadaptive_drift, DriftEstimate};
use crate::grid::UniformGrid;
use crate::invariant::{default_density, pinsker_constant, pinsker_constant_general, DensityTable};
use crate::io::{Table, Tabular};
use crate::quad::trapezoid;
use crate::selector::SpectralWeight;
use crate::sim::{default_step, simulate_path, DiffusionModel, Init};
use crate::spectral::{EcfOptions, DEFAULT_D_LAMBDA};
use crate::{Error, Result};

/// Relative share of `int f^2` allowed outside the evaluation grid.
pub const TAIL_MASS_LIMIT: f64 = 1e-8;

/// Interval of the unweighted error reported by experiments.
pub const MISE_INTERVAL: (f64, f64) = (-1.0, 1.0);

/// Trapezoid rule for `int (s - S)^2 f^2` over the estimate's grid, with `f`
/// interpolated from `density`.
pub fn weighted_risk(est: &DriftEstimate, model: &DiffusionModel, density: &DensityTable) -> Result<f64> {
    let grid = est.x_grid();
    let span = density.x_grid();
    let slack = 1e-9 * span.step();
    if grid.start() < span.start() - slack || grid.end() > span.end() + slack {
        return Err(Error::GridMismatch(format!(
            "estimate grid [{}, {}] leaves the density support [{}, {}]",
            grid.start(),
            grid.end(),
            span.start(),
            span.end()
        )));
    }
    let tail = tail_share(density, grid.start(), grid.end());
    if tail > TAIL_MASS_LIMIT {
        return Err(Error::GridMismatch(format!(
            "grid [{}, {}] misses {tail:e} of int f^2",
            grid.start(),
            grid.end()
        )));
    }
    let values: Vec<f64> = grid
        .iter()
        .zip(est.s_values())
        .map(|(x, &s)| {
            let f = density.value_at(x);
            let e = s - model.drift(x);
            e * e * f * f
        })
        .collect();
    Ok(trapezoid(&values, grid.step()))
}

/// Share of `int f^2` lying outside `[a, b]`.
fn tail_share(density: &DensityTable, a: f64, b: f64) -> f64 {
    let step = density.x_grid().step();
    let sq: Vec<f64> = density.f_values().iter().map(|f| f * f).collect();
    let total = trapezoid(&sq, step);
    let outside: f64 = density
        .x_grid()
        .iter()
        .zip(&sq)
        .filter(|(x, _)| *x < a || *x > b)
        .map(|(_, v)| v * step)
        .sum();
    outside / total
}

/// Unweighted `int_a^b (s - S)^2` by the trapezoid rule. Both ends must be
/// grid points of the estimate.
pub fn mise_compact(est: &DriftEstimate, model: &DiffusionModel, interval: (f64, f64)) -> Result<f64> {
    let (a, b) = interval;
    let grid = est.x_grid();
    let locate = |x: f64| {
        grid.index_of(x)
            .ok_or_else(|| Error::GridMismatch(format!("interval end {x} is not a point of the estimate grid")))
    };
    let (i, j) = (locate(a)?, locate(b)?);
    if i >= j {
        return Err(Error::GridMismatch(format!("empty interval [{a}, {b}]")));
    }
    let values: Vec<f64> = (i..=j)
        .map(|n| {
            let e = est.s_values()[n] - model.drift(grid.get(n));
            e * e
        })
        .collect();
    Ok(trapezoid(&values, grid.step()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Adaptive,
    /// Minimax weight for the configured `(k, R)`.
    Nonadaptive,
    /// `S_hat = 0`; needs no data.
    Zero,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Adaptive => "adaptive",
            Self::Nonadaptive => "nonadaptive",
            Self::Zero => "zero",
        })
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(Self::Adaptive),
            "nonadaptive" => Ok(Self::Nonadaptive),
            "zero" => Ok(Self::Zero),
            other => Err(Error::invalid(format!(
                "unknown estimator `{other}` (expected adaptive, nonadaptive or zero)"
            ))),
        }
    }
}

/// Experiment description. The text form is one `key = value` per line
/// with the keys listed in [`ExperimentConfig::KEYS`]; `#` starts a comment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: String,
    pub estimator: EstimatorKind,
    pub k: u32,
    pub radius: f64,
    pub horizons: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    /// Fixed time step; `None` takes the largest admissible step per horizon.
    pub dt: Option<f64>,
    pub lambda_max: Option<f64>,
    pub d_lambda: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub x_points: usize,
    /// Report file, rewritten after every horizon.
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let grid = default_x_grid();
        Self {
            model: "ou".into(),
            estimator: EstimatorKind::Adaptive,
            k: 1,
            radius: 1.0,
            horizons: vec![500.0, 2000.0, 8000.0],
            reps: 30,
            seed: 1,
            dt: None,
            lambda_max: None,
            d_lambda: DEFAULT_D_LAMBDA,
            x_min: grid.start(),
            x_max: grid.end(),
            x_points: grid.len(),
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub const KEYS: [&'static str; 14] = [
        "model",
        "estimator",
        "k",
        "R",
        "T",
        "reps",
        "seed",
        "dt",
        "lambda-max",
        "d-lambda",
        "x-min",
        "x-max",
        "x-points",
        "out",
    ];

    /// Assigns one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::invalid(format!("`{key}` has unparsable value `{value}`")))
        }
        fn optional(key: &str, value: &str) -> Result<Option<f64>> {
            if value == "auto" {
                Ok(None)
            } else {
                num(key, value).map(Some)
            }
        }
        match key {
            "model" => self.model = value.to_string(),
            "estimator" => self.estimator = value.parse()?,
            "k" => self.k = num(key, value)?,
            "R" => self.radius = num(key, value)?,
            "T" => {
                self.horizons = value
                    .split(',')
                    .map(|t| num(key, t.trim()))
                    .collect::<Result<_>>()?
            }
            "reps" => self.reps = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "dt" => self.dt = optional(key, value)?,
            "lambda-max" => self.lambda_max = optional(key, value)?,
            "d-lambda" => self.d_lambda = num(key, value)?,
            "x-min" => self.x_min = num(key, value)?,
            "x-max" => self.x_max = num(key, value)?,
            "x-points" => self.x_points = num(key, value)?,
            "out" => self.out = (!value.is_empty()).then(|| PathBuf::from(value)),
            other => return Err(Error::invalid(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Text form of one key, or `None` for an unknown key.
    pub fn get(&self, key: &str) -> Option<String> {
        let auto = |v: Option<f64>| v.map_or_else(|| "auto".to_string(), |v| v.to_string());
        Some(match key {
            "model" => self.model.clone(),
            "estimator" => self.estimator.to_string(),
            "k" => self.k.to_string(),
            "R" => self.radius.to_string(),
            "T" => self.horizons.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
            "reps" => self.reps.to_string(),
            "seed" => self.seed.to_string(),
            "dt" => auto(self.dt),
            "lambda-max" => auto(self.lambda_max),
            "d-lambda" => self.d_lambda.to_string(),
            "x-min" => self.x_min.to_string(),
            "x-max" => self.x_max.to_string(),
            "x-points" => self.x_points.to_string(),
            "out" => self.out.as_ref().map_or_else(String::new, |p| p.display().to_string()),
            _ => return None,
        })
    }

    pub fn parse_text(text: &str, origin: &FsPath) -> Result<Self> {
        let mut config = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: n + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err("expected `key = value`".into()))?;
            config
                .set(key.trim(), value)
                .map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(config)
    }

    pub fn read(path: impl AsRef<FsPath>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_text(&text, path)
    }

    pub fn to_text(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).unwrap_or_default()))
            .collect()
    }

    pub fn x_grid(&self) -> Result<UniformGrid> {
        UniformGrid::new(self.x_min, self.x_max, self.x_points)
    }

    pub fn ecf_options(&self) -> EcfOptions {
        EcfOptions {
            lambda_max: self.lambda_max,
            d_lambda: self.d_lambda,
            stride: None,
        }
    }

    /// Time step used at horizon `T`.
    pub fn step_for(&self, horizon: f64) -> f64 {
        self.dt.unwrap_or_else(|| default_step(horizon))
    }

    pub fn model(&self) -> Result<DiffusionModel> {
        DiffusionModel::builtin(&self.model)
    }

    pub fn validate(&self) -> Result<()> {
        self.model()?;
        if self.reps == 0 {
            return Err(Error::invalid("reps must be at least 1"));
        }
        if self.horizons.is_empty() {
            return Err(Error::invalid("no horizons given"));
        }
        if self.k == 0 || !(self.radius > 0.0) {
            return Err(Error::invalid(format!("need k >= 1 and R > 0 (k = {}, R = {})", self.k, self.radius)));
        }
        if !(self.d_lambda > 0.0) {
            return Err(Error::invalid(format!("d-lambda must be positive, got {}", self.d_lambda)));
        }
        self.x_grid()?;
        for &t in &self.horizons {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::invalid(format!("horizon {t} is not positive")));
            }
            let dt = self.step_for(t);
            let cells = (t / dt).round();
            if cells < 1.0 || (cells * dt - t).abs() > 1e-9 * t {
                return Err(Error::invalid(format!("T = {t} is not a multiple of dt = {dt}")));
            }
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replication `rep` at horizon `T`: nested SplitMix64 over the
/// master seed, the IEEE bits of `T` and the replication index.
pub fn replication_seed(master: u64, horizon: f64, rep: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ horizon.to_bits()) ^ rep as u64)
}

/// Scores of one fitted replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicationScore {
    pub risk: f64,
    pub mise: f64,
}

/// Fits the configured estimator to replication `rep` at horizon `T`.
pub fn run_replication(
    config: &ExperimentConfig,
    model: &DiffusionModel,
    density: &DensityTable,
    horizon: f64,
    rep: usize,
) -> Result<ReplicationScore> {
    let x_grid = config.x_grid()?;
    let est = match config.estimator {
        EstimatorKind::Zero => {
            let w = SpectralWeight::new(1.0, 2.0)?;
            DriftEstimate::from_values(x_grid, vec![0.0; x_grid.len()], w, horizon)?
        }
        kind => {
            let seed = replication_seed(config.seed, horizon, rep);
            let path = simulate_path(model, horizon, config.step_for(horizon), Init::Stationary, seed)?;
            let options = config.ecf_options();
            if kind == EstimatorKind::Adaptive {
                adaptive_drift(&path, model, &x_grid, &options)?
            } else {
                nonadaptive_drift(&path, model, config.k, config.radius, &x_grid, &options)?
            }
        }
    };
    Ok(ReplicationScore {
        risk: weighted_risk(&est, model, density)?,
        mise: mise_compact(&est, model, MISE_INTERVAL)?,
    })
}

/// Monte-Carlo summary at one horizon. `wall_time` is kept in memory only;
/// it is neither written to report files nor compared by `==`.
#[derive(Debug, Clone)]
pub struct RiskRow {
    pub horizon: f64,
    pub estimator: EstimatorKind,
    pub mean_risk: f64,
    /// Sample standard deviation over `sqrt(reps)`; zero below two replications.
    pub std_error: f64,
    /// Replications that completed.
    pub reps: usize,
    pub mean_mise: f64,
    pub failures: usize,
    pub wall_time: f64,
}

impl PartialEq for RiskRow {
    fn eq(&self, other: &Self) -> bool {
        self.horizon.to_bits() == other.horizon.to_bits()
            && self.estimator == other.estimator
            && self.mean_risk.to_bits() == other.mean_risk.to_bits()
            && self.std_error.to_bits() == other.std_error.to_bits()
            && self.reps == other.reps
            && self.mean_mise.to_bits() == other.mean_mise.to_bits()
            && self.failures == other.failures
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationFailure {
    pub horizon: f64,
    pub rep: usize,
    pub seed: u64,
    pub message: String,
}

impl fmt::Display for ReplicationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T={} rep={} seed={}: {}", self.horizon, self.rep, self.seed, self.message)
    }
}

/// Least-squares fit of `log risk = intercept + slope log T` and the
/// normalized series `T^{2k/(2k+1)} risk / P`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub k: u32,
    pub slope: f64,
    pub intercept: f64,
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskReport {
    pub config: ExperimentConfig,
    /// Ordered by increasing `T`.
    pub rows: Vec<RiskRow>,
    pub failures: Vec<ReplicationFailure>,
    /// Minimax constant for the configured `(k, R)` and model.
    pub pinsker: f64,
    pub fit: Option<RateFit>,
}

/// Minimax constant matching the model's diffusion coefficient.
pub fn reference_constant(k: u32, radius: f64, model: &DiffusionModel) -> Result<f64> {
    let density = default_density(model)?;
    if (density.sigma_sq_mean(model) - 1.0).abs() < 1e-12 {
        Ok(pinsker_constant(k, radius))
    } else {
        pinsker_constant_general(k, radius, model)
    }
}

/// Runs every horizon in increasing order. Replications of one horizon run
/// in parallel on the current rayon pool and are aggregated by index. A
/// failing replication is recorded and left out of the means; when
/// `config.out` is set the report is rewritten after each horizon.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RiskReport> {
    config.validate()?;
    let model = config.model()?;
    let density = default_density(&model)?;
    let mut horizons = config.horizons.clone();
    horizons.sort_by(f64::total_cmp);
    horizons.dedup();

    let mut report = RiskReport {
        config: config.clone(),
        rows: Vec::with_capacity(horizons.len()),
        failures: Vec::new(),
        pinsker: reference_constant(config.k, config.radius, &model)?,
        fit: None,
    };
    for &horizon in &horizons {
        let started = Instant::now();
        let outcomes: Vec<Result<ReplicationScore>> = (0..config.reps)
            .into_par_iter()
            .map(|r| run_replication(config, &model, &density, horizon, r))
            .collect();
        let mut scores = Vec::with_capacity(outcomes.len());
        let mut failed = 0;
        for (rep, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok(s) => scores.push(s),
                Err(e) => {
                    failed += 1;
                    report.failures.push(ReplicationFailure {
                        horizon,
                        rep,
                        seed: replication_seed(config.seed, horizon, rep),
                        message: e.to_string(),
                    });
                }
            }
        }
        let risks: Vec<f64> = scores.iter().map(|s| s.risk).collect();
        let mises: Vec<f64> = scores.iter().map(|s| s.mise).collect();
        let (mean_risk, std_error) = mean_and_se(&risks);
        report.rows.push(RiskRow {
            horizon,
            estimator: config.estimator,
            mean_risk,
            std_error,
            reps: scores.len(),
            mean_mise: mean_and_se(&mises).0,
            failures: failed,
            wall_time: started.elapsed().as_secs_f64(),
        });
        if let Some(out) = &config.out {
            report.emit(out)?;
        }
    }
    report.fit = rate_fit(&report, config.k).ok();
    if let Some(out) = &config.out {
        report.emit(out)?;
    }
    Ok(report)
}

/// Mean and standard error, summed in slice order. NaN mean for no data.
fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Regresses log mean risk on log `T` over rows with a positive finite risk
/// and normalizes by the report's minimax constant.
pub fn rate_fit(report: &RiskReport, k: u32) -> Result<RateFit> {
    let rows: Vec<&RiskRow> = report
        .rows
        .iter()
        .filter(|r| r.mean_risk.is_finite() && r.mean_risk > 0.0)
        .collect();
    let mut distinct: Vec<f64> = rows.iter().map(|r| r.horizon).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::InsufficientPoints(distinct.len()));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.horizon.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_risk.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let rate = 2.0 * k as f64 / (2.0 * k as f64 + 1.0);
    Ok(RateFit {
        k,
        slope,
        intercept: my - slope * mx,
        ratios: rows
            .iter()
            .map(|r| r.horizon.powf(rate) * r.mean_risk / report.pinsker)
            .collect(),
    })
}

const REPORT_COLUMNS: [&str; 6] = ["T", "mean_risk", "std_error", "reps", "mean_mise", "failures"];

impl Tabular for RiskReport {
    fn to_table(&self) -> Table {
        let mut t = Table::new("risk-report", &REPORT_COLUMNS);
        for key in ExperimentConfig::KEYS.iter().filter(|&&k| k != "out") {
            t.meta(key, self.config.get(key).unwrap_or_default());
        }
        t.meta_f64("pinsker", self.pinsker);
        if let Some(fit) = &self.fit {
            t.meta("fit_k", fit.k)
                .meta_f64("fit_slope", fit.slope)
                .meta_f64("fit_intercept", fit.intercept);
        }
        for failure in &self.failures {
            t.meta("failure", failure);
        }
        t.rows = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.horizon,
                    r.mean_risk,
                    r.std_error,
                    r.reps as f64,
                    r.mean_mise,
                    r.failures as f64,
                ]
            })
            .collect();
        t
    }

    fn from_table(table: &Table) -> Result<Self> {
        table.expect_kind("risk-report")?;
        let mut config = ExperimentConfig::default();
        for key in ExperimentConfig::KEYS.iter().filter(|&&k| k != "out") {
            let value = table
                .get(key)
                .ok_or_else(|| Error::invalid(format!("report header lacks `{key}`")))?;
            config.set(key, value)?;
        }
        let failures = table
            .header
            .iter()
            .filter(|(k, _)| k == "failure")
            .map(|(_, v)| parse_failure(v))
            .collect::<Result<_>>()?;
        let columns: Vec<Vec<f64>> = REPORT_COLUMNS
            .iter()
            .map(|c| table.column(c))
            .collect::<Result<_>>()?;
        let rows = (0..table.rows.len())
            .map(|i| RiskRow {
                horizon: columns[0][i],
                estimator: config.estimator,
                mean_risk: columns[1][i],
                std_error: columns[2][i],
                reps: columns[3][i] as usize,
                mean_mise: columns[4][i],
                failures: columns[5][i] as usize,
                wall_time: f64::NAN,
            })
            .collect();
        let mut report = RiskReport {
            config,
            rows,
            failures,
            pinsker: table.parse("pinsker")?,
            fit: None,
        };
        if table.get("fit_k").is_some() {
            let k = table.parse("fit_k")?;
            report.fit = Some(RateFit {
                k,
                slope: table.parse("fit_slope")?,
                intercept: table.parse("fit_intercept")?,
                ratios: rate_fit(&report, k)?.ratios,
            });
        }
        Ok(report)
    }
}

fn parse_failure(text: &str) -> Result<ReplicationFailure> {
    let bad = || Error::invalid(format!("malformed failure record `{text}`"));
    let (head, message) = text.split_once(": ").ok_or_else(bad)?;
    let mut fields = head.split(' ');
    let mut field = |name: &str| {
        fields
            .next()
            .and_then(|f| f.strip_prefix(name))
            .and_then(|f| f.strip_prefix('='))
            .ok_or_else(bad)
            .map(str::to_string)
    };
    let horizon = field("T")?.parse().map_err(|_| bad())?;
    let rep = field("rep")?.parse().map_err(|_| bad())?;
    let seed = field("seed")?.parse().map_err(|_| bad())?;
    Ok(ReplicationFailure {
        horizon,
        rep,
        seed,
        message: message.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::adaptive_simpson;
    use std::f64::consts::PI;

    fn shifted(model: &DiffusionModel, grid: UniformGrid, c: f64) -> DriftEstimate {
        let s = grid.iter().map(|x| model.drift(x) + c).collect();
        DriftEstimate::from_values(grid, s, SpectralWeight::new(0.5, 2.0).unwrap(), 100.0).unwrap()
    }

    #[test]
    fn exact_estimate_has_zero_risk() {
        let model = DiffusionModel::quartic();
        let density = default_density(&model).unwrap();
        let est = shifted(&model, default_x_grid(), 0.0);
        assert_eq!(weighted_risk(&est, &model, &density).unwrap(), 0.0);
        assert_eq!(mise_compact(&est, &model, MISE_INTERVAL).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_risk_on_ou() {
        let model = DiffusionModel::ou();
        let density = default_density(&model).unwrap();
        let c = 0.3;
        let est = shifted(&model, default_x_grid(), c);
        let risk = weighted_risk(&est, &model, &density).unwrap();
        let exact = c * c / (2.0 * PI).sqrt();
        assert!((risk - exact).abs() < 1e-6 * exact, "{risk} vs {exact}");
        let mise = mise_compact(&est, &model, MISE_INTERVAL).unwrap();
        assert!((mise - 2.0 * c * c).abs() < 1e-12);
    }

    #[test]
    fn refinement_barely_moves_the_risk() {
        for model in [DiffusionModel::ou(), DiffusionModel::quartic(), DiffusionModel::ou_varsigma()] {
            let density = default_density(&model).unwrap();
            let err = |x: f64| 0.2 * (3.0 * x).sin() + 0.1 * x;
            let at = |points: usize| {
                let grid = UniformGrid::new(-8.0, 8.0, points).unwrap();
                let s = grid.iter().map(|x| model.drift(x) + err(x)).collect();
                let est = DriftEstimate::from_values(grid, s, SpectralWeight::new(0.5, 2.0).unwrap(), 1.0).unwrap();
                (
                    weighted_risk(&est, &model, &density).unwrap(),
                    mise_compact(&est, &model, MISE_INTERVAL).unwrap(),
                )
            };
            let (r1, m1) = at(801);
            let (r2, m2) = at(1601);
            assert!((r1 - r2).abs() < 1e-4 * r2, "{}: {r1} vs {r2}", model.label());
            assert!((m1 - m2).abs() < 1e-4 * m2);
        }
    }

    #[test]
    fn narrow_or_foreign_grids_are_rejected() {
        let model = DiffusionModel::ou();
        let density = default_density(&model).unwrap();
        let narrow = shifted(&model, UniformGrid::new(-2.0, 2.0, 401).unwrap(), 0.0);
        assert!(matches!(weighted_risk(&narrow, &model, &density), Err(Error::GridMismatch(_))));
        let wide = shifted(&model, UniformGrid::new(-9.0, 9.0, 181).unwrap(), 0.0);
        assert!(matches!(weighted_risk(&wide, &model, &density), Err(Error::GridMismatch(_))));
        let coarse = shifted(&model, UniformGrid::new(-8.0, 8.0, 7).unwrap(), 0.0);
        assert!(matches!(
            mise_compact(&coarse, &model, MISE_INTERVAL),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn config_text_round_trips_and_rejects_unknown_keys() {
        let mut config = ExperimentConfig {
            estimator: EstimatorKind::Nonadaptive,
            radius: 1.0 / (2.0 * PI).sqrt(),
            horizons: vec![100.0, 400.5],
            dt: Some(0.0025),
            lambda_max: Some(12.0),
            out: Some(PathBuf::from("report.csv")),
            ..ExperimentConfig::default()
        };
        config.seed = u64::MAX;
        let parsed = ExperimentConfig::parse_text(&config.to_text(), FsPath::new("mem")).unwrap();
        assert_eq!(parsed, config);
        let text = "model = ou\n# comment\nwidth = 3\n";
        let err = ExperimentConfig::parse_text(text, FsPath::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(ExperimentConfig::parse_text("estimator = lasso", FsPath::new("mem")).is_err());
    }

    #[test]
    fn validation_catches_bad_configs() {
        let ok = ExperimentConfig::default();
        ok.validate().unwrap();
        for (key, value) in [("reps", "0"), ("model", "cubic"), ("dt", "0.3"), ("T", "-5"), ("R", "0")] {
            let mut c = ok.clone();
            c.set(key, value).unwrap();
            assert!(c.validate().is_err(), "{key} = {value}");
        }
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a = replication_seed(7, 500.0, 0);
        assert_eq!(a, replication_seed(7, 500.0, 0));
        let mut seeds: Vec<u64> = (0..50)
            .flat_map(|r| [500.0, 2000.0].map(|t| replication_seed(7, t, r)))
            .collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 100);
        assert_ne!(a, replication_seed(8, 500.0, 0));
        // SplitMix64 reference output for a zero state.
        assert_eq!(splitmix64(0), 0xe220_a839_7b1d_cdaf);
    }

    #[test]
    fn zero_estimator_risk_matches_quadrature() {
        let config = ExperimentConfig {
            estimator: EstimatorKind::Zero,
            horizons: vec![100.0, 200.0, 300.0],
            reps: 3,
            ..ExperimentConfig::default()
        };
        let report = run_experiment(&config).unwrap();
        let exact = adaptive_simpson(&|x: f64| x * x * (-2.0 * x * x).exp() / PI, -8.0, 8.0, 1e-14);
        assert!((exact - 0.25 / (2.0 * PI).sqrt()).abs() < 1e-12);
        for row in &report.rows {
            assert!((row.mean_risk - exact).abs() < 1e-6 * exact, "{}", row.mean_risk);
            assert_eq!(row.std_error, 0.0);
            // trapezoid value of int_{-1}^{1} x^2 at step h is 2/3 + h^2/3
            assert!((row.mean_mise - (2.0 + 0.02f64.powi(2)) / 3.0).abs() < 1e-12);
        }
        let fit = report.fit.unwrap();
        assert!(fit.slope.abs() < 1e-12);
    }

    fn synthetic(risks: &[(f64, f64)]) -> RiskReport {
        RiskReport {
            config: ExperimentConfig::default(),
            rows: risks
                .iter()
                .map(|&(t, r)| RiskRow {
                    horizon: t,
                    estimator: EstimatorKind::Adaptive,
                    mean_risk: r,
                    std_error: 0.0,
                    reps: 1,
                    mean_mise: 0.0,
                    failures: 0,
                    wall_time: 0.0,
                })
                .collect(),
            failures: Vec::new(),
            pinsker: pinsker_constant(1, 1.0),
            fit: None,
        }
    }

    #[test]
    fn rate_fit_recovers_exact_power_laws() {
        let ts: [f64; 4] = [500.0, 2000.0, 8000.0, 32000.0];
        let report = synthetic(&ts.map(|t| (t, 3.0 * t.powf(-2.0 / 3.0))));
        let fit = rate_fit(&report, 1).unwrap();
        assert!((fit.slope + 2.0 / 3.0).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-10);
        for r in &fit.ratios {
            assert!((r - 3.0 / pinsker_constant(1, 1.0)).abs() < 1e-10);
        }
        let flat = rate_fit(&synthetic(&ts.map(|t| (t, 0.2))), 2).unwrap();
        assert!(flat.slope.abs() < 1e-12);
        let short = synthetic(&[(500.0, 1.0), (2000.0, 0.5), (2000.0, 0.4)]);
        assert!(matches!(rate_fit(&short, 1), Err(Error::InsufficientPoints(2))));
    }

    #[test]
    fn report_round_trips_through_text() {
        let mut report = synthetic(&[(500.0, 0.1), (2000.0, 0.04), (8000.0, 0.013)]);
        report.rows[1].std_error = 1.0 / 3.0;
        report.rows[2].failures = 1;
        report.failures.push(ReplicationFailure {
            horizon: 8000.0,
            rep: 4,
            seed: 123,
            message: "numerical check failed: x: y".into(),
        });
        report.fit = Some(rate_fit(&report, 1).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("report.csv");
        report.emit(&file).unwrap();
        let back = RiskReport::load(&file).unwrap();
        assert_eq!(back, report);
        let first = std::fs::read(&file).unwrap();
        back.emit(&file).unwrap();
        assert_eq!(std::fs::read(&file).unwrap(), first);
    }

    #[test]
    fn failing_replications_are_recorded_not_fatal() {
        let config = ExperimentConfig {
            horizons: vec![20.0],
            reps: 2,
            ..ExperimentConfig::default()
        };
        let report = run_experiment(&config).unwrap();
        assert_eq!(report.rows[0].failures, 2);
        assert_eq!(report.rows[0].reps, 0);
        assert_eq!(report.failures.len(), 2);
        assert!(report.rows[0].mean_risk.is_nan());
    }
}
