//! Scalar diffusion models and Euler–Maruyama path simulation.
//!
//! A model is the pair `dX_t = S(X_t) dt + sigma(X_t) dW_t` with `sigma^2`
//! known. Paths are generated on a uniform time grid from a seeded ChaCha8
//! generator so that `(model, T, dt, seed)` fixes every value bit for bit.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::grid::UniformGrid;
use crate::interp::MonotoneCubic;
use crate::invariant::{invariant_density, DEFAULT_DENSITY_POINTS, DEFAULT_X_EXTENT};
use crate::{Error, Result};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Names accepted by [`DiffusionModel::builtin`].
pub const BUILTIN_MODELS: [&str; 3] = ["ou", "quartic", "ou-varsigma"];

/// Default location of the tail-sign probe.
pub const DEFAULT_TAIL_PROBE: f64 = 10.0;

/// Quantile level at which the stationary sampler truncates each tail.
pub const STATIONARY_TAIL_QUANTILE: f64 = 1e-8;

#[derive(Clone)]
pub struct DiffusionModel {
    drift: ScalarFn,
    sigma_sq: ScalarFn,
    label: String,
    smoothness_k: Option<u32>,
    tail_probe: f64,
}

impl fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionModel")
            .field("label", &self.label)
            .field("smoothness_k", &self.smoothness_k)
            .field("tail_probe", &self.tail_probe)
            .finish_non_exhaustive()
    }
}

impl DiffusionModel {
    pub fn new<S, V>(label: impl Into<String>, drift: S, sigma_sq: V) -> Self
    where
        S: Fn(f64) -> f64 + Send + Sync + 'static,
        V: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            drift: Arc::new(drift),
            sigma_sq: Arc::new(sigma_sq),
            label: label.into(),
            smoothness_k: None,
            tail_probe: DEFAULT_TAIL_PROBE,
        }
    }

    pub fn with_smoothness(mut self, k: u32) -> Self {
        self.smoothness_k = Some(k);
        self
    }

    pub fn with_tail_probe(mut self, x_tail: f64) -> Self {
        self.tail_probe = x_tail;
        self
    }

    /// `S(x) = -x`, `sigma^2 = 1`.
    pub fn ou() -> Self {
        Self::new("ou", |x| -x, |_| 1.0).with_smoothness(1)
    }

    /// `S(x) = -x - x^3`, `sigma^2 = 1`.
    pub fn quartic() -> Self {
        Self::new("quartic", |x| -x - x * x * x, |_| 1.0).with_smoothness(1)
    }

    /// `S(x) = -x`, `sigma^2(x) = 1 / (1 + x^2)`.
    pub fn ou_varsigma() -> Self {
        Self::new("ou-varsigma", |x| -x, |x| 1.0 / (1.0 + x * x)).with_smoothness(1)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "ou" => Ok(Self::ou()),
            "quartic" => Ok(Self::quartic()),
            "ou-varsigma" => Ok(Self::ou_varsigma()),
            other => Err(Error::UnknownModel(other.to_string())),
        }
    }

    #[inline]
    pub fn drift(&self, x: f64) -> f64 {
        (self.drift)(x)
    }

    #[inline]
    pub fn sigma_sq(&self, x: f64) -> f64 {
        (self.sigma_sq)(x)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn smoothness_k(&self) -> Option<u32> {
        self.smoothness_k
    }

    pub fn tail_probe(&self) -> f64 {
        self.tail_probe
    }

    /// Tail-sign probe: `S(x) sgn(x) / sigma^2(x) < 0` at `|x|` equal to the
    /// probe point and twice the probe point, on both sides.
    pub fn check_ergodic(&self) -> Result<()> {
        for base in [self.tail_probe, 2.0 * self.tail_probe] {
            for x in [-base, base] {
                let v = self.sigma_sq(x);
                if !(v > 0.0 && v.is_finite()) {
                    return Err(self.non_ergodic(format!("sigma^2({x}) = {v} is not positive")));
                }
                let sign = self.drift(x) * x.signum() / v;
                if !(sign < 0.0) {
                    return Err(self.non_ergodic(format!(
                        "S(x) sgn(x) / sigma^2(x) = {sign} at x = {x} is not negative"
                    )));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn non_ergodic(&self, reason: impl Into<String>) -> Error {
        Error::NonErgodicModel {
            label: self.label.clone(),
            reason: reason.into(),
        }
    }
}

/// Initial condition of a simulated path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Stationary,
    Fixed(f64),
}

/// A discretized record `X_0, X_dt, ..., X_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    dt: f64,
    values: Vec<f64>,
    seed: u64,
}

impl Path {
    /// Wraps externally produced values. At least two values are required.
    pub fn from_values(dt: f64, values: Vec<f64>, seed: u64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        if values.len() < 2 {
            return Err(Error::invalid("a path needs at least two values"));
        }
        Ok(Self { dt, values, seed })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of time cells, `T / dt`.
    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.steps() as f64 * self.dt
    }
}

/// Largest step allowed for horizon `T`: `T^{-1/2} / 20`.
pub fn max_step(horizon: f64) -> f64 {
    horizon.powf(-0.5) / 20.0
}

/// Largest step satisfying the step rule that divides `T` into an integer
/// number of cells.
pub fn default_step(horizon: f64) -> f64 {
    horizon / (horizon / max_step(horizon)).ceil()
}

fn cell_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(horizon > 0.0 && horizon.is_finite() && dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!(
            "T and dt must be positive (T = {horizon}, dt = {dt})"
        )));
    }
    let n = (horizon / dt).round();
    if n < 1.0 || (n * dt - horizon).abs() > 1e-9 * horizon {
        return Err(Error::invalid(format!(
            "T = {horizon} is not an integer multiple of dt = {dt}"
        )));
    }
    Ok(n as usize)
}

/// Euler–Maruyama simulation of `model` on `[0, T]`.
pub fn simulate_path(model: &DiffusionModel, horizon: f64, dt: f64, init: Init, seed: u64) -> Result<Path> {
    let n = cell_count(horizon, dt)?;
    let limit = max_step(horizon);
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::StepTooCoarse {
            dt,
            max_dt: limit,
            horizon,
        });
    }
    let x0 = match init {
        Init::Fixed(x) => x,
        Init::Stationary => sample_stationary(model, seed)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sqrt_dt = dt.sqrt();
    let mut values = Vec::with_capacity(n + 1);
    let mut x = x0;
    values.push(x);
    for _ in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        x += model.drift(x) * dt + model.sigma_sq(x).sqrt() * sqrt_dt * z;
        values.push(x);
    }
    Ok(Path { dt, values, seed })
}

/// Inverse-CDF sampler of the invariant law, built once per model.
#[derive(Debug, Clone)]
pub struct StationarySampler {
    quantile: MonotoneCubic,
}

impl StationarySampler {
    pub fn new(model: &DiffusionModel) -> Result<Self> {
        let grid = UniformGrid::new(-DEFAULT_X_EXTENT, DEFAULT_X_EXTENT, DEFAULT_DENSITY_POINTS)?;
        let table = invariant_density(model, &grid)?;
        let f = table.f_values();
        let h = grid.step();
        let mut cdf = Vec::with_capacity(f.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for w in f.windows(2) {
            acc += 0.5 * h * (w[0] + w[1]);
            cdf.push(acc);
        }
        let total = acc;
        // Keep strictly increasing CDF knots so the inverse is well defined.
        let mut us = Vec::with_capacity(cdf.len());
        let mut xs = Vec::with_capacity(cdf.len());
        for (i, c) in cdf.iter().enumerate() {
            let u = c / total;
            if us.last().is_none_or(|&last| u > last) {
                us.push(u);
                xs.push(grid.get(i));
            }
        }
        Ok(Self {
            quantile: MonotoneCubic::new(us, xs),
        })
    }

    /// Quantile function; `u` is clamped to the truncated range.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(STATIONARY_TAIL_QUANTILE, 1.0 - STATIONARY_TAIL_QUANTILE);
        self.quantile.eval(u)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.quantile(STATIONARY_TAIL_QUANTILE + u * (1.0 - 2.0 * STATIONARY_TAIL_QUANTILE))
    }
}

/// One draw from the invariant law. Uses ChaCha8 stream 1 of `seed`, so it
/// never overlaps the increments of a path simulated with the same seed.
pub fn sample_stationary(model: &DiffusionModel, seed: u64) -> Result<f64> {
    let sampler = StationarySampler::new(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    Ok(sampler.sample(&mut rng))
}
