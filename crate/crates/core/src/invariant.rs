//! Invariant density of a scalar diffusion, its Fourier transform, and the
//! closed-form minimax constants.
//!
//! The density solves `(sigma^2 f)' = 2 S f`, i.e.
//! `f(x) = C sigma^{-2}(x) exp(2 int_0^x S(u) / sigma^2(u) du)`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::grid::UniformGrid;
use crate::quad::{adaptive_simpson, central_derivative, trapezoid};
use crate::selector::SpectralWeight;
use crate::sim::DiffusionModel;
use crate::{Error, Result};

/// Half-width of the default state grid.
pub const DEFAULT_X_EXTENT: f64 = 8.0;
/// Number of points of the default density tabulation.
pub const DEFAULT_DENSITY_POINTS: usize = 4096;

const EXPONENT_TOL: f64 = 1e-14;
const NORMALIZER_STEP: f64 = 1.0 / 256.0;
const NORMALIZER_WINDOWS: [f64; 5] = [8.0, 16.0, 32.0, 64.0, 128.0];
const DIVERGENCE_REL: f64 = 1e-3;
const BOUNDARY_REL: f64 = 1e-12;
const MASS_TOL: f64 = 1e-8;
const RESIDUAL_REL: f64 = 1e-6;

/// Tabulated invariant density on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityTable {
    x_grid: UniformGrid,
    f_values: Vec<f64>,
    norm_const: f64,
    model_label: String,
}

impl DensityTable {
    pub(crate) fn from_parts(
        x_grid: UniformGrid,
        f_values: Vec<f64>,
        norm_const: f64,
        model_label: String,
    ) -> Self {
        Self {
            x_grid,
            f_values,
            norm_const,
            model_label,
        }
    }

    pub fn x_grid(&self) -> &UniformGrid {
        &self.x_grid
    }

    pub fn f_values(&self) -> &[f64] {
        &self.f_values
    }

    /// The constant `C` in `f = C sigma^{-2} exp(...)`.
    pub fn norm_const(&self) -> f64 {
        self.norm_const
    }

    pub fn model_label(&self) -> &str {
        &self.model_label
    }

    pub fn max_value(&self) -> f64 {
        self.f_values.iter().copied().fold(0.0, f64::max)
    }

    pub fn mass(&self) -> f64 {
        trapezoid(&self.f_values, self.x_grid.step())
    }

    /// Four-point Lagrange interpolation (linear in the edge cells), clamped
    /// at zero; zero outside the table.
    pub fn value_at(&self, x: f64) -> f64 {
        let g = &self.x_grid;
        if x < g.start() || x > g.end() {
            return 0.0;
        }
        let f = &self.f_values;
        let pos = (x - g.start()) / g.step();
        let i = (pos.floor() as usize).min(g.len() - 2);
        let t = pos - i as f64;
        if i == 0 || i + 2 >= g.len() {
            return f[i] * (1.0 - t) + f[i + 1] * t;
        }
        let (a, b, c, d) = (f[i - 1], f[i], f[i + 1], f[i + 2]);
        let v = -t * (t - 1.0) * (t - 2.0) / 6.0 * a + (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0 * b
            - (t + 1.0) * t * (t - 2.0) / 2.0 * c
            + (t + 1.0) * t * (t - 1.0) / 6.0 * d;
        v.max(0.0)
    }

    /// `f'` on the grid (fourth-order central, second-order one-sided at the ends).
    pub fn derivative_values(&self) -> Vec<f64> {
        let h = self.x_grid.step();
        let f = &self.f_values;
        let n = f.len();
        central_derivative(f, h)
            .into_iter()
            .enumerate()
            .map(|(i, d)| match d {
                Some(v) => v,
                None if n < 3 => (f[n - 1] - f[0]) / (h * (n - 1) as f64),
                None if i < 2 => (-3.0 * f[i] + 4.0 * f[i + 1] - f[i + 2]) / (2.0 * h),
                None => (3.0 * f[i] - 4.0 * f[i - 1] + f[i - 2]) / (2.0 * h),
            })
            .collect()
    }

    /// Largest interior value of `|(sigma^2 f)' - 2 S f|`.
    pub fn ode_residual(&self, model: &DiffusionModel) -> f64 {
        let h = self.x_grid.step();
        let flux: Vec<f64> = self
            .x_grid
            .iter()
            .zip(&self.f_values)
            .map(|(x, f)| model.sigma_sq(x) * f)
            .collect();
        central_derivative(&flux, h)
            .into_iter()
            .enumerate()
            .filter_map(|(i, d)| {
                d.map(|d| (d - 2.0 * model.drift(self.x_grid.get(i)) * self.f_values[i]).abs())
            })
            .fold(0.0, f64::max)
    }

    /// `int sigma^2(x) f(x) dx` by trapezoid quadrature on the table.
    pub fn sigma_sq_mean(&self, model: &DiffusionModel) -> f64 {
        let weighted: Vec<f64> = self
            .x_grid
            .iter()
            .zip(&self.f_values)
            .map(|(x, f)| model.sigma_sq(x) * f)
            .collect();
        trapezoid(&weighted, self.x_grid.step())
    }
}

/// Values of `2 int_0^x S/sigma^2` at every point of `grid`, accumulated
/// outward from the origin cell by cell.
fn exponent_on(model: &DiffusionModel, grid: &UniformGrid) -> Vec<f64> {
    let ratio = |u: f64| 2.0 * model.drift(u) / model.sigma_sq(u);
    let n = grid.len();
    let mut out = vec![0.0; n];
    // first index at or right of zero
    let pivot = grid.iter().position(|x| x >= 0.0).unwrap_or(n);
    let mut acc = 0.0;
    let mut prev = 0.0;
    for (i, slot) in out.iter_mut().enumerate().skip(pivot) {
        let x = grid.get(i);
        acc += adaptive_simpson(&ratio, prev, x, EXPONENT_TOL);
        *slot = acc;
        prev = x;
    }
    acc = 0.0;
    prev = 0.0;
    for i in (0..pivot).rev() {
        let x = grid.get(i);
        acc -= adaptive_simpson(&ratio, x, prev, EXPONENT_TOL);
        out[i] = acc;
        prev = x;
    }
    out
}

fn unnormalized(model: &DiffusionModel, x: f64, exponent: f64) -> f64 {
    exponent.exp() / model.sigma_sq(x)
}

/// Normalizing integral `int sigma^{-2} exp(E)`, declared divergent when the
/// window doubling from 64 to 128 still changes it by more than 1e-3 relative.
fn normalizer(model: &DiffusionModel) -> Result<f64> {
    let mut last = f64::NAN;
    for w in NORMALIZER_WINDOWS {
        let intervals = (2.0 * w / NORMALIZER_STEP).round() as usize;
        let grid = UniformGrid::from_step(-w, NORMALIZER_STEP, intervals + 1)?;
        let e = exponent_on(model, &grid);
        let g: Vec<f64> = grid
            .iter()
            .zip(&e)
            .map(|(x, &ex)| unnormalized(model, x, ex))
            .collect();
        // composite Simpson (intervals is even)
        let mut z = g[0] + g[intervals];
        for (i, v) in g.iter().enumerate().take(intervals).skip(1) {
            z += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
        }
        z *= NORMALIZER_STEP / 3.0;
        if !(z.is_finite() && z > 0.0) {
            return Err(model.non_ergodic(format!("normalizing integral is {z} on [-{w}, {w}]")));
        }
        last = if last.is_nan() || w < 128.0 {
            z
        } else if ((z - last) / z).abs() > DIVERGENCE_REL {
            return Err(model.non_ergodic(format!(
                "normalizing integral does not converge ({last} on [-64, 64], {z} on [-128, 128])"
            )));
        } else {
            z
        };
    }
    Ok(last)
}

/// Tabulate the invariant density of `model` on `x_grid`.
pub fn invariant_density(model: &DiffusionModel, x_grid: &UniformGrid) -> Result<DensityTable> {
    model.check_ergodic()?;
    let z = normalizer(model)?;
    let e = exponent_on(model, x_grid);
    let f_values: Vec<f64> = x_grid
        .iter()
        .zip(&e)
        .map(|(x, &ex)| unnormalized(model, x, ex) / z)
        .collect();
    let table = DensityTable::from_parts(*x_grid, f_values, 1.0 / z, model.label().to_string());

    let max = table.max_value();
    let edge = table.f_values[0].max(table.f_values[x_grid.len() - 1]);
    if edge > BOUNDARY_REL * max {
        return Err(Error::GridTooNarrow(format!(
            "density at the grid boundary is {edge:e}, above {BOUNDARY_REL:e} of its maximum"
        )));
    }
    let mass = table.mass();
    if (mass - 1.0).abs() > MASS_TOL {
        return Err(Error::Unresolved(format!("density table integrates to {mass}")));
    }
    let residual = table.ode_residual(model);
    if residual > RESIDUAL_REL * max {
        return Err(Error::Unresolved(format!(
            "ODE residual {residual:e} exceeds {RESIDUAL_REL:e} of max density {max}"
        )));
    }
    Ok(table)
}

/// Default state grid `[-8, 8]` with 4096 points.
pub fn default_density(model: &DiffusionModel) -> Result<DensityTable> {
    let grid = UniformGrid::new(-DEFAULT_X_EXTENT, DEFAULT_X_EXTENT, DEFAULT_DENSITY_POINTS)?;
    invariant_density(model, &grid)
}

/// Characteristic-function table on a symmetric λ-grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CfTable {
    lambda_grid: UniformGrid,
    values: Vec<Complex64>,
    source_label: String,
}

impl CfTable {
    /// Builds a table, failing unless the grid is symmetric about zero.
    pub fn new(lambda_grid: UniformGrid, values: Vec<Complex64>, source_label: impl Into<String>) -> Result<Self> {
        if values.len() != lambda_grid.len() || lambda_grid.len().is_multiple_of(2) {
            return Err(Error::invalid("CF table needs one value per point of an odd-length grid"));
        }
        if (lambda_grid.start() + lambda_grid.end()).abs() > 1e-9 * lambda_grid.step() {
            return Err(Error::invalid("CF table grid must be symmetric about zero"));
        }
        Ok(Self {
            lambda_grid,
            values,
            source_label: source_label.into(),
        })
    }

    /// Tabulates a closed-form transform on `-max ..= max`.
    pub fn from_fn(lambda_max: f64, d_lambda: f64, label: &str, phi: impl Fn(f64) -> Complex64) -> Result<Self> {
        let grid = UniformGrid::symmetric(lambda_max, d_lambda)?;
        let values = grid.iter().map(phi).collect();
        Self::new(grid, values, label)
    }

    pub fn lambda_grid(&self) -> &UniformGrid {
        &self.lambda_grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn source_label(&self) -> &str {
        &self.source_label
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_grid.end()
    }

    /// Value at a grid point.
    pub fn at(&self, lambda: f64) -> Option<Complex64> {
        self.lambda_grid.index_of(lambda).map(|i| self.values[i])
    }
}

fn fourier_of(grid: &UniformGrid, samples: &[f64], lambda_max: f64, d_lambda: f64, label: String) -> Result<CfTable> {
    let lgrid = UniformGrid::symmetric(lambda_max, d_lambda)?;
    let half = lgrid.len() / 2;
    let h = grid.step();
    let n = samples.len();
    let positive: Vec<Complex64> = (0..=half)
        .map(|k| {
            let lambda = k as f64 * d_lambda;
            let mut acc = Complex64::new(0.0, 0.0);
            for (i, (x, &v)) in grid.iter().zip(samples).enumerate() {
                let w = if i == 0 || i + 1 == n { 0.5 * v } else { v };
                let (s, c) = (lambda * x).sin_cos();
                acc += Complex64::new(c * w, s * w);
            }
            acc * h
        })
        .collect();
    let mut values = Vec::with_capacity(lgrid.len());
    values.extend(positive[1..].iter().rev().map(|z| z.conj()));
    values.extend_from_slice(&positive);
    CfTable::new(lgrid, values, label)
}

/// `phi_f(λ) = int e^{iλx} f(x) dx` by trapezoid quadrature over the table.
pub fn density_fourier(table: &DensityTable, lambda_max: f64, d_lambda: f64) -> Result<CfTable> {
    fourier_of(
        table.x_grid(),
        table.f_values(),
        lambda_max,
        d_lambda,
        format!("phi_f[{}]", table.model_label()),
    )
}

/// Transform of `sigma^2 f`, the quantity the weighted ECF estimates.
pub fn weighted_density_fourier(
    table: &DensityTable,
    model: &DiffusionModel,
    lambda_max: f64,
    d_lambda: f64,
) -> Result<CfTable> {
    let weighted: Vec<f64> = table
        .x_grid()
        .iter()
        .zip(table.f_values())
        .map(|(x, f)| model.sigma_sq(x) * f)
        .collect();
    fourier_of(
        table.x_grid(),
        &weighted,
        lambda_max,
        d_lambda,
        format!("phi_sigma2f[{}]", table.model_label()),
    )
}

/// Pinsker's constant
/// `P(k, R) = (2k+1) (k / (pi (k+1) (2k+1)))^{2k/(2k+1)} R^{1/(2k+1)}`.
///
/// Panics unless `k >= 1` and `R > 0`.
pub fn pinsker_constant(k: u32, radius: f64) -> f64 {
    assert!(k >= 1, "smoothness must be at least 1");
    assert!(radius > 0.0, "Sobolev radius must be positive");
    let k = k as f64;
    let two_k1 = 2.0 * k + 1.0;
    two_k1 * (k / (PI * (k + 1.0) * two_k1)).powf(2.0 * k / two_k1) * radius.powf(1.0 / two_k1)
}

/// Constant for a general diffusion coefficient:
/// `P(k, R) (int sigma^2 f)^{2k/(2k+1)}`.
pub fn pinsker_constant_general(k: u32, radius: f64, model: &DiffusionModel) -> Result<f64> {
    let table = default_density(model)?;
    let energy = table.sigma_sq_mean(model);
    let kf = k as f64;
    Ok(pinsker_constant(k, radius) * energy.powf(2.0 * kf / (2.0 * kf + 1.0)))
}

/// Minimax bandwidth and shape for known `(k, R)`:
/// `alpha = (4k / (pi R T (k+1)(2k+1)))^{1/(2k+1)}`, `beta = k + 1/log log(1+T)`.
pub fn optimal_weight(k: u32, radius: f64, horizon: f64) -> Result<SpectralWeight> {
    if k < 1 || !(radius > 0.0) {
        return Err(Error::invalid(format!("need k >= 1 and R > 0 (k = {k}, R = {radius})")));
    }
    if !(horizon > std::f64::consts::E) {
        return Err(Error::invalid(format!("optimal weight needs T > e, got {horizon}")));
    }
    let kf = k as f64;
    let alpha = (4.0 * kf / (PI * radius * horizon * (kf + 1.0) * (2.0 * kf + 1.0))).powf(1.0 / (2.0 * kf + 1.0));
    let rho = 1.0 / (1.0 + horizon).ln().ln();
    SpectralWeight::new(alpha, kf + rho)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ou_table() -> DensityTable {
        default_density(&DiffusionModel::ou()).unwrap()
    }

    #[test]
    fn ou_density_is_gaussian() {
        let t = ou_table();
        let grid = UniformGrid::new(-8.0, 8.0, 4097).unwrap();
        let exact = |x: f64| (-x * x).exp() / PI.sqrt();
        let f0 = invariant_density(&DiffusionModel::ou(), &grid).unwrap().value_at(0.0);
        assert!((f0 - 0.56419).abs() < 1e-5);
        for x in [-1.3, 0.2, 2.0] {
            assert!((t.value_at(x) - exact(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn builtin_tables_satisfy_invariants() {
        for name in crate::sim::BUILTIN_MODELS {
            let model = DiffusionModel::builtin(name).unwrap();
            let t = default_density(&model).unwrap();
            assert!((t.mass() - 1.0).abs() <= 1e-8);
            assert!(t.f_values().iter().all(|&f| f >= 0.0));
            assert!(t.ode_residual(&model) <= 1e-6 * t.max_value(), "{name}");
        }
    }

    #[test]
    fn flat_drift_is_not_ergodic() {
        let flat = DiffusionModel::new("flat", |_| 0.0, |_| 1.0);
        assert!(matches!(default_density(&flat), Err(Error::NonErgodicModel { .. })));
        // passes the probe at x_tail but the normalizer still diverges
        let sneaky = DiffusionModel::new("sneaky", |x: f64| if x.abs() >= 10.0 { -x.signum() * 1e-9 } else { 0.0 }, |_| 1.0);
        assert!(matches!(default_density(&sneaky), Err(Error::NonErgodicModel { .. })));
    }

    #[test]
    fn narrow_grid_is_rejected() {
        let grid = UniformGrid::new(-2.0, 2.0, 1001).unwrap();
        assert!(matches!(
            invariant_density(&DiffusionModel::ou(), &grid),
            Err(Error::GridTooNarrow(_))
        ));
    }

    #[test]
    fn ou_transform_is_gaussian() {
        let cf = density_fourier(&ou_table(), 10.0, 0.01).unwrap();
        assert!((cf.at(0.0).unwrap().re - 1.0).abs() < 1e-8);
        assert!((cf.at(2.0).unwrap().re - (-1f64).exp()).abs() < 1e-4);
        let sup = cf
            .lambda_grid()
            .iter()
            .zip(cf.values())
            .map(|(l, z)| (z - Complex64::new((-l * l / 4.0).exp(), 0.0)).norm())
            .fold(0.0, f64::max);
        assert!(sup <= 1e-4, "sup error {sup}");
        let n = cf.values().len();
        for i in 0..n {
            assert_eq!(cf.values()[i], cf.values()[n - 1 - i].conj());
        }
    }

    #[test]
    fn pinsker_reference_values() {
        assert!((pinsker_constant(1, 1.0) - 0.42357).abs() < 1e-4);
        assert!((pinsker_constant(2, 1.0) - 0.39921).abs() < 1e-4);
        let ratio = pinsker_constant(1, 8.0) / pinsker_constant(1, 1.0);
        assert!((ratio - 2.0).abs() < 1e-14);
        let mut prev = 0.0;
        for r in [0.1, 0.5, 1.0, 2.0, 10.0] {
            let p = pinsker_constant(3, r);
            assert!(p > prev);
            prev = p;
        }
    }

    #[test]
    fn general_constant_reduces_for_constant_sigma() {
        let p = pinsker_constant_general(1, 1.0, &DiffusionModel::ou()).unwrap();
        assert!((p - pinsker_constant(1, 1.0)).abs() < 1e-9);
        let scaled = DiffusionModel::new("ou-c", |x| -3.0 * x, |_| 3.0);
        let p = pinsker_constant_general(1, 1.0, &scaled).unwrap();
        assert!((p - pinsker_constant(1, 1.0) * 3f64.powf(2.0 / 3.0)).abs() < 1e-8);
    }

    #[test]
    fn general_constant_for_varying_sigma() {
        // sigma^2 f = exp(-x^2 - x^4/2) / Z with Z = int (1+x^2) exp(-x^2 - x^4/2)
        let g = |x: f64| (-x * x - 0.5 * x.powi(4)).exp();
        let num = adaptive_simpson(&g, -12.0, 12.0, 1e-14);
        let den = adaptive_simpson(&|x: f64| (1.0 + x * x) * g(x), -12.0, 12.0, 1e-14);
        let expected = pinsker_constant(1, 1.0) * (num / den).powf(2.0 / 3.0);
        let p = pinsker_constant_general(1, 1.0, &DiffusionModel::ou_varsigma()).unwrap();
        assert!((p - expected).abs() < 1e-9, "{p} vs {expected}");
    }

    #[test]
    fn optimal_weight_reference_and_monotonicity() {
        let w = optimal_weight(1, 1.0, 1e4).unwrap();
        assert!((w.alpha() - 0.02769).abs() < 1e-5);
        assert!((w.beta() - 1.0 - 1.0 / (1e4f64 + 1.0).ln().ln()).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for t in [10.0, 100.0, 1e3, 1e4, 1e6] {
            let a = optimal_weight(2, 1.0, t).unwrap().alpha();
            assert!(a < prev);
            prev = a;
        }
        let far = optimal_weight(1, 1.0, 1e300).unwrap();
        assert!(far.beta() - 1.0 < 0.16);
        assert!(optimal_weight(1, 1.0, 2.0).is_err());
    }
}
