//! Quotient drift estimator
//!
//! ```text
//! S(x) = int sigma^2(X_t) K'(x - X_t) dt
//!        / (2 sqrt(T) int Q(sqrt(T)(x - X_t)) dt + 2 sqrt(T) eps_T exp(-l_T |x|))
//! ```
//!
//! where `K` is the inverse Fourier transform of a spectral weight. The
//! numerator is evaluated in the Fourier domain from the ECF table; the
//! time-domain sum is kept as [`time_domain_numerator`] for cross-checks.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::grid::UniformGrid;
use crate::invariant::optimal_weight;
use crate::quad::panelled_simpson;
use crate::selector::{build_grid, selection_trace, SelectionTrace, SpectralWeight};
use crate::sim::{DiffusionModel, Path};
use crate::spectral::{EcfOptions, EcfProvenance, EcfTable};
use crate::{Error, Result};

/// Default estimation grid `[-8, 8]` with 801 points.
pub fn default_x_grid() -> UniformGrid {
    UniformGrid::new(-8.0, 8.0, 801).expect("static grid")
}

/// Smoothing kernel of the denominator, `Q(u) = (15/16)(1 - u^2)^2` on `[-1, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QKernel;

impl QKernel {
    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        if u.abs() >= 1.0 {
            0.0
        } else {
            let v = 1.0 - u * u;
            0.9375 * v * v
        }
    }

    pub fn derivative(&self, u: f64) -> f64 {
        if u.abs() >= 1.0 {
            0.0
        } else {
            -3.75 * u * (1.0 - u * u)
        }
    }

    pub fn integral(&self) -> f64 {
        1.0
    }
}

/// Horizon-dependent constants of the estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularization {
    /// `eps_T = exp(sqrt(log T))`
    pub epsilon: f64,
    /// `l_T = 1 / log T`
    pub ell: f64,
    /// `nu_T = T^{-1/2}`, the denominator bandwidth
    pub nu: f64,
}

impl Regularization {
    pub fn for_horizon(horizon: f64) -> Self {
        let log_t = horizon.ln();
        Self {
            epsilon: log_t.sqrt().exp(),
            ell: 1.0 / log_t,
            nu: horizon.powf(-0.5),
        }
    }

    /// `2 sqrt(T) eps_T exp(-l_T |x|)`
    pub fn floor(&self, horizon: f64, x: f64) -> f64 {
        2.0 * horizon.sqrt() * self.epsilon * (-self.ell * x.abs()).exp()
    }
}

/// `K(x) = (1/pi) int_0^{1/α} h(λ) cos(λx) dλ` and its derivative
/// `K'(x) = -(1/pi) int_0^{1/α} λ h(λ) sin(λx) dλ`.
pub fn kernel_eval(weight: &SpectralWeight, x: f64) -> (f64, f64) {
    let support = weight.support();
    let cycles = (x.abs() * support / (2.0 * PI)).ceil() as usize;
    let panels = 8 + 4 * cycles;
    let k = panelled_simpson(&|l: f64| weight.eval(l) * (l * x).cos(), 0.0, support, panels, 1e-12);
    let dk = if x == 0.0 {
        0.0
    } else {
        -panelled_simpson(&|l: f64| l * weight.eval(l) * (l * x).sin(), 0.0, support, panels, 1e-12)
    };
    (k / PI, dk / PI)
}

/// Drift estimate on a grid, with its numerator and denominator pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftEstimate {
    pub(crate) x_grid: UniformGrid,
    pub(crate) s_values: Vec<f64>,
    pub(crate) f_bar: Vec<f64>,
    pub(crate) f1_bar: Vec<f64>,
    pub(crate) weight: SpectralWeight,
    pub(crate) horizon: f64,
    pub(crate) dt: f64,
    pub(crate) seed: u64,
}

impl DriftEstimate {
    pub fn x_grid(&self) -> &UniformGrid {
        &self.x_grid
    }

    pub fn s_values(&self) -> &[f64] {
        &self.s_values
    }

    /// Denominator density estimate `T^{-1/2} int Q(sqrt(T)(x - X_t)) dt`.
    pub fn f_bar(&self) -> &[f64] {
        &self.f_bar
    }

    /// Numerator divided by `T`.
    pub fn f1_bar(&self) -> &[f64] {
        &self.f1_bar
    }

    pub fn weight(&self) -> SpectralWeight {
        self.weight
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn regularization(&self) -> Regularization {
        Regularization::for_horizon(self.horizon)
    }

    /// Same grid and provenance with replaced drift values.
    pub fn with_values(&self, s_values: Vec<f64>) -> Result<Self> {
        if s_values.len() != self.x_grid.len() {
            return Err(Error::GridMismatch("value count differs from the grid".into()));
        }
        Ok(Self {
            s_values,
            ..self.clone()
        })
    }

    /// Estimate with no data behind it: `f_bar = f1_bar = 0`.
    pub fn from_values(
        x_grid: UniformGrid,
        s_values: Vec<f64>,
        weight: SpectralWeight,
        horizon: f64,
    ) -> Result<Self> {
        if s_values.len() != x_grid.len() {
            return Err(Error::GridMismatch("value count differs from the grid".into()));
        }
        let n = s_values.len();
        Ok(Self {
            x_grid,
            s_values,
            f_bar: vec![0.0; n],
            f1_bar: vec![0.0; n],
            weight,
            horizon,
            dt: f64::NAN,
            seed: 0,
        })
    }
}

/// Trapezoid nodes `(λ_k, weight_k)` on `[0, 1/α]` using only ECF grid
/// points strictly inside the support; the closing partial cell ends where
/// the weight vanishes.
fn support_nodes(ecf: &EcfTable, weight: &SpectralWeight) -> Vec<(usize, f64)> {
    let grid = ecf.lambda_grid();
    let step = grid.step();
    let support = weight.support();
    let m = (0..grid.len()).take_while(|&k| grid.get(k) < support).count();
    let mut nodes: Vec<(usize, f64)> = (0..m).map(|k| (k, step)).collect();
    nodes[0].1 = 0.5 * step;
    if m == 1 {
        nodes[0].1 = 0.5 * support;
    } else {
        nodes[m - 1].1 = 0.5 * step + 0.5 * (support - grid.get(m - 1));
    }
    nodes
}

/// `N(x) = (T/2pi) int (-iλ) h(λ) phi_hat(λ) e^{-iλx} dλ`, real part.
fn fourier_numerator(ecf: &EcfTable, weight: &SpectralWeight, xs: &[f64]) -> Vec<f64> {
    let grid = ecf.lambda_grid();
    let terms: Vec<(f64, f64, f64)> = support_nodes(ecf, weight)
        .into_iter()
        .map(|(k, w)| {
            let l = grid.get(k);
            let z = ecf.values()[k];
            let c = w * l * weight.eval(l);
            (l, c * z.re, c * z.im)
        })
        .collect();
    let scale = ecf.horizon() / PI;
    xs.par_iter()
        .map(|&x| {
            let mut acc = 0.0;
            for &(l, a, b) in &terms {
                let (s, c) = (l * x).sin_cos();
                acc += b * c - a * s;
            }
            scale * acc
        })
        .collect()
}

/// `sum_t sigma^2(X_t) K'(x - X_t) dt` over all path cells, with `K'` from
/// [`kernel_eval`].
pub fn time_domain_numerator(path: &Path, model: &DiffusionModel, weight: &SpectralWeight, x: f64) -> f64 {
    let n = path.steps();
    path.values()[..n]
        .iter()
        .map(|&v| model.sigma_sq(v) * kernel_eval(weight, x - v).1)
        .sum::<f64>()
        * path.dt()
}

/// `sum_t Q(sqrt(T)(x - X_t)) dt` using a sorted copy of the path so only
/// points within `nu_T` of `x` are visited.
struct OccupationSmoother {
    sorted: Vec<f64>,
    scale: f64,
    dt: f64,
}

impl OccupationSmoother {
    fn new(path: &Path) -> Self {
        let mut sorted = path.values()[..path.steps()].to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        Self {
            sorted,
            scale: path.horizon().sqrt(),
            dt: path.dt(),
        }
    }

    fn at(&self, x: f64) -> f64 {
        let half = 1.0 / self.scale;
        let lo = self.sorted.partition_point(|&v| v <= x - half);
        let hi = self.sorted.partition_point(|&v| v < x + half);
        let q = QKernel;
        self.sorted[lo..hi]
            .iter()
            .map(|&v| q.eval(self.scale * (x - v)))
            .sum::<f64>()
            * self.dt
    }
}

/// Quotient estimator for a fixed weight. `ecf` must come from `path`.
pub fn drift_estimate(
    path: &Path,
    model: &DiffusionModel,
    weight: &SpectralWeight,
    ecf: &EcfTable,
    x_grid: &UniformGrid,
) -> Result<DriftEstimate> {
    match ecf.provenance() {
        Some(p) if p == EcfProvenance::of(path) => {}
        Some(p) => {
            return Err(Error::EcfMismatch(format!(
                "ECF built from (seed {}, {} steps, dt {}), path is (seed {}, {} steps, dt {})",
                p.seed,
                p.steps,
                p.dt,
                path.seed(),
                path.steps(),
                path.dt()
            )))
        }
        None => return Err(Error::EcfMismatch("ECF table has no path provenance".into())),
    }
    ecf.require_support(weight)?;
    let _ = model;

    let horizon = path.horizon();
    let reg = Regularization::for_horizon(horizon);
    let xs = x_grid.to_vec();
    let numerator = fourier_numerator(ecf, weight, &xs);
    let smoother = OccupationSmoother::new(path);
    let occupation: Vec<f64> = xs.par_iter().map(|&x| smoother.at(x)).collect();

    let root_t = horizon.sqrt();
    let mut s_values = Vec::with_capacity(xs.len());
    let mut f_bar = Vec::with_capacity(xs.len());
    let mut f1_bar = Vec::with_capacity(xs.len());
    for ((&x, &num), &occ) in xs.iter().zip(&numerator).zip(&occupation) {
        let smoothed = 2.0 * root_t * occ;
        let denominator = smoothed + reg.floor(horizon, x);
        s_values.push(num / denominator);
        f_bar.push(smoothed / (2.0 * horizon));
        f1_bar.push(num / horizon);
    }
    Ok(DriftEstimate {
        x_grid: *x_grid,
        s_values,
        f_bar,
        f1_bar,
        weight: *weight,
        horizon,
        dt: path.dt(),
        seed: path.seed(),
    })
}

/// Adaptive estimate together with the selection scores behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveFit {
    pub estimate: DriftEstimate,
    pub trace: SelectionTrace,
}

pub fn adaptive_fit(
    path: &Path,
    model: &DiffusionModel,
    x_grid: &UniformGrid,
    options: &EcfOptions,
) -> Result<AdaptiveFit> {
    let grid = build_grid(path.horizon())?;
    let ecf = options.build(path, model)?;
    let trace = selection_trace(&grid, &ecf)?;
    let weight = trace.selected().entry.weight;
    let estimate = drift_estimate(path, model, &weight, &ecf, x_grid)?;
    Ok(AdaptiveFit { estimate, trace })
}

/// Fully data-driven estimate: candidate grid, ECF, selection, assembly.
pub fn adaptive_drift(
    path: &Path,
    model: &DiffusionModel,
    x_grid: &UniformGrid,
    options: &EcfOptions,
) -> Result<DriftEstimate> {
    adaptive_fit(path, model, x_grid, options).map(|fit| fit.estimate)
}

/// Estimate with the minimax weight for known smoothness `k` and radius `R`.
/// The ECF grid is widened when `1/α` lies beyond the default λ range.
pub fn nonadaptive_drift(
    path: &Path,
    model: &DiffusionModel,
    k: u32,
    radius: f64,
    x_grid: &UniformGrid,
    options: &EcfOptions,
) -> Result<DriftEstimate> {
    let weight = optimal_weight(k, radius, path.horizon())?;
    let lambda_max = options.lambda_max_for(path.horizon()).max(weight.support());
    let ecf = EcfOptions {
        lambda_max: Some(lambda_max),
        ..*options
    }
    .build(path, model)?;
    drift_estimate(path, model, &weight, &ecf, x_grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{adaptive_simpson, trapezoid};
    use crate::sim::{default_step, simulate_path, Init};
    use crate::spectral::empirical_cf;

    #[test]
    fn q_kernel_properties() {
        let q = QKernel;
        let mass = adaptive_simpson(&|u| q.eval(u), -1.0, 1.0, 1e-14);
        assert!((mass - 1.0).abs() < 1e-10);
        assert_eq!(q.integral(), 1.0);
        for u in [0.1, 0.5, 0.99] {
            assert_eq!(q.eval(u), q.eval(-u));
        }
        assert_eq!(q.derivative(1.0), 0.0);
        assert!(q.derivative(1.0 - 1e-9).abs() < 1e-8);
        assert_eq!(q.eval(1.5), 0.0);
    }

    #[test]
    fn kernel_reference_values() {
        let w = SpectralWeight::new(1.0, 1.0 + 1e-12).unwrap();
        let (k0, dk0) = kernel_eval(&w, 0.0);
        assert!((k0 - 1.0 / (2.0 * PI)).abs() < 1e-10);
        assert_eq!(dk0, 0.0);
        let w = SpectralWeight::new(0.13, 2.7).unwrap();
        assert_eq!(kernel_eval(&w, 0.0).1, 0.0);
        // K' matches a finite difference of K
        let x = 0.8;
        let h = 1e-4;
        let fd = (kernel_eval(&w, x + h).0 - kernel_eval(&w, x - h).0) / (2.0 * h);
        assert!((fd - kernel_eval(&w, x).1).abs() < 1e-6);
    }

    #[test]
    fn kernel_has_unit_mass() {
        let w = SpectralWeight::new(0.5, 2.0).unwrap();
        let reach = 25.0 / w.alpha();
        let grid = UniformGrid::new(-reach, reach, 5_001).unwrap();
        let vals: Vec<f64> = grid.iter().map(|x| kernel_eval(&w, x).0).collect();
        let mass = trapezoid(&vals, grid.step());
        assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
    }

    fn ou_setup(horizon: f64, seed: u64) -> (DiffusionModel, Path) {
        let model = DiffusionModel::ou();
        let path = simulate_path(&model, horizon, default_step(horizon), Init::Stationary, seed).unwrap();
        (model, path)
    }

    #[test]
    fn mismatched_ecf_is_rejected() {
        let (model, path) = ou_setup(50.0, 1);
        let (_, other) = ou_setup(50.0, 2);
        let ecf = EcfOptions::default().build(&other, &model).unwrap();
        let w = SpectralWeight::new(0.3, 2.0).unwrap();
        let grid = default_x_grid();
        assert!(matches!(
            drift_estimate(&path, &model, &w, &ecf, &grid),
            Err(Error::EcfMismatch(_))
        ));
        let ecf = EcfOptions::default().build(&path, &model).unwrap();
        let narrow = SpectralWeight::new(0.05, 2.0).unwrap();
        assert!(matches!(
            drift_estimate(&path, &model, &narrow, &ecf, &grid),
            Err(Error::GridTooNarrow(_))
        ));
    }

    #[test]
    fn floor_bounds_the_estimate() {
        let (model, path) = ou_setup(200.0, 4);
        let grid = UniformGrid::new(-50.0, 50.0, 1001).unwrap();
        let est = adaptive_drift(&path, &model, &grid, &EcfOptions::default()).unwrap();
        let reg = est.regularization();
        let t = est.horizon();
        let num_sup = est.f1_bar().iter().map(|v| (v * t).abs()).fold(0.0, f64::max);
        for (x, s) in grid.iter().zip(est.s_values()) {
            assert!(s.is_finite());
            assert!(s.abs() <= num_sup / reg.floor(t, x) * (1.0 + 1e-12));
            assert!(reg.floor(t, x) >= reg.floor(t, 50.0));
        }
    }

    #[test]
    fn fourier_and_time_domain_numerators_agree() {
        let model = DiffusionModel::quartic();
        let path = simulate_path(&model, 10.0, 0.01, Init::Stationary, 8).unwrap();
        let ecf = empirical_cf(&path, &model, 10.0, 1e-3, 1).unwrap();
        let w = SpectralWeight::new(0.35, 1.8).unwrap();
        let grid = UniformGrid::new(-1.0, 1.0, 3).unwrap();
        let est = drift_estimate(&path, &model, &w, &ecf, &grid).unwrap();
        for (x, f1) in grid.iter().zip(est.f1_bar()) {
            let fourier = f1 * path.horizon();
            let direct = time_domain_numerator(&path, &model, &w, x);
            assert!(((fourier - direct) / direct).abs() < 1e-3, "x = {x}: {fourier} vs {direct}");
        }
    }

    #[test]
    fn adaptive_is_the_composition_of_its_steps() {
        let (model, path) = ou_setup(300.0, 12);
        let grid = default_x_grid();
        let opts = EcfOptions::default();
        let fit = adaptive_fit(&path, &model, &grid, &opts).unwrap();
        let ecf = opts.build(&path, &model).unwrap();
        let w = crate::selector::select_weight(&build_grid(300.0).unwrap(), &ecf).unwrap();
        let manual = drift_estimate(&path, &model, &w, &ecf, &grid).unwrap();
        assert_eq!(fit.estimate, manual);
        assert_eq!(fit.estimate.weight(), fit.trace.selected().entry.weight);
        let best = fit
            .trace
            .candidates()
            .iter()
            .map(|c| c.score)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(fit.trace.selected().score, best);
    }

    #[test]
    fn nonadaptive_uses_the_minimax_weight() {
        let (model, path) = ou_setup(400.0, 6);
        let est = nonadaptive_drift(&path, &model, 1, 1.0, &default_x_grid(), &EcfOptions::default()).unwrap();
        assert_eq!(est.weight(), optimal_weight(1, 1.0, 400.0).unwrap());
        let w = optimal_weight(1, 1.0, 1e4).unwrap();
        assert!((w.support() - 1.0 / 0.02769).abs() < 0.02);
    }

    #[test]
    fn quartic_estimate_is_finite_everywhere() {
        let model = DiffusionModel::quartic();
        let path = simulate_path(&model, 2000.0, default_step(2000.0), Init::Stationary, 21).unwrap();
        let est = adaptive_drift(&path, &model, &default_x_grid(), &EcfOptions::default()).unwrap();
        assert!(est.s_values().iter().all(|s| s.is_finite()));
        let mass = trapezoid(est.f_bar(), est.x_grid().step());
        assert!((0.95..=1.0 + 1e-9).contains(&mass), "f_bar mass {mass}");
    }

    #[test]
    fn symmetric_path_gives_odd_estimate() {
        let base = simulate_path(&DiffusionModel::ou(), 20.0, 0.01, Init::Stationary, 30).unwrap();
        let mut vals: Vec<f64> = Vec::new();
        for &v in &base.values()[..base.steps()] {
            vals.push(v);
            vals.push(-v);
        }
        vals.push(0.0);
        let path = Path::from_values(0.005, vals, 99).unwrap();
        let model = DiffusionModel::ou_varsigma();
        let ecf = empirical_cf(&path, &model, 10.0, 0.01, 1).unwrap();
        let w = SpectralWeight::new(0.3, 2.0).unwrap();
        let grid = UniformGrid::new(-3.0, 3.0, 61).unwrap();
        let est = drift_estimate(&path, &model, &w, &ecf, &grid).unwrap();
        let s = est.s_values();
        let scale = s.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for i in 0..s.len() {
            assert!((s[i] + s[s.len() - 1 - i]).abs() < 1e-9 * scale);
        }
    }
}
