//! Empirical characteristic function of a path and the quantities built
//! from it: `sigma_hat^2`, the debiased `|phi|^2` estimate and the oracle
//! risk functional used to check the selector.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::grid::UniformGrid;
use crate::invariant::CfTable;
use crate::selector::SpectralWeight;
use crate::sim::{DiffusionModel, Path};
use crate::{Error, Result};

/// Largest time span `stride * dt` between ECF samples.
pub const MAX_STRIDE_TIME: f64 = 0.05;
/// Span used when no stride is given. At `0.05` the subsampled ECF drifts
/// from the full-resolution one by about `5e-3` for `λ` near 10 at `T = 1000`;
/// at this span the gap stays below `1e-3`.
pub const DEFAULT_STRIDE_TIME: f64 = 0.005;
pub const DEFAULT_D_LAMBDA: f64 = 0.01;
pub const MIN_LAMBDA_MAX: f64 = 10.0;

/// Identifies the path an [`EcfTable`] was computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcfProvenance {
    pub seed: u64,
    pub steps: usize,
    pub dt: f64,
}

impl EcfProvenance {
    pub fn of(path: &Path) -> Self {
        Self {
            seed: path.seed(),
            steps: path.steps(),
            dt: path.dt(),
        }
    }
}

/// `phi_hat_T(λ) = T^{-1} int_0^T e^{iλX_t} sigma^2(X_t) dt` on `λ >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct EcfTable {
    lambda_grid: UniformGrid,
    values: Vec<Complex64>,
    sigma_hat_sq: f64,
    horizon: f64,
    path_stride: usize,
    provenance: Option<EcfProvenance>,
}

impl EcfTable {
    /// Table from externally supplied values (synthetic or exact transforms).
    /// The grid must start at zero.
    pub fn from_values(
        lambda_grid: UniformGrid,
        values: Vec<Complex64>,
        sigma_hat_sq: f64,
        horizon: f64,
    ) -> Result<Self> {
        if lambda_grid.start() != 0.0 || values.len() != lambda_grid.len() {
            return Err(Error::invalid("ECF grid must start at 0 with one value per point"));
        }
        if !(sigma_hat_sq > 0.0 && horizon > 0.0) {
            return Err(Error::invalid("sigma_hat^2 and T must be positive"));
        }
        Ok(Self {
            lambda_grid,
            values,
            sigma_hat_sq,
            horizon,
            path_stride: 1,
            provenance: None,
        })
    }

    pub(crate) fn with_provenance(mut self, stride: usize, provenance: Option<EcfProvenance>) -> Self {
        self.path_stride = stride;
        self.provenance = provenance;
        self
    }

    pub fn lambda_grid(&self) -> &UniformGrid {
        &self.lambda_grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn sigma_hat_sq(&self) -> f64 {
        self.sigma_hat_sq
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn path_stride(&self) -> usize {
        self.path_stride
    }

    pub fn provenance(&self) -> Option<EcfProvenance> {
        self.provenance
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_grid.end()
    }

    /// Value at a grid point; negative λ uses Hermitian symmetry.
    pub fn at(&self, lambda: f64) -> Option<Complex64> {
        let z = self.lambda_grid.index_of(lambda.abs()).map(|i| self.values[i])?;
        Some(if lambda < 0.0 { z.conj() } else { z })
    }

    /// Fails unless the stored grid reaches `1/alpha`.
    pub(crate) fn require_support(&self, weight: &SpectralWeight) -> Result<()> {
        if self.lambda_max() < weight.support() * (1.0 - 1e-12) {
            return Err(Error::GridTooNarrow(format!(
                "ECF grid ends at {} but the weight support is {}",
                self.lambda_max(),
                weight.support()
            )));
        }
        Ok(())
    }
}

/// λ-grid and subsampling settings for [`empirical_cf`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcfOptions {
    /// Defaults to `max(T^{1/3}, 10)`.
    pub lambda_max: Option<f64>,
    pub d_lambda: f64,
    /// Defaults to the coarsest stride with `stride * dt <= DEFAULT_STRIDE_TIME`.
    pub stride: Option<usize>,
}

impl Default for EcfOptions {
    fn default() -> Self {
        Self {
            lambda_max: None,
            d_lambda: DEFAULT_D_LAMBDA,
            stride: None,
        }
    }
}

impl EcfOptions {
    pub fn lambda_max_for(&self, horizon: f64) -> f64 {
        self.lambda_max.unwrap_or_else(|| horizon.cbrt().max(MIN_LAMBDA_MAX))
    }

    pub fn stride_for(&self, dt: f64) -> usize {
        self.stride
            .unwrap_or_else(|| ((DEFAULT_STRIDE_TIME / dt) * (1.0 + 1e-12)).floor().max(1.0) as usize)
    }

    pub fn build(&self, path: &Path, model: &DiffusionModel) -> Result<EcfTable> {
        empirical_cf(
            path,
            model,
            self.lambda_max_for(path.horizon()),
            self.d_lambda,
            self.stride_for(path.dt()),
        )
    }
}

/// Sampled time points `X_{j*stride}` with their cell counts. Cell counts
/// are integers so that the weights sum to `T / dt` exactly.
fn strided_samples(path: &Path, model: &DiffusionModel, stride: usize) -> (Vec<f64>, Vec<f64>) {
    let n = path.steps();
    let values = path.values();
    let mut xs = Vec::with_capacity(n / stride + 1);
    let mut ws = Vec::with_capacity(n / stride + 1);
    let mut j = 0;
    while j < n {
        let cells = stride.min(n - j) as f64;
        xs.push(values[j]);
        ws.push(model.sigma_sq(values[j]) * cells);
        j += stride;
    }
    (xs, ws)
}

/// λ points per block. Each block starts from a direct `sin_cos` and advances
/// by complex rotation, so the result depends on this constant but not on
/// how blocks are scheduled across threads.
const LAMBDA_BLOCK: usize = 64;

fn ecf_sums(grid: &UniformGrid, xs: &[f64], ws: &[f64], cells: f64) -> Vec<Complex64> {
    let rotations: Vec<(f64, f64)> = xs.iter().map(|&x| (grid.step() * x).sin_cos()).collect();
    let blocks = grid.len().div_ceil(LAMBDA_BLOCK);
    let chunks: Vec<Vec<Complex64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let first = b * LAMBDA_BLOCK;
            let len = LAMBDA_BLOCK.min(grid.len() - first);
            let lambda0 = grid.get(first);
            let mut re = [0.0; LAMBDA_BLOCK];
            let mut im = [0.0; LAMBDA_BLOCK];
            // four interleaved rotation chains per pass
            let mut start = 0;
            while start < xs.len() {
                let group = (xs.len() - start).min(4);
                let mut c = [0.0; 4];
                let mut s = [0.0; 4];
                let mut dc = [1.0; 4];
                let mut ds = [0.0; 4];
                for g in 0..group {
                    let idx = start + g;
                    let (s0, c0) = (lambda0 * xs[idx]).sin_cos();
                    c[g] = c0 * ws[idx];
                    s[g] = s0 * ws[idx];
                    (ds[g], dc[g]) = rotations[idx];
                }
                for k in 0..len {
                    re[k] += (c[0] + c[1]) + (c[2] + c[3]);
                    im[k] += (s[0] + s[1]) + (s[2] + s[3]);
                    for g in 0..4 {
                        let next = c[g] * dc[g] - s[g] * ds[g];
                        s[g] = s[g] * dc[g] + c[g] * ds[g];
                        c[g] = next;
                    }
                }
                start += group;
            }
            (0..len).map(|k| Complex64::new(re[k] / cells, im[k] / cells)).collect()
        })
        .collect();
    chunks.into_iter().flatten().collect()
}

/// Left-endpoint Riemann sum of the sigma^2-weighted ECF on `[0, λ_max]`.
pub fn empirical_cf(
    path: &Path,
    model: &DiffusionModel,
    lambda_max: f64,
    d_lambda: f64,
    stride: usize,
) -> Result<EcfTable> {
    let horizon = path.horizon();
    if lambda_max < horizon.cbrt() {
        return Err(Error::GridTooNarrow(format!(
            "lambda_max = {lambda_max} is below T^(1/3) = {}",
            horizon.cbrt()
        )));
    }
    if stride == 0 || stride as f64 * path.dt() > MAX_STRIDE_TIME * (1.0 + 1e-12) {
        return Err(Error::StrideTooCoarse {
            stride,
            dt: path.dt(),
            limit: MAX_STRIDE_TIME,
        });
    }
    let grid = UniformGrid::nonnegative(lambda_max, d_lambda)?;
    let (xs, ws) = strided_samples(path, model, stride);
    let values = ecf_sums(&grid, &xs, &ws, path.steps() as f64);
    // identical summation to the λ = 0 entry
    let sigma_hat_sq = values[0].re;
    Ok(EcfTable {
        lambda_grid: grid,
        values,
        sigma_hat_sq,
        horizon,
        path_stride: stride,
        provenance: Some(EcfProvenance::of(path)),
    })
}

/// `T^{-1} int_0^T sigma^2(X_t) dt` at full path resolution.
pub fn sigma_hat_sq(path: &Path, model: &DiffusionModel) -> f64 {
    let n = path.steps();
    let total: f64 = path.values()[..n].iter().map(|&x| model.sigma_sq(x)).sum();
    total / n as f64
}

/// `|phi_hat(λ)|^2 - 4 sigma_hat^2 / (T λ^2)`. Not clipped at zero.
pub fn cf_sq_unbiased(ecf: &EcfTable, lambda: f64) -> Result<f64> {
    if lambda == 0.0 {
        return Err(Error::ZeroLambda);
    }
    let z = ecf.at(lambda).ok_or(Error::OffGrid(lambda))?;
    Ok(z.norm_sqr() - 4.0 * ecf.sigma_hat_sq() / (ecf.horizon() * lambda * lambda))
}

/// `T int |λ m(λ) phi(λ)|^2 dλ` by trapezoid quadrature over the table.
pub fn weighted_cf_energy(cf: &CfTable, horizon: f64, multiplier: impl Fn(f64) -> f64) -> f64 {
    let grid = cf.lambda_grid();
    let samples: Vec<f64> = grid
        .iter()
        .zip(cf.values())
        .map(|(l, z)| {
            let m = multiplier(l);
            l * l * m * m * z.norm_sqr()
        })
        .collect();
    horizon * crate::quad::trapezoid(&samples, grid.step())
}

/// The two parts of the oracle risk functional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaTerms {
    /// `T int |λ (1 - h(λ)) phi(λ)|^2 dλ`
    pub bias: f64,
    /// `4 (int sigma^2 f) int h(λ)^2 dλ`
    pub variance: f64,
}

impl DeltaTerms {
    pub fn total(&self) -> f64 {
        self.bias + self.variance
    }
}

/// Oracle functional for the scaled weight `h(λ) = (1 - |αλ|^β)_+` given the
/// exact transform of `sigma^2 f` and `int sigma^2 f`.
pub fn delta_terms(weight: &SpectralWeight, cf: &CfTable, sigma_l2f: f64, horizon: f64) -> Result<DeltaTerms> {
    if cf.lambda_max() < weight.support() {
        return Err(Error::GridTooNarrow(format!(
            "CF grid ends at {} inside the weight support {}",
            cf.lambda_max(),
            weight.support()
        )));
    }
    let values = cf.values();
    let tail = values[0].norm().max(values[values.len() - 1].norm());
    let center = cf.at(0.0).map_or(0.0, |z| z.norm());
    if tail > 1e-6 * center {
        return Err(Error::GridTooNarrow(format!(
            "CF has not decayed at the grid edge (|phi| = {tail:e})"
        )));
    }
    Ok(DeltaTerms {
        bias: weighted_cf_energy(cf, horizon, |l| 1.0 - weight.eval(l)),
        variance: 4.0 * sigma_l2f * weight.integral_sq(),
    })
}

pub fn delta_oracle(weight: &SpectralWeight, cf: &CfTable, sigma_l2f: f64, horizon: f64) -> Result<f64> {
    delta_terms(weight, cf, sigma_l2f, horizon).map(|d| d.total())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::invariant::{default_density, density_fourier};
    use crate::sim::{simulate_path, Init};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn unit() -> DiffusionModel {
        DiffusionModel::new("unit", |x| -x, |_| 1.0)
    }

    #[test]
    fn constant_path_gives_pure_phase() {
        let c = 0.7;
        let path = Path::from_values(0.01, vec![c; 1001], 0).unwrap();
        let ecf = empirical_cf(&path, &unit(), 10.0, 0.01, 1).unwrap();
        for l in [0.0, 0.5, 3.0, 10.0] {
            let z = ecf.at(l).unwrap();
            let exact = Complex64::from_polar(1.0, l * c);
            assert!((z - exact).norm() < 1e-12, "λ = {l}");
        }
        assert_eq!(ecf.sigma_hat_sq(), 1.0);
    }

    #[test]
    fn sigma_hat_is_exact_for_constant_coefficients() {
        let path = simulate_path(&DiffusionModel::ou(), 20.0, 0.01, Init::Fixed(0.0), 3).unwrap();
        assert_eq!(sigma_hat_sq(&path, &DiffusionModel::ou()), 1.0);
        let m = DiffusionModel::new("c", |x| -x, |_| 2.5);
        assert_eq!(sigma_hat_sq(&path, &m), 2.5);
        let ecf = empirical_cf(&path, &m, 10.0, 0.01, 3).unwrap();
        assert_eq!(ecf.sigma_hat_sq(), 2.5);
    }

    #[test]
    fn preconditions_are_checked() {
        let path = Path::from_values(0.01, vec![0.0; 1_000_001], 0).unwrap();
        assert!(matches!(
            empirical_cf(&path, &unit(), 10.0, 0.01, 1),
            Err(Error::GridTooNarrow(_))
        ));
        assert!(matches!(
            empirical_cf(&path, &unit(), 30.0, 0.01, 6),
            Err(Error::StrideTooCoarse { .. })
        ));
        assert!(empirical_cf(&path, &unit(), 30.0, 0.5, 5).is_ok());
    }

    #[test]
    fn unbiased_square_on_synthetic_table() {
        let grid = UniformGrid::nonnegative(10.0, 0.01).unwrap();
        let ecf = EcfTable::from_values(grid, vec![Complex64::new(0.0, 0.0); grid.len()], 1.0, 100.0).unwrap();
        assert!(matches!(cf_sq_unbiased(&ecf, 0.0), Err(Error::ZeroLambda)));
        assert!((cf_sq_unbiased(&ecf, 1.0).unwrap() + 0.04).abs() < 1e-15);
        assert!((cf_sq_unbiased(&ecf, -1.0).unwrap() + 0.04).abs() < 1e-15);
        assert!(matches!(cf_sq_unbiased(&ecf, 0.005), Err(Error::OffGrid(_))));
    }

    #[test]
    fn delta_terms_closed_forms() {
        let table = default_density(&DiffusionModel::ou()).unwrap();
        let cf = density_fourier(&table, 12.0, 0.01).unwrap();
        // h = 0: T int λ^2 e^{-λ^2/2} = T sqrt(2 pi)
        let t = 1000.0;
        let e = weighted_cf_energy(&cf, t, |_| 1.0);
        assert!((e / t - (2.0 * PI).sqrt()).abs() < 1e-6);
        let w = SpectralWeight::new(0.5, 1.0 + 1e-12).unwrap();
        let d = delta_terms(&w, &cf, 1.0, t).unwrap();
        assert!((d.variance - 16.0 / 3.0).abs() < 1e-9);
        assert!(d.bias >= 0.0 && d.total() >= d.variance);
        let narrow = density_fourier(&table, 1.5, 0.01).unwrap();
        assert!(matches!(delta_terms(&w, &narrow, 1.0, t), Err(Error::GridTooNarrow(_))));
    }

    #[test]
    fn plancherel_links_both_risk_representations() {
        // T int λ^2 |phi_f|^2 dλ = 2 pi T int (f')^2 dx
        for name in crate::sim::BUILTIN_MODELS {
            let model = DiffusionModel::builtin(name).unwrap();
            let table = default_density(&model).unwrap();
            let cf = density_fourier(&table, 25.0, 0.01).unwrap();
            let spectral = weighted_cf_energy(&cf, 1.0, |_| 1.0);
            let d: Vec<f64> = table.derivative_values().iter().map(|v| v * v).collect();
            let spatial = 2.0 * PI * crate::quad::trapezoid(&d, table.x_grid().step());
            assert!(((spectral - spatial) / spatial).abs() < 1e-4, "{name}: {spectral} vs {spatial}");
        }
    }

    #[test]
    fn striding_barely_moves_the_ecf() {
        for name in crate::sim::BUILTIN_MODELS {
            let model = DiffusionModel::builtin(name).unwrap();
            let t = 1000.0;
            let path = simulate_path(&model, t, crate::sim::default_step(t), Init::Stationary, 77).unwrap();
            let full = empirical_cf(&path, &model, 10.0, 0.05, 1).unwrap();
            let coarse = EcfOptions {
                lambda_max: Some(10.0),
                d_lambda: 0.05,
                stride: None,
            }
            .build(&path, &model)
            .unwrap();
            assert!(coarse.path_stride() > 1);
            let worst = full
                .values()
                .iter()
                .zip(coarse.values())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(worst <= 1e-3, "{name}: {worst}");
        }
    }

    #[test]
    fn blocked_sums_match_direct_evaluation_and_ignore_thread_count() {
        let model = DiffusionModel::ou_varsigma();
        let path = simulate_path(&model, 30.0, 0.005, Init::Stationary, 5).unwrap();
        let ecf = empirical_cf(&path, &model, 10.0, 0.01, 1).unwrap();
        let n = path.steps();
        for l in [0.37, 4.0, 9.99] {
            let direct: Complex64 = path.values()[..n]
                .iter()
                .map(|&x| Complex64::from_polar(model.sigma_sq(x), l * x))
                .sum::<Complex64>()
                / n as f64;
            assert!((ecf.at(l).unwrap() - direct).norm() < 1e-12);
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let threaded = pool.install(|| empirical_cf(&path, &model, 10.0, 0.01, 1).unwrap());
        assert_eq!(threaded, ecf);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn ecf_is_bounded_by_its_value_at_zero(
            values in proptest::collection::vec(-5.0f64..5.0, 20..200),
            stride in 1usize..5,
        ) {
            let model = DiffusionModel::ou_varsigma();
            let path = Path::from_values(0.01, values, 1).unwrap();
            let ecf = empirical_cf(&path, &model, 10.0, 0.1, stride).unwrap();
            prop_assert_eq!(ecf.values()[0].re, ecf.sigma_hat_sq());
            prop_assert_eq!(ecf.values()[0].im, 0.0);
            for z in ecf.values() {
                prop_assert!(z.norm() <= ecf.sigma_hat_sq() * (1.0 + 1e-12));
            }
        }
    }
}
