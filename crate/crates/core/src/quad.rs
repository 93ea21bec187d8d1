//! Quadrature helpers shared by the density, spectral and estimator modules.

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol || (m - a).abs() <= f64::EPSILON * m.abs() {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson after splitting `[a, b]` into `panels` equal pieces.
/// Needed for oscillatory integrands, where a single coarse first pass can
/// alias to a spuriously converged value.
pub fn panelled_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panels: usize, tol: f64) -> f64 {
    let panels = panels.max(1);
    let width = (b - a) / panels as f64;
    let tol = tol / panels as f64;
    (0..panels)
        .map(|p| {
            let lo = a + p as f64 * width;
            let hi = if p + 1 == panels { b } else { lo + width };
            adaptive_simpson(f, lo, hi, tol)
        })
        .sum()
}

/// Trapezoid rule for samples on a uniform grid with spacing `step`.
pub fn trapezoid(values: &[f64], step: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let interior: f64 = values[1..n - 1].iter().sum();
            step * (interior + 0.5 * (values[0] + values[n - 1]))
        }
    }
}

/// Fourth-order central difference of uniformly spaced samples.
/// The two points at each end are left as `None`.
pub fn central_derivative(values: &[f64], step: f64) -> Vec<Option<f64>> {
    let n = values.len();
    (0..n)
        .map(|i| {
            if i < 2 || i + 2 >= n {
                None
            } else {
                Some(
                    (values[i - 2] - 8.0 * values[i - 1] + 8.0 * values[i + 1] - values[i + 2])
                        / (12.0 * step),
                )
            }
        })
        .collect()
}
