//! Data-driven choice of the spectral weight `h(λ) = (1 - |αλ|^β)_+`.
//!
//! Candidates form the finite grid
//! `α_i = (1 + 1/log T)^{-i}` restricted to `[T^{-1/3}, 1/log T]`,
//! `β_j = (1 - j/log T)^{-1}` for `1 <= j < log T`,
//! and the winner minimizes the estimated risk
//! `l_T(h) = T int λ^2 (h^2 - 2h) |phi_hat|^2 dλ + 8 sigma_hat^2 int h dλ`.

use rayon::prelude::*;

use crate::spectral::EcfTable;
use crate::{Error, Result};

/// Spectral multiplier `h(λ) = (1 - |αλ|^β)_+` with `0 < α <= 1`, `β > 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralWeight {
    alpha: f64,
    beta: f64,
}

impl SpectralWeight {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::invalid(format!("bandwidth must lie in (0, 1], got {alpha}")));
        }
        if !(beta > 1.0 && beta.is_finite()) {
            return Err(Error::invalid(format!("shape exponent must exceed 1, got {beta}")));
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Right end `1/α` of the support.
    pub fn support(&self) -> f64 {
        1.0 / self.alpha
    }

    #[inline]
    pub fn eval(&self, lambda: f64) -> f64 {
        let u = (self.alpha * lambda).abs();
        if u >= 1.0 {
            0.0
        } else {
            1.0 - u.powf(self.beta)
        }
    }

    /// `int h dλ = (2/α) β/(β+1)`
    pub fn integral(&self) -> f64 {
        2.0 / self.alpha * self.beta / (self.beta + 1.0)
    }

    /// `int h^2 dλ = (2/α)(1 - 2/(β+1) + 1/(2β+1))`
    pub fn integral_sq(&self) -> f64 {
        let b = self.beta;
        2.0 / self.alpha * (1.0 - 2.0 / (b + 1.0) + 1.0 / (2.0 * b + 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridEntry {
    pub i: u32,
    pub j: u32,
    pub weight: SpectralWeight,
}

/// Candidate set ordered by `(i, j)` ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightGrid {
    entries: Vec<GridEntry>,
    horizon: f64,
}

impl WeightGrid {
    pub fn entries(&self) -> &[GridEntry] {
        &self.entries
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Grid over explicit candidates, kept in the given order.
    pub fn from_entries(entries: Vec<GridEntry>, horizon: f64) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("candidate grid is empty"));
        }
        Ok(Self { entries, horizon })
    }
}

/// Largest integer strictly smaller than `a`.
pub fn strict_floor(a: f64) -> i64 {
    let f = a.floor();
    if f == a {
        f as i64 - 1
    } else {
        f as i64
    }
}

pub fn build_grid(horizon: f64) -> Result<WeightGrid> {
    let log_t = horizon.ln();
    if !(log_t > 1.0) || !log_t.is_finite() {
        return Err(Error::TimeHorizonTooSmall(horizon));
    }
    let lo = horizon.powf(-1.0 / 3.0);
    let hi = 1.0 / log_t;
    let ratio = 1.0 + 1.0 / log_t;
    let j_max = strict_floor(log_t);
    let betas: Vec<(u32, f64)> = (1..=j_max)
        .map(|j| (j as u32, 1.0 / (1.0 - j as f64 / log_t)))
        .collect();
    let mut entries = Vec::new();
    for i in 1u32.. {
        let alpha = ratio.powi(-(i as i32));
        if alpha < lo {
            break;
        }
        if alpha > hi {
            continue;
        }
        for &(j, beta) in &betas {
            entries.push(GridEntry {
                i,
                j,
                weight: SpectralWeight::new(alpha, beta)?,
            });
        }
    }
    if entries.is_empty() {
        return Err(Error::TimeHorizonTooSmall(horizon));
    }
    Ok(WeightGrid { entries, horizon })
}

/// Estimated risk `l_T(h)` of one candidate.
///
/// The first integral is a trapezoid sum over ECF grid points strictly inside
/// the support, closed by the partial cell up to `1/α` where the integrand
/// vanishes. ECF values outside the support are never read.
pub fn risk_score(weight: &SpectralWeight, ecf: &EcfTable) -> Result<f64> {
    ecf.require_support(weight)?;
    let grid = ecf.lambda_grid();
    let step = grid.step();
    let support = weight.support();
    let mut sum = 0.0;
    let mut prev = 0.0; // integrand at λ = 0
    let mut last_lambda = 0.0;
    for (k, z) in ecf.values().iter().enumerate().skip(1) {
        let lambda = grid.get(k);
        if lambda >= support {
            break;
        }
        let h = weight.eval(lambda);
        let g = lambda * lambda * (h * h - 2.0 * h) * z.norm_sqr();
        sum += 0.5 * step * (prev + g);
        prev = g;
        last_lambda = lambda;
    }
    sum += 0.5 * (support - last_lambda) * prev;
    // symmetric integrand: double the half-line integral
    Ok(ecf.horizon() * 2.0 * sum + 8.0 * ecf.sigma_hat_sq() * weight.integral())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredCandidate {
    pub entry: GridEntry,
    pub score: f64,
}

/// Every candidate's score plus the index of the winner.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionTrace {
    candidates: Vec<ScoredCandidate>,
    selected: usize,
}

impl SelectionTrace {
    pub fn candidates(&self) -> &[ScoredCandidate] {
        &self.candidates
    }

    pub fn selected_index(&self) -> usize {
        self.selected
    }

    pub fn selected(&self) -> &ScoredCandidate {
        &self.candidates[self.selected]
    }

    pub(crate) fn from_parts(candidates: Vec<ScoredCandidate>, selected: usize) -> Self {
        Self { candidates, selected }
    }
}

/// First index of the minimum; ties go to the earlier candidate.
fn argmin(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s < scores[best] {
            best = k;
        }
    }
    best
}

pub fn selection_trace(grid: &WeightGrid, ecf: &EcfTable) -> Result<SelectionTrace> {
    if grid.is_empty() {
        return Err(Error::invalid("candidate grid is empty"));
    }
    let scores = grid
        .entries()
        .par_iter()
        .map(|e| risk_score(&e.weight, ecf))
        .collect::<Result<Vec<f64>>>()?;
    let selected = argmin(&scores);
    let candidates = grid
        .entries()
        .iter()
        .zip(scores)
        .map(|(&entry, score)| ScoredCandidate { entry, score })
        .collect();
    Ok(SelectionTrace { candidates, selected })
}

pub fn select_weight(grid: &WeightGrid, ecf: &EcfTable) -> Result<SpectralWeight> {
    selection_trace(grid, ecf).map(|t| t.selected().entry.weight)
}
