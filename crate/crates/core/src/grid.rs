/// Uniformly spaced points `start + i * step`, `i = 0..len`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGrid {
    start: f64,
    step: f64,
    len: usize,
}

impl UniformGrid {
    /// `points` evenly spaced values from `min` to `max` inclusive.
    pub fn new(min: f64, max: f64, points: usize) -> crate::Result<Self> {
        if !(min.is_finite() && max.is_finite()) || max <= min || points < 2 {
            return Err(crate::Error::invalid(format!(
                "grid needs min < max and at least 2 points (got [{min}, {max}], {points})"
            )));
        }
        Ok(Self {
            start: min,
            step: (max - min) / (points - 1) as f64,
            len: points,
        })
    }

    pub fn from_step(start: f64, step: f64, len: usize) -> crate::Result<Self> {
        if !(step > 0.0 && step.is_finite() && start.is_finite()) || len < 2 {
            return Err(crate::Error::invalid(format!(
                "grid needs a positive step and at least 2 points (got step {step}, {len})"
            )));
        }
        Ok(Self { start, step, len })
    }

    /// Symmetric grid `-max ..= max`. The step is exact and the number of
    /// points is chosen so the grid reaches at least `max`.
    pub fn symmetric(max: f64, step: f64) -> crate::Result<Self> {
        let half = (max / step - 1e-9).ceil().max(1.0) as usize;
        Self::from_step(-(half as f64) * step, step, 2 * half + 1)
    }

    /// Grid `0, step, ...` reaching at least `max`.
    pub fn nonnegative(max: f64, step: f64) -> crate::Result<Self> {
        let n = (max / step - 1e-9).ceil().max(1.0) as usize;
        Self::from_step(0.0, step, n + 1)
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.get(self.len - 1)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.iter().collect()
    }

    /// Index of the grid point equal to `x` up to a tiny fraction of the step.
    pub fn index_of(&self, x: f64) -> Option<usize> {
        let pos = (x - self.start) / self.step;
        let idx = pos.round();
        if idx < 0.0 || idx >= self.len as f64 || (pos - idx).abs() > 1e-6 {
            None
        } else {
            Some(idx as usize)
        }
    }
}
