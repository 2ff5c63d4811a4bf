use std::ops::Deref;

use super::{PeriodicField, PeriodicGrid};
use crate::error::{invalid, Result};

/// Fields at decreasing times `0 = t_0 > t_1 > ... > t_K`, linear in time
/// between slices.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldHistory {
    times: Vec<f64>,
    slices: Vec<PeriodicField>,
}

impl FieldHistory {
    pub fn new(times: Vec<f64>, slices: Vec<PeriodicField>) -> Result<Self> {
        if times.is_empty() || times.len() != slices.len() {
            return invalid("history needs one slice per time and at least one slice");
        }
        if times[0] != 0.0 {
            return invalid("history must start at t = 0");
        }
        if times.windows(2).any(|w| !(w[1] < w[0])) {
            return invalid("history times must be strictly decreasing");
        }
        let (grid, comps) = (*slices[0].grid(), slices[0].comps());
        if slices.iter().any(|s| *s.grid() != grid || s.comps() != comps) {
            return invalid("history slices must share grid and shape");
        }
        Ok(Self { times, slices })
    }

    /// The same field at `0` and at `horizon`.
    pub fn frozen(field: PeriodicField, horizon: f64) -> Result<Self> {
        if !(horizon < 0.0) {
            return invalid(format!("horizon {horizon} must be negative"));
        }
        Self::new(vec![0.0, horizon], vec![field.clone(), field])
    }

    /// `K + 1` uniform times from `0` down to `horizon`.
    pub fn uniform_times(horizon: f64, intervals: usize) -> Vec<f64> {
        (0..=intervals).map(|j| horizon * j as f64 / intervals as f64).collect()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn slices(&self) -> &[PeriodicField] {
        &self.slices
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn grid(&self) -> &PeriodicGrid {
        self.slices[0].grid()
    }

    pub fn comps(&self) -> usize {
        self.slices[0].comps()
    }

    /// True when every slice holds the same values.
    pub fn is_constant(&self) -> bool {
        self.slices.windows(2).all(|w| w[0] == w[1])
    }

    /// Slice index `j` and weight `w` such that the value at `t` is
    /// `(1 - w) slice_j + w slice_{j+1}`.
    pub fn bracket(&self, t: f64) -> Result<(usize, f64)> {
        let horizon = self.horizon();
        let tol = 1e-12 * horizon.abs().max(1.0);
        if t > tol || t < horizon - tol {
            return invalid(format!("time {t} outside the history interval [{horizon}, 0]"));
        }
        if self.times.len() == 1 {
            return Ok((0, 0.0));
        }
        let t = t.clamp(horizon, 0.0);
        let j = self
            .times
            .windows(2)
            .position(|w| t <= w[0] && t >= w[1])
            .unwrap_or(self.times.len() - 2);
        let w = (self.times[j] - t) / (self.times[j] - self.times[j + 1]);
        Ok((j, w.clamp(0.0, 1.0)))
    }

    pub fn at(&self, t: f64) -> Result<PeriodicField> {
        let (j, w) = self.bracket(t)?;
        if w == 0.0 {
            return Ok(self.slices[j].clone());
        }
        if w == 1.0 {
            return Ok(self.slices[j + 1].clone());
        }
        self.slices[j].combine(1.0 - w, &self.slices[j + 1], w)
    }
}

/// A history of divergence-free vector fields.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityHistory(FieldHistory);

impl VelocityHistory {
    pub fn new(times: Vec<f64>, slices: Vec<PeriodicField>) -> Result<Self> {
        let slices = slices
            .into_iter()
            .map(|s| if s.is_divergence_free() { Ok(s) } else { s.mark_divergence_free() })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self(FieldHistory::new(times, slices)?))
    }

    pub fn frozen(field: PeriodicField, horizon: f64) -> Result<Self> {
        if !(horizon < 0.0) {
            return invalid(format!("horizon {horizon} must be negative"));
        }
        Self::new(vec![0.0, horizon], vec![field.clone(), field])
    }

    pub fn zero(grid: PeriodicGrid, horizon: f64) -> Result<Self> {
        Self::frozen(PeriodicField::zeros(grid, grid.dim), horizon)
    }

    pub fn into_inner(self) -> FieldHistory {
        self.0
    }
}

impl Deref for VelocityHistory {
    type Target = FieldHistory;
    fn deref(&self) -> &FieldHistory {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bracket_and_interpolation() {
        let g = PeriodicGrid::new(1, 4).unwrap();
        let a = PeriodicField::from_values(g, 1, vec![0.0; 4]).unwrap();
        let b = PeriodicField::from_values(g, 1, vec![2.0; 4]).unwrap();
        let h = FieldHistory::new(vec![0.0, -1.0], vec![a, b]).unwrap();
        assert_eq!(h.bracket(-0.25).unwrap(), (0, 0.25));
        assert!((h.at(-0.25).unwrap().values()[0] - 0.5).abs() < 1e-15);
        assert!(h.at(0.1).is_err());
        assert!(h.at(-1.1).is_err());
    }

    #[test]
    fn times_must_decrease() {
        let g = PeriodicGrid::new(1, 4).unwrap();
        let a = PeriodicField::zeros(g, 1);
        assert!(FieldHistory::new(vec![0.0, 0.0], vec![a.clone(), a.clone()]).is_err());
        assert!(FieldHistory::new(vec![-0.1], vec![a]).is_err());
    }
}
