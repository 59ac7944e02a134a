use crate::error::{Error, Result};

/// Uniform grid on `[y_min, y_max]` (micrometres), endpoints included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    n_points: usize,
    y_min: f64,
    y_max: f64,
}

impl Grid1D {
    pub fn new(n_points: usize, y_min: f64, y_max: f64) -> Result<Self> {
        if n_points < 3 {
            return Err(Error::Config(format!(
                "grid needs at least 3 points, got {n_points}"
            )));
        }
        if !(y_min.is_finite() && y_max.is_finite()) || y_max <= y_min {
            return Err(Error::Config(format!(
                "grid requires y_max > y_min, got [{y_min}, {y_max}]"
            )));
        }
        Ok(Self {
            n_points,
            y_min,
            y_max,
        })
    }

    /// Grid on `[-half_extent, half_extent]`.
    pub fn symmetric(n_points: usize, half_extent: f64) -> Result<Self> {
        Self::new(n_points, -half_extent, half_extent)
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn spacing(&self) -> f64 {
        (self.y_max - self.y_min) / (self.n_points - 1) as f64
    }

    pub fn y(&self, i: usize) -> f64 {
        if self.is_symmetric() {
            // integer offset from the centre, so y(i) == -y(mirror(i)) exactly
            let k = 2 * i as i64 - (self.n_points as i64 - 1);
            k as f64 * (self.y_max / (self.n_points - 1) as f64)
        } else if i + 1 == self.n_points {
            self.y_max
        } else {
            self.y_min + i as f64 * self.spacing()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.y(i)).collect()
    }

    /// True when `y_min = -y_max` and the point count is odd, so that `y = 0`
    /// is a grid point and `i <-> n-1-i` is the reflection `y -> -y`.
    pub fn is_symmetric(&self) -> bool {
        let scale = self.y_max.abs().max(self.y_min.abs());
        (self.y_min + self.y_max).abs() <= 1e-12 * scale && self.n_points % 2 == 1
    }

    pub fn require_symmetric(&self) -> Result<()> {
        if (self.y_min + self.y_max).abs() > 1e-12 * self.y_max.abs().max(self.y_min.abs()) {
            return Err(Error::Config(format!(
                "grid must be symmetric about y = 0 (y_min = -y_max), got [{}, {}]",
                self.y_min, self.y_max
            )));
        }
        if self.n_points % 2 == 0 {
            return Err(Error::Config(format!(
                "grid must contain y = 0 exactly (odd n_points), got {}",
                self.n_points
            )));
        }
        Ok(())
    }

    /// Index of `y = 0` on a symmetric grid.
    pub fn center(&self) -> usize {
        self.n_points / 2
    }

    pub fn mirror(&self, i: usize) -> usize {
        self.n_points - 1 - i
    }

    /// Index of the grid point closest to `y`, clamped to the grid.
    pub fn nearest(&self, y: f64) -> usize {
        let f = ((y - self.y_min) / self.spacing()).round();
        f.clamp(0.0, (self.n_points - 1) as f64) as usize
    }

    pub fn contains(&self, y: f64) -> bool {
        y >= self.y_min && y <= self.y_max
    }

    /// Same extent, `2n - 1` points (every old point kept).
    pub fn refined(&self) -> Self {
        Self {
            n_points: 2 * self.n_points - 1,
            ..*self
        }
    }

    /// Trapezoid rule over the whole grid.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.integrate_range(f, 0, self.n_points - 1)
    }

    /// Trapezoid rule from index `lo` to `hi` inclusive.
    pub fn integrate_range(&self, f: &[f64], lo: usize, hi: usize) -> f64 {
        debug_assert_eq!(f.len(), self.n_points);
        if hi <= lo {
            return 0.0;
        }
        let inner: f64 = f[lo + 1..hi].iter().sum();
        self.spacing() * (inner + 0.5 * (f[lo] + f[hi]))
    }

    /// Trapezoid inner product of two real grid functions.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        let prod: Vec<f64> = f.iter().zip(g).map(|(a, b)| a * b).collect();
        self.integrate(&prod)
    }
}
