//! Finite-difference first derivatives on a uniform grid.
//!
//! Weights come from Fornberg's recursion, so one routine covers centred
//! stencils of any even order and the shifted stencils used near the ends of
//! a segment. A derivative is only ever taken inside a *segment*: a run of
//! consecutive grid points on which the function is smooth. Segments end at
//! the array bounds, at the edges of a density mask, and at declared break
//! points (the cusp of the double-well potential at `y = 0`). At a break the
//! derivative is the mean of the one-sided estimates from either side.

use std::collections::HashMap;
use std::ops::{Add, Mul, Range};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Values a stencil can act on.
pub trait Sample: Copy + Default + Add<Output = Self> + Mul<f64, Output = Self> {}

impl Sample for f64 {}
impl Sample for Complex64 {}

/// First-derivative weights at `z` for the given nodes (Fornberg 1988).
pub fn fornberg_weights(nodes: &[f64], z: f64) -> Vec<f64> {
    let n = nodes.len();
    // c[j][k]: weight of node j for the k-th derivative, k in {0, 1}
    let mut c = vec![[0.0_f64; 2]; n];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(1);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - z;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|w| w[1]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stencil {
    order: usize,
}

impl Stencil {
    /// `order` is the formal accuracy of the centred stencil (even, 2..=12).
    pub fn new(order: usize) -> Result<Self> {
        if order < 2 || order > 12 || order % 2 != 0 {
            return Err(Error::Config(format!(
                "finite-difference order must be even and in 2..=12, got {order}"
            )));
        }
        Ok(Self { order })
    }

    pub fn second_order() -> Self {
        Self { order: 2 }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Derivative over the whole array, splitting at `breaks`.
    pub fn derivative<T: Sample>(&self, f: &[T], h: f64, breaks: &[usize]) -> Vec<T> {
        let mut out = vec![T::default(); f.len()];
        self.derivative_on(f, h, 0..f.len(), breaks, &mut out);
        out
    }

    /// Derivative on `range`, written into `out[range]`. Breaks outside the
    /// open interior of the range are ignored. Ranges shorter than three
    /// points are left untouched and reported as `false`.
    pub fn derivative_on<T: Sample>(
        &self,
        f: &[T],
        h: f64,
        range: Range<usize>,
        breaks: &[usize],
        out: &mut [T],
    ) -> bool {
        if range.len() < 3 {
            return false;
        }
        let lo = range.start;
        let hi = range.end - 1;
        let mut cuts: Vec<usize> = breaks
            .iter()
            .copied()
            .filter(|&b| b > lo && b < hi)
            .collect();
        cuts.sort_unstable();
        cuts.dedup();

        let mut bounds = Vec::with_capacity(cuts.len() + 2);
        bounds.push(lo);
        bounds.extend(cuts.iter().copied());
        bounds.push(hi);

        let mut cache = WeightCache::default();
        for w in bounds.windows(2) {
            let (a, b) = (w[0], w[1]);
            let first = if a == lo { a } else { a + 1 };
            for i in first..=b {
                if i == b && b != hi {
                    continue; // a break; handled below
                }
                out[i] = self.point(f, h, i, a, b, &mut cache);
            }
        }
        for (k, &cut) in cuts.iter().enumerate() {
            let left_start = if k == 0 { lo } else { cuts[k - 1] };
            let right_end = cuts.get(k + 1).copied().unwrap_or(hi);
            let left = self.point(f, h, cut, left_start, cut, &mut cache);
            let right = self.point(f, h, cut, cut, right_end, &mut cache);
            out[cut] = (left + right) * 0.5;
        }
        true
    }

    fn point<T: Sample>(
        &self,
        f: &[T],
        h: f64,
        i: usize,
        seg_lo: usize,
        seg_hi: usize,
        cache: &mut WeightCache,
    ) -> T {
        let span = seg_hi - seg_lo;
        if span == 0 {
            return T::default();
        }
        let p = self.order.min(span);
        let start = i.saturating_sub(p / 2).clamp(seg_lo, seg_hi - p);
        let rel = start as i64 - i as i64;
        let weights = cache.get(rel, p);
        let mut acc = T::default();
        for (j, &w) in weights.iter().enumerate() {
            acc = acc + f[start + j] * w;
        }
        acc * (1.0 / h)
    }
}

#[derive(Default)]
struct WeightCache {
    map: HashMap<(i64, usize), Vec<f64>>,
}

impl WeightCache {
    fn get(&mut self, rel_start: i64, p: usize) -> &[f64] {
        self.map.entry((rel_start, p)).or_insert_with(|| {
            let nodes: Vec<f64> = (0..=p as i64).map(|j| (rel_start + j) as f64).collect();
            fornberg_weights(&nodes, 0.0)
        })
    }
}
