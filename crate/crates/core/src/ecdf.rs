//! Empirical c.d.f. of a (possibly informative) sample, quantiles and sup distances.

use std::io::Write;

use crate::designs::IndicatorVector;
use crate::error::{Error, Result};
use crate::superpop::{Population, SuperpopModel};
use crate::weights::LimitCdf;

/// A continuous c.d.f. to compare step functions against.
pub trait ContinuousCdf {
    fn cdf(&self, x: f64) -> f64;
}

impl<F: Fn(f64) -> f64> ContinuousCdf for F {
    fn cdf(&self, x: f64) -> f64 {
        self(x)
    }
}

impl ContinuousCdf for SuperpopModel {
    fn cdf(&self, x: f64) -> f64 {
        SuperpopModel::cdf(self, x)
    }
}

impl ContinuousCdf for LimitCdf {
    fn cdf(&self, x: f64) -> f64 {
        self.eval(x)
    }
}

/// Right-continuous step function; `values[k]` holds on `[jumps[k], jumps[k + 1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCdf {
    jumps: Vec<f64>,
    values: Vec<f64>,
    empty: bool,
}

impl StepCdf {
    /// The identically-zero c.d.f. of an empty sample.
    pub fn empty() -> Self {
        StepCdf { jumps: Vec::new(), values: Vec::new(), empty: true }
    }

    /// Builds from responses and multiplicities; zero counts are dropped and
    /// tied responses merge into one jump.
    pub fn from_weighted(ys: &[f64], counts: &[u32]) -> Result<Self> {
        if ys.len() != counts.len() {
            return Err(Error::SizeMismatch { expected: ys.len(), got: counts.len() });
        }
        let mut pts: Vec<(f64, u32)> =
            ys.iter().zip(counts).filter(|(_, &c)| c > 0).map(|(&y, &c)| (y, c)).collect();
        pts.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self::from_sorted(pts.into_iter()))
    }

    /// `pts` must be sorted by response with positive counts.
    pub(crate) fn from_sorted(pts: impl Iterator<Item = (f64, u32)>) -> Self {
        let mut jumps = Vec::new();
        let mut cum: Vec<u64> = Vec::new();
        let mut total = 0u64;
        for (y, c) in pts {
            total += c as u64;
            if jumps.last() == Some(&y) {
                *cum.last_mut().unwrap() = total;
            } else {
                jumps.push(y);
                cum.push(total);
            }
        }
        if total == 0 {
            return Self::empty();
        }
        let values = cum.iter().map(|&c| c as f64 / total as f64).collect();
        StepCdf { jumps, values, empty: false }
    }

    /// Classical empirical c.d.f. of all of `ys`.
    pub fn classical(ys: &[f64]) -> Self {
        let mut v = ys.to_vec();
        v.sort_unstable_by(f64::total_cmp);
        Self::from_sorted(v.into_iter().map(|y| (y, 1)))
    }

    pub fn jumps(&self) -> &[f64] {
        &self.jumps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.jumps.partition_point(|&j| j <= x) {
            0 => 0.0,
            k => self.values[k - 1],
        }
    }

    /// `inf { y : F(y) >= p }`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if self.empty {
            return Err(Error::EmptyEcdf);
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!("quantile level must lie in (0, 1), got {p}")));
        }
        let k = self.values.partition_point(|&v| v < p).min(self.jumps.len() - 1);
        Ok(self.jumps[k])
    }

    /// Exact `sup_x |self(x) - target(x)|` for a continuous target with
    /// `target(-inf) = 0` and `target(+inf) = 1`.
    pub fn sup_distance<T: ContinuousCdf + ?Sized>(&self, target: &T) -> f64 {
        self.sup_distance_to(target, 1.0)
    }

    /// As [`StepCdf::sup_distance`] for a continuous non-decreasing target
    /// rising from 0 at `-inf` to `upper` at `+inf`.
    pub fn sup_distance_to<T: ContinuousCdf + ?Sized>(&self, target: &T, upper: f64) -> f64 {
        if self.empty {
            return upper.abs();
        }
        let mut sup = (upper - self.values.last().unwrap()).abs();
        let mut left = 0.0;
        for (&x, &right) in self.jumps.iter().zip(&self.values) {
            let t = target.cdf(x);
            sup = sup.max((right - t).abs()).max((left - t).abs());
            left = right;
        }
        sup
    }

    /// Exact `sup_x |self(x) - other(x)|` between two step functions.
    pub fn step_distance(&self, other: &StepCdf) -> f64 {
        let mut sup: f64 = 0.0;
        for &x in self.jumps.iter().chain(&other.jumps) {
            sup = sup.max((self.eval(x) - other.eval(x)).abs());
        }
        sup
    }

    /// Writes `jump,value` rows with a header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "jump,value")?;
        for (x, v) in self.jumps.iter().zip(&self.values) {
            writeln!(w, "{x},{v}")?;
        }
        Ok(())
    }
}

/// `F(a) = sum 1{y_k <= a} I_k / (1{n = 0} + sum I_k)`; with-replacement
/// counts act as multiplicities.
pub fn empirical_cdf(population: &Population, indicator: &IndicatorVector) -> Result<StepCdf> {
    if population.len() != indicator.len() {
        return Err(Error::SizeMismatch { expected: population.len(), got: indicator.len() });
    }
    StepCdf::from_weighted(population.responses(), indicator.counts())
}

pub fn sup_distance<T: ContinuousCdf + ?Sized>(step: &StepCdf, target: &T) -> f64 {
    step.sup_distance(target)
}

pub fn quantile(step: &StepCdf, p: f64) -> Result<f64> {
    step.quantile(p)
}

/// `inf { y : F_s(y) >= p }` by bisection to 1e-10.
pub fn limit_quantile(limit: &LimitCdf, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile level must lie in (0, 1), got {p}")));
    }
    if limit.flat_levels().iter().any(|&level| (level - p).abs() < 1e-12) {
        return Err(Error::FlatQuantile(p));
    }
    let (mut lo, mut hi) = limit.model().support();
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if limit.eval(mid) >= p {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Limit quantiles on a uniform grid of a closed interval `[lo, hi]` of (0, 1),
/// computed once and reused across samples.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileGrid {
    levels: Vec<f64>,
    targets: Vec<f64>,
}

impl QuantileGrid {
    pub fn new(limit: &LimitCdf, interval: (f64, f64), grid: usize) -> Result<Self> {
        let (lo, hi) = interval;
        if !(lo > 0.0 && hi < 1.0 && lo <= hi) {
            return Err(Error::InvalidArgument(format!("quantile interval [{lo}, {hi}] must lie in (0, 1)")));
        }
        if grid < 2 {
            return Err(Error::InvalidArgument(format!("quantile grid must have at least 2 points, got {grid}")));
        }
        let levels: Vec<f64> = if lo == hi {
            vec![lo]
        } else {
            (0..grid).map(|i| lo + (hi - lo) * i as f64 / (grid - 1) as f64).collect()
        };
        let targets = levels.iter().map(|&p| limit_quantile(limit, p)).collect::<Result<_>>()?;
        Ok(QuantileGrid { levels, targets })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Grid lower bound of `sup_{p in K} |xi(p) - xi_s(p)|`.
    pub fn sup_distance(&self, step: &StepCdf) -> Result<f64> {
        let mut sup: f64 = 0.0;
        for (&p, &t) in self.levels.iter().zip(&self.targets) {
            sup = sup.max((step.quantile(p)? - t).abs());
        }
        Ok(sup)
    }
}

/// Grid lower bound of `sup_{p in K} |xi(p) - xi_s(p)|` over `grid` points of `K`.
pub fn quantile_sup_distance(step: &StepCdf, limit: &LimitCdf, interval: (f64, f64), grid: usize) -> Result<f64> {
    if step.is_empty() {
        return Err(Error::EmptyEcdf);
    }
    QuantileGrid::new(limit, interval, grid)?.sup_distance(step)
}
