//! Coupling of an enumerable design: the support is ranked by the discrepancy
//! `h` of each indicator vector, laid out as consecutive subintervals of
//! [0, 1] with lengths equal to the design probabilities, and inverted at `x`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::designs::{DesignSpec, IndicatorVector};
use crate::ecdf::StepCdf;
use crate::error::{Error, Result};
use crate::superpop::{Population, SuperpopModel};
use crate::weights::LimitCdf;

/// Which limit the selected ecdf is compared with in `h`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HTarget {
    /// `F_s`, the normalized limit c.d.f.
    #[default]
    Normalized,
    /// `G_s(a) = int_{y <= a} m f`, without division by `int m f`.
    Unnormalized,
}

/// `sup_a |F_N(a) - F_s(a)|` (or against `G_s`) for one indicator vector.
pub fn h_gamma(population: &Population, indicator: &IndicatorVector, limit: &LimitCdf) -> Result<f64> {
    h_gamma_with(population, indicator, limit, HTarget::Normalized)
}

pub fn h_gamma_with(
    population: &Population,
    indicator: &IndicatorVector,
    limit: &LimitCdf,
    target: HTarget,
) -> Result<f64> {
    let step = crate::ecdf::empirical_cdf(population, indicator)?;
    Ok(match target {
        HTarget::Normalized => step.sup_distance(limit),
        HTarget::Unnormalized => step.sup_distance_to(&|x| limit.unnormalized(x), limit.normalizer()),
    })
}

/// Evaluates `h` for many indicator vectors on one population in O(N) each.
struct HEvaluator {
    /// unit indices sorted by response, grouped by tied responses
    order: Vec<usize>,
    group_ends: Vec<usize>,
    target_at_group: Vec<f64>,
    upper: f64,
}

impl HEvaluator {
    fn new(population: &Population, limit: &LimitCdf, target: HTarget) -> Self {
        let ys = population.responses();
        let mut order: Vec<usize> = (0..ys.len()).collect();
        order.sort_by(|&a, &b| ys[a].total_cmp(&ys[b]));
        let mut group_ends = Vec::new();
        let mut target_at_group = Vec::new();
        for (pos, &k) in order.iter().enumerate() {
            if pos + 1 == order.len() || ys[order[pos + 1]] != ys[k] {
                group_ends.push(pos + 1);
                target_at_group.push(match target {
                    HTarget::Normalized => limit.eval(ys[k]),
                    HTarget::Unnormalized => limit.unnormalized(ys[k]),
                });
            }
        }
        let upper = match target {
            HTarget::Normalized => 1.0,
            HTarget::Unnormalized => limit.normalizer(),
        };
        HEvaluator { order, group_ends, target_at_group, upper }
    }

    /// Same arithmetic as [`StepCdf::sup_distance_to`], so results agree bit for bit.
    fn eval(&self, counts: &[u32]) -> f64 {
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        if total == 0 {
            return self.upper.abs();
        }
        let mut sup = (self.upper - 1.0).abs();
        let (mut cum, mut left, mut start) = (0u64, 0.0, 0);
        for (&end, &t) in self.group_ends.iter().zip(&self.target_at_group) {
            let add: u64 = self.order[start..end].iter().map(|&k| counts[k] as u64).sum();
            start = end;
            if add == 0 {
                continue;
            }
            cum += add;
            let right = cum as f64 / total as f64;
            sup = sup.max((right - t).abs()).max((left - t).abs());
            left = right;
        }
        sup
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingEntry {
    pub indicator: IndicatorVector,
    pub h: f64,
    pub probability: f64,
    /// The entry owns `(lo, hi]`; the first entry also owns `x = 0`.
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingPartition {
    entries: Vec<CouplingEntry>,
    population: Population,
}

impl CouplingPartition {
    pub fn entries(&self) -> &[CouplingEntry] {
        &self.entries
    }

    pub fn population(&self) -> &Population {
        &self.population
    }

    /// Writes `indicator,h,interval_lo,interval_hi` rows with a header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "indicator,h,interval_lo,interval_hi")?;
        for e in &self.entries {
            writeln!(w, "{},{},{},{}", e.indicator.to_code(), e.h, e.lo, e.hi)?;
        }
        Ok(())
    }
}

/// Ranks the enumerated support by `h` (largest first, ties in lexicographic
/// order of the indicator vector) and assigns cumulative intervals.
pub fn build_coupling(design: &DesignSpec, population: &Population, limit: &LimitCdf) -> Result<CouplingPartition> {
    build_coupling_with(design, population, limit, HTarget::Normalized)
}

pub fn build_coupling_with(
    design: &DesignSpec,
    population: &Population,
    limit: &LimitCdf,
    target: HTarget,
) -> Result<CouplingPartition> {
    let support = design.enumerate_support(population)?;
    let evaluator = HEvaluator::new(population, limit, target);
    let mut ranked: Vec<(IndicatorVector, f64, f64)> =
        support.into_iter().map(|(iv, p)| {
            let h = evaluator.eval(iv.counts());
            (iv, h, p)
        }).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.counts().cmp(b.0.counts())));
    let mut cum = 0.0;
    let entries = ranked
        .into_iter()
        .map(|(indicator, h, probability)| {
            let lo = cum;
            cum += probability;
            CouplingEntry { indicator, h, probability, lo, hi: cum }
        })
        .collect();
    Ok(CouplingPartition { entries, population: population.clone() })
}

/// The indicator vector assigned to `x`: the first entry at `x = 0`, otherwise
/// the entry whose interval `(lo, hi]` contains `x` (the last one if rounding
/// leaves the cumulative total just below 1).
pub fn coupled_draw(partition: &CouplingPartition, x: f64) -> Result<&IndicatorVector> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidArgument(format!("x must lie in [0, 1], got {x}")));
    }
    let entries = &partition.entries;
    if x == 0.0 {
        return Ok(&entries[0].indicator);
    }
    let i = entries.partition_point(|e| e.hi < x).min(entries.len() - 1);
    Ok(&entries[i].indicator)
}

/// `h` of the coupled draw at a fixed `x` along one nested population sequence.
pub fn coupled_sup_trajectory(
    design: &DesignSpec,
    model: &SuperpopModel,
    limit: &LimitCdf,
    n_grid: &[usize],
    x: f64,
    seed: u64,
    target: HTarget,
) -> Result<Vec<(usize, f64)>> {
    let Some(&largest) = n_grid.last() else {
        return Ok(Vec::new());
    };
    let full = model.draw_population(largest, seed)?;
    n_grid
        .iter()
        .map(|&n| {
            let pop = full.prefix(n)?;
            let partition = build_coupling_with(design, &pop, limit, target)?;
            let drawn = coupled_draw(&partition, x)?;
            let h = partition.entries.iter().find(|e| &e.indicator == drawn).unwrap().h;
            Ok((n, h))
        })
        .collect()
}

/// Classical `sup |F_N - target|` of a full population, for comparison with census trajectories.
pub fn census_distance(population: &Population, limit: &LimitCdf) -> f64 {
    StepCdf::classical(population.responses()).sup_distance(limit)
}
