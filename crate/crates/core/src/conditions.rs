//! Monte Carlo checkers for the regularity conditions A0-A4, the empty-sample
//! bound and the fixed-size covariance identity.
//!
//! Each checker estimates a quantity that should vanish (or stay bounded) at
//! every N of a grid and turns the sequence into a verdict with [`VerdictRule`].
//! Replicates are seeded by `mix64(seed, ...)` and merged in index order, so
//! reports do not depend on the number of threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::designs::{DesignSpec, IndicatorVector, SizeRule};
use crate::error::{Error, Result};
use crate::rng::{mix64, rng_from_seed};
use crate::superpop::{Population, SuperpopModel};
use crate::weights::{builtin_weight, m_monte_carlo, m_theoretical, pair_draws, MValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// Thresholds that turn an estimated sequence into a verdict.
///
/// A quantity is taken to vanish when its final estimate is below
/// `max(tol, k_se * se)` and either the log-log slope is below `max_slope` or
/// every estimate is within `k_se` standard errors of zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerdictRule {
    pub tol: f64,
    pub k_se: f64,
    pub max_slope: f64,
    /// Largest relative change of `E[n]/N` over the top half of the grid.
    pub stable_rel: f64,
}

impl Default for VerdictRule {
    fn default() -> Self {
        VerdictRule { tol: 0.02, k_se: 4.0, max_slope: -0.5, stable_rel: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    #[serde(rename = "N")]
    pub n: usize,
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least squares fit of `log y = intercept + slope log x` over the points with
/// `x, y > 0`; `None` with fewer than two such points.
pub fn fit_power_law(points: &[(f64, f64)]) -> Option<PowerFit> {
    let pts: Vec<(f64, f64)> =
        points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(PowerFit { slope, intercept, r_squared })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub quantity: String,
    pub estimates: Vec<Estimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEntry {
    pub id: String,
    pub quantity: String,
    pub estimates: Vec<Estimate>,
    pub slope: Option<f64>,
    pub r_squared: Option<f64>,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auxiliary: Option<Series>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ConditionEntry {
    fn vanishing(id: &str, quantity: &str, estimates: Vec<Estimate>, rule: &VerdictRule) -> Self {
        let (verdict, fit) = vanishing_verdict(&estimates, rule);
        ConditionEntry {
            id: id.into(),
            quantity: quantity.into(),
            estimates,
            slope: fit.map(|f| f.slope),
            r_squared: fit.map(|f| f.r_squared),
            verdict,
            auxiliary: None,
            note: None,
        }
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

/// Verdict for a sequence that should be `o(1)`.
pub fn vanishing_verdict(estimates: &[Estimate], rule: &VerdictRule) -> (Verdict, Option<PowerFit>) {
    let fit = fit_power_law(&estimates.iter().map(|e| (e.n as f64, e.value.abs())).collect::<Vec<_>>());
    let Some(last) = estimates.last() else {
        return (Verdict::Inconclusive, None);
    };
    if estimates.iter().all(|e| e.value == 0.0 && e.se == 0.0) {
        return (Verdict::Pass, fit);
    }
    if last.value.abs() > rule.tol.max(rule.k_se * last.se) {
        return (Verdict::Fail, fit);
    }
    if estimates.iter().all(|e| e.se > e.value.abs() && e.se > rule.tol) {
        return (Verdict::Inconclusive, fit);
    }
    let decaying = fit.is_some_and(|f| f.slope < rule.max_slope);
    let null = estimates.iter().all(|e| e.value.abs() <= rule.k_se * e.se);
    (if decaying || null { Verdict::Pass } else { Verdict::Inconclusive }, fit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub design: String,
    pub entries: Vec<ConditionEntry>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ConditionReport {
    pub fn entry(&self, id: &str) -> Option<&ConditionEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Fixed-width table, one row per condition and grid point.
    pub fn render_table(&self) -> String {
        let mut out = format!("design: {}\n", self.design);
        let w = self.entries.iter().map(|e| e.quantity.chars().count()).max().unwrap_or(0).max(8);
        out += &format!(
            "{:<6} {:<w$} {:>8} {:>12} {:>11} {:>8} {:>13}\n",
            "id", "quantity", "N", "estimate", "se", "slope", "verdict"
        );
        for e in &self.entries {
            for (i, est) in e.estimates.iter().enumerate() {
                let last = i + 1 == e.estimates.len();
                let slope = match (last, e.slope) {
                    (true, Some(s)) => format!("{s:.3}"),
                    _ => String::new(),
                };
                let verdict = if last { e.verdict.to_string() } else { String::new() };
                out += &format!(
                    "{:<6} {:<w$} {:>8} {:>12.6} {:>11.2e} {:>8} {:>13}\n",
                    if i == 0 { e.id.as_str() } else { "" },
                    if i == 0 { e.quantity.as_str() } else { "" },
                    est.n,
                    est.value,
                    est.se,
                    slope,
                    verdict
                );
            }
            if let Some(note) = &e.note {
                out += &format!("{:<6} note: {note}\n", "");
            }
        }
        for w in &self.warnings {
            out += &format!("warning: {w}\n");
        }
        out
    }
}

/// `P(n = 0) <= Var(n) / (E[n] - 1)^2` for `E[n] > 1`.
pub fn empty_sample_bound(expected_n: f64, var_n: f64) -> Result<f64> {
    if !(expected_n > 1.0) {
        return Err(Error::VacuousBound(expected_n));
    }
    Ok(var_n / (expected_n - 1.0).powi(2))
}

/// `Cov(I_1, I_2)` for simple random sampling of `n` out of `N`: the closed form
/// `n (n - N) / (N^2 (N - 1))` and the value from the enumerated design.
pub fn srswor_cov_identity(big_n: usize, n: usize) -> Result<(f64, f64)> {
    if !(2..=20).contains(&big_n) || n < 1 || n > big_n {
        return Err(Error::InvalidArgument(format!("need 2 <= N <= 20 and 1 <= n <= N, got N = {big_n}, n = {n}")));
    }
    let (nn, bn) = (n as f64, big_n as f64);
    let closed = nn * (nn - bn) / (bn * bn * (bn - 1.0));
    let pop = Population::new((0..big_n).map(|k| k as f64).collect())?;
    let support = DesignSpec::Srswor { size: SizeRule::N(n) }.enumerate_support(&pop)?;
    let (mut e1, mut e2, mut e12) = (0.0, 0.0, 0.0);
    for (iv, p) in &support {
        let c = iv.counts();
        e1 += p * c[0] as f64;
        e2 += p * c[1] as f64;
        e12 += p * (c[0] * c[1]) as f64;
    }
    Ok((closed, e12 - e1 * e2))
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Unbiased sample variance with a delta-method standard error.
fn var_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    let (m2, se) = mean_se(&sq);
    (m2 * n / (n - 1.0), se)
}

fn check_grid(n_grid: &[usize], min_len: usize) -> Result<()> {
    if n_grid.len() < min_len {
        return Err(Error::InvalidArgument(format!("N grid needs at least {min_len} points, got {}", n_grid.len())));
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] < 2 {
        return Err(Error::InvalidArgument("N grid must be strictly increasing and start at 2 or more".into()));
    }
    Ok(())
}

fn check_reps(reps: usize, what: &str) -> Result<()> {
    if reps < 2 {
        return Err(Error::InvalidArgument(format!("{what} must be at least 2, got {reps}")));
    }
    Ok(())
}

/// Runs `reps` independent (population, sample) draws at size `n`.
fn unconditional<T: Send>(
    design: &DesignSpec,
    model: &SuperpopModel,
    n: usize,
    reps: usize,
    seed: u64,
    f: impl Fn(&Population, &IndicatorVector) -> T + Sync,
) -> Result<Vec<T>> {
    (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let pop = model.draw_population(n, mix64(seed, r, 1))?;
            let mut rng = rng_from_seed(mix64(seed, r, 2));
            let (iv, _) = design.sample_with(&pop, &mut rng)?;
            Ok(f(&pop, &iv))
        })
        .collect()
}

fn frequency(hits: usize, reps: usize) -> (f64, f64) {
    let p = hits as f64 / reps as f64;
    (p, (p * (1.0 - p) / reps as f64).sqrt())
}

/// A4 for designs with indicators independent of the responses:
/// `E[n]/N` settles at a non-zero value and `Var(n) = o(N^2)`.
pub fn check_a4(
    design: &DesignSpec,
    model: &SuperpopModel,
    n_grid: &[usize],
    reps: usize,
    seed: u64,
    rule: &VerdictRule,
) -> Result<(ConditionEntry, Vec<String>)> {
    check_grid(n_grid, 3)?;
    check_reps(reps, "reps")?;
    design.validate_for_model(model)?;
    let mut rates = Vec::new();
    let mut vars = Vec::new();
    let mut warnings = Vec::new();
    for (i, &n) in n_grid.iter().enumerate() {
        let draws = unconditional(design, model, n, reps, mix64(seed, 0xA4, i as u64), |pop, iv| {
            let ys = pop.responses();
            (iv.n() as f64, ys.iter().sum::<f64>() / ys.len() as f64)
        })?;
        let sizes: Vec<f64> = draws.iter().map(|d| d.0).collect();
        let (mean_n, se_n) = mean_se(&sizes);
        let (var_n, se_var) = var_se(&sizes);
        let nf = n as f64;
        rates.push(Estimate { n, value: mean_n / nf, se: se_n / nf });
        vars.push(Estimate { n, value: var_n / (nf * nf), se: se_var / (nf * nf) });
        let mean_y = draws.iter().map(|d| d.1).sum::<f64>() / reps as f64;
        let prods: Vec<f64> = draws.iter().map(|d| (d.0 - mean_n) * (d.1 - mean_y)).collect();
        let (cov, se_cov) = mean_se(&prods);
        if cov.abs() > rule.k_se * se_cov && se_cov > 0.0 {
            warnings.push(format!(
                "A4 at N = {n}: Cov(n, mean Y) = {cov:.4e} (se {se_cov:.2e}) is not consistent with independence"
            ));
        }
    }
    let top = &rates[rates.len() / 2..];
    let stable = top.windows(2).all(|w| (w[1].value - w[0].value).abs() <= rule.stable_rel * w[0].value.abs());
    let last = rates.last().unwrap();
    let nonzero = last.value > rule.k_se * last.se && last.value > 0.0;
    let mut entry = ConditionEntry::vanishing("A4", "Var(n)/N^2", vars, rule);
    if !(stable && nonzero) {
        entry.verdict = Verdict::Fail;
        entry.note = Some(format!("E[n]/N does not settle at a non-zero value (stable: {stable}, non-zero: {nonzero})"));
    }
    entry.auxiliary = Some(Series { quantity: "E[n]/N".into(), estimates: rates });
    Ok((entry, warnings))
}

/// Limit `m(y)` used as the centering in A0.2 and A3.2.
fn limit_m(design: &DesignSpec, model: &SuperpopModel, largest_n: usize) -> Option<Box<dyn Fn(f64) -> f64>> {
    match builtin_weight(design, model) {
        Ok(w) => Some(Box::new(move |y| w.eval(y))),
        Err(_) => match m_theoretical(design, model, model.support().0, largest_n) {
            MValue::Exact(v) | MValue::Limit(v) => Some(Box::new(move |_| v)),
            MValue::Unavailable => None,
        },
    }
}

/// Estimates `m_N(y)` at each grid point for each y, in parallel and in a fixed order.
fn m_table(
    design: &DesignSpec,
    model: &SuperpopModel,
    ys: &[f64],
    n_grid: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Vec<Vec<(f64, f64)>>> {
    let tasks: Vec<(usize, usize)> = (0..n_grid.len()).flat_map(|i| (0..ys.len()).map(move |j| (i, j))).collect();
    let flat: Vec<(f64, f64)> = tasks
        .par_iter()
        .map(|&(i, j)| {
            let e = m_monte_carlo(design, model, ys[j], n_grid[i], reps, mix64(seed, i as u64, j as u64))?;
            Ok((e.m_hat.unwrap(), e.se_m.unwrap()))
        })
        .collect::<Result<_>>()?;
    Ok(flat.chunks(ys.len()).map(|c| c.to_vec()).collect())
}

/// Per-N entry with the largest `|value|` across y points.
fn worst(n: usize, vals: impl Iterator<Item = (f64, f64)>) -> Estimate {
    vals.map(|(value, se)| Estimate { n, value, se })
        .max_by(|a, b| a.value.abs().total_cmp(&b.value.abs()))
        .unwrap()
}

fn gap_entry(
    id: &str,
    design: &DesignSpec,
    model: &SuperpopModel,
    ys: &[f64],
    n_grid: &[usize],
    table: &[Vec<(f64, f64)>],
    rule: &VerdictRule,
) -> ConditionEntry {
    match limit_m(design, model, *n_grid.last().unwrap()) {
        Some(m) => {
            let est = n_grid
                .iter()
                .zip(table)
                .map(|(&n, row)| worst(n, row.iter().zip(ys).map(|(&(v, se), &y)| (v - m(y), se))))
                .collect();
            ConditionEntry::vanishing(id, "max_y |m_hat(y) - m(y)|", est, rule)
        }
        None => {
            let est = n_grid
                .windows(2)
                .zip(table.windows(2))
                .map(|(ns, rows)| {
                    let vals = rows[0].iter().zip(&rows[1]).map(|(a, b)| (b.0 - a.0, a.1.hypot(b.1)));
                    worst(ns[1], vals)
                })
                .collect();
            ConditionEntry::vanishing(id, "max_y |m_hat step between N|", est, rule)
                .with_note("no closed-form limit; successive differences of m_hat")
        }
    }
}

/// A0: `m_N < M` with an integrable constant `M`, and `m_N -> m` with `int m f > 0`.
pub fn check_a0(
    design: &DesignSpec,
    model: &SuperpopModel,
    ys: &[f64],
    n_grid: &[usize],
    reps: usize,
    seed: u64,
    rule: &VerdictRule,
) -> Result<Vec<ConditionEntry>> {
    check_grid(n_grid, 2)?;
    let table = m_table(design, model, ys, n_grid, reps, mix64(seed, 0xA0, 0))?;
    let weight = builtin_weight(design, model);
    let bound = match &weight {
        Ok(w) => w.bound,
        Err(_) => 1.5,
    };
    let maxima: Vec<Estimate> = n_grid
        .iter()
        .zip(&table)
        .map(|(&n, row)| {
            let (value, se) = row.iter().copied().max_by(|a, b| a.0.total_cmp(&b.0)).unwrap();
            Estimate { n, value, se }
        })
        .collect();
    let below = maxima.iter().all(|e| e.value + rule.k_se * e.se < bound);
    let fit = fit_power_law(&maxima.iter().map(|e| (e.n as f64, e.value)).collect::<Vec<_>>());
    let a01 = ConditionEntry {
        id: "A0.1".into(),
        quantity: "max_y m_hat(y)".into(),
        estimates: maxima,
        slope: fit.map(|f| f.slope),
        r_squared: fit.map(|f| f.r_squared),
        verdict: if below { Verdict::Pass } else { Verdict::Fail },
        auxiliary: None,
        note: Some(format!("constant bound M = {bound}")),
    };
    let mut a02 = gap_entry("A0.2", design, model, ys, n_grid, &table, rule);
    match weight {
        Err(Error::ZeroNormalizer(z)) => {
            a02.verdict = Verdict::Fail;
            a02.note = Some(format!("int m f = {z} is not positive"));
        }
        Err(Error::NoLimit(name)) if a02.note.is_none() => {
            a02.note = Some(format!("no limit weight for `{name}`; centred on the exact m_N"))
        }
        Err(e) if a02.note.is_none() => a02.note = Some(format!("{e}; centred on the exact m_N")),
        _ => {}
    }
    Ok(vec![a01, a02])
}

/// A3 for without-replacement designs, at each `(y1, y2)` pair:
/// A3.2 `m_N(y) -> m(y)`, A3.3 `c_N(y1, y2) -> 0`,
/// A3.4 `m'_N(y1, y2) - m_N(y1) -> 0` (both orders), A3.5 `P(n = 0) -> 0`.
pub fn check_a3(
    design: &DesignSpec,
    model: &SuperpopModel,
    y_pairs: &[(f64, f64)],
    n_grid: &[usize],
    reps: usize,
    seed: u64,
    rule: &VerdictRule,
) -> Result<Vec<ConditionEntry>> {
    if design.with_replacement() {
        return Err(Error::InvalidDesign(format!("{}: A3 applies to sampling without replacement", design.name())));
    }
    check_grid(n_grid, 2)?;
    check_reps(reps, "reps")?;
    if y_pairs.is_empty() {
        return Err(Error::InvalidArgument("A3 needs at least one (y1, y2) pair".into()));
    }
    design.validate_for_model(model)?;
    let mut ys: Vec<f64> = y_pairs.iter().flat_map(|p| [p.0, p.1]).collect();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let table = m_table(design, model, &ys, n_grid, reps, mix64(seed, 0xA3, 0))?;
    let a32 = gap_entry("A3.2", design, model, &ys, n_grid, &table, rule);

    let tasks: Vec<(usize, usize)> =
        (0..n_grid.len()).flat_map(|i| (0..y_pairs.len()).map(move |j| (i, j))).collect();
    let pairs = tasks
        .par_iter()
        .map(|&(i, j)| {
            let (y1, y2) = y_pairs[j];
            pair_draws(design, model, y1, y2, n_grid[i], reps, mix64(seed, 0xA33, (i * y_pairs.len() + j) as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let m_at = |i: usize, y: f64| table[i][ys.iter().position(|&v| v == y).unwrap()];
    let mut cov = Vec::new();
    let mut mprime = Vec::new();
    for (i, &n) in n_grid.iter().enumerate() {
        let row = &pairs[i * y_pairs.len()..(i + 1) * y_pairs.len()];
        cov.push(worst(
            n,
            row.iter().map(|d| {
                let (m1, m2) = (mean_se(&d.i1).0, mean_se(&d.i2).0);
                let psi: Vec<f64> = d.i1.iter().zip(&d.i2).map(|(a, b)| (a - m1) * (b - m2)).collect();
                (d.unbiased_cov(), mean_se(&psi).1)
            }),
        ));
        mprime.push(worst(
            n,
            row.iter().zip(y_pairs).flat_map(|(d, &(y1, y2))| {
                let (mp12, se12) = mean_se(&d.i1);
                let (mp21, se21) = mean_se(&d.i2);
                let (m1, s1) = m_at(i, y1);
                let (m2, s2) = m_at(i, y2);
                [(mp12 - m1, se12.hypot(s1)), (mp21 - m2, se21.hypot(s2))]
            }),
        ));
    }
    let a33 = ConditionEntry::vanishing("A3.3", "max |c_hat(y1, y2)|", cov, rule);
    let a34 = ConditionEntry::vanishing("A3.4", "max |m'_hat(y1, y2) - m_hat(y1)|", mprime, rule);
    let a35 = empty_entry("A3.5", design, model, n_grid, reps, mix64(seed, 0xA35, 0), rule)?;
    Ok(vec![a32, a33, a34, a35])
}

/// Frequency of the empty sample, with the Chebyshev bound as auxiliary series.
fn empty_entry(
    id: &str,
    design: &DesignSpec,
    model: &SuperpopModel,
    n_grid: &[usize],
    reps: usize,
    seed: u64,
    rule: &VerdictRule,
) -> Result<ConditionEntry> {
    let mut est = Vec::new();
    let mut bounds = Vec::new();
    for (i, &n) in n_grid.iter().enumerate() {
        let sizes = unconditional(design, model, n, reps, mix64(seed, i as u64, 0), |_, iv| iv.n() as f64)?;
        let (p, se) = frequency(sizes.iter().filter(|&&s| s == 0.0).count(), reps);
        est.push(Estimate { n, value: p, se });
        let (e, _) = mean_se(&sizes);
        let (v, _) = var_se(&sizes);
        if let Ok(b) = empty_sample_bound(e, v) {
            bounds.push(Estimate { n, value: b, se: 0.0 });
        }
    }
    let mut entry = ConditionEntry::vanishing(id, "P(n = 0)", est, rule);
    if !bounds.is_empty() {
        entry.auxiliary = Some(Series { quantity: "Var(n)/(E[n]-1)^2".into(), estimates: bounds });
    }
    Ok(entry)
}

/// A1 by Monte Carlo over `(y1, y2) ~ f x f`: A1.1 `int c f f`,
/// A1.2 `int (m' m' - m m) f f`, A1.3 `int (v + m^2) f / N` and A1.5 `P(n = 0)`.
///
/// Each of the `pair_draws` outer pairs runs the design `inner_reps` times; the
/// inner covariance and the `m' m'` product use unbiased cross-replicate
/// estimators so the outer average is unbiased for the integrals.
pub fn check_a1_integrals(
    design: &DesignSpec,
    model: &SuperpopModel,
    n_grid: &[usize],
    pair_draws_count: usize,
    inner_reps: usize,
    seed: u64,
    rule: &VerdictRule,
) -> Result<Vec<ConditionEntry>> {
    check_grid(n_grid, 2)?;
    check_reps(pair_draws_count, "pair draws")?;
    check_reps(inner_reps, "inner reps")?;
    design.validate_for_model(model)?;
    let mut a11 = Vec::new();
    let mut a12 = Vec::new();
    let mut a13 = Vec::new();
    for (i, &n) in n_grid.iter().enumerate() {
        let base = mix64(seed, 0xA1, i as u64);
        let per_pair = (0..pair_draws_count as u64)
            .into_par_iter()
            .map(|p| {
                let mut rng = rng_from_seed(mix64(base, p, 0));
                let (y1, y2) = (model.draw_one(&mut rng), model.draw_one(&mut rng));
                let d = pair_draws(design, model, y1, y2, n, inner_reps, mix64(base, p, 1))?;
                let r = inner_reps as f64;
                let mean_i = (d.i1.iter().sum::<f64>() + d.i2.iter().sum::<f64>()) / (2.0 * r);
                let first = d.i1.iter().sum::<f64>() / r;
                let second = d.i2.iter().sum::<f64>() / r;
                Ok((d.unbiased_cov(), d.unbiased_mprime_product(), mean_i, first, second))
            })
            .collect::<Result<Vec<_>>>()?;
        let covs: Vec<f64> = per_pair.iter().map(|t| t.0).collect();
        let (c, se_c) = mean_se(&covs);
        a11.push(Estimate { n, value: c, se: se_c });

        // int m m f f = (int m f)^2, estimated by a product of two independent halves
        let half = per_pair.len() / 2;
        let mu_a = per_pair[..half].iter().map(|t| t.3).sum::<f64>() / half as f64;
        let mu_b = per_pair[half..].iter().map(|t| t.4).sum::<f64>() / (per_pair.len() - half) as f64;
        let prod_mean = per_pair.iter().map(|t| t.1).sum::<f64>() / per_pair.len() as f64;
        let mu = per_pair.iter().map(|t| t.2).sum::<f64>() / per_pair.len() as f64;
        let infl: Vec<f64> = per_pair.iter().map(|t| t.1 - 2.0 * mu * t.2).collect();
        a12.push(Estimate { n, value: prod_mean - mu_a * mu_b, se: mean_se(&infl).1 });

        let sq = unconditional(design, model, n, pair_draws_count, mix64(base, u64::MAX, 2), |_, iv| {
            iv.counts().iter().map(|&c| (c as f64).powi(2)).sum::<f64>() / iv.len() as f64
        })?;
        let (s, se_s) = mean_se(&sq);
        a13.push(Estimate { n, value: s / n as f64, se: se_s / n as f64 });
    }
    let a15 = empty_entry("A1.5", design, model, n_grid, pair_draws_count, mix64(seed, 0xA15, 0), rule)?;
    Ok(vec![
        ConditionEntry::vanishing("A1.1", "int c(y1, y2) f f", a11, rule),
        ConditionEntry::vanishing("A1.2", "int (m'm' - m m) f f", a12, rule),
        ConditionEntry::vanishing("A1.3", "int (v + m^2) f / N", a13, rule),
        a15,
    ])
}

/// A2 on one nested i.i.d. population sequence (each population is a prefix of
/// the next): A2.1 `max_alpha Var(sum 1{y <= alpha} I | Y) / N^2`,
/// A2.2 `max_alpha |sum 1{y <= alpha} (E[I | Y] - m(y))| / N`, A2.3 `P(n = 0 | Y)`.
///
/// `alpha_levels` are probability levels; the thresholds are the model quantiles.
/// When no closed-form `m_N` exists, A2.2 uses the first 32 units with
/// `m_N` estimated by Monte Carlo.
pub fn check_a2(
    design: &DesignSpec,
    model: &SuperpopModel,
    alpha_levels: &[f64],
    n_grid: &[usize],
    reps: usize,
    seed: u64,
    rule: &VerdictRule,
) -> Result<Vec<ConditionEntry>> {
    check_grid(n_grid, 2)?;
    check_reps(reps, "reps")?;
    if alpha_levels.is_empty() || alpha_levels.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(Error::InvalidArgument("alpha levels must be non-empty and lie in (0, 1)".into()));
    }
    design.validate_for_model(model)?;
    let alphas: Vec<f64> = alpha_levels.iter().map(|&p| model.quantile(p)).collect();
    let full = model.draw_population(*n_grid.last().unwrap(), mix64(seed, 0xA2, 0))?;
    let (mut a21, mut a22, mut a23) = (Vec::new(), Vec::new(), Vec::new());
    let mut subsampled = false;
    for (i, &n) in n_grid.iter().enumerate() {
        let pop = full.prefix(n)?;
        design.check_population(&pop)?;
        let ys = pop.responses();
        let m_exact: Option<Vec<f64>> = ys.iter().map(|&y| m_theoretical(design, model, y, n).value()).collect();
        let k_sub = ys.len().min(32);
        let base = mix64(seed, 0xA2, i as u64 + 1);
        let draws: Vec<(Vec<f64>, bool, Vec<u32>)> = (0..reps as u64)
            .into_par_iter()
            .map(|r| {
                let mut rng = rng_from_seed(mix64(base, r, 0));
                let (iv, _) = design.sample_with(&pop, &mut rng)?;
                let c = iv.counts();
                let sums = alphas
                    .iter()
                    .map(|&a| ys.iter().zip(c).filter(|(y, _)| **y <= a).map(|(_, &k)| k as f64).sum())
                    .collect();
                Ok((sums, iv.is_zero(), c[..k_sub].to_vec()))
            })
            .collect::<Result<_>>()?;
        let nf = n as f64;
        let mut worst_var = Estimate { n, value: 0.0, se: 0.0 };
        let mut worst_gap = Estimate { n, value: 0.0, se: 0.0 };
        let sub_m: Option<Vec<(f64, f64)>> = if m_exact.is_none() {
            subsampled = true;
            let est = (0..k_sub)
                .into_par_iter()
                .map(|k| {
                    let e = m_monte_carlo(design, model, ys[k], n, reps.max(100), mix64(base, k as u64, 1))?;
                    Ok((e.m_hat.unwrap(), e.se_m.unwrap()))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(est)
        } else {
            None
        };
        for (a_idx, &alpha) in alphas.iter().enumerate() {
            let sums: Vec<f64> = draws.iter().map(|d| d.0[a_idx]).collect();
            let (v, se_v) = var_se(&sums);
            if v / (nf * nf) >= worst_var.value {
                worst_var = Estimate { n, value: v / (nf * nf), se: se_v / (nf * nf) };
            }
            let gap = match (&m_exact, &sub_m) {
                (Some(m), _) => {
                    let (mean_sum, se_sum) = mean_se(&sums);
                    let target: f64 = ys.iter().zip(m).filter(|(y, _)| **y <= alpha).map(|(_, m)| m).sum();
                    Estimate { n, value: (mean_sum - target) / nf, se: se_sum / nf }
                }
                (None, Some(m)) => {
                    let mut value = 0.0;
                    let mut var = 0.0;
                    for k in (0..k_sub).filter(|&k| ys[k] <= alpha) {
                        let unit: Vec<f64> = draws.iter().map(|d| d.2[k] as f64).collect();
                        let (mk, sek) = mean_se(&unit);
                        value += mk - m[k].0;
                        var += sek * sek + m[k].1 * m[k].1;
                    }
                    Estimate { n, value: value / k_sub as f64, se: var.sqrt() / k_sub as f64 }
                }
                _ => unreachable!(),
            };
            if gap.value.abs() >= worst_gap.value.abs() {
                worst_gap = gap;
            }
        }
        a21.push(worst_var);
        a22.push(worst_gap);
        let (p, se) = frequency(draws.iter().filter(|d| d.1).count(), reps);
        a23.push(Estimate { n, value: p, se });
    }
    let mut e22 = ConditionEntry::vanishing("A2.2", "max_a |sum 1{y<=a}(E[I|Y]-m)| / N", a22, rule);
    if subsampled {
        e22.note = Some("m_N estimated by Monte Carlo on the first 32 units".into());
    }
    Ok(vec![
        ConditionEntry::vanishing("A2.1", "max_a Var(sum 1{y<=a} I | Y)/N^2", a21, rule),
        e22,
        ConditionEntry::vanishing("A2.3", "g(0, y)", a23, rule),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::SizeRule;
    use approx::assert_abs_diff_eq;

    fn u(a: f64, b: f64) -> SuperpopModel {
        SuperpopModel::uniform(a, b).unwrap()
    }

    #[test]
    fn empty_sample_bound_examples() {
        assert_abs_diff_eq!(empty_sample_bound(10.0, 5.0).unwrap(), 5.0 / 81.0, epsilon = 1e-15);
        assert_abs_diff_eq!(empty_sample_bound(100.0, 100.0).unwrap(), 100.0 / 9801.0, epsilon = 1e-15);
        assert_eq!(empty_sample_bound(1.0, 3.0), Err(Error::VacuousBound(1.0)));
    }

    #[test]
    fn srswor_cov_identity_examples() {
        let (c, e) = srswor_cov_identity(4, 2).unwrap();
        assert_abs_diff_eq!(c, -1.0 / 12.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e, -1.0 / 12.0, epsilon = 1e-12);
        assert_eq!(srswor_cov_identity(2, 2).unwrap().0, 0.0);
        assert_abs_diff_eq!(srswor_cov_identity(2, 2).unwrap().1, 0.0, epsilon = 1e-15);
        let (c, e) = srswor_cov_identity(6, 2).unwrap();
        assert_abs_diff_eq!(c, -2.0 / 45.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e, -2.0 / 45.0, epsilon = 1e-12);
        assert!(srswor_cov_identity(21, 2).is_err());
        assert!(srswor_cov_identity(5, 0).is_err());
        assert!(srswor_cov_identity(5, 6).is_err());
    }

    #[test]
    fn slope_fit_recovers_exponent() {
        let pts: Vec<(f64, f64)> = [10.0, 100.0, 1000.0, 5000.0].iter().map(|&n| (n, 0.21 / n)).collect();
        let fit = fit_power_law(&pts).unwrap();
        assert!((fit.slope + 1.0).abs() < 0.01);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(fit_power_law(&[(10.0, 0.0), (20.0, 1.0)]).is_none());
    }

    #[test]
    fn verdict_rule_cases() {
        let rule = VerdictRule::default();
        let est = |v: &[(usize, f64, f64)]| v.iter().map(|&(n, value, se)| Estimate { n, value, se }).collect::<Vec<_>>();
        assert_eq!(vanishing_verdict(&est(&[(10, 0.0, 0.0), (20, 0.0, 0.0)]), &rule).0, Verdict::Pass);
        assert_eq!(vanishing_verdict(&est(&[(10, 0.04, 0.001), (100, 0.04, 0.001)]), &rule).0, Verdict::Fail);
        assert_eq!(vanishing_verdict(&est(&[(10, 0.01, 0.001), (100, 0.001, 0.0001)]), &rule).0, Verdict::Pass);
        assert_eq!(vanishing_verdict(&est(&[(10, 0.001, 0.003), (100, -0.002, 0.003)]), &rule).0, Verdict::Pass);
        assert_eq!(vanishing_verdict(&est(&[(10, 0.01, 0.05), (100, 0.01, 0.05)]), &rule).0, Verdict::Inconclusive);
        assert_eq!(vanishing_verdict(&est(&[(10, 0.01, 0.001), (100, 0.01, 0.001)]), &rule).0, Verdict::Inconclusive);
    }

    #[test]
    fn a4_examples() {
        let model = u(0.0, 1.0);
        let grid = [100, 400, 1600];
        let rule = VerdictRule::default();
        let (e, w) = check_a4(&DesignSpec::Bernoulli { p: 0.3 }, &model, &grid, 400, 1, &rule).unwrap();
        assert_eq!(e.verdict, Verdict::Pass);
        assert!((e.slope.unwrap() + 1.0).abs() < 0.3);
        assert!(w.is_empty());
        let (e, _) = check_a4(&DesignSpec::Srswor { size: SizeRule::Rate(0.3) }, &model, &grid, 200, 2, &rule).unwrap();
        assert_eq!(e.verdict, Verdict::Pass);
        assert!(e.estimates.iter().all(|x| x.value == 0.0));
        let (e, _) = check_a4(&DesignSpec::PoissonPathological { a: 0.5, b: 0.1 }, &model, &grid, 400, 3, &rule).unwrap();
        assert_eq!(e.verdict, Verdict::Fail);
        assert!(e.estimates.iter().all(|x| (x.value - 0.04).abs() < 0.005));
        assert!(check_a4(&DesignSpec::Bernoulli { p: 0.3 }, &model, &[10, 20], 100, 1, &rule).is_err());
    }

    #[test]
    fn a4_warns_on_informative_design() {
        let model = u(0.5, 1.5);
        let (_, w) =
            check_a4(&DesignSpec::LengthBiased { tau: 0.5, c: 0.0 }, &model, &[50, 100, 200], 2000, 4, &VerdictRule::default())
                .unwrap();
        assert!(!w.is_empty());
    }

    #[test]
    fn a3_examples() {
        let rule = VerdictRule::default();
        let model = u(0.5, 1.5);
        let pairs = [(0.7, 0.9), (0.8, 1.3)];
        let lb = check_a3(&DesignSpec::LengthBiased { tau: 0.5, c: 0.0 }, &model, &pairs, &[50, 200, 800], 4000, 5, &rule)
            .unwrap();
        assert_eq!(lb.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(), ["A3.2", "A3.3", "A3.4", "A3.5"]);
        for e in &lb {
            assert_eq!(e.verdict, Verdict::Pass, "{}", e.id);
        }
        let b = check_a3(&DesignSpec::Bernoulli { p: 0.4 }, &model, &pairs, &[50, 200, 800], 4000, 6, &rule).unwrap();
        for e in &b {
            assert_eq!(e.verdict, Verdict::Pass, "{}", e.id);
        }
        let model01 = u(0.0, 1.0);
        let cl = check_a3(&DesignSpec::ClusterSplit { tau: 0.3 }, &model01, &[(0.1, 0.2)], &[50, 200, 800], 4000, 7, &rule)
            .unwrap();
        let a33 = cl.iter().find(|e| e.id == "A3.3").unwrap();
        assert_eq!(a33.verdict, Verdict::Fail);
        assert!(a33.estimates.iter().all(|e| (e.value - 0.25).abs() < 4.0 * e.se + 1e-9));
        let pps = DesignSpec::PpsWithReplacement { size: SizeRule::Rate(0.3) };
        assert!(matches!(check_a3(&pps, &model, &pairs, &[50, 100], 200, 1, &rule), Err(Error::InvalidDesign(_))));
    }

    #[test]
    fn a1_examples() {
        let rule = VerdictRule::default();
        let model01 = u(0.0, 1.0);
        let cl = check_a1_integrals(&DesignSpec::ClusterSplit { tau: 0.3 }, &model01, &[50, 200], 3000, 10, 8, &rule).unwrap();
        let a11 = &cl[0];
        assert_eq!(a11.id, "A1.1");
        assert_eq!(a11.verdict, Verdict::Fail);
        assert!(a11.estimates.iter().all(|e| (e.value - 0.04).abs() < 0.01), "{:?}", a11.estimates);
        let b = check_a1_integrals(&DesignSpec::Bernoulli { p: 0.3 }, &model01, &[50, 200], 2000, 10, 9, &rule).unwrap();
        assert_eq!(b[0].verdict, Verdict::Pass);
        let pps = DesignSpec::PpsWithReplacement { size: SizeRule::Rate(0.3) };
        let p = check_a1_integrals(&pps, &u(0.5, 1.5), &[50, 200, 800], 400, 10, 10, &rule).unwrap();
        let a13 = p.iter().find(|e| e.id == "A1.3").unwrap();
        assert_eq!(a13.verdict, Verdict::Pass);
        assert!((a13.slope.unwrap() + 1.0).abs() < 0.1);
    }

    /// `int (v + m^2) f = E[I_1^2]` by exhaustive enumeration of a discretized
    /// population and of the design, at a tiny N.
    #[test]
    fn a13_matches_enumeration_for_pps() {
        let model = u(0.5, 1.5);
        let design = DesignSpec::PpsWithReplacement { size: SizeRule::N(2) };
        let grid: Vec<f64> = (0..21).map(|j| model.quantile((j as f64 + 0.5) / 21.0)).collect();
        let mut exact = 0.0;
        for a in &grid {
            for b in &grid {
                for c in &grid {
                    let pop = Population::new(vec![*a, *b, *c]).unwrap();
                    for (iv, p) in design.enumerate_support(&pop).unwrap() {
                        exact += p * (iv.counts()[0] as f64).powi(2);
                    }
                }
            }
        }
        exact /= 21f64.powi(3);
        let sq = unconditional(&design, &model, 3, 40_000, 11, |_, iv| (iv.counts()[0] as f64).powi(2)).unwrap();
        let (mc, se) = mean_se(&sq);
        assert!((mc - exact).abs() < 4.0 * se + 2e-3, "{mc} vs {exact}");
    }

    #[test]
    fn a2_examples() {
        let rule = VerdictRule::default();
        let model01 = u(0.0, 1.0);
        let levels = [0.1, 0.3, 0.5, 0.9];
        let b = check_a2(&DesignSpec::Bernoulli { p: 0.3 }, &model01, &levels, &[100, 400, 1600], 1000, 12, &rule).unwrap();
        assert!(b.iter().all(|e| e.verdict == Verdict::Pass), "{b:?}");
        assert!((b[0].slope.unwrap() + 1.0).abs() < 0.2);
        let cl = check_a2(&DesignSpec::ClusterSplit { tau: 0.3 }, &model01, &[0.3], &[100, 400, 1600], 1000, 13, &rule).unwrap();
        assert_eq!(cl[0].verdict, Verdict::Fail);
        // the numerator is (count below tau) * Bernoulli(1/2) on the realized nested population
        let full = model01.draw_population(1600, mix64(13, 0xA2, 0)).unwrap();
        for e in &cl[0].estimates {
            let below = full.responses()[..e.n].iter().filter(|&&y| y <= 0.3).count() as f64 / e.n as f64;
            assert!((e.value - below * below / 4.0).abs() < 1e-3, "{e:?} vs {below}");
        }
        assert!((cl[0].estimates[2].value - 0.0225).abs() < 0.004);
        let s = check_a2(&DesignSpec::Srswor { size: SizeRule::Rate(0.2) }, &model01, &levels, &[100, 400], 200, 14, &rule).unwrap();
        assert!(s[2].estimates.iter().all(|e| e.value == 0.0));
        assert_eq!(s[2].verdict, Verdict::Pass);
    }

    #[test]
    fn a2_without_closed_form_m() {
        let design = DesignSpec::PoissonProportionalZ { n_star: SizeRule::Rate(0.3), z_law: u(1.0, 2.0) };
        let r = check_a2(&design, &u(0.0, 1.0), &[0.5], &[100, 400], 200, 15, &VerdictRule::default()).unwrap();
        assert!(r[1].note.is_some());
        assert_ne!(r[1].verdict, Verdict::Fail);
    }

    #[test]
    fn a0_examples() {
        let rule = VerdictRule::default();
        let model = u(0.5, 1.5);
        let r = check_a0(&DesignSpec::LengthBiased { tau: 0.5, c: 2.0 }, &model, &[0.7, 1.2], &[50, 400], 4000, 16, &rule).unwrap();
        assert!(r.iter().all(|e| e.verdict == Verdict::Pass), "{r:?}");
        let r = check_a0(&DesignSpec::ClusterSplit { tau: 1.0 }, &model, &[0.7, 1.2], &[50, 400], 2000, 17, &rule).unwrap();
        assert_eq!(r[1].verdict, Verdict::Pass);
        assert!(r[1].note.as_deref().unwrap().contains("no limit"));
    }

    #[test]
    fn empty_bound_dominates_frequency() {
        let model = u(0.0, 1.0);
        for (n, p) in [(20usize, 0.1), (40, 0.1), (30, 0.2)] {
            let d = DesignSpec::Bernoulli { p };
            let e = empty_entry("A1.5", &d, &model, &[n, 2 * n], 4000, 18, &VerdictRule::default()).unwrap();
            let bounds = e.auxiliary.unwrap().estimates;
            for (est, b) in e.estimates.iter().zip(&bounds) {
                assert!(est.value <= b.value + 4.0 * est.se);
            }
        }
    }

    #[test]
    fn reports_are_reproducible() {
        let model = u(0.0, 1.0);
        let design = DesignSpec::CutOff { tau: 0.3, rate: 0.5, mode: crate::designs::CutOffMode::TakeAll };
        let run = || {
            let entries = check_a3(&design, &model, &[(0.2, 0.6)], &[50, 100], 300, 19, &VerdictRule::default()).unwrap();
            serde_json::to_string(&ConditionReport { design: design.name().into(), entries, warnings: vec![] }).unwrap()
        };
        let a = run();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(run);
        assert_eq!(a, b);
    }

    #[test]
    fn table_rendering() {
        let entry = ConditionEntry::vanishing(
            "A4",
            "Var(n)/N^2",
            vec![Estimate { n: 10, value: 0.1, se: 0.01 }, Estimate { n: 100, value: 0.01, se: 0.001 }],
            &VerdictRule::default(),
        );
        let report = ConditionReport { design: "bernoulli".into(), entries: vec![entry], warnings: vec!["w".into()] };
        let t = report.render_table();
        assert!(t.contains("pass"));
        assert!(t.lines().count() == 5);
    }
}
