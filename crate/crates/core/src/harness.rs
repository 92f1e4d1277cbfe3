//! Experiment driver behind the `selcdf` binary: convergence runs, condition
//! audits, coupling and enumeration dumps, configured by one JSON document.
//!
//! Replicate `r` at grid index `i` uses the seed `mix64(seed, i, r)`; its
//! population is drawn from `mix64(rep, 1, 0)` and its sample from
//! `mix64(rep, 2, 0)`. Results are merged in `(i, r)` order, so output bytes do
//! not depend on the number of threads.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditions::{
    check_a0, check_a1_integrals, check_a2, check_a3, check_a4, empty_sample_bound, fit_power_law,
    ConditionReport, PowerFit, VerdictRule,
};
use crate::coupling::{build_coupling_with, coupled_sup_trajectory, CouplingPartition, HTarget};
use crate::designs::{DesignSpec, IndicatorVector};
use crate::ecdf::{empirical_cdf, QuantileGrid};
use crate::error::{Error, Result};
use crate::rng::{mix64, rng_from_seed};
use crate::superpop::{Population, SuperpopModel};
use crate::weights::{builtin_weight, LimitCdf};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Converge,
    Audit,
    Couple,
    Enumerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConditionGroup {
    A0,
    A1,
    A2,
    A3,
    A4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSettings {
    /// Replicates per estimate for A0, A2, A3 and A4.
    pub reps: usize,
    /// Outer `(y1, y2)` draws for the A1 integrals.
    pub pair_draws: usize,
    /// Design runs per outer pair for the A1 integrals.
    pub inner_reps: usize,
    /// Probability levels whose model quantiles are the A2 thresholds.
    pub alpha_levels: Vec<f64>,
    /// Response pairs for A0 and A3; defaults to model quantiles at
    /// (0.1, 0.2), (0.2, 0.8) and (0.8, 0.9).
    pub y_pairs: Option<Vec<(f64, f64)>>,
    /// Groups to run instead of the ones chosen from the design.
    pub groups: Option<Vec<ConditionGroup>>,
    pub rule: VerdictRule,
}

impl Default for AuditSettings {
    fn default() -> Self {
        AuditSettings {
            reps: 2000,
            pair_draws: 2000,
            inner_reps: 10,
            alpha_levels: vec![0.1, 0.25, 0.5, 0.75, 0.9],
            y_pairs: None,
            groups: None,
            rule: VerdictRule::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoupleSettings {
    /// Point of [0, 1] at which the coupling is inverted for the trajectory.
    pub x: f64,
    pub h_target: HTarget,
}

impl Default for CoupleSettings {
    fn default() -> Self {
        CoupleSettings { x: 0.5, h_target: HTarget::Normalized }
    }
}

fn default_interval() -> (f64, f64) {
    (0.1, 0.9)
}

fn default_grid() -> usize {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: SuperpopModel,
    pub design: DesignSpec,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default = "default_interval")]
    pub quantile_interval: (f64, f64),
    #[serde(default = "default_grid")]
    pub quantile_grid: usize,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub audit: AuditSettings,
    #[serde(default)]
    pub couple: CoupleSettings,
    #[serde(default)]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_grid.is_empty() || self.n_grid[0] == 0 || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("n_grid must be non-empty, positive and strictly increasing, got {:?}", self.n_grid));
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        let (lo, hi) = self.quantile_interval;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return bad(format!("quantile_interval must satisfy 0 < a <= b < 1, got [{lo}, {hi}]"));
        }
        if self.quantile_grid < 2 {
            return bad(format!("quantile_grid must be at least 2, got {}", self.quantile_grid));
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.couple.x) {
            return bad(format!("couple.x must lie in [0, 1], got {}", self.couple.x));
        }
        let a = &self.audit;
        if a.reps < 100 || a.pair_draws < 2 || a.inner_reps < 2 {
            return bad("audit needs reps >= 100, pair_draws >= 2 and inner_reps >= 2".into());
        }
        if a.alpha_levels.is_empty() || a.alpha_levels.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return bad("audit.alpha_levels must be non-empty and lie in (0, 1)".into());
        }
        self.design.validate_for_model(&self.model).map_err(|e| Error::Config(e.to_string()))
    }

    fn y_pairs(&self) -> Vec<(f64, f64)> {
        self.audit.y_pairs.clone().unwrap_or_else(|| {
            [(0.1, 0.2), (0.2, 0.8), (0.8, 0.9)]
                .iter()
                .map(|&(a, b)| (self.model.quantile(a), self.model.quantile(b)))
                .collect()
        })
    }
}

/// Runs `f` on a dedicated pool when a thread count is given.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| Error::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub design: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub replicate: usize,
    pub realized_n: u64,
    pub empty: bool,
    pub sup_dist: f64,
    pub sup_dist_sq: f64,
    /// `None` for empty samples, which have no quantiles.
    pub quantile_sup_dist: Option<f64>,
}

pub const CSV_HEADER: &str = "design,N,replicate,realized_n,empty,sup_dist,sup_dist_sq,quantile_sup_dist";

impl ConvergenceRow {
    fn csv_line(&self) -> String {
        let q = self.quantile_sup_dist.map_or(String::new(), |q| q.to_string());
        format!(
            "{},{},{},{},{},{},{},{}",
            self.design, self.n, self.replicate, self.realized_n, self.empty, self.sup_dist, self.sup_dist_sq, q
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    #[serde(rename = "N")]
    pub n: usize,
    pub replicates: usize,
    pub mean_realized_n: f64,
    pub mean_sup: f64,
    pub se_sup: f64,
    pub mean_sup_sq: f64,
    pub se_sup_sq: f64,
    /// Over non-empty replicates only.
    pub mean_quantile_sup: Option<f64>,
    pub se_quantile_sup: Option<f64>,
    pub empty_frequency: f64,
    /// `Var(n) / (E[n] - 1)^2` from the realized sizes, when `E[n] > 1`.
    pub empty_bound: Option<f64>,
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

impl Aggregate {
    /// Aggregates rows of one grid point, summing in row order.
    pub fn from_rows(rows: &[ConvergenceRow]) -> Self {
        let pick = |f: fn(&ConvergenceRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
        let sizes = pick(|r| r.realized_n as f64);
        let (mean_n, se_n) = mean_se(&sizes);
        let var_n = se_n * se_n * sizes.len() as f64;
        let (mean_sup, se_sup) = mean_se(&pick(|r| r.sup_dist));
        let (mean_sup_sq, se_sup_sq) = mean_se(&pick(|r| r.sup_dist_sq));
        let qs: Vec<f64> = rows.iter().filter_map(|r| r.quantile_sup_dist).collect();
        let (mq, sq) = if qs.is_empty() { (None, None) } else {
            let (m, s) = mean_se(&qs);
            (Some(m), Some(s))
        };
        Aggregate {
            n: rows[0].n,
            replicates: rows.len(),
            mean_realized_n: mean_n,
            mean_sup,
            se_sup,
            mean_sup_sq,
            se_sup_sq,
            mean_quantile_sup: mq,
            se_quantile_sup: sq,
            empty_frequency: rows.iter().filter(|r| r.empty).count() as f64 / rows.len() as f64,
            empty_bound: empty_sample_bound(mean_n, var_n).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub design: DesignSpec,
    pub model: SuperpopModel,
    pub seed: u64,
    pub limit: String,
    pub rows: Vec<ConvergenceRow>,
    pub aggregates: Vec<Aggregate>,
    /// Fit of `mean sup^2 = c N^slope`.
    pub slope: Option<PowerFit>,
    /// Fit of `mean quantile sup = c N^slope`.
    pub quantile_slope: Option<PowerFit>,
}

impl ConvergenceReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for row in &self.rows {
            writeln!(w, "{}", row.csv_line())?;
        }
        Ok(())
    }
}

/// Sup distances of the selected ecdf to `F_s` and of its quantiles over `K`.
pub fn run_convergence(config: &ExperimentConfig) -> Result<ConvergenceReport> {
    let weight = builtin_weight(&config.design, &config.model)?;
    let description = weight.description.clone();
    let limit = LimitCdf::new(weight, &config.model)?;
    run_convergence_against(config, &limit, &description)
}

/// As [`run_convergence`] with an explicit target c.d.f., e.g. `F` itself for
/// designs that have no limit weight.
pub fn run_convergence_against(config: &ExperimentConfig, limit: &LimitCdf, description: &str) -> Result<ConvergenceReport> {
    let (model, design) = (&config.model, &config.design);
    design.validate_for_model(model)?;
    let qgrid = QuantileGrid::new(limit, config.quantile_interval, config.quantile_grid)?;
    let tasks: Vec<(usize, usize)> =
        (0..config.n_grid.len()).flat_map(|i| (0..config.replicates).map(move |r| (i, r))).collect();
    let rows = tasks
        .par_iter()
        .map(|&(i, r)| {
            let n = config.n_grid[i];
            let rep = mix64(config.seed, i as u64, r as u64);
            let pop = model.draw_population(n, mix64(rep, 1, 0))?;
            let mut rng = rng_from_seed(mix64(rep, 2, 0));
            let (iv, _) = design.sample_with(&pop, &mut rng)?;
            let step = empirical_cdf(&pop, &iv)?;
            let sup = step.sup_distance(limit);
            let quantile_sup_dist = if step.is_empty() { None } else { Some(qgrid.sup_distance(&step)?) };
            Ok(ConvergenceRow {
                design: design.name().into(),
                n,
                replicate: r,
                realized_n: iv.n(),
                empty: step.is_empty(),
                sup_dist: sup,
                sup_dist_sq: sup * sup,
                quantile_sup_dist,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregates: Vec<Aggregate> = rows.chunks(config.replicates).map(Aggregate::from_rows).collect();
    let slope = fit_power_law(&aggregates.iter().map(|a| (a.n as f64, a.mean_sup_sq)).collect::<Vec<_>>());
    let quantile_slope = fit_power_law(
        &aggregates.iter().filter_map(|a| a.mean_quantile_sup.map(|q| (a.n as f64, q))).collect::<Vec<_>>(),
    );
    Ok(ConvergenceReport {
        design: design.clone(),
        model: model.clone(),
        seed: config.seed,
        limit: description.into(),
        rows,
        aggregates,
        slope,
        quantile_slope,
    })
}

/// Condition checkers applicable to the design: A4 for designs independent
/// of the responses, A0-A3 for other designs without replacement, A0-A2 with
/// replacement; `audit.groups` overrides the choice.
pub fn audit_groups(config: &ExperimentConfig) -> Vec<ConditionGroup> {
    use ConditionGroup::*;
    if let Some(groups) = &config.audit.groups {
        let mut g = groups.clone();
        g.sort();
        g.dedup();
        return g;
    }
    let d = &config.design;
    if d.is_non_informative() && !d.with_replacement() {
        vec![A4]
    } else if d.with_replacement() {
        vec![A0, A1, A2]
    } else {
        vec![A0, A1, A2, A3]
    }
}

pub fn run_audit(config: &ExperimentConfig) -> Result<ConditionReport> {
    let (model, design, grid, a) = (&config.model, &config.design, &config.n_grid[..], &config.audit);
    let seed = config.seed;
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    if builtin_weight(design, model).is_err() {
        warnings.push(format!("{} has no limit weight, so no limit c.d.f. is defined", design.name()));
    }
    let pairs = config.y_pairs();
    let mut ys: Vec<f64> = pairs.iter().flat_map(|p| [p.0, p.1]).collect();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    for group in audit_groups(config) {
        match group {
            ConditionGroup::A0 => entries.extend(check_a0(design, model, &ys, grid, a.reps, mix64(seed, 0, 0), &a.rule)?),
            ConditionGroup::A1 => entries.extend(check_a1_integrals(
                design,
                model,
                grid,
                a.pair_draws,
                a.inner_reps,
                mix64(seed, 1, 0),
                &a.rule,
            )?),
            ConditionGroup::A2 => {
                entries.extend(check_a2(design, model, &a.alpha_levels, grid, a.reps, mix64(seed, 2, 0), &a.rule)?)
            }
            ConditionGroup::A3 => entries.extend(check_a3(design, model, &pairs, grid, a.reps, mix64(seed, 3, 0), &a.rule)?),
            ConditionGroup::A4 => {
                let (entry, w) = check_a4(design, model, grid, a.reps, mix64(seed, 4, 0), &a.rule)?;
                entries.push(entry);
                warnings.extend(w);
            }
        }
    }
    Ok(ConditionReport { design: design.name().into(), entries, warnings })
}

/// Limit used by the coupling: the design's own, or `F` when it has none.
fn coupling_limit(config: &ExperimentConfig) -> Result<(LimitCdf, String)> {
    match builtin_weight(&config.design, &config.model) {
        Ok(w) => {
            let d = w.description.clone();
            Ok((LimitCdf::new(w, &config.model)?, d))
        }
        Err(Error::NoLimit(name)) => Ok((
            LimitCdf::unweighted(&config.model),
            format!("{name} has no limit weight; compared with the superpopulation c.d.f."),
        )),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupleSummary {
    #[serde(rename = "N")]
    pub n: usize,
    pub x: f64,
    pub h_target: HTarget,
    pub limit: String,
    pub support_size: usize,
    pub population: Vec<f64>,
    pub trajectory: Vec<(usize, f64)>,
}

/// Coupling partition at the largest N and the trajectory over the grid.
pub fn run_couple(config: &ExperimentConfig) -> Result<(CouplingPartition, CoupleSummary)> {
    let (limit, note) = coupling_limit(config)?;
    let n = *config.n_grid.last().unwrap();
    let pop_seed = mix64(config.seed, 0xC0, 0);
    let pop = config.model.draw_population(n, pop_seed)?;
    let partition = build_coupling_with(&config.design, &pop, &limit, config.couple.h_target)?;
    let trajectory = coupled_sup_trajectory(
        &config.design,
        &config.model,
        &limit,
        &config.n_grid,
        config.couple.x,
        pop_seed,
        config.couple.h_target,
    )?;
    let summary = CoupleSummary {
        n,
        x: config.couple.x,
        h_target: config.couple.h_target,
        limit: note,
        support_size: partition.entries().len(),
        population: pop.responses().to_vec(),
        trajectory,
    };
    Ok((partition, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumerateSummary {
    #[serde(rename = "N")]
    pub n: usize,
    pub population: Vec<f64>,
    pub support_size: usize,
    pub expected_sample_size: f64,
    pub total_probability: f64,
}

/// Exact design law at the largest N of the grid.
pub fn run_enumerate(config: &ExperimentConfig) -> Result<(Vec<(IndicatorVector, f64)>, EnumerateSummary)> {
    let n = *config.n_grid.last().unwrap();
    let pop: Population = config.model.draw_population(n, mix64(config.seed, 0xE0, 0))?;
    let support = config.design.enumerate_support(&pop)?;
    let summary = EnumerateSummary {
        n,
        population: pop.responses().to_vec(),
        support_size: support.len(),
        expected_sample_size: config.design.expected_sample_size(&pop)?,
        total_probability: support.iter().map(|s| s.1).sum(),
    };
    Ok((support, summary))
}

/// `out.csv` gets `out.json` beside it; a `.json` output gets `out.summary.json`.
pub fn sidecar_path(output: &Path) -> PathBuf {
    if output.extension().is_some_and(|e| e == "json") {
        output.with_extension("summary.json")
    } else {
        output.with_extension("json")
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_with<F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>>(path: &Path, f: F) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Runs the configured mode, writes its files and returns a human-readable summary.
pub fn execute(config: &ExperimentConfig) -> Result<String> {
    with_threads(config.threads, || execute_inner(config))?
}

fn execute_inner(config: &ExperimentConfig) -> Result<String> {
    let out = config.output.as_deref();
    match config.mode {
        Mode::Converge => {
            let report = run_convergence(config)?;
            if let Some(path) = out {
                write_with(path, |b| report.write_csv(b))?;
                write_json(&sidecar_path(path), &report)?;
            }
            let mut s = format!("{:>8} {:>10} {:>12} {:>12} {:>12} {:>8}\n", "N", "mean n", "mean sup", "mean sup^2", "quantile", "empty");
            for a in &report.aggregates {
                s += &format!(
                    "{:>8} {:>10.1} {:>12.6} {:>12.3e} {:>12} {:>8.4}\n",
                    a.n,
                    a.mean_realized_n,
                    a.mean_sup,
                    a.mean_sup_sq,
                    a.mean_quantile_sup.map_or("-".into(), |q| format!("{q:.6}")),
                    a.empty_frequency
                );
            }
            if let Some(fit) = report.slope {
                s += &format!("log-log slope of mean sup^2: {:.3} (R^2 {:.3})\n", fit.slope, fit.r_squared);
            }
            Ok(s)
        }
        Mode::Audit => {
            let report = run_audit(config)?;
            if let Some(path) = out {
                write_json(path, &report)?;
            }
            Ok(report.render_table())
        }
        Mode::Couple => {
            let (partition, summary) = run_couple(config)?;
            if let Some(path) = out {
                write_with(path, |b| partition.write_csv(b))?;
                write_json(&sidecar_path(path), &summary)?;
            }
            let mut s = format!("N = {}, support size {}, x = {}\n", summary.n, summary.support_size, summary.x);
            for (n, h) in &summary.trajectory {
                s += &format!("{n:>8} {h:>12.6}\n");
            }
            Ok(s)
        }
        Mode::Enumerate => {
            let (support, summary) = run_enumerate(config)?;
            if let Some(path) = out {
                write_with(path, |b| {
                    writeln!(b, "indicator,probability")?;
                    for (iv, p) in &support {
                        writeln!(b, "{},{p}", iv.to_code())?;
                    }
                    Ok(())
                })?;
                write_json(&sidecar_path(path), &summary)?;
            }
            Ok(format!(
                "N = {}, support size {}, E[n] = {}, total probability {}\n",
                summary.n, summary.support_size, summary.expected_sample_size, summary.total_probability
            ))
        }
    }
}
