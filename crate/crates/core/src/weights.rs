//! Inclusion-probability functionals and the weighted limit c.d.f.
//!
//! `m(y) = E[I_k | Y_k = y]` is evaluated in closed form where one exists
//! ([`m_theoretical`]) and otherwise estimated by conditioning by construction:
//! the conditioned coordinates are pinned to the requested values and the rest of
//! the population is redrawn from the model on every replicate.

use serde::{Deserialize, Serialize};

use crate::designs::{CutOffMode, DesignSpec, SizeRule};
use crate::error::{Error, Result};
use crate::quad::adaptive_simpson;
use crate::rng::rng_from_seed;
use crate::superpop::SuperpopModel;

const QUAD_TOL: f64 = 1e-9;

/// Pointwise weight function `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightFn {
    Constant { value: f64 },
    /// `m(y) = slope * y`
    Linear { slope: f64 },
    /// `levels[i]` applies on `(breaks[i - 1], breaks[i]]`; `levels` has one
    /// more entry than `breaks`.
    Step { breaks: Vec<f64>, levels: Vec<f64> },
}

impl WeightFn {
    pub fn eval(&self, y: f64) -> f64 {
        match self {
            WeightFn::Constant { value } => *value,
            WeightFn::Linear { slope } => slope * y,
            WeightFn::Step { breaks, levels } => levels[breaks.partition_point(|&b| b < y)],
        }
    }

    fn breaks(&self) -> &[f64] {
        match self {
            WeightFn::Step { breaks, .. } => breaks,
            _ => &[],
        }
    }

    /// `(c0, c1)` with `m(y) = c0 + c1 y` on the open interval `(lo, hi)`,
    /// which must not contain a step break.
    fn affine_on(&self, lo: f64, hi: f64) -> (f64, f64) {
        match self {
            WeightFn::Constant { value } => (*value, 0.0),
            WeightFn::Linear { slope } => (0.0, *slope),
            WeightFn::Step { .. } => (self.eval(0.5 * (lo + hi)), 0.0),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("weight: {m}")));
        match self {
            WeightFn::Constant { value } if !(*value >= 0.0 && value.is_finite()) => bad("constant must be >= 0"),
            WeightFn::Linear { slope } if !(*slope >= 0.0 && slope.is_finite()) => bad("slope must be >= 0"),
            WeightFn::Step { breaks, levels } => {
                if levels.len() != breaks.len() + 1 {
                    return bad("step needs one more level than breaks");
                }
                if breaks.windows(2).any(|w| !(w[0] <= w[1])) {
                    return bad("step breaks must be non-decreasing");
                }
                if levels.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
                    return bad("step levels must be >= 0");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Limit weight `m`, a constant dominating bound `M`, and `int m f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub m: WeightFn,
    /// Constant dominating function, `1.5 * max(1, sup m)` over the support.
    pub bound: f64,
    pub normalizer: f64,
    pub description: String,
}

impl WeightSpec {
    pub fn new(m: WeightFn, model: &SuperpopModel, description: impl Into<String>) -> Result<Self> {
        m.validate()?;
        let nodes = segment_nodes(&m, model);
        let normalizer: f64 = nodes.windows(2).map(|w| segment_mass(&m, model, w[0], w[1])).sum();
        if !(normalizer > 0.0) {
            return Err(Error::ZeroNormalizer(normalizer));
        }
        let (a, b) = model.support();
        let sup = (0..=1000)
            .map(|i| m.eval(a + (b - a) * i as f64 / 1000.0))
            .chain(nodes.iter().map(|&x| m.eval(x)))
            .fold(0.0, f64::max);
        Ok(WeightSpec { m, bound: 1.5 * sup.max(1.0), normalizer, description: description.into() })
    }

    pub fn constant(value: f64, model: &SuperpopModel) -> Result<Self> {
        Self::new(WeightFn::Constant { value }, model, "constant")
    }

    pub fn eval(&self, y: f64) -> f64 {
        self.m.eval(y)
    }
}

/// Sorted support nodes: the support ends, density knots and weight breaks inside.
fn segment_nodes(m: &WeightFn, model: &SuperpopModel) -> Vec<f64> {
    let (a, b) = model.support();
    let mut nodes: Vec<f64> = model
        .breakpoints()
        .into_iter()
        .chain(m.breaks().iter().copied().filter(|x| *x > a && *x < b))
        .collect();
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    nodes
}

/// `int_lo^hi m f` for a segment without interior breakpoints.
fn segment_mass(m: &WeightFn, model: &SuperpopModel, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let (c0, c1) = m.affine_on(lo, hi);
    if c1 == 0.0 {
        c0 * (model.cdf(hi) - model.cdf(lo))
    } else if model.is_uniform() {
        let dens = model.density(0.5 * (lo + hi));
        dens * (c0 * (hi - lo) + 0.5 * c1 * (hi * hi - lo * lo))
    } else {
        adaptive_simpson(|y| (c0 + c1 * y) * model.density(y), lo, hi, QUAD_TOL)
    }
}

/// Weighted limit c.d.f. `F_s(a) = int_{y <= a} m f / int m f`.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitCdf {
    weight: WeightSpec,
    model: SuperpopModel,
    nodes: Vec<f64>,
    /// unnormalized `G_s` at each node
    cum: Vec<f64>,
    /// levels of `F_s` in (0, 1) held on an interval of positive length
    flat_levels: Vec<f64>,
}

impl LimitCdf {
    pub fn new(weight: WeightSpec, model: &SuperpopModel) -> Result<Self> {
        let nodes = segment_nodes(&weight.m, model);
        let mut cum = Vec::with_capacity(nodes.len());
        let mut acc = 0.0;
        cum.push(0.0);
        let mut masses = Vec::with_capacity(nodes.len());
        for w in nodes.windows(2) {
            let mass = segment_mass(&weight.m, model, w[0], w[1]);
            masses.push(mass);
            acc += mass;
            cum.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::ZeroNormalizer(acc));
        }
        let flat_levels = masses
            .iter()
            .enumerate()
            .filter(|(_, &mass)| mass <= 1e-15 * acc)
            .map(|(i, _)| cum[i] / acc)
            .filter(|&level| level > 1e-12 && level < 1.0 - 1e-12)
            .collect();
        let weight = WeightSpec { normalizer: acc, ..weight };
        Ok(LimitCdf { weight, model: model.clone(), nodes, cum, flat_levels })
    }

    /// The limit of the superpopulation itself (`m` constant, `F_s = F`).
    pub fn unweighted(model: &SuperpopModel) -> Self {
        Self::new(WeightSpec::constant(1.0, model).expect("constant weight has positive mass"), model)
            .expect("constant weight has positive mass")
    }

    pub fn weight(&self) -> &WeightSpec {
        &self.weight
    }

    pub fn model(&self) -> &SuperpopModel {
        &self.model
    }

    pub fn normalizer(&self) -> f64 {
        self.weight.normalizer
    }

    /// Unnormalized `G_s(a) = int_{y <= a} m f`.
    pub fn unnormalized(&self, alpha: f64) -> f64 {
        let (a, b) = self.model.support();
        if alpha.is_nan() || alpha <= a {
            return 0.0;
        }
        if alpha >= b {
            return self.weight.normalizer;
        }
        let i = self.nodes.partition_point(|&x| x <= alpha) - 1;
        self.cum[i] + segment_mass(&self.weight.m, &self.model, self.nodes[i], alpha)
    }

    /// `F_s(alpha)`.
    pub fn eval(&self, alpha: f64) -> f64 {
        let (_, b) = self.model.support();
        if alpha >= b {
            return 1.0;
        }
        (self.unnormalized(alpha) / self.weight.normalizer).clamp(0.0, 1.0)
    }

    /// Sample density of the limit, `m f / int m f`.
    pub fn density(&self, y: f64) -> f64 {
        self.weight.eval(y) * self.model.density(y) / self.weight.normalizer
    }

    /// Levels in (0, 1) at which `F_s` is constant over an interval.
    pub fn flat_levels(&self) -> &[f64] {
        &self.flat_levels
    }
}

/// `F_s(alpha)` for a limit c.d.f.
pub fn limit_cdf_eval(limit: &LimitCdf, alpha: f64) -> f64 {
    limit.eval(alpha)
}

/// Theoretical `m_N(y)`: exact at finite N, a large-N limit, or unavailable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum MValue {
    Exact(f64),
    Limit(f64),
    Unavailable,
}

impl MValue {
    pub fn value(&self) -> Option<f64> {
        match *self {
            MValue::Exact(v) | MValue::Limit(v) => Some(v),
            MValue::Unavailable => None,
        }
    }
}

fn cut_off_level(mode: CutOffMode, rate: f64, f_tau: f64, below: bool) -> f64 {
    match (mode, below) {
        (CutOffMode::TakeAll, true) => 1.0,
        (CutOffMode::Cutoff, true) => 0.0,
        _ if f_tau >= 1.0 => 0.0,
        (CutOffMode::TakeAll, false) => (rate - f_tau).max(0.0) / (1.0 - f_tau),
        (CutOffMode::Cutoff, false) => (rate / (1.0 - f_tau)).min(1.0),
    }
}

/// Cumulative stratum boundaries on the probability scale.
fn strata_bounds(fractions: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    fractions
        .iter()
        .map(|q| {
            acc += q;
            acc
        })
        .collect()
}

/// Closed-form inclusion probability `m_N(y)` at population size `n`.
pub fn m_theoretical(design: &DesignSpec, model: &SuperpopModel, y: f64, n: usize) -> MValue {
    match design {
        DesignSpec::Srswor { size } => MValue::Exact(size.resolve(n) as f64 / n as f64),
        DesignSpec::Bernoulli { p } => MValue::Exact(*p),
        DesignSpec::PoissonFixedPi { pi, permuted: true } => {
            MValue::Exact((0..n).map(|k| pi[k % pi.len()]).sum::<f64>() / n as f64)
        }
        DesignSpec::PoissonPathological { a, b } => MValue::Exact(0.5 * (a + b)),
        DesignSpec::LengthBiased { .. } => MValue::Exact(design.tau_at(n).unwrap() * y),
        DesignSpec::ClusterSplit { .. } => MValue::Exact(0.5),
        DesignSpec::CutOff { tau, rate, mode } => {
            MValue::Limit(cut_off_level(*mode, *rate, model.cdf(*tau), y <= *tau))
        }
        DesignSpec::PpsWithReplacement { size } => {
            let rate = size.resolve(n) as f64 / n as f64;
            MValue::Limit(rate * y / model.mean())
        }
        DesignSpec::EndogenousStrata { strata_fractions, sampling_fractions } => {
            let level = model.cdf(y);
            let h = strata_bounds(strata_fractions).partition_point(|&p| p < level).min(sampling_fractions.len() - 1);
            MValue::Limit(sampling_fractions[h])
        }
        DesignSpec::PoissonFixedPi { permuted: false, .. } | DesignSpec::PoissonProportionalZ { .. } => {
            MValue::Unavailable
        }
    }
}

/// Finite-N weight `m_N` for designs where it does not depend on anything but `y`.
pub fn finite_weight(design: &DesignSpec, model: &SuperpopModel, n: usize) -> Option<WeightSpec> {
    let m = match design {
        DesignSpec::LengthBiased { .. } => WeightFn::Linear { slope: design.tau_at(n)? },
        DesignSpec::Srswor { .. }
        | DesignSpec::Bernoulli { .. }
        | DesignSpec::PoissonFixedPi { permuted: true, .. }
        | DesignSpec::PoissonPathological { .. }
        | DesignSpec::ClusterSplit { .. } => {
            WeightFn::Constant { value: m_theoretical(design, model, model.support().0, n).value()? }
        }
        _ => return None,
    };
    WeightSpec::new(m, model, format!("{} at N = {n}", design.name())).ok()
}

/// Sample p.d.f. `f_s(y) = m(y) f(y) / int m f`.
pub fn sample_pdf(weight: &WeightSpec, model: &SuperpopModel, y: f64) -> Result<f64> {
    if !(weight.normalizer > 0.0) {
        return Err(Error::ZeroNormalizer(weight.normalizer));
    }
    Ok(weight.eval(y) * model.density(y) / weight.normalizer)
}

/// Limit weight `m` induced by a design, if the design has one.
pub fn builtin_weight(design: &DesignSpec, model: &SuperpopModel) -> Result<WeightSpec> {
    let rate_of = |size: &SizeRule| size.limit_rate().ok_or(Error::NoLimit(design.name()));
    let (m, what) = match design {
        DesignSpec::Srswor { size } => (WeightFn::Constant { value: rate_of(size)? }, "constant sampling rate"),
        DesignSpec::Bernoulli { p } => (WeightFn::Constant { value: *p }, "constant sampling rate"),
        DesignSpec::PoissonFixedPi { pi, .. } => (
            WeightFn::Constant { value: pi.iter().sum::<f64>() / pi.len() as f64 },
            "mean inclusion probability",
        ),
        DesignSpec::PoissonProportionalZ { n_star, .. } => {
            (WeightFn::Constant { value: rate_of(n_star)? }, "constant sampling rate")
        }
        DesignSpec::PoissonPathological { .. } | DesignSpec::ClusterSplit { .. } => {
            return Err(Error::NoLimit(design.name()))
        }
        DesignSpec::LengthBiased { tau, .. } => (WeightFn::Linear { slope: *tau }, "length-biased tau * y"),
        DesignSpec::PpsWithReplacement { size } => {
            (WeightFn::Linear { slope: rate_of(size)? / model.mean() }, "pps rate * y / E[Y]")
        }
        DesignSpec::CutOff { tau, rate, mode } => {
            let f_tau = model.cdf(*tau);
            let levels = vec![cut_off_level(*mode, *rate, f_tau, true), cut_off_level(*mode, *rate, f_tau, false)];
            (WeightFn::Step { breaks: vec![*tau], levels }, "cut-off two-level step")
        }
        DesignSpec::EndogenousStrata { strata_fractions, sampling_fractions } => {
            let bounds = strata_bounds(strata_fractions);
            let breaks = bounds[..bounds.len() - 1].iter().map(|&p| model.quantile(p)).collect();
            (WeightFn::Step { breaks, levels: sampling_fractions.clone() }, "stratum rate G(F(y))")
        }
    };
    WeightSpec::new(m, model, what)
}

/// Monte Carlo estimates of the first- and second-order inclusion functionals.
/// Fields not produced by a given estimator are `None` (`null` in JSON).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InclusionEstimates {
    pub m_hat: Option<f64>,
    pub v_hat: Option<f64>,
    pub mprime_12: Option<f64>,
    pub mprime_21: Option<f64>,
    pub c_hat: Option<f64>,
    pub d_hat: Option<f64>,
    pub se_m: Option<f64>,
    pub se_v: Option<f64>,
    pub se_mprime_12: Option<f64>,
    pub se_mprime_21: Option<f64>,
    pub se_c: Option<f64>,
    pub se_d: Option<f64>,
    pub reps: usize,
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn check_mc_args(design: &DesignSpec, model: &SuperpopModel, n: usize, min_n: usize, reps: usize) -> Result<()> {
    if reps < 100 {
        return Err(Error::InvalidArgument(format!("reps must be at least 100, got {reps}")));
    }
    if n < min_n {
        return Err(Error::InvalidArgument(format!("population size must be at least {min_n}, got {n}")));
    }
    design.validate_for_model(model)
}

/// Runs the design `reps` times on populations whose leading coordinates are
/// pinned to `fixed` and whose remaining coordinates are redrawn from the
/// model; calls `record` with each indicator vector and population.
pub(crate) fn conditioned_runs<F: FnMut(&[u32], &[f64])>(
    design: &DesignSpec,
    model: &SuperpopModel,
    fixed: &[f64],
    n: usize,
    reps: usize,
    seed: u64,
    mut record: F,
) -> Result<()> {
    let mut rng = rng_from_seed(seed);
    let mut ys = vec![0.0; n];
    let mut counts = vec![0u32; n];
    ys[..fixed.len()].copy_from_slice(fixed);
    for _ in 0..reps {
        for y in ys[fixed.len()..].iter_mut() {
            *y = model.draw_one(&mut rng);
        }
        let pop = crate::superpop::Population::new(ys)?;
        design.check_population(&pop)?;
        design.sample_unchecked(pop.responses(), &mut rng, &mut counts);
        record(&counts, pop.responses());
        ys = pop.into_responses();
    }
    Ok(())
}

/// Estimates `m_N(y)` and `v_N(y)` with `Y_1 = y` fixed.
pub fn m_monte_carlo(
    design: &DesignSpec,
    model: &SuperpopModel,
    y: f64,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<InclusionEstimates> {
    check_mc_args(design, model, n, 1, reps)?;
    let mut xs = Vec::with_capacity(reps);
    conditioned_runs(design, model, &[y], n, reps, seed, |counts, _| xs.push(counts[0] as f64))?;
    let (m, se_m) = mean_and_se(&xs);
    let dev: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
    let (v, se_v) = mean_and_se(&dev);
    Ok(InclusionEstimates { m_hat: Some(m), v_hat: Some(v), se_m: Some(se_m), se_v: Some(se_v), reps, ..Default::default() })
}

/// Raw sums over replicates of `(I_1, I_2)` with `Y_1 = y1`, `Y_2 = y2` fixed.
#[derive(Debug, Clone, Default)]
pub(crate) struct PairDraws {
    pub i1: Vec<f64>,
    pub i2: Vec<f64>,
}

impl PairDraws {
    /// Unbiased estimate of `c_N(y1, y2)` (denominator `reps - 1`).
    pub fn unbiased_cov(&self) -> f64 {
        let r = self.i1.len() as f64;
        let (m1, m2) = (self.i1.iter().sum::<f64>() / r, self.i2.iter().sum::<f64>() / r);
        self.i1.iter().zip(&self.i2).map(|(a, b)| (a - m1) * (b - m2)).sum::<f64>() / (r - 1.0)
    }

    /// Unbiased estimate of `m'(y1, y2) m'(y2, y1)` from cross-replicate products.
    pub fn unbiased_mprime_product(&self) -> f64 {
        let r = self.i1.len() as f64;
        let (s1, s2): (f64, f64) = (self.i1.iter().sum(), self.i2.iter().sum());
        let s12: f64 = self.i1.iter().zip(&self.i2).map(|(a, b)| a * b).sum();
        (s1 * s2 - s12) / (r * (r - 1.0))
    }
}

pub(crate) fn pair_draws(
    design: &DesignSpec,
    model: &SuperpopModel,
    y1: f64,
    y2: f64,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<PairDraws> {
    let mut out = PairDraws { i1: Vec::with_capacity(reps), i2: Vec::with_capacity(reps) };
    conditioned_runs(design, model, &[y1, y2], n, reps, seed, |counts, _| {
        out.i1.push(counts[0] as f64);
        out.i2.push(counts[1] as f64);
    })?;
    Ok(out)
}

/// Estimates `m'(y1, y2)`, `m'(y2, y1)`, `d_N(y1, y2) = E[I_1 I_2 | ...]` and
/// `c_N = d_N - m'(y1, y2) m'(y2, y1)` with `Y_1 = y1`, `Y_2 = y2` fixed.
///
/// For cut-off designs these are the expectations over `S_A`, the count of
/// units at or below the threshold among the other units; for PPS they are the
/// expectations over `W_A`, the mean response of the other units.
pub fn pairwise_monte_carlo(
    design: &DesignSpec,
    model: &SuperpopModel,
    y1: f64,
    y2: f64,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<InclusionEstimates> {
    check_mc_args(design, model, n, 2, reps)?;
    let draws = pair_draws(design, model, y1, y2, n, reps, seed)?;
    let (m1, se1) = mean_and_se(&draws.i1);
    let (m2, se2) = mean_and_se(&draws.i2);
    let prod: Vec<f64> = draws.i1.iter().zip(&draws.i2).map(|(a, b)| a * b).collect();
    let (d, se_d) = mean_and_se(&prod);
    let c = d - m1 * m2;
    let psi: Vec<f64> = draws.i1.iter().zip(&draws.i2).map(|(a, b)| (a - m1) * (b - m2)).collect();
    let (_, se_c) = mean_and_se(&psi);
    Ok(InclusionEstimates {
        mprime_12: Some(m1),
        mprime_21: Some(m2),
        c_hat: Some(c),
        d_hat: Some(d),
        se_mprime_12: Some(se1),
        se_mprime_21: Some(se2),
        se_c: Some(se_c),
        se_d: Some(se_d),
        reps,
        ..Default::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::SizeRule;
    use approx::assert_abs_diff_eq;

    fn u(a: f64, b: f64) -> SuperpopModel {
        SuperpopModel::uniform(a, b).unwrap()
    }

    fn within(est: f64, se: f64, target: f64, k: f64) -> bool {
        (est - target).abs() <= k * se.max(1e-12)
    }

    #[test]
    fn m_theoretical_examples() {
        let model = u(0.5, 1.5);
        let lb = DesignSpec::LengthBiased { tau: 0.5, c: 0.0 };
        assert_abs_diff_eq!(m_theoretical(&lb, &model, 1.2, 100).value().unwrap(), 0.6, epsilon = 1e-15);
        assert_eq!(m_theoretical(&DesignSpec::Bernoulli { p: 0.3 }, &model, 0.9, 10), MValue::Exact(0.3));
        // take-all limit with rho = 0.5 and F(tau) = 0.3
        let model01 = u(0.0, 1.0);
        let ta = DesignSpec::CutOff { tau: 0.3, rate: 0.5, mode: CutOffMode::TakeAll };
        let MValue::Limit(v) = m_theoretical(&ta, &model01, 0.6, 1000) else { panic!() };
        assert_abs_diff_eq!(v, 0.2 / 0.7, epsilon = 1e-12);
        assert_eq!(m_theoretical(&ta, &model01, 0.1, 1000), MValue::Limit(1.0));
        let z = DesignSpec::PoissonProportionalZ { n_star: SizeRule::N(3), z_law: u(1.0, 2.0) };
        assert_eq!(m_theoretical(&z, &model, 1.0, 10), MValue::Unavailable);
    }

    #[test]
    fn limit_cdf_examples() {
        let model01 = u(0.0, 1.0);
        let flat = LimitCdf::new(WeightSpec::constant(2.5, &model01).unwrap(), &model01).unwrap();
        assert_abs_diff_eq!(flat.eval(0.25), 0.25, epsilon = 1e-15);

        let model = u(0.5, 1.5);
        let lbs = LimitCdf::new(WeightSpec::new(WeightFn::Linear { slope: 1.0 }, &model, "y/E[Y]").unwrap(), &model).unwrap();
        assert_abs_diff_eq!(lbs.eval(1.0), 0.375, epsilon = 1e-14);

        let step = WeightFn::Step { breaks: vec![0.5], levels: vec![0.2, 0.4] };
        let strat = LimitCdf::new(WeightSpec::new(step, &model01, "G(F)").unwrap(), &model01).unwrap();
        assert_abs_diff_eq!(strat.eval(0.5), 1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn limit_cdf_matches_quadrature_oracle() {
        let models = [
            u(0.5, 1.5),
            SuperpopModel::truncated_exponential(1.3, 0.2, 2.0).unwrap(),
            SuperpopModel::piecewise_linear(vec![(0.1, 1.0), (0.6, 2.5), (1.4, 0.5)]).unwrap(),
        ];
        let weights = [
            WeightFn::Linear { slope: 0.4 },
            WeightFn::Step { breaks: vec![0.7, 1.1], levels: vec![0.1, 0.9, 0.3] },
            WeightFn::Constant { value: 0.2 },
        ];
        for model in &models {
            for w in &weights {
                let limit = LimitCdf::new(WeightSpec::new(w.clone(), model, "t").unwrap(), model).unwrap();
                let (a, b) = model.support();
                // independent route: trapezoid on a fine grid of the raw integrand
                let grid = 200_000;
                let h = (b - a) / grid as f64;
                let g = |y: f64| w.eval(y) * model.density(y);
                let mut acc = 0.0;
                let mut oracle = vec![0.0];
                for i in 0..grid {
                    let (x0, x1) = (a + i as f64 * h, a + (i + 1) as f64 * h);
                    acc += 0.5 * h * (g(x0) + g(x1));
                    oracle.push(acc);
                }
                for i in (0..=grid).step_by(grid / 40) {
                    let x = a + i as f64 * h;
                    assert!((limit.eval(x) - oracle[i] / acc).abs() < 1e-4, "{x}");
                }
                assert_abs_diff_eq!(limit.normalizer(), acc, epsilon = 1e-4);
            }
        }
    }

    #[test]
    fn limit_cdf_monotone_and_reaches_one() {
        let model = SuperpopModel::truncated_exponential(0.8, 0.1, 3.0).unwrap();
        let limit = LimitCdf::new(WeightSpec::new(WeightFn::Linear { slope: 0.3 }, &model, "t").unwrap(), &model).unwrap();
        let mut prev = 0.0;
        for i in 0..=2000 {
            let x = -0.1 + 3.3 * i as f64 / 2000.0;
            let v = limit.eval(x);
            assert!(v >= prev);
            prev = v;
        }
        assert!((limit.eval(3.0) - 1.0).abs() < 1e-8);
        assert!((limit.unnormalized(3.0 - 1e-12) / limit.normalizer() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn constant_weight_reduces_to_model_cdf() {
        let models = [
            u(0.5, 1.5),
            SuperpopModel::truncated_exponential(2.0, 0.0, 1.0).unwrap(),
            SuperpopModel::piecewise_linear(vec![(0.0, 0.0), (0.5, 2.0), (1.0, 0.0)]).unwrap(),
        ];
        for model in &models {
            let limit = LimitCdf::unweighted(model);
            let (a, b) = model.support();
            for i in 0..512 {
                let x = a + (b - a) * i as f64 / 511.0;
                assert!((limit.eval(x) - model.cdf(x)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_weight_is_rejected() {
        let model = u(0.0, 1.0);
        assert!(matches!(WeightSpec::constant(0.0, &model), Err(Error::ZeroNormalizer(_))));
        let step = WeightFn::Step { breaks: vec![2.0], levels: vec![0.0, 1.0] };
        assert!(WeightSpec::new(step, &model, "t").is_err());
    }

    #[test]
    fn flat_regions_are_detected() {
        let model = u(0.0, 1.0);
        let step = WeightFn::Step { breaks: vec![0.3, 0.6], levels: vec![1.0, 0.0, 1.0] };
        let limit = LimitCdf::new(WeightSpec::new(step, &model, "gap").unwrap(), &model).unwrap();
        assert_eq!(limit.flat_levels().len(), 1);
        assert_abs_diff_eq!(limit.flat_levels()[0], 3.0 / 7.0, epsilon = 1e-12);
        // a zero weight at the bottom of the support is not an interior flat
        let cut = WeightFn::Step { breaks: vec![0.3], levels: vec![0.0, 1.0] };
        let limit = LimitCdf::new(WeightSpec::new(cut, &model, "cut").unwrap(), &model).unwrap();
        assert!(limit.flat_levels().is_empty());
    }

    #[test]
    fn sample_pdf_examples() {
        let model = u(0.5, 1.5);
        let constant = WeightSpec::constant(0.3, &model).unwrap();
        for y in [0.6, 1.0, 1.4] {
            assert_abs_diff_eq!(sample_pdf(&constant, &model, y).unwrap(), model.density(y), epsilon = 1e-14);
        }
        let lb = finite_weight(&DesignSpec::LengthBiased { tau: 0.5, c: 0.0 }, &model, 100).unwrap();
        assert_abs_diff_eq!(sample_pdf(&lb, &model, 1.0).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn sample_pdf_integrates_to_one() {
        let model = SuperpopModel::truncated_exponential(1.0, 0.1, 1.9).unwrap();
        let designs = [
            DesignSpec::Bernoulli { p: 0.3 },
            DesignSpec::Srswor { size: SizeRule::Rate(0.4) },
            DesignSpec::LengthBiased { tau: 0.5, c: 1.0 },
            DesignSpec::PoissonPathological { a: 0.5, b: 0.1 },
            DesignSpec::ClusterSplit { tau: 1.0 },
        ];
        for d in &designs {
            let w = finite_weight(d, &model, 50).unwrap();
            let total = model.integrate(|y| sample_pdf(&w, &model, y).unwrap());
            assert!((total - 1.0).abs() < 1e-8, "{}", d.name());
        }
    }

    #[test]
    fn builtin_weight_examples() {
        let model = u(0.5, 1.5);
        let w = builtin_weight(&DesignSpec::Bernoulli { p: 0.3 }, &model).unwrap();
        assert_eq!(w.m, WeightFn::Constant { value: 0.3 });
        let w = builtin_weight(&DesignSpec::PpsWithReplacement { size: SizeRule::Rate(0.3) }, &model).unwrap();
        assert_abs_diff_eq!(w.eval(1.2), 0.3 * 1.2, epsilon = 1e-14);
        assert_eq!(
            builtin_weight(&DesignSpec::ClusterSplit { tau: 1.0 }, &model),
            Err(Error::NoLimit("cluster_split"))
        );
        assert!(builtin_weight(&DesignSpec::PoissonPathological { a: 0.5, b: 0.1 }, &model).is_err());
        let strata = DesignSpec::EndogenousStrata { strata_fractions: vec![0.5, 0.5], sampling_fractions: vec![0.2, 0.4] };
        let model01 = u(0.0, 1.0);
        let w = builtin_weight(&strata, &model01).unwrap();
        assert_eq!(w.m, WeightFn::Step { breaks: vec![0.5], levels: vec![0.2, 0.4] });
        // the limit weight never exceeds its bound on the support grid
        for d in [strata, DesignSpec::LengthBiased { tau: 0.6, c: 0.0 }] {
            let w = builtin_weight(&d, &model01).unwrap();
            assert!((0..1000).all(|i| w.eval(i as f64 / 999.0) <= w.bound));
        }
    }

    #[test]
    fn m_monte_carlo_examples() {
        let model = u(0.5, 1.5);
        let e = m_monte_carlo(&DesignSpec::Bernoulli { p: 0.3 }, &model, 0.7, 20, 10_000, 1).unwrap();
        assert!(within(e.m_hat.unwrap(), e.se_m.unwrap(), 0.3, 4.0));
        let e = m_monte_carlo(&DesignSpec::Srswor { size: SizeRule::N(2) }, &model, 0.7, 10, 10_000, 2).unwrap();
        assert!(within(e.m_hat.unwrap(), e.se_m.unwrap(), 0.2, 4.0));
        let e = m_monte_carlo(&DesignSpec::LengthBiased { tau: 0.5, c: 0.0 }, &model, 1.2, 500, 10_000, 3).unwrap();
        assert!(within(e.m_hat.unwrap(), e.se_m.unwrap(), 0.6, 4.0));
        assert!(e.v_hat.unwrap() >= 0.0);
        assert!(m_monte_carlo(&DesignSpec::Bernoulli { p: 0.3 }, &model, 0.7, 20, 99, 1).is_err());
    }

    #[test]
    fn pairwise_examples() {
        let model = u(0.5, 1.5);
        let e = pairwise_monte_carlo(&DesignSpec::Bernoulli { p: 0.4 }, &model, 0.7, 1.1, 10, 20_000, 4).unwrap();
        assert!(within(e.c_hat.unwrap(), e.se_c.unwrap(), 0.0, 4.0));
        let e = pairwise_monte_carlo(&DesignSpec::Srswor { size: SizeRule::N(2) }, &model, 0.7, 1.1, 6, 50_000, 5).unwrap();
        assert!(within(e.c_hat.unwrap(), e.se_c.unwrap(), -2.0 * 4.0 / (36.0 * 5.0), 4.0));
        let e = pairwise_monte_carlo(&DesignSpec::ClusterSplit { tau: 1.0 }, &model, 0.6, 0.8, 30, 20_000, 6).unwrap();
        assert!(within(e.c_hat.unwrap(), e.se_c.unwrap(), 0.25, 4.0));
        // estimator identity
        let (c, d) = (e.c_hat.unwrap(), e.d_hat.unwrap());
        assert!((d - (c + e.mprime_12.unwrap() * e.mprime_21.unwrap())).abs() < 1e-12);
        assert!(pairwise_monte_carlo(&DesignSpec::Bernoulli { p: 0.4 }, &model, 0.7, 1.1, 1, 200, 4).is_err());
    }

    /// Exact `m_N(y)` for tiny N: the unfixed coordinates run over a 101-point
    /// quantile grid of f and the design over its full enumerated support.
    fn grid_oracle_m(design: &DesignSpec, model: &SuperpopModel, y: f64, n: usize) -> f64 {
        let grid: Vec<f64> = (0..101).map(|j| model.quantile((j as f64 + 0.5) / 101.0)).collect();
        let cells = 101usize.pow(n as u32 - 1);
        let mut total = 0.0;
        for mut code in 0..cells {
            let mut ys = vec![y];
            for _ in 1..n {
                ys.push(grid[code % 101]);
                code /= 101;
            }
            let pop = crate::superpop::Population::new(ys).unwrap();
            let support = design.enumerate_support(&pop).unwrap();
            total += support.iter().map(|(iv, p)| p * iv.counts()[0] as f64).sum::<f64>();
        }
        total / cells as f64
    }

    #[test]
    fn monte_carlo_matches_enumeration_oracle() {
        let model = u(0.0, 1.0);
        let cases = [
            (DesignSpec::CutOff { tau: 51.0 / 101.0, rate: 0.5, mode: CutOffMode::TakeAll }, 0.7),
            (DesignSpec::CutOff { tau: 51.0 / 101.0, rate: 0.5, mode: CutOffMode::Cutoff }, 0.7),
            (DesignSpec::PpsWithReplacement { size: SizeRule::N(1) }, 0.3),
            (DesignSpec::EndogenousStrata { strata_fractions: vec![0.5, 0.5], sampling_fractions: vec![0.5, 0.5] }, 0.2),
        ];
        for (i, (design, y)) in cases.iter().enumerate() {
            let exact = grid_oracle_m(design, &model, *y, 3);
            let e = m_monte_carlo(design, &model, *y, 3, 40_000, 100 + i as u64).unwrap();
            assert!(within(e.m_hat.unwrap(), e.se_m.unwrap(), exact, 4.0), "{} {:?} vs {exact}", design.name(), e.m_hat);
        }
    }

    #[test]
    fn inclusion_estimates_json_fields() {
        let e = InclusionEstimates { m_hat: Some(0.5), reps: 100, ..Default::default() };
        let v: serde_json::Value = serde_json::to_value(&e).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(|s| s.as_str()).collect();
        for k in ["m_hat", "v_hat", "mprime_12", "mprime_21", "c_hat", "d_hat", "se_m", "se_c", "reps"] {
            assert!(keys.contains(&k), "{k}");
        }
    }
}
