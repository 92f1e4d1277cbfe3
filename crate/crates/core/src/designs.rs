//! Selection mechanisms: exact samplers of the indicator vector given the
//! population, and exhaustive enumeration of the conditional law for small N.
//!
//! All designs treat units exchangeably (the law is invariant under a joint
//! permutation of indicators and responses), except `PoissonFixedPi` with
//! `permuted: false`, which pins each inclusion probability to an index.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{bernoulli, index_below, open_unit, rng_from_seed};
use crate::superpop::{Population, SuperpopModel};

/// Largest support that `enumerate_support` will materialize.
pub const ENUMERATION_CAP: u128 = 1 << 20;

// guards floor(rate * N) against representation error, e.g. 0.29 * 100
const FLOOR_SLACK: f64 = 1e-9;

/// Sample-size rule: a fixed count, or `floor(rate * N)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeRule {
    N(usize),
    Rate(f64),
}

impl SizeRule {
    pub fn resolve(&self, population_size: usize) -> usize {
        match *self {
            SizeRule::N(n) => n,
            SizeRule::Rate(r) => floor_frac(r, population_size),
        }
    }

    /// Limit of `n / N`.
    pub fn limit_rate(&self) -> Option<f64> {
        match *self {
            SizeRule::N(_) => None,
            SizeRule::Rate(r) => Some(r),
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        match *self {
            SizeRule::N(0) => Err(Error::InvalidDesign(format!("{what}: n must be at least 1"))),
            SizeRule::Rate(r) if !(r > 0.0 && r <= 1.0) => {
                Err(Error::InvalidDesign(format!("{what}: rate must lie in (0, 1], got {r}")))
            }
            _ => Ok(()),
        }
    }
}

fn floor_frac(rate: f64, n: usize) -> usize {
    (rate * n as f64 + FLOOR_SLACK).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutOffMode {
    /// Units with `y <= tau` are never selected.
    #[default]
    Cutoff,
    /// Units with `y <= tau` are always selected.
    TakeAll,
}

/// One of the supported selection mechanisms, as written in configs, e.g.
/// `{"variant": "length_biased", "tau": 0.5}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum DesignSpec {
    /// Simple random sampling without replacement.
    Srswor { size: SizeRule },
    Bernoulli { p: f64 },
    /// Poisson sampling with a fixed vector of inclusion probabilities, tiled
    /// cyclically to length N and randomly permuted on each draw when
    /// `permuted` is set.
    PoissonFixedPi {
        pi: Vec<f64>,
        #[serde(default = "default_true")]
        permuted: bool,
    },
    /// Poisson sampling with `Pi_k = n* Z_k / sum Z`, clamped to (0, 1],
    /// where `Z` is i.i.d. from `z_law` and independent of the responses.
    PoissonProportionalZ { n_star: SizeRule, z_law: SuperpopModel },
    /// Poisson sampling where all units share `a` or `b`, one fair coin per draw.
    PoissonPathological { a: f64, b: f64 },
    /// Independent inclusion with probability `tau_N * y`, `tau_N = tau (1 + c / N)`.
    LengthBiased {
        tau: f64,
        #[serde(default)]
        c: f64,
    },
    /// Selects all units with `y <= tau` or all units with `y > tau`, each with probability 1/2.
    ClusterSplit { tau: f64 },
    /// Cut-off (or take-all) at `tau` combined with SRSWOR, `n = floor(rate N)`.
    CutOff {
        tau: f64,
        rate: f64,
        #[serde(default)]
        mode: CutOffMode,
    },
    /// `n` independent draws with probability proportional to `y`.
    PpsWithReplacement { size: SizeRule },
    /// Strata formed from order statistics of the responses; SRSWOR inside each.
    EndogenousStrata {
        strata_fractions: Vec<f64>,
        sampling_fractions: Vec<f64>,
    },
}

fn default_true() -> bool {
    true
}

/// Selection counts `I_k`; entries are 0/1 except under with-replacement sampling.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IndicatorVector {
    counts: Vec<u32>,
}

impl IndicatorVector {
    pub fn new(counts: Vec<u32>) -> Self {
        IndicatorVector { counts }
    }

    pub fn zeros(n: usize) -> Self {
        IndicatorVector { counts: vec![0; n] }
    }

    pub fn ones(n: usize) -> Self {
        IndicatorVector { counts: vec![1; n] }
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Realized sample size `sum I_k`.
    pub fn n(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }

    /// Compact text form: one digit per unit when every count is below 10,
    /// otherwise counts joined by `.`.
    pub fn to_code(&self) -> String {
        if self.counts.iter().all(|&c| c < 10) {
            self.counts.iter().map(|c| char::from(b'0' + *c as u8)).collect()
        } else {
            self.counts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(".")
        }
    }

    pub fn permuted(&self, sigma: &[usize]) -> IndicatorVector {
        IndicatorVector { counts: sigma.iter().map(|&i| self.counts[i]).collect() }
    }
}

/// Diagnostics collected while drawing one sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SampleInfo {
    /// Units whose inclusion probability had to be clamped to 1.
    pub clamped: usize,
}

impl DesignSpec {
    /// Short snake_case name used in reports.
    pub fn name(&self) -> &'static str {
        match self {
            DesignSpec::Srswor { .. } => "srswor",
            DesignSpec::Bernoulli { .. } => "bernoulli",
            DesignSpec::PoissonFixedPi { .. } => "poisson_fixed_pi",
            DesignSpec::PoissonProportionalZ { .. } => "poisson_proportional_z",
            DesignSpec::PoissonPathological { .. } => "poisson_pathological",
            DesignSpec::LengthBiased { .. } => "length_biased",
            DesignSpec::ClusterSplit { .. } => "cluster_split",
            DesignSpec::CutOff { .. } => "cut_off",
            DesignSpec::PpsWithReplacement { .. } => "pps_with_replacement",
            DesignSpec::EndogenousStrata { .. } => "endogenous_strata",
        }
    }

    pub fn with_replacement(&self) -> bool {
        matches!(self, DesignSpec::PpsWithReplacement { .. })
    }

    /// Designs whose indicator vector is independent of the responses.
    pub fn is_non_informative(&self) -> bool {
        matches!(
            self,
            DesignSpec::Srswor { .. }
                | DesignSpec::Bernoulli { .. }
                | DesignSpec::PoissonFixedPi { .. }
                | DesignSpec::PoissonProportionalZ { .. }
                | DesignSpec::PoissonPathological { .. }
        )
    }

    /// Checks the parameters that do not depend on the population.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDesign(msg));
        match self {
            DesignSpec::Srswor { size } => size.validate("srswor"),
            DesignSpec::Bernoulli { p } => {
                if !(*p > 0.0 && *p <= 1.0) {
                    return bad(format!("bernoulli: p must lie in (0, 1], got {p}"));
                }
                Ok(())
            }
            DesignSpec::PoissonFixedPi { pi, .. } => {
                if pi.is_empty() || pi.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
                    return bad("poisson_fixed_pi: every pi must lie in (0, 1]".into());
                }
                Ok(())
            }
            DesignSpec::PoissonProportionalZ { n_star, .. } => n_star.validate("poisson_proportional_z"),
            DesignSpec::PoissonPathological { a, b } => {
                let ok = |x: f64| x > 0.0 && x <= 1.0;
                if !ok(*a) || !ok(*b) || a == b {
                    return bad(format!("poisson_pathological: need a, b in (0, 1] with a != b, got ({a}, {b})"));
                }
                Ok(())
            }
            DesignSpec::LengthBiased { tau, c } => {
                if !(*tau > 0.0 && tau.is_finite()) || !(*c >= 0.0 && c.is_finite()) {
                    return bad(format!("length_biased: need tau > 0 and c >= 0, got ({tau}, {c})"));
                }
                Ok(())
            }
            DesignSpec::ClusterSplit { tau } => {
                if !tau.is_finite() {
                    return bad("cluster_split: tau must be finite".into());
                }
                Ok(())
            }
            DesignSpec::CutOff { tau, rate, .. } => {
                if !tau.is_finite() || !(*rate > 0.0 && *rate <= 1.0) {
                    return bad(format!("cut_off: need finite tau and rate in (0, 1], got ({tau}, {rate})"));
                }
                Ok(())
            }
            DesignSpec::PpsWithReplacement { size } => size.validate("pps_with_replacement"),
            DesignSpec::EndogenousStrata { strata_fractions, sampling_fractions } => {
                if strata_fractions.is_empty() || strata_fractions.len() != sampling_fractions.len() {
                    return bad("endogenous_strata: need one sampling fraction per stratum".into());
                }
                if strata_fractions.iter().any(|q| !(*q > 0.0)) {
                    return bad("endogenous_strata: stratum fractions must be positive".into());
                }
                if (strata_fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return bad("endogenous_strata: stratum fractions must sum to 1".into());
                }
                if sampling_fractions.iter().any(|s| !(*s >= 0.0 && *s <= 1.0)) {
                    return bad("endogenous_strata: sampling fractions must lie in [0, 1]".into());
                }
                Ok(())
            }
        }
    }

    /// Checks the design against a model's support (e.g. `tau * b <= 1`).
    pub fn validate_for_model(&self, model: &SuperpopModel) -> Result<()> {
        self.validate()?;
        let (lo, hi) = model.support();
        match self {
            DesignSpec::LengthBiased { tau, .. } if tau * hi > 1.0 => Err(Error::InvalidDesign(format!(
                "length_biased: tau * max(y) = {} exceeds 1",
                tau * hi
            ))),
            DesignSpec::PpsWithReplacement { .. } if lo < 0.0 => {
                Err(Error::InvalidDesign("pps_with_replacement: responses must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Length-biased proportionality constant at population size `n`.
    pub fn tau_at(&self, n: usize) -> Option<f64> {
        match self {
            DesignSpec::LengthBiased { tau, c } => Some(tau * (1.0 + c / n as f64)),
            _ => None,
        }
    }

    /// Stratum sizes `N_h` (largest-remainder rounding) and sample sizes
    /// `n_h = floor(s_h N_h)` for a population of size `n`.
    pub fn strata_sizes(&self, n: usize) -> Option<(Vec<usize>, Vec<usize>)> {
        let DesignSpec::EndogenousStrata { strata_fractions, sampling_fractions } = self else {
            return None;
        };
        let raw: Vec<f64> = strata_fractions.iter().map(|q| q * n as f64).collect();
        let mut sizes: Vec<usize> = raw.iter().map(|r| (r + FLOOR_SLACK).floor() as usize).collect();
        let mut rest = n.saturating_sub(sizes.iter().sum());
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&i, &j| {
            let (fi, fj) = (raw[i] - sizes[i] as f64, raw[j] - sizes[j] as f64);
            fj.partial_cmp(&fi).unwrap_or(Ordering::Equal).then(i.cmp(&j))
        });
        for &h in order.iter().cycle() {
            if rest == 0 {
                break;
            }
            sizes[h] += 1;
            rest -= 1;
        }
        let samples = sizes.iter().zip(sampling_fractions).map(|(&nh, s)| floor_frac(*s, nh)).collect();
        Some((sizes, samples))
    }

    /// Checks the design against a concrete population.
    pub fn check_population(&self, population: &Population) -> Result<()> {
        self.validate()?;
        let n = population.len();
        let ys = population.responses();
        let bad = |msg: String| Err(Error::InvalidDesign(msg));
        match self {
            DesignSpec::Srswor { size } => {
                let k = size.resolve(n);
                if k == 0 || k > n {
                    return bad(format!("srswor: sample size {k} infeasible for N = {n}"));
                }
            }
            DesignSpec::PoissonProportionalZ { n_star, .. } => {
                if n_star.resolve(n) == 0 {
                    return bad(format!("poisson_proportional_z: n* = 0 at N = {n}"));
                }
            }
            DesignSpec::LengthBiased { .. } => {
                let tau = self.tau_at(n).unwrap();
                if ys.iter().any(|&y| y < 0.0 || tau * y > 1.0) {
                    return bad(format!("length_biased: tau_N * y must lie in [0, 1] (tau_N = {tau})"));
                }
            }
            DesignSpec::PpsWithReplacement { size } => {
                if size.resolve(n) == 0 {
                    return bad(format!("pps_with_replacement: zero draws at N = {n}"));
                }
                if ys.iter().any(|&y| !(y > 0.0)) {
                    return bad("pps_with_replacement: responses must be positive".into());
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Draws one indicator vector from the design given the population.
    pub fn sample(&self, population: &Population, seed: u64) -> Result<IndicatorVector> {
        let mut rng = rng_from_seed(seed);
        self.sample_with(population, &mut rng).map(|(iv, _)| iv)
    }

    /// As [`DesignSpec::sample`], drawing from a caller-supplied stream and
    /// returning diagnostics.
    pub fn sample_with<R: Rng + ?Sized>(
        &self,
        population: &Population,
        rng: &mut R,
    ) -> Result<(IndicatorVector, SampleInfo)> {
        self.check_population(population)?;
        let mut counts = vec![0u32; population.len()];
        let info = self.sample_unchecked(population.responses(), rng, &mut counts);
        Ok((IndicatorVector { counts }, info))
    }

    /// Sampling core; `counts` must have the population's length and is overwritten.
    pub(crate) fn sample_unchecked<R: Rng + ?Sized>(
        &self,
        ys: &[f64],
        rng: &mut R,
        counts: &mut [u32],
    ) -> SampleInfo {
        let n = ys.len();
        counts.fill(0);
        let mut info = SampleInfo::default();
        match self {
            DesignSpec::Srswor { size } => {
                let mut pool: Vec<usize> = (0..n).collect();
                for &k in partial_shuffle(&mut pool, size.resolve(n), rng) {
                    counts[k] = 1;
                }
            }
            DesignSpec::Bernoulli { p } => {
                for c in counts.iter_mut() {
                    *c = bernoulli(rng, *p) as u32;
                }
            }
            DesignSpec::PoissonFixedPi { pi, permuted } => {
                let mut probs: Vec<f64> = (0..n).map(|k| pi[k % pi.len()]).collect();
                if *permuted {
                    shuffle(&mut probs, rng);
                }
                for (c, p) in counts.iter_mut().zip(&probs) {
                    *c = bernoulli(rng, *p) as u32;
                }
            }
            DesignSpec::PoissonProportionalZ { n_star, z_law } => {
                let zs: Vec<f64> = (0..n).map(|_| z_law.draw_one(rng)).collect();
                let total: f64 = zs.iter().sum();
                let scale = n_star.resolve(n) as f64 / total;
                for (c, z) in counts.iter_mut().zip(&zs) {
                    let p = scale * z;
                    if p > 1.0 {
                        info.clamped += 1;
                    }
                    *c = bernoulli(rng, p.min(1.0)) as u32;
                }
            }
            DesignSpec::PoissonPathological { a, b } => {
                let p = if bernoulli(rng, 0.5) { *a } else { *b };
                for c in counts.iter_mut() {
                    *c = bernoulli(rng, p) as u32;
                }
            }
            DesignSpec::LengthBiased { .. } => {
                let tau = self.tau_at(n).unwrap();
                for (c, y) in counts.iter_mut().zip(ys) {
                    *c = bernoulli(rng, tau * y) as u32;
                }
            }
            DesignSpec::ClusterSplit { tau } => {
                let low = bernoulli(rng, 0.5);
                for (c, y) in counts.iter_mut().zip(ys) {
                    *c = ((*y <= *tau) == low) as u32;
                }
            }
            DesignSpec::CutOff { tau, rate, mode } => {
                let target = floor_frac(*rate, n);
                let mut pool: Vec<usize> = Vec::with_capacity(n);
                let mut below = 0usize;
                for (k, y) in ys.iter().enumerate() {
                    if *y <= *tau {
                        below += 1;
                        if *mode == CutOffMode::TakeAll {
                            counts[k] = 1;
                        }
                    } else {
                        pool.push(k);
                    }
                }
                let draws = cut_off_draws(*mode, target, n, below);
                for &k in partial_shuffle(&mut pool, draws, rng) {
                    counts[k] = 1;
                }
            }
            DesignSpec::PpsWithReplacement { size } => {
                let mut cum = Vec::with_capacity(n);
                let mut acc = 0.0;
                for y in ys {
                    acc += y;
                    cum.push(acc);
                }
                for _ in 0..size.resolve(n) {
                    let t = open_unit(rng) * acc;
                    let k = cum.partition_point(|&c| c <= t).min(n - 1);
                    counts[k] += 1;
                }
            }
            DesignSpec::EndogenousStrata { .. } => {
                let (sizes, samples) = self.strata_sizes(n).unwrap();
                let order = rank_order(ys);
                let mut start = 0;
                for (nh, kh) in sizes.iter().zip(&samples) {
                    let mut stratum = order[start..start + nh].to_vec();
                    for &k in partial_shuffle(&mut stratum, *kh, rng) {
                        counts[k] = 1;
                    }
                    start += nh;
                }
            }
        }
        info
    }

    /// Closed-form `E[n | Y = y]`. For `poisson_proportional_z` this is `n*`,
    /// which is exact only when no inclusion probability is clamped.
    pub fn expected_sample_size(&self, population: &Population) -> Result<f64> {
        self.check_population(population)?;
        let n = population.len();
        let ys = population.responses();
        Ok(match self {
            DesignSpec::Srswor { size } => size.resolve(n) as f64,
            DesignSpec::Bernoulli { p } => n as f64 * p,
            DesignSpec::PoissonFixedPi { pi, .. } => (0..n).map(|k| pi[k % pi.len()]).sum(),
            DesignSpec::PoissonProportionalZ { n_star, .. } => n_star.resolve(n) as f64,
            DesignSpec::PoissonPathological { a, b } => n as f64 * 0.5 * (a + b),
            DesignSpec::LengthBiased { .. } => self.tau_at(n).unwrap() * ys.iter().sum::<f64>(),
            DesignSpec::ClusterSplit { .. } => 0.5 * n as f64,
            DesignSpec::CutOff { tau, rate, mode } => {
                let below = ys.iter().filter(|y| **y <= *tau).count();
                let draws = cut_off_draws(*mode, floor_frac(*rate, n), n, below);
                match mode {
                    CutOffMode::Cutoff => draws as f64,
                    CutOffMode::TakeAll => (below + draws) as f64,
                }
            }
            DesignSpec::PpsWithReplacement { size } => size.resolve(n) as f64,
            DesignSpec::EndogenousStrata { .. } => self.strata_sizes(n).unwrap().1.iter().sum::<usize>() as f64,
        })
    }

    /// Number of support states the enumeration would visit, or `None` when
    /// the design cannot be enumerated.
    pub fn support_size_bound(&self, population: &Population) -> Option<u128> {
        let n = population.len();
        let ys = population.responses();
        match self {
            DesignSpec::Srswor { size } => Some(binomial(n, size.resolve(n))),
            DesignSpec::Bernoulli { .. }
            | DesignSpec::PoissonFixedPi { .. }
            | DesignSpec::PoissonPathological { .. }
            | DesignSpec::LengthBiased { .. } => Some(if n >= 127 { u128::MAX } else { 1u128 << n }),
            DesignSpec::PoissonProportionalZ { .. } => None,
            DesignSpec::ClusterSplit { .. } => Some(2),
            DesignSpec::CutOff { tau, rate, mode } => {
                let below = ys.iter().filter(|y| **y <= *tau).count();
                Some(binomial(n - below, cut_off_draws(*mode, floor_frac(*rate, n), n, below)))
            }
            DesignSpec::PpsWithReplacement { size } => {
                let k = size.resolve(n);
                Some(binomial(k + n - 1, n - 1))
            }
            DesignSpec::EndogenousStrata { .. } => {
                let (sizes, samples) = self.strata_sizes(n).unwrap();
                Some(sizes.iter().zip(&samples).fold(1u128, |acc, (&nh, &kh)| acc.saturating_mul(binomial(nh, kh))))
            }
        }
    }

    /// Exact conditional law `g(i, y)` over its support (states with nonzero
    /// probability), sorted lexicographically by indicator.
    pub fn enumerate_support(&self, population: &Population) -> Result<Vec<(IndicatorVector, f64)>> {
        self.check_population(population)?;
        let states = self.support_size_bound(population).ok_or(Error::EnumerationUnsupported(self.name()))?;
        if states > ENUMERATION_CAP {
            return Err(Error::EnumerationInfeasible { states, cap: ENUMERATION_CAP });
        }
        let n = population.len();
        let ys = population.responses();
        let mut table: Vec<(Vec<u32>, f64)> = match self {
            DesignSpec::Srswor { size } => {
                let k = size.resolve(n);
                let p = 1.0 / binomial(n, k) as f64;
                combinations(&(0..n).collect::<Vec<_>>(), k)
                    .into_iter()
                    .map(|sel| (mark(n, &sel, &[]), p))
                    .collect()
            }
            DesignSpec::Bernoulli { p } => product_law(n, |_| *p),
            DesignSpec::LengthBiased { .. } => {
                let tau = self.tau_at(n).unwrap();
                product_law(n, |k| tau * ys[k])
            }
            DesignSpec::PoissonFixedPi { pi, permuted: false } => product_law(n, |k| pi[k % pi.len()]),
            DesignSpec::PoissonFixedPi { pi, permuted: true } => {
                // averaging over permutations makes g depend on the sample size only
                let probs: Vec<f64> = (0..n).map(|k| pi[k % pi.len()]).collect();
                let pmf = poisson_binomial(&probs);
                let mut out = Vec::new();
                for mask in 0u64..(1u64 << n) {
                    let counts = mask_counts(n, mask);
                    let s = mask.count_ones() as usize;
                    out.push((counts, pmf[s] / binomial(n, s) as f64));
                }
                out
            }
            DesignSpec::PoissonPathological { a, b } => {
                let mut out = Vec::new();
                for mask in 0u64..(1u64 << n) {
                    let counts = mask_counts(n, mask);
                    let s = mask.count_ones() as i32;
                    let r = n as i32 - s;
                    let pa = a.powi(s) * (1.0 - a).powi(r);
                    let pb = b.powi(s) * (1.0 - b).powi(r);
                    out.push((counts, 0.5 * pa + 0.5 * pb));
                }
                out
            }
            DesignSpec::ClusterSplit { tau } => {
                let low: Vec<u32> = ys.iter().map(|y| (*y <= *tau) as u32).collect();
                let high: Vec<u32> = low.iter().map(|c| 1 - c).collect();
                vec![(low, 0.5), (high, 0.5)]
            }
            DesignSpec::CutOff { tau, rate, mode } => {
                let below: Vec<usize> = (0..n).filter(|&k| ys[k] <= *tau).collect();
                let pool: Vec<usize> = (0..n).filter(|&k| ys[k] > *tau).collect();
                let draws = cut_off_draws(*mode, floor_frac(*rate, n), n, below.len());
                let p = 1.0 / binomial(pool.len(), draws) as f64;
                let fixed: &[usize] = if *mode == CutOffMode::TakeAll { &below } else { &[] };
                combinations(&pool, draws).into_iter().map(|sel| (mark(n, &sel, fixed), p)).collect()
            }
            DesignSpec::PpsWithReplacement { size } => {
                let total: f64 = ys.iter().sum();
                let probs: Vec<f64> = ys.iter().map(|y| y / total).collect();
                let mut out = Vec::new();
                let mut current = vec![0u32; n];
                multinomial_law(&probs, size.resolve(n) as u32, 0, 1.0, &mut current, &mut out);
                out
            }
            DesignSpec::EndogenousStrata { .. } => {
                let (sizes, samples) = self.strata_sizes(n).unwrap();
                let order = rank_order(ys);
                let mut partial: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
                let mut start = 0;
                for (nh, kh) in sizes.iter().zip(&samples) {
                    let stratum = &order[start..start + nh];
                    let p = 1.0 / binomial(*nh, *kh) as f64;
                    let picks = combinations(stratum, *kh);
                    partial = partial
                        .into_iter()
                        .flat_map(|(sel, q)| {
                            picks.iter().map(move |pick| {
                                let mut s = sel.clone();
                                s.extend_from_slice(pick);
                                (s, q * p)
                            })
                        })
                        .collect();
                    start += nh;
                }
                partial.into_iter().map(|(sel, p)| (mark(n, &sel, &[]), p)).collect()
            }
            DesignSpec::PoissonProportionalZ { .. } => unreachable!("rejected above"),
        };
        table.sort_by(|x, y| x.0.cmp(&y.0));
        table.dedup_by(|later, earlier| {
            if later.0 == earlier.0 {
                earlier.1 += later.1;
                true
            } else {
                false
            }
        });
        Ok(table
            .into_iter()
            .filter(|(_, p)| *p > 0.0)
            .map(|(c, p)| (IndicatorVector::new(c), p))
            .collect())
    }
}

/// Number of SRSWOR draws from the units above the threshold.
fn cut_off_draws(mode: CutOffMode, target: usize, n: usize, below: usize) -> usize {
    let above = n - below;
    match mode {
        CutOffMode::Cutoff => target.min(above),
        CutOffMode::TakeAll => target.saturating_sub(below).min(above),
    }
}

/// Unit indices sorted by response, ties broken by index.
pub(crate) fn rank_order(ys: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ys.len()).collect();
    order.sort_by(|&i, &j| ys[i].total_cmp(&ys[j]).then(i.cmp(&j)));
    order
}

/// Moves a uniformly random `k`-subset of `pool` to its front (partial Fisher-Yates).
fn partial_shuffle<'a, R: Rng + ?Sized>(pool: &'a mut [usize], k: usize, rng: &mut R) -> &'a [usize] {
    let len = pool.len();
    let k = k.min(len);
    for i in 0..k {
        let j = i + index_below(rng, len - i);
        pool.swap(i, j);
    }
    &pool[..k]
}

fn shuffle<T, R: Rng + ?Sized>(xs: &mut [T], rng: &mut R) {
    for i in (1..xs.len()).rev() {
        let j = index_below(rng, i + 1);
        xs.swap(i, j);
    }
}

fn mark(n: usize, selected: &[usize], fixed: &[usize]) -> Vec<u32> {
    let mut counts = vec![0u32; n];
    for &k in selected.iter().chain(fixed) {
        counts[k] = 1;
    }
    counts
}

// unit k is bit (n - 1 - k), so counting masks upward is lexicographic order
fn mask_counts(n: usize, mask: u64) -> Vec<u32> {
    (0..n).map(|k| ((mask >> (n - 1 - k)) & 1) as u32).collect()
}

fn product_law<P: Fn(usize) -> f64>(n: usize, prob: P) -> Vec<(Vec<u32>, f64)> {
    let ps: Vec<f64> = (0..n).map(prob).collect();
    (0u64..(1u64 << n))
        .map(|mask| {
            let counts = mask_counts(n, mask);
            let p = counts
                .iter()
                .zip(&ps)
                .map(|(&c, &p)| if c == 1 { p } else { 1.0 - p })
                .product();
            (counts, p)
        })
        .collect()
}

fn poisson_binomial(probs: &[f64]) -> Vec<f64> {
    let mut pmf = vec![1.0];
    for &p in probs {
        let mut next = vec![0.0; pmf.len() + 1];
        for (s, q) in pmf.iter().enumerate() {
            next[s] += q * (1.0 - p);
            next[s + 1] += q * p;
        }
        pmf = next;
    }
    pmf
}

fn multinomial_law(
    probs: &[f64],
    remaining: u32,
    unit: usize,
    weight: f64,
    current: &mut Vec<u32>,
    out: &mut Vec<(Vec<u32>, f64)>,
) {
    let n = probs.len();
    if unit == n - 1 {
        current[unit] = remaining;
        out.push((current.clone(), weight * probs[unit].powi(remaining as i32)));
        current[unit] = 0;
        return;
    }
    for c in 0..=remaining {
        // C(remaining, c) p^c, accumulated as a multinomial coefficient
        let w = weight * binomial(remaining as usize, c as usize) as f64 * probs[unit].powi(c as i32);
        current[unit] = c;
        multinomial_law(probs, remaining - c, unit + 1, w, current, out);
    }
    current[unit] = 0;
}

/// Binomial coefficient, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// All `k`-subsets of `items`, in lexicographic order of positions.
pub fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let n = items.len();
    if k > n {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        let Some(i) = (0..k).rev().find(|&i| idx[i] < i + n - k) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}
