//! Superpopulation models with compact support.
//!
//! A model owns its density, c.d.f., inverse c.d.f. and raw moments. Populations
//! are drawn by inverse-c.d.f. transform of one ChaCha stream, so a population of
//! size `N` is a prefix of the population of size `N + 1` under the same seed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::adaptive_simpson;
use crate::rng::{open_unit, rng_from_seed};

const NORMALIZATION_TOL: f64 = 1e-9;
const QUAD_TOL: f64 = 1e-9;

/// Serialized form of a model, e.g. `{"kind": "uniform", "a": 0.5, "b": 1.5}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Uniform { a: f64, b: f64 },
    TruncatedExponential { rate: f64, a: f64, b: f64 },
    /// Knots `(y, f(y))`; the density is linear between knots and is
    /// rescaled to integrate to one.
    PiecewiseLinear { knots: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Uniform,
    TruncatedExponential {
        rate: f64,
        /// e^{-rate a} - e^{-rate b}
        mass: f64,
    },
    PiecewiseLinear {
        ys: Vec<f64>,
        fs: Vec<f64>,
        /// c.d.f. at each knot
        cum: Vec<f64>,
    },
}

/// A validated superpopulation law on `[a, b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpec", into = "ModelSpec")]
pub struct SuperpopModel {
    spec: ModelSpec,
    kind: Kind,
    a: f64,
    b: f64,
}

impl TryFrom<ModelSpec> for SuperpopModel {
    type Error = Error;

    fn try_from(spec: ModelSpec) -> Result<Self> {
        SuperpopModel::new(spec)
    }
}

impl From<SuperpopModel> for ModelSpec {
    fn from(m: SuperpopModel) -> Self {
        m.spec
    }
}

fn check_bounds(a: f64, b: f64) -> Result<()> {
    if !(a.is_finite() && b.is_finite()) || a < 0.0 || a >= b {
        return Err(Error::InvalidModel(format!(
            "support must satisfy 0 <= a < b < inf, got [{a}, {b}]"
        )));
    }
    Ok(())
}

impl SuperpopModel {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let model = match &spec {
            ModelSpec::Uniform { a, b } => {
                check_bounds(*a, *b)?;
                SuperpopModel { spec: spec.clone(), kind: Kind::Uniform, a: *a, b: *b }
            }
            ModelSpec::TruncatedExponential { rate, a, b } => {
                check_bounds(*a, *b)?;
                if !rate.is_finite() || *rate == 0.0 {
                    return Err(Error::InvalidModel(format!("rate must be finite and nonzero, got {rate}")));
                }
                let mass = (-rate * a).exp() - (-rate * b).exp();
                SuperpopModel {
                    spec: spec.clone(),
                    kind: Kind::TruncatedExponential { rate: *rate, mass },
                    a: *a,
                    b: *b,
                }
            }
            ModelSpec::PiecewiseLinear { knots } => {
                if knots.len() < 2 {
                    return Err(Error::InvalidModel("need at least two knots".into()));
                }
                let ys: Vec<f64> = knots.iter().map(|k| k.0).collect();
                let raw: Vec<f64> = knots.iter().map(|k| k.1).collect();
                if ys.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::InvalidModel("knot abscissae must be strictly increasing".into()));
                }
                if raw.iter().any(|f| !f.is_finite() || *f < 0.0) {
                    return Err(Error::InvalidModel("knot densities must be finite and non-negative".into()));
                }
                let (a, b) = (ys[0], ys[ys.len() - 1]);
                check_bounds(a, b)?;
                let total: f64 = ys
                    .windows(2)
                    .zip(raw.windows(2))
                    .map(|(y, f)| 0.5 * (y[1] - y[0]) * (f[0] + f[1]))
                    .sum();
                if !(total > 0.0) {
                    return Err(Error::InvalidModel("density has zero mass".into()));
                }
                let fs: Vec<f64> = raw.iter().map(|f| f / total).collect();
                let mut cum = Vec::with_capacity(ys.len());
                let mut acc = 0.0;
                cum.push(0.0);
                for i in 1..ys.len() {
                    acc += 0.5 * (ys[i] - ys[i - 1]) * (fs[i] + fs[i - 1]);
                    cum.push(acc);
                }
                // pin the last knot so that F(b) = 1 exactly
                *cum.last_mut().unwrap() = 1.0;
                SuperpopModel {
                    spec: spec.clone(),
                    kind: Kind::PiecewiseLinear { ys, fs, cum },
                    a,
                    b,
                }
            }
        };
        let integral = model.integrate(|y| model.density(y));
        if (integral - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidModel(format!("density integrates to {integral}, not 1")));
        }
        Ok(model)
    }

    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        Self::new(ModelSpec::Uniform { a, b })
    }

    pub fn truncated_exponential(rate: f64, a: f64, b: f64) -> Result<Self> {
        Self::new(ModelSpec::TruncatedExponential { rate, a, b })
    }

    pub fn piecewise_linear(knots: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(ModelSpec::PiecewiseLinear { knots })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Support bounds `(a, b)`.
    pub fn support(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    /// Points where the density is not smooth, including both support ends.
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.kind {
            Kind::PiecewiseLinear { ys, .. } => ys.clone(),
            _ => vec![self.a, self.b],
        }
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self.kind, Kind::Uniform)
    }

    pub fn density(&self, y: f64) -> f64 {
        if !(y >= self.a && y <= self.b) {
            return 0.0;
        }
        match &self.kind {
            Kind::Uniform => 1.0 / (self.b - self.a),
            Kind::TruncatedExponential { rate, mass } => rate * (-rate * y).exp() / mass,
            Kind::PiecewiseLinear { ys, fs, .. } => {
                let i = segment(ys, y);
                let t = (y - ys[i]) / (ys[i + 1] - ys[i]);
                fs[i] + t * (fs[i + 1] - fs[i])
            }
        }
    }

    pub fn cdf(&self, alpha: f64) -> f64 {
        if alpha < self.a || alpha.is_nan() {
            return 0.0;
        }
        if alpha >= self.b {
            return 1.0;
        }
        let v = match &self.kind {
            Kind::Uniform => (alpha - self.a) / (self.b - self.a),
            Kind::TruncatedExponential { rate, mass } => {
                ((-rate * self.a).exp() - (-rate * alpha).exp()) / mass
            }
            Kind::PiecewiseLinear { ys, fs, cum } => {
                let i = segment(ys, alpha);
                let h = ys[i + 1] - ys[i];
                let t = alpha - ys[i];
                let f_alpha = fs[i] + t / h * (fs[i + 1] - fs[i]);
                cum[i] + 0.5 * t * (fs[i] + f_alpha)
            }
        };
        v.clamp(0.0, 1.0)
    }

    /// Inverse c.d.f. `inf{y : F(y) >= u}` for `u` in `[0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return self.a;
        }
        if u >= 1.0 {
            return self.b;
        }
        let y = match &self.kind {
            Kind::Uniform => self.a + u * (self.b - self.a),
            Kind::TruncatedExponential { rate, mass } => {
                -((-rate * self.a).exp() - u * mass).ln() / rate
            }
            Kind::PiecewiseLinear { ys, fs, cum } => {
                // first segment whose upper cumulative reaches u
                let i = cum[1..].partition_point(|&c| c < u).min(ys.len() - 2);
                let h = ys[i + 1] - ys[i];
                let r = u - cum[i];
                let slope = (fs[i + 1] - fs[i]) / h;
                let disc = (fs[i] * fs[i] + 2.0 * slope * r).max(0.0);
                let denom = fs[i] + disc.sqrt();
                let t = if denom > 0.0 { 2.0 * r / denom } else { 0.0 };
                ys[i] + t.clamp(0.0, h)
            }
        };
        y.clamp(self.a, self.b)
    }

    /// Raw moment `E[Y^k]` for `k` in `1..=6`.
    pub fn moment(&self, k: u32) -> Result<f64> {
        if !(1..=6).contains(&k) {
            return Err(Error::UnsupportedMoment(k));
        }
        let (a, b) = (self.a, self.b);
        Ok(match &self.kind {
            Kind::Uniform => {
                let k1 = (k + 1) as i32;
                (b.powi(k1) - a.powi(k1)) / (k1 as f64 * (b - a))
            }
            Kind::TruncatedExponential { rate, mass } => {
                // I_j = int_a^b y^j rate e^{-rate y} dy = [-y^j e^{-rate y}]_a^b + (j / rate) I_{j-1}
                let (ea, eb) = ((-rate * a).exp(), (-rate * b).exp());
                let mut acc = *mass;
                for j in 1..=k as i32 {
                    acc = a.powi(j) * ea - b.powi(j) * eb + j as f64 / rate * acc;
                }
                acc / mass
            }
            Kind::PiecewiseLinear { .. } => self.integrate(|y| y.powi(k as i32) * self.density(y)),
        })
    }

    pub fn mean(&self) -> f64 {
        self.moment(1).expect("first moment is always supported")
    }

    /// Integral of `g` over the support, split at density breakpoints.
    pub fn integrate<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        self.breakpoints()
            .windows(2)
            .map(|w| adaptive_simpson(&g, w[0], w[1], QUAD_TOL))
            .sum()
    }

    /// Draws `n` i.i.d. responses. The output for `(model, n, seed)` is
    /// deterministic and is a prefix of the draw for any larger `n`.
    pub fn draw_population(&self, n: usize, seed: u64) -> Result<Population> {
        if n == 0 {
            return Err(Error::EmptyPopulation);
        }
        let mut rng = rng_from_seed(seed);
        let responses = (0..n).map(|_| self.quantile(open_unit(&mut rng))).collect();
        Ok(Population { responses })
    }

    /// Draws one response from a caller-supplied stream.
    pub fn draw_one<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(open_unit(rng))
    }
}

fn segment(ys: &[f64], y: f64) -> usize {
    // index i with ys[i] <= y < ys[i + 1], clamped to the last segment
    ys.partition_point(|&k| k <= y).saturating_sub(1).min(ys.len() - 2)
}

/// Realized finite population `(Y_1, ..., Y_N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    responses: Vec<f64>,
}

impl Population {
    pub fn new(responses: Vec<f64>) -> Result<Self> {
        if responses.is_empty() {
            return Err(Error::EmptyPopulation);
        }
        if responses.iter().any(|y| !y.is_finite()) {
            return Err(Error::InvalidArgument("responses must be finite".into()));
        }
        Ok(Population { responses })
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// First `n` units.
    pub fn prefix(&self, n: usize) -> Result<Population> {
        if n == 0 || n > self.len() {
            return Err(Error::InvalidArgument(format!("prefix {n} of population of size {}", self.len())));
        }
        Ok(Population { responses: self.responses[..n].to_vec() })
    }

    /// Applies `sigma`: unit `k` of the result is unit `sigma[k]` of `self`.
    pub fn permuted(&self, sigma: &[usize]) -> Population {
        Population { responses: sigma.iter().map(|&i| self.responses[i]).collect() }
    }

    pub fn into_responses(self) -> Vec<f64> {
        self.responses
    }
}
