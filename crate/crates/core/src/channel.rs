//! Channel model: unit-mean rate shapes, per-user mean rates, and per-slot
//! rate generation.
//!
//! Every user's achievable rate in a slot is `R_k = r_k * X_k` where the
//! `X_k` are i.i.d. draws of a nonnegative unit-mean [`RateModel`].

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::ChannelStream;

/// Absolute tolerance of the adaptive quadrature used for families without a
/// closed-form partial expectation.
pub const QUADRATURE_TOL: f64 = 1e-9;

/// Tolerance on discrete probabilities summing to one.
pub const DISCRETE_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("discrete distribution has no atoms")]
    EmptyDiscrete,
    #[error("discrete atom {0} is negative or not finite")]
    BadAtom(f64),
    #[error("discrete probability {0} is negative or not finite")]
    BadProbability(f64),
    #[error("discrete probabilities sum to {0}, expected 1")]
    ProbabilitySum(f64),
    #[error("discrete distribution has mean {0}, expected 1")]
    NotUnitMean(f64),
    #[error("mean rate of user {user} is {rate}; mean rates must be positive and finite")]
    BadMeanRate { user: usize, rate: f64 },
    #[error("population must contain at least one user")]
    EmptyPopulation,
    #[error("conditioning region {0} has zero probability")]
    ZeroProbabilityRegion(Region),
}

/// A finite distribution on nonnegative atoms with unit mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Discrete {
    atoms: Vec<f64>,
    probs: Vec<f64>,
    // cum[i] = P(X <= atoms[i])
    cum: Vec<f64>,
}

impl Discrete {
    /// Builds the distribution from `(atom, probability)` pairs. Repeated atoms
    /// are merged and zero-probability atoms dropped.
    pub fn new(pairs: &[(f64, f64)]) -> Result<Self, ChannelError> {
        if pairs.is_empty() {
            return Err(ChannelError::EmptyDiscrete);
        }
        let mut sorted: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
        for &(a, p) in pairs {
            if !a.is_finite() || a < 0.0 {
                return Err(ChannelError::BadAtom(a));
            }
            if !p.is_finite() || p < 0.0 {
                return Err(ChannelError::BadProbability(p));
            }
            sorted.push((a, p));
        }
        let total: f64 = sorted.iter().map(|&(_, p)| p).sum();
        if (total - 1.0).abs() > DISCRETE_SUM_TOL {
            return Err(ChannelError::ProbabilitySum(total));
        }
        sorted.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut atoms = Vec::new();
        let mut probs: Vec<f64> = Vec::new();
        for (a, p) in sorted {
            if p == 0.0 {
                continue;
            }
            if atoms.last() == Some(&a) {
                *probs.last_mut().unwrap() += p;
            } else {
                atoms.push(a);
                probs.push(p);
            }
        }
        if atoms.is_empty() {
            return Err(ChannelError::EmptyDiscrete);
        }
        let mean: f64 = atoms.iter().zip(&probs).map(|(a, p)| a * p).sum::<f64>() / total;
        if (mean - 1.0).abs() > DISCRETE_SUM_TOL {
            return Err(ChannelError::NotUnitMean(mean));
        }
        // renormalize so the last cumulative value is exactly one
        for p in &mut probs {
            *p /= total;
        }
        let mut cum = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for p in &probs {
            acc += p;
            cum.push(acc);
        }
        *cum.last_mut().unwrap() = 1.0;
        Ok(Self { atoms, probs, cum })
    }

    /// Point mass at one.
    pub fn degenerate() -> Self {
        Self::new(&[(1.0, 1.0)]).expect("unit atom is valid")
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.atoms.iter().copied().zip(self.probs.iter().copied()).collect()
    }

    fn cdf(&self, x: f64) -> f64 {
        // number of atoms <= x
        let idx = self.atoms.partition_point(|&a| a <= x);
        if idx == 0 {
            0.0
        } else {
            self.cum[idx - 1]
        }
    }

    fn cdf_below(&self, x: f64) -> f64 {
        let idx = self.atoms.partition_point(|&a| a < x);
        if idx == 0 {
            0.0
        } else {
            self.cum[idx - 1]
        }
    }

    fn quantile(&self, u: f64) -> f64 {
        // first atom whose cumulative probability exceeds u
        let idx = self.cum.partition_point(|&c| c <= u);
        self.atoms[idx.min(self.atoms.len() - 1)]
    }
}

/// Unit-mean, nonnegative distribution of the normalized rate `X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RateModelSpec", into = "RateModelSpec")]
pub enum RateModel {
    /// Exponential with unit mean (Rayleigh fading, low SNR).
    Exponential,
    /// Uniform on `[0, 2]`.
    Uniform,
    /// User-supplied finite distribution.
    Discrete(Discrete),
}

/// Serialized form: `{"kind": "...", "params": ...}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum RateModelSpec {
    Exponential,
    Uniform,
    Discrete { atoms: Vec<(f64, f64)> },
}

impl TryFrom<RateModelSpec> for RateModel {
    type Error = ChannelError;

    fn try_from(spec: RateModelSpec) -> Result<Self, Self::Error> {
        Ok(match spec {
            RateModelSpec::Exponential => RateModel::Exponential,
            RateModelSpec::Uniform => RateModel::Uniform,
            RateModelSpec::Discrete { atoms } => RateModel::Discrete(Discrete::new(&atoms)?),
        })
    }
}

impl From<RateModel> for RateModelSpec {
    fn from(model: RateModel) -> Self {
        match model {
            RateModel::Exponential => RateModelSpec::Exponential,
            RateModel::Uniform => RateModelSpec::Uniform,
            RateModel::Discrete(d) => RateModelSpec::Discrete { atoms: d.pairs() },
        }
    }
}

/// Side of a threshold to condition on. `Below(v)` is `X < v`, `Above(v)` is
/// `X >= v`, matching the stop rule `w >= v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    Below(f64),
    Above(f64),
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::Below(v) => write!(f, "X < {v}"),
            Region::Above(v) => write!(f, "X >= {v}"),
        }
    }
}

impl RateModel {
    pub fn discrete(pairs: &[(f64, f64)]) -> Result<Self, ChannelError> {
        Discrete::new(pairs).map(RateModel::Discrete)
    }

    pub fn name(&self) -> &'static str {
        match self {
            RateModel::Exponential => "exponential",
            RateModel::Uniform => "uniform",
            RateModel::Discrete(_) => "discrete",
        }
    }

    pub fn is_continuous(&self) -> bool {
        !matches!(self, RateModel::Discrete(_))
    }

    /// `F_X(x) = P(X <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        match self {
            RateModel::Exponential => -(-x).exp_m1(),
            RateModel::Uniform => (x / 2.0).min(1.0),
            RateModel::Discrete(d) => d.cdf(x),
        }
    }

    /// `P(X < x)`; differs from [`cdf`](Self::cdf) only at atoms.
    pub fn cdf_below(&self, x: f64) -> f64 {
        match self {
            RateModel::Discrete(d) => d.cdf_below(x),
            _ => self.cdf(x),
        }
    }

    /// Smallest `x` with `F_X(x) > u`, for `u` in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            RateModel::Exponential => -(-u).ln_1p(),
            RateModel::Uniform => 2.0 * u,
            RateModel::Discrete(d) => d.quantile(u),
        }
    }

    /// Upper end of the support (infinite for the exponential).
    pub fn support_max(&self) -> f64 {
        match self {
            RateModel::Exponential => f64::INFINITY,
            RateModel::Uniform => 2.0,
            RateModel::Discrete(d) => *d.atoms.last().unwrap(),
        }
    }

    /// Expected excess `E[(X - v)^+] = integral over [v, inf) of (x - v) dF(x)`.
    pub fn partial_expectation(&self, v: f64) -> f64 {
        let v = v.max(0.0);
        match self {
            RateModel::Exponential => (-v).exp(),
            RateModel::Uniform => {
                if v >= 2.0 {
                    0.0
                } else {
                    // integral of the survival function 1 - F(x)
                    adaptive_simpson(&|x| 1.0 - x / 2.0, v, 2.0, QUADRATURE_TOL)
                }
            }
            RateModel::Discrete(d) => d
                .atoms
                .iter()
                .zip(&d.probs)
                .filter(|(&a, _)| a > v)
                .map(|(a, p)| (a - v) * p)
                .sum(),
        }
    }

    /// One unconditioned draw of `X`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.gen::<f64>())
    }

    /// A draw of `X` conditioned on `region`, by inverse-CDF sampling on the
    /// matching slice of `[0, 1)`.
    pub fn conditional_sample<R: Rng + ?Sized>(&self, region: Region, rng: &mut R) -> Result<f64, ChannelError> {
        let (lo, hi) = match region {
            Region::Below(v) => (0.0, self.cdf_below(v)),
            Region::Above(v) => (self.cdf_below(v), 1.0),
        };
        if hi - lo <= 0.0 {
            return Err(ChannelError::ZeroProbabilityRegion(region));
        }
        let u = lo + (hi - lo) * rng.gen::<f64>();
        let x = self.quantile(u.min(hi));
        // clamp rounding at the slice boundary back into the region
        Ok(match region {
            Region::Below(v) if x >= v => prev_below(v),
            Region::Above(v) if x < v => v,
            _ => x,
        })
    }
}

fn prev_below(v: f64) -> f64 {
    if v <= 0.0 {
        0.0
    } else {
        f64::from_bits(v.to_bits() - 1)
    }
}

/// Adaptive Simpson quadrature on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    if b <= a {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// How the per-user mean rates are given in a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanRates {
    /// `r_k = k` for `k = 1..=K`.
    Index,
    /// The same mean for every user.
    Constant(f64),
    /// Explicit per-user means; length must equal the user count.
    Explicit(Vec<f64>),
}

impl MeanRates {
    pub fn resolve(&self, count: usize) -> Vec<f64> {
        match self {
            MeanRates::Index => (1..=count).map(|k| k as f64).collect(),
            MeanRates::Constant(r) => vec![*r; count],
            MeanRates::Explicit(v) => v.clone(),
        }
    }
}

/// `K` users sharing one rate shape, each with its own mean rate.
#[derive(Debug, Clone, PartialEq)]
pub struct UserPopulation {
    mean_rates: Vec<f64>,
    rate_model: RateModel,
}

impl UserPopulation {
    pub fn new(mean_rates: Vec<f64>, rate_model: RateModel) -> Result<Self, ChannelError> {
        if mean_rates.is_empty() {
            return Err(ChannelError::EmptyPopulation);
        }
        for (user, &rate) in mean_rates.iter().enumerate() {
            if !(rate.is_finite() && rate > 0.0) {
                return Err(ChannelError::BadMeanRate { user, rate });
            }
        }
        Ok(Self { mean_rates, rate_model })
    }

    pub fn count(&self) -> usize {
        self.mean_rates.len()
    }

    pub fn mean_rates(&self) -> &[f64] {
        &self.mean_rates
    }

    pub fn rate_model(&self) -> &RateModel {
        &self.rate_model
    }
}

/// Achievable rates of every user in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRates {
    pub slot: u64,
    pub rates: Vec<f64>,
}

/// Draws `R_k(n) = r_k X_k(n)` for every user of slot `slot`.
pub fn sample_slot_rates(pop: &UserPopulation, stream: &mut ChannelStream, slot: u64) -> SlotRates {
    let rng = stream.at_slot(slot);
    let rates = pop.mean_rates.iter().map(|r| r * pop.rate_model.sample(rng)).collect();
    SlotRates { slot, rates }
}
