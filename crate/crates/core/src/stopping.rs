//! Optimal stopping of the per-slot probing phase.
//!
//! After `j` probes the scheduler holds the best throughput-normalized rate
//! `w`. Stopping earns `(1 - j*beta) * w`; probing one more user and then
//! stopping earns `(1 - (j+1)*beta) * E[w ∨ s]` in expectation, where `s` is
//! the next candidate's normalized rate. The problem is monotone, so the
//! one-stage look-ahead comparison is the optimal rule.
//!
//! At steady state every candidate has the same normalized mean `1/kappa`
//! and the rule collapses to `kappa * w >= v_j`, where `v_j` is the fixed
//! point of [`threshold_curve`].

use std::io;

use thiserror::Error;

use crate::channel::RateModel;

/// Absolute tolerance on the fixed-point residual `|v - g_j(v)|`.
pub const THRESHOLD_TOL: f64 = 1e-10;
const MAX_BRACKET_DOUBLINGS: u32 = 200;
const MAX_BISECTIONS: u32 = 400;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoppingError {
    #[error("probing fraction beta = {0} must lie in (0, 1)")]
    InvalidBeta(f64),
    #[error("stage j = {j} outside 0..{limit}")]
    StageOutOfRange { j: usize, limit: usize },
    #[error("kappa = {0} must be positive and finite")]
    InvalidKappa(f64),
    #[error("population size must be at least one")]
    NoUsers,
    #[error("threshold solver for stage {j} did not converge (residual {residual:e})")]
    NoConvergence { j: usize, residual: f64 },
}

pub fn check_beta(beta: f64) -> Result<(), StoppingError> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(StoppingError::InvalidBeta(beta))
    }
}

/// Maximum probes per slot, `min(K, floor(1/beta))`.
pub fn j_max(users: usize, beta: f64) -> usize {
    // guard against 1/beta landing a hair below an integer
    let per_slot = (1.0 / beta + 1e-9).floor() as usize;
    users.min(per_slot)
}

/// State of the probing phase when deciding whether to probe again.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeContext {
    pub beta: f64,
    /// Probes made so far.
    pub j: usize,
    pub j_max: usize,
    /// Best normalized rate seen so far; zero before the first probe.
    pub w: f64,
    /// Normalized mean rate `r/T` of the next user in probing order.
    pub next_mean: f64,
}

/// `E[w ∨ mean*X]` for `X` drawn from `model`.
pub fn lookahead_expectation(model: &RateModel, mean: f64, w: f64) -> f64 {
    w + mean * model.partial_expectation(w / mean)
}

/// Stop-minus-continue margin
/// `f_j(w) = (1 - j*beta) w - (1 - (j+1)*beta) E[w ∨ s]`.
pub fn stop_margin(model: &RateModel, beta: f64, j: usize, next_mean: f64, w: f64) -> f64 {
    let now = 1.0 - j as f64 * beta;
    let later = 1.0 - (j + 1) as f64 * beta;
    now * w - later * lookahead_expectation(model, next_mean, w)
}

/// The one-stage look-ahead rule, with a forced stop once `j_max` users have
/// been probed.
pub fn dynamic_should_stop(ctx: &ProbeContext, model: &RateModel) -> bool {
    if ctx.j >= ctx.j_max {
        return true;
    }
    stop_margin(model, ctx.beta, ctx.j, ctx.next_mean, ctx.w) >= 0.0
}

/// `g_j(v) = (1/beta - (j+1)) E[(X - v)^+]`.
pub fn threshold_curve(model: &RateModel, beta: f64, j: usize, v: f64) -> f64 {
    let coeff = (1.0 / beta - (j + 1) as f64).max(0.0);
    if coeff == 0.0 {
        return 0.0;
    }
    coeff * model.partial_expectation(v)
}

/// Fixed point `v_j = g_j(v_j)`, by bisection on `v - g_j(v)`.
///
/// The bracket starts at `[0, 1]` and doubles until the residual changes
/// sign. `g_j` is positive and strictly decreasing towards zero, so the
/// crossing is unique.
pub fn solve_threshold(model: &RateModel, beta: f64, j: usize) -> Result<f64, StoppingError> {
    check_beta(beta)?;
    let residual = |v: f64| v - threshold_curve(model, beta, j, v);
    if threshold_curve(model, beta, j, 0.0) <= 0.0 {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut doublings = 0;
    while residual(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_BRACKET_DOUBLINGS {
            return Err(StoppingError::NoConvergence {
                j,
                residual: residual(hi),
            });
        }
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let r = residual(mid);
        if r.abs() <= THRESHOLD_TOL {
            return Ok(mid);
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
        if r < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    Err(StoppingError::NoConvergence {
        j,
        residual: residual(mid),
    })
}

/// Static thresholds `v_0 > v_1 > ... > v_{J_max-1}`, `v_{J_max} = 0`, and
/// the throughput-to-mean-rate ratio `kappa` they are compared against.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTable {
    beta: f64,
    thresholds: Vec<f64>,
    kappa: f64,
}

impl ThresholdTable {
    pub fn build(model: &RateModel, beta: f64, users: usize, kappa: f64) -> Result<Self, StoppingError> {
        check_beta(beta)?;
        if users == 0 {
            return Err(StoppingError::NoUsers);
        }
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(StoppingError::InvalidKappa(kappa));
        }
        let jm = j_max(users, beta);
        let mut thresholds = (0..jm)
            .map(|j| solve_threshold(model, beta, j))
            .collect::<Result<Vec<_>, _>>()?;
        thresholds.push(0.0);
        Ok(Self {
            beta,
            thresholds,
            kappa,
        })
    }

    pub fn with_kappa(mut self, kappa: f64) -> Result<Self, StoppingError> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(StoppingError::InvalidKappa(kappa));
        }
        self.kappa = kappa;
        Ok(self)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn j_max(&self) -> usize {
        self.thresholds.len() - 1
    }

    /// `v_0 ..= v_{J_max}`.
    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn threshold(&self, j: usize) -> f64 {
        self.thresholds[j.min(self.j_max())]
    }

    /// Stop after `j` probes iff `kappa * w >= v_j`.
    pub fn should_stop(&self, j: usize, w: f64) -> bool {
        j >= self.j_max() || self.kappa * w >= self.thresholds[j]
    }

    /// CSV with header `j,v_j`, one row per decision stage `j < j_max`.
    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["j", "v_j"])?;
        for (j, v) in self.thresholds[..self.j_max()].iter().enumerate() {
            w.write_record([j.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Free-function form of [`ThresholdTable::should_stop`].
pub fn static_should_stop(table: &ThresholdTable, j: usize, w: f64) -> bool {
    table.should_stop(j, w)
}
