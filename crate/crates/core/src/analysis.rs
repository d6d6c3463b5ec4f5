//! Steady-state theory and the empirical statistics it is compared against.
//!
//! At steady state every user's throughput is `kappa * r_k` and the dynamic
//! rule behaves like the static thresholds `v_j`. With `q_j = P(J >= j) =
//! P(X < v_{j-1})^{j-1}` the probe count has law `p_j = q_j - q_{j+1}`, and the
//! scheduling gain (throughput over the probe-free round-robin share
//! `r_k / K`) is
//!
//! ```text
//! kappa K = sum_j p_j (1 - j beta) E[ max(X_1..X_{j-1} | X_i < v_{j-1}, X_j) | max >= v_j ]
//! ```
//!
//! which is evaluated here by conditional Monte Carlo.

use std::collections::BTreeMap;
use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelError, RateModel, Region};
use crate::rng::{keyed_rng, Domain};
use crate::sim::MetricsSeries;
use crate::stopping::{j_max, StoppingError, ThresholdTable};

/// Smallest acceptable acceptance rate of the rejection step.
pub const MIN_ACCEPTANCE: f64 = 1e-6;
/// Smallest Monte Carlo budget per term.
pub const MIN_MC_SAMPLES: u64 = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error(transparent)]
    Stopping(#[from] StoppingError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("stage {j}: rejection acceptance {rate:e} below {MIN_ACCEPTANCE:e}")]
    LowAcceptance { j: usize, rate: f64 },
    #[error("Monte Carlo budget {0} below the minimum of {MIN_MC_SAMPLES}")]
    TooFewSamples(u64),
    #[error("utility needs positive throughputs, got {value} for user {user}")]
    NonPositiveThroughput { user: usize, value: f64 },
}

/// Probabilities `p_1 ..= p_{J_max}` of probing exactly `j` users.
pub fn probe_count_distribution(model: &RateModel, beta: f64, users: usize) -> Result<Vec<f64>, AnalysisError> {
    let table = ThresholdTable::build(model, beta, users, 1.0)?;
    Ok(probe_probs_from_table(model, &table))
}

fn probe_probs_from_table(model: &RateModel, table: &ThresholdTable) -> Vec<f64> {
    let jm = table.j_max();
    // q[j] = P(J >= j), q[1] = 1
    let q: Vec<f64> = (0..=jm + 1)
        .map(|j| match j {
            0 | 1 => 1.0,
            j if j > jm => 0.0,
            j => model.cdf_below(table.threshold(j - 1)).powi(j as i32 - 1),
        })
        .collect();
    (1..=jm).map(|j| q[j] - q[j + 1]).collect()
}

/// Monte Carlo estimate of the steady-state scheduling gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainEstimate {
    pub kappa: f64,
    pub gain: f64,
    pub std_error: f64,
}

/// Scheduling gain `kappa K` of the look-ahead scheduler at steady state.
///
/// Each stage term draws `mc_samples` trials from its own keyed stream, so
/// the result depends only on `seed`, never on thread scheduling.
pub fn scheduling_gain_theorem4(
    model: &RateModel,
    beta: f64,
    users: usize,
    mc_samples: u64,
    seed: u64,
) -> Result<GainEstimate, AnalysisError> {
    if mc_samples < MIN_MC_SAMPLES {
        return Err(AnalysisError::TooFewSamples(mc_samples));
    }
    let table = ThresholdTable::build(model, beta, users, 1.0)?;
    let probs = probe_probs_from_table(model, &table);
    let terms = (1..=table.j_max())
        .into_par_iter()
        .map(|j| stage_term(model, &table, probs[j - 1], beta, j, mc_samples, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let gain: f64 = terms.iter().map(|t| t.0).sum();
    let var: f64 = terms.iter().map(|t| t.1).sum();
    Ok(GainEstimate {
        kappa: gain / users as f64,
        gain,
        std_error: var.sqrt(),
    })
}

/// Returns `(term, variance of term)` for stage `j`.
fn stage_term(
    model: &RateModel,
    table: &ThresholdTable,
    p: f64,
    beta: f64,
    j: usize,
    trials: u64,
    seed: u64,
) -> Result<(f64, f64), AnalysisError> {
    let weight = p * (1.0 - j as f64 * beta);
    if p <= 0.0 || weight <= 0.0 {
        return Ok((0.0, 0.0));
    }
    let below = table.threshold(j - 1);
    let stop_at = table.threshold(j);
    if j == 1 {
        // p_1 = P(X >= v_1) and E[X | X >= v] = v + E[(X - v)^+] / P(X >= v)
        return Ok((weight * (stop_at + model.partial_expectation(stop_at) / p), 0.0));
    }
    let mut rng = keyed_rng(seed, Domain::Theory, j as u64);
    let (mut n, mut sum, mut sum_sq) = (0u64, 0.0, 0.0);
    for _ in 0..trials {
        let mut best = model.sample(&mut rng);
        for _ in 1..j {
            best = best.max(model.conditional_sample(Region::Below(below), &mut rng)?);
        }
        if best >= stop_at {
            n += 1;
            sum += best;
            sum_sq += best * best;
        }
    }
    let rate = n as f64 / trials as f64;
    if n < 2 || rate < MIN_ACCEPTANCE {
        return Err(AnalysisError::LowAcceptance { j, rate });
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0) * n as f64 / (n - 1) as f64;
    Ok((weight * mean, weight * weight * var / n as f64))
}

/// Expected maximum of `users` i.i.d. draws of `X`, the genie-aided gain.
///
/// Every supported family has a closed form: harmonic numbers for the
/// exponential, `2K/(K+1)` for the uniform, and a finite sum over atoms.
pub fn gain_genie(model: &RateModel, users: usize) -> f64 {
    let k = users as i32;
    match model {
        RateModel::Exponential => (1..=users).map(|i| 1.0 / i as f64).sum(),
        RateModel::Uniform => 2.0 * users as f64 / (users as f64 + 1.0),
        RateModel::Discrete(d) => {
            let mut prev = 0.0f64;
            let mut acc = 0.0;
            for &a in d.atoms() {
                let f = model.cdf(a).powi(k);
                acc += a * (f - prev);
                prev = f;
            }
            acc
        }
    }
}

/// Probe-all gain `max(1 - K beta, 0) E[max_k X_k]`.
pub fn gain_probe_all(model: &RateModel, users: usize, beta: f64) -> f64 {
    (1.0 - users as f64 * beta).max(0.0) * gain_genie(model, users)
}

/// Proportional-fair utility `sum_k ln T_k`.
pub fn pf_utility(throughputs: &[f64]) -> Result<f64, AnalysisError> {
    throughputs
        .iter()
        .enumerate()
        .map(|(user, &value)| {
            if value > 0.0 {
                Ok(value.ln())
            } else {
                Err(AnalysisError::NonPositiveThroughput { user, value })
            }
        })
        .sum()
}

/// Everything the theory predicts for one `(model, beta, K)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub rate_model: RateModel,
    pub beta: f64,
    pub users: usize,
    pub j_max: usize,
    pub thresholds: Vec<f64>,
    pub probe_probs: Vec<f64>,
    pub kappa: f64,
    pub gain_jps: f64,
    pub gain_ga: f64,
    pub gain_pa: f64,
    pub gain_rr: f64,
    pub mc_std_error: f64,
}

pub fn theory_report(
    model: &RateModel,
    beta: f64,
    users: usize,
    mc_samples: u64,
    seed: u64,
) -> Result<TheoryReport, AnalysisError> {
    let gain = scheduling_gain_theorem4(model, beta, users, mc_samples, seed)?;
    assemble_report(model, beta, users, &gain)
}

/// [`theory_report`] for several user counts. The gain depends on `K` only
/// through `J_max = min(K, floor(1/beta))`, so it is estimated once per
/// distinct `J_max`; each report equals the one `theory_report` returns.
pub fn theory_reports(
    model: &RateModel,
    beta: f64,
    users: &[usize],
    mc_samples: u64,
    seed: u64,
) -> Result<Vec<TheoryReport>, AnalysisError> {
    let mut representative = BTreeMap::new();
    for &k in users {
        representative.entry(j_max(k, beta)).or_insert(k);
    }
    let estimates = representative
        .into_par_iter()
        .map(|(jm, k)| Ok((jm, scheduling_gain_theorem4(model, beta, k, mc_samples, seed)?)))
        .collect::<Result<BTreeMap<_, _>, AnalysisError>>()?;
    users
        .iter()
        .map(|&k| {
            let est = estimates[&j_max(k, beta)];
            let gain = GainEstimate {
                kappa: est.gain / k as f64,
                ..est
            };
            assemble_report(model, beta, k, &gain)
        })
        .collect()
}

fn assemble_report(
    model: &RateModel,
    beta: f64,
    users: usize,
    gain: &GainEstimate,
) -> Result<TheoryReport, AnalysisError> {
    let table = ThresholdTable::build(model, beta, users, 1.0)?;
    Ok(TheoryReport {
        rate_model: model.clone(),
        beta,
        users,
        j_max: table.j_max(),
        thresholds: table.thresholds().to_vec(),
        probe_probs: probe_probs_from_table(model, &table),
        kappa: gain.kappa,
        gain_jps: gain.gain,
        gain_ga: gain_genie(model, users),
        gain_pa: gain_probe_all(model, users, beta),
        gain_rr: 1.0,
        mc_std_error: gain.std_error,
    })
}

/// `j,p_j` CSV.
pub fn write_probe_probs_csv<W: io::Write>(probs: &[f64], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["j", "p_j"])?;
    for (i, p) in probs.iter().enumerate() {
        w.write_record([(i + 1).to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `K,gain_jps,gain_ga,gain_pa,gain_rr` CSV, one row per report.
pub fn write_gain_curves_csv<W: io::Write>(reports: &[TheoryReport], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["K", "gain_jps", "gain_ga", "gain_pa", "gain_rr"])?;
    for r in reports {
        w.write_record([
            r.users.to_string(),
            r.gain_jps.to_string(),
            r.gain_ga.to_string(),
            r.gain_pa.to_string(),
            r.gain_rr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Steady-state statistics of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalReport {
    /// Slots after burn-in the statistics cover.
    pub slots: u64,
    /// Mean over users of `T_k / (r_k / K)`.
    pub gain: f64,
    /// Mean over users of `T_k / r_k`.
    pub kappa_hat: f64,
    pub per_user_throughput: Vec<f64>,
    pub sum_throughput: f64,
    pub selection_frequency: Vec<f64>,
    /// Empirical probability of `J = 0, 1, 2, ...` probes.
    pub probe_distribution: Vec<f64>,
    pub mean_probes: f64,
    pub final_utility: f64,
}

/// Summarizes the post-burn-in window of a replication. Throughputs here are
/// window averages `sum_n B_k(n) / slots`, not the running `T_k(N)`.
pub fn empirical_report(series: &MetricsSeries) -> EmpiricalReport {
    let w = &series.window;
    let users = series.mean_rates.len();
    let slots = w.slots.max(1) as f64;
    let throughput: Vec<f64> = w.bits.iter().map(|b| b / slots).collect();
    let ratios: Vec<f64> = throughput.iter().zip(&series.mean_rates).map(|(t, r)| t / r).collect();
    let kappa_hat = ratios.iter().sum::<f64>() / users as f64;
    let probes_total: u64 = w.probe_histogram.iter().sum();
    let probe_distribution: Vec<f64> = w
        .probe_histogram
        .iter()
        .map(|&c| c as f64 / probes_total.max(1) as f64)
        .collect();
    let mean_probes = probe_distribution.iter().enumerate().map(|(j, p)| j as f64 * p).sum();
    EmpiricalReport {
        slots: w.slots,
        gain: kappa_hat * users as f64,
        kappa_hat,
        sum_throughput: throughput.iter().sum(),
        per_user_throughput: throughput,
        selection_frequency: w.selections.iter().map(|&c| c as f64 / slots).collect(),
        probe_distribution,
        mean_probes,
        final_utility: pf_utility(&series.final_throughputs).unwrap_or(f64::NEG_INFINITY),
    }
}

/// Total variation distance between two probability vectors, padding the
/// shorter with zeros.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    0.5 * (0..n)
        .map(|i| (a.get(i).unwrap_or(&0.0) - b.get(i).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}
