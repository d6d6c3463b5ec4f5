//! Slot-loop engine, replications, paired comparisons and parameter sweeps.

use std::collections::BTreeSet;
use std::fmt;
use std::io;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{empirical_report, pf_utility, scheduling_gain_theorem4, AnalysisError, EmpiricalReport};
use crate::channel::{sample_slot_rates, ChannelError, MeanRates, RateModel, SlotRates, UserPopulation};
use crate::policies::{PolicyError, PolicyKind, PolicyState, SlotDecision};
use crate::rng::ChannelStream;
use crate::stopping::{check_beta, j_max, StoppingError, ThresholdTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Stopping(#[from] StoppingError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("replication {rep}, slot {slot}: {source}")]
    Slot {
        rep: u64,
        slot: u64,
        #[source]
        source: PolicyError,
    },
}

/// Policy named in a config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySpec {
    JpsDynamic,
    JpsStatic,
    Jlps,
    RoundRobin,
    GeniePf,
    ProbeAllPf,
}

impl PolicySpec {
    pub const ALL: [PolicySpec; 6] = [
        PolicySpec::JpsDynamic,
        PolicySpec::JpsStatic,
        PolicySpec::Jlps,
        PolicySpec::RoundRobin,
        PolicySpec::GeniePf,
        PolicySpec::ProbeAllPf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicySpec::JpsDynamic => "jps_dynamic",
            PolicySpec::JpsStatic => "jps_static",
            PolicySpec::Jlps => "jlps",
            PolicySpec::RoundRobin => "round_robin",
            PolicySpec::GeniePf => "genie_pf",
            PolicySpec::ProbeAllPf => "probe_all_pf",
        }
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicySpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicySpec::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown policy `{s}`"))
    }
}

/// Where the static scheduler gets `kappa`: `bootstrap`, `theorem4` or
/// `fixed(<value>)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum KappaMode {
    /// Run the dynamic rule for the burn-in, then measure `mean T_k / r_k`.
    Bootstrap,
    /// Steady-state value from the Monte Carlo gain estimator.
    Theorem4,
    Fixed(f64),
}

impl FromStr for KappaMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "bootstrap" => Ok(KappaMode::Bootstrap),
            "theorem4" => Ok(KappaMode::Theorem4),
            other => other
                .strip_prefix("fixed(")
                .and_then(|rest| rest.strip_suffix(')'))
                .and_then(|v| v.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite() && *v > 0.0)
                .map(KappaMode::Fixed)
                .ok_or_else(|| format!("bad kappa_mode `{other}`; expected bootstrap, theorem4 or fixed(<positive>)")),
        }
    }
}

impl TryFrom<String> for KappaMode {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<KappaMode> for String {
    fn from(k: KappaMode) -> Self {
        match k {
            KappaMode::Bootstrap => "bootstrap".into(),
            KappaMode::Theorem4 => "theorem4".into(),
            KappaMode::Fixed(v) => format!("fixed({v})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticConfig {
    pub kappa_mode: KappaMode,
    pub burn_in_slots: u64,
}

impl Default for StaticConfig {
    fn default() -> Self {
        Self {
            kappa_mode: KappaMode::Bootstrap,
            burn_in_slots: 2_000,
        }
    }
}

/// One policy or a list of policies run on the same channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicyList {
    One(PolicySpec),
    Many(Vec<PolicySpec>),
}

impl PolicyList {
    pub fn to_vec(&self) -> Vec<PolicySpec> {
        match self {
            PolicyList::One(p) => vec![*p],
            PolicyList::Many(v) => v.clone(),
        }
    }
}

/// Variable swept by [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepVariable {
    #[serde(rename = "K", alias = "users")]
    Users,
    #[serde(rename = "beta")]
    Beta,
    #[serde(rename = "n_slots")]
    Slots,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::Users => "K",
            SweepVariable::Beta => "beta",
            SweepVariable::Slots => "n_slots",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

/// A complete experiment description, as read from a JSON config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub users: usize,
    pub mean_rates: MeanRates,
    pub rate_model: RateModel,
    pub beta: f64,
    pub policy: PolicyList,
    #[serde(rename = "static")]
    pub static_cfg: StaticConfig,
    pub n_slots: u64,
    pub n_replications: u64,
    pub seed: u64,
    pub burn_in_fraction: f64,
    pub record_interval: u64,
    /// Monte Carlo budget per stage for theory values.
    pub mc_samples: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            users: 20,
            mean_rates: MeanRates::Index,
            rate_model: RateModel::Exponential,
            beta: 0.1,
            policy: PolicyList::One(PolicySpec::JpsDynamic),
            static_cfg: StaticConfig::default(),
            n_slots: 20_000,
            n_replications: 10,
            seed: 1,
            burn_in_fraction: 0.1,
            record_interval: 100,
            mc_samples: 1_000_000,
            sweep: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.users == 0 {
            return bad("users must be at least 1".into());
        }
        if check_beta(self.beta).is_err() {
            return bad(format!("beta = {} must lie in (0, 1)", self.beta));
        }
        if self.n_slots == 0 {
            return bad("n_slots must be at least 1".into());
        }
        if self.n_replications == 0 {
            return bad("n_replications must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return bad(format!(
                "burn_in_fraction = {} must lie in [0, 1)",
                self.burn_in_fraction
            ));
        }
        if self.record_interval == 0 {
            return bad("record_interval must be at least 1".into());
        }
        if let MeanRates::Explicit(r) = &self.mean_rates {
            if r.len() != self.users {
                return bad(format!("{} mean rates given for {} users", r.len(), self.users));
            }
        }
        if self.policy.to_vec().is_empty() {
            return bad("no policy given".into());
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return bad("sweep values must be nonempty".into());
            }
        }
        self.population()?;
        Ok(())
    }

    pub fn population(&self) -> Result<UserPopulation, SimError> {
        Ok(UserPopulation::new(
            self.mean_rates.resolve(self.users),
            self.rate_model.clone(),
        )?)
    }

    pub fn burn_in_slots(&self) -> u64 {
        (self.burn_in_fraction * self.n_slots as f64).floor() as u64
    }

    /// Copy with a single policy.
    pub fn with_policy(&self, policy: PolicySpec) -> Self {
        Self {
            policy: PolicyList::One(policy),
            ..self.clone()
        }
    }

    /// Copy with one swept variable set to `value`.
    pub fn with_value(&self, variable: SweepVariable, value: f64) -> Result<Self, SimError> {
        let mut cfg = self.clone();
        cfg.sweep = None;
        let as_count = |v: f64| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as u64)
            } else {
                Err(SimError::Config(format!(
                    "{} must be a positive integer, got {v}",
                    variable.name()
                )))
            }
        };
        match variable {
            SweepVariable::Users => {
                cfg.users = as_count(value)? as usize;
                if matches!(cfg.mean_rates, MeanRates::Explicit(_)) {
                    return Err(SimError::Config("cannot sweep K with explicit mean rates".into()));
                }
            }
            SweepVariable::Beta => cfg.beta = value,
            SweepVariable::Slots => cfg.n_slots = as_count(value)?,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A config with its policy resolved to something runnable.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub policy: PolicySpec,
    pub population: UserPopulation,
    /// Static thresholds with `kappa` already fixed (theorem4 / fixed modes).
    table: Option<ThresholdTable>,
}

impl Experiment {
    /// Resolves a single-policy experiment. For `jps_static` with
    /// `theorem4`, this runs the Monte Carlo gain estimator once.
    pub fn new(config: &ExperimentConfig, policy: PolicySpec) -> Result<Self, SimError> {
        config.validate()?;
        let population = config.population()?;
        let table = match (policy, config.static_cfg.kappa_mode) {
            (PolicySpec::JpsStatic, KappaMode::Theorem4) => {
                let g = scheduling_gain_theorem4(
                    &config.rate_model,
                    config.beta,
                    config.users,
                    config.mc_samples,
                    config.seed,
                )?;
                Some(ThresholdTable::build(
                    &config.rate_model,
                    config.beta,
                    config.users,
                    g.kappa,
                )?)
            }
            (PolicySpec::JpsStatic, KappaMode::Fixed(k)) => {
                Some(ThresholdTable::build(&config.rate_model, config.beta, config.users, k)?)
            }
            _ => None,
        };
        Ok(Self {
            config: config.clone(),
            policy,
            population,
            table,
        })
    }

    /// `kappa` used by the static rule when known before the run.
    pub fn static_kappa(&self) -> Option<f64> {
        self.table.as_ref().map(ThresholdTable::kappa)
    }

    fn initial_kind(&self) -> PolicyKind {
        match self.policy {
            PolicySpec::JpsDynamic => PolicyKind::JpsDynamic,
            PolicySpec::JpsStatic => match &self.table {
                Some(t) => PolicyKind::JpsStatic(t.clone()),
                None => PolicyKind::JpsDynamic,
            },
            PolicySpec::Jlps => PolicyKind::Jlps,
            PolicySpec::RoundRobin => PolicyKind::RoundRobin,
            PolicySpec::GeniePf => PolicyKind::GeniePf,
            PolicySpec::ProbeAllPf => PolicyKind::ProbeAllPf,
        }
    }

    fn bootstrap_slots(&self) -> Option<u64> {
        (self.policy == PolicySpec::JpsStatic && self.table.is_none())
            .then(|| self.config.static_cfg.burn_in_slots.min(self.config.n_slots))
    }
}

/// One recorded point of the throughput trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub slot: u64,
    pub throughputs: Vec<f64>,
    pub utility: f64,
}

/// Totals over the post-burn-in slots.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SteadyWindow {
    pub slots: u64,
    pub bits: Vec<f64>,
    pub selections: Vec<u64>,
    pub probe_histogram: Vec<u64>,
}

/// Everything recorded during one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSeries {
    pub policy: String,
    pub replication: u64,
    pub mean_rates: Vec<f64>,
    pub n_slots: u64,
    pub burn_in_slots: u64,
    pub trajectory: Vec<TrajectoryPoint>,
    /// Over all slots.
    pub selection_counts: Vec<u64>,
    /// Count of slots with `J` probes, indexed by `J`, over all slots.
    pub probe_histogram: Vec<u64>,
    pub final_throughputs: Vec<f64>,
    pub window: SteadyWindow,
    /// `kappa` the static rule ran with, if any.
    pub kappa_used: Option<f64>,
}

impl MetricsSeries {
    pub fn throughput_traj_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["slot", "user", "T"])?;
        for p in &self.trajectory {
            for (k, t) in p.throughputs.iter().enumerate() {
                w.write_record([p.slot.to_string(), (k + 1).to_string(), t.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn utility_traj_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["slot", "utility"])?;
        for p in &self.trajectory {
            w.write_record([p.slot.to_string(), p.utility.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn probe_hist_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["J", "count"])?;
        for (j, c) in self.probe_histogram.iter().enumerate() {
            w.write_record([j.to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn selection_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user", "count", "window_count"])?;
        for (k, (c, wc)) in self.selection_counts.iter().zip(&self.window.selections).enumerate() {
            w.write_record([(k + 1).to_string(), c.to_string(), wc.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One slot as seen by an observer of [`run_replication_observed`].
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord<'a> {
    pub slot: u64,
    pub rates: &'a [f64],
    pub throughputs_before: &'a [f64],
    pub decision: &'a SlotDecision,
    pub throughputs_after: &'a [f64],
}

/// Slots whose throughputs are recorded: every `interval`-th slot, the last
/// slot, and a geometric grid below `interval` so that log-time plots have
/// early points.
pub fn record_slots(n_slots: u64, interval: u64) -> BTreeSet<u64> {
    let mut set: BTreeSet<u64> = (1..=n_slots / interval).map(|i| i * interval).collect();
    set.insert(n_slots);
    let mut n = 1u64;
    while n < interval.min(n_slots) {
        set.insert(n);
        n = (n + 1).max((n as f64 * 1.25).ceil() as u64);
    }
    set
}

pub fn run_replication(exp: &Experiment, rep: u64) -> Result<MetricsSeries, SimError> {
    run_replication_observed(exp, rep, |_| {})
}

/// The slot loop: draw rates, run the policy, update throughputs, record.
pub fn run_replication_observed<F>(exp: &Experiment, rep: u64, mut observe: F) -> Result<MetricsSeries, SimError>
where
    F: FnMut(&SlotRecord<'_>),
{
    let cfg = &exp.config;
    let pop = &exp.population;
    let users = pop.count();
    let jm = j_max(users, cfg.beta);
    let burn_in = cfg.burn_in_slots();
    let recorded = record_slots(cfg.n_slots, cfg.record_interval);
    let bootstrap_until = exp.bootstrap_slots();

    let mut stream = ChannelStream::new(cfg.seed, rep);
    let mut state = PolicyState::new(exp.initial_kind(), pop);
    let mut kappa_used = exp.static_kappa();
    let mut series = MetricsSeries {
        policy: exp.policy.name().to_string(),
        replication: rep,
        mean_rates: pop.mean_rates().to_vec(),
        n_slots: cfg.n_slots,
        burn_in_slots: burn_in,
        trajectory: Vec::with_capacity(recorded.len()),
        selection_counts: vec![0; users],
        probe_histogram: vec![0; users + 1],
        final_throughputs: Vec::new(),
        window: SteadyWindow {
            slots: 0,
            bits: vec![0.0; users],
            selections: vec![0; users],
            probe_histogram: vec![0; users + 1],
        },
        kappa_used: None,
    };
    let mut before = vec![0.0; users];

    for n in 1..=cfg.n_slots {
        if bootstrap_until == Some(n - 1) {
            let kappa = state
                .throughputs()
                .iter()
                .zip(pop.mean_rates())
                .map(|(t, r)| t / r)
                .sum::<f64>()
                / users as f64;
            let table = ThresholdTable::build(pop.rate_model(), cfg.beta, users, kappa)?;
            state.switch_kind(PolicyKind::JpsStatic(table));
            kappa_used = Some(kappa);
        }
        let rates = sample_slot_rates(pop, &mut stream, n);
        before.copy_from_slice(state.throughputs());
        let decision =
            state
                .run_slot(pop, &rates, cfg.beta)
                .map_err(|source| SimError::Slot { rep, slot: n, source })?;
        debug_assert!(slot_invariants_hold(&decision, &rates.rates, &before, cfg.beta, jm));
        state.update_throughput(&decision, n);

        series.selection_counts[decision.selected] += 1;
        series.probe_histogram[decision.stop_index] += 1;
        if n > burn_in {
            let w = &mut series.window;
            w.slots += 1;
            w.bits[decision.selected] += decision.delivered_bits;
            w.selections[decision.selected] += 1;
            w.probe_histogram[decision.stop_index] += 1;
        }
        if recorded.contains(&n) {
            series.trajectory.push(TrajectoryPoint {
                slot: n,
                throughputs: state.throughputs().to_vec(),
                utility: pf_utility(state.throughputs()).expect("throughputs are floored"),
            });
        }
        observe(&SlotRecord {
            slot: n,
            rates: &rates.rates,
            throughputs_before: &before,
            decision: &decision,
            throughputs_after: state.throughputs(),
        });
    }
    series.final_throughputs = state.throughputs().to_vec();
    series.kappa_used = kappa_used;
    Ok(series)
}

fn slot_invariants_hold(d: &SlotDecision, rates: &[f64], t: &[f64], beta: f64, jm: usize) -> bool {
    let probing = !d.probe_order.is_empty();
    let count_ok = !probing || d.stop_index == d.probe_order.len();
    let bound_ok = d.stop_index <= jm || d.stop_index == t.len();
    let greedy_ok = !probing
        || d.probe_order
            .iter()
            .all(|&k| rates[k] / t[k] <= rates[d.selected] / t[d.selected]);
    let max_rate = rates.iter().copied().fold(0.0, f64::max);
    let bits_ok = d.delivered_bits >= 0.0 && (d.stop_index == 0 || d.delivered_bits <= (1.0 - beta) * max_rate + 1e-12);
    count_ok && bound_ok && greedy_ok && bits_ok
}

/// Mean and sample standard deviation across replications.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, sd }
    }
}

/// Aggregate of all replications of one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub policy: String,
    pub users: usize,
    pub beta: f64,
    pub n_slots: u64,
    pub n_replications: u64,
    pub burn_in_slots: u64,
    pub gain: Stat,
    pub kappa_hat: Stat,
    pub sum_throughput: Stat,
    pub mean_probes: Stat,
    pub final_utility: Stat,
    pub selection_frequency: Vec<f64>,
    pub probe_distribution: Vec<f64>,
    pub kappa_used: Option<Stat>,
    pub replications: Vec<EmpiricalReport>,
}

impl ExperimentReport {
    fn aggregate(exp: &Experiment, series: &[MetricsSeries]) -> Self {
        let reps: Vec<EmpiricalReport> = series.iter().map(empirical_report).collect();
        let mean_vec = |f: &dyn Fn(&EmpiricalReport) -> &Vec<f64>| {
            let len = f(&reps[0]).len();
            (0..len)
                .map(|i| reps.iter().map(|r| f(r)[i]).sum::<f64>() / reps.len() as f64)
                .collect::<Vec<f64>>()
        };
        let kappas: Vec<f64> = series.iter().filter_map(|s| s.kappa_used).collect();
        Self {
            policy: exp.policy.name().to_string(),
            users: exp.config.users,
            beta: exp.config.beta,
            n_slots: exp.config.n_slots,
            n_replications: series.len() as u64,
            burn_in_slots: exp.config.burn_in_slots(),
            gain: Stat::of(reps.iter().map(|r| r.gain)),
            kappa_hat: Stat::of(reps.iter().map(|r| r.kappa_hat)),
            sum_throughput: Stat::of(reps.iter().map(|r| r.sum_throughput)),
            mean_probes: Stat::of(reps.iter().map(|r| r.mean_probes)),
            final_utility: Stat::of(reps.iter().map(|r| r.final_utility)),
            selection_frequency: mean_vec(&|r| &r.selection_frequency),
            probe_distribution: mean_vec(&|r| &r.probe_distribution),
            kappa_used: (!kappas.is_empty()).then(|| Stat::of(kappas)),
            replications: reps,
        }
    }
}

/// Runs every replication (in parallel on the current rayon pool) and folds
/// them in replication order.
pub fn run_experiment(exp: &Experiment) -> Result<(ExperimentReport, Vec<MetricsSeries>), SimError> {
    let series = (0..exp.config.n_replications)
        .into_par_iter()
        .map(|rep| run_replication(exp, rep))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((ExperimentReport::aggregate(exp, &series), series))
}

/// Two policies driven by the same channel realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub policy_a: String,
    pub policy_b: String,
    /// Post-burn-in slots compared.
    pub slots: u64,
    /// Fraction of those slots with the same probe count and the same
    /// selected user, each policy evolving its own throughputs.
    pub agreement: f64,
    /// Same fraction when policy b decides in shadow on policy a's state
    /// (throughputs and slot rates) every slot. `None` when b carries
    /// state of its own (learning archives, bootstrapped `kappa`).
    pub shadow_agreement: Option<f64>,
    pub report_a: EmpiricalReport,
    pub report_b: EmpiricalReport,
}

pub fn paired_run(a: &Experiment, b: &Experiment, rep: u64) -> Result<PairedComparison, SimError> {
    if a.config.seed != b.config.seed || a.config.n_slots != b.config.n_slots || a.population != b.population {
        return Err(SimError::Config(
            "paired runs need the same seed, slots and population".into(),
        ));
    }
    let burn_in = a.config.burn_in_slots();
    let shadow_kind = match b.initial_kind() {
        k @ PolicyKind::JpsDynamic if b.bootstrap_slots().is_none() => Some(k),
        k @ PolicyKind::JpsStatic(_) => Some(k),
        _ => None,
    };
    let mut shadow = shadow_kind.map(|k| PolicyState::new(k, &b.population));
    let mut shadow_same = 0u64;
    let mut shadow_error = None;
    let mut da = Vec::with_capacity((a.config.n_slots - burn_in) as usize);
    let sa = run_replication_observed(a, rep, |r| {
        if r.slot <= burn_in {
            return;
        }
        da.push((r.decision.stop_index, r.decision.selected));
        if let Some(state) = shadow.as_mut() {
            let rates = SlotRates {
                slot: r.slot,
                rates: r.rates.to_vec(),
            };
            let decided = state
                .set_throughputs(r.throughputs_before.to_vec())
                .and_then(|()| state.run_slot(&b.population, &rates, b.config.beta));
            match decided {
                Ok(d) if d.stop_index == r.decision.stop_index && d.selected == r.decision.selected => shadow_same += 1,
                Ok(_) => {}
                Err(e) => {
                    shadow_error.get_or_insert(SimError::Slot {
                        rep,
                        slot: r.slot,
                        source: e,
                    });
                }
            }
        }
    })?;
    if let Some(e) = shadow_error {
        return Err(e);
    }
    let mut db = Vec::with_capacity(da.len());
    let sb = run_replication_observed(b, rep, |r| {
        if r.slot > burn_in {
            db.push((r.decision.stop_index, r.decision.selected));
        }
    })?;
    let same = da.iter().zip(&db).filter(|(x, y)| x == y).count();
    Ok(PairedComparison {
        policy_a: a.policy.name().into(),
        policy_b: b.policy.name().into(),
        slots: da.len() as u64,
        agreement: same as f64 / da.len().max(1) as f64,
        shadow_agreement: shadow.map(|_| shadow_same as f64 / da.len().max(1) as f64),
        report_a: empirical_report(&sa),
        report_b: empirical_report(&sb),
    })
}

/// One row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variable: SweepVariable,
    pub value: f64,
    pub report: ExperimentReport,
}

/// Runs `policy` at each value of `variable`.
pub fn sweep(
    template: &ExperimentConfig,
    policy: PolicySpec,
    variable: SweepVariable,
    values: &[f64],
) -> Result<Vec<SweepRow>, SimError> {
    if values.is_empty() {
        return Err(SimError::Config("sweep values must be nonempty".into()));
    }
    values
        .iter()
        .map(|&value| {
            let cfg = template.with_value(variable, value)?;
            let exp = Experiment::new(&cfg, policy)?;
            let (report, _) = run_experiment(&exp)?;
            Ok(SweepRow {
                variable,
                value,
                report,
            })
        })
        .collect()
}

/// Sweep rows as CSV.
pub fn write_sweep_csv<W: io::Write>(rows: &[SweepRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "variable",
        "value",
        "policy",
        "gain_mean",
        "gain_sd",
        "kappa_hat_mean",
        "sum_throughput_mean",
        "sum_throughput_sd",
        "mean_probes",
    ])?;
    for row in rows {
        let r = &row.report;
        w.write_record([
            row.variable.name().to_string(),
            row.value.to_string(),
            r.policy.clone(),
            r.gain.mean.to_string(),
            r.gain.sd.to_string(),
            r.kappa_hat.mean.to_string(),
            r.sum_throughput.mean.to_string(),
            r.sum_throughput.sd.to_string(),
            r.mean_probes.mean.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
