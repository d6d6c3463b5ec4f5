//! Per-slot schedulers.
//!
//! The probing schedulers visit users in descending order of their expected
//! throughput-normalized rate, keep the best normalized rate `w` seen so far,
//! and stop according to one of three rules:
//!
//! * [`PolicyKind::JpsDynamic`]: one-stage look-ahead with known statistics.
//! * [`PolicyKind::JpsStatic`]: precomputed thresholds, `kappa * w >= v_j`.
//! * [`PolicyKind::Jlps`]: look-ahead against the empirical distribution of
//!   each user's previously probed rates.
//!
//! The baselines are round robin (no probing), genie-aided PF (free full
//! channel knowledge) and probe-all PF (pays `K * beta` every slot).

use thiserror::Error;

use crate::channel::{sample_slot_rates, SlotRates, UserPopulation};
use crate::rng::ChannelStream;
use crate::stopping::{dynamic_should_stop, j_max, ProbeContext, ThresholdTable};

/// Throughputs are clamped at this multiple of the user's mean rate.
pub const THROUGHPUT_FLOOR: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("state tracks {state} users but the slot carries {slot} rates")]
    UserCountMismatch { state: usize, slot: usize },
    #[error("throughput of user {user} is {value}; throughputs must be positive")]
    NonPositiveThroughput { user: usize, value: f64 },
    #[error("threshold table allows {table} probes but this population allows {expected}")]
    TableMismatch { table: usize, expected: usize },
    #[error("learning state is missing or inconsistent: {0}")]
    Learner(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyKind {
    JpsDynamic,
    JpsStatic(ThresholdTable),
    Jlps,
    RoundRobin,
    GeniePf,
    ProbeAllPf,
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::JpsDynamic => "jps_dynamic",
            PolicyKind::JpsStatic(_) => "jps_static",
            PolicyKind::Jlps => "jlps",
            PolicyKind::RoundRobin => "round_robin",
            PolicyKind::GeniePf => "genie_pf",
            PolicyKind::ProbeAllPf => "probe_all_pf",
        }
    }
}

/// Probed rates of one user, indexed so that `sum_k max(r_k, cut)` costs
/// `O(log n + sqrt n)`: a sorted part with suffix sums plus a small
/// unsorted buffer that is merged in once it outgrows `sqrt n`.
#[derive(Debug, Clone, PartialEq, Default)]
struct RateArchive {
    /// Insertion order.
    rates: Vec<f64>,
    sum: f64,
    sorted: Vec<f64>,
    /// `suffix[i] = sorted[i..].sum()`, one entry longer than `sorted`.
    suffix: Vec<f64>,
    pending: Vec<f64>,
}

impl RateArchive {
    fn push(&mut self, rate: f64) {
        self.rates.push(rate);
        self.sum += rate;
        self.pending.push(rate);
        let n = self.sorted.len() + self.pending.len();
        if self.pending.len() * self.pending.len() > n.max(256) {
            self.merge_pending();
        }
    }

    fn merge_pending(&mut self) {
        self.sorted.append(&mut self.pending);
        self.sorted.sort_by(f64::total_cmp);
        self.suffix.clear();
        self.suffix.resize(self.sorted.len() + 1, 0.0);
        for i in (0..self.sorted.len()).rev() {
            self.suffix[i] = self.suffix[i + 1] + self.sorted[i];
        }
    }

    /// `sum over the archive of max(r, cut)`.
    fn sum_max(&self, cut: f64) -> f64 {
        let below = self.sorted.partition_point(|&r| r <= cut);
        let indexed = if self.sorted.is_empty() {
            0.0
        } else {
            below as f64 * cut + self.suffix[below]
        };
        indexed + self.pending.iter().map(|&r| r.max(cut)).sum::<f64>()
    }
}

/// Archive of every rate probed so far, per user.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    archives: Vec<RateArchive>,
    /// Next user still to be probed by the initialization sweep; equal to
    /// the user count once every archive is non-empty.
    init_cursor: usize,
    /// Set by the slot that completes the sweep, consumed by the following
    /// throughput update.
    reset_pending: bool,
}

impl Learner {
    fn new(users: usize) -> Self {
        Self {
            archives: vec![RateArchive::default(); users],
            init_cursor: 0,
            reset_pending: false,
        }
    }

    /// Rates probed from `user`, oldest first.
    pub fn archive(&self, user: usize) -> &[f64] {
        &self.archives[user].rates
    }

    /// Number of probed samples `M_k`.
    pub fn count(&self, user: usize) -> usize {
        self.archives[user].rates.len()
    }

    pub fn initialized(&self) -> bool {
        self.init_cursor >= self.archives.len()
    }

    fn push(&mut self, user: usize, rate: f64) {
        self.archives[user].push(rate);
    }

    /// Empirical normalized mean `s~_k = mean(R_k^(m)) / T_k`.
    fn mean_index(&self, user: usize, throughput: f64) -> f64 {
        self.archives[user].sum / self.count(user) as f64 / throughput
    }

    /// Empirical look-ahead `e~_k(w) = mean(w ∨ R_k^(m) / T_k)`.
    fn lookahead(&self, user: usize, throughput: f64, w: f64) -> f64 {
        self.archives[user].sum_max(w * throughput) / self.count(user) as f64 / throughput
    }
}

/// Mutable scheduler state of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    throughputs: Vec<f64>,
    floors: Vec<f64>,
    kind: PolicyKind,
    learner: Option<Learner>,
    rr_cursor: usize,
}

/// What happened in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotDecision {
    /// Users probed, in probing order.
    pub probe_order: Vec<usize>,
    /// Raw rates revealed by those probes.
    pub probed_rates: Vec<f64>,
    /// Number of probes charged, `J`.
    pub stop_index: usize,
    pub selected: usize,
    /// `(1 - J beta) R_selected`.
    pub delivered_bits: f64,
}

impl PolicyState {
    /// Fresh state with `T_k(0) = 1` for every user.
    pub fn new(kind: PolicyKind, pop: &UserPopulation) -> Self {
        let users = pop.count();
        let learner = matches!(kind, PolicyKind::Jlps).then(|| Learner::new(users));
        Self {
            throughputs: vec![1.0; users],
            floors: pop.mean_rates().iter().map(|r| r * THROUGHPUT_FLOOR).collect(),
            kind,
            learner,
            rr_cursor: 0,
        }
    }

    pub fn kind(&self) -> &PolicyKind {
        &self.kind
    }

    pub fn throughputs(&self) -> &[f64] {
        &self.throughputs
    }

    pub fn learner(&self) -> Option<&Learner> {
        self.learner.as_ref()
    }

    /// Replaces the stopping rule, keeping throughputs. Used to switch from
    /// the dynamic rule to static thresholds after a bootstrap period.
    pub fn switch_kind(&mut self, kind: PolicyKind) {
        if matches!(kind, PolicyKind::Jlps) && self.learner.is_none() {
            self.learner = Some(Learner::new(self.throughputs.len()));
        }
        self.kind = kind;
    }

    /// Overrides the throughput vector; mainly for tests and replays.
    pub fn set_throughputs(&mut self, throughputs: Vec<f64>) -> Result<(), PolicyError> {
        if throughputs.len() != self.throughputs.len() {
            return Err(PolicyError::UserCountMismatch {
                state: self.throughputs.len(),
                slot: throughputs.len(),
            });
        }
        self.throughputs = throughputs;
        self.validate()
    }

    fn validate(&self) -> Result<(), PolicyError> {
        for (user, &value) in self.throughputs.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(PolicyError::NonPositiveThroughput { user, value });
            }
        }
        Ok(())
    }

    /// Full probing order: descending priority index, ties by user index.
    ///
    /// The index is `r_k / T_k` with known statistics and the empirical
    /// normalized mean for the learning scheduler. Baselines use index order.
    pub fn probe_order(&self, pop: &UserPopulation) -> Vec<usize> {
        let users = self.throughputs.len();
        let index: Vec<f64> = match (&self.kind, &self.learner) {
            (PolicyKind::JpsDynamic | PolicyKind::JpsStatic(_), _) => pop
                .mean_rates()
                .iter()
                .zip(&self.throughputs)
                .map(|(r, t)| r / t)
                .collect(),
            (PolicyKind::Jlps, Some(l)) if l.initialized() => {
                (0..users).map(|k| l.mean_index(k, self.throughputs[k])).collect()
            }
            _ => return (0..users).collect(),
        };
        let mut order: Vec<usize> = (0..users).collect();
        order.sort_by(|&a, &b| index[b].total_cmp(&index[a]).then(a.cmp(&b)));
        order
    }

    /// Runs the probing and selection phase of one slot.
    ///
    /// Only the entries of `slot.rates` belonging to probed users are read,
    /// except by the genie-aided baseline and round robin (which transmits
    /// blind).
    pub fn run_slot(&mut self, pop: &UserPopulation, slot: &SlotRates, beta: f64) -> Result<SlotDecision, PolicyError> {
        let users = self.throughputs.len();
        if slot.rates.len() != users || pop.count() != users {
            return Err(PolicyError::UserCountMismatch {
                state: users,
                slot: slot.rates.len(),
            });
        }
        self.validate()?;
        let jm = j_max(users, beta);

        if let PolicyKind::JpsStatic(table) = &self.kind {
            if table.j_max() != jm {
                return Err(PolicyError::TableMismatch {
                    table: table.j_max(),
                    expected: jm,
                });
            }
        }
        if matches!(self.kind, PolicyKind::Jlps) {
            match &self.learner {
                None => return Err(PolicyError::Learner("no archive attached".into())),
                Some(l) if !l.initialized() => return Ok(self.run_init_slot(slot, beta)),
                Some(_) => {}
            }
        }

        match self.kind {
            PolicyKind::RoundRobin => {
                let selected = self.rr_cursor;
                self.rr_cursor = (self.rr_cursor + 1) % users;
                Ok(SlotDecision {
                    probe_order: Vec::new(),
                    probed_rates: Vec::new(),
                    stop_index: 0,
                    selected,
                    delivered_bits: slot.rates[selected],
                })
            }
            PolicyKind::GeniePf => {
                let selected = self.argmax_normalized(0..users, &slot.rates);
                Ok(SlotDecision {
                    probe_order: Vec::new(),
                    probed_rates: Vec::new(),
                    stop_index: 0,
                    selected,
                    delivered_bits: slot.rates[selected],
                })
            }
            PolicyKind::ProbeAllPf => {
                let selected = self.argmax_normalized(0..users, &slot.rates);
                Ok(SlotDecision {
                    probe_order: (0..users).collect(),
                    probed_rates: slot.rates.clone(),
                    stop_index: users,
                    selected,
                    delivered_bits: transmit_fraction(users, beta) * slot.rates[selected],
                })
            }
            _ => Ok(self.run_probing_slot(pop, slot, beta, jm)),
        }
    }

    fn run_probing_slot(&mut self, pop: &UserPopulation, slot: &SlotRates, beta: f64, jm: usize) -> SlotDecision {
        let order = self.probe_order(pop);
        let model = pop.rate_model();
        let mut probed = Vec::with_capacity(jm);
        let mut rates = Vec::with_capacity(jm);
        let mut w = 0.0;
        let mut best = usize::MAX;
        loop {
            let user = order[probed.len()];
            let rate = slot.rates[user];
            let s = rate / self.throughputs[user];
            if best == usize::MAX || s > w || (s == w && user < best) {
                w = s;
                best = user;
            }
            probed.push(user);
            rates.push(rate);
            let j = probed.len();
            if j >= jm {
                break;
            }
            let next = order[j];
            let stop = match &self.kind {
                PolicyKind::JpsDynamic => {
                    let ctx = ProbeContext {
                        beta,
                        j,
                        j_max: jm,
                        w,
                        next_mean: pop.mean_rates()[next] / self.throughputs[next],
                    };
                    dynamic_should_stop(&ctx, model)
                }
                PolicyKind::JpsStatic(table) => table.should_stop(j, w),
                PolicyKind::Jlps => {
                    let learner = self.learner.as_ref().expect("checked by run_slot");
                    let e = learner.lookahead(next, self.throughputs[next], w);
                    (1.0 - j as f64 * beta) * w >= (1.0 - (j + 1) as f64 * beta) * e
                }
                _ => unreachable!("baselines handled in run_slot"),
            };
            if stop {
                break;
            }
        }
        if let Some(learner) = self.learner.as_mut() {
            for (&user, &rate) in probed.iter().zip(&rates) {
                learner.push(user, rate);
            }
        }
        let stop_index = probed.len();
        SlotDecision {
            probe_order: probed,
            probed_rates: rates,
            stop_index,
            selected: best,
            delivered_bits: transmit_fraction(stop_index, beta) * slot.rates[best],
        }
    }

    /// Initialization sweep of the learning scheduler: probe the next batch
    /// of never-probed users (as many as fit in a slot) and transmit to the
    /// best of them for the remainder of the slot.
    fn run_init_slot(&mut self, slot: &SlotRates, beta: f64) -> SlotDecision {
        let users = self.throughputs.len();
        let per_slot = j_max(usize::MAX, beta).max(1);
        let learner = self.learner.as_mut().expect("checked by run_slot");
        let start = learner.init_cursor;
        let end = (start + per_slot).min(users);
        let probed: Vec<usize> = (start..end).collect();
        let rates: Vec<f64> = probed.iter().map(|&k| slot.rates[k]).collect();
        for (&user, &rate) in probed.iter().zip(&rates) {
            learner.push(user, rate);
        }
        learner.init_cursor = end;
        learner.reset_pending = end >= users;
        let selected = self.argmax_normalized(start..end, &slot.rates);
        SlotDecision {
            stop_index: probed.len(),
            delivered_bits: transmit_fraction(probed.len(), beta) * slot.rates[selected],
            probe_order: probed,
            probed_rates: rates,
            selected,
        }
    }

    fn argmax_normalized(&self, users: impl Iterator<Item = usize>, rates: &[f64]) -> usize {
        let mut best = usize::MAX;
        let mut w = f64::NEG_INFINITY;
        for k in users {
            let s = rates[k] / self.throughputs[k];
            if s > w {
                w = s;
                best = k;
            }
        }
        best
    }

    /// Moving-average update `T_k(n) = (n-1)/n T_k(n-1) + B_k(n)/n` for every
    /// user, followed by the throughput floor.
    pub fn update_throughput(&mut self, decision: &SlotDecision, n: u64) {
        debug_assert!(n >= 1);
        let n = n as f64;
        let decay = (n - 1.0) / n;
        for (k, t) in self.throughputs.iter_mut().enumerate() {
            let bits = if k == decision.selected {
                decision.delivered_bits
            } else {
                0.0
            };
            *t = (decay * *t + bits / n).max(self.floors[k]);
        }
        if let Some(learner) = self.learner.as_mut() {
            if learner.reset_pending {
                learner.reset_pending = false;
                self.throughputs.iter_mut().for_each(|t| *t = 1.0);
            }
        }
    }
}

/// Fraction of the slot left for data after `probes` probes.
pub fn transmit_fraction(probes: usize, beta: f64) -> f64 {
    (1.0 - probes as f64 * beta).max(0.0)
}

/// Number of slots the learning scheduler's initialization sweep takes.
pub fn jlps_init_slots(users: usize, beta: f64) -> usize {
    users.div_ceil(j_max(usize::MAX, beta).max(1))
}

/// Runs the initialization sweep of the learning scheduler on slots
/// `1..=jlps_init_slots`, returning the ready state and the sweep's slots.
pub fn jlps_initialize(
    pop: &UserPopulation,
    beta: f64,
    stream: &mut ChannelStream,
) -> Result<(PolicyState, Vec<SlotDecision>), PolicyError> {
    let mut state = PolicyState::new(PolicyKind::Jlps, pop);
    let slots = jlps_init_slots(pop.count(), beta);
    let mut decisions = Vec::with_capacity(slots);
    for n in 1..=slots as u64 {
        let rates = sample_slot_rates(pop, stream, n);
        let d = state.run_slot(pop, &rates, beta)?;
        state.update_throughput(&d, n);
        decisions.push(d);
    }
    debug_assert!(state.learner().is_some_and(Learner::initialized));
    Ok((state, decisions))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexed_archive_matches_direct_sum() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut a = RateArchive::default();
        let mut plain = Vec::new();
        for i in 0..5_000 {
            let r = RateModel::Exponential.sample(&mut rng) * 3.0;
            a.push(r);
            plain.push(r);
            if i % 97 == 0 || i < 40 {
                for cut in [0.0, 0.3, 1.0, 2.9, 7.5, 100.0] {
                    let direct: f64 = plain.iter().map(|&x: &f64| x.max(cut)).sum();
                    assert!(
                        (a.sum_max(cut) - direct).abs() <= 1e-9 * direct,
                        "n={} cut={cut}",
                        i + 1
                    );
                }
            }
        }
        assert_eq!(a.rates, plain);
        // ties at the cut count once, at the cut value
        let mut t = RateArchive::default();
        for r in [1.0; 300] {
            t.push(r);
        }
        assert_eq!(t.sum_max(1.0), 300.0);
    }
    use crate::channel::RateModel;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pop(rates: &[f64]) -> UserPopulation {
        UserPopulation::new(rates.to_vec(), RateModel::Exponential).unwrap()
    }

    fn slot(rates: &[f64]) -> SlotRates {
        SlotRates {
            slot: 1,
            rates: rates.to_vec(),
        }
    }

    #[test]
    fn jps_probe_order() {
        let p = pop(&[1.0, 2.0, 3.0]);
        let s = PolicyState::new(PolicyKind::JpsDynamic, &p);
        assert_eq!(s.probe_order(&p), vec![2, 1, 0]);

        let p = pop(&[1.0, 2.0]);
        let mut s = PolicyState::new(PolicyKind::JpsDynamic, &p);
        s.set_throughputs(vec![2.0, 1.0]).unwrap();
        assert_eq!(s.probe_order(&p), vec![1, 0]);

        // ties keep ascending index
        let p = pop(&[1.0, 1.0, 1.0]);
        let s = PolicyState::new(PolicyKind::JpsDynamic, &p);
        assert_eq!(s.probe_order(&p), vec![0, 1, 2]);
    }

    #[test]
    fn jlps_probe_order_uses_empirical_means() {
        let p = pop(&[1.0, 1.0]);
        let mut s = PolicyState::new(PolicyKind::Jlps, &p);
        let l = s.learner.as_mut().unwrap();
        l.push(0, 2.0);
        l.push(1, 1.0);
        l.push(1, 5.0);
        l.init_cursor = 2;
        assert_abs_diff_eq!(l.mean_index(0, 1.0), 2.0);
        assert_abs_diff_eq!(l.mean_index(1, 1.0), 3.0);
        assert_eq!(s.probe_order(&p), vec![1, 0]);
    }

    #[test]
    fn dynamic_slot_stops_after_first_probe() {
        let p = pop(&[1.0, 1.0]);
        let mut s = PolicyState::new(PolicyKind::JpsDynamic, &p);
        let d = s.run_slot(&p, &slot(&[2.0, 0.5]), 0.1).unwrap();
        assert_eq!(d.stop_index, 1);
        assert_eq!(d.probe_order, vec![0]);
        assert_eq!(d.selected, 0);
        assert_abs_diff_eq!(d.delivered_bits, 1.8, epsilon = 1e-12);
    }

    #[test]
    fn dynamic_slot_continues_to_forced_stop() {
        let p = pop(&[1.0, 1.0]);
        let mut s = PolicyState::new(PolicyKind::JpsDynamic, &p);
        let d = s.run_slot(&p, &slot(&[1.0, 3.0]), 0.1).unwrap();
        assert_eq!(d.stop_index, 2);
        assert_eq!(d.probe_order, vec![0, 1]);
        assert_eq!(d.probed_rates, vec![1.0, 3.0]);
        assert_eq!(d.selected, 1);
        assert_abs_diff_eq!(d.delivered_bits, 2.4, epsilon = 1e-12);
    }

    #[test]
    fn probe_all_delivers_nothing_when_probing_fills_slot() {
        let p = pop(&[1.0; 20]);
        let mut s = PolicyState::new(PolicyKind::ProbeAllPf, &p);
        let rates: Vec<f64> = (0..20).map(|k| k as f64 + 0.5).collect();
        let d = s.run_slot(&p, &slot(&rates), 0.1).unwrap();
        assert_eq!(d.stop_index, 20);
        assert_eq!(d.selected, 19);
        assert_eq!(d.delivered_bits, 0.0);
    }

    #[test]
    fn baselines() {
        let p = pop(&[1.0, 1.0, 1.0]);
        let mut rr = PolicyState::new(PolicyKind::RoundRobin, &p);
        let picks: Vec<usize> = (0..4)
            .map(|_| rr.run_slot(&p, &slot(&[1.0, 9.0, 2.0]), 0.1).unwrap().selected)
            .collect();
        assert_eq!(picks, vec![0, 1, 2, 0]);

        let mut g = PolicyState::new(PolicyKind::GeniePf, &p);
        g.set_throughputs(vec![1.0, 10.0, 1.0]).unwrap();
        let d = g.run_slot(&p, &slot(&[1.0, 9.0, 2.0]), 0.1).unwrap();
        assert_eq!((d.selected, d.stop_index, d.delivered_bits), (2, 0, 2.0));
    }

    #[test]
    fn throughput_update_examples() {
        let p = pop(&[1.0, 1.0]);
        let mut s = PolicyState::new(PolicyKind::JpsDynamic, &p);
        let d = SlotDecision {
            probe_order: vec![0],
            probed_rates: vec![2.0],
            stop_index: 1,
            selected: 0,
            delivered_bits: 1.8,
        };
        s.update_throughput(&d, 1);
        assert_eq!(s.throughputs(), &[1.8, 1e-9]);

        s.set_throughputs(vec![1.8, 0.001]).unwrap();
        let d2 = SlotDecision {
            selected: 1,
            delivered_bits: 2.4,
            ..d.clone()
        };
        s.update_throughput(&d2, 2);
        assert_abs_diff_eq!(s.throughputs()[0], 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(s.throughputs()[1], 1.2005, epsilon = 1e-15);

        let t = vec![0.7, 0.4];
        s.set_throughputs(t.clone()).unwrap();
        let idle = SlotDecision {
            delivered_bits: 0.0,
            ..d
        };
        s.update_throughput(&idle, 5);
        assert_eq!(s.throughputs(), &[0.8 * 0.7, 0.8 * 0.4]);
    }

    #[test]
    fn jlps_initialization() {
        let mut stream = ChannelStream::new(1, 0);
        let p = pop(&[1.0; 20]);
        let (s, ds) = jlps_initialize(&p, 0.1, &mut stream).unwrap();
        assert_eq!(ds.len(), 2);
        assert!(ds.iter().all(|d| d.stop_index == 10));
        let l = s.learner().unwrap();
        assert!((0..20).all(|k| l.count(k) == 1));
        assert!(s.throughputs().iter().all(|&t| t == 1.0));

        let (s, ds) = jlps_initialize(&pop(&[1.0, 2.0, 3.0]), 0.1, &mut stream).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds[0].stop_index, 3);
        assert_abs_diff_eq!(ds[0].delivered_bits, 0.7 * ds[0].probed_rates[ds[0].selected]);
        assert!((0..3).all(|k| s.learner().unwrap().count(k) == 1));

        let (s, ds) = jlps_initialize(&pop(&[4.0]), 0.1, &mut stream).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(s.learner().unwrap().count(0), 1);
    }

    #[test]
    fn jlps_init_slots_cover_everyone() {
        assert_eq!(jlps_init_slots(20, 0.1), 2);
        assert_eq!(jlps_init_slots(3, 0.1), 1);
        // ceil(beta K) = 2 would leave one user unprobed here
        assert_eq!(jlps_init_slots(5, 0.4), 3);
    }

    #[test]
    fn jlps_stop_rule_uses_archive() {
        let p = pop(&[1.0, 1.0]);
        let mut s = PolicyState::new(PolicyKind::Jlps, &p);
        {
            let l = s.learner.as_mut().unwrap();
            l.push(0, 1.0);
            l.push(1, 1.0);
            l.init_cursor = 2;
        }
        // archive says the other user always yields 1.0; w = 2 stops
        let d = s.run_slot(&p, &slot(&[2.0, 0.1]), 0.1).unwrap();
        assert_eq!(d.stop_index, 1);
        assert_eq!(s.learner().unwrap().count(0), 2);
        assert_eq!(s.learner().unwrap().count(1), 1);
        // w = 0.5: 0.9 * 0.5 < 0.8 * 1.0, continue
        let d = s.run_slot(&p, &slot(&[0.5, 0.1]), 0.1).unwrap();
        assert_eq!(d.stop_index, 2);
        assert_eq!(d.selected, 0);
    }

    #[test]
    fn malformed_state_is_rejected() {
        let p = pop(&[1.0, 1.0]);
        let mut s = PolicyState::new(PolicyKind::JpsDynamic, &p);
        assert!(matches!(
            s.run_slot(&p, &slot(&[1.0]), 0.1),
            Err(PolicyError::UserCountMismatch { .. })
        ));
        assert!(s.set_throughputs(vec![1.0, 0.0]).is_err());
        let table = ThresholdTable::build(&RateModel::Exponential, 0.1, 20, 1.0).unwrap();
        let mut st = PolicyState::new(PolicyKind::JpsStatic(table), &p);
        assert!(matches!(
            st.run_slot(&p, &slot(&[1.0, 1.0]), 0.1),
            Err(PolicyError::TableMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn scale_invariance(
            seed in any::<u64>(),
            c in 0.01f64..100.0,
            t in proptest::collection::vec(0.05f64..5.0, 6),
        ) {
            let r = [1.0, 2.0, 0.5, 3.0, 1.5, 0.7];
            let p1 = pop(&r);
            let rs: Vec<f64> = r.iter().map(|x| x * c).collect();
            let p2 = pop(&rs);
            let mut a = PolicyState::new(PolicyKind::JpsDynamic, &p1);
            let mut b = PolicyState::new(PolicyKind::JpsDynamic, &p2);
            a.set_throughputs(t.clone()).unwrap();
            b.set_throughputs(t.iter().map(|x| x * c).collect()).unwrap();
            let s1 = sample_slot_rates(&p1, &mut ChannelStream::new(seed, 0), 1);
            let s2 = sample_slot_rates(&p2, &mut ChannelStream::new(seed, 0), 1);
            prop_assert_eq!(a.probe_order(&p1), b.probe_order(&p2));
            let d1 = a.run_slot(&p1, &s1, 0.1).unwrap();
            let d2 = b.run_slot(&p2, &s2, 0.1).unwrap();
            prop_assert_eq!(d1.probe_order, d2.probe_order);
            prop_assert_eq!(d1.stop_index, d2.stop_index);
            prop_assert_eq!(d1.selected, d2.selected);
        }

        #[test]
        fn selected_user_is_best_probed(seed in any::<u64>(), t in proptest::collection::vec(0.05f64..5.0, 8)) {
            let p = pop(&[1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0]);
            for kind in [PolicyKind::JpsDynamic, PolicyKind::ProbeAllPf] {
                let mut s = PolicyState::new(kind, &p);
                s.set_throughputs(t.clone()).unwrap();
                let rates = sample_slot_rates(&p, &mut ChannelStream::new(seed, 1), 3);
                let d = s.run_slot(&p, &rates, 0.1).unwrap();
                let best = d.probe_order.iter().map(|&k| rates.rates[k] / t[k]).fold(f64::MIN, f64::max);
                prop_assert_eq!(rates.rates[d.selected] / t[d.selected], best);
                prop_assert!(d.stop_index >= 1 && d.probe_order.contains(&d.selected));
            }
        }
    }
}
