//! The four subcommands. Each writes its files below `out` and returns
//! their paths relative to `out`, in the order written.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use probesched::analysis::{scheduling_gain_theorem4, theory_reports, write_gain_curves_csv, write_probe_probs_csv};
use probesched::sim::{
    run_experiment, sweep, write_sweep_csv, Experiment, ExperimentConfig, KappaMode, SimError, SweepVariable,
};
use probesched::stopping::ThresholdTable;
use serde::Serialize;

use crate::CliError;

/// `K` values of the theory gain curves unless the config sweeps `K`.
const DEFAULT_GAIN_CURVE_USERS: std::ops::RangeInclusive<usize> = 1..=30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Thresholds,
    Simulate,
    Theory,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Thresholds => "thresholds",
            Command::Simulate => "simulate",
            Command::Theory => "theory",
            Command::Sweep => "sweep",
        }
    }
}

pub fn run(command: Command, cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>, CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))?;
    let mut files = Files {
        root: out,
        written: Vec::new(),
    };
    match command {
        Command::Thresholds => thresholds(cfg, &mut files)?,
        Command::Simulate => simulate(cfg, &mut files)?,
        Command::Theory => theory(cfg, &mut files)?,
        Command::Sweep => run_sweep(cfg, &mut files)?,
    }
    Ok(files.written)
}

struct Files<'a> {
    root: &'a Path,
    written: Vec<String>,
}

impl Files<'_> {
    fn write(
        &mut self,
        rel: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
    ) -> Result<(), CliError> {
        let path = self.root.join(rel);
        let io_err = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err)?;
        }
        let mut w = BufWriter::new(File::create(&path).map_err(io_err)?);
        body(&mut w)?;
        w.flush().map_err(io_err)?;
        self.written.push(rel.to_string());
        Ok(())
    }

    fn csv(&mut self, rel: &str, body: impl FnOnce(&mut BufWriter<File>) -> csv::Result<()>) -> Result<(), CliError> {
        self.write(rel, |w| body(w).map_err(|e| CliError::Io(format!("{rel}: {e}"))))
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        self.write(rel, |w| {
            serde_json::to_writer_pretty(&mut *w, value)
                .map_err(std::io::Error::from)
                .and_then(|()| writeln!(w))
                .map_err(|e| CliError::Io(format!("{rel}: {e}")))
        })
    }
}

fn sim_error(e: SimError) -> CliError {
    match e {
        SimError::Config(m) => CliError::Usage(m),
        other => CliError::Compute(other.to_string()),
    }
}

#[derive(Serialize)]
struct ThresholdSummary<'a> {
    beta: f64,
    users: usize,
    j_max: usize,
    kappa: f64,
    kappa_source: &'a str,
    /// `v_j`, compared against `kappa * w`.
    thresholds: &'a [f64],
    /// `v_j / kappa`, compared against the normalized rate `w` itself.
    rate_thresholds: Vec<f64>,
}

fn thresholds(cfg: &ExperimentConfig, files: &mut Files) -> Result<(), CliError> {
    let compute = |e: &dyn std::fmt::Display| CliError::Compute(e.to_string());
    let (kappa, source) = match cfg.static_cfg.kappa_mode {
        KappaMode::Fixed(k) => (k, "fixed"),
        KappaMode::Theorem4 | KappaMode::Bootstrap => {
            let g = scheduling_gain_theorem4(&cfg.rate_model, cfg.beta, cfg.users, cfg.mc_samples, cfg.seed)
                .map_err(|e| compute(&e))?;
            (g.kappa, "theorem4")
        }
    };
    let table = ThresholdTable::build(&cfg.rate_model, cfg.beta, cfg.users, kappa).map_err(|e| compute(&e))?;
    let stages = &table.thresholds()[..table.j_max()];
    files.csv("thresholds.csv", |w| table.write_csv(w))?;
    files.json(
        "thresholds.json",
        &ThresholdSummary {
            beta: cfg.beta,
            users: cfg.users,
            j_max: table.j_max(),
            kappa,
            kappa_source: source,
            thresholds: stages,
            rate_thresholds: stages.iter().map(|v| v / kappa).collect(),
        },
    )
}

/// Per policy: replication-0 trajectories and histograms as CSV, the
/// all-replication aggregate as `summary.json`.
fn simulate(cfg: &ExperimentConfig, files: &mut Files) -> Result<(), CliError> {
    for policy in cfg.policy.to_vec() {
        let exp = Experiment::new(cfg, policy).map_err(sim_error)?;
        let (report, series) = run_experiment(&exp).map_err(sim_error)?;
        let first = &series[0];
        let dir = policy.name();
        files.csv(&format!("{dir}/throughput_traj.csv"), |w| first.throughput_traj_csv(w))?;
        files.csv(&format!("{dir}/utility_traj.csv"), |w| first.utility_traj_csv(w))?;
        files.csv(&format!("{dir}/probe_hist.csv"), |w| first.probe_hist_csv(w))?;
        files.csv(&format!("{dir}/selection.csv"), |w| first.selection_csv(w))?;
        files.json(&format!("{dir}/summary.json"), &report)?;
    }
    Ok(())
}

fn theory(cfg: &ExperimentConfig, files: &mut Files) -> Result<(), CliError> {
    let mut users: Vec<usize> = match &cfg.sweep {
        Some(s) if s.variable == SweepVariable::Users => s.values.iter().map(|&v| v as usize).collect(),
        _ => DEFAULT_GAIN_CURVE_USERS.collect(),
    };
    users.push(cfg.users);
    let mut reports = theory_reports(&cfg.rate_model, cfg.beta, &users, cfg.mc_samples, cfg.seed)
        .map_err(|e| CliError::Compute(e.to_string()))?;
    let main = reports.pop().expect("one report per user count");
    files.json("theory.json", &main)?;
    files.csv("probe_probs.csv", |w| write_probe_probs_csv(&main.probe_probs, w))?;
    files.csv("gain_curves.csv", |w| write_gain_curves_csv(&reports, w))
}

fn run_sweep(cfg: &ExperimentConfig, files: &mut Files) -> Result<(), CliError> {
    let spec = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Usage("the sweep command needs a `sweep` entry in the config".into()))?;
    // reject bad values before any long run starts
    for &v in &spec.values {
        cfg.with_value(spec.variable, v)
            .and_then(|c| c.validate())
            .map_err(sim_error)?;
    }
    let mut rows = Vec::new();
    for policy in cfg.policy.to_vec() {
        rows.extend(sweep(cfg, policy, spec.variable, &spec.values).map_err(sim_error)?);
    }
    files.csv("sweep.csv", |w| write_sweep_csv(&rows, w))
}
