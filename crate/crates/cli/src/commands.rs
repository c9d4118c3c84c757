use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use distmeta::blocks::{run_centralized, AgentState, Setup};
use distmeta::diagnostics::{
    cc_error_samples, fit_linear_rate, reference_solution, reference_states, RateFit,
};
use distmeta::instance::write_instance;
use distmeta::interconnection::{default_bindings, trace_converged};
use distmeta::trace::{RunOptions, RunTrace};
use distmeta::trackers::{pi_dac_spectral_radius, TrackerKind};
use log::{info, warn};
use rayon::prelude::*;

use crate::experiment::{build_network, build_setup, load_config, output_dir, Experiment};
use crate::{CliError, Overrides, Status};

/// Final-to-initial optimality error ratio below which a run counts as
/// converged. Runs that neither converge nor diverge are reported as stalled.
pub const CONVERGED_RATIO: f64 = 1e-3;

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| CliError::Io { path, source })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn run_options(exp: &Experiment, reference: Vec<AgentState>) -> RunOptions {
    RunOptions {
        record_every: exp.config.record_every,
        reference: Some(reference),
        record_states: exp.config.record_states,
    }
}

/// Relative error below which records are treated as round-off floor and
/// left out of the rate fit.
const FIT_FLOOR: f64 = 1e-10;

/// Log-error slope over the tail half of the optimality error, ignoring
/// records at the round-off floor. `None` with fewer than two usable records.
fn tail_fit(trace: &RunTrace) -> Option<RateFit> {
    let floor = FIT_FLOOR * trace.first()?.opt_err;
    let usable: Vec<_> = trace.records.iter().take_while(|r| r.opt_err > floor).collect();
    let ts: Vec<f64> = usable.iter().map(|r| r.t as f64).collect();
    let es: Vec<f64> = usable.iter().map(|r| r.opt_err).collect();
    fit_linear_rate(&ts, &es, 0.5).ok()
}

fn grew(trace: &RunTrace) -> bool {
    match (trace.first(), trace.last()) {
        (Some(a), Some(b)) => b.opt_err > a.opt_err,
        _ => false,
    }
}

fn opt_or_nan(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), |x| format!("{x:e}"))
}

/// Disagreement-coordinate tracker error of the constraint-coupled setup
/// with perturbed trackers, sampled at the trace cadence.
fn error_coordinates_csv(exp: &Experiment, delta: f64, reference: &[AgentState]) -> Result<Option<String>, CliError> {
    let Setup::ConstraintCoupled(problem) = &exp.block.setup else {
        return Ok(None);
    };
    if exp.config.tracker != TrackerKind::Perturbed {
        return Ok(None);
    }
    let alg = exp.algorithm(delta)?;
    let samples = cc_error_samples(&alg, problem, reference, exp.config.horizon, exp.config.record_every)?;
    let mut out = String::from("t,opt_err,tracker_err\n");
    for (t, opt, trk) in samples {
        let _ = writeln!(out, "{t},{opt:e},{trk:e}");
    }
    Ok(Some(out))
}

/// Runs the configured experiment once and writes `trace.csv`,
/// `instance.txt`, `solution.txt`, `summary.txt` and, for the
/// constraint-coupled setup with perturbed trackers, `error_coordinates.csv`.
pub fn cmd_run(config_path: &Path, overrides: &Overrides) -> Result<Status, CliError> {
    let cfg = load_config(config_path, overrides)?;
    let delta = cfg.delta.ok_or_else(|| CliError::Config {
        line: 0,
        msg: "[run] delta is required for `run`".into(),
    })?;
    let dir = output_dir(config_path, &cfg, overrides);
    let exp = Experiment::build(cfg)?;
    let alg = exp.algorithm(delta)?;
    let solution = reference_solution(&exp.block.setup)?;
    let reference = reference_states(&exp.block.setup)?;
    info!("running {} with delta {delta} for {} steps", exp.block.name(), exp.config.horizon);
    let trace = alg.run(&alg.initial_state(), exp.config.horizon, &run_options(&exp, reference.clone()))?;

    create_dir(&dir)?;
    write_file(&dir, "trace.csv", &trace.to_csv(exp.config.record_states))?;
    write_file(&dir, "instance.txt", &write_instance(&exp.block.setup)?)?;
    write_file(&dir, "solution.txt", &solution.to_text())?;
    if let Some(csv) = error_coordinates_csv(&exp, delta, &reference)? {
        write_file(&dir, "error_coordinates.csv", &csv)?;
    }

    let status = if trace.diverged() || grew(&trace) {
        Status::Diverged
    } else {
        Status::Converged
    };
    let fit = tail_fit(&trace);
    let first = trace.first().expect("trace holds the initial record");
    let last = trace.last().expect("trace holds the initial record");
    let mut summary = String::new();
    let _ = writeln!(summary, "setup = {}", exp.block.name());
    let _ = writeln!(summary, "agents = {}", exp.block.n_agents());
    let _ = writeln!(summary, "delta = {delta}");
    let _ = writeln!(summary, "horizon = {}", exp.config.horizon);
    let _ = writeln!(summary, "diverged_at = {}", trace.diverged_at.map_or("none".into(), |t| t.to_string()));
    let _ = writeln!(summary, "initial_opt_err = {:e}", first.opt_err);
    let _ = writeln!(summary, "final_t = {}", last.t);
    let _ = writeln!(summary, "final_opt_err = {:e}", last.opt_err);
    let _ = writeln!(summary, "final_track_err = {:e}", last.track_err);
    let _ = writeln!(summary, "final_constr_res = {:e}", last.constr_res);
    let _ = writeln!(summary, "fitted_slope = {}", opt_or_nan(fit.map(|f| f.slope)));
    let _ = writeln!(summary, "fitted_r_squared = {}", opt_or_nan(fit.map(|f| f.r_squared)));
    let _ = writeln!(
        summary,
        "status = {}",
        match status {
            Status::Diverged => "diverged",
            Status::Converged if trace_converged(&trace, CONVERGED_RATIO) => "converged",
            Status::Converged => "stalled",
        }
    );
    write_file(&dir, "summary.txt", &summary)?;
    for w in &trace.warnings {
        warn!("{w}");
    }
    Ok(status)
}

/// Runs one distributed trace per gain (in parallel) plus the centralized
/// reference, and writes the traces, `sweep.csv` and `sweep_errors.csv`.
/// Completed traces are written even when a later run fails.
pub fn cmd_sweep(config_path: &Path, overrides: &Overrides) -> Result<Status, CliError> {
    let cfg = load_config(config_path, overrides)?;
    if cfg.deltas.len() < 2 {
        return Err(CliError::Config {
            line: 0,
            msg: format!("[run] deltas needs at least two values, got {}", cfg.deltas.len()),
        });
    }
    let dir = output_dir(config_path, &cfg, overrides);
    let exp = Experiment::build(cfg)?;
    let reference = reference_states(&exp.block.setup)?;
    let opts = run_options(&exp, reference);
    let horizon = exp.config.horizon;
    let centralized = run_centralized(&exp.block, &exp.block.initial_state(), horizon, &opts)?;
    let results: Vec<Result<RunTrace, CliError>> = exp
        .config
        .deltas
        .par_iter()
        .map(|&delta| {
            let alg = exp.algorithm(delta)?;
            Ok(alg.run(&alg.initial_state(), horizon, &opts)?)
        })
        .collect();

    create_dir(&dir)?;
    let with_states = exp.config.record_states;
    write_file(&dir, "trace_centralized.csv", &centralized.to_csv(with_states))?;
    let mut table = String::from("run,delta,converged,diverged_at,slope,final_error\n");
    let row = |out: &mut String, run: &str, delta: &str, trace: &RunTrace| {
        let fit = tail_fit(trace);
        let _ = writeln!(
            out,
            "{run},{delta},{},{},{},{:e}",
            u8::from(trace_converged(trace, CONVERGED_RATIO)),
            trace.diverged_at.map_or(String::new(), |t| t.to_string()),
            opt_or_nan(fit.map(|f| f.slope)),
            trace.last().map_or(f64::NAN, |r| r.opt_err),
        );
    };
    row(&mut table, "centralized", "", &centralized);
    let mut first_error = None;
    let mut traces = Vec::new();
    for (delta, result) in exp.config.deltas.iter().zip(results) {
        match result {
            Ok(trace) => {
                write_file(&dir, &format!("trace_delta_{delta}.csv"), &trace.to_csv(with_states))?;
                row(&mut table, "distributed", &delta.to_string(), &trace);
                traces.push((*delta, trace));
            }
            Err(e) => {
                warn!("delta {delta}: {e}");
                first_error.get_or_insert(e);
            }
        }
    }
    write_file(&dir, "sweep.csv", &table)?;

    let mut errors = String::from("t,centralized");
    for (delta, _) in &traces {
        let _ = write!(errors, ",delta_{delta}");
    }
    errors.push('\n');
    for (k, rec) in centralized.records.iter().enumerate() {
        let _ = write!(errors, "{},{:e}", rec.t, rec.opt_err);
        for (_, trace) in &traces {
            match trace.records.get(k) {
                Some(r) => {
                    let _ = write!(errors, ",{:e}", r.opt_err);
                }
                None => errors.push(','),
            }
        }
        errors.push('\n');
    }
    write_file(&dir, "sweep_errors.csv", &errors)?;

    if let Some(e) = first_error {
        return Err(e);
    }
    let any_converged = traces.iter().any(|(_, t)| trace_converged(t, CONVERGED_RATIO));
    Ok(if any_converged { Status::Converged } else { Status::Diverged })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Check {
    Pass(String),
    Fail(String),
    Skipped(String),
}

/// Dry-run checks of a configuration, in a fixed order.
pub fn validation_checks(config_path: &Path, overrides: &Overrides) -> Vec<(&'static str, Check)> {
    let mut checks = Vec::new();
    let cfg = match load_config(config_path, overrides) {
        Ok(c) => {
            checks.push(("config", Check::Pass(config_path.display().to_string())));
            c
        }
        Err(e) => {
            checks.push(("config", Check::Fail(e.to_string())));
            return checks;
        }
    };
    let gains = cfg.delta.is_some() || !cfg.deltas.is_empty();
    checks.push((
        "gain",
        if gains {
            Check::Pass(format!("delta {:?}, sweep {:?}", cfg.delta, cfg.deltas))
        } else {
            Check::Fail("neither [run] delta nor [run] deltas is set".into())
        },
    ));

    let setup = match build_setup(&cfg) {
        Ok(s) => {
            checks.push(("problem instance", Check::Pass(format!("{:?}", cfg.setup))));
            Some(s)
        }
        Err(e) => {
            checks.push(("problem instance", Check::Fail(e.to_string())));
            None
        }
    };
    let coupling = setup.as_ref().and_then(|s| match s {
        Setup::ConstraintCoupled(p) => Some(distmeta::problem::HasCoupling::coupling(p.as_ref()).clone()),
        Setup::Game(g) => Some(distmeta::problem::HasCoupling::coupling(g.as_ref()).clone()),
        _ => None,
    });
    checks.push((
        "coupling rank",
        match (&setup, coupling) {
            (None, _) => Check::Skipped("no instance".into()),
            (Some(_), None) => Check::Skipped("setup has no coupling constraint".into()),
            (Some(_), Some(c)) if c.is_full_row_rank() => {
                Check::Pass(format!("smallest singular value {:.3e}", c.smallest_singular_value()))
            }
            (Some(_), Some(c)) => {
                Check::Fail(format!("smallest singular value {:.3e}", c.smallest_singular_value()))
            }
        },
    ));

    let n_agents = setup
        .as_ref()
        .map_or(cfg.agents, |s| distmeta::blocks::Block::new(s.clone(), cfg.block).n_agents());
    let network = match build_network(&cfg, n_agents) {
        Ok(n) => {
            checks.push((
                "graph connectivity",
                Check::Pass(format!("{} agents, {} edges", n.n_agents(), n.graph.edges().len())),
            ));
            Some(n)
        }
        Err(e) => {
            checks.push(("graph connectivity", Check::Fail(e.to_string())));
            None
        }
    };

    checks.push((
        "tracker spectral gate",
        match (&network, cfg.tracker) {
            (None, _) => Check::Skipped("no graph".into()),
            (Some(n), TrackerKind::PiDac(p)) => {
                let radius = pi_dac_spectral_radius(&n.weights, &p);
                if radius < 1.0 {
                    Check::Pass(format!("spectral radius {radius:.6}"))
                } else {
                    Check::Fail(format!("spectral radius {radius:.6} is not below 1"))
                }
            }
            (Some(_), kind) => Check::Skipped(format!("{kind:?} tracker has no gate")),
        },
    ));

    checks.push((
        "aggregate binding signature",
        match (&setup, &network) {
            (Some(s), Some(n)) => {
                let block = distmeta::blocks::Block::new(s.clone(), cfg.block);
                let bindings = default_bindings(&block, cfg.tracker);
                let names: Vec<String> = bindings.iter().map(|b| b.component.clone()).collect();
                match distmeta::interconnection::assemble(distmeta::interconnection::AssemblyConfig {
                    delta: cfg.delta.unwrap_or(0.0),
                    block,
                    bindings,
                    network: n.clone(),
                }) {
                    Ok(_) => Check::Pass(names.join(", ")),
                    Err(e) => Check::Fail(e.to_string()),
                }
            }
            _ => Check::Skipped("needs instance and graph".into()),
        },
    ));
    checks
}

/// Prints the checklist; fails listing every failed check.
pub fn cmd_validate(config_path: &Path, overrides: &Overrides) -> Result<Status, CliError> {
    let checks = validation_checks(config_path, overrides);
    let mut failed = Vec::new();
    for (name, check) in &checks {
        match check {
            Check::Pass(d) => println!("[ok]   {name}: {d}"),
            Check::Skipped(d) => println!("[skip] {name}: {d}"),
            Check::Fail(d) => {
                println!("[FAIL] {name}: {d}");
                failed.push(format!("{name}: {d}"));
            }
        }
    }
    if failed.is_empty() {
        Ok(Status::Converged)
    } else {
        Err(CliError::Validation(failed))
    }
}

/// Output directory a command would use, for reporting.
pub fn resolved_output_dir(config_path: &Path, overrides: &Overrides) -> Option<PathBuf> {
    load_config(config_path, overrides)
        .ok()
        .map(|cfg| output_dir(config_path, &cfg, overrides))
}
