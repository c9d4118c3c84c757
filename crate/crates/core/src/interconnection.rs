//! Interconnection of a centralized block with consensus trackers.
//!
//! The assembled algorithm updates, for every agent simultaneously,
//! `χ_i⁺ = χ_i + δ(g_i(χ_i, α̂_i) − χ_i)` and `z⁺ = h(χ, z)`, where each
//! aggregate component is estimated by its own tracker fed with the scaled
//! local signals of the current state.

use std::sync::Arc;

use log::warn;
use nalgebra::DVector;
use rayon::prelude::*;

use crate::blocks::{exact_aggregate, record, AgentState, Aggregation, Block};
use crate::error::{Error, Result};
use crate::graph::Network;
use crate::trace::{is_finite_state, state_norm, RunOptions, RunTrace, DIVERGENCE_THRESHOLD};
use crate::trackers::{Tracker, TrackerKind, TrackerState};

/// Binds one aggregate component to a tracker stream. `scaling` multiplies
/// the local signal before it enters the tracker; it must be `N` for sum
/// components and `1` for mean components, since trackers estimate means.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerBinding {
    pub component: String,
    pub dim: usize,
    pub scaling: f64,
    pub tracker: TrackerKind,
}

/// Correctly scaled bindings using the same tracker kind for every component.
pub fn default_bindings(block: &Block, kind: TrackerKind) -> Vec<TrackerBinding> {
    let n = block.n_agents() as f64;
    block
        .signature()
        .into_iter()
        .map(|c| TrackerBinding {
            component: c.name.to_string(),
            dim: c.dim,
            scaling: match c.aggregation {
                Aggregation::Sum => n,
                Aggregation::Mean => 1.0,
            },
            tracker: kind,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct AssemblyConfig {
    pub delta: f64,
    pub block: Block,
    pub bindings: Vec<TrackerBinding>,
    pub network: Arc<Network>,
}

/// Joint state of the slow (block) and fast (tracker) subsystems.
#[derive(Debug, Clone, PartialEq)]
pub struct DistState {
    pub chi: Vec<AgentState>,
    /// One tracker state per aggregate component.
    pub trackers: Vec<TrackerState>,
}

impl DistState {
    /// Overwrites every private variable of `agent` (block and tracker state)
    /// with `value`. Used to check that updates are local.
    pub fn poison_agent(&mut self, agent: usize, value: f64) {
        let chi = &mut self.chi[agent];
        chi.x.fill(value);
        if let Some(l) = chi.lambda.as_mut() {
            l.fill(value);
        }
        for t in &mut self.trackers {
            match t {
                TrackerState::Perturbed { z } => z[agent].fill(value),
                TrackerState::PiDac { p, q } => {
                    p[agent].fill(value);
                    q[agent].fill(value);
                }
                TrackerState::RAdmm { z } => z[agent].iter_mut().for_each(|e| e.fill(value)),
                TrackerState::Exact => {}
            }
        }
    }

    /// All private variables of `agent`, stacked.
    pub fn agent_view(&self, agent: usize) -> DVector<f64> {
        let mut parts = vec![self.chi[agent].to_vector()];
        parts.extend(self.trackers.iter().map(|t| t.agent_part(agent)));
        crate::problem::stack(&parts)
    }
}

/// Signals and proxies of one evaluation, indexed `[component][agent]`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub signals: Vec<Vec<DVector<f64>>>,
    pub proxies: Vec<Vec<DVector<f64>>>,
}

impl Evaluation {
    /// Proxies of one agent, in component order.
    pub fn agent_proxies(&self, agent: usize) -> Vec<DVector<f64>> {
        self.proxies.iter().map(|p| p[agent].clone()).collect()
    }

    /// Stacked proxies, agent-major and component-minor.
    pub fn stacked_proxies(&self) -> DVector<f64> {
        let n = self.proxies.first().map_or(0, |p| p.len());
        let parts: Vec<_> = (0..n).flat_map(|i| self.agent_proxies(i)).collect();
        crate::problem::stack(&parts)
    }
}

#[derive(Debug, Clone)]
pub struct DistributedAlgorithm {
    pub delta: f64,
    pub block: Block,
    pub trackers: Vec<Tracker>,
    pub scalings: Vec<f64>,
}

/// Validates the bindings against the block signature and builds the stepper.
pub fn assemble(config: AssemblyConfig) -> Result<DistributedAlgorithm> {
    let AssemblyConfig {
        delta,
        block,
        bindings,
        network,
    } = config;
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::InvalidParameter(format!("delta must lie in [0, 1], got {delta}")));
    }
    let n = block.n_agents();
    if network.n_agents() != n {
        return Err(Error::DimensionMismatch {
            context: "network size",
            expected: n,
            got: network.n_agents(),
        });
    }
    let signature = block.signature();
    if bindings.len() != signature.len() {
        let component = signature
            .get(bindings.len())
            .map_or_else(|| bindings[signature.len()].component.clone(), |c| c.name.to_string());
        return Err(Error::SignatureMismatch {
            component,
            reason: format!(
                "block has {} aggregate components, {} bindings given",
                signature.len(),
                bindings.len()
            ),
        });
    }
    let mut trackers = Vec::with_capacity(bindings.len());
    let mut scalings = Vec::with_capacity(bindings.len());
    for (spec, binding) in signature.iter().zip(&bindings) {
        let mismatch = |reason: String| Error::SignatureMismatch {
            component: spec.name.to_string(),
            reason,
        };
        if binding.component != spec.name {
            return Err(mismatch(format!("binding is named `{}`", binding.component)));
        }
        if binding.dim != spec.dim {
            return Err(mismatch(format!(
                "dimension {} bound, block expects {}",
                binding.dim, spec.dim
            )));
        }
        let expected = match spec.aggregation {
            Aggregation::Sum => n as f64,
            Aggregation::Mean => 1.0,
        };
        if (binding.scaling - expected).abs() > 1e-12 * expected {
            return Err(mismatch(format!(
                "{:?} component needs scaling {expected}, got {}",
                spec.aggregation, binding.scaling
            )));
        }
        trackers.push(Tracker::new(binding.tracker, network.clone(), spec.dim)?);
        scalings.push(binding.scaling);
    }
    Ok(DistributedAlgorithm {
        delta,
        block,
        trackers,
        scalings,
    })
}

impl DistributedAlgorithm {
    pub fn n_agents(&self) -> usize {
        self.block.n_agents()
    }

    /// Block zero initialization and zero tracker states.
    pub fn initial_state(&self) -> DistState {
        DistState {
            chi: self.block.initial_state(),
            trackers: self.trackers.iter().map(Tracker::initial_state).collect(),
        }
    }

    /// Scaled local signals and the proxies read from the current tracker
    /// state. Outer components use the agent's own proxies of the preceding
    /// components.
    pub fn evaluate(&self, state: &DistState) -> Result<Evaluation> {
        self.block.validate_state(&state.chi)?;
        let n = self.n_agents();
        let mut signals = Vec::with_capacity(self.trackers.len());
        let mut proxies: Vec<Vec<DVector<f64>>> = Vec::with_capacity(self.trackers.len());
        for (k, (tracker, scaling)) in self.trackers.iter().zip(&self.scalings).enumerate() {
            let u = (0..n)
                .map(|i| {
                    let preceding: Vec<_> = proxies.iter().map(|p| p[i].clone()).collect();
                    Ok(self.block.local_signal(k, i, &state.chi[i], &preceding)? * *scaling)
                })
                .collect::<Result<Vec<_>>>()?;
            proxies.push(tracker.proxies(&state.trackers[k], &u)?);
            signals.push(u);
        }
        Ok(Evaluation { signals, proxies })
    }

    fn advance_trackers(&self, state: &DistState, eval: &Evaluation) -> Result<Vec<TrackerState>> {
        self.trackers
            .iter()
            .zip(&state.trackers)
            .zip(&eval.signals)
            .map(|((t, z), u)| t.step(z, u))
            .collect()
    }

    /// One synchronous round. A non-finite result is reported as
    /// [`Error::Diverged`] with iteration 0.
    pub fn step(&self, state: &DistState) -> Result<DistState> {
        let eval = self.evaluate(state)?;
        let chi = state
            .chi
            .iter()
            .enumerate()
            .map(|(i, chi)| {
                let g = self.block.local_step(i, chi, &eval.agent_proxies(i))?;
                let mix = |a: &DVector<f64>, b: DVector<f64>| a * (1.0 - self.delta) + b * self.delta;
                Ok(AgentState {
                    x: mix(&chi.x, g.x),
                    lambda: match (&chi.lambda, g.lambda) {
                        (Some(l), Some(gl)) => Some(mix(l, gl)),
                        _ => None,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let trackers = self.advance_trackers(state, &eval)?;
        let next = DistState { chi, trackers };
        if !is_finite_state(&next.chi) {
            return Err(Error::Diverged { iteration: 0 });
        }
        Ok(next)
    }

    /// `‖α̂ − 1α(χ)‖` over all agents and components.
    pub fn tracking_error(&self, state: &DistState, eval: &Evaluation) -> Result<f64> {
        let exact = exact_aggregate(&self.block, &state.chi)?;
        let mut total = 0.0;
        for (proxies, value) in eval.proxies.iter().zip(&exact.components) {
            total += proxies.iter().map(|p| (p - value).norm_squared()).sum::<f64>();
        }
        Ok(total.sqrt())
    }

    fn snapshot(&self, t: usize, state: &DistState, opts: &RunOptions) -> Result<crate::trace::TraceRecord> {
        let eval = self.evaluate(state)?;
        let track = self.tracking_error(state, &eval)?;
        Ok(record(&self.block, t, &state.chi, Some(eval.stacked_proxies()), track, opts))
    }

    /// Iterates the assembled algorithm. A divergence event (non-finite state
    /// or state norm above the threshold) truncates the trace and sets
    /// `diverged_at`.
    pub fn run(&self, init: &DistState, horizon: usize, opts: &RunOptions) -> Result<RunTrace> {
        self.block.validate_init(&init.chi)?;
        let mut trace = RunTrace::default();
        let mut state = init.clone();
        trace.records.push(self.snapshot(0, &state, opts)?);
        for t in 1..=horizon {
            state = match self.step(&state) {
                Ok(s) => s,
                Err(Error::Diverged { .. }) => {
                    trace.diverged_at = Some(t);
                    break;
                }
                Err(e) => return Err(e),
            };
            if state_norm(&state.chi) > DIVERGENCE_THRESHOLD {
                trace.diverged_at = Some(t);
                break;
            }
            if opts.should_record(t, horizon) {
                trace.records.push(self.snapshot(t, &state, opts)?);
            }
        }
        Ok(trace)
    }

    /// Double-loop reference: with `χ` frozen, iterate the trackers (warm
    /// started) until the tracking error is at most `inner_tol` or
    /// `inner_iters` rounds have run, then take one full block step with the
    /// resulting proxies. An unmet tolerance is recorded as a warning.
    pub fn run_double_loop(
        &self,
        init: &DistState,
        inner_iters: usize,
        inner_tol: f64,
        outer_iters: usize,
        opts: &RunOptions,
    ) -> Result<RunTrace> {
        self.block.validate_init(&init.chi)?;
        let mut trace = RunTrace::default();
        let mut state = init.clone();
        trace.records.push(self.snapshot(0, &state, opts)?);
        for t in 1..=outer_iters {
            let mut eval = self.evaluate(&state)?;
            let mut rounds = 0;
            while rounds < inner_iters && self.tracking_error(&state, &eval)? > inner_tol {
                state.trackers = self.advance_trackers(&state, &eval)?;
                eval = self.evaluate(&state)?;
                rounds += 1;
            }
            let err = self.tracking_error(&state, &eval)?;
            if inner_iters > 0 && err > inner_tol {
                let msg = format!("outer step {t}: inner loop stopped at tracking error {err:e}");
                warn!("{msg}");
                trace.warnings.push(msg);
            }
            state.chi = state
                .chi
                .iter()
                .enumerate()
                .map(|(i, chi)| self.block.local_step(i, chi, &eval.agent_proxies(i)))
                .collect::<Result<Vec<_>>>()?;
            if !is_finite_state(&state.chi) || state_norm(&state.chi) > DIVERGENCE_THRESHOLD {
                trace.diverged_at = Some(t);
                break;
            }
            if opts.should_record(t, outer_iters) {
                trace.records.push(self.snapshot(t, &state, opts)?);
            }
        }
        Ok(trace)
    }
}

/// Whether a trace counts as converging: no divergence event and a final
/// optimality error at most `ratio` times the initial one. Without a
/// reference only the divergence flag is used.
pub fn trace_converged(trace: &RunTrace, ratio: f64) -> bool {
    if trace.diverged() {
        return false;
    }
    match (trace.first(), trace.last()) {
        (Some(a), Some(b)) if a.opt_err.is_finite() && b.opt_err.is_finite() => {
            b.opt_err <= ratio * a.opt_err
        }
        _ => true,
    }
}

/// Result of the empirical stability probe over a grid of gains.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaProbe {
    /// `(δ, converged)` in grid order.
    pub results: Vec<(f64, bool)>,
    /// Largest grid value whose run converged.
    pub largest_converging: Option<f64>,
}

/// Empirical, non-certified probe of the admissible gain range: runs the
/// algorithm built by `build` for every `δ` in `grid` (in parallel) and
/// reports which runs converge in the sense of [`trace_converged`].
pub fn estimate_delta_bar<F>(
    build: F,
    grid: &[f64],
    horizon: usize,
    opts: &RunOptions,
    ratio: f64,
) -> Result<DeltaProbe>
where
    F: Fn(f64) -> Result<DistributedAlgorithm> + Sync,
{
    let results = grid
        .par_iter()
        .map(|&delta| {
            let alg = build(delta)?;
            let trace = alg.run(&alg.initial_state(), horizon, opts)?;
            Ok((delta, trace_converged(&trace, ratio)))
        })
        .collect::<Result<Vec<_>>>()?;
    let largest_converging = results
        .iter()
        .filter(|(_, ok)| *ok)
        .map(|(d, _)| *d)
        .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))));
    Ok(DeltaProbe {
        results,
        largest_converging,
    })
}
