//! Run traces and their CSV serialization.

use std::fmt::Write as _;

use nalgebra::DVector;

use crate::blocks::AgentState;

/// State norm above which a run is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Options shared by the centralized, distributed and double-loop runners.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Record every `record_every`-th iteration (the initial and final
    /// iterations are always recorded).
    pub record_every: usize,
    /// Reference point `χ⋆` for the optimality error.
    pub reference: Option<Vec<AgentState>>,
    /// Keep the stacked state and proxies in each record.
    pub record_states: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            record_every: 1,
            reference: None,
            record_states: true,
        }
    }
}

impl RunOptions {
    pub fn with_reference(reference: Vec<AgentState>) -> Self {
        Self {
            reference: Some(reference),
            ..Self::default()
        }
    }

    pub(crate) fn should_record(&self, t: usize, horizon: usize) -> bool {
        t == 0 || t == horizon || t.is_multiple_of(self.record_every.max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: usize,
    /// `‖χ − χ⋆‖`, NaN without a reference.
    pub opt_err: f64,
    /// `‖x − x⋆‖` on the decision part only, NaN without a reference.
    pub out_err: f64,
    /// `‖α̂ − 1α(χ)‖` over all agents and components.
    pub track_err: f64,
    /// `‖[Σ_i(A_i x_i − b_i)]_+‖`, zero for unconstrained setups.
    pub constr_res: f64,
    pub lambda_neg: bool,
    /// Stacked `χ`, empty unless states are recorded.
    pub chi: DVector<f64>,
    /// Stacked proxies (agent-major, component-minor), empty unless recorded.
    pub proxies: DVector<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    /// Iteration at which a divergence event truncated the run.
    pub diverged_at: Option<usize>,
    pub warnings: Vec<String>,
}

impl RunTrace {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn first(&self) -> Option<&TraceRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// CSV with header `t,opt_err,track_err,constr_res,lambda_neg`, followed by
    /// `chi_k` and `proxy_k` columns when `with_states` is set.
    pub fn to_csv(&self, with_states: bool) -> String {
        let mut out = String::from("t,opt_err,track_err,constr_res,lambda_neg");
        let (n_chi, n_proxy) = self
            .records
            .first()
            .map(|r| (r.chi.len(), r.proxies.len()))
            .unwrap_or((0, 0));
        if with_states {
            for k in 0..n_chi {
                let _ = write!(out, ",chi_{k}");
            }
            for k in 0..n_proxy {
                let _ = write!(out, ",proxy_{k}");
            }
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(
                out,
                "{},{:e},{:e},{:e},{}",
                r.t,
                r.opt_err,
                r.track_err,
                r.constr_res,
                u8::from(r.lambda_neg)
            );
            if with_states {
                for v in r.chi.iter().chain(r.proxies.iter()) {
                    let _ = write!(out, ",{v:e}");
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Stacks per-agent states as `col(x_1, λ_1, …, x_N, λ_N)`.
pub fn stack_states(state: &[AgentState]) -> DVector<f64> {
    let parts: Vec<DVector<f64>> = state.iter().map(AgentState::to_vector).collect();
    crate::problem::stack(&parts)
}

pub(crate) fn state_distance(a: &[AgentState], b: &[AgentState]) -> (f64, f64) {
    let mut full = 0.0;
    let mut primal = 0.0;
    for (sa, sb) in a.iter().zip(b) {
        let dx = (&sa.x - &sb.x).norm_squared();
        primal += dx;
        full += dx;
        if let (Some(la), Some(lb)) = (&sa.lambda, &sb.lambda) {
            full += (la - lb).norm_squared();
        }
    }
    (full.sqrt(), primal.sqrt())
}

pub(crate) fn is_finite_state(state: &[AgentState]) -> bool {
    state.iter().all(|s| {
        s.x.iter().all(|v| v.is_finite())
            && s.lambda
                .as_ref()
                .is_none_or(|l| l.iter().all(|v| v.is_finite()))
    })
}

pub fn state_norm(state: &[AgentState]) -> f64 {
    stack_states(state).norm()
}
