//! Centralized optimization blocks.
//!
//! A block is a per-agent map `g_i(χ_i, α)` driven by an aggregate `α(χ)`.
//! Each setup declares an ordered aggregation signature; every component is
//! either the mean or the sum over agents of a local signal. Outer components
//! have signals that depend on the agent's estimate of the preceding (inner)
//! components, which is how nested aggregates such as `Σ_j ∇f_j(mean χ)` are
//! expressed.

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};
use crate::problem::{
    AggregativeGame, AggregativeProblem, ConsensusProblem, ConstraintCoupledProblem,
    HasAggregation, HasCoupling,
};
use crate::trace::{
    is_finite_state, stack_states, state_distance, state_norm, RunOptions, RunTrace, TraceRecord,
    DIVERGENCE_THRESHOLD,
};

/// Local state `χ_i`: decision estimate plus, for constrained setups, a
/// multiplier estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub x: DVector<f64>,
    pub lambda: Option<DVector<f64>>,
}

impl AgentState {
    pub fn primal(x: DVector<f64>) -> Self {
        Self { x, lambda: None }
    }

    pub fn primal_dual(x: DVector<f64>, lambda: DVector<f64>) -> Self {
        Self {
            x,
            lambda: Some(lambda),
        }
    }

    pub fn dim(&self) -> usize {
        self.x.len() + self.lambda.as_ref().map_or(0, |l| l.len())
    }

    /// `col(x_i, λ_i)`.
    pub fn to_vector(&self) -> DVector<f64> {
        match &self.lambda {
            Some(l) => crate::problem::stack(&[self.x.clone(), l.clone()]),
            None => self.x.clone(),
        }
    }

    fn lambda(&self) -> Result<&DVector<f64>> {
        self.lambda
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("state has no multiplier".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockParams {
    pub gamma: f64,
    pub nu: f64,
    pub rho: f64,
}

impl BlockParams {
    pub fn new(gamma: f64, nu: f64, rho: f64) -> Result<Self> {
        for (name, v) in [("gamma", gamma), ("nu", nu), ("rho", rho)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self { gamma, nu, rho })
    }
}

impl Default for BlockParams {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            nu: 1.0,
            rho: 0.9,
        }
    }
}

/// Values of the aggregation components, in signature order.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub components: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nesting {
    /// Signal depends only on the agent's own state.
    Inner,
    /// Signal also depends on the agent's estimates of the preceding components.
    Outer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSpec {
    pub name: &'static str,
    pub dim: usize,
    pub aggregation: Aggregation,
    pub nesting: Nesting,
}

#[derive(Debug, Clone)]
pub enum Setup {
    Consensus(Arc<ConsensusProblem>),
    ConstraintCoupled(Arc<ConstraintCoupledProblem>),
    Aggregative(Arc<AggregativeProblem>),
    Game(Arc<AggregativeGame>),
}

/// A setup together with its step parameters.
#[derive(Debug, Clone)]
pub struct Block {
    pub setup: Setup,
    pub params: BlockParams,
}

impl Block {
    pub fn new(setup: Setup, params: BlockParams) -> Self {
        Self { setup, params }
    }

    pub fn name(&self) -> &'static str {
        match &self.setup {
            Setup::Consensus(_) => "consensus",
            Setup::ConstraintCoupled(_) => "constraint_coupled",
            Setup::Aggregative(_) => "aggregative",
            Setup::Game(_) => "game",
        }
    }

    pub fn n_agents(&self) -> usize {
        match &self.setup {
            Setup::Consensus(p) => p.n_agents(),
            Setup::ConstraintCoupled(p) => p.n_agents(),
            Setup::Aggregative(p) => p.n_agents(),
            Setup::Game(p) => p.n_agents(),
        }
    }

    /// Per-agent decision dimensions.
    pub fn local_dims(&self) -> Vec<usize> {
        match &self.setup {
            Setup::Consensus(p) => vec![p.dim(); p.n_agents()],
            Setup::ConstraintCoupled(p) => HasCoupling::local_dims(p.as_ref()),
            Setup::Aggregative(p) => HasAggregation::local_dims(p.as_ref()),
            Setup::Game(p) => HasCoupling::local_dims(p.as_ref()),
        }
    }

    /// Multiplier dimension, if the setup carries multipliers.
    pub fn multiplier_dim(&self) -> Option<usize> {
        match &self.setup {
            Setup::ConstraintCoupled(p) => Some(p.n_constraints()),
            Setup::Game(p) => Some(p.coupling().n_constraints()),
            _ => None,
        }
    }

    pub fn signature(&self) -> Vec<ComponentSpec> {
        use Aggregation::*;
        use Nesting::*;
        let spec = |name, dim, aggregation, nesting| ComponentSpec {
            name,
            dim,
            aggregation,
            nesting,
        };
        match &self.setup {
            Setup::Consensus(p) => vec![
                spec("mean_state", p.dim(), Mean, Inner),
                spec("sum_gradient", p.dim(), Sum, Outer),
            ],
            Setup::ConstraintCoupled(p) => vec![
                spec("constraint_residual", p.n_constraints(), Sum, Inner),
                spec("mean_multiplier", p.n_constraints(), Mean, Inner),
            ],
            Setup::Aggregative(p) => vec![
                spec("sigma", p.agg_dim(), Mean, Inner),
                spec("mean_aggregate_gradient", p.agg_dim(), Mean, Outer),
            ],
            Setup::Game(p) => {
                let m = p.coupling().n_constraints();
                vec![
                    spec("sigma", p.agg_dim(), Mean, Inner),
                    spec("mean_multiplier", m, Mean, Inner),
                    spec("constraint_residual", m, Sum, Inner),
                ]
            }
        }
    }

    /// Zero initialization, which lies in the admissible set of every block.
    pub fn initial_state(&self) -> Vec<AgentState> {
        let m = self.multiplier_dim();
        self.local_dims()
            .into_iter()
            .map(|d| AgentState {
                x: DVector::zeros(d),
                lambda: m.map(DVector::zeros),
            })
            .collect()
    }

    pub fn validate_state(&self, state: &[AgentState]) -> Result<()> {
        check_dim("number of agent states", self.n_agents(), state.len())?;
        let m = self.multiplier_dim();
        for (s, d) in state.iter().zip(self.local_dims()) {
            check_dim("agent decision", d, s.x.len())?;
            match (m, &s.lambda) {
                (Some(m), Some(l)) => check_dim("agent multiplier", m, l.len())?,
                (None, None) => {}
                (Some(m), None) => check_dim("agent multiplier", m, 0)?,
                (None, Some(l)) => check_dim("agent multiplier", 0, l.len())?,
            }
        }
        Ok(())
    }

    /// Checks dimensions and multiplier nonnegativity of an initial state.
    pub fn validate_init(&self, state: &[AgentState]) -> Result<()> {
        self.validate_state(state)?;
        if state
            .iter()
            .filter_map(|s| s.lambda.as_ref())
            .any(|l| l.iter().any(|&v| v < 0.0))
        {
            return Err(Error::InvalidParameter(
                "initial multipliers must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Local signal of component `k` at agent `i` (the summand of the mean or
    /// sum). `preceding` holds the agent's values of components `0..k`; only
    /// outer components read it.
    pub fn local_signal(
        &self,
        k: usize,
        agent: usize,
        chi: &AgentState,
        preceding: &[DVector<f64>],
    ) -> Result<DVector<f64>> {
        let component_err = || Error::InvalidParameter(format!("no aggregate component {k}"));
        match &self.setup {
            Setup::Consensus(p) => match k {
                0 => Ok(chi.x.clone()),
                1 => Ok(p.costs()[agent].gradient(&preceding[0])),
                _ => Err(component_err()),
            },
            Setup::ConstraintCoupled(p) => match k {
                0 => Ok(p.coupling().local_residual(agent, &chi.x)),
                1 => Ok(chi.lambda()?.clone()),
                _ => Err(component_err()),
            },
            Setup::Aggregative(p) => match k {
                0 => Ok(p.contributions()[agent].value(&chi.x)),
                1 => Ok(p.costs()[agent].grad_s(&chi.x, &preceding[0])),
                _ => Err(component_err()),
            },
            Setup::Game(p) => match k {
                0 => Ok(p.contributions()[agent].value(&chi.x)),
                1 => Ok(chi.lambda()?.clone()),
                2 => Ok(p.coupling().local_residual(agent, &chi.x)),
                _ => Err(component_err()),
            },
        }
    }

    /// `g_i(χ_i, α)` for one agent.
    pub fn local_step(
        &self,
        agent: usize,
        chi: &AgentState,
        agg: &[DVector<f64>],
    ) -> Result<AgentState> {
        let params = &self.params;
        match &self.setup {
            Setup::Consensus(_) => Ok(consensus_local(params, chi, agg)),
            Setup::ConstraintCoupled(p) => cc_local(p, params, agent, chi, agg),
            Setup::Aggregative(p) => Ok(aggregative_local(p, params, agent, chi, agg)),
            Setup::Game(p) => game_local(p, params, agent, chi, agg),
        }
    }

    /// Stacked `g(χ, 1α)` with a common aggregate.
    pub fn step(&self, state: &[AgentState], agg: &Aggregate) -> Result<Vec<AgentState>> {
        self.validate_state(state)?;
        self.check_aggregate(agg)?;
        state
            .iter()
            .enumerate()
            .map(|(i, chi)| self.local_step(i, chi, &agg.components))
            .collect()
    }

    pub fn check_aggregate(&self, agg: &Aggregate) -> Result<()> {
        let sig = self.signature();
        check_dim("aggregate components", sig.len(), agg.components.len())?;
        for (c, v) in sig.iter().zip(&agg.components) {
            check_dim(c.name, c.dim, v.len())?;
        }
        Ok(())
    }

    /// `‖[Σ_i(A_i x_i − b_i)]_+‖`, zero for unconstrained setups.
    pub fn constraint_violation(&self, state: &[AgentState]) -> f64 {
        let coupling = match &self.setup {
            Setup::ConstraintCoupled(p) => p.coupling(),
            Setup::Game(p) => p.coupling(),
            _ => return 0.0,
        };
        let xs: Vec<_> = state.iter().map(|s| s.x.clone()).collect();
        crate::problem::residual_blocks(coupling, &xs)
            .map(|v| v.max(0.0))
            .norm()
    }
}

/// `H_ρ(v, λ)`.
pub fn h_rho(v: f64, lambda: f64, rho: f64) -> f64 {
    if rho * v + lambda >= 0.0 {
        v * lambda + 0.5 * rho * v * v
    } else {
        -lambda * lambda / (2.0 * rho)
    }
}

/// `𝓗_ρ(v, λ) = Σ_ℓ H_ρ(v_ℓ, λ_ℓ)`.
pub fn h_rho_sum(v: &DVector<f64>, lambda: &DVector<f64>, rho: f64) -> f64 {
    v.iter().zip(lambda.iter()).map(|(&a, &l)| h_rho(a, l, rho)).sum()
}

/// Componentwise partial gradients `(∇_1 𝓗_ρ, ∇_2 𝓗_ρ)`.
pub fn grad_h_rho(v: &DVector<f64>, lambda: &DVector<f64>, rho: f64) -> (DVector<f64>, DVector<f64>) {
    let mut g1 = DVector::zeros(v.len());
    let mut g2 = DVector::zeros(v.len());
    for l in 0..v.len() {
        if rho * v[l] + lambda[l] >= 0.0 {
            g1[l] = lambda[l] + rho * v[l];
            g2[l] = v[l];
        } else {
            g2[l] = -lambda[l] / rho;
        }
    }
    (g1, g2)
}

fn consensus_local(params: &BlockParams, chi: &AgentState, agg: &[DVector<f64>]) -> AgentState {
    let drift = (&chi.x - &agg[0]) * params.nu + &agg[1];
    AgentState::primal(&chi.x - drift * params.gamma)
}

/// Shared primal-dual update of the constrained blocks, given the primal
/// direction `d_i` and the aggregate pair `(v, λ̄)`.
fn primal_dual_local(
    params: &BlockParams,
    a_i: &nalgebra::DMatrix<f64>,
    n_agents: usize,
    chi: &AgentState,
    direction: DVector<f64>,
    v: &DVector<f64>,
    lambda_bar: &DVector<f64>,
) -> Result<AgentState> {
    let lambda = chi.lambda()?;
    let (g1, g2) = grad_h_rho(v, lambda_bar, params.rho);
    let x = &chi.x - (direction + a_i.tr_mul(&g1)) * params.gamma;
    let lambda = lambda
        + (lambda_bar - lambda) * (params.gamma * params.nu)
        + g2 * (params.gamma / n_agents as f64);
    Ok(AgentState::primal_dual(x, lambda))
}

fn cc_local(
    p: &ConstraintCoupledProblem,
    params: &BlockParams,
    agent: usize,
    chi: &AgentState,
    agg: &[DVector<f64>],
) -> Result<AgentState> {
    let direction = p.costs()[agent].gradient(&chi.x);
    primal_dual_local(
        params,
        &p.coupling().a[agent],
        p.n_agents(),
        chi,
        direction,
        &agg[0],
        &agg[1],
    )
}

fn aggregative_local(
    p: &AggregativeProblem,
    params: &BlockParams,
    agent: usize,
    chi: &AgentState,
    agg: &[DVector<f64>],
) -> AgentState {
    let grad = p.costs()[agent].grad_x(&chi.x, &agg[0])
        + p.contributions()[agent].jacobian(&chi.x) * &agg[1];
    AgentState::primal(&chi.x - grad * params.gamma)
}

fn game_local(
    p: &AggregativeGame,
    params: &BlockParams,
    agent: usize,
    chi: &AgentState,
    agg: &[DVector<f64>],
) -> Result<AgentState> {
    let direction = p.local_pseudo_gradient(agent, &chi.x, &agg[0]);
    primal_dual_local(
        params,
        &p.coupling().a[agent],
        p.n_agents(),
        chi,
        direction,
        &agg[2],
        &agg[1],
    )
}

fn step_with(
    block: Block,
    state: &[AgentState],
    agg: &Aggregate,
) -> Result<Vec<AgentState>> {
    block.step(state, agg)
}

/// Consensus-optimization block: `χ_i⁺ = χ_i − γ(ν(χ_i − α_1) + α_2)`.
pub fn consensus_block_step(
    problem: &Arc<ConsensusProblem>,
    state: &[AgentState],
    agg: &Aggregate,
    params: &BlockParams,
) -> Result<Vec<AgentState>> {
    step_with(Block::new(Setup::Consensus(problem.clone()), *params), state, agg)
}

/// Constraint-coupled primal-dual block with `α = (Σ_i(A_i x_i − b_i), mean λ)`.
pub fn cc_block_step(
    problem: &Arc<ConstraintCoupledProblem>,
    state: &[AgentState],
    agg: &Aggregate,
    params: &BlockParams,
) -> Result<Vec<AgentState>> {
    step_with(
        Block::new(Setup::ConstraintCoupled(problem.clone()), *params),
        state,
        agg,
    )
}

/// Aggregative gradient block with `α = (σ(x), mean_j ∇_2 f_j(x_j, α_1))`.
pub fn aggregative_block_step(
    problem: &Arc<AggregativeProblem>,
    state: &[AgentState],
    agg: &Aggregate,
    params: &BlockParams,
) -> Result<Vec<AgentState>> {
    step_with(Block::new(Setup::Aggregative(problem.clone()), *params), state, agg)
}

/// Game primal-dual block with `α = (σ(x), mean λ, Σ_i(A_i x_i − b_i))`.
pub fn game_block_step(
    problem: &Arc<AggregativeGame>,
    state: &[AgentState],
    agg: &Aggregate,
    params: &BlockParams,
) -> Result<Vec<AgentState>> {
    step_with(Block::new(Setup::Game(problem.clone()), *params), state, agg)
}

/// Combines local signals into the component value.
pub(crate) fn combine(aggregation: Aggregation, signals: &[DVector<f64>]) -> DVector<f64> {
    let dim = signals.first().map_or(0, |s| s.len());
    let total = signals.iter().fold(DVector::zeros(dim), |acc, s| acc + s);
    match aggregation {
        Aggregation::Sum => total,
        Aggregation::Mean => total / signals.len() as f64,
    }
}

/// Exact `α(χ)`, computed centrally component by component.
pub fn exact_aggregate(block: &Block, state: &[AgentState]) -> Result<Aggregate> {
    block.validate_state(state)?;
    let mut components: Vec<DVector<f64>> = Vec::new();
    for (k, spec) in block.signature().iter().enumerate() {
        let signals = state
            .iter()
            .enumerate()
            .map(|(i, chi)| block.local_signal(k, i, chi, &components))
            .collect::<Result<Vec<_>>>()?;
        components.push(combine(spec.aggregation, &signals));
    }
    Ok(Aggregate { components })
}

pub(crate) fn record(
    block: &Block,
    t: usize,
    state: &[AgentState],
    proxies: Option<DVector<f64>>,
    track_err: f64,
    opts: &RunOptions,
) -> TraceRecord {
    let (opt_err, out_err) = opts
        .reference
        .as_ref()
        .map_or((f64::NAN, f64::NAN), |r| state_distance(state, r));
    let lambda_neg = state
        .iter()
        .filter_map(|s| s.lambda.as_ref())
        .any(|l| l.iter().any(|&v| v < 0.0));
    TraceRecord {
        t,
        opt_err,
        out_err,
        track_err,
        constr_res: block.constraint_violation(state),
        lambda_neg,
        chi: if opts.record_states {
            stack_states(state)
        } else {
            DVector::zeros(0)
        },
        proxies: if opts.record_states {
            proxies.unwrap_or_else(|| DVector::zeros(0))
        } else {
            DVector::zeros(0)
        },
    }
}

/// Iterates `χ^{t+1} = g(χ^t, 1α(χ^t))` with the exact aggregate.
///
/// Fails with [`Error::Diverged`] when the state norm exceeds
/// [`DIVERGENCE_THRESHOLD`] or becomes non-finite.
pub fn run_centralized(
    block: &Block,
    init: &[AgentState],
    iters: usize,
    opts: &RunOptions,
) -> Result<RunTrace> {
    block.validate_init(init)?;
    let mut trace = RunTrace::default();
    let mut state = init.to_vec();
    trace.records.push(record(block, 0, &state, None, 0.0, opts));
    for t in 1..=iters {
        let agg = exact_aggregate(block, &state)?;
        state = block.step(&state, &agg)?;
        if !is_finite_state(&state) || state_norm(&state) > DIVERGENCE_THRESHOLD {
            return Err(Error::Diverged { iteration: t });
        }
        if opts.should_record(t, iters) {
            trace.records.push(record(block, t, &state, None, 0.0, opts));
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{
        CouplingConstraint, LinearContribution, LocalCost, QuadraticAggregativeCost,
        QuadraticCost,
    };
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    fn scalar_quadratic(q: f64, r: f64) -> Box<dyn LocalCost> {
        Box::new(QuadraticCost::new(DMatrix::from_element(1, 1, q), v(&[r])).unwrap())
    }

    #[test]
    fn h_rho_examples() {
        assert_eq!(h_rho(0.0, 0.0, 1.0), 0.0);
        assert_abs_diff_eq!(h_rho(-2.0, 1.0, 0.25), -1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(h_rho(1.0, -2.0, 1.0), -2.0, epsilon = 1e-15);
    }

    #[test]
    fn grad_h_rho_examples() {
        let (g1, g2) = grad_h_rho(&v(&[1.0]), &v(&[1.0]), 1.0);
        assert_eq!((g1[0], g2[0]), (2.0, 1.0));
        let (g1, g2) = grad_h_rho(&v(&[1.0]), &v(&[-2.0]), 1.0);
        assert_eq!((g1[0], g2[0]), (0.0, 2.0));
        let (g1, g2) = grad_h_rho(&v(&[1.0]), &v(&[-1.0]), 1.0);
        assert_eq!((g1[0], g2[0]), (0.0, 1.0));
    }

    #[test]
    fn grad_h_rho_matches_central_differences() {
        let rho = 0.7;
        let h = 1e-6;
        for &(a, l) in &[(1.0, 1.0), (1.0, -2.0), (-0.3, 0.8), (2.0, -0.5), (-1.0, -1.0)] {
            let (g1, g2) = grad_h_rho(&v(&[a]), &v(&[l]), rho);
            let d1 = (h_rho(a + h, l, rho) - h_rho(a - h, l, rho)) / (2.0 * h);
            let d2 = (h_rho(a, l + h, rho) - h_rho(a, l - h, rho)) / (2.0 * h);
            assert_abs_diff_eq!(g1[0], d1, epsilon = 1e-7);
            assert_abs_diff_eq!(g2[0], d2, epsilon = 1e-7);
        }
    }

    proptest! {
        #[test]
        fn h_rho_branches_agree_on_switching_surface(v0 in -10.0f64..10.0, rho in 0.05f64..5.0) {
            let lambda = -rho * v0;
            let quad = v0 * lambda + 0.5 * rho * v0 * v0;
            let flat = -lambda * lambda / (2.0 * rho);
            prop_assert!((quad - flat).abs() <= 1e-12 * (1.0 + quad.abs()));
            prop_assert!((lambda + rho * v0).abs() <= 1e-12 * (1.0 + lambda.abs()));
            prop_assert!((v0 - (-lambda / rho)).abs() <= 1e-12 * (1.0 + v0.abs()));
        }
    }

    #[test]
    fn consensus_hand_example() {
        let p = Arc::new(
            ConsensusProblem::new(1, vec![scalar_quadratic(1.0, 0.0), scalar_quadratic(1.0, 0.0)])
                .unwrap(),
        );
        let params = BlockParams { gamma: 0.1, nu: 1.0, rho: 1.0 };
        let block = Block::new(Setup::Consensus(p.clone()), params);
        let state = vec![AgentState::primal(v(&[1.0])), AgentState::primal(v(&[-1.0]))];
        let agg = exact_aggregate(&block, &state).unwrap();
        assert_eq!(agg.components, vec![v(&[0.0]), v(&[0.0])]);
        let next = consensus_block_step(&p, &state, &agg, &params).unwrap();
        assert_abs_diff_eq!(next[0].x[0], 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(next[1].x[0], -0.9, epsilon = 1e-15);
    }

    #[test]
    fn zero_step_is_identity() {
        let p = Arc::new(crate::problem::generate_quadratic_cc(3, 2, 2, 1).unwrap());
        let params = BlockParams { gamma: 0.0, nu: 1.0, rho: 0.9 };
        let block = Block::new(Setup::ConstraintCoupled(p.clone()), params);
        let mut state = block.initial_state();
        state[1].x[0] = 0.7;
        state[2].lambda.as_mut().unwrap()[1] = 0.3;
        let agg = exact_aggregate(&block, &state).unwrap();
        assert_eq!(cc_block_step(&p, &state, &agg, &params).unwrap(), state);
    }

    #[test]
    fn cc_scalar_fixed_point() {
        // f(x) = ½x² − x, A = 1, b = 0: KKT point x = 0, λ = 1.
        let p = Arc::new(
            ConstraintCoupledProblem::new(
                vec![scalar_quadratic(1.0, -1.0)],
                CouplingConstraint::new(vec![DMatrix::from_element(1, 1, 1.0)], vec![v(&[0.0])])
                    .unwrap(),
            )
            .unwrap(),
        );
        let params = BlockParams { gamma: 0.1, nu: 1.0, rho: 1.0 };
        let block = Block::new(Setup::ConstraintCoupled(p), params);
        let state = vec![AgentState::primal_dual(v(&[0.0]), v(&[1.0]))];
        let agg = exact_aggregate(&block, &state).unwrap();
        let next = block.step(&state, &agg).unwrap();
        assert_abs_diff_eq!(next[0].x[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(next[0].lambda.as_ref().unwrap()[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn cc_exact_aggregate_at_zero() {
        let p = Arc::new(crate::problem::generate_quadratic_cc(4, 2, 2, 3).unwrap());
        let block = Block::new(Setup::ConstraintCoupled(p.clone()), BlockParams::default());
        let agg = exact_aggregate(&block, &block.initial_state()).unwrap();
        assert_abs_diff_eq!(agg.components[0], -p.coupling().total_offset(), epsilon = 1e-15);
        assert_eq!(agg.components[1], DVector::zeros(2));
    }

    #[test]
    fn consensus_aggregate_of_identical_states() {
        let p = Arc::new(crate::problem::generate_quadratic_consensus(3, 2, 4).unwrap());
        let block = Block::new(Setup::Consensus(p), BlockParams::default());
        let c = v(&[0.25, -1.5]);
        let state = vec![AgentState::primal(c.clone()); 3];
        assert_abs_diff_eq!(exact_aggregate(&block, &state).unwrap().components[0], c, epsilon = 1e-15);
    }

    #[test]
    fn game_residual_component_matches_constraint_residual() {
        let g = Arc::new(crate::problem::generate_quadratic_game(3, 2, 2, 2, 8).unwrap());
        let block = Block::new(Setup::Game(g.clone()), BlockParams::default());
        let mut state = block.initial_state();
        for (i, s) in state.iter_mut().enumerate() {
            s.x = v(&[i as f64, 1.0 - i as f64]);
        }
        let flat = crate::problem::stack(&state.iter().map(|s| s.x.clone()).collect::<Vec<_>>());
        let agg = exact_aggregate(&block, &state).unwrap();
        let res = crate::problem::constraint_residual(g.as_ref(), &flat).unwrap();
        assert_abs_diff_eq!(agg.components[2], res, epsilon = 1e-14);
    }

    #[test]
    fn aggregative_origin_is_stationary() {
        let costs = (0..2)
            .map(|_| {
                Box::new(
                    QuadraticAggregativeCost::new(
                        DMatrix::identity(1, 1),
                        DMatrix::zeros(1, 1),
                        DMatrix::identity(1, 1),
                        v(&[0.0]),
                        v(&[0.0]),
                    )
                    .unwrap(),
                ) as Box<dyn crate::problem::AggregativeCost>
            })
            .collect();
        let contributions = (0..2)
            .map(|_| Box::new(LinearContribution::identity(1)) as Box<dyn crate::problem::Contribution>)
            .collect();
        let p = Arc::new(AggregativeProblem::new(costs, contributions).unwrap());
        let block = Block::new(Setup::Aggregative(p.clone()), BlockParams::default());
        let state = block.initial_state();
        let agg = exact_aggregate(&block, &state).unwrap();
        assert_eq!(aggregative_block_step(&p, &state, &agg, &BlockParams::default()).unwrap(), state);
    }

    #[test]
    fn centralized_run_zero_iterations() {
        let p = Arc::new(crate::problem::generate_quadratic_cc(3, 2, 2, 1).unwrap());
        let block = Block::new(Setup::ConstraintCoupled(p), BlockParams::default());
        let trace = run_centralized(&block, &block.initial_state(), 0, &RunOptions::default()).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.records[0].t, 0);
    }

    #[test]
    fn centralized_run_diverges_on_stiff_instance() {
        // γ·curvature = 3 > 2 on a 1-d quadratic.
        let p = Arc::new(ConsensusProblem::new(1, vec![scalar_quadratic(30.0, 1.0)]).unwrap());
        let block = Block::new(Setup::Consensus(p), BlockParams { gamma: 0.1, nu: 1.0, rho: 1.0 });
        let err = run_centralized(&block, &block.initial_state(), 10_000, &RunOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }

    #[test]
    fn negative_initial_multiplier_rejected() {
        let p = Arc::new(crate::problem::generate_quadratic_cc(2, 1, 1, 1).unwrap());
        let block = Block::new(Setup::ConstraintCoupled(p), BlockParams::default());
        let mut init = block.initial_state();
        init[0].lambda.as_mut().unwrap()[0] = -1.0;
        assert!(run_centralized(&block, &init, 1, &RunOptions::default()).is_err());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = Arc::new(crate::problem::generate_quadratic_consensus(2, 2, 1).unwrap());
        let block = Block::new(Setup::Consensus(p), BlockParams::default());
        let bad = vec![AgentState::primal(v(&[0.0])); 2];
        assert!(matches!(exact_aggregate(&block, &bad), Err(Error::DimensionMismatch { .. })));
    }
}
