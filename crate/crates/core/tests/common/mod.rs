#![allow(dead_code)]

use std::sync::Arc;

use distmeta::blocks::{AgentState, Block, BlockParams, Setup};
use distmeta::diagnostics::{solve_cc_active_set, Solution};
use distmeta::graph::{erdos_renyi, Network};
use distmeta::interconnection::{assemble, default_bindings, AssemblyConfig, DistributedAlgorithm};
use distmeta::problem::{generate_quadratic_cc, ConstraintCoupledProblem, HasCoupling};
use distmeta::trackers::TrackerKind;
use nalgebra::{DMatrix, DVector};

pub const N_AGENTS: usize = 10;
pub const LOCAL_DIM: usize = 2;
pub const N_CONSTRAINTS: usize = 2;
pub const EDGE_PROB: f64 = 0.3;

pub fn reference_params() -> BlockParams {
    BlockParams {
        gamma: 0.1,
        nu: 1.0,
        rho: 0.9,
    }
}

/// Reference constraint-coupled instance, its graph and KKT solution.
pub struct Reference {
    pub seed: u64,
    pub problem: Arc<ConstraintCoupledProblem>,
    pub network: Arc<Network>,
    pub solution: Solution,
    pub chi_star: Vec<AgentState>,
}

impl Reference {
    pub fn new(seed: u64) -> Self {
        let problem = Arc::new(generate_quadratic_cc(N_AGENTS, LOCAL_DIM, N_CONSTRAINTS, seed).unwrap());
        let network = Arc::new(Network::metropolis(erdos_renyi(N_AGENTS, EDGE_PROB, seed, 100).unwrap()).unwrap());
        let solution = solve_cc_active_set(&problem).unwrap();
        let chi_star = solution
            .agent_states(&HasCoupling::local_dims(problem.as_ref()))
            .unwrap();
        Self {
            seed,
            problem,
            network,
            solution,
            chi_star,
        }
    }

    pub fn block(&self) -> Block {
        Block::new(Setup::ConstraintCoupled(self.problem.clone()), reference_params())
    }

    pub fn algorithm(&self, delta: f64, kind: TrackerKind) -> DistributedAlgorithm {
        let block = self.block();
        let bindings = default_bindings(&block, kind);
        assemble(AssemblyConfig {
            delta,
            block,
            bindings,
            network: self.network.clone(),
        })
        .unwrap()
    }
}

/// The first `count` seeds (scanning upward from 0) whose reference instance
/// has at least one coupling constraint active at the optimum. With every
/// constraint inactive the multiplier channel decouples from the primal
/// update and the instance does not exercise the coupling.
pub fn active_seeds(count: usize) -> Vec<u64> {
    (0u64..)
        .filter(|&s| {
            let p = generate_quadratic_cc(N_AGENTS, LOCAL_DIM, N_CONSTRAINTS, s).unwrap();
            !solve_cc_active_set(&p).unwrap().active_set.is_empty()
        })
        .take(count)
        .collect()
}

fn grad_h(v: f64, l: f64, rho: f64) -> (f64, f64) {
    if rho * v + l >= 0.0 {
        (l + rho * v, v)
    } else {
        (0.0, -l / rho)
    }
}

/// Literal primal-dual update with two perturbed-consensus trackers, written
/// out agent by agent with a dense weight matrix.
#[allow(clippy::too_many_arguments, clippy::type_complexity)]
pub fn literal_cc_step(
    problem: &ConstraintCoupledProblem,
    weights: &DMatrix<f64>,
    params: &BlockParams,
    delta: f64,
    x: &[DVector<f64>],
    lambda: &[DVector<f64>],
    w: &[DVector<f64>],
    zeta: &[DVector<f64>],
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>, Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let n = x.len();
    let nf = n as f64;
    let (g, nu, rho) = (params.gamma, params.nu, params.rho);
    let quads = problem.quadratic_costs().unwrap();
    let a = &problem.coupling().a;
    let b = &problem.coupling().b;
    let res: Vec<DVector<f64>> = (0..n).map(|i| (&a[i] * &x[i] - &b[i]) * nf).collect();
    let mut x1 = Vec::new();
    let mut l1 = Vec::new();
    let mut w1 = Vec::new();
    let mut z1 = Vec::new();
    for i in 0..n {
        let v = &res[i] + &zeta[i];
        let l = &lambda[i] + &w[i];
        let m = v.len();
        let mut g1 = DVector::zeros(m);
        let mut g2 = DVector::zeros(m);
        for k in 0..m {
            let (d1, d2) = grad_h(v[k], l[k], rho);
            g1[k] = d1;
            g2[k] = d2;
        }
        let grad_f = &quads[i].q * &x[i] + &quads[i].r;
        x1.push(&x[i] - grad_f * (delta * g) - a[i].transpose() * g1 * (delta * g));
        l1.push(&lambda[i] + &w[i] * (delta * g * nu) + g2 * (delta * g / nf));
        let mut wi = -&lambda[i];
        let mut zi = -&res[i];
        for j in 0..n {
            wi += (&w[j] + &lambda[j]) * weights[(i, j)];
            zi += (&zeta[j] + &res[j]) * weights[(i, j)];
        }
        w1.push(wi);
        z1.push(zi);
    }
    (x1, l1, w1, z1)
}
