use std::sync::Arc;

use distmeta::blocks::{exact_aggregate, run_centralized, AgentState, Block, BlockParams, Setup};
use distmeta::diagnostics::{solve_cc_active_set, solve_consensus_min, solve_game_linear};
use distmeta::graph::{erdos_renyi, Graph, Network};
use distmeta::interconnection::{assemble, default_bindings, AssemblyConfig, DistributedAlgorithm};
use distmeta::problem::{
    generate_quadratic_aggregative, generate_quadratic_consensus, generate_quadratic_game,
    split_stacked, AggregativeCost, AggregativeGame, Contribution, ConstraintCoupledProblem,
    CouplingConstraint, HasCoupling, LinearContribution, LocalCost, QuadraticAggregativeCost,
    QuadraticCost,
};
use distmeta::trace::{stack_states, RunOptions};
use distmeta::trackers::TrackerKind;
use nalgebra::{dmatrix, dvector, DVector};

fn assembled(setup: Setup, params: BlockParams, network: Arc<Network>, delta: f64) -> DistributedAlgorithm {
    let block = Block::new(setup, params);
    let bindings = default_bindings(&block, TrackerKind::Perturbed);
    assemble(AssemblyConfig {
        delta,
        block,
        bindings,
        network,
    })
    .unwrap()
}

fn final_chi(alg: &DistributedAlgorithm, horizon: usize) -> DVector<f64> {
    let trace = alg
        .run(&alg.initial_state(), horizon, &RunOptions { record_every: horizon, ..RunOptions::default() })
        .unwrap();
    assert!(!trace.diverged());
    trace.last().unwrap().chi.clone()
}

/// Two scalar players with `J_i = ½x_i² + x_i s + p_i x_i`, `φ_i(x) = x_i`
/// and the shared constraint `x_1 + x_2 ≤ b_1 + b_2`.
fn two_player_game(p: [f64; 2], b: [f64; 2]) -> AggregativeGame {
    let costs: Vec<Box<dyn AggregativeCost>> = p
        .iter()
        .map(|&pi| {
            Box::new(
                QuadraticAggregativeCost::new(dmatrix![1.0], dmatrix![1.0], dmatrix![0.0], dvector![pi], dvector![0.0])
                    .unwrap(),
            ) as Box<dyn AggregativeCost>
        })
        .collect();
    let phis: Vec<Box<dyn Contribution>> = (0..2)
        .map(|_| Box::new(LinearContribution::identity(1)) as Box<dyn Contribution>)
        .collect();
    let coupling = CouplingConstraint::new(vec![dmatrix![1.0], dmatrix![1.0]], vec![dvector![b[0]], dvector![b[1]]]).unwrap();
    AggregativeGame::new(costs, phis, coupling).unwrap()
}

#[test]
fn two_player_game_matches_closed_form() {
    // G_i = 1.5 x_i + s + p_i with s = (x_1 + x_2)/2.
    // Unconstrained: [2 .5; .5 2] x = -p gives (-0.8, 1.2), sum 0.4.
    // With x_1 + x_2 ≤ 0 active: x = (-1, 1), λ = 0.5.
    let cases = [([5.0, 5.0], dvector![-0.8, 1.2], 0.0), ([0.0, 0.0], dvector![-1.0, 1.0], 0.5)];
    for (b, x_expected, l_expected) in cases {
        let game = Arc::new(two_player_game([1.0, -2.0], b));
        let sol = solve_game_linear(&game).unwrap();
        assert!((&sol.x_star - &x_expected).amax() < 1e-12, "{}", sol.x_star);
        assert!((sol.lambda_star[0] - l_expected).abs() < 1e-12);

        let network = Arc::new(Network::metropolis(Graph::complete(2)).unwrap());
        let alg = assembled(Setup::Game(game), BlockParams::default(), network, 0.2);
        let chi = final_chi(&alg, 20_000);
        let xs = DVector::from_vec(vec![chi[0], chi[2]]);
        assert!((xs - &x_expected).amax() < 1e-6);
        assert!((chi[1] - l_expected).abs() < 1e-6 && (chi[3] - l_expected).abs() < 1e-6);
    }
}

#[test]
fn distributed_game_reaches_variational_equilibrium() {
    let game = Arc::new(generate_quadratic_game(6, 2, 2, 2, 11).unwrap());
    let sol = solve_game_linear(&game).unwrap();
    let dims = HasCoupling::local_dims(game.as_ref());
    let star = sol.agent_states(&dims).unwrap();
    let network = Arc::new(Network::metropolis(erdos_renyi(6, 0.5, 11, 100).unwrap()).unwrap());
    let params = BlockParams::new(0.05, 1.0, 0.9).unwrap();
    let block = Block::new(Setup::Game(game.clone()), params);

    // The equilibrium is a fixed point of the exact block.
    let next = block.step(&star, &exact_aggregate(&block, &star).unwrap()).unwrap();
    assert!((stack_states(&next) - stack_states(&star)).amax() < 1e-9);

    let alg = assembled(Setup::Game(game), params, network, 0.1);
    let chi = final_chi(&alg, 100_000);
    assert!((chi - stack_states(&star)).amax() < 1e-6);
}

#[test]
fn single_player_game_is_optimization() {
    let game = generate_quadratic_game(1, 3, 2, 1, 2).unwrap();
    let cost = &game.costs()[0];
    let phi = |x: &DVector<f64>| {
        let s = distmeta::problem::sigma_blocks(&game, std::slice::from_ref(x));
        cost.value(x, &s)
    };
    let x = dvector![0.3, -1.1, 0.7];
    let g = &game.pseudo_gradient(std::slice::from_ref(&x))[0];
    let h = 1e-6;
    for k in 0..3 {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[k] += h;
        minus[k] -= h;
        let fd = (phi(&plus) - phi(&minus)) / (2.0 * h);
        assert!((fd - g[k]).abs() < 1e-6, "component {k}: {fd} vs {}", g[k]);
    }
}

#[test]
fn distributed_aggregative_optimization_converges() {
    let p = Arc::new(generate_quadratic_aggregative(6, 2, 2, 8).unwrap());
    let block = Block::new(Setup::Aggregative(p.clone()), BlockParams::default());
    // Long-run centralized gradient descent as reference.
    let cent = run_centralized(&block, &block.initial_state(), 50_000, &RunOptions { record_every: 50_000, ..RunOptions::default() })
        .unwrap();
    let x_ref = cent.last().unwrap().chi.clone();
    let xs = split_stacked(&x_ref, &[2; 6]).unwrap();
    let grad = distmeta::problem::stack(&p.gradient_blocks(&xs));
    assert!(grad.amax() < 1e-9);

    let network = Arc::new(Network::metropolis(erdos_renyi(6, 0.4, 8, 100).unwrap()).unwrap());
    let alg = assembled(Setup::Aggregative(p), BlockParams::default(), network, 0.1);
    let chi = final_chi(&alg, 50_000);
    assert!((chi - x_ref).amax() < 1e-6);
}

#[test]
fn consensus_oracle_cross_check() {
    let p = generate_quadratic_consensus(7, 3, 4).unwrap();
    let x = solve_consensus_min(&p).unwrap();
    assert!(p.total_gradient(&x).amax() < 1e-10);
}

/// Independent check of the active-set oracle for a single constraint:
/// bisection on the dual function of `min Σ f_i  s.t.  Σ a_iᵀx_i ≤ Σ b_i`.
#[test]
fn single_constraint_oracle_matches_dual_bisection() {
    for seed in 0..8u64 {
        let p = distmeta::problem::generate_quadratic_cc(4, 2, 1, 300 + seed).unwrap();
        let quads: Vec<QuadraticCost> = p.quadratic_costs().unwrap().into_iter().cloned().collect();
        let coupling = p.coupling().clone();
        let primal = |l: f64| -> Vec<DVector<f64>> {
            quads
                .iter()
                .zip(&coupling.a)
                .map(|(q, a)| q.q.clone().lu().solve(&(-(&q.r + a.transpose() * l))).unwrap())
                .collect()
        };
        let residual = |l: f64| -> f64 {
            primal(l)
                .iter()
                .enumerate()
                .map(|(i, x)| coupling.local_residual(i, x)[0])
                .sum()
        };
        let lambda = if residual(0.0) <= 0.0 {
            0.0
        } else {
            let (mut lo, mut hi) = (0.0, 1.0);
            while residual(hi) > 0.0 {
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if residual(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let x = distmeta::problem::stack(&primal(lambda));
        let sol = solve_cc_active_set(&p).unwrap();
        assert!((&sol.x_star - x).amax() < 1e-9, "seed {seed}");
        assert!((sol.lambda_star[0] - lambda).abs() < 1e-9, "seed {seed}");
    }
}

#[test]
fn rank_deficient_coupling_is_rejected() {
    let costs: Vec<Box<dyn LocalCost>> = (0..2)
        .map(|_| Box::new(QuadraticCost::new(dmatrix![1.0], dvector![0.0]).unwrap()) as Box<dyn LocalCost>)
        .collect();
    let coupling = CouplingConstraint::new(
        vec![dmatrix![1.0; 1.0], dmatrix![2.0; 2.0]],
        vec![dvector![0.0, 0.0], dvector![0.0, 0.0]],
    )
    .unwrap();
    assert!(ConstraintCoupledProblem::new(costs, coupling).is_err());
}

#[test]
fn exact_consensus_block_reaches_minimizer() {
    let p = Arc::new(generate_quadratic_consensus(5, 2, 6).unwrap());
    let x_star = solve_consensus_min(&p).unwrap();
    let block = Block::new(Setup::Consensus(p), BlockParams::default());
    let init: Vec<AgentState> = (0..5).map(|i| AgentState::primal(dvector![i as f64, -1.0])).collect();
    let trace = run_centralized(&block, &init, 20_000, &RunOptions { record_every: 20_000, ..RunOptions::default() }).unwrap();
    let chi = &trace.last().unwrap().chi;
    for i in 0..5 {
        assert!((chi.rows(2 * i, 2) - &x_star).amax() < 1e-9);
    }
}
