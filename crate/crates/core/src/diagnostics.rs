//! Reference solvers and error diagnostics.
//!
//! The KKT solvers enumerate active sets of the coupling constraint, which
//! keeps them independent of the iterative methods they are used to check.

use std::fmt::Write as _;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::blocks::{AgentState, Setup};
use crate::error::{check_dim, Error, Result};
use crate::interconnection::{DistState, DistributedAlgorithm};
use crate::trace::{stack_states, state_norm, DIVERGENCE_THRESHOLD};
use crate::problem::{
    affine_jacobian, split_stacked, stack, AggregativeGame, AggregativeProblem, ConsensusProblem,
    ConstraintCoupledProblem, HasAggregation, HasCoupling,
};
use crate::trackers::TrackerState;

/// Largest number of coupling constraints handled by enumeration.
pub const MAX_ENUMERATED_CONSTRAINTS: usize = 10;
/// Feasibility and sign tolerance of the KKT candidates.
pub const KKT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// Stacked primal solution.
    pub x_star: DVector<f64>,
    pub lambda_star: DVector<f64>,
    /// Indices of the constraints treated as active.
    pub active_set: Vec<usize>,
    pub kkt_residual: f64,
    /// Set when several active sets produced admissible candidates.
    pub degenerate: bool,
}

impl Solution {
    /// Per-agent state `(x_i⋆, λ⋆)` for use as a run reference.
    pub fn agent_states(&self, dims: &[usize]) -> Result<Vec<AgentState>> {
        Ok(split_stacked(&self.x_star, dims)?
            .into_iter()
            .map(|x| AgentState::primal_dual(x, self.lambda_star.clone()))
            .collect())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let csv = |v: &DVector<f64>| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let _ = writeln!(out, "x_star {}", self.x_star.len());
        let _ = writeln!(out, "{}", csv(&self.x_star));
        let _ = writeln!(out, "lambda_star {}", self.lambda_star.len());
        let _ = writeln!(out, "{}", csv(&self.lambda_star));
        let active: Vec<_> = self.active_set.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(out, "active_set {}", active.len());
        let _ = writeln!(out, "{}", active.join(","));
        let _ = writeln!(out, "kkt_residual {}", self.kkt_residual);
        let _ = writeln!(out, "degenerate {}", self.degenerate);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        let parse_err = |line: usize, msg: &str| Error::Parse {
            line: line + 1,
            msg: msg.to_string(),
        };
        let header = |idx: usize, name: &str| -> Result<&str> {
            let line = lines.get(idx).ok_or_else(|| parse_err(idx, "unexpected end of input"))?;
            line.strip_prefix(name)
                .map(str::trim)
                .ok_or_else(|| parse_err(idx, &format!("expected `{name}`")))
        };
        let floats = |idx: usize, len: usize| -> Result<DVector<f64>> {
            let line = lines.get(idx).copied().unwrap_or("");
            let vals: Vec<f64> = if len == 0 {
                Vec::new()
            } else {
                line.split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| parse_err(idx, &e.to_string()))?
            };
            if vals.len() != len {
                return Err(parse_err(idx, "wrong number of values"));
            }
            Ok(DVector::from_vec(vals))
        };
        let count = |idx: usize, name: &str| -> Result<usize> {
            header(idx, name)?
                .parse()
                .map_err(|_| parse_err(idx, "bad length"))
        };
        let nx = count(0, "x_star")?;
        let x_star = floats(1, nx)?;
        let nl = count(2, "lambda_star")?;
        let lambda_star = floats(3, nl)?;
        let na = count(4, "active_set")?;
        let active_set = if na == 0 {
            Vec::new()
        } else {
            lines
                .get(5)
                .copied()
                .unwrap_or("")
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(5, &e.to_string()))?
        };
        let kkt_residual = header(6, "kkt_residual")?
            .parse()
            .map_err(|_| parse_err(6, "bad residual"))?;
        let degenerate = header(7, "degenerate")?
            .parse()
            .map_err(|_| parse_err(7, "bad flag"))?;
        Ok(Self {
            x_star,
            lambda_star,
            active_set,
            kkt_residual,
            degenerate,
        })
    }
}

/// KKT residual of `(x, λ)` for `min` / VI with affine operator `Kx + c`
/// subject to `Ax ≤ b`.
pub fn kkt_residual(
    k: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
) -> f64 {
    let stationarity = (k * x + c + a.tr_mul(lambda)).norm();
    let slack = a * x - b;
    let primal = slack.map(|s| s.max(0.0)).norm();
    let dual = lambda.map(|l| (-l).max(0.0)).norm();
    let complementarity = lambda.dot(&slack).abs();
    stationarity + primal + dual + complementarity
}

/// Enumerates active sets for the affine problem `Kx + c + Aᵀλ = 0`,
/// `0 ≤ λ ⊥ b − Ax ≥ 0`, keeping the admissible candidate with the smallest
/// KKT residual.
pub fn solve_affine_active_set(
    k: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<Solution> {
    let n = c.len();
    let m = b.len();
    check_dim("operator rows", n, k.nrows())?;
    check_dim("operator cols", n, k.ncols())?;
    check_dim("constraint rows", m, a.nrows())?;
    check_dim("constraint cols", n, a.ncols())?;
    if m > MAX_ENUMERATED_CONSTRAINTS {
        return Err(Error::TooManyConstraints {
            got: m,
            max: MAX_ENUMERATED_CONSTRAINTS,
        });
    }
    let scale = 1.0 + c.amax() + b.amax();
    let mut best: Option<Solution> = None;
    let mut admissible = 0;
    for mask in 0u32..(1u32 << m) {
        let active: Vec<usize> = (0..m).filter(|&j| mask & (1 << j) != 0).collect();
        let s = active.len();
        let mut kkt = DMatrix::zeros(n + s, n + s);
        kkt.view_mut((0, 0), (n, n)).copy_from(k);
        let mut rhs = DVector::zeros(n + s);
        rhs.rows_mut(0, n).copy_from(&(-c));
        for (row, &j) in active.iter().enumerate() {
            let aj = a.row(j);
            kkt.view_mut((n + row, 0), (1, n)).copy_from(&aj);
            kkt.view_mut((0, n + row), (n, 1)).copy_from(&aj.transpose());
            rhs[n + row] = b[j];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            continue;
        };
        let x = sol.rows(0, n).into_owned();
        let mut lambda = DVector::zeros(m);
        for (row, &j) in active.iter().enumerate() {
            lambda[j] = sol[n + row];
        }
        let slack = a * &x - b;
        let feasible = slack.iter().all(|&v| v <= KKT_TOL * scale)
            && lambda.iter().all(|&l| l >= -KKT_TOL * scale);
        if !feasible || !x.iter().all(|v| v.is_finite()) {
            continue;
        }
        admissible += 1;
        let residual = kkt_residual(k, c, a, b, &x, &lambda);
        if best.as_ref().is_none_or(|s| residual < s.kkt_residual) {
            best = Some(Solution {
                x_star: x,
                lambda_star: lambda,
                active_set: active,
                kkt_residual: residual,
                degenerate: false,
            });
        }
    }
    let mut best = best.ok_or_else(|| {
        Error::Infeasible("no active set yields a primal-dual feasible KKT point".into())
    })?;
    best.degenerate = admissible > 1;
    Ok(best)
}

fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut off = 0;
    for b in blocks {
        out.view_mut((off, off), (b.nrows(), b.ncols())).copy_from(*b);
        off += b.nrows();
    }
    out
}

/// KKT point of a quadratic constraint-coupled problem by active-set
/// enumeration.
pub fn solve_cc_active_set(problem: &ConstraintCoupledProblem) -> Result<Solution> {
    let quads = problem
        .quadratic_costs()
        .ok_or_else(|| Error::Unsupported("active-set oracle needs quadratic costs".into()))?;
    let q = block_diag(&quads.iter().map(|c| &c.q).collect::<Vec<_>>());
    let r = stack(&quads.iter().map(|c| c.r.clone()).collect::<Vec<_>>());
    let coupling = problem.coupling();
    solve_affine_active_set(&q, &r, &coupling.stacked_matrix(), &coupling.total_offset())
}

/// Minimizer of a quadratic consensus problem, `(Σ Q_i) x = −Σ r_i`.
pub fn solve_consensus_min(problem: &ConsensusProblem) -> Result<DVector<f64>> {
    let d = problem.dim();
    let mut q = DMatrix::zeros(d, d);
    let mut r = DVector::zeros(d);
    for cost in problem.costs() {
        let quad = cost
            .as_quadratic()
            .ok_or_else(|| Error::Unsupported("consensus oracle needs quadratic costs".into()))?;
        q += &quad.q;
        r += &quad.r;
    }
    q.lu()
        .solve(&(-r))
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular("sum of cost Hessians".into()))
}

/// Variational equilibrium of a game with affine pseudo-gradient, by
/// active-set enumeration with `G(x) + Aᵀλ = 0` as stationarity condition.
pub fn solve_game_linear(game: &AggregativeGame) -> Result<Solution> {
    let dims = HasCoupling::local_dims(game);
    let zero: Vec<DVector<f64>> = dims.iter().map(|&d| DVector::zeros(d)).collect();
    let c = stack(&game.pseudo_gradient(&zero));
    let k = affine_jacobian(&dims, |x| game.pseudo_gradient(x));
    // Check the map is affine at a nontrivial probe point.
    let probe: Vec<DVector<f64>> = dims
        .iter()
        .map(|&d| DVector::from_fn(d, |i, _| 0.5 + i as f64))
        .collect();
    let lin = &k * stack(&probe) + &c;
    if (lin - stack(&game.pseudo_gradient(&probe))).amax() > 1e-8 * (1.0 + c.amax()) {
        return Err(Error::Unsupported("pseudo-gradient is not affine".into()));
    }
    let coupling = game.coupling();
    solve_affine_active_set(&k, &c, &coupling.stacked_matrix(), &coupling.total_offset())
}

/// Minimizer of an aggregative problem whose gradient is affine.
pub fn solve_aggregative_linear(problem: &AggregativeProblem) -> Result<DVector<f64>> {
    let dims = HasAggregation::local_dims(problem);
    let zero: Vec<DVector<f64>> = dims.iter().map(|&d| DVector::zeros(d)).collect();
    let c = stack(&problem.gradient_blocks(&zero));
    let k = affine_jacobian(&dims, |x| problem.gradient_blocks(x));
    let probe: Vec<DVector<f64>> = dims
        .iter()
        .map(|&d| DVector::from_fn(d, |i, _| 0.5 + i as f64))
        .collect();
    if (&k * stack(&probe) + &c - stack(&problem.gradient_blocks(&probe))).amax() > 1e-8 * (1.0 + c.amax()) {
        return Err(Error::Unsupported("gradient is not affine".into()));
    }
    k.lu()
        .solve(&(-c))
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular("aggregative Hessian".into()))
}

/// Optimal point of a quadratic setup. Unconstrained setups have an empty
/// multiplier and active set, and `x_star` stacks every agent's block (for
/// consensus, `N` copies of the common minimizer). The residual is the
/// stationarity norm for those setups.
pub fn reference_solution(setup: &Setup) -> Result<Solution> {
    let unconstrained = |x_star: DVector<f64>, residual: f64| Solution {
        x_star,
        lambda_star: DVector::zeros(0),
        active_set: Vec::new(),
        kkt_residual: residual,
        degenerate: false,
    };
    match setup {
        Setup::Consensus(p) => {
            let x = solve_consensus_min(p)?;
            let residual = p.total_gradient(&x).norm();
            Ok(unconstrained(stack(&vec![x; p.n_agents()]), residual))
        }
        Setup::ConstraintCoupled(p) => solve_cc_active_set(p),
        Setup::Aggregative(p) => {
            let x = solve_aggregative_linear(p)?;
            let blocks = split_stacked(&x, &HasAggregation::local_dims(p.as_ref()))?;
            let residual = stack(&p.gradient_blocks(&blocks)).norm();
            Ok(unconstrained(x, residual))
        }
        Setup::Game(g) => solve_game_linear(g),
    }
}

/// Per-agent optimal state of a quadratic setup, for use as a run reference.
pub fn reference_states(setup: &Setup) -> Result<Vec<AgentState>> {
    let sol = reference_solution(setup)?;
    let dims: Vec<usize> = match setup {
        Setup::Consensus(p) => vec![p.dim(); p.n_agents()],
        Setup::ConstraintCoupled(p) => HasCoupling::local_dims(p.as_ref()),
        Setup::Aggregative(p) => HasAggregation::local_dims(p.as_ref()),
        Setup::Game(g) => HasCoupling::local_dims(g.as_ref()),
    };
    match setup {
        Setup::Consensus(_) | Setup::Aggregative(_) => Ok(split_stacked(&sol.x_star, &dims)?
            .into_iter()
            .map(AgentState::primal)
            .collect()),
        _ => sol.agent_states(&dims),
    }
}

/// Orthonormal coordinates of the disagreement subspace.
#[derive(Debug, Clone)]
pub struct ErrorCoordinates {
    pub n_agents: usize,
    pub per_agent_dim: usize,
    /// `(N−1)d × Nd`, rows orthonormal and orthogonal to `1 ⊗ I_d`.
    pub t_perp: DMatrix<f64>,
}

/// Builds `T⊥ = T_N ⊗ I_d`, where `T_N` holds rows `2..N` of the Householder
/// reflection mapping `e_1` to `1/√N`.
pub fn build_error_coordinates(n_agents: usize, per_agent_dim: usize) -> Result<ErrorCoordinates> {
    if n_agents == 0 || per_agent_dim == 0 {
        return Err(Error::InvalidParameter("dimensions must be positive".into()));
    }
    let n = n_agents;
    let mut v = DVector::from_element(n, -1.0 / (n as f64).sqrt());
    v[0] += 1.0;
    let vv = v.norm_squared();
    let h = if vv > 1e-300 {
        DMatrix::identity(n, n) - (&v * v.transpose()) * (2.0 / vv)
    } else {
        DMatrix::identity(n, n)
    };
    let t_n = h.rows(1, n - 1).into_owned();
    let t_perp = t_n.kronecker(&DMatrix::identity(per_agent_dim, per_agent_dim));
    Ok(ErrorCoordinates {
        n_agents,
        per_agent_dim,
        t_perp,
    })
}

impl ErrorCoordinates {
    /// `z_eq(χ) = −T⊥ col_i(λ_i, N(A_i x_i − b_i))` for the constraint-coupled
    /// algorithm with per-agent tracker state ordered `(w_i, ζ_i)`.
    pub fn z_eq_cc(&self, problem: &ConstraintCoupledProblem, chi: &[AgentState]) -> Result<DVector<f64>> {
        check_dim("agents", self.n_agents, chi.len())?;
        let m = problem.n_constraints();
        check_dim("tracker state per agent", self.per_agent_dim, 2 * m)?;
        let n = self.n_agents as f64;
        let parts = chi
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let lambda = s
                    .lambda
                    .clone()
                    .ok_or_else(|| Error::InvalidParameter("state has no multiplier".into()))?;
                Ok(stack(&[lambda, problem.coupling().local_residual(i, &s.x) * n]))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(-(&self.t_perp * stack(&parts)))
    }

    /// `‖T⊥ z − z_eq(χ)‖` for the constraint-coupled assembly with
    /// perturbed-consensus trackers bound to (residual, multiplier).
    pub fn cc_tracker_error(&self, problem: &ConstraintCoupledProblem, state: &DistState) -> Result<f64> {
        let z = cc_tracker_stack(state)?;
        Ok((&self.t_perp * z - self.z_eq_cc(problem, &state.chi)?).norm())
    }
}

/// Stacks the two perturbed-consensus states of the constraint-coupled
/// assembly as `col_i(w_i, ζ_i)`, with `w` tracking multipliers and `ζ`
/// tracking scaled residuals.
pub fn cc_tracker_stack(state: &DistState) -> Result<DVector<f64>> {
    let (zeta, w) = match state.trackers.as_slice() {
        [TrackerState::Perturbed { z: zeta }, TrackerState::Perturbed { z: w }] => (zeta, w),
        _ => {
            return Err(Error::Unsupported(
                "expected two perturbed-consensus trackers".into(),
            ))
        }
    };
    let parts: Vec<_> = w
        .iter()
        .zip(zeta)
        .flat_map(|(wi, zi)| [wi.clone(), zi.clone()])
        .collect();
    Ok(stack(&parts))
}

/// Samples `(t, ‖χ − χ⋆‖, ‖T⊥z − z_eq(χ)‖)` along a run of an assembled
/// constraint-coupled algorithm with perturbed trackers, every
/// `record_every` steps and at the horizon. Stops at a divergence event.
pub fn cc_error_samples(
    alg: &DistributedAlgorithm,
    problem: &ConstraintCoupledProblem,
    reference: &[AgentState],
    horizon: usize,
    record_every: usize,
) -> Result<Vec<(usize, f64, f64)>> {
    if record_every == 0 {
        return Err(Error::InvalidParameter("record_every must be positive".into()));
    }
    let coords = build_error_coordinates(alg.n_agents(), 2 * problem.n_constraints())?;
    let chi_star = stack_states(reference);
    let mut samples = Vec::new();
    let mut state = alg.initial_state();
    for t in 0..=horizon {
        if t % record_every == 0 || t == horizon {
            let opt = (stack_states(&state.chi) - &chi_star).norm();
            samples.push((t, opt, coords.cc_tracker_error(problem, &state)?));
        }
        if t == horizon {
            break;
        }
        state = match alg.step(&state) {
            Ok(s) => s,
            Err(Error::Diverged { .. }) => break,
            Err(e) => return Err(e),
        };
        if state_norm(&state.chi) > DIVERGENCE_THRESHOLD {
            break;
        }
    }
    Ok(samples)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    /// Fitted slope of `log(error)` against `t`.
    pub slope: f64,
    pub r_squared: f64,
}

/// Least-squares fit of `log e_t` against `t` on the last `tail_fraction` of
/// the samples. Nonpositive errors are floored at `1e-300` with a warning.
pub fn fit_linear_rate(ts: &[f64], errors: &[f64], tail_fraction: f64) -> Result<RateFit> {
    check_dim("rate fit samples", ts.len(), errors.len())?;
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "tail fraction must lie in (0, 1], got {tail_fraction}"
        )));
    }
    let len = ts.len();
    let take = ((len as f64 * tail_fraction).ceil() as usize).clamp(0, len);
    if take < 2 {
        return Err(Error::InvalidParameter("need at least two samples".into()));
    }
    let start = len - take;
    let mut floored = false;
    let ys: Vec<f64> = errors[start..]
        .iter()
        .map(|&e| {
            if e > 0.0 {
                e.ln()
            } else {
                floored = true;
                1e-300f64.ln()
            }
        })
        .collect();
    if floored {
        warn!("nonpositive errors floored at 1e-300 in rate fit");
    }
    let xs = &ts[start..];
    let nf = take as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("sample times are all equal".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy <= 1e-24 * (1.0 + my * my) {
        1.0
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    Ok(RateFit { slope, r_squared })
}

/// `W(χ) = κ(‖x − x⋆‖² + ‖λ − 1⊗λ⋆‖²) + 2 (Σ_i (λ_i − λ⋆))ᵀ A (x − x⋆)`.
pub fn lyapunov_cc(
    problem: &ConstraintCoupledProblem,
    solution: &Solution,
    kappa: f64,
    chi: &[AgentState],
) -> Result<f64> {
    if kappa.is_nan() || kappa <= 0.0 {
        return Err(Error::InvalidParameter("kappa must be positive".into()));
    }
    check_dim("agents", problem.n_agents(), chi.len())?;
    let m = problem.n_constraints();
    let x = stack(&chi.iter().map(|s| s.x.clone()).collect::<Vec<_>>());
    check_dim("stacked decision", solution.x_star.len(), x.len())?;
    let dx = x - &solution.x_star;
    let mut dl_sq = 0.0;
    let mut dl_sum = DVector::zeros(m);
    for s in chi {
        let l = s
            .lambda
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("state has no multiplier".into()))?;
        check_dim("multiplier", m, l.len())?;
        let d = l - &solution.lambda_star;
        dl_sq += d.norm_squared();
        dl_sum += d;
    }
    let a = problem.coupling().stacked_matrix();
    Ok(kappa * (dx.norm_squared() + dl_sq) + 2.0 * dl_sum.dot(&(a * dx)))
}

/// `√N σ_max(A)`: `W` is positive definite for `κ` above this value.
pub fn lyapunov_kappa_threshold(problem: &ConstraintCoupledProblem) -> f64 {
    let a = problem.coupling().stacked_matrix();
    let smax = a.svd(false, false).singular_values.max();
    (problem.n_agents() as f64).sqrt() * smax
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{generate_quadratic_cc, CouplingConstraint, LocalCost, QuadraticCost};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    fn scalar(q: f64, r: f64) -> Box<dyn LocalCost> {
        Box::new(QuadraticCost::new(DMatrix::from_element(1, 1, q), v(&[r])).unwrap())
    }

    #[test]
    fn one_dimensional_kkt() {
        let p = ConstraintCoupledProblem::new(
            vec![scalar(1.0, -1.0)],
            CouplingConstraint::new(vec![DMatrix::from_element(1, 1, 1.0)], vec![v(&[0.0])]).unwrap(),
        )
        .unwrap();
        let s = solve_cc_active_set(&p).unwrap();
        assert_abs_diff_eq!(s.x_star[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.lambda_star[0], 1.0, epsilon = 1e-14);
        assert_eq!(s.active_set, vec![0]);
        assert!(s.kkt_residual <= 1e-9);
    }

    #[test]
    fn slack_constraints_give_unconstrained_minimizer() {
        let p = ConstraintCoupledProblem::new(
            vec![scalar(2.0, -1.0), scalar(4.0, 2.0)],
            CouplingConstraint::new(
                vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)],
                vec![v(&[1e6]), v(&[1e6])],
            )
            .unwrap(),
        )
        .unwrap();
        let s = solve_cc_active_set(&p).unwrap();
        assert_abs_diff_eq!(s.x_star[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(s.x_star[1], -0.5, epsilon = 1e-14);
        assert!(s.active_set.is_empty());
        assert_eq!(s.lambda_star[0], 0.0);
    }

    #[test]
    fn too_many_constraints() {
        let p = generate_quadratic_cc(4, 3, 11, 1).unwrap();
        assert!(matches!(solve_cc_active_set(&p), Err(Error::TooManyConstraints { got: 11, .. })));
    }

    #[test]
    fn random_solutions_satisfy_kkt() {
        for seed in 0..10 {
            let p = generate_quadratic_cc(4, 2, 3, seed).unwrap();
            let s = solve_cc_active_set(&p).unwrap();
            assert!(s.kkt_residual <= 1e-9, "seed {seed}: {}", s.kkt_residual);
            assert!(s.lambda_star.iter().all(|&l| l >= -1e-9));
        }
    }

    #[test]
    fn consensus_minimizers() {
        let p = ConsensusProblem::new(1, vec![scalar(1.0, 0.0), scalar(1.0, 0.0)]).unwrap();
        assert_eq!(solve_consensus_min(&p).unwrap()[0], 0.0);
        let p = ConsensusProblem::new(1, vec![scalar(1.0, 0.0), scalar(1.0, -2.0)]).unwrap();
        assert_abs_diff_eq!(solve_consensus_min(&p).unwrap()[0], 1.0, epsilon = 1e-15);
        let p = crate::problem::generate_quadratic_consensus(5, 3, 9).unwrap();
        let x = solve_consensus_min(&p).unwrap();
        assert!(p.total_gradient(&x).norm() <= 1e-10);
        let p = ConsensusProblem::new(1, vec![scalar(0.0, 1.0)]).unwrap();
        assert!(matches!(solve_consensus_min(&p), Err(Error::Singular(_))));
    }

    #[test]
    fn two_agent_coordinates() {
        let c = build_error_coordinates(2, 1).unwrap();
        let row = c.t_perp.row(0);
        assert_abs_diff_eq!(row[0].abs(), 1.0 / 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(row[0], -row[1], epsilon = 1e-15);
        assert_abs_diff_eq!((&c.t_perp * v(&[1.0, 1.0]))[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn coordinates_are_orthonormal_complement() {
        let c = build_error_coordinates(10, 4).unwrap();
        assert_eq!(c.t_perp.shape(), (36, 40));
        let gram = &c.t_perp * c.t_perp.transpose();
        assert!((gram - DMatrix::identity(36, 36)).amax() <= 1e-12);
        let ones = DMatrix::from_element(10, 1, 1.0).kronecker(&DMatrix::identity(4, 4));
        assert!((&c.t_perp * ones).amax() <= 1e-12);
        let consensus = stack(&vec![v(&[1.0, -2.0, 0.5, 3.0]); 10]);
        assert!((&c.t_perp * consensus).amax() <= 1e-12);
    }

    #[test]
    fn rate_fit_examples() {
        let ts: Vec<f64> = (0..=100).map(f64::from).collect();
        let es: Vec<f64> = ts.iter().map(|t| (-t).exp()).collect();
        let fit = fit_linear_rate(&ts, &es, 1.0).unwrap();
        assert_abs_diff_eq!(fit.slope, -1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.r_squared, 1.0, epsilon = 1e-10);
        let fit = fit_linear_rate(&ts, &vec![0.3; 101], 0.5).unwrap();
        assert_eq!(fit.slope, 0.0);
    }

    proptest! {
        #[test]
        fn rate_fit_is_scale_invariant(
            rate in 0.01f64..1.0,
            noise in proptest::collection::vec(-0.1f64..0.1, 50),
            c in 1e-3f64..1e3,
        ) {
            let ts: Vec<f64> = (0..50).map(f64::from).collect();
            let es: Vec<f64> = ts.iter().zip(&noise).map(|(t, n)| (-rate * t + n).exp()).collect();
            let scaled: Vec<f64> = es.iter().map(|e| e * c).collect();
            let a = fit_linear_rate(&ts, &es, 0.5).unwrap();
            let b = fit_linear_rate(&ts, &scaled, 0.5).unwrap();
            prop_assert!((a.slope - b.slope).abs() <= 1e-9);
            prop_assert!((a.r_squared - b.r_squared).abs() <= 1e-9);
        }
    }

    #[test]
    fn lyapunov_vanishes_at_solution_and_is_nonnegative() {
        use rand::{Rng, SeedableRng};
        let p = generate_quadratic_cc(4, 2, 2, 6).unwrap();
        let s = solve_cc_active_set(&p).unwrap();
        let dims = HasCoupling::local_dims(&p);
        let star = s.agent_states(&dims).unwrap();
        assert_abs_diff_eq!(lyapunov_cc(&p, &s, 1.0, &star).unwrap(), 0.0, epsilon = 1e-20);
        let kappa = 1.01 * lyapunov_kappa_threshold(&p);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let chi: Vec<_> = star
                .iter()
                .map(|st| AgentState::primal_dual(
                    st.x.map(|x| x + rng.random_range(-3.0..3.0)),
                    st.lambda.as_ref().unwrap().map(|l| l + rng.random_range(-3.0..3.0)),
                ))
                .collect();
            assert!(lyapunov_cc(&p, &s, kappa, &chi).unwrap() >= 0.0);
        }
    }

    #[test]
    fn reference_states_are_stationary() {
        use crate::blocks::{exact_aggregate, Block, BlockParams};
        use crate::problem::{generate_quadratic_aggregative, generate_quadratic_consensus, generate_quadratic_game};
        use std::sync::Arc;
        let setups = vec![
            Setup::Consensus(Arc::new(generate_quadratic_consensus(4, 2, 3).unwrap())),
            Setup::ConstraintCoupled(Arc::new(generate_quadratic_cc(4, 2, 2, 3).unwrap())),
            Setup::Aggregative(Arc::new(generate_quadratic_aggregative(4, 2, 2, 3).unwrap())),
            Setup::Game(Arc::new(generate_quadratic_game(4, 2, 2, 2, 3).unwrap())),
        ];
        for setup in setups {
            let block = Block::new(setup.clone(), BlockParams::default());
            let star = reference_states(&setup).unwrap();
            let next = block.step(&star, &exact_aggregate(&block, &star).unwrap()).unwrap();
            for (a, b) in next.iter().zip(&star) {
                assert!((a.to_vector() - b.to_vector()).amax() <= 1e-10, "{}", block.name());
            }
        }
    }

    #[test]
    fn solution_text_round_trip() {
        let p = generate_quadratic_cc(3, 2, 2, 2).unwrap();
        let s = solve_cc_active_set(&p).unwrap();
        assert_eq!(Solution::from_text(&s.to_text()).unwrap(), s);
    }
}
