//! Dynamic average consensus trackers.
//!
//! Every tracker estimates the network mean of per-agent signals `u_i` and
//! exposes a per-agent proxy `α̂_i`. Steps are synchronous: a round reads only
//! the previous global state.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::error::{check_dim, Error, Result};
use crate::graph::{Graph, Network, WeightMatrix};

/// Relative state change below which a tracker is considered stationary.
pub const STATIONARITY_TOL: f64 = 1e-12;
/// Iteration budget for [`tracker_fixed_point_error`].
pub const FIXED_POINT_BUDGET: usize = 1_000_000;
/// Spread of stationary proxies above which they are not in agreement.
pub const AGREEMENT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiDacParams {
    pub gamma: f64,
    pub k_p: f64,
    pub k_i: f64,
}

impl Default for PiDacParams {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            k_p: 0.4,
            k_i: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RAdmmParams {
    pub rho: f64,
    pub beta: f64,
}

impl Default for RAdmmParams {
    fn default() -> Self {
        Self { rho: 0.9, beta: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrackerKind {
    /// Perturbed consensus in causal form, proxy `u_i + z_i`.
    Perturbed,
    /// Proportional-integral dynamic average consensus, proxy `p_i`.
    PiDac(PiDacParams),
    /// Robust ADMM-based dynamic average consensus on edge variables.
    RAdmm(RAdmmParams),
    /// Stateless stub returning the exact mean to every agent.
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrackerState {
    Perturbed {
        z: Vec<DVector<f64>>,
    },
    PiDac {
        p: Vec<DVector<f64>>,
        q: Vec<DVector<f64>>,
    },
    /// `z[i][k]` is the variable of edge `(i, j)` with `j` the `k`-th neighbor of `i`.
    RAdmm {
        z: Vec<Vec<DVector<f64>>>,
    },
    Exact,
}

impl TrackerState {
    /// Flattened state, for norms and stationarity checks.
    pub fn to_vector(&self) -> DVector<f64> {
        let parts: Vec<DVector<f64>> = match self {
            TrackerState::Perturbed { z } => z.clone(),
            TrackerState::PiDac { p, q } => p.iter().chain(q).cloned().collect(),
            TrackerState::RAdmm { z } => z.iter().flatten().cloned().collect(),
            TrackerState::Exact => Vec::new(),
        };
        crate::problem::stack(&parts)
    }

    /// Agent `i`'s part of the state.
    pub fn agent_part(&self, agent: usize) -> DVector<f64> {
        match self {
            TrackerState::Perturbed { z } => z[agent].clone(),
            TrackerState::PiDac { p, q } => crate::problem::stack(&[p[agent].clone(), q[agent].clone()]),
            TrackerState::RAdmm { z } => crate::problem::stack(&z[agent]),
            TrackerState::Exact => DVector::zeros(0),
        }
    }
}

fn check_signals(n_agents: usize, dim: usize, u: &[DVector<f64>]) -> Result<()> {
    check_dim("tracker signals", n_agents, u.len())?;
    for ui in u {
        check_dim("tracker signal", dim, ui.len())?;
    }
    Ok(())
}

fn mean(u: &[DVector<f64>]) -> DVector<f64> {
    let dim = u.first().map_or(0, |x| x.len());
    u.iter().fold(DVector::zeros(dim), |acc, x| acc + x) / u.len() as f64
}

/// `Σ_j w_ij v_j` for every agent, over `𝒩_i ∪ {i}`.
fn mix(weights: &WeightMatrix, graph: &Graph, v: &[DVector<f64>]) -> Vec<DVector<f64>> {
    (0..v.len())
        .map(|i| {
            let mut acc = &v[i] * weights.get(i, i);
            for &j in graph.neighbors(i) {
                acc += &v[j] * weights.get(i, j);
            }
            acc
        })
        .collect()
}

/// `Σ_j w_ij (v_i − v_j)` for every agent.
fn laplacian(weights: &WeightMatrix, graph: &Graph, v: &[DVector<f64>]) -> Vec<DVector<f64>> {
    (0..v.len())
        .map(|i| {
            let mut acc = DVector::zeros(v[i].len());
            for &j in graph.neighbors(i) {
                acc += (&v[i] - &v[j]) * weights.get(i, j);
            }
            acc
        })
        .collect()
}

/// `z_i⁺ = Σ_j w_ij (z_j + u_j) − u_i`; returns `(z⁺, u + z⁺)`.
#[allow(clippy::type_complexity)]
pub fn perturbed_step(
    u: &[DVector<f64>],
    z: &[DVector<f64>],
    network: &Network,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let n = network.n_agents();
    let dim = u.first().map_or(0, |x| x.len());
    check_signals(n, dim, u)?;
    check_signals(n, dim, z)?;
    let sum: Vec<_> = z.iter().zip(u).map(|(zi, ui)| zi + ui).collect();
    let next: Vec<_> = mix(&network.weights, &network.graph, &sum)
        .into_iter()
        .zip(u)
        .map(|(m, ui)| m - ui)
        .collect();
    let proxies = next.iter().zip(u).map(|(zi, ui)| zi + ui).collect();
    Ok((next, proxies))
}

/// One PI-DAC round; returns `(p⁺, q⁺, p⁺)`.
///
/// `p_i⁺ = (1−γ)p_i − k_P Σ_j w_ij(p_i−p_j) + k_I Σ_j w_ij(q_i−q_j) + γu_i` and
/// `q_i⁺ = q_i − k_I Σ_j w_ij(p_i−p_j)`.
#[allow(clippy::type_complexity)]
pub fn pi_dac_step(
    u: &[DVector<f64>],
    p: &[DVector<f64>],
    q: &[DVector<f64>],
    network: &Network,
    params: &PiDacParams,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let n = network.n_agents();
    let dim = u.first().map_or(0, |x| x.len());
    check_signals(n, dim, u)?;
    check_signals(n, dim, p)?;
    check_signals(n, dim, q)?;
    let lp = laplacian(&network.weights, &network.graph, p);
    let lq = laplacian(&network.weights, &network.graph, q);
    let p_next: Vec<_> = (0..n)
        .map(|i| {
            &p[i] * (1.0 - params.gamma) - &lp[i] * params.k_p
                + &lq[i] * params.k_i
                + &u[i] * params.gamma
        })
        .collect();
    let q_next: Vec<_> = (0..n).map(|i| &q[i] - &lp[i] * params.k_i).collect();
    let proxies = p_next.clone();
    Ok((p_next, q_next, proxies))
}

/// `α̂_i = (u_i + Σ_{j∈𝒩_i} z_ij) / (1 + ρ deg_i)`.
pub fn radmm_proxies(
    u: &[DVector<f64>],
    z: &[Vec<DVector<f64>>],
    graph: &Graph,
    params: &RAdmmParams,
) -> Vec<DVector<f64>> {
    (0..u.len())
        .map(|i| {
            let total = z[i].iter().fold(u[i].clone(), |acc, zij| acc + zij);
            total / (1.0 + params.rho * graph.degree(i) as f64)
        })
        .collect()
}

/// One R-ADMM round. Proxies are computed from the current edge variables,
/// then every edge is updated with
/// `z_ij⁺ = (1−β)z_ij + β(−z_ji + 2ρ α̂_j)`. Returns `(z⁺, α̂)`.
#[allow(clippy::type_complexity)]
pub fn radmm_dac_step(
    u: &[DVector<f64>],
    z: &[Vec<DVector<f64>>],
    graph: &Graph,
    params: &RAdmmParams,
) -> Result<(Vec<Vec<DVector<f64>>>, Vec<DVector<f64>>)> {
    let n = graph.n_agents();
    let dim = u.first().map_or(0, |x| x.len());
    check_signals(n, dim, u)?;
    check_dim("edge variable sets", n, z.len())?;
    for (i, zi) in z.iter().enumerate() {
        check_dim("edge variables", graph.degree(i), zi.len())?;
    }
    let proxies = radmm_proxies(u, z, graph, params);
    let next = (0..n)
        .map(|i| {
            graph
                .neighbors(i)
                .iter()
                .enumerate()
                .map(|(k, &j)| {
                    let back = graph.neighbors(j).binary_search(&i).expect("undirected graph");
                    &z[i][k] * (1.0 - params.beta)
                        + (-&z[j][back] + &proxies[j] * (2.0 * params.rho)) * params.beta
                })
                .collect()
        })
        .collect();
    Ok((next, proxies))
}

/// Spectral radius of the PI-DAC iteration restricted to the disagreement
/// subspace. One zero Laplacian eigenvalue (the consensus direction) is
/// excluded, so a disconnected graph yields radius 1.
pub fn pi_dac_spectral_radius(weights: &WeightMatrix, params: &PiDacParams) -> f64 {
    let n = weights.n_agents();
    let lap = DMatrix::identity(n, n) - weights.matrix();
    let mut eigs: Vec<f64> = lap.symmetric_eigenvalues().iter().copied().collect();
    eigs.sort_by(f64::total_cmp);
    eigs.iter()
        .skip(1)
        .map(|&l| {
            let m = Matrix2::new(1.0 - params.gamma - params.k_p * l, params.k_i * l, -params.k_i * l, 1.0);
            m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// A tracker bound to a network and a signal dimension.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub kind: TrackerKind,
    pub network: Arc<Network>,
    pub dim: usize,
}

impl Tracker {
    /// Validates parameters; PI-DAC must pass the spectral gate.
    pub fn new(kind: TrackerKind, network: Arc<Network>, dim: usize) -> Result<Self> {
        match kind {
            TrackerKind::PiDac(p) => {
                if !(p.gamma > 0.0 && p.gamma < 1.0 && p.k_p > 0.0 && p.k_i > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "PI-DAC needs gamma in (0,1) and positive gains, got {p:?}"
                    )));
                }
                let radius = pi_dac_spectral_radius(&network.weights, &p);
                if radius >= 1.0 {
                    return Err(Error::SpectralGate { radius });
                }
            }
            TrackerKind::RAdmm(p) => {
                if !(p.rho > 0.0 && p.beta > 0.0 && p.beta < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "R-ADMM needs rho > 0 and beta in (0,1), got {p:?}"
                    )));
                }
            }
            TrackerKind::Perturbed | TrackerKind::Exact => {}
        }
        Ok(Self { kind, network, dim })
    }

    pub fn n_agents(&self) -> usize {
        self.network.n_agents()
    }

    /// Zero initialization.
    pub fn initial_state(&self) -> TrackerState {
        let n = self.n_agents();
        let zeros = || vec![DVector::zeros(self.dim); n];
        match self.kind {
            TrackerKind::Perturbed => TrackerState::Perturbed { z: zeros() },
            TrackerKind::PiDac(_) => TrackerState::PiDac { p: zeros(), q: zeros() },
            TrackerKind::RAdmm(_) => TrackerState::RAdmm {
                z: (0..n)
                    .map(|i| vec![DVector::zeros(self.dim); self.network.graph.degree(i)])
                    .collect(),
            },
            TrackerKind::Exact => TrackerState::Exact,
        }
    }

    /// Proxies `α̂_i(u_i, z)` read from the current state.
    pub fn proxies(&self, state: &TrackerState, u: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        check_signals(self.n_agents(), self.dim, u)?;
        match (&self.kind, state) {
            (TrackerKind::Perturbed, TrackerState::Perturbed { z }) => {
                Ok(z.iter().zip(u).map(|(zi, ui)| zi + ui).collect())
            }
            (TrackerKind::PiDac(_), TrackerState::PiDac { p, .. }) => Ok(p.clone()),
            (TrackerKind::RAdmm(params), TrackerState::RAdmm { z }) => {
                Ok(radmm_proxies(u, z, &self.network.graph, params))
            }
            (TrackerKind::Exact, TrackerState::Exact) => Ok(vec![mean(u); u.len()]),
            _ => Err(Error::InvalidParameter("tracker state does not match tracker kind".into())),
        }
    }

    /// One synchronous round `z⁺ = h(u, z)`.
    pub fn step(&self, state: &TrackerState, u: &[DVector<f64>]) -> Result<TrackerState> {
        Ok(self.advance(state, u)?.0)
    }

    /// One round, also returning the proxies reported by the underlying op.
    fn advance(
        &self,
        state: &TrackerState,
        u: &[DVector<f64>],
    ) -> Result<(TrackerState, Vec<DVector<f64>>)> {
        let network = self.network.as_ref();
        match (&self.kind, state) {
            (TrackerKind::Perturbed, TrackerState::Perturbed { z }) => {
                let (z, proxies) = perturbed_step(u, z, network)?;
                Ok((TrackerState::Perturbed { z }, proxies))
            }
            (TrackerKind::PiDac(params), TrackerState::PiDac { p, q }) => {
                let (p, q, proxies) = pi_dac_step(u, p, q, network, params)?;
                Ok((TrackerState::PiDac { p, q }, proxies))
            }
            (TrackerKind::RAdmm(params), TrackerState::RAdmm { z }) => {
                let (z, proxies) = radmm_dac_step(u, z, &network.graph, params)?;
                Ok((TrackerState::RAdmm { z }, proxies))
            }
            (TrackerKind::Exact, TrackerState::Exact) => {
                check_signals(self.n_agents(), self.dim, u)?;
                Ok((TrackerState::Exact, vec![mean(u); u.len()]))
            }
            _ => Err(Error::InvalidParameter("tracker state does not match tracker kind".into())),
        }
    }
}

/// Runs the tracker on static signals until the relative state change drops
/// below [`STATIONARITY_TOL`] and returns the largest per-agent deviation
/// (max-norm) of the proxies from the exact mean.
///
/// Fails when the budget is exhausted, or when the stationary proxies do not
/// agree with each other (for instance on a disconnected graph, where the
/// tracker settles on per-component means).
pub fn tracker_fixed_point_error(
    tracker: &Tracker,
    signals: &[DVector<f64>],
    budget: usize,
) -> Result<f64> {
    check_signals(tracker.n_agents(), tracker.dim, signals)?;
    let target = mean(signals);
    let mut state = tracker.initial_state();
    let mut iterations = 0;
    loop {
        let next = tracker.step(&state, signals)?;
        iterations += 1;
        let change = (next.to_vector() - state.to_vector()).norm();
        let scale = next.to_vector().norm().max(1.0);
        state = next;
        if change <= STATIONARITY_TOL * scale {
            break;
        }
        if iterations >= budget {
            let deviation = max_deviation(&tracker.proxies(&state, signals)?, &target);
            return Err(Error::TrackerNotConverged { iterations, deviation });
        }
    }
    let proxies = tracker.proxies(&state, signals)?;
    let deviation = max_deviation(&proxies, &target);
    let first = &proxies[0];
    let spread = max_deviation(&proxies, first);
    let scale = signals.iter().map(|s| s.amax()).fold(1.0, f64::max);
    if spread > AGREEMENT_TOL * scale {
        return Err(Error::TrackerNotConverged { iterations, deviation });
    }
    Ok(deviation)
}

pub(crate) fn max_deviation(proxies: &[DVector<f64>], target: &DVector<f64>) -> f64 {
    proxies
        .iter()
        .map(|p| (p - target).amax())
        .fold(0.0, f64::max)
}

/// Two trackers in cascade: the outer tracker's signals are computed from the
/// inner tracker's proxies.
#[derive(Debug, Clone)]
pub struct CascadeTracker {
    pub inner: Tracker,
    pub outer: Tracker,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeState {
    pub inner: TrackerState,
    pub outer: TrackerState,
}

impl CascadeTracker {
    pub fn new(inner: Tracker, outer: Tracker) -> Result<Self> {
        if inner.network.graph != outer.network.graph {
            return Err(Error::InvalidGraph("cascade stages use different graphs".into()));
        }
        Ok(Self { inner, outer })
    }

    pub fn initial_state(&self) -> CascadeState {
        CascadeState {
            inner: self.inner.initial_state(),
            outer: self.outer.initial_state(),
        }
    }

    /// Inner round on `φ_I,i`, then outer round on `φ_E,i(i, α̂_I,i)` with the
    /// inner proxies just produced. Returns the new state and both proxy sets.
    #[allow(clippy::type_complexity)]
    pub fn step<F>(
        &self,
        inner_signals: &[DVector<f64>],
        outer_signal: F,
        state: &CascadeState,
    ) -> Result<(CascadeState, Vec<DVector<f64>>, Vec<DVector<f64>>)>
    where
        F: Fn(usize, &DVector<f64>) -> DVector<f64>,
    {
        let (inner, inner_proxies) = self.inner.advance(&state.inner, inner_signals)?;
        let outer_signals: Vec<_> = inner_proxies
            .iter()
            .enumerate()
            .map(|(i, p)| outer_signal(i, p))
            .collect();
        let (outer, outer_proxies) = self.outer.advance(&state.outer, &outer_signals)?;
        Ok((CascadeState { inner, outer }, inner_proxies, outer_proxies))
    }
}
