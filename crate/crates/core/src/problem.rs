//! Problem data for the four multi-agent setups: consensus optimization,
//! constraint-coupled optimization, aggregative optimization and aggregative
//! games with a shared linear coupling constraint.
//!
//! Costs are trait objects with analytic gradients. Quadratic and linear
//! implementations are provided and are what the random generators produce.

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};
use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};

/// Smallest singular value the stacked constraint matrix must exceed.
pub const RANK_TOL: f64 = 1e-9;
/// Redraw budget for the random constraint matrices.
pub const RANK_RETRIES: usize = 100;

/// Smooth local cost `f_i: R^{n_i} -> R`.
pub trait LocalCost: Debug + Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn as_quadratic(&self) -> Option<&QuadraticCost> {
        None
    }
}

/// `f(x) = ½ xᵀQx + rᵀx` with symmetric `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    pub q: DMatrix<f64>,
    pub r: DVector<f64>,
}

impl QuadraticCost {
    pub fn new(q: DMatrix<f64>, r: DVector<f64>) -> Result<Self> {
        check_dim("quadratic cost Q rows", r.len(), q.nrows())?;
        check_dim("quadratic cost Q cols", r.len(), q.ncols())?;
        Ok(Self { q, r })
    }
}

impl LocalCost for QuadraticCost {
    fn dim(&self) -> usize {
        self.r.len()
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.r.dot(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q * x + &self.r
    }
    fn as_quadratic(&self) -> Option<&QuadraticCost> {
        Some(self)
    }
}

/// Cost `f_i(x_i, s)` depending on the agent's block and an aggregate `s`.
pub trait AggregativeCost: Debug + Send + Sync {
    fn dim(&self) -> usize;
    fn agg_dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>, s: &DVector<f64>) -> f64;
    /// Partial gradient with respect to the agent's own block.
    fn grad_x(&self, x: &DVector<f64>, s: &DVector<f64>) -> DVector<f64>;
    /// Partial gradient with respect to the aggregate.
    fn grad_s(&self, x: &DVector<f64>, s: &DVector<f64>) -> DVector<f64>;
    fn as_quadratic(&self) -> Option<&QuadraticAggregativeCost> {
        None
    }
}

/// `f(x, s) = ½ xᵀPx + xᵀCs + ½ sᵀSs + pᵀx + qᵀs`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticAggregativeCost {
    pub pxx: DMatrix<f64>,
    pub cxs: DMatrix<f64>,
    pub pss: DMatrix<f64>,
    pub lin_x: DVector<f64>,
    pub lin_s: DVector<f64>,
}

impl QuadraticAggregativeCost {
    pub fn new(
        pxx: DMatrix<f64>,
        cxs: DMatrix<f64>,
        pss: DMatrix<f64>,
        lin_x: DVector<f64>,
        lin_s: DVector<f64>,
    ) -> Result<Self> {
        let (n, d) = (lin_x.len(), lin_s.len());
        check_dim("aggregative cost P", n * n, pxx.nrows() * pxx.ncols())?;
        check_dim("aggregative cost C rows", n, cxs.nrows())?;
        check_dim("aggregative cost C cols", d, cxs.ncols())?;
        check_dim("aggregative cost S", d * d, pss.nrows() * pss.ncols())?;
        Ok(Self {
            pxx,
            cxs,
            pss,
            lin_x,
            lin_s,
        })
    }
}

impl AggregativeCost for QuadraticAggregativeCost {
    fn dim(&self) -> usize {
        self.lin_x.len()
    }
    fn agg_dim(&self) -> usize {
        self.lin_s.len()
    }
    fn value(&self, x: &DVector<f64>, s: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.pxx * x))
            + x.dot(&(&self.cxs * s))
            + 0.5 * s.dot(&(&self.pss * s))
            + self.lin_x.dot(x)
            + self.lin_s.dot(s)
    }
    fn grad_x(&self, x: &DVector<f64>, s: &DVector<f64>) -> DVector<f64> {
        &self.pxx * x + &self.cxs * s + &self.lin_x
    }
    fn grad_s(&self, x: &DVector<f64>, s: &DVector<f64>) -> DVector<f64> {
        self.cxs.tr_mul(x) + &self.pss * s + &self.lin_s
    }
    fn as_quadratic(&self) -> Option<&QuadraticAggregativeCost> {
        Some(self)
    }
}

/// Contribution `φ_i: R^{n_i} -> R^d` of an agent to the aggregate.
pub trait Contribution: Debug + Send + Sync {
    fn dim(&self) -> usize;
    fn agg_dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Transposed Jacobian, shape `n_i × d`.
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn as_linear(&self) -> Option<&LinearContribution> {
        None
    }
}

/// `φ(x) = Mx + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearContribution {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl LinearContribution {
    pub fn new(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        check_dim("contribution offset", matrix.nrows(), offset.len())?;
        Ok(Self { matrix, offset })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: DMatrix::identity(dim, dim),
            offset: DVector::zeros(dim),
        }
    }
}

impl Contribution for LinearContribution {
    fn dim(&self) -> usize {
        self.matrix.ncols()
    }
    fn agg_dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn value(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x + &self.offset
    }
    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.matrix.transpose()
    }
    fn as_linear(&self) -> Option<&LinearContribution> {
        Some(self)
    }
}

/// Shared coupling constraint `Σ_i A_i x_i ≤ Σ_i b_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingConstraint {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DVector<f64>>,
}

impl CouplingConstraint {
    pub fn new(a: Vec<DMatrix<f64>>, b: Vec<DVector<f64>>) -> Result<Self> {
        check_dim("constraint offsets", a.len(), b.len())?;
        let m = a.first().map(|ai| ai.nrows()).unwrap_or(0);
        for (ai, bi) in a.iter().zip(&b) {
            check_dim("constraint rows", m, ai.nrows())?;
            check_dim("constraint offset", m, bi.len())?;
        }
        Ok(Self { a, b })
    }

    pub fn n_constraints(&self) -> usize {
        self.a.first().map(|ai| ai.nrows()).unwrap_or(0)
    }

    /// `[A_1 … A_N]`.
    pub fn stacked_matrix(&self) -> DMatrix<f64> {
        let m = self.n_constraints();
        let n: usize = self.a.iter().map(|ai| ai.ncols()).sum();
        let mut out = DMatrix::zeros(m, n);
        let mut col = 0;
        for ai in &self.a {
            out.view_mut((0, col), (m, ai.ncols())).copy_from(ai);
            col += ai.ncols();
        }
        out
    }

    /// `Σ_i b_i`.
    pub fn total_offset(&self) -> DVector<f64> {
        self.b
            .iter()
            .fold(DVector::zeros(self.n_constraints()), |acc, bi| acc + bi)
    }

    /// `A_i x_i − b_i`.
    pub fn local_residual(&self, agent: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.a[agent] * x - &self.b[agent]
    }

    pub fn smallest_singular_value(&self) -> f64 {
        smallest_row_singular_value(&self.stacked_matrix())
    }

    pub fn is_full_row_rank(&self) -> bool {
        self.smallest_singular_value() > RANK_TOL
    }
}

fn smallest_row_singular_value(a: &DMatrix<f64>) -> f64 {
    if a.nrows() > a.ncols() || a.nrows() == 0 {
        return 0.0;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Splits a stacked vector into per-agent blocks.
pub fn split_stacked(x: &DVector<f64>, dims: &[usize]) -> Result<Vec<DVector<f64>>> {
    check_dim("stacked decision", dims.iter().sum(), x.len())?;
    let mut offset = 0;
    Ok(dims
        .iter()
        .map(|&d| {
            let block = x.rows(offset, d).into_owned();
            offset += d;
            block
        })
        .collect())
}

/// Concatenates per-agent blocks.
pub fn stack(parts: &[DVector<f64>]) -> DVector<f64> {
    let n: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(n);
    let mut offset = 0;
    for p in parts {
        out.rows_mut(offset, p.len()).copy_from(p);
        offset += p.len();
    }
    out
}

/// Setups whose costs depend on `σ(x) = (1/N) Σ_i φ_i(x_i)`.
pub trait HasAggregation {
    fn contributions(&self) -> &[Box<dyn Contribution>];

    fn local_dims(&self) -> Vec<usize> {
        self.contributions().iter().map(|c| c.dim()).collect()
    }

    fn agg_dim(&self) -> usize {
        self.contributions()
            .first()
            .map(|c| c.agg_dim())
            .unwrap_or(0)
    }
}

/// Setups with a shared coupling constraint.
pub trait HasCoupling {
    fn coupling(&self) -> &CouplingConstraint;
    fn local_dims(&self) -> Vec<usize>;
}

/// Aggregative variable from per-agent blocks.
pub fn sigma_blocks<P: HasAggregation + ?Sized>(problem: &P, x: &[DVector<f64>]) -> DVector<f64> {
    let contributions = problem.contributions();
    let n = contributions.len() as f64;
    let mut total = DVector::zeros(problem.agg_dim());
    for (phi, xi) in contributions.iter().zip(x) {
        total += phi.value(xi);
    }
    total / n
}

/// `σ(x) = (1/N) Σ_i φ_i(x_i)` on a stacked decision vector.
pub fn sigma<P: HasAggregation + ?Sized>(problem: &P, x: &DVector<f64>) -> Result<DVector<f64>> {
    let blocks = split_stacked(x, &problem.local_dims())?;
    Ok(sigma_blocks(problem, &blocks))
}

/// Coupling residual `Σ_i (A_i x_i − b_i) = Ax − b` on a stacked decision vector.
pub fn constraint_residual<P: HasCoupling + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let blocks = split_stacked(x, &problem.local_dims())?;
    Ok(residual_blocks(problem.coupling(), &blocks))
}

pub(crate) fn residual_blocks(coupling: &CouplingConstraint, x: &[DVector<f64>]) -> DVector<f64> {
    x.iter()
        .enumerate()
        .fold(DVector::zeros(coupling.n_constraints()), |acc, (i, xi)| {
            acc + coupling.local_residual(i, xi)
        })
}

/// `min_x Σ_i f_i(x)` over a common variable.
#[derive(Debug)]
pub struct ConsensusProblem {
    dim: usize,
    costs: Vec<Box<dyn LocalCost>>,
}

impl ConsensusProblem {
    pub fn new(dim: usize, costs: Vec<Box<dyn LocalCost>>) -> Result<Self> {
        if costs.is_empty() {
            return Err(Error::InvalidParameter("no agents".into()));
        }
        for c in &costs {
            check_dim("consensus cost", dim, c.dim())?;
        }
        Ok(Self { dim, costs })
    }

    pub fn n_agents(&self) -> usize {
        self.costs.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn costs(&self) -> &[Box<dyn LocalCost>] {
        &self.costs
    }

    /// `Σ_j ∇f_j(x)`.
    pub fn total_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.costs
            .iter()
            .fold(DVector::zeros(self.dim), |acc, f| acc + f.gradient(x))
    }
}

/// `min Σ_i f_i(x_i)` subject to `Σ_i A_i x_i ≤ Σ_i b_i`.
#[derive(Debug)]
pub struct ConstraintCoupledProblem {
    costs: Vec<Box<dyn LocalCost>>,
    coupling: CouplingConstraint,
}

impl ConstraintCoupledProblem {
    /// Validates dimensions and full row rank of the stacked constraint matrix.
    pub fn new(costs: Vec<Box<dyn LocalCost>>, coupling: CouplingConstraint) -> Result<Self> {
        if costs.is_empty() {
            return Err(Error::InvalidParameter("no agents".into()));
        }
        check_dim("constraint blocks", costs.len(), coupling.a.len())?;
        for (f, ai) in costs.iter().zip(&coupling.a) {
            check_dim("constraint columns", f.dim(), ai.ncols())?;
        }
        if !coupling.is_full_row_rank() {
            return Err(Error::RankDeficient { attempts: 0 });
        }
        Ok(Self { costs, coupling })
    }

    pub fn n_agents(&self) -> usize {
        self.costs.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.coupling.n_constraints()
    }

    pub fn costs(&self) -> &[Box<dyn LocalCost>] {
        &self.costs
    }

    /// Quadratic data `(Q_i, r_i)` when every cost is quadratic.
    pub fn quadratic_costs(&self) -> Option<Vec<&QuadraticCost>> {
        self.costs.iter().map(|c| c.as_quadratic()).collect()
    }
}

impl HasCoupling for ConstraintCoupledProblem {
    fn coupling(&self) -> &CouplingConstraint {
        &self.coupling
    }
    fn local_dims(&self) -> Vec<usize> {
        self.costs.iter().map(|c| c.dim()).collect()
    }
}

/// `min Σ_i f_i(x_i, σ(x))`.
#[derive(Debug)]
pub struct AggregativeProblem {
    costs: Vec<Box<dyn AggregativeCost>>,
    contributions: Vec<Box<dyn Contribution>>,
}

impl AggregativeProblem {
    pub fn new(
        costs: Vec<Box<dyn AggregativeCost>>,
        contributions: Vec<Box<dyn Contribution>>,
    ) -> Result<Self> {
        validate_aggregative(&costs, &contributions)?;
        Ok(Self {
            costs,
            contributions,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.costs.len()
    }

    pub fn costs(&self) -> &[Box<dyn AggregativeCost>] {
        &self.costs
    }

    /// `f_σ(x) = Σ_i f_i(x_i, σ(x))`.
    pub fn total_cost(&self, x: &[DVector<f64>]) -> f64 {
        let s = sigma_blocks(self, x);
        self.costs
            .iter()
            .zip(x)
            .map(|(f, xi)| f.value(xi, &s))
            .sum()
    }

    /// Per-agent blocks of `∇f_σ(x)`:
    /// `∇_1 f_i(x_i, σ) + ∇φ_i(x_i) · (1/N) Σ_j ∇_2 f_j(x_j, σ)`.
    pub fn gradient_blocks(&self, x: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let s = sigma_blocks(self, x);
        let n = self.n_agents() as f64;
        let mean_grad_s = self
            .costs
            .iter()
            .zip(x)
            .fold(DVector::zeros(s.len()), |acc, (f, xi)| acc + f.grad_s(xi, &s))
            / n;
        self.costs
            .iter()
            .zip(&self.contributions)
            .zip(x)
            .map(|((f, phi), xi)| f.grad_x(xi, &s) + phi.jacobian(xi) * &mean_grad_s)
            .collect()
    }
}

impl HasAggregation for AggregativeProblem {
    fn contributions(&self) -> &[Box<dyn Contribution>] {
        &self.contributions
    }
}

/// Aggregative game: agent `i` minimizes `J_i(x_i, σ(x))` under the shared
/// coupling constraint.
#[derive(Debug)]
pub struct AggregativeGame {
    costs: Vec<Box<dyn AggregativeCost>>,
    contributions: Vec<Box<dyn Contribution>>,
    coupling: CouplingConstraint,
}

impl AggregativeGame {
    pub fn new(
        costs: Vec<Box<dyn AggregativeCost>>,
        contributions: Vec<Box<dyn Contribution>>,
        coupling: CouplingConstraint,
    ) -> Result<Self> {
        validate_aggregative(&costs, &contributions)?;
        check_dim("constraint blocks", costs.len(), coupling.a.len())?;
        for (f, ai) in costs.iter().zip(&coupling.a) {
            check_dim("constraint columns", f.dim(), ai.ncols())?;
        }
        if !coupling.is_full_row_rank() {
            return Err(Error::RankDeficient { attempts: 0 });
        }
        Ok(Self {
            costs,
            contributions,
            coupling,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.costs.len()
    }

    pub fn costs(&self) -> &[Box<dyn AggregativeCost>] {
        &self.costs
    }

    /// `G_i(x_i, s) = ∇_1 J_i(x_i, s) + (∇φ_i(x_i) / N) ∇_2 J_i(x_i, s)`.
    pub fn local_pseudo_gradient(
        &self,
        agent: usize,
        x: &DVector<f64>,
        s: &DVector<f64>,
    ) -> DVector<f64> {
        let cost = &self.costs[agent];
        let n = self.n_agents() as f64;
        cost.grad_x(x, s) + self.contributions[agent].jacobian(x) * cost.grad_s(x, s) / n
    }

    /// Stacked pseudo-gradient `col(G_i(x_i, σ(x)))`.
    pub fn pseudo_gradient(&self, x: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let s = sigma_blocks(self, x);
        x.iter()
            .enumerate()
            .map(|(i, xi)| self.local_pseudo_gradient(i, xi, &s))
            .collect()
    }
}

impl HasAggregation for AggregativeGame {
    fn contributions(&self) -> &[Box<dyn Contribution>] {
        &self.contributions
    }
}

impl HasCoupling for AggregativeGame {
    fn coupling(&self) -> &CouplingConstraint {
        &self.coupling
    }
    fn local_dims(&self) -> Vec<usize> {
        self.costs.iter().map(|c| c.dim()).collect()
    }
}

fn validate_aggregative(
    costs: &[Box<dyn AggregativeCost>],
    contributions: &[Box<dyn Contribution>],
) -> Result<()> {
    if costs.is_empty() {
        return Err(Error::InvalidParameter("no agents".into()));
    }
    check_dim("contributions", costs.len(), contributions.len())?;
    let d = costs[0].agg_dim();
    for (f, phi) in costs.iter().zip(contributions) {
        check_dim("contribution input", f.dim(), phi.dim())?;
        check_dim("cost aggregate", d, f.agg_dim())?;
        check_dim("contribution output", d, phi.agg_dim())?;
    }
    Ok(())
}

// --- random instance generation -------------------------------------------

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn gaussian_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

fn uniform_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(Open01))
}

/// Haar-like random orthogonal matrix: QR of a Gaussian matrix with the
/// columns of `Q` sign-fixed so that `R` has a nonnegative diagonal.
fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(rng, n, n).qr();
    let (mut q, r) = qr.unpack();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Symmetric `U diag(eigs) Uᵀ` with a random orthogonal `U`.
fn random_symmetric(rng: &mut ChaCha8Rng, eigs: &DVector<f64>) -> DMatrix<f64> {
    let u = random_orthogonal(rng, eigs.len());
    let m = &u * DMatrix::from_diagonal(eigs) * u.transpose();
    (&m + m.transpose()) * 0.5
}

/// Random quadratic constraint-coupled instance.
///
/// Per agent, in order: `Q_i = U_i D_i U_iᵀ` with `D_i` uniform in (0,1),
/// `r_i` standard Gaussian, `b_i` uniform in (0,1). The Gaussian `A_i` are drawn
/// afterwards and redrawn together until the stacked matrix has full row rank.
pub fn generate_quadratic_cc(
    n_agents: usize,
    local_dim: usize,
    constraint_dim: usize,
    seed: u64,
) -> Result<ConstraintCoupledProblem> {
    if n_agents == 0 || local_dim == 0 || constraint_dim == 0 {
        return Err(Error::InvalidParameter(
            "dimensions must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut costs: Vec<Box<dyn LocalCost>> = Vec::with_capacity(n_agents);
    let mut offsets = Vec::with_capacity(n_agents);
    for _ in 0..n_agents {
        let eigs = uniform_vector(&mut rng, local_dim);
        let q = random_symmetric(&mut rng, &eigs);
        let r = gaussian_vector(&mut rng, local_dim);
        costs.push(Box::new(QuadraticCost { q, r }));
        offsets.push(uniform_vector(&mut rng, constraint_dim));
    }
    for _ in 0..RANK_RETRIES {
        let a: Vec<_> = (0..n_agents)
            .map(|_| gaussian_matrix(&mut rng, constraint_dim, local_dim))
            .collect();
        let coupling = CouplingConstraint::new(a, offsets.clone())?;
        if coupling.is_full_row_rank() {
            return ConstraintCoupledProblem::new(costs, coupling);
        }
    }
    Err(Error::RankDeficient {
        attempts: RANK_RETRIES,
    })
}

/// Random strongly convex quadratic consensus instance; each `Q_i` has
/// eigenvalues uniform in (0,1) and `r_i` is standard Gaussian.
pub fn generate_quadratic_consensus(
    n_agents: usize,
    dim: usize,
    seed: u64,
) -> Result<ConsensusProblem> {
    if n_agents == 0 || dim == 0 {
        return Err(Error::InvalidParameter(
            "dimensions must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let costs = (0..n_agents)
        .map(|_| {
            let eigs = uniform_vector(&mut rng, dim);
            let q = random_symmetric(&mut rng, &eigs);
            let r = gaussian_vector(&mut rng, dim);
            Box::new(QuadraticCost { q, r }) as Box<dyn LocalCost>
        })
        .collect();
    ConsensusProblem::new(dim, costs)
}

type AggregativeTerms = (Vec<Box<dyn AggregativeCost>>, Vec<Box<dyn Contribution>>);

/// Quadratic aggregative costs with linear contributions.
///
/// `P_i` has eigenvalues in (1, 2), `S_i` in (0, 1); the cross term and the
/// contribution matrices are scaled Gaussians so the total cost stays
/// strongly convex.
fn random_aggregative_terms(
    rng: &mut ChaCha8Rng,
    n_agents: usize,
    local_dim: usize,
    agg_dim: usize,
) -> AggregativeTerms {
    let mut costs: Vec<Box<dyn AggregativeCost>> = Vec::new();
    let mut contributions: Vec<Box<dyn Contribution>> = Vec::new();
    for _ in 0..n_agents {
        let eigs = uniform_vector(rng, local_dim).add_scalar(1.0);
        let pxx = random_symmetric(rng, &eigs);
        let cxs = gaussian_matrix(rng, local_dim, agg_dim) * 0.2;
        let s_eigs = uniform_vector(rng, agg_dim);
        let pss = random_symmetric(rng, &s_eigs);
        let lin_x = gaussian_vector(rng, local_dim);
        let lin_s = gaussian_vector(rng, agg_dim);
        costs.push(Box::new(QuadraticAggregativeCost {
            pxx,
            cxs,
            pss,
            lin_x,
            lin_s,
        }));
        let matrix = gaussian_matrix(rng, agg_dim, local_dim) * 0.5;
        let offset = gaussian_vector(rng, agg_dim) * 0.1;
        contributions.push(Box::new(LinearContribution { matrix, offset }));
    }
    (costs, contributions)
}

/// Random strongly convex quadratic aggregative instance.
pub fn generate_quadratic_aggregative(
    n_agents: usize,
    local_dim: usize,
    agg_dim: usize,
    seed: u64,
) -> Result<AggregativeProblem> {
    if n_agents == 0 || local_dim == 0 || agg_dim == 0 {
        return Err(Error::InvalidParameter(
            "dimensions must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RANK_RETRIES {
        let (costs, contributions) =
            random_aggregative_terms(&mut rng, n_agents, local_dim, agg_dim);
        let problem = AggregativeProblem::new(costs, contributions)?;
        let dims = vec![local_dim; n_agents];
        let hessian = affine_jacobian(&dims, |x| problem.gradient_blocks(x));
        let sym = (&hessian + hessian.transpose()) * 0.5;
        if sym.symmetric_eigenvalues().min() > 1e-3 {
            return Ok(problem);
        }
    }
    Err(Error::InvalidParameter(
        "could not draw a strongly convex aggregative instance".into(),
    ))
}

/// Random linear-quadratic aggregative game with a strongly monotone
/// pseudo-gradient and a full-row-rank coupling constraint.
pub fn generate_quadratic_game(
    n_agents: usize,
    local_dim: usize,
    agg_dim: usize,
    constraint_dim: usize,
    seed: u64,
) -> Result<AggregativeGame> {
    if n_agents == 0 || local_dim == 0 || agg_dim == 0 || constraint_dim == 0 {
        return Err(Error::InvalidParameter(
            "dimensions must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = vec![local_dim; n_agents];
    for _ in 0..RANK_RETRIES {
        let (costs, contributions) =
            random_aggregative_terms(&mut rng, n_agents, local_dim, agg_dim);
        let offsets: Vec<_> = (0..n_agents)
            .map(|_| uniform_vector(&mut rng, constraint_dim))
            .collect();
        let a: Vec<_> = (0..n_agents)
            .map(|_| gaussian_matrix(&mut rng, constraint_dim, local_dim))
            .collect();
        let coupling = CouplingConstraint::new(a, offsets)?;
        if !coupling.is_full_row_rank() {
            continue;
        }
        let game = AggregativeGame::new(costs, contributions, coupling)?;
        let jac = affine_jacobian(&dims, |x| game.pseudo_gradient(x));
        let sym = (&jac + jac.transpose()) * 0.5;
        if sym.symmetric_eigenvalues().min() > 1e-3 {
            return Ok(game);
        }
    }
    Err(Error::InvalidParameter(
        "could not draw a strongly monotone game instance".into(),
    ))
}

/// Jacobian of an affine stacked map, probed column by column.
pub(crate) fn affine_jacobian<F>(dims: &[usize], map: F) -> DMatrix<f64>
where
    F: Fn(&[DVector<f64>]) -> Vec<DVector<f64>>,
{
    let n: usize = dims.iter().sum();
    let zero: Vec<DVector<f64>> = dims.iter().map(|&d| DVector::zeros(d)).collect();
    let base = stack(&map(&zero));
    let mut jac = DMatrix::zeros(n, n);
    for col in 0..n {
        let mut e = DVector::zeros(n);
        e[col] = 1.0;
        let probe = split_stacked(&e, dims).expect("dims are consistent");
        let value = stack(&map(&probe)) - &base;
        jac.set_column(col, &value);
    }
    jac
}
