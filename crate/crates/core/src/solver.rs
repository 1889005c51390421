//! Robust, optionally uncertainty-weighted rotation averaging.
//!
//! Minimizes `Σ_e ρ(‖W_e r_e‖²)` over the absolute rotations, where `r_e` is
//! the relative residual of edge `e` and `W_e` its weighting matrix. The
//! outer loop freezes IRLS weights `ρ'(s_e)`. The inner loop runs damped
//! Gauss–Newton on the frozen weighted least-squares problem with tangent
//! updates `R_i ← R_i·exp(δ_i)`. The smallest node id is held fixed.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{LossKind, LossSpec, DEFAULT_SCALE};
use crate::so3::{relative_residual, right_jacobian_inv, Rotation};
use crate::viewgraph::{
    connected_components, spanning_tree_init, EdgeMeasurement, NodeId, SpanningTreeCriterion,
    ViewGraph,
};

/// Graphs with at most this many nodes use a dense normal-equation solve.
pub const DENSE_NODE_LIMIT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    None,
    InlierCount,
    CovTrace,
    CovFro,
    CovFull,
}

impl Weighting {
    pub const ALL: [Weighting; 5] = [
        Weighting::None,
        Weighting::InlierCount,
        Weighting::CovTrace,
        Weighting::CovFro,
        Weighting::CovFull,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Weighting::None => "none",
            Weighting::InlierCount => "inlier_count",
            Weighting::CovTrace => "cov_trace",
            Weighting::CovFro => "cov_fro",
            Weighting::CovFull => "cov_full",
        }
    }

    /// Covariance-based modes produce unitless (whitened) residuals.
    pub fn is_whitened(self) -> bool {
        matches!(
            self,
            Weighting::CovTrace | Weighting::CovFro | Weighting::CovFull
        )
    }
}

impl fmt::Display for Weighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Weighting::ALL
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown weighting '{s}'")))
    }
}

/// Default loss scale for a weighting mode: radians for `none` and
/// `inlier_count`, whitened units for the covariance modes.
pub fn default_loss_scale(weighting: Weighting) -> f64 {
    match weighting {
        Weighting::None => DEFAULT_SCALE,
        Weighting::InlierCount => INLIER_COUNT_SCALE,
        _ => WHITENED_SCALE,
    }
}

const INLIER_COUNT_SCALE: f64 = 0.06;
// whitened inlier residual norms follow χ₃ (99% quantile 3.37)
const WHITENED_SCALE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinearSolver {
    /// Dense up to [`DENSE_NODE_LIMIT`] nodes, sparse above.
    #[default]
    Auto,
    Dense,
    Sparse,
}

/// IRLS stage run before the main loss to move the initialization into the
/// basin of the main loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmStart {
    pub loss: LossSpec,
    pub max_outer: usize,
}

impl WarmStart {
    /// Near-L1 stage: soft-L1 with a scale well below the noise level.
    pub fn l1_like(weighting: Weighting) -> Self {
        let scale = 0.1 * default_loss_scale(weighting);
        WarmStart {
            loss: LossSpec::SoftL1 { scale },
            max_outer: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub loss: LossSpec,
    pub weighting: Weighting,
    pub max_outer_irls: usize,
    pub max_inner_gn: usize,
    pub gradient_tol: f64,
    pub step_tol: f64,
    pub cost_rel_tol: f64,
    pub damping_init: f64,
    /// Substitute unit weight for edges lacking the data a mode needs.
    pub unit_fallback: bool,
    pub warm_start: Option<WarmStart>,
    pub linear_solver: LinearSolver,
}

impl SolverConfig {
    pub fn new(loss: LossSpec, weighting: Weighting) -> Self {
        SolverConfig {
            loss,
            weighting,
            max_outer_irls: 32,
            max_inner_gn: 10,
            gradient_tol: 1e-10,
            step_tol: 1e-12,
            cost_rel_tol: 1e-9,
            damping_init: 1e-4,
            unit_fallback: true,
            warm_start: None,
            linear_solver: LinearSolver::Auto,
        }
    }

    /// Loss with the mode's default scale plus the near-L1 warm start.
    pub fn with_defaults(kind: LossKind, weighting: Weighting) -> Result<Self> {
        let loss = LossSpec::with_scale(kind, default_loss_scale(weighting))?;
        let mut config = Self::new(loss, weighting);
        config.warm_start = Some(WarmStart::l1_like(weighting));
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gradient_tol", self.gradient_tol),
            ("step_tol", self.step_tol),
            ("cost_rel_tol", self.cost_rel_tol),
            ("damping_init", self.damping_init),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Configuration(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.max_outer_irls == 0 || self.max_inner_gn == 0 {
            return Err(Error::Configuration(
                "iteration caps must be at least 1".into(),
            ));
        }
        if let Some(w) = &self.warm_start {
            if w.max_outer == 0 {
                return Err(Error::Configuration(
                    "warm start needs at least 1 iteration".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    StepTolerance,
    CostTolerance,
    IterationLimit,
    /// The last IRLS round raised the robust cost and was rolled back.
    CostIncrease,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragingResult {
    pub rotations: BTreeMap<NodeId, Rotation>,
    pub final_cost: f64,
    pub outer_iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    /// Final IRLS weights in edge order.
    pub edge_weights: Vec<f64>,
    /// Unweighted residual angles (radians) in edge order.
    pub edge_residual_norms: Vec<f64>,
    /// Robust cost before the first and after every accepted IRLS round.
    pub cost_history: Vec<f64>,
    /// Edges that fell back to unit weight.
    pub fallback_edges: usize,
}

/// Per-edge weighting matrix `W_e`; the weighted residual is `W_e r_e`.
fn weighting_matrix(
    e: &EdgeMeasurement,
    weighting: Weighting,
    mean_inliers: Option<f64>,
) -> Option<Matrix3<f64>> {
    let scaled = |f: f64| Some(Matrix3::identity() * f);
    match weighting {
        Weighting::None => Some(Matrix3::identity()),
        Weighting::InlierCount => {
            let n = e.inlier_count? as f64;
            scaled((n / mean_inliers?).sqrt())
        }
        Weighting::CovTrace => scaled((3.0 / e.covariance()?.trace()).sqrt()),
        Weighting::CovFro => {
            let d = e.whitener()?;
            let information_norm = (d * d.transpose()).norm();
            scaled((information_norm / 3f64.sqrt()).sqrt())
        }
        Weighting::CovFull => Some(e.whitener()?.transpose()),
    }
}

fn mean_inliers(g: &ViewGraph) -> Option<f64> {
    let counts: Vec<f64> = g
        .edges()
        .iter()
        .filter_map(|e| e.inlier_count.map(|n| n as f64))
        .collect();
    if counts.is_empty() {
        return None;
    }
    let mean = counts.iter().sum::<f64>() / counts.len() as f64;
    (mean > 0.0).then_some(mean)
}

/// Weighting matrices for every edge plus the number of unit fallbacks.
fn weighting_matrices(
    g: &ViewGraph,
    config: &SolverConfig,
    mean: Option<f64>,
) -> Result<(Vec<Matrix3<f64>>, usize)> {
    let mut fallback = 0;
    let mut out = Vec::with_capacity(g.edges().len());
    for e in g.edges() {
        match weighting_matrix(e, config.weighting, mean) {
            Some(w) => out.push(w),
            None if config.unit_fallback => {
                fallback += 1;
                out.push(Matrix3::identity());
            }
            None => {
                return Err(Error::Configuration(format!(
                    "edge ({}, {}) lacks the data required by weighting '{}'",
                    e.i, e.j, config.weighting
                )))
            }
        }
    }
    if fallback > 0 {
        log::warn!(
            "{fallback} edge(s) lack data for weighting '{}'; using unit weight",
            config.weighting
        );
    }
    Ok((out, fallback))
}

/// Weighted residual `W_e r_e` of one edge. `mean_inliers` is only consulted
/// by [`Weighting::InlierCount`]; missing data falls back to unit weight.
pub fn edge_weighted_residual(
    e: &EdgeMeasurement,
    ri: &Rotation,
    rj: &Rotation,
    weighting: Weighting,
    mean_inliers: Option<f64>,
) -> Vector3<f64> {
    let r = relative_residual(ri, rj, &e.rotation);
    let w = weighting_matrix(e, weighting, mean_inliers).unwrap_or_else(|| {
        log::warn!(
            "edge ({}, {}): unit weight fallback for '{weighting}'",
            e.i,
            e.j
        );
        Matrix3::identity()
    });
    w * r
}

struct Problem<'a> {
    graph: &'a ViewGraph,
    endpoints: Vec<(usize, usize)>,
    weights: Vec<Matrix3<f64>>,
}

struct EdgeEval {
    residual: Vector3<f64>,
    weighted: Vector3<f64>,
    squared: f64,
}

impl<'a> Problem<'a> {
    fn new(graph: &'a ViewGraph, weights: Vec<Matrix3<f64>>) -> Self {
        let endpoints = graph
            .edges()
            .iter()
            .map(|e| (graph.index_of(e.i).unwrap(), graph.index_of(e.j).unwrap()))
            .collect();
        Problem {
            graph,
            endpoints,
            weights,
        }
    }

    fn n_nodes(&self) -> usize {
        self.graph.nodes().len()
    }

    fn evaluate(&self, rotations: &[Rotation]) -> Vec<EdgeEval> {
        self.graph
            .edges()
            .par_iter()
            .zip(self.endpoints.par_iter())
            .zip(self.weights.par_iter())
            .map(|((e, &(a, b)), w)| {
                let residual = relative_residual(&rotations[a], &rotations[b], &e.rotation);
                let weighted = w * residual;
                EdgeEval {
                    residual,
                    weighted,
                    squared: weighted.norm_squared(),
                }
            })
            .collect()
    }

    fn robust_cost(&self, evals: &[EdgeEval], loss: &LossSpec) -> Result<f64> {
        let mut total = 0.0;
        for (k, ev) in evals.iter().enumerate() {
            let v = loss.eval(ev.squared).value;
            if !v.is_finite() {
                let e = &self.graph.edges()[k];
                return Err(Error::NonFiniteCost { i: e.i, j: e.j });
            }
            total += v;
        }
        Ok(total)
    }
}

fn weighted_ls(evals: &[EdgeEval], irls: &[f64]) -> f64 {
    evals.iter().zip(irls).map(|(ev, w)| w * ev.squared).sum()
}

/// Block normal equations `H δ = −g` over the free nodes (all but index 0).
struct NormalEquations {
    n_free: usize,
    diag: Vec<Matrix3<f64>>,
    off: BTreeMap<(usize, usize), Matrix3<f64>>,
    gradient: DVector<f64>,
}

impl NormalEquations {
    fn assemble(
        problem: &Problem,
        rotations: &[Rotation],
        evals: &[EdgeEval],
        irls: &[f64],
    ) -> Self {
        let n_free = problem.n_nodes() - 1;
        let blocks: Vec<(Matrix3<f64>, Matrix3<f64>)> = evals
            .par_iter()
            .zip(problem.endpoints.par_iter())
            .zip(problem.weights.par_iter())
            .map(|((ev, &(a, _)), w)| {
                let jr_inv = right_jacobian_inv(&ev.residual);
                let jb = w * jr_inv * rotations[a].matrix();
                (-jb, jb)
            })
            .collect();
        let mut diag = vec![Matrix3::zeros(); n_free];
        let mut off: BTreeMap<(usize, usize), Matrix3<f64>> = BTreeMap::new();
        let mut gradient = DVector::zeros(3 * n_free);
        for (k, ((ja, jb), ev)) in blocks.iter().zip(evals).enumerate() {
            let w = irls[k];
            if w == 0.0 {
                continue;
            }
            let (a, b) = problem.endpoints[k];
            let free = |idx: usize| idx.checked_sub(1);
            if let Some(fa) = free(a) {
                diag[fa] += w * ja.transpose() * ja;
                let ga = w * ja.transpose() * ev.weighted;
                let mut seg = gradient.fixed_rows_mut::<3>(3 * fa);
                seg += ga;
            }
            if let Some(fb) = free(b) {
                diag[fb] += w * jb.transpose() * jb;
                let gb = w * jb.transpose() * ev.weighted;
                let mut seg = gradient.fixed_rows_mut::<3>(3 * fb);
                seg += gb;
            }
            if let (Some(fa), Some(fb)) = (free(a), free(b)) {
                let (lo, hi, block) = if fa < fb {
                    (fa, fb, w * ja.transpose() * jb)
                } else {
                    (fb, fa, w * jb.transpose() * ja)
                };
                *off.entry((lo, hi)).or_insert_with(Matrix3::zeros) += block;
            }
        }
        NormalEquations {
            n_free,
            diag,
            off,
            gradient,
        }
    }

    fn damping(&self, lambda: f64) -> DVector<f64> {
        let max_diag = self
            .diag
            .iter()
            .flat_map(|b| (0..3).map(move |k| b[(k, k)]))
            .fold(0.0f64, f64::max)
            .max(1e-300);
        DVector::from_iterator(
            3 * self.n_free,
            self.diag
                .iter()
                .flat_map(|b| (0..3).map(move |k| lambda * b[(k, k)] + 1e-12 * max_diag)),
        )
    }

    fn solve(&self, lambda: f64, solver: LinearSolver) -> Option<DVector<f64>> {
        let dim = 3 * self.n_free;
        if dim == 0 {
            return Some(DVector::zeros(0));
        }
        let damping = self.damping(lambda);
        let rhs = -&self.gradient;
        let dense = match solver {
            LinearSolver::Auto => self.n_free < DENSE_NODE_LIMIT,
            LinearSolver::Dense => true,
            LinearSolver::Sparse => false,
        };
        if dense {
            let mut h = DMatrix::zeros(dim, dim);
            for (n, b) in self.diag.iter().enumerate() {
                h.fixed_view_mut::<3, 3>(3 * n, 3 * n).copy_from(b);
            }
            for (&(lo, hi), b) in &self.off {
                h.fixed_view_mut::<3, 3>(3 * lo, 3 * hi).copy_from(b);
                h.fixed_view_mut::<3, 3>(3 * hi, 3 * lo)
                    .copy_from(&b.transpose());
            }
            for k in 0..dim {
                h[(k, k)] += damping[k];
            }
            h.cholesky().map(|c| c.solve(&rhs))
        } else {
            let mut coo = CooMatrix::new(dim, dim);
            let mut push_block = |r0: usize, c0: usize, b: &Matrix3<f64>| {
                for r in 0..3 {
                    for c in 0..3 {
                        if b[(r, c)] != 0.0 {
                            coo.push(r0 + r, c0 + c, b[(r, c)]);
                        }
                    }
                }
            };
            for (n, b) in self.diag.iter().enumerate() {
                push_block(3 * n, 3 * n, b);
            }
            for (&(lo, hi), b) in &self.off {
                push_block(3 * lo, 3 * hi, b);
                push_block(3 * hi, 3 * lo, &b.transpose());
            }
            for k in 0..dim {
                coo.push(k, k, damping[k]);
            }
            let csc = CscMatrix::from(&coo);
            let chol = CscCholesky::factor(&csc).ok()?;
            let x = chol.solve(&DMatrix::from_column_slice(dim, 1, rhs.as_slice()));
            Some(DVector::from_column_slice(x.as_slice()))
        }
    }
}

fn retract(rotations: &[Rotation], step: &DVector<f64>) -> Vec<Rotation> {
    let mut out = rotations.to_vec();
    for (n, r) in out.iter_mut().enumerate().skip(1) {
        let d = step.fixed_rows::<3>(3 * (n - 1)).into_owned();
        *r = *r * Rotation::exp_unchecked(&d);
    }
    out
}

struct StageOutcome {
    rotations: Vec<Rotation>,
    cost_history: Vec<f64>,
    outer_iterations: usize,
    termination: Termination,
}

/// Damped Gauss–Newton on the frozen-weight problem. Returns the new
/// rotations and whether a tolerance was met.
fn gauss_newton(
    problem: &Problem,
    mut rotations: Vec<Rotation>,
    irls: &[f64],
    config: &SolverConfig,
) -> (Vec<Rotation>, Option<Termination>) {
    let mut lambda = config.damping_init;
    let mut evals = problem.evaluate(&rotations);
    let mut current = weighted_ls(&evals, irls);
    for _ in 0..config.max_inner_gn {
        let normal = NormalEquations::assemble(problem, &rotations, &evals, irls);
        if normal.gradient.amax() < config.gradient_tol {
            return (rotations, Some(Termination::GradientTolerance));
        }
        let Some(step) = normal.solve(lambda, config.linear_solver) else {
            lambda *= 10.0;
            continue;
        };
        if step.amax() < config.step_tol {
            return (rotations, Some(Termination::StepTolerance));
        }
        let candidate = retract(&rotations, &step);
        let cand_evals = problem.evaluate(&candidate);
        let cand_cost = weighted_ls(&cand_evals, irls);
        if cand_cost < current {
            rotations = candidate;
            evals = cand_evals;
            current = cand_cost;
            lambda = (lambda / 10.0).max(1e-15);
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                return (rotations, Some(Termination::StepTolerance));
            }
        }
    }
    (rotations, None)
}

fn irls_stage(
    problem: &Problem,
    rotations: Vec<Rotation>,
    loss: &LossSpec,
    max_outer: usize,
    config: &SolverConfig,
) -> Result<StageOutcome> {
    let mut rotations = rotations;
    let mut evals = problem.evaluate(&rotations);
    let mut cost = problem.robust_cost(&evals, loss)?;
    let mut history = vec![cost];
    let mut termination = Termination::IterationLimit;
    let mut outer = 0;
    while outer < max_outer {
        outer += 1;
        let irls: Vec<f64> = evals
            .iter()
            .map(|ev| loss.eval(ev.squared).weight)
            .collect();
        let (candidate, inner_stop) = gauss_newton(problem, rotations.clone(), &irls, config);
        let cand_evals = problem.evaluate(&candidate);
        let cand_cost = problem.robust_cost(&cand_evals, loss)?;
        if cand_cost > cost {
            termination = Termination::CostIncrease;
            break;
        }
        let rel = (cost - cand_cost) / cost.max(f64::MIN_POSITIVE);
        rotations = candidate;
        evals = cand_evals;
        cost = cand_cost;
        history.push(cost);
        if cost == 0.0 {
            termination = Termination::CostTolerance;
            break;
        }
        if rel < config.cost_rel_tol {
            termination = match inner_stop {
                Some(Termination::GradientTolerance) => Termination::GradientTolerance,
                Some(Termination::StepTolerance) => Termination::StepTolerance,
                _ => Termination::CostTolerance,
            };
            break;
        }
    }
    Ok(StageOutcome {
        rotations,
        cost_history: history,
        outer_iterations: outer,
        termination,
    })
}

/// Robust cost `Σ ρ(‖W_e r_e‖²)` summed in edge order.
pub fn cost(
    g: &ViewGraph,
    rotations: &BTreeMap<NodeId, Rotation>,
    config: &SolverConfig,
) -> Result<f64> {
    let dense = dense_rotations(g, rotations)?;
    let (weights, _) = weighting_matrices(g, config, mean_inliers(g))?;
    let problem = Problem::new(g, weights);
    problem.robust_cost(&problem.evaluate(&dense), &config.loss)
}

/// Chordal cost `Σ ‖R_ij R_j − R_i‖_F²` (zero on consistent graphs).
pub fn chordal_cost(g: &ViewGraph, rotations: &BTreeMap<NodeId, Rotation>) -> Result<f64> {
    let dense = dense_rotations(g, rotations)?;
    Ok(g.edges()
        .iter()
        .map(|e| {
            let (a, b) = (g.index_of(e.i).unwrap(), g.index_of(e.j).unwrap());
            (e.rotation.matrix() * dense[b].matrix() - dense[a].matrix()).norm_squared()
        })
        .sum())
}

fn dense_rotations(g: &ViewGraph, rotations: &BTreeMap<NodeId, Rotation>) -> Result<Vec<Rotation>> {
    g.node_ids()
        .map(|id| {
            rotations
                .get(&id)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("no rotation for node {id}")))
        })
        .collect()
}

/// Averages the rotations of a connected view graph from `init`.
pub fn solve(
    g: &ViewGraph,
    init: &BTreeMap<NodeId, Rotation>,
    config: &SolverConfig,
) -> Result<AveragingResult> {
    solve_with_mean(g, init, config, mean_inliers(g))
}

fn solve_with_mean(
    g: &ViewGraph,
    init: &BTreeMap<NodeId, Rotation>,
    config: &SolverConfig,
    mean: Option<f64>,
) -> Result<AveragingResult> {
    config.validate()?;
    let components = connected_components(g).len();
    if components > 1 {
        return Err(Error::Disconnected { components });
    }
    let start = dense_rotations(g, init)?;
    let (weights, fallback_edges) = weighting_matrices(g, config, mean)?;
    let problem = Problem::new(g, weights);

    let mut rotations = start;
    if let Some(warm) = &config.warm_start {
        rotations = irls_stage(&problem, rotations, &warm.loss, warm.max_outer, config)?.rotations;
    }
    let stage = irls_stage(
        &problem,
        rotations,
        &config.loss,
        config.max_outer_irls,
        config,
    )?;

    let evals = problem.evaluate(&stage.rotations);
    let final_cost = problem.robust_cost(&evals, &config.loss)?;
    let edge_weights = evals
        .iter()
        .map(|ev| config.loss.eval(ev.squared).weight)
        .collect();
    let edge_residual_norms = evals.iter().map(|ev| ev.residual.norm()).collect();
    let rotations = g.node_ids().zip(stage.rotations).collect();
    Ok(AveragingResult {
        rotations,
        final_cost,
        outer_iterations: stage.outer_iterations,
        converged: stage.termination != Termination::IterationLimit,
        termination: stage.termination,
        edge_weights,
        edge_residual_norms,
        cost_history: stage.cost_history,
        fallback_edges,
    })
}

/// Solves every connected component independently, each from its own
/// spanning-tree initialization, and merges the results. Costs and iteration
/// counts are summed; `converged` requires every component to converge.
/// Inlier-count normalization uses the mean over the whole graph.
/// `cost_history` is kept only when the graph has a single component.
pub fn solve_components(
    g: &ViewGraph,
    criterion: Option<SpanningTreeCriterion>,
    config: &SolverConfig,
) -> Result<AveragingResult> {
    let mut merged = AveragingResult {
        rotations: BTreeMap::new(),
        final_cost: 0.0,
        outer_iterations: 0,
        converged: true,
        termination: Termination::CostTolerance,
        edge_weights: Vec::new(),
        edge_residual_norms: Vec::new(),
        cost_history: Vec::new(),
        fallback_edges: 0,
    };
    let mut per_edge: BTreeMap<(NodeId, NodeId), (f64, f64)> = BTreeMap::new();
    let mean = mean_inliers(g);
    let components = connected_components(g);
    let single = components.len() == 1;
    for component in components {
        let crit = criterion.unwrap_or_else(|| SpanningTreeCriterion::auto(&component));
        let init = spanning_tree_init(&component, crit)?;
        let res = solve_with_mean(&component, &init, config, mean)?;
        merged.final_cost += res.final_cost;
        merged.outer_iterations += res.outer_iterations;
        if !res.converged {
            merged.converged = false;
            merged.termination = res.termination;
        }
        merged.fallback_edges += res.fallback_edges;
        if single {
            merged.termination = res.termination;
            merged.cost_history = res.cost_history;
        }
        for (k, e) in component.edges().iter().enumerate() {
            per_edge.insert(e.key(), (res.edge_weights[k], res.edge_residual_norms[k]));
        }
        merged.rotations.extend(res.rotations);
    }
    for e in g.edges() {
        let (w, r) = per_edge[&e.key()];
        merged.edge_weights.push(w);
        merged.edge_residual_norms.push(r);
    }
    Ok(merged)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotationRecord {
    pub id: NodeId,
    pub qwxyz: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeWeightRecord {
    pub i: NodeId,
    pub j: NodeId,
    pub weight: f64,
    pub residual_rad: f64,
}

/// Result file written by `average`. `loss`/`weighting` label the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultFile {
    pub rotations: Vec<RotationRecord>,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub edge_weights: Vec<EdgeWeightRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighting: Option<Weighting>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_scale: Option<f64>,
}

impl ResultFile {
    pub fn from_result(
        g: &ViewGraph,
        result: &AveragingResult,
        config: Option<&SolverConfig>,
    ) -> Self {
        ResultFile {
            rotations: result
                .rotations
                .iter()
                .map(|(&id, r)| RotationRecord {
                    id,
                    qwxyz: r.wxyz(),
                })
                .collect(),
            final_cost: result.final_cost,
            iterations: result.outer_iterations,
            converged: result.converged,
            edge_weights: g
                .edges()
                .iter()
                .zip(result.edge_weights.iter().zip(&result.edge_residual_norms))
                .map(|(e, (&weight, &residual_rad))| EdgeWeightRecord {
                    i: e.i,
                    j: e.j,
                    weight,
                    residual_rad,
                })
                .collect(),
            loss: config.map(|c| c.loss.kind()),
            weighting: config.map(|c| c.weighting),
            loss_scale: config.map(|c| c.loss.scale()),
        }
    }

    pub fn rotations(&self) -> Result<BTreeMap<NodeId, Rotation>> {
        let mut out = BTreeMap::new();
        for (idx, rec) in self.rotations.iter().enumerate() {
            let [w, x, y, z] = rec.qwxyz;
            let r = Rotation::from_wxyz(w, x, y, z).map_err(|e| {
                Error::schema(format!("rotations[{idx}] (id {})", rec.id), e.to_string())
            })?;
            if out.insert(rec.id, r).is_some() {
                return Err(Error::schema(
                    format!("rotations[{idx}]"),
                    format!("duplicate id {}", rec.id),
                ));
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result serialization cannot fail");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}
