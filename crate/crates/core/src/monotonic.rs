//! Forward/backward monotonic iteration for single-field problems.
//!
//! One iteration takes `(ψ_k, E_k)` to `(ψ_{k+1}, E_{k+1})`:
//!
//! 1. backward sweep from the target, producing the adjoint `χ_k` and the
//!    backward field `Ẽ_k` (equal to `E_k` in the simplified variant);
//! 2. forward sweep from the initial state, solving for `E_{k+1}` node by
//!    node from brackets of `χ_k` and the freshly propagated `ψ_{k+1}`.
//!
//! Each node owns one exponential (see [`crate::propagate`]), so the cost
//! change splits exactly into per-node gains
//!
//! ```text
//! ΔJ = Σ_i [f_i(E_{k+1}) − f_i(Ẽ_k) − τ_i λ_i (E_{k+1}^{2n} − Ẽ_k^{2n})]      (P₁)
//!    + Σ_i [g_i(Ẽ_k) − g_i(E_k) − τ_i λ_i (Ẽ_k^{2n} − E_k^{2n})]              (P₂)
//! ```
//!
//! with `f_i(x) = |⟨χ_k|U_i(x)|ψ_{k+1}⟩|²` and `g_i(x) = |⟨χ_k|U_i(x)|ψ_k⟩|²`
//! evaluated across cell `i`. The polynomial kernels of [`crate::polyopt`]
//! propose the new value from cell-averaged brackets (which are the exact
//! tangent of `f_i` at the reference); the exact gain is then checked and the
//! step shortened toward the reference until it is non-negative. `P₁, P₂ ≥ 0`
//! holds node by node, so the cost never decreases.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::polyopt::{stationarity_lhs, Brackets, UpdateParams, UpdateRule};
use crate::propagate::{
    backward_boundaries, build_cells, forward_boundaries, powers, propagate_forward, ControlField,
    Coupling, Dynamics, PureDynamics, StateTrajectory, TimeGrid,
};
use crate::rotor::{RotorSystem, TargetState};
use crate::{Error, Result, C64};

/// Largest cost decrease tolerated before an iteration is reported as broken.
pub const MONOTONE_TOL: f64 = 1e-10;

/// Step halvings tried before falling back to the reference field.
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Backward field equal to the forward field of the previous iteration.
    #[default]
    Simplified,
    /// Separate backward field from the `P₂` integrand.
    Full,
}

#[derive(Debug, Clone)]
pub struct OptimizationConfig {
    pub rule: UpdateRule,
    pub variant: Variant,
    /// Cost exponent `n` of the penalty `λ(t) E^{2n}`.
    pub n: u32,
    /// Peak penalty; the local penalty is `λ / sin²(π t / t_f)`.
    pub lambda: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub max_iters: usize,
    /// Stop once an iteration gains less than this.
    pub stop_tol: f64,
    pub trial_field: ControlField,
}

impl OptimizationConfig {
    /// Algorithm II, simplified variant, with the given trial field.
    pub fn new(trial_field: ControlField, n: u32, lambda: f64) -> Self {
        Self {
            rule: UpdateRule::Implicit,
            variant: Variant::Simplified,
            n,
            lambda,
            eta1: 1.0,
            eta2: 1.0,
            max_iters: 100,
            stop_tol: 1e-6,
            trial_field,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.n == 1 || self.n == 2) {
            return Err(Error::InvalidConfig(format!(
                "n must be 1 or 2, got {}",
                self.n
            )));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.eta1 > 0.0 && self.eta2 > 0.0) {
            return Err(Error::InvalidConfig(
                "eta constants must be positive".into(),
            ));
        }
        if !self.stop_tol.is_finite() {
            return Err(Error::InvalidConfig("stop_tol must be finite".into()));
        }
        Ok(())
    }
}

/// Gaussian trial pulse centered at `t_f/2` with FWHM `t_f/4`; the default
/// peak `5.34e-3` a.u. corresponds to about 1 TW/cm².
pub fn default_trial(grid: TimeGrid) -> ControlField {
    ControlField::gaussian(grid, 5.34e-3, grid.t_f / 2.0, grid.t_f / 4.0)
}

/// Diagnostics of one iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    pub cost_j: f64,
    pub projection: f64,
    pub fluence_penalty: f64,
    pub field_energy: f64,
    /// Max-norm of the stationarity condition over interior nodes.
    pub residual: f64,
    /// `J_k − J_{k−1}` (zero for the trial).
    pub delta_j: f64,
    pub p1: f64,
    pub p2: f64,
    /// Nodes whose proposed update had to be shortened.
    pub safeguarded: usize,
}

/// Step constant used at one node: `η` capped by the inverse slope of the
/// penalty term of the implicit update at the reference field. Without the
/// cap, nodes where `η λ(t) ≫ 1` (next to the endpoints) flip sign every
/// iteration instead of settling. Positivity of the gain holds for any
/// positive value.
pub fn node_eta(eta: f64, lambda_t: f64, n: u32, e_ref: f64) -> f64 {
    let slope = if n == 1 {
        lambda_t
    } else {
        6.0 * lambda_t * e_ref * e_ref
    };
    if slope * eta > 1.0 {
        1.0 / slope
    } else {
        eta
    }
}

/// Local penalty `λ / s(t_i)`; infinite at the endpoints.
pub fn local_penalty(grid: &TimeGrid, lambda: f64, i: usize) -> f64 {
    if grid.is_endpoint(i) {
        f64::INFINITY
    } else {
        lambda / grid.envelope(i)
    }
}

/// `Σ_i τ_i λ_i E_i^{2n}` over the interior nodes. Nonzero endpoint samples
/// make the penalty infinite.
pub fn fluence_penalty(grid: &TimeGrid, samples: &[f64], lambda: f64, n: u32) -> f64 {
    samples
        .iter()
        .enumerate()
        .map(|(i, e)| {
            if *e == 0.0 {
                0.0
            } else {
                grid.cell_width(i) * local_penalty(grid, lambda, i) * e.powi(2 * n as i32)
            }
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    pub cost_j: f64,
    pub projection: f64,
    pub penalty: f64,
}

/// Terminal projection and penalised cost of a field.
pub fn evaluate_cost<D: Dynamics>(
    dynamics: &D,
    field: &ControlField,
    initial: &D::State,
    target: &D::State,
    lambda: f64,
    n: u32,
) -> CostBreakdown {
    let cells = build_cells(dynamics, &field.grid, |i| powers(field.samples[i]));
    let psi = forward_boundaries(dynamics, &cells, initial);
    let projection = dynamics.overlap(target, psi.last().unwrap()).norm_sqr();
    let penalty = fluence_penalty(&field.grid, &field.samples, lambda, n);
    CostBreakdown {
        cost_j: projection - penalty,
        projection,
        penalty,
    }
}

/// The per-iteration quadruplet: forward state, adjoint, forward field and
/// backward field, stored at the cell boundaries.
struct IterationState<S, C> {
    field: Vec<f64>,
    cells: Vec<C>,
    psi: Vec<S>,
}

/// Result of a single-field optimisation.
#[derive(Debug, Clone)]
pub struct Optimized<S> {
    pub field: ControlField,
    pub records: Vec<IterationRecord>,
    /// State at `t_f` under the returned field.
    pub final_state: S,
}

fn node_err(e: Error, node: usize) -> Error {
    match e {
        Error::NoRealRoot { .. } => Error::NoRealRoot { node },
        other => other,
    }
}

/// Update of one node against an exact gain check.
pub(crate) struct NodeUpdate<S, C> {
    pub value: f64,
    pub cell: C,
    pub propagated: S,
    pub gain: f64,
    pub shortened: bool,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn update_node<D: Dynamics>(
    dynamics: &D,
    rule: UpdateRule,
    params: UpdateParams,
    tau: f64,
    previous: f64,
    ref_cell: &D::Cell,
    chi_end: &D::State,
    psi_start: &D::State,
    coeffs: impl Fn(f64) -> [f64; 3],
    to_brackets: impl Fn([f64; 3]) -> Brackets,
    node: usize,
) -> Result<NodeUpdate<D::State, D::Cell>>
where
    D::Cell: Clone,
{
    let reference = params.e_ref;
    let ref_prop = dynamics.forward(ref_cell, psi_start);
    let f_ref = dynamics.overlap(chi_end, &ref_prop).norm_sqr();
    let b = to_brackets(dynamics.brackets(ref_cell, chi_end, psi_start));
    let candidate = rule
        .apply(&b, &params, previous)
        .map_err(|e| node_err(e, node))?;
    let two_n = 2 * params.n as i32;
    let mut shortened = false;
    let mut step = 1.0;
    for _ in 0..MAX_HALVINGS {
        let x = reference + step * (candidate - reference);
        if x == reference {
            break;
        }
        let cell = dynamics.cell(coeffs(x), tau);
        let prop = dynamics.forward(&cell, psi_start);
        let f_x = dynamics.overlap(chi_end, &prop).norm_sqr();
        let gain = f_x - f_ref - tau * params.lambda_t * (x.powi(two_n) - reference.powi(two_n));
        if gain >= 0.0 {
            return Ok(NodeUpdate {
                value: x,
                cell,
                propagated: prop,
                gain,
                shortened,
            });
        }
        shortened = true;
        step *= 0.5;
    }
    Ok(NodeUpdate {
        value: reference,
        cell: ref_cell.clone(),
        propagated: ref_prop,
        gain: 0.0,
        shortened,
    })
}

/// Brackets of every node for a field, its forward states and the adjoint
/// propagated under the same field.
pub(crate) fn node_brackets<D: Dynamics>(
    dynamics: &D,
    cells: &[D::Cell],
    chi: &[D::State],
    psi: &[D::State],
) -> Vec<Brackets> {
    (0..cells.len())
        .into_par_iter()
        .map(|i| Brackets::from_array(dynamics.brackets(&cells[i], &chi[i + 1], &psi[i])))
        .collect()
}

fn max_residual(grid: &TimeGrid, field: &[f64], brackets: &[Brackets], lambda: f64, n: u32) -> f64 {
    (1..grid.n_steps)
        .map(|i| stationarity_lhs(&brackets[i], local_penalty(grid, lambda, i), n, field[i]).abs())
        .fold(0.0, f64::max)
}

/// Runs the monotonic iteration for any single-field dynamics.
pub fn optimize<D: Dynamics>(
    dynamics: &D,
    initial: &D::State,
    target: &D::State,
    config: &OptimizationConfig,
) -> Result<Optimized<D::State>>
where
    D::Cell: Clone,
{
    config.validate()?;
    dynamics.validate(initial)?;
    dynamics.validate(target)?;
    let grid = config.trial_field.grid;
    let n_nodes = grid.n_nodes();
    let (lambda, n) = (config.lambda, config.n);

    let field = config.trial_field.clone().pinned().samples;
    let cells = build_cells(dynamics, &grid, |i| powers(field[i]));
    let psi = forward_boundaries(dynamics, &cells, initial);
    let mut state = IterationState { field, cells, psi };

    let record = |k: usize,
                  state: &IterationState<D::State, D::Cell>,
                  delta: f64,
                  p1: f64,
                  p2: f64,
                  safe: usize| {
        let projection = dynamics
            .overlap(target, state.psi.last().unwrap())
            .norm_sqr();
        let penalty = fluence_penalty(&grid, &state.field, lambda, n);
        IterationRecord {
            k,
            cost_j: projection - penalty,
            projection,
            fluence_penalty: penalty,
            field_energy: grid.integrate(state.field.iter().map(|e| e * e)),
            residual: f64::NAN,
            delta_j: delta,
            p1,
            p2,
            safeguarded: safe,
        }
    };
    let mut records = vec![record(0, &state, 0.0, 0.0, 0.0, 0)];

    for k in 1..=config.max_iters {
        // Backward sweep.
        let chi_same = backward_boundaries(dynamics, &state.cells, target);
        let brackets = node_brackets(dynamics, &state.cells, &chi_same, &state.psi);
        records.last_mut().unwrap().residual =
            max_residual(&grid, &state.field, &brackets, lambda, n);

        let mut safeguarded = 0;
        let (tilde, tilde_cells, chi, p2) = match config.variant {
            Variant::Simplified => (state.field.clone(), state.cells.clone(), chi_same, 0.0),
            Variant::Full => {
                let mut tilde = state.field.clone();
                let mut tcells = state.cells.clone();
                let mut chi = vec![target.clone(); n_nodes + 1];
                let mut p2 = 0.0;
                for i in (0..n_nodes).rev() {
                    if grid.is_endpoint(i) {
                        tilde[i] = 0.0;
                        chi[i] = dynamics.backward(&tcells[i], &chi[i + 1]);
                        continue;
                    }
                    let lambda_t = local_penalty(&grid, lambda, i);
                    let params = UpdateParams {
                        lambda_t,
                        n,
                        eta: node_eta(config.eta2, lambda_t, n, state.field[i]),
                        e_ref: state.field[i],
                    };
                    let up = update_node(
                        dynamics,
                        config.rule,
                        params,
                        grid.cell_width(i),
                        tilde[i + 1],
                        &state.cells[i],
                        &chi[i + 1],
                        &state.psi[i],
                        powers,
                        Brackets::from_array,
                        i,
                    )?;
                    tilde[i] = up.value;
                    chi[i] = dynamics.backward(&up.cell, &chi[i + 1]);
                    tcells[i] = up.cell;
                    p2 += up.gain;
                    safeguarded += up.shortened as usize;
                }
                (tilde, tcells, chi, p2)
            }
        };

        // Forward sweep.
        let mut field = vec![0.0; n_nodes];
        let mut cells = Vec::with_capacity(n_nodes);
        let mut psi = Vec::with_capacity(n_nodes + 1);
        psi.push(initial.clone());
        let mut p1 = 0.0;
        for i in 0..n_nodes {
            if grid.is_endpoint(i) {
                let cell = tilde_cells[i].clone();
                psi.push(dynamics.forward(&cell, &psi[i]));
                cells.push(cell);
                continue;
            }
            let lambda_t = local_penalty(&grid, lambda, i);
            let params = UpdateParams {
                lambda_t,
                n,
                eta: node_eta(config.eta1, lambda_t, n, tilde[i]),
                e_ref: tilde[i],
            };
            let up = update_node(
                dynamics,
                config.rule,
                params,
                grid.cell_width(i),
                field[i - 1],
                &tilde_cells[i],
                &chi[i + 1],
                &psi[i],
                powers,
                Brackets::from_array,
                i,
            )?;
            field[i] = up.value;
            psi.push(up.propagated);
            cells.push(up.cell);
            p1 += up.gain;
            safeguarded += up.shortened as usize;
        }

        let next = IterationState { field, cells, psi };
        let prev_j = records.last().unwrap().cost_j;
        let mut rec = record(k, &next, 0.0, p1, p2, safeguarded);
        rec.delta_j = rec.cost_j - prev_j;
        if rec.delta_j < -MONOTONE_TOL {
            return Err(Error::NonMonotone {
                iteration: k,
                delta: rec.delta_j,
            });
        }
        records.push(rec);
        state = next;
        if rec.delta_j < config.stop_tol {
            break;
        }
    }

    let chi_same = backward_boundaries(dynamics, &state.cells, target);
    let brackets = node_brackets(dynamics, &state.cells, &chi_same, &state.psi);
    records.last_mut().unwrap().residual = max_residual(&grid, &state.field, &brackets, lambda, n);

    Ok(Optimized {
        field: ControlField::new(grid, state.field)?,
        records,
        final_state: state.psi.pop().unwrap(),
    })
}

/// Max-norm over interior nodes of `2nλ(t)E^{2n−1} + μ_b + 2α_b E + 3β_b E²`,
/// with the adjoint propagated back from `target` under the same field.
pub fn stationarity_residual<D: Dynamics>(
    dynamics: &D,
    field: &ControlField,
    initial: &D::State,
    target: &D::State,
    lambda: f64,
    n: u32,
) -> f64 {
    let grid = field.grid;
    let cells = build_cells(dynamics, &grid, |i| powers(field.samples[i]));
    let psi = forward_boundaries(dynamics, &cells, initial);
    let chi = backward_boundaries(dynamics, &cells, target);
    let b = node_brackets(dynamics, &cells, &chi, &psi);
    max_residual(&grid, &field.samples, &b, lambda, n)
}

/// Directional derivative of the cost along `perturbation`, analytic and by
/// central finite differences with step `eps`. Endpoint samples of the
/// perturbation are ignored since the field is pinned there.
///
/// The analytic value is `−Σ_i τ_i · LHS_i · δE_i`, `LHS` being the
/// stationarity expression; the sign reflects that `J` increases against it.
#[allow(clippy::too_many_arguments)]
pub fn variational_gradient_check<D: Dynamics>(
    dynamics: &D,
    field: &ControlField,
    perturbation: &ControlField,
    initial: &D::State,
    target: &D::State,
    lambda: f64,
    n: u32,
    eps: f64,
) -> Result<(f64, f64)> {
    if perturbation.samples.len() != field.samples.len() {
        return Err(Error::DimensionMismatch {
            expected: field.samples.len(),
            got: perturbation.samples.len(),
        });
    }
    let grid = field.grid;
    let field = field.clone().pinned();
    let delta = perturbation.clone().pinned();
    let cells = build_cells(dynamics, &grid, |i| powers(field.samples[i]));
    let psi = forward_boundaries(dynamics, &cells, initial);
    let chi = backward_boundaries(dynamics, &cells, target);
    let b = node_brackets(dynamics, &cells, &chi, &psi);
    let analytic: f64 = (1..grid.n_steps)
        .map(|i| {
            let lhs = stationarity_lhs(&b[i], local_penalty(&grid, lambda, i), n, field.samples[i]);
            -grid.cell_width(i) * lhs * delta.samples[i]
        })
        .sum();
    let shifted = |s: f64| {
        let samples = field
            .samples
            .iter()
            .zip(&delta.samples)
            .map(|(e, d)| e + s * d)
            .collect();
        ControlField { grid, samples }
    };
    let jp = evaluate_cost(dynamics, &shifted(eps), initial, target, lambda, n).cost_j;
    let jm = evaluate_cost(dynamics, &shifted(-eps), initial, target, lambda, n).cost_j;
    Ok((analytic, (jp - jm) / (2.0 * eps)))
}

/// Output of a pure-state run.
#[derive(Debug, Clone)]
pub struct PureRun {
    pub field: ControlField,
    pub records: Vec<IterationRecord>,
    pub trajectory: StateTrajectory<nalgebra::DVector<C64>>,
}

/// Pure-state optimisation from the lowest level of the block toward an
/// orientation target.
pub fn run(
    system: &RotorSystem,
    target: &TargetState,
    config: &OptimizationConfig,
) -> Result<PureRun> {
    if target.m != system.m {
        return Err(Error::InvalidArgument(
            "target and system are in different m blocks".into(),
        ));
    }
    let initial = system.basis_state(system.m.unsigned_abs() as usize)?;
    run_from(system, &initial, target, config)
}

pub fn run_from(
    system: &RotorSystem,
    initial: &nalgebra::DVector<C64>,
    target: &TargetState,
    config: &OptimizationConfig,
) -> Result<PureRun> {
    run_with_coupling(
        system.coupling(),
        initial,
        &target.embed(system.j_max)?,
        config,
    )
}

/// Pure-state optimisation for an arbitrary single-field coupling.
pub fn run_with_coupling(
    coupling: Coupling,
    initial: &nalgebra::DVector<C64>,
    target: &nalgebra::DVector<C64>,
    config: &OptimizationConfig,
) -> Result<PureRun> {
    let dynamics = PureDynamics::new(coupling);
    let out = optimize(&dynamics, initial, target, config)?;
    let trajectory = propagate_forward(&dynamics.coupling, &out.field, initial)?;
    Ok(PureRun {
        field: out.field,
        records: out.records,
        trajectory,
    })
}
