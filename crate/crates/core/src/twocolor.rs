//! Non-resonant two-color excitation after averaging over the carrier.
//!
//! With `E(t) = E₁(t) cos ωt + E₂(t) cos 2ωt` the averaged Hamiltonian is
//!
//! ```text
//! H = H0 − (E₁² + E₂²) α̃ − E₁² E₂ β̃
//! α̃ = ¼[(α∥ − α⊥) cos²θ + α⊥],   β̃ = ⅛[(β∥ − 3β⊥) cos³θ + 3β⊥ cos θ]
//! ```
//!
//! There is no linear term, so a field that is zero at some time stays zero
//! there. Two envelopes are optimised with [`run_dual`] (E₂ updated first at
//! every node, then E₁ with the new E₂); a single shared envelope uses the
//! standard loop on the collapsed coupling, see [`run_single`].

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::monotonic::{
    fluence_penalty, local_penalty, node_brackets, node_eta, run_with_coupling, update_node,
    IterationRecord, OptimizationConfig, PureRun, MONOTONE_TOL,
};
use crate::polyopt::{Brackets, UpdateParams, UpdateRule};
use crate::propagate::{
    backward_boundaries, build_cells, forward_boundaries, propagate_forward_coeffs, ControlField,
    Coupling, Dynamics, PureDynamics, StateTrajectory, TimeGrid,
};
use crate::rotor::{RotorSystem, TargetState};
use crate::{Error, Result, C64};

#[derive(Debug, Clone)]
pub struct TwoColorSystem {
    pub base: RotorSystem,
    pub alpha_avg_op: DMatrix<f64>,
    pub beta_avg_op: DMatrix<f64>,
    /// Carrier frequency; only used to place the envelopes in a spectrum.
    pub omega: f64,
}

impl TwoColorSystem {
    pub fn new(base: RotorSystem, omega: f64) -> Self {
        let p = &base.params;
        let eye = DMatrix::<f64>::identity(base.dim(), base.dim());
        let alpha_avg_op = (&base.c2 * (p.alpha_par - p.alpha_perp) + &eye * p.alpha_perp) * 0.25;
        let beta_avg_op =
            (&base.c3 * (p.beta_par - 3.0 * p.beta_perp) + &base.c1 * (3.0 * p.beta_perp)) * 0.125;
        Self {
            base,
            alpha_avg_op,
            beta_avg_op,
            omega,
        }
    }

    pub fn averaged_hamiltonian(&self, e1: f64, e2: f64) -> DMatrix<f64> {
        &self.base.h0
            - &self.alpha_avg_op * (e1 * e1 + e2 * e2)
            - &self.beta_avg_op * (e1 * e1 * e2)
    }

    /// Coupling with coefficients `[0, E₁² + E₂², E₁² E₂]`.
    pub fn dual_coupling(&self) -> Coupling {
        let dim = self.base.dim();
        Coupling::new(
            self.base.h0.clone(),
            [
                DMatrix::zeros(dim, dim),
                self.alpha_avg_op.clone(),
                self.beta_avg_op.clone(),
            ],
        )
    }

    /// Coupling for `E₁ = E₂ = E`, with the usual coefficients `[E, E², E³]`:
    /// the α̃ term doubles and the dipole term is absent.
    pub fn single_coupling(&self) -> Coupling {
        let dim = self.base.dim();
        Coupling::new(
            self.base.h0.clone(),
            [
                DMatrix::zeros(dim, dim),
                &self.alpha_avg_op * 2.0,
                self.beta_avg_op.clone(),
            ],
        )
    }
}

pub fn dual_coeffs(e1: f64, e2: f64) -> [f64; 3] {
    [0.0, e1 * e1 + e2 * e2, e1 * e1 * e2]
}

/// Two envelopes on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DualField {
    pub e1: ControlField,
    pub e2: ControlField,
}

impl DualField {
    pub fn new(e1: ControlField, e2: ControlField) -> Result<Self> {
        if e1.grid != e2.grid {
            return Err(Error::InvalidArgument(
                "the two envelopes must share a time grid".into(),
            ));
        }
        Ok(Self { e1, e2 })
    }

    pub fn grid(&self) -> TimeGrid {
        self.e1.grid
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,E1,E2")?;
        for (i, (a, b)) in self.e1.samples.iter().zip(&self.e2.samples).enumerate() {
            writeln!(w, "{:.17e},{:.17e},{:.17e}", self.grid().time(i), a, b)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DualConfig {
    pub rule: UpdateRule,
    pub n: u32,
    pub lambda: f64,
    pub eta: f64,
    pub max_iters: usize,
    pub stop_tol: f64,
    pub trial: DualField,
}

impl DualConfig {
    pub fn new(trial: DualField, n: u32, lambda: f64) -> Self {
        Self {
            rule: UpdateRule::Implicit,
            n,
            lambda,
            eta: 1.0,
            max_iters: 100,
            stop_tol: 1e-6,
            trial,
        }
    }

    fn validate(&self) -> Result<()> {
        let mut as_single = OptimizationConfig::new(self.trial.e1.clone(), self.n, self.lambda);
        as_single.eta1 = self.eta;
        as_single.max_iters = self.max_iters;
        as_single.stop_tol = self.stop_tol;
        as_single.validate()
    }
}

#[derive(Debug, Clone)]
pub struct DualRun {
    pub field: DualField,
    /// `p1` collects the E₁ gains, `p2` the E₂ gains.
    pub records: Vec<IterationRecord>,
    pub trajectory: StateTrajectory<DVector<C64>>,
}

/// Residuals of the two stationarity conditions at one node.
fn dual_lhs(b: &[f64; 3], lambda_t: f64, n: u32, e1: f64, e2: f64) -> (f64, f64) {
    let k = 2.0 * n as f64 * lambda_t;
    let p = 2 * n as i32 - 1;
    let r1 = k * e1.powi(p) + 2.0 * b[1] * e1 + 2.0 * b[2] * e1 * e2;
    let r2 = k * e2.powi(p) + 2.0 * b[1] * e2 + b[2] * e1 * e1;
    (r1, r2)
}

fn dual_residual_from(
    grid: &TimeGrid,
    e1: &[f64],
    e2: &[f64],
    b: &[[f64; 3]],
    lambda: f64,
    n: u32,
) -> f64 {
    (1..grid.n_steps)
        .map(|i| {
            let (r1, r2) = dual_lhs(&b[i], local_penalty(grid, lambda, i), n, e1[i], e2[i]);
            r1.abs().max(r2.abs())
        })
        .fold(0.0, f64::max)
}

fn raw_brackets(b: Vec<Brackets>) -> Vec<[f64; 3]> {
    b.into_iter()
        .map(|b| [b.mu_b, b.alpha_b, b.beta_b])
        .collect()
}

/// Max-norm over interior nodes of both stationarity conditions for a pair
/// of envelopes.
pub fn dual_residual(
    sys: &TwoColorSystem,
    field: &DualField,
    target: &TargetState,
    lambda: f64,
    n: u32,
) -> Result<f64> {
    let dynamics = PureDynamics::new(sys.dual_coupling());
    let grid = field.grid();
    let (e1, e2) = (&field.e1.samples, &field.e2.samples);
    let cells = build_cells(&dynamics, &grid, |i| dual_coeffs(e1[i], e2[i]));
    let psi = forward_boundaries(&dynamics, &cells, &initial_state(sys)?);
    let chi = backward_boundaries(&dynamics, &cells, &target.embed(sys.base.j_max)?);
    let b = raw_brackets(node_brackets(&dynamics, &cells, &chi, &psi));
    Ok(dual_residual_from(&grid, e1, e2, &b, lambda, n))
}

/// Projection and penalised cost of a pair of envelopes.
pub fn dual_cost(
    sys: &TwoColorSystem,
    field: &DualField,
    target: &TargetState,
    lambda: f64,
    n: u32,
) -> Result<f64> {
    let dynamics = PureDynamics::new(sys.dual_coupling());
    let grid = field.grid();
    let (e1, e2) = (&field.e1.samples, &field.e2.samples);
    let cells = build_cells(&dynamics, &grid, |i| dual_coeffs(e1[i], e2[i]));
    let psi = forward_boundaries(&dynamics, &cells, &initial_state(sys)?);
    let projection = dynamics
        .overlap(&target.embed(sys.base.j_max)?, psi.last().unwrap())
        .norm_sqr();
    Ok(projection - fluence_penalty(&grid, e1, lambda, n) - fluence_penalty(&grid, e2, lambda, n))
}

fn initial_state(sys: &TwoColorSystem) -> Result<DVector<C64>> {
    sys.base.basis_state(sys.base.m.unsigned_abs() as usize)
}

/// Monotonic optimisation of two envelopes with backward field equal to the
/// forward field of the previous iteration.
pub fn run_dual(
    sys: &TwoColorSystem,
    target: &TargetState,
    config: &DualConfig,
) -> Result<DualRun> {
    config.validate()?;
    if target.m != sys.base.m {
        return Err(Error::InvalidArgument(
            "target and system are in different m blocks".into(),
        ));
    }
    let dynamics = PureDynamics::new(sys.dual_coupling());
    let initial = initial_state(sys)?;
    let phi_f = target.embed(sys.base.j_max)?;
    let grid = config.trial.grid();
    let n_nodes = grid.n_nodes();
    let (lambda, n) = (config.lambda, config.n);

    let mut e1 = config.trial.e1.clone().pinned().samples;
    let mut e2 = config.trial.e2.clone().pinned().samples;
    let mut cells = build_cells(&dynamics, &grid, |i| dual_coeffs(e1[i], e2[i]));
    let mut psi = forward_boundaries(&dynamics, &cells, &initial);

    let record = |k: usize, e1: &[f64], e2: &[f64], psi: &[DVector<C64>]| {
        let projection = dynamics.overlap(&phi_f, psi.last().unwrap()).norm_sqr();
        let penalty = fluence_penalty(&grid, e1, lambda, n) + fluence_penalty(&grid, e2, lambda, n);
        IterationRecord {
            k,
            cost_j: projection - penalty,
            projection,
            fluence_penalty: penalty,
            field_energy: grid.integrate(e1.iter().zip(e2).map(|(a, b)| a * a + b * b)),
            residual: f64::NAN,
            delta_j: 0.0,
            p1: 0.0,
            p2: 0.0,
            safeguarded: 0,
        }
    };
    let mut records = vec![record(0, &e1, &e2, &psi)];

    for k in 1..=config.max_iters {
        let chi = backward_boundaries(&dynamics, &cells, &phi_f);
        let b = raw_brackets(node_brackets(&dynamics, &cells, &chi, &psi));
        records.last_mut().unwrap().residual = dual_residual_from(&grid, &e1, &e2, &b, lambda, n);

        let mut new_e1 = vec![0.0; n_nodes];
        let mut new_e2 = vec![0.0; n_nodes];
        let mut new_cells = Vec::with_capacity(n_nodes);
        let mut new_psi = Vec::with_capacity(n_nodes + 1);
        new_psi.push(initial.clone());
        let (mut p1, mut p2, mut safeguarded) = (0.0, 0.0, 0);
        for i in 0..n_nodes {
            if grid.is_endpoint(i) {
                new_psi.push(dynamics.forward(&cells[i], &new_psi[i]));
                new_cells.push(cells[i].clone());
                continue;
            }
            let lambda_t = local_penalty(&grid, lambda, i);
            let tau = grid.cell_width(i);
            let (r1, r2) = (e1[i], e2[i]);
            let up2 = update_node(
                &dynamics,
                config.rule,
                UpdateParams {
                    lambda_t,
                    n,
                    eta: node_eta(config.eta, lambda_t, n, r2),
                    e_ref: r2,
                },
                tau,
                new_e2[i - 1],
                &cells[i],
                &chi[i + 1],
                &new_psi[i],
                |x| dual_coeffs(r1, x),
                |b| Brackets::new(b[2] * r1 * r1, b[1], 0.0),
                i,
            )?;
            let x2 = up2.value;
            let up1 = update_node(
                &dynamics,
                config.rule,
                UpdateParams {
                    lambda_t,
                    n,
                    eta: node_eta(config.eta, lambda_t, n, r1),
                    e_ref: r1,
                },
                tau,
                new_e1[i - 1],
                &up2.cell,
                &chi[i + 1],
                &new_psi[i],
                |x| dual_coeffs(x, x2),
                |b| Brackets::new(0.0, b[1] + b[2] * x2, 0.0),
                i,
            )?;
            new_e2[i] = x2;
            new_e1[i] = up1.value;
            new_psi.push(up1.propagated);
            new_cells.push(up1.cell);
            p1 += up1.gain;
            p2 += up2.gain;
            safeguarded += up1.shortened as usize + up2.shortened as usize;
        }

        let prev_j = records.last().unwrap().cost_j;
        let mut rec = record(k, &new_e1, &new_e2, &new_psi);
        rec.delta_j = rec.cost_j - prev_j;
        rec.p1 = p1;
        rec.p2 = p2;
        rec.safeguarded = safeguarded;
        if rec.delta_j < -MONOTONE_TOL {
            return Err(Error::NonMonotone {
                iteration: k,
                delta: rec.delta_j,
            });
        }
        records.push(rec);
        (e1, e2, cells, psi) = (new_e1, new_e2, new_cells, new_psi);
        if rec.delta_j < config.stop_tol {
            break;
        }
    }

    let chi = backward_boundaries(&dynamics, &cells, &phi_f);
    let b = raw_brackets(node_brackets(&dynamics, &cells, &chi, &psi));
    records.last_mut().unwrap().residual = dual_residual_from(&grid, &e1, &e2, &b, lambda, n);

    let trajectory =
        propagate_forward_coeffs(&dynamics, &grid, |i| dual_coeffs(e1[i], e2[i]), &initial)?;
    Ok(DualRun {
        field: DualField::new(ControlField::new(grid, e1)?, ControlField::new(grid, e2)?)?,
        records,
        trajectory,
    })
}

/// Single shared envelope `E₁ = E₂ = E`, optimised with the standard loop.
pub fn run_single(
    sys: &TwoColorSystem,
    target: &TargetState,
    config: &OptimizationConfig,
) -> Result<PureRun> {
    if target.m != sys.base.m {
        return Err(Error::InvalidArgument(
            "target and system are in different m blocks".into(),
        ));
    }
    run_with_coupling(
        sys.single_coupling(),
        &initial_state(sys)?,
        &target.embed(sys.base.j_max)?,
        config,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotor::{build_target, RotorParams};

    #[test]
    fn dual_residual_matches_finite_differences() {
        // The stationarity expressions are the gradient of J divided by −τ.
        let s = TwoColorSystem::new(RotorSystem::new(RotorParams::co(), 8, 0).unwrap(), 0.057);
        let target = build_target(4, 0).unwrap();
        let g = TimeGrid::new(s.base.params.rotational_period(), 256).unwrap();
        let f = DualField::new(
            ControlField::gaussian(g, 0.02, 0.3 * g.t_f, 0.2 * g.t_f).pinned(),
            ControlField::gaussian(g, 0.015, 0.5 * g.t_f, 0.3 * g.t_f).pinned(),
        )
        .unwrap();
        let dynamics = PureDynamics::new(s.dual_coupling());
        let (e1, e2) = (&f.e1.samples, &f.e2.samples);
        let cells = build_cells(&dynamics, &g, |i| dual_coeffs(e1[i], e2[i]));
        let psi = forward_boundaries(&dynamics, &cells, &initial_state(&s).unwrap());
        let chi = backward_boundaries(&dynamics, &cells, &target.embed(8).unwrap());
        let b = raw_brackets(node_brackets(&dynamics, &cells, &chi, &psi));
        let (lambda, n) = (1.0, 2);
        let node = 90;
        let (r1, r2) = dual_lhs(
            &b[node],
            local_penalty(&g, lambda, node),
            n,
            e1[node],
            e2[node],
        );
        let h = 1e-6;
        for (which, r) in [(1, r1), (2, r2)] {
            let shifted = |d: f64| {
                let mut f = f.clone();
                if which == 1 {
                    f.e1.samples[node] += d;
                } else {
                    f.e2.samples[node] += d;
                }
                dual_cost(&s, &f, &target, lambda, n).unwrap()
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            let analytic = -g.cell_width(node) * r;
            assert!(
                (fd - analytic).abs() < 1e-5 * analytic.abs(),
                "{which}: {fd} vs {analytic}"
            );
        }
    }
}
