//! Rotational temperature: Boltzmann initial state, ordered-spectrum target
//! and the density-matrix version of the monotonic loop.
//!
//! Blocks with `|m| > j_opt` carry population but no target weight, so
//! their adjoint vanishes and they never enter the cost; the optimiser only
//! propagates `|m| ≤ j_opt`. Blocks `±m` evolve identically, so each `m > 0`
//! block is propagated once with its target weighted by two.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::monotonic::{optimize, IterationRecord, OptimizationConfig};
use crate::propagate::{propagate_forward_with, ControlField, DensityDynamics, Dynamics};
use crate::rotor::{cos_theta_matrix, sorted_eigen_desc, RotorParams, RotorSystem};
use crate::{Error, Result, C64, KB_HARTREE_PER_K};

/// Populations below this fraction of the `j = 0` population are dropped.
const POPULATION_CUTOFF: f64 = 1e-12;
/// Largest admissible share of the total population in the `j_max` level.
const TRUNCATION_LIMIT: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct ThermalConfig {
    /// Kelvin.
    pub temperature: f64,
    pub j_opt: usize,
    pub opt: OptimizationConfig,
}

/// Unnormalised Boltzmann factor of each level `j ≤ j_max`, with the
/// negligible tail set to zero.
fn level_factors(params: &RotorParams, temperature: f64, j_max: usize) -> Result<Vec<f64>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let kt = KB_HARTREE_PER_K * temperature;
    Ok((0..=j_max)
        .map(|j| {
            let w = (-params.b * (j * (j + 1)) as f64 / kt).exp();
            if w < POPULATION_CUTOFF {
                0.0
            } else {
                w
            }
        })
        .collect())
}

/// Equilibrium density matrix, one diagonal block per `m = −j_max..=j_max`.
#[derive(Debug, Clone)]
pub struct ThermalState {
    pub temperature: f64,
    pub j_max: usize,
    /// Population of one `|j, m⟩` state for each `j`.
    pub populations: Vec<f64>,
}

impl ThermalState {
    pub fn block(&self, m: i32) -> DMatrix<C64> {
        let lo = m.unsigned_abs() as usize;
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.j_max + 1 - lo,
            self.populations[lo..].iter().map(|p| C64::new(*p, 0.0)),
        ))
    }

    pub fn blocks(&self) -> Vec<(i32, DMatrix<C64>)> {
        let j = self.j_max as i32;
        (-j..=j).map(|m| (m, self.block(m))).collect()
    }

    /// Population of the level `j`, all `m` included.
    pub fn level_population(&self, j: usize) -> f64 {
        (2 * j + 1) as f64 * self.populations[j]
    }

    pub fn trace(&self) -> f64 {
        (0..=self.j_max).map(|j| self.level_population(j)).sum()
    }

    pub fn purity(&self) -> f64 {
        (0..=self.j_max)
            .map(|j| (2 * j + 1) as f64 * self.populations[j].powi(2))
            .sum()
    }
}

pub fn thermal_state(params: &RotorParams, temperature: f64, j_max: usize) -> Result<ThermalState> {
    let w = level_factors(params, temperature, j_max)?;
    let z: f64 = w
        .iter()
        .enumerate()
        .map(|(j, w)| (2 * j + 1) as f64 * w)
        .sum();
    let top = (2 * j_max + 1) as f64 * w[j_max] / z;
    if top > TRUNCATION_LIMIT {
        return Err(Error::TruncationTooSmall { weight: top });
    }
    Ok(ThermalState {
        temperature,
        j_max,
        populations: w.iter().map(|w| w / z).collect(),
    })
}

/// Target block of one `m`: weights in decreasing order paired with the
/// `cos θ` eigenvectors in decreasing eigenvalue order.
#[derive(Debug, Clone)]
pub struct TargetBlock {
    pub m: i32,
    pub weights: Vec<f64>,
    pub cos_eigenvalues: Vec<f64>,
    pub vectors: Vec<DVector<f64>>,
}

impl TargetBlock {
    /// `Σ_k ω_k |χ_k⟩⟨χ_k|` embedded in the `j ≤ j_max` block.
    pub fn matrix(&self, j_max: usize) -> DMatrix<C64> {
        let dim = j_max + 1 - self.m.unsigned_abs() as usize;
        let mut out = DMatrix::<C64>::zeros(dim, dim);
        for (w, v) in self.weights.iter().zip(&self.vectors) {
            let n = v.len();
            let outer = v * v.transpose() * *w;
            let mut view = out.view_mut((0, 0), (n, n));
            view += outer.map(|x| C64::new(x, 0.0));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TargetDensity {
    pub temperature: f64,
    pub j_opt: usize,
    pub blocks: Vec<TargetBlock>,
}

impl TargetDensity {
    pub fn block(&self, m: i32) -> Option<&TargetBlock> {
        self.blocks.iter().find(|b| b.m == m)
    }

    pub fn trace(&self) -> f64 {
        self.blocks.iter().flat_map(|b| &b.weights).sum()
    }

    pub fn purity(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| &b.weights)
            .map(|w| w * w)
            .sum()
    }

    /// `Tr[ρ_opt cos θ]`.
    pub fn orientation(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.weights.iter().zip(&b.cos_eigenvalues))
            .map(|(w, c)| w * c)
            .sum()
    }
}

/// Ordered-spectrum target in the `j ≤ j_opt` subspace. The Boltzmann
/// weights of that subspace are renormalised to unit trace.
pub fn build_target_density(
    params: &RotorParams,
    temperature: f64,
    j_opt: usize,
) -> Result<TargetDensity> {
    let w = level_factors(params, temperature, j_opt)?;
    let z: f64 = w
        .iter()
        .enumerate()
        .map(|(j, w)| (2 * j + 1) as f64 * w)
        .sum();
    let j = j_opt as i32;
    let mut blocks = Vec::with_capacity(2 * j_opt + 1);
    for m in -j..=j {
        let lo = m.unsigned_abs() as usize;
        // Energies grow with j, so the weights are already descending.
        let weights: Vec<f64> = w[lo..].iter().map(|w| w / z).collect();
        let eig = sorted_eigen_desc(cos_theta_matrix(j_opt, m)?);
        blocks.push(TargetBlock {
            m,
            weights,
            cos_eigenvalues: eig.iter().map(|(l, _)| *l).collect(),
            vectors: eig.into_iter().map(|(_, v)| v).collect(),
        });
    }
    Ok(TargetDensity {
        temperature,
        j_opt,
        blocks,
    })
}

/// Final-time figures of merit of a thermal run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThermalSummary {
    /// `|Tr[ρ_opt ρ(t_f)]|²`.
    pub projection: f64,
    /// `Tr[ρ_opt ρ(t_f)] / Tr[ρ_opt²]`, equal to one at the target.
    pub normalized_fidelity: f64,
    pub target_purity: f64,
}

#[derive(Debug, Clone)]
pub struct ThermalRun {
    pub field: ControlField,
    pub records: Vec<IterationRecord>,
    pub summary: ThermalSummary,
}

/// Per-node observables of a thermal trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThermalSample {
    pub t: f64,
    pub projection: f64,
    pub normalized_fidelity: f64,
    pub orientation: f64,
}

/// Optimisation blocks `m = 0..=j_opt` with their initial states and
/// multiplicity-weighted targets.
struct Reduced {
    dynamics: DensityDynamics,
    initial: Vec<DMatrix<C64>>,
    target: Vec<DMatrix<C64>>,
}

fn reduce(
    params: &RotorParams,
    rho0: &ThermalState,
    target: &TargetDensity,
    m_max: usize,
) -> Result<Reduced> {
    let j_max = rho0.j_max;
    let mut couplings = Vec::new();
    let mut initial = Vec::new();
    let mut tgt = Vec::new();
    for m in 0..=m_max as i32 {
        let sys = RotorSystem::new(*params, j_max, m)?;
        couplings.push(sys.coupling());
        initial.push(rho0.block(m));
        let mult = if m == 0 { 1.0 } else { 2.0 };
        let block = match target.block(m) {
            Some(b) => b.matrix(j_max) * C64::new(mult, 0.0),
            None => DMatrix::zeros(sys.dim(), sys.dim()),
        };
        tgt.push(block);
    }
    Ok(Reduced {
        dynamics: DensityDynamics::new(couplings),
        initial,
        target: tgt,
    })
}

fn summary(overlap: C64, target: &TargetDensity) -> ThermalSummary {
    let purity = target.purity();
    ThermalSummary {
        projection: overlap.norm_sqr(),
        normalized_fidelity: overlap.re / purity,
        target_purity: purity,
    }
}

/// Density-matrix optimisation from the equilibrium state at the target's
/// temperature.
pub fn run_thermal(
    params: &RotorParams,
    target: &TargetDensity,
    config: &ThermalConfig,
    j_max: usize,
) -> Result<ThermalRun> {
    if config.j_opt != target.j_opt || (config.temperature - target.temperature).abs() > 0.0 {
        return Err(Error::InvalidConfig(
            "target density does not match the thermal configuration".into(),
        ));
    }
    if j_max < target.j_opt {
        return Err(Error::InvalidConfig("j_max must be at least j_opt".into()));
    }
    if config.opt.trial_field.samples.iter().all(|e| *e == 0.0) {
        return Err(Error::InvalidConfig(
            "thermal runs need a nonzero trial field".into(),
        ));
    }
    let rho0 = thermal_state(params, config.temperature, j_max)?;
    // Blocks without target weight have a vanishing adjoint.
    let m_max = target
        .blocks
        .iter()
        .filter(|b| b.weights.iter().any(|w| *w > 0.0))
        .map(|b| b.m.unsigned_abs() as usize)
        .max()
        .unwrap_or(0);
    let red = reduce(params, &rho0, target, m_max)?;
    let out = optimize(&red.dynamics, &red.initial, &red.target, &config.opt)?;
    let overlap = red.dynamics.overlap(&red.target, &out.final_state);
    Ok(ThermalRun {
        field: out.field,
        records: out.records,
        summary: summary(overlap, target),
    })
}

/// Propagates every `m` block of the equilibrium state under `field` and
/// samples projection, normalised fidelity and `⟨cos θ⟩` at each node.
pub fn thermal_observables(
    params: &RotorParams,
    target: &TargetDensity,
    field: &ControlField,
    j_max: usize,
) -> Result<Vec<ThermalSample>> {
    let rho0 = thermal_state(params, target.temperature, j_max)?;
    let red = reduce(params, &rho0, target, j_max)?;
    let traj = propagate_forward_with(&red.dynamics, field, &red.initial)?;
    let cos: Vec<DMatrix<C64>> = (0..=j_max as i32)
        .map(|m| cos_theta_matrix(j_max, m).map(|c| c.map(|x| C64::new(x, 0.0))))
        .collect::<Result<_>>()?;
    Ok(traj
        .states
        .iter()
        .enumerate()
        .map(|(i, rho)| {
            let s = summary(red.dynamics.overlap(&red.target, rho), target);
            let orientation = rho
                .iter()
                .zip(&cos)
                .enumerate()
                .map(|(m, (r, c))| {
                    let mult = if m == 0 { 1.0 } else { 2.0 };
                    mult * (c * r).trace().re
                })
                .sum();
            ThermalSample {
                t: field.grid.time(i),
                projection: s.projection,
                normalized_fidelity: s.normalized_fidelity,
                orientation,
            }
        })
        .collect())
}

/// Level populations along the trajectory for `m = 0..=j_max`, indexed
/// `[m][node][j − m]`. Blocks with `−m` evolve identically.
pub fn block_populations(
    params: &RotorParams,
    temperature: f64,
    field: &ControlField,
    j_max: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let rho0 = thermal_state(params, temperature, j_max)?;
    let couplings = (0..=j_max as i32)
        .map(|m| RotorSystem::new(*params, j_max, m).map(|s| s.coupling()))
        .collect::<Result<Vec<_>>>()?;
    let initial: Vec<DMatrix<C64>> = (0..=j_max as i32).map(|m| rho0.block(m)).collect();
    let traj = propagate_forward_with(&DensityDynamics::new(couplings), field, &initial)?;
    let mut out = vec![Vec::with_capacity(traj.states.len()); j_max + 1];
    for state in &traj.states {
        for (m, rho) in state.iter().enumerate() {
            out[m].push(rho.diagonal().iter().map(|z| z.re).collect());
        }
    }
    Ok(out)
}

/// Eigenvalues of each block, descending.
pub fn block_spectra(rho: &[DMatrix<C64>]) -> Vec<Vec<f64>> {
    rho.iter()
        .map(|r| {
            let mut e: Vec<f64> = r
                .clone()
                .hermitian_part()
                .symmetric_eigenvalues()
                .iter()
                .copied()
                .collect();
            e.sort_by(|a, b| b.total_cmp(a));
            e
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monotonic::default_trial;
    use crate::propagate::TimeGrid;

    #[test]
    fn short_run_monotone_with_preserved_spectrum() {
        let p = RotorParams::co();
        let tgt = build_target_density(&p, 5.0, 4).unwrap();
        let g = TimeGrid::new(p.rotational_period(), 256).unwrap();
        let mut opt = OptimizationConfig::new(default_trial(g), 2, 6.5e3);
        opt.max_iters = 4;
        opt.stop_tol = -1.0;
        let cfg = ThermalConfig {
            temperature: 5.0,
            j_opt: 4,
            opt,
        };
        let out = run_thermal(&p, &tgt, &cfg, 8).unwrap();
        for r in &out.records[1..] {
            assert!(r.delta_j >= -1e-10);
            assert!((r.delta_j - (r.p1 + r.p2)).abs() < 1e-8);
        }
        let last = out.records.last().unwrap();
        assert!((last.projection - out.summary.projection).abs() < 1e-12);
        assert!(out.summary.normalized_fidelity <= 1.0 + 1e-12);

        let rho0 = thermal_state(&p, 5.0, 8).unwrap();
        let red = reduce(&p, &rho0, &tgt, 8).unwrap();
        let traj = propagate_forward_with(&red.dynamics, &out.field, &red.initial).unwrap();
        let s0 = block_spectra(&red.initial);
        let s1 = block_spectra(traj.last());
        for (a, b) in s0.iter().zip(&s1) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-10);
            }
        }
        let trace: f64 = traj
            .last()
            .iter()
            .enumerate()
            .map(|(m, r)| if m == 0 { 1.0 } else { 2.0 } * r.trace().re)
            .sum();
        assert!((trace - 1.0).abs() < 1e-12);
        let obs = thermal_observables(&p, &tgt, &out.field, 8).unwrap();
        assert!((obs.last().unwrap().projection - out.summary.projection).abs() < 1e-10);
        assert!(obs[0].orientation.abs() < 1e-14);
    }
}
