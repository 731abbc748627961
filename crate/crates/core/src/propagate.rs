//! Time grids, control fields and unitary propagation.
//!
//! The field is sampled on the nodes `t_i = i·dt`, `i = 0..=n_steps`. Node
//! `i` owns the time cell `[t_i − dt/2, t_i + dt/2] ∩ [0, t_f]` (half width at
//! the two ends) during which the Hamiltonian is `H(E_i)`. Propagating from
//! node to node is therefore the symmetric product
//! `exp(−i H(E_{i+1}) dt/2) · exp(−i H(E_i) dt/2)`: second order, exactly
//! unitary, and every field sample acts through exactly one exponential,
//! which is what the monotonic update machinery relies on.
//!
//! Exponentials are built from the eigendecomposition of the real symmetric
//! Hamiltonian. Each [`CellBlock`] also carries the kernels needed to
//! evaluate the cell-averaged brackets `2 Im[⟨ψ|χ⟩⟨χ|A|ψ⟩]` exactly.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::{Error, Result, C64};

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Uniform grid on `[0, t_f]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_f: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_f: f64, n_steps: usize) -> Result<Self> {
        if n_steps < 2 {
            return Err(Error::InvalidArgument(format!(
                "n_steps must be >= 2, got {n_steps}"
            )));
        }
        if !(t_f.is_finite() && t_f > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "t_f must be positive, got {t_f}"
            )));
        }
        Ok(Self { t_f, n_steps })
    }

    pub fn dt(&self) -> f64 {
        self.t_f / self.n_steps as f64
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt()
    }

    /// Width of the cell owned by node `i`.
    pub fn cell_width(&self, i: usize) -> f64 {
        if i == 0 || i == self.n_steps {
            0.5 * self.dt()
        } else {
            self.dt()
        }
    }

    /// Trapezoidal quadrature of node samples.
    pub fn integrate(&self, values: impl IntoIterator<Item = f64>) -> f64 {
        values
            .into_iter()
            .enumerate()
            .map(|(i, v)| self.cell_width(i) * v)
            .sum()
    }

    /// Penalty envelope `sin²(π t / t_f)`.
    pub fn envelope(&self, i: usize) -> f64 {
        (std::f64::consts::PI * self.time(i) / self.t_f)
            .sin()
            .powi(2)
    }

    pub fn is_endpoint(&self, i: usize) -> bool {
        i == 0 || i == self.n_steps
    }
}

/// Real control field sampled on the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    pub grid: TimeGrid,
    pub samples: Vec<f64>,
}

impl ControlField {
    pub fn new(grid: TimeGrid, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != grid.n_nodes() {
            return Err(Error::DimensionMismatch {
                expected: grid.n_nodes(),
                got: samples.len(),
            });
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite field sample".into()));
        }
        Ok(Self { grid, samples })
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        Self {
            grid,
            samples: vec![0.0; grid.n_nodes()],
        }
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid,
            samples: (0..grid.n_nodes()).map(|i| f(grid.time(i))).collect(),
        }
    }

    /// Gaussian pulse with the given peak, center and full width at half maximum.
    pub fn gaussian(grid: TimeGrid, peak: f64, center: f64, fwhm: f64) -> Self {
        let sigma = fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
        Self::from_fn(grid, |t| {
            peak * (-(t - center).powi(2) / (2.0 * sigma * sigma)).exp()
        })
    }

    /// `∫ E² dt`.
    pub fn energy(&self) -> f64 {
        self.grid.integrate(self.samples.iter().map(|e| e * e))
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, e| m.max(e.abs()))
    }

    /// Copy with both endpoint samples set to zero.
    pub fn pinned(mut self) -> Self {
        let n = self.samples.len();
        self.samples[0] = 0.0;
        self.samples[n - 1] = 0.0;
        self
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,E")?;
        for (i, e) in self.samples.iter().enumerate() {
            writeln!(w, "{:.17e},{:.17e}", self.grid.time(i), e)?;
        }
        Ok(())
    }

    /// Parses the `t,E` format written by [`ControlField::write_csv`].
    pub fn read_csv(text: &str) -> Result<Self> {
        let mut times = Vec::new();
        let mut samples = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (ln == 0 && line.starts_with('t')) {
                continue;
            }
            let mut cols = line.split(',');
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|x| x.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidArgument(format!("bad field CSV line {}", ln + 1)))
            };
            times.push(parse(cols.next())?);
            samples.push(parse(cols.next())?);
        }
        if samples.len() < 3 {
            return Err(Error::InvalidArgument(
                "field CSV needs at least 3 samples".into(),
            ));
        }
        let grid = TimeGrid::new(*times.last().unwrap() - times[0], samples.len() - 1)?;
        ControlField::new(grid, samples)
    }
}

/// Polynomial coupling `H = H0 − Σ_p c_p · A_p`, with `c_p = E^p` for a
/// single field.
#[derive(Debug, Clone)]
pub struct Coupling {
    pub h0: DMatrix<f64>,
    pub ops: [DMatrix<f64>; 3],
}

impl Coupling {
    pub fn new(h0: DMatrix<f64>, ops: [DMatrix<f64>; 3]) -> Self {
        Self { h0, ops }
    }

    pub fn dim(&self) -> usize {
        self.h0.nrows()
    }

    pub fn hamiltonian_coeffs(&self, c: [f64; 3]) -> DMatrix<f64> {
        let mut h = self.h0.clone();
        for (op, ck) in self.ops.iter().zip(c) {
            if ck != 0.0 {
                h -= op * ck;
            }
        }
        h
    }

    pub fn hamiltonian(&self, e: f64) -> DMatrix<f64> {
        self.hamiltonian_coeffs(powers(e))
    }
}

/// `[E, E², E³]`.
pub fn powers(e: f64) -> [f64; 3] {
    [e, e * e, e * e * e]
}

/// `∫_0^τ e^{i x s} ds`.
fn phi(x: f64, tau: f64) -> C64 {
    let h = 0.5 * x * tau;
    let sinc = if h.abs() < 1e-8 {
        1.0 - h * h / 6.0
    } else {
        h.sin() / h
    };
    C64::from_polar(tau * sinc, h)
}

/// Exponential of one Hamiltonian over one time cell, with bracket kernels.
#[derive(Debug, Clone)]
pub struct CellBlock {
    pub tau: f64,
    values: DVector<f64>,
    vectors: DMatrix<C64>,
    /// `e^{−i d_a τ}`.
    phase: DVector<C64>,
    /// `exp(−i H τ)`.
    pub u: DMatrix<C64>,
    /// `V^T A_p V ∘ Φ`, `Φ_ab = ∫_0^τ e^{i(d_a − d_b)s} ds`.
    kernels: [DMatrix<C64>; 3],
}

impl CellBlock {
    pub fn new(coupling: &Coupling, coeffs: [f64; 3], tau: f64) -> Self {
        let h = coupling.hamiltonian_coeffs(coeffs);
        let eig = SymmetricEigen::new(h);
        let values = eig.eigenvalues;
        let d = values.len();
        // One Newton-Schulz step: orthogonality to round-off, so the trace
        // does not drift over thousands of cells.
        let v = &eig.eigenvectors
            * (DMatrix::identity(d, d) * 1.5 - eig.eigenvectors.tr_mul(&eig.eigenvectors) * 0.5);
        let phase = values.map(|x| C64::from_polar(1.0, -x * tau));
        let vectors = v.map(|x| C64::new(x, 0.0));
        let mut scaled = vectors.clone();
        for (mut col, p) in scaled.column_iter_mut().zip(phase.iter()) {
            col *= *p;
        }
        let u = &scaled * vectors.transpose();
        let phi_m = DMatrix::from_fn(d, d, |a, b| phi(values[a] - values[b], tau));
        let kernels = std::array::from_fn(|p| {
            let op = &coupling.ops[p];
            if op.iter().all(|x| *x == 0.0) {
                DMatrix::zeros(d, d)
            } else {
                let hat = v.transpose() * op * &v;
                phi_m.zip_map(&hat, |f, a| f * a)
            }
        });
        Self {
            tau,
            values,
            vectors,
            phase,
            u,
            kernels,
        }
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.values
    }

    fn to_eigen_vec(&self, x: &DVector<C64>) -> DVector<C64> {
        self.vectors.transpose() * x
    }

    fn to_eigen_mat(&self, x: &DMatrix<C64>) -> DMatrix<C64> {
        self.vectors.transpose() * x * &self.vectors
    }

    /// Brackets for a pure state: `ψ_start` at the left edge, `χ_end` at the
    /// right edge of the cell, both evolving under this cell's Hamiltonian.
    /// Returns `(⟨χ_end|U ψ_start⟩, [∫⟨χ(s)|A_p|ψ(s)⟩ ds])`.
    fn pure_integrals(&self, chi_end: &DVector<C64>, psi_start: &DVector<C64>) -> (C64, [C64; 3]) {
        let ch = self.to_eigen_vec(chi_end);
        let ps = self.to_eigen_vec(psi_start);
        let left = ch.zip_map(&self.phase, |c, p| c.conj() * p);
        let z = left.iter().zip(ps.iter()).map(|(l, p)| l * p).sum();
        let vals = std::array::from_fn(|p| {
            let kp = &self.kernels[p] * &ps;
            left.iter().zip(kp.iter()).map(|(l, k)| l * k).sum()
        });
        (z, vals)
    }

    fn density_integrals(
        &self,
        chi_end: &DMatrix<C64>,
        rho_start: &DMatrix<C64>,
    ) -> (C64, [C64; 3]) {
        let ch = self.to_eigen_mat(chi_end);
        let rh = self.to_eigen_mat(rho_start);
        let d = self.values.len();
        // conj(χ̂_ab) e^{−i(d_a − d_b)τ}
        let left = DMatrix::from_fn(d, d, |a, b| {
            ch[(a, b)].conj() * self.phase[a] * self.phase[b].conj()
        });
        let z = left.zip_fold(&rh, C64::new(0.0, 0.0), |acc, l, r| acc + l * r);
        let vals = std::array::from_fn(|p| {
            let f = &self.kernels[p];
            let comm = f * &rh - &rh * f;
            left.zip_fold(&comm, C64::new(0.0, 0.0), |acc, l, r| acc + l * r)
        });
        (z, vals)
    }
}

fn brackets_from(z: C64, vals: [C64; 3], tau: f64) -> [f64; 3] {
    vals.map(|v| 2.0 * (z.conj() * v).im / tau)
}

/// State space and propagation rules consumed by the optimisers.
pub trait Dynamics: Sync {
    type State: Clone + Send + Sync;
    type Cell: Send + Sync;

    /// Exponential of `H0 − Σ c_p A_p` over a cell of width `tau`.
    fn cell(&self, coeffs: [f64; 3], tau: f64) -> Self::Cell;
    fn forward(&self, cell: &Self::Cell, state: &Self::State) -> Self::State;
    fn backward(&self, cell: &Self::Cell, state: &Self::State) -> Self::State;
    /// `⟨a|b⟩`, or `Tr[a† b]` for density matrices.
    fn overlap(&self, a: &Self::State, b: &Self::State) -> C64;
    /// Cell-averaged brackets `2 Im[⟨ψ|χ⟩⟨χ|A_p|ψ⟩]` for the three coupling
    /// operators, with the states evolving under the cell Hamiltonian.
    fn brackets(
        &self,
        cell: &Self::Cell,
        chi_end: &Self::State,
        psi_start: &Self::State,
    ) -> [f64; 3];
    fn validate(&self, state: &Self::State) -> Result<()>;
}

/// Pure-state dynamics in one `m` block.
#[derive(Debug, Clone)]
pub struct PureDynamics {
    pub coupling: Coupling,
}

impl PureDynamics {
    pub fn new(coupling: Coupling) -> Self {
        Self { coupling }
    }
}

impl Dynamics for PureDynamics {
    type State = DVector<C64>;
    type Cell = CellBlock;

    fn cell(&self, coeffs: [f64; 3], tau: f64) -> CellBlock {
        CellBlock::new(&self.coupling, coeffs, tau)
    }

    fn forward(&self, cell: &CellBlock, state: &DVector<C64>) -> DVector<C64> {
        &cell.u * state
    }

    fn backward(&self, cell: &CellBlock, state: &DVector<C64>) -> DVector<C64> {
        cell.u.ad_mul(state)
    }

    fn overlap(&self, a: &DVector<C64>, b: &DVector<C64>) -> C64 {
        a.dotc(b)
    }

    fn brackets(
        &self,
        cell: &CellBlock,
        chi_end: &DVector<C64>,
        psi_start: &DVector<C64>,
    ) -> [f64; 3] {
        let (z, vals) = cell.pure_integrals(chi_end, psi_start);
        brackets_from(z, vals, cell.tau)
    }

    fn validate(&self, state: &DVector<C64>) -> Result<()> {
        if state.len() != self.coupling.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.coupling.dim(),
                got: state.len(),
            });
        }
        Ok(())
    }
}

/// Density-matrix dynamics over independent `m` blocks.
#[derive(Debug, Clone)]
pub struct DensityDynamics {
    pub blocks: Vec<Coupling>,
}

impl DensityDynamics {
    pub fn new(blocks: Vec<Coupling>) -> Self {
        Self { blocks }
    }
}

/// Largest elementwise deviation from Hermiticity.
pub fn hermitian_defect(m: &DMatrix<C64>) -> f64 {
    (m - m.adjoint())
        .iter()
        .fold(0.0_f64, |a, z| a.max(z.norm()))
}

impl Dynamics for DensityDynamics {
    type State = Vec<DMatrix<C64>>;
    type Cell = Vec<CellBlock>;

    fn cell(&self, coeffs: [f64; 3], tau: f64) -> Vec<CellBlock> {
        self.blocks
            .iter()
            .map(|c| CellBlock::new(c, coeffs, tau))
            .collect()
    }

    fn forward(&self, cell: &Vec<CellBlock>, state: &Self::State) -> Self::State {
        cell.iter()
            .zip(state)
            .map(|(c, rho)| &c.u * rho * c.u.adjoint())
            .collect()
    }

    fn backward(&self, cell: &Vec<CellBlock>, state: &Self::State) -> Self::State {
        cell.iter()
            .zip(state)
            .map(|(c, rho)| c.u.adjoint() * rho * &c.u)
            .collect()
    }

    fn overlap(&self, a: &Self::State, b: &Self::State) -> C64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.zip_fold(y, C64::new(0.0, 0.0), |acc, p, q| acc + p.conj() * q))
            .sum()
    }

    fn brackets(
        &self,
        cell: &Vec<CellBlock>,
        chi_end: &Self::State,
        rho_start: &Self::State,
    ) -> [f64; 3] {
        // ⟨⟨ρ|χ⟩⟩ is shared by all blocks, the operator part is summed.
        let mut z = C64::new(0.0, 0.0);
        let mut vals = [C64::new(0.0, 0.0); 3];
        let tau = cell[0].tau;
        for ((c, chi), rho) in cell.iter().zip(chi_end).zip(rho_start) {
            let (zb, vb) = c.density_integrals(chi, rho);
            z += zb;
            for (acc, v) in vals.iter_mut().zip(vb) {
                *acc += v;
            }
        }
        brackets_from(z, vals, tau)
    }

    fn validate(&self, state: &Self::State) -> Result<()> {
        if state.len() != self.blocks.len() {
            return Err(Error::DimensionMismatch {
                expected: self.blocks.len(),
                got: state.len(),
            });
        }
        for (rho, c) in state.iter().zip(&self.blocks) {
            if rho.nrows() != c.dim() || rho.ncols() != c.dim() {
                return Err(Error::DimensionMismatch {
                    expected: c.dim(),
                    got: rho.nrows(),
                });
            }
            let defect = hermitian_defect(rho);
            if defect > 1e-12 {
                return Err(Error::NonHermitian(defect));
            }
        }
        Ok(())
    }
}

/// One cell per node, built in parallel. `coeffs(i)` gives the coupling
/// coefficients at node `i`.
pub fn build_cells<D: Dynamics>(
    dynamics: &D,
    grid: &TimeGrid,
    coeffs: impl Fn(usize) -> [f64; 3] + Sync,
) -> Vec<D::Cell> {
    (0..grid.n_nodes())
        .into_par_iter()
        .map(|i| dynamics.cell(coeffs(i), grid.cell_width(i)))
        .collect()
}

/// States at the cell boundaries: entry `i` precedes cell `i`, the last entry
/// is the state at `t_f`.
pub fn forward_boundaries<D: Dynamics>(
    dynamics: &D,
    cells: &[D::Cell],
    initial: &D::State,
) -> Vec<D::State> {
    let mut out = Vec::with_capacity(cells.len() + 1);
    out.push(initial.clone());
    for cell in cells {
        let next = dynamics.forward(cell, out.last().unwrap());
        out.push(next);
    }
    out
}

/// Adjoint states at the cell boundaries, from the final condition at `t_f`.
pub fn backward_boundaries<D: Dynamics>(
    dynamics: &D,
    cells: &[D::Cell],
    terminal: &D::State,
) -> Vec<D::State> {
    let n = cells.len();
    let mut out = vec![terminal.clone(); n + 1];
    for i in (0..n).rev() {
        out[i] = dynamics.backward(&cells[i], &out[i + 1]);
    }
    out
}

/// States sampled at the grid nodes.
#[derive(Debug, Clone)]
pub struct StateTrajectory<S> {
    pub grid: TimeGrid,
    pub states: Vec<S>,
}

impl<S> StateTrajectory<S> {
    pub fn last(&self) -> &S {
        self.states.last().expect("non-empty trajectory")
    }
}

impl StateTrajectory<DVector<C64>> {
    /// `t` followed by the real and imaginary part of every amplitude.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let dim = self.states.first().map_or(0, |s| s.len());
        write!(w, "t")?;
        for k in 0..dim {
            write!(w, ",re{k},im{k}")?;
        }
        writeln!(w)?;
        for (i, s) in self.states.iter().enumerate() {
            write!(w, "{:.17e}", self.grid.time(i))?;
            for z in s.iter() {
                write!(w, ",{:.17e},{:.17e}", z.re, z.im)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn node_states<D: Dynamics>(
    dynamics: &D,
    grid: &TimeGrid,
    coeffs: impl Fn(usize) -> [f64; 3] + Sync,
    start: &D::State,
    forward: bool,
) -> Vec<D::State> {
    let half = 0.5 * grid.dt();
    let halves: Vec<D::Cell> = (0..grid.n_nodes())
        .into_par_iter()
        .map(|i| dynamics.cell(coeffs(i), half))
        .collect();
    let n = grid.n_nodes();
    let mut out = Vec::with_capacity(n);
    out.push(start.clone());
    for k in 0..grid.n_steps {
        let prev = out.last().unwrap();
        let next = if forward {
            dynamics.forward(&halves[k + 1], &dynamics.forward(&halves[k], prev))
        } else {
            let (a, b) = (n - 1 - k, n - 2 - k);
            dynamics.backward(&halves[b], &dynamics.backward(&halves[a], prev))
        };
        out.push(next);
    }
    if !forward {
        out.reverse();
    }
    out
}

/// Forward propagation under a single field, sampled at the nodes.
pub fn propagate_forward_with<D: Dynamics>(
    dynamics: &D,
    field: &ControlField,
    initial: &D::State,
) -> Result<StateTrajectory<D::State>> {
    dynamics.validate(initial)?;
    let states = node_states(
        dynamics,
        &field.grid,
        |i| powers(field.samples[i]),
        initial,
        true,
    );
    Ok(StateTrajectory {
        grid: field.grid,
        states,
    })
}

/// Forward propagation for an arbitrary coefficient schedule, e.g. several
/// fields combined into the coupling coefficients.
pub fn propagate_forward_coeffs<D: Dynamics>(
    dynamics: &D,
    grid: &TimeGrid,
    coeffs: impl Fn(usize) -> [f64; 3] + Sync,
    initial: &D::State,
) -> Result<StateTrajectory<D::State>> {
    dynamics.validate(initial)?;
    Ok(StateTrajectory {
        grid: *grid,
        states: node_states(dynamics, grid, coeffs, initial, true),
    })
}

/// Backward propagation from a final condition at `t_f`.
pub fn propagate_backward_with<D: Dynamics>(
    dynamics: &D,
    field: &ControlField,
    terminal: &D::State,
) -> Result<StateTrajectory<D::State>> {
    dynamics.validate(terminal)?;
    let states = node_states(
        dynamics,
        &field.grid,
        |i| powers(field.samples[i]),
        terminal,
        false,
    );
    Ok(StateTrajectory {
        grid: field.grid,
        states,
    })
}

pub fn propagate_forward(
    coupling: &Coupling,
    field: &ControlField,
    initial: &DVector<C64>,
) -> Result<StateTrajectory<DVector<C64>>> {
    propagate_forward_with(&PureDynamics::new(coupling.clone()), field, initial)
}

pub fn propagate_backward(
    coupling: &Coupling,
    field: &ControlField,
    terminal: &DVector<C64>,
) -> Result<StateTrajectory<DVector<C64>>> {
    propagate_backward_with(&PureDynamics::new(coupling.clone()), field, terminal)
}

/// von Neumann propagation of block-diagonal density matrices.
pub fn propagate_density(
    blocks: &[Coupling],
    field: &ControlField,
    rho0: &[DMatrix<C64>],
) -> Result<StateTrajectory<Vec<DMatrix<C64>>>> {
    propagate_forward_with(
        &DensityDynamics::new(blocks.to_vec()),
        field,
        &rho0.to_vec(),
    )
}

/// `|⟨a|b⟩|²`.
pub fn fidelity(a: &DVector<C64>, b: &DVector<C64>) -> f64 {
    a.dotc(b).norm_sqr()
}

/// `exp(−i H t)` for a real symmetric `H`; used by tests and diagnostics.
pub fn expm_symmetric(h: &DMatrix<f64>, t: f64) -> DMatrix<C64> {
    let eig = SymmetricEigen::new(h.clone());
    let v = eig.eigenvectors.map(|x| C64::new(x, 0.0));
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|x| (-I * x * t).exp()));
    &v * d * v.transpose()
}
