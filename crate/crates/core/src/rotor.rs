//! Truncated rigid-rotor model of a linear molecule in a linearly polarized
//! field.
//!
//! The azimuthal quantum number `m` is conserved, so every operator lives in
//! one `m` block spanned by `|j, m⟩` with `|m| ≤ j ≤ j_max`. Row `r` of every
//! matrix corresponds to `j = |m| + r`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::propagate::Coupling;
use crate::{Error, Result, C64, CM1_TO_HARTREE};

/// Molecular constants in atomic units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotorParams {
    /// Rotational constant (Hartree).
    pub b: f64,
    /// Permanent dipole moment.
    pub mu0: f64,
    pub alpha_par: f64,
    pub alpha_perp: f64,
    pub beta_par: f64,
    pub beta_perp: f64,
}

impl RotorParams {
    /// Builds the parameter set with the rotational constant given in cm⁻¹.
    pub fn from_cm1(
        b_cm1: f64,
        mu0: f64,
        alpha_par: f64,
        alpha_perp: f64,
        beta_par: f64,
        beta_perp: f64,
    ) -> Result<Self> {
        let params = Self {
            b: b_cm1 * CM1_TO_HARTREE,
            mu0,
            alpha_par,
            alpha_perp,
            beta_par,
            beta_perp,
        };
        params.validate()?;
        Ok(params)
    }

    /// Carbon monoxide.
    pub fn co() -> Self {
        Self {
            b: 1.9313 * CM1_TO_HARTREE,
            mu0: 0.044,
            alpha_par: 15.65,
            alpha_perp: 11.73,
            beta_par: 28.35,
            beta_perp: 6.64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.b,
            self.mu0,
            self.alpha_par,
            self.alpha_perp,
            self.beta_par,
            self.beta_perp,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "non-finite molecular constant".into(),
            ));
        }
        if self.b <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "rotational constant must be positive, got {}",
                self.b
            )));
        }
        Ok(())
    }

    /// Full rephasing time of the `B j(j+1)` spectrum, `π / B`.
    pub fn rotational_period(&self) -> f64 {
        std::f64::consts::PI / self.b
    }

    /// Transition frequency `2B(j+1)` between `j` and `j+1`.
    pub fn line(&self, j: usize) -> f64 {
        2.0 * self.b * (j as f64 + 1.0)
    }
}

fn check_block(j_max: usize, m: i32) -> Result<()> {
    if m.unsigned_abs() as usize > j_max {
        return Err(Error::InvalidArgument(format!(
            "|m| = {} exceeds j_max = {}",
            m.abs(),
            j_max
        )));
    }
    Ok(())
}

/// Dimension of the `m` block truncated at `j_max`.
pub fn block_dim(j_max: usize, m: i32) -> usize {
    j_max + 1 - m.unsigned_abs() as usize
}

/// Matrix of `cos θ` in the `|j, m⟩` basis, `|m| ≤ j ≤ j_max`.
pub fn cos_theta_matrix(j_max: usize, m: i32) -> Result<DMatrix<f64>> {
    check_block(j_max, m)?;
    let m_abs = m.unsigned_abs() as usize;
    let dim = block_dim(j_max, m);
    let m2 = (m_abs * m_abs) as f64;
    let mut c = DMatrix::zeros(dim, dim);
    for r in 0..dim.saturating_sub(1) {
        let j = (m_abs + r) as f64;
        let v = (((j + 1.0) * (j + 1.0) - m2) / ((2.0 * j + 1.0) * (2.0 * j + 3.0))).sqrt();
        c[(r, r + 1)] = v;
        c[(r + 1, r)] = v;
    }
    Ok(c)
}

/// Matrices of `cos²θ` and `cos³θ`, exact on the retained basis.
///
/// The powers are taken on a basis extended by three levels and truncated
/// afterwards; a product of truncated matrices would miss the intermediate
/// states above `j_max` in the last rows.
pub fn cos_power_matrices(j_max: usize, m: i32) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_block(j_max, m)?;
    let dim = block_dim(j_max, m);
    let ext = cos_theta_matrix(j_max + 3, m)?;
    let ext2 = &ext * &ext;
    let ext3 = &ext2 * &ext;
    let c2 = symmetrize(ext2.view((0, 0), (dim, dim)).into_owned());
    let c3 = symmetrize(ext3.view((0, 0), (dim, dim)).into_owned());
    Ok((c2, c3))
}

fn symmetrize(a: DMatrix<f64>) -> DMatrix<f64> {
    (&a + a.transpose()) * 0.5
}

/// Operators of one `m` block of the rotor.
#[derive(Debug, Clone)]
pub struct RotorSystem {
    pub params: RotorParams,
    pub j_max: usize,
    pub m: i32,
    pub h0: DMatrix<f64>,
    pub c1: DMatrix<f64>,
    pub c2: DMatrix<f64>,
    pub c3: DMatrix<f64>,
    pub mu_op: DMatrix<f64>,
    pub alpha_op: DMatrix<f64>,
    pub beta_op: DMatrix<f64>,
}

impl RotorSystem {
    pub fn new(params: RotorParams, j_max: usize, m: i32) -> Result<Self> {
        params.validate()?;
        let c1 = cos_theta_matrix(j_max, m)?;
        let (c2, c3) = cos_power_matrices(j_max, m)?;
        let dim = c1.nrows();
        let m_abs = m.unsigned_abs() as usize;
        let h0 = DMatrix::from_fn(dim, dim, |r, c| {
            if r == c {
                let j = (m_abs + r) as f64;
                params.b * j * (j + 1.0)
            } else {
                0.0
            }
        });
        let eye = DMatrix::<f64>::identity(dim, dim);
        let mu_op = &c1 * params.mu0;
        let alpha_op =
            (&c2 * (params.alpha_par - params.alpha_perp) + &eye * params.alpha_perp) * 0.5;
        let beta_op = (&c3 * (params.beta_par - 3.0 * params.beta_perp)
            + &c1 * (3.0 * params.beta_perp))
            / 6.0;
        Ok(Self {
            params,
            j_max,
            m,
            h0,
            c1,
            c2,
            c3,
            mu_op,
            alpha_op,
            beta_op,
        })
    }

    pub fn dim(&self) -> usize {
        self.h0.nrows()
    }

    /// Basis row of level `j`, if retained.
    pub fn index_of(&self, j: usize) -> Option<usize> {
        let m_abs = self.m.unsigned_abs() as usize;
        (j >= m_abs && j <= self.j_max).then(|| j - m_abs)
    }

    /// `H0 − E μ − E² α − E³ β`.
    pub fn hamiltonian(&self, e: f64) -> DMatrix<f64> {
        &self.h0 - &self.mu_op * e - &self.alpha_op * (e * e) - &self.beta_op * (e * e * e)
    }

    /// Field coupling in the polynomial form consumed by the propagators.
    pub fn coupling(&self) -> Coupling {
        Coupling::new(
            self.h0.clone(),
            [
                self.mu_op.clone(),
                self.alpha_op.clone(),
                self.beta_op.clone(),
            ],
        )
    }

    /// Basis vector `|j, m⟩`.
    pub fn basis_state(&self, j: usize) -> Result<DVector<C64>> {
        let idx = self.index_of(j).ok_or_else(|| {
            Error::InvalidArgument(format!("level j = {j} not in block m = {}", self.m))
        })?;
        let mut v = DVector::zeros(self.dim());
        v[idx] = C64::new(1.0, 0.0);
        Ok(v)
    }

    /// `⟨ψ|cos θ|ψ⟩`.
    pub fn orientation(&self, psi: &DVector<C64>) -> f64 {
        let c1 = self.c1.map(|x| C64::new(x, 0.0));
        psi.dotc(&(&c1 * psi)).re
    }
}

/// State maximizing `⟨cos θ⟩` inside the subspace `j ≤ j_opt`.
#[derive(Debug, Clone)]
pub struct TargetState {
    pub j_opt: usize,
    pub m: i32,
    /// Amplitudes over `|j, m⟩`, `|m| ≤ j ≤ j_opt`.
    pub vector: DVector<C64>,
    pub eigenvalue: f64,
}

impl TargetState {
    /// Pads the target with zeros up to `j_max`.
    pub fn embed(&self, j_max: usize) -> Result<DVector<C64>> {
        if j_max < self.j_opt {
            return Err(Error::InvalidArgument(format!(
                "j_max = {j_max} below j_opt = {}",
                self.j_opt
            )));
        }
        let mut v = DVector::zeros(block_dim(j_max, self.m));
        v.rows_mut(0, self.vector.len()).copy_from(&self.vector);
        Ok(v)
    }
}

/// Eigenpairs of a real symmetric matrix sorted by descending eigenvalue.
///
/// Each eigenvector is signed so its largest-magnitude component is positive.
pub fn sorted_eigen_desc(a: DMatrix<f64>) -> Vec<(f64, DVector<f64>)> {
    let eig = SymmetricEigen::new(a);
    let mut pairs: Vec<(f64, DVector<f64>)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(k, &val)| {
            let mut v = eig.eigenvectors.column(k).into_owned();
            let lead = v
                .iter()
                .copied()
                .fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if lead < 0.0 {
                v.neg_mut();
            }
            (val, v)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

pub fn build_target(j_opt: usize, m: i32) -> Result<TargetState> {
    let c = cos_theta_matrix(j_opt, m)?;
    let (eigenvalue, v) = sorted_eigen_desc(c)
        .into_iter()
        .next()
        .expect("non-empty block");
    Ok(TargetState {
        j_opt,
        m,
        vector: v.map(|x| C64::new(x, 0.0)),
        eigenvalue,
    })
}
