//! Per-time-point update kernels.
//!
//! Both update rules act on the integrand
//!
//! ```text
//! P(x) = −λ (x^{2n} − e^{2n}) + (e − x) μ_b + (e² − x²) α_b + (e³ − x³) β_b
//! ```
//!
//! where `e` is the reference field and `μ_b, α_b, β_b` the brackets at this
//! time. `P(e) = 0`, so any `x` with `P(x) ≥ 0` keeps the cost from
//! decreasing. The forward (`P₁`) and backward (`P₂`) integrands share this
//! form and differ only in which field plays the reference.
//!
//! Algorithm I takes the global maximiser of `P`. Algorithm II solves
//! `x − e = η · P(x) / (x − e)`, which makes `P(x) = (x − e)² / η ≥ 0`.

use crate::{Error, Result};

/// Brackets `2 Im[⟨ψ|χ⟩⟨χ|A|ψ⟩]` of the three coupling operators.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Brackets {
    pub mu_b: f64,
    pub alpha_b: f64,
    pub beta_b: f64,
}

impl Brackets {
    pub fn new(mu_b: f64, alpha_b: f64, beta_b: f64) -> Self {
        Self {
            mu_b,
            alpha_b,
            beta_b,
        }
    }

    pub fn from_array(b: [f64; 3]) -> Self {
        Self::new(b[0], b[1], b[2])
    }

    fn coeffs(&self) -> [f64; 3] {
        [self.mu_b, self.alpha_b, self.beta_b]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateParams {
    /// Local penalty `λ / s(t)`.
    pub lambda_t: f64,
    /// Cost exponent; the penalty is `λ E^{2n}`.
    pub n: u32,
    pub eta: f64,
    /// Field at which the integrand vanishes.
    pub e_ref: f64,
}

impl UpdateParams {
    fn check(&self) -> Result<()> {
        if !(self.n == 1 || self.n == 2) {
            return Err(Error::InvalidConfig(format!(
                "cost exponent n must be 1 or 2, got {}",
                self.n
            )));
        }
        if !(self.lambda_t >= 0.0) || !self.e_ref.is_finite() {
            return Err(Error::InvalidConfig(
                "penalty must be non-negative and reference finite".into(),
            ));
        }
        Ok(())
    }
}

/// Value of the update integrand at `x`.
pub fn integrand(b: &Brackets, p: &UpdateParams, x: f64) -> f64 {
    let e = p.e_ref;
    let two_n = 2 * p.n as i32;
    -p.lambda_t * (x.powi(two_n) - e.powi(two_n))
        + (e - x) * b.mu_b
        + (e * e - x * x) * b.alpha_b
        + (e * e * e - x * x * x) * b.beta_b
}

/// `(x^{2n} − e^{2n}) / (x − e)`.
fn penalty_quotient(n: u32, x: f64, e: f64) -> f64 {
    match n {
        1 => x + e,
        _ => x * x * x + x * x * e + x * e * e + e * e * e,
    }
}

/// Residual of the implicit update equation; zero at the Algorithm II root.
pub fn update_ii_residual(b: &Brackets, p: &UpdateParams, x: f64) -> f64 {
    let e = p.e_ref;
    (x - e)
        + p.eta
            * (p.lambda_t * penalty_quotient(p.n, x, e)
                + b.mu_b
                + b.alpha_b * (x + e)
                + b.beta_b * (x * x + x * e + e * e))
}

/// Coefficients of `c[0] + c[1] x + c[2] x² + c[3] x³`.
type Poly3 = [f64; 4];

fn eval(c: &Poly3, x: f64) -> f64 {
    ((c[3] * x + c[2]) * x + c[1]) * x + c[0]
}

fn eval_d(c: &Poly3, x: f64) -> f64 {
    (3.0 * c[3] * x + 2.0 * c[2]) * x + c[1]
}

/// Newton polish of an approximate root; keeps the input if Newton diverges.
fn polish(c: &Poly3, mut x: f64) -> f64 {
    let mut best = (eval(c, x).abs(), x);
    for _ in 0..8 {
        let d = eval_d(c, x);
        if d == 0.0 {
            break;
        }
        let next = x - eval(c, x) / d;
        if !next.is_finite() {
            break;
        }
        x = next;
        let r = eval(c, x).abs();
        if r < best.0 {
            best = (r, x);
        }
        if r == 0.0 {
            break;
        }
    }
    best.1
}

/// Sorted real roots of a polynomial of degree at most three.
///
/// Closed forms from the discriminant, then a Newton polish of each root.
/// Leading coefficients that vanish reduce the degree; the zero polynomial
/// yields no roots.
pub fn real_roots(c: Poly3) -> Vec<f64> {
    let scale = c.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let tiny = 1e-300;
    let mut roots = if c[3].abs() > tiny {
        cubic(c[3], c[2], c[1], c[0])
    } else if c[2].abs() > tiny {
        quadratic(c[2], c[1], c[0])
    } else if c[1].abs() > tiny {
        vec![-c[0] / c[1]]
    } else {
        Vec::new()
    };
    for r in roots.iter_mut() {
        *r = polish(&c, *r);
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup();
    roots
}

fn quadratic(a: f64, b: f64, c: f64) -> Vec<f64> {
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    if disc == 0.0 {
        return vec![-b / (2.0 * a)];
    }
    // no cancellation between b and the square root
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        return vec![0.0];
    }
    vec![q / a, c / q]
}

fn cubic(a: f64, b: f64, c: f64, d: f64) -> Vec<f64> {
    // depressed cubic t³ + p t + q = 0 with x = t − b/(3a)
    let (b, c, d) = (b / a, c / a, d / a);
    let shift = b / 3.0;
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    if p == 0.0 && q == 0.0 {
        return vec![-shift];
    }
    if disc > 0.0 {
        let s = disc.sqrt();
        let u = (-q / 2.0 + s).cbrt();
        let v = (-q / 2.0 - s).cbrt();
        vec![u + v - shift]
    } else {
        // three real roots (possibly repeated)
        let r = (-p / 3.0).sqrt();
        let arg = if r == 0.0 {
            0.0
        } else {
            (-q / (2.0 * r * r * r)).clamp(-1.0, 1.0)
        };
        let theta = arg.acos();
        (0..3)
            .map(|k| {
                2.0 * r * ((theta - 2.0 * std::f64::consts::PI * k as f64) / 3.0).cos() - shift
            })
            .collect()
    }
}

/// Closest candidate to `previous`; equidistant candidates resolve to the
/// smaller magnitude.
fn closest(roots: &[f64], previous: f64) -> Option<f64> {
    roots.iter().copied().min_by(|a, b| {
        let da = (a - previous).abs();
        let db = (b - previous).abs();
        da.total_cmp(&db).then(a.abs().total_cmp(&b.abs()))
    })
}

/// Global maximiser of the integrand (Algorithm I).
///
/// The maximum is attained at a real critical point, found as a root of the
/// cubic (or lower-degree) derivative. Requires the penalty to dominate the
/// highest power of the coupling so that the integrand is bounded above.
pub fn maximize_p1(b: &Brackets, p: &UpdateParams) -> Result<f64> {
    p.check()?;
    // d/dx P = −2nλ x^{2n−1} − μ − 2α x − 3β x²
    let mut d: Poly3 = [-b.mu_b, -2.0 * b.alpha_b, -3.0 * b.beta_b, 0.0];
    match p.n {
        1 => {
            d[1] -= 2.0 * p.lambda_t;
            if b.beta_b != 0.0 || !(p.lambda_t + b.alpha_b > 0.0) {
                return Err(Error::InvalidConfig(
                    "n = 1 does not bound the integrand for this coupling".into(),
                ));
            }
        }
        _ => {
            d[3] -= 4.0 * p.lambda_t;
            if !(p.lambda_t > 0.0) {
                return Err(Error::InvalidConfig(
                    "n = 2 requires a positive penalty".into(),
                ));
            }
        }
    }
    let crit = real_roots(d);
    let best = crit
        .into_iter()
        .map(|x| (integrand(b, p, x), x))
        .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.abs().total_cmp(&a.1.abs())))
        .map(|(_, x)| x)
        .unwrap_or(0.0);
    // Rounding can leave the best critical value a hair below P(e) = 0.
    if integrand(b, p, best) < 0.0 {
        Ok(p.e_ref)
    } else {
        Ok(best)
    }
}

/// Maximiser of the backward integrand: same kernel with `e_ref = E_k`.
pub fn maximize_p2(b: &Brackets, p: &UpdateParams) -> Result<f64> {
    maximize_p1(b, p)
}

/// Root of the implicit update equation closest to `previous` (Algorithm II).
///
/// Sequential in time: `previous` is the value accepted at the adjacent node.
pub fn solve_update_ii(b: &Brackets, p: &UpdateParams, previous: f64) -> Result<f64> {
    p.check()?;
    if !(p.eta > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "eta must be positive, got {}",
            p.eta
        )));
    }
    let (e, eta, l) = (p.e_ref, p.eta, p.lambda_t);
    let mut c: Poly3 = [
        -e + eta * (b.mu_b + b.alpha_b * e + b.beta_b * e * e),
        1.0 + eta * (b.alpha_b + b.beta_b * e),
        eta * b.beta_b,
        0.0,
    ];
    match p.n {
        1 => {
            c[0] += eta * l * e;
            c[1] += eta * l;
        }
        _ => {
            c[0] += eta * l * e * e * e;
            c[1] += eta * l * e * e;
            c[2] += eta * l * e;
            c[3] += eta * l;
        }
    }
    let roots = real_roots(c);
    closest(&roots, previous).ok_or(Error::NoRealRoot { node: 0 })
}

/// Backward-sweep variant: same equation with `e_ref = E_k`.
pub fn solve_update_ii_p2(b: &Brackets, p: &UpdateParams, previous: f64) -> Result<f64> {
    solve_update_ii(b, p, previous)
}

/// Which update rule to apply at each time point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum UpdateRule {
    #[serde(rename = "I")]
    Maximize,
    #[serde(rename = "II")]
    Implicit,
}

impl UpdateRule {
    pub fn apply(self, b: &Brackets, p: &UpdateParams, previous: f64) -> Result<f64> {
        match self {
            UpdateRule::Maximize => maximize_p1(b, p),
            UpdateRule::Implicit => solve_update_ii(b, p, previous),
        }
    }
}

/// Left-hand side of the stationarity condition at one time point,
/// `2nλE^{2n−1} + μ_b + 2α_b E + 3β_b E²`.
pub fn stationarity_lhs(b: &Brackets, lambda_t: f64, n: u32, e: f64) -> f64 {
    let [m, a, be] = b.coeffs();
    2.0 * n as f64 * lambda_t * e.powi(2 * n as i32 - 1) + m + 2.0 * a * e + 3.0 * be * e * e
}
