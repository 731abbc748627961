//! Run configuration files.
//!
//! A run is described by one TOML document. Unknown keys are rejected at
//! every level so a misspelt `lambda` cannot silently fall back to a default.

use std::path::PathBuf;

use nlcontrol::monotonic::Variant;
use nlcontrol::polyopt::UpdateRule;
use nlcontrol::propagate::{ControlField, TimeGrid};
use nlcontrol::rotor::RotorParams;
use nlcontrol::spectrum::AmplitudeMode;
use nlcontrol::CM1_TO_HARTREE;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const ZERO_TRIAL_REASON: &str = "zero trial field cannot seed nonlinear-only coupling";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    Pure,
    TwocolorDual,
    TwocolorSingle,
    Thermal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    /// Pointwise maximisation of the update integrand.
    I,
    /// Implicit stationarity update.
    II,
}

impl Algorithm {
    pub fn rule(self) -> UpdateRule {
        match self {
            Algorithm::I => UpdateRule::Maximize,
            Algorithm::II => UpdateRule::Implicit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub problem: Problem,
    #[serde(default)]
    pub molecule: MoleculeSpec,
    #[serde(default)]
    pub grid: GridSpec,
    pub opt: OptSpec,
    /// Trial field (E₁ for the dual problem).
    pub trial: Option<TrialSpec>,
    /// Trial for E₂ in the dual problem; defaults to `trial`.
    pub trial2: Option<TrialSpec>,
    pub twocolor: Option<TwoColorSpec>,
    pub thermal: Option<ThermalSpec>,
    pub spectrum: Option<SpectrumSpec>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Seed for randomised trial fields.
    #[serde(default)]
    pub seed: u64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MoleculeSpec {
    pub b_cm1: f64,
    pub mu0: f64,
    pub alpha_par: f64,
    pub alpha_perp: f64,
    pub beta_par: f64,
    pub beta_perp: f64,
    pub j_max: usize,
    pub j_opt: usize,
}

impl Default for MoleculeSpec {
    fn default() -> Self {
        let co = RotorParams::co();
        Self {
            b_cm1: co.b / CM1_TO_HARTREE,
            mu0: co.mu0,
            alpha_par: co.alpha_par,
            alpha_perp: co.alpha_perp,
            beta_par: co.beta_par,
            beta_perp: co.beta_perp,
            j_max: 8,
            j_opt: 4,
        }
    }
}

impl MoleculeSpec {
    pub fn params(&self) -> nlcontrol::Result<RotorParams> {
        RotorParams::from_cm1(
            self.b_cm1,
            self.mu0,
            self.alpha_par,
            self.alpha_perp,
            self.beta_par,
            self.beta_perp,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    /// Final time in rotational periods.
    pub periods: f64,
    pub n_steps: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            periods: 1.0,
            n_steps: 4096,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptSpec {
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub variant: Variant,
    pub n: u32,
    /// Penalty as quoted for the reference calculation.
    pub lambda: f64,
    #[serde(default = "one")]
    pub eta: f64,
    /// Step constant of the backward sweep in the full variant; defaults to `eta`.
    pub eta2: Option<f64>,
    /// Multiplier applied to `lambda` (normalisation retune).
    #[serde(default = "one")]
    pub lambda_scale: f64,
    /// Multiplier applied to `eta` and `eta2`.
    #[serde(default = "one")]
    pub eta_scale: f64,
    #[serde(default = "default_iters")]
    pub max_iters: usize,
    #[serde(default = "default_stop_tol")]
    pub stop_tol: f64,
}

fn default_algorithm() -> Algorithm {
    Algorithm::II
}

fn one() -> f64 {
    1.0
}

fn default_iters() -> usize {
    100
}

fn default_stop_tol() -> f64 {
    1e-6
}

impl OptSpec {
    pub fn effective_lambda(&self) -> f64 {
        self.lambda * self.lambda_scale
    }

    pub fn effective_eta(&self) -> (f64, f64) {
        let e1 = self.eta * self.eta_scale;
        (e1, self.eta2.map_or(e1, |e| e * self.eta_scale))
    }
}

/// Trial field. Times are fractions of the final time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrialSpec {
    Gaussian {
        peak: f64,
        #[serde(default = "half")]
        center: f64,
        #[serde(default = "quarter")]
        fwhm: f64,
        /// Zero outside `[start, end]`.
        #[serde(default)]
        start: f64,
        #[serde(default = "one")]
        end: f64,
    },
    Zero,
    /// Sum of `modes` sine harmonics with random amplitudes in
    /// `[−peak, peak]`, drawn from `seed`.
    Random {
        peak: f64,
        #[serde(default = "default_modes")]
        modes: usize,
    },
    /// CSV with columns `t,E` on the run grid.
    File {
        path: PathBuf,
    },
}

fn half() -> f64 {
    0.5
}

fn quarter() -> f64 {
    0.25
}

fn default_modes() -> usize {
    4
}

impl TrialSpec {
    pub fn build(&self, grid: TimeGrid, seed: u64) -> Result<ControlField, String> {
        let tf = grid.t_f;
        let field = match self {
            TrialSpec::Gaussian {
                peak,
                center,
                fwhm,
                start,
                end,
            } => {
                if !(*fwhm > 0.0) {
                    return Err("trial fwhm must be positive".into());
                }
                let g = ControlField::gaussian(grid, *peak, center * tf, fwhm * tf);
                let samples = g
                    .samples
                    .iter()
                    .enumerate()
                    .map(|(i, e)| {
                        let t = grid.time(i) / tf;
                        if t < *start || t > *end {
                            0.0
                        } else {
                            *e
                        }
                    })
                    .collect();
                ControlField::new(grid, samples).map_err(|e| e.to_string())?
            }
            TrialSpec::Zero => ControlField::zeros(grid),
            TrialSpec::Random { peak, modes } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let amps: Vec<f64> = (0..*modes)
                    .map(|_| rng.gen_range(-1.0..=1.0) * peak)
                    .collect();
                ControlField::from_fn(grid, |t| {
                    let x = std::f64::consts::PI * t / tf;
                    amps.iter()
                        .enumerate()
                        .map(|(k, a)| a * ((k + 1) as f64 * x).sin())
                        .sum()
                })
            }
            TrialSpec::File { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
                let f = ControlField::read_csv(&text).map_err(|e| e.to_string())?;
                if f.grid != grid {
                    return Err(format!(
                        "trial field in {} does not match the run grid",
                        path.display()
                    ));
                }
                f
            }
        };
        Ok(field.pinned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoColorSpec {
    /// Carrier frequency (a.u.).
    pub omega: f64,
}

impl Default for TwoColorSpec {
    fn default() -> Self {
        Self { omega: 0.057 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalSpec {
    #[serde(rename = "temperature_K")]
    pub temperature_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSpec {
    /// Pixel counts to reconstruct; each one is re-propagated.
    #[serde(default)]
    pub pixels: Vec<usize>,
    /// Band edge in cm⁻¹; defaults to the `j_opt − 1 → j_opt` line.
    pub band_max_cm1: Option<f64>,
    /// Band-pass only; `pixels` is ignored.
    #[serde(default)]
    pub filter_only: bool,
    #[serde(default)]
    pub amplitude: AmplitudeMode,
    /// Minimum transform bins per pixel; 0 uses the unpadded transform.
    #[serde(default = "default_bins")]
    pub bins_per_pixel: usize,
    /// Upper edge of `spectrum.csv` in units of B.
    #[serde(default = "default_report_max")]
    pub report_max_b: f64,
    /// Frequency step of `spectrum.csv` in units of B.
    #[serde(default = "default_resolution")]
    pub resolution_b: f64,
}

fn default_bins() -> usize {
    4
}

fn default_report_max() -> f64 {
    40.0
}

fn default_resolution() -> f64 {
    0.1
}

impl RunSpec {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let spec: RunSpec = toml::from_str(text).map_err(|e| e.to_string())?;
        spec.validate()?;
        Ok(spec)
    }

    /// Structural checks that do not need a field.
    pub fn validate(&self) -> Result<(), String> {
        let thermal = self.problem == Problem::Thermal;
        if thermal != self.thermal.is_some() {
            return Err(if thermal {
                "problem \"thermal\" needs a [thermal] section".into()
            } else {
                "[thermal] is only valid for problem \"thermal\"".into()
            });
        }
        let twocolor = matches!(
            self.problem,
            Problem::TwocolorDual | Problem::TwocolorSingle
        );
        if self.twocolor.is_some() && !twocolor {
            return Err("[twocolor] is only valid for two-color problems".into());
        }
        if self.trial2.is_some() && self.problem != Problem::TwocolorDual {
            return Err("[trial2] is only valid for problem \"twocolor_dual\"".into());
        }
        if self.problem == Problem::TwocolorSingle
            && matches!(self.trial, None | Some(TrialSpec::Zero))
        {
            return Err(ZERO_TRIAL_REASON.into());
        }
        if self.molecule.j_opt == 0 || self.molecule.j_opt > self.molecule.j_max {
            return Err("need 1 <= j_opt <= j_max".into());
        }
        if !(self.grid.periods > 0.0) || self.grid.n_steps < 2 {
            return Err("grid needs periods > 0 and n_steps >= 2".into());
        }
        if !(self.opt.lambda_scale > 0.0 && self.opt.eta_scale > 0.0) {
            return Err("lambda_scale and eta_scale must be positive".into());
        }
        Ok(())
    }

    pub fn grid(&self, params: &RotorParams) -> nlcontrol::Result<TimeGrid> {
        TimeGrid::new(
            self.grid.periods * params.rotational_period(),
            self.grid.n_steps,
        )
    }
}
