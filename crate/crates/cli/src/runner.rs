//! Executes one run and writes its data products.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use nlcontrol::monotonic::{default_trial, run, IterationRecord, OptimizationConfig};
use nlcontrol::propagate::{
    fidelity, propagate_forward, propagate_forward_coeffs, ControlField, Coupling, PureDynamics,
    TimeGrid,
};
use nlcontrol::rotor::{build_target, RotorParams, RotorSystem};
use nlcontrol::spectrum::{pixelate, spectrum_report, SpectrumConfig};
use nlcontrol::thermal::{
    block_populations, build_target_density, run_thermal, thermal_observables, TargetDensity,
    ThermalConfig,
};
use nlcontrol::twocolor::{
    dual_coeffs, run_dual, run_single, DualConfig, DualField, TwoColorSystem,
};
use nlcontrol::{C64, CM1_TO_HARTREE};
use serde::Serialize;

use crate::config::{Problem, RunSpec, SpectrumSpec, TrialSpec, ZERO_TRIAL_REASON};

/// Tolerance on `J_{k+1} − J_k` for the monotonicity flag.
pub const MONOTONE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum RunError {
    Config { reason: String, message: String },
    Numerical { reason: String, message: String },
}

impl RunError {
    pub fn config(reason: impl Into<String>, message: impl Into<String>) -> Self {
        RunError::Config {
            reason: reason.into(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config { .. } => 2,
            RunError::Numerical { .. } => 3,
        }
    }

    pub fn reason(&self) -> &str {
        match self {
            RunError::Config { reason, .. } | RunError::Numerical { reason, .. } => reason,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            RunError::Config { message, .. } | RunError::Numerical { message, .. } => message,
        }
    }
}

impl From<nlcontrol::Error> for RunError {
    fn from(e: nlcontrol::Error) -> Self {
        let reason = e.reason().to_string();
        let message = e.to_string();
        if e.is_numerical() {
            RunError::Numerical { reason, message }
        } else {
            RunError::Config { reason, message }
        }
    }
}

fn io_error(e: impl std::fmt::Display) -> RunError {
    RunError::config("io", e.to_string())
}

/// Field reconstructed from its spectrum and re-propagated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reconstruction {
    pub pixels: Option<usize>,
    pub band_max_cm1: f64,
    pub filter_only: bool,
    pub reference_projection: f64,
    pub projection: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunSummary {
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problem: Option<Problem>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_projection: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field_energy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trial_energy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monotone: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_delta_j: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature_k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalized_fidelity: Option<f64>,
    /// Share of the E₁ energy after `0.2 T_per` (dual problem).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub late_e1_fraction: Option<f64>,
    /// `‖E₁ − E₂‖ / ‖E₁‖` (dual problem).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e1_e2_relative_difference: Option<f64>,
    /// Trial zeros are still zero in the optimal field (single two-color problem).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zero_nodes_preserved: Option<bool>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub reconstructions: Vec<Reconstruction>,
}

impl RunSummary {
    pub fn error(err: &RunError) -> Self {
        Self {
            status: "error".into(),
            reason: Some(err.reason().into()),
            message: Some(err.message().into()),
            ..Default::default()
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), RunError> {
        fs::create_dir_all(dir).map_err(io_error)?;
        let text = serde_json::to_string_pretty(self).map_err(io_error)?;
        fs::write(dir.join("run_summary.json"), text + "\n").map_err(io_error)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub records: Vec<IterationRecord>,
}

/// Projection of a single field, for re-propagating reconstructions.
pub enum Evaluator {
    Pure {
        coupling: Coupling,
        initial: DVector<C64>,
        target: DVector<C64>,
    },
    Thermal {
        params: RotorParams,
        target: TargetDensity,
        j_max: usize,
    },
}

impl Evaluator {
    pub fn for_spec(spec: &RunSpec, params: &RotorParams) -> Result<Self, RunError> {
        let m = &spec.molecule;
        let sys = RotorSystem::new(*params, m.j_max, 0)?;
        let target = build_target(m.j_opt, 0)?.embed(m.j_max)?;
        let initial = sys.basis_state(0)?;
        Ok(match spec.problem {
            Problem::Pure => Evaluator::Pure {
                coupling: sys.coupling(),
                initial,
                target,
            },
            Problem::TwocolorSingle => Evaluator::Pure {
                coupling: two_color(spec, sys).single_coupling(),
                initial,
                target,
            },
            Problem::Thermal => {
                let t = spec.thermal.expect("validated").temperature_k;
                Evaluator::Thermal {
                    params: *params,
                    target: build_target_density(params, t, m.j_opt)?,
                    j_max: m.j_max,
                }
            }
            Problem::TwocolorDual => {
                return Err(RunError::config(
                    "invalid-config",
                    "dual fields carry two envelopes; reconstruct them within a run",
                ))
            }
        })
    }

    pub fn projection(&self, field: &ControlField) -> Result<f64, RunError> {
        match self {
            Evaluator::Pure {
                coupling,
                initial,
                target,
            } => {
                let traj = propagate_forward(coupling, field, initial)?;
                Ok(fidelity(target, traj.last()))
            }
            Evaluator::Thermal {
                params,
                target,
                j_max,
            } => {
                let obs = thermal_observables(params, target, field, *j_max)?;
                Ok(obs.last().expect("non-empty").projection)
            }
        }
    }
}

fn two_color(spec: &RunSpec, base: RotorSystem) -> TwoColorSystem {
    TwoColorSystem::new(base, spec.twocolor.unwrap_or_default().omega)
}

fn build_trial(
    spec: &RunSpec,
    trial: Option<&TrialSpec>,
    grid: TimeGrid,
    seed: u64,
) -> Result<ControlField, RunError> {
    match trial {
        Some(t) => t
            .build(grid, seed)
            .map_err(|m| RunError::config("invalid-config", m)),
        None => Ok(default_trial(grid)),
    }
    .and_then(|f| {
        if spec.problem == Problem::TwocolorSingle && f.samples.iter().all(|e| *e == 0.0) {
            Err(RunError::config(ZERO_TRIAL_REASON, ZERO_TRIAL_REASON))
        } else {
            Ok(f)
        }
    })
}

fn opt_config(spec: &RunSpec, trial: ControlField) -> OptimizationConfig {
    let o = &spec.opt;
    let mut cfg = OptimizationConfig::new(trial, o.n, o.effective_lambda());
    cfg.rule = o.algorithm.rule();
    cfg.variant = o.variant;
    (cfg.eta1, cfg.eta2) = o.effective_eta();
    cfg.max_iters = o.max_iters;
    cfg.stop_tol = o.stop_tol;
    cfg
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, RunError> {
    File::create(dir.join(name))
        .map(BufWriter::new)
        .map_err(io_error)
}

fn write_field(dir: &Path, name: &str, field: &ControlField) -> Result<(), RunError> {
    let mut w = create(dir, name)?;
    field.write_csv(&mut w).map_err(io_error)?;
    w.flush().map_err(io_error)
}

fn write_records(dir: &Path, records: &[IterationRecord]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(dir.join("iterations.csv")).map_err(io_error)?;
    for r in records {
        w.serialize(r).map_err(io_error)?;
    }
    w.flush().map_err(io_error)
}

fn write_rows<R: Serialize>(
    dir: &Path,
    name: &str,
    rows: impl IntoIterator<Item = R>,
) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(dir.join(name)).map_err(io_error)?;
    for r in rows {
        w.serialize(r).map_err(io_error)?;
    }
    w.flush().map_err(io_error)
}

#[derive(Serialize)]
struct PureSample {
    t: f64,
    projection: f64,
    orientation: f64,
}

fn write_pure_trajectory(
    dir: &Path,
    sys: &RotorSystem,
    target: &DVector<C64>,
    grid: &TimeGrid,
    states: &[DVector<C64>],
) -> Result<(), RunError> {
    write_rows(
        dir,
        "trajectory.csv",
        states.iter().enumerate().map(|(i, psi)| PureSample {
            t: grid.time(i),
            projection: fidelity(target, psi),
            orientation: sys.orientation(psi),
        }),
    )
}

fn write_spectrum(
    dir: &Path,
    name: &str,
    field: &ControlField,
    params: &RotorParams,
    s: &SpectrumSpec,
    j_opt: usize,
) -> Result<(), RunError> {
    let report = spectrum_report(
        field,
        params,
        s.report_max_b * params.b,
        s.resolution_b * params.b,
        j_opt,
    )?;
    let mut w = create(dir, name)?;
    report.write_csv(&mut w).map_err(io_error)?;
    w.flush().map_err(io_error)
}

/// One transform configuration per requested reconstruction.
pub fn spectrum_configs(
    s: &SpectrumSpec,
    params: &RotorParams,
    j_opt: usize,
) -> Vec<(Option<usize>, SpectrumConfig)> {
    let base = |pixels: usize| {
        let mut cfg = SpectrumConfig::new(params, pixels, j_opt);
        if let Some(b) = s.band_max_cm1 {
            cfg.band_max = b * CM1_TO_HARTREE;
        }
        cfg.amplitude = s.amplitude;
        cfg.bins_per_pixel = (s.bins_per_pixel > 0).then_some(s.bins_per_pixel);
        cfg
    };
    if s.filter_only {
        let mut cfg = base(2);
        cfg.filter_only = true;
        return vec![(None, cfg)];
    }
    s.pixels.iter().map(|p| (Some(*p), base(*p))).collect()
}

fn file_suffix(pixels: Option<usize>) -> String {
    pixels.map_or("filtered".into(), |p| format!("pixelated_{p}"))
}

/// Reconstructs a single field for every requested configuration and
/// writes the reconstructed fields.
pub fn reconstruct(
    dir: &Path,
    field: &ControlField,
    reference: f64,
    eval: &Evaluator,
    s: &SpectrumSpec,
    params: &RotorParams,
    j_opt: usize,
) -> Result<Vec<Reconstruction>, RunError> {
    let mut out = Vec::new();
    for (pixels, cfg) in spectrum_configs(s, params, j_opt) {
        let approx = pixelate(field, &cfg)?;
        write_field(dir, &format!("field_{}.csv", file_suffix(pixels)), &approx)?;
        let p = eval.projection(&approx)?;
        out.push(Reconstruction {
            pixels,
            band_max_cm1: cfg.band_max / CM1_TO_HARTREE,
            filter_only: cfg.filter_only,
            reference_projection: reference,
            projection: p,
            delta: p - reference,
        });
    }
    Ok(out)
}

fn base_summary(
    spec: &RunSpec,
    preset: Option<&str>,
    records: &[IterationRecord],
    trial_energy: f64,
) -> RunSummary {
    let last = records.last().expect("at least the trial record");
    let min_delta = records
        .iter()
        .skip(1)
        .map(|r| r.delta_j)
        .fold(f64::INFINITY, f64::min);
    let (eta, _) = spec.opt.effective_eta();
    RunSummary {
        status: "ok".into(),
        preset: preset.map(str::to_string),
        problem: Some(spec.problem),
        iterations: Some(last.k),
        final_projection: Some(last.projection),
        final_cost: Some(last.cost_j),
        final_residual: Some(last.residual),
        field_energy: Some(last.field_energy),
        trial_energy: Some(trial_energy),
        energy_ratio: Some(last.field_energy / trial_energy),
        lambda: Some(spec.opt.effective_lambda()),
        eta: Some(eta),
        monotone: Some(min_delta >= -MONOTONE_TOL),
        min_delta_j: min_delta.is_finite().then_some(min_delta),
        ..Default::default()
    }
}

/// Runs `spec`, writing every output into `dir`. Failures are also recorded
/// in `dir/run_summary.json`.
pub fn execute(spec: &RunSpec, dir: &Path, preset: Option<&str>) -> Result<RunOutcome, RunError> {
    let result = fs::create_dir_all(dir)
        .map_err(io_error)
        .and_then(|_| execute_inner(spec, dir, preset));
    match result {
        Ok(outcome) => {
            outcome.summary.write(dir)?;
            Ok(outcome)
        }
        Err(e) => {
            let mut s = RunSummary::error(&e);
            s.preset = preset.map(str::to_string);
            s.problem = Some(spec.problem);
            // The directory may be the cause of the failure.
            let _ = s.write(dir);
            Err(e)
        }
    }
}

fn execute_inner(spec: &RunSpec, dir: &Path, preset: Option<&str>) -> Result<RunOutcome, RunError> {
    spec.validate().map_err(|m| {
        let reason = if m == ZERO_TRIAL_REASON {
            m.clone()
        } else {
            "invalid-config".into()
        };
        RunError::config(reason, m)
    })?;
    let params = spec.molecule.params()?;
    let grid = spec.grid(&params)?;
    let (j_max, j_opt) = (spec.molecule.j_max, spec.molecule.j_opt);
    let trial = build_trial(spec, spec.trial.as_ref(), grid, spec.seed)?;
    let base = RotorSystem::new(params, j_max, 0)?;
    let target = build_target(j_opt, 0)?;
    let phi = target.embed(j_max)?;

    match spec.problem {
        Problem::Pure | Problem::TwocolorSingle => {
            let trial_energy = trial.energy();
            let cfg = opt_config(spec, trial.clone());
            let out = if spec.problem == Problem::Pure {
                run(&base, &target, &cfg)?
            } else {
                run_single(&two_color(spec, base.clone()), &target, &cfg)?
            };
            write_records(dir, &out.records)?;
            write_field(dir, "field.csv", &out.field)?;
            write_pure_trajectory(dir, &base, &phi, &grid, &out.trajectory.states)?;
            let mut summary = base_summary(spec, preset, &out.records, trial_energy);
            if spec.problem == Problem::TwocolorSingle {
                let kept = trial
                    .samples
                    .iter()
                    .zip(&out.field.samples)
                    .all(|(t, e)| *t != 0.0 || *e == 0.0);
                summary.zero_nodes_preserved = Some(kept);
            }
            if let Some(s) = &spec.spectrum {
                write_spectrum(dir, "spectrum.csv", &out.field, &params, s, j_opt)?;
                let eval = Evaluator::for_spec(spec, &params)?;
                let reference = summary.final_projection.expect("set");
                summary.reconstructions =
                    reconstruct(dir, &out.field, reference, &eval, s, &params, j_opt)?;
            }
            Ok(RunOutcome {
                summary,
                records: out.records,
            })
        }
        Problem::TwocolorDual => {
            let trial2 = match &spec.trial2 {
                Some(t) => build_trial(spec, Some(t), grid, spec.seed.wrapping_add(1))?,
                None => trial.clone(),
            };
            let trial_energy = trial.energy() + trial2.energy();
            let o = &spec.opt;
            let mut cfg =
                DualConfig::new(DualField::new(trial, trial2)?, o.n, o.effective_lambda());
            cfg.rule = o.algorithm.rule();
            cfg.eta = o.effective_eta().0;
            cfg.max_iters = o.max_iters;
            cfg.stop_tol = o.stop_tol;
            let sys = two_color(spec, base.clone());
            let out = run_dual(&sys, &target, &cfg)?;
            write_records(dir, &out.records)?;
            let mut w = create(dir, "field_dual.csv")?;
            out.field.write_csv(&mut w).map_err(io_error)?;
            w.flush().map_err(io_error)?;
            write_pure_trajectory(dir, &base, &phi, &grid, &out.trajectory.states)?;

            let mut summary = base_summary(spec, preset, &out.records, trial_energy);
            let (e1, e2) = (&out.field.e1.samples, &out.field.e2.samples);
            let t_late = 0.2 * params.rotational_period();
            let total: f64 = e1.iter().map(|x| x * x).sum();
            let late: f64 = e1
                .iter()
                .enumerate()
                .filter(|(i, _)| grid.time(*i) > t_late)
                .map(|(_, x)| x * x)
                .sum();
            let diff: f64 = e1
                .iter()
                .zip(e2)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            summary.field_energy = Some(out.field.e1.energy() + out.field.e2.energy());
            summary.energy_ratio = Some(summary.field_energy.unwrap() / trial_energy);
            if total > 0.0 {
                summary.late_e1_fraction = Some(late / total);
                summary.e1_e2_relative_difference = Some(diff / total.sqrt());
            }
            if let Some(s) = &spec.spectrum {
                write_spectrum(dir, "spectrum.csv", &out.field.e1, &params, s, j_opt)?;
                write_spectrum(dir, "spectrum_e2.csv", &out.field.e2, &params, s, j_opt)?;
                let dynamics = PureDynamics::new(sys.dual_coupling());
                let psi0 = base.basis_state(0)?;
                let reference = summary.final_projection.expect("set");
                for (pixels, c) in spectrum_configs(s, &params, j_opt) {
                    let a1 = pixelate(&out.field.e1, &c)?;
                    let a2 = pixelate(&out.field.e2, &c)?;
                    let approx = DualField::new(a1, a2)?;
                    let mut w = create(dir, &format!("field_dual_{}.csv", file_suffix(pixels)))?;
                    approx.write_csv(&mut w).map_err(io_error)?;
                    w.flush().map_err(io_error)?;
                    let traj = propagate_forward_coeffs(
                        &dynamics,
                        &grid,
                        |i| dual_coeffs(approx.e1.samples[i], approx.e2.samples[i]),
                        &psi0,
                    )?;
                    let p = fidelity(&phi, traj.last());
                    summary.reconstructions.push(Reconstruction {
                        pixels,
                        band_max_cm1: c.band_max / CM1_TO_HARTREE,
                        filter_only: c.filter_only,
                        reference_projection: reference,
                        projection: p,
                        delta: p - reference,
                    });
                }
            }
            Ok(RunOutcome {
                summary,
                records: out.records,
            })
        }
        Problem::Thermal => {
            let temperature = spec.thermal.expect("validated").temperature_k;
            let trial_energy = trial.energy();
            let tcfg = ThermalConfig {
                temperature,
                j_opt,
                opt: opt_config(spec, trial),
            };
            let tgt = build_target_density(&params, temperature, j_opt)?;
            let out = run_thermal(&params, &tgt, &tcfg, j_max)?;
            write_records(dir, &out.records)?;
            write_field(dir, "field.csv", &out.field)?;
            let obs = thermal_observables(&params, &tgt, &out.field, j_max)?;
            write_rows(dir, "trajectory.csv", &obs)?;
            for (m, rows) in block_populations(&params, temperature, &out.field, j_max)?
                .iter()
                .enumerate()
            {
                let mut w = create(dir, &format!("populations_m{m}.csv"))?;
                let header: Vec<String> = (m..=j_max).map(|j| format!("j{j}")).collect();
                writeln!(w, "t,{}", header.join(",")).map_err(io_error)?;
                for (i, row) in rows.iter().enumerate() {
                    let cells: Vec<String> = row.iter().map(|p| format!("{p:.17e}")).collect();
                    writeln!(w, "{:.17e},{}", grid.time(i), cells.join(",")).map_err(io_error)?;
                }
                w.flush().map_err(io_error)?;
            }

            let mut summary = base_summary(spec, preset, &out.records, trial_energy);
            summary.temperature_k = Some(temperature);
            summary.normalized_fidelity = Some(out.summary.normalized_fidelity);
            if let Some(s) = &spec.spectrum {
                write_spectrum(dir, "spectrum.csv", &out.field, &params, s, j_opt)?;
                let eval = Evaluator::Thermal {
                    params,
                    target: tgt,
                    j_max,
                };
                let reference = summary.final_projection.expect("set");
                summary.reconstructions =
                    reconstruct(dir, &out.field, reference, &eval, s, &params, j_opt)?;
            }
            Ok(RunOutcome {
                summary,
                records: out.records,
            })
        }
    }
}
