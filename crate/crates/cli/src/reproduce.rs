//! Runs the bundled presets and checks them against their thresholds.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::presets;
use crate::runner::{execute, RunError, RunOutcome, MONOTONE_TOL};

/// Largest ratio between thermal field energies still counted as matched.
pub const ENERGY_MATCH_RATIO: f64 = 1.15;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub preset: String,
    pub check: String,
    pub value: f64,
    pub threshold: String,
    pub pass: bool,
}

fn check(preset: &str, name: &str, value: f64, threshold: &str, pass: bool) -> Check {
    Check {
        preset: preset.into(),
        check: name.into(),
        value,
        threshold: threshold.into(),
        pass,
    }
}

fn projection_at(outcome: &RunOutcome, k: usize) -> f64 {
    outcome
        .records
        .iter()
        .find(|r| r.k == k)
        .map_or(f64::NAN, |r| r.projection)
}

fn reconstruction_delta(outcome: &RunOutcome, pixels: Option<usize>) -> f64 {
    outcome
        .summary
        .reconstructions
        .iter()
        .find(|r| r.pixels == pixels)
        .map_or(f64::NAN, |r| r.delta.abs())
}

/// Threshold checks of one finished preset.
pub fn checks_for(name: &str, outcome: &RunOutcome) -> Vec<Check> {
    let s = &outcome.summary;
    let p = s.final_projection.unwrap_or(f64::NAN);
    let min_delta = s.min_delta_j.unwrap_or(0.0);
    let mut out = vec![check(
        name,
        "min delta J",
        min_delta,
        ">= -1e-10",
        min_delta >= -MONOTONE_TOL,
    )];
    match name {
        "fig1" => {
            out.push(check(name, "final projection", p, "> 0.99", p > 0.99));
            let p30 = projection_at(outcome, 30);
            out.push(check(
                name,
                "projection at k=30",
                p30,
                ">= 0.97",
                p30 >= 0.97,
            ));
        }
        "fig3" => out.push(check(name, "final projection", p, "> 0.99", p > 0.99)),
        "fig4" => out.push(check(name, "final projection", p, ">= 0.97", p >= 0.97)),
        "fig5" => {
            let late = s.late_e1_fraction.unwrap_or(f64::NAN);
            out.push(check(
                name,
                "E1 energy after 0.2 T_per",
                late,
                "< 0.1",
                late < 0.1,
            ));
        }
        "fig6" => {
            let kept = s.zero_nodes_preserved.unwrap_or(false);
            out.push(check(
                name,
                "trial zeros preserved",
                kept as u8 as f64,
                "= 1",
                kept,
            ));
        }
        "fig7" => {
            let d128 = reconstruction_delta(outcome, Some(128));
            out.push(check(
                name,
                "|delta P| 128 pixels",
                d128,
                "< 0.02",
                d128 < 0.02,
            ));
            let d256 = reconstruction_delta(outcome, Some(256));
            out.push(check(
                name,
                "|delta P| 256 pixels",
                d256,
                "< 1e-3",
                d256 < 1e-3,
            ));
        }
        "fig10" => {
            let d = reconstruction_delta(outcome, None);
            out.push(check(name, "|delta P| band-pass", d, "< 0.02", d < 0.02));
        }
        "fig11_T10" => {
            let f = s.normalized_fidelity.unwrap_or(f64::NAN);
            out.push(check(
                name,
                "normalized fidelity",
                f,
                "0.9 +- 0.05",
                (f - 0.9).abs() <= 0.05,
            ));
        }
        _ => {}
    }
    out
}

/// Ordering of the thermal presets at matched field energy.
pub fn thermal_checks(results: &[(String, Result<RunOutcome, RunError>)]) -> Vec<Check> {
    let get = |name: &str| {
        results
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, r)| r.as_ref().ok())
            .map(|o| {
                (
                    o.summary.normalized_fidelity.unwrap_or(f64::NAN),
                    o.summary.field_energy.unwrap_or(f64::NAN),
                )
            })
    };
    let (Some(t1), Some(t5), Some(t10)) = (get("fig11_T1"), get("fig11_T5"), get("fig11_T10"))
    else {
        return Vec::new();
    };
    let energies = [t1.1, t5.1, t10.1];
    let ratio = energies.iter().cloned().fold(f64::MIN, f64::max)
        / energies.iter().cloned().fold(f64::MAX, f64::min);
    let ordered = t1.0 > t5.0 && t5.0 > t10.0;
    vec![
        check(
            "fig11",
            "field energy max/min",
            ratio,
            "<= 1.15",
            ratio <= ENERGY_MATCH_RATIO,
        ),
        check(
            "fig11",
            "fidelity 1K > 5K > 10K",
            ordered as u8 as f64,
            "= 1",
            ordered,
        ),
    ]
}

pub struct Report {
    pub checks: Vec<Check>,
    pub errors: Vec<(String, RunError)>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.errors.is_empty() && self.checks.iter().all(|c| c.pass)
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<10} {:<28} {:>14} {:<12} {}\n",
            "preset", "check", "value", "threshold", "result"
        );
        for c in &self.checks {
            s += &format!(
                "{:<10} {:<28} {:>14.6e} {:<12} {}\n",
                c.preset,
                c.check,
                c.value,
                c.threshold,
                if c.pass { "PASS" } else { "FAIL" }
            );
        }
        for (name, e) in &self.errors {
            s += &format!("{name:<10} error: {} ({})\n", e.message(), e.reason());
        }
        s
    }
}

/// Runs `names` concurrently on `threads` workers (0 = all cores), each into
/// `out/<name>`, and writes `out/reproduce.csv`.
pub fn reproduce(
    names: &[String],
    out: &Path,
    threads: usize,
    max_iters: Option<usize>,
) -> Result<Report, RunError> {
    let specs = names
        .iter()
        .map(|n| {
            presets::load(n).map(|mut s| {
                if let Some(k) = max_iters {
                    s.opt.max_iters = k;
                }
                (n.clone(), s)
            })
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|m| RunError::config("invalid-config", m))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| RunError::config("invalid-config", e.to_string()))?;
    let results: Vec<(String, Result<RunOutcome, RunError>)> = pool.install(|| {
        specs
            .par_iter()
            .map(|(n, s)| (n.clone(), execute(s, &out.join(n), Some(n))))
            .collect()
    });

    let mut checks = Vec::new();
    let mut errors = Vec::new();
    for (name, r) in &results {
        match r {
            Ok(o) => checks.extend(checks_for(name, o)),
            Err(e) => errors.push((name.clone(), e.clone())),
        }
    }
    checks.extend(thermal_checks(&results));

    std::fs::create_dir_all(out).map_err(|e| RunError::config("io", e.to_string()))?;
    let mut w = csv::Writer::from_path(out.join("reproduce.csv"))
        .map_err(|e| RunError::config("io", e.to_string()))?;
    for c in &checks {
        w.serialize(c)
            .map_err(|e| RunError::config("io", e.to_string()))?;
    }
    w.flush()
        .map_err(|e| RunError::config("io", e.to_string()))?;
    Ok(Report { checks, errors })
}
