use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nlcontrol::propagate::ControlField;
use nlcontrol::spectrum::AmplitudeMode;
use nlcontrol_cli::config::{RunSpec, SpectrumSpec};
use nlcontrol_cli::presets;
use nlcontrol_cli::reproduce::reproduce;
use nlcontrol_cli::runner::{execute, reconstruct, Evaluator, RunError, RunSummary};

#[derive(Parser)]
#[command(
    name = "nlcontrol",
    version,
    about = "Monotonic optimal control of molecular orientation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
#[group(required = false, multiple = false)]
struct Source {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bundled preset name.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one optimisation.
    Run {
        #[command(flatten)]
        source: Source,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild a field from spectral pixels and re-propagate it.
    Pixelate {
        /// Field CSV with columns `t,E`.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 256)]
        pixels: usize,
        /// Band edge in cm⁻¹ (default: the `j_opt − 1 → j_opt` line).
        #[arg(long)]
        band_max: Option<f64>,
        #[arg(long)]
        filter_only: bool,
        /// System used for re-propagation (default: pure-state CO).
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value = "out/pixelate")]
        out: PathBuf,
    },
    /// Run the bundled presets and check their thresholds.
    Reproduce {
        #[arg(long, default_value = "out/reproduce")]
        out: PathBuf,
        /// Worker threads (0: one per core).
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Comma-separated subset of presets.
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
        /// Override the iteration count of every preset.
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// List the presets, or print one.
    Presets { name: Option<String> },
}

const DEFAULT_SYSTEM: &str = "problem = \"pure\"\n[opt]\nn = 1\nlambda = 1.0\n";

fn load(source: &Source) -> Result<Option<RunSpec>, RunError> {
    let text = match (&source.config, &source.preset) {
        (Some(path), _) => std::fs::read_to_string(path).map_err(|e| {
            RunError::config(
                "invalid-config",
                format!("cannot read {}: {e}", path.display()),
            )
        })?,
        (None, Some(name)) => presets::source(name)
            .ok_or_else(|| RunError::config("invalid-config", format!("unknown preset {name:?}")))?
            .to_string(),
        (None, None) => return Ok(None),
    };
    RunSpec::from_toml(&text)
        .map(Some)
        .map_err(|m| RunError::config(reason_for(&m), m))
}

fn reason_for(message: &str) -> String {
    if message == nlcontrol_cli::config::ZERO_TRIAL_REASON {
        message.to_string()
    } else {
        "invalid-config".to_string()
    }
}

fn fail(err: RunError, dir: Option<&Path>) -> ExitCode {
    if let Some(d) = dir {
        let _ = RunSummary::error(&err).write(d);
    }
    eprintln!("error: {} ({})", err.message(), err.reason());
    ExitCode::from(err.exit_code() as u8)
}

fn run(source: Source, out: Option<PathBuf>) -> ExitCode {
    let spec = match load(&source) {
        Ok(Some(s)) => s,
        Ok(None) => {
            return fail(
                RunError::config("invalid-config", "pass --config or --preset"),
                out.as_deref(),
            )
        }
        Err(e) => return fail(e, out.as_deref()),
    };
    let dir = out.unwrap_or_else(|| spec.output_dir.clone());
    match execute(&spec, &dir, source.preset.as_deref()) {
        Ok(o) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&o.summary).expect("serialisable")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {} ({})", e.message(), e.reason());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn pixelate(
    input: &Path,
    pixels: usize,
    band_max: Option<f64>,
    filter_only: bool,
    source: &Source,
    out: &Path,
) -> Result<RunSummary, RunError> {
    let spec = match load(source)? {
        Some(s) => s,
        None => RunSpec::from_toml(DEFAULT_SYSTEM).expect("valid default"),
    };
    let text = std::fs::read_to_string(input).map_err(|e| {
        RunError::config(
            "invalid-config",
            format!("cannot read {}: {e}", input.display()),
        )
    })?;
    let field = ControlField::read_csv(&text)?;
    let params = spec.molecule.params()?;
    let eval = Evaluator::for_spec(&spec, &params)?;
    let base = spec.spectrum.clone().unwrap_or(SpectrumSpec {
        pixels: Vec::new(),
        band_max_cm1: None,
        filter_only: false,
        amplitude: AmplitudeMode::MeanModulus,
        bins_per_pixel: 4,
        report_max_b: 40.0,
        resolution_b: 0.1,
    });
    let s = SpectrumSpec {
        pixels: vec![pixels],
        band_max_cm1: band_max.or(base.band_max_cm1),
        filter_only,
        ..base
    };
    std::fs::create_dir_all(out).map_err(|e| RunError::config("io", e.to_string()))?;
    let reference = eval.projection(&field)?;
    let j_opt = spec.molecule.j_opt;
    let report = nlcontrol::spectrum::spectrum_report(
        &field,
        &params,
        s.report_max_b * params.b,
        s.resolution_b * params.b,
        j_opt,
    )?;
    let file = std::fs::File::create(out.join("spectrum.csv"))
        .map_err(|e| RunError::config("io", e.to_string()))?;
    report
        .write_csv(std::io::BufWriter::new(file))
        .map_err(|e| RunError::config("io", e.to_string()))?;
    let reconstructions = reconstruct(out, &field, reference, &eval, &s, &params, j_opt)?;
    let summary = RunSummary {
        status: "ok".into(),
        problem: Some(spec.problem),
        final_projection: Some(reference),
        reconstructions,
        ..Default::default()
    };
    summary.write(out)?;
    Ok(summary)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { source, out } => run(source, out),
        Command::Pixelate {
            input,
            pixels,
            band_max,
            filter_only,
            source,
            out,
        } => match pixelate(&input, pixels, band_max, filter_only, &source, &out) {
            Ok(s) => {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&s).expect("serialisable")
                );
                ExitCode::SUCCESS
            }
            Err(e) => fail(e, Some(&out)),
        },
        Command::Reproduce {
            out,
            threads,
            only,
            max_iters,
        } => {
            let names: Vec<String> = if only.is_empty() {
                presets::names().map(str::to_string).collect()
            } else {
                only
            };
            match reproduce(&names, &out, threads, max_iters) {
                Ok(report) => {
                    print!("{}", report.table());
                    if report.passed() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => fail(e, None),
            }
        }
        Command::Presets { name } => match name {
            None => {
                for n in presets::names() {
                    println!("{n}");
                }
                ExitCode::SUCCESS
            }
            Some(n) => match presets::source(&n) {
                Some(text) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                None => fail(
                    RunError::config("invalid-config", format!("unknown preset {n:?}")),
                    None,
                ),
            },
        },
    }
}
