//! Fourier analysis of control fields: band-pass filtering and the
//! piecewise-constant (pixelated) amplitude/phase approximation used by
//! pulse shapers.
//!
//! Frequencies are angular, in atomic units (`ħ = 1`), so a rotational line
//! `E_{j+1} − E_j = 2B(j+1)` sits at `ω = 2B(j+1)`.
//!
//! The discrete transform of the field over `[0, t_f]` has a resolution of
//! about `2B`, far coarser than a pixel. The field is therefore zero-padded
//! so that each pixel spans at least [`SpectrumConfig::bins_per_pixel`]
//! transform bins, and the inverse transform is cut back to `[0, t_f]`.

use std::io::Write;

use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::propagate::ControlField;
use crate::rotor::RotorParams;
use crate::{Error, Result, C64, CM1_TO_HARTREE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeMode {
    /// Mean of the moduli in a pixel.
    #[default]
    MeanModulus,
    /// Modulus of the complex mean in a pixel.
    ModulusOfMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumConfig {
    /// Pixels over `[−band_max, band_max]`, split evenly between the two
    /// signs of frequency.
    pub n_pixels: usize,
    pub band_max: f64,
    /// Only band-pass, without pixelation.
    pub filter_only: bool,
    pub amplitude: AmplitudeMode,
    /// Minimum transform bins per pixel obtained by zero-padding; `None`
    /// uses the unpadded transform.
    pub bins_per_pixel: Option<usize>,
}

impl SpectrumConfig {
    /// `band_max = 2B·j_opt`, the highest line needed to reach `j_opt`.
    pub fn new(params: &RotorParams, n_pixels: usize, j_opt: usize) -> Self {
        Self {
            n_pixels,
            band_max: params.line(j_opt.saturating_sub(1)),
            filter_only: false,
            amplitude: AmplitudeMode::MeanModulus,
            bins_per_pixel: Some(4),
        }
    }

    pub fn pixel_width(&self) -> f64 {
        2.0 * self.band_max / self.n_pixels as f64
    }

    fn validate(&self, field: &ControlField) -> Result<()> {
        if self.n_pixels < 2 || self.n_pixels % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "n_pixels must be even and at least 2, got {}",
                self.n_pixels
            )));
        }
        check_band(field, self.band_max)
    }
}

pub fn nyquist(field: &ControlField) -> f64 {
    std::f64::consts::PI / field.grid.dt()
}

fn check_band(field: &ControlField, band: f64) -> Result<()> {
    if !(band > 0.0 && band.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "band limit must be positive, got {band}"
        )));
    }
    let ny = nyquist(field);
    if band >= ny {
        return Err(Error::AboveNyquist {
            requested: band,
            nyquist: ny,
        });
    }
    Ok(())
}

/// Transform length: at least the sample count, and fine enough to resolve
/// `resolution` with the given number of bins.
fn fft_len(field: &ControlField, resolution: Option<(f64, usize)>) -> usize {
    let n = field.samples.len();
    match resolution {
        None => n,
        Some((width, bins)) => {
            let needed = (bins as f64 * 2.0 * std::f64::consts::PI / (width * field.grid.dt()))
                .ceil() as usize;
            needed.max(n).next_power_of_two()
        }
    }
}

/// Angular frequency of transform bin `k` (non-negative half).
fn bin_frequency(k: usize, len: usize, dt: f64) -> f64 {
    2.0 * std::f64::consts::PI * k as f64 / (len as f64 * dt)
}

fn forward(field: &ControlField, len: usize) -> Vec<C64> {
    let mut buf: Vec<C64> = field.samples.iter().map(|x| C64::new(*x, 0.0)).collect();
    buf.resize(len, C64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    buf
}

/// Inverse of a Hermitian spectrum, truncated to the original grid.
fn inverse(mut spec: Vec<C64>, field: &ControlField) -> Result<ControlField> {
    let len = spec.len();
    FftPlanner::new().plan_fft_inverse(len).process(&mut spec);
    let scale = 1.0 / len as f64;
    let samples = spec[..field.samples.len()]
        .iter()
        .map(|z| z.re * scale)
        .collect();
    ControlField::new(field.grid, samples)
}

/// Sets bin `k` and its mirror so the spectrum stays Hermitian.
fn set_pair(spec: &mut [C64], k: usize, value: C64) {
    let len = spec.len();
    spec[k] = value;
    spec[len - k] = value.conj();
}

/// Zeroes all components above `cutoff`. `pad_to` sets the transform length
/// (`None`: unpadded).
pub fn bandpass(field: &ControlField, cutoff: f64, pad_to: Option<usize>) -> Result<ControlField> {
    check_band(field, cutoff)?;
    let len = pad_to.unwrap_or(0).max(field.samples.len());
    let dt = field.grid.dt();
    let full = forward(field, len);
    let mut spec = vec![C64::new(0.0, 0.0); len];
    spec[0] = C64::new(full[0].re, 0.0);
    for k in 1..len.div_ceil(2) {
        if bin_frequency(k, len, dt) <= cutoff {
            set_pair(&mut spec, k, full[k]);
        }
    }
    inverse(spec, field)
}

/// Piecewise-constant amplitude and phase over `n_pixels` equal bins of
/// `[−band_max, band_max]`; components outside the band are dropped and the
/// zero-frequency component is kept as is.
pub fn pixelate(field: &ControlField, cfg: &SpectrumConfig) -> Result<ControlField> {
    cfg.validate(field)?;
    if cfg.filter_only {
        // No pixels to resolve, so the field is treated as periodic on the grid.
        return bandpass(field, cfg.band_max, None);
    }
    let width = cfg.pixel_width();
    let len = fft_len(field, cfg.bins_per_pixel.map(|b| (width, b)));
    let dt = field.grid.dt();
    let full = forward(field, len);
    let half = cfg.n_pixels / 2;

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); half];
    for k in 1..len.div_ceil(2) {
        let w = bin_frequency(k, len, dt);
        if w > cfg.band_max {
            break;
        }
        // Bins within rounding of a lower edge belong to that pixel.
        let p = ((w / width) + 1e-9).floor() as usize;
        members[p.min(half - 1)].push(k);
    }

    let mut spec = vec![C64::new(0.0, 0.0); len];
    spec[0] = C64::new(full[0].re, 0.0);
    for bins in members.iter().filter(|b| !b.is_empty()) {
        let count = bins.len() as f64;
        let sum: C64 = bins.iter().map(|k| full[*k]).sum();
        let amp = match cfg.amplitude {
            AmplitudeMode::MeanModulus => bins.iter().map(|k| full[*k].norm()).sum::<f64>() / count,
            AmplitudeMode::ModulusOfMean => sum.norm() / count,
        };
        let phase = if sum.norm() > 0.0 {
            sum / sum.norm()
        } else {
            C64::new(1.0, 0.0)
        };
        for k in bins {
            set_pair(&mut spec, *k, phase * amp);
        }
    }
    inverse(spec, field)
}

/// One row of a power spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectrumRow {
    pub nu_au: f64,
    pub nu_cm1: f64,
    /// `|∫ E(t) e^{−iωt} dt|²`.
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    pub rows: Vec<SpectrumRow>,
    /// Rotational lines `2B(j+1)`, in atomic units.
    pub lines: Vec<f64>,
}

impl SpectrumReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "nu_au,nu_cm1,power")?;
        for r in &self.rows {
            writeln!(w, "{:.17e},{:.17e},{:.17e}", r.nu_au, r.nu_cm1, r.power)?;
        }
        Ok(())
    }

    /// Fraction of the spectral power at or below `cutoff`.
    pub fn fraction_below(&self, cutoff: f64) -> f64 {
        let total: f64 = self.rows.iter().map(|r| r.power).sum();
        if total == 0.0 {
            return 0.0;
        }
        self.rows
            .iter()
            .filter(|r| r.nu_au <= cutoff)
            .map(|r| r.power)
            .sum::<f64>()
            / total
    }
}

/// Power spectrum on `[0, nu_max]` with about `resolution` spacing, annotated
/// with the first `n_lines` rotational lines.
pub fn spectrum_report(
    field: &ControlField,
    params: &RotorParams,
    nu_max: f64,
    resolution: f64,
    n_lines: usize,
) -> Result<SpectrumReport> {
    check_band(field, nu_max)?;
    let len = fft_len(field, Some((resolution, 1)));
    let dt = field.grid.dt();
    let spec = forward(field, len);
    let rows = (0..len.div_ceil(2))
        .map(|k| (k, bin_frequency(k, len, dt)))
        .take_while(|(_, w)| *w <= nu_max)
        .map(|(k, w)| SpectrumRow {
            nu_au: w,
            nu_cm1: w / CM1_TO_HARTREE,
            power: (spec[k] * dt).norm_sqr(),
        })
        .collect();
    Ok(SpectrumReport {
        rows,
        lines: (0..n_lines).map(|j| params.line(j)).collect(),
    })
}
