//! IR and Raman spectra from dipole and polarizability time series.
//!
//! Pipeline per channel: time derivative, autocorrelation up to `depth` lags,
//! symmetrization to `2·depth − 1` points, Hann window, zero padding, FFT.
//! The intensity is the magnitude of the (real) transform on the
//! non-negative frequency half. With `M` padded points and the windowed
//! sequence `x`, `I₀² + 2 Σ_{0<k<M/2} I_k² + I_{M/2}² = M Σ x²`.

use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{check_symmetric, Mat3, Vec3};

/// Speed of light in cm/fs.
pub const SPEED_OF_LIGHT_CM_PER_FS: f64 = 2.99792458e-5;
/// hc/k_B in cm·K.
pub const SECOND_RADIATION_CONSTANT: f64 = 1.438776877;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide every lag by the series length.
    #[default]
    Biased,
    /// Divide lag τ by the number of products, `N − τ`.
    Unbiased,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Hann,
    None,
}

/// Autocorrelation for lags `0..depth` through the zero-padded FFT power spectrum.
pub fn autocorrelation(signal: &[f64], depth: usize, norm: Normalization) -> Result<Vec<f64>> {
    let n = signal.len();
    if depth == 0 || depth > n {
        return Err(Error::Config(format!(
            "autocorrelation depth {depth} must lie in 1..={n}"
        )));
    }
    let m = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&x| Complex::new(x, 0.0)).collect();
    buf.resize(m, Complex::new(0.0, 0.0));
    planner.plan_fft_forward(m).process(&mut buf);
    for c in &mut buf {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    Ok((0..depth)
        .map(|tau| {
            let denom = match norm {
                Normalization::Biased => n,
                Normalization::Unbiased => n - tau,
            };
            buf[tau].re / (m as f64 * denom as f64)
        })
        .collect())
}

/// Central differences inside, one-sided second-order differences at the ends.
pub fn finite_difference_derivative(series: &[f64], dt: f64) -> Result<Vec<f64>> {
    let n = series.len();
    if n < 3 {
        return Err(Error::Data("a derivative needs at least three samples".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::Config("sample spacing must be positive".into()));
    }
    let mut d = vec![0.0; n];
    d[0] = (3.0 * (series[1] - series[0]) + (series[1] - series[2])) / (2.0 * dt);
    for i in 1..n - 1 {
        d[i] = (series[i + 1] - series[i - 1]) / (2.0 * dt);
    }
    d[n - 1] = (3.0 * (series[n - 1] - series[n - 2]) + (series[n - 3] - series[n - 2])) / (2.0 * dt);
    Ok(d)
}

/// Symmetric Hann window: `w[0] = w[n−1] = 0`, peak 1 in the middle for odd `n`.
pub fn hann(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => (0..n)
            .map(|k| {
                if k == 0 || k == n - 1 {
                    0.0
                } else if 2 * k == n - 1 {
                    1.0
                } else {
                    0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / (n - 1) as f64).cos()
                }
            })
            .collect(),
    }
}

/// Symmetrized, windowed autocorrelation `x[−(D−1)..=D−1]` in natural order.
pub fn windowed_sequence(acf: &[f64], window: Window) -> Vec<f64> {
    let d = acf.len();
    let full: Vec<f64> = (0..2 * d - 1)
        .map(|k| acf[(k as isize - (d as isize - 1)).unsigned_abs()])
        .collect();
    match window {
        Window::None => full,
        Window::Hann => full.iter().zip(hann(2 * d - 1)).map(|(x, w)| x * w).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumOptions {
    /// Autocorrelation lags.
    pub depth: usize,
    pub window: Window,
    /// Transform length as a multiple of the next power of two above `2·depth`.
    pub zero_padding: usize,
    pub normalization: Normalization,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        SpectrumOptions {
            depth: 1024,
            window: Window::Hann,
            zero_padding: 2,
            normalization: Normalization::Biased,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMeta {
    pub kind: String,
    pub depth: usize,
    pub window: Window,
    pub normalization: Normalization,
    /// Sample spacing of the input series, fs.
    pub dt: f64,
    pub padded_length: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    /// cm⁻¹, ascending from 0.
    pub frequencies: Vec<f64>,
    pub intensities: Vec<f64>,
    pub meta: SpectrumMeta,
}

impl Spectrum {
    pub fn bin_width(&self) -> f64 {
        self.frequencies.get(1).copied().unwrap_or(0.0)
    }

    /// Index of the strongest intensity.
    pub fn peak(&self) -> usize {
        let mut best = 0;
        for (k, &x) in self.intensities.iter().enumerate() {
            if x > self.intensities[best] {
                best = k;
            }
        }
        best
    }

    /// Two-column CSV plus a `.json` metadata file next to it.
    pub fn write(&self, csv_path: impl AsRef<Path>) -> Result<()> {
        let path = csv_path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["wavenumber_cm-1", "intensity"])?;
        for (f, i) in self.frequencies.iter().zip(&self.intensities) {
            w.write_record([format!("{f:.10e}"), format!("{i:.16e}")])?;
        }
        w.flush()?;
        std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }
}

fn power_spectrum(acf: &[f64], dt: f64, opts: &SpectrumOptions, kind: &str) -> Spectrum {
    let d = acf.len();
    let x = windowed_sequence(acf, opts.window);
    let m = (2 * d).next_power_of_two() * opts.zero_padding.max(1);
    // Wrap-around order keeps the sequence even, so its transform is real.
    let mut buf = vec![Complex::new(0.0, 0.0); m];
    for k in 0..d {
        buf[k] = Complex::new(x[d - 1 + k], 0.0);
    }
    for k in 1..d {
        buf[m - k] = Complex::new(x[d - 1 - k], 0.0);
    }
    FftPlanner::<f64>::new().plan_fft_forward(m).process(&mut buf);
    let half = m / 2 + 1;
    Spectrum {
        frequencies: (0..half)
            .map(|k| k as f64 / (m as f64 * dt) / SPEED_OF_LIGHT_CM_PER_FS)
            .collect(),
        intensities: buf[..half].iter().map(|c| c.norm()).collect(),
        meta: SpectrumMeta {
            kind: kind.to_string(),
            depth: d,
            window: opts.window,
            normalization: opts.normalization,
            dt,
            padded_length: m,
        },
    }
}

fn summed_acf(channels: &[Vec<f64>], dt: f64, opts: &SpectrumOptions, weight: f64) -> Result<Vec<f64>> {
    let mut total = vec![0.0; opts.depth];
    for series in channels {
        let acf = autocorrelation(
            &finite_difference_derivative(series, dt)?,
            opts.depth,
            opts.normalization,
        )?;
        for (t, a) in total.iter_mut().zip(acf) {
            *t += weight * a;
        }
    }
    Ok(total)
}

/// IR spectrum: transform of the summed autocorrelations of the three dμ/dt components.
///
/// Summing the correlations before the transform keeps the result invariant
/// under a rigid rotation of all frames.
pub fn ir_spectrum(dipoles: &[Vec3], dt: f64, opts: &SpectrumOptions) -> Result<Spectrum> {
    let channels: Vec<Vec<f64>> = (0..3).map(|k| dipoles.iter().map(|d| d[k]).collect()).collect();
    let acf = summed_acf(&channels, dt, opts, 1.0)?;
    Ok(power_spectrum(&acf, dt, opts, "ir"))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RamanOptions {
    pub laser_wavelength_nm: f64,
    /// K
    pub temperature: f64,
    /// Multiply by `(ν_L − ν)⁴/ν · (1 − e^{−hcν/k_B T})⁻¹`.
    pub prefactor: bool,
}

impl Default for RamanOptions {
    fn default() -> Self {
        RamanOptions {
            laser_wavelength_nm: 514.0,
            temperature: 300.0,
            prefactor: false,
        }
    }
}

impl RamanOptions {
    pub fn laser_wavenumber(&self) -> f64 {
        1e7 / self.laser_wavelength_nm
    }

    /// Intensity factor at `nu` cm⁻¹; zero at `nu = 0`.
    pub fn factor(&self, nu: f64) -> f64 {
        if nu <= 0.0 {
            return 0.0;
        }
        let x = SECOND_RADIATION_CONSTANT * nu / self.temperature;
        (self.laser_wavenumber() - nu).powi(4) / nu / -(-x).exp_m1()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RamanSpectrum {
    /// From the mean polarizability `tr(α)/3`.
    pub isotropic: Spectrum,
    /// From the traceless part, `(3/2) Σ_ij β_ij β_ij` correlations.
    pub anisotropic: Spectrum,
}

pub fn raman_spectrum(alphas: &[Mat3], dt: f64, opts: &SpectrumOptions, raman: &RamanOptions) -> Result<RamanSpectrum> {
    for (t, a) in alphas.iter().enumerate() {
        check_symmetric(a).map_err(|_| Error::Data(format!("polarizability frame {t} is not symmetric")))?;
    }
    let mean: Vec<f64> = alphas.iter().map(|a| (a[0][0] + a[1][1] + a[2][2]) / 3.0).collect();
    let mut traceless = Vec::new();
    for i in 0..3 {
        for j in 0..3 {
            traceless.push(
                alphas
                    .iter()
                    .zip(&mean)
                    .map(|(a, m)| a[i][j] - if i == j { *m } else { 0.0 })
                    .collect::<Vec<f64>>(),
            );
        }
    }
    let iso = summed_acf(&[mean], dt, opts, 1.0)?;
    let aniso = summed_acf(&traceless, dt, opts, 1.5)?;
    let mut isotropic = power_spectrum(&iso, dt, opts, "raman_isotropic");
    let mut anisotropic = power_spectrum(&aniso, dt, opts, "raman_anisotropic");
    if raman.prefactor {
        for s in [&mut isotropic, &mut anisotropic] {
            for (i, &nu) in s.intensities.iter_mut().zip(&s.frequencies) {
                *i *= raman.factor(nu);
            }
        }
    }
    Ok(RamanSpectrum { isotropic, anisotropic })
}

/// Autocorrelation depth in samples for a depth in fs.
pub fn depth_in_samples(depth_fs: f64, sample_dt: f64) -> usize {
    (depth_fs / sample_dt).round() as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectraConfig {
    /// fs
    pub depth_fs: f64,
    pub window: Window,
    pub zero_padding: usize,
    pub normalization: Normalization,
    /// Leading fraction of the trajectory treated as equilibration and dropped.
    pub equilibration_fraction: f64,
    pub raman: RamanOptions,
}

impl Default for SpectraConfig {
    fn default() -> Self {
        SpectraConfig {
            depth_fs: 2048.0,
            window: Window::Hann,
            zero_padding: 2,
            normalization: Normalization::Biased,
            equilibration_fraction: 0.2,
            raman: RamanOptions::default(),
        }
    }
}

impl SpectraConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.depth_fs > 0.0) {
            return bad("depth_fs must be positive");
        }
        if self.zero_padding == 0 {
            return bad("zero_padding must be at least 1");
        }
        if !(0.0..1.0).contains(&self.equilibration_fraction) {
            return bad("equilibration_fraction must lie in [0, 1)");
        }
        if !(self.raman.laser_wavelength_nm > 0.0) || !(self.raman.temperature > 0.0) {
            return bad("laser wavelength and temperature must be positive");
        }
        Ok(())
    }

    /// Options for `len` retained samples spaced `sample_dt` apart.
    pub fn options(&self, sample_dt: f64, len: usize) -> Result<SpectrumOptions> {
        let depth = depth_in_samples(self.depth_fs, sample_dt);
        if depth == 0 || depth > len {
            return Err(Error::Config(format!(
                "autocorrelation depth of {} fs is {depth} samples, but only {len} samples remain after equilibration",
                self.depth_fs
            )));
        }
        Ok(SpectrumOptions {
            depth,
            window: self.window,
            zero_padding: self.zero_padding,
            normalization: self.normalization,
        })
    }

    /// Index of the first sample kept after the equilibration discard.
    pub fn first_sample(&self, len: usize) -> usize {
        (self.equilibration_fraction * len as f64).floor() as usize
    }
}
