use std::f64::consts::PI;

use equivar::geometry::{random_rotation, Mat3, Vec3};
use equivar::spectra::*;
use equivar::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn direct_acf(x: &[f64], depth: usize, norm: Normalization) -> Vec<f64> {
    let n = x.len();
    (0..depth)
        .map(|tau| {
            let s: f64 = (0..n - tau).map(|t| x[t] * x[t + tau]).sum();
            match norm {
                Normalization::Biased => s / n as f64,
                Normalization::Unbiased => s / (n - tau) as f64,
            }
        })
        .collect()
}

proptest! {
    #[test]
    fn fft_autocorrelation_matches_double_loop(x in prop::collection::vec(-10.0f64..10.0, 2..200), frac in 0.0f64..1.0) {
        let depth = 1 + ((x.len() - 1) as f64 * frac) as usize;
        for norm in [Normalization::Biased, Normalization::Unbiased] {
            let fast = autocorrelation(&x, depth, norm).unwrap();
            let slow = direct_acf(&x, depth, norm);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-10 * (1.0 + slow[0].abs()));
            }
        }
    }
}

#[test]
fn length_64_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
    let fast = autocorrelation(&x, 64, Normalization::Biased).unwrap();
    let slow = direct_acf(&x, 64, Normalization::Biased);
    let err = fast.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-10, "{err}");
}

#[test]
fn cosine_autocorrelation() {
    let (f, dt) = (0.01, 0.2);
    let x: Vec<f64> = (0..200_000).map(|t| (2.0 * PI * f * t as f64 * dt).cos()).collect();
    let acf = autocorrelation(&x, 500, Normalization::Unbiased).unwrap();
    for (tau, a) in acf.iter().enumerate() {
        let expected = 0.5 * (2.0 * PI * f * tau as f64 * dt).cos();
        assert!((a - expected).abs() < 1e-3, "lag {tau}: {a} vs {expected}");
    }
}

#[test]
fn derivative_of_sine() {
    let (w, dt) = (0.3, 0.01);
    let x: Vec<f64> = (0..1000).map(|t| (w * t as f64 * dt).sin()).collect();
    let d = finite_difference_derivative(&x, dt).unwrap();
    for (t, v) in d.iter().enumerate() {
        assert!((v - w * (w * t as f64 * dt).cos()).abs() < 1e-5, "t={t}");
    }
}

fn cosine_dipoles(n: usize, f: f64, dt: f64) -> Vec<Vec3> {
    (0..n)
        .map(|t| [(2.0 * PI * f * t as f64 * dt).cos(), 0.0, 0.0])
        .collect()
}

fn ir_options(dt: f64, n: usize) -> SpectrumOptions {
    SpectraConfig::default().options(dt, n).unwrap()
}

#[test]
fn ir_peak_at_the_driving_frequency() {
    let (f, dt, n) = (0.1, 0.2, 1 << 14);
    let spec = ir_spectrum(&cosine_dipoles(n, f, dt), dt, &ir_options(dt, n)).unwrap();
    let target = f / SPEED_OF_LIGHT_CM_PER_FS;
    let peak = spec.frequencies[spec.peak()];
    assert!((peak - target).abs() <= spec.bin_width(), "{peak} vs {target}");
    let second = spec
        .intensities
        .iter()
        .enumerate()
        .filter(|(k, _)| (spec.frequencies[*k] - peak).abs() > 50.0)
        .map(|(_, &x)| x)
        .fold(0.0, f64::max);
    assert!(second < 0.01 * spec.intensities[spec.peak()]);
}

#[test]
fn zero_dipole_gives_flat_zero() {
    let opts = SpectrumOptions {
        depth: 100,
        ..SpectrumOptions::default()
    };
    assert!(ir_spectrum(&vec![[0.0; 3]; 300], 0.5, &opts)
        .unwrap()
        .intensities
        .iter()
        .all(|&x| x == 0.0));
    let spec = ir_spectrum(
        &vec![[0.3, -1.0, 2.0]; 300],
        0.5,
        &SpectrumOptions {
            depth: 100,
            ..SpectrumOptions::default()
        },
    )
    .unwrap();
    assert!(spec.intensities.iter().all(|&x| x == 0.0));
}

fn parseval_gap(acf: &[f64], spec: &Spectrum, window: Window) -> f64 {
    let x = windowed_sequence(acf, window);
    let m = spec.meta.padded_length;
    let i = &spec.intensities;
    let lhs = i[0].powi(2) + 2.0 * i[1..m / 2].iter().map(|v| v * v).sum::<f64>() + i[m / 2].powi(2);
    let rhs = m as f64 * x.iter().map(|v| v * v).sum::<f64>();
    (lhs - rhs).abs() / rhs
}

#[test]
fn parseval_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dt = 0.5;
    let mu: Vec<Vec3> = (0..400)
        .map(|t| {
            let s = t as f64 * dt;
            [
                (0.05 * s).sin() + 0.1 * rng.random_range(-1.0..1.0),
                (0.13 * s).cos(),
                0.0,
            ]
        })
        .collect();
    for window in [Window::Hann, Window::None] {
        let opts = SpectrumOptions {
            depth: 150,
            window,
            zero_padding: 2,
            normalization: Normalization::Biased,
        };
        let spec = ir_spectrum(&mu, dt, &opts).unwrap();
        let mut acf = vec![0.0; 150];
        for k in 0..3 {
            let d = finite_difference_derivative(&mu.iter().map(|m| m[k]).collect::<Vec<_>>(), dt).unwrap();
            for (a, b) in acf
                .iter_mut()
                .zip(autocorrelation(&d, 150, Normalization::Biased).unwrap())
            {
                *a += b;
            }
        }
        let gap = parseval_gap(&acf, &spec, window);
        assert!(gap < 1e-8, "{window:?}: {gap}");
    }
}

fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    [0, 1, 2].map(|i| [0, 1, 2].map(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

fn transpose(a: &Mat3) -> Mat3 {
    [0, 1, 2].map(|i| [0, 1, 2].map(|j| a[j][i]))
}

#[test]
fn rotation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let dt = 0.5;
    let n = 600;
    let mu: Vec<Vec3> = (0..n)
        .map(|t| {
            let s = t as f64 * dt;
            [(0.07 * s).sin(), 0.5 * (0.11 * s).cos(), 0.2 * (0.03 * s).sin()]
        })
        .collect();
    let alpha: Vec<Mat3> = (0..n)
        .map(|t| {
            let s = t as f64 * dt;
            let (a, b, c) = ((0.05 * s).cos(), (0.09 * s).sin(), 0.3 * (0.02 * s).cos());
            [[1.0 + a, b, c], [b, 2.0 - a, 0.4 * a], [c, 0.4 * a, 1.5 + b]]
        })
        .collect();
    let r = random_rotation(&mut rng);
    let mu_r: Vec<Vec3> = mu.iter().map(|m| equivar::geometry::apply(&r, m)).collect();
    let alpha_r: Vec<Mat3> = alpha.iter().map(|a| matmul(&matmul(&r, a), &transpose(&r))).collect();
    let opts = SpectrumOptions {
        depth: 200,
        ..SpectrumOptions::default()
    };
    let close = |a: &Spectrum, b: &Spectrum| {
        let scale = a.intensities.iter().fold(0.0f64, |m, &x| m.max(x));
        a.intensities
            .iter()
            .zip(&b.intensities)
            .all(|(x, y)| (x - y).abs() <= 1e-9 * scale)
    };
    assert!(close(
        &ir_spectrum(&mu, dt, &opts).unwrap(),
        &ir_spectrum(&mu_r, dt, &opts).unwrap()
    ));
    let raman = RamanOptions::default();
    let a = raman_spectrum(&alpha, dt, &opts, &raman).unwrap();
    let b = raman_spectrum(&alpha_r, dt, &opts, &raman).unwrap();
    assert!(close(&a.isotropic, &b.isotropic));
    assert!(close(&a.anisotropic, &b.anisotropic));
}

#[test]
fn doubling_padding_keeps_the_peak() {
    let (f, dt, n) = (0.037, 0.5, 3000);
    let mu = cosine_dipoles(n, f, dt);
    let base = SpectrumOptions {
        depth: 700,
        ..SpectrumOptions::default()
    };
    let a = ir_spectrum(&mu, dt, &base).unwrap();
    let b = ir_spectrum(
        &mu,
        dt,
        &SpectrumOptions {
            zero_padding: 4,
            ..base
        },
    )
    .unwrap();
    assert_eq!(b.intensities.len(), 2 * a.intensities.len() - 1);
    assert!((b.bin_width() - a.bin_width() / 2.0).abs() < 1e-12);
    let shift = (a.frequencies[a.peak()] - b.frequencies[b.peak()]).abs();
    assert!(shift <= a.bin_width(), "{shift}");
}

fn scaled_identity(n: usize, f: f64, dt: f64) -> Vec<Mat3> {
    (0..n)
        .map(|t| {
            let c = (2.0 * PI * f * t as f64 * dt).cos();
            [[c, 0.0, 0.0], [0.0, c, 0.0], [0.0, 0.0, c]]
        })
        .collect()
}

#[test]
fn raman_channel_separation() {
    let (f, dt, n) = (0.05, 0.5, 8192);
    let opts = SpectraConfig::default().options(dt, n).unwrap();
    let raman = RamanOptions::default();
    let iso = raman_spectrum(&scaled_identity(n, f, dt), dt, &opts, &raman).unwrap();
    let target = f / SPEED_OF_LIGHT_CM_PER_FS;
    assert!((iso.isotropic.frequencies[iso.isotropic.peak()] - target).abs() <= iso.isotropic.bin_width());
    assert!(iso.anisotropic.intensities.iter().all(|&x| x.abs() < 1e-12));

    let traceless: Vec<Mat3> = (0..n)
        .map(|t| {
            let c = (2.0 * PI * f * t as f64 * dt).cos();
            [[c, 0.3 * c, 0.0], [0.3 * c, -c, 0.0], [0.0, 0.0, 0.0]]
        })
        .collect();
    let aniso = raman_spectrum(&traceless, dt, &opts, &raman).unwrap();
    assert!(aniso.isotropic.intensities.iter().all(|&x| x.abs() < 1e-12));
    assert!((aniso.anisotropic.frequencies[aniso.anisotropic.peak()] - target).abs() <= aniso.anisotropic.bin_width());
}

#[test]
fn prefactor_keeps_peak_bins() {
    let (f, dt, n) = (0.05, 0.5, 8192);
    let opts = SpectraConfig::default().options(dt, n).unwrap();
    let plain = raman_spectrum(&scaled_identity(n, f, dt), dt, &opts, &RamanOptions::default()).unwrap();
    let weighted = raman_spectrum(
        &scaled_identity(n, f, dt),
        dt,
        &opts,
        &RamanOptions {
            prefactor: true,
            ..RamanOptions::default()
        },
    )
    .unwrap();
    assert_eq!(plain.isotropic.peak(), weighted.isotropic.peak());
    assert_ne!(plain.isotropic.intensities, weighted.isotropic.intensities);
    assert_eq!(weighted.isotropic.intensities[0], 0.0);
}

#[test]
fn asymmetric_polarizability_is_a_data_error() {
    let mut alpha = scaled_identity(100, 0.05, 0.5);
    alpha[7][0][1] = 1e-6;
    let opts = SpectrumOptions {
        depth: 20,
        ..SpectrumOptions::default()
    };
    assert!(matches!(
        raman_spectrum(&alpha, 0.5, &opts, &RamanOptions::default()),
        Err(Error::Data(_))
    ));
}

#[test]
fn depth_beyond_the_series_is_a_config_error() {
    assert_eq!(depth_in_samples(2048.0, 0.2), 10240);
    assert!(matches!(
        SpectraConfig::default().options(0.2, 10000),
        Err(Error::Config(_))
    ));
}

#[test]
fn spectrum_files() {
    let dt = 0.5;
    let spec = ir_spectrum(
        &cosine_dipoles(100, 0.05, dt),
        dt,
        &SpectrumOptions {
            depth: 30,
            ..SpectrumOptions::default()
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ir.csv");
    spec.write(&path).unwrap();
    let rows = csv::Reader::from_path(&path).unwrap().records().count();
    assert_eq!(rows, spec.frequencies.len());
    let meta: SpectrumMeta =
        serde_json::from_str(&std::fs::read_to_string(path.with_extension("json")).unwrap()).unwrap();
    assert_eq!(meta, spec.meta);
}
