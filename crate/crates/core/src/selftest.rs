//! Invariant checks on a freshly initialized model: symmetry, gradients, smoothness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::geometry::{apply, direction_sum_sq, pair_cosine_sum, random_rotation, AtomicSystem, Labels, Mat3, Vec3};
use crate::model::{Model, ModelConfig, Readout};
use crate::train::{batch_loss, loss_and_gradients, Targets, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: &str, max_error: f64, tolerance: f64) -> Self {
        CheckResult {
            name: name.to_string(),
            max_error,
            tolerance,
            passed: max_error <= tolerance,
        }
    }
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<28} max error {:.3e} (tolerance {:.0e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.max_error,
            self.tolerance
        )
    }
}

/// Model with every head used by the checks.
pub fn test_model(seed: u64) -> Result<Model> {
    let config = ModelConfig {
        features: 8,
        n_blocks: 2,
        cutoff: 4.0,
        n_rbf: 8,
        max_z: 9,
        readouts: vec![
            Readout::Energy,
            Readout::Dipole { charges_only: false },
            Readout::Polarizability,
            Readout::Rank1 { order: 2, rank: 1 },
        ],
        ..ModelConfig::default()
    };
    Model::new(config, seed)
}

/// Up to `max_atoms` atoms from {H, C, N, O}, pairwise at least 0.8 Å apart.
pub fn random_system<R: Rng + ?Sized>(rng: &mut R, max_atoms: usize) -> AtomicSystem {
    let n = rng.random_range(2..=max_atoms.max(2));
    let mut positions: Vec<Vec3> = Vec::new();
    while positions.len() < n {
        let r = [0, 1, 2].map(|_| rng.random_range(-1.8..1.8));
        if positions.iter().all(|q| dist2(q, &r) > 0.64) {
            positions.push(r);
        }
    }
    let z = (0..n).map(|_| [1, 6, 7, 8][rng.random_range(0..4)]).collect();
    AtomicSystem {
        atomic_numbers: z,
        positions,
        labels: Labels::default(),
    }
}

fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

fn max_diff(a: impl IntoIterator<Item = f64>, b: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn conjugate(r: &Mat3, a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3)
                .flat_map(|k| (0..3).map(move |l| (k, l)))
                .map(|(k, l)| r[i][k] * a[k][l] * r[j][l])
                .sum();
        }
    }
    out
}

/// Apply a rotation, a translation and a permutation; returns the moved system
/// and the atom map.
fn transform<R: Rng + ?Sized>(s: &AtomicSystem, rng: &mut R) -> (AtomicSystem, Mat3, Vec<usize>) {
    let rot = random_rotation(rng);
    let shift = [0, 1, 2].map(|_| rng.random_range(-5.0..5.0));
    let mut perm: Vec<usize> = (0..s.len()).collect();
    for k in (1..perm.len()).rev() {
        perm.swap(k, rng.random_range(0..=k));
    }
    (s.rotated(&rot).translated(shift).permuted(&perm), rot, perm)
}

pub fn equivariance(model: &Model, n_systems: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 5];
    for _ in 0..n_systems {
        let s = random_system(&mut rng, 10);
        let (t, rot, perm) = transform(&s, &mut rng);
        let (e0, f0) = model.predict_energy_forces(&s)?;
        let (e1, f1) = model.predict_energy_forces(&t)?;
        worst[0] = worst[0].max((e0 - e1).abs());
        let expected: Vec<f64> = perm.iter().flat_map(|&p| apply(&rot, &f0[p])).collect();
        worst[1] = worst[1].max(max_diff(expected, f1.iter().flatten().copied()));
        let mu0 = model.predict_dipole(&s)?;
        let mu1 = model.predict_dipole(&t)?;
        worst[2] = worst[2].max(max_diff(apply(&rot, &mu0), mu1));
        let a0 = model.predict_polarizability(&s)?;
        let a1 = model.predict_polarizability(&t)?;
        worst[3] = worst[3].max(max_diff(
            conjugate(&rot, &a0).into_iter().flatten(),
            a1.into_iter().flatten(),
        ));
        let m0 = model.rank1_tensor(&s)?;
        let m1 = model.rank1_tensor(&t)?;
        let m0: Mat3 = [0, 1, 2].map(|i| [0, 1, 2].map(|j| m0[3 * i + j]));
        worst[4] = worst[4].max(max_diff(conjugate(&rot, &m0).into_iter().flatten(), m1));
    }
    Ok(vec![
        CheckResult::new("energy invariance", worst[0], 1e-10),
        CheckResult::new("force covariance", worst[1], 1e-8),
        CheckResult::new("dipole covariance", worst[2], 1e-10),
        CheckResult::new("polarizability covariance", worst[3], 1e-9),
        CheckResult::new("rank-1 tensor covariance", worst[4], 1e-9),
    ])
}

/// Largest `‖F − F_fd‖ / ‖F‖` with central differences of step `h`.
pub fn force_gradient(model: &Model, n_systems: usize, h: f64, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_systems {
        let s = random_system(&mut rng, 8);
        let f = model.predict_forces(&s)?;
        let mut num = 0.0;
        for i in 0..s.len() {
            for k in 0..3 {
                let mut p = s.clone();
                p.positions[i][k] += h;
                let ep = model.predict_scalar(&p)?;
                p.positions[i][k] -= 2.0 * h;
                let em = model.predict_scalar(&p)?;
                num += (f[i][k] + (ep - em) / (2.0 * h)).powi(2);
            }
        }
        let norm = f.iter().flatten().map(|x| x * x).sum::<f64>();
        worst = worst.max((num / norm.max(1e-300)).sqrt());
    }
    Ok(CheckResult::new("forces vs finite differences", worst, 1e-5))
}

/// Parameter gradients of a force-only loss (a second derivative of the energy)
/// against central differences, as `max |g − g_fd| / max |g|` over `n_entries`
/// sampled entries.
pub fn second_order(model: &Model, n_entries: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labeled: Vec<AtomicSystem> = (0..2)
        .map(|_| {
            let mut s = random_system(&mut rng, 5);
            s.labels.forces = Some(
                (0..s.len())
                    .map(|_| [0, 1, 2].map(|_| rng.random_range(-1.0..1.0)))
                    .collect(),
            );
            s
        })
        .collect();
    let targets = Targets {
        forces: true,
        ..Targets::default()
    };
    let config = TrainConfig::default();
    let (_, grads) = loss_and_gradients(model, &labeled, targets, &config)?;
    let trainable: Vec<usize> = grads
        .iter()
        .enumerate()
        .filter(|(_, g)| g.is_some())
        .map(|(k, _)| k)
        .collect();
    let scale = grads
        .iter()
        .flatten()
        .flat_map(|g| g.data().iter().map(|x| x.abs()))
        .fold(0.0, f64::max);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..n_entries {
        let k = trainable[rng.random_range(0..trainable.len())];
        let j = rng.random_range(0..model.params().tensors()[k].len());
        let mut m = model.clone();
        m.params_mut().tensors_mut()[k].data_mut()[j] += h;
        let lp = batch_loss(&m, &labeled, targets, &config)?;
        m.params_mut().tensors_mut()[k].data_mut()[j] -= 2.0 * h;
        let lm = batch_loss(&m, &labeled, targets, &config)?;
        let g = grads[k].as_ref().expect("trainable").data()[j];
        worst = worst.max((g - (lp - lm) / (2.0 * h)).abs() / scale.max(1e-300));
    }
    Ok(CheckResult::new("force-loss second order", worst, 1e-4))
}

/// `‖Σ r̂‖² = Σ cos` on random neighborhoods.
pub fn angular_identity(n: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let center = [0, 1, 2].map(|_| rng.random_range(-1.0..1.0));
        let neighbors: Vec<Vec3> = (0..rng.random_range(1..=12))
            .map(|_| [0, 1, 2].map(|k| center[k] + rng.random_range(-3.0..3.0)))
            .filter(|r| dist2(r, &center) > 1e-4)
            .collect();
        worst = worst.max((direction_sum_sq(center, &neighbors) - pair_cosine_sum(center, &neighbors)).abs());
    }
    CheckResult::new("angular identity", worst, 1e-12)
}

/// Energy jump of a dimer pulled across the cutoff by `2δ`.
pub fn cutoff_smoothness(model: &Model, delta: f64) -> Result<CheckResult> {
    let rc = model.config().cutoff;
    let dimer = |d: f64| AtomicSystem {
        atomic_numbers: vec![6, 8],
        positions: vec![[0.0; 3], [d, 0.0, 0.0]],
        labels: Labels::default(),
    };
    let jump = (model.predict_scalar(&dimer(rc - delta))? - model.predict_scalar(&dimer(rc + delta))?).abs();
    Ok(CheckResult::new("cutoff smoothness", jump, 1e-8))
}

/// The full suite used by the `selftest` command.
pub fn run(seed: u64) -> Result<Vec<CheckResult>> {
    let model = test_model(seed)?;
    let mut out = equivariance(&model, 20, seed)?;
    out.push(force_gradient(&model, 5, 1e-4, seed)?);
    out.push(second_order(&model, 20, seed)?);
    out.push(angular_identity(1000, seed));
    out.push(cutoff_smoothness(&model, 1e-6)?);
    Ok(out)
}
