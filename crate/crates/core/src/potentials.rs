//! Analytic pair potentials and the toy datasets labeled with them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{apply, random_rotation, AtomicSystem, Labels, Vec3};

/// A pairwise-additive potential `E = Σ_{i<j} u(r_ij)`, no cutoff.
pub trait PairPotential {
    /// `(u(r), du/dr)` in eV and eV/Å.
    fn pair(&self, r: f64) -> (f64, f64);

    fn energy_forces(&self, positions: &[Vec3]) -> (f64, Vec<Vec3>) {
        let n = positions.len();
        let mut energy = 0.0;
        let mut forces = vec![[0.0; 3]; n];
        for i in 0..n {
            for j in i + 1..n {
                let d: Vec3 = [0, 1, 2].map(|k| positions[j][k] - positions[i][k]);
                let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                let (u, du) = self.pair(r);
                energy += u;
                for k in 0..3 {
                    let f = du * d[k] / r;
                    forces[i][k] += f;
                    forces[j][k] -= f;
                }
            }
        }
        (energy, forces)
    }
}

/// `D (1 − e^{−a(r−r0)})²`
#[derive(Clone, Copy, Debug)]
pub struct Morse {
    pub depth: f64,
    pub width: f64,
    pub r0: f64,
}

impl PairPotential for Morse {
    fn pair(&self, r: f64) -> (f64, f64) {
        let e = (-self.width * (r - self.r0)).exp();
        let u = self.depth * (1.0 - e) * (1.0 - e);
        (u, 2.0 * self.depth * self.width * e * (1.0 - e))
    }
}

/// `4ε ((σ/r)¹² − (σ/r)⁶)`
#[derive(Clone, Copy, Debug)]
pub struct LennardJones {
    pub epsilon: f64,
    pub sigma: f64,
}

impl PairPotential for LennardJones {
    fn pair(&self, r: f64) -> (f64, f64) {
        let s6 = (self.sigma / r).powi(6);
        let s12 = s6 * s6;
        (
            4.0 * self.epsilon * (s12 - s6),
            -24.0 * self.epsilon * (2.0 * s12 - s6) / r,
        )
    }
}

/// `½ k (r − r0)²`
#[derive(Clone, Copy, Debug)]
pub struct Harmonic {
    pub k: f64,
    pub r0: f64,
}

impl PairPotential for Harmonic {
    fn pair(&self, r: f64) -> (f64, f64) {
        let x = r - self.r0;
        (0.5 * self.k * x * x, self.k * x)
    }
}

pub const TOY_MORSE: Morse = Morse {
    depth: 1.0,
    width: 1.5,
    r0: 1.2,
};

pub const TOY_LJ: LennardJones = LennardJones {
    epsilon: 1.0,
    sigma: 2.0,
};

/// Attach analytic energy and force labels.
pub fn label<P: PairPotential + ?Sized>(potential: &P, mut system: AtomicSystem) -> AtomicSystem {
    let (e, f) = potential.energy_forces(&system.positions);
    system.labels = Labels {
        energy: Some(e),
        forces: Some(f),
        ..Labels::default()
    };
    system
}

fn random_placement(rng: &mut ChaCha8Rng, positions: Vec<Vec3>) -> Vec<Vec3> {
    let rot = random_rotation(rng);
    let shift: Vec3 = [0, 1, 2].map(|_| rng.random_range(-1.0..1.0));
    positions
        .iter()
        .map(|r| {
            let q = apply(&rot, r);
            [q[0] + shift[0], q[1] + shift[1], q[2] + shift[2]]
        })
        .collect()
}

/// H₂ dimers with bond lengths uniform in [0.9, 2.0] Å, randomly oriented.
pub fn morse_dimer_dataset(n: usize, seed: u64) -> Vec<AtomicSystem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let r = rng.random_range(0.9..2.0);
            let pos = random_placement(&mut rng, vec![[0.0; 3], [r, 0.0, 0.0]]);
            label(&TOY_MORSE, AtomicSystem::new(vec![1, 1], pos).expect("valid dimer"))
        })
        .collect()
}

/// Ar₃ near the equilateral minimum, each coordinate perturbed by up to ±0.25 Å.
pub fn lj_trimer_dataset(n: usize, seed: u64) -> Vec<AtomicSystem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = 2f64.powf(1.0 / 6.0) * TOY_LJ.sigma;
    let h = side * 3f64.sqrt() / 2.0;
    let base = [[0.0, 0.0, 0.0], [side, 0.0, 0.0], [side / 2.0, h, 0.0]];
    (0..n)
        .map(|_| {
            let jittered = base
                .iter()
                .map(|r| [0, 1, 2].map(|k| r[k] + rng.random_range(-0.25..0.25)))
                .collect();
            let pos = random_placement(&mut rng, jittered);
            label(&TOY_LJ, AtomicSystem::new(vec![18; 3], pos).expect("valid trimer"))
        })
        .collect()
}
