//! Velocity Verlet and BAOAB Langevin dynamics driven by model or analytic forces.
//!
//! Internal units are Å, fs, amu and eV. Forces in eV/Å become accelerations
//! in Å/fs² through [`Units::METAL`].

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AtomicSystem, Labels, Mat3, Vec3};
use crate::io::write_extxyz;
use crate::model::Model;
use crate::potentials::PairPotential;

/// 1.602176634e-19 J / 1.66053906660e-27 kg, expressed in Å/fs² per eV/(Å·amu).
pub const EV_PER_ANGSTROM_AMU_TO_ANGSTROM_PER_FS2: f64 = 1.602176634e-19 / 1.66053906660e-27 * 1e-10;
/// Boltzmann constant in eV/K.
pub const BOLTZMANN_EV: f64 = 8.617333262e-5;

/// Conversion between force/mass and acceleration, and the Boltzmann constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Units {
    pub accel: f64,
    pub kb: f64,
}

impl Units {
    pub const METAL: Units = Units {
        accel: EV_PER_ANGSTROM_AMU_TO_ANGSTROM_PER_FS2,
        kb: BOLTZMANN_EV,
    };
    /// Everything 1: `a = F/m`, `k_B = 1`.
    pub const REDUCED: Units = Units { accel: 1.0, kb: 1.0 };
}

/// Energy and forces for a set of positions.
pub trait ForceField {
    fn compute(&self, positions: &[Vec3]) -> Result<(f64, Vec<Vec3>)>;
}

impl<F> ForceField for F
where
    F: Fn(&[Vec3]) -> Result<(f64, Vec<Vec3>)>,
{
    fn compute(&self, positions: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
        self(positions)
    }
}

/// Energy head of a model on a fixed composition.
pub struct ModelForceField<'m> {
    pub model: &'m Model,
    pub atomic_numbers: Vec<u32>,
}

impl ForceField for ModelForceField<'_> {
    fn compute(&self, positions: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
        let system = AtomicSystem {
            atomic_numbers: self.atomic_numbers.clone(),
            positions: positions.to_vec(),
            labels: Labels::default(),
        };
        self.model.predict_energy_forces(&system)
    }
}

/// Analytic pair potential as a force field.
pub struct PairForceField<P>(pub P);

impl<P: PairPotential> ForceField for PairForceField<P> {
    fn compute(&self, positions: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
        Ok(self.0.energy_forces(positions))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MDState {
    pub positions: Vec<Vec3>,
    /// Å/fs
    pub velocities: Vec<Vec3>,
    /// amu
    pub masses: Vec<f64>,
    /// fs
    pub time: f64,
    /// Cached forces at `positions`.
    pub forces: Vec<Vec3>,
    pub potential: f64,
    pub units: Units,
}

fn check_forces(forces: &[Vec3], potential: f64, time: f64) -> Result<()> {
    if potential.is_finite() && forces.iter().flatten().all(|f| f.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteForces { time })
    }
}

impl MDState {
    pub fn new(
        positions: Vec<Vec3>,
        velocities: Vec<Vec3>,
        masses: Vec<f64>,
        units: Units,
        ff: &dyn ForceField,
    ) -> Result<Self> {
        let n = positions.len();
        if velocities.len() != n || masses.len() != n {
            return Err(Error::Data("positions, velocities and masses differ in length".into()));
        }
        if masses.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::Data("masses must be positive".into()));
        }
        let (potential, forces) = ff.compute(&positions)?;
        check_forces(&forces, potential, 0.0)?;
        Ok(MDState {
            positions,
            velocities,
            masses,
            time: 0.0,
            forces,
            potential,
            units,
        })
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.velocities
            .iter()
            .zip(&self.masses)
            .map(|(v, m)| 0.5 * m * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]))
            .sum::<f64>()
            / self.units.accel
    }

    pub fn total_energy(&self) -> f64 {
        self.potential + self.kinetic_energy()
    }

    /// Σ m v in amu·Å/fs.
    pub fn momentum(&self) -> Vec3 {
        let mut p = [0.0; 3];
        for (v, m) in self.velocities.iter().zip(&self.masses) {
            for k in 0..3 {
                p[k] += m * v[k];
            }
        }
        p
    }

    /// Instantaneous temperature from the kinetic energy over 3N degrees of freedom.
    pub fn temperature(&self) -> f64 {
        2.0 * self.kinetic_energy() / (3.0 * self.masses.len() as f64 * self.units.kb)
    }

    fn kick(&mut self, dt: f64) {
        for ((v, f), m) in self.velocities.iter_mut().zip(&self.forces).zip(&self.masses) {
            for k in 0..3 {
                v[k] += dt * f[k] / m * self.units.accel;
            }
        }
    }

    fn drift(&mut self, dt: f64) {
        for (x, v) in self.positions.iter_mut().zip(&self.velocities) {
            for k in 0..3 {
                x[k] += dt * v[k];
            }
        }
    }

    fn refresh(&mut self, ff: &dyn ForceField) -> Result<()> {
        let (potential, forces) = ff.compute(&self.positions)?;
        check_forces(&forces, potential, self.time)?;
        self.potential = potential;
        self.forces = forces;
        Ok(())
    }
}

/// Kick–drift–kick with one force evaluation. On failure `state` is unchanged.
pub fn velocity_verlet_step(state: &mut MDState, ff: &dyn ForceField, dt: f64) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    let mut next = state.clone();
    next.kick(0.5 * dt);
    next.drift(dt);
    next.time += dt;
    next.refresh(ff)?;
    next.kick(0.5 * dt);
    *state = next;
    Ok(())
}

/// BAOAB Langevin step at `temperature` (K) with `friction` (1/fs).
pub fn langevin_thermostat_step<R: rand::Rng + ?Sized>(
    state: &mut MDState,
    ff: &dyn ForceField,
    dt: f64,
    temperature: f64,
    friction: f64,
    rng: &mut R,
) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    if !(temperature >= 0.0) || !(friction > 0.0) {
        return Err(Error::Config("Langevin needs temperature >= 0 and friction > 0".into()));
    }
    let mut next = state.clone();
    next.kick(0.5 * dt);
    next.drift(0.5 * dt);
    let c1 = (-friction * dt).exp();
    let c2 = (1.0 - c1 * c1).sqrt();
    let kt = next.units.kb * temperature * next.units.accel;
    for (v, m) in next.velocities.iter_mut().zip(&next.masses) {
        let sigma = c2 * (kt / m).sqrt();
        for x in v.iter_mut() {
            let xi: f64 = StandardNormal.sample(rng);
            *x = c1 * *x + sigma * xi;
        }
    }
    next.drift(0.5 * dt);
    next.time += dt;
    next.refresh(ff)?;
    next.kick(0.5 * dt);
    *state = next;
    Ok(())
}

/// Maxwell–Boltzmann velocities at `temperature` with the center-of-mass motion removed.
pub fn maxwell_boltzmann<R: rand::Rng + ?Sized>(
    masses: &[f64],
    temperature: f64,
    units: Units,
    rng: &mut R,
) -> Vec<Vec3> {
    let mut v: Vec<Vec3> = masses
        .iter()
        .map(|m| {
            let s = (units.kb * temperature * units.accel / m).sqrt();
            [0, 1, 2].map(|_| s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut *rng))
        })
        .collect();
    if masses.len() > 1 {
        let total: f64 = masses.iter().sum();
        let mut p = [0.0; 3];
        for (vi, m) in v.iter().zip(masses) {
            for k in 0..3 {
                p[k] += m * vi[k];
            }
        }
        for vi in &mut v {
            for k in 0..3 {
                vi[k] -= p[k] / total;
            }
        }
    }
    v
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ensemble {
    #[default]
    Nve,
    Langevin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdConfig {
    /// fs
    pub dt: f64,
    pub n_steps: usize,
    pub ensemble: Ensemble,
    /// K; thermostat target and initial velocity temperature.
    pub temperature: f64,
    /// 1/fs
    pub friction: f64,
    pub record_stride: usize,
    pub record_dipole: bool,
    pub record_polarizability: bool,
}

impl Default for MdConfig {
    fn default() -> Self {
        MdConfig {
            dt: 0.2,
            n_steps: 1000,
            ensemble: Ensemble::Nve,
            temperature: 300.0,
            friction: 0.01,
            record_stride: 1,
            record_dipole: false,
            record_polarizability: false,
        }
    }
}

impl MdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if self.record_stride == 0 {
            return bad("record_stride must be positive");
        }
        if !(self.temperature >= 0.0) {
            return bad("temperature must be non-negative");
        }
        if self.ensemble == Ensemble::Langevin && !(self.friction > 0.0) {
            return bad("friction must be positive for Langevin dynamics");
        }
        Ok(())
    }
}

/// Frames sampled every `stride` steps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    /// Time between recorded frames, fs.
    pub sample_dt: f64,
    pub stride: usize,
    pub atomic_numbers: Vec<u32>,
    pub times: Vec<f64>,
    pub positions: Vec<Vec<Vec3>>,
    pub velocities: Vec<Vec<Vec3>>,
    pub potential: Vec<f64>,
    pub kinetic: Vec<f64>,
    pub dipoles: Option<Vec<Vec3>>,
    pub polarizabilities: Option<Vec<Mat3>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn total_energy(&self) -> Vec<f64> {
        self.potential.iter().zip(&self.kinetic).map(|(u, k)| u + k).collect()
    }

    /// Frames as structures labeled with the recorded quantities.
    pub fn frames(&self) -> Vec<AtomicSystem> {
        (0..self.len())
            .map(|i| AtomicSystem {
                atomic_numbers: self.atomic_numbers.clone(),
                positions: self.positions[i].clone(),
                labels: Labels {
                    energy: Some(self.potential[i]),
                    dipole: self.dipoles.as_ref().map(|d| d[i]),
                    polarizability: self.polarizabilities.as_ref().map(|a| a[i]),
                    ..Labels::default()
                },
            })
            .collect()
    }

    pub fn write_extxyz(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, write_extxyz(&self.frames()))?;
        Ok(())
    }

    /// Sidecar table: time, energies, then dipole and polarizability columns when recorded.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        let mut header: Vec<String> = ["time_fs", "potential_ev", "kinetic_ev", "total_ev"]
            .map(String::from)
            .to_vec();
        if self.dipoles.is_some() {
            header.extend(["mu_x", "mu_y", "mu_z"].map(String::from));
        }
        if self.polarizabilities.is_some() {
            for a in ["x", "y", "z"] {
                for b in ["x", "y", "z"] {
                    header.push(format!("alpha_{a}{b}"));
                }
            }
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![
                self.times[i],
                self.potential[i],
                self.kinetic[i],
                self.potential[i] + self.kinetic[i],
            ];
            if let Some(d) = &self.dipoles {
                row.extend(d[i]);
            }
            if let Some(a) = &self.polarizabilities {
                row.extend(a[i].iter().flatten());
            }
            w.write_record(row.iter().map(|x| format!("{x:.16e}")))?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))?.flush()?;
        Ok(())
    }
}

/// Time series read back from a trajectory sidecar.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sidecar {
    pub times: Vec<f64>,
    pub dipoles: Option<Vec<Vec3>>,
    pub polarizabilities: Option<Vec<Mat3>>,
}

impl Sidecar {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let col = |name: &str| header.iter().position(|h| h == name);
        let time = col("time_fs").ok_or_else(|| Error::Data("sidecar lacks a time_fs column".into()))?;
        let mu: Option<Vec<usize>> = ["mu_x", "mu_y", "mu_z"].iter().map(|c| col(c)).collect();
        let alpha: Option<Vec<usize>> = ["x", "y", "z"]
            .iter()
            .flat_map(|a| ["x", "y", "z"].map(move |b| format!("alpha_{a}{b}")))
            .map(|c| col(&c))
            .collect();
        let mut out = Sidecar {
            dipoles: mu.as_ref().map(|_| Vec::new()),
            polarizabilities: alpha.as_ref().map(|_| Vec::new()),
            ..Sidecar::default()
        };
        for (line, record) in r.records().enumerate() {
            let record = record?;
            let get = |k: usize| -> Result<f64> {
                record
                    .get(k)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::parse(line + 2, format!("column {} is not a number", k + 1)))
            };
            out.times.push(get(time)?);
            if let (Some(cols), Some(d)) = (&mu, &mut out.dipoles) {
                d.push([get(cols[0])?, get(cols[1])?, get(cols[2])?]);
            }
            if let (Some(cols), Some(a)) = (&alpha, &mut out.polarizabilities) {
                let mut m = [[0.0; 3]; 3];
                for (k, &c) in cols.iter().enumerate() {
                    m[k / 3][k % 3] = get(c)?;
                }
                a.push(m);
            }
        }
        Ok(out)
    }

    /// Uniform spacing of the time column.
    pub fn sample_dt(&self) -> Result<f64> {
        if self.times.len() < 2 {
            return Err(Error::Data("sidecar needs at least two samples".into()));
        }
        let dt = self.times[1] - self.times[0];
        let uniform = self
            .times
            .windows(2)
            .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.abs().max(1.0));
        if !(dt > 0.0) || !uniform {
            return Err(Error::Data("sidecar times are not uniformly increasing".into()));
        }
        Ok(dt)
    }
}

/// Integrate `config.n_steps` steps from `state`, recording every `record_stride` steps.
///
/// `properties` returns the dipole/polarizability of a frame when requested.
pub fn integrate(
    state: &mut MDState,
    ff: &dyn ForceField,
    config: &MdConfig,
    atomic_numbers: &[u32],
    seed: u64,
    mut properties: impl FnMut(&[Vec3]) -> Result<(Option<Vec3>, Option<Mat3>)>,
) -> Result<Trajectory> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut traj = Trajectory {
        sample_dt: config.dt * config.record_stride as f64,
        stride: config.record_stride,
        atomic_numbers: atomic_numbers.to_vec(),
        dipoles: config.record_dipole.then(Vec::new),
        polarizabilities: config.record_polarizability.then(Vec::new),
        ..Trajectory::default()
    };
    let mut record = |s: &MDState, traj: &mut Trajectory| -> Result<()> {
        traj.times.push(s.time);
        traj.positions.push(s.positions.clone());
        traj.velocities.push(s.velocities.clone());
        traj.potential.push(s.potential);
        traj.kinetic.push(s.kinetic_energy());
        if traj.dipoles.is_some() || traj.polarizabilities.is_some() {
            let (mu, alpha) = properties(&s.positions)?;
            if let (Some(d), Some(mu)) = (&mut traj.dipoles, mu) {
                d.push(mu);
            }
            if let (Some(a), Some(alpha)) = (&mut traj.polarizabilities, alpha) {
                a.push(alpha);
            }
        }
        Ok(())
    };
    record(state, &mut traj)?;
    for step in 1..=config.n_steps {
        match config.ensemble {
            Ensemble::Nve => velocity_verlet_step(state, ff, config.dt)?,
            Ensemble::Langevin => {
                langevin_thermostat_step(state, ff, config.dt, config.temperature, config.friction, &mut rng)?
            }
        }
        if step % config.record_stride == 0 {
            record(state, &mut traj)?;
        }
    }
    Ok(traj)
}

/// Dynamics on the model's energy surface from `system`, with Maxwell–Boltzmann
/// initial velocities at `config.temperature`.
pub fn run_md(model: &Model, system: &AtomicSystem, config: &MdConfig, seed: u64) -> Result<Trajectory> {
    config.validate()?;
    let c = model.config();
    if !c.has_energy() {
        return Err(Error::Config("molecular dynamics needs an energy head".into()));
    }
    if config.record_dipole && !c.has_dipole() {
        return Err(Error::Config(
            "dipole recording requested but the model has no dipole head".into(),
        ));
    }
    if config.record_polarizability && !c.has_polarizability() {
        return Err(Error::Config(
            "polarizability recording requested but the model has no polarizability head".into(),
        ));
    }
    system.validate()?;
    let masses = system.masses()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let velocities = maxwell_boltzmann(&masses, config.temperature, Units::METAL, &mut rng);
    let ff = ModelForceField {
        model,
        atomic_numbers: system.atomic_numbers.clone(),
    };
    let mut state = MDState::new(system.positions.clone(), velocities, masses, Units::METAL, &ff)?;
    let z = system.atomic_numbers.clone();
    integrate(&mut state, &ff, config, &z, seed.wrapping_add(1), |positions| {
        let frame = AtomicSystem {
            atomic_numbers: z.clone(),
            positions: positions.to_vec(),
            labels: Labels::default(),
        };
        let mu = config.record_dipole.then(|| model.predict_dipole(&frame)).transpose()?;
        let alpha = config
            .record_polarizability
            .then(|| model.predict_polarizability(&frame))
            .transpose()?;
        Ok((mu, alpha))
    })
}
