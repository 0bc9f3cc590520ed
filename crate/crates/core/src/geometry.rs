//! Molecular structures, cutoff neighbor lists and batching.

use serde::{Deserialize, Serialize};

use crate::elements;
use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

/// Distances below this are treated as coincident atoms.
pub const MIN_DISTANCE: f64 = 1e-6;

/// Optional reference labels attached to a structure.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    pub energy: Option<f64>,
    pub forces: Option<Vec<Vec3>>,
    pub dipole: Option<Vec3>,
    /// |μ| when only the magnitude is known.
    pub dipole_magnitude: Option<f64>,
    pub polarizability: Option<Mat3>,
    pub spatial_extent: Option<f64>,
}

/// Atomic numbers and positions (Å) of one isolated molecule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomicSystem {
    pub atomic_numbers: Vec<u32>,
    pub positions: Vec<Vec3>,
    #[serde(default)]
    pub labels: Labels,
}

impl AtomicSystem {
    pub fn new(atomic_numbers: Vec<u32>, positions: Vec<Vec3>) -> Result<Self> {
        let system = AtomicSystem {
            atomic_numbers,
            positions,
            labels: Labels::default(),
        };
        system.validate()?;
        Ok(system)
    }

    pub fn len(&self) -> usize {
        self.atomic_numbers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atomic_numbers.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.atomic_numbers.len();
        if n == 0 {
            return Err(Error::Data("system has no atoms".into()));
        }
        if self.positions.len() != n {
            return Err(Error::Data(format!(
                "{} atomic numbers but {} positions",
                n,
                self.positions.len()
            )));
        }
        if let Some(&z) = self.atomic_numbers.iter().find(|&&z| z == 0) {
            return Err(Error::UnsupportedElement(z));
        }
        if self.positions.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Data("non-finite position".into()));
        }
        if let Some(f) = &self.labels.forces {
            if f.len() != n {
                return Err(Error::Data(format!("{} force rows for {} atoms", f.len(), n)));
            }
        }
        if let Some(a) = &self.labels.polarizability {
            check_symmetric(a)?;
        }
        Ok(())
    }

    pub fn masses(&self) -> Result<Vec<f64>> {
        self.atomic_numbers.iter().map(|&z| elements::mass(z)).collect()
    }

    pub fn center_of_mass(&self) -> Result<Vec3> {
        let masses = self.masses()?;
        let total: f64 = masses.iter().sum();
        let mut c = [0.0; 3];
        for (m, r) in masses.iter().zip(&self.positions) {
            for k in 0..3 {
                c[k] += m * r[k];
            }
        }
        Ok(c.map(|x| x / total))
    }

    pub fn translated(&self, shift: Vec3) -> Self {
        let mut out = self.clone();
        for r in &mut out.positions {
            for k in 0..3 {
                r[k] += shift[k];
            }
        }
        out
    }
}

pub(crate) fn check_symmetric(a: &Mat3) -> Result<()> {
    for i in 0..3 {
        for j in 0..i {
            if (a[i][j] - a[j][i]).abs() > 1e-8 {
                return Err(Error::Data(format!(
                    "polarizability not symmetric: [{i}][{j}]={} vs [{j}][{i}]={}",
                    a[i][j], a[j][i]
                )));
            }
        }
    }
    Ok(())
}

/// Shift positions so the mass-weighted centroid is the origin.
pub fn recenter(system: &AtomicSystem) -> Result<AtomicSystem> {
    let c = system.center_of_mass()?;
    Ok(system.translated(c.map(|x| -x)))
}

/// Rotation by `angle` (rad) about `axis` (any nonzero length).
pub fn rotation_matrix(axis: Vec3, angle: f64) -> Mat3 {
    let r = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(nalgebra::Vector3::from(axis)), angle);
    let m = r.matrix();
    [0, 1, 2].map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]])
}

/// Uniformly distributed rotation.
pub fn random_rotation<R: rand::Rng + ?Sized>(rng: &mut R) -> Mat3 {
    let mut g = || -> f64 { rng.sample(rand_distr::StandardNormal) };
    let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(g(), g(), g(), g()));
    let m = q.to_rotation_matrix();
    let m = m.matrix();
    [0, 1, 2].map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]])
}

pub fn apply(m: &Mat3, v: &Vec3) -> Vec3 {
    [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

impl AtomicSystem {
    /// Positions mapped through `m` about the origin; labels dropped.
    pub fn rotated(&self, m: &Mat3) -> Self {
        AtomicSystem {
            atomic_numbers: self.atomic_numbers.clone(),
            positions: self.positions.iter().map(|r| apply(m, r)).collect(),
            labels: Labels::default(),
        }
    }

    /// Atom `k` of the result is atom `perm[k]` of `self`; labels dropped.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        AtomicSystem {
            atomic_numbers: perm.iter().map(|&p| self.atomic_numbers[p]).collect(),
            positions: perm.iter().map(|&p| self.positions[p]).collect(),
            labels: Labels::default(),
        }
    }
}

/// `‖Σ_j r̂_j‖²` for the unit directions from `center` to each neighbor.
pub fn direction_sum_sq(center: Vec3, neighbors: &[Vec3]) -> f64 {
    let mut s = [0.0; 3];
    for u in unit_directions(center, neighbors) {
        for k in 0..3 {
            s[k] += u[k];
        }
    }
    s.iter().map(|x| x * x).sum()
}

/// `Σ_j Σ_k cos α_jk` over all ordered neighbor pairs, including `j = k`.
pub fn pair_cosine_sum(center: Vec3, neighbors: &[Vec3]) -> f64 {
    let u = unit_directions(center, neighbors);
    u.iter()
        .map(|a| u.iter().map(|b| (0..3).map(|k| a[k] * b[k]).sum::<f64>()).sum::<f64>())
        .sum()
}

fn unit_directions(center: Vec3, neighbors: &[Vec3]) -> Vec<Vec3> {
    neighbors
        .iter()
        .map(|r| {
            let d = [0, 1, 2].map(|k| r[k] - center[k]);
            let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            d.map(|x| x / n)
        })
        .collect()
}

/// Directed pairs `(i, j)` with `0 < |r_j - r_i| ≤ r_cut`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NeighborList {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
    /// `r_ij = r_j − r_i`.
    pub vectors: Vec<Vec3>,
    pub distances: Vec<f64>,
}

impl NeighborList {
    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    pub fn neighbor_counts(&self, n_atoms: usize) -> Vec<usize> {
        let mut counts = vec![0; n_atoms];
        for &i in &self.first {
            counts[i] += 1;
        }
        counts
    }

    fn append(&mut self, other: NeighborList, offset: usize) {
        self.first.extend(other.first.into_iter().map(|i| i + offset));
        self.second.extend(other.second.into_iter().map(|j| j + offset));
        self.vectors.extend(other.vectors);
        self.distances.extend(other.distances);
    }
}

/// Plain O(N²) pair scan. The boundary `d == r_cut` is included.
pub fn build_neighbor_list(system: &AtomicSystem, r_cut: f64) -> Result<NeighborList> {
    neighbor_pairs(&system.positions, r_cut)
}

pub(crate) fn neighbor_pairs(positions: &[Vec3], r_cut: f64) -> Result<NeighborList> {
    if !(r_cut > 0.0) {
        return Err(Error::Contract(format!("cutoff must be positive, got {r_cut}")));
    }
    let mut nl = NeighborList::default();
    for (i, ri) in positions.iter().enumerate() {
        for (j, rj) in positions.iter().enumerate() {
            if i == j {
                continue;
            }
            let v = [rj[0] - ri[0], rj[1] - ri[1], rj[2] - ri[2]];
            let d = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if d < MIN_DISTANCE {
                return Err(Error::DegenerateGeometry { i, j, distance: d });
            }
            if d <= r_cut {
                nl.first.push(i);
                nl.second.push(j);
                nl.vectors.push(v);
                nl.distances.push(d);
            }
        }
    }
    Ok(nl)
}

/// Several molecules concatenated into one evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub atomic_numbers: Vec<u32>,
    pub positions: Vec<Vec3>,
    /// Molecule index of every atom.
    pub molecule: Vec<usize>,
    /// First atom of every molecule.
    pub offsets: Vec<usize>,
    pub labels: Vec<Labels>,
}

impl Batch {
    pub fn n_atoms(&self) -> usize {
        self.atomic_numbers.len()
    }

    pub fn n_molecules(&self) -> usize {
        self.offsets.len()
    }

    /// Atom range of molecule `m`.
    pub fn range(&self, m: usize) -> std::ops::Range<usize> {
        let end = self.offsets.get(m + 1).copied().unwrap_or(self.n_atoms());
        self.offsets[m]..end
    }

    /// Neighbor list of every molecule, with no pairs across molecules.
    pub fn neighbor_list(&self, r_cut: f64) -> Result<NeighborList> {
        let mut nl = NeighborList::default();
        for m in 0..self.n_molecules() {
            let range = self.range(m);
            let start = range.start;
            nl.append(neighbor_pairs(&self.positions[range], r_cut)?, start);
        }
        Ok(nl)
    }
}

pub fn batch(systems: &[AtomicSystem]) -> Result<Batch> {
    if systems.is_empty() {
        return Err(Error::Contract("cannot batch an empty list".into()));
    }
    let mut out = Batch {
        atomic_numbers: Vec::new(),
        positions: Vec::new(),
        molecule: Vec::new(),
        offsets: Vec::with_capacity(systems.len()),
        labels: Vec::with_capacity(systems.len()),
    };
    for (m, s) in systems.iter().enumerate() {
        s.validate()?;
        out.offsets.push(out.atomic_numbers.len());
        out.atomic_numbers.extend(&s.atomic_numbers);
        out.positions.extend(&s.positions);
        out.molecule.extend(std::iter::repeat_n(m, s.len()));
        out.labels.push(s.labels.clone());
    }
    Ok(out)
}

pub fn unbatch(batch: &Batch) -> Vec<AtomicSystem> {
    (0..batch.n_molecules())
        .map(|m| {
            let r = batch.range(m);
            AtomicSystem {
                atomic_numbers: batch.atomic_numbers[r.clone()].to_vec(),
                positions: batch.positions[r].to_vec(),
                labels: batch.labels[m].clone(),
            }
        })
        .collect()
}
