//! Equivariant message-passing network with scalar and tensorial heads.
//!
//! Each atom carries scalar features `s` (`[N, F]`) and vector features `v`
//! (`[N, 3, F]`). Message blocks convolve neighbor features with radial
//! filters; update blocks mix features atomwise. Nonlinearities only ever act
//! on scalars, and vectors are only scaled, linearly combined or contracted,
//! so every output transforms correctly under rotations.

mod layers;
mod params;
mod readout;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use layers::{cosine_cutoff, radial_basis};
pub use params::ModelParams;
pub use readout::{assemble_dipole, assemble_polarizability, assemble_spatial_extent};

pub(crate) use layers::Graph;
pub(crate) use readout::HeadOutputs;

use crate::diff::{Tape, Tensor, Var, NORM_EPS};
use crate::elements::{self, MAX_ATOMIC_NUMBER};
use crate::error::{Error, Result};
use crate::geometry::{batch, AtomicSystem, Batch, Mat3, Vec3};
use layers::{index, message_block, pair_features, update_block, Terms};
use params::Layout;

/// Output heads a model can carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Readout {
    /// Sum of atomwise energies; forces are its negative position gradient.
    Energy,
    /// Atomic dipoles plus latent charges times positions.
    Dipole {
        #[serde(default)]
        charges_only: bool,
    },
    Polarizability,
    SpatialExtent,
    /// Sum of `rank` outer products of `order` vectors per atom.
    Rank1 {
        order: usize,
        rank: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub features: usize,
    /// Message/update repetitions.
    pub n_blocks: usize,
    /// Å
    pub cutoff: f64,
    pub n_rbf: usize,
    /// Largest atomic number with an embedding row.
    pub max_z: u32,
    /// Drop the `v_j ∘ φ_vv ∘ W_vv` propagation term of the message block.
    pub disable_vector_propagation: bool,
    /// Drop the `⟨Uv, Vv⟩` term of the scalar update.
    pub disable_scalar_product: bool,
    /// Purely invariant model: no vector features at all.
    pub disable_vector_features: bool,
    pub readouts: Vec<Readout>,
    /// Zero the last layer of every head so fresh models predict exactly zero.
    pub zero_init_heads: bool,
    pub norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            features: 128,
            n_blocks: 3,
            cutoff: 5.0,
            n_rbf: 20,
            max_z: MAX_ATOMIC_NUMBER,
            disable_vector_propagation: false,
            disable_scalar_product: false,
            disable_vector_features: false,
            readouts: vec![Readout::Energy],
            zero_init_heads: false,
            norm_eps: NORM_EPS,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.features < 2 {
            return bad(format!("features must be at least 2, got {}", self.features));
        }
        if self.n_blocks == 0 {
            return bad("n_blocks must be at least 1".into());
        }
        if self.n_rbf == 0 {
            return bad("n_rbf must be at least 1".into());
        }
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return bad(format!("cutoff must be positive, got {}", self.cutoff));
        }
        if self.max_z == 0 || self.max_z > MAX_ATOMIC_NUMBER {
            return bad(format!("max_z must be in 1..={MAX_ATOMIC_NUMBER}"));
        }
        if !(self.norm_eps > 0.0) {
            return bad("norm_eps must be positive".into());
        }
        if self.readouts.is_empty() {
            return bad("at least one readout is required".into());
        }
        for (k, r) in self.readouts.iter().enumerate() {
            if let Readout::Rank1 { order, rank } = r {
                if *order == 0 || *rank == 0 {
                    return bad("rank1 readout needs order >= 1 and rank >= 1".into());
                }
            }
            let same_kind = self.readouts[..k]
                .iter()
                .any(|o| std::mem::discriminant(o) == std::mem::discriminant(r));
            if same_kind {
                return bad(format!("duplicate readout {r:?}"));
            }
        }
        Ok(())
    }

    pub fn has_energy(&self) -> bool {
        self.readouts.contains(&Readout::Energy)
    }

    pub fn has_dipole(&self) -> bool {
        self.readouts.iter().any(|r| matches!(r, Readout::Dipole { .. }))
    }

    pub fn has_polarizability(&self) -> bool {
        self.readouts.contains(&Readout::Polarizability)
    }

    pub fn has_spatial_extent(&self) -> bool {
        self.readouts.contains(&Readout::SpatialExtent)
    }

    pub fn rank1(&self) -> Option<(usize, usize)> {
        self.readouts.iter().find_map(|r| match *r {
            Readout::Rank1 { order, rank } => Some((order, rank)),
            _ => None,
        })
    }

    fn terms(&self) -> Terms {
        Terms {
            vector_features: !self.disable_vector_features,
            vector_propagation: !self.disable_vector_propagation,
            scalar_product: !self.disable_scalar_product,
            norm_eps: self.norm_eps,
        }
    }
}

/// Per-atom features after message passing.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeState {
    /// `[N, F]`
    pub scalar: Tensor,
    /// `[N, 3, F]`, spatial axis in the middle.
    pub vector: Tensor,
}

impl NodeState {
    pub fn n_atoms(&self) -> usize {
        self.scalar.shape()[0]
    }

    pub fn features(&self) -> usize {
        self.scalar.shape()[1]
    }

    pub fn scalar_row(&self, atom: usize) -> &[f64] {
        let f = self.features();
        &self.scalar.data()[atom * f..(atom + 1) * f]
    }

    pub fn vector_at(&self, atom: usize, feature: usize) -> Vec3 {
        let f = self.features();
        let d = self.vector.data();
        [0, 1, 2].map(|c| d[(atom * 3 + c) * f + feature])
    }
}

/// Per-molecule predictions of one batch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Predictions {
    pub energy: Option<Vec<f64>>,
    /// Per atom, concatenated over molecules in batch order.
    pub forces: Option<Vec<Vec3>>,
    pub dipole: Option<Vec<Vec3>>,
    pub polarizability: Option<Vec<Mat3>>,
    pub spatial_extent: Option<Vec<f64>>,
    /// Flattened row-major order-M tensors.
    pub rank1: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ModelParams,
    layout: Layout,
}

impl Model {
    /// Freshly initialized model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (params, layout) = params::build(&config, &mut rng);
        Ok(Model { config, params, layout })
    }

    /// Model from a config and stored arrays, checked against the expected layout.
    pub fn from_parts(config: ModelConfig, stored: ModelParams) -> Result<Self> {
        let mut model = Model::new(config, 0)?;
        if stored.names() != model.params.names() {
            return Err(Error::Data(
                "stored parameter names do not match the model configuration".into(),
            ));
        }
        for (name, t) in stored.names().iter().zip(stored.tensors()) {
            model.params.set(name, t.clone())?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    /// Set the energy head's output scale and per-element offsets.
    pub fn set_energy_normalization(&mut self, scale: f64, offsets: &[(u32, f64)]) -> Result<()> {
        if !self.config.has_energy() {
            return Err(Error::Config("model has no energy head".into()));
        }
        self.params.set("head.energy.scale", Tensor::vector(vec![scale]))?;
        let mut table = Tensor::zeros(&[self.config.max_z as usize + 1]);
        for &(z, e) in offsets {
            self.check_species(z)?;
            table.data_mut()[z as usize] = e;
        }
        self.params.set("head.energy.offset", table)
    }

    fn check_species(&self, z: u32) -> Result<()> {
        if z == 0 || z > self.config.max_z {
            return Err(Error::UnsupportedElement(z));
        }
        Ok(())
    }

    pub(crate) fn graph(&self, batch: &Batch) -> Result<Graph> {
        for &z in &batch.atomic_numbers {
            self.check_species(z)?;
        }
        let nl = batch.neighbor_list(self.config.cutoff)?;
        Ok(Graph {
            n_atoms: batch.n_atoms(),
            first: index(nl.first),
            second: index(nl.second),
            molecule: index(batch.molecule.clone()),
            n_molecules: batch.n_molecules(),
            species: index(batch.atomic_numbers.iter().map(|&z| z as usize).collect()),
        })
    }

    fn initial_scalars<'t>(&self, p: &[Var<'t>], graph: &Graph) -> Var<'t> {
        p[self.layout.embedding].gather(graph.species.clone())
    }

    /// Final `(s, v)` after all blocks; `v` is `None` for the invariant model.
    pub(crate) fn representation<'t>(
        &self,
        p: &[Var<'t>],
        graph: &Graph,
        pos: Var<'t>,
    ) -> Result<(Var<'t>, Option<Var<'t>>)> {
        let terms = self.config.terms();
        let pairs = pair_features(pos, graph, self.config.cutoff, self.config.n_rbf);
        let mut s = self.initial_scalars(p, graph);
        let mut v: Option<Var<'t>> = None;
        for (k, (msg, upd)) in self.layout.messages.iter().zip(&self.layout.updates).enumerate() {
            let (ds, dv) = message_block(p, msg, s, v, &pairs, graph, terms);
            s = s.add(ds);
            v = add_optional(v, dv);
            check_finite(s, v, k)?;
            let (ds, dv) = update_block(p, upd, s, v, terms);
            s = s.add(ds);
            v = add_optional(v, dv);
            check_finite(s, v, k)?;
        }
        Ok((s, v))
    }

    /// Taped evaluation of all heads.
    pub(crate) fn evaluate<'t>(
        &self,
        p: &[Var<'t>],
        batch: &Batch,
        graph: &Graph,
        pos: Var<'t>,
    ) -> Result<HeadOutputs<'t>> {
        let (s, v) = self.representation(p, graph, pos)?;
        let centered = pos.tape().constant(centered_positions(batch)?);
        Ok(readout::evaluate(
            p,
            &self.layout.heads,
            s,
            v,
            centered,
            graph,
            self.config.norm_eps,
        ))
    }

    /// Initial per-atom state: embedding rows and zero vectors.
    pub fn embed(&self, atomic_numbers: &[u32]) -> Result<NodeState> {
        for &z in atomic_numbers {
            self.check_species(z)?;
        }
        let f = self.config.features;
        let emb = &self.params.tensors()[self.layout.embedding];
        let mut scalar = Vec::with_capacity(atomic_numbers.len() * f);
        for &z in atomic_numbers {
            scalar.extend_from_slice(&emb.data()[z as usize * f..(z as usize + 1) * f]);
        }
        let n = atomic_numbers.len();
        Ok(NodeState {
            scalar: Tensor::from_parts(vec![n, f], scalar),
            vector: Tensor::zeros(&[n, 3, f]),
        })
    }

    /// Final node state of every atom of the batch.
    pub fn forward(&self, batch: &Batch) -> Result<NodeState> {
        let graph = self.graph(batch)?;
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let pos = tape.constant(positions_tensor(&batch.positions));
        let (s, v) = self.representation(&p, &graph, pos)?;
        let scalar = (*s.value()).clone();
        let vector = match v {
            Some(v) => (*v.value()).clone(),
            None => Tensor::zeros(&[graph.n_atoms, 3, self.config.features]),
        };
        Ok(NodeState { scalar, vector })
    }

    /// Evaluate every head on `batch`; forces only when requested.
    pub fn predict(&self, batch: &Batch, with_forces: bool) -> Result<Predictions> {
        if with_forces && !self.config.has_energy() {
            return Err(Error::Config("forces need an energy head".into()));
        }
        let graph = self.graph(batch)?;
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let pos_t = positions_tensor(&batch.positions);
        let pos = if with_forces {
            tape.var(pos_t)
        } else {
            tape.constant(pos_t)
        };
        let heads = self.evaluate(&p, batch, &graph, pos)?;
        let mut out = Predictions::default();
        if let Some(e) = heads.energy {
            out.energy = Some(e.value().data().to_vec());
            if with_forces {
                let g = tape.grad(e.sum(), &[pos], false)?[0].value();
                out.forces = Some(g.data().chunks_exact(3).map(|c| [-c[0], -c[1], -c[2]]).collect());
            }
        }
        out.dipole = heads
            .dipole
            .map(|d| d.value().data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect());
        out.polarizability = heads.polarizability.map(|a| {
            a.value()
                .data()
                .chunks_exact(9)
                .map(|c| [[c[0], c[1], c[2]], [c[3], c[4], c[5]], [c[6], c[7], c[8]]])
                .collect()
        });
        out.spatial_extent = heads.spatial_extent.map(|x| x.value().data().to_vec());
        out.rank1 = heads.rank1.map(|t| {
            let w = t.shape()[1];
            t.value().data().chunks_exact(w).map(<[f64]>::to_vec).collect()
        });
        Ok(out)
    }

    fn predict_one(&self, system: &AtomicSystem, with_forces: bool) -> Result<Predictions> {
        self.predict(&batch(std::slice::from_ref(system))?, with_forces)
    }

    fn missing(head: &str) -> Error {
        Error::Config(format!("model has no {head} head"))
    }

    pub fn predict_scalar(&self, system: &AtomicSystem) -> Result<f64> {
        let p = self.predict_one(system, false)?;
        p.energy.map(|e| e[0]).ok_or_else(|| Self::missing("energy"))
    }

    pub fn predict_energy_forces(&self, system: &AtomicSystem) -> Result<(f64, Vec<Vec3>)> {
        let p = self.predict_one(system, true)?;
        Ok((p.energy.unwrap()[0], p.forces.unwrap()))
    }

    pub fn predict_forces(&self, system: &AtomicSystem) -> Result<Vec<Vec3>> {
        Ok(self.predict_energy_forces(system)?.1)
    }

    /// Dipole about the center of mass (recentering is applied internally).
    pub fn predict_dipole(&self, system: &AtomicSystem) -> Result<Vec3> {
        let p = self.predict_one(system, false)?;
        p.dipole.map(|d| d[0]).ok_or_else(|| Self::missing("dipole"))
    }

    pub fn predict_polarizability(&self, system: &AtomicSystem) -> Result<Mat3> {
        let p = self.predict_one(system, false)?;
        p.polarizability
            .map(|a| a[0])
            .ok_or_else(|| Self::missing("polarizability"))
    }

    pub fn predict_spatial_extent(&self, system: &AtomicSystem) -> Result<f64> {
        let p = self.predict_one(system, false)?;
        p.spatial_extent
            .map(|x| x[0])
            .ok_or_else(|| Self::missing("spatial extent"))
    }

    /// Flattened order-M tensor of the rank-1 head.
    pub fn rank1_tensor(&self, system: &AtomicSystem) -> Result<Vec<f64>> {
        let p = self.predict_one(system, false)?;
        p.rank1
            .map(|mut t| t.swap_remove(0))
            .ok_or_else(|| Self::missing("rank-1"))
    }
}

fn add_optional<'t>(v: Option<Var<'t>>, dv: Option<Var<'t>>) -> Option<Var<'t>> {
    match (v, dv) {
        (Some(v), Some(dv)) => Some(v.add(dv)),
        (None, dv) => dv,
        (v, None) => v,
    }
}

fn check_finite(s: Var<'_>, v: Option<Var<'_>>, block: usize) -> Result<()> {
    let finite = s.value().is_finite() && v.is_none_or(|v| v.value().is_finite());
    if finite {
        Ok(())
    } else {
        Err(Error::NumericalDivergence { block })
    }
}

pub(crate) fn positions_tensor(positions: &[Vec3]) -> Tensor {
    Tensor::from_parts(vec![positions.len(), 3], positions.iter().flatten().copied().collect())
}

/// Positions relative to each molecule's center of mass, `[N, 3]`.
pub(crate) fn centered_positions(batch: &Batch) -> Result<Tensor> {
    let mut out = Vec::with_capacity(batch.n_atoms() * 3);
    for m in 0..batch.n_molecules() {
        let range = batch.range(m);
        let masses: Vec<f64> = batch.atomic_numbers[range.clone()]
            .iter()
            .map(|&z| elements::mass(z))
            .collect::<Result<_>>()?;
        let total: f64 = masses.iter().sum();
        let mut c = [0.0; 3];
        for (mass, r) in masses.iter().zip(&batch.positions[range.clone()]) {
            for k in 0..3 {
                c[k] += mass * r[k];
            }
        }
        for r in &batch.positions[range] {
            out.extend((0..3).map(|k| r[k] - c[k] / total));
        }
    }
    Ok(Tensor::from_parts(vec![batch.n_atoms(), 3], out))
}
