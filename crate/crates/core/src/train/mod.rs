//! Loss functions, optimizer, schedules and the training loop.

mod optim;

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use optim::{smooth_validation, split_dataset, AdamState, AdamW, Plateau, PlateauScheduler, Split};

use crate::checkpoint::Checkpoint;
use crate::diff::{safe_norm, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{batch, AtomicSystem, Vec3};
use crate::model::{positions_tensor, Model};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Squared,
    Absolute,
}

impl LossKind {
    pub fn apply(self, err: f64) -> f64 {
        match self {
            LossKind::Squared => err * err,
            LossKind::Absolute => err.abs(),
        }
    }

    fn taped(self, err: Var<'_>) -> Var<'_> {
        match self {
            LossKind::Squared => err.square(),
            LossKind::Absolute => err.abs(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    pub decay_patience: usize,
    pub stopping_patience: usize,
    pub smoothing_factor: f64,
    pub weight_decay: f64,
    /// ρ: weight of the force term against the energy term.
    pub force_weight: f64,
    /// Weight of dipole, polarizability and spatial-extent terms.
    pub property_weight: f64,
    pub seed: u64,
    pub max_epochs: usize,
    pub loss_kind: LossKind,
    /// Fit per-element energy offsets and an output scale on the training split.
    pub fit_energy_normalization: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 10,
            learning_rate: 1e-3,
            lr_decay_factor: 0.5,
            decay_patience: 50,
            stopping_patience: 150,
            smoothing_factor: 0.9,
            weight_decay: 0.01,
            force_weight: 0.95,
            property_weight: 1.0,
            seed: 0,
            max_epochs: 2000,
            loss_kind: LossKind::Squared,
            fit_energy_normalization: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return bad("lr_decay_factor must lie in (0, 1)");
        }
        if self.decay_patience == 0 || self.stopping_patience == 0 {
            return bad("patience values must be positive");
        }
        if !(self.smoothing_factor > 0.0 && self.smoothing_factor < 1.0) {
            return bad("smoothing_factor must lie in (0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.force_weight) {
            return bad("force_weight must lie in [0, 1]");
        }
        if !(self.property_weight >= 0.0) {
            return bad("property_weight must be non-negative");
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            weight_decay: self.weight_decay,
            ..AdamW::default()
        }
    }
}

/// `(1 − ρ)·L(E) + ρ·L(F)`, each term a mean of elementwise losses.
pub fn combined_loss(
    pred_energy: &[f64],
    target_energy: &[f64],
    pred_forces: &[Vec3],
    target_forces: &[Vec3],
    rho: f64,
    kind: LossKind,
) -> f64 {
    let mean = |errs: Vec<f64>| errs.iter().map(|&e| kind.apply(e)).sum::<f64>() / errs.len() as f64;
    let le = mean(pred_energy.iter().zip(target_energy).map(|(p, t)| p - t).collect());
    let lf = mean(
        pred_forces
            .iter()
            .flatten()
            .zip(target_forces.iter().flatten())
            .map(|(p, t)| p - t)
            .collect(),
    );
    (1.0 - rho) * le + rho * lf
}

/// Which labels enter the loss: present in the data and predicted by the model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Targets {
    pub energy: bool,
    pub forces: bool,
    pub dipole: bool,
    pub dipole_magnitude: bool,
    pub polarizability: bool,
    pub spatial_extent: bool,
}

impl Targets {
    fn of(s: &AtomicSystem) -> Self {
        let l = &s.labels;
        Targets {
            energy: l.energy.is_some(),
            forces: l.forces.is_some(),
            dipole: l.dipole.is_some(),
            dipole_magnitude: l.dipole_magnitude.is_some(),
            polarizability: l.polarizability.is_some(),
            spatial_extent: l.spatial_extent.is_some(),
        }
    }

    /// Labels shared by every structure, restricted to the model's heads.
    pub fn resolve(model: &Model, data: &[AtomicSystem]) -> Result<Self> {
        let first = data.first().ok_or_else(|| Error::Data("empty dataset".into()))?;
        let present = Targets::of(first);
        if let Some(k) = data.iter().position(|s| Targets::of(s) != present) {
            return Err(Error::Data(format!(
                "structure {k} carries a different set of labels than structure 0"
            )));
        }
        let c = model.config();
        let t = Targets {
            energy: present.energy && c.has_energy(),
            forces: present.forces && c.has_energy(),
            dipole: present.dipole && c.has_dipole(),
            dipole_magnitude: present.dipole_magnitude && !present.dipole && c.has_dipole(),
            polarizability: present.polarizability && c.has_polarizability(),
            spatial_extent: present.spatial_extent && c.has_spatial_extent(),
        };
        if t == Targets::default() {
            return Err(Error::Data("no label in the data matches a model head".into()));
        }
        Ok(t)
    }
}

/// Sums of absolute errors and their counts for one or more batches.
#[derive(Clone, Copy, Debug, Default)]
struct Errors {
    loss: f64,
    molecules: usize,
    sums: [f64; 5],
    counts: [usize; 5],
}

impl Errors {
    fn add(&mut self, slot: usize, pred: &[f64], target: impl Iterator<Item = f64>) {
        for (p, t) in pred.iter().zip(target) {
            self.sums[slot] += (p - t).abs();
            self.counts[slot] += 1;
        }
    }

    fn merge(mut self, other: Errors) -> Errors {
        self.loss += other.loss;
        self.molecules += other.molecules;
        for k in 0..5 {
            self.sums[k] += other.sums[k];
            self.counts[k] += other.counts[k];
        }
        self
    }
}

/// Mean loss and mean absolute errors over a dataset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy_mae: Option<f64>,
    /// Per force component.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub force_mae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dipole_mae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub polarizability_mae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spatial_extent_mae: Option<f64>,
}

impl From<Errors> for Metrics {
    fn from(e: Errors) -> Self {
        let mae = |k: usize| (e.counts[k] > 0).then(|| e.sums[k] / e.counts[k] as f64);
        Metrics {
            loss: e.loss / e.molecules.max(1) as f64,
            energy_mae: mae(0),
            force_mae: mae(1),
            dipole_mae: mae(2),
            polarizability_mae: mae(3),
            spatial_extent_mae: mae(4),
        }
    }
}

fn labels<T: Copy>(systems: &[AtomicSystem], get: impl Fn(&AtomicSystem) -> Option<T>) -> Vec<T> {
    systems.iter().map(|s| get(s).expect("labels checked")).collect()
}

fn mean_loss<'t>(kind: LossKind, pred: Var<'t>, target: Vec<f64>) -> Var<'t> {
    let n = target.len() as f64;
    let target = pred.tape().constant(Tensor::from_parts(pred.shape(), target));
    kind.taped(pred.sub(target)).sum().scale(1.0 / n)
}

/// Taped loss of one batch. With `create_graph` the force term stays differentiable.
fn taped_loss<'t>(
    model: &Model,
    tape: &'t Tape,
    p: &[Var<'t>],
    systems: &[AtomicSystem],
    targets: Targets,
    config: &TrainConfig,
    create_graph: bool,
) -> Result<(Var<'t>, Errors)> {
    let b = batch(systems)?;
    let graph = model.graph(&b)?;
    let pos_t = positions_tensor(&b.positions);
    let pos = if targets.forces {
        tape.var(pos_t)
    } else {
        tape.constant(pos_t)
    };
    let heads = model.evaluate(p, &b, &graph, pos)?;
    let kind = config.loss_kind;
    let mut errors = Errors {
        molecules: systems.len(),
        ..Errors::default()
    };
    let mut total: Option<Var<'t>> = None;
    let mut push = |term: Var<'t>, w: f64| {
        let term = term.scale(w);
        total = Some(match total {
            Some(t) => t.add(term),
            None => term,
        });
    };

    if targets.energy || targets.forces {
        let e = heads.energy.expect("energy head checked");
        let rho = match (targets.energy, targets.forces) {
            (true, true) => config.force_weight,
            (false, true) => 1.0,
            _ => 0.0,
        };
        if targets.energy {
            let t = labels(systems, |s| s.labels.energy);
            errors.add(0, e.value().data(), t.iter().copied());
            push(mean_loss(kind, e, t), 1.0 - rho);
        }
        if targets.forces {
            let f = tape.grad(e.sum(), &[pos], create_graph)?[0].neg();
            let t: Vec<f64> = systems
                .iter()
                .flat_map(|s| {
                    s.labels
                        .forces
                        .as_ref()
                        .expect("labels checked")
                        .iter()
                        .flatten()
                        .copied()
                })
                .collect();
            errors.add(1, f.value().data(), t.iter().copied());
            push(mean_loss(kind, f, t), rho);
        }
    }
    let w = config.property_weight;
    if targets.dipole {
        let mu = heads.dipole.expect("dipole head checked");
        let t: Vec<f64> = labels(systems, |s| s.labels.dipole).concat();
        errors.add(2, mu.value().data(), t.iter().copied());
        push(mean_loss(kind, mu, t), w);
    }
    if targets.dipole_magnitude {
        let mu = heads.dipole.expect("dipole head checked");
        let norm = safe_norm(mu, 1, model.config().norm_eps);
        let t = labels(systems, |s| s.labels.dipole_magnitude);
        errors.add(2, norm.value().data(), t.iter().copied());
        push(mean_loss(kind, norm, t), w);
    }
    if targets.polarizability {
        let a = heads.polarizability.expect("polarizability head checked");
        let t: Vec<f64> = labels(systems, |s| s.labels.polarizability)
            .iter()
            .flat_map(|m| m.iter().flatten().copied())
            .collect();
        errors.add(3, a.value().data(), t.iter().copied());
        push(mean_loss(kind, a, t), w);
    }
    if targets.spatial_extent {
        let r2 = heads.spatial_extent.expect("spatial extent head checked");
        let t = labels(systems, |s| s.labels.spatial_extent);
        errors.add(4, r2.value().data(), t.iter().copied());
        push(mean_loss(kind, r2, t), w);
    }
    let loss = total.expect("at least one target");
    errors.loss = loss.item() * systems.len() as f64;
    Ok((loss, errors))
}

/// Batch loss and its gradient for every parameter array (`None` for buffers).
pub fn loss_and_gradients(
    model: &Model,
    systems: &[AtomicSystem],
    targets: Targets,
    config: &TrainConfig,
) -> Result<(f64, Vec<Option<Tensor>>)> {
    let tape = Tape::new();
    let params = model.params();
    let p = params.bind(&tape, true);
    let (loss, _) = taped_loss(model, &tape, &p, systems, targets, config, true)?;
    let trainable: Vec<usize> = (0..params.len()).filter(|&k| params.is_trainable(k)).collect();
    let wrt: Vec<Var> = trainable.iter().map(|&k| p[k]).collect();
    let grads = tape.grad(loss, &wrt, false)?;
    let mut out = vec![None; params.len()];
    for (k, g) in trainable.into_iter().zip(grads) {
        out[k] = Some((*g.value()).clone());
    }
    Ok((loss.item(), out))
}

/// Batch loss without parameter gradients.
pub fn batch_loss(model: &Model, systems: &[AtomicSystem], targets: Targets, config: &TrainConfig) -> Result<f64> {
    let tape = Tape::new();
    let p = model.params().bind(&tape, false);
    Ok(taped_loss(model, &tape, &p, systems, targets, config, false)?.0.item())
}

/// Loss and MAEs over `systems`, evaluated in parallel chunks of `batch_size`.
pub fn evaluate(model: &Model, systems: &[AtomicSystem], targets: Targets, config: &TrainConfig) -> Result<Metrics> {
    let parts: Vec<Errors> = systems
        .par_chunks(config.batch_size.max(1))
        .map(|chunk| {
            let tape = Tape::new();
            let p = model.params().bind(&tape, false);
            taped_loss(model, &tape, &p, chunk, targets, config, false).map(|(_, e)| e)
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().fold(Errors::default(), Errors::merge).into())
}

/// Least-squares per-element energy offsets and an output scale from the training split.
///
/// The scale is the force-component standard deviation when forces are labeled,
/// otherwise the spread of the per-atom residual energy.
pub fn fit_energy_normalization(model: &mut Model, train: &[AtomicSystem]) -> Result<()> {
    if !model.config().has_energy() || train.iter().any(|s| s.labels.energy.is_none()) {
        return Ok(());
    }
    let mut species: Vec<u32> = train.iter().flat_map(|s| s.atomic_numbers.iter().copied()).collect();
    species.sort_unstable();
    species.dedup();
    let counts = DMatrix::from_fn(train.len(), species.len(), |m, k| {
        train[m].atomic_numbers.iter().filter(|&&z| z == species[k]).count() as f64
    });
    let energies = DVector::from_iterator(train.len(), train.iter().map(|s| s.labels.energy.unwrap()));
    let offsets = counts
        .clone()
        .svd(true, true)
        .solve(&energies, 1e-10)
        .map_err(|e| Error::Data(format!("energy offset fit failed: {e}")))?;
    let residual = &energies - &counts * &offsets;

    let spread = |xs: Vec<f64>| {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
    };
    let scale = if train.iter().all(|s| s.labels.forces.is_some()) {
        spread(
            train
                .iter()
                .flat_map(|s| s.labels.forces.as_ref().unwrap().iter().flatten().copied())
                .collect(),
        )
    } else {
        spread(residual.iter().zip(train).map(|(r, s)| r / s.len() as f64).collect())
    };
    let scale = if scale.is_finite() && scale > 1e-12 { scale } else { 1.0 };
    let table: Vec<(u32, f64)> = species.iter().copied().zip(offsets.iter().copied()).collect();
    model.set_energy_normalization(scale, &table)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopping,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub smoothed_val_loss: f64,
    #[serde(flatten)]
    pub val: Metrics,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Lowest validation loss seen, with the optimizer state at that point.
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub last: Checkpoint,
    pub history: Vec<EpochMetrics>,
    pub stop: StopReason,
    /// Diagnostic for a diverged run.
    pub message: Option<String>,
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::NumericalDivergence { .. } | Error::NonFiniteGradient { .. })
}

/// Train `model` on `train`, validating on `val` once per epoch.
///
/// Each epoch record is written to `log` as one JSON line. A diverging run stops
/// early with [`StopReason::Diverged`] and keeps the best checkpoint so far.
pub fn train_loop(
    mut model: Model,
    config: &TrainConfig,
    train: &[AtomicSystem],
    val: &[AtomicSystem],
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if val.is_empty() {
        return Err(Error::Config("validation split is empty".into()));
    }
    let targets = Targets::resolve(&model, train)?;
    if Targets::resolve(&model, val)? != targets {
        return Err(Error::Data("training and validation labels differ".into()));
    }
    if config.fit_energy_normalization {
        fit_energy_normalization(&mut model, train)?;
    }

    let initial = Checkpoint {
        model: model.clone(),
        optimizer: None,
    };
    let optimizer = config.optimizer();
    let mut state = AdamState::new(model.params().tensors());
    let names = model.params().names().to_vec();
    let mut scheduler = PlateauScheduler::new(config.learning_rate, config.lr_decay_factor, config.decay_patience);
    let mut stopper = Plateau::new(config.stopping_patience);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut smoothed = None;
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    let mut stop = StopReason::MaxEpochs;
    let mut message = None;

    'epochs: for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let systems: Vec<AtomicSystem> = chunk.iter().map(|&i| train[i].clone()).collect();
            let mut diverged = None;
            match loss_and_gradients(&model, &systems, targets, config) {
                Ok((loss, grads)) if loss.is_finite() => {
                    let lr = scheduler.lr;
                    match optimizer.step(model.params_mut().tensors_mut(), &grads, &mut state, lr, &names) {
                        Ok(()) => train_loss += loss * systems.len() as f64,
                        Err(e) if is_divergence(&e) => diverged = Some(e.to_string()),
                        Err(e) => return Err(e),
                    }
                }
                Ok(_) => diverged = Some("non-finite training loss".to_string()),
                Err(e) if is_divergence(&e) => diverged = Some(e.to_string()),
                Err(e) => return Err(e),
            }
            if let Some(why) = diverged {
                stop = StopReason::Diverged;
                message = Some(format!("epoch {epoch}: {why}"));
                break 'epochs;
            }
        }
        train_loss /= train.len() as f64;

        let metrics = match evaluate(&model, val, targets, config) {
            Ok(m) if m.loss.is_finite() => m,
            Ok(_) => {
                stop = StopReason::Diverged;
                message = Some(format!("epoch {epoch}: non-finite validation loss"));
                break;
            }
            Err(e) if is_divergence(&e) => {
                stop = StopReason::Diverged;
                message = Some(format!("epoch {epoch}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let s = smooth_validation(smoothed, metrics.loss, config.smoothing_factor);
        smoothed = Some(s);
        let record = EpochMetrics {
            epoch,
            lr: scheduler.lr,
            train_loss,
            val_loss: metrics.loss,
            smoothed_val_loss: s,
            val: metrics,
        };
        if let Some(w) = log.as_deref_mut() {
            serde_json::to_writer(&mut *w, &record)?;
            writeln!(w)?;
        }
        history.push(record);

        if best.as_ref().is_none_or(|(b, _, _)| metrics.loss < *b) {
            best = Some((
                metrics.loss,
                epoch,
                Checkpoint {
                    model: model.clone(),
                    optimizer: Some(state.clone()),
                },
            ));
        }
        scheduler.observe(s);
        if stopper.observe(s) {
            stop = StopReason::EarlyStopping;
            break;
        }
    }

    let last = Checkpoint {
        model: model.clone(),
        optimizer: Some(state),
    };
    let (best_epoch, best) = match best {
        Some((_, e, c)) => (e, c),
        None => (0, initial),
    };
    Ok(TrainOutcome {
        best,
        best_epoch,
        last,
        history,
        stop,
        message,
    })
}
