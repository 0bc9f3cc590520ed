use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::{ModelConfig, Readout};
use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Named parameter arrays in a fixed order.
///
/// Names mirror the block/field path (`message.0.filter.weight`). Arrays
/// flagged non-trainable are normalization buffers such as per-element
/// energy offsets; they are saved with the model but never optimized.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    trainable: Vec<bool>,
}

impl ModelParams {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn is_trainable(&self, index: usize) -> bool {
        self.trainable[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    /// Replace array `name`, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::Data(format!("unknown parameter `{name}`")))?;
        if self.tensors[i].shape() != value.shape() {
            return Err(Error::Shape {
                context: "ModelParams::set",
                left: self.tensors[i].shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        self.tensors[i] = value;
        Ok(())
    }

    /// Number of trainable scalars.
    pub fn count(&self) -> usize {
        self.tensors
            .iter()
            .zip(&self.trainable)
            .filter(|(_, &t)| t)
            .map(|(t, _)| t.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Put every array on `tape`; trainable arrays become differentiable leaves
    /// when `differentiable` is set, everything else constants.
    pub fn bind<'t>(&self, tape: &'t Tape, differentiable: bool) -> Vec<Var<'t>> {
        self.tensors
            .iter()
            .zip(&self.trainable)
            .map(|(t, &trainable)| {
                if differentiable && trainable {
                    tape.var(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    fn push(&mut self, name: String, tensor: Tensor, trainable: bool) -> usize {
        debug_assert!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        self.trainable.push(trainable);
        self.names.len() - 1
    }
}

/// Indices of a dense layer `x·W + b` (`W` is `[in, out]`).
#[derive(Clone, Copy, Debug)]
pub(crate) struct Linear {
    pub weight: usize,
    pub bias: Option<usize>,
}

impl Linear {
    pub fn apply<'t>(&self, p: &[Var<'t>], x: Var<'t>) -> Var<'t> {
        let y = x.matmul(p[self.weight]);
        match self.bias {
            Some(b) => {
                let rows = y.shape()[0];
                y.add(p[b].broadcast(0, rows))
            }
            None => y,
        }
    }

    /// Linear map over the feature axis of `[N, 3, F]` vector features.
    pub fn apply_vector<'t>(&self, p: &[Var<'t>], v: Var<'t>) -> Var<'t> {
        debug_assert!(self.bias.is_none(), "a bias on vector features breaks equivariance");
        let shape = v.shape();
        let (n, f) = (shape[0], shape[2]);
        let out = v.reshape(&[n * 3, f]).matmul(p[self.weight]);
        let width = out.shape()[1];
        out.reshape(&[n, 3, width])
    }
}

/// Two dense layers with SiLU in between.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

impl Mlp {
    pub fn apply<'t>(&self, p: &[Var<'t>], x: Var<'t>) -> Var<'t> {
        self.output.apply(p, self.hidden.apply(p, x).silu())
    }
}

#[derive(Clone, Debug)]
pub(crate) struct MessageLayout {
    pub phi: Mlp,
    pub filter: Linear,
}

#[derive(Clone, Debug)]
pub(crate) struct UpdateLayout {
    /// Absent in the invariant (no vector features) model.
    pub mix: Option<(Linear, Linear)>,
    pub net: Mlp,
}

#[derive(Clone, Debug)]
pub(crate) struct GatedLayout {
    pub w1: Linear,
    pub w2: Linear,
    pub net: Mlp,
    pub scalar_out: usize,
    pub vector_out: usize,
    pub activate_scalar: bool,
}

#[derive(Clone, Debug)]
pub(crate) enum HeadLayout {
    Energy {
        mlp: Mlp,
        scale: usize,
        offset: usize,
    },
    Dipole {
        blocks: [GatedLayout; 2],
        charges_only: bool,
    },
    Polarizability {
        blocks: [GatedLayout; 2],
    },
    SpatialExtent {
        mlp: Mlp,
    },
    Rank1 {
        blocks: [GatedLayout; 2],
        order: usize,
        rank: usize,
    },
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub embedding: usize,
    pub messages: Vec<MessageLayout>,
    pub updates: Vec<UpdateLayout>,
    pub heads: Vec<HeadLayout>,
}

struct Builder<'r, R: Rng + ?Sized> {
    params: ModelParams,
    rng: &'r mut R,
}

impl<R: Rng + ?Sized> Builder<'_, R> {
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, bias: bool, zero: bool) -> Linear {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        let data: Vec<f64> = if zero {
            vec![0.0; fan_in * fan_out]
        } else {
            (0..fan_in * fan_out).map(|_| dist.sample(self.rng)).collect()
        };
        let weight = self.params.push(
            format!("{name}.weight"),
            Tensor::from_parts(vec![fan_in, fan_out], data),
            true,
        );
        let bias = bias.then(|| {
            self.params
                .push(format!("{name}.bias"), Tensor::zeros(&[fan_out]), true)
        });
        Linear { weight, bias }
    }

    fn mlp(&mut self, name: &str, sizes: [usize; 3], zero_output: bool) -> Mlp {
        Mlp {
            hidden: self.linear(&format!("{name}.0"), sizes[0], sizes[1], true, false),
            output: self.linear(&format!("{name}.1"), sizes[1], sizes[2], true, zero_output),
        }
    }

    fn gated(&mut self, name: &str, fin: usize, sout: usize, vout: usize, activate: bool, zero: bool) -> GatedLayout {
        GatedLayout {
            w1: self.linear(&format!("{name}.W1"), fin, vout, false, false),
            w2: self.linear(&format!("{name}.W2"), fin, vout, false, false),
            net: self.mlp(&format!("{name}.net"), [fin + vout, fin, sout + vout], zero),
            scalar_out: sout,
            vector_out: vout,
            activate_scalar: activate,
        }
    }

    fn gated_pair(&mut self, name: &str, f: usize, sout: usize, vout: usize, zero: bool) -> [GatedLayout; 2] {
        let half = (f / 2).max(1);
        [
            self.gated(&format!("{name}.gate.0"), f, half, half, true, false),
            self.gated(&format!("{name}.gate.1"), half, sout, vout, false, zero),
        ]
    }
}

pub(crate) fn build<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> (ModelParams, Layout) {
    let f = config.features;
    let vector = !config.disable_vector_features;
    // The invariant model drops the vector splits entirely.
    let splits = if vector { 3 } else { 1 };
    let mut b = Builder {
        params: ModelParams::default(),
        rng,
    };

    let rows = config.max_z as usize + 1;
    let emb: Vec<f64> = (0..rows * f).map(|_| StandardNormal.sample(b.rng)).collect();
    let embedding = b
        .params
        .push("embedding".into(), Tensor::from_parts(vec![rows, f], emb), true);

    let mut messages = Vec::with_capacity(config.n_blocks);
    let mut updates = Vec::with_capacity(config.n_blocks);
    for k in 0..config.n_blocks {
        messages.push(MessageLayout {
            phi: b.mlp(&format!("message.{k}.phi"), [f, f, splits * f], false),
            filter: b.linear(&format!("message.{k}.filter"), config.n_rbf, splits * f, true, false),
        });
        let mix = vector.then(|| {
            (
                b.linear(&format!("update.{k}.U"), f, f, false, false),
                b.linear(&format!("update.{k}.V"), f, f, false, false),
            )
        });
        let net_in = if vector { 2 * f } else { f };
        updates.push(UpdateLayout {
            mix,
            net: b.mlp(&format!("update.{k}.a"), [net_in, f, splits * f], false),
        });
    }

    let zero = config.zero_init_heads;
    let half = (f / 2).max(1);
    let heads = config
        .readouts
        .iter()
        .map(|r| match *r {
            Readout::Energy => {
                let mlp = b.mlp("head.energy", [f, half, 1], zero);
                let scale = b
                    .params
                    .push("head.energy.scale".into(), Tensor::vector(vec![1.0]), false);
                let offset = b
                    .params
                    .push("head.energy.offset".into(), Tensor::zeros(&[rows]), false);
                HeadLayout::Energy { mlp, scale, offset }
            }
            Readout::Dipole { charges_only } => HeadLayout::Dipole {
                blocks: b.gated_pair("head.dipole", f, 1, 1, zero),
                charges_only,
            },
            Readout::Polarizability => HeadLayout::Polarizability {
                blocks: b.gated_pair("head.polarizability", f, 1, 1, zero),
            },
            Readout::SpatialExtent => HeadLayout::SpatialExtent {
                mlp: b.mlp("head.spatial_extent", [f, half, 1], zero),
            },
            Readout::Rank1 { order, rank } => HeadLayout::Rank1 {
                blocks: b.gated_pair("head.rank1", f, 1, order * rank, zero),
                order,
                rank,
            },
        })
        .collect();

    (
        b.params,
        Layout {
            embedding,
            messages,
            updates,
            heads,
        },
    )
}
