//! Message, update and gated equivariant blocks on the tape.
//!
//! Vector features are stored `[N, 3, F]`: spatial axis in the middle so a
//! feature-mixing matrix applies to the `[3N, F]` view as one product.

use std::f64::consts::PI;
use std::rc::Rc;

use super::params::{GatedLayout, MessageLayout, UpdateLayout};
use crate::diff::{concat_last, safe_norm, Index, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::MIN_DISTANCE;

/// `sin(nπd/r_cut)/d` for `n = 1..=n_rbf`, with the `d → 0` limit `nπ/r_cut`.
pub fn radial_basis(d: f64, r_cut: f64, n_rbf: usize) -> Result<Vec<f64>> {
    if d > r_cut || d < 0.0 {
        return Err(Error::Contract(format!("distance {d} outside [0, {r_cut}]")));
    }
    Ok((1..=n_rbf)
        .map(|n| {
            let k = n as f64 * PI / r_cut;
            if d < MIN_DISTANCE {
                k
            } else {
                (k * d).sin() / d
            }
        })
        .collect())
}

/// `½(cos(πd/r_cut) + 1)` on `[0, r_cut]`.
pub fn cosine_cutoff(d: f64, r_cut: f64) -> f64 {
    0.5 * ((PI * d / r_cut).cos() + 1.0)
}

/// Per-evaluation graph built from a batch and its neighbor list.
pub(crate) struct Graph {
    pub n_atoms: usize,
    pub first: Index,
    pub second: Index,
    pub molecule: Index,
    pub n_molecules: usize,
    pub species: Index,
}

/// Distances, unit vectors, radial basis and cutoff of every pair.
pub(crate) struct PairFeatures<'t> {
    pub unit: Var<'t>,
    pub rbf: Var<'t>,
    pub cutoff: Var<'t>,
}

pub(crate) fn pair_features<'t>(pos: Var<'t>, graph: &Graph, r_cut: f64, n_rbf: usize) -> PairFeatures<'t> {
    let tape = pos.tape();
    let r = pos.gather(graph.second.clone()).sub(pos.gather(graph.first.clone()));
    let d = r.square().sum_axis(1).sqrt();
    let inv = d.recip();
    let unit = r.mul(inv.broadcast(1, 3));
    let pairs = graph.first.len();
    let freq: Vec<f64> = (0..pairs)
        .flat_map(|_| (1..=n_rbf).map(|n| n as f64 * PI / r_cut))
        .collect();
    let freq = tape.constant(Tensor::from_parts(vec![pairs, n_rbf], freq));
    let rbf = d.broadcast(1, n_rbf).mul(freq).sin().mul(inv.broadcast(1, n_rbf));
    let cutoff = d.scale(PI / r_cut).cos().offset(1.0).scale(0.5);
    PairFeatures { unit, rbf, cutoff }
}

/// Which terms of the message and update blocks are active.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Terms {
    pub vector_features: bool,
    pub vector_propagation: bool,
    pub scalar_product: bool,
    pub norm_eps: f64,
}

/// Residuals of one message block; `v = None` means exactly zero vectors.
pub(crate) fn message_block<'t>(
    p: &[Var<'t>],
    layout: &MessageLayout,
    s: Var<'t>,
    v: Option<Var<'t>>,
    pairs: &PairFeatures<'t>,
    graph: &Graph,
    terms: Terms,
) -> (Var<'t>, Option<Var<'t>>) {
    let f = s.shape()[1];
    let n = graph.n_atoms;
    let splits = if terms.vector_features { 3 } else { 1 };
    let filter = layout
        .filter
        .apply(p, pairs.rbf)
        .mul(pairs.cutoff.broadcast(1, splits * f));
    let x = layout.phi.apply(p, s).gather(graph.second.clone()).mul(filter);

    if !terms.vector_features {
        return (x.segment_sum(graph.first.clone(), n), None);
    }
    let ds = x.slice_last(0, f).segment_sum(graph.first.clone(), n);
    let x_vv = x.slice_last(f, f);
    let x_vs = x.slice_last(2 * f, f);
    let directional = x_vs.broadcast(1, 3).mul(pairs.unit.broadcast(2, f));
    let per_pair = match v {
        Some(v) if terms.vector_propagation => v
            .gather(graph.second.clone())
            .mul(x_vv.broadcast(1, 3))
            .add(directional),
        _ => directional,
    };
    (ds, Some(per_pair.segment_sum(graph.first.clone(), n)))
}

/// Atomwise residuals of one update block.
pub(crate) fn update_block<'t>(
    p: &[Var<'t>],
    layout: &UpdateLayout,
    s: Var<'t>,
    v: Option<Var<'t>>,
    terms: Terms,
) -> (Var<'t>, Option<Var<'t>>) {
    let f = s.shape()[1];
    let Some((u, w)) = layout.mix else {
        return (layout.net.apply(p, s), None);
    };
    let tape = s.tape();
    let n = s.shape()[0];
    let v = v.unwrap_or_else(|| tape.constant(Tensor::zeros(&[n, 3, f])));
    let uv = u.apply_vector(p, v);
    let vv = w.apply_vector(p, v);
    let norm = safe_norm(vv, 1, terms.norm_eps);
    let a = layout.net.apply(p, concat_last(&[s, norm]));
    let a_vv = a.slice_last(0, f);
    let a_sv = a.slice_last(f, f);
    let a_ss = a.slice_last(2 * f, f);
    let dv = uv.mul(a_vv.broadcast(1, 3));
    let ds = if terms.scalar_product {
        a_ss.add(a_sv.mul(uv.mul(vv).sum_axis(1)))
    } else {
        a_ss
    };
    (ds, Some(dv))
}

/// Gated equivariant block; returns scalar `[N, sout]` and vector `[N, 3, vout]` outputs.
pub(crate) fn gated_block<'t>(
    p: &[Var<'t>],
    layout: &GatedLayout,
    s: Var<'t>,
    v: Option<Var<'t>>,
    norm_eps: f64,
) -> (Var<'t>, Option<Var<'t>>) {
    let tape = s.tape();
    let n = s.shape()[0];
    let mixed = v.map(|v| (layout.w1.apply_vector(p, v), layout.w2.apply_vector(p, v)));
    let norm = match mixed {
        Some((_, w2v)) => safe_norm(w2v, 1, norm_eps),
        None => tape.constant(Tensor::zeros(&[n, layout.vector_out])),
    };
    let h = layout.net.apply(p, concat_last(&[s, norm]));
    let mut s_out = h.slice_last(0, layout.scalar_out);
    if layout.activate_scalar {
        s_out = s_out.silu();
    }
    let v_out = mixed.map(|(w1v, _)| {
        let gate = h.slice_last(layout.scalar_out, layout.vector_out);
        w1v.mul(gate.broadcast(1, 3))
    });
    (s_out, v_out)
}

pub(crate) fn index(values: Vec<usize>) -> Index {
    Rc::from(values)
}
