//! Property heads on top of the final atomwise features.

use super::layers::{gated_block, Graph};
use super::params::{GatedLayout, HeadLayout};
use crate::diff::{Tensor, Var};
use crate::geometry::{Mat3, Vec3};

/// Per-molecule outputs of every configured head.
#[derive(Default)]
pub(crate) struct HeadOutputs<'t> {
    /// `[M]`
    pub energy: Option<Var<'t>>,
    /// `[M, 3]`
    pub dipole: Option<Var<'t>>,
    /// `[M, 9]`, row-major 3×3.
    pub polarizability: Option<Var<'t>>,
    /// `[M]`
    pub spatial_extent: Option<Var<'t>>,
    /// `[M, 3^order]`
    pub rank1: Option<Var<'t>>,
}

fn two_blocks<'t>(
    p: &[Var<'t>],
    blocks: &[GatedLayout; 2],
    s: Var<'t>,
    v: Option<Var<'t>>,
    eps: f64,
) -> (Var<'t>, Option<Var<'t>>) {
    let (s1, v1) = gated_block(p, &blocks[0], s, v, eps);
    gated_block(p, &blocks[1], s1, v1, eps)
}

/// Vector channel `k` of `[N, 3, C]` as `[N, 3]`, or zeros.
fn channel<'t>(v: Option<Var<'t>>, k: usize, n: usize, s: Var<'t>) -> Var<'t> {
    match v {
        Some(v) => v.slice_last(k, 1).reshape(&[n, 3]),
        None => s.tape().constant(Tensor::zeros(&[n, 3])),
    }
}

/// Evaluate all heads. `centered` holds per-molecule mass-centered positions `[N, 3]`.
pub(crate) fn evaluate<'t>(
    p: &[Var<'t>],
    heads: &[HeadLayout],
    s: Var<'t>,
    v: Option<Var<'t>>,
    centered: Var<'t>,
    graph: &Graph,
    eps: f64,
) -> HeadOutputs<'t> {
    let n = graph.n_atoms;
    let m = graph.n_molecules;
    let mol = || graph.molecule.clone();
    let mut out = HeadOutputs::default();
    for head in heads {
        match head {
            HeadLayout::Energy { mlp, scale, offset } => {
                let e = mlp.apply(p, s).reshape(&[n]);
                let e = e
                    .mul(p[*scale].fill(&[n]))
                    .add(p[*offset].gather(graph.species.clone()));
                out.energy = Some(e.segment_sum(mol(), m));
            }
            HeadLayout::Dipole { blocks, charges_only } => {
                let (q, mu) = two_blocks(p, blocks, s, v, eps);
                let charge_term = q.reshape(&[n]).broadcast(1, 3).mul(centered);
                let atomwise = if *charges_only {
                    charge_term
                } else {
                    channel(mu, 0, n, s).add(charge_term)
                };
                out.dipole = Some(atomwise.segment_sum(mol(), m));
            }
            HeadLayout::Polarizability { blocks } => {
                let (a0, nu) = two_blocks(p, blocks, s, v, eps);
                let nu = channel(nu, 0, n, s);
                let eye: Vec<f64> = (0..n)
                    .flat_map(|_| [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
                    .collect();
                let eye = s.tape().constant(Tensor::from_parts(vec![n, 9], eye));
                let iso = a0.reshape(&[n]).broadcast(1, 9).mul(eye);
                let nu_r = nu.broadcast(2, 3).mul(centered.broadcast(1, 3));
                let r_nu = centered.broadcast(2, 3).mul(nu.broadcast(1, 3));
                let alpha = iso.add(nu_r.add(r_nu).reshape(&[n, 9]));
                out.polarizability = Some(alpha.segment_sum(mol(), m));
            }
            HeadLayout::SpatialExtent { mlp } => {
                let q = mlp.apply(p, s).reshape(&[n]);
                let r2 = centered.square().sum_axis(1);
                out.spatial_extent = Some(q.mul(r2).segment_sum(mol(), m));
            }
            HeadLayout::Rank1 { blocks, order, rank } => {
                let (lambda, nu) = two_blocks(p, blocks, s, v, eps);
                let mut total: Option<Var<'t>> = None;
                for k in 0..*rank {
                    let mut t = channel(nu, k * order, n, s);
                    let mut width = 3;
                    for slot in 1..*order {
                        let next = channel(nu, k * order + slot, n, s);
                        t = t.broadcast(2, 3).mul(next.broadcast(1, width)).reshape(&[n, width * 3]);
                        width *= 3;
                    }
                    total = Some(match total {
                        Some(acc) => acc.add(t),
                        None => t,
                    });
                }
                let total = total.expect("rank >= 1");
                let width = total.shape()[1];
                let scaled = lambda.reshape(&[n]).broadcast(1, width).mul(total);
                out.rank1 = Some(scaled.segment_sum(mol(), m));
            }
        }
    }
    out
}

/// `μ = Σ_i μ_atom,i + q_i r_i` for already-evaluated atomwise terms.
pub fn assemble_dipole(charges: &[f64], atomic_dipoles: &[Vec3], positions: &[Vec3]) -> Vec3 {
    let mut mu = [0.0; 3];
    for ((q, d), r) in charges.iter().zip(atomic_dipoles).zip(positions) {
        for k in 0..3 {
            mu[k] += d[k] + q * r[k];
        }
    }
    mu
}

/// `α = Σ_i α0_i I + ν_i ⊗ r_i + r_i ⊗ ν_i`.
pub fn assemble_polarizability(isotropic: &[f64], nu: &[Vec3], positions: &[Vec3]) -> Mat3 {
    let mut a = [[0.0; 3]; 3];
    for ((a0, v), r) in isotropic.iter().zip(nu).zip(positions) {
        for i in 0..3 {
            a[i][i] += a0;
            for j in 0..3 {
                a[i][j] += v[i] * r[j] + r[i] * v[j];
            }
        }
    }
    a
}

/// `⟨R²⟩ = Σ_i q_i |r_i|²`.
pub fn assemble_spatial_extent(charges: &[f64], positions: &[Vec3]) -> f64 {
    charges
        .iter()
        .zip(positions)
        .map(|(q, r)| q * (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]))
        .sum()
}
