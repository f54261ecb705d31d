//! Training objectives for synchronization without ground truth.
//!
//! The residual matrices compare estimated offsets against observed ones at
//! stored edges. From them:
//!
//! - the upset loss is the Frobenius norm of the combined residual divided
//!   by the edge count;
//! - the cycle-inconsistency loss reweights edges by a normalized confidence
//!   derived from the residuals, assigns every edge to its best-fitting
//!   angle set, and penalizes wrapped 3-cycle sums on each assigned
//!   subgraph.
//!
//! Every operation exists twice: a plain evaluator over `ndarray` values and
//! a tape builder (`*_var`) that records the identical arithmetic on an
//! [`autodiff::Tape`](crate::autodiff::Tape) for end-to-end training. The
//! edge-to-set assignment is discrete and is held fixed (detached) within a
//! forward pass; `min` branches follow the tape's first-branch tie rule.

use crate::angle::{mod2pi, AngleMatrix};
use crate::autodiff::{Tape, Var};
use crate::graph::{support_triangles, OffsetGraph};
use crate::{Error, Result};
use ndarray::Array2;
use std::collections::HashMap;
use std::rc::Rc;

/// Per-layer residual matrices `M⁽ˡ⁾` (entries in `[0, π]`, zero off-edges),
/// their elementwise minimum `M`, and the stored edge count `t`.
#[derive(Debug, Clone)]
pub struct ResidualSet {
    pub per_layer: Vec<Array2<f64>>,
    pub combined: Array2<f64>,
    pub edge_count: usize,
}

/// Normalized edge confidences `C̃` with `Σ A⊙C̃ = Σ A`.
#[derive(Debug, Clone)]
pub struct ConfidenceMatrix {
    pub values: Array2<f64>,
}

/// Symmetric map from stored edges to angle-set indices `1..=k`.
#[derive(Debug, Clone)]
pub struct GraphAssignment {
    /// 1-based set index per stored edge, parallel to `OffsetGraph::edges`.
    pub per_edge: Vec<u32>,
    map: HashMap<(usize, usize), u32>,
}

impl GraphAssignment {
    /// Assigned set of a stored edge, in either orientation.
    pub fn get(&self, i: usize, j: usize) -> Option<u32> {
        self.map.get(&(i.min(j), i.max(j))).copied()
    }
}

/// 0/1 mask of stored edge positions (stored direction only).
fn edge_mask(g: &OffsetGraph) -> Array2<f64> {
    let mut m = Array2::zeros((g.n(), g.n()));
    for e in g.edges() {
        m[(e.i, e.j)] = 1.0;
    }
    m
}

/// Residual matrices of the estimate `r` against the observed offsets.
pub fn residual(g: &OffsetGraph, r: &AngleMatrix) -> Result<ResidualSet> {
    if r.nrows() != g.n() {
        return Err(Error::ShapeMismatch(format!(
            "estimate has {} rows for a graph of {} nodes",
            r.nrows(),
            g.n()
        )));
    }
    let n = g.n();
    let k = r.ncols();
    let mut per_layer = Vec::with_capacity(k);
    for l in 0..k {
        let mut m = Array2::zeros((n, n));
        for e in g.edges() {
            let t = mod2pi(r.get(e.i, l) - r.get(e.j, l));
            let d = t - e.w;
            m[(e.i, e.j)] = mod2pi(d).min(mod2pi(-d));
        }
        per_layer.push(m);
    }
    let mut combined = per_layer[0].clone();
    for m in &per_layer[1..] {
        combined.zip_mut_with(m, |c, &v| *c = c.min(v));
    }
    Ok(ResidualSet {
        per_layer,
        combined,
        edge_count: g.edge_count(),
    })
}

/// `‖M‖_F / t`.
pub fn upset_loss(res: &ResidualSet) -> Result<f64> {
    if res.edge_count == 0 {
        return Err(Error::InvalidGraph("upset loss needs at least one edge".into()));
    }
    let norm = res.combined.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(norm / res.edge_count as f64)
}

/// Edge confidences `1 / (1 + M)` on stored edges, rescaled so the weighted
/// edge-mass `Σ A⊙C̃` equals the raw mass `Σ A`.
pub fn confidence(res: &ResidualSet, g: &OffsetGraph) -> Result<ConfidenceMatrix> {
    if g.edge_count() == 0 {
        return Err(Error::InvalidGraph("confidence needs at least one edge".into()));
    }
    let n = g.n();
    let mut unnorm = Array2::zeros((n, n));
    let mut sum_a = 0.0;
    let mut sum_ac = 0.0;
    for e in g.edges() {
        let c = 1.0 / (1.0 + res.combined[(e.i, e.j)]);
        unnorm[(e.i, e.j)] = c;
        sum_a += e.w;
        sum_ac += e.w * c;
    }
    if sum_ac == 0.0 {
        return Err(Error::Numerical("zero weighted degree; cannot normalize".into()));
    }
    let factor = sum_a / sum_ac;
    Ok(ConfidenceMatrix {
        values: unnorm.mapv(|c| c * factor),
    })
}

/// Assign every stored edge to the angle set with the smallest residual;
/// ties break toward the smallest index. Symmetric by construction.
pub fn assign_edges(g: &OffsetGraph, res: &ResidualSet) -> GraphAssignment {
    let mut per_edge = Vec::with_capacity(g.edge_count());
    let mut map = HashMap::with_capacity(g.edge_count());
    for e in g.edges() {
        let mut best_l = 0usize;
        let mut best = f64::INFINITY;
        for (l, m) in res.per_layer.iter().enumerate() {
            let v = m[(e.i, e.j)];
            if v < best {
                best = v;
                best_l = l;
            }
        }
        let label = best_l as u32 + 1;
        per_edge.push(label);
        map.insert((e.i.min(e.j), e.i.max(e.j)), label);
    }
    GraphAssignment { per_edge, map }
}

/// Reweighted skew offsets `Ã = (A⊙C̃ − (A⊙C̃)ᵀ) mod 2π`: both orientations
/// populated on every surviving edge, entries in `[0, 2π)`.
pub fn reweighted_skew(g: &OffsetGraph, conf: &ConfidenceMatrix) -> Array2<f64> {
    let n = g.n();
    let mut w = Array2::zeros((n, n));
    for e in g.edges() {
        w[(e.i, e.j)] = e.w * conf.values[(e.i, e.j)];
    }
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let d = w[(i, j)] - w[(j, i)];
            out[(i, j)] = if d == 0.0 { 0.0 } else { mod2pi(d) };
        }
    }
    out
}

/// Wrapped 3-cycle inconsistency of one subgraph matrix, averaged over its
/// triangles; `None` when the subgraph has no triangle.
fn layer_cycle_inconsistency(a: &Array2<f64>) -> Option<f64> {
    let tris = support_triangles(a);
    if tris.is_empty() {
        return None;
    }
    let total: f64 = tris
        .iter()
        .map(|&(i, j, q)| {
            let s = a[(i, j)] + a[(j, q)] + a[(q, i)];
            mod2pi(s).min(mod2pi(-s))
        })
        .sum();
    Some(total / tris.len() as f64)
}

/// Cycle-inconsistency loss: residual → confidence → assignment →
/// reweighted skew → per-set triangle penalty, averaged over the k sets
/// (sets without triangles contribute zero).
pub fn cycle_loss(g: &OffsetGraph, r: &AngleMatrix) -> Result<f64> {
    let res = residual(g, r)?;
    let conf = confidence(&res, g)?;
    let assignment = assign_edges(g, &res);
    let skew = reweighted_skew(g, &conf);
    let k = r.ncols();
    let mut total = 0.0;
    for l in 0..k {
        let masked = mask_layer(g, &skew, &assignment, l as u32 + 1);
        if let Some(v) = layer_cycle_inconsistency(&masked) {
            total += v;
        }
    }
    Ok(total / k as f64)
}

fn mask_layer(
    g: &OffsetGraph,
    skew: &Array2<f64>,
    assignment: &GraphAssignment,
    layer: u32,
) -> Array2<f64> {
    let n = g.n();
    let mut out = Array2::zeros((n, n));
    for e in g.edges() {
        if assignment.get(e.i, e.j) == Some(layer) {
            out[(e.i, e.j)] = skew[(e.i, e.j)];
            out[(e.j, e.i)] = skew[(e.j, e.i)];
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Tape builders: identical arithmetic, recorded for backpropagation.
// ---------------------------------------------------------------------------

/// Residual matrices on the tape. Returns the per-layer vars and the
/// combined minimum.
pub fn residual_vars<'t>(
    tape: &'t Tape,
    g: &OffsetGraph,
    r: Var<'t>,
) -> (Vec<Var<'t>>, Var<'t>) {
    let n = g.n();
    let k = tape.with_value(r, |v| v.shape()[1]);
    assert_eq!(tape.with_value(r, |v| v.shape()[0]), n, "estimate rows != node count");
    let a = tape.leaf(g.dense_adjacency().into_dyn());
    let mask = tape.leaf(edge_mask(g).into_dyn());
    let ones_row = tape.leaf(Array2::<f64>::ones((1, n)).into_dyn());
    let ones_col = tape.leaf(Array2::<f64>::ones((n, 1)).into_dyn());

    let mut per_layer = Vec::with_capacity(k);
    for l in 0..k {
        let col = r.slice_cols(l, l + 1); // n x 1
        let ri = col.matmul(ones_row); // r_i broadcast over columns
        let rj = ones_col.matmul(col.t()); // r_j broadcast over rows
        let t = ri.sub(rj).mod2pi();
        let d = t.sub(a);
        let m = d.mod2pi().min(d.neg().mod2pi()).mul(mask);
        per_layer.push(m);
    }
    let mut combined = per_layer[0];
    for m in &per_layer[1..] {
        combined = combined.min(*m);
    }
    (per_layer, combined)
}

/// Upset loss on the tape: `‖M‖_F / t`.
pub fn upset_loss_var<'t>(tape: &'t Tape, g: &OffsetGraph, r: Var<'t>) -> Result<Var<'t>> {
    if g.edge_count() == 0 {
        return Err(Error::InvalidGraph("upset loss needs at least one edge".into()));
    }
    let (_, combined) = residual_vars(tape, g, r);
    Ok(combined
        .frobenius_norm()
        .scalar_mul(1.0 / g.edge_count() as f64))
}

/// Cycle-inconsistency loss on the tape. The gradient flows through the
/// residuals, the confidence values, the selected `min` branches and the
/// gathered triangle sums; the edge-to-set assignment and the triangle
/// enumeration are recomputed from the current forward values but carry no
/// gradient.
pub fn cycle_loss_var<'t>(tape: &'t Tape, g: &OffsetGraph, r: Var<'t>) -> Result<Var<'t>> {
    if g.edge_count() == 0 {
        return Err(Error::InvalidGraph("cycle loss needs at least one edge".into()));
    }
    let n = g.n();
    let k = tape.with_value(r, |v| v.shape()[1]);
    let (per_layer, combined) = residual_vars(tape, g, r);

    let mask = tape.leaf(edge_mask(g).into_dyn());
    let a = tape.leaf(g.dense_adjacency().into_dyn());
    let sum_a: f64 = g.edges().iter().map(|e| e.w).sum();

    // normalized confidence
    let c_unnorm = combined.add_const(1.0).recip().mul(mask);
    let denom = a.mul(c_unnorm).sum();
    let factor = denom.recip().scalar_mul(sum_a);
    let c_norm = c_unnorm.mul(factor);

    // reweighted skew with both orientations
    let w = a.mul(c_norm);
    let skew = w.sub(w.t()).mod2pi();

    // discrete assignment from the detached residual values
    let res_values = ResidualSet {
        per_layer: per_layer
            .iter()
            .map(|&m| {
                tape.with_value(m, |v| {
                    v.to_owned().into_dimensionality::<ndarray::Ix2>().unwrap()
                })
            })
            .collect(),
        combined: tape.with_value(combined, |v| {
            v.to_owned().into_dimensionality::<ndarray::Ix2>().unwrap()
        }),
        edge_count: g.edge_count(),
    };
    let assignment = assign_edges(g, &res_values);

    let mut total: Option<Var<'t>> = None;
    for l in 0..k {
        // symmetric 0/1 mask of the edges assigned to this set
        let mut mask_l = Array2::zeros((n, n));
        for e in g.edges() {
            if assignment.get(e.i, e.j) == Some(l as u32 + 1) {
                mask_l[(e.i, e.j)] = 1.0;
                mask_l[(e.j, e.i)] = 1.0;
            }
        }
        let layer_skew = skew.mul(tape.leaf(mask_l.into_dyn()));
        // triangle set from the current forward values
        let tris = tape.with_value(layer_skew, |v| {
            support_triangles(&v.to_owned().into_dimensionality::<ndarray::Ix2>().unwrap())
        });
        if tris.is_empty() {
            continue;
        }
        let ij = Rc::new(tris.iter().map(|&(i, j, _)| (i, j)).collect::<Vec<_>>());
        let jq = Rc::new(tris.iter().map(|&(_, j, q)| (j, q)).collect::<Vec<_>>());
        let qi = Rc::new(tris.iter().map(|&(i, _, q)| (q, i)).collect::<Vec<_>>());
        let s = layer_skew
            .gather(ij)
            .add(layer_skew.gather(jq))
            .add(layer_skew.gather(qi));
        let penalty = s.mod2pi().min(s.neg().mod2pi()).mean();
        total = Some(match total {
            Some(acc) => acc.add(penalty),
            None => penalty,
        });
    }
    let total = total.unwrap_or_else(|| tape.scalar(0.0));
    Ok(total.scalar_mul(1.0 / k as f64))
}

/// Convenience: residual matrices as a 1-d Var of per-edge values is not
/// needed; expose the plain upset value for a given estimate directly.
pub fn upset_loss_of(g: &OffsetGraph, r: &AngleMatrix) -> Result<f64> {
    upset_loss(&residual(g, r)?)
}
