//! Offset graphs and their matrix views.
//!
//! An [`OffsetGraph`] stores noisy pairwise angle offsets as a directed
//! weighted graph with at most one stored direction per node pair. The
//! matrix views derived from it (skew, Hermitian, row-normalized) are what
//! the solvers actually consume.

use crate::angle::mod2pi;
use crate::{Error, Result};
use ndarray::Array2;
use num_complex::Complex64;
use std::f64::consts::TAU;

/// A single stored offset measurement `w ≈ (θ_i − θ_j) mod 2π`.
///
/// `layer` carries the generator's hidden assignment for multi-set
/// synchronization benchmarks (`Some(l)` with `l` in `1..=k`); it is never
/// consulted by any solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub w: f64,
    pub layer: Option<u32>,
}

impl Edge {
    pub fn new(i: usize, j: usize, w: f64) -> Self {
        Edge {
            i,
            j,
            w,
            layer: None,
        }
    }
}

/// Directed weighted graph of pairwise angle offsets in `(0, 2π)`.
///
/// Invariants enforced at construction:
/// - no self-loops;
/// - at most one stored direction per unordered pair;
/// - weights in `[0, 2π)`, with exact-zero offsets dropped (a zero entry is
///   indistinguishable from "no measurement" in the adjacency encoding).
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetGraph {
    n: usize,
    edges: Vec<Edge>,
}

impl OffsetGraph {
    pub fn new(n: usize, edges: Vec<Edge>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        let mut kept = Vec::with_capacity(edges.len());
        for e in edges {
            if e.i == e.j {
                return Err(Error::InvalidGraph(format!("self-loop at node {}", e.i)));
            }
            if e.i >= n || e.j >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) out of range for n = {n}",
                    e.i, e.j
                )));
            }
            if !(0.0..TAU).contains(&e.w) {
                return Err(Error::InvalidGraph(format!(
                    "offset {} outside [0, 2*pi)",
                    e.w
                )));
            }
            let pair = (e.i.min(e.j), e.i.max(e.j));
            if !seen.insert(pair) {
                return Err(Error::InvalidGraph(format!(
                    "pair {{{}, {}}} stored more than once",
                    pair.0, pair.1
                )));
            }
            if e.w == 0.0 {
                continue; // zero offset == absent measurement
            }
            kept.push(e);
        }
        Ok(OffsetGraph { n, edges: kept })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Dense adjacency with the stored direction only; zeros elsewhere.
    pub fn dense_adjacency(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for e in &self.edges {
            a[(e.i, e.j)] = e.w;
        }
        a
    }

    /// Undirected neighbor lists of the measurement support.
    pub fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for e in &self.edges {
            adj[e.i].push(e.j);
            adj[e.j].push(e.i);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Weak connectivity of the measurement support.
    pub fn is_weakly_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let adj = self.neighbor_lists();
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.n
    }

    /// Connected components of the measurement support, each as a sorted node list.
    pub fn weak_components(&self) -> Vec<Vec<usize>> {
        let adj = self.neighbor_lists();
        let mut seen = vec![false; self.n];
        let mut components = Vec::new();
        for start in 0..self.n {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut stack = vec![start];
            while let Some(u) = stack.pop() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                        stack.push(v);
                    }
                }
            }
            comp.sort_unstable();
            components.push(comp);
        }
        components
    }
}

/// Real skew-symmetric storage of the offsets: `+w` on the stored direction,
/// `−w` on the implied reverse, before any wrapping.
#[derive(Debug, Clone)]
pub struct SkewOffsets {
    matrix: Array2<f64>,
}

impl SkewOffsets {
    pub fn from_graph(g: &OffsetGraph) -> Self {
        let mut m = Array2::zeros((g.n(), g.n()));
        for e in g.edges() {
            m[(e.i, e.j)] = e.w;
            m[(e.j, e.i)] = -e.w;
        }
        SkewOffsets { matrix: m }
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    /// Wrapped view: both orientations reduced to `[0, 2π)`.
    pub fn wrapped(&self) -> Array2<f64> {
        self.matrix.mapv(|v| if v == 0.0 { 0.0 } else { mod2pi(v) })
    }
}

/// Dense complex embedding of the offsets: unit-modulus entries on edges,
/// zeros elsewhere, exactly conjugate-symmetric with zero diagonal.
#[derive(Debug, Clone)]
pub struct HermitianObservation {
    matrix: Array2<Complex64>,
}

impl HermitianObservation {
    pub fn matrix(&self) -> &Array2<Complex64> {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// Real and imaginary parts as separate dense matrices.
    pub fn split_re_im(&self) -> (Array2<f64>, Array2<f64>) {
        (self.matrix.mapv(|z| z.re), self.matrix.mapv(|z| z.im))
    }
}

/// Unit-modulus complex embedding of the stored offsets.
///
/// The stored graph keeps one direction per pair; the reverse entry is
/// restored explicitly as the conjugate so that the result is exactly
/// Hermitian (the implied reverse offset is `−w mod 2π`, and
/// `e^{ι(−w mod 2π)} = conj(e^{ιw})`).
pub fn build_hermitian(g: &OffsetGraph) -> HermitianObservation {
    let n = g.n();
    let mut m = Array2::from_elem((n, n), Complex64::new(0.0, 0.0));
    for e in g.edges() {
        let z = Complex64::from_polar(1.0, e.w);
        m[(e.i, e.j)] = z;
        m[(e.j, e.i)] = z.conj();
    }
    HermitianObservation { matrix: m }
}

/// Row-normalized source/target propagation matrices with a `τ` self-loop.
#[derive(Debug, Clone)]
pub struct NormalizedPair {
    pub source: Array2<f64>,
    pub target: Array2<f64>,
    pub tau: f64,
}

/// Row-normalize `A + τI` (source) and `Aᵀ + τI` (target). Every row sums to
/// one; `τ > 0` keeps the degree matrix invertible even for isolated nodes.
pub fn row_normalize(g: &OffsetGraph, tau: f64) -> Result<NormalizedPair> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "self-loop weight must be positive, got {tau}"
        )));
    }
    let n = g.n();
    let a = g.dense_adjacency();
    let normalize = |m: Array2<f64>| -> Array2<f64> {
        let mut out = m;
        for i in 0..n {
            out[(i, i)] += tau;
        }
        for mut row in out.rows_mut() {
            let s: f64 = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        out
    };
    Ok(NormalizedPair {
        source: normalize(a.clone()),
        target: normalize(a.t().to_owned()),
        tau,
    })
}

/// Enumerate directed 3-cycles on the stored entries: triples `(i, j, q)`
/// with all of `i→j`, `j→q`, `q→i` stored, once per cycle (smallest node
/// listed first).
pub fn triangles(g: &OffsetGraph) -> Vec<(usize, usize, usize)> {
    let n = g.n();
    let mut out_adj = vec![Vec::new(); n];
    for e in g.edges() {
        out_adj[e.i].push(e.j);
    }
    for list in &mut out_adj {
        list.sort_unstable();
    }
    let has_edge = |u: usize, v: usize| out_adj[u].binary_search(&v).is_ok();

    let mut cycles = Vec::new();
    for i in 0..n {
        for &j in &out_adj[i] {
            for &q in &out_adj[j] {
                if q != i && i < j.min(q) && has_edge(q, i) {
                    cycles.push((i, j, q));
                }
            }
        }
    }
    cycles
}

/// Unordered triangles `{i < j < q}` of an arbitrary symmetric-support
/// matrix (entries nonzero in either orientation count as present).
pub fn support_triangles(m: &Array2<f64>) -> Vec<(usize, usize, usize)> {
    let n = m.nrows();
    let words = n.div_ceil(64);
    let mut bits = vec![vec![0u64; words]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j && (m[(i, j)] != 0.0 || m[(j, i)] != 0.0) {
                bits[i][j / 64] |= 1 << (j % 64);
            }
        }
    }
    let mut tris = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if bits[i][j / 64] & (1 << (j % 64)) == 0 {
                continue;
            }
            for (w, (&wa, &wb)) in bits[i].iter().zip(bits[j].iter()).enumerate() {
                let mut inter = wa & wb;
                // only q > j
                let base = w * 64;
                while inter != 0 {
                    let b = inter.trailing_zeros() as usize;
                    inter &= inter - 1;
                    let q = base + b;
                    if q > j {
                        tris.push((i, j, q));
                    }
                }
            }
        }
    }
    tris
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn graph(n: usize, edges: &[(usize, usize, f64)]) -> OffsetGraph {
        OffsetGraph::new(
            n,
            edges.iter().map(|&(i, j, w)| Edge::new(i, j, w)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn rejects_self_loop_and_double_pair() {
        assert!(OffsetGraph::new(3, vec![Edge::new(1, 1, 1.0)]).is_err());
        assert!(
            OffsetGraph::new(3, vec![Edge::new(0, 1, 1.0), Edge::new(1, 0, 2.0)]).is_err()
        );
    }

    #[test]
    fn drops_zero_offsets() {
        let g = graph(3, &[(0, 1, 0.0), (1, 2, 1.5)]);
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn hermitian_entries() {
        // e^{i*pi/2} = i
        let g = graph(3, &[(1, 2, FRAC_PI_2)]);
        let h = build_hermitian(&g);
        let m = h.matrix();
        assert!((m[(1, 2)] - Complex64::new(0.0, 1.0)).norm() < 1e-15);
        assert!((m[(2, 1)] - Complex64::new(0.0, -1.0)).norm() < 1e-15);
        assert_eq!(m[(0, 1)], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn hermitian_is_exactly_conjugate_symmetric() {
        let g = graph(4, &[(0, 1, 0.3), (2, 1, 5.1), (3, 0, PI), (2, 3, 2.2)]);
        let m = build_hermitian(&g);
        let h = m.matrix();
        for i in 0..4 {
            assert_eq!(h[(i, i)], Complex64::new(0.0, 0.0));
            for j in 0..4 {
                // bitwise equality, not approximate
                assert_eq!(h[(i, j)].re, h[(j, i)].re);
                assert_eq!(h[(i, j)].im, -h[(j, i)].im);
                assert!(h[(i, j)].norm() == 0.0 || (h[(i, j)].norm() - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn row_normalize_empty_graph_is_identity() {
        let g = graph(2, &[]);
        let p = row_normalize(&g, 0.5).unwrap();
        assert_eq!(p.source, Array2::eye(2));
        assert_eq!(p.target, Array2::eye(2));
    }

    #[test]
    fn row_normalize_single_edge() {
        let w = 1.3;
        let g = graph(2, &[(0, 1, w)]);
        let p = row_normalize(&g, 0.5).unwrap();
        assert!((p.source[(0, 0)] - 0.5 / (0.5 + w)).abs() < 1e-15);
        assert!((p.source[(0, 1)] - w / (0.5 + w)).abs() < 1e-15);
        // target row 0 has no in-edge weight
        assert!((p.target[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn row_normalize_rejects_nonpositive_tau() {
        let g = graph(2, &[(0, 1, 1.0)]);
        assert!(row_normalize(&g, 0.0).is_err());
        assert!(row_normalize(&g, -1.0).is_err());
    }

    #[test]
    fn rows_sum_to_one() {
        let g = graph(
            5,
            &[(0, 1, 0.4), (1, 2, 2.0), (3, 2, 1.0), (4, 0, 6.0), (2, 4, 0.7)],
        );
        let p = row_normalize(&g, 0.5).unwrap();
        for row in p.source.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        for row in p.target.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert!(p.source.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn skew_view_cancels_on_edges() {
        let g = graph(4, &[(0, 1, 0.9), (2, 1, 4.0), (3, 2, 1.1)]);
        let skew = SkewOffsets::from_graph(&g);
        let s = skew.matrix();
        for e in g.edges() {
            assert_eq!(s[(e.i, e.j)] + s[(e.j, e.i)], 0.0);
        }
        let v = skew.wrapped();
        for e in g.edges() {
            let r = mod2pi(v[(e.i, e.j)] + v[(e.j, e.i)]);
            assert!(r.min(TAU - r) < 1e-12);
        }
    }

    #[test]
    fn triangle_on_cyclic_directions_only() {
        let cyc = graph(3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)]);
        assert_eq!(triangles(&cyc), vec![(0, 1, 2)]);

        // (0,1),(1,2),(0,2): no stored edge 2 -> 0, so no directed cycle
        let acyc = graph(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]);
        assert!(triangles(&acyc).is_empty());
    }

    #[test]
    fn triangles_match_brute_force_on_dense_graph() {
        // all pairs stored with the lower->higher direction plus a few flipped
        let mut edges = Vec::new();
        for i in 0..5 {
            for j in (i + 1)..5 {
                if (i + j) % 3 == 0 {
                    edges.push((j, i, 1.0));
                } else {
                    edges.push((i, j, 1.0));
                }
            }
        }
        let g = graph(5, &edges);
        let a = g.dense_adjacency();
        let mut brute = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                for q in 0..5 {
                    if i < j.min(q) && a[(i, j)] > 0.0 && a[(j, q)] > 0.0 && a[(q, i)] > 0.0 {
                        brute.push((i, j, q));
                    }
                }
            }
        }
        let mut found = triangles(&g);
        found.sort_unstable();
        brute.sort_unstable();
        assert_eq!(found, brute);
    }

    #[test]
    fn support_triangles_count_complete_graph() {
        let mut m = Array2::zeros((6, 6));
        for i in 0..6 {
            for j in 0..6 {
                if i < j {
                    m[(i, j)] = 1.0;
                }
            }
        }
        // C(6,3) = 20
        assert_eq!(support_triangles(&m).len(), 20);
    }
}
