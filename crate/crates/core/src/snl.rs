//! Sensor-network localization over rotations.
//!
//! A synthetic point cloud is cut into overlapping patches (each node plus
//! its nearest neighbors), every patch is independently noised and rotated,
//! and pairwise rotations are re-estimated by Procrustes alignment on patch
//! overlaps. Synchronizing the resulting offset graph, shifting out the
//! global rotation, rotating the patches back and averaging per node
//! recovers the cloud; quality is scored by the average normalized error.

use crate::angle::{mod2pi, AngleMatrix};
use crate::eval::ane;
use crate::graph::{Edge, OffsetGraph};
use crate::synth::{gen_ground_truth_with, stream_rng, GroundTruthOption};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub type PointCloud = Vec<[f64; 2]>;

/// RNG sub-streams for the localization pipeline (disjoint from the
/// synthetic-benchmark streams).
pub mod streams {
    pub const CLOUD: u64 = 50;
    pub const ROTATIONS: u64 = 51;
    pub const COORD_NOISE: u64 = 52;
    pub const EDGE_DIRECTION: u64 = 53;
}

/// Point-cloud family for the synthetic localization task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudShape {
    UniformSquare,
    /// Six Gaussian blobs with uniformly placed centers, mimicking uneven
    /// density.
    GaussianMixture,
}

impl std::str::FromStr for CloudShape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" | "uniform-square" => Ok(CloudShape::UniformSquare),
            "mixture" | "gaussian-mixture" => Ok(CloudShape::GaussianMixture),
            other => Err(Error::InvalidConfig(format!(
                "unknown cloud shape '{other}' (expected uniform|mixture)"
            ))),
        }
    }
}

const MIXTURE_COMPONENTS: usize = 6;
const MIXTURE_STD: f64 = 0.08;

/// Deterministic synthetic cloud.
pub fn synth_cloud(shape: CloudShape, n: usize, seed: u64) -> PointCloud {
    let mut rng = stream_rng(seed, streams::CLOUD);
    match shape {
        CloudShape::UniformSquare => (0..n)
            .map(|_| [rng.gen::<f64>(), rng.gen::<f64>()])
            .collect(),
        CloudShape::GaussianMixture => {
            let centers: Vec<[f64; 2]> = (0..MIXTURE_COMPONENTS)
                .map(|_| [0.1 + 0.8 * rng.gen::<f64>(), 0.1 + 0.8 * rng.gen::<f64>()])
                .collect();
            let normal = Normal::new(0.0, MIXTURE_STD).unwrap();
            (0..n)
                .map(|_| {
                    let c = rng.gen_range(0..MIXTURE_COMPONENTS);
                    [
                        centers[c][0] + normal.sample(&mut rng),
                        centers[c][1] + normal.sample(&mut rng),
                    ]
                })
                .collect()
        }
    }
}

/// One local view: a center node, its members (sorted), their local
/// coordinates (noisy, rotated), and the hidden rotation applied to it.
#[derive(Debug, Clone)]
pub struct Patch {
    pub center: usize,
    pub members: Vec<usize>,
    pub coords: Vec<[f64; 2]>,
    pub rotation: f64,
}

impl Patch {
    fn centroid(&self) -> [f64; 2] {
        let n = self.coords.len() as f64;
        let mut c = [0.0, 0.0];
        for p in &self.coords {
            c[0] += p[0] / n;
            c[1] += p[1] / n;
        }
        c
    }
}

/// One patch per node: the node plus its `k_patch` nearest neighbors
/// (Euclidean, ties broken by index).
pub fn build_patches(cloud: &PointCloud, k_patch: usize) -> Result<Vec<Patch>> {
    let n = cloud.len();
    if n <= k_patch {
        return Err(Error::InvalidConfig(format!(
            "need more than k_patch = {k_patch} points, got {n}"
        )));
    }
    let mut patches = Vec::with_capacity(n);
    for center in 0..n {
        let mut order: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != center)
            .map(|j| {
                let dx = cloud[center][0] - cloud[j][0];
                let dy = cloud[center][1] - cloud[j][1];
                (dx * dx + dy * dy, j)
            })
            .collect();
        order.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut members: Vec<usize> = order[..k_patch].iter().map(|&(_, j)| j).collect();
        members.push(center);
        members.sort_unstable();
        let coords = members.iter().map(|&j| cloud[j]).collect();
        patches.push(Patch {
            center,
            members,
            coords,
            rotation: 0.0,
        });
    }
    Ok(patches)
}

/// Per-axis population standard deviation of a cloud.
fn axis_std(cloud: &PointCloud) -> [f64; 2] {
    let n = cloud.len() as f64;
    let mean = cloud.iter().fold([0.0, 0.0], |m, p| {
        [m[0] + p[0] / n, m[1] + p[1] / n]
    });
    let var = cloud.iter().fold([0.0, 0.0], |v, p| {
        [
            v[0] + (p[0] - mean[0]).powi(2) / n,
            v[1] + (p[1] - mean[1]).powi(2) / n,
        ]
    });
    [var[0].sqrt(), var[1].sqrt()]
}

/// Noise every patch copy independently (per-axis std `η · std(axis)`), then
/// rotate each patch about its own centroid by its ground-truth angle.
pub fn perturb_and_rotate(
    patches: &[Patch],
    cloud: &PointCloud,
    eta: f64,
    angles: &[f64],
    seed: u64,
) -> Vec<Patch> {
    assert_eq!(patches.len(), angles.len(), "one rotation per patch");
    let std = axis_std(cloud);
    let mut rng = stream_rng(seed, streams::COORD_NOISE);
    let nx = Normal::new(0.0, (eta * std[0]).max(0.0)).unwrap();
    let ny = Normal::new(0.0, (eta * std[1]).max(0.0)).unwrap();
    patches
        .iter()
        .zip(angles)
        .map(|(patch, &angle)| {
            let mut coords: Vec<[f64; 2]> = patch
                .coords
                .iter()
                .map(|p| {
                    if eta == 0.0 {
                        *p
                    } else {
                        [p[0] + nx.sample(&mut rng), p[1] + ny.sample(&mut rng)]
                    }
                })
                .collect();
            let mut rotated = Patch {
                center: patch.center,
                members: patch.members.clone(),
                coords: coords.clone(),
                rotation: angle,
            };
            let c = rotated.centroid();
            let (s, co) = angle.sin_cos();
            for p in &mut coords {
                let dx = p[0] - c[0];
                let dy = p[1] - c[1];
                *p = [c[0] + co * dx - s * dy, c[1] + s * dx + co * dy];
            }
            rotated.coords = coords;
            rotated
        })
        .collect()
}

/// Rotation-only Procrustes: the angle θ minimizing `‖p − R(θ)q‖²` after
/// centering both sets (the rotation carrying `q` onto `p`).
pub fn procrustes_angle(p: &[[f64; 2]], q: &[[f64; 2]]) -> Result<f64> {
    if p.len() != q.len() || p.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "procrustes needs two aligned sets of >= 2 points, got {} and {}",
            p.len(),
            q.len()
        )));
    }
    let n = p.len() as f64;
    let centroid = |pts: &[[f64; 2]]| {
        pts.iter().fold([0.0, 0.0], |c, v| {
            [c[0] + v[0] / n, c[1] + v[1] / n]
        })
    };
    let cp = centroid(p);
    let cq = centroid(q);
    let mut dot = 0.0;
    let mut cross = 0.0;
    let mut scale = 0.0;
    for (a, b) in p.iter().zip(q) {
        let pa = [a[0] - cp[0], a[1] - cp[1]];
        let qb = [b[0] - cq[0], b[1] - cq[1]];
        dot += pa[0] * qb[0] + pa[1] * qb[1];
        cross += pa[1] * qb[0] - pa[0] * qb[1];
        scale += pa[0] * pa[0] + pa[1] * pa[1] + qb[0] * qb[0] + qb[1] * qb[1];
    }
    if dot.hypot(cross) < 1e-12 * scale.max(1e-300) {
        return Err(Error::Degenerate(
            "coincident points leave the rotation unconstrained".into(),
        ));
    }
    Ok(mod2pi(cross.atan2(dot)))
}

/// Offset graph over patches: one edge per patch pair with at least
/// `k_thres` shared members, weighted by the Procrustes rotation between
/// their copies of the overlap, stored in a seeded random direction.
pub fn patch_measurement_graph(
    patches: &[Patch],
    k_thres: usize,
    seed: u64,
) -> Result<OffsetGraph> {
    let m = patches.len();
    let mut rng = stream_rng(seed, streams::EDGE_DIRECTION);
    let mut edges = Vec::new();
    for a in 0..m {
        for b in (a + 1)..m {
            let overlap = sorted_intersection(&patches[a].members, &patches[b].members);
            if overlap.len() < k_thres {
                continue;
            }
            let coords_of = |patch: &Patch| -> Vec<[f64; 2]> {
                overlap
                    .iter()
                    .map(|&node| {
                        let idx = patch.members.binary_search(&node).unwrap();
                        patch.coords[idx]
                    })
                    .collect()
            };
            let pa = coords_of(&patches[a]);
            let pb = coords_of(&patches[b]);
            // rotation carrying patch b's copy onto patch a's: estimates
            // rotation_a - rotation_b
            let w = procrustes_angle(&pa, &pb)?;
            let (i, j, w) = if rng.gen::<bool>() {
                (a, b, w)
            } else {
                (b, a, mod2pi(-w))
            };
            edges.push(Edge::new(i, j, w));
        }
    }
    OffsetGraph::new(m, edges)
}

fn sorted_intersection(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// How the global rotation freedom is removed against the reference angles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShiftMode {
    /// Plain average of the wrapped pairwise differences (discontinuous when
    /// the differences straddle the wrap point).
    #[default]
    WrappedMean,
    /// Circular mean of the differences; continuous alternative.
    CircularMean,
}

/// Shift all estimates by the average pairwise difference to the reference:
/// `δ = avg[(r⁰_i − θ_i) mod 2π]`, `r_i = (r⁰_i − δ) mod 2π`.
pub fn global_shift(estimates: &[f64], reference: &[f64], mode: ShiftMode) -> Vec<f64> {
    assert_eq!(estimates.len(), reference.len(), "length mismatch");
    let n = estimates.len() as f64;
    let delta = match mode {
        ShiftMode::WrappedMean => {
            estimates
                .iter()
                .zip(reference)
                .map(|(&r, &t)| mod2pi(r - t))
                .sum::<f64>()
                / n
        }
        ShiftMode::CircularMean => {
            let (mut s, mut c) = (0.0, 0.0);
            for (&r, &t) in estimates.iter().zip(reference) {
                let (ds, dc) = (r - t).sin_cos();
                s += ds;
                c += dc;
            }
            mod2pi(s.atan2(c))
        }
    };
    estimates.iter().map(|&r| mod2pi(r - delta)).collect()
}

/// Rotate every patch back by its estimated angle about its own centroid,
/// translate its centroid onto the centroid of its members' true positions,
/// and average per node. Returns the recovered cloud and its ANE.
pub fn recover_coordinates(
    patches: &[Patch],
    angles: &[f64],
    truth: &PointCloud,
) -> Result<(PointCloud, f64)> {
    assert_eq!(patches.len(), angles.len(), "one angle per patch");
    let n = truth.len();
    let mut acc = vec![[0.0f64; 2]; n];
    let mut counts = vec![0usize; n];
    for (patch, &angle) in patches.iter().zip(angles) {
        let c = patch.centroid();
        let m = patch.members.len() as f64;
        let target = patch.members.iter().fold([0.0, 0.0], |t, &node| {
            [t[0] + truth[node][0] / m, t[1] + truth[node][1] / m]
        });
        let (s, co) = (-angle).sin_cos();
        for (&node, p) in patch.members.iter().zip(&patch.coords) {
            let dx = p[0] - c[0];
            let dy = p[1] - c[1];
            let x = target[0] + co * dx - s * dy;
            let y = target[1] + s * dx + co * dy;
            acc[node][0] += x;
            acc[node][1] += y;
            counts[node] += 1;
        }
    }
    assert!(
        counts.iter().all(|&c| c > 0),
        "every node is the center of its own patch"
    );
    let recovered: PointCloud = acc
        .iter()
        .zip(&counts)
        .map(|(p, &c)| [p[0] / c as f64, p[1] / c as f64])
        .collect();
    let score = ane(&recovered, truth)?;
    Ok((recovered, score))
}

/// Settings for the end-to-end localization run.
#[derive(Debug, Clone)]
pub struct SnlConfig {
    pub shape: CloudShape,
    pub n: usize,
    pub seed: u64,
    pub k_patch: usize,
    pub k_thres: usize,
    pub eta: f64,
    pub option: GroundTruthOption,
    pub shift_mode: ShiftMode,
}

impl Default for SnlConfig {
    fn default() -> Self {
        SnlConfig {
            shape: CloudShape::UniformSquare,
            n: 400,
            seed: 0,
            k_patch: 50,
            k_thres: 6,
            eta: 0.0,
            option: GroundTruthOption::Gamma,
            shift_mode: ShiftMode::WrappedMean,
        }
    }
}

/// Result of one localization run.
#[derive(Debug, Clone)]
pub struct SnlReport {
    pub truth: PointCloud,
    pub recovered: PointCloud,
    pub ane: f64,
    pub patch_rotations: Vec<f64>,
    pub estimated_rotations: Vec<f64>,
    pub patch_graph: OffsetGraph,
    /// Weakly connected components of the patch graph (synchronization runs
    /// per component when there is more than one).
    pub components: usize,
}

/// Run the full pipeline with a pluggable synchronizer. The synchronizer
/// receives (a component of) the patch offset graph and returns one angle
/// per node of that subgraph.
pub fn run_pipeline(
    cfg: &SnlConfig,
    synchronizer: &dyn Fn(&OffsetGraph) -> Result<AngleMatrix>,
) -> Result<SnlReport> {
    if cfg.eta < 0.0 {
        return Err(Error::InvalidConfig("eta must be >= 0".into()));
    }
    let cloud = synth_cloud(cfg.shape, cfg.n, cfg.seed);
    let patches = build_patches(&cloud, cfg.k_patch)?;
    let mut rot_rng = stream_rng(cfg.seed, streams::ROTATIONS);
    let rotations: Vec<f64> =
        gen_ground_truth_with(cfg.option, patches.len(), 1, &mut rot_rng).column(0);
    let noisy = perturb_and_rotate(&patches, &cloud, cfg.eta, &rotations, cfg.seed);
    let graph = patch_measurement_graph(&noisy, cfg.k_thres, cfg.seed)?;

    let components = graph.weak_components();
    let mut estimates = vec![0.0f64; patches.len()];
    for comp in &components {
        if comp.len() == 1 {
            continue; // a lone patch keeps angle 0
        }
        let index_of: std::collections::HashMap<usize, usize> =
            comp.iter().enumerate().map(|(local, &node)| (node, local)).collect();
        let sub_edges: Vec<Edge> = graph
            .edges()
            .iter()
            .filter(|e| index_of.contains_key(&e.i) && index_of.contains_key(&e.j))
            .map(|e| Edge::new(index_of[&e.i], index_of[&e.j], e.w))
            .collect();
        let sub = OffsetGraph::new(comp.len(), sub_edges)?;
        let angles = synchronizer(&sub)?;
        if angles.nrows() != comp.len() || angles.ncols() != 1 {
            return Err(Error::ShapeMismatch(
                "synchronizer must return one angle per subgraph node".into(),
            ));
        }
        for (local, &node) in comp.iter().enumerate() {
            estimates[node] = angles.get(local, 0);
        }
    }
    let aligned = global_shift(&estimates, &rotations, cfg.shift_mode);
    let (recovered, score) = recover_coordinates(&noisy, &aligned, &cloud)?;
    Ok(SnlReport {
        truth: cloud,
        recovered,
        ane: score,
        patch_rotations: rotations,
        estimated_rotations: aligned,
        patch_graph: graph,
        components: components.len(),
    })
}
