//! Synthetic outlier-model benchmarks.
//!
//! An instance is built in eight steps: ground-truth angle sets, a uniform
//! noise background, a selection matrix that routes each pair to one angle
//! set or to noise, the complete offset matrix, a random measurement graph
//! (ER / BA / RGG) that sparsifies it, skew-symmetrization, and retention of
//! the non-negative direction per pair.

use crate::angle::{mod2pi, AngleMatrix};
use crate::graph::{Edge, OffsetGraph};
use crate::{Error, Result};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use std::f64::consts::{PI, TAU};

/// Named RNG sub-streams of one master seed, so each component of an
/// instance is independently reproducible.
pub mod streams {
    pub const GROUND_TRUTH: u64 = 0;
    pub const NOISE: u64 = 1;
    pub const SELECTION: u64 = 2;
    /// Base id; connectivity retries use `MEASUREMENT + attempt`.
    pub const MEASUREMENT: u64 = 3;
}

/// Deterministic RNG for one named sub-stream of a master seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Random measurement-graph family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementModel {
    /// Each pair present independently with probability `p`.
    ErdosRenyi,
    /// Preferential attachment, `⌈np/2⌉` edges per new node.
    BarabasiAlbert,
    /// Uniform points on the unit square, edge iff distance ≤ `2p`.
    RandomGeometric,
}

impl MeasurementModel {
    pub fn name(&self) -> &'static str {
        match self {
            MeasurementModel::ErdosRenyi => "ero",
            MeasurementModel::BarabasiAlbert => "bao",
            MeasurementModel::RandomGeometric => "rggo",
        }
    }
}

impl std::str::FromStr for MeasurementModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ero" | "er" => Ok(MeasurementModel::ErdosRenyi),
            "bao" | "ba" => Ok(MeasurementModel::BarabasiAlbert),
            "rggo" | "rgg" => Ok(MeasurementModel::RandomGeometric),
            other => Err(Error::InvalidConfig(format!(
                "unknown measurement model '{other}' (expected ero|bao|rggo)"
            ))),
        }
    }
}

/// Ground-truth angle generation law.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroundTruthOption {
    /// iid Gamma(shape 0.5, scale 2π), wrapped.
    Gamma = 1,
    /// Mean π, rank-one covariance wwᵀ: θ = π + w·z with fresh w, z per set.
    CorrelatedNormal = 2,
    /// Mean π, identity covariance.
    IsotropicNormal = 3,
    /// Mean π, block-diagonal covariance with six rank-one blocks.
    BlockCorrelatedNormal = 4,
}

impl GroundTruthOption {
    pub fn from_index(option: u32) -> Result<Self> {
        match option {
            1 => Ok(GroundTruthOption::Gamma),
            2 => Ok(GroundTruthOption::CorrelatedNormal),
            3 => Ok(GroundTruthOption::IsotropicNormal),
            4 => Ok(GroundTruthOption::BlockCorrelatedNormal),
            other => Err(Error::InvalidConfig(format!(
                "unknown ground-truth option {other} (expected 1..=4)"
            ))),
        }
    }

    pub fn index(&self) -> u32 {
        *self as u32
    }
}

/// Full instance description; identical configs generate bit-identical data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub model: MeasurementModel,
    pub n: usize,
    /// Density parameter in (0, 1]: ER edge probability, BA attachment via
    /// `⌈np/2⌉`, RGG radius `2p`.
    pub p: f64,
    /// Number of angle sets sharing the measurement graph.
    pub k: usize,
    /// Fraction of pairs carrying pure-noise offsets, in [0, 1).
    pub eta: f64,
    pub option: GroundTruthOption,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::InvalidConfig(format!("n must be >= 3, got {}", self.n)));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "density p must lie in (0, 1], got {}",
                self.p
            )));
        }
        if self.k < 1 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.eta) {
            return Err(Error::InvalidConfig(format!(
                "noise level eta must lie in [0, 1), got {}",
                self.eta
            )));
        }
        if self.model == MeasurementModel::BarabasiAlbert {
            let m = ba_attachment(self.n, self.p);
            if m < 1 || m >= self.n {
                return Err(Error::InvalidConfig(format!(
                    "BA attachment count {m} out of range for n = {}",
                    self.n
                )));
            }
        }
        Ok(())
    }
}

/// Hidden per-edge provenance, parallel to the stored edge list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeLabel {
    /// Offset drawn from angle set `l` (1-based).
    Layer(u32),
    /// Offset drawn from the uniform noise background.
    Noise,
}

/// Generator-side truth: the angle sets plus which set (or noise) produced
/// each stored edge. Never visible to solvers.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub angles: AngleMatrix,
    pub edge_labels: Vec<EdgeLabel>,
}

fn ba_attachment(n: usize, p: f64) -> usize {
    ((n as f64) * p / 2.0).ceil() as usize
}

/// Draw one n×k ground-truth angle matrix from the given option.
///
/// Draw order is part of the determinism contract: per angle set, node
/// values in index order; options 2 and 4 draw the covariance vector `w`
/// first (node order), then the shared scalar `z`.
pub fn gen_ground_truth(option: GroundTruthOption, n: usize, k: usize, seed: u64) -> AngleMatrix {
    let mut rng = stream_rng(seed, streams::GROUND_TRUTH);
    gen_ground_truth_with(option, n, k, &mut rng)
}

pub fn gen_ground_truth_with(
    option: GroundTruthOption,
    n: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> AngleMatrix {
    let mut theta = Array2::zeros((n, k));
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    for l in 0..k {
        match option {
            GroundTruthOption::Gamma => {
                let gamma = Gamma::new(0.5, TAU).unwrap();
                for i in 0..n {
                    theta[(i, l)] = gamma.sample(rng);
                }
            }
            GroundTruthOption::CorrelatedNormal => {
                let w: Vec<f64> = (0..n).map(|_| std_normal.sample(rng)).collect();
                let z: f64 = std_normal.sample(rng);
                for i in 0..n {
                    theta[(i, l)] = PI + w[i] * z;
                }
            }
            GroundTruthOption::IsotropicNormal => {
                for i in 0..n {
                    theta[(i, l)] = PI + std_normal.sample(rng);
                }
            }
            GroundTruthOption::BlockCorrelatedNormal => {
                let mut start = 0;
                for sizes in block_sizes(n, 6) {
                    let w: Vec<f64> = (0..sizes).map(|_| std_normal.sample(rng)).collect();
                    let z: f64 = std_normal.sample(rng);
                    for (off, wi) in w.iter().enumerate() {
                        theta[(start + off, l)] = PI + wi * z;
                    }
                    start += sizes;
                }
            }
        }
    }
    AngleMatrix::wrap(theta)
}

/// Split `n` into `parts` contiguous blocks, as evenly as possible.
fn block_sizes(n: usize, parts: usize) -> Vec<usize> {
    let base = n / parts;
    let extra = n % parts;
    (0..parts)
        .map(|b| base + usize::from(b < extra))
        .filter(|&s| s > 0)
        .collect()
}

/// Sample the undirected measurement mask as a sorted list of pairs `i < j`.
pub fn measurement_graph(
    model: MeasurementModel,
    n: usize,
    p: f64,
    seed: u64,
) -> Vec<(usize, usize)> {
    let mut rng = stream_rng(seed, streams::MEASUREMENT);
    measurement_graph_with(model, n, p, &mut rng)
}

pub fn measurement_graph_with(
    model: MeasurementModel,
    n: usize,
    p: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    let mut pairs = match model {
        MeasurementModel::ErdosRenyi => {
            let mut out = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.gen::<f64>() < p {
                        out.push((i, j));
                    }
                }
            }
            out
        }
        MeasurementModel::BarabasiAlbert => barabasi_albert(n, ba_attachment(n, p), rng),
        MeasurementModel::RandomGeometric => {
            let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())).collect();
            let r2 = (2.0 * p) * (2.0 * p);
            let mut out = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    let dx = pts[i].0 - pts[j].0;
                    let dy = pts[i].1 - pts[j].1;
                    if dx * dx + dy * dy <= r2 {
                        out.push((i, j));
                    }
                }
            }
            out
        }
    };
    pairs.sort_unstable();
    pairs
}

/// Preferential attachment: start from `m` isolated nodes, each new node
/// attaches to `m` distinct existing nodes chosen proportionally to degree
/// (the repeated-nodes construction). Produces exactly `m (n − m)` edges.
fn barabasi_albert(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    assert!(m >= 1 && m < n, "BA requires 1 <= m < n");
    let mut edges = Vec::with_capacity(m * (n - m));
    let mut targets: Vec<usize> = (0..m).collect();
    let mut repeated: Vec<usize> = Vec::new();
    for source in m..n {
        for &t in &targets {
            edges.push((t.min(source), t.max(source)));
        }
        repeated.extend(targets.iter().copied());
        repeated.extend(std::iter::repeat_n(source, m));
        let mut set = std::collections::HashSet::with_capacity(m);
        while set.len() < m {
            let pick = repeated[rng.gen_range(0..repeated.len())];
            set.insert(pick);
        }
        targets = set.into_iter().collect();
        targets.sort_unstable();
    }
    edges
}

/// Generate one full instance: offset graph plus hidden ground truth.
///
/// Retries with a fresh measurement sub-stream (up to 100 attempts) until
/// the stored graph is weakly connected.
pub fn gen_offset_graph(cfg: &SyntheticConfig) -> Result<(OffsetGraph, GroundTruth)> {
    cfg.validate()?;
    const MAX_ATTEMPTS: u64 = 100;
    let n = cfg.n;
    let k = cfg.k;

    let mut gt_rng = stream_rng(cfg.seed, streams::GROUND_TRUTH);
    let theta = gen_ground_truth_with(cfg.option, n, k, &mut gt_rng);

    // Noise background and selection values for the full upper triangle, in
    // row-major pair order (independent of the measurement mask).
    let pair_count = n * (n - 1) / 2;
    let mut noise_rng = stream_rng(cfg.seed, streams::NOISE);
    let noise: Vec<f64> = (0..pair_count).map(|_| noise_rng.gen::<f64>() * TAU).collect();
    let mut sel_rng = stream_rng(cfg.seed, streams::SELECTION);
    let sel: Vec<f64> = (0..pair_count).map(|_| sel_rng.gen::<f64>()).collect();

    let pair_index = |i: usize, j: usize| -> usize {
        debug_assert!(i < j);
        i * n - i * (i + 1) / 2 + (j - i - 1)
    };

    for attempt in 0..MAX_ATTEMPTS {
        let mut meas_rng = stream_rng(cfg.seed, streams::MEASUREMENT + attempt);
        let mask = measurement_graph_with(cfg.model, n, cfg.p, &mut meas_rng);

        let mut edges = Vec::with_capacity(mask.len());
        let mut labels = Vec::with_capacity(mask.len());
        for &(i, j) in &mask {
            let s = sel[pair_index(i, j)];
            let (w, label) = if s >= 1.0 - cfg.eta {
                (noise[pair_index(i, j)], EdgeLabel::Noise)
            } else {
                // s in [(1-eta)(l-1)/k, (1-eta) l/k) selects set l
                let l = ((s * k as f64 / (1.0 - cfg.eta)).floor() as usize).min(k - 1);
                let w = mod2pi(theta.get(i, l) - theta.get(j, l));
                (w, EdgeLabel::Layer(l as u32 + 1))
            };
            if w > 0.0 {
                edges.push(Edge {
                    i,
                    j,
                    w,
                    layer: match label {
                        EdgeLabel::Layer(l) => Some(l),
                        EdgeLabel::Noise => None,
                    },
                });
                labels.push(label);
            }
        }

        let graph = OffsetGraph::new(n, edges)?;
        if graph.is_weakly_connected() {
            return Ok((
                graph,
                GroundTruth {
                    angles: theta,
                    edge_labels: labels,
                },
            ));
        }
    }
    Err(Error::Connectivity(MAX_ATTEMPTS as usize))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(model: MeasurementModel, n: usize, p: f64, k: usize, eta: f64, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            model,
            n,
            p,
            k,
            eta,
            option: GroundTruthOption::Gamma,
            seed,
        }
    }

    #[test]
    fn ground_truth_in_range() {
        for option in [
            GroundTruthOption::Gamma,
            GroundTruthOption::CorrelatedNormal,
            GroundTruthOption::IsotropicNormal,
            GroundTruthOption::BlockCorrelatedNormal,
        ] {
            let t = gen_ground_truth(option, 50, 2, 7);
            assert!(t.as_array().iter().all(|&v| (0.0..TAU).contains(&v)));
        }
    }

    #[test]
    fn isotropic_mean_is_pi() {
        // mean of the raw (pre-wrap) draws; sigma = 1, so 3*sigma/sqrt(n) band
        let n = 4000;
        let mut rng = stream_rng(11, streams::GROUND_TRUTH);
        let std_normal = Normal::new(0.0, 1.0).unwrap();
        let mean: f64 = (0..n).map(|_| PI + std_normal.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - PI).abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn correlated_option_matches_reference_stream() {
        // independent re-implementation of "pi + w*z mod 2pi" on the same stream
        let (n, k, seed) = (4, 1, 123);
        let got = gen_ground_truth(GroundTruthOption::CorrelatedNormal, n, k, seed);

        let mut rng = stream_rng(seed, streams::GROUND_TRUTH);
        let std_normal = Normal::new(0.0, 1.0).unwrap();
        let w: Vec<f64> = (0..n).map(|_| std_normal.sample(&mut rng)).collect();
        let z: f64 = std_normal.sample(&mut rng);
        for i in 0..n {
            assert_eq!(got.get(i, 0), mod2pi(PI + w[i] * z));
        }
    }

    #[test]
    fn block_sizes_cover_n() {
        assert_eq!(block_sizes(360, 6), vec![60; 6]);
        assert_eq!(block_sizes(8, 6), vec![2, 2, 1, 1, 1, 1]);
        assert_eq!(block_sizes(4, 6), vec![1, 1, 1, 1]);
    }

    #[test]
    fn er_p_one_is_complete() {
        let pairs = measurement_graph(MeasurementModel::ErdosRenyi, 12, 1.0, 3);
        assert_eq!(pairs.len(), 12 * 11 / 2);
    }

    #[test]
    fn rgg_large_radius_is_complete() {
        // 2p >= sqrt(2) covers the whole unit square
        let pairs = measurement_graph(MeasurementModel::RandomGeometric, 15, 0.75, 3);
        assert_eq!(pairs.len(), 15 * 14 / 2);
    }

    #[test]
    fn ba_edge_count_formula() {
        // n = 10, p = 0.4 -> m = 2 -> exactly m*(n-m) = 16 edges
        let pairs = measurement_graph(MeasurementModel::BarabasiAlbert, 10, 0.4, 5);
        assert_eq!(pairs.len(), 16);
        let distinct: std::collections::HashSet<_> = pairs.iter().collect();
        assert_eq!(distinct.len(), pairs.len());
    }

    #[test]
    fn noiseless_edges_equal_ground_truth_offsets() {
        let c = cfg(MeasurementModel::ErdosRenyi, 40, 0.3, 1, 0.0, 21);
        let (g, gt) = gen_offset_graph(&c).unwrap();
        for e in g.edges() {
            // bitwise: same arithmetic path as the generator
            assert_eq!(e.w, mod2pi(gt.angles.get(e.i, 0) - gt.angles.get(e.j, 0)));
            assert_eq!(e.layer, Some(1));
        }
    }

    #[test]
    fn noisy_fraction_matches_eta() {
        let eta = 0.9;
        let c = cfg(MeasurementModel::ErdosRenyi, 200, 0.5, 1, eta, 33);
        let (g, gt) = gen_offset_graph(&c).unwrap();
        let m = g.edge_count() as f64;
        let noisy = gt
            .edge_labels
            .iter()
            .filter(|l| matches!(l, EdgeLabel::Noise))
            .count() as f64;
        let sigma = (m * eta * (1.0 - eta)).sqrt();
        assert!((noisy - eta * m).abs() < 3.0 * sigma);
    }

    #[test]
    fn expected_edge_count_er() {
        let c = cfg(MeasurementModel::ErdosRenyi, 360, 0.15, 1, 0.0, 44);
        let (g, _) = gen_offset_graph(&c).unwrap();
        let pairs: f64 = (360.0 * 359.0) / 2.0;
        let mean = 0.15 * pairs;
        let sigma = (pairs * 0.15 * 0.85).sqrt();
        assert!(((g.edge_count() as f64) - mean).abs() < 3.0 * sigma);
    }

    #[test]
    fn layer_labels_partition_non_noisy_edges() {
        let c = SyntheticConfig {
            model: MeasurementModel::ErdosRenyi,
            n: 80,
            p: 0.4,
            k: 3,
            eta: 0.2,
            option: GroundTruthOption::Gamma,
            seed: 9,
        };
        let (g, gt) = gen_offset_graph(&c).unwrap();
        assert_eq!(g.edge_count(), gt.edge_labels.len());
        let mut counts = [0usize; 4];
        for (e, label) in g.edges().iter().zip(&gt.edge_labels) {
            match label {
                EdgeLabel::Layer(l) => {
                    assert!((1..=3).contains(l));
                    assert_eq!(e.layer, Some(*l));
                    counts[*l as usize] += 1;
                }
                EdgeLabel::Noise => {
                    assert_eq!(e.layer, None);
                    counts[0] += 1;
                }
            }
        }
        assert!(counts.iter().all(|&c| c > 0));
    }

    #[test]
    fn determinism_bit_identical() {
        let c = cfg(MeasurementModel::RandomGeometric, 60, 0.2, 2, 0.3, 77);
        let a = gen_offset_graph(&c).unwrap();
        let b = gen_offset_graph(&c).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.angles, b.1.angles);
    }

    #[test]
    fn eta_one_rejected() {
        let c = cfg(MeasurementModel::ErdosRenyi, 10, 0.5, 1, 1.0, 0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn generated_graphs_are_connected() {
        for seed in 0..5 {
            let c = cfg(MeasurementModel::ErdosRenyi, 50, 0.12, 1, 0.4, seed);
            let (g, _) = gen_offset_graph(&c).unwrap();
            assert!(g.is_weakly_connected());
        }
    }
}
