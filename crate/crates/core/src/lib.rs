//! Angular synchronization and k-synchronization over SO(2).
//!
//! Estimates `n` angles (up to one global additive constant) from noisy
//! pairwise offsets `(θ_i − θ_j) mod 2π` stored on a directed measurement
//! graph. Provides:
//!
//! - classical estimators: eigenvector relaxation, its row-normalized
//!   variant, the generalized power method, and a trivial floor baseline
//!   ([`spectral`]);
//! - a trainable pipeline: directed-graph embeddings, an inner-product head,
//!   projected gradient steps, trained end-to-end against upset and
//!   cycle-inconsistency losses ([`gnn`], [`losses`], [`autodiff`]);
//! - synthetic outlier-model generators over ER / BA / RGG measurement
//!   graphs ([`synth`]);
//! - rotation-corrected evaluation metrics ([`eval`]);
//! - a sensor-network-localization harness that stitches noisy rotated
//!   patches back into a global point cloud ([`snl`]).

pub mod angle;
pub mod autodiff;
pub mod error;
pub mod eval;
pub mod gnn;
pub mod graph;
pub mod io;
pub mod losses;
pub mod snl;
pub mod spectral;
pub mod synth;

pub use angle::{mod2pi, wrapped_gap, AngleMatrix};
pub use error::{Error, Result};
pub use graph::{
    build_hermitian, row_normalize, triangles, Edge, HermitianObservation, NormalizedPair,
    OffsetGraph, SkewOffsets,
};
pub use synth::{GroundTruth, GroundTruthOption, MeasurementModel, SyntheticConfig};
