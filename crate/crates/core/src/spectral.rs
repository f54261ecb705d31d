//! Classical estimators: eigenvector relaxation of the Hermitian offset
//! embedding, its row-normalized variant, the generalized power method, and
//! the trivial all-equal baseline.

use crate::angle::{mod2pi, AngleMatrix};
use crate::graph::{build_hermitian, HermitianObservation, OffsetGraph};
use crate::{Error, Result};
use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fixed seed for the deterministic start block of the orthogonal iteration.
const START_SEED: u64 = 0x5EED_0E16;

/// Top eigenpairs of a Hermitian matrix, ordered by descending eigenvalue,
/// with convergence diagnostics.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    /// Orthonormal eigenvector estimates (Ritz vectors).
    pub vectors: Vec<Array1<Complex64>>,
    /// Real Ritz values, descending.
    pub values: Vec<f64>,
    /// Iterations actually performed.
    pub iterations: usize,
    /// Per-vector residual norms `‖Hv − λv‖₂`.
    pub residuals: Vec<f64>,
    /// Scale the residuals were tested against (`tol · ‖H‖_F`).
    pub residual_scale: f64,
    pub converged: bool,
}

fn frobenius_norm_c(m: &Array2<Complex64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn hermitian_deviation(m: &Array2<Complex64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let d = (m[(i, j)] - m[(j, i)].conj()).norm();
            worst = worst.max(d);
        }
    }
    worst
}

/// Modified Gram-Schmidt on the columns of `v`; near-degenerate columns are
/// replaced by fresh deterministic draws and re-orthogonalized.
fn orthonormalize(v: &mut Array2<Complex64>, rng: &mut ChaCha8Rng) {
    let (n, k) = v.dim();
    for c in 0..k {
        for attempt in 0..64 {
            for prev in 0..c {
                let mut dot = Complex64::new(0.0, 0.0);
                for r in 0..n {
                    dot += v[(r, prev)].conj() * v[(r, c)];
                }
                for r in 0..n {
                    let p = v[(r, prev)];
                    v[(r, c)] -= dot * p;
                }
            }
            let norm: f64 = (0..n).map(|r| v[(r, c)].norm_sqr()).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for r in 0..n {
                    v[(r, c)] /= norm;
                }
                break;
            }
            assert!(attempt < 63, "could not complete an orthonormal basis");
            for r in 0..n {
                v[(r, c)] = Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            }
        }
    }
}

/// Cyclic Jacobi eigendecomposition of a small Hermitian matrix.
/// Returns eigenvalues (descending) and the unitary of column eigenvectors.
fn jacobi_hermitian_small(a: &Array2<Complex64>) -> (Vec<f64>, Array2<Complex64>) {
    let k = a.nrows();
    let mut m = a.clone();
    let mut u = Array2::from_shape_fn((k, k), |(i, j)| {
        Complex64::new(if i == j { 1.0 } else { 0.0 }, 0.0)
    });
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..k {
            for q in (p + 1)..k {
                off += m[(p, q)].norm_sqr();
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + frobenius_norm_c(&m)) {
            break;
        }
        for p in 0..k {
            for q in (p + 1)..k {
                let apq = m[(p, q)];
                let mag = apq.norm();
                if mag < 1e-300 {
                    continue;
                }
                let phase = apq / mag; // e^{i*phi}
                let app = m[(p, p)].re;
                let aqq = m[(q, q)].re;
                let theta = 0.5 * (2.0 * mag).atan2(aqq - app);
                let (s, c) = theta.sin_cos();
                // column rotation J: col_p' = c*col_p + s*conj(phase)*col_q,
                //                    col_q' = -s*phase*col_p + c*col_q
                let jp = Complex64::new(c, 0.0);
                let jsp = phase.conj() * s;
                let jsq = phase * s;
                for r in 0..k {
                    let mp = m[(r, p)];
                    let mq = m[(r, q)];
                    m[(r, p)] = mp * jp + mq * jsp;
                    m[(r, q)] = -mp * jsq + mq * jp;
                    let up = u[(r, p)];
                    let uq = u[(r, q)];
                    u[(r, p)] = up * jp + uq * jsp;
                    u[(r, q)] = -up * jsq + uq * jp;
                }
                // rows (conjugate transpose of the column op)
                for r in 0..k {
                    let mp = m[(p, r)];
                    let mq = m[(q, r)];
                    m[(p, r)] = mp * jp + mq * jsp.conj();
                    m[(q, r)] = -mp * jsq.conj() + mq * jp;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..k).collect();
    let values: Vec<f64> = (0..k).map(|i| m[(i, i)].re).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
    let sorted_values: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let sorted_u = Array2::from_shape_fn((k, k), |(r, c)| u[(r, order[c])]);
    (sorted_values, sorted_u)
}

/// Top-k eigenpairs of a Hermitian matrix by orthogonal iteration
/// (block power method with QR re-orthonormalization and a Rayleigh-Ritz
/// projection), started from a fixed-seed deterministic block.
///
/// The iteration runs on `H + cI` with `c` an upper bound on the spectral
/// radius, so the largest *signed* eigenvalues dominate. On non-convergence
/// the partial basis travels inside the error for inspection.
pub fn top_k_eigenvectors(
    h: &Array2<Complex64>,
    k: usize,
    tol: f64,
    max_iter: usize,
) -> Result<EigenBasis> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(Error::ShapeMismatch(format!("{}x{} matrix", n, h.ncols())));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("need 1 <= k <= n, got k = {k}, n = {n}")));
    }
    let dev = hermitian_deviation(h);
    let scale = frobenius_norm_c(h);
    if dev > 1e-10 * (1.0 + scale) {
        return Err(Error::InvalidConfig(format!(
            "matrix is not Hermitian (deviation {dev:.3e})"
        )));
    }

    // spectral-radius bound: max absolute row sum
    let shift = (0..n)
        .map(|i| (0..n).map(|j| h[(i, j)].norm()).sum::<f64>())
        .fold(0.0f64, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
    let mut v = Array2::from_shape_fn((n, k), |_| {
        Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    });
    orthonormalize(&mut v, &mut rng);

    let residual_scale = tol * scale;
    let mut last: Option<EigenBasis> = None;

    for iter in 1..=max_iter {
        // y = H v on the current orthonormal block
        let y = h.dot(&v);

        // Rayleigh-Ritz: t = v^H y, rotate to Ritz pairs
        let mut t = Array2::from_elem((k, k), Complex64::new(0.0, 0.0));
        for a in 0..k {
            for b in 0..k {
                let mut dot = Complex64::new(0.0, 0.0);
                for r in 0..n {
                    dot += v[(r, a)].conj() * y[(r, b)];
                }
                t[(a, b)] = dot;
            }
        }
        let th = Array2::from_shape_fn((k, k), |(a, b)| (t[(a, b)] + t[(b, a)].conj()) / 2.0);
        let (values, u) = jacobi_hermitian_small(&th);
        let ritz = v.dot(&u); // n x k
        let hz = y.dot(&u);
        let residuals: Vec<f64> = (0..k)
            .map(|c| {
                (0..n)
                    .map(|r| (hz[(r, c)] - values[c] * ritz[(r, c)]).norm_sqr())
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let worst = residuals.iter().cloned().fold(0.0f64, f64::max);
        let basis = EigenBasis {
            vectors: (0..k).map(|c| ritz.column(c).to_owned()).collect(),
            values: values.clone(),
            iterations: iter,
            residuals: residuals.clone(),
            residual_scale,
            converged: worst <= residual_scale,
        };
        if basis.converged {
            return Ok(basis);
        }
        last = Some(basis);

        // power step on the shifted matrix, then re-orthonormalize
        let mut w = y;
        for r in 0..n {
            for c in 0..k {
                w[(r, c)] += shift * v[(r, c)];
            }
        }
        v = w;
        orthonormalize(&mut v, &mut rng);
    }

    let partial = last.expect("max_iter >= 1");
    let worst = partial.residuals.iter().cloned().fold(0.0f64, f64::max);
    Err(Error::EigenNonConvergence {
        iterations: max_iter,
        worst_residual: worst,
        partial: Box::new(partial),
    })
}

pub const DEFAULT_EIG_TOL: f64 = 1e-10;
pub const DEFAULT_EIG_MAX_ITER: usize = 5000;

/// Angles from the component arguments of an eigenvector; zero components
/// get angle 0.
fn angles_of(vector: &Array1<Complex64>) -> Vec<f64> {
    vector
        .iter()
        .map(|z| {
            if z.re == 0.0 && z.im == 0.0 {
                0.0
            } else {
                mod2pi(z.arg())
            }
        })
        .collect()
}

/// Eigenvector relaxation: angle estimates from the arguments of the top k
/// eigenvectors of the Hermitian offset embedding.
pub fn spectral_sync(g: &OffsetGraph, k: usize) -> Result<AngleMatrix> {
    let h = build_hermitian(g);
    let basis = top_k_eigenvectors(h.matrix(), k, DEFAULT_EIG_TOL, DEFAULT_EIG_MAX_ITER)?;
    Ok(angles_from_basis(&basis, g.n(), k))
}

fn angles_from_basis(basis: &EigenBasis, n: usize, k: usize) -> AngleMatrix {
    let mut out = Array2::zeros((n, k));
    for (l, vec) in basis.vectors.iter().enumerate().take(k) {
        for (i, a) in angles_of(vec).into_iter().enumerate() {
            out[(i, l)] = a;
        }
    }
    AngleMatrix::wrap(out)
}

/// Row-normalized variant: eigenvectors of `D⁻¹H` where `D` holds the
/// absolute row sums of `H` (zero-degree rows get unit scale). `D⁻¹H` is not
/// Hermitian, so the solve runs on the similar Hermitian matrix
/// `D^{-1/2} H D^{-1/2}` and maps back through the positive diagonal, which
/// preserves eigenvalue order and component arguments.
pub fn spectral_rn_sync(g: &OffsetGraph, k: usize) -> Result<AngleMatrix> {
    let h = build_hermitian(g);
    let n = g.n();
    let m = h.matrix();
    let deg: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = (0..n).map(|j| m[(i, j)].norm()).sum();
            if d == 0.0 {
                1.0
            } else {
                d
            }
        })
        .collect();
    let sym = Array2::from_shape_fn((n, n), |(i, j)| m[(i, j)] / (deg[i] * deg[j]).sqrt());
    let basis = top_k_eigenvectors(&sym, k, DEFAULT_EIG_TOL, DEFAULT_EIG_MAX_ITER)?;
    // map back: v = D^{-1/2} u; positive scaling leaves arguments unchanged
    let mut out = Array2::zeros((n, k));
    for (l, vec) in basis.vectors.iter().enumerate().take(k) {
        for i in 0..n {
            let z = vec[i] / deg[i].sqrt();
            out[(i, l)] = if z.re == 0.0 && z.im == 0.0 {
                0.0
            } else {
                mod2pi(z.arg())
            };
        }
    }
    Ok(AngleMatrix::wrap(out))
}

/// One multiplicative update of the power iteration on angles:
/// `y ← angle(α e^{ιy} + H e^{ιy})`, elementwise per node.
pub(crate) fn power_update_column(h: &Array2<Complex64>, y: &mut [f64], alpha: f64) {
    let n = y.len();
    let z: Vec<Complex64> = y.iter().map(|&a| Complex64::from_polar(1.0, a)).collect();
    for i in 0..n {
        let mut acc = Complex64::new(alpha, 0.0) * z[i];
        for j in 0..n {
            acc += h[(i, j)] * z[j];
        }
        y[i] = if acc.re == 0.0 && acc.im == 0.0 {
            0.0
        } else {
            acc.arg()
        };
    }
}

/// Generalized power method: iterate the multiplicative update from a given
/// initialization (typically the spectral estimate), independently per
/// column.
pub fn gpm(g: &OffsetGraph, init: &AngleMatrix, iters: usize, alpha: f64) -> Result<AngleMatrix> {
    if init.nrows() != g.n() {
        return Err(Error::ShapeMismatch(format!(
            "init has {} rows for a graph of {} nodes",
            init.nrows(),
            g.n()
        )));
    }
    let h = build_hermitian(g);
    let m = h.matrix();
    let k = init.ncols();
    let mut out = Array2::zeros((g.n(), k));
    for l in 0..k {
        let mut y = init.column(l);
        for _ in 0..iters {
            power_update_column(m, &mut y, alpha);
        }
        for (i, &a) in y.iter().enumerate() {
            out[(i, l)] = mod2pi(a);
        }
    }
    Ok(AngleMatrix::wrap(out))
}

pub const DEFAULT_GPM_ITERS: usize = 100;
pub const DEFAULT_GPM_ALPHA: f64 = 1.0;

/// GPM with its default spectral initialization and iteration budget.
pub fn gpm_from_spectral(g: &OffsetGraph, k: usize) -> Result<AngleMatrix> {
    let init = spectral_sync(g, k)?;
    gpm(g, &init, DEFAULT_GPM_ITERS, DEFAULT_GPM_ALPHA)
}

/// The floor baseline: every angle predicted equal (value 1).
pub fn trivial_solution(n: usize, k: usize) -> AngleMatrix {
    AngleMatrix::constant(n, k, 1.0)
}

/// Hermitian observation accessors used by the training pipeline.
pub fn hermitian_parts(h: &HermitianObservation) -> (Array2<f64>, Array2<f64>) {
    h.split_re_im()
}
