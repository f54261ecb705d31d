//! Shared test oracles, independent of the library's solver paths.

use ndarray::Array2;
use num_complex::Complex64;

/// Dense eigendecomposition of a complex Hermitian matrix via cyclic Jacobi
/// on its real-symmetric embedding `[[Re, -Im], [Im, Re]]`.
///
/// Each eigenvalue of the n×n Hermitian matrix appears twice in the 2n×2n
/// embedding; the paired real eigenvectors `[u; v]`, `[-v; u]` correspond to
/// one complex eigenvector `u + iv`. Returns all n eigenpairs sorted by
/// descending eigenvalue.
pub fn dense_hermitian_eig_oracle(h: &Array2<Complex64>) -> (Vec<f64>, Vec<Vec<Complex64>>) {
    let n = h.nrows();
    let m = 2 * n;
    let mut a = vec![vec![0.0f64; m]; m];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = h[(i, j)].re;
            a[i][j + n] = -h[(i, j)].im;
            a[i + n][j] = h[(i, j)].im;
            a[i + n][j + n] = h[(i, j)].re;
        }
    }
    let mut v = vec![vec![0.0f64; m]; m];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }

    // cyclic Jacobi sweeps on the real symmetric matrix
    for _sweep in 0..200 {
        let mut off = 0.0f64;
        for p in 0..m {
            for q in (p + 1)..m {
                off += a[p][q] * a[p][q];
            }
        }
        if off.sqrt() < 1e-13 {
            break;
        }
        for p in 0..m {
            for q in (p + 1)..m {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = 0.5 * (2.0 * a[p][q]).atan2(a[q][q] - a[p][p]);
                let (s, c) = theta.sin_cos();
                for r in 0..m {
                    let (arp, arq) = (a[r][p], a[r][q]);
                    a[r][p] = c * arp - s * arq;
                    a[r][q] = s * arp + c * arq;
                }
                for r in 0..m {
                    let (apr, aqr) = (a[p][r], a[q][r]);
                    a[p][r] = c * apr - s * aqr;
                    a[q][r] = s * apr + c * aqr;
                }
                for r in 0..m {
                    let (vrp, vrq) = (v[r][p], v[r][q]);
                    v[r][p] = c * vrp - s * vrq;
                    v[r][q] = s * vrp + c * vrq;
                }
            }
        }
    }

    // collect 2n real eigenpairs, sorted descending
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| a[y][y].partial_cmp(&a[x][x]).unwrap());

    // greedily pick one representative per conjugate pair: skip a real
    // eigenvector that is (numerically) the i-rotation of one already taken
    let mut values = Vec::with_capacity(n);
    let mut vectors: Vec<Vec<Complex64>> = Vec::with_capacity(n);
    for &col in &order {
        if vectors.len() == n {
            break;
        }
        let candidate: Vec<Complex64> = (0..n)
            .map(|r| Complex64::new(v[r][col], v[r + n][col]))
            .collect();
        let norm: f64 = candidate.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-9 {
            continue;
        }
        let unit: Vec<Complex64> = candidate.iter().map(|z| z / norm).collect();
        // reject if parallel (as a complex line) to an already-taken vector
        // with the same eigenvalue
        let duplicate = vectors.iter().zip(&values).any(|(taken, &val): (&Vec<Complex64>, &f64)| {
            if (val - a[col][col]).abs() > 1e-7 * (1.0 + val.abs()) {
                return false;
            }
            let dot: Complex64 = taken
                .iter()
                .zip(&unit)
                .map(|(x, y)| x.conj() * y)
                .sum();
            dot.norm() > 0.5
        });
        if duplicate {
            continue;
        }
        values.push(a[col][col]);
        vectors.push(unit);
    }
    (values, vectors)
}

/// Grid minimization of the mean squared chordal distance over a global
/// rotation; the functional the closed-form MSE optimizes exactly.
pub fn chordal_grid_mse(est: &[f64], truth: &[f64], grid: usize) -> f64 {
    let n = est.len() as f64;
    let mut best = f64::INFINITY;
    for g in 0..grid {
        let shift = std::f64::consts::TAU * (g as f64) / (grid as f64);
        let sum: f64 = est
            .iter()
            .zip(truth)
            .map(|(&r, &t)| 4.0 - 4.0 * (r + shift - t).cos())
            .sum();
        best = best.min(sum / n);
    }
    best
}
