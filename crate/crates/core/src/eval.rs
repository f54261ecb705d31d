//! Ground-truth-aware metrics.
//!
//! The primary score is a mean square error with angle correction: angles
//! are mapped to 2×2 rotation matrices, aligned by the best global rotation
//! (an orthogonal Procrustes problem solved in closed form from the singular
//! values of the averaged alignment matrix), and scored by the mean squared
//! chordal distance `4 − 2(σ₁ + σ₂)`.

use crate::angle::{mod2pi, AngleMatrix};
use crate::{Error, Result};
use std::f64::consts::TAU;

/// Singular values of a 2×2 matrix, closed form, `σ₁ ≥ σ₂ ≥ 0`.
fn svd2x2_singular_values(q: [[f64; 2]; 2]) -> (f64, f64) {
    let e = (q[0][0] + q[1][1]) / 2.0;
    let f = (q[0][0] - q[1][1]) / 2.0;
    let g = (q[1][0] + q[0][1]) / 2.0;
    let h = (q[1][0] - q[0][1]) / 2.0;
    let big = e.hypot(h) + f.hypot(g);
    let small = (e.hypot(h) - f.hypot(g)).abs();
    (big, small)
}

/// Rotation-corrected MSE between two angle vectors.
///
/// Computes `Q = (1/n) Σ rot(truth_i)ᵀ rot(est_i)` and returns
/// `4 − 2(σ₁ + σ₂)`; invariant under a common shift of all estimates.
/// Values land in `[0, 4]`; tiny negative rounding (≥ −1e−12) clamps to 0.
pub fn mse(est: &[f64], truth: &[f64]) -> Result<f64> {
    if est.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "angle vectors of lengths {} and {}",
            est.len(),
            truth.len()
        )));
    }
    if est.is_empty() {
        return Err(Error::InvalidConfig("mse requires n >= 1".into()));
    }
    let n = est.len() as f64;
    // rot(truth)^T rot(est) = rot(est - truth)
    let mut q = [[0.0f64; 2]; 2];
    for (&r, &t) in est.iter().zip(truth) {
        let d = r - t;
        let (s, c) = d.sin_cos();
        q[0][0] += c;
        q[0][1] += -s;
        q[1][0] += s;
        q[1][1] += c;
    }
    for row in &mut q {
        for v in row {
            *v /= n;
        }
    }
    let (s1, s2) = svd2x2_singular_values(q);
    let value = 4.0 - 2.0 * (s1 + s2);
    debug_assert!(value > -1e-9, "mse far below zero: {value}");
    Ok(value.max(0.0))
}

/// Brute-force oracle for [`mse`]: minimize the sum of squared wrapped
/// residuals over a uniform grid of global shifts, scaled by `2/n` so the
/// optimum matches the rotation-matrix form in the small-residual regime
/// (the two functionals agree to second order; they diverge for large
/// residuals, where the rotation-matrix form is the one reported).
pub fn mse_oracle(est: &[f64], truth: &[f64], grid_points: usize) -> Result<f64> {
    if est.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "angle vectors of lengths {} and {}",
            est.len(),
            truth.len()
        )));
    }
    if est.is_empty() || grid_points == 0 {
        return Err(Error::InvalidConfig(
            "mse_oracle requires n >= 1 and a nonempty grid".into(),
        ));
    }
    let deltas: Vec<f64> = est.iter().zip(truth).map(|(&r, &t)| r - t).collect();
    let n = est.len() as f64;
    let mut best = f64::INFINITY;
    for g in 0..grid_points {
        let shift = TAU * (g as f64) / (grid_points as f64);
        let mut sum = 0.0;
        for &d in &deltas {
            let w = mod2pi(d + shift);
            let w = w.min(TAU - w);
            sum += w * w;
        }
        if sum < best {
            best = sum;
        }
    }
    Ok(2.0 * best / n)
}

/// [`mse_k`] plus the optimal column assignment and its per-column scores:
/// `per_column[l]` is the MSE of the matched estimate column against truth
/// column `l`.
pub fn mse_k_detailed(est: &AngleMatrix, truth: &AngleMatrix) -> Result<(f64, Vec<f64>)> {
    if est.nrows() != truth.nrows() || est.ncols() != truth.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "angle matrices {}x{} vs {}x{}",
            est.nrows(),
            est.ncols(),
            truth.nrows(),
            truth.ncols()
        )));
    }
    let k = est.ncols();
    if k > 8 {
        return Err(Error::InvalidConfig(format!(
            "permutation search is factorial; k = {k} exceeds the guard of 8"
        )));
    }
    let mut cost = vec![vec![0.0f64; k]; k];
    for (le, row) in cost.iter_mut().enumerate() {
        for (lt, slot) in row.iter_mut().enumerate() {
            *slot = mse(&est.column(le), &truth.column(lt))?;
        }
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = f64::INFINITY;
    let mut best_perm = perm.clone();
    permute(&mut perm, 0, &mut |p| {
        let total: f64 = p.iter().enumerate().map(|(lt, &le)| cost[le][lt]).sum();
        if total < best {
            best = total;
            best_perm = p.to_vec();
        }
    });
    let per_column = (0..k).map(|lt| cost[best_perm[lt]][lt]).collect();
    Ok((best / k as f64, per_column))
}

/// Permutation-minimized MSE for k angle sets: the column order of the
/// estimate is arbitrary, so score the best assignment of estimated columns
/// to truth columns, averaged over columns.
pub fn mse_k(est: &AngleMatrix, truth: &AngleMatrix) -> Result<f64> {
    if est.nrows() != truth.nrows() || est.ncols() != truth.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "angle matrices {}x{} vs {}x{}",
            est.nrows(),
            est.ncols(),
            truth.nrows(),
            truth.ncols()
        )));
    }
    let k = est.ncols();
    if k > 8 {
        return Err(Error::InvalidConfig(format!(
            "permutation search is factorial; k = {k} exceeds the guard of 8"
        )));
    }
    let est_cols: Vec<Vec<f64>> = (0..k).map(|l| est.column(l)).collect();
    let truth_cols: Vec<Vec<f64>> = (0..k).map(|l| truth.column(l)).collect();
    let mut cost = vec![vec![0.0f64; k]; k];
    for (le, est_col) in est_cols.iter().enumerate() {
        for (lt, truth_col) in truth_cols.iter().enumerate() {
            cost[le][lt] = mse(est_col, truth_col)?;
        }
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let total: f64 = p.iter().enumerate().map(|(lt, &le)| cost[le][lt]).sum();
        if total < best {
            best = total;
        }
    });
    Ok(best / k as f64)
}

fn permute(items: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, visit);
        items.swap(start, i);
    }
}

/// Average normalized error between predicted and true 2-D coordinates:
/// RMS prediction error over the RMS radius of the true cloud about its
/// centroid.
pub fn ane(predicted: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "point clouds of sizes {} and {}",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::InvalidConfig("ane requires n >= 1".into()));
    }
    let n = truth.len() as f64;
    let cx: f64 = truth.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy: f64 = truth.iter().map(|p| p[1]).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, t) in predicted.iter().zip(truth) {
        num += (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2);
        den += (t[0] - cx).powi(2) + (t[1] - cy).powi(2);
    }
    if den == 0.0 {
        return Err(Error::Degenerate(
            "true cloud has zero radius; ANE undefined".into(),
        ));
    }
    Ok((num / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Independent grid minimization of the mean squared chordal distance,
    /// the functional the closed-form singular values optimize exactly.
    fn chordal_grid_oracle(est: &[f64], truth: &[f64], grid: usize) -> f64 {
        let n = est.len() as f64;
        let mut best = f64::INFINITY;
        for g in 0..grid {
            let shift = TAU * (g as f64) / (grid as f64);
            let sum: f64 = est
                .iter()
                .zip(truth)
                .map(|(&r, &t)| 4.0 - 4.0 * (r + shift - t).cos())
                .sum();
            best = best.min(sum / n);
        }
        best
    }

    #[test]
    fn identical_angles_zero() {
        let r = vec![0.3, 1.0, 5.9];
        assert_eq!(mse(&r, &r).unwrap(), 0.0);
    }

    #[test]
    fn global_shift_zero() {
        let r: Vec<f64> = vec![0.3, 1.0, 5.9, 2.2];
        let shifted: Vec<f64> = r.iter().map(|&x| mod2pi(x + 1.234)).collect();
        assert!(mse(&shifted, &r).unwrap() < 1e-12);
    }

    #[test]
    fn matches_chordal_grid_on_large_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r: Vec<f64> = (0..20).map(|_| rng.gen::<f64>() * TAU).collect();
        let t: Vec<f64> = (0..20).map(|_| rng.gen::<f64>() * TAU).collect();
        let got = mse(&r, &t).unwrap();
        let want = chordal_grid_oracle(&r, &t, 200_000);
        assert!((got - want).abs() < 1e-8, "got {got}, grid {want}");
    }

    #[test]
    fn matches_wrapped_grid_oracle_on_small_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t: Vec<f64> = (0..20).map(|_| rng.gen::<f64>() * TAU).collect();
        let r: Vec<f64> = t
            .iter()
            .map(|&x| mod2pi(x + 0.4 + 0.05 * (rng.gen::<f64>() - 0.5)))
            .collect();
        let got = mse(&r, &t).unwrap();
        let oracle = mse_oracle(&r, &t, 200_000).unwrap();
        assert!((got - oracle).abs() < 1e-4, "got {got}, oracle {oracle}");
    }

    #[test]
    fn oracle_half_circle_fixture() {
        // n = 2, residuals (0, pi): optimal shift pi/2 gives 2*(pi/2)^2,
        // scaled by 2/n = 1 -> pi^2 / 2
        let r = vec![0.0, PI];
        let t = vec![0.0, 0.0];
        let v = mse_oracle(&r, &t, 200_000).unwrap();
        assert!((v - PI * PI / 2.0).abs() < 1e-9, "got {v}");
    }

    #[test]
    fn oracle_trivia() {
        let r = vec![1.0, 2.0, 3.0];
        assert!(mse_oracle(&r, &r, 1000).unwrap() < 1e-12);
        // n = 1: the shift absorbs everything
        assert!(mse_oracle(&[2.5], &[0.1], 200_000).unwrap() < 1e-8);
    }

    #[test]
    fn mse_k_reduces_to_mse_for_k1() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = AngleMatrix::wrap(Array2::from_shape_fn((10, 1), |_| rng.gen::<f64>() * TAU));
        let b = AngleMatrix::wrap(Array2::from_shape_fn((10, 1), |_| rng.gen::<f64>() * TAU));
        let direct = mse(&a.column(0), &b.column(0)).unwrap();
        assert!((mse_k(&a, &b).unwrap() - direct).abs() < 1e-15);
    }

    #[test]
    fn mse_k_absorbs_column_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let c0: Vec<f64> = (0..10).map(|_| rng.gen::<f64>() * TAU).collect();
        let c1: Vec<f64> = (0..10).map(|_| rng.gen::<f64>() * TAU).collect();
        let mut truth = Array2::zeros((10, 2));
        let mut swapped = Array2::zeros((10, 2));
        for i in 0..10 {
            truth[(i, 0)] = c0[i];
            truth[(i, 1)] = c1[i];
            swapped[(i, 0)] = c1[i];
            swapped[(i, 1)] = c0[i];
        }
        let v = mse_k(&AngleMatrix::wrap(swapped), &AngleMatrix::wrap(truth)).unwrap();
        assert!(v < 1e-12);
    }

    #[test]
    fn mse_k_matches_explicit_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let k = 3;
        let est = AngleMatrix::wrap(Array2::from_shape_fn((12, k), |_| rng.gen::<f64>() * TAU));
        let truth = AngleMatrix::wrap(Array2::from_shape_fn((12, k), |_| rng.gen::<f64>() * TAU));
        let got = mse_k(&est, &truth).unwrap();

        let perms = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let mut best = f64::INFINITY;
        for p in perms {
            let total: f64 = (0..k)
                .map(|l| mse(&est.column(p[l]), &truth.column(l)).unwrap())
                .sum();
            best = best.min(total / k as f64);
        }
        assert!((got - best).abs() < 1e-14);
    }

    #[test]
    fn mse_k_guards_factorial() {
        let m = AngleMatrix::constant(4, 9, 1.0);
        assert!(mse_k(&m, &m).is_err());
    }

    #[test]
    fn mse_k_never_beats_min_property() {
        // mse_k <= average over the identity permutation
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let est = AngleMatrix::wrap(Array2::from_shape_fn((8, 2), |_| rng.gen::<f64>() * TAU));
        let truth = AngleMatrix::wrap(Array2::from_shape_fn((8, 2), |_| rng.gen::<f64>() * TAU));
        let identity_avg = (mse(&est.column(0), &truth.column(0)).unwrap()
            + mse(&est.column(1), &truth.column(1)).unwrap())
            / 2.0;
        assert!(mse_k(&est, &truth).unwrap() <= identity_avg + 1e-15);
    }

    #[test]
    fn ane_basics() {
        let t = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        assert_eq!(ane(&t, &t).unwrap(), 0.0);

        // reflection through the centroid doubles every deviation
        let reflected: Vec<[f64; 2]> = t.iter().map(|p| [1.0 - p[0], 1.0 - p[1]]).collect();
        assert!((ane(&reflected, &t).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ane_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t: Vec<[f64; 2]> = (0..30).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let p: Vec<[f64; 2]> = (0..30).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let got = ane(&p, &t).unwrap();
        let n = 30.0;
        let cx: f64 = t.iter().map(|q| q[0]).sum::<f64>() / n;
        let cy: f64 = t.iter().map(|q| q[1]).sum::<f64>() / n;
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in 0..30 {
            num += (p[i][0] - t[i][0]).powi(2) + (p[i][1] - t[i][1]).powi(2);
            den += (t[i][0] - cx).powi(2) + (t[i][1] - cy).powi(2);
        }
        assert!((got - num.sqrt() / den.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ane_rejects_degenerate_truth() {
        let t = vec![[1.0, 1.0]; 5];
        let p = vec![[0.0, 0.0]; 5];
        assert!(ane(&p, &t).is_err());
    }

    proptest! {
        #[test]
        fn mse_symmetric_and_bounded(seed in 0u64..1000, n in 2usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * TAU).collect();
            let t: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * TAU).collect();
            let a = mse(&r, &t).unwrap();
            let b = mse(&t, &r).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=4.0 + 1e-12).contains(&a));
        }

        #[test]
        fn mse_invariant_under_joint_shift(seed in 0u64..500, c in 0.0..TAU) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r: Vec<f64> = (0..10).map(|_| rng.gen::<f64>() * TAU).collect();
            let t: Vec<f64> = (0..10).map(|_| rng.gen::<f64>() * TAU).collect();
            let rs: Vec<f64> = r.iter().map(|&x| mod2pi(x + c)).collect();
            let ts: Vec<f64> = t.iter().map(|&x| mod2pi(x + c)).collect();
            prop_assert!((mse(&r, &t).unwrap() - mse(&rs, &ts).unwrap()).abs() < 1e-10);
        }

        #[test]
        fn ane_scale_covariant(seed in 0u64..500, s in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t: Vec<[f64;2]> = (0..12).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
            let p: Vec<[f64;2]> = (0..12).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
            let ts: Vec<[f64;2]> = t.iter().map(|q| [s*q[0], s*q[1]]).collect();
            let ps: Vec<[f64;2]> = p.iter().map(|q| [s*q[0], s*q[1]]).collect();
            prop_assert!((ane(&p, &t).unwrap() - ane(&ps, &ts).unwrap()).abs() < 1e-9);
        }
    }
}
