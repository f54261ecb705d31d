//! Canonical angle arithmetic on `[0, 2π)`.

use ndarray::Array2;
use std::f64::consts::TAU;

/// Reduce a finite angle to the canonical residue in `[0, 2π)`.
///
/// `rem_euclid` can round a tiny negative input up to exactly `2π`; that
/// case is wrapped back to `0` so the result is always strictly below `2π`.
pub fn mod2pi(x: f64) -> f64 {
    assert!(x.is_finite(), "mod2pi requires a finite input, got {x}");
    let r = x.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Wrapped distance of an angle from 0: `min(x mod 2π, (−x) mod 2π)`, in `[0, π]`.
pub fn wrapped_gap(x: f64) -> f64 {
    let r = mod2pi(x);
    r.min(TAU - r)
}

/// n×k matrix of angle estimates or ground truth; every entry lies in `[0, 2π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleMatrix(Array2<f64>);

impl AngleMatrix {
    /// Wrap an arbitrary real matrix into `[0, 2π)` entrywise.
    pub fn wrap(values: Array2<f64>) -> Self {
        AngleMatrix(values.mapv(mod2pi))
    }

    /// Build from a matrix already known to be in range; checked.
    pub fn new(values: Array2<f64>) -> crate::Result<Self> {
        if values.iter().any(|&v| !(0.0..TAU).contains(&v)) {
            return Err(crate::Error::InvalidConfig(
                "angle matrix entries must lie in [0, 2*pi)".into(),
            ));
        }
        Ok(AngleMatrix(values))
    }

    /// Single column of n angles.
    pub fn from_column(col: Vec<f64>) -> Self {
        let n = col.len();
        AngleMatrix::wrap(Array2::from_shape_vec((n, 1), col).expect("column shape"))
    }

    pub fn constant(n: usize, k: usize, value: f64) -> Self {
        AngleMatrix::wrap(Array2::from_elem((n, k), value))
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Column `l` as a plain vector.
    pub fn column(&self, l: usize) -> Vec<f64> {
        self.0.column(l).to_vec()
    }

    pub fn get(&self, i: usize, l: usize) -> f64 {
        self.0[(i, l)]
    }
}

impl From<AngleMatrix> for Array2<f64> {
    fn from(m: AngleMatrix) -> Self {
        m.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_multiple_wraps_to_zero() {
        assert_eq!(mod2pi(TAU), 0.0);
        assert_eq!(mod2pi(0.0), 0.0);
        assert_eq!(mod2pi(-TAU), 0.0);
    }

    #[test]
    fn negative_half_pi() {
        let expected = 3.0 * std::f64::consts::FRAC_PI_2;
        assert!((mod2pi(-std::f64::consts::FRAC_PI_2) - expected).abs() < 1e-15);
    }

    #[test]
    fn analytic_subtraction() {
        // 7.0 - 2*pi
        let expected = 7.0 - TAU;
        assert!((mod2pi(7.0) - expected).abs() < 1e-15);
        assert!((mod2pi(7.0) - 0.7168146928204138).abs() < 1e-12);
    }

    #[test]
    fn tiny_negative_does_not_round_to_tau() {
        let r = mod2pi(-1e-18);
        assert!(r < TAU);
        assert!(r >= 0.0);
    }

    #[test]
    #[should_panic]
    fn non_finite_rejected() {
        mod2pi(f64::NAN);
    }

    proptest! {
        #[test]
        fn idempotent(x in -1e6f64..1e6) {
            let once = mod2pi(x);
            prop_assert_eq!(mod2pi(once), once);
        }

        #[test]
        fn in_range_and_congruent(x in -1e6f64..1e6) {
            let r = mod2pi(x);
            prop_assert!((0.0..TAU).contains(&r));
            // (x - r) is an integer multiple of 2*pi, up to fp rounding of x/tau
            let quotient = (x - r) / TAU;
            prop_assert!((quotient - quotient.round()).abs() < 1e-6);
        }
    }
}
