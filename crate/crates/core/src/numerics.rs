//! Flat-vector arithmetic shared by the compressor, the collectives and the
//! optimizers.
//!
//! Everything here works on `f64` slices. [`DenseVector`] is the owned
//! carrier; it derefs to `[f64]` so its length cannot change after
//! construction.

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

/// Default lower bound applied to denominators of elementwise ratios.
pub const DEFAULT_RATIO_FLOOR: f64 = 1e-12;

/// Fixed-length vector of 64-bit reals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// Builds a vector, rejecting NaN and infinite elements.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "DenseVector::new",
                step: 0,
                layer: String::new(),
            });
        }
        Ok(Self(values))
    }

    /// Wraps values without the finiteness check. Used on internal hot paths
    /// where inputs were already validated.
    pub fn from_vec_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl Deref for DenseVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for DenseVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl AsRef<[f64]> for DenseVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl From<&[f64]> for DenseVector {
    fn from(values: &[f64]) -> Self {
        Self(values.to_vec())
    }
}

/// `min(max(x, lo), hi)`.
pub fn clip(x: f64, lo: f64, hi: f64) -> Result<f64> {
    // also rejects NaN bounds
    if !(lo <= hi) {
        return Err(Error::InvalidBounds { lo, hi });
    }
    Ok(x.max(lo).min(hi))
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// `max_i a_i / max(b_i, floor)`; zero for empty inputs.
pub fn inf_norm_of_ratio(a: &[f64], b: &[f64], floor: f64) -> Result<f64> {
    check_len("inf_norm_of_ratio", a.len(), b.len())?;
    Ok(a.iter()
        .zip(b)
        .map(|(num, den)| (num / den.max(floor)).abs())
        .fold(0.0_f64, f64::max))
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) -> Result<()> {
    check_len("axpy", y.len(), x.len())?;
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
    Ok(())
}

pub fn scale_in_place(v: &mut [f64], alpha: f64) {
    v.iter_mut().for_each(|x| *x *= alpha);
}

pub fn square(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x * x).collect()
}

pub fn sqrt(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.sqrt()).collect()
}

pub fn divide(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_len("divide", a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x / y).collect())
}

/// `x <- decay * x + (1 - decay) * g`, the exponential moving average used
/// for momentum.
pub fn ema_in_place(x: &mut [f64], g: &[f64], decay: f64) -> Result<()> {
    check_len("ema", x.len(), g.len())?;
    for (xi, gi) in x.iter_mut().zip(g) {
        *xi = decay * *xi + (1.0 - decay) * gi;
    }
    Ok(())
}

/// `v <- decay * v + (1 - decay) * g^2`
pub fn ema_sq_in_place(v: &mut [f64], g: &[f64], decay: f64) -> Result<()> {
    check_len("ema_sq", v.len(), g.len())?;
    for (vi, gi) in v.iter_mut().zip(g) {
        *vi = decay * *vi + (1.0 - decay) * gi * gi;
    }
    Ok(())
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::dim(context, expected, got));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clip_examples() {
        assert_eq!(clip(0.5, 0.01, 0.3).unwrap(), 0.3);
        assert_eq!(clip(0.05, 0.01, 0.3).unwrap(), 0.05);
        assert_eq!(clip(-1.0, 0.01, 0.3).unwrap(), 0.01);
    }

    #[test]
    fn clip_rejects_inverted_bounds() {
        assert!(matches!(clip(0.0, 1.0, 0.5), Err(Error::InvalidBounds { .. })));
        assert!(clip(0.0, f64::NAN, 0.5).is_err());
    }

    #[test]
    fn l2_norm_examples() {
        assert_eq!(l2_norm(&[3.0, 4.0]), 5.0);
        assert_eq!(l2_norm(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(l2_norm(&[1.0, 1.0, 1.0, 1.0]), 2.0);
    }

    #[test]
    fn ratio_norm_examples() {
        assert_eq!(inf_norm_of_ratio(&[4.0, 1.0], &[1.0, 1.0], 1e-12).unwrap(), 4.0);
        assert_eq!(inf_norm_of_ratio(&[0.0, 0.0], &[1.0, 2.0], 1e-12).unwrap(), 0.0);
        let v = [0.3, 2.0, 1e-3];
        assert_eq!(inf_norm_of_ratio(&v, &v, 1e-12).unwrap(), 1.0);
    }

    #[test]
    fn ratio_norm_floors_zero_denominator() {
        let r = inf_norm_of_ratio(&[1e-12], &[0.0], 1e-12).unwrap();
        assert_eq!(r, 1.0);
    }

    #[test]
    fn ratio_norm_length_mismatch() {
        assert!(matches!(
            inf_norm_of_ratio(&[1.0], &[1.0, 2.0], 1e-12),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn dense_vector_rejects_nan() {
        assert!(DenseVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(DenseVector::new(vec![1.0, f64::INFINITY]).is_err());
        let v = DenseVector::new(vec![1.0, 2.0]).unwrap();
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn elementwise_helpers() {
        let mut y = vec![1.0, 2.0];
        axpy(2.0, &[0.5, -1.0], &mut y).unwrap();
        assert_eq!(y, vec![2.0, 0.0]);
        assert_eq!(square(&[-3.0, 2.0]), vec![9.0, 4.0]);
        assert_eq!(sqrt(&[9.0, 4.0]), vec![3.0, 2.0]);
        assert_eq!(divide(&[1.0, 3.0], &[2.0, 4.0]).unwrap(), vec![0.5, 0.75]);
        assert!(divide(&[1.0], &[]).is_err());
        let mut m = vec![1.0];
        ema_in_place(&mut m, &[3.0], 0.5).unwrap();
        assert_eq!(m, vec![2.0]);
        let mut v = vec![1.0];
        ema_sq_in_place(&mut v, &[3.0], 0.5).unwrap();
        assert_eq!(v, vec![5.0]);
    }

    proptest! {
        #[test]
        fn clip_is_idempotent(x in -1e6..1e6f64, a in -10.0..10.0f64, w in 0.0..10.0f64) {
            let b = a + w;
            let once = clip(x, a, b).unwrap();
            prop_assert_eq!(clip(once, a, b).unwrap(), once);
            prop_assert!(once >= a && once <= b);
        }

        #[test]
        fn l2_triangle_inequality(
            pair in (1usize..32).prop_flat_map(|n| (
                prop::collection::vec(-1e3..1e3f64, n),
                prop::collection::vec(-1e3..1e3f64, n),
            ))
        ) {
            let (a, b) = pair;
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let lhs = l2_norm(&sum);
            let rhs = l2_norm(&a) + l2_norm(&b);
            prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12);
        }

        #[test]
        fn self_ratio_is_one(v in prop::collection::vec(1e-6..1e6f64, 1..32)) {
            prop_assert_eq!(inf_norm_of_ratio(&v, &v, 1e-12).unwrap(), 1.0);
        }
    }
}
