//! Vector arithmetic over flat model-parameter vectors.
//!
//! Everything exchanged between participants (client updates, aggregates,
//! attack perturbations, audit inputs) is a [`Params`]. Reductions use
//! compensated summation so results do not depend on accumulation order
//! beyond the last ulp.

use std::ops::{Deref, Index};

use crate::error::{Error, Operand, Result};
use crate::scalar::{stable_sum, Scalar};

/// Flat model-parameter vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params<T>(Vec<T>);

impl<T: Scalar> Params<T> {
    /// Wraps `values`, rejecting NaN and infinities.
    pub fn new(values: Vec<T>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self(values))
    }

    /// Wraps `values` without the finiteness check. Callers that produce
    /// values from finite arithmetic on finite inputs use this.
    pub fn from_vec_unchecked(values: Vec<T>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![T::zero(); dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self + scale * other`, in place.
    pub fn axpy(&mut self, scale: T, other: &Self) -> Result<()> {
        check_dims(self.dim(), other.dim())?;
        for (x, y) in self.0.iter_mut().zip(&other.0) {
            *x = *x + scale * *y;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_dims(self.dim(), other.dim())?;
        Ok(Self(
            self.0.iter().zip(&other.0).map(|(a, b)| *a - *b).collect(),
        ))
    }

    pub fn scaled(&self, s: T) -> Self {
        Self(self.0.iter().map(|v| *v * s).collect())
    }

    pub fn mean(&self) -> T {
        if self.0.is_empty() {
            return T::zero();
        }
        stable_sum(self.0.iter().copied()) / T::of_usize(self.0.len())
    }
}

impl<T> Deref for Params<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T> Index<usize> for Params<T> {
    type Output = T;

    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

impl<T: Scalar> TryFrom<Vec<T>> for Params<T> {
    type Error = Error;

    fn try_from(v: Vec<T>) -> Result<Self> {
        Self::new(v)
    }
}

pub(crate) fn check_dims(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    check_dims(a.len(), b.len())?;
    Ok(stable_sum(a.iter().zip(b).map(|(x, y)| *x * *y)))
}

/// Euclidean norm.
pub fn l2_norm<T: Scalar>(a: &[T]) -> T {
    stable_sum(a.iter().map(|x| *x * *x)).sqrt()
}

/// `a·b / (‖a‖‖b‖)`, clamped to `[-1, 1]`.
///
/// A zero-norm argument is reported as [`Error::ZeroNorm`] naming the
/// offending operand; callers pick their own fallback.
pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    check_dims(a.len(), b.len())?;
    let na = l2_norm(a);
    if na == T::zero() {
        return Err(Error::ZeroNorm(Operand::First));
    }
    let nb = l2_norm(b);
    if nb == T::zero() {
        return Err(Error::ZeroNorm(Operand::Second));
    }
    let c = dot(a, b)? / (na * nb);
    Ok(c.max(-T::one()).min(T::one()))
}

/// Median of a scratch buffer; mid-average for even lengths. Reorders `buf`.
pub(crate) fn median_in_place<T: Scalar>(buf: &mut [T]) -> T {
    let n = buf.len();
    debug_assert!(n > 0);
    let cmp = |x: &T, y: &T| x.partial_cmp(y).expect("finite values");
    let mid = n / 2;
    let (lower, upper, _) = buf.select_nth_unstable_by(mid, cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower_max = lower
            .iter()
            .copied()
            .fold(T::neg_infinity(), |m, v| if v > m { v } else { m });
        (lower_max + upper) / T::of(2.0)
    }
}

/// Coordinate-wise median. Even counts take the mean of the two middle values.
pub fn elementwise_median<T: Scalar, V: AsRef<[T]>>(vs: &[V]) -> Result<Params<T>> {
    let first = vs.first().ok_or(Error::Empty("elementwise_median"))?;
    let dim = first.as_ref().len();
    for v in vs {
        check_dims(dim, v.as_ref().len())?;
    }
    let mut column = Vec::with_capacity(vs.len());
    let out = (0..dim)
        .map(|j| {
            column.clear();
            column.extend(vs.iter().map(|v| v.as_ref()[j]));
            median_in_place(&mut column)
        })
        .collect();
    Ok(Params(out))
}

impl<T> AsRef<[T]> for Params<T> {
    fn as_ref(&self) -> &[T] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(v: &[f64]) -> Params<f64> {
        Params::new(v.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[1.0_f64, 2.0], &[2.0, 4.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
    }

    #[test]
    fn cosine_zero_norm_names_operand() {
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroNorm(Operand::First))
        ));
        assert!(matches!(
            cosine_similarity(&[1.0, 0.0], &[0.0, 0.0]),
            Err(Error::ZeroNorm(Operand::Second))
        ));
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cosine_clamped_for_f32() {
        let a = [0.1_f32, 0.2, 0.3];
        let c = cosine_similarity(&a, &a).unwrap();
        assert!(c <= 1.0);
    }

    #[test]
    fn median_examples() {
        let m = elementwise_median(&[p(&[1.0, 10.0]), p(&[2.0, 20.0]), p(&[9.0, 30.0])]).unwrap();
        assert_eq!(m.as_slice(), &[2.0, 20.0]);
        let m = elementwise_median(&[p(&[1.0]), p(&[3.0])]).unwrap();
        assert_eq!(m.as_slice(), &[2.0]);
    }

    #[test]
    fn median_errors() {
        let empty: Vec<Params<f64>> = vec![];
        assert!(matches!(elementwise_median(&empty), Err(Error::Empty(_))));
        assert!(matches!(
            elementwise_median(&[p(&[1.0]), p(&[1.0, 2.0])]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn median_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let vs: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..5).map(|_| rng.random_range(-10.0..10.0)).collect())
            .collect();
        let got = elementwise_median(&vs).unwrap();
        for j in 0..5 {
            let mut col: Vec<f64> = vs.iter().map(|v| v[j]).collect();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let expected = (col[24] + col[25]) / 2.0;
            assert_eq!(got[j], expected);
        }
    }

    #[test]
    fn norm_examples() {
        assert_eq!(l2_norm(&[3.0, 4.0]), 5.0);
        assert_eq!(l2_norm(&[0.0, 0.0]), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut ss = 0.0;
        for x in &v {
            ss += x * x;
        }
        assert!((l2_norm(&v) - ss.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            Params::new(vec![1.0, f64::NAN]),
            Err(Error::NonFinite(1))
        ));
        assert!(Params::new(vec![f64::INFINITY]).is_err());
    }

    fn nonzero_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0..100.0f64, 1..20)
            .prop_filter("nonzero", |v| l2_norm(v) > 1e-6)
    }

    proptest! {
        #[test]
        fn cosine_self_and_negation(a in nonzero_vec()) {
            let neg: Vec<f64> = a.iter().map(|x| -x).collect();
            prop_assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
            prop_assert!((cosine_similarity(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        }

        #[test]
        fn cosine_scale_invariant(a in nonzero_vec(), s in 0.01..100.0f64, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<f64> = a.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            prop_assume!(l2_norm(&b) > 1e-6);
            let sa: Vec<f64> = a.iter().map(|x| x * s).collect();
            let c0 = cosine_similarity(&a, &b).unwrap();
            let c1 = cosine_similarity(&sa, &b).unwrap();
            prop_assert!((c0 - c1).abs() < 1e-10);
        }

        #[test]
        fn median_permutation_invariant(
            vs in prop::collection::vec(prop::collection::vec(-50.0..50.0f64, 3), 1..12),
            rot in 0usize..12,
        ) {
            let m0 = elementwise_median(&vs).unwrap();
            let mut shuffled = vs.clone();
            shuffled.rotate_left(rot % vs.len());
            shuffled.reverse();
            prop_assert_eq!(m0, elementwise_median(&shuffled).unwrap());
        }

        #[test]
        fn median_ignores_single_outlier_magnitude(
            vals in prop::collection::vec(-10.0..10.0f64, 3..9),
            big in 1.0e3..1.0e9f64,
        ) {
            let mut a: Vec<Vec<f64>> = vals.iter().map(|v| vec![*v]).collect();
            let mut b = a.clone();
            a[0][0] = big;
            b[0][0] = big * 10.0;
            prop_assert_eq!(elementwise_median(&a).unwrap(), elementwise_median(&b).unwrap());
        }
    }
}
