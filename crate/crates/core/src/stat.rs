//! Vectors in the expectation space and the pairwise reductions used to
//! average them.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A point of the expectation space `R^q`.
///
/// The same type carries the server estimate, per-worker memories, the
/// compressed increments and the mean field; the layout of the `q` entries is
/// owned by the model that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SufficientStatistic<T>(Vec<T>);

impl<T: Scalar> SufficientStatistic<T> {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![T::zero(); dim])
    }

    pub fn from_vec(values: Vec<T>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
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

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Fails with [`Error::NonFinite`] if any entry is NaN or infinite.
    pub fn ensure_finite(&self, context: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context))
        }
    }

    pub fn ensure_dim(&self, expected: usize) -> Result<()> {
        if self.len() == expected {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected,
                got: self.len(),
            })
        }
    }

    pub fn dot(&self, other: &Self) -> T {
        debug_assert_eq!(self.len(), other.len());
        self.0
            .iter()
            .zip(&other.0)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
    }

    pub fn norm_sq(&self) -> T {
        self.dot(self)
    }

    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> T {
        self.0.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: T, x: &Self) {
        debug_assert_eq!(self.len(), x.len());
        for (s, &v) in self.0.iter_mut().zip(&x.0) {
            *s += a * v;
        }
    }

    pub fn add_assign(&mut self, x: &Self) {
        debug_assert_eq!(self.len(), x.len());
        for (s, &v) in self.0.iter_mut().zip(&x.0) {
            *s += v;
        }
    }

    pub fn sub_assign(&mut self, x: &Self) {
        debug_assert_eq!(self.len(), x.len());
        for (s, &v) in self.0.iter_mut().zip(&x.0) {
            *s -= v;
        }
    }

    pub fn scale(&mut self, a: T) {
        for s in self.0.iter_mut() {
            *s *= a;
        }
    }

    pub fn add(&self, x: &Self) -> Self {
        let mut out = self.clone();
        out.add_assign(x);
        out
    }

    pub fn sub(&self, x: &Self) -> Self {
        let mut out = self.clone();
        out.sub_assign(x);
        out
    }

    pub fn scaled(&self, a: T) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// Euclidean distance to `other`.
    pub fn distance(&self, other: &Self) -> T {
        self.0
            .iter()
            .zip(&other.0)
            .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b))
            .sqrt()
    }
}

impl<T> Index<usize> for SufficientStatistic<T> {
    type Output = T;

    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

impl<T> IndexMut<usize> for SufficientStatistic<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.0[i]
    }
}

impl<T> From<Vec<T>> for SufficientStatistic<T> {
    fn from(v: Vec<T>) -> Self {
        Self(v)
    }
}

const PAIRWISE_LEAF: usize = 8;

/// Pairwise (cascade) sum of `count` vectors of length `dim`, where `fill(k,
/// buf)` adds the `k`-th term into `buf`. Terms are combined in index order.
pub fn pairwise_sum_with<T, F>(count: usize, dim: usize, fill: &mut F) -> Result<Vec<T>>
where
    T: Scalar,
    F: FnMut(usize, &mut [T]) -> Result<()>,
{
    let mut out = vec![T::zero(); dim];
    pairwise_into(0, count, &mut out, fill)?;
    Ok(out)
}

fn pairwise_into<T, F>(lo: usize, hi: usize, out: &mut [T], fill: &mut F) -> Result<()>
where
    T: Scalar,
    F: FnMut(usize, &mut [T]) -> Result<()>,
{
    if hi - lo <= PAIRWISE_LEAF {
        for k in lo..hi {
            fill(k, out)?;
        }
        return Ok(());
    }
    let mid = lo + (hi - lo) / 2;
    pairwise_into(lo, mid, out, fill)?;
    let mut right = vec![T::zero(); out.len()];
    pairwise_into(mid, hi, &mut right, fill)?;
    for (o, r) in out.iter_mut().zip(right) {
        *o += r;
    }
    Ok(())
}

/// Pairwise sum of already materialized statistics, in slice order.
pub fn pairwise_sum<T: Scalar>(items: &[&SufficientStatistic<T>], dim: usize) -> SufficientStatistic<T> {
    let mut fill = |k: usize, buf: &mut [T]| {
        for (b, &v) in buf.iter_mut().zip(items[k].as_slice()) {
            *b += v;
        }
        Ok(())
    };
    let v = pairwise_sum_with(items.len(), dim, &mut fill).expect("infallible fill");
    SufficientStatistic::from_vec(v)
}

/// Pairwise mean of already materialized statistics.
pub fn pairwise_mean<T: Scalar>(items: &[&SufficientStatistic<T>], dim: usize) -> SufficientStatistic<T> {
    let mut s = pairwise_sum(items, dim);
    if !items.is_empty() {
        s.scale(T::one() / T::from_usize_lossy(items.len()));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn basic_algebra() {
        let a = SufficientStatistic::from_vec(vec![3.0, 4.0]);
        assert_eq!(a.norm(), 5.0);
        let mut b = SufficientStatistic::zeros(2);
        b.axpy(2.0, &a);
        assert_eq!(b.as_slice(), &[6.0, 8.0]);
        assert_eq!(b.sub(&a).as_slice(), &[3.0, 4.0]);
        assert_eq!(a.max_abs(), 4.0);
        assert!(a.ensure_dim(3).is_err());
        let bad = SufficientStatistic::from_vec(vec![f64::NAN]);
        assert!(matches!(bad.ensure_finite("x"), Err(Error::NonFinite("x"))));
    }

    #[test]
    fn pairwise_mean_of_constants_is_exact() {
        let c = SufficientStatistic::<f64>::from_vec(vec![0.1, -2.5, 7.0]);
        let items: Vec<_> = (0..37).map(|_| &c).collect();
        let m = pairwise_mean(&items, 3);
        for (a, b) in m.iter().zip(c.iter()) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }

    proptest! {
        #[test]
        fn pairwise_matches_naive_sum(values in proptest::collection::vec(-1e3f64..1e3, 1..200)) {
            let mut fill = |k: usize, buf: &mut [f64]| { buf[0] += values[k]; Ok(()) };
            let p = pairwise_sum_with(values.len(), 1, &mut fill).unwrap()[0];
            let naive: f64 = values.iter().sum();
            prop_assert!((p - naive).abs() <= 1e-9 * (1.0 + naive.abs()));
        }
    }
}
