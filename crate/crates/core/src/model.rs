//! Expectation-space EM abstraction.
//!
//! A [`LatentModel`] supplies the per-example conditional expectations
//! `s̄_ij(θ)` of its complete-data sufficient statistics, the M-step map `T`
//! and the objective `F`. Everything else (federated loops, diagnostics)
//! works on opaque [`SufficientStatistic`] vectors of length
//! [`LatentModel::stat_dim`].
//!
//! The free functions here are the exact, deterministic reference
//! quantities: the local and global means `s̄_i`, `s̄`, one exact EM step
//! `s̄ ∘ T`, the mean field `h(s) = s̄ ∘ T(s) − s` and `W = F ∘ T`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stat::{pairwise_mean, pairwise_sum_with, SufficientStatistic};

/// A curved-exponential-family latent variable model distributed over
/// `num_workers()` workers.
pub trait LatentModel<T: Scalar>: Sync {
    /// Model parameter `θ`.
    type Theta: Clone + Send + Sync;

    /// Dimension `q` of the expectation space.
    fn stat_dim(&self) -> usize;

    fn num_workers(&self) -> usize;

    /// Number of local examples `m` held by `worker`.
    fn examples(&self, worker: usize) -> usize;

    /// Adds `weight · s̄_ij(θ)` into `out` (length `q`).
    fn accumulate_example(
        &self,
        worker: usize,
        example: usize,
        theta: &Self::Theta,
        weight: T,
        out: &mut [T],
    ) -> Result<()>;

    /// The M-step map `T(s)`.
    fn m_step(&self, s: &SufficientStatistic<T>) -> Result<Self::Theta>;

    /// Normalized objective `F(θ)` (negative log-likelihood per example).
    fn objective_at(&self, theta: &Self::Theta) -> Result<T>;

    /// Canonical flat encoding of `θ`.
    fn encode_theta(&self, theta: &Self::Theta) -> Vec<T>;

    fn decode_theta(&self, flat: &[T]) -> Result<Self::Theta>;

    fn check_worker(&self, worker: usize) -> Result<()> {
        if worker < self.num_workers() {
            Ok(())
        } else {
            Err(Error::WorkerIndex {
                index: worker,
                workers: self.num_workers(),
            })
        }
    }

    /// Total number of examples `N = Σ_i m_i`.
    fn total_examples(&self) -> usize {
        (0..self.num_workers()).map(|i| self.examples(i)).sum()
    }
}

/// `s̄_ij(θ)` for a single example.
pub fn example_statistic<T: Scalar, M: LatentModel<T>>(
    model: &M,
    worker: usize,
    example: usize,
    theta: &M::Theta,
) -> Result<SufficientStatistic<T>> {
    model.check_worker(worker)?;
    let m = model.examples(worker);
    if example >= m {
        return Err(Error::ExampleIndex {
            worker,
            index: example,
            examples: m,
        });
    }
    let mut out = vec![T::zero(); model.stat_dim()];
    model.accumulate_example(worker, example, theta, T::one(), &mut out)?;
    Ok(SufficientStatistic::from_vec(out))
}

/// Local conditional expectation `s̄_i(θ) = m⁻¹ Σ_j s̄_ij(θ)`, summed
/// pairwise over examples.
pub fn sbar_i<T: Scalar, M: LatentModel<T>>(
    model: &M,
    worker: usize,
    theta: &M::Theta,
) -> Result<SufficientStatistic<T>> {
    model.check_worker(worker)?;
    let m = model.examples(worker);
    let mut fill = |j: usize, buf: &mut [T]| model.accumulate_example(worker, j, theta, T::one(), buf);
    let mut v = pairwise_sum_with(m, model.stat_dim(), &mut fill)?;
    let inv = T::one() / T::from_usize_lossy(m.max(1));
    v.iter_mut().for_each(|x| *x *= inv);
    let s = SufficientStatistic::from_vec(v);
    s.ensure_finite("conditional expectation")?;
    Ok(s)
}

/// Mean of `s̄_ij(θ)` over the given example indices (a minibatch).
pub fn batch_statistic<T: Scalar, M: LatentModel<T>>(
    model: &M,
    worker: usize,
    theta: &M::Theta,
    batch: &[usize],
) -> Result<SufficientStatistic<T>> {
    model.check_worker(worker)?;
    let m = model.examples(worker);
    if let Some(&bad) = batch.iter().find(|&&j| j >= m) {
        return Err(Error::ExampleIndex {
            worker,
            index: bad,
            examples: m,
        });
    }
    let mut fill =
        |k: usize, buf: &mut [T]| model.accumulate_example(worker, batch[k], theta, T::one(), buf);
    let mut v = pairwise_sum_with(batch.len(), model.stat_dim(), &mut fill)?;
    let inv = T::one() / T::from_usize_lossy(batch.len().max(1));
    v.iter_mut().for_each(|x| *x *= inv);
    Ok(SufficientStatistic::from_vec(v))
}

/// All local statistics `s̄_i(θ)`, in worker order.
pub fn local_statistics<T: Scalar, M: LatentModel<T>>(
    model: &M,
    theta: &M::Theta,
) -> Result<Vec<SufficientStatistic<T>>> {
    (0..model.num_workers()).map(|i| sbar_i(model, i, theta)).collect()
}

/// Global `s̄(θ) = n⁻¹ Σ_i s̄_i(θ)`.
pub fn sbar<T: Scalar, M: LatentModel<T>>(model: &M, theta: &M::Theta) -> Result<SufficientStatistic<T>> {
    let locals = local_statistics(model, theta)?;
    let refs: Vec<_> = locals.iter().collect();
    Ok(pairwise_mean(&refs, model.stat_dim()))
}

/// One exact EM iteration in the expectation space: `s ↦ s̄ ∘ T(s)`.
pub fn exact_em_step<T: Scalar, M: LatentModel<T>>(
    model: &M,
    s: &SufficientStatistic<T>,
) -> Result<SufficientStatistic<T>> {
    check_input(model, s)?;
    let theta = model.m_step(s)?;
    sbar(model, &theta)
}

/// Mean field `h(s) = s̄ ∘ T(s) − s`.
pub fn mean_field<T: Scalar, M: LatentModel<T>>(
    model: &M,
    s: &SufficientStatistic<T>,
) -> Result<SufficientStatistic<T>> {
    let next = exact_em_step(model, s)?;
    Ok(next.sub(s))
}

/// Local fields `h_i(s) = s̄_i ∘ T(s) − s` together with their mean `h(s)`.
#[derive(Clone, Debug)]
pub struct FieldEvaluation<T> {
    pub local: Vec<SufficientStatistic<T>>,
    pub mean: SufficientStatistic<T>,
}

pub fn evaluate_fields<T: Scalar, M: LatentModel<T>>(
    model: &M,
    s: &SufficientStatistic<T>,
    theta: &M::Theta,
) -> Result<FieldEvaluation<T>> {
    let locals = local_statistics(model, theta)?;
    let refs: Vec<_> = locals.iter().collect();
    let mean = pairwise_mean(&refs, model.stat_dim()).sub(s);
    let local = locals.into_iter().map(|l| l.sub(s)).collect();
    Ok(FieldEvaluation { local, mean })
}

/// `W(s) = F(T(s))`.
pub fn objective<T: Scalar, M: LatentModel<T>>(model: &M, s: &SufficientStatistic<T>) -> Result<T> {
    check_input(model, s)?;
    let theta = model.m_step(s)?;
    let w = model.objective_at(&theta)?;
    if w.is_finite() {
        Ok(w)
    } else {
        Err(Error::NonFinite("objective"))
    }
}

fn check_input<T: Scalar, M: LatentModel<T>>(model: &M, s: &SufficientStatistic<T>) -> Result<()> {
    s.ensure_dim(model.stat_dim())?;
    s.ensure_finite("expectation-space input")
}

/// Small synthetic models with closed-form behaviour, used as oracles in
/// tests and examples.
pub mod toy {
    use super::*;
    use crate::linalg::Matrix;

    /// Every example returns the same statistic `c` whatever `θ`.
    #[derive(Clone, Debug)]
    pub struct ConstantModel<T> {
        pub value: SufficientStatistic<T>,
        pub workers: usize,
        pub examples: usize,
    }

    impl<T: Scalar> LatentModel<T> for ConstantModel<T> {
        type Theta = SufficientStatistic<T>;

        fn stat_dim(&self) -> usize {
            self.value.len()
        }

        fn num_workers(&self) -> usize {
            self.workers
        }

        fn examples(&self, _worker: usize) -> usize {
            self.examples
        }

        fn accumulate_example(&self, _: usize, _: usize, _: &Self::Theta, w: T, out: &mut [T]) -> Result<()> {
            for (o, &v) in out.iter_mut().zip(self.value.as_slice()) {
                *o += w * v;
            }
            Ok(())
        }

        fn m_step(&self, s: &SufficientStatistic<T>) -> Result<Self::Theta> {
            Ok(s.clone())
        }

        fn objective_at(&self, theta: &Self::Theta) -> Result<T> {
            Ok(theta.distance(&self.value))
        }

        fn encode_theta(&self, theta: &Self::Theta) -> Vec<T> {
            theta.as_slice().to_vec()
        }

        fn decode_theta(&self, flat: &[T]) -> Result<Self::Theta> {
            Ok(SufficientStatistic::from_vec(flat.to_vec()))
        }
    }

    /// `T(s) = s` and `s̄_ij(θ) = B θ + c_ij`, so every local field is affine:
    /// `h_i(s) = (B − I) s + c̄_i`. Per-worker offsets make it heterogeneous.
    #[derive(Clone, Debug)]
    pub struct AffineModel<T> {
        pub matrix: Matrix<T>,
        /// `offsets[i][j]` is `c_ij`.
        pub offsets: Vec<Vec<Vec<T>>>,
    }

    impl<T: Scalar> AffineModel<T> {
        /// Root of the mean field: solves `(I − B) s = c̄`.
        pub fn fixed_point(&self) -> Result<SufficientStatistic<T>> {
            let q = self.matrix.rows();
            let n = self.offsets.len();
            let mut cbar = vec![T::zero(); q];
            for worker in &self.offsets {
                let m = T::from_usize_lossy(worker.len());
                for ex in worker {
                    for (c, &v) in cbar.iter_mut().zip(ex) {
                        *c += v / (m * T::from_usize_lossy(n));
                    }
                }
            }
            // Gaussian elimination with partial pivoting on I − B.
            let mut a = Matrix::from_fn(q, q, |i, j| {
                let id = if i == j { T::one() } else { T::zero() };
                id - self.matrix[(i, j)]
            });
            let mut b = cbar;
            for col in 0..q {
                let piv = (col..q)
                    .max_by(|&x, &y| a[(x, col)].abs().partial_cmp(&a[(y, col)].abs()).unwrap())
                    .unwrap();
                if a[(piv, col)] == T::zero() {
                    return Err(Error::InconsistentState("I − B is singular".into()));
                }
                for k in 0..q {
                    let tmp = a[(col, k)];
                    a[(col, k)] = a[(piv, k)];
                    a[(piv, k)] = tmp;
                }
                b.swap(col, piv);
                for r in (col + 1)..q {
                    let f = a[(r, col)] / a[(col, col)];
                    for k in col..q {
                        let v = a[(col, k)];
                        a[(r, k)] -= f * v;
                    }
                    let v = b[col];
                    b[r] -= f * v;
                }
            }
            let mut x = vec![T::zero(); q];
            for r in (0..q).rev() {
                let mut s = b[r];
                for k in (r + 1)..q {
                    s -= a[(r, k)] * x[k];
                }
                x[r] = s / a[(r, r)];
            }
            Ok(SufficientStatistic::from_vec(x))
        }
    }

    impl<T: Scalar> LatentModel<T> for AffineModel<T> {
        type Theta = SufficientStatistic<T>;

        fn stat_dim(&self) -> usize {
            self.matrix.rows()
        }

        fn num_workers(&self) -> usize {
            self.offsets.len()
        }

        fn examples(&self, worker: usize) -> usize {
            self.offsets[worker].len()
        }

        fn accumulate_example(
            &self,
            worker: usize,
            example: usize,
            theta: &Self::Theta,
            w: T,
            out: &mut [T],
        ) -> Result<()> {
            let bt = self.matrix.mat_vec(theta.as_slice());
            for ((o, b), &c) in out.iter_mut().zip(bt).zip(&self.offsets[worker][example]) {
                *o += w * (b + c);
            }
            Ok(())
        }

        fn m_step(&self, s: &SufficientStatistic<T>) -> Result<Self::Theta> {
            Ok(s.clone())
        }

        fn objective_at(&self, theta: &Self::Theta) -> Result<T> {
            let root = self.fixed_point()?;
            Ok(theta.distance(&root) * theta.distance(&root) * T::lit(0.5))
        }

        fn encode_theta(&self, theta: &Self::Theta) -> Vec<T> {
            theta.as_slice().to_vec()
        }

        fn decode_theta(&self, flat: &[T]) -> Result<Self::Theta> {
            Ok(SufficientStatistic::from_vec(flat.to_vec()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::toy::*;
    use super::*;
    use crate::linalg::Matrix;

    fn affine() -> AffineModel<f64> {
        AffineModel {
            matrix: Matrix::from_row_major(2, 2, vec![0.5, 0.1, -0.2, 0.3]).unwrap(),
            offsets: vec![
                vec![vec![1.0, 0.0], vec![3.0, 2.0]],
                vec![vec![-1.0, 4.0], vec![0.0, 0.0]],
                vec![vec![2.0, 2.0], vec![2.0, -2.0]],
            ],
        }
    }

    #[test]
    fn constant_model_sbar_is_constant() {
        let c = SufficientStatistic::from_vec(vec![0.3, -1.25, 4.0]);
        let model = ConstantModel {
            value: c.clone(),
            workers: 3,
            examples: 17,
        };
        let theta = c.clone();
        for i in 0..3 {
            let s = sbar_i(&model, i, &theta).unwrap();
            assert!(s.distance(&c) < 1e-15);
        }
    }

    #[test]
    fn worker_index_is_checked() {
        let model = affine();
        let theta = SufficientStatistic::zeros(2);
        assert!(matches!(
            sbar_i(&model, 3, &theta),
            Err(Error::WorkerIndex { index: 3, workers: 3 })
        ));
        assert!(matches!(
            example_statistic(&model, 0, 2, &theta),
            Err(Error::ExampleIndex { .. })
        ));
        assert!(batch_statistic(&model, 0, &theta, &[0, 5]).is_err());
    }

    #[test]
    fn mean_field_is_exact_step_minus_input() {
        let model = affine();
        let s = SufficientStatistic::from_vec(vec![0.7, -0.4]);
        let step = exact_em_step(&model, &s).unwrap();
        let h = mean_field(&model, &s).unwrap();
        assert_eq!(h, step.sub(&s));
    }

    #[test]
    fn affine_fixed_point_is_a_root() {
        let model = affine();
        let root = model.fixed_point().unwrap();
        let h = mean_field(&model, &root).unwrap();
        assert!(h.norm() < 1e-13);
        let next = exact_em_step(&model, &root).unwrap();
        assert!(next.distance(&root) < 1e-13);
    }

    #[test]
    fn single_worker_mean_field_matches_local_field() {
        let mut model = affine();
        model.offsets.truncate(1);
        let s = SufficientStatistic::from_vec(vec![1.0, 2.0]);
        let h = mean_field(&model, &s).unwrap();
        let h1 = sbar_i(&model, 0, &s).unwrap().sub(&s);
        assert!(h.distance(&h1) < 1e-15);
    }

    #[test]
    fn field_evaluation_mean_matches_mean_field() {
        let model = affine();
        let s = SufficientStatistic::from_vec(vec![-0.3, 0.9]);
        let eval = evaluate_fields(&model, &s, &s).unwrap();
        let h = mean_field(&model, &s).unwrap();
        assert!(eval.mean.distance(&h) < 1e-15);
        assert_eq!(eval.local.len(), 3);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let model = affine();
        let s = SufficientStatistic::from_vec(vec![f64::NAN, 0.0]);
        assert!(matches!(mean_field(&model, &s), Err(Error::NonFinite(_))));
        let short = SufficientStatistic::from_vec(vec![0.0]);
        assert!(matches!(objective(&model, &short), Err(Error::Dimension { .. })));
    }
}
