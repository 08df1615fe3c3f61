//! Multivariate Gaussian mixture with a shared covariance.
//!
//! Complete-data statistic for an example `y ∈ R^p` with label `z`:
//! `s(y, z) = (1{z=1}, …, 1{z=L}, y·1{z=1}, …, y·1{z=L})`, so the statistic
//! vector has layout `[ρ_1, …, ρ_L, (ρy)_1, …, (ρy)_L]` with each `(ρy)_ℓ`
//! occupying `p` consecutive entries (`q = L(1 + p)`).
//!
//! The M-step map is
//!
//! ```text
//! π_ℓ = s1_ℓ / Σ_u s1_u,   μ_ℓ = s2_ℓ / s1_ℓ,   Σ = M2 − Σ_ℓ s1_ℓ μ_ℓ μ_ℓᵀ
//! ```
//!
//! with `M2 = N⁻¹ Σ_i y_i y_iᵀ` computed once from the full data set. In
//! fixed-covariance mode `Σ` is a constant and only `π`, `μ` move.
//!
//! Floors: a component with `s1_ℓ < 1e−12` is an error; a covariance whose
//! smallest eigenvalue is below `1e−10` is shifted by
//! `(max(0, −λ_min) + 1e−8)·I`.
//!
//! The objective is the normalized negative log-likelihood without the
//! `(p/2) ln 2π` constant:
//! `F(θ) = ½ ln det Σ + ½⟨M2, Σ⁻¹⟩ − N⁻¹ Σ_i ln Σ_ℓ exp(a_ℓ + b_ℓᵀ y_i)`
//! where `a_ℓ = ln π_ℓ − ½ μ_ℓᵀ Σ⁻¹ μ_ℓ` and `b_ℓ = Σ⁻¹ μ_ℓ`.

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, Cholesky, Matrix};
use crate::model::LatentModel;
use crate::rng::{stream, Purpose};
use crate::scalar::Scalar;
use crate::stat::{pairwise_sum_with, SufficientStatistic};

pub const WEIGHT_FLOOR: f64 = 1e-12;
pub const EIGEN_FLOOR: f64 = 1e-10;
pub const COVARIANCE_JITTER: f64 = 1e-8;

/// Mixture parameter with cached natural parameters.
#[derive(Clone, Debug)]
pub struct GmmTheta<T> {
    weights: Vec<T>,
    means: Vec<Vec<T>>,
    covariance: Matrix<T>,
    chol: Cholesky<T>,
    /// `b_ℓ = Σ⁻¹ μ_ℓ`
    lin: Vec<Vec<T>>,
    /// `a_ℓ = ln π_ℓ − ½ μ_ℓᵀ Σ⁻¹ μ_ℓ`
    offset: Vec<T>,
}

impl<T: Scalar> PartialEq for GmmTheta<T> {
    fn eq(&self, other: &Self) -> bool {
        self.weights == other.weights && self.means == other.means && self.covariance == other.covariance
    }
}

impl<T: Scalar> GmmTheta<T> {
    pub fn new(weights: Vec<T>, means: Vec<Vec<T>>, covariance: Matrix<T>) -> Result<Self> {
        let l = weights.len();
        if l == 0 || means.len() != l {
            return Err(Error::Config(format!(
                "{l} weights but {} means",
                means.len()
            )));
        }
        let p = covariance.rows();
        if covariance.cols() != p || p == 0 {
            return Err(Error::Config("covariance must be a non-empty square matrix".into()));
        }
        if let Some(bad) = means.iter().find(|m| m.len() != p) {
            return Err(Error::Dimension {
                expected: p,
                got: bad.len(),
            });
        }
        if !weights.iter().all(|w| w.is_finite() && *w >= T::zero())
            || !means.iter().flatten().all(|v| v.is_finite())
            || !covariance.is_finite()
        {
            return Err(Error::NonFinite("mixture parameter"));
        }
        let total: T = weights.iter().copied().sum();
        let tol = T::lit(1e-12).max(T::epsilon() * T::lit(100.0));
        if (total - T::one()).abs() > tol {
            return Err(Error::Config(format!("mixture weights sum to {total}, not 1")));
        }
        let chol = Cholesky::new(&covariance)?;
        let lin: Vec<Vec<T>> = means.iter().map(|m| chol.solve(m)).collect();
        let half = T::lit(0.5);
        let offset = weights
            .iter()
            .zip(&means)
            .zip(&lin)
            .map(|((&w, m), b)| w.ln() - half * dot(m, b))
            .collect();
        Ok(Self {
            weights,
            means,
            covariance,
            chol,
            lin,
            offset,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.covariance.rows()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<T>] {
        &self.means
    }

    pub fn covariance(&self) -> &Matrix<T> {
        &self.covariance
    }

    pub fn cholesky(&self) -> &Cholesky<T> {
        &self.chol
    }

    /// Natural parameter `φ(θ)`, in the statistic layout.
    pub fn phi(&self) -> Vec<T> {
        let mut out = self.offset.clone();
        for b in &self.lin {
            out.extend_from_slice(b);
        }
        out
    }

    fn scores(&self, y: &[T], out: &mut [T]) {
        for (l, o) in out.iter_mut().enumerate() {
            *o = self.offset[l] + dot(&self.lin[l], y);
        }
    }

    /// `ln Σ_ℓ exp(a_ℓ + b_ℓᵀ y)`.
    pub fn log_partition(&self, y: &[T]) -> T {
        let mut s = vec![T::zero(); self.components()];
        self.scores(y, &mut s);
        log_sum_exp(&s)
    }

    /// Posterior component probabilities of `y`.
    pub fn responsibilities(&self, y: &[T]) -> Result<Vec<T>> {
        if y.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: y.len(),
            });
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("data point"));
        }
        let mut r = vec![T::zero(); self.components()];
        self.responsibilities_into(y, &mut r);
        Ok(r)
    }

    fn responsibilities_into(&self, y: &[T], out: &mut [T]) {
        self.scores(y, out);
        let max = out.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in out.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in out.iter_mut() {
            *v /= total;
        }
    }

    /// Mixture log-density of `y`, including all constants.
    pub fn log_density(&self, y: &[T]) -> T {
        let p = T::from_usize_lossy(self.dim());
        let half = T::lit(0.5);
        let z = self.chol.forward(y);
        let quad = dot(&z, &z);
        -half * p * T::lit(std::f64::consts::TAU).ln() - half * self.chol.log_det() - half * quad + self.log_partition(y)
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn log_sum_exp<T: Scalar>(v: &[T]) -> T {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    max + v.iter().fold(T::zero(), |acc, &x| acc + (x - max).exp()).ln()
}

/// Applies the covariance floor. Returns the (possibly shifted) matrix and
/// whether the floor fired.
pub fn covariance_floor<T: Scalar>(sigma: &Matrix<T>) -> (Matrix<T>, bool) {
    let sym = sigma.symmetrized();
    let (eig, _) = symmetric_eigen(&sym);
    let lmin = eig.first().copied().unwrap_or_else(T::zero);
    if lmin >= T::lit(EIGEN_FLOOR) {
        return (sym, false);
    }
    let shift = (-lmin).max(T::zero()) + T::lit(COVARIANCE_JITTER);
    let mut out = sym;
    for i in 0..out.rows() {
        out[(i, i)] += shift;
    }
    (out, true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceMode<T> {
    /// Known covariance; only weights and means are estimated.
    Fixed(Matrix<T>),
    /// Shared covariance estimated by the M-step.
    Full,
}

/// Gaussian mixture over sharded data (one row-major `m_i × p` matrix per
/// worker).
#[derive(Clone, Debug)]
pub struct GaussianMixture<T> {
    shards: Vec<Matrix<T>>,
    components: usize,
    dim: usize,
    total: usize,
    m2: Matrix<T>,
    mean: Vec<T>,
    mode: CovarianceMode<T>,
}

impl<T: Scalar> GaussianMixture<T> {
    pub fn new(shards: Vec<Matrix<T>>, components: usize, mode: CovarianceMode<T>) -> Result<Self> {
        if shards.is_empty() {
            return Err(Error::Data("no shards".into()));
        }
        if components == 0 {
            return Err(Error::Config("at least one component is required".into()));
        }
        let dim = shards[0].cols();
        if dim == 0 {
            return Err(Error::Data("data points have zero dimension".into()));
        }
        for (i, s) in shards.iter().enumerate() {
            if s.cols() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: s.cols(),
                });
            }
            if s.rows() == 0 {
                return Err(Error::Data(format!("shard {i} is empty")));
            }
            if !s.is_finite() {
                return Err(Error::NonFinite("data"));
            }
        }
        if let CovarianceMode::Fixed(c) = &mode {
            if c.rows() != dim || c.cols() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: c.rows(),
                });
            }
            Cholesky::new(c)?;
        }
        let total = shards.iter().map(|s| s.rows()).sum::<usize>();
        let (m2, mean) = moments(&shards, dim, total)?;
        Ok(Self {
            shards,
            components,
            dim,
            total,
            m2,
            mean,
            mode,
        })
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shards(&self) -> &[Matrix<T>] {
        &self.shards
    }

    /// `M2 = N⁻¹ Σ y yᵀ`.
    pub fn second_moment(&self) -> &Matrix<T> {
        &self.m2
    }

    pub fn data_mean(&self) -> &[T] {
        &self.mean
    }

    pub fn mode(&self) -> &CovarianceMode<T> {
        &self.mode
    }

    /// Empirical covariance `M2 − ȳȳᵀ`.
    pub fn empirical_covariance(&self) -> Matrix<T> {
        Matrix::from_fn(self.dim, self.dim, |a, b| self.m2[(a, b)] - self.mean[a] * self.mean[b])
    }

    /// `ψ(θ) = ½ ln det Σ + ½⟨M2, Σ⁻¹⟩`.
    pub fn psi(&self, theta: &GmmTheta<T>) -> T {
        let inv = theta.chol.inverse();
        let mut tr = T::zero();
        for a in 0..self.dim {
            for b in 0..self.dim {
                tr += self.m2[(a, b)] * inv[(a, b)];
            }
        }
        T::lit(0.5) * (theta.chol.log_det() + tr)
    }

    /// The surrogate `θ ↦ −⟨s, φ(θ)⟩ + ψ(θ)` minimized by the M-step.
    pub fn surrogate(&self, s: &[T], theta: &GmmTheta<T>) -> T {
        self.psi(theta) - dot(s, &theta.phi())
    }

    fn check_theta(&self, theta: &GmmTheta<T>) -> Result<()> {
        if theta.components() != self.components || theta.dim() != self.dim {
            return Err(Error::Config(format!(
                "parameter has {} components in dimension {}, model expects {} in {}",
                theta.components(),
                theta.dim(),
                self.components,
                self.dim
            )));
        }
        Ok(())
    }
}

fn moments<T: Scalar>(shards: &[Matrix<T>], dim: usize, total: usize) -> Result<(Matrix<T>, Vec<T>)> {
    let rows: Vec<(usize, usize)> = shards
        .iter()
        .enumerate()
        .flat_map(|(i, s)| (0..s.rows()).map(move |j| (i, j)))
        .collect();
    let width = dim * dim + dim;
    let mut fill = |k: usize, buf: &mut [T]| {
        let (i, j) = rows[k];
        let y = shards[i].row(j);
        for a in 0..dim {
            for b in 0..dim {
                buf[a * dim + b] += y[a] * y[b];
            }
            buf[dim * dim + a] += y[a];
        }
        Ok(())
    };
    let sums = pairwise_sum_with(rows.len(), width, &mut fill)?;
    let inv = T::one() / T::from_usize_lossy(total);
    let m2 = Matrix::from_fn(dim, dim, |a, b| sums[a * dim + b] * inv).symmetrized();
    let mean = sums[dim * dim..].iter().map(|&v| v * inv).collect();
    Ok((m2, mean))
}

impl<T: Scalar> LatentModel<T> for GaussianMixture<T> {
    type Theta = GmmTheta<T>;

    fn stat_dim(&self) -> usize {
        self.components * (1 + self.dim)
    }

    fn num_workers(&self) -> usize {
        self.shards.len()
    }

    fn examples(&self, worker: usize) -> usize {
        self.shards[worker].rows()
    }

    fn accumulate_example(
        &self,
        worker: usize,
        example: usize,
        theta: &GmmTheta<T>,
        weight: T,
        out: &mut [T],
    ) -> Result<()> {
        let y = self.shards[worker].row(example);
        let l = self.components;
        let mut rho = [T::zero(); 16];
        let mut heap;
        let r: &mut [T] = if l <= rho.len() {
            &mut rho[..l]
        } else {
            heap = vec![T::zero(); l];
            &mut heap
        };
        theta.responsibilities_into(y, r);
        for c in 0..l {
            let wr = weight * r[c];
            out[c] += wr;
            let base = l + c * self.dim;
            for (o, &v) in out[base..base + self.dim].iter_mut().zip(y) {
                *o += wr * v;
            }
        }
        Ok(())
    }

    fn m_step(&self, s: &SufficientStatistic<T>) -> Result<GmmTheta<T>> {
        s.ensure_dim(self.stat_dim())?;
        s.ensure_finite("mixture statistic")?;
        let l = self.components;
        let p = self.dim;
        let s1 = &s.as_slice()[..l];
        for (c, &w) in s1.iter().enumerate() {
            if !(w >= T::lit(WEIGHT_FLOOR)) {
                return Err(Error::DegenerateComponent {
                    component: c,
                    weight: w.as_f64(),
                });
            }
        }
        let total: T = s1.iter().copied().sum();
        let weights: Vec<T> = s1.iter().map(|&w| w / total).collect();
        let means: Vec<Vec<T>> = (0..l)
            .map(|c| s.as_slice()[l + c * p..l + (c + 1) * p].iter().map(|&v| v / s1[c]).collect())
            .collect();
        let covariance = match &self.mode {
            CovarianceMode::Fixed(c) => c.clone(),
            CovarianceMode::Full => {
                let sigma = Matrix::from_fn(p, p, |a, b| {
                    let mut v = self.m2[(a, b)];
                    for c in 0..l {
                        v -= s1[c] * means[c][a] * means[c][b];
                    }
                    v
                });
                let (sigma, floored) = covariance_floor(&sigma);
                if floored {
                    log::warn!("covariance floor applied in the M-step");
                }
                sigma
            }
        };
        GmmTheta::new(weights, means, covariance)
    }

    fn objective_at(&self, theta: &GmmTheta<T>) -> Result<T> {
        self.check_theta(theta)?;
        let per_shard: Vec<T> = self
            .shards
            .iter()
            .map(|shard| {
                let mut fill = |j: usize, buf: &mut [T]| {
                    buf[0] += theta.log_partition(shard.row(j));
                    Ok(())
                };
                pairwise_sum_with(shard.rows(), 1, &mut fill).map(|v| v[0])
            })
            .collect::<Result<_>>()?;
        let mut fill = |i: usize, buf: &mut [T]| {
            buf[0] += per_shard[i];
            Ok(())
        };
        let lp = pairwise_sum_with(per_shard.len(), 1, &mut fill)?[0];
        let f = self.psi(theta) - lp / T::from_usize_lossy(self.total);
        if f.is_finite() {
            Ok(f)
        } else {
            Err(Error::NonFinite("mixture objective"))
        }
    }

    fn encode_theta(&self, theta: &GmmTheta<T>) -> Vec<T> {
        let mut out = theta.weights.clone();
        for m in &theta.means {
            out.extend_from_slice(m);
        }
        out.extend_from_slice(theta.covariance.as_slice());
        out
    }

    fn decode_theta(&self, flat: &[T]) -> Result<GmmTheta<T>> {
        let (l, p) = (self.components, self.dim);
        let expected = l + l * p + p * p;
        if flat.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: flat.len(),
            });
        }
        let weights = flat[..l].to_vec();
        let means = (0..l).map(|c| flat[l + c * p..l + (c + 1) * p].to_vec()).collect();
        let covariance = Matrix::from_row_major(p, p, flat[l + l * p..].to_vec())?;
        GmmTheta::new(weights, means, covariance)
    }
}

/// How examples are distributed across workers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    /// Draw order, i.e. i.i.d. shards.
    Iid,
    /// Sorted by latent label before sharding (maximal heterogeneity).
    Sorted,
}

/// Sampled data set with its latent labels.
#[derive(Clone, Debug)]
pub struct SyntheticData<T> {
    pub shards: Vec<Matrix<T>>,
    pub labels: Vec<Vec<usize>>,
}

/// Draws `total` points from `truth` and deals them to `workers` shards of
/// equal size.
pub fn generate_synthetic<T: Scalar>(
    truth: &GmmTheta<T>,
    total: usize,
    workers: usize,
    split: Split,
    seed: u64,
) -> Result<SyntheticData<T>> {
    if workers == 0 || total == 0 || !total.is_multiple_of(workers) {
        return Err(Error::Config(format!(
            "{total} examples cannot be split evenly across {workers} workers"
        )));
    }
    let p = truth.dim();
    let mut rng = stream(seed, 0, 0, Purpose::Data);
    let weights: Vec<f64> = truth.weights.iter().map(|w| w.as_f64()).collect();
    let lower = truth.chol.lower();
    let mut points: Vec<(usize, Vec<T>)> = Vec::with_capacity(total);
    for _ in 0..total {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut z = weights.len() - 1;
        for (c, &w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                z = c;
                break;
            }
        }
        // Skip components with zero weight when rounding lands on them.
        while weights[z] == 0.0 && z > 0 {
            z -= 1;
        }
        let eps: Vec<T> = (0..p).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect();
        let y = (0..p)
            .map(|a| truth.means[z][a] + (0..=a).fold(T::zero(), |acc, b| acc + lower[(a, b)] * eps[b]))
            .collect();
        points.push((z, y));
    }
    if split == Split::Sorted {
        points.sort_by_key(|(z, _)| *z);
    }
    let m = total / workers;
    let mut shards = Vec::with_capacity(workers);
    let mut labels = Vec::with_capacity(workers);
    for chunk in points.chunks(m) {
        labels.push(chunk.iter().map(|(z, _)| *z).collect());
        let flat = chunk.iter().flat_map(|(_, y)| y.iter().copied()).collect();
        shards.push(Matrix::from_row_major(m, p, flat)?);
    }
    Ok(SyntheticData { shards, labels })
}

/// Starting parameter: uniform weights, means at distinct data points
/// sampled with `seed`, and the fixed or empirical covariance.
pub fn initial_theta<T: Scalar>(model: &GaussianMixture<T>, seed: u64) -> Result<GmmTheta<T>> {
    let l = model.components;
    let total = model.total;
    if l > total {
        return Err(Error::Config(format!("{l} components but only {total} examples")));
    }
    let mut rng = stream(seed, 0, 0, Purpose::Init);
    let picks = sample(&mut rng, total, l);
    let offsets: Vec<usize> = model
        .shards
        .iter()
        .scan(0, |acc, s| {
            let start = *acc;
            *acc += s.rows();
            Some(start)
        })
        .collect();
    let means = picks
        .iter()
        .map(|k| {
            let i = offsets.partition_point(|&o| o <= k) - 1;
            model.shards[i].row(k - offsets[i]).to_vec()
        })
        .collect();
    let covariance = match &model.mode {
        CovarianceMode::Fixed(c) => c.clone(),
        CovarianceMode::Full => covariance_floor(&model.empirical_covariance()).0,
    };
    let w = T::one() / T::from_usize_lossy(l);
    GmmTheta::new(vec![w; l], means, covariance)
}

/// Writes shards as CSV with columns `worker, label, y0, …, y{p−1}`; labels
/// are left empty when not supplied.
pub fn write_shards_csv<T: Scalar>(path: &Path, shards: &[Matrix<T>], labels: Option<&[Vec<usize>]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let p = shards.first().map(|s| s.cols()).unwrap_or(0);
    let mut header = vec!["worker".to_string(), "label".to_string()];
    header.extend((0..p).map(|a| format!("y{a}")));
    w.write_record(&header)?;
    for (i, s) in shards.iter().enumerate() {
        for j in 0..s.rows() {
            let mut rec = vec![i.to_string()];
            rec.push(labels.map(|l| l[i][j].to_string()).unwrap_or_default());
            rec.extend(s.row(j).iter().map(|v| v.as_f64().to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads shards written by [`write_shards_csv`]. Workers must appear as a
/// contiguous range starting at 0.
pub fn read_shards_csv<T: Scalar>(path: &Path) -> Result<SyntheticData<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "worker" || &headers[1] != "label" {
        return Err(Error::Data("expected columns worker,label,y0,...".into()));
    }
    let p = headers.len() - 2;
    let mut rows: Vec<Vec<T>> = Vec::new();
    let mut labels: Vec<Vec<usize>> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Data(format!("row {}: invalid {what}", line + 2));
        let worker: usize = rec[0].parse().map_err(|_| bad("worker"))?;
        if worker > rows.len() {
            return Err(bad("worker order"));
        }
        if worker == rows.len() {
            rows.push(Vec::new());
            labels.push(Vec::new());
        }
        if !rec[1].is_empty() {
            labels[worker].push(rec[1].parse().map_err(|_| bad("label"))?);
        }
        for a in 0..p {
            let v: f64 = rec[2 + a].parse().map_err(|_| bad("value"))?;
            rows[worker].push(T::lit(v));
        }
    }
    let shards = rows
        .into_iter()
        .map(|flat| {
            let m = flat.len() / p;
            Matrix::from_row_major(m, p, flat)
        })
        .collect::<Result<_>>()?;
    Ok(SyntheticData { shards, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{exact_em_step, mean_field, objective, sbar, sbar_i};

    fn one_d(points: &[f64]) -> Matrix<f64> {
        Matrix::from_row_major(points.len(), 1, points.to_vec()).unwrap()
    }

    fn theta_1d(pi: [f64; 2], mu: [f64; 2], var: f64) -> GmmTheta<f64> {
        GmmTheta::new(pi.to_vec(), vec![vec![mu[0]], vec![mu[1]]], Matrix::from_row_major(1, 1, vec![var]).unwrap()).unwrap()
    }

    #[test]
    fn single_component_sbar() {
        let model = GaussianMixture::new(vec![one_d(&[1.0, 2.0, 6.0])], 1, CovarianceMode::Full).unwrap();
        let theta = GmmTheta::new(vec![1.0], vec![vec![0.0]], Matrix::identity(1)).unwrap();
        let s = sbar_i(&model, 0, &theta).unwrap();
        assert_eq!(s.as_slice(), &[1.0, 3.0]);
    }

    #[test]
    fn two_point_brute_force() {
        let model = GaussianMixture::new(vec![one_d(&[-1.0, 1.0])], 2, CovarianceMode::Full).unwrap();
        let theta = theta_1d([0.5, 0.5], [-1.0, 1.0], 1.0);
        let dens = |y: f64, mu: f64| (-(y - mu) * (y - mu) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut want = [0.0; 4];
        for y in [-1.0, 1.0] {
            let joint = [0.5 * dens(y, -1.0), 0.5 * dens(y, 1.0)];
            let tot = joint[0] + joint[1];
            for z in 0..2 {
                want[z] += joint[z] / tot / 2.0;
                want[2 + z] += y * joint[z] / tot / 2.0;
            }
        }
        let s = sbar_i(&model, 0, &theta).unwrap();
        for (a, b) in s.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn responsibilities_cases() {
        let theta = theta_1d([0.5, 0.5], [-1.0, 1.0], 1.0);
        let r = theta.responsibilities(&[0.0]).unwrap();
        assert!((r[0] - 0.5).abs() < 1e-15);
        let r = theta.responsibilities(&[0.5]).unwrap();
        let d = |mu: f64| (-(0.5 - mu) * (0.5 - mu) / 2.0).exp();
        assert!((r[0] - d(-1.0) / (d(-1.0) + d(1.0))).abs() < 1e-15);
        assert!((r[0] + r[1] - 1.0).abs() < 1e-15);
        assert!(matches!(theta.responsibilities(&[f64::NAN]), Err(Error::NonFinite(_))));
        let far = theta.responsibilities(&[1e4]).unwrap();
        assert!(far[1] == 1.0 && far[0] == 0.0);
    }

    #[test]
    fn degenerate_covariance_uses_floor() {
        let model = GaussianMixture::new(vec![one_d(&[-1.0, 1.0])], 2, CovarianceMode::Full).unwrap();
        let s = SufficientStatistic::from_vec(vec![0.5, 0.5, -0.5, 0.5]);
        let theta = model.m_step(&s).unwrap();
        assert_eq!(theta.weights(), &[0.5, 0.5]);
        assert_eq!(theta.means(), &[vec![-1.0], vec![1.0]]);
        assert!((theta.covariance()[(0, 0)] - COVARIANCE_JITTER).abs() < 1e-20);
    }

    #[test]
    fn vanishing_weight_is_an_error() {
        let model = GaussianMixture::new(vec![one_d(&[-1.0, 1.0])], 2, CovarianceMode::Full).unwrap();
        let s = SufficientStatistic::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            model.m_step(&s),
            Err(Error::DegenerateComponent { component: 1, .. })
        ));
    }

    #[test]
    fn objective_matches_direct_density() {
        let data = Matrix::<f64>::from_row_major(3, 2, vec![0.1, 0.2, -0.5, 1.0, 2.0, -0.3]).unwrap();
        let model = GaussianMixture::new(vec![data.clone()], 2, CovarianceMode::Full).unwrap();
        let cov = Matrix::from_row_major(2, 2, vec![1.2, 0.3, 0.3, 0.7]).unwrap();
        let theta = GmmTheta::new(vec![0.3, 0.7], vec![vec![0.0, 0.5], vec![1.0, -1.0]], cov.clone()).unwrap();
        let f = model.objective_at(&theta).unwrap();
        // Direct evaluation through explicit densities.
        let inv = Cholesky::new(&cov).unwrap().inverse();
        let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
        let mut nll = 0.0;
        for j in 0..3 {
            let y = data.row(j);
            let mut dens = 0.0;
            for (w, mu) in theta.weights().iter().zip(theta.means()) {
                let d = [y[0] - mu[0], y[1] - mu[1]];
                let quad = d[0] * (inv[(0, 0)] * d[0] + inv[(0, 1)] * d[1]) + d[1] * (inv[(1, 0)] * d[0] + inv[(1, 1)] * d[1]);
                dens += w * (-0.5 * quad).exp() / (2.0 * std::f64::consts::PI * det.sqrt());
            }
            nll -= dens.ln() / 3.0;
        }
        let constant = (2.0 * std::f64::consts::PI).ln();
        assert!((f + constant - nll).abs() < 1e-12);
        let ld: f64 = (0..3).map(|j| theta.log_density(data.row(j))).sum();
        assert!((ld / 3.0 + nll).abs() < 1e-12);
    }

    #[test]
    fn duplicating_shards_keeps_normalized_objective() {
        let a = one_d(&[-2.0, 0.5, 1.5, 3.0]);
        let one = GaussianMixture::new(vec![a.clone()], 2, CovarianceMode::Full).unwrap();
        let many = GaussianMixture::new(vec![a.clone(), a.clone(), a], 2, CovarianceMode::Full).unwrap();
        let theta = theta_1d([0.4, 0.6], [-1.0, 2.0], 1.3);
        let d = one.objective_at(&theta).unwrap() - many.objective_at(&theta).unwrap();
        assert!(d.abs() < 1e-14);
    }

    fn two_cluster_model(mode: CovarianceMode<f64>) -> GaussianMixture<f64> {
        let truth = GmmTheta::new(
            vec![0.4, 0.6],
            vec![vec![-2.0, 0.0], vec![2.0, 1.0]],
            Matrix::from_row_major(2, 2, vec![1.0, 0.3, 0.3, 0.8]).unwrap(),
        )
        .unwrap();
        let data = generate_synthetic(&truth, 200, 4, Split::Iid, 3).unwrap();
        GaussianMixture::new(data.shards, 2, mode).unwrap()
    }

    #[test]
    fn exact_em_decreases_objective_and_converges() {
        let model = two_cluster_model(CovarianceMode::Full);
        let theta0 = GmmTheta::new(
            vec![0.5, 0.5],
            vec![vec![-1.0, 0.0], vec![1.0, 0.5]],
            Matrix::identity(2),
        )
        .unwrap();
        let mut s = sbar(&model, &theta0).unwrap();
        let mut w = objective(&model, &s).unwrap();
        for _ in 0..500 {
            s = exact_em_step(&model, &s).unwrap();
            let next = objective(&model, &s).unwrap();
            assert!(next <= w + 1e-9);
            w = next;
        }
        let r = mean_field(&model, &s).unwrap().norm();
        assert!(r < 1e-6, "{r} {:?}", s);
    }

    #[test]
    fn fixed_covariance_is_untouched() {
        let cov = Matrix::from_row_major(2, 2, vec![1.0, 0.3, 0.3, 0.8]).unwrap();
        let model = two_cluster_model(CovarianceMode::Fixed(cov.clone()));
        let mut s = sbar(&model, &initial_theta(&model, 2).unwrap()).unwrap();
        for _ in 0..20 {
            s = exact_em_step(&model, &s).unwrap();
            assert_eq!(model.m_step(&s).unwrap().covariance(), &cov);
        }
    }

    #[test]
    fn codec_round_trips() {
        let model = two_cluster_model(CovarianceMode::Full);
        let theta = initial_theta(&model, 5).unwrap();
        let back = model.decode_theta(&model.encode_theta(&theta)).unwrap();
        assert_eq!(back, theta);
        assert_eq!(model.encode_theta(&back), model.encode_theta(&theta));
    }

    #[test]
    fn sorted_split_concentrates_labels() {
        let truth = theta_1d([0.5, 0.5], [-3.0, 3.0], 1.0);
        let data = generate_synthetic(&truth, 100, 10, Split::Sorted, 4).unwrap();
        for l in &data.labels {
            assert_eq!(l.len(), 10);
        }
        assert!(data.labels[0].iter().all(|&z| z == 0));
        assert!(data.labels[9].iter().all(|&z| z == 1));
        let degenerate = theta_1d([1.0, 0.0], [-3.0, 3.0], 1.0);
        let data = generate_synthetic(&degenerate, 50, 5, Split::Iid, 4).unwrap();
        assert!(data.labels.iter().flatten().all(|&z| z == 0));
        assert!(generate_synthetic(&truth, 101, 10, Split::Iid, 0).is_err());
    }

    #[test]
    fn shards_csv_round_trip() {
        let truth = theta_1d([0.5, 0.5], [-3.0, 3.0], 1.0);
        let data = generate_synthetic(&truth, 12, 3, Split::Iid, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shards.csv");
        write_shards_csv(&path, &data.shards, Some(&data.labels)).unwrap();
        let back: SyntheticData<f64> = read_shards_csv(&path).unwrap();
        assert_eq!(back.shards, data.shards);
        assert_eq!(back.labels, data.labels);
    }
}
