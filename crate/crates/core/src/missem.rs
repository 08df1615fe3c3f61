//! FedMissEM: federated low-rank imputation of a `J × L` matrix under a
//! Gaussian entry model with unit variance.
//!
//! Observers report `(row, col, value)` triplets and are grouped onto
//! servers. Server `c` sees the union `Ω_c` of its observers' cells (values
//! observed by several of its observers are averaged). Its conditional
//! expectation of the complete-data statistic is the `J × L` grid
//!
//! ```text
//! s̄_c(θ)_{jl} = X^c_{jl} if (j,l) ∈ Ω_c, θ_{jl} otherwise
//! ```
//!
//! and the M-step `T` is the best rank-`r` approximation (truncated SVD).
//! Statistics are stored row-major, cell `(j, l)` at index `j·L + l`.
//!
//! In a round every server draws `b` distinct cells uniformly from the whole
//! grid, forms `Δ_c = S_c − Ŝ − V_c` on those cells (zero elsewhere) and
//! proceeds as FedEM with full participation. One conditional-expectation
//! evaluation is one cell, so an epoch is `n·J·L` evaluations.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::compression::{quantize, QuantizerSpec};
use crate::error::{Error, Result};
use crate::fedem::{diagnostics_due, memory_gap_of, MemoryInit, StepSize};
use crate::harness::trace::{Algo, RoundTrace};
use crate::linalg::{svd, Matrix};
use crate::model::LatentModel;
use crate::rng::{stream, Purpose};
use crate::scalar::Scalar;
use crate::stat::{pairwise_mean, pairwise_sum, SufficientStatistic};

/// One observation triplet with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation<T> {
    pub observer: u64,
    pub server: u64,
    pub row: usize,
    pub col: usize,
    pub value: T,
}

/// What one server knows.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationShard<T> {
    /// Per-cell pooled observation (`None` if no observer of this server saw
    /// the cell).
    observed: Vec<Option<T>>,
    /// Raw observations, for the likelihood.
    raw: Vec<(usize, T)>,
    observers: Vec<u64>,
}

impl<T: Scalar> ObservationShard<T> {
    pub fn observed(&self) -> &[Option<T>] {
        &self.observed
    }

    pub fn observers(&self) -> &[u64] {
        &self.observers
    }

    pub fn observed_cells(&self) -> usize {
        self.observed.iter().filter(|v| v.is_some()).count()
    }

    /// `s̄_c(θ)` at one cell.
    pub fn cell_statistic(&self, cell: usize, theta: &Matrix<T>) -> T {
        self.observed[cell].unwrap_or_else(|| theta.as_slice()[cell])
    }
}

/// All servers' observations of a `rows × cols` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MissingDataset<T> {
    rows: usize,
    cols: usize,
    servers: Vec<ObservationShard<T>>,
    server_ids: Vec<u64>,
}

impl<T: Scalar> MissingDataset<T> {
    /// Builds the dataset. Rejects out-of-range indices, non-finite values,
    /// duplicate `(observer, row, col)` triplets and observers attached to
    /// more than one server.
    pub fn new(rows: usize, cols: usize, observations: &[Observation<T>]) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Data("matrix dimensions must be positive".into()));
        }
        let mut seen = HashSet::new();
        let mut owner: BTreeMap<u64, u64> = BTreeMap::new();
        let mut by_server: BTreeMap<u64, Vec<&Observation<T>>> = BTreeMap::new();
        for o in observations {
            if o.row >= rows || o.col >= cols {
                return Err(Error::Data(format!(
                    "cell ({}, {}) outside a {rows} x {cols} matrix",
                    o.row, o.col
                )));
            }
            if !o.value.is_finite() {
                return Err(Error::NonFinite("observation"));
            }
            if !seen.insert((o.observer, o.row, o.col)) {
                return Err(Error::Data(format!(
                    "observer {} reports cell ({}, {}) twice",
                    o.observer, o.row, o.col
                )));
            }
            if let Some(prev) = owner.insert(o.observer, o.server) {
                if prev != o.server {
                    return Err(Error::Data(format!(
                        "observer {} is attached to servers {prev} and {}",
                        o.observer, o.server
                    )));
                }
            }
            by_server.entry(o.server).or_default().push(o);
        }
        if by_server.is_empty() {
            return Err(Error::Data("no observations".into()));
        }
        let mut servers = Vec::new();
        let mut server_ids = Vec::new();
        for (sid, obs) in by_server {
            let mut sum = vec![T::zero(); rows * cols];
            let mut count = vec![0usize; rows * cols];
            let mut raw = Vec::with_capacity(obs.len());
            let mut observers: Vec<u64> = obs.iter().map(|o| o.observer).collect();
            observers.sort_unstable();
            observers.dedup();
            for o in obs {
                let cell = o.row * cols + o.col;
                sum[cell] += o.value;
                count[cell] += 1;
                raw.push((cell, o.value));
            }
            let observed = sum
                .iter()
                .zip(&count)
                .map(|(&s, &c)| (c > 0).then(|| s / T::from_usize_lossy(c)))
                .collect();
            servers.push(ObservationShard {
                observed,
                raw,
                observers,
            });
            server_ids.push(sid);
        }
        Ok(Self {
            rows,
            cols,
            servers,
            server_ids,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn servers(&self) -> &[ObservationShard<T>] {
        &self.servers
    }

    /// Original server identifiers, in server-index order.
    pub fn server_ids(&self) -> &[u64] {
        &self.server_ids
    }

    /// Mean of all observations of a cell across servers, if any.
    pub fn pooled(&self) -> Vec<Option<T>> {
        let mut sum = vec![T::zero(); self.cells()];
        let mut count = vec![0usize; self.cells()];
        for s in &self.servers {
            for &(cell, v) in &s.raw {
                sum[cell] += v;
                count[cell] += 1;
            }
        }
        sum.into_iter()
            .zip(count)
            .map(|(s, c)| (c > 0).then(|| s / T::from_usize_lossy(c)))
            .collect()
    }

    /// Reads `observer_id, server_id, row, col, value` triplets. Dimensions
    /// default to one past the largest index seen.
    pub fn from_csv_reader<R: Read>(input: R, rows: Option<usize>, cols: Option<usize>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = rdr.headers()?.clone();
        let expected = ["observer_id", "server_id", "row", "col", "value"];
        if headers.iter().ne(expected.iter().copied()) {
            return Err(Error::Data(format!(
                "expected header {}, got {:?}",
                expected.join(","),
                headers
            )));
        }
        let mut obs = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| Error::Data(format!("line {}: invalid {what}", line + 2));
            let value: f64 = rec[4].parse().map_err(|_| bad("value"))?;
            obs.push(Observation {
                observer: rec[0].parse().map_err(|_| bad("observer_id"))?,
                server: rec[1].parse().map_err(|_| bad("server_id"))?,
                row: rec[2].parse().map_err(|_| bad("row"))?,
                col: rec[3].parse().map_err(|_| bad("col"))?,
                value: T::lit(value),
            });
        }
        let rows = rows.unwrap_or_else(|| obs.iter().map(|o| o.row + 1).max().unwrap_or(0));
        let cols = cols.unwrap_or_else(|| obs.iter().map(|o| o.col + 1).max().unwrap_or(0));
        Self::new(rows, cols, &obs)
    }

    pub fn from_csv_path(path: &Path, rows: Option<usize>, cols: Option<usize>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?, rows, cols)
    }
}

/// `θ = U Vᵀ` with the singular values folded into `U`.
#[derive(Clone, Debug)]
pub struct LowRankTheta<T> {
    u: Matrix<T>,
    v: Matrix<T>,
    dense: OnceLock<Matrix<T>>,
}

impl<T: Scalar> PartialEq for LowRankTheta<T> {
    fn eq(&self, other: &Self) -> bool {
        self.u == other.u && self.v == other.v
    }
}

impl<T: Scalar> LowRankTheta<T> {
    pub fn new(u: Matrix<T>, v: Matrix<T>) -> Result<Self> {
        if u.cols() != v.cols() {
            return Err(Error::Dimension {
                expected: u.cols(),
                got: v.cols(),
            });
        }
        Ok(Self {
            u,
            v,
            dense: OnceLock::new(),
        })
    }

    pub fn rank(&self) -> usize {
        self.u.cols()
    }

    pub fn u(&self) -> &Matrix<T> {
        &self.u
    }

    pub fn v(&self) -> &Matrix<T> {
        &self.v
    }

    /// Dense `J × L` matrix, computed on first use.
    pub fn matrix(&self) -> &Matrix<T> {
        self.dense.get_or_init(|| self.u.matmul(&self.v.transpose()))
    }
}

/// Best rank-`rank` approximation of `s` in Frobenius norm.
pub fn missem_mstep<T: Scalar>(s: &Matrix<T>, rank: usize) -> Result<LowRankTheta<T>> {
    if rank == 0 || rank > s.rows().min(s.cols()) {
        return Err(Error::Config(format!(
            "rank {rank} must lie in [1, {}]",
            s.rows().min(s.cols())
        )));
    }
    if !s.is_finite() {
        return Err(Error::NonFinite("imputation statistic"));
    }
    let d = svd(s);
    let u = Matrix::from_fn(s.rows(), rank, |j, k| d.u[(j, k)] * d.singular_values[k]);
    let v = Matrix::from_fn(s.cols(), rank, |l, k| d.v[(l, k)]);
    LowRankTheta::new(u, v)
}

/// Uniform draw of `b` distinct cells out of `cells`, in ascending order.
pub fn sample_cells<R: Rng + ?Sized>(cells: usize, b: usize, rng: &mut R) -> Result<Vec<usize>> {
    if b == 0 || b > cells {
        return Err(Error::Config(format!("cell batch {b} must lie in [1, {cells}]")));
    }
    if b == cells {
        return Ok((0..cells).collect());
    }
    let mut v = sample(rng, cells, b).into_vec();
    v.sort_unstable();
    Ok(v)
}

/// Local increment `Δ_c = S_c − Ŝ − V_c` on `cells`, zero elsewhere.
pub fn missem_estep<T: Scalar>(
    shard: &ObservationShard<T>,
    s_hat: &[T],
    memory: &[T],
    theta: &LowRankTheta<T>,
    cells: &[usize],
) -> Result<Vec<T>> {
    let grid = shard.observed.len();
    if s_hat.len() != grid || memory.len() != grid || theta.matrix().as_slice().len() != grid {
        return Err(Error::Dimension {
            expected: grid,
            got: s_hat.len(),
        });
    }
    let th = theta.matrix();
    let mut delta = vec![T::zero(); grid];
    for &cell in cells {
        if cell >= grid {
            return Err(Error::ExampleIndex {
                worker: 0,
                index: cell,
                examples: grid,
            });
        }
        delta[cell] = shard.cell_statistic(cell, th) - s_hat[cell] - memory[cell];
    }
    Ok(delta)
}

/// The imputation problem as a [`LatentModel`]; each server holds a single
/// "example" whose statistic is the whole grid `s̄_c(θ)`.
#[derive(Clone, Debug)]
pub struct MissingDataModel<T> {
    pub data: MissingDataset<T>,
    pub rank: usize,
}

impl<T: Scalar> MissingDataModel<T> {
    pub fn grid(&self, s: &SufficientStatistic<T>) -> Result<Matrix<T>> {
        Matrix::from_row_major(self.data.rows, self.data.cols, s.as_slice().to_vec())
    }
}

impl<T: Scalar> LatentModel<T> for MissingDataModel<T> {
    type Theta = LowRankTheta<T>;

    fn stat_dim(&self) -> usize {
        self.data.cells()
    }

    fn num_workers(&self) -> usize {
        self.data.servers.len()
    }

    fn examples(&self, _worker: usize) -> usize {
        1
    }

    fn accumulate_example(&self, worker: usize, _example: usize, theta: &Self::Theta, w: T, out: &mut [T]) -> Result<()> {
        let th = theta.matrix();
        let shard = &self.data.servers[worker];
        for (cell, o) in out.iter_mut().enumerate() {
            *o += w * shard.cell_statistic(cell, th);
        }
        Ok(())
    }

    fn m_step(&self, s: &SufficientStatistic<T>) -> Result<Self::Theta> {
        s.ensure_dim(self.stat_dim())?;
        missem_mstep(&self.grid(s)?, self.rank)
    }

    /// `n⁻¹ Σ_c ½ Σ_{observations of c} (x − θ_cell)²`.
    fn objective_at(&self, theta: &Self::Theta) -> Result<T> {
        let th = theta.matrix().as_slice();
        let per: Vec<SufficientStatistic<T>> = self
            .data
            .servers
            .iter()
            .map(|s| {
                let v = s.raw.iter().fold(T::zero(), |acc, &(cell, x)| acc + (x - th[cell]) * (x - th[cell]));
                SufficientStatistic::from_vec(vec![T::lit(0.5) * v])
            })
            .collect();
        let refs: Vec<_> = per.iter().collect();
        Ok(pairwise_mean(&refs, 1)[0])
    }

    fn encode_theta(&self, theta: &Self::Theta) -> Vec<T> {
        let mut out = theta.u.as_slice().to_vec();
        out.extend_from_slice(theta.v.as_slice());
        out
    }

    fn decode_theta(&self, flat: &[T]) -> Result<Self::Theta> {
        let (j, l, r) = (self.data.rows, self.data.cols, self.rank);
        if flat.len() != (j + l) * r {
            return Err(Error::Dimension {
                expected: (j + l) * r,
                got: flat.len(),
            });
        }
        LowRankTheta::new(
            Matrix::from_row_major(j, r, flat[..j * r].to_vec())?,
            Matrix::from_row_major(l, r, flat[j * r..].to_vec())?,
        )
    }
}

/// Starting point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissInit {
    /// `Ŝ_0 = s̄(0)`.
    Zero,
    /// `Ŝ_0 = s̄(θ_0)` with `θ_0` the rank-`r` approximation of the pooled
    /// observations (zero-filled) divided by the observed fraction.
    Spectral,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissEmConfig<T> {
    pub rank: usize,
    pub gamma: StepSize<T>,
    pub alpha: T,
    /// Cells drawn per server and round.
    pub batch: usize,
    /// Number of rounds.
    pub rounds: usize,
    pub init: MissInit,
    pub memory_init: MemoryInit,
    pub quantizer: QuantizerSpec,
    pub seed: u64,
    pub diagnostics_every: usize,
    pub memory_gap_every: usize,
}

impl<T: Scalar> Default for MissEmConfig<T> {
    fn default() -> Self {
        Self {
            rank: 2,
            gamma: StepSize::Constant(T::lit(0.1)),
            alpha: T::lit(0.5),
            batch: 100,
            rounds: 1000,
            init: MissInit::Spectral,
            memory_init: MemoryInit::MeanField,
            quantizer: QuantizerSpec::Identity,
            seed: 0,
            diagnostics_every: 10,
            memory_gap_every: 0,
        }
    }
}

impl<T: Scalar> MissEmConfig<T> {
    /// Rounds needed for `epochs` passes of `n·J·L` cell evaluations.
    pub fn rounds_for_epochs(epochs: usize, cells: usize, batch: usize) -> usize {
        (epochs * cells).div_ceil(batch.max(1))
    }

    pub fn validate(&self, data: &MissingDataset<T>) -> Result<()> {
        if self.rank == 0 || self.rank > data.rows.min(data.cols) {
            return Err(Error::Config(format!(
                "rank {} must lie in [1, {}]",
                self.rank,
                data.rows.min(data.cols)
            )));
        }
        if self.batch == 0 || self.batch > data.cells() {
            return Err(Error::Config(format!(
                "cell batch {} must lie in [1, {}]",
                self.batch,
                data.cells()
            )));
        }
        match &self.gamma {
            StepSize::Constant(g) if g.is_finite() && *g > T::zero() => {}
            StepSize::Schedule(v) if !v.is_empty() && v.iter().all(|g| g.is_finite() && *g > T::zero()) => {}
            _ => return Err(Error::Config("step sizes must be positive and finite".into())),
        }
        if !(self.alpha.is_finite() && self.alpha >= T::zero()) {
            return Err(Error::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        self.quantizer.validate(data.cells())
    }
}

/// Output of a FedMissEM run.
#[derive(Clone, Debug)]
pub struct MissEmRun<T> {
    pub trace: Vec<RoundTrace>,
    pub s_hat: SufficientStatistic<T>,
    pub theta: LowRankTheta<T>,
    /// Pooled observations where available, `θ̂` elsewhere.
    pub imputed: Matrix<T>,
    pub trend: Vec<TrendPoint<T>>,
    /// Largest `max_cell |V − n⁻¹ Σ_c V_c|` seen after any round.
    pub memory_mean_gap: f64,
}

/// Per-column aggregate of the estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendPoint<T> {
    pub col: usize,
    /// `Σ_j θ̂_{jl}`.
    pub summed_estimate: T,
    /// Rows of this column that nobody observed.
    pub missing_count: usize,
}

pub fn trend<T: Scalar>(data: &MissingDataset<T>, theta: &LowRankTheta<T>) -> Vec<TrendPoint<T>> {
    let th = theta.matrix();
    let pooled = data.pooled();
    (0..data.cols)
        .map(|l| TrendPoint {
            col: l,
            summed_estimate: (0..data.rows).fold(T::zero(), |acc, j| acc + th[(j, l)]),
            missing_count: (0..data.rows).filter(|&j| pooled[j * data.cols + l].is_none()).count(),
        })
        .collect()
}

fn imputed<T: Scalar>(data: &MissingDataset<T>, theta: &LowRankTheta<T>) -> Matrix<T> {
    let th = theta.matrix();
    let pooled = data.pooled();
    Matrix::from_fn(data.rows, data.cols, |j, l| pooled[j * data.cols + l].unwrap_or(th[(j, l)]))
}

fn initial_statistic<T: Scalar>(model: &MissingDataModel<T>, init: MissInit) -> Result<SufficientStatistic<T>> {
    let data = &model.data;
    let theta = match init {
        MissInit::Zero => LowRankTheta::new(
            Matrix::zeros(data.rows, model.rank),
            Matrix::zeros(data.cols, model.rank),
        )?,
        MissInit::Spectral => {
            let pooled = data.pooled();
            let seen = pooled.iter().filter(|v| v.is_some()).count().max(1);
            let scale = T::from_usize_lossy(data.cells()) / T::from_usize_lossy(seen);
            let z = Matrix::from_fn(data.rows, data.cols, |j, l| {
                pooled[j * data.cols + l].map(|v| v * scale).unwrap_or_else(T::zero)
            });
            missem_mstep(&z, model.rank)?
        }
    };
    crate::model::sbar(model, &theta)
}

/// Runs FedMissEM from the configured starting point.
pub fn run_missem<T: Scalar>(data: &MissingDataset<T>, config: &MissEmConfig<T>) -> Result<MissEmRun<T>> {
    config.validate(data)?;
    let model = MissingDataModel {
        data: data.clone(),
        rank: config.rank,
    };
    let n = data.servers.len();
    let grid = data.cells();
    let nt = T::from_usize_lossy(n);
    let norm = (n * grid) as f64;

    let mut s_hat = initial_statistic(&model, config.init)?;
    let mut ce = (n * grid) as u64;
    let mut memories: Vec<SufficientStatistic<T>> = match config.memory_init {
        MemoryInit::Zeros => vec![SufficientStatistic::zeros(grid); n],
        MemoryInit::MeanField => {
            let theta = model.m_step(&s_hat)?;
            ce += (n * grid) as u64;
            crate::model::local_statistics(&model, &theta)?
                .into_iter()
                .map(|s| s.sub(&s_hat))
                .collect()
        }
    };
    let refs: Vec<_> = memories.iter().collect();
    let mut memory = pairwise_mean(&refs, grid);
    let mut bits = 0u64;
    let mut memory_mean_gap = 0.0f64;
    let mut trace = Vec::with_capacity(config.rounds);

    for k in 0..config.rounds as u64 {
        let theta = model.m_step(&s_hat)?;
        let want_field = diagnostics_due(config.diagnostics_every, k);
        let want_gap = diagnostics_due(config.memory_gap_every, k);
        let (mut norm_h_sq, mut objective, mut memory_gap) = (None, None, None);
        if want_field || want_gap {
            let fields = crate::model::evaluate_fields(&model, &s_hat, &theta)?;
            if want_field {
                norm_h_sq = Some(fields.mean.norm_sq().as_f64());
                objective = Some(model.objective_at(&theta)?.as_f64());
            }
            if want_gap {
                let mems: Vec<_> = memories.iter().collect();
                memory_gap = Some(memory_gap_of(&fields.local, &mems));
            }
        }

        let mut increments = Vec::with_capacity(n);
        for (c, shard) in data.servers.iter().enumerate() {
            let cells = sample_cells(grid, config.batch, &mut stream(config.seed, c, k, Purpose::Batch))?;
            let delta = missem_estep(shard, s_hat.as_slice(), memories[c].as_slice(), &theta, &cells)?;
            let q = quantize(&config.quantizer, &delta, &mut stream(config.seed, c, k, Purpose::Quant))?;
            bits += q.bit_cost;
            ce += cells.len() as u64;
            increments.push(q.decode());
        }
        let refs: Vec<_> = increments.iter().collect();
        let sum = pairwise_sum(&refs, grid);
        let mut field = sum.scaled(T::one() / nt);
        field.add_assign(&memory);
        s_hat.axpy(config.gamma.at(k), &field);
        s_hat.ensure_finite("server estimate")?;
        for (m, d) in memories.iter_mut().zip(&increments) {
            m.axpy(config.alpha, d);
        }
        memory.axpy(config.alpha / nt, &sum);
        let refs: Vec<_> = memories.iter().collect();
        let gap = pairwise_mean(&refs, grid).sub(&memory).max_abs().as_f64();
        let scale = 1.0 + memory.max_abs().as_f64();
        if gap > T::epsilon().as_f64().sqrt() * scale {
            return Err(Error::InconsistentState(format!(
                "server memory drifted from the mean of server memories by {gap:e}"
            )));
        }
        memory_mean_gap = memory_mean_gap.max(gap);

        trace.push(RoundTrace {
            algo: Algo::Missem,
            round: k,
            outer: None,
            inner: None,
            epoch: ce as f64 / norm,
            participants: n,
            norm_big_h_sq: Some(field.norm_sq().as_f64()),
            norm_h_sq,
            objective,
            bits,
            ce_count: ce,
            memory_gap,
        });
    }
    let theta = model.m_step(&s_hat)?;
    let imputed = imputed(data, &theta);
    let trend = trend(data, &theta);
    Ok(MissEmRun {
        trace,
        s_hat,
        theta,
        imputed,
        trend,
        memory_mean_gap,
    })
}

/// Synthetic low-rank problem.
#[derive(Clone, Debug)]
pub struct MissingSynthetic<T> {
    pub truth: Matrix<T>,
    pub data: MissingDataset<T>,
}

/// Parameters of [`generate_missing`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissingSpec {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    /// Probability that a cell is observed (by one observer).
    pub observed_fraction: f64,
    pub noise: f64,
    pub servers: usize,
    pub observers: usize,
}

/// Ground truth `U* V*ᵀ` with standard normal factors. Each cell is observed
/// independently with the configured probability by one uniformly chosen
/// observer, with Gaussian noise; observer `o` belongs to server
/// `o mod servers`.
pub fn generate_missing<T: Scalar>(spec: &MissingSpec, seed: u64) -> Result<MissingSynthetic<T>> {
    if spec.servers == 0 || spec.observers < spec.servers {
        return Err(Error::Config("need at least one observer per server".into()));
    }
    if !(0.0..=1.0).contains(&spec.observed_fraction) || !(spec.noise >= 0.0) {
        return Err(Error::Config("observed fraction must lie in [0, 1] and noise be non-negative".into()));
    }
    let mut rng = stream(seed, 0, 0, Purpose::Data);
    let mut normal = || T::lit(rng.sample::<f64, _>(StandardNormal));
    let u = Matrix::from_fn(spec.rows, spec.rank, |_, _| normal());
    let v = Matrix::from_fn(spec.cols, spec.rank, |_, _| normal());
    let truth = u.matmul(&v.transpose());
    let mut rng = stream(seed, 1, 0, Purpose::Data);
    let mut obs = Vec::new();
    for j in 0..spec.rows {
        for l in 0..spec.cols {
            if rng.random::<f64>() < spec.observed_fraction {
                let observer = rng.random_range(0..spec.observers) as u64;
                let eps: f64 = rng.sample(StandardNormal);
                obs.push(Observation {
                    observer,
                    server: observer % spec.servers as u64,
                    row: j,
                    col: l,
                    value: truth[(j, l)] + T::lit(spec.noise * eps),
                });
            }
        }
    }
    let data = MissingDataset::new(spec.rows, spec.cols, &obs)?;
    Ok(MissingSynthetic { truth, data })
}

/// `‖a − b‖_F / ‖b‖_F`.
pub fn relative_error<T: Scalar>(estimate: &Matrix<T>, truth: &Matrix<T>) -> T {
    estimate.sub(truth).frobenius_norm() / truth.frobenius_norm()
}

/// Writes `col,summed_estimate,missing_count`.
pub fn write_trend_csv<T: Scalar>(path: &Path, trend: &[TrendPoint<T>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["col", "summed_estimate", "missing_count"])?;
    for t in trend {
        w.write_record([
            t.col.to_string(),
            t.summed_estimate.as_f64().to_string(),
            t.missing_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `row,col,value,observed` for every cell.
pub fn write_imputed_csv<T: Scalar>(path: &Path, data: &MissingDataset<T>, imputed: &Matrix<T>) -> Result<()> {
    let pooled = data.pooled();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "col", "value", "observed"])?;
    for j in 0..imputed.rows() {
        for l in 0..imputed.cols() {
            w.write_record([
                j.to_string(),
                l.to_string(),
                imputed[(j, l)].as_f64().to_string(),
                pooled[j * imputed.cols() + l].is_some().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
