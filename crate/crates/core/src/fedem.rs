//! FedEM: compressed federated EM with per-worker memories and Bernoulli
//! partial participation.
//!
//! Round `k`, with `θ = T(Ŝ_k)` broadcast by the server. Each worker joins
//! independently with probability `p`; a participating worker `i` draws the
//! minibatch statistic `S_i`, forms `Δ_i = S_i − V_i − Ŝ_k`, sends
//! `Q_i = Quant(Δ_i)` and sets `V_i ← V_i + α Q_i`. The server computes
//!
//! ```text
//! H = V + (n p)⁻¹ Σ_{i joined} Q_i
//! Ŝ_{k+1} = Ŝ_k + γ_{k+1} H
//! V ← V + (α / n) Σ_{i joined} Q_i
//! ```
//!
//! The naive variant drops the memories: `Δ_i = S_i − Ŝ_k` and
//! `H = (n p)⁻¹ Σ Q_i`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compression::{quantize, QuantizerSpec};
use crate::error::{Error, Result};
use crate::harness::trace::{Algo, RoundTrace};
use crate::model::{batch_statistic, evaluate_fields, sbar_i, LatentModel};
use crate::rng::{stream, Purpose};
use crate::scalar::Scalar;
use crate::stat::{pairwise_mean, pairwise_sum, SufficientStatistic};

/// Step-size sequence `γ_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepSize<T> {
    Constant(T),
    /// `γ_{k+1} = values[k]`; the last value repeats.
    Schedule(Vec<T>),
}

impl<T: Scalar> StepSize<T> {
    pub fn at(&self, round: u64) -> T {
        match self {
            StepSize::Constant(g) => *g,
            StepSize::Schedule(v) => v[(round as usize).min(v.len() - 1)],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |g: &T| g.is_finite() && *g > T::zero();
        match self {
            StepSize::Constant(g) if ok(g) => Ok(()),
            StepSize::Schedule(v) if !v.is_empty() && v.iter().all(ok) => Ok(()),
            _ => Err(Error::Config("step sizes must be positive and finite".into())),
        }
    }
}

/// Minibatch oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchMode {
    /// `b` indices drawn uniformly with replacement.
    WithReplacement,
    /// Deterministic full local pass (exact `s̄_i`); `b` is ignored.
    FullPass,
}

/// Initial memories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemoryInit {
    /// `V_{0,i} = h_i(Ŝ_0)`, one full pass.
    MeanField,
    Zeros,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    FedEm,
    /// No memories: compress `S_i − Ŝ` directly.
    Naive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FedEmConfig<T> {
    pub gamma: StepSize<T>,
    pub alpha: T,
    /// Participation probability `p ∈ (0, 1]`.
    pub participation: T,
    pub batch: usize,
    pub batch_mode: BatchMode,
    /// Number of rounds `k_max`.
    pub rounds: usize,
    pub memory_init: MemoryInit,
    pub seed: u64,
    pub quantizer: QuantizerSpec,
    pub variant: Variant,
    /// Exact `‖h(Ŝ)‖²` (and `W`) every this many rounds; 0 disables.
    pub diagnostics_every: usize,
    /// Memory gap `G` every this many rounds; 0 disables.
    pub memory_gap_every: usize,
    /// Require `0 < α(1 + ω) ≤ 1`.
    pub theory_mode: bool,
    /// Evaluate workers concurrently (results are identical either way).
    pub parallel: bool,
}

impl<T: Scalar> Default for FedEmConfig<T> {
    fn default() -> Self {
        Self {
            gamma: StepSize::Constant(T::lit(0.01)),
            alpha: T::lit(0.01),
            participation: T::one(),
            batch: 1,
            batch_mode: BatchMode::WithReplacement,
            rounds: 100,
            memory_init: MemoryInit::MeanField,
            seed: 0,
            quantizer: QuantizerSpec::Identity,
            variant: Variant::FedEm,
            diagnostics_every: 1,
            memory_gap_every: 10,
            theory_mode: false,
            parallel: false,
        }
    }
}

impl<T: Scalar> FedEmConfig<T> {
    pub fn validate<M: LatentModel<T>>(&self, model: &M) -> Result<()> {
        self.gamma.validate()?;
        let p = self.participation;
        if !(p > T::zero() && p <= T::one()) {
            return Err(Error::Config(format!("participation must lie in (0, 1], got {p}")));
        }
        if !(self.alpha.is_finite() && self.alpha >= T::zero()) {
            return Err(Error::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        self.quantizer.validate(model.stat_dim())?;
        if self.theory_mode {
            let omega = T::lit(self.quantizer.omega(model.stat_dim()));
            if !(self.alpha > T::zero()) || self.alpha * (T::one() + omega) > T::one() + T::epsilon() {
                return Err(Error::Config(format!(
                    "alpha = {} violates 0 < alpha(1 + omega) <= 1 with omega = {omega}",
                    self.alpha
                )));
            }
        }
        if self.batch_mode == BatchMode::WithReplacement {
            for i in 0..model.num_workers() {
                let m = model.examples(i);
                if self.batch == 0 || self.batch > m {
                    return Err(Error::Config(format!(
                        "batch size {} must lie in [1, {m}] (worker {i})",
                        self.batch
                    )));
                }
            }
        }
        if model.num_workers() == 0 {
            return Err(Error::Config("at least one worker is required".into()));
        }
        Ok(())
    }

    pub fn algo(&self) -> Algo {
        match self.variant {
            Variant::Naive => Algo::Naive,
            Variant::FedEm if self.participation < T::one() => Algo::FedemPp,
            Variant::FedEm => Algo::Fedem,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServerState<T> {
    pub s_hat: SufficientStatistic<T>,
    /// Aggregated memory `V = n⁻¹ Σ V_i`.
    pub memory: SufficientStatistic<T>,
    pub round: u64,
    pub bits: u64,
    pub ce_count: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkerState<T> {
    pub index: usize,
    pub memory: SufficientStatistic<T>,
}

/// Largest deviation `‖V − n⁻¹ Σ V_i‖_∞`.
pub fn memory_mean_gap<T: Scalar>(server: &ServerState<T>, workers: &[WorkerState<T>]) -> T {
    let refs: Vec<_> = workers.iter().map(|w| &w.memory).collect();
    let mean = pairwise_mean(&refs, server.memory.len());
    mean.sub(&server.memory).max_abs()
}

/// Fails if the server memory drifted away from the mean of worker memories
/// by more than round-off can explain.
pub fn check_memory_consistency<T: Scalar>(server: &ServerState<T>, workers: &[WorkerState<T>]) -> Result<()> {
    let gap = memory_mean_gap(server, workers);
    let scale = T::one() + server.memory.max_abs();
    if gap <= T::epsilon().sqrt() * scale {
        Ok(())
    } else {
        Err(Error::InconsistentState(format!(
            "server memory differs from the worker mean by {gap}"
        )))
    }
}

/// Minibatch statistic `S_i` at a broadcast `θ`. Returns the statistic and
/// the number of conditional expectations evaluated.
pub fn oracle_at_theta<T: Scalar, M: LatentModel<T>>(
    model: &M,
    worker: usize,
    theta: &M::Theta,
    batch: usize,
    mode: BatchMode,
    rng: &mut ChaCha8Rng,
) -> Result<(SufficientStatistic<T>, u64)> {
    match mode {
        BatchMode::FullPass => Ok((sbar_i(model, worker, theta)?, model.examples(worker) as u64)),
        BatchMode::WithReplacement => {
            let idx = sample_batch(model.examples(worker), batch, rng)?;
            Ok((batch_statistic(model, worker, theta, &idx)?, batch as u64))
        }
    }
}

/// `b⁻¹ Σ_{j∈B} s̄_ij ∘ T(Ŝ)` over a fresh batch.
pub fn oracle_statistic<T: Scalar, M: LatentModel<T>>(
    model: &M,
    worker: usize,
    s_hat: &SufficientStatistic<T>,
    batch: usize,
    mode: BatchMode,
    rng: &mut ChaCha8Rng,
) -> Result<SufficientStatistic<T>> {
    let theta = model.m_step(s_hat)?;
    Ok(oracle_at_theta(model, worker, &theta, batch, mode, rng)?.0)
}

/// `b` indices uniform on `[0, m)`, with replacement.
pub fn sample_batch<R: Rng + ?Sized>(m: usize, b: usize, rng: &mut R) -> Result<Vec<usize>> {
    if b == 0 || b > m {
        return Err(Error::Config(format!("batch size {b} must lie in [1, {m}]")));
    }
    Ok((0..b).map(|_| rng.random_range(0..m)).collect())
}

/// What one worker reports in a round.
struct Report<T> {
    joined: bool,
    quantized: Option<SufficientStatistic<T>>,
    bits: u64,
    ce: u64,
}

fn worker_report<T: Scalar, M: LatentModel<T>>(
    model: &M,
    config: &FedEmConfig<T>,
    s_hat: &SufficientStatistic<T>,
    theta: &M::Theta,
    worker: &WorkerState<T>,
    round: u64,
) -> Result<Report<T>> {
    let i = worker.index;
    let joined = if config.participation >= T::one() {
        true
    } else {
        let u: f64 = stream(config.seed, i, round, Purpose::Participation).random();
        T::lit(u) < config.participation
    };
    if !joined {
        return Ok(Report {
            joined,
            quantized: None,
            bits: 0,
            ce: 0,
        });
    }
    let mut batch_rng = stream(config.seed, i, round, Purpose::Batch);
    let (s, ce) = oracle_at_theta(model, i, theta, config.batch, config.batch_mode, &mut batch_rng)?;
    let mut delta = s.sub(s_hat);
    if config.variant == Variant::FedEm {
        delta.sub_assign(&worker.memory);
    }
    delta.ensure_finite("worker increment")?;
    let mut quant_rng = stream(config.seed, i, round, Purpose::Quant);
    let c = quantize(&config.quantizer, delta.as_slice(), &mut quant_rng)?;
    Ok(Report {
        joined,
        quantized: Some(c.decode()),
        bits: c.bit_cost,
        ce,
    })
}

/// The server's field estimate for one round, before any state change.
#[derive(Clone, Debug)]
pub struct FieldDraw<T> {
    pub field: SufficientStatistic<T>,
    /// Worker-ordered quantized increments of the participants.
    pub increments: Vec<(usize, SufficientStatistic<T>)>,
    pub sum: SufficientStatistic<T>,
    pub bits: u64,
    pub ce: u64,
}

/// Draws `H_{k+1}` (with the randomness of round `round`) at a pinned state.
pub fn draw_field<T: Scalar, M: LatentModel<T>>(
    model: &M,
    config: &FedEmConfig<T>,
    server: &ServerState<T>,
    workers: &[WorkerState<T>],
    theta: &M::Theta,
    round: u64,
) -> Result<FieldDraw<T>> {
    let q = model.stat_dim();
    let run = |w: &WorkerState<T>| worker_report(model, config, &server.s_hat, theta, w, round);
    let reports: Vec<Report<T>> = if config.parallel {
        workers.par_iter().map(run).collect::<Result<_>>()?
    } else {
        workers.iter().map(run).collect::<Result<_>>()?
    };
    let mut increments = Vec::new();
    let (mut bits, mut ce) = (0u64, 0u64);
    for (w, r) in workers.iter().zip(reports) {
        bits += r.bits;
        ce += r.ce;
        if r.joined {
            increments.push((w.index, r.quantized.expect("participant reports an increment")));
        }
    }
    let refs: Vec<_> = increments.iter().map(|(_, d)| d).collect();
    let sum = pairwise_sum(&refs, q);
    let n = T::from_usize_lossy(workers.len());
    let mut field = sum.scaled(T::one() / (n * config.participation));
    if config.variant == Variant::FedEm {
        field.add_assign(&server.memory);
    }
    Ok(FieldDraw {
        field,
        increments,
        sum,
        bits,
        ce,
    })
}

/// Exact diagnostics at the current iterate.
struct Diagnostics {
    norm_h_sq: Option<f64>,
    objective: Option<f64>,
    memory_gap: Option<f64>,
}

pub(crate) fn diagnostics_due(every: usize, round: u64) -> bool {
    every > 0 && round.is_multiple_of(every as u64)
}

fn diagnose<T: Scalar, M: LatentModel<T>>(
    model: &M,
    s_hat: &SufficientStatistic<T>,
    theta: &M::Theta,
    memories: &[&SufficientStatistic<T>],
    want_field: bool,
    want_gap: bool,
) -> Result<Diagnostics> {
    if !want_field && !want_gap {
        return Ok(Diagnostics {
            norm_h_sq: None,
            objective: None,
            memory_gap: None,
        });
    }
    let fields = evaluate_fields(model, s_hat, theta)?;
    let memory_gap = want_gap.then(|| memory_gap_of(&fields.local, memories));
    let (norm_h_sq, objective) = if want_field {
        (
            Some(fields.mean.norm_sq().as_f64()),
            Some(model.objective_at(theta)?.as_f64()),
        )
    } else {
        (None, None)
    };
    Ok(Diagnostics {
        norm_h_sq,
        objective,
        memory_gap,
    })
}

/// `G = n⁻¹ Σ_i ‖V_i − h_i(Ŝ)‖²`.
pub fn memory_gap_of<T: Scalar>(local_fields: &[SufficientStatistic<T>], memories: &[&SufficientStatistic<T>]) -> f64 {
    let gaps: Vec<SufficientStatistic<T>> = local_fields
        .iter()
        .zip(memories)
        .map(|(h, v)| SufficientStatistic::from_vec(vec![v.distance(h).powi(2)]))
        .collect();
    let refs: Vec<_> = gaps.iter().collect();
    pairwise_mean(&refs, 1)[0].as_f64()
}

/// One FedEM round; updates the states in place and returns the trace row.
pub fn fedem_round<T: Scalar, M: LatentModel<T>>(
    model: &M,
    config: &FedEmConfig<T>,
    server: &mut ServerState<T>,
    workers: &mut [WorkerState<T>],
) -> Result<RoundTrace> {
    check_memory_consistency(server, workers)?;
    let k = server.round;
    let theta = model.m_step(&server.s_hat)?;
    let memories: Vec<_> = workers.iter().map(|w| &w.memory).collect();
    let diag = diagnose(
        model,
        &server.s_hat,
        &theta,
        &memories,
        diagnostics_due(config.diagnostics_every, k),
        diagnostics_due(config.memory_gap_every, k),
    )?;
    let draw = draw_field(model, config, server, workers, &theta, k)?;
    let gamma = config.gamma.at(k);
    let n = T::from_usize_lossy(workers.len());
    let mut next = server.s_hat.clone();
    next.axpy(gamma, &draw.field);
    next.ensure_finite("server estimate")?;
    if config.variant == Variant::FedEm {
        for (i, d) in &draw.increments {
            workers[*i].memory.axpy(config.alpha, d);
        }
        server.memory.axpy(config.alpha / n, &draw.sum);
    }
    server.s_hat = next;
    server.round += 1;
    server.bits += draw.bits;
    server.ce_count += draw.ce;
    Ok(RoundTrace {
        algo: config.algo(),
        round: k,
        outer: None,
        inner: None,
        epoch: server.ce_count as f64 / model.total_examples() as f64,
        participants: draw.increments.len(),
        norm_big_h_sq: Some(draw.field.norm_sq().as_f64()),
        norm_h_sq: diag.norm_h_sq,
        objective: diag.objective,
        bits: server.bits,
        ce_count: server.ce_count,
        memory_gap: diag.memory_gap,
    })
}

/// Initial server and worker states at `Ŝ_0`.
pub fn init_states<T: Scalar, M: LatentModel<T>>(
    model: &M,
    s_init: &SufficientStatistic<T>,
    memory_init: MemoryInit,
) -> Result<(ServerState<T>, Vec<WorkerState<T>>)> {
    s_init.ensure_dim(model.stat_dim())?;
    s_init.ensure_finite("initial estimate")?;
    let q = model.stat_dim();
    let n = model.num_workers();
    let (memories, ce) = match memory_init {
        MemoryInit::Zeros => (vec![SufficientStatistic::zeros(q); n], 0),
        MemoryInit::MeanField => {
            let theta = model.m_step(s_init)?;
            let local = (0..n)
                .map(|i| Ok(sbar_i(model, i, &theta)?.sub(s_init)))
                .collect::<Result<Vec<_>>>()?;
            (local, model.total_examples() as u64)
        }
    };
    let refs: Vec<_> = memories.iter().collect();
    let server = ServerState {
        s_hat: s_init.clone(),
        memory: pairwise_mean(&refs, q),
        round: 0,
        bits: 0,
        ce_count: ce,
    };
    let workers = memories
        .into_iter()
        .enumerate()
        .map(|(index, memory)| WorkerState { index, memory })
        .collect();
    Ok((server, workers))
}

/// Stateful FedEM driver.
pub struct FedEm<'a, T: Scalar, M: LatentModel<T>> {
    model: &'a M,
    config: FedEmConfig<T>,
    pub server: ServerState<T>,
    pub workers: Vec<WorkerState<T>>,
}

impl<'a, T: Scalar, M: LatentModel<T>> FedEm<'a, T, M> {
    pub fn new(model: &'a M, config: FedEmConfig<T>, s_init: &SufficientStatistic<T>) -> Result<Self> {
        config.validate(model)?;
        let memory_init = match config.variant {
            Variant::Naive => MemoryInit::Zeros,
            Variant::FedEm => config.memory_init,
        };
        let (server, workers) = init_states(model, s_init, memory_init)?;
        Ok(Self {
            model,
            config,
            server,
            workers,
        })
    }

    pub fn config(&self) -> &FedEmConfig<T> {
        &self.config
    }

    pub fn finished(&self) -> bool {
        self.server.round as usize >= self.config.rounds
    }

    pub fn step(&mut self) -> Result<RoundTrace> {
        fedem_round(self.model, &self.config, &mut self.server, &mut self.workers)
    }

    /// Runs the remaining rounds.
    pub fn run(&mut self) -> Result<Vec<RoundTrace>> {
        let mut trace = Vec::with_capacity(self.config.rounds);
        while !self.finished() {
            trace.push(self.step()?);
        }
        Ok(trace)
    }
}

/// Result of a complete run.
#[derive(Clone, Debug)]
pub struct FedEmRun<T> {
    pub trace: Vec<RoundTrace>,
    pub server: ServerState<T>,
    pub workers: Vec<WorkerState<T>>,
}

pub fn run_fedem<T: Scalar, M: LatentModel<T>>(
    model: &M,
    config: &FedEmConfig<T>,
    s_init: &SufficientStatistic<T>,
) -> Result<FedEmRun<T>> {
    let mut driver = FedEm::new(model, config.clone(), s_init)?;
    let trace = driver.run()?;
    Ok(FedEmRun {
        trace,
        server: driver.server,
        workers: driver.workers,
    })
}

/// `ω_p = ω + (1 − p)(1 + ω)/p`.
pub fn omega_p<T: Scalar>(omega: T, p: T) -> T {
    omega + (T::one() - p) * (T::one() + omega) / p
}

/// Largest constant step size covered by the convergence analysis:
/// `min(v_min / (2 L_Ẇ), p√n / (2√2 L (1+ω) √ω_p))`, the second term being
/// infinite when `ω_p = 0`.
pub fn gamma_max<T: Scalar>(v_min: T, l_dot_w: T, l: T, n: usize, omega: T, p: T) -> T {
    let two = T::lit(2.0);
    let first = v_min / (two * l_dot_w);
    let wp = omega_p(omega, p);
    if wp <= T::zero() {
        return first;
    }
    let second = p * T::from_usize_lossy(n).sqrt() / (two * two.sqrt() * l * (T::one() + omega) * wp.sqrt());
    first.min(second)
}

/// Step size balancing the initial gap against the noise floor over
/// `k_max` rounds, capped at `gamma_max`:
/// `min(√(ΔW n / (k_max L_Ẇ (1+5ω) σ²)), γ_max)`.
pub fn corollary_gamma<T: Scalar>(w0_gap: T, n: usize, k_max: T, l_dot_w: T, omega: T, sigma2: T, gamma_max: T) -> T {
    if sigma2 <= T::zero() {
        return gamma_max;
    }
    let five = T::lit(5.0);
    let first = (w0_gap * T::from_usize_lossy(n) / (k_max * l_dot_w * (T::one() + five * omega) * sigma2)).sqrt();
    first.min(gamma_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::model::toy::{AffineModel, ConstantModel};
    use crate::model::{exact_em_step, local_statistics};

    fn affine(n: usize, m: usize) -> AffineModel<f64> {
        let offsets = (0..n)
            .map(|i| {
                (0..m)
                    .map(|j| vec![i as f64 - 1.0 + 0.1 * j as f64, (i * j) as f64 * 0.05 - 0.2])
                    .collect()
            })
            .collect();
        AffineModel {
            matrix: Matrix::from_row_major(2, 2, vec![0.4, 0.1, 0.0, 0.2]).unwrap(),
            offsets,
        }
    }

    fn exact_config() -> FedEmConfig<f64> {
        FedEmConfig {
            gamma: StepSize::Constant(1.0),
            alpha: 0.3,
            batch_mode: BatchMode::FullPass,
            rounds: 10,
            ..Default::default()
        }
    }

    #[test]
    fn full_batch_identity_round_is_exact_em() {
        let model = affine(3, 4);
        let s0 = SufficientStatistic::from_vec(vec![2.0, -1.0]);
        let run = run_fedem(&model, &exact_config(), &s0).unwrap();
        let mut s = s0;
        for _ in 0..10 {
            s = exact_em_step(&model, &s).unwrap();
        }
        assert!(run.server.s_hat.distance(&s) < 1e-12);
        assert_eq!(run.trace.len(), 10);
    }

    #[test]
    fn memories_play_no_role_without_compression() {
        let model = affine(4, 6);
        let s0 = SufficientStatistic::from_vec(vec![0.5, 0.5]);
        let base = FedEmConfig {
            gamma: StepSize::Constant(0.3),
            batch: 2,
            rounds: 25,
            seed: 4,
            ..Default::default()
        };
        let a = run_fedem(&model, &FedEmConfig { alpha: 0.1, ..base.clone() }, &s0).unwrap();
        let b = run_fedem(&model, &FedEmConfig { alpha: 0.9, ..base }, &s0).unwrap();
        assert!(a.server.s_hat.distance(&b.server.s_hat) < 1e-12);
    }

    #[test]
    fn zero_rounds_give_empty_trace() {
        let model = affine(2, 2);
        let cfg = FedEmConfig { rounds: 0, ..exact_config() };
        let run = run_fedem(&model, &cfg, &SufficientStatistic::zeros(2)).unwrap();
        assert!(run.trace.is_empty());
        assert_eq!(run.server.ce_count, 4);
    }

    #[test]
    fn mean_field_init_matches_local_fields() {
        let model = affine(3, 2);
        let s0 = SufficientStatistic::from_vec(vec![1.0, 1.0]);
        let (server, workers) = init_states(&model, &s0, MemoryInit::MeanField).unwrap();
        let locals = local_statistics(&model, &s0).unwrap();
        for (w, l) in workers.iter().zip(&locals) {
            assert_eq!(w.memory, l.sub(&s0));
        }
        assert!(memory_mean_gap(&server, &workers) < 1e-15);
    }

    #[test]
    fn inconsistent_memories_are_fatal() {
        let model = affine(2, 2);
        let mut driver = FedEm::new(&model, exact_config(), &SufficientStatistic::zeros(2)).unwrap();
        driver.workers[0].memory[0] += 1.0;
        assert!(matches!(driver.step(), Err(Error::InconsistentState(_))));
    }

    #[test]
    fn constant_model_oracle_is_constant() {
        let c = SufficientStatistic::from_vec(vec![1.0, -3.0]);
        let model = ConstantModel {
            value: c.clone(),
            workers: 2,
            examples: 5,
        };
        let mut rng = stream(1, 0, 0, Purpose::Batch);
        let s = oracle_statistic(&model, 1, &c, 3, BatchMode::WithReplacement, &mut rng).unwrap();
        assert!(s.distance(&c) < 1e-15);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let model = affine(2, 3);
        let bad = [
            FedEmConfig { participation: 0.0, ..Default::default() },
            FedEmConfig { participation: 1.5, ..Default::default() },
            FedEmConfig { batch: 4, ..Default::default() },
            FedEmConfig { gamma: StepSize::Constant(-1.0), ..Default::default() },
            FedEmConfig {
                theory_mode: true,
                alpha: 0.9,
                quantizer: QuantizerSpec::block2(vec![2]),
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(&model), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let model = affine(5, 8);
        let s0 = SufficientStatistic::from_vec(vec![0.1, 0.2]);
        let cfg = FedEmConfig {
            participation: 0.6,
            quantizer: QuantizerSpec::block2(vec![2]),
            batch: 3,
            rounds: 30,
            seed: 11,
            ..Default::default()
        };
        let a = run_fedem(&model, &cfg, &s0).unwrap();
        let b = run_fedem(&model, &FedEmConfig { parallel: true, ..cfg }, &s0).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.server, b.server);
    }

    #[test]
    fn step_size_reference_values() {
        assert_eq!(gamma_max(1.0, 1.0, 1.0, 8, 1.0, 1.0), 0.5);
        assert_eq!(gamma_max(1.0, 1.0, 0.1, 1000, 0.0, 1.0), 0.5);
        assert!((omega_p(1.0f64, 0.75) - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(corollary_gamma(1.0, 10, 100.0, 1.0, 1.0, 0.0, 0.3), 0.3);
    }
}
