//! VR-FedEM: FedEM with SPIDER-style local control statistics.
//!
//! Outer loop `t`, inner step `k`. Every worker keeps a control statistic
//! `S_i` estimating `s̄_i ∘ T(Ŝ_{t,k})`. It is reset to the full local mean
//! at the start of each outer loop and otherwise moved by batch differences
//!
//! ```text
//! S_i ← S_i + b⁻¹ Σ_{j∈B} (s̄_ij ∘ T(Ŝ_{t,k}) − s̄_ij ∘ T(Ŝ_{t,k−1}))
//! ```
//!
//! with the same batch `B` in both terms and `Ŝ_{t,−1} = Ŝ_{t,0}`. The
//! compressed memory update then proceeds as in FedEM with full
//! participation: `Δ_i = S_i − Ŝ_{t,k} − V_i`, `H = V + n⁻¹ Σ Quant(Δ_i)`.
//!
//! Cost accounting counts `2b` conditional expectations per worker and inner
//! step, plus one full pass per outer loop, i.e. `n m k_out + 2 n b k_in k_out`
//! for a complete run, regardless of the `cache` optimization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compression::{quantize, QuantizerSpec};
use crate::error::{Error, Result};
use crate::fedem::{check_memory_consistency, diagnostics_due, memory_gap_of, sample_batch, BatchMode, MemoryInit, ServerState, StepSize};
use crate::harness::trace::{Algo, RoundTrace};
use crate::model::{evaluate_fields, sbar_i, LatentModel};
use crate::rng::{stream, Purpose};
use crate::scalar::Scalar;
use crate::stat::{pairwise_mean, pairwise_sum, pairwise_sum_with, SufficientStatistic};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VrConfig<T> {
    pub outer: usize,
    pub inner: usize,
    pub batch: usize,
    pub batch_mode: BatchMode,
    /// Indexed by the global inner-step counter `t·k_in + k`.
    pub gamma: StepSize<T>,
    pub alpha: T,
    /// Must be 1: there is no partial participation in this scheme.
    pub participation: T,
    pub memory_init: MemoryInit,
    pub seed: u64,
    pub quantizer: QuantizerSpec,
    pub diagnostics_every: usize,
    pub memory_gap_every: usize,
    pub theory_mode: bool,
    pub parallel: bool,
    /// Skip evaluating the correction when `Ŝ_{t,k} = Ŝ_{t,k−1}` (it is
    /// exactly zero). The cost counter is unaffected.
    pub cache: bool,
}

impl<T: Scalar> Default for VrConfig<T> {
    fn default() -> Self {
        Self {
            outer: 10,
            inner: 20,
            batch: 5,
            batch_mode: BatchMode::WithReplacement,
            gamma: StepSize::Constant(T::lit(0.01)),
            alpha: T::lit(0.01),
            participation: T::one(),
            memory_init: MemoryInit::MeanField,
            seed: 0,
            quantizer: QuantizerSpec::Identity,
            diagnostics_every: 1,
            memory_gap_every: 10,
            theory_mode: false,
            parallel: false,
            cache: false,
        }
    }
}

impl<T: Scalar> VrConfig<T> {
    pub fn validate<M: LatentModel<T>>(&self, model: &M) -> Result<()> {
        if self.participation != T::one() {
            return Err(Error::Config(format!(
                "variance-reduced runs need full participation, got p = {}",
                self.participation
            )));
        }
        if self.outer == 0 {
            return Err(Error::Config("at least one outer loop is required".into()));
        }
        match &self.gamma {
            StepSize::Constant(g) if g.is_finite() && *g > T::zero() => {}
            StepSize::Schedule(v) if !v.is_empty() && v.iter().all(|g| g.is_finite() && *g > T::zero()) => {}
            _ => return Err(Error::Config("step sizes must be positive and finite".into())),
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

    fn batch_cost(&self, m: usize) -> u64 {
        match self.batch_mode {
            BatchMode::WithReplacement => self.batch as u64,
            BatchMode::FullPass => m as u64,
        }
    }
}

/// `b = ⌈k_in / (1 + ω)²⌉`, at least 1.
pub fn default_batch(k_in: usize, omega: f64) -> usize {
    ((k_in as f64 / (1.0 + omega).powi(2)).ceil() as usize).max(1)
}

/// `(v_min / L_Ẇ) / (1 + 4√2 (v_max / L_Ẇ)(L / √n)(1 + ω)√(ω + (1 + 10ω)/8))`.
pub fn vr_gamma<T: Scalar>(v_min: T, v_max: T, l_dot_w: T, l: T, n: usize, omega: T) -> T {
    let one = T::one();
    let root = (omega + (one + T::lit(10.0) * omega) / T::lit(8.0)).sqrt();
    let c = T::lit(4.0) * T::lit(2.0).sqrt() * (v_max / l_dot_w) * (l / T::from_usize_lossy(n).sqrt()) * (one + omega) * root;
    (v_min / l_dot_w) / (one + c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VrWorkerState<T> {
    pub index: usize,
    pub memory: SufficientStatistic<T>,
    /// Control statistic `S_{t,k,i}`.
    pub control: SufficientStatistic<T>,
}

/// Server state plus the previous iterate needed by the correction.
#[derive(Clone, Debug, PartialEq)]
pub struct VrServerState<T> {
    pub state: ServerState<T>,
    /// `Ŝ_{t,k−1}`.
    pub s_prev: SufficientStatistic<T>,
}

struct VrReport<T> {
    control: SufficientStatistic<T>,
    quantized: SufficientStatistic<T>,
    bits: u64,
}

/// `b⁻¹ Σ_{j∈B} (s̄_ij(θ) − s̄_ij(θ_prev))`.
fn batch_correction<T: Scalar, M: LatentModel<T>>(
    model: &M,
    worker: usize,
    theta: &M::Theta,
    theta_prev: &M::Theta,
    batch: &[usize],
) -> Result<SufficientStatistic<T>> {
    let minus = -T::one();
    let mut fill = |k: usize, buf: &mut [T]| {
        model.accumulate_example(worker, batch[k], theta, T::one(), buf)?;
        model.accumulate_example(worker, batch[k], theta_prev, minus, buf)
    };
    let mut v = pairwise_sum_with(batch.len(), model.stat_dim(), &mut fill)?;
    let inv = T::one() / T::from_usize_lossy(batch.len().max(1));
    v.iter_mut().for_each(|x| *x *= inv);
    Ok(SufficientStatistic::from_vec(v))
}

#[allow(clippy::too_many_arguments)]
fn vr_worker<T: Scalar, M: LatentModel<T>>(
    model: &M,
    config: &VrConfig<T>,
    s_hat: &SufficientStatistic<T>,
    theta: &M::Theta,
    theta_prev: &M::Theta,
    unchanged: bool,
    worker: &VrWorkerState<T>,
    round: u64,
) -> Result<VrReport<T>> {
    let i = worker.index;
    let mut control = worker.control.clone();
    if !(config.cache && unchanged) {
        let batch: Vec<usize> = match config.batch_mode {
            BatchMode::FullPass => (0..model.examples(i)).collect(),
            BatchMode::WithReplacement => {
                let mut rng = stream(config.seed, i, round, Purpose::Batch);
                sample_batch(model.examples(i), config.batch, &mut rng)?
            }
        };
        control.add_assign(&batch_correction(model, i, theta, theta_prev, &batch)?);
    }
    let mut delta = control.sub(s_hat);
    delta.sub_assign(&worker.memory);
    delta.ensure_finite("worker increment")?;
    let mut rng = stream(config.seed, i, round, Purpose::Quant);
    let c = quantize(&config.quantizer, delta.as_slice(), &mut rng)?;
    Ok(VrReport {
        control,
        quantized: c.decode(),
        bits: c.bit_cost,
    })
}

/// One inner step `(t, k) → (t, k+1)`; `t` is 1-based, `k` 0-based.
pub fn vr_inner_step<T: Scalar, M: LatentModel<T>>(
    model: &M,
    config: &VrConfig<T>,
    server: &mut VrServerState<T>,
    workers: &mut [VrWorkerState<T>],
    t: usize,
    k: usize,
) -> Result<RoundTrace> {
    {
        let plain: Vec<_> = workers
            .iter()
            .map(|w| crate::fedem::WorkerState {
                index: w.index,
                memory: w.memory.clone(),
            })
            .collect();
        check_memory_consistency(&server.state, &plain)?;
    }
    let round = ((t - 1) * config.inner + k) as u64;
    let q = model.stat_dim();
    let s_hat = server.state.s_hat.clone();
    let unchanged = server.s_prev == s_hat;
    let theta = model.m_step(&s_hat)?;
    let theta_prev = if unchanged { theta.clone() } else { model.m_step(&server.s_prev)? };

    let want_field = diagnostics_due(config.diagnostics_every, round);
    let want_gap = diagnostics_due(config.memory_gap_every, round);
    let (mut norm_h_sq, mut objective, mut memory_gap) = (None, None, None);
    if want_field || want_gap {
        let fields = evaluate_fields(model, &s_hat, &theta)?;
        if want_field {
            norm_h_sq = Some(fields.mean.norm_sq().as_f64());
            objective = Some(model.objective_at(&theta)?.as_f64());
        }
        if want_gap {
            let mems: Vec<_> = workers.iter().map(|w| &w.memory).collect();
            memory_gap = Some(memory_gap_of(&fields.local, &mems));
        }
    }

    let run = |w: &VrWorkerState<T>| vr_worker(model, config, &s_hat, &theta, &theta_prev, unchanged, w, round);
    let reports: Vec<VrReport<T>> = if config.parallel {
        workers.par_iter().map(run).collect::<Result<_>>()?
    } else {
        workers.iter().map(run).collect::<Result<_>>()?
    };

    let refs: Vec<_> = reports.iter().map(|r| &r.quantized).collect();
    let sum = pairwise_sum(&refs, q);
    let n = T::from_usize_lossy(workers.len());
    let mut field = sum.scaled(T::one() / n);
    field.add_assign(&server.state.memory);
    let mut next = s_hat.clone();
    next.axpy(config.gamma.at(round), &field);
    next.ensure_finite("server estimate")?;

    let mut bits = 0;
    let mut ce = 0;
    for (w, r) in workers.iter_mut().zip(reports) {
        w.memory.axpy(config.alpha, &r.quantized);
        w.control = r.control;
        bits += r.bits;
        ce += 2 * config.batch_cost(model.examples(w.index));
    }
    let st = &mut server.state;
    st.memory.axpy(config.alpha / n, &sum);
    server.s_prev = s_hat;
    st.s_hat = next;
    st.round += 1;
    st.bits += bits;
    st.ce_count += ce;
    Ok(RoundTrace {
        algo: Algo::VrFedem,
        round,
        outer: Some(t as u64),
        inner: Some(k as u64),
        epoch: st.ce_count as f64 / model.total_examples() as f64,
        participants: workers.len(),
        norm_big_h_sq: Some(field.norm_sq().as_f64()),
        norm_h_sq,
        objective,
        bits: st.bits,
        ce_count: st.ce_count,
        memory_gap,
    })
}

/// Resets every control statistic to the full local mean at the current
/// iterate and sets `Ŝ_{t+1,−1} = Ŝ_{t+1,0}`. Memories are kept.
pub fn vr_outer_refresh<T: Scalar, M: LatentModel<T>>(
    model: &M,
    server: &mut VrServerState<T>,
    workers: &mut [VrWorkerState<T>],
    parallel: bool,
) -> Result<()> {
    let theta = model.m_step(&server.state.s_hat)?;
    let fresh: Vec<_> = if parallel {
        workers
            .par_iter()
            .map(|w| sbar_i(model, w.index, &theta))
            .collect::<Result<_>>()?
    } else {
        workers
            .iter()
            .map(|w| sbar_i(model, w.index, &theta))
            .collect::<Result<_>>()?
    };
    for (w, s) in workers.iter_mut().zip(fresh) {
        w.control = s;
    }
    server.s_prev = server.state.s_hat.clone();
    server.state.ce_count += model.total_examples() as u64;
    Ok(())
}

/// Initial states: `S_{1,0,i} = s̄_i ∘ T(Ŝ_init)` and, by default,
/// `V_{1,0,i} = S_{1,0,i} − Ŝ_init` from the same pass.
pub fn vr_init<T: Scalar, M: LatentModel<T>>(
    model: &M,
    s_init: &SufficientStatistic<T>,
    memory_init: MemoryInit,
) -> Result<(VrServerState<T>, Vec<VrWorkerState<T>>)> {
    s_init.ensure_dim(model.stat_dim())?;
    s_init.ensure_finite("initial estimate")?;
    let q = model.stat_dim();
    let theta = model.m_step(s_init)?;
    let workers: Vec<VrWorkerState<T>> = (0..model.num_workers())
        .map(|i| {
            let control = sbar_i(model, i, &theta)?;
            let memory = match memory_init {
                MemoryInit::MeanField => control.sub(s_init),
                MemoryInit::Zeros => SufficientStatistic::zeros(q),
            };
            Ok(VrWorkerState {
                index: i,
                memory,
                control,
            })
        })
        .collect::<Result<_>>()?;
    let refs: Vec<_> = workers.iter().map(|w| &w.memory).collect();
    let server = VrServerState {
        state: ServerState {
            s_hat: s_init.clone(),
            memory: pairwise_mean(&refs, q),
            round: 0,
            bits: 0,
            ce_count: model.total_examples() as u64,
        },
        s_prev: s_init.clone(),
    };
    Ok((server, workers))
}

/// Stateful VR-FedEM driver.
pub struct VrFedEm<'a, T: Scalar, M: LatentModel<T>> {
    model: &'a M,
    config: VrConfig<T>,
    pub server: VrServerState<T>,
    pub workers: Vec<VrWorkerState<T>>,
    /// Next `(t, k)` to run, `t` 1-based.
    t: usize,
    k: usize,
}

impl<'a, T: Scalar, M: LatentModel<T>> VrFedEm<'a, T, M> {
    pub fn new(model: &'a M, config: VrConfig<T>, s_init: &SufficientStatistic<T>) -> Result<Self> {
        config.validate(model)?;
        let (server, workers) = vr_init(model, s_init, config.memory_init)?;
        Ok(Self {
            model,
            config,
            server,
            workers,
            t: 1,
            k: 0,
        })
    }

    pub fn config(&self) -> &VrConfig<T> {
        &self.config
    }

    /// Current `(t, k)`.
    pub fn position(&self) -> (usize, usize) {
        (self.t, self.k)
    }

    pub fn finished(&self) -> bool {
        self.t > self.config.outer || self.config.inner == 0
    }

    /// Row describing the initialization pass.
    pub fn init_row(&self) -> Result<RoundTrace> {
        let s = &self.server.state.s_hat;
        let (norm_h_sq, objective) = if self.config.diagnostics_every > 0 {
            let theta = self.model.m_step(s)?;
            let fields = evaluate_fields(self.model, s, &theta)?;
            (
                Some(fields.mean.norm_sq().as_f64()),
                Some(self.model.objective_at(&theta)?.as_f64()),
            )
        } else {
            (None, None)
        };
        Ok(RoundTrace {
            algo: Algo::VrFedem,
            round: 0,
            outer: Some(1),
            inner: None,
            epoch: self.server.state.ce_count as f64 / self.model.total_examples() as f64,
            participants: self.workers.len(),
            norm_big_h_sq: None,
            norm_h_sq,
            objective,
            bits: self.server.state.bits,
            ce_count: self.server.state.ce_count,
            memory_gap: None,
        })
    }

    /// Runs one inner step, refreshing the control statistics when an outer
    /// loop ends (except after the last one).
    pub fn step(&mut self) -> Result<RoundTrace> {
        if self.finished() {
            return Err(Error::InconsistentState("run already finished".into()));
        }
        let row = vr_inner_step(
            self.model,
            &self.config,
            &mut self.server,
            &mut self.workers,
            self.t,
            self.k,
        )?;
        self.k += 1;
        if self.k == self.config.inner {
            self.k = 0;
            self.t += 1;
            if self.t <= self.config.outer {
                vr_outer_refresh(self.model, &mut self.server, &mut self.workers, self.config.parallel)?;
            }
        }
        Ok(row)
    }

    /// Initialization row followed by every inner step.
    pub fn run(&mut self) -> Result<Vec<RoundTrace>> {
        let mut trace = vec![self.init_row()?];
        while !self.finished() {
            trace.push(self.step()?);
        }
        Ok(trace)
    }
}

#[derive(Clone, Debug)]
pub struct VrRun<T> {
    pub trace: Vec<RoundTrace>,
    pub server: VrServerState<T>,
    pub workers: Vec<VrWorkerState<T>>,
}

pub fn run_vrfedem<T: Scalar, M: LatentModel<T>>(
    model: &M,
    config: &VrConfig<T>,
    s_init: &SufficientStatistic<T>,
) -> Result<VrRun<T>> {
    let mut driver = VrFedEm::new(model, config.clone(), s_init)?;
    let trace = driver.run()?;
    Ok(VrRun {
        trace,
        server: driver.server,
        workers: driver.workers,
    })
}
