//! Experiment orchestration: the naive baseline, diagnostics summaries,
//! empirical constant estimation and the synthetic GMM setup.

pub mod trace;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fedem::{fedem_round, FedEmConfig, ServerState, StepSize, Variant, WorkerState};
use crate::compression::QuantizerSpec;
use crate::gmm::{generate_synthetic, initial_theta, CovarianceMode, GaussianMixture, GmmTheta, Split};
use crate::linalg::Matrix;
use crate::model::{local_statistics, sbar, LatentModel};
use crate::rng::{stream, Purpose};
use crate::scalar::Scalar;
use crate::stat::SufficientStatistic;
use crate::vrfedem::VrConfig;

use self::trace::RoundTrace;

/// A FedEM round without memories: `Δ = S − Ŝ` is compressed directly and
/// `H` is the rescaled mean of the quantized increments.
pub fn naive_baseline_round<T: Scalar, M: LatentModel<T>>(
    model: &M,
    config: &FedEmConfig<T>,
    server: &mut ServerState<T>,
    workers: &mut [WorkerState<T>],
) -> Result<RoundTrace> {
    if config.variant == Variant::Naive {
        return fedem_round(model, config, server, workers);
    }
    let config = FedEmConfig {
        variant: Variant::Naive,
        ..config.clone()
    };
    fedem_round(model, &config, server, workers)
}

/// Mean of `norm_h_sq` over the rows after the first `burn_in`, skipping
/// rows where it was not evaluated.
#[allow(non_snake_case)]
pub fn uniform_K_summary(trace: &[RoundTrace], burn_in: usize) -> Result<f64> {
    let values: Vec<f64> = trace.iter().skip(burn_in).filter_map(|r| r.norm_h_sq).collect();
    if values.is_empty() {
        return Err(Error::EmptyTrace);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Secant-ratio estimates of the Lipschitz constants of the mean fields.
/// These are lower bounds, not certificates.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantEstimate {
    /// `sqrt(n⁻¹ Σ L_i²)` with each `L_i` the largest secant ratio of `h_i`.
    pub l: f64,
    /// Largest ratio per worker.
    pub per_worker: Vec<f64>,
    /// Largest ratio of the global field `h`.
    pub global_max: f64,
    /// Median ratio of the global field.
    pub global_median: f64,
    pub probes: usize,
}

/// Probes `‖h_i(s) − h_i(s')‖ / ‖s − s'‖` at `probes` random pairs drawn as
/// `Ŝ_0 + radius·g` with standard normal `g`.
pub fn estimate_constants<T: Scalar, M: LatentModel<T>>(
    model: &M,
    s0: &SufficientStatistic<T>,
    probes: usize,
    radius: f64,
    seed: u64,
) -> Result<ConstantEstimate> {
    if probes < 10 {
        return Err(Error::Config(format!("need at least 10 probes, got {probes}")));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Config(format!("probe radius must be positive, got {radius}")));
    }
    s0.ensure_dim(model.stat_dim())?;
    let n = model.num_workers();
    let q = model.stat_dim();
    let fields = |s: &SufficientStatistic<T>| -> Result<Vec<SufficientStatistic<T>>> {
        let theta = model.m_step(s)?;
        Ok(local_statistics(model, &theta)?.into_iter().map(|x| x.sub(s)).collect())
    };
    let mut per_worker = vec![0.0f64; n];
    let mut global = Vec::with_capacity(probes);
    for k in 0..probes {
        let mut rng = stream(seed, 0, k as u64, Purpose::Probe);
        let mut point = || {
            let v: Vec<T> = s0
                .iter()
                .map(|&x| x + T::lit(radius * rng.sample::<f64, _>(StandardNormal)))
                .collect();
            SufficientStatistic::from_vec(v)
        };
        let (a, b) = (point(), point());
        let d = a.distance(&b).as_f64();
        if d == 0.0 {
            continue;
        }
        let (ha, hb) = (fields(&a)?, fields(&b)?);
        let mut ga = SufficientStatistic::zeros(q);
        let mut gb = SufficientStatistic::zeros(q);
        for i in 0..n {
            per_worker[i] = per_worker[i].max(ha[i].distance(&hb[i]).as_f64() / d);
            ga.add_assign(&ha[i]);
            gb.add_assign(&hb[i]);
        }
        global.push(ga.distance(&gb).as_f64() / (d * n as f64));
    }
    if global.is_empty() {
        return Err(Error::EmptyTrace);
    }
    global.sort_by(f64::total_cmp);
    let median = if global.len() % 2 == 1 {
        global[global.len() / 2]
    } else {
        0.5 * (global[global.len() / 2 - 1] + global[global.len() / 2])
    };
    let l = (per_worker.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    Ok(ConstantEstimate {
        l,
        global_max: *global.last().unwrap(),
        global_median: median,
        per_worker,
        probes: global.len(),
    })
}

/// Ground truth of the two-component planar mixture with known covariance.
pub fn synthetic_truth<T: Scalar>() -> GmmTheta<T> {
    GmmTheta::new(
        vec![T::lit(0.4), T::lit(0.6)],
        vec![vec![T::lit(-2.0), T::lit(0.0)], vec![T::lit(2.0), T::lit(1.0)]],
        synthetic_covariance(),
    )
    .expect("valid ground truth")
}

pub fn synthetic_covariance<T: Scalar>() -> Matrix<T> {
    Matrix::from_row_major(2, 2, vec![T::lit(1.0), T::lit(0.3), T::lit(0.3), T::lit(0.8)]).expect("2x2")
}

/// A synthetic GMM problem ready to run.
#[derive(Clone, Debug)]
pub struct GmmSetup<T> {
    pub model: GaussianMixture<T>,
    pub labels: Vec<Vec<usize>>,
    /// `s̄(θ_0)` for the seeded initial parameter.
    pub s_init: SufficientStatistic<T>,
}

/// Data drawn from [`synthetic_truth`], covariance fixed at its true value.
pub fn synthetic_setup<T: Scalar>(total: usize, workers: usize, split: Split, seed: u64) -> Result<GmmSetup<T>> {
    let data = generate_synthetic(&synthetic_truth::<T>(), total, workers, split, seed)?;
    let model = GaussianMixture::new(data.shards, 2, CovarianceMode::Fixed(synthetic_covariance()))?;
    let theta = initial_theta(&model, seed)?;
    let s_init = sbar(&model, &theta)?;
    Ok(GmmSetup {
        model,
        labels: data.labels,
        s_init,
    })
}

/// Block quantizer with one block for the weights and one for the means,
/// which gives `ω = 1` for two planar components.
pub fn synthetic_quantizer() -> QuantizerSpec {
    QuantizerSpec::block2(vec![2, 4])
}

/// Rounds of FedEM whose expected cost is `epochs` passes over the data.
pub fn fedem_rounds_for_epochs(epochs: f64, total: usize, workers: usize, participation: f64, batch: usize) -> usize {
    (epochs * total as f64 / (participation * workers as f64 * batch as f64)).ceil() as usize
}

/// Outer loops of VR-FedEM whose cost is about `epochs` passes.
pub fn vr_outer_for_epochs(epochs: f64, total: usize, workers: usize, batch: usize, inner: usize) -> usize {
    let per_outer = total as f64 + 2.0 * (workers * batch * inner) as f64;
    (epochs * total as f64 / per_outer).round().max(1.0) as usize
}

/// FedEM settings of the synthetic study: `γ = α = 10⁻²`, `p = 0.75`,
/// `b = 20`, block quantizer with `ω = 1`.
pub fn synthetic_fedem_config<T: Scalar>(epochs: f64, total: usize, workers: usize, seed: u64) -> FedEmConfig<T> {
    FedEmConfig {
        gamma: StepSize::Constant(T::lit(0.01)),
        alpha: T::lit(0.01),
        participation: T::lit(0.75),
        batch: 20,
        rounds: fedem_rounds_for_epochs(epochs, total, workers, 0.75, 20),
        seed,
        quantizer: synthetic_quantizer(),
        diagnostics_every: 1,
        memory_gap_every: 0,
        ..Default::default()
    }
}

/// VR-FedEM settings of the synthetic study: `b = 5`, `k_in = 20`, full
/// participation.
pub fn synthetic_vr_config<T: Scalar>(epochs: f64, total: usize, workers: usize, seed: u64) -> VrConfig<T> {
    VrConfig {
        outer: vr_outer_for_epochs(epochs, total, workers, 5, 20),
        inner: 20,
        batch: 5,
        gamma: StepSize::Constant(T::lit(0.01)),
        alpha: T::lit(0.01),
        seed,
        quantizer: synthetic_quantizer(),
        diagnostics_every: 1,
        memory_gap_every: 0,
        ..Default::default()
    }
}
