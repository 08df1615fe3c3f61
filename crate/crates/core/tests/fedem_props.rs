use proptest::prelude::*;

use fedem_core::compression::QuantizerSpec;
use fedem_core::fedem::{draw_field, memory_mean_gap, run_fedem, BatchMode, FedEm, FedEmConfig, StepSize, Variant};
use fedem_core::gmm::Split;
use fedem_core::harness::trace::trace_to_csv;
use fedem_core::harness::{naive_baseline_round, synthetic_quantizer, synthetic_setup, GmmSetup};
use fedem_core::model::{exact_em_step, LatentModel};

fn setup(split: Split, seed: u64) -> GmmSetup<f64> {
    synthetic_setup::<f64>(240, 8, split, seed).unwrap()
}

fn base(p: f64, quantizer: QuantizerSpec, seed: u64) -> FedEmConfig<f64> {
    FedEmConfig {
        gamma: StepSize::Constant(0.05),
        alpha: 0.1,
        participation: p,
        batch: 3,
        rounds: 40,
        seed,
        quantizer,
        diagnostics_every: 5,
        memory_gap_every: 5,
        ..Default::default()
    }
}

/// Trace of the empirical covariance of `H` over `draws` resamplings.
fn field_variance(s: &GmmSetup<f64>, config: &FedEmConfig<f64>, draws: u64) -> f64 {
    let mut driver = FedEm::new(&s.model, FedEmConfig { rounds: 20, ..config.clone() }, &s.s_init).unwrap();
    driver.run().unwrap();
    let theta = s.model.m_step(&driver.server.s_hat).unwrap();
    let q = s.model.stat_dim();
    let (mut mean, mut m2) = (vec![0.0; q], vec![0.0; q]);
    for d in 0..draws {
        let h = draw_field(&s.model, config, &driver.server, &driver.workers, &theta, 10_000 + d).unwrap().field;
        for j in 0..q {
            let delta = h[j] - mean[j];
            mean[j] += delta / (d + 1) as f64;
            m2[j] += delta * (h[j] - mean[j]);
        }
    }
    m2.iter().sum::<f64>() / (draws - 1) as f64
}

#[test]
fn variance_grows_with_partial_participation_and_compression() {
    let s = setup(Split::Sorted, 3);
    let full = field_variance(&s, &base(1.0, QuantizerSpec::Identity, 3), 20_000);
    let partial = field_variance(&s, &base(0.75, QuantizerSpec::Identity, 3), 20_000);
    let compressed = field_variance(&s, &base(1.0, synthetic_quantizer(), 3), 20_000);
    assert!(partial >= full, "p=0.75: {partial} < p=1: {full}");
    assert!(compressed >= full, "w=1: {compressed} < w=0: {full}");
}

#[test]
fn identical_configs_give_identical_traces() {
    let s = setup(Split::Iid, 5);
    let config = base(0.75, synthetic_quantizer(), 5);
    let a = run_fedem(&s.model, &config, &s.s_init).unwrap();
    let b = run_fedem(&s.model, &config, &s.s_init).unwrap();
    let c = run_fedem(&s.model, &FedEmConfig { parallel: true, ..config }, &s.s_init).unwrap();
    assert_eq!(trace_to_csv(&a.trace).unwrap(), trace_to_csv(&b.trace).unwrap());
    assert_eq!(trace_to_csv(&a.trace).unwrap(), trace_to_csv(&c.trace).unwrap());
    assert_eq!(a.server.s_hat, c.server.s_hat);
}

#[test]
fn naive_baseline_without_compression_is_exact_em() {
    let s = setup(Split::Sorted, 7);
    let config = FedEmConfig {
        gamma: StepSize::Constant(1.0),
        participation: 1.0,
        batch: 30,
        batch_mode: BatchMode::FullPass,
        variant: Variant::Naive,
        diagnostics_every: 0,
        memory_gap_every: 0,
        ..Default::default()
    };
    let mut driver = FedEm::new(&s.model, config.clone(), &s.s_init).unwrap();
    let mut oracle = s.s_init.clone();
    for _ in 0..20 {
        naive_baseline_round(&s.model, &config, &mut driver.server, &mut driver.workers).unwrap();
        oracle = exact_em_step(&s.model, &oracle).unwrap();
        assert!(driver.server.s_hat.sub(&oracle).max_abs() < 1e-12);
    }
}

#[test]
fn naive_matches_fedem_without_compression() {
    let s = setup(Split::Iid, 9);
    let config = FedEmConfig {
        quantizer: QuantizerSpec::Identity,
        ..base(1.0, QuantizerSpec::Identity, 9)
    };
    let naive = FedEmConfig {
        variant: Variant::Naive,
        ..config.clone()
    };
    let a = run_fedem(&s.model, &config, &s.s_init).unwrap();
    let b = run_fedem(&s.model, &naive, &s.s_init).unwrap();
    assert!(a.server.s_hat.sub(&b.server.s_hat).max_abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn server_memory_is_the_mean_of_worker_memories(
        p in 0.3f64..=1.0,
        seed in 0u64..1000,
        alpha in 0.0f64..0.5,
        which in 0usize..3,
    ) {
        let quantizer = [
            QuantizerSpec::Identity,
            synthetic_quantizer(),
            QuantizerSpec::Dithering { r: 2.0, levels: 2 },
        ][which].clone();
        let s = setup(Split::Sorted, seed % 4);
        let config = FedEmConfig { alpha, ..base(p, quantizer, seed) };
        let mut driver = FedEm::new(&s.model, config, &s.s_init).unwrap();
        while !driver.finished() {
            let row = driver.step().unwrap();
            prop_assert!(memory_mean_gap(&driver.server, &driver.workers) <= 1e-12);
            prop_assert!(row.norm_big_h_sq.unwrap() >= 0.0);
            prop_assert!(row.participants <= 8);
        }
    }

    #[test]
    fn epochs_never_decrease(seed in 0u64..1000, p in 0.2f64..=1.0) {
        let s = setup(Split::Iid, 1);
        let run = run_fedem(&s.model, &base(p, synthetic_quantizer(), seed), &s.s_init).unwrap();
        for w in run.trace.windows(2) {
            prop_assert!(w[1].epoch >= w[0].epoch);
            prop_assert!(w[1].bits >= w[0].bits);
        }
    }
}
