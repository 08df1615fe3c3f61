use fedem_core::fedem::{memory_mean_gap, sample_batch, StepSize};
use fedem_core::gmm::Split;
use fedem_core::harness::{estimate_constants, synthetic_quantizer, synthetic_setup};
use fedem_core::model::{batch_statistic, mean_field, LatentModel};
use fedem_core::rng::{stream, Purpose};
use fedem_core::vrfedem::{run_vrfedem, VrConfig, VrFedEm};

fn config(outer: usize, seed: u64) -> VrConfig<f64> {
    VrConfig {
        outer,
        inner: 6,
        batch: 4,
        gamma: StepSize::Constant(0.05),
        alpha: 0.1,
        seed,
        quantizer: synthetic_quantizer(),
        diagnostics_every: 1,
        memory_gap_every: 3,
        ..Default::default()
    }
}

#[test]
fn memory_mean_identity_at_every_step() {
    let s = synthetic_setup::<f64>(300, 6, Split::Sorted, 2).unwrap();
    let mut driver = VrFedEm::new(&s.model, config(5, 2), &s.s_init).unwrap();
    while !driver.finished() {
        driver.step().unwrap();
        let plain: Vec<_> = driver
            .workers
            .iter()
            .map(|w| fedem_core::WorkerState {
                index: w.index,
                memory: w.memory.clone(),
            })
            .collect();
        assert!(memory_mean_gap(&driver.server.state, &plain) <= 1e-12);
    }
}

#[test]
fn control_update_is_the_replayed_batch_difference() {
    let s = synthetic_setup::<f64>(300, 6, Split::Iid, 4).unwrap();
    let cfg = VrConfig {
        cache: false,
        ..config(3, 4)
    };
    let mut driver = VrFedEm::new(&s.model, cfg.clone(), &s.s_init).unwrap();
    while !driver.finished() {
        let (t, k) = driver.position();
        let round = ((t - 1) * cfg.inner + k) as u64;
        let theta = s.model.m_step(&driver.server.state.s_hat).unwrap();
        let theta_prev = s.model.m_step(&driver.server.s_prev).unwrap();
        let before: Vec<_> = driver.workers.iter().map(|w| w.control.clone()).collect();
        let refresh = k + 1 == cfg.inner;
        driver.step().unwrap();
        if refresh {
            continue;
        }
        for (i, w) in driver.workers.iter().enumerate() {
            let batch = sample_batch(s.model.examples(i), cfg.batch, &mut stream(cfg.seed, i, round, Purpose::Batch)).unwrap();
            let diff = batch_statistic(&s.model, i, &theta, &batch)
                .unwrap()
                .sub(&batch_statistic(&s.model, i, &theta_prev, &batch).unwrap());
            let got = w.control.sub(&before[i]);
            assert!(got.sub(&diff).max_abs() <= 1e-12, "t={t} k={k} worker {i}");
        }
    }
}

#[test]
fn mean_field_is_controlled_by_the_field_estimates() {
    let s = synthetic_setup::<f64>(300, 6, Split::Iid, 6).unwrap();
    let cfg = config(30, 6);
    let run = run_vrfedem(&s.model, &cfg, &s.s_init).unwrap();
    let h_final = mean_field(&s.model, &run.server.state.s_hat).unwrap().norm_sq();
    let fields: Vec<f64> = run.trace.iter().filter_map(|r| r.norm_big_h_sq).collect();
    let mean_h = fields.iter().sum::<f64>() / fields.len() as f64;
    let est = estimate_constants(&s.model, &run.server.state.s_hat, 50, 1e-3, 6).unwrap();
    let (gamma, omega, n) = (0.05, 1.0, 6.0);
    let bound = 2.0 * (1.0 + gamma * gamma * est.l * est.l * (1.0f64 + omega).powi(2) / n) * mean_h * 1.1;
    assert!(h_final <= bound, "{h_final} > {bound}");
}
