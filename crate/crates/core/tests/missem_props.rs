use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use fedem_core::compression::QuantizerSpec;
use fedem_core::fedem::StepSize;
use fedem_core::linalg::Matrix;
use fedem_core::missem::{generate_missing, missem_mstep, run_missem, MissEmConfig, MissingSpec};
use fedem_core::rng::{stream, Purpose};

fn spec(observed_fraction: f64) -> MissingSpec {
    MissingSpec {
        rows: 12,
        cols: 8,
        rank: 2,
        observed_fraction,
        noise: 0.1,
        servers: 3,
        observers: 6,
    }
}

#[test]
fn memory_mean_identity_under_compression() {
    let syn = generate_missing::<f64>(&spec(0.5), 1).unwrap();
    let cfg = MissEmConfig {
        batch: 10,
        rounds: 300,
        quantizer: QuantizerSpec::Block {
            p: 2.0,
            blocks: fedem_core::compression::BlockLayout::Uniform(8),
        },
        diagnostics_every: 50,
        memory_gap_every: 50,
        ..Default::default()
    };
    let a = run_missem(&syn.data, &cfg).unwrap();
    assert!(a.memory_mean_gap <= 1e-12, "{}", a.memory_mean_gap);
    let b = run_missem(&syn.data, &cfg).unwrap();
    assert_eq!(a.s_hat, b.s_hat);
    assert!(a.trace.windows(2).all(|w| w[1].epoch >= w[0].epoch));
}

#[test]
fn fully_observed_data_leaves_only_the_svd_residual() {
    // Every server sees every cell with the same value.
    let mut rng = stream(5, 0, 0, Purpose::Data);
    let x = Matrix::from_fn(6, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut obs = Vec::new();
    for server in 0..3u64 {
        for j in 0..6 {
            for l in 0..5 {
                obs.push(fedem_core::missem::Observation {
                    observer: server,
                    server,
                    row: j,
                    col: l,
                    value: x[(j, l)],
                });
            }
        }
    }
    let data = fedem_core::missem::MissingDataset::new(6, 5, &obs).unwrap();
    let cfg = MissEmConfig {
        gamma: StepSize::Constant(0.3),
        batch: 30,
        rounds: 200,
        diagnostics_every: 0,
        ..Default::default()
    };
    let run = run_missem(&data, &cfg).unwrap();
    let best = missem_mstep(&x, 2).unwrap();
    let err = x.sub(run.theta.matrix()).frobenius_norm();
    let floor = x.sub(best.matrix()).frobenius_norm();
    assert!((err - floor).abs() < 1e-9, "{err} vs {floor}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn truncated_svd_beats_random_low_rank_matrices(
        rows in 2usize..9,
        cols in 2usize..9,
        rank_seed in 0usize..100,
        seed in 0u64..u64::MAX,
    ) {
        let r = 1 + rank_seed % rows.min(cols);
        let mut rng = stream(seed, 0, 0, Purpose::MonteCarlo);
        let mut g = || rng.sample::<f64, _>(StandardNormal);
        let s = Matrix::from_fn(rows, cols, |_, _| g());
        let u = Matrix::from_fn(rows, r, |_, _| g());
        let v = Matrix::from_fn(cols, r, |_, _| g());
        let t = missem_mstep(&s, r).unwrap();
        prop_assert!(s.sub(t.matrix()).frobenius_norm() <= s.sub(&u.matmul(&v.transpose())).frobenius_norm() + 1e-12);
    }
}
