#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use fedem_core::gmm::{CovarianceMode, GaussianMixture, GmmTheta};
use fedem_core::linalg::Matrix;
use fedem_core::model::{sbar, LatentModel};
use fedem_core::rng::{stream, Purpose};

fn random_data(seed: u64, n: usize) -> Matrix<f64> {
    let mut rng = stream(seed, 0, 0, Purpose::Data);
    Matrix::from_fn(n, 2, |j, _| {
        let shift = if j % 2 == 0 { -1.5 } else { 1.5 };
        shift + rng.sample::<f64, _>(StandardNormal)
    })
}

/// `x = (logit π_0, μ_0, μ_1, ln l11, l21, ln l22)` with `Σ = L Lᵀ`.
fn unpack(x: &[f64]) -> GmmTheta<f64> {
    let p0 = 1.0 / (1.0 + (-x[0]).exp());
    let (l11, l21, l22) = (x[5].exp(), x[6], x[7].exp());
    let cov = Matrix::from_row_major(2, 2, vec![l11 * l11, l11 * l21, l11 * l21, l21 * l21 + l22 * l22]).unwrap();
    GmmTheta::new(vec![p0, 1.0 - p0], vec![vec![x[1], x[2]], vec![x[3], x[4]]], cov).unwrap()
}

fn pack(t: &GmmTheta<f64>) -> Vec<f64> {
    let w = t.weights();
    let c = t.covariance();
    let l11 = c[(0, 0)].sqrt();
    let l21 = c[(1, 0)] / l11;
    let l22 = (c[(1, 1)] - l21 * l21).sqrt();
    vec![
        (w[0] / w[1]).ln(),
        t.means()[0][0],
        t.means()[0][1],
        t.means()[1][0],
        t.means()[1][1],
        l11.ln(),
        l21,
        l22.ln(),
    ]
}

fn solve(a: &mut [Vec<f64>], b: &mut [f64]) {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    for c in (0..n).rev() {
        let mut v = b[c];
        for k in c + 1..n {
            v -= a[c][k] * b[k];
        }
        b[c] = v / a[c][c];
    }
}

/// Damped Newton with central finite differences.
fn minimize(f: &dyn Fn(&[f64]) -> f64, mut x: Vec<f64>) -> Vec<f64> {
    let n = x.len();
    let shifted = |x: &[f64], i: usize, h: f64| {
        let mut y = x.to_vec();
        y[i] += h;
        y
    };
    for _ in 0..100 {
        let hg = 1e-5;
        let g: Vec<f64> = (0..n).map(|i| (f(&shifted(&x, i, hg)) - f(&shifted(&x, i, -hg))) / (2.0 * hg)).collect();
        if g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-10 {
            break;
        }
        let hh = 1e-4;
        let mut hess = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let pp = f(&shifted(&shifted(&x, i, hh), j, hh));
                let pm = f(&shifted(&shifted(&x, i, hh), j, -hh));
                let mp = f(&shifted(&shifted(&x, i, -hh), j, hh));
                let mm = f(&shifted(&shifted(&x, i, -hh), j, -hh));
                hess[i][j] = (pp - pm - mp + mm) / (4.0 * hh * hh);
            }
        }
        let mut step: Vec<f64> = g.iter().map(|v| -v).collect();
        solve(&mut hess, &mut step);
        let f0 = f(&x);
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = x.iter().zip(&step).map(|(a, d)| a + t * d).collect();
            if f(&cand) <= f0 || t < 1e-8 {
                x = cand;
                break;
            }
            t *= 0.5;
        }
    }
    x
}

#[test]
fn closed_form_mstep_matches_numerical_minimizer() {
    for instance in 0..20u64 {
        let data = random_data(instance, 30);
        let model = GaussianMixture::new(vec![data], 2, CovarianceMode::Full).unwrap();
        let mut rng = stream(instance, 1, 0, Purpose::Init);
        let mut r = || rng.sample::<f64, _>(StandardNormal);
        let cov = Matrix::from_row_major(2, 2, vec![1.0 + 0.2 * r().abs(), 0.1, 0.1, 1.0]).unwrap();
        let w0 = 0.3 + 0.4 * r().abs().min(1.0);
        let theta = GmmTheta::new(vec![w0, 1.0 - w0], vec![vec![r(), r()], vec![r(), r()]], cov).unwrap();
        let s = sbar(&model, &theta).unwrap();
        let closed = model.m_step(&s).unwrap();
        let q = |x: &[f64]| model.surrogate(s.as_slice(), &unpack(x));
        let start: Vec<f64> = pack(&closed).iter().enumerate().map(|(k, v)| v + 0.05 * ((k as f64) - 3.5) / 3.5).collect();
        let numeric = unpack(&minimize(&q, start));
        let mut worst = 0.0f64;
        for c in 0..2 {
            worst = worst.max((numeric.weights()[c] - closed.weights()[c]).abs());
            for a in 0..2 {
                worst = worst.max((numeric.means()[c][a] - closed.means()[c][a]).abs());
                worst = worst.max((numeric.covariance()[(c, a)] - closed.covariance()[(c, a)]).abs());
            }
        }
        assert!(worst < 1e-5, "instance {instance}: parameters differ by {worst}");
    }
}

#[test]
fn closed_form_is_stationary_for_the_surrogate() {
    let data = random_data(99, 40);
    let model = GaussianMixture::new(vec![data], 2, CovarianceMode::Full).unwrap();
    let theta = GmmTheta::new(
        vec![0.45, 0.55],
        vec![vec![-1.0, -1.2], vec![1.1, 1.4]],
        Matrix::identity(2),
    )
    .unwrap();
    let s = sbar(&model, &theta).unwrap();
    let x = pack(&model.m_step(&s).unwrap());
    let q = |x: &[f64]| model.surrogate(s.as_slice(), &unpack(x));
    for i in 0..x.len() {
        let h = 1e-5;
        let (mut a, mut b) = (x.clone(), x.clone());
        a[i] += h;
        b[i] -= h;
        let g = (q(&a) - q(&b)) / (2.0 * h);
        assert!(g.abs() < 1e-7, "coordinate {i}: derivative {g}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn responsibilities_sum_to_one(
        w in 0.01f64..0.99,
        mu in proptest::collection::vec(-5.0f64..5.0, 4),
        y in proptest::collection::vec(-50.0f64..50.0, 2),
        var in 0.05f64..5.0,
    ) {
        let cov = Matrix::from_row_major(2, 2, vec![var, 0.0, 0.0, var]).unwrap();
        let theta = GmmTheta::new(vec![w, 1.0 - w], vec![mu[..2].to_vec(), mu[2..].to_vec()], cov).unwrap();
        let r = theta.responsibilities(&y).unwrap();
        prop_assert!(r.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-15);
    }
}
