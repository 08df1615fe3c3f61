//! Unbiased stochastic compression of uplink increments.
//!
//! Three operators are provided:
//!
//! * identity (no compression, `ω = 0`);
//! * random dithering with `s` levels in the `ℓ_r` norm:
//!   `Q(x) = s⁻¹ ‖x‖_r sign(x) ⊙ ⌊s |x| / ‖x‖_r + ξ⌋`, `ξ ~ U[0,1]^q`;
//! * block-`p` quantization: each block `x_ℓ` is sent as
//!   `‖x_ℓ‖_p sign(x_ℓ) ⊙ b` with independent `b_j ~ Bernoulli(|x_j| / ‖x_ℓ‖_p)`.
//!
//! All satisfy `E[Q(x)] = x` and `E‖Q(x)‖² ≤ (1 + ω)‖x‖²` with the `ω`
//! returned by [`QuantizerSpec::omega`].
//!
//! Bit costs (reporting only, not a wire format), with `w` the float width:
//! identity `w·q`; dithering `w + q·(1 + ⌈log₂(s+1)⌉)`; block-`p`
//! `Σ_ℓ (w + q_ℓ + nnz_ℓ)`, i.e. the block norm, one support bit per entry and
//! one sign bit per transmitted entry.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stat::SufficientStatistic;

/// How a block-`p` quantizer partitions the coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockLayout {
    /// Explicit block lengths, which must sum to `q`.
    Explicit(Vec<usize>),
    /// Consecutive blocks of the given length; the last may be shorter.
    Uniform(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum QuantizerSpec {
    Identity,
    Dithering {
        /// Norm order `r ≥ 1` (may be infinite).
        r: f64,
        /// Number of levels `s ≥ 1`.
        levels: u32,
    },
    Block {
        /// Norm order `p ≥ 1` (may be infinite).
        p: f64,
        blocks: BlockLayout,
    },
}

impl QuantizerSpec {
    /// Block-2 quantizer with the given block lengths.
    pub fn block2(blocks: Vec<usize>) -> Self {
        QuantizerSpec::Block {
            p: 2.0,
            blocks: BlockLayout::Explicit(blocks),
        }
    }

    /// Checks the quantizer against the vector dimension `dim`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            QuantizerSpec::Identity => Ok(()),
            QuantizerSpec::Dithering { r, levels } => {
                if !(*r >= 1.0) {
                    return Err(Error::Config(format!("dithering norm order must be >= 1, got {r}")));
                }
                if *levels == 0 {
                    return Err(Error::Config("dithering needs at least one level".into()));
                }
                Ok(())
            }
            QuantizerSpec::Block { p, blocks } => {
                if !(*p >= 1.0) {
                    return Err(Error::Config(format!("block norm order must be >= 1, got {p}")));
                }
                match blocks {
                    BlockLayout::Uniform(0) => Err(Error::Config("block length must be positive".into())),
                    BlockLayout::Uniform(_) => Ok(()),
                    BlockLayout::Explicit(lens) => {
                        if lens.contains(&0) {
                            return Err(Error::Config("block lengths must be positive".into()));
                        }
                        let total: usize = lens.iter().sum();
                        if total != dim {
                            return Err(Error::Config(format!(
                                "block lengths sum to {total} but the statistic has dimension {dim}"
                            )));
                        }
                        Ok(())
                    }
                }
            }
        }
    }

    /// Coordinate ranges of the blocks (a single block for non-block specs).
    pub fn block_ranges(&self, dim: usize) -> Vec<Range<usize>> {
        match self {
            QuantizerSpec::Block { blocks, .. } => layout_ranges(blocks, dim),
            #[allow(clippy::single_range_in_vec_init)]
            _ => vec![0..dim],
        }
    }

    /// Variance constant `ω` for vectors of dimension `dim`.
    pub fn omega(&self, dim: usize) -> f64 {
        match self {
            QuantizerSpec::Identity => 0.0,
            QuantizerSpec::Dithering { r, levels } => {
                if dim == 0 {
                    return 0.0;
                }
                let q = dim as f64;
                let s = *levels as f64;
                let c = q.powf((1.0 / r - 0.5).max(0.0));
                (q * c * c / (s * s)).min(c * q.sqrt() / s)
            }
            QuantizerSpec::Block { p, blocks } => {
                let e = (1.0 / p).max(0.5);
                layout_ranges(blocks, dim)
                    .iter()
                    .map(|b| (b.len() as f64).powf(e) - 1.0)
                    .fold(0.0, f64::max)
            }
        }
    }

    /// Exact per-coordinate variance of `Q(x)`.
    pub fn coordinate_variance<T: Scalar>(&self, x: &[T]) -> Vec<f64> {
        let xs: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
        match self {
            QuantizerSpec::Identity => vec![0.0; x.len()],
            QuantizerSpec::Dithering { r, levels } => {
                let norm = lp_norm(&xs, *r);
                if norm == 0.0 {
                    return vec![0.0; x.len()];
                }
                let s = *levels as f64;
                let unit = norm / s;
                xs.iter()
                    .map(|v| {
                        let t = s * v.abs() / norm;
                        let f = t - t.floor();
                        unit * unit * f * (1.0 - f)
                    })
                    .collect()
            }
            QuantizerSpec::Block { p, blocks } => {
                let mut out = vec![0.0; x.len()];
                for b in layout_ranges(blocks, x.len()) {
                    let norm = lp_norm(&xs[b.clone()], *p);
                    for j in b {
                        out[j] = norm * xs[j].abs() - xs[j] * xs[j];
                    }
                }
                out
            }
        }
    }

    /// Exact `E‖Q(x) − x‖²`. For block-`p` this is
    /// `Σ_ℓ (‖x_ℓ‖₁‖x_ℓ‖_p − ‖x_ℓ‖²)`.
    pub fn exact_mse<T: Scalar>(&self, x: &[T]) -> f64 {
        self.coordinate_variance(x).iter().sum()
    }
}

fn layout_ranges(blocks: &BlockLayout, dim: usize) -> Vec<Range<usize>> {
    match blocks {
        BlockLayout::Explicit(lens) => {
            let mut start = 0;
            lens.iter()
                .map(|&l| {
                    let r = start..start + l;
                    start += l;
                    r
                })
                .collect()
        }
        BlockLayout::Uniform(len) => (0..dim)
            .step_by((*len).max(1))
            .map(|s| s..(s + len).min(dim))
            .collect(),
    }
}

/// `ℓ_p` norm, exact for the common orders 1, 2 and ∞.
pub fn lp_norm<T: Scalar>(x: &[T], p: f64) -> T {
    if p == 1.0 {
        x.iter().fold(T::zero(), |a, v| a + v.abs())
    } else if p == 2.0 {
        x.iter().fold(T::zero(), |a, &v| a + v * v).sqrt()
    } else if p.is_infinite() {
        x.iter().fold(T::zero(), |a, v| a.max(v.abs()))
    } else {
        let pt = T::lit(p);
        let max = x.iter().fold(T::zero(), |a, v| a.max(v.abs()));
        if max == T::zero() {
            return T::zero();
        }
        let s = x.iter().fold(T::zero(), |a, &v| a + (v.abs() / max).powf(pt));
        max * s.powf(T::one() / pt)
    }
}

/// Encoded form of a compressed vector.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload<T> {
    Dense(Vec<T>),
    /// Entry `j` decodes to `norm / levels · level[j]` (levels carry the sign).
    Dithered { norm: T, levels: u32, level: Vec<i32> },
    /// Entry `j` of block `ℓ` decodes to `norms[ℓ] · sign[j]`, `sign ∈ {−1, 0, 1}`.
    Blocks { ranges: Vec<Range<usize>>, norms: Vec<T>, sign: Vec<i8> },
}

/// A quantized increment together with its uplink cost.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedDelta<T> {
    pub payload: Payload<T>,
    pub bit_cost: u64,
}

impl<T: Scalar> CompressedDelta<T> {
    pub fn dim(&self) -> usize {
        match &self.payload {
            Payload::Dense(v) => v.len(),
            Payload::Dithered { level, .. } => level.len(),
            Payload::Blocks { sign, .. } => sign.len(),
        }
    }

    /// The vector the server aggregates.
    pub fn decode(&self) -> SufficientStatistic<T> {
        let v = match &self.payload {
            Payload::Dense(v) => v.clone(),
            Payload::Dithered { norm, levels, level } => {
                let unit = *norm / T::from_u32(*levels).expect("level count fits the scalar");
                level
                    .iter()
                    .map(|&l| if l == 0 { T::zero() } else { unit * T::lit(l as f64) })
                    .collect()
            }
            Payload::Blocks { ranges, norms, sign } => {
                let mut out = vec![T::zero(); sign.len()];
                for (b, &norm) in ranges.iter().zip(norms) {
                    for j in b.clone() {
                        out[j] = match sign[j] {
                            1 => norm,
                            -1 => -norm,
                            _ => T::zero(),
                        };
                    }
                }
                out
            }
        };
        SufficientStatistic::from_vec(v)
    }

    /// Deterministic byte serialization of the payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let float = |out: &mut Vec<u8>, v: T| out.extend_from_slice(&v.as_f64().to_bits().to_le_bytes());
        match &self.payload {
            Payload::Dense(v) => {
                out.push(0);
                v.iter().for_each(|&x| float(&mut out, x));
            }
            Payload::Dithered { norm, levels, level } => {
                out.push(1);
                float(&mut out, *norm);
                out.extend_from_slice(&levels.to_le_bytes());
                level.iter().for_each(|l| out.extend_from_slice(&l.to_le_bytes()));
            }
            Payload::Blocks { ranges, norms, sign } => {
                out.push(2);
                for (r, &n) in ranges.iter().zip(norms) {
                    out.extend_from_slice(&(r.len() as u64).to_le_bytes());
                    float(&mut out, n);
                }
                sign.iter().for_each(|&s| out.push(s as u8));
            }
        }
        out
    }
}

fn ensure_finite<T: Scalar>(x: &[T]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("quantizer input"))
    }
}

fn bits_for_levels(levels: u32) -> u64 {
    // ⌈log₂(s + 1)⌉
    let n = levels as u64 + 1;
    64 - (n - 1).leading_zeros() as u64
}

/// Applies the operator with externally supplied uniforms (`u[j] ∈ [0,1)`),
/// which makes every draw reproducible and testable.
pub fn quantize_with<T: Scalar>(spec: &QuantizerSpec, x: &[T], u: &[T]) -> Result<CompressedDelta<T>> {
    ensure_finite(x)?;
    if u.len() != x.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: u.len(),
        });
    }
    spec.validate(x.len())?;
    let w = T::BITS as u64;
    let q = x.len() as u64;
    match spec {
        QuantizerSpec::Identity => Ok(CompressedDelta {
            payload: Payload::Dense(x.to_vec()),
            bit_cost: w * q,
        }),
        QuantizerSpec::Dithering { r, levels } => {
            let norm = lp_norm(x, *r);
            let s = T::from_u32(*levels).expect("level count fits the scalar");
            let level = if norm == T::zero() {
                vec![0; x.len()]
            } else {
                x.iter()
                    .zip(u)
                    .map(|(&v, &xi)| {
                        let l = (s * v.abs() / norm + xi).floor();
                        let l = l.to_i32().expect("level is bounded by s + 1");
                        if v < T::zero() {
                            -l
                        } else {
                            l
                        }
                    })
                    .collect()
            };
            Ok(CompressedDelta {
                payload: Payload::Dithered {
                    norm,
                    levels: *levels,
                    level,
                },
                bit_cost: w + q * (1 + bits_for_levels(*levels)),
            })
        }
        QuantizerSpec::Block { p, blocks } => {
            let ranges = layout_ranges(blocks, x.len());
            let mut norms = Vec::with_capacity(ranges.len());
            let mut sign = vec![0i8; x.len()];
            let mut bits = 0u64;
            for b in &ranges {
                let norm = lp_norm(&x[b.clone()], *p);
                let mut nnz = 0u64;
                if norm > T::zero() {
                    for j in b.clone() {
                        if u[j] < x[j].abs() / norm {
                            sign[j] = if x[j] < T::zero() { -1 } else { 1 };
                            nnz += 1;
                        }
                    }
                }
                norms.push(norm);
                bits += w + b.len() as u64 + nnz;
            }
            Ok(CompressedDelta {
                payload: Payload::Blocks { ranges, norms, sign },
                bit_cost: bits,
            })
        }
    }
}

/// Draws `Q(x)` using `rng` for the dithering / Bernoulli uniforms.
pub fn quantize<T: Scalar, R: Rng + ?Sized>(
    spec: &QuantizerSpec,
    x: &[T],
    rng: &mut R,
) -> Result<CompressedDelta<T>> {
    let u: Vec<T> = match spec {
        QuantizerSpec::Identity => vec![T::zero(); x.len()],
        _ => (0..x.len()).map(|_| T::lit(rng.random::<f64>())).collect(),
    };
    quantize_with(spec, x, &u)
}

/// Monte-Carlo moments of `Q(x)`.
#[derive(Clone, Debug)]
pub struct EmpiricalMoments {
    pub trials: usize,
    /// Sample mean of `Q(x)`.
    pub mean: Vec<f64>,
    /// Unbiased per-coordinate sample variance of `Q(x)`.
    pub coordinate_variance: Vec<f64>,
    /// Sample mean of `‖Q(x) − x‖²`.
    pub mse: f64,
    /// Sample variance of `‖Q(x) − x‖²`.
    pub mse_variance: f64,
    /// Sample mean of `‖Q(x)‖²`.
    pub second_moment: f64,
    /// Sample variance of `‖Q(x)‖²`.
    pub second_moment_variance: f64,
}

impl EmpiricalMoments {
    /// Standard error of the sample mean of `‖Q(x)‖²`.
    pub fn second_moment_se(&self) -> f64 {
        (self.second_moment_variance / self.trials as f64).sqrt()
    }

    /// Standard error of the sample mean of `‖Q(x) − x‖²`.
    pub fn mse_se(&self) -> f64 {
        (self.mse_variance / self.trials as f64).sqrt()
    }
}

pub fn empirical_moments<T: Scalar, R: Rng + ?Sized>(
    spec: &QuantizerSpec,
    x: &[T],
    trials: usize,
    rng: &mut R,
) -> Result<EmpiricalMoments> {
    if trials == 0 {
        return Err(Error::Config("empirical moments need at least one trial".into()));
    }
    let q = x.len();
    let xs: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
    // Welford accumulators.
    let mut mean = vec![0.0; q];
    let mut m2 = vec![0.0; q];
    let (mut mse, mut mse_m2) = (0.0, 0.0);
    let (mut sm_mean, mut sm_m2) = (0.0, 0.0);
    for t in 1..=trials {
        let d = quantize(spec, x, rng)?.decode();
        let mut sq = 0.0;
        let mut err = 0.0;
        for j in 0..q {
            let v = d[j].as_f64();
            sq += v * v;
            err += (v - xs[j]) * (v - xs[j]);
            let delta = v - mean[j];
            mean[j] += delta / t as f64;
            m2[j] += delta * (v - mean[j]);
        }
        let delta = err - mse;
        mse += delta / t as f64;
        mse_m2 += delta * (err - mse);
        let delta = sq - sm_mean;
        sm_mean += delta / t as f64;
        sm_m2 += delta * (sq - sm_mean);
    }
    let denom = (trials.max(2) - 1) as f64;
    Ok(EmpiricalMoments {
        trials,
        mean,
        coordinate_variance: m2.iter().map(|v| v / denom).collect(),
        mse,
        mse_variance: mse_m2 / denom,
        second_moment: sm_mean,
        second_moment_variance: sm_m2 / denom,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use proptest::prelude::*;

    #[test]
    fn identity_is_exact() {
        let x = [1.5f64, -2.0, 0.0];
        let c = quantize(&QuantizerSpec::Identity, &x, &mut stream(1, 0, 0, Purpose::Quant)).unwrap();
        assert_eq!(c.decode().as_slice(), &x);
        assert_eq!(c.bit_cost, 64 * 3);
        assert_eq!(QuantizerSpec::Identity.omega(3), 0.0);
        assert_eq!(QuantizerSpec::Identity.exact_mse(&x), 0.0);
    }

    #[test]
    fn dithering_pinned_uniforms() {
        let spec = QuantizerSpec::Dithering { r: 2.0, levels: 1 };
        let c = quantize_with(&spec, &[3.0f64, 4.0], &[0.5, 0.5]).unwrap();
        assert_eq!(c.decode().as_slice(), &[5.0, 5.0]);
        // 64 + 2·(1 + ⌈log₂ 2⌉)
        assert_eq!(c.bit_cost, 68);
        let c = quantize_with(&spec, &[3.0f64, -4.0], &[0.1, 0.9]).unwrap();
        assert_eq!(c.decode().as_slice(), &[0.0, -5.0]);
    }

    #[test]
    fn level_bit_widths() {
        assert_eq!(bits_for_levels(1), 1);
        assert_eq!(bits_for_levels(2), 2);
        assert_eq!(bits_for_levels(3), 2);
        assert_eq!(bits_for_levels(4), 3);
        assert_eq!(bits_for_levels(7), 3);
    }

    #[test]
    fn block2_single_block_support() {
        let spec = QuantizerSpec::block2(vec![2]);
        let x = [3.0f64, 4.0];
        let cases = [
            ([0.7, 0.9], [0.0, 0.0]),
            ([0.5, 0.9], [5.0, 0.0]),
            ([0.7, 0.7], [0.0, 5.0]),
            ([0.1, 0.1], [5.0, 5.0]),
        ];
        for (u, want) in cases {
            let c = quantize_with(&spec, &x, &u).unwrap();
            assert_eq!(c.decode().as_slice(), &want);
        }
        // Enumerated distribution: P(first) = 0.6, P(second) = 0.8.
        let probs = [0.4 * 0.2, 0.6 * 0.2, 0.4 * 0.8, 0.6 * 0.8];
        let support = [[0.0, 0.0], [5.0, 0.0], [0.0, 5.0], [5.0, 5.0]];
        let mut mean = [0.0; 2];
        let mut mse = 0.0;
        for (p, s) in probs.iter().zip(support) {
            mean[0] += p * s[0];
            mean[1] += p * s[1];
            mse += p * ((s[0] - 3.0f64).powi(2) + (s[1] - 4.0f64).powi(2));
        }
        assert!((mean[0] - 3.0).abs() < 1e-12 && (mean[1] - 4.0).abs() < 1e-12);
        assert!((probs[0] - 0.08f64).abs() < 1e-15 && (probs[3] - 0.48f64).abs() < 1e-15);
        assert!((mse - 10.0).abs() < 1e-12);
        assert!((spec.exact_mse(&x) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn block_omegas() {
        assert_eq!(
            QuantizerSpec::Block {
                p: 2.0,
                blocks: BlockLayout::Uniform(4)
            }
            .omega(16),
            1.0
        );
        assert_eq!(QuantizerSpec::block2(vec![4, 9]).omega(13), 2.0);
        assert!((QuantizerSpec::block2(vec![2, 4]).omega(6) - 1.0).abs() < 1e-15);
        let d = QuantizerSpec::Dithering { r: 2.0, levels: 2 };
        assert!((d.omega(16) - 2.0).abs() < 1e-15);
        assert!((d.omega(4) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_layout_handles_remainder() {
        let spec = QuantizerSpec::Block {
            p: 2.0,
            blocks: BlockLayout::Uniform(4),
        };
        assert_eq!(spec.block_ranges(10), vec![0..4, 4..8, 8..10]);
    }

    #[test]
    fn zero_blocks_emit_zeros() {
        let spec = QuantizerSpec::block2(vec![2, 2]);
        let c = quantize_with(&spec, &[0.0f64, 0.0, 1.0, 0.0], &[0.0, 0.0, 0.5, 0.0]).unwrap();
        assert_eq!(c.decode().as_slice(), &[0.0, 0.0, 1.0, 0.0]);
        let d = QuantizerSpec::Dithering { r: 2.0, levels: 3 };
        let c = quantize_with(&d, &[0.0f64; 3], &[0.9; 3]).unwrap();
        assert_eq!(c.decode().as_slice(), &[0.0; 3]);
    }

    #[test]
    fn rejects_bad_input() {
        let spec = QuantizerSpec::block2(vec![2]);
        assert!(matches!(
            quantize(&spec, &[f64::NAN, 1.0], &mut stream(0, 0, 0, Purpose::Quant)),
            Err(Error::NonFinite(_))
        ));
        assert!(QuantizerSpec::block2(vec![2, 2]).validate(3).is_err());
        assert!(QuantizerSpec::Dithering { r: 0.5, levels: 1 }.validate(3).is_err());
        assert!(QuantizerSpec::Dithering { r: 2.0, levels: 0 }.validate(3).is_err());
    }

    #[test]
    fn same_stream_same_bytes() {
        let spec = QuantizerSpec::Dithering { r: 2.0, levels: 4 };
        let x = [0.3f64, -1.2, 2.2, 0.0, 5.0];
        let a = quantize(&spec, &x, &mut stream(9, 1, 2, Purpose::Quant)).unwrap();
        let b = quantize(&spec, &x, &mut stream(9, 1, 2, Purpose::Quant)).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn dithering_mean_within_band() {
        let spec = QuantizerSpec::Dithering { r: 2.0, levels: 1 };
        let x = [3.0f64, 4.0];
        let trials = 100_000;
        let m = empirical_moments(&spec, &x, trials, &mut stream(3, 0, 0, Purpose::MonteCarlo)).unwrap();
        let var = spec.coordinate_variance(&x);
        for j in 0..2 {
            let se = (var[j] / trials as f64).sqrt();
            assert!((m.mean[j] - x[j]).abs() <= 3.0 * se, "coordinate {j}");
        }
    }

    #[test]
    fn f32_quantization_works() {
        let spec = QuantizerSpec::block2(vec![3]);
        let c = quantize(&spec, &[1.0f32, -2.0, 2.0], &mut stream(1, 0, 0, Purpose::Quant)).unwrap();
        assert_eq!(c.dim(), 3);
        for v in c.decode().iter() {
            assert!(v.abs() == 0.0 || (v.abs() - 3.0).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn exact_second_moment_respects_omega(
            x in proptest::collection::vec(-10.0f64..10.0, 1..40),
            p in prop_oneof![Just(1.0f64), Just(2.0), Just(3.0), Just(f64::INFINITY)],
            len in 1usize..8,
            levels in 1u32..6,
            r in prop_oneof![Just(1.0f64), Just(2.0), Just(4.0)],
        ) {
            let norm2: f64 = x.iter().map(|v| v * v).sum();
            let specs = [
                QuantizerSpec::Block { p, blocks: BlockLayout::Uniform(len) },
                QuantizerSpec::Dithering { r, levels },
            ];
            for spec in specs {
                let second = norm2 + spec.exact_mse(&x);
                prop_assert!(second <= (1.0 + spec.omega(x.len())) * norm2 * (1.0 + 1e-12) + 1e-12);
            }
        }

        #[test]
        fn decoded_block_values_are_signed_norms(
            x in proptest::collection::vec(-5.0f64..5.0, 1..20),
            seed in any::<u64>(),
        ) {
            let spec = QuantizerSpec::Block { p: 2.0, blocks: BlockLayout::Uniform(3) };
            let c = quantize(&spec, &x, &mut stream(seed, 0, 0, Purpose::Quant)).unwrap();
            let d = c.decode();
            for b in spec.block_ranges(x.len()) {
                let n = lp_norm(&x[b.clone()], 2.0);
                for j in b {
                    prop_assert!(d[j] == 0.0 || (d[j].abs() == n && d[j].signum() == x[j].signum()));
                }
            }
        }
    }
}
