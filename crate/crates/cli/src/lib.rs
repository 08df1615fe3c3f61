//! Configuration grammar and command implementations behind the `fedem`
//! binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod run;

use std::fmt::Write as _;
use std::path::Path;

use fedem_core::compression::{empirical_moments, QuantizerSpec};
use fedem_core::harness::synthetic_quantizer;
use fedem_core::harness::trace::read_trace_csv;
use fedem_core::harness::uniform_K_summary;
use fedem_core::rng::{stream, Purpose};
use rand::Rng;

pub use config::{parse_config, Algorithm, ConfigError, ConfigErrors, ExperimentConfig};
pub use run::{execute, output_dir, prepare, CliError, Prepared, RunSummary};

/// Reads and parses a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Config(ConfigErrors(vec![ConfigError {
            path: "<file>".into(),
            message: format!("cannot read {}: {e}", path.display()),
        }]))
    })?;
    Ok(parse_config(&text)?)
}

/// Monte-Carlo check of a quantizer on a random vector: `‖mean − x‖` within
/// three standard errors and `E‖Q(x) − x‖² ≤ ω‖x‖²`.
#[derive(Clone, Debug)]
pub struct QuantReport {
    pub spec: QuantizerSpec,
    pub dim: usize,
    pub trials: usize,
    pub omega: f64,
    /// `‖mean − x‖` in standard errors.
    pub mean_deviation_se: f64,
    pub mse: f64,
    pub mse_se: f64,
    pub exact_mse: f64,
    pub bound: f64,
    pub passed: bool,
}

impl QuantReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "quantizer: {:?}", self.spec);
        let _ = writeln!(s, "dim = {}, trials = {}, omega = {}", self.dim, self.trials, self.omega);
        let _ = writeln!(s, "unbiasedness: |mean - x| = {:.3} standard errors (limit 3)", self.mean_deviation_se);
        let _ = writeln!(
            s,
            "mse: empirical {:.6e} +/- {:.2e}, exact {:.6e}, bound omega*|x|^2 = {:.6e}",
            self.mse, self.mse_se, self.exact_mse, self.bound
        );
        let _ = write!(s, "{}", if self.passed { "PASS" } else { "FAIL" });
        s
    }
}

pub fn quant_test(spec: Option<QuantizerSpec>, dim: Option<usize>, trials: usize, seed: u64) -> Result<QuantReport, CliError> {
    let spec = spec.unwrap_or_else(synthetic_quantizer);
    let dim = dim.unwrap_or(match &spec {
        QuantizerSpec::Block {
            blocks: fedem_core::compression::BlockLayout::Explicit(l),
            ..
        } => l.iter().sum(),
        _ => 6,
    });
    spec.validate(dim).map_err(|e| match e {
        fedem_core::Error::Config(m) => CliError::Config(ConfigErrors(vec![ConfigError {
            path: "quantizer".into(),
            message: m,
        }])),
        other => CliError::Runtime(other),
    })?;
    let mut rng = stream(seed, 0, 0, Purpose::Data);
    let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut mc = stream(seed, 0, 0, Purpose::MonteCarlo);
    let m = empirical_moments(&spec, &x, trials, &mut mc).map_err(CliError::Runtime)?;
    // ‖mean − x‖ has second moment E‖Q(x) − x‖² / trials.
    let dev = m.mean.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let se = (m.mse / trials as f64).sqrt();
    let mean_deviation_se = if se > 0.0 { dev / se } else if dev == 0.0 { 0.0 } else { f64::INFINITY };
    let omega = spec.omega(dim);
    let bound = omega * x.iter().map(|v| v * v).sum::<f64>();
    let exact_mse = spec.exact_mse(&x);
    let passed = mean_deviation_se <= 3.0 && m.mse <= bound + 3.0 * m.mse_se() && exact_mse <= bound * (1.0 + 1e-12);
    Ok(QuantReport {
        spec,
        dim,
        trials,
        omega,
        mean_deviation_se,
        mse: m.mse,
        mse_se: m.mse_se(),
        exact_mse,
        bound,
        passed,
    })
}

/// One-paragraph summary of a trace file.
pub fn summarize(path: &Path, burn_in: usize) -> Result<String, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Runtime(e.into()))?;
    let trace = read_trace_csv(file).map_err(CliError::Runtime)?;
    let rows = &trace.rows;
    let mut s = String::new();
    let _ = writeln!(s, "rows: {}{}", rows.len(), if trace.truncated { " (truncated)" } else { "" });
    if let Some(last) = rows.last() {
        let _ = writeln!(s, "algorithm: {}", last.algo);
        let _ = writeln!(s, "final round: {}", last.round);
        let _ = writeln!(s, "epochs: {}", last.epoch);
        let _ = writeln!(s, "bits: {}", last.bits);
        let _ = writeln!(s, "conditional expectations: {}", last.ce_count);
        if let Some(h) = rows.iter().rev().find_map(|r| r.norm_h_sq) {
            let _ = writeln!(s, "last |h|^2: {h:e}");
        }
        if let Some(w) = rows.iter().rev().find_map(|r| r.objective) {
            let _ = writeln!(s, "last objective: {w}");
        }
    }
    match uniform_K_summary(rows, burn_in) {
        Ok(v) => {
            let _ = write!(s, "mean |h|^2 after {burn_in} rows: {v:e}");
        }
        Err(_) => {
            let _ = write!(s, "mean |h|^2 after {burn_in} rows: n/a");
        }
    }
    Ok(s)
}
