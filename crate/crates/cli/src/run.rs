//! Turning a parsed configuration into a runnable experiment.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fedem_core::compression::QuantizerSpec;
use fedem_core::fedem::{gamma_max, BatchMode, FedEm, FedEmConfig, MemoryInit, StepSize, Variant};
use fedem_core::gmm::{generate_synthetic, initial_theta, read_shards_csv, CovarianceMode, GaussianMixture};
use fedem_core::harness::trace::{Algo, RoundTrace, TraceWriter};
use fedem_core::harness::{estimate_constants, fedem_rounds_for_epochs, synthetic_covariance, synthetic_truth, vr_outer_for_epochs};
use fedem_core::linalg::Matrix;
use fedem_core::missem::{
    generate_missing, relative_error, run_missem, write_imputed_csv, write_trend_csv, MissEmConfig, MissingDataset,
};
use fedem_core::model::{sbar, LatentModel};
use fedem_core::vrfedem::{vr_gamma, VrConfig, VrFedEm};
use fedem_core::{Error, SufficientStatistic};

use crate::config::{Algorithm, Amount, ConfigError, ConfigErrors, CovarianceSpec, ExperimentConfig, GmmSource, ModelSection};

/// Failure of a CLI command, split by exit status.
#[derive(Debug)]
pub enum CliError {
    /// Rejected configuration (exit status 2).
    Config(ConfigErrors),
    /// Failure while loading data or running (exit status 1).
    Runtime(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    fn config(path: &str, message: impl Into<String>) -> Self {
        CliError::Config(ConfigErrors(vec![ConfigError {
            path: path.into(),
            message: message.into(),
        }]))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigErrors> for CliError {
    fn from(e: ConfigErrors) -> Self {
        CliError::Config(e)
    }
}

/// Configuration errors raised by the core become exit status 2, the rest 1.
fn classify(path: &str) -> impl Fn(Error) -> CliError + '_ {
    move |e| match e {
        Error::Config(m) => CliError::config(path, m),
        other => CliError::Runtime(other),
    }
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Runtime(Error::Io(e))
}

enum GmmPlan {
    FedEm(FedEmConfig<f64>),
    Vr(VrConfig<f64>),
}

enum Plan {
    Gmm {
        model: GaussianMixture<f64>,
        s_init: SufficientStatistic<f64>,
        plan: GmmPlan,
        /// Trace tag override (exact EM runs through the FedEM loop).
        label: Option<Algo>,
    },
    Missem {
        data: MissingDataset<f64>,
        config: MissEmConfig<f64>,
        truth: Option<Matrix<f64>>,
    },
}

/// A configuration with every automatic choice made, ready to run.
pub struct Prepared {
    /// `gamma`, `alpha` and the run length are numbers; `epochs` is gone.
    pub resolved: ExperimentConfig,
    plan: Plan,
}

impl Prepared {
    pub fn algo(&self) -> Algo {
        match &self.plan {
            Plan::Gmm { label: Some(a), .. } => *a,
            Plan::Gmm {
                plan: GmmPlan::FedEm(c), ..
            } => c.algo(),
            Plan::Gmm { plan: GmmPlan::Vr(_), .. } => Algo::VrFedem,
            Plan::Missem { .. } => Algo::Missem,
        }
    }
}

fn load_gmm(cfg: &ExperimentConfig) -> Result<GaussianMixture<f64>, CliError> {
    let ModelSection::Gmm {
        source,
        components,
        covariance,
    } = &cfg.model
    else {
        unreachable!("checked by the parser");
    };
    let shards = match source {
        GmmSource::Synthetic { total, workers, split } => {
            generate_synthetic(&synthetic_truth::<f64>(), *total, *workers, *split, cfg.seed)
                .map_err(classify("model"))?
                .shards
        }
        GmmSource::File { path } => read_shards_csv::<f64>(path).map_err(CliError::Runtime)?.shards,
    };
    let mode = match covariance {
        CovarianceSpec::Full => CovarianceMode::Full,
        CovarianceSpec::Fixed(None) => CovarianceMode::Fixed(synthetic_covariance()),
        CovarianceSpec::Fixed(Some(rows)) => {
            let d = rows.len();
            let flat = rows.iter().flatten().copied().collect();
            CovarianceMode::Fixed(Matrix::from_row_major(d, d, flat).map_err(classify("model.covariance_matrix"))?)
        }
    };
    GaussianMixture::new(shards, *components, mode).map_err(classify("model"))
}

/// Loads data, resolves automatic settings and validates the algorithm
/// configuration against the model.
pub fn prepare(cfg: &ExperimentConfig, parallel: bool) -> Result<Prepared, CliError> {
    let mut resolved = cfg.clone();
    let p = &cfg.params;
    let diag = &cfg.diagnostics;

    if cfg.algorithm == Algorithm::Missem {
        let (data, truth) = match &cfg.model {
            ModelSection::MissemSynthetic(spec) => {
                let syn = generate_missing::<f64>(spec, cfg.seed).map_err(classify("model"))?;
                (syn.data, Some(syn.truth))
            }
            ModelSection::MissemFile { path, rows, cols } => (
                MissingDataset::from_csv_path(path, *rows, *cols).map_err(CliError::Runtime)?,
                None,
            ),
            ModelSection::Gmm { .. } => unreachable!("checked by the parser"),
        };
        let omega = cfg.quantizer.omega(data.cells());
        let alpha = resolve_alpha(p.alpha, omega);
        let rounds = match (p.rounds, p.epochs) {
            (Some(r), _) => r,
            (None, Some(e)) => (e * data.cells() as f64 / p.batch as f64).ceil() as usize,
            (None, None) => MissEmConfig::<f64>::default().rounds,
        };
        let Amount::Value(gamma) = p.gamma else {
            unreachable!("checked by the parser")
        };
        let config = MissEmConfig {
            rank: p.rank,
            gamma: StepSize::Constant(gamma),
            alpha,
            batch: p.batch,
            rounds,
            init: p.init,
            memory_init: p.memory_init,
            quantizer: cfg.quantizer.clone(),
            seed: cfg.seed,
            diagnostics_every: diag.every,
            memory_gap_every: diag.memory_gap_every,
        };
        config.validate(&data).map_err(classify("params"))?;
        resolved.params.alpha = Amount::Value(alpha);
        resolved.params.rounds = Some(rounds);
        resolved.params.epochs = None;
        return Ok(Prepared {
            resolved,
            plan: Plan::Missem { data, config, truth },
        });
    }

    let model = load_gmm(cfg)?;
    let theta = initial_theta(&model, cfg.seed).map_err(classify("model"))?;
    let s_init = sbar(&model, &theta).map_err(CliError::Runtime)?;
    let n = model.num_workers();
    let total = model.total_examples();
    let omega = cfg.quantizer.omega(model.stat_dim());
    cfg.quantizer.validate(model.stat_dim()).map_err(classify("quantizer"))?;
    let alpha = resolve_alpha(p.alpha, omega);

    let gamma = match p.gamma {
        Amount::Value(g) => g,
        Amount::Auto => {
            let c = &cfg.constants;
            let l = match c.l {
                Some(l) => l,
                None => {
                    let est = estimate_constants(&model, &s_init, c.probes, c.radius, cfg.seed)
                        .map_err(classify("constants"))?;
                    log::info!("estimated L = {} from {} probes", est.l, est.probes);
                    resolved.constants.l = Some(est.l);
                    est.l
                }
            };
            let (v_min, l_dot_w) = (c.v_min.expect("checked"), c.l_dot_w.expect("checked"));
            let g = if cfg.algorithm == Algorithm::VrFedem {
                vr_gamma(v_min, c.v_max.expect("checked"), l_dot_w, l, n, omega)
            } else {
                gamma_max(v_min, l_dot_w, l, n, omega, p.participation)
            };
            if !(g > 0.0 && g.is_finite()) {
                return Err(CliError::config("params.gamma", format!("automatic step size is not usable: {g}")));
            }
            g
        }
    };

    let (plan, label) = if cfg.algorithm == Algorithm::VrFedem {
        let outer = match (p.outer, p.epochs) {
            (Some(o), _) => o,
            (None, Some(e)) => vr_outer_for_epochs(e, total, n, p.batch, p.inner),
            (None, None) => unreachable!("checked by the parser"),
        };
        let config = VrConfig {
            outer,
            inner: p.inner,
            batch: p.batch,
            batch_mode: p.batch_mode,
            gamma: StepSize::Constant(gamma),
            alpha,
            participation: p.participation,
            memory_init: p.memory_init,
            seed: cfg.seed,
            quantizer: cfg.quantizer.clone(),
            diagnostics_every: diag.every,
            memory_gap_every: diag.memory_gap_every,
            theory_mode: p.theory_mode,
            parallel,
            cache: p.cache,
        };
        config.validate(&model).map_err(classify("params"))?;
        resolved.params.outer = Some(outer);
        (GmmPlan::Vr(config), None)
    } else {
        let exact = cfg.algorithm == Algorithm::ExactEm;
        let naive = cfg.algorithm == Algorithm::Naive;
        let rounds = match (p.rounds, p.epochs) {
            (Some(r), _) => r,
            (None, Some(e)) if exact => e.ceil() as usize,
            (None, Some(e)) => fedem_rounds_for_epochs(e, total, n, p.participation, p.batch),
            (None, None) => unreachable!("checked by the parser"),
        };
        let config = if exact {
            if cfg.quantizer != QuantizerSpec::Identity {
                return Err(CliError::config("quantizer.kind", "algorithm = \"exact-em\" needs the identity quantizer"));
            }
            FedEmConfig {
                gamma: StepSize::Constant(1.0),
                alpha: 0.0,
                participation: 1.0,
                batch: 1,
                batch_mode: BatchMode::FullPass,
                rounds,
                memory_init: MemoryInit::Zeros,
                seed: cfg.seed,
                quantizer: QuantizerSpec::Identity,
                variant: Variant::FedEm,
                diagnostics_every: diag.every,
                memory_gap_every: diag.memory_gap_every,
                theory_mode: false,
                parallel,
            }
        } else {
            FedEmConfig {
                gamma: StepSize::Constant(gamma),
                alpha: if naive { 0.0 } else { alpha },
                participation: p.participation,
                batch: p.batch,
                batch_mode: p.batch_mode,
                rounds,
                memory_init: if naive { MemoryInit::Zeros } else { p.memory_init },
                seed: cfg.seed,
                quantizer: cfg.quantizer.clone(),
                variant: if naive { Variant::Naive } else { Variant::FedEm },
                diagnostics_every: diag.every,
                memory_gap_every: diag.memory_gap_every,
                theory_mode: p.theory_mode,
                parallel,
            }
        };
        config.validate(&model).map_err(classify("params"))?;
        resolved.params.rounds = Some(rounds);
        (GmmPlan::FedEm(config), exact.then_some(Algo::ExactEm))
    };
    resolved.params.gamma = Amount::Value(gamma);
    resolved.params.alpha = Amount::Value(alpha);
    resolved.params.epochs = None;
    Ok(Prepared {
        resolved,
        plan: Plan::Gmm {
            model,
            s_init,
            plan,
            label,
        },
    })
}

fn resolve_alpha(alpha: Amount, omega: f64) -> f64 {
    match alpha {
        Amount::Value(a) => a,
        Amount::Auto => 1.0 / (1.0 + omega),
    }
}

/// What a finished run produced.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub trace_path: PathBuf,
    pub manifest_path: PathBuf,
    pub rows: usize,
    pub last: Option<RoundTrace>,
    /// Relative error against the synthetic truth (missing-data runs).
    pub relative_error: Option<f64>,
}

/// Output directory: the flag, then `output.dir`, then `FEDEM_OUT_DIR`,
/// then the working directory.
pub fn output_dir(flag: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.output.dir.clone())
        .or_else(|| std::env::var_os("FEDEM_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Writes the manifest, then streams the trace. A failed run leaves the rows
/// written so far followed by the truncation marker.
pub fn execute(prepared: &Prepared, out_dir: &Path) -> Result<RunSummary, CliError> {
    std::fs::create_dir_all(out_dir).map_err(io_err)?;
    let out = &prepared.resolved.output;
    let manifest_path = out_dir.join(&out.manifest);
    std::fs::write(&manifest_path, prepared.resolved.to_toml()).map_err(io_err)?;
    let trace_path = out_dir.join(&out.trace);
    let file = BufWriter::new(File::create(&trace_path).map_err(io_err)?);
    let mut writer = TraceWriter::new(file).map_err(CliError::Runtime)?;

    let mut rows = 0usize;
    let mut last = None;
    let mut relative = None;
    let result = stream_rows(prepared, out_dir, &mut writer, &mut |row| {
        rows += 1;
        last = Some(row.clone());
    }, &mut relative);
    match result {
        Ok(()) => writer.flush().map_err(CliError::Runtime)?,
        Err(e) => {
            writer.truncate().map_err(CliError::Runtime)?;
            return Err(e);
        }
    }
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        trace_path,
        manifest_path,
        rows,
        last,
        relative_error: relative,
    })
}

fn stream_rows<W: Write>(
    prepared: &Prepared,
    out_dir: &Path,
    writer: &mut TraceWriter<W>,
    seen: &mut dyn FnMut(&RoundTrace),
    relative: &mut Option<f64>,
) -> Result<(), CliError> {
    let mut emit = |mut row: RoundTrace, label: Option<Algo>| -> Result<(), CliError> {
        if let Some(a) = label {
            row.algo = a;
        }
        writer.write(&row).map_err(CliError::Runtime)?;
        seen(&row);
        Ok(())
    };
    match &prepared.plan {
        Plan::Gmm {
            model,
            s_init,
            plan: GmmPlan::FedEm(config),
            label,
        } => {
            let mut driver = FedEm::new(model, config.clone(), s_init).map_err(classify("params"))?;
            while !driver.finished() {
                emit(driver.step().map_err(CliError::Runtime)?, *label)?;
            }
        }
        Plan::Gmm {
            model,
            s_init,
            plan: GmmPlan::Vr(config),
            ..
        } => {
            let mut driver = VrFedEm::new(model, config.clone(), s_init).map_err(classify("params"))?;
            emit(driver.init_row().map_err(CliError::Runtime)?, None)?;
            while !driver.finished() {
                emit(driver.step().map_err(CliError::Runtime)?, None)?;
            }
        }
        Plan::Missem { data, config, truth } => {
            let run = run_missem(data, config).map_err(CliError::Runtime)?;
            for row in run.trace {
                emit(row, None)?;
            }
            let out = &prepared.resolved.output;
            write_imputed_csv(&out_dir.join(&out.imputed), data, &run.imputed).map_err(CliError::Runtime)?;
            write_trend_csv(&out_dir.join(&out.trend), &run.trend).map_err(CliError::Runtime)?;
            *relative = truth.as_ref().map(|t| relative_error(run.theta.matrix(), t));
        }
    }
    Ok(())
}
