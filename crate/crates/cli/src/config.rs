//! Experiment configuration: a TOML document with a fixed set of keys.
//!
//! ```toml
//! algorithm = "fedem"          # fedem | fedem-pp | vr-fedem | naive | exact-em | missem
//! seed = 42
//!
//! [model]
//! kind = "gmm"                 # gmm | missem-synthetic | missem-file
//! total = 10000                # synthetic mixture data ...
//! workers = 100
//! split = "iid"                # iid | sorted
//! # data = "shards.csv"        # ... or shards from a file
//! covariance = "fixed"         # fixed | full
//!
//! [quantizer]
//! kind = "block"               # identity | dithering | block
//! p = 2.0
//! blocks = [2, 4]              # or block_size = 8
//!
//! [params]
//! gamma = 0.01                 # or "auto-theorem"
//! alpha = 0.01                 # or "auto" for 1 / (1 + omega)
//! participation = 0.75
//! batch = 20
//! epochs = 500                 # or rounds = ...
//!
//! [constants]                  # used by gamma = "auto-theorem"
//! v_min = 1.0
//! l_dot_w = 1.0
//!
//! [diagnostics]
//! every = 1
//! memory_gap_every = 10
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Unknown keys are errors, and every problem found is reported with its key
//! path rather than stopping at the first one.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;

use fedem_core::compression::{BlockLayout, QuantizerSpec};
use fedem_core::fedem::{BatchMode, MemoryInit};
use fedem_core::gmm::Split;
use fedem_core::missem::{MissInit, MissingSpec};
use toml::{Table, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    Fedem,
    FedemPp,
    VrFedem,
    Naive,
    ExactEm,
    Missem,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Fedem,
        Algorithm::FedemPp,
        Algorithm::VrFedem,
        Algorithm::Naive,
        Algorithm::ExactEm,
        Algorithm::Missem,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Fedem => "fedem",
            Algorithm::FedemPp => "fedem-pp",
            Algorithm::VrFedem => "vr-fedem",
            Algorithm::Naive => "naive",
            Algorithm::ExactEm => "exact-em",
            Algorithm::Missem => "missem",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s)
    }

    /// Keys of `[params]` this algorithm reads.
    fn param_keys(self) -> &'static [&'static str] {
        match self {
            Algorithm::Fedem | Algorithm::FedemPp => &[
                "gamma", "alpha", "participation", "batch", "batch_mode", "rounds", "epochs", "memory_init", "theory_mode",
            ],
            Algorithm::Naive => &["gamma", "participation", "batch", "batch_mode", "rounds", "epochs"],
            Algorithm::VrFedem => &[
                "gamma", "alpha", "participation", "batch", "batch_mode", "outer", "inner", "epochs", "memory_init",
                "theory_mode", "cache",
            ],
            Algorithm::ExactEm => &["rounds", "epochs"],
            Algorithm::Missem => &["gamma", "alpha", "batch", "rounds", "epochs", "rank", "memory_init", "init"],
        }
    }
}

/// A number or the automatic choice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Amount {
    Value(f64),
    Auto,
}

#[derive(Clone, Debug, PartialEq)]
pub enum GmmSource {
    Synthetic { total: usize, workers: usize, split: Split },
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq)]
pub enum CovarianceSpec {
    Full,
    /// Known covariance; `None` means the synthetic ground truth.
    Fixed(Option<Vec<Vec<f64>>>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelSection {
    Gmm {
        source: GmmSource,
        components: usize,
        covariance: CovarianceSpec,
    },
    MissemSynthetic(MissingSpec),
    MissemFile {
        path: PathBuf,
        rows: Option<usize>,
        cols: Option<usize>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub gamma: Amount,
    pub alpha: Amount,
    pub participation: f64,
    pub batch: usize,
    pub batch_mode: BatchMode,
    pub rounds: Option<usize>,
    pub epochs: Option<f64>,
    pub outer: Option<usize>,
    pub inner: usize,
    pub rank: usize,
    pub memory_init: MemoryInit,
    pub init: MissInit,
    pub theory_mode: bool,
    pub cache: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Constants {
    pub v_min: Option<f64>,
    pub v_max: Option<f64>,
    pub l_dot_w: Option<f64>,
    /// When absent, estimated from secant probes around the start.
    pub l: Option<f64>,
    pub probes: usize,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    pub every: usize,
    pub memory_gap_every: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Output {
    pub dir: Option<PathBuf>,
    pub trace: String,
    pub manifest: String,
    pub imputed: String,
    pub trend: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub model: ModelSection,
    pub quantizer: QuantizerSpec,
    pub params: Params,
    pub constants: Constants,
    pub diagnostics: Diagnostics,
    pub output: Output,
}

/// One validation problem.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// All problems found in a document.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, e) in self.0.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

struct Errors(Vec<ConfigError>);

impl Errors {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(ConfigError {
            path: path.into(),
            message: message.into(),
        });
    }
}

/// A table being read; remembers which keys were consumed.
struct Section<'a> {
    path: String,
    table: Option<&'a Table>,
    used: BTreeSet<String>,
}

impl<'a> Section<'a> {
    fn new(path: &str, table: Option<&'a Table>) -> Self {
        Self {
            path: path.to_string(),
            table,
            used: BTreeSet::new(),
        }
    }

    fn key(&self, k: &str) -> String {
        if self.path.is_empty() {
            k.to_string()
        } else {
            format!("{}.{k}", self.path)
        }
    }

    fn has(&self, k: &str) -> bool {
        self.table.is_some_and(|t| t.contains_key(k))
    }

    fn raw(&mut self, k: &str) -> Option<&'a Value> {
        let v = self.table?.get(k)?;
        self.used.insert(k.to_string());
        Some(v)
    }

    fn sub(&mut self, k: &str, errs: &mut Errors) -> Section<'a> {
        let path = self.key(k);
        match self.raw(k) {
            None => Section::new(&path, None),
            Some(Value::Table(t)) => Section::new(&path, Some(t)),
            Some(_) => {
                errs.push(path.clone(), "expected a table");
                Section::new(&path, None)
            }
        }
    }

    fn str(&mut self, k: &str, errs: &mut Errors) -> Option<&'a str> {
        match self.raw(k)? {
            Value::String(s) => Some(s),
            _ => {
                errs.push(self.key(k), "expected a string");
                None
            }
        }
    }

    fn f64(&mut self, k: &str, errs: &mut Errors) -> Option<f64> {
        match self.raw(k)? {
            Value::Float(v) => Some(*v),
            Value::Integer(v) => Some(*v as f64),
            Value::String(s) if s == "inf" => Some(f64::INFINITY),
            _ => {
                errs.push(self.key(k), "expected a number");
                None
            }
        }
    }

    fn int(&mut self, k: &str, errs: &mut Errors) -> Option<i64> {
        match self.raw(k)? {
            Value::Integer(v) => Some(*v),
            _ => {
                errs.push(self.key(k), "expected an integer");
                None
            }
        }
    }

    fn usize(&mut self, k: &str, min: usize, errs: &mut Errors) -> Option<usize> {
        let v = self.int(k, errs)?;
        if v < min as i64 {
            errs.push(self.key(k), format!("must be at least {min}, got {v}"));
            return None;
        }
        Some(v as usize)
    }

    fn bool(&mut self, k: &str, errs: &mut Errors) -> Option<bool> {
        match self.raw(k)? {
            Value::Boolean(b) => Some(*b),
            _ => {
                errs.push(self.key(k), "expected true or false");
                None
            }
        }
    }

    fn choice<V: Copy>(&mut self, k: &str, options: &[(&str, V)], errs: &mut Errors) -> Option<V> {
        let s = self.str(k, errs)?;
        match options.iter().find(|(name, _)| *name == s) {
            Some((_, v)) => Some(*v),
            None => {
                let names: Vec<_> = options.iter().map(|(n, _)| *n).collect();
                errs.push(self.key(k), format!("unknown value {s:?}; expected one of {}", names.join(", ")));
                None
            }
        }
    }

    fn amount(&mut self, k: &str, auto: &str, errs: &mut Errors) -> Option<Amount> {
        match self.raw(k)? {
            Value::Float(v) => Some(Amount::Value(*v)),
            Value::Integer(v) => Some(Amount::Value(*v as f64)),
            Value::String(s) if s == auto => Some(Amount::Auto),
            _ => {
                errs.push(self.key(k), format!("expected a number or {auto:?}"));
                None
            }
        }
    }

    fn finish(self, errs: &mut Errors) {
        if let Some(t) = self.table {
            for k in t.keys() {
                if !self.used.contains(k) {
                    errs.push(self.key(k), "unknown key");
                }
            }
        }
    }
}

fn positive(errs: &mut Errors, path: &str, v: f64) {
    if !(v > 0.0 && v.is_finite()) {
        errs.push(path, format!("must be positive and finite, got {v}"));
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
    let doc: Table = text.parse().map_err(|e: toml::de::Error| {
        ConfigErrors(vec![ConfigError {
            path: "<document>".into(),
            message: e.message().to_string(),
        }])
    })?;
    from_table(&doc)
}

fn from_table(doc: &Table) -> Result<ExperimentConfig, ConfigErrors> {
    let mut errs = Errors(Vec::new());
    let mut root = Section::new("", Some(doc));

    let algorithm = match root.str("algorithm", &mut errs) {
        Some(s) => Algorithm::parse(s).or_else(|| {
            let names: Vec<_> = Algorithm::ALL.iter().map(|a| a.as_str()).collect();
            errs.push("algorithm", format!("unknown algorithm {s:?}; expected one of {}", names.join(", ")));
            None
        }),
        None => {
            if !root.has("algorithm") {
                errs.push("algorithm", "missing");
            }
            None
        }
    };
    let seed = root.int("seed", &mut errs).map(|v| v as u64).unwrap_or(0);

    let mut m = root.sub("model", &mut errs);
    let model = parse_model(&mut m, &mut errs);
    m.finish(&mut errs);

    let mut q = root.sub("quantizer", &mut errs);
    let quantizer = parse_quantizer(&mut q, &mut errs);
    q.finish(&mut errs);

    let mut p = root.sub("params", &mut errs);
    let params = parse_params(&mut p, algorithm, &mut errs);
    p.finish(&mut errs);

    let mut c = root.sub("constants", &mut errs);
    let constants = Constants {
        v_min: c.f64("v_min", &mut errs),
        v_max: c.f64("v_max", &mut errs),
        l_dot_w: c.f64("l_dot_w", &mut errs),
        l: c.f64("l", &mut errs),
        probes: c.usize("probes", 10, &mut errs).unwrap_or(200),
        radius: c.f64("radius", &mut errs).unwrap_or(1e-2),
    };
    for (k, v) in [
        ("v_min", constants.v_min),
        ("v_max", constants.v_max),
        ("l_dot_w", constants.l_dot_w),
        ("l", constants.l),
        ("radius", Some(constants.radius)),
    ] {
        if let Some(v) = v {
            positive(&mut errs, &format!("constants.{k}"), v);
        }
    }
    c.finish(&mut errs);

    let mut d = root.sub("diagnostics", &mut errs);
    let default_every = if algorithm == Some(Algorithm::Missem) { 10 } else { 1 };
    let diagnostics = Diagnostics {
        every: d.usize("every", 0, &mut errs).unwrap_or(default_every),
        memory_gap_every: d.usize("memory_gap_every", 0, &mut errs).unwrap_or(10),
    };
    d.finish(&mut errs);

    let mut o = root.sub("output", &mut errs);
    let output = Output {
        dir: o.str("dir", &mut errs).map(PathBuf::from),
        trace: o.str("trace", &mut errs).unwrap_or("trace.csv").to_string(),
        manifest: o.str("manifest", &mut errs).unwrap_or("manifest.toml").to_string(),
        imputed: o.str("imputed", &mut errs).unwrap_or("imputed.csv").to_string(),
        trend: o.str("trend", &mut errs).unwrap_or("trend.csv").to_string(),
    };
    o.finish(&mut errs);
    root.finish(&mut errs);

    if let (Some(a), Some(m)) = (algorithm, &model) {
        let missing_model = matches!(m, ModelSection::MissemSynthetic(_) | ModelSection::MissemFile { .. });
        if (a == Algorithm::Missem) != missing_model {
            errs.push(
                "model.kind",
                format!("model kind does not match algorithm = {:?}", a.as_str()),
            );
        }
    }
    if let (Some(a), Some(p)) = (algorithm, &params) {
        if a == Algorithm::FedemPp && p.participation >= 1.0 {
            errs.push("params.participation", "algorithm = \"fedem-pp\" needs participation below 1");
        }
        if a == Algorithm::VrFedem && p.participation != 1.0 {
            errs.push(
                "params.participation",
                format!(
                    "algorithm = \"vr-fedem\" requires full participation, got participation = {}",
                    p.participation
                ),
            );
        }
        if p.gamma == Amount::Auto {
            if a == Algorithm::Missem {
                errs.push("params.gamma", "\"auto-theorem\" is not available for algorithm = \"missem\"");
            }
            for (k, v) in [("v_min", constants.v_min), ("l_dot_w", constants.l_dot_w)] {
                if v.is_none() {
                    errs.push(format!("constants.{k}"), "required by params.gamma = \"auto-theorem\"");
                }
            }
            if a == Algorithm::VrFedem && constants.v_max.is_none() {
                errs.push("constants.v_max", "required by params.gamma = \"auto-theorem\" with algorithm = \"vr-fedem\"");
            }
        }
    }

    if !errs.0.is_empty() {
        return Err(ConfigErrors(errs.0));
    }
    Ok(ExperimentConfig {
        algorithm: algorithm.expect("checked"),
        seed,
        model: model.expect("checked"),
        quantizer,
        params: params.expect("checked"),
        constants,
        diagnostics,
        output,
    })
}

fn parse_model(m: &mut Section<'_>, errs: &mut Errors) -> Option<ModelSection> {
    if m.table.is_none() {
        errs.push("model", "missing");
        return None;
    }
    let kind = m.choice(
        "kind",
        &[("gmm", 0), ("missem-synthetic", 1), ("missem-file", 2)],
        errs,
    );
    match kind {
        None => {
            if !m.has("kind") {
                errs.push("model.kind", "missing");
            }
            None
        }
        Some(0) => {
            let components = m.usize("components", 1, errs).unwrap_or(2);
            let source = if m.has("data") {
                for k in ["total", "workers", "split"] {
                    if m.has(k) {
                        m.raw(k);
                        errs.push(m.key(k), "cannot be combined with model.data");
                    }
                }
                GmmSource::File {
                    path: PathBuf::from(m.str("data", errs)?),
                }
            } else {
                let total = m.usize("total", 1, errs).unwrap_or(10_000);
                let workers = m.usize("workers", 1, errs).unwrap_or(100);
                let split = m
                    .choice("split", &[("iid", Split::Iid), ("sorted", Split::Sorted)], errs)
                    .unwrap_or(Split::Iid);
                if !total.is_multiple_of(workers) {
                    errs.push("model.total", format!("{total} examples cannot be split evenly across {workers} workers"));
                }
                if components != 2 {
                    errs.push("model.components", "synthetic mixture data has exactly 2 components");
                }
                GmmSource::Synthetic { total, workers, split }
            };
            let synthetic = matches!(source, GmmSource::Synthetic { .. });
            let default_cov = if synthetic { "fixed" } else { "full" };
            let cov_kind = if m.has("covariance") {
                m.choice("covariance", &[("fixed", "fixed"), ("full", "full")], errs)?
            } else {
                default_cov
            };
            let matrix = match m.raw("covariance_matrix") {
                None => None,
                Some(v) => match matrix_of(v) {
                    Some(mat) => Some(mat),
                    None => {
                        errs.push("model.covariance_matrix", "expected a square array of number arrays");
                        return None;
                    }
                },
            };
            let covariance = match (cov_kind, matrix) {
                ("full", None) => CovarianceSpec::Full,
                ("full", Some(_)) => {
                    errs.push("model.covariance_matrix", "only used with covariance = \"fixed\"");
                    return None;
                }
                (_, mat) => {
                    if mat.is_none() && !synthetic {
                        errs.push("model.covariance_matrix", "required for covariance = \"fixed\" with file data");
                    }
                    CovarianceSpec::Fixed(mat)
                }
            };
            Some(ModelSection::Gmm {
                source,
                components,
                covariance,
            })
        }
        Some(1) => {
            let spec = MissingSpec {
                rows: m.usize("rows", 1, errs).unwrap_or(100),
                cols: m.usize("cols", 1, errs).unwrap_or(50),
                rank: m.usize("rank", 1, errs).unwrap_or(2),
                observed_fraction: m.f64("observed_fraction", errs).unwrap_or(0.3),
                noise: m.f64("noise", errs).unwrap_or(0.1),
                servers: m.usize("servers", 1, errs).unwrap_or(10),
                observers: m.usize("observers", 1, errs).unwrap_or(50),
            };
            if !(0.0..=1.0).contains(&spec.observed_fraction) {
                errs.push("model.observed_fraction", "must lie in [0, 1]");
            }
            if !(spec.noise >= 0.0) {
                errs.push("model.noise", "must be non-negative");
            }
            if spec.observers < spec.servers {
                errs.push("model.observers", "need at least one observer per server");
            }
            Some(ModelSection::MissemSynthetic(spec))
        }
        Some(_) => {
            let path = m.str("path", errs).map(PathBuf::from);
            if path.is_none() && !m.has("path") {
                errs.push("model.path", "missing");
            }
            let rows = m.usize("rows", 1, errs);
            let cols = m.usize("cols", 1, errs);
            Some(ModelSection::MissemFile { path: path?, rows, cols })
        }
    }
}

fn matrix_of(v: &Value) -> Option<Vec<Vec<f64>>> {
    let rows = v.as_array()?;
    let out: Option<Vec<Vec<f64>>> = rows
        .iter()
        .map(|r| {
            r.as_array()?
                .iter()
                .map(|x| x.as_float().or_else(|| x.as_integer().map(|i| i as f64)))
                .collect()
        })
        .collect();
    let out = out?;
    out.iter().all(|r| r.len() == out.len()).then_some(out)
}

fn parse_quantizer(q: &mut Section<'_>, errs: &mut Errors) -> QuantizerSpec {
    if q.table.is_none() {
        return QuantizerSpec::Identity;
    }
    let kind = q.choice("kind", &[("identity", 0), ("dithering", 1), ("block", 2)], errs);
    match kind {
        Some(1) => {
            let r = q.f64("r", errs).unwrap_or(2.0);
            let levels = q.usize("levels", 1, errs).unwrap_or(1);
            if !(r >= 1.0) {
                errs.push("quantizer.r", "must be at least 1");
            }
            QuantizerSpec::Dithering {
                r,
                levels: levels.min(u32::MAX as usize) as u32,
            }
        }
        Some(2) => {
            let p = q.f64("p", errs).unwrap_or(2.0);
            if !(p >= 1.0) {
                errs.push("quantizer.p", "must be at least 1");
            }
            let blocks = match (q.has("blocks"), q.has("block_size")) {
                (true, true) => {
                    q.raw("blocks");
                    q.raw("block_size");
                    errs.push("quantizer.blocks", "give either quantizer.blocks or quantizer.block_size");
                    BlockLayout::Uniform(1)
                }
                (false, true) => BlockLayout::Uniform(q.usize("block_size", 1, errs).unwrap_or(1)),
                (true, false) => match q.raw("blocks").and_then(Value::as_array) {
                    Some(a) => {
                        let lens: Option<Vec<usize>> = a
                            .iter()
                            .map(|v| v.as_integer().filter(|&i| i > 0).map(|i| i as usize))
                            .collect();
                        match lens {
                            Some(l) if !l.is_empty() => BlockLayout::Explicit(l),
                            _ => {
                                errs.push("quantizer.blocks", "expected a non-empty array of positive integers");
                                BlockLayout::Uniform(1)
                            }
                        }
                    }
                    None => {
                        errs.push("quantizer.blocks", "expected an array");
                        BlockLayout::Uniform(1)
                    }
                },
                (false, false) => {
                    errs.push("quantizer.blocks", "missing (or give quantizer.block_size)");
                    BlockLayout::Uniform(1)
                }
            };
            QuantizerSpec::Block { p, blocks }
        }
        Some(_) => QuantizerSpec::Identity,
        None => {
            if !q.has("kind") {
                errs.push("quantizer.kind", "missing");
            }
            QuantizerSpec::Identity
        }
    }
}

fn parse_params(p: &mut Section<'_>, algorithm: Option<Algorithm>, errs: &mut Errors) -> Option<Params> {
    let algorithm = algorithm?;
    if let Some(t) = p.table {
        let allowed = algorithm.param_keys();
        for k in t.keys() {
            if !allowed.contains(&k.as_str()) && is_param_key(k) {
                p.raw(k);
                errs.push(p.key(k), format!("not used by algorithm = {:?}", algorithm.as_str()));
            }
        }
    }
    let missem = algorithm == Algorithm::Missem;
    let default_p = if algorithm == Algorithm::FedemPp { 0.75 } else { 1.0 };
    let (default_gamma, default_alpha, default_batch) = match algorithm {
        Algorithm::Missem => (0.1, 0.5, 100),
        Algorithm::VrFedem => (0.01, 0.01, 5),
        Algorithm::ExactEm => (1.0, 0.0, 1),
        _ => (0.01, 0.01, 20),
    };
    let params = Params {
        gamma: p.amount("gamma", "auto-theorem", errs).unwrap_or(Amount::Value(default_gamma)),
        alpha: p.amount("alpha", "auto", errs).unwrap_or(Amount::Value(default_alpha)),
        participation: p.f64("participation", errs).unwrap_or(default_p),
        batch: p.usize("batch", 1, errs).unwrap_or(default_batch),
        batch_mode: p
            .choice(
                "batch_mode",
                &[("with-replacement", BatchMode::WithReplacement), ("full-pass", BatchMode::FullPass)],
                errs,
            )
            .unwrap_or(BatchMode::WithReplacement),
        rounds: p.usize("rounds", 1, errs),
        epochs: p.f64("epochs", errs),
        outer: p.usize("outer", 1, errs),
        inner: p.usize("inner", 1, errs).unwrap_or(20),
        rank: p.usize("rank", 1, errs).unwrap_or(2),
        memory_init: p
            .choice(
                "memory_init",
                &[("mean-field", MemoryInit::MeanField), ("zeros", MemoryInit::Zeros)],
                errs,
            )
            .unwrap_or(MemoryInit::MeanField),
        init: p
            .choice("init", &[("spectral", MissInit::Spectral), ("zero", MissInit::Zero)], errs)
            .unwrap_or(MissInit::Spectral),
        theory_mode: p.bool("theory_mode", errs).unwrap_or(false),
        cache: p.bool("cache", errs).unwrap_or(false),
    };
    if let Amount::Value(g) = params.gamma {
        positive(errs, "params.gamma", g);
    }
    if let Amount::Value(a) = params.alpha {
        if !(a >= 0.0 && a.is_finite()) {
            errs.push("params.alpha", format!("must be non-negative, got {a}"));
        }
    }
    if !(params.participation > 0.0 && params.participation <= 1.0) {
        errs.push("params.participation", format!("must lie in (0, 1], got {}", params.participation));
    }
    if let Some(e) = params.epochs {
        positive(errs, "params.epochs", e);
    }
    let budget = if algorithm == Algorithm::VrFedem { "outer" } else { "rounds" };
    let has_budget = if algorithm == Algorithm::VrFedem {
        params.outer.is_some()
    } else {
        params.rounds.is_some()
    };
    match (has_budget, params.epochs.is_some()) {
        (true, true) => errs.push(
            format!("params.{budget}"),
            format!("give either params.{budget} or params.epochs"),
        ),
        (false, false) if (p.table.is_some() || !missem)
            && !p.has(budget) && !p.has("epochs") => {
                errs.push(format!("params.{budget}"), "missing (or give params.epochs)");
            }
        _ => {}
    }
    Some(params)
}

fn is_param_key(k: &str) -> bool {
    [
        "gamma", "alpha", "participation", "batch", "batch_mode", "rounds", "epochs", "outer", "inner", "rank",
        "memory_init", "init", "theory_mode", "cache",
    ]
    .contains(&k)
}

impl ExperimentConfig {
    /// The configuration as a document accepted by [`parse_config`].
    pub fn to_toml(&self) -> String {
        let mut root = Table::new();
        root.insert("algorithm".into(), self.algorithm.as_str().into());
        root.insert("seed".into(), Value::Integer(self.seed as i64));

        let mut m = Table::new();
        match &self.model {
            ModelSection::Gmm {
                source,
                components,
                covariance,
            } => {
                m.insert("kind".into(), "gmm".into());
                m.insert("components".into(), int(*components));
                match source {
                    GmmSource::Synthetic { total, workers, split } => {
                        m.insert("total".into(), int(*total));
                        m.insert("workers".into(), int(*workers));
                        m.insert(
                            "split".into(),
                            match split {
                                Split::Iid => "iid",
                                Split::Sorted => "sorted",
                            }
                            .into(),
                        );
                    }
                    GmmSource::File { path } => {
                        m.insert("data".into(), path.display().to_string().into());
                    }
                }
                match covariance {
                    CovarianceSpec::Full => {
                        m.insert("covariance".into(), "full".into());
                    }
                    CovarianceSpec::Fixed(mat) => {
                        m.insert("covariance".into(), "fixed".into());
                        if let Some(mat) = mat {
                            let rows = mat
                                .iter()
                                .map(|r| Value::Array(r.iter().map(|&x| Value::Float(x)).collect()))
                                .collect();
                            m.insert("covariance_matrix".into(), Value::Array(rows));
                        }
                    }
                }
            }
            ModelSection::MissemSynthetic(s) => {
                m.insert("kind".into(), "missem-synthetic".into());
                m.insert("rows".into(), int(s.rows));
                m.insert("cols".into(), int(s.cols));
                m.insert("rank".into(), int(s.rank));
                m.insert("observed_fraction".into(), Value::Float(s.observed_fraction));
                m.insert("noise".into(), Value::Float(s.noise));
                m.insert("servers".into(), int(s.servers));
                m.insert("observers".into(), int(s.observers));
            }
            ModelSection::MissemFile { path, rows, cols } => {
                m.insert("kind".into(), "missem-file".into());
                m.insert("path".into(), path.display().to_string().into());
                if let Some(r) = rows {
                    m.insert("rows".into(), int(*r));
                }
                if let Some(c) = cols {
                    m.insert("cols".into(), int(*c));
                }
            }
        }
        root.insert("model".into(), Value::Table(m));

        let mut q = Table::new();
        match &self.quantizer {
            QuantizerSpec::Identity => {
                q.insert("kind".into(), "identity".into());
            }
            QuantizerSpec::Dithering { r, levels } => {
                q.insert("kind".into(), "dithering".into());
                q.insert("r".into(), float_or_inf(*r));
                q.insert("levels".into(), int(*levels as usize));
            }
            QuantizerSpec::Block { p, blocks } => {
                q.insert("kind".into(), "block".into());
                q.insert("p".into(), float_or_inf(*p));
                match blocks {
                    BlockLayout::Explicit(l) => {
                        q.insert("blocks".into(), Value::Array(l.iter().map(|&x| int(x)).collect()));
                    }
                    BlockLayout::Uniform(k) => {
                        q.insert("block_size".into(), int(*k));
                    }
                }
            }
        }
        root.insert("quantizer".into(), Value::Table(q));

        let p = &self.params;
        let mut t = Table::new();
        let allowed = self.algorithm.param_keys();
        let mut put = |k: &str, v: Value| {
            if allowed.contains(&k) {
                t.insert(k.into(), v);
            }
        };
        put(
            "gamma",
            match p.gamma {
                Amount::Value(g) => Value::Float(g),
                Amount::Auto => "auto-theorem".into(),
            },
        );
        put(
            "alpha",
            match p.alpha {
                Amount::Value(a) => Value::Float(a),
                Amount::Auto => "auto".into(),
            },
        );
        put("participation", Value::Float(p.participation));
        put("batch", int(p.batch));
        put(
            "batch_mode",
            match p.batch_mode {
                BatchMode::WithReplacement => "with-replacement",
                BatchMode::FullPass => "full-pass",
            }
            .into(),
        );
        if let Some(r) = p.rounds {
            put("rounds", int(r));
        }
        if let Some(e) = p.epochs {
            put("epochs", Value::Float(e));
        }
        if let Some(o) = p.outer {
            put("outer", int(o));
        }
        put("inner", int(p.inner));
        put("rank", int(p.rank));
        put(
            "memory_init",
            match p.memory_init {
                MemoryInit::MeanField => "mean-field",
                MemoryInit::Zeros => "zeros",
            }
            .into(),
        );
        put(
            "init",
            match p.init {
                MissInit::Spectral => "spectral",
                MissInit::Zero => "zero",
            }
            .into(),
        );
        put("theory_mode", Value::Boolean(p.theory_mode));
        put("cache", Value::Boolean(p.cache));
        root.insert("params".into(), Value::Table(t));

        let c = &self.constants;
        let mut ct = Table::new();
        for (k, v) in [("v_min", c.v_min), ("v_max", c.v_max), ("l_dot_w", c.l_dot_w), ("l", c.l)] {
            if let Some(v) = v {
                ct.insert(k.into(), Value::Float(v));
            }
        }
        ct.insert("probes".into(), int(c.probes));
        ct.insert("radius".into(), Value::Float(c.radius));
        root.insert("constants".into(), Value::Table(ct));

        let mut d = Table::new();
        d.insert("every".into(), int(self.diagnostics.every));
        d.insert("memory_gap_every".into(), int(self.diagnostics.memory_gap_every));
        root.insert("diagnostics".into(), Value::Table(d));

        let mut o = Table::new();
        if let Some(dir) = &self.output.dir {
            o.insert("dir".into(), dir.display().to_string().into());
        }
        o.insert("trace".into(), self.output.trace.clone().into());
        o.insert("manifest".into(), self.output.manifest.clone().into());
        o.insert("imputed".into(), self.output.imputed.clone().into());
        o.insert("trend".into(), self.output.trend.clone().into());
        root.insert("output".into(), Value::Table(o));

        toml::to_string(&root).expect("tables always serialize")
    }
}

fn int(v: usize) -> Value {
    Value::Integer(v as i64)
}

fn float_or_inf(v: f64) -> Value {
    if v.is_infinite() {
        "inf".into()
    } else {
        Value::Float(v)
    }
}
