//! Command-line front end.
//!
//! Settings resolve as command-line flags, then an optional `--config` file
//! of `key=value` lines using the long flag names, then built-in defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use thiserror::Error;

use crate::bd_models::{parse_model, BirthDeathModel, BoundsReport, ModelError};
use crate::ctmc::{
    parse_distribution, parse_generator, tv_distance, CtmcError, Generator, ProbDist, StateSet,
};
use crate::numeric::format_g;
use crate::return_map::{
    default_max_iter, default_oracle_step, general_certificate, iterate_return_map,
    qsd_spectral_oracle, stein_solve, write_qsd, ReturnMap, ReturnMapError,
};
use crate::simulate::{
    csv_row, estimate_hit_prob, eta_bound, EtaInputs, estimate_mean_hitting_time, estimate_survival,
    simulate_return_occupation, SimConfig, SimError, CSV_HEADER,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_ASSERT: i32 = 2;

/// Horizon guard for hitting-time paths in `simulate`.
const HITTING_GUARD: f64 = 1e12;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Model { path: String, source: ModelError },
    #[error("{path}: {source}")]
    Generator { path: String, source: CtmcError },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Ctmc(#[from] CtmcError),
    #[error(transparent)]
    ReturnMap(#[from] ReturnMapError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    BdModel(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Bounds,
    Qsd,
    ReturnDist,
    Iterate,
    Stein,
    Simulate,
    Compare,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MuSpec {
    Delta(usize),
    Uniform,
    File(PathBuf),
}

impl std::str::FromStr for MuSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "uniform" {
            return Ok(Self::Uniform);
        }
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(Self::File(PathBuf::from(path)));
        }
        if let Some(rest) = s.strip_prefix("delta") {
            let digits = rest.trim_start_matches([':', '(']).trim_end_matches(')');
            return digits
                .parse()
                .map(Self::Delta)
                .map_err(|_| format!("invalid point mass `{s}`"));
        }
        Err(format!("expected `delta<k>`, `uniform` or `file:<path>`, got `{s}`"))
    }
}

#[derive(Debug, Parser)]
#[command(name = "qsd-lab", version, about = "Quasi-stationary distributions with accuracy certificates")]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Birth-death model file (`kind=...`) or generator file (`n=...`).
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Return distribution: `delta<k>`, `uniform` or `file:<path>`.
    #[arg(long)]
    mu: Option<MuSpec>,
    /// Time for survival estimates.
    #[arg(long)]
    t: Option<f64>,
    /// Constant in the time-t error bound.
    #[arg(long = "K")]
    k: Option<f64>,
    /// Anchor state; defaults to the certificate state.
    #[arg(long)]
    s: Option<usize>,
    /// Start state for simulations, indicator state for `stein`.
    #[arg(long)]
    state: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Path length for occupation estimates.
    #[arg(long = "t-max")]
    t_max: Option<f64>,
    #[arg(long)]
    stream: Option<u64>,
    /// Write the QSD to this file (`qsd` only).
    #[arg(long)]
    export: Option<PathBuf>,
    /// Exit with status 2 when the certificate is not valid.
    #[arg(long)]
    assert: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model_path: PathBuf,
    pub command: Command,
    pub tol: f64,
    /// `None` means `10 N`.
    pub max_iter: Option<usize>,
    pub seed: u64,
    pub output_path: Option<PathBuf>,
    pub mu_spec: MuSpec,
    pub t: f64,
    pub k: f64,
    pub s: Option<usize>,
    pub state: Option<usize>,
    pub replicates: usize,
    pub t_max: f64,
    pub stream: u64,
    pub export: Option<PathBuf>,
    pub assert: bool,
}

impl RunConfig {
    pub fn new(command: Command, model_path: impl Into<PathBuf>) -> Self {
        Self {
            model_path: model_path.into(),
            command,
            tol: 1e-10,
            max_iter: None,
            seed: 42,
            output_path: None,
            mu_spec: MuSpec::Delta(1),
            t: 1.0,
            k: 1.0,
            s: None,
            state: None,
            replicates: 10_000,
            t_max: 100.0,
            stream: 0,
            export: None,
            assert: false,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.tol > 0.0) {
            return Err(CliError::Config(format!("tol = {} must be positive", self.tol)));
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = read(path)?;
    let mut map = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!("{}:{}: expected `key=value`", path.display(), k + 1))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn from_file<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
) -> Result<Option<T>, CliError> {
    map.get(key)
        .map(|v| {
            v.parse()
                .map_err(|_| CliError::Config(format!("config: invalid value `{v}` for `{key}`")))
        })
        .transpose()
}

impl TryFrom<Args> for RunConfig {
    type Error = CliError;

    fn try_from(a: Args) -> Result<Self, CliError> {
        let file = match &a.config {
            Some(p) => parse_config_file(p)?,
            None => BTreeMap::new(),
        };
        let mut cfg = RunConfig::new(a.command, a.model);
        macro_rules! resolve {
            ($field:ident, $flag:expr, $key:literal) => {
                if let Some(v) = $flag {
                    cfg.$field = v;
                } else if let Some(v) = from_file(&file, $key)? {
                    cfg.$field = v;
                }
            };
        }
        resolve!(tol, a.tol, "tol");
        resolve!(seed, a.seed, "seed");
        resolve!(mu_spec, a.mu, "mu");
        resolve!(t, a.t, "t");
        resolve!(k, a.k, "K");
        resolve!(replicates, a.replicates, "replicates");
        resolve!(t_max, a.t_max, "t-max");
        resolve!(stream, a.stream, "stream");
        cfg.max_iter = a.max_iter.or(from_file(&file, "max-iter")?);
        cfg.s = a.s.or(from_file(&file, "s")?);
        cfg.state = a.state.or(from_file(&file, "state")?);
        cfg.output_path = a.output.or(from_file(&file, "output")?);
        cfg.export = a.export.or(from_file(&file, "export")?);
        cfg.assert = a.assert || from_file(&file, "assert")?.unwrap_or(false);
        Ok(cfg)
    }
}

/// A loaded model file.
#[derive(Debug, Clone)]
pub enum LoadedModel {
    BirthDeath(BirthDeathModel),
    General(Generator),
}

impl LoadedModel {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read(path)?;
        let first = text
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty() && !l.starts_with('#'))
            .unwrap_or("");
        let name = path.display().to_string();
        if first.starts_with("n=") {
            parse_generator(&text)
                .map(Self::General)
                .map_err(|source| CliError::Generator { path: name, source })
        } else {
            parse_model(&text)
                .map(|spec| Self::BirthDeath(spec.model))
                .map_err(|source| CliError::Model { path: name, source })
        }
    }

    pub fn generator(&self) -> Generator {
        match self {
            Self::BirthDeath(m) => m.to_generator(),
            Self::General(g) => g.clone(),
        }
    }

    /// Certificate anchored at `s` (or the model's own choice).
    pub fn certificate(&self, s: Option<usize>) -> Result<BoundsReport, CliError> {
        match (self, s) {
            (Self::BirthDeath(m), None) => Ok(m.certificate()),
            (Self::BirthDeath(m), Some(s)) => Ok(m.certificate_at(s)?),
            (Self::General(g), s) => {
                let s = match s {
                    Some(s) => s,
                    None => ReturnMap::new(g)?.apply(&ProbDist::uniform(g.n_states()))?.mode(),
                };
                Ok(general_certificate(g, s)?)
            }
        }
    }
}

fn resolve_mu(spec: &MuSpec, n: usize) -> Result<ProbDist, CliError> {
    Ok(match spec {
        MuSpec::Delta(k) => ProbDist::delta(n, *k)?,
        MuSpec::Uniform => ProbDist::uniform(n),
        MuSpec::File(p) => parse_distribution(&read(p)?, n).map_err(|source| {
            CliError::Generator {
                path: p.display().to_string(),
                source,
            }
        })?,
    })
}

fn g(x: f64) -> String {
    format_g(x, 12)
}

fn mu_label(spec: &MuSpec) -> String {
    match spec {
        MuSpec::Delta(k) => format!("delta{k}"),
        MuSpec::Uniform => "uniform".into(),
        MuSpec::File(p) => format!("file:{}", p.display()),
    }
}

fn write_report(out: &mut String, r: &BoundsReport) {
    let _ = writeln!(out, "s={}", r.s);
    if let Some(flag) = r.s_flag {
        let _ = writeln!(out, "s_flag={flag:?}");
    }
    for (name, v) in [
        ("p", r.p),
        ("T1", r.t1),
        ("T2", r.t2),
        ("T", r.t),
        ("U", r.u),
        ("q_s", r.q_s),
        ("B", r.b),
        ("contraction", r.contraction),
    ] {
        let _ = writeln!(out, "{name}={}", g(v));
    }
    let _ = writeln!(out, "certificate_valid={}", r.certificate_valid);
    if let Some(reason) = &r.reason {
        let _ = writeln!(out, "reason={reason}");
    }
}

/// Output of a run: the text to emit and the exit status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub text: String,
    pub code: i32,
}

pub fn execute(cfg: &RunConfig) -> Result<Outcome, CliError> {
    cfg.validate()?;
    let model = LoadedModel::load(&cfg.model_path)?;
    let gen = model.generator();
    let n = gen.n_states();
    let mut out = String::new();
    let mut code = EXIT_OK;
    let max_iter = cfg.max_iter.unwrap_or_else(|| default_max_iter(&gen));

    match cfg.command {
        Command::Bounds => {
            let r = model.certificate(cfg.s)?;
            write_report(&mut out, &r);
            if cfg.assert && !r.certificate_valid {
                code = EXIT_ASSERT;
            }
        }
        Command::Qsd => {
            let mu = resolve_mu(&cfg.mu_spec, n)?;
            let (it, trace) = iterate_return_map(&gen, &mu, cfg.tol, max_iter)?;
            let or = qsd_spectral_oracle(&gen, default_oracle_step(&gen), cfg.tol)?;
            let gap = tv_distance(&it.m, &or.m)?;
            let _ = writeln!(out, "lambda_m_iteration={}", g(it.lambda_m));
            let _ = writeln!(out, "lambda_m_oracle={}", g(or.lambda_m));
            let _ = writeln!(out, "lambda_gap={}", g((it.lambda_m - or.lambda_m).abs()));
            let _ = writeln!(out, "tv_gap={}", g(gap));
            let _ = writeln!(out, "iterations={}", trace.residuals.len());
            let _ = writeln!(out, "balance_residual={}", g(it.balance_residual));
            let _ = writeln!(out, "mode={}", it.m.mode());
            if let Some(path) = &cfg.export {
                std::fs::write(path, write_qsd(&it)).map_err(|source| CliError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
            }
        }
        Command::ReturnDist => {
            let mu = resolve_mu(&cfg.mu_spec, n)?;
            let pi = ReturnMap::new(&gen)?.apply(&mu)?;
            let _ = writeln!(out, "# mu={}", mu_label(&cfg.mu_spec));
            for j in 1..=n {
                let _ = writeln!(out, "{j} {}", g(pi.prob(j)));
            }
        }
        Command::Iterate => {
            let mu = resolve_mu(&cfg.mu_spec, n)?;
            let (res, trace) = match iterate_return_map(&gen, &mu, cfg.tol, max_iter) {
                Ok((res, trace)) => (Some(res), trace),
                Err(ReturnMapError::NotConverged {
                    trace: Some(trace), ..
                }) => (None, *trace),
                Err(e) => return Err(e.into()),
            };
            let _ = writeln!(out, "# iteration residual");
            for (k, r) in trace.residuals.iter().enumerate() {
                let _ = writeln!(out, "{} {}", k + 1, g(*r));
            }
            let _ = writeln!(out, "converged={}", trace.converged);
            let _ = writeln!(out, "contraction_observed={}", g(trace.contraction_observed));
            match res {
                Some(res) => {
                    let _ = writeln!(out, "lambda_m={}", g(res.lambda_m));
                }
                None => code = EXIT_ERROR,
            }
        }
        Command::Stein => {
            let r = model.certificate(cfg.s)?;
            let mu = resolve_mu(&cfg.mu_spec, n)?;
            let state = cfg.state.unwrap_or(r.s);
            gen.check_state(state)?;
            let mut f = vec![0.0; n];
            f[state - 1] = 1.0;
            let sol = stein_solve(&gen, &mu, &f, r.s)?;
            let bound = 2.0 * r.t / r.p;
            let osc = sol.oscillation();
            let _ = writeln!(out, "gauge={}", r.s);
            let _ = writeln!(out, "indicator={state}");
            let _ = writeln!(out, "pi_f={}", g(sol.pi_f));
            let _ = writeln!(out, "max_abs_h_minus_h_s={}", g(osc));
            let _ = writeln!(out, "lipschitz_bound={}", g(bound));
            let _ = writeln!(out, "lipschitz_holds={}", osc <= bound);
            let _ = writeln!(out, "residual={}", g(sol.residual));
            let _ = writeln!(out, "dynkin={}", g(sol.dynkin));
            let _ = writeln!(out, "certificate_valid={}", r.certificate_valid);
            if cfg.assert && !r.certificate_valid {
                code = EXIT_ASSERT;
            }
        }
        Command::Simulate => {
            let r = model.certificate(cfg.s)?;
            let start = cfg.state.unwrap_or(1);
            gen.check_state(start)?;
            let mu = resolve_mu(&cfg.mu_spec, n)?;
            let hitting = SimConfig {
                seed: cfg.seed,
                replicates: cfg.replicates,
                t_max: HITTING_GUARD,
                stream_id: cfg.stream,
                ..SimConfig::default()
            };
            let occupation = SimConfig {
                t_max: cfg.t_max,
                ..hitting
            };
            let target = format!("{}", r.s);
            let _ = writeln!(out, "{CSV_HEADER}");
            let hp = estimate_hit_prob(&gen, start, r.s, &hitting)?;
            let _ = writeln!(out, "{}", csv_row("hit_prob", &start.to_string(), &target, &hp, cfg.seed));
            let a = StateSet::new(n, &[r.s, 0])?;
            let mt = estimate_mean_hitting_time(&gen, start, &a, &hitting)?;
            let _ = writeln!(
                out,
                "{}",
                csv_row("mean_hitting_time", &start.to_string(), &format!("{{{};0}}", r.s), &mt, cfg.seed)
            );
            let sv = estimate_survival(&gen, &ProbDist::delta(n, start)?, cfg.t, &hitting)?;
            let _ = writeln!(
                out,
                "{}",
                csv_row("survival", &start.to_string(), &format!("t={}", g(cfg.t)), &sv, cfg.seed)
            );
            let pi = ReturnMap::new(&gen)?.apply(&mu)?;
            let occ = simulate_return_occupation(&gen, &mu, &occupation)?;
            let tv = occ.tv_to(&pi)?;
            let _ = writeln!(
                out,
                "{}",
                csv_row("return_occupation_tv", &mu_label(&cfg.mu_spec), "pi_mu", &tv, cfg.seed)
            );
            // context only: K is not known in general
            if r.certificate_valid {
                let eta = eta_bound(&EtaInputs::from_report(&r, cfg.k, cfg.t));
                let _ = writeln!(
                    out,
                    "eta_bound,{},t={},{},0,0,{}",
                    r.s,
                    g(cfg.t),
                    g(eta),
                    cfg.seed
                );
            }
        }
        Command::Compare => {
            let r = model.certificate(cfg.s)?;
            let mu = resolve_mu(&cfg.mu_spec, n)?;
            let pi = ReturnMap::new(&gen)?.apply(&mu)?;
            let (qsd, _) = iterate_return_map(&gen, &pi, cfg.tol, max_iter)?;
            let tv = tv_distance(&qsd.m, &pi)?;
            let _ = writeln!(out, "mu={}", mu_label(&cfg.mu_spec));
            let _ = writeln!(out, "tv_qsd_vs_pi_mu={}", g(tv));
            let _ = writeln!(out, "contraction={}", g(r.contraction));
            let _ = writeln!(out, "bound_holds={}", tv <= r.contraction);
            let _ = writeln!(out, "lambda_m={}", g(qsd.lambda_m));
            let _ = writeln!(out, "U={}", g(r.u));
            let _ = writeln!(out, "certificate_valid={}", r.certificate_valid);
            if cfg.assert && !r.certificate_valid {
                code = EXIT_ASSERT;
            }
        }
    }
    Ok(Outcome { text: out, code })
}

/// Runs `cfg`, writing to the configured output. Returns the exit status.
pub fn run(cfg: &RunConfig) -> i32 {
    let outcome = match execute(cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    };
    let written = match &cfg.output_path {
        Some(path) => std::fs::write(path, &outcome.text),
        None => std::io::stdout().lock().write_all(outcome.text.as_bytes()),
    };
    if let Err(e) = written {
        eprintln!("error: writing output: {e}");
        return EXIT_ERROR;
    }
    outcome.code
}

fn init_threads() {
    if let Some(n) = std::env::var("QSD_LAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let cfg = match RunConfig::try_from(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    };
    init_threads();
    run(&cfg)
}
