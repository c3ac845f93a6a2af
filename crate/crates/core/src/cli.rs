//! Command-line driver behind the `hvm` binary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{PriorKind, RunConfig, DEFAULT_TEMPLATE};
use crate::error::{Error, Result};
use crate::estimators::Hierarchical;
use crate::experiments::{self, Comparison};
use crate::fit::{fit, TraceRecord};
use crate::model::GaussianTarget;
use crate::oracle::{run_gradient_battery, score_reparam_report, BatteryConfig, EnumeratedPmf};

const POISSON2D_CONFIG: &str = include_str!("../../../configs/poisson2d.toml");
const SBN_CONFIG: &str = include_str!("../../../configs/sbn.toml");

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "hvm", version, about = "Hierarchical variational models for black-box inference")]
pub struct Cli {
    /// TOML run configuration; each command has a built-in default.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Directory for traces, parameters and reports.
    #[arg(long, global = true, value_name = "DIR", default_value = "hvm-out")]
    pub out: PathBuf,
    /// Worker threads; 0 uses every core. Overrides `run.workers`.
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model with the configured prior and auxiliary model.
    Fit {
        /// Print the annotated default configuration and exit.
        #[arg(long)]
        print_default: bool,
    },
    /// Mean-field versus mixture prior on the two-count Poisson mixture.
    Poisson2d,
    /// Mean-field versus flow prior on a toy deep exponential family.
    DefToy,
    /// Finite-difference checks of every analytic gradient.
    Gradcheck {
        /// Scale one analytic gradient by 1.01 (negative control).
        #[arg(long, hide = true, value_name = "CHECK")]
        inject_fault: Option<String>,
    },
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Err(msg) = init_logging() {
        eprintln!("{msg}");
        return EXIT_CONFIG;
    }
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn init_logging() -> std::result::Result<(), String> {
    let level = std::env::var("HVM_LOG_LEVEL").unwrap_or_else(|_| "info".into());
    let filter = match level.as_str() {
        "error" => log::LevelFilter::Error,
        "info" => log::LevelFilter::Info,
        "debug" => log::LevelFilter::Debug,
        other => return Err(format!("HVM_LOG_LEVEL must be error, info or debug, got {other:?}")),
    };
    // a second call (tests running several commands in one process) is harmless
    let _ = env_logger::Builder::new().filter_level(filter).format_timestamp(None).try_init();
    Ok(())
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence { .. } => EXIT_DIVERGED,
        Error::Io(_) | Error::Json(_) | Error::Domain(_) => EXIT_CHECK_FAILED,
        _ => EXIT_CONFIG,
    }
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli) -> Result<i32> {
    if let Command::Fit { print_default: true } = cli.command {
        print!("{DEFAULT_TEMPLATE}");
        return Ok(EXIT_OK);
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::from_toml(match cli.command {
            Command::Poisson2d => POISSON2D_CONFIG,
            Command::DefToy => SBN_CONFIG,
            _ => DEFAULT_TEMPLATE,
        })?,
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.run.workers = w;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.workers)
        .build()
        .map_err(|e| Error::Config(format!("run.workers: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Fit { .. } => cmd_fit(&cfg, &cli.out),
        Command::Poisson2d => cmd_poisson2d(&cfg, &cli.out),
        Command::DefToy => cmd_def_toy(&cfg, &cli.out),
        Command::Gradcheck { inject_fault } => cmd_gradcheck(cfg.run.seed, inject_fault.clone(), &cli.out),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// One JSON object per line.
pub fn write_trace(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for rec in trace {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Rectangular `z1,z2,pmf` grid of a two-dimensional pmf.
pub fn write_grid(path: &Path, pmf: &EnumeratedPmf) -> Result<()> {
    if pmf.dim() != 2 {
        return Err(Error::InvalidArgument("grids need a two-dimensional pmf".into()));
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(["z1", "z2", "pmf"]).map_err(csv_error)?;
    for (idx, z) in pmf.support().enumerate() {
        w.write_record([format!("{}", z[0]), format!("{}", z[1]), format!("{:e}", pmf.prob(idx))])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("csv: {other:?}")),
    }
}

#[derive(Serialize)]
struct Params<'a> {
    prior: &'a str,
    aux: &'a str,
    theta: &'a [f64],
    phi: &'a [f64],
}

#[derive(Serialize)]
struct FitSummary {
    seed: u64,
    iterations: usize,
    converged: bool,
    final_elbo: f64,
    final_elbo_se: f64,
}

fn cmd_fit(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let model = cfg.model.build()?;
    let prior = cfg.prior.build(model.dim())?;
    let aux = cfg.aux.build(model.as_ref());
    let h = Hierarchical::new(model.as_ref(), &prior, &aux)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.init_seed());
    let theta = experiments::init_theta(&prior, cfg.prior.init_spread, cfg.prior.init_center, &mut init_rng);
    let phi = aux.init_phi(&mut init_rng);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    log::info!("fitting {} prior with {} auxiliary model", prior.name(), aux.name());
    let res = fit(&h, theta, phi, &cfg.fit_config(), &mut rng)?;
    fs::create_dir_all(out)?;
    write_trace(&out.join("trace.jsonl"), &res.trace)?;
    write_json(
        &out.join("params.json"),
        &Params {
            prior: prior.name(),
            aux: aux.name(),
            theta: &res.theta,
            phi: &res.phi,
        },
    )?;
    let last = res.trace.last().expect("at least one iteration");
    let summary = FitSummary {
        seed: cfg.run.seed,
        iterations: res.iterations,
        converged: res.converged,
        final_elbo: last.elbo_mean,
        final_elbo_se: last.elbo_se,
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "fit: {} iterations, converged {}, final ELBO {:.6} ± {:.2e}",
        summary.iterations, summary.converged, summary.final_elbo, summary.final_elbo_se
    );
    Ok(EXIT_OK)
}

fn write_comparison_traces(c: &Comparison, out: &Path) -> Result<()> {
    if let Some(f) = &c.meanfield.fit {
        write_trace(&out.join("trace_meanfield.jsonl"), &f.trace)?;
    }
    if let Some(f) = &c.hvm.fit {
        write_trace(&out.join("trace_hvm.jsonl"), &f.trace)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Poisson2dReport<'a> {
    seed: u64,
    truncation: usize,
    kl_meanfield: f64,
    kl_hvm: f64,
    modes_posterior: usize,
    modes_meanfield: usize,
    modes_hvm: usize,
    details: &'a experiments::Poisson2dOutcome,
}

fn cmd_poisson2d(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let model = cfg.model.build()?;
    if model.dim() != 2 {
        return Err(Error::Config("model: poisson2d needs a two-dimensional target".into()));
    }
    if cfg.prior.kind == PriorKind::MeanField {
        return Err(Error::Config("prior.kind: the comparison needs a hierarchical prior".into()));
    }
    let prior = cfg.prior.build(2)?;
    let aux = cfg.aux.build(model.as_ref());
    let s = cfg.comparison_settings();
    let outcome = experiments::poisson2d(model.as_ref(), &prior, &aux, &s, cfg.run.seed)?;
    let c = &outcome.comparison;
    fs::create_dir_all(out)?;
    for (name, pmf) in [("posterior", &c.posterior), ("meanfield", &c.meanfield.pmf), ("hvm", &c.hvm.pmf)] {
        if let Some(p) = pmf {
            write_grid(&out.join(format!("{name}.csv")), p)?;
        }
    }
    write_comparison_traces(c, out)?;
    write_json(
        &out.join("report.json"),
        &Poisson2dReport {
            seed: cfg.run.seed,
            truncation: s.truncation,
            kl_meanfield: c.meanfield.kl,
            kl_hvm: c.hvm.kl,
            modes_posterior: outcome.modes_posterior,
            modes_meanfield: outcome.modes_meanfield,
            modes_hvm: outcome.modes_hvm,
            details: &outcome,
        },
    )?;
    println!(
        "poisson2d: KL mean-field {:.4} ({} mode), KL hvm {:.4} ({} modes), posterior {} modes",
        c.meanfield.kl, outcome.modes_meanfield, c.hvm.kl, outcome.modes_hvm, outcome.modes_posterior
    );
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct DefToyReport<'a> {
    seed: u64,
    model: &'a str,
    latents: usize,
    truncation: usize,
    kl_meanfield: f64,
    kl_hvm: f64,
    final_elbo_meanfield: f64,
    final_elbo_hvm: f64,
    iterations_meanfield: usize,
    iterations_hvm: usize,
    details: &'a Comparison,
}

fn cmd_def_toy(cfg: &RunConfig, out: &Path) -> Result<i32> {
    use crate::config::ModelConfig;
    let name = match &cfg.model {
        ModelConfig::Sbn(_) => "sbn",
        ModelConfig::PoissonDef(_) => "poisson-def",
        _ => return Err(Error::Config("model.family: def-toy needs \"sbn\" or \"poisson-def\"".into())),
    };
    if cfg.prior.kind == PriorKind::MeanField {
        return Err(Error::Config("prior.kind: the comparison needs a hierarchical prior".into()));
    }
    let model = cfg.model.build()?;
    let prior = cfg.prior.build(model.dim())?;
    let aux = cfg.aux.build(model.as_ref());
    let s = cfg.comparison_settings();
    let c = experiments::compare(model.as_ref(), &prior, &aux, &s, cfg.run.seed)?;
    fs::create_dir_all(out)?;
    write_comparison_traces(&c, out)?;
    write_json(
        &out.join("report.json"),
        &DefToyReport {
            seed: cfg.run.seed,
            model: name,
            latents: model.dim(),
            truncation: s.truncation,
            kl_meanfield: c.meanfield.kl,
            kl_hvm: c.hvm.kl,
            final_elbo_meanfield: c.meanfield.final_elbo,
            final_elbo_hvm: c.hvm.final_elbo,
            iterations_meanfield: c.meanfield.iterations,
            iterations_hvm: c.hvm.iterations,
            details: &c,
        },
    )?;
    println!(
        "def-toy ({name}): KL mean-field {:.5}, KL hvm {:.5}{}",
        c.meanfield.kl,
        c.hvm.kl,
        if c.kept_warm_start { " (warm start kept)" } else { "" }
    );
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct GradcheckReport {
    passed: bool,
    battery: crate::oracle::BatteryReport,
    score_reparam: crate::oracle::ScoreReparamReport,
}

fn cmd_gradcheck(seed: u64, inject_fault: Option<String>, out: &Path) -> Result<i32> {
    let battery = run_gradient_battery(&BatteryConfig {
        seed,
        inject_fault,
        ..BatteryConfig::default()
    })?;
    let target = GaussianTarget::new(1.0, 2.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let score_reparam = score_reparam_report(&target, &[0.3, 0.5], &mut rng, 100_000)?;
    for c in &battery.checks {
        println!(
            "{} {:<32} configs {:>3}  max abs {:.2e}  max rel beyond abs tol {:.2e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.configurations,
            c.max_abs_error,
            c.max_rel_error
        );
    }
    println!(
        "{} {:<32} agreement z {:?}",
        if score_reparam.passed { "PASS" } else { "FAIL" },
        "score-vs-reparam",
        score_reparam.agreement_z.iter().map(|z| format!("{z:.2}")).collect::<Vec<_>>()
    );
    let report = GradcheckReport {
        passed: battery.passed && score_reparam.passed,
        battery,
        score_reparam,
    };
    fs::create_dir_all(out)?;
    write_json(&out.join("report.json"), &report)?;
    if report.passed {
        Ok(EXIT_OK)
    } else {
        eprintln!("failing checks: {}", report.battery.failures().join(", "));
        Ok(EXIT_CHECK_FAILED)
    }
}
