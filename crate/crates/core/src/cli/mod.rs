//! The `patience` command line.
//!
//! Exit codes: 0 certified stable (or success), 2 inconclusive or no decay
//! detected, 3 input error, 4 numerical failure.

pub mod spec;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::delay::{embed_map, embed_matrix, DelayError, DelayMatrix, DelayPolicy, DelayedSwitchedSystem};
use crate::linalg::{assemble_companion, isoradial_reduce_with_radius, LinalgError, SpectralOptions};
use crate::sim::{
    estimate_decay, mc_p_radius_estimate, simulate, write_decay_csv, DecayOptions, Initial, ProductSource,
    SimConfig, SimError,
};
use crate::stability::{
    check_delayed_first_mean_stable, check_first_mean_stable, check_patient_stability, model_p_radius,
    verify_reduction_equivalence_with, AnalysisOptions, StabilityError, StabilityReport,
};
use crate::systems::{find_shared_fixed_point, SystemModel};

pub use spec::{parse_blocks, parse_spec, SpecError, SystemSpec};

pub const EXIT_STABLE: i32 = 0;
pub const EXIT_INCONCLUSIVE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<SpecError> for CliError {
    fn from(e: SpecError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<DelayError> for CliError {
    fn from(e: DelayError) -> Self {
        CliError::Input(e.to_string())
    }
}

fn linalg_err(e: LinalgError) -> CliError {
    match e {
        LinalgError::NotConverged { .. }
        | LinalgError::Singular { .. }
        | LinalgError::ComplementRadius { .. }
        | LinalgError::DimensionCap { .. } => {
            CliError::Numerical(e.to_string())
        }
        other => CliError::Input(other.to_string()),
    }
}

impl From<StabilityError> for CliError {
    fn from(e: StabilityError) -> Self {
        match e {
            StabilityError::Linalg(l) => linalg_err(l),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::AllDiverged => CliError::Numerical(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    None,
    Fixed,
    #[value(name = "iid_uniform_entries", alias = "iid")]
    IidUniformEntries,
    Explicit,
}

#[derive(Debug, Parser)]
#[command(name = "patience", version, about = "Stability certificates for stochastic switched systems with random delays")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
    /// Output format.
    #[arg(long, global = true, value_enum, default_value = "text")]
    pub format: Format,
    /// Write the main output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Relative tolerance for spectral radii.
    #[arg(long, global = true, default_value_t = 1e-12)]
    pub tol: f64,
    /// Worker threads for simulation.
    #[arg(long, global = true, env = "PATIENCE_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Certify first-mean or patient stability of a system spec.
    Analyze(AnalyzeArgs),
    /// Simulate trajectories and test for empirical decay.
    Simulate(SimulateArgs),
    /// Write the delay-space embedding of a spec.
    Embed(EmbedArgs),
    /// Compare the companion radius of lag blocks with the radius of their sum.
    Reduce(ReduceArgs),
    /// Monte Carlo estimate of the p-radius.
    Estimate(EstimateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DelayArgs {
    /// Delay bound; overrides the spec.
    #[arg(long = "L")]
    pub bound: Option<usize>,
    /// Delay policy; overrides the spec.
    #[arg(long, value_enum)]
    pub policy: Option<PolicyKind>,
    /// Fixed delay matrix as JSON, e.g. '[[0,1],[0,0]]'; implies --policy fixed.
    #[arg(long)]
    pub delays: Option<String>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub spec: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub p: u32,
    #[command(flatten)]
    pub delay: DelayArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub spec: PathBuf,
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    #[arg(long, default_value_t = 1000)]
    pub trajectories: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Moment used for the decay test.
    #[arg(long, default_value_t = 1)]
    pub p: u32,
    /// Initial state as JSON; default is the unit circle around the fixed point.
    #[arg(long)]
    pub x0: Option<String>,
    /// Fit window as START:END (inclusive); default is the final third.
    #[arg(long)]
    pub window: Option<String>,
    /// Also write every trajectory as CSV.
    #[arg(long)]
    pub states_out: Option<PathBuf>,
    #[command(flatten)]
    pub delay: DelayArgs,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    pub spec: PathBuf,
    /// Include the Lipschitz matrix of each embedded map.
    #[arg(long)]
    pub lipschitz: bool,
    #[command(flatten)]
    pub delay: DelayArgs,
}

#[derive(Debug, Args)]
pub struct ReduceArgs {
    /// JSON file of the form {"blocks": [A_0, ..., A_L]}.
    pub blocks: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    pub spec: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub p: u32,
    /// Product length.
    #[arg(long, default_value_t = 200)]
    pub k: usize,
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Rendered output and exit code of one command.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub output: String,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn load_spec(path: &Path) -> Result<SystemSpec, CliError> {
    parse_spec(&read(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Applies command-line delay overrides to the spec's delay section.
pub fn resolve_delay(spec: &SystemSpec, args: &DelayArgs) -> Result<Option<(usize, DelayPolicy)>, CliError> {
    if args.bound.is_none() && args.policy.is_none() && args.delays.is_none() {
        return Ok(spec.delay.clone());
    }
    let fixed = match &args.delays {
        Some(text) => Some(
            serde_json::from_str::<Vec<Vec<usize>>>(text)
                .map_err(|e| CliError::Input(format!("--delays: {e}")))?,
        ),
        None => None,
    };
    let bound = args
        .bound
        .or_else(|| fixed.as_ref().map(|d| d.iter().flatten().copied().max().unwrap_or(0)))
        .or_else(|| spec.delay.as_ref().map(|d| d.0))
        .ok_or_else(|| CliError::Input("missing --L for the delay policy".into()))?;
    let policy = match (args.policy, fixed) {
        (Some(PolicyKind::Fixed) | None, Some(d)) => DelayPolicy::Fixed(DelayMatrix::new(&d, bound)?),
        (Some(PolicyKind::Fixed), None) => return Err(CliError::Input("--policy fixed needs --delays".into())),
        (Some(_), Some(_)) => return Err(CliError::Input("--delays only combines with --policy fixed".into())),
        (Some(PolicyKind::None), None) => DelayPolicy::None,
        (Some(PolicyKind::IidUniformEntries), None) => DelayPolicy::IidUniformEntries,
        (Some(PolicyKind::Explicit), None) => match &spec.delay {
            Some((_, p @ DelayPolicy::Explicit(_))) => p.clone(),
            _ => return Err(CliError::Input("explicit policies are read from the spec file".into())),
        },
        (None, None) => match &spec.delay {
            Some((_, p)) => p.clone(),
            None => return Err(CliError::Input("missing --policy for delay bound --L".into())),
        },
    };
    DelayedSwitchedSystem::new(spec.model.clone(), policy.clone(), bound)?;
    Ok(Some((bound, policy)))
}

fn options(cfg: &RunConfig) -> Result<AnalysisOptions, CliError> {
    if !(cfg.tol > 0.0 && cfg.tol.is_finite()) {
        return Err(CliError::Input(format!("--tol must be positive, got {}", cfg.tol)));
    }
    Ok(AnalysisOptions {
        spectral: SpectralOptions {
            tol: cfg.tol,
            ..Default::default()
        },
        ..Default::default()
    })
}

pub fn run(cfg: &RunConfig) -> Result<Outcome, CliError> {
    if let Some(n) = cfg.threads {
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let outcome = match &cfg.command {
        Command::Analyze(a) => analyze(cfg, a)?,
        Command::Simulate(a) => simulate_cmd(cfg, a)?,
        Command::Embed(a) => embed(a)?,
        Command::Reduce(a) => reduce(cfg, a)?,
        Command::Estimate(a) => estimate(cfg, a)?,
    };
    match &cfg.out {
        Some(path) => {
            fs::write(path, &outcome.output).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            Ok(Outcome {
                code: outcome.code,
                output: format!("wrote {}\n", path.display()),
            })
        }
        None => Ok(outcome),
    }
}

fn analyze(cfg: &RunConfig, a: &AnalyzeArgs) -> Result<Outcome, CliError> {
    let spec = load_spec(&a.spec)?;
    let delay = resolve_delay(&spec, &a.delay)?;
    let opts = options(cfg)?;
    let report = if a.p == 1 {
        check_patient_stability(&spec.model, &opts)?
    } else {
        check_first_mean_stable(&spec.model, a.p, &opts)?
    };
    let delayed = match delay {
        Some((bound, policy)) => {
            let ds = DelayedSwitchedSystem::new(spec.model.clone(), policy, bound)?;
            Some(check_delayed_first_mean_stable(&ds, &opts)?)
        }
        None => None,
    };
    let stable = report.verdict.is_stable() || delayed.as_ref().is_some_and(|r| r.verdict.is_stable());
    let output = match cfg.format {
        Format::Json => {
            let v = json!({"report": report, "delayed_report": delayed});
            serde_json::to_string_pretty(&v).expect("serializes") + "\n"
        }
        Format::Text => render_reports(&report, delayed.as_ref()),
        Format::Csv => return Err(CliError::Input("analyze supports --format text or json".into())),
    };
    Ok(Outcome {
        code: if stable { EXIT_STABLE } else { EXIT_INCONCLUSIVE },
        output,
    })
}

fn render_reports(report: &StabilityReport, delayed: Option<&StabilityReport>) -> String {
    let mut s = format!("{report}\n");
    if let Some(d) = delayed {
        let _ = write!(s, "\ndelayed version (full companion matrix):\n{d}\n");
    }
    s
}

fn parse_window(text: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Input(format!("--window expects START:END, got {text:?}"));
    let (a, b) = text.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn fixed_point(model: &SystemModel) -> Option<Vec<f64>> {
    match model {
        SystemModel::Switched(s) => find_shared_fixed_point(s, &Default::default()).ok(),
        SystemModel::Ensemble(e) => Some(e.shared_fixed_point()),
    }
}

fn simulate_cmd(cfg: &RunConfig, a: &SimulateArgs) -> Result<Outcome, CliError> {
    let spec = load_spec(&a.spec)?;
    let (bound, policy) = resolve_delay(&spec, &a.delay)?.unwrap_or((0, DelayPolicy::None));
    let ds = DelayedSwitchedSystem::new(spec.model.clone(), policy, bound)?;
    let n = ds.dim();
    let fp = fixed_point(&spec.model);
    let center = fp.clone().unwrap_or_else(|| vec![0.0; n]);
    let init = match &a.x0 {
        Some(text) => Initial::Point(serde_json::from_str(text).map_err(|e| CliError::Input(format!("--x0: {e}")))?),
        None => Initial::UnitSphere { center: center.clone() },
    };
    let window = a.window.as_deref().map(parse_window).transpose()?;
    let batch = simulate(
        &ds,
        &init,
        &SimConfig {
            horizon: a.steps,
            trajectories: a.trajectories,
            seed: a.seed,
        },
    )?;
    if let Some(path) = &a.states_out {
        crate::sim::export_csv(&batch, path)?;
    }
    let est = estimate_decay(
        &batch,
        &center,
        a.p,
        &DecayOptions {
            window,
            ..Default::default()
        },
    )?;
    let output = match cfg.format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_decay_csv(&est, batch.seed, &batch.system_hash, &mut buf).map_err(|e| CliError::Input(e.to_string()))?;
            String::from_utf8(buf).expect("utf8")
        }
        Format::Json => {
            let v = json!({
                "seed": batch.seed,
                "system_sha256": batch.system_hash,
                "steps": batch.horizon,
                "trajectories": batch.len(),
                "delay_bound": bound,
                "policy": ds.policy().kind(),
                "fixed_point": fp,
                "decay": est,
            });
            serde_json::to_string_pretty(&v).expect("serializes") + "\n"
        }
        Format::Text => {
            let mut s = String::new();
            let _ = writeln!(s, "decay_detected: {}", est.decay_detected);
            let _ = writeln!(s, "p: {}", est.p);
            let _ = writeln!(s, "beta: {:.6}", est.beta);
            let _ = writeln!(s, "log_c: {:.6}", est.log_c);
            let _ = writeln!(s, "window: {}..={}", est.window.0, est.window.1);
            let _ = writeln!(s, "edge means: {:.6e} -> {:.6e}", est.initial_edge_mean, est.final_edge_mean);
            let _ = writeln!(s, "diverged: {}/{}", est.diverged, batch.len());
            match &fp {
                Some(x) => {
                    let _ = writeln!(s, "fixed point: {x:?}");
                }
                None => {
                    let _ = writeln!(s, "fixed point: none found; deviations measured from the origin");
                }
            }
            let _ = writeln!(s, "delay: L = {bound}, policy {}", ds.policy().kind());
            let _ = writeln!(s, "seed: {}", batch.seed);
            let _ = writeln!(s, "system_sha256: {}", batch.system_hash);
            s
        }
    };
    Ok(Outcome {
        code: if est.decay_detected { EXIT_STABLE } else { EXIT_INCONCLUSIVE },
        output,
    })
}

fn embed(a: &EmbedArgs) -> Result<Outcome, CliError> {
    let spec = load_spec(&a.spec)?;
    let (bound, policy) = resolve_delay(&spec, &a.delay)?
        .ok_or_else(|| CliError::Input("missing delay: give --L with --policy or --delays, or a \"delay\" section".into()))?;
    let sys = match &spec.model {
        SystemModel::Switched(s) => s,
        SystemModel::Ensemble(_) => return Err(CliError::Input("embed needs a map family, not an interval ensemble".into())),
    };
    let d = match &policy {
        DelayPolicy::None => DelayMatrix::zeros(sys.dim(), bound),
        DelayPolicy::Fixed(d) => d.clone(),
        other => {
            return Err(CliError::Input(format!(
                "embed needs one delay matrix (policy none or fixed), got {}",
                other.kind()
            )))
        }
    };
    let maps = sys
        .maps()
        .iter()
        .map(|f| embed_map(f, &d, bound))
        .collect::<Result<Vec<_>, DelayError>>()?;
    let lipschitz = if a.lipschitz {
        Some(
            sys.maps()
                .iter()
                .map(|f| embed_matrix(&f.lipschitz_matrix(), &d, bound))
                .collect::<Result<Vec<_>, DelayError>>()?,
        )
    } else {
        None
    };
    let embedded = crate::systems::SwitchedSystem::new(maps, sys.weights().to_vec())
        .map_err(|e| CliError::Input(e.to_string()))?;
    let out = SystemSpec {
        model: embedded.into(),
        delay: None,
        lipschitz,
    };
    Ok(Outcome {
        code: EXIT_STABLE,
        output: out.to_json() + "\n",
    })
}

fn reduce(cfg: &RunConfig, a: &ReduceArgs) -> Result<Outcome, CliError> {
    let text = read(&a.blocks)?;
    let blocks = parse_blocks(&text).map_err(|e| CliError::Input(format!("{}: {e}", a.blocks.display())))?;
    let opts = options(cfg)?;
    let check = verify_reduction_equivalence_with(&blocks, &opts.spectral)?;
    let n = blocks[0].rows();
    // Isoradial reduction of the companion onto the lag-0 block; it
    // equals sum_l rho^{-l} A_l whenever it exists.
    let reduced = if blocks.len() > 1 && check.rho_companion > 0.0 {
        let companion = assemble_companion(&blocks).map_err(linalg_err)?;
        let keep: Vec<usize> = (0..n).collect();
        isoradial_reduce_with_radius(&companion, &keep, check.rho_companion).ok()
    } else {
        None
    };
    let output = match cfg.format {
        Format::Json => {
            let v = json!({
                "rho_companion": check.rho_companion,
                "rho_sum": check.rho_sum,
                "equivalent_side_of_one": check.equivalent_side_of_one,
                "at_boundary": check.at_boundary,
                "summary": check.summary(),
                "reduced": reduced,
            });
            serde_json::to_string_pretty(&v).expect("serializes") + "\n"
        }
        Format::Text => {
            let mut s = format!(
                "rho_companion: {:.10}\nrho_sum: {:.10}\n{}\n",
                check.rho_companion,
                check.rho_sum,
                check.summary()
            );
            if check.at_boundary {
                s.push_str("at tolerance boundary: inconclusive\n");
            }
            if let Some(r) = &reduced {
                let _ = write!(s, "reduced to lag-0 block:\n{r}");
            }
            s
        }
        Format::Csv => return Err(CliError::Input("reduce supports --format text or json".into())),
    };
    let stable = check.rho_companion < 1.0 && check.rho_sum < 1.0 && !check.at_boundary;
    Ok(Outcome {
        code: if stable { EXIT_STABLE } else { EXIT_INCONCLUSIVE },
        output,
    })
}

fn estimate(cfg: &RunConfig, a: &EstimateArgs) -> Result<Outcome, CliError> {
    let spec = load_spec(&a.spec)?;
    let opts = options(cfg)?;
    let (estimate, exact) = match &spec.model {
        SystemModel::Switched(s) => {
            let ls = s.lipschitz_set();
            let est = mc_p_radius_estimate(ProductSource::Set(&ls), a.p, a.k, a.samples, a.seed)?;
            (est, model_p_radius(&spec.model, a.p, &opts.spectral).ok().map(|r| r.1))
        }
        SystemModel::Ensemble(e) => {
            let est = mc_p_radius_estimate(ProductSource::Ensemble(e), a.p, a.k, a.samples, a.seed)?;
            let exact = (a.p == 1).then(|| model_p_radius(&spec.model, 1, &opts.spectral).map(|r| r.1)).transpose()?;
            (est, exact)
        }
    };
    let output = match cfg.format {
        Format::Json => {
            let v = json!({
                "p": a.p, "k": a.k, "samples": a.samples, "seed": a.seed,
                "estimate": estimate, "exact": exact,
            });
            serde_json::to_string_pretty(&v).expect("serializes") + "\n"
        }
        Format::Text => {
            let mut s = format!("estimate: {estimate:.6} (p = {}, k = {}, samples = {})\n", a.p, a.k, a.samples);
            if let Some(x) = exact {
                let _ = writeln!(s, "exact: {x:.6}");
                let _ = writeln!(s, "difference: {:.6}", (estimate - x).abs());
            }
            s
        }
        Format::Csv => return Err(CliError::Input("estimate supports --format text or json".into())),
    };
    Ok(Outcome {
        code: EXIT_STABLE,
        output,
    })
}

/// Parses `args` (without the program name) and runs them.
pub fn run_args<I, T>(args: I) -> Result<Outcome, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cfg = RunConfig::try_parse_from(std::iter::once("patience".into()).chain(args.into_iter().map(Into::into)))
        .map_err(|e| CliError::Input(e.to_string()))?;
    run(&cfg)
}
