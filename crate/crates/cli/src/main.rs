//! `wf` — command-line front end for the exact Wright-Fisher filtering
//! library: simulation, filtering, smoothing, likelihood, and maximum
//! likelihood estimation over CSV datasets, with optional grid/particle
//! oracle columns for cross-checking.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use wf_filtering::error::Error as CoreError;
use wf_filtering::estimation::{estimate_mle, loglik_at, EstimateConfig};
use wf_filtering::filter::{run_filter, DEFAULT_MAX_DEPTH, DEFAULT_PRUNE_EPSILON};
use wf_filtering::observation::{Observation, ObservationModel};
use wf_filtering::oracles::grid::GridFilter;
use wf_filtering::oracles::particle::particle_filter;
use wf_filtering::oracles::path::{simulate_dataset, SimulationSpec};
use wf_filtering::smoother::{backward_sweep, smooth_marginal};
use wf_filtering::{FilterConfig, Mixture, Params, Transition};

const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

/// Environment variable overriding the default lattice depth cap.
const MAX_DEPTH_ENV: &str = "WF_MAX_DEPTH";

// ---------------------------------------------------------------------------
// Error plumbing: data errors exit 3, numerical failures exit 4.

#[derive(Debug)]
enum CliError {
    Data(String),
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Data(_) => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidParams { .. }
            | CoreError::InvalidObservation { .. }
            | CoreError::LengthMismatch(_)
            | CoreError::Domain(_) => CliError::Data(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn data_err(msg: impl Into<String>) -> CliError {
    CliError::Data(msg.into())
}

// ---------------------------------------------------------------------------
// Flags and config file.

#[derive(Parser)]
#[command(
    name = "wf",
    version,
    about = "Exact filtering, smoothing, and inference for a discretely observed Wright-Fisher diffusion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset: CSV `t,x,y` plus a JSON sidecar with the settings.
    Simulate(SimulateArgs),
    /// Run the exact filter; emits per-step mean/variance CSV.
    Filter(FilterArgs),
    /// Run filter plus backward smoothing; adds smoothed columns.
    Smooth(SmoothArgs),
    /// Print the exact log likelihood of the dataset.
    Loglik(LoglikArgs),
    /// Maximize the likelihood over (delta, delta').
    Estimate(EstimateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ChannelKind {
    Bernoulli,
    Binomial,
    Negbinomial,
}

/// Model/channel flags shared by every subcommand. Unset values fall back to
/// the config file, then (for commands reading a dataset) to the sidecar.
#[derive(Args, Clone, Debug, Default)]
struct ModelArgs {
    /// Mutation rate toward the reference allele (>= 2).
    #[arg(long)]
    delta: Option<f64>,
    /// Mutation rate away from the reference allele (>= 2).
    #[arg(long = "delta-prime")]
    delta_prime: Option<f64>,
    /// Observation channel.
    #[arg(long, value_enum)]
    channel: Option<ChannelKind>,
    /// Trial count N for the binomial channel.
    #[arg(long = "channel-n")]
    channel_n: Option<u64>,
    /// Success count m for the negative binomial channel.
    #[arg(long = "channel-m")]
    channel_m: Option<u64>,
    /// JSON config file mirroring the flags; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone, Debug)]
struct FilterFlags {
    /// Drop mixture components below this weight after each prediction.
    #[arg(long)]
    prune: Option<f64>,
    /// Lattice depth cap (default from WF_MAX_DEPTH or 64).
    #[arg(long = "max-depth")]
    max_depth: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Number of observations.
    #[arg(long)]
    n: Option<usize>,
    /// Constant spacing between observations.
    #[arg(long)]
    dt: Option<f64>,
    /// RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path; the sidecar is written next to it as `<out>.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FilterArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    flags: FilterFlags,
    /// Input dataset CSV (columns `t,y` or `t,x,y`).
    #[arg(long)]
    data: PathBuf,
    /// Per-step output CSV.
    #[arg(long)]
    out: PathBuf,
    /// Also write the full mixture trace as JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Add side-by-side oracle columns.
    #[arg(long, value_enum)]
    oracle: Option<OracleKind>,
    /// Grid cells / particle count for the oracle.
    #[arg(long = "oracle-size")]
    oracle_size: Option<usize>,
    /// Seed for the particle oracle.
    #[arg(long = "oracle-seed", default_value_t = 0)]
    oracle_seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OracleKind {
    Grid,
    Particle,
}

#[derive(Args)]
struct SmoothArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    flags: FilterFlags,
    /// Input dataset CSV (columns `t,y` or `t,x,y`).
    #[arg(long)]
    data: PathBuf,
    /// Per-step output CSV with filtered and smoothed moments.
    #[arg(long)]
    out: PathBuf,
    /// Also write the smoothed mixtures as JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct LoglikArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    flags: FilterFlags,
    /// Input dataset CSV (columns `t,y` or `t,x,y`).
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    flags: FilterFlags,
    /// Input dataset CSV (columns `t,y` or `t,x,y`).
    #[arg(long)]
    data: PathBuf,
    /// Restart point "delta,delta_prime"; repeatable. Defaults to a
    /// corner-and-center set of five.
    #[arg(long = "start")]
    starts: Vec<String>,
    /// Lower box bound for both parameters (not below 2).
    #[arg(long, default_value_t = 2.0)]
    lower: f64,
    /// Upper box bound for both parameters.
    #[arg(long, default_value_t = 200.0)]
    upper: f64,
    /// Convergence tolerance on the log likelihood.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Iteration cap per restart.
    #[arg(long = "max-iters", default_value_t = 500)]
    max_iters: usize,
}

/// JSON config file: every field mirrors the flag of the same name.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    delta: Option<f64>,
    delta_prime: Option<f64>,
    channel: Option<String>,
    #[serde(rename = "N")]
    channel_n: Option<u64>,
    m: Option<u64>,
    n: Option<usize>,
    dt: Option<f64>,
    seed: Option<u64>,
    prune: Option<f64>,
    max_depth: Option<usize>,
}

/// Sidecar written next to every simulated dataset.
#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    delta: f64,
    delta_prime: f64,
    n: usize,
    dt: f64,
    #[serde(flatten)]
    channel: ObservationModel,
    seed: u64,
}

// ---------------------------------------------------------------------------
// Flag / config / sidecar resolution.

fn load_config(path: &Option<PathBuf>) -> CliResult<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            Ok(serde_json::from_str(&text)
                .map_err(|e| data_err(format!("config {}: {e}", p.display())))?)
        }
    }
}

fn sidecar_path(data: &Path) -> PathBuf {
    let mut s = data.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn load_sidecar(data: &Path) -> Option<Sidecar> {
    let text = fs::read_to_string(sidecar_path(data)).ok()?;
    serde_json::from_str(&text).ok()
}

fn channel_from_parts(
    kind: &str,
    n: Option<u64>,
    m: Option<u64>,
) -> CliResult<ObservationModel> {
    match kind {
        "bernoulli" => Ok(ObservationModel::Bernoulli),
        "binomial" => Ok(ObservationModel::Binomial {
            n: n.ok_or_else(|| data_err("binomial channel requires --channel-n"))?,
        }),
        "negbinomial" => Ok(ObservationModel::NegBinomial {
            m: m.ok_or_else(|| data_err("negbinomial channel requires --channel-m"))?,
        }),
        other => Err(data_err(format!("unknown channel {other:?}"))),
    }
}

/// Resolved model settings: flags > config file > sidecar.
struct ResolvedModel {
    params: Params,
    channel: ObservationModel,
}

fn resolve_model(
    model: &ModelArgs,
    cfg: &FileConfig,
    sidecar: Option<&Sidecar>,
) -> CliResult<ResolvedModel> {
    let delta = model
        .delta
        .or(cfg.delta)
        .or(sidecar.map(|s| s.delta))
        .ok_or_else(|| data_err("--delta is required (no config or sidecar value)"))?;
    let delta_prime = model
        .delta_prime
        .or(cfg.delta_prime)
        .or(sidecar.map(|s| s.delta_prime))
        .ok_or_else(|| data_err("--delta-prime is required (no config or sidecar value)"))?;

    let kind: Option<String> = model
        .channel
        .map(|c| {
            match c {
                ChannelKind::Bernoulli => "bernoulli",
                ChannelKind::Binomial => "binomial",
                ChannelKind::Negbinomial => "negbinomial",
            }
            .to_string()
        })
        .or_else(|| cfg.channel.clone());
    let channel = match kind {
        Some(k) => channel_from_parts(
            &k,
            model.channel_n.or(cfg.channel_n),
            model.channel_m.or(cfg.m),
        )?,
        None => sidecar
            .map(|s| s.channel)
            .ok_or_else(|| data_err("--channel is required (no config or sidecar value)"))?,
    };
    if let Some(s) = sidecar {
        if s.channel != channel {
            eprintln!(
                "warning: channel {channel:?} differs from the dataset sidecar ({:?})",
                s.channel
            );
        }
    }
    let params = Params::new(delta, delta_prime)?;
    Ok(ResolvedModel { params, channel })
}

fn default_max_depth() -> usize {
    std::env::var(MAX_DEPTH_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(DEFAULT_MAX_DEPTH)
}

fn resolve_filter_config(flags: &FilterFlags, cfg: &FileConfig) -> FilterConfig {
    FilterConfig {
        max_depth: flags.max_depth.or(cfg.max_depth).unwrap_or_else(default_max_depth),
        prune_epsilon: flags.prune.or(cfg.prune).unwrap_or(DEFAULT_PRUNE_EPSILON),
        keep_trace: true,
    }
}

// ---------------------------------------------------------------------------
// Dataset CSV.

struct CsvDataset {
    times: Vec<f64>,
    observations: Vec<Observation>,
}

impl CsvDataset {
    fn gaps(&self) -> Vec<f64> {
        self.times
            .iter()
            .enumerate()
            .map(|(k, &t)| if k == 0 { 0.0 } else { t - self.times[k - 1] })
            .collect()
    }
}

fn read_dataset(path: &Path) -> CliResult<CsvDataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let t_col = col("t").ok_or_else(|| data_err("dataset is missing a `t` column"))?;
    let y_col = col("y").ok_or_else(|| data_err("dataset is missing a `y` column"))?;

    let mut times = Vec::new();
    let mut observations = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |idx: usize, what: &str| -> CliResult<&str> {
            record
                .get(idx)
                .ok_or_else(|| data_err(format!("row {row}: missing {what}")))
        };
        let t: f64 = parse(t_col, "t")?
            .parse()
            .map_err(|e| data_err(format!("row {row}: bad t: {e}")))?;
        let y: Observation = parse(y_col, "y")?
            .parse()
            .map_err(|e| data_err(format!("row {row}: bad y: {e}")))?;
        if let Some(&prev) = times.last() {
            if !(t > prev) {
                return Err(data_err(format!(
                    "row {row}: times must be strictly increasing ({t} after {prev})"
                )));
            }
        }
        times.push(t);
        observations.push(y);
    }
    if times.is_empty() {
        return Err(data_err("dataset has no rows"));
    }
    Ok(CsvDataset {
        times,
        observations,
    })
}

// ---------------------------------------------------------------------------
// Subcommands.

fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let cfg = load_config(&args.model.config)?;
    let model = resolve_model(&args.model, &cfg, None)?;
    let n = args
        .n
        .or(cfg.n)
        .ok_or_else(|| data_err("--n is required"))?;
    let dt = args
        .dt
        .or(cfg.dt)
        .ok_or_else(|| data_err("--dt is required"))?;
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    if n == 0 || !(dt > 0.0) {
        return Err(data_err("need n >= 1 and dt > 0"));
    }

    let spec = SimulationSpec {
        delta: model.params.delta(),
        delta_prime: model.params.delta_prime(),
        n,
        dt,
        channel: model.channel,
        seed,
    };
    let data = simulate_dataset(&spec)?;

    let mut writer = csv::Writer::from_path(&args.out)?;
    writer.write_record(["t", "x", "y"])?;
    for k in 0..data.times.len() {
        writer.write_record(&[
            format_float(data.times[k]),
            format_float(data.states[k]),
            data.observations[k].to_string(),
        ])?;
    }
    writer.flush()?;

    let sidecar = Sidecar {
        delta: spec.delta,
        delta_prime: spec.delta_prime,
        n,
        dt,
        channel: spec.channel,
        seed,
    };
    fs::write(
        sidecar_path(&args.out),
        serde_json::to_string_pretty(&sidecar)? + "\n",
    )?;
    println!(
        "wrote {} observations to {} (sidecar {})",
        n,
        args.out.display(),
        sidecar_path(&args.out).display()
    );
    Ok(())
}

/// Shortest-round-trip float formatting (Rust's default Display for f64).
fn format_float(v: f64) -> String {
    let mut s = v.to_string();
    if !s.contains(['.', 'e', 'E', 'n', 'i']) {
        s.push_str(".0");
    }
    s
}

struct OracleColumns {
    header: [&'static str; 2],
    rows: Vec<[String; 2]>,
}

fn run_oracle(
    kind: OracleKind,
    args: &FilterArgs,
    data: &CsvDataset,
    model: &ResolvedModel,
) -> CliResult<OracleColumns> {
    let gaps = data.gaps();
    let gap = if gaps.len() > 1 { gaps[1] } else { 0.0 };
    if gaps.iter().skip(2).any(|&g| (g - gap).abs() > 1e-9 * (1.0 + gap)) {
        return Err(data_err(
            "oracle comparison requires regularly spaced observations",
        ));
    }
    match kind {
        OracleKind::Grid => {
            let cells = args.oracle_size.unwrap_or(400);
            let gf = GridFilter::new(model.params, gap, cells)?;
            let run = gf.run(&data.observations, &model.channel)?;
            Ok(OracleColumns {
                header: ["oracle_mean", "oracle_variance"],
                rows: run
                    .steps
                    .iter()
                    .map(|s| [format_float(s.mean), format_float(s.variance)])
                    .collect(),
            })
        }
        OracleKind::Particle => {
            let particles = args.oracle_size.unwrap_or(100_000);
            let run = particle_filter(
                &data.observations,
                gap,
                &model.channel,
                &model.params,
                particles,
                args.oracle_seed,
            )?;
            Ok(OracleColumns {
                header: ["oracle_mean", "oracle_ess"],
                rows: run
                    .steps
                    .iter()
                    .map(|s| [format_float(s.mean), format_float(s.ess)])
                    .collect(),
            })
        }
    }
}

fn cmd_filter(args: &FilterArgs) -> CliResult<()> {
    let cfg = load_config(&args.model.config)?;
    let sidecar = load_sidecar(&args.data);
    let model = resolve_model(&args.model, &cfg, sidecar.as_ref())?;
    let fc = resolve_filter_config(&args.flags, &cfg);

    let data = read_dataset(&args.data)?;
    let gaps = data.gaps();
    let transition = Transition::new(model.params, fc.max_depth);
    let init = Mixture::stationary(model.params);
    let run = run_filter(
        &data.observations,
        &gaps,
        &model.channel,
        &transition,
        &init,
        &fc,
    )?;

    let oracle = args
        .oracle
        .map(|k| run_oracle(k, args, &data, &model))
        .transpose()?;

    let mut writer = csv::Writer::from_path(&args.out)?;
    let mut header = vec![
        "step",
        "t",
        "y",
        "predictive_prob",
        "components",
        "mean",
        "variance",
    ];
    if let Some(o) = &oracle {
        header.extend(o.header);
    }
    writer.write_record(&header)?;
    for (k, step) in run.trace.steps.iter().enumerate() {
        let mut row = vec![
            k.to_string(),
            format_float(data.times[k]),
            data.observations[k].to_string(),
            format_float(step.predictive_prob),
            step.component_count.to_string(),
            format_float(step.updated.mean()),
            format_float(step.updated.variance()),
        ];
        if let Some(o) = &oracle {
            row.extend(o.rows[k].iter().cloned());
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;

    if let Some(path) = &args.trace {
        fs::write(path, serde_json::to_string_pretty(&run.trace)? + "\n")?;
    }
    println!("log_likelihood: {}", format_float(run.trace.log_likelihood));
    Ok(())
}

fn cmd_smooth(args: &SmoothArgs) -> CliResult<()> {
    let cfg = load_config(&args.model.config)?;
    let sidecar = load_sidecar(&args.data);
    let model = resolve_model(&args.model, &cfg, sidecar.as_ref())?;
    let fc = resolve_filter_config(&args.flags, &cfg);

    let data = read_dataset(&args.data)?;
    let gaps = data.gaps();
    let transition = Transition::new(model.params, fc.max_depth);
    let init = Mixture::stationary(model.params);
    let run = run_filter(
        &data.observations,
        &gaps,
        &model.channel,
        &transition,
        &init,
        &fc,
    )?;
    let backwards = backward_sweep(&data.observations, &gaps, &model.channel, &transition)?;

    let mut smoothed = Vec::with_capacity(run.trace.steps.len());
    for (step, bf) in run.trace.steps.iter().zip(&backwards) {
        let (mix, _) = smooth_marginal(&step.updated, bf)?;
        smoothed.push(mix);
    }

    let mut writer = csv::Writer::from_path(&args.out)?;
    writer.write_record([
        "step",
        "t",
        "y",
        "filter_mean",
        "filter_variance",
        "smooth_mean",
        "smooth_variance",
    ])?;
    for (k, (step, mix)) in run.trace.steps.iter().zip(&smoothed).enumerate() {
        writer.write_record(&[
            k.to_string(),
            format_float(data.times[k]),
            data.observations[k].to_string(),
            format_float(step.updated.mean()),
            format_float(step.updated.variance()),
            format_float(mix.mean()),
            format_float(mix.variance()),
        ])?;
    }
    writer.flush()?;

    if let Some(path) = &args.trace {
        fs::write(path, serde_json::to_string_pretty(&smoothed)? + "\n")?;
    }
    println!("log_likelihood: {}", format_float(run.trace.log_likelihood));
    Ok(())
}

fn cmd_loglik(args: &LoglikArgs) -> CliResult<()> {
    let cfg = load_config(&args.model.config)?;
    let sidecar = load_sidecar(&args.data);
    let model = resolve_model(&args.model, &cfg, sidecar.as_ref())?;
    let fc = resolve_filter_config(&args.flags, &cfg);

    let data = read_dataset(&args.data)?;
    let ec = EstimateConfig {
        max_depth: fc.max_depth,
        prune_epsilon: fc.prune_epsilon,
        ..EstimateConfig::default()
    };
    let ll = loglik_at(
        model.params.delta(),
        model.params.delta_prime(),
        &data.observations,
        &data.gaps(),
        &model.channel,
        &ec,
    )?;
    println!("{}", format_float(ll));
    Ok(())
}

fn parse_start(s: &str) -> CliResult<(f64, f64)> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| data_err(format!("bad --start {s:?}; expected \"delta,delta_prime\"")))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|e| data_err(format!("bad --start {s:?}: {e}")))
    };
    Ok((parse(a)?, parse(b)?))
}

fn cmd_estimate(args: &EstimateArgs) -> CliResult<()> {
    let cfg = load_config(&args.model.config)?;
    let sidecar = load_sidecar(&args.data);
    // Channel comes from flags/config/sidecar; delta/delta' are being
    // estimated, so fill placeholders if absent.
    let mut model_args = args.model.clone();
    model_args.delta = model_args.delta.or(Some(2.0));
    model_args.delta_prime = model_args.delta_prime.or(Some(2.0));
    let model = resolve_model(&model_args, &cfg, sidecar.as_ref())?;
    let fc = resolve_filter_config(&args.flags, &cfg);

    let data = read_dataset(&args.data)?;
    let starts = args
        .starts
        .iter()
        .map(|s| parse_start(s))
        .collect::<CliResult<Vec<_>>>()?;
    let ec = EstimateConfig {
        max_depth: fc.max_depth,
        prune_epsilon: fc.prune_epsilon,
        starts,
        value_tol: args.tol,
        lower: args.lower,
        upper: args.upper,
        max_iters: args.max_iters,
        ..EstimateConfig::default()
    };
    let res = estimate_mle(&data.observations, &data.gaps(), &model.channel, &ec)?;
    let report = serde_json::json!({
        "delta": res.delta,
        "delta_prime": res.delta_prime,
        "log_likelihood": res.log_likelihood,
        "converged": res.converged,
        "at_boundary": res.at_boundary,
        "evaluations": res.evaluations,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Filter(args) => cmd_filter(args),
        Command::Smooth(args) => cmd_smooth(args),
        Command::Loglik(args) => cmd_loglik(args),
        Command::Estimate(args) => cmd_estimate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
