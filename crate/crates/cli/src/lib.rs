//! Command-line front end for the monitoring toolkit.
//!
//! Every command accepts `--config <file.json>`: a JSON object whose keys are
//! the command's long flag names (`-` or `_` separated). Flags given on the
//! command line take precedence over the file.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use smarla_core::abstraction::{self, FeatureMode, SearchBounds, SelectionConfig};
use smarla_core::agent::{self, AgentModel, AgentTrainConfig};
use smarla_core::dataset::{self, EpisodeSet};
use smarla_core::envs::EnvKind;
use smarla_core::eval::{self, BuildSettings};
use smarla_core::forest::ForestConfig;
use smarla_core::monitor::{self, Criterion, MonitorModel};
use smarla_core::seed;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) => EXIT_IO,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<smarla_core::Error> for CliError {
    fn from(e: smarla_core::Error) -> Self {
        use smarla_core::Error as E;
        match e {
            e if e.is_numeric() => CliError::Numeric(e.to_string()),
            e @ (E::UnknownEnv(_) | E::InvalidConfig(_)) => CliError::Usage(e.to_string()),
            e => CliError::Io(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "smarla", version, about = "Train agents, build safety monitors and evaluate them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a DQN agent and write the selected checkpoint plus a report.
    TrainAgent(TrainAgentArgs),
    /// Roll out the greedy agent and write a labeled JSONL corpus.
    Collect(CollectArgs),
    /// Build a monitor at a fixed abstraction level.
    Build(BuildArgs),
    /// Choose the abstraction level with the two-phase procedure.
    SelectD(SelectArgs),
    /// Evaluate a monitor on held-out episodes.
    Evaluate(EvaluateArgs),
    /// Stream Q-vectors on stdin and answer with assessments on stdout.
    Watch(WatchArgs),
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainAgentArgs {
    /// Environment: cartpole or mountaincar.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    env: Option<String>,
    /// Environment steps; defaults to the per-environment budget.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    steps: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Agent JSON output path.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    /// Training report path; defaults to `<out>.report.json`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<PathBuf>,
    /// Full training configuration overriding the per-environment defaults.
    #[arg(skip)]
    #[serde(skip_serializing_if = "Option::is_none")]
    agent: Option<Value>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CollectArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    agent: Option<PathBuf>,
    /// Number of episodes.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    episodes: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BuildArgs {
    /// Training corpus (JSONL).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    episodes: Option<PathBuf>,
    /// Abstraction level.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    d: Option<f64>,
    /// binary or frequency.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    features: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    trees: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    criterion: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    theta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SelectArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    episodes: Option<PathBuf>,
    /// Comma-separated candidate levels, or `auto` for the coarse-to-fine search.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<String>,
    /// State-count band for `--grid auto`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    min_states: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_states: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    features: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    trees: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    criterion: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    theta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Selection JSON output.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvaluateArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    /// Test corpus (JSONL).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    episodes: Option<PathBuf>,
    /// Defaults to the model's criterion.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    criterion: Option<String>,
    /// Defaults to the model's threshold.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    theta: Option<f64>,
    /// Prefix for metrics.csv, sweep.csv, summary.json and traces.jsonl.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out_prefix: Option<String>,
    /// Added to every reported time step (1 gives 1-based steps).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    step_offset: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct WatchArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

/// Overlay command-line flags onto the config file, if any.
fn resolve<T: Serialize + DeserializeOwned>(flags: &T, config: Option<&Path>) -> CliResult<T> {
    let Some(path) = config else {
        return to_args(serde_json::to_value(flags).map_err(|e| CliError::Usage(e.to_string()))?);
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let file: Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let Value::Object(file) = file else {
        return Err(CliError::Usage(format!("{}: expected a JSON object", path.display())));
    };
    let mut merged: Map<String, Value> = file.into_iter().map(|(k, v)| (k.replace('-', "_"), v)).collect();
    if let Value::Object(cli) = serde_json::to_value(flags).map_err(|e| CliError::Usage(e.to_string()))? {
        merged.extend(cli);
    }
    to_args(Value::Object(merged))
}

fn to_args<T: DeserializeOwned>(value: Value) -> CliResult<T> {
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("config: {e}")))
}

fn required<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Usage(format!("missing required --{flag}")))
}

fn parse_env(s: &str) -> CliResult<EnvKind> {
    s.parse().map_err(|_| CliError::Usage(format!("unknown environment `{s}` (expected cartpole or mountaincar)")))
}

fn parse_mode(s: Option<&str>) -> CliResult<FeatureMode> {
    match s.map(str::to_ascii_lowercase).as_deref() {
        None | Some("binary") => Ok(FeatureMode::Binary),
        Some("frequency") => Ok(FeatureMode::Frequency),
        Some(other) => Err(CliError::Usage(format!("unknown feature mode `{other}` (expected binary or frequency)"))),
    }
}

fn parse_criterion(s: Option<&str>, default: Criterion) -> CliResult<Criterion> {
    s.map_or(Ok(default), |s| s.parse().map_err(|e: smarla_core::Error| CliError::Usage(e.to_string())))
}

fn check_theta(theta: f64) -> CliResult<f64> {
    if theta > 0.0 && theta < 1.0 {
        Ok(theta)
    } else {
        Err(CliError::Usage(format!("threshold {theta} must lie in (0, 1)")))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn build_settings(features: Option<&str>, trees: Option<usize>, criterion: Option<&str>, theta: Option<f64>, seed: u64) -> CliResult<BuildSettings> {
    let n_trees = trees.unwrap_or(ForestConfig::default().n_trees);
    if n_trees == 0 {
        return Err(CliError::Usage("--trees must be positive".into()));
    }
    Ok(BuildSettings {
        mode: parse_mode(features)?,
        forest: ForestConfig {
            n_trees,
            ..ForestConfig::default()
        },
        criterion: parse_criterion(criterion, Criterion::UpperBound)?,
        theta: check_theta(theta.unwrap_or(0.5))?,
        seed,
    })
}

fn train_agent_cmd(args: TrainAgentArgs, out: &mut dyn Write) -> CliResult<()> {
    let args = resolve(&args, args.config.as_deref())?;
    let kind = parse_env(&required(args.env, "env")?)?;
    let path = required(args.out, "out")?;
    let mut config = match args.agent {
        Some(v) => serde_json::from_value(v).map_err(|e| CliError::Usage(format!("agent config: {e}")))?,
        None => AgentTrainConfig::for_env(kind),
    };
    if let Some(steps) = args.steps {
        config.total_steps = steps;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let outcome = agent::train_agent(kind, &config)?;
    outcome.model.save(&path)?;
    let report_path = args.report.unwrap_or_else(|| with_suffix(&path, ".report.json"));
    write_json(&report_path, &outcome.report)?;
    let r = &outcome.report;
    writeln!(
        out,
        "agent {} (checkpoint at step {}{}): mean reward {:.2}, mean length {:.1}, unsafe rate {:.3}",
        path.display(),
        r.chosen_step,
        if r.chosen_in_band { "" } else { ", outside the unsafe band" },
        r.eval.mean_reward,
        r.eval.mean_length,
        r.eval.unsafe_rate
    )
    .map_err(stdout_err)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn stdout_err(e: io::Error) -> CliError {
    CliError::Io(format!("stdout: {e}"))
}

fn collect_cmd(args: CollectArgs, out: &mut dyn Write) -> CliResult<()> {
    let args = resolve(&args, args.config.as_deref())?;
    let count = required(args.episodes, "episodes")?;
    if count == 0 {
        return Err(CliError::Usage("--episodes must be at least 1".into()));
    }
    let agent = AgentModel::load(&required(args.agent, "agent")?)?;
    let path = required(args.out, "out")?;
    let set = dataset::collect(&agent, count, args.seed.unwrap_or(0))?;
    set.write_jsonl(&path)?;
    let unsafe_count = set.unsafe_count();
    writeln!(
        out,
        "{} episodes: {} unsafe ({:.1}%), {} safe",
        set.len(),
        unsafe_count,
        100.0 * unsafe_count as f64 / set.len() as f64,
        set.len() - unsafe_count
    )
    .map_err(stdout_err)
}

fn build_cmd(args: BuildArgs, out: &mut dyn Write) -> CliResult<()> {
    let args = resolve(&args, args.config.as_deref())?;
    let d = required(args.d, "d")?;
    if !(d > 0.0 && d.is_finite()) {
        return Err(CliError::Usage(format!("--d {d} must be positive")));
    }
    let seed = args.seed.unwrap_or(0);
    let settings = build_settings(args.features.as_deref(), args.trees, args.criterion.as_deref(), args.theta, seed)?;
    let set = EpisodeSet::read_jsonl(&required(args.episodes, "episodes")?)?;
    let path = required(args.out, "out")?;

    let (inner_train, inner_test) = dataset::split(&set, 0.7, seed::derive(seed, "holdout"))?;
    let f1 = eval::post_training_f1(&eval::build_monitor(&inner_train, d, &settings)?, &inner_test)?;
    let model = eval::build_monitor(&set, d, &settings)?;
    model.save(&path)?;
    writeln!(out, "n = {} abstract states, post-training macro F1 (70/30) = {f1:.4}", model.table.n()).map_err(stdout_err)
}

fn select_cmd(args: SelectArgs, out: &mut dyn Write) -> CliResult<()> {
    let args = resolve(&args, args.config.as_deref())?;
    let seed = args.seed.unwrap_or(0);
    let settings = build_settings(args.features.as_deref(), args.trees, args.criterion.as_deref(), args.theta, seed)?;
    let grid = required(args.grid, "grid")?;
    let set = EpisodeSet::read_jsonl(&required(args.episodes, "episodes")?)?;
    let path = required(args.out, "out")?;
    let split_seed = seed::derive(seed, "inner-split");

    let selection = if grid.trim().eq_ignore_ascii_case("auto") {
        let defaults = SearchBounds::default();
        let bounds = SearchBounds {
            min_states: args.min_states.unwrap_or(defaults.min_states),
            max_states: args.max_states.unwrap_or(defaults.max_states),
            ..defaults
        };
        abstraction::coarse_to_fine(&set, &SelectionConfig::new(Vec::new(), settings, split_seed), &bounds)?
    } else {
        let candidates = grid
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| CliError::Usage(format!("--grid entry `{s}`: {e}"))))
            .collect::<CliResult<Vec<_>>>()?;
        abstraction::select_level(&set, &SelectionConfig::new(candidates, settings, split_seed))?
    };
    write_json(&path, &selection)?;
    for r in &selection.report {
        writeln!(
            out,
            "d = {:<10} n = {:<7} F1 = {:.4}{}{}",
            r.d,
            r.n,
            r.f1,
            r.mean_fire_step.map_or(String::new(), |s| format!("  mean fire step {s:.1}")),
            if r.excluded { "  (initial probability over threshold)" } else { "" }
        )
        .map_err(stdout_err)?;
    }
    writeln!(
        out,
        "optimal range [{}, {}], d* = {}",
        selection.optimal_range.0, selection.optimal_range.1, selection.d_star
    )
    .map_err(stdout_err)
}

#[derive(Serialize)]
struct TraceLine {
    episode: usize,
    label: dataset::Label,
    length: usize,
    first_fire_step: Option<usize>,
    mean: Vec<f64>,
    low: Vec<f64>,
    up: Vec<f64>,
}

fn evaluate_cmd(args: EvaluateArgs, out: &mut dyn Write) -> CliResult<()> {
    let args = resolve(&args, args.config.as_deref())?;
    let model = MonitorModel::load(&required(args.model, "model")?)?;
    let criterion = parse_criterion(args.criterion.as_deref(), model.criterion)?;
    let theta = check_theta(args.theta.unwrap_or(model.theta))?;
    let test = EpisodeSet::read_jsonl(&required(args.episodes, "episodes")?)?;
    let prefix = required(args.out_prefix, "out-prefix")?;
    let at = |name: &str| PathBuf::from(format!("{prefix}{name}"));
    if let Some(parent) = at("x").parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
    }

    let offset = args.step_offset.unwrap_or(0);
    let shift = |t: Option<eval::Triple>| {
        t.map(|t| eval::Triple {
            min: t.min + offset as f64,
            avg: t.avg + offset as f64,
            max: t.max + offset as f64,
        })
    };

    let labels = test.labels();
    let bands = eval::episode_bands(&model, &test)?;
    let records = eval::fire_records(&bands, criterion, theta);
    let horizon = eval::default_horizon(&records);
    let mut metrics = eval::metrics_over_time(&records, &labels, horizon)?;
    for row in &mut metrics {
        row.t += offset;
    }
    eval::write_metrics_csv(&metrics, &at("metrics.csv"))?;
    let mut sweep = eval::sweep(&bands, &labels, &Criterion::ALL, &[0.25, 0.5, 0.75])?;
    for row in &mut sweep {
        row.metrics.t += offset;
        row.stats.decision_step = shift(row.stats.decision_step);
    }
    eval::write_sweep_csv(&sweep, &at("sweep.csv"))?;
    let mut summary = eval::decision_summary(&bands, &labels, theta)?;
    for row in &mut summary.rows {
        row.decision_step = shift(row.decision_step);
    }
    write_json(&at("summary.json"), &summary)?;

    let trace_path = at("traces.jsonl");
    let file = fs::File::create(&trace_path).map_err(|e| CliError::Io(format!("{}: {e}", trace_path.display())))?;
    let mut w = io::BufWriter::new(file);
    for (i, (b, r)) in bands.iter().zip(&records).enumerate() {
        let line = TraceLine {
            episode: i,
            label: labels[i],
            length: r.length,
            first_fire_step: r.first_fire_step.map(|f| f + offset),
            mean: b.iter().map(|x| x.mean).collect(),
            low: b.iter().map(|x| x.low).collect(),
            up: b.iter().map(|x| x.up).collect(),
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| CliError::Io(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Io(format!("{}: {e}", trace_path.display())))?;

    let last = metrics.last().expect("non-empty test set has a horizon");
    let mut stats = eval::decision_time_stats(&records, &labels)?;
    stats.decision_step = shift(stats.decision_step);
    writeln!(
        out,
        "{} episodes ({} unsafe), {} theta {}: horizon macro F1 {:.4}, weighted F1 {:.4}, FP {}, FN {}",
        labels.len(),
        summary.unsafe_episodes,
        criterion,
        theta,
        last.f1_macro,
        last.f1_weighted,
        stats.fp_count,
        stats.fn_count
    )
    .map_err(stdout_err)?;
    if let (Some(step), Some(frac)) = (stats.decision_step, stats.remaining_fraction) {
        writeln!(
            out,
            "decision step min/avg/max {:.0}/{:.2}/{:.0}, remaining {:.2}% on average",
            step.min,
            step.avg,
            step.max,
            100.0 * frac.avg
        )
        .map_err(stdout_err)?;
    }
    Ok(())
}

fn watch_cmd(args: WatchArgs) -> CliResult<()> {
    let args = resolve(&args, args.config.as_deref())?;
    let model = MonitorModel::load(&required(args.model, "model")?)?;
    let stdin = io::stdin();
    let stdout = io::stdout();
    let stderr = io::stderr();
    monitor::watch(&model, stdin.lock(), stdout.lock(), stderr.lock())?;
    Ok(())
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("SMARLA_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("SMARLA_THREADS must be a positive integer, got `{v}`")))?;
    // A second initialization (e.g. from a test harness) is harmless.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parse `args` (including the program name) and run the command, writing
/// human-readable output to `out`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    let result = configure_threads().and_then(|()| match cli.command {
        Command::TrainAgent(a) => train_agent_cmd(a, out),
        Command::Collect(a) => collect_cmd(a, out),
        Command::Build(a) => build_cmd(a, out),
        Command::SelectD(a) => select_cmd(a, out),
        Command::Evaluate(a) => evaluate_cmd(a, out),
        Command::Watch(a) => watch_cmd(a),
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn core_errors_map_to_exit_codes() {
        use smarla_core::Error as E;
        assert_eq!(CliError::from(E::NonFinite("loss")).exit_code(), EXIT_NUMERIC);
        assert_eq!(
            CliError::from(E::Divergence {
                step: 3,
                detail: "nan".into()
            })
            .exit_code(),
            EXIT_NUMERIC
        );
        assert_eq!(CliError::from(E::InvalidConfig("x".into())).exit_code(), EXIT_USAGE);
        assert_eq!(CliError::from(E::EmptyEpisodeSet).exit_code(), EXIT_IO);
    }

    #[test]
    fn flags_override_config_values() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"episodes": "a.jsonl", "out-prefix": "file-"}"#).unwrap();
        let flags = EvaluateArgs {
            out_prefix: Some("flag-".into()),
            ..EvaluateArgs::default()
        };
        let merged = resolve(&flags, Some(&cfg)).unwrap();
        assert_eq!(merged.out_prefix.as_deref(), Some("flag-"));
        assert_eq!(merged.episodes, Some(PathBuf::from("a.jsonl")));
    }

    #[test]
    fn feature_mode_names() {
        assert_eq!(parse_mode(None).unwrap(), FeatureMode::Binary);
        assert_eq!(parse_mode(Some("Frequency")).unwrap(), FeatureMode::Frequency);
        assert!(parse_mode(Some("counts")).is_err());
    }
}
