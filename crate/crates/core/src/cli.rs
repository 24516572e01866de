//! Command-line surface. [`run`] parses arguments and executes one
//! subcommand; [`CliError::exit_code`] maps failures to process exit codes.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::baselines::{self, DbscanConfig, MeanShiftConfig};
use crate::dem::{DemConfig, DemState, SegmentStats};
use crate::error::Error;
use crate::eval::{self, ScalingConfig};
use crate::io::{self, DemCheckpoint, TrajectoryFormat};
use crate::model::{extract_stream, FeatureConfig, FeatureSelector, Observation};
use crate::synth::{self, SceneSpec};
use crate::tigm::{self, AssignmentMode, TigmConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Failed(#[from] Error),
}

impl CliError {
    /// 0 success, 1 usage, 2 input format, 3 internal invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Failed(e) => match e {
                Error::InvalidParameter(_) => 1,
                Error::InvalidInput(_)
                | Error::Format { .. }
                | Error::Ordering(_)
                | Error::Io(_)
                | Error::Json(_) => 2,
                Error::Contract(_) | Error::NotFound(_) => 3,
            },
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "tigm", version, about = "Streaming trajectory clustering and scene dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cluster a trajectory file in arrival order.
    Cluster(ClusterArgs),
    /// Segmented clustering with a sliding window; emits per-segment statistics.
    Dem(DemArgs),
    /// Cluster count, work and time over a grid of concentration radii.
    SweepBeta(SweepArgs),
    /// Compare predicted labels with ground truth.
    Eval(EvalArgs),
    /// Reference clusterers.
    #[command(subcommand)]
    Baseline(BaselineCommand),
    /// Generate a synthetic scene with ground truth.
    Synth(SynthArgs),
    /// Work and time of single-pass clustering as the stream grows.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "auto", value_parser = parse_from_str::<TrajectoryFormat>)]
    format: TrajectoryFormat,
    #[arg(long, value_parser = parse_from_str::<FeatureSelector>)]
    features: FeatureSelector,
    /// Comma-separated per-dimension multipliers applied to the features.
    #[arg(long)]
    scale: Option<String>,
}

impl InputArgs {
    fn feature_config(&self) -> CliResult<FeatureConfig> {
        feature_config(self.features, self.scale.as_deref())
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Map,
    Gibbs,
}

impl From<Mode> for AssignmentMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Map => AssignmentMode::Map,
            Mode::Gibbs => AssignmentMode::SampledGibbs,
        }
    }
}

#[derive(Debug, Args)]
struct ClusterArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    beta: f64,
    #[arg(long, value_enum, default_value = "map")]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Repeat unassign/reassign sweeps until stable, at most this many.
    #[arg(long)]
    converge: Option<usize>,
    #[arg(long)]
    out_assignments: PathBuf,
    #[arg(long)]
    out_clusters: PathBuf,
}

#[derive(Debug, Args)]
struct DemArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "auto", value_parser = parse_from_str::<TrajectoryFormat>)]
    format: TrajectoryFormat,
    #[arg(long, value_parser = parse_from_str::<FeatureSelector>, required_unless_present = "resume")]
    features: Option<FeatureSelector>,
    #[arg(long, conflicts_with = "resume")]
    scale: Option<String>,
    #[arg(long, required_unless_present = "resume")]
    beta: Option<f64>,
    #[arg(long, value_enum, conflicts_with = "resume")]
    mode: Option<Mode>,
    #[arg(long, conflicts_with = "resume")]
    seed: Option<u64>,
    /// Segment length in frames.
    #[arg(long, required_unless_present = "resume")]
    delta_t: Option<u64>,
    #[arg(long)]
    out_dynamics: PathBuf,
    #[arg(long)]
    out_assignments: PathBuf,
    /// Save resumable state after the last observation, before the final flush.
    #[arg(long)]
    checkpoint_out: Option<PathBuf>,
    /// Continue from a checkpoint; configuration is taken from it.
    #[arg(long, conflicts_with_all = ["features", "beta", "delta_t"])]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    input: InputArgs,
    /// `start:stop:step` (inclusive) or a single value.
    #[arg(long)]
    betas: String,
    #[arg(long, value_enum, default_value = "map")]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum BaselineCommand {
    Dbscan(DbscanArgs),
    Meanshift(MeanShiftArgs),
}

#[derive(Debug, Args)]
struct DbscanArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    min_samples: usize,
    /// Rescale each feature to [0, 1] first.
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("bw").required(true).args(["quantile", "bandwidth"]))]
struct MeanShiftArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Bandwidth as a quantile of pairwise distances.
    #[arg(long)]
    quantile: Option<f64>,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out_traj: PathBuf,
    #[arg(long)]
    out_gt: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    k: usize,
    /// Comma-separated stream lengths.
    #[arg(long)]
    n: String,
    #[arg(long)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_from_str<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn feature_config(selector: FeatureSelector, scale: Option<&str>) -> CliResult<FeatureConfig> {
    let Some(scale) = scale else {
        return Ok(FeatureConfig::new(selector));
    };
    let values = scale
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("bad --scale entry {v:?}")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(FeatureConfig::with_scale(selector, values)?)
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, S>(args: I) -> CliResult
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(usage(e.render().to_string()));
        }
    };
    match cli.command {
        Command::Cluster(a) => cluster(a),
        Command::Dem(a) => dem(a),
        Command::SweepBeta(a) => sweep(a),
        Command::Eval(a) => evaluate(a),
        Command::Baseline(BaselineCommand::Dbscan(a)) => dbscan(a),
        Command::Baseline(BaselineCommand::Meanshift(a)) => meanshift(a),
        Command::Synth(a) => synthesize(a),
        Command::Bench(a) => bench(a),
    }
}

fn load_observations(
    path: &Path,
    format: TrajectoryFormat,
    features: &FeatureConfig,
    first_index: u64,
) -> CliResult<Vec<Observation<f64>>> {
    let report = io::load_trajectories(path, format)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(extract_stream(&report.trajectories, features, first_index)?)
}

fn cluster(a: ClusterArgs) -> CliResult {
    let features = a.input.feature_config()?;
    let obs = load_observations(&a.input.input, a.input.format, &features, 0)?;
    let config = TigmConfig::new(a.beta, a.mode.into(), a.seed)?;
    let (state, assignments) = match a.converge {
        Some(max) => {
            let out = tigm::run_converged(&obs, config, max)?;
            (out.state, out.assignments)
        }
        None => tigm::run_stream(&obs, config)?,
    };
    state.check_invariants()?;
    io::write_atomic(&a.out_assignments, io::labels_to_csv("label", assignments).as_bytes())?;
    io::write_atomic(&a.out_clusters, io::state_to_json(&state)?.as_bytes())?;
    Ok(())
}

fn dem(a: DemArgs) -> CliResult {
    let (mut state, features, mut finalized) = match &a.resume {
        Some(path) => {
            let ck: DemCheckpoint<f64> = DemCheckpoint::from_json(&std::fs::read_to_string(path).map_err(Error::from)?)?;
            (ck.dem, ck.features, ck.finalized)
        }
        None => {
            let (Some(selector), Some(beta), Some(delta_t)) = (a.features, a.beta, a.delta_t) else {
                return Err(usage("--features, --beta and --delta-t are required without --resume"));
            };
            let mode = a.mode.unwrap_or(Mode::Map);
            let tigm = TigmConfig::new(beta, mode.into(), a.seed.unwrap_or(0))?;
            let state = DemState::new(DemConfig::new(delta_t, tigm)?)?;
            (state, feature_config(selector, a.scale.as_deref())?, BTreeMap::new())
        }
    };
    let obs = load_observations(&a.input, a.format, &features, state.ingested)?;
    for o in obs {
        state.push(o)?;
        finalized.extend(state.drain_retired());
    }
    state.check_window()?;

    if let Some(path) = &a.checkpoint_out {
        let ck = DemCheckpoint::new(features.clone(), finalized.clone(), state.clone());
        io::write_atomic(path, ck.to_json()?.as_bytes())?;
    }

    // Close the open segment on a copy so the checkpoint stays resumable.
    let mut flushed = state.clone();
    if flushed.ingested > 0 {
        flushed.advance_segment()?;
    }
    finalized.extend(flushed.drain_retired());
    for o in &flushed.window {
        let label = flushed
            .model
            .label_of(o.obs_id)
            .ok_or_else(|| Error::Contract(format!("window observation {} is unassigned", o.obs_id)))?;
        finalized.insert(o.obs_id, label);
    }
    let segments: &[SegmentStats<f64>] = &flushed.history;
    io::write_atomic(&a.out_dynamics, io::segments_to_jsonl(segments)?.as_bytes())?;
    io::write_atomic(&a.out_assignments, io::labels_to_csv("label", finalized).as_bytes())?;
    Ok(())
}

fn sweep(a: SweepArgs) -> CliResult {
    let features = a.input.feature_config()?;
    let obs = load_observations(&a.input.input, a.input.format, &features, 0)?;
    let betas = eval::parse_grid(&a.betas)?;
    let gt = a.gt.as_deref().map(io::read_nonnegative_labels).transpose()?;
    let template = TigmConfig::new(betas[0], a.mode.into(), a.seed)?;
    let rows = eval::beta_sweep(&obs, &betas, template, gt.as_ref())?;
    let mut out = String::from("beta\tcluster_count\twork\telapsed_ms\taccuracy\n");
    for r in rows {
        let acc = r.accuracy.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:.3}\t{}",
            r.beta,
            r.cluster_count,
            r.work,
            r.elapsed.as_secs_f64() * 1e3,
            acc
        );
    }
    io::write_atomic(&a.out, out.as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct Metrics {
    tp: usize,
    fp: usize,
    #[serde(rename = "fn")]
    fn_: usize,
    tn: usize,
    n_total: usize,
    accuracy: f64,
    precision: f64,
    recall: f64,
}

fn evaluate(a: EvalArgs) -> CliResult {
    let pred = io::read_nonnegative_labels(&a.pred)?;
    let gt = io::read_nonnegative_labels(&a.gt)?;
    let c = eval::confusion(&pred, &gt)?;
    let m = Metrics {
        tp: c.tp,
        fp: c.fp,
        fn_: c.fn_,
        tn: c.tn,
        n_total: c.n_total,
        accuracy: c.accuracy(),
        precision: c.precision(),
        recall: c.recall(),
    };
    let text = serde_json::to_string_pretty(&m).map_err(Error::from)? + "\n";
    io::write_atomic(&a.out, text.as_bytes())?;
    Ok(())
}

fn baseline_points(input: &InputArgs, normalize: bool) -> CliResult<(Vec<u64>, Vec<Vec<f64>>)> {
    let features = input.feature_config()?;
    let obs = load_observations(&input.input, input.format, &features, 0)?;
    let ids = obs.iter().map(|o| o.obs_id).collect();
    let mut points: Vec<Vec<f64>> = obs.into_iter().map(|o| o.features).collect();
    if normalize {
        points = baselines::min_max_normalize(&points)?;
    }
    Ok((ids, points))
}

fn dbscan(a: DbscanArgs) -> CliResult {
    let (ids, points) = baseline_points(&a.input, a.normalize)?;
    let labels = baselines::dbscan(&points, &DbscanConfig::new(a.eps, a.min_samples)?)?;
    io::write_atomic(&a.out, io::labels_to_csv("label", ids.into_iter().zip(labels)).as_bytes())?;
    Ok(())
}

fn meanshift(a: MeanShiftArgs) -> CliResult {
    let (ids, points) = baseline_points(&a.input, a.normalize)?;
    let config = match (a.quantile, a.bandwidth) {
        (Some(q), None) => MeanShiftConfig::Quantile(q),
        (None, Some(b)) => MeanShiftConfig::Bandwidth(b),
        _ => return Err(usage("give exactly one of --quantile and --bandwidth")),
    };
    let result = baselines::mean_shift(&points, &config)?;
    io::write_atomic(&a.out, io::labels_to_csv("label", ids.into_iter().zip(result.labels)).as_bytes())?;
    Ok(())
}

fn synthesize(a: SynthArgs) -> CliResult {
    let spec: SceneSpec = io::read_json(&a.spec)?;
    let (trajectories, gt) = synth::generate_scene(&spec)?;
    io::write_atomic(&a.out_traj, io::trajectories_to_jsonl(&trajectories).as_bytes())?;
    io::write_atomic(&a.out_gt, io::labels_to_csv("group", gt).as_bytes())?;
    Ok(())
}

fn bench(a: BenchArgs) -> CliResult {
    let n_values = a
        .n
        .split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|_| usage(format!("bad --n entry {v:?}"))))
        .collect::<CliResult<Vec<_>>>()?;
    let config = ScalingConfig {
        k: a.k,
        beta: a.beta,
        seed: a.seed,
        repeats: a.repeats,
    };
    let rows = eval::scaling_report(&n_values, &config)?;
    let mut out = String::from("n\tclusters\twork\telapsed_ms\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{}\t{:.3}", r.n, r.clusters, r.work, r.elapsed.as_secs_f64() * 1e3);
    }
    io::write_atomic(&a.out, out.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> CliResult {
        run(std::iter::once("tigm").chain(args.iter().copied()))
    }

    #[test]
    fn missing_flags_are_usage_errors() {
        let e = run_args(&["cluster", "--input", "x.jsonl"]).unwrap_err();
        assert_eq!(e.exit_code(), 1);
        let e = run_args(&["baseline", "meanshift", "--input", "x", "--features", "end", "--out", "o"]).unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn conflicting_flags_are_usage_errors() {
        let e = run_args(&[
            "dem", "--input", "x", "--resume", "c.json", "--beta", "2", "--out-dynamics", "d", "--out-assignments", "a",
        ])
        .unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn bad_scale_is_usage_error() {
        assert_eq!(feature_config(FeatureSelector::End, Some("1,zz")).unwrap_err().exit_code(), 1);
        assert!(feature_config(FeatureSelector::End, Some("1,2")).is_ok());
    }

    #[test]
    fn missing_input_file_is_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("none.jsonl");
        let out = dir.path().join("a.csv");
        let e = run_args(&[
            "cluster",
            "--input",
            missing.to_str().unwrap(),
            "--features",
            "end",
            "--beta",
            "3",
            "--out-assignments",
            out.to_str().unwrap(),
            "--out-clusters",
            out.to_str().unwrap(),
        ])
        .unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn help_is_not_an_error() {
        assert!(run_args(&["--help"]).is_ok());
    }
}
