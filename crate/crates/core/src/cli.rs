//! Command-line front end.
//!
//! Settings resolve in three layers: built-in defaults, then a flat JSON
//! config file (`--config`), then flags. The output directory falls back to
//! `COUNTCLUSTER_OUT` when neither the file nor `--out` names one.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::attention::preprocess;
use crate::blobsim::{SimParams, TOTAL_STEPS};
use crate::clustering::{build_cluster_set_with, MemberPolicy};
use crate::error::Error;
use crate::eval::{run_benchmark, BenchmarkReport, BenchmarkSpec, MetricsRow, Variant};
use crate::guidance::{replay_maps, run_baseline, run_guided, GuidanceConfig, RunResult};
use crate::io;
use crate::objective::{build_targets, clustering_loss_with, KlForm};

pub const OUT_ENV: &str = "COUNTCLUSTER_OUT";
const DEFAULT_OUT: &str = "countcluster-out";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn usage(e: impl fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "countcluster",
    version,
    about = "Object-count guidance on a toy attention generator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One guided (or baseline) trajectory with full artifacts.
    Run(RunArgs),
    /// Every variant x count x seed combination; writes runs.csv and summary.csv.
    Benchmark(BenchArgs),
    /// Guided vs the min-distance and k-scaling ablations, with deltas.
    Ablate(BenchArgs),
    /// Cluster a map CSV and dump clusters, targets and loss.
    Inspect(InspectArgs),
    /// Re-render a recorded run at chosen timesteps.
    ExportMaps(ExportArgs),
}

#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// Flat JSON config file; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (default: $COUNTCLUSTER_OUT, then ./countcluster-out).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Map side H.
    #[arg(long)]
    pub size: Option<usize>,
    /// Activation threshold.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Step size, one value or a comma list per guided timestep.
    #[arg(long)]
    pub alpha: Option<String>,
    /// Noise scale at t = 50.
    #[arg(long)]
    pub noise0: Option<f64>,
    /// Smallest component area counted as an object.
    #[arg(long)]
    pub min_area: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub k: Option<i64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Skip guidance updates.
    #[arg(long)]
    pub baseline: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Target counts, e.g. `2..10` or `2,4,6`.
    #[arg(long)]
    pub counts: Option<String>,
    /// Seeds, e.g. `0..9`.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Comma list of variants.
    #[arg(long)]
    pub variants: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Also write one final-map PGM per run under <out>/heatmaps.
    #[arg(long)]
    pub heatmaps: bool,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Map CSV: H lines of H comma-separated scores.
    pub map: PathBuf,
    #[arg(long)]
    pub k: Option<i64>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Directory written by `run`.
    pub run_dir: PathBuf,
    /// Timesteps to render, e.g. `50,45,40` or `0..50`.
    #[arg(long)]
    pub timesteps: Option<String>,
    /// Destination (default: <run_dir>/maps).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Flat config schema shared by the file layer and the replay record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<ListSpec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counts: Option<ListSpec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variants: Option<Vec<Variant>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slots: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<AlphaSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_area: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_refinement_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub member_policy: Option<MemberPolicy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl_form: Option<KlForm>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disable_min_distance: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub use_k_scaling: Option<bool>,
}

/// Either a JSON array or a string in list/range syntax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ListSpec<T> {
    Items(Vec<T>),
    Text(String),
}

impl<T: Copy + FromStr + TryFrom<u64>> ListSpec<T> {
    fn resolve(&self, what: &str) -> CliResult<Vec<T>> {
        match self {
            ListSpec::Items(v) => Ok(v.clone()),
            ListSpec::Text(s) => parse_list(s).map_err(|e| usage(format!("invalid {what}: {e}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    One(f64),
    Many(Vec<f64>),
}

impl AlphaSpec {
    fn into_vec(self) -> Vec<f64> {
        match self {
            AlphaSpec::One(a) => vec![a],
            AlphaSpec::Many(v) => v,
        }
    }
}

/// Parses `3`, `2..10` (inclusive) and comma lists mixing both.
pub fn parse_list<T: FromStr + TryFrom<u64>>(text: &str) -> Result<Vec<T>, String> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim) {
        if part.is_empty() {
            continue;
        }
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a
                .trim()
                .parse()
                .map_err(|_| format!("bad range start in '{part}'"))?;
            let b: u64 = b
                .trim()
                .parse()
                .map_err(|_| format!("bad range end in '{part}'"))?;
            if a > b {
                return Err(format!("empty range '{part}'"));
            }
            for v in a..=b {
                out.push(T::try_from(v).map_err(|_| format!("'{v}' out of range"))?);
            }
        } else {
            out.push(
                part.parse()
                    .map_err(|_| format!("'{part}' is not an integer"))?,
            );
        }
    }
    Ok(out)
}

fn parse_alpha(text: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("invalid value for --alpha: '{s}'")))
        })
        .collect()
}

fn parse_variants(text: &str) -> CliResult<Vec<Variant>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|e: Error| usage(format!("invalid value for --variants: {e}")))
        })
        .collect()
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub guidance: GuidanceConfig,
    pub sim: SimParams,
    pub seed: u64,
    pub counts: Vec<usize>,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub workers: usize,
    pub baseline: bool,
    pub out: PathBuf,
}

impl Default for Settings {
    fn default() -> Self {
        let bench = BenchmarkSpec::default();
        Self {
            guidance: GuidanceConfig::default(),
            sim: SimParams::default(),
            seed: 0,
            counts: bench.counts,
            seeds: bench.seeds,
            variants: bench.variants,
            workers: bench.workers,
            baseline: false,
            out: std::env::var_os(OUT_ENV)
                .map_or_else(|| PathBuf::from(DEFAULT_OUT), PathBuf::from),
        }
    }
}

impl Settings {
    pub fn apply_file(&mut self, f: FileConfig) -> CliResult<()> {
        let g = &mut self.guidance;
        if let Some(k) = f.k {
            g.k = k;
        }
        if let Some(v) = f.tau {
            g.tau = v;
        }
        if let Some(v) = f.alpha {
            g.alpha = v.into_vec();
        }
        if let Some(v) = f.min_area {
            g.min_area = v;
        }
        if let Some(v) = f.max_refinement_iters {
            g.max_refinement_iters = v;
        }
        if let Some(v) = f.epsilon {
            g.epsilon = v;
        }
        if let Some(v) = f.member_policy {
            g.member_policy = v;
        }
        if let Some(v) = f.kl_form {
            g.kl_form = v;
        }
        if let Some(v) = f.disable_min_distance {
            g.disable_min_distance = v;
        }
        if let Some(v) = f.use_k_scaling {
            g.use_k_scaling = v;
        }
        if let Some(v) = f.size {
            self.sim.size = v;
        }
        if let Some(v) = f.slots {
            self.sim.slots = v;
        }
        if let Some(v) = f.noise0 {
            self.sim.noise0 = v;
        }
        if let Some(v) = f.seed {
            self.seed = v;
        }
        if let Some(v) = f.seeds {
            self.seeds = v.resolve("seeds")?;
        }
        if let Some(v) = f.counts {
            self.counts = v.resolve("counts")?;
        }
        if let Some(v) = f.variants {
            self.variants = v;
        }
        if let Some(v) = f.workers {
            self.workers = v;
        }
        if let Some(v) = f.baseline {
            self.baseline = v;
        }
        if let Some(v) = f.out {
            self.out = v;
        }
        Ok(())
    }

    fn apply_common(&mut self, a: &CommonArgs) -> CliResult<()> {
        if let Some(v) = a.size {
            self.sim.size = v;
        }
        if let Some(v) = a.tau {
            self.guidance.tau = v;
        }
        if let Some(v) = &a.alpha {
            self.guidance.alpha = parse_alpha(v)?;
        }
        if let Some(v) = a.noise0 {
            self.sim.noise0 = v;
        }
        if let Some(v) = a.min_area {
            self.guidance.min_area = v;
        }
        if let Some(v) = &a.out {
            self.out = v.clone();
        }
        Ok(())
    }

    /// Loads defaults, then the config file named by `common.config`.
    fn layered(common: &CommonArgs) -> CliResult<Self> {
        let mut s = Self::default();
        if let Some(path) = &common.config {
            s.apply_file(read_config(path)?)?;
        }
        s.apply_common(common)?;
        Ok(s)
    }

    fn set_k(&mut self, k: Option<i64>) -> CliResult<()> {
        if let Some(k) = k {
            if k < 1 {
                return Err(usage(format!(
                    "invalid value for --k: {k} (must be at least 1)"
                )));
            }
            self.guidance.k = k as usize;
        }
        Ok(())
    }

    fn check_flags(&self) -> CliResult<()> {
        if self.guidance.k == 0 {
            return Err(usage("invalid value for --k: 0 (must be at least 1)"));
        }
        if !(self.guidance.tau > 0.0 && self.guidance.tau < 1.0) {
            return Err(usage(format!(
                "invalid value for --tau: {} (must lie in (0, 1))",
                self.guidance.tau
            )));
        }
        if self
            .guidance
            .alpha
            .iter()
            .any(|a| !(*a >= 0.0 && a.is_finite()))
        {
            return Err(usage(
                "invalid value for --alpha: entries must be finite and >= 0",
            ));
        }
        if !(self.sim.noise0 >= 0.0 && self.sim.noise0.is_finite()) {
            return Err(usage(format!(
                "invalid value for --noise0: {}",
                self.sim.noise0
            )));
        }
        if self.sim.size < crate::attention::MIN_SIDE {
            return Err(usage(format!(
                "invalid value for --size: {} (must be at least {})",
                self.sim.size,
                crate::attention::MIN_SIDE
            )));
        }
        if self.guidance.min_area == 0 {
            return Err(usage(
                "invalid value for --min-area: 0 (must be at least 1)",
            ));
        }
        self.guidance.validate().map_err(usage)?;
        self.sim.validate().map_err(usage)
    }

    /// The flat record `run` stores next to its artifacts so the run can be
    /// replayed.
    pub fn to_file_config(&self) -> FileConfig {
        let g = &self.guidance;
        FileConfig {
            k: Some(g.k),
            seed: Some(self.seed),
            size: Some(self.sim.size),
            slots: Some(self.sim.slots),
            tau: Some(g.tau),
            alpha: Some(AlphaSpec::Many(g.alpha.clone())),
            noise0: Some(self.sim.noise0),
            baseline: Some(self.baseline),
            min_area: Some(g.min_area),
            max_refinement_iters: Some(g.max_refinement_iters),
            epsilon: Some(g.epsilon),
            member_policy: Some(g.member_policy),
            kl_form: Some(g.kl_form),
            disable_min_distance: Some(g.disable_min_distance),
            use_k_scaling: Some(g.use_k_scaling),
            ..FileConfig::default()
        }
    }
}

pub fn read_config(path: &Path) -> CliResult<FileConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, contents)
        .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s
}

pub fn cmd_run(args: &RunArgs) -> CliResult<RunResult> {
    let mut s = Settings::layered(&args.common)?;
    s.set_k(args.k)?;
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    if args.baseline {
        s.baseline = true;
    }
    s.check_flags()?;

    let result = if s.baseline {
        run_baseline(s.seed, &s.guidance, &s.sim)
    } else {
        run_guided(s.seed, &s.guidance, &s.sim)
    }
    .map_err(runtime)?;

    create_dir(&s.out)?;
    write(&s.out.join("trajectory.jsonl"), result.trajectory_jsonl())?;
    write(&s.out.join("final.pgm"), io::map_to_pgm(result.final_map()))?;
    write(&s.out.join("final.csv"), io::map_to_csv(result.final_map()))?;
    write(&s.out.join("result.json"), to_json(&result))?;
    write(&s.out.join("config.json"), to_json(&s.to_file_config()))?;
    println!("target={} counted={}", result.target_count, result.counted);
    Ok(result)
}

fn bench_settings(args: &BenchArgs) -> CliResult<Settings> {
    let mut s = Settings::layered(&args.common)?;
    if let Some(v) = &args.counts {
        s.counts = parse_list(v).map_err(|e| usage(format!("invalid value for --counts: {e}")))?;
    }
    if let Some(v) = &args.seeds {
        s.seeds = parse_list(v).map_err(|e| usage(format!("invalid value for --seeds: {e}")))?;
    }
    if let Some(v) = &args.variants {
        s.variants = parse_variants(v)?;
    }
    if let Some(v) = args.workers {
        s.workers = v;
    }
    if s.variants.is_empty() {
        return Err(usage("invalid value for --variants: no variants given"));
    }
    if s.counts.is_empty() {
        return Err(usage("invalid value for --counts: no counts given"));
    }
    if s.seeds.is_empty() {
        return Err(usage("invalid value for --seeds: no seeds given"));
    }
    if s.workers == 0 {
        return Err(usage("invalid value for --workers: 0 (must be at least 1)"));
    }
    if let Some(&k) = s.counts.iter().find(|&&k| k == 0 || k > 10) {
        return Err(usage(format!(
            "invalid value for --counts: {k} (counts must lie in 1..10)"
        )));
    }
    s.guidance.k = s.counts[0];
    s.check_flags()?;
    Ok(s)
}

fn bench_spec(s: &Settings) -> BenchmarkSpec {
    BenchmarkSpec {
        counts: s.counts.clone(),
        seeds: s.seeds.clone(),
        variants: s.variants.clone(),
        sim: s.sim,
        guidance: s.guidance.clone(),
        workers: s.workers,
    }
}

fn execute_benchmark(s: &Settings, heatmaps: bool) -> CliResult<BenchmarkReport> {
    let report = run_benchmark(&bench_spec(s)).map_err(runtime)?;
    let hdir = s.out.join("heatmaps");
    report
        .write(&s.out, heatmaps.then_some(hdir.as_path()))
        .map_err(runtime)?;
    Ok(report)
}

fn fmt_metric(v: f64) -> String {
    if v.is_nan() {
        "-".into()
    } else {
        format!("{v:.3}")
    }
}

fn print_summary(rows: &[MetricsRow]) {
    println!(
        "{:<16} {:>4} {:>4} {:>8} {:>7} {:>7} {:>7} {:>7}",
        "variant", "k", "n", "accuracy", "mae", "rmse", "relax", "failed"
    );
    for r in rows {
        println!(
            "{:<16} {:>4} {:>4} {:>8} {:>7} {:>7} {:>7} {:>7}",
            r.variant.name(),
            r.k.map_or_else(|| "ALL".to_string(), |k| k.to_string()),
            r.n,
            fmt_metric(r.accuracy),
            fmt_metric(r.mae),
            fmt_metric(r.rmse),
            fmt_metric(r.mean_relaxations),
            fmt_metric(r.failure_rate),
        );
    }
}

pub fn cmd_benchmark(args: &BenchArgs) -> CliResult<BenchmarkReport> {
    let s = bench_settings(args)?;
    let report = execute_benchmark(&s, args.heatmaps)?;
    print_summary(&report.summary);
    Ok(report)
}

pub const ABLATION_VARIANTS: [Variant; 3] =
    [Variant::Guided, Variant::NoMinDistance, Variant::KScaling];

/// Summary rows with accuracy/mae/rmse deltas against the guided row of the
/// same k.
pub fn ablation_csv(report: &BenchmarkReport) -> String {
    let mut out = String::from(
        "variant,k,n,accuracy,mae,rmse,mean_relaxations,failure_rate,delta_accuracy,delta_mae,delta_rmse\n",
    );
    for r in &report.summary {
        let reference = report.summary_for(Variant::Guided, r.k);
        let delta = |f: fn(&MetricsRow) -> f64| reference.map_or(f64::NAN, |g| f(r) - f(g));
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.variant,
            r.k.map_or_else(|| "ALL".to_string(), |k| k.to_string()),
            r.n,
            r.accuracy,
            r.mae,
            r.rmse,
            r.mean_relaxations,
            r.failure_rate,
            delta(|m| m.accuracy),
            delta(|m| m.mae),
            delta(|m| m.rmse),
        ));
    }
    out
}

pub fn cmd_ablate(args: &BenchArgs) -> CliResult<BenchmarkReport> {
    if args.variants.is_some() {
        return Err(usage(
            "--variants is fixed for ablate (guided, no-min-distance, k-scaling)",
        ));
    }
    let mut s = bench_settings(args)?;
    s.variants = ABLATION_VARIANTS.to_vec();
    let report = execute_benchmark(&s, args.heatmaps)?;
    write(&s.out.join("ablation.csv"), ablation_csv(&report))?;
    let overall: Vec<MetricsRow> = report
        .summary
        .iter()
        .filter(|r| r.k.is_none())
        .cloned()
        .collect();
    print_summary(&overall);
    if let Some(g) = report.summary_for(Variant::Guided, None) {
        for r in overall.iter().filter(|r| r.variant != Variant::Guided) {
            println!(
                "delta {:<16} accuracy {:+.3}",
                r.variant.name(),
                r.accuracy - g.accuracy
            );
        }
    }
    Ok(report)
}

pub fn cmd_inspect(args: &InspectArgs) -> CliResult<()> {
    let mut s = Settings::layered(&args.common)?;
    s.set_k(args.k)?;
    s.check_flags()?;
    let raw = io::read_map_csv(&args.map).map_err(|e| match e {
        Error::Io(m) => usage(format!("cannot read {}: {m}", args.map.display())),
        other => usage(other),
    })?;
    let (map, _) = preprocess(&raw, &s.sim.smoothing).map_err(runtime)?;
    let clusters =
        build_cluster_set_with(&map, &s.guidance.cluster_options()).map_err(|e| match e {
            Error::MapTooSmall { .. } => usage(e),
            other => runtime(other),
        })?;
    let targets = build_targets(&clusters, s.guidance.tau).map_err(runtime)?;
    let loss = clustering_loss_with(&map, &clusters, &targets, &s.guidance.loss_config())
        .map_err(runtime)?;

    create_dir(&s.out)?;
    write(&s.out.join("clusters.json"), to_json(&clusters.dump()))?;
    write(&s.out.join("labels.csv"), clusters.labels_csv())?;
    write(&s.out.join("loss.json"), to_json(&loss))?;
    write(&s.out.join("normalized.pgm"), io::map_to_pgm(&map))?;
    for (i, t) in targets.iter().enumerate() {
        write(
            &s.out.join(format!("target_{i}.pgm")),
            io::grid_to_pgm(t.side(), t.values()),
        )?;
    }
    for (i, c) in clusters.centers.iter().enumerate() {
        println!(
            "cluster {i} center=({},{}) radius={:.4} kl={:.6}",
            c.row, c.col, clusters.radii[i], loss.per_cluster_kl[i]
        );
    }
    println!(
        "d={} relaxations={} total={:.6}",
        clusters.min_distance, clusters.relaxation_events, loss.total
    );
    Ok(())
}

pub fn cmd_export_maps(args: &ExportArgs) -> CliResult<Vec<PathBuf>> {
    let dir = &args.run_dir;
    for name in ["trajectory.jsonl", "result.json", "config.json"] {
        if !dir.join(name).is_file() {
            return Err(usage(format!("missing {} in {}", name, dir.display())));
        }
    }
    let timesteps: Vec<u32> = match &args.timesteps {
        Some(t) => {
            parse_list(t).map_err(|e| usage(format!("invalid value for --timesteps: {e}")))?
        }
        None => (0..=TOTAL_STEPS).rev().step_by(10).collect(),
    };
    if let Some(&t) = timesteps.iter().find(|&&t| t > TOTAL_STEPS) {
        return Err(usage(format!(
            "invalid value for --timesteps: {t} (must lie in 0..{TOTAL_STEPS})"
        )));
    }
    let text = std::fs::read_to_string(dir.join("result.json")).map_err(usage)?;
    let recorded: RunResult =
        serde_json::from_str(&text).map_err(|e| usage(format!("invalid result.json: {e}")))?;
    let mut s = Settings::default();
    s.apply_file(read_config(&dir.join("config.json"))?)?;
    s.check_flags()?;

    let maps = replay_maps(
        recorded.seed,
        &s.guidance,
        &s.sim,
        recorded.guided,
        &timesteps,
    )
    .map_err(runtime)?;
    let out = args.out.clone().unwrap_or_else(|| dir.join("maps"));
    create_dir(&out)?;
    let mut written = Vec::with_capacity(maps.len());
    for (t, map) in maps {
        let path = out.join(format!("t{t:02}.pgm"));
        write(&path, io::map_to_pgm(&map))?;
        written.push(path);
    }
    println!("wrote {} maps to {}", written.len(), out.display());
    Ok(written)
}

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Run(a) => cmd_run(a).map(drop),
        Command::Benchmark(a) => cmd_benchmark(a).map(drop),
        Command::Ablate(a) => cmd_ablate(a).map(drop),
        Command::Inspect(a) => cmd_inspect(a),
        Command::ExportMaps(a) => cmd_export_maps(a).map(drop),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

pub fn main() -> i32 {
    run_from(std::env::args_os())
}
