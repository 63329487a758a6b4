//! Counting oracle, count metrics, and the benchmark harness.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::AttentionMap;
use crate::blobsim::SimParams;
use crate::clustering::MemberPolicy;
use crate::error::{Error, Result};
use crate::guidance::{run_baseline, run_guided, ClusterAudit, GuidanceConfig, RunResult};
use crate::io;
use crate::objective::KlForm;

/// Number of 8-connected components of `{x : score(x) >= tau}` whose area is at
/// least `min_area`.
pub fn count_components(map: &AttentionMap, tau: f64, min_area: usize) -> usize {
    let side = map.side();
    let active: Vec<bool> = map.scores().iter().map(|&s| s >= tau).collect();
    let mut seen = vec![false; active.len()];
    let mut queue = VecDeque::new();
    let mut count = 0;
    for start in 0..active.len() {
        if !active[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut area = 0;
        while let Some(i) = queue.pop_front() {
            area += 1;
            let (r, c) = ((i / side) as isize, (i % side) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= side as isize || nc >= side as isize {
                        continue;
                    }
                    let j = nr as usize * side + nc as usize;
                    if active[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        if area >= min_area {
            count += 1;
        }
    }
    count
}

fn check_lengths(targets: &[usize], predictions: &[usize]) -> Result<()> {
    if targets.len() != predictions.len() || targets.is_empty() {
        return Err(Error::LengthMismatch(targets.len(), predictions.len()));
    }
    Ok(())
}

/// Fraction of exact matches.
pub fn accuracy(targets: &[usize], predictions: &[usize]) -> Result<f64> {
    check_lengths(targets, predictions)?;
    let hits = targets
        .iter()
        .zip(predictions)
        .filter(|(y, p)| y == p)
        .count();
    Ok(hits as f64 / targets.len() as f64)
}

pub fn mae(targets: &[usize], predictions: &[usize]) -> Result<f64> {
    check_lengths(targets, predictions)?;
    let s: f64 = targets
        .iter()
        .zip(predictions)
        .map(|(&y, &p)| y.abs_diff(p) as f64)
        .sum();
    Ok(s / targets.len() as f64)
}

pub fn rmse(targets: &[usize], predictions: &[usize]) -> Result<f64> {
    check_lengths(targets, predictions)?;
    let s: f64 = targets
        .iter()
        .zip(predictions)
        .map(|(&y, &p)| (y.abs_diff(p) as f64).powi(2))
        .sum();
    Ok((s / targets.len() as f64).sqrt())
}

/// Benchmark arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Guided,
    Baseline,
    NoMinDistance,
    KScaling,
    /// Loss restricted to activated patches.
    ActivatedOnly,
    /// Per-cluster simplex-normalized KL.
    SimplexKl,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Guided,
        Variant::Baseline,
        Variant::NoMinDistance,
        Variant::KScaling,
        Variant::ActivatedOnly,
        Variant::SimplexKl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Guided => "guided",
            Variant::Baseline => "baseline",
            Variant::NoMinDistance => "no-min-distance",
            Variant::KScaling => "k-scaling",
            Variant::ActivatedOnly => "activated-only",
            Variant::SimplexKl => "simplex-kl",
        }
    }

    /// Applies this arm's switches to a base configuration.
    pub fn configure(self, base: &GuidanceConfig) -> GuidanceConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Guided | Variant::Baseline => {}
            Variant::NoMinDistance => cfg.disable_min_distance = true,
            Variant::KScaling => cfg.use_k_scaling = true,
            Variant::ActivatedOnly => cfg.member_policy = MemberPolicy::ActivatedOnly,
            Variant::SimplexKl => cfg.kl_form = KlForm::Simplex,
        }
        cfg
    }

    pub fn run(self, seed: u64, base: &GuidanceConfig, sim: &SimParams) -> Result<RunResult> {
        let cfg = self.configure(base);
        match self {
            Variant::Baseline => run_baseline(seed, &cfg, sim),
            _ => run_guided(seed, &cfg, sim),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown variant '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub counts: Vec<usize>,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub sim: SimParams,
    /// Shared guidance settings; `k` is overwritten per run.
    pub guidance: GuidanceConfig,
    pub workers: usize,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            counts: (2..=10).collect(),
            seeds: (0..=9).collect(),
            variants: vec![
                Variant::Guided,
                Variant::Baseline,
                Variant::NoMinDistance,
                Variant::KScaling,
            ],
            sim: SimParams::default(),
            guidance: GuidanceConfig::default(),
            workers: 1,
        }
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.counts.is_empty() || self.seeds.is_empty() || self.variants.is_empty() {
            return Err(Error::InvalidParameter(
                "counts, seeds and variants must be non-empty".into(),
            ));
        }
        if let Some(&k) = self.counts.iter().find(|&&k| k == 0 || k > 10) {
            return Err(Error::InvalidCount(k));
        }
        if self.workers == 0 {
            return Err(Error::InvalidParameter("workers must be positive".into()));
        }
        self.sim.validate()?;
        let mut probe = self.guidance.clone();
        probe.k = self.counts[0];
        probe.validate()
    }

    pub fn run_count(&self) -> usize {
        self.counts.len() * self.seeds.len() * self.variants.len()
    }
}

/// One row of the per-run CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRow {
    pub variant: Variant,
    pub k: usize,
    pub seed: u64,
    pub counted: Option<usize>,
    pub loss_final: Option<f64>,
    pub relaxations_total: u32,
    pub refine_iters_t50: Option<usize>,
    pub refine_iters_t40: Option<usize>,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub variant: Variant,
    /// `None` for the per-variant aggregate row.
    pub k: Option<usize>,
    pub n: usize,
    pub accuracy: f64,
    pub mae: f64,
    pub rmse: f64,
    pub mean_relaxations: f64,
    pub failure_rate: f64,
}

/// Output of a benchmark, ordered by (variant, k, seed) as listed in the
/// [`BenchmarkSpec`].
#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub runs: Vec<RunRow>,
    pub summary: Vec<MetricsRow>,
    /// Cluster sets built by each run, aligned with `runs`.
    pub audits: Vec<Vec<ClusterAudit>>,
    /// Final normalized maps, aligned with `runs` (None for failures).
    pub final_maps: Vec<Option<AttentionMap>>,
}

impl BenchmarkReport {
    pub fn summary_for(&self, variant: Variant, k: Option<usize>) -> Option<&MetricsRow> {
        self.summary
            .iter()
            .find(|r| r.variant == variant && r.k == k)
    }

    pub fn runs_csv(&self) -> String {
        let mut out = String::from(
            "variant,k,seed,counted,loss_final,relaxations_total,refine_iters_t50,refine_iters_t40,failed\n",
        );
        for r in &self.runs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.variant,
                r.k,
                r.seed,
                opt(r.counted),
                opt(r.loss_final),
                r.relaxations_total,
                opt(r.refine_iters_t50),
                opt(r.refine_iters_t40),
                r.failed
            ));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("variant,k,n,accuracy,mae,rmse,mean_relaxations,failure_rate\n");
        for r in &self.summary {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.variant,
                r.k.map_or_else(|| "ALL".to_string(), |k| k.to_string()),
                r.n,
                r.accuracy,
                r.mae,
                r.rmse,
                r.mean_relaxations,
                r.failure_rate
            ));
        }
        out
    }

    /// Writes `runs.csv` and `summary.csv` into `dir`, plus one PGM per run in
    /// `heatmaps` when given.
    pub fn write(&self, dir: &Path, heatmaps: Option<&Path>) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("runs.csv"), self.runs_csv())?;
        std::fs::write(dir.join("summary.csv"), self.summary_csv())?;
        if let Some(hdir) = heatmaps {
            std::fs::create_dir_all(hdir)?;
            for (row, map) in self.runs.iter().zip(&self.final_maps) {
                if let Some(m) = map {
                    let name = format!("{}_{}_{}.pgm", row.variant, row.k, row.seed);
                    std::fs::write(hdir.join(name), io::map_to_pgm(m))?;
                }
            }
        }
        Ok(())
    }
}

fn opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn aggregate(variant: Variant, k: Option<usize>, rows: &[&RunRow]) -> MetricsRow {
    let ok: Vec<&&RunRow> = rows.iter().filter(|r| !r.failed).collect();
    let targets: Vec<usize> = ok.iter().map(|r| r.k).collect();
    let preds: Vec<usize> = ok.iter().map(|r| r.counted.unwrap_or(0)).collect();
    let metric = |f: fn(&[usize], &[usize]) -> Result<f64>| f(&targets, &preds).unwrap_or(f64::NAN);
    let mean_relaxations = if rows.is_empty() {
        f64::NAN
    } else {
        rows.iter().map(|r| r.relaxations_total as f64).sum::<f64>() / rows.len() as f64
    };
    MetricsRow {
        variant,
        k,
        n: ok.len(),
        accuracy: metric(accuracy),
        mae: metric(mae),
        rmse: metric(rmse),
        mean_relaxations,
        failure_rate: if rows.is_empty() {
            f64::NAN
        } else {
            (rows.len() - ok.len()) as f64 / rows.len() as f64
        },
    }
}

/// Runs every (variant, k, seed) combination on a pool of `spec.workers`
/// threads and aggregates in job order.
pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<BenchmarkReport> {
    spec.validate()?;
    let jobs: Vec<(Variant, usize, u64)> = spec
        .variants
        .iter()
        .flat_map(|&v| {
            spec.counts
                .iter()
                .flat_map(move |&k| spec.seeds.iter().map(move |&s| (v, k, s)))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let results: Vec<Result<RunResult>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(v, k, seed)| {
                let base = GuidanceConfig {
                    k,
                    ..spec.guidance.clone()
                };
                v.run(seed, &base, &spec.sim)
            })
            .collect()
    });

    let mut runs = Vec::with_capacity(jobs.len());
    let mut audits = Vec::with_capacity(jobs.len());
    let mut final_maps = Vec::with_capacity(jobs.len());
    for (&(variant, k, seed), res) in jobs.iter().zip(results) {
        match res {
            Ok(r) => {
                runs.push(RunRow {
                    variant,
                    k,
                    seed,
                    counted: Some(r.counted),
                    loss_final: r.loss_final,
                    relaxations_total: r.relaxations_total,
                    refine_iters_t50: r.refine_iters_t50,
                    refine_iters_t40: r.refine_iters_t40,
                    failed: false,
                });
                audits.push(r.cluster_audit);
                final_maps.push(r.final_map);
            }
            Err(_) => {
                runs.push(RunRow {
                    variant,
                    k,
                    seed,
                    counted: None,
                    loss_final: None,
                    relaxations_total: 0,
                    refine_iters_t50: None,
                    refine_iters_t40: None,
                    failed: true,
                });
                audits.push(Vec::new());
                final_maps.push(None);
            }
        }
    }

    let mut summary = Vec::new();
    for &v in &spec.variants {
        for &k in &spec.counts {
            let rows: Vec<&RunRow> = runs.iter().filter(|r| r.variant == v && r.k == k).collect();
            summary.push(aggregate(v, Some(k), &rows));
        }
        let rows: Vec<&RunRow> = runs.iter().filter(|r| r.variant == v).collect();
        summary.push(aggregate(v, None, &rows));
    }
    Ok(BenchmarkReport {
        runs,
        summary,
        audits,
        final_maps,
    })
}
