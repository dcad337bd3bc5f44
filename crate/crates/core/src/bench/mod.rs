//! Monte-Carlo campaign runner: a factor grid of source spaces, test cases,
//! noise levels, solvers, and reduction arms, with per-cell aggregation and
//! CSV/JSON/Markdown reports.
//!
//! Determinism contract: the RNG stream of a trial is keyed by the campaign
//! seed and the trial's (space, test case, trial) coordinates, never by
//! execution order, so a rerun with a different worker count produces
//! identical rows, and solvers, reduction arms, and noise levels are
//! compared on paired scenarios. Wall-clock time is kept on the in-memory
//! results but never serialized; report files of two runs with the same
//! config and seed are byte-identical.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::carss::{
    build_signatures, reduce_with_signatures, solve_reduced, CarssOptions, PeakSignature,
};
use crate::error::{Error, Result};
use crate::headmodel::{generate_sphere_leadfield, normalize_columns, SphereSpec};
use crate::metrics::{score_estimate, EstimateScores, EvaluationConfig};
use crate::model::{LeadField, NoiseKind, NoiseSpec};
use crate::parallel::{map_indexed, Parallelism};
use crate::rng::derive_seed;
use crate::simulate::{sample_scenario, simulate_measurements, ErpSpec, TestCaseSpec};
use crate::solvers::{solve, SolverSpec};

/// One source space in the campaign grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceSpec {
    /// Name used in result rows; derived from the sphere when empty.
    #[serde(default)]
    pub label: String,
    pub sphere: SphereSpec,
}

impl SpaceSpec {
    pub fn new(sphere: SphereSpec) -> Self {
        SpaceSpec {
            label: String::new(),
            sphere,
        }
    }

    pub fn resolved_label(&self) -> String {
        if !self.label.is_empty() {
            return self.label.clone();
        }
        format!(
            "sphere-r{}-g{}-dof{}",
            self.sphere.head_radius_mm, self.sphere.grid_spacing_mm, self.sphere.dof
        )
    }
}

/// Default campaign head. The shallow test-case shells sit at 90 mm and
/// beyond, which no source inside the 85 mm default head can reach, and
/// 14 mm spacing keeps the grid near two thousand sources.
pub fn campaign_sphere() -> SphereSpec {
    SphereSpec {
        head_radius_mm: 122.0,
        conductivity: 0.33,
        grid_spacing_mm: 14.0,
        n_electrodes: 64,
        cap_angle_deg: 120.0,
        dof: 1,
    }
}

/// Whether cells run the solution-space reduction, skip it, or both (paired).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CarssMode {
    #[default]
    Off,
    On,
    Both,
}

impl CarssMode {
    fn arms(self) -> &'static [bool] {
        match self {
            CarssMode::Off => &[false],
            CarssMode::On => &[true],
            CarssMode::Both => &[false, true],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    pub spaces: Vec<SpaceSpec>,
    pub solvers: Vec<SolverSpec>,
    pub test_cases: Vec<TestCaseSpec>,
    pub noise_levels: Vec<NoiseSpec>,
    /// Trials per cell.
    pub trials: usize,
    pub carss: CarssMode,
    pub carss_options: CarssOptions,
    pub erp: ErpSpec,
    /// Sampling rate of the simulated records, Hz.
    pub fs: f64,
    pub n_samples: usize,
    pub evaluation: EvaluationConfig,
    pub seed: u64,
    /// Report files land here; `None` keeps results in memory only. Read
    /// from configs but never serialized: where a run writes is not part of
    /// its identity, and embedding it would break byte-identical reruns
    /// that only moved the output directory.
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            spaces: vec![SpaceSpec::new(campaign_sphere())],
            solvers: vec![
                SolverSpec::Sloreta {
                    alpha: Default::default(),
                },
                SolverSpec::Mxne {
                    options: Default::default(),
                },
                SolverSpec::Sbl {
                    options: Default::default(),
                },
            ],
            test_cases: vec![TestCaseSpec::single_source(), TestCaseSpec::three_shallow()],
            noise_levels: vec![NoiseSpec::none()],
            trials: 30,
            carss: CarssMode::Off,
            carss_options: CarssOptions::default(),
            erp: ErpSpec::default(),
            fs: 30.0,
            n_samples: 30,
            evaluation: EvaluationConfig::default(),
            seed: 7,
            output_dir: None,
        }
    }
}

impl CampaignConfig {
    pub fn check(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("campaign needs at least one trial".to_string()));
        }
        if self.spaces.is_empty() {
            return Err(Error::Config("campaign needs at least one source space".to_string()));
        }
        if self.solvers.is_empty() {
            return Err(Error::Config("campaign needs at least one solver".to_string()));
        }
        if self.test_cases.is_empty() {
            return Err(Error::Config("campaign needs at least one test case".to_string()));
        }
        if self.noise_levels.is_empty() {
            return Err(Error::Config("campaign needs at least one noise level".to_string()));
        }
        if !(self.fs > 0.0) {
            return Err(Error::Config(format!("sampling rate must be positive, got {}", self.fs)));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("records need at least one sample".to_string()));
        }
        self.carss_options.check()?;
        Ok(())
    }
}

/// Stable name of a noise level, used in result rows ("none", "pink-1", ...).
pub fn noise_label(noise: &NoiseSpec) -> String {
    match noise.kind {
        NoiseKind::None => "none".to_string(),
        NoiseKind::White => format!("white-{}", noise.amplitude),
        NoiseKind::Pink => format!("pink-{}", noise.amplitude),
        NoiseKind::Brown => format!("brown-{}", noise.amplitude),
        NoiseKind::SensorPercent => format!("sensor-{}pct", noise.amplitude),
    }
}

/// Grid coordinates of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialTask {
    pub space: usize,
    pub test_case: usize,
    pub noise: usize,
    pub carss: bool,
    pub solver: usize,
    pub trial: usize,
}

impl TrialTask {
    /// Seed of the trial's scenario and noise draw. Solver, reduction, and
    /// noise coordinates are deliberately absent: every solver, both
    /// reduction arms, and all noise levels of a trial index share one
    /// scenario (noise levels also share the raw noise shape, scaled to
    /// their amplitude), so every cross-cell comparison is paired.
    pub fn seed(&self, campaign_seed: u64) -> u64 {
        derive_seed(
            campaign_seed,
            &[self.space as u64, self.test_case as u64, self.trial as u64],
        )
    }
}

/// Outcome of one trial. Metric fields are `None` on failed trials and when
/// the metric is undefined (no peak crossed the floor, all-zero estimate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub test_case: String,
    pub noise: String,
    pub space: String,
    pub carss: bool,
    pub solver: String,
    pub trial: usize,
    /// Seed that reproduces the scenario and noise draw.
    pub seed: u64,
    pub a_prime: Option<f64>,
    pub sr_mean: Option<f64>,
    /// Per-true-source hit flags; empty on failed trials.
    pub success_per_source: Vec<bool>,
    pub dle_mm: Option<f64>,
    pub sd_mm: Option<f64>,
    /// Size of the reduced support on reduction trials.
    pub reduced_to: Option<usize>,
    /// Milliseconds spent in the trial. Never serialized: report files must
    /// be byte-identical across reruns with the same config and seed.
    #[serde(skip)]
    pub wall_ms: f64,
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Mean, 95% confidence half-width, and sample count of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Student-t half-width; 0 for a single sample.
    pub ci95: f64,
    pub n: usize,
}

/// Arithmetic mean and Student-t 95% interval over `values`.
pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let ci95 = if n >= 2 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .expect("standard Student-t parameters are valid for n >= 2")
            .inverse_cdf(0.975);
        t * (var / n as f64).sqrt()
    } else {
        0.0
    };
    Some(Summary { mean, ci95, n })
}

/// Per-cell aggregate over the non-failed trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub test_case: String,
    pub noise: String,
    pub space: String,
    pub carss: bool,
    pub solver: String,
    pub trials: usize,
    pub failed: usize,
    pub a_prime: Option<Summary>,
    pub sr_mean: Option<Summary>,
    pub dle_mm: Option<Summary>,
    pub sd_mm: Option<Summary>,
    /// Mean kept-support size across reduction trials.
    pub reduced_to_mean: Option<f64>,
    /// Per-trial `with reduction - without reduction` difference in A-prime,
    /// present on reduction rows when the campaign ran both arms.
    pub a_prime_paired_delta: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResults {
    pub config: CampaignConfig,
    pub trials: Vec<TrialResult>,
    pub aggregates: Vec<AggregateRow>,
}

/// Lead field and reduction signatures shared by every trial on one space.
pub struct SpaceContext {
    pub label: String,
    pub lf: LeadField,
    pub signatures: Option<Vec<PeakSignature>>,
}

/// A checked campaign with its per-space state built.
pub struct Campaign {
    config: CampaignConfig,
    spaces: Vec<SpaceContext>,
}

impl Campaign {
    /// Checks the config and builds the per-space lead fields (column
    /// normalized) and, when any cell reduces, the peak signatures.
    pub fn new(config: CampaignConfig) -> Result<Self> {
        config.check()?;
        let wants_carss = config.carss != CarssMode::Off;
        let mut spaces = Vec::with_capacity(config.spaces.len());
        for spec in &config.spaces {
            let lf = normalize_columns(&generate_sphere_leadfield(&spec.sphere)?)?;
            let signatures = if wants_carss {
                Some(build_signatures(&lf)?)
            } else {
                None
            };
            spaces.push(SpaceContext {
                label: spec.resolved_label(),
                lf,
                signatures,
            });
        }
        Ok(Campaign { config, spaces })
    }

    pub fn config(&self) -> &CampaignConfig {
        &self.config
    }

    pub fn spaces(&self) -> &[SpaceContext] {
        &self.spaces
    }

    /// Every trial of the factor grid, in the row order of the reports:
    /// space, test case, noise, reduction arm, solver, trial.
    pub fn tasks(&self) -> Vec<TrialTask> {
        let c = &self.config;
        let mut tasks = Vec::new();
        for space in 0..c.spaces.len() {
            for test_case in 0..c.test_cases.len() {
                for noise in 0..c.noise_levels.len() {
                    for &carss in c.carss.arms() {
                        for solver in 0..c.solvers.len() {
                            for trial in 0..c.trials {
                                tasks.push(TrialTask {
                                    space,
                                    test_case,
                                    noise,
                                    carss,
                                    solver,
                                    trial,
                                });
                            }
                        }
                    }
                }
            }
        }
        tasks
    }

    /// Runs one trial. Deterministic given the task (and the campaign seed);
    /// solver failures are captured in the result, never propagated.
    pub fn run_trial(&self, task: &TrialTask) -> TrialResult {
        let space = &self.spaces[task.space];
        let case = &self.config.test_cases[task.test_case];
        let noise = self.config.noise_levels[task.noise];
        let solver = &self.config.solvers[task.solver];
        let seed = task.seed(self.config.seed);

        let start = Instant::now();
        let outcome = self.trial_body(space, case, noise, task.carss, solver, seed);
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;

        let mut row = TrialResult {
            test_case: case.name.clone(),
            noise: noise_label(&noise),
            space: space.label.clone(),
            carss: task.carss,
            solver: solver.name(),
            trial: task.trial,
            seed,
            a_prime: None,
            sr_mean: None,
            success_per_source: Vec::new(),
            dle_mm: None,
            sd_mm: None,
            reduced_to: None,
            wall_ms,
            failed: false,
            failure: None,
        };
        match outcome {
            Ok((scores, reduced_to)) => {
                row.a_prime = Some(scores.a_prime);
                row.sr_mean = Some(scores.sr_mean);
                row.success_per_source = scores.success_per_source;
                row.dle_mm = scores.dle_mm;
                row.sd_mm = scores.sd_mm;
                row.reduced_to = reduced_to;
            }
            Err(e) => {
                row.failed = true;
                row.failure = Some(e.to_string());
            }
        }
        row
    }

    fn trial_body(
        &self,
        space: &SpaceContext,
        case: &TestCaseSpec,
        noise: NoiseSpec,
        carss: bool,
        solver: &SolverSpec,
        seed: u64,
    ) -> Result<(EstimateScores, Option<usize>)> {
        let c = &self.config;
        let scenario = sample_scenario(
            case,
            &space.lf.source_space,
            &c.erp,
            c.fs,
            c.n_samples,
            noise,
            seed,
        )?;
        let y = simulate_measurements(&space.lf, &scenario)?;
        let (est, reduced_to) = if carss {
            let signatures = space.signatures.as_ref().ok_or_else(|| {
                Error::Config("reduction requested but signatures were not prepared".to_string())
            })?;
            let report = reduce_with_signatures(&space.lf, signatures, &y, &c.carss_options)?;
            let kept = report.kept.len();
            (solve_reduced(solver, &space.lf, &y, &report)?, Some(kept))
        } else {
            (solve(solver, &space.lf, &y)?, None)
        };
        let scores = score_estimate(
            &est.amplitudes,
            &scenario.active_indices,
            &space.lf.source_space,
            &c.evaluation,
        )?;
        Ok((scores, reduced_to))
    }

    /// Runs every trial (parallel across trials when asked) and aggregates.
    pub fn run(&self, parallelism: Parallelism) -> CampaignResults {
        let tasks = self.tasks();
        let trials = map_indexed(parallelism, tasks.len(), |i| self.run_trial(&tasks[i]));
        let aggregates = aggregate(&trials);
        CampaignResults {
            config: self.config.clone(),
            trials,
            aggregates,
        }
    }
}

/// Builds the campaign, runs it, and writes the reports when the config
/// names an output directory. The directory is probed for writability
/// before any trial runs.
pub fn run_campaign(config: &CampaignConfig, parallelism: Parallelism) -> Result<CampaignResults> {
    let campaign = Campaign::new(config.clone())?;
    if let Some(dir) = &config.output_dir {
        ensure_writable(dir)?;
    }
    let results = campaign.run(parallelism);
    if let Some(dir) = &config.output_dir {
        report(
            &results,
            &[ReportFormat::Csv, ReportFormat::Json, ReportFormat::Md],
            dir,
        )?;
    }
    Ok(results)
}

fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"")?;
    fs::remove_file(&probe)?;
    Ok(())
}

fn cell_key(r: &TrialResult) -> (String, String, String, bool, String) {
    (
        r.test_case.clone(),
        r.noise.clone(),
        r.space.clone(),
        r.carss,
        r.solver.clone(),
    )
}

/// Groups rows by cell (first-seen order) and aggregates the non-failed
/// trials: plain arithmetic means, so every number is re-derivable from the
/// per-trial rows, plus Student-t intervals and an explicit failure count.
pub fn aggregate(rows: &[TrialResult]) -> Vec<AggregateRow> {
    let mut order: Vec<(String, String, String, bool, String)> = Vec::new();
    let mut groups: HashMap<(String, String, String, bool, String), Vec<&TrialResult>> =
        HashMap::new();
    for r in rows {
        let key = cell_key(r);
        groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        groups.get_mut(&cell_key(r)).expect("group was just inserted").push(r);
    }

    let mut out = Vec::with_capacity(order.len());
    for key in &order {
        let members = &groups[key];
        let ok: Vec<&&TrialResult> = members.iter().filter(|r| !r.failed).collect();
        let failed = members.len() - ok.len();
        let collect = |f: &dyn Fn(&TrialResult) -> Option<f64>| -> Vec<f64> {
            ok.iter().filter_map(|r| f(r)).collect()
        };
        let a_prime = summarize(&collect(&|r| r.a_prime));
        let sr_mean = summarize(&collect(&|r| r.sr_mean));
        let dle_mm = summarize(&collect(&|r| r.dle_mm));
        let sd_mm = summarize(&collect(&|r| r.sd_mm));
        let reduced: Vec<f64> = collect(&|r| r.reduced_to.map(|v| v as f64));
        let reduced_to_mean = if reduced.is_empty() {
            None
        } else {
            Some(reduced.iter().sum::<f64>() / reduced.len() as f64)
        };

        let a_prime_paired_delta = if key.3 {
            let partner = (key.0.clone(), key.1.clone(), key.2.clone(), false, key.4.clone());
            groups.get(&partner).and_then(|base| {
                let by_trial: HashMap<usize, f64> = base
                    .iter()
                    .filter(|r| !r.failed)
                    .filter_map(|r| r.a_prime.map(|a| (r.trial, a)))
                    .collect();
                let diffs: Vec<f64> = ok
                    .iter()
                    .filter_map(|r| {
                        let with = r.a_prime?;
                        by_trial.get(&r.trial).map(|without| with - without)
                    })
                    .collect();
                summarize(&diffs)
            })
        } else {
            None
        };

        out.push(AggregateRow {
            test_case: key.0.clone(),
            noise: key.1.clone(),
            space: key.2.clone(),
            carss: key.3,
            solver: key.4.clone(),
            trials: members.len(),
            failed,
            a_prime,
            sr_mean,
            dle_mm,
            sd_mm,
            reduced_to_mean,
            a_prime_paired_delta,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Md,
}

impl ReportFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Csv => "trials.csv",
            ReportFormat::Json => "results.json",
            ReportFormat::Md => "summary.md",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "md" => Ok(ReportFormat::Md),
            other => Err(Error::Config(format!(
                "unknown report format {other:?} (expected csv, json, or md)"
            ))),
        }
    }
}

pub const CSV_HEADER: &str =
    "test_case,noise,space,carss,solver,trial,seed,a_prime,sr_mean,dle_mm,sd_mm,reduced_to,wall_ms,failed";

fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

fn on_off(carss: bool) -> &'static str {
    if carss {
        "on"
    } else {
        "off"
    }
}

/// Per-trial rows under [`CSV_HEADER`]. The `wall_ms` column is always
/// empty; see the module docs on byte-identical reruns.
pub fn render_csv(rows: &[TrialResult]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Config("cannot report an empty result set".to_string()));
    }
    let mut out = String::with_capacity(64 + rows.len() * 96);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},,{}",
            r.test_case,
            r.noise,
            r.space,
            on_off(r.carss),
            r.solver,
            r.trial,
            r.seed,
            opt(&r.a_prime),
            opt(&r.sr_mean),
            opt(&r.dle_mm),
            opt(&r.sd_mm),
            opt(&r.reduced_to),
            r.failed,
        )
        .expect("writing to a String cannot fail");
    }
    Ok(out)
}

/// Full results (config, per-trial rows with per-source hit vectors,
/// aggregates) as pretty JSON.
pub fn render_json(results: &CampaignResults) -> Result<String> {
    if results.trials.is_empty() {
        return Err(Error::Config("cannot report an empty result set".to_string()));
    }
    let mut text = serde_json::to_string_pretty(results)?;
    text.push('\n');
    Ok(text)
}

fn md_summary(s: &Option<Summary>, digits: usize) -> String {
    match s {
        Some(v) => format!("{:.d$} ± {:.d$}", v.mean, v.ci95, d = digits),
        None => "-".to_string(),
    }
}

/// One aggregate table per (space, test case), rows ordered as in the CSV.
pub fn render_markdown(results: &CampaignResults) -> Result<String> {
    if results.trials.is_empty() {
        return Err(Error::Config("cannot report an empty result set".to_string()));
    }
    let mut out = String::new();
    writeln!(out, "# Campaign summary").expect("writing to a String cannot fail");
    writeln!(out).expect("writing to a String cannot fail");
    writeln!(
        out,
        "Seed {}, {} trial(s) per cell. Intervals are Student-t 95% half-widths \
         over the non-failed trials of a cell.",
        results.config.seed, results.config.trials
    )
    .expect("writing to a String cannot fail");

    let mut seen: Vec<(String, String)> = Vec::new();
    for agg in &results.aggregates {
        let section = (agg.space.clone(), agg.test_case.clone());
        if !seen.contains(&section) {
            seen.push(section);
        }
    }
    for (space, test_case) in &seen {
        writeln!(out).expect("writing to a String cannot fail");
        writeln!(out, "## {test_case} on {space}").expect("writing to a String cannot fail");
        writeln!(out).expect("writing to a String cannot fail");
        writeln!(
            out,
            "| solver | reduction | noise | trials | failed | A' | SR | DLE mm | SD mm | kept | ΔA' paired |"
        )
        .expect("writing to a String cannot fail");
        writeln!(out, "|---|---|---|---|---|---|---|---|---|---|---|")
            .expect("writing to a String cannot fail");
        for agg in results
            .aggregates
            .iter()
            .filter(|a| &a.space == space && &a.test_case == test_case)
        {
            let kept = agg
                .reduced_to_mean
                .map(|v| format!("{v:.1}"))
                .unwrap_or_else(|| "-".to_string());
            let delta = agg
                .a_prime_paired_delta
                .map(|d| format!("{:+.3} ± {:.3}", d.mean, d.ci95))
                .unwrap_or_else(|| "-".to_string());
            writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                agg.solver,
                on_off(agg.carss),
                agg.noise,
                agg.trials,
                agg.failed,
                md_summary(&agg.a_prime, 3),
                md_summary(&agg.sr_mean, 3),
                md_summary(&agg.dle_mm, 1),
                md_summary(&agg.sd_mm, 1),
                kept,
                delta,
            )
            .expect("writing to a String cannot fail");
        }
    }
    Ok(out)
}

/// Writes the requested report files into `dir` and returns their paths.
/// Stable content: identical results render to identical bytes.
pub fn report(
    results: &CampaignResults,
    formats: &[ReportFormat],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    if results.trials.is_empty() {
        return Err(Error::Config("cannot report an empty result set".to_string()));
    }
    fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(formats.len());
    for format in formats {
        let text = match format {
            ReportFormat::Csv => render_csv(&results.trials)?,
            ReportFormat::Json => render_json(results)?,
            ReportFormat::Md => render_markdown(results)?,
        };
        let path = dir.join(format.file_name());
        fs::write(&path, text)?;
        paths.push(path);
    }
    Ok(paths)
}
