//! Seeded, parallel Monte Carlo sweeps over `(n, r)` with aggregation against the theory.
//!
//! A run plans one cell per intensity, runs `trials` independent trials per cell with
//! seeds `child_seed(master_seed, cell, trial)`, and reduces the trial records in
//! `(cell, trial)` order, so results do not depend on the thread count.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{DecayClass, DensitySpec};
use crate::error::{Error, Result};
use crate::graph::{connectivity_stats, IsolatedCount};
use crate::partition::{CubePartition, RegionMasses, DEFAULT_MC_SAMPLES};
use crate::sampler::{child_seed, norm, Sampler, DEFAULT_N_MAX};
use crate::theory::{self, ClassifyConstants, Prediction, ThresholdReport};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Share of failed trials above which a run is rejected.
pub const MAX_FAILURE_RATE: f64 = 0.01;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "RGG_THREADS";

/// How `r` depends on `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RSchedule {
    /// Constant radius.
    Fixed(f64),
    /// `c τ(n)`, superexponential decay only.
    TauMultiple(f64),
    /// `c / ψ'(ψ^←(ln n))`, any light tail.
    ExpMultiple(f64),
}

impl RSchedule {
    /// Radius before clipping to `(0, 1]`.
    pub fn raw_radius(&self, spec: &DensitySpec, n: f64) -> Result<f64> {
        match *self {
            RSchedule::Fixed(r) => Ok(r),
            RSchedule::TauMultiple(c) => Ok(c * theory::tau(spec, n)?),
            RSchedule::ExpMultiple(c) => Ok(c / theory::psi_prime_at_r0(spec, n)?),
        }
    }
}

fn default_probes() -> Vec<f64> {
    Vec::new()
}

/// A sweep over intensities for one density and radius schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub spec: DensitySpec,
    pub n_values: Vec<f64>,
    pub r_schedule: RSchedule,
    #[serde(default)]
    pub gamma: Option<f64>,
    pub trials: u32,
    pub master_seed: u64,
    /// Extra radii `R` at which isolated vertices inside `B(0, R)` are counted.
    #[serde(default = "default_probes")]
    pub probes: Vec<f64>,
    #[serde(default)]
    pub constants: ClassifyConstants,
    /// Monte Carlo samples per clipped cell of the concentration partition.
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
}

fn default_mc_samples() -> usize {
    DEFAULT_MC_SAMPLES
}

fn config_error(pointer: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        pointer: pointer.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn new(spec: DensitySpec, n_values: Vec<f64>, r_schedule: RSchedule, trials: u32, master_seed: u64) -> Self {
        ExperimentConfig {
            spec,
            n_values,
            r_schedule,
            gamma: None,
            trials,
            master_seed,
            probes: Vec::new(),
            constants: ClassifyConstants::default(),
            mc_samples: DEFAULT_MC_SAMPLES,
        }
    }

    /// Parses and validates a JSON document; errors carry the JSON pointer of the field.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = json_pointer(e.path());
            config_error(pointer, e.inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_reader<R: Read>(mut reader: R) -> Result<Self> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(config_error("/trials", "trials must be at least 1"));
        }
        if self.n_values.is_empty() {
            return Err(config_error("/n_values", "at least one intensity is required"));
        }
        for (i, &n) in self.n_values.iter().enumerate() {
            if !(n > 0.0 && n.is_finite()) {
                return Err(config_error(format!("/n_values/{i}"), format!("intensity must be positive and finite, got {n}")));
            }
        }
        let (tag, value) = match self.r_schedule {
            RSchedule::Fixed(r) => ("fixed", r),
            RSchedule::TauMultiple(c) => ("tau_multiple", c),
            RSchedule::ExpMultiple(c) => ("exp_multiple", c),
        };
        if !(value > 0.0 && value.is_finite()) {
            return Err(config_error(format!("/r_schedule/{tag}"), format!("must be positive and finite, got {value}")));
        }
        let needs_superexp = matches!(self.r_schedule, RSchedule::TauMultiple(_));
        let class = self.spec.decay_class();
        if needs_superexp && class != DecayClass::Superexponential {
            return Err(config_error("/r_schedule", format!("tau_multiple needs superexponential decay, density is {class}")));
        }
        if matches!(self.r_schedule, RSchedule::ExpMultiple(_)) && class == DecayClass::HeavyTail {
            return Err(config_error("/r_schedule", "exp_multiple needs a light-tail density"));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g < 1.0) {
                return Err(config_error("/gamma", format!("γ must lie in (0, 1), got {g}")));
            }
        }
        for (i, &p) in self.probes.iter().enumerate() {
            if !(p >= 0.0) {
                return Err(config_error(format!("/probes/{i}"), format!("probe radius must be non-negative, got {p}")));
            }
        }
        if self.mc_samples < 2 {
            return Err(config_error("/mc_samples", "need at least 2 samples"));
        }
        Ok(())
    }
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        let part = match seg {
            Segment::Seq { index } => index.to_string(),
            Segment::Map { key } => key.replace('~', "~0").replace('/', "~1"),
            Segment::Enum { variant } => variant.clone(),
            Segment::Unknown => continue,
        };
        out.push('/');
        out.push_str(&part);
    }
    out
}

/// `(lo, hi)` Wilson score interval at 95% for `k` successes in `m` trials.
pub fn wilson_interval(k: usize, m: usize) -> (f64, f64) {
    if m == 0 {
        return (0.0, 1.0);
    }
    let (k, m) = (k as f64, m as f64);
    let p = k / m;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / m;
    let centre = (p + z2 / (2.0 * m)) / denom;
    let half = Z95 * (p * (1.0 - p) / m + z2 / (4.0 * m * m)).sqrt() / denom;
    let lo = if k == 0.0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if k == m { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: usize,
    pub trials: usize,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl Proportion {
    pub fn new(successes: usize, trials: usize) -> Self {
        let (ci_lo, ci_hi) = wilson_interval(successes, trials);
        Proportion {
            successes,
            trials,
            estimate: if trials == 0 { 0.0 } else { successes as f64 / trials as f64 },
            ci_lo,
            ci_hi,
        }
    }

    /// Binomial standard error `sqrt(p (1 - p) / m)` at probability `p`.
    pub fn binomial_sigma(p: f64, trials: usize) -> f64 {
        (p * (1.0 - p) / trials as f64).sqrt()
    }
}

/// Everything a cell needs before its trials run.
#[derive(Debug, Clone)]
pub struct CellPlan {
    pub index: usize,
    pub n: f64,
    pub r: f64,
    pub r_unclipped: f64,
    pub clipped: bool,
    /// `r` grew relative to the previous cell although `n` did not shrink.
    pub r_increasing: bool,
    pub report: ThresholdReport,
    pub probes: Vec<f64>,
    pub concentration: Option<ConcentrationPlan>,
}

#[derive(Debug, Clone)]
pub struct ConcentrationPlan {
    pub gamma: f64,
    pub partition: CubePartition,
    pub masses: RegionMasses,
    /// `Σ_i 2 exp(-n ν(Q_i) γ² / 3)`.
    pub budget: f64,
}

impl CellPlan {
    /// Plans a single `(n, r)` cell; `r` is clipped to `(0, 1]`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        spec: &DensitySpec,
        index: usize,
        n: f64,
        r_unclipped: f64,
        gamma: Option<f64>,
        probes: &[f64],
        constants: ClassifyConstants,
        partition_seed: u64,
        mc_samples: usize,
    ) -> Result<Self> {
        if !(r_unclipped > 0.0 && r_unclipped.is_finite()) {
            return Err(Error::invalid(format!("radius must be positive and finite, got {r_unclipped}")));
        }
        let clipped = r_unclipped > 1.0;
        let r = r_unclipped.min(1.0);
        let superexp = spec.decay_class() == DecayClass::Superexponential;
        let report = theory::classify(spec, n, r, gamma.filter(|_| superexp), constants)?;
        let mut all_probes = vec![report.r0];
        all_probes.extend_from_slice(probes);
        let concentration = match (gamma, report.concentration_r0) {
            (Some(g), Some(big_r)) if big_r > 0.0 => {
                match CubePartition::build(spec.dimension(), big_r, g * r, partition_seed) {
                    Ok(partition) => {
                        let masses = partition.region_masses(spec, mc_samples)?;
                        let budget = masses
                            .nu
                            .iter()
                            .map(|nu| 2.0 * (-n * nu * g * g / 3.0).exp())
                            .sum();
                        Some(ConcentrationPlan {
                            gamma: g,
                            partition,
                            masses,
                            budget,
                        })
                    }
                    Err(Error::InsufficientResolution { .. }) => None,
                    Err(e) => return Err(e),
                }
            }
            _ => None,
        };
        Ok(CellPlan {
            index,
            n,
            r,
            r_unclipped,
            clipped,
            r_increasing: false,
            report,
            probes: all_probes,
            concentration,
        })
    }

    /// Runs one trial of this cell with an explicit seed.
    pub fn run_trial(&self, sampler: &Sampler, trial: u32, seed: u64) -> Result<TrialRecord> {
        let cloud = sampler.sample(self.n, seed)?;
        let stats = connectivity_stats(&cloud, self.r, &self.probes)?;
        let (r0, r1) = (self.report.r0, self.report.r1);
        let (mut beyond_r0, mut beyond_r1) = (0, 0);
        for p in cloud.points() {
            let rho = norm(p);
            beyond_r0 += usize::from(rho > r0);
            beyond_r1 += usize::from(rho > r1);
        }
        let concentration_violations = match &self.concentration {
            Some(c) => Some(c.partition.check_with_masses(&cloud, &c.masses, c.gamma)?.num_violations()),
            None => None,
        };
        let mut isolated = stats.isolated_within;
        let at_r0 = isolated.remove(0);
        Ok(TrialRecord {
            cell: self.index,
            trial,
            n: self.n,
            r: self.r,
            seed,
            point_count: cloud.len(),
            num_components: stats.num_components,
            is_connected: stats.is_connected,
            r_c: stats.r_c,
            r_max: stats.r_max,
            isolated_at_r0: at_r0.count,
            isolated,
            tail_points_beyond_r0: beyond_r0,
            tail_points_beyond_r1: beyond_r1,
            concentration_violations,
        })
    }
}

/// One trial's empirical counterparts of the theory's quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub cell: usize,
    pub trial: u32,
    pub n: f64,
    pub r: f64,
    pub seed: u64,
    pub point_count: usize,
    pub num_components: usize,
    pub is_connected: bool,
    pub r_c: f64,
    pub r_max: f64,
    /// Isolated vertices inside `B(0, R)` for each configured probe.
    pub isolated: Vec<IsolatedCount>,
    pub isolated_at_r0: usize,
    pub tail_points_beyond_r0: usize,
    pub tail_points_beyond_r1: usize,
    pub concentration_violations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub cell: usize,
    pub trial: u32,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationAggregate {
    pub gamma: f64,
    pub partition_radius: f64,
    pub side: f64,
    pub regions: usize,
    pub violations: usize,
    /// Violations per (trial, region).
    pub rate: f64,
    /// Chernoff bound on expected violations per trial.
    pub budget: f64,
    /// `budget / regions`, comparable with `rate`.
    pub budget_rate: f64,
}

/// Aggregates of one `(n, r)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAggregate {
    pub density: String,
    pub d: usize,
    pub n: f64,
    pub r: f64,
    pub r_unclipped: f64,
    pub clipped: bool,
    pub r_increasing: bool,
    pub trials: usize,
    pub failed: usize,
    pub p_disconnected: Proportion,
    pub p_rc_below_rmax: Proportion,
    /// No points beyond `R^(1)`.
    pub p_tail_empty: Proportion,
    /// No points beyond `R^(0)`.
    pub p_tail_empty_r0: Proportion,
    pub theory_tail_empty: f64,
    pub theory_tail_empty_r0: f64,
    pub mean_isolated: f64,
    pub expected_isolated: f64,
    pub mean_isolated_probes: Vec<IsolatedMean>,
    pub mean_points: f64,
    pub concentration: Option<ConcentrationAggregate>,
    pub prediction: Prediction,
    pub theory: ThresholdReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsolatedMean {
    pub radius: f64,
    pub mean: f64,
}

/// One line of the results CSV, in column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub density: String,
    pub d: usize,
    pub n: f64,
    pub r: f64,
    pub trials: usize,
    pub p_disconnected: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub p_tail_empty: f64,
    pub mean_isolated: f64,
    pub expected_isolated: f64,
    pub prediction: Prediction,
}

impl From<&CellAggregate> for CsvRow {
    fn from(a: &CellAggregate) -> Self {
        CsvRow {
            density: a.density.clone(),
            d: a.d,
            n: a.n,
            r: a.r,
            trials: a.trials,
            p_disconnected: a.p_disconnected.estimate,
            ci_lo: a.p_disconnected.ci_lo,
            ci_hi: a.p_disconnected.ci_hi,
            p_tail_empty: a.p_tail_empty.estimate,
            mean_isolated: a.mean_isolated,
            expected_isolated: a.expected_isolated,
            prediction: a.prediction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub cells: Vec<CellAggregate>,
    pub failures: Vec<TrialFailure>,
    #[serde(skip)]
    pub records: Vec<TrialRecord>,
}

impl RunReport {
    pub fn csv_rows(&self) -> Vec<CsvRow> {
        self.cells.iter().map(CsvRow::from).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_csv_rows(&self.csv_rows(), out)
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    /// Trial records, one JSON object per line, in `(cell, trial)` order.
    pub fn write_records<W: Write>(&self, mut out: W) -> Result<()> {
        for rec in &self.records {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub fn write_csv_rows<W: Write>(rows: &[CsvRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record([
            "density", "d", "n", "r", "trials", "p_disconnected", "ci_lo", "ci_hi",
            "p_tail_empty", "mean_isolated", "expected_isolated", "prediction",
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv_rows<R: Read>(input: R) -> Result<Vec<CsvRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for row in rdr.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<TrialRecord>> {
    let mut text = String::new();
    std::io::BufReader::new(input).read_to_string(&mut text)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Worker count from `RGG_THREADS`, else the machine's parallelism.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Theory and partitions for every cell of `config`.
pub fn plan(config: &ExperimentConfig) -> Result<Vec<CellPlan>> {
    config.validate()?;
    let mut plans: Vec<CellPlan> = Vec::with_capacity(config.n_values.len());
    for (index, &n) in config.n_values.iter().enumerate() {
        let raw = config.r_schedule.raw_radius(&config.spec, n)?;
        let partition_seed = child_seed(config.master_seed, index as u64, u32::MAX as u64);
        let mut cell = CellPlan::new(
            &config.spec,
            index,
            n,
            raw,
            config.gamma,
            &config.probes,
            config.constants,
            partition_seed,
            config.mc_samples,
        )?;
        if let Some(prev) = plans.last() {
            cell.r_increasing = n >= prev.n && cell.r_unclipped > prev.r_unclipped;
        }
        plans.push(cell);
    }
    Ok(plans)
}

fn sampler_for(config: &ExperimentConfig) -> Result<Sampler> {
    let n_max = config.n_values.iter().copied().fold(DEFAULT_N_MAX, f64::max);
    Sampler::with_n_max(config.spec.clone(), n_max)
}

/// Runs a sweep on [`thread_count`] workers.
pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    run_with_threads(config, thread_count())
}

/// Runs a sweep on exactly `threads` workers.
pub fn run_with_threads(config: &ExperimentConfig, threads: usize) -> Result<RunReport> {
    let plans = plan(config)?;
    let sampler = sampler_for(config)?;
    let jobs: Vec<(usize, u32)> = plans
        .iter()
        .flat_map(|p| (0..config.trials).map(move |t| (p.index, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let outcomes: Vec<std::result::Result<TrialRecord, TrialFailure>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(cell, trial)| {
                let seed = child_seed(config.master_seed, cell as u64, trial as u64);
                plans[cell].run_trial(&sampler, trial, seed).map_err(|e| TrialFailure {
                    cell,
                    trial,
                    seed,
                    message: e.to_string(),
                })
            })
            .collect()
    });
    let mut records = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => records.push(r),
            Err(f) => {
                log::warn!("trial {} of cell {} failed: {}", f.trial, f.cell, f.message);
                failures.push(f);
            }
        }
    }
    let total = jobs.len();
    if failures.len() as f64 > MAX_FAILURE_RATE * total as f64 {
        return Err(Error::numeric(format!(
            "{} of {total} trials failed; first: {}",
            failures.len(),
            failures[0].message
        )));
    }
    let cells = aggregate(config, &plans, &records, &failures);
    Ok(RunReport {
        config: config.clone(),
        cells,
        failures,
        records,
    })
}

/// Recomputes the aggregates of `config` from persisted records.
pub fn recompute(config: &ExperimentConfig, records: &[TrialRecord], failures: &[TrialFailure]) -> Result<Vec<CellAggregate>> {
    let plans = plan(config)?;
    let mut sorted = records.to_vec();
    sorted.sort_by_key(|r| (r.cell, r.trial));
    Ok(aggregate(config, &plans, &sorted, failures))
}

fn aggregate(
    config: &ExperimentConfig,
    plans: &[CellPlan],
    records: &[TrialRecord],
    failures: &[TrialFailure],
) -> Vec<CellAggregate> {
    plans
        .iter()
        .map(|plan| {
            let recs: Vec<&TrialRecord> = records.iter().filter(|r| r.cell == plan.index).collect();
            let m = recs.len();
            let count = |f: &dyn Fn(&TrialRecord) -> bool| recs.iter().filter(|r| f(r)).count();
            let mean = |f: &dyn Fn(&TrialRecord) -> f64| {
                if m == 0 {
                    0.0
                } else {
                    recs.iter().map(|r| f(r)).sum::<f64>() / m as f64
                }
            };
            let mean_isolated_probes = config
                .probes
                .iter()
                .enumerate()
                .map(|(k, &radius)| IsolatedMean {
                    radius,
                    mean: mean(&|r| r.isolated[k].count as f64),
                })
                .collect();
            let concentration = plan.concentration.as_ref().map(|c| {
                let regions = c.partition.num_regions();
                let violations: usize = recs.iter().map(|r| r.concentration_violations.unwrap_or(0)).sum();
                let slots = (m * regions).max(1);
                ConcentrationAggregate {
                    gamma: c.gamma,
                    partition_radius: c.partition.radius(),
                    side: c.partition.side(),
                    regions,
                    violations,
                    rate: violations as f64 / slots as f64,
                    budget: c.budget,
                    budget_rate: c.budget / regions as f64,
                }
            });
            let spec = &config.spec;
            CellAggregate {
                density: spec.label(),
                d: spec.dimension(),
                n: plan.n,
                r: plan.r,
                r_unclipped: plan.r_unclipped,
                clipped: plan.clipped,
                r_increasing: plan.r_increasing,
                trials: m,
                failed: failures.iter().filter(|f| f.cell == plan.index).count(),
                p_disconnected: Proportion::new(count(&|r| !r.is_connected), m),
                p_rc_below_rmax: Proportion::new(count(&|r| r.r_c < r.r_max), m),
                p_tail_empty: Proportion::new(count(&|r| r.tail_points_beyond_r1 == 0), m),
                p_tail_empty_r0: Proportion::new(count(&|r| r.tail_points_beyond_r0 == 0), m),
                theory_tail_empty: plan.report.tail_empty_prob,
                theory_tail_empty_r0: theory::tail_empty_prob(spec, plan.n, plan.report.r0).unwrap_or(f64::NAN),
                mean_isolated: mean(&|r| r.isolated_at_r0 as f64),
                expected_isolated: plan.report.expected_isolated,
                mean_isolated_probes,
                mean_points: mean(&|r| r.point_count as f64),
                concentration,
                prediction: plan.report.prediction,
                theory: plan.report.clone(),
            }
        })
        .collect()
}

/// A single trial outside a sweep, seeded directly with `seed`.
pub fn single_trial(
    spec: &DensitySpec,
    n: f64,
    r: f64,
    gamma: Option<f64>,
    probes: &[f64],
    seed: u64,
) -> Result<TrialRecord> {
    let plan = CellPlan::new(spec, 0, n, r, gamma, probes, ClassifyConstants::default(), seed, DEFAULT_MC_SAMPLES)?;
    let sampler = Sampler::with_n_max(spec.clone(), n.max(DEFAULT_N_MAX))?;
    plan.run_trial(&sampler, 0, seed)
}

/// A gnuplot script plotting disconnection frequency (with Wilson bars) and the
/// isolated-vertex comparison against `n`, one curve per `(density, d)`.
pub fn gnuplot_script(rows: &[CsvRow], csv_path: &str, output_stem: &str) -> String {
    let mut groups: Vec<(String, usize)> = Vec::new();
    for row in rows {
        let key = (row.density.clone(), row.d);
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    let filter = |density: &str, d: usize, col: &str| {
        format!("(strcol(1) eq \"{density}\" && $2 == {d} ? column(\"{col}\") : 1/0)")
    };
    let mut s = String::new();
    s.push_str("set datafile separator ','\n");
    s.push_str("set key autotitle columnhead\n");
    s.push_str("set logscale x\n");
    s.push_str("set xlabel 'n'\n");
    s.push_str("set terminal svg size 900,600\n");
    s.push_str(&format!("set output '{output_stem}_disconnected.svg'\n"));
    s.push_str("set ylabel 'P(disconnected)'\nset yrange [-0.05:1.05]\n");
    let plots: Vec<String> = groups
        .iter()
        .map(|(density, d)| {
            format!(
                "'{csv_path}' using 3:{}:{}:{} with yerrorlines title '{density} d={d}'",
                filter(density, *d, "p_disconnected"),
                filter(density, *d, "ci_lo"),
                filter(density, *d, "ci_hi"),
            )
        })
        .collect();
    if plots.is_empty() {
        s.push_str("# no rows\n");
        return s;
    }
    s.push_str(&format!("plot {}\n", plots.join(", \\\n     ")));
    s.push_str(&format!("set output '{output_stem}_isolated.svg'\n"));
    s.push_str("set ylabel 'isolated vertices in B(0, r0)'\nset autoscale y\nset logscale y\n");
    let plots: Vec<String> = groups
        .iter()
        .flat_map(|(density, d)| {
            [
                format!(
                    "'{csv_path}' using 3:{} with points title '{density} d={d} empirical'",
                    filter(density, *d, "mean_isolated")
                ),
                format!(
                    "'{csv_path}' using 3:{} with lines title '{density} d={d} theory'",
                    filter(density, *d, "expected_isolated")
                ),
            ]
        })
        .collect();
    s.push_str(&format!("plot {}\n", plots.join(", \\\n     ")));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::collections::HashSet;

    fn small_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::new(
            DensitySpec::gaussian(2).unwrap(),
            vec![100.0, 400.0],
            RSchedule::Fixed(0.3),
            6,
            42,
        );
        c.probes = vec![1.0];
        c
    }

    #[test]
    fn wilson_examples() {
        let (lo, hi) = wilson_interval(5, 10);
        assert!((lo - 0.2366).abs() < 1e-4 && (hi - 0.7634).abs() < 1e-4);
        let (lo, hi) = wilson_interval(0, 200);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.018_845).abs() < 1e-5);
        let (lo, hi) = wilson_interval(200, 200);
        assert_eq!(hi, 1.0);
        assert!((lo - 0.981_155).abs() < 1e-5);
        assert_eq!(wilson_interval(0, 0), (0.0, 1.0));
    }

    #[test]
    fn config_json_roundtrip_and_defaults() {
        let text = r#"{
            "spec": {"dimension": 2, "family": {"light_tail": {"v": 2.0}}},
            "n_values": [1000, 1e4],
            "r_schedule": {"tau_multiple": 0.2},
            "trials": 3,
            "master_seed": 9
        }"#;
        let c = ExperimentConfig::from_json_str(text).unwrap();
        assert_eq!(c.r_schedule, RSchedule::TauMultiple(0.2));
        assert_eq!(c.gamma, None);
        assert!(c.probes.is_empty());
        assert_eq!(c.constants, ClassifyConstants::default());
        let back = ExperimentConfig::from_json_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn config_errors_carry_json_pointers() {
        let cases = [
            (r#"{"spec":{"dimension":2,"family":{"light_tail":{"v":2}}},"n_values":[10,"x"],"r_schedule":{"fixed":0.5},"trials":1,"master_seed":1}"#, "/n_values/1"),
            (r#"{"spec":{"dimension":2,"family":{"heavy_tail":{"alpha":1.5}}},"n_values":[10],"r_schedule":{"fixed":0.5},"trials":1,"master_seed":1}"#, "/spec"),
            (r#"{"spec":{"dimension":2,"family":{"light_tail":{"v":2}}},"n_values":[10],"r_schedule":{"fixed":0.5},"trials":0,"master_seed":1}"#, "/trials"),
            (r#"{"spec":{"dimension":2,"family":{"light_tail":{"v":2}}},"n_values":[10],"r_schedule":{"fixed":-1},"trials":1,"master_seed":1}"#, "/r_schedule/fixed"),
            (r#"{"spec":{"dimension":2,"family":{"light_tail":{"v":2}}},"n_values":[10],"r_schedule":{"fixed":0.5},"trials":1,"master_seed":1,"gamma":2}"#, "/gamma"),
            (r#"{"spec":{"dimension":2,"family":{"light_tail":{"v":2}}},"n_values":[10],"r_schedule":{"fixed":0.5},"trials":1,"master_seed":1,"bogus":2}"#, "/bogus"),
            (r#"{"spec":{"dimension":2,"family":{"heavy_tail":{"alpha":4}}},"n_values":[10],"r_schedule":{"tau_multiple":0.5},"trials":1,"master_seed":1}"#, "/r_schedule"),
            (r#"{"spec":{"dimension":2,"family":{"light_tail":{"v":2}}},"n_values":[10],"r_schedule":{"fixed":0.5},"trials":1,"master_seed":1,"probes":[1,-2]}"#, "/probes/1"),
        ];
        for (text, pointer) in cases {
            match ExperimentConfig::from_json_str(text) {
                Err(Error::Config { pointer: p, .. }) => assert_eq!(p, pointer, "{text}"),
                other => panic!("expected config error for {text}, got {other:?}"),
            }
        }
    }

    #[test]
    fn schedules() {
        let g = DensitySpec::gaussian(2).unwrap();
        let n = 1e6;
        let tau = theory::tau(&g, n).unwrap();
        assert_relative_eq!(RSchedule::TauMultiple(0.2).raw_radius(&g, n).unwrap(), 0.2 * tau);
        let e = DensitySpec::light(2, 1.0, 2.0).unwrap();
        // ψ' = 1/scale for v = 1
        assert_relative_eq!(RSchedule::ExpMultiple(0.5).raw_radius(&e, n).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn clipping_is_flagged() {
        let mut c = small_config();
        c.r_schedule = RSchedule::Fixed(2.5);
        c.trials = 1;
        let rep = run_with_threads(&c, 1).unwrap();
        assert!(rep.cells.iter().all(|a| a.clipped && a.r == 1.0 && a.r_unclipped == 2.5));
    }

    #[test]
    fn increasing_tau_schedule_is_flagged() {
        let g = DensitySpec::gaussian(2).unwrap();
        // τ(n) rises for small n before decaying
        let ns = [20.0, 40.0, 1e6, 1e8];
        let taus: Vec<f64> = ns.iter().map(|&n| theory::tau(&g, n).unwrap()).collect();
        let mut c = ExperimentConfig::new(g, ns.to_vec(), RSchedule::TauMultiple(0.1), 1, 0);
        c.trials = 1;
        let plans = plan(&c).unwrap();
        for k in 1..ns.len() {
            assert_eq!(plans[k].r_increasing, taus[k] > taus[k - 1]);
        }
        assert!(plans.iter().any(|p| p.r_increasing));
        assert!(plans.iter().any(|p| !p.r_increasing));
    }

    #[test]
    fn deterministic_across_threads_and_reruns() {
        let c = small_config();
        let one = run_with_threads(&c, 1).unwrap();
        let again = run_with_threads(&c, 1).unwrap();
        let many = run_with_threads(&c, 4).unwrap();
        let csv = |r: &RunReport| {
            let mut buf = Vec::new();
            r.write_csv(&mut buf).unwrap();
            buf
        };
        assert_eq!(csv(&one), csv(&again));
        assert_eq!(csv(&one), csv(&many));
        assert_eq!(one.records, many.records);
    }

    #[test]
    fn csv_columns_and_roundtrip() {
        let rep = run_with_threads(&small_config(), 1).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "density,d,n,r,trials,p_disconnected,ci_lo,ci_hi,p_tail_empty,mean_isolated,expected_isolated,prediction"
        );
        assert_eq!(text.lines().count(), 3);
        assert_eq!(read_csv_rows(buf.as_slice()).unwrap(), rep.csv_rows());
        let mut empty = Vec::new();
        write_csv_rows(&[], &mut empty).unwrap();
        assert!(String::from_utf8(empty).unwrap().starts_with("density,d,n,"));
    }

    #[test]
    fn aggregates_recompute_from_persisted_records() {
        let mut c = small_config();
        c.n_values = vec![200.0, 2000.0];
        let rep = run_with_threads(&c, 2).unwrap();
        let mut buf = Vec::new();
        rep.write_records(&mut buf).unwrap();
        let mut records = read_records(buf.as_slice()).unwrap();
        records.reverse();
        let again = recompute(&c, &records, &rep.failures).unwrap();
        assert_eq!(again, rep.cells);
    }

    #[test]
    fn records_respect_invariants() {
        let rep = run_with_threads(&small_config(), 1).unwrap();
        assert_eq!(rep.records.len(), 12);
        for r in &rep.records {
            assert!(r.r_c <= r.r_max);
            assert_eq!(r.seed, child_seed(42, r.cell as u64, r.trial as u64));
            assert_eq!(r.isolated.len(), 1);
            assert!(r.tail_points_beyond_r1 <= r.point_count);
        }
    }

    #[test]
    fn huge_radius_never_disconnects() {
        // all points of a scale-0.05 Gaussian cloud lie within distance 1 of each other
        let spec = DensitySpec::light(2, 2.0, 0.05).unwrap();
        let c = ExperimentConfig::new(spec, vec![50.0, 500.0], RSchedule::Fixed(1.0), 20, 3);
        let rep = run_with_threads(&c, 1).unwrap();
        for a in &rep.cells {
            assert_eq!(a.p_disconnected.estimate, 0.0);
            assert_eq!(a.p_disconnected.successes, 0);
        }
    }

    #[test]
    fn concentration_cells_are_checked() {
        let mut c = ExperimentConfig::new(
            DensitySpec::gaussian(2).unwrap(),
            vec![1e4],
            RSchedule::TauMultiple(5.0),
            3,
            1,
        );
        c.gamma = Some(0.5);
        c.mc_samples = 2000;
        let rep = run_with_threads(&c, 1).unwrap();
        let conc = rep.cells[0].concentration.as_ref().expect("partition planned");
        assert!(conc.regions > 0);
        assert!(rep.records.iter().all(|r| r.concentration_violations.is_some()));
        assert!(conc.budget_rate <= 2.0);
    }

    #[test]
    fn failure_budget() {
        let c = small_config();
        let plans = plan(&c).unwrap();
        let failures = vec![TrialFailure { cell: 0, trial: 0, seed: 1, message: "x".into() }];
        let agg = aggregate(&c, &plans, &[], &failures);
        assert_eq!(agg[0].failed, 1);
        assert_eq!(agg[0].trials, 0);
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let mut seen = HashSet::with_capacity(1 << 20);
        for cell in 0..1000u64 {
            for trial in 0..1000u64 {
                assert!(seen.insert(child_seed(7, cell, trial)));
            }
        }
    }

    #[test]
    fn thread_env_is_read() {
        // RGG_THREADS is process-global; only check the default path is sane
        assert!(thread_count() >= 1);
    }

    #[test]
    fn gnuplot_mentions_every_group() {
        let rep = run_with_threads(&small_config(), 1).unwrap();
        let script = gnuplot_script(&rep.csv_rows(), "results.csv", "out");
        assert!(script.contains("set datafile separator ','"));
        assert!(script.contains("gaussian d=2"));
        assert!(script.contains("out_disconnected.svg"));
        assert!(gnuplot_script(&[], "r.csv", "o").contains("no rows"));
    }

    #[test]
    fn single_trial_is_reproducible() {
        let spec = DensitySpec::heavy(2, 4.0).unwrap();
        let a = single_trial(&spec, 1e3, 1.0, None, &[], 7).unwrap();
        let b = single_trial(&spec, 1e3, 1.0, None, &[], 7).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.seed, 7);
    }
}
