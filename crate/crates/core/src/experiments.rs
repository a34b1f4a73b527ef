//! Seeded multi-trial runner and CSV output.
//!
//! Every `(param, trial)` cell gets a seed derived with SplitMix64 from
//! `(base_seed, param index, trial index)`. All algorithms in a cell share
//! it: ChaCha8 stream 0 builds the instance (only the sphere setting draws
//! from it), stream 1 drives the rewards. Records come back sorted by
//! `(param index, algorithm, trial)` whatever the worker count.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{self, Instance, DEFAULT_OMEGA};
use crate::error::{Error, Result};
use crate::oracle::{self, AllocationResult, SolverMethod};
use crate::peleg::{self, PelegConfig, RunResult, Sampler};

pub const RECORD_HEADER: [&str; 9] = [
    "setting",
    "param",
    "algorithm",
    "trial",
    "seed",
    "tau",
    "success",
    "phases",
    "wall_time_ms",
];

pub const SUMMARY_HEADER: [&str; 7] = [
    "setting",
    "param",
    "algorithm",
    "mean_tau",
    "std_tau",
    "success_rate",
    "n_trials",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Canonical basis of R^5, gap swept.
    Standard,
    /// 100 random unit vectors, dimension swept.
    Sphere,
    /// Basis plus one confounding arm, dimension swept.
    Confound,
}

impl Setting {
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Standard => "standard",
            Setting::Sphere => "sphere",
            Setting::Confound => "confound",
        }
    }

    /// Sweep used when none is given. `full` extends the sphere sweep to d = 50.
    pub fn default_sweep(self, full: bool) -> Vec<f64> {
        match self {
            Setting::Standard => vec![0.1, 0.2, 0.3, 0.4, 0.5],
            Setting::Sphere if full => vec![10.0, 20.0, 30.0, 40.0, 50.0],
            Setting::Sphere => vec![10.0, 20.0],
            Setting::Confound => (2..=10).map(f64::from).collect(),
        }
    }
}

/// Zoomed gap window for the standard setting.
pub fn standard_zoom_sweep() -> Vec<f64> {
    vec![0.11, 0.13, 0.15, 0.17, 0.19]
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Setting::Standard),
            "sphere" => Ok(Setting::Sphere),
            "confound" => Ok(Setting::Confound),
            _ => Err(Error::InvalidParameter(format!("unknown setting `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Peleg,
    OracleBaseline,
    UniformStatic,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Peleg => "peleg",
            Algorithm::OracleBaseline => "oracle_baseline",
            Algorithm::UniformStatic => "uniform_static",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "peleg" => Ok(Algorithm::Peleg),
            "oracle_baseline" => Ok(Algorithm::OracleBaseline),
            "uniform_static" => Ok(Algorithm::UniformStatic),
            _ => Err(Error::InvalidParameter(format!("unknown algorithm `{s}`"))),
        }
    }
}

fn default_delta() -> f64 {
    0.1
}
fn default_trials() -> usize {
    50
}
fn default_algorithms() -> Vec<Algorithm> {
    vec![Algorithm::Peleg]
}
fn default_omega() -> f64 {
    DEFAULT_OMEGA
}
fn default_noise() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub setting: Setting,
    /// Gaps for `standard`, dimensions for `sphere` and `confound`.
    pub sweep: Vec<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    /// Confounder angle of the `confound` setting.
    #[serde(default = "default_omega")]
    pub omega: f64,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    #[serde(default)]
    pub use_ball: bool,
    /// Thread count; `None` uses the global rayon pool.
    #[serde(default)]
    pub workers: Option<usize>,
    /// Fill `wall_time_ms`. Off by default so output is byte-reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
    /// Overrides the per-phase round cap of the phased algorithms.
    #[serde(default)]
    pub max_rounds_per_phase: Option<u64>,
}

impl ExperimentSpec {
    pub fn new(setting: Setting, sweep: Vec<f64>) -> Self {
        Self {
            setting,
            sweep,
            delta: default_delta(),
            trials: default_trials(),
            base_seed: 0,
            algorithms: default_algorithms(),
            omega: default_omega(),
            noise_std: default_noise(),
            use_ball: false,
            workers: None,
            record_wall_time: false,
            max_rounds_per_phase: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        if self.sweep.is_empty() {
            return Err(Error::InvalidParameter("sweep must be nonempty".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::InvalidParameter("algorithms must be nonempty".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidParameter("workers must be at least 1".into()));
        }
        PelegConfig::with_delta(self.delta).validate()?;
        if self.setting != Setting::Standard {
            for &p in &self.sweep {
                if !(p >= 1.0 && p.fract() == 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "sweep value {p} is not a dimension"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn peleg_config(&self) -> PelegConfig {
        let base = PelegConfig::with_delta(self.delta);
        PelegConfig {
            use_ball: self.use_ball,
            max_rounds_per_phase: self.max_rounds_per_phase.unwrap_or(base.max_rounds_per_phase),
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub setting: Setting,
    pub param: f64,
    pub algorithm: Algorithm,
    pub trial: usize,
    pub seed: u64,
    pub tau: u64,
    pub success: bool,
    pub phases: usize,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub setting: Setting,
    pub param: f64,
    pub algorithm: Algorithm,
    pub mean_tau: f64,
    /// Population standard deviation.
    pub std_tau: f64,
    pub success_rate: f64,
    pub n_trials: usize,
}

/// A record plus the full run it came from. `result` is `None` when the run
/// hit a safety cap.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub record: TrialRecord,
    pub result: Option<RunResult>,
    pub error: Option<String>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of cell `(param_index, trial)`.
pub fn trial_seed(base_seed: u64, param_index: usize, trial: usize) -> u64 {
    let z = splitmix64(base_seed);
    let z = splitmix64(z ^ param_index as u64);
    splitmix64(z ^ trial as u64)
}

/// ChaCha8 generator for `seed` on stream `id` (0: instance, 1: rewards).
pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Instance of one cell.
pub fn build_instance(spec: &ExperimentSpec, param: f64, seed: u64) -> Result<Instance> {
    let inst = match spec.setting {
        Setting::Standard => env::make_setting1(param)?,
        Setting::Sphere => env::make_setting2(param as usize, &mut stream(seed, 0))?,
        Setting::Confound => env::make_setting3(param as usize, spec.omega)?,
    };
    inst.with_noise_std(spec.noise_std)
}

/// Same phases, stopping test and elimination as PELEG, but the arms are
/// pulled round-robin and `V` is rebuilt every phase.
pub fn uniform_static_run<R: rand::Rng + ?Sized>(
    inst: &Instance,
    cfg: &PelegConfig,
    rng: &mut R,
) -> Result<RunResult> {
    peleg::run_phases(inst, cfg, rng, None, Sampler::RoundRobin)
}

struct Job {
    param_index: usize,
    trial: usize,
    algorithm: Algorithm,
}

fn run_one(
    spec: &ExperimentSpec,
    job: &Job,
    shared_alloc: Option<&AllocationResult>,
) -> Result<TrialOutcome> {
    let param = spec.sweep[job.param_index];
    let seed = trial_seed(spec.base_seed, job.param_index, job.trial);
    let inst = build_instance(spec, param, seed)?;
    let cfg = spec.peleg_config();
    let mut rng = stream(seed, 1);
    let start = Instant::now();
    let outcome = match job.algorithm {
        Algorithm::Peleg => peleg::run(&inst, &cfg, &mut rng),
        Algorithm::UniformStatic => uniform_static_run(&inst, &cfg, &mut rng),
        Algorithm::OracleBaseline => match shared_alloc {
            Some(alloc) => oracle::oracle_baseline_with(&inst, spec.delta, alloc, &mut rng),
            None => oracle::oracle_baseline_run(&inst, spec.delta, &mut rng),
        },
    };
    let wall_time_ms = if spec.record_wall_time {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };
    let mut record = TrialRecord {
        setting: spec.setting,
        param,
        algorithm: job.algorithm,
        trial: job.trial,
        seed,
        tau: 0,
        success: false,
        phases: 0,
        wall_time_ms,
    };
    match outcome {
        Ok(res) => {
            let res = res.judge(&inst);
            record.tau = res.tau;
            record.success = res.success == Some(true);
            record.phases = res.phases();
            Ok(TrialOutcome {
                record,
                result: Some(res),
                error: None,
            })
        }
        Err(Error::NonTermination { reason, partial }) => {
            record.tau = partial.tau;
            record.phases = partial.phases();
            Ok(TrialOutcome {
                record,
                result: None,
                error: Some(reason),
            })
        }
        Err(e) => Err(e),
    }
}

/// Runs every `(param, algorithm, trial)` cell and keeps the full results.
pub fn run_experiment_detailed(spec: &ExperimentSpec) -> Result<Vec<TrialOutcome>> {
    spec.validate()?;
    let mut algorithms = spec.algorithms.clone();
    algorithms.sort();
    algorithms.dedup();

    // the baseline allocation only depends on the instance, which is fixed
    // per param outside the sphere setting
    let mut allocs: Vec<Option<AllocationResult>> = vec![None; spec.sweep.len()];
    if algorithms.contains(&Algorithm::OracleBaseline) && spec.setting != Setting::Sphere {
        for (i, &p) in spec.sweep.iter().enumerate() {
            let inst = build_instance(spec, p, 0)?;
            allocs[i] = Some(oracle::oracle_allocation(
                &inst,
                SolverMethod::GameSolver,
                oracle::DEFAULT_BUDGET,
            )?);
        }
    }

    let mut jobs = Vec::new();
    for param_index in 0..spec.sweep.len() {
        for &algorithm in &algorithms {
            for trial in 0..spec.trials {
                jobs.push(Job {
                    param_index,
                    trial,
                    algorithm,
                });
            }
        }
    }
    let work = || -> Result<Vec<TrialOutcome>> {
        jobs.par_iter()
            .map(|job| run_one(spec, job, allocs[job.param_index].as_ref()))
            .collect()
    };
    let mut out = match spec.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    let index_of = |p: f64| spec.sweep.iter().position(|&q| q == p).unwrap_or(usize::MAX);
    out.sort_by(|a, b| {
        let (a, b) = (&a.record, &b.record);
        (index_of(a.param), a.algorithm, a.trial).cmp(&(index_of(b.param), b.algorithm, b.trial))
    });
    Ok(out)
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<TrialRecord>> {
    Ok(run_experiment_detailed(spec)?
        .into_iter()
        .map(|o| o.record)
        .collect())
}

/// Per `(setting, param, algorithm)` cell, in order of first appearance.
pub fn aggregate(records: &[TrialRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::InvalidParameter("no records to aggregate".into()));
    }
    let mut cells: Vec<((Setting, f64, Algorithm), Vec<&TrialRecord>)> = Vec::new();
    for r in records {
        let key = (r.setting, r.param, r.algorithm);
        match cells.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => cells.push((key, vec![r])),
        }
    }
    Ok(cells
        .into_iter()
        .map(|((setting, param, algorithm), rs)| {
            let n = rs.len() as f64;
            let mean = rs.iter().map(|r| r.tau as f64).sum::<f64>() / n;
            let var = rs
                .iter()
                .map(|r| (r.tau as f64 - mean).powi(2))
                .sum::<f64>()
                / n;
            let successes = rs.iter().filter(|r| r.success).count();
            SummaryRow {
                setting,
                param,
                algorithm,
                mean_tau: mean,
                std_tau: var.sqrt(),
                success_rate: successes as f64 / n,
                n_trials: rs.len(),
            }
        })
        .collect())
}

pub fn write_records<W: Write>(out: W, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record([
            r.setting.to_string(),
            r.param.to_string(),
            r.algorithm.to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            r.tau.to_string(),
            u8::from(r.success).to_string(),
            r.phases.to_string(),
            r.wall_time_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.setting.to_string(),
            r.param.to_string(),
            r.algorithm.to_string(),
            r.mean_tau.to_string(),
            r.std_tau.to_string(),
            r.success_rate.to_string(),
            r.n_trials.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn field<'a>(row: &'a csv::StringRecord, i: usize, name: &str) -> Result<&'a str> {
    row.get(i)
        .ok_or_else(|| Error::InvalidParameter(format!("missing column `{name}`")))
}

fn parse<T: FromStr>(row: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let s = field(row, i, name)?;
    s.parse()
        .map_err(|_| Error::InvalidParameter(format!("bad value `{s}` in column `{name}`")))
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<TrialRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(RECORD_HEADER) {
        return Err(Error::InvalidParameter(format!(
            "unexpected header `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let success: u8 = parse(&row, 6, "success")?;
        if success > 1 {
            return Err(Error::InvalidParameter(format!("success = {success}")));
        }
        out.push(TrialRecord {
            setting: parse(&row, 0, "setting")?,
            param: parse(&row, 1, "param")?,
            algorithm: parse(&row, 2, "algorithm")?,
            trial: parse(&row, 3, "trial")?,
            seed: parse(&row, 4, "seed")?,
            tau: parse(&row, 5, "tau")?,
            success: success == 1,
            phases: parse(&row, 7, "phases")?,
            wall_time_ms: parse(&row, 8, "wall_time_ms")?,
        });
    }
    Ok(out)
}
