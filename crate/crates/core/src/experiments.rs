//! Experiment harness: configuration, scenario placement, running every
//! scheme on the same population, and CSV output.
//!
//! Config files are flat `key = value` lines; `#` starts a comment. Keys:
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `lambda_a` | job arrival rate per user (jobs/s) | 0.01 |
//! | `L_a` | input size (bytes) | 100e3 |
//! | `B_a` | processing density (cycles/bit) | 8250 |
//! | `f_m`, `f_B` | device / edge CPU speed (cycles/s) | 0.5e9, 3e9 |
//! | `kappa_m` | device energy coefficient | 1e-27 |
//! | `P_tr` | transmit power (W) | 0.1 |
//! | `sigma2` | noise power (W) | 1e-7 |
//! | `alpha` | path-loss exponent | 3.5 |
//! | `W` | bandwidth (Hz) | 360e3 |
//! | `tx_scale` | upload-time multiplier | 1 |
//! | `n_users`, `n_high` | population, users in the high-weight group | 100, n/2 |
//! | `r_min`, `r_max` | placement ring radii (m) | 10, 75 |
//! | `c_H_d`, `c_L_d` | delay weights | 0.9, 0.1 |
//! | `c_H_e`, `c_L_e` | energy weights | 1 - delay weight |
//! | `seed` | placement seed | 7 |
//! | `schemes` | comma list of scheme names | all |
//! | `out` | output directory | `results` |
//! | `epsilon`, `varsigma` | learning stop threshold, offset (s) | 0.01, 1e-6 |
//! | `oracle` | `analytic` or `simulated` | analytic |
//! | `sim_seed`, `sim_horizon`, `sim_replications` | simulated-oracle knobs | 1, 200000, 5 |
//! | `solver_tol`, `solver_damping`, `solver_max_iter` | fixed-point knobs | 1e-8, 0.5, 10000 |

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, EquilibriumOutcome, SystemParams, UserProfile};
use crate::pricing::{self, CongestionOracle, LearningConfig, LearningTrace};
use crate::queue_sim::{MeasureConfig, SimConfig, SimReport};
use crate::solvers::{self, Scenario, SolverConfig};

pub const DEFAULT_PLACEMENT_SEED: u64 = 7;

/// Distances at which utility curves are tabulated.
pub const UTILITY_CURVE_DISTANCES: [f64; 3] = [10.0, 50.0, 70.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    PriorityLearned,
    PrioritySocial,
    SocialSingle,
    SelfishSingle,
    LocalOnly,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::PriorityLearned,
        Scheme::PrioritySocial,
        Scheme::SocialSingle,
        Scheme::SelfishSingle,
        Scheme::LocalOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::PriorityLearned => "priority-learned",
            Scheme::PrioritySocial => "priority-social",
            Scheme::SocialSingle => "social-single",
            Scheme::SelfishSingle => "selfish-single",
            Scheme::LocalOnly => "local-only",
        }
    }

    pub fn is_priority(self) -> bool {
        matches!(self, Scheme::PriorityLearned | Scheme::PrioritySocial)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown scheme '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub params: SystemParams,
    pub n_users: usize,
    /// Users `0..n_high` get the high delay weight; `None` means half.
    pub n_high: Option<usize>,
    pub r_min: f64,
    pub r_max: f64,
    pub c_d_high: f64,
    pub c_d_low: f64,
    /// `None` pairs the energy weight as `1 - c_d`.
    pub c_e_high: Option<f64>,
    pub c_e_low: Option<f64>,
    pub placement_seed: u64,
    pub schemes: Vec<Scheme>,
    pub out_dir: PathBuf,
    pub solver: SolverConfig,
    pub learning: LearningConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            params: SystemParams::table2(),
            n_users: 100,
            n_high: None,
            r_min: 10.0,
            r_max: 75.0,
            c_d_high: 0.9,
            c_d_low: 0.1,
            c_e_high: None,
            c_e_low: None,
            placement_seed: DEFAULT_PLACEMENT_SEED,
            schemes: Scheme::ALL.to_vec(),
            out_dir: PathBuf::from("results"),
            solver: SolverConfig::default(),
            learning: LearningConfig::default(),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let p = &mut self.params;
        match key {
            "lambda_a" => p.lambda_a = parse_num(key, value)?,
            "L_a" => p.l_a = parse_num(key, value)?,
            "B_a" => p.b_a = parse_num(key, value)?,
            "f_m" => p.f_m = parse_num(key, value)?,
            "f_B" => p.f_b = parse_num(key, value)?,
            "kappa_m" => p.kappa_m = parse_num(key, value)?,
            "P_tr" => p.p_tr = parse_num(key, value)?,
            "sigma2" => p.sigma2 = parse_num(key, value)?,
            "alpha" => p.alpha = parse_num(key, value)?,
            "W" => p.bandwidth = parse_num(key, value)?,
            "tx_scale" => p.tx_scale = parse_num(key, value)?,
            "n_users" => self.n_users = parse_num(key, value)?,
            "n_high" => self.n_high = Some(parse_num(key, value)?),
            "r_min" => self.r_min = parse_num(key, value)?,
            "r_max" => self.r_max = parse_num(key, value)?,
            "c_H_d" => self.c_d_high = parse_num(key, value)?,
            "c_L_d" => self.c_d_low = parse_num(key, value)?,
            "c_H_e" => self.c_e_high = Some(parse_num(key, value)?),
            "c_L_e" => self.c_e_low = Some(parse_num(key, value)?),
            "seed" => self.placement_seed = parse_num(key, value)?,
            "schemes" => {
                self.schemes = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(Scheme::from_str)
                    .collect::<Result<_>>()?
            }
            "out" => self.out_dir = PathBuf::from(value.trim()),
            "epsilon" => self.learning.epsilon = parse_num(key, value)?,
            "varsigma" => self.learning.varsigma = parse_num(key, value)?,
            "oracle" => {
                self.learning.oracle = match value.trim() {
                    "analytic" => CongestionOracle::Analytic,
                    "simulated" => CongestionOracle::simulated_default(),
                    other => return Err(Error::Config(format!("unknown oracle '{other}'"))),
                }
            }
            "sim_seed" | "sim_horizon" | "sim_replications" => {
                let (mut measure, mut reps) = match self.learning.oracle {
                    CongestionOracle::Simulated {
                        measure,
                        replications,
                    } => (measure, replications),
                    CongestionOracle::Analytic => (MeasureConfig::default(), 5),
                };
                match key {
                    "sim_seed" => measure.seed = parse_num(key, value)?,
                    "sim_horizon" => measure.horizon_jobs = parse_num(key, value)?,
                    _ => reps = parse_num(key, value)?,
                }
                self.learning.oracle = CongestionOracle::Simulated {
                    measure,
                    replications: reps,
                };
            }
            "solver_tol" => self.solver.tol = parse_num(key, value)?,
            "solver_damping" => self.solver.damping = parse_num(key, value)?,
            "solver_max_iter" => self.solver.max_iter = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.into(),
            source,
        })?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.solver.validate()?;
        self.learning.validate()?;
        if self.n_users < 1 {
            return Err(Error::Config("n_users must be >= 1".into()));
        }
        if !(self.r_min > 0.0 && self.r_min < self.r_max) {
            return Err(Error::Config(format!(
                "need 0 < r_min < r_max, got {} / {}",
                self.r_min, self.r_max
            )));
        }
        if self.n_high() > self.n_users {
            return Err(Error::Config("n_high exceeds n_users".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("no schemes selected".into()));
        }
        Ok(())
    }

    pub fn n_high(&self) -> usize {
        self.n_high.unwrap_or(self.n_users / 2)
    }

    pub fn c_e_high(&self) -> f64 {
        self.c_e_high.unwrap_or(1.0 - self.c_d_high)
    }

    pub fn c_e_low(&self) -> f64 {
        self.c_e_low.unwrap_or(1.0 - self.c_d_low)
    }
}

/// Places users uniformly in distance on `[r_min, r_max]`; the first
/// `n_high` get the high delay weight.
pub fn generate_scenario(cfg: &ExperimentConfig) -> Result<Scenario> {
    cfg.validate()?;
    let mut rng = Pcg64::seed_from_u64(cfg.placement_seed);
    let n_high = cfg.n_high();
    let users = (0..cfg.n_users)
        .map(|id| {
            let d = rng.random_range(cfg.r_min..=cfg.r_max);
            let (c_d, c_e) = if id < n_high {
                (cfg.c_d_high, cfg.c_e_high())
            } else {
                (cfg.c_d_low, cfg.c_e_low())
            };
            UserProfile::new(id, d, c_d, c_e, &cfg.params)
        })
        .collect::<Result<Vec<_>>>()?;
    Scenario::new(cfg.params, users)
}

/// One user's outcome under one scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scheme: String,
    pub user_id: usize,
    pub distance_m: f64,
    pub c_d: f64,
    /// `H`/`L` under priority schemes, `fcfs` for the single queue, `none`
    /// for local-only.
    pub class: String,
    pub x: f64,
    pub cost_per_job: f64,
    pub cost_pct_of_local: f64,
    pub welfare: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: String,
    /// `ok`, or the error that stopped the scheme.
    pub status: String,
    pub mean_x: f64,
    /// Mean over users of each user's cost as a percentage of local-only.
    pub mean_cost_pct: f64,
    /// Mean job cost over mean local-only job cost, in percent.
    pub aggregate_cost_pct: f64,
    pub welfare: f64,
    pub p_h: f64,
    pub p_l: f64,
    pub d_h: f64,
    pub d_l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityPoint {
    pub distance_m: f64,
    pub c_d: f64,
    pub x: f64,
    pub utility: f64,
}

#[derive(Debug, Clone)]
pub struct SchemeRun {
    pub scheme: Scheme,
    pub outcome: std::result::Result<EquilibriumOutcome, String>,
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub scenario: Scenario,
    pub runs: Vec<SchemeRun>,
    pub rows: Vec<ResultRow>,
    pub summaries: Vec<SchemeSummary>,
    pub trace: Option<LearningTrace>,
    pub utility_curves: Vec<UtilityPoint>,
}

impl SuiteResult {
    pub fn outcome(&self, scheme: Scheme) -> Option<&EquilibriumOutcome> {
        self.runs
            .iter()
            .find(|r| r.scheme == scheme)
            .and_then(|r| r.outcome.as_ref().ok())
    }

    pub fn summary(&self, scheme: Scheme) -> Option<&SchemeSummary> {
        self.summaries.iter().find(|s| s.scheme == scheme.name())
    }
}

/// Runs one scheme; the trace is returned for the learned scheme only.
pub fn run_scheme(
    scheme: Scheme,
    scn: &Scenario,
    cfg: &ExperimentConfig,
) -> Result<(EquilibriumOutcome, Option<LearningTrace>)> {
    match scheme {
        Scheme::PriorityLearned => {
            let (out, trace) = pricing::run_learning(scn, &cfg.learning)?;
            Ok((out, Some(trace)))
        }
        Scheme::PrioritySocial => Ok((solvers::solve_social_two_class(scn, &cfg.solver)?, None)),
        Scheme::SocialSingle => Ok((solvers::solve_social_single_class(scn, &cfg.solver)?, None)),
        Scheme::SelfishSingle => Ok((solvers::solve_selfish_single_class(scn, &cfg.solver)?, None)),
        Scheme::LocalOnly => Ok((solvers::local_only(scn), None)),
    }
}

/// Per-user rows for one outcome.
pub fn result_rows(
    scheme: Scheme,
    scn: &Scenario,
    out: &EquilibriumOutcome,
) -> Result<Vec<ResultRow>> {
    let s = &scn.params;
    scn.users
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let local = model::local_cost(0.0, u, s)?;
            let v = out.profit[k];
            let class = match (&out.classes, scheme) {
                (_, Scheme::LocalOnly) => "none".to_string(),
                (Some(c), _) => c[k].as_str().to_string(),
                (None, _) => "fcfs".to_string(),
            };
            Ok(ResultRow {
                scheme: scheme.name().to_string(),
                user_id: u.id,
                distance_m: u.distance,
                c_d: u.c_d,
                class,
                x: out.x[k],
                cost_per_job: local - v,
                cost_pct_of_local: 100.0 * (local - v) / local,
                welfare: v,
            })
        })
        .collect()
}

fn summarize(
    scheme: Scheme,
    scn: &Scenario,
    out: &EquilibriumOutcome,
    rows: &[ResultRow],
) -> Result<SchemeSummary> {
    let n = rows.len().max(1) as f64;
    let local_total: f64 = scn
        .users
        .iter()
        .map(|u| model::local_cost(0.0, u, &scn.params))
        .sum::<Result<f64>>()?;
    let cost_total: f64 = rows.iter().map(|r| r.cost_per_job).sum();
    let (d_h, d_l) = model::edge_delays(&out.load, &scn.params)?;
    let (p_h, p_l) = out.signal.map_or((0.0, 0.0), |s| (s.p_h, s.p_l));
    Ok(SchemeSummary {
        scheme: scheme.name().to_string(),
        status: "ok".into(),
        mean_x: out.mean_x(),
        mean_cost_pct: rows.iter().map(|r| r.cost_pct_of_local).sum::<f64>() / n,
        aggregate_cost_pct: 100.0 * cost_total / local_total,
        welfare: out.welfare,
        p_h,
        p_l,
        d_h,
        d_l,
    })
}

fn failed_summary(scheme: Scheme, err: &str) -> SchemeSummary {
    SchemeSummary {
        scheme: scheme.name().to_string(),
        status: format!("error: {err}"),
        mean_x: f64::NAN,
        mean_cost_pct: f64::NAN,
        aggregate_cost_pct: f64::NAN,
        welfare: f64::NAN,
        p_h: f64::NAN,
        p_l: f64::NAN,
        d_h: f64::NAN,
        d_l: f64::NAN,
    }
}

/// Utility versus offloading frequency at the reference distances, for
/// both delay weights.
pub fn utility_curves(cfg: &ExperimentConfig) -> Result<Vec<UtilityPoint>> {
    let mut pts = Vec::new();
    for d in UTILITY_CURVE_DISTANCES {
        for (c_d, c_e) in [(cfg.c_d_high, cfg.c_e_high()), (cfg.c_d_low, cfg.c_e_low())] {
            let u = UserProfile::new(0, d, c_d, c_e, &cfg.params)?;
            for i in 0..100 {
                let x = i as f64 / 100.0;
                pts.push(UtilityPoint {
                    distance_m: d,
                    c_d,
                    x,
                    utility: model::utility(x, &u, &cfg.params)?,
                });
            }
        }
    }
    Ok(pts)
}

/// Runs every selected scheme on one generated scenario. A failing scheme
/// is reported in its summary and does not stop the others.
pub fn run_suite(cfg: &ExperimentConfig) -> Result<SuiteResult> {
    let scn = generate_scenario(cfg)?;
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    let mut trace = None;
    for &scheme in &cfg.schemes {
        let attempt = run_scheme(scheme, &scn, cfg).and_then(|(out, tr)| {
            let r = result_rows(scheme, &scn, &out)?;
            let summary = summarize(scheme, &scn, &out, &r)?;
            Ok((out, tr, r, summary))
        });
        match attempt {
            Ok((out, tr, r, summary)) => {
                if tr.is_some() {
                    trace = tr;
                }
                rows.extend(r);
                summaries.push(summary);
                runs.push(SchemeRun {
                    scheme,
                    outcome: Ok(out),
                });
            }
            Err(e) => {
                summaries.push(failed_summary(scheme, &e.to_string()));
                runs.push(SchemeRun {
                    scheme,
                    outcome: Err(e.to_string()),
                });
            }
        }
    }
    Ok(SuiteResult {
        scenario: scn,
        runs,
        rows,
        summaries,
        trace,
        utility_curves: utility_curves(cfg)?,
    })
}

pub const RESULTS_HEADER: &str =
    "scheme,user_id,distance_m,c_d,class,x,cost_per_job,cost_pct_of_local,welfare";
pub const TRACE_HEADER: &str = "step,phase,posted_D_H,posted_D_L,p_H,p_L,true_D_H,true_D_L";
pub const SUMMARY_HEADER: &str =
    "scheme,status,mean_x,mean_cost_pct,aggregate_cost_pct,welfare,p_H,p_L,D_H,D_L";

/// Writes `contents` next to `path` and renames it into place.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

fn csv_bytes<F>(path: &Path, header: &str, fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(header.split(',')).map_err(csv_err)?;
    fill(&mut w).map_err(csv_err)?;
    w.into_inner().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.into_error(),
    })
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let bytes = csv_bytes(path, RESULTS_HEADER, |w| {
        rows.iter().try_for_each(|r| w.serialize(r))
    })?;
    write_atomic(path, &bytes)
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    rdr.deserialize()
        .collect::<csv::Result<Vec<ResultRow>>>()
        .map_err(csv_err)
}

pub fn write_trace(path: &Path, trace: Option<&LearningTrace>) -> Result<()> {
    let bytes = csv_bytes(path, TRACE_HEADER, |w| {
        for r in trace.map(|t| t.records.as_slice()).unwrap_or_default() {
            w.serialize((
                r.step,
                r.phase_label(),
                r.posted_d_h,
                r.posted_d_l,
                r.p_h,
                r.p_l,
                r.true_d_h,
                r.true_d_l,
            ))?;
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}

pub fn write_summary(path: &Path, summaries: &[SchemeSummary]) -> Result<()> {
    let bytes = csv_bytes(path, SUMMARY_HEADER, |w| {
        summaries.iter().try_for_each(|s| w.serialize(s))
    })?;
    write_atomic(path, &bytes)
}

pub fn write_utility_curves(path: &Path, pts: &[UtilityPoint]) -> Result<()> {
    let bytes = csv_bytes(path, "distance_m,c_d,x,utility", |w| {
        pts.iter().try_for_each(|p| w.serialize(p))
    })?;
    write_atomic(path, &bytes)
}

pub const SIM_HEADER: &str =
    "seed,horizon_jobs,warmup_jobs,rate_H,rate_L,service_rate,mean_sojourn_H,se_H,\
mean_sojourn_L,se_L,utilization,completed_H,completed_L,interarrival_cv,service_cv,rng";

pub fn write_sim_report(path: &Path, cfg: &SimConfig, r: &SimReport) -> Result<()> {
    let bytes = csv_bytes(path, SIM_HEADER, |w| {
        w.serialize((
            cfg.seed,
            cfg.horizon_jobs,
            cfg.warmup_jobs,
            cfg.rate_h,
            cfg.rate_l,
            cfg.service_rate,
            r.mean_sojourn_h,
            r.se_h,
            r.mean_sojourn_l,
            r.se_l,
            r.utilization,
            r.completed_h,
            r.completed_l,
            r.interarrival_cv,
            r.service_cv,
            &r.rng,
        ))
    })?;
    write_atomic(path, &bytes)
}

/// Writes `results.csv`, `trace.csv` and `summary.csv` into `dir`.
pub fn export_csv(
    dir: &Path,
    rows: &[ResultRow],
    trace: Option<&LearningTrace>,
    summaries: &[SchemeSummary],
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.into(),
        source,
    })?;
    write_results(&dir.join("results.csv"), rows)?;
    write_trace(&dir.join("trace.csv"), trace)?;
    write_summary(&dir.join("summary.csv"), summaries)
}

/// Writes every artifact of a suite run, including `utility.csv`.
pub fn export_suite(dir: &Path, suite: &SuiteResult) -> Result<()> {
    export_csv(dir, &suite.rows, suite.trace.as_ref(), &suite.summaries)?;
    write_utility_curves(&dir.join("utility.csv"), &suite.utility_curves)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Quick invariant sweep over the configured scenario.
pub fn validate_invariants(cfg: &ExperimentConfig) -> Result<Vec<Check>> {
    let scn = generate_scenario(cfg)?;
    let s = &scn.params;
    let mut checks = Vec::new();

    let mut worst_beta = 0.0_f64;
    let mut worst_fd = 0.0_f64;
    let mut monotone = true;
    let mut single_zero = true;
    for u in &scn.users {
        let mut prev = f64::INFINITY;
        let mut sign_changes = 0;
        for i in 1..1000 {
            let x = i as f64 / 1000.0;
            let b = model::beta_of_x(x, u.rho)?;
            worst_beta = worst_beta.max(((-(b.exp_m1()) / u.rho).exp() - x).abs() / x);
            let g = model::demand(x, u, s)?;
            monotone &= g < prev;
            if prev.is_finite() && (prev > 0.0) != (g > 0.0) {
                sign_changes += 1;
            }
            prev = g;
        }
        single_zero &= sign_changes == 1;
        for x in [0.05, 0.3, 0.6, 0.9] {
            let h = 1e-6;
            let fd = (model::utility(x + h, u, s)? - model::utility(x - h, u, s)?) / (2.0 * h);
            let g = model::demand(x, u, s)?;
            worst_fd = worst_fd.max((fd - g).abs() / g.abs().max(1.0));
        }
    }
    checks.push(Check {
        name: "beta-round-trip",
        passed: worst_beta < 1e-12,
        detail: format!("max rel err {worst_beta:e}"),
    });
    checks.push(Check {
        name: "demand-finite-difference",
        passed: worst_fd < 1e-5,
        detail: format!("max rel err {worst_fd:e}"),
    });
    checks.push(Check {
        name: "demand-monotone",
        passed: monotone,
        detail: String::new(),
    });
    checks.push(Check {
        name: "demand-single-zero",
        passed: single_zero,
        detail: String::new(),
    });
    let u0_zero = scn
        .users
        .iter()
        .all(|u| model::utility(0.0, u, s).map(|v| v == 0.0).unwrap_or(false));
    checks.push(Check {
        name: "utility-zero-at-origin",
        passed: u0_zero,
        detail: String::new(),
    });

    let two = solvers::solve_social_two_class(&scn, &cfg.solver);
    let single = solvers::solve_social_single_class(&scn, &cfg.solver);
    let selfish = solvers::solve_selfish_single_class(&scn, &cfg.solver);
    match (&two, &single, &selfish) {
        (Ok(a), Ok(b), Ok(c)) => {
            checks.push(Check {
                name: "welfare-ordering",
                passed: a.welfare >= b.welfare && b.welfare >= c.welfare,
                detail: format!("{:.6} >= {:.6} >= {:.6}", a.welfare, b.welfare, c.welfare),
            });
            let w = solvers::class_weights(&scn.users)?;
            let sig = a.signal.expect("priced outcome");
            let ic = pricing::check_incentive_compatibility(&sig, &w);
            checks.push(Check {
                name: "incentive-compatibility",
                passed: ic.compatible,
                detail: format!("margins H {:e}, L {:e}", ic.margin_high, ic.margin_low),
            });
            let lhs = sig.p_h + w.high * sig.d_h;
            let rhs = (w.high - w.low) * s.mu_b() * sig.d_h * sig.d_h + sig.p_l + w.low * sig.d_l;
            checks.push(Check {
                name: "pricing-identity",
                passed: (lhs - rhs).abs() < 1e-10,
                detail: format!("gap {:e}", (lhs - rhs).abs()),
            });
        }
        _ => {
            let err = [two.err(), single.err(), selfish.err()]
                .into_iter()
                .flatten()
                .map(|e| e.to_string())
                .collect::<Vec<_>>()
                .join("; ");
            checks.push(Check {
                name: "welfare-ordering",
                passed: false,
                detail: err,
            });
        }
    }
    Ok(checks)
}
