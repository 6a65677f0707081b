//! Event-driven simulation of an M/M/1 edge server with two preemptive
//! priority classes.
//!
//! Class-H arrivals interrupt an in-service class-L job; the interrupted job
//! goes back to the head of the class-L line and later resumes with its
//! remaining work. Within a class service is FCFS. Sojourn times are
//! averaged over completions after a warmup, and standard errors come from
//! batch means so that queue autocorrelation does not shrink them.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Exp};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LoadState;

/// Name of the generator behind every stream.
pub const RNG_ALGORITHM: &str = "pcg64-xsl-rr-128/64";

const BATCHES: usize = 50;

// Stream identifiers for per-stream seeding.
const STREAM_ARRIVAL_H: u128 = 1;
const STREAM_ARRIVAL_L: u128 = 2;
const STREAM_SERVICE: u128 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    /// Completed jobs to simulate, warmup included.
    pub horizon_jobs: u64,
    /// Initial completions discarded from statistics.
    pub warmup_jobs: u64,
    pub rate_h: f64,
    pub rate_l: f64,
    pub service_rate: f64,
}

impl SimConfig {
    /// Config with the default 10% warmup.
    pub fn new(seed: u64, horizon_jobs: u64, rate_h: f64, rate_l: f64, service_rate: f64) -> Self {
        Self {
            seed,
            horizon_jobs,
            warmup_jobs: horizon_jobs / 10,
            rate_h,
            rate_l,
            service_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon_jobs <= self.warmup_jobs {
            return Err(Error::Config(format!(
                "horizon_jobs {} must exceed warmup_jobs {}",
                self.horizon_jobs, self.warmup_jobs
            )));
        }
        if !(self.service_rate.is_finite() && self.service_rate > 0.0) {
            return Err(Error::Config(format!(
                "service rate must be > 0, got {}",
                self.service_rate
            )));
        }
        if !(self.rate_h >= 0.0 && self.rate_l >= 0.0) || !(self.rate_h + self.rate_l > 0.0) {
            return Err(Error::Config(format!(
                "arrival rates must be >= 0 with a positive total, got ({}, {})",
                self.rate_h, self.rate_l
            )));
        }
        if self.rate_h + self.rate_l >= self.service_rate {
            return Err(Error::Unstable {
                load: self.rate_h + self.rate_l,
                capacity: self.service_rate,
            });
        }
        Ok(())
    }
}

/// Summary statistics of one run. Means of a class with no completions are NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub mean_sojourn_h: f64,
    pub mean_sojourn_l: f64,
    pub se_h: f64,
    pub se_l: f64,
    /// Fraction of measured time the server was busy.
    pub utilization: f64,
    pub completed_h: u64,
    pub completed_l: u64,
    /// Coefficient of variation of the merged interarrival times.
    pub interarrival_cv: f64,
    /// Coefficient of variation of the sampled service requirements.
    pub service_cv: f64,
    pub rng: String,
}

#[derive(Debug, Clone, Copy)]
struct Job {
    arrival: f64,
    remaining: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    H,
    L,
}

#[derive(Default)]
struct Moments {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn cv(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = (self.sum_sq - n * mean * mean) / (n - 1.0);
        var.max(0.0).sqrt() / mean
    }
}

/// Mean and batch-means standard error.
fn batch_stats(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let batches = BATCHES.min(n);
    if batches < 2 {
        return (mean, f64::NAN);
    }
    let size = n / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| samples[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
    (mean, (var / batches as f64).sqrt())
}

fn stream(seed: u64, id: u128) -> Pcg64 {
    // state from the seed, increment selects the stream
    let state = (u128::from(seed) << 64) | u128::from(seed.rotate_left(32) ^ 0x9E37_79B9_7F4A_7C15);
    Pcg64::new(state, id)
}

fn next_arrival(rng: &mut Pcg64, dist: Option<&Exp<f64>>, now: f64) -> f64 {
    match dist {
        Some(d) => now + d.sample(rng),
        None => f64::INFINITY,
    }
}

pub fn simulate(cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let mut rng_h = stream(cfg.seed, STREAM_ARRIVAL_H);
    let mut rng_l = stream(cfg.seed, STREAM_ARRIVAL_L);
    let mut rng_s = stream(cfg.seed, STREAM_SERVICE);
    let exp = |rate: f64| (rate > 0.0).then(|| Exp::new(rate).expect("positive rate"));
    let dist_h = exp(cfg.rate_h);
    let dist_l = exp(cfg.rate_l);
    let dist_s = Exp::new(cfg.service_rate).expect("positive rate");

    let mut queue_h: VecDeque<Job> = VecDeque::new();
    let mut queue_l: VecDeque<Job> = VecDeque::new();
    let mut in_service: Option<(Class, Job, f64)> = None; // (class, job, start of current stint)

    let mut now = 0.0;
    let mut next_h = next_arrival(&mut rng_h, dist_h.as_ref(), now);
    let mut next_l = next_arrival(&mut rng_l, dist_l.as_ref(), now);
    let mut last_arrival = 0.0;

    let mut completed = 0u64;
    let mut sojourn_h = Vec::new();
    let mut sojourn_l = Vec::new();
    let mut interarrivals = Moments::default();
    let mut services = Moments::default();
    let mut busy = 0.0;
    let mut measure_start = if cfg.warmup_jobs == 0 {
        Some(0.0)
    } else {
        None
    };

    while completed < cfg.horizon_jobs {
        let departure = in_service.map_or(f64::INFINITY, |(_, job, start)| start + job.remaining);
        // ties resolve as departure, class-H arrival, class-L arrival
        let t = departure.min(next_h).min(next_l);
        if in_service.is_some() && measure_start.is_some() {
            busy += t - now;
        }
        now = t;

        if departure <= next_h && departure <= next_l {
            let (class, job, _) = in_service.take().expect("departure without job");
            completed += 1;
            if completed > cfg.warmup_jobs {
                match class {
                    Class::H => sojourn_h.push(now - job.arrival),
                    Class::L => sojourn_l.push(now - job.arrival),
                }
            } else if completed == cfg.warmup_jobs {
                measure_start = Some(now);
            }
            in_service = if let Some(j) = queue_h.pop_front() {
                Some((Class::H, j, now))
            } else {
                queue_l.pop_front().map(|j| (Class::L, j, now))
            };
        } else {
            let class = if next_h <= next_l { Class::H } else { Class::L };
            let work = dist_s.sample(&mut rng_s);
            services.push(work);
            interarrivals.push(now - last_arrival);
            last_arrival = now;
            let job = Job {
                arrival: now,
                remaining: work,
            };
            match class {
                Class::H => {
                    next_h = next_arrival(&mut rng_h, dist_h.as_ref(), now);
                    match in_service {
                        None => in_service = Some((Class::H, job, now)),
                        Some((Class::L, mut preempted, start)) => {
                            preempted.remaining -= now - start;
                            queue_l.push_front(preempted);
                            in_service = Some((Class::H, job, now));
                        }
                        Some((Class::H, ..)) => queue_h.push_back(job),
                    }
                }
                Class::L => {
                    next_l = next_arrival(&mut rng_l, dist_l.as_ref(), now);
                    if in_service.is_none() {
                        in_service = Some((Class::L, job, now));
                    } else {
                        queue_l.push_back(job);
                    }
                }
            }
        }
    }

    let elapsed = now - measure_start.unwrap_or(now);
    let (mean_h, se_h) = batch_stats(&sojourn_h);
    let (mean_l, se_l) = batch_stats(&sojourn_l);
    Ok(SimReport {
        mean_sojourn_h: mean_h,
        mean_sojourn_l: mean_l,
        se_h,
        se_l,
        utilization: if elapsed > 0.0 { busy / elapsed } else { 0.0 },
        completed_h: sojourn_h.len() as u64,
        completed_l: sojourn_l.len() as u64,
        interarrival_cv: interarrivals.cv(),
        service_cv: services.cv(),
        rng: RNG_ALGORITHM.to_string(),
    })
}

/// How the access point samples congestion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureConfig {
    pub seed: u64,
    pub horizon_jobs: u64,
    /// Classes offered less than `probe_floor * service_rate` are simulated at
    /// that floor so their delay can still be estimated.
    pub probe_floor: f64,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            horizon_jobs: 200_000,
            probe_floor: 1e-4,
        }
    }
}

/// Estimated per-class sojourn times for the given aggregate loads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CongestionEstimate {
    pub d_h: f64,
    pub d_l: f64,
    pub se_h: f64,
    pub se_l: f64,
}

pub fn measure_congestion(
    loads: &LoadState,
    service_rate: f64,
    cfg: &MeasureConfig,
) -> Result<CongestionEstimate> {
    let floor = cfg.probe_floor * service_rate;
    let sim = SimConfig::new(
        cfg.seed,
        cfg.horizon_jobs,
        loads.rate_h.max(floor),
        loads.rate_l.max(floor),
        service_rate,
    );
    let r = simulate(&sim)?;
    Ok(CongestionEstimate {
        d_h: r.mean_sojourn_h,
        d_l: r.mean_sojourn_l,
        se_h: r.se_h,
        se_l: r.se_l,
    })
}

/// Averages `replications` independent measurements (run in parallel).
pub fn measure_congestion_replicated(
    loads: &LoadState,
    service_rate: f64,
    cfg: &MeasureConfig,
    replications: usize,
) -> Result<CongestionEstimate> {
    use rayon::prelude::*;
    let k = replications.max(1);
    let mut seeder = Pcg64::seed_from_u64(cfg.seed);
    let seeds: Vec<u64> = (0..k).map(|_| seeder.random()).collect();
    let runs = seeds
        .par_iter()
        .map(|&seed| measure_congestion(loads, service_rate, &MeasureConfig { seed, ..*cfg }))
        .collect::<Result<Vec<_>>>()?;
    let kf = k as f64;
    let mean = |f: fn(&CongestionEstimate) -> f64| runs.iter().map(f).sum::<f64>() / kf;
    let pooled = |f: fn(&CongestionEstimate) -> f64| {
        runs.iter().map(|r| f(r).powi(2)).sum::<f64>().sqrt() / kf
    };
    Ok(CongestionEstimate {
        d_h: mean(|r| r.d_h),
        d_l: mean(|r| r.d_l),
        se_h: pooled(|r| r.se_h),
        se_l: pooled(|r| r.se_l),
    })
}
