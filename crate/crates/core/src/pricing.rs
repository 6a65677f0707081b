//! Priority prices, user best responses and the learning-based pricing loop.
//!
//! A posted delay pair `(D_H, D_L)` pins down the residual capacities
//! `Psi_H = 1/D_H` and `Psi = mu_B D_H / D_L`, hence the class loads, hence
//! the externality prices. The access point never sees utilities: it posts a
//! delay pair with its prices, watches the congestion users actually
//! produce, and searches the pair by nested bisection until posted and
//! realized delays agree.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    demand_inverse, edge_delays, profit, EquilibriumOutcome, LoadState, MarketSignal,
    PriorityClass, SystemParams, UserProfile,
};
use crate::queue_sim::{measure_congestion_replicated, MeasureConfig};
use crate::solvers::{assign_priority, class_weights, ClassWeights, Scenario};

// Posted delays may undershoot their feasibility bounds by this relative
// amount (rounding in mu_B * D_H^2 and friends).
const FEASIBILITY_SLACK: f64 = 1e-12;
// Class costs closer than this (relative) are treated as a tie.
const TIE_TOL: f64 = 1e-12;

/// Externality prices implied by a posted delay pair.
pub fn prices_from_delays(
    d_h: f64,
    d_l: f64,
    s: &SystemParams,
    w: &ClassWeights,
) -> Result<(f64, f64)> {
    let mu_b = s.mu_b();
    if !d_h.is_finite() || d_h * mu_b < 1.0 - FEASIBILITY_SLACK {
        return Err(Error::domain("posted D_H (below 1/mu_B)", d_h));
    }
    if !d_l.is_finite() || d_l < mu_b * d_h * d_h * (1.0 - FEASIBILITY_SLACK) {
        return Err(Error::domain("posted D_L (below mu_B D_H^2)", d_l));
    }
    let psi_h = 1.0 / d_h;
    let psi = mu_b * d_h / d_l;
    let rate_h = (mu_b - psi_h).max(0.0);
    let rate_l = (psi_h - psi).max(0.0);
    let p_h = w.high * rate_h / (psi_h * psi_h)
        + w.low * mu_b * (psi_h + psi) * rate_l / (psi * psi * psi_h * psi_h);
    let p_l = w.low * mu_b * rate_l / (psi * psi * psi_h);
    Ok((p_h, p_l))
}

/// Complete signal for a posted delay pair.
pub fn signal_from_delays(
    d_h: f64,
    d_l: f64,
    s: &SystemParams,
    w: &ClassWeights,
) -> Result<MarketSignal> {
    let (p_h, p_l) = prices_from_delays(d_h, d_l, s, w)?;
    Ok(MarketSignal { p_h, p_l, d_h, d_l })
}

/// A user's class and frequency under a posted signal. Ties (within a
/// relative `1e-12`) go to `tie_class`, the user's c-mu-rule class.
pub fn best_response(
    u: &UserProfile,
    sig: &MarketSignal,
    tie_class: PriorityClass,
    s: &SystemParams,
) -> (PriorityClass, f64) {
    let cost_h = sig.marginal_cost(PriorityClass::H, u.c_d);
    let cost_l = sig.marginal_cost(PriorityClass::L, u.c_d);
    let scale = cost_h.abs().max(cost_l.abs()).max(1.0);
    let cls = if (cost_h - cost_l).abs() <= TIE_TOL * scale {
        tie_class
    } else if cost_h < cost_l {
        PriorityClass::H
    } else {
        PriorityClass::L
    };
    (cls, demand_inverse(sig.marginal_cost(cls, u.c_d), u, s))
}

/// Best responses of a whole population.
pub fn respond_to_signal(
    users: &[UserProfile],
    sig: &MarketSignal,
    tie_classes: &[PriorityClass],
    s: &SystemParams,
) -> (Vec<PriorityClass>, Vec<f64>) {
    users
        .iter()
        .zip(tie_classes)
        .map(|(u, &tie)| best_response(u, sig, tie, s))
        .unzip()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcReport {
    pub compatible: bool,
    /// `(p_L + c_H D_L) - (p_H + c_H D_H)`: how much a high-weight user saves
    /// by staying in class H.
    pub margin_high: f64,
    /// `(p_H + c_L D_H) - (p_L + c_L D_L)`: how much a low-weight user saves
    /// by staying in class L.
    pub margin_low: f64,
}

pub fn check_incentive_compatibility(sig: &MarketSignal, w: &ClassWeights) -> IcReport {
    let margin_high =
        sig.marginal_cost(PriorityClass::L, w.high) - sig.marginal_cost(PriorityClass::H, w.high);
    let margin_low =
        sig.marginal_cost(PriorityClass::H, w.low) - sig.marginal_cost(PriorityClass::L, w.low);
    IcReport {
        compatible: margin_high > 0.0 && margin_low > 0.0,
        margin_high,
        margin_low,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CongestionOracle {
    /// Closed-form sojourn times of the realized loads.
    Analytic,
    /// Discrete-event simulation of the realized loads.
    Simulated {
        measure: MeasureConfig,
        replications: usize,
    },
}

impl CongestionOracle {
    pub fn simulated_default() -> Self {
        CongestionOracle::Simulated {
            measure: MeasureConfig::default(),
            replications: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningConfig {
    /// Bisection stop threshold on posted delays (s).
    pub epsilon: f64,
    /// Offset keeping the posted `D_H` strictly above `1/mu_B`.
    pub varsigma: f64,
    /// Cap on outer (D_H) postings.
    pub max_outer: usize,
    /// Cap on broadcasts within one inner (D_L) search.
    pub max_inner: usize,
    pub oracle: CongestionOracle,
    /// Starting upper value of the outer halving search; `None` means
    /// `64 / mu_B`.
    pub d_h_seed: Option<f64>,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            varsigma: 1e-6,
            max_outer: 200,
            max_inner: 500,
            oracle: CongestionOracle::Analytic,
            d_h_seed: None,
        }
    }
}

impl LearningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if !(self.varsigma > 0.0) {
            return Err(Error::Config(format!(
                "varsigma must be > 0, got {}",
                self.varsigma
            )));
        }
        if let CongestionOracle::Simulated {
            replications: 0, ..
        } = self.oracle
        {
            return Err(Error::Config(
                "simulated oracle needs at least one replication".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OuterPhase {
    /// Checking that the starting D_H is an upper bound.
    Seed,
    Halving,
    Bisection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InnerPhase {
    /// First posting for a new D_H, at zero implied class-L load.
    Start,
    Doubling,
    Bisection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub outer: OuterPhase,
    pub inner: InnerPhase,
    pub posted_d_h: f64,
    pub posted_d_l: f64,
    pub p_h: f64,
    pub p_l: f64,
    pub true_d_h: f64,
    pub true_d_l: f64,
    pub x: Vec<f64>,
    /// Width of the D_H bracket while bisecting on D_H.
    pub d_h_bracket: Option<f64>,
    /// Width of the D_L bracket while bisecting on D_L.
    pub d_l_bracket: Option<f64>,
}

impl TraceRecord {
    pub fn phase_label(&self) -> String {
        let outer = match self.outer {
            OuterPhase::Seed => "seed",
            OuterPhase::Halving => "halving",
            OuterPhase::Bisection => "bisection",
        };
        let inner = match self.inner {
            InnerPhase::Start => "start",
            InnerPhase::Doubling => "doubling",
            InnerPhase::Bisection => "bisection",
        };
        format!("{outer}/{inner}")
    }
}

/// One record per broadcast.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningTrace {
    pub records: Vec<TraceRecord>,
}

impl LearningTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Sojourn times of the realized loads; `+inf` where a queue is overloaded.
pub fn analytic_congestion(load: &LoadState, s: &SystemParams) -> (f64, f64) {
    let mu_b = s.mu_b();
    if load.psi_h(mu_b) <= 0.0 {
        return (f64::INFINITY, f64::INFINITY);
    }
    match edge_delays(load, s) {
        Ok(d) => d,
        Err(_) => (1.0 / load.psi_h(mu_b), f64::INFINITY),
    }
}

#[derive(Debug, Clone)]
struct Broadcast {
    signal: MarketSignal,
    classes: Vec<PriorityClass>,
    x: Vec<f64>,
    true_d_h: f64,
    true_d_l: f64,
    se_h: f64,
    se_l: f64,
}

struct Learner<'a> {
    scn: &'a Scenario,
    cfg: &'a LearningConfig,
    weights: ClassWeights,
    lemma: Vec<PriorityClass>,
    trace: LearningTrace,
}

impl Learner<'_> {
    fn broadcast(
        &mut self,
        d_h: f64,
        d_l: f64,
        outer: OuterPhase,
        inner: InnerPhase,
        d_h_bracket: Option<f64>,
        d_l_bracket: Option<f64>,
    ) -> Result<Broadcast> {
        let s = &self.scn.params;
        let signal = signal_from_delays(d_h, d_l, s, &self.weights)?;
        let (classes, x) = respond_to_signal(&self.scn.users, &signal, &self.lemma, s);
        let load = LoadState::from_assignment(&x, &classes, s.lambda_a);
        let step = self.trace.records.len();
        let (true_d_h, true_d_l, se_h, se_l) = match self.cfg.oracle {
            CongestionOracle::Analytic => {
                let (a, b) = analytic_congestion(&load, s);
                (a, b, 0.0, 0.0)
            }
            CongestionOracle::Simulated {
                measure,
                replications,
            } => {
                if load.total() >= s.mu_b() {
                    let (a, b) = analytic_congestion(&load, s);
                    (a, b, 0.0, 0.0)
                } else {
                    let seeded = MeasureConfig {
                        seed: measure
                            .seed
                            .wrapping_add((step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
                        ..measure
                    };
                    let est =
                        measure_congestion_replicated(&load, s.mu_b(), &seeded, replications)?;
                    (est.d_h, est.d_l, est.se_h, est.se_l)
                }
            }
        };
        self.trace.records.push(TraceRecord {
            step,
            outer,
            inner,
            posted_d_h: d_h,
            posted_d_l: d_l,
            p_h: signal.p_h,
            p_l: signal.p_l,
            true_d_h,
            true_d_l,
            x: x.clone(),
            d_h_bracket,
            d_l_bracket,
        });
        Ok(Broadcast {
            signal,
            classes,
            x,
            true_d_h,
            true_d_l,
            se_h,
            se_l,
        })
    }

    fn stop_width(&self, se: f64) -> f64 {
        match self.cfg.oracle {
            CongestionOracle::Analytic => self.cfg.epsilon,
            CongestionOracle::Simulated { .. } => self.cfg.epsilon.max(3.0 * se),
        }
    }

    /// Doubling-up then bisection on the posted D_L for a fixed D_H.
    fn inner_loop(
        &mut self,
        d_h: f64,
        outer: OuterPhase,
        d_h_bracket: Option<f64>,
    ) -> Result<Broadcast> {
        let mu_b = self.scn.params.mu_b();
        let mut d_l = mu_b * d_h * d_h;
        let mut last = self.broadcast(d_h, d_l, outer, InnerPhase::Start, d_h_bracket, None)?;
        let mut steps = 1;
        let mut lb = d_l;
        while d_l < last.true_d_l {
            lb = d_l;
            d_l *= 2.0;
            last = self.broadcast(d_h, d_l, outer, InnerPhase::Doubling, d_h_bracket, None)?;
            steps += 1;
            self.check_inner_cap(steps, &last)?;
        }
        let mut ub = d_l;
        while ub - lb > self.stop_width(last.se_l) {
            d_l = 0.5 * (ub + lb);
            last = self.broadcast(
                d_h,
                d_l,
                outer,
                InnerPhase::Bisection,
                d_h_bracket,
                Some(ub - lb),
            )?;
            steps += 1;
            self.check_inner_cap(steps, &last)?;
            if d_l < last.true_d_l {
                lb = d_l;
            } else {
                ub = d_l;
            }
        }
        Ok(last)
    }

    fn check_inner_cap(&self, steps: usize, last: &Broadcast) -> Result<()> {
        if steps > self.cfg.max_inner {
            return Err(Error::NonConvergence {
                iterations: steps,
                residual: (last.signal.d_l - last.true_d_l).abs(),
            });
        }
        Ok(())
    }
}

/// Learning-based pricing: nested bisection over posted delays using only
/// observed congestion. Returns the outcome at the final broadcast and the
/// full trace.
pub fn run_learning(
    scn: &Scenario,
    cfg: &LearningConfig,
) -> Result<(EquilibriumOutcome, LearningTrace)> {
    cfg.validate()?;
    let s = &scn.params;
    let mu_b = s.mu_b();
    let floor = 1.0 / mu_b;

    if scn.users.is_empty() {
        let signal = MarketSignal {
            p_h: 0.0,
            p_l: 0.0,
            d_h: floor,
            d_l: floor,
        };
        let trace = LearningTrace {
            records: vec![TraceRecord {
                step: 0,
                outer: OuterPhase::Seed,
                inner: InnerPhase::Start,
                posted_d_h: floor,
                posted_d_l: floor,
                p_h: 0.0,
                p_l: 0.0,
                true_d_h: floor,
                true_d_l: floor,
                x: vec![],
                d_h_bracket: None,
                d_l_bracket: None,
            }],
        };
        let outcome = EquilibriumOutcome {
            x: vec![],
            classes: Some(vec![]),
            profit: vec![],
            welfare: 0.0,
            load: LoadState::default(),
            signal: Some(signal),
        };
        return Ok((outcome, trace));
    }

    let mut learner = Learner {
        scn,
        cfg,
        weights: class_weights(&scn.users)?,
        lemma: assign_priority(&scn.users)?,
        trace: LearningTrace::default(),
    };
    let lowest = floor + cfg.varsigma;
    let mut d_h = cfg.d_h_seed.unwrap_or(64.0 / mu_b);
    if !(d_h > lowest) {
        return Err(Error::Config(format!(
            "d_h_seed must exceed 1/mu_B + varsigma, got {d_h}"
        )));
    }

    let mut outer_steps = 0usize;
    let bump = |outer_steps: &mut usize, last: &Broadcast| -> Result<()> {
        *outer_steps += 1;
        if *outer_steps > cfg.max_outer {
            return Err(Error::NonConvergence {
                iterations: *outer_steps,
                residual: (last.signal.d_h - last.true_d_h).abs(),
            });
        }
        Ok(())
    };

    // The halving search needs a starting posting above the congestion it
    // induces.
    loop {
        let probe = learner.inner_loop(d_h, OuterPhase::Seed, None)?;
        bump(&mut outer_steps, &probe)?;
        if d_h > probe.true_d_h {
            break;
        }
        d_h *= 2.0;
    }

    let mut ub;
    let mut last;
    loop {
        ub = d_h;
        d_h = (0.5 * d_h).max(lowest);
        last = learner.inner_loop(d_h, OuterPhase::Halving, None)?;
        bump(&mut outer_steps, &last)?;
        if d_h <= last.true_d_h || d_h <= lowest {
            break;
        }
    }
    let mut lb = d_h;
    while ub - lb > learner.stop_width(last.se_h) {
        d_h = 0.5 * (ub + lb);
        last = learner.inner_loop(d_h, OuterPhase::Bisection, Some(ub - lb))?;
        bump(&mut outer_steps, &last)?;
        if d_h < last.true_d_h {
            lb = d_h;
        } else {
            ub = d_h;
        }
    }

    let load = LoadState::from_assignment(&last.x, &last.classes, s.lambda_a);
    if load.psi(mu_b) <= 0.0 {
        return Err(Error::OracleUnstable {
            signal: last.signal,
        });
    }
    let profits = last
        .x
        .iter()
        .zip(&last.classes)
        .zip(&scn.users)
        .map(|((&xk, &cls), u)| profit(xk, cls, &load, u, s))
        .collect::<Result<Vec<_>>>()?;
    let outcome = EquilibriumOutcome {
        welfare: profits.iter().sum(),
        profit: profits,
        x: last.x,
        classes: Some(last.classes),
        load,
        signal: Some(last.signal),
    };
    Ok((outcome, learner.trace))
}
