//! Centralized equilibrium solvers.
//!
//! Every scheme reduces to one first-order condition per user of the form
//! `g_k(x_k) = marginal_cost_k(x)`, where only the right-hand side couples
//! users. Since demand is strictly decreasing, each condition is solved for
//! `x_k` with [`demand_inverse`] and the whole vector is iterated as a damped
//! fixed point until both the step and the first-order residuals vanish.

use crate::error::{Error, Result};
use crate::model::{
    demand_inverse, edge_delays, profit, profit_with_delay, EquilibriumOutcome, LoadState,
    MarketSignal, PriorityClass, SystemParams, UserProfile, X_MAX, X_MIN,
};
use crate::pricing::prices_from_delays;

/// Largest first-order residual accepted at a returned solution.
pub const FOC_TOL: f64 = 1e-6;

const MIN_DAMPING: f64 = 1e-4;
const PROJECT_TRIGGER: f64 = 1.0 - 1e-6;
const PROJECT_TARGET: f64 = 1.0 - 1e-3;
const MAX_CONSECUTIVE_PROJECTIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Convergence threshold on `max_k |T(x)_k - x_k|`.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial step-mixing factor; halved whenever the fixed-point residual
    /// fails to shrink.
    pub damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10_000,
            damping: 0.5,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!(
                "solver tol must be > 0, got {}",
                self.tol
            )));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!(
                "damping must lie in (0,1], got {}",
                self.damping
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: SystemParams,
    pub users: Vec<UserProfile>,
}

impl Scenario {
    pub fn new(params: SystemParams, users: Vec<UserProfile>) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, users })
    }

    fn require_users(&self) -> Result<()> {
        if self.users.is_empty() {
            return Err(Error::Config("scenario has no users".into()));
        }
        Ok(())
    }
}

/// Delay weights of the two priority classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassWeights {
    pub high: f64,
    pub low: f64,
}

impl ClassWeights {
    pub fn of(&self, cls: PriorityClass) -> f64 {
        match cls {
            PriorityClass::H => self.high,
            PriorityClass::L => self.low,
        }
    }
}

/// The two distinct delay weights present in the population.
pub fn class_weights(users: &[UserProfile]) -> Result<ClassWeights> {
    let mut distinct: Vec<f64> = Vec::new();
    for u in users {
        if !distinct.contains(&u.c_d) {
            distinct.push(u.c_d);
        }
    }
    match distinct.len() {
        2 => Ok(ClassWeights {
            high: distinct[0].max(distinct[1]),
            low: distinct[0].min(distinct[1]),
        }),
        0 | 1 => Err(Error::Degenerate(
            "need two distinct delay weights for priority classes".into(),
        )),
        n => Err(Error::Degenerate(format!(
            "found {n} distinct delay weights, expected 2"
        ))),
    }
}

/// The c-mu rule: the larger delay weight gets the high-priority class.
pub fn assign_priority(users: &[UserProfile]) -> Result<Vec<PriorityClass>> {
    let w = class_weights(users)?;
    Ok(users
        .iter()
        .map(|u| {
            if u.c_d == w.high {
                PriorityClass::H
            } else {
                PriorityClass::L
            }
        })
        .collect())
}

/// Social optimum with a two-class preemptive priority edge queue.
pub fn solve_social_two_class(scn: &Scenario, cfg: &SolverConfig) -> Result<EquilibriumOutcome> {
    scn.require_users()?;
    let classes = assign_priority(&scn.users)?;
    let w = class_weights(&scn.users)?;
    let s = &scn.params;
    let lam = s.lambda_a;
    let mu_b = s.mu_b();

    let marginal = |x: &[f64]| -> Result<Vec<f64>> {
        let load = LoadState::from_assignment(x, &classes, lam);
        let (d_h, d_l) = edge_delays(&load, s)?;
        let psi_h = load.psi_h(mu_b);
        let psi = load.psi(mu_b);
        let mut ext_h = 0.0;
        let mut ext_l_on_h = 0.0;
        let mut ext_l_on_l = 0.0;
        for (&xj, &cls) in x.iter().zip(&classes) {
            match cls {
                PriorityClass::H => ext_h += lam * w.high * xj / (psi_h * psi_h),
                PriorityClass::L => {
                    ext_l_on_h +=
                        lam * mu_b * (psi_h + psi) * w.low * xj / (psi * psi * psi_h * psi_h);
                    ext_l_on_l += lam * mu_b * w.low * xj / (psi * psi * psi_h);
                }
            }
        }
        Ok(scn
            .users
            .iter()
            .zip(&classes)
            .map(|(u, cls)| match cls {
                PriorityClass::H => u.c_d * d_h + ext_h + ext_l_on_h,
                PriorityClass::L => u.c_d * d_l + ext_l_on_l,
            })
            .collect())
    };

    let x = damped_fixed_point(scn, cfg, marginal)?;
    let load = LoadState::from_assignment(&x, &classes, lam);
    let profits = x
        .iter()
        .zip(&classes)
        .zip(&scn.users)
        .map(|((&xk, &cls), u)| profit(xk, cls, &load, u, s))
        .collect::<Result<Vec<_>>>()?;
    let (d_h, d_l) = edge_delays(&load, s)?;
    let (p_h, p_l) = prices_from_delays(d_h, d_l, s, &w)?;
    Ok(EquilibriumOutcome {
        welfare: profits.iter().sum(),
        x,
        classes: Some(classes),
        profit: profits,
        load,
        signal: Some(MarketSignal { p_h, p_l, d_h, d_l }),
    })
}

/// Social optimum with one FCFS edge queue.
pub fn solve_social_single_class(scn: &Scenario, cfg: &SolverConfig) -> Result<EquilibriumOutcome> {
    scn.require_users()?;
    let s = &scn.params;
    let lam = s.lambda_a;
    let mu_b = s.mu_b();
    let marginal = |x: &[f64]| -> Result<Vec<f64>> {
        let total: f64 = x.iter().map(|xj| lam * xj).sum();
        let d = fcfs_delay(total, mu_b)?;
        let weighted: f64 = x
            .iter()
            .zip(&scn.users)
            .map(|(xj, u)| u.c_d * lam * xj)
            .sum();
        Ok(scn
            .users
            .iter()
            .map(|u| u.c_d * d + weighted * d * d)
            .collect())
    };
    let x = damped_fixed_point(scn, cfg, marginal)?;
    single_queue_outcome(scn, x)
}

/// Nash equilibrium of selfish users sharing one FCFS edge queue, no prices.
pub fn solve_selfish_single_class(
    scn: &Scenario,
    cfg: &SolverConfig,
) -> Result<EquilibriumOutcome> {
    scn.require_users()?;
    let s = &scn.params;
    let lam = s.lambda_a;
    let mu_b = s.mu_b();
    let marginal = |x: &[f64]| -> Result<Vec<f64>> {
        let total: f64 = x.iter().map(|xj| lam * xj).sum();
        let d = fcfs_delay(total, mu_b)?;
        Ok(scn.users.iter().map(|u| u.c_d * d).collect())
    };
    let x = damped_fixed_point(scn, cfg, marginal)?;
    single_queue_outcome(scn, x)
}

/// Every job computed on the device.
pub fn local_only(scn: &Scenario) -> EquilibriumOutcome {
    let n = scn.users.len();
    EquilibriumOutcome {
        x: vec![0.0; n],
        classes: None,
        profit: vec![0.0; n],
        welfare: 0.0,
        load: LoadState::default(),
        signal: None,
    }
}

fn fcfs_delay(total: f64, mu_b: f64) -> Result<f64> {
    if total >= mu_b {
        return Err(Error::Unstable {
            load: total,
            capacity: mu_b,
        });
    }
    Ok(1.0 / (mu_b - total))
}

fn single_queue_outcome(scn: &Scenario, x: Vec<f64>) -> Result<EquilibriumOutcome> {
    let s = &scn.params;
    let total: f64 = x.iter().map(|xj| s.lambda_a * xj).sum();
    let d = fcfs_delay(total, s.mu_b())?;
    let profits = x
        .iter()
        .zip(&scn.users)
        .map(|(&xk, u)| profit_with_delay(xk, d, u, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(EquilibriumOutcome {
        welfare: profits.iter().sum(),
        x,
        classes: None,
        profit: profits,
        load: LoadState::new(total, 0.0),
        signal: None,
    })
}

/// Largest violation of `g_k(x_k) = c_k`, with complementarity at the clamps.
pub fn foc_residual(x: &[f64], marginal: &[f64], users: &[UserProfile], s: &SystemParams) -> f64 {
    x.iter()
        .zip(marginal)
        .zip(users)
        .map(|((&xk, &c), u)| {
            let g = crate::model::demand(xk.clamp(X_MIN, X_MAX), u, s).unwrap_or(f64::NAN);
            if xk <= X_MIN {
                (g - c).max(0.0)
            } else if xk >= X_MAX {
                (c - g).max(0.0)
            } else {
                (g - c).abs()
            }
        })
        .fold(0.0, f64::max)
}

fn damped_fixed_point<F>(scn: &Scenario, cfg: &SolverConfig, marginal: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let s = &scn.params;
    let lam = s.lambda_a;
    let mu_b = s.mu_b();
    let mut x = vec![X_MIN; scn.users.len()];
    let mut gamma = cfg.damping;
    let mut prev_step = f64::INFINITY;
    let mut projections = 0usize;
    let mut last_res = f64::INFINITY;

    for _ in 0..cfg.max_iter {
        let costs = marginal(&x)?;
        let target: Vec<f64> = costs
            .iter()
            .zip(&scn.users)
            .map(|(&c, u)| demand_inverse(c, u, s))
            .collect();
        let step = target
            .iter()
            .zip(&x)
            .map(|(t, xk)| (t - xk).abs())
            .fold(0.0, f64::max);
        last_res = step;
        if step < cfg.tol {
            // Judge the undamped target: damping only approaches a clamp
            // geometrically, leaving x just inside where the interior FOC applies.
            let target_costs = marginal(&target)?;
            if foc_residual(&target, &target_costs, &scn.users, s) < FOC_TOL {
                return Ok(target);
            }
        }
        if step >= prev_step {
            gamma = (0.5 * gamma).max(MIN_DAMPING);
        }
        prev_step = step;
        for (xk, t) in x.iter_mut().zip(&target) {
            *xk = (1.0 - gamma) * *xk + gamma * t;
        }

        let total: f64 = x.iter().map(|xk| lam * xk).sum();
        if total >= mu_b * PROJECT_TRIGGER {
            let scale = mu_b * PROJECT_TARGET / total;
            x.iter_mut().for_each(|xk| *xk = (*xk * scale).max(X_MIN));
            projections += 1;
            if projections > MAX_CONSECUTIVE_PROJECTIONS {
                return Err(Error::Unstable {
                    load: total,
                    capacity: mu_b,
                });
            }
        } else {
            projections = 0;
        }
    }
    Err(Error::NonConvergence {
        iterations: cfg.max_iter,
        residual: last_res,
    })
}
