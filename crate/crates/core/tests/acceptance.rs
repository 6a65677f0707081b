//! Acceptance criteria. Runs without the libtest harness so that each
//! criterion prints exactly one PASS/FAIL line; exits nonzero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use mec_core::experiments::{self, ExperimentConfig, Scheme};
use mec_core::model::{self, LoadState, SystemParams, UserProfile};
use mec_core::pricing::{self, LearningConfig};
use mec_core::queue_sim::{self, SimConfig};
use mec_core::solvers::{self, Scenario, SolverConfig};
use mec_core::Result;
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: String) -> Self {
        Self { passed, detail }
    }
}

fn queue_fidelity() -> Result<Verdict> {
    let s = SystemParams::table2();
    let mu = s.mu_b();
    let (rh, rl) = (0.25 * mu, 0.15 * mu);
    let start = Instant::now();
    let rep = queue_sim::simulate(&SimConfig::new(11, 1_000_000, rh, rl, mu))?;
    let elapsed = start.elapsed();
    let (dh, dl) = model::edge_delays(&LoadState::new(rh, rl), &s)?;
    let err_h = (rep.mean_sojourn_h - dh).abs() / dh;
    let err_l = (rep.mean_sojourn_l - dl).abs() / dl;

    let mut invariant = true;
    let mut estimates = Vec::new();
    for (i, frac_l) in [0.05, 0.25, 0.45].into_iter().enumerate() {
        let r = queue_sim::simulate(&SimConfig::new(
            100 + i as u64,
            1_000_000,
            rh,
            frac_l * mu,
            mu,
        ))?;
        estimates.push((r.mean_sojourn_h, r.se_h));
    }
    let mut worst_z = 0.0_f64;
    for i in 0..estimates.len() {
        for j in i + 1..estimates.len() {
            let (a, sa) = estimates[i];
            let (b, sb) = estimates[j];
            let z = (a - b).abs() / (sa * sa + sb * sb).sqrt();
            worst_z = worst_z.max(z);
            invariant &= z < 3.0;
        }
    }
    Ok(Verdict::new(
        err_h < 0.05 && err_l < 0.05 && elapsed < Duration::from_secs(60) && invariant,
        format!(
            "rel err H {err_h:.4}, L {err_l:.4} in {:.1}s; D_H across L loads max |z| {worst_z:.2}",
            elapsed.as_secs_f64()
        ),
    ))
}

fn social_optimum_grid() -> Result<Verdict> {
    let s = SystemParams::table2();
    let users = vec![
        UserProfile::new(0, 20.0, 0.9, 0.1, &s)?,
        UserProfile::new(1, 45.0, 0.1, 0.9, &s)?,
    ];
    let scn = Scenario::new(s, users)?;
    let start = Instant::now();
    let sol = solvers::solve_social_two_class(&scn, &SolverConfig::default())?;
    let classes = solvers::assign_priority(&scn.users)?;

    let welfare = |x: [f64; 2]| -> Result<f64> {
        let load = LoadState::from_assignment(&x, &classes, s.lambda_a);
        let mut total = 0.0;
        for k in 0..2 {
            total += model::profit(x[k], classes[k], &load, &scn.users[k], &s)?;
        }
        Ok(total)
    };
    let mut best = (f64::NEG_INFINITY, [0.0, 0.0]);
    for i in 0..1000 {
        for j in 0..1000 {
            let x = [i as f64 * 1e-3, j as f64 * 1e-3];
            let w = welfare(x)?;
            if w > best.0 {
                best = (w, x);
            }
        }
    }
    let elapsed = start.elapsed();
    let dev = (sol.x[0] - best.1[0])
        .abs()
        .max((sol.x[1] - best.1[1]).abs());
    Ok(Verdict::new(
        dev < 2e-3 && elapsed < Duration::from_secs(10),
        format!(
            "solver ({:.4}, {:.4}) vs grid ({:.3}, {:.3}), max dev {dev:.2e}, {:.1}s",
            sol.x[0],
            sol.x[1],
            best.1[0],
            best.1[1],
            elapsed.as_secs_f64()
        ),
    ))
}

struct LearningCheck {
    x_dev: f64,
    gap_h: f64,
    gap_l: f64,
    steps: usize,
    elapsed: Duration,
}

fn learning_against_social(scn: &Scenario, epsilon: f64) -> Result<LearningCheck> {
    let cfg = LearningConfig {
        epsilon,
        ..LearningConfig::default()
    };
    let start = Instant::now();
    let (learned, trace) = pricing::run_learning(scn, &cfg)?;
    let elapsed = start.elapsed();
    let social = solvers::solve_social_two_class(scn, &SolverConfig::default())?;
    let x_dev = learned
        .x
        .iter()
        .zip(&social.x)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let last = trace.records.last().expect("non-empty trace");
    Ok(LearningCheck {
        x_dev,
        gap_h: (last.posted_d_h - last.true_d_h).abs(),
        gap_l: (last.posted_d_l - last.true_d_l).abs(),
        steps: trace.len(),
        elapsed,
    })
}

fn learning_convergence() -> Result<Verdict> {
    let scn = experiments::generate_scenario(&ExperimentConfig::default())?;
    let eps = LearningConfig::default().epsilon;
    let c = learning_against_social(&scn, eps)?;
    let fine = learning_against_social(&scn, 1e-3)?;
    Ok(Verdict::new(
        c.x_dev < 1e-3 && c.gap_h <= eps && c.gap_l <= eps && c.elapsed < Duration::from_secs(120),
        format!(
            "eps {eps}: ||dx|| {:.2e}, gaps H {:.2e} L {:.2e}, {} steps, {:.2}s \
             [diagnostic eps 1e-3: ||dx|| {:.2e}, gaps H {:.2e} L {:.2e}]",
            c.x_dev,
            c.gap_h,
            c.gap_l,
            c.steps,
            c.elapsed.as_secs_f64(),
            fine.x_dev,
            fine.gap_h,
            fine.gap_l
        ),
    ))
}

/// Delay pairs produced by random stable class loads.
fn random_signals(
    s: &SystemParams,
    w: &solvers::ClassWeights,
    n: usize,
) -> Result<Vec<model::MarketSignal>> {
    let mut rng = Pcg64::seed_from_u64(2024);
    let mu = s.mu_b();
    (0..n)
        .map(|_| {
            let total = rng.random_range(0.01..0.95) * mu;
            let share = rng.random_range(0.01..0.99);
            let (d_h, d_l) =
                model::edge_delays(&LoadState::new(share * total, (1.0 - share) * total), s)?;
            pricing::signal_from_delays(d_h, d_l, s, w)
        })
        .collect()
}

fn incentive_compatibility() -> Result<Verdict> {
    let cfg = ExperimentConfig::default();
    let scn = experiments::generate_scenario(&cfg)?;
    let s = &scn.params;
    let w = solvers::class_weights(&scn.users)?;
    let lemma = solvers::assign_priority(&scn.users)?;
    let (learned, _) = pricing::run_learning(&scn, &cfg.learning)?;

    let mut signals = vec![learned.signal.expect("learned signal")];
    signals.extend(random_signals(s, &w, 1000)?);
    let mut sandwich_fail = 0;
    let mut class_fail = 0;
    for sig in &signals {
        let dp = sig.p_h - sig.p_l;
        let dd = sig.d_l - sig.d_h;
        if !(w.low * dd < dp && dp < w.high * dd) {
            sandwich_fail += 1;
        }
        // Ties are resolved against the expected class so they count as misses.
        for (u, &cls) in scn.users.iter().zip(&lemma) {
            if pricing::best_response(u, sig, cls.other(), s).0 != cls {
                class_fail += 1;
            }
        }
    }
    Ok(Verdict::new(
        sandwich_fail == 0 && class_fail == 0,
        format!(
            "{} signals: sandwich violations {sandwich_fail}, class mismatches {class_fail}",
            signals.len()
        ),
    ))
}

fn pricing_identity() -> Result<Verdict> {
    let s = SystemParams::table2();
    let w = solvers::ClassWeights {
        high: 0.9,
        low: 0.1,
    };
    let mut worst = 0.0_f64;
    for sig in random_signals(&s, &w, 1000)? {
        let lhs = sig.p_h + w.high * sig.d_h;
        let rhs = (w.high - w.low) * s.mu_b() * sig.d_h * sig.d_h + sig.p_l + w.low * sig.d_l;
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(Verdict::new(
        worst < 1e-10,
        format!("max |gap| {worst:.2e} over 1000 signals"),
    ))
}

fn paper_magnitudes() -> Result<Verdict> {
    let suite = experiments::run_suite(&ExperimentConfig::default())?;
    let get = |k: Scheme| suite.summary(k).filter(|s| s.status == "ok");
    let (Some(learned), Some(social2), Some(single), Some(selfish)) = (
        get(Scheme::PriorityLearned),
        get(Scheme::PrioritySocial),
        get(Scheme::SocialSingle),
        get(Scheme::SelfishSingle),
    ) else {
        return Ok(Verdict::new(false, "a scheme failed to run".into()));
    };
    let ratio = learned.p_h / learned.p_l;
    let ratio_ok = (2.0..=4.0).contains(&ratio);
    let cost_ok = [learned, social2]
        .iter()
        .all(|s| (60.0..=80.0).contains(&s.aggregate_cost_pct));
    let order_ok = selfish.mean_x > single.mean_x
        && learned.mean_x > single.mean_x
        && social2.mean_x > single.mean_x;
    Ok(Verdict::new(
        ratio_ok && cost_ok && order_ok,
        format!(
            "p_H/p_L {ratio:.2} [{}]; cost % learned {:.1} social {:.1} [{}]; mean x selfish {:.3} social-single {:.3} \
             learned {:.3} priority-social {:.3} [{}]",
            if ratio_ok { "ok" } else { "out of [2,4]" },
            learned.aggregate_cost_pct,
            social2.aggregate_cost_pct,
            if cost_ok { "ok" } else { "out of [60,80]" },
            selfish.mean_x,
            single.mean_x,
            learned.mean_x,
            social2.mean_x,
            if order_ok { "ok" } else { "wrong order" },
        ),
    ))
}

fn math_core_properties() -> Result<Verdict> {
    let s = SystemParams::table2();
    let mut rng = Pcg64::seed_from_u64(99);
    let mut fd_worst = 0.0_f64;
    for i in 0..100 {
        let c_d = if i % 2 == 0 { 0.9 } else { 0.1 };
        let u = UserProfile::new(i, rng.random_range(10.0..75.0), c_d, 1.0 - c_d, &s)?;
        let x = rng.random_range(0.01..0.99);
        let h = 1e-6;
        let fd = (model::utility(x + h, &u, &s)? - model::utility(x - h, &u, &s)?) / (2.0 * h);
        let g = model::demand(x, &u, &s)?;
        fd_worst = fd_worst.max((fd - g).abs() / g.abs().max(1e-3));
    }

    let scn = experiments::generate_scenario(&ExperimentConfig::default())?;
    let mut beta_worst = 0.0_f64;
    let mut u0 = true;
    let mut shape = true;
    for u in &scn.users {
        u0 &= model::utility(0.0, u, &s)? == 0.0;
        let mut prev = f64::INFINITY;
        let mut zeros = 0;
        for i in 1..1000 {
            let x = i as f64 / 1000.0;
            let b = model::beta_of_x(x, u.rho)?;
            let back = (-b.exp_m1() / u.rho).exp();
            beta_worst = beta_worst.max((back - x).abs());
            let g = model::demand(x, u, &s)?;
            shape &= g < prev;
            if prev.is_finite() && prev > 0.0 && g <= 0.0 {
                zeros += 1;
            }
            prev = g;
        }
        shape &= zeros == 1;
    }

    let mut ordering = 0;
    for seed in 1..=10 {
        let scn = experiments::generate_scenario(&ExperimentConfig {
            placement_seed: seed,
            ..Default::default()
        })?;
        let cfg = SolverConfig::default();
        let a = solvers::solve_social_two_class(&scn, &cfg)?.welfare;
        let b = solvers::solve_social_single_class(&scn, &cfg)?.welfare;
        let c = solvers::solve_selfish_single_class(&scn, &cfg)?.welfare;
        if a >= b && b >= c {
            ordering += 1;
        }
    }
    Ok(Verdict::new(
        fd_worst < 1e-5 && u0 && beta_worst < 1e-12 && shape && ordering == 10,
        format!(
            "demand fd rel err {fd_worst:.2e}; U(0)=0 {u0}; beta round trip {beta_worst:.2e}; \
             monotone with one zero {shape}; welfare ordering {ordering}/10 seeds"
        ),
    ))
}

type Criterion = (&'static str, fn() -> Result<Verdict>);

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("1 queueing-formula fidelity", queue_fidelity),
        ("2 social-optimum grid search", social_optimum_grid),
        ("3 learning convergence", learning_convergence),
        ("4 incentive compatibility", incentive_compatibility),
        ("5 pricing identity", pricing_identity),
        ("6 paper-anchored magnitudes", paper_magnitudes),
        ("7 math-core property suite", math_core_properties),
    ];
    let start = Instant::now();
    let mut failures = 0;
    for (name, run) in criteria {
        let v =
            run().unwrap_or_else(|e| Verdict::new(false, format!("error[{}]: {e}", e.category())));
        if !v.passed {
            failures += 1;
        }
        println!(
            "{} criterion {name}: {}",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    let total = start.elapsed();
    println!(
        "acceptance: {}/7 passed in {:.1}s (budget 300s)",
        7 - failures,
        total.as_secs_f64()
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
