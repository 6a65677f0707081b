use mec_core::experiments::{self, ExperimentConfig};
use mec_core::pricing::{self, CongestionOracle, LearningConfig, OuterPhase, TraceRecord};
use mec_core::queue_sim::MeasureConfig;

fn scenario(n: usize) -> mec_core::Scenario {
    experiments::generate_scenario(&ExperimentConfig {
        n_users: n,
        ..Default::default()
    })
    .unwrap()
}

fn non_increasing(widths: impl Iterator<Item = f64>) -> bool {
    let w: Vec<f64> = widths.collect();
    w.windows(2).all(|p| p[1] <= p[0])
}

#[test]
fn bracket_widths_shrink_within_bisection() {
    let (_, trace) = pricing::run_learning(&scenario(100), &LearningConfig::default()).unwrap();
    let outer: Vec<&TraceRecord> = trace
        .records
        .iter()
        .filter(|r| r.outer == OuterPhase::Bisection)
        .collect();
    assert!(non_increasing(outer.iter().filter_map(|r| r.d_h_bracket)));

    // inner brackets restart with every new posted D_H
    let mut start = 0;
    for i in 1..=trace.records.len() {
        let boundary = i == trace.records.len()
            || trace.records[i].posted_d_h != trace.records[i - 1].posted_d_h;
        if boundary {
            assert!(non_increasing(
                trace.records[start..i].iter().filter_map(|r| r.d_l_bracket)
            ));
            start = i;
        }
    }
    for (i, r) in trace.records.iter().enumerate() {
        assert_eq!(r.step, i);
    }
}

#[test]
fn simulated_oracle_reaches_a_stable_priced_outcome() {
    let cfg = LearningConfig {
        oracle: CongestionOracle::Simulated {
            measure: MeasureConfig {
                horizon_jobs: 20_000,
                ..Default::default()
            },
            replications: 3,
        },
        ..Default::default()
    };
    let scn = scenario(30);
    let (out, trace) = pricing::run_learning(&scn, &cfg).unwrap();
    let sig = out.signal.unwrap();
    assert!(out.load.total() < scn.params.mu_b());
    assert!(sig.p_h >= sig.p_l && sig.p_l >= 0.0);
    assert!(!trace.is_empty());

    let (again, _) = pricing::run_learning(&scn, &cfg).unwrap();
    assert_eq!(out.x, again.x);
}
