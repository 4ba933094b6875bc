use rotqec::codes::CodeParams;
use rotqec::protocol_seq::{run_sequential, MeasurementMode, SeqInitial, SeqScenario};

fn short(code: CodeParams) -> SeqScenario {
    let mut sc = SeqScenario::new(code);
    sc.duration = 0.2;
    sc.baseline = false;
    sc.initial = SeqInitial::Plus;
    sc
}

#[test]
fn trajectory_average_matches_the_ensemble() {
    let sc = short(CodeParams::Cs { j_c: 7, m1: 2, m2: 5 });
    let ensemble = *run_sequential(&sc).unwrap().series.column("fidelity").unwrap().last().unwrap();
    let n = 100;
    let samples: Vec<f64> = (0..n)
        .map(|seed| {
            let mut t = sc.clone();
            t.measurement = MeasurementMode::Trajectory { seed };
            *run_sequential(&t).unwrap().series.column("fidelity").unwrap().last().unwrap()
        })
        .collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!((mean - ensemble).abs() < 4.0 * se + 1e-9, "{mean} ± {se} vs {ensemble}");
}

#[test]
fn trajectories_are_reproducible_per_seed() {
    let mut sc = short(CodeParams::A { j_c: 7, m0: -2, m1: 2 });
    sc.measurement = MeasurementMode::Trajectory { seed: 11 };
    let a = run_sequential(&sc).unwrap().series.to_csv();
    let b = run_sequential(&sc).unwrap().series.to_csv();
    assert_eq!(a, b);
}

#[test]
fn approximate_code_ignores_the_refresh_flag() {
    let mut sc = short(CodeParams::A { j_c: 7, m0: -2, m1: 2 });
    let with = run_sequential(&sc).unwrap();
    sc.refresh = false;
    let without = run_sequential(&sc).unwrap();
    assert_eq!(with.series.to_csv(), without.series.to_csv());
}

#[test]
fn refresh_lengthens_rounds_but_not_the_first_free_period() {
    let mut sc = short(CodeParams::Cs { j_c: 7, m1: 2, m2: 5 });
    sc.duration = 0.5;
    let with = run_sequential(&sc).unwrap();
    sc.refresh = false;
    let without = run_sequential(&sc).unwrap();
    assert!(with.rounds < without.rounds, "{} {}", with.rounds, without.rounds);
    let (a, b) = (with.series.column("fidelity").unwrap(), without.series.column("fidelity").unwrap());
    for k in 0..=5 {
        assert_eq!(a[k], b[k], "t = {}", with.series.times[k]);
    }
}

#[test]
fn ensemble_bookkeeping() {
    let sc = short(CodeParams::Cs { j_c: 7, m1: 2, m2: 5 });
    let run = run_sequential(&sc).unwrap();
    assert_eq!(run.pruned_weight, 0.0);
    assert!((run.final_state.trace() - 1.0).abs() < 1e-8);
    let s = &run.series;
    for k in 0..s.len() {
        let row = &s.rows[k];
        let get = |name: &str| row[s.columns.iter().position(|c| c == name).unwrap()];
        assert!((get("trace") - 1.0).abs() < 1e-8);
        let total = get("pop_below") + get("pop_code") + get("pop_above") + get("leakage");
        assert!((total - 1.0).abs() < 1e-9);
        assert!((get("f_plus") + get("f_minus") - 1.0).abs() < 1e-12);
    }
}

#[test]
fn invalid_scenarios_are_rejected() {
    let mut sc = SeqScenario::new(CodeParams::Cs { j_c: 7, m1: 2, m2: 4 });
    assert!(run_sequential(&sc).is_err());
    sc.code = CodeParams::Cs { j_c: 7, m1: 2, m2: 5 };
    sc.spacing = 0.0;
    assert!(run_sequential(&sc).is_err());
    sc.spacing = 0.05;
    sc.j_max = 7;
    assert!(run_sequential(&sc).is_err());
}
