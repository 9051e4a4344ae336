use std::path::PathBuf;

use agmp_core::bench::{gen_instance, run_benchmark, BenchConfig, BenchError, Solver};
use agmp_core::sop::SopError;

fn config(name: &str) -> BenchConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/bench").join(name);
    BenchConfig::from_toml(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generated_instances() {
    let a = gen_instance(20, 7, 2.0, 0.1).unwrap();
    assert_eq!(a, gen_instance(20, 7, 2.0, 0.1).unwrap());
    assert_ne!(a, gen_instance(20, 8, 2.0, 0.1).unwrap());
    assert_eq!(a.len(), 22);
    for seed in 0..20 {
        let inst = gen_instance(10 + seed as usize, seed, 2.0, 0.1).unwrap();
        let mut max: f64 = 0.0;
        for i in 0..inst.len() {
            for j in 0..inst.len() {
                max = max.max(inst.d(i, j));
            }
        }
        assert!((max - 1.0).abs() < 1e-9);
        assert_eq!(inst.nodes()[inst.start()].reward, 0.0);
        assert_eq!(inst.nodes()[inst.end()].reward, 0.0);
        assert!(inst.nodes().iter().all(|n| n.reward <= 1.0));
    }
    assert!(gen_instance(1, 0, 2.0, 0.1).is_err());
}

#[test]
fn small_table_has_three_rows_and_dominance() {
    let report = run_benchmark(&config("small.toml")).unwrap();
    assert_eq!(report.rows.len(), 3);
    let get = |s| report.rows.iter().find(|r| r.solver == s).unwrap();
    let (exact, greedy) = (&get(Solver::Exact).metrics, &get(Solver::GreedyOffline).metrics);
    let se = (exact.r_stderr.unwrap().powi(2) + greedy.r_stderr.unwrap().powi(2)).sqrt();
    assert!(exact.r >= greedy.r - 2.0 * se);
    assert!(get(Solver::Exact).wall.as_secs_f64() < 10.0);

    let text = report.to_text();
    assert_eq!(text.lines().count(), 5, "{text}");
    assert!(text.starts_with("graph"));
}

#[test]
fn json_is_reproducible() {
    let mut cfg = config("table2.toml");
    cfg.sizes = vec![12, 16];
    cfg.trials = 30;
    let a = run_benchmark(&cfg).unwrap().to_json();
    assert_eq!(a, run_benchmark(&cfg).unwrap().to_json());
    assert!(!a.contains("wall"));
    cfg.seed += 1;
    assert_ne!(a, run_benchmark(&cfg).unwrap().to_json());
}

#[test]
fn single_trial_marks_stderr_undefined() {
    let mut cfg = config("table2.toml");
    cfg.sizes = vec![10];
    cfg.trials = 1;
    let report = run_benchmark(&cfg).unwrap();
    assert!(report.rows.iter().all(|r| r.metrics.r_stderr.is_none()));
    assert!(report.to_text().contains("undefined"));
    assert!(report.to_json().contains("\"R_stderr\": null"));
}

#[test]
fn exact_on_big_graphs_is_too_large() {
    let mut cfg = config("small.toml");
    cfg.sizes = vec![20];
    let err = run_benchmark(&cfg).unwrap_err();
    assert!(matches!(err, BenchError::Sop(SopError::TooLarge { nodes: 22, .. })), "{err}");
}
