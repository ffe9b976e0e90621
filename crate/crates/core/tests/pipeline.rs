use std::io::Write;

use dpfedavg::harness::config::{SweepAxis, SweepSection, SweepValue};
use dpfedavg::harness::run::{run_experiment, write_run_outputs};
use dpfedavg::harness::sweep::{run_sweep, write_sweep_csv};
use dpfedavg::harness::{plan, Experiment, ExperimentConfig};
use dpfedavg::mechanism::{noise_item_variance, MechanismSpec, NoiseContext, VarianceMode};
use proptest::prelude::*;

fn write(dir: &std::path::Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::File::create(&path).unwrap().write_all(body.as_bytes()).unwrap();
    path
}

#[test]
fn csv_source_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = String::from("rate,x1,x2,label\n");
    for i in 0..400 {
        let x1 = (i as f64 * 0.37).sin();
        let x2 = (i as f64 * 0.11).cos();
        let rate = 2.0 * x1 - x2 + 0.5 + 0.01 * (i % 5) as f64;
        body.push_str(&format!("{rate},{x1},{x2},{}\n", if i % 50 == 0 { "n/a".into() } else { i.to_string() }));
    }
    write(dir.path(), "loans.csv", &body);
    let config_path = write(
        dir.path(),
        "exp.toml",
        r#"
        [federation]
        clients = 8
        pool_size = 4
        local_iters = 2
        global_iters = 40
        clip_threshold = 10.0
        repeats = 3
        [dp]
        mechanism = "gaussian"
        epsilon = 50.0
        [data]
        source = "csv"
        path = "loans.csv"
        target = "rate"
        feature_columns = ["x1", "x2"]
        sort_by = "target"
        "#,
    );
    let config = ExperimentConfig::load(&config_path).unwrap();
    let exp = Experiment::from_config(&config).unwrap();
    assert_eq!(exp.dataset.n, 320);
    assert_eq!(exp.dataset.clients(), 8);
    assert_eq!(exp.federation.theta_0.dim(), 3);
    // Sorting by target makes the shards heterogeneous.
    assert!(exp.constants.gamma_noniid > 0.0);

    let (runs, summary) = run_experiment(&exp).unwrap();
    assert_eq!(runs.len(), 3);
    assert_eq!(summary.diverged_runs, 0);
    let out = dir.path().join("out");
    write_run_outputs(&out, &runs, &summary).unwrap();
    let first = std::fs::read(out.join("rounds.csv")).unwrap();
    let (runs, summary) = run_experiment(&Experiment::from_config(&config).unwrap()).unwrap();
    write_run_outputs(&out, &runs, &summary).unwrap();
    assert_eq!(first, std::fs::read(out.join("rounds.csv")).unwrap());
}

#[test]
fn noise_free_run_converges_under_its_bound() {
    let mut config = ExperimentConfig::default();
    config.federation.repeats = 4;
    let exp = Experiment::from_config(&config).unwrap();
    let (_, summary) = run_experiment(&exp).unwrap();
    let y0 = exp.constants.y0;
    assert!(summary.mean_final_y.unwrap() < 1e-3 * y0);
    for r in &summary.rounds {
        assert!(r.mean_y.unwrap() <= r.bound_y_k.unwrap());
    }
    // Partial participation makes single rounds noisy, but the trend is down.
    let first = summary.rounds.first().unwrap().mean_loss;
    let last = summary.rounds.last().unwrap().mean_loss;
    assert!(last < first);
}

#[test]
fn privacy_costs_accuracy() {
    let mut config = ExperimentConfig::default();
    config.federation.repeats = 5;
    config.federation.clip_threshold = 5.0;
    config.dp.mechanism = dpfedavg::mechanism::MechanismKind::Laplace;
    let exp = Experiment::from_config(&config).unwrap();
    let spec = SweepSection {
        axis: SweepAxis::Epsilon,
        values: vec![SweepValue::Number(100.0), SweepValue::Rule("inf".into())],
        total_iters: None,
    };
    let result = run_sweep(&exp, &spec).unwrap();
    let noisy = result.rows[0].summary.mean_final_loss;
    let clean = result.rows[1].summary.mean_final_loss;
    assert!(clean < noisy, "{clean} !< {noisy}");
    assert_eq!(result.argmin, Some(1));
    let dir = tempfile::tempdir().unwrap();
    write_sweep_csv(&dir.path().join("s.csv"), &result).unwrap();
    let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert!(text.starts_with("axis,value,mean_final_loss,std_final_loss,mean_final_y,diverged_runs\n"));
    assert!(text.contains("epsilon,inf,"));
}

#[test]
fn plan_for_default_laplace_budget() {
    let mut config = ExperimentConfig::default();
    config.dp.mechanism = dpfedavg::mechanism::MechanismKind::Laplace;
    let report = plan::plan(&Experiment::from_config(&config).unwrap()).unwrap();
    // T = 1000 → E* = 100.
    assert_eq!(report.get("optimal_local_iters"), Some("100"));
    assert_eq!(report.get("z"), Some("2"));
}

fn context(dim: usize, eta: f64, e: u64, t_g: u64) -> NoiseContext {
    NoiseContext::new(dim, eta, e, t_g, 2, 4, 40, 100.0).unwrap()
}

proptest! {
    #[test]
    fn variance_monotone(
        eps in 0.1f64..10.0,
        eta in 0.001f64..1.0,
        e in 1u64..20,
        cycles in 1u64..20,
        dim in 1usize..50,
        gaussian in any::<bool>(),
    ) {
        let spec = if gaussian {
            MechanismSpec::gaussian(eps, 1e-4, 1.0, 2.0).unwrap()
        } else {
            MechanismSpec::laplace(eps, 2.0).unwrap()
        };
        let t_g = 2 * cycles;
        let v = |s: &MechanismSpec, c: &NoiseContext| noise_item_variance(s, c, VarianceMode::Exact);
        let base = v(&spec, &context(dim, eta, e, t_g));
        prop_assert!(base > 0.0);
        prop_assert!(v(&spec.with_epsilon(eps * 1.5).unwrap(), &context(dim, eta, e, t_g)) < base);
        prop_assert!(v(&spec, &context(dim, eta, e, t_g + 2)) > base);
        prop_assert!(v(&spec, &context(dim, eta, e + 1, t_g)) > base);
        prop_assert!(v(&spec, &context(dim + 1, eta, e, t_g)) > base);
        // Ξ scales linearly with η̃, the variance quadratically.
        let scaled = v(&spec, &context(dim, 3.0 * eta, e, t_g));
        prop_assert!((scaled / base - 9.0).abs() < 1e-12);
    }
}
