use stackweight::generate::{apply_missingness, generate_scenario, MissingnessMechanism, Scenario, ScenarioId};
use stackweight::impute::{chained_impute, ChainConfig};
use stackweight::models::{fit_weighted, Family};
use stackweight::sim::{imputer_specs, outcome_columns, outcome_spec, truth};
use stackweight::stack::{complete_case_fit, compute_weights, stack, StackMode, WeightMode};
use stackweight::table::Table;

fn data(s: Scenario, n: usize, seed: u64) -> Table {
    generate_scenario(ScenarioId { scenario: s, n, seed }).unwrap()
}

#[test]
fn mcar_imputations_preserve_the_mean() {
    let full = data(Scenario::Linear, 20000, 1);
    let masked = apply_missingness(&full, &[MissingnessMechanism::mcar("x2", 0.5)], 2).unwrap();
    let cfg = ChainConfig::new(10, 3).with_outcome(&["y"]);
    let imps = chained_impute(&masked, &imputer_specs(Scenario::Linear, false), &cfg).unwrap();
    let x2 = masked.column_index("x2").unwrap();
    let pooled: f64 = imps
        .iter()
        .map(|t| t.column_values(x2).iter().sum::<f64>() / t.n_rows() as f64)
        .sum::<f64>()
        / imps.len() as f64;
    assert!(pooled.abs() <= 0.03, "pooled mean {pooled}");
}

fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn extra_cycles_do_not_shift_the_imputation_distribution() {
    let full = data(Scenario::Logistic, 3000, 4);
    let masked = apply_missingness(&full, &Scenario::Logistic.mechanisms([0.5, 1.0, 0.0]), 5).unwrap();
    let specs = imputer_specs(Scenario::Logistic, false);
    let x2 = masked.column_index("x2").unwrap();
    let missing: Vec<usize> = (0..masked.n_rows()).filter(|&r| !masked.is_observed(r, x2)).collect();
    let draws = |cycles: usize, seed: u64| -> Vec<f64> {
        let mut cfg = ChainConfig::new(5, seed).with_outcome(&["y"]);
        cfg.cycles = cycles;
        chained_impute(&masked, &specs, &cfg)
            .unwrap()
            .iter()
            .flat_map(|t| missing.iter().map(|&r| t.value(r, x2)).collect::<Vec<_>>())
            .collect()
    };
    let a = draws(10, 6);
    let b = draws(15, 7);
    let (n, m) = (a.len() as f64, b.len() as f64);
    // Two-sample KS critical value at α = 0.001.
    let crit = 1.949 * ((n + m) / (n * m)).sqrt();
    let d = ks_statistic(a, b);
    assert!(d < crit, "D = {d}, critical {crit}");
}

#[test]
fn ks_statistic_oracle() {
    assert_eq!(ks_statistic(vec![1.0, 2.0], vec![1.0, 2.0]), 0.0);
    assert_eq!(ks_statistic(vec![1.0, 2.0], vec![3.0, 4.0]), 1.0);
    assert!((ks_statistic(vec![1.0, 3.0], vec![2.0, 4.0]) - 0.5).abs() < 1e-15);
}

#[test]
fn breslow_recovers_unit_baseline_hazard() {
    // Exponential event times with rate exp(η) have Λ₀(t) = t.
    let full = data(Scenario::Survival, 100_000, 8);
    let spec = outcome_spec(Scenario::Survival);
    let cc = complete_case_fit(&full, &spec).unwrap();
    let b = cc.params.baseline.as_ref().unwrap();
    let time = full.column_values(full.column_index("time").unwrap());
    let status = full.column_values(full.column_index("status").unwrap());
    for t in [0.25, 0.5, 1.0, 1.5] {
        let events = time.iter().zip(&status).filter(|(&x, &d)| x <= t && d == 1.0).count() as f64;
        let se = t / events.sqrt();
        let got = b.cumulative(t);
        assert!((got - t).abs() <= 4.0 * se, "Λ₀({t}) = {got}, se {se}");
    }
    for (j, want) in truth(Scenario::Survival).iter().enumerate() {
        assert!((cc.fit.coef[j] - want).abs() < 0.03);
    }
}

#[test]
fn weighted_stack_recovers_interaction_at_large_n() {
    let s = Scenario::Interaction;
    let full = data(s, 50_000, 9);
    let masked = apply_missingness(&full, &s.mechanisms([0.0, 1.0, -1.0]), 10).unwrap();
    let spec = outcome_spec(s);
    let cols = outcome_columns(s);
    // Self-normalized weights over few candidates are biased; M = 10 leaves
    // x1 off by about 0.12 here.
    let cfg = ChainConfig::new(50, 11).with_outcome(&cols);
    let imps = chained_impute(&masked, &imputer_specs(s, false), &cfg).unwrap();
    let st = stack(&masked, &imps, StackMode::Short).unwrap();
    let cc = complete_case_fit(&masked, &spec).unwrap();
    let (st, _) = compute_weights(&st, &cc, &spec, WeightMode::Mle, 12).unwrap();
    let fit = fit_weighted(st.table(), &spec, st.weights().unwrap()).unwrap();
    assert_eq!(fit.family, Family::Gaussian);
    for (j, want) in truth(s).iter().enumerate() {
        assert!((fit.coef[j] - want).abs() < 0.04, "{} = {}", fit.names[j], fit.coef[j]);
    }
}
