use oed_core::evalstats::{confusion, metrics, one_tailed_t_test, render_report, ReportOptions, TTestKind};
use oed_core::trainer::TrialResult;
use oed_core::ConfusionCounts;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn thousand_pair_confusion_matches_a_plain_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let probs: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
    let gold: Vec<u8> = (0..1000).map(|_| rng.random_range(0..2u8)).collect();
    let c = confusion(&probs, &gold, 0.5).unwrap();

    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..1000 {
        let pred = probs[i] >= 0.5;
        if pred && gold[i] == 1 {
            tp += 1;
        } else if pred {
            fp += 1;
        } else if gold[i] == 1 {
            fn_ += 1;
        } else {
            tn += 1;
        }
    }
    assert_eq!((c.tp, c.fp, c.tn, c.fn_), (tp, fp, tn, fn_));
    let m = c.metrics();
    assert_eq!(m.sensitivity, tp as f64 / (tp + fn_) as f64);
    assert_eq!(m.specificity, tn as f64 / (tn + fp) as f64);
}

#[test]
fn harmonic_mean_of_sensitivity_and_specificity() {
    // sens 0.706 and spec 0.928 as exact ratios.
    let c = ConfusionCounts { tp: 706, fn_: 294, tn: 928, fp: 72 };
    let m = metrics(&c);
    assert!((m.sensitivity - 0.706).abs() < 1e-12);
    assert!((m.specificity - 0.928).abs() < 1e-12);
    assert!((m.f1_sens_spec - 0.802).abs() < 5e-4, "{}", m.f1_sens_spec);
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

/// Upper tail of Student's t by Simpson integration of the unnormalised
/// density after the substitution x = tan(theta).
fn t_upper_tail(t: f64, df: f64) -> f64 {
    let f = |theta: f64| {
        let x = theta.tan();
        let c = theta.cos();
        (1.0 + x * x / df).powf(-(df + 1.0) / 2.0) / (c * c)
    };
    let simpson = |a: f64, b: f64| {
        let n = 200_000;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let edge = std::f64::consts::FRAC_PI_2 - 1e-12;
    simpson(t.atan(), edge) / simpson(-edge, edge)
}

#[test]
fn welch_p_matches_numeric_integration() {
    let a = [0.61, 0.58, 0.66, 0.70, 0.55, 0.63, 0.59, 0.68, 0.60, 0.64];
    let b = [0.71, 0.69, 0.75, 0.66, 0.74, 0.78, 0.70, 0.72, 0.68, 0.77];
    let (qa, qb) = (var(&a) / 10.0, var(&b) / 10.0);
    let t = (mean(&b) - mean(&a)) / (qa + qb).sqrt();
    let df = (qa + qb).powi(2) / (qa * qa / 9.0 + qb * qb / 9.0);
    let oracle = t_upper_tail(t, df);
    let p = one_tailed_t_test(&a, &b, TTestKind::Welch).unwrap();
    assert!((p - oracle).abs() < 1e-6, "{p} vs {oracle}");
    assert!(p < 0.01);

    let pooled = (9.0 * var(&a) + 9.0 * var(&b)) / 18.0;
    let t = (mean(&b) - mean(&a)) / (pooled * 0.2).sqrt();
    let student = one_tailed_t_test(&a, &b, TTestKind::Student).unwrap();
    assert!((student - t_upper_tail(t, 18.0)).abs() < 1e-6);
    // Reversed alternative gives the complement.
    let rev = one_tailed_t_test(&b, &a, TTestKind::Welch).unwrap();
    assert!((rev + p - 1.0).abs() < 1e-9);
}

#[test]
fn grid_report_means_equal_external_averages() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut results = Vec::new();
    for v in 0..7 {
        for seed in 1..=10u64 {
            let test = ConfusionCounts {
                tp: rng.random_range(1..50),
                fp: rng.random_range(1..50),
                tn: rng.random_range(100..500),
                fn_: rng.random_range(1..50),
            };
            results.push(TrialResult {
                variant: format!("v{v}"),
                seed,
                best_epoch: 1,
                epochs_run: 1,
                best_validation_f1: 0.0,
                train: ConfusionCounts::default(),
                validation: ConfusionCounts::default(),
                test,
                wall_clock_seconds: None,
            });
        }
    }
    let report = render_report(&results, &ReportOptions::default()).unwrap();
    assert_eq!(report.rows.len(), 7);

    let mut best = (String::new(), f64::MIN);
    for row in &report.rows {
        let (mut f1, mut sens, mut spec) = (Vec::new(), Vec::new(), Vec::new());
        for r in results.iter().filter(|r| r.variant == row.variant) {
            let c = &r.test;
            let p = c.tp as f64 / (c.tp + c.fp) as f64;
            let s = c.tp as f64 / (c.tp + c.fn_) as f64;
            f1.push(2.0 * p * s / (p + s));
            sens.push(s);
            spec.push(c.tn as f64 / (c.tn + c.fp) as f64);
        }
        assert_eq!(row.seeds, 10);
        assert!((row.mean_f1 - mean(&f1)).abs() < 1e-12);
        assert!((row.mean_sens - mean(&sens)).abs() < 1e-12);
        assert!((row.mean_spec - mean(&spec)).abs() < 1e-12);
        if mean(&f1) > best.1 {
            best = (row.variant.clone(), mean(&f1));
        }
    }
    assert_eq!(report.best, best.0);
}
