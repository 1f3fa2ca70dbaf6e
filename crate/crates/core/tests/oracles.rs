mod common;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{density_loglik, numerical_mle, reference_dataset, rel_err, theta1, theta3, Compensated};
use epochttf::estimate::{asymptotic_ci, bootstrap_ci, fit_mle, log_likelihood, Param, ParamSet};
use epochttf::glm::{
    epoch_average, epoch_covariates, fit_glm, forward_select, glm_log_likelihood, hessian_diagonal, GlmModel, GlmTarget,
};
use epochttf::io::{ingest, save_event_log, CensoredPolicy};
use epochttf::model::{Dataset, Epoch, Event, EventType};
use epochttf::predict::{expected_time_to_fail, predict_all, predict_out_of_sample, Prediction, PredictionModels};
use epochttf::simulate::{
    generate_dataset, generate_with_covariates, replicate_rng, run_study, sample_epoch, sample_poisson,
    CovariateDesign, StudyConfig,
};

#[test]
fn loglik_matches_density_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..20 {
        let d = generate_dataset(&theta1(), 20, seed).unwrap();
        let t = ParamSet::new(
            rng.random_range(0.01..0.1),
            rng.random_range(0.01..0.1),
            rng.random_range(20.0..120.0),
            rng.random_range(0.1..0.9),
        )
        .unwrap();
        let ours = log_likelihood(&t, &d).unwrap();
        let oracle = density_loglik(t.lambda1, t.lambda2, t.mu, t.p, &d);
        assert!(rel_err(ours, oracle) < 1e-10, "{ours} vs {oracle}");
    }
}

#[test]
fn ten_epoch_fits_match_numerical_maximizer() {
    for seed in 0..10 {
        let d = generate_dataset(&theta3(), 10, 500 + seed).unwrap();
        let e = fit_mle(&d).unwrap().estimates;
        let numeric = numerical_mle(&d);
        let closed = [e.lambda1.unwrap(), e.lambda2.unwrap(), e.mu, e.p];
        for k in 0..4 {
            assert!(rel_err(numeric[k], closed[k]) < 1e-6, "seed {seed}, parameter {k}");
        }
    }
}

#[test]
fn reference_counts_give_reference_estimates_and_information() {
    let fit = fit_mle(&reference_dataset()).unwrap();
    assert_eq!(fit.partition.starts_ok(), 35);
    assert_eq!(fit.partition.starts_alert(), 10);
    assert!((fit.estimates.mu - 3145.0 / 45.0).abs() < 1e-12);
    assert!((fit.estimates.mu - 69.8889).abs() < 5e-5);
    assert!((fit.estimates.p - 0.7778).abs() < 5e-5);

    let info = fit.information;
    assert!(rel_err(info.lambda1.unwrap(), 2.358e6) < 1e-3);
    assert!(rel_err(info.std_error(Param::Lambda1).unwrap(), 6.512e-4) < 1e-3);
    assert!((info.p - 260.4).abs() < 0.1);

    let ci = asymptotic_ci(&fit, 0.05).unwrap();
    let mu = ci.get(Param::Mu).unwrap();
    assert!((mu.lower - 67.446).abs() < 1e-3 && (mu.upper - 72.332).abs() < 1e-3);
    assert!((mu.lower - 67.4114).abs() < 0.04 && (mu.upper - 72.3664).abs() < 0.04);
}

#[test]
fn bootstrap_interval_contains_estimate() {
    let theta = theta1();
    let mut inside = [0usize; 4];
    let runs = 500;
    for i in 0..runs {
        let d = generate_dataset(&theta, 30, 20_000 + i).unwrap();
        let fit = fit_mle(&d).unwrap();
        let boot = bootstrap_ci(&fit, d.n(), 200, 0.05, i).unwrap();
        for (k, param) in Param::ALL.into_iter().enumerate() {
            let est = fit.estimates.get(param).unwrap();
            inside[k] += boot.intervals.get(param).unwrap().contains(est) as usize;
        }
    }
    for (k, param) in Param::ALL.into_iter().enumerate() {
        assert!(inside[k] as f64 >= 0.99 * runs as f64, "{param}: {}/{runs}", inside[k]);
    }
}

#[test]
fn sampled_epochs_follow_the_model_means() {
    let theta = theta1();
    let mut rng = replicate_rng(3, 0);
    let (mut events, mut ok_time, mut ok_count) = (0usize, 0.0, 0usize);
    let epochs = 100_000;
    for _ in 0..epochs {
        let e = sample_epoch(&theta, &mut rng);
        events += e.event_count();
        for ev in e.running().filter(|ev| ev.kind == EventType::RunOk) {
            ok_time += ev.duration;
            ok_count += 1;
        }
    }
    let mean_r = events as f64 / epochs as f64;
    assert!((mean_r - 70.95).abs() <= 0.1, "{mean_r}");
    assert!((ok_time / ok_count as f64 - 33.33).abs() <= 0.4);
}

#[test]
fn poisson_mean_within_three_standard_errors() {
    for (k, mu) in [0.5, 5.0, 29.5, 30.5, 70.0, 150.0].into_iter().enumerate() {
        let mut rng = replicate_rng(9, k as u64);
        let n = 100_000;
        let total: u64 = (0..n).map(|_| 1 + sample_poisson(mu, &mut rng)).sum();
        let mean = total as f64 / n as f64;
        let se = (mu / n as f64).sqrt();
        assert!((mean - (mu + 1.0)).abs() <= 3.0 * se, "mu {mu}: mean R {mean}");
    }
}

#[test]
fn small_samples_recover_lambda1() {
    let within = (0..1000)
        .filter(|&s| {
            let l1 = fit_mle(&generate_dataset(&theta1(), 50, s).unwrap()).unwrap().estimates.lambda1.unwrap();
            (l1 - 0.03).abs() <= 0.003
        })
        .count();
    assert!(within >= 950, "{within}");
}

#[test]
fn large_sample_recovers_lambda1() {
    let d = generate_dataset(&theta1(), 10_000, 77).unwrap();
    let l1 = fit_mle(&d).unwrap().estimates.lambda1.unwrap();
    assert!((l1 - 0.03).abs() <= 0.001, "{l1}");
}

fn study(theta: ParamSet, n: usize, seed: u64) -> epochttf::simulate::StudyReport {
    run_study(&StudyConfig { replications: 1000, bootstrap_m: 0, ..StudyConfig::new(theta, n, seed) }).unwrap()
}

#[test]
fn study_reproduces_reference_cells() {
    let small = study(theta1(), 50, 100);
    assert!(rel_err(small.row(Param::Lambda1).mse, 5.0713e-7) <= 0.2);
    let large = study(theta1(), 150, 101);
    assert!(rel_err(large.row(Param::Mu).avg_bias, 0.5448) <= 0.15, "{}", large.row(Param::Mu).avg_bias);
}

#[test]
fn alert_rate_interval_agrees_with_reference_mse_and_bootstrap() {
    let report = study(theta3(), 100, 102);
    let row = report.row(Param::Lambda2);
    assert!(rel_err(row.mse, 1.0891e-7) <= 0.2, "{}", row.mse);
    let implied = 1.959964 * 1.0891e-7f64.sqrt();
    assert!(rel_err((row.asym.1 - row.asym.0) / 2.0, implied) <= 0.1, "{:?}", row.asym);
    assert!((row.asym.0 - 0.0194).abs() <= 5e-4 && (row.asym.1 - 0.0206).abs() <= 5e-4, "{:?}", row.asym);
}

#[test]
#[ignore = "the reference interval (0.0176, 0.0224) is 3.7 times wider than its own MSE allows"]
fn alert_rate_interval_matches_reference_interval() {
    let alert = study(theta3(), 100, 102).row(Param::Lambda2).asym;
    assert!((alert.0 - 0.0176).abs() <= 5e-4 && (alert.1 - 0.0224).abs() <= 5e-4, "{alert:?}");
}

#[test]
fn study_refines_with_more_epochs() {
    for (k, theta) in [common::theta1(), common::theta2(), common::theta3()].into_iter().enumerate() {
        let reports: Vec<_> = [50, 100, 150].iter().map(|&n| study(theta, n, 200 + 10 * k as u64 + n as u64)).collect();
        for param in Param::ALL {
            let mse: Vec<f64> = reports.iter().map(|r| r.row(param).mse).collect();
            assert!(mse[0] >= mse[1] && mse[1] >= mse[2], "theta{} {param}: {mse:?}", k + 1);
            let width = |r: &epochttf::simulate::StudyReport| r.row(param).asym.1 - r.row(param).asym.0;
            let ratio = width(&reports[0]) / width(&reports[2]);
            assert!((1.5..=2.1).contains(&ratio), "theta{} {param}: width ratio {ratio}", k + 1);
        }
    }
}

#[test]
fn expected_ttf_within_three_standard_errors_of_simulation() {
    for (k, theta) in [common::theta1(), common::theta2(), common::theta3()].into_iter().enumerate() {
        let mut rng = replicate_rng(50 + k as u64, 0);
        let (mut sum, mut sq) = (Compensated::default(), Compensated::default());
        let n = 1_000_000;
        for _ in 0..n {
            let t = sample_epoch(&theta, &mut rng).total_duration();
            sum.add(t);
            sq.add(t * t);
        }
        let mean = sum.value() / n as f64;
        let se = ((sq.value() / n as f64 - mean * mean) / n as f64).sqrt();
        let closed = expected_time_to_fail(&theta).unwrap();
        assert!((mean - closed).abs() <= 3.0 * se, "theta{}: {mean} vs {closed} (se {se})", k + 1);
    }
}

fn epoch_with_readings(ok: &[f64]) -> Epoch {
    let mut events = Vec::new();
    for (k, &v) in ok.iter().enumerate() {
        events.push(Event::new(EventType::RunOk, 10.0, vec![v]));
        if k + 1 < ok.len() {
            events.push(Event::new(EventType::RunAlert, 5.0, vec![0.0]));
        }
    }
    events.push(Event::fail());
    Epoch::new(1, events)
}

#[test]
fn run_ok_readings_average_per_epoch() {
    let f4 = [101.1783, 99.9445, 99.7284, 97.3887, 101.1746, 100.8110, 99.7719, 103.5241, 103.8081];
    let e = epoch_with_readings(&f4);
    assert_eq!(e.event_count(), 17);
    let avg = epoch_average(&e, GlmTarget::Lambda1, 1).unwrap();
    assert!((avg[0] - 100.8144).abs() < 5e-5, "{}", avg[0]);
}

#[test]
fn glm_components_match_per_event_sums() {
    let design = CovariateDesign {
        sensor_names: vec!["a".into(), "b".into()],
        sensor_moments: vec![(1.0, 0.5), (3.0, 2.0)],
        lambda1: (0.03f64.ln(), vec![0.2, -0.1]),
        lambda2: (0.08f64.ln(), vec![0.1, 0.05]),
        mu: (20f64.ln(), vec![-0.2, 0.1]),
        p: 0.6,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for seed in 0..10 {
        let d = generate_with_covariates(&design, 10, seed).unwrap();
        for target in GlmTarget::ALL {
            let x = epoch_covariates(&d, target).unwrap();
            let coefs =
                [("a".to_string(), rng.random_range(-0.5..0.5)), ("b".to_string(), rng.random_range(-0.5..0.5))];
            let model = GlmModel::new(target, rng.random_range(-4.0..3.0), coefs.into_iter().collect(), 0.6);
            let mut acc = Compensated::default();
            for e in &d.epochs {
                let readings = &e.events[0].sensors;
                let rate = model.rate(readings);
                match target {
                    GlmTarget::Mu => {
                        let k = (e.event_count() - 1) as f64;
                        acc.add(k * rate.ln() - rate);
                    }
                    _ => {
                        let kind = if target == GlmTarget::Lambda1 { EventType::RunOk } else { EventType::RunAlert };
                        for ev in e.running().filter(|ev| ev.kind == kind) {
                            acc.add(rate.ln() - rate * ev.duration);
                        }
                    }
                }
            }
            let ours = glm_log_likelihood(&model, &d, &x).unwrap();
            assert!(rel_err(ours, acc.value()) < 1e-10, "{target}: {ours} vs {}", acc.value());
        }
    }
}

#[test]
fn hessian_diagonal_is_negative_and_matches_second_difference() {
    let design = CovariateDesign {
        sensor_names: vec!["a".into()],
        sensor_moments: vec![(0.0, 1.0)],
        lambda1: (0.03f64.ln(), vec![0.2]),
        lambda2: (0.08f64.ln(), vec![0.1]),
        mu: (70f64.ln(), vec![-0.1]),
        p: 0.7,
    };
    let d = generate_with_covariates(&design, 50, 4).unwrap();
    for target in GlmTarget::ALL {
        let x = epoch_covariates(&d, target).unwrap();
        let model = fit_glm(&d, &x, target, 0.7).unwrap();
        let diag = hessian_diagonal(&model, &d, &x).unwrap();
        assert!(diag.iter().all(|&h| h < 0.0));
        let h = 1e-4;
        let shifted = |delta: f64| {
            let mut m = model.clone();
            m.intercept += delta;
            glm_log_likelihood(&m, &d, &x).unwrap()
        };
        let second = (shifted(h) - 2.0 * shifted(0.0) + shifted(-h)) / (h * h);
        assert!(rel_err(second, diag[0]) < 1e-4, "{target}: {second} vs {}", diag[0]);
    }
}

#[test]
fn known_coefficients_recovered_within_posterior_errors() {
    let beta = [0.03f64.ln(), 0.2, -0.1];
    let theta = theta1();
    let mut design = CovariateDesign::inert(&theta, vec!["a".into(), "b".into()], vec![(0.0, 1.0), (0.0, 1.0)]);
    design.lambda1 = (beta[0], vec![beta[1], beta[2]]);
    let seeds = 200;
    let mut covered = 0;
    for seed in 0..seeds {
        let d = generate_with_covariates(&design, 400, 9000 + seed).unwrap();
        let x = epoch_covariates(&d, GlmTarget::Lambda1).unwrap();
        let model = fit_glm(&d, &x, GlmTarget::Lambda1, 0.7).unwrap();
        let est = [model.intercept, model.coefficients["a"], model.coefficients["b"]];
        let mut info = DMatrix::<f64>::zeros(3, 3);
        for (e, row) in d.epochs.iter().zip(&x.rows) {
            let row = row.as_ref().unwrap();
            let (_, exposure) = GlmTarget::Lambda1.epoch_counts(e).unwrap();
            let z = DVector::from_vec(vec![1.0, row[0], row[1]]);
            info += &z * z.transpose() * (exposure * model.rate(row));
        }
        let cov = info.try_inverse().unwrap();
        if (0..3).all(|j| (est[j] - beta[j]).abs() <= 3.0 * cov[(j, j)].sqrt()) {
            covered += 1;
        }
    }
    assert!(covered as f64 >= 0.95 * seeds as f64, "{covered}/{seeds}");
}

#[test]
fn pure_noise_selects_few_columns() {
    let names: Vec<String> = (1..=5).map(|k| format!("noise{k}")).collect();
    let design = CovariateDesign::inert(&theta1(), names, vec![(0.0, 1.0); 5]);
    let seeds = 200;
    let small = (0..seeds)
        .filter(|s| {
            let d = generate_with_covariates(&design, 400, 300 + s).unwrap();
            let x = epoch_covariates(&d, GlmTarget::Lambda1).unwrap();
            forward_select(&d, &x, GlmTarget::Lambda1, 0.7).unwrap().model.coefficients.len() <= 2
        })
        .count();
    assert!(small as f64 >= 0.8 * seeds as f64, "{small}/{seeds}");
}

#[test]
fn single_active_covariate_is_selected_first() {
    let names: Vec<String> = (1..=5).map(|k| format!("x{k}")).collect();
    for target in [GlmTarget::Lambda1, GlmTarget::Mu] {
        let mut design = CovariateDesign::inert(&theta1(), names.clone(), vec![(0.0, 1.0); 5]);
        match target {
            GlmTarget::Lambda1 => design.lambda1.1[2] = 0.5,
            _ => design.mu.1[2] = 0.5,
        }
        let seeds = 100;
        let first = (0..seeds)
            .filter(|s| {
                let d = generate_with_covariates(&design, 400, 600 + s).unwrap();
                let x = epoch_covariates(&d, target).unwrap();
                let sel = forward_select(&d, &x, target, 0.7).unwrap();
                sel.model.trail.first().is_some_and(|step| step.column == "x3")
            })
            .count();
        assert!(first as f64 >= 0.95 * seeds as f64, "{target}: {first}/{seeds}");
    }
}

fn mean_relative_error(scale: f64, seeds: u64) -> f64 {
    let mut total = 0.0;
    for seed in 0..seeds {
        let design = CovariateDesign {
            sensor_names: vec!["a".into(), "b".into()],
            sensor_moments: vec![(0.0, 1.0), (0.0, 1.0)],
            lambda1: (0.03f64.ln(), vec![0.4 * scale, -0.3 * scale]),
            lambda2: (0.08f64.ln(), vec![0.3 * scale, 0.2 * scale]),
            mu: (70f64.ln(), vec![0.2 * scale, -0.2 * scale]),
            p: 0.7,
        };
        let d = generate_with_covariates(&design, 400, seed).unwrap();
        let fit = |t| fit_glm(&d, &epoch_covariates(&d, t).unwrap(), t, 0.7).unwrap();
        let models = PredictionModels {
            lambda1: fit(GlmTarget::Lambda1),
            lambda2: fit(GlmTarget::Lambda2),
            mu: fit(GlmTarget::Mu),
        };
        let preds = predict_all(&models, &d, 0.7).unwrap();
        let err: f64 = preds
            .iter()
            .zip(&d.epochs)
            .map(|(p, e)| (p.expected_ttf - e.total_duration()).abs() / e.total_duration())
            .sum();
        total += err / preds.len() as f64;
    }
    total / seeds as f64
}

#[test]
fn prediction_error_shrinks_with_sensor_effects() {
    let errors: Vec<f64> = [2.0, 1.0, 0.0].iter().map(|&s| mean_relative_error(s, 60)).collect();
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
}

#[test]
fn out_of_sample_is_mean_of_epoch_predictions() {
    let values = [
        2590.47, 11407.73, 6261.52, 232.38, 928.50, 3931.49, 1394.65, 3202.23, 2555.12, 1963.56, 2680.50, 3409.98,
        1771.74, 765.55, 869.05, 35.02, 3345.12, 2951.75, 3102.31, 951.87, 602.86, 3569.43, 2833.86, 1548.36, 1357.88,
        1340.19, 1161.21, 142.11, 142.11, 1508.72, 425.27, 429.86, 2451.67, 3331.50, 516.83, 239.37, 2039.87, 49.27,
        130.81, 108.31, 676.48, 2168.00, 1855.81, 170.77, 170.77,
    ];
    let preds: Vec<Prediction> = values
        .iter()
        .enumerate()
        .map(|(k, &t)| Prediction {
            epoch_id: Some(k as u64 + 1),
            lambda1: None,
            lambda2: None,
            mu: None,
            p: 0.7778,
            expected_ttf: t,
        })
        .collect();
    let oos = predict_out_of_sample(&preds).unwrap();
    assert_eq!(oos.epoch_id, None);
    assert!((oos.expected_ttf - 1851.5969).abs() < 1e-3, "{}", oos.expected_ttf);
}

#[test]
fn generated_logs_survive_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    let d = generate_dataset(&theta1(), 25, 8).unwrap();
    save_event_log(&d, &path).unwrap();
    let back = ingest(&path, CensoredPolicy::Reject).unwrap().dataset;
    assert_eq!(back, d);
    let design = CovariateDesign::inert(&theta1(), vec!["a".into()], vec![(5.0, 2.0)]);
    let d = generate_with_covariates(&design, 10, 8).unwrap();
    save_event_log(&d, &path).unwrap();
    let back: Dataset = ingest(&path, CensoredPolicy::Reject).unwrap().dataset;
    assert_eq!(back, d);
}

#[test]
#[ignore = "runs about five minutes; use --ignored"]
fn full_scale_bootstrap_average_interval() {
    let cfg = StudyConfig { replications: 1000, bootstrap_m: 2000, ..StudyConfig::new(theta1(), 150, 5) };
    let (lo, hi) = run_study(&cfg).unwrap().row(Param::Lambda1).boot.unwrap();
    println!("average bootstrap interval for lambda1: ({lo:.5}, {hi:.5})");
    assert!((lo - 0.0292).abs() <= 2e-4 && (hi - 0.0308).abs() <= 2e-4);
}
