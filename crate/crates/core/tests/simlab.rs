use pals::data::covariance;
use pals::simlab::{
    ar_covariance, consistency_diagnostic, generate, run_table, write_csv, LambdaPolicy, Method,
    ModelId, NoiseConvention, PredictorCase, SimModel, TableConfig, Truth,
};

fn model(id: ModelId, case: PredictorCase) -> SimModel {
    SimModel::new(id, 10, case).unwrap()
}

#[test]
fn noise_free_model_three_is_first_coordinate() {
    let m = model(ModelId::III, PredictorCase::Uniform).with_noise_scale(0.0);
    let (data, truth) = generate(&m, 50, 4).unwrap();
    assert_eq!(data.y(), &data.x().column(0).into_owned());
    let Truth::Basis(b) = truth else { panic!("linear truth expected") };
    assert_eq!(b[(0, 0)], 1.0);
    assert_eq!(b[(1, 1)], 1.0);
    assert!(data.x().iter().all(|v| (-1.0..1.0).contains(v)));
}

#[test]
fn correlated_case_covariance() {
    let (data, _) = generate(&model(ModelId::I, PredictorCase::Correlated), 10_000, 5).unwrap();
    let diff = covariance(data.x()) - ar_covariance(10);
    assert!(diff.amax() < 0.05, "{}", diff.amax());
}

#[test]
fn same_seed_same_data() {
    for id in ModelId::ALL {
        let m = model(id, PredictorCase::Independent);
        let (a, ta) = generate(&m, 30, 9).unwrap();
        let (b, tb) = generate(&m, 30, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = generate(&m, 30, 10).unwrap();
        assert_ne!(a, c);
    }
}

#[test]
fn nonlinear_truth_and_noise_reading() {
    let m = model(ModelId::V, PredictorCase::Independent);
    let (data, truth) = generate(&m, 20, 2).unwrap();
    let Truth::Functions(phi) = truth else { panic!("function truth expected") };
    for i in 0..20 {
        let (x1, x2) = (data.x()[(i, 0)], data.x()[(i, 1)]);
        assert!((phi[(i, 0)] - x1.hypot(x2)).abs() < 1e-15);
        assert!((phi[(i, 1)] - x2.sin()).abs() < 1e-15);
    }
    // the two conventions share X and the standard normal draws
    let var = generate(&model(ModelId::IV, PredictorCase::Independent), 20, 3).unwrap().0;
    let sd = generate(
        &model(ModelId::IV, PredictorCase::Independent).with_noise_convention(NoiseConvention::StdDev),
        20,
        3,
    )
    .unwrap()
    .0;
    let clean = generate(&model(ModelId::IV, PredictorCase::Independent).with_noise_scale(0.0), 20, 3).unwrap().0;
    for i in 0..20 {
        let e_var = var.y()[i] - clean.y()[i];
        let e_sd = sd.y()[i] - clean.y()[i];
        assert!((e_var * 0.2 - e_sd * 0.2f64.sqrt()).abs() < 1e-12);
    }
    assert!(SimModel::new(ModelId::V, 10, PredictorCase::Correlated).is_err());
}

#[test]
fn two_repetitions_report_two_values() {
    let cfg = TableConfig::new(model(ModelId::I, PredictorCase::Correlated), 60, vec![Method::Sir, Method::Pals], 2, 1);
    let reports = run_table(&cfg).unwrap();
    // SIR, four fixed λ, best fixed
    assert_eq!(reports.len(), 6);
    for r in &reports {
        assert_eq!(r.values.len(), 2);
        assert_eq!(r.seeds, vec![1, 2]);
        let mean = (r.values[0] + r.values[1]) / 2.0;
        let sd = ((r.values[0] - mean).powi(2) + (r.values[1] - mean).powi(2)).sqrt();
        assert!((r.se.unwrap() - sd / 2f64.sqrt()).abs() < 1e-12);
        assert!(r.values.iter().all(|&v| (0.0..=2.0 + 1e-12).contains(&v)));
    }
    assert!(matches!(reports[5].lambda_policy, LambdaPolicy::BestFixed(_)));
    let best = reports[1..5].iter().map(|r| r.mean).fold(f64::INFINITY, f64::min);
    assert_eq!(reports[5].mean, best);
}

#[test]
fn single_repetition_has_no_se() {
    let cfg = TableConfig::new(model(ModelId::II, PredictorCase::Independent), 50, vec![Method::Save], 1, 3);
    let reports = run_table(&cfg).unwrap();
    assert_eq!(reports[0].se, None);
    let mut buf = Vec::new();
    write_csv(&reports, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "schema_version,model,case,n,p,method,lambda_policy,reps,mean,se,failures"
    );
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[9], "");
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let mut cfg = TableConfig::new(
        model(ModelId::IV, PredictorCase::Independent),
        40,
        vec![Method::KPals, Method::DcKPals],
        6,
        11,
    );
    cfg.lambdas = vec![0.1, 10.0];
    cfg.jobs = Some(1);
    let one = run_table(&cfg).unwrap();
    cfg.jobs = Some(4);
    let four = run_table(&cfg).unwrap();
    assert_eq!(one, four);
    assert!(one.iter().all(|r| r.values.iter().all(|v| (0.0..=1.0).contains(v))));
}

#[test]
fn mismatched_methods_are_rejected() {
    let cfg = TableConfig::new(model(ModelId::I, PredictorCase::Independent), 40, vec![Method::KPals], 2, 1);
    assert!(run_table(&cfg).is_err());
    let cfg = TableConfig::new(model(ModelId::I, PredictorCase::Independent), 40, vec![Method::Pals], 0, 1);
    assert!(run_table(&cfg).is_err());
}

#[test]
fn diagnostic_flags_few_repetitions() {
    let m = model(ModelId::III, PredictorCase::Independent);
    let rep = consistency_diagnostic(&m, 100.0, &[50, 100, 200], 2, 1, Some(2)).unwrap();
    assert!(rep.low_confidence);
    assert!(rep.slope.is_finite());
    assert_eq!(rep.mean_delta.len(), 3);
    assert!(consistency_diagnostic(&m, 100.0, &[100, 50], 5, 1, None).is_err());
}
