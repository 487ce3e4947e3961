use proptest::prelude::*;
use tlsxai::features::FeatureSchema;
use tlsxai::model::{
    compute_metrics_numeric, fit_boosted, log_loss, train, HyperParams, MetricsReport, ModelKind, TreeEnsemble,
};
use tlsxai::synth::synthetic_dataset;

proptest! {
    #[test]
    fn mcc_is_symmetric_and_bounded(tp in 0u64..500, tn in 0u64..500, fp in 0u64..500, fn_ in 0u64..500) {
        let m = MetricsReport::from_confusion(tp, tn, fp, fn_);
        prop_assert!((-1.0..=1.0).contains(&m.mcc));
        // swapping the positive class leaves MCC unchanged
        let swapped = MetricsReport::from_confusion(tn, tp, fn_, fp);
        prop_assert!((m.mcc - swapped.mcc).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&m.f1));
    }

    #[test]
    fn log_loss_matches_definition(pairs in prop::collection::vec((any::<bool>(), -15.0f64..15.0), 1..50)) {
        let y: Vec<f64> = pairs.iter().map(|(b, _)| f64::from(u8::from(*b))).collect();
        let m: Vec<f64> = pairs.iter().map(|(_, m)| *m).collect();
        let direct: f64 = y.iter().zip(&m).map(|(y, m)| {
            let p = 1.0 / (1.0 + (-m).exp());
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        }).sum::<f64>() / y.len() as f64;
        let got = log_loss(&y, &m);
        prop_assert!((got - direct).abs() <= 1e-9 * (1.0 + direct), "{got} vs {direct}");
    }
}

#[test]
fn perfect_and_inverted_predictions() {
    let y = [1.0, 0.0, 1.0, 0.0];
    assert_eq!(compute_metrics_numeric(&y, &y).unwrap().mcc, 1.0);
    let inv: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
    assert_eq!(compute_metrics_numeric(&y, &inv).unwrap().mcc, -1.0);
    assert!(compute_metrics_numeric(&y, &[0.5, 0.0, 1.0, 0.0]).is_err());
}

#[test]
fn models_round_trip_through_json() {
    let schema = FeatureSchema::default();
    let ds = synthetic_dataset(60, 60, 3, &schema).unwrap();
    for kind in [ModelKind::Forest, ModelKind::Boosted, ModelKind::Extra] {
        let mut p = HyperParams::for_kind(kind);
        p.n_estimators = 5;
        let model = train(kind, &ds.rows(), &ds.targets(), &p).unwrap();
        let back = TreeEnsemble::from_json(&model.to_json()).unwrap();
        assert_eq!(back, model);
        for x in ds.rows() {
            assert_eq!(back.raw_output(x).unwrap().to_bits(), model.raw_output(x).unwrap().to_bits());
        }
    }
}

#[test]
fn training_is_seed_deterministic() {
    let ds = synthetic_dataset(50, 50, 4, &FeatureSchema::default()).unwrap();
    for kind in [ModelKind::Forest, ModelKind::Boosted, ModelKind::Extra] {
        let mut p = HyperParams::for_kind(kind);
        p.n_estimators = 4;
        let a = train(kind, &ds.rows(), &ds.targets(), &p).unwrap();
        let b = train(kind, &ds.rows(), &ds.targets(), &p).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn large_gamma_prunes_to_stumps() {
    let ds = synthetic_dataset(40, 40, 5, &FeatureSchema::default()).unwrap();
    let p = HyperParams {
        gamma: 1e9,
        subsample: 1.0,
        n_estimators: 3,
        ..HyperParams::boosted()
    };
    let fit = fit_boosted(&ds.rows(), &ds.targets(), &p).unwrap();
    assert!(fit.ensemble.trees.iter().all(|t| t.nodes.len() == 1));
    // balanced classes: the base margin is already optimal
    assert!(fit.train_loss.windows(2).all(|w| w[1] <= w[0] + 1e-15));
}

#[test]
fn unknown_hyperparameter_is_rejected() {
    let mut p = HyperParams::boosted();
    assert!(p.set("max_depth", 4.0).is_ok());
    assert_eq!(p.max_depth, 4);
    assert!(p.set("no_such_param", 1.0).is_err());
}
