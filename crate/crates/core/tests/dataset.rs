use proptest::prelude::*;
use tlsxai::dataset::{
    adasyn, kfold_split, reference_manifest, resample_to_proportion, sum_samples, train_test_split, AdasynParams,
    LabeledDataset,
};
use tlsxai::features::{FeatureVector, Label};

fn labels_from(bits: &[bool]) -> Vec<Label> {
    bits.iter().map(|b| if *b { Label::Malware } else { Label::Normal }).collect()
}

fn dataset(rows: Vec<(Vec<f64>, bool)>) -> LabeledDataset {
    let d = rows.first().map_or(0, |r| r.0.len());
    let vectors = rows
        .into_iter()
        .enumerate()
        .map(|(i, (values, m))| FeatureVector {
            values,
            schema_version: "t".into(),
            label: Some(if m { Label::Malware } else { Label::Normal }),
            flow_id: format!("r{i}"),
        })
        .collect();
    LabeledDataset::new((0..d).map(|j| format!("f{j}")).collect(), "t", vectors).unwrap()
}

proptest! {
    #[test]
    fn kfold_partitions_and_stratifies(bits in prop::collection::vec(any::<bool>(), 10..300), k in 2usize..10, seed in any::<u64>()) {
        let labels = labels_from(&bits);
        let folds = kfold_split(labels.len(), k, Some(&labels), seed).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for class in [Label::Normal, Label::Malware] {
            let counts: Vec<usize> = folds.iter().map(|f| f.iter().filter(|&&i| labels[i] == class).count()).collect();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            prop_assert!(hi - lo <= 1, "{class}: {counts:?}");
        }
        prop_assert_eq!(folds, kfold_split(labels.len(), k, Some(&labels), seed).unwrap());
    }

    #[test]
    fn holdout_is_disjoint(bits in prop::collection::vec(any::<bool>(), 2..200), seed in any::<u64>()) {
        let labels = labels_from(&bits);
        let (tr, te) = train_test_split(&labels, 0.2, seed).unwrap();
        prop_assert_eq!(tr.len() + te.len(), labels.len());
        prop_assert!(tr.iter().all(|i| !te.contains(i)));
    }

    #[test]
    fn csv_round_trip_is_bit_exact(rows in prop::collection::vec((prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 4), any::<bool>()), 1..40)) {
        let ds = dataset(rows);
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = LabeledDataset::read_csv(buf.as_slice(), "t").unwrap();
        prop_assert_eq!(back.vectors.len(), ds.vectors.len());
        for (a, b) in back.vectors.iter().zip(&ds.vectors) {
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
            prop_assert_eq!(&a.flow_id, &b.flow_id);
            prop_assert_eq!(a.label, b.label);
        }
    }

    #[test]
    fn adasyn_keeps_input_as_prefix(seed in 0u64..1000, n_min in 7usize..30) {
        let rows: Vec<(Vec<f64>, bool)> = (0..120 + n_min)
            .map(|i| {
                let m = i >= 120;
                let x = (i as f64 * 0.618).fract() * 2.0 + if m { 1.0 } else { 0.0 };
                let y = (i as f64 * 0.414).fract();
                (vec![x, y, (i % 2) as f64], m)
            })
            .collect();
        let ds = dataset(rows);
        let params = AdasynParams { binary_mask: vec![false, false, true], ..AdasynParams::default() };
        let (out, rep) = adasyn(&ds, &params, seed).unwrap();
        prop_assert_eq!(&out.vectors[..ds.len()], &ds.vectors[..]);
        prop_assert_eq!(rep.per_seed.iter().sum::<usize>(), out.len() - ds.len());
        if !rep.degenerate {
            prop_assert_eq!(out.count(Label::Malware), out.count(Label::Normal));
        }
        for v in &out.vectors[ds.len()..] {
            prop_assert!(v.values[2] == 0.0 || v.values[2] == 1.0);
            prop_assert_eq!(v.label, Some(Label::Malware));
        }
    }
}

#[test]
fn adasyn_rejects_tiny_minority() {
    let rows = (0..30).map(|i| (vec![i as f64], i >= 27)).collect();
    assert!(adasyn(&dataset(rows), &AdasynParams::default(), 0).is_err());
}

#[test]
fn resampled_proportion() {
    let rows = (0..3000).map(|i| (vec![i as f64], i % 10 == 0)).collect();
    let ds = resample_to_proportion(&dataset(rows), Label::Malware, 0.0103, 1).unwrap();
    let share = ds.count(Label::Malware) as f64 / ds.len() as f64;
    assert!((share - 0.0103).abs() < 0.0005, "{share}");
    assert_eq!(ds.count(Label::Normal), 2700);
}

#[test]
fn reference_manifest_totals() {
    let m = reference_manifest();
    let t = sum_samples(&m);
    assert_eq!(m.entries.len(), 54);
    assert_eq!(t.total, 1127);
}
