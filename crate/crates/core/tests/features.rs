use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tlsxai::features::{discretize, markov_features, summarize, transition_matrix, FeatureSchema};
use tlsxai::pipeline::featurize_packets;
use tlsxai::synth::{synthesize_sessions, Profile};

proptest! {
    #[test]
    fn rows_are_stochastic_or_empty(states in prop::collection::vec(0usize..5, 0..200)) {
        let m = transition_matrix(&states, 5);
        for row in m.rows() {
            let s: f64 = row.iter().sum();
            prop_assert!(s == 0.0 || (s - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn discretize_is_monotone(a in 0.0f64..1e6, b in 0.0f64..1e6, width in 1.0f64..500.0, n in 1usize..8) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let s = discretize(&[lo, hi], width, n);
        prop_assert!(s[0] <= s[1]);
        prop_assert!(s[1] < n);
    }

    #[test]
    fn empty_rows_only_for_unvisited_or_final_states(sizes in prop::collection::vec(0.0f64..1500.0, 1..50)) {
        let m = markov_features(&sizes, &[], 150.0, 3);
        let states = discretize(&sizes, 150.0, 3);
        for (i, row) in m.size_matrix.rows().enumerate() {
            let leaves = states.windows(2).any(|w| w[0] == i);
            prop_assert_eq!(row.iter().sum::<f64>() > 0.0, leaves);
        }
    }

    #[test]
    fn population_std(values in prop::collection::vec(-1e3f64..1e3, 1..60)) {
        let s = summarize(&values);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        prop_assert!((s.std - var.sqrt()).abs() <= 1e-9 * (1.0 + var.sqrt()));
        prop_assert!(s.min <= s.mean + 1e-9 && s.mean <= s.max + 1e-9);
    }
}

#[test]
fn thresholds_at_bin_edges() {
    assert_eq!(discretize(&[0.0, 149.999, 150.0, 299.0, 300.0, 1e9], 150.0, 3), vec![0, 0, 1, 1, 2, 2]);
}

#[test]
fn vector_invariants_on_synthetic_flows() {
    let schema = FeatureSchema::default();
    assert_eq!(schema.dimension(), 147);
    let names = schema.names();
    let idx = |n: &str| schema.index_of(n).unwrap();
    let binary = schema.binary_mask();
    for profile in [Profile::Normal, Profile::Malware] {
        for session in synthesize_sessions(profile, 40, 5) {
            let ex = featurize_packets(session.clone(), &schema, None).unwrap();
            assert_eq!(ex.vectors.len(), 1);
            let v = &ex.vectors[0].values;
            assert_eq!(v.len(), names.len());
            let payload: usize = session.iter().map(|p| p.payload.len()).sum();
            assert_eq!(v[idx("bytes_in")] + v[idx("bytes_out")], payload as f64);
            assert_eq!(v[idx("num_pkts_in")] + v[idx("num_pkts_out")], session.len() as f64);
            for (j, b) in binary.iter().enumerate() {
                if *b {
                    assert!(v[j] == 0.0 || v[j] == 1.0, "{} = {}", names[j], v[j]);
                }
            }
            assert!(v.iter().all(|x| x.is_finite()));
        }
    }
}

#[test]
fn capture_order_does_not_matter() {
    let schema = FeatureSchema::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for session in synthesize_sessions(Profile::Normal, 10, 8) {
        let a = featurize_packets(session.clone(), &schema, None).unwrap();
        let mut shuffled = session.clone();
        shuffled.shuffle(&mut rng);
        let b = featurize_packets(shuffled, &schema, None).unwrap();
        assert_eq!(a.vectors, b.vectors);
    }
}
