mod common;

use std::sync::Arc;

use distgan::nn::{Activation, Layout, NetworkSpec, ParamVector};
use distgan::protocol::{select_upload, upload_count, GradUpdate, SelectionPolicy, ServerState};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn spec_with(n_hidden: usize) -> NetworkSpec {
    NetworkSpec::mlp(&[2, n_hidden, 1], Activation::Tanh, Activation::Sigmoid).unwrap()
}

fn server(spec: &NetworkSpec, policy: SelectionPolicy, lr: f64) -> ServerState {
    let layout = Arc::new(Layout::from_spec(spec));
    let w = ParamVector::from_values(layout.clone(), (0..layout.len()).map(|i| i as f64 * 0.01).collect()).unwrap();
    ServerState::new(spec.clone(), w, policy, lr).unwrap()
}

fn to_updates(raw: &[(usize, Vec<(usize, f64)>)], n: usize, epoch: u64) -> Vec<GradUpdate> {
    raw.iter()
        .map(|(u, e)| GradUpdate::new(*u, epoch, e.clone(), n).unwrap())
        .collect()
}

/// Index set the random policy keeps, reproduced from its documented sampler.
fn random_keep(seed: u64, fraction: f64, raw: &[(usize, Vec<(usize, f64)>)], n: usize) -> Vec<usize> {
    let contributed: Vec<usize> = (0..n).filter(|i| raw.iter().any(|(_, e)| e.iter().any(|(j, _)| j == i))).collect();
    let k = common::ceil_count(fraction, contributed.len());
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, contributed.len(), k)
        .into_iter()
        .map(|j| contributed[j])
        .collect()
}

#[test]
fn documented_examples() {
    let layout = Arc::new(Layout::from_spec(&NetworkSpec::mlp(&[1, 1, 1], Activation::Relu, Activation::Identity).unwrap()));
    let g = ParamVector::from_values(layout, vec![0.1, -0.5, 0.3, 0.0]).unwrap();
    let up = select_upload(&g, 0.5, 0, 0).unwrap();
    assert_eq!(up.entries(), &[(1, -0.5), (2, 0.3)]);
    assert_eq!(select_upload(&g, 1.0, 0, 0).unwrap().len(), 4);
    assert_eq!(upload_count(0.7, 10), 7);
}

#[test]
fn selection_matches_brute_force_on_100_dims() {
    let mut rng = common::rng(1);
    let layout = Arc::new(Layout::from_spec(&NetworkSpec::mlp(&[3, 11, 6], Activation::Relu, Activation::Identity).unwrap()));
    for _ in 0..50 {
        let v: Vec<f64> = (0..layout.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = ParamVector::from_values(layout.clone(), v.clone()).unwrap();
        let got = select_upload(&g, 0.1, 3, 9).unwrap();
        assert_eq!(got.entries(), &common::oracle_select(&v, 0.1)[..]);
    }
}

#[test]
fn apply_global_running_sum() {
    let spec = spec_with(3);
    let mut s = server(&spec, SelectionPolicy::MaxMagnitude, 0.3);
    let n = spec.param_count();
    let start = s.weights().values().to_vec();
    let mut sum = vec![0.0; n];
    let mut rng = common::rng(4);
    for k in 0..7u64 {
        let raw = common::random_uploads(&mut rng, 3, n);
        let agg = s.aggregate(&to_updates(&raw, n, k)).unwrap();
        for (acc, v) in sum.iter_mut().zip(agg.values()) {
            *acc += v;
        }
        s.apply_global(&agg).unwrap();
        assert_eq!(s.epoch(), k + 1);
    }
    for ((w, w0), g) in s.weights().values().iter().zip(&start).zip(&sum) {
        assert!((w - (w0 - 0.3 * g)).abs() < 1e-12);
    }
}

#[test]
fn stale_epoch_rejected() {
    let spec = spec_with(2);
    let n = spec.param_count();
    let mut s = server(&spec, SelectionPolicy::MaxMagnitude, 0.1);
    let up = GradUpdate::new(0, 5, vec![(0, 1.0)], n).unwrap();
    assert!(s.aggregate(&[up]).is_err());
}

fn arb_policy() -> impl Strategy<Value = SelectionPolicy> {
    prop_oneof![
        Just(SelectionPolicy::MaxMagnitude),
        (0.01f64..1.0).prop_map(|tau| SelectionPolicy::Threshold { tau }),
        ((0.05f64..=1.0), any::<u64>()).prop_map(|(fraction, seed)| SelectionPolicy::RandomFraction { fraction, seed }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn select_upload_matches_oracle(
        values in prop::collection::vec(prop_oneof![-2.0f64..2.0, (-4i32..=4).prop_map(|k| f64::from(k) * 0.5)], 13..60),
        fraction in 0.01f64..=1.0,
    ) {
        let n = values.len();
        // n - 1 weights plus one bias.
        let spec = NetworkSpec::mlp(&[n - 1, 1], Activation::Identity, Activation::Identity).unwrap();
        let g = ParamVector::from_values(Arc::new(Layout::from_spec(&spec)), values.clone()).unwrap();
        let got = select_upload(&g, fraction, 0, 0).unwrap();
        prop_assert_eq!(got.len(), common::ceil_count(fraction, n));
        prop_assert_eq!(got.entries(), &common::oracle_select(&values, fraction)[..]);
    }

    #[test]
    fn aggregate_matches_oracle(policy in arb_policy(), users in 1usize..5, hidden in 1usize..6, seed in any::<u64>()) {
        let spec = spec_with(hidden);
        let n = spec.param_count();
        let mut rng = common::rng(seed);
        let raw = common::random_uploads(&mut rng, users, n);
        let mut shuffled = raw.clone();
        shuffled.reverse();
        let mut s = server(&spec, policy, 0.1);
        let got = s.aggregate(&to_updates(&shuffled, n, 0)).unwrap();
        let keep = match policy {
            SelectionPolicy::RandomFraction { fraction, seed } => Some(random_keep(seed, fraction, &raw, n)),
            _ => None,
        };
        let expect = common::oracle_aggregate(policy, &raw, n, keep.as_deref());
        prop_assert_eq!(got.values(), &expect[..]);
    }

    #[test]
    fn extreme_policies_reduce_to_mean(users in 1usize..5, seed in any::<u64>()) {
        let spec = spec_with(4);
        let n = spec.param_count();
        let raw = common::random_uploads(&mut common::rng(seed), users, n);
        let ups = to_updates(&raw, n, 0);
        let tiny = server(&spec, SelectionPolicy::Threshold { tau: 1e-300 }, 0.1).aggregate(&ups).unwrap();
        let full = server(&spec, SelectionPolicy::RandomFraction { fraction: 1.0, seed }, 0.1).aggregate(&ups).unwrap();
        prop_assert_eq!(tiny.values(), full.values());
    }

    #[test]
    fn selection_cardinality(len in 1usize..1000, fraction in 0.001f64..=1.0) {
        prop_assert_eq!(upload_count(fraction, len), common::ceil_count(fraction, len));
    }
}
