use std::collections::BTreeSet;

use distgan::data::{
    decode_idx, load_idx, make_ring, parse_idx_images, partition, ring_centers, write_idx, Dataset, PartitionScheme,
};
use distgan::nn::Matrix;
use distgan::Error;
use proptest::prelude::*;

fn header(words: &[u32]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_be_bytes()).collect()
}

fn fixture() -> (Vec<u8>, Vec<u8>) {
    let mut images = header(&[0x0803, 2, 2, 2]);
    images.extend_from_slice(&[0, 255, 128, 64, 1, 127, 200, 32]);
    let mut labels = header(&[0x0801, 2]);
    labels.extend_from_slice(&[3, 9]);
    (images, labels)
}

#[test]
fn fixture_decodes_to_exact_floats() {
    let (images, labels) = fixture();
    let ds = decode_idx(&images, &labels).unwrap();
    assert_eq!((ds.len(), ds.dim()), (2, 4));
    let expected: [f64; 8] = [
        -1.0,
        1.0,
        0.5 / 127.5,
        -63.5 / 127.5,
        -126.5 / 127.5,
        -0.5 / 127.5,
        72.5 / 127.5,
        -95.5 / 127.5,
    ];
    for (got, want) in ds.samples().as_slice().iter().zip(expected) {
        assert!((got - want).abs() <= f64::EPSILON, "{got} vs {want}");
    }
    assert_eq!(ds.samples().get(0, 0), -1.0);
    assert_eq!(ds.samples().get(0, 1), 1.0);
    assert!((ds.samples().get(0, 2) - 0.003_921_568_627_45).abs() < 1e-13);
    assert_eq!(ds.labels(), Some(&[3, 9][..]));
}

#[test]
fn wrong_magic_names_offset_zero() {
    let (mut images, labels) = fixture();
    images[3] = 0x02;
    match decode_idx(&images, &labels) {
        Err(Error::Idx { offset, message }) => {
            assert_eq!(offset, 0);
            assert!(message.contains("magic"), "{message}");
        }
        other => panic!("expected idx error, got {other:?}"),
    }
    let (images, mut labels) = fixture();
    labels[3] = 0x03;
    assert!(matches!(decode_idx(&images, &labels), Err(Error::Idx { offset: 0, .. })));
}

#[test]
fn truncation_is_reported() {
    let (images, labels) = fixture();
    for cut in [0, 3, 10, 15, 16, images.len() - 1] {
        assert!(
            matches!(decode_idx(&images[..cut], &labels), Err(Error::Idx { .. })),
            "cut at {cut}"
        );
    }
    assert!(matches!(decode_idx(&images, &labels[..9]), Err(Error::Idx { .. })));
    let mut long = images.clone();
    long.push(0);
    assert!(matches!(decode_idx(&long, &labels), Err(Error::Idx { .. })));
}

#[test]
fn count_mismatch_is_an_error() {
    let (images, _) = fixture();
    let mut labels = header(&[0x0801, 3]);
    labels.extend_from_slice(&[1, 2, 3]);
    assert!(decode_idx(&images, &labels).is_err());
}

#[test]
fn huge_header_does_not_overflow() {
    let images = header(&[0x0803, u32::MAX, u32::MAX, u32::MAX]);
    assert!(parse_idx_images(&images).is_err());
}

#[test]
fn missing_files_are_reported_by_path() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("nope-images");
    match load_idx(&p, &dir.path().join("nope-labels")) {
        Err(Error::MissingFile(path)) => assert_eq!(path, p),
        other => panic!("{other:?}"),
    }
}

#[test]
fn idx_files_round_trip() {
    let (images, labels) = fixture();
    let ds = decode_idx(&images, &labels).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
    write_idx(&ds, (2, 2), &ip, &lp).unwrap();
    assert_eq!(std::fs::read(&ip).unwrap(), images);
    assert_eq!(load_idx(&ip, &lp).unwrap(), ds);
}

#[test]
fn off_grid_values_cannot_be_exported() {
    let ds = Dataset::new(Matrix::column(vec![0.1234]), Some(vec![0]), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert!(write_idx(&ds, (1, 1), &dir.path().join("i"), &dir.path().join("l")).is_err());
}

#[test]
fn ring_centers_match_chord_lengths() {
    let c = ring_centers(8, 2.0);
    for a in 0..8 {
        for b in 0..8 {
            let dx = c.get(a, 0) - c.get(b, 0);
            let dy = c.get(a, 1) - c.get(b, 1);
            let k = (a as f64 - b as f64).abs();
            let chord = 4.0 * (std::f64::consts::PI * k / 8.0).sin();
            assert!((dx.hypot(dy) - chord).abs() < 1e-12);
        }
    }
}

#[test]
fn single_tight_mode_stays_near_its_center() {
    let ds = make_ring(1, 3.0, 1e-4, 500, 5).unwrap();
    for row in ds.samples().iter_rows() {
        assert!((row[0] - 3.0).hypot(row[1]) < 6e-4);
    }
}

#[test]
fn ring_mode_means_are_within_four_standard_errors() {
    let (sigma, n) = (0.05, 400);
    let ds = make_ring(8, 2.0, sigma, n, 11).unwrap();
    let centers = ring_centers(8, 2.0);
    let labels = ds.labels().unwrap();
    for m in 0..8 {
        let rows: Vec<&[f64]> = ds.samples().iter_rows().zip(labels).filter(|(_, &l)| l == m).map(|(r, _)| r).collect();
        assert_eq!(rows.len(), n);
        for axis in 0..2 {
            let mean = rows.iter().map(|r| r[axis]).sum::<f64>() / n as f64;
            assert!((mean - centers.get(m, axis)).abs() < 4.0 * sigma / (n as f64).sqrt());
        }
    }
}

#[test]
fn ring_is_deterministic_and_rejects_bad_params() {
    assert_eq!(make_ring(4, 1.0, 0.1, 10, 3).unwrap(), make_ring(4, 1.0, 0.1, 10, 3).unwrap());
    assert_ne!(make_ring(4, 1.0, 0.1, 10, 3).unwrap(), make_ring(4, 1.0, 0.1, 10, 4).unwrap());
    assert!(make_ring(0, 1.0, 0.1, 10, 3).is_err());
    assert!(make_ring(4, 1.0, 0.0, 10, 3).is_err());
}

fn labeled(labels: Vec<usize>) -> Dataset {
    let n = labels.len();
    Dataset::new(Matrix::column((0..n).map(|i| i as f64).collect()), Some(labels), None).unwrap()
}

#[test]
fn by_label_splits_digits_in_halves() {
    let ds = labeled((0..100).map(|i| i % 10).collect());
    let set = partition(
        &ds,
        &PartitionScheme::ByLabel {
            groups: vec![(0..5).collect(), (5..10).collect()],
            allow_unassigned: false,
        },
    )
    .unwrap();
    assert_eq!(set.users(), 2);
    for (u, p) in set.parts.iter().enumerate() {
        assert_eq!(p.owner, u);
        assert_eq!(p.indices.len(), 50);
        assert!(p.indices.iter().all(|&i| (i % 10 < 5) == (u == 0)));
    }
}

#[test]
fn by_label_errors() {
    let ds = labeled(vec![0, 1, 2]);
    let overlap = PartitionScheme::ByLabel {
        groups: vec![vec![0, 1], vec![1, 2]],
        allow_unassigned: false,
    };
    assert!(partition(&ds, &overlap).is_err());
    let missing = PartitionScheme::ByLabel {
        groups: vec![vec![0], vec![1]],
        allow_unassigned: false,
    };
    assert!(partition(&ds, &missing).is_err());
    let allowed = PartitionScheme::ByLabel {
        groups: vec![vec![0], vec![1]],
        allow_unassigned: true,
    };
    assert_eq!(partition(&ds, &allowed).unwrap().sizes(), vec![1, 1]);
    let unlabeled = Dataset::new(Matrix::column(vec![0.0]), None, None).unwrap();
    assert!(partition(&unlabeled, &allowed).is_err());
}

#[test]
fn shard_examples() {
    let ds = labeled(vec![0; 10]);
    let s = partition(&ds, &PartitionScheme::Shard { users: 3, seed: 1 }).unwrap();
    assert_eq!(s.sizes(), vec![4, 3, 3]);
    let s = partition(&ds, &PartitionScheme::Shard { users: 10, seed: 1 }).unwrap();
    assert!(s.sizes().iter().all(|&n| n == 1));
    assert!(partition(&ds, &PartitionScheme::Shard { users: 11, seed: 1 }).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn shard_is_a_balanced_permutation_partition(n in 1usize..300, users in 1usize..20, seed: u64) {
        prop_assume!(users <= n);
        let ds = labeled(vec![0; n]);
        let scheme = PartitionScheme::Shard { users, seed };
        let set = partition(&ds, &scheme).unwrap();
        prop_assert_eq!(&set, &partition(&ds, &scheme).unwrap());
        let sizes = set.sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut all: Vec<usize> = set.parts.iter().flat_map(|p| p.indices.iter().copied()).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn by_label_membership_holds(labels in proptest::collection::vec(0usize..6, 1..200), cut in 1usize..6) {
        let ds = labeled(labels.clone());
        let groups = vec![(0..cut).collect::<Vec<_>>(), (cut..6).collect()];
        let result = partition(&ds, &PartitionScheme::ByLabel { groups: groups.clone(), allow_unassigned: false });
        if groups.iter().any(|g| !labels.iter().any(|l| g.contains(l))) {
            prop_assert!(result.is_err());
            return Ok(());
        }
        let set = result.unwrap();
        let mut seen = BTreeSet::new();
        for p in &set.parts {
            for &i in &p.indices {
                prop_assert!(groups[p.owner].contains(&labels[i]));
                prop_assert!(seen.insert(i));
            }
        }
        prop_assert_eq!(seen.len(), labels.len());
    }

    #[test]
    fn shared_labels_keep_indices_disjoint(extra in proptest::collection::vec(0usize..6, 1..200)) {
        let labels: Vec<usize> = (0..6).chain(extra).collect();
        let ds = labeled(labels.clone());
        let groups = vec![vec![0, 1, 2, 3], vec![2, 3, 4, 5]];
        let set = partition(&ds, &PartitionScheme::SharedLabels { groups: groups.clone(), allow_unassigned: false }).unwrap();
        let mut seen = BTreeSet::new();
        for p in &set.parts {
            for &i in &p.indices {
                prop_assert!(groups[p.owner].contains(&labels[i]));
                prop_assert!(seen.insert(i));
            }
        }
        prop_assert_eq!(seen.len(), labels.len());
    }

    #[test]
    fn idx_round_trip_is_bit_exact(pixels in proptest::collection::vec(any::<u8>(), 12), labels in proptest::collection::vec(0usize..10, 3)) {
        let data = pixels.iter().map(|&p| distgan::data::pixel_to_unit(p)).collect();
        let ds = Dataset::new(Matrix::new(3, 4, data).unwrap(), Some(labels), None).unwrap();
        let (i, l) = distgan::data::encode_idx(&ds, (2, 2)).unwrap();
        prop_assert_eq!(decode_idx(&i, &l).unwrap(), ds);
    }
}
