use idml::data::*;
use idml::mixer::LabelSet;
use idml::Error;
use proptest::prelude::*;
use sha2::{Digest, Sha256};

fn benchmark_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        seed,
        ..SyntheticSpec::default()
    }
}

#[test]
fn benchmark_dataset_shape() {
    let ds = generate_synthetic(&benchmark_spec(0)).unwrap();
    assert_eq!(ds.len(), 2000);
    assert_eq!(ds.feature_dim(), 32);
    let (train, test) = split_zero_shot(&ds, 0.5).unwrap();
    assert_eq!(train.len(), 1000);
    assert_eq!(test.len(), 1000);
    // 20% of the training samples are two-class blends of training classes
    assert_eq!(train.mixed_flags().iter().filter(|m| **m).count(), 200);
    assert!(train.labels.iter().all(|l| l.ids().all(|c| c < 4)));
    assert!(test.labels.iter().all(|l| !l.is_mixed() && l.ids().all(|c| c >= 4)));
    assert_eq!(test.single_labels().unwrap().len(), 1000);
}

#[test]
fn generation_is_seeded() {
    let a = generate_synthetic(&benchmark_spec(5)).unwrap();
    let b = generate_synthetic(&benchmark_spec(5)).unwrap();
    let c = generate_synthetic(&benchmark_spec(6)).unwrap();
    assert_eq!(to_csv_string(&a), to_csv_string(&b));
    assert_ne!(a.features, c.features);
}

#[test]
fn csv_round_trip_is_exact_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_synthetic(&benchmark_spec(1)).unwrap();
    let meta = save_with_metadata(&ds, dir.path(), "data").unwrap();
    let bytes = std::fs::read(dir.path().join("data.csv")).unwrap();
    assert_eq!(meta.csv_sha256, hex::encode(Sha256::digest(&bytes)));
    assert_eq!(meta.n_mixed, 200);
    let back = load_csv(&dir.path().join("data.csv")).unwrap();
    assert_eq!(back.features, ds.features);
    assert_eq!(back.labels, ds.labels);
    let side: DatasetMeta =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("data.meta.json")).unwrap()).unwrap();
    assert_eq!(side, meta);
}

#[test]
fn csv_errors_name_the_line() {
    let cases = [
        ("", 1),
        ("lbl,f0\n0,1.0\n", 1),
        ("label,f0,f2\n0,1,2\n", 1),
        ("label,f0\n0,1.0\n1,abc\n", 3),
        ("label,f0\n0,1.0,2.0\n", 2),
        ("label,f0\n0|0,1.0\n", 2),
        ("label,f0\nx,1.0\n", 2),
        ("label,f0\n0,NaN\n", 2),
        ("label,f0\n", 2),
    ];
    for (text, want) in cases {
        match parse_csv(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, want, "{text:?}"),
            other => panic!("{text:?}: {other:?}"),
        }
    }
    let ok = parse_csv("label,f0,f1\n2|7,0.5,-1e-3\n3,1,2\n").unwrap();
    assert_eq!(ok.labels, vec![LabelSet::pair(2, 7).unwrap(), LabelSet::single(3)]);
}

#[test]
fn split_rejects_straddling_blends() {
    let ds = parse_csv("label,f0\n0,1\n1,2\n0|1,3\n2,4\n3,5\n").unwrap();
    assert!(split_zero_shot(&ds, 0.5).is_ok());
    let bad = parse_csv("label,f0\n0,1\n1,2\n1|2,3\n2,4\n3,5\n").unwrap();
    assert!(matches!(split_zero_shot(&bad, 0.5), Err(Error::InvalidParameter(_))));
    let one = parse_csv("label,f0\n0,1\n0,2\n").unwrap();
    assert!(split_zero_shot(&one, 0.5).is_err());
}

#[test]
fn invalid_specs_are_rejected() {
    for spec in [
        SyntheticSpec { n_classes: 1, ..SyntheticSpec::default() },
        SyntheticSpec { feature_dim: 0, ..SyntheticSpec::default() },
        SyntheticSpec { ambiguity_fraction: 1.5, ..SyntheticSpec::default() },
        SyntheticSpec { cluster_spread: -1.0, ..SyntheticSpec::default() },
    ] {
        assert!(generate_synthetic(&spec).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn any_finite_values_round_trip(
        rows in prop::collection::vec((0u32..5, prop::collection::vec(-1e300f64..1e300, 3)), 1..20)
    ) {
        let mut text = String::from("label,f0,f1,f2\n");
        for (l, x) in &rows {
            text += &format!("{l},{:?},{:?},{:?}\n", x[0], x[1], x[2]);
        }
        let ds = parse_csv(&text).unwrap();
        prop_assert_eq!(to_csv_string(&ds), text);
    }
}
