use proptest::prelude::*;

use super::*;

fn last_values(ds: &SeriesDataset) -> Vec<f64> {
    ds.data.iter().map(|s| s.last().unwrap()[0]).collect()
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0))
}

#[test]
fn model_i_degenerate_cases() {
    let mut spec = SyntheticSpec::model_i(5, 10, 1);
    spec.alpha = 0.0;
    spec.sigma2 = 1e-12;
    let ds = gen_model_I(&spec).unwrap();
    assert!(ds.data.iter().flatten().all(|x| x[0].abs() < 1e-4));

    spec.alpha = 1.0;
    let ds = gen_model_I(&spec).unwrap();
    for s in &ds.data {
        assert!(s.iter().all(|x| (x[0] - s[0][0]).abs() < 1e-4));
    }
    assert!(ds.data[0][0][0] != ds.data[1][0][0]);
}

#[test]
fn model_i_stationary_variance() {
    let spec = SyntheticSpec::model_i(100_000, 24, 7);
    let ds = gen_model_I(&spec).unwrap();
    let (_, var) = mean_var(&last_values(&ds));
    let stationary = 0.5 / (1.0 - 0.64);
    assert!((var / stationary - 1.0).abs() < 0.02, "variance {var}");
}

#[test]
fn model_ii_degenerate_regimes_match_model_i() {
    let mut two = SyntheticSpec::model_ii(20, 12, 3);
    let mut one = SyntheticSpec::model_i(20, 12, 3);
    one.sigma2 = two.sigma2;
    two.p = 1.0;
    one.alpha = two.alpha;
    assert_eq!(gen_model_II(&two).unwrap().data, gen_model_I(&one).unwrap().data);
    two.p = 0.0;
    one.alpha = two.beta;
    assert_eq!(gen_model_II(&two).unwrap().data, gen_model_I(&one).unwrap().data);
}

#[test]
fn model_ii_conditional_mean() {
    let spec = SyntheticSpec::model_ii(100_000, 2, 11);
    let ds = gen_model_II(&spec).unwrap();
    // regress X_2 on X_1 through the origin
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for s in &ds.data {
        sxy += s[0][0] * s[1][0];
        sxx += s[0][0] * s[0][0];
    }
    let slope = sxy / sxx;
    let expected = 0.7 * 0.9 + 0.3 * 0.54;
    // residual variance ~ 0.3 + regime variance; se of slope ~ sqrt(0.35 / sxx)
    let se = (0.4 / sxx).sqrt();
    assert!((slope - expected).abs() < 4.0 * se, "slope {slope}");
}

#[test]
fn generators_are_pure_and_validated() {
    let spec = SyntheticSpec::model_ii(4, 6, 9);
    assert_eq!(gen_model_II(&spec).unwrap(), gen_model_II(&spec).unwrap());
    assert!(gen_model_I(&spec).is_err());
    let mut bad = spec;
    bad.sigma2 = 0.0;
    assert!(gen_model_II(&bad).is_err());
    bad = spec;
    bad.p = 1.5;
    assert!(gen_model_II(&bad).is_err());
    bad = spec;
    bad.len = 1;
    assert!(gen_model_II(&bad).is_err());
}

#[test]
fn csv_round_trip() {
    let text = "series_id,t,f0\na,1,0.5\na,2,1.5\na,3,-2\nb,1,3\nb,2,4\nb,3,5\n";
    let (ds, report) = read_csv(text.as_bytes(), &CsvSchema::default()).unwrap();
    assert_eq!(ds.n_series(), 2);
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.data[0], vec![vec![0.5], vec![1.5], vec![-2.0]]);
    assert_eq!(ds.data[1], vec![vec![3.0], vec![4.0], vec![5.0]]);
    assert_eq!(report.rows_dropped, 0);
    let mut out = Vec::new();
    write_csv(&ds, &mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), text);
}

#[test]
fn csv_errors_name_line_and_column() {
    let text = "series_id,t,f0,f1\na,1,0.5,1\na,2,oops,2\n";
    match read_csv(text.as_bytes(), &CsvSchema::default()) {
        Err(Error::Parse { line, column, .. }) => {
            assert_eq!(line, 3);
            assert_eq!(column, "f0");
        }
        other => panic!("unexpected {other:?}"),
    }
    let ragged = "series_id,t,f0,f1\na,1,0.5,1\na,2,2\n";
    assert!(matches!(
        read_csv(ragged.as_bytes(), &CsvSchema::default()),
        Err(Error::Schema(_))
    ));
    let header = "id,t,f0\na,1,0\n";
    assert!(matches!(
        read_csv(header.as_bytes(), &CsvSchema::default()),
        Err(Error::Parse { line: 1, .. })
    ));
    let unsorted = "series_id,t,f0\na,2,0\na,1,0\n";
    assert!(read_csv(unsorted.as_bytes(), &CsvSchema::default()).is_err());
    let split = "series_id,t,f0\na,1,0\nb,1,0\na,2,0\n";
    assert!(read_csv(split.as_bytes(), &CsvSchema::default()).is_err());
}

#[test]
fn csv_drops_missing_rows_and_selects_targets() {
    let text = "series_id,t,f0,f1,f2\na,1,1,2,3\na,2,,5,6\na,3,7,8,9\na,4,10,NA,12\na,5,13,14,15\n";
    let schema = CsvSchema {
        targets: Some(vec!["f2".into(), "f0".into()]),
        ..CsvSchema::default()
    };
    let (ds, report) = read_csv(text.as_bytes(), &schema).unwrap();
    assert_eq!(report.rows_dropped, 2);
    assert_eq!(report.rows_read, 5);
    assert_eq!(ds.features, vec!["f2", "f0"]);
    assert_eq!(ds.data[0], vec![vec![3.0, 1.0], vec![9.0, 7.0], vec![15.0, 13.0]]);
    let bad = CsvSchema {
        targets: Some(vec!["f9".into()]),
        ..CsvSchema::default()
    };
    assert!(read_csv(text.as_bytes(), &bad).is_err());
}

#[test]
fn csv_windowing() {
    let mut text = String::from("series_id,t,f0\n");
    for t in 1..=100 {
        text.push_str(&format!("s,{t},{t}\n"));
    }
    let schema = CsvSchema {
        window: Some(40),
        stride: Some(40),
        ..CsvSchema::default()
    };
    let (ds, report) = read_csv(text.as_bytes(), &schema).unwrap();
    assert_eq!(ds.n_series(), 2);
    assert_eq!(report.windows, 2);
    assert_eq!(ds.data[1][0], vec![41.0]);
    let overlapping = CsvSchema {
        window: Some(40),
        stride: Some(20),
        ..CsvSchema::default()
    };
    assert_eq!(read_csv(text.as_bytes(), &overlapping).unwrap().0.n_series(), 4);
}

fn dataset(n: usize, len: usize, seed: u64) -> SeriesDataset {
    let mut rng = SeededRng::new(seed);
    let data = (0..n)
        .map(|_| {
            (0..len)
                .map(|_| vec![3.0 + 2.0 * rng.normal(), -1.0 + 0.5 * rng.normal()])
                .collect()
        })
        .collect();
    SeriesDataset::new(
        (0..n).map(|i| i.to_string()).collect(),
        vec!["a".into(), "b".into()],
        data,
    )
    .unwrap()
}

#[test]
fn split_counts() {
    let mut ds = dataset(100, 5, 1);
    ds.assign_splits(&SplitRatios::REAL, 4).unwrap();
    let counts: Vec<usize> = [Split::Train, Split::Val, Split::Test]
        .iter()
        .map(|s| ds.indices(*s).len())
        .collect();
    assert_eq!(counts, vec![70, 15, 15]);
    assert_eq!(SplitRatios::SYNTHETIC.counts(1000).unwrap(), [800, 100, 100]);
    assert!(SplitRatios::REAL.counts(3).is_err());
    let bad = SplitRatios {
        train: 0.5,
        val: 0.2,
        test: 0.2,
    };
    assert!(bad.counts(100).is_err());

    let mut again = dataset(100, 5, 1);
    again.assign_splits(&SplitRatios::REAL, 4).unwrap();
    assert_eq!(ds.splits, again.splits);
    again.assign_splits(&SplitRatios::REAL, 5).unwrap();
    assert_ne!(ds.splits, again.splits);
}

#[test]
fn normalization_uses_train_only() {
    let ds = split_normalize(dataset(60, 8, 2), &SplitRatios::REAL, 3).unwrap();
    let train: Vec<&Vec<f64>> = ds.indices(Split::Train).into_iter().flat_map(|i| &ds.data[i]).collect();
    for j in 0..2 {
        let col: Vec<f64> = train.iter().map(|x| x[j]).collect();
        let n = col.len() as f64;
        let m = col.iter().sum::<f64>() / n;
        let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
        assert!(m.abs() < 1e-10);
        assert!((sd - 1.0).abs() < 1e-10);
    }

    let mut raw = dataset(60, 8, 2);
    raw.assign_splits(&SplitRatios::REAL, 3).unwrap();
    let stats = raw.train_stats().unwrap();
    for i in raw.indices(Split::Test) {
        for x in raw.data[i].iter_mut() {
            x[0] += 100.0;
        }
    }
    assert_eq!(raw.train_stats().unwrap(), stats);
}

#[test]
fn constant_feature_cannot_be_standardized() {
    let data = vec![vec![vec![1.0]; 3]; 10];
    let ds = SeriesDataset::new((0..10).map(|i| i.to_string()).collect(), vec!["c".into()], data).unwrap();
    assert!(matches!(
        split_normalize(ds, &SplitRatios::REAL, 0),
        Err(Error::Schema(_))
    ));
}

proptest! {
    #[test]
    fn denormalize_inverts_normalize(
        x in proptest::collection::vec(-1e3f64..1e3, 3),
        mean in proptest::collection::vec(-10f64..10.0, 3),
        std in proptest::collection::vec(0.01f64..10.0, 3),
    ) {
        let stats = NormStats { mean, std };
        let back = stats.denormalize(&stats.normalize(&x));
        for (a, b) in back.iter().zip(&x) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}
