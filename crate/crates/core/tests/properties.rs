//! Invariants that hold for arbitrary inputs.

use mwlse_core::evaluation::{acf, mae, relative_mse};
use mwlse_core::io::{categorical_stack, load_series, write_series};
use mwlse_core::{MeanPath, Series};
use proptest::prelude::*;

proptest! {
    #[test]
    fn relative_mse_of_identical_sets_is_one(
        rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..20),
        theta0 in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        prop_assume!(rows.iter().any(|r| r.iter().zip(&theta0).any(|(a, b)| (a - b).abs() > 1e-6)));
        let (e, _) = relative_mse(&rows, &rows, &theta0).unwrap();
        prop_assert!((e - 1.0).abs() < 1e-12);
    }

    #[test]
    fn acf_is_bounded(x in prop::collection::vec(-100.0f64..100.0, 5..200)) {
        prop_assume!(x.iter().any(|v| (v - x[0]).abs() > 1e-6));
        let lags = (x.len() - 1).min(15);
        let a = acf(&x, lags).unwrap();
        prop_assert!(a.values.iter().all(|v| v.abs() <= 1.0 + 1e-12));
    }

    #[test]
    fn mae_ignores_time_order(
        pairs in prop::collection::vec((0u8..2, 0.0f64..1.0, 0u8..2, 0.0f64..1.0), 2..50),
        shift in 0usize..50,
    ) {
        let rows = |ps: &[(u8, f64, u8, f64)]| {
            let y: Vec<f64> = ps.iter().flat_map(|p| [p.0 as f64, p.2 as f64]).collect();
            let f: Vec<f64> = ps.iter().flat_map(|p| [p.1, p.3]).collect();
            (Series::new(y, 2).unwrap(), MeanPath::from_raw(f, 2))
        };
        let (y, f) = rows(&pairs);
        let mut rotated = pairs.clone();
        rotated.rotate_left(shift % pairs.len());
        let (y2, f2) = rows(&rotated);
        let (per, overall) = mae(&y, &f).unwrap();
        let (per2, overall2) = mae(&y2, &f2).unwrap();
        prop_assert!((overall - overall2).abs() < 1e-12);
        for (a, b) in per.iter().zip(&per2) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn categorical_stack_rows_hold_at_most_one_per_series(
        cats in prop::collection::vec(prop::collection::vec(1usize..=4, 3), 2..30),
    ) {
        let stacked = categorical_stack(&cats, 4).unwrap();
        prop_assert_eq!(stacked.dim(), 3 * 3);
        for (t, row) in cats.iter().enumerate() {
            let total: f64 = stacked.row(t).iter().sum();
            let expected = row.iter().filter(|&&c| c < 4).count() as f64;
            prop_assert_eq!(total, expected);
            for (i, &c) in row.iter().enumerate() {
                let per_series: f64 = (0..3).map(|j| stacked.get(t, j * 3 + i)).sum();
                prop_assert_eq!(per_series, if c < 4 { 1.0 } else { 0.0 });
            }
        }
    }
}

#[test]
fn series_survives_a_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("panel.csv");
    let y = Series::with_names(vec![0.0, 3.0, 1.0, 2.0, 5.0, 0.0], 2, vec!["north".into(), "south".into()]).unwrap();
    let file = std::fs::File::create(&path).unwrap();
    write_series(file, &y, &[("seed".into(), "7".into())]).unwrap();
    let back = load_series(&path).unwrap();
    assert_eq!(back, y);
}
