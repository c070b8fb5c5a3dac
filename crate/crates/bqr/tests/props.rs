//! Property-based invariants for the data layer and the loss/summary
//! primitives.

use proptest::prelude::*;

use bqr::engine::check_loss;
use bqr::ingest::{self, Band, Dataset};

fn finite_vec(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e6f64..1e6, len)
}

proptest! {
    #[test]
    fn standardize_round_trips(values in finite_vec(2..60)) {
        let spread = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - values.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-6);
        let d = Dataset::new(vec!["a".into()], vec![values.clone()]).unwrap();
        let (s, rep) = ingest::standardize(&d, &["a".to_string()]).unwrap();
        for (v, o) in s.column("a").unwrap().iter().zip(&values) {
            let back = rep.destandardize("a", *v);
            prop_assert!((back - o).abs() <= 1e-6 * o.abs().max(1.0));
        }
    }

    #[test]
    fn bands_partition_and_respect_order(values in finite_vec(5..80)) {
        let bands = match ingest::quantile_bands(&values, 0.15, 0.85) {
            Ok(b) => b,
            Err(_) => return Ok(()), // degenerate spread is allowed to fail
        };
        prop_assert_eq!(bands.len(), values.len());
        // every LOW value lies below every HIGH value
        let max_low = values.iter().zip(&bands)
            .filter(|(_, b)| **b == Band::Low)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let min_high = values.iter().zip(&bands)
            .filter(|(_, b)| **b == Band::High)
            .map(|(v, _)| *v)
            .fold(f64::INFINITY, f64::min);
        prop_assert!(max_low < min_high);
    }

    #[test]
    fn sample_quantile_is_monotone_and_bounded(
        values in finite_vec(1..50),
        p1 in 0.0f64..1.0,
        p2 in 0.0f64..1.0,
    ) {
        let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        let qlo = ingest::sample_quantile(&values, lo).unwrap();
        let qhi = ingest::sample_quantile(&values, hi).unwrap();
        prop_assert!(qlo <= qhi);
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min <= qlo && qhi <= max);
    }

    #[test]
    fn check_loss_is_nonnegative_and_scales(u in -1e6f64..1e6, tau in 0.01f64..0.99) {
        let loss = check_loss(u, tau);
        prop_assert!(loss >= 0.0);
        prop_assert!((check_loss(2.0 * u, tau) - 2.0 * loss).abs() <= 1e-9 * loss.max(1.0));
        // the two one-sided slopes add to |u|
        let total = check_loss(u, tau) + check_loss(-u, tau);
        prop_assert!((total - u.abs()).abs() <= 1e-9 * u.abs().max(1.0));
    }

    #[test]
    fn dataset_serialization_round_trips(values in finite_vec(1..40)) {
        let d = Dataset::new(vec!["a".into()], vec![values]).unwrap();
        let (back, dropped) = ingest::read_raw(std::io::Cursor::new(d.serialize())).unwrap();
        prop_assert_eq!(dropped, 0);
        prop_assert_eq!(back, d);
    }
}
