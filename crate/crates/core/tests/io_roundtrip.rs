use proptest::prelude::*;

use tqa_core::io::{read_intervals, read_panel, write_intervals, write_panel};
use tqa_core::{ForecastPanel, IntervalCell, IntervalPanel, Series, Split};

fn value() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6..1e6f64,
        -1.0..1.0f64,
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
    ]
}

fn panel() -> impl Strategy<Value = ForecastPanel> {
    (1usize..6, 1usize..5, any::<bool>(), any::<bool>()).prop_flat_map(|(n, horizon, quantiles, sigma)| {
        let cells = n * horizon;
        (
            prop::collection::vec(value(), cells),
            prop::collection::vec(value(), cells),
            prop::collection::vec((value(), value()), cells),
            prop::collection::vec(value(), cells),
            prop::collection::vec(0u8..3, n),
        )
            .prop_map(move |(y, y_hat, q, s, splits)| {
                let series = (0..n)
                    .map(|i| {
                        let row = |v: &[f64]| v[i * horizon..(i + 1) * horizon].to_vec();
                        let split = [Split::Train, Split::Calibration, Split::Test][splits[i] as usize];
                        let mut out = Series::new(format!("id-{i}"), split, row(&y), row(&y_hat));
                        if quantiles {
                            let q = &q[i * horizon..(i + 1) * horizon];
                            out.q_lo = Some(q.iter().map(|p| p.0.min(p.1)).collect());
                            out.q_hi = Some(q.iter().map(|p| p.0.max(p.1)).collect());
                        }
                        if sigma {
                            out.sigma_hat = Some(row(&s).iter().map(|v| v.abs().max(f64::MIN_POSITIVE)).collect());
                        }
                        out
                    })
                    .collect();
                ForecastPanel::from_series(series).unwrap()
            })
    })
}

fn endpoint() -> impl Strategy<Value = f64> {
    prop_oneof![value(), Just(f64::INFINITY), Just(f64::NEG_INFINITY)]
}

fn intervals() -> impl Strategy<Value = IntervalPanel> {
    (1usize..5, 1usize..5).prop_flat_map(|(n, horizon)| {
        prop::collection::vec((endpoint(), endpoint(), value(), any::<bool>()), n * horizon).prop_map(move |cells| {
            let rows = cells
                .chunks(horizon)
                .map(|row| {
                    row.iter()
                        .map(|&(a, b, level, covered)| IntervalCell {
                            lo: a.min(b),
                            hi: a.max(b),
                            level,
                            covered,
                        })
                        .collect()
                })
                .collect();
            IntervalPanel::from_rows((0..n).map(|i| format!("t{i}")).collect(), horizon, rows).unwrap()
        })
    })
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 300, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn panel_csv_is_lossless(p in panel()) {
        let mut buf = Vec::new();
        write_panel(&mut buf, &p).unwrap();
        let back = read_panel(buf.as_slice(), "mem").unwrap();
        prop_assert_eq!(back.ids(), p.ids());
        prop_assert_eq!(back.splits(), p.splits());
        for i in 0..p.n_series() {
            prop_assert_eq!(bits(back.y(i)), bits(p.y(i)));
            prop_assert_eq!(bits(back.y_hat(i)), bits(p.y_hat(i)));
            prop_assert_eq!(back.q_lo(i).map(bits), p.q_lo(i).map(bits));
            prop_assert_eq!(back.q_hi(i).map(bits), p.q_hi(i).map(bits));
            prop_assert_eq!(back.sigma_hat(i).map(bits), p.sigma_hat(i).map(bits));
        }
        let mut again = Vec::new();
        write_panel(&mut again, &back).unwrap();
        prop_assert_eq!(again, buf);
    }

    #[test]
    fn interval_csv_is_lossless(iv in intervals()) {
        let mut buf = Vec::new();
        write_intervals(&mut buf, &iv).unwrap();
        let back = read_intervals(buf.as_slice(), "mem").unwrap();
        prop_assert_eq!(back.ids(), iv.ids());
        for i in 0..iv.n_series() {
            for t in 0..iv.horizon() {
                let (a, b) = (iv.cell(i, t), back.cell(i, t));
                prop_assert_eq!(
                    (a.lo.to_bits(), a.hi.to_bits(), a.level.to_bits(), a.covered),
                    (b.lo.to_bits(), b.hi.to_bits(), b.level.to_bits(), b.covered)
                );
            }
        }
    }
}
