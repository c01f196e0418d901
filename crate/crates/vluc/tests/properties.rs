//! Randomized invariant checks over the data pipeline.

use std::collections::BTreeSet;

use chrono::NaiveDate;
use proptest::prelude::*;

use vluc::dataset::{encode_meta, split, Calendar, Scaler, WindowSpec};
use vluc::ingest::{calibrate, clean, RawRecord};
use vluc::rasterize::{density_frame, flow_frame};

fn raw_record(max_objects: usize) -> impl Strategy<Value = RawRecord> {
    (
        0..max_objects,
        0i64..86_400,
        35.0f64..36.0,
        139.0f64..140.0,
    )
        .prop_map(|(obj, ts, lat, lon)| RawRecord {
            object_id: format!("obj{}", obj),
            timestamp: 1_491_004_800 + ts, // 2017-04-01
            lat,
            lon,
        })
}

proptest! {
    // Cleaning twice changes nothing: the kept subset already satisfies
    // the ordering, uniqueness, and speed constraints.
    #[test]
    fn clean_is_idempotent(records in proptest::collection::vec(raw_record(4), 0..60),
                           max_speed in 1.0f64..100.0) {
        let once = clean(&records, max_speed);
        let twice = clean(&once, max_speed);
        prop_assert_eq!(once, twice);
    }

    // Cleaned output is sorted by (object, time) with strictly increasing
    // timestamps per object and no pair exceeding max_speed.
    #[test]
    fn clean_output_satisfies_constraints(records in proptest::collection::vec(raw_record(4), 0..60),
                                          max_speed in 1.0f64..100.0) {
        let out = clean(&records, max_speed);
        for pair in out.windows(2) {
            let key = |r: &RawRecord| (r.object_id.clone(), r.timestamp);
            prop_assert!(key(&pair[0]) < key(&pair[1]));
            if pair[0].object_id == pair[1].object_id {
                let dt = (pair[1].timestamp - pair[0].timestamp) as f64;
                let dist = vluc::ingest::haversine_m(
                    pair[0].lat, pair[0].lon, pair[1].lat, pair[1].lon);
                prop_assert!(dist / dt <= max_speed);
            }
        }
    }

    // Calibration emits consecutive slots covering the observed span, and
    // a raw record sitting exactly on a slot is reused bit-for-bit.
    #[test]
    fn calibrate_slots_and_exact_reuse(
        offsets in proptest::collection::btree_set(0i64..143, 1..12),
        coords in proptest::collection::vec((35.0f64..36.0, 139.0f64..140.0), 12),
    ) {
        let delta_tau = 600;
        let records: Vec<RawRecord> = offsets
            .iter()
            .zip(&coords)
            .map(|(&slot, &(lat, lon))| RawRecord {
                object_id: "a".into(),
                timestamp: 1_491_004_800 + slot * delta_tau,
                lat,
                lon,
            })
            .collect();
        let traj = calibrate(&records, delta_tau).unwrap();
        let first = *offsets.iter().next().unwrap() as usize;
        let last = *offsets.iter().last().unwrap() as usize;
        let slots: Vec<usize> = traj.points.iter().map(|p| p.0).collect();
        prop_assert_eq!(slots, (first..=last).collect::<Vec<_>>());
        for rec in &records {
            let slot = ((rec.timestamp - 1_491_004_800) / delta_tau) as usize;
            let p = traj.points.iter().find(|p| p.0 == slot).unwrap();
            prop_assert_eq!((p.1, p.2), (rec.lat, rec.lon));
        }
    }

    // With every object present at both timestamps, per-cell density obeys
    // d_t = d_{t-1} + inflow_t - outflow_t exactly.
    #[test]
    fn density_flow_conservation(
        prev in proptest::collection::vec((0usize..4, 0usize..5), 1..40),
        curr_seed in proptest::collection::vec((0usize..4, 0usize..5), 40),
    ) {
        let (h, w) = (4, 5);
        let prev: Vec<Option<(usize, usize)>> = prev.into_iter().map(Some).collect();
        let curr: Vec<Option<(usize, usize)>> =
            curr_seed.into_iter().take(prev.len()).map(Some).collect();
        let d_prev = density_frame(&prev, h, w);
        let d_curr = density_frame(&curr, h, w);
        let flow = flow_frame(&prev, &curr, h, w);
        for cell in 0..h * w {
            let lhs = d_curr[cell];
            let rhs = d_prev[cell] + flow[cell * 2] - flow[cell * 2 + 1];
            prop_assert_eq!(lhs, rhs);
        }
    }

    // Scaling maps the fitted range into [0, 1] and inverts to the input.
    #[test]
    fn scaler_roundtrip(lo in -50.0f64..50.0, span in 1e-3f64..100.0, frac in 0.0f64..1.0) {
        let scaler = Scaler { min_value: lo, max_value: lo + span };
        let x = lo + frac * span;
        let y = scaler.scale(x);
        prop_assert!((0.0..=1.0).contains(&y));
        prop_assert!((scaler.inverse_scale(y) - x).abs() < 1e-9 * (1.0 + x.abs()));
    }

    // The chronological split partitions the input at the 64% / 80% marks.
    #[test]
    fn split_partitions(n in 5usize..2000) {
        let samples: Vec<usize> = (0..n).collect();
        let (train, val, test) = split(&samples).unwrap();
        prop_assert_eq!(train.len(), (n as f64 * 0.64).floor() as usize);
        prop_assert_eq!(train.len() + val.len(), (n as f64 * 0.80).floor() as usize);
        let rejoined: Vec<usize> =
            train.iter().chain(val).chain(test).cloned().collect();
        prop_assert_eq!(rejoined, samples);
    }

    // Metadata rows are two one-hots plus a flag: exactly one slot bit,
    // one weekday bit, and a 0/1 holiday bit.
    #[test]
    fn meta_encoding_is_one_hot(t_index in 0usize..10_000, holiday_day in 0usize..14) {
        let spd = 48;
        let calendar = Calendar {
            start_date: NaiveDate::from_ymd_opt(2017, 4, 1).unwrap(),
            steps_per_day: spd,
            holidays: BTreeSet::from([
                NaiveDate::from_ymd_opt(2017, 4, 1).unwrap()
                    + chrono::Duration::days(holiday_day as i64),
            ]),
        };
        let v = encode_meta(t_index, &calendar);
        prop_assert_eq!(v.len(), calendar.meta_dim());
        prop_assert!(v.iter().all(|&x| x == 0.0 || x == 1.0));
        prop_assert_eq!(v[..spd].iter().sum::<f64>(), 1.0);
        prop_assert_eq!(v[spd..spd + 7].iter().sum::<f64>(), 1.0);
        prop_assert_eq!(v[t_index % spd], 1.0);
    }

    // Every window lies in-bounds for every valid target, the closeness
    // window ends at t-1, and the three windows never touch frame t.
    #[test]
    fn window_indices_in_bounds(l_c in 1usize..8, t_p in 10usize..60, extra in 0usize..200) {
        let spec = WindowSpec { l_c, t_c: 0, t_p, t_t: t_p * 7 };
        spec.validate().unwrap();
        let t = spec.first_target() + extra;
        for offset in [spec.t_c, spec.t_p, spec.t_t] {
            let idx = spec.window_indices(t, offset);
            prop_assert_eq!(idx.len(), l_c);
            for pair in idx.windows(2) {
                prop_assert_eq!(pair[1], pair[0] + 1);
            }
            prop_assert_eq!(*idx.last().unwrap(), t - offset - 1);
            prop_assert!(idx.iter().all(|&i| i < t));
        }
    }
}
