use std::collections::BTreeMap;

use flexbus::domain::Rect;
use flexbus::ingest::{ingest, read_records, GridSpec, IngestOptions, RequestRecord};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn grid() -> GridSpec {
    GridSpec { area: Rect { x_min: 0.0, y_min: 0.0, x_max: 3000.0, y_max: 3000.0 }, nx: 3, ny: 3 }
}

/// Clustered trips around a few hot spots, some outside the area.
fn clustered(seed: u64, n: usize) -> Vec<RequestRecord> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let spots = [(500.0, 500.0), (2500.0, 1500.0), (1500.0, 2600.0)];
    (0..n)
        .map(|_| {
            let (ox, oy) = spots[rng.gen_range(0..3)];
            let (dx, dy) = spots[rng.gen_range(0..3)];
            RequestRecord {
                origin_x: ox + rng.gen_range(-700.0..700.0),
                origin_y: oy + rng.gen_range(-700.0..700.0),
                dest_x: dx + rng.gen_range(-700.0..700.0),
                dest_y: dy + rng.gen_range(-700.0..700.0),
                timestamp: rng.gen_range(0.0..7200.0),
                passengers: rng.gen_range(1..=2),
            }
        })
        .collect()
}

#[test]
fn od_counts_match_a_hand_tally() {
    let recs = clustered(9, 400);
    let res = ingest(&recs, &grid(), &IngestOptions::default()).unwrap();
    let cell = |x: f64, y: f64| -> Option<usize> {
        if !(0.0..=3000.0).contains(&x) || !(0.0..=3000.0).contains(&y) {
            return None;
        }
        let c = |v: f64| ((v / 1000.0) as usize).min(2);
        Some(c(y) * 3 + c(x))
    };
    let mut tally: BTreeMap<(String, String, u32), u32> = BTreeMap::new();
    for r in &recs {
        if let (Some(o), Some(d)) = (cell(r.origin_x, r.origin_y), cell(r.dest_x, r.dest_y)) {
            if o != d {
                let l = |z: usize| ((b'A' + z as u8) as char).to_string();
                *tally.entry((l(o), l(d), r.passengers)).or_default() += 1;
            }
        }
    }
    let got: BTreeMap<(String, String, u32), u32> =
        res.demand.iter().map(|d| ((d.origin.clone(), d.dest.clone(), d.passengers), d.counts.iter().sum())).collect();
    assert_eq!(got, tally);
    assert_eq!(res.windows, 8);
    assert!((res.max_distance - 1000.0 * 2f64.sqrt()).abs() < 1e-9);
}

#[test]
fn csv_header_and_scaling() {
    let text = "origin_x,origin_y,dest_x,dest_y,timestamp,passengers\n100,100,2900,2900,0,1\n120,100,2900,2800,60,1\n";
    let recs = read_records(text.as_bytes()).unwrap();
    let opts = IngestOptions { scale: 0.5, ..Default::default() };
    let res = ingest(&recs, &grid(), &opts).unwrap();
    assert_eq!(res.demand[0].counts, vec![1]);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn records_are_conserved(seed in 0u64..10_000, n in 0usize..300, day in prop::option::of(0i64..2)) {
        let mut recs = clustered(seed, n);
        for (i, r) in recs.iter_mut().enumerate() {
            r.timestamp += (i % 2) as f64 * 86_400.0;
        }
        let opts = IngestOptions { days: day.into_iter().collect(), ..Default::default() };
        let res = ingest(&recs, &grid(), &opts).unwrap();
        prop_assert_eq!(res.parsed, res.kept + res.dropped_intra_zone + res.dropped_out_of_bounds + res.dropped_by_day);
        let counted: u32 = res.demand.iter().map(|d| d.counts.iter().sum::<u32>()).sum();
        prop_assert_eq!(counted as usize, res.kept);
        let samples: usize = res.detour_samples.iter().map(|s| s.len()).sum();
        prop_assert_eq!(samples, 2 * res.kept);
    }
}
