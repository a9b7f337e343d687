use proptest::prelude::*;

use storey_core::evaluation::evaluate;
use storey_core::footprint::{BuildingAttributes, Footprint, FootprintStore};
use storey_core::geo::{haversine_m, LonLat, Xy};
use storey_core::head::{combine, expectation, predict, FloorLabel, HeadOutputs, SubsetPartition};
use storey_core::matcher::{BearingSpan, ProjectedScene};
use storey_core::planner::{nearest_neighbor, solve_tsp, tour_length, TourKind};
use storey_core::quality::{evaluate_filters, Decision, SegmentationSummary, Thresholds};
use storey_core::stats::{floor_histogram, DatasetRecord, Source};

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn cuts() -> impl Strategy<Value = Vec<usize>> {
    proptest::collection::btree_set(1usize..18, 0..4).prop_map(|s| s.into_iter().collect())
}

fn outputs_for(part: SubsetPartition) -> impl Strategy<Value = (SubsetPartition, HeadOutputs)> {
    let gate = proptest::collection::vec(0.01f64..1.0, part.len());
    let within: Vec<_> = part.ranges().into_iter().map(|r| proptest::collection::vec(0.01f64..1.0, r.len())).collect();
    (gate, within).prop_map(move |(g, w)| {
        let outputs = HeadOutputs { gate: normalized(g), within: w.into_iter().map(normalized).collect() };
        (part.clone(), outputs)
    })
}

fn labels(n: usize) -> impl Strategy<Value = Vec<FloorLabel>> {
    proptest::collection::vec((0i64..18).prop_map(|c| FloorLabel::new(c).unwrap()), n)
}

fn square(cx: f64, cy: f64, half: f64) -> Vec<Xy> {
    vec![
        Xy::new(cx - half, cy - half),
        Xy::new(cx + half, cy - half),
        Xy::new(cx + half, cy + half),
        Xy::new(cx - half, cy + half),
        Xy::new(cx - half, cy - half),
    ]
}

fn rotate(p: Xy, deg: f64) -> Xy {
    // clockwise, matching compass bearings
    let (s, c) = deg.to_radians().sin_cos();
    Xy::new(p.x * c + p.y * s, -p.x * s + p.y * c)
}

fn grid_scene() -> impl Strategy<Value = Vec<(String, Vec<Xy>)>> {
    // squares on a coarse grid never overlap
    proptest::collection::btree_set((-6i32..=6, -6i32..=6), 1..25).prop_map(|cells| {
        cells
            .into_iter()
            .filter(|&(i, j)| (i, j) != (0, 0))
            .enumerate()
            .map(|(k, (i, j))| (format!("s{k:02}"), square(i as f64 * 15.0, j as f64 * 15.0, 5.0)))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn partition_covers_every_class_once(cuts in cuts()) {
        let part = SubsetPartition::new(cuts).unwrap();
        let mut next = 0;
        for r in part.ranges() {
            prop_assert_eq!(r.start, next);
            prop_assert!(!r.is_empty());
            for c in r.clone() {
                prop_assert_eq!(part.range(part.subset_of(c)), r.clone());
            }
            next = r.end;
        }
        prop_assert_eq!(next, 18);
    }

    #[test]
    fn combine_is_a_pmf((part, o) in cuts().prop_flat_map(|c| outputs_for(SubsetPartition::new(c).unwrap()))) {
        let pmf = combine(&o, &part);
        prop_assert!((pmf.sum() - 1.0).abs() < 1e-9);
        prop_assert!(pmf.0.iter().all(|&p| p >= 0.0));
        let f = expectation(&pmf);
        prop_assert!((0.0..=17.0).contains(&f));
        for (k, r) in part.ranges().into_iter().enumerate() {
            let mass: f64 = pmf.0[r].iter().sum();
            prop_assert!((mass - o.gate[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn predict_is_monotone(a in -5.0f64..25.0, b in -5.0f64..25.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(predict(lo).class() <= predict(hi).class());
        prop_assert!(predict(a).class() < 18);
    }

    #[test]
    fn metric_invariants((preds, gts) in (1usize..60).prop_flat_map(|n| (labels(n), labels(n))), rot in 0usize..60) {
        let r = evaluate(&preds, &gts).unwrap();
        prop_assert!(r.accuracy <= r.accuracy_pm1);
        prop_assert!(r.mae <= r.rmse + 1e-12);
        for row in &r.confusion {
            let s: f64 = row.iter().sum();
            prop_assert!(s == 0.0 || (s - 100.0).abs() < 1e-9);
        }
        let k = rot % preds.len();
        let mut p2 = preds.clone();
        let mut g2 = gts.clone();
        p2.rotate_left(k);
        g2.rotate_left(k);
        let r2 = evaluate(&p2, &g2).unwrap();
        prop_assert!((r.mae - r2.mae).abs() < 1e-12);
        prop_assert_eq!(r.accuracy, r2.accuracy);
        prop_assert_eq!(&r.confusion, &r2.confusion);
    }

    #[test]
    fn histogram_ignores_record_order(floors in proptest::collection::vec((1u32..25, any::<bool>()), 1..200), seed in any::<u64>()) {
        let records: Vec<DatasetRecord> = floors
            .iter()
            .enumerate()
            .map(|(i, &(f, own))| DatasetRecord {
                image_id: format!("i{i}"),
                footprint_id: format!("b{i}"),
                floor_count: f,
                source: if own { Source::SelfCaptured } else { Source::Mapillary },
                height_m: None,
            })
            .collect();
        let mut shuffled = records.clone();
        let k = (seed % records.len() as u64) as usize;
        shuffled.rotate_left(k);
        shuffled.reverse();
        let a = floor_histogram(&records).unwrap();
        let b = floor_histogram(&shuffled).unwrap();
        prop_assert_eq!(a.to_csv(), b.to_csv());
        prop_assert_eq!(a.totals.total, records.len());
        prop_assert_eq!(a.totals.mapillary + a.totals.self_captured, a.totals.total);
    }

    #[test]
    fn tsp_returns_a_shorter_permutation(pts in proptest::collection::vec((0.0f64..500.0, 0.0f64..500.0), 2..12), closed in any::<bool>()) {
        let m: Vec<Vec<f64>> = pts
            .iter()
            .map(|a| pts.iter().map(|b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()).collect())
            .collect();
        let kind = if closed { TourKind::Closed } else { TourKind::Open };
        let tour = solve_tsp(&m, kind).unwrap();
        let mut seen = tour.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..pts.len()).collect::<Vec<_>>());
        prop_assert!(tour_length(&m, &tour, kind) <= tour_length(&m, &nearest_neighbor(&m), kind) + 1e-9);
    }

    #[test]
    fn haversine_is_a_metric(a in (11.0f64..12.0, 48.0f64..48.5), b in (11.0f64..12.0, 48.0f64..48.5), c in (11.0f64..12.0, 48.0f64..48.5)) {
        let (a, b, c) = (LonLat::new(a.0, a.1), LonLat::new(b.0, b.1), LonLat::new(c.0, c.1));
        let ab = haversine_m(a, b);
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - haversine_m(b, a)).abs() <= 1e-9 * ab.max(1.0));
        prop_assert!(haversine_m(a, c) <= (ab + haversine_m(b, c)) * (1.0 + 1e-6));
    }

    #[test]
    fn quality_rejection_is_monotone(b in 0.0f64..0.5, v in 0.0f64..0.5, tb in 0.0f64..0.5, tv in 0.0f64..0.5, win in any::<bool>(), drop in 0.0f64..0.2) {
        let s = SegmentationSummary {
            frac_building: b,
            frac_vegetation: v,
            frac_sky: 1.0 - b - v,
            frac_other: 0.0,
            top_rows_building_frac: tb,
            top_rows_vegetation_frac: tv,
            window_detected: win,
        };
        let t = Thresholds::default();
        let before = evaluate_filters(&s, &t).unwrap();
        // less building can only add reasons
        let less = SegmentationSummary { frac_building: (b - drop).max(0.0), frac_sky: 1.0 - (b - drop).max(0.0) - v, ..s.clone() };
        let after = evaluate_filters(&less, &t).unwrap();
        if let Decision::Reject(r0) = &before {
            match &after {
                Decision::Reject(r1) => prop_assert!(r0.is_subset(r1)),
                Decision::Keep => prop_assert!(false, "rejection vanished"),
            }
        }
    }

    #[test]
    fn bisect_votes_are_bounded(scene in grid_scene(), start in 0.0f64..360.0, width in 1.0f64..120.0, eps in 0.1f64..2.0) {
        let proj = ProjectedScene::from_rings(scene);
        let span = BearingSpan::new(start, width);
        let r = proj.match_bisect(span, eps, 100.0).unwrap();
        let total: f64 = r.votes.values().sum();
        prop_assert!(total <= width + 1e-9);
        prop_assert!((0.0..=1.0).contains(&r.confidence));
        prop_assert_eq!(r.footprint_id.is_none(), r.votes.is_empty());
        let dense = proj.match_dense(span, (width / eps).ceil() as usize + 1, 100.0).unwrap();
        prop_assert!(r.rays_cast <= dense.rays_cast, "{} > {}", r.rays_cast, dense.rays_cast);
    }

    #[test]
    fn cast_is_rotation_consistent(scene in grid_scene(), bearing in 0.0f64..360.0, turn in 0.0f64..360.0) {
        let a = ProjectedScene::from_rings(scene.clone());
        let rotated = scene.into_iter().map(|(id, ring)| (id, ring.into_iter().map(|p| rotate(p, turn)).collect()));
        let b = ProjectedScene::from_rings(rotated);
        let ha = a.cast(bearing, 100.0);
        let hb = b.cast(bearing + turn, 100.0);
        match (ha, hb) {
            (Some((i, d1)), Some((j, d2))) => {
                // corner grazes may legitimately flip; only compare clean hits
                if (d1 - d2).abs() > 1e-6 {
                    prop_assert!(a.id(i) != b.id(j) && (d1 - d2).abs() < 1e-3, "{} {} vs {} {}", a.id(i), d1, b.id(j), d2);
                } else {
                    prop_assert_eq!(a.id(i), b.id(j));
                }
            }
            (None, None) => {}
            (x, y) => prop_assert!(false, "{x:?} vs {y:?}"),
        }
    }

    #[test]
    fn buffer_query_grows_with_radius(cx in -0.01f64..0.01, cy in -0.01f64..0.01, r1 in 1.0f64..500.0, extra in 0.0f64..500.0) {
        let base = LonLat::new(11.55, 48.14);
        let fps: Vec<Footprint> = (0..40)
            .map(|i| {
                let (x, y) = (base.lon + (i % 8) as f64 * 0.003 - 0.012, base.lat + (i / 8) as f64 * 0.002 - 0.005);
                let ring = [LonLat::new(x, y), LonLat::new(x + 0.0004, y), LonLat::new(x + 0.0004, y + 0.0003), LonLat::new(x, y + 0.0003)];
                Footprint::new(format!("f{i:02}"), &ring, BuildingAttributes::default()).unwrap()
            })
            .collect();
        let store = FootprintStore::from_footprints(fps, 0.002).unwrap();
        let center = LonLat::new(base.lon + cx, base.lat + cy);
        let small: Vec<&str> = store.query_buffer(center, r1).iter().map(|f| f.id()).collect();
        let large: Vec<&str> = store.query_buffer(center, r1 + extra).iter().map(|f| f.id()).collect();
        prop_assert!(small.iter().all(|id| large.contains(id)));
        for f in store.footprints() {
            prop_assert_eq!(small.contains(&f.id()), f.intersects_circle(center, r1));
        }
    }
}
