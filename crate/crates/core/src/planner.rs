//! Capture planning: pick under-represented buildings per floor category and
//! order the visits with a nearest-neighbour tour improved by 2-opt.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::footprint::{centroid, Footprint, FootprintError, FootprintStore};
use crate::geo::LonLat;
use crate::gpx::{self, GpxPoint};

pub use crate::geo::haversine_m;

/// Tallest category eligible for selection.
pub const MAX_SELECTABLE_FLOORS: u32 = 18;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid distance matrix: {0}")]
    InvalidMatrix(String),
    #[error("empty capture plan")]
    EmptyPlan,
    #[error("invalid quota: {0}")]
    InvalidQuota(String),
    #[error(transparent)]
    Footprint(#[from] FootprintError),
    #[error(transparent)]
    Gpx(#[from] gpx::GpxError),
}

/// Required building count per floor category.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Quota(pub BTreeMap<u32, usize>);

impl Quota {
    /// Reads a JSON object such as `{"10": 4, "12": 3}`.
    pub fn from_json(text: &str) -> Result<Self, PlanError> {
        let raw: BTreeMap<String, usize> =
            serde_json::from_str(text).map_err(|e| PlanError::InvalidQuota(e.to_string()))?;
        raw.into_iter()
            .map(|(k, v)| {
                let floors: u32 = k.trim().parse().map_err(|_| PlanError::InvalidQuota(format!("bad floor key {k:?}")))?;
                if floors == 0 {
                    return Err(PlanError::InvalidQuota("floor key must be >= 1".into()));
                }
                Ok((floors, v))
            })
            .collect::<Result<_, _>>()
            .map(Quota)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection<'a> {
    pub targets: Vec<&'a Footprint>,
    /// Missing buildings per floor category.
    pub shortfalls: BTreeMap<u32, usize>,
}

/// Draws `min(quota, available)` buildings per category, uniformly without
/// replacement. Categories above [`MAX_SELECTABLE_FLOORS`] yield nothing.
pub fn select_targets<'a>(store: &'a FootprintStore, quota: &Quota, seed: u64) -> Selection<'a> {
    let mut by_floor: BTreeMap<u32, Vec<&Footprint>> = BTreeMap::new();
    for fp in store.footprints() {
        if let Some(f) = fp.attrs.floor_count.filter(|&f| f <= MAX_SELECTABLE_FLOORS) {
            by_floor.entry(f).or_default().push(fp);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut targets = Vec::new();
    let mut shortfalls = BTreeMap::new();
    for (&floors, &wanted) in &quota.0 {
        let mut pool = by_floor.remove(&floors).unwrap_or_default();
        pool.sort_by(|a, b| a.id().cmp(b.id()));
        pool.shuffle(&mut rng);
        let take = wanted.min(pool.len());
        if take < wanted {
            shortfalls.insert(floors, wanted - take);
        }
        targets.extend(pool.into_iter().take(take));
    }
    Selection { targets, shortfalls }
}

/// Pairwise great-circle distances.
pub fn distance_matrix(points: &[LonLat]) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = haversine_m(points[i], points[j]);
            m[i][j] = d;
            m[j][i] = d;
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TourKind {
    /// Path that ends wherever the last building is.
    #[default]
    Open,
    /// Cycle returning to the first building.
    Closed,
}

const MAX_PASSES: usize = 10_000;

fn validate_matrix(m: &[Vec<f64>]) -> Result<(), PlanError> {
    let n = m.len();
    if n < 2 {
        return Err(PlanError::InvalidMatrix(format!("need at least 2 points, got {n}")));
    }
    for (i, row) in m.iter().enumerate() {
        if row.len() != n {
            return Err(PlanError::InvalidMatrix(format!("row {i} has {} entries, expected {n}", row.len())));
        }
        for (j, &d) in row.iter().enumerate() {
            if !d.is_finite() || d < 0.0 {
                return Err(PlanError::InvalidMatrix(format!("entry ({i}, {j}) = {d}")));
            }
            if (d - m[j][i]).abs() > 1e-9 {
                return Err(PlanError::InvalidMatrix(format!("asymmetric at ({i}, {j})")));
            }
        }
        if row[i] != 0.0 {
            return Err(PlanError::InvalidMatrix(format!("non-zero diagonal at {i}")));
        }
    }
    Ok(())
}

/// Length of `order` under `m`, including the closing leg for closed tours.
pub fn tour_length(m: &[Vec<f64>], order: &[usize], kind: TourKind) -> f64 {
    let open: f64 = order.windows(2).map(|w| m[w[0]][w[1]]).sum();
    match (kind, order.first(), order.last()) {
        (TourKind::Closed, Some(&a), Some(&b)) if order.len() > 2 => open + m[b][a],
        _ => open,
    }
}

/// Greedy tour from index 0.
pub fn nearest_neighbor(m: &[Vec<f64>]) -> Vec<usize> {
    let n = m.len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut cur = 0;
    visited[0] = true;
    order.push(0);
    for _ in 1..n {
        let next = (0..n)
            .filter(|&j| !visited[j])
            .min_by(|&a, &b| m[cur][a].total_cmp(&m[cur][b]).then(a.cmp(&b)))
            .expect("unvisited node remains");
        visited[next] = true;
        order.push(next);
        cur = next;
    }
    order
}

/// Best-improvement 2-opt: each pass applies the single segment reversal
/// with the largest gain. Open paths also try reversing a prefix or a
/// suffix, which moves an end point.
pub fn two_opt(m: &[Vec<f64>], order: &mut [usize], kind: TourKind) {
    let n = order.len();
    if n < 3 {
        return;
    }
    const GAIN_EPS: f64 = 1e-10;
    for _ in 0..MAX_PASSES {
        let mut best: Option<(f64, usize, usize)> = None;
        // candidate move: reverse order[i..=k]
        for i in 0..n - 1 {
            for k in i + 1..n {
                if i == 0 && k == n - 1 {
                    continue;
                }
                let before = (i > 0).then(|| order[i - 1]);
                let after = (k + 1 < n).then(|| order[k + 1]);
                let (before, after) = match kind {
                    TourKind::Open => (before, after),
                    TourKind::Closed => (before.or(Some(order[n - 1])), after.or(Some(order[0]))),
                };
                let (a, b) = (order[i], order[k]);
                let old = before.map_or(0.0, |p| m[p][a]) + after.map_or(0.0, |q| m[b][q]);
                let new = before.map_or(0.0, |p| m[p][b]) + after.map_or(0.0, |q| m[a][q]);
                let gain = old - new;
                if gain > GAIN_EPS && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, i, k));
                }
            }
        }
        match best {
            Some((_, i, k)) => order[i..=k].reverse(),
            None => return,
        }
    }
    log::warn!("2-opt stopped after {MAX_PASSES} passes");
}

/// Nearest-neighbour tour from index 0 refined by 2-opt. Deterministic.
pub fn solve_tsp(m: &[Vec<f64>], kind: TourKind) -> Result<Vec<usize>, PlanError> {
    validate_matrix(m)?;
    let mut order = nearest_neighbor(m);
    two_opt(m, &mut order, kind);
    Ok(order)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanStop {
    pub footprint_id: String,
    pub floors: Option<u32>,
    pub position: LonLat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapturePlan {
    pub stops: Vec<PlanStop>,
    pub kind: TourKind,
    pub total_distance_m: f64,
    pub photos_per_building: u32,
}

impl CapturePlan {
    /// Leg lengths; the first entry is 0, a closed tour appends the return leg.
    pub fn legs_m(&self) -> Vec<f64> {
        let mut legs = vec![0.0];
        legs.extend(self.stops.windows(2).map(|w| haversine_m(w[0].position, w[1].position)));
        if self.kind == TourKind::Closed && self.stops.len() > 2 {
            legs.push(haversine_m(self.stops[self.stops.len() - 1].position, self.stops[0].position));
        }
        legs
    }
}

/// Orders selected footprints by centroid into a capture plan.
pub fn plan_route(targets: &[&Footprint], kind: TourKind, photos_per_building: u32) -> Result<CapturePlan, PlanError> {
    let stops: Vec<PlanStop> = targets
        .iter()
        .map(|fp| {
            Ok(PlanStop { footprint_id: fp.id().to_owned(), floors: fp.attrs.floor_count, position: centroid(fp)? })
        })
        .collect::<Result<_, PlanError>>()?;
    let ordered = match stops.len() {
        0 => return Err(PlanError::EmptyPlan),
        1 => stops,
        _ => {
            let pts: Vec<LonLat> = stops.iter().map(|s| s.position).collect();
            let order = solve_tsp(&distance_matrix(&pts), kind)?;
            order.into_iter().map(|i| stops[i].clone()).collect()
        }
    };
    let mut plan = CapturePlan { stops: ordered, kind, total_distance_m: 0.0, photos_per_building };
    plan.total_distance_m = plan.legs_m().iter().sum();
    Ok(plan)
}

/// GPX route plus a legs CSV (`order,footprint_id,floors,lon,lat,leg_m,cumulative_m`).
pub fn export_route(plan: &CapturePlan) -> Result<(String, String), PlanError> {
    if plan.stops.is_empty() {
        return Err(PlanError::EmptyPlan);
    }
    let points: Vec<GpxPoint> = plan
        .stops
        .iter()
        .map(|s| GpxPoint {
            position: s.position,
            name: Some(s.footprint_id.clone()),
            time: None,
            description: Some(format!(
                "floors={} photos={}",
                s.floors.map_or("?".to_string(), |f| f.to_string()),
                plan.photos_per_building
            )),
        })
        .collect();
    let gpx_text = gpx::write_route("capture route", &points);

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["order", "footprint_id", "floors", "lon", "lat", "leg_m", "cumulative_m"]).expect("in-memory");
    let legs = plan.legs_m();
    let mut cumulative = 0.0;
    for (k, s) in plan.stops.iter().enumerate() {
        cumulative += legs[k];
        w.write_record([
            k.to_string(),
            s.footprint_id.clone(),
            s.floors.map_or(String::new(), |f| f.to_string()),
            format!("{:.9}", s.position.lon),
            format!("{:.9}", s.position.lat),
            format!("{:.3}", legs[k]),
            format!("{:.3}", cumulative),
        ])
        .expect("in-memory");
    }
    if legs.len() > plan.stops.len() {
        cumulative += legs[plan.stops.len()];
        let s = &plan.stops[0];
        w.write_record([
            plan.stops.len().to_string(),
            s.footprint_id.clone(),
            s.floors.map_or(String::new(), |f| f.to_string()),
            format!("{:.9}", s.position.lon),
            format!("{:.9}", s.position.lat),
            format!("{:.3}", legs[plan.stops.len()]),
            format!("{:.3}", cumulative),
        ])
        .expect("in-memory");
    }
    let csv_text = String::from_utf8(w.into_inner().expect("in-memory")).expect("utf8");
    Ok((gpx_text, csv_text))
}

/// Footprint ids of a route GPX, in visit order.
pub fn read_route_order(gpx_text: &str) -> Result<Vec<String>, PlanError> {
    Ok(gpx::read_points(gpx_text)?
        .into_iter()
        .filter(|(k, _)| *k == gpx::GpxKind::RoutePoint)
        .filter_map(|(_, p)| p.name)
        .collect())
}

/// Shortfall report as CSV (`floors,missing`).
pub fn shortfall_csv(shortfalls: &BTreeMap<u32, usize>) -> String {
    let mut out = String::from("floors,missing\n");
    for (f, n) in shortfalls {
        out.push_str(&format!("{f},{n}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::footprint::BuildingAttributes;

    fn store_with(floors: &[u32]) -> FootprintStore {
        let fps = floors
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                let lon = 11.5 + i as f64 * 0.001;
                Footprint::new(
                    format!("b{i:03}"),
                    &[LonLat::new(lon, 48.1), LonLat::new(lon + 0.0002, 48.1), LonLat::new(lon + 0.0002, 48.1002), LonLat::new(lon, 48.1002)],
                    BuildingAttributes { floor_count: Some(f), ..Default::default() },
                )
                .unwrap()
            })
            .collect();
        FootprintStore::from_footprints(fps, 0.005).unwrap()
    }

    #[test]
    fn selection_is_seeded_and_capped() {
        let store = store_with(&[10, 10, 10, 10, 10, 18, 18, 18, 18, 3, 19]);
        let q = Quota(BTreeMap::from([(10, 2)]));
        let a = select_targets(&store, &q, 7);
        let b = select_targets(&store, &q, 7);
        assert_eq!(a.targets.len(), 2);
        assert_eq!(a, b);
        assert!(a.shortfalls.is_empty());

        let q = Quota(BTreeMap::from([(18, 5), (19, 1)]));
        let s = select_targets(&store, &q, 1);
        assert_eq!(s.targets.len(), 4);
        assert_eq!(s.shortfalls, BTreeMap::from([(18, 1), (19, 1)]));
    }

    #[test]
    fn quota_json() {
        let q = Quota::from_json(r#"{"10": 4, "12": 3}"#).unwrap();
        assert_eq!(q.0, BTreeMap::from([(10, 4), (12, 3)]));
        assert!(Quota::from_json(r#"{"x": 1}"#).is_err());
        assert!(Quota::from_json(r#"{"0": 1}"#).is_err());
    }

    #[test]
    fn tiny_instances() {
        let m = vec![vec![0.0, 5.0], vec![5.0, 0.0]];
        assert_eq!(solve_tsp(&m, TourKind::Open).unwrap(), vec![0, 1]);
        // collinear A-B-C with A at index 0
        let xs = [0.0, 1.0, 3.0];
        let m: Vec<Vec<f64>> = xs.iter().map(|a| xs.iter().map(|b| f64::abs(a - b)).collect()).collect();
        let order = solve_tsp(&m, TourKind::Open).unwrap();
        assert_eq!(order, vec![0, 1, 2]);
        assert_eq!(tour_length(&m, &order, TourKind::Open), 3.0);
    }

    #[test]
    fn matrix_validation() {
        assert!(solve_tsp(&[vec![0.0]], TourKind::Open).is_err());
        assert!(solve_tsp(&[vec![0.0, 1.0], vec![2.0, 0.0]], TourKind::Open).is_err());
        assert!(solve_tsp(&[vec![0.0, -1.0], vec![-1.0, 0.0]], TourKind::Open).is_err());
        assert!(solve_tsp(&[vec![0.0, 1.0], vec![1.0 + 1e-12, 0.0]], TourKind::Open).is_ok());
    }

    #[test]
    fn two_opt_removes_a_crossing() {
        // square corners visited in a crossing order
        let pts = [(0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0)];
        let m: Vec<Vec<f64>> = pts
            .iter()
            .map(|a| pts.iter().map(|b| f64::hypot(a.0 - b.0, a.1 - b.1)).collect())
            .collect();
        let mut order = vec![0, 1, 2, 3];
        two_opt(&m, &mut order, TourKind::Closed);
        assert!((tour_length(&m, &order, TourKind::Closed) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn single_building_route() {
        let store = store_with(&[12]);
        let fps: Vec<&Footprint> = store.footprints().iter().collect();
        let plan = plan_route(&fps, TourKind::Open, 3).unwrap();
        assert_eq!(plan.total_distance_m, 0.0);
        let (gpx_text, csv_text) = export_route(&plan).unwrap();
        assert_eq!(gpx_text.matches("<rtept").count(), 1);
        assert!(csv_text.lines().nth(1).unwrap().ends_with(",0.000,0.000"));
        assert!(matches!(plan_route(&[], TourKind::Open, 3), Err(PlanError::EmptyPlan)));
    }

    #[test]
    fn route_round_trip_and_cumulative_total() {
        let store = store_with(&[9, 10, 11, 12, 13, 14]);
        let fps: Vec<&Footprint> = store.footprints().iter().rev().collect();
        for kind in [TourKind::Open, TourKind::Closed] {
            let plan = plan_route(&fps, kind, 3).unwrap();
            let (gpx_text, csv_text) = export_route(&plan).unwrap();
            let order = read_route_order(&gpx_text).unwrap();
            let expected: Vec<String> = plan.stops.iter().map(|s| s.footprint_id.clone()).collect();
            assert_eq!(order, expected);
            let last: f64 = csv_text.lines().last().unwrap().rsplit(',').next().unwrap().parse().unwrap();
            assert!((last - plan.total_distance_m).abs() < 1e-3);
        }
    }
}
