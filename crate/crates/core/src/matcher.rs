//! Crop-to-footprint matching by field-of-view ray casting.
//!
//! A crop's pixel columns map linearly onto a bearing interval seen from the
//! camera. Rays cast across that interval hit footprint rings on the local
//! tangent plane; each footprint collects the angular width of the rays that
//! hit it first, and the largest share wins.
//!
//! Two samplers are provided. [`match_dense`] casts a fixed number of evenly
//! spaced rays. [`match_bisect`] casts rays at the ends of an interval and
//! only subdivides where the two ends disagree, which needs far fewer rays
//! when one facade fills most of the view.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::footprint::{Footprint, FootprintStore};
use crate::geo::{bearing_dir, normalize_deg, LonLat, Xy};
use crate::ingestion::{CameraType, ImageMeta};
use crate::polygon;

#[derive(Debug, Error, PartialEq)]
pub enum MatchError {
    #[error("invalid crop: {0}")]
    InvalidCrop(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Horizontal pixel extent `[x_min_px, x_max_px)` of one detected building.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropBox {
    pub image_id: String,
    #[serde(default)]
    pub crop_index: Option<u32>,
    pub x_min_px: f64,
    pub x_max_px: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraView {
    pub origin: LonLat,
    pub heading_deg: f64,
    pub hfov_deg: f64,
    pub image_width_px: u32,
}

impl CameraView {
    pub fn new(origin: LonLat, heading_deg: f64, hfov_deg: f64, image_width_px: u32) -> Result<Self, MatchError> {
        if !(hfov_deg > 0.0 && hfov_deg < 180.0) {
            return Err(MatchError::InvalidCamera(format!("hfov_deg {hfov_deg} outside (0, 180)")));
        }
        if image_width_px == 0 {
            return Err(MatchError::InvalidCamera("zero image width".into()));
        }
        Ok(Self { origin, heading_deg, hfov_deg, image_width_px })
    }
}

/// A clockwise bearing interval starting at `start_deg` and spanning `width_deg`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BearingSpan {
    pub start_deg: f64,
    pub width_deg: f64,
}

impl BearingSpan {
    pub fn new(start_deg: f64, width_deg: f64) -> Self {
        Self { start_deg: normalize_deg(start_deg), width_deg }
    }

    pub fn end_deg(&self) -> f64 {
        normalize_deg(self.start_deg + self.width_deg)
    }

    fn at(&self, offset_deg: f64) -> f64 {
        normalize_deg(self.start_deg + offset_deg)
    }
}

/// Bearings of the crop's left and right edges.
pub fn crop_bearings(crop: &CropBox, cam: &CameraView) -> Result<BearingSpan, MatchError> {
    let w = cam.image_width_px as f64;
    if !(crop.x_min_px.is_finite() && crop.x_max_px.is_finite()) {
        return Err(MatchError::InvalidCrop("non-finite pixel column".into()));
    }
    if !(0.0 <= crop.x_min_px && crop.x_min_px < crop.x_max_px && crop.x_max_px <= w) {
        return Err(MatchError::InvalidCrop(format!(
            "[{}, {}) not within image width {}",
            crop.x_min_px, crop.x_max_px, cam.image_width_px
        )));
    }
    let start = cam.heading_deg + (crop.x_min_px / w - 0.5) * cam.hfov_deg;
    let width = (crop.x_max_px - crop.x_min_px) / w * cam.hfov_deg;
    Ok(BearingSpan::new(start, width))
}

/// First footprint hit along a ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RayHit {
    pub footprint_id: String,
    pub distance_m: f64,
}

struct SceneItem {
    id: String,
    ring: Vec<Xy>,
    lo: Xy,
    hi: Xy,
    contains_origin: bool,
    /// Clockwise bearing interval `(start, width)` covered by the ring; the
    /// full circle when the ring surrounds the origin.
    extent: (f64, f64),
    /// Distance from the origin to the nearest ring point.
    near_m: f64,
}

fn bearing_extent(ring: &[Xy]) -> (f64, f64) {
    let bearing = |p: &Xy| p.x.atan2(p.y).to_degrees();
    let Some(first) = ring.first() else { return (0.0, 0.0) };
    let (mut cur, mut lo, mut hi) = (bearing(first), bearing(first), bearing(first));
    for w in ring.windows(2) {
        let step = (bearing(&w[1]) - bearing(&w[0]) + 540.0).rem_euclid(360.0) - 180.0;
        cur += step;
        lo = lo.min(cur);
        hi = hi.max(cur);
    }
    if hi - lo >= 360.0 {
        (0.0, 360.0)
    } else {
        (normalize_deg(lo), hi - lo)
    }
}

/// Candidate rings on the tangent plane of a camera origin at `(0, 0)`.
pub struct ProjectedScene {
    items: Vec<SceneItem>,
}

impl ProjectedScene {
    pub fn from_footprints(origin: LonLat, candidates: &[&Footprint]) -> Self {
        Self::from_rings(candidates.iter().map(|f| (f.id().to_owned(), f.project(origin))))
    }

    /// Builds a scene from closed rings already in tangent-plane metres.
    pub fn from_rings(rings: impl IntoIterator<Item = (String, Vec<Xy>)>) -> Self {
        let mut items: Vec<SceneItem> = rings
            .into_iter()
            .map(|(id, ring)| {
                let mut lo = Xy::new(f64::INFINITY, f64::INFINITY);
                let mut hi = Xy::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
                for p in &ring {
                    lo = Xy::new(lo.x.min(p.x), lo.y.min(p.y));
                    hi = Xy::new(hi.x.max(p.x), hi.y.max(p.y));
                }
                let contains_origin = polygon::contains_point(&ring, Xy::default());
                let extent = if contains_origin { (0.0, 360.0) } else { bearing_extent(&ring) };
                let near_m = if contains_origin {
                    0.0
                } else {
                    ring.windows(2)
                        .map(|w| polygon::point_segment_distance(Xy::default(), w[0], w[1]))
                        .fold(f64::INFINITY, f64::min)
                };
                SceneItem { id, ring, lo, hi, contains_origin, extent, near_m }
            })
            .collect();
        // id order makes equal-distance hits deterministic
        items.sort_by(|a, b| a.id.cmp(&b.id));
        Self { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Nearest hit along `bearing_deg` within `max_range_m`.
    pub fn cast(&self, bearing_deg: f64, max_range_m: f64) -> Option<(usize, f64)> {
        let dir = bearing_dir(bearing_deg);
        let mut best: Option<(usize, f64)> = None;
        for (i, item) in self.items.iter().enumerate() {
            if item.contains_origin {
                if best.is_none_or(|b| b.1 > 0.0) {
                    best = Some((i, 0.0));
                }
                continue;
            }
            let limit = best.map_or(max_range_m, |b| b.1.min(max_range_m));
            if !ray_meets_box(dir, item.lo, item.hi, limit) {
                continue;
            }
            for w in item.ring.windows(2) {
                if let Some(t) = polygon::ray_segment_hit(Xy::default(), dir, w[0], w[1]) {
                    if t <= max_range_m && best.is_none_or(|b| t < b.1) {
                        best = Some((i, t));
                    }
                }
            }
        }
        best
    }

    /// Whether a ring other than `except`, nearer than `reach_m`, falls
    /// inside the open span offsets `(a, b)` and could hide between two rays.
    fn may_hide(&self, span: BearingSpan, a: f64, b: f64, except: Option<usize>, reach_m: f64) -> bool {
        self.items.iter().enumerate().any(|(k, item)| {
            if Some(k) == except || item.near_m >= reach_m {
                return false;
            }
            let (start, width) = item.extent;
            let rel = normalize_deg(start - span.start_deg);
            (rel < b && rel + width > a) || (rel - 360.0 < b && rel - 360.0 + width > a)
        })
    }

    pub fn id(&self, index: usize) -> &str {
        &self.items[index].id
    }

    /// Casts `n_rays` evenly spaced rays over `span`, end points included.
    pub fn match_dense(&self, span: BearingSpan, n_rays: usize, max_range_m: f64) -> Result<MatchResult, MatchError> {
        if n_rays < 2 {
            return Err(MatchError::InvalidParameter(format!("n_rays must be >= 2, got {n_rays}")));
        }
        let mut tally = Tally::default();
        let step = span.width_deg / (n_rays - 1) as f64;
        let weight = span.width_deg / n_rays as f64;
        for k in 0..n_rays {
            if let Some((i, d)) = self.cast(span.at(k as f64 * step), max_range_m) {
                tally.add(i, weight, d * weight);
            }
        }
        Ok(tally.finish(self, span.width_deg, n_rays))
    }

    /// Interval bisection: an interval whose two end rays agree is credited
    /// wholesale to that outcome; otherwise it is split at the midpoint until
    /// narrower than `eps_deg`, where each end takes half. Agreeing ends do
    /// not close an interval while another ring's bearing extent reaches into
    /// it nearer than the end hits, since the two rays could straddle it.
    pub fn match_bisect(&self, span: BearingSpan, eps_deg: f64, max_range_m: f64) -> Result<MatchResult, MatchError> {
        if !(eps_deg > 0.0 && eps_deg.is_finite()) {
            return Err(MatchError::InvalidParameter(format!("eps_deg must be > 0, got {eps_deg}")));
        }
        let mut tally = Tally::default();
        let mut rays = 2;
        let left = self.cast(span.at(0.0), max_range_m);
        let right = self.cast(span.at(span.width_deg), max_range_m);
        let mut stack = vec![(0.0, span.width_deg, left, right)];
        while let Some((a, b, oa, ob)) = stack.pop() {
            let width = b - a;
            let same = match (oa, ob) {
                (None, None) => !self.may_hide(span, a, b, None, max_range_m),
                (Some((i, da)), Some((j, db))) => i == j && !self.may_hide(span, a, b, Some(i), da.max(db)),
                _ => false,
            };
            if same || (width < eps_deg && oa.map(|o| o.0) == ob.map(|o| o.0)) {
                if let (Some((i, da)), Some((_, db))) = (oa, ob) {
                    tally.add(i, width, 0.5 * (da + db) * width);
                }
                continue;
            }
            if width < eps_deg {
                for (i, d) in [oa, ob].into_iter().flatten() {
                    tally.add(i, 0.5 * width, d * 0.5 * width);
                }
                continue;
            }
            let mid = 0.5 * (a + b);
            let om = self.cast(span.at(mid), max_range_m);
            rays += 1;
            stack.push((mid, b, om, ob));
            stack.push((a, mid, oa, om));
        }
        Ok(tally.finish(self, span.width_deg, rays))
    }
}

fn ray_meets_box(dir: Xy, lo: Xy, hi: Xy, limit: f64) -> bool {
    let (mut t0, mut t1) = (0.0_f64, limit);
    for (d, l, h) in [(dir.x, lo.x, hi.x), (dir.y, lo.y, hi.y)] {
        if d.abs() < 1e-15 {
            if l > 0.0 || h < 0.0 {
                return false;
            }
        } else {
            let (mut a, mut b) = (l / d, h / d);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 + 1e-9 {
                return false;
            }
        }
    }
    true
}

#[derive(Default)]
struct Tally {
    // scene index -> (angular weight, weight-scaled distance sum)
    votes: BTreeMap<usize, (f64, f64)>,
}

impl Tally {
    fn add(&mut self, i: usize, weight: f64, weighted_distance: f64) {
        let e = self.votes.entry(i).or_insert((0.0, 0.0));
        e.0 += weight;
        e.1 += weighted_distance;
    }

    fn finish(self, scene: &ProjectedScene, fov_deg: f64, rays_cast: usize) -> MatchResult {
        let mut winner: Option<(usize, f64, f64)> = None;
        for (&i, &(w, wd)) in &self.votes {
            if w <= 0.0 {
                continue;
            }
            let mean = wd / w;
            let better = match winner {
                None => true,
                Some((j, bw, bm)) => {
                    w > bw || (w == bw && (mean < bm || (mean == bm && scene.id(i) < scene.id(j))))
                }
            };
            if better {
                winner = Some((i, w, mean));
            }
        }
        let confidence = match winner {
            Some((_, w, _)) if fov_deg > 0.0 => (w / fov_deg).clamp(0.0, 1.0),
            _ => 0.0,
        };
        MatchResult {
            footprint_id: winner.map(|(i, _, _)| scene.id(i).to_owned()),
            votes: self.votes.iter().map(|(&i, &(w, _))| (scene.id(i).to_owned(), w)).collect(),
            confidence,
            rays_cast,
        }
    }
}

/// Outcome of matching one crop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    pub footprint_id: Option<String>,
    /// Angular weight in degrees per footprint id.
    pub votes: BTreeMap<String, f64>,
    pub confidence: f64,
    pub rays_cast: usize,
}

impl MatchResult {
    /// Difference between the two largest vote weights, in degrees.
    pub fn margin_deg(&self) -> f64 {
        let mut w: Vec<f64> = self.votes.values().copied().collect();
        w.sort_by(|a, b| b.total_cmp(a));
        match w.as_slice() {
            [] => 0.0,
            [only] => *only,
            [a, b, ..] => a - b,
        }
    }
}

/// Nearest footprint along one bearing.
pub fn cast_ray(origin: LonLat, bearing_deg: f64, max_range_m: f64, candidates: &[&Footprint]) -> Option<RayHit> {
    let scene = ProjectedScene::from_footprints(origin, candidates);
    scene
        .cast(bearing_deg, max_range_m)
        .map(|(i, d)| RayHit { footprint_id: scene.id(i).to_owned(), distance_m: d })
}

pub fn match_dense(
    origin: LonLat,
    span: BearingSpan,
    candidates: &[&Footprint],
    n_rays: usize,
    max_range_m: f64,
) -> Result<MatchResult, MatchError> {
    ProjectedScene::from_footprints(origin, candidates).match_dense(span, n_rays, max_range_m)
}

pub fn match_bisect(
    origin: LonLat,
    span: BearingSpan,
    candidates: &[&Footprint],
    eps_deg: f64,
    max_range_m: f64,
) -> Result<MatchResult, MatchError> {
    ProjectedScene::from_footprints(origin, candidates).match_bisect(span, eps_deg, max_range_m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    Bisect,
    Dense,
}

/// Matcher knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatcherParams {
    pub hfov_deg: f64,
    /// Field of view for panoramic cameras cropped to a perspective strip.
    pub hfov_panorama_deg: Option<f64>,
    pub buffer_radius_m: f64,
    pub max_range_m: f64,
    pub eps_deg: f64,
    pub sampler: Sampler,
    pub dense_rays: usize,
}

impl Default for MatcherParams {
    fn default() -> Self {
        Self {
            hfov_deg: 70.0,
            hfov_panorama_deg: None,
            buffer_radius_m: 100.0,
            max_range_m: 100.0,
            eps_deg: 0.5,
            sampler: Sampler::Bisect,
            dense_rays: 141,
        }
    }
}

impl MatcherParams {
    pub fn validate(&self) -> Result<(), MatchError> {
        let bad = |what: &str| Err(MatchError::InvalidParameter(what.to_owned()));
        if !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return bad("hfov_deg must lie in (0, 180)");
        }
        if let Some(h) = self.hfov_panorama_deg {
            if !(h > 0.0 && h < 180.0) {
                return bad("hfov_panorama_deg must lie in (0, 180)");
            }
        }
        if !(self.buffer_radius_m > 0.0) {
            return bad("buffer_radius_m must be > 0");
        }
        if !(self.max_range_m > 0.0) {
            return bad("max_range_m must be > 0");
        }
        if !(self.eps_deg > 0.0) {
            return bad("eps_deg must be > 0");
        }
        if self.dense_rays < 2 {
            return bad("dense_rays must be >= 2");
        }
        Ok(())
    }

    pub fn hfov_for(&self, camera: CameraType) -> f64 {
        match camera {
            CameraType::Panorama => self.hfov_panorama_deg.unwrap_or(self.hfov_deg),
            _ => self.hfov_deg,
        }
    }
}

/// Matches one crop of `meta` against the footprints buffered around the camera.
pub fn match_crop(
    store: &FootprintStore,
    meta: &ImageMeta,
    crop: &CropBox,
    params: &MatcherParams,
) -> Result<MatchResult, MatchError> {
    let cam = CameraView::new(meta.position(), meta.heading_deg, params.hfov_for(meta.camera_type), meta.image_width_px)?;
    let span = crop_bearings(crop, &cam)?;
    let candidates = store.query_buffer(cam.origin, params.buffer_radius_m);
    let scene = ProjectedScene::from_footprints(cam.origin, &candidates);
    match params.sampler {
        Sampler::Bisect => scene.match_bisect(span, params.eps_deg, params.max_range_m),
        Sampler::Dense => scene.match_dense(span, params.dense_rays, params.max_range_m),
    }
}
