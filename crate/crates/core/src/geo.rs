//! Coordinate primitives shared by the spatial modules.
//!
//! All planar work happens on an equirectangular tangent plane anchored at a
//! local origin. The plane is metric to within a fraction of a percent over the
//! few hundred metres a street-level photograph covers.

use serde::{Deserialize, Serialize};

/// Mean Earth radius in metres.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Metres per degree of arc on the mean sphere.
pub const METRES_PER_DEG: f64 = std::f64::consts::PI / 180.0 * EARTH_RADIUS_M;

/// WGS84 longitude/latitude pair, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LonLat {
    pub lon: f64,
    pub lat: f64,
}

impl LonLat {
    pub const fn new(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }

    pub fn is_valid(&self) -> bool {
        self.lon.is_finite()
            && self.lat.is_finite()
            && (-180.0..=180.0).contains(&self.lon)
            && (-90.0..=90.0).contains(&self.lat)
    }
}

/// Point on the local tangent plane: `x` east, `y` north, metres.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Xy {
    pub x: f64,
    pub y: f64,
}

impl Xy {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn sub(self, o: Xy) -> Xy {
        Xy::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: Xy) -> Xy {
        Xy::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, k: f64) -> Xy {
        Xy::new(self.x * k, self.y * k)
    }

    pub fn cross(self, o: Xy) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn dot(self, o: Xy) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Equirectangular projection of `p` onto the tangent plane at `origin`.
pub fn project_local(origin: LonLat, p: LonLat) -> Xy {
    let k = METRES_PER_DEG;
    Xy {
        x: (p.lon - origin.lon) * origin.lat.to_radians().cos() * k,
        y: (p.lat - origin.lat) * k,
    }
}

/// Inverse of [`project_local`].
pub fn unproject_local(origin: LonLat, q: Xy) -> LonLat {
    let k = METRES_PER_DEG;
    LonLat {
        lon: origin.lon + q.x / (origin.lat.to_radians().cos() * k),
        lat: origin.lat + q.y / k,
    }
}

/// Great-circle distance in metres.
pub fn haversine_m(a: LonLat, b: LonLat) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Wraps an angle in degrees into `[0, 360)`.
pub fn normalize_deg(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Unit direction of a compass bearing (clockwise from north) on the tangent plane.
pub fn bearing_dir(bearing_deg: f64) -> Xy {
    let t = bearing_deg.to_radians();
    Xy::new(t.sin(), t.cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_projects_to_zero() {
        let o = LonLat::new(11.5, 48.1);
        assert_eq!(project_local(o, o), Xy::new(0.0, 0.0));
    }

    #[test]
    fn one_degree_north_is_about_111195_m() {
        let o = LonLat::new(11.5, 48.1);
        let p = LonLat::new(11.5, 49.1);
        let q = project_local(o, p);
        let expected = std::f64::consts::PI / 180.0 * 6_371_000.0;
        assert!((q.y - expected).abs() < 1e-6);
        assert!((q.y - 111_194.93).abs() < 0.01);
        assert_eq!(q.x, 0.0);
    }

    #[test]
    fn projection_round_trips() {
        let o = LonLat::new(11.5, 48.1);
        for p in [LonLat::new(11.51, 48.09), LonLat::new(11.3, 48.3), LonLat::new(-3.0, 40.0)] {
            let back = unproject_local(o, project_local(o, p));
            assert!((back.lon - p.lon).abs() < 1e-9);
            assert!((back.lat - p.lat).abs() < 1e-9);
        }
    }

    #[test]
    fn haversine_basics() {
        let a = LonLat::new(11.5, 48.1);
        let b = LonLat::new(11.5, 49.1);
        assert_eq!(haversine_m(a, a), 0.0);
        assert!((haversine_m(a, b) - 111_194.93).abs() < 1.0);
        let c = LonLat::new(11.7, 48.2);
        assert!((haversine_m(a, c) - haversine_m(c, a)).abs() < 1e-9);
    }

    #[test]
    fn normalizes_bearings() {
        assert_eq!(normalize_deg(370.0), 10.0);
        assert_eq!(normalize_deg(-45.0), 315.0);
        assert_eq!(normalize_deg(360.0), 0.0);
        assert_eq!(normalize_deg(-1e-18), 0.0);
    }
}
