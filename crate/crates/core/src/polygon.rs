//! Planar ring predicates. Rings are closed (`first == last`).

use crate::geo::Xy;

/// Shoelace signed area; positive for counter-clockwise rings.
pub fn signed_area(ring: &[Xy]) -> f64 {
    ring.windows(2).map(|w| w[0].cross(w[1])).sum::<f64>() / 2.0
}

/// Area centroid of a closed ring, `None` when the area vanishes.
pub fn area_centroid(ring: &[Xy]) -> Option<Xy> {
    let a = signed_area(ring);
    if a.abs() < 1e-12 {
        return None;
    }
    let (mut cx, mut cy) = (0.0, 0.0);
    for w in ring.windows(2) {
        let c = w[0].cross(w[1]);
        cx += (w[0].x + w[1].x) * c;
        cy += (w[0].y + w[1].y) * c;
    }
    Some(Xy::new(cx / (6.0 * a), cy / (6.0 * a)))
}

/// Even-odd point-in-ring test. Boundary points may land on either side.
pub fn contains_point(ring: &[Xy], p: Xy) -> bool {
    let mut inside = false;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Euclidean distance from `p` to segment `ab`.
pub fn point_segment_distance(p: Xy, a: Xy, b: Xy) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.sub(a).norm();
    }
    let t = (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0);
    p.sub(a.add(ab.scale(t))).norm()
}

fn orient(a: Xy, b: Xy, c: Xy) -> f64 {
    b.sub(a).cross(c.sub(a))
}

fn on_segment(a: Xy, b: Xy, p: Xy) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test, touching counts.
pub fn segments_intersect(p1: Xy, p2: Xy, q1: Xy, q2: Xy) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// True when two non-adjacent edges of the closed ring meet.
pub fn is_self_intersecting(ring: &[Xy]) -> bool {
    let n = ring.len().saturating_sub(1);
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(ring[i], ring[i + 1], ring[j], ring[j + 1]) {
                return true;
            }
        }
    }
    false
}

/// Whether the closed ring's region meets the disc of radius `r` about `c`.
pub fn intersects_disc(ring: &[Xy], c: Xy, r: f64) -> bool {
    contains_point(ring, c) || ring.windows(2).any(|w| point_segment_distance(c, w[0], w[1]) <= r)
}

/// Distance along the ray `origin + t * dir` to segment `ab`, if hit at `t > 0`.
///
/// Parallel and collinear configurations return `None`.
pub fn ray_segment_hit(origin: Xy, dir: Xy, a: Xy, b: Xy) -> Option<f64> {
    let e = b.sub(a);
    let denom = dir.cross(e);
    if denom == 0.0 {
        return None;
    }
    let w = a.sub(origin);
    let t = w.cross(e) / denom;
    let u = w.cross(dir) / denom;
    (t > 0.0 && (0.0..=1.0).contains(&u)).then_some(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x0: f64, y0: f64, s: f64) -> Vec<Xy> {
        vec![
            Xy::new(x0, y0),
            Xy::new(x0 + s, y0),
            Xy::new(x0 + s, y0 + s),
            Xy::new(x0, y0 + s),
            Xy::new(x0, y0),
        ]
    }

    #[test]
    fn area_and_centroid_of_square() {
        let sq = square(0.0, 0.0, 2.0);
        assert_eq!(signed_area(&sq), 4.0);
        assert_eq!(area_centroid(&sq), Some(Xy::new(1.0, 1.0)));
        let mut cw = sq.clone();
        cw.reverse();
        assert_eq!(signed_area(&cw), -4.0);
        assert_eq!(area_centroid(&cw), Some(Xy::new(1.0, 1.0)));
    }

    #[test]
    fn bowtie_is_self_intersecting() {
        let bowtie = vec![
            Xy::new(0.0, 0.0),
            Xy::new(1.0, 1.0),
            Xy::new(1.0, 0.0),
            Xy::new(0.0, 1.0),
            Xy::new(0.0, 0.0),
        ];
        assert!(is_self_intersecting(&bowtie));
        assert!(!is_self_intersecting(&square(0.0, 0.0, 1.0)));
    }

    #[test]
    fn ray_hits_and_misses() {
        let a = Xy::new(-1.0, 5.0);
        let b = Xy::new(1.0, 5.0);
        assert_eq!(ray_segment_hit(Xy::default(), Xy::new(0.0, 1.0), a, b), Some(5.0));
        assert_eq!(ray_segment_hit(Xy::default(), Xy::new(0.0, -1.0), a, b), None);
        // collinear grazing
        assert_eq!(ray_segment_hit(Xy::new(-3.0, 5.0), Xy::new(1.0, 0.0), a, b), None);
    }

    #[test]
    fn disc_test() {
        let sq = square(10.0, 10.0, 1.0);
        assert!(intersects_disc(&sq, Xy::new(10.5, 10.5), 0.01));
        assert!(intersects_disc(&sq, Xy::new(0.0, 10.5), 10.0));
        assert!(!intersects_disc(&sq, Xy::new(0.0, 10.5), 9.99));
    }
}
