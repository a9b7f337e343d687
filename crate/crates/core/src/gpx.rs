//! Minimal GPX 1.1 writer and reader.
//!
//! Only waypoints (`wpt`) and a single route (`rte`/`rtept`) are written.
//! The reader accepts `wpt`, `rtept` and `trkpt` elements.

use std::fmt::Write as _;

use chrono::{DateTime, SecondsFormat, Utc};
use thiserror::Error;

use crate::geo::LonLat;

#[derive(Debug, Error)]
pub enum GpxError {
    #[error("malformed GPX: {0}")]
    Xml(#[from] roxmltree::Error),
    #[error("GPX point {index}: {reason}")]
    BadPoint { index: usize, reason: String },
}

/// A point as written to or read from a GPX document.
#[derive(Debug, Clone, PartialEq)]
pub struct GpxPoint {
    pub position: LonLat,
    pub name: Option<String>,
    pub time: Option<DateTime<Utc>>,
    pub description: Option<String>,
}

/// Which kind of GPX element a point came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpxKind {
    Waypoint,
    RoutePoint,
    TrackPoint,
}

const HEADER: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<gpx version="1.1" creator="storey" xmlns="http://www.topografix.com/GPX/1/1">
"#;

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn write_point(out: &mut String, tag: &str, indent: &str, p: &GpxPoint) {
    let _ = write!(
        out,
        "{indent}<{tag} lat=\"{:.9}\" lon=\"{:.9}\">",
        p.position.lat, p.position.lon
    );
    if let Some(t) = p.time {
        let _ = write!(out, "<time>{}</time>", t.to_rfc3339_opts(SecondsFormat::Secs, true));
    }
    if let Some(name) = &p.name {
        let _ = write!(out, "<name>{}</name>", escape(name));
    }
    if let Some(desc) = &p.description {
        let _ = write!(out, "<desc>{}</desc>", escape(desc));
    }
    let _ = writeln!(out, "</{tag}>");
}

/// Serializes points as top-level waypoints, in the given order.
pub fn write_waypoints(points: &[GpxPoint]) -> String {
    let mut out = String::from(HEADER);
    for p in points {
        write_point(&mut out, "wpt", "  ", p);
    }
    out.push_str("</gpx>\n");
    out
}

/// Serializes points as one named route, in the given order.
pub fn write_route(name: &str, points: &[GpxPoint]) -> String {
    let mut out = String::from(HEADER);
    let _ = writeln!(out, "  <rte><name>{}</name>", escape(name));
    for p in points {
        write_point(&mut out, "rtept", "    ", p);
    }
    out.push_str("  </rte>\n</gpx>\n");
    out
}

/// Reads every `wpt`, `rtept` and `trkpt` in document order.
pub fn read_points(text: &str) -> Result<Vec<(GpxKind, GpxPoint)>, GpxError> {
    let doc = roxmltree::Document::parse(text)?;
    let mut out = Vec::new();
    for (index, node) in doc.descendants().filter(|n| n.is_element()).enumerate() {
        let kind = match node.tag_name().name() {
            "wpt" => GpxKind::Waypoint,
            "rtept" => GpxKind::RoutePoint,
            "trkpt" => GpxKind::TrackPoint,
            _ => continue,
        };
        let coord = |attr: &str| -> Result<f64, GpxError> {
            node.attribute(attr)
                .ok_or_else(|| GpxError::BadPoint { index, reason: format!("missing {attr}") })?
                .trim()
                .parse::<f64>()
                .map_err(|e| GpxError::BadPoint { index, reason: format!("{attr}: {e}") })
        };
        let position = LonLat::new(coord("lon")?, coord("lat")?);
        let child_text = |name: &str| {
            node.children()
                .find(|c| c.is_element() && c.tag_name().name() == name)
                .and_then(|c| c.text())
                .map(str::to_owned)
        };
        let time = match child_text("time") {
            Some(t) => Some(
                DateTime::parse_from_rfc3339(t.trim())
                    .map_err(|e| GpxError::BadPoint { index, reason: format!("time: {e}") })?
                    .with_timezone(&Utc),
            ),
            None => None,
        };
        out.push((
            kind,
            GpxPoint { position, name: child_text("name"), time, description: child_text("desc") },
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn route_round_trip_keeps_order_and_names() {
        let pts: Vec<GpxPoint> = (0..3)
            .map(|i| GpxPoint {
                position: LonLat::new(11.5 + i as f64 * 0.001, 48.1),
                name: Some(format!("b<{i}>&")),
                time: None,
                description: None,
            })
            .collect();
        let text = write_route("capture", &pts);
        let back = read_points(&text).unwrap();
        assert_eq!(back.len(), 3);
        for ((kind, p), q) in back.iter().zip(&pts) {
            assert_eq!(*kind, GpxKind::RoutePoint);
            assert_eq!(p.name, q.name);
            assert!((p.position.lon - q.position.lon).abs() < 1e-9);
        }
    }

    #[test]
    fn waypoint_time_survives() {
        let t = Utc.with_ymd_and_hms(2023, 5, 1, 12, 30, 15).unwrap();
        let p = GpxPoint { position: LonLat::new(11.0, 48.0), name: None, time: Some(t), description: None };
        let back = read_points(&write_waypoints(&[p])).unwrap();
        assert_eq!(back[0].1.time, Some(t));
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_points("<gpx><wpt lat=\"x\" lon=\"1\"/></gpx>").is_err());
        assert!(read_points("not xml").is_err());
    }
}
