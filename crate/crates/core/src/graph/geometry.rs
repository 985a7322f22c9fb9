//! Minimal GeoJSON polygon input and queen contiguity.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde_json::{json, Value};

use crate::error::{Error, Result};

use super::AdjacencyGraph;

/// Default coordinate snapping grid for lon/lat input.
pub const DEFAULT_SNAP_TOLERANCE: f64 = 1e-9;

/// All boundary rings (outer and holes, every part) of one unit.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitGeometry {
    pub unit_id: String,
    pub rings: Vec<Vec<[f64; 2]>>,
}

impl UnitGeometry {
    /// Arithmetic mean of the outer ring vertices (closing vertex skipped).
    pub fn vertex_centroid(&self) -> Option<[f64; 2]> {
        let ring = self.rings.first()?;
        let pts = &ring[..ring.len().saturating_sub(1).max(1)];
        let n = pts.len() as f64;
        Some([
            pts.iter().map(|p| p[0]).sum::<f64>() / n,
            pts.iter().map(|p| p[1]).sum::<f64>() / n,
        ])
    }
}

/// GeoJSON geometry of a unit: a Polygon for one ring, otherwise a
/// MultiPolygon with one single-ring polygon per ring.
pub fn geometry_json(g: &UnitGeometry) -> Value {
    let ring = |r: &Vec<[f64; 2]>| Value::Array(r.iter().map(|p| json!([p[0], p[1]])).collect());
    if g.rings.len() == 1 {
        json!({"type": "Polygon", "coordinates": [ring(&g.rings[0])]})
    } else {
        let polys: Vec<Value> = g.rings.iter().map(|r| json!([ring(r)])).collect();
        json!({"type": "MultiPolygon", "coordinates": polys})
    }
}

/// FeatureCollection with one feature per unit and a `unit_id` property,
/// readable by [`parse_polygons_geojson`].
pub fn polygons_to_geojson(polygons: &[UnitGeometry]) -> Value {
    let features: Vec<Value> = polygons
        .iter()
        .map(|g| json!({"type": "Feature", "properties": {"unit_id": g.unit_id}, "geometry": geometry_json(g)}))
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

/// Reads a FeatureCollection of Polygon / MultiPolygon features carrying a
/// `unit_id` property.
pub fn read_polygons_geojson(path: &Path) -> Result<Vec<UnitGeometry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_polygons_geojson(&text, &path.display().to_string())
}

pub fn parse_polygons_geojson(text: &str, context: &str) -> Result<Vec<UnitGeometry>> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::parse(context, e.to_string()))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::parse(context, "expected a FeatureCollection"));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::parse(context, "missing features array"))?;
    let mut out = Vec::with_capacity(features.len());
    let mut seen = HashSet::new();
    for (k, f) in features.iter().enumerate() {
        let id = match f.get("properties").and_then(|p| p.get("unit_id")) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => return Err(Error::parse(context, format!("feature {k}: missing unit_id property"))),
        };
        if !seen.insert(id.clone()) {
            return Err(Error::parse(context, format!("duplicate unit_id {id}")));
        }
        let geom = f
            .get("geometry")
            .filter(|g| !g.is_null())
            .ok_or_else(|| Error::parse(context, format!("unit {id}: empty geometry")))?;
        let coords = geom
            .get("coordinates")
            .ok_or_else(|| Error::parse(context, format!("unit {id}: geometry without coordinates")))?;
        let polys: Vec<&Value> = match geom.get("type").and_then(Value::as_str) {
            Some("Polygon") => vec![coords],
            Some("MultiPolygon") => coords
                .as_array()
                .ok_or_else(|| Error::parse(context, format!("unit {id}: bad MultiPolygon")))?
                .iter()
                .collect(),
            other => {
                return Err(Error::parse(
                    context,
                    format!("unit {id}: unsupported geometry type {other:?}"),
                ))
            }
        };
        let mut rings = Vec::new();
        for poly in polys {
            for ring in poly
                .as_array()
                .ok_or_else(|| Error::parse(context, format!("unit {id}: bad polygon")))?
            {
                let pts = ring
                    .as_array()
                    .ok_or_else(|| Error::parse(context, format!("unit {id}: bad ring")))?
                    .iter()
                    .map(|p| {
                        let x = p.get(0).and_then(Value::as_f64);
                        let y = p.get(1).and_then(Value::as_f64);
                        match (x, y) {
                            (Some(x), Some(y)) => Ok([x, y]),
                            _ => Err(Error::parse(context, format!("unit {id}: bad coordinate"))),
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                rings.push(pts);
            }
        }
        out.push(UnitGeometry { unit_id: id, rings });
    }
    Ok(out)
}

type Pt = (i64, i64);

struct Snapped {
    segments: Vec<(Pt, Pt)>,
    vertices: HashSet<Pt>,
    bbox: (Pt, Pt),
}

fn snap(p: [f64; 2], tol: f64) -> Pt {
    ((p[0] / tol).round() as i64, (p[1] / tol).round() as i64)
}

fn snap_unit(u: &UnitGeometry, tol: f64) -> Result<Snapped> {
    if u.rings.is_empty() || u.rings.iter().all(Vec::is_empty) {
        return Err(Error::InvalidInput(format!("unit {}: empty geometry", u.unit_id)));
    }
    let mut segments = Vec::new();
    let mut vertices = HashSet::new();
    let mut lo = (i64::MAX, i64::MAX);
    let mut hi = (i64::MIN, i64::MIN);
    for ring in &u.rings {
        if ring.len() < 4 {
            return Err(Error::InvalidInput(format!(
                "unit {}: ring with {} points (need at least 4)",
                u.unit_id,
                ring.len()
            )));
        }
        let pts: Vec<Pt> = ring.iter().map(|&p| snap(p, tol)).collect();
        if pts.first() != pts.last() {
            return Err(Error::InvalidInput(format!("unit {}: unclosed ring", u.unit_id)));
        }
        for w in pts.windows(2) {
            if w[0] != w[1] {
                segments.push((w[0], w[1]));
            }
        }
        for &p in &pts {
            vertices.insert(p);
            lo = (lo.0.min(p.0), lo.1.min(p.1));
            hi = (hi.0.max(p.0), hi.1.max(p.1));
        }
    }
    Ok(Snapped {
        segments,
        vertices,
        bbox: (lo, hi),
    })
}

fn orient(a: Pt, b: Pt, c: Pt) -> i128 {
    let (ax, ay) = (a.0 as i128, a.1 as i128);
    let (bx, by) = (b.0 as i128, b.1 as i128);
    let (cx, cy) = (c.0 as i128, c.1 as i128);
    (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
}

fn on_segment(a: Pt, b: Pt, p: Pt) -> bool {
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

/// Closed-segment intersection on the integer grid (exact).
fn segments_touch(s: (Pt, Pt), t: (Pt, Pt)) -> bool {
    let (p1, p2) = s;
    let (q1, q2) = t;
    let d1 = orient(q1, q2, p1).signum();
    let d2 = orient(q1, q2, p2).signum();
    let d3 = orient(p1, p2, q1).signum();
    let d4 = orient(p1, p2, q2).signum();
    if d1 * d2 < 0 && d3 * d4 < 0 {
        return true;
    }
    (d1 == 0 && on_segment(q1, q2, p1))
        || (d2 == 0 && on_segment(q1, q2, p2))
        || (d3 == 0 && on_segment(p1, p2, q1))
        || (d4 == 0 && on_segment(p1, p2, q2))
}

fn boxes_overlap(a: &(Pt, Pt), b: &(Pt, Pt)) -> bool {
    a.0 .0 <= b.1 .0 && b.0 .0 <= a.1 .0 && a.0 .1 <= b.1 .1 && b.0 .1 <= a.1 .1
}

fn boundaries_touch(a: &Snapped, b: &Snapped) -> bool {
    if a.vertices.iter().any(|v| b.vertices.contains(v)) {
        return true;
    }
    a.segments
        .iter()
        .any(|&s| b.segments.iter().any(|&t| segments_touch(s, t)))
}

/// Queen contiguity: two units are neighbors when their boundaries share at
/// least one point once coordinates are snapped to a grid of `snap_tolerance`.
/// The graph's unit order follows the input order.
pub fn queen_contiguity(polygons: &[UnitGeometry], snap_tolerance: f64) -> Result<AdjacencyGraph> {
    if !(snap_tolerance > 0.0) {
        return Err(Error::InvalidInput("snap tolerance must be positive".into()));
    }
    let snapped = polygons
        .iter()
        .map(|u| snap_unit(u, snap_tolerance))
        .collect::<Result<Vec<_>>>()?;

    // sweep over x-sorted boxes
    let mut by_x: Vec<usize> = (0..snapped.len()).collect();
    by_x.sort_by_key(|&i| (snapped[i].bbox.0 .0, i));
    let mut pairs = Vec::new();
    for (k, &i) in by_x.iter().enumerate() {
        let max_x = snapped[i].bbox.1 .0;
        for &j in &by_x[k + 1..] {
            if snapped[j].bbox.0 .0 > max_x {
                break;
            }
            if boxes_overlap(&snapped[i].bbox, &snapped[j].bbox) && boundaries_touch(&snapped[i], &snapped[j]) {
                pairs.push((i, j));
            }
        }
    }
    AdjacencyGraph::new(polygons.iter().map(|u| u.unit_id.clone()).collect(), pairs)
}

/// Snapped vertices shared by the boundaries of two units, in the order they
/// appear along the first unit's rings.
pub fn shared_vertices(a: &UnitGeometry, b: &UnitGeometry, snap_tolerance: f64) -> Vec<[f64; 2]> {
    let bset: HashSet<Pt> = b.rings.iter().flatten().map(|&p| snap(p, snap_tolerance)).collect();
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for &p in a.rings.iter().flatten() {
        let s = snap(p, snap_tolerance);
        if bset.contains(&s) && seen.insert(s, ()).is_none() {
            out.push(p);
        }
    }
    out
}
