//! Road-frame geometry: piecewise-linear projection of points onto map
//! polylines, lane assignment, and the off-road test used by the cleaning
//! filters. Elevation (z) is carried by the map but ignored here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Polyline, RoadMap};

/// Position of a point expressed relative to the road.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadFrame {
    /// Index of the nearest centerline (ties broken toward the lowest index).
    pub lane_index: usize,
    /// Signed perpendicular offset from that centerline; positive to the left
    /// of the polyline direction.
    pub lateral_offset: f64,
    /// Arc-length position along the centerline. Extends linearly beyond the
    /// polyline ends so straight roads behave uniformly.
    pub station: f64,
    pub offroad: bool,
}

/// Projection of a point onto one polyline.
#[derive(Clone, Copy, Debug)]
pub struct Projection {
    /// Clamped distance from the point to the polyline.
    pub distance: f64,
    /// Signed perpendicular distance to the nearest segment's infinite line.
    pub lateral: f64,
    /// Arc length along the polyline (unclamped on the terminal segments).
    pub station: f64,
    /// Direction angle of the nearest segment.
    pub direction: f64,
}

/// Project a 2D point onto a polyline, picking the segment with minimum
/// clamped distance.
pub fn project_point(poly: &Polyline, x: f64, y: f64) -> Result<Projection> {
    if poly.points.len() < 2 {
        return Err(Error::DegeneratePolyline);
    }
    let mut best: Option<Projection> = None;
    let mut best_d2 = f64::INFINITY;
    let mut cum = 0.0;
    for w in poly.points.windows(2) {
        let (ax, ay) = (w[0][0], w[0][1]);
        let (bx, by) = (w[1][0], w[1][1]);
        let (dx, dy) = (bx - ax, by - ay);
        let len2 = dx * dx + dy * dy;
        let len = len2.sqrt();
        if len2 == 0.0 {
            cum += len;
            continue;
        }
        let t_raw = ((x - ax) * dx + (y - ay) * dy) / len2;
        let t = t_raw.clamp(0.0, 1.0);
        let (cx, cy) = (ax + t * dx, ay + t * dy);
        let d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        if d2 < best_d2 {
            best_d2 = d2;
            let cross = dx * (y - ay) - dy * (x - ax);
            best = Some(Projection {
                distance: d2.sqrt(),
                lateral: cross / len,
                station: cum + t_raw * len,
                direction: dy.atan2(dx),
            });
        }
        cum += len;
    }
    best.ok_or(Error::DegeneratePolyline)
}

/// Signed lateral positions of a point relative to the two road edges.
fn edge_laterals(map: &RoadMap, x: f64, y: f64) -> Result<(f64, f64)> {
    let edges: Vec<&Polyline> = map.road_edges().collect();
    if edges.len() != 2 {
        return Err(Error::RoadEdgeCount { found: edges.len() });
    }
    let a = project_point(edges[0], x, y)?;
    let b = project_point(edges[1], x, y)?;
    Ok((a.lateral, b.lateral))
}

/// A point is off-road when it lies on the same side of both road edges,
/// i.e. outside the band they bound. Points exactly on an edge count as
/// on-road, so edge-grazing tracks survive the off-road filter.
pub fn is_offroad(map: &RoadMap, x: f64, y: f64) -> Result<bool> {
    let (la, lb) = edge_laterals(map, x, y)?;
    Ok(la * lb > 0.0)
}

/// Signed distance to the nearer road edge: positive inside the carriageway,
/// negative outside.
pub fn edge_signed_distance(map: &RoadMap, x: f64, y: f64) -> Result<f64> {
    let (la, lb) = edge_laterals(map, x, y)?;
    let d = la.abs().min(lb.abs());
    Ok(if la * lb > 0.0 { -d } else { d })
}

/// Express a point in the road frame of the given map.
pub fn road_frame(map: &RoadMap, x: f64, y: f64) -> Result<RoadFrame> {
    let mut best: Option<(usize, Projection)> = None;
    for (idx, line) in map.centerlines().enumerate() {
        let proj = project_point(line, x, y)?;
        let better = match &best {
            None => true,
            Some((_, b)) => proj.distance < b.distance,
        };
        if better {
            best = Some((idx, proj));
        }
    }
    let (lane_index, proj) = best.ok_or(Error::NoCenterlines)?;
    let offroad = is_offroad(map, x, y)?;
    Ok(RoadFrame {
        lane_index,
        lateral_offset: proj.lateral,
        station: proj.station,
        offroad,
    })
}

/// Direction angle of the nearest centerline at the given point.
pub fn lane_direction(map: &RoadMap, x: f64, y: f64) -> Result<f64> {
    let mut best: Option<Projection> = None;
    for line in map.centerlines() {
        let proj = project_point(line, x, y)?;
        if best.as_ref().is_none_or(|b| proj.distance < b.distance) {
            best = Some(proj);
        }
    }
    best.map(|p| p.direction).ok_or(Error::NoCenterlines)
}

/// Insert `k` evenly spaced interpolants between each consecutive point pair.
/// Output has n + k*(n-1) points; endpoints are preserved exactly.
pub fn densify_polyline(poly: &Polyline, k: usize) -> Result<Polyline> {
    if poly.points.len() < 2 {
        return Err(Error::DegeneratePolyline);
    }
    if k == 0 {
        return Ok(poly.clone());
    }
    let mut points = Vec::with_capacity(poly.points.len() + k * (poly.points.len() - 1));
    for w in poly.points.windows(2) {
        points.push(w[0]);
        for j in 1..=k {
            let t = j as f64 / (k + 1) as f64;
            points.push([
                w[0][0] + t * (w[1][0] - w[0][0]),
                w[0][1] + t * (w[1][1] - w[0][1]),
                w[0][2] + t * (w[1][2] - w[0][2]),
            ]);
        }
    }
    points.push(*poly.points.last().unwrap());
    Ok(Polyline {
        kind: poly.kind,
        points,
    })
}

pub fn polyline_arc_length(poly: &Polyline) -> f64 {
    poly.points
        .windows(2)
        .map(|w| {
            let dx = w[1][0] - w[0][0];
            let dy = w[1][1] - w[0][1];
            let dz = w[1][2] - w[0][2];
            (dx * dx + dy * dy + dz * dz).sqrt()
        })
        .sum()
}
