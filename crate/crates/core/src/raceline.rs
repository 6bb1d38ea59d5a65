//! Closed reference racelines: ingestion, analytic synthesis, and geometric queries.
//!
//! A [`Raceline`] is immutable once built. Speed scaling produces a new raceline that
//! shares the base geometry and carries the cumulative multiplier, so repeated scaling
//! composes exactly.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Waypoint-index offsets of the near/mid/far curvature preview taps.
pub const TAP_OFFSETS: [usize; 3] = [0, 5, 12];

pub const MIN_WAYPOINTS: usize = 20;
pub const DEFAULT_HALF_WIDTH: f64 = 1.1;
const MIN_MEAN_SPACING: f64 = 0.05;
const MAX_MEAN_SPACING: f64 = 1.0;
const CLOSURE_FACTOR: f64 = 3.0;

#[derive(Debug, Error, PartialEq)]
pub enum RacelineError {
    #[error("raceline header is missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("row {row}: {reason}")]
    BadRow { row: usize, reason: String },
    #[error("raceline has {0} waypoints, need at least {MIN_WAYPOINTS}")]
    TooFewWaypoints(usize),
    #[error("waypoints {0} and {1} coincide")]
    ZeroSpacing(usize, usize),
    #[error("mean waypoint spacing {0:.4} m is outside [{MIN_MEAN_SPACING}, {MAX_MEAN_SPACING}] m")]
    SpacingOutOfRange(f64),
    #[error("loop not closed: last-to-first distance {gap:.4} m exceeds {limit:.4} m")]
    LoopNotClosed { gap: f64, limit: f64 },
    #[error("half width must be positive and finite, got {0}")]
    BadHalfWidth(f64),
    #[error("invalid track geometry: {0}")]
    BadGeometry(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub kappa: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureTaps {
    pub kappa0: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub dkappa: f64,
    pub kappa_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug)]
struct Geometry {
    waypoints: Vec<Waypoint>,
    /// Length of segment i -> i+1 (mod N).
    segment_lengths: Vec<f64>,
    mean_spacing: f64,
    half_width: f64,
}

#[derive(Debug, Clone)]
pub struct Raceline {
    geometry: Arc<Geometry>,
    speed_scale: f64,
    speeds: Vec<f64>,
}

impl Raceline {
    /// Validates and wraps an ordered closed loop of waypoints.
    pub fn new(waypoints: Vec<Waypoint>, half_width: f64) -> Result<Self, RacelineError> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(RacelineError::BadHalfWidth(half_width));
        }
        let n = waypoints.len();
        if n < MIN_WAYPOINTS {
            return Err(RacelineError::TooFewWaypoints(n));
        }
        for (i, w) in waypoints.iter().enumerate() {
            check_waypoint(w).map_err(|reason| RacelineError::BadRow { row: i + 1, reason })?;
        }
        let segment_lengths: Vec<f64> = (0..n)
            .map(|i| {
                let a = &waypoints[i];
                let b = &waypoints[(i + 1) % n];
                (b.x - a.x).hypot(b.y - a.y)
            })
            .collect();
        if let Some(i) = segment_lengths.iter().position(|&s| s <= 0.0) {
            return Err(RacelineError::ZeroSpacing(i, (i + 1) % n));
        }
        // The closing segment is excluded so that an open path cannot hide its gap in the mean.
        let mean_spacing = segment_lengths[..n - 1].iter().sum::<f64>() / (n - 1) as f64;
        if !(MIN_MEAN_SPACING..=MAX_MEAN_SPACING).contains(&mean_spacing) {
            return Err(RacelineError::SpacingOutOfRange(mean_spacing));
        }
        let gap = segment_lengths[n - 1];
        let limit = CLOSURE_FACTOR * mean_spacing;
        if gap > limit {
            return Err(RacelineError::LoopNotClosed { gap, limit });
        }
        let speeds = waypoints.iter().map(|w| w.v_max).collect();
        Ok(Self {
            geometry: Arc::new(Geometry { waypoints, segment_lengths, mean_spacing, half_width }),
            speed_scale: 1.0,
            speeds,
        })
    }

    pub fn len(&self) -> usize {
        self.geometry.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn half_width(&self) -> f64 {
        self.geometry.half_width
    }

    pub fn mean_spacing(&self) -> f64 {
        self.geometry.mean_spacing
    }

    /// Cumulative multiplier applied to the reference speeds of the original profile.
    pub fn speed_scale(&self) -> f64 {
        self.speed_scale
    }

    /// Waypoint `i` with the (scaled) reference speed.
    pub fn waypoint(&self, i: usize) -> Waypoint {
        let w = self.geometry.waypoints[i];
        Waypoint { v_max: self.speeds[i], ..w }
    }

    pub fn waypoints(&self) -> impl Iterator<Item = Waypoint> + '_ {
        (0..self.len()).map(|i| self.waypoint(i))
    }

    pub fn position(&self, i: usize) -> Point {
        let w = &self.geometry.waypoints[i];
        Point::new(w.x, w.y)
    }

    pub fn kappa(&self, i: usize) -> f64 {
        self.geometry.waypoints[i].kappa
    }

    pub fn v_max(&self, i: usize) -> f64 {
        self.speeds[i]
    }

    pub fn speed_range(&self) -> (f64, f64) {
        self.speeds.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn segment_length(&self, i: usize) -> f64 {
        self.geometry.segment_lengths[i]
    }

    pub fn lap_length(&self) -> f64 {
        self.geometry.segment_lengths.iter().sum()
    }

    /// Heading of the segment leaving waypoint `i`.
    pub fn tangent_heading(&self, i: usize) -> f64 {
        let a = self.position(i);
        let b = self.position((i + 1) % self.len());
        (b.y - a.y).atan2(b.x - a.x)
    }

    /// Index of the closest waypoint; ties resolve to the smallest index.
    pub fn nearest_index(&self, p: Point) -> usize {
        let mut best = 0;
        let mut best_d2 = f64::INFINITY;
        for (i, w) in self.geometry.waypoints.iter().enumerate() {
            let d2 = (p.x - w.x).powi(2) + (p.y - w.y).powi(2);
            if d2 < best_d2 {
                best_d2 = d2;
                best = i;
            }
        }
        best
    }

    pub fn taps(&self, i: usize) -> CurvatureTaps {
        let n = self.len();
        let [k0, k1, k2] = TAP_OFFSETS.map(|k| self.kappa((i + k) % n).abs());
        CurvatureTaps { kappa0: k0, kappa1: k1, kappa2: k2, dkappa: k1 - k0, kappa_max: k0.max(k1).max(k2) }
    }

    /// Mean |kappa| over the 5-waypoint window centred on `i`.
    pub fn smoothed_curvature(&self, i: usize) -> f64 {
        let n = self.len();
        (0..5).map(|k| self.kappa((i + n + k - 2) % n).abs()).sum::<f64>() / 5.0
    }

    /// Point reached by walking `distance` metres forward along the polyline from waypoint
    /// `start`, wrapping across the seam.
    pub fn point_along(&self, start: usize, distance: f64) -> Point {
        let n = self.len();
        let mut remaining = distance.max(0.0);
        let mut j = start;
        loop {
            let seg = self.segment_length(j);
            if remaining <= seg {
                let a = self.position(j);
                let b = self.position((j + 1) % n);
                let t = remaining / seg;
                return Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y));
            }
            remaining -= seg;
            j = (j + 1) % n;
        }
    }

    /// Pure Pursuit target `lookahead` metres along the raceline from the waypoint nearest `p`.
    pub fn lookahead_target(&self, p: Point, lookahead: f64) -> Point {
        self.point_along(self.nearest_index(p), lookahead)
    }

    pub fn scale_speeds(&self, multiplier: f64) -> Raceline {
        let speed_scale = self.speed_scale * multiplier;
        let speeds = self.geometry.waypoints.iter().map(|w| w.v_max * speed_scale).collect();
        Raceline { geometry: Arc::clone(&self.geometry), speed_scale, speeds }
    }

    /// Signed distance to the closest segment of the closed polyline, positive on the left.
    pub fn lateral_error(&self, p: Point) -> f64 {
        let n = self.len();
        let mut best = f64::INFINITY;
        let mut signed = 0.0;
        for i in 0..n {
            let (d, s) = segment_distance(self.position(i), self.position((i + 1) % n), p);
            if d < best {
                best = d;
                signed = s;
            }
        }
        signed
    }
}

/// Newly passed waypoints between two nearest indices; large forward jumps are read as
/// backward motion and count zero.
pub fn progress_count(prev: usize, new: usize, n: usize) -> usize {
    let advance = (new + n - prev % n) % n;
    if 2 * advance > n {
        0
    } else {
        advance
    }
}

/// Unsigned and signed (left positive) distance from `p` to segment `a`-`b`.
fn segment_distance(a: Point, b: Point, p: Point) -> (f64, f64) {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    let (cx, cy) = (a.x + t * dx, a.y + t * dy);
    let d = (p.x - cx).hypot(p.y - cy);
    let cross = dx * (p.y - a.y) - dy * (p.x - a.x);
    (d, if cross < 0.0 { -d } else { d })
}

fn check_waypoint(w: &Waypoint) -> Result<(), String> {
    for (name, v) in [("x", w.x), ("y", w.y), ("kappa", w.kappa), ("v_max", w.v_max)] {
        if !v.is_finite() {
            return Err(format!("{name} is not finite"));
        }
    }
    if w.v_max <= 0.0 {
        return Err(format!("v_max must be positive, got {}", w.v_max));
    }
    Ok(())
}

/// Parses `x,y,kappa,v_max` comma-separated text. Row numbers in errors count data rows from 1.
pub fn load_raceline(source: &str, half_width: f64) -> Result<Raceline, RacelineError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source.as_bytes());
    let headers = reader.headers().map_err(|e| RacelineError::BadRow { row: 0, reason: e.to_string() })?.clone();
    let column = |name: &'static str| headers.iter().position(|h| h == name).ok_or(RacelineError::MissingColumn(name));
    let cols = [column("x")?, column("y")?, column("kappa")?, column("v_max")?];

    let mut waypoints = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| RacelineError::BadRow { row, reason: e.to_string() })?;
        let mut vals = [0.0; 4];
        for (v, (&c, name)) in vals.iter_mut().zip(cols.iter().zip(["x", "y", "kappa", "v_max"])) {
            let field =
                record.get(c).ok_or_else(|| RacelineError::BadRow { row, reason: format!("missing field {name}") })?;
            *v = field
                .parse()
                .map_err(|_| RacelineError::BadRow { row, reason: format!("cannot parse {name} value `{field}`") })?;
        }
        let w = Waypoint { x: vals[0], y: vals[1], kappa: vals[2], v_max: vals[3] };
        check_waypoint(&w).map_err(|reason| RacelineError::BadRow { row, reason })?;
        waypoints.push(w);
    }
    Raceline::new(waypoints, half_width)
}

/// Serializes a raceline in the same format `load_raceline` reads.
pub fn write_raceline(raceline: &Raceline) -> String {
    let mut out = String::from("x,y,kappa,v_max\n");
    for w in raceline.waypoints() {
        out.push_str(&format!("{},{},{},{}\n", w.x, w.y, w.kappa, w.v_max));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrackKind {
    /// Two straights joined by semicircles.
    Oval { straight: f64, radius: f64 },
    /// Axis-aligned rectangle with quarter-circle corners; `width`/`height` are outer extents.
    RoundedRectangle { width: f64, height: f64, corner_radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedProfile {
    pub v_cap: f64,
    pub a_lat_max: f64,
}

impl SpeedProfile {
    pub fn speed_at(&self, kappa: f64) -> f64 {
        if kappa == 0.0 {
            self.v_cap
        } else {
            self.v_cap.min((self.a_lat_max / kappa.abs()).sqrt())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackSpec {
    #[serde(flatten)]
    pub kind: TrackKind,
    pub spacing: f64,
    pub v_cap: f64,
    pub a_lat_max: f64,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
}

fn default_half_width() -> f64 {
    DEFAULT_HALF_WIDTH
}

impl TrackSpec {
    pub fn oval(straight: f64, radius: f64) -> Self {
        Self {
            kind: TrackKind::Oval { straight, radius },
            spacing: 0.25,
            v_cap: 8.0,
            a_lat_max: 4.0,
            half_width: DEFAULT_HALF_WIDTH,
        }
    }

    pub fn rounded_rectangle(width: f64, height: f64, corner_radius: f64) -> Self {
        Self { kind: TrackKind::RoundedRectangle { width, height, corner_radius }, ..Self::oval(1.0, 1.0) }
    }

    pub fn speed_profile(&self) -> SpeedProfile {
        SpeedProfile { v_cap: self.v_cap, a_lat_max: self.a_lat_max }
    }
}

/// One constant-curvature piece of a synthetic track.
#[derive(Debug, Clone, Copy)]
enum Piece {
    Straight { length: f64 },
    Arc { radius: f64, sweep: f64 },
}

impl Piece {
    fn length(&self) -> f64 {
        match *self {
            Piece::Straight { length } => length,
            Piece::Arc { radius, sweep } => radius * sweep,
        }
    }

    fn kappa(&self) -> f64 {
        match *self {
            Piece::Straight { .. } => 0.0,
            Piece::Arc { radius, .. } => 1.0 / radius,
        }
    }
}

/// Builds a counter-clockwise closed track sampled at (near) uniform arc-length spacing,
/// with exact piecewise curvature and a lateral-acceleration-limited speed profile.
pub fn synthesize_track(spec: &TrackSpec) -> Result<Raceline, RacelineError> {
    let bad = |m: &str| Err(RacelineError::BadGeometry(m.to_string()));
    if !(spec.spacing.is_finite() && spec.spacing > 0.0) {
        return bad("spacing must be positive");
    }
    if !(spec.v_cap > 0.0 && spec.a_lat_max > 0.0) {
        return bad("v_cap and a_lat_max must be positive");
    }
    let (start, pieces) = match spec.kind {
        TrackKind::Oval { straight, radius } => {
            if !(radius > 0.0 && straight >= 0.0) {
                return bad("oval radius must be positive and straight non-negative");
            }
            let s = Piece::Straight { length: straight };
            let a = Piece::Arc { radius, sweep: PI };
            (Point::new(-straight / 2.0, -radius), vec![s, a, s, a])
        }
        TrackKind::RoundedRectangle { width, height, corner_radius: r } => {
            if !(r > 0.0 && width >= 2.0 * r && height >= 2.0 * r) {
                return bad("corner radius must be positive and fit inside the rectangle");
            }
            let sx = Piece::Straight { length: width - 2.0 * r };
            let sy = Piece::Straight { length: height - 2.0 * r };
            let a = Piece::Arc { radius: r, sweep: PI / 2.0 };
            (Point::new(-width / 2.0 + r, -height / 2.0), vec![sx, a, sy, a, sx, a, sy, a])
        }
    };
    let shortest_arc =
        pieces.iter().filter(|p| matches!(p, Piece::Arc { .. })).map(Piece::length).fold(f64::INFINITY, f64::min);
    if spec.spacing > shortest_arc {
        return Err(RacelineError::BadGeometry(format!(
            "spacing {} m exceeds the shortest arc length {shortest_arc:.4} m",
            spec.spacing
        )));
    }

    // Start pose of every piece.
    let mut starts = Vec::with_capacity(pieces.len());
    let (mut p, mut heading) = (start, 0.0_f64);
    for piece in &pieces {
        starts.push((p, heading));
        (p, heading) = advance(p, heading, piece, piece.length());
    }
    let perimeter: f64 = pieces.iter().map(Piece::length).sum();
    let n = (perimeter / spec.spacing).round() as usize;
    let step = perimeter / n as f64;
    let profile = spec.speed_profile();

    let mut waypoints = Vec::with_capacity(n);
    let (mut k, mut piece_start) = (0usize, 0.0);
    for i in 0..n {
        let s = i as f64 * step;
        while k + 1 < pieces.len() && s >= piece_start + pieces[k].length() {
            piece_start += pieces[k].length();
            k += 1;
        }
        let (p0, h0) = starts[k];
        let (pt, _) = advance(p0, h0, &pieces[k], s - piece_start);
        let kappa = pieces[k].kappa();
        waypoints.push(Waypoint { x: pt.x, y: pt.y, kappa, v_max: profile.speed_at(kappa) });
    }
    Raceline::new(waypoints, spec.half_width)
}

fn advance(p: Point, heading: f64, piece: &Piece, s: f64) -> (Point, f64) {
    match *piece {
        Piece::Straight { .. } => (Point::new(p.x + s * heading.cos(), p.y + s * heading.sin()), heading),
        Piece::Arc { radius, .. } => {
            let dtheta = s / radius;
            let (cx, cy) = (p.x - radius * heading.sin(), p.y + radius * heading.cos());
            let h = heading + dtheta;
            (Point::new(cx + radius * h.sin(), cy - radius * h.cos()), h)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn csv_from(points: &[(f64, f64)], v: f64) -> String {
        let mut s = String::from("x,y,kappa,v_max\n");
        for (x, y) in points {
            s.push_str(&format!("{x},{y},0,{v}\n"));
        }
        s
    }

    fn circle_points(n: usize, r: f64) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n as f64;
                (r * a.cos(), r * a.sin())
            })
            .collect()
    }

    /// Long thin closed loop: a straight along y=0 and back along y=w.
    fn straight_loop() -> Raceline {
        let mut pts = Vec::new();
        for i in 0..=200 {
            pts.push((i as f64 * 0.25, 0.0));
        }
        for i in (0..=200).rev() {
            pts.push((i as f64 * 0.25, 0.5));
        }
        let wps = pts.iter().map(|&(x, y)| Waypoint { x, y, kappa: 0.0, v_max: 5.0 }).collect();
        Raceline::new(wps, 1.1).unwrap()
    }

    #[test]
    fn loads_well_formed_file() {
        let r = load_raceline(&csv_from(&circle_points(100, 8.0), 4.0), 1.1).unwrap();
        assert_eq!(r.len(), 100);
        assert_eq!(r.position(3), Point::new(circle_points(100, 8.0)[3].0, circle_points(100, 8.0)[3].1));
    }

    #[test]
    fn columns_may_come_in_any_order() {
        let mut s = String::from("v_max,kappa,y,x\n");
        for (x, y) in circle_points(40, 3.0) {
            s.push_str(&format!("2.0,0.333,{y},{x}\n"));
        }
        let r = load_raceline(&s, 1.1).unwrap();
        assert_eq!(r.v_max(0), 2.0);
        assert_eq!(r.position(0).x, 3.0);
    }

    #[test]
    fn zero_speed_names_its_row() {
        let mut lines: Vec<String> = csv_from(&circle_points(50, 5.0), 3.0).lines().map(String::from).collect();
        let fields: Vec<&str> = lines[7].split(',').collect();
        lines[7] = format!("{},{},0,0", fields[0], fields[1]);
        let err = load_raceline(&lines.join("\n"), 1.1).unwrap_err();
        assert!(matches!(err, RacelineError::BadRow { row: 7, .. }), "{err:?}");
        assert!(err.to_string().contains("row 7"));
    }

    #[test]
    fn rejects_missing_column_and_garbage() {
        let err = load_raceline("x,y,kappa\n0,0,0\n", 1.1).unwrap_err();
        assert_eq!(err, RacelineError::MissingColumn("v_max"));
        let mut s = csv_from(&circle_points(30, 5.0), 3.0);
        s.push_str("1.0,abc,0,3\n");
        assert!(matches!(load_raceline(&s, 1.1), Err(RacelineError::BadRow { row: 31, .. })));
        let s = csv_from(&circle_points(30, 5.0), 3.0).replace("\n5,", "\nNaN,");
        assert!(matches!(load_raceline(&s, 1.1), Err(RacelineError::BadRow { row: 1, .. })));
    }

    #[test]
    fn rejects_short_files() {
        assert_eq!(
            load_raceline(&csv_from(&circle_points(19, 1.0), 1.0), 1.1).unwrap_err(),
            RacelineError::TooFewWaypoints(19)
        );
    }

    #[test]
    fn open_path_fails_closure() {
        // First 50 of 60 evenly spaced points on a circle: the closing chord spans 11 gaps.
        let radius = 60.0 * 0.25 / (2.0 * PI);
        let pts: Vec<(f64, f64)> = circle_points(60, radius).into_iter().take(50).collect();
        let spacing = 2.0 * radius * (PI / 60.0).sin();
        let gap = 2.0 * radius * (11.0 * PI / 60.0).sin();
        let err = load_raceline(&csv_from(&pts, 2.0), 1.1).unwrap_err();
        match err {
            RacelineError::LoopNotClosed { gap: g, limit } => {
                assert!((g - gap).abs() < 1e-9);
                assert!((limit - 3.0 * spacing).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn oval_curvature_is_exact() {
        let spec = TrackSpec { spacing: 0.1, ..TrackSpec::oval(10.0, 3.0) };
        let r = synthesize_track(&spec).unwrap();
        let mut arcs = 0;
        for w in r.waypoints() {
            assert!(w.kappa == 0.0 || w.kappa == 1.0 / 3.0, "kappa {}", w.kappa);
            if w.kappa != 0.0 {
                arcs += 1;
                // Arc waypoints sit on the semicircles of radius 3 around (+-5, 0).
                let cx = if w.x > 0.0 { 5.0 } else { -5.0 };
                assert!(((w.x - cx).hypot(w.y) - 3.0).abs() < 1e-9);
            } else {
                assert!((w.y.abs() - 3.0).abs() < 1e-9);
            }
        }
        assert!(arcs > 0);
    }

    #[test]
    fn arc_speed_follows_lateral_limit() {
        let spec = TrackSpec { spacing: 0.1, v_cap: 12.0, a_lat_max: 3.0, ..TrackSpec::oval(10.0, 3.0) };
        let r = synthesize_track(&spec).unwrap();
        for w in r.waypoints() {
            let expect = if w.kappa == 0.0 { 12.0 } else { 3.0 };
            assert!((w.v_max - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn rounded_rectangle_closes() {
        let r = synthesize_track(&TrackSpec::rounded_rectangle(24.0, 14.0, 3.0)).unwrap();
        let perimeter = 2.0 * (18.0 + 8.0) + 2.0 * PI * 3.0;
        assert!((r.lap_length() - perimeter).abs() < 0.05);
        assert!(r.segment_length(r.len() - 1) < 0.3);
    }

    #[test]
    fn spacing_larger_than_arc_is_rejected() {
        let spec = TrackSpec { spacing: 5.0, ..TrackSpec::rounded_rectangle(10.0, 10.0, 2.0) };
        assert!(matches!(synthesize_track(&spec), Err(RacelineError::BadGeometry(_))));
    }

    #[test]
    fn nearest_index_on_waypoint_and_ties() {
        let r = straight_loop();
        assert_eq!(r.nearest_index(r.position(17)), 17);
        // Midpoint of waypoints 4 and 5 on the straight.
        assert_eq!(r.nearest_index(Point::new(1.125, 0.0)), 4);
    }

    #[test]
    fn taps_wrap_modulo_n() {
        let wps: Vec<Waypoint> = circle_points(100, 4.0)
            .into_iter()
            .enumerate()
            .map(|(i, (x, y))| Waypoint { x, y, kappa: -(i as f64), v_max: 1.0 })
            .collect();
        let r = Raceline::new(wps, 1.0).unwrap();
        let t = r.taps(98);
        assert_eq!((t.kappa0, t.kappa1, t.kappa2), (98.0, 3.0, 10.0));
        assert_eq!(t.dkappa, 3.0 - 98.0);
        assert_eq!(t.kappa_max, 98.0);
    }

    #[test]
    fn taps_take_absolute_curvature() {
        let wps: Vec<Waypoint> = circle_points(40, 2.0)
            .into_iter()
            .enumerate()
            .map(|(i, (x, y))| Waypoint { x, y, kappa: if i == 5 { -0.5 } else { 0.0 }, v_max: 1.0 })
            .collect();
        let r = Raceline::new(wps, 1.0).unwrap();
        let t = r.taps(0);
        assert_eq!(t.kappa1, 0.5);
        assert_eq!(t.kappa_max, 0.5);
        let straight = straight_loop().taps(3);
        assert_eq!((straight.kappa0, straight.kappa1, straight.kappa2, straight.dkappa), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn lookahead_on_straight() {
        let r = straight_loop();
        let t = r.lookahead_target(Point::new(5.0, 0.0), 2.0);
        assert!((t.x - 7.0).abs() < 1e-12 && t.y == 0.0);
        // Shorter than one segment: interpolated inside the first segment.
        let t = r.lookahead_target(Point::new(5.0, 0.0), 0.1);
        assert!((t.x - 5.1).abs() < 1e-12);
    }

    #[test]
    fn lookahead_interpolates_on_bent_polyline() {
        // Square-ish loop; from waypoint 0 the first segment runs (0,0)->(0.5,0), the next turns north.
        let mut pts = vec![(0.0, 0.0), (0.5, 0.0), (0.5, 0.5)];
        pts.extend((1..=10).map(|i| (0.5 - i as f64 * 0.05, 0.5)));
        pts.extend((1..10).map(|i| (0.0, 0.5 - i as f64 * 0.05)));
        let r = load_raceline(&csv_from(&pts, 1.0), 1.0).unwrap();
        // 0.7 m = full first segment (0.5) + 0.2 up the second: (0.5, 0.2).
        let t = r.point_along(0, 0.7);
        assert!((t.x - 0.5).abs() < 1e-12 && (t.y - 0.2).abs() < 1e-12);
    }

    #[test]
    fn lookahead_wraps_the_seam() {
        let r = synthesize_track(&TrackSpec::oval(10.0, 3.0)).unwrap();
        let n = r.len();
        let t = r.point_along(n - 1, 1.0);
        // Brute-force: accumulate from n-1 through 0 and onward.
        let mut acc = 0.0;
        let mut j = n - 1;
        while acc + r.segment_length(j) < 1.0 {
            acc += r.segment_length(j);
            j = (j + 1) % n;
        }
        assert!(j < 10);
        let (a, b) = (r.position(j), r.position((j + 1) % n));
        let f = (1.0 - acc) / r.segment_length(j);
        assert!((t.x - (a.x + f * (b.x - a.x))).abs() < 1e-12);
        assert!((t.y - (a.y + f * (b.y - a.y))).abs() < 1e-12);
    }

    #[test]
    fn speed_scaling() {
        let r = synthesize_track(&TrackSpec { v_cap: 12.0, ..TrackSpec::oval(10.0, 3.0) }).unwrap();
        let same = r.scale_speeds(1.0);
        assert!(r.waypoints().zip(same.waypoints()).all(|(a, b)| a == b));
        let fast = r.scale_speeds(1.3);
        assert!((fast.speed_range().1 - 15.6).abs() < 1e-12);
        let slow = r.scale_speeds(0.9);
        for i in 0..r.len() {
            assert!((slow.v_max(i) - 0.9 * r.v_max(i)).abs() < 1e-12);
            assert_eq!(slow.position(i), r.position(i));
        }
    }

    #[test]
    fn progress_examples() {
        assert_eq!(progress_count(10, 13, 100), 3);
        assert_eq!(progress_count(98, 2, 100), 4);
        assert_eq!(progress_count(10, 5, 100), 0);
        assert_eq!(progress_count(7, 7, 100), 0);
    }

    #[test]
    fn lateral_error_sign() {
        let r = straight_loop();
        assert_eq!(r.lateral_error(Point::new(10.0, 0.0)), 0.0);
        // The outbound straight runs +x along y=0, so +y is to its left.
        assert!((r.lateral_error(Point::new(10.0, -0.3)) + 0.3).abs() < 1e-12);
        let r = synthesize_track(&TrackSpec::oval(10.0, 3.0)).unwrap();
        // Bottom straight heads +x at y=-3: inside the loop is left.
        assert!((r.lateral_error(Point::new(0.0, -2.7)) - 0.3).abs() < 1e-9);
    }

    fn brute_lateral(r: &Raceline, p: Point) -> f64 {
        let n = r.len();
        let mut best: Option<(f64, f64)> = None;
        for i in 0..n {
            let (a, b) = (r.position(i), r.position((i + 1) % n));
            // Dense sampling is too coarse for 1e-9; use the closed form independently written.
            let (ux, uy) = (b.x - a.x, b.y - a.y);
            let l = ux.hypot(uy);
            let along = ((p.x - a.x) * ux + (p.y - a.y) * uy) / l;
            let q = if along <= 0.0 {
                a
            } else if along >= l {
                b
            } else {
                Point::new(a.x + along * ux / l, a.y + along * uy / l)
            };
            let d = p.distance(&q);
            let side = (ux * (p.y - a.y) - uy * (p.x - a.x)).signum();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, if side < 0.0 { -d } else { d }));
            }
        }
        best.unwrap().1
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn nearest_matches_exhaustive_scan(x in -12.0..12.0f64, y in -8.0..8.0f64) {
            let r = synthesize_track(&TrackSpec::oval(10.0, 3.0)).unwrap();
            let p = Point::new(x, y);
            let d: Vec<f64> = (0..r.len()).map(|i| r.position(i).distance(&p)).collect();
            let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
            let argmin = d.iter().position(|&v| v == min).unwrap();
            prop_assert_eq!(r.nearest_index(p), argmin);
        }

        #[test]
        fn lateral_error_matches_segment_scan(x in -12.0..12.0f64, y in -8.0..8.0f64) {
            let r = synthesize_track(&TrackSpec::rounded_rectangle(20.0, 12.0, 2.5)).unwrap();
            let p = Point::new(x, y);
            prop_assert!((r.lateral_error(p) - brute_lateral(&r, p)).abs() < 1e-9);
        }

        #[test]
        fn taps_are_shift_consistent(shift in 0usize..80, i in 0usize..80) {
            let wps: Vec<Waypoint> = circle_points(80, 5.0)
                .into_iter()
                .enumerate()
                .map(|(k, (x, y))| Waypoint { x, y, kappa: ((k * 7919) % 13) as f64 - 6.0, v_max: 1.0 })
                .collect();
            let mut rotated = wps.clone();
            rotated.rotate_left(shift);
            let a = Raceline::new(wps, 1.0).unwrap();
            let b = Raceline::new(rotated, 1.0).unwrap();
            prop_assert_eq!(a.taps(i), b.taps((i + 80 - shift) % 80));
        }

        #[test]
        fn lookahead_arc_length_equals_request(start in 0usize..300, ld in 0.01..6.0f64) {
            let r = synthesize_track(&TrackSpec::oval(10.0, 3.0)).unwrap();
            let start = start % r.len();
            let target = r.point_along(start, ld);
            // Arc length from the start waypoint to the target, measured independently.
            let n = r.len();
            let mut acc = 0.0;
            let mut j = start;
            loop {
                let (a, b) = (r.position(j), r.position((j + 1) % n));
                let seg = a.distance(&b);
                let to_target = a.distance(&target);
                let on_seg = (to_target + target.distance(&b) - seg).abs() < 1e-9;
                if on_seg && acc + to_target >= ld - 1e-9 {
                    prop_assert!((acc + to_target - ld).abs() < 1e-9);
                    break;
                }
                acc += seg;
                j = (j + 1) % n;
                prop_assert!(acc < ld + 1.0);
            }
        }

        #[test]
        fn scaling_composes_exactly(a in 0.1..3.0f64, b in 0.1..3.0f64) {
            let r = synthesize_track(&TrackSpec::oval(10.0, 3.0)).unwrap();
            let twice = r.scale_speeds(a).scale_speeds(b);
            let once = r.scale_speeds(a * b);
            for i in 0..r.len() {
                prop_assert_eq!(twice.v_max(i), once.v_max(i));
            }
        }

        #[test]
        fn full_lap_progress_sums_to_n(stride in 1usize..20, start in 0usize..300) {
            let n = 300;
            let mut idx = start % n;
            let mut total = 0;
            let mut travelled = 0;
            while travelled < n {
                let step = stride.min(n - travelled);
                let next = (idx + step) % n;
                total += progress_count(idx, next, n);
                travelled += step;
                idx = next;
            }
            prop_assert_eq!(total, n);
        }
    }
}
