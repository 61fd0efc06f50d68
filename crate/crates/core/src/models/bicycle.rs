//! Planar mobile robot following a track among moving obstacles.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::cartpole::wrap_angle;
use crate::system::{Dynamics, StateCost};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BicycleVariant {
    /// Controls `(v, omega)`: forward speed and yaw rate.
    #[default]
    Unicycle,
    /// Controls `(v, delta)`: forward speed and front steering angle.
    KinematicBicycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BicycleParams {
    pub variant: BicycleVariant,
    pub wheelbase: f64,
    pub min_speed: f64,
    pub max_speed: f64,
    pub max_angular_rate: f64,
    pub max_steering: f64,
}

impl Default for BicycleParams {
    fn default() -> Self {
        BicycleParams {
            variant: BicycleVariant::Unicycle,
            wheelbase: 0.5,
            min_speed: 0.0,
            max_speed: 2.0,
            max_angular_rate: 2.0,
            max_steering: 0.6,
        }
    }
}

impl BicycleParams {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.wheelbase > 0.0) {
            return Err("bicycle.wheelbase must be positive".into());
        }
        if !(self.max_speed > 0.0 && self.max_speed > self.min_speed) {
            return Err("bicycle.max_speed must be positive and above min_speed".into());
        }
        if !(self.max_angular_rate > 0.0) || !(self.max_steering > 0.0) {
            return Err("bicycle angular limits must be positive".into());
        }
        if self.max_steering >= std::f64::consts::FRAC_PI_2 {
            return Err("bicycle.max_steering must be below pi/2".into());
        }
        Ok(())
    }
}

/// State `(x, y, theta)`.
#[derive(Debug, Clone)]
pub struct Bicycle {
    pub params: BicycleParams,
}

impl Bicycle {
    pub fn new(params: BicycleParams) -> Self {
        Bicycle { params }
    }

    /// State derivative with the control clamped to its limits.
    pub fn kinematics(&self, state: &[f64], control: &[f64]) -> [f64; 3] {
        let mut u = [control[0], control[1]];
        self.clamp_control(&mut u);
        let (s, c) = state[2].sin_cos();
        let yaw_rate = match self.params.variant {
            BicycleVariant::Unicycle => u[1],
            BicycleVariant::KinematicBicycle => u[0] * u[1].tan() / self.params.wheelbase,
        };
        [u[0] * c, u[0] * s, yaw_rate]
    }
}

impl Dynamics for Bicycle {
    fn state_dim(&self) -> usize {
        3
    }

    fn control_dim(&self) -> usize {
        2
    }

    fn drift(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    /// For the steering variant this is the Jacobian at zero steering; the
    /// model is not control-affine and overrides [`Dynamics::derivative`].
    fn input_matrix(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        let (s, c) = x[2].sin_cos();
        let turn = match self.params.variant {
            BicycleVariant::Unicycle => 1.0,
            BicycleVariant::KinematicBicycle => 0.0,
        };
        out.copy_from_slice(&[c, 0.0, s, 0.0, 0.0, turn]);
    }

    fn clamp_control(&self, u: &mut [f64]) {
        let p = &self.params;
        u[0] = u[0].clamp(p.min_speed, p.max_speed);
        u[1] = match p.variant {
            BicycleVariant::Unicycle => u[1].clamp(-p.max_angular_rate, p.max_angular_rate),
            BicycleVariant::KinematicBicycle => u[1].clamp(-p.max_steering, p.max_steering),
        };
    }

    fn derivative(&self, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        let (s, c) = x[2].sin_cos();
        out[0] = u[0] * c;
        out[1] = u[0] * s;
        out[2] = match self.params.variant {
            BicycleVariant::Unicycle => u[1],
            BicycleVariant::KinematicBicycle => u[0] * u[1].tan() / self.params.wheelbase,
        };
    }
}

/// Reference path as a polyline with a lateral half-width.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    points: Vec<[f64; 2]>,
    /// Arc length at the start of each segment.
    cumulative: Vec<f64>,
    /// Direction of each segment.
    headings: Vec<f64>,
    closed: bool,
    half_width: f64,
    grid: Option<SegmentGrid>,
}

/// Uniform grid around a track. Each cell lists, in segment order, every
/// segment that can be nearest to some point of the cell.
#[derive(Debug, Clone, PartialEq)]
struct SegmentGrid {
    origin: [f64; 2],
    cell: f64,
    cols: usize,
    rows: usize,
    /// Offsets into `ids`, one per cell plus an end marker.
    start: Vec<u32>,
    ids: Vec<u32>,
}

const GRID_MIN_SEGMENTS: usize = 16;
const GRID_MAX_CELLS: usize = 16_384;

impl SegmentGrid {
    fn build(track: &Track) -> Option<Self> {
        let nseg = track.num_segments();
        if nseg < GRID_MIN_SEGMENTS {
            return None;
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &track.points {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        // Sampled rollouts stray well beyond the track; points outside fall back to a full scan.
        let margin = (0.5 * (hi[0] - lo[0]).max(hi[1] - lo[1])).max(2.0 * track.half_width + 1.0);
        for d in 0..2 {
            lo[d] -= margin;
            hi[d] += margin;
        }
        let (w, h) = (hi[0] - lo[0], hi[1] - lo[1]);
        let mut cell = track.length() / nseg as f64;
        while (w / cell).ceil() * (h / cell).ceil() > GRID_MAX_CELLS as f64 {
            cell *= 1.5;
        }
        let cols = (w / cell).ceil() as usize;
        let rows = (h / cell).ceil() as usize;
        let half_diag = cell * std::f64::consts::FRAC_1_SQRT_2;
        let mut start = Vec::with_capacity(cols * rows + 1);
        let mut ids = Vec::new();
        let mut box_dist = vec![0.0; nseg];
        for r in 0..rows {
            for c in 0..cols {
                let blo = [lo[0] + c as f64 * cell, lo[1] + r as f64 * cell];
                let bhi = [blo[0] + cell, blo[1] + cell];
                let center = [blo[0] + 0.5 * cell, blo[1] + 0.5 * cell];
                let mut upper = f64::INFINITY;
                for (s, bd) in box_dist.iter_mut().enumerate() {
                    let (a, b) = track.segment(s);
                    upper = upper.min(point_segment_distance(center, a, b) + half_diag);
                    *bd = segment_box_distance(a, b, blo, bhi);
                }
                // Slack absorbs rounding in the bounds.
                let limit = upper * (1.0 + 1e-9) + 1e-9;
                start.push(ids.len() as u32);
                ids.extend((0..nseg).filter(|&s| box_dist[s] <= limit).map(|s| s as u32));
            }
        }
        start.push(ids.len() as u32);
        Some(SegmentGrid {
            origin: lo,
            cell,
            cols,
            rows,
            start,
            ids,
        })
    }

    fn candidates(&self, p: [f64; 2]) -> Option<&[u32]> {
        let fx = (p[0] - self.origin[0]) / self.cell;
        let fy = (p[1] - self.origin[1]) / self.cell;
        if !(fx >= 0.0 && fy >= 0.0 && fx < self.cols as f64 && fy < self.rows as f64) {
            return None;
        }
        let k = fy as usize * self.cols + fx as usize;
        Some(&self.ids[self.start[k] as usize..self.start[k + 1] as usize])
    }
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let tau = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    (p[0] - a[0] - tau * dx).hypot(p[1] - a[1] - tau * dy)
}

fn point_box_distance(p: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> f64 {
    let dx = (lo[0] - p[0]).max(0.0).max(p[0] - hi[0]);
    let dy = (lo[1] - p[1]).max(0.0).max(p[1] - hi[1]);
    dx.hypot(dy)
}

/// Liang-Barsky clip of segment `ab` against the box.
fn segment_hits_box(a: [f64; 2], b: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> bool {
    let d = [b[0] - a[0], b[1] - a[1]];
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for k in 0..2 {
        for (pk, qk) in [(-d[k], a[k] - lo[k]), (d[k], hi[k] - a[k])] {
            if pk == 0.0 {
                if qk < 0.0 {
                    return false;
                }
            } else {
                let r = qk / pk;
                if pk < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
            }
        }
    }
    t0 <= t1
}

fn segment_box_distance(a: [f64; 2], b: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> f64 {
    if segment_hits_box(a, b, lo, hi) {
        return 0.0;
    }
    let corners = [lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]];
    corners
        .iter()
        .map(|&c| point_segment_distance(c, a, b))
        .chain([point_box_distance(a, lo, hi), point_box_distance(b, lo, hi)])
        .fold(f64::INFINITY, f64::min)
}

/// Nearest point on a track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub point: [f64; 2],
    /// Signed lateral offset, positive to the left of the direction of travel.
    pub cross_track: f64,
    /// Direction of travel at the nearest point.
    pub heading: f64,
    pub arc_length: f64,
}

impl Track {
    pub fn new(points: Vec<[f64; 2]>, closed: bool, half_width: f64) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::config("a track needs at least two waypoints"));
        }
        if !(half_width > 0.0) {
            return Err(Error::config("track half-width must be positive"));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::config("track waypoints must be finite"));
        }
        let mut points = points;
        if closed && points.first() == points.last() {
            points.pop();
        }
        let nseg = if closed { points.len() } else { points.len() - 1 };
        let mut cumulative = Vec::with_capacity(nseg + 1);
        let mut acc = 0.0;
        for s in 0..nseg {
            let (a, b) = (points[s], points[(s + 1) % points.len()]);
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            if len == 0.0 {
                return Err(Error::config(format!(
                    "track waypoints {s} and {} coincide",
                    (s + 1) % points.len()
                )));
            }
            cumulative.push(acc);
            acc += len;
        }
        cumulative.push(acc);
        let headings = (0..nseg)
            .map(|s| {
                let (a, b) = (points[s], points[(s + 1) % points.len()]);
                (b[1] - a[1]).atan2(b[0] - a[0])
            })
            .collect();
        let mut track = Track {
            points,
            cumulative,
            headings,
            closed,
            half_width,
            grid: None,
        };
        track.grid = SegmentGrid::build(&track);
        Ok(track)
    }

    /// Stadium loop centered at the origin, traversed counter-clockwise from
    /// the middle of the lower straight.
    pub fn stadium(straight: f64, radius: f64, spacing: f64, half_width: f64) -> Result<Self> {
        use std::f64::consts::PI;
        if !(straight > 0.0 && radius > 0.0 && spacing > 0.0) {
            return Err(Error::config("stadium dimensions must be positive"));
        }
        let h = straight / 2.0;
        let mut pts = Vec::new();
        let n_straight = (straight / spacing).ceil() as usize;
        let n_arc = (PI * radius / spacing).ceil() as usize;
        // lower straight from the middle to the right end
        let half_steps = n_straight.div_ceil(2);
        for i in 0..half_steps {
            pts.push([i as f64 * h / half_steps as f64, -radius]);
        }
        for i in 0..n_arc {
            let a = -PI / 2.0 + PI * i as f64 / n_arc as f64;
            pts.push([h + radius * a.cos(), radius * a.sin()]);
        }
        for i in 0..n_straight {
            pts.push([h - straight * i as f64 / n_straight as f64, radius]);
        }
        for i in 0..n_arc {
            let a = PI / 2.0 + PI * i as f64 / n_arc as f64;
            pts.push([-h + radius * a.cos(), radius * a.sin()]);
        }
        for i in 0..half_steps {
            pts.push([-h + i as f64 * h / half_steps as f64, -radius]);
        }
        Track::new(pts, true, half_width)
    }

    /// Reads `x,y` rows; a header row is allowed.
    pub fn from_csv(path: &Path, closed: bool, half_width: f64) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)?;
        let mut points = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() < 2 {
                return Err(Error::config(format!(
                    "{}: row {} needs two columns",
                    path.display(),
                    row + 1
                )));
            }
            match (record[0].parse::<f64>(), record[1].parse::<f64>()) {
                (Ok(x), Ok(y)) => points.push([x, y]),
                _ if row == 0 => continue,
                _ => {
                    return Err(Error::config(format!(
                        "{}: row {} is not numeric",
                        path.display(),
                        row + 1
                    )))
                }
            }
        }
        Track::new(points, closed, half_width)
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn num_segments(&self) -> usize {
        self.cumulative.len() - 1
    }

    fn segment(&self, s: usize) -> ([f64; 2], [f64; 2]) {
        (self.points[s], self.points[(s + 1) % self.points.len()])
    }

    pub fn project(&self, p: [f64; 2]) -> Projection {
        let mut best = (f64::INFINITY, 0usize, 0.0f64);
        let mut visit = |s: usize| {
            let (a, b) = self.segment(s);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len2 = dx * dx + dy * dy;
            let tau = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
            let (qx, qy) = (a[0] + tau * dx, a[1] + tau * dy);
            let d2 = (p[0] - qx) * (p[0] - qx) + (p[1] - qy) * (p[1] - qy);
            if d2 < best.0 {
                best = (d2, s, tau);
            }
        };
        match self.grid.as_ref().and_then(|g| g.candidates(p)) {
            Some(ids) => ids.iter().for_each(|&s| visit(s as usize)),
            None => (0..self.num_segments()).for_each(visit),
        }
        let (d2, mut s, mut tau) = best;
        // A vertex belongs to the segment that starts there.
        if tau == 1.0 && (self.closed || s + 1 < self.num_segments()) {
            s = (s + 1) % self.num_segments();
            tau = 0.0;
        }
        let (a, b) = self.segment(s);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let point = [a[0] + tau * dx, a[1] + tau * dy];
        let len = self.cumulative[s + 1] - self.cumulative[s];
        let side = (dx * (p[1] - a[1]) - dy * (p[0] - a[0])).signum();
        Projection {
            point,
            cross_track: side * d2.sqrt(),
            heading: self.headings[s],
            arc_length: self.cumulative[s] + tau * len,
        }
    }

    /// Same track rotated by `angle` about the origin.
    pub fn rotated(&self, angle: f64) -> Track {
        let points = self.points.iter().map(|p| rotate(*p, angle)).collect();
        Track::new(points, self.closed, self.half_width).expect("rotation keeps a valid track")
    }

    /// Projection by exhaustive search over all segments.
    #[cfg(test)]
    fn project_exhaustive(&self, p: [f64; 2]) -> Projection {
        let mut t = self.clone();
        t.grid = None;
        t.project(p)
    }
}

fn rotate(p: [f64; 2], a: f64) -> [f64; 2] {
    let (s, c) = a.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

/// Obstacle whose center follows a piecewise-linear schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovingObstacle {
    pub radius: f64,
    /// `(time, x, y)` keyframes with increasing times.
    pub waypoints: Vec<[f64; 3]>,
    /// Repeat the schedule with period equal to its last keyframe time.
    #[serde(default)]
    pub cyclic: bool,
}

impl MovingObstacle {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::config("obstacle radius must be positive"));
        }
        if self.waypoints.is_empty() {
            return Err(Error::config("obstacle needs at least one waypoint"));
        }
        if self.waypoints.windows(2).any(|w| !(w[1][0] > w[0][0])) {
            return Err(Error::config("obstacle waypoint times must increase"));
        }
        if self.cyclic && !(self.waypoints.last().unwrap()[0] > 0.0) {
            return Err(Error::config("cyclic obstacle needs a positive period"));
        }
        Ok(())
    }

    pub fn position(&self, t: f64) -> [f64; 2] {
        let wp = &self.waypoints;
        let last = wp[wp.len() - 1];
        let t = if self.cyclic && wp.len() > 1 {
            t.rem_euclid(last[0])
        } else {
            t
        };
        if t <= wp[0][0] {
            return [wp[0][1], wp[0][2]];
        }
        if t >= last[0] {
            return [last[1], last[2]];
        }
        let i = wp.partition_point(|w| w[0] <= t) - 1;
        let (a, b) = (wp[i], wp[i + 1]);
        let s = (t - a[0]) / (b[0] - a[0]);
        [a[1] + s * (b[1] - a[1]), a[2] + s * (b[2] - a[2])]
    }

    pub fn rotated(&self, angle: f64) -> MovingObstacle {
        let mut o = self.clone();
        for w in &mut o.waypoints {
            let p = rotate([w[1], w[2]], angle);
            w[1] = p[0];
            w[2] = p[1];
        }
        o
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObstacleSet {
    pub obstacles: Vec<MovingObstacle>,
}

impl ObstacleSet {
    pub fn new(obstacles: Vec<MovingObstacle>) -> Result<Self> {
        for o in &obstacles {
            o.validate()?;
        }
        Ok(ObstacleSet { obstacles })
    }

    /// Smallest `distance - radius` over all obstacles at time `t`.
    pub fn clearance(&self, t: f64, p: [f64; 2]) -> f64 {
        self.obstacles
            .iter()
            .map(|o| {
                let c = o.position(t);
                (p[0] - c[0]).hypot(p[1] - c[1]) - o.radius
            })
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingWeights {
    pub cross_track: f64,
    pub heading: f64,
    pub obstacle: f64,
    /// Length scale `eps` (m^2) of the exponential obstacle penalty.
    pub obstacle_falloff: f64,
    /// Extra clearance added to every obstacle radius in the penalty.
    pub safety_margin: f64,
    pub collision_cost: f64,
    pub out_of_track_cost: f64,
}

impl Default for TrackingWeights {
    fn default() -> Self {
        TrackingWeights {
            cross_track: 20.0,
            heading: 2.0,
            obstacle: 50.0,
            obstacle_falloff: 0.15,
            safety_margin: 0.25,
            collision_cost: 1e4,
            out_of_track_cost: 1e4,
        }
    }
}

/// Squared cross-track and heading errors, an exponential obstacle penalty
/// that jumps to the collision cost inside an (inflated) obstacle, and a
/// flat penalty outside the track.
pub fn tracking_cost(
    state: &[f64],
    t: f64,
    track: &Track,
    obstacles: &ObstacleSet,
    weights: &TrackingWeights,
) -> f64 {
    let p = [state[0], state[1]];
    let proj = track.project(p);
    let heading_err = wrap_angle(state[2] - proj.heading);
    let mut cost = weights.cross_track * proj.cross_track * proj.cross_track
        + weights.heading * heading_err * heading_err;
    for o in &obstacles.obstacles {
        let c = o.position(t);
        let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
        let r = o.radius + weights.safety_margin;
        if d2 < r * r {
            cost += weights.collision_cost;
        } else {
            cost += weights.obstacle * (-(d2 - r * r) / weights.obstacle_falloff).exp();
        }
    }
    if proj.cross_track.abs() > track.half_width() {
        cost += weights.out_of_track_cost;
    }
    cost
}

/// Running cost of the tracking task.
#[derive(Debug, Clone)]
pub struct TrackingTask {
    pub track: Track,
    pub obstacles: ObstacleSet,
    pub weights: TrackingWeights,
    /// Terminal cost scale on the geometric (cross-track and heading) terms.
    pub terminal_scale: f64,
}

impl StateCost for TrackingTask {
    fn running(&self, t: f64, x: &[f64]) -> f64 {
        tracking_cost(x, t, &self.track, &self.obstacles, &self.weights)
    }

    fn terminal(&self, x: &[f64]) -> f64 {
        let proj = self.track.project([x[0], x[1]]);
        let h = wrap_angle(x[2] - proj.heading);
        self.terminal_scale
            * (self.weights.cross_track * proj.cross_track * proj.cross_track
                + self.weights.heading * h * h)
    }
}
