//! Consecutive-lap evaluation with start-line timing.

use serde::{Deserialize, Serialize};

use super::controllers::LapController;
use crate::pure_pursuit::Mode;
use crate::raceline::Raceline;
use crate::vehicle::{collision_check, control_step_observed, SimConfig, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LapSettings {
    pub laps: usize,
    /// A lap attempt taking longer than this is abandoned as incomplete.
    pub max_lap_time: f64,
    /// Starting speed as a fraction of the start waypoint's reference speed.
    pub start_speed_fraction: f64,
}

impl Default for LapSettings {
    fn default() -> Self {
        Self { laps: 10, max_lap_time: 120.0, start_speed_fraction: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LapRecord {
    pub lap: usize,
    pub time: f64,
    pub completed: bool,
}

/// One row of the per-step trace log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub time: f64,
    pub lap: usize,
    pub s_index: usize,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub lookahead: f64,
    pub gain: f64,
    pub kappa_max: f64,
    pub gamma: f64,
    pub lateral_error: f64,
    pub mode: &'static str,
    pub collision: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LapStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl LapStats {
    /// Statistics over completed laps (sample standard deviation); NaN when none completed.
    pub fn from_laps(laps: &[LapRecord]) -> Self {
        let times: Vec<f64> = laps.iter().filter(|l| l.completed).map(|l| l.time).collect();
        if times.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN, min: f64::NAN, max: f64::NAN };
        }
        let n = times.len() as f64;
        let mean = times.iter().sum::<f64>() / n;
        let std = if times.len() > 1 {
            (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std,
            min: times.iter().copied().fold(f64::INFINITY, f64::min),
            max: times.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LapReport {
    pub controller: String,
    pub multiplier: f64,
    pub laps: Vec<LapRecord>,
    pub stats: LapStats,
    pub completed: usize,
    pub attempted: usize,
    pub teacher_steps: usize,
    pub total_steps: usize,
    pub mean_abs_lateral: f64,
    pub steering_rate_rms: f64,
    pub max_v_cmd: f64,
}

impl LapReport {
    pub fn all_completed(&self) -> bool {
        self.completed == self.attempted
    }

    pub fn teacher_ratio(&self) -> f64 {
        if self.total_steps == 0 {
            0.0
        } else {
            self.teacher_steps as f64 / self.total_steps as f64
        }
    }

    /// Teacher activation in the form `3/8261 steps (0.036%)`.
    pub fn teacher_summary(&self) -> String {
        format!("{}/{} steps ({:.3}%)", self.teacher_steps, self.total_steps, 100.0 * self.teacher_ratio())
    }
}

fn place_at_start(raceline: &Raceline, fraction: f64) -> VehicleState {
    let p = raceline.position(0);
    VehicleState { x: p.x, y: p.y, theta: raceline.tangent_heading(0), v: fraction * raceline.v_max(0) }
}

/// Signed distance of `state` past the start line along the start tangent.
fn past_start(raceline: &Raceline, state: &VehicleState) -> f64 {
    let p = raceline.position(0);
    let h = raceline.tangent_heading(0);
    (state.x - p.x) * h.cos() + (state.y - p.y) * h.sin()
}

/// Drives `settings.laps` consecutive lap attempts on `raceline` (already speed-scaled).
/// A collision ends the attempt as incomplete and restarts from the start line.
/// Returns the report and one trace row per control step.
pub fn run_laps(
    controller: &mut dyn LapController,
    raceline: &Raceline,
    multiplier: f64,
    sim: &SimConfig,
    settings: &LapSettings,
) -> (LapReport, Vec<TraceRow>) {
    let n = raceline.len();
    let mut trace = Vec::new();
    let mut laps = Vec::with_capacity(settings.laps);
    let mut state = place_at_start(raceline, settings.start_speed_fraction);
    controller.reset();
    let mut delta = 0.0;
    let mut time = 0.0;
    let mut lap_start = 0.0;
    let mut passed_half = false;
    let mut teacher_steps = 0;
    let mut abs_lat = 0.0;
    let mut rate_sq = 0.0;
    let mut max_v_cmd: f64 = 0.0;
    let mut step = 0;

    while laps.len() < settings.laps {
        let out = controller.control(&state, raceline, time);
        max_v_cmd = max_v_cmd.max(out.command.v_cmd);
        let before = past_start(raceline, &state);
        let mut collided = false;
        let (next, d) = control_step_observed(&state, &out.command, delta, sim, |s, _| {
            collided |= collision_check(raceline, s);
        });
        rate_sq += ((d - delta) / sim.dt_control).powi(2);
        delta = d;
        state = next;
        time += sim.dt_control;
        let nearest = raceline.nearest_index(state.position());
        let lateral = raceline.lateral_error(state.position());
        abs_lat += lateral.abs();
        teacher_steps += (out.mode == Mode::Teacher) as usize;
        let params = out.params;
        trace.push(TraceRow {
            step,
            time,
            lap: laps.len(),
            s_index: nearest,
            x: state.x,
            y: state.y,
            v: state.v,
            lookahead: params.map_or(f64::NAN, |p| p.lookahead),
            gain: params.map_or(f64::NAN, |p| p.gain),
            kappa_max: out.kappa_max,
            gamma: out.command.delta,
            lateral_error: lateral,
            mode: out.mode.as_str(),
            collision: collided,
        });
        step += 1;

        if nearest > n / 3 && nearest < 2 * n / 3 {
            passed_half = true;
        }
        let after = past_start(raceline, &state);
        let near_start = nearest < n / 4 || nearest > 3 * n / 4;
        if collided || time - lap_start > settings.max_lap_time {
            laps.push(LapRecord { lap: laps.len(), time: time - lap_start, completed: false });
            state = place_at_start(raceline, settings.start_speed_fraction);
            controller.reset();
            delta = 0.0;
            lap_start = time;
            passed_half = false;
        } else if passed_half && near_start && before < 0.0 && after >= 0.0 {
            let crossing = time - sim.dt_control * after / (after - before);
            laps.push(LapRecord { lap: laps.len(), time: crossing - lap_start, completed: true });
            lap_start = crossing;
            passed_half = false;
        }
    }
    let steps = trace.len().max(1) as f64;
    let completed = laps.iter().filter(|l| l.completed).count();
    let report = LapReport {
        controller: controller.name().to_string(),
        multiplier,
        stats: LapStats::from_laps(&laps),
        completed,
        attempted: laps.len(),
        laps,
        teacher_steps,
        total_steps: trace.len(),
        mean_abs_lateral: abs_lat / steps,
        steering_rate_rms: (rate_sq / steps).sqrt(),
        max_v_cmd,
    };
    (report, trace)
}
