use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::laps::LapReport;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
    /// Finer step used above the best coarse entry; `None` disables refinement.
    pub refine: Option<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self { start: 0.80, stop: 1.30, step: 0.05, refine: Some(0.01) }
    }
}

fn round_grid(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

impl SweepGrid {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.start > 0.0) || !(self.stop >= self.start) || !(self.step > 0.0) {
            return Err("sweep grid needs 0 < start <= stop and step > 0".into());
        }
        if self.refine.is_some_and(|r| !(r > 0.0 && r < self.step)) {
            return Err("refinement step must be positive and smaller than the grid step".into());
        }
        Ok(())
    }

    pub fn coarse(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| round_grid(self.start + i as f64 * self.step)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    /// Reports for every evaluated multiplier, ascending.
    pub entries: Vec<LapReport>,
    pub best: f64,
    /// False when no multiplier completed every lap; `best` is then the best-available entry.
    pub full_completion: bool,
}

impl SweepResult {
    pub fn best_report(&self) -> &LapReport {
        self.entries.iter().find(|r| r.multiplier == self.best).expect("best multiplier was evaluated")
    }
}

fn evaluate_all<F>(multipliers: &[f64], eval: &F) -> Vec<LapReport>
where
    F: Fn(f64) -> LapReport + Sync,
{
    multipliers.par_iter().map(|&m| eval(m)).collect()
}

/// Picks the largest multiplier whose report completed every lap. Without one, falls back to
/// the most completed laps, ties broken by the larger multiplier.
pub fn select_best(entries: &[LapReport]) -> (f64, bool) {
    if let Some(r) = entries.iter().filter(|r| r.all_completed()).max_by(|a, b| a.multiplier.total_cmp(&b.multiplier)) {
        return (r.multiplier, true);
    }
    let r = entries
        .iter()
        .max_by(|a, b| a.completed.cmp(&b.completed).then(a.multiplier.total_cmp(&b.multiplier)))
        .expect("sweep evaluates at least one multiplier");
    (r.multiplier, false)
}

/// Evaluates the coarse grid, then refines between the best fully-completing entry and the next
/// coarse point. Evaluations run in parallel; results do not depend on scheduling.
pub fn sweep<F>(grid: &SweepGrid, eval: F) -> SweepResult
where
    F: Fn(f64) -> LapReport + Sync,
{
    let mut entries = evaluate_all(&grid.coarse(), &eval);
    let (coarse_best, full) = select_best(&entries);
    if let (Some(step), true) = (grid.refine, full) {
        let upper = coarse_best + grid.step;
        if upper <= grid.stop + 1e-9 {
            let n = ((grid.step / step) - 1e-9).floor() as usize;
            let fine: Vec<f64> =
                (1..=n).map(|i| round_grid(coarse_best + i as f64 * step)).filter(|m| *m < upper - 1e-9).collect();
            entries.extend(evaluate_all(&fine, &eval));
        }
    }
    entries.sort_by(|a, b| a.multiplier.total_cmp(&b.multiplier));
    let (best, full_completion) = select_best(&entries);
    SweepResult { entries, best, full_completion }
}
