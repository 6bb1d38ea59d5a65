//! CSV/text rendering and atomic file output.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use super::laps::{LapReport, LapStats};
use super::sweep::SweepResult;
use super::HarnessError;

/// Writes `contents` to a temporary file beside `path`, then renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), HarnessError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| HarnessError::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| HarnessError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| HarnessError::io(path, e))?;
    tmp.persist(path).map_err(|e| HarnessError::io(path, e.error))?;
    Ok(())
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::Output(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Output(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| HarnessError::Output(e.to_string()))
}

#[derive(Debug, Serialize)]
struct LapRow<'a> {
    controller: &'a str,
    multiplier: f64,
    lap: usize,
    time: f64,
    completed: bool,
}

/// One row per lap attempt for each report.
pub fn laps_csv(reports: &[&LapReport]) -> Result<String, HarnessError> {
    let rows: Vec<LapRow> = reports
        .iter()
        .flat_map(|r| {
            r.laps.iter().map(|l| LapRow {
                controller: &r.controller,
                multiplier: r.multiplier,
                lap: l.lap,
                time: l.time,
                completed: l.completed,
            })
        })
        .collect();
    to_csv(&rows)
}

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    controller: &'a str,
    multiplier: f64,
    completed: usize,
    laps: usize,
    mean: f64,
    std: f64,
    min: f64,
    max: f64,
    teacher_steps: usize,
    total_steps: usize,
    mean_abs_lateral: f64,
    steering_rate_rms: f64,
}

impl<'a> From<&'a LapReport> for SummaryRow<'a> {
    fn from(r: &'a LapReport) -> Self {
        let LapStats { mean, std, min, max } = r.stats;
        Self {
            controller: &r.controller,
            multiplier: r.multiplier,
            completed: r.completed,
            laps: r.attempted,
            mean,
            std,
            min,
            max,
            teacher_steps: r.teacher_steps,
            total_steps: r.total_steps,
            mean_abs_lateral: r.mean_abs_lateral,
            steering_rate_rms: r.steering_rate_rms,
        }
    }
}

pub fn summary_csv(reports: &[&LapReport]) -> Result<String, HarnessError> {
    let rows: Vec<SummaryRow> = reports.iter().map(|r| SummaryRow::from(*r)).collect();
    to_csv(&rows)
}

fn fmt_time(t: f64) -> String {
    if t.is_finite() {
        format!("{t:.2}")
    } else {
        "-".into()
    }
}

/// Fixed-width table with columns Mean Std Min Max per controller.
pub fn summary_table(reports: &[&LapReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<14} {:>6} {:>7} {:>8} {:>7} {:>8} {:>8} {:>9} {:>9}  teacher",
        "controller", "mult", "laps", "Mean", "Std", "Min", "Max", "|lat|", "steer_rms"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:<14} {:>6.2} {:>7} {:>8} {:>7} {:>8} {:>8} {:>9.3} {:>9.3}  {}",
            r.controller,
            r.multiplier,
            format!("{}/{}", r.completed, r.attempted),
            fmt_time(r.stats.mean),
            fmt_time(r.stats.std),
            fmt_time(r.stats.min),
            fmt_time(r.stats.max),
            r.mean_abs_lateral,
            r.steering_rate_rms,
            r.teacher_summary()
        );
    }
    s
}

pub fn sweep_table(result: &SweepResult) -> String {
    let entries: Vec<&LapReport> = result.entries.iter().collect();
    let mut s = summary_table(&entries);
    let _ = writeln!(
        s,
        "\nbest multiplier: {:.2}{}",
        result.best,
        if result.full_completion { "" } else { " (no multiplier completed every lap; best available)" }
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::laps::LapRecord;

    fn report() -> LapReport {
        let laps = vec![
            LapRecord { lap: 0, time: 12.345678901234, completed: true },
            LapRecord { lap: 1, time: 11.1, completed: false },
            LapRecord { lap: 2, time: 12.000000000001, completed: true },
        ];
        LapReport {
            controller: "x".into(),
            multiplier: 1.05,
            stats: LapStats::from_laps(&laps),
            completed: 2,
            attempted: 3,
            laps,
            teacher_steps: 0,
            total_steps: 8261,
            mean_abs_lateral: 0.1,
            steering_rate_rms: 0.2,
            max_v_cmd: 5.0,
        }
    }

    #[test]
    fn stats_recomputed_from_csv_match() {
        let r = report();
        let text = laps_csv(&[&r]).unwrap();
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let laps: Vec<LapRecord> = rdr
            .records()
            .map(|rec| {
                let rec = rec.unwrap();
                LapRecord { lap: rec[2].parse().unwrap(), time: rec[3].parse().unwrap(), completed: &rec[4] == "true" }
            })
            .collect();
        let s = LapStats::from_laps(&laps);
        assert!((s.mean - r.stats.mean).abs() < 1e-9);
        assert!((s.std - r.stats.std).abs() < 1e-9);
    }

    #[test]
    fn table_column_order() {
        let t = summary_table(&[&report()]);
        let header = t.lines().next().unwrap();
        let pos: Vec<usize> = ["Mean", "Std", "Min", "Max"].iter().map(|c| header.find(c).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert!(t.contains("0/8261 steps (0.000%)"));
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("report.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        assert_eq!(fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}
