//! Text and CSV renderings of a campaign. Wall-clock timings are left out
//! so the same seeds always give byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use super::campaign::CampaignSummary;
use super::episode::EpisodeReport;
use crate::error::HarnessError;
use crate::ident::PARAM_ROWS;

pub const SUMMARY_CSV_VERSION: &str = "# quadlearn-summary v1";
pub const EPISODES_CSV_VERSION: &str = "# quadlearn-episodes v1";

fn opt(v: Option<f64>, scale: f64) -> String {
    v.map(|x| format!("{:.3}", x * scale)).unwrap_or_else(|| "-".into())
}

fn aborted(r: &EpisodeReport) -> String {
    let s: String = r
        .aborted_motors
        .iter()
        .enumerate()
        .filter(|(_, a)| **a)
        .map(|(i, _)| char::from(b'1' + i as u8))
        .collect();
    if s.is_empty() {
        "-".into()
    } else {
        s
    }
}

pub fn render_text(s: &CampaignSummary) -> String {
    let mut out = String::new();
    let t = &s.table;
    let _ = writeln!(
        out,
        "Parameter error RMS over {} runs (mean |truth| in parentheses)",
        t.count
    );
    let _ = writeln!(
        out,
        "{:<12} {:>20} {:>20} {:>20} {:>20}",
        "param", "motor 1", "motor 2", "motor 3", "motor 4"
    );
    for (row, (name, scale)) in PARAM_ROWS.iter().enumerate() {
        let _ = write!(out, "{name:<12}");
        for m in 0..4 {
            let cell = format!("{:.3} ({:.3})", t.rms[row][m] * scale, t.mean_abs_truth[row][m] * scale);
            let _ = write!(out, " {cell:>20}");
        }
        out.push('\n');
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "success: {}/{}", s.successes(), s.reports.len());
    let _ = writeln!(
        out,
        "{:>8} {:>7} {:>9} {:>9} {:>9} {:>9} {:>9} {:>6} {:>7}  note",
        "seed", "success", "switch_s", "recov_s", "track_ms", "tilt2s", "min_alt", "sat", "aborted"
    );
    for r in &s.reports {
        let _ = writeln!(
            out,
            "{:>8} {:>7} {:>9} {:>9} {:>9} {:>9} {:>9.3} {:>6} {:>7}  {}",
            r.seed,
            r.success,
            opt(r.switchover_time, 1.0),
            opt(r.recovery_time, 1.0),
            opt(r.rate_tracking_time, 1e3),
            opt(r.max_tilt_after_2s, 1.0),
            r.min_altitude,
            r.gyro_saturated,
            aborted(r),
            r.fit_error.as_deref().unwrap_or(""),
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "# effective configuration (base seed {})", s.base_seed);
    for line in s.config.to_toml().lines() {
        let _ = writeln!(out, "# {line}");
    }
    out
}

pub fn render_summary_csv(s: &CampaignSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{SUMMARY_CSV_VERSION}");
    let _ = writeln!(out, "param,motor,rms,mean_abs_truth,episodes");
    for (row, (name, _)) in PARAM_ROWS.iter().enumerate() {
        for m in 0..4 {
            let _ = writeln!(
                out,
                "{name},{},{:.9e},{:.9e},{}",
                m + 1,
                s.table.rms[row][m],
                s.table.mean_abs_truth[row][m],
                s.table.count
            );
        }
    }
    out
}

pub fn render_episodes_csv(s: &CampaignSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{EPISODES_CSV_VERSION}");
    let _ = writeln!(
        out,
        "seed,success,switchover_s,recovery_s,rate_tracking_s,max_tilt_after_2s_deg,min_altitude_m,\
         final_position_error_m,gyro_saturated,max_rate_excitation,aborted,degraded_ticks,fit_error"
    );
    let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in &s.reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.6},{},{},{:.6},{},{},\"{}\"",
            r.seed,
            r.success,
            f(r.switchover_time),
            f(r.recovery_time),
            f(r.rate_tracking_time),
            f(r.max_tilt_after_2s),
            r.min_altitude,
            f(r.final_position_error),
            r.gyro_saturated,
            r.max_rate_excitation,
            aborted(r),
            r.degraded_ticks,
            r.fit_error.as_deref().unwrap_or("").replace('"', "'"),
        );
    }
    out
}

/// Writes `summary.txt`, `summary.csv`, `episodes.csv` and `config.toml`.
pub fn write_reports(s: &CampaignSummary, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("summary.txt"), render_text(s))?;
    std::fs::write(dir.join("summary.csv"), render_summary_csv(s))?;
    std::fs::write(dir.join("episodes.csv"), render_episodes_csv(s))?;
    std::fs::write(dir.join("config.toml"), s.config.to_toml())?;
    Ok(())
}
