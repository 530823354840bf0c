//! CSV output, text summaries and the run manifest.
//!
//! `trials.csv` has one row per recorded touch of every trial. Trials that
//! met the stop criterion simply end early there. `aggregate.csv` carries
//! their last error forward and reports mean and mean ± 1 population
//! standard deviation per strategy and touch count.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::{error_at, AggregateResult, BatchResult, BenchRow, ExperimentConfig, TrialResult};

pub const TRIALS_HEADER: [&str; 8] = [
    "trial_id",
    "strategy",
    "touch_index",
    "rmse_rot_deg",
    "rmse_trans_cm",
    "kl_selected",
    "n_correspondence_pairs",
    "wall_ms",
];

pub const AGGREGATE_HEADER: [&str; 9] = [
    "strategy",
    "touch_index",
    "mean_rot",
    "lo_rot",
    "hi_rot",
    "mean_trans",
    "lo_trans",
    "hi_trans",
    "n_trials_used",
];

/// Touch counts reported in summaries.
pub const SUMMARY_TOUCHES: [usize; 4] = [5, 10, 15, 20];

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: PathBuf::from("<csv>"),
            source,
        },
        other => Error::Config(format!("csv output: {other:?}")),
    }
}

pub fn write_trials_csv<W: Write>(out: W, trials: &[&TrialResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRIALS_HEADER).map_err(csv_error)?;
    for t in trials {
        for r in &t.records {
            w.write_record([
                t.trial_id.to_string(),
                t.strategy.name().to_string(),
                r.touch_index.to_string(),
                r.rmse_rot_deg.to_string(),
                r.rmse_trans_cm.to_string(),
                r.kl_selected.map(|k| k.to_string()).unwrap_or_default(),
                r.n_correspondence_pairs.to_string(),
                r.wall_ms.to_string(),
            ])
            .map_err(csv_error)?;
        }
    }
    w.flush().map_err(|source| Error::Io {
        path: PathBuf::from("<csv>"),
        source,
    })
}

pub fn write_aggregate_csv<W: Write>(out: W, aggregates: &[&AggregateResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AGGREGATE_HEADER).map_err(csv_error)?;
    for a in aggregates {
        for p in &a.points {
            w.write_record([
                a.strategy.name().to_string(),
                p.touch_index.to_string(),
                p.mean_rot.to_string(),
                p.lo_rot.to_string(),
                p.hi_rot.to_string(),
                p.mean_trans.to_string(),
                p.lo_trans.to_string(),
                p.hi_trans.to_string(),
                p.n_trials_used.to_string(),
            ])
            .map_err(csv_error)?;
        }
    }
    w.flush().map_err(|source| Error::Io {
        path: PathBuf::from("<csv>"),
        source,
    })
}

/// Paired comparison of two strategies at one touch count, over the trials
/// that completed under both.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedStats {
    pub touch_index: usize,
    pub n_pairs: usize,
    pub mean_rot: [f64; 2],
    pub mean_trans: [f64; 2],
    pub median_rot: [f64; 2],
    pub median_trans: [f64; 2],
    /// Pairs in which the second strategy has the larger error.
    pub worse_rot: usize,
    pub worse_trans: usize,
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Compares `b` against the baseline `a`; trials are matched by id.
pub fn paired_stats(a: &[TrialResult], b: &[TrialResult], k: usize) -> PairedStats {
    let mut ea = Vec::new();
    let mut eb = Vec::new();
    for ta in a {
        let Some(tb) = b.iter().find(|t| t.trial_id == ta.trial_id) else {
            continue;
        };
        if let (Some(x), Some(y)) = (error_at(ta, k), error_at(tb, k)) {
            ea.push(x);
            eb.push(y);
        }
    }
    let n = ea.len();
    let mean = |v: &[(f64, f64)], f: fn(&(f64, f64)) -> f64| v.iter().map(f).sum::<f64>() / n as f64;
    let med = |v: &[(f64, f64)], f: fn(&(f64, f64)) -> f64| median(&v.iter().map(f).collect::<Vec<_>>());
    let rot = |e: &(f64, f64)| e.0;
    let trans = |e: &(f64, f64)| e.1;
    PairedStats {
        touch_index: k,
        n_pairs: n,
        mean_rot: [mean(&ea, rot), mean(&eb, rot)],
        mean_trans: [mean(&ea, trans), mean(&eb, trans)],
        median_rot: [med(&ea, rot), med(&eb, rot)],
        median_trans: [med(&ea, trans), med(&eb, trans)],
        worse_rot: ea.iter().zip(&eb).filter(|(x, y)| y.0 > x.0).count(),
        worse_trans: ea.iter().zip(&eb).filter(|(x, y)| y.1 > x.1).count(),
    }
}

fn fmt_cell(x: f64) -> String {
    if x.is_nan() {
        "-".into()
    } else {
        format!("{x:.3}")
    }
}

/// Mean errors at the summary touch counts, one block per strategy.
pub fn summary(batches: &[&BatchResult], n_touches_max: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "mean RMSE (band: mean +/- 1 std over trials)");
    let _ = writeln!(
        s,
        "{:<8} {:>5} {:>10} {:>10} {:>10} {:>10} {:>6}",
        "strategy", "touch", "rot_deg", "rot_std", "trans_cm", "trans_std", "n"
    );
    for b in batches {
        let a = &b.aggregate;
        for &k in SUMMARY_TOUCHES.iter().filter(|&&k| k <= n_touches_max) {
            let p = &a.points[k - 1];
            let _ = writeln!(
                s,
                "{:<8} {:>5} {:>10} {:>10} {:>10} {:>10} {:>6}",
                a.strategy.name(),
                k,
                fmt_cell(p.mean_rot),
                fmt_cell(p.hi_rot - p.mean_rot),
                fmt_cell(p.mean_trans),
                fmt_cell(p.hi_trans - p.mean_trans),
                p.n_trials_used
            );
        }
        let stopped = b.trials.iter().filter(|t| t.stopped_at.is_some()).count();
        let _ = writeln!(
            s,
            "{:<8} trials {}, stopped early {}, aborted {}",
            a.strategy.name(),
            b.trials.len(),
            stopped,
            a.n_aborted
        );
    }
    if let [x, y] = batches {
        let _ = writeln!(s, "paired: {} vs {}", y.aggregate.strategy, x.aggregate.strategy);
        for &k in SUMMARY_TOUCHES.iter().filter(|&&k| k <= n_touches_max) {
            let p = paired_stats(&x.trials, &y.trials, k);
            let _ = writeln!(
                s,
                "  touch {:>2}: median rot {} vs {}, median trans {} vs {}, worse in {}/{} (rot) {}/{} (trans)",
                k,
                fmt_cell(p.median_rot[1]),
                fmt_cell(p.median_rot[0]),
                fmt_cell(p.median_trans[1]),
                fmt_cell(p.median_trans[0]),
                p.worse_rot,
                p.n_pairs,
                p.worse_trans,
                p.n_pairs
            );
        }
    }
    s
}

pub fn bench_table(rows: &[BenchRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>9} {:>6} {:>14} {:>14} {:>12}",
        "# actions", "hits", "generate [s]", "select [s]", "total [s]"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:>9} {:>6} {:>14.6} {:>14.6} {:>12.6}",
            r.n_actions,
            r.n_hits,
            r.generate_s,
            r.select_s,
            r.generate_s + r.select_s
        );
    }
    s
}

/// Everything needed to reproduce a run; written before any trial starts.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub args: Vec<String>,
    pub master_seed: u64,
    /// Seconds since the Unix epoch.
    pub started_unix: u64,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, config: &ExperimentConfig) -> Self {
        let started_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            args,
            master_seed: config.master_seed,
            started_unix,
            config: config.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest is always representable as TOML")
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_text(&dir.join("manifest.toml"), &manifest.to_toml())
}

/// Writes `trials.csv`, `aggregate.csv` and `summary.txt` into `dir` and
/// returns the summary.
pub fn write_outputs(dir: &Path, batches: &[&BatchResult], config: &ExperimentConfig) -> Result<String> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let trials: Vec<&TrialResult> = batches.iter().flat_map(|b| &b.trials).collect();
    write_trials_csv(create(&dir.join("trials.csv"))?, &trials)?;
    let aggregates: Vec<&AggregateResult> = batches.iter().map(|b| &b.aggregate).collect();
    write_aggregate_csv(create(&dir.join("aggregate.csv"))?, &aggregates)?;
    let text = summary(batches, config.n_touches_max);
    write_text(&dir.join("summary.txt"), &text)?;
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Pose;
    use crate::harness::{aggregate, Strategy, TouchRecord};

    fn trial(id: usize, strategy: Strategy, errs: &[f64]) -> TrialResult {
        TrialResult {
            trial_id: id,
            strategy,
            records: errs
                .iter()
                .enumerate()
                .map(|(i, &e)| TouchRecord {
                    touch_index: i + 1,
                    rmse_rot_deg: e,
                    rmse_trans_cm: e / 10.0,
                    kl_selected: (i >= 3).then_some(0.5),
                    n_correspondence_pairs: i * (i + 1) / 2,
                    wall_ms: 0.0,
                })
                .collect(),
            initial_pose: Pose::IDENTITY,
            final_pose: Pose::IDENTITY,
            ground_truth: Pose::IDENTITY,
            stopped_at: None,
            aborted: None,
            missed_probes: 0,
        }
    }

    #[test]
    fn csv_headers_are_pinned() {
        let t = trial(0, Strategy::Active, &[3.0, 2.0, 1.0, 0.5]);
        let mut buf = Vec::new();
        write_trials_csv(&mut buf, &[&t]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "trial_id,strategy,touch_index,rmse_rot_deg,rmse_trans_cm,kl_selected,n_correspondence_pairs,wall_ms"
        );
        assert_eq!(lines.next().unwrap(), "0,active,1,3,0.3,,0,0");
        assert_eq!(lines.last().unwrap(), "0,active,4,0.5,0.05,0.5,6,0");

        let agg = aggregate(Strategy::Active, &[t], 4);
        let mut buf = Vec::new();
        write_aggregate_csv(&mut buf, &[&agg]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "strategy,touch_index,mean_rot,lo_rot,hi_rot,mean_trans,lo_trans,hi_trans,n_trials_used"
        );
        assert_eq!(text.lines().count(), 1 + 4);
    }

    #[test]
    fn paired_counts() {
        let a = vec![trial(0, Strategy::Random, &[4.0, 4.0]), trial(1, Strategy::Random, &[4.0, 4.0])];
        let b = vec![trial(1, Strategy::Active, &[5.0, 1.0]), trial(0, Strategy::Active, &[3.0, 1.0])];
        let p = paired_stats(&a, &b, 1);
        assert_eq!(p.n_pairs, 2);
        assert_eq!(p.worse_rot, 1);
        assert_eq!(p.mean_rot, [4.0, 4.0]);
        assert_eq!(paired_stats(&a, &b, 2).worse_rot, 0);
        // Unfinished trials are not paired.
        assert_eq!(paired_stats(&a, &b, 3).n_pairs, 0);
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn summary_lists_requested_touches() {
        let trials = vec![trial(0, Strategy::Random, &[9.0; 12])];
        let b = BatchResult {
            aggregate: aggregate(Strategy::Random, &trials, 12),
            trials,
        };
        let s = summary(&[&b], 12);
        assert!(s.lines().any(|l| l.starts_with("random") && l.contains("  10 ")));
        assert!(!s.lines().any(|l| l.contains("  15 ")));
    }

    #[test]
    fn manifest_reloads_as_config() {
        let config = ExperimentConfig {
            master_seed: 5,
            ..Default::default()
        };
        let m = RunManifest::new("compare", vec!["--seed".into(), "5".into()], &config);
        let back = crate::config::parse_config(&m.to_toml(), Path::new("manifest.toml")).unwrap();
        assert_eq!(back, config);
    }
}
