//! Experiment outputs: metrics.csv, summary.json, flip_log.csv, and the
//! multi-run comparison CSV behind the `report` subcommand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::orchestrator::ExperimentReport;
use crate::poisoning::write_flip_log;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const FLIP_LOG_FILE: &str = "flip_log.csv";

/// Render the per-round metrics table. One row per client per round plus
/// an `agg` row; float formatting is the shortest round-trip form, so
/// identical runs yield byte-identical files.
pub fn render_metrics_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("round,client_id,loss,accuracy,f1,epochs_run\n");
    for record in &report.rounds {
        for m in &record.clients {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                record.round, m.client_id, m.eval_loss, m.eval_accuracy, m.eval_f1, m.epochs_run
            )
            .expect("string write");
        }
        writeln!(
            out,
            "{},agg,{},{},{},",
            record.round,
            record.aggregate.test_loss,
            record.aggregate.test_accuracy,
            record.aggregate.test_f1
        )
        .expect("string write");
    }
    out
}

/// Summary document: config echo, completion status, final-round metrics,
/// wall time.
pub fn render_summary_json(report: &ExperimentReport) -> Result<String> {
    let final_round = report.rounds.last();
    let value = json!({
        "config": report.config,
        "completed": report.completed,
        "failed_round": report.failed_round,
        "rounds_run": report.rounds.len(),
        "param_count": report.final_global.len(),
        "flips": report.flip_log.len(),
        "final": final_round.map(|record| json!({
            "round": record.round,
            "aggregate": record.aggregate,
            "clients": record.clients,
        })),
        "wall_time_secs": report.wall_time_secs,
    });
    serde_json::to_string_pretty(&value)
        .map_err(|e| Error::Data(format!("serializing summary: {e}")))
}

/// Write metrics.csv, summary.json, and flip_log.csv into `out_dir`,
/// creating it if needed.
pub fn write_outputs(report: &ExperimentReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join(METRICS_FILE), render_metrics_csv(report))?;
    std::fs::write(out_dir.join(SUMMARY_FILE), render_summary_json(report)?)?;
    let mut flip_file = std::fs::File::create(out_dir.join(FLIP_LOG_FILE))?;
    write_flip_log(&report.flip_log, &mut flip_file)?;
    Ok(())
}

/// One parsed metrics.csv row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: u32,
    /// `client_<id>` or `agg`.
    pub series: String,
    pub loss: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub epochs_run: Option<u64>,
}

/// Parse a run directory's metrics.csv.
pub fn read_metrics_csv(run_dir: &Path) -> Result<Vec<MetricsRow>> {
    let path = run_dir.join(METRICS_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Data(format!("reading {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != "round,client_id,loss,accuracy,f1,epochs_run" {
        return Err(Error::Data(format!(
            "{}: unexpected header {header:?}",
            path.display()
        )));
    }
    for (line_no, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Data(format!(
                "{}: line {} has {} fields",
                path.display(),
                line_no + 2,
                fields.len()
            )));
        }
        let parse_f64 = |v: &str, name: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|e| Error::Data(format!("{}: bad {name} {v:?}: {e}", path.display())))
        };
        let series = if fields[1] == "agg" {
            "agg".to_string()
        } else {
            format!("client_{}", fields[1])
        };
        rows.push(MetricsRow {
            round: fields[0]
                .parse()
                .map_err(|e| Error::Data(format!("{}: bad round: {e}", path.display())))?,
            series,
            loss: parse_f64(fields[2], "loss")?,
            accuracy: parse_f64(fields[3], "accuracy")?,
            f1: parse_f64(fields[4], "f1")?,
            epochs_run: if fields[5].is_empty() {
                None
            } else {
                Some(
                    fields[5].parse().map_err(|e| {
                        Error::Data(format!("{}: bad epochs_run: {e}", path.display()))
                    })?,
                )
            },
        });
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no metric rows", path.display())));
    }
    Ok(rows)
}

/// Long-format comparison CSV over one or more completed run directories:
/// run_id,round,series,metric,value.
pub fn comparison_csv(run_dirs: &[PathBuf]) -> Result<String> {
    if run_dirs.is_empty() {
        return Err(Error::InvalidArg(
            "report needs at least one run directory".into(),
        ));
    }
    let mut out = String::from("run_id,round,series,metric,value\n");
    for dir in run_dirs {
        let run_id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        for row in read_metrics_csv(dir)? {
            for (metric, value) in [
                ("loss", row.loss),
                ("accuracy", row.accuracy),
                ("f1", row.f1),
            ] {
                writeln!(
                    out,
                    "{run_id},{},{},{metric},{value}",
                    row.round, row.series
                )
                .expect("string write");
            }
        }
    }
    Ok(out)
}

/// Human-readable final-round summary of each run.
pub fn final_round_table(run_dirs: &[PathBuf]) -> Result<String> {
    let mut out = String::new();
    writeln!(
        out,
        "{:<24} {:<10} {:>10} {:>10} {:>10}",
        "run", "series", "loss", "accuracy", "f1"
    )
    .expect("string write");
    for dir in run_dirs {
        let run_id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let rows = read_metrics_csv(dir)?;
        let last_round = rows.iter().map(|r| r.round).max().unwrap_or(0);
        for row in rows.iter().filter(|r| r.round == last_round) {
            writeln!(
                out,
                "{:<24} {:<10} {:>10.4} {:>10.4} {:>10.4}",
                run_id, row.series, row.loss, row.accuracy, row.f1
            )
            .expect("string write");
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ExperimentConfig, PartitionKind, SyntheticConfig};
    use crate::orchestrator::run_experiment;

    fn small_report() -> ExperimentReport {
        let mut config = ExperimentConfig::default();
        config.n_clients = 2;
        config.rounds = 2;
        config.data.partition = PartitionKind::Iid;
        config.data.synthetic = SyntheticConfig {
            n_samples: 120,
            n_features: 3,
            n_classes: 2,
            separation: 8.0,
        };
        config.model.hidden = 4;
        config.training.epochs_per_round = 1;
        run_experiment(&config).unwrap()
    }

    #[test]
    fn metrics_csv_shape() {
        let report = small_report();
        let csv = render_metrics_csv(&report);
        let lines: Vec<&str> = csv.lines().collect();
        // header + 2 rounds * (2 clients + agg)
        assert_eq!(lines.len(), 1 + 2 * 3);
        assert_eq!(lines[0], "round,client_id,loss,accuracy,f1,epochs_run");
        assert!(lines[3].starts_with("1,agg,"));
        assert!(lines[3].ends_with(','));
    }

    #[test]
    fn outputs_round_trip_through_report_reader() {
        let report = small_report();
        let dir = tempfile::tempdir().unwrap();
        let run_dir = dir.path().join("run_a");
        write_outputs(&report, &run_dir).unwrap();
        for file in [METRICS_FILE, SUMMARY_FILE, FLIP_LOG_FILE] {
            assert!(run_dir.join(file).exists());
        }

        let rows = read_metrics_csv(&run_dir).unwrap();
        assert_eq!(rows.len(), 6);
        // Bit-exact float round-trip through the CSV text.
        assert_eq!(rows[0].loss, report.rounds[0].clients[0].eval_loss);
        assert_eq!(rows[2].accuracy, report.rounds[0].aggregate.test_accuracy);

        let series: std::collections::BTreeSet<String> =
            rows.iter().map(|r| r.series.clone()).collect();
        assert_eq!(
            series,
            ["agg", "client_0", "client_1"]
                .iter()
                .map(|s| s.to_string())
                .collect()
        );

        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(run_dir.join(SUMMARY_FILE)).unwrap())
                .unwrap();
        assert_eq!(summary["completed"], serde_json::Value::Bool(true));
        assert_eq!(summary["rounds_run"], serde_json::json!(2));
    }

    #[test]
    fn comparison_csv_aligns_runs() {
        let report = small_report();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("clean");
        let b = dir.path().join("poisoned");
        write_outputs(&report, &a).unwrap();
        write_outputs(&report, &b).unwrap();
        let csv = comparison_csv(&[a, b]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        // header + 2 runs * 6 rows * 3 metrics
        assert_eq!(lines.len(), 1 + 2 * 6 * 3);
        assert!(lines[1].starts_with("clean,1,client_0,loss,"));
        assert!(csv.contains("poisoned,2,agg,f1,"));
        let table = final_round_table(&[dir.path().join("clean")]).unwrap();
        assert!(table.contains("clean"));
        assert!(table.contains("agg"));
    }

    #[test]
    fn missing_metrics_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_metrics_csv(dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(comparison_csv(&[]).is_err());
    }
}
