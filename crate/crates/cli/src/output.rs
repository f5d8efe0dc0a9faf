//! Output files and the terminal summary.
//!
//! A run writes `report.json` (the full record), `trace.csv` (the first
//! seed's federated trace), and `metrics.csv` (per seed/method/client
//! scores). Sweeps add `sweep.csv`. Everything except `run_meta.json` is a
//! pure function of the config, so re-runs produce byte-identical files;
//! wall-clock time lives only in `run_meta.json`.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use fedcate_core::federation::write_trace_csv_path;

use crate::experiment::{ExperimentOutput, ExperimentReport, SweepRow};
use crate::CliError;

/// Invocation details that may differ between byte-identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub subcommand: String,
    /// Thread cap from `--jobs`, if given.
    pub jobs: Option<usize>,
    pub wall_clock_seconds: f64,
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .with_context(|| format!("serializing {}", path.display()))?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// One value cell: full-precision when present, empty when the metric was
/// not measurable.
fn cell(value: Option<f64>) -> String {
    value.map(|v| format!("{v:.17e}")).unwrap_or_default()
}

fn write_metrics_csv(report: &ExperimentReport, path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["seed", "method", "client", "pehe", "ate_error"])
        .context("writing metrics.csv header")?;
    for seed in &report.seeds {
        for (method, arm) in [("federated", &seed.federated), ("local_only", &seed.local_only)] {
            for (i, &client) in arm.client_ids.iter().enumerate() {
                w.write_record([
                    seed.seed.to_string(),
                    method.to_string(),
                    client.to_string(),
                    cell(arm.pehe_per_client.as_ref().map(|v| v[i])),
                    cell(arm.ate_error_per_client.as_ref().map(|v| v[i])),
                ])
                .context("writing metrics.csv row")?;
            }
        }
    }
    w.flush().context("flushing metrics.csv")?;
    Ok(())
}

/// Write a finished experiment into `dir`: `report.json`, `trace.csv`, and
/// `metrics.csv`. Creates the directory if needed.
pub fn emit_report(out: &ExperimentOutput, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&out.report, &dir.join("report.json"))?;
    write_trace_csv_path(&out.trace, &dir.join("trace.csv")).context("writing trace.csv")?;
    write_metrics_csv(&out.report, &dir.join("metrics.csv"))?;
    Ok(())
}

/// Write `sweep.csv` into `dir`.
pub fn write_sweep_csv(rows: &[SweepRow], dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["alpha", "method", "pehe_mean", "pehe_std", "ate_mean", "ate_std"])
        .context("writing sweep.csv header")?;
    for row in rows {
        w.write_record([
            format!("{}", row.alpha),
            row.method.clone(),
            format!("{:.17e}", row.pehe_mean),
            format!("{:.17e}", row.pehe_std),
            format!("{:.17e}", row.ate_mean),
            format!("{:.17e}", row.ate_std),
        ])
        .context("writing sweep.csv row")?;
    }
    w.flush().context("flushing sweep.csv")?;
    Ok(())
}

/// Write `run_meta.json` into `dir`.
pub fn write_run_meta(meta: &RunMeta, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(meta, &dir.join("run_meta.json"))
}

/// Read back an emitted `report.json`.
pub fn load_report(dir: &Path) -> Result<ExperimentReport, CliError> {
    let path = dir.join("report.json");
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let report =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(report)
}

fn arm_line(name: &str, agg: &crate::experiment::MethodAggregate) -> String {
    match (agg.pehe_mean, agg.pehe_std, agg.ate_mean, agg.ate_std) {
        (Some(pm), Some(ps), Some(am), Some(as_)) => {
            format!("{name:<11} PEHE {pm:.6} +/- {ps:.6} | ATE error {am:.6} +/- {as_:.6}")
        }
        _ => format!("{name:<11} effect metrics n/a (no ground-truth effects)"),
    }
}

fn bound_line(arms: [&crate::experiment::MethodAggregate; 2]) -> String {
    let t1_sat: usize = arms.iter().map(|a| a.theorem1_satisfied).sum();
    let t1_tot: usize = arms.iter().map(|a| a.theorem1_total).sum();
    let t2_sat: usize = arms.iter().map(|a| a.theorem2_satisfied).sum();
    let t2_tot: usize = arms.iter().map(|a| a.theorem2_total).sum();
    let t2_ne: usize = arms.iter().map(|a| a.theorem2_not_estimable).sum();
    format!(
        "bounds      first {t1_sat}/{t1_tot} satisfied | second {t2_sat}/{t2_tot} satisfied ({t2_ne} not estimable)"
    )
}

/// Human-readable run summary for the terminal. Everything here also lives
/// in `report.json`; this is just the short form.
pub fn render_summary(report: &ExperimentReport) -> String {
    let mut s = String::new();
    let clients: usize = report
        .seeds
        .first()
        .map(|seed| seed.federated.client_ids.len())
        .unwrap_or(0);
    let _ = writeln!(
        s,
        "seeds {} | clients {clients} | rounds {} x {} local epoch(s)",
        report.seeds.len(),
        report.config.training.rounds,
        report.config.training.local_epochs,
    );
    let _ = writeln!(s, "{}", arm_line("federated", &report.aggregate.federated));
    let _ = writeln!(s, "{}", arm_line("local_only", &report.aggregate.local_only));
    if let Some(imp) = report.aggregate.pehe_improvement {
        let _ = writeln!(s, "PEHE improvement over local_only: {:.2}%", imp * 100.0);
    }
    let _ = writeln!(
        s,
        "{}",
        bound_line([&report.aggregate.federated, &report.aggregate.local_only])
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use crate::experiment::run_experiment;

    fn smoke_output() -> ExperimentOutput {
        let config: ExperimentConfig = toml::from_str(
            "mode = \"synthetic\"\nseeds = [5]\n\
             [data]\nclients = 2\nsamples_per_client = 40\nshared_dim = 3\nprivate_dim = 2\n\
             [model]\nz_dim = 2\nbranch_widths = [3, 3]\nencoder_width = 3\n\
             [training]\nrounds = 2\nbatch_size = 16\n",
        )
        .unwrap();
        config.validate().unwrap();
        run_experiment(&config).unwrap()
    }

    #[test]
    fn emit_report_writes_all_files_and_roundtrips() {
        let out = smoke_output();
        let dir = tempfile::tempdir().unwrap();
        emit_report(&out, dir.path()).unwrap();

        let loaded = load_report(dir.path()).unwrap();
        assert_eq!(loaded, out.report);

        let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
        // Header plus rounds x clients rows.
        assert_eq!(trace.lines().count(), 1 + 2 * 2);

        let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        let lines: Vec<&str> = metrics.lines().collect();
        assert_eq!(lines[0], "seed,method,client,pehe,ate_error");
        // 1 seed x 2 methods x 2 clients.
        assert_eq!(lines.len(), 1 + 4);
        assert!(lines[1].starts_with("5,federated,0,"));
        assert!(lines[3].starts_with("5,local_only,0,"));
    }

    #[test]
    fn missing_metrics_leave_empty_cells() {
        let mut out = smoke_output();
        for seed in &mut out.report.seeds {
            seed.federated.pehe_per_client = None;
            seed.federated.ate_error_per_client = None;
        }
        let dir = tempfile::tempdir().unwrap();
        emit_report(&out, dir.path()).unwrap();
        let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        let lines: Vec<&str> = metrics.lines().collect();
        assert_eq!(lines[1], "5,federated,0,,");
        // The untouched arm still carries its numbers.
        let fields: Vec<&str> = lines[3].split(',').collect();
        assert_eq!(fields[1], "local_only");
        assert!(!fields[3].is_empty());
    }

    #[test]
    fn metrics_csv_cells_roundtrip_exactly() {
        let out = smoke_output();
        let dir = tempfile::tempdir().unwrap();
        emit_report(&out, dir.path()).unwrap();
        let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        let first_pehe: f64 = metrics.lines().nth(1).unwrap().split(',').nth(3).unwrap().parse().unwrap();
        assert_eq!(first_pehe, out.report.seeds[0].federated.pehe_per_client.as_ref().unwrap()[0]);
    }

    #[test]
    fn sweep_csv_carries_exact_alphas() {
        let rows = vec![
            SweepRow {
                alpha: 0.25,
                method: "federated".into(),
                pehe_mean: 0.5,
                pehe_std: 0.1,
                ate_mean: 0.2,
                ate_std: 0.05,
            },
            SweepRow {
                alpha: 0.25,
                method: "local_only".into(),
                pehe_mean: 0.6,
                pehe_std: 0.2,
                ate_mean: 0.3,
                ate_std: 0.06,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        write_sweep_csv(&rows, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "alpha,method,pehe_mean,pehe_std,ate_mean,ate_std");
        assert!(lines[1].starts_with("0.25,federated,"));
        assert!(lines[2].starts_with("0.25,local_only,"));
    }

    #[test]
    fn run_meta_holds_the_volatile_bits() {
        let dir = tempfile::tempdir().unwrap();
        let meta = RunMeta {
            subcommand: "train".into(),
            jobs: Some(8),
            wall_clock_seconds: 1.25,
        };
        write_run_meta(&meta, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("run_meta.json")).unwrap();
        let back: RunMeta = serde_json::from_str(&text).unwrap();
        assert_eq!(back, meta);
    }

    #[test]
    fn summary_mentions_both_methods_and_improvement() {
        let out = smoke_output();
        let s = render_summary(&out.report);
        assert!(s.contains("federated"), "{s}");
        assert!(s.contains("local_only"), "{s}");
        assert!(s.contains("PEHE"), "{s}");
        assert!(s.contains("bounds"), "{s}");
    }

    #[test]
    fn load_report_names_the_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        match load_report(dir.path()) {
            Err(CliError::Runtime(e)) => assert!(format!("{e:#}").contains("report.json")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
