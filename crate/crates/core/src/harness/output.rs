//! CSV tables and the JSON run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use super::config::SimulationConfig;
use super::experiments::{downsample_cdf, quantile_sorted, MseCdfResult, QuantizerRow, StageTiming, ThroughputResult};
use super::validate::ValidationReport;
use crate::csi::CsiScheme;
use crate::quantizer::Levels;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error on {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io { path: path.display().to_string(), source }
}

fn num(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x}")
    }
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), OutputError> {
    let csv_err = |source| OutputError::Csv { path: path.display().to_string(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn ensure_dir(dir: &Path) -> Result<(), OutputError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// `mse_cdf.csv` (long-format CDF tables) and `mse_summary.csv`.
pub fn write_mse_cdf(result: &MseCdfResult, points: usize, dir: &Path) -> Result<Vec<PathBuf>, OutputError> {
    ensure_dir(dir)?;
    let cdf_path = dir.join("mse_cdf.csv");
    let mut rows = Vec::new();
    let mut push = |scheme: &str, levels: Levels, source: &str, sorted: &[f64]| {
        for (v, p) in downsample_cdf(sorted, points) {
            rows.push(vec![scheme.to_string(), levels.to_string(), source.to_string(), num(v), num(p)]);
        }
    };
    push(CsiScheme::Ideal.as_str(), Levels::Infinite, "analytic", &result.ideal);
    for c in &result.curves {
        push(c.scheme.as_str(), c.levels, "analytic", &c.analytic);
        push(c.scheme.as_str(), c.levels, "empirical", &c.empirical);
    }
    write_csv(&cdf_path, &["scheme", "levels", "source", "value", "cumulative_probability"], rows)?;

    let summary_path = dir.join("mse_summary.csv");
    let rows = result.curves.iter().map(|c| {
        let cmp = result.comparisons.iter().find(|x| x.levels == c.levels);
        let (worse, lower) = match (c.scheme, cmp) {
            (CsiScheme::QuantizeAndEstimate, Some(x)) => (num(x.qe_worse_fraction), num(x.qe_worse_lower_mass)),
            _ => (String::new(), String::new()),
        };
        vec![
            c.scheme.to_string(),
            c.levels.to_string(),
            c.analytic.len().to_string(),
            num(c.ks_distance),
            num(quantile_sorted(&c.analytic, 0.5)),
            num(quantile_sorted(&c.empirical, 0.5)),
            worse,
            lower,
        ]
    });
    write_csv(
        &summary_path,
        &[
            "scheme",
            "levels",
            "links",
            "ks_distance",
            "analytic_median",
            "empirical_median",
            "qe_worse_fraction",
            "qe_worse_lower_mass",
        ],
        rows,
    )?;
    Ok(vec![cdf_path, summary_path])
}

/// `throughput.csv`, one row per (receiver, levels, power).
pub fn write_throughput(result: &ThroughputResult, dir: &Path) -> Result<Vec<PathBuf>, OutputError> {
    ensure_dir(dir)?;
    let path = dir.join("throughput.csv");
    let rows = result.rows.iter().map(|r| {
        vec![
            r.receiver.to_string(),
            r.levels.to_string(),
            num(r.power_dbw),
            num(r.user_mean_throughput_bps),
            num(r.ci_half_width_bps),
            num(r.median_throughput_bps),
            num(r.mean_rate_bits_per_symbol),
            r.exact_user_mean_throughput_bps.map(num).unwrap_or_default(),
        ]
    });
    write_csv(
        &path,
        &[
            "scheme",
            "levels",
            "power_dbw",
            "user_mean_throughput_bps",
            "ci_half_width_bps",
            "median_throughput_bps",
            "mean_rate_bits_per_symbol",
            "exact_user_mean_throughput_bps",
        ],
        rows,
    )?;
    Ok(vec![path])
}

/// `quantizer_table.csv`.
pub fn write_quantizer_table(rows: &[QuantizerRow], dir: &Path) -> Result<Vec<PathBuf>, OutputError> {
    ensure_dir(dir)?;
    let path = dir.join("quantizer_table.csv");
    let rows = rows.iter().map(|r| {
        vec![
            r.levels.to_string(),
            num(r.bits),
            r.step.map(num).unwrap_or_else(|| "inf".into()),
            num(r.alpha),
            num(r.lambda),
            num(r.sdnr_linear),
            num(r.sdnr_db),
        ]
    });
    write_csv(&path, &["levels", "bits", "step", "alpha", "lambda", "sdnr_linear", "sdnr_db"], rows)?;
    Ok(vec![path])
}

/// `validation.csv` and `validation.json`.
pub fn write_validation(report: &ValidationReport, dir: &Path) -> Result<Vec<PathBuf>, OutputError> {
    ensure_dir(dir)?;
    let path = dir.join("validation.csv");
    let rows = report.checks.iter().map(|c| {
        vec![
            c.name.clone(),
            if c.passed { "pass".into() } else { "fail".into() },
            num(c.measured),
            num(c.tolerance),
            c.detail.clone(),
        ]
    });
    write_csv(&path, &["check", "verdict", "measured", "tolerance", "detail"], rows)?;
    let json = dir.join("validation.json");
    fs::write(&json, serde_json::to_string_pretty(report)?).map_err(io_err(&json))?;
    Ok(vec![path, json])
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub seed: u64,
    pub config_hash: String,
    pub config: &'a SimulationConfig,
    pub threads: usize,
    pub timings: &'a [StageTiming],
    pub outputs: Vec<String>,
    pub notes: Vec<&'static str>,
}

pub const MANIFEST_NOTES: [&str; 3] = [
    "trial counts are engineering defaults",
    "throughput columns are bits/s; rate columns are bits per symbol",
    "confidence half-widths use a normal approximation over geometry realizations",
];

impl<'a> RunManifest<'a> {
    pub fn new(command: &'a str, config: &'a SimulationConfig, timings: &'a [StageTiming], outputs: &[PathBuf]) -> Self {
        RunManifest {
            tool: "cellfree",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: config.seed,
            config_hash: config.hash_hex(),
            config,
            threads: rayon::current_num_threads(),
            timings,
            outputs: outputs
                .iter()
                .map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default())
                .collect(),
            notes: MANIFEST_NOTES.to_vec(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, OutputError> {
        ensure_dir(dir)?;
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(self)?).map_err(io_err(&path))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::experiments::run_quantizer_table;

    #[test]
    fn quantizer_table_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let rows = run_quantizer_table(&[Levels::Finite(2), Levels::Infinite]).unwrap();
        let files = write_quantizer_table(&rows, dir.path()).unwrap();
        let text = fs::read_to_string(&files[0]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "levels,bits,step,alpha,lambda,sdnr_linear,sdnr_db");
        assert!(lines[1].starts_with("2,1,1.59576"), "{}", lines[1]);
        assert_eq!(lines[2], "inf,inf,inf,1,1,inf,inf");
    }

    #[test]
    fn manifest_echoes_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SimulationConfig::default();
        let m = RunManifest::new("quantizer-table", &cfg, &[], &[dir.path().join("x.csv")]);
        let path = m.write(dir.path()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(v["config_hash"], cfg.hash_hex());
        assert_eq!(v["config"]["geometry"]["ap_count"], 200);
        assert_eq!(v["outputs"][0], "x.csv");
    }
}
