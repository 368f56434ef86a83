//! CSV and manifest writers.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::experiment::ExperimentResult;
use crate::seeding::RNG_NAME;

pub const LEARNING_CURVE_CSV: &str = "learning_curve.csv";
pub const SIGNAL_STATS_CSV: &str = "signal_stats.csv";
pub const HISTOGRAMS_CSV: &str = "histograms.csv";
pub const OBJECTIVES_CSV: &str = "objectives.csv";
pub const MANIFEST_JSON: &str = "manifest.json";

/// Format like C's `%.9g`: nine significant digits, trailing zeros removed.
pub fn fmt_sig9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = usize::try_from(8 - exp).unwrap_or(0);
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Io { path: path.display().to_string(), source: std::io::Error::other(format!("{other:?}")) },
    }
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write the four result tables for an experiment into `dir`.
pub fn write_tables(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let env = result.config.environment.as_str();
    let f = fmt_sig9;
    let mut learning = Vec::new();
    let mut signals = Vec::new();
    let mut histograms = Vec::new();
    let mut objectives = Vec::new();
    for g in &result.groups {
        let c = f(g.baseline_c);
        let agg = &g.aggregate;
        for e in &agg.per_episode {
            let ep = e.episode.to_string();
            learning.push(vec![
                env.into(), c.clone(), ep.clone(),
                f(e.mean_return), f(e.std_return), f(e.stderr_return), e.n.to_string(),
            ]);
            signals.push(vec![
                env.into(), c.clone(), ep.clone(),
                f(e.mean_delta), f(e.stderr_delta), f(e.mean_l), f(e.stderr_l),
            ]);
            for (metric, labels, props) in
                [("delta", &agg.delta_labels, &e.delta_proportions), ("L", &agg.l_labels, &e.l_proportions)]
            {
                for (label, p) in labels.iter().zip(props.iter()) {
                    histograms.push(vec![env.into(), c.clone(), ep.clone(), metric.into(), label.clone(), f(*p)]);
                }
            }
        }
        for o in &agg.objectives {
            objectives.push(vec![env.into(), c.clone(), o.kind.to_string(), f(o.gamma_q), f(o.estimate), f(o.std_err)]);
        }
        for (spec, est) in &g.entropy {
            objectives.push(vec![env.into(), c.clone(), spec.kind.to_string(), f(spec.gamma_q), f(est.estimate), String::new()]);
        }
        for w in &agg.windows {
            objectives.push(vec![
                env.into(), c.clone(), format!("mean_return[{},{})", w.from, w.to), f(1.0), f(w.estimate), f(w.std_err),
            ]);
        }
    }
    let tables: [(&str, &[&str], Vec<Vec<String>>); 4] = [
        (LEARNING_CURVE_CSV, &["env", "baseline_c", "episode", "mean_return", "std_return", "stderr_return", "n_trials"], learning),
        (SIGNAL_STATS_CSV, &["env", "baseline_c", "episode", "mean_delta", "stderr_delta", "mean_L", "stderr_L"], signals),
        (HISTOGRAMS_CSV, &["env", "baseline_c", "episode", "metric", "bin_label", "proportion"], histograms),
        (OBJECTIVES_CSV, &["env", "baseline_c", "objective_kind", "gamma_q", "estimate", "stderr"], objectives),
    ];
    let mut written = Vec::new();
    for (name, header, rows) in tables {
        let path = dir.join(name);
        write_csv(&path, header, rows)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Serialize)]
struct Manifest<'a> {
    package: &'static str,
    version: &'static str,
    rng: &'static str,
    master_seed: u64,
    threads: usize,
    wall_seconds: f64,
    finished_unix_seconds: u64,
    files: Vec<String>,
    warnings: Vec<String>,
    config: &'a ExperimentConfig,
}

/// Write the tables plus `manifest.json`; returns every file written.
pub fn write_outputs(result: &ExperimentResult, dir: &Path, extra_files: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = write_tables(result, dir)?;
    files.extend_from_slice(extra_files);
    let warnings = result
        .groups
        .iter()
        .flat_map(|g| g.entropy.iter().filter_map(|(_, e)| e.warning.clone()))
        .collect();
    let manifest = Manifest {
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        rng: RNG_NAME,
        master_seed: result.config.master_seed,
        threads: result.threads,
        wall_seconds: result.wall_seconds,
        finished_unix_seconds: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        files: files.iter().map(|p| p.display().to_string()).collect(),
        warnings,
        config: &result.config,
    };
    let path = dir.join(MANIFEST_JSON);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    files.push(path);
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::fmt_sig9;

    #[test]
    fn matches_printf_g() {
        let cases = [
            (0.0, "0"),
            (-1.0, "-1"),
            (-14.53, "-14.53"),
            (1.0 / 3.0, "0.333333333"),
            (123456789.0, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (1e-6, "1e-06"),
            (0.0001, "0.0001"),
            (2.5e-5, "2.5e-05"),
            (99999999.95, "100000000"),
            (f64::INFINITY, "inf"),
        ];
        for (x, want) in cases {
            assert_eq!(fmt_sig9(x), want, "{x}");
        }
    }
}
