//! Aggregation of per-point and per-trajectory results into tables and
//! plot series.

use std::fmt::Write as _;

use locnet_core::locate::{error_cdf, fraction_within, median};
use serde::{Deserialize, Serialize};

use crate::pipeline::{LocalizationRecord, TrajectoryEval};
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Rss,
    Toa,
    Fc,
    Near,
    Losest,
    AdLosest,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Rss, Method::Toa, Method::Fc, Method::Near, Method::Losest, Method::AdLosest];

    pub fn name(self) -> &'static str {
        match self {
            Method::Rss => "rss",
            Method::Toa => "toa",
            Method::Fc => "fc",
            Method::Near => "near",
            Method::Losest => "losest",
            Method::AdLosest => "ad-losest",
        }
    }

    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown mode `{s}` (rss, toa, fc, near, losest, ad-losest)")))
    }
}

/// One scenario's mean midpoint AoA error per method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub scenario: String,
    pub points: usize,
    /// `(method, mean error in degrees)`; `None` when the method is absent.
    pub mean_error_deg: Vec<(Method, Option<f64>)>,
    /// Fraction of points kept by the gate.
    pub rho: Option<f64>,
}

impl TableRow {
    pub fn mean(&self, m: Method) -> Option<f64> {
        self.mean_error_deg.iter().find(|(k, _)| *k == m).and_then(|(_, v)| *v)
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Midpoint errors (degrees) of `method` over all points of `evals`.
pub fn aoa_errors<'a>(evals: impl IntoIterator<Item = &'a TrajectoryEval>, method: Method) -> Vec<f64> {
    evals.into_iter().flat_map(|t| t.points.iter().filter_map(move |p| p.error_deg(method))).collect()
}

pub fn row_for(scenario: &str, evals: &[&TrajectoryEval]) -> TableRow {
    let points: usize = evals.iter().map(|t| t.points.len()).sum();
    let mean_error_deg = Method::ALL
        .into_iter()
        .map(|m| {
            let available = evals.iter().any(|t| t.points.iter().any(|p| p.available(m)));
            (m, if available { mean(&aoa_errors(evals.iter().copied(), m)) } else { None })
        })
        .collect();
    let gated: Vec<bool> = evals.iter().flat_map(|t| t.points.iter().filter_map(|p| p.kept)).collect();
    let rho = (!gated.is_empty()).then(|| gated.iter().filter(|k| **k).count() as f64 / gated.len() as f64);
    TableRow { scenario: scenario.into(), points, mean_error_deg, rho }
}

/// Rows per scenario, in order of first appearance.
pub fn aoa_table(evals: &[TrajectoryEval]) -> Vec<TableRow> {
    let mut names: Vec<&str> = Vec::new();
    for t in evals {
        if !names.contains(&t.scenario.as_str()) {
            names.push(&t.scenario);
        }
    }
    names
        .into_iter()
        .map(|s| row_for(s, &evals.iter().filter(|t| t.scenario == s).collect::<Vec<_>>()))
        .collect()
}

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut out = String::from("scenario,points");
    for m in Method::ALL {
        write!(out, ",{}", m.name()).unwrap();
    }
    out.push_str(",rho\n");
    for r in rows {
        write!(out, "{},{}", r.scenario, r.points).unwrap();
        for m in Method::ALL {
            match r.mean(m) {
                Some(v) => write!(out, ",{v:.4}").unwrap(),
                None => out.push_str(",absent"),
            }
        }
        match r.rho {
            Some(v) => writeln!(out, ",{v:.4}").unwrap(),
            None => out.push_str(",absent\n"),
        }
    }
    out
}

/// `value,fraction` CSV of the empirical CDF.
pub fn cdf_csv(values: &[f64]) -> Result<String, HarnessError> {
    let cdf = error_cdf(values)?;
    let mut out = String::from("value,fraction\n");
    for (x, y) in cdf {
        writeln!(out, "{x:.6},{y:.6}").unwrap();
    }
    Ok(out)
}

/// Normalized histograms of reconstruction error, split at `label_deg` of
/// LoSEstNet midpoint error. Bins are logarithmic over the observed range.
pub fn recon_histogram_csv(records: &[(f64, f64)], label_deg: f64, bins: usize) -> Result<String, HarnessError> {
    let positive: Vec<f64> = records.iter().map(|r| r.0).filter(|e| *e > 0.0).collect();
    if positive.is_empty() || bins == 0 {
        return Err(HarnessError::Numerical("no reconstruction errors to histogram".into()));
    }
    let lo = positive.iter().copied().fold(f64::INFINITY, f64::min).log10();
    let hi = positive.iter().copied().fold(f64::NEG_INFINITY, f64::max).log10() + 1e-9;
    let width = ((hi - lo) / bins as f64).max(1e-12);
    let mut normal = vec![0usize; bins];
    let mut anomalous = vec![0usize; bins];
    for &(e, err) in records {
        let k = (((e.max(1e-300).log10() - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        if err > label_deg {
            anomalous[k] += 1;
        } else {
            normal[k] += 1;
        }
    }
    let (nn, na) = (normal.iter().sum::<usize>().max(1) as f64, anomalous.iter().sum::<usize>().max(1) as f64);
    let mut out = format!("bin_low,bin_high,error_below_{label_deg}deg,error_above_{label_deg}deg\n");
    for k in 0..bins {
        let a = 10f64.powf(lo + width * k as f64);
        let b = 10f64.powf(lo + width * (k + 1) as f64);
        writeln!(out, "{a:.6e},{b:.6e},{:.6},{:.6}", normal[k] as f64 / nn, anomalous[k] as f64 / na).unwrap();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationSummary {
    pub method: Method,
    pub trajectories: usize,
    /// Trajectories whose surviving bearings passed admission.
    pub solved: usize,
    /// Fractions over the solved trajectories, i.e. over the estimates the
    /// method actually produced.
    pub within_068m: f64,
    pub within_1m: f64,
    pub within_2m: f64,
    pub median_m: Option<f64>,
    /// Fraction within 1 m when unsolved trajectories count as misses.
    pub within_1m_all: f64,
    pub mean_rho: f64,
}

/// Errors of the trajectories `method` localized.
pub fn localization_errors(records: &[LocalizationRecord], method: Method) -> Vec<f64> {
    records.iter().filter(|r| r.method == method).filter_map(|r| r.error_m).collect()
}

pub fn summarize_localization(records: &[LocalizationRecord]) -> Vec<LocalizationSummary> {
    Method::ALL
        .into_iter()
        .filter(|m| records.iter().any(|r| r.method == *m))
        .map(|m| {
            let rows: Vec<&LocalizationRecord> = records.iter().filter(|r| r.method == m).collect();
            let errors = localization_errors(records, m);
            let all: Vec<f64> = rows.iter().map(|r| r.error_m.unwrap_or(f64::INFINITY)).collect();
            LocalizationSummary {
                method: m,
                trajectories: rows.len(),
                solved: errors.len(),
                within_068m: fraction_within(&errors, 0.68),
                within_1m: fraction_within(&errors, 1.0),
                within_2m: fraction_within(&errors, 2.0),
                median_m: median(&errors),
                within_1m_all: fraction_within(&all, 1.0),
                mean_rho: rows.iter().map(|r| r.rho).sum::<f64>() / rows.len().max(1) as f64,
            }
        })
        .collect()
}

pub fn localization_csv(summary: &[LocalizationSummary]) -> String {
    let mut out =
        String::from("method,trajectories,solved,within_0.68m,within_1m,within_2m,median_m,within_1m_all,mean_rho\n");
    for s in summary {
        let med = s.median_m.map_or("absent".to_string(), |v| format!("{v:.4}"));
        writeln!(
            out,
            "{},{},{},{:.4},{:.4},{:.4},{med},{:.4},{:.4}",
            s.method.name(),
            s.trajectories,
            s.solved,
            s.within_068m,
            s.within_1m,
            s.within_2m,
            s.within_1m_all,
            s.mean_rho
        )
        .unwrap();
    }
    out
}
