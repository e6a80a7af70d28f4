//! CSV and text rendering of analysis and simulation reports.
//!
//! Floats are written with 17 significant digits so that every CSV parses
//! back to the exact in-memory values and identical runs give identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use netdr::analysis::AnalysisReport;
use netdr::estimators::{Estimand, EstimatorKind, Target};
use netdr::simulate::{SummaryRow, TruthTable};

use crate::error::CliError;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

#[cfg(test)]
fn parse_f64(raw: &str) -> Result<f64, CliError> {
    raw.parse().map_err(|_| CliError::Data(format!("not a number: `{raw}`")))
}

#[cfg(test)]
fn parse_opt(raw: &str) -> Result<Option<f64>, CliError> {
    if raw.is_empty() {
        Ok(None)
    } else {
        parse_f64(raw).map(Some)
    }
}

#[cfg(test)]
fn estimand_from(name: &str, alpha: f64, alpha_prime: Option<f64>) -> Result<Estimand, CliError> {
    let ap = || alpha_prime.ok_or_else(|| CliError::Data(format!("{name} needs alpha_prime")));
    Ok(match name {
        "DE" => Estimand::De { alpha },
        "IE" => Estimand::Ie { alpha, alpha_prime: ap()? },
        "TE" => Estimand::Te { alpha, alpha_prime: ap()? },
        "OE" => Estimand::Oe { alpha, alpha_prime: ap()? },
        other => return Err(CliError::Data(format!("unknown estimand `{other}`"))),
    })
}

/// One line of `estimates.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub estimator: EstimatorKind,
    pub estimand: Estimand,
    pub point: f64,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub diagnostics: String,
}

pub const ESTIMATE_HEADER: [&str; 9] =
    ["estimator", "estimand", "alpha", "alpha_prime", "point", "se", "ci_lo", "ci_hi", "diagnostics"];

impl EstimateRow {
    fn record(&self) -> Vec<String> {
        vec![
            self.estimator.label().to_string(),
            self.estimand.name().to_string(),
            fmt_f64(self.estimand.alpha()),
            fmt_opt(self.estimand.alpha_prime()),
            fmt_f64(self.point),
            fmt_opt(self.se),
            fmt_opt(self.ci.map(|c| c.0)),
            fmt_opt(self.ci.map(|c| c.1)),
            self.diagnostics.clone(),
        ]
    }

    #[cfg(test)]
    fn parse(rec: &csv::StringRecord) -> Result<Self, CliError> {
        let estimand = estimand_from(&rec[1], parse_f64(&rec[2])?, parse_opt(&rec[3])?)?;
        let ci = match (parse_opt(&rec[6])?, parse_opt(&rec[7])?) {
            (Some(lo), Some(hi)) => Some((lo, hi)),
            _ => None,
        };
        Ok(Self {
            estimator: rec[0].parse()?,
            estimand,
            point: parse_f64(&rec[4])?,
            se: parse_opt(&rec[5])?,
            ci,
            diagnostics: rec[8].to_string(),
        })
    }
}

pub fn estimate_rows(report: &AnalysisReport) -> Vec<EstimateRow> {
    let mut rows = Vec::new();
    for (_, res) in &report.estimators {
        let Ok(rep) = res else { continue };
        let diagnostics = rep.diagnostics.summary();
        for e in &rep.effects {
            rows.push(EstimateRow {
                estimator: rep.kind,
                estimand: e.estimand,
                point: e.point,
                se: e.se,
                ci: e.ci,
                diagnostics: diagnostics.clone(),
            });
        }
    }
    rows
}

fn write_csv(path: &Path, header: &[&str], records: impl Iterator<Item = Vec<String>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in records {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_estimates(path: &Path, rows: &[EstimateRow]) -> Result<(), CliError> {
    write_csv(path, &ESTIMATE_HEADER, rows.iter().map(EstimateRow::record))
}

#[cfg(test)]
pub fn read_estimates(path: &Path) -> Result<Vec<EstimateRow>, CliError> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.records().map(|r| EstimateRow::parse(&r?)).collect()
}

pub const SUMMARY_HEADER: [&str; 15] = [
    "scenario", "estimator", "estimand", "alpha", "alpha_prime", "truth", "mean", "bias", "mse", "ese", "ase",
    "coverage", "used", "excluded", "causes",
];

fn summary_record(r: &SummaryRow) -> Vec<String> {
    let causes: Vec<String> = r.causes.iter().map(|(k, v)| format!("{k}:{v}")).collect();
    vec![
        r.scenario.clone(),
        r.estimator.label().to_string(),
        r.estimand.name().to_string(),
        fmt_f64(r.estimand.alpha()),
        fmt_opt(r.estimand.alpha_prime()),
        fmt_f64(r.truth),
        fmt_f64(r.mean),
        fmt_f64(r.bias),
        fmt_f64(r.mse),
        fmt_f64(r.ese),
        fmt_opt(r.ase),
        fmt_opt(r.coverage),
        r.used.to_string(),
        r.excluded.to_string(),
        causes.join(";"),
    ]
}

#[cfg(test)]
fn parse_summary(rec: &csv::StringRecord) -> Result<SummaryRow, CliError> {
    let count = |raw: &str| raw.parse::<usize>().map_err(|_| CliError::Data(format!("bad count `{raw}`")));
    let mut causes = std::collections::BTreeMap::new();
    for part in rec[14].split(';').filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once(':').ok_or_else(|| CliError::Data(format!("bad cause `{part}`")))?;
        causes.insert(k.to_string(), count(v)?);
    }
    Ok(SummaryRow {
        scenario: rec[0].to_string(),
        estimator: rec[1].parse()?,
        estimand: estimand_from(&rec[2], parse_f64(&rec[3])?, parse_opt(&rec[4])?)?,
        truth: parse_f64(&rec[5])?,
        mean: parse_f64(&rec[6])?,
        bias: parse_f64(&rec[7])?,
        mse: parse_f64(&rec[8])?,
        ese: parse_f64(&rec[9])?,
        ase: parse_opt(&rec[10])?,
        coverage: parse_opt(&rec[11])?,
        used: count(&rec[12])?,
        excluded: count(&rec[13])?,
        causes,
    })
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), CliError> {
    write_csv(path, &SUMMARY_HEADER, rows.iter().map(summary_record))
}

#[cfg(test)]
pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.records().map(|r| parse_summary(&r?)).collect()
}

/// Estimands of every ordered allocation pair drawn from `alphas`.
pub fn truth_grid(alphas: &[f64]) -> Vec<Estimand> {
    let mut out = Vec::new();
    for &alpha in alphas {
        for &alpha_prime in alphas {
            out.push(Estimand::De { alpha });
            out.push(Estimand::Ie { alpha, alpha_prime });
            out.push(Estimand::Te { alpha, alpha_prime });
            out.push(Estimand::Oe { alpha, alpha_prime });
        }
    }
    out
}

pub const TRUTH_HEADER: [&str; 9] = ["alpha", "alpha_prime", "mu0_alpha", "mu1_alpha", "mu0_alpha_prime", "de", "ie", "te", "oe"];

/// Wide truth table: one row per `(alpha, alpha')` pair.
pub fn write_truth(path: &Path, truth: &TruthTable, alphas: &[f64]) -> Result<(), CliError> {
    let mean = |t: Target| truth.means.iter().find(|(u, _)| *u == t).map(|(_, v)| *v);
    let get = |e: Estimand| truth.effect(&e).ok_or_else(|| CliError::Numerical(format!("no truth for {}", e.label())));
    let mut records = Vec::new();
    for &alpha in alphas {
        for &alpha_prime in alphas {
            records.push(vec![
                fmt_f64(alpha),
                fmt_f64(alpha_prime),
                fmt_opt(mean(Target::Arm { z: 0, alpha })),
                fmt_opt(mean(Target::Arm { z: 1, alpha })),
                fmt_opt(mean(Target::Arm { z: 0, alpha: alpha_prime })),
                fmt_f64(get(Estimand::De { alpha })?),
                fmt_f64(get(Estimand::Ie { alpha, alpha_prime })?),
                fmt_f64(get(Estimand::Te { alpha, alpha_prime })?),
                fmt_f64(get(Estimand::Oe { alpha, alpha_prime })?),
            ]);
        }
    }
    write_csv(path, &TRUTH_HEADER, records.into_iter())
}

/// Estimands down the side, one `point (lo, hi)` column per estimator.
pub fn estimates_table(rows: &[EstimateRow], estimators: &[EstimatorKind]) -> String {
    let mut estimands: Vec<Estimand> = Vec::new();
    for r in rows {
        if !estimands.contains(&r.estimand) {
            estimands.push(r.estimand);
        }
    }
    let mut out = format!("{:<14}", "Estimand");
    for k in estimators {
        let _ = write!(out, " {:>28}", k.label());
    }
    out.push('\n');
    for e in &estimands {
        let _ = write!(out, "{:<14}", e.label());
        for k in estimators {
            let cell = rows.iter().find(|r| r.estimator == *k && r.estimand == *e).map_or("failed".to_string(), |r| match r.ci {
                Some((lo, hi)) => format!("{:.3} ({:.3}, {:.3})", r.point, lo, hi),
                None => format!("{:.3} (no CI)", r.point),
            });
            let _ = write!(out, " {cell:>28}");
        }
        out.push('\n');
    }
    out
}

/// Bias, MSE and coverage per scenario and estimand.
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut out = format!(
        "{:<14} {:<14} {:>8} {:<7} {:>9} {:>9} {:>9} {:>9} {:>8} {:>5} {:>5}\n",
        "Scenario", "Estimand", "Truth", "Method", "Bias", "MSE", "ESE", "ASE", "Cover", "Used", "Excl"
    );
    let na = |v: Option<f64>, p: usize| v.map_or("NA".to_string(), |x| format!("{x:.p$}"));
    for r in rows {
        let _ = writeln!(
            out,
            "{:<14} {:<14} {:>8.3} {:<7} {:>9.4} {:>9.4} {:>9.4} {:>9} {:>8} {:>5} {:>5}",
            r.scenario,
            r.estimand.label(),
            r.truth,
            r.estimator.label(),
            r.bias,
            r.mse,
            r.ese,
            na(r.ase, 4),
            na(r.coverage, 3),
            r.used,
            r.excluded
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_exactly() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0] {
            assert_eq!(parse_f64(&fmt_f64(v)).unwrap(), v);
        }
        assert_eq!(fmt_f64(2.5), "2.5000000000000000e0");
    }

    #[test]
    fn estimate_csv_round_trip() {
        let rows = vec![
            EstimateRow {
                estimator: EstimatorKind::DrBc,
                estimand: Estimand::Ie { alpha: 0.3, alpha_prime: 0.4 },
                point: 0.123456789,
                se: Some(0.05),
                ci: Some((0.02, 0.22)),
                diagnostics: "floored=0;cond=1.0e3".into(),
            },
            EstimateRow {
                estimator: EstimatorKind::Ipw,
                estimand: Estimand::De { alpha: 0.7 },
                point: -1.0 / 7.0,
                se: None,
                ci: None,
                diagnostics: "warn=variance failed: x, y".into(),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        write_estimates(&path, &rows).unwrap();
        assert_eq!(read_estimates(&path).unwrap(), rows);
    }

    #[test]
    fn summary_csv_round_trip() {
        let rows = vec![SummaryRow {
            scenario: "so-a".into(),
            estimator: EstimatorKind::IpWls,
            estimand: Estimand::Te { alpha: 0.8, alpha_prime: 0.2 },
            truth: 2.9,
            mean: 2.95,
            bias: 0.05,
            mse: 0.0123,
            ese: 0.1,
            ase: Some(0.09),
            coverage: None,
            used: 18,
            excluded: 2,
            causes: [("ill_conditioned".to_string(), 1), ("rank".to_string(), 1)].into_iter().collect(),
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_summary(&path, &rows).unwrap();
        assert_eq!(read_summary(&path).unwrap(), rows);
    }
}
