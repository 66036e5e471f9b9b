//! Plot-ready CSV tables built from result records.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::ValueEnum;
use frontlab_core::scaling::{map_observable, Direction, Quantity};

use crate::error::{CliError, CliResult};
use crate::records::{read_results, ResultRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    /// Speed estimates against sigma.
    SpeedVsSigma,
    /// Mean interface mass against time.
    MassVsT,
    /// Scaling-limit variances against the block length `a`.
    ScalingSlopes,
    /// Recorded profiles `u(x)`.
    ProfileSnapshots,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FrameTarget {
    Original,
    Rescaled,
}

impl FrameTarget {
    fn name(self) -> &'static str {
        match self {
            FrameTarget::Original => "original",
            FrameTarget::Rescaled => "rescaled",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub x: f64,
    pub y: f64,
    pub stderr: Option<f64>,
    pub series: String,
}

pub const CSV_HEADER: &str = "x,y,stderr,series";

fn selected(kind: PlotKind, r: &ResultRecord) -> bool {
    match kind {
        PlotKind::SpeedVsSigma => r.estimator.starts_with("speed_") || r.estimator == "sigma2_v",
        PlotKind::MassVsT => r.estimator == "mass_at_t",
        PlotKind::ScalingSlopes => r.estimator == "scaling_point",
        PlotKind::ProfileSnapshots => r.estimator == "profile",
    }
}

/// Maps `value` of quantity `q` from `r`'s frame into `target`.
fn map_value(r: &ResultRecord, target: Option<FrameTarget>, q: Option<Quantity>, value: f64) -> CliResult<f64> {
    let (Some(target), Some(q)) = (target, q) else {
        return Ok(value);
    };
    if r.frame == "none" || r.frame == target.name() {
        return Ok(value);
    }
    let sigma = r
        .sigma
        .ok_or_else(|| CliError::Config(format!("record {} has no sigma to map with", r.estimator)))?;
    let dir = match target {
        FrameTarget::Original => Direction::ToOriginal,
        FrameTarget::Rescaled => Direction::ToRescaled,
    };
    Ok(map_observable(sigma, q, value, dir)?)
}

fn rows_of(kind: PlotKind, r: &ResultRecord, target: Option<FrameTarget>) -> CliResult<Vec<Row>> {
    let frame_tag: &str = match target {
        Some(t) => t.name(),
        None => &r.frame,
    };
    if kind == PlotKind::ProfileSnapshots {
        let points = r.extra.get("points").and_then(|p| p.as_array()).cloned().unwrap_or_default();
        let replica = r.extra.get("replica").and_then(|v| v.as_u64()).unwrap_or(0);
        let t = map_value(r, target, Some(Quantity::Time), r.value)?;
        let series = format!("t={t} replica={replica}");
        return points
            .iter()
            .map(|p| {
                let x = p.get(0).and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
                let y = p.get(1).and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
                Ok(Row { x: map_value(r, target, Some(Quantity::Space), x)?, y, stderr: None, series: series.clone() })
            })
            .collect();
    }
    let Some(x) = r.x else {
        return Ok(Vec::new());
    };
    let series = match kind {
        PlotKind::ScalingSlopes => {
            r.extra.get("quantity").and_then(|v| v.as_str()).unwrap_or("value").to_string()
        }
        _ => format!("{} ({frame_tag})", r.estimator),
    };
    let x = map_value(r, target, r.x_quantity, x)?;
    let y = map_value(r, target, r.value_quantity, r.value)?;
    let stderr = match r.stderr {
        Some(s) => Some(map_value(r, target, r.value_quantity, s)?.abs()),
        None => None,
    };
    Ok(vec![Row { x, y, stderr, series }])
}

/// Collects the rows of `kind` from result files or directories.
///
/// Records from different frames are only combined when `map_to` names a
/// common frame. `series`, when non-empty, keeps only the named series.
pub fn plot_rows(
    results: &[PathBuf],
    kind: PlotKind,
    map_to: Option<FrameTarget>,
    series: &[String],
) -> CliResult<Vec<Row>> {
    let mut records = Vec::new();
    for path in results {
        records.extend(read_results(path)?.into_iter().filter(|r| selected(kind, r)));
    }
    let frames: BTreeSet<&str> = records.iter().map(|r| r.frame.as_str()).filter(|f| *f != "none").collect();
    if frames.len() > 1 && map_to.is_none() {
        return Err(CliError::Config(format!(
            "records come from frames {frames:?}; pass --map-to to combine them"
        )));
    }
    let mut rows = Vec::new();
    for r in &records {
        rows.extend(rows_of(kind, r, map_to)?);
    }
    if !series.is_empty() {
        rows.retain(|row| series.contains(&row.series));
    }
    if rows.is_empty() {
        return Err(CliError::Estimation(format!("no {kind:?} data in the given results")));
    }
    rows.sort_by(|a, b| a.series.cmp(&b.series).then(a.x.total_cmp(&b.x)));
    Ok(rows)
}

pub fn to_csv(rows: &[Row]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let se = r.stderr.map(|s| s.to_string()).unwrap_or_default();
        let series = if r.series.contains([',', '"']) {
            format!("\"{}\"", r.series.replace('"', "\"\""))
        } else {
            r.series.clone()
        };
        writeln!(out, "{},{},{},{}", r.x, r.y, se, series).expect("string write");
    }
    out
}
