//! CSV reports and their SVG line charts.

use std::collections::BTreeMap;
use std::path::Path;

use plotters::prelude::*;

use crate::error::{PaintError, Result};

use super::jacobian::JacobianSeries;
use super::stats::DriftReport;

pub const METRICS_CSV: &str = "metrics.csv";
pub const MSE_OVER_TIME_CSV: &str = "mse_over_time.csv";
pub const SPECTRUM_CSV: &str = "spectrum.csv";
pub const JACOBIAN_CSV: &str = "jacobian_series.csv";

fn csv_err(e: csv::Error) -> PaintError {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => PaintError::Io(e),
        other => PaintError::Format(format!("csv: {other:?}")),
    }
}

/// One row of the metrics table: a model on one parameter with one probe
/// layout.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub model: String,
    pub param: f64,
    pub constellation: String,
    pub report: DriftReport,
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["model", "param", "constellation", "mae_mean", "mae_variance", "mse", "rmse_spectrum", "mse_slope"])
        .map_err(csv_err)?;
    for r in rows {
        let d = &r.report;
        w.write_record([
            r.model.clone(),
            r.param.to_string(),
            r.constellation.clone(),
            d.mae_mean.to_string(),
            d.mae_variance.to_string(),
            d.mse.to_string(),
            d.rmse_spectrum.to_string(),
            d.slope.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Long format `series,t,mse`.
pub fn write_mse_over_time(path: &Path, series: &[(String, Vec<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["series", "t", "mse"]).map_err(csv_err)?;
    for (name, mse) in series {
        for (t, m) in mse.iter().enumerate() {
            w.write_record([name.clone(), t.to_string(), m.to_string()]).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `series,k,E_true,E_pred`.
pub fn write_spectrum(path: &Path, series: &[(String, Vec<f64>, Vec<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["series", "k", "E_true", "E_pred"]).map_err(csv_err)?;
    for (name, et, ep) in series {
        if et.len() != ep.len() {
            return Err(PaintError::shape("write_spectrum", format!("{} vs {} shells", et.len(), ep.len())));
        }
        for (k, (a, b)) in et.iter().zip(ep).enumerate() {
            w.write_record([name.clone(), k.to_string(), a.to_string(), b.to_string()]).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `series,i,step_norm,log_product_norm`, `i` counting steps after the
/// perturbation.
pub fn write_jacobian_series(path: &Path, series: &[(String, JacobianSeries)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["series", "i", "step_norm", "log_product_norm"]).map_err(csv_err)?;
    for (name, s) in series {
        for (i, (a, b)) in s.step_norms.iter().zip(&s.log_product_norms).enumerate() {
            w.write_record([name.clone(), (i + 1).to_string(), a.to_string(), b.to_string()]).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// A named polyline.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Renders series as an SVG line chart. With `log_y`, points with
/// non-positive `y` are dropped and the axis shows `log10 y`.
pub fn plot_lines(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series], log_y: bool) -> Result<()> {
    let tf = |y: f64| if log_y { y.log10() } else { y };
    let series: Vec<Series> = series
        .iter()
        .map(|s| Series {
            name: s.name.clone(),
            points: s.points.iter().filter(|p| !log_y || p.1 > 0.0).map(|&(x, y)| (x, tf(y))).filter(|p| p.1.is_finite()).collect(),
        })
        .collect();
    let all = series.iter().flat_map(|s| &s.points);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return Err(PaintError::invalid(format!("nothing to plot for '{title}'")));
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let pad = if y1 > y0 { 0.05 * (y1 - y0) } else { 1.0 };
    let (y0, y1) = (y0 - pad, y1 + pad);
    let y_desc = if log_y { format!("log10 {y_label}") } else { y_label.to_string() };

    let draw = || -> std::result::Result<(), Box<dyn std::error::Error>> {
        let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
        root.fill(&WHITE)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 22))
            .margin(15)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(x0..x1, y0..y1)?;
        chart.configure_mesh().x_desc(x_label).y_desc(y_desc.as_str()).draw()?;
        for (i, s) in series.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))?
                .label(s.name.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        }
        chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
        root.present()?;
        Ok(())
    };
    draw().map_err(|e| PaintError::Format(format!("plot '{title}': {e}")))
}

fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()).map_err(csv_err))
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

/// Groups `series`-keyed rows into polylines of columns `x` and `y`.
fn grouped(header: &[String], rows: &[Vec<String>], x: &str, y: &str, suffix: &str) -> Result<Vec<Series>> {
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PaintError::Format(format!("csv lacks column '{name}'")))
    };
    let (cs, cx, cy) = (col("series")?, col(x)?, col(y)?);
    let mut map: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        let parse = |i: usize| {
            r[i].parse::<f64>().map_err(|_| PaintError::Format(format!("non-numeric '{}' in column {}", r[i], header[i])))
        };
        map.entry(format!("{}{suffix}", r[cs])).or_default().push((parse(cx)?, parse(cy)?));
    }
    Ok(map.into_iter().map(|(name, points)| Series { name, points }).collect())
}

/// Renders a report CSV (recognised by file name) to an SVG next to it;
/// returns the SVG paths written.
pub fn plot_report(csv_path: &Path) -> Result<Vec<std::path::PathBuf>> {
    let name = csv_path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let (header, rows) = read_rows(csv_path)?;
    let out = csv_path.with_extension("svg");
    match name {
        MSE_OVER_TIME_CSV => {
            plot_lines(&out, "MSE over time", "t", "MSE", &grouped(&header, &rows, "t", "mse", "")?, false)?;
        }
        SPECTRUM_CSV => {
            let mut s = grouped(&header, &rows, "k", "E_true", " (true)")?;
            s.extend(grouped(&header, &rows, "k", "E_pred", " (pred)")?);
            plot_lines(&out, "Energy spectrum", "k", "E(k)", &s, true)?;
        }
        JACOBIAN_CSV => {
            let s = grouped(&header, &rows, "i", "log_product_norm", "")?;
            plot_lines(&out, "Jacobian product norm", "steps after perturbation", "ln ||prod J||", &s, false)?;
        }
        METRICS_CSV => return Ok(Vec::new()),
        other => return Err(PaintError::invalid(format!("no chart defined for '{other}'"))),
    }
    Ok(vec![out])
}
