//! Figures as CSV data plus SVG renderings: training curves, one week of
//! region-averaged demand with residuals, per-region maps and the
//! source-quality heatmap.

use std::path::Path;

use plotters::prelude::*;
use sfmgtl_core::datasets::HourStamp;
use sfmgtl_core::training::EpochLog;
use sfmgtl_core::Mat;

use crate::error::{Error, IoContext, Result};
use crate::formats::format_hour;
use crate::runner::QualityCell;

const SIZE: (u32, u32) = (900, 520);
const WEEK: usize = 7 * 24;

fn draw_err<E: std::fmt::Debug>(path: &Path) -> impl Fn(E) -> Error + '_ {
    move |e| Error::Runtime(format!("{}: {e:?}", path.display()))
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let file = std::fs::File::create(path).at(path)?;
    let mut w = csv::Writer::from_writer(file);
    let err = |e: csv::Error| Error::Runtime(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush().at(path)
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn palette(i: usize) -> RGBColor {
    const COLORS: [RGBColor; 6] = [
        RGBColor(31, 119, 180),
        RGBColor(214, 39, 40),
        RGBColor(44, 160, 44),
        RGBColor(255, 127, 14),
        RGBColor(148, 103, 189),
        RGBColor(127, 127, 127),
    ];
    COLORS[i % COLORS.len()]
}

/// Line chart of named series over a shared x axis.
fn line_chart(path: &Path, title: &str, x_desc: &str, xs: &[f64], series: &[(&str, Vec<f64>)]) -> Result<()> {
    let err = draw_err(path);
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let (x0, x1) = bounds(xs.iter().copied());
    let (y0, y1) = bounds(series.iter().flat_map(|(_, v)| v.iter().copied()));
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(55)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(&err)?;
    chart.configure_mesh().x_desc(x_desc).draw().map_err(&err)?;
    for (i, (name, ys)) in series.iter().enumerate() {
        let color = palette(i);
        chart
            .draw_series(LineSeries::new(xs.iter().zip(ys).map(|(x, y)| (*x, *y)), color.stroke_width(2)))
            .map_err(&err)?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(&err)?;
    root.present().map_err(&err)?;
    Ok(())
}

fn heat_color(t: f64) -> HSLColor {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    HSLColor(0.66 * (1.0 - t), 0.75, 0.5)
}

/// Side-by-side heatmap panels over a `rows×cols` grid of values.
fn heatmaps(path: &Path, title: &str, panels: &[(&str, &[Vec<f64>])], axis: (&str, &str)) -> Result<()> {
    let err = draw_err(path);
    let root = SVGBackend::new(path, (360 * panels.len().max(1) as u32, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let root = root.titled(title, ("sans-serif", 20)).map_err(&err)?;
    for (area, (name, grid)) in root.split_evenly((1, panels.len().max(1))).iter().zip(panels) {
        let rows = grid.len();
        let cols = grid.first().map_or(0, Vec::len);
        let (lo, hi) = bounds(grid.iter().flatten().copied());
        let mut chart = ChartBuilder::on(area)
            .caption(format!("{name} [{lo:.2}, {hi:.2}]"), ("sans-serif", 14))
            .margin(8)
            .x_label_area_size(30)
            .y_label_area_size(40)
            .build_cartesian_2d(0f64..cols as f64, 0f64..rows as f64)
            .map_err(&err)?;
        chart.configure_mesh().disable_mesh().x_desc(axis.0).y_desc(axis.1).draw().map_err(&err)?;
        chart
            .draw_series(grid.iter().enumerate().flat_map(|(r, row)| {
                row.iter().enumerate().map(move |(c, v)| {
                    let color = heat_color((v - lo) / (hi - lo));
                    Rectangle::new([(c as f64, r as f64), (c as f64 + 1.0, r as f64 + 1.0)], color.filled())
                })
            }))
            .map_err(&err)?;
    }
    root.present().map_err(&err)?;
    Ok(())
}

/// `loss_curves.csv` and `loss_curves.svg` from per-epoch logs; the epoch
/// axis runs through consecutive stages.
pub fn loss_curves(dir: &Path, logs: &[EpochLog]) -> Result<()> {
    let header: Vec<String> = ["step", "stage", "epoch", "L_S", "L_T", "L_dom", "L_rec", "L_aux", "val_mae", "val_rmse"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = logs
        .iter()
        .enumerate()
        .map(|(i, l)| {
            vec![
                i.to_string(),
                l.stage.name().into(),
                l.epoch.to_string(),
                l.l_s.to_string(),
                l.l_t.to_string(),
                l.l_dom.to_string(),
                l.l_rec.to_string(),
                l.l_aux.to_string(),
                l.val_mae.to_string(),
                l.val_rmse.to_string(),
            ]
        })
        .collect();
    write_rows(&dir.join("loss_curves.csv"), &header, &rows)?;
    let xs: Vec<f64> = (0..logs.len()).map(|i| i as f64).collect();
    let stages: Vec<&str> = {
        let mut s: Vec<&str> = logs.iter().map(|l| l.stage.name()).collect();
        s.dedup();
        s
    };
    let mut series = vec![("L_T", logs.iter().map(|l| l.l_t).collect::<Vec<_>>())];
    if logs.iter().any(|l| l.l_s != 0.0) {
        series.insert(0, ("L_S", logs.iter().map(|l| l.l_s).collect()));
    }
    line_chart(&dir.join("loss_curves.svg"), &format!("training losses ({})", stages.join(" then ")), "epoch", &xs, &series)?;
    line_chart(
        &dir.join("val_mae.svg"),
        "target validation MAE",
        "epoch",
        &xs,
        &[("val_mae", logs.iter().map(|l| l.val_mae).collect())],
    )
}

/// Test-period predictions of one or two models against the truth.
pub struct CaseStudy {
    pub stamps: Vec<HourStamp>,
    pub truth: Vec<Mat>,
    /// Named prediction sets, each aligned with `truth`.
    pub models: Vec<(String, Vec<Mat>)>,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

fn region_mean(m: &Mat, feature: usize) -> f64 {
    (0..m.rows()).map(|i| m[(i, feature)]).sum::<f64>() / m.rows() as f64
}

/// First week of the test span, averaged over regions: `weekly_series.csv`
/// and one SVG per feature with truth, predictions and residuals.
pub fn weekly_series(dir: &Path, case: &CaseStudy, features: &[&str]) -> Result<()> {
    let steps = case.truth.len().min(WEEK);
    let mut header = vec!["timestamp".to_string()];
    for f in features {
        header.push(format!("truth_{f}"));
        for (name, _) in &case.models {
            header.push(format!("{name}_{f}"));
            header.push(format!("{name}_residual_{f}"));
        }
    }
    let mut rows = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut row = vec![format_hour(case.stamps[t])];
        for k in 0..features.len() {
            let truth = region_mean(&case.truth[t], k);
            row.push(truth.to_string());
            for (_, preds) in &case.models {
                let p = region_mean(&preds[t], k);
                row.push(p.to_string());
                row.push((p - truth).to_string());
            }
        }
        rows.push(row);
    }
    write_rows(&dir.join("weekly_series.csv"), &header, &rows)?;
    let xs: Vec<f64> = (0..steps).map(|t| t as f64).collect();
    for (k, f) in features.iter().enumerate() {
        let mut series = vec![("truth".to_string(), (0..steps).map(|t| region_mean(&case.truth[t], k)).collect::<Vec<_>>())];
        for (name, preds) in &case.models {
            series.push((name.clone(), (0..steps).map(|t| region_mean(&preds[t], k)).collect()));
        }
        for (name, preds) in &case.models {
            let res = (0..steps).map(|t| region_mean(&preds[t], k) - region_mean(&case.truth[t], k)).collect();
            series.push((format!("{name} residual"), res));
        }
        let named: Vec<(&str, Vec<f64>)> = series.iter().map(|(n, v)| (n.as_str(), v.clone())).collect();
        line_chart(&dir.join(format!("weekly_series_{f}.svg")), &format!("mean {f} demand per region, first test week"), "hour", &xs, &named)?;
    }
    Ok(())
}

/// Per-region mean demand and mean absolute residual over the first test
/// week: `region_map.csv` and one SVG per feature.
pub fn region_map(dir: &Path, case: &CaseStudy, features: &[&str]) -> Result<()> {
    let steps = case.truth.len().min(WEEK);
    let n = case.grid_rows * case.grid_cols;
    if case.truth.first().is_some_and(|m| m.rows() != n) {
        return Err(Error::invalid(format!("predictions have {} regions, grid has {n}", case.truth[0].rows())));
    }
    let mean_over = |f: &dyn Fn(usize, usize) -> f64| -> Vec<f64> {
        (0..n).map(|i| (0..steps).map(|t| f(t, i)).sum::<f64>() / steps.max(1) as f64).collect()
    };
    let mut header = vec!["cell_id".to_string(), "row".into(), "col".into()];
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut panels_per_feature: Vec<Vec<(String, Vec<f64>)>> = Vec::new();
    for (k, f) in features.iter().enumerate() {
        let truth = mean_over(&|t, i| case.truth[t][(i, k)]);
        header.push(format!("truth_{f}"));
        columns.push(truth.clone());
        let mut panels = vec![(format!("mean {f}"), truth)];
        for (name, preds) in &case.models {
            let mae = mean_over(&|t, i| (preds[t][(i, k)] - case.truth[t][(i, k)]).abs());
            header.push(format!("{name}_abs_residual_{f}"));
            columns.push(mae.clone());
            panels.push((format!("{name} |residual|"), mae));
        }
        panels_per_feature.push(panels);
    }
    let rows: Vec<Vec<String>> = (0..n)
        .map(|i| {
            let mut r = vec![i.to_string(), (i / case.grid_cols).to_string(), (i % case.grid_cols).to_string()];
            r.extend(columns.iter().map(|c| c[i].to_string()));
            r
        })
        .collect();
    write_rows(&dir.join("region_map.csv"), &header, &rows)?;
    for (f, panels) in features.iter().zip(panels_per_feature) {
        let grids: Vec<(String, Vec<Vec<f64>>)> = panels
            .into_iter()
            .map(|(name, v)| (name, v.chunks(case.grid_cols).map(<[f64]>::to_vec).collect()))
            .collect();
        let refs: Vec<(&str, &[Vec<f64>])> = grids.iter().map(|(n, g)| (n.as_str(), g.as_slice())).collect();
        heatmaps(&dir.join(format!("region_map_{f}.svg")), &format!("{f}: first test week"), &refs, ("column", "row"))?;
    }
    Ok(())
}

/// Median MAE over the (duration, noise) grid.
pub fn quality_heatmap(dir: &Path, cells: &[QualityCell]) -> Result<()> {
    let mut days: Vec<u32> = cells.iter().map(|c| c.source_days).collect();
    days.sort_unstable();
    days.dedup();
    let mut noise: Vec<f64> = cells.iter().map(|c| c.noise_multiple).collect();
    noise.sort_by(f64::total_cmp);
    noise.dedup();
    let grid: Vec<Vec<f64>> = days
        .iter()
        .map(|d| {
            noise
                .iter()
                .map(|m| cells.iter().find(|c| c.source_days == *d && c.noise_multiple == *m).map_or(f64::NAN, |c| c.row.median_mae))
                .collect()
        })
        .collect();
    let mut header = vec!["source_days".to_string()];
    header.extend(noise.iter().map(|m| format!("noise_x{m}")));
    let rows: Vec<Vec<String>> = days
        .iter()
        .zip(&grid)
        .map(|(d, g)| std::iter::once(d.to_string()).chain(g.iter().map(f64::to_string)).collect())
        .collect();
    write_rows(&dir.join("quality_heatmap.csv"), &header, &rows)?;
    heatmaps(
        &dir.join("quality_heatmap.svg"),
        "median target test MAE",
        &[("rows: source days, columns: noise level", &grid)],
        ("noise level index", "duration index"),
    )
}
