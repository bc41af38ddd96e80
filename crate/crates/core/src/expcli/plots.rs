use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::records::ResultRecord;
use super::report::{median, scenario_order, strategy_name};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    /// NMSE vs compression ratio, one line per strategy and scenario.
    GammaSweep,
    /// NMSE per scenario after the whole sequence, one bar group per strategy.
    StrategyBars,
    /// Proposed NMSE on the first scenario after the last, vs replay size K.
    KTrend,
}

impl PlotKind {
    pub const ALL: [PlotKind; 3] = [
        PlotKind::GammaSweep,
        PlotKind::StrategyBars,
        PlotKind::KTrend,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::GammaSweep => "gamma_sweep",
            PlotKind::StrategyBars => "strategy_bars",
            PlotKind::KTrend => "k_trend",
        }
    }
}

/// Everything needed to draw a plot; also what the CSV dump holds.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotData {
    pub kind: PlotKind,
    /// Category names for bar plots (x = index); empty for line plots.
    pub categories: Vec<String>,
    pub series: Vec<(String, Vec<(f64, f64)>)>,
}

#[derive(Serialize, Deserialize)]
struct PointRow {
    series: String,
    x: f64,
    y: f64,
    category: String,
}

fn median_of(records: &[&ResultRecord]) -> Option<f64> {
    let v: Vec<f64> = records.iter().map(|r| r.nmse_db).collect();
    (!v.is_empty()).then(|| median(&v))
}

/// Builds the plot inputs. `axis` lists the x values every series must
/// cover (gammas or Ks; ignored for bars); gaps are reported together.
pub fn plot_data(records: &[ResultRecord], kind: PlotKind, axis: &[f64]) -> Result<PlotData> {
    if records.is_empty() {
        return Err(Error::Empty("result records"));
    }
    let ids = scenario_order(records);
    let last = records
        .iter()
        .map(|r| &r.trained_up_to)
        .max_by_key(|t| ids.iter().position(|i| i == *t))
        .expect("non-empty")
        .clone();
    let after_last: Vec<&ResultRecord> =
        records.iter().filter(|r| r.trained_up_to == last).collect();
    let mut missing = Vec::new();
    let mut series = Vec::new();
    let mut categories = Vec::new();
    match kind {
        PlotKind::GammaSweep => {
            let mut names = Vec::new();
            for r in &after_last {
                let key = (r.strategy.clone(), r.k, r.evaluated_on.clone());
                if !names.contains(&key) {
                    names.push(key);
                }
            }
            for (s, k, on) in names {
                let mut pts = Vec::new();
                for &g in axis {
                    let hits: Vec<&ResultRecord> = after_last
                        .iter()
                        .copied()
                        .filter(|r| {
                            r.strategy == s && r.k == k && r.evaluated_on == on && r.gamma == g
                        })
                        .collect();
                    match median_of(&hits) {
                        Some(y) => pts.push((g, y)),
                        None => {
                            missing.push(format!("{} on {on} at gamma {g}", strategy_name(&s, k)))
                        }
                    }
                }
                series.push((format!("{} on {on}", strategy_name(&s, k)), pts));
            }
        }
        PlotKind::StrategyBars => {
            categories = ids.clone();
            let mut names = Vec::new();
            for r in &after_last {
                let key = (r.strategy.clone(), r.k);
                if !names.contains(&key) {
                    names.push(key);
                }
            }
            for (s, k) in names {
                let mut pts = Vec::new();
                for (i, on) in ids.iter().enumerate() {
                    let hits: Vec<&ResultRecord> = after_last
                        .iter()
                        .copied()
                        .filter(|r| r.strategy == s && r.k == k && &r.evaluated_on == on)
                        .collect();
                    match median_of(&hits) {
                        Some(y) => pts.push((i as f64, y)),
                        // the offline bound reports every scenario; others must too
                        None => missing.push(format!("{} on {on}", strategy_name(&s, k))),
                    }
                }
                series.push((strategy_name(&s, k), pts));
            }
        }
        PlotKind::KTrend => {
            let first = ids[0].clone();
            let mut gammas = Vec::new();
            for r in after_last.iter().filter(|r| r.strategy == "Proposed") {
                if !gammas.contains(&r.gamma.to_bits()) {
                    gammas.push(r.gamma.to_bits());
                }
            }
            if gammas.is_empty() {
                missing.push("Proposed records after the last scenario".into());
            }
            for g in gammas {
                let g = f64::from_bits(g);
                let mut pts = Vec::new();
                for &k in axis {
                    let hits: Vec<&ResultRecord> = after_last
                        .iter()
                        .copied()
                        .filter(|r| {
                            r.strategy == "Proposed"
                                && r.gamma == g
                                && r.evaluated_on == first
                                && r.k.map(|x| x as f64) == Some(k)
                        })
                        .collect();
                    match median_of(&hits) {
                        Some(y) => pts.push((k, y)),
                        None => missing.push(format!("Proposed (K={k}) gamma {g} on {first}")),
                    }
                }
                series.push((format!("{first} after {last}, gamma {g}"), pts));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Coverage(missing.join("; ")));
    }
    Ok(PlotData {
        kind,
        categories,
        series,
    })
}

pub fn write_plot_csv(data: &PlotData, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (name, pts) in &data.series {
        for &(x, y) in pts {
            let category = data
                .categories
                .get(x as usize)
                .filter(|_| !data.categories.is_empty())
                .cloned()
                .unwrap_or_default();
            w.serialize(PointRow {
                series: name.clone(),
                x,
                y,
                category,
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_plot_csv(path: &Path, kind: PlotKind) -> Result<PlotData> {
    let mut r = csv::Reader::from_path(path)?;
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    let mut categories: Vec<String> = Vec::new();
    for row in r.deserialize::<PointRow>() {
        let row = row?;
        if !row.category.is_empty() {
            let i = row.x as usize;
            if categories.len() <= i {
                categories.resize(i + 1, String::new());
            }
            categories[i] = row.category;
        }
        match series.iter_mut().find(|(n, _)| *n == row.series) {
            Some((_, pts)) => pts.push((row.x, row.y)),
            None => series.push((row.series, vec![(row.x, row.y)])),
        }
    }
    Ok(PlotData {
        kind,
        categories,
        series,
    })
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Plot(e.to_string())
}

/// Renders `data` as an SVG file.
pub fn render_svg(data: &PlotData, path: &Path) -> Result<()> {
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let ys = data.series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1));
    let (mut lo, mut hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| {
        (a.min(y), b.max(y))
    });
    if !lo.is_finite() {
        (lo, hi) = (-1.0, 0.0);
    }
    let pad = ((hi - lo) * 0.1).max(0.5);
    let (y0, y1) = (lo - pad, (hi + pad).min(0.0).max(lo));
    let y1 = if y1 <= y0 { y0 + 1.0 } else { y1 };
    let palette = |i: usize| Palette99::pick(i).to_rgba();
    match data.kind {
        PlotKind::StrategyBars => {
            let groups = data.categories.len().max(1);
            let n = data.series.len().max(1);
            let mut chart = ChartBuilder::on(&root)
                .margin(20)
                .x_label_area_size(40)
                .y_label_area_size(60)
                .build_cartesian_2d(-0.5f64..groups as f64 - 0.5, y0..y1)
                .map_err(plot_err)?;
            let cats = data.categories.clone();
            chart
                .configure_mesh()
                .x_labels(groups)
                .x_label_formatter(&|x| {
                    let i = x.round();
                    if (x - i).abs() < 1e-6 && i >= 0.0 {
                        cats.get(i as usize).cloned().unwrap_or_default()
                    } else {
                        String::new()
                    }
                })
                .y_desc("NMSE (dB)")
                .draw()
                .map_err(plot_err)?;
            let w = 0.8 / n as f64;
            for (si, (name, pts)) in data.series.iter().enumerate() {
                let color = palette(si);
                chart
                    .draw_series(pts.iter().map(|&(x, y)| {
                        let left = x - 0.4 + si as f64 * w;
                        Rectangle::new([(left, y1), (left + w, y)], color.filled())
                    }))
                    .map_err(plot_err)?
                    .label(name.clone())
                    .legend(move |(x, y)| {
                        Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled())
                    });
            }
            chart
                .configure_series_labels()
                .border_style(BLACK)
                .background_style(WHITE)
                .draw()
                .map_err(plot_err)?;
        }
        PlotKind::GammaSweep | PlotKind::KTrend => {
            // gamma is plotted as log2(1/gamma); K on a linear axis
            let tx = |x: f64| match data.kind {
                PlotKind::GammaSweep => (1.0 / x).log2(),
                _ => x,
            };
            let xs = data
                .series
                .iter()
                .flat_map(|(_, p)| p.iter().map(|q| tx(q.0)));
            let (mut x0, mut x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
                (a.min(x), b.max(x))
            });
            if !x0.is_finite() {
                (x0, x1) = (0.0, 1.0);
            }
            let xpad = ((x1 - x0) * 0.05).max(0.5);
            let mut chart = ChartBuilder::on(&root)
                .margin(20)
                .x_label_area_size(40)
                .y_label_area_size(60)
                .build_cartesian_2d(x0 - xpad..x1 + xpad, y0..y1)
                .map_err(plot_err)?;
            let kind = data.kind;
            chart
                .configure_mesh()
                .x_desc(match kind {
                    PlotKind::GammaSweep => "log2(1/gamma)",
                    _ => "K",
                })
                .y_desc("NMSE (dB)")
                .draw()
                .map_err(plot_err)?;
            for (si, (name, pts)) in data.series.iter().enumerate() {
                let color = palette(si);
                let line: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (tx(x), y)).collect();
                chart
                    .draw_series(LineSeries::new(line.clone(), color.stroke_width(2)))
                    .map_err(plot_err)?
                    .label(name.clone())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
                chart
                    .draw_series(line.into_iter().map(|p| Circle::new(p, 3, color.filled())))
                    .map_err(plot_err)?;
            }
            chart
                .configure_series_labels()
                .border_style(BLACK)
                .background_style(WHITE)
                .draw()
                .map_err(plot_err)?;
        }
    }
    root.present().map_err(plot_err)
}

/// Writes `<kind>.svg` and its `<kind>.csv` point dump into `dir`.
pub fn emit_plots(
    records: &[ResultRecord],
    kind: PlotKind,
    axis: &[f64],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let data = plot_data(records, kind, axis)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let svg = dir.join(format!("{}.svg", kind.name()));
    let csv_path = dir.join(format!("{}.csv", kind.name()));
    write_plot_csv(&data, &csv_path)?;
    render_svg(&data, &svg)?;
    Ok(vec![svg, csv_path])
}
