//! Static SVG dashboards drawn purely from a [`BacktestReport`].

use std::path::{Path, PathBuf};

use plotters::coord::Shift;
use plotters::prelude::*;

use super::{BacktestReport, PipelineError, Result};
use crate::signals::Side;

/// Chart file names, in dashboard order.
pub const CHART_FILES: [&str; 4] = ["01_signals.svg", "02_portfolio.svg", "03_roi.svg", "04_sharpe.svg"];

const SIZE: (u32, u32) = (1000, 520);
const INDICATOR_COLORS: [RGBColor; 3] = [RGBColor(31, 119, 180), RGBColor(255, 127, 14), RGBColor(148, 103, 189)];
const BUY: RGBColor = RGBColor(0, 150, 60);
const SELL: RGBColor = RGBColor(210, 30, 30);

type Area<'a> = DrawingArea<SVGBackend<'a>, Shift>;
type SnapshotField = fn(&crate::engine::PortfolioSnapshot) -> f64;

fn chart_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Report(format!("chart rendering failed: {e}"))
}

/// Renders the four dashboards into `out_dir` and returns their paths.
pub fn render(report: &BacktestReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    report.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| PipelineError::UnwritableOutput {
        path: out_dir.to_path_buf(),
        reason: e.to_string(),
    })?;
    let drawers: [fn(&BacktestReport, &Area) -> Result<()>; 4] =
        [signals_chart, portfolio_chart, roi_chart, sharpe_chart];
    let mut paths = Vec::with_capacity(CHART_FILES.len());
    for (name, draw) in CHART_FILES.iter().zip(drawers) {
        let mut svg = String::new();
        {
            let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
            root.fill(&WHITE).map_err(chart_err)?;
            draw(report, &root)?;
            root.present().map_err(chart_err)?;
        }
        let path = out_dir.join(name);
        std::fs::write(&path, svg).map_err(|e| PipelineError::UnwritableOutput {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        paths.push(path);
    }
    Ok(paths)
}

/// Padded value range that is never empty.
fn span(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.into_iter().filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    let pad = if hi > lo {
        (hi - lo) * 0.05
    } else {
        lo.abs().max(1.0) * 0.05
    };
    (lo - pad, hi + pad)
}

fn x_range(report: &BacktestReport) -> std::ops::Range<f64> {
    0.0..(report.meta.bars.len().max(2) - 1) as f64
}

fn date_label(report: &BacktestReport) -> impl Fn(&f64) -> String + '_ {
    move |x| {
        let i = x.round().max(0.0) as usize;
        report
            .meta
            .bars
            .get(i)
            .map(|b| {
                if report.meta.data.interval.is_intraday() {
                    b.timestamp.format("%m-%d %H:%M").to_string()
                } else {
                    b.timestamp.format("%Y-%m-%d").to_string()
                }
            })
            .unwrap_or_default()
    }
}

fn title(report: &BacktestReport, what: &str) -> String {
    format!(
        "{} {} ({}): {what}",
        report.meta.data.symbol,
        report.config.strategy.kind(),
        report.meta.data.interval
    )
}

fn signals_chart(report: &BacktestReport, root: &Area) -> Result<()> {
    let bars = &report.meta.bars;
    let values = bars.iter().map(|b| b.close).chain(
        report
            .meta
            .indicators
            .iter()
            .flat_map(|ind| ind.points().iter().filter_map(|p| p.value)),
    );
    let (lo, hi) = span(values);
    let mut chart = ChartBuilder::on(root)
        .caption(title(report, "buy-and-sell signals"), ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(64)
        .build_cartesian_2d(x_range(report), lo..hi)
        .map_err(chart_err)?;
    chart
        .configure_mesh()
        .x_labels(8)
        .x_label_formatter(&date_label(report))
        .y_desc("price (USD)")
        .draw()
        .map_err(chart_err)?;

    chart
        .draw_series(LineSeries::new(
            bars.iter().enumerate().map(|(i, b)| (i as f64, b.close)),
            BLACK.stroke_width(1),
        ))
        .map_err(chart_err)?
        .label("close")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], BLACK));

    for (ind, color) in report.meta.indicators.iter().zip(INDICATOR_COLORS.iter().cycle()) {
        // warm-up gaps split the line into segments
        let mut segments: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
        for (i, p) in ind.points().iter().enumerate() {
            match p.value {
                Some(v) => segments.last_mut().expect("non-empty").push((i as f64, v)),
                None if !segments.last().expect("non-empty").is_empty() => segments.push(Vec::new()),
                None => {}
            }
        }
        let color = *color;
        let mut labelled = false;
        for seg in segments.into_iter().filter(|s| !s.is_empty()) {
            let drawn = chart
                .draw_series(LineSeries::new(seg, color.stroke_width(2)))
                .map_err(chart_err)?;
            if !labelled {
                drawn
                    .label(ind.name())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
                labelled = true;
            }
        }
    }

    let index_of = |s: &super::SignalRecord| bars.binary_search_by_key(&s.timestamp, |b| b.timestamp).ok();
    let buys: Vec<(f64, f64)> = report
        .signals
        .iter()
        .filter(|s| s.side == Side::Buy)
        .filter_map(|s| index_of(s).map(|i| (i as f64, s.trigger_price)))
        .collect();
    let sells: Vec<(f64, f64)> = report
        .signals
        .iter()
        .filter(|s| s.side == Side::Sell)
        .filter_map(|s| index_of(s).map(|i| (i as f64, s.trigger_price)))
        .collect();
    if !buys.is_empty() {
        chart
            .draw_series(
                buys.into_iter()
                    .map(|p| EmptyElement::at(p) + Polygon::new(vec![(0, -2), (-7, 10), (7, 10)], BUY.filled())),
            )
            .map_err(chart_err)?
            .label("buy")
            .legend(|(x, y)| Polygon::new(vec![(x + 9, y - 6), (x + 3, y + 5), (x + 15, y + 5)], BUY.filled()));
    }
    if !sells.is_empty() {
        chart
            .draw_series(
                sells
                    .into_iter()
                    .map(|p| EmptyElement::at(p) + Polygon::new(vec![(0, 2), (-7, -10), (7, -10)], SELL.filled())),
            )
            .map_err(chart_err)?
            .label("sell")
            .legend(|(x, y)| Polygon::new(vec![(x + 9, y + 6), (x + 3, y - 5), (x + 15, y - 5)], SELL.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .position(SeriesLabelPosition::UpperLeft)
        .draw()
        .map_err(chart_err)?;
    Ok(())
}

fn portfolio_chart(report: &BacktestReport, root: &Area) -> Result<()> {
    let snaps = &report.snapshots;
    let (lo, hi) = span(snaps.iter().flat_map(|s| [s.cash, s.holding_value, s.total]));
    let mut chart = ChartBuilder::on(root)
        .caption(title(report, "portfolio time series"), ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(72)
        .build_cartesian_2d(x_range(report), lo..hi)
        .map_err(chart_err)?;
    chart
        .configure_mesh()
        .x_labels(8)
        .x_label_formatter(&date_label(report))
        .y_desc("USD")
        .draw()
        .map_err(chart_err)?;
    let lines: [(&str, RGBColor, SnapshotField); 3] = [
        ("cash", SELL, |s| s.cash),
        ("holdings", BUY, |s| s.holding_value),
        ("total", INDICATOR_COLORS[0], |s| s.total),
    ];
    for (name, color, get) in lines {
        chart
            .draw_series(LineSeries::new(
                snaps.iter().enumerate().map(|(i, s)| (i as f64, get(s))),
                color.stroke_width(2),
            ))
            .map_err(chart_err)?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .position(SeriesLabelPosition::UpperLeft)
        .draw()
        .map_err(chart_err)?;
    Ok(())
}

fn roi_chart(report: &BacktestReport, root: &Area) -> Result<()> {
    let strat = &report.strategy_metrics;
    let base = &report.baseline_metrics;
    let pct = |v: f64| v * 100.0;
    let (lo, hi) = span(strat.roi_series.iter().chain(&base.roi_series).map(|v| pct(*v)));
    let caption = format!(
        "Gross ROI: strategy {:.2}% vs buy-and-hold {:.2}%",
        pct(strat.gross_roi),
        pct(base.gross_roi)
    );
    let mut chart = ChartBuilder::on(root)
        .caption(caption, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(64)
        .build_cartesian_2d(x_range(report), lo..hi)
        .map_err(chart_err)?;
    chart
        .configure_mesh()
        .x_labels(8)
        .x_label_formatter(&date_label(report))
        .y_desc("ROI (%)")
        .draw()
        .map_err(chart_err)?;
    let kind = report.config.strategy.kind().to_string();
    for (name, series, color) in [
        (kind.as_str(), &strat.roi_series, INDICATOR_COLORS[0]),
        ("buy_and_hold", &base.roi_series, BLACK),
    ] {
        chart
            .draw_series(LineSeries::new(
                series.iter().enumerate().map(|(i, v)| (i as f64, pct(*v))),
                color.stroke_width(2),
            ))
            .map_err(chart_err)?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .position(SeriesLabelPosition::UpperLeft)
        .draw()
        .map_err(chart_err)?;
    Ok(())
}

fn sharpe_chart(report: &BacktestReport, root: &Area) -> Result<()> {
    let entries = [
        (
            report.config.strategy.kind().to_string(),
            report.strategy_metrics.sharpe,
            INDICATOR_COLORS[0],
        ),
        ("buy_and_hold".to_string(), report.baseline_metrics.sharpe, BLACK),
    ];
    let (lo, hi) = span(entries.iter().filter_map(|e| e.1).chain([0.0]));
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"));
    let caption = format!(
        "Sharpe ratio: strategy {} vs buy-and-hold {}",
        fmt(entries[0].1),
        fmt(entries[1].1)
    );
    let mut chart = ChartBuilder::on(root)
        .caption(caption, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(64)
        .build_cartesian_2d(-0.5f64..1.5, lo..hi)
        .map_err(chart_err)?;
    let names: Vec<String> = entries.iter().map(|e| e.0.clone()).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(5)
        .x_label_formatter(&|x| {
            let slot = x.round();
            if (x - slot).abs() < 1e-9 && (0.0..=1.0).contains(&slot) {
                names[slot as usize].clone()
            } else {
                String::new()
            }
        })
        .x_label_style(("sans-serif", 16))
        .y_desc("annualized Sharpe")
        .draw()
        .map_err(chart_err)?;
    chart
        .draw_series(LineSeries::new([(-0.5, 0.0), (1.5, 0.0)], BLACK.stroke_width(1)))
        .map_err(chart_err)?;
    for (slot, (_, value, color)) in entries.iter().enumerate() {
        let x = slot as f64;
        let (bar_top, label) = match value {
            Some(v) => {
                chart
                    .draw_series(std::iter::once(Rectangle::new(
                        [(x - 0.3, 0.0), (x + 0.3, *v)],
                        color.filled(),
                    )))
                    .map_err(chart_err)?;
                (*v, format!("{v:.2}"))
            }
            None => (0.0, "n/a".to_string()),
        };
        chart
            .draw_series(std::iter::once(Text::new(
                label,
                (x - 0.05, bar_top),
                ("sans-serif", 16),
            )))
            .map_err(chart_err)?;
    }
    Ok(())
}
