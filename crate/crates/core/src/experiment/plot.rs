use std::fs;
use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};

use super::run::RunReport;

/// One named curve of `(labeled_count, mean_dice)` points.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn from_report(r: &RunReport) -> Self {
        Self {
            name: r.arm.clone(),
            points: r.records.iter().map(|x| (x.labeled_count as f64, x.mean_dice)).collect(),
        }
    }
}

/// `series,labeled_count,mean_dice`, one row per plotted point.
pub fn write_series_csv(path: &Path, series: &[Series]) -> Result<()> {
    let mut csv = String::from("series,labeled_count,mean_dice\n");
    for s in series {
        for (x, y) in &s.points {
            csv.push_str(&format!("{},{},{}\n", s.name, x, y));
        }
    }
    fs::write(path, csv).map_err(|e| Error::io(path, e))
}

/// Dice-vs-labels line chart as SVG, with the plotted points written to a
/// CSV next to it.
pub fn plot_series(svg: &Path, title: &str, series: &[Series]) -> Result<()> {
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::Data("nothing to plot".into()));
    }
    let plot_err = |e: String| Error::format("plot", e);
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let pad = ((x1 - x0) * 0.05).max(1.0);
    {
        let root = SVGBackend::new(svg, (800, 500)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| plot_err(e.to_string()))?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 22))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(50)
            .build_cartesian_2d((x0 - pad)..(x1 + pad), 0.0..1.0)
            .map_err(|e| plot_err(e.to_string()))?;
        chart
            .configure_mesh()
            .x_desc("labeled samples")
            .y_desc("mean Dice")
            .draw()
            .map_err(|e| plot_err(e.to_string()))?;
        for (i, s) in series.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
                .map_err(|e| plot_err(e.to_string()))?
                .label(s.name.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
            chart
                .draw_series(s.points.iter().map(|&p| Circle::new(p, 3, color.filled())))
                .map_err(|e| plot_err(e.to_string()))?;
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .position(SeriesLabelPosition::LowerRight)
            .draw()
            .map_err(|e| plot_err(e.to_string()))?;
        root.present().map_err(|e| plot_err(e.to_string()))?;
    }
    write_series_csv(&svg.with_extension("csv"), series)
}

pub fn plot_reports(svg: &Path, title: &str, reports: &[RunReport]) -> Result<()> {
    let series: Vec<Series> = reports.iter().map(Series::from_report).collect();
    plot_series(svg, title, &series)
}
