use std::path::Path;

use plotters::prelude::*;

use super::ResultRow;
use crate::error::{Error, Result};

fn first_seen<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for s in items {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// Grouped bars: one group per scenario, one bar per technique, log-scaled
/// execution time. Repetitions are averaged.
pub fn write_app_chart(path: &Path, title: &str, rows: &[&ResultRow]) -> Result<()> {
    let chart_err = |e: &dyn std::fmt::Display| Error::Chart(e.to_string());
    let scenarios = first_seen(rows.iter().map(|r| r.scenario.as_str()));
    let techniques = first_seen(rows.iter().map(|r| r.technique.as_str()));
    if scenarios.is_empty() {
        return Err(Error::Chart("no rows to plot".into()));
    }
    let mean = |s: &str, t: &str| {
        let v: Vec<f64> = rows
            .iter()
            .filter(|r| r.scenario == s && r.technique == t)
            .map(|r| r.makespan_s)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let values: Vec<f64> = rows.iter().map(|r| r.makespan_s).filter(|m| *m > 0.0).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min).max(1e-9);
    let hi = values.iter().copied().fold(0.0, f64::max).max(lo * 10.0);

    let width = 160 + 70 * scenarios.len() as u32;
    let root = SVGBackend::new(path, (width, 520)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| chart_err(&e))?;
    let n = scenarios.len();
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(60)
        .y_label_area_size(70)
        .build_cartesian_2d(0f64..n as f64, (lo / 2.0..hi * 2.0).log_scale())
        .map_err(|e| chart_err(&e))?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n * 2 + 1)
        .x_label_formatter(&|x| {
            let i = x.floor() as usize;
            if (x - i as f64 - 0.5).abs() < 1e-6 && i < n {
                scenarios[i].to_string()
            } else {
                String::new()
            }
        })
        .y_desc("execution time [s]")
        .draw()
        .map_err(|e| chart_err(&e))?;

    let bar = 0.8 / techniques.len() as f64;
    for (j, tech) in techniques.iter().enumerate() {
        let color = Palette99::pick(j).filled();
        let bars: Vec<Rectangle<(f64, f64)>> = scenarios
            .iter()
            .enumerate()
            .filter_map(|(i, s)| {
                let m = mean(s, tech)?;
                let x0 = i as f64 + 0.1 + j as f64 * bar;
                Some(Rectangle::new([(x0, lo / 2.0), (x0 + bar, m)], color))
            })
            .collect();
        chart
            .draw_series(bars)
            .map_err(|e| chart_err(&e))?
            .label(*tech)
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], Palette99::pick(j).filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .position(SeriesLabelPosition::UpperRight)
        .draw()
        .map_err(|e| chart_err(&e))?;
    root.present().map_err(|e| chart_err(&e))?;
    Ok(())
}
