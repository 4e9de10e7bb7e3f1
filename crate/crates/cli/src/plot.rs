use anyhow::{anyhow, Result};
use plotters::prelude::*;
use std::path::{Path, PathBuf};

/// File name for a metric; `/` and other separators become `_`.
pub fn file_stem(metric: &str) -> String {
    metric
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

/// Value against step for one metric, written as SVG.
pub fn plot_series(dir: &Path, metric: &str, points: &[(u64, f64)]) -> Result<PathBuf> {
    let path = dir.join(format!("{}.svg", file_stem(metric)));
    let finite: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.1.is_finite())
        .map(|&(s, v)| (s as f64, v))
        .collect();
    let (x0, x1) = bounds(finite.iter().map(|p| p.0));
    let (y0, y1) = bounds(finite.iter().map(|p| p.1));
    let err = |e: &dyn std::fmt::Display| anyhow!("plotting {metric}: {e}");

    {
        let root = SVGBackend::new(&path, (720, 420)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| err(&e))?;
        let mut chart = ChartBuilder::on(&root)
            .caption(metric, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(32)
            .y_label_area_size(56)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(|e| err(&e))?;
        chart
            .configure_mesh()
            .x_desc("step")
            .y_desc("value")
            .draw()
            .map_err(|e| err(&e))?;
        chart.draw_series(LineSeries::new(finite, &BLUE)).map_err(|e| err(&e))?;
        root.present().map_err(|e| err(&e))?;
    }
    Ok(path)
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo {
        (hi - lo) * 0.05
    } else {
        lo.abs().max(1.0) * 0.05
    };
    (lo - pad, hi + pad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_and_empty_series_still_render() {
        let dir = tempfile::tempdir().unwrap();
        let p = plot_series(dir.path(), "w/f0", &[(0, 1.0), (1, 1.0)]).unwrap();
        assert!(p.ends_with("w_f0.svg"));
        assert!(std::fs::read_to_string(&p).unwrap().contains("w/f0"));
        plot_series(dir.path(), "g/nan", &[(0, f64::NAN)]).unwrap();
    }
}
