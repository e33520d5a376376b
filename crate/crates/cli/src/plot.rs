use std::path::Path;

use anyhow::{anyhow, Result};
use energy_cbf::scenarios::{PowerSweep, Scenario, ScenarioRun};
use plotters::prelude::*;

const SIZE: (u32, u32) = (900, 540);
/// Every `STRIDE`-th tick is drawn.
const STRIDE: usize = 5;

fn color(i: usize) -> RGBColor {
    let c = Palette99::pick(i).to_rgba();
    RGBColor(c.0, c.1, c.2)
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    (lo - pad, hi + pad)
}

fn time_series<F>(
    path: &Path,
    title: &str,
    y_label: &str,
    runs: &[ScenarioRun],
    value: F,
    level: Option<f64>,
) -> Result<()>
where
    F: Fn(&energy_cbf::TraceRecord) -> f64,
{
    let t_end = runs
        .iter()
        .filter_map(|r| r.output.records.last())
        .map(|r| r.t)
        .fold(0.0, f64::max);
    let (y0, y1) = bounds(
        runs.iter()
            .flat_map(|r| r.output.records.iter().map(&value))
            .chain(level),
    );
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..t_end.max(1e-9), y0..y1)
        .map_err(|e| anyhow!("{e}"))?;
    chart
        .configure_mesh()
        .x_desc("t [s]")
        .y_desc(y_label)
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    for (i, run) in runs.iter().enumerate() {
        let c = color(i);
        chart
            .draw_series(LineSeries::new(
                run.output
                    .records
                    .iter()
                    .step_by(STRIDE)
                    .map(|r| (r.t, value(r))),
                c.stroke_width(2),
            ))
            .map_err(|e| anyhow!("{e}"))?
            .label(run.spec.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], c));
    }
    if let Some(level) = level {
        chart
            .draw_series(LineSeries::new(
                [(0.0, level), (t_end, level)],
                BLACK.stroke_width(1),
            ))
            .map_err(|e| anyhow!("{e}"))?
            .label("K_max")
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLACK));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    root.present().map_err(|e| anyhow!("{e}"))?;
    Ok(())
}

pub fn energy(path: &Path, scenario: &Scenario, runs: &[ScenarioRun]) -> Result<()> {
    time_series(
        path,
        "Kinetic energy",
        "K_e [J]",
        runs,
        |r| r.k_e,
        Some(scenario.filter.k_max),
    )
}

pub fn extracted_power(path: &Path, runs: &[ScenarioRun]) -> Result<()> {
    time_series(
        path,
        "Safety-filter power",
        "p_safe [W]",
        runs,
        |r| r.p_safe,
        None,
    )
}

/// Steady-state excess against injected power, one colour per γ, with the
/// fitted lines.
pub fn steady_state(path: &Path, sweep: &PowerSweep) -> Result<()> {
    let pts: Vec<(f64, f64, f64)> = sweep
        .points
        .iter()
        .filter_map(|p| p.excess.map(|e| (p.gamma, p.p_ext, e)))
        .collect();
    let (x0, x1) = bounds(pts.iter().map(|p| p.1).chain([0.0]));
    let (y0, y1) = bounds(pts.iter().map(|p| p.2).chain([0.0]));
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Steady-state energy error", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| anyhow!("{e}"))?;
    chart
        .configure_mesh()
        .x_desc("P_ext [W]")
        .y_desc("K_ss - K_max [J]")
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    for (i, gf) in sweep.fits.iter().enumerate() {
        let c = color(i);
        let mine: Vec<(f64, f64)> = pts
            .iter()
            .filter(|p| p.0 == gf.gamma)
            .map(|p| (p.1, p.2))
            .collect();
        chart
            .draw_series(mine.iter().map(|&p| Circle::new(p, 4, c.filled())))
            .map_err(|e| anyhow!("{e}"))?
            .label(format!("γ = {}", gf.gamma))
            .legend(move |(x, y)| Circle::new((x + 10, y), 4, c.filled()));
        if let Some(fit) = &gf.fit {
            let lo = mine.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            let hi = mine.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
            chart
                .draw_series(LineSeries::new(
                    [lo, hi].map(|x| (x, fit.intercept + fit.slope * x)),
                    c.stroke_width(1),
                ))
                .map_err(|e| anyhow!("{e}"))?;
        }
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    root.present().map_err(|e| anyhow!("{e}"))?;
    Ok(())
}
