//! Post-processing of traces: steady-state detection and straight-line fits.

use thiserror::Error;

use crate::trace::TraceRecord;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("trace has {records} records, window needs more than {window}")]
    TooShort { records: usize, window: usize },
    #[error("no window satisfies the steady-state tolerance")]
    NoSteadyState,
    #[error("need at least two distinct points for a fit, got {0}")]
    NotEnoughPoints(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyState {
    /// End time of the first qualifying window, s.
    pub t_ss: f64,
    /// Mean kinetic energy over that window, J.
    pub k_ss: f64,
}

/// Earliest window of length `window` seconds over which the mean of
/// `dK_e/dt` and the mean of `p_ext + p_safe` are both below `tol` in
/// magnitude.
pub fn detect_steady_state(
    records: &[TraceRecord],
    window: f64,
    tol: f64,
) -> Result<SteadyState, AnalysisError> {
    if records.len() < 2 {
        return Err(AnalysisError::TooShort {
            records: records.len(),
            window: 1,
        });
    }
    let dt = records[1].t - records[0].t;
    let w = ((window / dt).round() as usize).max(1);
    if records.len() <= w {
        return Err(AnalysisError::TooShort {
            records: records.len(),
            window: w,
        });
    }

    // Prefix sums over w + 1 samples spanning exactly `w` intervals.
    let mut p_sum = vec![0.0; records.len() + 1];
    for (i, r) in records.iter().enumerate() {
        p_sum[i + 1] = p_sum[i] + r.p_ext + r.p_safe;
    }

    for start in 0..records.len() - w {
        let end = start + w;
        let span = records[end].t - records[start].t;
        let mean_rate = (records[end].k_e - records[start].k_e) / span;
        let count = (w + 1) as f64;
        let mean_power = (p_sum[end + 1] - p_sum[start]) / count;
        if mean_rate.abs() < tol && mean_power.abs() < tol {
            let k_ref = records[start].k_e;
            let offset: f64 = records[start..=end].iter().map(|r| r.k_e - k_ref).sum();
            return Ok(SteadyState {
                t_ss: records[end].t,
                k_ss: k_ref + offset / count,
            });
        }
    }
    Err(AnalysisError::NoSteadyState)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub residuals: Vec<f64>,
}

/// Ordinary least squares fit of `y = slope·x + intercept`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<FitResult, AnalysisError> {
    let n = x.len().min(y.len());
    if n < 2 {
        return Err(AnalysisError::NotEnoughPoints(n));
    }
    let nf = n as f64;
    let mx = x[..n].iter().sum::<f64>() / nf;
    let my = y[..n].iter().sum::<f64>() / nf;
    let sxx: f64 = x[..n].iter().map(|xi| (xi - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(AnalysisError::NotEnoughPoints(1));
    }
    let sxy: f64 = x[..n]
        .iter()
        .zip(&y[..n])
        .map(|(xi, yi)| (xi - mx) * (yi - my))
        .sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = x[..n]
        .iter()
        .zip(&y[..n])
        .map(|(xi, yi)| yi - (slope * xi + intercept))
        .collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let ss_tot: f64 = y[..n].iter().map(|yi| (yi - my).powi(2)).sum();
    let r2 = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(FitResult {
        slope,
        intercept,
        r2,
        residuals,
    })
}
