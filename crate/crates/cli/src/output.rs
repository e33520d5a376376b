use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use energy_cbf::scenarios::{PowerSweep, ScenarioRun};
use energy_cbf::{trace, RobotModel, TraceRecord};

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn write_trace(path: &Path, records: &[TraceRecord]) -> Result<()> {
    trace::write_csv(records, create(path)?).with_context(|| format!("writing {}", path.display()))
}

pub fn write_binary(path: &Path, records: &[TraceRecord]) -> Result<()> {
    let mut w = create(path)?;
    trace::write_binary(records, &mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const SUMMARY_HEADER: &str =
    "label,case,gamma,p_ext,max_k_e,max_p_safe,interventions,audit_residual,t_ss,k_ss,slope";

/// One row per run. The steady-state columns and the fitted slope of
/// `K_ss − K_max` against `P_ext` (same γ) are filled for power sweeps.
pub fn write_summary(
    path: &Path,
    plant: &RobotModel,
    runs: &[ScenarioRun],
    sweep: Option<&PowerSweep>,
) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{SUMMARY_HEADER}")?;
    for run in runs {
        let records = &run.output.records;
        let max_p_safe = records
            .iter()
            .map(|r| r.p_safe)
            .fold(f64::NEG_INFINITY, f64::max);
        let interventions = records.iter().filter(|r| r.intervened).count();
        let audit = run.output.energy_audit(plant)?;
        let point = sweep.and_then(|s| {
            s.points
                .iter()
                .find(|p| Some(p.p_ext) == run.spec.p_ext && p.gamma == run.spec.gamma)
        });
        let slope = sweep.and_then(|s| {
            s.fits
                .iter()
                .find(|f| f.gamma == run.spec.gamma)
                .and_then(|f| f.fit.as_ref())
                .map(|f| f.slope)
        });
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            run.spec.label,
            run.spec.case.as_str(),
            run.spec.gamma,
            opt(run.spec.p_ext),
            run.output.max_kinetic_energy(),
            max_p_safe,
            interventions,
            audit.residual,
            opt(point.and_then(|p| p.steady).map(|s| s.t_ss)),
            opt(point.and_then(|p| p.steady).map(|s| s.k_ss)),
            opt(slope),
        )?;
    }
    w.flush()?;
    Ok(())
}
