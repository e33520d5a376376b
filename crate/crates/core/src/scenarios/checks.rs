//! Pass/fail verdicts over scenario runs.

use super::{Case, PowerSweep, Scenario, ScenarioKind, ScenarioRun};

/// Pinned tolerances.
pub mod tol {
    /// Upper bound on `q̇ᵀB·u_safe`, W.
    pub const P_SAFE: f64 = 1e-9;
    /// Relative breach of `K_max` allowed under zero-order hold.
    pub const INVARIANCE: f64 = 0.02;
    /// γ values at or below this must keep `K_e` under the limit.
    pub const INVARIANCE_MAX_GAMMA: f64 = 10.0;
    /// Unfiltered step response must reach this multiple of `K_max`.
    pub const OFF_EXCEEDANCE: f64 = 1.5;
    /// Relative pointwise error of the steady-state law.
    pub const STEADY_STATE: f64 = 0.05;
    /// Allowed `|slope·γ − 1|`.
    pub const SLOPE: f64 = 0.1;
    /// Aware error as a fraction of the agnostic error.
    pub const AWARE_RATIO: f64 = 0.3;
    /// Slack on the agnostic error bound, as a fraction of `K_max`.
    pub const AGNOSTIC_SLACK: f64 = 0.02;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self {
            name,
            passed,
            detail,
        }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

fn max_k(run: &ScenarioRun) -> f64 {
    run.output.max_kinetic_energy()
}

fn filtered(runs: &[ScenarioRun]) -> impl Iterator<Item = &ScenarioRun> {
    runs.iter().filter(|r| r.spec.case != Case::Off)
}

/// `p_safe ≤ P_SAFE` at every tick of every run.
pub fn power_extraction(runs: &[ScenarioRun]) -> Check {
    let (worst, label) = runs
        .iter()
        .flat_map(|r| {
            r.output
                .records
                .iter()
                .map(move |rec| (rec.p_safe, &r.spec.label))
        })
        .fold((f64::NEG_INFINITY, None), |acc, (p, l)| {
            if p > acc.0 {
                (p, Some(l))
            } else {
                acc
            }
        });
    let ticks: usize = runs.iter().map(|r| r.output.records.len()).sum();
    Check::new(
        "p_safe <= 1e-9",
        worst <= tol::P_SAFE,
        format!(
            "max p_safe = {worst:.3e} W over {ticks} ticks{}",
            label.map(|l| format!(" ({l})")).unwrap_or_default()
        ),
    )
}

/// `u == u_nom` bitwise whenever `Ψ(u_nom) ≥ 0`, and at every tick of
/// unfiltered runs.
pub fn minimal_invasiveness(runs: &[ScenarioRun]) -> Check {
    let mut checked = 0usize;
    let mut violations = 0usize;
    for run in runs {
        for rec in &run.output.records {
            if run.spec.case == Case::Off || rec.psi >= 0.0 {
                checked += 1;
                if rec.u != rec.u_nom {
                    violations += 1;
                }
            }
        }
    }
    Check::new(
        "u == u_nom when psi >= 0",
        violations == 0,
        format!("{violations} violations in {checked} ticks"),
    )
}

/// Filtered runs with small γ stay within `K_max·(1 + INVARIANCE)`; the
/// unfiltered run exceeds the limit (by `OFF_EXCEEDANCE` for the step
/// response).
pub fn forward_invariance(scenario: &Scenario, runs: &[ScenarioRun]) -> Check {
    let k_max = scenario.filter.k_max;
    let bound = k_max * (1.0 + tol::INVARIANCE);
    let mut ok = true;
    let mut parts = Vec::new();
    for run in filtered(runs).filter(|r| r.spec.gamma <= tol::INVARIANCE_MAX_GAMMA) {
        let k = max_k(run);
        ok &= k <= bound;
        parts.push(format!("γ={}: {k:.4} J", run.spec.gamma));
    }
    let off_factor = if scenario.kind == ScenarioKind::StepResponse {
        tol::OFF_EXCEEDANCE
    } else {
        1.0
    };
    let mut off_seen = false;
    for run in runs.iter().filter(|r| r.spec.case == Case::Off) {
        let k = max_k(run);
        off_seen = true;
        ok &= k > off_factor * k_max;
        parts.push(format!("off: {k:.4} J (needs > {:.3})", off_factor * k_max));
    }
    if !off_seen {
        parts.push("no unfiltered run".into());
    }
    Check::new(
        "forward invariance",
        ok && !parts.is_empty(),
        format!("bound {bound:.4} J; {}", parts.join(", ")),
    )
}

/// Peak kinetic energy is non-decreasing in γ.
pub fn conservatism(runs: &[ScenarioRun]) -> Check {
    let mut pts: Vec<(f64, f64)> = filtered(runs).map(|r| (r.spec.gamma, max_k(r))).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let ok = pts.windows(2).all(|w| w[1].1 >= w[0].1);
    let detail = pts
        .iter()
        .map(|(g, k)| format!("γ={g}: {k:.4}"))
        .collect::<Vec<_>>()
        .join(" <= ");
    Check::new("max K_e non-decreasing in γ", ok && pts.len() >= 2, detail)
}

/// `K_e,ss − K_max = P_ext/γ` within `STEADY_STATE` at every sweep point.
pub fn steady_state_law(sweep: &PowerSweep) -> Check {
    let mut worst = 0.0f64;
    let mut missing = 0usize;
    for p in &sweep.points {
        match p.excess {
            Some(e) => {
                let predicted = p.p_ext / p.gamma;
                worst = worst.max(((e - predicted) / predicted).abs());
            }
            None => missing += 1,
        }
    }
    Check::new(
        "K_e,ss - K_max = P_ext/γ",
        missing == 0 && !sweep.points.is_empty() && worst <= tol::STEADY_STATE,
        format!(
            "worst relative error {:.2}% over {} points, {missing} without steady state",
            100.0 * worst,
            sweep.points.len()
        ),
    )
}

/// Fitted slope per γ satisfies `|slope·γ − 1| ≤ SLOPE`.
pub fn slope_law(sweep: &PowerSweep) -> Check {
    let mut ok = !sweep.fits.is_empty();
    let mut parts = Vec::new();
    for f in &sweep.fits {
        match &f.fit {
            Some(fit) => {
                let dev = (fit.slope * f.gamma - 1.0).abs();
                ok &= dev <= tol::SLOPE;
                parts.push(format!("γ={}: slope·γ={:.4}", f.gamma, fit.slope * f.gamma));
            }
            None => {
                ok = false;
                parts.push(format!("γ={}: no fit", f.gamma));
            }
        }
    }
    Check::new("|slope·γ - 1| <= 0.1", ok, parts.join(", "))
}

fn error_of(runs: &[ScenarioRun], case: Case, k_max: f64) -> Option<(f64, &ScenarioRun)> {
    runs.iter()
        .find(|r| r.spec.case == case)
        .map(|r| (max_k(r) - k_max, r))
}

/// Aware error at most `AWARE_RATIO` of the agnostic error.
pub fn aware_improvement(scenario: &Scenario, runs: &[ScenarioRun]) -> Check {
    let k_max = scenario.filter.k_max;
    match (
        error_of(runs, Case::Aware, k_max),
        error_of(runs, Case::Agnostic, k_max),
    ) {
        (Some((aware, _)), Some((agnostic, _))) => Check::new(
            "aware error <= 0.3 x agnostic",
            aware <= tol::AWARE_RATIO * agnostic,
            format!("aware {aware:.4} J, agnostic {agnostic:.4} J"),
        ),
        _ => Check::new(
            "aware error <= 0.3 x agnostic",
            false,
            "needs aware and agnostic runs".into(),
        ),
    }
}

/// Agnostic error at most `max P_ext/γ + AGNOSTIC_SLACK·K_max`.
pub fn agnostic_bound(scenario: &Scenario, runs: &[ScenarioRun]) -> Check {
    let k_max = scenario.filter.k_max;
    match error_of(runs, Case::Agnostic, k_max) {
        Some((err, run)) => {
            let p_max = run
                .output
                .records
                .iter()
                .map(|r| r.p_ext)
                .fold(0.0f64, f64::max);
            let bound = p_max / run.spec.gamma + tol::AGNOSTIC_SLACK * k_max;
            Check::new(
                "agnostic error <= max P_ext/γ + 2% K_max",
                err <= bound,
                format!("error {err:.4} J, bound {bound:.4} J (max P_ext {p_max:.3} W)"),
            )
        }
        None => Check::new(
            "agnostic error <= max P_ext/γ + 2% K_max",
            false,
            "needs an agnostic run".into(),
        ),
    }
}

/// The unfiltered run peaks above every filtered run.
pub fn unfiltered_exceeds(runs: &[ScenarioRun]) -> Check {
    let off = runs.iter().find(|r| r.spec.case == Case::Off).map(max_k);
    let filt = filtered(runs).map(max_k).fold(f64::NEG_INFINITY, f64::max);
    match off {
        Some(k) => Check::new(
            "off exceeds filtered",
            k > filt,
            format!("off {k:.4} J, filtered max {filt:.4} J"),
        ),
        None => Check::new(
            "off exceeds filtered",
            false,
            "needs an unfiltered run".into(),
        ),
    }
}

/// Checks relevant to the scenario's kind.
pub fn scenario_checks(
    scenario: &Scenario,
    runs: &[ScenarioRun],
    sweep: Option<&PowerSweep>,
) -> Vec<Check> {
    let mut out = vec![power_extraction(runs), minimal_invasiveness(runs)];
    let has = |c: Case| runs.iter().any(|r| r.spec.case == c);
    match scenario.kind {
        ScenarioKind::StepResponse | ScenarioKind::ContactLoss => {
            out.push(forward_invariance(scenario, runs));
            if filtered(runs).count() >= 2 {
                out.push(conservatism(runs));
            }
        }
        ScenarioKind::ExternalInteraction => {
            if has(Case::Aware) && has(Case::Agnostic) {
                out.push(aware_improvement(scenario, runs));
            }
            if has(Case::Agnostic) {
                out.push(agnostic_bound(scenario, runs));
            }
            if has(Case::Off) && filtered(runs).count() > 0 {
                out.push(unfiltered_exceeds(runs));
            }
        }
        ScenarioKind::ConstantPower => {
            if let Some(sweep) = sweep {
                out.push(steady_state_law(sweep));
                out.push(slope_law(sweep));
            }
        }
    }
    out
}
