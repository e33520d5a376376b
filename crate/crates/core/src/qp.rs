//! Exact solver for
//!
//! ```text
//! minimize ‖u − u_nom‖²  subject to  aᵀu ≥ b,  lower ≤ u ≤ upper
//! ```
//!
//! The minimizer is `u(λ) = clip(u_nom + λa)` for the unique `λ ≥ 0` at which
//! the non-decreasing piecewise-linear map `φ(λ) = aᵀu(λ) − b` crosses zero
//! (or `λ = 0` when `φ(0) ≥ 0`). The kinks of `φ` are the values of `λ` where a
//! coordinate enters or leaves a bound, so the root is located by scanning
//! the sorted kinks and solving the final linear segment in closed form.

use nalgebra::DVector;

use crate::error::QpError;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub u_nom: DVector<f64>,
    pub a: DVector<f64>,
    pub b: f64,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    /// Box-free problem.
    pub fn halfspace(u_nom: DVector<f64>, a: DVector<f64>, b: f64) -> Self {
        let m = u_nom.len();
        Self {
            u_nom,
            a,
            b,
            lower: DVector::from_element(m, f64::NEG_INFINITY),
            upper: DVector::from_element(m, f64::INFINITY),
        }
    }

    pub fn with_box(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn dim(&self) -> usize {
        self.u_nom.len()
    }

    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        (u - &self.u_nom).norm_squared()
    }

    fn validate(&self) -> Result<(), QpError> {
        let m = self.u_nom.len();
        if self.a.len() != m || self.lower.len() != m || self.upper.len() != m {
            return Err(QpError::Dimension {
                u_nom: m,
                a: self.a.len(),
                lower: self.lower.len(),
                upper: self.upper.len(),
            });
        }
        let finite = self
            .u_nom
            .iter()
            .chain(self.a.iter())
            .all(|v| v.is_finite())
            && self.b.is_finite()
            && !self
                .lower
                .iter()
                .chain(self.upper.iter())
                .any(|v| v.is_nan());
        if !finite {
            return Err(QpError::NonFinite);
        }
        for i in 0..m {
            if self.lower[i] > self.upper[i]
                || self.lower[i] == f64::INFINITY
                || self.upper[i] == f64::NEG_INFINITY
            {
                return Err(QpError::EmptyBox(i));
            }
        }
        Ok(())
    }

    fn clip(&self, i: usize, v: f64) -> f64 {
        v.max(self.lower[i]).min(self.upper[i])
    }

    fn point(&self, lambda: f64) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| {
            self.clip(i, self.u_nom[i] + lambda * self.a[i])
        })
    }

    fn margin(&self, lambda: f64) -> f64 {
        self.a.dot(&self.point(lambda)) - self.b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    /// The box does not meet the halfspace. `u` is then the box point that
    /// maximizes `aᵀu`.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: DVector<f64>,
    pub status: QpStatus,
    /// Multiplier of the halfspace constraint.
    pub multiplier: f64,
    pub kkt_residual: f64,
}

pub fn solve(problem: &QpProblem) -> Result<QpSolution, QpError> {
    problem.validate()?;
    let m = problem.dim();

    let phi0 = problem.margin(0.0);
    if phi0 >= 0.0 {
        return Ok(finish(problem, 0.0, problem.point(0.0)));
    }

    let mut kinks: Vec<f64> = Vec::with_capacity(2 * m);
    for i in 0..m {
        let ai = problem.a[i];
        if ai == 0.0 {
            continue;
        }
        for bound in [problem.lower[i], problem.upper[i]] {
            if bound.is_finite() {
                let lam = (bound - problem.u_nom[i]) / ai;
                if lam > 0.0 {
                    kinks.push(lam);
                }
            }
        }
    }
    kinks.sort_by(f64::total_cmp);
    kinks.dedup();

    let mut lo = 0.0;
    let mut phi_lo = phi0;
    for &kink in &kinks {
        let phi_k = problem.margin(kink);
        if phi_k >= 0.0 {
            return Ok(finish_on_segment(problem, lo, phi_lo, Some(kink)));
        }
        lo = kink;
        phi_lo = phi_k;
    }

    // Past the last kink φ grows only through coordinates unbounded along ±a.
    let slope = free_slope(problem, lo, None);
    if slope > 0.0 {
        return Ok(finish_on_segment(problem, lo, phi_lo, None));
    }

    let u = DVector::from_fn(m, |i, _| {
        let ai = problem.a[i];
        if ai > 0.0 {
            problem.upper[i]
        } else if ai < 0.0 {
            problem.lower[i]
        } else {
            problem.clip(i, problem.u_nom[i])
        }
    });
    let violation = (problem.b - problem.a.dot(&u)).max(0.0);
    Ok(QpSolution {
        u,
        status: QpStatus::Infeasible,
        multiplier: f64::INFINITY,
        kkt_residual: violation,
    })
}

/// Σ a_i² over coordinates strictly inside the box on (lo, hi).
fn free_slope(problem: &QpProblem, lo: f64, hi: Option<f64>) -> f64 {
    let probe = match hi {
        Some(hi) => 0.5 * (lo + hi),
        None => lo + 1.0,
    };
    (0..problem.dim())
        .filter(|&i| {
            let v = problem.u_nom[i] + probe * problem.a[i];
            problem.a[i] != 0.0 && v > problem.lower[i] && v < problem.upper[i]
        })
        .map(|i| problem.a[i] * problem.a[i])
        .sum()
}

fn finish_on_segment(problem: &QpProblem, lo: f64, phi_lo: f64, hi: Option<f64>) -> QpSolution {
    let slope = free_slope(problem, lo, hi);
    let mut lambda = lo - phi_lo / slope;
    if let Some(hi) = hi {
        lambda = lambda.min(hi);
    }
    finish(problem, lambda, problem.point(lambda))
}

fn finish(problem: &QpProblem, lambda: f64, u: DVector<f64>) -> QpSolution {
    let kkt_residual = kkt_residual(problem, &u, lambda);
    QpSolution {
        u,
        status: QpStatus::Optimal,
        multiplier: lambda,
        kkt_residual,
    }
}

/// Worst violation among primal feasibility, stationarity with sign-correct
/// box multipliers, and complementary slackness.
pub fn kkt_residual(problem: &QpProblem, u: &DVector<f64>, lambda: f64) -> f64 {
    let mut worst: f64 = (problem.b - problem.a.dot(u)).max(0.0);
    worst = worst.max((-lambda).max(0.0));
    worst = worst.max((lambda * (problem.a.dot(u) - problem.b)).abs());
    for i in 0..problem.dim() {
        worst = worst.max((problem.lower[i] - u[i]).max(0.0));
        worst = worst.max((u[i] - problem.upper[i]).max(0.0));
        let r = u[i] - problem.u_nom[i] - lambda * problem.a[i];
        let viol = if u[i] == problem.lower[i] && u[i] == problem.upper[i] {
            0.0
        } else if u[i] == problem.lower[i] {
            (-r).max(0.0)
        } else if u[i] == problem.upper[i] {
            r.max(0.0)
        } else {
            r.abs()
        };
        worst = worst.max(viol);
    }
    worst
}

/// Euclidean projection of `u_nom` onto `{u : aᵀu ≥ b}`.
pub fn halfspace_projection(
    u_nom: &DVector<f64>,
    a: &DVector<f64>,
    b: f64,
    eps: f64,
) -> Result<DVector<f64>, QpError> {
    let norm = a.norm();
    if norm <= eps {
        return Err(QpError::Degenerate { norm, eps });
    }
    let deficit = b - a.dot(u_nom);
    if deficit <= 0.0 {
        return Ok(u_nom.clone());
    }
    Ok(u_nom + a * (deficit / (norm * norm)))
}
