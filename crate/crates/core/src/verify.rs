//! Self-checks run by `ecbf verify`: randomized oracle suites over the
//! dynamics, the QP solver, the filter and the simulator.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controllers::zero_controller;
use crate::dynamics::{
    compute_terms, gravity_vector, inertia_matrix, potential_energy, RobotModel, State,
};
use crate::filter::{self, FilterConfig, InputBox, InteractionMode};
use crate::qp::{self, QpProblem, QpStatus};
use crate::simulator::{self, rate_limit_velocity, Experiment, SimConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub name: &'static str,
    /// Worst value observed.
    pub worst: f64,
    pub limit: f64,
    pub passed: bool,
}

impl Measurement {
    /// Passes when `worst <= limit`.
    fn at_most(name: &'static str, worst: f64, limit: f64) -> Self {
        Self {
            name,
            worst,
            limit,
            passed: worst <= limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub measurements: Vec<Measurement>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.measurements.iter().all(|m| m.passed)
    }
}

impl std::fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for m in &self.measurements {
            let tag = if m.passed { "PASS" } else { "FAIL" };
            writeln!(
                f,
                "[{tag}] {}/{}: worst {:.3e} (limit {:.1e})",
                self.suite, m.name, m.worst, m.limit
            )?;
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(lo..hi))
}

fn random_state(rng: &mut ChaCha8Rng, n: usize) -> State {
    State::new(
        uniform(rng, n, -std::f64::consts::PI, std::f64::consts::PI),
        uniform(rng, n, -3.0, 3.0),
    )
}

/// Skew symmetry of `Ḋ − 2C`, gravity against the potential gradient, `Ḋ`
/// against a finite difference of `D`, and positive definiteness of `D`.
pub fn dynamics_suite(model: &RobotModel, samples: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.n_links();
    let (mut skew, mut grav, mut rate, mut min_eig) = (0.0f64, 0.0f64, 0.0f64, f64::INFINITY);
    let fd = 1e-6;
    for _ in 0..samples {
        let s = random_state(&mut rng, n);
        let t = compute_terms(model, &s).expect("dimensions match");
        let v = uniform(&mut rng, n, -1.0, 1.0);
        let nmat = &t.inertia_rate - 2.0 * &t.coriolis;
        skew = skew.max(v.dot(&(&nmat * &v)).abs());

        let g = gravity_vector(model, &s.q);
        for j in 0..n {
            let mut qp = s.q.clone();
            let mut qm = s.q.clone();
            qp[j] += fd;
            qm[j] -= fd;
            let dv = (potential_energy(model, &qp) - potential_energy(model, &qm)) / (2.0 * fd);
            grav = grav.max((dv - g[j]).abs());
        }

        let dp = inertia_matrix(model, &(&s.q + &s.qdot * fd));
        let dm = inertia_matrix(model, &(&s.q - &s.qdot * fd));
        let ddot = (dp - dm) / (2.0 * fd);
        rate = rate.max((ddot - &t.inertia_rate).amax());

        min_eig = min_eig.min(t.inertia.symmetric_eigenvalues().min());
    }
    SuiteReport {
        suite: "dynamics",
        measurements: vec![
            Measurement::at_most("skew_symmetry", skew, 1e-10),
            Measurement::at_most("gravity_vs_potential_gradient", grav, 1e-6),
            Measurement::at_most("inertia_rate_vs_finite_difference", rate, 1e-6),
            Measurement::at_most("negative_min_inertia_eigenvalue", -min_eig, -1e-12),
        ],
    }
}

/// Dykstra's alternating projection onto `{aᵀu ≥ b} ∩ box`.
pub fn dykstra(problem: &QpProblem, iterations: usize) -> DVector<f64> {
    let m = problem.dim();
    let an2 = problem.a.norm_squared();
    let mut x = problem.u_nom.clone();
    let mut p = DVector::zeros(m);
    let mut q = DVector::zeros(m);
    for _ in 0..iterations {
        let y_in = &x + &p;
        let y = DVector::from_fn(m, |i, _| y_in[i].clamp(problem.lower[i], problem.upper[i]));
        p = &y_in - &y;
        let z_in = &y + &q;
        let deficit = problem.b - problem.a.dot(&z_in);
        let z = if deficit > 0.0 && an2 > 0.0 {
            &z_in + &problem.a * (deficit / an2)
        } else {
            z_in.clone()
        };
        q = &z_in - &z;
        if (&z - &x).amax().max((&z - &y).amax()) < 1e-15 {
            x = z;
            break;
        }
        x = z;
    }
    DVector::from_fn(m, |i, _| x[i].clamp(problem.lower[i], problem.upper[i]))
}

fn random_boxed_problem(rng: &mut ChaCha8Rng) -> QpProblem {
    let m = rng.gen_range(1..=7);
    let u_nom = uniform(rng, m, -5.0, 5.0);
    let a = uniform(rng, m, -1.0, 1.0);
    let lower = uniform(rng, m, -4.0, -0.5);
    let upper = uniform(rng, m, 0.5, 4.0);
    let best = (0..m)
        .map(|i| a[i].max(0.0) * upper[i] + a[i].min(0.0) * lower[i])
        .sum::<f64>();
    let b = rng.gen_range(-best..best);
    QpProblem::halfspace(u_nom, a, b).with_box(lower, upper)
}

/// KKT residual of the solver and its objective against Dykstra's method on
/// random feasible boxed problems.
pub fn qp_suite(samples: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut kkt, mut obj, mut feas) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..samples {
        let p = random_boxed_problem(&mut rng);
        let s = qp::solve(&p).expect("valid problem");
        assert_eq!(s.status, QpStatus::Optimal);
        kkt = kkt.max(s.kkt_residual);
        let reference = dykstra(&p, 200_000);
        obj = obj.max((p.objective(&s.u) - p.objective(&reference)).abs());
        feas = feas.max((p.b - p.a.dot(&s.u)).max(0.0));
    }
    SuiteReport {
        suite: "qp",
        measurements: vec![
            Measurement::at_most("kkt_residual", kkt, 1e-9),
            Measurement::at_most("objective_vs_dykstra", obj, 1e-6),
            Measurement::at_most("halfspace_violation", feas, 1e-9),
        ],
    }
}

/// Box-free interventions against the closed form, and `q̇ᵀB·u_safe ≤ 0`
/// over random calls in both modes, with and without a box containing the
/// nominal input.
pub fn filter_suite(model: &RobotModel, samples: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.n_links();
    let mut closed = 0.0f64;
    let mut p_safe = f64::NEG_INFINITY;
    let mut interventions = 0usize;
    for k in 0..samples {
        let s = random_state(&mut rng, n);
        let u_nom = uniform(&mut rng, n, -20.0, 20.0);
        let tau = uniform(&mut rng, n, -5.0, 5.0);
        let mode = if k % 2 == 0 {
            InteractionMode::Agnostic
        } else {
            InteractionMode::Aware
        };
        let mut cfg =
            FilterConfig::new(rng.gen_range(0.0..2.0), rng.gen_range(0.5..60.0)).with_mode(mode);
        let boxed = k % 3 == 0;
        if boxed {
            let limits = u_nom.abs().map(|v| v + rng.gen_range(0.1..10.0));
            cfg.input_box = Some(InputBox::symmetric(&limits));
        }
        let r = filter::filter(model, &s, &u_nom, &tau, &cfg).expect("valid call");
        p_safe = p_safe.max(r.p_safe);
        if r.intervened && !boxed {
            interventions += 1;
            let bq = model.actuation().transpose() * &s.qdot;
            let expected = &u_nom + &bq * (r.psi / bq.norm_squared());
            closed = closed.max((&r.u - expected).amax());
        }
    }
    SuiteReport {
        suite: "filter",
        measurements: vec![
            Measurement::at_most("closed_form_deviation", closed, 1e-9),
            Measurement::at_most("max_p_safe", p_safe, 1e-9),
            Measurement {
                name: "interventions_sampled",
                worst: interventions as f64,
                limit: 1.0,
                passed: interventions > 0,
            },
        ],
    }
}

struct FreeSwing {
    q0: DVector<f64>,
    qd0: DVector<f64>,
}

impl Experiment for FreeSwing {
    fn initial_state(&self, _model: &RobotModel) -> State {
        State::new(self.q0.clone(), self.qd0.clone())
    }

    fn nominal_input(&mut self, _t: f64, _measured: &State, model: &RobotModel) -> DVector<f64> {
        zero_controller(model)
    }
}

fn swing(model: &RobotModel, dt: f64, substeps: usize) -> simulator::RunOutput {
    let n = model.n_links();
    let mut exp = FreeSwing {
        q0: DVector::from_fn(n, |i, _| 0.3 - 0.2 * i as f64),
        qd0: DVector::from_fn(n, |i, _| 1.0 + 0.5 * i as f64),
    };
    let sim = SimConfig {
        duration: 1.0,
        dt_control: dt,
        physics_substeps: substeps,
        gravity_compensated: false,
        ..SimConfig::default()
    };
    let cfg = FilterConfig::new(1e3, 1.0);
    simulator::run(model, &sim, &cfg, &mut exp).expect("free swing runs")
}

fn final_error(a: &simulator::RunOutput, b: &simulator::RunOutput) -> f64 {
    (&a.final_state.q - &b.final_state.q)
        .amax()
        .max((&a.final_state.qdot - &b.final_state.qdot).amax())
}

/// Ratio of the end-state errors of a free swing integrated with one and
/// with two RK4 substeps per control period, against a fine reference.
pub fn rk4_halving_ratio(model: &RobotModel) -> f64 {
    let dt = 1e-2;
    let reference = swing(model, dt, 64);
    let e1 = final_error(&swing(model, dt, 1), &reference);
    let e2 = final_error(&swing(model, dt, 2), &reference);
    e1 / e2
}

/// Energy audit of a free swing under gravity, the RK4 convergence ratio on
/// substep halving, and the rate limiter on adversarial noise.
pub fn simulator_suite(model: &RobotModel, seed: u64) -> SuiteReport {
    let audit = swing(model, 1e-3, 10).energy_audit(model).expect("audit");
    let ratio = rk4_halving_ratio(model);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.n_links();
    let dt = 1e-3;
    let qdd_max = DVector::from_element(n, 50.0);
    let mut prev = DVector::zeros(n);
    let mut worst_step = 0.0f64;
    for _ in 0..100_000 {
        let raw = uniform(&mut rng, n, -10.0, 10.0);
        let out = rate_limit_velocity(&prev, &raw, dt, &qdd_max);
        worst_step = worst_step.max(((&out - &prev).amax() - dt * 50.0).max(0.0));
        prev = out;
    }
    let mut smooth_dev = 0.0f64;
    let mut prev = DVector::zeros(n);
    for k in 1..1000 {
        let raw = DVector::from_element(n, (k as f64 * dt * 3.0).sin());
        let out = rate_limit_velocity(&prev, &raw, dt, &qdd_max);
        smooth_dev = smooth_dev.max((&out - &raw).amax());
        prev = out;
    }

    SuiteReport {
        suite: "simulator",
        measurements: vec![
            Measurement::at_most(
                "energy_audit_relative",
                audit.residual / audit.max_kinetic,
                1e-3,
            ),
            Measurement {
                name: "rk4_halving_ratio",
                worst: ratio,
                limit: 16.0,
                passed: (14.0..=18.0).contains(&ratio),
            },
            Measurement::at_most("rate_limit_excess", worst_step, 1e-12),
            Measurement::at_most("rate_limit_smooth_deviation", smooth_dev, 0.0),
        ],
    }
}

/// Every suite, in order.
pub fn all(model: &RobotModel, seed: u64) -> Vec<SuiteReport> {
    vec![
        dynamics_suite(model, 500, seed),
        qp_suite(1000, seed),
        filter_suite(model, 10_000, seed),
        simulator_suite(model, seed),
    ]
}
