#![allow(dead_code)]

use energy_cbf::qp::QpProblem;
use energy_cbf::RobotModel;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(lo..hi))
}

/// Centre-of-mass positions, walking the chain one link at a time.
pub fn com_points(model: &RobotModel, q: &DVector<f64>) -> Vec<[f64; 2]> {
    let mut base = [0.0, 0.0];
    let mut angle = 0.0;
    let mut out = Vec::new();
    for (link, qi) in model.links().iter().zip(q.iter()) {
        angle += qi;
        out.push([
            base[0] + link.com * angle.cos(),
            base[1] + link.com * angle.sin(),
        ]);
        base = [
            base[0] + link.length * angle.cos(),
            base[1] + link.length * angle.sin(),
        ];
    }
    out
}

pub fn tip(model: &RobotModel, q: &DVector<f64>) -> [f64; 2] {
    let mut p = [0.0, 0.0];
    let mut angle = 0.0;
    for (link, qi) in model.links().iter().zip(q.iter()) {
        angle += qi;
        p = [
            p[0] + link.length * angle.cos(),
            p[1] + link.length * angle.sin(),
        ];
    }
    p
}

/// Kinetic energy from finite-difference centre-of-mass velocities.
pub fn kinetic_energy_fd(model: &RobotModel, q: &DVector<f64>, qdot: &DVector<f64>) -> f64 {
    let eps = 1e-6;
    let plus = com_points(model, &(q + qdot * eps));
    let minus = com_points(model, &(q - qdot * eps));
    let mut k = 0.0;
    let mut omega = 0.0;
    for (i, link) in model.links().iter().enumerate() {
        let vx = (plus[i][0] - minus[i][0]) / (2.0 * eps);
        let vy = (plus[i][1] - minus[i][1]) / (2.0 * eps);
        omega += qdot[i];
        k += 0.5 * link.mass * (vx * vx + vy * vy) + 0.5 * link.inertia * omega * omega;
        k += 0.5 * model.armature()[i] * qdot[i] * qdot[i];
    }
    k
}

/// Inertia matrix recovered from the energy oracle by polarization.
pub fn inertia_oracle(model: &RobotModel, q: &DVector<f64>) -> DMatrix<f64> {
    let n = model.n_links();
    let e = |i: usize| DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 });
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        d[(i, i)] = 2.0 * kinetic_energy_fd(model, q, &e(i));
        for j in 0..i {
            let kij = kinetic_energy_fd(model, q, &(e(i) + e(j)));
            let v = kij - 0.5 * d[(i, i)] - kinetic_energy_fd(model, q, &e(j));
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

pub fn potential_oracle(model: &RobotModel, q: &DVector<f64>) -> f64 {
    com_points(model, q)
        .iter()
        .zip(model.links())
        .map(|(p, l)| l.mass * model.gravity() * p[1])
        .sum()
}

/// Exact QP minimizer by enumerating every face of the feasible set.
/// `None` when the feasible set is empty.
pub fn qp_by_enumeration(p: &QpProblem) -> Option<DVector<f64>> {
    let m = p.dim();
    let tol = 1e-11 * (1.0 + p.b.abs() + p.a.norm() * p.u_nom.norm());
    let mut best: Option<(f64, DVector<f64>)> = None;
    let patterns = 3usize.pow(m as u32);
    for code in 0..patterns {
        // 0 free, 1 at lower, 2 at upper
        let mut c = code;
        let mut state = vec![0u8; m];
        let mut valid = true;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        for (i, s) in state.iter().enumerate() {
            if (*s == 1 && !p.lower[i].is_finite()) || (*s == 2 && !p.upper[i].is_finite()) {
                valid = false;
            }
        }
        if !valid {
            continue;
        }
        let fixed = |i: usize| match state[i] {
            1 => Some(p.lower[i]),
            2 => Some(p.upper[i]),
            _ => None,
        };
        let mut candidates = Vec::new();
        candidates.push(DVector::from_fn(m, |i, _| fixed(i).unwrap_or(p.u_nom[i])));
        let free_norm: f64 = (0..m)
            .filter(|&i| fixed(i).is_none())
            .map(|i| p.a[i] * p.a[i])
            .sum();
        if free_norm > 0.0 {
            let base = DVector::from_fn(m, |i, _| fixed(i).unwrap_or(p.u_nom[i]));
            let lambda = (p.b - p.a.dot(&base)) / free_norm;
            candidates.push(DVector::from_fn(m, |i, _| {
                fixed(i).unwrap_or(p.u_nom[i] + lambda * p.a[i])
            }));
        }
        for u in candidates {
            let feasible = p.a.dot(&u) >= p.b - tol
                && (0..m).all(|i| u[i] >= p.lower[i] - tol && u[i] <= p.upper[i] + tol);
            if feasible {
                let f = p.objective(&u);
                if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                    best = Some((f, u));
                }
            }
        }
    }
    best.map(|(_, u)| u)
}

/// Dykstra's alternating projection onto the halfspace and the box.
pub fn dykstra(p: &QpProblem, max_iter: usize) -> DVector<f64> {
    let m = p.dim();
    let an2 = p.a.norm_squared();
    let clip = |v: &DVector<f64>| DVector::from_fn(m, |i, _| v[i].clamp(p.lower[i], p.upper[i]));
    let mut x = p.u_nom.clone();
    let mut pc = DVector::zeros(m);
    let mut qc = DVector::zeros(m);
    for _ in 0..max_iter {
        let y = clip(&(&x + &pc));
        pc = &x + &pc - &y;
        let zin = &y + &qc;
        let deficit = p.b - p.a.dot(&zin);
        let z = if deficit > 0.0 {
            &zin + &p.a * (deficit / an2)
        } else {
            zin.clone()
        };
        qc = zin - &z;
        let done = (&z - &x).amax() < 1e-15 && (&z - &y).amax() < 1e-15;
        x = z;
        if done {
            break;
        }
    }
    clip(&x)
}

/// Random feasible boxed problem of dimension 1..=7.
pub fn random_boxed_problem(rng: &mut ChaCha8Rng) -> QpProblem {
    let m = rng.gen_range(1..=7);
    let u_nom = uniform(rng, m, -5.0, 5.0);
    let a = uniform(rng, m, -1.0, 1.0);
    let lower = uniform(rng, m, -4.0, -0.2);
    let upper = uniform(rng, m, 0.2, 4.0);
    let reach: f64 = (0..m)
        .map(|i| a[i].max(0.0) * upper[i] + a[i].min(0.0) * lower[i])
        .sum();
    let b = rng.gen_range(-reach..reach * 0.999);
    QpProblem::halfspace(u_nom, a, b).with_box(lower, upper)
}
