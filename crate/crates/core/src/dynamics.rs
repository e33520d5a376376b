//! Closed-form Euler-Lagrange dynamics of a planar chain of revolute joints.
//!
//! Conventions:
//! - joint angles are relative; the absolute angle of link `i` is `q_0 + ... + q_i`;
//! - at `q = 0` every link points along `+x`;
//! - gravity acts along `-y` of the plane with magnitude `gravity`;
//! - each link carries its mass at `com` metres from its proximal joint and a
//!   rotational inertia `inertia` about that centre of mass;
//! - joint `i` may carry an armature (reflected rotor inertia) that adds to
//!   `D_ii` and does not depend on `q`.
//!
//! The Coriolis matrix is assembled from Christoffel symbols of the first kind
//! so that `Ḋ - 2C` is skew-symmetric by construction.

use nalgebra::{DMatrix, DVector, Matrix2xX, Vector2};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::ModelError;

/// Inertial and geometric parameters of one link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    /// kg
    pub mass: f64,
    /// m
    pub length: f64,
    /// Distance from the proximal joint to the centre of mass, m.
    pub com: f64,
    /// Rotational inertia about the centre of mass, kg·m².
    pub inertia: f64,
}

impl Link {
    /// Slender uniform rod: centre of mass at mid-length, `I = m l² / 12`.
    pub fn uniform_rod(mass: f64, length: f64) -> Self {
        Self {
            mass,
            length,
            com: 0.5 * length,
            inertia: mass * length * length / 12.0,
        }
    }
}

/// Armature of each desk-arm joint, kg·m².
pub const DESK_ARMATURE: f64 = 0.05;

/// An n-link planar revolute manipulator.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    links: Vec<Link>,
    gravity: f64,
    actuation: DMatrix<f64>,
    torque_limits: DVector<f64>,
    armature: DVector<f64>,
}

impl RobotModel {
    /// Builds a model with identity actuation and unbounded torques.
    pub fn new(links: Vec<Link>, gravity: f64) -> Result<Self, ModelError> {
        let n = links.len();
        Self::with_actuation(
            links,
            gravity,
            DMatrix::identity(n, n),
            DVector::from_element(n, f64::INFINITY),
        )
    }

    pub fn with_actuation(
        links: Vec<Link>,
        gravity: f64,
        actuation: DMatrix<f64>,
        torque_limits: DVector<f64>,
    ) -> Result<Self, ModelError> {
        let n = links.len();
        let model = Self {
            links,
            gravity,
            actuation,
            torque_limits,
            armature: DVector::zeros(n),
        };
        model.validate()?;
        Ok(model)
    }

    /// Replaces the per-joint armature, kg·m².
    pub fn with_armature(mut self, armature: DVector<f64>) -> Result<Self, ModelError> {
        self.armature = armature;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<(), ModelError> {
        let n = self.links.len();
        if n == 0 {
            return Err(ModelError::Invalid("model needs at least one link".into()));
        }
        for (i, link) in self.links.iter().enumerate() {
            if !(link.mass.is_finite() && link.mass > 0.0) {
                return Err(ModelError::Invalid(format!(
                    "link {i}: mass must be positive and finite, got {}",
                    link.mass
                )));
            }
            if !(link.length.is_finite() && link.length > 0.0) {
                return Err(ModelError::Invalid(format!(
                    "link {i}: length must be positive and finite, got {}",
                    link.length
                )));
            }
            if !link.com.is_finite() {
                return Err(ModelError::Invalid(format!("link {i}: com must be finite")));
            }
            if !(link.inertia.is_finite() && link.inertia >= 0.0) {
                return Err(ModelError::Invalid(format!(
                    "link {i}: inertia must be non-negative and finite, got {}",
                    link.inertia
                )));
            }
        }
        if !self.gravity.is_finite() {
            return Err(ModelError::Invalid("gravity must be finite".into()));
        }
        if self.actuation.shape() != (n, n) {
            return Err(ModelError::Invalid(format!(
                "actuation matrix must be {n}x{n}, got {}x{}",
                self.actuation.nrows(),
                self.actuation.ncols()
            )));
        }
        if self.actuation.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Invalid(
                "actuation matrix must be finite".into(),
            ));
        }
        let svd = self.actuation.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smin <= 1e-12 * smax.max(1.0) {
            return Err(ModelError::Invalid(
                "actuation matrix is rank deficient".into(),
            ));
        }
        if self.torque_limits.len() != n {
            return Err(ModelError::Invalid(format!(
                "expected {n} torque limits, got {}",
                self.torque_limits.len()
            )));
        }
        if self.torque_limits.iter().any(|&l| l.is_nan() || l <= 0.0) {
            return Err(ModelError::Invalid(
                "torque limits must be strictly positive".into(),
            ));
        }
        if self.armature.len() != n {
            return Err(ModelError::Invalid(format!(
                "expected {n} armature values, got {}",
                self.armature.len()
            )));
        }
        if self.armature.iter().any(|&a| !(a.is_finite() && a >= 0.0)) {
            return Err(ModelError::Invalid(
                "armature must be non-negative and finite".into(),
            ));
        }
        Ok(())
    }

    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn gravity(&self) -> f64 {
        self.gravity
    }

    pub fn actuation(&self) -> &DMatrix<f64> {
        &self.actuation
    }

    pub fn torque_limits(&self) -> &DVector<f64> {
        &self.torque_limits
    }

    pub fn armature(&self) -> &DVector<f64> {
        &self.armature
    }

    /// Same model with gravity switched off, as seen by a plant whose lower
    /// level compensates gravity perfectly.
    pub fn without_gravity(&self) -> Self {
        Self {
            gravity: 0.0,
            ..self.clone()
        }
    }

    pub fn reach(&self) -> f64 {
        self.links.iter().map(|l| l.length).sum()
    }

    pub fn check_state(&self, state: &State) -> Result<(), ModelError> {
        let n = self.n_links();
        if state.q.len() != n || state.qdot.len() != n {
            return Err(ModelError::Dimension {
                expected: n,
                got: state.q.len().max(state.qdot.len()),
            });
        }
        Ok(())
    }

    pub fn check_vector(&self, v: &DVector<f64>) -> Result<(), ModelError> {
        if v.len() != self.n_links() {
            return Err(ModelError::Dimension {
                expected: self.n_links(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Reads a model from a TOML file; see [`ModelFile`] for the schema.
    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile = toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        file.into_model()
    }

    /// Three uniform rods at desk scale; reach 1.0 m, total mass 2.5 kg,
    /// 0.05 kg·m² armature per joint.
    pub fn desk_arm() -> Self {
        Self::new(
            vec![
                Link::uniform_rod(1.2, 0.40),
                Link::uniform_rod(0.8, 0.35),
                Link::uniform_rod(0.5, 0.25),
            ],
            9.81,
        )
        .and_then(|m| m.with_armature(DVector::from_element(3, DESK_ARMATURE)))
        .expect("built-in model is valid")
    }
}

/// On-disk model description. All per-link arrays must have the same length.
///
/// ```toml
/// gravity = 9.81
/// masses = [1.2, 0.8, 0.5]
/// lengths = [0.40, 0.35, 0.25]
/// com = [0.20, 0.175, 0.125]          # optional, default length / 2
/// inertias = [0.016, 0.0082, 0.0026]  # optional, default uniform rod
/// torque_limits = [40.0, 30.0, 20.0]  # optional, default unbounded
/// actuation = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]  # optional
/// armature = [0.05, 0.05, 0.05]       # optional, default zero
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    pub masses: Vec<f64>,
    pub lengths: Vec<f64>,
    #[serde(default)]
    pub com: Option<Vec<f64>>,
    #[serde(default)]
    pub inertias: Option<Vec<f64>>,
    #[serde(default)]
    pub torque_limits: Option<Vec<f64>>,
    #[serde(default)]
    pub actuation: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub armature: Option<Vec<f64>>,
}

fn default_gravity() -> f64 {
    9.81
}

impl ModelFile {
    pub fn into_model(self) -> Result<RobotModel, ModelError> {
        let n = self.masses.len();
        let check_len = |name: &str, len: usize| {
            if len != n {
                Err(ModelError::Invalid(format!(
                    "`{name}` has {len} entries but `masses` has {n}"
                )))
            } else {
                Ok(())
            }
        };
        check_len("lengths", self.lengths.len())?;
        let com = match self.com {
            Some(c) => {
                check_len("com", c.len())?;
                c
            }
            None => self.lengths.iter().map(|l| 0.5 * l).collect(),
        };
        let inertias = match self.inertias {
            Some(i) => {
                check_len("inertias", i.len())?;
                i
            }
            None => self
                .masses
                .iter()
                .zip(&self.lengths)
                .map(|(m, l)| m * l * l / 12.0)
                .collect(),
        };
        let links = (0..n)
            .map(|i| Link {
                mass: self.masses[i],
                length: self.lengths[i],
                com: com[i],
                inertia: inertias[i],
            })
            .collect();
        let limits = match self.torque_limits {
            Some(l) => {
                check_len("torque_limits", l.len())?;
                DVector::from_vec(l)
            }
            None => DVector::from_element(n, f64::INFINITY),
        };
        let actuation = match self.actuation {
            Some(rows) => {
                check_len("actuation", rows.len())?;
                for (i, r) in rows.iter().enumerate() {
                    if r.len() != n {
                        return Err(ModelError::Invalid(format!(
                            "actuation row {i} has {} entries, expected {n}",
                            r.len()
                        )));
                    }
                }
                DMatrix::from_fn(n, n, |i, j| rows[i][j])
            }
            None => DMatrix::identity(n, n),
        };
        let model = RobotModel::with_actuation(links, self.gravity, actuation, limits)?;
        match self.armature {
            Some(a) => {
                check_len("armature", a.len())?;
                model.with_armature(DVector::from_vec(a))
            }
            None => Ok(model),
        }
    }
}

/// Generalized positions (rad) and velocities (rad/s).
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
}

impl State {
    pub fn new(q: DVector<f64>, qdot: DVector<f64>) -> Self {
        Self { q, qdot }
    }

    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            q,
            qdot: DVector::zeros(n),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::at_rest(DVector::zeros(n))
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qdot.iter()).all(|v| v.is_finite())
    }
}

/// Dynamics terms at one state.
#[derive(Debug, Clone)]
pub struct DynamicsTerms {
    /// Inertia matrix D(q).
    pub inertia: DMatrix<f64>,
    /// Coriolis matrix C(q, q̇) from Christoffel symbols.
    pub coriolis: DMatrix<f64>,
    /// Gravity torque g(q) = ∂V/∂q.
    pub gravity: DVector<f64>,
    /// End-effector position Jacobian (2 × n).
    pub jacobian: Matrix2xX<f64>,
    /// Ḋ = Σ_l ∂D/∂q_l q̇_l.
    pub inertia_rate: DMatrix<f64>,
}

fn absolute_angles(q: &DVector<f64>) -> Vec<f64> {
    q.iter()
        .scan(0.0, |acc, &qi| {
            *acc += qi;
            Some(*acc)
        })
        .collect()
}

/// Jacobian of the point at distance `dist` along link `link`.
fn point_jacobian(model: &RobotModel, theta: &[f64], link: usize, dist: f64) -> Matrix2xX<f64> {
    let n = model.n_links();
    let mut jac = Matrix2xX::zeros(n);
    // Column j sums the perpendicular lever arms of links j..=link.
    let mut acc = Vector2::zeros();
    for k in (0..=link).rev() {
        let len = if k == link {
            dist
        } else {
            model.links[k].length
        };
        let (s, c) = theta[k].sin_cos();
        acc += Vector2::new(-s, c) * len;
        jac.set_column(k, &acc);
    }
    jac
}

/// ∂J/∂q_wrt for the point Jacobian above.
fn point_jacobian_partial(
    model: &RobotModel,
    theta: &[f64],
    link: usize,
    dist: f64,
    wrt: usize,
) -> Matrix2xX<f64> {
    let n = model.n_links();
    let mut djac = Matrix2xX::zeros(n);
    if wrt > link {
        return djac;
    }
    let mut acc = Vector2::zeros();
    for k in (0..=link).rev() {
        // θ_k depends on q_wrt iff wrt <= k.
        if wrt <= k {
            let len = if k == link {
                dist
            } else {
                model.links[k].length
            };
            let (s, c) = theta[k].sin_cos();
            acc -= Vector2::new(c, s) * len;
        }
        djac.set_column(k, &acc);
    }
    djac
}

fn point_position(model: &RobotModel, theta: &[f64], link: usize, dist: f64) -> Vector2<f64> {
    let mut p = Vector2::zeros();
    for (k, angle) in theta.iter().enumerate().take(link + 1) {
        let len = if k == link {
            dist
        } else {
            model.links[k].length
        };
        let (s, c) = angle.sin_cos();
        p += Vector2::new(c, s) * len;
    }
    p
}

/// Inertia matrix D(q).
pub fn inertia_matrix(model: &RobotModel, q: &DVector<f64>) -> DMatrix<f64> {
    let n = model.n_links();
    let theta = absolute_angles(q);
    let mut d = DMatrix::zeros(n, n);
    for (i, link) in model.links.iter().enumerate() {
        let jc = point_jacobian(model, &theta, i, link.com);
        d += link.mass * jc.transpose() * &jc;
        // Angular velocity of link i is the sum of q̇_0..=q̇_i.
        for r in 0..=i {
            for c in 0..=i {
                d[(r, c)] += link.inertia;
            }
        }
    }
    for (i, a) in model.armature.iter().enumerate() {
        d[(i, i)] += a;
    }
    // Exact symmetry; the products above can differ in the last bit.
    (&d + d.transpose()) * 0.5
}

/// ∂D/∂q_wrt.
fn inertia_partial(model: &RobotModel, theta: &[f64], wrt: usize) -> DMatrix<f64> {
    let n = model.n_links();
    let mut dd = DMatrix::zeros(n, n);
    for (i, link) in model.links.iter().enumerate().skip(wrt) {
        let jc = point_jacobian(model, theta, i, link.com);
        let djc = point_jacobian_partial(model, theta, i, link.com, wrt);
        let prod = djc.transpose() * &jc;
        dd += link.mass * (&prod + prod.transpose());
    }
    dd
}

/// Gravity torque g(q).
pub fn gravity_vector(model: &RobotModel, q: &DVector<f64>) -> DVector<f64> {
    let n = model.n_links();
    if model.gravity == 0.0 {
        return DVector::zeros(n);
    }
    let theta = absolute_angles(q);
    let mut g = DVector::zeros(n);
    for (i, link) in model.links.iter().enumerate() {
        let jc = point_jacobian(model, &theta, i, link.com);
        for j in 0..n {
            g[j] += link.mass * model.gravity * jc[(1, j)];
        }
    }
    g
}

/// Gravitational potential energy, zero at y = 0.
pub fn potential_energy(model: &RobotModel, q: &DVector<f64>) -> f64 {
    let theta = absolute_angles(q);
    model
        .links
        .iter()
        .enumerate()
        .map(|(i, link)| link.mass * model.gravity * point_position(model, &theta, i, link.com).y)
        .sum()
}

/// End-effector (tip of the last link) position in the plane.
pub fn end_effector_position(model: &RobotModel, q: &DVector<f64>) -> Vector2<f64> {
    let theta = absolute_angles(q);
    let last = model.n_links() - 1;
    point_position(model, &theta, last, model.links[last].length)
}

pub fn end_effector_jacobian(model: &RobotModel, q: &DVector<f64>) -> Matrix2xX<f64> {
    let theta = absolute_angles(q);
    let last = model.n_links() - 1;
    point_jacobian(model, &theta, last, model.links[last].length)
}

/// Position of each link's centre of mass.
pub fn com_positions(model: &RobotModel, q: &DVector<f64>) -> Vec<Vector2<f64>> {
    let theta = absolute_angles(q);
    model
        .links
        .iter()
        .enumerate()
        .map(|(i, l)| point_position(model, &theta, i, l.com))
        .collect()
}

/// D, C, g, J and Ḋ at `state`.
pub fn compute_terms(model: &RobotModel, state: &State) -> Result<DynamicsTerms, ModelError> {
    model.check_state(state)?;
    let n = model.n_links();
    let theta = absolute_angles(&state.q);
    let inertia = inertia_matrix(model, &state.q);
    let partials: Vec<DMatrix<f64>> = (0..n).map(|l| inertia_partial(model, &theta, l)).collect();

    let mut inertia_rate = DMatrix::zeros(n, n);
    for (l, dd) in partials.iter().enumerate() {
        inertia_rate += dd * state.qdot[l];
    }

    // C_kj = Σ_i ½(∂D_kj/∂q_i + ∂D_ki/∂q_j − ∂D_ij/∂q_k) q̇_i
    let mut coriolis = DMatrix::zeros(n, n);
    for k in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                let christoffel =
                    0.5 * (partials[i][(k, j)] + partials[j][(k, i)] - partials[k][(i, j)]);
                acc += christoffel * state.qdot[i];
            }
            coriolis[(k, j)] = acc;
        }
    }

    Ok(DynamicsTerms {
        inertia,
        coriolis,
        gravity: gravity_vector(model, &state.q),
        jacobian: end_effector_jacobian(model, &state.q),
        inertia_rate,
    })
}

/// K_e = ½ q̇ᵀ D(q) q̇.
pub fn kinetic_energy(model: &RobotModel, state: &State) -> Result<f64, ModelError> {
    model.check_state(state)?;
    let d = inertia_matrix(model, &state.q);
    Ok(0.5 * state.qdot.dot(&(d * &state.qdot)))
}

/// Solves D q̈ = B u + τ_ext − C q̇ − g for q̈.
pub fn forward_dynamics(
    model: &RobotModel,
    state: &State,
    u: &DVector<f64>,
    tau_ext: &DVector<f64>,
) -> Result<DVector<f64>, ModelError> {
    model.check_vector(u)?;
    model.check_vector(tau_ext)?;
    let terms = compute_terms(model, state)?;
    let rhs = &model.actuation * u + tau_ext - &terms.coriolis * &state.qdot - &terms.gravity;
    let chol = terms
        .inertia
        .cholesky()
        .ok_or(ModelError::SingularInertia)?;
    Ok(chol.solve(&rhs))
}

/// K̇_e = −q̇ᵀg(q) + q̇ᵀBu + q̇ᵀτ_ext.
pub fn energy_rate(
    model: &RobotModel,
    state: &State,
    u: &DVector<f64>,
    tau_ext: &DVector<f64>,
) -> Result<f64, ModelError> {
    model.check_state(state)?;
    model.check_vector(u)?;
    model.check_vector(tau_ext)?;
    let g = gravity_vector(model, &state.q);
    let qd = &state.qdot;
    Ok(-qd.dot(&g) + qd.dot(&(&model.actuation * u)) + qd.dot(tau_ext))
}
