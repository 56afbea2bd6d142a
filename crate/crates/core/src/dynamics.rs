//! Planar 3-DOF rigid-body model (surge, sway, yaw) with a decoupled heave channel.
//!
//! ```text
//! F = M v' + C(v) v + D(v) v + b
//! D(v) = |v1| D1 + |v2| D2 + |v6| D6
//! mz w' = fz + Z - dz |w| w
//! ```
//!
//! Everything here is a pure function of its inputs. [`VehicleModel`] caches the
//! assembled mass matrix and its inverse so that [`step`] does no validation work
//! per tick.

use nalgebra::{Cholesky, Matrix3, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::{hull, GripperState};

/// Margin kept from pi/2 so that `sec(pitch)` stays finite.
pub const PITCH_EPSILON: f64 = 1e-4;

/// Row-major 3x3 matrix as it appears in configuration files.
pub type Rows3 = [[f64; 3]; 3];

pub(crate) fn to_matrix(rows: &Rows3) -> Matrix3<f64> {
    Matrix3::new(
        rows[0][0], rows[0][1], rows[0][2], rows[1][0], rows[1][1], rows[1][2], rows[2][0],
        rows[2][1], rows[2][2],
    )
}

fn diag(a: f64, b: f64, c: f64) -> Rows3 {
    [[a, 0.0, 0.0], [0.0, b, 0.0], [0.0, 0.0, c]]
}

/// Body-frame velocities.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyVelocity {
    /// m/s
    pub surge: f64,
    /// m/s
    pub sway: f64,
    /// rad/s
    pub yaw_rate: f64,
    /// m/s, positive down
    pub heave: f64,
}

impl BodyVelocity {
    pub fn new(surge: f64, sway: f64, yaw_rate: f64, heave: f64) -> Self {
        Self {
            surge,
            sway,
            yaw_rate,
            heave,
        }
    }

    /// The `(v1, v2, v6)` vector of the planar model.
    pub fn planar(&self) -> Vector3<f64> {
        Vector3::new(self.surge, self.sway, self.yaw_rate)
    }

    pub fn is_finite(&self) -> bool {
        self.surge.is_finite()
            && self.sway.is_finite()
            && self.yaw_rate.is_finite()
            && self.heave.is_finite()
    }
}

/// Inertial pose. `z` is depth (positive down). Pitch is an exogenous constant,
/// not a state: the model has no pitch dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub pitch: f64,
}

impl Pose {
    pub fn is_finite(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.z.is_finite()
            && self.yaw.is_finite()
            && self.pitch.is_finite()
    }
}

/// Applied forces and moments in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyForce {
    /// N
    pub surge: f64,
    /// N
    pub sway: f64,
    /// N·m
    pub yaw: f64,
    /// N, positive down
    pub heave: f64,
}

impl BodyForce {
    pub const ZERO: BodyForce = BodyForce {
        surge: 0.0,
        sway: 0.0,
        yaw: 0.0,
        heave: 0.0,
    };

    pub fn new(surge: f64, sway: f64, yaw: f64, heave: f64) -> Self {
        Self {
            surge,
            sway,
            yaw,
            heave,
        }
    }

    pub fn planar(&self) -> Vector3<f64> {
        Vector3::new(self.surge, self.sway, self.yaw)
    }
}

impl std::ops::Add for BodyForce {
    type Output = BodyForce;

    fn add(self, rhs: BodyForce) -> BodyForce {
        BodyForce {
            surge: self.surge + rhs.surge,
            sway: self.sway + rhs.sway,
            yaw: self.yaw + rhs.yaw,
            heave: self.heave + rhs.heave,
        }
    }
}

/// Entries of the symmetric planar mass matrix (rigid body plus added mass), and
/// the effective mass of the heave channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MassMatrix {
    pub m11: f64,
    pub m12: f64,
    pub m16: f64,
    pub m22: f64,
    pub m26: f64,
    pub m66: f64,
    /// Heave effective mass, kg.
    pub heave: f64,
}

/// Yaw inertia of a uniform rectangular slab, `m (L^2 + W^2) / 12`.
pub fn slab_yaw_inertia(mass: f64, length: f64, width: f64) -> f64 {
    mass * (length * length + width * width) / 12.0
}

impl Default for MassMatrix {
    /// No added mass; yaw inertia estimated from the hull footprint.
    fn default() -> Self {
        Self::diagonal(
            hull::MASS,
            hull::MASS,
            slab_yaw_inertia(hull::MASS, hull::LENGTH, hull::WIDTH),
        )
    }
}

impl MassMatrix {
    /// Uncoupled mass matrix; heave mass follows surge.
    pub fn diagonal(m11: f64, m22: f64, m66: f64) -> Self {
        Self {
            m11,
            m12: 0.0,
            m16: 0.0,
            m22,
            m26: 0.0,
            m66,
            heave: m11,
        }
    }
}

/// Builds `[[m11,m12,m16],[m12,m22,m26],[m16,m26,m66]]`, rejecting anything that is
/// not positive definite (Sylvester's criterion on the leading minors).
pub fn assemble_mass_matrix(params: &MassMatrix) -> Result<Matrix3<f64>> {
    for (name, value) in [
        ("mass.m11", params.m11),
        ("mass.m22", params.m22),
        ("mass.m66", params.m66),
        ("mass.heave", params.heave),
    ] {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::invalid(name, format!("must be positive, got {value}")));
        }
    }
    for (name, value) in [
        ("mass.m12", params.m12),
        ("mass.m16", params.m16),
        ("mass.m26", params.m26),
    ] {
        if !value.is_finite() {
            return Err(Error::invalid(name, "must be finite"));
        }
    }
    let MassMatrix {
        m11,
        m12,
        m16,
        m22,
        m26,
        m66,
        ..
    } = *params;
    let m = Matrix3::new(m11, m12, m16, m12, m22, m26, m16, m26, m66);

    let minors = [m11, m11 * m22 - m12 * m12, m.determinant()];
    for (k, value) in minors.into_iter().enumerate() {
        if value <= 0.0 {
            return Err(Error::NotPositiveDefinite {
                minor: k + 1,
                value,
            });
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoriolisVariant {
    /// The published matrix, entry for entry. Not skew-symmetric.
    #[default]
    Paper,
    /// Skew-symmetric form built from the same mass entries; conserves kinetic energy.
    Skew,
}

/// Velocity-dependent coupling matrix `C(v)`.
pub fn coriolis_matrix(
    params: &MassMatrix,
    v: &BodyVelocity,
    variant: CoriolisVariant,
) -> Matrix3<f64> {
    let MassMatrix {
        m11,
        m12,
        m16,
        m22,
        m26,
        ..
    } = *params;
    let (v1, v2, v6) = (v.surge, v.sway, v.yaw_rate);
    match variant {
        CoriolisVariant::Paper => Matrix3::new(
            0.0,
            -v6 * m26,
            v2 * m22,
            v6 * m16,
            0.0,
            -v1 * m12,
            -v2 * m12,
            v1 * m11,
            0.0,
        ),
        CoriolisVariant::Skew => {
            let a = m22 * v2 + m26 * v6;
            let b = m11 * v1 + m12 * v2;
            Matrix3::new(0.0, 0.0, -a, 0.0, 0.0, b, a, -b, 0.0)
        }
    }
}

/// Quadratic drag: one matrix per planar axis plus a scalar for heave.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DragModel {
    pub surge: Rows3,
    pub sway: Rows3,
    pub yaw: Rows3,
    /// N·s²/m²
    pub heave: f64,
}

/// Surge drag coefficient balancing the two horizontal thrusters at 0.135 m/s.
pub const DEFAULT_SURGE_DRAG: f64 = 2.0 / (0.135 * 0.135);

impl Default for DragModel {
    /// Surge coefficient from the terminal-velocity balance; the other axes are
    /// scaled from it by projected area (sway, heave) and a strip-theory estimate
    /// of the yaw moment over the hull footprint.
    fn default() -> Self {
        Self::from_surge_coefficient(DEFAULT_SURGE_DRAG)
    }
}

impl DragModel {
    pub fn from_surge_coefficient(surge: f64) -> Self {
        let sway = surge * hull::LENGTH / hull::WIDTH;
        let yaw = (sway * hull::LENGTH.powi(3) + surge * hull::WIDTH.powi(3)) / 32.0;
        let heave = surge * hull::LENGTH / hull::HEIGHT;
        Self {
            surge: diag(surge, 0.0, 0.0),
            sway: diag(0.0, sway, 0.0),
            yaw: diag(0.0, 0.0, yaw),
            heave,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, m) in [
            ("drag.surge", &self.surge),
            ("drag.sway", &self.sway),
            ("drag.yaw", &self.yaw),
        ] {
            if m.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::invalid(name, "entries must be finite"));
            }
        }
        if !(self.heave.is_finite() && self.heave >= 0.0) {
            return Err(Error::invalid("drag.heave", "must be non-negative"));
        }
        Ok(())
    }
}

/// `D(v) = |v1| D1 + |v2| D2 + |v6| D6`.
pub fn drag_matrix(params: &DragModel, v: &BodyVelocity) -> Matrix3<f64> {
    to_matrix(&params.surge) * v.surge.abs()
        + to_matrix(&params.sway) * v.sway.abs()
        + to_matrix(&params.yaw) * v.yaw_rate.abs()
}

/// Systematic bias; only the yaw entry is populated.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasVector {
    /// N·m
    pub yaw: f64,
}

impl BiasVector {
    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, self.yaw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hydrostatics {
    /// N
    pub weight: f64,
    /// N
    pub buoyancy: f64,
}

impl Default for Hydrostatics {
    /// Neutrally buoyant.
    fn default() -> Self {
        let w = hull::MASS * 9.81;
        Self {
            weight: w,
            buoyancy: w,
        }
    }
}

/// `T(theta)` mapping `(v1, v2, v6)` to inertial rates.
pub fn transform_matrix(pitch: f64) -> Result<Matrix3<f64>> {
    check_pitch(pitch)?;
    let (s, c) = pitch.sin_cos();
    Ok(Matrix3::new(
        1.0,
        0.0,
        s / c,
        0.0,
        1.0,
        0.0,
        0.0,
        0.0,
        1.0 / c,
    ))
}

fn check_pitch(pitch: f64) -> Result<()> {
    if !pitch.is_finite() || pitch.abs() >= std::f64::consts::FRAC_PI_2 - PITCH_EPSILON {
        return Err(Error::SingularTransform { pitch });
    }
    Ok(())
}

/// Body-to-inertial rotation `R(theta, psi)`.
pub fn rotation_matrix(pitch: f64, yaw: f64) -> Matrix3<f64> {
    let (st, ct) = pitch.sin_cos();
    let (sp, cp) = yaw.sin_cos();
    Matrix3::new(
        cp * ct,
        -sp,
        cp * st,
        sp * ct,
        cp,
        sp * st,
        -st,
        0.0,
        ct,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RestoringVariant {
    /// The expanded closed-form vector; third component `(W - B) cos(theta)`.
    #[default]
    Expanded,
    /// `R(theta, psi) [0, 0, B - W]^T`; third component `(B - W) cos(theta)`.
    Rotated,
}

/// Net hydrostatic force along body axes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RestoringForce {
    pub surge: f64,
    pub sway: f64,
    /// Delivered to the heave channel as-is (z positive down).
    pub heave: f64,
}

impl RestoringForce {
    /// Contribution to the planar `(surge, sway, yaw)` force vector.
    pub fn planar(&self) -> Vector3<f64> {
        Vector3::new(self.surge, self.sway, 0.0)
    }
}

pub fn restoring_force(
    h: &Hydrostatics,
    pitch: f64,
    yaw: f64,
    variant: RestoringVariant,
) -> RestoringForce {
    let net = h.buoyancy - h.weight;
    match variant {
        RestoringVariant::Expanded => {
            let (st, ct) = pitch.sin_cos();
            let (sp, cp) = yaw.sin_cos();
            RestoringForce {
                surge: net * cp * st,
                sway: net * sp * st,
                heave: (h.weight - h.buoyancy) * ct,
            }
        }
        RestoringVariant::Rotated => {
            let x = rotation_matrix(pitch, yaw) * Vector3::new(0.0, 0.0, net);
            RestoringForce {
                surge: x[0],
                sway: x[1],
                heave: x[2],
            }
        }
    }
}

/// Solves the planar equation of motion for `v'`:
/// `M^-1 (F + X - C(v) v - D(v) v - b)`.
pub fn acceleration(
    mass: &MassMatrix,
    coriolis: CoriolisVariant,
    drag: &DragModel,
    bias: &BiasVector,
    v: &BodyVelocity,
    applied: &BodyForce,
    restoring: &Vector3<f64>,
) -> Result<Vector3<f64>> {
    let m = assemble_mass_matrix(mass)?;
    let chol = Cholesky::new(m).ok_or(Error::NotPositiveDefinite {
        minor: 3,
        value: m.determinant(),
    })?;
    let nu = v.planar();
    let rhs = applied.planar() + restoring
        - coriolis_matrix(mass, v, coriolis) * nu
        - drag_matrix(drag, v) * nu
        - bias.vector();
    Ok(chol.solve(&rhs))
}

/// Decoupled heave: `(fz + Z - dz |w| w) / mz`.
pub fn heave_acceleration(mass: f64, drag: f64, w: f64, force: f64, restoring: f64) -> f64 {
    (force + restoring - drag * w.abs() * w) / mass
}

/// Inertial-frame rates of the pose.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseRate {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub z: f64,
}

/// `(v1', v2', psi') = T(theta) (v1, v2, v6)`, then `(v1', v2')` rotated by yaw onto
/// the inertial plane.
pub fn pose_rate(v: &BodyVelocity, pose: &Pose) -> Result<PoseRate> {
    check_pitch(pose.pitch)?;
    Ok(pose_rate_unchecked(v, pose.pitch.tan(), 1.0 / pose.pitch.cos(), pose.yaw))
}

#[inline]
fn pose_rate_unchecked(v: &BodyVelocity, tan_pitch: f64, sec_pitch: f64, yaw: f64) -> PoseRate {
    let forward = v.surge + tan_pitch * v.yaw_rate;
    let lateral = v.sway;
    let (s, c) = yaw.sin_cos();
    PoseRate {
        x: c * forward - s * lateral,
        y: s * forward + c * lateral,
        yaw: sec_pitch * v.yaw_rate,
        z: v.heave,
    }
}

/// Hydrostatic pressure `rho g h`.
pub fn depth_pressure(rho: f64, g: f64, depth: f64) -> Result<f64> {
    if depth < 0.0 {
        return Err(Error::NegativeDepth(depth));
    }
    Ok(rho * g * depth)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VelocityLimits {
    /// m/s, applies to surge, sway and heave.
    pub linear: f64,
    /// rad/s
    pub angular: f64,
}

impl Default for VelocityLimits {
    fn default() -> Self {
        Self {
            linear: 10.0,
            angular: 10.0,
        }
    }
}

/// Everything the equations of motion need.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsParams {
    pub mass: MassMatrix,
    pub drag: DragModel,
    pub bias: BiasVector,
    pub hydrostatics: Hydrostatics,
    pub coriolis: CoriolisVariant,
    pub restoring: RestoringVariant,
    /// Fixed pitch angle, rad.
    pub pitch: f64,
    pub limits: VelocityLimits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Integrator {
    /// Classical fourth-order Runge-Kutta.
    #[default]
    #[serde(rename = "rk4")]
    Rk4,
    /// Velocity first, then pose with the updated velocity.
    #[serde(rename = "sie")]
    SemiImplicitEuler,
}

impl std::str::FromStr for Integrator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "rk4" => Ok(Integrator::Rk4),
            "sie" | "semi_implicit_euler" => Ok(Integrator::SemiImplicitEuler),
            other => Err(format!("unknown integrator `{other}` (expected rk4 or sie)")),
        }
    }
}

/// Full vehicle state carried between ticks.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleState {
    pub velocity: BodyVelocity,
    pub pose: Pose,
    pub gripper: GripperState,
    /// s
    pub time: f64,
}

impl VehicleState {
    pub fn at_depth(depth: f64, pitch: f64) -> Self {
        Self {
            pose: Pose {
                z: depth,
                pitch,
                ..Pose::default()
            },
            ..Self::default()
        }
    }

    /// `0.5 v^T M v` of the planar motion plus heave.
    pub fn kinetic_energy(&self, model: &VehicleModel) -> f64 {
        let nu = self.velocity.planar();
        0.5 * nu.dot(&(model.mass_matrix() * nu))
            + 0.5 * model.params.mass.heave * self.velocity.heave.powi(2)
    }
}

type StateVector = SVector<f64, 8>;

/// Validated dynamics with the mass matrix pre-factored.
#[derive(Debug, Clone)]
pub struct VehicleModel {
    params: DynamicsParams,
    mass: Matrix3<f64>,
    mass_inv: Matrix3<f64>,
    drag: [Matrix3<f64>; 3],
    tan_pitch: f64,
    sec_pitch: f64,
}

impl VehicleModel {
    pub fn new(params: DynamicsParams) -> Result<Self> {
        let mass = assemble_mass_matrix(&params.mass)?;
        let mass_inv = Cholesky::new(mass)
            .ok_or(Error::NotPositiveDefinite {
                minor: 3,
                value: mass.determinant(),
            })?
            .inverse();
        params.drag.validate()?;
        check_pitch(params.pitch)?;
        let h = &params.hydrostatics;
        if !(h.weight > 0.0 && h.buoyancy > 0.0) {
            return Err(Error::invalid(
                "hydrostatics",
                "weight and buoyancy must be positive",
            ));
        }
        if !params.bias.yaw.is_finite() {
            return Err(Error::invalid("bias.yaw", "must be finite"));
        }
        if !(params.limits.linear > 0.0 && params.limits.angular > 0.0) {
            return Err(Error::invalid("limits", "must be positive"));
        }
        Ok(Self {
            params,
            mass,
            mass_inv,
            drag: [
                to_matrix(&params.drag.surge),
                to_matrix(&params.drag.sway),
                to_matrix(&params.drag.yaw),
            ],
            tan_pitch: params.pitch.tan(),
            sec_pitch: 1.0 / params.pitch.cos(),
        })
    }

    pub fn params(&self) -> &DynamicsParams {
        &self.params
    }

    pub fn mass_matrix(&self) -> &Matrix3<f64> {
        &self.mass
    }

    /// Planar acceleration and heave acceleration at the given state.
    pub fn accelerations(&self, v: &BodyVelocity, yaw: f64, force: &BodyForce) -> (Vector3<f64>, f64) {
        let p = &self.params;
        let restoring = restoring_force(&p.hydrostatics, p.pitch, yaw, p.restoring);
        let nu = v.planar();
        let drag = self.drag[0] * v.surge.abs()
            + self.drag[1] * v.sway.abs()
            + self.drag[2] * v.yaw_rate.abs();
        let rhs = force.planar() + restoring.planar()
            - coriolis_matrix(&p.mass, v, p.coriolis) * nu
            - drag * nu
            - p.bias.vector();
        let heave = heave_acceleration(
            p.mass.heave,
            p.drag.heave,
            v.heave,
            force.heave,
            restoring.heave,
        );
        (self.mass_inv * rhs, heave)
    }

    fn rates(&self, s: &StateVector, force: &BodyForce) -> StateVector {
        let v = BodyVelocity::new(s[0], s[1], s[2], s[3]);
        let (planar, heave) = self.accelerations(&v, s[7], force);
        let pr = pose_rate_unchecked(&v, self.tan_pitch, self.sec_pitch, s[7]);
        StateVector::from([planar[0], planar[1], planar[2], heave, pr.x, pr.y, pr.z, pr.yaw])
    }

    /// Time derivative of `(surge, sway, yaw_rate, heave, x, y, z, yaw)`.
    pub fn state_rate(&self, state: &VehicleState, force: &BodyForce) -> [f64; 8] {
        self.rates(&pack(state), force).into()
    }
}

fn pack(s: &VehicleState) -> StateVector {
    let v = &s.velocity;
    let p = &s.pose;
    StateVector::from([v.surge, v.sway, v.yaw_rate, v.heave, p.x, p.y, p.z, p.yaw])
}

fn unpack(x: &StateVector, template: &VehicleState, dt: f64) -> VehicleState {
    VehicleState {
        velocity: BodyVelocity::new(x[0], x[1], x[2], x[3]),
        pose: Pose {
            x: x[4],
            y: x[5],
            z: x[6],
            yaw: x[7],
            pitch: template.pose.pitch,
        },
        gripper: template.gripper,
        time: template.time + dt,
    }
}

fn check_state(state: &VehicleState, limits: &VelocityLimits) -> Result<()> {
    if !state.velocity.is_finite() || !state.pose.is_finite() || !state.time.is_finite() {
        return Err(Error::DivergedState(format!("non-finite state {state:?}")));
    }
    let v = &state.velocity;
    if v.surge.abs() > limits.linear
        || v.sway.abs() > limits.linear
        || v.heave.abs() > limits.linear
        || v.yaw_rate.abs() > limits.angular
    {
        return Err(Error::DivergedState(format!(
            "velocity {v:?} beyond sanity limits"
        )));
    }
    Ok(())
}

/// Advances velocities and pose by `dt` with `force` held constant over the step.
/// The vehicle cannot rise above the surface (`z >= 0`).
pub fn step(
    state: &VehicleState,
    force: &BodyForce,
    model: &VehicleModel,
    dt: f64,
    integrator: Integrator,
) -> Result<VehicleState> {
    if !(dt > 0.0 && dt <= 0.1) {
        return Err(Error::InvalidStep { dt });
    }
    check_state(state, &model.params.limits)?;
    let x0 = pack(state);
    let x1 = match integrator {
        Integrator::Rk4 => {
            let k1 = model.rates(&x0, force);
            let k2 = model.rates(&(x0 + k1 * (dt / 2.0)), force);
            let k3 = model.rates(&(x0 + k2 * (dt / 2.0)), force);
            let k4 = model.rates(&(x0 + k3 * dt), force);
            x0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
        }
        Integrator::SemiImplicitEuler => {
            let k = model.rates(&x0, force);
            let mut x = x0;
            for i in 0..4 {
                x[i] += dt * k[i];
            }
            let v = BodyVelocity::new(x[0], x[1], x[2], x[3]);
            let pr = pose_rate_unchecked(&v, model.tan_pitch, model.sec_pitch, x0[7]);
            x[4] += dt * pr.x;
            x[5] += dt * pr.y;
            x[6] += dt * pr.z;
            x[7] += dt * pr.yaw;
            x
        }
    };
    let mut next = unpack(&x1, state, dt);
    if next.pose.z < 0.0 {
        next.pose.z = 0.0;
        next.velocity.heave = next.velocity.heave.max(0.0);
    }
    check_state(&next, &model.params.limits)?;
    Ok(next)
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, SQRT_2};

    fn unit_mass() -> MassMatrix {
        MassMatrix {
            heave: 1.0,
            ..MassMatrix::diagonal(1.0, 1.0, 1.0)
        }
    }

    #[test]
    fn default_mass_matrix_uses_slab_inertia() {
        let m = assemble_mass_matrix(&MassMatrix::default()).unwrap();
        // 11 * (0.640^2 + 0.705^2) / 12
        let expected_m66 = 11.0 * 0.906625 / 12.0;
        assert_relative_eq!(m[(2, 2)], expected_m66, epsilon = 1e-12);
        assert_relative_eq!(m[(2, 2)], 0.831, epsilon = 1e-3);
        assert_eq!(m[(0, 0)], 11.0);
        assert_eq!(m[(1, 1)], 11.0);
        assert_eq!(m[(0, 1)], 0.0);
    }

    #[test]
    fn identity_mass_matrix() {
        assert_eq!(assemble_mass_matrix(&unit_mass()).unwrap(), Matrix3::identity());
    }

    #[test]
    fn indefinite_mass_matrix_names_the_minor() {
        let m = MassMatrix {
            m12: 2.0,
            ..unit_mass()
        };
        match assemble_mass_matrix(&m) {
            Err(Error::NotPositiveDefinite { minor, value }) => {
                assert_eq!(minor, 2);
                assert_eq!(value, -3.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_positive_diagonal_rejected() {
        let m = MassMatrix {
            m66: 0.0,
            ..unit_mass()
        };
        assert!(matches!(
            assemble_mass_matrix(&m),
            Err(Error::InvalidParameter { name: "mass.m66", .. })
        ));
    }

    #[test]
    fn coriolis_vanishes_at_rest() {
        let m = MassMatrix {
            m12: 0.3,
            m16: -0.2,
            m26: 0.1,
            ..MassMatrix::default()
        };
        for variant in [CoriolisVariant::Paper, CoriolisVariant::Skew] {
            assert_eq!(
                coriolis_matrix(&m, &BodyVelocity::default(), variant),
                Matrix3::zeros()
            );
        }
    }

    #[test]
    fn coriolis_pure_surge_single_entry() {
        let m = MassMatrix::default();
        let c = coriolis_matrix(&m, &BodyVelocity::new(1.0, 0.0, 0.0, 0.0), CoriolisVariant::Paper);
        let mut expected = Matrix3::zeros();
        expected[(2, 1)] = m.m11;
        assert_eq!(c, expected);
    }

    #[test]
    fn published_coriolis_injects_energy_skew_does_not() {
        let m = MassMatrix::diagonal(11.0, 11.0, 1.0);
        let v = BodyVelocity::new(1.0, 2.0, 3.0, 0.0);
        let nu = v.planar();
        let c = coriolis_matrix(&m, &v, CoriolisVariant::Paper);
        assert_eq!(
            c,
            Matrix3::new(0.0, 0.0, 22.0, 0.0, 0.0, 0.0, 0.0, 11.0, 0.0)
        );
        assert_eq!(nu.dot(&(c * nu)), 132.0);
        let s = coriolis_matrix(&m, &v, CoriolisVariant::Skew);
        assert_eq!(nu.dot(&(s * nu)), 0.0);
    }

    #[test]
    fn drag_matrix_cases() {
        let d = DragModel::default();
        assert_eq!(drag_matrix(&d, &BodyVelocity::default()), Matrix3::zeros());

        let d = DragModel {
            surge: diag(109.7, 0.0, 0.0),
            ..DragModel::default()
        };
        let dm = drag_matrix(&d, &BodyVelocity::new(0.135, 0.0, 0.0, 0.0));
        assert_relative_eq!(dm[(0, 0)], 14.8095, epsilon = 1e-9);
        assert_relative_eq!(dm[(0, 0)] * 0.135, 2.0, epsilon = 1e-3);
        assert_eq!(dm[(1, 1)], 0.0);

        let d = DragModel {
            surge: diag(1.0, 1.0, 1.0),
            sway: diag(0.0, 0.0, 0.0),
            yaw: diag(0.0, 0.0, 0.0),
            heave: 0.0,
        };
        assert_eq!(
            drag_matrix(&d, &BodyVelocity::new(-1.0, 0.0, 0.0, 0.0)),
            Matrix3::identity()
        );
    }

    #[test]
    fn default_surge_drag_matches_balance() {
        assert_relative_eq!(DEFAULT_SURGE_DRAG, 109.739369, epsilon = 1e-6);
    }

    #[test]
    fn transform_cases() {
        assert_eq!(transform_matrix(0.0).unwrap(), Matrix3::identity());
        let t = transform_matrix(FRAC_PI_4).unwrap();
        assert_relative_eq!(t, Matrix3::new(1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, SQRT_2), epsilon = 1e-12);
        assert!(matches!(
            transform_matrix(1.5707),
            Err(Error::SingularTransform { .. })
        ));
        assert!(transform_matrix(-FRAC_PI_2).is_err());
    }

    #[test]
    fn rotation_cases() {
        assert_eq!(rotation_matrix(0.0, 0.0), Matrix3::identity());
        let r = rotation_matrix(0.0, FRAC_PI_2);
        assert_relative_eq!(
            r,
            Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn restoring_neutral_is_zero() {
        let h = Hydrostatics::default();
        for variant in [RestoringVariant::Expanded, RestoringVariant::Rotated] {
            let r = restoring_force(&h, 0.0, 0.0, variant);
            assert_eq!((r.surge, r.sway, r.heave), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn restoring_variants_disagree_on_heave_sign() {
        let h = Hydrostatics {
            weight: 110.0,
            buoyancy: 100.0,
        };
        let e = restoring_force(&h, 0.0, 0.0, RestoringVariant::Expanded);
        let r = restoring_force(&h, 0.0, 0.0, RestoringVariant::Rotated);
        assert_eq!((e.surge, e.sway, e.heave), (0.0, 0.0, 10.0));
        assert_eq!((r.surge, r.sway, r.heave), (0.0, 0.0, -10.0));
    }

    #[test]
    fn acceleration_cases() {
        let d = DynamicsParams::default();
        let zero = acceleration(
            &d.mass,
            d.coriolis,
            &d.drag,
            &d.bias,
            &BodyVelocity::default(),
            &BodyForce::ZERO,
            &Vector3::zeros(),
        )
        .unwrap();
        assert_eq!(zero, Vector3::zeros());

        let a = acceleration(
            &d.mass,
            d.coriolis,
            &d.drag,
            &d.bias,
            &BodyVelocity::default(),
            &BodyForce::new(2.0, 0.0, 0.0, 0.0),
            &Vector3::zeros(),
        )
        .unwrap();
        assert_relative_eq!(a[0], 2.0 / 11.0, epsilon = 1e-15);
        assert_eq!((a[1], a[2]), (0.0, 0.0));

        let drag = DragModel {
            surge: diag(109.7, 0.0, 0.0),
            ..d.drag
        };
        let a = acceleration(
            &d.mass,
            d.coriolis,
            &drag,
            &d.bias,
            &BodyVelocity::new(0.135, 0.0, 0.0, 0.0),
            &BodyForce::new(2.0, 0.0, 0.0, 0.0),
            &Vector3::zeros(),
        )
        .unwrap();
        assert!(a[0].abs() < 1e-3, "{a}");
    }

    #[test]
    fn acceleration_propagates_mass_error() {
        let d = DynamicsParams::default();
        let bad = MassMatrix {
            m12: 20.0,
            ..d.mass
        };
        assert!(acceleration(
            &bad,
            d.coriolis,
            &d.drag,
            &d.bias,
            &BodyVelocity::default(),
            &BodyForce::ZERO,
            &Vector3::zeros()
        )
        .is_err());
    }

    #[test]
    fn heave_cases() {
        assert_eq!(heave_acceleration(11.0, 100.0, 0.0, 0.0, 0.0), 0.0);
        assert_relative_eq!(heave_acceleration(11.0, 100.0, 0.0, 4.0, 0.0), 4.0 / 11.0);
        let w_inf = (10.0f64 / 100.0).sqrt();
        assert_relative_eq!(w_inf, 0.316, epsilon = 1e-3);
        assert!(heave_acceleration(11.0, 100.0, w_inf, 0.0, 10.0).abs() < 1e-12);
    }

    #[test]
    fn pose_rate_cases() {
        let pose = Pose::default();
        let r = pose_rate(&BodyVelocity::new(1.0, 0.0, 0.0, 0.0), &pose).unwrap();
        assert_eq!((r.x, r.y, r.yaw, r.z), (1.0, 0.0, 0.0, 0.0));
        let pose = Pose {
            yaw: FRAC_PI_2,
            ..Pose::default()
        };
        let r = pose_rate(&BodyVelocity::new(1.0, 0.0, 0.0, 0.0), &pose).unwrap();
        assert!(r.x.abs() < 1e-15);
        assert_relative_eq!(r.y, 1.0);
        let pose = Pose {
            pitch: 1.5707,
            ..Pose::default()
        };
        assert!(pose_rate(&BodyVelocity::default(), &pose).is_err());
    }

    #[test]
    fn depth_pressure_cases() {
        assert_eq!(depth_pressure(1000.0, 9.81, 0.0).unwrap(), 0.0);
        assert_relative_eq!(depth_pressure(1000.0, 9.81, 5.0).unwrap(), 49050.0, epsilon = 1e-9);
        assert_relative_eq!(depth_pressure(1000.0, 9.81, 0.05).unwrap(), 490.5, epsilon = 1e-9);
        assert!(matches!(
            depth_pressure(1000.0, 9.81, -1.0),
            Err(Error::NegativeDepth(_))
        ));
    }

    #[test]
    fn step_fixed_point() {
        let model = VehicleModel::new(DynamicsParams::default()).unwrap();
        let s0 = VehicleState::at_depth(1.0, 0.0);
        let s1 = step(&s0, &BodyForce::ZERO, &model, 0.01, Integrator::Rk4).unwrap();
        assert_eq!(s1.velocity, s0.velocity);
        assert_eq!(s1.pose, s0.pose);
        assert_eq!(s1.time, 0.01);
    }

    #[test]
    fn step_rejects_bad_dt_and_nan() {
        let model = VehicleModel::new(DynamicsParams::default()).unwrap();
        let s0 = VehicleState::default();
        for dt in [0.0, -0.01, 0.2, f64::NAN] {
            assert!(matches!(
                step(&s0, &BodyForce::ZERO, &model, dt, Integrator::Rk4),
                Err(Error::InvalidStep { .. })
            ));
        }
        let mut bad = s0;
        bad.velocity.surge = f64::NAN;
        assert!(matches!(
            step(&bad, &BodyForce::ZERO, &model, 0.01, Integrator::Rk4),
            Err(Error::DivergedState(_))
        ));
    }

    #[test]
    fn huge_force_trips_the_sanity_limit() {
        let model = VehicleModel::new(DynamicsParams::default()).unwrap();
        let mut s = VehicleState::at_depth(1.0, 0.0);
        let force = BodyForce::new(1e9, 0.0, 0.0, 0.0);
        let err = (0..100)
            .try_for_each(|_| {
                s = step(&s, &force, &model, 0.01, Integrator::Rk4)?;
                Ok::<_, Error>(())
            })
            .unwrap_err();
        assert!(matches!(err, Error::DivergedState(_)));
    }

    #[test]
    fn surface_is_a_ceiling() {
        let model = VehicleModel::new(DynamicsParams::default()).unwrap();
        let mut s = VehicleState::at_depth(0.01, 0.0);
        let up = BodyForce::new(0.0, 0.0, 0.0, -4.0);
        for _ in 0..500 {
            s = step(&s, &up, &model, 0.01, Integrator::SemiImplicitEuler).unwrap();
            assert!(s.pose.z >= 0.0);
        }
        assert_eq!(s.pose.z, 0.0);
    }
}
