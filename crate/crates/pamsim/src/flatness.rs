//! Differential-flatness machinery.
//!
//! The seven-state plant (two angles, two rates, three pressures) with the
//! three valve flows as inputs is flat with output y = (theta_x, theta_y,
//! F3): the characteristic indices are (3, 3, 1), summing to the state
//! dimension, and the coupling matrix linking the flows to the third
//! derivatives of the angles and the first derivative of the force is
//! invertible over the whole tilt range. This module provides the drift and
//! input vector fields, the Lie derivatives of the outputs, the coupling
//! matrix with its factored determinant, the inversion from an output jet
//! back to the full state, and the open-loop control law built from them.
//!
//! States outside the certified tilt box are handled by clamping the angles
//! fed to trigonometry at +/- 89 degrees with a warning, so transient
//! excursions during simulation degrade gracefully instead of producing
//! poles.

use crate::error::{ModelError, Result};
use crate::muscle::{self, MuscleParams, EPS_OP_MAX, EPS_OP_MIN};
use crate::platform::{self, PlantState, PlatformGeometry};
use nalgebra::Matrix3;

/// Angles beyond this magnitude are clamped before trigonometric use.
const ANGLE_GUARD: f64 = 89.0 * std::f64::consts::PI / 180.0;

/// Coupling determinant floor, relative to its value at the level pose.
/// Legitimate operation keeps the ratio near 1 (the trig factor alone never
/// drops below ~0.7 inside the mechanical range), so anything under this
/// floor means a force-gain root slipped into the operating box.
const DET_REL_FLOOR: f64 = 1e-9;

/// The flat output: the two tilt angles and the third muscle's traction
/// force.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatOutput {
    /// theta_x (rad).
    pub y1: f64,
    /// theta_y (rad).
    pub y2: f64,
    /// F3 (N).
    pub y3: f64,
}

/// A flat output value with time derivatives up to the characteristic
/// indices: three for each angle, one for the force. The array lengths make
/// the order invariant structural.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatJet {
    /// [theta_x, d/dt, d2/dt2, d3/dt3] (rad, rad/s, rad/s^2, rad/s^3).
    pub y1: [f64; 4],
    /// [theta_y, d/dt, d2/dt2, d3/dt3].
    pub y2: [f64; 4],
    /// [F3, d/dt] (N, N/s).
    pub y3: [f64; 2],
}

/// Characteristic indices of the three flat outputs; they sum to the state
/// dimension, which is what makes the output flat without dynamics left
/// over.
pub const CHARACTERISTIC_INDICES: [usize; 3] = [3, 3, 1];

/// The 3x3 matrix of input-to-output Lie derivatives at one state, with its
/// determinant factored as gain_factor * trig_factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    pub mat: Matrix3<f64>,
    /// The purely angular factor m = cos(x1) cos^2(x2) sin(phi2 - phi1);
    /// positive over the operating tilt box.
    pub trig_factor: f64,
    /// (R/J)^2 H1 H2 H3 b1 b2 b3, the state-dependent gain part.
    pub gain_factor: f64,
}

impl CouplingMatrix {
    pub fn det(&self) -> f64 {
        self.mat.determinant()
    }

    /// Solve mat * q = rhs exploiting the sparsity of row 3 (only the third
    /// entry is nonzero): q3 comes directly from row 3, then the remaining
    /// 2x2 system is solved by its adjugate.
    pub fn solve(&self, rhs: [f64; 3]) -> [f64; 3] {
        let m = &self.mat;
        let q3 = rhs[2] / m[(2, 2)];
        let r1 = rhs[0] - m[(0, 2)] * q3;
        let r2 = rhs[1] - m[(1, 2)] * q3;
        let det2 = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        let q1 = (m[(1, 1)] * r1 - m[(0, 1)] * r2) / det2;
        let q2 = (-m[(1, 0)] * r1 + m[(0, 0)] * r2) / det2;
        [q1, q2, q3]
    }
}

fn guard_angle(a: f64) -> f64 {
    if a.abs() > ANGLE_GUARD {
        log::warn!(
            "angle {:.3} rad outside the +/-89 degree trig guard, clamping",
            a
        );
        ANGLE_GUARD.copysign(a)
    } else {
        a
    }
}

/// Contractions and contraction rates of the three muscles at a state, with
/// the angle guard applied.
fn kinematics(
    p: &MuscleParams,
    geom: &PlatformGeometry,
    x: &PlantState,
) -> ([f64; 3], [f64; 3], f64, f64) {
    let tx = guard_angle(x.theta_x);
    let ty = guard_angle(x.theta_y);
    let eps = std::array::from_fn(|i| muscle::contraction(p, geom, tx, ty, i));
    let eps_dot =
        std::array::from_fn(|i| muscle::contraction_rate(p, geom, tx, ty, x.omega_x, x.omega_y, i));
    (eps, eps_dot, tx, ty)
}

/// The drift vector field f(x): the plant right-hand side with all valve
/// flows zero.
///
/// Components 1-2 are the angular rates, 3-4 the accelerations from the
/// quasi-static muscle forces through the torque matrix (no disturbance; the
/// field describes the nominal model), and 5-7 the pressure drifts
/// a(eps_i, eps_dot_i) P_i. The drift multiplies the absolute pressure: the
/// gauge form a (P - P0) differs by a P0 and would not reproduce the
/// polytropic pressure equation.
pub fn drift_field(p: &MuscleParams, geom: &PlatformGeometry, x: &PlantState) -> Result<[f64; 7]> {
    let (eps, eps_dot, tx, ty) = kinematics(p, geom, x);
    let mut forces = [0.0; 3];
    for i in 0..3 {
        forces[i] = muscle::force(p, x.pressures[i], eps[i])?;
    }
    let m = platform::torque_matrix(geom, tx, ty);
    let ax = m[(0, 0)] * forces[0] + m[(0, 1)] * forces[1] + m[(0, 2)] * forces[2];
    let ay = m[(1, 0)] * forces[0] + m[(1, 1)] * forces[1] + m[(1, 2)] * forces[2];
    let mut out = [x.omega_x, x.omega_y, ax, ay, 0.0, 0.0, 0.0];
    for i in 0..3 {
        let (a, _) = muscle::state_coeffs(p, eps[i], eps_dot[i])?;
        out[4 + i] = a * x.pressures[i];
    }
    Ok(out)
}

/// The three input vector fields g_i(x). Column i is zero except at the
/// pressure slot of muscle i, where it equals b(eps_i) = k r T / V(eps_i).
pub fn input_fields(
    p: &MuscleParams,
    geom: &PlatformGeometry,
    x: &PlantState,
) -> Result<[[f64; 7]; 3]> {
    let (eps, _, _, _) = kinematics(p, geom, x);
    let mut cols = [[0.0; 7]; 3];
    for i in 0..3 {
        let (_, b) = muscle::state_coeffs(p, eps[i], 0.0)?;
        cols[i][4 + i] = b;
    }
    Ok(cols)
}

/// Lie derivatives of the flat outputs along the drift field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LieOutputs {
    /// L_f^2 y1: angular acceleration of theta_x under the nominal model.
    pub lf2_y1: f64,
    /// L_f^2 y2.
    pub lf2_y2: f64,
    /// L_f y3: drift rate of the third muscle force.
    pub lf_y3: f64,
    /// L_f^3 y1.
    pub lf3_y1: f64,
    /// L_f^3 y2.
    pub lf3_y2: f64,
}

/// Angular acceleration rows evaluated at a bare state array, used as the
/// scalar fields whose gradients give the third-order Lie derivatives.
fn accel_rows(p: &MuscleParams, geom: &PlatformGeometry, x: &[f64; 7]) -> Result<(f64, f64)> {
    let tx = guard_angle(x[0]);
    let ty = guard_angle(x[1]);
    let m = platform::torque_matrix(geom, tx, ty);
    let mut ax = 0.0;
    let mut ay = 0.0;
    for i in 0..3 {
        let eps = muscle::contraction(p, geom, tx, ty, i);
        let f = muscle::force(p, x[4 + i], eps)?;
        ax += m[(0, i)] * f;
        ay += m[(1, i)] * f;
    }
    Ok((ax, ay))
}

/// Evaluate the second-level Lie derivatives analytically and the
/// third-level ones as central finite-difference gradients of the analytic
/// second-level closed forms, contracted with the drift field. The
/// per-coordinate step is 1e-6 max(1, |x_i|); differencing an analytic
/// scalar this way is accurate to roughly 1e-10 relative and avoids
/// hand-expanding third-order expressions.
pub fn lie_outputs(
    p: &MuscleParams,
    geom: &PlatformGeometry,
    x: &PlantState,
) -> Result<LieOutputs> {
    let (eps, eps_dot, _, _) = kinematics(p, geom, x);
    let arr = x.to_array();
    let (lf2_y1, lf2_y2) = accel_rows(p, geom, &arr)?;

    // L_f y3: chain rule through eps3 at held pressure plus the pressure
    // drift scaled by the force gain.
    let (a3, _) = muscle::state_coeffs(p, eps[2], eps_dot[2])?;
    let lf_y3 = (muscle::force_gain_h_prime(p, eps[2]) * (x.pressures[2] - p.p_atm)
        + muscle::force_offset_l_prime(p, eps[2])?)
        * eps_dot[2]
        + muscle::force_gain_h(p, eps[2]) * a3 * x.pressures[2];

    let f = drift_field(p, geom, x)?;
    let mut grad1 = [0.0; 7];
    let mut grad2 = [0.0; 7];
    for i in 0..7 {
        let h = 1e-6 * arr[i].abs().max(1.0);
        let mut xp = arr;
        let mut xm = arr;
        xp[i] += h;
        xm[i] -= h;
        let (p1, p2) = accel_rows(p, geom, &xp)?;
        let (m1, m2) = accel_rows(p, geom, &xm)?;
        grad1[i] = (p1 - m1) / (2.0 * h);
        grad2[i] = (p2 - m2) / (2.0 * h);
    }
    let dot = |g: &[f64; 7]| g.iter().zip(f.iter()).map(|(a, b)| a * b).sum::<f64>();
    Ok(LieOutputs {
        lf2_y1,
        lf2_y2,
        lf_y3,
        lf3_y1: dot(&grad1),
        lf3_y2: dot(&grad2),
    })
}

/// The coupling matrix at a state.
///
/// Row 1: -(R/J) sin(phi_i) cos(x1) cos(x2) H(eps_i) b(eps_i).
/// Row 2:  (R/J) (cos(phi_i) cos(x2) + sin(phi_i) sin(x1) sin(x2)) H_i b_i.
/// Row 3: (0, 0, H3 b3).
///
/// The determinant factors exactly as (R/J)^2 H1 H2 H3 b1 b2 b3 m with
/// m = cos(x1) cos^2(x2) sin(phi2 - phi1), which never vanishes over the
/// mechanical tilt range; the factors are cached on the returned value. The
/// (R/J)^2 scale follows from the torque matrix the acceleration rows carry.
/// The pure-trigonometric factor m of the coupling determinant:
/// cos(theta_x) cos^2(theta_y) sin(phi2 - phi1). Strictly positive over the
/// mechanical tilt range for the standard 120-degree muscle layout;
/// sqrt(3)/2 at the level pose.
pub fn trig_determinant_factor(geom: &PlatformGeometry, theta_x: f64, theta_y: f64) -> f64 {
    theta_x.cos() * theta_y.cos().powi(2) * (geom.phi[1] - geom.phi[0]).sin()
}

pub fn coupling_matrix(
    p: &MuscleParams,
    geom: &PlatformGeometry,
    x: &PlantState,
) -> Result<CouplingMatrix> {
    let (eps, _, tx, ty) = kinematics(p, geom, x);
    let scale = geom.radius / geom.inertia;
    let (sx, cx) = tx.sin_cos();
    let (sy, cy) = ty.sin_cos();
    let mut h = [0.0; 3];
    let mut b = [0.0; 3];
    for i in 0..3 {
        h[i] = muscle::force_gain_h(p, eps[i]);
        let (_, bi) = muscle::state_coeffs(p, eps[i], 0.0)?;
        b[i] = bi;
    }
    let mut mat = Matrix3::zeros();
    for i in 0..3 {
        let (sp, cp) = geom.phi[i].sin_cos();
        mat[(0, i)] = -scale * sp * cx * cy * h[i] * b[i];
        mat[(1, i)] = scale * (cp * cy + sp * sx * sy) * h[i] * b[i];
    }
    mat[(2, 2)] = h[2] * b[2];

    let trig_factor = trig_determinant_factor(geom, tx, ty);
    let gain_factor = scale * scale * h[0] * h[1] * h[2] * b[0] * b[1] * b[2];

    // Relative singularity guard against the level-pose value, where every
    // contraction equals eps0 and m = sin(phi2 - phi1).
    let h0 = muscle::force_gain_h(p, p.eps0);
    let (_, b0) = muscle::state_coeffs(p, p.eps0, 0.0)?;
    let origin_det =
        (scale * scale * h0 * h0 * h0 * b0 * b0 * b0 * (geom.phi[1] - geom.phi[0]).sin()).abs();
    let det = mat.determinant();
    if det.abs() < DET_REL_FLOOR * origin_det {
        return Err(ModelError::NearSingularCoupling {
            det,
            floor: DET_REL_FLOOR * origin_det,
        });
    }
    Ok(CouplingMatrix {
        mat,
        trig_factor,
        gain_factor,
    })
}

/// Reconstruct the full plant state from a flat output jet.
///
/// Angles and rates are read off directly; the third pressure inverts the
/// quasi-static law at y3; the first two forces solve the 2x2 torque system
/// that equates the demanded angular accelerations with the force balance
/// once the third force is known, and their pressures invert the force law.
pub fn flat_to_state(p: &MuscleParams, geom: &PlatformGeometry, jet: &FlatJet) -> Result<PlantState> {
    let tx = guard_angle(jet.y1[0]);
    let ty = guard_angle(jet.y2[0]);
    let eps: [f64; 3] = std::array::from_fn(|i| muscle::contraction(p, geom, tx, ty, i));
    for (i, &e) in eps.iter().enumerate() {
        if !(EPS_OP_MIN..=EPS_OP_MAX).contains(&e) {
            log::warn!(
                "contraction of muscle {} at {:.4} outside the certified range [{}, {}]",
                i + 1,
                e,
                EPS_OP_MIN,
                EPS_OP_MAX
            );
        }
    }
    let p3 = muscle::pressure_from_force(p, jet.y3[0], eps[2])?;

    let (e_mat, g_col) = platform::eg_matrices(geom, tx, ty);
    let det = e_mat[(0, 0)] * e_mat[(1, 1)] - e_mat[(0, 1)] * e_mat[(1, 0)];
    let det_floor = 1e-14 * (geom.radius / geom.inertia).powi(2);
    if det.abs() < det_floor {
        return Err(ModelError::SingularInversion { det });
    }
    let r1 = jet.y1[2] - g_col[0] * jet.y3[0];
    let r2 = jet.y2[2] - g_col[1] * jet.y3[0];
    let f1 = (e_mat[(1, 1)] * r1 - e_mat[(0, 1)] * r2) / det;
    let f2 = (-e_mat[(1, 0)] * r1 + e_mat[(0, 0)] * r2) / det;
    let p1 = muscle::pressure_from_force(p, f1, eps[0])?;
    let p2 = muscle::pressure_from_force(p, f2, eps[1])?;

    Ok(PlantState {
        theta_x: jet.y1[0],
        theta_y: jet.y2[0],
        omega_x: jet.y1[1],
        omega_y: jet.y2[1],
        pressures: [p1, p2, p3],
    })
}

/// The open-loop (plus auxiliary input) control law: mass flows
/// q = Delta(x_ref)^-1 (y_ref^(rho) - [L_f^3 y1, L_f^3 y2, L_f y3] + w),
/// with every state-dependent term evaluated at the state reconstructed from
/// the reference jet. The feedback portion of the loop enters only through
/// w; with w = 0 and an exact model each output follows a pure chain of
/// integrators driven by its highest reference derivative.
pub fn feedforward_control(
    p: &MuscleParams,
    geom: &PlatformGeometry,
    jet: &FlatJet,
    w: [f64; 3],
) -> Result<[f64; 3]> {
    let x_ref = flat_to_state(p, geom, jet)?;
    let lie = lie_outputs(p, geom, &x_ref)?;
    let delta = coupling_matrix(p, geom, &x_ref)?;
    let rhs = [
        jet.y1[3] - lie.lf3_y1 + w[0],
        jet.y2[3] - lie.lf3_y2 + w[1],
        jet.y3[1] - lie.lf_y3 + w[2],
    ];
    Ok(delta.solve(rhs))
}
