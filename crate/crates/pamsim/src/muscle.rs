//! Pneumatic artificial muscle component model.
//!
//! One muscle is described by its contraction kinematics (how platform
//! angles map to shortening), a quasi-static force law affine in gauge
//! pressure, a volume model, and a polytropic pressure ODE. All operations
//! are pure functions of immutable parameter sets, so they are safe to share
//! across threads.
//!
//! Conventions: pressures are absolute (Pa), contraction eps is the relative
//! shortening versus rest length, and positive force is traction (the muscle
//! pulls; it can never push).

use crate::error::{ModelError, Result};
use crate::platform::PlatformGeometry;

/// Certified contraction operating range. All startup assertions (positive
/// force gain, positive volume, nonsingular force offset) are swept over
/// this interval.
pub const EPS_OP_MIN: f64 = -0.03;
pub const EPS_OP_MAX: f64 = 0.21;

/// Below this gain magnitude (m^2) pressure recovery from force is refused.
pub const FORCE_GAIN_GUARD: f64 = 1e-12;

/// Below this denominator magnitude the force offset L(eps) is refused.
pub const FORCE_OFFSET_DENOM_GUARD: f64 = 1e-9;

/// Physical constants of one muscle (all three muscles share one set).
///
/// The defaults are plausible commercial-muscle magnitudes chosen to produce
/// a well-shaped traction-force surface; they are configuration, not ground
/// truth, and everything downstream reads them from here.
#[derive(Debug, Clone, PartialEq)]
pub struct MuscleParams {
    /// Rest length l0 (m).
    pub l0: f64,
    /// Rest diameter D0 (m).
    pub d0: f64,
    /// Braid weave angle at rest theta0 (rad), in (0, pi/2).
    pub theta0: f64,
    /// Power coefficient alpha of the force gain (dimensionless).
    pub alpha: f64,
    /// Force offset coefficient K (N).
    pub k_force: f64,
    /// Force offset numerator coefficient eps_a (dimensionless).
    pub eps_a: f64,
    /// Force offset denominator coefficient eps_b (dimensionless).
    pub eps_b: f64,
    /// Contraction at the level pose (dimensionless).
    pub eps0: f64,
    /// Polytropic index k of the gas process (1 = isothermal).
    pub k_poly: f64,
    /// Specific gas constant of air r (J kg^-1 K^-1).
    pub r_gas: f64,
    /// Air temperature T (K), held constant.
    pub temperature: f64,
    /// Atmospheric pressure P0 (Pa, absolute).
    pub p_atm: f64,
    /// Minimum operating pressure (Pa, absolute).
    pub p_min_abs: f64,
    /// Maximum operating pressure (Pa, absolute).
    pub p_max_abs: f64,
    /// Reference volume at eps = 0 (m^3), the integration constant of the
    /// volume model. Defaults to the rest cylinder volume pi/4 D0^2 l0.
    pub v0_ref: f64,
}

impl Default for MuscleParams {
    fn default() -> Self {
        let l0 = 0.30;
        let d0 = 0.020;
        MuscleParams {
            l0,
            d0,
            theta0: 23.0_f64.to_radians(),
            alpha: 1.5,
            k_force: 3000.0,
            eps_a: 0.25,
            eps_b: 0.05,
            eps0: 0.10,
            k_poly: 1.4,
            r_gas: 287.0,
            temperature: 293.0,
            p_atm: 1.013e5,
            p_min_abs: 1.25e5,
            p_max_abs: 7.0e5,
            v0_ref: nominal_v0_ref(d0, l0),
        }
    }
}

/// Reference volume of the cylindrical rest shape, (pi/4) D0^2 l0. The
/// default `v0_ref` for a muscle of the given dimensions.
pub fn nominal_v0_ref(d0: f64, l0: f64) -> f64 {
    std::f64::consts::FRAC_PI_4 * d0 * d0 * l0
}

impl MuscleParams {
    /// Field-level invariants plus the operating-range sweep: H stays
    /// positive, the volume stays positive, and the force-offset denominator
    /// stays clear of zero over the certified contraction interval.
    pub fn validate(&self) -> Result<()> {
        fn positive(name: &'static str, v: f64) -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ModelError::InvalidParameter {
                    name,
                    detail: format!("must be positive and finite, got {v}"),
                })
            }
        }
        positive("l0", self.l0)?;
        positive("d0", self.d0)?;
        positive("k_force", self.k_force)?;
        positive("eps_b", self.eps_b)?;
        positive("alpha", self.alpha)?;
        positive("r_gas", self.r_gas)?;
        positive("temperature", self.temperature)?;
        positive("v0_ref", self.v0_ref)?;
        if !(self.theta0 > 0.0 && self.theta0 < std::f64::consts::FRAC_PI_2) {
            return Err(ModelError::InvalidParameter {
                name: "theta0",
                detail: format!("weave angle must lie in (0, pi/2) rad, got {}", self.theta0),
            });
        }
        if self.k_poly < 1.0 {
            return Err(ModelError::InvalidParameter {
                name: "k_poly",
                detail: format!("polytropic index must be >= 1, got {}", self.k_poly),
            });
        }
        if !(self.p_atm < self.p_min_abs && self.p_min_abs < self.p_max_abs) {
            return Err(ModelError::InvalidParameter {
                name: "pressure bounds",
                detail: format!(
                    "need p_atm < p_min_abs < p_max_abs, got {} / {} / {}",
                    self.p_atm, self.p_min_abs, self.p_max_abs
                ),
            });
        }

        // Operating-range sweep. The gain root sits at
        // eps* = 1 - (tan^2 theta0 / (3 sin^2 theta0))^(1/alpha); requiring
        // eps* beyond the range keeps H positive on all of it.
        let gain_root = 1.0
            - (self.theta0.tan().powi(2) / (3.0 * self.theta0.sin().powi(2)))
                .powf(1.0 / self.alpha);
        if gain_root <= EPS_OP_MAX {
            return Err(ModelError::InvalidParameter {
                name: "theta0/alpha",
                detail: format!(
                    "force gain H vanishes at eps = {gain_root:.4}, inside the operating range (max {EPS_OP_MAX})"
                ),
            });
        }
        if EPS_OP_MIN + self.eps_b <= FORCE_OFFSET_DENOM_GUARD {
            return Err(ModelError::InvalidParameter {
                name: "eps_b",
                detail: format!(
                    "eps + eps_b must stay positive over the operating range, got eps_b = {}",
                    self.eps_b
                ),
            });
        }
        const SWEEP: usize = 241;
        for i in 0..SWEEP {
            let eps = EPS_OP_MIN + (EPS_OP_MAX - EPS_OP_MIN) * i as f64 / (SWEEP - 1) as f64;
            if force_gain_h(self, eps) <= FORCE_GAIN_GUARD {
                return Err(ModelError::InvalidParameter {
                    name: "force gain",
                    detail: format!("H({eps:.4}) not positive for these parameters"),
                });
            }
            volume(self, eps)?;
        }
        Ok(())
    }
}

/// Kinematic and pressure state of a single muscle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuscleState {
    /// Contraction (dimensionless).
    pub eps: f64,
    /// Contraction rate (1/s).
    pub eps_dot: f64,
    /// Absolute internal pressure (Pa).
    pub pressure: f64,
}

impl MuscleState {
    /// Assemble the state of muscle `i` (0-based) from the plant state.
    pub fn from_platform(
        p: &MuscleParams,
        geom: &PlatformGeometry,
        x: &crate::platform::PlantState,
        i: usize,
    ) -> Self {
        MuscleState {
            eps: contraction(p, geom, x.theta_x, x.theta_y, i),
            eps_dot: contraction_rate(
                p, geom, x.theta_x, x.theta_y, x.omega_x, x.omega_y, i,
            ),
            pressure: x.pressures[i],
        }
    }
}

/// Contraction of muscle `i` (0-based) at the given platform pose:
/// (R/l0)(cos phi_i sin theta_y - sin phi_i sin theta_x cos theta_y) + eps0.
pub fn contraction(
    p: &MuscleParams,
    geom: &PlatformGeometry,
    theta_x: f64,
    theta_y: f64,
    i: usize,
) -> f64 {
    let phi = geom.phi[i];
    geom.radius / p.l0 * (phi.cos() * theta_y.sin() - phi.sin() * theta_x.sin() * theta_y.cos())
        + p.eps0
}

/// Time derivative of [`contraction`] along angular rates (omega_x, omega_y).
pub fn contraction_rate(
    p: &MuscleParams,
    geom: &PlatformGeometry,
    theta_x: f64,
    theta_y: f64,
    omega_x: f64,
    omega_y: f64,
    i: usize,
) -> f64 {
    let phi = geom.phi[i];
    geom.radius / p.l0
        * (-omega_x * phi.sin() * theta_x.cos() * theta_y.cos()
            + omega_y * (phi.cos() * theta_y.cos() + phi.sin() * theta_x.sin() * theta_y.sin()))
}

/// Pressure-to-force gain H(eps) (m^2):
/// (pi D0^2 / 4) [3 (1-eps)^alpha / tan^2 theta0 - 1 / sin^2 theta0].
pub fn force_gain_h(p: &MuscleParams, eps: f64) -> f64 {
    let area = std::f64::consts::PI * p.d0 * p.d0 / 4.0;
    area * (3.0 * (1.0 - eps).powf(p.alpha) / p.theta0.tan().powi(2)
        - 1.0 / p.theta0.sin().powi(2))
}

/// Analytic d/deps of [`force_gain_h`] (m^2 per unit contraction).
pub fn force_gain_h_prime(p: &MuscleParams, eps: f64) -> f64 {
    let area = std::f64::consts::PI * p.d0 * p.d0 / 4.0;
    -area * 3.0 * p.alpha * (1.0 - eps).powf(p.alpha - 1.0) / p.theta0.tan().powi(2)
}

/// Contraction-dependent force offset L(eps) = K eps (eps - eps_a) / (eps + eps_b) (N).
pub fn force_offset_l(p: &MuscleParams, eps: f64) -> Result<f64> {
    let denom = eps + p.eps_b;
    if denom.abs() < FORCE_OFFSET_DENOM_GUARD {
        return Err(ModelError::SingularForceOffset { eps, denom });
    }
    Ok(p.k_force * eps * (eps - p.eps_a) / denom)
}

/// Analytic d/deps of [`force_offset_l`] (N per unit contraction):
/// K (eps^2 + 2 eps eps_b - eps_a eps_b) / (eps + eps_b)^2.
pub fn force_offset_l_prime(p: &MuscleParams, eps: f64) -> Result<f64> {
    let denom = eps + p.eps_b;
    if denom.abs() < FORCE_OFFSET_DENOM_GUARD {
        return Err(ModelError::SingularForceOffset { eps, denom });
    }
    Ok(p.k_force * (eps * eps + 2.0 * eps * p.eps_b - p.eps_a * p.eps_b) / (denom * denom))
}

/// Quasi-static traction force F = H(eps)(P - P0) + L(eps) (N), affine in
/// absolute pressure with slope H(eps).
pub fn force(p: &MuscleParams, pressure: f64, eps: f64) -> Result<f64> {
    Ok(force_gain_h(p, eps) * (pressure - p.p_atm) + force_offset_l(p, eps)?)
}

/// Invert the quasi-static law for pressure: P = P0 + (F - L(eps)) / H(eps).
pub fn pressure_from_force(p: &MuscleParams, f: f64, eps: f64) -> Result<f64> {
    let h = force_gain_h(p, eps);
    if h.abs() < FORCE_GAIN_GUARD {
        return Err(ModelError::DegenerateForceGain {
            eps,
            h,
            guard: FORCE_GAIN_GUARD,
        });
    }
    Ok(p.p_atm + (f - force_offset_l(p, eps)?) / h)
}

/// Volume sensitivity dV/deps (m^3 per unit contraction):
/// (pi/4) D0^2 l0 [-1/sin^2 theta0 + (alpha+1)(1-eps)^alpha / tan^2 theta0].
pub fn dv_deps(p: &MuscleParams, eps: f64) -> f64 {
    let cyl = std::f64::consts::FRAC_PI_4 * p.d0 * p.d0 * p.l0;
    cyl * (-1.0 / p.theta0.sin().powi(2)
        + (p.alpha + 1.0) * (1.0 - eps).powf(p.alpha) / p.theta0.tan().powi(2))
}

/// Muscle volume V(eps) (m^3), the analytic antiderivative of [`dv_deps`]
/// anchored so that V(0) = v0_ref.
pub fn volume(p: &MuscleParams, eps: f64) -> Result<f64> {
    let cyl = std::f64::consts::FRAC_PI_4 * p.d0 * p.d0 * p.l0;
    let tan2 = p.theta0.tan().powi(2);
    let v = p.v0_ref
        + cyl
            * (-eps / p.theta0.sin().powi(2)
                - ((1.0 - eps).powf(p.alpha + 1.0) - 1.0) / tan2);
    if v <= 0.0 {
        return Err(ModelError::NonpositiveVolume { eps, volume: v });
    }
    Ok(v)
}

/// Polytropic pressure ODE right-hand side (Pa/s):
/// dP/dt = (k r T / V(eps)) [q - (P / (r T)) (dV/deps) eps_dot].
pub fn pressure_derivative(
    p: &MuscleParams,
    pressure: f64,
    eps: f64,
    eps_dot: f64,
    q: f64,
) -> Result<f64> {
    let v = volume(p, eps)?;
    let rt = p.r_gas * p.temperature;
    Ok(p.k_poly * rt / v * (q - pressure / rt * dv_deps(p, eps) * eps_dot))
}

/// Coefficients of the pressure ODE written as dP/dt = a P + b q, with
/// a = -(k/V)(dV/deps) eps_dot (1/s) and b = k r T / V (Pa/kg).
///
/// The drift term multiplies the absolute pressure: a gauge reading
/// a (P - P0) differs from the ODE above by a P0 and does not reproduce it,
/// so the absolute form is used everywhere.
pub fn state_coeffs(p: &MuscleParams, eps: f64, eps_dot: f64) -> Result<(f64, f64)> {
    let v = volume(p, eps)?;
    let a = -p.k_poly / v * dv_deps(p, eps) * eps_dot;
    let b = p.k_poly * p.r_gas * p.temperature / v;
    Ok((a, b))
}

/// Feasible traction interval of one muscle at fixed contraction:
/// [force(P_min_abs, eps), force(P_max_abs, eps)].
pub fn force_range(p: &MuscleParams, eps: f64) -> Result<(f64, f64)> {
    let lo = force(p, p.p_min_abs, eps)?;
    let hi = force(p, p.p_max_abs, eps)?;
    Ok((lo, hi))
}
