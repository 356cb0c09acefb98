//! Closed-loop executive: fixed-step plant integration, sensor models,
//! PI feedback, the flow -> voltage -> flow command pipeline, disturbance
//! injection, and per-period telemetry records.
//!
//! One control period runs: sample the reference jet, form output errors
//! from measurements, update the PI state, synthesize commanded mass flows
//! (model inversion or the PI-only baseline), convert flows to servovalve
//! voltages using the *measured* pressures, re-evaluate the valve map at the
//! *true* pressures to obtain realized flows, then advance the plant by a
//! fixed number of integrator substeps with flows held (zero-order hold).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::allocation;
use crate::config::ExperimentConfig;
use crate::error::{ModelError, Result};
use crate::flatness;
use crate::muscle::{self, MuscleParams};
use crate::platform::{self, PlantState, PlatformGeometry};
use crate::reference;
use crate::valve;

/// Pressures are clamped to this floor (Pa) after a step; hitting it is
/// reported through [`StepResult::pressure_clamped`].
pub const PRESSURE_FLOOR: f64 = 1.0;
/// Divergence guard on platform angles (rad): far beyond the mechanical
/// range, so reaching it means the simulation is meaningless.
pub const ANGLE_GUARD: f64 = 1.0;
/// Divergence guard on angular rates (rad/s).
pub const RATE_GUARD: f64 = 1.0e3;
/// Divergence guard on pressures (Pa).
pub const PRESSURE_GUARD: f64 = 1.0e8;

/// Controller structure used by [`run_experiment`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerMode {
    /// Model inversion feedforward plus PI correction on the flat outputs.
    FlatnessPi,
    /// Pure PI baseline: angle PI to desired accelerations, solved through
    /// the torque matrix to forces, then per-muscle pressure PI to flows.
    PiOnly,
    /// Model inversion feedforward only (w = 0); isolates feedforward error.
    FlatnessOnly,
}

impl ControllerMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerMode::FlatnessPi => "flatness-pi",
            ControllerMode::PiOnly => "pi-only",
            ControllerMode::FlatnessOnly => "flatness-only",
        }
    }

    pub const ALL: [ControllerMode; 3] = [
        ControllerMode::FlatnessPi,
        ControllerMode::PiOnly,
        ControllerMode::FlatnessOnly,
    ];
}

impl fmt::Display for ControllerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControllerMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flatness-pi" => Ok(ControllerMode::FlatnessPi),
            "pi-only" => Ok(ControllerMode::PiOnly),
            "flatness-only" => Ok(ControllerMode::FlatnessOnly),
            other => Err(ModelError::InvalidParameter {
                name: "mode",
                detail: format!(
                    "unknown controller mode '{other}' (expected flatness-pi, pi-only, or flatness-only)"
                ),
            }),
        }
    }
}

/// Inclinometer quantization, pressure-sensor noise, and the control/sample
/// period shared by sensing and actuation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    /// Angle quantization step (rad); 0 disables quantization.
    pub angle_quantization: f64,
    /// Standard deviation of additive pressure noise (Pa); 0 disables it.
    pub pressure_noise_std: f64,
    /// Sample and control period (s).
    pub period: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel {
            angle_quantization: 0.18_f64.to_radians(),
            pressure_noise_std: 0.0,
            period: 1.0e-3,
        }
    }
}

impl SensorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.angle_quantization >= 0.0 && self.angle_quantization.is_finite()) {
            return Err(ModelError::InvalidParameter {
                name: "angle_quantization",
                detail: format!("must be finite and >= 0, got {}", self.angle_quantization),
            });
        }
        if !(self.pressure_noise_std >= 0.0 && self.pressure_noise_std.is_finite()) {
            return Err(ModelError::InvalidParameter {
                name: "pressure_noise_std",
                detail: format!("must be finite and >= 0, got {}", self.pressure_noise_std),
            });
        }
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(ModelError::InvalidParameter {
                name: "period",
                detail: format!("must be finite and > 0, got {}", self.period),
            });
        }
        Ok(())
    }
}

/// Per-flat-output PI gains with anti-windup clamping of the integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiGains {
    /// Proportional gain per output (maps output error to its top-derivative
    /// correction, so units are 1/s^3 for angles and 1/s for the force).
    pub kp: [f64; 3],
    /// Integral gain per output (1/s relative to kp's units).
    pub ki: [f64; 3],
    /// Absolute clamp on each integrator state (error-seconds).
    pub integrator_limit: [f64; 3],
}

impl Default for PiGains {
    fn default() -> Self {
        // Tuned on the default configuration: strong enough to reject the
        // default disturbance torque, weak enough that the correction loop
        // stays gentle against quantization noise over a 60 s run.
        PiGains {
            kp: [60.0, 60.0, 5.0],
            ki: [25.0, 25.0, 2.0],
            integrator_limit: [0.05, 0.05, 20.0],
        }
    }
}

impl PiGains {
    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            if !(self.kp[i] >= 0.0 && self.kp[i].is_finite())
                || !(self.ki[i] >= 0.0 && self.ki[i].is_finite())
            {
                return Err(ModelError::InvalidParameter {
                    name: "pi gains",
                    detail: format!("kp/ki must be finite and >= 0 (output {})", i + 1),
                });
            }
            if !(self.integrator_limit[i] > 0.0 && self.integrator_limit[i].is_finite()) {
                return Err(ModelError::InvalidParameter {
                    name: "integrator_limit",
                    detail: format!("must be finite and > 0 (output {})", i + 1),
                });
            }
        }
        Ok(())
    }
}

/// Gains for the PI-only baseline: an angle loop producing desired angular
/// accelerations and a per-muscle pressure loop producing mass flows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiBaselineGains {
    /// Angle-error proportional gain (1/s^2).
    pub kp_angle: f64,
    /// Angle-error integral gain (1/s^3).
    pub ki_angle: f64,
    /// Clamp on the angle integrator (rad*s).
    pub angle_integrator_limit: f64,
    /// Pressure-error proportional gain (kg/s per Pa).
    pub kp_pressure: f64,
    /// Pressure-error integral gain (kg/s per Pa*s).
    pub ki_pressure: f64,
    /// Clamp on the pressure integrator (Pa*s).
    pub pressure_integrator_limit: f64,
}

impl Default for PiBaselineGains {
    fn default() -> Self {
        // Tuned on the default configuration. The angle loop must overpower
        // the pneumatic stiffness (~3.5e4 1/s^2 on the defaults), so kp sits
        // at 1e4 with the integral zero well inside the pressure-loop
        // bandwidth; pushing kp to 3e4 destabilizes the cascade.
        PiBaselineGains {
            kp_angle: 1.0e4,
            ki_angle: 3.0e4,
            angle_integrator_limit: 0.2,
            kp_pressure: 4.0e-8,
            ki_pressure: 1.0e-7,
            pressure_integrator_limit: 2.0e3,
        }
    }
}

impl PiBaselineGains {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("kp_angle", self.kp_angle),
            ("ki_angle", self.ki_angle),
            ("kp_pressure", self.kp_pressure),
            ("ki_pressure", self.ki_pressure),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ModelError::InvalidParameter {
                    name: "baseline gains",
                    detail: format!("{name} must be finite and >= 0, got {v}"),
                });
            }
        }
        let positive = [
            ("angle_integrator_limit", self.angle_integrator_limit),
            ("pressure_integrator_limit", self.pressure_integrator_limit),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError::InvalidParameter {
                    name: "baseline gains",
                    detail: format!("{name} must be finite and > 0, got {v}"),
                });
            }
        }
        Ok(())
    }
}

/// Commanded mass flows and the servovalve voltages that realize them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlCommand {
    /// Commanded mass flows (kg/s), before valve saturation.
    pub q: [f64; 3],
    /// Servovalve voltages (V) actually applied.
    pub v: [f64; 3],
}

/// Result of one integrator step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub state: PlantState,
    /// True for muscles whose pressure hit [`PRESSURE_FLOOR`] this step.
    pub pressure_clamped: [bool; 3],
}

/// Full right-hand side of the 7-state plant ODE at fixed mass flows and
/// disturbance torque.
fn plant_rhs(
    p: &MuscleParams,
    geom: &PlatformGeometry,
    x: &PlantState,
    q: &[f64; 3],
    gamma: (f64, f64),
) -> Result<[f64; 7]> {
    let mut forces = [0.0; 3];
    let mut dp = [0.0; 3];
    for i in 0..3 {
        let eps = muscle::contraction(p, geom, x.theta_x, x.theta_y, i);
        let eps_dot =
            muscle::contraction_rate(p, geom, x.theta_x, x.theta_y, x.omega_x, x.omega_y, i);
        forces[i] = muscle::force(p, x.pressures[i], eps)?;
        dp[i] = muscle::pressure_derivative(p, x.pressures[i], eps, eps_dot, q[i])?;
    }
    let (ax, ay) = platform::angular_acceleration(geom, x, &forces, gamma);
    Ok([x.omega_x, x.omega_y, ax, ay, dp[0], dp[1], dp[2]])
}

fn check_divergence(x: &PlantState) -> Result<()> {
    let arr = x.to_array();
    if arr.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::Divergence {
            t: f64::NAN,
            detail: format!("non-finite state component: {arr:?}"),
        });
    }
    if x.theta_x.abs() > ANGLE_GUARD || x.theta_y.abs() > ANGLE_GUARD {
        return Err(ModelError::Divergence {
            t: f64::NAN,
            detail: format!(
                "angle beyond guard {ANGLE_GUARD} rad: theta=({}, {})",
                x.theta_x, x.theta_y
            ),
        });
    }
    if x.omega_x.abs() > RATE_GUARD || x.omega_y.abs() > RATE_GUARD {
        return Err(ModelError::Divergence {
            t: f64::NAN,
            detail: format!(
                "rate beyond guard {RATE_GUARD} rad/s: omega=({}, {})",
                x.omega_x, x.omega_y
            ),
        });
    }
    if x.pressures.iter().any(|&pi| pi > PRESSURE_GUARD) {
        return Err(ModelError::Divergence {
            t: f64::NAN,
            detail: format!("pressure beyond guard {PRESSURE_GUARD} Pa: {:?}", x.pressures),
        });
    }
    Ok(())
}

/// Advance the plant by one step of size `dt` with classical 4th-order
/// Runge-Kutta, mass flows and disturbance held constant over the step.
/// Pressures are clamped to [`PRESSURE_FLOOR`] (flagged in the result), and
/// states beyond the divergence guards abort with diagnostics.
pub fn plant_step(
    p: &MuscleParams,
    geom: &PlatformGeometry,
    x: &PlantState,
    q: &[f64; 3],
    gamma: (f64, f64),
    dt: f64,
) -> Result<StepResult> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(ModelError::InvalidParameter {
            name: "dt",
            detail: format!("must be finite and > 0, got {dt}"),
        });
    }
    let x0 = x.to_array();
    let shifted = |base: &[f64; 7], k: &[f64; 7], h: f64| {
        let mut out = *base;
        for i in 0..7 {
            out[i] += h * k[i];
        }
        PlantState::from_array(out)
    };
    let k1 = plant_rhs(p, geom, x, q, gamma)?;
    let k2 = plant_rhs(p, geom, &shifted(&x0, &k1, 0.5 * dt), q, gamma)?;
    let k3 = plant_rhs(p, geom, &shifted(&x0, &k2, 0.5 * dt), q, gamma)?;
    let k4 = plant_rhs(p, geom, &shifted(&x0, &k3, dt), q, gamma)?;
    let mut next = x0;
    for i in 0..7 {
        next[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    let mut pressure_clamped = [false; 3];
    for (m, slot) in next[4..7].iter_mut().enumerate() {
        if *slot < PRESSURE_FLOOR {
            log::warn!(
                "muscle {} pressure {:.3} Pa clamped to floor {PRESSURE_FLOOR} Pa",
                m + 1,
                *slot
            );
            *slot = PRESSURE_FLOOR;
            pressure_clamped[m] = true;
        }
    }
    let state = PlantState::from_array(next);
    check_divergence(&state)?;
    Ok(StepResult {
        state,
        pressure_clamped,
    })
}

/// Quantized angles and (optionally) noisy pressures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub theta_x: f64,
    pub theta_y: f64,
    pub pressures: [f64; 3],
}

/// Apply the sensor model: angles rounded to the nearest quantization step
/// (ties away from zero), pressures with additive Gaussian noise drawn from
/// the provided generator.
pub fn measure<R: Rng>(sensors: &SensorModel, x: &PlantState, rng: &mut R) -> Measurement {
    let quantize = |v: f64| {
        if sensors.angle_quantization > 0.0 {
            (v / sensors.angle_quantization).round() * sensors.angle_quantization
        } else {
            v
        }
    };
    let mut pressures = x.pressures;
    if sensors.pressure_noise_std > 0.0 {
        // std > 0 and finite was validated, so the distribution is valid
        let normal = Normal::new(0.0, sensors.pressure_noise_std).expect("valid noise std");
        for slot in &mut pressures {
            *slot += normal.sample(rng);
        }
    }
    Measurement {
        theta_x: quantize(x.theta_x),
        theta_y: quantize(x.theta_y),
        pressures,
    }
}

/// One discrete PI update: integrators accumulate error with anti-windup
/// clamping, and the output is kp*e + ki*integral using the updated
/// integrator.
pub fn pi_update(
    gains: &PiGains,
    e: [f64; 3],
    integ: [f64; 3],
    dt: f64,
) -> ([f64; 3], [f64; 3]) {
    let mut w = [0.0; 3];
    let mut updated = [0.0; 3];
    for i in 0..3 {
        let lim = gains.integrator_limit[i];
        updated[i] = (integ[i] + e[i] * dt).clamp(-lim, lim);
        w[i] = gains.kp[i] * e[i] + gains.ki[i] * updated[i];
    }
    (w, updated)
}

/// One telemetry row per control period.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    /// Period start time (s).
    pub t: f64,
    /// True plant state at the period start.
    pub state: PlantState,
    /// Quantized angle measurements (rad).
    pub meas_theta_x: f64,
    pub meas_theta_y: f64,
    /// Reference angles (rad) and allocated third-muscle force (N).
    pub ref_theta_x: f64,
    pub ref_theta_y: f64,
    pub ref_f3: f64,
    /// Commanded flows and applied voltages.
    pub command: ControlCommand,
    /// True muscle forces at the period start (N).
    pub forces: [f64; 3],
    /// Output errors driving the controller: angles (rad), force (N).
    pub errors: [f64; 3],
    /// Valve saturation flags for this period's command.
    pub saturated: [bool; 3],
    /// True angles outside the mechanical bound this period.
    pub angle_violation: bool,
    /// Any true pressure outside the operating window this period.
    pub force_violation: bool,
}

/// End-of-run metrics. RMS errors are over the per-period controller errors
/// (measured outputs against the reference); when the run contains no
/// periods they are NaN and `metrics_defined` is false.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub mode: ControllerMode,
    pub seed: u64,
    pub duration_s: f64,
    pub periods: u64,
    pub metrics_defined: bool,
    pub rms_theta_x_deg: f64,
    pub rms_theta_y_deg: f64,
    pub rms_f3_n: f64,
    /// Muscle-periods in which the commanded flow exceeded the valve range.
    pub saturation_count: u64,
    /// Periods with an angle-bound or pressure-window violation.
    pub violation_count: u64,
}

/// Internal controller state carried across periods.
struct ControllerState {
    flat_integ: [f64; 3],
    angle_integ: [f64; 2],
    pressure_integ: [f64; 3],
}

/// PI-only baseline: per-axis angle PI gives desired angular accelerations,
/// mapped to desired forces through the torque matrix linearized once at the
/// level equilibrium pose (third force pinned to the allocation midpoint
/// there), then to desired pressures, and a per-muscle pressure PI emits
/// flows. Pure feedback: no model-based trajectory feedforward.
fn baseline_flows(
    cfg: &ExperimentConfig,
    meas: &Measurement,
    e: &[f64; 3],
    ctl: &mut ControllerState,
) -> Result<[f64; 3]> {
    let p = &cfg.muscle;
    let geom = &cfg.geometry;
    let gains = &cfg.baseline_gains;
    let h = cfg.sensors.period;

    let mut acc = [0.0; 2];
    for axis in 0..2 {
        let lim = gains.angle_integrator_limit;
        ctl.angle_integ[axis] = (ctl.angle_integ[axis] + e[axis] * h).clamp(-lim, lim);
        acc[axis] = gains.kp_angle * e[axis] + gains.ki_angle * ctl.angle_integ[axis];
    }

    let eps_eq: [f64; 3] = std::array::from_fn(|i| muscle::contraction(p, geom, 0.0, 0.0, i));
    let f3 = allocation::f3_reference(p, &eps_eq)?;
    let (e_mat, g_vec) = platform::eg_matrices(geom, 0.0, 0.0);
    let rhs = nalgebra::Vector2::new(acc[0] - g_vec[0] * f3, acc[1] - g_vec[1] * f3);
    let f12 = e_mat
        .lu()
        .solve(&rhs)
        .ok_or(ModelError::SingularInversion {
            det: e_mat.determinant(),
        })?;
    let f_des = [f12[0], f12[1], f3];

    let mut q = [0.0; 3];
    for i in 0..3 {
        let p_des = muscle::pressure_from_force(p, f_des[i], eps_eq[i])?
            .clamp(p.p_min_abs, p.p_max_abs);
        let pe = p_des - meas.pressures[i];
        let lim = gains.pressure_integrator_limit;
        ctl.pressure_integ[i] = (ctl.pressure_integ[i] + pe * h).clamp(-lim, lim);
        q[i] = gains.kp_pressure * pe + gains.ki_pressure * ctl.pressure_integ[i];
    }
    Ok(q)
}

/// Per-period controller decision: flatness modes carry the feedback
/// correction applied to every substep's feedforward; the baseline carries
/// one flow command held for the whole period.
enum PeriodCommand {
    Flatness { w: [f64; 3] },
    Baseline { q: [f64; 3] },
}

fn with_time(err: ModelError, t: f64) -> ModelError {
    match err {
        ModelError::Divergence { detail, .. } => ModelError::Divergence { t, detail },
        other => other,
    }
}

/// Run one closed-loop experiment and return the telemetry stream plus the
/// summary metrics. Deterministic: all randomness comes from the config
/// seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Vec<RunRecord>, Summary)> {
    cfg.validate()?;
    let p = &cfg.muscle;
    let geom = &cfg.geometry;
    let h = cfg.sensors.period;
    let n_periods = ((cfg.reference.duration / h) + 1e-9).floor() as usize;
    let dt = h / cfg.substeps as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let jet0 = reference::assemble_jet(p, geom, &cfg.reference, 0.0)?;
    let mut x = flatness::flat_to_state(p, geom, &jet0)?;
    let mut ctl = ControllerState {
        flat_integ: [0.0; 3],
        angle_integ: [0.0; 2],
        pressure_integ: [0.0; 3],
    };

    let mut records = Vec::with_capacity(n_periods);
    let mut sum_sq = [0.0_f64; 3];
    let mut saturation_count = 0u64;
    let mut violation_count = 0u64;

    for k in 0..n_periods {
        let t = k as f64 * h;
        let x_start = x;
        let jet = reference::assemble_jet(p, geom, &cfg.reference, t)?;
        let meas = measure(&cfg.sensors, &x, &mut rng);
        let eps3_meas = muscle::contraction(p, geom, meas.theta_x, meas.theta_y, 2);
        let y3_meas = muscle::force(p, meas.pressures[2], eps3_meas)?;
        let e = [
            jet.y1[0] - meas.theta_x,
            jet.y2[0] - meas.theta_y,
            jet.y3[0] - y3_meas,
        ];

        // Feedback (PI corrections and the baseline controller) runs once per
        // control period, from the period-start measurement.
        let period_cmd = match cfg.mode {
            ControllerMode::FlatnessPi | ControllerMode::FlatnessOnly => {
                let w = if cfg.mode == ControllerMode::FlatnessPi {
                    let (w, updated) = pi_update(&cfg.flat_gains, e, ctl.flat_integ, h);
                    ctl.flat_integ = updated;
                    w
                } else {
                    [0.0; 3]
                };
                PeriodCommand::Flatness { w }
            }
            ControllerMode::PiOnly => PeriodCommand::Baseline {
                q: baseline_flows(cfg, &meas, &e, &mut ctl)?,
            },
        };

        let angle_violation = x.exceeds_angle_bound(geom);
        let force_violation = x.pressures.iter().any(|&pi| {
            pi < p.p_min_abs * (1.0 - 1e-9) || pi > p.p_max_abs * (1.0 + 1e-9)
        });
        if angle_violation || force_violation {
            violation_count += 1;
        }

        let mut forces = [0.0; 3];
        for (i, slot) in forces.iter_mut().enumerate() {
            let eps = muscle::contraction(p, geom, x.theta_x, x.theta_y, i);
            *slot = muscle::force(p, x.pressures[i], eps).map_err(|err| with_time(err, t))?;
        }

        // The open-loop feedforward is a known function of time, so it is
        // refreshed every integrator substep: holding one flow sample across
        // the whole period leaves a one-signed pressure-error parabola whose
        // mean slowly drives the angle integrator chain. Likewise the valve
        // inversion tracks the reference pressure increment within the
        // period; measurements still arrive only at the period cadence.
        let p_ref_start = match &period_cmd {
            PeriodCommand::Flatness { .. } => {
                Some(flatness::flat_to_state(p, geom, &jet)?.pressures)
            }
            PeriodCommand::Baseline { .. } => None,
        };
        let mut saturated = [false; 3];
        let mut recorded = ControlCommand {
            q: [0.0; 3],
            v: [0.0; 3],
        };
        for j in 0..cfg.substeps {
            let ts = t + j as f64 * dt;
            let mut p_used = meas.pressures;
            let q_cmd = match &period_cmd {
                PeriodCommand::Flatness { w } => {
                    let t_mid = (ts + 0.5 * dt).min(cfg.reference.duration);
                    let jet_sub = reference::assemble_jet(p, geom, &cfg.reference, t_mid)?;
                    let p_ref_sub = flatness::flat_to_state(p, geom, &jet_sub)?.pressures;
                    let p_ref_start = p_ref_start.as_ref().expect("flatness branch");
                    for i in 0..3 {
                        p_used[i] =
                            (p_used[i] + (p_ref_sub[i] - p_ref_start[i])).max(PRESSURE_FLOOR);
                    }
                    flatness::feedforward_control(p, geom, &jet_sub, *w)?
                }
                PeriodCommand::Baseline { q } => *q,
            };
            let mut v = [0.0; 3];
            let mut q_real = [0.0; 3];
            for i in 0..3 {
                let vi = match valve::invert_flow(&cfg.valve, p_used[i], q_cmd[i]) {
                    Ok(vi) => vi,
                    Err(ModelError::UnreachableFlow {
                        q_desired, q_max, ..
                    }) => {
                        saturated[i] = true;
                        let (v_lo, v_hi) = cfg.valve.voltage_span();
                        if q_desired > q_max {
                            v_hi
                        } else {
                            v_lo
                        }
                    }
                    Err(other) => return Err(with_time(other, ts)),
                };
                v[i] = vi;
                q_real[i] =
                    valve::flow(&cfg.valve, x.pressures[i], vi).map_err(|e| with_time(e, ts))?;
            }
            if j == 0 {
                recorded = ControlCommand { q: q_cmd, v };
            }
            let gamma = cfg.disturbance.at(ts);
            let step = plant_step(p, geom, &x, &q_real, gamma, dt)
                .map_err(|err| with_time(err, ts))?;
            x = step.state;
        }
        saturation_count += saturated.iter().filter(|&&s| s).count() as u64;

        for (slot, err) in sum_sq.iter_mut().zip(e) {
            *slot += err * err;
        }
        records.push(RunRecord {
            t,
            state: x_start,
            meas_theta_x: meas.theta_x,
            meas_theta_y: meas.theta_y,
            ref_theta_x: jet.y1[0],
            ref_theta_y: jet.y2[0],
            ref_f3: jet.y3[0],
            command: recorded,
            forces,
            errors: e,
            saturated,
            angle_violation,
            force_violation,
        });
    }

    let metrics_defined = n_periods > 0;
    let rms = |idx: usize| {
        if metrics_defined {
            (sum_sq[idx] / n_periods as f64).sqrt()
        } else {
            f64::NAN
        }
    };
    let summary = Summary {
        mode: cfg.mode,
        seed: cfg.seed,
        duration_s: cfg.reference.duration,
        periods: n_periods as u64,
        metrics_defined,
        rms_theta_x_deg: rms(0).to_degrees(),
        rms_theta_y_deg: rms(1).to_degrees(),
        rms_f3_n: rms(2),
        saturation_count,
        violation_count,
    };
    Ok((records, summary))
}
