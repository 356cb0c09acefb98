//! Typed errors for the physical model and the closed-loop executive.
//!
//! Every guard that would otherwise produce an infinity or a silently wrong
//! number raises a variant here instead. Callers that can recover (for
//! example valve saturation handling) match on the variant; everything else
//! propagates up to the harness, which maps categories to exit codes.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    /// |eps + eps_b| fell below the guard, the force offset L(eps) would blow up.
    #[error("force offset denominator eps + eps_b = {denom:.3e} at eps = {eps:.6} is inside the singular guard")]
    SingularForceOffset { eps: f64, denom: f64 },

    /// |H(eps)| fell below the guard, pressure cannot be recovered from force.
    #[error("force gain H = {h:.3e} m^2 at eps = {eps:.6} is degenerate (|H| < {guard:.1e})")]
    DegenerateForceGain { eps: f64, h: f64, guard: f64 },

    /// The muscle volume model returned a nonpositive volume.
    #[error("muscle volume {volume:.3e} m^3 at eps = {eps:.6} is not positive")]
    NonpositiveVolume { eps: f64, volume: f64 },

    /// A commanded servovalve voltage lies outside the valve's span.
    #[error("valve voltage {v:.3} V outside [{v_min:.3}, {v_max:.3}] V")]
    VoltageOutOfRange { v: f64, v_min: f64, v_max: f64 },

    /// The requested mass flow cannot be realized at this pressure; the
    /// reachable interval is reported so the caller can clamp.
    #[error("mass flow {q_desired:.4e} kg/s unreachable at P = {pressure:.4e} Pa; reachable [{q_min:.4e}, {q_max:.4e}]")]
    UnreachableFlow {
        pressure: f64,
        q_desired: f64,
        q_min: f64,
        q_max: f64,
    },

    /// Bisection on the tabulated valve map failed to converge.
    #[error("valve inversion bisection did not converge after {iterations} iterations (residual {residual:.3e} kg/s)")]
    BisectionFailed { iterations: u32, residual: f64 },

    /// The intersection of the per-muscle feasible force intervals is empty.
    #[error("infeasible force window: lower bound {f_min:.3} N (muscle {lo_muscle}) exceeds upper bound {f_max:.3} N (muscle {hi_muscle})")]
    InfeasibleWindow {
        f_min: f64,
        f_max: f64,
        lo_muscle: usize,
        hi_muscle: usize,
    },

    /// The coupling matrix determinant collapsed relative to its origin value.
    #[error("coupling matrix near singular: |det| = {det:.3e} below floor {floor:.3e}")]
    NearSingularCoupling { det: f64, floor: f64 },

    /// The 2x2 torque system solved during flat-output inversion is singular.
    #[error("singular 2x2 torque system during flat inversion: det = {det:.3e}")]
    SingularInversion { det: f64 },

    /// A reference trajectory was sampled outside its horizon.
    #[error("time {t:.6} s outside the reference horizon [0, {duration:.6}] s")]
    OutOfHorizon { t: f64, duration: f64 },

    /// State left the divergence guard during integration.
    #[error("simulation diverged at t = {t:.4} s: {detail}")]
    Divergence { t: f64, detail: String },

    /// A parameter set failed a construction-time invariant.
    #[error("invalid parameter {name}: {detail}")]
    InvalidParameter { name: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, ModelError>;
