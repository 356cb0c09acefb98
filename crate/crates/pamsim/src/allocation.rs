//! Overactuation resolution.
//!
//! The platform has three muscles but only two controlled angles, so one
//! force is free. Each muscle can realize forces in an interval set by the
//! operating pressure bounds at its current contraction; the third-muscle
//! reference force is chosen as the midpoint of the intersection of the
//! three intervals, which keeps every muscle as far from saturation as
//! possible. An empty intersection means the trajectory leaves the actuator
//! design envelope and is a configuration error, not something to clamp.

use crate::error::{ModelError, Result};
use crate::muscle::{self, MuscleParams};
use crate::platform::PlatformGeometry;

/// Relative tolerance under which two muscles' window bounds are treated as
/// tied when picking the active (rate-defining) muscle.
const TIE_REL_TOL: f64 = 1e-9;

/// Intersection of the per-muscle feasible force intervals, with the indices
/// of the muscles that bind each side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceWindow {
    pub f_min: f64,
    pub f_max: f64,
    /// Muscle (0-based) whose lower bound binds.
    pub lo_muscle: usize,
    /// Muscle (0-based) whose upper bound binds.
    pub hi_muscle: usize,
}

/// Intersect the three feasible force intervals at the given contractions:
/// f_min = max_i force(P_min_abs, eps_i), f_max = min_i force(P_max_abs, eps_i).
pub fn feasible_window(p: &MuscleParams, eps: &[f64; 3]) -> Result<ForceWindow> {
    let mut f_min = f64::NEG_INFINITY;
    let mut f_max = f64::INFINITY;
    let mut lo_muscle = 0;
    let mut hi_muscle = 0;
    for (i, &e) in eps.iter().enumerate() {
        let (lo, hi) = muscle::force_range(p, e)?;
        if lo > f_min {
            f_min = lo;
            lo_muscle = i;
        }
        if hi < f_max {
            f_max = hi;
            hi_muscle = i;
        }
    }
    if f_min > f_max {
        return Err(ModelError::InfeasibleWindow {
            f_min,
            f_max,
            lo_muscle,
            hi_muscle,
        });
    }
    Ok(ForceWindow {
        f_min,
        f_max,
        lo_muscle,
        hi_muscle,
    })
}

/// Midpoint of the feasible window, the third-muscle force reference.
pub fn f3_reference(p: &MuscleParams, eps: &[f64; 3]) -> Result<f64> {
    let w = feasible_window(p, eps)?;
    Ok(0.5 * (w.f_min + w.f_max))
}

/// d/dt of the force at a held pressure as contraction evolves:
/// (H'(eps)(P - P0) + L'(eps)) eps_dot.
fn force_rate_at_fixed_pressure(
    p: &MuscleParams,
    pressure: f64,
    eps: f64,
    eps_dot: f64,
) -> Result<f64> {
    Ok((muscle::force_gain_h_prime(p, eps) * (pressure - p.p_atm)
        + muscle::force_offset_l_prime(p, eps)?)
        * eps_dot)
}

/// Time derivative of [`f3_reference`] along a reference platform motion,
/// by the chain rule through each muscle's contraction.
///
/// The window bounds are max/min over muscles, so the midpoint is continuous
/// but only piecewise differentiable. At a tie the rate of the newly active
/// muscle applies: the one-sided derivative of a max (min) of tied values is
/// the max (min) of their rates.
pub fn f3_reference_rate(
    p: &MuscleParams,
    geom: &PlatformGeometry,
    theta_x: f64,
    theta_y: f64,
    omega_x: f64,
    omega_y: f64,
) -> Result<f64> {
    let mut lo_best = f64::NEG_INFINITY;
    let mut hi_best = f64::INFINITY;
    let mut lo_rate = f64::NEG_INFINITY;
    let mut hi_rate = f64::INFINITY;
    // First pass records the binding values, second picks one-sided rates
    // among ties; a single pass with running ties is enough because the tie
    // comparison only needs the current best value.
    let mut entries = [(0.0, 0.0, 0.0, 0.0); 3];
    for (i, entry) in entries.iter_mut().enumerate() {
        let e = muscle::contraction(p, geom, theta_x, theta_y, i);
        let e_dot = muscle::contraction_rate(p, geom, theta_x, theta_y, omega_x, omega_y, i);
        let (lo, hi) = muscle::force_range(p, e)?;
        let lo_r = force_rate_at_fixed_pressure(p, p.p_min_abs, e, e_dot)?;
        let hi_r = force_rate_at_fixed_pressure(p, p.p_max_abs, e, e_dot)?;
        *entry = (lo, hi, lo_r, hi_r);
        if lo > lo_best {
            lo_best = lo;
        }
        if hi < hi_best {
            hi_best = hi;
        }
    }
    if lo_best > hi_best {
        let w = feasible_window(
            p,
            &[
                muscle::contraction(p, geom, theta_x, theta_y, 0),
                muscle::contraction(p, geom, theta_x, theta_y, 1),
                muscle::contraction(p, geom, theta_x, theta_y, 2),
            ],
        );
        return Err(w.expect_err("window bounds crossed"));
    }
    let tie = |a: f64, b: f64| (a - b).abs() <= TIE_REL_TOL * a.abs().max(b.abs()).max(1.0);
    for &(lo, hi, lo_r, hi_r) in &entries {
        if tie(lo, lo_best) && lo_r > lo_rate {
            lo_rate = lo_r;
        }
        if tie(hi, hi_best) && hi_r < hi_rate {
            hi_rate = hi_r;
        }
    }
    Ok(0.5 * (lo_rate + hi_rate))
}
