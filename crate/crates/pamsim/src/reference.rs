//! Smooth reference trajectories for the platform angles, with analytic
//! derivatives through third order, and assembly of full flat-output jets
//! including the allocated third-muscle force and its rate.
//!
//! Two signal families are supported per axis and may be summed: sinusoids,
//! and rest-to-rest septic (degree 7) polynomial segments between waypoints.
//! A septic with zero first, second, and third derivatives at both ends is
//! the minimum degree meeting eight boundary conditions, so the piecewise
//! track is C3 at every join by construction; the joins are still verified
//! numerically when a program is built.

use crate::allocation;
use crate::error::{ModelError, Result};
use crate::flatness::FlatJet;
use crate::muscle::{self, MuscleParams};
use crate::platform::PlatformGeometry;

/// Polynomial in one variable, low-order coefficient first. Small helper for
/// the septic basis and its derivatives.
#[derive(Debug, Clone, PartialEq)]
struct Poly {
    coeffs: Vec<f64>,
}

impl Poly {
    fn eval(&self, u: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * u + c)
    }

    fn derivative(&self) -> Poly {
        Poly {
            coeffs: self
                .coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(n, c)| n as f64 * c)
                .collect(),
        }
    }
}

/// The rest-to-rest septic basis p(u) = 35u^4 - 84u^5 + 70u^6 - 20u^7 and
/// its first three derivatives. p rises from 0 to 1 on [0, 1] with zero
/// derivatives through order three at both ends.
fn septic_basis() -> [Poly; 4] {
    let p0 = Poly {
        coeffs: vec![0.0, 0.0, 0.0, 0.0, 35.0, -84.0, 70.0, -20.0],
    };
    let p1 = p0.derivative();
    let p2 = p1.derivative();
    let p3 = p2.derivative();
    [p0, p1, p2, p3]
}

/// One sinusoidal component a sin(2 pi f t + phase).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sinusoid {
    /// Amplitude (rad).
    pub amplitude: f64,
    /// Frequency (Hz).
    pub freq_hz: f64,
    /// Phase (rad).
    pub phase: f64,
}

/// Per-axis reference: a sum of sinusoids plus an optional waypoint track of
/// rest-to-rest septic segments (constant before the first and after the
/// last waypoint).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AxisProgram {
    pub sinusoids: Vec<Sinusoid>,
    /// Waypoints (t_i, angle_i) with strictly increasing times.
    pub waypoints: Vec<(f64, f64)>,
}

impl AxisProgram {
    /// Worst-case magnitude the axis can reach: sum of sinusoid amplitudes
    /// plus the largest waypoint magnitude (the septic basis never
    /// overshoots its endpoints).
    fn peak(&self) -> f64 {
        let sines: f64 = self.sinusoids.iter().map(|s| s.amplitude.abs()).sum();
        let way = self
            .waypoints
            .iter()
            .map(|w| w.1.abs())
            .fold(0.0, f64::max);
        sines + way
    }

    /// Value and first three derivatives at time t.
    fn sample(&self, t: f64, septic: &[Poly; 4]) -> [f64; 4] {
        let mut out = [0.0; 4];
        let two_pi = 2.0 * std::f64::consts::PI;
        for s in &self.sinusoids {
            let w = two_pi * s.freq_hz;
            let arg = w * t + s.phase;
            out[0] += s.amplitude * arg.sin();
            out[1] += s.amplitude * w * arg.cos();
            out[2] -= s.amplitude * w * w * arg.sin();
            out[3] -= s.amplitude * w * w * w * arg.cos();
        }
        if !self.waypoints.is_empty() {
            let first = self.waypoints[0];
            let last = self.waypoints[self.waypoints.len() - 1];
            if t <= first.0 {
                out[0] += first.1;
            } else if t >= last.0 {
                out[0] += last.1;
            } else {
                let idx = self.waypoints.partition_point(|w| w.0 <= t);
                let (t0, a0) = self.waypoints[idx - 1];
                let (t1, a1) = self.waypoints[idx];
                let span = t1 - t0;
                let u = (t - t0) / span;
                let delta = a1 - a0;
                out[0] += a0 + delta * septic[0].eval(u);
                for n in 1..4 {
                    out[n] += delta * septic[n].eval(u) / span.powi(n as i32);
                }
            }
        }
        out
    }
}

/// Full two-axis program over a fixed horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceProgram {
    pub x_axis: AxisProgram,
    pub y_axis: AxisProgram,
    /// Horizon (s); sampling outside [0, duration] is an error.
    pub duration: f64,
}

impl ReferenceProgram {
    /// The default experiment program: two incommensurate 5-degree
    /// sinusoids, one per axis, over 60 s.
    pub fn default_program() -> Self {
        ReferenceProgram {
            x_axis: AxisProgram {
                sinusoids: vec![Sinusoid {
                    amplitude: 5.0_f64.to_radians(),
                    freq_hz: 0.1,
                    phase: 0.0,
                }],
                waypoints: vec![],
            },
            y_axis: AxisProgram {
                sinusoids: vec![Sinusoid {
                    amplitude: 5.0_f64.to_radians(),
                    freq_hz: 0.15,
                    phase: 60.0_f64.to_radians(),
                }],
                waypoints: vec![],
            },
            duration: 60.0,
        }
    }

    /// Construction-time checks: finite horizon, strictly increasing
    /// waypoint times, C3 continuity of the septic basis at segment ends,
    /// and the conservative angle bound.
    pub fn validate(&self, theta_limit: f64) -> Result<()> {
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(ModelError::InvalidParameter {
                name: "duration",
                detail: format!("must be finite and nonnegative, got {}", self.duration),
            });
        }
        for (name, axis) in [("x", &self.x_axis), ("y", &self.y_axis)] {
            for w in axis.waypoints.windows(2) {
                if w[0].0 >= w[1].0 {
                    return Err(ModelError::InvalidParameter {
                        name: "waypoints",
                        detail: format!(
                            "axis {name}: waypoint times must be strictly increasing ({} then {})",
                            w[0].0, w[1].0
                        ),
                    });
                }
            }
            if axis.peak() > theta_limit + 1e-12 {
                return Err(ModelError::InvalidParameter {
                    name: "reference amplitude",
                    detail: format!(
                        "axis {name}: worst-case angle {:.4} rad exceeds the mechanical bound {:.4} rad",
                        axis.peak(),
                        theta_limit
                    ),
                });
            }
        }
        // Septic joins: value endpoints exact, derivative orders 1..3 zero.
        let basis = septic_basis();
        for (endpoint, value) in [(0.0, 0.0), (1.0, 1.0)] {
            if (basis[0].eval(endpoint) - value).abs() > 1e-9 {
                return Err(ModelError::InvalidParameter {
                    name: "septic basis",
                    detail: "endpoint interpolation broken".to_string(),
                });
            }
            for b in &basis[1..] {
                if b.eval(endpoint).abs() > 1e-9 {
                    return Err(ModelError::InvalidParameter {
                        name: "septic basis",
                        detail: "join derivatives not zero".to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Both axes with three derivatives at time t.
    pub fn sample(&self, t: f64) -> Result<([f64; 4], [f64; 4])> {
        if !(0.0..=self.duration).contains(&t) {
            return Err(ModelError::OutOfHorizon {
                t,
                duration: self.duration,
            });
        }
        let basis = septic_basis();
        Ok((self.x_axis.sample(t, &basis), self.y_axis.sample(t, &basis)))
    }
}

/// Assemble the full flat-output jet at time t: the sampled angle
/// derivatives plus the allocated third-muscle force reference and its rate
/// evaluated on the reference pose and rates.
pub fn assemble_jet(
    p: &MuscleParams,
    geom: &PlatformGeometry,
    program: &ReferenceProgram,
    t: f64,
) -> Result<FlatJet> {
    let (y1, y2) = program.sample(t)?;
    let eps: [f64; 3] = std::array::from_fn(|i| muscle::contraction(p, geom, y1[0], y2[0], i));
    let f3 = allocation::f3_reference(p, &eps)?;
    let f3_dot = allocation::f3_reference_rate(p, geom, y1[0], y2[0], y1[1], y2[1])?;
    Ok(FlatJet {
        y1,
        y2,
        y3: [f3, f3_dot],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn params() -> MuscleParams {
        MuscleParams::default()
    }

    fn geom() -> PlatformGeometry {
        PlatformGeometry::default()
    }

    #[test]
    fn zero_program_samples_to_zero() {
        let prog = ReferenceProgram {
            x_axis: AxisProgram::default(),
            y_axis: AxisProgram::default(),
            duration: 10.0,
        };
        prog.validate(0.26).unwrap();
        let (x, y) = prog.sample(3.7).unwrap();
        assert_eq!(x, [0.0; 4]);
        assert_eq!(y, [0.0; 4]);
    }

    #[test]
    fn sinusoid_third_derivative_closed_form() {
        let prog = ReferenceProgram::default_program();
        let (x, _) = prog.sample(1.3).unwrap();
        // -A (2 pi f)^3 cos(2 pi f t) with A = 5 deg, f = 0.1 Hz, t = 1.3 s
        assert_relative_eq!(x[3], -0.014818024746326782, max_relative = 1e-12);
    }

    #[test]
    fn derivatives_consistent_with_finite_differences() {
        let mut prog = ReferenceProgram::default_program();
        prog.x_axis.waypoints = vec![(5.0, 0.0), (20.0, 0.04), (40.0, -0.03)];
        let dt = 1e-5;
        for &t in &[7.0, 13.3, 25.0, 47.0] {
            let (xm, ym) = prog.sample(t - dt).unwrap();
            let (x0, y0) = prog.sample(t).unwrap();
            let (xp, yp) = prog.sample(t + dt).unwrap();
            for n in 0..3 {
                let fdx = (xp[n] - xm[n]) / (2.0 * dt);
                let fdy = (yp[n] - ym[n]) / (2.0 * dt);
                assert_relative_eq!(x0[n + 1], fdx, max_relative = 1e-6, epsilon = 1e-9);
                assert_relative_eq!(y0[n + 1], fdy, max_relative = 1e-6, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn septic_segment_rest_to_rest() {
        let prog = ReferenceProgram {
            x_axis: AxisProgram {
                sinusoids: vec![],
                waypoints: vec![(0.0, 0.0), (2.0, 0.05)],
            },
            y_axis: AxisProgram::default(),
            duration: 3.0,
        };
        prog.validate(0.26).unwrap();
        for &t in &[0.0, 2.0, 2.5] {
            let (x, _) = prog.sample(t).unwrap();
            for &deriv in &x[1..4] {
                assert_abs_diff_eq!(deriv, 0.0, epsilon = 1e-9);
            }
        }
        assert_abs_diff_eq!(prog.sample(0.0).unwrap().0[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(prog.sample(2.0).unwrap().0[0], 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(prog.sample(3.0).unwrap().0[0], 0.05, epsilon = 1e-12);
        // midpoint of the rise
        assert_relative_eq!(prog.sample(1.0).unwrap().0[0], 0.025, max_relative = 1e-12);
    }

    #[test]
    fn out_of_horizon_rejected() {
        let prog = ReferenceProgram::default_program();
        assert!(matches!(
            prog.sample(-0.1).unwrap_err(),
            ModelError::OutOfHorizon { .. }
        ));
        assert!(matches!(
            prog.sample(60.0001).unwrap_err(),
            ModelError::OutOfHorizon { .. }
        ));
        prog.sample(60.0).unwrap();
        prog.sample(0.0).unwrap();
    }

    #[test]
    fn amplitude_bound_enforced() {
        let prog = ReferenceProgram {
            x_axis: AxisProgram {
                sinusoids: vec![Sinusoid {
                    amplitude: 20.0_f64.to_radians(),
                    freq_hz: 0.1,
                    phase: 0.0,
                }],
                waypoints: vec![],
            },
            y_axis: AxisProgram::default(),
            duration: 10.0,
        };
        assert!(prog.validate(15.0_f64.to_radians()).is_err());
    }

    #[test]
    fn nonincreasing_waypoints_rejected() {
        let prog = ReferenceProgram {
            x_axis: AxisProgram {
                sinusoids: vec![],
                waypoints: vec![(1.0, 0.01), (1.0, 0.02)],
            },
            y_axis: AxisProgram::default(),
            duration: 10.0,
        };
        assert!(prog.validate(0.26).is_err());
    }

    #[test]
    fn stationary_jet_is_equilibrium() {
        let p = params();
        let g = geom();
        let prog = ReferenceProgram {
            x_axis: AxisProgram::default(),
            y_axis: AxisProgram::default(),
            duration: 5.0,
        };
        let jet = assemble_jet(&p, &g, &prog, 2.0).unwrap();
        assert_eq!(jet.y1, [0.0; 4]);
        assert_eq!(jet.y2, [0.0; 4]);
        let mid_pressure = 0.5 * (p.p_min_abs + p.p_max_abs);
        assert_relative_eq!(
            jet.y3[0],
            muscle::force(&p, mid_pressure, p.eps0).unwrap(),
            max_relative = 1e-12
        );
        assert_abs_diff_eq!(jet.y3[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn jet_force_rate_matches_finite_difference() {
        let p = params();
        let g = geom();
        let prog = ReferenceProgram::default_program();
        let dt = 1e-4;
        // avoid t where the binding muscle can switch (symmetric poses)
        for &t in &[2.2, 7.9, 13.4, 31.0] {
            let jm = assemble_jet(&p, &g, &prog, t - dt).unwrap();
            let j0 = assemble_jet(&p, &g, &prog, t).unwrap();
            let jp = assemble_jet(&p, &g, &prog, t + dt).unwrap();
            let fd = (jp.y3[0] - jm.y3[0]) / (2.0 * dt);
            assert_relative_eq!(j0.y3[1], fd, max_relative = 1e-5);
        }
    }
}
