//! Rigid-platform rotational dynamics.
//!
//! The platform tilts about two horizontal axes (angles theta_x, theta_y)
//! under the pull of three muscles attached at radius R and angular
//! positions phi, plus an unmodeled disturbance torque. The torque matrix M
//! maps the three traction forces to angular accelerations; E and G are its
//! column partition used by the flat-output inversion.

use crate::error::{ModelError, Result};
use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3};

/// Attachment geometry and inertia. The attachment angles are fixed at
/// 120-degree spacing (-90, 30, 150 degrees); radius, inertia, and the
/// mechanical angle bound are configurable.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatformGeometry {
    /// Muscle attachment radius R from the platform center (m).
    pub radius: f64,
    /// Moment of inertia J about either horizontal axis (kg m^2).
    pub inertia: f64,
    /// Attachment angles phi of the three muscles (rad).
    pub phi: [f64; 3],
    /// Mechanical tilt bound (rad); exceeding it is flagged, not fatal.
    pub theta_limit: f64,
}

impl Default for PlatformGeometry {
    fn default() -> Self {
        PlatformGeometry {
            radius: 0.20,
            inertia: 0.05,
            phi: [
                -90.0_f64.to_radians(),
                30.0_f64.to_radians(),
                150.0_f64.to_radians(),
            ],
            theta_limit: 15.0_f64.to_radians(),
        }
    }
}

impl PlatformGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(ModelError::InvalidParameter {
                name: "radius",
                detail: format!("must be positive and finite, got {}", self.radius),
            });
        }
        if !(self.inertia > 0.0 && self.inertia.is_finite()) {
            return Err(ModelError::InvalidParameter {
                name: "inertia",
                detail: format!("must be positive and finite, got {}", self.inertia),
            });
        }
        if !(self.theta_limit > 0.0 && self.theta_limit < std::f64::consts::FRAC_PI_2) {
            return Err(ModelError::InvalidParameter {
                name: "theta_limit",
                detail: format!("must lie in (0, pi/2) rad, got {}", self.theta_limit),
            });
        }
        // Pairwise distinct attachment angles, and the first two must not be
        // separated by a multiple of pi: the flat inversion solves a 2x2
        // system whose determinant carries sin(phi2 - phi1).
        for i in 0..3 {
            for j in (i + 1)..3 {
                let d = (self.phi[i] - self.phi[j]).rem_euclid(2.0 * std::f64::consts::PI);
                if d.abs() < 1e-9 || (d - 2.0 * std::f64::consts::PI).abs() < 1e-9 {
                    return Err(ModelError::InvalidParameter {
                        name: "phi",
                        detail: format!("attachment angles {i} and {j} coincide"),
                    });
                }
            }
        }
        if (self.phi[1] - self.phi[0]).sin().abs() < 1e-9 {
            return Err(ModelError::InvalidParameter {
                name: "phi",
                detail: "sin(phi2 - phi1) vanishes; the 2x2 force solve would be singular"
                    .to_string(),
            });
        }
        Ok(())
    }
}

/// Full plant state: two tilt angles, their rates, and the three absolute
/// muscle pressures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub theta_x: f64,
    pub theta_y: f64,
    pub omega_x: f64,
    pub omega_y: f64,
    /// Absolute muscle pressures (Pa).
    pub pressures: [f64; 3],
}

impl PlantState {
    pub fn to_array(&self) -> [f64; 7] {
        [
            self.theta_x,
            self.theta_y,
            self.omega_x,
            self.omega_y,
            self.pressures[0],
            self.pressures[1],
            self.pressures[2],
        ]
    }

    pub fn from_array(x: [f64; 7]) -> Self {
        PlantState {
            theta_x: x[0],
            theta_y: x[1],
            omega_x: x[2],
            omega_y: x[3],
            pressures: [x[4], x[5], x[6]],
        }
    }

    /// True when either tilt angle exceeds the mechanical bound.
    pub fn exceeds_angle_bound(&self, geom: &PlatformGeometry) -> bool {
        self.theta_x.abs() > geom.theta_limit || self.theta_y.abs() > geom.theta_limit
    }
}

/// Unmodeled disturbance torque profile (N m) applied about the two axes.
#[derive(Debug, Clone, PartialEq)]
pub enum Disturbance {
    Constant {
        gamma_x: f64,
        gamma_y: f64,
    },
    Sinusoid {
        amp_x: f64,
        freq_x_hz: f64,
        phase_x: f64,
        amp_y: f64,
        freq_y_hz: f64,
        phase_y: f64,
    },
    /// Piecewise-linear table of (t, gamma_x, gamma_y), constant before the
    /// first and after the last breakpoint.
    Table { rows: Vec<(f64, f64, f64)> },
}

impl Disturbance {
    pub fn none() -> Self {
        Disturbance::Constant {
            gamma_x: 0.0,
            gamma_y: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64| v.is_finite();
        let ok = match self {
            Disturbance::Constant { gamma_x, gamma_y } => finite(*gamma_x) && finite(*gamma_y),
            Disturbance::Sinusoid {
                amp_x,
                freq_x_hz,
                phase_x,
                amp_y,
                freq_y_hz,
                phase_y,
            } => [amp_x, freq_x_hz, phase_x, amp_y, freq_y_hz, phase_y]
                .iter()
                .all(|v| finite(**v)),
            Disturbance::Table { rows } => {
                !rows.is_empty()
                    && rows.iter().all(|r| finite(r.0) && finite(r.1) && finite(r.2))
                    && rows.windows(2).all(|w| w[0].0 < w[1].0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidParameter {
                name: "disturbance",
                detail: "values must be finite (and table times strictly increasing)".to_string(),
            })
        }
    }

    /// Torque (gamma_x, gamma_y) at time t.
    pub fn at(&self, t: f64) -> (f64, f64) {
        match self {
            Disturbance::Constant { gamma_x, gamma_y } => (*gamma_x, *gamma_y),
            Disturbance::Sinusoid {
                amp_x,
                freq_x_hz,
                phase_x,
                amp_y,
                freq_y_hz,
                phase_y,
            } => {
                let two_pi = 2.0 * std::f64::consts::PI;
                (
                    amp_x * (two_pi * freq_x_hz * t + phase_x).sin(),
                    amp_y * (two_pi * freq_y_hz * t + phase_y).sin(),
                )
            }
            Disturbance::Table { rows } => {
                if t <= rows[0].0 {
                    return (rows[0].1, rows[0].2);
                }
                if t >= rows[rows.len() - 1].0 {
                    let last = rows[rows.len() - 1];
                    return (last.1, last.2);
                }
                let idx = rows.partition_point(|r| r.0 <= t);
                let (t0, x0, y0) = rows[idx - 1];
                let (t1, x1, y1) = rows[idx];
                let u = (t - t0) / (t1 - t0);
                (x0 + u * (x1 - x0), y0 + u * (y1 - y0))
            }
        }
    }
}

/// Torque matrix M(theta_x, theta_y): angular acceleration = M F + Gamma/J.
///
/// Row 1: -(R/J) sin(phi_i) cos(theta_x) cos(theta_y).
/// Row 2:  (R/J) (cos(phi_i) cos(theta_y) + sin(phi_i) sin(theta_x) sin(theta_y)).
pub fn torque_matrix(geom: &PlatformGeometry, theta_x: f64, theta_y: f64) -> Matrix2x3<f64> {
    let scale = geom.radius / geom.inertia;
    let (sx, cx) = theta_x.sin_cos();
    let (sy, cy) = theta_y.sin_cos();
    Matrix2x3::from_fn(|row, i| {
        let (sp, cp) = geom.phi[i].sin_cos();
        if row == 0 {
            -scale * sp * cx * cy
        } else {
            scale * (cp * cy + sp * sx * sy)
        }
    })
}

/// Column partition of the torque matrix: E is columns 1 and 2 (the forces
/// eliminated by the flat inversion), G is column 3.
pub fn eg_matrices(
    geom: &PlatformGeometry,
    theta_x: f64,
    theta_y: f64,
) -> (Matrix2<f64>, Vector2<f64>) {
    let m = torque_matrix(geom, theta_x, theta_y);
    (
        Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]),
        Vector2::new(m[(0, 2)], m[(1, 2)]),
    )
}

/// Angular acceleration of the platform given the three muscle forces and
/// the disturbance torque (gamma_x, gamma_y) at the current instant.
pub fn angular_acceleration(
    geom: &PlatformGeometry,
    state: &PlantState,
    forces: &[f64; 3],
    gamma: (f64, f64),
) -> (f64, f64) {
    let m = torque_matrix(geom, state.theta_x, state.theta_y);
    let acc = m * Vector3::new(forces[0], forces[1], forces[2]);
    (
        acc[0] + gamma.0 / geom.inertia,
        acc[1] + gamma.1 / geom.inertia,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};

    fn unit_geom() -> PlatformGeometry {
        // R/J = 1 for the hand-evaluated matrix entries.
        PlatformGeometry {
            radius: 1.0,
            inertia: 1.0,
            ..PlatformGeometry::default()
        }
    }

    #[test]
    fn default_geometry_validates() {
        PlatformGeometry::default().validate().unwrap();
    }

    #[test]
    fn coincident_attachment_angles_rejected() {
        let geom = PlatformGeometry {
            phi: [0.3, 0.3, 1.0],
            ..PlatformGeometry::default()
        };
        assert!(geom.validate().is_err());
    }

    #[test]
    fn opposed_first_two_attachments_rejected() {
        // phi2 - phi1 = pi makes the 2x2 flat-inversion solve singular.
        let geom = PlatformGeometry {
            phi: [0.0, std::f64::consts::PI, 1.0],
            ..PlatformGeometry::default()
        };
        assert!(geom.validate().is_err());
    }

    #[test]
    fn torque_matrix_level_pose_hand_values() {
        let m = torque_matrix(&unit_geom(), 0.0, 0.0);
        let s3 = 3.0_f64.sqrt() / 2.0;
        assert_abs_diff_eq!(m[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(0, 1)], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(0, 2)], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(1, 0)], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(1, 1)], s3, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(1, 2)], -s3, epsilon = 1e-15);
    }

    #[test]
    fn torque_matrix_row_sums_vanish_at_level_pose() {
        // 120-degree spacing makes both row sums zero: a common force
        // produces no net torque there.
        let m = torque_matrix(&PlatformGeometry::default(), 0.0, 0.0);
        for row in 0..2 {
            let sum: f64 = (0..3).map(|i| m[(row, i)]).sum();
            assert_abs_diff_eq!(sum, 0.0, epsilon = 1e-15);
        }
        let common = m * Vector3::new(123.4, 123.4, 123.4);
        assert_abs_diff_eq!(common[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(common[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn eg_partition_matches_torque_matrix() {
        let geom = PlatformGeometry::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let tx = rng.gen_range(-0.3..0.3);
            let ty = rng.gen_range(-0.3..0.3);
            let m = torque_matrix(&geom, tx, ty);
            let (e, g) = eg_matrices(&geom, tx, ty);
            for row in 0..2 {
                assert_abs_diff_eq!(e[(row, 0)], m[(row, 0)], epsilon = 1e-12);
                assert_abs_diff_eq!(e[(row, 1)], m[(row, 1)], epsilon = 1e-12);
                assert_abs_diff_eq!(g[row], m[(row, 2)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn e_determinant_level_pose() {
        let (e, _) = eg_matrices(&unit_geom(), 0.0, 0.0);
        // det E = (R/J)^2 sin(phi2 - phi1) cos factors = sin(120 deg) here
        let det = e[(0, 0)] * e[(1, 1)] - e[(0, 1)] * e[(1, 0)];
        assert_relative_eq!(det, 3.0_f64.sqrt() / 2.0, max_relative = 1e-14);
    }

    #[test]
    fn g_column_level_pose() {
        let (_, g) = eg_matrices(&unit_geom(), 0.0, 0.0);
        assert_abs_diff_eq!(g[0], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], -3.0_f64.sqrt() / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn acceleration_trivial_cases() {
        let geom = PlatformGeometry::default();
        let state = PlantState {
            theta_x: 0.0,
            theta_y: 0.0,
            omega_x: 0.0,
            omega_y: 0.0,
            pressures: [2e5; 3],
        };
        assert_eq!(
            angular_acceleration(&geom, &state, &[0.0; 3], (0.0, 0.0)),
            (0.0, 0.0)
        );
        // equal forces at the level pose
        let (ax, ay) = angular_acceleration(&geom, &state, &[400.0; 3], (0.0, 0.0));
        assert_abs_diff_eq!(ax, 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(ay, 0.0, epsilon = 1e-10);
        // third column selection
        let (ax, ay) = angular_acceleration(&geom, &state, &[0.0, 0.0, 250.0], (0.0, 0.0));
        let (_, g) = eg_matrices(&geom, 0.0, 0.0);
        assert_relative_eq!(ax, g[0] * 250.0, max_relative = 1e-13);
        assert_relative_eq!(ay, g[1] * 250.0, max_relative = 1e-13);
    }

    #[test]
    fn acceleration_is_linear_in_forces_and_torque() {
        let geom = PlatformGeometry::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let state = PlantState {
            theta_x: 0.12,
            theta_y: -0.07,
            omega_x: 0.0,
            omega_y: 0.0,
            pressures: [2e5; 3],
        };
        for _ in 0..50 {
            let f1: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-500.0..500.0));
            let f2: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-500.0..500.0));
            let g1 = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let g2 = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let sum_f: [f64; 3] = std::array::from_fn(|i| f1[i] + f2[i]);
            let a1 = angular_acceleration(&geom, &state, &f1, g1);
            let a2 = angular_acceleration(&geom, &state, &f2, g2);
            let a12 = angular_acceleration(&geom, &state, &sum_f, (g1.0 + g2.0, g1.1 + g2.1));
            assert_abs_diff_eq!(a12.0, a1.0 + a2.0, epsilon = 1e-12 * a12.0.abs().max(1.0));
            assert_abs_diff_eq!(a12.1, a1.1 + a2.1, epsilon = 1e-12 * a12.1.abs().max(1.0));
        }
    }

    #[test]
    fn disturbance_profiles() {
        assert_eq!(Disturbance::none().at(3.2), (0.0, 0.0));
        let c = Disturbance::Constant {
            gamma_x: 0.4,
            gamma_y: -0.2,
        };
        assert_eq!(c.at(0.0), (0.4, -0.2));
        assert_eq!(c.at(100.0), (0.4, -0.2));

        let s = Disturbance::Sinusoid {
            amp_x: 1.0,
            freq_x_hz: 0.25,
            phase_x: 0.0,
            amp_y: 2.0,
            freq_y_hz: 0.5,
            phase_y: std::f64::consts::FRAC_PI_2,
        };
        let (gx, gy) = s.at(1.0);
        assert_relative_eq!(gx, (0.5 * std::f64::consts::PI).sin(), max_relative = 1e-12);
        assert_relative_eq!(
            gy,
            2.0 * (std::f64::consts::PI + std::f64::consts::FRAC_PI_2).sin(),
            max_relative = 1e-12
        );

        let t = Disturbance::Table {
            rows: vec![(0.0, 0.0, 1.0), (2.0, 4.0, -1.0)],
        };
        t.validate().unwrap();
        assert_eq!(t.at(-1.0), (0.0, 1.0));
        assert_eq!(t.at(3.0), (4.0, -1.0));
        let (gx, gy) = t.at(0.5);
        assert_relative_eq!(gx, 1.0, max_relative = 1e-12);
        assert_relative_eq!(gy, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn nonmonotone_table_rejected() {
        let t = Disturbance::Table {
            rows: vec![(0.0, 0.0, 0.0), (0.0, 1.0, 1.0)],
        };
        assert!(t.validate().is_err());
    }
}
