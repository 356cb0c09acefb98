//! Static servovalve model: mass flow as a function of muscle pressure and
//! command voltage, plus the inversion used by the controller to turn a
//! desired flow into a voltage.
//!
//! The experimental valve characterization behind the original hardware is
//! not available, so the default is an analytic stand-in with the same
//! qualitative shape: zero flow at a neutral voltage, charging flow that
//! shrinks as pressure approaches the supply, discharging flow that shrinks
//! as pressure approaches atmosphere. A measured polynomial coefficient
//! table can be loaded instead; it is inverted by bisection.

use crate::error::{ModelError, Result};

/// Bisection stopping width for inverting tabulated maps (V).
pub const BISECTION_TOL_V: f64 = 1e-12;
/// Bisection iteration cap; hitting it raises a diagnostics error.
pub const BISECTION_MAX_ITER: u32 = 200;

#[derive(Debug, Clone, PartialEq)]
pub enum ValveMap {
    /// q = k_q (v - v0) (P_s - P)/(P_s - P0) when v >= v0 (charging from the
    /// supply), q = k_q (v - v0) (P - P0)/(P_s - P0) when v < v0
    /// (discharging to atmosphere).
    Analytic {
        /// Flow gain (kg s^-1 V^-1).
        k_q: f64,
        /// Neutral voltage closing the valve (V).
        v0: f64,
        /// Supply pressure (Pa, absolute).
        p_s: f64,
        /// Atmospheric pressure (Pa, absolute).
        p_atm: f64,
        v_min: f64,
        v_max: f64,
    },
    /// q = sum over j,k of c[j][k] v^j P^k, with stated maximum degrees.
    /// Coefficients are SI: kg/s per V^j Pa^k.
    Table {
        coeffs: Vec<Vec<f64>>,
        v_min: f64,
        v_max: f64,
    },
}

impl Default for ValveMap {
    fn default() -> Self {
        ValveMap::Analytic {
            k_q: 1e-3,
            v0: 5.0,
            p_s: 8.0e5,
            p_atm: 1.013e5,
            v_min: 0.0,
            v_max: 10.0,
        }
    }
}

impl ValveMap {
    pub fn voltage_span(&self) -> (f64, f64) {
        match self {
            ValveMap::Analytic { v_min, v_max, .. } => (*v_min, *v_max),
            ValveMap::Table { v_min, v_max, .. } => (*v_min, *v_max),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ValveMap::Analytic {
                k_q,
                v0,
                p_s,
                p_atm,
                v_min,
                v_max,
            } => {
                if !(*k_q > 0.0 && k_q.is_finite()) {
                    return Err(ModelError::InvalidParameter {
                        name: "k_q",
                        detail: format!("flow gain must be positive and finite, got {k_q}"),
                    });
                }
                if !(p_s > p_atm && *p_atm > 0.0) {
                    return Err(ModelError::InvalidParameter {
                        name: "p_s",
                        detail: format!("need 0 < p_atm < p_s, got p_atm = {p_atm}, p_s = {p_s}"),
                    });
                }
                if !(v_min < v0 && v0 < v_max) {
                    return Err(ModelError::InvalidParameter {
                        name: "v0",
                        detail: format!(
                            "neutral voltage must lie strictly inside [{v_min}, {v_max}], got {v0}"
                        ),
                    });
                }
                Ok(())
            }
            ValveMap::Table {
                coeffs,
                v_min,
                v_max,
            } => {
                if coeffs.is_empty() || coeffs.iter().any(|row| row.is_empty()) {
                    return Err(ModelError::InvalidParameter {
                        name: "valve table",
                        detail: "empty coefficient grid".to_string(),
                    });
                }
                if !(v_min.is_finite() && v_max.is_finite() && v_min < v_max) {
                    return Err(ModelError::InvalidParameter {
                        name: "valve voltage span",
                        detail: format!("need finite v_min < v_max, got [{v_min}, {v_max}]"),
                    });
                }
                Ok(())
            }
        }
    }

    /// Sampled strict-monotonicity check of the flow in voltage, over the
    /// pressure interval the muscles operate in. Tabulated maps must pass
    /// this before being used for inversion.
    pub fn validate_monotone(&self, p_lo: f64, p_hi: f64) -> Result<()> {
        let (v_min, v_max) = self.voltage_span();
        for ip in 0..20 {
            let pressure = p_lo + (p_hi - p_lo) * ip as f64 / 19.0;
            let mut prev = f64::NEG_INFINITY;
            for iv in 0..100 {
                let v = v_min + (v_max - v_min) * iv as f64 / 99.0;
                let q = flow(self, pressure, v)?;
                if q <= prev {
                    return Err(ModelError::InvalidParameter {
                        name: "valve map",
                        detail: format!(
                            "flow not strictly increasing in voltage at P = {pressure:.4e} Pa, v = {v:.4} V"
                        ),
                    });
                }
                prev = q;
            }
        }
        Ok(())
    }
}

/// Mass flow (kg/s) into the muscle at pressure P for command voltage v.
pub fn flow(map: &ValveMap, pressure: f64, v: f64) -> Result<f64> {
    let (v_min, v_max) = map.voltage_span();
    if !(v >= v_min && v <= v_max) {
        return Err(ModelError::VoltageOutOfRange { v, v_min, v_max });
    }
    match map {
        ValveMap::Analytic {
            k_q,
            v0,
            p_s,
            p_atm,
            ..
        } => {
            let span = p_s - p_atm;
            let ratio = if v >= *v0 {
                (p_s - pressure) / span
            } else {
                (pressure - p_atm) / span
            };
            Ok(k_q * (v - v0) * ratio)
        }
        ValveMap::Table { coeffs, .. } => {
            // Horner in v of Horner-in-P row polynomials.
            let mut acc = 0.0;
            for row in coeffs.iter().rev() {
                let mut row_val = 0.0;
                for c in row.iter().rev() {
                    row_val = row_val * pressure + c;
                }
                acc = acc * v + row_val;
            }
            Ok(acc)
        }
    }
}

/// Reachable flow interval [q(v_min), q(v_max)] at this pressure. Valid for
/// maps that are monotone increasing in voltage.
pub fn flow_bounds(map: &ValveMap, pressure: f64) -> Result<(f64, f64)> {
    let (v_min, v_max) = map.voltage_span();
    Ok((flow(map, pressure, v_min)?, flow(map, pressure, v_max)?))
}

/// Voltage realizing the desired mass flow at pressure P, to within
/// |flow(P, v) - q| <= 1e-9 max(1, |q|). Closed form for the analytic map,
/// bisection for tabulated maps. Flows outside the reachable interval raise
/// [`ModelError::UnreachableFlow`] so the caller can clamp and log.
pub fn invert_flow(map: &ValveMap, pressure: f64, q_desired: f64) -> Result<f64> {
    let (q_min, q_max) = flow_bounds(map, pressure)?;
    if q_desired < q_min || q_desired > q_max {
        return Err(ModelError::UnreachableFlow {
            pressure,
            q_desired,
            q_min,
            q_max,
        });
    }
    match map {
        ValveMap::Analytic {
            k_q,
            v0,
            p_s,
            p_atm,
            v_min,
            v_max,
        } => {
            let span = p_s - p_atm;
            let v = if q_desired == 0.0 {
                *v0
            } else if q_desired > 0.0 {
                // charging branch; reachability above rules out P >= p_s
                v0 + q_desired * span / (k_q * (p_s - pressure))
            } else {
                v0 + q_desired * span / (k_q * (pressure - p_atm))
            };
            Ok(v.clamp(*v_min, *v_max))
        }
        ValveMap::Table { v_min, v_max, .. } => {
            let mut lo = *v_min;
            let mut hi = *v_max;
            for _ in 0..BISECTION_MAX_ITER {
                let mid = 0.5 * (lo + hi);
                if flow(map, pressure, mid)? < q_desired {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= BISECTION_TOL_V {
                    let v = 0.5 * (lo + hi);
                    let residual = flow(map, pressure, v)? - q_desired;
                    if residual.abs() <= 1e-9 * q_desired.abs().max(1.0) {
                        return Ok(v);
                    }
                    return Err(ModelError::BisectionFailed {
                        iterations: BISECTION_MAX_ITER,
                        residual,
                    });
                }
            }
            let residual = flow(map, pressure, 0.5 * (lo + hi))? - q_desired;
            Err(ModelError::BisectionFailed {
                iterations: BISECTION_MAX_ITER,
                residual,
            })
        }
    }
}

/// Parse a polynomial valve table.
///
/// Format: a first non-blank line `# degrees: J K`, then rows `j,k,c` with
/// one coefficient each. Grid cells never listed default to zero; listing
/// the same (j,k) twice is an error, as are indices beyond the stated
/// degrees. Additional lines starting with `#` are treated as comments.
pub fn parse_polynomial_table(text: &str, v_min: f64, v_max: f64) -> Result<ValveMap> {
    let bad = |lineno: usize, detail: String| ModelError::InvalidParameter {
        name: "valve table",
        detail: format!("line {lineno}: {detail}"),
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (first_no, first) = lines
        .next()
        .ok_or_else(|| bad(0, "empty table file".to_string()))?;
    let rest = first
        .strip_prefix("# degrees:")
        .ok_or_else(|| bad(first_no, "expected header '# degrees: J K'".to_string()))?;
    let degs: Vec<&str> = rest.split_whitespace().collect();
    if degs.len() != 2 {
        return Err(bad(first_no, "expected exactly two degree values".to_string()));
    }
    let j_deg: usize = degs[0]
        .parse()
        .map_err(|_| bad(first_no, format!("bad voltage degree '{}'", degs[0])))?;
    let k_deg: usize = degs[1]
        .parse()
        .map_err(|_| bad(first_no, format!("bad pressure degree '{}'", degs[1])))?;

    let mut coeffs = vec![vec![0.0; k_deg + 1]; j_deg + 1];
    let mut seen = vec![vec![false; k_deg + 1]; j_deg + 1];
    for (lineno, line) in lines {
        if line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(bad(lineno, format!("expected 'j,k,c', got '{line}'")));
        }
        let j: usize = parts[0]
            .parse()
            .map_err(|_| bad(lineno, format!("bad voltage index '{}'", parts[0])))?;
        let k: usize = parts[1]
            .parse()
            .map_err(|_| bad(lineno, format!("bad pressure index '{}'", parts[1])))?;
        let c: f64 = parts[2]
            .parse()
            .map_err(|_| bad(lineno, format!("bad coefficient '{}'", parts[2])))?;
        if j > j_deg || k > k_deg {
            return Err(bad(
                lineno,
                format!("index ({j},{k}) exceeds stated degrees ({j_deg},{k_deg})"),
            ));
        }
        if seen[j][k] {
            return Err(bad(lineno, format!("duplicate entry for ({j},{k})")));
        }
        seen[j][k] = true;
        coeffs[j][k] = c;
    }
    let map = ValveMap::Table {
        coeffs,
        v_min,
        v_max,
    };
    map.validate()?;
    Ok(map)
}
