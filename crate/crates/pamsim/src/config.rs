//! Experiment configuration: the aggregate of every model's parameters plus
//! run settings, and a strict line-oriented `key = value` parser with
//! `[section]` headers.
//!
//! The grammar is flat: blank lines and lines starting with `#` or `;` are
//! ignored, `[section]` switches the active section, and every other line
//! must be `key = value`. Angles in the file carry a `_deg` suffix and are
//! converted to radians on load. Unknown sections, unknown keys, and
//! duplicate keys are rejected with the offending line number.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::closed_loop::{ControllerMode, PiBaselineGains, PiGains, SensorModel};
use crate::error::{ModelError, Result};
use crate::muscle::MuscleParams;
use crate::platform::{Disturbance, PlatformGeometry};
use crate::reference::{AxisProgram, ReferenceProgram, Sinusoid};
use crate::valve::{self, ValveMap};

/// Configuration loading failure, split by phase so callers can map the
/// categories to distinct exit codes.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    /// The text does not conform to the grammar.
    #[error("config parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    /// A referenced file (config or valve table) could not be read.
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// The parsed values violate a model invariant.
    #[error(transparent)]
    Invalid(#[from] ModelError),
}

/// Everything a run needs. Field defaults mirror `config/default.cfg`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub muscle: MuscleParams,
    pub geometry: PlatformGeometry,
    pub valve: ValveMap,
    pub sensors: SensorModel,
    pub flat_gains: PiGains,
    pub baseline_gains: PiBaselineGains,
    pub reference: ReferenceProgram,
    pub disturbance: Disturbance,
    pub mode: ControllerMode,
    pub seed: u64,
    /// Integrator substeps per control period.
    pub substeps: u32,
}

impl ExperimentConfig {
    /// The default experiment: default physical parameters, analytic valve,
    /// 0.18-degree quantization, a small sinusoidal disturbance torque, the
    /// default two-sinusoid reference, and the tuned controller gains.
    pub fn builtin_default() -> Self {
        ExperimentConfig {
            muscle: MuscleParams::default(),
            geometry: PlatformGeometry::default(),
            valve: ValveMap::default(),
            sensors: SensorModel::default(),
            flat_gains: PiGains::default(),
            baseline_gains: PiBaselineGains::default(),
            reference: ReferenceProgram::default_program(),
            disturbance: Disturbance::Sinusoid {
                amp_x: 1.0,
                freq_x_hz: 0.25,
                phase_x: 0.0,
                amp_y: 1.0,
                freq_y_hz: 0.35,
                phase_y: 90.0_f64.to_radians(),
            },
            mode: ControllerMode::FlatnessPi,
            seed: 12345,
            substeps: 10,
        }
    }

    /// Cross-module validation of every parameter group.
    pub fn validate(&self) -> Result<()> {
        self.muscle.validate()?;
        self.geometry.validate()?;
        self.valve.validate()?;
        self.valve
            .validate_monotone(self.muscle.p_min_abs, self.muscle.p_max_abs)?;
        self.sensors.validate()?;
        self.flat_gains.validate()?;
        self.baseline_gains.validate()?;
        self.reference.validate(self.geometry.theta_limit)?;
        self.disturbance.validate()?;
        if self.substeps == 0 {
            return Err(ModelError::InvalidParameter {
                name: "substeps",
                detail: "must be at least 1".to_string(),
            });
        }
        Ok(())
    }
}

/// Read and parse a configuration file, resolve any valve table relative to
/// the file's directory, and validate the result.
pub fn load_config(path: &Path) -> std::result::Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base_dir = path.parent().unwrap_or_else(|| Path::new("."));
    let cfg = parse_config(&text, base_dir)?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_err(line: usize, msg: impl Into<String>) -> ConfigError {
    ConfigError::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_f64(line: usize, key: &str, value: &str) -> std::result::Result<f64, ConfigError> {
    value
        .trim()
        .parse::<f64>()
        .map_err(|_| parse_err(line, format!("{key}: expected a number, got '{value}'")))
}

fn parse_u64(line: usize, key: &str, value: &str) -> std::result::Result<u64, ConfigError> {
    value
        .trim()
        .parse::<u64>()
        .map_err(|_| parse_err(line, format!("{key}: expected an unsigned integer, got '{value}'")))
}

fn parse_tuple<const N: usize>(
    line: usize,
    key: &str,
    value: &str,
) -> std::result::Result<[f64; N], ConfigError> {
    let parts: Vec<&str> = value.split(',').collect();
    if parts.len() != N {
        return Err(parse_err(
            line,
            format!("{key}: expected {N} comma-separated numbers, got '{value}'"),
        ));
    }
    let mut out = [0.0; N];
    for (slot, part) in out.iter_mut().zip(parts) {
        *slot = parse_f64(line, key, part)?;
    }
    Ok(out)
}

/// Numeric suffix of keys like `x_sinusoid_3` (used only for uniqueness; the
/// components sum, so ordering does not matter).
fn indexed_key<'a>(key: &'a str, prefix: &str) -> Option<&'a str> {
    key.strip_prefix(prefix)
        .filter(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
}

#[derive(Default)]
struct ValveStaging {
    kind: Option<String>,
    k_q: Option<f64>,
    v0: Option<f64>,
    p_supply: Option<f64>,
    v_min: Option<f64>,
    v_max: Option<f64>,
    table_path: Option<(usize, String)>,
}

#[derive(Default)]
struct DisturbanceStaging {
    kind: Option<String>,
    gamma_x: Option<f64>,
    gamma_y: Option<f64>,
    amp_x: Option<f64>,
    freq_x_hz: Option<f64>,
    phase_x: Option<f64>,
    amp_y: Option<f64>,
    freq_y_hz: Option<f64>,
    phase_y: Option<f64>,
    rows: Vec<(f64, f64, f64)>,
}

/// Parse configuration text. `base_dir` anchors relative valve-table paths.
/// Values not present keep their built-in defaults. The result is not yet
/// validated; `load_config` does both.
pub fn parse_config(
    text: &str,
    base_dir: &Path,
) -> std::result::Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::builtin_default();
    let mut section: Option<String> = None;
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut v0_ref_explicit = false;
    let mut valve_stage = ValveStaging::default();
    let mut dist_stage = DisturbanceStaging::default();
    // The first sinusoid/waypoint key clears the built-in default program,
    // so a file-specified reference stands alone instead of stacking onto
    // it. Setting only `duration` keeps the default program.
    let mut reference_touched = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| parse_err(line_no, "unterminated section header"))?
                .trim();
            const SECTIONS: [&str; 8] = [
                "muscle",
                "platform",
                "valve",
                "sensors",
                "control",
                "reference",
                "disturbance",
                "run",
            ];
            if !SECTIONS.contains(&name) {
                return Err(parse_err(line_no, format!("unknown section [{name}]")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(line_no, format!("expected 'key = value', got '{line}'")))?;
        let key = key.trim();
        let value = value.trim();
        let section_name = section
            .clone()
            .ok_or_else(|| parse_err(line_no, "key before any [section] header"))?;
        if !seen.insert((section_name.clone(), key.to_string())) {
            return Err(parse_err(
                line_no,
                format!("duplicate key '{key}' in section [{section_name}]"),
            ));
        }
        let num = |v: &str| parse_f64(line_no, key, v);
        match (section_name.as_str(), key) {
            ("muscle", "l0") => cfg.muscle.l0 = num(value)?,
            ("muscle", "d0") => cfg.muscle.d0 = num(value)?,
            ("muscle", "theta0_deg") => cfg.muscle.theta0 = num(value)?.to_radians(),
            ("muscle", "alpha") => cfg.muscle.alpha = num(value)?,
            ("muscle", "k_force") => cfg.muscle.k_force = num(value)?,
            ("muscle", "eps_a") => cfg.muscle.eps_a = num(value)?,
            ("muscle", "eps_b") => cfg.muscle.eps_b = num(value)?,
            ("muscle", "eps0") => cfg.muscle.eps0 = num(value)?,
            ("muscle", "k_poly") => cfg.muscle.k_poly = num(value)?,
            ("muscle", "r_gas") => cfg.muscle.r_gas = num(value)?,
            ("muscle", "temperature") => cfg.muscle.temperature = num(value)?,
            ("muscle", "p_atm") => cfg.muscle.p_atm = num(value)?,
            ("muscle", "p_min") => cfg.muscle.p_min_abs = num(value)?,
            ("muscle", "p_max") => cfg.muscle.p_max_abs = num(value)?,
            ("muscle", "v0_ref") => {
                cfg.muscle.v0_ref = num(value)?;
                v0_ref_explicit = true;
            }
            ("platform", "radius") => cfg.geometry.radius = num(value)?,
            ("platform", "inertia") => cfg.geometry.inertia = num(value)?,
            ("platform", "phi1_deg") => cfg.geometry.phi[0] = num(value)?.to_radians(),
            ("platform", "phi2_deg") => cfg.geometry.phi[1] = num(value)?.to_radians(),
            ("platform", "phi3_deg") => cfg.geometry.phi[2] = num(value)?.to_radians(),
            ("platform", "theta_limit_deg") => {
                cfg.geometry.theta_limit = num(value)?.to_radians()
            }
            ("valve", "kind") => valve_stage.kind = Some(value.to_string()),
            ("valve", "k_q") => valve_stage.k_q = Some(num(value)?),
            ("valve", "v0") => valve_stage.v0 = Some(num(value)?),
            ("valve", "p_supply") => valve_stage.p_supply = Some(num(value)?),
            ("valve", "v_min") => valve_stage.v_min = Some(num(value)?),
            ("valve", "v_max") => valve_stage.v_max = Some(num(value)?),
            ("valve", "table_path") => {
                valve_stage.table_path = Some((line_no, value.to_string()))
            }
            ("sensors", "quantization_deg") => {
                cfg.sensors.angle_quantization = num(value)?.to_radians()
            }
            ("sensors", "pressure_noise_std") => cfg.sensors.pressure_noise_std = num(value)?,
            ("sensors", "period") => cfg.sensors.period = num(value)?,
            ("control", "substeps") => {
                cfg.substeps = parse_u64(line_no, key, value)?.try_into().map_err(|_| {
                    parse_err(line_no, format!("{key}: value too large"))
                })?
            }
            ("control", "flat_kp") => cfg.flat_gains.kp = parse_tuple::<3>(line_no, key, value)?,
            ("control", "flat_ki") => cfg.flat_gains.ki = parse_tuple::<3>(line_no, key, value)?,
            ("control", "flat_integrator_limit") => {
                cfg.flat_gains.integrator_limit = parse_tuple::<3>(line_no, key, value)?
            }
            ("control", "baseline_kp_angle") => cfg.baseline_gains.kp_angle = num(value)?,
            ("control", "baseline_ki_angle") => cfg.baseline_gains.ki_angle = num(value)?,
            ("control", "baseline_angle_integrator_limit") => {
                cfg.baseline_gains.angle_integrator_limit = num(value)?
            }
            ("control", "baseline_kp_pressure") => cfg.baseline_gains.kp_pressure = num(value)?,
            ("control", "baseline_ki_pressure") => cfg.baseline_gains.ki_pressure = num(value)?,
            ("control", "baseline_pressure_integrator_limit") => {
                cfg.baseline_gains.pressure_integrator_limit = num(value)?
            }
            ("reference", "duration") => cfg.reference.duration = num(value)?,
            ("reference", _) => {
                touch_reference(&mut cfg.reference, &mut reference_touched);
                if indexed_key(key, "x_sinusoid_").is_some() {
                    let [a, f, ph] = parse_tuple::<3>(line_no, key, value)?;
                    cfg.reference.x_axis.sinusoids.push(Sinusoid {
                        amplitude: a.to_radians(),
                        freq_hz: f,
                        phase: ph.to_radians(),
                    });
                } else if indexed_key(key, "y_sinusoid_").is_some() {
                    let [a, f, ph] = parse_tuple::<3>(line_no, key, value)?;
                    cfg.reference.y_axis.sinusoids.push(Sinusoid {
                        amplitude: a.to_radians(),
                        freq_hz: f,
                        phase: ph.to_radians(),
                    });
                } else if indexed_key(key, "x_waypoint_").is_some() {
                    let [t, a] = parse_tuple::<2>(line_no, key, value)?;
                    cfg.reference.x_axis.waypoints.push((t, a.to_radians()));
                } else if indexed_key(key, "y_waypoint_").is_some() {
                    let [t, a] = parse_tuple::<2>(line_no, key, value)?;
                    cfg.reference.y_axis.waypoints.push((t, a.to_radians()));
                } else {
                    return Err(parse_err(
                        line_no,
                        format!("unknown key '{key}' in section [reference]"),
                    ));
                }
            }
            ("disturbance", "kind") => dist_stage.kind = Some(value.to_string()),
            ("disturbance", "gamma_x") => dist_stage.gamma_x = Some(num(value)?),
            ("disturbance", "gamma_y") => dist_stage.gamma_y = Some(num(value)?),
            ("disturbance", "amp_x") => dist_stage.amp_x = Some(num(value)?),
            ("disturbance", "freq_x_hz") => dist_stage.freq_x_hz = Some(num(value)?),
            ("disturbance", "phase_x_deg") => {
                dist_stage.phase_x = Some(num(value)?.to_radians())
            }
            ("disturbance", "amp_y") => dist_stage.amp_y = Some(num(value)?),
            ("disturbance", "freq_y_hz") => dist_stage.freq_y_hz = Some(num(value)?),
            ("disturbance", "phase_y_deg") => {
                dist_stage.phase_y = Some(num(value)?.to_radians())
            }
            ("disturbance", _) if indexed_key(key, "row_").is_some() => {
                let [t, gx, gy] = parse_tuple::<3>(line_no, key, value)?;
                dist_stage.rows.push((t, gx, gy));
            }
            ("run", "mode") => {
                cfg.mode = value
                    .parse::<ControllerMode>()
                    .map_err(|e| parse_err(line_no, e.to_string()))?
            }
            ("run", "seed") => cfg.seed = parse_u64(line_no, key, value)?,
            (sec, key) => {
                return Err(parse_err(
                    line_no,
                    format!("unknown key '{key}' in section [{sec}]"),
                ))
            }
        }
    }

    if !v0_ref_explicit {
        cfg.muscle.v0_ref = crate::muscle::nominal_v0_ref(cfg.muscle.d0, cfg.muscle.l0);
    }
    cfg.valve = finish_valve(valve_stage, &cfg, base_dir)?;
    if let Some(d) = finish_disturbance(dist_stage)? {
        cfg.disturbance = d;
    }
    Ok(cfg)
}

fn touch_reference(reference: &mut ReferenceProgram, touched: &mut bool) {
    if !*touched {
        *touched = true;
        let duration = reference.duration;
        *reference = ReferenceProgram {
            x_axis: AxisProgram::default(),
            y_axis: AxisProgram::default(),
            duration,
        };
    }
}

fn finish_valve(
    stage: ValveStaging,
    cfg: &ExperimentConfig,
    base_dir: &Path,
) -> std::result::Result<ValveMap, ConfigError> {
    let kind = stage.kind.as_deref().unwrap_or("analytic");
    match kind {
        "analytic" => {
            if let Some((line, _)) = stage.table_path {
                return Err(parse_err(line, "table_path is only valid with kind = table"));
            }
            let default = ValveMap::default();
            let (dk, dv0, dps, dvmin, dvmax) = match default {
                ValveMap::Analytic {
                    k_q,
                    v0,
                    p_s,
                    v_min,
                    v_max,
                    ..
                } => (k_q, v0, p_s, v_min, v_max),
                ValveMap::Table { .. } => unreachable!("default valve map is analytic"),
            };
            Ok(ValveMap::Analytic {
                k_q: stage.k_q.unwrap_or(dk),
                v0: stage.v0.unwrap_or(dv0),
                p_s: stage.p_supply.unwrap_or(dps),
                p_atm: cfg.muscle.p_atm,
                v_min: stage.v_min.unwrap_or(dvmin),
                v_max: stage.v_max.unwrap_or(dvmax),
            })
        }
        "table" => {
            if stage.k_q.is_some() || stage.v0.is_some() || stage.p_supply.is_some() {
                return Err(parse_err(
                    0,
                    "k_q/v0/p_supply are only valid with kind = analytic",
                ));
            }
            let (line, rel) = stage.table_path.ok_or_else(|| {
                parse_err(0, "kind = table requires table_path")
            })?;
            let path = base_dir.join(&rel);
            let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Io {
                path: path.clone(),
                source,
            })?;
            let v_min = stage.v_min.unwrap_or(0.0);
            let v_max = stage.v_max.unwrap_or(10.0);
            valve::parse_polynomial_table(&text, v_min, v_max).map_err(|e| {
                parse_err(line, format!("valve table {}: {e}", path.display()))
            })
        }
        other => Err(parse_err(
            0,
            format!("unknown valve kind '{other}' (expected analytic or table)"),
        )),
    }
}

fn finish_disturbance(
    stage: DisturbanceStaging,
) -> std::result::Result<Option<Disturbance>, ConfigError> {
    let Some(kind) = stage.kind else {
        if stage.gamma_x.is_some()
            || stage.gamma_y.is_some()
            || stage.amp_x.is_some()
            || stage.amp_y.is_some()
            || !stage.rows.is_empty()
        {
            return Err(parse_err(0, "disturbance values given without kind ="));
        }
        return Ok(None);
    };
    match kind.as_str() {
        "none" => Ok(Some(Disturbance::none())),
        "constant" => Ok(Some(Disturbance::Constant {
            gamma_x: stage.gamma_x.unwrap_or(0.0),
            gamma_y: stage.gamma_y.unwrap_or(0.0),
        })),
        "sinusoid" => Ok(Some(Disturbance::Sinusoid {
            amp_x: stage.amp_x.unwrap_or(0.0),
            freq_x_hz: stage.freq_x_hz.unwrap_or(0.0),
            phase_x: stage.phase_x.unwrap_or(0.0),
            amp_y: stage.amp_y.unwrap_or(0.0),
            freq_y_hz: stage.freq_y_hz.unwrap_or(0.0),
            phase_y: stage.phase_y.unwrap_or(0.0),
        })),
        "table" => Ok(Some(Disturbance::Table { rows: stage.rows })),
        other => Err(parse_err(
            0,
            format!("unknown disturbance kind '{other}'"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn builtin_default_validates() {
        ExperimentConfig::builtin_default().validate().unwrap();
    }

    #[test]
    fn empty_text_gives_builtin_default() {
        let cfg = parse_config("", Path::new(".")).unwrap();
        assert_eq!(cfg, ExperimentConfig::builtin_default());
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let text = "\n# comment\n; also a comment\n[run]\nseed = 7\n";
        let cfg = parse_config(text, Path::new(".")).unwrap();
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn degree_keys_convert_to_radians() {
        let text = "[muscle]\ntheta0_deg = 30\n[platform]\ntheta_limit_deg = 12\n[sensors]\nquantization_deg = 0.36\n";
        let cfg = parse_config(text, Path::new(".")).unwrap();
        assert_relative_eq!(cfg.muscle.theta0, 30.0_f64.to_radians());
        assert_relative_eq!(cfg.geometry.theta_limit, 12.0_f64.to_radians());
        assert_relative_eq!(cfg.sensors.angle_quantization, 0.36_f64.to_radians());
    }

    #[test]
    fn v0_ref_tracks_resized_muscle() {
        let text = "[muscle]\nl0 = 0.6\nd0 = 0.04\n";
        let cfg = parse_config(text, Path::new(".")).unwrap();
        assert_relative_eq!(
            cfg.muscle.v0_ref,
            std::f64::consts::FRAC_PI_4 * 0.04_f64.powi(2) * 0.6,
            max_relative = 1e-12
        );
        let text = "[muscle]\nl0 = 0.6\nd0 = 0.04\nv0_ref = 2e-4\n";
        let cfg = parse_config(text, Path::new(".")).unwrap();
        assert_eq!(cfg.muscle.v0_ref, 2e-4);
    }

    #[test]
    fn unknown_section_key_and_duplicate_rejected() {
        for (text, needle) in [
            ("[nope]\n", "unknown section"),
            ("[muscle]\nbogus = 1\n", "unknown key"),
            ("[run]\nseed = 1\nseed = 2\n", "duplicate key"),
            ("seed = 1\n", "before any"),
            ("[run\n", "unterminated"),
            ("[run]\nseed\n", "expected 'key = value'"),
            ("[run]\nseed = lots\n", "unsigned integer"),
        ] {
            let err = parse_config(text, Path::new(".")).unwrap_err();
            let msg = err.to_string();
            assert!(
                msg.contains(needle),
                "expected '{needle}' in '{msg}' for {text:?}"
            );
            assert!(matches!(err, ConfigError::Parse { .. }));
        }
    }

    #[test]
    fn parse_error_reports_line_number() {
        let err = parse_config("[run]\nseed = 1\nbogus = 2\n", Path::new(".")).unwrap_err();
        match err {
            ConfigError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn reference_section_replaces_default_program() {
        let text = "[reference]\nduration = 10\nx_sinusoid_1 = 2, 0.5, 90\n";
        let cfg = parse_config(text, Path::new(".")).unwrap();
        assert_eq!(cfg.reference.duration, 10.0);
        assert_eq!(cfg.reference.x_axis.sinusoids.len(), 1);
        assert!(cfg.reference.y_axis.sinusoids.is_empty());
        let s = cfg.reference.x_axis.sinusoids[0];
        assert_relative_eq!(s.amplitude, 2.0_f64.to_radians());
        assert_eq!(s.freq_hz, 0.5);
        assert_relative_eq!(s.phase, std::f64::consts::FRAC_PI_2);
    }

    #[test]
    fn waypoints_parse_in_order() {
        let text =
            "[reference]\nduration = 30\nx_waypoint_1 = 0, 0\nx_waypoint_2 = 10, 4\nx_waypoint_3 = 20, -3\n";
        let cfg = parse_config(text, Path::new(".")).unwrap();
        let w = &cfg.reference.x_axis.waypoints;
        assert_eq!(w.len(), 3);
        assert_eq!(w[1].0, 10.0);
        assert_relative_eq!(w[1].1, 4.0_f64.to_radians());
    }

    #[test]
    fn disturbance_kinds_parse() {
        let c = parse_config("[disturbance]\nkind = none\n", Path::new(".")).unwrap();
        assert_eq!(c.disturbance, Disturbance::none());
        let c = parse_config(
            "[disturbance]\nkind = constant\ngamma_x = 0.4\ngamma_y = -0.2\n",
            Path::new("."),
        )
        .unwrap();
        assert_eq!(c.disturbance.at(3.0), (0.4, -0.2));
        let c = parse_config(
            "[disturbance]\nkind = table\nrow_1 = 0, 0, 0\nrow_2 = 1, 2, -1\n",
            Path::new("."),
        )
        .unwrap();
        assert_eq!(c.disturbance.at(0.5), (1.0, -0.5));
        assert!(parse_config("[disturbance]\nkind = hail\n", Path::new(".")).is_err());
        assert!(parse_config("[disturbance]\ngamma_x = 1\n", Path::new(".")).is_err());
    }

    #[test]
    fn valve_table_kind_requires_path_and_rejects_analytic_keys() {
        let err = parse_config("[valve]\nkind = table\n", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("table_path"));
        let err = parse_config(
            "[valve]\nkind = table\nk_q = 1e-3\ntable_path = x.csv\n",
            Path::new("."),
        )
        .unwrap_err();
        assert!(err.to_string().contains("only valid with kind = analytic"));
        let err =
            parse_config("[valve]\ntable_path = x.csv\n", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("only valid with kind = table"));
    }

    #[test]
    fn valve_table_loads_from_file() {
        let dir = std::env::temp_dir().join(format!("pamsim-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let table = dir.join("valve.csv");
        // linear-in-v map with zero flow at 5 V, independent of pressure
        std::fs::write(&table, "# degrees: 1 0\n0,0,-5e-3\n1,0,1e-3\n").unwrap();
        let text = "[valve]\nkind = table\ntable_path = valve.csv\n";
        let cfg = parse_config(text, &dir).unwrap();
        match &cfg.valve {
            ValveMap::Table { coeffs, .. } => {
                assert_eq!(coeffs.len(), 2);
                assert_eq!(coeffs[0][0], -5e-3);
            }
            other => panic!("expected table map, got {other:?}"),
        }
        let q = valve::flow(&cfg.valve, 4.0e5, 7.5).unwrap();
        assert_relative_eq!(q, 2.5e-3, max_relative = 1e-12);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn analytic_valve_inherits_muscle_atmosphere() {
        let text = "[muscle]\np_atm = 9.9e4\n[valve]\nk_q = 2e-3\n";
        let cfg = parse_config(text, Path::new(".")).unwrap();
        match cfg.valve {
            ValveMap::Analytic { k_q, p_atm, .. } => {
                assert_eq!(k_q, 2e-3);
                assert_eq!(p_atm, 9.9e4);
            }
            other => panic!("expected analytic map, got {other:?}"),
        }
    }

    #[test]
    fn gain_triples_parse() {
        let text = "[control]\nflat_kp = 10, 20, 30\nflat_ki = 1, 2, 3\nflat_integrator_limit = 0.1, 0.2, 0.3\nsubsteps = 5\n";
        let cfg = parse_config(text, Path::new(".")).unwrap();
        assert_eq!(cfg.flat_gains.kp, [10.0, 20.0, 30.0]);
        assert_eq!(cfg.flat_gains.ki, [1.0, 2.0, 3.0]);
        assert_eq!(cfg.flat_gains.integrator_limit, [0.1, 0.2, 0.3]);
        assert_eq!(cfg.substeps, 5);
        assert!(parse_config("[control]\nflat_kp = 1, 2\n", Path::new(".")).is_err());
    }

    #[test]
    fn validation_rejects_bad_values_after_parse() {
        // parses fine, fails validation: theta0 of 89 degrees makes the
        // force gain vanish inside the operating contraction range
        let text = "[muscle]\ntheta0_deg = 89\n";
        let cfg = parse_config(text, Path::new(".")).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn run_section_sets_mode_and_seed() {
        let text = "[run]\nmode = pi-only\nseed = 99\n";
        let cfg = parse_config(text, Path::new(".")).unwrap();
        assert_eq!(cfg.mode, ControllerMode::PiOnly);
        assert_eq!(cfg.seed, 99);
        assert!(parse_config("[run]\nmode = magic\n", Path::new(".")).is_err());
    }
}
