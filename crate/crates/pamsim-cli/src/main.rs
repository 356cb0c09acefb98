//! Batch entry point: load a configuration, run closed-loop experiments or
//! verification suites, and emit telemetry/report files.
//!
//! Exit codes: 0 success, 2 usage, 3 configuration parse error,
//! 4 validation error, 5 runtime abort, 6 I/O error, 7 verification
//! failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pamsim::closed_loop::{self, ControllerMode, RunRecord, Summary};
use pamsim::config::{self, ConfigError, ExperimentConfig};
use pamsim::flatness;
use pamsim::muscle;
use pamsim::platform::{Disturbance, PlantState};
use pamsim::valve;

const EXIT_CONFIG_PARSE: u8 = 3;
const EXIT_VALIDATION: u8 = 4;
const EXIT_RUNTIME: u8 = 5;
const EXIT_IO: u8 = 6;
const EXIT_VERIFY_FAILED: u8 = 7;

#[derive(Debug)]
enum CliError {
    ConfigParse(String),
    Validation(String),
    Runtime(String),
    Io(String),
    VerifyFailed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::ConfigParse(_) => EXIT_CONFIG_PARSE,
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Io(_) => EXIT_IO,
            CliError::VerifyFailed(_) => EXIT_VERIFY_FAILED,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::ConfigParse(m)
            | CliError::Validation(m)
            | CliError::Runtime(m)
            | CliError::Io(m)
            | CliError::VerifyFailed(m) => m,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "pamsim",
    version,
    about = "Simulator and model-based controller for a 2-DOF platform driven by three pneumatic artificial muscles"
)]
struct Cli {
    /// Configuration file (built-in defaults when omitted)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a closed-loop experiment; writes telemetry CSV and a summary
    Simulate {
        /// Controller mode (overrides the config file)
        #[arg(long, value_parser = ["flatness-pi", "pi-only", "flatness-only", "all"])]
        mode: Option<String>,
        /// Random seed (overrides the config file)
        #[arg(long)]
        seed: Option<u64>,
        /// Horizon in seconds (overrides the config file)
        #[arg(long)]
        duration: Option<f64>,
        /// Output directory
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Worker threads for independent runs (only used with --mode all)
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run the model verification suites and report pass/fail per suite
    Verify {
        /// Grid resolution for the determinant sweep suite
        #[arg(long, default_value_t = 201, value_parser = clap::value_parser!(u64).range(2..))]
        grid_n: u64,
    },
    /// Tabulate the coupling-determinant trig factor m over the tilt range
    #[command(alias = "sweep_determinant")]
    SweepDeterminant {
        /// Grid resolution per axis
        #[arg(long, default_value_t = 201, value_parser = clap::value_parser!(u64).range(2..))]
        grid_n: u64,
        /// Output directory
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate {
            mode,
            seed,
            duration,
            out,
            jobs,
        } => simulate(cfg, mode, seed, duration, &out, jobs),
        Command::Verify { grid_n } => verify(&cfg, grid_n),
        Command::SweepDeterminant { grid_n, out } => sweep_determinant(&cfg, grid_n, &out),
    }
}

fn load(path: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    match path {
        Some(path) => config::load_config(path).map_err(|e| match e {
            ConfigError::Parse { .. } => CliError::ConfigParse(e.to_string()),
            ConfigError::Io { .. } => CliError::Io(e.to_string()),
            ConfigError::Invalid(_) => CliError::Validation(e.to_string()),
        }),
        None => {
            let cfg = ExperimentConfig::builtin_default();
            cfg.validate()
                .map_err(|e| CliError::Validation(e.to_string()))?;
            Ok(cfg)
        }
    }
}

fn simulate(
    mut cfg: ExperimentConfig,
    mode: Option<String>,
    seed: Option<u64>,
    duration: Option<f64>,
    out: &Path,
    jobs: usize,
) -> Result<(), CliError> {
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(duration) = duration {
        cfg.reference.duration = duration;
    }
    let modes: Vec<ControllerMode> = match mode.as_deref() {
        Some("all") => ControllerMode::ALL.to_vec(),
        Some(name) => vec![name
            .parse()
            .map_err(|e: pamsim::ModelError| CliError::Validation(e.to_string()))?],
        None => vec![cfg.mode],
    };
    cfg.validate()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    fs::create_dir_all(out)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))?;

    let mut results: Vec<(ControllerMode, (Vec<RunRecord>, Summary))> =
        Vec::with_capacity(modes.len());
    let workers = jobs.max(1).min(modes.len().max(1));
    for chunk in modes.chunks(workers.max(1)) {
        let chunk_results = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&mode| {
                    let mut run_cfg = cfg.clone();
                    run_cfg.mode = mode;
                    scope.spawn(move || (mode, closed_loop::run_experiment(&run_cfg)))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("experiment thread panicked"))
                .collect::<Vec<_>>()
        });
        for (mode, result) in chunk_results {
            let pair =
                result.map_err(|e| CliError::Runtime(format!("{mode} run aborted: {e}")))?;
            results.push((mode, pair));
        }
    }

    for (mode, (records, summary)) in &results {
        let telemetry_path = out.join(format!("telemetry-{mode}.csv"));
        let summary_path = out.join(format!("summary-{mode}.txt"));
        write_atomic(&telemetry_path, &telemetry_csv(records))?;
        write_atomic(&summary_path, &summary_text(summary))?;
        println!(
            "{mode}: rms_theta_x_deg = {}, rms_theta_y_deg = {}, saturation_count = {}, violation_count = {}",
            summary.rms_theta_x_deg,
            summary.rms_theta_y_deg,
            summary.saturation_count,
            summary.violation_count
        );
        println!("wrote {}", telemetry_path.display());
        println!("wrote {}", summary_path.display());
    }
    Ok(())
}

/// Write via a temporary file in the same directory and rename into place,
/// so an abort never leaves a partial file under the final name.
fn write_atomic(path: &Path, content: &str) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, content)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path)
        .map_err(|e| CliError::Io(format!("cannot rename into {}: {e}", path.display())))?;
    Ok(())
}

fn telemetry_csv(records: &[RunRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 220 + 512);
    out.push_str(
        "t,theta_x,theta_y,omega_x,omega_y,p1,p2,p3,\
         meas_theta_x,meas_theta_y,ref_theta_x,ref_theta_y,ref_f3,\
         q_cmd_1,q_cmd_2,q_cmd_3,v_1,v_2,v_3,force_1,force_2,force_3,\
         err_theta_x,err_theta_y,err_f3,saturated_1,saturated_2,saturated_3,\
         angle_violation,force_violation\n",
    );
    out.push_str(
        "# units: s,rad,rad,rad/s,rad/s,Pa,Pa,Pa,\
         rad,rad,rad,rad,N,\
         kg/s,kg/s,kg/s,V,V,V,N,N,N,\
         rad,rad,N,flag,flag,flag,\
         flag,flag\n",
    );
    let flag = |b: bool| if b { '1' } else { '0' };
    for r in records {
        let s = &r.state;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            s.theta_x,
            s.theta_y,
            s.omega_x,
            s.omega_y,
            s.pressures[0],
            s.pressures[1],
            s.pressures[2],
            r.meas_theta_x,
            r.meas_theta_y,
            r.ref_theta_x,
            r.ref_theta_y,
            r.ref_f3,
            r.command.q[0],
            r.command.q[1],
            r.command.q[2],
            r.command.v[0],
            r.command.v[1],
            r.command.v[2],
            r.forces[0],
            r.forces[1],
            r.forces[2],
            r.errors[0],
            r.errors[1],
            r.errors[2],
            flag(r.saturated[0]),
            flag(r.saturated[1]),
            flag(r.saturated[2]),
            flag(r.angle_violation),
            flag(r.force_violation),
        );
    }
    out
}

fn summary_text(s: &Summary) -> String {
    format!(
        "mode = {}\nseed = {}\nduration_s = {}\nperiods = {}\nmetrics_defined = {}\n\
         rms_theta_x_deg = {}\nrms_theta_y_deg = {}\nrms_f3_n = {}\n\
         saturation_count = {}\nviolation_count = {}\n",
        s.mode,
        s.seed,
        s.duration_s,
        s.periods,
        s.metrics_defined,
        s.rms_theta_x_deg,
        s.rms_theta_y_deg,
        s.rms_f3_n,
        s.saturation_count,
        s.violation_count
    )
}

fn sweep_rows(cfg: &ExperimentConfig, grid_n: u64) -> (String, f64) {
    let geom = &cfg.geometry;
    let limit_deg = geom.theta_limit.to_degrees();
    let n = grid_n as usize;
    let mut csv = String::with_capacity(n * n * 24 + 64);
    csv.push_str("theta_x_deg,theta_y_deg,m\n");
    let mut min_m = f64::INFINITY;
    for ix in 0..n {
        let tx_deg = -limit_deg + 2.0 * limit_deg * ix as f64 / (n - 1) as f64;
        for iy in 0..n {
            let ty_deg = -limit_deg + 2.0 * limit_deg * iy as f64 / (n - 1) as f64;
            let m = flatness::trig_determinant_factor(
                geom,
                tx_deg.to_radians(),
                ty_deg.to_radians(),
            );
            min_m = min_m.min(m);
            let _ = writeln!(csv, "{tx_deg},{ty_deg},{m}");
        }
    }
    (csv, min_m)
}

fn sweep_determinant(cfg: &ExperimentConfig, grid_n: u64, out: &Path) -> Result<(), CliError> {
    let (csv, min_m) = sweep_rows(cfg, grid_n);
    fs::create_dir_all(out)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))?;
    let path = out.join("determinant-sweep.csv");
    write_atomic(&path, &csv)?;
    println!("min_m = {min_m}");
    println!("wrote {}", path.display());
    if min_m <= 0.0 {
        return Err(CliError::Runtime(format!(
            "coupling determinant factor is not positive over the tilt range (min {min_m})"
        )));
    }
    Ok(())
}

struct SuiteReport {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn verify(cfg: &ExperimentConfig, grid_n: u64) -> Result<(), CliError> {
    let suites = [
        suite_determinant(cfg, grid_n),
        suite_flat_roundtrip(cfg).map_err(|e| CliError::Runtime(e.to_string()))?,
        suite_lie_certificate(cfg),
        suite_valve_roundtrip(cfg).map_err(|e| CliError::Runtime(e.to_string()))?,
        suite_polytropic(cfg).map_err(|e| CliError::Runtime(e.to_string()))?,
    ];
    let mut failures = 0;
    for s in &suites {
        let verdict = if s.passed { "PASS" } else { "FAIL" };
        println!("{}: {} ({})", s.name, verdict, s.detail);
        if !s.passed {
            failures += 1;
        }
    }
    if failures > 0 {
        Err(CliError::VerifyFailed(format!(
            "{failures} verification suite(s) failed"
        )))
    } else {
        Ok(())
    }
}

/// Positivity of the determinant trig factor over the tilt box, plus its
/// closed-form value at the level pose.
fn suite_determinant(cfg: &ExperimentConfig, grid_n: u64) -> SuiteReport {
    let (_, min_m) = sweep_rows(cfg, grid_n);
    let center = flatness::trig_determinant_factor(&cfg.geometry, 0.0, 0.0);
    let center_err = (center - 3.0_f64.sqrt() / 2.0).abs();
    let passed = min_m > 0.0 && center_err <= 1e-12;
    SuiteReport {
        name: "determinant_positivity",
        passed,
        detail: format!("min m = {min_m:.6} on {grid_n}x{grid_n}, |m(0,0) - sqrt(3)/2| = {center_err:.2e}"),
    }
}

/// Round trip state -> flat outputs -> state along a quiet flatness-only
/// run: the flat outputs and their derivatives are evaluated on each
/// recorded state, then the inversion must reproduce that state.
fn suite_flat_roundtrip(cfg: &ExperimentConfig) -> Result<SuiteReport, pamsim::ModelError> {
    let mut quiet = cfg.clone();
    quiet.mode = ControllerMode::FlatnessOnly;
    quiet.reference.duration = quiet.reference.duration.min(2.0);
    quiet.sensors.angle_quantization = 0.0;
    quiet.sensors.pressure_noise_std = 0.0;
    quiet.disturbance = Disturbance::none();
    let (records, _) = closed_loop::run_experiment(&quiet)?;
    let (p, geom) = (&quiet.muscle, &quiet.geometry);
    let mut worst = 0.0_f64;
    for r in &records {
        let x = r.state;
        let lie = flatness::lie_outputs(p, geom, &x)?;
        let eps3 = muscle::contraction(p, geom, x.theta_x, x.theta_y, 2);
        let f3 = muscle::force(p, x.pressures[2], eps3)?;
        let jet = flatness::FlatJet {
            y1: [x.theta_x, x.omega_x, lie.lf2_y1, 0.0],
            y2: [x.theta_y, x.omega_y, lie.lf2_y2, 0.0],
            y3: [f3, 0.0],
        };
        let recon = flatness::flat_to_state(p, geom, &jet)?;
        for (a, b) in recon.to_array().iter().zip(x.to_array()) {
            worst = worst.max((a - b).abs() / b.abs().max(1e-6));
        }
    }
    Ok(SuiteReport {
        name: "flat_roundtrip",
        passed: worst <= 1e-6,
        detail: format!(
            "worst state reconstruction error = {worst:.2e} rel over {} states",
            records.len()
        ),
    })
}

/// Coupling-matrix structure over random operating states: the determinant
/// factorization and nonzero rows at the characteristic orders.
fn suite_lie_certificate(cfg: &ExperimentConfig) -> SuiteReport {
    let p = &cfg.muscle;
    let geom = &cfg.geometry;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst_rel = 0.0_f64;
    let mut min_row_norm = f64::INFINITY;
    let mut failures = 0u32;
    for _ in 0..200 {
        // Rejection-sample tilt angles so every muscle stays inside the
        // contraction range the force model is defined on; the corners of
        // the raw angle box fall outside it.
        let (theta_x, theta_y) = loop {
            let tx = rng.gen_range(-geom.theta_limit..geom.theta_limit);
            let ty = rng.gen_range(-geom.theta_limit..geom.theta_limit);
            let ok = (0..3).all(|i| {
                let eps = muscle::contraction(p, geom, tx, ty, i);
                (muscle::EPS_OP_MIN + 1e-3..=muscle::EPS_OP_MAX - 1e-3).contains(&eps)
            });
            if ok {
                break (tx, ty);
            }
        };
        let x = PlantState {
            theta_x,
            theta_y,
            omega_x: rng.gen_range(-1.0..1.0),
            omega_y: rng.gen_range(-1.0..1.0),
            pressures: [
                rng.gen_range(p.p_min_abs..p.p_max_abs),
                rng.gen_range(p.p_min_abs..p.p_max_abs),
                rng.gen_range(p.p_min_abs..p.p_max_abs),
            ],
        };
        match flatness::coupling_matrix(p, geom, &x) {
            Ok(delta) => {
                let det = delta.mat.determinant();
                let product = delta.gain_factor * delta.trig_factor;
                let rel = ((det - product) / product).abs();
                worst_rel = worst_rel.max(rel);
                for row in 0..3 {
                    let norm = (0..3)
                        .map(|c| delta.mat[(row, c)].powi(2))
                        .sum::<f64>()
                        .sqrt();
                    min_row_norm = min_row_norm.min(norm);
                }
            }
            Err(_) => failures += 1,
        }
    }
    let passed = failures == 0 && worst_rel <= 1e-10 && min_row_norm > 0.0;
    SuiteReport {
        name: "lie_certificate",
        passed,
        detail: format!(
            "worst det factorization error = {worst_rel:.2e}, min row norm = {min_row_norm:.3e}, failures = {failures}"
        ),
    }
}

/// Voltage/flow inversion round trip and monotonicity of the valve map.
fn suite_valve_roundtrip(cfg: &ExperimentConfig) -> Result<SuiteReport, pamsim::ModelError> {
    let p = &cfg.muscle;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e3779b97f4a7c15);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let pressure = rng.gen_range(p.p_min_abs..p.p_max_abs);
        let (q_lo, q_hi) = valve::flow_bounds(&cfg.valve, pressure)?;
        let q = rng.gen_range(q_lo..q_hi);
        let v = valve::invert_flow(&cfg.valve, pressure, q)?;
        let q_back = valve::flow(&cfg.valve, pressure, v)?;
        worst = worst.max((q_back - q).abs());
    }
    let monotone = cfg.valve.validate_monotone(p.p_min_abs, p.p_max_abs).is_ok();
    Ok(SuiteReport {
        name: "valve_roundtrip",
        passed: worst <= 1e-9 && monotone,
        detail: format!("worst |flow(invert(q)) - q| = {worst:.2e} kg/s, monotone = {monotone}"),
    })
}

/// P V^k conservation for sealed muscles over a free oscillation.
fn suite_polytropic(cfg: &ExperimentConfig) -> Result<SuiteReport, pamsim::ModelError> {
    let p = &cfg.muscle;
    let geom = &cfg.geometry;
    let mut x = PlantState {
        theta_x: 0.0,
        theta_y: 0.0,
        omega_x: 0.05,
        omega_y: -0.03,
        pressures: [0.5 * (p.p_min_abs + p.p_max_abs); 3],
    };
    let invariant = |x: &PlantState, i: usize| -> Result<f64, pamsim::ModelError> {
        let eps = muscle::contraction(p, geom, x.theta_x, x.theta_y, i);
        Ok(x.pressures[i] * muscle::volume(p, eps)?.powf(p.k_poly))
    };
    let start = [invariant(&x, 0)?, invariant(&x, 1)?, invariant(&x, 2)?];
    let dt = 1e-4;
    let mut worst = 0.0_f64;
    for _ in 0..10_000 {
        x = closed_loop::plant_step(p, geom, &x, &[0.0; 3], (0.0, 0.0), dt)?.state;
        for (i, s) in start.iter().enumerate() {
            worst = worst.max(((invariant(&x, i)? - s) / s).abs());
        }
    }
    Ok(SuiteReport {
        name: "polytropic_invariant",
        passed: worst <= 1e-5,
        detail: format!("worst relative drift of P V^k = {worst:.2e} over 1 s sealed"),
    })
}
