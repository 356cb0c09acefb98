//! Shared fixtures for the criterion benchmarks: representative states and
//! jets on the default configuration's trajectory.

use pamsim::config::ExperimentConfig;
use pamsim::flatness::{self, FlatJet};
use pamsim::platform::PlantState;
use pamsim::reference;

/// Default experiment configuration used by every benchmark.
pub fn bench_config() -> ExperimentConfig {
    ExperimentConfig::builtin_default()
}

/// A mid-trajectory reference jet (t = 1.3 s of the default program).
pub fn bench_jet(cfg: &ExperimentConfig) -> FlatJet {
    reference::assemble_jet(&cfg.muscle, &cfg.geometry, &cfg.reference, 1.3)
        .expect("default program is feasible")
}

/// The plant state on the reference manifold at the benchmark jet.
pub fn bench_state(cfg: &ExperimentConfig) -> PlantState {
    let jet = bench_jet(cfg);
    flatness::flat_to_state(&cfg.muscle, &cfg.geometry, &jet)
        .expect("default jet inverts cleanly")
}
