//! Shared setup for the criterion benches.

use nalgebra::DVector;
use tephra_core::model::{Locations, ParameterVector, SimulatorConfig, Surrogate};
use tephra_core::rng::derive_stream;

pub fn surrogate(noise: f64) -> Surrogate {
    Surrogate::new(
        SimulatorConfig {
            noise_scale: noise,
            ..SimulatorConfig::default()
        },
        Locations::default_fan(),
    )
    .unwrap()
}

/// A small batch of simulated datasets for distance benchmarks.
pub fn sample_datasets(n: usize) -> Vec<DVector<f64>> {
    let sim = surrogate(0.1);
    (0..n)
        .map(|i| {
            let theta = ParameterVector::plume(120.0 + i as f64, 40.0 + (i % 13) as f64 * 3.0);
            sim.simulate_seeded(&theta, derive_stream(5, i as u64))
                .unwrap()
                .to_dvector()
        })
        .collect()
}
