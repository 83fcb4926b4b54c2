// Regenerates data/example_observation.json: one surrogate dataset at the
// canonical test point (173.87, 84.55), stream seed derive_seed(42, "observation").

use tephra_core::model::{Locations, ParameterVector, SimulatorConfig, Surrogate};
use tephra_core::rng::derive_seed;

fn main() {
    let sim = Surrogate::new(
        SimulatorConfig { noise_scale: 0.1, ..Default::default() },
        Locations::from_csv_path(std::path::Path::new("data/locations.csv")).unwrap(),
    )
    .unwrap();
    let data = sim
        .simulate_seeded(&ParameterVector::plume(173.87, 84.55), derive_seed(42, "observation"))
        .unwrap();
    let json = serde_json::json!({ "loads": data.loads(), "location_ids": data.location_ids() });
    std::fs::write(
        "data/example_observation.json",
        serde_json::to_string_pretty(&json).unwrap(),
    )
    .unwrap();
    println!("wrote data/example_observation.json");
}
