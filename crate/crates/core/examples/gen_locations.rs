fn main() {
    tephra_core::model::Locations::default_fan()
        .to_csv_path(std::path::Path::new("data/locations.csv"))
        .unwrap();
}
