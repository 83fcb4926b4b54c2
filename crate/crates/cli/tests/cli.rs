//! Integration tests for the command surface: flag handling, exit codes,
//! stage chaining, provenance checks, and the child-process team protocol
//! against the real binary.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use tephra_cli::commands::{run_evaluate, run_generate, run_train};
use tephra_cli::config::LoadedConfig;
use tephra_cli::manifest::StageManifest;
use tephra_cli::CliError;
use tephra_core::metric::TrainingSet;
use tephra_core::model::{Locations, ParameterVector, SimulatorConfig, Surrogate};
use tephra_core::scheduler::{ProcessTeam, RunningTeam, WorkItem};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_tephra")
}

/// Writes a small but complete run config into `dir` and returns its path.
fn write_config(dir: &Path, master_seed: u64, extra: &str) -> PathBuf {
    let locations = dir.join("locations.csv");
    Locations::default_fan().to_csv_path(&locations).unwrap();
    let obs = dir.join("obs.json");
    let sim = Surrogate::new(SimulatorConfig::default(), Locations::default_fan()).unwrap();
    let data = sim
        .simulate_seeded(&ParameterVector::plume(173.87, 84.55), 7)
        .unwrap();
    std::fs::write(
        &obs,
        serde_json::to_string(&serde_json::json!({ "loads": data.loads() })).unwrap(),
    )
    .unwrap();
    let text = format!(
        r#"
master_seed = {master_seed}

[prior]
lower = [100.0, 30.0]
upper = [300.0, 100.0]

[simulator]
locations = "{}"
noise_scale = 0.1

[training]
n = 40
train_fraction = 0.75

[metric]
technique = "triplet"
quantile = 0.6
hidden = [16, 8]
embedding_dim = 4
margin = 1.0
p_similar = 0.4
learning_rate = 0.001
momentum = 0.9
epochs = 25
batch_size = 8

[abc]
n_sample = 30
n_step = 3
acc_cutoff = 0.03
keep_fraction = 0.5
observation = "{}"

[ppc]
n_draws = 20

{extra}
"#,
        locations.display(),
        obs.display()
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

#[test]
fn shipped_data_files_match_their_generators() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let shipped = Locations::from_csv_path(&root.join("data/locations.csv")).unwrap();
    assert_eq!(shipped, Locations::default_fan(), "regenerate with the gen_locations example");

    let obs: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(root.join("data/example_observation.json")).unwrap(),
    )
    .unwrap();
    let sim = Surrogate::new(
        SimulatorConfig {
            noise_scale: 0.1,
            ..SimulatorConfig::default()
        },
        shipped,
    )
    .unwrap();
    let expected = sim
        .simulate_seeded(
            &ParameterVector::plume(173.87, 84.55),
            tephra_core::rng::derive_seed(42, "observation"),
        )
        .unwrap();
    let loads: Vec<f64> = obs["loads"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(loads, expected.loads(), "regenerate with the gen_observation example");
}

#[test]
fn missing_config_exits_with_code_2() {
    let out = run(&["generate", "--config", "/nonexistent.toml", "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_technique_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 1, "");
    let out_dir = dir.path().join("out");
    let out = run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--technique",
        "nonsense",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn full_pipeline_produces_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 3, "");
    let out_dir = dir.path().join("out");
    let c = config.to_str().unwrap();
    let o = out_dir.to_str().unwrap();

    assert!(run(&["generate", "--config", c, "--out", o]).status.success());
    // 40 samples at 0.75 -> 30 train / 10 test.
    let ts = TrainingSet::load(&out_dir.join("training_set.jsonl"), &out_dir.join("split.json"))
        .unwrap();
    assert_eq!(ts.len(), 40);
    assert_eq!(ts.train_indices().len(), 30);
    assert_eq!(ts.test_indices().len(), 10);

    assert!(run(&["train", "--config", c, "--out", o]).status.success());
    let artifact = out_dir.join("artifact_triplet_q0.60.json");
    assert!(artifact.exists());
    assert!(out_dir.join("artifact_triplet_q0.60.json.manifest.json").exists());
    assert!(out_dir.join("loss_triplet_q0.60.csv").exists());

    assert!(run(&["evaluate", "--config", c, "--out", o, artifact.to_str().unwrap()])
        .status
        .success());
    let report = std::fs::read_to_string(out_dir.join("kl_report.csv")).unwrap();
    // Baseline euclidean + triplet rows, 10 observations each, plus header.
    assert_eq!(report.lines().count(), 1 + 2 * 10);

    assert!(run(&[
        "infer",
        "--config",
        c,
        "--out",
        o,
        "--artifact",
        artifact.to_str().unwrap()
    ])
    .status
    .success());
    assert!(out_dir.join("posterior_samples.csv").exists());
    assert!(out_dir.join("generations.json").exists());
    assert!(out_dir.join("estimate.json").exists());

    assert!(run(&["ppc", "--config", c, "--out", o]).status.success());
    let ppc = std::fs::read_to_string(out_dir.join("ppc.csv")).unwrap();
    assert_eq!(ppc.lines().count(), 1 + 72);
}

#[test]
fn seed_flag_changes_outputs_and_run_id() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 5, "");
    let c = config.to_str().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    assert!(run(&["generate", "--config", c, "--out", out_a.to_str().unwrap()])
        .status
        .success());
    assert!(run(&[
        "generate",
        "--config",
        c,
        "--out",
        out_b.to_str().unwrap(),
        "--seed",
        "99"
    ])
    .status
    .success());
    let a = std::fs::read_to_string(out_a.join("training_set.jsonl")).unwrap();
    let b = std::fs::read_to_string(out_b.join("training_set.jsonl")).unwrap();
    assert_ne!(a, b);
    let ma = StageManifest::read(&out_a.join("manifest_generate.json")).unwrap();
    let mb = StageManifest::read(&out_b.join("manifest_generate.json")).unwrap();
    assert_ne!(ma.run_id, mb.run_id);
}

#[test]
fn artifacts_from_other_runs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 7, "");
    let out_dir = dir.path().join("out");

    let loaded_a = LoadedConfig::load(&config, None).unwrap();
    run_generate(&loaded_a, &out_dir, None, None).unwrap();
    let artifact = run_train(&loaded_a, &out_dir, Some("triplet"), None).unwrap();

    // Same files, different master seed: a different run identity.
    let loaded_b = LoadedConfig::load(&config, Some(99)).unwrap();
    match run_evaluate(&loaded_b, &out_dir, &[artifact]) {
        Err(CliError::Config(msg)) => assert!(msg.contains("mismatch"), "{msg}"),
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn saturated_quantile_fails_fast_with_hint() {
    // A training set where one sample is similar to all others at a high
    // quantile: the deep trainers must refuse with a remediation hint.
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 9, "");
    let loaded = LoadedConfig::load(&config, None).unwrap();
    let out_dir = dir.path().join("out");
    std::fs::create_dir_all(&out_dir).unwrap();

    let mut thetas: Vec<ParameterVector> = (0..11)
        .map(|i| ParameterVector::plume(150.0 + i as f64 * 1e-3, 60.0))
        .collect();
    thetas.push(ParameterVector::plume(290.0, 95.0));
    let datasets: Vec<DVector<f64>> = (0..12)
        .map(|i| DVector::from_element(4, 1.0 + i as f64))
        .collect();
    let ts = TrainingSet::with_leading_split(thetas, datasets, 1.0).unwrap();
    ts.write_jsonl(&out_dir.join("training_set.jsonl")).unwrap();
    ts.write_split(&out_dir.join("split.json")).unwrap();
    StageManifest::new("generate", &loaded, 0)
        .write(&out_dir.join("manifest_generate.json"))
        .unwrap();

    match run_train(&loaded, &out_dir, Some("contrastive"), Some(0.9)) {
        Err(CliError::Config(msg)) => {
            assert!(msg.contains("similar to all others"), "{msg}");
        }
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn oracle_artifact_is_selected_best_with_zero_median() {
    // Datasets carry the parameters in their first two components plus a
    // junk third component. A handcrafted summary-stats artifact that
    // extracts the first two components reproduces the true parameter
    // distance exactly and must win the evaluation with median 0, while the
    // Euclidean baseline is polluted by the junk and scores above it.
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 11, "");
    let loaded = LoadedConfig::load(&config, None).unwrap();
    let out_dir = dir.path().join("out");
    std::fs::create_dir_all(&out_dir).unwrap();

    let thetas: Vec<ParameterVector> = (0..30)
        .map(|i| {
            // Deterministic scatter via the seed mixer.
            let a = tephra_core::rng::sm64(i) % 1000;
            let b = tephra_core::rng::sm64(i + 1000) % 1000;
            ParameterVector::plume(100.0 + a as f64 / 10.0, 30.0 + b as f64 / 20.0)
        })
        .collect();
    let datasets: Vec<DVector<f64>> = thetas
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let junk = (tephra_core::rng::sm64(i as u64 + 2000) % 1000) as f64;
            DVector::from_column_slice(&[t.u0(), t.r0(), junk])
        })
        .collect();
    let ts = TrainingSet::with_leading_split(thetas, datasets, 0.5).unwrap();
    ts.write_jsonl(&out_dir.join("training_set.jsonl")).unwrap();
    ts.write_split(&out_dir.join("split.json")).unwrap();
    StageManifest::new("generate", &loaded, 0)
        .write(&out_dir.join("manifest_generate.json"))
        .unwrap();

    // One affine layer picking out the parameter components.
    let projection = tephra_core::nn::NetworkWeights::from_specs(&[tephra_core::nn::LayerSpec {
        w: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
        b: vec![0.0, 0.0],
    }])
    .unwrap();
    let artifact_path = out_dir.join("artifact_oracle.json");
    tephra_core::distances::LearnedDistance::SummaryStats(projection)
        .save(&artifact_path)
        .unwrap();
    let mut sidecar = StageManifest::new("train", &loaded, 0);
    sidecar.note("technique", "oracle");
    sidecar
        .write(&out_dir.join("artifact_oracle.json.manifest.json"))
        .unwrap();

    run_evaluate(&loaded, &out_dir, &[artifact_path]).unwrap();
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("kl_summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["best"][0], "oracle");
    let rows = summary["reports"].as_array().unwrap();
    let oracle = rows.iter().find(|r| r["technique"] == "oracle").unwrap();
    let baseline = rows.iter().find(|r| r["technique"] == "euclidean").unwrap();
    assert_eq!(oracle["median"].as_f64().unwrap(), 0.0);
    assert!(baseline["median"].as_f64().unwrap() > 0.0);
}

#[test]
fn sdml_identity_prior_with_zero_penalties_returns_identity() {
    // With eta = lambda = 0 and an identity prior the SDML objective is
    // tr(M) - log det M, minimized exactly at M = I.
    let dir = tempfile::tempdir().unwrap();
    let extra = "[metric.sdml]\neta = 0.0\nlambda = 0.0\nmax_iters = 5000\ntol = 1e-6\nprior = \"identity\"\n";
    let config = write_config(dir.path(), 15, extra);
    let loaded = LoadedConfig::load(&config, None).unwrap();
    let out_dir = dir.path().join("out");
    run_generate(&loaded, &out_dir, None, None).unwrap();
    let artifact = run_train(&loaded, &out_dir, Some("sdml"), None).unwrap();
    let distance = tephra_core::distances::LearnedDistance::load(&artifact).unwrap();
    match distance {
        tephra_core::distances::LearnedDistance::Mahalanobis(m) => {
            let dim = m.dim();
            let err = (m.matrix() - DMatrix::<f64>::identity(dim, dim)).amax();
            assert!(err < 1e-4, "distance from identity: {err}");
        }
        other => panic!("expected a Mahalanobis artifact, got {}", other.variant_name()),
    }
}

#[test]
fn team_worker_round_trips_real_work_frames() {
    // ProcessTeam against the real `tephra team-worker` child: results must
    // match the surrogate computed in-process.
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 13, "");
    let mut team = ProcessTeam::spawn(
        0,
        bin(),
        &[
            "team-worker".into(),
            "--config".into(),
            config.to_string_lossy().into_owned(),
            "--workers".into(),
            "3".into(),
        ],
        Some(Duration::from_secs(30)),
    )
    .unwrap();

    let sim = Surrogate::new(
        SimulatorConfig {
            noise_scale: 0.1,
            ..SimulatorConfig::default()
        },
        Locations::default_fan(),
    )
    .unwrap();
    for id in 0..3u64 {
        let item = WorkItem {
            item_id: id,
            theta: ParameterVector::plume(150.0 + id as f64, 60.0),
            seed: 1000 + id,
        };
        let loads = team.execute(&item).unwrap().unwrap();
        let expected = sim.simulate_seeded(&item.theta, item.seed).unwrap();
        assert_eq!(loads, expected.loads(), "item {id}");
    }
    Box::new(team).shutdown();
}

#[test]
fn constant_zero_distance_terminates_inference_degenerately() {
    // An all-zero embedding maps every dataset to the same point, so every
    // distance is 0 and the threshold cannot decrease: inference completes
    // normally after the initial prior population, reporting the reason.
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 17, "");
    let loaded = LoadedConfig::load(&config, None).unwrap();
    let out_dir = dir.path().join("out");
    std::fs::create_dir_all(&out_dir).unwrap();

    let zero_net = tephra_core::nn::NetworkWeights::from_specs(&[tephra_core::nn::LayerSpec {
        w: vec![vec![0.0; 72]; 3],
        b: vec![0.0; 3],
    }])
    .unwrap();
    let artifact_path = out_dir.join("artifact_zero.json");
    tephra_core::distances::LearnedDistance::Embedding(zero_net)
        .save(&artifact_path)
        .unwrap();
    StageManifest::new("train", &loaded, 0)
        .write(&out_dir.join("artifact_zero.json.manifest.json"))
        .unwrap();

    tephra_cli::commands::run_infer(&loaded, &out_dir, &artifact_path, None, None).unwrap();
    let generations: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_dir.join("generations.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(generations["generations"].as_array().unwrap().len(), 1);
    assert_eq!(generations["termination"], "DegenerateThreshold");
    assert_eq!(generations["generations"][0]["gamma"].as_f64().unwrap(), 0.0);
}

#[test]
fn infer_without_observation_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    // Write a config with no [abc] observation entry.
    let locations = dir.path().join("locations.csv");
    Locations::default_fan().to_csv_path(&locations).unwrap();
    let text = format!(
        "master_seed = 1\n[prior]\nlower = [100.0, 30.0]\nupper = [300.0, 100.0]\n[simulator]\nlocations = \"{}\"\n",
        locations.display()
    );
    let config = dir.path().join("run.toml");
    std::fs::write(&config, text).unwrap();
    let out = run(&[
        "infer",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
        "--artifact",
        "/nonexistent.json",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
