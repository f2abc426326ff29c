use std::path::PathBuf;

use oeduu_cli::{CliError, ExperimentConfig};

fn shipped(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn config_error(text: &str) -> String {
    match ExperimentConfig::from_toml_str(text) {
        Err(CliError::Config(msg)) => msg,
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn shipped_configs_load() {
    assert_eq!(ExperimentConfig::load(&shipped("desk.toml")).unwrap(), ExperimentConfig::default());
    assert_eq!(ExperimentConfig::load(&shipped("smoke.toml")).unwrap(), ExperimentConfig::smoke());
    let full = ExperimentConfig::load(&shipped("full-scale.toml")).unwrap();
    assert_eq!(full.n_sensors(), 234);
    assert_eq!(full.experiment.n_saa, 100);
    assert_eq!(full.transport.n_steps, 250);
}

#[test]
fn desk_defaults() {
    let c = ExperimentConfig::default();
    assert_eq!((c.grid.nx, c.grid.ny), (49, 33));
    assert_eq!(c.n_sensors(), 60);
    assert_eq!(c.transport.obs_times.len(), 5);
    assert_eq!((c.experiment.n_saa, c.evaluation.n_eval), (20, 50));
    assert_eq!(c.transport.n_steps, 120);
    assert_eq!(c.experiment.gamma_grid.len(), 6);
    assert_eq!(c.reduced_time_indices(), vec![3, 4]);
}

#[test]
fn empty_file_is_default() {
    assert_eq!(ExperimentConfig::from_toml_str("").unwrap(), ExperimentConfig::default());
}

#[test]
fn round_trip_through_text() {
    for c in [ExperimentConfig::default(), ExperimentConfig::smoke()] {
        assert_eq!(ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }
}

#[test]
fn unknown_keys_rejected() {
    assert!(config_error("sed = 3").contains("sed"));
    assert!(config_error("[noise]\nsigmaa = 0.1").contains("sigmaa"));
    assert!(config_error("[transport]\ndt = 0.1").contains("dt"));
}

#[test]
fn errors_name_the_field() {
    assert!(config_error("[noise]\nsigma = -1.0").starts_with("noise.sigma"));
    assert!(config_error("[reduction]\nmu = 1.5").starts_with("reduction.mu"));
    assert!(config_error("[experiment]\ngamma_grid = [1.0, -2.0]").starts_with("experiment.gamma_grid[1]"));
    assert!(config_error("[experiment]\nreduced_obs_times = [12.0]").starts_with("experiment.reduced_obs_times[0]"));
    assert!(config_error("[experiment]\nn_saa = 5\ndeterministic_samples = 6").starts_with("experiment.deterministic_samples"));
    assert!(config_error("[evaluation]\npercentiles = [101.0]").starts_with("evaluation.percentiles[0]"));
    assert!(config_error("[penalty]\nalpha_tries = 0").starts_with("penalty.alpha_tries"));
    assert!(config_error("[darcy]\nt0_min = 2.0\nt0_max = 1.0").starts_with("darcy.t0_min"));
    assert!(config_error("[transport]\nobs_times = [7.0, 18.0]").starts_with("transport"));
    assert!(config_error("[grid]\nnx = 2").starts_with("grid"));
}

#[test]
fn type_errors_are_config_errors() {
    let e = ExperimentConfig::from_toml_str("seed = \"abc\"").unwrap_err();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn missing_file() {
    let e = ExperimentConfig::load(&shipped("no-such.toml")).unwrap_err();
    assert!(matches!(e, CliError::Config(_)));
}

#[test]
fn derived_objects_match_blocks() {
    let c = ExperimentConfig::smoke();
    assert_eq!(c.sensor_network().unwrap().len(), 12);
    assert_eq!(c.grid().n(), 63);
    let opts = c.continuation_options(2.5);
    assert_eq!(opts.penalty.gamma, 2.5);
    assert_eq!(opts.penalty.max_stages, c.penalty.max_stages);
    assert_eq!(opts.inner.pg_tol, c.optimizer.pg_tol);
    assert_eq!(c.alpha_search().max_tries, c.penalty.alpha_tries);
}
