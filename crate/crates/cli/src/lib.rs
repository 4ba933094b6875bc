//! Scenario files, batch runs and output verification for the `rotqec` simulator.
//!
//! A scenario is a TOML document naming a code, an environment, a protocol and a
//! time grid. [`runner::run_to_dir`] evaluates it and writes `series.csv`,
//! `series.json`, `series.dat`, an optional `hinton.csv` and a `manifest.json`
//! holding hashes of the configuration and of every emitted file.
//! [`verify::verify_path`] re-checks those hashes and the scenario's checkpoints.

pub mod error;
pub mod presets;
pub mod runner;
pub mod scenario;
pub mod table;
pub mod verify;

pub use error::CliError;
pub use runner::{execute, run_to_dir, Manifest};
pub use scenario::{parse_scenario, Scenario};
pub use verify::{verify_path, Report};

use std::path::Path;

/// Loads `arg` as a scenario file, a preset group or a preset name, in that order.
pub fn load_all(arg: &str) -> Result<Vec<Scenario>, CliError> {
    if !Path::new(arg).is_file() {
        if let Some(members) = presets::group(arg) {
            return members.into_iter().map(presets::preset).collect();
        }
    }
    load(arg).map(|s| vec![s])
}

/// Loads `arg` as a scenario file if such a path exists, else as a preset name.
pub fn load(arg: &str) -> Result<Scenario, CliError> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        parse_scenario(&text, arg)
    } else if arg.ends_with(".toml") {
        Err(CliError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such scenario file"),
        ))
    } else {
        presets::preset(arg)
    }
}
