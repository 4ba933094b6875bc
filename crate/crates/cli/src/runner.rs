//! Executes scenarios and writes their output directories.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rotqec::channels::{code_linewidth, EnvParams};
use rotqec::codes::{single_error_fidelity, worst_case_infidelity, CodeParams, CodeSpec};
use rotqec::lindblad::{SolverStats, Tolerances};
use rotqec::protocol_dec::{hinton_snapshot, run_dec, DecInitial, DecMode, DecParams, DecScenario, HintonCell};
use rotqec::protocol_seq::{run_sequential, MeasurementMode, SeqInitial, SeqScenario};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::scenario::{Initial, Protocol, Scenario};
use crate::table::{Table, TableJson};

pub const SERIES_CSV: &str = "series.csv";
pub const SERIES_JSON: &str = "series.json";
pub const SERIES_DAT: &str = "series.dat";
pub const HINTON_CSV: &str = "hinton.csv";
pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Rate unit of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// `Γ_C` of the configured environment in its own units (s⁻¹ for `physical`).
    pub gamma_c: Option<f64>,
    /// Whether rates were divided by `gamma_c` before simulating.
    pub applied: bool,
    pub time_unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub j_max: usize,
    pub fock_cutoffs: Vec<usize>,
    pub excitation_cap: Option<usize>,
    /// Hilbert-space dimension of the largest simulated space.
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeRecord {
    pub params: CodeParams,
    pub label: String,
    pub exact: bool,
    /// `(m, amplitude)` pairs of `|0̄⟩` and `|1̄⟩`.
    pub codewords: [Vec<(i64, f64)>; 2],
}

/// Everything needed to audit and verify a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub tool_version: String,
    /// SHA-256 of the normalized scenario serialized as JSON.
    pub config_sha256: String,
    pub scenario: Scenario,
    pub code: Vec<CodeRecord>,
    pub normalization: Normalization,
    pub truncation: Truncation,
    pub tolerances: Tolerances,
    pub solver: SolverStats,
    /// Protocol-specific scalars such as round counts.
    pub extras: BTreeMap<String, f64>,
    pub wall_time_s: f64,
    /// SHA-256 of every emitted file except the manifest.
    pub files: BTreeMap<String, String>,
}

/// In-memory result of a run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub table: Table,
    pub hinton: Option<Vec<HintonCell>>,
    pub stats: SolverStats,
    pub truncation: Truncation,
    pub normalization: Normalization,
    pub extras: BTreeMap<String, f64>,
}

pub fn config_hash(s: &Scenario) -> String {
    sha256_hex(serde_json::to_string(s).expect("scenario serializes").as_bytes())
}

/// Environment with rates divided by `Γ_C`, and `Γ_C` itself.
///
/// Both decay prefactors of the physical model scale with the squared dipole, so
/// dividing the dipole by `√Γ_C` rescales every rate uniformly.
pub fn normalized_env(env: &EnvParams, j_c: i64) -> (EnvParams, f64) {
    let gamma_c = code_linewidth(j_c, env);
    let scaled = match *env {
        EnvParams::GenericFlat { gamma } => EnvParams::GenericFlat { gamma: gamma / gamma_c },
        EnvParams::Physical {
            dipole,
            rotational_constant_hz,
            temperature,
        } => EnvParams::Physical {
            dipole: dipole / gamma_c.sqrt(),
            rotational_constant_hz,
            temperature,
        },
    };
    (scaled, gamma_c)
}

fn dec_initial(i: Initial) -> DecInitial {
    match i {
        Initial::Zero => DecInitial::Zero,
        Initial::Plus => DecInitial::Plus,
        Initial::Down => DecInitial::Down,
        Initial::Up => DecInitial::Up,
        Initial::Left => DecInitial::Left,
        Initial::Right => DecInitial::Right,
    }
}

fn solver_err(s: &Scenario, e: impl std::fmt::Display) -> CliError {
    CliError::Solver {
        scenario: s.name.clone(),
        message: e.to_string(),
    }
}

/// Runs a validated scenario without touching the filesystem.
pub fn execute(s: &Scenario) -> Result<RunOutput, CliError> {
    s.validate()?;
    let j_c = s.code.j_c();
    let (env, normalization) = match (&s.environment, s.normalize) {
        (Some(env), true) => {
            let (scaled, g) = normalized_env(env, j_c);
            if !(g.is_finite() && g > 0.0) {
                return Err(CliError::Validation {
                    scenario: s.name.clone(),
                    message: format!("code linewidth {g} cannot be used as the rate unit"),
                });
            }
            let norm = Normalization {
                gamma_c: Some(g),
                applied: true,
                time_unit: "1/Gamma_C".into(),
            };
            (Some(scaled), norm)
        }
        (Some(env), false) => (
            Some(env.clone()),
            Normalization {
                gamma_c: Some(code_linewidth(j_c, env)),
                applied: false,
                time_unit: "environment rate units".into(),
            },
        ),
        (None, _) => (
            None,
            Normalization {
                gamma_c: None,
                applied: false,
                time_unit: "1/Gamma_C".into(),
            },
        ),
    };
    let columns = s.output_columns();
    let out = match &s.protocol {
        Protocol::None { j_max } => {
            let params = DecParams {
                j_max: *j_max,
                ..DecParams::default()
            };
            dec_like(s, DecMode::Nothing, params, env, normalization)?
        }
        Protocol::Dec(p) => dec_like(s, p.mode, p.params.clone(), env, normalization)?,
        Protocol::Sequential(p) => {
            let grid = s.time.expect("validated");
            let sc = SeqScenario {
                code: s.code,
                env: env.expect("validated"),
                initial: if s.initial == Initial::Plus {
                    SeqInitial::Plus
                } else {
                    SeqInitial::Zero
                },
                omega_bsb: p.omega_bsb,
                spacing: p.spacing,
                duration: grid.duration,
                sample_interval: grid.step,
                pulse_scheme: p.pulse_scheme,
                noise_during_pulses: p.noise_during_pulses,
                refresh: p.refresh,
                measurement: match s.seed {
                    Some(seed) => MeasurementMode::Trajectory { seed },
                    None => MeasurementMode::Ensemble,
                },
                baseline: p.baseline,
                j_max: p.j_max,
                tolerances: s.tolerances,
            };
            let run = run_sequential(&sc).map_err(|e| solver_err(s, e))?;
            let mut extras = BTreeMap::new();
            extras.insert("rounds".into(), run.rounds as f64);
            extras.insert("leakage_bound".into(), run.leakage_bound);
            extras.insert("pruned_weight".into(), run.pruned_weight);
            let basis = run.final_state.basis();
            RunOutput {
                table: Table::from_series(&run.series).with_index(grid.points()),
                hinton: s.hinton.then(|| hinton_snapshot(&run.final_state)),
                stats: run.stats,
                truncation: Truncation {
                    j_max: p.j_max,
                    fock_cutoffs: basis.fock_cutoffs().to_vec(),
                    excitation_cap: basis.excitation_cap(),
                    dim: basis.dim(),
                },
                normalization,
                extras,
            }
        }
        Protocol::Sweep { .. } => {
            let codes = s.codes();
            let mut table = Table {
                index: "j_c".into(),
                columns: s.all_columns(),
                index_values: Vec::new(),
                rows: Vec::new(),
            };
            for params in codes {
                let code = CodeSpec::build(params).map_err(|e| solver_err(s, e))?;
                let mut row = vec![worst_case_infidelity(&code)];
                for dj in [-1, 1] {
                    for dm in -1..=1 {
                        row.push(single_error_fidelity(&code, dj, dm));
                    }
                }
                table.index_values.push(code.j_c() as f64);
                table.rows.push(row);
            }
            RunOutput {
                table,
                hinton: None,
                stats: SolverStats::default(),
                truncation: Truncation {
                    j_max: 0,
                    fock_cutoffs: vec![],
                    excitation_cap: None,
                    dim: 0,
                },
                normalization: Normalization {
                    gamma_c: None,
                    applied: false,
                    time_unit: "none".into(),
                },
                extras: BTreeMap::new(),
            }
        }
    };
    Ok(RunOutput {
        table: out.table.select(&columns),
        ..out
    })
}

fn dec_like(
    s: &Scenario,
    mode: DecMode,
    params: DecParams,
    env: Option<EnvParams>,
    normalization: Normalization,
) -> Result<RunOutput, CliError> {
    let grid = s.time.expect("validated");
    let sc = DecScenario {
        code: s.code,
        mode,
        initial: dec_initial(s.initial),
        env,
        params: params.clone(),
        duration: grid.duration,
        samples: grid.samples(),
        tolerances: s.tolerances,
    };
    let run = run_dec(&sc).map_err(|e| solver_err(s, e))?;
    let basis = rotqec::protocol_dec::dec_basis(&params, mode).map_err(|e| solver_err(s, e))?;
    Ok(RunOutput {
        table: Table::from_series(&run.series).with_index(grid.points()),
        hinton: s.hinton.then(|| hinton_snapshot(&run.final_rotor_state)),
        stats: run.stats,
        truncation: Truncation {
            j_max: params.j_max,
            fock_cutoffs: basis.fock_cutoffs().to_vec(),
            excitation_cap: basis.excitation_cap(),
            dim: run.dim,
        },
        normalization,
        extras: BTreeMap::new(),
    })
}

fn hinton_csv(cells: &[HintonCell]) -> String {
    let mut out = String::from("j,m,population\n");
    for c in cells {
        out.push_str(&format!("{},{},{}\n", c.j, c.m, c.population));
    }
    out
}

fn write(dir: &Path, name: &str, contents: &str, files: &mut BTreeMap<String, String>) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
    files.insert(name.to_string(), sha256_hex(contents.as_bytes()));
    Ok(())
}

/// Runs `s` and writes its files under `out_root/<name>/`.
pub fn run_to_dir(s: &Scenario, out_root: &Path) -> Result<(PathBuf, Manifest), CliError> {
    let start = Instant::now();
    let out = execute(s)?;
    let wall = start.elapsed().as_secs_f64();
    let dir = out_root.join(&s.name);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut files = BTreeMap::new();
    write(&dir, SERIES_CSV, &out.table.to_csv(), &mut files)?;
    write(&dir, SERIES_DAT, &out.table.to_dat(), &mut files)?;
    let json = serde_json::to_string_pretty(&TableJson::new(&s.name, &out.table)).expect("table serializes");
    write(&dir, SERIES_JSON, &json, &mut files)?;
    if let Some(cells) = &out.hinton {
        write(&dir, HINTON_CSV, &hinton_csv(cells), &mut files)?;
    }
    let code = s
        .codes()
        .into_iter()
        .map(|params| {
            let c = CodeSpec::build_unchecked(params);
            CodeRecord {
                params,
                label: params.to_string(),
                exact: c.is_exact(),
                codewords: [c.codeword(0).to_vec(), c.codeword(1).to_vec()],
            }
        })
        .collect();
    let manifest = Manifest {
        name: s.name.clone(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: config_hash(s),
        scenario: s.clone(),
        code,
        normalization: out.normalization,
        truncation: out.truncation,
        tolerances: s.tolerances,
        solver: out.stats,
        extras: out.extras,
        wall_time_s: wall,
        files,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok((dir, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_makes_the_linewidth_one() {
        for env in [
            EnvParams::GenericFlat { gamma: 3.5 },
            EnvParams::Physical {
                dipole: 3.0,
                rotational_constant_hz: 10e9,
                temperature: 300.0,
            },
        ] {
            let (scaled, g) = normalized_env(&env, 7);
            assert!(g > 0.0);
            assert!((code_linewidth(7, &scaled) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sha_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
