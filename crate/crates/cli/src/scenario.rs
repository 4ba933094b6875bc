//! Scenario documents: schema, parsing and up-front validation.

use rotqec::channels::EnvParams;
use rotqec::codes::{CodeParams, CodeSpec};
use rotqec::lindblad::Tolerances;
use rotqec::protocol_dec::{DecMode, DecParams, DEC_COLUMNS};
use rotqec::protocol_seq::{PulseScheme, SEQ_COLUMNS};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

fn default_j_max() -> usize {
    10
}
fn default_rabi() -> f64 {
    500.0
}
fn default_spacing() -> f64 {
    0.05
}
fn yes() -> bool {
    true
}

/// A complete run description. Rates and times are in units of `Γ_C` and `Γ_C⁻¹`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub code: CodeParams,
    /// Absent means no environmental noise.
    #[serde(default)]
    pub environment: Option<EnvParams>,
    /// Rescale the environment so that the code linewidth is exactly one.
    #[serde(default = "yes")]
    pub normalize: bool,
    pub protocol: Protocol,
    #[serde(default)]
    pub initial: Initial,
    /// Required for every protocol except `sweep`.
    #[serde(default)]
    pub time: Option<TimeGrid>,
    /// Output columns; empty keeps all of them.
    #[serde(default)]
    pub observables: Vec<String>,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Switches a sequential run to sampled measurement outcomes.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Write the final `(J, m)` populations.
    #[serde(default)]
    pub hinton: bool,
    #[serde(default)]
    pub checkpoints: Vec<Checkpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Protocol {
    /// Free evolution under the environment only.
    None {
        #[serde(default = "default_j_max")]
        j_max: usize,
    },
    Sequential(SeqProtocol),
    Dec(DecProtocol),
    /// Worst-case single-error infidelity of the code family over a range of `J_C`.
    Sweep { j_from: i64, j_to: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeqProtocol {
    #[serde(default = "default_rabi")]
    pub omega_bsb: f64,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default)]
    pub pulse_scheme: PulseScheme,
    #[serde(default = "yes")]
    pub noise_during_pulses: bool,
    #[serde(default = "yes")]
    pub refresh: bool,
    #[serde(default = "yes")]
    pub baseline: bool,
    #[serde(default = "default_j_max")]
    pub j_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecProtocol {
    pub mode: DecMode,
    #[serde(default)]
    pub params: DecParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initial {
    #[default]
    Zero,
    Plus,
    Down,
    Up,
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub duration: f64,
    pub step: f64,
}

impl TimeGrid {
    pub fn samples(&self) -> usize {
        (self.duration / self.step).round() as usize
    }

    pub fn points(&self) -> Vec<f64> {
        (0..=self.samples()).map(|k| k as f64 * self.step).collect()
    }
}

/// An inclusive index window `[from, to]`.
pub type Window = Option<[f64; 2]>;

/// A golden property of the emitted data, checked by `verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum Checkpoint {
    /// `column(at)` within `tol` of `value`.
    Value { column: String, at: f64, value: f64, tol: f64 },
    /// Every value in the window lies in `[min, max]`.
    Range {
        column: String,
        min: f64,
        max: f64,
        #[serde(default)]
        window: Window,
    },
    /// `column ≥ reference` pointwise over the window, `>` when `strict`.
    /// The reference column comes from run `run` when given, else from this run.
    Dominates {
        column: String,
        reference: String,
        #[serde(default)]
        run: Option<String>,
        #[serde(default)]
        window: Window,
        #[serde(default)]
        strict: bool,
    },
    /// Strictly decreasing over the window.
    Decreasing {
        column: String,
        #[serde(default)]
        window: Window,
    },
    /// Rises and falls within the window.
    NonMonotonic {
        column: String,
        #[serde(default)]
        window: Window,
    },
    /// `column(at)` within `tol` of the same column in run `run`.
    Agrees { column: String, at: f64, run: String, tol: f64 },
    /// `column − baseline_run.column` exceeds `other_run.other_column − other_baseline_run.other_column` at `at`.
    GainExceeds {
        column: String,
        at: f64,
        baseline_run: String,
        other_run: String,
        other_column: String,
        other_baseline_run: String,
    },
}

impl Checkpoint {
    /// Columns of this run the check reads.
    pub fn own_columns(&self) -> Vec<&str> {
        match self {
            Checkpoint::Value { column, .. }
            | Checkpoint::Range { column, .. }
            | Checkpoint::Decreasing { column, .. }
            | Checkpoint::NonMonotonic { column, .. }
            | Checkpoint::Agrees { column, .. }
            | Checkpoint::GainExceeds { column, .. } => vec![column],
            Checkpoint::Dominates {
                column, reference, run, ..
            } => {
                if run.is_none() {
                    vec![column, reference]
                } else {
                    vec![column]
                }
            }
        }
    }
}

/// Columns of a sweep run, after the `j_c` index.
pub const SWEEP_COLUMNS: [&str; 7] = [
    "worst_infidelity",
    "f_plus_down_minus",
    "f_plus_down_zero",
    "f_plus_down_plus",
    "f_plus_up_minus",
    "f_plus_up_zero",
    "f_plus_up_plus",
];

/// Parses a TOML scenario. `source_name` labels error positions.
pub fn parse_scenario(text: &str, source_name: &str) -> Result<Scenario, CliError> {
    if text.trim().is_empty() {
        return Err(CliError::Parse {
            source_name: source_name.into(),
            line: 1,
            column: 1,
            message: "empty configuration".into(),
        });
    }
    let scenario: Scenario = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((1, 1));
        CliError::Parse {
            source_name: source_name.into(),
            line,
            column,
            message: e.message().trim().to_string(),
        }
    })?;
    scenario.validate()?;
    Ok(scenario)
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

impl Scenario {
    fn invalid(&self, message: impl Into<String>) -> CliError {
        CliError::Validation {
            scenario: self.name.clone(),
            message: message.into(),
        }
    }

    /// Every column the protocol produces, before `observables` filtering.
    pub fn all_columns(&self) -> Vec<String> {
        match &self.protocol {
            Protocol::None { .. } | Protocol::Dec(_) => DEC_COLUMNS.iter().map(|s| s.to_string()).collect(),
            Protocol::Sequential(p) => {
                let mut c: Vec<String> = SEQ_COLUMNS.iter().map(|s| s.to_string()).collect();
                if p.baseline {
                    c.extend(["free_f0", "free_f_plus", "free_fidelity"].map(String::from));
                }
                c
            }
            Protocol::Sweep { .. } => SWEEP_COLUMNS.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Columns written to disk.
    pub fn output_columns(&self) -> Vec<String> {
        if self.observables.is_empty() {
            self.all_columns()
        } else {
            self.observables.clone()
        }
    }

    /// Codes the run will build, for sweeps one per `J_C`.
    pub fn codes(&self) -> Vec<CodeParams> {
        match (&self.protocol, self.code) {
            (Protocol::Sweep { j_from, j_to }, CodeParams::A { m0, m1, .. }) => {
                (*j_from..=*j_to).map(|j_c| CodeParams::A { j_c, m0, m1 }).collect()
            }
            (Protocol::Sweep { j_from, j_to }, CodeParams::Cs { m1, m2, .. }) => {
                (*j_from..=*j_to).map(|j_c| CodeParams::Cs { j_c, m1, m2 }).collect()
            }
            (_, code) => vec![code],
        }
    }

    /// Checks every precondition the run depends on, before anything is computed.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(self.invalid("name must be non-empty and use only letters, digits, `_` and `-`"));
        }
        for code in self.codes() {
            CodeSpec::build(code).map_err(|e| self.invalid(e.to_string()))?;
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !(positive(self.tolerances.rtol) && positive(self.tolerances.atol)) {
            return Err(self.invalid("tolerances must be positive"));
        }
        match &self.environment {
            Some(EnvParams::GenericFlat { gamma }) if !positive(*gamma) => {
                return Err(self.invalid("environment gamma must be positive"));
            }
            Some(EnvParams::Physical {
                dipole,
                rotational_constant_hz,
                temperature,
            }) if !(positive(*dipole) && positive(*rotational_constant_hz) && *temperature >= 0.0) => {
                return Err(self.invalid("physical environment needs a positive dipole and rotational constant"));
            }
            _ => {}
        }
        let j_c = self.code.j_c();
        match &self.protocol {
            Protocol::Sweep { j_from, j_to } => {
                if j_from > j_to {
                    return Err(self.invalid("sweep needs j_from <= j_to"));
                }
                if self.time.is_some() || self.seed.is_some() || self.hinton {
                    return Err(self.invalid("a sweep takes no time grid, seed or hinton output"));
                }
            }
            other => {
                let grid = self.time.ok_or_else(|| self.invalid("missing [time] section"))?;
                if !(positive(grid.duration) && positive(grid.step)) {
                    return Err(self.invalid("time.duration and time.step must be positive"));
                }
                let n = grid.duration / grid.step;
                if (n - n.round()).abs() > 1e-9 * n.max(1.0) {
                    return Err(self.invalid("time.duration must be a whole number of steps"));
                }
                let j_max = match other {
                    Protocol::None { j_max } => *j_max,
                    Protocol::Sequential(p) => p.j_max,
                    Protocol::Dec(p) => p.params.j_max,
                    Protocol::Sweep { .. } => unreachable!(),
                };
                if (j_c + 1) as usize > j_max {
                    return Err(self.invalid(format!("j_max = {j_max} leaves no room above J_C = {j_c}")));
                }
            }
        }
        match &self.protocol {
            Protocol::Sequential(p) => {
                if !matches!(self.initial, Initial::Zero | Initial::Plus) {
                    return Err(self.invalid("sequential runs start in `zero` or `plus`"));
                }
                if self.environment.is_none() {
                    return Err(self.invalid("sequential runs need an [environment] section"));
                }
                if !(positive(p.omega_bsb) && positive(p.spacing)) {
                    return Err(self.invalid("omega_bsb and spacing must be positive"));
                }
            }
            _ => {
                if self.seed.is_some() {
                    return Err(self.invalid("`seed` applies to sequential runs only"));
                }
            }
        }
        if let Protocol::Dec(p) = &self.protocol {
            let q = &p.params;
            let rates = [q.omega_down, q.omega_up, q.omega_right, q.omega_left];
            if rates.iter().chain(&q.cool_rates).any(|r| !r.is_finite() || *r < 0.0) {
                return Err(self.invalid("drive and cooling rates must be non-negative"));
            }
            if q.fock_cutoffs.contains(&0) {
                return Err(self.invalid("Fock cutoffs must be at least 1"));
            }
        }
        let all = self.all_columns();
        for o in &self.observables {
            if !all.contains(o) {
                return Err(self.invalid(format!("unknown observable `{o}`; available: {}", all.join(", "))));
            }
        }
        let out = self.output_columns();
        for c in &self.checkpoints {
            for col in c.own_columns() {
                if !out.iter().any(|o| o == col) {
                    return Err(self.invalid(format!("checkpoint reads column `{col}`, which is not written")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
code = { kind = "cs", j_c = 7, m1 = 2, m2 = 5 }
protocol = { kind = "dec", mode = "repump_only" }
initial = "down"
time = { duration = 0.05, step = 0.01 }
"#;

    #[test]
    fn minimal_document() {
        let s = parse_scenario(MINIMAL, "m.toml").unwrap();
        assert_eq!(s.time.unwrap().samples(), 5);
        assert!(s.environment.is_none() && s.normalize);
        assert_eq!(s.output_columns().len(), DEC_COLUMNS.len());
    }

    #[test]
    fn positions_point_at_the_offending_key() {
        let text = MINIMAL.replace("initial = \"down\"", "initial = \"down\"\nbogus = 1");
        match parse_scenario(&text, "m.toml") {
            Err(CliError::Parse { line, column, message, .. }) => {
                assert_eq!((line, column), (6, 1));
                assert!(message.contains("bogus"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_names_the_precondition() {
        let text = MINIMAL.replace("m2 = 5", "m2 = 4");
        let err = parse_scenario(&text, "m.toml").unwrap_err().to_string();
        assert!(err.contains("m2 >= m1 + 3"), "{err}");
        let text = MINIMAL.replace("step = 0.01", "step = 0.03");
        assert!(parse_scenario(&text, "m.toml").unwrap_err().to_string().contains("whole number"));
    }

    #[test]
    fn line_col_counts_characters() {
        assert_eq!(line_col("ab\nΓx", 5), (2, 2));
    }
}
