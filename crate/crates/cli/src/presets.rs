//! Built-in scenarios.

use crate::error::CliError;
use crate::scenario::{parse_scenario, Scenario};

/// `(name, TOML source)` of every built-in scenario.
pub const PRESETS: &[(&str, &str)] = &[
    ("fig2_worst_case", include_str!("../presets/fig2_worst_case.toml")),
    ("fig5_cs725", include_str!("../presets/fig5_cs725.toml")),
    ("fig5_cs725_plus", include_str!("../presets/fig5_cs725_plus.toml")),
    ("fig5_a722", include_str!("../presets/fig5_a722.toml")),
    ("fig5_a722_plus", include_str!("../presets/fig5_a722_plus.toml")),
    ("fig6_full", include_str!("../presets/fig6_full.toml")),
    ("fig6_repump", include_str!("../presets/fig6_repump.toml")),
    ("fig6_nothing", include_str!("../presets/fig6_nothing.toml")),
    ("fig6_full_plus", include_str!("../presets/fig6_full_plus.toml")),
    ("fig6_nothing_plus", include_str!("../presets/fig6_nothing_plus.toml")),
    ("appendixC1_down", include_str!("../presets/appendixC1_down.toml")),
    ("appendixC1_up", include_str!("../presets/appendixC1_up.toml")),
    ("appendixC2_right", include_str!("../presets/appendixC2_right.toml")),
    ("appendixC2_left", include_str!("../presets/appendixC2_left.toml")),
    ("appendixC2_shared", include_str!("../presets/appendixC2_shared.toml")),
    ("nothing", include_str!("../presets/nothing.toml")),
];

/// Named sets of presets that belong together, e.g. runs that reference each other.
pub const GROUPS: &[(&str, &[&str])] = &[
    ("fig5", &["fig5_cs725", "fig5_a722", "fig5_cs725_plus", "fig5_a722_plus"]),
    ("fig6", &["fig6_full", "fig6_repump", "fig6_nothing", "fig6_full_plus", "fig6_nothing_plus"]),
    ("appendixC1", &["appendixC1_down", "appendixC1_up"]),
    ("appendixC2", &["appendixC2_right", "appendixC2_left", "appendixC2_shared"]),
];

/// Members of group `name`; `all` names every preset.
pub fn group(name: &str) -> Option<Vec<&'static str>> {
    if name == "all" {
        return Some(names().collect());
    }
    GROUPS.iter().find(|(g, _)| *g == name).map(|(_, m)| m.to_vec())
}

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Result<&'static str, CliError> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| *s)
        .ok_or_else(|| CliError::UnknownPreset(name.into()))
}

pub fn preset(name: &str) -> Result<Scenario, CliError> {
    parse_scenario(source(name)?, &format!("preset {name}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_names_match_scenario_names() {
        for name in names() {
            assert_eq!(preset(name).unwrap().name, name);
        }
    }

    #[test]
    fn groups_name_real_presets() {
        for (g, members) in GROUPS {
            assert!(source(g).is_err(), "group {g} shadows a preset");
            for m in *members {
                source(m).unwrap();
            }
        }
        assert_eq!(group("all").unwrap().len(), PRESETS.len());
    }

    #[test]
    fn unknown_names_are_rejected() {
        assert!(matches!(preset("fig7"), Err(CliError::UnknownPreset(_))));
    }
}
