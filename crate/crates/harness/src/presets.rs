//! Configurations shipped with the binary.

use crate::config::{parse_config_str, ConfigError, ExperimentConfig};

/// `(name, file contents)` of every preset.
pub const PRESETS: [(&str, &str); 5] = [
    ("star", include_str!("../../../presets/star.conf")),
    ("random-walk", include_str!("../../../presets/random-walk.conf")),
    ("mountain-car", include_str!("../../../presets/mountain-car.conf")),
    ("synthetic", include_str!("../../../presets/synthetic.conf")),
    ("prop1-check", include_str!("../../../presets/prop1-check.conf")),
];

pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn preset(name: &str) -> Option<Result<ExperimentConfig, ConfigError>> {
    preset_text(name).map(parse_config_str)
}

/// First comment line of a preset, used by `presets list`.
pub fn description(text: &str) -> &str {
    text.lines().find_map(|l| l.strip_prefix("# ")).unwrap_or("")
}
