//! Scenario files shipped with the simulator.

use crate::config::{parse_scenario, ConfigError, ScenarioConfig};

pub const SHIPPED: [(&str, &str); 4] = [
    ("complementary-experts", include_str!("../scenarios/complementary-experts.conf")),
    ("perfect-vs-random", include_str!("../scenarios/perfect-vs-random.conf")),
    ("paper-shape", include_str!("../scenarios/paper-shape.conf")),
    ("dropout-tolerance", include_str!("../scenarios/dropout-tolerance.conf")),
];

pub fn names() -> Vec<&'static str> {
    SHIPPED.iter().map(|s| s.0).collect()
}

pub fn text(name: &str) -> Option<&'static str> {
    SHIPPED.iter().find(|s| s.0 == name).map(|s| s.1)
}

pub fn shipped(name: &str) -> Option<Result<ScenarioConfig, ConfigError>> {
    text(name).map(parse_scenario)
}
