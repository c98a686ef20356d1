#![allow(dead_code)]

use probfed_sim::{parse_scenario, scenarios, ScenarioConfig};

/// Shipped scenario text with top-level keys replaced or added.
pub fn shipped_with(name: &str, overrides: &[(&str, &str)]) -> String {
    let text = scenarios::text(name).expect("shipped scenario");
    let mut out: Vec<String> = text
        .lines()
        .filter(|l| {
            let key = l.split(['=', ':']).next().unwrap_or("").trim();
            !overrides.iter().any(|(k, _)| *k == key)
        })
        .map(String::from)
        .collect();
    out.extend(overrides.iter().map(|(k, v)| format!("{k} = {v}")));
    out.join("\n") + "\n"
}

pub fn config(name: &str, overrides: &[(&str, &str)]) -> ScenarioConfig {
    parse_scenario(&shipped_with(name, overrides)).expect("valid scenario")
}

/// Two experts, each exact on half of four classes and uninformative on the rest.
pub const DISJOINT_EXPERTS: &str = "\
name = disjoint-experts
seed = 21
rounds = 1
strategy = stacking
reference.fraction = 1.0
dataset.classes = 4
dataset.features = 4
dataset.test = 500

client.id = 1
client.kind = synthetic
client.profile = rows
client.rows = 1,0,0,0; 0,1,0,0; 0.3,0.3,0.2,0.2; 0.3,0.3,0.2,0.2

client.id = 2
client.kind = synthetic
client.profile = rows
client.rows = 0.2,0.2,0.3,0.3; 0.2,0.2,0.3,0.3; 0,0,1,0; 0,0,0,1
";
