//! Scenario files: flat `key = value` lines with repeated `client.` blocks.
//!
//! ```text
//! name = demo
//! seed = 7
//! strategy = mean
//!
//! client.id = 1
//! client.kind = synthetic
//! client.classes = 0,1
//! ```
//!
//! `#` starts a comment. Each `client.id` line opens a new client block.
//! `:` is accepted in place of `=`. Unknown keys are rejected.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use probfed_core::{normalize_to_simplex, DatasetSpec, WeightVector};
use probfed_ensemble::{DistillationConfig, GaConfig, PsoConfig, StackingConfig, StrategyRegistry};
use probfed_transport::TransportMode;
use thiserror::Error;

/// Name of the parameter-averaging paradigm in the `strategy` key.
pub const FEDAVG: &str = "fedavg";

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Iid,
    /// Label skew toward classes `c` with `c % n_trainable == client index`.
    Skew,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    /// `confidence` on the true class for `classes`, uniform rows elsewhere.
    Diagonal { confidence: f64, classes: Vec<usize> },
    Uniform,
    /// Explicit rows, one per true class.
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClientKind {
    Synthetic {
        profile: Profile,
        /// `None` is infinite concentration.
        concentration: Option<f64>,
    },
    Trainable {
        partition: Partition,
        skew: f64,
        epochs: usize,
        epochs_per_round: usize,
        lr: f64,
        l2: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientSpec {
    pub id: u32,
    pub kind: ClientKind,
    /// First round in which the client no longer participates.
    pub offline_from: Option<u32>,
}

impl ClientSpec {
    pub fn is_trainable(&self) -> bool {
        matches!(self.kind, ClientKind::Trainable { .. })
    }

    pub fn online_in(&self, round: u32) -> bool {
        self.offline_from.is_none_or(|r| round < r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub classes: usize,
    pub features: usize,
    pub proportions: Option<Vec<f64>>,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub separation: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            classes: 5,
            features: 8,
            proportions: None,
            train: 600,
            val: 200,
            test: 500,
            separation: 3.0,
        }
    }
}

impl DatasetConfig {
    pub fn spec(&self, seed: u64) -> Result<DatasetSpec, String> {
        let proportions = match &self.proportions {
            Some(p) => WeightVector::from_unnormalized(p).map_err(|e| e.to_string())?,
            None => WeightVector::uniform(self.classes),
        };
        let spec = DatasetSpec {
            n_classes: self.classes,
            feature_dim: self.features,
            class_proportions: proportions,
            n_train: self.train,
            n_val: self.val,
            n_test: self.test,
            cluster_separation: self.separation,
            rng_seed: seed,
        };
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub rounds: u32,
    pub strategy: String,
    pub min_contributions: usize,
    /// Round whose labelled reference contributions fit the strategy.
    pub fit_round: u32,
    pub wait_ms: u64,
    pub poll_timeout_ms: u64,
    pub transport: TransportMode,
    pub port: u16,
    pub compare_fedavg: bool,
    pub output: Option<String>,
    pub dataset: DatasetConfig,
    pub reference_fraction: f64,
    pub weights: Option<Vec<f64>>,
    pub stacking: StackingConfig,
    pub ga: GaConfig,
    pub pso: PsoConfig,
    pub distill: DistillationConfig,
    pub fedavg_epochs: usize,
    pub clients: Vec<ClientSpec>,
}

impl ScenarioConfig {
    pub fn uses_fedavg(&self) -> bool {
        self.strategy == FEDAVG || self.compare_fedavg
    }

    pub fn client(&self, id: u32) -> Option<&ClientSpec> {
        self.clients.iter().find(|c| c.id == id)
    }
}

type Entry = (usize, String, String);

fn split_line(raw: &str) -> Option<(String, String)> {
    let line = raw.split('#').next().unwrap_or("").trim();
    if line.is_empty() {
        return None;
    }
    let cut = line.find(['=', ':'])?;
    Some((line[..cut].trim().to_string(), line[cut + 1..].trim().to_string()))
}

fn tokenize(text: &str) -> Result<(Vec<Entry>, Vec<Vec<Entry>>), ConfigError> {
    let mut top = Vec::new();
    let mut clients: Vec<Vec<Entry>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.split('#').next().unwrap_or("").trim().is_empty() {
            continue;
        }
        let (key, value) = split_line(raw).ok_or_else(|| ConfigError::Parse {
            line,
            message: format!("expected `key = value`, got `{}`", raw.trim()),
        })?;
        if key.is_empty() {
            return Err(ConfigError::Parse {
                line,
                message: "empty key".into(),
            });
        }
        if let Some(ck) = key.strip_prefix("client.") {
            if ck == "id" {
                clients.push(Vec::new());
            }
            let block = clients.last_mut().ok_or_else(|| ConfigError::Parse {
                line,
                message: format!("`{key}` appears before any `client.id`"),
            })?;
            if block.iter().any(|(_, k, _)| k == ck) {
                return Err(ConfigError::Parse {
                    line,
                    message: format!("duplicate key `{key}` in client block"),
                });
            }
            block.push((line, ck.to_string(), value));
        } else {
            if top.iter().any(|(_, k, _): &Entry| *k == key) {
                return Err(ConfigError::Parse {
                    line,
                    message: format!("duplicate key `{key}`"),
                });
            }
            top.push((line, key, value));
        }
    }
    Ok((top, clients))
}

/// Typed reads from one block, collecting every problem.
struct Block<'a> {
    entries: &'a [Entry],
    prefix: &'static str,
    used: BTreeSet<&'a str>,
    errors: &'a mut Vec<String>,
}

impl<'a> Block<'a> {
    fn raw(&mut self, key: &'a str) -> Option<(usize, &'a str)> {
        let found = self.entries.iter().find(|(_, k, _)| k == key)?;
        self.used.insert(key);
        Some((found.0, found.2.as_str()))
    }

    fn get<T: FromStr>(&mut self, key: &'a str, default: T) -> T {
        self.opt(key).unwrap_or(default)
    }

    fn opt<T: FromStr>(&mut self, key: &'a str) -> Option<T> {
        let (line, v) = self.raw(key)?;
        match v.parse() {
            Ok(x) => Some(x),
            Err(_) => {
                self.errors.push(format!("line {line}: `{}{key}`: cannot parse `{v}`", self.prefix));
                None
            }
        }
    }

    fn list<T: FromStr>(&mut self, key: &'a str, sep: char) -> Option<Vec<T>> {
        let (line, v) = self.raw(key)?;
        if v.is_empty() {
            return Some(Vec::new());
        }
        let parsed: Result<Vec<T>, _> = v.split(sep).map(|x| x.trim().parse()).collect();
        match parsed {
            Ok(x) => Some(x),
            Err(_) => {
                self.errors.push(format!("line {line}: `{}{key}`: cannot parse list `{v}`", self.prefix));
                None
            }
        }
    }

    fn fail(&mut self, key: &str, msg: impl std::fmt::Display) {
        let line = self.entries.iter().find(|(_, k, _)| k == key).map(|e| e.0);
        match line {
            Some(l) => self.errors.push(format!("line {l}: `{}{key}`: {msg}", self.prefix)),
            None => self.errors.push(format!("`{}{key}`: {msg}", self.prefix)),
        }
    }

    fn reject_unused(self) {
        for (line, k, _) in self.entries {
            if !self.used.contains(k.as_str()) {
                self.errors.push(format!("line {line}: unknown key `{}{k}`", self.prefix));
            }
        }
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

fn parse_client(entries: &[Entry], n_classes: usize, errors: &mut Vec<String>) -> Option<ClientSpec> {
    let mut b = Block {
        entries,
        prefix: "client.",
        used: BTreeSet::new(),
        errors,
    };
    let id: Option<u32> = b.opt("id");
    let kind_name = b.raw("kind").map(|(_, v)| v.to_string());
    let offline_from: Option<u32> = b.opt("offline_from");
    if offline_from == Some(0) {
        b.fail("offline_from", "rounds start at 1");
    }
    let kind = match kind_name.as_deref() {
        Some("synthetic") => {
            let profile_name = b.raw("profile").map(|(_, v)| v.to_string()).unwrap_or_else(|| "diagonal".into());
            let profile = match profile_name.as_str() {
                "diagonal" => {
                    let confidence = b.get("confidence", 0.8);
                    if !(0.0..=1.0).contains(&confidence) {
                        b.fail("confidence", "must lie in [0, 1]");
                    }
                    let classes = b.list("classes", ',').unwrap_or_else(|| (0..n_classes).collect::<Vec<usize>>());
                    if let Some(c) = classes.iter().find(|&&c| c >= n_classes) {
                        b.fail("classes", format!("class {c} out of range for {n_classes} classes"));
                    }
                    Profile::Diagonal { confidence, classes }
                }
                "uniform" => Profile::Uniform,
                "rows" => {
                    let rows: Vec<Vec<f64>> = match b.raw("rows") {
                        Some((line, v)) => {
                            let parsed: Result<Vec<Vec<f64>>, _> = v
                                .split(';')
                                .map(|r| r.split(',').map(|x| x.trim().parse::<f64>()).collect())
                                .collect();
                            match parsed {
                                Ok(r) => r,
                                Err(_) => {
                                    b.errors.push(format!("line {line}: `client.rows`: cannot parse `{v}`"));
                                    Vec::new()
                                }
                            }
                        }
                        None => {
                            b.fail("rows", "required when profile = rows");
                            Vec::new()
                        }
                    };
                    if !rows.is_empty() && (rows.len() != n_classes || rows.iter().any(|r| r.len() != n_classes)) {
                        b.fail("rows", format!("need {n_classes} rows of {n_classes} entries"));
                    } else if rows.iter().any(|r| normalize_to_simplex(r).is_err()) {
                        b.fail("rows", "rows must be non-negative with a positive sum");
                    }
                    Profile::Rows(rows)
                }
                other => {
                    b.fail("profile", format!("unknown profile `{other}` (diagonal, uniform, rows)"));
                    Profile::Uniform
                }
            };
            let concentration = match b.raw("concentration") {
                None | Some((_, "inf")) => None,
                Some((_, v)) => match v.parse::<f64>() {
                    Ok(k) if k > 0.0 && k.is_finite() => Some(k),
                    _ => {
                        b.fail("concentration", format!("expected `inf` or a positive number, got `{v}`"));
                        None
                    }
                },
            };
            Some(ClientKind::Synthetic { profile, concentration })
        }
        Some("trainable") => {
            let partition = match b.raw("partition").map(|(_, v)| v) {
                None | Some("iid") => Partition::Iid,
                Some("skew") => Partition::Skew,
                Some(other) => {
                    b.fail("partition", format!("unknown partition `{other}` (iid, skew)"));
                    Partition::Iid
                }
            };
            let skew = b.get("skew", 0.0);
            if !(0.0..1.0).contains(&skew) {
                b.fail("skew", "must lie in [0, 1)");
            }
            let lr = b.get("lr", 0.1);
            if !(lr > 0.0) {
                b.fail("lr", "must be > 0");
            }
            let l2 = b.get("l2", 1e-3);
            if !(l2 >= 0.0) {
                b.fail("l2", "must be >= 0");
            }
            Some(ClientKind::Trainable {
                partition,
                skew,
                epochs: b.get("epochs", 50),
                epochs_per_round: b.get("epochs_per_round", 0),
                lr,
                l2,
            })
        }
        Some(other) => {
            b.fail("kind", format!("unknown client kind `{other}` (synthetic, trainable)"));
            None
        }
        None => {
            b.fail("kind", "missing");
            None
        }
    };
    b.reject_unused();
    Some(ClientSpec {
        id: id?,
        kind: kind?,
        offline_from,
    })
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let (top, client_blocks) = tokenize(text)?;
    let mut errors = Vec::new();
    let mut b = Block {
        entries: &top,
        prefix: "",
        used: BTreeSet::new(),
        errors: &mut errors,
    };

    let name = b.raw("name").map(|(_, v)| v.to_string());
    let seed: Option<u64> = b.opt("seed");
    if name.is_none() {
        b.fail("name", "missing");
    }
    if b.raw("seed").is_none() {
        b.fail("seed", "missing (a seed is mandatory for reproducible runs)");
    }
    let rounds = b.get("rounds", 3u32);
    let strategy = b.raw("strategy").map(|(_, v)| v.to_string()).unwrap_or_else(|| "mean".into());
    let registry = StrategyRegistry::builtin();
    if strategy != FEDAVG && !registry.contains(&strategy) {
        let mut known = registry.names();
        known.push(FEDAVG);
        b.fail("strategy", format!("unknown strategy `{strategy}` (known: {})", known.join(", ")));
    }
    let min_contributions = b.get("min_contributions", 2usize);
    if min_contributions == 0 {
        b.fail("min_contributions", "must be >= 1");
    }
    let fit_round = b.get("fit_round", 1u32);
    if fit_round == 0 {
        b.fail("fit_round", "rounds start at 1");
    }
    let wait_ms = b.get("wait_ms", 5000u64);
    let poll_timeout_ms = b.get("poll_timeout_ms", 50u64);
    let transport = match b.raw("transport") {
        None => TransportMode::InProc,
        Some((_, v)) => v.parse().unwrap_or_else(|e: String| {
            b.fail("transport", e);
            TransportMode::InProc
        }),
    };
    let port = b.get("port", 0u16);
    let compare_fedavg = match b.raw("compare_fedavg") {
        None => false,
        Some((_, v)) => parse_bool(v).unwrap_or_else(|| {
            b.fail("compare_fedavg", "expected true or false");
            false
        }),
    };
    let output = b.raw("output").map(|(_, v)| v.to_string());

    let d = DatasetConfig::default();
    let dataset = DatasetConfig {
        classes: b.get("dataset.classes", d.classes),
        features: b.get("dataset.features", d.features),
        proportions: b.list("dataset.proportions", ','),
        train: b.get("dataset.train", d.train),
        val: b.get("dataset.val", d.val),
        test: b.get("dataset.test", d.test),
        separation: b.get("dataset.separation", d.separation),
    };
    if let Err(e) = dataset.spec(0) {
        b.fail("dataset", e);
    }

    let reference_fraction = b.get("reference.fraction", 0.2);
    if !(reference_fraction > 0.0 && reference_fraction <= 1.0) {
        b.fail("reference.fraction", "must lie in (0, 1]");
    }
    let weights: Option<Vec<f64>> = b.list("weights", ',');

    let s = StackingConfig::default();
    let stacking = StackingConfig {
        l2: b.get("stacking.l2", s.l2),
        max_iter: b.get("stacking.max_iter", s.max_iter),
        tol: b.get("stacking.tol", s.tol),
    };
    let g = GaConfig::default();
    let ga = GaConfig {
        population_size: b.get("ga.population", g.population_size),
        generations: b.get("ga.generations", g.generations),
        elite_count: b.get("ga.elites", g.elite_count),
        mutation_prob: b.get("ga.mutation_prob", g.mutation_prob),
        mutation_sigma: b.get("ga.mutation_sigma", g.mutation_sigma),
        diversity_period: b.get("ga.diversity_period", g.diversity_period),
        diversity_count: b.get("ga.diversity_count", g.diversity_count),
        rng_seed: 0,
    };
    if let Err(e) = ga.validate() {
        b.errors.push(e.to_string());
    }
    let p = PsoConfig::default();
    let pso = PsoConfig {
        swarm_size: b.get("pso.swarm", p.swarm_size),
        iterations: b.get("pso.iterations", p.iterations),
        inertia: b.get("pso.inertia", p.inertia),
        cognitive: b.get("pso.cognitive", p.cognitive),
        social: b.get("pso.social", p.social),
        rng_seed: 0,
    };
    if let Err(e) = pso.validate() {
        b.errors.push(e.to_string());
    }
    let k = DistillationConfig::default();
    let distill = DistillationConfig {
        kd_learning_rate: b.get("distill.lr", k.kd_learning_rate),
        kd_steps: b.get("distill.steps", k.kd_steps),
        epsilon: b.get("distill.epsilon", k.epsilon),
        ce_mix: b.get("distill.ce_mix", k.ce_mix),
        rounds: rounds.max(1) as usize,
        min_contributions: min_contributions.max(1),
    };
    if let Err(e) = distill.validate() {
        b.errors.push(e.to_string());
    }
    let fedavg_epochs = b.get("fedavg.epochs", 20usize);
    b.reject_unused();

    let n_classes = dataset.classes;
    let mut clients = Vec::new();
    for block in &client_blocks {
        if let Some(c) = parse_client(block, n_classes, &mut errors) {
            clients.push(c);
        }
    }
    if client_blocks.is_empty() {
        errors.push("at least one client is required".into());
    }
    let mut ids = BTreeSet::new();
    for c in &clients {
        if !ids.insert(c.id) {
            errors.push(format!("duplicate client id {}", c.id));
        }
        if c.id == probfed_transport::SERVER_ID {
            errors.push(format!("client id {} is reserved for the server", c.id));
        }
    }
    if strategy == "weighted" {
        if let Some(w) = &weights {
            if w.len() != clients.len() {
                errors.push(format!("`weights` has {} entries for {} clients", w.len(), clients.len()));
            } else if normalize_to_simplex(w).is_err() {
                errors.push("`weights` must be non-negative with a positive sum".into());
            }
        }
    }
    if (strategy == FEDAVG || compare_fedavg) && clients.iter().any(|c| !c.is_trainable()) {
        errors.push("parameter averaging needs every client to be trainable".into());
    }

    if !errors.is_empty() {
        return Err(ConfigError::Validation(errors));
    }
    Ok(ScenarioConfig {
        name: name.expect("checked"),
        seed: seed.expect("checked"),
        rounds,
        strategy,
        min_contributions,
        fit_round,
        wait_ms,
        poll_timeout_ms,
        transport,
        port,
        compare_fedavg,
        output,
        dataset,
        reference_fraction,
        weights,
        stacking,
        ga,
        pso,
        distill,
        fedavg_epochs,
        clients,
    })
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_scenario(&text)
}

fn join<T: ToString>(v: &[T], sep: &str) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}

/// Renders the config with every default spelled out; parsing the result
/// gives back an equal config.
pub fn echo(cfg: &ScenarioConfig) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("name", cfg.name.clone());
    kv("seed", cfg.seed.to_string());
    kv("rounds", cfg.rounds.to_string());
    kv("strategy", cfg.strategy.clone());
    kv("min_contributions", cfg.min_contributions.to_string());
    kv("fit_round", cfg.fit_round.to_string());
    kv("wait_ms", cfg.wait_ms.to_string());
    kv("poll_timeout_ms", cfg.poll_timeout_ms.to_string());
    kv("transport", cfg.transport.to_string());
    kv("port", cfg.port.to_string());
    kv("compare_fedavg", cfg.compare_fedavg.to_string());
    if let Some(o) = &cfg.output {
        kv("output", o.clone());
    }
    let d = &cfg.dataset;
    kv("dataset.classes", d.classes.to_string());
    kv("dataset.features", d.features.to_string());
    if let Some(p) = &d.proportions {
        kv("dataset.proportions", join(p, ","));
    }
    kv("dataset.train", d.train.to_string());
    kv("dataset.val", d.val.to_string());
    kv("dataset.test", d.test.to_string());
    kv("dataset.separation", d.separation.to_string());
    kv("reference.fraction", cfg.reference_fraction.to_string());
    if let Some(w) = &cfg.weights {
        kv("weights", join(w, ","));
    }
    kv("stacking.l2", cfg.stacking.l2.to_string());
    kv("stacking.max_iter", cfg.stacking.max_iter.to_string());
    kv("stacking.tol", cfg.stacking.tol.to_string());
    kv("ga.population", cfg.ga.population_size.to_string());
    kv("ga.generations", cfg.ga.generations.to_string());
    kv("ga.elites", cfg.ga.elite_count.to_string());
    kv("ga.mutation_prob", cfg.ga.mutation_prob.to_string());
    kv("ga.mutation_sigma", cfg.ga.mutation_sigma.to_string());
    kv("ga.diversity_period", cfg.ga.diversity_period.to_string());
    kv("ga.diversity_count", cfg.ga.diversity_count.to_string());
    kv("pso.swarm", cfg.pso.swarm_size.to_string());
    kv("pso.iterations", cfg.pso.iterations.to_string());
    kv("pso.inertia", cfg.pso.inertia.to_string());
    kv("pso.cognitive", cfg.pso.cognitive.to_string());
    kv("pso.social", cfg.pso.social.to_string());
    kv("distill.lr", cfg.distill.kd_learning_rate.to_string());
    kv("distill.steps", cfg.distill.kd_steps.to_string());
    kv("distill.epsilon", cfg.distill.epsilon.to_string());
    kv("distill.ce_mix", cfg.distill.ce_mix.to_string());
    kv("fedavg.epochs", cfg.fedavg_epochs.to_string());
    for c in &cfg.clients {
        s.push('\n');
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "client.{k} = {v}");
        };
        kv("id", c.id.to_string());
        match &c.kind {
            ClientKind::Synthetic { profile, concentration } => {
                kv("kind", "synthetic".into());
                match profile {
                    Profile::Diagonal { confidence, classes } => {
                        kv("profile", "diagonal".into());
                        kv("confidence", confidence.to_string());
                        kv("classes", join(classes, ","));
                    }
                    Profile::Uniform => kv("profile", "uniform".into()),
                    Profile::Rows(rows) => {
                        kv("profile", "rows".into());
                        kv("rows", rows.iter().map(|r| join(r, ",")).collect::<Vec<_>>().join(";"));
                    }
                }
                kv("concentration", concentration.map_or("inf".into(), |k| k.to_string()));
            }
            ClientKind::Trainable {
                partition,
                skew,
                epochs,
                epochs_per_round,
                lr,
                l2,
            } => {
                kv("kind", "trainable".into());
                kv("partition", if *partition == Partition::Iid { "iid" } else { "skew" }.into());
                kv("skew", skew.to_string());
                kv("epochs", epochs.to_string());
                kv("epochs_per_round", epochs_per_round.to_string());
                kv("lr", lr.to_string());
                kv("l2", l2.to_string());
            }
        }
        if let Some(r) = c.offline_from {
            kv("offline_from", r.to_string());
        }
    }
    s
}
