//! Particle-swarm search over the weight simplex.

use probfed_core::rng::{seeded, uniform_simplex};
use rand::Rng;

use crate::error::EnsembleError;
use crate::fitness::{repair, FitnessContext, OptimizerOutcome, TracePoint, WeightOptimizer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsoConfig {
    pub swarm_size: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub rng_seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            swarm_size: 20,
            iterations: 100,
            inertia: 0.7,
            cognitive: 1.5,
            social: 1.5,
            rng_seed: 0,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<(), EnsembleError> {
        if self.swarm_size < 2 {
            return Err(EnsembleError::InvalidConfig(format!(
                "pso swarm_size must be >= 2, got {}",
                self.swarm_size
            )));
        }
        for (name, v) in [("inertia", self.inertia), ("cognitive", self.cognitive), ("social", self.social)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(EnsembleError::InvalidConfig(format!("pso {name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// `v' = ω v + c1 r1 (p - x) + c2 r2 (g - x)`, element-wise.
#[allow(clippy::too_many_arguments)]
pub fn velocity_update(
    v: &[f64],
    x: &[f64],
    personal_best: &[f64],
    global_best: &[f64],
    inertia: f64,
    c1: f64,
    c2: f64,
    r1: f64,
    r2: f64,
) -> Vec<f64> {
    v.iter()
        .zip(x)
        .zip(personal_best.iter().zip(global_best))
        .map(|((v, x), (p, g))| inertia * v + c1 * r1 * (p - x) + c2 * r2 * (g - x))
        .collect()
}

struct Particle {
    x: Vec<f64>,
    v: Vec<f64>,
    fitness: f64,
    best_x: Vec<f64>,
    best_fitness: f64,
}

pub fn pso_optimize(ctx: &FitnessContext, cfg: &PsoConfig) -> Result<OptimizerOutcome, EnsembleError> {
    cfg.validate()?;
    let m = ctx.n_models();
    if m < 2 {
        return Err(EnsembleError::InvalidConfig(format!("weight search needs at least 2 models, got {m}")));
    }
    let mut rng = seeded(cfg.rng_seed);
    let mut swarm: Vec<Particle> = (0..cfg.swarm_size)
        .map(|_| {
            let x = repair(&uniform_simplex(&mut rng, m)).into_inner();
            let fitness = ctx.fitness(&x);
            Particle {
                v: vec![0.0; m],
                best_x: x.clone(),
                best_fitness: fitness,
                x,
                fitness,
            }
        })
        .collect();
    let mut g = 0;
    for (i, p) in swarm.iter().enumerate() {
        if p.fitness > swarm[g].fitness {
            g = i;
        }
    }
    let mut global = (swarm[g].x.clone(), swarm[g].fitness);
    let mean = |s: &[Particle]| s.iter().map(|p| p.fitness).sum::<f64>() / s.len() as f64;
    let mut trace = vec![TracePoint {
        step: 0,
        best: global.1,
        mean: mean(&swarm),
    }];

    for it in 1..=cfg.iterations {
        // Synchronous: every particle sees the global best from the start of the iteration.
        for p in swarm.iter_mut() {
            let r1: f64 = rng.random();
            let r2: f64 = rng.random();
            p.v = velocity_update(&p.v, &p.x, &p.best_x, &global.0, cfg.inertia, cfg.cognitive, cfg.social, r1, r2);
            let moved: Vec<f64> = p.x.iter().zip(&p.v).map(|(x, v)| x + v).collect();
            p.x = repair(&moved).into_inner();
            p.fitness = ctx.fitness(&p.x);
            if p.fitness > p.best_fitness {
                p.best_x = p.x.clone();
                p.best_fitness = p.fitness;
            }
        }
        for p in &swarm {
            if p.best_fitness > global.1 {
                global = (p.best_x.clone(), p.best_fitness);
            }
        }
        trace.push(TracePoint {
            step: it,
            best: global.1,
            mean: mean(&swarm),
        });
    }
    Ok(OptimizerOutcome {
        weights: repair(&global.0),
        fitness: global.1,
        trace,
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SwarmOptimizer(pub PsoConfig);

impl WeightOptimizer for SwarmOptimizer {
    fn name(&self) -> &'static str {
        "pso"
    }

    fn optimize(&self, ctx: &FitnessContext) -> Result<OptimizerOutcome, EnsembleError> {
        pso_optimize(ctx, &self.0)
    }
}
