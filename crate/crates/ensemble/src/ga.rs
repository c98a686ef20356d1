//! Genetic search over the weight simplex.

use probfed_core::rng::{seeded, uniform_simplex, SimRng};
use probfed_core::WeightVector;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::EnsembleError;
use crate::fitness::{repair, FitnessContext, OptimizerOutcome, TracePoint, WeightOptimizer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub elite_count: usize,
    pub mutation_prob: f64,
    pub mutation_sigma: f64,
    pub diversity_period: usize,
    pub diversity_count: usize,
    pub rng_seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 40,
            generations: 100,
            elite_count: 5,
            mutation_prob: 0.3,
            mutation_sigma: 0.1,
            diversity_period: 10,
            diversity_count: 5,
            rng_seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), EnsembleError> {
        let bad = |msg: String| Err(EnsembleError::InvalidConfig(msg));
        if self.population_size < 2 {
            return bad(format!("ga population_size must be >= 2, got {}", self.population_size));
        }
        if self.elite_count >= self.population_size {
            return bad(format!(
                "ga elite_count ({}) must be below population_size ({})",
                self.elite_count, self.population_size
            ));
        }
        if self.elite_count + self.diversity_count > self.population_size {
            return bad("ga elite_count + diversity_count exceeds population_size".into());
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return bad(format!("ga mutation_prob must lie in [0, 1], got {}", self.mutation_prob));
        }
        if !(self.mutation_sigma >= 0.0) || !self.mutation_sigma.is_finite() {
            return bad(format!("ga mutation_sigma must be >= 0, got {}", self.mutation_sigma));
        }
        Ok(())
    }
}

/// One-point crossover: `a[..cut] ++ b[cut..]`, renormalized.
pub fn ga_crossover(a: &WeightVector, b: &WeightVector, cut: usize) -> Result<WeightVector, EnsembleError> {
    if a.len() != b.len() {
        return Err(EnsembleError::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let m = a.len();
    if m < 2 || cut < 1 || cut >= m {
        return Err(EnsembleError::BadCut { cut, m });
    }
    let raw: Vec<f64> = a[..cut].iter().chain(&b[cut..]).copied().collect();
    Ok(repair(&raw))
}

struct Scored {
    w: WeightVector,
    fitness: f64,
}

fn sort_desc(pop: &mut [Scored]) {
    // Stable: equal fitness keeps the earlier individual first.
    pop.sort_by(|x, y| y.fitness.total_cmp(&x.fitness));
}

fn mean_fitness(pop: &[Scored]) -> f64 {
    pop.iter().map(|s| s.fitness).sum::<f64>() / pop.len() as f64
}

fn fresh(ctx: &FitnessContext, rng: &mut SimRng, m: usize) -> Scored {
    let w = WeightVector::new(uniform_simplex(rng, m)).unwrap_or_else(|_| WeightVector::uniform(m));
    let fitness = ctx.fitness(&w);
    Scored { w, fitness }
}

pub fn ga_optimize(ctx: &FitnessContext, cfg: &GaConfig) -> Result<OptimizerOutcome, EnsembleError> {
    cfg.validate()?;
    let m = ctx.n_models();
    if m < 2 {
        return Err(EnsembleError::InvalidConfig(format!("weight search needs at least 2 models, got {m}")));
    }
    let mut rng = seeded(cfg.rng_seed);
    let noise = Normal::new(0.0, cfg.mutation_sigma).expect("sigma validated");

    let mut pop: Vec<Scored> = (0..cfg.population_size).map(|_| fresh(ctx, &mut rng, m)).collect();
    let mut best_idx = 0;
    for (i, s) in pop.iter().enumerate() {
        if s.fitness > pop[best_idx].fitness {
            best_idx = i;
        }
    }
    let mut best = (pop[best_idx].w.clone(), pop[best_idx].fitness);
    let mut trace = vec![TracePoint {
        step: 0,
        best: best.1,
        mean: mean_fitness(&pop),
    }];

    let pool_size = (cfg.population_size / 2).max(cfg.elite_count).max(2);
    for gen in 1..=cfg.generations {
        sort_desc(&mut pop);
        let pool = &pop[..pool_size];
        let mut next: Vec<Scored> = pop[..cfg.elite_count]
            .iter()
            .map(|s| Scored {
                w: s.w.clone(),
                fitness: s.fitness,
            })
            .collect();
        while next.len() < cfg.population_size {
            let a = &pool[rng.random_range(0..pool.len())].w;
            let b = &pool[rng.random_range(0..pool.len())].w;
            let cut = rng.random_range(1..m);
            let mut child = ga_crossover(a, b, cut)?;
            if rng.random::<f64>() < cfg.mutation_prob {
                let k = rng.random_range(0..m);
                let mut raw = child.into_inner();
                raw[k] += noise.sample(&mut rng);
                child = repair(&raw);
            }
            let fitness = ctx.fitness(&child);
            next.push(Scored { w: child, fitness });
        }
        if cfg.diversity_period > 0 && gen % cfg.diversity_period == 0 && cfg.diversity_count > 0 {
            // Replace the worst offspring; elites stay at the front.
            let tail = &mut next[cfg.elite_count..];
            sort_desc(tail);
            let n = tail.len();
            for slot in &mut tail[n - cfg.diversity_count..] {
                *slot = fresh(ctx, &mut rng, m);
            }
        }
        pop = next;
        for s in &pop {
            if s.fitness > best.1 {
                best = (s.w.clone(), s.fitness);
            }
        }
        trace.push(TracePoint {
            step: gen,
            best: best.1,
            mean: mean_fitness(&pop),
        });
    }
    Ok(OptimizerOutcome {
        weights: best.0,
        fitness: best.1,
        trace,
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GeneticOptimizer(pub GaConfig);

impl WeightOptimizer for GeneticOptimizer {
    fn name(&self) -> &'static str {
        "ga"
    }

    fn optimize(&self, ctx: &FitnessContext) -> Result<OptimizerOutcome, EnsembleError> {
        ga_optimize(ctx, &self.0)
    }
}
