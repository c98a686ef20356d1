//! Fusion strategies behind a common trait, registered by name.

use std::collections::BTreeMap;

use probfed_core::{ProbabilityVector, WeightVector};

use crate::align::AlignedProbabilities;
use crate::error::EnsembleError;
use crate::fitness::{repair, FitnessContext, TracePoint, WeightOptimizer};
use crate::fusion::{mean_fuse, weighted_fuse};
use crate::ga::{GaConfig, GeneticOptimizer};
use crate::pso::{PsoConfig, SwarmOptimizer};
use crate::stacking::{predict_stacking, train_stacking, StackingConfig, StackingModel};

/// What a fit produced, for reporting.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitReport {
    pub trace: Vec<TracePoint>,
    /// Weights keyed by model order, for weight-based strategies.
    pub weights: Option<Vec<(u32, f64)>>,
    pub fitness: Option<f64>,
    pub iterations: Option<usize>,
}

pub trait FusionStrategy: Send {
    fn name(&self) -> &'static str;

    /// Whether `fuse` needs a prior `fit` on labelled data.
    fn requires_fit(&self) -> bool {
        true
    }

    fn fit(&mut self, labelled: &AlignedProbabilities) -> Result<FitReport, EnsembleError>;

    /// Fuses an alignment. The alignment may cover a subset of the fitted
    /// models when clients are missing.
    fn fuse(&self, a: &AlignedProbabilities) -> Result<Vec<ProbabilityVector>, EnsembleError>;
}

#[derive(Debug, Clone, Default)]
pub struct StrategyParams {
    /// Fixed weights for `weighted`, in ascending client-id order.
    pub weights: Option<Vec<f64>>,
    pub stacking: StackingConfig,
    pub ga: GaConfig,
    pub pso: PsoConfig,
}

pub type StrategyFactory = fn(&StrategyParams) -> Result<Box<dyn FusionStrategy>, EnsembleError>;

pub struct StrategyRegistry {
    factories: BTreeMap<&'static str, StrategyFactory>,
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("mean", |_| Ok(Box::new(MeanFusion)));
        r.register("weighted", |p| Ok(Box::new(FixedWeights::new(p.weights.clone()))));
        r.register("stacking", |p| Ok(Box::new(Stacking::new(p.stacking))));
        r.register("ga", |p| {
            p.ga.validate()?;
            Ok(Box::new(OptimizedWeights::new(Box::new(GeneticOptimizer(p.ga)))))
        });
        r.register("pso", |p| {
            p.pso.validate()?;
            Ok(Box::new(OptimizedWeights::new(Box::new(SwarmOptimizer(p.pso)))))
        });
        r
    }

    pub fn register(&mut self, name: &'static str, factory: StrategyFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn create(&self, name: &str, params: &StrategyParams) -> Result<Box<dyn FusionStrategy>, EnsembleError> {
        let factory = self.factories.get(name).ok_or_else(|| EnsembleError::UnknownStrategy {
            name: name.to_string(),
            known: self.names().join(", "),
        })?;
        factory(params)
    }
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

pub struct MeanFusion;

impl FusionStrategy for MeanFusion {
    fn name(&self) -> &'static str {
        "mean"
    }

    fn requires_fit(&self) -> bool {
        false
    }

    fn fit(&mut self, _labelled: &AlignedProbabilities) -> Result<FitReport, EnsembleError> {
        Ok(FitReport::default())
    }

    fn fuse(&self, a: &AlignedProbabilities) -> Result<Vec<ProbabilityVector>, EnsembleError> {
        mean_fuse(a)
    }
}

/// Weights bound to client ids; missing clients are dropped and the rest renormalized.
#[derive(Debug, Clone, Default)]
struct BoundWeights(BTreeMap<u32, f64>);

impl BoundWeights {
    fn bind(order: &[u32], w: &[f64]) -> Self {
        Self(order.iter().copied().zip(w.iter().copied()).collect())
    }

    fn fuse(&self, a: &AlignedProbabilities) -> Result<Vec<ProbabilityVector>, EnsembleError> {
        let raw: Vec<f64> = a
            .model_order()
            .iter()
            .map(|id| self.0.get(id).copied().unwrap_or(0.0))
            .collect();
        if raw.is_empty() {
            return Err(EnsembleError::EmptyAlignment);
        }
        weighted_fuse(a, &repair(&raw))
    }

    fn report(&self) -> Vec<(u32, f64)> {
        self.0.iter().map(|(&k, &v)| (k, v)).collect()
    }
}

pub struct FixedWeights {
    configured: Option<Vec<f64>>,
    bound: Option<BoundWeights>,
}

impl FixedWeights {
    pub fn new(weights: Option<Vec<f64>>) -> Self {
        Self {
            configured: weights,
            bound: None,
        }
    }
}

impl FusionStrategy for FixedWeights {
    fn name(&self) -> &'static str {
        "weighted"
    }

    fn fit(&mut self, labelled: &AlignedProbabilities) -> Result<FitReport, EnsembleError> {
        let m = labelled.n_models();
        let w = match &self.configured {
            Some(w) if w.len() != m => {
                return Err(EnsembleError::LengthMismatch {
                    expected: m,
                    got: w.len(),
                })
            }
            Some(w) => WeightVector::from_unnormalized(w)?,
            None => WeightVector::uniform(m),
        };
        let bound = BoundWeights::bind(labelled.model_order(), &w);
        let report = FitReport {
            weights: Some(bound.report()),
            ..Default::default()
        };
        self.bound = Some(bound);
        Ok(report)
    }

    fn fuse(&self, a: &AlignedProbabilities) -> Result<Vec<ProbabilityVector>, EnsembleError> {
        self.bound.as_ref().ok_or(EnsembleError::NotFitted("weighted"))?.fuse(a)
    }
}

pub struct OptimizedWeights {
    optimizer: Box<dyn WeightOptimizer>,
    bound: Option<BoundWeights>,
}

impl OptimizedWeights {
    pub fn new(optimizer: Box<dyn WeightOptimizer>) -> Self {
        Self { optimizer, bound: None }
    }
}

impl FusionStrategy for OptimizedWeights {
    fn name(&self) -> &'static str {
        self.optimizer.name()
    }

    fn fit(&mut self, labelled: &AlignedProbabilities) -> Result<FitReport, EnsembleError> {
        let ctx = FitnessContext::new(labelled.clone())?;
        let out = self.optimizer.optimize(&ctx)?;
        let bound = BoundWeights::bind(labelled.model_order(), &out.weights);
        let report = FitReport {
            weights: Some(bound.report()),
            fitness: Some(out.fitness),
            iterations: Some(out.trace.len().saturating_sub(1)),
            trace: out.trace,
        };
        self.bound = Some(bound);
        Ok(report)
    }

    fn fuse(&self, a: &AlignedProbabilities) -> Result<Vec<ProbabilityVector>, EnsembleError> {
        self.bound.as_ref().ok_or(EnsembleError::NotFitted(self.optimizer.name()))?.fuse(a)
    }
}

pub struct Stacking {
    cfg: StackingConfig,
    model: Option<StackingModel>,
}

impl Stacking {
    pub fn new(cfg: StackingConfig) -> Self {
        Self { cfg, model: None }
    }

    pub fn model(&self) -> Option<&StackingModel> {
        self.model.as_ref()
    }
}

impl FusionStrategy for Stacking {
    fn name(&self) -> &'static str {
        "stacking"
    }

    fn fit(&mut self, labelled: &AlignedProbabilities) -> Result<FitReport, EnsembleError> {
        let fit = train_stacking(labelled, &self.cfg)?;
        let trace = fit
            .losses
            .iter()
            .enumerate()
            .map(|(step, &loss)| TracePoint { step, best: loss, mean: loss })
            .collect();
        self.model = Some(fit.model);
        Ok(FitReport {
            trace,
            iterations: Some(fit.iterations),
            ..Default::default()
        })
    }

    /// Missing clients are represented by the uniform distribution.
    fn fuse(&self, a: &AlignedProbabilities) -> Result<Vec<ProbabilityVector>, EnsembleError> {
        let model = self.model.as_ref().ok_or(EnsembleError::NotFitted("stacking"))?;
        if a.model_order() == model.model_order() {
            predict_stacking(model, a)
        } else {
            predict_stacking(model, &a.reorder_with_fill(model.model_order()))
        }
    }
}
