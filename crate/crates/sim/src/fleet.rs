//! Client-side learners driven by the simulator.

use std::collections::BTreeMap;

use probfed_core::rng::{derive_seed, seeded, tag};
use probfed_core::{
    train_local, Concentration, Dataset, LabeledSample, ProbabilityVector, SoftmaxLinearModel,
    SyntheticClassifier, TrainConfig,
};
use probfed_ensemble::{client_distill_update, DistillationConfig, ReferenceSet};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use crate::config::{ClientKind, ClientSpec, Partition, Profile, ScenarioConfig};
use crate::error::SimError;

pub trait ClientLearner: Send {
    fn id(&self) -> u32;

    fn kind(&self) -> &'static str;

    /// Local work before contributing in `round`; returns the loss trace.
    fn local_round(&mut self, round: u32) -> Result<Vec<f64>, SimError>;

    fn predict(&self, sample: &LabeledSample) -> Result<ProbabilityVector, SimError>;

    /// Distils toward the broadcast targets. `None` means the learner
    /// ignores broadcasts.
    fn distill(
        &mut self,
        reference: &ReferenceSet,
        target_ids: &[u64],
        targets: &[ProbabilityVector],
        cfg: &DistillationConfig,
    ) -> Result<Option<Vec<f64>>, SimError>;

    /// Flat parameters, for learners that can take part in averaging.
    fn parameters(&self) -> Option<Vec<f64>> {
        None
    }

    fn load_parameters(&mut self, _params: &[f64]) -> Result<(), SimError> {
        Err(SimError::ShapeMismatch)
    }

    /// Plain supervised epochs on private data.
    fn train(&mut self, _epochs: usize) -> Result<Vec<f64>, SimError> {
        Ok(Vec::new())
    }
}

pub struct SyntheticLearner {
    id: u32,
    classifier: SyntheticClassifier,
}

impl SyntheticLearner {
    pub fn new(id: u32, classifier: SyntheticClassifier) -> Self {
        Self { id, classifier }
    }
}

impl ClientLearner for SyntheticLearner {
    fn id(&self) -> u32 {
        self.id
    }

    fn kind(&self) -> &'static str {
        "synthetic"
    }

    fn local_round(&mut self, _round: u32) -> Result<Vec<f64>, SimError> {
        Ok(Vec::new())
    }

    fn predict(&self, sample: &LabeledSample) -> Result<ProbabilityVector, SimError> {
        Ok(self.classifier.predict(sample)?)
    }

    fn distill(
        &mut self,
        _reference: &ReferenceSet,
        _target_ids: &[u64],
        _targets: &[ProbabilityVector],
        _cfg: &DistillationConfig,
    ) -> Result<Option<Vec<f64>>, SimError> {
        Ok(None)
    }
}

pub struct TrainableLearner {
    id: u32,
    model: SoftmaxLinearModel,
    data: Vec<LabeledSample>,
    epochs: usize,
    epochs_per_round: usize,
    lr: f64,
    l2: f64,
}

impl TrainableLearner {
    pub fn new(
        id: u32,
        model: SoftmaxLinearModel,
        data: Vec<LabeledSample>,
        epochs: usize,
        epochs_per_round: usize,
        lr: f64,
        l2: f64,
    ) -> Self {
        Self {
            id,
            model,
            data,
            epochs,
            epochs_per_round,
            lr,
            l2,
        }
    }

    pub fn model(&self) -> &SoftmaxLinearModel {
        &self.model
    }

    pub fn data(&self) -> &[LabeledSample] {
        &self.data
    }
}

impl ClientLearner for TrainableLearner {
    fn id(&self) -> u32 {
        self.id
    }

    fn kind(&self) -> &'static str {
        "trainable"
    }

    fn local_round(&mut self, round: u32) -> Result<Vec<f64>, SimError> {
        let epochs = if round <= 1 { self.epochs } else { self.epochs_per_round };
        self.train(epochs)
    }

    fn predict(&self, sample: &LabeledSample) -> Result<ProbabilityVector, SimError> {
        Ok(self.model.predict_proba(&sample.features)?)
    }

    fn distill(
        &mut self,
        reference: &ReferenceSet,
        target_ids: &[u64],
        targets: &[ProbabilityVector],
        cfg: &DistillationConfig,
    ) -> Result<Option<Vec<f64>>, SimError> {
        let (model, trace) =
            client_distill_update(&self.model, reference, target_ids, targets, &self.data, cfg)?;
        self.model = model;
        Ok(Some(trace))
    }

    fn parameters(&self) -> Option<Vec<f64>> {
        Some(self.model.params())
    }

    fn load_parameters(&mut self, params: &[f64]) -> Result<(), SimError> {
        if params.len() != self.model.param_count() {
            return Err(SimError::ShapeMismatch);
        }
        Ok(self.model.set_params(params)?)
    }

    fn train(&mut self, epochs: usize) -> Result<Vec<f64>, SimError> {
        if epochs == 0 {
            return Ok(Vec::new());
        }
        let cfg = TrainConfig {
            epochs,
            lr: self.lr,
            l2: self.l2,
        };
        let (model, trace) = train_local(&self.model, &self.data, &cfg)?;
        self.model = model;
        Ok(trace)
    }
}

/// Splits the training split among trainable clients, in ascending id order.
///
/// Client `k` of `K` draws a class-`c` sample with weight `1 / (1 - skew)`
/// when `c % K == k` and weight 1 otherwise, so `skew = 0` is IID.
pub fn partition_train(
    clients: &[ClientSpec],
    train: &[LabeledSample],
    seed: u64,
) -> Result<BTreeMap<u32, Vec<LabeledSample>>, SimError> {
    let mut trainable: Vec<(u32, f64)> = clients
        .iter()
        .filter_map(|c| match &c.kind {
            ClientKind::Trainable { partition, skew, .. } => {
                Some((c.id, if *partition == Partition::Skew { *skew } else { 0.0 }))
            }
            ClientKind::Synthetic { .. } => None,
        })
        .collect();
    trainable.sort_by_key(|t| t.0);
    let mut out: BTreeMap<u32, Vec<LabeledSample>> = trainable.iter().map(|t| (t.0, Vec::new())).collect();
    if trainable.is_empty() {
        return Ok(out);
    }
    let k = trainable.len();
    let mut rng = seeded(derive_seed(seed, tag("partition")));
    for sample in train {
        let weights: Vec<f64> = trainable
            .iter()
            .enumerate()
            .map(|(i, &(_, s))| if sample.label % k == i { 1.0 / (1.0 - s) } else { 1.0 })
            .collect();
        let pick = WeightedIndex::new(&weights).expect("positive weights").sample(&mut rng);
        out.get_mut(&trainable[pick].0).expect("listed").push(sample.clone());
    }
    Ok(out)
}

/// Builds one learner per roster entry, in roster order.
pub fn build_fleet(cfg: &ScenarioConfig, dataset: &Dataset) -> Result<Vec<Box<dyn ClientLearner>>, SimError> {
    let mut partitions = partition_train(&cfg.clients, &dataset.train, cfg.seed)?;
    let c = cfg.dataset.classes;
    cfg.clients
        .iter()
        .map(|spec| -> Result<Box<dyn ClientLearner>, SimError> {
            match &spec.kind {
                ClientKind::Synthetic { profile, concentration } => {
                    let rows = match profile {
                        Profile::Diagonal { confidence, classes } => {
                            SyntheticClassifier::diagonal_rows(c, *confidence, classes)?
                        }
                        Profile::Uniform => vec![ProbabilityVector::uniform(c); c],
                        Profile::Rows(rows) => rows
                            .iter()
                            .map(|r| ProbabilityVector::from_unnormalized(r))
                            .collect::<Result<_, _>>()?,
                    };
                    let concentration = concentration.map_or(Concentration::Infinite, Concentration::Finite);
                    let seed = derive_seed(cfg.seed, tag(&format!("client/{}", spec.id)));
                    let classifier = SyntheticClassifier::new(rows, concentration, seed)?;
                    Ok(Box::new(SyntheticLearner::new(spec.id, classifier)))
                }
                ClientKind::Trainable {
                    epochs,
                    epochs_per_round,
                    lr,
                    l2,
                    ..
                } => {
                    let data = partitions.remove(&spec.id).unwrap_or_default();
                    if data.is_empty() {
                        return Err(SimError::Core(probfed_core::CoreError::Empty));
                    }
                    let model = SoftmaxLinearModel::zeros(c, cfg.dataset.features);
                    Ok(Box::new(TrainableLearner::new(
                        spec.id,
                        model,
                        data,
                        *epochs,
                        *epochs_per_round,
                        *lr,
                        *l2,
                    )))
                }
            }
        })
        .collect()
}
