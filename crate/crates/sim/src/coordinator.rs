//! Server side of a run: round collection, fusion and broadcast, and the
//! parameter-averaging comparator.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;
use std::time::{Duration, Instant};

use probfed_core::{fedavg_aggregate, ProbabilityVector, SoftmaxLinearModel};
use probfed_ensemble::{align, AlignedProbabilities, FitReport, FusionStrategy, MeanFusion};
use probfed_transport::{
    topics, Broker, BrokerError, ContributionMessage, EnsembleBroadcast, Message, ParameterMessage,
    ProbabilityEntry, Subscription, SERVER_ID,
};

use crate::error::SimError;

/// A message the server collects once per client per round.
pub trait RoundMessage: Sized {
    fn sender(&self) -> u32;
    fn round(&self) -> u32;
    fn extract(msg: Message) -> Option<Self>;
}

impl RoundMessage for ContributionMessage {
    fn sender(&self) -> u32 {
        self.client_id()
    }

    fn round(&self) -> u32 {
        ContributionMessage::round(self)
    }

    fn extract(msg: Message) -> Option<Self> {
        match msg {
            Message::Contribution(m) => Some(m),
            _ => None,
        }
    }
}

impl RoundMessage for ParameterMessage {
    fn sender(&self) -> u32 {
        self.client_id
    }

    fn round(&self) -> u32 {
        self.round
    }

    fn extract(msg: Message) -> Option<Self> {
        match msg {
            Message::Parameters(m) if m.client_id != SERVER_ID => Some(m),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RoundStatus {
    Collecting,
    Eligible,
    Aggregated,
    Abandoned,
}

#[derive(Debug, Clone)]
pub struct RoundState<T> {
    round: u32,
    min_contributions: usize,
    received: BTreeMap<u32, T>,
    stale: usize,
    replaced: usize,
    status: RoundStatus,
}

impl<T: RoundMessage> RoundState<T> {
    pub fn new(round: u32, min_contributions: usize) -> Self {
        Self {
            round,
            min_contributions,
            received: BTreeMap::new(),
            stale: 0,
            replaced: 0,
            status: RoundStatus::Collecting,
        }
    }

    /// Stale messages are counted and dropped; a second message from the
    /// same client replaces the first.
    pub fn collect(&mut self, msg: T) -> Result<(), SimError> {
        if msg.round() > self.round {
            return Err(SimError::FutureRound {
                got: msg.round(),
                current: self.round,
            });
        }
        if msg.round() < self.round || self.status > RoundStatus::Eligible {
            self.stale += 1;
            return Ok(());
        }
        if self.received.insert(msg.sender(), msg).is_some() {
            self.replaced += 1;
        }
        if self.received.len() >= self.min_contributions {
            self.status = RoundStatus::Eligible;
        }
        Ok(())
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn status(&self) -> RoundStatus {
        self.status
    }

    pub fn is_eligible(&self) -> bool {
        self.status == RoundStatus::Eligible
    }

    pub fn len(&self) -> usize {
        self.received.len()
    }

    pub fn is_empty(&self) -> bool {
        self.received.is_empty()
    }

    pub fn stale(&self) -> usize {
        self.stale
    }

    pub fn replaced(&self) -> usize {
        self.replaced
    }

    pub fn senders(&self) -> Vec<u32> {
        self.received.keys().copied().collect()
    }

    pub fn get(&self, client: u32) -> Option<&T> {
        self.received.get(&client)
    }

    /// Received messages in ascending sender order.
    pub fn messages(&self) -> impl Iterator<Item = &T> {
        self.received.values()
    }

    fn advance(&mut self, to: RoundStatus) {
        if to > self.status {
            self.status = to;
        }
    }

    pub fn abandon(&mut self) {
        self.advance(RoundStatus::Abandoned);
    }
}

/// When collection stops.
#[derive(Debug, Clone)]
pub struct CollectPolicy {
    pub roster: BTreeSet<u32>,
    pub min_contributions: usize,
    /// How long to wait for the threshold before giving up.
    pub wait: Duration,
    /// Quiet period after which an eligible round stops waiting for stragglers.
    pub poll_timeout: Duration,
}

/// Polls `sub` until every roster client has been heard from, or the feed
/// goes quiet with the threshold met. Fails once the wait budget runs out
/// below the threshold.
pub fn collect_round<T: RoundMessage>(
    broker: &dyn Broker,
    sub: &Subscription,
    state: &mut RoundState<T>,
    policy: &CollectPolicy,
) -> Result<(), SimError> {
    let start = Instant::now();
    loop {
        if policy.roster.iter().all(|id| state.get(*id).is_some()) {
            break;
        }
        match broker.poll(sub, policy.poll_timeout) {
            Ok(msg) => {
                if let Some(m) = T::extract(msg) {
                    state.collect(m)?;
                }
            }
            Err(BrokerError::Timeout) => {
                if state.is_eligible() {
                    break;
                }
                if start.elapsed() >= policy.wait {
                    break;
                }
            }
            Err(e) => return Err(e.into()),
        }
    }
    if !state.is_eligible() {
        state.abandon();
        return Err(SimError::InsufficientContributions {
            round: state.round(),
            got: state.len(),
            need: policy.min_contributions,
        });
    }
    Ok(())
}

/// Result of one probability-level aggregation.
#[derive(Debug, Clone)]
pub struct Aggregation {
    pub round: u32,
    /// Strategy that produced the broadcast.
    pub strategy: &'static str,
    pub aligned: AlignedProbabilities,
    pub fused: Vec<ProbabilityVector>,
    /// Present in the round where the strategy was fitted.
    pub fit: Option<FitReport>,
    pub fit_context: Option<AlignedProbabilities>,
}

impl Aggregation {
    pub fn contributors(&self) -> &[u32] {
        self.aligned.model_order()
    }
}

pub struct Coordinator {
    broker: Arc<dyn Broker>,
    policy: CollectPolicy,
    strategy: Box<dyn FusionStrategy>,
    fallback: MeanFusion,
    fit_round: u32,
    fitted: bool,
    labels: HashMap<u64, usize>,
}

impl Coordinator {
    /// `labels` maps reference sample ids to their labels; the server uses
    /// them to fit strategies that need it.
    pub fn new(
        broker: Arc<dyn Broker>,
        policy: CollectPolicy,
        strategy: Box<dyn FusionStrategy>,
        fit_round: u32,
        labels: HashMap<u64, usize>,
    ) -> Self {
        Self {
            broker,
            policy,
            strategy,
            fallback: MeanFusion,
            fit_round,
            fitted: false,
            labels,
        }
    }

    pub fn policy(&self) -> &CollectPolicy {
        &self.policy
    }

    /// Subscribes to the round's contribution topic.
    pub fn open_round(&self, round: u32) -> Result<(RoundState<ContributionMessage>, Subscription), SimError> {
        let sub = self.broker.subscribe(SERVER_ID, &topics::contribution(round))?;
        Ok((RoundState::new(round, self.policy.min_contributions), sub))
    }

    pub fn collect(&self, state: &mut RoundState<ContributionMessage>, sub: Subscription) -> Result<(), SimError> {
        let out = collect_round(self.broker.as_ref(), &sub, state, &self.policy);
        self.broker.unsubscribe(sub)?;
        out
    }

    fn active(&self) -> &dyn FusionStrategy {
        if self.strategy.requires_fit() && !self.fitted {
            &self.fallback
        } else {
            self.strategy.as_ref()
        }
    }

    /// Fuses with whatever strategy is currently in force.
    pub fn fuse(&self, a: &AlignedProbabilities) -> Result<Vec<ProbabilityVector>, SimError> {
        Ok(self.active().fuse(a)?)
    }

    /// Aligns the round's contributions, fits the strategy once at the fit
    /// round, fuses, and publishes the broadcast on `ensemble/<round>`.
    pub fn aggregate_round(&mut self, state: &mut RoundState<ContributionMessage>) -> Result<Aggregation, SimError> {
        if !state.is_eligible() {
            return Err(SimError::NotEligible { round: state.round() });
        }
        let round = state.round();
        let contributions: Vec<&ContributionMessage> = state.messages().collect();
        let aligned = align(&contributions)?;
        let mut fit = None;
        let mut fit_context = None;
        if self.strategy.requires_fit() && !self.fitted && round >= self.fit_round {
            let labelled = aligned.clone().label_by_id(&self.labels)?;
            fit = Some(self.strategy.fit(&labelled)?);
            fit_context = Some(labelled);
            self.fitted = true;
        }
        let strategy = self.active().name();
        let fused = self.fuse(&aligned)?;
        let entries = aligned
            .sample_ids()
            .iter()
            .zip(&fused)
            .map(|(&sample_id, probs)| ProbabilityEntry {
                sample_id,
                probs: probs.clone(),
            })
            .collect();
        let broadcast = EnsembleBroadcast::new(round, aligned.n_classes(), entries)?;
        self.broker
            .publish(SERVER_ID, &topics::ensemble(round), &Message::Broadcast(broadcast))?;
        state.advance(RoundStatus::Aggregated);
        Ok(Aggregation {
            round,
            strategy,
            aligned,
            fused,
            fit,
            fit_context,
        })
    }
}

/// Server side of the parameter-averaging comparator.
pub struct FedAvgServer {
    broker: Arc<dyn Broker>,
    policy: CollectPolicy,
    n_classes: usize,
    n_features: usize,
}

impl FedAvgServer {
    pub fn new(broker: Arc<dyn Broker>, policy: CollectPolicy, n_classes: usize, n_features: usize) -> Self {
        Self {
            broker,
            policy,
            n_classes,
            n_features,
        }
    }

    pub fn open_round(&self, round: u32) -> Result<(RoundState<ParameterMessage>, Subscription), SimError> {
        let sub = self.broker.subscribe(SERVER_ID, &topics::params(round))?;
        Ok((RoundState::new(round, self.policy.min_contributions), sub))
    }

    pub fn collect(&self, state: &mut RoundState<ParameterMessage>, sub: &Subscription) -> Result<(), SimError> {
        collect_round(self.broker.as_ref(), sub, state, &self.policy)
    }

    /// Element-wise mean of the received parameter vectors.
    pub fn average(&self, state: &RoundState<ParameterMessage>) -> Result<Vec<f64>, SimError> {
        let models = state
            .messages()
            .map(|m| {
                let mut model = SoftmaxLinearModel::zeros(self.n_classes, self.n_features);
                if m.params.len() != model.param_count() {
                    return Err(SimError::ShapeMismatch);
                }
                model.set_params(&m.params)?;
                Ok(model)
            })
            .collect::<Result<Vec<_>, SimError>>()?;
        Ok(fedavg_aggregate(&models)?.params())
    }

    /// Leaves the topic, then publishes the global parameters on it.
    pub fn broadcast(
        &self,
        state: &mut RoundState<ParameterMessage>,
        sub: Subscription,
        params: Vec<f64>,
    ) -> Result<(), SimError> {
        self.broker.unsubscribe(sub)?;
        let msg = Message::Parameters(ParameterMessage {
            client_id: SERVER_ID,
            round: state.round(),
            params,
        });
        self.broker.publish(SERVER_ID, &topics::params(state.round()), &msg)?;
        state.advance(RoundStatus::Aggregated);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use probfed_transport::InProcBroker;

    fn contribution(client: u32, round: u32, p0: f64) -> ContributionMessage {
        let entries = vec![ProbabilityEntry {
            sample_id: 7,
            probs: ProbabilityVector::new(vec![p0, 1.0 - p0]).unwrap(),
        }];
        ContributionMessage::new(client, round, 2, entries).unwrap()
    }

    fn policy(roster: &[u32], min: usize, wait_ms: u64) -> CollectPolicy {
        CollectPolicy {
            roster: roster.iter().copied().collect(),
            min_contributions: min,
            wait: Duration::from_millis(wait_ms),
            poll_timeout: Duration::from_millis(5),
        }
    }

    #[test]
    fn threshold_flips_status() {
        let mut s = RoundState::new(1, 2);
        s.collect(contribution(1, 1, 0.5)).unwrap();
        assert_eq!(s.status(), RoundStatus::Collecting);
        s.collect(contribution(2, 1, 0.5)).unwrap();
        assert_eq!(s.status(), RoundStatus::Eligible);
    }

    #[test]
    fn latest_wins() {
        let mut s = RoundState::new(1, 2);
        s.collect(contribution(1, 1, 0.2)).unwrap();
        s.collect(contribution(1, 1, 0.9)).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.replaced(), 1);
        assert_eq!(s.get(1).unwrap().entries()[0].probs[0], 0.9);
    }

    #[test]
    fn stale_and_future_rounds() {
        let mut s = RoundState::new(3, 1);
        s.collect(contribution(1, 2, 0.5)).unwrap();
        assert_eq!((s.len(), s.stale()), (0, 1));
        assert!(matches!(
            s.collect(contribution(1, 4, 0.5)),
            Err(SimError::FutureRound { got: 4, current: 3 })
        ));
    }

    #[test]
    fn status_only_moves_forward() {
        let mut s: RoundState<ContributionMessage> = RoundState::new(1, 1);
        s.abandon();
        s.advance(RoundStatus::Eligible);
        assert_eq!(s.status(), RoundStatus::Abandoned);
        s.collect(contribution(1, 1, 0.5)).unwrap();
        assert_eq!((s.len(), s.stale()), (0, 1));
    }

    #[test]
    fn zero_wait_below_threshold_fails() {
        let broker = InProcBroker::default();
        let sub = broker.subscribe(SERVER_ID, &topics::contribution(1)).unwrap();
        broker
            .publish(1, &topics::contribution(1), &Message::Contribution(contribution(1, 1, 0.5)))
            .unwrap();
        let mut s: RoundState<ContributionMessage> = RoundState::new(1, 2);
        let err = collect_round(&broker, &sub, &mut s, &policy(&[1, 2], 2, 0)).unwrap_err();
        assert!(matches!(err, SimError::InsufficientContributions { got: 1, need: 2, .. }));
        assert_eq!(s.status(), RoundStatus::Abandoned);
    }

    #[test]
    fn eligible_round_does_not_wait_for_stragglers() {
        let broker = InProcBroker::default();
        let sub = broker.subscribe(SERVER_ID, &topics::contribution(1)).unwrap();
        for id in [1, 2] {
            broker
                .publish(id, &topics::contribution(1), &Message::Contribution(contribution(id, 1, 0.5)))
                .unwrap();
        }
        let mut s: RoundState<ContributionMessage> = RoundState::new(1, 2);
        let t = Instant::now();
        collect_round(&broker, &sub, &mut s, &policy(&[1, 2, 3], 2, 60_000)).unwrap();
        assert!(t.elapsed() < Duration::from_secs(5));
        assert_eq!(s.senders(), vec![1, 2]);
    }

    fn coordinator(broker: &InProcBroker, strategy: Box<dyn FusionStrategy>) -> Coordinator {
        Coordinator::new(
            Arc::new(broker.clone()),
            policy(&[1, 2], 2, 1000),
            strategy,
            1,
            HashMap::from([(7, 0)]),
        )
    }

    #[test]
    fn mean_broadcast_is_elementwise_mean() {
        let broker = InProcBroker::default();
        let mut c = coordinator(&broker, Box::new(MeanFusion));
        let listen = broker.subscribe(1, &topics::ensemble(1)).unwrap();
        let (mut s, sub) = c.open_round(1).unwrap();
        broker.publish(1, &topics::contribution(1), &Message::Contribution(contribution(1, 1, 0.2))).unwrap();
        broker.publish(2, &topics::contribution(1), &Message::Contribution(contribution(2, 1, 0.6))).unwrap();
        c.collect(&mut s, sub).unwrap();
        let agg = c.aggregate_round(&mut s).unwrap();
        assert_eq!(s.status(), RoundStatus::Aggregated);
        assert!((agg.fused[0][0] - 0.4).abs() < 1e-7);
        let Message::Broadcast(b) = broker.poll(&listen, Duration::from_secs(1)).unwrap() else {
            panic!("expected a broadcast")
        };
        assert!((b.entries()[0].probs[0] - 0.4).abs() < 1e-7);
    }

    #[test]
    fn one_hot_weights_pass_a_client_through() {
        let broker = InProcBroker::default();
        let strategy = Box::new(probfed_ensemble::FixedWeights::new(Some(vec![0.0, 1.0])));
        let mut c = coordinator(&broker, strategy);
        let (mut s, sub) = c.open_round(1).unwrap();
        broker.publish(1, &topics::contribution(1), &Message::Contribution(contribution(1, 1, 0.2))).unwrap();
        broker.publish(2, &topics::contribution(1), &Message::Contribution(contribution(2, 1, 0.6))).unwrap();
        c.collect(&mut s, sub).unwrap();
        let agg = c.aggregate_round(&mut s).unwrap();
        assert_eq!(agg.strategy, "weighted");
        assert!(agg.fit.is_some());
        let sent = &s.get(2).unwrap().entries()[0].probs;
        assert!(agg.fused[0].iter().zip(sent.iter()).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn not_eligible_is_rejected() {
        let broker = InProcBroker::default();
        let mut c = coordinator(&broker, Box::new(MeanFusion));
        let mut s: RoundState<ContributionMessage> = RoundState::new(1, 2);
        assert!(matches!(c.aggregate_round(&mut s), Err(SimError::NotEligible { round: 1 })));
    }

    #[test]
    fn fedavg_shape_checked() {
        let broker = InProcBroker::default();
        let server = FedAvgServer::new(Arc::new(broker), policy(&[1], 1, 10), 2, 2);
        let mut s = RoundState::new(1, 1);
        s.collect(ParameterMessage { client_id: 1, round: 1, params: vec![0.0; 5] }).unwrap();
        assert!(matches!(server.average(&s), Err(SimError::ShapeMismatch)));
        let mut s = RoundState::new(1, 1);
        s.collect(ParameterMessage { client_id: 1, round: 1, params: vec![1.0; 6] }).unwrap();
        s.collect(ParameterMessage { client_id: 2, round: 1, params: vec![3.0; 6] }).unwrap();
        assert_eq!(server.average(&s).unwrap(), vec![2.0; 6]);
    }
}
