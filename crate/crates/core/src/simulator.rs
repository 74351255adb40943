//! Round-by-round orchestration: local training, upload, aggregator
//! selection, robust aggregation, optional aggregator attack, audit,
//! recording and evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate, AggregatorSpec};
use crate::attacks::{assign_byzantine, poisoned_model, AttackConfig, AttackKind};
use crate::contracts::{
    on_reject, paa_audit, pse_scores, record_hsic, select_aggregator, NodeState, NodeStates, TrustParams, Verdict,
};
use crate::error::{Error, Result};
use crate::hsic::{KernelSpec, DEFAULT_SAMPLE_CAP};
use crate::learning::{evaluate, init_params, local_train, make_federated_data, DataSpec, FederatedData, ModelSpec};
use crate::ledger::{hex_digest, BlockBody, BlockKind, Chain, KeyRegistry, NodeId};
use crate::rng::{derive_seed, rng_for, stream};
use crate::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    /// A fixed honest aggregator, no audit.
    #[serde(rename = "benign")]
    Benign,
    /// Drift-score selection plus HSIC audit with bans.
    #[serde(rename = "trustchain")]
    Audited,
    /// Uniformly random miner, no audit.
    #[serde(rename = "unprotected")]
    Unprotected,
}

impl Mode {
    pub fn token(self) -> &'static str {
        match self {
            Mode::Benign => "benign",
            Mode::Audited => "trustchain",
            Mode::Unprotected => "unprotected",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "benign" => Ok(Mode::Benign),
            "trustchain" | "audited" => Ok(Mode::Audited),
            "unprotected" => Ok(Mode::Unprotected),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub rounds: u64,
    /// Participants `n`; every participant uploads each round.
    pub clients: usize,
    /// Miners `k`: nodes `0..k` are aggregator candidates.
    pub miners: usize,
    pub samples_per_client: usize,
    pub test_size: usize,
    pub class_separation: f64,
    pub imbalance: f64,
    pub trust: TrustParams,
    pub model: ModelSpec,
    pub attack: AttackConfig,
    pub aggregator: AggregatorSpec,
    pub kernel: KernelSpec,
    pub hsic_sample_cap: usize,
    pub mode: Mode,
    /// Rounds whose first audit is overridden to a rejection (fault injection).
    pub force_reject_rounds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            rounds: 200,
            clients: 100,
            miners: 20,
            samples_per_client: 50,
            test_size: 1000,
            class_separation: 0.6,
            imbalance: 0.0,
            trust: TrustParams::default(),
            model: ModelSpec::default(),
            attack: AttackConfig::default(),
            aggregator: AggregatorSpec::default(),
            kernel: KernelSpec::default(),
            hsic_sample_cap: DEFAULT_SAMPLE_CAP,
            mode: Mode::Audited,
            force_reject_rounds: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn data_spec(&self) -> DataSpec {
        DataSpec {
            clients: self.clients,
            samples_per_client: self.samples_per_client,
            test_size: self.test_size,
            input_dim: self.model.input_dim,
            classes: self.model.classes,
            class_separation: self.class_separation,
            imbalance: self.imbalance,
            pool_size: 0,
        }
    }

    /// Checks every field; returns soft warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.clients == 0 {
            return cfg("clients must be positive".into());
        }
        if self.miners == 0 || self.miners > self.clients {
            return cfg(format!("miners must lie in 1..={}, got {}", self.clients, self.miners));
        }
        if self.rounds < self.trust.warmup_rounds {
            return cfg(format!(
                "rounds ({}) must be at least warmup_rounds ({})",
                self.rounds, self.trust.warmup_rounds
            ));
        }
        if self.hsic_sample_cap < 2 {
            return cfg("hsic_sample_cap must be at least 2".into());
        }
        let wrap = |e: Error| match e {
            Error::InvalidParameter(m) | Error::InfeasibleData(m) => Error::Config(m),
            other => other,
        };
        self.model.validate().map_err(wrap)?;
        self.attack.validate().map_err(wrap)?;
        self.aggregator.validate().map_err(wrap)?;
        self.kernel.validate().map_err(wrap)?;
        if self.aggregator.trim_count(self.clients) * 2 >= self.clients {
            return cfg("trim_fraction leaves no update to average".into());
        }
        if !(0.0..1.0).contains(&self.imbalance) {
            return cfg(format!("imbalance must lie in [0, 1), got {}", self.imbalance));
        }
        if !(self.class_separation.is_finite() && self.class_separation >= 0.0) {
            return cfg("class_separation must be non-negative".into());
        }
        if self.samples_per_client == 0 || self.test_size == 0 {
            return cfg("samples_per_client and test_size must be positive".into());
        }
        if self.attack.kind == AttackKind::LabelFlip && self.model.classes < 2 {
            return cfg("label flipping needs at least two classes".into());
        }
        self.trust.validate().map_err(wrap)
    }

    fn attack_active(&self, t: u64) -> bool {
        self.attack.kind != AttackKind::None && t > self.trust.warmup_rounds
    }
}

/// One aggregation attempt inside a round.
#[derive(Debug, Clone, PartialEq)]
pub struct Attempt {
    pub aggregator: NodeId,
    /// Ground truth: the proposed aggregate was produced by an attack.
    pub poisoned: bool,
    /// Absent outside audited mode.
    pub verdict: Option<Verdict>,
    /// The rejection was injected by `force_reject_rounds`.
    pub forced: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Approved,
    Rejected,
    Unaudited,
    /// No miner was eligible before any attempt.
    Exhausted,
}

impl Outcome {
    pub fn label(self) -> &'static str {
        match self {
            Outcome::Approved => "approved",
            Outcome::Rejected => "rejected",
            Outcome::Unaudited => "unaudited",
            Outcome::Exhausted => "exhausted",
        }
    }
}

impl FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "approved" => Outcome::Approved,
            "rejected" => Outcome::Rejected,
            "unaudited" => Outcome::Unaudited,
            "exhausted" => Outcome::Exhausted,
            other => return Err(Error::Decode(format!("unknown verdict `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u64,
    /// First aggregator picked this round.
    pub selected_aggregator: Option<NodeId>,
    /// The first pick belongs to the Byzantine set.
    pub aggregator_was_malicious: bool,
    /// Outcome of the last attempt. `Rejected` means the round failed.
    pub verdict: Outcome,
    pub hsic_value: Option<f64>,
    pub tau: Option<f64>,
    pub retries: u32,
    pub accuracy: f64,
    /// Miner scores used for selection, by node id. Empty outside audited mode.
    pub scores: Vec<(NodeId, f64)>,
    /// Author of the aggregate that was pushed, if any.
    pub final_aggregator: Option<NodeId>,
    pub attempts: Vec<Attempt>,
}

impl RoundRecord {
    pub fn failed(&self) -> bool {
        self.final_aggregator.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub final_accuracy: f64,
    /// Mean test accuracy over the rounds after warm-up.
    pub mean_accuracy: f64,
    /// Mean test accuracy over every round.
    pub mean_accuracy_all: f64,
    pub pse_precision: Option<f64>,
    pub paa_precision: Option<f64>,
    /// Share of audited poisoned attempts that were rejected.
    pub attack_rejection_rate: Option<f64>,
    pub rejections: u64,
    pub ban_events: u64,
    pub failed_rounds: u64,
    pub byzantine_nodes: Vec<u32>,
    pub chain_blocks: usize,
    pub tip_digest: String,
}

#[derive(Debug)]
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub summary: MetricsSummary,
    pub chain: Chain,
}

/// Share of post-warm-up rounds whose first pick was honest. `None` when no
/// round follows the warm-up.
pub fn compute_pse_precision(records: &[RoundRecord], warmup_rounds: u64) -> Option<f64> {
    let post: Vec<&RoundRecord> = records.iter().filter(|r| r.round > warmup_rounds).collect();
    if post.is_empty() {
        return None;
    }
    let good = post
        .iter()
        .filter(|r| r.selected_aggregator.is_some() && !r.aggregator_was_malicious)
        .count();
    Some(good as f64 / post.len() as f64)
}

/// Share of thresholded audit decisions that were right: poisoned proposals
/// rejected, honest ones approved. Injected rejections and bootstrap
/// approvals are not decisions.
pub fn compute_paa_precision(records: &[RoundRecord]) -> Option<f64> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for a in records.iter().flat_map(|r| &r.attempts) {
        let Some(v) = a.verdict else { continue };
        if a.forced || v.tau().is_none() {
            continue;
        }
        total += 1;
        if a.poisoned != v.is_approved() {
            correct += 1;
        }
    }
    (total > 0).then(|| correct as f64 / total as f64)
}

/// Rejected share of audited poisoned proposals.
pub fn attack_rejection_rate(records: &[RoundRecord]) -> Option<f64> {
    let audited: Vec<&Attempt> = records
        .iter()
        .flat_map(|r| &r.attempts)
        .filter(|a| a.poisoned && a.verdict.is_some() && !a.forced)
        .collect();
    if audited.is_empty() {
        return None;
    }
    let rejected = audited.iter().filter(|a| !a.verdict.unwrap().is_approved()).count();
    Some(rejected as f64 / audited.len() as f64)
}

struct Sim<'a> {
    cfg: &'a RunConfig,
    data: FederatedData,
    byzantine: BTreeSet<NodeId>,
    miners: Vec<NodeId>,
    states: NodeStates,
    chain: Chain,
    ban_events: u64,
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self> {
        let data = make_federated_data(cfg.seed, &cfg.data_spec())?;
        let byzantine = assign_byzantine(cfg.clients, cfg.attack.byzantine_ratio, cfg.seed);
        let miners: Vec<NodeId> = (0..cfg.miners as u32).map(NodeId).collect();
        let states = miners.iter().map(|&m| (m, NodeState::new(m, true))).collect();
        let registry = KeyRegistry::issue(
            derive_seed(cfg.seed, &[stream::AUTH]),
            (0..cfg.clients as u32).map(NodeId),
        );
        let mut chain = Chain::new(registry, cfg.miners);
        chain.push(
            NodeId::GENESIS,
            0,
            BlockKind::Aggregate,
            BlockBody::update(init_params(&cfg.model, cfg.seed)),
        )?;
        Ok(Self {
            cfg,
            data,
            byzantine,
            miners,
            states,
            chain,
            ban_events: 0,
        })
    }

    fn is_byzantine(&self, id: NodeId) -> bool {
        self.byzantine.contains(&id)
    }

    fn train_clients(&mut self, t: u64, global: &ParamVector) -> Result<()> {
        let cfg = self.cfg;
        let client_attack = cfg.attack_active(t) && cfg.attack.surface.client();
        for i in 0..cfg.clients {
            let id = NodeId(i as u32);
            let seed = derive_seed(cfg.seed, &[stream::CLIENT_TRAIN, t, i as u64]);
            let shard = &self.data.shards[i];
            let update = if client_attack && self.is_byzantine(id) {
                poisoned_model(&cfg.attack, global, shard, &cfg.model, seed, true)?
            } else {
                local_train(global, shard, &cfg.model, seed)
            };
            if !update.is_finite() {
                return Err(Error::NonFinite(i));
            }
            self.chain.push(id, t, BlockKind::Update, BlockBody::update(update))?;
        }
        Ok(())
    }

    /// What `node` would push as the round-`t` aggregate.
    fn proposal(&self, node: NodeId, t: u64, honest: &ParamVector) -> Result<(ParamVector, bool)> {
        let cfg = self.cfg;
        if cfg.attack_active(t) && cfg.attack.surface.aggregator() && self.is_byzantine(node) {
            let seed = derive_seed(cfg.seed, &[stream::AGGREGATOR_ATTACK, t, node.0 as u64]);
            let shard = &self.data.shards[node.0 as usize];
            let p = poisoned_model(&cfg.attack, honest, shard, &cfg.model, seed, false)?;
            if !p.is_finite() {
                return Err(Error::NonFinite(node.0 as usize));
            }
            Ok((p, true))
        } else {
            Ok((honest.clone(), false))
        }
    }

    fn uniform_miner(&self, t: u64, attempt: u64, eligible: &[NodeId]) -> Option<NodeId> {
        if eligible.is_empty() {
            return None;
        }
        let mut rng = rng_for(self.cfg.seed, &[stream::SELECTION, t, attempt]);
        Some(eligible[rng.random_range(0..eligible.len())])
    }

    fn honest_aggregate(&self, t: u64) -> Result<ParamVector> {
        let ups: Vec<&ParamVector> = self.chain.updates_for_round(t).into_iter().map(|(_, p)| p).collect();
        aggregate(&ups, &self.cfg.aggregator)
    }

    fn round(&mut self, t: u64, global: &ParamVector) -> Result<RoundRecord> {
        self.train_clients(t, global)?;
        let honest = self.honest_aggregate(t)?;
        let mut record = RoundRecord {
            round: t,
            selected_aggregator: None,
            aggregator_was_malicious: false,
            verdict: Outcome::Unaudited,
            hsic_value: None,
            tau: None,
            retries: 0,
            accuracy: 0.0,
            scores: Vec::new(),
            final_aggregator: None,
            attempts: Vec::new(),
        };
        match self.cfg.mode {
            Mode::Benign => {
                let node = (0..self.cfg.clients as u32)
                    .map(NodeId)
                    .find(|id| !self.is_byzantine(*id))
                    .ok_or_else(|| Error::Config("benign mode needs at least one honest node".into()))?;
                self.push_unaudited(&mut record, node, t, honest)?;
            }
            Mode::Unprotected => {
                let node = self.uniform_miner(t, 0, &self.miners.clone()).expect("k ≥ 1");
                let (p, poisoned) = self.proposal(node, t, &honest)?;
                record.attempts.push(Attempt {
                    aggregator: node,
                    poisoned,
                    verdict: None,
                    forced: false,
                });
                self.push_unaudited(&mut record, node, t, p)?;
            }
            Mode::Audited => self.audited_round(&mut record, t, &honest)?,
        }
        if let Some(first) = record.attempts.first().map(|a| a.aggregator).or(record.final_aggregator) {
            record.selected_aggregator = Some(first);
            record.aggregator_was_malicious = self.is_byzantine(first);
        }
        Ok(record)
    }

    fn push_unaudited(&mut self, record: &mut RoundRecord, node: NodeId, t: u64, params: ParamVector) -> Result<()> {
        self.chain.push(node, t, BlockKind::Aggregate, BlockBody::update(params))?;
        record.final_aggregator = Some(node);
        record.verdict = Outcome::Unaudited;
        Ok(())
    }

    fn audited_round(&mut self, record: &mut RoundRecord, t: u64, honest: &ParamVector) -> Result<()> {
        let cfg = self.cfg;
        let trust = &cfg.trust;
        let scores = pse_scores(&self.chain, &self.miners, t, trust);
        for (id, s) in &scores {
            if let Some(st) = self.states.get_mut(id) {
                st.score = *s;
            }
        }
        record.scores = scores.iter().map(|(k, v)| (*k, *v)).collect();
        let oldest = t.saturating_sub(trust.q as u64).max(1);
        let has_history = t > 1 && (oldest..t).any(|r| self.chain.aggregate_for_round(r).is_some());
        let forced_round = cfg.force_reject_rounds.contains(&t);

        record.verdict = Outcome::Exhausted;
        for attempt in 0..cfg.miners as u64 {
            let pick = if has_history {
                select_aggregator(&scores, &self.states, t).ok()
            } else {
                let eligible: Vec<NodeId> = self
                    .miners
                    .iter()
                    .copied()
                    .filter(|m| !self.states[m].is_banned(t))
                    .collect();
                self.uniform_miner(t, attempt, &eligible)
            };
            let Some(node) = pick else { break };
            let (proposal, poisoned) = self.proposal(node, t, honest)?;
            let mut verdict = paa_audit(&self.chain, &proposal, t, trust, &cfg.kernel, cfg.hsic_sample_cap)?;
            let forced = forced_round && attempt == 0;
            if forced {
                verdict = Verdict::Rejected {
                    hsic: verdict.hsic(),
                    tau: verdict.tau().unwrap_or(f64::INFINITY),
                };
            }
            record.attempts.push(Attempt {
                aggregator: node,
                poisoned,
                verdict: Some(verdict),
                forced,
            });
            record.hsic_value = Some(verdict.hsic());
            record.tau = verdict.tau().filter(|v| v.is_finite());
            match verdict {
                Verdict::Approved { hsic, .. } => {
                    record_hsic(&mut self.chain, node, t, proposal, hsic, Some(record.scores.clone()))?;
                    record.verdict = Outcome::Approved;
                    record.final_aggregator = Some(node);
                    break;
                }
                Verdict::Rejected { .. } => {
                    on_reject(&mut self.states, node, t, trust);
                    self.ban_events += 1;
                    record.verdict = Outcome::Rejected;
                }
            }
        }
        record.retries = record.attempts.len().saturating_sub(1) as u32;
        Ok(())
    }
}

/// Runs `cfg.rounds` rounds.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let mut sim = Sim::new(cfg)?;
    let mut global = sim.chain.aggregate_for_round(0).expect("genesis").0.clone();
    let mut records = Vec::with_capacity(cfg.rounds as usize);
    for t in 1..=cfg.rounds {
        let mut record = sim.round(t, &global)?;
        if let Some((agg, _)) = sim.chain.aggregate_for_round(t) {
            global = agg.clone();
        }
        record.accuracy = evaluate(&global, &sim.data.test, &cfg.model);
        records.push(record);
    }

    let post: Vec<f64> = records
        .iter()
        .filter(|r| r.round > cfg.trust.warmup_rounds)
        .map(|r| r.accuracy)
        .collect();
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    let all: Vec<f64> = records.iter().map(|r| r.accuracy).collect();
    let audited = cfg.mode == Mode::Audited;
    let summary = MetricsSummary {
        final_accuracy: records.last().map_or(f64::NAN, |r| r.accuracy),
        mean_accuracy: mean(&post),
        mean_accuracy_all: mean(&all),
        pse_precision: if audited {
            compute_pse_precision(&records, cfg.trust.warmup_rounds)
        } else {
            None
        },
        paa_precision: if audited { compute_paa_precision(&records) } else { None },
        attack_rejection_rate: if audited { attack_rejection_rate(&records) } else { None },
        rejections: records
            .iter()
            .flat_map(|r| &r.attempts)
            .filter(|a| a.verdict.is_some_and(|v| !v.is_approved()))
            .count() as u64,
        ban_events: sim.ban_events,
        failed_rounds: records.iter().filter(|r| r.failed()).count() as u64,
        byzantine_nodes: sim.byzantine.iter().map(|n| n.0).collect(),
        chain_blocks: sim.chain.len(),
        tip_digest: hex_digest(&sim.chain.tip_digest()),
    };
    Ok(RunOutput {
        records,
        summary,
        chain: sim.chain,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub attack: AttackKind,
    pub ratio: f64,
    pub mode: Mode,
    pub rep: u32,
    pub final_accuracy: Option<f64>,
    pub pse_precision: Option<f64>,
    pub paa_precision: Option<f64>,
    pub mean_accuracy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub attack: AttackKind,
    pub ratio: f64,
    pub mode: Mode,
    pub completed: u32,
    pub failed: u32,
    pub final_accuracy: Option<f64>,
    pub mean_accuracy: Option<f64>,
    pub pse_precision: Option<f64>,
    pub paa_precision: Option<f64>,
}

/// Seed of repetition `rep`. Shared by every mode, ratio and attack so runs
/// are paired.
pub fn rep_seed(base: u64, rep: u32) -> u64 {
    derive_seed(base, &[stream::SWEEP_CELL, rep as u64])
}

/// Cartesian product `attacks × ratios × modes × reps`. A failing run is
/// reported in its row and the sweep moves on.
pub fn sweep(base: &RunConfig, ratios: &[f64], attacks: &[AttackKind], modes: &[Mode], reps: u32) -> Vec<SweepRow> {
    sweep_with(base, ratios, attacks, modes, reps, |_| {})
}

/// [`sweep`] with a callback after every finished row.
pub fn sweep_with(
    base: &RunConfig,
    ratios: &[f64],
    attacks: &[AttackKind],
    modes: &[Mode],
    reps: u32,
    mut progress: impl FnMut(&SweepRow),
) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for &attack in attacks {
        for &ratio in ratios {
            for &mode in modes {
                for rep in 0..reps {
                    let mut cfg = base.clone();
                    cfg.seed = rep_seed(base.seed, rep);
                    cfg.attack.kind = attack;
                    cfg.attack.byzantine_ratio = ratio;
                    cfg.mode = mode;
                    let row = match run(&cfg) {
                        Ok(out) => SweepRow {
                            attack,
                            ratio,
                            mode,
                            rep,
                            final_accuracy: Some(out.summary.final_accuracy),
                            pse_precision: out.summary.pse_precision,
                            paa_precision: out.summary.paa_precision,
                            mean_accuracy: Some(out.summary.mean_accuracy),
                            error: None,
                        },
                        Err(e) => SweepRow {
                            attack,
                            ratio,
                            mode,
                            rep,
                            final_accuracy: None,
                            pse_precision: None,
                            paa_precision: None,
                            mean_accuracy: None,
                            error: Some(e.to_string()),
                        },
                    };
                    progress(&row);
                    rows.push(row);
                }
            }
        }
    }
    rows
}

/// Repetition averages per `(attack, ratio, mode)`, in first-seen order.
pub fn summarize_sweep(rows: &[SweepRow]) -> Vec<SweepCell> {
    let mut order: Vec<(AttackKind, u64, Mode)> = Vec::new();
    let mut groups: BTreeMap<(AttackKind, u64, Mode), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.attack, r.ratio.to_bits(), r.mode);
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_default().push(r);
    }
    let avg = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            SweepCell {
                attack: key.0,
                ratio: f64::from_bits(key.1),
                mode: key.2,
                completed: g.iter().filter(|r| r.error.is_none()).count() as u32,
                failed: g.iter().filter(|r| r.error.is_some()).count() as u32,
                final_accuracy: avg(g.iter().filter_map(|r| r.final_accuracy).collect()),
                mean_accuracy: avg(g.iter().filter_map(|r| r.mean_accuracy).collect()),
                pse_precision: avg(g.iter().filter_map(|r| r.pse_precision).collect()),
                paa_precision: avg(g.iter().filter_map(|r| r.paa_precision).collect()),
            }
        })
        .collect()
}
