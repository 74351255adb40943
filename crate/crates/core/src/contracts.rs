//! Aggregator trust contracts: drift-score pre-selection, post-aggregation
//! HSIC audit, HSIC recording and ban bookkeeping.
//!
//! Round indexing: the round-`t` aggregate is built from the round-`t`
//! updates, which were trained from the round-`t−1` aggregate. A node's
//! score pairs each of its updates with the aggregate that update fed into.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsic::{hsic, threshold, KernelSpec};
use crate::ledger::{BlockBody, BlockKind, Chain, Digest, NodeId};
use crate::param_math::{cosine_similarity, elementwise_median};
use crate::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustParams {
    /// Window length in rounds, for both scoring and the HSIC threshold.
    pub q: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub ban_duration: u64,
    pub warmup_rounds: u64,
}

impl Default for TrustParams {
    fn default() -> Self {
        Self {
            q: 15,
            alpha: 0.9,
            lambda: 0.5,
            ban_duration: 15,
            warmup_rounds: 50,
        }
    }
}

impl TrustParams {
    /// Hard errors for unusable values; returns soft warnings otherwise.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.q == 0 {
            return Err(Error::InvalidParameter("q must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        let mut warnings = Vec::new();
        if self.warmup_rounds < self.q as u64 {
            warnings.push(format!(
                "warmup_rounds ({}) is shorter than q ({}): early audits run on a partial window",
                self.warmup_rounds, self.q
            ));
        }
        Ok(warnings)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub node_id: NodeId,
    pub score: f64,
    /// First round at which the node is selectable again.
    pub banned_until: Option<u64>,
    pub is_miner: bool,
}

impl NodeState {
    pub fn new(node_id: NodeId, is_miner: bool) -> Self {
        Self {
            node_id,
            score: 0.0,
            banned_until: None,
            is_miner,
        }
    }

    pub fn is_banned(&self, t: u64) -> bool {
        self.banned_until.is_some_and(|until| t < until)
    }
}

pub type NodeStates = BTreeMap<NodeId, NodeState>;

/// Decayed drift score of each miner for selecting the round-`t` aggregator:
/// `Σ α^(t−1−r) · cos(update_i[r], aggregate[r])` over `r ∈ [t−q, t−1]`.
/// Terms with a missing update or aggregate, or a zero-norm vector, add 0.
pub fn pse_scores(chain: &Chain, miners: &[NodeId], t: u64, params: &TrustParams) -> BTreeMap<NodeId, f64> {
    let newest = t.saturating_sub(1);
    let oldest = t.saturating_sub(params.q as u64).max(1);
    let mut scores: BTreeMap<NodeId, f64> = miners.iter().map(|&m| (m, 0.0)).collect();
    if newest < oldest {
        return scores;
    }
    for r in oldest..=newest {
        let Some((agg, _)) = chain.aggregate_for_round(r) else {
            continue;
        };
        let weight = params.alpha.powi((newest - r) as i32);
        for (node, s) in scores.iter_mut() {
            if let Some(u) = chain.update_of(*node, r) {
                *s += weight * cosine_similarity(u, agg).unwrap_or(0.0);
            }
        }
    }
    scores
}

/// The unbanned miner with the highest score; ties go to the smaller id.
pub fn select_aggregator(scores: &BTreeMap<NodeId, f64>, states: &NodeStates, t: u64) -> Result<NodeId> {
    let mut best: Option<(NodeId, f64)> = None;
    for (&id, &s) in scores {
        let eligible = states.get(&id).is_some_and(|st| st.is_miner && !st.is_banned(t));
        if !eligible {
            continue;
        }
        // ascending id order: strict > keeps the first of equal scores
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((id, s));
        }
    }
    best.map(|(id, _)| id).ok_or(Error::MinersExhausted { round: t })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Verdict {
    /// `tau` is absent when the audit ran in bootstrap mode.
    Approved { hsic: f64, tau: Option<f64> },
    Rejected { hsic: f64, tau: f64 },
}

impl Verdict {
    pub fn hsic(&self) -> f64 {
        match *self {
            Verdict::Approved { hsic, .. } | Verdict::Rejected { hsic, .. } => hsic,
        }
    }

    pub fn tau(&self) -> Option<f64> {
        match *self {
            Verdict::Approved { tau, .. } => tau,
            Verdict::Rejected { tau, .. } => Some(tau),
        }
    }

    pub fn is_approved(&self) -> bool {
        matches!(self, Verdict::Approved { .. })
    }

    pub fn label(&self) -> &'static str {
        if self.is_approved() {
            "approved"
        } else {
            "rejected"
        }
    }
}

/// Audits `proposed` against the coordinate-wise median of the round-`t`
/// updates. The threshold comes from the HSIC values recorded over the
/// previous `q` rounds. During warm-up, or while that window holds fewer
/// than two values, everything is approved.
pub fn paa_audit(
    chain: &Chain,
    proposed: &ParamVector,
    t: u64,
    params: &TrustParams,
    kernel: &KernelSpec,
    sample_cap: usize,
) -> Result<Verdict> {
    let updates = chain.updates_for_round(t);
    if updates.is_empty() {
        return Err(Error::NoUpdates(t));
    }
    let refs: Vec<&ParamVector> = updates.into_iter().map(|(_, p)| p).collect();
    let median = elementwise_median(&refs)?;
    let v = hsic(&median, proposed, kernel, sample_cap)?;
    let window = chain.hsic_before_round(t, params.q);
    if t <= params.warmup_rounds || window.len() < 2 {
        return Ok(Verdict::Approved { hsic: v, tau: None });
    }
    let tau = threshold(&window, params.lambda)?;
    Ok(if v >= tau {
        Verdict::Approved { hsic: v, tau: Some(tau) }
    } else {
        Verdict::Rejected { hsic: v, tau }
    })
}

/// Bans `c_a` until round `t + ban_duration`.
pub fn on_reject(states: &mut NodeStates, c_a: NodeId, t: u64, params: &TrustParams) {
    let st = states.entry(c_a).or_insert_with(|| NodeState::new(c_a, true));
    st.banned_until = Some(t + params.ban_duration);
}

/// Pushes the approved round-`t` aggregate with its audit value and the
/// selection scores.
pub fn record_hsic(
    chain: &mut Chain,
    author: NodeId,
    t: u64,
    aggregate: ParamVector,
    v: f64,
    scores: Option<Vec<(NodeId, f64)>>,
) -> Result<Digest> {
    chain.push(
        author,
        t,
        BlockKind::Aggregate,
        BlockBody {
            params: aggregate,
            hsic_value: Some(v),
            scores,
        },
    )
}
