//! The frontier of elimination-order suffixes under test.
//!
//! Suffixes are stored earliest-eliminated first: `[c_l, ..., c_2, c_1]`,
//! where `c_1` is the alternative winner. Every alt-order ends with exactly
//! one frontier suffix or with a suffix that has already been pruned.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::contest::{Candidate, CandidateSet};
use crate::requirement::{extension_requirements, root_requirements};
use crate::store::{ReqId, RequirementStore, StoreError};

pub const DEFAULT_FRONTIER_CAP: usize = 1_000_000;

/// When to try expanding nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    /// One attempt, on the lowest-scoring node, after every `i`-th draw.
    Every(u64),
    /// An attempt on every node whose score is below `x`, after every draw.
    Below(f64),
}

/// Which expansion attempts go ahead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lookahead {
    /// Some child must score better than the node.
    Loose,
    /// Some child must score better than the node and above `y`.
    Tight(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionPolicy {
    pub trigger: Trigger,
    pub lookahead: Lookahead,
}

impl Default for ExpansionPolicy {
    fn default() -> Self {
        ExpansionPolicy {
            trigger: Trigger::Below(1.0),
            lookahead: Lookahead::Tight(0.5f64.exp()),
        }
    }
}

impl fmt::Display for ExpansionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.trigger {
            Trigger::Every(i) => write!(f, "every:{i}")?,
            Trigger::Below(x) => write!(f, "below:{x}")?,
        }
        match self.lookahead {
            Lookahead::Loose => write!(f, ",loose"),
            Lookahead::Tight(y) => write!(f, ",tight:{y}"),
        }
    }
}

impl FromStr for ExpansionPolicy {
    type Err = String;

    /// `every:<i>` or `below:<x>`, then `loose` or `tight:<y>`, comma separated.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut trigger = None;
        let mut lookahead = None;
        for part in s.split(',').map(str::trim) {
            let (key, value) = match part.split_once(':') {
                Some((k, v)) => (k, Some(v)),
                None => (part, None),
            };
            let number = |v: Option<&str>| -> Result<f64, String> {
                let v = v.ok_or_else(|| format!("{key} needs a value"))?;
                v.parse::<f64>().map_err(|e| format!("{key}:{v}: {e}"))
            };
            match key {
                "every" => {
                    let v = value.ok_or("every needs a value")?;
                    let i: u64 = v.parse().map_err(|e| format!("every:{v}: {e}"))?;
                    if i == 0 {
                        return Err("every:<i> needs i >= 1".into());
                    }
                    trigger = Some(Trigger::Every(i));
                }
                "below" => {
                    let x = number(value)?;
                    if !(x > 0.0) {
                        return Err("below:<x> needs x > 0".into());
                    }
                    trigger = Some(Trigger::Below(x));
                }
                "loose" if value.is_none() => lookahead = Some(Lookahead::Loose),
                "tight" => {
                    let y = number(value)?;
                    if !(y > 0.0) {
                        return Err("tight:<y> needs y > 0".into());
                    }
                    lookahead = Some(Lookahead::Tight(y));
                }
                _ => return Err(format!("unrecognised policy component {part:?}")),
            }
        }
        Ok(ExpansionPolicy {
            trigger: trigger.ok_or("policy needs every:<i> or below:<x>")?,
            lookahead: lookahead.ok_or("policy needs loose or tight:<y>")?,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Node {
    pub suffix: Vec<Candidate>,
    pub watchlist: Vec<ReqId>,
    /// `ln I`, the log intersection TSM.
    pub log_i: f64,
    pub born_at: u64,
    /// Some watched requirement is certainly false.
    pub refuted: bool,
}

impl Node {
    /// The alternative winner, `c_1`.
    pub fn winner(&self) -> Candidate {
        *self.suffix.last().expect("suffix is nonempty")
    }

    pub fn candidates(&self) -> CandidateSet {
        self.suffix.iter().copied().collect()
    }

    /// Multiplies `I` by the return of the largest (at the previous draw)
    /// non-abandoned base TSM; ties share the weight equally.
    pub fn step_intersection(&mut self, store: &RequirementStore) {
        let mut best = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let mut ties = 0u32;
        for &id in &self.watchlist {
            let e = store.entry(id);
            if e.is_abandoned() {
                continue;
            }
            if e.tsm.status() == crate::alpha::TsmStatus::ProvenFalse {
                self.refuted = true;
            }
            let ret = (e.tsm.log_m() - e.prev_log_m).exp();
            match e.prev_log_m.partial_cmp(&best) {
                Some(Ordering::Greater) => {
                    best = e.prev_log_m;
                    sum = ret;
                    ties = 1;
                }
                Some(Ordering::Equal) => {
                    sum += ret;
                    ties += 1;
                }
                _ => {}
            }
        }
        if ties > 0 {
            self.log_i += (sum / ties as f64).ln();
        }
    }

    /// Log of the best current base TSM on the watchlist, ignoring abandoned
    /// entries; `-inf` when everything is abandoned.
    pub fn score_log(&self, store: &RequirementStore) -> f64 {
        self.watchlist
            .iter()
            .map(|&id| store.entry(id))
            .filter(|e| !e.is_abandoned())
            .map(|e| e.tsm.score_log())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn score(&self, store: &RequirementStore) -> f64 {
        self.score_log(store).exp()
    }
}

/// Orders suffixes from the alternative winner outwards.
pub fn suffix_order(a: &[Candidate], b: &[Candidate]) -> Ordering {
    a.iter().rev().cmp(b.iter().rev())
}

/// Whether the complete elimination `order` ends with `suffix`.
pub fn suffix_covers(suffix: &[Candidate], order: &[Candidate]) -> bool {
    order.ends_with(suffix)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StepOutcome {
    pub attempts: u32,
    pub expansions: u32,
    pub children: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Frontier {
    nodes: Vec<Node>,
    policy: ExpansionPolicy,
    alpha: f64,
    cap: usize,
    num_candidates: usize,
    reported_winner: Candidate,
    pruned: Vec<Vec<Candidate>>,
    expansions: u64,
    capped: bool,
}

impl Frontier {
    /// One root node `[..., c]` per candidate other than the reported winner.
    pub fn new(
        num_candidates: usize,
        reported_winner: Candidate,
        policy: ExpansionPolicy,
        alpha: f64,
        cap: usize,
        store: &mut RequirementStore,
    ) -> Result<Self, StoreError> {
        let all = CandidateSet::all(num_candidates);
        let mut nodes = Vec::with_capacity(num_candidates.saturating_sub(1));
        for c in all.without(reported_winner).iter() {
            let mut watchlist = Vec::new();
            for req in root_requirements(c, all) {
                watchlist.push(store.request(req)?);
            }
            nodes.push(Node {
                suffix: vec![c],
                watchlist,
                log_i: 0.0,
                born_at: store.draws(),
                refuted: false,
            });
        }
        Ok(Frontier {
            nodes,
            policy,
            alpha,
            cap,
            num_candidates,
            reported_winner,
            pruned: Vec::new(),
            expansions: 0,
            capped: false,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn policy(&self) -> ExpansionPolicy {
        self.policy
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn reported_winner(&self) -> Candidate {
        self.reported_winner
    }

    pub fn num_candidates(&self) -> usize {
        self.num_candidates
    }

    /// Suffixes rejected so far.
    pub fn pruned(&self) -> &[Vec<Candidate>] {
        &self.pruned
    }

    pub fn expansions(&self) -> u64 {
        self.expansions
    }

    /// Whether an expansion was ever skipped for lack of room.
    pub fn hit_cap(&self) -> bool {
        self.capped
    }

    pub fn log_threshold(&self) -> f64 {
        (1.0 / self.alpha).ln()
    }

    pub fn step_intersections(&mut self, store: &RequirementStore) {
        for node in &mut self.nodes {
            node.step_intersection(store);
        }
    }

    /// Removes every node with `I >= 1/alpha` (or a refuted requirement) and
    /// releases its watchlist.
    pub fn prune(&mut self, store: &mut RequirementStore) -> Result<Vec<Node>, StoreError> {
        let threshold = self.log_threshold();
        let (removed, kept): (Vec<Node>, Vec<Node>) = std::mem::take(&mut self.nodes)
            .into_iter()
            .partition(|n| n.refuted || n.log_i >= threshold);
        self.nodes = kept;
        for node in &removed {
            for &id in &node.watchlist {
                store.release(id)?;
            }
            self.pruned.push(node.suffix.clone());
        }
        Ok(removed)
    }

    fn expandable(&self, node: &Node) -> bool {
        node.suffix.len() + 1 < self.num_candidates
    }

    /// Would-be log scores of each child of `node`, keyed by the new candidate.
    pub fn child_scores(
        &self,
        node: &Node,
        store: &mut RequirementStore,
    ) -> Result<Vec<(Candidate, f64)>, StoreError> {
        let all = CandidateSet::all(self.num_candidates);
        let parent = node.score_log(store);
        let unmentioned = CandidateSet::from_bits(all.bits() & !node.candidates().bits());
        let mut out = Vec::with_capacity(unmentioned.len());
        for c in unmentioned.iter() {
            let mut best = parent;
            for req in extension_requirements(&node.suffix, c, all).expect("c is not in the suffix") {
                let id = store.probe(req)?;
                let e = store.entry(id);
                if !e.is_abandoned() {
                    best = best.max(e.tsm.score_log());
                }
            }
            out.push((c, best));
        }
        Ok(out)
    }

    /// Replaces the node at `index` by its children, each inheriting `I`.
    pub fn expand(&mut self, index: usize, store: &mut RequirementStore) -> Result<usize, StoreError> {
        assert!(self.expandable(&self.nodes[index]), "cannot expand a complete order");
        let parent = self.nodes.swap_remove(index);
        let all = CandidateSet::all(self.num_candidates);
        let unmentioned = CandidateSet::from_bits(all.bits() & !parent.candidates().bits());
        let mut children = 0;
        for c in unmentioned.iter() {
            let mut watchlist = parent.watchlist.clone();
            for &id in &parent.watchlist {
                store.acquire(id)?;
            }
            for req in extension_requirements(&parent.suffix, c, all).expect("c is not in the suffix") {
                watchlist.push(store.request(req)?);
            }
            let mut suffix = Vec::with_capacity(parent.suffix.len() + 1);
            suffix.push(c);
            suffix.extend_from_slice(&parent.suffix);
            self.nodes.push(Node {
                suffix,
                watchlist,
                log_i: parent.log_i,
                born_at: store.draws(),
                refuted: false,
            });
            children += 1;
        }
        for &id in &parent.watchlist {
            store.release(id)?;
        }
        self.expansions += 1;
        Ok(children)
    }

    fn attempt(&mut self, index: usize, store: &mut RequirementStore) -> Result<Option<usize>, StoreError> {
        let node = &self.nodes[index];
        let parent = node.score_log(store);
        let children = self.num_candidates - node.suffix.len();
        let scores = self.child_scores(node, store)?;
        let bar = match self.policy.lookahead {
            Lookahead::Loose => parent,
            Lookahead::Tight(y) => parent.max(y.ln()),
        };
        if !scores.iter().any(|&(_, s)| s > parent && s > bar) {
            return Ok(None);
        }
        if self.nodes.len() - 1 + children > self.cap {
            self.capped = true;
            return Ok(None);
        }
        self.expand(index, store).map(Some)
    }

    /// Runs the expansion policy after draw `t`.
    pub fn policy_step(&mut self, store: &mut RequirementStore, t: u64) -> Result<StepOutcome, StoreError> {
        let mut outcome = StepOutcome::default();
        let mut candidates: Vec<(f64, Vec<Candidate>)> = self
            .nodes
            .iter()
            .filter(|n| self.expandable(n))
            .map(|n| (n.score_log(store), n.suffix.clone()))
            .filter(|(s, _)| *s > f64::NEG_INFINITY)
            .collect();
        let by_score = |a: &(f64, Vec<Candidate>), b: &(f64, Vec<Candidate>)| {
            a.0.total_cmp(&b.0).then_with(|| suffix_order(&a.1, &b.1))
        };
        match self.policy.trigger {
            Trigger::Every(i) => {
                if t == 0 || !t.is_multiple_of(i) {
                    return Ok(outcome);
                }
                candidates.sort_by(by_score);
                candidates.truncate(1);
            }
            Trigger::Below(x) => {
                let limit = x.ln();
                candidates.retain(|(s, _)| *s < limit);
                candidates.sort_by(by_score);
            }
        }
        for (_, suffix) in candidates {
            let index = self
                .nodes
                .iter()
                .position(|n| n.suffix == suffix)
                .expect("candidate nodes are still present");
            outcome.attempts += 1;
            if let Some(children) = self.attempt(index, store)? {
                outcome.expansions += 1;
                outcome.children += children as u32;
            }
        }
        Ok(outcome)
    }
}
