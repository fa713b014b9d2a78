//! A single audit session: ingest a card, update the requirement store and
//! the frontier, then certify, continue or fall back to a full hand count.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::alpha::{Eta0Policy, DEFAULT_SHRINKAGE};
use crate::contest::{last_round_margin, tabulate_irv, validate_ranking, Candidate, Contest, RankingError, Ranking};
use crate::frontier::{suffix_order, ExpansionPolicy, Frontier, Node, StepOutcome, DEFAULT_FRONTIER_CAP};
use crate::store::{EntryDump, Eta0Resolver, RequirementStore, StoreError};

pub const SNAPSHOT_FORMAT: &str = "awaire-audit-snapshot";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AuditError {
    #[error("risk limit {0} must lie in (0, 1)")]
    BadAlpha(f64),
    #[error("need at least two candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("reported winner {0} is not a candidate")]
    UnknownWinner(Candidate),
    #[error("contest must contain at least one card")]
    NoCards,
    #[error("assorter-margin initial means require cast vote records")]
    MissingCvrs,
    #[error("last-round-margin initial means require a reported last-round margin")]
    MissingMargin,
    #[error("frontier cap must be at least 1")]
    BadCap,
    #[error("audit already finished: {0:?}")]
    Finished(AuditStatus),
    #[error("invalid ranking: {0}")]
    Ranking(#[from] RankingError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("not an audit snapshot: {0}")]
    Malformed(String),
    #[error("unsupported snapshot version {found} (expected {SNAPSHOT_VERSION})")]
    Version { found: u32 },
    #[error("snapshot checksum mismatch")]
    Checksum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub alpha: f64,
    pub eta0: Eta0Policy,
    pub d: f64,
    pub policy: ExpansionPolicy,
    pub abandonment: bool,
    pub parking: bool,
    pub frontier_cap: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            alpha: 0.05,
            eta0: Eta0Policy::Fixed051,
            d: DEFAULT_SHRINKAGE,
            policy: ExpansionPolicy::default(),
            abandonment: true,
            parking: true,
            frontier_cap: DEFAULT_FRONTIER_CAP,
        }
    }
}

/// What the audit knows about the contest before sampling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContestHeader {
    pub name: String,
    pub candidates: Vec<String>,
    pub total_cards: u64,
    pub reported_winner: Candidate,
    /// Reported diluted last-round margin, if a tabulation was reported.
    pub last_round_margin: Option<f64>,
    pub cvrs: Option<Arc<Contest>>,
}

impl ContestHeader {
    /// Treats `contest` as accurate cast vote records and reports its IRV
    /// winner and last-round margin.
    pub fn from_contest(contest: &Contest) -> Self {
        let tab = tabulate_irv(contest);
        ContestHeader {
            name: contest.name().to_string(),
            candidates: contest.candidates().to_vec(),
            total_cards: contest.total_cards(),
            reported_winner: tab.winner(),
            last_round_margin: last_round_margin(&tab, contest.total_cards()).ok(),
            cvrs: Some(Arc::new(contest.clone())),
        }
    }

    #[must_use]
    pub fn with_reported_winner(mut self, winner: Candidate) -> Self {
        self.reported_winner = winner;
        self
    }

    pub fn num_candidates(&self) -> usize {
        self.candidates.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditStatus {
    Running,
    Certified,
    FullHandCount,
}

impl AuditStatus {
    pub fn is_terminal(self) -> bool {
        self != AuditStatus::Running
    }
}

/// Summary of one processed card.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawReport {
    pub t: u64,
    pub status: AuditStatus,
    pub frontier_size: usize,
    /// `ln I` range over the frontier after pruning; `None` when empty.
    pub min_log_i: Option<f64>,
    pub max_log_i: Option<f64>,
    pub pruned: usize,
    pub expansion_attempts: u32,
    pub expansions: u32,
    pub abandoned: usize,
    pub active_requirements: usize,
    pub stored_requirements: usize,
}

/// One row of the frontier view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeView {
    pub suffix: Vec<String>,
    pub log_i: f64,
    pub score: f64,
    pub watchlist: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditState {
    config: AuditConfig,
    header: ContestHeader,
    store: RequirementStore,
    frontier: Frontier,
    status: AuditStatus,
    escalated: bool,
}

#[derive(Serialize, Deserialize)]
struct SnapshotHeader {
    format: String,
    version: u32,
    sha256: String,
}

impl AuditState {
    pub fn start(header: ContestHeader, config: AuditConfig) -> Result<Self, AuditError> {
        let k = header.num_candidates();
        if !(config.alpha > 0.0 && config.alpha < 1.0) {
            return Err(AuditError::BadAlpha(config.alpha));
        }
        if k < 2 {
            return Err(AuditError::TooFewCandidates(k));
        }
        if header.reported_winner >= k {
            return Err(AuditError::UnknownWinner(header.reported_winner));
        }
        if header.total_cards == 0 {
            return Err(AuditError::NoCards);
        }
        if config.frontier_cap == 0 {
            return Err(AuditError::BadCap);
        }
        match config.eta0 {
            Eta0Policy::Am if header.cvrs.is_none() => return Err(AuditError::MissingCvrs),
            Eta0Policy::Lrm if header.last_round_margin.is_none() => return Err(AuditError::MissingMargin),
            _ => {}
        }
        let resolver = Eta0Resolver {
            policy: config.eta0,
            d: config.d,
            last_round_margin: header.last_round_margin,
            cvrs: header.cvrs.clone(),
        };
        let mut store = RequirementStore::new(header.total_cards, resolver).with_parking(config.parking);
        let frontier = Frontier::new(
            k,
            header.reported_winner,
            config.policy,
            config.alpha,
            config.frontier_cap,
            &mut store,
        )?;
        Ok(AuditState {
            config,
            header,
            store,
            frontier,
            status: AuditStatus::Running,
            escalated: false,
        })
    }

    pub fn config(&self) -> &AuditConfig {
        &self.config
    }

    pub fn header(&self) -> &ContestHeader {
        &self.header
    }

    pub fn store(&self) -> &RequirementStore {
        &self.store
    }

    pub fn frontier(&self) -> &Frontier {
        &self.frontier
    }

    pub fn status(&self) -> AuditStatus {
        self.status
    }

    pub fn escalated(&self) -> bool {
        self.escalated
    }

    /// Cards drawn so far.
    pub fn draws(&self) -> u64 {
        self.store.draws()
    }

    /// Processes the next sampled card.
    pub fn process_ballot(&mut self, card: Ranking) -> Result<DrawReport, AuditError> {
        if self.status.is_terminal() {
            return Err(AuditError::Finished(self.status));
        }
        validate_ranking(&card, self.header.num_candidates())?;
        self.store.ingest(card)?;
        let t = self.store.draws();

        // Weights for this draw were fixed by the previous draw, so abandonment
        // decided now takes effect from the next draw.
        self.frontier.step_intersections(&self.store);
        let abandoned = if self.config.abandonment {
            self.store.apply_abandonment(1.0 / self.config.alpha)?.len()
        } else {
            0
        };
        let pruned = self.frontier.prune(&mut self.store)?.len();

        let mut step = StepOutcome::default();
        if self.frontier.is_empty() {
            self.status = AuditStatus::Certified;
        } else if t >= self.header.total_cards {
            self.status = AuditStatus::FullHandCount;
        } else {
            step = self.frontier.policy_step(&mut self.store, t)?;
        }

        let (min_log_i, max_log_i) = self.log_i_range();
        Ok(DrawReport {
            t,
            status: self.status,
            frontier_size: self.frontier.len(),
            min_log_i,
            max_log_i,
            pruned,
            expansion_attempts: step.attempts,
            expansions: step.expansions,
            abandoned,
            active_requirements: self.store.active_count(),
            stored_requirements: self.store.len(),
        })
    }

    /// Operators may stop sampling and count every card by hand.
    pub fn escalate(&mut self) -> Result<AuditStatus, AuditError> {
        if self.status.is_terminal() {
            return Err(AuditError::Finished(self.status));
        }
        self.status = AuditStatus::FullHandCount;
        self.escalated = true;
        Ok(self.status)
    }

    fn log_i_range(&self) -> (Option<f64>, Option<f64>) {
        let mut it = self.frontier.nodes().iter().map(|n| n.log_i);
        let first = it.next();
        match first {
            None => (None, None),
            Some(f) => {
                let (lo, hi) = it.fold((f, f), |(lo, hi), x| (lo.min(x), hi.max(x)));
                (Some(lo), Some(hi))
            }
        }
    }

    /// The frontier sorted by ascending score, then suffix.
    pub fn frontier_view(&self) -> Vec<NodeView> {
        let labels = &self.header.candidates;
        let mut rows: Vec<(f64, &Node)> = self
            .frontier
            .nodes()
            .iter()
            .map(|n| (n.score_log(&self.store), n))
            .collect();
        rows.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| suffix_order(&a.1.suffix, &b.1.suffix))
        });
        rows.into_iter()
            .map(|(score_log, n)| NodeView {
                suffix: n.suffix.iter().map(|&c| labels[c].clone()).collect(),
                log_i: n.log_i,
                score: score_log.exp(),
                watchlist: n.watchlist.len(),
            })
            .collect()
    }

    pub fn store_dump(&self) -> Vec<EntryDump> {
        self.store.dump(&self.header.candidates)
    }

    /// A JSON header line (format, version, SHA-256 of the body) followed by
    /// the JSON-encoded state.
    pub fn snapshot(&self) -> Vec<u8> {
        let state = serde_json::to_vec(self).expect("audit state serializes");
        let header = SnapshotHeader {
            format: SNAPSHOT_FORMAT.to_string(),
            version: SNAPSHOT_VERSION,
            sha256: hex::encode(Sha256::digest(&state)),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        out.extend_from_slice(&state);
        out
    }

    pub fn restore(bytes: &[u8]) -> Result<Self, SnapshotError> {
        let split = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| SnapshotError::Malformed("missing header line".into()))?;
        let header: SnapshotHeader = serde_json::from_slice(&bytes[..split])
            .map_err(|e| SnapshotError::Malformed(e.to_string()))?;
        if header.format != SNAPSHOT_FORMAT {
            return Err(SnapshotError::Malformed(format!("format {:?}", header.format)));
        }
        if header.version != SNAPSHOT_VERSION {
            return Err(SnapshotError::Version {
                found: header.version,
            });
        }
        let body = &bytes[split + 1..];
        if hex::encode(Sha256::digest(body)) != header.sha256 {
            return Err(SnapshotError::Checksum);
        }
        let mut state: AuditState =
            serde_json::from_slice(body).map_err(|e| SnapshotError::Malformed(e.to_string()))?;
        state.store.rebuild_index();
        Ok(state)
    }
}

/// Starts an audit of `header` under `config`.
pub fn start_audit(header: ContestHeader, config: AuditConfig) -> Result<AuditState, AuditError> {
    AuditState::start(header, config)
}
