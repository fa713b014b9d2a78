//! The requirement database. Every base TSM lives here exactly once; nodes
//! refer to entries by [`ReqId`].

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alpha::{resolve_eta0, AlphaParams, BaseTsm, Eta0Policy, ReportedInfo, TsmError, TsmStatus};
use crate::contest::{Contest, Ranking};
use crate::requirement::{assort, Requirement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReqId(pub u32);

impl ReqId {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("release of {0:?} with no outstanding references")]
    ReleaseBelowZero(Requirement),
    #[error("sample history already holds all {0} cards")]
    HistoryFull(u64),
    #[error(transparent)]
    Tsm(#[from] TsmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lifecycle {
    Active,
    Parked,
    Abandoned,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreEntry {
    pub req: Requirement,
    pub tsm: BaseTsm,
    pub lifecycle: Lifecycle,
    pub parked_at: Option<u64>,
    pub refcount: u32,
    /// `ln M` before the most recent ingest; used for intersection returns.
    pub prev_log_m: f64,
    /// Whether this entry's implications have already been applied.
    implied: bool,
}

impl StoreEntry {
    pub fn is_abandoned(&self) -> bool {
        self.lifecycle == Lifecycle::Abandoned
    }
}

/// Chooses `eta0` for each requirement when it enters the store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Eta0Resolver {
    pub policy: Eta0Policy,
    pub d: f64,
    pub last_round_margin: Option<f64>,
    pub cvrs: Option<Arc<Contest>>,
}

impl Eta0Resolver {
    pub fn fixed(d: f64) -> Self {
        Eta0Resolver {
            policy: Eta0Policy::Fixed051,
            d,
            last_round_margin: None,
            cvrs: None,
        }
    }

    pub fn params_for(&self, req: &Requirement) -> Result<AlphaParams, TsmError> {
        let info = ReportedInfo {
            last_round_margin: self.last_round_margin,
            cvrs: self.cvrs.as_deref(),
        };
        AlphaParams::new(resolve_eta0(self.policy, req, info)?, self.d)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RequirementStore {
    entries: Vec<StoreEntry>,
    #[serde(skip)]
    index: HashMap<Requirement, ReqId>,
    history: Vec<Ranking>,
    total_cards: u64,
    resolver: Eta0Resolver,
    parking: bool,
    peak_active: usize,
}

/// One line of the diagnostic dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryDump {
    pub key: String,
    pub t: u64,
    pub log_m: f64,
    pub status: TsmStatus,
    pub lifecycle: Lifecycle,
    pub refcount: u32,
}

impl RequirementStore {
    pub fn new(total_cards: u64, resolver: Eta0Resolver) -> Self {
        RequirementStore {
            entries: Vec::new(),
            index: HashMap::new(),
            history: Vec::new(),
            total_cards,
            resolver,
            parking: true,
            peak_active: 0,
        }
    }

    /// With parking disabled, unwatched entries keep being updated.
    pub fn with_parking(mut self, parking: bool) -> Self {
        self.parking = parking;
        self
    }

    pub(crate) fn rebuild_index(&mut self) {
        self.index = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.req, ReqId(i as u32)))
            .collect();
    }

    pub fn draws(&self) -> u64 {
        self.history.len() as u64
    }

    pub fn total_cards(&self) -> u64 {
        self.total_cards
    }

    pub fn history(&self) -> &[Ranking] {
        &self.history
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ReqId) -> &StoreEntry {
        &self.entries[id.idx()]
    }

    pub fn entries(&self) -> impl Iterator<Item = (ReqId, &StoreEntry)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ReqId(i as u32), e))
    }

    pub fn id_of(&self, req: &Requirement) -> Option<ReqId> {
        self.index.get(req).copied()
    }

    pub fn active_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.lifecycle == Lifecycle::Active)
            .count()
    }

    pub fn peak_active(&self) -> usize {
        self.peak_active
    }

    fn insert(&mut self, req: Requirement, lifecycle: Lifecycle) -> Result<ReqId, StoreError> {
        let params = self.resolver.params_for(&req)?;
        let tsm = BaseTsm::new(params, self.total_cards)?;
        let id = ReqId(self.entries.len() as u32);
        self.entries.push(StoreEntry {
            req,
            tsm,
            lifecycle,
            parked_at: None,
            refcount: 0,
            prev_log_m: 0.0,
            implied: false,
        });
        self.index.insert(req, id);
        Ok(id)
    }

    /// Brings a non-abandoned entry's TSM up to the latest draw.
    fn catch_up(&mut self, id: ReqId) -> Result<(), StoreError> {
        let entry = &mut self.entries[id.idx()];
        if entry.is_abandoned() {
            return Ok(());
        }
        let start = entry.tsm.draws();
        if start < self.history.len() as u64 && entry.tsm.is_active() {
            let req = entry.req;
            let values = self.history[start as usize..].iter().map(|card| assort(&req, card));
            entry.tsm.replay_from(start, values)?;
            entry.prev_log_m = entry.tsm.log_m();
        }
        Ok(())
    }

    /// Adds a watcher for `req`, creating (and replaying) or unparking as needed.
    pub fn request(&mut self, req: Requirement) -> Result<ReqId, StoreError> {
        let id = self.probe(req)?;
        let entry = &mut self.entries[id.idx()];
        entry.refcount += 1;
        if entry.lifecycle == Lifecycle::Parked {
            entry.lifecycle = Lifecycle::Active;
            entry.parked_at = None;
        }
        Ok(id)
    }

    /// Adds a watcher to an entry that is already known to be present.
    pub fn acquire(&mut self, id: ReqId) -> Result<(), StoreError> {
        self.catch_up(id)?;
        let entry = &mut self.entries[id.idx()];
        entry.refcount += 1;
        if entry.lifecycle == Lifecycle::Parked {
            entry.lifecycle = Lifecycle::Active;
            entry.parked_at = None;
        }
        Ok(())
    }

    /// Current TSM for `req` without adding a watcher. Unwatched entries stay
    /// parked (when parking is enabled) and are caught up on the next call.
    pub fn probe(&mut self, req: Requirement) -> Result<ReqId, StoreError> {
        let id = match self.index.get(&req) {
            Some(&id) => id,
            None => {
                let lifecycle = if self.parking {
                    Lifecycle::Parked
                } else {
                    Lifecycle::Active
                };
                self.insert(req, lifecycle)?
            }
        };
        self.catch_up(id)?;
        let draws = self.draws();
        let entry = &mut self.entries[id.idx()];
        if entry.lifecycle == Lifecycle::Parked {
            entry.parked_at = Some(draws);
        }
        Ok(id)
    }

    pub fn release(&mut self, id: ReqId) -> Result<(), StoreError> {
        let draws = self.draws();
        let parking = self.parking;
        let entry = &mut self.entries[id.idx()];
        if entry.refcount == 0 {
            return Err(StoreError::ReleaseBelowZero(entry.req));
        }
        entry.refcount -= 1;
        if entry.refcount == 0 && parking && entry.lifecycle == Lifecycle::Active {
            entry.lifecycle = Lifecycle::Parked;
            entry.parked_at = Some(draws);
        }
        Ok(())
    }

    /// Appends a card to the history and updates every active entry.
    pub fn ingest(&mut self, card: Ranking) -> Result<(), StoreError> {
        if self.draws() >= self.total_cards {
            return Err(StoreError::HistoryFull(self.total_cards));
        }
        let mut active = 0;
        for entry in &mut self.entries {
            if entry.lifecycle != Lifecycle::Active {
                continue;
            }
            active += 1;
            entry.prev_log_m = entry.tsm.log_m();
            if entry.tsm.is_active() {
                entry.tsm.update(assort(&entry.req, &card))?;
            }
        }
        self.history.push(card);
        self.peak_active = self.peak_active.max(active);
        Ok(())
    }

    fn abandon(&mut self, req: Requirement, out: &mut Vec<ReqId>) -> Result<(), StoreError> {
        let id = match self.index.get(&req) {
            Some(&id) => id,
            None => {
                let id = self.insert(req, Lifecycle::Abandoned)?;
                out.push(id);
                return Ok(());
            }
        };
        let entry = &mut self.entries[id.idx()];
        if !entry.is_abandoned() {
            entry.lifecycle = Lifecycle::Abandoned;
            entry.parked_at = None;
            out.push(id);
        }
        Ok(())
    }

    /// Abandons requirements that the evidence indicates are true:
    /// a watched DB(i,j,S) at or above the threshold implies DB(j,i,S) and
    /// DND(i,j); a watched requirement proven true is abandoned outright.
    /// Returns the newly abandoned entries.
    pub fn apply_abandonment(&mut self, threshold: f64) -> Result<Vec<ReqId>, StoreError> {
        let log_threshold = threshold.ln();
        let mut out = Vec::new();
        let mut implied = Vec::new();
        for (i, entry) in self.entries.iter_mut().enumerate() {
            // Unwatched entries may be parked with stale values; only watched
            // ones are current in every storage mode.
            if entry.is_abandoned() || entry.refcount == 0 {
                continue;
            }
            if entry.tsm.status() == TsmStatus::ProvenTrue {
                entry.lifecycle = Lifecycle::Abandoned;
                entry.parked_at = None;
                out.push(ReqId(i as u32));
                continue;
            }
            if let Requirement::DirectlyBeats {
                winner,
                loser,
                remaining,
            } = entry.req
            {
                if !entry.implied && entry.tsm.score_log() >= log_threshold {
                    entry.implied = true;
                    implied.push(Requirement::db(loser, winner, remaining));
                    implied.push(Requirement::dnd(winner, loser));
                }
            }
        }
        for req in implied {
            self.abandon(req, &mut out)?;
        }
        Ok(out)
    }

    #[cfg(test)]
    pub(crate) fn set_for_test(&mut self, id: ReqId, prev_log_m: f64, log_m: f64) {
        let e = &mut self.entries[id.idx()];
        e.prev_log_m = prev_log_m;
        e.tsm.set_log_m_for_test(log_m);
    }

    /// One JSON-serializable line per entry.
    pub fn dump(&self, labels: &[String]) -> Vec<EntryDump> {
        self.entries
            .iter()
            .map(|e| EntryDump {
                key: e.req.display(labels).to_string(),
                t: e.tsm.draws(),
                log_m: e.tsm.log_m(),
                status: e.tsm.status(),
                lifecycle: e.lifecycle,
                refcount: e.refcount,
            })
            .collect()
    }
}
