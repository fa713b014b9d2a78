//! Ballots, contests, IRV tabulation and the combinatorial counts that go with
//! them.

use std::collections::HashMap;
use std::fmt;
use std::io::Read;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a candidate within its contest, in `0..k`.
pub type Candidate = usize;

/// A preference list on a single card, most preferred first.
pub type Ranking = Arc<[Candidate]>;

/// Largest number of candidates representable in a [`CandidateSet`].
pub const MAX_CANDIDATES: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContestError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("ballot {ballot}, position {position}: duplicate candidate \"{label}\"")]
    DuplicateCandidate {
        ballot: usize,
        position: usize,
        label: String,
    },
    #[error("ballot {ballot}, position {position}: unknown candidate \"{label}\"")]
    UnknownCandidate {
        ballot: usize,
        position: usize,
        label: String,
    },
    #[error("candidate {position}: duplicate label \"{label}\"")]
    DuplicateLabel { position: usize, label: String },
    #[error("ballot {ballot}: count must be positive")]
    ZeroCount { ballot: usize },
    #[error("contest has no candidates")]
    NoCandidates,
    #[error("contest has {0} candidates; at most {MAX_CANDIDATES} are supported")]
    TooManyCandidates(usize),
    #[error("contest has no ballot cards")]
    NoCards,
    #[error("remaining candidate set is empty")]
    EmptyRemaining,
    #[error("candidates must differ")]
    SameCandidate,
    #[error("need at least two candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("count overflows 128 bits for k = {0}")]
    Overflow(usize),
}

/// A set of candidates stored as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CandidateSet(u64);

impl CandidateSet {
    pub const EMPTY: CandidateSet = CandidateSet(0);

    /// All of `0..k`.
    pub fn all(k: usize) -> Self {
        debug_assert!(k <= MAX_CANDIDATES);
        if k == MAX_CANDIDATES {
            CandidateSet(u64::MAX)
        } else {
            CandidateSet((1u64 << k) - 1)
        }
    }

    pub fn from_bits(bits: u64) -> Self {
        CandidateSet(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn contains(self, c: Candidate) -> bool {
        self.0 >> c & 1 == 1
    }

    #[must_use]
    pub fn with(self, c: Candidate) -> Self {
        CandidateSet(self.0 | 1 << c)
    }

    #[must_use]
    pub fn without(self, c: Candidate) -> Self {
        CandidateSet(self.0 & !(1 << c))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Candidate> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let c = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(c)
            }
        })
    }
}

impl FromIterator<Candidate> for CandidateSet {
    fn from_iter<I: IntoIterator<Item = Candidate>>(iter: I) -> Self {
        iter.into_iter().fold(CandidateSet::EMPTY, CandidateSet::with)
    }
}

impl fmt::Debug for CandidateSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// The highest-ranked candidate of `ranking` that is still in `remaining`.
#[inline]
pub fn top_within(ranking: &[Candidate], remaining: CandidateSet) -> Option<Candidate> {
    ranking.iter().copied().find(|&c| remaining.contains(c))
}

/// A distinct preference list together with the number of cards showing it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ballot {
    pub ranking: Ranking,
    pub count: u64,
}

impl Ballot {
    pub fn new(ranking: impl Into<Vec<Candidate>>, count: u64) -> Self {
        Ballot {
            ranking: ranking.into().into(),
            count,
        }
    }
}

/// Checks that `ranking` names only candidates below `k`, each at most once.
pub fn validate_ranking(ranking: &[Candidate], k: usize) -> Result<(), RankingError> {
    let mut seen = CandidateSet::EMPTY;
    for (position, &c) in ranking.iter().enumerate() {
        if c >= k {
            return Err(RankingError::Unknown { position });
        }
        if seen.contains(c) {
            return Err(RankingError::Duplicate { position });
        }
        seen = seen.with(c);
    }
    Ok(())
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum RankingError {
    #[error("unknown candidate at position {position}")]
    Unknown { position: usize },
    #[error("duplicate candidate at position {position}")]
    Duplicate { position: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contest {
    name: String,
    candidates: Vec<String>,
    ballots: Vec<Ballot>,
    total_cards: u64,
}

#[derive(Deserialize)]
struct ContestFile {
    name: String,
    candidates: Vec<String>,
    ballots: Vec<BallotFile>,
}

#[derive(Deserialize)]
struct BallotFile {
    ranking: Vec<String>,
    count: u64,
}

#[derive(Serialize)]
struct ContestFileOut<'a> {
    name: &'a str,
    candidates: &'a [String],
    ballots: Vec<BallotFileOut<'a>>,
}

#[derive(Serialize)]
struct BallotFileOut<'a> {
    ranking: Vec<&'a str>,
    count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContestFormat {
    Json,
}

/// Reads a contest from `source`.
pub fn parse_contest<R: Read>(source: R, format: ContestFormat) -> Result<Contest, ContestError> {
    match format {
        ContestFormat::Json => {
            let file: ContestFile =
                serde_json::from_reader(source).map_err(|e| ContestError::Syntax {
                    line: e.line(),
                    column: e.column(),
                    message: e.to_string(),
                })?;
            Contest::from_labels(file.name, file.candidates, file.ballots.into_iter().map(|b| (b.ranking, b.count)))
        }
    }
}

impl Contest {
    /// Builds a contest from index-based ballots, validating every invariant.
    pub fn new(
        name: impl Into<String>,
        candidates: Vec<String>,
        ballots: Vec<Ballot>,
    ) -> Result<Self, ContestError> {
        let k = candidates.len();
        check_labels(&candidates)?;
        let mut total_cards = 0u64;
        for (ballot, b) in ballots.iter().enumerate() {
            if b.count == 0 {
                return Err(ContestError::ZeroCount { ballot });
            }
            validate_ranking(&b.ranking, k).map_err(|e| match e {
                RankingError::Unknown { position } => ContestError::UnknownCandidate {
                    ballot,
                    position,
                    label: b.ranking[position].to_string(),
                },
                RankingError::Duplicate { position } => ContestError::DuplicateCandidate {
                    ballot,
                    position,
                    label: candidates[b.ranking[position]].clone(),
                },
            })?;
            total_cards += b.count;
        }
        if total_cards == 0 {
            return Err(ContestError::NoCards);
        }
        Ok(Contest {
            name: name.into(),
            candidates,
            ballots,
            total_cards,
        })
    }

    /// Builds a contest whose rankings are given by candidate label.
    pub fn from_labels<I, S>(
        name: impl Into<String>,
        candidates: Vec<String>,
        ballots: I,
    ) -> Result<Self, ContestError>
    where
        I: IntoIterator<Item = (Vec<S>, u64)>,
        S: AsRef<str>,
    {
        check_labels(&candidates)?;
        let index: HashMap<&str, Candidate> = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        let mut parsed = Vec::new();
        for (ballot, (ranking, count)) in ballots.into_iter().enumerate() {
            let mut indices = Vec::with_capacity(ranking.len());
            let mut seen = CandidateSet::EMPTY;
            for (position, label) in ranking.iter().enumerate() {
                let label = label.as_ref();
                let &c = index
                    .get(label)
                    .ok_or_else(|| ContestError::UnknownCandidate {
                        ballot,
                        position,
                        label: label.to_string(),
                    })?;
                if seen.contains(c) {
                    return Err(ContestError::DuplicateCandidate {
                        ballot,
                        position,
                        label: label.to_string(),
                    });
                }
                seen = seen.with(c);
                indices.push(c);
            }
            parsed.push(Ballot::new(indices, count));
        }
        Contest::new(name, candidates, parsed)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn candidates(&self) -> &[String] {
        &self.candidates
    }

    pub fn num_candidates(&self) -> usize {
        self.candidates.len()
    }

    pub fn ballots(&self) -> &[Ballot] {
        &self.ballots
    }

    /// `B`, the number of ballot cards.
    pub fn total_cards(&self) -> u64 {
        self.total_cards
    }

    pub fn label(&self, c: Candidate) -> &str {
        &self.candidates[c]
    }

    pub fn candidate_index(&self, label: &str) -> Option<Candidate> {
        self.candidates.iter().position(|c| c == label)
    }

    pub fn all_candidates(&self) -> CandidateSet {
        CandidateSet::all(self.num_candidates())
    }

    /// One ranking per physical card, with multiplicities expanded.
    pub fn cards(&self) -> Vec<Ranking> {
        let mut cards = Vec::with_capacity(self.total_cards as usize);
        for b in &self.ballots {
            for _ in 0..b.count {
                cards.push(b.ranking.clone());
            }
        }
        cards
    }

    /// Resolves labels to a validated ranking.
    pub fn ranking_from_labels<S: AsRef<str>>(&self, labels: &[S]) -> Result<Ranking, ContestError> {
        let mut seen = CandidateSet::EMPTY;
        let mut out = Vec::with_capacity(labels.len());
        for (position, label) in labels.iter().enumerate() {
            let label = label.as_ref();
            let c = self
                .candidate_index(label)
                .ok_or_else(|| ContestError::UnknownCandidate {
                    ballot: 0,
                    position,
                    label: label.to_string(),
                })?;
            if seen.contains(c) {
                return Err(ContestError::DuplicateCandidate {
                    ballot: 0,
                    position,
                    label: label.to_string(),
                });
            }
            seen = seen.with(c);
            out.push(c);
        }
        Ok(out.into())
    }

    /// Serializes back to the contest JSON file format.
    pub fn to_json(&self) -> String {
        let out = ContestFileOut {
            name: &self.name,
            candidates: &self.candidates,
            ballots: self
                .ballots
                .iter()
                .map(|b| BallotFileOut {
                    ranking: b.ranking.iter().map(|&c| self.candidates[c].as_str()).collect(),
                    count: b.count,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&out).expect("contest serializes")
    }

    /// Credits each card to its top-ranked candidate within `remaining`.
    /// Returns per-candidate counts (indexed by candidate) and the exhausted count.
    pub fn tally_given_remaining(
        &self,
        remaining: CandidateSet,
    ) -> Result<(Vec<u64>, u64), ContestError> {
        if remaining.is_empty() {
            return Err(ContestError::EmptyRemaining);
        }
        let mut tallies = vec![0u64; self.num_candidates()];
        let mut exhausted = 0;
        for b in &self.ballots {
            match top_within(&b.ranking, remaining) {
                Some(c) => tallies[c] += b.count,
                None => exhausted += b.count,
            }
        }
        Ok((tallies, exhausted))
    }

    /// First preferences for `i`, and the cards on which `j` could ever
    /// receive a vote before `i` is eliminated.
    pub fn first_pref_and_potential(
        &self,
        i: Candidate,
        j: Candidate,
    ) -> Result<(u64, u64), ContestError> {
        if i == j {
            return Err(ContestError::SameCandidate);
        }
        let mut fp = 0;
        let mut pot = 0;
        for b in &self.ballots {
            if b.ranking.first() == Some(&i) {
                fp += b.count;
            }
            if top_within(&b.ranking, CandidateSet::EMPTY.with(i).with(j)) == Some(j) {
                pot += b.count;
            }
        }
        Ok((fp, pot))
    }
}

fn check_labels(candidates: &[String]) -> Result<(), ContestError> {
    if candidates.is_empty() {
        return Err(ContestError::NoCandidates);
    }
    if candidates.len() > MAX_CANDIDATES {
        return Err(ContestError::TooManyCandidates(candidates.len()));
    }
    for (position, label) in candidates.iter().enumerate() {
        if candidates[..position].contains(label) {
            return Err(ContestError::DuplicateLabel {
                position,
                label: label.clone(),
            });
        }
    }
    Ok(())
}

/// One round of an IRV count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub remaining: CandidateSet,
    /// Indexed by candidate; zero for candidates no longer remaining.
    pub tallies: Vec<u64>,
    pub exhausted: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tabulation {
    /// Every candidate, first eliminated first; the last entry is the winner.
    pub elimination_order: Vec<Candidate>,
    pub round_tallies: Vec<Round>,
    /// Winner's final-round tally minus the runner-up's. Zero when k = 1.
    pub last_round_margin_cards: u64,
}

impl Tabulation {
    pub fn winner(&self) -> Candidate {
        *self.elimination_order.last().expect("tabulation is never empty")
    }
}

/// Chooses which of several tied lowest candidates is eliminated.
pub trait TieBreak {
    /// `tied` is sorted ascending and has at least two entries.
    fn eliminate(&self, tied: &[Candidate], rounds_so_far: &[Round]) -> Candidate;
}

/// Eliminates the tied candidate with the lowest index.
#[derive(Debug, Clone, Copy, Default)]
pub struct LowestIndex;

impl TieBreak for LowestIndex {
    fn eliminate(&self, tied: &[Candidate], _: &[Round]) -> Candidate {
        tied[0]
    }
}

pub fn tabulate_irv(contest: &Contest) -> Tabulation {
    tabulate_irv_with(contest, &LowestIndex)
}

pub fn tabulate_irv_with(contest: &Contest, tie_break: &dyn TieBreak) -> Tabulation {
    let mut remaining = contest.all_candidates();
    let mut order = Vec::with_capacity(contest.num_candidates());
    let mut rounds: Vec<Round> = Vec::new();
    let mut last_round_margin_cards = 0;
    loop {
        let (tallies, exhausted) = contest
            .tally_given_remaining(remaining)
            .expect("remaining is never empty");
        if remaining.len() == 1 {
            rounds.push(Round {
                remaining,
                tallies,
                exhausted,
            });
            order.push(remaining.iter().next().unwrap());
            break;
        }
        let lowest = remaining.iter().map(|c| tallies[c]).min().unwrap();
        let tied: Vec<Candidate> = remaining.iter().filter(|&c| tallies[c] == lowest).collect();
        let eliminated = if tied.len() == 1 {
            tied[0]
        } else {
            tie_break.eliminate(&tied, &rounds)
        };
        if remaining.len() == 2 {
            let other = remaining.without(eliminated).iter().next().unwrap();
            last_round_margin_cards = tallies[other] - tallies[eliminated];
        }
        rounds.push(Round {
            remaining,
            tallies,
            exhausted,
        });
        order.push(eliminated);
        remaining = remaining.without(eliminated);
    }
    Tabulation {
        elimination_order: order,
        round_tallies: rounds,
        last_round_margin_cards,
    }
}

/// Diluted last-round margin: the final-round lead divided by `total_cards`.
pub fn last_round_margin(tab: &Tabulation, total_cards: u64) -> Result<f64, ContestError> {
    let k = tab.elimination_order.len();
    if k < 2 {
        return Err(ContestError::TooFewCandidates(k));
    }
    Ok(tab.last_round_margin_cards as f64 / total_cards as f64)
}

/// Number of elimination orders in which the reported winner does not win,
/// `k! - (k-1)!`.
pub fn alt_order_count(k: usize) -> Result<u128, ContestError> {
    if k < 2 {
        return Err(ContestError::TooFewCandidates(k));
    }
    let mut fact: u128 = 1;
    for n in 2..k as u128 {
        fact = fact.checked_mul(n).ok_or(ContestError::Overflow(k))?;
    }
    fact.checked_mul(k as u128 - 1).ok_or(ContestError::Overflow(k))
}
