//! Requirements (the atomic conditions an elimination order needs), their
//! assorters, and the requirement sets attached to elimination-order suffixes.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contest::{top_within, Candidate, CandidateSet, Contest};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RequirementError {
    #[error("candidate {0} already appears in the suffix")]
    CandidateInSuffix(Candidate),
    #[error("need at least two candidates, got {0}")]
    TooFewCandidates(usize),
}

/// An atomic condition on the true vote profile.
///
/// Ordering and hashing use the canonical key (kind, i, j, bitmask of S).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Requirement {
    /// `winner` has strictly more votes than `loser` when exactly
    /// `remaining` are still standing.
    #[serde(rename = "DB")]
    DirectlyBeats {
        winner: Candidate,
        loser: Candidate,
        remaining: CandidateSet,
    },
    /// `dominator` has no more first preferences than the number of cards
    /// that rank `dominated` above it (or rank `dominated` and omit it).
    #[serde(rename = "DND")]
    DoesNotDominate {
        dominator: Candidate,
        dominated: Candidate,
    },
}

impl Requirement {
    pub fn db(winner: Candidate, loser: Candidate, remaining: CandidateSet) -> Self {
        debug_assert!(winner != loser);
        debug_assert!(remaining.contains(winner) && remaining.contains(loser));
        Requirement::DirectlyBeats {
            winner,
            loser,
            remaining,
        }
    }

    pub fn dnd(dominator: Candidate, dominated: Candidate) -> Self {
        debug_assert!(dominator != dominated);
        Requirement::DoesNotDominate {
            dominator,
            dominated,
        }
    }

    /// Renders as `DB(i,j,{...})` or `DND(i,j)` using `labels`.
    pub fn display<'a>(&'a self, labels: &'a [String]) -> impl fmt::Display + 'a {
        Labelled { req: self, labels }
    }
}

struct Labelled<'a> {
    req: &'a Requirement,
    labels: &'a [String],
}

impl fmt::Display for Labelled<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = |c: Candidate| self.labels.get(c).map(String::as_str).unwrap_or("?");
        match *self.req {
            Requirement::DirectlyBeats {
                winner,
                loser,
                remaining,
            } => {
                write!(f, "DB({},{},{{", l(winner), l(loser))?;
                for (n, c) in remaining.iter().enumerate() {
                    if n > 0 {
                        f.write_str(",")?;
                    }
                    f.write_str(l(c))?;
                }
                f.write_str("})")
            }
            Requirement::DoesNotDominate {
                dominator,
                dominated,
            } => write!(f, "DND({},{})", l(dominator), l(dominated)),
        }
    }
}

impl fmt::Debug for Requirement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Requirement::DirectlyBeats {
                winner,
                loser,
                remaining,
            } => write!(f, "DB({winner},{loser},{remaining:?})"),
            Requirement::DoesNotDominate {
                dominator,
                dominated,
            } => write!(f, "DND({dominator},{dominated})"),
        }
    }
}

/// The value an assorter gives one card.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AssorterValue {
    Zero,
    Half,
    One,
}

impl AssorterValue {
    #[inline]
    pub fn as_f64(self) -> f64 {
        match self {
            AssorterValue::Zero => 0.0,
            AssorterValue::Half => 0.5,
            AssorterValue::One => 1.0,
        }
    }

    /// Twice the value, as an integer.
    #[inline]
    pub fn doubled(self) -> u64 {
        match self {
            AssorterValue::Zero => 0,
            AssorterValue::Half => 1,
            AssorterValue::One => 2,
        }
    }
}

/// Scores one card against `req`. A true requirement has population mean at
/// most 1/2, so large values are evidence against it.
#[inline]
pub fn assort(req: &Requirement, ranking: &[Candidate]) -> AssorterValue {
    match *req {
        Requirement::DirectlyBeats {
            winner,
            loser,
            remaining,
        } => match top_within(ranking, remaining) {
            Some(c) if c == loser => AssorterValue::One,
            Some(c) if c == winner => AssorterValue::Zero,
            _ => AssorterValue::Half,
        },
        Requirement::DoesNotDominate {
            dominator,
            dominated,
        } => {
            if ranking.first() == Some(&dominator) {
                return AssorterValue::One;
            }
            for &c in ranking {
                if c == dominated {
                    return AssorterValue::Zero;
                }
                if c == dominator {
                    break;
                }
            }
            AssorterValue::Half
        }
    }
}

/// Whether `req` holds on the full contest, computed from tallies.
pub fn requirement_true(req: &Requirement, contest: &Contest) -> bool {
    match *req {
        Requirement::DirectlyBeats {
            winner,
            loser,
            remaining,
        } => {
            let (tallies, _) = contest
                .tally_given_remaining(remaining)
                .expect("DB remaining set contains its candidates");
            tallies[winner] > tallies[loser]
        }
        Requirement::DoesNotDominate {
            dominator,
            dominated,
        } => {
            let (fp, pot) = contest
                .first_pref_and_potential(dominator, dominated)
                .expect("DND candidates differ");
            fp <= pot
        }
    }
}

/// An exact population mean of assorter values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssorterMean {
    pub twice_sum: u64,
    pub cards: u64,
}

impl AssorterMean {
    pub fn value(self) -> f64 {
        self.twice_sum as f64 / (2 * self.cards) as f64
    }

    /// Compares the mean with 1/2 exactly.
    pub fn cmp_half(self) -> Ordering {
        self.twice_sum.cmp(&self.cards)
    }
}

pub fn mean_assorter(req: &Requirement, contest: &Contest) -> AssorterMean {
    let twice_sum = contest
        .ballots()
        .iter()
        .map(|b| assort(req, &b.ranking).doubled() * b.count)
        .sum();
    AssorterMean {
        twice_sum,
        cards: contest.total_cards(),
    }
}

/// Requirements for the suffix `[..., c]`: nobody dominates `c`.
pub fn root_requirements(c: Candidate, all: CandidateSet) -> Vec<Requirement> {
    all.without(c).iter().map(|other| Requirement::dnd(other, c)).collect()
}

/// Requirements added when `suffix` (earliest-eliminated first, alternative
/// winner last) is extended by `new`, which is eliminated just before it.
pub fn extension_requirements(
    suffix: &[Candidate],
    new: Candidate,
    all: CandidateSet,
) -> Result<Vec<Requirement>, RequirementError> {
    let in_suffix: CandidateSet = suffix.iter().copied().collect();
    if in_suffix.contains(new) {
        return Err(RequirementError::CandidateInSuffix(new));
    }
    let unmentioned = all.bits() & !in_suffix.bits();
    let unmentioned = CandidateSet::from_bits(unmentioned).without(new);
    let remaining = in_suffix.with(new);
    let mut out = Vec::with_capacity(unmentioned.len() + suffix.len());
    out.extend(unmentioned.iter().map(|c| Requirement::dnd(c, new)));
    out.extend(suffix.iter().map(|&c| Requirement::db(c, new, remaining)));
    Ok(out)
}

/// `k(k-1)2^(k-2)`: the number of distinct DB requirements over `k`
/// candidates (DND requirements are not included).
pub fn requirement_count(k: usize) -> Result<u128, RequirementError> {
    if k < 2 {
        return Err(RequirementError::TooFewCandidates(k));
    }
    let k = k as u128;
    Ok((k * (k - 1)) << (k - 2))
}
