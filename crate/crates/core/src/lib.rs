//! Risk-limiting audits of instant-runoff (IRV) contests.
//!
//! The audit tests suffixes of alternative elimination orders (orders in which
//! the reported winner loses) with intersection test supermartingales built
//! from per-requirement ALPHA base TSMs. Suffixes are expanded lazily and
//! pruned once their intersection TSM reaches `1/alpha`; the reported winner
//! is certified when none remain.
//!
//! * [`contest`]: ballots, IRV tabulation, counts
//! * [`requirement`]: DB / DND requirements and their assorters
//! * [`alpha`]: the base TSM
//! * [`store`]: the requirement database
//! * [`frontier`]: suffix nodes, weighting, pruning and expansion
//! * [`audit`]: the per-session state machine
//! * [`sim`]: batch simulation

pub mod alpha;
pub mod audit;
pub mod contest;
pub mod frontier;
pub mod requirement;
pub mod sim;
pub mod store;

pub use alpha::{AlphaParams, BaseTsm, Eta0Policy, TsmStatus};
pub use audit::{start_audit, AuditConfig, AuditError, AuditState, AuditStatus, ContestHeader, DrawReport};
pub use contest::{
    alt_order_count, last_round_margin, parse_contest, tabulate_irv, Ballot, Candidate, CandidateSet, Contest,
    ContestFormat, Ranking, Tabulation,
};
pub use frontier::{ExpansionPolicy, Frontier, Lookahead, Node, Trigger};
pub use requirement::{assort, requirement_count, AssorterValue, Requirement};
pub use store::{ReqId, RequirementStore};
