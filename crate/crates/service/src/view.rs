//! Request and response bodies.

use serde::{Deserialize, Serialize};

use awaire::audit::{AuditState, AuditStatus, DrawReport};

/// Formats `x` with 12 significant digits in plain decimal notation.
pub fn decimal(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "NaN".into()
        } else if x > 0.0 {
            "Infinity".into()
        } else {
            "-Infinity".into()
        };
    }
    if x == 0.0 {
        return "0".into();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let places = (11 - magnitude).clamp(0, 60) as usize;
    let s = format!("{x:.places$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    /// Omitted when the server was started with a default contest.
    #[serde(default)]
    pub contest: Option<ContestSpec>,
    #[serde(default)]
    pub config: ConfigSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContestSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub candidates: Vec<String>,
    /// Cast vote records. When present they define the card count, the
    /// reported winner and last-round margin (unless given explicitly).
    #[serde(default)]
    pub ballots: Option<Vec<BallotSpec>>,
    #[serde(default)]
    pub total_cards: Option<u64>,
    #[serde(default)]
    pub reported_winner: Option<String>,
    #[serde(default)]
    pub last_round_margin: Option<f64>,
}

fn default_name() -> String {
    "contest".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallotSpec {
    pub ranking: Vec<String>,
    pub count: u64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigSpec {
    pub alpha: Option<f64>,
    /// `051`, `lrm` or `am`.
    pub eta0: Option<String>,
    pub d: Option<f64>,
    /// Expansion policy, e.g. `below:1,tight:1.6487`.
    pub policy: Option<String>,
    pub abandonment: Option<bool>,
    pub parking: Option<bool>,
    pub frontier_cap: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitBallot {
    /// Candidate labels, most preferred first. Empty for a blank card.
    pub ranking: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NodeRow {
    pub suffix: Vec<String>,
    /// `ln I`, 12 significant digits.
    pub log_i: String,
    /// `min(1, I * alpha)`.
    pub progress: String,
    pub score: String,
    pub watchlist: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReportView {
    pub t: u64,
    pub status: AuditStatus,
    pub frontier_size: usize,
    /// Smallest `min(1, I * alpha)` over the frontier; `1` when it is empty.
    pub min_progress: String,
    pub pruned: usize,
    pub expansion_attempts: u32,
    pub expansions: u32,
    pub abandoned: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EventView {
    pub t: u64,
    pub ranking: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SessionView {
    pub id: String,
    pub status: AuditStatus,
    pub escalated: bool,
    pub t: u64,
    pub total_cards: u64,
    pub contest: String,
    pub candidates: Vec<String>,
    pub reported_winner: String,
    pub alpha: String,
    pub frontier_size: usize,
    pub min_progress: String,
    /// Sorted by ascending score.
    pub frontier: Vec<NodeRow>,
    pub last_report: Option<ReportView>,
    pub events: Vec<EventView>,
    pub created_ms: u64,
    pub updated_ms: u64,
}

fn progress(log_i: f64, alpha: f64) -> f64 {
    (log_i + alpha.ln()).exp().min(1.0)
}

pub fn min_progress(state: &AuditState) -> f64 {
    let alpha = state.config().alpha;
    state
        .frontier()
        .nodes()
        .iter()
        .map(|n| progress(n.log_i, alpha))
        .fold(1.0, f64::min)
}

pub fn report_view(state: &AuditState, r: &DrawReport) -> ReportView {
    ReportView {
        t: r.t,
        status: r.status,
        frontier_size: r.frontier_size,
        min_progress: decimal(min_progress(state)),
        pruned: r.pruned,
        expansion_attempts: r.expansion_attempts,
        expansions: r.expansions,
        abandoned: r.abandoned,
    }
}

pub fn session_view(
    id: &str,
    state: &AuditState,
    last_report: Option<ReportView>,
    created_ms: u64,
    updated_ms: u64,
) -> SessionView {
    let header = state.header();
    let alpha = state.config().alpha;
    let frontier = state
        .frontier_view()
        .into_iter()
        .map(|n| NodeRow {
            suffix: n.suffix,
            log_i: decimal(n.log_i),
            progress: decimal(progress(n.log_i, alpha)),
            score: decimal(n.score),
            watchlist: n.watchlist,
        })
        .collect();
    let events = state
        .store()
        .history()
        .iter()
        .enumerate()
        .map(|(i, card)| EventView {
            t: i as u64 + 1,
            ranking: card.iter().map(|&c| header.candidates[c].clone()).collect(),
        })
        .collect();
    SessionView {
        id: id.to_string(),
        status: state.status(),
        escalated: state.escalated(),
        t: state.draws(),
        total_cards: header.total_cards,
        contest: header.name.clone(),
        candidates: header.candidates.clone(),
        reported_winner: header.candidates[header.reported_winner].clone(),
        alpha: decimal(alpha),
        frontier_size: state.frontier().len(),
        min_progress: decimal(min_progress(state)),
        frontier,
        last_report,
        events,
        created_ms,
        updated_ms,
    }
}
