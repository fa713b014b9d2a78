//! HTTP/JSON session API for live audits.
//!
//! Operators draw physical cards; each drawn card's ranking is posted to its
//! session and fed to the audit controller. Every accepted card persists a
//! controller snapshot, so a restarted server resumes its sessions.
//!
//! There is no authentication: run it on the auditor's workstation or a
//! trusted LAN.

mod error;
pub mod view;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::sync::{Mutex, RwLock};

use awaire::audit::{AuditConfig, AuditState, ContestHeader};
use awaire::contest::{Candidate, Contest, Ranking};
use awaire::{Eta0Policy, ExpansionPolicy};

pub use error::ApiError;
use view::{ConfigSpec, ContestSpec, CreateSession, ReportView, SessionView, SubmitBallot};

const SNAPSHOT_EXT: &str = "snapshot";

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Where session snapshots are written; `None` keeps sessions in memory.
    pub snapshot_dir: Option<PathBuf>,
    /// Contest used when a create request carries none.
    pub default_contest: Option<Contest>,
}

struct Session {
    state: AuditState,
    last_report: Option<ReportView>,
    created_ms: u64,
    updated_ms: u64,
}

struct Inner {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        AppState(Arc::new(Inner {
            config,
            sessions: RwLock::new(HashMap::new()),
        }))
    }

    /// Creates the state and resumes every session snapshot found in the
    /// snapshot directory (creating the directory if needed).
    pub async fn load(config: ServiceConfig) -> std::io::Result<Self> {
        let app = Self::new(config);
        let Some(dir) = app.0.config.snapshot_dir.clone() else {
            return Ok(app);
        };
        tokio::fs::create_dir_all(&dir).await?;
        let mut entries = tokio::fs::read_dir(&dir).await?;
        let mut sessions = app.0.sessions.write().await;
        while let Some(entry) = entries.next_entry().await? {
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some(SNAPSHOT_EXT) {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
                continue;
            };
            let bytes = tokio::fs::read(&path).await?;
            match AuditState::restore(&bytes) {
                Ok(state) => {
                    let modified = entry
                        .metadata()
                        .await?
                        .modified()
                        .ok()
                        .and_then(|m| m.duration_since(UNIX_EPOCH).ok())
                        .map(|d| d.as_millis() as u64)
                        .unwrap_or(0);
                    log::info!("resumed session {id} at draw {}", state.draws());
                    let session = Session {
                        state,
                        last_report: None,
                        created_ms: modified,
                        updated_ms: modified,
                    };
                    sessions.insert(id, Arc::new(Mutex::new(session)));
                }
                Err(e) => log::warn!("skipping {}: {e}", path.display()),
            }
        }
        drop(sessions);
        Ok(app)
    }

    async fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.0
            .sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    /// The current controller snapshot of session `id`.
    pub async fn snapshot(&self, id: &str) -> Option<Vec<u8>> {
        let session = self.session(id).await.ok()?;
        let guard = session.lock().await;
        Some(guard.state.snapshot())
    }

    async fn persist(&self, id: &str, state: &AuditState) -> Result<(), ApiError> {
        let Some(dir) = &self.0.config.snapshot_dir else {
            return Ok(());
        };
        write_atomically(dir, id, &state.snapshot())
            .await
            .map_err(|e| ApiError::internal(format!("persisting session {id}: {e}")))
    }
}

async fn write_atomically(dir: &Path, id: &str, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = dir.join(format!("{id}.{SNAPSHOT_EXT}.tmp"));
    tokio::fs::write(&tmp, bytes).await?;
    tokio::fs::rename(&tmp, dir.join(format!("{id}.{SNAPSHOT_EXT}"))).await
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/ballots", post(submit_ballot))
        .route("/sessions/{id}/escalate", post(escalate))
        .with_state(state)
}

/// Serves the API on `listener` until the process is stopped.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

fn header_from_spec(spec: &ContestSpec) -> Result<ContestHeader, ApiError> {
    let invalid = |e: awaire::contest::ContestError| ApiError::invalid("invalid_contest", e.to_string());
    let mut header = match &spec.ballots {
        Some(ballots) => {
            let contest = Contest::from_labels(
                spec.name.clone(),
                spec.candidates.clone(),
                ballots.iter().map(|b| (b.ranking.clone(), b.count)),
            )
            .map_err(invalid)?;
            let header = ContestHeader::from_contest(&contest);
            if let Some(b) = spec.total_cards {
                if b != header.total_cards {
                    return Err(ApiError::invalid(
                        "total_cards_mismatch",
                        format!("total_cards {b} but the ballots hold {}", header.total_cards),
                    ));
                }
            }
            header
        }
        None => {
            check_labels(&spec.candidates)?;
            let total_cards = spec
                .total_cards
                .ok_or_else(|| ApiError::invalid("missing_total_cards", "total_cards is required without ballots"))?;
            if spec.reported_winner.is_none() {
                return Err(ApiError::invalid(
                    "missing_reported_winner",
                    "reported_winner is required without ballots",
                ));
            }
            ContestHeader {
                name: spec.name.clone(),
                candidates: spec.candidates.clone(),
                total_cards,
                reported_winner: 0,
                last_round_margin: None,
                cvrs: None,
            }
        }
    };
    if let Some(label) = &spec.reported_winner {
        let winner = label_index(&header.candidates, label)
            .ok_or_else(|| ApiError::invalid("unknown_winner", format!("unknown candidate \"{label}\"")))?;
        header = header.with_reported_winner(winner);
    }
    if let Some(m) = spec.last_round_margin {
        header.last_round_margin = Some(m);
    }
    Ok(header)
}

fn check_labels(labels: &[String]) -> Result<(), ApiError> {
    if labels.len() > awaire::contest::MAX_CANDIDATES {
        return Err(ApiError::invalid(
            "invalid_contest",
            format!("at most {} candidates are supported", awaire::contest::MAX_CANDIDATES),
        ));
    }
    for (i, label) in labels.iter().enumerate() {
        if labels[..i].contains(label) {
            return Err(ApiError::invalid("invalid_contest", format!("duplicate candidate \"{label}\"")));
        }
    }
    Ok(())
}

fn label_index(labels: &[String], label: &str) -> Option<Candidate> {
    labels.iter().position(|l| l == label)
}

fn config_from_spec(spec: &ConfigSpec) -> Result<AuditConfig, ApiError> {
    let mut config = AuditConfig::default();
    if let Some(a) = spec.alpha {
        config.alpha = a;
    }
    if let Some(e) = &spec.eta0 {
        config.eta0 = e
            .parse::<Eta0Policy>()
            .map_err(|m| ApiError::invalid("bad_eta0", m.to_string()))?;
    }
    if let Some(d) = spec.d {
        config.d = d;
    }
    if let Some(p) = &spec.policy {
        config.policy = p
            .parse::<ExpansionPolicy>()
            .map_err(|m| ApiError::invalid("bad_policy", m.to_string()))?;
    }
    if let Some(b) = spec.abandonment {
        config.abandonment = b;
    }
    if let Some(b) = spec.parking {
        config.parking = b;
    }
    if let Some(c) = spec.frontier_cap {
        config.frontier_cap = c;
    }
    Ok(config)
}

fn ranking_from_labels(labels: &[String], ranking: &[String]) -> Result<Ranking, ApiError> {
    let mut out: Vec<Candidate> = Vec::with_capacity(ranking.len());
    for (position, label) in ranking.iter().enumerate() {
        let c = label_index(labels, label).ok_or_else(|| {
            ApiError::invalid(
                "unknown_candidate",
                format!("position {position}: unknown candidate \"{label}\""),
            )
        })?;
        if out.contains(&c) {
            return Err(ApiError::invalid(
                "duplicate_candidate",
                format!("position {position}: duplicate candidate \"{label}\""),
            ));
        }
        out.push(c);
    }
    Ok(out.into())
}

async fn create_session(
    State(app): State<AppState>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let Json(req) = body?;
    let header = match (&req.contest, &app.0.config.default_contest) {
        (Some(spec), _) => header_from_spec(spec)?,
        (None, Some(contest)) => ContestHeader::from_contest(contest),
        (None, None) => return Err(ApiError::invalid("missing_contest", "no contest given and no default configured")),
    };
    let config = config_from_spec(&req.config)?;
    let state = AuditState::start(header, config)?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    app.persist(&id, &state).await?;
    let now = now_ms();
    let view = view::session_view(&id, &state, None, now, now);
    let session = Session {
        state,
        last_report: None,
        created_ms: now,
        updated_ms: now,
    };
    app.0.sessions.write().await.insert(id.clone(), Arc::new(Mutex::new(session)));
    log::info!("created session {id}");
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionView>, ApiError> {
    let session = app.session(&id).await?;
    let s = session.lock().await;
    Ok(Json(view::session_view(
        &id,
        &s.state,
        s.last_report.clone(),
        s.created_ms,
        s.updated_ms,
    )))
}

async fn submit_ballot(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<SubmitBallot>, JsonRejection>,
) -> Result<Json<ReportView>, ApiError> {
    let session = app.session(&id).await?;
    let Json(req) = body?;
    let mut s = session.lock().await;
    if s.state.status().is_terminal() {
        return Err(ApiError::from(awaire::AuditError::Finished(s.state.status())));
    }
    let ranking = ranking_from_labels(&s.state.header().candidates, &req.ranking)?;
    // Work on a copy so a failed write leaves the session untouched.
    let mut next = s.state.clone();
    let report = next.process_ballot(ranking)?;
    app.persist(&id, &next).await?;
    let report = view::report_view(&next, &report);
    s.state = next;
    s.last_report = Some(report.clone());
    s.updated_ms = now_ms();
    Ok(Json(report))
}

async fn escalate(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionView>, ApiError> {
    let session = app.session(&id).await?;
    let mut s = session.lock().await;
    let mut next = s.state.clone();
    next.escalate()?;
    app.persist(&id, &next).await?;
    s.state = next;
    s.updated_ms = now_ms();
    Ok(Json(view::session_view(
        &id,
        &s.state,
        s.last_report.clone(),
        s.created_ms,
        s.updated_ms,
    )))
}
