//! HTTP front end for annotation studies.
//!
//! Each study persists to `<data_dir>/studies/<id>.ndjson`. On start-up every
//! log there is replayed, so a restarted server resumes exactly where the
//! previous one stopped.
//!
//! | method | path | body / query | response |
//! |---|---|---|---|
//! | POST | `/studies` | study config | `{study_id, materials}` |
//! | GET | `/studies/{id}/task` | `worker_id` | `{assignment_id, text, label_names, highlights}` |
//! | POST | `/studies/{id}/annotations` | `{assignment_id, worker_id, label_given, elapsed_ms}` | `{status}` |
//! | GET | `/studies/{id}/export` | | the study log |
//! | GET | `/healthz` | | `{status: "ok"}` |
//!
//! Failures answer `{status: "rejected", reason}` with a snake_case reason.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use itr_core::study::{
    prepare, Clock, FileSink, MaterialsReport, Span, Study, StudyConfig, StudyError, StudyItem,
    Submission,
};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("study {0:?} not found")]
    UnknownStudy(String),
    #[error(transparent)]
    Study(#[from] StudyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    pub fn reason(&self) -> &'static str {
        match self {
            ServiceError::UnknownStudy(_) => "unknown_study",
            ServiceError::Study(e) => e.reason(),
            ServiceError::Io(_) => "io",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownStudy(_) => StatusCode::NOT_FOUND,
            ServiceError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            ServiceError::Study(e) => match e {
                StudyError::InvalidConfig(_) | StudyError::EmptyWorkerId => StatusCode::BAD_REQUEST,
                StudyError::StudyComplete | StudyError::ExpiredAssignment(_) => StatusCode::GONE,
                StudyError::NoEligibleItems | StudyError::DuplicateSubmission(_) => {
                    StatusCode::CONFLICT
                }
                StudyError::UnknownAssignment(_) => StatusCode::NOT_FOUND,
                StudyError::WorkerMismatch(_) => StatusCode::FORBIDDEN,
                StudyError::InvalidLabel { .. }
                | StudyError::InvalidElapsed
                | StudyError::Materials(_) => StatusCode::UNPROCESSABLE_ENTITY,
                StudyError::CorruptLog { .. } | StudyError::Io(_) => {
                    StatusCode::INTERNAL_SERVER_ERROR
                }
            },
        }
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct Rejection {
    pub status: String,
    pub reason: String,
    pub message: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = Rejection {
            status: "rejected".into(),
            reason: self.reason().into(),
            message: self.to_string(),
        };
        (self.status(), Json(body)).into_response()
    }
}

/// All studies known to one server process.
pub struct Registry {
    data_dir: PathBuf,
    clock: Arc<dyn Clock>,
    studies: RwLock<HashMap<String, Arc<Study>>>,
}

impl Registry {
    /// Opens `data_dir`, replaying every study log found under `studies/`.
    /// A torn final line (no trailing newline) is cut off before replay.
    pub fn open(data_dir: impl Into<PathBuf>, clock: Arc<dyn Clock>) -> Result<Self, ServiceError> {
        let data_dir = data_dir.into();
        let dir = data_dir.join("studies");
        fs::create_dir_all(&dir)?;
        let mut studies = HashMap::new();
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ndjson"))
            .collect();
        paths.sort();
        for path in paths {
            let text = repair_torn_tail(&path)?;
            let study = Study::replay(
                &text,
                Box::new(FileSink::append_to(&path)?),
                Arc::clone(&clock),
            )?;
            log::info!("replayed study {} from {}", study.id(), path.display());
            studies.insert(study.id(), Arc::new(study));
        }
        Ok(Registry {
            data_dir,
            clock,
            studies: RwLock::new(studies),
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    fn log_path(&self, id: &str) -> PathBuf {
        self.data_dir.join("studies").join(format!("{id}.ndjson"))
    }

    /// Loads the config's materials (paths relative to the data directory)
    /// and starts a new study.
    pub fn create(&self, config: StudyConfig) -> Result<(String, MaterialsReport), ServiceError> {
        let prepared = prepare(&config, &self.data_dir)?;
        let label_names = prepared.model.label_names().to_vec();
        let id = self.create_with_items(config, label_names, prepared.items)?;
        Ok((id, prepared.report))
    }

    /// Starts a study over ready-made items.
    pub fn create_with_items(
        &self,
        config: StudyConfig,
        label_names: Vec<String>,
        items: Vec<StudyItem>,
    ) -> Result<String, ServiceError> {
        let id = uuid::Uuid::new_v4().to_string();
        let sink = FileSink::create(self.log_path(&id))?;
        let study = Study::create(
            id.clone(),
            config,
            label_names,
            items,
            Box::new(sink),
            Arc::clone(&self.clock),
        );
        let study = match study {
            Ok(s) => s,
            Err(e) => {
                let _ = fs::remove_file(self.log_path(&id));
                return Err(e.into());
            }
        };
        self.studies
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id.clone(), Arc::new(study));
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Result<Arc<Study>, ServiceError> {
        self.studies
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownStudy(id.to_string()))
    }

    pub fn study_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .studies
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }
}

fn repair_torn_tail(path: &Path) -> Result<String, ServiceError> {
    let text = fs::read_to_string(path)?;
    if text.is_empty() || text.ends_with('\n') {
        return Ok(text);
    }
    let keep = text.rfind('\n').map_or(0, |i| i + 1);
    log::warn!("{}: dropping torn final record", path.display());
    let mut f = fs::OpenOptions::new().write(true).open(path)?;
    f.set_len(keep as u64)?;
    f.flush()?;
    Ok(text[..keep].to_string())
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CreatedStudy {
    pub study_id: String,
    pub materials: MaterialsReport,
}

/// What an annotator client sees. The condition and any labels are withheld.
#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct TaskResponse {
    pub assignment_id: String,
    pub text: String,
    pub label_names: Vec<String>,
    pub highlights: Vec<Span>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct Accepted {
    pub status: String,
}

#[derive(Debug, Deserialize)]
struct TaskQuery {
    worker_id: Option<String>,
}

pub fn router(registry: Arc<Registry>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/studies", post(create_study))
        .route("/studies/{id}/task", get(next_task))
        .route("/studies/{id}/annotations", post(submit))
        .route("/studies/{id}/export", get(export))
        .with_state(registry)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    registry: Arc<Registry>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(registry))
        .with_graceful_shutdown(shutdown)
        .await
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn create_study(
    State(registry): State<Arc<Registry>>,
    Json(config): Json<StudyConfig>,
) -> Result<(StatusCode, Json<CreatedStudy>), ServiceError> {
    let (study_id, materials) = tokio::task::spawn_blocking(move || registry.create(config))
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e)))??;
    Ok((
        StatusCode::CREATED,
        Json(CreatedStudy {
            study_id,
            materials,
        }),
    ))
}

async fn next_task(
    State(registry): State<Arc<Registry>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<TaskQuery>,
) -> Result<Json<TaskResponse>, ServiceError> {
    let study = registry.get(&id)?;
    let worker_id = q.worker_id.unwrap_or_default();
    let a = study.next_assignment(&worker_id)?;
    let text = study
        .item(&a.doc_id)
        .map(|i| i.text)
        .expect("assigned documents are study items");
    Ok(Json(TaskResponse {
        assignment_id: a.assignment_id,
        text,
        label_names: study.label_names(),
        highlights: a.highlights,
    }))
}

async fn submit(
    State(registry): State<Arc<Registry>>,
    UrlPath(id): UrlPath<String>,
    Json(submission): Json<Submission>,
) -> Result<Json<Accepted>, ServiceError> {
    registry.get(&id)?.submit(&submission)?;
    Ok(Json(Accepted {
        status: "accepted".into(),
    }))
}

async fn export(
    State(registry): State<Arc<Registry>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Response, ServiceError> {
    let log = registry.get(&id)?.export();
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], log).into_response())
}
