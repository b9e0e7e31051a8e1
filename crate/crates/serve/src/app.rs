use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::header;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use upvtag::LabelId;

use crate::error::ServeError;
use crate::session::{Action, Decision, DocumentSession, Suggestion};
use crate::store::DocumentStore;

pub struct AppState {
    pub store: DocumentStore,
}

impl AppState {
    pub fn new(store: DocumentStore) -> Arc<AppState> {
        Arc::new(AppState { store })
    }
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    variant: String,
    labels: usize,
}

#[derive(Serialize)]
struct T3View {
    id: LabelId,
    name: String,
    description: String,
}

#[derive(Serialize)]
struct T2View {
    id: LabelId,
    name: String,
    labels: Vec<T3View>,
}

#[derive(Serialize)]
struct T1View {
    id: LabelId,
    name: String,
    groups: Vec<T2View>,
}

#[derive(Deserialize)]
struct NewDocument {
    text: String,
}

#[derive(Serialize)]
struct SentenceView {
    idx: usize,
    text: String,
    suggestions: Vec<Suggestion>,
    /// Current labels after the decisions so far.
    labels: Vec<LabelId>,
}

#[derive(Serialize)]
struct DocumentView {
    doc_id: String,
    sentences: Vec<SentenceView>,
    decisions: Vec<Decision>,
}

impl DocumentView {
    fn of(s: &DocumentSession) -> DocumentView {
        DocumentView {
            doc_id: s.id.clone(),
            sentences: (0..s.sentences.len())
                .map(|i| SentenceView {
                    idx: i,
                    text: s.sentences[i].clone(),
                    suggestions: s.suggestions(i),
                    labels: s.final_labels(i).into_iter().collect(),
                })
                .collect(),
            decisions: s.log().to_vec(),
        }
    }
}

#[derive(Deserialize)]
struct DecisionRequest {
    idx: usize,
    label: String,
    action: Action,
}

#[derive(Serialize)]
struct DecisionResponse {
    decision: Decision,
    labels: Vec<LabelId>,
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ServeError> {
    payload.map(|Json(v)| v).map_err(|e| ServeError::BadRequest(e.body_text()))
}

async fn health(State(app): State<Arc<AppState>>) -> Json<Health> {
    let m = app.store.model();
    Json(Health {
        status: "ok",
        variant: m.config().variant_name(),
        labels: m.labels().len(),
    })
}

async fn taxonomy(State(app): State<Arc<AppState>>) -> Json<Vec<T1View>> {
    let tax = app.store.model().taxonomy().clone();
    let mut out: Vec<T1View> = Vec::new();
    for n in tax.nodes() {
        if out.last().is_none_or(|p| p.id != n.t1) {
            out.push(T1View {
                id: n.t1.clone(),
                name: n.t1_name.clone(),
                groups: Vec::new(),
            });
        }
        let pillar = out.last_mut().expect("pushed");
        if pillar.groups.last().is_none_or(|g| g.id != n.t2) {
            pillar.groups.push(T2View {
                id: n.t2.clone(),
                name: n.t2_name.clone(),
                labels: Vec::new(),
            });
        }
        pillar.groups.last_mut().expect("pushed").labels.push(T3View {
            id: n.t3.clone(),
            name: n.name.clone(),
            description: n.description.clone(),
        });
    }
    Json(out)
}

async fn create_document(
    State(app): State<Arc<AppState>>,
    payload: Result<Json<NewDocument>, JsonRejection>,
) -> Result<Json<DocumentView>, ServeError> {
    let req = body(payload)?;
    let view = tokio::task::spawn_blocking(move || {
        let shared = app.store.create(&req.text)?;
        let s = shared.lock().expect("session");
        Ok::<_, ServeError>(DocumentView::of(&s))
    })
    .await
    .map_err(|e| ServeError::BadRequest(format!("scoring task failed: {e}")))??;
    Ok(Json(view))
}

async fn get_document(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<DocumentView>, ServeError> {
    let view = tokio::task::spawn_blocking(move || {
        let shared = app.store.get(&id)?;
        let s = shared.lock().expect("session");
        Ok::<_, ServeError>(DocumentView::of(&s))
    })
    .await
    .map_err(|e| ServeError::BadRequest(format!("scoring task failed: {e}")))??;
    Ok(Json(view))
}

async fn decide(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    payload: Result<Json<DecisionRequest>, JsonRejection>,
) -> Result<Json<DecisionResponse>, ServeError> {
    let req = body(payload)?;
    let label = LabelId::from_name(&req.label);
    let (decision, labels) = tokio::task::spawn_blocking(move || app.store.decide(&id, req.idx, label, req.action))
        .await
        .map_err(|e| ServeError::BadRequest(format!("decision task failed: {e}")))??;
    Ok(Json(DecisionResponse { decision, labels }))
}

async fn export(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<impl IntoResponse, ServeError> {
    let text = tokio::task::spawn_blocking(move || {
        let shared = app.store.get(&id)?;
        let s = shared.lock().expect("session");
        Ok::<_, ServeError>(s.export_gold())
    })
    .await
    .map_err(|e| ServeError::BadRequest(format!("export task failed: {e}")))??;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson; charset=utf-8")], text))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/taxonomy", get(taxonomy))
        .route("/documents", post(create_document))
        .route("/documents/{id}", get(get_document))
        .route("/documents/{id}/decisions", post(decide))
        .route("/documents/{id}/export", get(export))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
