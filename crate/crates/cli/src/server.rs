//! HTTP transport for [`Portal`]: every API request is converted to an
//! [`ApiRequest`] and answered with the rendered JSON of the portal response.
//! With a UI directory, other GET requests are served as static files.

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, Method as HttpMethod, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use geobehave_core::ingest::Store;
use geobehave_core::portal::{render, ApiError, ApiRequest, ApiResponse, ErrorCode, Method, Portal, Snapshot};

const API_ROOTS: [&str; 4] = ["config", "regions", "participants", "analysis"];

#[derive(Clone)]
struct AppState {
    portal: Arc<Portal>,
    ui: Option<Arc<PathBuf>>,
}

pub fn router(portal: Arc<Portal>, ui: Option<PathBuf>) -> Router {
    Router::new().fallback(handle).with_state(AppState { portal, ui: ui.map(Arc::new) })
}

fn error(status: u16, code: ErrorCode, message: String) -> ApiResponse {
    let e = ApiError { code, message };
    ApiResponse { status, body: serde_json::to_value(e).expect("error serializes") }
}

/// Transport-level conversion of an HTTP request; an `Err` is answered as is.
pub fn to_api_request(method: &HttpMethod, uri: &Uri, headers: &HeaderMap, body: &[u8]) -> Result<ApiRequest, ApiResponse> {
    let method = match *method {
        HttpMethod::GET => Method::Get,
        HttpMethod::POST => Method::Post,
        ref m => return Err(error(405, ErrorCode::Invalid, format!("unsupported method {m}"))),
    };
    let query: BTreeMap<String, String> = match Query::try_from_uri(uri) {
        Ok(Query(q)) => q,
        Err(e) => return Err(error(400, ErrorCode::Invalid, format!("malformed query: {e}"))),
    };
    let body = if method == Method::Post && !body.is_empty() {
        match serde_json::from_slice(body) {
            Ok(v) => Some(v),
            Err(e) => return Err(error(400, ErrorCode::Invalid, format!("malformed JSON body: {e}"))),
        }
    } else {
        None
    };
    let token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(|t| t.trim().to_string());
    Ok(ApiRequest { method, path: uri.path().to_string(), query, body, token })
}

fn json_response(r: ApiResponse) -> Response {
    let status = StatusCode::from_u16(r.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, [(header::CONTENT_TYPE, "application/json")], render(&r.body)).into_response()
}

fn is_api(path: &str) -> bool {
    let first = path.trim_start_matches('/').split('/').next().unwrap_or("");
    API_ROOTS.contains(&first)
}

/// File under `root` for a URL path, refusing anything that leaves it.
pub fn static_path(root: &Path, url_path: &str) -> Option<PathBuf> {
    let rel = url_path.trim_start_matches('/');
    let rel = if rel.is_empty() || rel.ends_with('/') { format!("{rel}index.html") } else { rel.to_string() };
    let rel = Path::new(&rel);
    if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return None;
    }
    Some(root.join(rel))
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "html" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript",
        "css" => "text/css",
        "json" | "map" => "application/json",
        "svg" => "image/svg+xml",
        "png" => "image/png",
        "ico" => "image/x-icon",
        "woff2" => "font/woff2",
        _ => "application/octet-stream",
    }
}

async fn serve_static(root: &Path, path: &str) -> Response {
    let not_found = || json_response(error(404, ErrorCode::NotFound, format!("no route {path}")));
    let Some(file) = static_path(root, path) else { return not_found() };
    match tokio::fs::read(&file).await {
        Ok(bytes) => (StatusCode::OK, [(header::CONTENT_TYPE, content_type(&file))], Body::from(bytes)).into_response(),
        Err(_) => not_found(),
    }
}

async fn handle(State(state): State<AppState>, method: HttpMethod, uri: Uri, headers: HeaderMap, body: Bytes) -> Response {
    if let Some(root) = &state.ui {
        if method == HttpMethod::GET && !is_api(uri.path()) {
            return serve_static(root, uri.path()).await;
        }
    }
    match to_api_request(&method, &uri, &headers, &body) {
        Ok(req) => json_response(state.portal.handle(&req)),
        Err(r) => json_response(r),
    }
}

/// Re-reads the store every `every` and swaps in the new snapshot. A failed
/// reload keeps the current snapshot.
pub fn spawn_reload(portal: Arc<Portal>, store_root: PathBuf, k_min: Option<usize>, every: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        tick.tick().await;
        loop {
            tick.tick().await;
            let root = store_root.clone();
            let loaded = tokio::task::spawn_blocking(move || Store::open(&root).map_err(|e| e.to_string()).and_then(|s| Snapshot::load(&s, k_min).map_err(|e| e.to_string()))).await;
            match loaded {
                Ok(Ok(snap)) => portal.publish(snap),
                Ok(Err(e)) => eprintln!("reload failed, keeping current snapshot: {e}"),
                Err(e) => eprintln!("reload failed, keeping current snapshot: {e}"),
            }
        }
    })
}

pub async fn serve(listener: tokio::net::TcpListener, portal: Arc<Portal>, ui: Option<PathBuf>) -> std::io::Result<()> {
    axum::serve(listener, router(portal, ui)).await
}
