//! HTTP/JSON facade over a loaded sketch index.
//!
//! The index is immutable once loaded; every handler only reads it, and the
//! CPU-bound parts (decoding, feature extraction, the scan) run on the
//! blocking pool.

use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tower_http::cors::CorsLayer;
use tower_http::trace::TraceLayer;

use sketchdex_core::engine::{HitMode, Index, SearchHit};
use sketchdex_core::raster::GrayImage;
use sketchdex_core::wire::{
    ApiError, ErrorCode, FeedbackRequest, HitJson, IndexInfo, QueryResponse, DEFAULT_TOP, MAX_TOP,
};
use sketchdex_core::Error;

/// Longest side of `/pages/{id}/thumb` images.
pub const THUMB_SIDE: u32 = 256;

/// Largest accepted request body.
pub const MAX_BODY_BYTES: usize = 16 << 20;

#[derive(Clone, Default)]
pub struct AppState {
    index: Option<Arc<Index>>,
}

impl AppState {
    pub fn new(index: Index) -> Self {
        AppState {
            index: Some(Arc::new(index)),
        }
    }

    /// A server with nothing to search; data endpoints answer 503.
    pub fn unloaded() -> Self {
        AppState::default()
    }

    fn index(&self) -> Result<Arc<Index>, HttpError> {
        self.index
            .clone()
            .ok_or_else(|| HttpError(ApiError::new(ErrorCode::IndexNotLoaded, "no index loaded")))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/query", post(query))
        .route("/feedback", post(feedback))
        .route("/info", get(info))
        .route("/pages/{id}", get(page))
        .route("/pages/{id}/thumb", get(thumb))
        .route("/pages/{id}/region", get(region))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(CorsLayer::permissive())
        .layer(TraceLayer::new_for_http())
        .with_state(state)
}

/// Error response carrying an [`ApiError`] body.
#[derive(Debug)]
pub struct HttpError(pub ApiError);

impl IntoResponse for HttpError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.code.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.0)).into_response()
    }
}

impl From<Error> for HttpError {
    fn from(e: Error) -> Self {
        HttpError(ApiError::from(&e))
    }
}

fn bad_request(message: impl Into<String>) -> HttpError {
    HttpError(ApiError::new(ErrorCode::BadRequest, message))
}

/// A stored page that cannot be read is a server fault, not the client's.
fn page_error(e: Error) -> HttpError {
    match e {
        Error::Io { .. } | Error::Decode(_) => {
            tracing::error!("page read failed: {e}");
            HttpError(ApiError::new(ErrorCode::Internal, e.to_string()))
        }
        other => other.into(),
    }
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, HttpError> + Send + 'static,
) -> Result<T, HttpError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| HttpError(ApiError::new(ErrorCode::Internal, e.to_string())))?
}

fn checked_top(top: Option<usize>) -> Result<usize, HttpError> {
    match top.unwrap_or(DEFAULT_TOP) {
        0 => Err(bad_request("top must be at least 1")),
        t if t > MAX_TOP => Err(bad_request(format!("top must be at most {MAX_TOP}"))),
        t => Ok(t),
    }
}

fn respond(index: &Index, hits: &[SearchHit], start: Instant) -> QueryResponse {
    QueryResponse {
        hits: hits.iter().map(|h| HitJson::from_hit(index, h)).collect(),
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    }
}

#[derive(Debug, Deserialize)]
pub struct QueryParams {
    pub top: Option<usize>,
    /// Return individual windows instead of one per page.
    #[serde(default)]
    pub windows: bool,
}

async fn query(
    State(state): State<AppState>,
    params: Result<Query<QueryParams>, QueryRejection>,
    body: Bytes,
) -> Result<Json<QueryResponse>, HttpError> {
    let Query(params) = params.map_err(|e| bad_request(e.body_text()))?;
    let top = checked_top(params.top)?;
    let index = state.index()?;
    let mode = if params.windows { HitMode::Windows } else { HitMode::BestPerPage };
    let start = Instant::now();
    blocking(move || {
        let canvas = GrayImage::decode(&body)?;
        let hits = index.query_sketch(&canvas, top, mode)?;
        Ok(Json(respond(&index, &hits, start)))
    })
    .await
}

async fn feedback(
    State(state): State<AppState>,
    req: Result<Json<FeedbackRequest>, JsonRejection>,
) -> Result<Json<QueryResponse>, HttpError> {
    let Json(req) = req.map_err(|e| bad_request(e.body_text()))?;
    let top = checked_top(req.top)?;
    let index = state.index()?;
    let start = Instant::now();
    blocking(move || {
        let page = index.load_page(req.page_id).map_err(page_error)?;
        let hits = index.region_query_on(&page, req.rect(), top, HitMode::BestPerPage)?;
        Ok(Json(respond(&index, &hits, start)))
    })
    .await
}

async fn info(State(state): State<AppState>) -> Result<Json<IndexInfo>, HttpError> {
    let index = state.index()?;
    Ok(Json(IndexInfo::of(&index)))
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn page(State(state): State<AppState>, Path(id): Path<u32>) -> Result<Response, HttpError> {
    let index = state.index()?;
    blocking(move || Ok(png(index.load_page(id).map_err(page_error)?.encode_png()))).await
}

async fn thumb(State(state): State<AppState>, Path(id): Path<u32>) -> Result<Response, HttpError> {
    let index = state.index()?;
    blocking(move || {
        let img = index.load_page(id).map_err(page_error)?;
        let (w, h) = thumb_size(img.width(), img.height());
        let small = image::imageops::resize(&img.to_image(), w, h, image::imageops::FilterType::Triangle);
        let small = GrayImage::new(w, h, small.into_raw())?;
        Ok(png(small.encode_png()))
    })
    .await
}

/// Size of a page scaled to fit a `THUMB_SIDE` square, never enlarged.
pub fn thumb_size(w: u32, h: u32) -> (u32, u32) {
    let long = w.max(h);
    if long <= THUMB_SIDE {
        return (w, h);
    }
    let scale = |v: u32| ((v as u64 * THUMB_SIDE as u64 + long as u64 / 2) / long as u64).max(1) as u32;
    (scale(w), scale(h))
}

#[derive(Debug, Deserialize)]
pub struct RegionParams {
    pub x: u32,
    pub y: u32,
    pub side: u32,
}

async fn region(
    State(state): State<AppState>,
    Path(id): Path<u32>,
    params: Result<Query<RegionParams>, QueryRejection>,
) -> Result<Response, HttpError> {
    let Query(p) = params.map_err(|e| bad_request(e.body_text()))?;
    if p.side == 0 {
        return Err(bad_request("side must be positive"));
    }
    let index = state.index()?;
    blocking(move || {
        let img = index.load_page(id).map_err(page_error)?;
        Ok(png(img.crop(p.x, p.y, p.side, p.side)?.encode_png()))
    })
    .await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thumbnails_keep_aspect_and_never_grow() {
        assert_eq!(thumb_size(100, 80), (100, 80));
        assert_eq!(thumb_size(1024, 512), (256, 128));
        assert_eq!(thumb_size(300, 1200), (64, 256));
        assert_eq!(thumb_size(5000, 1), (256, 1));
    }

    #[test]
    fn top_is_bounded() {
        assert_eq!(checked_top(None).unwrap(), DEFAULT_TOP);
        assert_eq!(checked_top(Some(1)).unwrap(), 1);
        assert!(checked_top(Some(0)).is_err());
        assert!(checked_top(Some(MAX_TOP + 1)).is_err());
    }
}
