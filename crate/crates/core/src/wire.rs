//! JSON bodies exchanged with the HTTP service.

use serde::{Deserialize, Serialize};

use crate::engine::{Index, SearchHit};
use crate::error::Error;
use crate::proposal::Rect;

/// Number of hits returned when a request does not say.
pub const DEFAULT_TOP: usize = 20;
/// Upper bound on hits per request.
pub const MAX_TOP: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitJson {
    pub page_id: u32,
    pub title_id: String,
    pub x: u32,
    pub y: u32,
    pub side: u32,
    pub distance: f32,
    /// Crop of the hit window.
    pub thumbnail_url: String,
    /// Full page.
    pub page_url: String,
}

impl HitJson {
    pub fn from_hit(index: &Index, hit: &SearchHit) -> HitJson {
        let w = hit.window;
        HitJson {
            page_id: hit.page_id,
            title_id: index
                .page(hit.page_id)
                .map(|p| p.title_id.clone())
                .unwrap_or_default(),
            x: w.x,
            y: w.y,
            side: w.side,
            distance: hit.distance,
            thumbnail_url: format!("/pages/{}/region?x={}&y={}&side={}", hit.page_id, w.x, w.y, w.side),
            page_url: format!("/pages/{}", hit.page_id),
        }
    }
}

/// Hits in ascending distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub hits: Vec<HitJson>,
    pub elapsed_ms: f64,
}

/// Region of a retrieved page to search with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub page_id: u32,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top: Option<usize>,
}

impl FeedbackRequest {
    pub fn rect(&self) -> Rect {
        Rect::new(self.x, self.y, self.w, self.h)
    }
}

/// Index summary served at `/info`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexInfo {
    pub pages: usize,
    pub windows: usize,
    pub memory_bytes: usize,
    pub feature_dim: usize,
    pub subspaces: usize,
    pub centroids: usize,
}

impl IndexInfo {
    pub fn of(index: &Index) -> IndexInfo {
        let mem = index.memory_report();
        IndexInfo {
            pages: mem.pages,
            windows: mem.windows,
            memory_bytes: mem.total_bytes,
            feature_dim: index.config.dim(),
            subspaces: index.config.subspaces,
            centroids: index.config.centroids,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadImage,
    BadRequest,
    OutOfBounds,
    BlankQuery,
    BlankRegion,
    PageNotFound,
    IndexNotLoaded,
    Internal,
}

impl ErrorCode {
    pub fn http_status(self) -> u16 {
        match self {
            ErrorCode::BadImage | ErrorCode::BadRequest | ErrorCode::OutOfBounds => 400,
            ErrorCode::BlankQuery | ErrorCode::BlankRegion => 422,
            ErrorCode::PageNotFound => 404,
            ErrorCode::IndexNotLoaded => 503,
            ErrorCode::Internal => 500,
        }
    }
}

/// Error body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> ApiError {
        ApiError {
            code,
            message: message.into(),
        }
    }
}

impl From<&Error> for ApiError {
    fn from(e: &Error) -> ApiError {
        let code = match e {
            Error::Decode(_) => ErrorCode::BadImage,
            Error::OutOfBounds { .. } => ErrorCode::OutOfBounds,
            Error::BlankQuery => ErrorCode::BlankQuery,
            Error::BlankRegion => ErrorCode::BlankRegion,
            Error::PageNotFound(_) => ErrorCode::PageNotFound,
            Error::EmptyIndex => ErrorCode::IndexNotLoaded,
            Error::InvalidParameter(_) | Error::DimensionMismatch { .. } => ErrorCode::BadRequest,
            _ => ErrorCode::Internal,
        };
        ApiError::new(code, e.to_string())
    }
}
