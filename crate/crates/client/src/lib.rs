//! Thin async client for the sketchdex HTTP service.

use reqwest::header::CONTENT_TYPE;
use reqwest::{RequestBuilder, Response, StatusCode};
use serde::de::DeserializeOwned;

use sketchdex_core::wire::{ApiError, FeedbackRequest, IndexInfo, QueryResponse};

pub use sketchdex_core::wire;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("invalid base url {0}")]
    BaseUrl(String),

    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),

    /// The server answered with an error body.
    #[error("server returned {status}: {} ({:?})", .error.message, .error.code)]
    Api { status: StatusCode, error: ApiError },

    /// Non-2xx response without a parsable error body.
    #[error("server returned {status}: {body}")]
    Status { status: StatusCode, body: String },
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    base: String,
}

impl Client {
    /// `base` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Result<Self> {
        Self::with_http(reqwest::Client::new(), base)
    }

    pub fn with_http(http: reqwest::Client, base: impl Into<String>) -> Result<Self> {
        let base = base.into().trim_end_matches('/').to_string();
        if !(base.starts_with("http://") || base.starts_with("https://")) {
            return Err(ClientError::BaseUrl(base));
        }
        Ok(Client { http, base })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    /// Sends a sketch PNG; `windows` asks for window hits instead of one per page.
    pub async fn query(&self, png: Vec<u8>, top: Option<usize>, windows: bool) -> Result<QueryResponse> {
        let mut params: Vec<(&str, String)> = Vec::new();
        if let Some(t) = top {
            params.push(("top", t.to_string()));
        }
        if windows {
            params.push(("windows", "true".into()));
        }
        let req = self
            .http
            .post(self.url("/query"))
            .query(&params)
            .header(CONTENT_TYPE, "image/png")
            .body(png);
        json(send(req).await?).await
    }

    pub async fn feedback(&self, req: &FeedbackRequest) -> Result<QueryResponse> {
        json(send(self.http.post(self.url("/feedback")).json(req)).await?).await
    }

    pub async fn info(&self) -> Result<IndexInfo> {
        json(send(self.http.get(self.url("/info"))).await?).await
    }

    /// PNG of a full page.
    pub async fn page(&self, page_id: u32) -> Result<Vec<u8>> {
        bytes(send(self.http.get(self.url(&format!("/pages/{page_id}")))).await?).await
    }

    pub async fn thumb(&self, page_id: u32) -> Result<Vec<u8>> {
        bytes(send(self.http.get(self.url(&format!("/pages/{page_id}/thumb")))).await?).await
    }

    /// PNG crop of a square page region.
    pub async fn region(&self, page_id: u32, x: u32, y: u32, side: u32) -> Result<Vec<u8>> {
        let req = self
            .http
            .get(self.url(&format!("/pages/{page_id}/region")))
            .query(&[("x", x), ("y", y), ("side", side)]);
        bytes(send(req).await?).await
    }
}

async fn send(req: RequestBuilder) -> Result<Response> {
    let resp = req.send().await?;
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let body = resp.text().await?;
    Err(match serde_json::from_str::<ApiError>(&body) {
        Ok(error) => ClientError::Api { status, error },
        Err(_) => ClientError::Status { status, body },
    })
}

async fn json<T: DeserializeOwned>(resp: Response) -> Result<T> {
    Ok(resp.json().await?)
}

async fn bytes(resp: Response) -> Result<Vec<u8>> {
    Ok(resp.bytes().await?.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_url_is_normalized() {
        let c = Client::new("http://localhost:9/").unwrap();
        assert_eq!(c.base_url(), "http://localhost:9");
        assert_eq!(c.url("/info"), "http://localhost:9/info");
        assert!(matches!(Client::new("localhost:9"), Err(ClientError::BaseUrl(_))));
    }
}
