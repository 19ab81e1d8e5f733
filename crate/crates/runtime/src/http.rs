//! JSON envelope shared by every HTTP endpoint: successful responses carry
//! `ok: true` next to their fields, failures carry `ok: false` and a reason.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub reason: String,
    pub extra: Map<String, Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, reason: impl Into<String>) -> Self {
        Self {
            status,
            reason: reason.into(),
            extra: Map::new(),
        }
    }

    pub fn bad_request(reason: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, reason)
    }

    pub fn forbidden(reason: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, reason)
    }

    pub fn not_found(reason: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, reason)
    }

    pub fn conflict(reason: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, reason)
    }

    pub fn unavailable(reason: impl Into<String>) -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, reason)
    }

    pub fn internal(reason: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, reason)
    }

    pub fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.extra
            .insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
        self
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({})", self.reason, self.status)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = self.extra;
        body.insert("ok".into(), Value::Bool(false));
        body.insert("reason".into(), Value::String(self.reason));
        (self.status, Json(Value::Object(body))).into_response()
    }
}

impl From<anyhow::Error> for ApiError {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<ApiError>() {
            Ok(api) => api,
            Err(e) => ApiError::internal(format!("{e:#}")),
        }
    }
}

pub type ApiResult = Result<Json<Value>, ApiError>;

/// Serializes `value` (an object) and adds `ok: true`.
pub fn ok<T: Serialize>(value: T) -> ApiResult {
    let v = serde_json::to_value(value).map_err(|e| ApiError::internal(e.to_string()))?;
    let mut map = match v {
        Value::Object(m) => m,
        Value::Null => Map::new(),
        other => {
            let mut m = Map::new();
            m.insert("result".into(), other);
            m
        }
    };
    map.insert("ok".into(), Value::Bool(true));
    Ok(Json(Value::Object(map)))
}

pub fn ok_empty() -> ApiResult {
    Ok(Json(json!({ "ok": true })))
}

/// Decodes an envelope received from a peer service. Non-2xx responses
/// become [`ApiError`] with the remote status and reason preserved.
pub async fn decode_response<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ApiError> {
    let status = StatusCode::from_u16(resp.status().as_u16()).unwrap_or(StatusCode::BAD_GATEWAY);
    let body: Value = resp
        .json()
        .await
        .map_err(|e| ApiError::unavailable(format!("unreadable response: {e}")))?;
    if !status.is_success() || body.get("ok") == Some(&Value::Bool(false)) {
        let reason = body
            .get("reason")
            .and_then(Value::as_str)
            .unwrap_or("remote error")
            .to_string();
        let mut err = ApiError::new(if status.is_success() { StatusCode::BAD_GATEWAY } else { status }, reason);
        if let Value::Object(map) = body {
            err.extra = map.into_iter().filter(|(k, _)| k != "ok" && k != "reason").collect();
        }
        return Err(err);
    }
    serde_json::from_value(body).map_err(|e| ApiError::unavailable(format!("unexpected response shape: {e}")))
}

pub async fn get_json<T: DeserializeOwned>(http: &reqwest::Client, url: &str) -> Result<T, ApiError> {
    let resp = http
        .get(url)
        .send()
        .await
        .map_err(|e| ApiError::unavailable(format!("GET {url}: {e}")))?;
    decode_response(resp).await
}

pub async fn post_json<B: Serialize + ?Sized, T: DeserializeOwned>(http: &reqwest::Client, url: &str, body: &B) -> Result<T, ApiError> {
    let resp = http
        .post(url)
        .json(body)
        .send()
        .await
        .map_err(|e| ApiError::unavailable(format!("POST {url}: {e}")))?;
    decode_response(resp).await
}

/// Binds `addr` and serves `router` until the task is dropped.
pub async fn serve(listener: tokio::net::TcpListener, router: axum::Router) -> anyhow::Result<()> {
    axum::serve(listener, router).await?;
    Ok(())
}
