use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>, field: Option<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
                field,
            },
        }
    }

    pub fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no session {id:?}"), None)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message, None)
    }

    pub fn bad_request(field: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message, Some(field.into()))
    }

    pub fn from_rejection(r: axum::extract::rejection::JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", r.body_text(), None)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message, None)
    }

    /// Map a core error raised while building a session from a config.
    pub fn from_config_error(e: mixbo::Error) -> Self {
        let (message, field) = match &e {
            mixbo::Error::Config(errs) => (errs.join("; "), errs.first().and_then(|m| field_of(m))),
            mixbo::Error::InvalidValue { field, reason } => (format!("{field}: {reason}"), Some(field.clone())),
            other => (other.to_string(), None),
        };
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", message, field)
    }
}

fn field_of(msg: &str) -> Option<String> {
    let (head, _) = msg.split_once(':')?;
    (!head.contains(' ')).then(|| head.to_owned())
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
