//! Scripted in-process client, used to drive sessions with a simulated
//! decision maker instead of a person.

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use mixbo::oracle::SimulatedDm;
use mixbo::RunRecord;
use serde::de::DeserializeOwned;
use serde_json::Value;
use tower::ServiceExt;

use crate::{ErrorBody, Snapshot, Status};

#[derive(Debug, Clone, PartialEq)]
pub struct ClientError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl std::fmt::Display for ClientError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}: {}", self.status, self.body.code, self.body.message)
    }
}

impl std::error::Error for ClientError {}

pub type ClientResult<T> = Result<T, ClientError>;

#[derive(Clone)]
pub struct Client {
    router: Router,
}

impl Client {
    pub fn new(router: Router) -> Self {
        Self { router }
    }

    /// Raw request; returns the status and the body parsed as JSON (or `Null`).
    pub async fn request(&self, method: Method, uri: &str, body: Option<&Value>) -> (StatusCode, Value) {
        let (status, bytes) = self.request_bytes(method, uri, body).await;
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    pub async fn request_bytes(&self, method: Method, uri: &str, body: Option<&Value>) -> (StatusCode, Vec<u8>) {
        let mut req = Request::builder().method(method).uri(uri);
        let body = match body {
            Some(v) => {
                req = req.header("content-type", "application/json");
                Body::from(serde_json::to_vec(v).expect("json value serialises"))
            }
            None => Body::empty(),
        };
        let resp = self
            .router
            .clone()
            .oneshot(req.body(body).expect("valid request"))
            .await
            .expect("router is infallible");
        let status = resp.status();
        let bytes = to_bytes(resp.into_body(), usize::MAX).await.expect("body readable");
        (status, bytes.to_vec())
    }

    async fn call<T: DeserializeOwned>(&self, method: Method, uri: &str, body: Option<&Value>) -> ClientResult<T> {
        let (status, v) = self.request(method, uri, body).await;
        if status.is_success() {
            Ok(serde_json::from_value(v).expect("response matches its schema"))
        } else {
            let body = serde_json::from_value(v).unwrap_or_else(|_| ErrorBody {
                code: "unknown".into(),
                message: format!("unexpected response {status}"),
                field: None,
            });
            Err(ClientError { status, body })
        }
    }

    pub async fn create(&self, config: &Value) -> ClientResult<Snapshot> {
        self.call(Method::POST, "/api/v1/sessions", Some(config)).await
    }

    pub async fn get(&self, id: &str) -> ClientResult<Snapshot> {
        self.call(Method::GET, &format!("/api/v1/sessions/{id}"), None).await
    }

    /// Answer the pending comparison; with `wait` the call returns once the
    /// next comparison is ready.
    pub async fn answer(&self, id: &str, nonce: &str, first_wins: bool, wait: bool) -> ClientResult<Snapshot> {
        let body = serde_json::json!({
            "nonce": nonce,
            "choice": if first_wins { "first" } else { "second" },
        });
        self.call(Method::POST, &format!("/api/v1/sessions/{id}/answer?wait={wait}"), Some(&body))
            .await
    }

    pub async fn history(&self, id: &str) -> ClientResult<Vec<RunRecord>> {
        self.call(Method::GET, &format!("/api/v1/sessions/{id}/history"), None).await
    }
}

/// Create a session for `config` and answer every comparison with `dm`.
pub async fn drive_with_oracle(client: &Client, config: &Value, dm: &mut SimulatedDm) -> ClientResult<Vec<RunRecord>> {
    let mut snap = client.create(config).await?;
    while snap.status != Status::Finished {
        let pending = snap.pending.as_ref().ok_or_else(|| ClientError {
            status: StatusCode::OK,
            body: ErrorBody {
                code: "no_pending".into(),
                message: format!("session is {:?} without a pending comparison", snap.status),
                field: None,
            },
        })?;
        let (first_wins, _) = dm.answer(&pending.first.raw, &pending.second.raw);
        snap = client.answer(&snap.id, &pending.nonce, first_wins, true).await?;
    }
    client.history(&snap.id).await
}
