use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use crowdre_core::orchestrator::OrchestratorError;
use crowdre_core::quality::QualityError;
use serde::Serialize;
use serde_json::Value;

use crate::token::TokenError;

/// Error body: `{"error": code, "message": text, "detail": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, error: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            error,
            message: message.into(),
            detail: None,
        }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = Some(detail);
        self
    }

    pub fn unauthorized(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", message)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn unavailable(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "unavailable", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<TokenError> for ApiError {
    fn from(e: TokenError) -> Self {
        let code = match e {
            TokenError::Expired => "token_expired",
            TokenError::Malformed | TokenError::BadSignature => "invalid_token",
        };
        ApiError::new(StatusCode::UNAUTHORIZED, code, e.to_string())
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        use OrchestratorError as E;
        use StatusCode as S;
        let message = e.to_string();
        let (status, code) = match &e {
            E::UnknownCluster(_) => (S::NOT_FOUND, "unknown_cluster"),
            E::UnknownAnnotator(_) => (S::NOT_FOUND, "unknown_annotator"),
            E::UnknownHit(_) => (S::NOT_FOUND, "unknown_hit"),
            E::NoQualificationTest(_) => (S::NOT_FOUND, "no_qualification_test"),
            E::DuplicateSentence(_) => (S::CONFLICT, "duplicate_sentence"),
            E::AnnotatorConflict(_) => (S::CONFLICT, "annotator_conflict"),
            E::HitClosed { .. } => (S::CONFLICT, "hit_closed"),
            E::Ineligible(_) => (S::FORBIDDEN, "ineligible"),
            E::NotQualified { .. } => (S::FORBIDDEN, "not_qualified"),
            E::Suspended { .. } => (S::FORBIDDEN, "suspended"),
            E::NoQualifiedCluster(_) => (S::FORBIDDEN, "no_qualified_cluster"),
            E::HitNotOwned { .. } => (S::FORBIDDEN, "hit_not_owned"),
            E::AnswerCount { .. } => (S::UNPROCESSABLE_ENTITY, "answer_count"),
            E::LabelOutsideChoices { .. } => (S::UNPROCESSABLE_ENTITY, "label_outside_choices"),
            E::Unroutable { .. } => (S::UNPROCESSABLE_ENTITY, "unroutable"),
            E::Quality(QualityError::Incomplete { .. }) => (S::UNPROCESSABLE_ENTITY, "incomplete_answers"),
            E::Quality(_) => (S::UNPROCESSABLE_ENTITY, "quality"),
            E::Hit(_) => (S::SERVICE_UNAVAILABLE, "no_controls"),
        };
        let err = ApiError::new(status, code, message);
        match e {
            E::LabelOutsideChoices { slot, label, choices } => err.with_detail(serde_json::json!({
                "slot": slot,
                "label": label,
                "choices": choices,
            })),
            E::AnswerCount { expected, got } => err.with_detail(serde_json::json!({ "expected": expected, "got": got })),
            _ => err,
        }
    }
}
