use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

use sarl_core::Action;

use crate::API_SCHEMA_VERSION;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown agent {0:?}")]
    UnknownAgent(String),

    #[error("unknown session")]
    UnknownSession,

    #[error("session finished")]
    SessionFinished,

    #[error("illegal action {action}")]
    IllegalAction { action: Action, legal: Vec<Action> },

    #[error("session is not finished")]
    NotFinished,

    #[error("session already finalized")]
    AlreadyFinalized,

    #[error("invalid survey: {0}")]
    InvalidSurvey(String),

    #[error("quiz answers incorrect")]
    QuizFailed,

    #[error("storage failure: {0}")]
    Storage(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn internal(e: impl std::fmt::Display) -> Self {
        ServiceError::Internal(e.to_string())
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownAgent(_) | ServiceError::UnknownSession => StatusCode::NOT_FOUND,
            ServiceError::SessionFinished | ServiceError::NotFinished | ServiceError::AlreadyFinalized => {
                StatusCode::CONFLICT
            }
            ServiceError::IllegalAction { .. } | ServiceError::InvalidSurvey(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::QuizFailed => StatusCode::FORBIDDEN,
            ServiceError::Storage(_) | ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Serialize)]
struct ErrorBody {
    schema_version: u32,
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    legal_actions: Option<Vec<Action>>,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let legal_actions = match &self {
            ServiceError::IllegalAction { legal, .. } => Some(legal.clone()),
            _ => None,
        };
        let body = ErrorBody {
            schema_version: API_SCHEMA_VERSION,
            error: self.to_string(),
            legal_actions,
        };
        (self.status(), Json(body)).into_response()
    }
}
