use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use mpe_core::catalog::CatalogError;
use mpe_core::clothes::ClothesError;
use mpe_core::eval::EvalError;
use mpe_core::matchmaker::MatchError;
use mpe_core::predict::PredictError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorCode {
    NotFound,
    Invalid,
    Conflict,
    BackendFailure,
}

/// Body of every non-success response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{code:?}: {message}")]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into(), stage: None }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::NotFound, message)
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Invalid, message)
    }

    pub fn backend(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BackendFailure, message)
    }

    pub fn status(&self) -> StatusCode {
        match self.code {
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::Invalid => StatusCode::BAD_REQUEST,
            ErrorCode::Conflict => StatusCode::CONFLICT,
            ErrorCode::BackendFailure => StatusCode::BAD_GATEWAY,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self)).into_response()
    }
}

impl From<CatalogError> for ApiError {
    fn from(e: CatalogError) -> Self {
        let code = match &e {
            CatalogError::UnknownProduct(_) => ErrorCode::NotFound,
            CatalogError::InvalidProperties(_) | CatalogError::Invalid(_) => ErrorCode::Invalid,
            CatalogError::Conflict { .. } => ErrorCode::Conflict,
            CatalogError::Io(_) | CatalogError::Corrupt(_) => ErrorCode::BackendFailure,
        };
        Self::new(code, e.to_string())
    }
}

impl From<MatchError> for ApiError {
    fn from(e: MatchError) -> Self {
        let code = match &e {
            MatchError::UnknownProduct(_) | MatchError::NoExtractedProperties(_) | MatchError::UnknownShade { .. } => {
                ErrorCode::NotFound
            }
            MatchError::EmptyProfile | MatchError::InvalidQuery(_) => ErrorCode::Invalid,
        };
        Self::new(code, e.to_string())
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> Self {
        let code = match &e {
            EvalError::Internal(_) => ErrorCode::BackendFailure,
            _ => ErrorCode::Invalid,
        };
        Self::new(code, e.to_string())
    }
}

impl From<PredictError> for ApiError {
    fn from(e: PredictError) -> Self {
        let code = match &e {
            PredictError::Decode { .. } => ErrorCode::Invalid,
            _ => ErrorCode::BackendFailure,
        };
        Self::new(code, e.to_string())
    }
}

impl From<ClothesError> for ApiError {
    fn from(e: ClothesError) -> Self {
        Self::invalid(e.to_string())
    }
}
