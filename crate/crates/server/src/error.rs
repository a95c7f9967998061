use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use trustnet_core::ModelError;
use trustnet_resolver::{CacheError, ResolveError};
use trustnet_store::StoreError;

/// Body of every error response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn unauthorized() -> Self {
        Self::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "missing, invalid or expired bearer token",
        )
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = self.code, message = %self.message, "request failed");
        }
        let body = ErrorBody {
            code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        match &e {
            StoreError::ConstraintViolation(name) => match name.as_str() {
                "username" => Self::new(StatusCode::CONFLICT, "username_taken", message),
                "source_fk" => Self::new(StatusCode::NOT_FOUND, "source_not_found", message),
                "self_relation" => Self::bad_request("self_relation", message),
                "share_precondition" => Self::new(
                    StatusCode::CONFLICT,
                    "share_precondition",
                    "share only pages you have assessed or asked about",
                ),
                _ => Self::new(StatusCode::CONFLICT, "conflict", message),
            },
            StoreError::Invalid(_) | StoreError::Import { .. } => {
                Self::bad_request("invalid", message)
            }
            StoreError::Unavailable(_) => Self::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "storage_unavailable",
                message,
            ),
            StoreError::Schema(_) => Self::internal(message),
        }
    }
}

impl From<ModelError> for ApiError {
    fn from(e: ModelError) -> Self {
        let message = e.to_string();
        match e {
            ModelError::NotFound(_) => {
                Self::new(StatusCode::NOT_FOUND, "source_not_found", message)
            }
            ModelError::InvalidKey(_) => Self::bad_request("invalid_url", message),
            ModelError::SelfRelation(_) => Self::bad_request("self_relation", message),
            ModelError::Duplicate(_) => Self::new(StatusCode::CONFLICT, "conflict", message),
            ModelError::InvalidQuestion(_) => Self::bad_request("invalid_question", message),
            ModelError::SharePrecondition => {
                Self::new(StatusCode::CONFLICT, "share_precondition", message)
            }
        }
    }
}

impl From<CacheError> for ApiError {
    fn from(e: CacheError) -> Self {
        match e {
            CacheError::InvalidMapping(_) => Self::bad_request("invalid_mapping", e.to_string()),
            CacheError::Storage(m) => {
                Self::new(StatusCode::SERVICE_UNAVAILABLE, "storage_unavailable", m)
            }
        }
    }
}

impl From<ResolveError> for ApiError {
    fn from(e: ResolveError) -> Self {
        let status = match e {
            ResolveError::InvalidUrl(_) | ResolveError::BlockedTarget { .. } => {
                StatusCode::BAD_REQUEST
            }
            ResolveError::FetchFailed { .. } => StatusCode::BAD_GATEWAY,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.code(), e.to_string())
    }
}
