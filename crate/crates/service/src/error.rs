use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use tracevault_archive::ArchiveError;

/// An error rendered as `{"error": code, "message": text}`.
#[derive(Debug)]
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

    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn unauthenticated() -> Self {
        ApiError::new(StatusCode::UNAUTHORIZED, "unauthenticated", "missing or expired session")
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::FORBIDDEN, "forbidden", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<ArchiveError> for ApiError {
    fn from(e: ArchiveError) -> Self {
        use ArchiveError::*;
        let (status, code) = match &e {
            BadWindow | BadBin | InvalidField { .. } | BadUsername | BadPassword | MalformedXml(_)
            | MissingField(_) | BadPolicy(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            BadCredentials => (StatusCode::UNAUTHORIZED, "bad_credentials"),
            Unauthenticated => (StatusCode::UNAUTHORIZED, "unauthenticated"),
            AupRequired => (StatusCode::FORBIDDEN, "aup_required"),
            CategoryForbidden => (StatusCode::FORBIDDEN, "category_forbidden"),
            GrantInvalid => (StatusCode::FORBIDDEN, "grant_invalid"),
            UnknownFile(_) => (StatusCode::NOT_FOUND, "unknown_file"),
            UnknownUser(_) => (StatusCode::NOT_FOUND, "unknown_user"),
            FileExpired(_) => (StatusCode::GONE, "file_expired"),
            UsernameTaken(_) | DuplicateEntry(_) => (StatusCode::CONFLICT, "conflict"),
            QuotaExhausted(_) => (StatusCode::CONFLICT, "quota_exhausted"),
            NotSealed(_) | MissingFile(_) | Trace { .. } | Db(_) | Io(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Json(serde_json::json!({ "error": self.code, "message": self.message }));
        (self.status, body).into_response()
    }
}
