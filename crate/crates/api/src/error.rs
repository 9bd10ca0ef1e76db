use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use hexpick_core::aggregate::AggregateError;
use hexpick_core::geo::GeoError;
use hexpick_core::poi::PoiError;
use hexpick_core::scoring::ScoringError;
use hexpick_core::store::StoreError;

/// Machine-readable error codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    InvalidRange,
    InvalidPolygon,
    InvalidRadius,
    InvalidCriterion,
    InvalidParameter,
    NotFound,
    StoreCorrupt,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 7] = [
        Self::InvalidRange,
        Self::InvalidPolygon,
        Self::InvalidRadius,
        Self::InvalidCriterion,
        Self::InvalidParameter,
        Self::NotFound,
        Self::StoreCorrupt,
    ];

    pub fn status(self) -> StatusCode {
        match self {
            Self::NotFound => StatusCode::NOT_FOUND,
            Self::StoreCorrupt => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn param(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::InvalidParameter, message)
    }

    pub fn status(&self) -> StatusCode {
        self.code.status()
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let code = match &e {
            StoreError::Io { .. } | StoreError::Corrupt(_) => ErrorCode::StoreCorrupt,
            StoreError::InvalidRadius(_) => ErrorCode::InvalidRadius,
            StoreError::InvalidRegion(_) | StoreError::Geo(_) => ErrorCode::InvalidParameter,
        };
        Self::new(code, e.to_string())
    }
}

impl From<GeoError> for ApiError {
    fn from(e: GeoError) -> Self {
        let code = match e {
            GeoError::InvalidPolygon(_) => ErrorCode::InvalidPolygon,
            _ => ErrorCode::InvalidParameter,
        };
        Self::new(code, e.to_string())
    }
}

impl From<AggregateError> for ApiError {
    fn from(e: AggregateError) -> Self {
        match e {
            AggregateError::InvalidRange { .. } => {
                Self::new(ErrorCode::InvalidRange, e.to_string())
            }
            AggregateError::EmptyFilter => Self::param(e.to_string()),
            AggregateError::Store(s) => s.into(),
            AggregateError::Geo(g) => g.into(),
        }
    }
}

impl From<PoiError> for ApiError {
    fn from(e: PoiError) -> Self {
        match e {
            PoiError::InvalidRadius(_) => Self::new(ErrorCode::InvalidRadius, e.to_string()),
            PoiError::Geo(g) => g.into(),
            _ => Self::param(e.to_string()),
        }
    }
}

impl From<ScoringError> for ApiError {
    fn from(e: ScoringError) -> Self {
        match e {
            ScoringError::InvalidRadius(_) => Self::new(ErrorCode::InvalidRadius, e.to_string()),
            ScoringError::InvalidCriterion(_) => {
                Self::new(ErrorCode::InvalidCriterion, e.to_string())
            }
            ScoringError::Store(s) => s.into(),
            ScoringError::Poi(p) => p.into(),
            ScoringError::Geo(g) => g.into(),
            ScoringError::EmptyWindow
            | ScoringError::EmptyInput
            | ScoringError::OutsideArea { .. } => Self::param(e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hexpick_core::clock::DateKey;

    #[test]
    fn module_errors_map_to_codes() {
        let d = DateKey::from_ymd(2019, 9, 2).unwrap();
        let cases: Vec<(ApiError, ErrorCode)> = vec![
            (
                AggregateError::InvalidRange {
                    from: d.succ(),
                    to: d,
                }
                .into(),
                ErrorCode::InvalidRange,
            ),
            (
                GeoError::InvalidPolygon(2).into(),
                ErrorCode::InvalidPolygon,
            ),
            (
                StoreError::InvalidRadius(0.0).into(),
                ErrorCode::InvalidRadius,
            ),
            (
                ScoringError::InvalidRadius(-1.0).into(),
                ErrorCode::InvalidRadius,
            ),
            (
                PoiError::InvalidRadius(0.0).into(),
                ErrorCode::InvalidRadius,
            ),
            (
                ScoringError::InvalidCriterion("XX".into()).into(),
                ErrorCode::InvalidCriterion,
            ),
            (
                StoreError::Corrupt("bad".into()).into(),
                ErrorCode::StoreCorrupt,
            ),
            (
                ScoringError::Store(StoreError::Corrupt("x".into())).into(),
                ErrorCode::StoreCorrupt,
            ),
            (
                AggregateError::EmptyFilter.into(),
                ErrorCode::InvalidParameter,
            ),
            (
                ScoringError::EmptyWindow.into(),
                ErrorCode::InvalidParameter,
            ),
        ];
        for (err, code) in cases {
            assert_eq!(err.code, code, "{}", err.message);
        }
        assert_eq!(
            ErrorCode::StoreCorrupt.status(),
            StatusCode::INTERNAL_SERVER_ERROR
        );
        assert_eq!(ErrorCode::InvalidRange.status(), StatusCode::BAD_REQUEST);
        assert_eq!(
            serde_json::to_string(&ErrorCode::InvalidCriterion).unwrap(),
            "\"invalid_criterion\""
        );
    }
}
