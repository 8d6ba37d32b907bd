//! HTTP endpoints over an immutable, shared latent model.
//!
//! Vertex payloads are base64 of little-endian `f32` triples. Status codes:
//! 400 malformed payload, 404 unknown subject, 409 dimension mismatch, 422
//! non-finite or out-of-range values.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use specmesh_core::dr::DrError;
use specmesh_core::latent::{LatentCode, LatentError, LatentModel};
use specmesh_core::Vec3;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<LatentError> for ApiError {
    fn from(e: LatentError) -> Self {
        let status = match &e {
            LatentError::DimensionMismatch { .. } | LatentError::Mesh(_) => StatusCode::CONFLICT,
            LatentError::NonFinite { .. } | LatentError::InvalidGamma(_) | LatentError::Dr(DrError::NonFinite { .. }) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            LatentError::IndexOutOfRange { .. } => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed payload: {e}")))
}

pub fn encode_vertices_b64(points: &[Vec3]) -> String {
    let mut bytes = Vec::with_capacity(points.len() * 12);
    for p in points {
        for x in p.iter() {
            bytes.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    STANDARD.encode(bytes)
}

pub fn decode_vertices_b64(text: &str) -> Result<Vec<Vec3>, ApiError> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("vertices_b64: {e}")))?;
    if bytes.len() % 12 != 0 {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("vertices_b64 holds {} bytes, not a whole number of f32 triples", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(12)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes(c[4 * i..4 * i + 4].try_into().unwrap()) as f64;
            Vec3::new(f(0), f(1), f(2))
        })
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Code {
    pub z_low: Vec<f64>,
    pub z_high: Vec<f64>,
}

impl From<LatentCode> for Code {
    fn from(c: LatentCode) -> Self {
        Self {
            z_low: c.z_low,
            z_high: c.z_high,
        }
    }
}

impl From<Code> for LatentCode {
    fn from(c: Code) -> Self {
        Self {
            z_low: c.z_low,
            z_high: c.z_high,
        }
    }
}

#[derive(Debug, Deserialize)]
struct EncodeRequest {
    vertices_b64: String,
}

#[derive(Debug, Deserialize)]
struct DecodeRequest {
    z_low: Vec<f64>,
    z_high: Vec<f64>,
    gamma: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct InterpolateRequest {
    z_a: Code,
    z_b: Code,
    alpha: f64,
    beta: f64,
    gamma: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerticesResponse {
    pub vertices_b64: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub extrapolated: bool,
}

type Shared = Arc<LatentModel>;

pub fn router(model: Shared) -> Router {
    Router::new()
        .route("/v1/model", get(model_info))
        .route("/v1/mesh/faces", get(faces))
        .route("/v1/subjects", get(subjects))
        .route("/v1/subjects/{id}/latent", get(subject_latent))
        .route("/v1/encode", post(encode))
        .route("/v1/decode", post(decode))
        .route("/v1/interpolate", post(interpolate))
        .with_state(model)
}

async fn model_info(State(m): State<Shared>) -> Json<Value> {
    Json(json!({
        "n_vertices": m.n_vertices(),
        "k": m.basis().k(),
        "d_low": m.d_low(),
        "d_high": m.d_high(),
        "gamma": m.gamma(),
    }))
}

async fn faces(State(m): State<Shared>) -> Json<Value> {
    Json(json!({ "faces": m.faces() }))
}

async fn subjects(State(m): State<Shared>) -> Json<Value> {
    Json(json!({ "subjects": m.subjects() }))
}

async fn subject_latent(State(m): State<Shared>, Path(id): Path<String>) -> ApiResult<Code> {
    let i = m
        .subjects()
        .iter()
        .position(|s| *s == id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown subject {id:?}")))?;
    Ok(Json(m.training_codes()[i].clone().into()))
}

/// Runs CPU-bound model work off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

fn finite_vertices(points: Vec<Vec3>) -> Result<VerticesResponse, ApiError> {
    if !points.iter().all(|p| p.iter().all(|x| x.is_finite())) {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "decoded vertices are not finite"));
    }
    Ok(VerticesResponse {
        vertices_b64: encode_vertices_b64(&points),
        extrapolated: false,
    })
}

async fn encode(State(m): State<Shared>, body: Bytes) -> ApiResult<Code> {
    let req: EncodeRequest = parse(&body)?;
    let points = decode_vertices_b64(&req.vertices_b64)?;
    blocking(move || {
        let (aligned, _) = m.align(&points)?;
        Ok(Json(m.encode_vertices(&aligned)?.into()))
    })
    .await
}

fn dimension_error(m: &LatentModel, e: LatentError) -> ApiError {
    let mut err = ApiError::from(e);
    if err.status == StatusCode::CONFLICT {
        err.body["expected"] = json!({ "d_low": m.d_low(), "d_high": m.d_high() });
    }
    err
}

async fn decode(State(m): State<Shared>, body: Bytes) -> ApiResult<VerticesResponse> {
    let req: DecodeRequest = parse(&body)?;
    blocking(move || {
        let code = LatentCode {
            z_low: req.z_low,
            z_high: req.z_high,
        };
        let points = m.decode_vertices(&code, req.gamma).map_err(|e| dimension_error(&m, e))?;
        Ok(Json(finite_vertices(points)?))
    })
    .await
}

async fn interpolate(State(m): State<Shared>, body: Bytes) -> ApiResult<VerticesResponse> {
    let req: InterpolateRequest = parse(&body)?;
    if !req.alpha.is_finite() || !req.beta.is_finite() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "alpha and beta must be finite"));
    }
    blocking(move || {
        let r = m
            .interpolate_latent(&req.z_a.into(), &req.z_b.into(), req.alpha, req.beta, req.gamma)
            .map_err(|e| dimension_error(&m, e))?;
        let mut out = finite_vertices(r.value)?;
        out.extrapolated = r.extrapolated;
        Ok(Json(out))
    })
    .await
}

/// Binds `host:port` and serves until the process ends.
pub async fn serve(model: LatentModel, host: &str, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(model))).await
}
