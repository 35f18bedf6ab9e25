//! HTTP front end for a packed progressive light field model.
//!
//! | method | path               | response                                   |
//! |--------|--------------------|--------------------------------------------|
//! | GET    | `/healthz`         | `200 ok`                                   |
//! | GET    | `/model/meta`      | JSON: format version, arch, encoding, chunk table |
//! | GET    | `/model/chunk/{k}` | raw bytes of chunk `k` (1-based), 404 if absent |
//! | POST   | `/render`          | PNG frame, timing in `x-plfn-*` headers     |
//!
//! `/render` takes a [`RenderRequest`] JSON body. Malformed bodies get a 400
//! with a JSON `{"error", "field"}` payload naming the offending field.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use plfn::geometry::{Camera, RigidTransform};
use plfn::renderer::{render, LightFieldModel, RenderOutput, RenderPolicy};
use plfn::streamfmt::{chunk_bytes, load_prefix, read_meta, ModelMeta};

/// Immutable service state: the packed file, its header and the decoded
/// model.
pub struct ModelService {
    bytes: Vec<u8>,
    meta: ModelMeta,
    model: LightFieldModel,
}

impl ModelService {
    pub fn from_bytes(bytes: Vec<u8>) -> plfn::Result<Self> {
        let meta = read_meta(&bytes)?;
        let model = load_prefix(&bytes, meta.arch.num_lods())?;
        Ok(Self { bytes, meta, model })
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn model(&self) -> &LightFieldModel {
        &self.model
    }

    /// Renders a request exactly as `POST /render` does.
    pub fn render(&self, req: &RenderRequest) -> Result<RenderOutput, ApiError> {
        let cam = req.camera()?;
        req.policy
            .validate(self.model.arch())
            .map_err(|e| ApiError::bad_request("policy", e.to_string()))?;
        render(&self.model, &cam, &req.policy).map_err(|e| ApiError::bad_request("policy", e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    #[default]
    Image,
    LodMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderRequest {
    /// Row-major 3×4 world-from-camera transform.
    pub pose: [f64; 12],
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub policy: RenderPolicy,
    #[serde(default)]
    pub output: OutputKind,
}

impl RenderRequest {
    pub fn camera(&self) -> Result<Camera, ApiError> {
        let pose = RigidTransform::from_row_major_3x4(&self.pose)
            .map_err(|e| ApiError::bad_request("pose", e.to_string()))?;
        if self.width == 0 || self.height == 0 || self.width > 4096 || self.height > 4096 {
            return Err(ApiError::bad_request("width", "width and height must lie in 1..=4096"));
        }
        Camera::new(self.width, self.height, self.fx, self.fy, self.cx, self.cy, pose)
            .map_err(|e| ApiError::bad_request("fx", e.to_string()))
    }
}

#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl ApiError {
    pub fn bad_request(field: &str, msg: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            error: msg.into(),
            field: Some(field.to_string()),
        }
    }

    fn not_found(msg: impl Into<String>) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            error: msg.into(),
            field: None,
        }
    }

    fn internal(msg: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            error: msg.into(),
            field: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

/// Parses a render body, reporting the JSON path of the first bad field.
pub fn parse_render_request(body: &[u8]) -> Result<RenderRequest, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let msg = e.into_inner().to_string();
        let named = ["missing field `", "unknown field `"]
            .iter()
            .find_map(|p| msg.strip_prefix(p))
            .and_then(|rest| rest.split('`').next());
        let field = match (path.as_str(), named) {
            (".", Some(name)) => name.to_string(),
            (".", None) => "body".to_string(),
            (p, Some(name)) => format!("{p}.{name}"),
            (p, None) => p.to_string(),
        };
        ApiError::bad_request(&field, msg)
    })
}

pub fn router(service: Arc<ModelService>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/model/meta", get(meta))
        .route("/model/chunk/{k}", get(chunk))
        .route("/render", post(render_frame))
        .layer(CorsLayer::permissive().expose_headers([
            header::CONTENT_LENGTH,
            header::HeaderName::from_static("x-plfn-total-ms"),
            header::HeaderName::from_static("x-plfn-network-ms"),
            header::HeaderName::from_static("x-plfn-occupancy-ms"),
            header::HeaderName::from_static("x-plfn-network-macs"),
            header::HeaderName::from_static("x-plfn-lod-histogram"),
        ]))
        .with_state(service)
}

async fn meta(State(s): State<Arc<ModelService>>) -> Json<ModelMeta> {
    Json(s.meta.clone())
}

async fn chunk(State(s): State<Arc<ModelService>>, Path(k): Path<String>) -> Result<Response, ApiError> {
    let k: usize = k
        .parse()
        .map_err(|_| ApiError::not_found(format!("no chunk '{k}'")))?;
    let data = chunk_bytes(&s.bytes, &s.meta, k).map_err(|e| ApiError::not_found(e.to_string()))?;
    let crc = s.meta.chunks[k - 1].crc32;
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream")),
            (
                header::HeaderName::from_static("x-plfn-crc32"),
                HeaderValue::from_str(&format!("{crc:08x}")).expect("hex is a valid header"),
            ),
        ],
        Bytes::copy_from_slice(data),
    )
        .into_response())
}

fn timing_headers(out: &RenderOutput) -> HeaderMap {
    let t = &out.timing;
    let mut h = HeaderMap::new();
    let mut put = |name: &'static str, v: String| {
        h.insert(name, HeaderValue::from_str(&v).expect("ascii header"));
    };
    put("x-plfn-total-ms", format!("{:.3}", t.total_ms));
    put("x-plfn-network-ms", format!("{:.3}", t.network_ms));
    put("x-plfn-occupancy-ms", format!("{:.3}", t.occupancy_ms));
    put("x-plfn-network-macs", t.network_macs.to_string());
    put(
        "x-plfn-lod-histogram",
        t.pixels_per_lod.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","),
    );
    h
}

async fn render_frame(State(s): State<Arc<ModelService>>, body: Bytes) -> Result<Response, ApiError> {
    let req = parse_render_request(&body)?;
    let num_lods = s.meta.arch.num_lods();
    let (out, png) = tokio::task::spawn_blocking(move || {
        let out = s.render(&req)?;
        let png = match req.output {
            OutputKind::Image => out.image.to_png(),
            OutputKind::LodMap => out.lod_map.to_png(num_lods),
        }
        .map_err(|e| ApiError::internal(e.to_string()))?;
        Ok::<_, ApiError>((out, png))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    let mut headers = timing_headers(&out);
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    Ok((headers, png).into_response())
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(service: ModelService, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    serve_listener(listener, Arc::new(service)).await
}

pub async fn serve_listener(listener: tokio::net::TcpListener, service: Arc<ModelService>) -> std::io::Result<()> {
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service)).await
}
