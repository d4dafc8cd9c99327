use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use annodb::media::{self, EdgePolicy};
use annodb::{info, AnnotationDb, Error, ObjectEntry};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use crate::AppState;

pub const MAX_PAGE: usize = 1000;
const DEFAULT_PAGE: usize = 100;

type Shared = State<Arc<AppState>>;

/// URL-safe id of an imagefile.
pub fn image_id(imagefile: &str) -> String {
    URL_SAFE_NO_PAD.encode(imagefile)
}

pub fn imagefile_from_id(id: &str) -> Option<String> {
    let bytes = URL_SAFE_NO_PAD.decode(id).ok()?;
    String::from_utf8(bytes).ok()
}

pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/info", get(get_info))
        .route("/api/images", get(list_images))
        .route("/api/images/{id}/bytes", get(image_bytes))
        .route("/api/images/{id}/mask", get(image_mask))
        .route("/api/images/{id}/objects", get(image_objects))
        .route("/api/objects/{objectid}/crop", get(object_crop))
        .route("/api/objects/{objectid}", axum::routing::patch(rename_object))
        .route("/api/matches", post(create_match))
        .route("/api/matches/{match}", delete(delete_match))
        .route("/api/commit", post(commit))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Predicate { .. } | Error::InvalidArgument(_) => StatusCode::BAD_REQUEST,
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::ReadOnly => StatusCode::FORBIDDEN,
            Error::Conflict(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn not_found(what: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("{what} not found"))
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

type ApiResult<T> = Result<T, ApiError>;

fn writable(db: &AnnotationDb) -> ApiResult<()> {
    if db.is_read_only() {
        return Err(ApiError(
            StatusCode::FORBIDDEN,
            "read-only session: edits are not allowed".into(),
        ));
    }
    Ok(())
}

async fn get_info(State(state): Shared) -> ApiResult<Json<Value>> {
    let db = state.db();
    let s = info::summarize(&db, false, false)?;
    let dim = |d: &info::DimensionSummary| match d {
        info::DimensionSummary::None => Value::Null,
        other => Value::String(other.to_string()),
    };
    Ok(Json(json!({
        "num images": s.num_images,
        "num objects": s.num_objects,
        "num masks": s.num_masks,
        "matches": s.matches,
        "image width": dim(&s.image_width),
        "image height": dim(&s.image_height),
        "properties": s.properties,
        "read only": db.is_read_only(),
        "dirty": db.is_dirty(),
    })))
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    offset: Option<usize>,
    limit: Option<usize>,
    #[serde(rename = "where")]
    where_image: Option<String>,
    shuffle: Option<bool>,
    seed: Option<u64>,
}

async fn list_images(State(state): Shared, Query(q): Query<ListQuery>) -> ApiResult<Json<Value>> {
    let limit = q.limit.unwrap_or(DEFAULT_PAGE);
    if limit > MAX_PAGE {
        return Err(bad_request(format!("limit must be at most {MAX_PAGE}")));
    }
    let offset = q.offset.unwrap_or(0);
    let db = state.db();
    let predicate = q.where_image.as_deref().filter(|w| !w.trim().is_empty());
    let mut images = db.images(predicate)?;
    if q.shuffle.unwrap_or(false) {
        images.shuffle(&mut ChaCha8Rng::seed_from_u64(q.seed.unwrap_or(0)));
    }
    let counts = annodb::modify::objects_per_image(&db)?;
    let items: Vec<Value> = images
        .iter()
        .skip(offset)
        .take(limit)
        .map(|img| {
            json!({
                "id": image_id(&img.imagefile),
                "imagefile": img.imagefile,
                "width": img.width,
                "height": img.height,
                "name": img.name,
                "score": img.score,
                "num_objects": counts.get(&img.imagefile).copied().unwrap_or(0),
                "has_mask": img.maskfile.is_some(),
            })
        })
        .collect();
    Ok(Json(json!({
        "total": images.len(),
        "offset": offset,
        "limit": limit,
        "items": items,
    })))
}

fn lookup_image(db: &AnnotationDb, id: &str) -> ApiResult<annodb::ImageRecord> {
    let imagefile = imagefile_from_id(id).ok_or_else(|| not_found(format!("image {id}")))?;
    db.image(&imagefile)?
        .ok_or_else(|| not_found(format!("image {imagefile}")))
}

fn content_type(path: &str) -> &'static str {
    let ext = Path::new(path)
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        _ => "application/octet-stream",
    }
}

fn png_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn image_bytes(State(state): Shared, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let image = lookup_image(&state.db(), &id)?;
    let path = media::resolve(state.rootdir(), &image.imagefile);
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|_| not_found(path.display()))?;
    Ok(([(header::CONTENT_TYPE, content_type(&image.imagefile))], bytes).into_response())
}

async fn image_mask(State(state): Shared, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let image = lookup_image(&state.db(), &id)?;
    let maskfile = image
        .maskfile
        .ok_or_else(|| not_found(format!("mask of {}", image.imagefile)))?;
    let mask = media::read_mask(state.rootdir(), &maskfile)?;
    Ok(png_response(media::encode_png(&media::colorize_mask(&mask))?))
}

/// JSON payload of one object, as used by every object endpoint.
pub fn object_json(e: &ObjectEntry) -> Value {
    let mut polygons: Vec<(Option<String>, Vec<[f64; 2]>)> = Vec::new();
    for p in &e.polygons {
        match polygons.iter_mut().find(|(name, _)| *name == p.name) {
            Some((_, points)) => points.push([p.x, p.y]),
            None => polygons.push((p.name.clone(), vec![[p.x, p.y]])),
        }
    }
    let properties: Vec<Value> = e
        .properties
        .iter()
        .map(|p| json!({ "key": p.key, "value": p.value }))
        .collect();
    json!({
        "objectid": e.object.objectid,
        "imagefile": e.object.imagefile,
        "name": e.object.name,
        "score": e.object.score,
        "box": e.object.bbox.map(|b| json!({
            "x": b.x, "y": b.y, "width": b.width, "height": b.height,
        })),
        "polygons": polygons
            .into_iter()
            .map(|(name, points)| json!({ "name": name, "points": points }))
            .collect::<Vec<_>>(),
        "properties": properties,
        "match": e.matches.first(),
        "matches": e.matches,
    })
}

fn object_entry(db: &AnnotationDb, objectid: i64) -> ApiResult<ObjectEntry> {
    db.objects(Some(&format!("objectid = {objectid}")))?
        .pop()
        .ok_or_else(|| not_found(format!("object {objectid}")))
}

async fn image_objects(State(state): Shared, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let db = state.db();
    let image = lookup_image(&db, &id)?;
    let quoted = image.imagefile.replace('\'', "''");
    let entries = db.objects(Some(&format!("imagefile = '{quoted}'")))?;
    Ok(Json(Value::Array(entries.iter().map(object_json).collect())))
}

async fn object_crop(State(state): Shared, UrlPath(objectid): UrlPath<i64>) -> ApiResult<Response> {
    let entry = object_entry(&state.db(), objectid)?;
    let bbox = entry
        .object
        .bbox
        .ok_or_else(|| bad_request(format!("object {objectid} has no bounding box")))?;
    let image = media::read_image(state.rootdir(), &entry.image.imagefile)?;
    let crop = media::crop_and_resize(&image, &bbox, (0, 0), EdgePolicy::Original)?;
    Ok(png_response(media::encode_png(&crop.buffer)?))
}

#[derive(Debug, Deserialize)]
struct RenameBody {
    name: Option<String>,
}

async fn rename_object(
    State(state): Shared,
    UrlPath(objectid): UrlPath<i64>,
    Json(body): Json<RenameBody>,
) -> ApiResult<Json<Value>> {
    let db = state.db();
    writable(&db)?;
    db.set_object_name(objectid, body.name.as_deref())?;
    Ok(Json(object_json(&object_entry(&db, objectid)?)))
}

#[derive(Debug, Deserialize)]
struct MatchBody {
    objectids: Vec<i64>,
}

async fn create_match(State(state): Shared, Json(body): Json<MatchBody>) -> ApiResult<Response> {
    let db = state.db();
    writable(&db)?;
    let mut ids = body.objectids.clone();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(bad_request("a match needs at least two distinct objectids"));
    }
    for id in &ids {
        if db.object(*id)?.is_none() {
            return Err(bad_request(format!("object {id} does not exist")));
        }
    }
    let value = db.atomic(|db| {
        let value = db.next_match_value()?;
        for id in &ids {
            db.add_match(*id, value)?;
        }
        Ok(value)
    })?;
    let body = json!({ "match": value, "objectids": ids });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn delete_match(State(state): Shared, UrlPath(value): UrlPath<i64>) -> ApiResult<Json<Value>> {
    let db = state.db();
    writable(&db)?;
    let members = db.match_members(value)?;
    if members.is_empty() {
        return Err(not_found(format!("match {value}")));
    }
    db.delete_match(value)?;
    Ok(Json(json!({ "match": value, "objectids": members })))
}

async fn commit(State(state): Shared) -> ApiResult<Json<Value>> {
    let mut db = state.db();
    writable(&db)?;
    db.commit()?;
    state.mark_committed(&db)?;
    let path = db.write_path().map(|p| p.display().to_string());
    let mut counts = BTreeMap::new();
    for table in annodb::store::TABLES {
        counts.insert(table, db.count(table)?);
    }
    Ok(Json(json!({ "committed": true, "path": path, "counts": counts })))
}
