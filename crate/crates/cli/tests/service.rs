mod common;

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use specmesh_cli::service::{decode_vertices_b64, encode_vertices_b64, router};
use specmesh_core::io::load_mesh_auto;
use specmesh_core::latent::LatentModel;
use tower::ServiceExt;

use common::{fitted, run_ok, s};

struct Fixture {
    _dir: tempfile::TempDir,
    model_path: PathBuf,
    meshes: Vec<PathBuf>,
    app: Router,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let (model_path, meshes) = fitted(dir.path());
    let app = router(Arc::new(LatentModel::load(&model_path).unwrap()));
    Fixture {
        _dir: dir,
        model_path,
        meshes,
        app,
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, "POST", uri, Some(body.to_string())).await
}

#[tokio::test]
async fn model_faces_and_subjects() {
    let fx = fixture();
    let (status, model) = call(&fx.app, "GET", "/v1/model", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(model, json!({ "n_vertices": 162, "k": 40, "d_low": 8, "d_high": 8, "gamma": 1.0 }));

    let (_, faces) = call(&fx.app, "GET", "/v1/mesh/faces", None).await;
    let faces = faces["faces"].as_array().unwrap();
    assert_eq!(faces.len(), 320);
    let reference = load_mesh_auto(&fx.meshes[0]).unwrap();
    assert_eq!(faces[5], json!(reference.faces()[5]));

    let (_, subjects) = call(&fx.app, "GET", "/v1/subjects", None).await;
    assert_eq!(subjects["subjects"].as_array().unwrap().len(), 10);
    assert_eq!(subjects["subjects"][4], "face_04");

    let (status, code) = call(&fx.app, "GET", "/v1/subjects/face_04/latent", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(code["z_low"].as_array().unwrap().len(), 8);
    let (status, _) = call(&fx.app, "GET", "/v1/subjects/nobody/latent", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn decode_of_encoded_subject_matches_cli_reconstruct() {
    let fx = fixture();
    let mesh = load_mesh_auto(&fx.meshes[3]).unwrap();
    let (status, code) = post(&fx.app, "/v1/encode", json!({ "vertices_b64": encode_vertices_b64(mesh.vertices()) })).await;
    assert_eq!(status, StatusCode::OK);
    let (status, decoded) = post(&fx.app, "/v1/decode", code).await;
    assert_eq!(status, StatusCode::OK);
    let served = decode_vertices_b64(decoded["vertices_b64"].as_str().unwrap()).unwrap();

    let out = fx._dir.path().join("cli_recon.obj");
    run_ok(&["reconstruct", "--model", s(&fx.model_path), "--mesh", s(&fx.meshes[3]), "--out", s(&out)]);
    let cli = load_mesh_auto(&out).unwrap();
    let worst = served
        .iter()
        .zip(cli.vertices())
        .map(|(a, b)| (a - b).amax())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-6, "{worst}");
}

#[tokio::test]
async fn interpolate_endpoints() {
    let fx = fixture();
    let (_, a) = call(&fx.app, "GET", "/v1/subjects/face_01/latent", None).await;
    let (_, b) = call(&fx.app, "GET", "/v1/subjects/face_06/latent", None).await;
    let (_, da) = post(&fx.app, "/v1/decode", a.clone()).await;
    let (_, db) = post(&fx.app, "/v1/decode", b.clone()).await;
    let (status, i0) = post(&fx.app, "/v1/interpolate", json!({ "z_a": a, "z_b": b, "alpha": 0.0, "beta": 0.0 })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(i0["vertices_b64"], da["vertices_b64"]);
    let (_, i1) = post(&fx.app, "/v1/interpolate", json!({ "z_a": a, "z_b": b, "alpha": 1.0, "beta": 1.0 })).await;
    assert_eq!(i1["vertices_b64"], db["vertices_b64"]);
    assert!(i1.get("extrapolated").is_none());
    let (status, ex) = post(&fx.app, "/v1/interpolate", json!({ "z_a": a, "z_b": b, "alpha": 1.2, "beta": 0.5, "gamma": 0.4 })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ex["extrapolated"], true);
}

#[tokio::test]
async fn error_statuses() {
    let fx = fixture();
    let (_, code) = call(&fx.app, "GET", "/v1/subjects/face_00/latent", None).await;

    let (status, body) = post(&fx.app, "/v1/decode", json!({ "z_low": [0.0, 1.0], "z_high": code["z_high"] })).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["expected"], json!({ "d_low": 8, "d_high": 8 }));
    assert!(body["error"].as_str().unwrap().contains("z_low"));

    let (status, _) = call(&fx.app, "POST", "/v1/decode", Some("{not json".into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = post(&fx.app, "/v1/decode", json!({ "z_low": "x" })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = post(&fx.app, "/v1/encode", json!({ "vertices_b64": "%%%" })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    // 42-vertex payload against a 162-vertex model
    let small = specmesh_core::synthetic::icosphere(1);
    let (status, _) = post(&fx.app, "/v1/encode", json!({ "vertices_b64": encode_vertices_b64(small.vertices()) })).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let mut verts = load_mesh_auto(&fx.meshes[0]).unwrap().vertices().to_vec();
    verts[7].y = f64::NAN;
    let (status, _) = post(&fx.app, "/v1/encode", json!({ "vertices_b64": encode_vertices_b64(&verts) })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let mut huge = code.clone();
    huge["z_low"][0] = json!(1e308);
    let (status, _) = post(&fx.app, "/v1/decode", huge).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let mut bad_gamma = code.clone();
    bad_gamma["gamma"] = json!(2.0);
    let (status, _) = post(&fx.app, "/v1/decode", bad_gamma).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn concurrent_requests_match_fresh_service() {
    let fx = fixture();
    let (_, code) = call(&fx.app, "GET", "/v1/subjects/face_02/latent", None).await;
    let tasks: Vec<_> = (0..16)
        .map(|i| {
            let app = fx.app.clone();
            let mut c = code.clone();
            c["gamma"] = json!(if i % 2 == 0 { 1.0 } else { 0.0 });
            tokio::spawn(async move { post(&app, "/v1/decode", c).await })
        })
        .collect();
    let mut results = Vec::new();
    for t in tasks {
        results.push(t.await.unwrap());
    }
    let fresh = router(Arc::new(LatentModel::load(&fx.model_path).unwrap()));
    for (i, (status, body)) in results.into_iter().enumerate() {
        assert_eq!(status, StatusCode::OK);
        let mut c = code.clone();
        c["gamma"] = json!(if i % 2 == 0 { 1.0 } else { 0.0 });
        let (_, expect) = post(&fresh, "/v1/decode", c).await;
        assert_eq!(body, expect);
    }
}
