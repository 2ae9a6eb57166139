use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use mpe_core::catalog::{CatalogStore, ImageRef, ProductRecord};
use mpe_core::clothes::SegmentationMask;
use mpe_core::color::RgbColor;
use mpe_core::matchmaker::{ColorSource, IndexMode, MatchCatalog};
use mpe_core::properties::{Category, FinishType, Format, MaterialProperties, Provenance, ShadeProperties};
use mpe_core::synthetic;
use mpe_service::service::{EvaluateRequest, MatchOptions, SimilarParams};
use mpe_service::{router, Service, ServiceConfig};
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

struct Fixture {
    _dir: TempDir,
    service: Arc<Service>,
    app: Router,
}

fn save(root: &Path, rel: &str, img: &image::RgbImage) {
    let p = root.join(rel);
    std::fs::create_dir_all(p.parent().unwrap()).unwrap();
    img.save(&p).unwrap();
}

fn record(id: &str, title: &str, brand: &str, gt: Option<MaterialProperties>) -> ProductRecord {
    ProductRecord {
        product_id: id.into(),
        title: title.into(),
        description: String::new(),
        brand: brand.into(),
        category: Category::Eyeshadow,
        images: vec![ImageRef { position: 0, uri: format!("{id}/0.png"), width: 120, height: 120 }],
        ground_truth: gt,
        overrides: None,
    }
}

fn ground_truth(boxes: &[mpe_core::properties::BoundingBox], colors: &[RgbColor]) -> MaterialProperties {
    MaterialProperties {
        format: Format::Powder,
        shades: boxes
            .iter()
            .zip(colors)
            .map(|(b, c)| ShadeProperties { region: *b, base_color: *c, finish: FinishType::Matte, reflective_color: None })
            .collect(),
        best_image_position: 0,
        provenance: Provenance::GroundTruth,
    }
}

fn fixture_with(token: Option<&str>) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("catalog");
    std::fs::create_dir_all(&root).unwrap();
    let (quad, quad_boxes) = synthetic::swatch_grid(120, 120, 2, 2, RgbColor::WHITE);
    save(&root, "p1/0.png", &quad);
    let single = synthetic::centered_swatch(120, 120, synthetic::SWATCH_PALETTE[0], RgbColor::WHITE);
    save(&root, "p2/0.png", &single);
    save(&root, "p3/0.png", &single);
    let single_box = mpe_core::properties::BoundingBox::from_corners(0.25, 0.25, 0.75, 0.75, 1.0);

    let cfg = ServiceConfig {
        catalog: root.clone(),
        token: token.map(String::from),
        parallelism: 2,
        ..Default::default()
    };
    let service = Arc::new(Service::new(Arc::new(CatalogStore::open(&root).unwrap()), &cfg).unwrap());
    let records = vec![
        record("p1", "Quad Eyeshadow Palette", "Acme", Some(ground_truth(&quad_boxes, &synthetic::SWATCH_PALETTE[..4]))),
        record("p2", "Velvet Eyeshadow", "Beta", Some(ground_truth(&[single_box], &synthetic::SWATCH_PALETTE[..1]))),
        record("p3", "Eyeshadow Makeup Kit", "Beta", None),
    ];
    let report = service
        .ingest(mpe_service::service::IngestRequest {
            records: records.iter().map(|r| serde_json::to_value(r).unwrap()).collect(),
            upsert: false,
        })
        .unwrap();
    assert_eq!(report.count, 3);
    let app = router(service.clone());
    Fixture { _dir: dir, service, app }
}

fn fixture() -> Fixture {
    fixture_with(None)
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    call_with(app, method, uri, body, None).await
}

async fn call_with(app: &Router, method: Method, uri: &str, body: Option<Value>, token: Option<&str>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn wait_job(app: &Router, id: &str) -> Value {
    for _ in 0..2000 {
        let (s, v) = call(app, Method::GET, &format!("/v1/jobs/{id}"), None).await;
        assert_eq!(s, StatusCode::OK);
        if v["status"] == "succeeded" || v["status"] == "failed" {
            return v;
        }
        tokio::time::sleep(std::time::Duration::from_millis(10)).await;
    }
    panic!("job {id} did not finish");
}

#[tokio::test]
async fn ingest_reports_per_record_status() {
    let f = fixture();
    let body = json!({ "records": [
        serde_json::to_value(record("p1", "dup", "Acme", None)).unwrap(),
        { "product_id": "bad" },
        serde_json::to_value(record("p9", "New Eyeshadow", "Acme", None)).unwrap(),
    ]});
    let (s, v) = call(&f.app, Method::POST, "/v1/products", Some(body)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["count"], 1);
    let kinds: Vec<&str> = v["errors"].as_array().unwrap().iter().map(|e| e["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["DuplicateId", "MalformedRecord"]);
}

#[tokio::test]
async fn extract_equals_module_result_and_is_stored() {
    let f = fixture();
    let (s, v) = call(&f.app, Method::POST, "/v1/products/p1/extract?backend=reference", None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let direct = f.service.extract("p1", Some("reference")).unwrap();
    assert_eq!(v, serde_json::to_value(&direct).unwrap());
    assert_eq!(v["outcome"]["status"], "extracted");
    assert_eq!(v["outcome"]["properties"]["shades"].as_array().unwrap().len(), 4);

    let (s, props) = call(&f.app, Method::GET, "/v1/products/p1/properties", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(props["provenance"], "Pipeline");
    assert_eq!(props, serde_json::to_value(f.service.properties("p1").unwrap()).unwrap());
}

#[tokio::test]
async fn filtered_product_is_not_an_error() {
    let f = fixture();
    let (s, v) = call(&f.app, Method::POST, "/v1/products/p3/extract", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["outcome"]["status"], "filtered_out");
    assert_eq!(v["outcome"]["verdict"]["matched_keyword"], "makeup kit");
}

#[tokio::test]
async fn error_codes() {
    let f = fixture();
    let (s, v) = call(&f.app, Method::POST, "/v1/products/p1/extract?backend=nope", None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("Invalid")));
    let (s, v) = call(&f.app, Method::GET, "/v1/products/zzz/properties", None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("NotFound")));
    let (s, v) = call(&f.app, Method::GET, "/v1/products/p2/properties", None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("NotFound")));
    let (s, v) = call(&f.app, Method::GET, "/v1/jobs/job-404", None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("NotFound")));
    let (s, v) = call(&f.app, Method::GET, "/v2/anything", None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("NotFound")));
    let (s, v) = call(&f.app, Method::GET, "/v1/match/similar", None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("Invalid")));
}

#[tokio::test]
async fn override_history_and_conflict() {
    let f = fixture();
    call(&f.app, Method::POST, "/v1/products/p2/extract", None).await;
    let mut props = f.service.properties("p2").unwrap();
    props.shades[0].finish = FinishType::Shimmer;
    let body = json!({ "properties": props, "author": "ana" });
    let (s, v) = call(&f.app, Method::PUT, "/v1/products/p2/properties", Some(body)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let first = v["revision"].as_u64().unwrap();

    let (_, eff) = call(&f.app, Method::GET, "/v1/products/p2/properties", None).await;
    assert_eq!(eff["provenance"], "Override");
    assert_eq!(eff["shades"][0]["finish"], "Shimmer");

    props.shades[0].finish = FinishType::Metallic;
    let body = json!({ "properties": props, "author": "bo", "expected_revision": first });
    let (s, v) = call(&f.app, Method::PUT, "/v1/products/p2/properties", Some(body)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let stale = json!({ "properties": props, "author": "cy", "expected_revision": first });
    let (s, v) = call(&f.app, Method::PUT, "/v1/products/p2/properties", Some(stale)).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("Conflict")));

    let (_, revs) = call(&f.app, Method::GET, "/v1/products/p2/properties/revisions", None).await;
    let authors: Vec<&str> = revs.as_array().unwrap().iter().map(|r| r["author"].as_str().unwrap()).collect();
    assert_eq!(authors, ["ana", "bo"]);

    let mut bad = props.clone();
    bad.shades[0].finish = FinishType::Glitter;
    let (s, v) = call(&f.app, Method::PUT, "/v1/products/p2/properties", Some(json!({ "properties": bad }))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("Invalid")));
}

#[tokio::test]
async fn similar_defaults_to_limit_ten_and_matches_module() {
    let f = fixture();
    call(&f.app, Method::POST, "/v1/products/p1/extract", None).await;
    call(&f.app, Method::POST, "/v1/products/p2/extract", None).await;
    let (s, v) = call(&f.app, Method::GET, "/v1/match/similar?product=p2&shade=0", None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let catalog = MatchCatalog::from_store(&f.service.store, IndexMode::Linear);
    let q = MatchOptions::default().query(ColorSource::Shade { product_id: "p2".into(), shade_index: 0 });
    assert_eq!(q.max_delta_e, 10.0);
    assert_eq!(v, serde_json::to_value(catalog.similar_shades(&q).unwrap()).unwrap());
    let ids: Vec<&str> = v.as_array().unwrap().iter().map(|r| r["product_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["p1"]);
    assert!(v[0]["score"].as_f64().unwrap() <= 10.0);

    let (_, wide) = call(&f.app, Method::GET, "/v1/match/similar?color=%23808080&max_delta_e=300", None).await;
    let direct = f
        .service
        .similar(&SimilarParams {
            color: Some(RgbColor::new(128, 128, 128)),
            options: MatchOptions { max_delta_e: Some(300.0), ..Default::default() },
            ..Default::default()
        })
        .unwrap();
    assert_eq!(wide, serde_json::to_value(direct).unwrap());
    assert_eq!(wide.as_array().unwrap().len(), 5);

    let (_, stick) = call(&f.app, Method::GET, "/v1/match/similar?color=%23808080&max_delta_e=300&format=Stick", None).await;
    assert_eq!(stick, json!([]));
}

#[tokio::test]
async fn outfit_from_files_and_profile() {
    let f = fixture();
    call(&f.app, Method::POST, "/v1/products/p2/extract", None).await;
    let root = f.service.image_root.clone();
    let dress = synthetic::solid(16, 16, synthetic::SWATCH_PALETTE[0]);
    save(&root, "outfits/dress.png", &dress);
    let labels = vec![2u8; 256];
    SegmentationMask::from_labels(16, 16, &labels).unwrap().save_rgba(&root.join("outfits/dress_mask.png")).unwrap();

    let body = json!({ "image": "outfits/dress.png", "mask": "outfits/dress_mask.png", "region": "FullBody", "k": 3 });
    let (s, v) = call(&f.app, Method::POST, "/v1/match/outfit", Some(body)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v[0]["product_id"], "p2");
    assert!(v[0]["score"].as_f64().unwrap() < 1.0);

    let profile = f
        .service
        .outfit_profile(&serde_json::from_value(json!({ "image": "outfits/dress.png", "mask": "outfits/dress_mask.png", "region": "FullBody", "k": 3 })).unwrap())
        .unwrap();
    let (_, v2) = call(&f.app, Method::POST, "/v1/match/outfit", Some(json!({ "profile": profile }))).await;
    assert_eq!(v, v2);

    let (s, v) = call(&f.app, Method::POST, "/v1/match/outfit", Some(json!({ "image": "../etc/passwd", "mask": "x" }))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("Invalid")));
}

#[tokio::test]
async fn annotations_and_evaluation_job() {
    let f = fixture();
    let ann = json!([
        { "product_id": "p2", "shade_index": 0, "a1": "#C81E28", "a2": "#C81E28", "a3": "#C81E29",
          "finish": ["Matte", "Matte", "Shimmer"], "multi_shade": false },
        { "product_id": "p1", "shade_index": 0, "a1": "#C81E28", "a2": "#C01E28", "a3": "#C81E28",
          "finish": ["Matte", "Matte", "Matte"], "multi_shade": true }
    ]);
    let (s, v) = call(&f.app, Method::POST, "/v1/annotations", Some(ann)).await;
    assert_eq!((s, v["stored"].as_u64()), (StatusCode::OK, Some(2)));

    let (s, v) = call(&f.app, Method::POST, "/v1/evaluate", Some(json!({ "substitute": ["M3"], "group_by_brand": true }))).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");
    let job = wait_job(&f.app, v["job_id"].as_str().unwrap()).await;
    assert_eq!(job["status"], "succeeded", "{job}");
    let direct = f
        .service
        .evaluate(&EvaluateRequest { substitute: mpe_core::pipeline::Substitution::parse("m3").unwrap(), group_by_brand: true, ..Default::default() })
        .unwrap();
    assert_eq!(job["result"], serde_json::to_value(&direct).unwrap());
    assert_eq!(direct.mode, "GT M3");
    assert!(direct.metrics.detection_map.is_none());
    assert_eq!(direct.by_brand.len(), 2);
    assert!(direct.agreement.is_some());

    let (s, v) = call(&f.app, Method::POST, "/v1/evaluate", Some(json!({ "backend": "nope" }))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("Invalid")));
    let (_, v) = call(&f.app, Method::POST, "/v1/evaluate", Some(json!({ "ids": ["p3"] }))).await;
    let job = wait_job(&f.app, v["job_id"].as_str().unwrap()).await;
    assert_eq!(job["status"], "failed");
    assert_eq!(job["error"]["code"], "Invalid");
}

#[tokio::test]
async fn batch_extract_job() {
    let f = fixture();
    let (s, v) = call(&f.app, Method::POST, "/v1/extract", Some(json!({}))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let job = wait_job(&f.app, v["job_id"].as_str().unwrap()).await;
    assert_eq!(job["status"], "succeeded", "{job}");
    assert_eq!(job["progress"], json!({ "done": 3, "total": 3 }));
    let r = &job["result"];
    assert_eq!(r["p1"]["status"], "extracted");
    assert_eq!(r["p3"]["status"], "filtered_out");
    let (s, _) = call(&f.app, Method::GET, "/v1/products/p1/properties", None).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn pins_round_trip() {
    let f = fixture();
    call(&f.app, Method::POST, "/v1/products/p2/extract", None).await;
    let pin = json!({ "source": "dress-042", "product_id": "p2", "shade_index": 0, "author": "ana" });
    let (s, v) = call(&f.app, Method::POST, "/v1/pins", Some(pin)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let (_, v) = call(&f.app, Method::GET, "/v1/pins?source=dress-042", None).await;
    assert_eq!(v.as_array().unwrap().len(), 1);
    let (_, v) = call(&f.app, Method::GET, "/v1/pins?source=other", None).await;
    assert_eq!(v, json!([]));
    let bad = json!({ "source": "x", "product_id": "p2", "shade_index": 9, "author": "ana" });
    let (s, v) = call(&f.app, Method::POST, "/v1/pins", Some(bad)).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("Invalid")));
}

#[tokio::test]
async fn shared_token() {
    let f = fixture_with(Some("s3cret"));
    let (s, v) = call(&f.app, Method::GET, "/v1/health", None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNAUTHORIZED, Some("Invalid")));
    let (s, _) = call_with(&f.app, Method::GET, "/v1/health", None, Some("wrong")).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, v) = call_with(&f.app, Method::GET, "/v1/health", None, Some("s3cret")).await;
    assert_eq!((s, v["products"].as_u64()), (StatusCode::OK, Some(3)));
}

#[tokio::test]
async fn product_listing_and_gets_are_idempotent() {
    let f = fixture();
    let (_, a) = call(&f.app, Method::GET, "/v1/products?brand=beta", None).await;
    assert_eq!(a, json!(["p2", "p3"]));
    let (_, v1) = call(&f.app, Method::GET, "/v1/products/p1", None).await;
    let (_, v2) = call(&f.app, Method::GET, "/v1/products/p1", None).await;
    assert_eq!(v1, v2);
    assert_eq!(v1["record"]["title"], "Quad Eyeshadow Palette");
}
