use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mpe_core::catalog::{ImageRef, ProductRecord};
use mpe_core::color::RgbColor;
use mpe_core::properties::{BoundingBox, Category, FinishType, Format, MaterialProperties, Provenance, ShadeProperties};
use mpe_core::synthetic::{self, SWATCH_PALETTE};
use serde_json::Value;

const EXE: &str = env!("CARGO_BIN_EXE_mpe");

fn mpe(args: &[&str]) -> Output {
    let out = Command::new(EXE).args(args).env_remove("MPE_BACKEND").env_remove("MPE_TOKEN").output().unwrap();
    assert!(out.status.success(), "mpe {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn setup(root: &Path) {
    let cat = root.join("catalog");
    fs::create_dir_all(cat.join("p1")).unwrap();
    fs::create_dir_all(cat.join("p2")).unwrap();
    let (grid, boxes) = synthetic::swatch_grid(120, 60, 2, 1, RgbColor::WHITE);
    grid.save(cat.join("p1/0.png")).unwrap();
    synthetic::centered_swatch(80, 80, SWATCH_PALETTE[5], RgbColor::WHITE).save(cat.join("p2/0.png")).unwrap();
    let gt = MaterialProperties {
        format: Format::Powder,
        shades: boxes
            .iter()
            .zip(SWATCH_PALETTE)
            .map(|(b, c)| ShadeProperties { region: *b, base_color: c, finish: FinishType::Matte, reflective_color: None })
            .collect(),
        best_image_position: 0,
        provenance: Provenance::GroundTruth,
    };
    let rec = |id: &str, title: &str, brand: &str, gt: Option<MaterialProperties>| ProductRecord {
        product_id: id.into(),
        title: title.into(),
        description: String::new(),
        brand: brand.into(),
        category: Category::Eyeshadow,
        images: vec![ImageRef { position: 0, uri: format!("{id}/0.png"), width: 120, height: 80 }],
        ground_truth: gt,
        overrides: None,
    };
    let single = MaterialProperties {
        shades: vec![ShadeProperties {
            region: BoundingBox::from_corners(0.25, 0.25, 0.75, 0.75, 1.0),
            base_color: SWATCH_PALETTE[5],
            finish: FinishType::Matte,
            reflective_color: None,
        }],
        ..gt.clone()
    };
    let lines: Vec<String> = [
        rec("p1", "Duo Eyeshadow", "Acme", Some(gt)),
        rec("p2", "Teal Eyeshadow", "Beta", Some(single)),
        rec("p3", "Neon Eyeshadow", "Beta", None),
    ]
    .iter()
    .map(|r| serde_json::to_string(r).unwrap())
    .collect();
    fs::write(root.join("products.jsonl"), lines.join("\n")).unwrap();
}

fn read_dir_json(dir: &Path) -> Vec<(String, Value)> {
    let mut out: Vec<(String, Value)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| !p.to_string_lossy().ends_with(".trace.json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), serde_json::from_slice(&fs::read(&p).unwrap()).unwrap()))
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[test]
fn ingest_extract_match_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    setup(root);
    let cat = root.join("catalog");
    let cat = cat.to_str().unwrap();
    let s = |p: &Path| p.to_str().unwrap().to_string();

    let report = stdout_json(&mpe(&["ingest", "--catalog", cat, &s(&root.join("products.jsonl"))]));
    assert_eq!(report["count"], 3);

    let out = root.join("out");
    mpe(&["extract", "--catalog", cat, "--out", &s(&out), "--parallel", "2", "--trace"]);
    let results = read_dir_json(&out);
    assert_eq!(results.iter().map(|r| r.0.as_str()).collect::<Vec<_>>(), ["p1.json", "p2.json", "p3.json"]);
    assert_eq!(results[0].1["status"], "extracted");
    assert_eq!(results[0].1["properties"]["shades"].as_array().unwrap().len(), 2);
    assert_eq!(results[2].1["status"], "filtered_out");
    let trace: Value = serde_json::from_slice(&fs::read(out.join("p1.trace.json")).unwrap()).unwrap();
    assert!(trace["stages"].as_array().unwrap().iter().all(|s| s["elapsed_us"].is_u64()));

    let hex = SWATCH_PALETTE[1].to_hex();
    let recs = stdout_json(&mpe(&["match", "--catalog", cat, "--from", &hex]));
    assert_eq!((recs[0]["product_id"].as_str(), recs[0]["shade_index"].as_u64()), (Some("p1"), Some(1)));
    let recs = stdout_json(&mpe(&["match", "--catalog", cat, "--from", "p1:1", "--max-delta-e", "200", "--brand", "Beta"]));
    assert_eq!(recs.as_array().unwrap().len(), 1);
    assert_eq!(recs[0]["product_id"], "p2");

    let json = root.join("reports.json");
    let table = mpe(&[
        "evaluate", "--catalog", cat, "--substitute", "none", "--substitute", "m1,m3", "--group-by", "brand", "--json", &s(&json),
    ]);
    let table = String::from_utf8(table.stdout).unwrap();
    assert!(table.contains("NO GT") && table.contains("GT M1 + M3"), "{table}");
    let reports: Value = serde_json::from_slice(&fs::read(&json).unwrap()).unwrap();
    assert_eq!(reports[0]["metrics"]["detection_map"], 1.0);
    assert!(reports[1]["metrics"]["detection_map"].is_null());
}

#[test]
fn adapter_backend_through_serve_predictor() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    setup(root);
    let cat = root.join("catalog");
    let cat = cat.to_str().unwrap();
    mpe(&["ingest", "--catalog", cat, root.join("products.jsonl").to_str().unwrap()]);

    let local = root.join("local");
    let remote = root.join("remote");
    mpe(&["extract", "--catalog", cat, "--out", local.to_str().unwrap()]);
    let backend = format!("adapter:{EXE} serve-predictor");
    mpe(&["extract", "--catalog", cat, "--backend", &backend, "--out", remote.to_str().unwrap()]);
    let local = read_dir_json(&local);
    assert_eq!(local.len(), 3);
    assert_eq!(local, read_dir_json(&remote));
}

#[test]
fn bad_arguments_fail_cleanly() {
    let out = Command::new(EXE).args(["match", "--catalog", "/nonexistent-catalog-dir", "--from", "nonsense"]).output().unwrap();
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}
