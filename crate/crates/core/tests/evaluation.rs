use std::sync::Arc;

use image::RgbImage;
use mpe_core::catalog::{ImageRef, ProductRecord};
use mpe_core::color::{delta_e_rgb, scale_reflective, NormalizedRgb, RgbColor};
use mpe_core::eval::{
    evaluate_pipeline, render_table, AnnotationRecord, DeltaEHistogram, EvalError, EvalOptions, StageMetrics,
};
use mpe_core::pipeline::{ModelStage, Pipeline, PipelineConfig, Substitution};
use mpe_core::predict::mock::{MockBackend, MockScript};
use mpe_core::predict::{MemoryImageSource, PredictorSuite};
use mpe_core::properties::{
    BoundingBox, Category, FinishType, Format, MaterialProperties, Provenance, ShadeCount, ShadeProperties,
};

fn regions(n: usize) -> Vec<BoundingBox> {
    (0..n)
        .map(|i| {
            let x0 = 0.05 + 0.3 * i as f64;
            BoundingBox::from_corners(x0, 0.2, x0 + 0.25, 0.7, 0.95 - 0.1 * i as f64)
        })
        .collect()
}

fn truth(i: usize) -> MaterialProperties {
    let n = 1 + i % 3;
    let finishes = [FinishType::Matte, FinishType::Glitter, FinishType::Shimmer, FinishType::Metallic];
    let shades = regions(n)
        .into_iter()
        .enumerate()
        .map(|(k, region)| {
            let finish = finishes[(i + k) % finishes.len()];
            ShadeProperties {
                region,
                base_color: RgbColor::new((40 * i + 30 * k) as u8, (90 + 7 * k) as u8, (200 - 11 * i) as u8),
                finish,
                reflective_color: (finish == FinishType::Glitter).then(|| RgbColor::new(250, 200 + k as u8, 170)),
            }
        })
        .collect();
    MaterialProperties {
        format: [Format::Powder, Format::Cream, Format::Liquid][i % 3],
        shades,
        best_image_position: i % 2,
        provenance: Provenance::GroundTruth,
    }
}

fn product(i: usize) -> ProductRecord {
    let id = format!("p{i}");
    ProductRecord {
        product_id: id.clone(),
        title: format!("Eyeshadow Shade {i}"),
        description: String::new(),
        brand: ["Acme", "Beta"][i % 2].into(),
        category: Category::Eyeshadow,
        images: (0..2).map(|k| ImageRef { position: k, uri: format!("{id}/{k}.png"), width: 50, height: 50 }).collect(),
        ground_truth: Some(truth(i)),
        overrides: None,
    }
}

fn unscale(c: RgbColor) -> NormalizedRgb {
    let n = c.to_normalized();
    NormalizedRgb::new((n.r - 0.6) / 0.4, (n.g - 0.6) / 0.4, (n.b - 0.6) / 0.4)
}

/// A script whose every answer equals the product's ground truth, with the
/// base color optionally replaced.
fn replay(products: &[ProductRecord], base: impl Fn(RgbColor) -> RgbColor) -> MockScript {
    let mut s = MockScript::default();
    for p in products {
        let gt = p.ground_truth.as_ref().unwrap();
        let [u0, u1] = [&p.images[0].uri, &p.images[1].uri];
        s = s.preference(u1, u0, gt.best_image_position == 1, 0.9);
        let best = &p.images[gt.best_image_position].uri;
        let count = if gt.shades.len() == 1 { ShadeCount::Single } else { ShadeCount::Multi };
        s = s
            .format(best, &[(gt.format, 0.9)])
            .shades(best, gt.shades.iter().map(|x| x.region).collect())
            .shade_count(best, &[(count, 0.9)]);
        for (k, shade) in gt.shades.iter().enumerate() {
            let crop = format!("{best}#shade{k}");
            s = s.base_color(&crop, base(shade.base_color).to_normalized()).finish(&crop, &[(shade.finish, 0.9)]);
            if let Some(r) = shade.reflective_color {
                s = s.reflective_color(&crop, unscale(r));
            }
        }
    }
    s
}

fn pipeline(products: &[ProductRecord], script: MockScript) -> Pipeline {
    let mut images = MemoryImageSource::new();
    for p in products {
        for img in &p.images {
            images.insert(img.uri.clone(), RgbImage::new(50, 50));
        }
    }
    Pipeline::new(PredictorSuite::from_backend(Arc::new(MockBackend::new(script))), Arc::new(images), PipelineConfig::default())
}

fn products(n: usize) -> Vec<ProductRecord> {
    (0..n).map(product).collect()
}

fn options(stages: &[ModelStage]) -> EvalOptions {
    EvalOptions { substitution: Substitution::of(stages), ..Default::default() }
}

#[test]
fn unscale_round_trips_through_reflective_scaling() {
    for c in [RgbColor::new(250, 200, 170), RgbColor::new(153, 153, 153), RgbColor::WHITE] {
        assert_eq!(scale_reflective(unscale(c)).to_rgb(), c);
    }
}

#[test]
fn replaying_ground_truth_scores_perfectly() {
    let ps = products(12);
    let pl = pipeline(&ps, replay(&ps, |c| c));
    let r = evaluate_pipeline(&ps, &pl, &[], &EvalOptions::default()).unwrap();
    assert_eq!(r.mode, "NO GT");
    assert_eq!((r.outcomes.total, r.outcomes.extracted), (12, 12));
    let m = &r.metrics;
    assert_eq!(m.selection_accuracy, Some(1.0));
    assert_eq!(m.format.as_ref().unwrap().f1.macro_f1, 1.0);
    assert_eq!(m.finish.as_ref().unwrap().f1.macro_f1, 1.0);
    assert_eq!(m.detection_map, Some(1.0));
    assert_eq!(m.base_color.as_ref().unwrap().mean_delta_e, 0.0);
    let refl = m.reflective_color.as_ref().unwrap();
    assert!(refl.count > 0);
    assert_eq!(refl.mean_delta_e, 0.0);
    assert_eq!(m.unmatched_shades, 0);
}

/// The 8-bit color within ±8 per channel of `c` whose deltaE to it is closest to 5.
fn offset_by_five(c: RgbColor) -> RgbColor {
    let ch = |v: u8, d: i16| (i16::from(v) + d).clamp(0, 255) as u8;
    let mut best = c;
    for dr in -8..=8 {
        for dg in -8..=8 {
            for db in -8..=8 {
                let x = RgbColor::new(ch(c.r, dr), ch(c.g, dg), ch(c.b, db));
                if (delta_e_rgb(x, c) - 5.0).abs() < (delta_e_rgb(best, c) - 5.0).abs() {
                    best = x;
                }
            }
        }
    }
    best
}

#[test]
fn fixed_base_color_offset_is_reported() {
    // one shared GT color so every shade carries the same offset
    let gray = RgbColor::new(120, 120, 120);
    let mut ps = products(6);
    for p in &mut ps {
        for s in &mut p.ground_truth.as_mut().unwrap().shades {
            s.base_color = gray;
        }
    }
    let shifted = offset_by_five(gray);
    let offset = delta_e_rgb(shifted, gray);
    assert!((offset - 5.0).abs() < 1e-3, "{offset}");

    let pl = pipeline(&ps, replay(&ps, |_| shifted));
    let r = evaluate_pipeline(&ps, &pl, &[], &options(&[ModelStage::M3])).unwrap();
    let base = r.metrics.base_color.unwrap();
    assert!((base.mean_delta_e - offset).abs() < 1e-12);
    assert!(base.variance.abs() < 1e-24);
    assert_eq!(base.histogram, DeltaEHistogram { le_3: 0, from_3_to_12: base.count as u64, over_12: 0 });
    assert_eq!(r.metrics.detection_map, None);
}

fn comparable(a: &StageMetrics, b: &StageMetrics) -> usize {
    let mut compared = 0;
    macro_rules! cmp {
        ($f:ident) => {
            if let (Some(x), Some(y)) = (&a.$f, &b.$f) {
                assert_eq!(x, y, stringify!($f));
                compared += 1;
            }
        };
    }
    cmp!(selection_accuracy);
    cmp!(format);
    cmp!(detection_map);
    cmp!(base_color);
    cmp!(finish);
    cmp!(reflective_color);
    compared
}

#[test]
fn ground_truth_replay_is_a_fixed_point_of_substitution() {
    let ps = products(9);
    let pl = pipeline(&ps, replay(&ps, |c| c));
    let baseline = evaluate_pipeline(&ps, &pl, &[], &EvalOptions::default()).unwrap();
    let modes: [&[ModelStage]; 4] = [
        &[ModelStage::M1],
        &[ModelStage::M1, ModelStage::M3],
        &[ModelStage::M1, ModelStage::M3, ModelStage::M5],
        &ModelStage::ALL,
    ];
    for stages in modes {
        let r = evaluate_pipeline(&ps, &pl, &[], &options(stages)).unwrap();
        assert_eq!(r.outcomes, baseline.outcomes);
        let n = comparable(&r.metrics, &baseline.metrics);
        assert_eq!(n, 6 - stages.len());
    }
    let all = evaluate_pipeline(&ps, &pl, &[], &options(&ModelStage::ALL)).unwrap();
    assert_eq!(all.metrics, StageMetrics::default());
    for p in &ps {
        let a = pl.extract(p);
        let b = pl.extract_substituted(p, &Substitution::of(&ModelStage::ALL));
        let (a, b) = (a.outcome.properties().unwrap(), b.outcome.properties().unwrap());
        assert_eq!(a.shades.iter().map(|s| (s.base_color, s.finish, s.reflective_color)).collect::<Vec<_>>(),
                   b.shades.iter().map(|s| (s.base_color, s.finish, s.reflective_color)).collect::<Vec<_>>());
    }
}

#[test]
fn substituted_stages_are_absent() {
    let ps = products(4);
    let pl = pipeline(&ps, replay(&ps, |c| c));
    let r = evaluate_pipeline(&ps, &pl, &[], &options(&[ModelStage::M1, ModelStage::M3, ModelStage::M5])).unwrap();
    assert_eq!(r.mode, "GT M1 + M3 + M5");
    assert!(r.metrics.selection_accuracy.is_none());
    assert!(r.metrics.detection_map.is_none());
    assert!(r.metrics.finish.is_none());
    assert!(r.metrics.format.is_some());
    assert!(r.metrics.base_color.is_some());
}

#[test]
fn per_brand_rows_and_table() {
    let ps = products(6);
    let pl = pipeline(&ps, replay(&ps, |c| c));
    let grouped = EvalOptions { group_by_brand: true, parallelism: 3, ..Default::default() };
    let r = evaluate_pipeline(&ps, &pl, &[], &grouped).unwrap();
    assert_eq!(r.by_brand.keys().map(String::as_str).collect::<Vec<_>>(), ["Acme", "Beta"]);
    let sub = evaluate_pipeline(&ps, &pl, &[], &options(&[ModelStage::M1, ModelStage::M3])).unwrap();
    let table = render_table(&[r, sub]);
    assert!(table.contains("NO GT"));
    assert!(table.contains("GT M1 + M3"));
    assert!(table.contains("Acme"));
    assert!(table.contains("NA"));
}

#[test]
fn missing_ground_truth_is_an_error() {
    let mut ps = products(3);
    ps[1].ground_truth = None;
    let pl = pipeline(&ps[..1], replay(&ps[..1], |c| c));
    let err = evaluate_pipeline(&ps, &pl, &[], &EvalOptions::default()).unwrap_err();
    assert_eq!(err, EvalError::MissingGroundTruth("p1".into()));
}

#[test]
fn agreement_uses_pipeline_predictions() {
    let ps = products(3);
    let pl = pipeline(&ps, replay(&ps, |c| c));
    let gt0 = ps[0].ground_truth.as_ref().unwrap().shades[0].base_color;
    let ann = vec![
        AnnotationRecord {
            product_id: "p0".into(),
            shade_index: 0,
            a1: Some(gt0),
            a2: Some(gt0),
            a3: Some(gt0),
            finish: vec![FinishType::Matte, FinishType::Matte, FinishType::Shimmer],
            format: vec![Format::Powder; 3],
            multi_shade: Some(false),
            prediction: None,
        },
        AnnotationRecord {
            product_id: "p1".into(),
            shade_index: 0,
            a1: None,
            a2: None,
            a3: None,
            finish: vec![FinishType::Glitter, FinishType::Glitter, FinishType::Glitter],
            format: vec![Format::Cream; 3],
            multi_shade: Some(true),
            prediction: None,
        },
    ];
    let r = evaluate_pipeline(&ps, &pl, &ann, &EvalOptions::default()).unwrap();
    let agreement = r.agreement.unwrap();
    let single = agreement.consistency.single;
    assert_eq!(single.count, 1);
    assert_eq!(single.d_hc.unwrap().mean, 0.0);
    assert_eq!(single.d_ml.unwrap().mean, 0.0);
    assert_eq!(agreement.consistency.multi.count, 0);
    assert!(agreement.finish_kappa.unwrap().value.is_some());
    // every annotator picked one format per item and the items differ
    assert_eq!(agreement.format_kappa.unwrap().value, Some(1.0));
}

#[test]
fn histogram_bucket_edges() {
    let h = DeltaEHistogram::from_values([2.0, 2.9, 3.0, 5.0, 13.0]);
    assert_eq!((h.le_3, h.from_3_to_12, h.over_12), (3, 1, 1));
}
