//! Deterministic k-means palette extraction.
//!
//! Seeding is farthest-point starting from the lexicographically smallest
//! pixel, so results depend only on the multiset of input pixels.

use std::collections::BTreeMap;

use crate::color::{delta_e, srgb_to_lab, ColorError, RgbColor, WeightedColor};

pub const MAX_CLUSTERS: usize = 8;
pub const MAX_ITERATIONS: usize = 100;
/// Largest per-centroid move (RGB channel units) that still counts as converged.
pub const CONVERGENCE_SHIFT: f64 = 0.5;
/// Final centroids closer than this (CIE76) are merged into one palette entry.
pub const MERGE_DELTA_E: f64 = 1.0;

type Point = [f64; 3];

fn sq_dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn to_point(c: RgbColor) -> Point {
    [f64::from(c.r), f64::from(c.g), f64::from(c.b)]
}

fn to_color(p: Point) -> RgbColor {
    let q = |v: f64| v.round().clamp(0.0, 255.0) as u8;
    RgbColor::new(q(p[0]), q(p[1]), q(p[2]))
}

/// Extracts up to `k` dominant colors, heaviest first, with weights summing to 1.
pub fn dominant_colors<I>(pixels: I, k: usize) -> Result<Vec<WeightedColor>, ColorError>
where
    I: IntoIterator<Item = RgbColor>,
{
    if !(1..=MAX_CLUSTERS).contains(&k) {
        return Err(ColorError::InvalidClusterCount(k));
    }
    // Distinct colors in lexicographic order, with multiplicities.
    let mut histogram: BTreeMap<RgbColor, u64> = BTreeMap::new();
    for p in pixels {
        *histogram.entry(p).or_default() += 1;
    }
    if histogram.is_empty() {
        return Err(ColorError::EmptyInput);
    }
    let colors: Vec<(Point, f64)> = histogram
        .iter()
        .map(|(c, n)| (to_point(*c), *n as f64))
        .collect();
    let total: f64 = colors.iter().map(|(_, n)| n).sum();

    let mut centroids = seed_farthest(&colors, k);
    let mut assignment = vec![0usize; colors.len()];
    for _ in 0..MAX_ITERATIONS {
        assign(&colors, &centroids, &mut assignment);
        let mut sums = vec![[0.0f64; 3]; centroids.len()];
        let mut counts = vec![0.0f64; centroids.len()];
        for ((p, n), &c) in colors.iter().zip(&assignment) {
            for ch in 0..3 {
                sums[c][ch] += p[ch] * n;
            }
            counts[c] += n;
        }
        let mut max_shift = 0.0f64;
        for (i, centroid) in centroids.iter_mut().enumerate() {
            if counts[i] == 0.0 {
                continue;
            }
            let next = [sums[i][0] / counts[i], sums[i][1] / counts[i], sums[i][2] / counts[i]];
            max_shift = max_shift.max(sq_dist(*centroid, next).sqrt());
            *centroid = next;
        }
        if max_shift < CONVERGENCE_SHIFT {
            break;
        }
    }
    assign(&colors, &centroids, &mut assignment);

    let mut counts = vec![0.0f64; centroids.len()];
    for ((_, n), &c) in colors.iter().zip(&assignment) {
        counts[c] += n;
    }
    let clusters: Vec<WeightedColor> = centroids
        .iter()
        .zip(&counts)
        .filter(|(_, n)| **n > 0.0)
        .map(|(c, n)| WeightedColor { color: to_color(*c), weight: n / total })
        .collect();
    Ok(merge_close(clusters))
}

fn seed_farthest(colors: &[(Point, f64)], k: usize) -> Vec<Point> {
    let mut seeds = vec![colors[0].0];
    let mut nearest: Vec<f64> = colors.iter().map(|(p, _)| sq_dist(*p, seeds[0])).collect();
    while seeds.len() < k {
        // First maximum in lexicographic order wins ties.
        let (idx, best) = nearest
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, d)| if *d > acc.1 { (i, *d) } else { acc });
        if best <= 0.0 {
            break;
        }
        let seed = colors[idx].0;
        seeds.push(seed);
        for (d, (p, _)) in nearest.iter_mut().zip(colors) {
            *d = d.min(sq_dist(*p, seed));
        }
    }
    seeds
}

fn assign(colors: &[(Point, f64)], centroids: &[Point], out: &mut [usize]) {
    for (slot, (p, _)) in out.iter_mut().zip(colors) {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in centroids.iter().enumerate() {
            let d = sq_dist(*p, *c);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        *slot = best;
    }
}

/// Heaviest-first merge: each cluster joins the first kept entry within
/// `MERGE_DELTA_E`, adding its weight and keeping the heavier color.
fn merge_close(mut clusters: Vec<WeightedColor>) -> Vec<WeightedColor> {
    sort_palette(&mut clusters);
    let mut kept: Vec<WeightedColor> = Vec::with_capacity(clusters.len());
    for c in clusters {
        let lab = srgb_to_lab(c.color);
        match kept
            .iter_mut()
            .find(|k| delta_e(srgb_to_lab(k.color), lab) <= MERGE_DELTA_E)
        {
            Some(k) => k.weight += c.weight,
            None => kept.push(c),
        }
    }
    sort_palette(&mut kept);
    kept
}

fn sort_palette(p: &mut [WeightedColor]) {
    p.sort_by(|a, b| b.weight.total_cmp(&a.weight).then(a.color.cmp(&b.color)));
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const RED: RgbColor = RgbColor::new(255, 0, 0);
    const BLUE: RgbColor = RgbColor::new(0, 0, 255);

    #[test]
    fn two_solid_halves() {
        let pixels = std::iter::repeat_n(RED, 500).chain(std::iter::repeat_n(BLUE, 500));
        let p = dominant_colors(pixels, 2).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].weight, 0.5);
        assert_eq!(p[1].weight, 0.5);
        // equal weights fall back to color order
        assert_eq!(p[0].color, BLUE);
        assert_eq!(p[1].color, RED);
    }

    #[test]
    fn uniform_collapses() {
        let gray = RgbColor::new(0x80, 0x80, 0x80);
        let p = dominant_colors(std::iter::repeat_n(gray, 64), 3).unwrap();
        assert_eq!(p, vec![WeightedColor { color: gray, weight: 1.0 }]);
    }

    #[test]
    fn errors() {
        assert_eq!(dominant_colors(Vec::new(), 3), Err(ColorError::EmptyInput));
        assert_eq!(dominant_colors(vec![RED], 0), Err(ColorError::InvalidClusterCount(0)));
        assert_eq!(dominant_colors(vec![RED], 9), Err(ColorError::InvalidClusterCount(9)));
    }

    #[test]
    fn near_duplicates_merge() {
        let a = RgbColor::new(100, 100, 100);
        let b = RgbColor::new(100, 100, 101);
        let p = dominant_colors(vec![a, a, a, b], 2).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].color, a);
        assert!((p[0].weight - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn exact_k_distinct(counts in prop::collection::vec(1usize..40, 1..=5)) {
            // Well separated palette entries.
            let palette = [RgbColor::new(250, 10, 10), RgbColor::new(10, 250, 10),
                RgbColor::new(10, 10, 250), RgbColor::new(240, 240, 20), RgbColor::new(30, 30, 30)];
            let mut pixels = Vec::new();
            for (c, n) in palette.iter().zip(&counts) {
                pixels.extend(std::iter::repeat_n(*c, *n));
            }
            let total = pixels.len() as f64;
            let p = dominant_colors(pixels, counts.len()).unwrap();
            prop_assert_eq!(p.len(), counts.len());
            for (c, n) in palette.iter().zip(&counts) {
                let e = p.iter().find(|w| w.color == *c).unwrap();
                prop_assert!((e.weight - *n as f64 / total).abs() < 1e-12);
            }
        }

        #[test]
        fn weights_sum_to_one(px in prop::collection::vec(any::<[u8; 3]>(), 1..300), k in 1usize..=8) {
            let p = dominant_colors(px.into_iter().map(RgbColor::from), k).unwrap();
            prop_assert!(p.len() <= k && !p.is_empty());
            let s: f64 = p.iter().map(|w| w.weight).sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
            prop_assert!(p.windows(2).all(|w| w[0].weight >= w[1].weight));
        }
    }
}
