use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gaussians::GaussianScene;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorStrategy {
    #[default]
    Random,
    FarthestPoint,
    SpatialColorKmeans,
}

const KMEANS_ITERATIONS: usize = 25;

fn dist2<const D: usize>(a: &[f32; D], b: &[f32; D]) -> f64 {
    (0..D).map(|k| (a[k] as f64 - b[k] as f64).powi(2)).sum()
}

/// Greedy max–min selection of `n` points starting from `start`; ties go
/// to the lowest position.
pub fn farthest_point_sampling<const D: usize>(points: &[[f32; D]], n: usize, start: usize) -> Vec<usize> {
    let n = n.min(points.len());
    if n == 0 {
        return Vec::new();
    }
    let mut chosen = vec![start];
    let mut min_d: Vec<f64> = points.iter().map(|p| dist2(p, &points[start])).collect();
    while chosen.len() < n {
        let mut best = 0;
        for i in 1..points.len() {
            if min_d[i] > min_d[best] {
                best = i;
            }
        }
        chosen.push(best);
        for (i, p) in points.iter().enumerate() {
            min_d[i] = min_d[i].min(dist2(p, &points[best]));
        }
    }
    chosen
}

/// `n ≤ N` anchors as positions into `canonical` (the canonically ordered scene).
pub(crate) fn select(
    strategy: AnchorStrategy,
    scene: &GaussianScene,
    canonical: &[usize],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let total = canonical.len();
    match strategy {
        AnchorStrategy::Random => rand::seq::index::sample(rng, total, n).into_vec(),
        AnchorStrategy::FarthestPoint => {
            let pts: Vec<[f32; 3]> = canonical.iter().map(|&i| scene.mu()[i]).collect();
            let start = rng.gen_range(0..total);
            farthest_point_sampling(&pts, n, start)
        }
        AnchorStrategy::SpatialColorKmeans => {
            let feats = kmeans_features(scene, canonical);
            let start = rng.gen_range(0..total);
            kmeans_anchors(&feats, n, start)
        }
    }
}

/// `[0.5·(μ − centroid)/radius, 0.5·c]` per primitive.
fn kmeans_features(scene: &GaussianScene, canonical: &[usize]) -> Vec<[f32; 6]> {
    let c = scene.centroid();
    let radius = scene
        .mu()
        .iter()
        .map(|m| dist2(m, &c).sqrt())
        .fold(0.0f64, f64::max);
    let radius = if radius > 0.0 { radius } else { 1.0 };
    canonical
        .iter()
        .map(|&i| {
            let m = scene.mu()[i];
            let col = scene.color()[i];
            [
                (0.5 * (m[0] as f64 - c[0] as f64) / radius) as f32,
                (0.5 * (m[1] as f64 - c[1] as f64) / radius) as f32,
                (0.5 * (m[2] as f64 - c[2] as f64) / radius) as f32,
                0.5 * col[0],
                0.5 * col[1],
                0.5 * col[2],
            ]
        })
        .collect()
}

fn kmeans_anchors(feats: &[[f32; 6]], n: usize, start: usize) -> Vec<usize> {
    let mut centroids: Vec<[f32; 6]> = farthest_point_sampling(feats, n, start)
        .into_iter()
        .map(|i| feats[i])
        .collect();
    let mut assign = vec![usize::MAX; feats.len()];
    for _ in 0..KMEANS_ITERATIONS {
        let mut changed = false;
        for (i, f) in feats.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in centroids.iter().enumerate() {
                let d = dist2(f, c);
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![[0f64; 6]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (f, &a) in feats.iter().zip(&assign) {
            counts[a] += 1;
            for k in 0..6 {
                sums[a][k] += f[k] as f64;
            }
        }
        for (j, c) in centroids.iter_mut().enumerate() {
            if counts[j] > 0 {
                *c = sums[j].map(|s| (s / counts[j] as f64) as f32);
            }
        }
    }
    let mut used = vec![false; feats.len()];
    centroids
        .iter()
        .map(|c| {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for (i, f) in feats.iter().enumerate() {
                let d = dist2(f, c);
                if !used[i] && d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            used[best] = true;
            best
        })
        .collect()
}
