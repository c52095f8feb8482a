//! Image error, point-set geometry checks and runtime scaling fits.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussians::GaussianScene;
use crate::rasterizer::Image;

/// Reported in place of +∞ for identical images.
pub const PSNR_CAP: f64 = 99.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    /// Threshold or tolerance the value is judged against, free text.
    pub tolerance: String,
    /// Hex digest of the inputs.
    pub inputs: String,
}

impl MetricReport {
    pub fn new(name: impl Into<String>, value: f64, tolerance: impl Into<String>, inputs: impl Into<String>) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::Input("metric value must be finite".into()));
        }
        Ok(Self {
            name: name.into(),
            value,
            tolerance: tolerance.into(),
            inputs: inputs.into(),
        })
    }

    pub fn csv_header() -> &'static str {
        "name,value,tolerance,inputs"
    }

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.name, self.value, self.tolerance.replace(',', ";"), self.inputs)
    }
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// Mean squared error over all channels and PSNR for unit-range images.
pub fn mse_psnr(a: &Image, b: &Image) -> Result<(f64, f64)> {
    let mse = a.mse(b)?;
    Ok((mse, psnr_from_mse(mse)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChamferReport {
    /// Average of the two directed mean squared nearest-neighbour distances.
    pub chamfer: f64,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

/// Points sorted by x for a pruned nearest-neighbour sweep.
struct SweepIndex {
    pts: Vec<[f64; 3]>,
}

impl SweepIndex {
    fn new(points: &[[f32; 3]]) -> Self {
        let mut pts: Vec<[f64; 3]> = points.iter().map(|p| p.map(f64::from)).collect();
        pts.sort_by(|a, b| a[0].total_cmp(&b[0]));
        Self { pts }
    }

    fn nearest_sq(&self, q: [f64; 3]) -> f64 {
        let start = self.pts.partition_point(|p| p[0] < q[0]);
        let mut best = f64::INFINITY;
        let d2 = |p: &[f64; 3]| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>();
        for p in &self.pts[start..] {
            if (p[0] - q[0]).powi(2) > best {
                break;
            }
            best = best.min(d2(p));
        }
        for p in self.pts[..start].iter().rev() {
            if (p[0] - q[0]).powi(2) > best {
                break;
            }
            best = best.min(d2(p));
        }
        best
    }
}

/// Chamfer distance and F-score at `tau` on the μ point sets.
pub fn chamfer_fscore(a: &GaussianScene, b: &GaussianScene, tau: f64) -> Result<ChamferReport> {
    chamfer_points(a.mu(), b.mu(), tau)
}

pub fn chamfer_points(a: &[[f32; 3]], b: &[[f32; 3]], tau: f64) -> Result<ChamferReport> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Input("chamfer needs two non-empty point sets".into()));
    }
    let directed = |from: &[[f32; 3]], to: &SweepIndex| {
        let mut sum = 0.0;
        let mut hits = 0usize;
        for p in from {
            let d = to.nearest_sq(p.map(f64::from));
            sum += d;
            if d <= tau * tau {
                hits += 1;
            }
        }
        (sum / from.len() as f64, hits as f64 / from.len() as f64)
    };
    let (ab, recall) = directed(a, &SweepIndex::new(b));
    let (ba, precision) = directed(b, &SweepIndex::new(a));
    let fscore = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ChamferReport {
        chamfer: 0.5 * (ab + ba),
        precision,
        recall,
        fscore,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// 1 when every y is equal.
    pub r2: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Input("linear fit needs ≥ 2 paired samples".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Input("linear fit needs distinct x values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(LinearFit { slope, intercept, r2 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearityReport {
    pub sizes: Vec<usize>,
    /// Median seconds per size.
    pub seconds: Vec<f64>,
    pub fit: LinearFit,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Median wall-clock of `op(size)` over `repeats` runs per size, and a
/// least-squares line through (size, seconds). `setup` runs untimed.
pub fn runtime_linearity<S, F>(sizes: &[usize], repeats: usize, mut setup: impl FnMut(usize) -> Result<S>, mut op: F) -> Result<LinearityReport>
where
    F: FnMut(&S) -> Result<()>,
{
    if sizes.len() < 3 {
        return Err(Error::Input("runtime_linearity needs at least 3 sizes".into()));
    }
    let repeats = repeats.max(1);
    let mut seconds = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let state = setup(n)?;
        let mut runs = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let t = Instant::now();
            op(&state)?;
            runs.push(t.elapsed().as_secs_f64());
        }
        seconds.push(median(runs));
    }
    let x: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let fit = linear_fit(&x, &seconds)?;
    Ok(LinearityReport {
        sizes: sizes.to_vec(),
        seconds,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_edges() {
        assert_eq!(psnr_from_mse(0.0), PSNR_CAP);
        assert_eq!(psnr_from_mse(1.0), 0.0);
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn single_points() {
        let r = chamfer_points(&[[0.0; 3]], &[[0.0, 0.0, 0.02]], 0.01).unwrap();
        assert!((r.chamfer - 0.0004).abs() < 1e-9);
        assert_eq!(r.fscore, 0.0);
        let r = chamfer_points(&[[0.0; 3]], &[[0.0, 0.005, 0.0]], 0.01).unwrap();
        assert_eq!(r.fscore, 1.0);
    }

    #[test]
    fn exact_line() {
        let f = linear_fit(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_is_error() {
        assert!(chamfer_points(&[], &[[0.0; 3]], 0.01).is_err());
        assert!(runtime_linearity(&[1, 2], 1, |_| Ok(()), |_| Ok(())).is_err());
    }
}
