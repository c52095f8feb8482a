//! Central-difference gradient checking.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    /// Finite-difference step applied to each coordinate.
    pub step: f64,
    /// Lower bound on the relative-error denominator, as a fraction of the
    /// largest analytic gradient magnitude. Coordinates with gradients far
    /// below that scale are judged on absolute error against it.
    pub relative_floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-3,
            relative_floor: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub relative_errors: Vec<f64>,
    pub max_relative_error: f64,
    pub worst_coordinate: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error <= tolerance
    }
}

impl GradCheck {
    pub fn with_step(step: f64) -> Self {
        Self {
            step,
            ..Self::default()
        }
    }

    /// Compare `analytic` (the reverse-mode gradient at `point`) against
    /// central differences of `value`.
    pub fn run<F>(&self, value: F, analytic: &Tensor, point: &Tensor) -> Result<GradCheckReport>
    where
        F: FnMut(&Tensor) -> Result<f64>,
    {
        self.run_scaled(value, analytic, point, analytic.max_abs() as f64)
    }

    /// As [`GradCheck::run`], with the floor taken relative to `scale`
    /// instead of the largest analytic coordinate.
    pub fn run_scaled<F>(&self, mut value: F, analytic: &Tensor, point: &Tensor, scale: f64) -> Result<GradCheckReport>
    where
        F: FnMut(&Tensor) -> Result<f64>,
    {
        if analytic.numel() != point.numel() {
            return Err(Error::dim(
                "grad_check",
                format!("gradient {:?} vs point {:?}", analytic.shape(), point.shape()),
            ));
        }
        let analytic: Vec<f64> = analytic.data().iter().map(|&v| v as f64).collect();
        let floor = (self.relative_floor * scale).max(1e-12);
        let mut numeric = Vec::with_capacity(point.numel());
        let mut relative_errors = Vec::with_capacity(point.numel());
        let mut probe = point.clone();
        for i in 0..point.numel() {
            let x0 = point.data()[i];
            probe.data_mut()[i] = (x0 as f64 + self.step) as f32;
            let hi_x = probe.data()[i] as f64;
            let hi = value(&probe)?;
            probe.data_mut()[i] = (x0 as f64 - self.step) as f32;
            let lo_x = probe.data()[i] as f64;
            let lo = value(&probe)?;
            probe.data_mut()[i] = x0;
            if !hi.is_finite() || !lo.is_finite() {
                return Err(Error::GradCheck { coordinate: i });
            }
            // Divide by the step actually representable in f32.
            let n = (hi - lo) / (hi_x - lo_x);
            let a = analytic[i];
            let denom = a.abs().max(n.abs()).max(floor);
            numeric.push(n);
            relative_errors.push((a - n).abs() / denom);
        }
        let (worst_coordinate, max_relative_error) = relative_errors
            .iter()
            .copied()
            .enumerate()
            .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
        Ok(GradCheckReport {
            analytic,
            numeric,
            relative_errors,
            max_relative_error,
            worst_coordinate,
        })
    }
}

/// Check `gradient(point)` against central differences of `value` with the
/// given step and the default relative floor.
pub fn grad_check<F, G>(value: F, gradient: G, point: &Tensor, step: f64) -> Result<GradCheckReport>
where
    F: FnMut(&Tensor) -> Result<f64>,
    G: FnOnce(&Tensor) -> Result<Tensor>,
{
    let analytic = gradient(point)?;
    GradCheck::with_step(step).run(value, &analytic, point)
}
