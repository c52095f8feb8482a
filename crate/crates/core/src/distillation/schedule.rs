use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diffusion noise schedule with `ᾱ_t = Π_{i≤t} (1 − β_i)`, `ᾱ_0 = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl TryFrom<Vec<f64>> for NoiseSchedule {
    type Error = Error;

    fn try_from(betas: Vec<f64>) -> Result<Self> {
        Self::from_betas(betas)
    }
}

impl From<NoiseSchedule> for Vec<f64> {
    fn from(s: NoiseSchedule) -> Self {
        s.betas
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(50, 1e-4, 0.02).expect("default schedule")
    }
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Schedule { t: 0, detail: "no steps".into() });
        }
        let mut alpha_bar = Vec::with_capacity(betas.len() + 1);
        alpha_bar.push(1.0);
        for (i, &b) in betas.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Schedule {
                    t: i + 1,
                    detail: format!("β = {b} is outside (0, 1)"),
                });
            }
            alpha_bar.push(alpha_bar[i] * (1.0 - b));
        }
        Ok(Self { betas, alpha_bar })
    }

    /// `T` betas evenly spaced from `start` to `end`.
    pub fn linear(steps: usize, start: f64, end: f64) -> Result<Self> {
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    start
                } else {
                    start + (end - start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// DDPM-matching `σ_t = √((1−ᾱ_{t−1})/(1−ᾱ_t)) · √(1 − ᾱ_t/ᾱ_{t−1})`.
    /// Zero at `t = 1`.
    pub fn sigma(&self, t: usize) -> f64 {
        let (a, prev) = (self.alpha_bar[t], self.alpha_bar[t - 1]);
        ((1.0 - prev) / (1.0 - a)).sqrt() * (1.0 - a / prev).max(0.0).sqrt()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Schedule {
                t,
                detail: format!("timestep outside 1..={}", self.steps()),
            });
        }
        Ok(())
    }
}

/// `ε_φ(x_t, t, condition)`.
pub trait NoisePredictor {
    fn predict(&self, x: &[f64], t: usize, condition: &[f64]) -> Vec<f64>;
}

impl<F: Fn(&[f64], usize, &[f64]) -> Vec<f64>> NoisePredictor for F {
    fn predict(&self, x: &[f64], t: usize, condition: &[f64]) -> Vec<f64> {
        self(x, t, condition)
    }
}

fn checked_predict<P: NoisePredictor + ?Sized>(p: &P, x: &[f64], t: usize, cond: &[f64]) -> Result<Vec<f64>> {
    let e = p.predict(x, t, cond);
    if e.len() != x.len() {
        return Err(Error::dim("noise_predictor", format!("{} values for a {}-value latent", e.len(), x.len())));
    }
    Ok(e)
}

/// Deterministic update `x_t → x_{t−1}`.
pub fn ddim_step<P: NoisePredictor + ?Sized>(
    x: &[f64],
    t: usize,
    predictor: &P,
    condition: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    schedule.check_t(t)?;
    let e = checked_predict(predictor, x, t, condition)?;
    let (a, prev) = (schedule.alpha_bar(t), schedule.alpha_bar(t - 1));
    let (sa, sp) = (a.sqrt(), prev.sqrt());
    let (s1a, s1p) = ((1.0 - a).sqrt(), (1.0 - prev).sqrt());
    Ok(x.iter().zip(&e).map(|(&xi, &ei)| sp * (xi - s1a * ei) / sa + s1p * ei).collect())
}

/// Full deterministic chain from `x_T` to `x_0`.
pub fn ddim_sample<P: NoisePredictor + ?Sized>(
    x_t: &[f64],
    predictor: &P,
    condition: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let mut x = x_t.to_vec();
    for t in (1..=schedule.steps()).rev() {
        x = ddim_step(&x, t, predictor, condition, schedule)?;
    }
    Ok(x)
}

/// Noised latents and the correction noises that make the stochastic
/// sampler land on them.
#[derive(Clone, Debug, PartialEq)]
pub struct Inversion {
    /// `x_0 ..= x_T`.
    pub latents: Vec<Vec<f64>>,
    /// `noises[t − 1]` is `ε̃_t`. The `t = 1` entry is the raw residual
    /// `x_0 − x̃_0` because `σ_1 = 0`.
    pub noises: Vec<Vec<f64>>,
}

impl Inversion {
    pub fn x_t(&self) -> &[f64] {
        self.latents.last().expect("at least x_0")
    }
}

/// Mean of `x_{t−1}` given `x_t` with the variance split of the stochastic
/// sampler.
fn predicted_previous(x: &[f64], e: &[f64], t: usize, schedule: &NoiseSchedule) -> Vec<f64> {
    let (a, prev) = (schedule.alpha_bar(t), schedule.alpha_bar(t - 1));
    let sigma = schedule.sigma(t);
    let ratio = (prev / a).sqrt();
    let s1a = (1.0 - a).sqrt();
    let dir = (1.0 - prev - sigma * sigma).max(0.0).sqrt();
    x.iter().zip(e).map(|(&xi, &ei)| ratio * (xi - s1a * ei) + dir * ei).collect()
}

/// Scale applied to `ε̃_t`; the terminal step uses the residual directly.
fn correction_scale(t: usize, schedule: &NoiseSchedule) -> Result<f64> {
    if t == 1 {
        return Ok(1.0);
    }
    let s = schedule.sigma(t);
    if s <= 0.0 || !s.is_finite() {
        return Err(Error::Schedule {
            t,
            detail: format!("σ_t = {s} cannot carry a correction noise"),
        });
    }
    Ok(s)
}

pub fn ddpm_invert<P: NoisePredictor + ?Sized>(
    x0: &[f64],
    predictor: &P,
    condition: &[f64],
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Inversion> {
    let steps = schedule.steps();
    let scales = (1..=steps).map(|t| correction_scale(t, schedule)).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut latents = vec![x0.to_vec()];
    for t in 1..=steps {
        let a = schedule.alpha_bar(t);
        let (sa, s1a) = (a.sqrt(), (1.0 - a).sqrt());
        latents.push(
            x0.iter()
                .map(|&v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sa * v + s1a * z
                })
                .collect(),
        );
    }
    let mut noises = Vec::with_capacity(steps);
    for t in 1..=steps {
        let e = checked_predict(predictor, &latents[t], t, condition)?;
        let tilde = predicted_previous(&latents[t], &e, t, schedule);
        noises.push(
            latents[t - 1]
                .iter()
                .zip(&tilde)
                .map(|(&x, &p)| (x - p) / scales[t - 1])
                .collect(),
        );
    }
    Ok(Inversion { latents, noises })
}

/// Stochastic-sampler recursion from `x_T` with recorded noises under a
/// (possibly new) condition.
pub fn ddpm_edit_replay<P: NoisePredictor + ?Sized>(
    x_t: &[f64],
    noises: &[Vec<f64>],
    predictor: &P,
    condition: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let steps = schedule.steps();
    if noises.len() != steps {
        return Err(Error::Input(format!(
            "replay needs {steps} correction noises, got {} (level {} missing)",
            noises.len(),
            noises.len() + 1
        )));
    }
    if let Some(t) = noises.iter().position(|n| n.len() != x_t.len()) {
        return Err(Error::Input(format!("correction noise at level {} has the wrong length", t + 1)));
    }
    let mut x = x_t.to_vec();
    for t in (1..=steps).rev() {
        let scale = correction_scale(t, schedule)?;
        let e = checked_predict(predictor, &x, t, condition)?;
        let mut next = predicted_previous(&x, &e, t, schedule);
        for (v, n) in next.iter_mut().zip(&noises[t - 1]) {
            *v += scale * n;
        }
        x = next;
    }
    Ok(x)
}
