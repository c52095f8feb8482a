//! Time `predict` on random scenes of growing size.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varfield::gaussians::{GaussianScene, Primitive};
use varfield::predictor::{DecodeMode, Predictor, PredictorConfig};

fn scene(n: usize, seed: u64) -> GaussianScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GaussianScene::from_primitives((0..n).map(|_| {
        Primitive::isotropic(
            std::array::from_fn(|_| rng.gen_range(-1.0..1.0)),
            rng.gen_range(0.01..0.1),
            rng.gen_range(0.1..0.9),
            std::array::from_fn(|_| rng.gen_range(0.0..1.0)),
        )
    }))
    .unwrap()
}

fn main() -> varfield::Result<()> {
    let predictor = Predictor::new(PredictorConfig::default())?;
    for n in [5_000, 10_000, 20_000] {
        let s = scene(n, n as u64);
        let start = Instant::now();
        let v = predictor.predict(&s, "make it golden", 1, DecodeMode::Iterative)?;
        println!("N = {n:>6}: {:.3} s (max |Δ| = {})", start.elapsed().as_secs_f64(), v.max_abs());
    }
    Ok(())
}
