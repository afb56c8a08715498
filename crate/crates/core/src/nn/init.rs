//! Seeded weight initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// He-normal fan-in initialization for a conv/FC weight tensor:
/// N(0, sqrt(2/fan_in)), sampled via Box–Muller so only `rand`'s uniform
/// stream is consumed (keeps init independent of distribution crates).
pub fn he_normal(rng: &mut ChaCha8Rng, count: usize, fan_in: usize) -> Vec<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        out.push(std * r * theta.cos());
        if out.len() < count {
            out.push(std * r * theta.sin());
        }
    }
    out
}
