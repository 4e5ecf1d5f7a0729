//! Empirical pixel frequencies of the per-class sampling pmf.

use camseg::cam::build_pmf;
use camseg::rng::rng_for;
use rand::Rng as _;

use crate::Outcome;

pub const MAPS: u64 = 10;
pub const DRAWS: usize = 100_000;
/// Allowed deviation in binomial standard deviations.
pub const SIGMAS: f64 = 4.0;
pub const REQUIRED_FRACTION: f64 = 0.99;

pub fn run() -> Outcome {
    let (h, w, k) = (8, 8, 3);
    let (mut within, mut total) = (0usize, 0usize);
    let mut worst: f64 = 0.0;
    for m in 0..MAPS {
        let mut rng = rng_for(0x5A, &[m]);
        let mut probs = Vec::with_capacity(h * w * k);
        for _ in 0..h * w {
            let e: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0f64..3.0).exp()).collect();
            let z: f64 = e.iter().sum();
            probs.extend(e.iter().map(|v| v / z));
        }
        for c in 0..k {
            let pmf = build_pmf(&probs, k, c).expect("valid map");
            let mut counts = vec![0usize; h * w];
            let mut draws = rng_for(0x5B, &[m, c as u64]);
            for _ in 0..DRAWS {
                counts[pmf.sample(&mut draws)] += 1;
            }
            for (p, &n) in pmf.mass().iter().zip(&counts) {
                let bound = SIGMAS * (p * (1.0 - p) / DRAWS as f64).sqrt();
                let dev = (n as f64 / DRAWS as f64 - p).abs();
                worst = worst.max(dev / bound.max(f64::MIN_POSITIVE));
                total += 1;
                within += usize::from(dev < bound);
            }
        }
    }
    let fraction = within as f64 / total as f64;
    Outcome {
        passed: fraction >= REQUIRED_FRACTION,
        detail: format!(
            "{within}/{total} pixel frequencies within {SIGMAS}σ over {DRAWS} draws \
             ({:.2}%, need {:.0}%); largest deviation {worst:.2}σ",
            100.0 * fraction,
            100.0 * REQUIRED_FRACTION
        ),
    }
}
