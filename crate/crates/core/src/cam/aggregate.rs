//! Pixel-to-image aggregation of class activation maps: average pooling on
//! logits, max pooling on probabilities, and importance sampling from the
//! activation-induced distribution over pixels.

use rand::Rng as _;

use super::network::ActivationMap;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::raster::Mask;
use crate::rng::Rng;

/// `logistic(mean_ij s_ijk)` for every class, from logits `[H, W, K]`.
pub fn gap_predict(tape: &mut Tape, logits: Var) -> Result<Var> {
    let (rows, k) = flat_dims(tape, logits)?;
    let flat = tape.reshape(logits, &[rows, k])?;
    let mean = tape.mean_axis0(flat)?;
    Ok(tape.logistic(mean))
}

/// `max_ij a_ijk` for every class, from probabilities `[H, W, K]`.
/// Gradient reaches only the arg-max pixel (lowest pixel index on ties).
pub fn gmp_predict(tape: &mut Tape, probs: Var) -> Result<Var> {
    let (rows, k) = flat_dims(tape, probs)?;
    let flat = tape.reshape(probs, &[rows, k])?;
    tape.max_axis0(flat)
}

fn flat_dims(tape: &Tape, v: Var) -> Result<(usize, usize)> {
    match tape.shape(v) {
        [h, w, k] if h * w > 0 => Ok((h * w, *k)),
        s => Err(Error::shape(
            "pooling",
            format!("expected [H, W, K], got {s:?}"),
        )),
    }
}

/// Probability mass over pixels for one class, proportional to that class's
/// activation.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassPmf {
    class: usize,
    mass: Vec<f64>,
    cumulative: Vec<f64>,
    normalizer: f64,
}

impl ClassPmf {
    pub fn class(&self) -> usize {
        self.class
    }

    /// Normalised mass per pixel.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Sum of the class activation over all pixels.
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// Draws a pixel index by inverting the cumulative distribution.
    pub fn sample(&self, rng: &mut Rng) -> usize {
        let u = rng.gen::<f64>() * self.normalizer;
        let i = self.cumulative.partition_point(|&c| c <= u);
        // u can round onto the final cumulative value; fall back to the
        // last pixel with positive mass
        if i < self.cumulative.len() {
            i
        } else {
            self.mass.iter().rposition(|&m| m > 0.0).unwrap_or(0)
        }
    }
}

/// Builds the pixel pmf of class `k` from flat probabilities `[H·W·K]`.
pub fn build_pmf(probs: &[f64], classes: usize, k: usize) -> Result<ClassPmf> {
    if k >= classes {
        return Err(Error::shape(
            "build_pmf",
            format!("class {k} out of range for {classes} classes"),
        ));
    }
    if classes == 0 || !probs.len().is_multiple_of(classes) || probs.is_empty() {
        return Err(Error::shape(
            "build_pmf",
            format!("{} values for {classes} classes", probs.len()),
        ));
    }
    let mut cumulative = Vec::with_capacity(probs.len() / classes);
    let mut z = 0.0;
    for px in probs.chunks_exact(classes) {
        z += px[k];
        cumulative.push(z);
    }
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::NonFinite {
            what: format!("pmf normalizer for class {k} is {z}"),
        });
    }
    let mass = probs.chunks_exact(classes).map(|px| px[k] / z).collect();
    Ok(ClassPmf {
        class: k,
        mass,
        cumulative,
        normalizer: z,
    })
}

/// Draws `n_samples` pixels i.i.d. (with replacement) for each listed class.
///
/// Returns flat indices into the `[H·W·K]` probability array, laid out
/// sample-major: entry `s·C + c` is draw `s` for `classes[c]`.
pub fn sample_indices(
    probs: &[f64],
    num_classes: usize,
    classes: &[usize],
    n_samples: usize,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be at least 1".into()));
    }
    let pmfs = classes
        .iter()
        .map(|&k| build_pmf(probs, num_classes, k))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(n_samples * classes.len());
    for _ in 0..n_samples {
        for pmf in &pmfs {
            out.push(pmf.sample(rng) * num_classes + pmf.class);
        }
    }
    Ok(out)
}

/// Sampled activations `[n_samples, classes.len()]`. The sampled pixel
/// positions are constants; gradient flows through the read values only.
pub fn importance_draws(
    tape: &mut Tape,
    am: &ActivationMap,
    classes: &[usize],
    n_samples: usize,
    rng: &mut Rng,
) -> Result<Var> {
    let idx = sample_indices(tape.value(am.probs), am.classes, classes, n_samples, rng)?;
    let picked = tape.index_select(am.probs, &idx)?;
    tape.reshape(picked, &[n_samples, classes.len()])
}

/// Stochastic image-level prediction `[K]`: for every class, the mean
/// activation over `n_samples` pixels drawn from that class's pmf.
pub fn importance_sample(
    tape: &mut Tape,
    am: &ActivationMap,
    n_samples: usize,
    rng: &mut Rng,
) -> Result<Var> {
    let all: Vec<usize> = (0..am.classes).collect();
    let draws = importance_draws(tape, am, &all, n_samples, rng)?;
    tape.mean_axis0(draws)
}

/// Per-pixel arg-max class; the lowest class index wins ties.
pub fn pseudo_label(probs: &[f64], width: usize, height: usize, classes: usize) -> Result<Mask> {
    if classes == 0 || classes > 255 || probs.len() != width * height * classes {
        return Err(Error::shape(
            "pseudo_label",
            format!("{} values for {width}x{height}x{classes}", probs.len()),
        ));
    }
    let labels = probs
        .chunks_exact(classes)
        .map(|px| {
            let mut best = 0;
            for (k, &p) in px.iter().enumerate().skip(1) {
                if p > px[best] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    Mask::new(width, height, labels)
}
