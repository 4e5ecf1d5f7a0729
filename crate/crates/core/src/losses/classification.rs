use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Probability clamp applied before taking logarithms in the BCE.
pub const BCE_EPS: f64 = 1e-7;

/// Deterministic aggregation paired with the sampled prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pooling {
    /// Average pooling of logits followed by the logistic function.
    Gap,
    /// Max pooling of probabilities.
    Gmp,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Gap => "gap",
            Pooling::Gmp => "gmp",
        })
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gap" => Ok(Pooling::Gap),
            "gmp" => Ok(Pooling::Gmp),
            other => Err(Error::Config(format!(
                "unknown pooling '{other}' (expected gap or gmp)"
            ))),
        }
    }
}

/// Settings of the classification loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClsLossConfig {
    /// Weight of the sampled term; `0` is pure pooling, `1` pure sampling.
    pub lambda: f64,
    pub pooling: Pooling,
    /// Pixels drawn per class and image.
    pub n_samples: usize,
}

impl Default for ClsLossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            pooling: Pooling::Gmp,
            n_samples: 1,
        }
    }
}

impl ClsLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must lie in [0,1], got {}",
                self.lambda
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mean binary cross-entropy between labels `y` and predictions `q`.
///
/// `q` may hold several stacked prediction vectors (e.g. one per sampled
/// pixel set); `y` is tiled to match and the result is the average of the
/// per-vector losses. Predictions are clamped to `[ε, 1−ε]`.
pub fn bce_multi(tape: &mut Tape, y: &[f64], q: Var) -> Result<Var> {
    let n = tape.value(q).len();
    if y.is_empty() || n == 0 || !n.is_multiple_of(y.len()) {
        return Err(Error::shape(
            "bce_multi",
            format!("{} labels against {} predictions", y.len(), n),
        ));
    }
    let shape = tape.shape(q).to_vec();
    let pos: Vec<f64> = y.iter().copied().cycle().take(n).collect();
    let neg: Vec<f64> = pos.iter().map(|v| 1.0 - v).collect();
    let pos = tape.constant(&shape, pos)?;
    let neg = tape.constant(&shape, neg)?;

    let qc = tape.clamp(q, BCE_EPS, 1.0 - BCE_EPS);
    let log_q = tape.log(qc);
    let flipped = tape.scale(qc, -1.0);
    let one_minus = tape.offset(flipped, 1.0);
    let log_1q = tape.log(one_minus);
    let a = tape.mul(log_q, pos)?;
    let b = tape.mul(log_1q, neg)?;
    let s = tape.add(a, b)?;
    let m = tape.mean(s);
    Ok(tape.scale(m, -1.0))
}

/// `(1−λ)·bce(y, pooled) + λ·bce(y, sampled)`.
pub fn cls_loss(tape: &mut Tape, y: &[f64], pooled: Var, sampled: Var, lambda: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!(
            "lambda must lie in [0,1], got {lambda}"
        )));
    }
    let a = bce_multi(tape, y, pooled)?;
    let b = bce_multi(tape, y, sampled)?;
    let wa = tape.scale(a, 1.0 - lambda);
    let wb = tape.scale(b, lambda);
    tape.add(wa, wb)
}

/// `cls + fsl` when the feature similarity term is enabled.
pub fn total_loss(tape: &mut Tape, cls: Var, fsl: Option<Var>) -> Result<Var> {
    match fsl {
        Some(f) => tape.add(cls, f),
        None => Ok(cls),
    }
}
