//! Feature similarity loss: a pairwise term that pulls the class
//! distributions of nearby look-alike pixels together and pushes those of
//! nearby dissimilar pixels apart.
//!
//! For pixels `i`, `j` with positions `p`, RGB features `x` and class
//! distributions `a`:
//!
//! ```text
//! L = −1/(HW)² · Σ_ij w_ij · g(a_i, a_j) · f(δ_ij)
//! w_ij = exp(−|p_i − p_j|² / 2σ²) / (2πσ²)
//! g    = ½ |a_i − a_j|²
//! f    = tanh(μ + ln(δ / (1 − δ))),   δ = |x_i − x_j|₁ / 3
//! ```
//!
//! `σ` (through a softplus) and `μ` are learnable. Pairs farther apart than
//! the truncation radius (Chebyshev distance) are skipped; the normaliser
//! stays `1/(HW)²`.

use std::f64::consts::PI;

use crate::autodiff::{CustomOp, Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::raster::RgbImage;

/// Default clamp keeping `δ` away from the logit singularities at 0 and 1.
pub const DELTA_EPS: f64 = 1e-4;

/// `|x_i − x_j|₁ / 3` for RGB values in `[0, 1]`.
pub fn pixel_dissimilarity(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 3.0
}

fn delta_logit(delta: f64, eps: f64) -> f64 {
    let d = delta.clamp(eps, 1.0 - eps);
    (d / (1.0 - d)).ln()
}

/// `tanh(μ + logit(δ))` with `δ` clamped into `[eps, 1 − eps]`.
pub fn similarity_logit(delta: f64, mu: f64, eps: f64) -> f64 {
    (mu + delta_logit(delta, eps)).tanh()
}

/// Gaussian neighbourhood weight between pixel positions `(row, col)`, zero
/// beyond `radius` in Chebyshev distance.
pub fn gauss_weight(pi: (usize, usize), pj: (usize, usize), sigma: f64, radius: usize) -> f64 {
    let dy = pi.0.abs_diff(pj.0);
    let dx = pi.1.abs_diff(pj.1);
    if dy.max(dx) > radius {
        return 0.0;
    }
    let d2 = (dy * dy + dx * dx) as f64;
    (-d2 / (2.0 * sigma * sigma)).exp() / (2.0 * PI * sigma * sigma)
}

fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Learnable parameters and fixed settings of the feature similarity loss.
#[derive(Clone, Debug, PartialEq)]
pub struct FslParams {
    /// Unconstrained scalar; `σ = softplus(sigma_raw)`.
    pub sigma_raw: Tensor,
    pub mu: Tensor,
    pub radius: usize,
    pub eps_delta: f64,
}

/// Tape handles for [`FslParams`].
#[derive(Clone, Copy, Debug)]
pub struct BoundFsl {
    pub sigma_raw: Var,
    pub sigma: Var,
    pub mu: Var,
    pub radius: usize,
    pub eps_delta: f64,
}

impl Default for FslParams {
    fn default() -> Self {
        Self::new(3.0, 0.0, 5, DELTA_EPS).expect("valid defaults")
    }
}

impl FslParams {
    pub fn new(sigma: f64, mu: f64, radius: usize, eps_delta: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!(
                "fsl sigma must be positive, got {sigma}"
            )));
        }
        if radius == 0 {
            return Err(Error::Config("fsl radius must be at least 1".into()));
        }
        if !(eps_delta > 0.0 && eps_delta < 0.5) {
            return Err(Error::Config(format!(
                "fsl eps must lie in (0, 0.5), got {eps_delta}"
            )));
        }
        if !mu.is_finite() {
            return Err(Error::Config(format!("fsl mu must be finite, got {mu}")));
        }
        Ok(Self {
            sigma_raw: Tensor::scalar_param(softplus_inverse(sigma)),
            mu: Tensor::scalar_param(mu),
            radius,
            eps_delta,
        })
    }

    pub fn sigma(&self) -> f64 {
        let r = self.sigma_raw.item();
        if r > 30.0 {
            r
        } else {
            r.exp().ln_1p()
        }
    }

    pub fn mu(&self) -> f64 {
        self.mu.item()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundFsl {
        let sigma_raw = tape.leaf(&self.sigma_raw);
        let sigma = tape.softplus(sigma_raw);
        let mu = tape.leaf(&self.mu);
        BoundFsl {
            sigma_raw,
            sigma,
            mu,
            radius: self.radius,
            eps_delta: self.eps_delta,
        }
    }

    pub fn accumulate(&mut self, bound: &BoundFsl, grads: &Gradients) {
        grads.accumulate_into(bound.sigma_raw, &mut self.sigma_raw);
        grads.accumulate_into(bound.mu, &mut self.mu);
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.sigma_raw, &mut self.mu]
    }
}

/// Feature similarity loss with learnable `σ_raw` and `μ`.
pub fn fsl(tape: &mut Tape, probs: Var, image: &RgbImage, params: &BoundFsl) -> Result<Var> {
    fsl_with_sigma(
        tape,
        probs,
        image,
        params.sigma,
        params.mu,
        params.radius,
        params.eps_delta,
    )
}

/// Feature similarity loss taking `σ` itself (a positive scalar variable).
pub fn fsl_with_sigma(
    tape: &mut Tape,
    probs: Var,
    image: &RgbImage,
    sigma: Var,
    mu: Var,
    radius: usize,
    eps_delta: f64,
) -> Result<Var> {
    let shape = tape.shape(probs).to_vec();
    let [h, w, k] = shape[..] else {
        return Err(Error::shape(
            "fsl",
            format!("probabilities must be [H, W, K], got {shape:?}"),
        ));
    };
    if (image.height(), image.width()) != (h, w) {
        return Err(Error::shape(
            "fsl",
            format!("image {}x{} vs map {w}x{h}", image.width(), image.height()),
        ));
    }
    if tape.value(sigma).len() != 1 || tape.value(mu).len() != 1 {
        return Err(Error::shape("fsl", "sigma and mu must be scalars"));
    }
    if radius == 0 {
        return Err(Error::Config("fsl radius must be at least 1".into()));
    }
    let s = tape.item(sigma);
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::NonFinite {
            what: format!("fsl sigma = {s}"),
        });
    }

    let (value, op) = FslOp::evaluate(
        image,
        tape.value(probs),
        k,
        radius,
        eps_delta,
        s,
        tape.item(mu),
    );
    tape.custom(&[probs, sigma, mu], &[], vec![value], Box::new(op))
}

/// Half-plane neighbour offsets: every unordered pair is visited once.
fn half_offsets(radius: usize) -> Vec<(usize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dx in 1..=r {
        out.push((0, dx));
    }
    for dy in 1..=radius {
        for dx in -r..=r {
            out.push((dy, dx));
        }
    }
    out
}

/// `tanh(μ + ln r)` written as `(e^{2μ}r² − 1)/(e^{2μ}r² + 1)`, returned with
/// its derivative `1 − f²` with respect to `μ`.
fn similarity_from_ratio(r2: f64, e2mu: f64) -> (f64, f64) {
    let q = e2mu * r2;
    if !q.is_finite() {
        return (1.0, 0.0);
    }
    let f = (q - 1.0) / (q + 1.0);
    (f, 4.0 * q / ((q + 1.0) * (q + 1.0)))
}

/// Value and unit gradients of one feature similarity evaluation; the
/// backward pass only rescales them.
struct FslOp {
    d_probs: Vec<f64>,
    d_sigma: f64,
    d_mu: f64,
}

impl FslOp {
    /// Single pass over all pixel pairs within the truncation window.
    fn evaluate(
        image: &RgbImage,
        probs: &[f64],
        k: usize,
        radius: usize,
        eps: f64,
        sigma: f64,
        mu: f64,
    ) -> (f64, Self) {
        let (h, w) = (image.height(), image.width());
        let rgb = image.data();
        let e2mu = (2.0 * mu).exp();
        let n = (h * w) as f64;
        // unordered pairs are visited once, hence the factor 2
        let c = -2.0 / (n * n);

        let mut value = 0.0;
        let mut d_probs = vec![0.0; probs.len()];
        let (mut d_sigma, mut d_mu) = (0.0, 0.0);
        for (dy, dx) in half_offsets(radius) {
            if dy >= h || dx.unsigned_abs() >= w {
                continue;
            }
            let d2 = (dy * dy) as f64 + (dx * dx) as f64;
            let wt = (-d2 / (2.0 * sigma * sigma)).exp() / (2.0 * PI * sigma * sigma);
            let dwt = wt * (d2 / (sigma * sigma * sigma) - 2.0 / sigma);
            let s = c * wt;
            let x0 = if dx < 0 { dx.unsigned_abs() } else { 0 };
            let x1 = if dx > 0 { w - dx as usize } else { w };
            let (mut sum_gf, mut sum_gdf) = (0.0, 0.0);
            for y in 0..h - dy {
                for x in x0..x1 {
                    let i = y * w + x;
                    let j = (y + dy) * w + (x as isize + dx) as usize;
                    let (xi, xj) = (&rgb[3 * i..3 * i + 3], &rgb[3 * j..3 * j + 3]);
                    let delta =
                        ((xi[0] - xj[0]).abs() + (xi[1] - xj[1]).abs() + (xi[2] - xj[2]).abs())
                            / 3.0;
                    let d = delta.clamp(eps, 1.0 - eps);
                    let r = d / (1.0 - d);
                    let (f, df) = similarity_from_ratio(r * r, e2mu);

                    let sf = s * f;
                    let (ai, aj) = (&probs[i * k..i * k + k], &probs[j * k..j * k + k]);
                    // j > i for half-plane offsets
                    let (head, tail) = d_probs.split_at_mut(j * k);
                    let (gi, gj) = (&mut head[i * k..i * k + k], &mut tail[..k]);
                    let mut g = 0.0;
                    for t in 0..k {
                        let diff = ai[t] - aj[t];
                        g += diff * diff;
                        gi[t] += sf * diff;
                        gj[t] -= sf * diff;
                    }
                    g *= 0.5;
                    sum_gf += g * f;
                    sum_gdf += g * df;
                }
            }
            value += s * sum_gf;
            d_sigma += c * dwt * sum_gf;
            d_mu += s * sum_gdf;
        }
        (
            value,
            Self {
                d_probs,
                d_sigma,
                d_mu,
            },
        )
    }
}

impl CustomOp for FslOp {
    fn name(&self) -> &'static str {
        "fsl"
    }

    fn backward(
        &self,
        _inputs: &[&[f64]],
        _output: &[f64],
        out_grad: &[f64],
        wants: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let g = out_grad[0];
        vec![
            wants[0].then(|| self.d_probs.iter().map(|v| v * g).collect()),
            wants[1].then(|| vec![self.d_sigma * g]),
            wants[2].then(|| vec![self.d_mu * g]),
        ]
    }
}
