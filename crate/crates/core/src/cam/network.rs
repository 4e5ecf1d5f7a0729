use rand_distr::{Distribution, Normal};

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::raster::RgbImage;
use crate::rng::rng_for;

/// Size of the CAM network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetworkShape {
    /// Channels of every hidden layer.
    pub hidden: usize,
    /// Number of 3×3 convolution + ReLU layers before the 1×1 classifier.
    pub conv_layers: usize,
    /// Output classes including background (index 0).
    pub classes: usize,
}

impl Default for NetworkShape {
    fn default() -> Self {
        Self {
            hidden: 8,
            conv_layers: 3,
            classes: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct ConvLayer {
    kernel: Tensor,
    bias: Tensor,
}

/// A small fully convolutional network mapping an RGB image to per-pixel
/// class logits of the same spatial size.
#[derive(Clone, Debug, PartialEq)]
pub struct CamNetwork {
    shape: NetworkShape,
    layers: Vec<ConvLayer>,
}

/// Tape handles for one forward pass of a [`CamNetwork`].
#[derive(Clone, Debug)]
pub struct BoundNetwork {
    layers: Vec<(Var, Var)>,
}

/// Logits and pixel-wise softmax probabilities, both `[H, W, K]`.
#[derive(Clone, Copy, Debug)]
pub struct ActivationMap {
    pub logits: Var,
    pub probs: Var,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
}

impl ActivationMap {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

impl CamNetwork {
    /// He-initialised network; weights are a pure function of `seed`.
    pub fn new(shape: NetworkShape, seed: u64) -> Result<Self> {
        if shape.classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes (background + 1), got {}",
                shape.classes
            )));
        }
        if shape.hidden == 0 || shape.conv_layers == 0 {
            return Err(Error::Config(
                "network needs at least one hidden layer".into(),
            ));
        }
        let mut rng = rng_for(seed, &[0x6e6574]);
        let mut layers = Vec::with_capacity(shape.conv_layers + 1);
        let mut cin = 3;
        for l in 0..=shape.conv_layers {
            let (k, cout) = if l < shape.conv_layers {
                (3, shape.hidden)
            } else {
                (1, shape.classes)
            };
            let fan_in = (k * k * cin) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            let n = k * k * cin * cout;
            let kernel = Tensor::param(
                &[k, k, cin, cout],
                (0..n).map(|_| normal.sample(&mut rng)).collect(),
            )?;
            let bias = Tensor::param(&[cout], vec![0.0; cout])?;
            layers.push(ConvLayer { kernel, bias });
            cin = cout;
        }
        Ok(Self { shape, layers })
    }

    pub fn shape(&self) -> NetworkShape {
        self.shape
    }

    pub fn classes(&self) -> usize {
        self.shape.classes
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.kernel, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.kernel, &mut l.bias])
            .collect()
    }

    /// Rebuilds a network from tensors in [`CamNetwork::params`] order.
    pub fn from_params(shape: NetworkShape, params: Vec<Tensor>) -> Result<Self> {
        let template = Self::new(shape, 0)?;
        let expected: Vec<Vec<usize>> = template
            .params()
            .iter()
            .map(|t| t.shape().to_vec())
            .collect();
        let got: Vec<Vec<usize>> = params.iter().map(|t| t.shape().to_vec()).collect();
        if expected != got {
            return Err(Error::shape(
                "from_params",
                format!("expected {expected:?}, got {got:?}"),
            ));
        }
        let mut it = params.into_iter();
        let mut layers = Vec::new();
        while let (Some(mut kernel), Some(mut bias)) = (it.next(), it.next()) {
            kernel.set_requires_grad(true);
            bias.set_requires_grad(true);
            layers.push(ConvLayer { kernel, bias });
        }
        Ok(Self { shape, layers })
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundNetwork {
        BoundNetwork {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.leaf(&l.kernel), tape.leaf(&l.bias)))
                .collect(),
        }
    }

    /// Adds the gradients of a bound copy back into the parameters.
    pub fn accumulate(&mut self, bound: &BoundNetwork, grads: &Gradients) {
        for (layer, (k, b)) in self.layers.iter_mut().zip(&bound.layers) {
            grads.accumulate_into(*k, &mut layer.kernel);
            grads.accumulate_into(*b, &mut layer.bias);
        }
    }
}

/// Runs the network on `image` and applies the pixel-wise softmax.
pub fn forward_cam(tape: &mut Tape, net: &BoundNetwork, image: &RgbImage) -> Result<ActivationMap> {
    let (h, w) = (image.height(), image.width());
    // centre inputs around zero
    let centred = image.data().iter().map(|v| v - 0.5).collect();
    let mut x = tape.constant(&[h, w, 3], centred)?;
    let last = net.layers.len() - 1;
    for (i, &(k, b)) in net.layers.iter().enumerate() {
        x = tape.conv2d(x, k, Some(b))?;
        if i < last {
            x = tape.relu(x);
        }
    }
    if let Some(i) = tape.value(x).iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: format!("CAM logits at flat index {i}"),
        });
    }
    let classes = tape.shape(x)[2];
    let probs = tape.softmax(x)?;
    Ok(ActivationMap {
        logits: x,
        probs,
        height: h,
        width: w,
        classes,
    })
}

/// Pixel-wise softmax over precomputed logits `[H, W, K]` (used when the
/// logits come from somewhere other than a [`CamNetwork`]).
pub fn activation_from_logits(tape: &mut Tape, logits: Var) -> Result<ActivationMap> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 3 || shape[2] < 2 {
        return Err(Error::shape("activation_from_logits", format!("{shape:?}")));
    }
    let probs = tape.softmax(logits)?;
    Ok(ActivationMap {
        logits,
        probs,
        height: shape[0],
        width: shape[1],
        classes: shape[2],
    })
}
