use rand::seq::SliceRandom;

use super::config::RunConfig;
use crate::autodiff::{Sgd, Tape, Tensor};
use crate::cam::{
    forward_cam, gap_predict, gmp_predict, importance_draws, pseudo_label, CamNetwork,
};
use crate::error::{Error, Result};
use crate::losses::{cls_loss, fsl, total_loss, FslParams, Pooling};
use crate::metrics::{EvalReport, MaskPair};
use crate::raster::{Mask, RgbImage};
use crate::rng::{derive_seed, rng_for, Rng};
use crate::synth::{generate, split, Scene};

// Stream identifiers for seed derivation.
const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_SAMPLE: u64 = 3;

/// Training and validation scenes of one configuration.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Scene>,
    pub val: Vec<Scene>,
}

impl Dataset {
    pub fn generate(cfg: &RunConfig) -> Result<Self> {
        let (train, val) = split(cfg.n_train, cfg.n_val)?;
        let build = |ids: Vec<u64>| {
            ids.into_iter()
                .map(|i| generate(&cfg.scene, i))
                .collect::<Result<Vec<_>>>()
        };
        Ok(Self {
            train: build(train)?,
            val: build(val)?,
        })
    }
}

/// Loss statistics of one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub cls: f64,
    pub fsl: f64,
    pub sigma: f64,
    pub mu: f64,
}

/// Learned parameters of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub network: CamNetwork,
    pub fsl: FslParams,
}

impl Model {
    pub fn init(cfg: &RunConfig) -> Result<Self> {
        Ok(Self {
            network: CamNetwork::new(cfg.network_shape(), derive_seed(cfg.seed, &[STREAM_INIT]))?,
            fsl: cfg.fsl_params()?,
        })
    }

    /// Per-pixel class probabilities `[H·W·K]` for `image`.
    pub fn predict(&self, image: &RgbImage) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.network.bind(&mut tape);
        let am = forward_cam(&mut tape, &bound, image)?;
        Ok(tape.value(am.probs).to_vec())
    }

    pub fn pseudo_label(&self, image: &RgbImage) -> Result<Mask> {
        let probs = self.predict(image)?;
        pseudo_label(
            &probs,
            image.width(),
            image.height(),
            self.network.classes(),
        )
    }
}

/// Outcome of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub trace: Vec<EpochStats>,
    /// Epochs at which the learned Gaussian extent outgrew the truncation
    /// radius (`3σ > radius`).
    pub sigma_warnings: Vec<usize>,
}

/// Loss terms of a single update.
struct StepLoss {
    total: f64,
    cls: f64,
    fsl: f64,
}

fn train_step(
    cfg: &RunConfig,
    model: &mut Model,
    opt: &mut Sgd,
    scene: &Scene,
    rng: &mut Rng,
) -> Result<StepLoss> {
    let mut tape = Tape::new();
    let bound = model.network.bind(&mut tape);
    let am = forward_cam(&mut tape, &bound, &scene.image)?;
    // Image-level labels only cover foreground; background, when included,
    // is taken to be present in every image.
    let first = usize::from(!cfg.background_loss);
    let supervised: Vec<usize> = (first..am.classes).collect();
    let mut labels = Vec::with_capacity(supervised.len());
    if cfg.background_loss {
        labels.push(1.0);
    }
    labels.extend_from_slice(&scene.labels);

    let pooled_all = match cfg.cls.pooling {
        Pooling::Gap => gap_predict(&mut tape, am.logits)?,
        Pooling::Gmp => gmp_predict(&mut tape, am.probs)?,
    };
    let pooled = tape.index_select(pooled_all, &supervised)?;
    let sampled = importance_draws(&mut tape, &am, &supervised, cfg.cls.n_samples, rng)?;
    let cls = cls_loss(&mut tape, &labels, pooled, sampled, cfg.cls.lambda)?;

    let (fsl_var, fsl_bound) = if cfg.fsl {
        let b = model.fsl.bind(&mut tape);
        (Some(fsl(&mut tape, am.probs, &scene.image, &b)?), Some(b))
    } else {
        (None, None)
    };
    let loss = total_loss(&mut tape, cls, fsl_var)?;
    let out = StepLoss {
        total: tape.item(loss),
        cls: tape.item(cls),
        fsl: fsl_var.map_or(0.0, |v| tape.item(v)),
    };
    if !out.total.is_finite() {
        return Err(Error::NonFinite {
            what: "training loss".into(),
        });
    }

    let grads = tape.backward(loss)?;
    model.network.accumulate(&bound, &grads);
    if let Some(b) = &fsl_bound {
        model.fsl.accumulate(b, &grads);
    }
    let mut params: Vec<&mut Tensor> = model.network.params_mut();
    if cfg.fsl {
        params.extend(model.fsl.params_mut());
    }
    opt.step(&mut params)?;
    Ok(out)
}

/// Trains a fresh model on `data` with per-image SGD updates.
///
/// Aborts with [`Error::NonFinite`] naming the epoch and scene when the loss
/// or a gradient stops being finite.
pub fn train(cfg: &RunConfig, data: &[Scene]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("no training scenes".into()));
    }
    let mut model = Model::init(cfg)?;
    let mut opt = Sgd::new(cfg.lr, cfg.momentum)?;
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut sigma_warnings = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng_for(cfg.seed, &[STREAM_SHUFFLE, epoch as u64]));
        let (mut total, mut cls, mut fsl_sum) = (0.0, 0.0, 0.0);
        for &i in &order {
            let mut rng = rng_for(cfg.seed, &[STREAM_SAMPLE, epoch as u64, i as u64]);
            let step =
                train_step(cfg, &mut model, &mut opt, &data[i], &mut rng).map_err(|e| match e {
                    Error::NonFinite { what } => Error::NonFinite {
                        what: format!("{what} (epoch {epoch}, training scene {i})"),
                    },
                    other => other,
                })?;
            total += step.total;
            cls += step.cls;
            fsl_sum += step.fsl;
        }
        let n = data.len() as f64;
        let stats = EpochStats {
            epoch,
            loss: total / n,
            cls: cls / n,
            fsl: fsl_sum / n,
            sigma: model.fsl.sigma(),
            mu: model.fsl.mu(),
        };
        log::info!(
            "epoch {epoch}: loss {:.5} (cls {:.5}, fsl {:.3e}) sigma {:.3} mu {:.3}",
            stats.loss,
            stats.cls,
            stats.fsl,
            stats.sigma,
            stats.mu
        );
        if cfg.fsl && 3.0 * stats.sigma > cfg.fsl_radius as f64 {
            // Reported once; later epochs are only recorded.
            if sigma_warnings.is_empty() {
                log::warn!(
                    "epoch {epoch}: sigma {:.3} puts 3 sigma beyond the truncation radius {}",
                    stats.sigma,
                    cfg.fsl_radius
                );
            }
            sigma_warnings.push(epoch);
        }
        trace.push(stats);
    }
    Ok(TrainOutcome {
        model,
        trace,
        sigma_warnings,
    })
}

/// Scores the pseudo-labels of `model` against the ground truth of `data`.
pub fn evaluate(cfg: &RunConfig, model: &Model, data: &[Scene]) -> Result<EvalReport> {
    let pairs = data
        .iter()
        .map(|s| MaskPair::new(model.pseudo_label(&s.image)?, s.gt.clone()))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::compute(&pairs, cfg.num_classes(), cfg.tolerance())
}
