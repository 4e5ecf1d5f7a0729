//! Run configuration and its flat `key = value` text format.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::cam::NetworkShape;
use crate::error::{Error, Result};
use crate::losses::{ClsLossConfig, FslParams, Pooling, DELTA_EPS};
use crate::metrics::default_tolerance;
use crate::synth::{BackgroundKind, ClassStyle, SceneSpec, ShapeKind};

/// Everything a training run depends on. A run is a pure function of its
/// configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scene: SceneSpec,
    pub n_train: usize,
    pub n_val: usize,
    pub hidden: usize,
    pub conv_layers: usize,
    pub cls: ClsLossConfig,
    /// Treat background as a class present in every image in the
    /// classification loss.
    pub background_loss: bool,
    pub fsl: bool,
    pub fsl_sigma: f64,
    pub fsl_mu: f64,
    pub fsl_radius: usize,
    pub fsl_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Contour matching tolerance in pixels; `None` derives it from the
    /// image diagonal.
    pub eval_tol: Option<usize>,
    pub seed: u64,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            n_train: 500,
            n_val: 100,
            hidden: 8,
            conv_layers: 3,
            cls: ClsLossConfig::default(),
            background_loss: false,
            fsl: false,
            fsl_sigma: 3.0,
            fsl_mu: 0.0,
            fsl_radius: 5,
            fsl_eps: DELTA_EPS,
            epochs: 30,
            batch_size: 1,
            lr: 0.003,
            momentum: 0.9,
            eval_tol: None,
            seed: 1,
            output: PathBuf::from("runs/default"),
        }
    }
}

/// Every recognised key, in serialisation order.
pub const KEYS: &[&str] = &[
    "width",
    "height",
    "class_colors",
    "class_shapes",
    "class_jitter",
    "backgrounds",
    "background_color",
    "background_color2",
    "texture_noise",
    "background_noise",
    "objects_min",
    "objects_max",
    "size_min",
    "size_max",
    "data_seed",
    "n_train",
    "n_val",
    "hidden",
    "conv_layers",
    "lambda",
    "pooling",
    "n_samples",
    "background_loss",
    "fsl",
    "fsl_sigma",
    "fsl_mu",
    "fsl_radius",
    "fsl_eps",
    "epochs",
    "batch_size",
    "lr",
    "momentum",
    "eval_tol",
    "seed",
    "output",
];

fn join_rgb(c: &[f64; 3]) -> String {
    format!("{} {} {}", c[0], c[1], c[2])
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_rgb(key: &str, v: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = v
        .split_whitespace()
        .map(|p| parse_num(key, p))
        .collect::<Result<_>>()?;
    <[f64; 3]>::try_from(parts)
        .map_err(|_| Error::Config(format!("{key}: expected three numbers, got '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got '{v}'"
        ))),
    }
}

fn groups(v: &str) -> Vec<&str> {
    v.split(';').map(str::trim).collect()
}

impl RunConfig {
    pub fn num_classes(&self) -> usize {
        self.scene.num_classes()
    }

    pub fn network_shape(&self) -> NetworkShape {
        NetworkShape {
            hidden: self.hidden,
            conv_layers: self.conv_layers,
            classes: self.num_classes(),
        }
    }

    pub fn tolerance(&self) -> usize {
        self.eval_tol
            .unwrap_or_else(|| default_tolerance(self.scene.width, self.scene.height))
    }

    pub fn fsl_params(&self) -> Result<FslParams> {
        FslParams::new(self.fsl_sigma, self.fsl_mu, self.fsl_radius, self.fsl_eps)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.cls.validate()?;
        self.fsl_params()?;
        if self.n_train == 0 || self.n_val == 0 {
            return Err(Error::Config("n_train and n_val must be at least 1".into()));
        }
        if self.hidden == 0 || self.conv_layers == 0 {
            return Err(Error::Config(
                "network needs hidden >= 1 and conv_layers >= 1".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size != 1 {
            return Err(Error::Config(format!(
                "only per-image updates are supported (batch_size = 1), got {}",
                self.batch_size
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0,1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }

    /// Current value of `key` in its textual form.
    pub fn get(&self, key: &str) -> Result<String> {
        let s = &self.scene;
        Ok(match key {
            "width" => s.width.to_string(),
            "height" => s.height.to_string(),
            "class_colors" => s
                .classes
                .iter()
                .map(|c| join_rgb(&c.color))
                .collect::<Vec<_>>()
                .join("; "),
            "class_shapes" => s
                .classes
                .iter()
                .map(|c| {
                    c.shapes
                        .iter()
                        .map(ToString::to_string)
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect::<Vec<_>>()
                .join("; "),
            "class_jitter" => s
                .classes
                .iter()
                .map(|c| c.jitter.to_string())
                .collect::<Vec<_>>()
                .join("; "),
            "backgrounds" => s
                .backgrounds
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(" "),
            "background_color" => join_rgb(&s.background_colors[0]),
            "background_color2" => join_rgb(&s.background_colors[1]),
            "texture_noise" => s.texture_noise.to_string(),
            "background_noise" => s.background_noise.to_string(),
            "objects_min" => s.objects_min.to_string(),
            "objects_max" => s.objects_max.to_string(),
            "size_min" => s.size_min.to_string(),
            "size_max" => s.size_max.to_string(),
            "data_seed" => s.seed.to_string(),
            "n_train" => self.n_train.to_string(),
            "n_val" => self.n_val.to_string(),
            "hidden" => self.hidden.to_string(),
            "conv_layers" => self.conv_layers.to_string(),
            "lambda" => self.cls.lambda.to_string(),
            "pooling" => self.cls.pooling.to_string(),
            "n_samples" => self.cls.n_samples.to_string(),
            "background_loss" => self.background_loss.to_string(),
            "fsl" => self.fsl.to_string(),
            "fsl_sigma" => self.fsl_sigma.to_string(),
            "fsl_mu" => self.fsl_mu.to_string(),
            "fsl_radius" => self.fsl_radius.to_string(),
            "fsl_eps" => self.fsl_eps.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr" => self.lr.to_string(),
            "momentum" => self.momentum.to_string(),
            "eval_tol" => self
                .eval_tol
                .map_or_else(|| "auto".to_string(), |t| t.to_string()),
            "seed" => self.seed.to_string(),
            "output" => self.output.display().to_string(),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        })
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let s = &mut self.scene;
        match key {
            "width" => s.width = parse_num(key, v)?,
            "height" => s.height = parse_num(key, v)?,
            "class_colors" => {
                let colors = groups(v)
                    .into_iter()
                    .map(|g| parse_rgb(key, g))
                    .collect::<Result<Vec<_>>>()?;
                let template = s
                    .classes
                    .last()
                    .cloned()
                    .unwrap_or_else(|| SceneSpec::default().classes[0].clone());
                s.classes.resize(colors.len(), template);
                for (c, col) in s.classes.iter_mut().zip(colors) {
                    c.color = col;
                }
            }
            "class_shapes" => {
                let all = groups(v)
                    .into_iter()
                    .map(|g| {
                        g.split_whitespace()
                            .map(str::parse)
                            .collect::<Result<Vec<ShapeKind>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                apply_per_class(key, &mut s.classes, all, |c, shapes| c.shapes = shapes)?;
            }
            "class_jitter" => {
                let all = groups(v)
                    .into_iter()
                    .map(|g| parse_num::<f64>(key, g))
                    .collect::<Result<Vec<_>>>()?;
                apply_per_class(key, &mut s.classes, all, |c, j| c.jitter = j)?;
            }
            "backgrounds" => {
                s.backgrounds = v
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<Result<Vec<BackgroundKind>>>()?
            }
            "background_color" => s.background_colors[0] = parse_rgb(key, v)?,
            "background_color2" => s.background_colors[1] = parse_rgb(key, v)?,
            "texture_noise" => s.texture_noise = parse_num(key, v)?,
            "background_noise" => s.background_noise = parse_num(key, v)?,
            "objects_min" => s.objects_min = parse_num(key, v)?,
            "objects_max" => s.objects_max = parse_num(key, v)?,
            "size_min" => s.size_min = parse_num(key, v)?,
            "size_max" => s.size_max = parse_num(key, v)?,
            "data_seed" => s.seed = parse_num(key, v)?,
            "n_train" => self.n_train = parse_num(key, v)?,
            "n_val" => self.n_val = parse_num(key, v)?,
            "hidden" => self.hidden = parse_num(key, v)?,
            "conv_layers" => self.conv_layers = parse_num(key, v)?,
            "lambda" => self.cls.lambda = parse_num(key, v)?,
            "pooling" => self.cls.pooling = v.parse::<Pooling>()?,
            "n_samples" => self.cls.n_samples = parse_num(key, v)?,
            "background_loss" => self.background_loss = parse_bool(key, v)?,
            "fsl" => self.fsl = parse_bool(key, v)?,
            "fsl_sigma" => self.fsl_sigma = parse_num(key, v)?,
            "fsl_mu" => self.fsl_mu = parse_num(key, v)?,
            "fsl_radius" => self.fsl_radius = parse_num(key, v)?,
            "fsl_eps" => self.fsl_eps = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "momentum" => self.momentum = parse_num(key, v)?,
            "eval_tol" => {
                self.eval_tol = if v == "auto" {
                    None
                } else {
                    Some(parse_num(key, v)?)
                }
            }
            "seed" => self.seed = parse_num(key, v)?,
            "output" => self.output = PathBuf::from(v),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Parses the `key = value` format; missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", n + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Canonical text form: every key, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("known key"));
        }
        out
    }
}

fn apply_per_class<T: Clone>(
    key: &str,
    classes: &mut [ClassStyle],
    values: Vec<T>,
    mut apply: impl FnMut(&mut ClassStyle, T),
) -> Result<()> {
    let values = match values.len() {
        1 => vec![values[0].clone(); classes.len()],
        n if n == classes.len() => values,
        n => {
            return Err(Error::Config(format!(
                "{key}: {n} groups given for {} classes (set class_colors first)",
                classes.len()
            )))
        }
    };
    for (c, v) in classes.iter_mut().zip(values) {
        apply(c, v);
    }
    Ok(())
}
