//! Deterministic synthetic scenes: flat-coloured shapes over simple
//! backgrounds, with pixel-exact ground truth and image-level labels.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::raster::{Mask, RgbImage};
use crate::rng::{rng_for, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Disk,
    Rectangle,
    Triangle,
    Ring,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BackgroundKind {
    Flat,
    Gradient,
    Noise,
}

macro_rules! keyword_enum {
    ($ty:ident, $what:literal, $($variant:ident => $word:literal),+) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $word),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($word => Ok($ty::$variant),)+
                    other => Err(Error::Config(format!(concat!("unknown ", $what, " '{}'"), other))),
                }
            }
        }
    };
}

keyword_enum!(ShapeKind, "shape", Disk => "disk", Rectangle => "rectangle", Triangle => "triangle", Ring => "ring");
keyword_enum!(BackgroundKind, "background", Flat => "flat", Gradient => "gradient", Noise => "noise");

/// Appearance of one foreground class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassStyle {
    pub shapes: Vec<ShapeKind>,
    pub color: [f64; 3],
    /// Per-object uniform colour offset amplitude, per channel.
    pub jitter: f64,
}

/// Everything that determines a family of generated scenes.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub classes: Vec<ClassStyle>,
    pub backgrounds: Vec<BackgroundKind>,
    /// Background base colour and the far end of gradient backgrounds.
    pub background_colors: [[f64; 3]; 2],
    /// Per-pixel uniform noise amplitude on objects.
    pub texture_noise: f64,
    /// Per-pixel uniform noise amplitude of noise backgrounds.
    pub background_noise: f64,
    pub objects_min: usize,
    pub objects_max: usize,
    /// Object extent as a fraction of the shorter image side.
    pub size_min: f64,
    pub size_max: f64,
    pub seed: u64,
}

/// Minimum `|c − b|₁ / 3` between any class colour and the background palette.
pub const MIN_PALETTE_SEPARATION: f64 = 0.15;

impl Default for SceneSpec {
    fn default() -> Self {
        let all = vec![
            ShapeKind::Disk,
            ShapeKind::Rectangle,
            ShapeKind::Triangle,
            ShapeKind::Ring,
        ];
        let style = |color| ClassStyle {
            shapes: all.clone(),
            color,
            jitter: 0.08,
        };
        Self {
            width: 64,
            height: 64,
            classes: vec![
                style([0.85, 0.25, 0.2]),
                style([0.25, 0.7, 0.3]),
                style([0.25, 0.35, 0.85]),
            ],
            backgrounds: vec![
                BackgroundKind::Flat,
                BackgroundKind::Gradient,
                BackgroundKind::Noise,
            ],
            background_colors: [[0.45, 0.42, 0.38], [0.62, 0.6, 0.52]],
            texture_noise: 0.05,
            background_noise: 0.1,
            objects_min: 1,
            objects_max: 3,
            size_min: 0.2,
            size_max: 0.4,
            seed: 7,
        }
    }
}

impl SceneSpec {
    pub fn fg_classes(&self) -> usize {
        self.classes.len()
    }

    /// Classes including background.
    pub fn num_classes(&self) -> usize {
        self.classes.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scene(m));
        if self.width == 0 || self.height == 0 {
            return bad(format!(
                "image size {}x{} is empty",
                self.width, self.height
            ));
        }
        if self.classes.is_empty() || self.classes.len() > 254 {
            return bad(format!(
                "need 1..=254 foreground classes, got {}",
                self.classes.len()
            ));
        }
        if self.objects_min == 0 || self.objects_min > self.objects_max {
            return bad(format!(
                "object count range [{}, {}] must be non-empty and start at 1 or more",
                self.objects_min, self.objects_max
            ));
        }
        let side = self.width.min(self.height) as f64;
        if !(self.size_min > 0.0 && self.size_min <= self.size_max && self.size_max <= 1.0) {
            return bad(format!(
                "size range [{}, {}] is empty",
                self.size_min, self.size_max
            ));
        }
        if self.size_min * side < 3.0 {
            return bad(format!(
                "smallest object ({:.2} px) is too small to rasterise",
                self.size_min * side
            ));
        }
        if self.backgrounds.is_empty() {
            return bad("no background kinds".into());
        }
        if !(0.0..=0.1).contains(&self.texture_noise)
            || !(0.0..=0.1).contains(&self.background_noise)
        {
            return bad(format!(
                "noise amplitudes ({}, {}) must lie in [0, 0.1]",
                self.texture_noise, self.background_noise
            ));
        }
        for (k, c) in self.classes.iter().enumerate() {
            if c.shapes.is_empty() {
                return bad(format!("class {} has no shapes", k + 1));
            }
            if !(0.0..=0.5).contains(&c.jitter) || c.color.iter().any(|v| !(0.0..=1.0).contains(v))
            {
                return bad(format!("class {} has an invalid palette", k + 1));
            }
            for b in &self.background_colors {
                let sep = c
                    .color
                    .iter()
                    .zip(b)
                    .map(|(x, y)| (x - y).abs())
                    .sum::<f64>()
                    / 3.0;
                if sep < MIN_PALETTE_SEPARATION {
                    return bad(format!(
                        "class {} colour is only {sep:.3} away from background {b:?}",
                        k + 1
                    ));
                }
            }
        }
        Ok(())
    }
}

/// One generated image with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: RgbImage,
    pub gt: Mask,
    /// Image-level labels of the foreground classes (`labels[k]` is class
    /// `k + 1`).
    pub labels: Vec<f64>,
}

/// Image-level labels implied by a ground-truth mask.
pub fn labels_from_mask(gt: &Mask, fg_classes: usize) -> Vec<f64> {
    let mut y = vec![0.0; fg_classes];
    for &l in gt.labels() {
        if l >= 1 && (l as usize) <= fg_classes {
            y[l as usize - 1] = 1.0;
        }
    }
    y
}

/// A shape instance in pixel coordinates (`x` right, `y` down).
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectPlacement {
    /// Foreground class index, starting at 1.
    pub class: u8,
    pub shape: ShapeKind,
    pub center: (f64, f64),
    /// Horizontal and vertical half extents.
    pub half: (f64, f64),
    pub color: [f64; 3],
}

impl ObjectPlacement {
    /// Hard-edged containment test of the point `(px, py)`.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        let (dx, dy) = (px - self.center.0, py - self.center.1);
        let (hx, hy) = self.half;
        match self.shape {
            ShapeKind::Disk => (dx / hx).powi(2) + (dy / hy).powi(2) <= 1.0,
            ShapeKind::Ring => {
                let r = (dx / hx).powi(2) + (dy / hy).powi(2);
                (0.25..=1.0).contains(&r)
            }
            ShapeKind::Rectangle => dx.abs() <= hx && dy.abs() <= hy,
            ShapeKind::Triangle => {
                // apex at the top, base at the bottom
                let t = (dy + hy) / (2.0 * hy);
                (0.0..=1.0).contains(&t) && dx.abs() <= hx * t
            }
        }
    }
}

fn jitter(rng: &mut Rng, amp: f64) -> f64 {
    if amp > 0.0 {
        rng.gen_range(-amp..=amp)
    } else {
        0.0
    }
}

fn clamp_rgb(c: [f64; 3]) -> [f64; 3] {
    c.map(|v| v.clamp(0.0, 1.0))
}

/// Paints the background then the objects back to front, pixel centres
/// deciding coverage. `rng` drives only the texture noise.
pub fn render(
    spec: &SceneSpec,
    background: BackgroundKind,
    objects: &[ObjectPlacement],
    rng: &mut Rng,
) -> Result<Scene> {
    let (w, h) = (spec.width, spec.height);
    let [base, far] = spec.background_colors;
    let mut image = RgbImage::filled(w, h, base);
    match background {
        BackgroundKind::Flat => {}
        BackgroundKind::Gradient => {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let (c, s) = (angle.cos(), angle.sin());
            let span = (w as f64).abs() * c.abs() + (h as f64) * s.abs();
            for y in 0..h {
                for x in 0..w {
                    let proj = (x as f64 + 0.5 - w as f64 / 2.0) * c
                        + (y as f64 + 0.5 - h as f64 / 2.0) * s;
                    let t = (proj / span + 0.5).clamp(0.0, 1.0);
                    let px = [0, 1, 2].map(|i| base[i] + t * (far[i] - base[i]));
                    image.set_pixel(x, y, px);
                }
            }
        }
        BackgroundKind::Noise => {
            for y in 0..h {
                for x in 0..w {
                    let px = base.map(|v| v + jitter(rng, spec.background_noise));
                    image.set_pixel(x, y, clamp_rgb(px));
                }
            }
        }
    }
    let mut gt = Mask::filled(w, h, 0);
    for obj in objects {
        if obj.class == 0 || obj.class as usize > spec.fg_classes() {
            return Err(Error::Scene(format!(
                "object class {} out of range",
                obj.class
            )));
        }
        let x0 = (obj.center.0 - obj.half.0).floor().max(0.0) as usize;
        let x1 = ((obj.center.0 + obj.half.0).ceil().max(0.0) as usize).min(w);
        let y0 = (obj.center.1 - obj.half.1).floor().max(0.0) as usize;
        let y1 = ((obj.center.1 + obj.half.1).ceil().max(0.0) as usize).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                if obj.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    gt.set(x, y, obj.class);
                    let px = obj.color.map(|v| v + jitter(rng, spec.texture_noise));
                    image.set_pixel(x, y, clamp_rgb(px));
                }
            }
        }
    }
    let labels = labels_from_mask(&gt, spec.fg_classes());
    Ok(Scene { image, gt, labels })
}

fn place_objects(spec: &SceneSpec, rng: &mut Rng) -> Vec<ObjectPlacement> {
    let side = spec.width.min(spec.height) as f64;
    let n = rng.gen_range(spec.objects_min..=spec.objects_max);
    (0..n)
        .map(|_| {
            let k = rng.gen_range(0..spec.fg_classes());
            let style = &spec.classes[k];
            let shape = *style.shapes.choose(rng).expect("validated non-empty");
            let extent = rng.gen_range(spec.size_min..=spec.size_max) * side;
            let half = match shape {
                ShapeKind::Rectangle | ShapeKind::Triangle => (
                    extent / 2.0 * rng.gen_range(0.6..=1.0),
                    extent / 2.0 * rng.gen_range(0.6..=1.0),
                ),
                ShapeKind::Disk | ShapeKind::Ring => (extent / 2.0, extent / 2.0),
            };
            let cx = rng.gen_range(half.0..=(spec.width as f64 - half.0).max(half.0));
            let cy = rng.gen_range(half.1..=(spec.height as f64 - half.1).max(half.1));
            let color = clamp_rgb(style.color.map(|v| v + jitter(rng, style.jitter)));
            ObjectPlacement {
                class: (k + 1) as u8,
                shape,
                center: (cx, cy),
                half,
                color,
            }
        })
        .collect()
}

/// Scene `index` of the family described by `spec`; a pure function of
/// `(spec, index)`.
pub fn generate(spec: &SceneSpec, index: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, &[index]);
    let background = *spec
        .backgrounds
        .choose(&mut rng)
        .expect("validated non-empty");
    let objects = place_objects(spec, &mut rng);
    render(spec, background, &objects, &mut rng)
}

/// Training indices `[0, n_train)` and validation indices
/// `[n_train, n_train + n_val)`.
pub fn split(n_train: usize, n_val: usize) -> Result<(Vec<u64>, Vec<u64>)> {
    if n_train == 0 || n_val == 0 {
        return Err(Error::Config(
            "train and validation splits must be non-empty".into(),
        ));
    }
    let train = (0..n_train as u64).collect();
    let val = (n_train as u64..(n_train + n_val) as u64).collect();
    Ok((train, val))
}
