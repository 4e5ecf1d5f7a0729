use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use super::train::{EpochStats, Model};
use crate::autodiff::Tensor;
use crate::cam::{pseudo_label, CamNetwork, NetworkShape};
use crate::error::{Error, Result};
use crate::losses::FslParams;
use crate::metrics::{EvalReport, MaskPair};
use crate::raster::{quantize, write_pgm};
use crate::synth::Scene;

const PARAMS_MAGIC: &[u8; 8] = b"CAMSEG01";

/// Creates `dir` if needed and checks that files can be written into it.
pub fn ensure_writable_dir(dir: &Path) -> Result<()> {
    let unwritable = |e: std::io::Error| {
        Error::Config(format!(
            "output directory {} is not writable: {e}",
            dir.display()
        ))
    };
    fs::create_dir_all(dir).map_err(unwritable)?;
    let probe = dir.join(".camseg-write-probe");
    File::create(&probe).map_err(unwritable)?;
    fs::remove_file(&probe).map_err(unwritable)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

/// `epoch,loss,cls,fsl,sigma,mu` with full-precision values.
pub fn write_trace_csv<W: Write>(trace: &[EpochStats], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["epoch", "loss", "cls", "fsl", "sigma", "mu"])?;
    for s in trace {
        w.write_record([
            s.epoch.to_string(),
            s.loss.to_string(),
            s.cls.to_string(),
            s.fsl.to_string(),
            s.sigma.to_string(),
            s.mu.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    put_u64(out, t.shape().len() as u64);
    for &d in t.shape() {
        put_u64(out, d as u64);
    }
    for &v in t.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() < n {
            return Err(Error::Format {
                kind: "parameter",
                detail: "truncated".into(),
            });
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format {
            kind: "parameter",
            detail: "size out of range".into(),
        })
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let ndim = self.usize()?;
        if ndim > 8 {
            return Err(Error::Format {
                kind: "parameter",
                detail: format!("tensor rank {ndim}"),
            });
        }
        let shape = (0..ndim)
            .map(|_| self.usize())
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        if n > self.bytes.len() / 8 {
            return Err(Error::Format {
                kind: "parameter",
                detail: "truncated tensor".into(),
            });
        }
        let values = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Tensor::param(&shape, values)
    }
}

impl Model {
    /// Binary little-endian encoding of all learned parameters.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = PARAMS_MAGIC.to_vec();
        let shape = self.network.shape();
        for v in [
            shape.hidden,
            shape.conv_layers,
            shape.classes,
            self.fsl.radius,
        ] {
            put_u64(&mut out, v as u64);
        }
        out.extend_from_slice(&self.fsl.eps_delta.to_le_bytes());
        let params = self.network.params();
        put_u64(&mut out, params.len() as u64);
        for t in params {
            put_tensor(&mut out, t);
        }
        put_tensor(&mut out, &self.fsl.sigma_raw);
        put_tensor(&mut out, &self.fsl.mu);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes };
        if r.take(PARAMS_MAGIC.len())? != PARAMS_MAGIC {
            return Err(Error::Format {
                kind: "parameter",
                detail: "bad magic".into(),
            });
        }
        let shape = NetworkShape {
            hidden: r.usize()?,
            conv_layers: r.usize()?,
            classes: r.usize()?,
        };
        let radius = r.usize()?;
        let eps_delta = r.f64()?;
        let count = r.usize()?;
        if count > 2 * 64 {
            return Err(Error::Format {
                kind: "parameter",
                detail: format!("{count} network tensors"),
            });
        }
        let params = (0..count).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
        let network = CamNetwork::from_params(shape, params)?;
        let mut fsl = FslParams::new(1.0, 0.0, radius, eps_delta)?;
        fsl.sigma_raw = r.tensor()?;
        fsl.mu = r.tensor()?;
        if !r.bytes.is_empty() {
            return Err(Error::Format {
                kind: "parameter",
                detail: format!("{} trailing bytes", r.bytes.len()),
            });
        }
        Ok(Self { network, fsl })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Checks that the parameters fit the network described by `cfg`.
    pub fn check_config(&self, cfg: &RunConfig) -> Result<()> {
        if self.network.shape() != cfg.network_shape() {
            return Err(Error::Config(format!(
                "parameters are for {:?} but the configuration describes {:?}",
                self.network.shape(),
                cfg.network_shape()
            )));
        }
        Ok(())
    }
}

/// Heat map byte per pixel: `round(255 · max foreground probability)`.
pub fn foreground_heat(probs: &[f64], classes: usize) -> Vec<u8> {
    probs
        .chunks_exact(classes)
        .map(|px| quantize(px[1..].iter().copied().fold(0.0, f64::max)))
        .collect()
}

/// Paths written for one exported scene.
pub fn scene_files(dir: &Path, id: u64) -> [PathBuf; 4] {
    ["input.ppm", "heat.pgm", "pseudo.pgm", "gt.pgm"]
        .map(|suffix| dir.join(format!("scene_{id:04}_{suffix}")))
}

/// Writes input image, foreground heat map, pseudo-label and ground truth for
/// every scene, plus `metrics.csv` scored over the exported scenes.
pub fn export_artifacts(
    cfg: &RunConfig,
    model: &Model,
    scenes: &[(u64, &Scene)],
    dir: &Path,
) -> Result<EvalReport> {
    ensure_writable_dir(dir)?;
    model.check_config(cfg)?;
    let classes = cfg.num_classes();
    let mut pairs = Vec::with_capacity(scenes.len());
    for &(id, scene) in scenes {
        let (w, h) = (scene.image.width(), scene.image.height());
        let probs = model.predict(&scene.image)?;
        let label = pseudo_label(&probs, w, h, classes)?;
        let [input, heat, pseudo, gt] = scene_files(dir, id);
        scene.image.write_ppm(create(&input)?)?;
        write_pgm(create(&heat)?, w, h, &foreground_heat(&probs, classes))?;
        label.write_pgm(create(&pseudo)?)?;
        scene.gt.write_pgm(create(&gt)?)?;
        pairs.push(MaskPair::new(label, scene.gt.clone())?);
    }
    let report = EvalReport::compute(&pairs, classes, cfg.tolerance())?;
    report.write_csv(create(&dir.join("metrics.csv"))?)?;
    Ok(report)
}

/// Writes each scene as `scene_XXXX_image.ppm` / `scene_XXXX_gt.pgm` plus a
/// `labels.csv` of image-level labels.
pub fn export_scenes(scenes: &[(u64, &Scene)], dir: &Path) -> Result<()> {
    ensure_writable_dir(dir)?;
    let mut labels = csv_writer(create(&dir.join("labels.csv"))?);
    let fg = scenes.first().map_or(0, |(_, s)| s.labels.len());
    let mut header = vec!["scene".to_string()];
    header.extend((1..=fg).map(|k| format!("class_{k}")));
    labels.write_record(&header)?;
    for &(id, scene) in scenes {
        scene
            .image
            .write_ppm(create(&dir.join(format!("scene_{id:04}_image.ppm")))?)?;
        scene
            .gt
            .write_pgm(create(&dir.join(format!("scene_{id:04}_gt.pgm")))?)?;
        let mut row = vec![id.to_string()];
        row.extend(scene.labels.iter().map(|&y| (y as u8).to_string()));
        labels.write_record(&row)?;
    }
    labels.flush()?;
    Ok(())
}
