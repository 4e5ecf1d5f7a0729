use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use super::config::RunConfig;
use super::train::{evaluate, train, Dataset};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;

/// Configuration field varied by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepField {
    Lambda,
    NSamples,
}

impl fmt::Display for SweepField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepField::Lambda => "lambda",
            SweepField::NSamples => "n_samples",
        })
    }
}

impl FromStr for SweepField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "lambda" => Ok(SweepField::Lambda),
            "n_samples" => Ok(SweepField::NSamples),
            other => Err(Error::Config(format!(
                "cannot sweep '{other}' (expected lambda or n_samples)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub base: RunConfig,
    pub field: SweepField,
    pub values: Vec<f64>,
    /// Runs per value; repeat `r` uses seed `base.seed + r`.
    pub repeats: usize,
}

impl SweepConfig {
    pub fn new(base: RunConfig, field: SweepField, values: Vec<f64>) -> Self {
        Self {
            base,
            field,
            values,
            repeats: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep needs at least one value".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("sweep needs at least one repeat".into()));
        }
        for &v in &self.values {
            self.run_config(v, 0)?.validate()?;
        }
        Ok(())
    }

    /// Configuration of the run for `value` and `repeat`.
    pub fn run_config(&self, value: f64, repeat: usize) -> Result<RunConfig> {
        let mut cfg = self.base.clone();
        match self.field {
            SweepField::Lambda => cfg.cls.lambda = value,
            SweepField::NSamples => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(Error::Config(format!(
                        "n_samples must be a positive integer, got {value}"
                    )));
                }
                cfg.cls.n_samples = value as usize;
            }
        }
        cfg.seed = self.base.seed.wrapping_add(repeat as u64);
        Ok(cfg)
    }
}

/// One train + evaluate run of a sweep.
#[derive(Clone, Debug)]
pub struct SweepRun {
    pub value: f64,
    pub repeat: usize,
    pub seed: u64,
    /// The evaluation, or the error message of a failed run.
    pub outcome: std::result::Result<EvalReport, String>,
}

/// Trains and evaluates every `(value, repeat)` combination.
///
/// Runs execute concurrently on the rayon pool; the result order follows the
/// value list and then the repeat index. A failing run is recorded and the
/// sweep continues.
pub fn sweep(cfg: &SweepConfig, data: &Dataset) -> Result<Vec<SweepRun>> {
    cfg.validate()?;
    let jobs: Vec<(f64, usize)> = cfg
        .values
        .iter()
        .flat_map(|&v| (0..cfg.repeats).map(move |r| (v, r)))
        .collect();
    Ok(jobs
        .par_iter()
        .map(|&(value, repeat)| {
            let run = cfg.run_config(value, repeat).expect("validated");
            let outcome = train(&run, &data.train)
                .and_then(|t| evaluate(&run, &t.model, &data.val))
                .map_err(|e| {
                    log::warn!(
                        "sweep run {}={value} repeat {repeat} failed: {e}",
                        cfg.field
                    );
                    e.to_string()
                });
            SweepRun {
                value,
                repeat,
                seed: run.seed,
                outcome,
            }
        })
        .collect())
}

/// Mean and sample standard deviation; `None` for an empty slice.
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

/// Per-value aggregate over the successful repeats.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSummary {
    pub value: f64,
    pub succeeded: usize,
    pub miou: Option<(f64, f64)>,
    pub fscore: Option<(f64, f64)>,
}

pub fn summarize(runs: &[SweepRun]) -> Vec<SweepSummary> {
    let mut values: Vec<f64> = Vec::new();
    for r in runs {
        if !values.contains(&r.value) {
            values.push(r.value);
        }
    }
    values
        .into_iter()
        .map(|value| {
            let ok: Vec<&EvalReport> = runs
                .iter()
                .filter(|r| r.value == value)
                .filter_map(|r| r.outcome.as_ref().ok())
                .collect();
            let miou: Vec<f64> = ok.iter().map(|r| r.mean_iou).collect();
            let fscore: Vec<f64> = ok.iter().map(|r| r.mean_fscore).collect();
            SweepSummary {
                value,
                succeeded: ok.len(),
                miou: mean_std(&miou),
                fscore: mean_std(&fscore),
            }
        })
        .collect()
}

fn score(v: f64) -> String {
    format!("{v:.6}")
}

/// Writes one row per run, each value's runs followed by its summary row.
///
/// Columns: `<field>,repeat,seed,status,miou,miou_std,fscore,fscore_std`.
/// Run rows leave the std columns empty; summary rows have `repeat =
/// summary`, an empty seed and `ok/total` as status.
pub fn write_sweep_csv<W: Write>(field: SweepField, runs: &[SweepRun], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let field = field.to_string();
    w.write_record([
        field.as_str(),
        "repeat",
        "seed",
        "status",
        "miou",
        "miou_std",
        "fscore",
        "fscore_std",
    ])?;
    for summary in summarize(runs) {
        let group: Vec<&SweepRun> = runs.iter().filter(|r| r.value == summary.value).collect();
        for r in &group {
            let (status, miou, fscore) = match &r.outcome {
                Ok(rep) => (
                    "ok".to_string(),
                    score(rep.mean_iou),
                    score(rep.mean_fscore),
                ),
                Err(msg) => (format!("failed: {msg}"), String::new(), String::new()),
            };
            w.write_record([
                r.value.to_string(),
                r.repeat.to_string(),
                r.seed.to_string(),
                status,
                miou,
                String::new(),
                fscore,
                String::new(),
            ])?;
        }
        let split = |m: Option<(f64, f64)>| {
            m.map_or((String::new(), String::new()), |(a, b)| {
                (score(a), score(b))
            })
        };
        let (mi, mi_sd) = split(summary.miou);
        let (f, f_sd) = split(summary.fscore);
        w.write_record([
            summary.value.to_string(),
            "summary".to_string(),
            String::new(),
            format!("{}/{}", summary.succeeded, group.len()),
            mi,
            mi_sd,
            f,
            f_sd,
        ])?;
    }
    w.flush()?;
    Ok(())
}
