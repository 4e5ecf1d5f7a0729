//! Directional comparisons on the default synthetic benchmark.

use std::fs;
use std::path::PathBuf;
use std::sync::OnceLock;

use camseg::pipeline::{
    mean_std, sweep, write_sweep_csv, Dataset, RunConfig, SweepConfig, SweepField, SweepRun,
};

use crate::Outcome;

pub const SEEDS: usize = 3;
pub const LAMBDA_GAIN: f64 = 0.05;
pub const FSL_F_GAIN: f64 = 0.03;
pub const FSL_MIOU_DROP: f64 = 0.02;
pub const N_SAMPLES: [usize; 4] = [1, 2, 5, 10];
pub const NO_TREND_BAND: f64 = 0.03;

fn base() -> RunConfig {
    let cfg = RunConfig::default();
    assert_eq!((cfg.n_train, cfg.n_val, cfg.epochs), (500, 100, 30));
    assert_eq!(
        (cfg.scene.width, cfg.scene.height, cfg.scene.fg_classes()),
        (64, 64, 3)
    );
    cfg
}

fn data() -> &'static Dataset {
    static DATA: OnceLock<Dataset> = OnceLock::new();
    DATA.get_or_init(|| Dataset::generate(&base()).expect("benchmark data"))
}

fn out_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    fs::create_dir_all(&dir).expect("acceptance output directory");
    dir
}

fn run_sweep(name: &str, base: RunConfig, field: SweepField, values: Vec<f64>) -> Vec<SweepRun> {
    let mut sc = SweepConfig::new(base, field, values);
    sc.repeats = SEEDS;
    let runs = sweep(&sc, data()).expect("valid sweep");
    let mut csv = Vec::new();
    write_sweep_csv(field, &runs, &mut csv).expect("csv");
    fs::write(out_dir().join(format!("{name}.csv")), csv).expect("write sweep csv");
    runs
}

/// Mean mIoU and contour F over the runs of `value`; `None` if any failed.
fn means(runs: &[SweepRun], value: f64) -> Option<(f64, f64)> {
    let ok: Vec<_> = runs
        .iter()
        .filter(|r| r.value == value)
        .map(|r| r.outcome.as_ref().ok())
        .collect::<Option<Vec<_>>>()?;
    let miou: Vec<f64> = ok.iter().map(|r| r.mean_iou).collect();
    let f: Vec<f64> = ok.iter().map(|r| r.mean_fscore).collect();
    Some((mean_std(&miou)?.0, mean_std(&f)?.0))
}

fn per_seed(runs: &[SweepRun], value: f64) -> String {
    runs.iter()
        .filter(|r| r.value == value)
        .map(|r| match &r.outcome {
            Ok(rep) => format!("{:.3}/{:.3}", rep.mean_iou, rep.mean_fscore),
            Err(e) => format!("failed ({e})"),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn lambda_runs() -> &'static [SweepRun] {
    static RUNS: OnceLock<Vec<SweepRun>> = OnceLock::new();
    RUNS.get_or_init(|| run_sweep("lambda", base(), SweepField::Lambda, vec![0.0, 1.0]))
}

fn failed(detail: String) -> Outcome {
    Outcome {
        passed: false,
        detail,
    }
}

pub fn lambda_gain() -> Outcome {
    let runs = lambda_runs();
    let (Some(at0), Some(at1)) = (means(runs, 0.0), means(runs, 1.0)) else {
        return failed(format!(
            "failed runs: λ=0 {}; λ=1 {}",
            per_seed(runs, 0.0),
            per_seed(runs, 1.0)
        ));
    };
    let gain = at1.0 - at0.0;
    Outcome {
        passed: gain >= LAMBDA_GAIN,
        detail: format!(
            "mean mIoU λ=1 {:.4} vs λ=0 {:.4}: gain {gain:+.4} (need ≥ {LAMBDA_GAIN}); \
             per seed mIoU/F λ=0 [{}] λ=1 [{}]",
            at1.0,
            at0.0,
            per_seed(runs, 0.0),
            per_seed(runs, 1.0)
        ),
    }
}

pub fn fsl_gain() -> Outcome {
    let runs = lambda_runs();
    let best = [0.0, 1.0]
        .into_iter()
        .filter_map(|v| means(runs, v).map(|m| (v, m)))
        .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0));
    let Some((lambda, without)) = best else {
        return failed("no successful λ run to compare against".into());
    };
    let mut cfg = base();
    cfg.fsl = true;
    let with_runs = run_sweep("fsl", cfg, SweepField::Lambda, vec![lambda]);
    let Some(with) = means(&with_runs, lambda) else {
        return failed(format!("FSL runs failed: {}", per_seed(&with_runs, lambda)));
    };
    let f_gain = with.1 - without.1;
    let miou_drop = without.0 - with.0;
    Outcome {
        passed: f_gain >= FSL_F_GAIN && miou_drop <= FSL_MIOU_DROP,
        detail: format!(
            "best λ={lambda}: contour F {:.4} -> {:.4} ({f_gain:+.4}, need ≥ +{FSL_F_GAIN}), \
             mIoU {:.4} -> {:.4} (drop {miou_drop:+.4}, limit {FSL_MIOU_DROP}); \
             per seed with FSL [{}]",
            without.1,
            with.1,
            without.0,
            with.0,
            per_seed(&with_runs, lambda)
        ),
    }
}

pub fn n_samples_flat() -> Outcome {
    let cfg = base();
    assert_eq!(cfg.cls.n_samples, 1);
    assert_eq!(cfg.cls.lambda, 1.0);
    // n_samples = 1 at λ = 1 is exactly the λ = 1 arm above
    let single = lambda_runs();
    let more = run_sweep(
        "n_samples",
        cfg,
        SweepField::NSamples,
        N_SAMPLES[1..].iter().map(|&n| n as f64).collect(),
    );
    let mut table = Vec::new();
    for &n in &N_SAMPLES {
        let m = if n == 1 {
            means(single, 1.0)
        } else {
            means(&more, n as f64)
        };
        match m {
            Some((miou, _)) => table.push((n, miou)),
            None => return failed(format!("runs with n_samples={n} failed")),
        }
    }
    let hi = table.iter().map(|t| t.1).fold(f64::MIN, f64::max);
    let lo = table.iter().map(|t| t.1).fold(f64::MAX, f64::min);
    let listing: Vec<String> = table
        .iter()
        .map(|(n, m)| format!("n={n}: {m:.4}"))
        .collect();
    Outcome {
        passed: hi - lo < NO_TREND_BAND,
        detail: format!(
            "mean mIoU {}; spread {:.4} (need < {NO_TREND_BAND})",
            listing.join(", "),
            hi - lo
        ),
    }
}
