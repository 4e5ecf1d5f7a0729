//! Repeated CLI executions produce identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use crate::Outcome;

const CONFIG: &str = "\
# small run exercising sampling and the similarity loss
width = 32
height = 32
n_train = 12
n_val = 6
hidden = 4
conv_layers = 2
epochs = 2
lambda = 0.5
fsl = true
";

fn camseg(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_camseg"))
        .current_dir(dir)
        .args(["--quiet", "--config", "run.cfg"])
        .args(args)
        .output()
        .map_err(|e| format!("cannot start camseg: {e}"))?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "camseg {} exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn collect(root: &Path, dir: &Path, files: &mut BTreeMap<String, Vec<u8>>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect(root, &path, files);
        } else {
            let rel = path
                .strip_prefix(root)
                .unwrap()
                .to_string_lossy()
                .into_owned();
            files.insert(rel, fs::read(&path).unwrap());
        }
    }
}

fn execute(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    fs::write(dir.join("run.cfg"), CONFIG).unwrap();
    camseg(dir, &["train", "--output", "out/train"])?;
    camseg(dir, &["export", "--output", "out/train", "--scenes", "4"])?;
    camseg(
        dir,
        &[
            "sweep",
            "--output",
            "out/sweep",
            "--values",
            "0,1",
            "--repeats",
            "2",
        ],
    )?;
    let mut files = BTreeMap::new();
    collect(&dir.join("out"), &dir.join("out"), &mut files);
    Ok(files)
}

pub fn run() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (first, second) = match (execute(a.path()), execute(b.path())) {
        (Ok(x), Ok(y)) => (x, y),
        (Err(e), _) | (_, Err(e)) => {
            return Outcome {
                passed: false,
                detail: e,
            }
        }
    };
    let differing: Vec<&String> = first
        .keys()
        .filter(|k| second.get(*k) != first.get(*k))
        .chain(second.keys().filter(|k| !first.contains_key(*k)))
        .collect();
    let csv = first.keys().filter(|k| k.ends_with(".csv")).count();
    let images = first
        .keys()
        .filter(|k| k.ends_with(".ppm") || k.ends_with(".pgm"))
        .count();
    Outcome {
        passed: differing.is_empty() && csv >= 3 && images >= 16,
        detail: format!(
            "train + export + sweep run twice: {} files ({csv} CSV, {images} images), {} differ{}",
            first.len(),
            differing.len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!(": {:?}", differing)
            }
        ),
    }
}
