use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use camseg::pipeline::{
    ensure_writable_dir, evaluate, export_artifacts, export_scenes, sweep, train, write_sweep_csv,
    write_trace_csv, Dataset, Model, RunConfig, SweepConfig, SweepField, KEYS,
};
use camseg::synth::split;
use camseg::Error;
use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};

fn flag(key: &str) -> String {
    key.replace('_', "-")
}

fn cli() -> Command {
    let mut cmd = Command::new("camseg")
        .about("Class activation maps with importance sampling and feature similarity loss")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .short('c')
                .global(true)
                .value_name("FILE")
                .value_parser(value_parser!(PathBuf))
                .help("Run configuration file (key = value lines); flags override it"),
        );
    for key in KEYS {
        cmd = cmd.arg(
            Arg::new(*key)
                .long(flag(key))
                .global(true)
                .value_name("VALUE")
                .help_heading("Run configuration")
                .hide_short_help(true),
        );
    }
    let params = || {
        Arg::new("params")
            .long("params")
            .value_name("FILE")
            .value_parser(value_parser!(PathBuf))
            .help("Trained parameters [default: <output>/params.bin]")
    };
    cmd.subcommand(
        Command::new("train").about("Train a network and evaluate it on the validation split"),
    )
    .subcommand(
        Command::new("eval")
            .about("Evaluate trained parameters")
            .arg(params())
            .arg(
                Arg::new("split")
                    .long("split")
                    .value_parser(["val", "train"])
                    .default_value("val"),
            ),
    )
    .subcommand(
        Command::new("sweep")
            .about("Train and evaluate over a list of lambda or n_samples values")
            .arg(
                Arg::new("field")
                    .long("field")
                    .value_parser(["lambda", "n_samples"])
                    .default_value("lambda"),
            )
            .arg(
                Arg::new("values")
                    .long("values")
                    .value_name("LIST")
                    .default_value("0,0.25,0.5,0.75,1")
                    .help("Comma-separated values"),
            )
            .arg(
                Arg::new("repeats")
                    .long("repeats")
                    .value_parser(value_parser!(usize))
                    .default_value("3"),
            ),
    )
    .subcommand(
        Command::new("export")
            .about(
                "Write input, heat map, pseudo-label and ground truth images for validation scenes",
            )
            .arg(params())
            .arg(
                Arg::new("scenes")
                    .long("scenes")
                    .value_parser(value_parser!(usize))
                    .default_value("8")
                    .help("Number of validation scenes to export"),
            ),
    )
    .subcommand(Command::new("gen-data").about("Write the generated scenes as PPM/PGM files"))
    .subcommand(
        Command::new("show-config")
            .about("Print the effective configuration")
            .hide(true),
    )
    .arg(
        Arg::new("quiet")
            .long("quiet")
            .short('q')
            .global(true)
            .action(ArgAction::SetTrue)
            .help("Only log warnings and errors"),
    )
}

fn load_config(m: &ArgMatches) -> camseg::Result<RunConfig> {
    let mut cfg = match m.get_one::<PathBuf>("config") {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::parse(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    for key in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)
                .map_err(|e| Error::Config(format!("--{}: {e}", flag(key))))?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn params_path(m: &ArgMatches, cfg: &RunConfig) -> PathBuf {
    m.get_one::<PathBuf>("params")
        .cloned()
        .unwrap_or_else(|| cfg.output.join("params.bin"))
}

fn load_model(path: &Path, cfg: &RunConfig) -> camseg::Result<Model> {
    let model = Model::load(path)
        .map_err(|e| Error::Config(format!("cannot load {}: {e}", path.display())))?;
    model.check_config(cfg)?;
    Ok(model)
}

fn write_file(
    path: &Path,
    write: impl FnOnce(&mut Vec<u8>) -> camseg::Result<()>,
) -> camseg::Result<()> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

fn run(m: &ArgMatches) -> camseg::Result<()> {
    let cfg = load_config(m)?;
    let (name, sub) = m.subcommand().expect("subcommand required");
    match name {
        "show-config" => print!("{}", cfg.to_text()),
        "train" => {
            ensure_writable_dir(&cfg.output)?;
            let data = Dataset::generate(&cfg)?;
            let outcome = train(&cfg, &data.train)?;
            let report = evaluate(&cfg, &outcome.model, &data.val)?;
            fs::write(cfg.output.join("config.txt"), cfg.to_text())?;
            outcome.model.save(&cfg.output.join("params.bin"))?;
            write_file(&cfg.output.join("loss.csv"), |b| {
                write_trace_csv(&outcome.trace, b)
            })?;
            write_file(&cfg.output.join("metrics.csv"), |b| report.write_csv(b))?;
            log::info!(
                "validation mIoU {:.4}, contour F {:.4}; results in {}",
                report.mean_iou,
                report.mean_fscore,
                cfg.output.display()
            );
        }
        "eval" => {
            ensure_writable_dir(&cfg.output)?;
            let model = load_model(&params_path(sub, &cfg), &cfg)?;
            let data = Dataset::generate(&cfg)?;
            let scenes = match sub.get_one::<String>("split").map(String::as_str) {
                Some("train") => &data.train,
                _ => &data.val,
            };
            let report = evaluate(&cfg, &model, scenes)?;
            write_file(&cfg.output.join("metrics.csv"), |b| report.write_csv(b))?;
            println!(
                "mIoU {:.6}  contour F {:.6}",
                report.mean_iou, report.mean_fscore
            );
        }
        "sweep" => {
            let field: SweepField = sub.get_one::<String>("field").expect("default").parse()?;
            let values = sub
                .get_one::<String>("values")
                .expect("default")
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("--values: cannot parse '{v}'")))
                })
                .collect::<camseg::Result<Vec<_>>>()?;
            let mut sc = SweepConfig::new(cfg.clone(), field, values);
            sc.repeats = *sub.get_one::<usize>("repeats").expect("default");
            sc.validate()?;
            ensure_writable_dir(&cfg.output)?;
            let data = Dataset::generate(&cfg)?;
            let runs = sweep(&sc, &data)?;
            fs::write(cfg.output.join("config.txt"), cfg.to_text())?;
            let path = cfg.output.join("sweep.csv");
            write_file(&path, |b| write_sweep_csv(field, &runs, b))?;
            log::info!("sweep results in {}", path.display());
        }
        "export" => {
            let dir = cfg.output.join("export");
            ensure_writable_dir(&dir)?;
            let model = load_model(&params_path(sub, &cfg), &cfg)?;
            let data = Dataset::generate(&cfg)?;
            let n = (*sub.get_one::<usize>("scenes").expect("default")).min(data.val.len());
            let (_, ids) = split(cfg.n_train, cfg.n_val)?;
            let scenes: Vec<(u64, &_)> = ids.into_iter().zip(&data.val).take(n).collect();
            let report = export_artifacts(&cfg, &model, &scenes, &dir)?;
            log::info!(
                "exported {n} scenes to {} (mIoU {:.4}, contour F {:.4})",
                dir.display(),
                report.mean_iou,
                report.mean_fscore
            );
        }
        "gen-data" => {
            let root = cfg.output.join("data");
            ensure_writable_dir(&root)?;
            let data = Dataset::generate(&cfg)?;
            let (train_ids, val_ids) = split(cfg.n_train, cfg.n_val)?;
            for (name, ids, scenes) in [
                ("train", train_ids, &data.train),
                ("val", val_ids, &data.val),
            ] {
                let pairs: Vec<(u64, &_)> = ids.into_iter().zip(scenes).collect();
                export_scenes(&pairs, &root.join(name))?;
            }
            log::info!(
                "wrote {} scenes to {}",
                cfg.n_train + cfg.n_val,
                root.display()
            );
        }
        other => unreachable!("unknown subcommand {other}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if matches.get_flag("quiet") {
        "warn"
    } else {
        "info"
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
