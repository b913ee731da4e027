use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use qrobust::datasets::{default_specs, export_csv, save_dataset};
use qrobust::experiment::{
    emit_report, run_noise_study, run_with, synthetic_data, write_manifest, ExperimentConfig,
    ExperimentReport, RunOptions, Task,
};
use qrobust::Error;

#[derive(Parser)]
#[command(name = "qrobust", version, about = "Adversarial robustness workbench for quantum and classical signal classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic Fourier-series train/test splits.
    GenData(GenData),
    /// Train (or reuse checkpoints for) every configured model.
    Train(ConfigArgs),
    /// White-box sweep over the PSR grid; needs trained checkpoints.
    Attack(ConfigArgs),
    /// Black-box transfer sweep for every ordered model pair; needs trained checkpoints.
    Transfer(ConfigArgs),
    /// KS-test perceptibility of crafted sets; needs trained checkpoints.
    Stealth(ConfigArgs),
    /// Depolarizing-noise study of the AAE-QVC models.
    NoiseStudy(ConfigArgs),
    /// Full pipeline: train if needed, run every sweep, write all reports.
    Report(ConfigArgs),
}

#[derive(Args)]
struct GenData {
    #[arg(long, value_parser = parse_task, default_value = "3class")]
    task: Task,
    #[arg(long, default_value_t = 500)]
    train_per_class: usize,
    #[arg(long, default_value_t = 100)]
    test_per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also write `label,v0..v255` CSV copies.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    noise_p: Option<f64>,
    /// Comma-separated PSR values in dB, e.g. `-40,-30,-20`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    psr_grid: Option<Vec<f64>>,
}

fn parse_task(s: &str) -> Result<Task, String> {
    match s {
        "binary" => Ok(Task::Binary),
        "3class" => Ok(Task::ThreeClass),
        _ => Err(format!("unknown task `{s}` (binary or 3class)")),
    }
}

impl ConfigArgs {
    fn load(&self) -> qrobust::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        if let Some(p) = self.noise_p {
            cfg.noise_p = p;
        }
        if let Some(g) = &self.psr_grid {
            cfg.psr_grid = g.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn create_dir(dir: &Path) -> qrobust::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn paths(ps: &[PathBuf]) -> Value {
    ps.iter().map(|p| Value::String(p.display().to_string())).collect()
}

fn summary(report: &ExperimentReport, written: &[PathBuf]) -> Value {
    let clean: Vec<Value> = report
        .rows
        .iter()
        .filter(|r| r.scenario == qrobust::experiment::Scenario::Clean)
        .map(|r| json!({"model": r.model, "accuracy": r.accuracy}))
        .collect();
    json!({
        "clean_accuracy": clean,
        "rows": report.rows.len(),
        "stealth_rows": report.stealth.len(),
        "files": paths(written),
    })
}

fn sweep(args: &ConfigArgs, sub: &str, opts: RunOptions) -> qrobust::Result<Value> {
    let cfg = args.load()?;
    let report = run_with(&cfg, opts)?;
    let dir = cfg.output_dir.join(sub);
    create_dir(&dir)?;
    let written = emit_report(&report, &dir)?;
    Ok(summary(&report, &written))
}

fn run(cli: Cli) -> qrobust::Result<Value> {
    let checkpoints_only = RunOptions {
        train_missing: false,
        whitebox: false,
        blackbox: false,
        stealth: false,
    };
    match cli.command {
        Command::GenData(a) => {
            let data = synthetic_data(
                &default_specs(a.task.n_classes()),
                a.train_per_class,
                a.test_per_class,
                a.seed,
            )?;
            create_dir(&a.out_dir)?;
            let mut written = Vec::new();
            for (name, d) in [("train", &data.train), ("test", &data.test)] {
                let p = a.out_dir.join(format!("{name}.qsig"));
                save_dataset(d, &p)?;
                written.push(p);
                if a.csv {
                    let p = a.out_dir.join(format!("{name}.csv"));
                    export_csv(d, &p)?;
                    written.push(p);
                }
            }
            Ok(json!({
                "train_samples": data.train.len(),
                "test_samples": data.test.len(),
                "files": paths(&written),
            }))
        }
        Command::Train(a) => {
            let cfg = a.load()?;
            let report = run_with(&cfg, RunOptions::train_only())?;
            let mut written = emit_report(&report, &cfg.output_dir.join("train"))?;
            written.push(write_manifest(&cfg)?);
            Ok(summary(&report, &written))
        }
        Command::Attack(a) => sweep(
            &a,
            "whitebox",
            RunOptions {
                whitebox: true,
                ..checkpoints_only
            },
        ),
        Command::Transfer(a) => sweep(
            &a,
            "blackbox",
            RunOptions {
                blackbox: true,
                ..checkpoints_only
            },
        ),
        Command::Stealth(a) => sweep(
            &a,
            "stealth",
            RunOptions {
                stealth: true,
                ..checkpoints_only
            },
        ),
        Command::NoiseStudy(a) => {
            let cfg = a.load()?;
            let report = run_noise_study(&cfg)?;
            let dir = cfg.output_dir.join("noise_study");
            create_dir(&dir)?;
            let written = emit_report(&report, &dir)?;
            Ok(summary(&report, &written))
        }
        Command::Report(a) => {
            let cfg = a.load()?;
            let report = run_with(&cfg, RunOptions::full())?;
            let mut written = emit_report(&report, &cfg.output_dir)?;
            written.push(write_manifest(&cfg)?);
            Ok(summary(&report, &written))
        }
    }
}

fn error_json(e: &Error) -> Value {
    let mut v = json!({"error": e.kind(), "message": e.to_string()});
    match e {
        Error::Config { path, .. } => v["path"] = json!(path),
        Error::MissingCheckpoint(p) | Error::Io { path: p, .. } => v["path"] = json!(p.display().to_string()),
        _ => {}
    }
    v
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({"error": "usage", "message": e.to_string().trim_end()}));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json value"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
