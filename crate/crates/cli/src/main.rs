//! `sdegan`: generate data, train, sample, evaluate and self-check.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sdegan::datasets::{generate_ou, OUParams};
use sdegan::eval::{evaluate, histograms_csv, AuxConfig, EvalOptions, MARGINAL_INDICES};
use sdegan::gan::{train_with, Phase, TrainConfig, TrainedModel};
use sdegan::gradcheck;
use sdegan::nn::Checkpoint;
use sdegan::paths::{read_csv, write_csv};
use sdegan::Error;

const SEED_ENV: &str = "SDEGAN_SEED";

#[derive(Parser)]
#[command(name = "sdegan", version, about = "Neural SDE generative models for time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a time-dependent Ornstein-Uhlenbeck dataset as CSV.
    GenerateOu(GenerateOu),
    /// Train a generator and discriminator on a CSV dataset.
    Train(Train),
    /// Draw paths from a trained checkpoint.
    Sample(Sample),
    /// Compare a checkpoint's samples with real data.
    Evaluate(Evaluate),
    /// Check gradients against finite differences.
    Gradcheck(Gradcheck),
}

#[derive(Args)]
struct GenerateOu {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8192)]
    samples: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0.02)]
    mu: f64,
    #[arg(long, default_value_t = 0.1)]
    theta: f64,
    #[arg(long, default_value_t = 0.4)]
    sigma: f64,
    #[arg(long, default_value_t = 63.0)]
    horizon: f64,
    #[arg(long, default_value_t = 1.0)]
    spacing: f64,
    /// Internal solver steps per output interval.
    #[arg(long, default_value_t = 10)]
    substeps: usize,
    #[arg(long, default_value_t = 0.0)]
    z0: f64,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints, losses and the resolved config.
    #[arg(long)]
    out: PathBuf,
    /// Starting values: ou-paper (the defaults) or ou-desk.
    #[arg(long)]
    preset: Option<String>,
    /// Flat `key = value` file applied over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override applied last; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    generator_steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Print a progress line every this many generator steps; 0 for none.
    #[arg(long, default_value_t = 100)]
    log_every: usize,
}

#[derive(Args)]
struct Sample {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Evaluate {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Directory for the metric report and marginal histograms.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    mmd_depth: usize,
    /// Comma-separated grid indices for marginal comparisons.
    #[arg(long, value_delimiter = ',', default_values_t = MARGINAL_INDICES)]
    indices: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    bins: usize,
    /// Skip the auxiliary classifier and predictor.
    #[arg(long)]
    no_aux: bool,
    #[arg(long)]
    aux_epochs: Option<usize>,
    #[arg(long)]
    aux_lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Gradcheck {
    #[arg(long)]
    seed: Option<u64>,
}

/// `--seed`, else `SDEGAN_SEED`, else `None`.
fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>, Error> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Error::Config {
            key: SEED_ENV.into(),
            msg: format!("expected an unsigned integer, got `{v}`"),
        }),
        Err(_) => Ok(None),
    }
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// `data.csv` -> `data.config`
fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("config")
}

fn dump(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

fn generate_ou_cmd(a: GenerateOu) -> Result<(), Error> {
    let p = OUParams {
        mu: a.mu,
        theta: a.theta,
        sigma: a.sigma,
        samples: a.samples,
        horizon: a.horizon,
        spacing: a.spacing,
        substeps: a.substeps,
        z0: a.z0,
        seed: resolve_seed(a.seed)?.unwrap_or(0),
    };
    let data = generate_ou(&p)?;
    write_csv(&data, &a.out)?;
    let config = dump(&[
        ("command", "generate-ou".into()),
        ("samples", p.samples.to_string()),
        ("seed", p.seed.to_string()),
        ("mu", p.mu.to_string()),
        ("theta", p.theta.to_string()),
        ("sigma", p.sigma.to_string()),
        ("horizon", p.horizon.to_string()),
        ("spacing", p.spacing.to_string()),
        ("substeps", p.substeps.to_string()),
        ("z0", p.z0.to_string()),
    ]);
    write(&sidecar(&a.out), &config)?;
    println!("wrote {} samples to {}", data.len(), a.out.display());
    Ok(())
}

/// Defaults, then preset, then `SDEGAN_SEED`, then the config file, then
/// flags.
fn resolve_train_config(a: &Train) -> Result<TrainConfig, Error> {
    let mut c = match &a.preset {
        Some(name) => TrainConfig::preset(name)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = resolve_seed(None)? {
        c.seed = seed;
    }
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        c.apply_text(&text)?;
    }
    for o in &a.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| Error::Config {
            key: o.clone(),
            msg: "expected --set key=value".into(),
        })?;
        c.set(k.trim(), v.trim())?;
    }
    if let Some(s) = a.seed {
        c.seed = s;
    }
    if let Some(w) = a.workers {
        c.workers = w;
    }
    if let Some(n) = a.generator_steps {
        c.generator_steps = n;
    }
    if let Some(b) = a.batch_size {
        c.batch_size = b;
    }
    c.validate()?;
    Ok(c)
}

fn train_cmd(a: Train) -> Result<(), Error> {
    let config = resolve_train_config(&a)?;
    let data = read_csv(&a.data)?;
    fs::create_dir_all(&a.out).map_err(|e| io_error(&a.out, e))?;
    write(&a.out.join("config.txt"), &config.dump())?;
    let every = a.log_every;
    let mut gen_steps = 0;
    let report = train_with(&config, &data, |r| {
        if r.phase == Phase::Generator {
            gen_steps += 1;
            if every > 0 && gen_steps % every == 0 {
                eprintln!("generator step {gen_steps} loss {:.6}", r.loss);
            }
        }
    })?;
    report.final_model.to_checkpoint().save(&a.out.join("final.ckpt"))?;
    if let Some(swa) = &report.swa_model {
        swa.to_checkpoint().save(&a.out.join("swa.ckpt"))?;
    }
    write(&a.out.join("losses.csv"), &report.to_csv())?;
    write(
        &a.out.join("timing.txt"),
        &format!("wall_clock_secs = {:.3}\n", report.wall_clock_secs),
    )?;
    println!(
        "trained {} generator steps in {:.1}s; outputs in {}",
        config.generator_steps,
        report.wall_clock_secs,
        a.out.display()
    );
    Ok(())
}

fn sample_cmd(a: Sample) -> Result<(), Error> {
    let model = TrainedModel::from_checkpoint(&Checkpoint::load(&a.checkpoint)?)?;
    let seed = resolve_seed(a.seed)?.unwrap_or(0);
    let paths = model.sample(a.count, seed)?;
    write_csv(&paths.to_series(), &a.out)?;
    let config = dump(&[
        ("command", "sample".into()),
        ("checkpoint", a.checkpoint.display().to_string()),
        ("count", a.count.to_string()),
        ("seed", seed.to_string()),
        ("config_hash", model.config.hash()),
    ]);
    write(&sidecar(&a.out), &config)?;
    println!("wrote {} paths to {}", a.count, a.out.display());
    Ok(())
}

fn evaluate_cmd(a: Evaluate) -> Result<(), Error> {
    let model = TrainedModel::from_checkpoint(&Checkpoint::load(&a.checkpoint)?)?;
    let real = read_csv(&a.data)?;
    let mut aux = AuxConfig::default();
    if let Some(e) = a.aux_epochs {
        aux.epochs = e;
    }
    if let Some(lr) = a.aux_lr {
        aux.lr = lr;
    }
    let opts = EvalOptions {
        indices: a.indices.clone(),
        mmd_depth: a.mmd_depth,
        auxiliary: !a.no_aux,
        aux,
        bins: a.bins,
        seed: resolve_seed(a.seed)?.unwrap_or(0),
    };
    let (report, hists) = evaluate(&real, &model, &opts)?;
    let text = report.to_text();
    write(&a.out.join("metrics.txt"), &text)?;
    write(&a.out.join("histograms.csv"), &histograms_csv(&hists))?;
    let config = dump(&[
        ("command", "evaluate".into()),
        ("checkpoint", a.checkpoint.display().to_string()),
        ("data", a.data.display().to_string()),
    ]);
    write(&a.out.join("config.txt"), &config)?;
    print!("{text}");
    Ok(())
}

fn gradcheck_cmd(a: Gradcheck) -> Result<bool, Error> {
    let seed = resolve_seed(a.seed)?.unwrap_or(0);
    let report = gradcheck::run(seed)?;
    for line in report.lines() {
        println!("{line}");
    }
    Ok(report.all_passed())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::InvalidArgument(_) => 1,
        Error::Data { .. } | Error::Io { .. } | Error::Checkpoint { .. } | Error::Shape { .. } => 2,
        Error::Numerical { .. } | Error::Autodiff(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenerateOu(a) => generate_ou_cmd(a).map(|_| true),
        Command::Train(a) => train_cmd(a).map(|_| true),
        Command::Sample(a) => sample_cmd(a).map(|_| true),
        Command::Evaluate(a) => evaluate_cmd(a).map(|_| true),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: gradient checks failed");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
