use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crosssrn::benchmark::{select_benchmark, SelectorConfig};
use crosssrn::config::RunConfig;
use crosssrn::gradcheck::{self, GradCheckConfig};
use crosssrn::imaging::{self, Ratio};
use crosssrn::metrics::{self, BicubicUpscaler, ColorSpace, EvalProtocol, Identity, Upscaler};
use crosssrn::model::{self, Model};
use crosssrn::training::{self, Checkpoint, Dataset, Trainer};
use crosssrn::Error;

#[derive(Parser)]
#[command(name = "crosssrn", version, about = "Cross convolution super-resolution")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a directory of HR PNG images.
    Train(TrainArgs),
    /// Upscale one image.
    Sr(SrArgs),
    /// PSNR/SSIM of a model over a directory of HR images.
    Eval(EvalArgs),
    /// Pick the edge-rich images out of one or more directories.
    SelectBench(SelectArgs),
    /// Parameter and 720p MAC counts.
    Count(CountArgs),
    /// Bicubic downscale of one image.
    Degrade(DegradeArgs),
    /// Finite-difference verification of every gradient rule.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct Overrides {
    /// key=value run configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable), e.g. `--set channels=16`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Overrides {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for item in &self.set {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{item}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SrArgs {
    /// Checkpoint path, or `bicubic`.
    #[arg(long)]
    model: String,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Scale for `--model bicubic`.
    #[arg(long)]
    scale: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint path, `bicubic` or `identity`.
    #[arg(long)]
    model: String,
    #[arg(long)]
    hr_dir: PathBuf,
    #[arg(long)]
    scale: Option<usize>,
    #[arg(long, default_value = "y")]
    protocol: String,
    /// Border pixels ignored on each side (defaults to the scale).
    #[arg(long)]
    crop: Option<usize>,
    /// Print `id<TAB>psnr<TAB>ssim` rows instead of a table.
    #[arg(long)]
    tsv: bool,
}

#[derive(Args)]
struct SelectArgs {
    /// Directory of PNG images (repeatable).
    #[arg(long, required = true)]
    dir: Vec<PathBuf>,
    #[arg(long, default_value_t = 128.0)]
    te: f64,
    #[arg(long, default_value_t = 12.0)]
    tr: f64,
    #[arg(long, default_value_t = imaging::GAUSSIAN_SIGMA)]
    sigma: f64,
    /// Where to write the selected ids.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CountArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Also print the ablation grid.
    #[arg(long)]
    ablations: bool,
}

#[derive(Args)]
struct DegradeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    scale: usize,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// `all` or a comma-separated list of check names (prefixes match).
    #[arg(long, default_value = "all")]
    ops: String,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, hide = true)]
    inject_fault: bool,
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Diverged(_) | Error::Shape { .. } | Error::Backward(_) => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn verification_failure(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Sr(a) => sr(a),
        Command::Eval(a) => eval(a),
        Command::SelectBench(a) => select(a),
        Command::Count(a) => count(a),
        Command::Degrade(a) => degrade(a),
        Command::Gradcheck(a) => run_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let mut cfg = a.overrides.load()?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    if !a.data_dir.is_dir() {
        return Err(Error::Config(format!(
            "data directory {} does not exist",
            a.data_dir.display()
        ))
        .into());
    }
    let mut trainer = match &a.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let saved = ckpt.model_config()?;
            if saved != cfg.model {
                return Err(Error::Config(format!(
                    "{} was trained with `{}`, the configuration asks for `{}`",
                    path.display(),
                    saved.label(),
                    cfg.model.label()
                ))
                .into());
            }
            Trainer::resume(&ckpt, &cfg.train)?
        }
        None => Trainer::new(&cfg.model, &cfg.train)?,
    };
    let data = Dataset::load_dir(&a.data_dir, cfg.model.scale, cfg.train.patch_size)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::Config(format!("{}: {e}", a.out_dir.display())))?;
    let snapshot = a.out_dir.join("config.txt");
    std::fs::write(&snapshot, cfg.to_text())
        .map_err(|e| Error::Config(format!("{}: {e}", snapshot.display())))?;
    log::info!(
        "training {} on {} images from epoch {}",
        cfg.model.label(),
        data.len(),
        trainer.epoch()
    );
    let summary = training::train_loop(&mut trainer, &data, Some(&a.out_dir), &mut |rec| {
        println!("{rec}");
    })?;
    if let Some(last) = summary.checkpoints.last() {
        println!("saved {}", last.display());
    }
    Ok(())
}

fn bicubic_scale(scale: Option<usize>) -> Result<usize, Failure> {
    scale
        .filter(|&s| s >= 1)
        .ok_or_else(|| Error::Config("--model bicubic needs --scale".into()).into())
}

/// Resolve `--model` to an upscaler.
fn load_upscaler(spec: &str, scale: Option<usize>) -> Result<Box<dyn Upscaler>, Failure> {
    match spec {
        "bicubic" => Ok(Box::new(BicubicUpscaler {
            scale: bicubic_scale(scale)?,
        })),
        "identity" => {
            if scale.is_some_and(|s| s != 1) {
                return Err(Error::Config("--model identity only works at scale 1".into()).into());
            }
            Ok(Box::new(Identity))
        }
        path => {
            let model: Model<f32> = Checkpoint::load(Path::new(path))?.to_model()?;
            if let Some(s) = scale {
                if s != model.config().scale {
                    return Err(Error::Config(format!(
                        "{path} is a x{} model but --scale is {s}",
                        model.config().scale
                    ))
                    .into());
                }
            }
            Ok(Box::new(model))
        }
    }
}

fn sr(a: SrArgs) -> Result<(), Failure> {
    let upscaler = load_upscaler(&a.model, a.scale)?;
    let lr = imaging::load_png(&a.input)?.to_float();
    let out = upscaler.upscale(&lr)?;
    imaging::save_png(&out.to_u8(), &a.output)?;
    log::info!(
        "{}x{} -> {}x{}",
        lr.width(),
        lr.height(),
        out.width(),
        out.height()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), Failure> {
    let upscaler = load_upscaler(&a.model, a.scale)?;
    let color: ColorSpace = a.protocol.parse()?;
    let protocol = EvalProtocol {
        color,
        crop: a.crop.unwrap_or(upscaler.scale()),
    };
    let report = metrics::evaluate_model(upscaler.as_ref(), &a.hr_dir, &protocol)?;
    if a.tsv {
        print!("{}", report.to_tsv());
    } else {
        println!("{report}");
    }
    if report.mean_psnr().is_nan() {
        return Err(verification_failure("evaluation produced a non-finite mean PSNR"));
    }
    Ok(())
}

fn select(a: SelectArgs) -> Result<(), Failure> {
    let cfg = SelectorConfig {
        edge_threshold: a.te,
        response_threshold: a.tr,
        sigma: a.sigma,
    };
    let dirs: Vec<&Path> = a.dir.iter().map(PathBuf::as_path).collect();
    for d in &dirs {
        if !d.is_dir() {
            return Err(Error::Config(format!("{} is not a directory", d.display())).into());
        }
    }
    let report = select_benchmark(&dirs, &cfg)?;
    std::fs::write(&a.out, report.to_list())
        .map_err(|e| Error::Config(format!("{}: {e}", a.out.display())))?;
    print!("{report}");
    println!("{}", report.count());
    Ok(())
}

fn count(a: CountArgs) -> Result<(), Failure> {
    let cfg = a.overrides.load()?;
    cfg.model.validate()?;
    let mut rows = vec![(cfg.model.label(), cfg.model.clone())];
    if a.ablations {
        rows.extend(model::ablation_grid(&cfg.model));
    }
    println!("{:<22} {:>12} {:>10}", "model", "params", "MACs");
    for (name, m) in rows {
        let report = model::account(&m)?;
        println!(
            "{:<22} {:>12} {:>9.2}G",
            name,
            format!("{:.0}K", report.params as f64 / 1e3),
            report.macs as f64 / 1e9
        );
    }
    println!("(x{} scale, MACs for a 1280x720 output)", cfg.model.scale);
    Ok(())
}

fn degrade(a: DegradeArgs) -> Result<(), Failure> {
    if a.scale == 0 {
        return Err(Error::Config("--scale must be positive".into()).into());
    }
    let hr = imaging::load_png(&a.input)?.to_float();
    if hr.width() % a.scale != 0 || hr.height() % a.scale != 0 {
        eprintln!(
            "note: {}x{} is not divisible by {}, center-cropping",
            hr.width(),
            hr.height(),
            a.scale
        );
    }
    let cropped = hr.center_crop_to_multiple(a.scale)?;
    let lr = imaging::bicubic_resize(&cropped, Ratio::down(a.scale), true)?;
    imaging::save_png(&lr.to_u8(), &a.output)?;
    Ok(())
}

fn run_gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    if a.trials == 0 {
        return Err(Error::Config("--trials must be positive".into()).into());
    }
    let names: Vec<String> = a
        .ops
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    let mut checks = gradcheck::select(gradcheck::standard_checks(), &names);
    if a.inject_fault {
        checks.push(gradcheck::corrupted_check());
    }
    if checks.is_empty() {
        return Err(Error::Config(format!("no gradient checks match `{}`", a.ops)).into());
    }
    let mut cfg = GradCheckConfig {
        trials: a.trials,
        ..GradCheckConfig::default()
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    println!("{:<24} {:>6} {:>12}  result", "check", "trials", "max rel err");
    let mut failed = Vec::new();
    for check in &checks {
        let out = gradcheck::run_check(check, &cfg);
        println!(
            "{:<24} {:>6} {:>12.3e}  {}",
            out.name,
            out.trials,
            out.max_rel_err,
            if out.passed { "PASS" } else { "FAIL" }
        );
        if !out.passed {
            log::warn!("{}: {}", out.name, out.detail);
            failed.push(out.name);
        }
    }
    if failed.is_empty() {
        println!("all {} checks passed", checks.len());
        Ok(())
    } else {
        Err(verification_failure(format!(
            "gradient check failed: {}",
            failed.join(", ")
        )))
    }
}
