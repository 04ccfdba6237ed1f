//! Command-line front end: synthetic data, training, cross-validation and
//! prediction.
//!
//! Exit codes: 0 on success, 1 when a run fails, 2 when the arguments,
//! config or inputs are rejected before any work starts.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use drivenet::cascade::train_cascade;
use drivenet::container::{load_model, save_model, ContainerError};
use drivenet::dataset::{
    format_label, load_frame, load_samples, write_synth_dataset, DatasetError, DatasetManifest, Sample, SynthSpec,
};
use drivenet::metrics::{crossval, folds_csv};
use drivenet::tensor::Tensor;

pub use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "drivenet", version, about = "CNN + random forest image classifier")]
pub struct Cli {
    /// Cap on worker threads (default: one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic rectangle dataset as 640x480 PGM frames plus manifest.csv.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        per_class: usize,
        #[arg(long, default_value_t = 0.05)]
        sigma: f32,
        #[arg(long)]
        seed: u64,
    },
    /// Train a model; writes model.drvn and train_log.csv to the output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// k-fold cross-validation; writes fold, confusion and summary reports.
    Crossval {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `k` from the config (default 5).
        #[arg(long)]
        k: Option<usize>,
    },
    /// Classify one frame; prints `label,p0,...,p9`.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(runtime)?;
    }
    match cli.command {
        Command::Synth {
            out,
            per_class,
            sigma,
            seed,
        } => cmd_synth(&out, per_class, sigma, seed),
        Command::Train { config } => cmd_train(&RunConfig::load(&config)?),
        Command::Crossval { config, k } => {
            let mut config = RunConfig::load(&config)?;
            if let Some(k) = k {
                config.k = k;
            }
            cmd_crossval(&config).map(|summary| print!("{summary}"))
        }
        Command::Predict { model, image } => cmd_predict(&model, &image).map(|line| println!("{line}")),
    }
}

pub fn cmd_synth(out: &Path, per_class: usize, sigma: f32, seed: u64) -> Result<(), CliError> {
    if per_class == 0 {
        return Err(CliError::Validation("--per-class must be at least 1".into()));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(CliError::Validation(format!("--sigma must be finite and >= 0, got {sigma}")));
    }
    std::fs::create_dir_all(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    write_synth_dataset(
        out,
        &SynthSpec {
            per_class,
            noise_sigma: sigma,
            seed,
        },
    )
    .map_err(runtime)?;
    Ok(())
}

/// Reads the manifest (a validation step) and then loads every image.
fn load_dataset(config: &RunConfig) -> Result<Vec<Sample>, CliError> {
    if !config.manifest.is_file() {
        return Err(CliError::Validation(format!("manifest {} does not exist", config.manifest.display())));
    }
    let manifest = DatasetManifest::read(&config.manifest).map_err(|e| CliError::Validation(e.to_string()))?;
    if manifest.is_empty() {
        return Err(CliError::Validation(format!("manifest {} has no rows", config.manifest.display())));
    }
    if config.k > manifest.len() {
        return Err(CliError::Validation(format!("k = {} exceeds the {} samples", config.k, manifest.len())));
    }
    load_samples(&manifest).map_err(runtime)
}

fn create_output_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

pub fn cmd_train(config: &RunConfig) -> Result<(), CliError> {
    let samples = load_dataset(config)?;
    let images: Vec<&Tensor> = samples.iter().map(|s| &s.image).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let trained = train_cascade(&images, &labels, &config.cascade).map_err(runtime)?;

    create_output_dir(&config.output_dir)?;
    save_model(&trained.model, &config.output_dir.join("model.drvn")).map_err(runtime)?;
    let mut log = format!("# {}\n# n_samples={}\nepoch,mean_loss,train_accuracy\n", config.header(), samples.len());
    for e in &trained.epochs {
        writeln!(log, "{},{:.6},{:.6}", e.epoch, e.mean_loss, e.train_accuracy).unwrap();
    }
    write(&config.output_dir.join("train_log.csv"), &log)
}

/// Runs the protocol and writes its reports; returns the printed summary.
pub fn cmd_crossval(config: &RunConfig) -> Result<String, CliError> {
    if config.k < 2 {
        return Err(CliError::Validation(format!("k must be at least 2, got {}", config.k)));
    }
    let samples = load_dataset(config)?;
    let images: Vec<&Tensor> = samples.iter().map(|s| &s.image).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    create_output_dir(&config.output_dir)?;

    let mut fold_errors = Ok(());
    let result = crossval(&images, &labels, config.k, &config.cascade, config.seed, |fold, _| {
        eprintln!(
            "fold {}/{}: accuracy {:.4} ({} of {})",
            fold.fold + 1,
            config.k,
            fold.report.accuracy,
            fold.report.correct(),
            fold.report.n_samples
        );
        let path = config.output_dir.join(format!("confusion_fold{}.csv", fold.fold));
        if fold_errors.is_ok() {
            fold_errors = write(&path, &fold.report.confusion_csv());
        }
    })
    .map_err(runtime)?;
    fold_errors?;

    let dir = &config.output_dir;
    write(&dir.join("folds.csv"), &folds_csv(&result))?;
    write(&dir.join("confusion_pooled.csv"), &result.pooled.confusion_csv())?;
    let mut predictions = String::from("path,label,fold,predicted\n");
    for (i, s) in samples.iter().enumerate() {
        writeln!(
            predictions,
            "{},{},{},{}",
            s.source,
            format_label(s.label),
            result.plan.assignments[i],
            format_label(result.predictions[i])
        )
        .unwrap();
    }
    write(&dir.join("predictions.csv"), &predictions)?;
    let summary = format!(
        "# {}\n# k={} n_samples={}\n{}",
        config.header(),
        config.k,
        samples.len(),
        result.pooled.summary("Drive-Net")
    );
    write(&dir.join("summary.txt"), &summary)?;
    Ok(summary)
}

/// Returns `label,p0,...,p9` for one frame.
pub fn cmd_predict(model: &Path, image: &Path) -> Result<String, CliError> {
    for p in [model, image] {
        if !p.is_file() {
            return Err(CliError::Validation(format!("{} does not exist", p.display())));
        }
    }
    let model = load_model(model).map_err(|e| match e {
        ContainerError::BadMagic | ContainerError::VersionMismatch { .. } => CliError::Validation(e.to_string()),
        other => runtime(other),
    })?;
    let frame = load_frame(image).map_err(|e| match e {
        DatasetError::Io { .. } => runtime(e),
        other => CliError::Validation(other.to_string()),
    })?;
    let (class, posterior) = model.predict(&frame).map_err(runtime)?;
    let mut line = format_label(class);
    for p in posterior {
        write!(line, ",{p:.6}").unwrap();
    }
    Ok(line)
}
