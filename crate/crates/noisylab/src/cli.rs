//! Command-line pipeline: every stage reads and writes plain CSV plus a
//! TOML manifest, so any output directory can be replayed byte for byte.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, bad inputs), 2
//! runtime failure (I/O, training divergence). Flag defaults may be
//! supplied by a TOML config file (`--config`); explicit flags win. The
//! default output root comes from `NOISYLAB_OUT`, falling back to
//! `./noisylab-out`.

use crate::bench::{self, ExperimentSpec, Scenario};
use crate::data::{make_splits, Dataset, FiveSplits, GaussianTaskSpec};
use crate::error::{Error, Result};
use crate::lqm::{
    correct_labels, sample_hard_labels, select_paired_subset, train_auxiliary, train_lqm,
    targets_to_csv, LqmTrainConfig, RaterEncoder,
};
use crate::manifest::{atomic_write, RunManifest};
use crate::metrics::{
    krippendorff_alpha, mean_tv_distance, metrics_to_csv, multi_label_to_soft, rater_error_rate,
    MetricRow,
};
use crate::nnkit::{LrSchedule, MlpModel, TrainConfig, TrainingSet};
use crate::noise::{
    flip_class_conditional, flip_independent, paired_error_rate, upsample_incorrect, PairedLabel,
    TransitionMatrix,
};
use crate::rater::{
    calibrate_pool, generate_noisy_dataset, labels_from_csv, pool_configs_at_strength, train_pool,
    LabelRecord, NoisePreset, NoisyDataset, RaterFeatures, RaterLabelMode,
    SingleLabelView,
};
use crate::robust::{
    run_records_to_csv, train_baseline, train_bootstrap, train_coteaching, BootstrapMode,
    RunRecord,
};
use crate::seed::SeedSpec;
use clap::{Args, Parser, Subcommand};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(
    name = "noisylab",
    version,
    about = "Instance-dependent noisy-label simulation, metrics, correction, and benchmarks"
)]
struct Cli {
    /// Master seed for all random streams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML config file supplying defaults for omitted flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (defaults to $NOISYLAB_OUT, then ./noisylab-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic Gaussian classification dataset.
    GenData(GenDataArgs),
    /// Split a dataset into the five pipeline splits.
    Split(SplitArgs),
    /// Train (and optionally calibrate) a rater pool on the clean splits.
    TrainRaters(TrainRatersArgs),
    /// Label the noisy splits with a saved rater pool.
    GenNoisy(GenNoisyArgs),
    /// Apply independent or class-conditional label flipping to a dataset.
    Flip(FlipArgs),
    /// Upsample incorrect labels toward a target error rate.
    Upsample(UpsampleArgs),
    /// Dataset metrics: rater error rate, agreement, distribution distance.
    Metrics(MetricsArgs),
    /// Label Quality Model training and label correction.
    #[command(subcommand)]
    Lqm(LqmCommand),
    /// Train a main model (baseline, bootstrap, or co-teaching).
    Train(TrainArgs),
    /// Run an experiment scenario and write its report.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Number of classes.
    #[arg(long)]
    classes: Option<usize>,
    /// Feature dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Examples per class (single value, or comma-separated per-class counts).
    #[arg(long)]
    per_class: Option<String>,
    /// Class-center separation; larger is easier.
    #[arg(long)]
    separation: Option<f64>,
    /// Isotropic covariance scale (standard deviation).
    #[arg(long)]
    covariance: Option<f64>,
    /// Offset added to every center coordinate (shifts the task off the
    /// origin; class geometry is unchanged).
    #[arg(long)]
    offset: Option<f64>,
}

#[derive(Args, Debug)]
struct SplitArgs {
    /// Dataset CSV to split.
    #[arg(long)]
    data: PathBuf,
    /// Five comma-separated ratios summing to 1.
    #[arg(long)]
    ratios: Option<String>,
}

#[derive(Args, Debug)]
struct TrainRatersArgs {
    /// Directory holding the five split CSVs.
    #[arg(long)]
    splits_dir: PathBuf,
    /// Noise preset to calibrate toward (low, medium, high).
    #[arg(long)]
    preset: Option<String>,
    /// Explicit target rater error rate (overrides --preset).
    #[arg(long)]
    target_rate: Option<f64>,
    /// Explicit pool strength in [0, 1] (skips calibration).
    #[arg(long)]
    strength: Option<f64>,
    /// Number of raters in the pool.
    #[arg(long)]
    pool_size: Option<usize>,
    /// Labeling mode used during calibration: hard or soft.
    #[arg(long)]
    mode: Option<String>,
    /// Calibration tolerance on the error rate.
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Args, Debug)]
struct GenNoisyArgs {
    /// Directory holding the five split CSVs.
    #[arg(long)]
    splits_dir: PathBuf,
    /// Directory holding rater checkpoints and rater_features.csv.
    #[arg(long)]
    raters_dir: PathBuf,
    /// Labeling mode: hard (argmax) or soft (sampled).
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Args, Debug)]
struct FlipArgs {
    /// Dataset CSV whose labels are flipped.
    #[arg(long)]
    data: PathBuf,
    /// Independent flipping probability.
    #[arg(long)]
    delta: Option<f64>,
    /// Transition-matrix CSV for class-conditional flipping.
    #[arg(long)]
    transition: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct UpsampleArgs {
    /// Dataset CSV carrying the clean labels.
    #[arg(long)]
    data: PathBuf,
    /// Noisy-labels CSV (example_id,rater_id,label).
    #[arg(long)]
    labels: PathBuf,
    /// Target overall error rate.
    #[arg(long)]
    target: f64,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    /// Report Krippendorff's alpha of a noisy-labels file.
    #[arg(long)]
    alpha: bool,
    /// Report the rater error rate (needs --data for clean labels).
    #[arg(long)]
    error_rate: bool,
    /// Report mean total variation distance between two target files.
    #[arg(long)]
    tv: bool,
    /// Noisy-labels CSV.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Dataset CSV with clean labels.
    #[arg(long)]
    data: Option<PathBuf>,
    /// First soft-label targets CSV (for --tv).
    #[arg(long)]
    targets_a: Option<PathBuf>,
    /// Second soft-label targets CSV (for --tv).
    #[arg(long)]
    targets_b: Option<PathBuf>,
    /// Also write a metrics report CSV here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum LqmCommand {
    /// Train the corrector on a paired subset of the noisy training split.
    Train(LqmTrainArgs),
    /// Produce corrected targets for the noisy training split.
    Correct(LqmCorrectArgs),
}

#[derive(Args, Debug)]
struct LqmTrainArgs {
    /// Directory holding the five split CSVs.
    #[arg(long)]
    splits_dir: PathBuf,
    /// Noisy-labels CSV from gen-noisy.
    #[arg(long)]
    labels: PathBuf,
    /// Rater-features CSV from train-raters.
    #[arg(long)]
    features: PathBuf,
    /// Fraction of the noisy training split with clean labels.
    #[arg(long)]
    paired_fraction: Option<f64>,
}

#[derive(Args, Debug)]
struct LqmCorrectArgs {
    /// Directory written by `lqm train`.
    #[arg(long)]
    model_dir: PathBuf,
    /// Blend weight toward the corrector output.
    #[arg(long)]
    gamma: f64,
    /// Also sample one hard label per example from the blend.
    #[arg(long)]
    sample_hard: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// baseline, bootstrap, or coteaching.
    #[arg(long)]
    algorithm: Option<String>,
    /// Directory holding the five split CSVs.
    #[arg(long)]
    splits_dir: PathBuf,
    /// Single-label CSV (example_id,rater_id,label) for the training split;
    /// clean labels are used when omitted.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Single-label CSV for the validation split; clean labels when omitted.
    #[arg(long)]
    valid_labels: Option<PathBuf>,
    /// Bootstrap blend weight.
    #[arg(long)]
    beta: Option<f64>,
    /// Co-teaching forget rate.
    #[arg(long)]
    forget_rate: Option<f64>,
    /// Co-teaching warmup steps.
    #[arg(long)]
    warmup: Option<usize>,
    /// Hidden layer widths, comma separated.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// noise_sweep, imbalance, difficulty, pretrain, instance_vs_random,
    /// lqm_compare, or lqm_combine.
    scenario: String,
    /// Comma-separated master seeds.
    #[arg(long)]
    seeds: Option<String>,
    /// Comma-separated presets (low, medium, high).
    #[arg(long)]
    presets: Option<String>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    pool_size: Option<usize>,
    #[arg(long)]
    paired_fraction: Option<f64>,
    /// Base binary-task separation.
    #[arg(long)]
    separation: Option<f64>,
    /// Calibration tolerance on preset error rates.
    #[arg(long)]
    tolerance: Option<f64>,
}

/// Flag defaults loaded from the optional TOML config file.
struct FileConfig {
    root: toml::Value,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let root = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                text.parse::<toml::Value>()
                    .map_err(|e| Error::invalid(format!("config {}: {e}", p.display())))?
            }
            None => toml::Value::Table(Default::default()),
        };
        Ok(FileConfig { root })
    }

    fn lookup(&self, section: &str, key: &str) -> Option<&toml::Value> {
        self.root.get(section).and_then(|t| t.get(key))
    }

    fn top(&self, key: &str) -> Option<&toml::Value> {
        self.root.get(key)
    }

    fn usize_of(&self, section: &str, key: &str) -> Option<usize> {
        self.lookup(section, key).and_then(|v| v.as_integer()).map(|v| v as usize)
    }

    fn f64_of(&self, section: &str, key: &str) -> Option<f64> {
        self.lookup(section, key).and_then(|v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64)))
    }

    fn str_of(&self, section: &str, key: &str) -> Option<String> {
        self.lookup(section, key).and_then(|v| v.as_str()).map(String::from)
    }
}

fn default_out() -> PathBuf {
    std::env::var_os("NOISYLAB_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("noisylab-out"))
}

fn parse_mode(mode: &str) -> Result<RaterLabelMode> {
    match mode {
        "hard" => Ok(RaterLabelMode::Hard),
        "soft" => Ok(RaterLabelMode::Soft),
        other => Err(Error::invalid(format!("unknown labeling mode {other:?}"))),
    }
}

fn parse_preset(name: &str) -> Result<NoisePreset> {
    match name {
        "low" => Ok(NoisePreset::Low),
        "medium" => Ok(NoisePreset::Medium),
        "high" => Ok(NoisePreset::High),
        other => Err(Error::invalid(format!("unknown preset {other:?}"))),
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|f| {
            f.trim()
                .parse::<T>()
                .map_err(|_| Error::invalid(format!("bad {what} entry {f:?}")))
        })
        .collect()
}

const SPLIT_FILES: [&str; 5] = [
    "clean_label_train.csv",
    "clean_label_valid.csv",
    "noisy_label_train.csv",
    "noisy_label_valid.csv",
    "test.csv",
];

fn load_splits(dir: &Path) -> Result<FiveSplits> {
    let read = |name: &str| -> Result<Dataset> {
        let path = dir.join(name);
        let text = std::fs::read_to_string(&path)?;
        Dataset::from_csv(&text, &path)
    };
    let clean_label_train = read(SPLIT_FILES[0])?;
    let clean_label_valid = read(SPLIT_FILES[1])?;
    let noisy_label_train = read(SPLIT_FILES[2])?;
    let noisy_label_valid = read(SPLIT_FILES[3])?;
    let test = read(SPLIT_FILES[4])?;
    // Splits may carry different realized label spaces; unify on the max.
    let num_classes = [
        &clean_label_train,
        &clean_label_valid,
        &noisy_label_train,
        &noisy_label_valid,
        &test,
    ]
    .iter()
    .map(|d| d.num_classes())
    .max()
    .unwrap();
    let widen = |d: Dataset| -> Result<Dataset> {
        Dataset::new(d.examples().to_vec(), d.dim(), num_classes)
    };
    Ok(FiveSplits {
        clean_label_train: widen(clean_label_train)?,
        clean_label_valid: widen(clean_label_valid)?,
        noisy_label_train: widen(noisy_label_train)?,
        noisy_label_valid: widen(noisy_label_valid)?,
        test: widen(test)?,
    })
}

fn rater_features_from_csv(text: &str, path: &Path) -> Result<Vec<RaterFeatures>> {
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.starts_with("rater_id,arch_id,epochs,initial_lr,batch_size") => {}
        _ => {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: 1,
                detail: "unexpected rater-features header".into(),
            })
        }
    }
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = |detail: String| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            detail,
        };
        if fields.len() < 7 {
            return Err(bad(format!("expected >= 7 fields, got {}", fields.len())));
        }
        let parse_f = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
        let confusion = if fields.len() > 7 {
            let flat: Vec<f64> = fields[7..]
                .iter()
                .map(|s| parse_f(s))
                .collect::<Result<_>>()?;
            let k = (flat.len() as f64).sqrt() as usize;
            if k * k != flat.len() {
                return Err(bad("confusion block is not square".into()));
            }
            Some(TransitionMatrix::new(
                flat.chunks(k).map(|c| c.to_vec()).collect(),
            )?)
        } else {
            None
        };
        out.push(RaterFeatures {
            rater_id: fields[0].parse().map_err(|_| bad(format!("bad rater_id {:?}", fields[0])))?,
            arch_id: fields[1].parse().map_err(|_| bad(format!("bad arch_id {:?}", fields[1])))?,
            epochs: fields[2].parse().map_err(|_| bad(format!("bad epochs {:?}", fields[2])))?,
            initial_lr: parse_f(fields[3])?,
            batch_size: fields[4].parse().map_err(|_| bad(format!("bad batch_size {:?}", fields[4])))?,
            subsample_fraction: parse_f(fields[5])?,
            valid_accuracy: parse_f(fields[6])?,
            confusion,
        });
    }
    Ok(out)
}

fn write_with_manifest(
    manifest: &mut RunManifest,
    path: &Path,
    bytes: &[u8],
) -> Result<()> {
    atomic_write(path, bytes)?;
    manifest.record_output(path)?;
    Ok(())
}

/// Parse argv and run; maps every failure to the documented exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    1
                }
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e @ (Error::InvalidInput(_) | Error::Parse { .. })) => {
            eprintln!("error: {e}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let config = FileConfig::load(cli.config.as_deref())?;
    let master_seed = cli
        .seed
        .or_else(|| config.top("seed").and_then(|v| v.as_integer()).map(|v| v as u64))
        .unwrap_or(0);
    let out_dir = cli
        .out
        .clone()
        .or_else(|| config.top("out").and_then(|v| v.as_str()).map(PathBuf::from))
        .unwrap_or_else(default_out);

    match cli.command {
        Command::GenData(args) => cmd_gen_data(args, &config, master_seed, &out_dir),
        Command::Split(args) => cmd_split(args, &config, master_seed, &out_dir),
        Command::TrainRaters(args) => cmd_train_raters(args, &config, master_seed, &out_dir),
        Command::GenNoisy(args) => cmd_gen_noisy(args, &config, master_seed, &out_dir),
        Command::Flip(args) => cmd_flip(args, master_seed, &out_dir),
        Command::Upsample(args) => cmd_upsample(args, master_seed, &out_dir),
        Command::Metrics(args) => cmd_metrics(args, &out_dir),
        Command::Lqm(LqmCommand::Train(args)) => cmd_lqm_train(args, &config, master_seed, &out_dir),
        Command::Lqm(LqmCommand::Correct(args)) => cmd_lqm_correct(args, master_seed, &out_dir),
        Command::Train(args) => cmd_train(args, &config, master_seed, &out_dir),
        Command::Bench(args) => cmd_bench(args, &config, master_seed, &out_dir),
    }
}

fn cmd_gen_data(
    args: GenDataArgs,
    config: &FileConfig,
    master_seed: u64,
    out_dir: &Path,
) -> Result<()> {
    let classes = args.classes.or(config.usize_of("gen-data", "classes")).unwrap_or(2);
    let dim = args.dim.or(config.usize_of("gen-data", "dim")).unwrap_or(2);
    let per_class_text = args
        .per_class
        .or(config.str_of("gen-data", "per-class"))
        .unwrap_or_else(|| "1000".to_string());
    let counts: Vec<usize> = parse_list(&per_class_text, "per-class count")?;
    let per_class_counts = if counts.len() == 1 {
        vec![counts[0]; classes]
    } else {
        counts
    };
    let separation = args.separation.or(config.f64_of("gen-data", "separation")).unwrap_or(2.0);
    let covariance = args.covariance.or(config.f64_of("gen-data", "covariance")).unwrap_or(1.0);
    let offset = args.offset.or(config.f64_of("gen-data", "offset")).unwrap_or(0.0);
    let centers = if offset != 0.0 {
        if classes > dim {
            return Err(Error::invalid("offset centers need classes <= dim"));
        }
        Some(
            (0..classes)
                .map(|k| {
                    let mut c = vec![offset; dim];
                    c[k] += separation;
                    c
                })
                .collect(),
        )
    } else {
        None
    };
    let spec = GaussianTaskSpec {
        num_classes: classes,
        dim,
        per_class_counts,
        separation,
        covariance_scale: covariance,
        centers,
    };
    let seed = SeedSpec::new(master_seed, "gen-data");
    let data = crate::data::make_gaussian_task(&spec, &seed)?;
    let path = out_dir.join("dataset.csv");
    let mut manifest = RunManifest::new(
        "gen-data",
        master_seed,
        format!(
            "classes = {classes}\ndim = {dim}\nseparation = {separation}\ncovariance = {covariance}\noffset = {offset}\nper_class = {:?}\n",
            spec.per_class_counts
        ),
    );
    write_with_manifest(&mut manifest, &path, data.to_csv().as_bytes())?;
    manifest.write_beside(&path)?;
    println!("wrote {} ({} examples)", path.display(), data.len());
    Ok(())
}

fn cmd_split(args: SplitArgs, config: &FileConfig, master_seed: u64, out_dir: &Path) -> Result<()> {
    let ratios_text = args
        .ratios
        .or(config.str_of("split", "ratios"))
        .unwrap_or_else(|| "0.25,0.05,0.5,0.05,0.15".to_string());
    let parts: Vec<f64> = parse_list(&ratios_text, "ratio")?;
    let ratios: [f64; 5] = parts
        .try_into()
        .map_err(|_| Error::invalid("expected exactly five ratios"))?;
    let text = std::fs::read_to_string(&args.data)?;
    let data = Dataset::from_csv(&text, &args.data)?;
    let seed = SeedSpec::new(master_seed, "split");
    let splits = make_splits(&data, ratios, &seed)?;
    let mut manifest = RunManifest::new(
        "split",
        master_seed,
        format!("ratios = {ratios:?}\nsource = \"{}\"\n", args.data.display()),
    );
    manifest.record_input(&args.data)?;
    for (name, split) in SPLIT_FILES.iter().zip(splits.splits()) {
        let path = out_dir.join(name);
        write_with_manifest(&mut manifest, &path, split.to_csv().as_bytes())?;
    }
    manifest.write_beside(&out_dir.join("splits"))?;
    println!(
        "wrote 5 splits under {} (sizes {:?})",
        out_dir.display(),
        splits.splits().map(|s| s.len())
    );
    Ok(())
}

fn pool_to_disk(
    pool: &[(MlpModel, RaterFeatures)],
    noisy: Option<&NoisyDataset>,
    out_dir: &Path,
    manifest: &mut RunManifest,
) -> Result<()> {
    for (model, features) in pool {
        let path = out_dir.join(format!("rater_{}.mlp", features.rater_id));
        write_with_manifest(manifest, &path, &model.to_bytes())?;
    }
    let features_csv = match noisy {
        Some(n) => n.rater_features_to_csv(),
        None => {
            let tmp = NoisyDataset::new(
                vec![],
                vec![],
                pool.iter().map(|(_, f)| f.clone()).collect(),
                1,
                2,
                String::new(),
            )?;
            tmp.rater_features_to_csv()
        }
    };
    write_with_manifest(manifest, &out_dir.join("rater_features.csv"), features_csv.as_bytes())?;
    Ok(())
}

fn cmd_train_raters(
    args: TrainRatersArgs,
    config: &FileConfig,
    master_seed: u64,
    out_dir: &Path,
) -> Result<()> {
    let splits = load_splits(&args.splits_dir)?;
    let pool_size = args.pool_size.or(config.usize_of("train-raters", "pool-size")).unwrap_or(10);
    let mode = parse_mode(
        &args
            .mode
            .or(config.str_of("train-raters", "mode"))
            .unwrap_or_else(|| "hard".to_string()),
    )?;
    let tolerance = args
        .tolerance
        .or(config.f64_of("train-raters", "tolerance"))
        .unwrap_or(0.02);
    let seed = SeedSpec::new(master_seed, "train-raters");

    let (configs, pool, noisy, summary) = if let Some(strength) = args.strength {
        let configs = pool_configs_at_strength(strength, pool_size);
        let pool = train_pool(&configs, &splits, &seed)?;
        let noisy = generate_noisy_dataset(&pool, &splits, mode, &seed.child("label"))?;
        let rate = rater_error_rate(&noisy)?;
        (configs, pool, noisy, format!("strength = {strength}\nmeasured_error_rate = {rate}\n"))
    } else {
        let target = match args.target_rate {
            Some(t) => t,
            None => {
                let preset_name = args
                    .preset
                    .or(config.str_of("train-raters", "preset"))
                    .unwrap_or_else(|| "medium".to_string());
                parse_preset(&preset_name)?.target_error_rate()
            }
        };
        let cal = calibrate_pool(&splits, target, tolerance, pool_size, mode, &seed)?;
        let summary = format!(
            "target_error_rate = {target}\nmeasured_error_rate = {}\nstrength = {}\n",
            cal.measured_error_rate, cal.strength
        );
        (cal.configs, cal.pool, cal.noisy, summary)
    };

    let mut config_echo = summary.clone();
    for (i, c) in configs.iter().enumerate() {
        let _ = writeln!(
            config_echo,
            "# rater {i}: arch {}, epochs {}, lr {}, batch {}, subsample {}",
            c.arch_id, c.epochs, c.initial_lr, c.batch_size, c.subsample_fraction
        );
    }
    let mut manifest = RunManifest::new("train-raters", master_seed, config_echo);
    pool_to_disk(&pool, Some(&noisy), out_dir, &mut manifest)?;
    manifest.write_beside(&out_dir.join("raters"))?;
    print!("{summary}");
    println!("wrote {} rater checkpoints under {}", pool.len(), out_dir.display());
    Ok(())
}

fn cmd_gen_noisy(
    args: GenNoisyArgs,
    config: &FileConfig,
    master_seed: u64,
    out_dir: &Path,
) -> Result<()> {
    let splits = load_splits(&args.splits_dir)?;
    let mode = parse_mode(
        &args
            .mode
            .or(config.str_of("gen-noisy", "mode"))
            .unwrap_or_else(|| "hard".to_string()),
    )?;
    let features_path = args.raters_dir.join("rater_features.csv");
    let features_text = std::fs::read_to_string(&features_path)?;
    let features = rater_features_from_csv(&features_text, &features_path)?;
    let mut pool = Vec::new();
    for f in features {
        let model = MlpModel::load(&args.raters_dir.join(format!("rater_{}.mlp", f.rater_id)))?;
        pool.push((model, f));
    }
    let seed = SeedSpec::new(master_seed, "gen-noisy");
    let noisy = generate_noisy_dataset(&pool, &splits, mode, &seed)?;
    let rate = rater_error_rate(&noisy)?;
    let mut manifest = RunManifest::new(
        "gen-noisy",
        master_seed,
        format!("mode = \"{mode:?}\"\nraters = {}\nerror_rate = {rate}\n", pool.len()),
    );
    manifest.record_input(&features_path)?;
    let labels_path = out_dir.join("noisy_labels.csv");
    write_with_manifest(&mut manifest, &labels_path, noisy.labels_to_csv().as_bytes())?;
    write_with_manifest(
        &mut manifest,
        &out_dir.join("rater_features.csv"),
        noisy.rater_features_to_csv().as_bytes(),
    )?;
    manifest.write_beside(&labels_path)?;
    println!("wrote {} label records to {} (error rate {rate:.4})", noisy.labels().len(), labels_path.display());
    Ok(())
}

fn cmd_flip(args: FlipArgs, master_seed: u64, out_dir: &Path) -> Result<()> {
    let text = std::fs::read_to_string(&args.data)?;
    let data = Dataset::from_csv(&text, &args.data)?;
    let clean: Vec<usize> = data.examples().iter().map(|e| e.clean_label).collect();
    let seed = SeedSpec::new(master_seed, "flip");
    let (flipped, config_echo) = match (&args.delta, &args.transition) {
        (Some(delta), None) => (
            flip_independent(&clean, *delta, data.num_classes(), &seed)?,
            format!("kind = \"independent\"\ndelta = {delta}\n"),
        ),
        (None, Some(path)) => {
            let t_text = std::fs::read_to_string(path)?;
            let t = TransitionMatrix::from_csv(&t_text, path)?;
            (
                flip_class_conditional(&clean, &t, &seed)?,
                format!("kind = \"class_conditional\"\ntransition = \"{}\"\n", path.display()),
            )
        }
        _ => {
            return Err(Error::invalid(
                "flip needs exactly one of --delta or --transition",
            ))
        }
    };
    let out = data.with_labels(&flipped)?;
    let path = out_dir.join("flipped.csv");
    let mut manifest = RunManifest::new("flip", master_seed, config_echo);
    manifest.record_input(&args.data)?;
    write_with_manifest(&mut manifest, &path, out.to_csv().as_bytes())?;
    manifest.write_beside(&path)?;
    let changed = clean
        .iter()
        .zip(out.examples())
        .filter(|(c, e)| **c != e.clean_label)
        .count();
    println!("wrote {} ({} of {} labels changed)", path.display(), changed, clean.len());
    Ok(())
}

fn cmd_upsample(args: UpsampleArgs, master_seed: u64, out_dir: &Path) -> Result<()> {
    let data_text = std::fs::read_to_string(&args.data)?;
    let data = Dataset::from_csv(&data_text, &args.data)?;
    let labels_text = std::fs::read_to_string(&args.labels)?;
    let records = labels_from_csv(&labels_text, &args.labels)?;
    let clean: BTreeMap<u64, usize> = data.examples().iter().map(|e| (e.id, e.clean_label)).collect();
    let paired: Vec<PairedLabel> = records
        .iter()
        .map(|r| {
            let clean_label = clean.get(&r.example_id).copied().ok_or_else(|| {
                Error::invalid(format!("label references unknown example {}", r.example_id))
            })?;
            Ok(PairedLabel {
                example_id: r.example_id,
                rater_id: r.rater_id,
                label: r.label,
                clean_label,
            })
        })
        .collect::<Result<_>>()?;
    let seed = SeedSpec::new(master_seed, "upsample");
    let upsampled = upsample_incorrect(&paired, args.target, &seed)?;
    let rate = paired_error_rate(&upsampled);
    let mut out = String::from("example_id,rater_id,label\n");
    for r in &upsampled {
        let _ = writeln!(out, "{},{},{}", r.example_id, r.rater_id, r.label);
    }
    let path = out_dir.join("upsampled_labels.csv");
    let mut manifest = RunManifest::new(
        "upsample",
        master_seed,
        format!("target = {}\nachieved = {rate}\nadded = {}\n", args.target, upsampled.len() - paired.len()),
    );
    manifest.record_input(&args.data)?;
    manifest.record_input(&args.labels)?;
    write_with_manifest(&mut manifest, &path, out.as_bytes())?;
    manifest.write_beside(&path)?;
    println!("wrote {} (error rate {rate:.4})", path.display());
    Ok(())
}

fn soft_targets_from_csv(path: &Path) -> Result<Vec<crate::data::SoftLabel>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.starts_with("example_id,prob_0") => {}
        _ => {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: 1,
                detail: "expected header example_id,prob_0,...".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let probs: Vec<f64> = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.display().to_string(),
                    line: idx + 1,
                    detail: format!("bad probability {f:?}"),
                })
            })
            .collect::<Result<_>>()?;
        out.push(crate::data::SoftLabel::new(probs)?);
    }
    Ok(out)
}

fn noisy_from_files(labels: &Path, data: &Path) -> Result<NoisyDataset> {
    let data_text = std::fs::read_to_string(data)?;
    let dataset = Dataset::from_csv(&data_text, data)?;
    let labels_text = std::fs::read_to_string(labels)?;
    let records = labels_from_csv(&labels_text, labels)?;
    noisy_from_records(&dataset, records)
}

fn noisy_from_records(dataset: &Dataset, records: Vec<LabelRecord>) -> Result<NoisyDataset> {
    let rater_ids: std::collections::BTreeSet<usize> =
        records.iter().map(|r| r.rater_id).collect();
    let features = rater_ids
        .into_iter()
        .map(|rater_id| RaterFeatures {
            rater_id,
            arch_id: 0,
            epochs: 0,
            initial_lr: 0.0,
            batch_size: 0,
            subsample_fraction: 1.0,
            valid_accuracy: 0.0,
            confusion: None,
        })
        .collect();
    let max_label = records.iter().map(|r| r.label).max().unwrap_or(0);
    NoisyDataset::new(
        dataset.examples().to_vec(),
        records,
        features,
        dataset.dim(),
        dataset.num_classes().max(max_label + 1),
        String::new(),
    )
}

fn cmd_metrics(args: MetricsArgs, out_dir: &Path) -> Result<()> {
    let mut rows: Vec<MetricRow> = Vec::new();
    let mut printed = false;
    if args.alpha || args.error_rate {
        let labels = args
            .labels
            .as_ref()
            .ok_or_else(|| Error::invalid("--alpha and --error-rate need --labels"))?;
        let data = args
            .data
            .as_ref()
            .ok_or_else(|| Error::invalid("metrics need --data for the example table"))?;
        let noisy = noisy_from_files(labels, data)?;
        let dataset_id = labels.display().to_string();
        if args.alpha {
            let alpha = krippendorff_alpha(&noisy.label_matrix())?;
            println!("krippendorff_alpha,{alpha:?}");
            rows.push(MetricRow {
                metric: "krippendorff_alpha".into(),
                dataset_id: dataset_id.clone(),
                value: alpha,
                stderr: None,
                n: noisy.labels().len(),
            });
            printed = true;
        }
        if args.error_rate {
            let rate = rater_error_rate(&noisy)?;
            println!("rater_error_rate,{rate:?}");
            rows.push(MetricRow {
                metric: "rater_error_rate".into(),
                dataset_id,
                value: rate,
                stderr: None,
                n: noisy.labels().len(),
            });
            printed = true;
        }
    }
    if args.tv {
        let (a, b) = match (&args.targets_a, &args.targets_b, &args.labels, &args.data) {
            (Some(a), Some(b), _, _) => (soft_targets_from_csv(a)?, soft_targets_from_csv(b)?),
            (None, Some(b), Some(labels), Some(data)) => {
                // Compare a noisy dataset's empirical distributions to a file.
                let noisy = noisy_from_files(labels, data)?;
                (multi_label_to_soft(&noisy)?, soft_targets_from_csv(b)?)
            }
            _ => {
                return Err(Error::invalid(
                    "--tv needs --targets-a and --targets-b (or --labels/--data and --targets-b)",
                ))
            }
        };
        let tv = mean_tv_distance(&a, &b)?;
        println!("mean_tv_distance,{tv:?}");
        rows.push(MetricRow {
            metric: "mean_tv_distance".into(),
            dataset_id: "pair".into(),
            value: tv,
            stderr: None,
            n: a.len(),
        });
        printed = true;
    }
    if !printed {
        return Err(Error::invalid("choose at least one of --alpha, --error-rate, --tv"));
    }
    if let Some(report) = args.report {
        let path = if report.is_absolute() { report } else { out_dir.join(report) };
        atomic_write(&path, metrics_to_csv(&rows).as_bytes())?;
    }
    Ok(())
}

fn cmd_lqm_train(
    args: LqmTrainArgs,
    config: &FileConfig,
    master_seed: u64,
    out_dir: &Path,
) -> Result<()> {
    let splits = load_splits(&args.splits_dir)?;
    let labels_text = std::fs::read_to_string(&args.labels)?;
    let records = labels_from_csv(&labels_text, &args.labels)?;
    let features_text = std::fs::read_to_string(&args.features)?;
    let features = rater_features_from_csv(&features_text, &args.features)?;
    let fraction = args
        .paired_fraction
        .or(config.f64_of("lqm", "paired-fraction"))
        .unwrap_or(0.1);

    // Rebuild the noisy dataset over the two noisy splits.
    let mut examples = splits.noisy_label_train.examples().to_vec();
    examples.extend_from_slice(splits.noisy_label_valid.examples());
    let num_classes = splits.noisy_label_train.num_classes();
    let mut noisy = NoisyDataset::new(
        examples,
        records,
        features,
        splits.noisy_label_train.dim(),
        num_classes,
        String::new(),
    )?;
    noisy.set_split_ids(
        splits.noisy_label_train.ids().collect(),
        splits.noisy_label_valid.ids().collect(),
    );

    let seed = SeedSpec::new(master_seed, "lqm");
    let train_view = SingleLabelView::from_noisy(&noisy.train_view(), &seed.child("single"))?;
    let valid_view = SingleLabelView::from_noisy(&noisy.valid_view(), &seed.child("single-valid"))?;
    let paired = select_paired_subset(&train_view, fraction, &seed.child("paired"))?;
    let aux_cfg = TrainConfig::new(20, 32, 0.15, seed.child("aux-cfg"));
    let aux = train_auxiliary(&train_view, &paired, &valid_view, &[8], &aux_cfg, &seed.child("aux"))?;
    let lqm = train_lqm(
        &paired,
        &aux.model,
        train_view.rater_features(),
        &LqmTrainConfig::default(),
        &seed.child("lqm"),
    )?;

    let mut manifest = RunManifest::new(
        "lqm-train",
        master_seed,
        format!(
            "paired_fraction = {fraction}\npaired_records = {}\nhidden_width = {}\naux_trained_on = \"{:?}\"\n",
            paired.len(),
            lqm.hidden_width,
            aux.trained_on
        ),
    );
    manifest.record_input(&args.labels)?;
    manifest.record_input(&args.features)?;
    write_with_manifest(&mut manifest, &out_dir.join("lqm_model.mlp"), &lqm.model.to_bytes())?;
    write_with_manifest(&mut manifest, &out_dir.join("aux_model.mlp"), &aux.model.to_bytes())?;
    let encoder_toml = toml::to_string_pretty(&lqm.encoder)
        .map_err(|e| Error::invalid(format!("encoder encode: {e}")))?;
    write_with_manifest(&mut manifest, &out_dir.join("encoder.toml"), encoder_toml.as_bytes())?;
    // The sampled single-label assignment; `lqm correct` replays it.
    let mut single_csv = String::from("example_id,rater_id,label\n");
    for rec in train_view.records() {
        let _ = writeln!(single_csv, "{},{},{}", rec.example_id, rec.rater_id, rec.label);
    }
    write_with_manifest(&mut manifest, &out_dir.join("single_labels.csv"), single_csv.as_bytes())?;
    // Features needed to rebuild the training view at correction time.
    let dataset = train_view.clean_dataset()?;
    write_with_manifest(&mut manifest, &out_dir.join("train_examples.csv"), dataset.to_csv().as_bytes())?;
    let summary = format!(
        "hidden_width = {}\naux_trained_on = \"{:?}\"\npaired_records = {}\n",
        lqm.hidden_width, aux.trained_on, paired.len()
    );
    write_with_manifest(&mut manifest, &out_dir.join("lqm_summary.toml"), summary.as_bytes())?;
    manifest.write_beside(&out_dir.join("lqm_model.mlp"))?;
    println!(
        "trained corrector: width {}, auxiliary on {:?}, {} paired records",
        lqm.hidden_width,
        aux.trained_on,
        paired.len()
    );
    Ok(())
}

fn cmd_lqm_correct(args: LqmCorrectArgs, master_seed: u64, out_dir: &Path) -> Result<()> {
    let dir = &args.model_dir;
    let model = MlpModel::load(&dir.join("lqm_model.mlp"))?;
    let aux = MlpModel::load(&dir.join("aux_model.mlp"))?;
    let encoder_text = std::fs::read_to_string(dir.join("encoder.toml"))?;
    let encoder: RaterEncoder = toml::from_str(&encoder_text)
        .map_err(|e| Error::invalid(format!("encoder decode: {e}")))?;
    let width = model.layer_sizes().get(1).copied().unwrap_or(0);
    let lqm = crate::lqm::LqmModel {
        encoder,
        model,
        hidden_width: width,
    };
    let examples_path = dir.join("train_examples.csv");
    let examples_text = std::fs::read_to_string(&examples_path)?;
    let dataset = Dataset::from_csv(&examples_text, &examples_path)?;
    let labels_path = dir.join("single_labels.csv");
    let labels_text = std::fs::read_to_string(&labels_path)?;
    let records = labels_from_csv(&labels_text, &labels_path)?;

    let targets = correct_labels(&lqm, &aux, dataset.examples(), &records, args.gamma)?;
    let ids: Vec<u64> = dataset.examples().iter().map(|e| e.id).collect();
    let csv = targets_to_csv(&ids, &targets)?;
    let path = out_dir.join("corrected_targets.csv");
    let mut manifest = RunManifest::new(
        "lqm-correct",
        master_seed,
        format!("gamma = {}\nhidden_width = {width}\nsample_hard = {}\n", args.gamma, args.sample_hard),
    );
    write_with_manifest(&mut manifest, &path, csv.as_bytes())?;
    if args.sample_hard {
        let seed = SeedSpec::new(master_seed, "lqm-sample");
        let hard = sample_hard_labels(&targets, &seed);
        let mut csv = String::from("example_id,rater_id,label\n");
        for ((id, rec), label) in ids.iter().zip(&records).zip(hard) {
            let _ = writeln!(csv, "{},{},{}", id, rec.rater_id, label);
        }
        write_with_manifest(&mut manifest, &out_dir.join("sampled_labels.csv"), csv.as_bytes())?;
    }
    manifest.write_beside(&path)?;
    println!("wrote {} corrected targets (gamma {})", ids.len(), args.gamma);
    Ok(())
}

fn apply_single_labels(split: &Dataset, labels_file: Option<&Path>) -> Result<Dataset> {
    match labels_file {
        None => Ok(split.clone()),
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let records = labels_from_csv(&text, path)?;
            let by_id: BTreeMap<u64, usize> =
                records.iter().map(|r| (r.example_id, r.label)).collect();
            let labels: Vec<usize> = split
                .examples()
                .iter()
                .map(|e| {
                    by_id.get(&e.id).copied().ok_or_else(|| {
                        Error::invalid(format!("no label for example {} in {}", e.id, path.display()))
                    })
                })
                .collect::<Result<_>>()?;
            let max_label = labels.iter().copied().max().unwrap_or(0);
            let widened = Dataset::new(
                split.examples().to_vec(),
                split.dim(),
                split.num_classes().max(max_label + 1),
            )?;
            widened.with_labels(&labels)
        }
    }
}

fn cmd_train(args: TrainArgs, config: &FileConfig, master_seed: u64, out_dir: &Path) -> Result<()> {
    let splits = load_splits(&args.splits_dir)?;
    let algorithm = args
        .algorithm
        .or(config.str_of("train", "algorithm"))
        .unwrap_or_else(|| "baseline".to_string());
    let hidden_text = args
        .hidden
        .or(config.str_of("train", "hidden"))
        .unwrap_or_else(|| "16".to_string());
    let hidden: Vec<usize> = parse_list(&hidden_text, "hidden width")?;
    let epochs = args.epochs.or(config.usize_of("train", "epochs")).unwrap_or(30);
    let batch_size = args.batch_size.or(config.usize_of("train", "batch-size")).unwrap_or(32);
    let lr = args.lr.or(config.f64_of("train", "lr")).unwrap_or(0.2);

    let train_data = apply_single_labels(&splits.noisy_label_train, args.labels.as_deref())?;
    let valid_data = apply_single_labels(&splits.noisy_label_valid, args.valid_labels.as_deref())?;
    let error_rate = {
        let wrong = train_data
            .examples()
            .iter()
            .zip(splits.noisy_label_train.examples())
            .filter(|(noisy, clean)| noisy.clean_label != clean.clean_label)
            .count();
        wrong as f64 / train_data.len().max(1) as f64
    };
    let set = TrainingSet::from_dataset(&train_data)?;
    let cfg = TrainConfig {
        epochs,
        batch_size,
        initial_lr: lr,
        schedule: LrSchedule::Cosine,
        weight_decay: 0.0,
        seed: SeedSpec::new(master_seed, "train"),
    };

    let run = match algorithm.as_str() {
        "baseline" => train_baseline(&set, &valid_data, &hidden, &cfg)?,
        "bootstrap" => {
            let beta = args.beta.or(config.f64_of("train", "beta")).unwrap_or(0.95);
            train_bootstrap(&set, &valid_data, &hidden, &cfg, beta, BootstrapMode::Soft)?
        }
        "coteaching" => {
            let forget = args
                .forget_rate
                .or(config.f64_of("train", "forget-rate"))
                .unwrap_or(error_rate.min(0.9));
            let total_steps = epochs * (set.len() / batch_size.max(1));
            let warmup = args.warmup.or(config.usize_of("train", "warmup")).unwrap_or(total_steps / 10);
            train_coteaching(&set, &valid_data, &hidden, &cfg, forget, warmup)?.chosen
        }
        other => return Err(Error::invalid(format!("unknown algorithm {other:?}"))),
    };
    let test_accuracy = crate::metrics::accuracy(&run.model, &splits.test)?;
    let aucpr = if splits.test.num_classes() == 2 {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for ex in splits.test.examples() {
            scores.push(run.model.probs(&ex.features)?[1]);
            labels.push(ex.clean_label == 1);
        }
        crate::metrics::aucpr(&scores, &labels).ok()
    } else {
        None
    };

    let noise_kind = if args.labels.is_some() { "labeled" } else { "clean" };
    let record = RunRecord {
        run_id: format!("{algorithm}-{master_seed}"),
        algorithm: algorithm.clone(),
        noise_kind: noise_kind.into(),
        error_rate,
        seed: master_seed,
        test_accuracy,
        valid_accuracy: run.best_valid_accuracy,
        aucpr,
    };
    let mut manifest = RunManifest::new(
        "train",
        master_seed,
        format!(
            "algorithm = \"{algorithm}\"\nhidden = {hidden:?}\nepochs = {epochs}\nbatch_size = {batch_size}\nlr = {lr}\n"
        ),
    );
    let record_path = out_dir.join("run_record.csv");
    write_with_manifest(&mut manifest, &record_path, run_records_to_csv(&[record]).as_bytes())?;
    write_with_manifest(&mut manifest, &out_dir.join("model.mlp"), &run.model.to_bytes())?;
    manifest.write_beside(&record_path)?;
    println!(
        "{algorithm}: test accuracy {test_accuracy:.4}, valid accuracy {:.4}",
        run.best_valid_accuracy
    );
    Ok(())
}

fn cmd_bench(args: BenchArgs, config: &FileConfig, master_seed: u64, out_dir: &Path) -> Result<()> {
    let scenario = Scenario::parse(&args.scenario)?;
    let seeds: Vec<u64> = match args.seeds.or(config.str_of("bench", "seeds")) {
        Some(text) => parse_list(&text, "seed")?,
        None => (0..5).map(|i| master_seed.wrapping_add(i)).collect(),
    };
    let mut spec = ExperimentSpec::new(scenario, seeds);
    if let Some(presets) = args.presets.or(config.str_of("bench", "presets")) {
        spec.presets = presets
            .split(',')
            .map(|p| parse_preset(p.trim()))
            .collect::<Result<_>>()?;
    }
    if let Some(v) = args.per_class.or(config.usize_of("bench", "per-class")) {
        spec.per_class = v;
    }
    if let Some(v) = args.pool_size.or(config.usize_of("bench", "pool-size")) {
        spec.pool_size = v;
    }
    if let Some(v) = args.paired_fraction.or(config.f64_of("bench", "paired-fraction")) {
        spec.paired_fraction = v;
    }
    if let Some(v) = args.separation.or(config.f64_of("bench", "separation")) {
        spec.separation = v;
    }
    if let Some(v) = args.tolerance.or(config.f64_of("bench", "tolerance")) {
        spec.calibration_tolerance = v;
    }
    spec.validate()?;
    let rows = bench::run_scenario(&spec)?;
    let csv = bench::rows_to_csv(&rows);
    let path = out_dir.join(format!("report_{}.csv", scenario.name()));
    let mut manifest = RunManifest::new(
        format!("bench {}", scenario.name()),
        master_seed,
        spec.canonical(),
    );
    write_with_manifest(&mut manifest, &path, csv.as_bytes())?;
    manifest.write_beside(&path)?;
    println!("wrote {} ({} rows)", path.display(), rows.len());
    Ok(())
}
