use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use eegssm::eeg_io::{load_dataset, synthesize_dataset, write_dataset, SplitPart, SynthSpec};
use eegssm::eval::{bench_sweep_with_progress, evaluate_checkpoint, BenchConfig};
use eegssm::model::{load_checkpoint, save_checkpoint, Checkpoint, ModelConfig, Variant};
use eegssm::optw::band_weight_summary;
use eegssm::pipeline::{condition_recording, features_csv, load_and_prepare, ChannelSet, PrepConfig, PreparedSplit, SplitMode};
use eegssm::segmentation::segment;
use eegssm::spectral::segment_features;
use eegssm::training::{grad_check, miniature_config, train_with_progress, GradCheckOptions, TrainConfig, GRAD_CHECK_TOL};
use eegssm::{Error, Result};

#[derive(Parser)]
#[command(name = "eegssm", version, about = "EEG dementia classification with state-space encoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic three-class dataset.
    Synth(SynthArgs),
    /// Export log band powers of every segment as CSV.
    Featurize(FeaturizeArgs),
    /// Train one model and write its checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one partition.
    Eval(EvalArgs),
    /// Sweep variants, rates, channel sets and segment lengths.
    Bench(BenchArgs),
    /// Finite-difference check of the analytic gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Total subject count, a multiple of 3.
    #[arg(long, default_value_t = 30)]
    subjects: usize,
    #[arg(long, default_value_t = 60.0)]
    duration_s: f64,
    #[arg(long, default_value_t = 500.0)]
    rate: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct PrepArgs {
    #[arg(long, default_value_t = 2.0)]
    seg_seconds: f64,
    /// Resample to this rate first (integer decimation only).
    #[arg(long)]
    rate: Option<f64>,
    /// `all`, a preset size (19, 12, 6) or a comma-separated list.
    #[arg(long, default_value = "all")]
    channels: String,
}

#[derive(Args)]
struct FeaturizeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    prep: PrepArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "combined")]
    variant: String,
    #[command(flatten)]
    prep: PrepArgs,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Attach the per-band ensemble layer during training.
    #[arg(long)]
    optw: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `subject` or `segment`.
    #[arg(long, default_value = "subject")]
    split_mode: String,
    #[arg(long, default_value_t = 16)]
    n_state: usize,
    #[arg(long, default_value_t = 2)]
    n_blocks: usize,
    #[arg(long)]
    out: PathBuf,
    /// History CSV; defaults to `<out>.history.csv`.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "2,4,8,16,32,64,128,256")]
    seg_seconds: String,
    #[arg(long, default_value = "500,250,125")]
    rates: String,
    #[arg(long, default_value = "all")]
    variants: String,
    /// Semicolon-separated channel sets, each as accepted by `train`.
    #[arg(long, default_value = "all")]
    channel_sets: String,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    ckpt_dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// `all` or one variant.
    #[arg(long, default_value = "all")]
    variant: String,
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse::<T>().map_err(|_| Error::InvalidArgument(format!("bad {what} {v:?}"))))
        .collect()
}

fn parse_variants(s: &str) -> Result<Vec<Variant>> {
    if s == "all" {
        Ok(Variant::ALL.to_vec())
    } else {
        parse_list(s, "variant")
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn prep_config(p: &PrepArgs, split_seed: u64) -> Result<PrepConfig> {
    let mut cfg = PrepConfig::new(p.seg_seconds, split_seed);
    cfg.target_rate_hz = p.rate;
    cfg.channels = p.channels.parse()?;
    Ok(cfg)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run_synth(a: SynthArgs) -> Result<()> {
    if a.subjects == 0 || a.subjects % 3 != 0 {
        return Err(Error::InvalidArgument(format!("--subjects must be a positive multiple of 3, got {}", a.subjects)));
    }
    let spec = SynthSpec::new(a.subjects / 3, a.duration_s, a.rate, a.seed);
    let (recs, manifest) = synthesize_dataset(&spec)?;
    write_dataset(&a.out, &recs, &manifest)?;
    eprintln!("wrote {} recordings to {}", recs.len(), a.out.display());
    Ok(())
}

fn run_featurize(a: FeaturizeArgs) -> Result<()> {
    let cfg = prep_config(&a.prep, 0)?;
    let (_, recs) = load_dataset(&a.data)?;
    let mut parts = Vec::with_capacity(recs.len());
    let mut names = Vec::new();
    for rec in &recs {
        let rec = condition_recording(rec, &cfg)?;
        let batch = segment(&rec, cfg.seg_seconds)?;
        let features = (0..batch.len())
            .map(|j| segment_features(batch.patch(j), batch.sample_rate_hz))
            .collect::<Result<Vec<_>>>()?;
        names = rec.channel_names.clone();
        parts.push(PreparedSplit { batch, features });
    }
    let mut out = String::new();
    for (i, p) in parts.iter().enumerate() {
        let csv = features_csv(p, &names)?;
        out.push_str(if i == 0 { &csv } else { csv.split_once('\n').map_or("", |(_, rest)| rest) });
    }
    write_file(&a.out, &out)
}

fn run_train(a: TrainArgs) -> Result<()> {
    let variant: Variant = a.variant.parse()?;
    let mut prep = prep_config(&a.prep, a.seed)?;
    prep.split_mode = a.split_mode.parse::<SplitMode>()?;
    let data = load_and_prepare(&a.data, &prep, variant)?;
    let model = ModelConfig {
        variant,
        d_model: data.channel_names.len(),
        n_state: a.n_state,
        n_blocks: a.n_blocks,
        seed: a.seed,
        optw: a.optw,
        ..ModelConfig::new(variant, data.channel_names.len())
    };
    let tcfg = TrainConfig { lr: a.lr, epochs: a.epochs, batch_size: a.batch, seed: a.seed, optw_enabled: a.optw, ..TrainConfig::default() };
    eprintln!(
        "train {} segments, val {}, test {}; {} channels at {} Hz",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        data.channel_names.len(),
        data.sample_rate_hz
    );
    let quiet = a.quiet;
    let outcome = train_with_progress(&model, &data.train, &data.val, &tcfg, &mut |r| {
        if !quiet {
            eprintln!("epoch {:>4}  train_loss {:.5}  val_loss {:.5}  val_acc {:.4}", r.epoch, r.train_loss, r.val_loss, r.val_acc);
        }
    })?;
    let ckpt = Checkpoint { weights: outcome.best.clone(), train: Some(tcfg), data: Some(prep) };
    save_checkpoint(&a.out, &ckpt)?;
    outcome.history.write_csv(&a.history.unwrap_or_else(|| with_suffix(&a.out, ".history.csv")))?;
    if let Some(ens) = &outcome.best.ensemble {
        write_file(&with_suffix(&a.out, ".bands.csv"), &band_weight_summary(ens).to_csv())?;
    }
    eprintln!(
        "best epoch {} ({} parameters, {} used at inference)",
        outcome.best_epoch,
        outcome.best.param_count(),
        outcome.best.inference_param_count()
    );
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let part: SplitPart = a.split.parse()?;
    let ckpt = load_checkpoint(&a.ckpt)?;
    let metrics = evaluate_checkpoint(&ckpt, &a.data, part)?;
    let json = serde_json::to_string_pretty(&metrics).map_err(|e| Error::Data(e.to_string()))?;
    match &a.out {
        Some(path) => write_file(path, &json)?,
        None => println!("{json}"),
    }
    eprintln!("accuracy {:.4} over {} segments", metrics.accuracy, metrics.n_segments);
    Ok(())
}

fn run_bench(a: BenchArgs) -> Result<()> {
    let (manifest, recs) = load_dataset(&a.data)?;
    let mut cfg = BenchConfig::new(a.seed);
    cfg.variants = parse_variants(&a.variants)?;
    cfg.seg_seconds = parse_list(&a.seg_seconds, "segment length")?;
    cfg.rates = parse_list::<f64>(&a.rates, "rate")?.into_iter().map(Some).collect();
    cfg.channel_sets = a.channel_sets.split(';').map(str::parse::<ChannelSet>).collect::<Result<_>>()?;
    cfg.train = TrainConfig { lr: a.lr, epochs: a.epochs, batch_size: a.batch, seed: a.seed, ..TrainConfig::default() };
    if let Some(dir) = &a.ckpt_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    }
    cfg.ckpt_dir = a.ckpt_dir;
    let table = bench_sweep_with_progress(&manifest, &recs, &cfg, &mut |r| {
        eprintln!(
            "{:<8} {:>5} Hz {:>3} ch {:>6} s  {}",
            r.variant,
            r.sample_rate_hz,
            r.n_channels,
            r.seg_seconds,
            r.accuracy_pct.map_or(r.status.clone(), |v| format!("{v:.2}%"))
        );
    })?;
    write_file(&a.out, &table.to_csv()?)
}

fn run_gradcheck(a: GradcheckArgs) -> Result<bool> {
    let variants = parse_variants(&a.variant)?;
    let opts = GradCheckOptions { h: a.h, seed: a.seed, ..GradCheckOptions::default() };
    let mut ok = true;
    for v in variants {
        for optw in [false, true] {
            if optw && v == Variant::Temporal {
                continue;
            }
            let report = grad_check(&miniature_config(v, optw, a.seed), opts)?;
            let pass = report.passed(GRAD_CHECK_TOL);
            ok &= pass;
            println!(
                "{} {v}{} max_rel_err {:.3e} ({})",
                if pass { "PASS" } else { "FAIL" },
                if optw { "+optw" } else { "" },
                report.max_rel_err,
                report.worst_tensor
            );
        }
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Featurize(a) => run_featurize(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Bench(a) => run_bench(a),
        Command::Gradcheck(a) => match run_gradcheck(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(2),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
