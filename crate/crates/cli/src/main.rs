//! `bseg`: generate synthetic data, train, evaluate, detect, benchmark.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid input.

mod font;
mod overlay;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use barcode_seg::data::{generate_scenes, load_dataset, load_gray, write_dataset, SymbologyKind};
use barcode_seg::metrics::{default_threshold_sweep, MatchMode};
use barcode_seg::network::{load_weights, Network, NetworkConfig};
use barcode_seg::pipeline::Detector;
use barcode_seg::postprocess::DetectParams;
use barcode_seg::raster::{images_to_tensor, Plane};
use barcode_seg::trainer::{checkpoint_classes, split_validation, TrainConfig, Trainer};
use barcode_seg::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use report::{
    latency_stats, BenchReport, Detection, DetectionReport, EvalReport, GenerateReport, ImageDetections,
    ModelInfo, BENCH_SCHEMA, DETECTIONS_SCHEMA, GENERATE_SCHEMA,
};

#[derive(Parser)]
#[command(name = "bseg", version, about = "Barcode detection by semantic segmentation")]
struct Cli {
    /// Worker threads for data preparation and per-image inference.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Seed for generation, initialization, augmentation and batching [default: 0].
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic scenes, label masks and a manifest.
    Generate(GenerateArgs),
    /// Train a network on a manifest and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint against a labelled manifest (JSON report).
    Eval(EvalArgs),
    /// Detect barcodes in images (JSON report, optional overlays).
    Detect(DetectArgs),
    /// Time the forward pass on a square input.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    count: usize,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Scene side length in pixels.
    #[arg(long, default_value_t = 256)]
    size: usize,
    /// Symbologies to draw from, comma separated [default: all].
    #[arg(long, value_delimiter = ',')]
    classes: Vec<SymbologyKind>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint to write (weights and optimizer state; history goes to `<out>.json`).
    #[arg(long)]
    out: PathBuf,
    /// Validation manifest; without it a fraction of the training set is held out.
    #[arg(long)]
    val_manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    /// Training configuration as JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Epochs at the first learning rate.
    #[arg(long)]
    epochs: Option<usize>,
    /// Epochs at the second learning rate.
    #[arg(long)]
    epochs2: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr2: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Longest training side; larger images are scaled down.
    #[arg(long)]
    size: Option<usize>,
    /// Network width.
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    no_augment: bool,
    /// Continue from `--out` if it exists.
    #[arg(long)]
    resume: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum MatchArg {
    Literal,
    OneToOne,
}

#[derive(Args)]
struct DetectionFlags {
    /// Probability threshold for the detection channel.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Smallest kept component, in 4x4 cells.
    #[arg(long, default_value_t = 20)]
    t_area: usize,
}

impl DetectionFlags {
    fn params(&self) -> Result<DetectParams, Failure> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Failure::Invalid(format!("--threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(DetectParams {
            threshold: self.threshold,
            min_area: self.t_area,
            ..DetectParams::default()
        })
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Jaccard thresholds, comma separated [default: 0.1,0.2,...,0.9].
    #[arg(long, value_delimiter = ',')]
    thresholds: Vec<f64>,
    #[arg(long = "match", value_enum, default_value = "literal")]
    match_mode: MatchArg,
    #[command(flatten)]
    detection: DetectionFlags,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(required = true)]
    images: Vec<PathBuf>,
    /// Directory for `<stem>.overlay.png` files.
    #[arg(long)]
    overlay: Option<PathBuf>,
    #[command(flatten)]
    detection: DetectionFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Weights to time; a freshly initialized 4-class network otherwise.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    size: usize,
    #[arg(long, default_value_t = 30)]
    iterations: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    /// Print the JSON report instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Debug)]
enum Failure {
    Invalid(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Invalid(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Invalid(m) | Failure::Runtime(m) => m,
        }
    }
}

/// Tags a library error as bad input or as a failure while doing the work.
trait Classify<T> {
    fn invalid(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: std::fmt::Display> Classify<T> for Result<T, E> {
    fn invalid(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Invalid(e.to_string()))
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.to_string()))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("bseg: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if cli.threads == 0 {
        return Err(Failure::Invalid("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .runtime()?;
    match cli.command {
        Command::Generate(a) => generate(a, cli.seed.unwrap_or(0)),
        Command::Train(a) => train(a, cli.seed),
        Command::Eval(a) => eval(a),
        Command::Detect(a) => detect(a),
        Command::Bench(a) => bench(a, cli.threads, cli.seed.unwrap_or(0)),
    }
}

fn emit_json(value: &impl serde::Serialize, out: Option<&Path>) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).runtime()?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")
            .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn generate(args: GenerateArgs, seed: u64) -> Result<(), Failure> {
    if args.size < 16 {
        return Err(Failure::Invalid(format!("--size {} is too small", args.size)));
    }
    let kinds = if args.classes.is_empty() {
        SymbologyKind::ALL.to_vec()
    } else {
        args.classes.clone()
    };
    let samples = generate_scenes(args.count, args.size, args.size, &kinds, seed).runtime()?;
    // Class ids stay fixed whatever subset is drawn, so all names are declared.
    let manifest = write_dataset(&args.out, &samples, SymbologyKind::names()).runtime()?;
    let mut per_class = vec![0usize; SymbologyKind::ALL.len()];
    for o in samples.iter().flat_map(|s| &s.objects) {
        per_class[o.class_id] += 1;
    }
    let report = GenerateReport {
        schema: GENERATE_SCHEMA,
        manifest: manifest.display().to_string(),
        count: samples.len(),
        objects: per_class.iter().sum(),
        per_class: SymbologyKind::names().into_iter().zip(per_class).collect(),
    };
    emit_json(&report, None)
}

fn train_config(args: &TrainArgs, seed: Option<u64>, n_classes: usize) -> Result<TrainConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    config.network.n_classes = n_classes;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(e) = args.epochs {
        config.phase1.epochs = e;
    }
    if let Some(e) = args.epochs2 {
        config.phase2.epochs = e;
    }
    if let Some(lr) = args.lr {
        config.phase1.lr = lr;
    }
    if let Some(lr) = args.lr2 {
        config.phase2.lr = lr;
    }
    if let Some(b) = args.batch_size {
        config.batch_size = b;
    }
    if let Some(s) = args.size {
        config.max_side = s;
    }
    if let Some(c) = args.channels {
        config.network.channels = c;
    }
    if args.no_augment {
        config.augment = None;
    }
    config.validate().invalid()?;
    Ok(config)
}

fn train(args: TrainArgs, seed: Option<u64>) -> Result<(), Failure> {
    let (manifest, samples) = load_dataset(&args.manifest).invalid()?;
    if samples.is_empty() {
        return Err(Failure::Invalid(format!("{}: no records", args.manifest.display())));
    }
    let config = train_config(&args, seed, manifest.classes.len())?;
    let (train, val) = match &args.val_manifest {
        Some(path) => {
            let (vm, val) = load_dataset(path).invalid()?;
            if vm.classes != manifest.classes {
                return Err(Failure::Invalid(format!(
                    "{}: classes {:?} differ from training classes {:?}",
                    path.display(),
                    vm.classes,
                    manifest.classes
                )));
            }
            (samples, val)
        }
        None => split_validation(samples, args.val_fraction),
    };
    let mut trainer = if args.resume && args.out.exists() {
        let mut t = Trainer::load_checkpoint(&args.out).invalid()?;
        if t.config.network != config.network || t.classes != manifest.classes {
            return Err(Failure::Invalid(format!(
                "{}: checkpoint network or classes differ from the requested run",
                args.out.display()
            )));
        }
        // Epoch counts may be extended on resume; everything else stays.
        t.config.phase1.epochs = config.phase1.epochs;
        t.config.phase2.epochs = config.phase2.epochs;
        t
    } else {
        Trainer::new(config, manifest.classes.clone()).invalid()?
    };
    let total = trainer.config.total_epochs();
    eprintln!(
        "training on {} images, validating on {}, {} epochs from epoch {}",
        train.len(),
        val.len(),
        total,
        trainer.epochs_done() + 1
    );
    let out = args.out.clone();
    trainer
        .fit(&train, &val, |t, r| {
            let mut line = format!(
                "epoch {}/{} phase {} lr {:.1e} steps {} loss {:.4} (pos {:.4} neg {:.4} hard {:.4} class {:.4})",
                r.epoch,
                total,
                r.phase,
                r.lr,
                r.steps,
                r.train_loss.total,
                r.train_loss.positive,
                r.train_loss.negative,
                r.train_loss.hard,
                r.train_loss.classification,
            );
            if let Some(v) = &r.validation {
                line += &format!(
                    " | val loss {:.4} D {:.3} R {:.3} P {:.3} acc {}",
                    v.loss.total,
                    v.detection_rate,
                    v.recall,
                    v.precision,
                    v.classification_accuracy.map_or("-".to_string(), |a| format!("{a:.3}"))
                );
            }
            if r.skipped_steps > 0 {
                line += &format!(" skipped {}", r.skipped_steps);
            }
            println!("{line} [{:.1}s]", r.seconds);
            t.save_checkpoint(&out)
        })
        .runtime()?;
    if trainer.epochs_done() == 0 || total == 0 {
        trainer.save_checkpoint(&out).runtime()?;
    }
    match trainer.history.best_epoch {
        Some(e) => eprintln!("best validation epoch {e}; checkpoint {}", out.display()),
        None => eprintln!("checkpoint {}", out.display()),
    }
    Ok(())
}

fn load_model(path: &Path, fallback_classes: Option<&[String]>) -> Result<(Network<f32>, ModelInfo), Failure> {
    let net = load_weights(path).invalid()?;
    let config = *net.config();
    let classes = checkpoint_classes(path)
        .filter(|c| c.len() == config.n_classes)
        .or_else(|| fallback_classes.filter(|c| c.len() == config.n_classes).map(<[String]>::to_vec))
        .unwrap_or_else(|| {
            if config.n_classes == SymbologyKind::ALL.len() {
                SymbologyKind::names()
            } else {
                (0..config.n_classes).map(|i| format!("class{i}")).collect()
            }
        });
    let info = ModelInfo {
        checkpoint: path.display().to_string(),
        channels: config.channels,
        n_classes: config.n_classes,
        parameters: net.parameter_count(),
        classes,
    };
    Ok((net, info))
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let params = args.detection.params()?;
    let thresholds = if args.thresholds.is_empty() {
        default_threshold_sweep()
    } else {
        args.thresholds.clone()
    };
    if let Some(t) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Failure::Invalid(format!("Jaccard threshold {t} outside [0, 1]")));
    }
    let (manifest, samples) = load_dataset(&args.manifest).invalid()?;
    if samples.is_empty() {
        return Err(Failure::Invalid(format!("{}: no records", args.manifest.display())));
    }
    let (net, info) = load_model(&args.checkpoint, Some(&manifest.classes))?;
    if info.n_classes != 0 && info.n_classes != manifest.classes.len() {
        return Err(Failure::Invalid(
            Error::ConfigMismatch {
                field: "n_classes",
                expected: manifest.classes.len() as u64,
                actual: info.n_classes as u64,
            }
            .to_string(),
        ));
    }
    let mode = match args.match_mode {
        MatchArg::Literal => MatchMode::Literal,
        MatchArg::OneToOne => MatchMode::OneToOne,
    };
    let result = Detector::new(net, params)
        .evaluate(&samples, &thresholds, mode)
        .runtime()?;
    let report = EvalReport::new(
        info,
        args.manifest.display().to_string(),
        params.threshold,
        params.min_area,
        result,
        started.elapsed().as_secs_f64(),
    );
    emit_json(&report, args.out.as_deref())
}

fn overlay_path(dir: &Path, image: &Path, index: usize) -> PathBuf {
    let stem = image.file_stem().map_or_else(|| format!("image{index}"), |s| s.to_string_lossy().into_owned());
    dir.join(format!("{stem}.overlay.png"))
}

fn detect(args: DetectArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let params = args.detection.params()?;
    let (net, info) = load_model(&args.checkpoint, None)?;
    if let Some(dir) = &args.overlay {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    }
    let detector = Detector::new(net, params);
    let results: Vec<Result<ImageDetections, String>> = args
        .images
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let t0 = Instant::now();
            let image = load_gray(path).map_err(|e| e.to_string())?;
            let dets = detector.detect(&image).map_err(|e| e.to_string())?;
            let overlay = match &args.overlay {
                Some(dir) => {
                    let out = overlay_path(dir, path, i);
                    overlay::render_overlay(&image, &dets, &info.classes)
                        .save(&out)
                        .map_err(|e| format!("{}: {e}", out.display()))?;
                    Some(out.display().to_string())
                }
                None => None,
            };
            Ok(ImageDetections {
                path: path.display().to_string(),
                width: image.width(),
                height: image.height(),
                detections: dets.iter().map(|d| Detection::new(d, &info.classes)).collect(),
                overlay,
                seconds: t0.elapsed().as_secs_f64(),
            })
        })
        .collect();
    let mut images = Vec::new();
    let mut failed = Vec::new();
    for (path, r) in args.images.iter().zip(results) {
        match r {
            Ok(d) => images.push(d),
            Err(error) => {
                log::warn!("skipping {}: {error}", path.display());
                failed.push(report::Failure {
                    path: path.display().to_string(),
                    error,
                });
            }
        }
    }
    if images.is_empty() {
        return Err(Failure::Invalid(format!(
            "no image could be processed: {}",
            failed.iter().map(|f| f.error.as_str()).collect::<Vec<_>>().join("; ")
        )));
    }
    let report = DetectionReport {
        schema: DETECTIONS_SCHEMA,
        model: info,
        threshold: params.threshold,
        t_area: params.min_area,
        images,
        failed,
        total_seconds: started.elapsed().as_secs_f64(),
    };
    emit_json(&report, args.out.as_deref())
}

fn bench(args: BenchArgs, threads: usize, seed: u64) -> Result<(), Failure> {
    if args.size == 0 || args.size % barcode_seg::network::SCALE != 0 {
        return Err(Failure::Invalid(format!(
            "--size {} must be a positive multiple of {}",
            args.size,
            barcode_seg::network::SCALE
        )));
    }
    if args.iterations == 0 {
        return Err(Failure::Invalid("--iterations must be at least 1".into()));
    }
    let net = match &args.checkpoint {
        Some(path) => load_weights(path).invalid()?,
        None => Network::init(NetworkConfig::with_classes(SymbologyKind::ALL.len()), seed).runtime()?,
    };
    let image = Plane::from_fn(args.size, args.size, |x, y| ((x * 7 + y * 13) % 256) as u8);
    let input = images_to_tensor(&[&image]).runtime()?;
    for _ in 0..args.warmup {
        net.forward(&input).runtime()?;
    }
    let mut times = Vec::with_capacity(args.iterations);
    for _ in 0..args.iterations {
        let t0 = Instant::now();
        let out = net.forward(&input).runtime()?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(out);
    }
    let (mean, median, p95) = latency_stats(&times);
    let report = BenchReport {
        schema: BENCH_SCHEMA,
        resolution: format!("{0}x{0}", args.size),
        size: args.size,
        iterations: args.iterations,
        warmup: args.warmup,
        threads,
        parameters: net.parameter_count(),
        mean_ms: mean,
        median_ms: median,
        p95_ms: p95,
        min_ms: times.iter().copied().fold(f64::INFINITY, f64::min),
        max_ms: times.iter().copied().fold(0.0, f64::max),
    };
    if args.json {
        return emit_json(&report, None);
    }
    println!(
        "forward {} ({} iterations, {} warm-up, {} thread{})",
        report.resolution,
        report.iterations,
        report.warmup,
        threads,
        if threads == 1 { "" } else { "s" }
    );
    println!("mean   {:8.2} ms", report.mean_ms);
    println!("median {:8.2} ms", report.median_ms);
    println!("p95    {:8.2} ms", report.p95_ms);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_names() {
        let p = overlay_path(Path::new("/o"), Path::new("/in/a.b.png"), 3);
        assert_eq!(p, Path::new("/o/a.b.overlay.png"));
    }

    #[test]
    fn failure_codes() {
        assert_eq!(Failure::Invalid("x".into()).code(), 2);
        assert_eq!(Failure::Runtime("x".into()).code(), 1);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
