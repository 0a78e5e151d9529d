use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use image::{Rgb, RgbImage};
use serde::Serialize;
use serde_json::{json, Map, Value};

use leafnet::data::{
    filter_min_resolution, load_image_folder, split, AugmentPolicy, Dataset, Loader, Manifest, SplitRatios, Subset,
    MANIFEST_FILE,
};
use leafnet::metrics::roc_one_vs_rest;
use leafnet::model::{Architecture, Crop, Model};
use leafnet::train::{
    evaluate, load_checkpoint, predict, read_history, save_checkpoint, write_history, Checkpoint, EpochRecord,
    TrainConfig, Trainer,
};
use leafnet::Error;

const DATA_ROOT_ENV: &str = "LEAFNET_DATA_ROOT";
const CHECKPOINT_FILE: &str = "checkpoint.lfnt";
const HISTORY_FILE: &str = "history.csv";

#[derive(Parser)]
#[command(name = "leafnet", version, about = "Train and evaluate leaf-disease image classifiers")]
struct Cli {
    /// JSON run configuration (a previous run.json is accepted too).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for splitting, initialization, shuffling and augmentation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for every artifact of this run.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a class-per-folder image tree and write split manifests.
    Prepare(PrepareArgs),
    /// Train a model on a prepared split and write history and checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one subset of a split.
    Evaluate(EvaluateArgs),
    /// Classify image files with a checkpoint.
    Predict(PredictArgs),
    /// Turn a history CSV into accuracy/loss curve data and plots.
    Report(ReportArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Root folder with one subfolder per class.
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Folder holding split_manifest.csv and class_summary.csv.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct PrepareArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Train/val/test fractions, e.g. 0.7,0,0.3.
    #[arg(long, value_parser = parse_ratios)]
    ratios: Option<SplitRatios>,
    /// Drop images whose shorter side is below this many pixels.
    #[arg(long)]
    min_resolution: Option<u32>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model architecture
    #[arg(long)]
    architecture: Option<Architecture>,
    /// Number of training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate
    #[arg(long)]
    learning_rate: Option<f32>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Defaults to <out>/checkpoint.lfnt.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    subset: Subset,
}

#[derive(Args)]
struct PredictArgs {
    /// Defaults to <out>/checkpoint.lfnt.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(required = true)]
    images: Vec<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Defaults to <out>/history.csv.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Also render accuracy.png and loss.png.
    #[arg(long)]
    plot: bool,
}

fn parse_ratios(s: &str) -> Result<SplitRatios, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<Result<_, _>>()?;
    match parts.as_slice() {
        [t, v, te] => SplitRatios::new(*t, *v, *te).map_err(|e| e.to_string()),
        _ => Err("expected three comma-separated fractions".into()),
    }
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CliResult<T> = Result<T, Failure>;

/// Resolved settings; serialized verbatim into run.json.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
struct RunConfig {
    /// Image tree root. Default: $LEAFNET_DATA_ROOT.
    data_root: Option<PathBuf>,
    /// Default: "leafnet-out".
    out_dir: PathBuf,
    /// Where split manifests are read from. Default: the output directory.
    manifest_dir: Option<PathBuf>,
    /// Minimum shorter image side kept by `prepare`. Default 0 (keep all).
    min_resolution: u32,
    /// Keep resized images in memory across epochs. Default true.
    cache_images: bool,
    #[serde(flatten)]
    train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_root: None,
            out_dir: PathBuf::from("leafnet-out"),
            manifest_dir: None,
            min_resolution: 0,
            cache_images: true,
            train: TrainConfig::default(),
        }
    }
}

fn field<T: serde::de::DeserializeOwned>(key: &str, v: &Value, problems: &mut Vec<String>) -> Option<T> {
    match serde_json::from_value(v.clone()) {
        Ok(x) => Some(x),
        Err(e) => {
            problems.push(format!("{key}: {e}"));
            None
        }
    }
}

/// Parse a config document, reporting every unknown or malformed key together.
fn parse_config(text: &str) -> Result<RunConfig, Error> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("invalid JSON: {e}")]))?;
    // A run.json nests the resolved config under "config".
    if let Some(inner) = value.get("config").filter(|_| value.get("command").is_some()) {
        value = inner.clone();
    }
    let Value::Object(map) = value else {
        return Err(Error::Config(vec!["config must be a JSON object".into()]));
    };
    let mut cfg = RunConfig::default();
    let mut problems = Vec::new();
    let mut train = Map::new();
    for (key, v) in &map {
        match key.as_str() {
            "dataRoot" => cfg.data_root = field(key, v, &mut problems).flatten(),
            "outDir" => cfg.out_dir = field(key, v, &mut problems).unwrap_or(cfg.out_dir.clone()),
            "manifestDir" => cfg.manifest_dir = field(key, v, &mut problems).flatten(),
            "minResolution" => cfg.min_resolution = field(key, v, &mut problems).unwrap_or(0),
            "cacheImages" => cfg.cache_images = field(key, v, &mut problems).unwrap_or(true),
            "epochs" | "batchSize" | "learningRate" | "seed" | "l2Lambda" | "splitRatios" | "inputSize"
            | "architecture" | "crop" | "augment" => {
                let ok = match key.as_str() {
                    "epochs" | "batchSize" => field::<usize>(key, v, &mut problems).is_some(),
                    "learningRate" => field::<f32>(key, v, &mut problems).is_some(),
                    "seed" => field::<u64>(key, v, &mut problems).is_some(),
                    "l2Lambda" => field::<Option<f32>>(key, v, &mut problems).is_some(),
                    "splitRatios" => field::<SplitRatios>(key, v, &mut problems).is_some(),
                    "inputSize" => field::<Option<[usize; 2]>>(key, v, &mut problems).is_some(),
                    "architecture" => field::<Architecture>(key, v, &mut problems).is_some(),
                    "crop" => field::<Crop>(key, v, &mut problems).is_some(),
                    _ => field::<AugmentPolicy>(key, v, &mut problems).is_some(),
                };
                if ok {
                    train.insert(key.clone(), v.clone());
                }
            }
            _ => problems.push(format!("unknown key '{key}'")),
        }
    }
    if problems.is_empty() {
        cfg.train = serde_json::from_value(Value::Object(train)).map_err(|e| Error::Config(vec![e.to_string()]))?;
        if let Err(Error::Config(v)) = cfg.train.validate() {
            problems.extend(v);
        }
    }
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(problems))
    }
}

struct Context {
    cfg: RunConfig,
}

impl Context {
    fn out(&self) -> &Path {
        &self.cfg.out_dir
    }

    fn data_root(&self, flag: &Option<PathBuf>) -> CliResult<PathBuf> {
        let root = flag
            .clone()
            .or_else(|| self.cfg.data_root.clone())
            .ok_or_else(|| Failure::Usage(format!("no data root: pass --data-root, set dataRoot, or set {DATA_ROOT_ENV}")))?;
        if !root.is_dir() {
            return Err(Failure::Usage(format!("data root {} is not a directory", root.display())));
        }
        Ok(root)
    }

    fn manifest_dir(&self, flag: &Option<PathBuf>) -> PathBuf {
        flag.clone()
            .or_else(|| self.cfg.manifest_dir.clone())
            .unwrap_or_else(|| self.cfg.out_dir.clone())
    }

    fn write_run_json(&self, command: &str, args: Value) -> CliResult<()> {
        let doc = json!({
            "command": command,
            "seed": self.cfg.train.seed,
            "args": args,
            "config": serde_json::to_value(&self.cfg).map_err(Error::from)?,
        });
        let text = serde_json::to_string_pretty(&doc).map_err(Error::from)? + "\n";
        fs::write(self.out().join("run.json"), text)?;
        Ok(())
    }
}

fn load_split(ctx: &Context, data: &DataArgs) -> CliResult<(PathBuf, Manifest)> {
    let root = ctx.data_root(&data.data_root)?;
    let dir = ctx.manifest_dir(&data.manifest);
    if dir.join(MANIFEST_FILE).is_file() {
        return Ok((root, Manifest::read(&dir)?));
    }
    log::info!("no manifest in {}; splitting {} now", dir.display(), root.display());
    let manifest = prepare_manifest(ctx, &root)?;
    manifest.write(ctx.out())?;
    Ok((root, manifest))
}

fn prepare_manifest(ctx: &Context, root: &Path) -> CliResult<Manifest> {
    let ingest = load_image_folder(root)?;
    for s in &ingest.skipped {
        log::warn!("skipped {}: {}", s.path.display(), s.reason);
    }
    let dataset = filter_min_resolution(&ingest.dataset, ctx.cfg.min_resolution)?;
    let splits = split(&dataset, ctx.cfg.train.split_ratios, ctx.cfg.train.seed)?;
    Ok(Manifest::from_splits(&splits, root))
}

fn cmd_prepare(ctx: &mut Context, args: &PrepareArgs) -> CliResult<()> {
    if let Some(r) = args.ratios {
        ctx.cfg.train.split_ratios = r;
    }
    if let Some(m) = args.min_resolution {
        ctx.cfg.min_resolution = m;
    }
    let root = ctx.data_root(&args.data.data_root)?;
    ctx.cfg.data_root = Some(root.clone());
    let manifest = prepare_manifest(ctx, &root)?;
    let dir = args.data.manifest.clone().unwrap_or_else(|| ctx.out().to_path_buf());
    manifest.write(&dir)?;
    for row in manifest.summary() {
        println!(
            "{:<32} total {:>6}  train {:>6}  val {:>6}  test {:>6}",
            row.class_name, row.total, row.train, row.val, row.test
        );
    }
    ctx.write_run_json("prepare", json!({ "manifest": dir }))
}

fn loader_for<'a>(ctx: &Context, ds: &'a Dataset, size: usize) -> Loader<'a> {
    let l = Loader::new(ds, size as u32, size as u32);
    if ctx.cfg.cache_images {
        l
    } else {
        l.without_cache()
    }
}

fn cmd_train(ctx: &mut Context, args: &TrainArgs) -> CliResult<()> {
    let t = &mut ctx.cfg.train;
    if let Some(a) = args.architecture {
        t.architecture = a;
    }
    if let Some(e) = args.epochs {
        t.epochs = e;
    }
    if let Some(b) = args.batch_size {
        t.batch_size = b;
    }
    if let Some(lr) = args.learning_rate {
        t.learning_rate = lr;
    }
    t.validate()?;
    let (root, manifest) = load_split(ctx, &args.data)?;
    ctx.cfg.data_root = Some(root.clone());
    let train_ds = manifest.dataset(Subset::Train, &root)?;
    let mut val_ds = manifest.dataset(Subset::Val, &root)?;
    if val_ds.is_empty() {
        log::info!("validation subset is empty; using the test subset for val metrics");
        val_ds = manifest.dataset(Subset::Test, &root)?;
    }
    if train_ds.is_empty() {
        return Err(Failure::Usage("the training subset is empty".into()));
    }
    let config = ctx.cfg.train.clone();
    let model = Model::new(config.build_spec(manifest.class_names.len())?)?;
    let size = config.resolved_input_size();
    let train_loader = loader_for(ctx, &train_ds, size).with_augment(config.augment);
    let val_loader = loader_for(ctx, &val_ds, size);
    let val = (!val_ds.is_empty()).then_some(&val_loader);
    let mut trainer = Trainer::new(&model, model.init_params(config.seed), config.clone())?;
    for _ in 0..config.epochs {
        let r = trainer.run_epoch(&train_loader, val)?;
        eprintln!(
            "epoch {}/{}: loss {:.4} accuracy {:.4}{}",
            r.epoch,
            config.epochs,
            r.loss,
            r.accuracy,
            match (r.val_loss, r.val_accuracy) {
                (Some(l), Some(a)) => format!(" val_loss {l:.4} val_accuracy {a:.4}"),
                _ => String::new(),
            }
        );
    }
    write_history(&ctx.out().join(HISTORY_FILE), trainer.history())?;
    let checkpoint = Checkpoint {
        spec: model.spec().clone(),
        class_names: manifest.class_names.clone(),
        config: Some(config.clone()),
        epoch: trainer.epochs_done(),
        params: trainer.into_params(),
    };
    save_checkpoint(&ctx.out().join(CHECKPOINT_FILE), &checkpoint)?;
    let (total, trainable) = model.count_parameters();
    println!("trained {} ({total} parameters, {trainable} trainable)", config.architecture);
    ctx.write_run_json("train", json!({ "checkpoint": ctx.out().join(CHECKPOINT_FILE) }))
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

fn cmd_evaluate(ctx: &mut Context, args: &EvaluateArgs) -> CliResult<()> {
    let ck_path = args.checkpoint.clone().unwrap_or_else(|| ctx.out().join(CHECKPOINT_FILE));
    let ck = load_checkpoint(&ck_path)?;
    let (root, manifest) = load_split(ctx, &args.data)?;
    ctx.cfg.data_root = Some(root.clone());
    if manifest.class_names != ck.class_names {
        return Err(Failure::Usage(format!(
            "checkpoint classes {:?} differ from manifest classes {:?}",
            ck.class_names, manifest.class_names
        )));
    }
    let ds = manifest.dataset(args.subset, &root)?;
    if ds.is_empty() {
        return Err(Failure::Usage(format!("the {} subset is empty", args.subset.as_str())));
    }
    let model = ck.model()?;
    let size = model.input_shape().h;
    let loader = loader_for(ctx, &ds, size);
    let batch = ck.config.as_ref().map(|c| c.batch_size).unwrap_or(64);
    let ev = evaluate(&model, &ck.params, &loader, batch)?;
    let out = ctx.out();
    let text = ev.report.to_text(&ck.class_names);
    fs::write(out.join("report.txt"), &text)?;
    fs::write(out.join("report.csv"), ev.report.to_csv(&ck.class_names))?;
    fs::write(out.join("confusion.csv"), ev.confusion.to_csv(&ck.class_names))?;
    let k = ck.class_names.len();
    let mut aucs = String::from("classIndex,className,auc\n");
    for (c, name) in ck.class_names.iter().enumerate() {
        match roc_one_vs_rest(&ev.probabilities, k, &ev.labels, c) {
            Ok(roc) => {
                fs::write(out.join(format!("roc_{c:02}_{}.csv", sanitize(name))), roc.to_csv())?;
                aucs.push_str(&format!("{c},{name},{}\n", roc.auc));
            }
            Err(e) => log::warn!("no ROC curve for class '{name}': {e}"),
        }
    }
    fs::write(out.join("roc_auc.csv"), aucs)?;
    print!("{text}");
    println!("mean loss {:.4}", ev.loss);
    ctx.write_run_json(
        "evaluate",
        json!({ "checkpoint": ck_path, "subset": args.subset.as_str() }),
    )
}

fn cmd_predict(ctx: &mut Context, args: &PredictArgs) -> CliResult<()> {
    let ck_path = args.checkpoint.clone().unwrap_or_else(|| ctx.out().join(CHECKPOINT_FILE));
    let ck = load_checkpoint(&ck_path)?;
    let model = ck.model()?;
    for path in &args.images {
        let p = predict(&model, &ck.params, &ck.class_names, path)?;
        let probs: Vec<String> = ck
            .class_names
            .iter()
            .zip(&p.probabilities)
            .map(|(n, v)| format!("{n}={v:.6}"))
            .collect();
        println!("{}\t{}\t{}", path.display(), p.class_name, probs.join(" "));
    }
    ctx.write_run_json("predict", json!({ "checkpoint": ck_path, "images": args.images }))
}

fn curve_csv(history: &[EpochRecord], train: fn(&EpochRecord) -> f64, val: fn(&EpochRecord) -> Option<f64>, names: &str) -> String {
    let mut s = format!("epoch,{names}\n");
    for r in history {
        s.push_str(&format!(
            "{},{},{}\n",
            r.epoch,
            train(r),
            val(r).map(|v| v.to_string()).unwrap_or_default()
        ));
    }
    s
}

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        for (ox, oy) in [(0, 0), (1, 0), (0, 1)] {
            let (px, py) = (x + ox, y + oy);
            if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                img.put_pixel(px as u32, py as u32, color);
            }
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Line chart of one or two series over epochs; blue is train, orange is validation.
fn plot(series: &[Vec<f64>]) -> RgbImage {
    let (w, h, m) = (640i64, 400i64, 40i64);
    let mut img = RgbImage::from_pixel(w as u32, h as u32, Rgb([255, 255, 255]));
    let all: Vec<f64> = series.iter().flatten().copied().filter(|v| v.is_finite()).collect();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
    let mut hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !hi.is_finite() || hi <= lo {
        hi = lo + 1.0;
    }
    let black = Rgb([0, 0, 0]);
    draw_line(&mut img, (m, h - m), (w - m, h - m), black);
    draw_line(&mut img, (m, m), (m, h - m), black);
    let colors = [Rgb([31, 119, 180]), Rgb([255, 127, 14])];
    for (s, color) in series.iter().zip(colors) {
        let n = s.len().max(2) - 1;
        let pt = |i: usize, v: f64| {
            let x = m + ((w - 2 * m) as f64 * i as f64 / n as f64) as i64;
            let y = h - m - ((h - 2 * m) as f64 * (v - lo) / (hi - lo)) as i64;
            (x, y)
        };
        for i in 1..s.len() {
            draw_line(&mut img, pt(i - 1, s[i - 1]), pt(i, s[i]), color);
        }
    }
    img
}

fn cmd_report(ctx: &mut Context, args: &ReportArgs) -> CliResult<()> {
    let path = args.history.clone().unwrap_or_else(|| ctx.out().join(HISTORY_FILE));
    let history = read_history(&path)?;
    let out = ctx.out();
    fs::write(
        out.join("accuracy_curve.csv"),
        curve_csv(&history, |r| r.accuracy, |r| r.val_accuracy, "accuracy,val_accuracy"),
    )?;
    fs::write(
        out.join("loss_curve.csv"),
        curve_csv(&history, |r| r.loss, |r| r.val_loss, "loss,val_loss"),
    )?;
    if args.plot {
        for (file, train, val) in [
            ("accuracy.png", history.iter().map(|r| r.accuracy).collect::<Vec<_>>(), history.iter().filter_map(|r| r.val_accuracy).collect::<Vec<_>>()),
            ("loss.png", history.iter().map(|r| r.loss).collect(), history.iter().filter_map(|r| r.val_loss).collect()),
        ] {
            plot(&[train, val]).save(out.join(file)).map_err(Error::from)?;
        }
    }
    println!("wrote curves for {} epochs to {}", history.len(), out.display());
    ctx.write_run_json("report", json!({ "history": path, "plot": args.plot }))
}

fn resolve(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", p.display())))?;
            parse_config(&text)?
        }
        None => RunConfig::default(),
    };
    if cfg.data_root.is_none() {
        cfg.data_root = std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from);
    }
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = resolve(&cli)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let mut ctx = Context { cfg };
    match &cli.command {
        Command::Prepare(a) => cmd_prepare(&mut ctx, a),
        Command::Train(a) => cmd_train(&mut ctx, a),
        Command::Evaluate(a) => cmd_evaluate(&mut ctx, a),
        Command::Predict(a) => cmd_predict(&mut ctx, a),
        Command::Report(a) => cmd_report(&mut ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
