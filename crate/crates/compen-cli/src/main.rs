//! Command-line driver wiring the simulator, training, simplification,
//! compensation inference and evaluation into reproducible runs.

mod manifest;

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use compen::bench::{evaluate, load_setup, report, validate_report_json};
use compen::imaging::{fov_mask, ImageRGB};
use compen::loss::LossKind;
use compen::pipeline::{
    pretrain, simplify, train, BakedModel, CompensationModel, PretrainConfig, TrainConfig,
};
use compen::sim::{child_seed, export_dataset, gen_setup, sampling_images, SetupSpec};

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "compen", version, about = "End-to-end projector compensation at desk scale")]
struct Cli {
    /// Worker thread cap (also via COMPEN_THREADS)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON file with default flag values; explicit flags win
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Profile {
    Desk,
    Paper,
}

impl FromStr for Profile {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(format!("unknown profile {other:?} (expected desk or paper)")),
        }
    }
}

impl Profile {
    fn canonical(self) -> (usize, usize) {
        match self {
            Profile::Desk => (128, 128),
            Profile::Paper => (256, 256),
        }
    }
    fn batch(self) -> usize {
        match self {
            Profile::Desk => 8,
            Profile::Paper => 48,
        }
    }
    fn iters(self) -> usize {
        match self {
            Profile::Desk => 500,
            Profile::Paper => 1500,
        }
    }
    fn cam_size(self) -> (usize, usize) {
        match self {
            Profile::Desk => (180, 240),
            Profile::Paper => (360, 480),
        }
    }
}

/// Size argument in WIDTHxHEIGHT order.
#[derive(Clone, Copy, Debug)]
struct SizeArg {
    w: usize,
    h: usize,
}

impl FromStr for SizeArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, h) = s
            .split_once('x')
            .ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
        Ok(SizeArg {
            w: w.parse().map_err(|e| format!("bad width: {e}"))?,
            h: h.parse().map_err(|e| format!("bad height: {e}"))?,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic benchmark setups
    Synth(SynthArgs),
    /// Pre-train the photometric net across synthetic setups
    Pretrain(PretrainArgs),
    /// Train a compensation model on one setup
    Train(TrainArgs),
    /// Few-shot fine-tuning from pre-trained weights (8 pairs / 800
    /// iterations / batch 8 defaults)
    Finetune(TrainArgs),
    /// Bake a trained model into its inference form
    Simplify(SimplifyArgs),
    /// Infer compensation images for desired images
    Compensate(CompensateArgs),
    /// Evaluate a model on one or more setups
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    setups: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Planar surfaces (pure homography geometry)
    #[arg(long)]
    planar: bool,
    #[arg(long)]
    cam_size: Option<SizeArg>,
    #[arg(long)]
    prj_size: Option<SizeArg>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    photo_difficulty: Option<f64>,
    #[arg(long)]
    geom_difficulty: Option<f64>,
    #[arg(long)]
    profile: Option<Profile>,
}

#[derive(Args)]
struct PretrainArgs {
    /// Root directory containing setup subdirectories
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    pre_init_iters: Option<usize>,
    #[arg(long)]
    profile: Option<Profile>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    setup: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Number of training pairs to use
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    pretrained: Option<PathBuf>,
    /// l1 warmup iterations; defaults to 200 for few-shot runs (n <= 16)
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    profile: Option<Profile>,
}

#[derive(Args)]
struct SimplifyArgs {
    #[arg(long)]
    setup: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Output stem; writes <stem>.grid, <stem>.ckpt, <stem>.json,
    /// <stem>_fov.png
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompensateArgs {
    /// Baked model stem from `simplify`
    #[arg(long)]
    baked: PathBuf,
    /// Desired image file or directory of PNGs
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Setup directory; repeatable
    #[arg(long, required = true)]
    setup: Vec<PathBuf>,
    #[arg(long)]
    model: PathBuf,
    /// json or markdown
    #[arg(long, default_value = "json")]
    format: String,
    /// Output file; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// Recorded in the report rows
    #[arg(long)]
    n_train_used: Option<usize>,
}

/// Values from --config, consulted when a flag is absent.
struct FileConfig(serde_json::Map<String, serde_json::Value>);

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<FileConfig> {
        let map = match path {
            None => serde_json::Map::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str::<serde_json::Value>(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?
                    .as_object()
                    .cloned()
                    .context("config must be a JSON object")?
            }
        };
        Ok(FileConfig(map))
    }

    fn usize_(&self, key: &str) -> Option<usize> {
        self.0.get(key).and_then(|v| v.as_u64()).map(|v| v as usize)
    }
    fn u64_(&self, key: &str) -> Option<u64> {
        self.0.get(key).and_then(|v| v.as_u64())
    }
    fn f64_(&self, key: &str) -> Option<f64> {
        self.0.get(key).and_then(|v| v.as_f64())
    }
    fn str_(&self, key: &str) -> Option<&str> {
        self.0.get(key).and_then(|v| v.as_str())
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = FileConfig::load(cli.config.as_deref())?;
    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("COMPEN_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .or_else(|| config.usize_("threads"));
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("initializing thread pool")?;
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(a, &config),
        Command::Pretrain(a) => cmd_pretrain(a, &config),
        Command::Train(a) => cmd_train(a, &config, false),
        Command::Finetune(a) => cmd_train(a, &config, true),
        Command::Simplify(a) => cmd_simplify(a),
        Command::Compensate(a) => cmd_compensate(a),
        Command::Eval(a) => cmd_eval(a, &config),
    }
}

fn profile_of(flag: Option<Profile>, config: &FileConfig) -> Result<Profile> {
    match flag {
        Some(p) => Ok(p),
        None => match config.str_("profile") {
            Some(s) => Profile::from_str(s).map_err(|e| anyhow::anyhow!(e)),
            None => Ok(Profile::Desk),
        },
    }
}

fn cmd_synth(a: SynthArgs, config: &FileConfig) -> Result<()> {
    let start = Instant::now();
    let profile = profile_of(a.profile, config)?;
    let setups = a.setups.or_else(|| config.usize_("setups")).unwrap_or(1);
    let seed = a.seed.or_else(|| config.u64_("seed")).unwrap_or(0);
    let (cam_h, cam_w) = a
        .cam_size
        .map(|s| (s.h, s.w))
        .unwrap_or(profile.cam_size());
    let (prj_h, prj_w) = a
        .prj_size
        .map(|s| (s.h, s.w))
        .unwrap_or(profile.canonical());
    let n_train = a.n_train.or_else(|| config.usize_("n_train")).unwrap_or(48);
    let n_test = a.n_test.or_else(|| config.usize_("n_test")).unwrap_or(8);
    let photo_difficulty = a
        .photo_difficulty
        .or_else(|| config.f64_("photo_difficulty"))
        .unwrap_or(0.8);
    let geom_difficulty = a
        .geom_difficulty
        .or_else(|| config.f64_("geom_difficulty"))
        .unwrap_or(0.8);

    let spec = SetupSpec {
        planar: a.planar,
        cam_size: (cam_h, cam_w),
        prj_size: (prj_h, prj_w),
        photometric_difficulty: photo_difficulty,
        geometric_difficulty: geom_difficulty,
    };
    let mut outputs = Vec::new();
    for k in 0..setups {
        let setup_seed = child_seed(seed, k as u64);
        let setup = gen_setup(setup_seed, &spec);
        let train_imgs = sampling_images(child_seed(setup_seed, 1), n_train, (prj_h, prj_w));
        let test_imgs = sampling_images(child_seed(setup_seed, 2), n_test, (prj_h, prj_w));
        let dir = a.out.join(format!("s{k}"));
        export_dataset(&setup, &train_imgs, &test_imgs, &dir)
            .with_context(|| format!("exporting setup {k}"))?;
        outputs.push(dir.display().to_string());
        println!("wrote {}", dir.display());
    }
    RunManifest::new("synth")
        .arg("setups", setups)
        .arg("seed", seed)
        .arg("planar", a.planar)
        .arg("cam_size", format!("{cam_w}x{cam_h}"))
        .arg("prj_size", format!("{prj_w}x{prj_h}"))
        .arg("n_train", n_train)
        .arg("n_test", n_test)
        .arg("photo_difficulty", photo_difficulty)
        .arg("geom_difficulty", geom_difficulty)
        .outputs(outputs)
        .finish(&a.out, start)?;
    Ok(())
}

fn setup_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .with_context(|| format!("reading {}", root.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.join("setup.json").exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no setup directories under {}", root.display());
    }
    Ok(dirs)
}

fn cmd_pretrain(a: PretrainArgs, config: &FileConfig) -> Result<()> {
    let start = Instant::now();
    let profile = profile_of(a.profile, config)?;
    let iters = a.iters.or_else(|| config.usize_("iters")).unwrap_or(2000);
    let batch = a.batch.or_else(|| config.usize_("batch")).unwrap_or(profile.batch());
    let seed = a.seed.or_else(|| config.u64_("seed")).unwrap_or(0);
    let pre_init_iters = a
        .pre_init_iters
        .or_else(|| config.usize_("pre_init_iters"))
        .unwrap_or(500);

    let dirs = setup_dirs(&a.data)?;
    let mut datasets = Vec::with_capacity(dirs.len());
    for d in &dirs {
        datasets.push(load_setup(d).with_context(|| format!("loading {}", d.display()))?);
    }
    let cfg = PretrainConfig {
        iterations: iters,
        batch,
        seed,
        canonical: profile.canonical(),
        pre_init_iterations: pre_init_iters,
        ..Default::default()
    };
    let (named, curve) = pretrain(&datasets, &cfg)?;
    compen::checkpoint::save_named(&a.out, &named)?;
    if let Some(last) = curve.last() {
        println!(
            "pretrained on {} setups for {} iterations (final loss {:.4}) -> {}",
            datasets.len(),
            iters,
            last.loss,
            a.out.display()
        );
    } else {
        println!("wrote pre-init weights -> {}", a.out.display());
    }
    RunManifest::new("pretrain")
        .arg("data", a.data.display().to_string())
        .arg("iters", iters)
        .arg("batch", batch)
        .arg("seed", seed)
        .arg("pre_init_iters", pre_init_iters)
        .arg("profile", format!("{profile:?}").to_lowercase())
        .outputs(vec![a.out.display().to_string()])
        .finish(a.out.parent().unwrap_or(Path::new(".")), start)?;
    Ok(())
}

fn cmd_train(a: TrainArgs, config: &FileConfig, finetune: bool) -> Result<()> {
    let start = Instant::now();
    let profile = profile_of(a.profile, config)?;
    if finetune && a.pretrained.is_none() {
        bail!("finetune requires --pretrained weights");
    }
    let dataset = load_setup(&a.setup)?;
    let default_n = if finetune { 8 } else { dataset.train.len() };
    let n = a.n.or_else(|| config.usize_("n")).unwrap_or(default_n);
    let iters = a
        .iters
        .or_else(|| config.usize_("iters"))
        .unwrap_or(if finetune { 800 } else { profile.iters() });
    let batch = a
        .batch
        .or_else(|| config.usize_("batch"))
        .unwrap_or(if finetune { 8 } else { profile.batch() });
    let loss_kind = match (a.loss, config.str_("loss")) {
        (Some(k), _) => k,
        (None, Some(s)) => s.parse().map_err(|e: String| anyhow::anyhow!(e))?,
        (None, None) => LossKind::L1Ssim,
    };
    let seed = a.seed.or_else(|| config.u64_("seed")).unwrap_or(0);
    // few-shot warmup auto-enabled for small training sets
    let warmup = a
        .warmup
        .or_else(|| config.usize_("warmup"))
        .unwrap_or(if n <= 16 { 200.min(iters) } else { 0 });
    let checkpoint_every = a
        .checkpoint_every
        .or_else(|| config.usize_("checkpoint_every"))
        .unwrap_or(500);

    let pretrained = match &a.pretrained {
        Some(p) => Some(compen::checkpoint::load_named(p)?),
        None => None,
    };
    let cfg = TrainConfig {
        iterations: iters,
        batch,
        loss_kind,
        l1_warmup_iterations: warmup,
        seed,
        canonical: profile.canonical(),
        checkpoint_every,
        ..TrainConfig::default()
    };
    let ckpt_base = a.out.clone();
    let outcome = train(&dataset, n, &cfg, pretrained.as_ref(), |iter, model| {
        if iter < iters {
            let p = ckpt_base.with_extension(format!("iter{iter}.ckpt"));
            if let Err(e) = model.save(&p) {
                eprintln!("warning: checkpoint at {iter} failed: {e}");
            }
        }
    })?;
    outcome.model.save(&a.out)?;
    let last = outcome.curve.last().map(|r| r.loss).unwrap_or(f64::NAN);
    println!(
        "trained {} pairs for {} iterations (final loss {:.4}) -> {}",
        n,
        iters,
        last,
        a.out.display()
    );
    RunManifest::new(if finetune { "finetune" } else { "train" })
        .arg("setup", a.setup.display().to_string())
        .arg("n", n)
        .arg("iters", iters)
        .arg("batch", batch)
        .arg("loss", loss_kind.to_string())
        .arg("warmup", warmup)
        .arg("seed", seed)
        .arg("canonical", format!("{}x{}", cfg.canonical.1, cfg.canonical.0))
        .arg(
            "pretrained",
            a.pretrained
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        )
        .outputs(vec![a.out.display().to_string()])
        .finish(a.out.parent().unwrap_or(Path::new(".")), start)?;
    Ok(())
}

fn cmd_simplify(a: SimplifyArgs) -> Result<()> {
    let start = Instant::now();
    let dataset = load_setup(&a.setup)?;
    let model = CompensationModel::load(&a.model)?;
    let fov = fov_mask(&dataset.surface)?;
    let prj_size = (dataset.train[0].1.height(), dataset.train[0].1.width());
    let baked = simplify(&model, &dataset.surface, &fov, prj_size)?;
    baked.save(&a.out)?;
    println!("baked -> {}.{{grid,ckpt,json}}", a.out.display());
    RunManifest::new("simplify")
        .arg("setup", a.setup.display().to_string())
        .arg("model", a.model.display().to_string())
        .outputs(vec![format!("{}.grid", a.out.display())])
        .finish(a.out.parent().unwrap_or(Path::new(".")), start)?;
    Ok(())
}

fn cmd_compensate(a: CompensateArgs) -> Result<()> {
    let start = Instant::now();
    let baked = BakedModel::load(&a.baked)?;
    let inputs: Vec<PathBuf> = if a.input.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(&a.input)
            .with_context(|| format!("reading {}", a.input.display()))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "png"))
            .collect();
        v.sort();
        v
    } else {
        vec![a.input.clone()]
    };
    if inputs.is_empty() {
        bail!("no PNG inputs under {}", a.input.display());
    }
    std::fs::create_dir_all(&a.out)
        .with_context(|| format!("creating {}", a.out.display()))?;
    let mut outputs = Vec::new();
    for p in &inputs {
        let img = ImageRGB::load(p)?;
        let comp = baked.infer_compensation(&img);
        let name = p.file_name().context("input has no file name")?;
        let out_path = a.out.join(name);
        comp.save(&out_path)?;
        outputs.push(out_path.display().to_string());
    }
    println!("compensated {} image(s) -> {}", inputs.len(), a.out.display());
    RunManifest::new("compensate")
        .arg("baked", a.baked.display().to_string())
        .arg("input", a.input.display().to_string())
        .outputs(outputs)
        .finish(&a.out, start)?;
    Ok(())
}

fn cmd_eval(a: EvalArgs, config: &FileConfig) -> Result<()> {
    let start = Instant::now();
    let model = CompensationModel::load(&a.model)?;
    let mut entries = Vec::with_capacity(a.setup.len());
    for dir in &a.setup {
        let dataset = load_setup(dir)?;
        let id = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let n_used = a
            .n_train_used
            .or_else(|| config.usize_("n_train_used"))
            .unwrap_or(dataset.train.len());
        entries.push(evaluate(&model, &dataset, n_used, &id)?);
    }
    let rep = report(entries);
    let text = match a.format.as_str() {
        "json" => {
            let json = rep.to_json();
            validate_report_json(&json).map_err(|e| anyhow::anyhow!("report schema: {e}"))?;
            json
        }
        "markdown" => rep.to_markdown(),
        other => bail!("unknown format {other:?} (expected json or markdown)"),
    };
    match &a.out {
        Some(path) => {
            std::fs::write(path, &text)
                .with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {}", path.display());
            RunManifest::new("eval")
                .arg("model", a.model.display().to_string())
                .arg("format", a.format.clone())
                .arg("setups", a.setup.len())
                .outputs(vec![path.display().to_string()])
                .finish(path.parent().unwrap_or(Path::new(".")), start)?;
        }
        None => println!("{text}"),
    }
    Ok(())
}
