use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use drsnet::checkpoint;
use drsnet::dataset::{self, derive_seed, load_corpus, resize_sample, LoadOptions, Mask, Sample};
use drsnet::model::{DrsNet, NetworkConfig};
use drsnet::profiler::{self, ProfileReport};
use drsnet::trainer::{self, EvalReport, TrainConfig, TrainOutput};
use image::{GrayImage, Luma};
use serde::Serialize;
use serde_json::{json, Value};

use crate::{
    AblateArgs, AddRainArgs, CorpusArgs, EvalArgs, PredictArgs, ProfileArgs, Size, TrainArgs, TrainFlags,
};

const VERSION: &str = env!("CARGO_PKG_VERSION");
const TABLE_SIZES: [(usize, usize); 3] = [(192, 128), (384, 256), (768, 512)];

fn command_line() -> Vec<String> {
    std::env::args().collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        writeln!(f, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}

/// Records everything needed to rerun a command.
fn write_manifest(path: &Path, command: &str, seed: Option<u64>, config: Value) -> Result<()> {
    write_json(
        path,
        &json!({
            "command": command,
            "argv": command_line(),
            "seed": seed,
            "config": config,
            "version": VERSION,
        }),
    )
}

fn load(corpus: &CorpusArgs) -> Result<Vec<Sample>> {
    let opts = LoadOptions {
        layout: corpus.layout.into(),
        skip_unreadable: corpus.skip_unreadable,
    };
    let loaded = load_corpus(&corpus.data, opts)?;
    for (path, reason) in &loaded.skipped {
        eprintln!("warning: skipped {}: {reason}", path.display());
    }
    Ok(loaded.samples)
}

fn network_config(variant: crate::VariantArg, ablation: Option<crate::AblationArg>, size: Size) -> NetworkConfig {
    let cfg = match ablation {
        Some(kind) => NetworkConfig::ablation(kind.into()),
        None => NetworkConfig::new(variant.into()),
    };
    cfg.with_input_size(size.width, size.height)
}

fn model_name(variant: crate::VariantArg, ablation: Option<crate::AblationArg>) -> String {
    match ablation {
        Some(kind) => drsnet::model::AblationKind::from(kind).name().to_string(),
        None => format!("DRSNet({})", drsnet::blocks::BlockVariant::from(variant)),
    }
}

/// Defaults, then the config file, then explicit flags.
fn resolve_train_config(flags: &TrainFlags) -> Result<TrainConfig> {
    let mut cfg = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).map_err(|e| drsnet::Error::Config(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = flags.size {
        cfg.input_size = (s.width, s.height);
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = flags.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = flags.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = flags.lr {
        cfg.base_lr = v;
    }
    if let Some(v) = flags.momentum {
        cfg.momentum = v;
    }
    if let Some(v) = flags.weight_decay {
        cfg.weight_decay = v;
    }
    if let Some(v) = flags.warmup_epochs {
        cfg.warmup_epochs = v;
    }
    if let Some(v) = flags.train_fraction {
        cfg.train_fraction = v;
    }
    if let Some(v) = flags.rain {
        cfg.rain = v.into();
    }
    if flags.clean_test {
        cfg.rain_test = false;
    }
    if let Some(v) = flags.loss_reduction {
        cfg.loss_reduction = v.into();
    }
    if let Some(v) = flags.averaging {
        cfg.averaging = v.into();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn summary_json(model: &DrsNet, report: &EvalReport) -> Value {
    let cfg = model.config();
    json!({
        "variant": cfg.variant.to_string(),
        "input_size": format!("{}x{}", cfg.input_size.0, cfg.input_size.1),
        "foreground_accuracy": report.summary.foreground_accuracy,
        "foreground_recall": report.summary.foreground_recall,
        "miou": report.summary.miou,
        "n_images": report.summary.n_images,
        "degenerate_images": report.summary.degenerate_images,
        "averaging": report.averaging,
        "ms_per_image": report.ms_per_image,
    })
}

fn write_eval(dir: &Path, model: &DrsNet, report: &EvalReport) -> Result<Value> {
    let summary = summary_json(model, report);
    write_json(&dir.join("eval.json"), &summary)?;
    write_jsonl(&dir.join("per_image.jsonl"), &report.per_image)?;
    Ok(summary)
}

pub fn add_rain(args: AddRainArgs) -> Result<()> {
    let seed = args.seed.unwrap_or(0);
    let samples = load(&CorpusArgs {
        data: args.input.clone(),
        layout: args.layout,
        skip_unreadable: args.skip_unreadable,
    })?;
    if samples.is_empty() {
        return Err(drsnet::Error::Data(format!("no images under {}", args.input.display())).into());
    }
    create_dir(&args.out)?;
    let records = dataset::build_add_rain_benchmark(
        &samples,
        &args.out,
        seed,
        args.size.width,
        args.size.height,
        args.streak_color,
    )?;
    write_manifest(
        &args.out.join("manifest.json"),
        "add-rain",
        Some(seed),
        json!({
            "input": args.input,
            "size": args.size,
            "streak_color": args.streak_color,
        }),
    )?;
    println!(
        "{}",
        json!({"images": records.len(), "out": args.out, "seed": seed})
    );
    Ok(())
}

/// Trains one model into `dir` and scores its best checkpoint on the
/// prepared test split.
fn train_one(
    net: NetworkConfig,
    samples: &[Sample],
    cfg: &TrainConfig,
    dir: &Path,
    name: &str,
) -> Result<(DrsNet, Value)> {
    create_dir(dir)?;
    write_json(&dir.join("config.json"), &json!({"network": net, "train": cfg}))?;
    write_manifest(
        &dir.join("manifest.json"),
        "train",
        Some(cfg.seed),
        json!({"model": name, "network": net, "train": cfg}),
    )?;
    let (train_set, test_set) = trainer::split_dataset(samples, cfg.train_fraction, cfg.seed)?;
    let test_set = trainer::prepare_test_set(&test_set, cfg)?;
    let model = DrsNet::new(net, cfg.seed)?;
    let history = trainer::train(&model, &train_set, &test_set, cfg, Some(TrainOutput { dir }))?;
    let best = if history.best_epoch.is_some() {
        dir.join("best.ckpt")
    } else {
        dir.join("final.ckpt")
    };
    let model = checkpoint::load(&best)?;
    let report = trainer::evaluate(&model, &test_set, cfg.threshold, cfg.averaging)?;
    let mut summary = write_eval(dir, &model, &report)?;
    summary["model"] = json!(name);
    summary["best_epoch"] = json!(history.best_epoch);
    summary["final_train_loss"] = json!(history.epochs.last().map(|e| e.train_loss));
    Ok((model, summary))
}

pub fn train(args: TrainArgs) -> Result<()> {
    let cfg = resolve_train_config(&args.train)?;
    let size = Size {
        width: cfg.input_size.0,
        height: cfg.input_size.1,
    };
    let net = network_config(args.variant, args.ablation, size);
    let samples = load(&args.corpus)?;
    let name = model_name(args.variant, args.ablation);
    let (_, summary) = train_one(net, &samples, &cfg, &args.out, &name)?;
    println!("{summary}");
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let model = checkpoint::load(&args.model)?;
    let (w, h) = match args.size {
        Some(s) => (s.width, s.height),
        None => model.config().input_size,
    };
    let samples = load(&args.corpus)?;
    let samples = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut s = resize_sample(s, w, h)?;
            if let Some(seed) = args.rain_seed {
                s.image = dataset::rain_image(&s.image, derive_seed(seed, &[i as u64]), drsnet::rain::DEFAULT_STREAK_COLOR)?.0;
            }
            Ok(s)
        })
        .collect::<drsnet::Result<Vec<_>>>()?;
    let report = trainer::evaluate(&model, &samples, args.threshold, args.averaging.into())?;
    create_dir(&args.out)?;
    let summary = write_eval(&args.out, &model, &report)?;
    write_manifest(
        &args.out.join("manifest.json"),
        "eval",
        args.rain_seed,
        json!({
            "model": args.model,
            "data": args.corpus.data,
            "size": Size { width: w, height: h },
            "threshold": args.threshold,
            "averaging": report.averaging,
            "rain_seed": args.rain_seed,
        }),
    )?;
    println!("{summary}");
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn save_gray(img: &GrayImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| drsnet::Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    Ok(())
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let model = checkpoint::load(&args.model)?;
    let img = image::open(&args.input)
        .map_err(|e| drsnet::Error::Image {
            path: args.input.clone(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (orig_w, orig_h) = (img.width() as usize, img.height() as usize);
    let (w, h) = model.config().input_size;
    let sample = Sample {
        mask: Mask {
            width: orig_w,
            height: orig_h,
            data: vec![0; orig_w * orig_h],
        },
        image: img,
        source_id: String::new(),
    };
    let resized = resize_sample(&sample, w, h)?;
    let probs = trainer::predict(&model, &resized.image)?;
    let mask = Mask {
        width: w,
        height: h,
        data: drsnet::metrics::binarize(&probs, args.threshold),
    }
    .resize(orig_w, orig_h);
    save_gray(&mask.to_gray(), &args.out)?;
    if let Some(path) = &args.probabilities {
        let map = GrayImage::from_fn(w as u32, h as u32, |x, y| {
            Luma([(probs[y as usize * w + x as usize] * 255.0).round() as u8])
        });
        save_gray(&map, path)?;
    }
    write_manifest(
        &sibling(&args.out, ".manifest.json"),
        "predict",
        None,
        json!({
            "model": args.model,
            "input": args.input,
            "threshold": args.threshold,
            "model_input_size": Size { width: w, height: h },
            "probabilities": args.probabilities,
        }),
    )?;
    println!(
        "{}",
        json!({"mask": args.out, "foreground_fraction": mask.foreground_fraction()})
    );
    Ok(())
}

pub fn profile(args: ProfileArgs) -> Result<()> {
    if args.time && args.runs < 10 {
        return Err(drsnet::Error::Config(format!("--runs must be at least 10, got {}", args.runs)).into());
    }
    let timing = args.time.then_some((args.warmup, args.runs));
    let rows: Vec<ProfileReport> = if args.table {
        let sizes: Vec<(usize, usize)> = if args.sizes.is_empty() {
            TABLE_SIZES.to_vec()
        } else {
            args.sizes.iter().map(|s| (s.width, s.height)).collect()
        };
        profiler::profile_table(&sizes, timing)?
    } else {
        let net = network_config(args.variant, args.ablation, args.size);
        let model = DrsNet::new(net, 0)?;
        let name = model_name(args.variant, args.ablation);
        vec![profiler::profile(&name, &model, args.size.width, args.size.height, timing)?]
    };
    for r in &rows {
        println!("{}", serde_json::to_string(r)?);
    }
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_jsonl(&out.join("profile.jsonl"), &rows)?;
        write_manifest(
            &out.join("manifest.json"),
            "profile",
            None,
            json!({
                "table": args.table,
                "rows": rows.len(),
                "timing": timing.map(|(warmup, runs)| json!({"warmup": warmup, "runs": runs})),
            }),
        )?;
    }
    Ok(())
}

pub fn ablate(args: AblateArgs) -> Result<()> {
    let cfg = resolve_train_config(&args.train)?;
    let size = Size {
        width: cfg.input_size.0,
        height: cfg.input_size.1,
    };
    let kinds = if args.kind.is_empty() {
        vec![
            crate::AblationArg::Seresnet18Encoder,
            crate::AblationArg::SymmetricSkip,
            crate::AblationArg::Resnet18Bottleneck,
        ]
    } else {
        args.kind.clone()
    };
    let mut runs: Vec<Option<crate::AblationArg>> = Vec::new();
    if !args.no_baseline {
        runs.push(None);
    }
    runs.extend(kinds.into_iter().map(Some));

    let samples = load(&args.corpus)?;
    create_dir(&args.out)?;
    write_manifest(
        &args.out.join("manifest.json"),
        "ablate",
        Some(cfg.seed),
        json!({
            "models": runs.iter().map(|r| model_name(crate::VariantArg::A, *r)).collect::<Vec<_>>(),
            "train": cfg,
        }),
    )?;
    let table_path = args.out.join("ablation.jsonl");
    let mut table = fs::File::create(&table_path).with_context(|| format!("writing {}", table_path.display()))?;
    for ablation in runs {
        let name = model_name(crate::VariantArg::A, ablation);
        let net = network_config(crate::VariantArg::A, ablation, size);
        let (model, summary) = train_one(net, &samples, &cfg, &args.out.join(&name), &name)?;
        let budget = profiler::profile(&name, &model, size.width, size.height, None)?;
        let row = json!({
            "model": name,
            "params": budget.params,
            "gflops": budget.gflops,
            "foreground_accuracy": summary["foreground_accuracy"],
            "miou": summary["miou"],
        });
        writeln!(table, "{row}")?;
        println!("{row}");
    }
    Ok(())
}
