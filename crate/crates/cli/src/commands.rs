use std::fs;
use std::path::{Path, PathBuf};

use vesseldistill::eval::{evaluate, predict_all, render_report, read_metrics_csv, write_metrics_csv, write_overlay, MetricsReport};
use vesseldistill::synthdata::{load_corpus, write_atomic, write_corpus};
use vesseldistill::train::{
    distill, train_scratch, train_teacher, Checkpoint, Precision, RunOutput, TrainConfig, BEST_CKPT, CKPT_DIR, LAST_CKPT,
    LOG_FILE,
};
use vesseldistill::Error;
use vesseldistill_autograd::Float;

use crate::data_options::DataOptions;
use crate::rundir::{device, new_manifest, Guard, RunDir};
use crate::{CliError, CliResult, Common, EvalArgs, GenDataArgs, ReportArgs, TrainArgs};

pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const EVAL_MANIFEST: &str = "eval_manifest.json";
pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const OVERLAY_DIR: &str = "overlays";
pub const REPORT_FILE: &str = "report.md";

fn required<'a, T: ?Sized>(v: Option<&'a T>, flag: &str) -> CliResult<&'a T> {
    v.ok_or_else(|| CliError::Usage(format!("missing required flag {flag}")))
}

fn read_text(path: &Path) -> CliResult<String> {
    Ok(fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

fn split_set(kv: &str) -> CliResult<(&str, &str)> {
    kv.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))
}

pub fn gen_data(args: &GenDataArgs, argv: &[String]) -> CliResult<()> {
    let device = device()?;
    let c = &args.common;
    let mut opts = DataOptions::default();
    if let Some(path) = &c.config {
        opts.apply_kv(&read_text(path)?)?;
    }
    if let Some(s) = c.seed {
        opts.seed = s;
    }
    if let Some(n) = args.n_images {
        opts.n_images = n;
    }
    if let Some(p) = &args.preset {
        opts.set("preset", p)?;
    }
    if let Some(f) = args.train_fraction {
        opts.train_fraction = f;
    }
    for kv in &c.set {
        let (k, v) = split_set(kv)?;
        opts.set(k, v)?;
    }
    let synth = opts.synth_config();
    synth.validate()?;
    if c.print_config {
        print!("{}", opts.to_kv());
        return Ok(());
    }
    let out = required(c.out.as_deref(), "--out")?;
    let manifest = new_manifest("gen-data", argv, device, opts.to_kv());
    let mut run = RunDir::open(out, c.force, Guard::Empty, RUN_MANIFEST, manifest)?;
    let result = write_corpus(out, &synth, opts.train_fraction).map_err(CliError::from);
    for a in ["manifest.json", "images", "masks"] {
        run.artifact(a);
    }
    let m = run.conclude(result)?;
    println!(
        "wrote {} patches from {} parent images to {}",
        m.samples.len(),
        m.n_parents,
        out.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainKind {
    Teacher,
    Scratch,
    Distill,
}

impl TrainKind {
    fn name(self) -> &'static str {
        match self {
            TrainKind::Teacher => "train-teacher",
            TrainKind::Scratch => "train-scratch",
            TrainKind::Distill => "distill",
        }
    }

    fn modes(self) -> &'static [&'static str] {
        match self {
            TrainKind::Teacher => &["teacher"],
            TrainKind::Scratch => &["scratch"],
            TrainKind::Distill => &["distill", "fsd_only", "softkd"],
        }
    }
}

/// Defaults, then the config file, then flags.
fn resolve_train(kind: TrainKind, args: &TrainArgs, mode: Option<&str>) -> CliResult<TrainConfig> {
    let c = &args.common;
    let mut cfg = TrainConfig {
        mode: kind.modes()[0].into(),
        ..TrainConfig::default()
    };
    if let Some(path) = &c.config {
        cfg.apply_kv(&read_text(path)?)?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    for (key, v) in [
        ("epochs", &args.epochs),
        ("lr", &args.lr),
        ("batch_size", &args.batch_size),
        ("student_variant", &args.student),
        ("preset", &args.preset),
        ("precision", &args.precision),
    ] {
        if let Some(v) = v {
            cfg.set(key, v)?;
        }
    }
    for kv in &c.set {
        let (k, v) = split_set(kv)?;
        cfg.set(k, v)?;
    }
    if let Some(m) = mode {
        cfg.set("mode", m)?;
    }
    if !kind.modes().contains(&cfg.mode.as_str()) {
        return Err(Error::Config(format!(
            "field `mode`: expected {} for {}, got `{}`",
            kind.modes().join("|"),
            kind.name(),
            cfg.mode
        ))
        .into());
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(kind: TrainKind, args: &TrainArgs, teacher_ckpt: Option<&Path>, mode: Option<&str>, argv: &[String]) -> CliResult<()> {
    let device = device()?;
    let cfg = resolve_train(kind, args, mode)?;
    if args.common.print_config {
        print!("{}", cfg.to_kv());
        return Ok(());
    }
    let data = required(args.data.as_deref(), "--data")?;
    let teacher_ckpt = match kind {
        TrainKind::Distill => Some(required(teacher_ckpt, "--teacher-ckpt")?),
        _ => None,
    };
    let out = required(args.common.out.as_deref(), "--out")?;

    let mut manifest = new_manifest(kind.name(), argv, device, cfg.to_kv());
    manifest.inputs.push(("data".into(), data.display().to_string()));
    if let Some(t) = teacher_ckpt {
        manifest.inputs.push(("teacher_ckpt".into(), t.display().to_string()));
    }
    let mut run = RunDir::open(out, args.common.force, Guard::Empty, RUN_MANIFEST, manifest)?;
    let result = match cfg.precision {
        Precision::F32 => run_training::<f32>(&cfg, data, teacher_ckpt, out),
        Precision::F64 => run_training::<f64>(&cfg, data, teacher_ckpt, out),
    };
    for a in [CONFIG_FILE, LOG_FILE, &format!("{CKPT_DIR}/{LAST_CKPT}"), &format!("{CKPT_DIR}/{BEST_CKPT}")] {
        run.artifact(a);
    }
    let summary = run.conclude(result)?;
    println!("{summary}");
    Ok(())
}

fn run_training<F: Float>(cfg: &TrainConfig, data: &Path, teacher_ckpt: Option<&Path>, out: &Path) -> CliResult<String> {
    let teacher = match teacher_ckpt {
        Some(path) => {
            let ck = Checkpoint::<F>::load(path)?;
            let net = ck.network()?;
            if net.spec().variant != cfg.teacher_variant {
                return Err(Error::Incompatible(format!(
                    "field `teacher_variant` is `{}` but {} holds `{}`",
                    cfg.teacher_variant,
                    path.display(),
                    net.spec().variant
                ))
                .into());
            }
            Some(net)
        }
        None => None,
    };
    let corpus = load_corpus(data)?;
    write_atomic(&out.join(CONFIG_FILE), cfg.to_kv().as_bytes())?;
    let run: RunOutput<F> = match (cfg.mode.as_str(), teacher) {
        ("teacher", _) => train_teacher(cfg, &corpus.split, Some(out))?,
        ("scratch", _) => train_scratch(cfg, &corpus.split, Some(out))?,
        (_, Some(t)) => distill(cfg, t, &corpus.split, Some(out))?,
        (m, None) => return Err(CliError::Usage(format!("mode `{m}` needs --teacher-ckpt"))),
    };
    let last = run.log.last().and_then(|r| r.val.miou);
    let fmt = |v: Option<f64>| v.map_or_else(|| "NA".into(), |v| format!("{v:.4}"));
    Ok(match &run.best {
        Some((epoch, miou, _)) => format!(
            "{}: {} epochs, final val mIOU {}, best {:.4} at epoch {epoch}",
            cfg.mode,
            run.log.len(),
            fmt(last),
            miou
        ),
        None => format!("{}: {} epochs, final val mIOU {}", cfg.mode, run.log.len(), fmt(last)),
    })
}

/// `<run>/ckpt/x.ckpt` reports into `<run>`, anything else next to the file.
fn default_eval_dir(ckpt: &Path) -> PathBuf {
    let parent = ckpt.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if parent.file_name().is_some_and(|n| n == CKPT_DIR) {
        parent.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf()
    } else {
        parent.to_path_buf()
    }
}

fn checkpoint_label(ckpt: &Path, run_dir: &Path) -> String {
    let stem = ckpt.file_stem().map_or_else(|| "ckpt".into(), |s| s.to_string_lossy().into_owned());
    let run = fs::canonicalize(run_dir)
        .ok()
        .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "run".into());
    format!("{run}/{stem}").replace(',', "_")
}

pub fn eval(args: &EvalArgs, argv: &[String]) -> CliResult<()> {
    let device = device()?;
    let c = &args.common;
    let ckpt = required(args.ckpt.as_deref(), "--ckpt")?;
    let data = required(args.data.as_deref(), "--data")?;
    if !["test", "train"].contains(&args.split.as_str()) {
        return Err(CliError::Usage(format!("--split expects test|train, got `{}`", args.split)));
    }
    let header = Checkpoint::<f64>::load(ckpt)?;
    let mut cfg = if header.info.config.is_empty() {
        TrainConfig::default()
    } else {
        TrainConfig::from_kv(&header.info.config)?
    };
    if let Some(path) = &c.config {
        cfg.apply_kv(&read_text(path)?)?;
    }
    for kv in &c.set {
        let (k, v) = split_set(kv)?;
        cfg.set(k, v)?;
    }
    if let Some(t) = &args.threshold {
        cfg.set("threshold", t)?;
    }
    cfg.validate()?;
    if c.print_config {
        print!("{}", cfg.to_kv());
        return Ok(());
    }
    let out = c.out.clone().unwrap_or_else(|| default_eval_dir(ckpt));
    let mut manifest = new_manifest("eval", argv, device, cfg.to_kv());
    manifest.inputs.push(("ckpt".into(), ckpt.display().to_string()));
    manifest.inputs.push(("data".into(), data.display().to_string()));
    let mut run = RunDir::open(&out, c.force, Guard::Entries(&[METRICS_FILE, OVERLAY_DIR]), EVAL_MANIFEST, manifest)?;
    let label = checkpoint_label(ckpt, &default_eval_dir(ckpt));
    let result = match cfg.precision {
        Precision::F32 => run_eval::<f32>(&cfg, ckpt, data, &args.split, args.overlays, &out, label),
        Precision::F64 => run_eval::<f64>(&cfg, ckpt, data, &args.split, args.overlays, &out, label),
    };
    run.artifact(METRICS_FILE);
    run.artifact(OVERLAY_DIR);
    let row = run.conclude(result)?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "NA".into(), |v| format!("{v:.4}"));
    println!(
        "{}: acc {} se {} auc {} miou {} f1 {} flops {} params {}",
        row.checkpoint,
        fmt(row.acc),
        fmt(row.se),
        fmt(row.auc),
        fmt(row.miou),
        fmt(row.f1),
        row.flops,
        row.params
    );
    Ok(())
}

fn run_eval<F: Float>(
    cfg: &TrainConfig,
    ckpt: &Path,
    data: &Path,
    split: &str,
    overlays: usize,
    out: &Path,
    label: String,
) -> CliResult<MetricsReport> {
    let ck = Checkpoint::<F>::load(ckpt)?;
    let net = ck.network()?;
    let corpus = load_corpus(data)?;
    let samples = if split == "train" { &corpus.split.train } else { &corpus.split.test };
    let first = samples
        .first()
        .ok_or_else(|| Error::Data(format!("{split} split of {} is empty", data.display())))?;
    let m = evaluate(&net, samples, cfg.eval_batch, cfg.threshold)?;
    let row = MetricsReport {
        checkpoint: label,
        variant: net.spec().variant.clone(),
        mode: ck.info.mode.clone(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        acc: m.acc,
        se: m.se,
        auc: m.auc,
        miou: m.miou,
        f1: m.f1,
        flops: net.count_flops(&[1, net.spec().in_channels, first.height, first.width])?,
        params: net.param_count() as u64,
    };
    write_metrics_csv(&out.join(METRICS_FILE), std::slice::from_ref(&row))?;
    let shown = &samples[..overlays.min(samples.len())];
    if !shown.is_empty() {
        let dir = out.join(OVERLAY_DIR);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let preds = predict_all(&net, shown, cfg.eval_batch)?;
        for (s, p) in shown.iter().zip(&preds) {
            write_overlay(&dir.join(format!("{}.png", s.id)), s, p, cfg.threshold)?;
        }
    }
    Ok(row)
}

pub fn report(args: &ReportArgs, argv: &[String]) -> CliResult<()> {
    let device = device()?;
    let c: &Common = &args.common;
    let out = required(c.out.as_deref(), "--out")?;
    let mut manifest = new_manifest("report", argv, device, String::new());
    for p in &args.inputs {
        manifest.inputs.push(("metrics".into(), p.display().to_string()));
    }
    let mut run = RunDir::open(out, c.force, Guard::Entries(&[REPORT_FILE]), RUN_MANIFEST, manifest)?;
    let result = (|| -> CliResult<String> {
        let mut rows = Vec::new();
        for p in &args.inputs {
            rows.extend(read_metrics_csv(p)?);
        }
        let md = render_report(&rows);
        write_atomic(&out.join(REPORT_FILE), md.as_bytes())?;
        Ok(md)
    })();
    run.artifact(REPORT_FILE);
    let md = run.conclude(result)?;
    print!("{md}");
    Ok(())
}
