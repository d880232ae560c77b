use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sevs_core::checkpoint;
use sevs_core::data_model::{
    generate_synthetic, load_dataset, make_splits, save_dataset, Dataset, Setting, SplitPlan,
    NUM_SPLITS,
};
use sevs_core::evaluation::{
    ablation_matrix, evaluate_split_plan, nms_sweep, render_ablation, render_report, sweep_csv,
    Corpus, FscoreMode,
};
use sevs_core::fusion::FusionMode;
use sevs_core::losses::LossToggles;
use sevs_core::model::{ModelConfig, ModelParams};
use sevs_core::summarizer::{summarize_video, KtsConfig, SummarizeConfig};
use sevs_core::training::{forward_full, train_with, TrainConfig};

use crate::args::*;
use crate::manifest::{ensure_dir, Outputs};
use crate::CliError;

/// What a command reports back for its run manifest.
pub struct RunResult {
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Outputs,
    pub out_dir: PathBuf,
}

const SYNTH_VIDEOS: usize = 10;
const SYNTH_FRAMES: (usize, usize) = (40, 64);
const SYNTH_DIM: usize = 16;

/// Loads `synth`, `synth:<seed>` or a dataset on disk.
pub fn load_data(spec: &str) -> Result<Dataset, CliError> {
    if spec == "synth" {
        return Ok(generate_synthetic(
            SYNTH_VIDEOS,
            SYNTH_FRAMES,
            SYNTH_DIM,
            0,
        )?);
    }
    if let Some(seed) = spec.strip_prefix("synth:") {
        let seed: u64 = seed
            .parse()
            .map_err(|_| CliError::Usage(format!("bad synthetic seed in {spec}")))?;
        let mut d = generate_synthetic(SYNTH_VIDEOS, SYNTH_FRAMES, SYNTH_DIM, seed)?;
        d.name = format!("synthetic-{seed}");
        return Ok(d);
    }
    Ok(load_dataset(spec)?)
}

fn parse<T: std::str::FromStr<Err = sevs_core::Error>>(s: &str) -> Result<T, CliError> {
    s.parse()
        .map_err(|e: sevs_core::Error| CliError::Usage(e.to_string()))
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(args: &ModelArgs, feature_dim: usize) -> Result<TrainConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| sevs_core::Error::io(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| sevs_core::Error::json(path.display().to_string(), e))?
        }
        None => TrainConfig::default(),
    };
    if args.tiny {
        cfg.model = ModelConfig::tiny(feature_dim);
    }
    cfg.model.feature_dim = feature_dim;
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.weight_decay {
        cfg.weight_decay = v;
    }
    if let Some(v) = args.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = args.nms_threshold {
        cfg.nms_threshold = v;
    }
    if let Some(v) = &args.fusion {
        cfg.fusion = parse::<FusionMode>(v)?;
    }
    if let Some(v) = &args.loss_toggles {
        cfg.loss_toggles = LossToggles::parse(v).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if args.fusion_grad_flow {
        cfg.fusion_grad_flow = true;
    }
    if args.checkpoint_every.is_some() {
        cfg.checkpoint_every = args.checkpoint_every;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Inference settings applied on top of a checkpoint's model config.
fn inference_config(args: &ModelArgs, params: &ModelParams) -> Result<TrainConfig, CliError> {
    let mut cfg = resolve_config(args, params.config.feature_dim)?;
    cfg.model = params.config.clone();
    Ok(cfg)
}

fn summarize_config(args: &SummaryArgs) -> Result<SummarizeConfig, CliError> {
    if !(0.0..=1.0).contains(&args.budget) {
        return Err(CliError::Usage(format!(
            "budget {} outside [0, 1]",
            args.budget
        )));
    }
    Ok(SummarizeConfig {
        budget: args.budget,
        kts: KtsConfig::default(),
        use_annotated_shots: args.annotated_shots,
    })
}

fn fscore_mode(args: &SummaryArgs, dataset: &Dataset) -> Result<FscoreMode, CliError> {
    match &args.fscore_mode {
        Some(m) => parse(m),
        None => Ok(FscoreMode::default_for(&dataset.name)),
    }
}

fn selected_splits(spec: &str) -> Result<Vec<usize>, CliError> {
    if spec == "all" {
        return Ok((0..NUM_SPLITS).collect());
    }
    match spec.parse::<usize>() {
        Ok(i) if i < NUM_SPLITS => Ok(vec![i]),
        _ => Err(CliError::Usage(format!(
            "--split must be `all` or an index below {NUM_SPLITS}, got {spec}"
        ))),
    }
}

struct Plan {
    target: Dataset,
    extras: Vec<Dataset>,
    plan: SplitPlan,
    splits: Vec<usize>,
}

fn build_plan(data: &DataArgs, seed: u64) -> Result<Plan, CliError> {
    let setting: Setting = parse(&data.setting)?;
    if setting != Setting::Canonical && data.extras.is_empty() {
        return Err(CliError::Usage(format!(
            "--setting {setting} needs --extras"
        )));
    }
    let splits = selected_splits(&data.split)?;
    let target = load_data(&data.data)?;
    let extras = data
        .extras
        .iter()
        .map(|e| load_data(e))
        .collect::<Result<Vec<_>, _>>()?;
    check_dims(&target, &extras)?;
    let plan = make_splits(&target, &extras, setting, seed)?;
    Ok(Plan {
        target,
        extras,
        plan,
        splits,
    })
}

fn check_dims(target: &Dataset, extras: &[Dataset]) -> Result<(), CliError> {
    let dim = target.feature_dim();
    if let Some(e) = extras.iter().find(|e| e.feature_dim() != dim) {
        return Err(sevs_core::Error::Shape(format!(
            "dataset {} has feature dim {:?}, {} has {:?}",
            e.name,
            e.feature_dim(),
            target.name,
            dim
        ))
        .into());
    }
    Ok(())
}

impl Plan {
    fn datasets(&self) -> Vec<&Dataset> {
        std::iter::once(&self.target).chain(&self.extras).collect()
    }

    fn dim(&self) -> usize {
        self.target.feature_dim().unwrap_or(0)
    }
}

fn split_checkpoint(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("split_{i}.ckpt"))
}

fn to_value<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

pub fn generate(args: &GenerateArgs) -> Result<RunResult, CliError> {
    if args.min_frames > args.max_frames {
        return Err(CliError::Usage("--min-frames exceeds --max-frames".into()));
    }
    let dataset = generate_synthetic(
        args.videos,
        (args.min_frames, args.max_frames),
        args.dim,
        args.seed,
    )?;
    ensure_dir(&args.out)?;
    let manifest = save_dataset(&dataset, &args.out)?;
    println!("wrote {} videos to {}", dataset.len(), manifest.display());
    let mut outputs = Outputs::default();
    outputs.record(&manifest)?;
    for i in 0..dataset.len() {
        outputs.record(&args.out.join(format!("{i:04}_features.f32")))?;
        outputs.record(&args.out.join(format!("{i:04}_annotations.json")))?;
    }
    Ok(RunResult {
        config: serde_json::json!({
            "videos": args.videos,
            "min_frames": args.min_frames,
            "max_frames": args.max_frames,
            "dim": args.dim,
        }),
        seed: Some(args.seed),
        inputs: vec![],
        outputs,
        out_dir: args.out.clone(),
    })
}

pub fn validate(args: &ValidateArgs) -> Result<(), CliError> {
    let d = load_data(&args.data)?;
    let frames: Vec<usize> = d.videos.iter().map(|v| v.frames()).collect();
    println!(
        "dataset {}: {} videos, feature dim {}, frames {}..{}",
        d.name,
        d.len(),
        d.feature_dim().unwrap_or(0),
        frames.iter().min().unwrap_or(&0),
        frames.iter().max().unwrap_or(&0)
    );
    Ok(())
}

/// Trains the selected splits and writes checkpoints and logs into `out`.
fn train_plan(
    plan: &Plan,
    cfg: &TrainConfig,
    out: &Path,
    outputs: &mut Outputs,
) -> Result<Vec<Option<ModelParams>>, CliError> {
    let datasets = plan.datasets();
    let corpus = Corpus::new(&datasets);
    let mut models = vec![None; plan.plan.splits.len()];
    for &i in &plan.splits {
        let split = &plan.plan.splits[i];
        if split.test.is_empty() {
            eprintln!("split {i}: empty test set, skipped");
            continue;
        }
        let videos = corpus.videos(&split.train)?;
        let mut log = String::new();
        let mut snapshots = Vec::new();
        let (params, report) = train_with(&videos, cfg, |epoch, params, loss| {
            let record = serde_json::json!({
                "epoch": epoch,
                "cls": loss.cls,
                "reg": loss.reg,
                "pre": loss.pre,
                "mse": loss.mse,
                "mse_per_frame": loss.mse_per_frame,
                "total": loss.total,
            });
            let _ = writeln!(log, "{record}");
            if let Some(every) = cfg.checkpoint_every {
                if every > 0 && (epoch + 1) % every == 0 {
                    snapshots.push((epoch + 1, checkpoint::to_bytes(params)?));
                }
            }
            Ok(())
        })?;
        for (epoch, bytes) in snapshots {
            outputs.write(&out.join(format!("split_{i}_epoch_{epoch}.ckpt")), &bytes)?;
        }
        outputs.write(&out.join(format!("split_{i}.log.jsonl")), log.as_bytes())?;
        outputs.write(&split_checkpoint(out, i), &checkpoint::to_bytes(&params)?)?;
        let last = report.history.last().map_or(f64::NAN, |r| r.loss.total);
        eprintln!(
            "split {i}: {} training videos, final loss {last:.4}, {:.1}s",
            videos.len(),
            report.wall_seconds
        );
        models[i] = Some(params);
    }
    Ok(models)
}

pub fn train(args: &TrainCmd) -> Result<RunResult, CliError> {
    let seed_probe = resolve_seed(&args.model);
    let plan = build_plan(&args.data, seed_probe)?;
    let cfg = resolve_config(&args.model, plan.dim())?;
    ensure_dir(&args.out)?;
    let mut outputs = Outputs::default();
    outputs.write_json(&args.out.join("splits.json"), &plan.plan)?;
    train_plan(&plan, &cfg, &args.out, &mut outputs)?;
    Ok(RunResult {
        config: serde_json::json!({ "train": to_value(&cfg), "data": data_echo(&args.data) }),
        seed: Some(cfg.seed),
        inputs: inputs_of(&args.data),
        outputs,
        out_dir: args.out.clone(),
    })
}

/// Seed used for split assignment, known before the config is resolved.
fn resolve_seed(args: &ModelArgs) -> u64 {
    if let Some(s) = args.seed {
        return s;
    }
    args.config
        .as_ref()
        .and_then(|p| std::fs::read_to_string(p).ok())
        .and_then(|t| serde_json::from_str::<TrainConfig>(&t).ok())
        .map_or(0, |c| c.seed)
}

fn data_echo(d: &DataArgs) -> serde_json::Value {
    serde_json::json!({
        "data": d.data,
        "extras": d.extras,
        "setting": d.setting,
        "split": d.split,
    })
}

fn inputs_of(d: &DataArgs) -> Vec<String> {
    std::iter::once(d.data.clone())
        .chain(d.extras.iter().cloned())
        .collect()
}

pub fn summarize(args: &SummarizeCmd) -> Result<RunResult, CliError> {
    let dataset = load_data(&args.data)?;
    let params = checkpoint::load(&args.checkpoint)?;
    check_width(&dataset, &params)?;
    let cfg = inference_config(&args.model, &params)?;
    let scfg = summarize_config(&args.summary)?;
    let mut records = Vec::with_capacity(dataset.len());
    for video in &dataset.videos {
        let out = forward_full(&video.features, &params, &cfg)?;
        records.push(summarize_video(video, &out.y.y, &scfg)?.1);
    }
    ensure_dir(&args.out)?;
    let mut outputs = Outputs::default();
    outputs.write_json(&args.out.join("summaries.json"), &records)?;
    println!("summarized {} videos", records.len());
    Ok(RunResult {
        config: serde_json::json!({ "inference": to_value(&cfg), "summary": to_value(&scfg) }),
        seed: None,
        inputs: vec![args.data.clone(), args.checkpoint.display().to_string()],
        outputs,
        out_dir: args.out.clone(),
    })
}

fn check_width(dataset: &Dataset, params: &ModelParams) -> Result<(), CliError> {
    match dataset.feature_dim() {
        Some(d) if d != params.config.feature_dim => Err(sevs_core::Error::Shape(format!(
            "dataset {} has feature dim {d}, checkpoint expects {}",
            dataset.name, params.config.feature_dim
        ))
        .into()),
        _ => Ok(()),
    }
}

pub fn evaluate(args: &EvaluateCmd) -> Result<RunResult, CliError> {
    let plan = build_plan(&args.data, resolve_seed(&args.model))?;
    let mut cfg = resolve_config(&args.model, plan.dim())?;
    let scfg = summarize_config(&args.summary)?;
    let mode = fscore_mode(&args.summary, &plan.target)?;
    ensure_dir(&args.out)?;
    let mut outputs = Outputs::default();
    let mut inputs = inputs_of(&args.data);

    let mut models = if args.train_first {
        train_plan(&plan, &cfg, &args.out, &mut outputs)?
    } else {
        let dir = args
            .checkpoint
            .as_ref()
            .expect("clap requires --checkpoint");
        let mut models = vec![None; plan.plan.splits.len()];
        for &i in &plan.splits {
            if plan.plan.splits[i].test.is_empty() {
                continue;
            }
            let path = split_checkpoint(dir, i);
            inputs.push(path.display().to_string());
            let params = checkpoint::load(&path)?;
            check_width(&plan.target, &params)?;
            models[i] = Some(params);
        }
        models
    };
    if let Some(p) = models.iter().flatten().next() {
        cfg.model = p.config.clone();
    }

    let mut sub_plan = plan.plan.clone();
    sub_plan.splits = plan
        .splits
        .iter()
        .map(|&i| plan.plan.splits[i].clone())
        .collect();
    let sub_models: Vec<Option<ModelParams>> =
        plan.splits.iter().map(|&i| models[i].take()).collect();
    let datasets = plan.datasets();
    let mut report = evaluate_split_plan(
        &sub_models,
        &sub_plan,
        Corpus::new(&datasets),
        &cfg,
        &scfg,
        mode,
    )?;
    for (s, &i) in report.splits.iter_mut().zip(&plan.splits) {
        s.split = i;
    }
    outputs.write_json(&args.out.join("report.json"), &report)?;
    let table = render_report(&report);
    outputs.write(&args.out.join("report.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(RunResult {
        config: serde_json::json!({
            "train": to_value(&cfg),
            "summary": to_value(&scfg),
            "fscore_mode": mode.to_string(),
            "data": data_echo(&args.data),
        }),
        seed: Some(cfg.seed),
        inputs,
        outputs,
        out_dir: args.out.clone(),
    })
}

pub fn ablate(args: &AblateCmd) -> Result<RunResult, CliError> {
    let seed = resolve_seed(&args.model);
    let settings = args
        .setting
        .iter()
        .map(|s| parse::<Setting>(s))
        .collect::<Result<Vec<_>, _>>()?;
    if settings.is_empty() {
        return Err(CliError::Usage("no setting given".into()));
    }
    if settings.iter().any(|s| *s != Setting::Canonical) && args.extras.is_empty() {
        return Err(CliError::Usage(
            "augmented and transfer settings need --extras".into(),
        ));
    }
    let target = load_data(&args.data)?;
    let extras = args
        .extras
        .iter()
        .map(|e| load_data(e))
        .collect::<Result<Vec<_>, _>>()?;
    check_dims(&target, &extras)?;
    let cfg = resolve_config(&args.model, target.feature_dim().unwrap_or(0))?;
    let scfg = summarize_config(&args.summary)?;
    let mode = fscore_mode(&args.summary, &target)?;
    let columns = settings
        .iter()
        .map(|&s| {
            let label = format!("{}-{}", target.name, s.to_string()[..1].to_uppercase());
            make_splits(&target, &extras, s, seed).map(|p| (label, p))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let datasets: Vec<&Dataset> = std::iter::once(&target).chain(&extras).collect();
    let report = ablation_matrix(&columns, Corpus::new(&datasets), &cfg, &scfg, mode)?;
    ensure_dir(&args.out)?;
    let mut outputs = Outputs::default();
    outputs.write_json(&args.out.join("ablation.json"), &report)?;
    let table = render_ablation(&report);
    outputs.write(&args.out.join("ablation.txt"), table.as_bytes())?;
    print!("{table}");
    let mut inputs = vec![args.data.clone()];
    inputs.extend(args.extras.iter().cloned());
    Ok(RunResult {
        config: serde_json::json!({
            "train": to_value(&cfg),
            "summary": to_value(&scfg),
            "fscore_mode": mode.to_string(),
            "settings": args.setting,
        }),
        seed: Some(seed),
        inputs,
        outputs,
        out_dir: args.out.clone(),
    })
}

pub fn sweep_nms(args: &SweepCmd) -> Result<RunResult, CliError> {
    if args.thresholds.is_empty() {
        return Err(CliError::Usage("empty threshold list".into()));
    }
    let dataset = load_data(&args.data)?;
    let params = checkpoint::load(&args.checkpoint)?;
    check_width(&dataset, &params)?;
    let cfg = inference_config(&args.model, &params)?;
    let scfg = summarize_config(&args.summary)?;
    let mode = fscore_mode(&args.summary, &dataset)?;
    let videos: Vec<(&str, &sevs_core::data_model::Video)> = dataset
        .videos
        .iter()
        .map(|v| (dataset.name.as_str(), v))
        .collect();
    let rows = nms_sweep(&params, &videos, &args.thresholds, &cfg, &scfg, mode)?;
    ensure_dir(&args.out)?;
    let mut outputs = Outputs::default();
    let csv = sweep_csv(&rows);
    outputs.write(&args.out.join("sweep.csv"), csv.as_bytes())?;
    print!("{csv}");
    Ok(RunResult {
        config: serde_json::json!({
            "inference": to_value(&cfg),
            "summary": to_value(&scfg),
            "fscore_mode": mode.to_string(),
            "thresholds": args.thresholds,
        }),
        seed: None,
        inputs: vec![args.data.clone(), args.checkpoint.display().to_string()],
        outputs,
        out_dir: args.out.clone(),
    })
}

pub fn plot_data(args: &PlotCmd) -> Result<RunResult, CliError> {
    let dataset = load_data(&args.data)?;
    let video = dataset
        .get(&args.video)
        .ok_or_else(|| CliError::Usage(format!("unknown video id {}", args.video)))?;
    let params = checkpoint::load(&args.checkpoint)?;
    check_width(&dataset, &params)?;
    let cfg = inference_config(&args.model, &params)?;
    let average = forward_full(
        &video.features,
        &params,
        &TrainConfig {
            fusion: FusionMode::Average,
            ..cfg.clone()
        },
    )?;
    let meta = forward_full(
        &video.features,
        &params,
        &TrainConfig {
            fusion: FusionMode::Meta,
            ..cfg.clone()
        },
    )?;
    let mut csv = String::from("frame,gt_score,P_S,P_K,Y_average,Y_meta\n");
    for t in 0..video.frames() {
        let _ = writeln!(
            csv,
            "{t},{},{},{},{},{}",
            video.annotations.gt_scores[t],
            average.p_s.scores[t],
            average.p_k.p_k[t],
            average.y.y[t],
            meta.y.y[t]
        );
    }
    ensure_dir(&args.out)?;
    let mut outputs = Outputs::default();
    outputs.write(
        &args.out.join(format!("plot_{}.csv", args.video)),
        csv.as_bytes(),
    )?;
    Ok(RunResult {
        config: serde_json::json!({ "inference": to_value(&cfg), "video": args.video }),
        seed: None,
        inputs: vec![args.data.clone(), args.checkpoint.display().to_string()],
        outputs,
        out_dir: args.out.clone(),
    })
}
