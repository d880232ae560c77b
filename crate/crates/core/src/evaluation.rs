//! Summary quality metrics and the experiment harness: split evaluation,
//! the four-row ablation grid and the NMS threshold sweep.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data_model::{
    budget_capacity, Dataset, FeatureSequence, Setting, SplitPlan, Video, VideoKey,
};
use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::losses::LossToggles;
use crate::model::ModelParams;
use crate::summarizer::{summarize_video, SummarizeConfig, SummaryRecord};
use crate::training::{forward_full, train, TrainConfig};

/// How per-user F-scores are aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FscoreMode {
    Average,
    Maximum,
}

impl FscoreMode {
    /// Maximum for SumMe-style datasets, average otherwise.
    pub fn default_for(dataset: &str) -> Self {
        if dataset.to_ascii_lowercase().contains("summe") {
            FscoreMode::Maximum
        } else {
            FscoreMode::Average
        }
    }
}

impl std::str::FromStr for FscoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" | "avg" => Ok(FscoreMode::Average),
            "maximum" | "max" => Ok(FscoreMode::Maximum),
            other => Err(Error::InvalidArgument(format!(
                "unknown F-score mode {other}"
            ))),
        }
    }
}

impl std::fmt::Display for FscoreMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FscoreMode::Average => "average",
            FscoreMode::Maximum => "maximum",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fscore {
    /// Percentage in `[0, 100]`.
    pub value: f64,
    /// The machine summary selected no frame.
    pub empty_machine: bool,
}

fn pair_fscore(machine: &[u8], user: &[u8]) -> f64 {
    let overlap = machine
        .iter()
        .zip(user)
        .filter(|(&m, &u)| m == 1 && u == 1)
        .count() as f64;
    let m = machine.iter().filter(|&&v| v == 1).count() as f64;
    let u = user.iter().filter(|&&v| v == 1).count() as f64;
    if overlap == 0.0 {
        return 0.0;
    }
    let p = overlap / m;
    let r = overlap / u;
    2.0 * p * r / (p + r)
}

pub fn fscore(machine: &[u8], users: &[Vec<u8>], mode: FscoreMode) -> Result<Fscore> {
    if users.is_empty() {
        return Err(Error::InvalidArgument("no user summaries".into()));
    }
    if let Some(u) = users.iter().find(|u| u.len() != machine.len()) {
        return Err(Error::Shape(format!(
            "machine summary has {} frames, user summary has {}",
            machine.len(),
            u.len()
        )));
    }
    let per_user: Vec<f64> = users.iter().map(|u| pair_fscore(machine, u)).collect();
    let agg = match mode {
        FscoreMode::Average => per_user.iter().sum::<f64>() / per_user.len() as f64,
        FscoreMode::Maximum => per_user.iter().cloned().fold(0.0, f64::max),
    };
    Ok(Fscore {
        value: 100.0 * agg,
        empty_machine: !machine.contains(&1),
    })
}

/// Mean pairwise cosine dissimilarity of the selected frames; `None` with
/// fewer than two selected frames.
pub fn diversity(features: &FeatureSequence, selected: &[u8]) -> Result<Option<f64>> {
    if selected.len() != features.frames() {
        return Err(Error::Shape(format!(
            "selection has {} frames, features have {}",
            selected.len(),
            features.frames()
        )));
    }
    let rows: Vec<usize> = (0..selected.len()).filter(|&t| selected[t] == 1).collect();
    if rows.len() < 2 {
        return Ok(None);
    }
    let x = &features.data;
    let norms: Vec<f64> = rows
        .iter()
        .map(|&t| x.row(t).dot(&x.row(t)).sqrt())
        .collect();
    let mut total = 0.0;
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in rows.iter().enumerate() {
            if a == b {
                continue;
            }
            total += if norms[a] == 0.0 || norms[b] == 0.0 {
                1.0
            } else {
                1.0 - (x.row(i).dot(&x.row(j)) / (norms[a] * norms[b])).clamp(-1.0, 1.0)
            };
        }
    }
    let pairs = rows.len() * (rows.len() - 1);
    Ok(Some(total / pairs as f64))
}

/// Looks videos up by key across several datasets.
#[derive(Debug, Clone, Copy)]
pub struct Corpus<'a> {
    pub datasets: &'a [&'a Dataset],
}

impl<'a> Corpus<'a> {
    pub fn new(datasets: &'a [&'a Dataset]) -> Self {
        Corpus { datasets }
    }

    pub fn video(&self, key: &VideoKey) -> Result<&'a Video> {
        self.datasets
            .iter()
            .find(|d| d.name == key.dataset)
            .and_then(|d| d.get(&key.id))
            .ok_or_else(|| {
                Error::InvalidArgument(format!("unknown video {}/{}", key.dataset, key.id))
            })
    }

    pub fn videos(&self, keys: &[VideoKey]) -> Result<Vec<&'a Video>> {
        keys.iter().map(|k| self.video(k)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEval {
    pub dataset: String,
    pub video_id: String,
    pub fscore: f64,
    pub empty_summary: bool,
    pub diversity: Option<f64>,
    pub summary_length: usize,
    pub capacity: usize,
}

pub fn evaluate_video(
    dataset: &str,
    video: &Video,
    params: &ModelParams,
    cfg: &TrainConfig,
    scfg: &SummarizeConfig,
    mode: FscoreMode,
) -> Result<(VideoEval, SummaryRecord)> {
    let out = forward_full(&video.features, params, cfg)?;
    let (summary, record) = summarize_video(video, &out.y.y, scfg)?;
    let f = fscore(&summary.selected, &video.annotations.user_summaries, mode)?;
    Ok((
        VideoEval {
            dataset: dataset.to_string(),
            video_id: video.id.clone(),
            fscore: f.value,
            empty_summary: f.empty_machine,
            diversity: diversity(&video.features, &summary.selected)?,
            summary_length: summary.total_length,
            capacity: budget_capacity(scfg.budget, video.frames()),
        },
        record,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEval {
    pub split: usize,
    /// Mean over test videos; `None` for an empty test set.
    pub fscore: Option<f64>,
    pub videos: Vec<VideoEval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setting: Setting,
    pub mode: FscoreMode,
    pub fusion: FusionMode,
    pub budget: f64,
    pub nms_threshold: f64,
    pub splits: Vec<SplitEval>,
    /// Mean of the non-empty split scores.
    pub mean_fscore: f64,
    /// Mean over videos whose summary has at least two frames.
    pub diversity: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Evaluates `models[i]` on the test set of split `i`.
pub fn evaluate_split_plan(
    models: &[Option<ModelParams>],
    plan: &SplitPlan,
    corpus: Corpus<'_>,
    cfg: &TrainConfig,
    scfg: &SummarizeConfig,
    mode: FscoreMode,
) -> Result<EvalReport> {
    if models.len() != plan.splits.len() {
        return Err(Error::InvalidArgument(format!(
            "{} models for {} splits",
            models.len(),
            plan.splits.len()
        )));
    }
    let mut splits = Vec::with_capacity(plan.splits.len());
    for (i, (split, model)) in plan.splits.iter().zip(models).enumerate() {
        let mut videos = Vec::with_capacity(split.test.len());
        if !split.test.is_empty() {
            let params = model
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument(format!("no model for split {i}")))?;
            for key in &split.test {
                let video = corpus.video(key)?;
                videos.push(evaluate_video(&key.dataset, video, params, cfg, scfg, mode)?.0);
            }
        }
        splits.push(SplitEval {
            split: i,
            fscore: mean(videos.iter().map(|v| v.fscore)),
            videos,
        });
    }
    let mean_fscore = mean(splits.iter().filter_map(|s| s.fscore))
        .ok_or_else(|| Error::InvalidArgument("every test split is empty".into()))?;
    let diversity = mean(
        splits
            .iter()
            .flat_map(|s| s.videos.iter().filter_map(|v| v.diversity)),
    );
    Ok(EvalReport {
        setting: plan.setting,
        mode,
        fusion: cfg.fusion,
        budget: scfg.budget,
        nms_threshold: cfg.nms_threshold,
        splits,
        mean_fscore,
        diversity,
    })
}

/// Trains one model per split with a non-empty test set, or the splits in
/// `only` when given.
pub fn train_split_plan(
    plan: &SplitPlan,
    corpus: Corpus<'_>,
    cfg: &TrainConfig,
    only: Option<&[usize]>,
) -> Result<Vec<Option<ModelParams>>> {
    plan.splits
        .iter()
        .enumerate()
        .map(|(i, split)| {
            let wanted = only.is_none_or(|o| o.contains(&i));
            if !wanted || split.test.is_empty() {
                return Ok(None);
            }
            let videos = corpus.videos(&split.train)?;
            train(&videos, cfg).map(|(p, _)| Some(p))
        })
        .collect()
}

pub fn render_report(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "setting {}  fusion {}  F-score mode {}  budget {}  nms {}",
        report.setting, report.fusion, report.mode, report.budget, report.nms_threshold
    );
    let _ = writeln!(s, "{:<8} {:>8} {:>10}", "split", "videos", "F (%)");
    for sp in &report.splits {
        let f = sp.fscore.map_or("-".to_string(), |f| format!("{f:.1}"));
        let _ = writeln!(s, "{:<8} {:>8} {:>10}", sp.split, sp.videos.len(), f);
    }
    let _ = writeln!(s, "{:<8} {:>8} {:>10.1}", "mean", "", report.mean_fscore);
    let div = report
        .diversity
        .map_or("-".to_string(), |d| format!("{d:.3}"));
    let _ = writeln!(s, "diversity {div}");
    s
}

/// One row of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: &'static str,
    pub fusion: FusionMode,
    pub toggles: LossToggles,
}

pub const ABLATION_ROWS: [AblationRow; 4] = [
    AblationRow {
        label: "interest segments",
        fusion: FusionMode::SegmentsOnly,
        toggles: LossToggles {
            cls: true,
            reg: true,
            pre: false,
            mse: false,
        },
    },
    AblationRow {
        label: "frame probabilities",
        fusion: FusionMode::FramesOnly,
        toggles: LossToggles {
            cls: false,
            reg: false,
            pre: true,
            mse: false,
        },
    },
    AblationRow {
        label: "both + averaging",
        fusion: FusionMode::Average,
        toggles: LossToggles {
            cls: true,
            reg: true,
            pre: true,
            mse: false,
        },
    },
    AblationRow {
        label: "both + meta learner",
        fusion: FusionMode::Meta,
        toggles: LossToggles::ALL,
    },
];

impl AblationRow {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            fusion: self.fusion,
            loss_toggles: self.toggles,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub columns: Vec<String>,
    pub rows: Vec<String>,
    /// `reports[row][column]`.
    pub reports: Vec<Vec<EvalReport>>,
}

impl AblationReport {
    pub fn grid(&self) -> Vec<Vec<f64>> {
        self.reports
            .iter()
            .map(|r| r.iter().map(|e| e.mean_fscore).collect())
            .collect()
    }
}

/// Runs the four ablation rows for every `(column label, plan)` pair.
pub fn ablation_matrix(
    columns: &[(String, SplitPlan)],
    corpus: Corpus<'_>,
    base: &TrainConfig,
    scfg: &SummarizeConfig,
    mode: FscoreMode,
) -> Result<AblationReport> {
    if columns.is_empty() {
        return Err(Error::InvalidArgument("no ablation columns".into()));
    }
    let mut reports = Vec::with_capacity(ABLATION_ROWS.len());
    for row in &ABLATION_ROWS {
        let cfg = row.apply(base);
        let mut line = Vec::with_capacity(columns.len());
        for (_, plan) in columns {
            let models = train_split_plan(plan, corpus, &cfg, None)?;
            line.push(evaluate_split_plan(
                &models, plan, corpus, &cfg, scfg, mode,
            )?);
        }
        reports.push(line);
    }
    Ok(AblationReport {
        columns: columns.iter().map(|(c, _)| c.clone()).collect(),
        rows: ABLATION_ROWS.iter().map(|r| r.label.to_string()).collect(),
        reports,
    })
}

pub fn render_ablation(report: &AblationReport) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<22}", "");
    for c in &report.columns {
        let _ = write!(s, " {c:>12}");
    }
    s.push('\n');
    for (label, row) in report.rows.iter().zip(report.grid()) {
        let _ = write!(s, "{label:<22}");
        for f in row {
            let _ = write!(s, " {f:>12.1}");
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub fscore: f64,
    pub seconds: f64,
}

/// Re-runs inference and summarization at each NMS threshold.
pub fn nms_sweep(
    params: &ModelParams,
    videos: &[(&str, &Video)],
    thresholds: &[f64],
    cfg: &TrainConfig,
    scfg: &SummarizeConfig,
    mode: FscoreMode,
) -> Result<Vec<SweepRow>> {
    if thresholds.is_empty() {
        return Err(Error::InvalidArgument("empty threshold list".into()));
    }
    if videos.is_empty() {
        return Err(Error::InvalidArgument("no videos to sweep over".into()));
    }
    thresholds
        .iter()
        .map(|&threshold| {
            let cfg = TrainConfig {
                nms_threshold: threshold,
                ..cfg.clone()
            };
            let start = Instant::now();
            let scores = videos
                .iter()
                .map(|(ds, v)| {
                    evaluate_video(ds, v, params, &cfg, scfg, mode).map(|(e, _)| e.fscore)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepRow {
                threshold,
                fscore: mean(scores.into_iter()).unwrap_or(0.0),
                seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("threshold,fscore,seconds\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.threshold, r.fscore, r.seconds);
    }
    s
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;

    use super::*;

    fn range_mask(t: usize, a: usize, b: usize) -> Vec<u8> {
        (0..t).map(|i| u8::from(i >= a && i < b)).collect()
    }

    #[test]
    fn fscore_cases() {
        let m = range_mask(100, 0, 10);
        assert_eq!(
            fscore(&m, std::slice::from_ref(&m), FscoreMode::Average)
                .unwrap()
                .value,
            100.0
        );
        let u = range_mask(100, 5, 15);
        assert!(
            (fscore(&m, std::slice::from_ref(&u), FscoreMode::Average)
                .unwrap()
                .value
                - 50.0)
                .abs()
                < 1e-12
        );
        let users = [u, m.clone()];
        assert!((fscore(&m, &users, FscoreMode::Average).unwrap().value - 75.0).abs() < 1e-12);
        assert_eq!(
            fscore(&m, &users, FscoreMode::Maximum).unwrap().value,
            100.0
        );
        let empty = fscore(&[0; 100], &[m], FscoreMode::Average).unwrap();
        assert_eq!(empty.value, 0.0);
        assert!(empty.empty_machine);
        assert!(fscore(&[1, 0], &[vec![1]], FscoreMode::Average).is_err());
    }

    #[test]
    fn diversity_cases() {
        let same = FeatureSequence::new(Array2::from_elem((3, 2), 1.5)).unwrap();
        assert_eq!(diversity(&same, &[1, 1, 1]).unwrap(), Some(0.0));
        let orth = FeatureSequence::new(ndarray::array![[1.0, 0.0], [0.0, 2.0]]).unwrap();
        assert_eq!(diversity(&orth, &[1, 1]).unwrap(), Some(1.0));
        let three =
            FeatureSequence::new(ndarray::array![[1.0, 0.0], [2.0, 0.0], [0.0, 1.0]]).unwrap();
        let d = diversity(&three, &[1, 1, 1]).unwrap().unwrap();
        assert!((d - 2.0 / 3.0).abs() < 1e-12);
        let zero = FeatureSequence::new(ndarray::array![[0.0, 0.0], [1.0, 1.0]]).unwrap();
        assert_eq!(diversity(&zero, &[1, 1]).unwrap(), Some(1.0));
        assert_eq!(diversity(&three, &[0, 1, 0]).unwrap(), None);
    }

    #[test]
    fn mode_defaults_and_parsing() {
        assert_eq!(FscoreMode::default_for("SumMe"), FscoreMode::Maximum);
        assert_eq!(FscoreMode::default_for("tvsum"), FscoreMode::Average);
        assert_eq!("max".parse::<FscoreMode>().unwrap(), FscoreMode::Maximum);
        assert!("median".parse::<FscoreMode>().is_err());
    }

    #[test]
    fn ablation_rows_match_their_roles() {
        assert_eq!(ABLATION_ROWS[0].fusion, FusionMode::SegmentsOnly);
        assert_eq!(
            ABLATION_ROWS[3].apply(&TrainConfig::default()),
            TrainConfig::default()
        );
    }

    #[test]
    fn sweep_csv_layout() {
        let csv = sweep_csv(&[SweepRow {
            threshold: 0.5,
            fscore: 40.0,
            seconds: 0.25,
        }]);
        assert_eq!(csv, "threshold,fscore,seconds\n0.5,40,0.25\n");
    }
}
