//! Datasets on disk and in memory, the synthetic generator, evaluation split
//! plans and per-video training targets.
//!
//! A dataset directory holds `manifest.json` plus, per video, a raw feature
//! file (little-endian `f32`, row-major `T x d`) and a JSON annotation file.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open span of frame indices `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct FrameSpan {
    pub start: usize,
    pub end: usize,
}

impl FrameSpan {
    pub fn new(start: usize, end: usize) -> Self {
        FrameSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn frames(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

impl From<[usize; 2]> for FrameSpan {
    fn from([start, end]: [usize; 2]) -> Self {
        FrameSpan { start, end }
    }
}

impl From<FrameSpan> for [usize; 2] {
    fn from(span: FrameSpan) -> Self {
        [span.start, span.end]
    }
}

/// Per-frame visual features, one row per (downsampled) frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub data: Array2<f64>,
}

impl FeatureSequence {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::Format("feature sequence has no frames".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(
                "feature sequence contains non-finite entries".into(),
            ));
        }
        Ok(FeatureSequence { data })
    }

    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAnnotations {
    pub gt_scores: Vec<f64>,
    pub keyframe_labels: Vec<u8>,
    pub user_summaries: Vec<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub change_points: Option<Vec<FrameSpan>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps_downsampled: Option<f64>,
}

impl VideoAnnotations {
    /// Checks every annotation vector against the frame count `t`.
    pub fn validate(&self, video: &str, t: usize) -> Result<()> {
        let mismatch = |field: &str, actual: usize| Error::LengthMismatch {
            video: video.to_string(),
            field: field.to_string(),
            expected: t,
            actual,
        };
        if self.gt_scores.len() != t {
            return Err(mismatch("gt_scores", self.gt_scores.len()));
        }
        if self.keyframe_labels.len() != t {
            return Err(mismatch("keyframe_labels", self.keyframe_labels.len()));
        }
        if let Some(v) = self
            .gt_scores
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::Format(format!(
                "video {video}: gt score {v} outside [0,1]"
            )));
        }
        if self.keyframe_labels.iter().any(|&l| l > 1) {
            return Err(Error::Format(format!(
                "video {video}: keyframe_labels must be 0/1"
            )));
        }
        if self.user_summaries.is_empty() {
            return Err(Error::Format(format!("video {video}: no user summaries")));
        }
        for (u, row) in self.user_summaries.iter().enumerate() {
            if row.len() != t {
                return Err(mismatch(&format!("user_summaries[{u}]"), row.len()));
            }
            if row.iter().any(|&v| v > 1) {
                return Err(Error::Format(format!(
                    "video {video}: user summary {u} is not binary"
                )));
            }
        }
        if let Some(cps) = &self.change_points {
            validate_partition(cps, t)
                .map_err(|msg| Error::Format(format!("video {video}: change_points {msg}")))?;
        }
        Ok(())
    }
}

/// Checks that `spans` are non-empty, sorted, disjoint and cover `[0, t)`.
pub(crate) fn validate_partition(spans: &[FrameSpan], t: usize) -> std::result::Result<(), String> {
    let mut cursor = 0;
    for span in spans {
        if span.start != cursor {
            return Err(format!("gap or overlap at frame {cursor}"));
        }
        if span.is_empty() {
            return Err(format!("empty interval at frame {}", span.start));
        }
        cursor = span.end;
    }
    if cursor != t {
        return Err(format!("cover [0,{cursor}) instead of [0,{t})"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub id: String,
    pub features: FeatureSequence,
    pub annotations: VideoAnnotations,
}

impl Video {
    pub fn frames(&self) -> usize {
        self.features.frames()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub videos: Vec<Video>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, videos: Vec<Video>) -> Result<Self> {
        let name = name.into();
        let mut seen = HashSet::new();
        let mut dim = None;
        for v in &videos {
            if !seen.insert(v.id.as_str()) {
                return Err(Error::Format(format!(
                    "duplicate video id {} in {name}",
                    v.id
                )));
            }
            match dim {
                None => dim = Some(v.features.dim()),
                Some(d) if d != v.features.dim() => {
                    return Err(Error::Format(format!(
                        "video {} has feature dim {}, dataset uses {d}",
                        v.id,
                        v.features.dim()
                    )))
                }
                _ => {}
            }
            v.annotations.validate(&v.id, v.frames())?;
        }
        Ok(Dataset { name, videos })
    }

    pub fn get(&self, id: &str) -> Option<&Video> {
        self.videos.iter().find(|v| v.id == id)
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.videos.first().map(|v| v.features.dim())
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    #[serde(default)]
    name: Option<String>,
    videos: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    #[serde(rename = "T")]
    frames: usize,
    #[serde(rename = "d")]
    dim: usize,
    features: String,
    annotations: String,
}

/// Loads a dataset from a manifest file or from a directory containing
/// `manifest.json`.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let mut path = manifest_path.as_ref().to_path_buf();
    if path.is_dir() {
        path.push("manifest.json");
    }
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    let name = manifest.name.unwrap_or_else(|| {
        dir.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    });

    let mut videos = Vec::with_capacity(manifest.videos.len());
    for entry in manifest.videos {
        let features = read_features(&dir.join(&entry.features), &entry)?;
        let ann_path = dir.join(&entry.annotations);
        let ann_text = fs::read_to_string(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
        let annotations: VideoAnnotations = serde_json::from_str(&ann_text)
            .map_err(|e| Error::json(ann_path.display().to_string(), e))?;
        annotations.validate(&entry.id, entry.frames)?;
        videos.push(Video {
            id: entry.id,
            features,
            annotations,
        });
    }
    Dataset::new(name, videos)
}

fn read_features(path: &Path, entry: &ManifestEntry) -> Result<FeatureSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = entry.frames * entry.dim * 4;
    if bytes.len() != expected {
        return Err(Error::LengthMismatch {
            video: entry.id.clone(),
            field: "feature bytes".into(),
            expected,
            actual: bytes.len(),
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let data = Array2::from_shape_vec((entry.frames, entry.dim), values)
        .map_err(|e| Error::Shape(e.to_string()))?;
    FeatureSequence::new(data).map_err(|e| Error::Format(format!("video {}: {e}", entry.id)))
}

/// Writes `dataset` into `dir` in the manifest format read by
/// [`load_dataset`]. Features are stored as `f32`.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(dataset.videos.len());
    for (i, video) in dataset.videos.iter().enumerate() {
        let feat_name = format!("{i:04}_features.f32");
        let ann_name = format!("{i:04}_annotations.json");
        let mut bytes = Vec::with_capacity(video.features.data.len() * 4);
        for v in video.features.data.iter() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        let feat_path = dir.join(&feat_name);
        fs::write(&feat_path, bytes).map_err(|e| Error::io(&feat_path, e))?;
        let ann_path = dir.join(&ann_name);
        let text = serde_json::to_string(&video.annotations)
            .map_err(|e| Error::json(ann_path.display().to_string(), e))?;
        fs::write(&ann_path, text).map_err(|e| Error::io(&ann_path, e))?;
        entries.push(ManifestEntry {
            id: video.id.clone(),
            frames: video.frames(),
            dim: video.features.dim(),
            features: feat_name,
            annotations: ann_name,
        });
    }
    let manifest = Manifest {
        name: Some(dataset.name.clone()),
        videos: entries,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json("manifest", e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Knobs of the synthetic generator beyond the required arguments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub users: usize,
    /// Standard deviation of per-frame feature noise around a scene prototype.
    pub feature_noise: f64,
    /// Extra shift along a dataset-wide direction for interest scenes.
    pub interest_shift: f64,
    /// Standard deviation of per-user noise added to ground-truth scores.
    pub user_noise: f64,
    pub budget: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            users: 3,
            feature_noise: 0.1,
            interest_shift: 1.5,
            user_noise: 0.1,
            budget: 0.15,
        }
    }
}

/// Latent structure the generator used for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLatent {
    pub scenes: Vec<FrameSpan>,
    pub interest: Vec<FrameSpan>,
}

/// `n_videos` synthetic videos with piecewise-constant scenes.
pub fn generate_synthetic(
    n_videos: usize,
    t_range: (usize, usize),
    dim: usize,
    seed: u64,
) -> Result<Dataset> {
    generate_synthetic_with_latent(n_videos, t_range, dim, seed, SyntheticConfig::default())
        .map(|(d, _)| d)
}

/// Like [`generate_synthetic`], also returning each video's scene layout.
///
/// Every video alternates background and interest scenes. Interest scenes
/// together fill at most the summary budget, and every background scene is
/// longer than the budget, so a perfect scorer can select exactly the
/// interest frames.
pub fn generate_synthetic_with_latent(
    n_videos: usize,
    (t_min, t_max): (usize, usize),
    dim: usize,
    seed: u64,
    cfg: SyntheticConfig,
) -> Result<(Dataset, Vec<SyntheticLatent>)> {
    if t_min < 16 || t_max > 512 || t_min > t_max {
        return Err(Error::InvalidArgument(format!(
            "frame range [{t_min},{t_max}] must lie within [16,512]"
        )));
    }
    if dim < 2 {
        return Err(Error::InvalidArgument(
            "feature dimension must be >= 2".into(),
        ));
    }
    if cfg.users == 0 {
        return Err(Error::InvalidArgument("need at least one user".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let interest_dir: Vec<f64> = (0..dim).map(|_| unit.sample(&mut rng)).collect();

    let mut videos = Vec::with_capacity(n_videos);
    let mut latents = Vec::with_capacity(n_videos);
    for v in 0..n_videos {
        let t = rng.random_range(t_min..=t_max);
        let latent = synthetic_layout(t, cfg.budget, &mut rng);

        let mut data = Array2::zeros((t, dim));
        let mut gt = vec![0.0; t];
        for scene in &latent.scenes {
            let is_interest = latent.interest.contains(scene);
            let mut proto: Vec<f64> = (0..dim).map(|_| unit.sample(&mut rng)).collect();
            if is_interest {
                for (p, u) in proto.iter_mut().zip(&interest_dir) {
                    *p += cfg.interest_shift * u;
                }
            }
            for f in scene.frames() {
                for (j, p) in proto.iter().enumerate() {
                    let x = p + cfg.feature_noise * unit.sample(&mut rng);
                    // Round through f32 so the on-disk format is lossless.
                    data[[f, j]] = x as f32 as f64;
                }
                gt[f] = if is_interest {
                    0.7 + 0.25 * rng.random::<f64>()
                } else {
                    0.3 * rng.random::<f64>()
                };
            }
        }
        let keyframe_labels: Vec<u8> = gt.iter().map(|&s| u8::from(s >= 0.5)).collect();
        let capacity = budget_capacity(cfg.budget, t).max(1);
        let user_summaries = (0..cfg.users)
            .map(|_| {
                let noisy: Vec<f64> = gt
                    .iter()
                    .map(|s| s + cfg.user_noise * unit.sample(&mut rng))
                    .collect();
                let mut picked: Vec<usize> = (0..t).filter(|&i| noisy[i] >= 0.5).collect();
                picked.sort_by(|&a, &b| noisy[b].total_cmp(&noisy[a]).then(a.cmp(&b)));
                picked.truncate(capacity);
                let mut row = vec![0u8; t];
                for i in picked {
                    row[i] = 1;
                }
                row
            })
            .collect();

        videos.push(Video {
            id: format!("video_{v:03}"),
            features: FeatureSequence::new(data)?,
            annotations: VideoAnnotations {
                gt_scores: gt,
                keyframe_labels,
                user_summaries,
                change_points: None,
                fps_downsampled: Some(2.0),
            },
        });
        latents.push(latent);
    }
    Ok((Dataset::new("synthetic", videos)?, latents))
}

fn synthetic_layout(t: usize, budget: f64, rng: &mut ChaCha8Rng) -> SyntheticLatent {
    let capacity = budget_capacity(budget, t).max(1);
    let default_shots = t.div_ceil(10).clamp(1, t);
    // Background + interest scenes should fit the default shot count.
    let max_interest = ((default_shots.saturating_sub(1)) / 2)
        .clamp(1, 3)
        .min(capacity);
    let n_interest = rng.random_range(1..=max_interest);
    let per = capacity / n_interest;
    let interest_lens: Vec<usize> = (0..n_interest)
        .map(|_| rng.random_range((per / 2).max(1)..=per))
        .collect();

    let background_total = t - interest_lens.iter().sum::<usize>();
    let pieces = n_interest + 1;
    let min_bg = if background_total >= pieces * (capacity + 1) {
        capacity + 1
    } else {
        1
    };
    let spare = background_total - pieces * min_bg;
    let mut cuts: Vec<usize> = (0..pieces - 1)
        .map(|_| rng.random_range(0..=spare))
        .collect();
    cuts.sort_unstable();
    let mut bg_lens = Vec::with_capacity(pieces);
    let mut prev = 0;
    for c in cuts.into_iter().chain(std::iter::once(spare)) {
        bg_lens.push(min_bg + c - prev);
        prev = c;
    }

    let mut scenes = Vec::new();
    let mut interest = Vec::new();
    let mut cursor = 0;
    for (i, bg) in bg_lens.iter().enumerate() {
        scenes.push(FrameSpan::new(cursor, cursor + bg));
        cursor += bg;
        if let Some(len) = interest_lens.get(i) {
            let span = FrameSpan::new(cursor, cursor + len);
            scenes.push(span);
            interest.push(span);
            cursor += len;
        }
    }
    debug_assert_eq!(cursor, t);
    SyntheticLatent { scenes, interest }
}

/// Number of frames a summary may use: `floor(budget * t)`.
pub fn budget_capacity(budget: f64, t: usize) -> usize {
    // Small slack so that e.g. 0.15 * 100 is not floored to 14.
    (budget * t as f64 + 1e-9).floor().max(0.0) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Canonical,
    Augmented,
    Transfer,
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(Setting::Canonical),
            "augmented" => Ok(Setting::Augmented),
            "transfer" => Ok(Setting::Transfer),
            other => Err(Error::InvalidArgument(format!("unknown setting {other}"))),
        }
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Setting::Canonical => "canonical",
            Setting::Augmented => "augmented",
            Setting::Transfer => "transfer",
        })
    }
}

/// A video addressed by dataset name and id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VideoKey {
    pub dataset: String,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<VideoKey>,
    pub test: Vec<VideoKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub setting: Setting,
    pub splits: Vec<Split>,
    pub seed: u64,
}

pub const NUM_SPLITS: usize = 5;

/// Builds the five train/test splits for an evaluation setting.
///
/// Canonical: the target videos are shuffled and dealt into five folds;
/// fold `i` is the test set of split `i` and the rest is its training set.
/// With fewer than five target videos some test sets are empty.
pub fn make_splits(
    target: &Dataset,
    extras: &[Dataset],
    setting: Setting,
    seed: u64,
) -> Result<SplitPlan> {
    if target.is_empty() {
        return Err(Error::InvalidArgument("target dataset is empty".into()));
    }
    let key = |d: &Dataset, v: &Video| VideoKey {
        dataset: d.name.clone(),
        id: v.id.clone(),
    };
    let extra_keys: Vec<VideoKey> = extras
        .iter()
        .flat_map(|d| d.videos.iter().map(move |v| key(d, v)))
        .collect();
    if setting != Setting::Canonical && extra_keys.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{setting} setting needs at least one extra video"
        )));
    }
    let target_keys: Vec<VideoKey> = target.videos.iter().map(|v| key(target, v)).collect();

    let splits = match setting {
        Setting::Transfer => (0..NUM_SPLITS)
            .map(|_| Split {
                train: extra_keys.clone(),
                test: target_keys.clone(),
            })
            .collect(),
        Setting::Canonical | Setting::Augmented => {
            let mut order: Vec<usize> = (0..target_keys.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut fold_of = vec![0; target_keys.len()];
            for (pos, &idx) in order.iter().enumerate() {
                fold_of[idx] = pos % NUM_SPLITS;
            }
            (0..NUM_SPLITS)
                .map(|fold| {
                    let mut test: Vec<(usize, VideoKey)> = Vec::new();
                    let mut train = Vec::new();
                    for (idx, k) in target_keys.iter().enumerate() {
                        if fold_of[idx] == fold {
                            test.push((order.iter().position(|&o| o == idx).unwrap(), k.clone()));
                        } else {
                            train.push(k.clone());
                        }
                    }
                    test.sort_by_key(|(pos, _)| *pos);
                    if setting == Setting::Augmented {
                        train.extend(extra_keys.iter().cloned());
                    }
                    Split {
                        train,
                        test: test.into_iter().map(|(_, k)| k).collect(),
                    }
                })
                .collect()
        }
    };
    Ok(SplitPlan {
        setting,
        splits,
        seed,
    })
}

/// Targets derived from one video's annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTargets {
    pub gt_segments: Vec<FrameSpan>,
    /// `[keyframe, non-keyframe]` frequencies.
    pub class_freq: [f64; 2],
    /// Median-frequency weights, same order as `class_freq`.
    pub class_weights: [f64; 2],
    /// Set when one class never occurs; its weight is then zero.
    pub degenerate: bool,
}

/// Ground-truth interest segments (maximal runs of keyframe labels) and
/// median-frequency class weights.
pub fn derive_targets(ann: &VideoAnnotations) -> Result<TrainingTargets> {
    let labels = &ann.keyframe_labels;
    if labels.is_empty() {
        return Err(Error::InvalidArgument("empty keyframe label vector".into()));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Format("keyframe labels must be 0/1".into()));
    }
    let mut gt_segments = Vec::new();
    let mut run_start = None;
    for (i, &l) in labels.iter().chain(std::iter::once(&0)).enumerate() {
        match (l, run_start) {
            (1, None) => run_start = Some(i),
            (0, Some(s)) => {
                gt_segments.push(FrameSpan::new(s, i));
                run_start = None;
            }
            _ => {}
        }
    }
    let t = labels.len() as f64;
    let positives = labels.iter().filter(|&&l| l == 1).count() as f64;
    let class_freq = [positives / t, (t - positives) / t];
    // Median of two values is their midpoint.
    let median = 0.5 * (class_freq[0] + class_freq[1]);
    let class_weights = class_freq.map(|f| if f > 0.0 { median / f } else { 0.0 });
    Ok(TrainingTargets {
        gt_segments,
        class_freq,
        class_weights,
        degenerate: class_freq.contains(&0.0),
    })
}
