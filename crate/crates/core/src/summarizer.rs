//! From frame scores to a binary summary: kernel temporal segmentation
//! into shots, per-shot score averaging and 0/1 knapsack selection under
//! the length budget.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data_model::{budget_capacity, FeatureSequence, FrameSpan, Video};
use crate::error::{Error, Result};

pub const DEFAULT_BUDGET: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KtsConfig {
    pub penalty_scale: f64,
    /// `None` means `ceil(T / 10)`.
    pub max_shots: Option<usize>,
}

impl Default for KtsConfig {
    fn default() -> Self {
        KtsConfig {
            penalty_scale: 1.0,
            max_shots: None,
        }
    }
}

pub fn default_max_shots(t: usize) -> usize {
    t.div_ceil(10).clamp(1, t.max(1))
}

/// Half-open shots covering `[0, T)`, described by their interior change points.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotPartition {
    frames: usize,
    change_points: Vec<usize>,
}

impl ShotPartition {
    pub fn new(frames: usize, change_points: Vec<usize>) -> Result<Self> {
        if frames == 0 {
            return Err(Error::InvalidArgument("partition of an empty video".into()));
        }
        let mut prev = 0;
        for &c in &change_points {
            if c <= prev || c >= frames {
                return Err(Error::InvalidArgument(format!(
                    "change points {change_points:?} are not strictly increasing inside (0, {frames})"
                )));
            }
            prev = c;
        }
        Ok(ShotPartition {
            frames,
            change_points,
        })
    }

    pub fn single(frames: usize) -> Result<Self> {
        Self::new(frames, Vec::new())
    }

    pub fn from_spans(frames: usize, spans: &[FrameSpan]) -> Result<Self> {
        let mut cursor = 0;
        for s in spans {
            if s.start != cursor || s.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "spans do not partition [0, {frames})"
                )));
            }
            cursor = s.end;
        }
        if cursor != frames {
            return Err(Error::InvalidArgument(format!(
                "spans end at {cursor}, video has {frames} frames"
            )));
        }
        Self::new(frames, spans.iter().skip(1).map(|s| s.start).collect())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn change_points(&self) -> &[usize] {
        &self.change_points
    }

    pub fn num_shots(&self) -> usize {
        self.change_points.len() + 1
    }

    pub fn shots(&self) -> Vec<FrameSpan> {
        let mut bounds = Vec::with_capacity(self.change_points.len() + 2);
        bounds.push(0);
        bounds.extend_from_slice(&self.change_points);
        bounds.push(self.frames);
        bounds
            .windows(2)
            .map(|w| FrameSpan::new(w[0], w[1]))
            .collect()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.shots().iter().map(FrameSpan::len).collect()
    }
}

/// `g(m) = m (ln(T / max(m, 1)) + 1) * scale`.
pub fn kts_penalty(m: usize, t: usize, scale: f64) -> f64 {
    let m_f = m as f64;
    m_f * ((t as f64 / m_f.max(1.0)).ln() + 1.0) * scale
}

/// Within-segment scatter queries over a linear kernel.
pub struct Scatter {
    diag: Vec<f64>,
    gram: Array2<f64>,
}

impl Scatter {
    pub fn new(x: ArrayView2<f64>) -> Self {
        let t = x.nrows();
        let k = x.dot(&x.t());
        let mut diag = vec![0.0; t + 1];
        for i in 0..t {
            diag[i + 1] = diag[i] + k[[i, i]];
        }
        let mut gram = Array2::zeros((t + 1, t + 1));
        for i in 0..t {
            for j in 0..t {
                gram[[i + 1, j + 1]] =
                    k[[i, j]] + gram[[i, j + 1]] + gram[[i + 1, j]] - gram[[i, j]];
            }
        }
        Scatter { diag, gram }
    }

    /// `sum_{t in [a,b)} K_tt - (1/n) sum_{i,j in [a,b)} K_ij`.
    pub fn cost(&self, a: usize, b: usize) -> f64 {
        let n = (b - a) as f64;
        let block = self.gram[[b, b]] - self.gram[[a, b]] - self.gram[[b, a]] + self.gram[[a, a]];
        (self.diag[b] - self.diag[a] - block / n).max(0.0)
    }
}

/// Objective minimized by [`kts_segment`] for a given partition.
pub fn kts_objective(scatter: &Scatter, partition: &ShotPartition, scale: f64) -> f64 {
    let fit: f64 = partition
        .shots()
        .iter()
        .map(|s| scatter.cost(s.start, s.end))
        .sum();
    fit + kts_penalty(partition.change_points.len(), partition.frames, scale)
}

pub fn kts_segment(
    x: &FeatureSequence,
    max_shots: usize,
    penalty_scale: f64,
) -> Result<ShotPartition> {
    let t = x.frames();
    if t < 2 {
        return Err(Error::InvalidArgument(format!(
            "segmentation needs T >= 2, got {t}"
        )));
    }
    if max_shots == 0 || max_shots > t {
        return Err(Error::InvalidArgument(format!(
            "max_shots must lie in [1, {t}], got {max_shots}"
        )));
    }
    let scatter = Scatter::new(x.data.view());

    // best[j][e]: least scatter of [0, e) cut into j + 1 segments.
    let mut best = vec![vec![f64::INFINITY; t + 1]; max_shots];
    let mut back = vec![vec![0usize; t + 1]; max_shots];
    for e in 1..=t {
        best[0][e] = scatter.cost(0, e);
    }
    for j in 1..max_shots {
        for e in (j + 1)..=t {
            let mut arg = j;
            let mut min = f64::INFINITY;
            for s in j..e {
                let c = best[j - 1][s] + scatter.cost(s, e);
                if c < min {
                    min = c;
                    arg = s;
                }
            }
            best[j][e] = min;
            back[j][e] = arg;
        }
    }

    let mut m_best = 0;
    let mut obj_best = f64::INFINITY;
    for (m, row) in best.iter().enumerate() {
        let obj = row[t] + kts_penalty(m, t, penalty_scale);
        if obj < obj_best {
            obj_best = obj;
            m_best = m;
        }
    }
    let mut cps = Vec::with_capacity(m_best);
    let mut e = t;
    for j in (1..=m_best).rev() {
        e = back[j][e];
        cps.push(e);
    }
    cps.reverse();
    ShotPartition::new(t, cps)
}

/// Mean of `y` over each shot.
pub fn shot_scores(y: &[f64], partition: &ShotPartition) -> Result<Vec<f64>> {
    if y.len() != partition.frames {
        return Err(Error::Shape(format!(
            "{} scores for a partition of {} frames",
            y.len(),
            partition.frames
        )));
    }
    Ok(partition
        .shots()
        .iter()
        .map(|s| y[s.start..s.end].iter().sum::<f64>() / s.len() as f64)
        .collect())
}

#[derive(Clone, Copy)]
struct Cell {
    value: f64,
    length: usize,
    take: bool,
}

/// Exact 0/1 knapsack. Ties on value go to the smaller total length, then
/// to the lexicographically smallest index set.
pub fn knapsack_select(scores: &[f64], lengths: &[usize], capacity: usize) -> Result<Vec<usize>> {
    if scores.len() != lengths.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} lengths",
            scores.len(),
            lengths.len()
        )));
    }
    if lengths.contains(&0) {
        return Err(Error::InvalidArgument(
            "shot lengths must be positive".into(),
        ));
    }
    let n = scores.len();
    let empty = Cell {
        value: 0.0,
        length: 0,
        take: false,
    };
    // table[i][c]: best choice among items i.. with capacity c.
    let mut table = vec![vec![empty; capacity + 1]; n + 1];
    for i in (0..n).rev() {
        for c in 0..=capacity {
            let skip = table[i + 1][c];
            let mut cell = Cell {
                take: false,
                ..skip
            };
            if lengths[i] <= c {
                let rest = table[i + 1][c - lengths[i]];
                let value = scores[i] + rest.value;
                let length = lengths[i] + rest.length;
                if value > skip.value || (value == skip.value && length <= skip.length) {
                    cell = Cell {
                        value,
                        length,
                        take: true,
                    };
                }
            }
            table[i][c] = cell;
        }
    }
    let mut picked = Vec::new();
    let mut c = capacity;
    for (i, row) in table.iter().enumerate().take(n) {
        if row[c].take {
            picked.push(i);
            c -= lengths[i];
        }
    }
    Ok(picked)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub selected: Vec<u8>,
    pub selected_shots: Vec<usize>,
    pub total_length: usize,
}

pub fn make_summary(partition: &ShotPartition, selected: &[usize]) -> Result<Summary> {
    let shots = partition.shots();
    let mut mask = vec![0u8; partition.frames];
    let mut chosen: Vec<usize> = selected.to_vec();
    chosen.sort_unstable();
    chosen.dedup();
    for &i in &chosen {
        let shot = shots.get(i).ok_or_else(|| {
            Error::InvalidArgument(format!("shot {i} out of range ({} shots)", shots.len()))
        })?;
        mask[shot.start..shot.end].fill(1);
    }
    let total_length = mask.iter().map(|&v| v as usize).sum();
    Ok(Summary {
        selected: mask,
        selected_shots: chosen,
        total_length,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub video_id: String,
    pub change_points: Vec<usize>,
    pub shot_scores: Vec<f64>,
    pub selected_shots: Vec<usize>,
    pub selected: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummarizeConfig {
    pub budget: f64,
    pub kts: KtsConfig,
    /// Use annotated shot boundaries when a video provides them.
    pub use_annotated_shots: bool,
}

impl Default for SummarizeConfig {
    fn default() -> Self {
        SummarizeConfig {
            budget: DEFAULT_BUDGET,
            kts: KtsConfig::default(),
            use_annotated_shots: false,
        }
    }
}

pub fn partition_video(video: &Video, cfg: &SummarizeConfig) -> Result<ShotPartition> {
    let t = video.frames();
    if cfg.use_annotated_shots {
        if let Some(spans) = &video.annotations.change_points {
            return ShotPartition::from_spans(t, spans);
        }
    }
    if t < 2 {
        return ShotPartition::single(t);
    }
    let max_shots = cfg
        .kts
        .max_shots
        .unwrap_or_else(|| default_max_shots(t))
        .clamp(1, t);
    kts_segment(&video.features, max_shots, cfg.kts.penalty_scale)
}

/// Shot scoring, selection and expansion for given frame scores.
pub fn summarize_scores(
    video_id: &str,
    y: &[f64],
    partition: &ShotPartition,
    budget: f64,
) -> Result<(Summary, SummaryRecord)> {
    if !(0.0..=1.0).contains(&budget) {
        return Err(Error::InvalidArgument(format!(
            "budget {budget} outside [0, 1]"
        )));
    }
    let scores = shot_scores(y, partition)?;
    let capacity = budget_capacity(budget, partition.frames);
    let picked = knapsack_select(&scores, &partition.lengths(), capacity)?;
    let summary = make_summary(partition, &picked)?;
    let record = SummaryRecord {
        video_id: video_id.to_string(),
        change_points: partition.change_points.clone(),
        shot_scores: scores,
        selected_shots: summary.selected_shots.clone(),
        selected: summary.selected.clone(),
    };
    Ok((summary, record))
}

pub fn summarize_video(
    video: &Video,
    y: &[f64],
    cfg: &SummarizeConfig,
) -> Result<(Summary, SummaryRecord)> {
    let partition = partition_video(video, cfg)?;
    summarize_scores(&video.id, y, &partition, cfg.budget)
}
