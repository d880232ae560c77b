//! Shot-level temporal interest detection.
//!
//! Every frame `t` hosts one anchor per scale `λ`, spanning
//! `[t - λ/2, t + λ/2)`. Anchors are labelled by their best tIoU with the
//! ground-truth interest segments, scored by a two-class classifier and
//! refined by a (center, log-length) offset regressor. Decoded proposals go
//! through greedy NMS and are flattened into the per-frame vector `P_S`.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data_model::FrameSpan;
use crate::encoder::PooledPyramid;
use crate::error::{Error, Result};
use crate::model::InterestHeadParams;
use crate::numeric::{
    affine, affine_backward, layer_norm_rows, layer_norm_rows_backward, softmax, tanh_backward,
    LayerNormCache,
};

/// Logit/probability column of the interest class; column 1 is background.
pub const POSITIVE: usize = 0;

/// Positive assignment requires tIoU strictly above this.
pub const POSITIVE_TIOU: f64 = 0.6;
/// Negative assignment requires tIoU strictly below this.
pub const NEGATIVE_TIOU: f64 = 0.3;

/// Half-open real interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Self {
        Interval { start, end }
    }

    pub fn from_center(center: f64, length: f64) -> Self {
        Interval {
            start: center - 0.5 * length,
            end: center + 0.5 * length,
        }
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    pub fn clip(&self, lo: f64, hi: f64) -> Option<Interval> {
        let clipped = Interval::new(self.start.max(lo), self.end.min(hi));
        (clipped.length() > 0.0).then_some(clipped)
    }

    /// Whether frame `t` (occupying `[t, t+1)`) has its midpoint inside.
    pub fn covers_frame(&self, t: usize) -> bool {
        let mid = t as f64 + 0.5;
        self.start <= mid && mid < self.end
    }
}

impl From<FrameSpan> for Interval {
    fn from(span: FrameSpan) -> Self {
        Interval::new(span.start as f64, span.end as f64)
    }
}

/// Temporal intersection over union of two positive-length intervals.
pub fn tiou(a: Interval, b: Interval) -> Result<f64> {
    if a.length() <= 0.0 || b.length() <= 0.0 {
        return Err(Error::InvalidArgument(
            "tIoU of a zero-length interval".into(),
        ));
    }
    Ok(tiou_unchecked(a, b))
}

fn tiou_unchecked(a: Interval, b: Interval) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.length() + b.length() - inter;
    inter / union
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    /// Position in the `t * K + k` ordering.
    pub index: usize,
    pub t: usize,
    pub scale_index: usize,
    pub lambda: usize,
    pub interval: Interval,
}

/// `K * T` anchors ordered by frame, then scale. Intervals are not clipped.
pub fn generate_anchors(frames: usize, scales: &[usize]) -> Vec<Anchor> {
    let k = scales.len();
    let mut anchors = Vec::with_capacity(frames * k);
    for t in 0..frames {
        for (scale_index, &lambda) in scales.iter().enumerate() {
            anchors.push(Anchor {
                index: t * k + scale_index,
                t,
                scale_index,
                lambda,
                interval: Interval::from_center(t as f64, lambda as f64),
            });
        }
    }
    anchors
}

/// Center and log-length offsets of a proposal relative to its anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetPair {
    pub dc: f64,
    pub dl: f64,
}

pub fn encode_offsets(anchor: Interval, gt: Interval) -> OffsetPair {
    let (c, l) = (anchor.center(), anchor.length());
    OffsetPair {
        dc: (gt.center() - c) / l,
        dl: (gt.length() / l).ln(),
    }
}

/// Applies offsets to an anchor without clipping.
pub fn apply_offsets(anchor: Interval, off: OffsetPair) -> Interval {
    let (c, l) = (anchor.center(), anchor.length());
    Interval::from_center(c + off.dc * l, l * off.dl.exp())
}

/// Applies offsets and clips to `[0, frames)`; `None` when nothing remains.
pub fn decode_offsets(anchor: Interval, off: OffsetPair, frames: usize) -> Option<Interval> {
    let raw = apply_offsets(anchor, off);
    if !raw.start.is_finite() || !raw.end.is_finite() {
        return None;
    }
    raw.clip(0.0, frames as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorClass {
    Positive,
    Negative,
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorLabels {
    pub classes: Vec<AnchorClass>,
    /// Best-matching ground-truth segment, for positive anchors.
    pub matched: Vec<Option<usize>>,
    /// Regression targets, for positive anchors.
    pub targets: Vec<Option<OffsetPair>>,
}

impl AnchorLabels {
    pub fn count(&self, class: AnchorClass) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }

    pub fn positives(&self) -> impl Iterator<Item = (usize, OffsetPair)> + '_ {
        self.targets
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.map(|t| (i, t)))
    }
}

pub fn assign_labels(anchors: &[Anchor], gt_segments: &[FrameSpan]) -> AnchorLabels {
    let gts: Vec<Interval> = gt_segments
        .iter()
        .filter(|s| !s.is_empty())
        .map(|&s| s.into())
        .collect();
    let mut labels = AnchorLabels {
        classes: Vec::with_capacity(anchors.len()),
        matched: Vec::with_capacity(anchors.len()),
        targets: Vec::with_capacity(anchors.len()),
    };
    for anchor in anchors {
        let best = gts
            .iter()
            .enumerate()
            .map(|(i, &g)| (i, tiou_unchecked(anchor.interval, g)))
            .fold(None, |acc: Option<(usize, f64)>, cur| match acc {
                Some(a) if a.1 >= cur.1 => Some(a),
                _ => Some(cur),
            });
        let (class, matched, target) = match best {
            Some((i, iou)) if iou > POSITIVE_TIOU => (
                AnchorClass::Positive,
                Some(i),
                Some(encode_offsets(anchor.interval, gts[i])),
            ),
            Some((_, iou)) if iou >= NEGATIVE_TIOU => (AnchorClass::Ignore, None, None),
            _ => (AnchorClass::Negative, None, None),
        };
        labels.classes.push(class);
        labels.matched.push(matched);
        labels.targets.push(target);
    }
    labels
}

/// Raw outputs of both sibling branches, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    /// `T x 2K`: columns `2k, 2k+1` are the (interest, background) logits of
    /// the scale-`k` anchor at that frame.
    pub cls_logits: Array2<f64>,
    /// `T x 2K`: columns `2k, 2k+1` are `(dc, dl)`.
    pub offsets: Array2<f64>,
    pub num_scales: usize,
}

impl HeadOutput {
    pub fn num_anchors(&self) -> usize {
        self.cls_logits.nrows() * self.num_scales
    }

    fn cell(&self, anchor: usize) -> (usize, usize) {
        (anchor / self.num_scales, 2 * (anchor % self.num_scales))
    }

    pub fn logits(&self, anchor: usize) -> [f64; 2] {
        let (t, c) = self.cell(anchor);
        [self.cls_logits[[t, c]], self.cls_logits[[t, c + 1]]]
    }

    pub fn probs(&self, anchor: usize) -> [f64; 2] {
        let p = softmax(&self.logits(anchor));
        [p[0], p[1]]
    }

    pub fn all_probs(&self) -> Vec<[f64; 2]> {
        (0..self.num_anchors()).map(|a| self.probs(a)).collect()
    }

    pub fn offset(&self, anchor: usize) -> OffsetPair {
        let (t, c) = self.cell(anchor);
        OffsetPair {
            dc: self.offsets[[t, c]],
            dl: self.offsets[[t, c + 1]],
        }
    }
}

/// Scatters per-anchor 2-vectors into a `T x 2K` matrix.
pub fn anchor_grid(per_anchor: &[[f64; 2]], num_scales: usize) -> Array2<f64> {
    let frames = per_anchor.len() / num_scales;
    let mut grid = Array2::zeros((frames, 2 * num_scales));
    for (a, v) in per_anchor.iter().enumerate() {
        let (t, c) = (a / num_scales, 2 * (a % num_scales));
        grid[[t, c]] = v[0];
        grid[[t, c + 1]] = v[1];
    }
    grid
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    concat: Array2<f64>,
    fc1_act: Array2<f64>,
    ln: LayerNormCache,
    fc1_out: Array2<f64>,
    fc2_out: Array2<f64>,
}

/// Fc-1 (affine, tanh, layer norm) on the concatenated pyramid, Fc-2
/// (affine), then the classification and regression siblings.
pub fn head_forward(
    pyramid: &PooledPyramid,
    params: &InterestHeadParams,
    ln_eps: f64,
) -> Result<(HeadOutput, HeadCache)> {
    let concat = pyramid.concat();
    if concat.ncols() != params.w1.shape()[0] {
        return Err(Error::Shape(format!(
            "pyramid has {} channels, Fc-1 expects {}",
            concat.ncols(),
            params.w1.shape()[0]
        )));
    }
    let fc1_act = affine(concat.view(), params.w1.mat(), params.b1.vec())?.mapv(f64::tanh);
    let (fc1_out, ln) = layer_norm_rows(
        fc1_act.view(),
        params.ln_gain.vec(),
        params.ln_bias.vec(),
        ln_eps,
    );
    let fc2_out = affine(fc1_out.view(), params.w2.mat(), params.b2.vec())?;
    let cls_logits = affine(fc2_out.view(), params.w_cls.mat(), params.b_cls.vec())?;
    let offsets = affine(fc2_out.view(), params.w_reg.mat(), params.b_reg.vec())?;
    let num_scales = pyramid.levels.len();
    Ok((
        HeadOutput {
            cls_logits,
            offsets,
            num_scales,
        },
        HeadCache {
            concat,
            fc1_act,
            ln,
            fc1_out,
            fc2_out,
        },
    ))
}

/// Accumulates head gradients and returns the gradient on the concatenated
/// pyramid.
pub fn head_backward(
    cache: &HeadCache,
    d_cls: ArrayView2<f64>,
    d_offsets: ArrayView2<f64>,
    params: &mut InterestHeadParams,
) -> Array2<f64> {
    let (d_fc2_a, d_wc, d_bc) = affine_backward(cache.fc2_out.view(), params.w_cls.mat(), d_cls);
    let (d_fc2_b, d_wr, d_br) =
        affine_backward(cache.fc2_out.view(), params.w_reg.mat(), d_offsets);
    params.w_cls.grad_mat_mut().scaled_add(1.0, &d_wc);
    params.b_cls.grad_vec_mut().scaled_add(1.0, &d_bc);
    params.w_reg.grad_mat_mut().scaled_add(1.0, &d_wr);
    params.b_reg.grad_vec_mut().scaled_add(1.0, &d_br);
    let d_fc2 = d_fc2_a + d_fc2_b;

    let (d_fc1_out, d_w2, d_b2) =
        affine_backward(cache.fc1_out.view(), params.w2.mat(), d_fc2.view());
    params.w2.grad_mat_mut().scaled_add(1.0, &d_w2);
    params.b2.grad_vec_mut().scaled_add(1.0, &d_b2);

    let (d_fc1_act, d_gain, d_bias) =
        layer_norm_rows_backward(&cache.ln, params.ln_gain.vec(), d_fc1_out.view());
    params.ln_gain.grad_vec_mut().scaled_add(1.0, &d_gain);
    params.ln_bias.grad_vec_mut().scaled_add(1.0, &d_bias);

    let d_pre = tanh_backward(cache.fc1_act.view(), d_fc1_act.view());
    let (d_concat, d_w1, d_b1) =
        affine_backward(cache.concat.view(), params.w1.mat(), d_pre.view());
    params.w1.grad_mat_mut().scaled_add(1.0, &d_w1);
    params.b1.grad_vec_mut().scaled_add(1.0, &d_b1);
    d_concat
}

/// A decoded, clipped candidate segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub interval: Interval,
    /// Interest-class probability.
    pub score: f64,
    /// Index of the source anchor.
    pub anchor: usize,
}

/// Decodes every anchor whose interest probability reaches `min_score`.
pub fn build_proposals(
    anchors: &[Anchor],
    output: &HeadOutput,
    frames: usize,
    min_score: f64,
) -> Vec<Proposal> {
    anchors
        .iter()
        .filter_map(|a| {
            let score = output.probs(a.index)[POSITIVE];
            if score < min_score {
                return None;
            }
            decode_offsets(a.interval, output.offset(a.index), frames).map(|interval| Proposal {
                interval,
                score,
                anchor: a.index,
            })
        })
        .collect()
}

/// Higher score first; ties by earlier start, then smaller anchor index.
pub fn proposal_order(a: &Proposal, b: &Proposal) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.interval.start.total_cmp(&b.interval.start))
        .then(a.anchor.cmp(&b.anchor))
}

/// Greedy non-maximum suppression: keep the best remaining proposal, drop
/// everything overlapping it with tIoU above `threshold`, repeat.
pub fn nms(proposals: &[Proposal], threshold: f64) -> Vec<Proposal> {
    let mut sorted = proposals.to_vec();
    sorted.sort_by(proposal_order);
    let mut kept: Vec<Proposal> = Vec::new();
    for cand in sorted {
        if kept
            .iter()
            .all(|k| tiou_unchecked(k.interval, cand.interval) <= threshold)
        {
            kept.push(cand);
        }
    }
    kept
}

/// Per-frame segment scores `P_S` and the disjoint segments behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentScoreVector {
    pub scores: Vec<f64>,
    /// Maximal runs of frames claimed by one proposal, with that proposal's
    /// normalized score.
    pub segments: Vec<(FrameSpan, f64)>,
}

/// Resolves overlaps (the highest-scoring proposal covering a frame claims
/// it), then min-max normalizes over all frames. If every frame ends up with
/// the same value, covered frames get 1 and uncovered frames 0.
pub fn segment_scores(kept: &[Proposal], frames: usize) -> SegmentScoreVector {
    let mut order = kept.to_vec();
    order.sort_by(proposal_order);
    let mut owner: Vec<Option<usize>> = vec![None; frames];
    for (rank, p) in order.iter().enumerate() {
        let lo = p.interval.start.max(0.0).floor() as usize;
        let hi = (p.interval.end.max(0.0).ceil() as usize).min(frames);
        for (t, slot) in owner.iter_mut().enumerate().take(hi).skip(lo) {
            if slot.is_none() && p.interval.covers_frame(t) {
                *slot = Some(rank);
            }
        }
    }
    let raw: Vec<f64> = owner
        .iter()
        .map(|o| o.map_or(0.0, |r| order[r].score))
        .collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scores: Vec<f64> = if frames > 0 && hi > lo {
        raw.iter()
            .map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect()
    } else {
        owner
            .iter()
            .map(|o| if o.is_some() { 1.0 } else { 0.0 })
            .collect()
    };

    let mut segments = Vec::new();
    let mut t = 0;
    while t < frames {
        match owner[t] {
            Some(r) => {
                let start = t;
                while t < frames && owner[t] == Some(r) {
                    t += 1;
                }
                segments.push((FrameSpan::new(start, t), scores[start]));
            }
            None => t += 1,
        }
    }
    SegmentScoreVector { scores, segments }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DEFAULT_SCALES;

    fn iv(a: f64, b: f64) -> Interval {
        Interval::new(a, b)
    }

    fn prop(a: f64, b: f64, score: f64, anchor: usize) -> Proposal {
        Proposal {
            interval: iv(a, b),
            score,
            anchor,
        }
    }

    #[test]
    fn anchor_count_and_spans() {
        let anchors = generate_anchors(8, &DEFAULT_SCALES);
        assert_eq!(anchors.len(), 32);
        let a = anchors.iter().find(|a| a.t == 3 && a.lambda == 4).unwrap();
        assert_eq!(a.interval, iv(1.0, 5.0));
        let a = anchors.iter().find(|a| a.t == 0 && a.lambda == 8).unwrap();
        assert_eq!(a.interval, iv(-4.0, 4.0));
        assert!(anchors.iter().enumerate().all(|(i, a)| a.index == i));
    }

    #[test]
    fn tiou_cases() {
        assert_eq!(tiou(iv(0.0, 4.0), iv(0.0, 4.0)).unwrap(), 1.0);
        assert_eq!(tiou(iv(0.0, 4.0), iv(4.0, 8.0)).unwrap(), 0.0);
        assert!((tiou(iv(0.0, 4.0), iv(2.0, 6.0)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(tiou(iv(1.0, 1.0), iv(0.0, 2.0)).is_err());
    }

    fn single_anchor(interval: Interval) -> Anchor {
        Anchor {
            index: 0,
            t: 0,
            scale_index: 0,
            lambda: interval.length() as usize,
            interval,
        }
    }

    #[test]
    fn assignment_bands() {
        let exact = assign_labels(&[single_anchor(iv(1.0, 5.0))], &[FrameSpan::new(1, 5)]);
        assert_eq!(exact.classes, vec![AnchorClass::Positive]);
        assert_eq!(exact.targets[0], Some(OffsetPair { dc: 0.0, dl: 0.0 }));

        let far = assign_labels(&[single_anchor(iv(0.0, 4.0))], &[FrameSpan::new(10, 14)]);
        assert_eq!(far.classes, vec![AnchorClass::Negative]);

        let third = assign_labels(&[single_anchor(iv(0.0, 4.0))], &[FrameSpan::new(2, 6)]);
        assert_eq!(third.classes, vec![AnchorClass::Ignore]);

        let none = assign_labels(&generate_anchors(5, &DEFAULT_SCALES), &[]);
        assert_eq!(none.count(AnchorClass::Negative), 20);
    }

    #[test]
    fn offsets_worked_example() {
        let anchor = Interval::from_center(10.0, 8.0);
        let gt = Interval::from_center(12.0, 16.0);
        let off = encode_offsets(anchor, gt);
        assert!((off.dc - 0.25).abs() < 1e-15);
        assert!((off.dl - 2f64.ln()).abs() < 1e-15);
        assert_eq!(decode_offsets(anchor, off, 100), Some(iv(4.0, 20.0)));
        assert_eq!(
            decode_offsets(anchor, OffsetPair { dc: 0.0, dl: 0.0 }, 100),
            Some(anchor)
        );
        assert_eq!(decode_offsets(anchor, off, 12), Some(iv(4.0, 12.0)));
        assert_eq!(
            decode_offsets(
                Interval::from_center(-10.0, 4.0),
                OffsetPair { dc: 0.0, dl: 0.0 },
                12
            ),
            None
        );
    }

    #[test]
    fn nms_worked_example() {
        let kept = nms(
            &[
                prop(0.0, 10.0, 0.9, 0),
                prop(2.0, 12.0, 0.8, 1),
                prop(20.0, 30.0, 0.7, 2),
            ],
            0.5,
        );
        assert_eq!(
            kept.iter().map(|p| p.anchor).collect::<Vec<_>>(),
            vec![0, 2]
        );
        assert!(nms(&[], 0.5).is_empty());
        assert_eq!(nms(&[prop(1.0, 2.0, 0.3, 7)], 0.5).len(), 1);
    }

    #[test]
    fn nms_tie_rule() {
        let kept = nms(
            &[
                prop(3.0, 6.0, 0.5, 4),
                prop(1.0, 4.0, 0.5, 9),
                prop(1.0, 4.0, 0.5, 2),
            ],
            0.3,
        );
        assert_eq!(kept[0].anchor, 2);
    }

    #[test]
    fn segment_scores_worked_example() {
        let p = segment_scores(&[prop(0.0, 4.0, 0.8, 0), prop(2.0, 6.0, 0.6, 1)], 8);
        let expected = [1.0, 1.0, 1.0, 1.0, 0.75, 0.75, 0.0, 0.0];
        assert!(
            p.scores
                .iter()
                .zip(expected)
                .all(|(a, b)| (a - b).abs() < 1e-12),
            "{:?}",
            p.scores
        );
        assert_eq!(p.segments.len(), 2);
        assert_eq!(p.segments[0], (FrameSpan::new(0, 4), 1.0));
        assert_eq!(p.segments[1].0, FrameSpan::new(4, 6));
        assert!((p.segments[1].1 - 0.75).abs() < 1e-12);

        assert_eq!(segment_scores(&[], 5).scores, vec![0.0; 5]);
        let all = segment_scores(&[prop(0.0, 6.0, 0.3, 0)], 6);
        assert_eq!(all.scores, vec![1.0; 6]);
    }

    #[test]
    fn head_output_indexing() {
        let cls = Array2::from_shape_fn((3, 4), |(t, c)| (10 * t + c) as f64);
        let out = HeadOutput {
            cls_logits: cls.clone(),
            offsets: cls,
            num_scales: 2,
        };
        assert_eq!(out.num_anchors(), 6);
        assert_eq!(out.logits(3), [12.0, 13.0]);
        assert_eq!(out.offset(4), OffsetPair { dc: 20.0, dl: 21.0 });
        let grid = anchor_grid(&(0..6).map(|a| out.logits(a)).collect::<Vec<_>>(), 2);
        assert_eq!(grid, out.cls_logits);
    }
}
