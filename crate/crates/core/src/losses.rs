//! The four training losses and their unweighted sum.
//!
//! Each loss has a value function and a matching gradient function. Focal
//! gradients are taken with respect to the two pre-softmax logits, so the
//! softmax Jacobian is folded in here rather than in the heads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interest_head::{AnchorClass, OffsetPair, POSITIVE};

/// Probabilities are floored at this value inside logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

/// Regression parameters per proposal (center and length offsets).
pub const OFFSETS_PER_PROPOSAL: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossToggles {
    pub cls: bool,
    pub reg: bool,
    pub pre: bool,
    pub mse: bool,
}

impl LossToggles {
    pub const ALL: LossToggles = LossToggles {
        cls: true,
        reg: true,
        pre: true,
        mse: true,
    };

    pub const NONE: LossToggles = LossToggles {
        cls: false,
        reg: false,
        pre: false,
        mse: false,
    };

    /// Parses a comma-separated subset of `cls,reg,pre,mse` (or `all`).
    pub fn parse(spec: &str) -> Result<Self> {
        let mut t = LossToggles::NONE;
        for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match part {
                "all" => t = LossToggles::ALL,
                "cls" => t.cls = true,
                "reg" => t.reg = true,
                "pre" => t.pre = true,
                "mse" => t.mse = true,
                other => return Err(Error::InvalidArgument(format!("unknown loss term {other}"))),
            }
        }
        Ok(t)
    }
}

impl Default for LossToggles {
    fn default() -> Self {
        LossToggles::ALL
    }
}

impl std::fmt::Display for LossToggles {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names: Vec<&str> = [
            (self.cls, "cls"),
            (self.reg, "reg"),
            (self.pre, "pre"),
            (self.mse, "mse"),
        ]
        .iter()
        .filter_map(|(on, n)| on.then_some(*n))
        .collect();
        f.write_str(&names.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub gamma: f64,
    pub toggles: LossToggles,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 1.0,
            toggles: LossToggles::ALL,
        }
    }
}

/// A scalar loss plus a flag for inputs where it is undefined (reported as 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub reg: f64,
    pub pre: f64,
    /// Raw squared error; this is what enters `total`.
    pub mse: f64,
    /// `mse / T`, for comparing videos of different length.
    pub mse_per_frame: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.cls, self.reg, self.pre, self.mse, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Component-wise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        if items.is_empty() {
            return LossBreakdown::default();
        }
        let n = items.len() as f64;
        let sum = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        LossBreakdown {
            cls: sum(|b| b.cls),
            reg: sum(|b| b.reg),
            pre: sum(|b| b.pre),
            mse: sum(|b| b.mse),
            mse_per_frame: sum(|b| b.mse_per_frame),
            total: sum(|b| b.total),
        }
    }
}

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// `-(1 - p)^gamma * ln(max(p, LOG_FLOOR))` for the true-class probability.
pub fn focal_term(p: f64, gamma: f64) -> f64 {
    -(1.0 - p).max(0.0).powf(gamma) * p.max(LOG_FLOOR).ln()
}

/// Derivative of [`focal_term`] with respect to the true-class logit of a
/// two-class softmax. The other logit gets the negation.
fn focal_term_logit_grad(p: f64, gamma: f64) -> f64 {
    let q = (1.0 - p).max(0.0);
    let log_term = gamma * q.powf(gamma) * p * p.max(LOG_FLOOR).ln();
    let inv_term = if p > LOG_FLOOR {
        q.powf(gamma + 1.0)
    } else {
        0.0
    };
    log_term - inv_term
}

fn anchor_class_index(class: AnchorClass) -> Option<usize> {
    match class {
        AnchorClass::Positive => Some(POSITIVE),
        AnchorClass::Negative => Some(1 - POSITIVE),
        AnchorClass::Ignore => None,
    }
}

/// Focal classification loss averaged over the non-ignored anchors.
pub fn focal_cls_loss(probs: &[[f64; 2]], classes: &[AnchorClass], gamma: f64) -> LossValue {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, &class) in probs.iter().zip(classes) {
        if let Some(c) = anchor_class_index(class) {
            sum += focal_term(p[c], gamma);
            count += 1;
        }
    }
    if count == 0 {
        return LossValue {
            value: 0.0,
            degenerate: true,
        };
    }
    LossValue {
        value: sum / count as f64,
        degenerate: false,
    }
}

/// Gradient of [`focal_cls_loss`] with respect to each anchor's two logits.
pub fn focal_cls_grad(probs: &[[f64; 2]], classes: &[AnchorClass], gamma: f64) -> Vec<[f64; 2]> {
    let count = classes
        .iter()
        .filter(|&&c| c != AnchorClass::Ignore)
        .count();
    let mut grads = vec![[0.0; 2]; probs.len()];
    if count == 0 {
        return grads;
    }
    let scale = 1.0 / count as f64;
    for ((g, p), &class) in grads.iter_mut().zip(probs).zip(classes) {
        if let Some(c) = anchor_class_index(class) {
            let d = scale * focal_term_logit_grad(p[c], gamma);
            g[c] = d;
            g[1 - c] = -d;
        }
    }
    grads
}

/// Confidence-weighted smooth-L1 over positive anchors. `weights` are the
/// positives' true-class probabilities, treated as constants.
pub fn regression_loss(pred: &[OffsetPair], target: &[OffsetPair], weights: &[f64]) -> LossValue {
    let n = pred.len();
    if n == 0 {
        return LossValue {
            value: 0.0,
            degenerate: true,
        };
    }
    let q = OFFSETS_PER_PROPOSAL as f64;
    let sum: f64 = pred
        .iter()
        .zip(target)
        .zip(weights)
        .map(|((p, t), w)| w * (smooth_l1(p.dc - t.dc) + smooth_l1(p.dl - t.dl)) / q)
        .sum();
    LossValue {
        value: sum / n as f64,
        degenerate: false,
    }
}

pub fn regression_grad(
    pred: &[OffsetPair],
    target: &[OffsetPair],
    weights: &[f64],
) -> Vec<OffsetPair> {
    let n = pred.len().max(1) as f64;
    let q = OFFSETS_PER_PROPOSAL as f64;
    pred.iter()
        .zip(target)
        .zip(weights)
        .map(|((p, t), w)| OffsetPair {
            dc: w / (n * q) * smooth_l1_grad(p.dc - t.dc),
            dl: w / (n * q) * smooth_l1_grad(p.dl - t.dl),
        })
        .collect()
}

fn frame_class_index(label: u8) -> usize {
    use crate::frame_head::KEYFRAME;
    if label == 1 {
        KEYFRAME
    } else {
        1 - KEYFRAME
    }
}

/// `class_weights` is `[keyframe, non-keyframe]`.
fn frame_weight(label: u8, class_weights: [f64; 2]) -> f64 {
    if label == 1 {
        class_weights[0]
    } else {
        class_weights[1]
    }
}

fn check_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: lengths {a} and {b} differ")));
    }
    Ok(())
}

/// Median-frequency weighted focal loss averaged over all frames.
pub fn weighted_focal_loss(
    probs: &[[f64; 2]],
    labels: &[u8],
    class_weights: [f64; 2],
    gamma: f64,
) -> Result<f64> {
    check_len("weighted focal loss", probs.len(), labels.len())?;
    if probs.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, &l)| frame_weight(l, class_weights) * focal_term(p[frame_class_index(l)], gamma))
        .sum();
    Ok(sum / probs.len() as f64)
}

pub fn weighted_focal_grad(
    probs: &[[f64; 2]],
    labels: &[u8],
    class_weights: [f64; 2],
    gamma: f64,
) -> Result<Vec<[f64; 2]>> {
    check_len("weighted focal loss", probs.len(), labels.len())?;
    let scale = 1.0 / probs.len().max(1) as f64;
    Ok(probs
        .iter()
        .zip(labels)
        .map(|(p, &l)| {
            let c = frame_class_index(l);
            let d = scale * frame_weight(l, class_weights) * focal_term_logit_grad(p[c], gamma);
            let mut g = [0.0; 2];
            g[c] = d;
            g[1 - c] = -d;
            g
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseValue {
    /// `||gt - y||^2`.
    pub raw: f64,
    /// `raw / T`.
    pub per_frame: f64,
}

pub fn mse_loss(y: &[f64], gt: &[f64]) -> Result<MseValue> {
    check_len("mse", y.len(), gt.len())?;
    let raw: f64 = y.iter().zip(gt).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(MseValue {
        raw,
        per_frame: if y.is_empty() {
            0.0
        } else {
            raw / y.len() as f64
        },
    })
}

/// Gradient of the raw squared error with respect to `y`.
pub fn mse_grad(y: &[f64], gt: &[f64]) -> Result<Vec<f64>> {
    check_len("mse", y.len(), gt.len())?;
    Ok(y.iter().zip(gt).map(|(a, b)| 2.0 * (a - b)).collect())
}

/// Everything the four loss terms read.
#[derive(Debug, Clone, Copy)]
pub struct JointLossInputs<'a> {
    pub anchor_probs: &'a [[f64; 2]],
    pub anchor_classes: &'a [AnchorClass],
    /// Predicted offsets of the positive anchors.
    pub positive_pred: &'a [OffsetPair],
    pub positive_target: &'a [OffsetPair],
    /// Detached true-class probabilities of the positive anchors.
    pub positive_weights: &'a [f64],
    pub frame_probs: &'a [[f64; 2]],
    pub frame_labels: &'a [u8],
    pub class_weights: [f64; 2],
    pub fused: &'a [f64],
    pub gt_scores: &'a [f64],
}

/// Unit-weighted sum of the enabled terms; disabled terms report 0.
pub fn joint_loss(inputs: &JointLossInputs<'_>, config: &LossConfig) -> Result<LossBreakdown> {
    let t = config.toggles;
    let mut b = LossBreakdown::default();
    if t.cls {
        b.cls = focal_cls_loss(inputs.anchor_probs, inputs.anchor_classes, config.gamma).value;
    }
    if t.reg {
        b.reg = regression_loss(
            inputs.positive_pred,
            inputs.positive_target,
            inputs.positive_weights,
        )
        .value;
    }
    if t.pre {
        b.pre = weighted_focal_loss(
            inputs.frame_probs,
            inputs.frame_labels,
            inputs.class_weights,
            config.gamma,
        )?;
    }
    if t.mse {
        let m = mse_loss(inputs.fused, inputs.gt_scores)?;
        b.mse = m.raw;
        b.mse_per_frame = m.per_frame;
    }
    b.total = b.cls + b.reg + b.pre + b.mse;
    Ok(b)
}
