//! Joint training of encoder, both heads and the meta-learner.
//!
//! One optimizer step per video (batch size 1). The fused scores are fit on
//! *detached* copies of `P_S` and `P_K`, and the regression loss weights each
//! positive anchor by a detached copy of its classification probability; see
//! [`Detached`].

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::{derive_targets, FeatureSequence, Video};
use crate::encoder::{
    encode_backward, encode_forward, pool_pyramid, pyramid_backward, EncoderCache,
};
use crate::error::{Error, Result};
use crate::frame_head::{frame_backward, frame_forward, FrameCache, KeyframeProbVector, KEYFRAME};
use crate::fusion::{
    fuse_average, meta_backward, meta_forward, FinalScoreVector, FusionMode, MetaCache,
};
use crate::interest_head::{
    anchor_grid, assign_labels, build_proposals, generate_anchors, head_backward, head_forward,
    nms, segment_scores, Anchor, AnchorClass, AnchorLabels, HeadCache, HeadOutput, OffsetPair,
    Proposal, SegmentScoreVector, POSITIVE,
};
use crate::losses::{
    focal_cls_grad, joint_loss, mse_grad, regression_grad, weighted_focal_grad, JointLossInputs,
    LossBreakdown, LossConfig, LossToggles,
};
use crate::model::{ModelConfig, ModelParams};
use crate::numeric::{adam_step, grad_check, AdamConfig, AdamState, GradCheckReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub gamma: f64,
    pub seed: u64,
    pub nms_threshold: f64,
    /// Proposals with a lower interest probability are dropped before NMS;
    /// 0 keeps every proposal.
    pub min_proposal_score: f64,
    pub fusion: FusionMode,
    pub loss_toggles: LossToggles,
    /// Let the fitting loss reach the frame head through `P_K`.
    pub fusion_grad_flow: bool,
    pub checkpoint_every: Option<usize>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            lr: 5e-5,
            weight_decay: 1e-5,
            gamma: 1.0,
            seed: 0,
            nms_threshold: 0.5,
            min_proposal_score: 0.05,
            fusion: FusionMode::Meta,
            loss_toggles: LossToggles::ALL,
            fusion_grad_flow: false,
            checkpoint_every: None,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::InvalidArgument(
                "learning rate must be positive".into(),
            ));
        }
        if self.weight_decay < 0.0 || self.gamma < 0.0 {
            return Err(Error::InvalidArgument(
                "weight decay and gamma must be >= 0".into(),
            ));
        }
        if !(self.nms_threshold > 0.0 && self.nms_threshold < 1.0) {
            return Err(Error::InvalidArgument(
                "NMS threshold must lie in (0,1)".into(),
            ));
        }
        self.model.validate()
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            gamma: self.gamma,
            toggles: self.loss_toggles,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Per-video supervision, derived once before training.
#[derive(Debug, Clone)]
pub struct VideoTargets {
    pub video_id: String,
    pub anchors: Vec<Anchor>,
    pub labels: AnchorLabels,
    pub frame_labels: Vec<u8>,
    pub class_weights: [f64; 2],
    pub gt_scores: Vec<f64>,
}

pub fn prepare_targets(video: &Video, scales: &[usize]) -> Result<VideoTargets> {
    let targets = derive_targets(&video.annotations)?;
    let anchors = generate_anchors(video.frames(), scales);
    let labels = assign_labels(&anchors, &targets.gt_segments);
    Ok(VideoTargets {
        video_id: video.id.clone(),
        anchors,
        labels,
        frame_labels: video.annotations.keyframe_labels.clone(),
        class_weights: targets.class_weights,
        gt_scores: video.annotations.gt_scores.clone(),
    })
}

/// Everything one inference pass produces.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub p_s: SegmentScoreVector,
    pub p_k: KeyframeProbVector,
    pub y: FinalScoreVector,
    /// Proposals that survived NMS, best first.
    pub proposals: Vec<Proposal>,
    pub head: HeadOutput,
}

struct Caches {
    encoder: EncoderCache,
    head: HeadCache,
    frame: FrameCache,
}

/// Quantities that enter the loss as constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Detached {
    /// True-class probability of each positive anchor, in
    /// [`AnchorLabels::positives`] order.
    pub positive_weights: Vec<f64>,
    pub p_s: Vec<f64>,
    pub p_k: Vec<f64>,
}

fn fuse(
    mode: FusionMode,
    p_s: &[f64],
    p_k: &[f64],
    params: &ModelParams,
) -> Result<(FinalScoreVector, Option<MetaCache>)> {
    match mode {
        FusionMode::SegmentsOnly => Ok((FinalScoreVector { y: p_s.to_vec() }, None)),
        FusionMode::FramesOnly => Ok((FinalScoreVector { y: p_k.to_vec() }, None)),
        FusionMode::Average => Ok((fuse_average(p_s, p_k)?, None)),
        FusionMode::Meta => {
            let (y, cache) = meta_forward(p_s, p_k, &params.meta)?;
            Ok((y, Some(cache)))
        }
    }
}

/// Encoder, both heads and the proposal pipeline; everything before fusion.
struct BaseForward {
    p_s: SegmentScoreVector,
    p_k: KeyframeProbVector,
    proposals: Vec<Proposal>,
    head: HeadOutput,
    caches: Caches,
}

fn forward_base(
    x: &FeatureSequence,
    params: &ModelParams,
    cfg: &TrainConfig,
) -> Result<BaseForward> {
    if x.dim() != params.config.feature_dim {
        return Err(Error::Shape(format!(
            "features have dim {}, model expects {}",
            x.dim(),
            params.config.feature_dim
        )));
    }
    let frames = x.frames();
    let (encoded, encoder) = encode_forward(x.data.view(), &params.encoder)?;
    let pyramid = pool_pyramid(&encoded, &params.config.scales)?;
    let (head, head_cache) = head_forward(&pyramid, &params.interest, params.config.ln_eps)?;
    let (p_k, frame_cache) = frame_forward(&pyramid, &encoded, &params.frame)?;

    let anchors = generate_anchors(frames, &params.config.scales);
    let candidates = build_proposals(&anchors, &head, frames, cfg.min_proposal_score);
    let proposals = nms(&candidates, cfg.nms_threshold);
    let p_s = segment_scores(&proposals, frames);
    Ok(BaseForward {
        p_s,
        p_k,
        proposals,
        head,
        caches: Caches {
            encoder,
            head: head_cache,
            frame: frame_cache,
        },
    })
}

/// Deterministic inference: encoder, both heads, NMS and fusion.
pub fn forward_full(
    x: &FeatureSequence,
    params: &ModelParams,
    cfg: &TrainConfig,
) -> Result<ForwardOutput> {
    let base = forward_base(x, params, cfg)?;
    let (y, _) = fuse(cfg.fusion, &base.p_s.scores, &base.p_k.p_k, params)?;
    Ok(ForwardOutput {
        p_s: base.p_s,
        p_k: base.p_k,
        y,
        proposals: base.proposals,
        head: base.head,
    })
}

struct Pass {
    base: BaseForward,
    y: FinalScoreVector,
    meta: Option<MetaCache>,
    anchor_probs: Vec<[f64; 2]>,
    positive_pred: Vec<OffsetPair>,
    positive_target: Vec<OffsetPair>,
    breakdown: LossBreakdown,
    detached: Detached,
}

fn run_pass(
    params: &ModelParams,
    x: &FeatureSequence,
    targets: &VideoTargets,
    cfg: &TrainConfig,
    detached: Option<&Detached>,
) -> Result<Pass> {
    let base = forward_base(x, params, cfg)?;
    let anchor_probs = base.head.all_probs();
    let detached = match detached {
        Some(d) => d.clone(),
        None => Detached {
            positive_weights: targets
                .labels
                .positives()
                .map(|(a, _)| anchor_probs[a][POSITIVE])
                .collect(),
            p_s: base.p_s.scores.clone(),
            p_k: base.p_k.p_k.clone(),
        },
    };
    let pk_in: &[f64] = if cfg.fusion_grad_flow {
        &base.p_k.p_k
    } else {
        &detached.p_k
    };
    let (y, meta) = fuse(cfg.fusion, &detached.p_s, pk_in, params)?;

    let (positive_pred, positive_target): (Vec<_>, Vec<_>) = targets
        .labels
        .positives()
        .map(|(a, target)| (base.head.offset(a), target))
        .unzip();
    let inputs = JointLossInputs {
        anchor_probs: &anchor_probs,
        anchor_classes: &targets.labels.classes,
        positive_pred: &positive_pred,
        positive_target: &positive_target,
        positive_weights: &detached.positive_weights,
        frame_probs: &base.p_k.full_probs,
        frame_labels: &targets.frame_labels,
        class_weights: targets.class_weights,
        fused: &y.y,
        gt_scores: &targets.gt_scores,
    };
    let breakdown = joint_loss(&inputs, &cfg.loss_config())?;
    Ok(Pass {
        base,
        y,
        meta,
        anchor_probs,
        positive_pred,
        positive_target,
        breakdown,
        detached,
    })
}

fn backward(
    pass: &Pass,
    params: &mut ModelParams,
    targets: &VideoTargets,
    cfg: &TrainConfig,
) -> Result<()> {
    let toggles = cfg.loss_toggles;
    let k = params.config.num_scales();
    let frames = targets.frame_labels.len();

    let d_cls = if toggles.cls {
        anchor_grid(
            &focal_cls_grad(&pass.anchor_probs, &targets.labels.classes, cfg.gamma),
            k,
        )
    } else {
        Array2::zeros((frames, 2 * k))
    };

    let mut d_off = Array2::zeros((frames, 2 * k));
    if toggles.reg {
        let grads = regression_grad(
            &pass.positive_pred,
            &pass.positive_target,
            &pass.detached.positive_weights,
        );
        for ((a, _), g) in targets.labels.positives().zip(grads) {
            let (t, c) = (a / k, 2 * (a % k));
            d_off[[t, c]] += g.dc;
            d_off[[t, c + 1]] += g.dl;
        }
    }

    let mut d_frame = Array2::zeros((frames, 2));
    if toggles.pre {
        let grads = weighted_focal_grad(
            &pass.base.p_k.full_probs,
            &targets.frame_labels,
            targets.class_weights,
            cfg.gamma,
        )?;
        for (t, g) in grads.iter().enumerate() {
            d_frame[[t, 0]] = g[0];
            d_frame[[t, 1]] = g[1];
        }
    }

    if toggles.mse {
        let d_y = mse_grad(&pass.y.y, &targets.gt_scores)?;
        let d_pk: Option<Array1<f64>> = match cfg.fusion {
            FusionMode::Meta => {
                let cache = pass.meta.as_ref().expect("meta fusion keeps its cache");
                let d_inputs = meta_backward(cache, ArrayView1::from(&d_y), &mut params.meta);
                cfg.fusion_grad_flow.then(|| d_inputs.column(1).to_owned())
            }
            FusionMode::Average => cfg
                .fusion_grad_flow
                .then(|| d_y.iter().map(|g| 0.5 * g).collect()),
            FusionMode::FramesOnly => cfg.fusion_grad_flow.then(|| Array1::from(d_y.clone())),
            FusionMode::SegmentsOnly => None,
        };
        if let Some(d_pk) = d_pk {
            for (t, g) in d_pk.iter().enumerate() {
                let p = pass.base.p_k.full_probs[t][KEYFRAME];
                let local = g * p * (1.0 - p);
                d_frame[[t, KEYFRAME]] += local;
                d_frame[[t, 1 - KEYFRAME]] -= local;
            }
        }
    }

    let d_concat_head = head_backward(
        &pass.base.caches.head,
        d_cls.view(),
        d_off.view(),
        &mut params.interest,
    );
    let (d_concat_frame, d_encoded_frame) =
        frame_backward(&pass.base.caches.frame, d_frame.view(), &mut params.frame);
    let d_concat = d_concat_head + d_concat_frame;
    let d_encoded = pyramid_backward(d_concat.view(), &params.config.scales) + d_encoded_frame;
    encode_backward(
        &pass.base.caches.encoder,
        d_encoded.view(),
        &mut params.encoder,
    );
    Ok(())
}

/// Loss of one video with gradients accumulated into `params` (which are
/// zeroed first). Returns the breakdown and the detached quantities used.
pub fn loss_and_grads(
    params: &mut ModelParams,
    x: &FeatureSequence,
    targets: &VideoTargets,
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, Detached)> {
    params.zero_grad();
    let pass = run_pass(params, x, targets, cfg, None)?;
    backward(&pass, params, targets, cfg)?;
    Ok((pass.breakdown, pass.detached))
}

/// Loss value with the given detached quantities held fixed.
pub fn loss_with_detached(
    params: &ModelParams,
    x: &FeatureSequence,
    targets: &VideoTargets,
    cfg: &TrainConfig,
    detached: &Detached,
) -> Result<LossBreakdown> {
    run_pass(params, x, targets, cfg, Some(detached)).map(|p| p.breakdown)
}

/// Finite-difference check of the joint loss over every parameter.
pub fn joint_grad_check(
    params: &ModelParams,
    video: &Video,
    cfg: &TrainConfig,
    eps: f64,
) -> Result<GradCheckReport> {
    let targets = prepare_targets(video, &params.config.scales)?;
    let mut work = params.clone();
    let (_, detached) = loss_and_grads(&mut work, &video.features, &targets, cfg)?;
    let analytic = work.flat_grads();
    let theta = work.flat_values();
    let mut probe = work.clone();
    grad_check(
        |flat| {
            probe.set_flat_values(flat)?;
            loss_with_detached(&probe, &video.features, &targets, cfg, &detached).map(|b| b.total)
        },
        &theta,
        &analytic,
        eps,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub wall_seconds: f64,
    pub checksum: String,
}

pub fn train(videos: &[&Video], cfg: &TrainConfig) -> Result<(ModelParams, TrainReport)> {
    train_with(videos, cfg, |_, _, _| Ok(()))
}

/// Like [`train`], calling `on_epoch(epoch, params, mean_loss)` after every
/// epoch.
pub fn train_with<F>(
    videos: &[&Video],
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<(ModelParams, TrainReport)>
where
    F: FnMut(usize, &ModelParams, &LossBreakdown) -> Result<()>,
{
    cfg.validate()?;
    if videos.is_empty() {
        return Err(Error::InvalidArgument("no training videos".into()));
    }
    if let Some(v) = videos
        .iter()
        .find(|v| v.features.dim() != cfg.model.feature_dim)
    {
        return Err(Error::Shape(format!(
            "video {} has feature dim {}, model expects {}",
            v.id,
            v.features.dim(),
            cfg.model.feature_dim
        )));
    }
    let start = Instant::now();
    let targets = videos
        .iter()
        .map(|v| prepare_targets(v, &cfg.model.scales))
        .collect::<Result<Vec<_>>>()?;
    let mut params = ModelParams::init(&cfg.model, cfg.seed)?;
    let mut adam = AdamState::new(cfg.adam_config(), &params.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..videos.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut losses = Vec::with_capacity(videos.len());
        for &i in &order {
            let (loss, _) = loss_and_grads(&mut params, &videos[i].features, &targets[i], cfg)?;
            if !loss.is_finite() || params.tensors().iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    video: videos[i].id.clone(),
                    epoch,
                });
            }
            adam_step(&mut params.tensors_mut(), &mut adam)?;
            losses.push(loss);
        }
        let mean = LossBreakdown::mean(&losses);
        on_epoch(epoch, &params, &mean)?;
        history.push(EpochRecord { epoch, loss: mean });
    }
    let checksum = params.checksum();
    Ok((
        params,
        TrainReport {
            history,
            wall_seconds: start.elapsed().as_secs_f64(),
            checksum,
        },
    ))
}

/// Counts of anchor classes for a video, useful in logs.
pub fn label_summary(targets: &VideoTargets) -> [usize; 3] {
    [
        targets.labels.count(AnchorClass::Positive),
        targets.labels.count(AnchorClass::Negative),
        targets.labels.count(AnchorClass::Ignore),
    ]
}
