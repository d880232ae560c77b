use ndarray::Array2;
use proptest::prelude::*;
use sevs_core::data_model::{
    derive_targets, generate_synthetic, make_splits, FeatureSequence, Setting, VideoAnnotations,
    NUM_SPLITS,
};
use sevs_core::evaluation::{diversity, fscore, FscoreMode};
use sevs_core::interest_head::{
    apply_offsets, encode_offsets, nms, segment_scores, tiou, Interval, Proposal,
};
use sevs_core::numeric::softmax_rows;
use sevs_core::summarizer::{
    knapsack_select, kts_objective, kts_segment, shot_scores, Scatter, ShotPartition,
};

fn interval() -> impl Strategy<Value = Interval> {
    (0.0..100.0f64, 0.5..40.0f64).prop_map(|(s, l)| Interval::new(s, s + l))
}

fn proposals(frames: usize) -> impl Strategy<Value = Vec<Proposal>> {
    let f = frames as f64;
    prop::collection::vec((0.0..f - 1.0, 1.0..f, 0u8..5), 0..12).prop_map(move |v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (s, l, q))| Proposal {
                interval: Interval::new(s, (s + l).min(f)),
                score: 0.2 * q as f64 + 0.1,
                anchor: i,
            })
            .collect()
    })
}

fn partition(frames: usize) -> impl Strategy<Value = ShotPartition> {
    prop::collection::btree_set(1..frames, 0..frames.min(6))
        .prop_map(move |cps| ShotPartition::new(frames, cps.into_iter().collect()).unwrap())
}

fn brute_knapsack(scores: &[f64], lengths: &[usize], cap: usize) -> Vec<usize> {
    let n = scores.len();
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    for mask in 0u32..(1 << n) {
        let set: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let len: usize = set.iter().map(|&i| lengths[i]).sum();
        if len > cap {
            continue;
        }
        let value: f64 = set.iter().map(|&i| scores[i]).sum();
        let better = match &best {
            None => true,
            Some((v, l, s)) => value > *v || (value == *v && (len < *l || (len == *l && set < *s))),
        };
        if better {
            best = Some((value, len, set));
        }
    }
    best.unwrap().2
}

fn overlap(a: &[u8], b: &[u8]) -> usize {
    a.iter()
        .zip(b)
        .filter(|(x, y)| **x == 1 && **y == 1)
        .count()
}

proptest! {
    #[test]
    fn offsets_round_trip(anchor in interval(), gt in interval()) {
        let back = apply_offsets(anchor, encode_offsets(anchor, gt));
        prop_assert!((back.start - gt.start).abs() < 1e-9);
        prop_assert!((back.end - gt.end).abs() < 1e-9);
    }

    #[test]
    fn tiou_is_symmetric_and_bounded(a in interval(), b in interval()) {
        let (x, y) = (tiou(a, b).unwrap(), tiou(b, a).unwrap());
        prop_assert_eq!(x, y);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert!((tiou(a, a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nms_keeps_a_non_overlapping_subset(props in proposals(40), thr in 0.1..0.9f64) {
        let kept = nms(&props, thr);
        prop_assert!(kept.len() <= props.len());
        for (i, a) in kept.iter().enumerate() {
            prop_assert!(props.contains(a));
            for b in &kept[i + 1..] {
                prop_assert!(tiou(a.interval, b.interval).unwrap() <= thr);
                prop_assert!(a.score >= b.score);
            }
        }
        // Every dropped proposal overlaps a kept one that outranks it.
        for p in props.iter().filter(|p| !kept.contains(p)) {
            prop_assert!(kept.iter().any(|k| tiou(k.interval, p.interval).unwrap() > thr && k.score >= p.score));
        }
        if let Some(best) = props.iter().map(|p| p.score).reduce(f64::max) {
            prop_assert_eq!(kept[0].score, best);
        }
    }

    #[test]
    fn segment_scores_lie_in_unit_interval(props in proposals(30)) {
        let ps = segment_scores(&props, 30);
        prop_assert_eq!(ps.scores.len(), 30);
        prop_assert!(ps.scores.iter().all(|s| (0.0..=1.0).contains(s)));
    }

    #[test]
    fn knapsack_matches_exhaustive_search(
        items in prop::collection::vec((0u8..9, 1usize..8), 0..10),
        cap in 0usize..30,
    ) {
        let scores: Vec<f64> = items.iter().map(|(q, _)| *q as f64 * 0.25).collect();
        let lengths: Vec<usize> = items.iter().map(|(_, l)| *l).collect();
        let got = knapsack_select(&scores, &lengths, cap).unwrap();
        prop_assert_eq!(got, brute_knapsack(&scores, &lengths, cap));
    }

    #[test]
    fn kts_returns_a_valid_partition(t in 2usize..30, d in 1usize..4, seed in 0u64..1000, m in 1usize..6) {
        let data = Array2::from_shape_fn((t, d), |(i, j)| (seed as f64 + 1.3 * i as f64 + 0.7 * j as f64).sin());
        let x = FeatureSequence::new(data).unwrap();
        let max_shots = m.min(t);
        let p = kts_segment(&x, max_shots, 1.0).unwrap();
        prop_assert!(p.num_shots() >= 1 && p.num_shots() <= max_shots);
        prop_assert_eq!(p.lengths().iter().sum::<usize>(), t);
        prop_assert!(p.change_points().windows(2).all(|w| w[0] < w[1]));
        let scatter = Scatter::new(x.data.view());
        let best = kts_objective(&scatter, &p, 1.0);
        prop_assert!(best <= kts_objective(&scatter, &ShotPartition::single(t).unwrap(), 1.0) + 1e-9);
    }

    #[test]
    fn shot_scores_follow_frame_permutations_within_shots(p in partition(20), seed in 0u64..1000) {
        let y: Vec<f64> = (0..20).map(|t| ((seed + t) as f64 * 0.37).sin().abs()).collect();
        let mut shuffled = y.clone();
        for s in p.shots() {
            shuffled[s.start..s.end].reverse();
        }
        let a = shot_scores(&y, &p).unwrap();
        let b = shot_scores(&shuffled, &p).unwrap();
        prop_assert_eq!(a.len(), p.num_shots());
        for (x, z) in a.iter().zip(&b) {
            prop_assert!((x - z).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(v in prop::collection::vec(-50.0..50.0f64, 2..40)) {
        let rows = v.len() / 2;
        let logits = Array2::from_shape_vec((rows, 2), v[..rows * 2].to_vec()).unwrap();
        let p = softmax_rows(logits.view());
        for r in p.rows() {
            prop_assert!((r.sum() - 1.0).abs() < 1e-12);
            prop_assert!(r.iter().all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn splits_are_disjoint_and_cover(n in 1usize..14, seed in 0u64..500) {
        let ds = generate_synthetic(n, (16, 20), 2, seed).unwrap();
        let plan = make_splits(&ds, &[], Setting::Canonical, seed).unwrap();
        prop_assert_eq!(plan.splits.len(), NUM_SPLITS);
        let mut tested: Vec<String> = Vec::new();
        for s in &plan.splits {
            prop_assert_eq!(s.train.len() + s.test.len(), n);
            prop_assert!(s.test.iter().all(|k| !s.train.contains(k)));
            tested.extend(s.test.iter().map(|k| k.id.clone()));
        }
        tested.sort();
        let mut all: Vec<String> = ds.videos.iter().map(|v| v.id.clone()).collect();
        all.sort();
        prop_assert_eq!(tested, all);
    }

    #[test]
    fn targets_derive_for_any_annotation(scores in prop::collection::vec(0.0..1.0f64, 1..40)) {
        let t = scores.len();
        let ann = VideoAnnotations {
            keyframe_labels: scores.iter().map(|s| u8::from(*s > 0.5)).collect(),
            user_summaries: vec![vec![0; t]],
            gt_scores: scores,
            change_points: None,
            fps_downsampled: None,
        };
        let tg = derive_targets(&ann).unwrap();
        for s in &tg.gt_segments {
            prop_assert!(s.start < s.end && s.end <= t);
        }
    }

    #[test]
    fn fscore_properties(
        bits in prop::collection::vec((any::<bool>(), any::<bool>(), any::<bool>()), 1..=12),
    ) {
        let m: Vec<u8> = bits.iter().map(|b| u8::from(b.0)).collect();
        let u1: Vec<u8> = bits.iter().map(|b| u8::from(b.1)).collect();
        let u2: Vec<u8> = bits.iter().map(|b| u8::from(b.2)).collect();
        let users = vec![u1.clone(), u2.clone()];
        let avg = fscore(&m, &users, FscoreMode::Average).unwrap().value;
        let max = fscore(&m, &users, FscoreMode::Maximum).unwrap().value;
        prop_assert!((0.0..=100.0).contains(&avg) && avg <= max + 1e-12);
        let swapped = fscore(&m, &[u2.clone(), u1.clone()], FscoreMode::Average).unwrap().value;
        prop_assert!((avg - swapped).abs() < 1e-12);
        let rev = |v: &[u8]| v.iter().rev().copied().collect::<Vec<_>>();
        let reversed = fscore(&rev(&m), &[rev(&u1), rev(&u2)], FscoreMode::Maximum).unwrap().value;
        prop_assert!((max - reversed).abs() < 1e-12);

        // Among all summaries with the user's length, the user's own wins.
        let len = u1.iter().filter(|&&b| b == 1).count();
        let t = u1.len();
        let mut best = 0.0f64;
        for mask in 0u32..(1 << t) {
            let cand: Vec<u8> = (0..t).map(|i| (mask >> i & 1) as u8).collect();
            if cand.iter().filter(|&&b| b == 1).count() == len {
                best = best.max(overlap(&cand, &u1) as f64);
            }
        }
        prop_assert_eq!(best as usize, len);
        let own = fscore(&u1, std::slice::from_ref(&u1), FscoreMode::Average).unwrap();
        prop_assert_eq!(own.value, if len == 0 { 0.0 } else { 100.0 });
    }

    #[test]
    fn diversity_ignores_row_scaling(
        v in prop::collection::vec(-5.0..5.0f64, 24),
        scale in prop::collection::vec(0.1..10.0f64, 8),
        sel in prop::collection::vec(any::<bool>(), 8),
    ) {
        let x = Array2::from_shape_vec((8, 3), v).unwrap();
        let scaled = Array2::from_shape_fn((8, 3), |(i, j)| x[(i, j)] * scale[i]);
        let mask: Vec<u8> = sel.iter().map(|&b| u8::from(b)).collect();
        let a = diversity(&FeatureSequence::new(x).unwrap(), &mask).unwrap();
        let b = diversity(&FeatureSequence::new(scaled).unwrap(), &mask).unwrap();
        prop_assert_eq!(a.is_some(), mask.iter().filter(|&&m| m == 1).count() >= 2);
        if let (Some(a), Some(b)) = (a, b) {
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!((0.0..=2.0).contains(&a));
        }
    }
}
