mod common;

use std::collections::BTreeMap;
use std::path::Path;

use emoctx::ablation::{segs_percent, skip_context, SkipSpec};
use emoctx::cli::{decode_checkpoint, encode_checkpoint, CheckpointMeta};
use emoctx::corpus::parse_alignment;
use emoctx::dsp::FrameConfig;
use emoctx::interpret::{align_frames, AttentionTrace};
use emoctx::metrics::{confusion, score, unweighted_accuracy, weighted_accuracy};
use emoctx::model::{init_model, predict, ModelConfig, ModelParams, SequenceBatch};
use emoctx::numerics::{Graph, Tensor};
use emoctx::training::{pad_batch, per_item_loss};
use proptest::prelude::*;

use common::random_features;

fn preds_refs() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (1usize..=4).prop_flat_map(|c| (Just(c), prop::collection::vec((0..c, 0..c), 1..=12)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn scores_match_recount((c, pairs) in preds_refs()) {
        let preds: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let refs: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let (ua, wa) = score(&preds, &refs, c).unwrap();

        let correct = pairs.iter().filter(|(p, r)| p == r).count();
        prop_assert_eq!(ua, correct as f64 / pairs.len() as f64);

        let mut recalls = Vec::new();
        for k in 0..c {
            let support = refs.iter().filter(|&&r| r == k).count();
            if support > 0 {
                let hit = pairs.iter().filter(|&&(p, r)| r == k && p == k).count();
                recalls.push(hit as f64 / support as f64);
            }
        }
        prop_assert_eq!(wa, recalls.iter().sum::<f64>() / recalls.len() as f64);
    }

    #[test]
    fn scores_ignore_class_relabelling((c, pairs) in preds_refs(), seed in any::<u64>()) {
        let mut perm: Vec<usize> = (0..c).collect();
        let mut s = seed;
        for i in (1..c).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let preds: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let refs: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let pp: Vec<usize> = preds.iter().map(|&p| perm[p]).collect();
        let pr: Vec<usize> = refs.iter().map(|&r| perm[r]).collect();
        let a = score(&preds, &refs, c).unwrap();
        let b = score(&pp, &pr, c).unwrap();
        prop_assert_eq!(a.0, b.0);
        prop_assert!((a.1 - b.1).abs() < 1e-12);
    }

    #[test]
    fn balanced_recall_makes_ua_equal_wa(c in 1usize..=4, support in 1usize..=5, hits in 0usize..=5) {
        let hits = hits.min(support);
        let mut preds = Vec::new();
        let mut refs = Vec::new();
        for k in 0..c {
            for i in 0..support {
                refs.push(k);
                preds.push(if i < hits { k } else { (k + 1) % c });
            }
        }
        let cm = confusion(&preds, &refs, c).unwrap();
        let ua = unweighted_accuracy(&cm).unwrap();
        let wa = weighted_accuracy(&cm).unwrap();
        prop_assert!((ua - wa).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn softmax_is_a_distribution(xs in prop::collection::vec(-30.0f64..30.0, 1..20), shift in -50.0f64..50.0) {
        let n = xs.len();
        let run = |v: Vec<f64>| {
            let mut g = Graph::<f64>::new();
            let x = g.input("x");
            let s = g.softmax(x, 1);
            let inputs = BTreeMap::from([("x".to_string(), Tensor::new(vec![1, n], v).unwrap())]);
            g.evaluate(&inputs, s).unwrap().data().to_vec()
        };
        let p = run(xs.clone());
        prop_assert!(p.iter().all(|&v| v > 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let q = run(xs.iter().map(|v| v + shift).collect());
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn skip_rule_matches_slicing(t in 1usize..=400, left in 0usize..=300, right in 0usize..=300) {
        let f = random_features(t, 2, t as u64);
        let spec = SkipSpec::new(left, right);
        let (out, modified) = skip_context(&f, spec);
        if t > left + right {
            prop_assert!(modified);
            prop_assert_eq!(out.len(), t - left - right);
            prop_assert_eq!(out.data(), &f.data()[left * 2..(t - right) * 2]);
            prop_assert_eq!(out.frame_times(), &f.frame_times()[left..t - right]);
        } else {
            prop_assert!(!modified);
            prop_assert_eq!(&out, &f);
        }
        prop_assert!(!out.is_empty());
        let (again, changed) = skip_context(&out, SkipSpec::BASELINE);
        prop_assert!(!changed);
        prop_assert_eq!(again, out);
    }

    #[test]
    fn segs_counts_and_is_monotone(
        lengths in prop::collection::vec(1usize..500, 1..40),
        left in 0usize..200,
        right in 0usize..200,
        extra in 0usize..100,
    ) {
        let spec = SkipSpec::new(left, right);
        let got = segs_percent(&lengths, spec);
        if spec.is_baseline() {
            prop_assert_eq!(got, None);
        } else {
            let n = lengths.iter().filter(|&&t| t > left + right).count();
            let expected = (1000.0 * n as f64 / lengths.len() as f64).round() / 10.0;
            prop_assert_eq!(got, Some(expected));
        }
        let wider = SkipSpec::new(left + extra, right + 1);
        prop_assert!(segs_percent(&lengths, wider).unwrap() <= got.unwrap_or(100.0));
    }
}

fn toy_params(seed: u64) -> ModelParams<f64> {
    init_model::<f64>(&ModelConfig::toy(6, 4), seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn padding_does_not_change_losses(lens in prop::collection::vec(1usize..12, 2..5), seed in 0u64..1000) {
        let p = toy_params(seed);
        let seqs: Vec<_> = lens
            .iter()
            .enumerate()
            .map(|(i, &t)| random_features(t, 23, seed * 31 + i as u64))
            .collect();
        let labels: Vec<usize> = (0..seqs.len()).map(|i| i % 6).collect();
        let refs: Vec<_> = seqs.iter().collect();
        let batched = per_item_loss(&p, &pad_batch(&refs).unwrap(), &labels).unwrap();
        for (i, s) in seqs.iter().enumerate() {
            let single = per_item_loss(&p, &SequenceBatch::single(s, None).unwrap(), &labels[i..=i]).unwrap();
            prop_assert!((batched[i] - single[0]).abs() < 1e-5, "{} vs {}", batched[i], single[0]);
        }
    }

    #[test]
    fn unchanged_utterances_keep_their_prediction(t in 1usize..40, left in 0usize..30, right in 0usize..30) {
        let p = toy_params(3);
        let f = random_features(t, 23, t as u64);
        let spec = SkipSpec::new(left, right);
        let (g, modified) = skip_context(&f, spec);
        if !modified {
            prop_assert_eq!(predict(&p, &g).unwrap(), predict(&p, &f).unwrap());
        }
    }

    #[test]
    fn checkpoint_round_trip(seed in any::<u64>(), epoch in any::<u64>(), hash in any::<u64>()) {
        let p = init_model::<f32>(&ModelConfig::toy(3, 2), seed).unwrap();
        let meta = CheckpointMeta { seed, epoch, config_hash: hash, feature_fingerprint: !hash };
        let ck = decode_checkpoint(&encode_checkpoint(&p, &meta), None).unwrap();
        prop_assert_eq!(ck.meta, meta);
        prop_assert_eq!(ck.params, p);
    }
}

fn tiling(cuts: &[f64], prefix: &str) -> Vec<String> {
    cuts.windows(2)
        .enumerate()
        .map(|(i, w)| format!("{prefix} {:.3} {:.3} t{i}", w[0], w[1]))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn aggregation_conserves_mass_and_ignores_line_order(
        t in 5usize..120,
        raw in prop::collection::vec(0.0f64..1.0, 120),
        gaps in prop::collection::vec(1u32..40, 1..12),
        seed in any::<u64>(),
    ) {
        let total: f64 = raw[..t].iter().sum::<f64>() + 1e-9;
        let trace = AttentionTrace {
            utterance_id: "u".into(),
            spec: SkipSpec::BASELINE,
            frame_times: (0..t).map(|i| i as f64 * 0.01).collect(),
            weights: raw[..t].iter().map(|w| (w + 1e-9 / t as f64) / total).collect(),
            prediction: 0,
            reference: 0,
            modified: false,
            duration: 0.015 + t as f64 * 0.01,
        };
        let mut cuts = vec![0.05];
        for g in &gaps {
            let last = *cuts.last().unwrap();
            cuts.push(last + *g as f64 * 0.01);
        }
        let mut lines = tiling(&cuts, "w");
        lines.extend(tiling(&cuts, "p"));
        let text = lines.join("\n");
        let frame = FrameConfig::default();
        let tiers = parse_alignment(&text, Path::new("a")).unwrap();
        let tw = align_frames(&trace, &tiers, &frame);
        let mass = trace.weights.iter().sum::<f64>();
        let words: f64 = tw.words.iter().map(|w| w.weight).sum::<f64>() + tw.words_outside;
        let phones: f64 = tw.phones.iter().map(|w| w.weight).sum::<f64>() + tw.phones_outside;
        prop_assert!((words - 1.0).abs() < 1e-4 && (mass - 1.0).abs() < 1e-4);
        prop_assert!((phones - 1.0).abs() < 1e-4);

        let mut shuffled = lines.clone();
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let tiers2 = parse_alignment(&shuffled.join("\n"), Path::new("a")).unwrap();
        prop_assert_eq!(align_frames(&trace, &tiers2, &frame), tw);
    }
}
