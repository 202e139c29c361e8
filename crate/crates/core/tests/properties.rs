use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use proptest::prelude::*;
use regex::Regex;

use speechcascade::corpus::{
    load_manifest, stratified_split, write_manifest, Cohort, Diagnosis, Mmse, Provenance, SplitRatio, StratificationKey,
    Subject,
};
use speechcascade::ensemble::{majority_vote, TiePolicy};
use speechcascade::evaluation::rmse;
use speechcascade::features::{hashed_ngram_featurize, FeaturizerConfig};
use speechcascade::pause::{classify_pause, encode};
use speechcascade::silence::{silence_vector, VadSegment};
use speechcascade::transcript::{strip_annotations, AlignedToken};

fn diagnosis() -> impl Strategy<Value = Diagnosis> {
    prop_oneof![Just(Diagnosis::Hc), Just(Diagnosis::Mci), Just(Diagnosis::Dementia)]
}

fn cohort(labels: &[(Diagnosis, Option<u8>)]) -> Cohort {
    let subjects = labels
        .iter()
        .enumerate()
        .map(|(i, (d, m))| Subject::new(format!("S{i:03}"), *d, m.map(|m| Mmse::new(m).unwrap())))
        .collect();
    Cohort::new(subjects, PathBuf::new(), Provenance::Synthetic { seed: 0 }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn split_is_a_stratified_partition(
        labels in prop::collection::vec(diagnosis(), 1..120),
        seed in any::<u64>(),
    ) {
        let c = cohort(&labels.iter().map(|d| (*d, None)).collect::<Vec<_>>());
        let s = stratified_split(&c, SplitRatio::THREE_TO_ONE, seed, StratificationKey::Diagnosis).unwrap();
        let train: BTreeSet<_> = s.train.iter().cloned().collect();
        let val: BTreeSet<_> = s.validation.iter().cloned().collect();
        prop_assert!(train.is_disjoint(&val));
        prop_assert_eq!(train.len() + val.len(), c.len());
        for d in [Diagnosis::Hc, Diagnosis::Mci, Diagnosis::Dementia] {
            let n = c.count(d);
            let n_train = c.subjects().iter().filter(|s| s.diagnosis == d && train.contains(&s.id)).count();
            let want = if n < 2 { n } else { SplitRatio::THREE_TO_ONE.train_count(n) };
            prop_assert_eq!(n_train, want);
        }
        let again = stratified_split(&c, SplitRatio::THREE_TO_ONE, seed, StratificationKey::Diagnosis).unwrap();
        prop_assert_eq!(again.train, s.train);
    }

    #[test]
    fn mmse_split_keeps_bins(scores in prop::collection::vec(0u8..=30, 2..80), seed in any::<u64>()) {
        let c = cohort(&scores.iter().map(|m| (Diagnosis::Mci, Some(*m))).collect::<Vec<_>>());
        let s = stratified_split(&c, SplitRatio::THREE_TO_ONE, seed, StratificationKey::MmseBin).unwrap();
        let train: BTreeSet<_> = s.train.iter().collect();
        let mut per_bin: BTreeMap<u8, (usize, usize)> = BTreeMap::new();
        for subj in c.subjects() {
            let e = per_bin.entry(subj.mmse.unwrap().bin()).or_default();
            e.0 += 1;
            e.1 += usize::from(train.contains(&subj.id));
        }
        for (n, t) in per_bin.values() {
            let want = if *n < 2 { *n } else { SplitRatio::THREE_TO_ONE.train_count(*n) };
            prop_assert_eq!(*t, want);
        }
    }

    #[test]
    fn strip_matches_regex_oracle(parts in prop::collection::vec(
        prop_oneof![
            "[A-Za-z']{1,8}",
            "[ ,.!?;:\"-]{1,3}",
            "\\[[a-z: ]{0,8}\\]",
            "\\([0-9.]{0,4}\\)",
            "<[a-z]{1,6}>",
        ],
        0..20,
    )) {
        let raw = parts.concat();
        let got = strip_annotations(&raw).unwrap();
        let spans = Regex::new(r"\[[^\[\]()]*\]|\([^\[\]()]*\)").unwrap();
        let no_spans = spans.replace_all(&raw, " ").to_lowercase();
        let words = Regex::new(r"[^\p{Alphabetic}\p{Nd}\p{Nl}\p{No}']").unwrap();
        let want: Vec<String> = words.replace_all(&no_spans, " ").split_whitespace().map(String::from).collect();
        prop_assert_eq!(&got.tokens, &want);
        prop_assert_eq!(got.annotations_removed, spans.find_iter(&raw).count());
        // Cleaning is idempotent.
        prop_assert_eq!(strip_annotations(&got.text()).unwrap().tokens, got.tokens);
    }

    #[test]
    fn pause_classes_are_monotone(a in 0.0f64..10.0, b in 0.0f64..10.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(classify_pause(lo).unwrap() <= classify_pause(hi).unwrap());
    }

    #[test]
    fn encoding_inserts_pauses_only_between_words(
        steps in prop::collection::vec((prop::bool::ANY, 1u32..3000, 1u32..800), 1..30),
    ) {
        let mut t = 0u32;
        let mut tokens = Vec::new();
        let mut words = Vec::new();
        for (i, (sil, gap, dur)) in steps.iter().enumerate() {
            if *sil {
                tokens.push(AlignedToken::new("SIL", t as f64 / 1000.0, (t + gap) as f64 / 1000.0));
                t += gap;
            }
            let w = format!("w{i}");
            tokens.push(AlignedToken::new(w.clone(), t as f64 / 1000.0, (t + dur) as f64 / 1000.0));
            words.push(w);
            t += dur;
        }
        let enc = encode(&tokens);
        prop_assert_eq!(enc.words().map(String::from).collect::<Vec<_>>(), words);
        if let (Some(first), Some(last)) = (enc.tokens.first(), enc.tokens.last()) {
            prop_assert!(!first.is_pause() && !last.is_pause());
        }
        prop_assert!(enc.tokens.windows(2).all(|w| !(w[0].is_pause() && w[1].is_pause())));
    }

    #[test]
    fn silence_shift_and_scale(
        spans in prop::collection::vec((0u32..3000, 1u32..3000), 1..15),
        tail in 0u32..2000,
        shift in 0u32..10_000,
        k in 1u32..5,
    ) {
        let mut t = 0u32;
        let mut segs = Vec::new();
        for (gap, dur) in &spans {
            t += gap;
            segs.push((t, t + dur));
            t += dur;
        }
        let total = t + tail;
        let build = |off: u32, scale: u32| -> Vec<VadSegment> {
            segs.iter()
                .map(|&(s, e)| VadSegment::new(((s + off) * scale) as f64 / 1000.0, ((e + off) * scale) as f64 / 1000.0))
                .collect()
        };
        let base = silence_vector(&build(0, 1), total as f64 / 1000.0).unwrap();
        let shifted = silence_vector(&build(shift, 1), (total + shift) as f64 / 1000.0).unwrap();
        for i in 1..10 {
            prop_assert!((base.0[i] - shifted.0[i]).abs() < 1e-9, "component {}", i);
        }
        let scaled = silence_vector(&build(0, k), (total * k) as f64 / 1000.0).unwrap();
        let kf = k as f64;
        prop_assert!((scaled.0[0] - base.0[0] / kf).abs() < 1e-9);
        prop_assert!((scaled.0[1] - base.0[1]).abs() < 1e-9);
        for i in 2..10 {
            prop_assert!((scaled.0[i] - base.0[i] * kf).abs() < 1e-9, "component {}", i);
        }
    }

    #[test]
    fn featurizer_norm_is_zero_or_one(
        tokens in prop::collection::vec("[a-z]{1,5}|,|\\.|\\.\\.\\.", 0..30),
        dim in 1usize..300,
        seed in any::<u64>(),
    ) {
        let cfg = FeaturizerConfig { orders: vec![1, 2, 3], dim, seed };
        let v = hashed_ngram_featurize(&tokens, &cfg).unwrap();
        prop_assert_eq!(v.len(), dim);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-12, "{}", norm);
        if tokens.is_empty() {
            prop_assert_eq!(norm, 0.0);
        }
    }

    #[test]
    fn vote_is_permutation_invariant_and_monotone(
        mut votes in prop::collection::vec(diagnosis(), 1..40),
        seed in any::<u64>(),
    ) {
        for policy in [TiePolicy::MostSevere, TiePolicy::LeastSevere] {
            let a = majority_vote(&votes, policy).unwrap();
            let mut shuffled = votes.clone();
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
            let b = majority_vote(&shuffled, policy).unwrap();
            prop_assert_eq!(&a, &b);
            // One more ballot for the winner keeps it winning.
            let mut more = votes.clone();
            more.push(a.winner);
            prop_assert_eq!(majority_vote(&more, policy).unwrap().winner, a.winner);
        }
        votes.clear();
        prop_assert!(majority_vote(&votes, TiePolicy::MostSevere).is_err());
    }

    #[test]
    fn rmse_shift_and_symmetry(
        pairs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..50),
        c in -100.0f64..100.0,
    ) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let r = rmse(&a, &b).unwrap();
        prop_assert!((r - rmse(&b, &a).unwrap()).abs() < 1e-12);
        let a2: Vec<f64> = a.iter().map(|v| v + c).collect();
        let b2: Vec<f64> = b.iter().map(|v| v + c).collect();
        prop_assert!((r - rmse(&a2, &b2).unwrap()).abs() < 1e-9);
        prop_assert_eq!(rmse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn manifest_round_trip(rows in prop::collection::vec((diagnosis(), prop::option::of(0u8..=30)), 1..40)) {
        let c = cohort(&rows);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        write_manifest(&c, &path).unwrap();
        let back = load_manifest(&path).unwrap();
        prop_assert_eq!(back.subjects(), c.subjects());
    }
}
