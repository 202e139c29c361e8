//! Acceptance suite. Each test checks one criterion and prints a single
//! `criterion N ...: PASS|FAIL` line before asserting.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use speechcascade::cascade::{CountingStage, OracleStage, StageClassifier};
use speechcascade::corpus::{Diagnosis, SubjectId};
use speechcascade::ensemble::{cascade_vote, ensemble_regress, rmse_gate, seed_average, CascadeVoter, TiePolicy, MMSE_RANGE};
use speechcascade::evaluation::{macro_f1, rmse, wer};
use speechcascade::features::{FeatureBinding, FeatureSource};
use speechcascade::learners::gbrt::{train_gbrt, GbrtConfig, TreeKind};
use speechcascade::learners::head::ClassifierHead;
use speechcascade::learners::svr::{train_svr, SvrConfig};
use speechcascade::learners::Predictor;
use speechcascade::pause::encode;
use speechcascade::pipeline::{default_features, lookup_fn, Experiment, PipelineConfig};
use speechcascade::silence::{silence_vector, VadSegment};
use speechcascade::synth::{synth_cohort, SynthConfig};
use speechcascade::transcript::parse_alignment;

fn verdict(n: usize, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {n} {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pause")
}

/// Smaller heads and hashed spaces than the defaults; grid shape unchanged
/// unless a test narrows it.
fn desk_config(manifest: &Path, test_manifest: Option<&Path>, hashed_dim: usize, hidden: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        manifest: Some(manifest.to_path_buf()),
        test_manifest: test_manifest.map(Path::to_path_buf),
        ..PipelineConfig::default()
    };
    cfg.train.hidden = hidden;
    cfg.features = default_features()
        .into_iter()
        .map(|b| match b.source {
            FeatureSource::Hashed { orders, seed, pauses, .. } => FeatureBinding {
                name: b.name,
                source: FeatureSource::Hashed {
                    orders,
                    dim: hashed_dim,
                    seed,
                    pauses,
                },
            },
            _ => b,
        })
        .collect();
    cfg
}

#[test]
fn criterion_1_pause_golden_suite() {
    let t = Instant::now();
    let mut cases = 0;
    let mut failures = Vec::new();
    let mut names: Vec<PathBuf> = std::fs::read_dir(fixtures())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(".align.csv"))
        .collect();
    names.sort();
    for path in names {
        let stem = path.file_name().unwrap().to_string_lossy().replace(".align.csv", "");
        let expected = std::fs::read_to_string(fixtures().join(format!("{stem}.expected.txt"))).unwrap();
        let encoded = encode(&parse_alignment(&path).unwrap());
        let got = encoded.to_line();
        let edges_clean = encoded.tokens.first().map_or(true, |t| !t.is_pause())
            && encoded.tokens.last().map_or(true, |t| !t.is_pause());
        if got != expected.trim_end() || !edges_clean {
            failures.push(format!("{stem}: got {got:?}, want {:?}", expected.trim_end()));
        }
        cases += 1;
    }
    let elapsed = t.elapsed();
    let pass = cases == 25 && failures.is_empty() && elapsed < Duration::from_secs(1);
    verdict(
        1,
        "pause-encoding golden suite",
        pass,
        &format!("{cases} fixtures, {} mismatches, {elapsed:.2?}", failures.len()),
    );
    assert!(pass, "{failures:#?}");
}

/// Reference statistics by enumerating, for every segment, the nearest
/// segment that starts at or after its end.
fn silence_oracle(segments: &[(i64, i64)], total_ms: i64) -> [f64; 10] {
    let mut gaps = Vec::new();
    for &(_, end) in segments {
        let next = segments.iter().filter(|(s, _)| *s >= end).map(|(s, _)| *s).min();
        if let Some(s) = next {
            if s > end {
                gaps.push((s - end) as f64 / 1000.0);
            }
        }
    }
    let speech: Vec<f64> = segments.iter().map(|(s, e)| (e - s) as f64 / 1000.0).collect();
    let stats = |v: &[f64]| -> [f64; 4] {
        if v.is_empty() {
            return [0.0; 4];
        }
        let mut sorted = v.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        [sorted[sorted.len() - 1], sorted[0], mean, var.sqrt()]
    };
    let mut out = [0.0; 10];
    out[0] = gaps.len() as f64 / (total_ms as f64 / 1000.0);
    out[1] = gaps.iter().sum::<f64>() / speech.iter().sum::<f64>();
    out[2..6].copy_from_slice(&stats(&gaps));
    out[6..10].copy_from_slice(&stats(&speech));
    out
}

#[test]
fn criterion_2_silence_oracle() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let n = rng.random_range(1..=25);
        let mut cursor: i64 = rng.random_range(0..2000);
        let mut segs = Vec::with_capacity(n);
        for _ in 0..n {
            // zero gaps (touching segments) occur about one time in six
            let gap = if rng.random_range(0..6) == 0 { 0 } else { rng.random_range(1..4000) };
            let start = cursor + gap;
            let end = start + rng.random_range(1..6000);
            segs.push((start, end));
            cursor = end;
        }
        let total = cursor + rng.random_range(0..3000);
        let lib_segments: Vec<VadSegment> = segs
            .iter()
            .map(|&(s, e)| VadSegment::new(s as f64 / 1000.0, e as f64 / 1000.0))
            .collect();
        let got = silence_vector(&lib_segments, total as f64 / 1000.0).unwrap();
        let mut shuffled = segs.clone();
        shuffled.shuffle(&mut rng);
        let want = silence_oracle(&shuffled, total);
        for (a, b) in got.as_slice().iter().zip(want) {
            worst = worst.max((a - b).abs());
        }
    }
    // Worked examples.
    let ex1 = silence_vector(
        &[VadSegment::new(0.0, 1.0), VadSegment::new(2.0, 3.0), VadSegment::new(6.0, 7.0)],
        7.0,
    )
    .unwrap();
    let ex1_ok = ex1.as_slice() == [2.0 / 7.0, 4.0 / 3.0, 3.0, 1.0, 2.0, 1.0, 1.0, 1.0, 1.0, 0.0];
    let ex2 = silence_vector(&[VadSegment::new(1.0, 2.0)], 5.0).unwrap();
    let ex2_ok = ex2.as_slice() == [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0];
    let elapsed = t.elapsed();
    let pass = worst <= 1e-9 && ex1_ok && ex2_ok && elapsed < Duration::from_secs(5);
    verdict(
        2,
        "silence-vector oracle equivalence",
        pass,
        &format!("500 sets, max abs diff {worst:.2e}, worked examples {ex1_ok}/{ex2_ok}, {elapsed:.2?}"),
    );
    assert!(pass);
}

fn f1_oracle(t: &[u8], p: &[u8], k: u8) -> f64 {
    let mut total = 0.0;
    for c in 0..k {
        let mut tp = 0u32;
        let mut fp = 0u32;
        let mut fneg = 0u32;
        for i in 0..t.len() {
            match (t[i] == c, p[i] == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fneg += 1,
                _ => {}
            }
        }
        let denom = 2 * tp + fp + fneg;
        total += if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
    }
    total / k as f64
}

/// Edit distance by exhaustive recursion with memoization over suffix pairs.
fn edit_oracle(a: &[u32], b: &[u32], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if i == a.len() {
        return b.len() - j;
    }
    if j == b.len() {
        return a.len() - i;
    }
    if let Some(&v) = memo.get(&(i, j)) {
        return v;
    }
    let sub = edit_oracle(a, b, i + 1, j + 1, memo) + usize::from(a[i] != b[j]);
    let del = edit_oracle(a, b, i + 1, j, memo) + 1;
    let ins = edit_oracle(a, b, i, j + 1, memo) + 1;
    let v = sub.min(del).min(ins);
    memo.insert((i, j), v);
    v
}

#[test]
fn criterion_3_metric_oracles() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut f1_worst: f64 = 0.0;
    let mut rmse_worst: f64 = 0.0;
    let mut wer_mismatch = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..60);
        let k = rng.random_range(2..=4u8);
        let yt: Vec<u8> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let yp: Vec<u8> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let classes: Vec<u8> = (0..k).collect();
        let got = macro_f1(&yt, &yp, &classes).unwrap();
        f1_worst = f1_worst.max((got - f1_oracle(&yt, &yp, k)).abs());
    }
    for _ in 0..1000 {
        let n = rng.random_range(1..80);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..30.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..30.0)).collect();
        let mut sq = 0.0;
        for i in (0..n).rev() {
            sq += (a[i] - b[i]).powi(2);
        }
        let want = (sq / n as f64).sqrt();
        rmse_worst = rmse_worst.max((rmse(&a, &b).unwrap() - want).abs());
    }
    for _ in 0..1000 {
        let vocab = rng.random_range(2..8u32);
        let r: Vec<u32> = (0..rng.random_range(1..15)).map(|_| rng.random_range(0..vocab)).collect();
        let h: Vec<u32> = (0..rng.random_range(0..15)).map(|_| rng.random_range(0..vocab)).collect();
        let rs: Vec<String> = r.iter().map(|w| format!("w{w}")).collect();
        let hs: Vec<String> = h.iter().map(|w| format!("w{w}")).collect();
        let got = wer(&rs, &hs).unwrap();
        let edits = edit_oracle(&r, &h, 0, 0, &mut HashMap::new());
        // exact rational comparison
        if (got.edits, got.ref_len) != (edits, r.len()) {
            wer_mismatch += 1;
        }
    }
    let elapsed = t.elapsed();
    let pass = f1_worst <= 1e-9 && rmse_worst <= 1e-9 && wer_mismatch == 0 && elapsed < Duration::from_secs(30);
    verdict(
        3,
        "metric oracles",
        pass,
        &format!(
            "macro-F1 max diff {f1_worst:.1e}, RMSE max diff {rmse_worst:.1e}, WER mismatches {wer_mismatch}, {elapsed:.2?}"
        ),
    );
    assert!(pass);
}

fn gradient_rel_error(rng: &mut ChaCha8Rng) -> f64 {
    let input = rng.random_range(2..7);
    let hidden = rng.random_range(2..6);
    let n_classes = 2;
    let mut head = ClassifierHead::init(input, hidden, n_classes, 0.3, rng);
    let n = rng.random_range(2..6);
    let xs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..input).map(|_| rng.random_range(-1.5..1.5)).collect())
        .collect();
    let ys: Vec<usize> = (0..n).map(|i| i % n_classes).collect();
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let masks: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..hidden).map(|_| if rng.random_bool(0.7) { 1.0 / 0.7 } else { 0.0 }).collect())
        .collect();
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let (_, g) = head.loss_and_gradients(&refs, &ys, Some(&weights), Some(&masks));
    let analytic = g.flatten();
    let params = head.parameters();
    let h = 1e-6;
    let mut numeric = Vec::with_capacity(params.len());
    for j in 0..params.len() {
        let mut p = params.clone();
        p[j] += h;
        head.set_parameters(&p).unwrap();
        let (up, _) = head.loss_and_gradients(&refs, &ys, Some(&weights), Some(&masks));
        p[j] -= 2.0 * h;
        head.set_parameters(&p).unwrap();
        let (down, _) = head.loss_and_gradients(&refs, &ys, Some(&weights), Some(&masks));
        numeric.push((up - down) / (2.0 * h));
    }
    head.set_parameters(&params).unwrap();
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

#[test]
fn criterion_4_learner_numerics() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grad_worst = (0..10).map(|_| gradient_rel_error(&mut rng)).fold(0.0, f64::max);

    let mut gbrt_monotone = 0;
    for d in 0..5 {
        let n = rng.random_range(30..80);
        let dim = rng.random_range(1..6);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| x.iter().map(|v| v.sin()).sum::<f64>() * 3.0 + rng.random_range(-0.5..0.5))
            .collect();
        let tree = if d % 2 == 0 { TreeKind::Greedy } else { TreeKind::Oblivious };
        let cfg = GbrtConfig {
            rounds: 50,
            tree,
            seed: d,
            ..GbrtConfig::default()
        };
        let m = train_gbrt(&xs, &ys, &cfg).unwrap();
        if m.train_rmse.len() >= 50 && m.train_rmse.windows(2).all(|w| w[1] <= w[0]) {
            gbrt_monotone += 1;
        }
    }

    let mut svr_worst_excess: f64 = f64::NEG_INFINITY;
    for d in 0..5 {
        let dim = rng.random_range(1..4);
        let w: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b = rng.random_range(-2.0..2.0);
        let xs: Vec<Vec<f64>> = (0..40).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b).collect();
        let eps = 0.1;
        let m = train_svr(&xs, &ys, eps, 10.0, &SvrConfig { seed: d, ..SvrConfig::default() }).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            svr_worst_excess = svr_worst_excess.max((m.predict(x) - y).abs() - eps);
        }
    }
    let elapsed = t.elapsed();
    let pass = grad_worst < 1e-4 && gbrt_monotone == 5 && svr_worst_excess <= 1e-9 && elapsed < Duration::from_secs(120);
    verdict(
        4,
        "learner numerics",
        pass,
        &format!(
            "gradient rel err {grad_worst:.1e}, GBRT monotone {gbrt_monotone}/5, SVR max residual - eps {svr_worst_excess:.1e}, {elapsed:.2?}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_5_cascade_routing() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig {
        n_dev: 600,
        n_test: 0,
        ..SynthConfig::default()
    };
    let (_, out) = synth_cohort(&synth, 5, dir.path()).unwrap();
    let mut cfg = desk_config(&out.manifest, None, 64, 8);
    cfg.train.epochs = 2;
    cfg.split_seeds = vec![11];
    let exp = Experiment::load(cfg.clone()).unwrap();
    let ids: Vec<SubjectId> = exp.dev.subjects().iter().map(|s| s.id.clone()).collect();
    let truth: Vec<(SubjectId, Diagnosis)> = exp.dev.subjects().iter().map(|s| (s.id.clone(), s.diagnosis)).collect();
    let n_hc = truth.iter().filter(|(_, d)| *d == Diagnosis::Hc).count();
    let n_nonhc = truth.len() - n_hc;

    let grid = exp.train_grid(&ids, None, false).unwrap();
    let oracle = OracleStage::stage1(truth.iter().map(|(id, d)| (id, *d)));
    let counters: Vec<CountingStage<'_>> = grid
        .cells
        .iter()
        .map(|c| CountingStage::new(&c.cascade.stage2 as &dyn StageClassifier))
        .collect();
    let voters: Vec<CascadeVoter<'_>> = grid
        .cells
        .iter()
        .zip(&counters)
        .map(|(c, counter)| CascadeVoter {
            coord: c.coord.clone(),
            stage1: &oracle,
            stage2: counter,
        })
        .collect();
    let lookup = lookup_fn(&exp.table);
    let report = cascade_vote(&voters, &ids, &lookup, TiePolicy::MostSevere).unwrap();

    let final_hc = report.labels().iter().filter(|(_, d)| *d == Diagnosis::Hc).count();
    let stage2_calls: usize = counters.iter().map(CountingStage::calls).sum();
    let votes_ok = report.subjects.iter().all(|s| {
        s.stage1.len() == 90 && (s.stage2_result.is_none() || s.stage2.len() == 90)
    });
    let grid_ok = voters.len() == 90 && cfg.ensemble.grid_size() == 90;

    // Pool audit on the scored subjects of the same cohort.
    let mut reg_cfg = cfg.clone();
    reg_cfg.ensemble.seeds = vec![0];
    reg_cfg.retrain_full = false;
    let reg = Experiment::with_table(reg_cfg.clone(), exp.dev.clone(), None, exp.table.clone())
        .unwrap()
        .regression()
        .unwrap();
    let pool = reg.splits[0].members.len();
    let elapsed = t.elapsed();
    let pass = final_hc == n_hc
        && report.routed() == n_nonhc
        && stage2_calls == 90 * n_nonhc
        && report.stage2_evaluations() == 90 * n_nonhc
        && votes_ok
        && grid_ok
        && pool == 45
        && reg_cfg.ensemble.pool_size() == 45
        && elapsed < Duration::from_secs(300);
    verdict(
        5,
        "cascade routing exactness",
        pass,
        &format!(
            "{} subjects, final HC {final_hc}/{n_hc}, routed {}/{n_nonhc}, stage-2 calls {stage2_calls}, 90 votes per stage {votes_ok}, pool {pool}, {elapsed:.1?}",
            ids.len(),
            report.routed()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_directional_cascade_experiment() {
    let t = Instant::now();
    let mut wins = 0;
    let mut lines = Vec::new();
    for r in 0..10u64 {
        let dir = tempfile::tempdir().unwrap();
        let (_, out) = synth_cohort(&SynthConfig::default(), 100 + r, dir.path()).unwrap();
        // The shipped configuration; only full-data retraining is skipped.
        let cfg = PipelineConfig {
            manifest: Some(out.manifest.clone()),
            test_manifest: Some(out.test_manifest.clone()),
            retrain_full: false,
            ..PipelineConfig::default()
        };
        let outcome = Experiment::load(cfg).unwrap().compare(true).unwrap();
        let votes = outcome.multi_split.expect("test cohort present");
        let direct = votes.direct_f1.expect("direct baseline trained");
        if votes.cascade_f1 >= direct {
            wins += 1;
        }
        let predicted_dementia = votes.cascade.labels().iter().filter(|(_, d)| *d == Diagnosis::Dementia).count();
        lines.push(format!(
            "  replication {r}: cascade {:.4} direct {direct:.4} (cascade predicts {predicted_dementia} dementia)",
            votes.cascade_f1
        ));
    }
    let pass = wins >= 7;
    verdict(
        6,
        "directional cascade experiment",
        pass,
        &format!("cascade >= direct in {wins}/10 replications, {:.1?}", t.elapsed()),
    );
    for l in &lines {
        println!("{l}");
    }
    assert!(pass);
}

#[test]
fn criterion_7_regression_ensemble_contract() {
    let t = Instant::now();
    // Gate: 3.0 exactly fails the strict threshold.
    let gate = rmse_gate(&[("a", 2.999), ("b", 3.0), ("c", 2.5), ("d", 3.4)], 3.0).unwrap();
    let gate_ok = gate.selected == vec![0, 2] && !gate.fallback;
    let fb = rmse_gate(&[("a", 3.0), ("b", 3.2), ("c", 4.1)], 3.0).unwrap();
    let fallback_ok = fb.selected == vec![0] && fb.fallback && fb.warning.is_some();
    let avg_ok = seed_average(&[24.0, 25.0, 26.5, 27.5]).unwrap() == 25.75;
    let clamped = ensemble_regress(
        &[
            (SubjectId::new("hi"), vec![31.0, 33.0]),
            (SubjectId::new("lo"), vec![-2.0, 1.0]),
            (SubjectId::new("mid"), vec![20.0, 22.0]),
        ],
        Some(MMSE_RANGE),
    )
    .unwrap();
    let clamp_ok = clamped.iter().map(|(_, v)| *v).collect::<Vec<_>>() == vec![30.0, 0.0, 21.0];

    let dir = tempfile::tempdir().unwrap();
    let (_, out) = synth_cohort(&SynthConfig::default(), 7, dir.path()).unwrap();
    let mut cfg = desk_config(&out.manifest, Some(&out.test_manifest), 64, 8);
    cfg.split_seeds = vec![11, 23];
    cfg.ensemble.seeds = vec![0, 1, 2];
    cfg.retrain_full = false;
    let reg = Experiment::load(cfg).unwrap().regression().unwrap();
    let mut e2e_ok = true;
    let mut detail = Vec::new();
    for s in &reg.splits {
        e2e_ok &= s.rmse < s.worst_member_rmse && s.members.len() == 45;
        e2e_ok &= s.predictions.iter().all(|(_, v)| (0.0..=30.0).contains(v));
        detail.push(format!("split {}: {:.3} vs worst {:.3}", s.index + 1, s.rmse, s.worst_member_rmse));
    }
    let elapsed = t.elapsed();
    let pass = gate_ok && fallback_ok && avg_ok && clamp_ok && e2e_ok && elapsed < Duration::from_secs(120);
    verdict(
        7,
        "regression ensemble contract",
        pass,
        &format!(
            "gate {gate_ok}, fallback {fallback_ok}, averaging {avg_ok}, clamp {clamp_ok}, {}, {elapsed:.1?}",
            detail.join("; ")
        ),
    );
    assert!(pass);
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn criterion_8_determinism() {
    let t = Instant::now();
    let data = tempfile::tempdir().unwrap();
    let (_, out) = synth_cohort(&SynthConfig::default(), 8, data.path()).unwrap();
    let mut cfg = desk_config(&out.manifest, Some(&out.test_manifest), 64, 8);
    cfg.split_seeds = vec![11, 23];
    cfg.ensemble.seeds = vec![0, 1];
    cfg.train.epochs = 5;

    let run = |dir: &Path| {
        let exp = Experiment::load(cfg.clone()).unwrap();
        exp.compare(true).unwrap().write(&dir.join("compare"), "compare", &cfg).unwrap();
        exp.regression().unwrap().write(&dir.join("regress"), "train-regress", &cfg).unwrap();
        snapshot(dir)
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run(a.path());
    let second = run(b.path());
    let differing: Vec<&PathBuf> = first
        .keys()
        .filter(|k| second.get(*k) != first.get(*k))
        .chain(second.keys().filter(|k| !first.contains_key(*k)))
        .collect();
    let pass = differing.is_empty() && first.len() > 10;
    verdict(
        8,
        "determinism",
        pass,
        &format!("{} files compared, {} differ, {:.1?}", first.len(), differing.len(), t.elapsed()),
    );
    assert!(pass, "{differing:?}");
}
