//! Two-stage cascaded classification.
//!
//! Stage 1 separates healthy controls from patients using every training
//! sample with MCI and Dementia relabeled NonHC. Stage 2 separates MCI from
//! Dementia and is trained on patients only. At inference a sample judged
//! HC by stage 1 is final; only the rest reach stage 2.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::corpus::{BinaryDiagnosis, Diagnosis, ElicitationTask, SubjectId};
use crate::error::{Error, Result};
use crate::features::FeatureBinding;
use crate::learners::{train_binary_head, train_head, BinaryHead, ClassifierHead, TrainConfig};

/// Derives an independent seed from a base seed and a salt (splitmix64).
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STAGE2_SALT: u64 = 2;
const DIRECT_SALT: u64 = 3;

/// Subjects with their three-way labels and one feature vector each.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledSet {
    pub ids: Vec<SubjectId>,
    pub labels: Vec<Diagnosis>,
    pub features: Vec<Vec<f64>>,
}

impl LabeledSet {
    pub fn push(&mut self, id: SubjectId, label: Diagnosis, features: Vec<f64>) {
        self.ids.push(id);
        self.labels.push(label);
        self.features.push(features);
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn count(&self, d: Diagnosis) -> usize {
        self.labels.iter().filter(|&&l| l == d).count()
    }
}

/// Which feature space a model consumes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureBindingRef {
    pub binding: FeatureBinding,
    pub task: ElicitationTask,
}

impl FeatureBindingRef {
    pub fn dim(&self) -> usize {
        self.binding.dim()
    }
}

/// A sample presented to a stage classifier.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub subject: &'a SubjectId,
    pub features: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageDecision {
    /// NonHC at stage 1, Dementia at stage 2.
    pub positive: bool,
    /// Probability of the positive class.
    pub probability: f64,
}

/// A binary decision maker usable as either cascade stage.
pub trait StageClassifier: Send + Sync {
    fn decide(&self, sample: &Sample<'_>) -> Result<StageDecision>;
}

/// A trained head with a decision threshold on the positive probability.
///
/// At the default threshold of 0.5 the decision is the argmax of the logits,
/// with ties going to the negative class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadStage {
    pub head: BinaryHead,
    pub threshold: f64,
}

impl StageClassifier for HeadStage {
    fn decide(&self, sample: &Sample<'_>) -> Result<StageDecision> {
        let p = self.head.predict_binary(sample.features)?;
        let positive = if self.threshold == 0.5 {
            p.label == 1
        } else {
            p.positive_probability() > self.threshold
        };
        Ok(StageDecision {
            positive,
            probability: p.positive_probability(),
        })
    }
}

/// Answers from ground truth; used to isolate one stage in analyses.
#[derive(Debug, Clone, Default)]
pub struct OracleStage {
    truth: HashMap<SubjectId, bool>,
}

impl OracleStage {
    pub fn new(truth: impl IntoIterator<Item = (SubjectId, bool)>) -> Self {
        OracleStage {
            truth: truth.into_iter().collect(),
        }
    }

    /// Oracle for stage 1: positive for MCI and Dementia.
    pub fn stage1<'a>(labels: impl IntoIterator<Item = (&'a SubjectId, Diagnosis)>) -> Self {
        Self::new(
            labels
                .into_iter()
                .map(|(id, d)| (id.clone(), d != Diagnosis::Hc)),
        )
    }

    /// Oracle for stage 2: positive for Dementia.
    pub fn stage2<'a>(labels: impl IntoIterator<Item = (&'a SubjectId, Diagnosis)>) -> Self {
        Self::new(
            labels
                .into_iter()
                .map(|(id, d)| (id.clone(), d == Diagnosis::Dementia)),
        )
    }
}

impl StageClassifier for OracleStage {
    fn decide(&self, sample: &Sample<'_>) -> Result<StageDecision> {
        let positive = *self
            .truth
            .get(sample.subject)
            .ok_or_else(|| Error::invalid(format!("oracle has no label for {}", sample.subject)))?;
        Ok(StageDecision {
            positive,
            probability: if positive { 1.0 } else { 0.0 },
        })
    }
}

/// Wraps a classifier and counts invocations.
pub struct CountingStage<'a> {
    pub inner: &'a dyn StageClassifier,
    pub calls: AtomicUsize,
}

impl<'a> CountingStage<'a> {
    pub fn new(inner: &'a dyn StageClassifier) -> Self {
        CountingStage {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl StageClassifier for CountingStage<'_> {
    fn decide(&self, sample: &Sample<'_>) -> Result<StageDecision> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.decide(sample)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeOutcome {
    pub label: Diagnosis,
    pub stage1_probability: f64,
    /// `None` when stage 2 was not consulted.
    pub stage2_probability: Option<f64>,
}

/// Applies the routing rule: HC at stage 1 is final, otherwise stage 2
/// chooses between MCI and Dementia.
pub fn route(
    stage1: &dyn StageClassifier,
    stage2: &dyn StageClassifier,
    stage1_sample: &Sample<'_>,
    stage2_sample: &Sample<'_>,
) -> Result<CascadeOutcome> {
    let first = stage1.decide(stage1_sample)?;
    if !first.positive {
        return Ok(CascadeOutcome {
            label: Diagnosis::Hc,
            stage1_probability: first.probability,
            stage2_probability: None,
        });
    }
    let second = stage2.decide(stage2_sample)?;
    Ok(CascadeOutcome {
        label: if second.positive {
            Diagnosis::Dementia
        } else {
            Diagnosis::Mci
        },
        stage1_probability: first.probability,
        stage2_probability: Some(second.probability),
    })
}

/// Label counts each stage was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub negative: usize,
    pub positive: usize,
}

impl StageCounts {
    pub fn total(&self) -> usize {
        self.negative + self.positive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeModel {
    pub stage1: HeadStage,
    pub stage2: HeadStage,
    pub binding: FeatureBindingRef,
    pub seed: u64,
    /// HC vs NonHC counts seen by stage 1.
    pub stage1_counts: StageCounts,
    /// MCI vs Dementia counts seen by stage 2.
    pub stage2_counts: StageCounts,
}

pub const CASCADE_FORMAT: &str = "speechcascade/cascade";
pub const DIRECT_FORMAT: &str = "speechcascade/direct3";

impl CascadeModel {
    pub fn infer(&self, subject: &SubjectId, features: &[f64]) -> Result<CascadeOutcome> {
        if features.len() != self.binding.dim() {
            return Err(Error::dim(self.binding.dim(), features.len(), "cascade input"));
        }
        let s = Sample { subject, features };
        route(&self.stage1, &self.stage2, &s, &s)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::artifact::save(CASCADE_FORMAT, self, path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        crate::artifact::load(CASCADE_FORMAT, path)
    }
}

/// Trains both stages. Stage 2 uses a seed derived from `cfg.seed`.
pub fn train_cascade(data: &LabeledSet, binding: FeatureBindingRef, cfg: &TrainConfig, stage1_threshold: f64) -> Result<CascadeModel> {
    for d in Diagnosis::ALL {
        if data.count(d) == 0 {
            return Err(Error::MissingClass(format!(
                "training data has no {d} samples; the cascade needs all three classes"
            )));
        }
    }
    if !(0.0..1.0).contains(&stage1_threshold) {
        return Err(Error::invalid("stage-1 threshold must lie in [0, 1)"));
    }
    check_binding(data, &binding)?;

    let y1: Vec<usize> = data
        .labels
        .iter()
        .map(|d| usize::from(d.to_binary() == BinaryDiagnosis::NonHc))
        .collect();
    let stage1 = train_binary_head(&data.features, &y1, cfg)?;

    let (x2, y2): (Vec<Vec<f64>>, Vec<usize>) = data
        .features
        .iter()
        .zip(&data.labels)
        .filter(|(_, &d)| d != Diagnosis::Hc)
        .map(|(x, &d)| (x.clone(), usize::from(d == Diagnosis::Dementia)))
        .unzip();
    let cfg2 = TrainConfig {
        seed: derive_seed(cfg.seed, STAGE2_SALT),
        ..cfg.clone()
    };
    let stage2 = train_binary_head(&x2, &y2, &cfg2)?;

    Ok(CascadeModel {
        stage1: HeadStage {
            head: stage1,
            threshold: stage1_threshold,
        },
        stage2: HeadStage {
            head: stage2,
            threshold: 0.5,
        },
        binding,
        seed: cfg.seed,
        stage1_counts: StageCounts {
            negative: data.count(Diagnosis::Hc),
            positive: data.len() - data.count(Diagnosis::Hc),
        },
        stage2_counts: StageCounts {
            negative: data.count(Diagnosis::Mci),
            positive: data.count(Diagnosis::Dementia),
        },
    })
}

fn check_binding(data: &LabeledSet, binding: &FeatureBindingRef) -> Result<()> {
    if let Some(x) = data.features.iter().find(|x| x.len() != binding.dim()) {
        return Err(Error::dim(binding.dim(), x.len(), format!("binding {}", binding.binding.name)));
    }
    Ok(())
}

/// Three-output head over the same architecture; the comparison baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectModel {
    pub head: ClassifierHead,
    pub binding: FeatureBindingRef,
    pub seed: u64,
}

impl DirectModel {
    pub fn predict(&self, features: &[f64]) -> Result<(Diagnosis, Vec<f64>)> {
        let probs = self.head.predict_proba(features)?;
        let k = crate::learners::head::argmax(&probs);
        Ok((Diagnosis::from_index(k).expect("three outputs"), probs))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::artifact::save(DIRECT_FORMAT, self, path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        crate::artifact::load(DIRECT_FORMAT, path)
    }
}

pub fn train_direct3(data: &LabeledSet, binding: FeatureBindingRef, cfg: &TrainConfig) -> Result<DirectModel> {
    check_binding(data, &binding)?;
    let y: Vec<usize> = data.labels.iter().map(|d| d.index()).collect();
    let cfg3 = TrainConfig {
        seed: derive_seed(cfg.seed, DIRECT_SALT),
        ..cfg.clone()
    };
    let head = train_head(&data.features, &y, 3, &cfg3)?;
    Ok(DirectModel {
        head,
        binding,
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(bool);
    impl StageClassifier for Fixed {
        fn decide(&self, _: &Sample<'_>) -> Result<StageDecision> {
            Ok(StageDecision {
                positive: self.0,
                probability: if self.0 { 0.9 } else { 0.1 },
            })
        }
    }

    fn sample(id: &SubjectId) -> Sample<'_> {
        Sample {
            subject: id,
            features: &[],
        }
    }

    #[test]
    fn hc_short_circuits() {
        let id = SubjectId::new("s");
        let s1 = Fixed(false);
        let s2 = Fixed(true);
        let counter = CountingStage::new(&s2);
        let out = route(&s1, &counter, &sample(&id), &sample(&id)).unwrap();
        assert_eq!(out.label, Diagnosis::Hc);
        assert_eq!(out.stage2_probability, None);
        assert_eq!(counter.calls(), 0);
    }

    #[test]
    fn nonhc_routes_to_stage2() {
        let id = SubjectId::new("s");
        let out = route(&Fixed(true), &Fixed(false), &sample(&id), &sample(&id)).unwrap();
        assert_eq!(out.label, Diagnosis::Mci);
        let out = route(&Fixed(true), &Fixed(true), &sample(&id), &sample(&id)).unwrap();
        assert_eq!(out.label, Diagnosis::Dementia);
        assert_eq!(out.stage2_probability, Some(0.9));
    }

    fn toy_set(counts: [usize; 3]) -> LabeledSet {
        let mut set = LabeledSet::default();
        for (k, d) in Diagnosis::ALL.iter().enumerate() {
            for i in 0..counts[k] {
                let mut x = vec![0.0; 3];
                x[k] = 1.0;
                x[(k + 1) % 3] = 0.1 * (i % 5) as f64;
                set.push(SubjectId::new(format!("{d}{i}")), *d, x);
            }
        }
        set
    }

    fn binding() -> FeatureBindingRef {
        FeatureBindingRef {
            binding: FeatureBinding::stored("toy", "toy.csv", 3),
            task: ElicitationTask::Ctd,
        }
    }

    #[test]
    fn stage_training_counts() {
        let data = toy_set([82, 59, 16]);
        let cfg = TrainConfig { epochs: 2, ..Default::default() };
        let m = train_cascade(&data, binding(), &cfg, 0.5).unwrap();
        assert_eq!(m.stage1_counts, StageCounts { negative: 82, positive: 75 });
        assert_eq!(m.stage1_counts.total(), 157);
        assert_eq!(m.stage2_counts, StageCounts { negative: 59, positive: 16 });
    }

    #[test]
    fn missing_dementia_rejected() {
        let data = toy_set([5, 5, 0]);
        assert!(matches!(
            train_cascade(&data, binding(), &TrainConfig::default(), 0.5),
            Err(Error::MissingClass(_))
        ));
    }

    #[test]
    fn deterministic_cascade() {
        let data = toy_set([10, 8, 4]);
        let cfg = TrainConfig { epochs: 3, seed: 5, ..Default::default() };
        assert_eq!(
            train_cascade(&data, binding(), &cfg, 0.5).unwrap(),
            train_cascade(&data, binding(), &cfg, 0.5).unwrap()
        );
    }

    #[test]
    fn direct3_fits_separable_classes() {
        let data = toy_set([10, 10, 10]);
        let cfg = TrainConfig { epochs: 200, ..Default::default() };
        let m = train_direct3(&data, binding(), &cfg).unwrap();
        for (x, d) in data.features.iter().zip(&data.labels) {
            let (pred, probs) = m.predict(x).unwrap();
            assert_eq!(pred, *d);
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(m, train_direct3(&data, binding(), &cfg).unwrap());
    }

    #[test]
    fn cascade_dim_mismatch() {
        let data = toy_set([4, 4, 4]);
        let m = train_cascade(&data, binding(), &TrainConfig { epochs: 1, ..Default::default() }, 0.5).unwrap();
        assert!(m.infer(&SubjectId::new("x"), &[0.0; 4]).is_err());
    }

    #[test]
    fn oracle_answers_truth() {
        let a = SubjectId::new("a");
        let b = SubjectId::new("b");
        let o = OracleStage::stage1([(&a, Diagnosis::Hc), (&b, Diagnosis::Mci)]);
        assert!(!o.decide(&sample(&a)).unwrap().positive);
        assert!(o.decide(&sample(&b)).unwrap().positive);
        assert!(o.decide(&sample(&SubjectId::new("c"))).is_err());
    }
}
