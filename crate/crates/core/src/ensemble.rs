//! Majority voting over classifier grids, seed averaging and RMSE-gated
//! score averaging for regression pools.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cascade::{DirectModel, Sample, StageClassifier};
use crate::corpus::{BinaryDiagnosis, Diagnosis, ElicitationTask, SubjectId, MMSE_MAX};
use crate::error::{Error, Result};
use crate::learners::RegressorSpec;

/// Orders labels by clinical severity for tie breaking.
pub trait Severity {
    fn severity(&self) -> u8;
}

impl Severity for Diagnosis {
    fn severity(&self) -> u8 {
        self.index() as u8
    }
}

impl Severity for BinaryDiagnosis {
    fn severity(&self) -> u8 {
        match self {
            BinaryDiagnosis::Hc => 0,
            BinaryDiagnosis::NonHc => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TiePolicy {
    /// NonHC at stage 1, Dementia at stage 2.
    #[default]
    MostSevere,
    LeastSevere,
}

impl std::str::FromStr for TiePolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "most-severe" => Ok(TiePolicy::MostSevere),
            "least-severe" => Ok(TiePolicy::LeastSevere),
            other => Err(Error::Config(format!("unknown tie policy {other:?}"))),
        }
    }
}

impl fmt::Display for TiePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TiePolicy::MostSevere => "most-severe",
            TiePolicy::LeastSevere => "least-severe",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord<L> {
    /// Vote count per label, ascending label order.
    pub counts: Vec<(L, usize)>,
    pub winner: L,
    /// Top count minus runner-up count; 0 on a tie.
    pub margin: usize,
    pub tied: bool,
}

impl<L> VoteRecord<L> {
    pub fn total(&self) -> usize {
        self.counts.iter().map(|(_, c)| c).sum()
    }
}

/// Plurality vote. Ties among the top labels are resolved by `policy`.
pub fn majority_vote<L: Copy + Ord + Severity>(labels: &[L], policy: TiePolicy) -> Result<VoteRecord<L>> {
    if labels.is_empty() {
        return Err(Error::invalid("majority vote over zero voters"));
    }
    let mut tally: BTreeMap<L, usize> = BTreeMap::new();
    for &l in labels {
        *tally.entry(l).or_default() += 1;
    }
    let counts: Vec<(L, usize)> = tally.into_iter().collect();
    let top = counts.iter().map(|(_, c)| *c).max().expect("nonempty");
    let leaders: Vec<L> = counts.iter().filter(|(_, c)| *c == top).map(|(l, _)| *l).collect();
    let winner = match policy {
        TiePolicy::MostSevere => *leaders.iter().max_by_key(|l| l.severity()).expect("nonempty"),
        TiePolicy::LeastSevere => *leaders.iter().min_by_key(|l| l.severity()).expect("nonempty"),
    };
    let runner_up = counts
        .iter()
        .filter(|(l, _)| *l != winner)
        .map(|(_, c)| *c)
        .max()
        .unwrap_or(0);
    Ok(VoteRecord {
        counts,
        winner,
        margin: top - runner_up,
        tied: leaders.len() > 1,
    })
}

pub fn seed_average(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("seed average over zero scores"));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOutcome {
    /// Indices into the pool, in pool order.
    pub selected: Vec<usize>,
    pub fallback: bool,
    pub warning: Option<String>,
}

/// Keeps pool members with RMSE strictly below `threshold`. If none
/// qualify, keeps the single lowest-RMSE member (first on ties) and warns.
pub fn rmse_gate<S: AsRef<str>>(pool: &[(S, f64)], threshold: f64) -> Result<GateOutcome> {
    if pool.is_empty() {
        return Err(Error::invalid("rmse gate over an empty pool"));
    }
    if let Some((id, r)) = pool.iter().find(|(_, r)| !(*r >= 0.0)) {
        return Err(Error::invalid(format!(
            "pool member {} has RMSE {r}; RMSE cannot be negative or NaN",
            id.as_ref()
        )));
    }
    let selected: Vec<usize> = pool
        .iter()
        .enumerate()
        .filter(|(_, (_, r))| *r < threshold)
        .map(|(i, _)| i)
        .collect();
    if !selected.is_empty() {
        return Ok(GateOutcome {
            selected,
            fallback: false,
            warning: None,
        });
    }
    let mut best = 0;
    for (i, (_, r)) in pool.iter().enumerate() {
        if *r < pool[best].1 {
            best = i;
        }
    }
    let warning = format!(
        "no pool member has RMSE below {threshold}; falling back to {} (RMSE {})",
        pool[best].0.as_ref(),
        pool[best].1
    );
    log::warn!("{warning}");
    Ok(GateOutcome {
        selected: vec![best],
        fallback: true,
        warning: Some(warning),
    })
}

/// Per-subject mean of the selected models' outputs, optionally clamped.
pub fn ensemble_regress(outputs: &[(SubjectId, Vec<f64>)], clamp: Option<(f64, f64)>) -> Result<Vec<(SubjectId, f64)>> {
    outputs
        .iter()
        .map(|(id, scores)| {
            if scores.is_empty() {
                return Err(Error::invalid(format!("subject {id} has no selected-model outputs")));
            }
            let mean = seed_average(scores)?;
            let v = match clamp {
                Some((lo, hi)) => mean.clamp(lo, hi),
                None => mean,
            };
            Ok((id.clone(), v))
        })
        .collect()
}

/// MMSE domain used for clamping.
pub const MMSE_RANGE: (f64, f64) = (0.0, MMSE_MAX as f64);

/// Grid sizes and aggregation rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Feature bindings used by classifier voters.
    pub classifier_features: Vec<String>,
    pub tasks: Vec<ElicitationTask>,
    /// Training seeds per grid cell.
    pub seeds: Vec<u64>,
    pub regressors: Vec<RegressorSpec>,
    /// Feature bindings used by the regression pool.
    pub regression_features: Vec<String>,
    pub tie_policy: TiePolicy,
    pub rmse_threshold: f64,
    pub clamp: bool,
    pub cv_folds: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            classifier_features: vec!["ngram-1".into(), "ngram-12".into(), "ngram-123".into()],
            tasks: ElicitationTask::ALL.to_vec(),
            seeds: (0..10).collect(),
            regressors: RegressorSpec::default_pool(),
            regression_features: vec![
                "w2v".into(),
                "silence".into(),
                "egemaps".into(),
                "compare".into(),
                "roberta".into(),
            ],
            tie_policy: TiePolicy::MostSevere,
            rmse_threshold: 3.0,
            clamp: true,
            cv_folds: 4,
        }
    }
}

impl EnsembleConfig {
    /// Number of classifier voters per stage.
    pub fn grid_size(&self) -> usize {
        self.classifier_features.len() * self.tasks.len() * self.seeds.len()
    }

    /// Number of regression pool members before gating.
    pub fn pool_size(&self) -> usize {
        self.regressors.len() * self.regression_features.len() * self.tasks.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("ensemble grid needs at least one task and one seed".into()));
        }
        if self.classifier_features.is_empty() {
            return Err(Error::Config("ensemble grid needs at least one classifier feature".into()));
        }
        if self.regressors.is_empty() || self.regression_features.is_empty() {
            return Err(Error::Config("regression pool needs at least one model and one feature set".into()));
        }
        if !(self.rmse_threshold > 0.0) {
            return Err(Error::Config("rmse threshold must be positive".into()));
        }
        if self.cv_folds < 2 {
            return Err(Error::Config("cross-validation needs at least two folds".into()));
        }
        if let Some(r) = self.regressors.iter().find(|r| r.grid.is_empty()) {
            return Err(Error::Config(format!("regressor {} has an empty grid", r.name)));
        }
        Ok(())
    }

    pub fn clamp_range(&self) -> Option<(f64, f64)> {
        self.clamp.then_some(MMSE_RANGE)
    }
}

/// Position of one model in a voting grid.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridCoord {
    /// Data split the model was trained on; `None` for full-data retraining.
    pub split: Option<usize>,
    pub feature: String,
    pub task: ElicitationTask,
    pub seed: u64,
}

impl fmt::Display for GridCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.split {
            Some(s) => write!(f, "split{}/{}/{}/{}", s + 1, self.feature, self.task, self.seed),
            None => write!(f, "full/{}/{}/{}", self.feature, self.task, self.seed),
        }
    }
}

/// Feature vector of `subject` in the space used by the voter at `coord`.
pub type FeatureLookup<'a> = dyn Fn(&GridCoord, &SubjectId) -> Option<&'a [f64]> + Sync + 'a;

pub struct CascadeVoter<'a> {
    pub coord: GridCoord,
    pub stage1: &'a dyn StageClassifier,
    pub stage2: &'a dyn StageClassifier,
}

/// One voter's ballot. `voter` indexes the report's voter list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ballot<L> {
    pub voter: usize,
    pub label: L,
    pub probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeSubjectVotes {
    pub subject: SubjectId,
    pub stage1: Vec<Ballot<BinaryDiagnosis>>,
    pub stage1_result: VoteRecord<BinaryDiagnosis>,
    /// Empty when stage 1 voted HC.
    pub stage2: Vec<Ballot<Diagnosis>>,
    pub stage2_result: Option<VoteRecord<Diagnosis>>,
    pub label: Diagnosis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeVoteReport {
    pub policy: TiePolicy,
    pub voters: Vec<GridCoord>,
    pub subjects: Vec<CascadeSubjectVotes>,
}

impl CascadeVoteReport {
    pub fn labels(&self) -> Vec<(SubjectId, Diagnosis)> {
        self.subjects.iter().map(|s| (s.subject.clone(), s.label)).collect()
    }

    /// Number of stage-2 classifier evaluations across all subjects.
    pub fn stage2_evaluations(&self) -> usize {
        self.subjects.iter().map(|s| s.stage2.len()).sum()
    }

    /// Subjects that reached stage 2.
    pub fn routed(&self) -> usize {
        self.subjects.iter().filter(|s| s.stage2_result.is_some()).count()
    }
}

/// Stage-wise voting: the stage-1 vote decides HC vs NonHC, and for
/// subjects voted NonHC the stage-2 vote decides MCI vs Dementia.
///
/// A voter lacking features for a subject abstains; a subject with no
/// stage-1 ballots is an error.
pub fn cascade_vote<'a>(
    voters: &[CascadeVoter<'_>],
    subjects: &[SubjectId],
    lookup: &FeatureLookup<'a>,
    policy: TiePolicy,
) -> Result<CascadeVoteReport> {
    let mut out = Vec::with_capacity(subjects.len());
    for subject in subjects {
        let mut stage1 = Vec::new();
        for (i, v) in voters.iter().enumerate() {
            if let Some(x) = lookup(&v.coord, subject) {
                let d = v.stage1.decide(&Sample { subject, features: x })?;
                stage1.push(Ballot {
                    voter: i,
                    label: if d.positive {
                        BinaryDiagnosis::NonHc
                    } else {
                        BinaryDiagnosis::Hc
                    },
                    probability: Some(d.probability),
                });
            }
        }
        if stage1.is_empty() {
            return Err(Error::invalid(format!("no voter has features for subject {subject}")));
        }
        let labels: Vec<BinaryDiagnosis> = stage1.iter().map(|b| b.label).collect();
        let stage1_result = majority_vote(&labels, policy)?;

        let mut stage2 = Vec::new();
        let mut stage2_result = None;
        let label = if stage1_result.winner == BinaryDiagnosis::Hc {
            Diagnosis::Hc
        } else {
            for (i, v) in voters.iter().enumerate() {
                if let Some(x) = lookup(&v.coord, subject) {
                    let d = v.stage2.decide(&Sample { subject, features: x })?;
                    stage2.push(Ballot {
                        voter: i,
                        label: if d.positive { Diagnosis::Dementia } else { Diagnosis::Mci },
                        probability: Some(d.probability),
                    });
                }
            }
            let labels: Vec<Diagnosis> = stage2.iter().map(|b| b.label).collect();
            let r = majority_vote(&labels, policy)?;
            let w = r.winner;
            stage2_result = Some(r);
            w
        };
        out.push(CascadeSubjectVotes {
            subject: subject.clone(),
            stage1,
            stage1_result,
            stage2,
            stage2_result,
            label,
        });
    }
    Ok(CascadeVoteReport {
        policy,
        voters: voters.iter().map(|v| v.coord.clone()).collect(),
        subjects: out,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectSubjectVotes {
    pub subject: SubjectId,
    pub ballots: Vec<Ballot<Diagnosis>>,
    pub result: VoteRecord<Diagnosis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectVoteReport {
    pub policy: TiePolicy,
    pub voters: Vec<GridCoord>,
    pub subjects: Vec<DirectSubjectVotes>,
}

impl DirectVoteReport {
    pub fn labels(&self) -> Vec<(SubjectId, Diagnosis)> {
        self.subjects.iter().map(|s| (s.subject.clone(), s.result.winner)).collect()
    }
}

/// Plurality vote of three-class models.
pub fn direct_vote<'a>(
    voters: &[(GridCoord, &DirectModel)],
    subjects: &[SubjectId],
    lookup: &FeatureLookup<'a>,
    policy: TiePolicy,
) -> Result<DirectVoteReport> {
    let mut out = Vec::with_capacity(subjects.len());
    for subject in subjects {
        let mut ballots = Vec::new();
        for (i, (coord, model)) in voters.iter().enumerate() {
            if let Some(x) = lookup(coord, subject) {
                let (label, probs) = model.predict(x)?;
                ballots.push(Ballot {
                    voter: i,
                    label,
                    probability: Some(probs[label.index()]),
                });
            }
        }
        if ballots.is_empty() {
            return Err(Error::invalid(format!("no voter has features for subject {subject}")));
        }
        let labels: Vec<Diagnosis> = ballots.iter().map(|b| b.label).collect();
        let result = majority_vote(&labels, policy)?;
        out.push(DirectSubjectVotes {
            subject: subject.clone(),
            ballots,
            result,
        });
    }
    Ok(DirectVoteReport {
        policy,
        voters: voters.iter().map(|(c, _)| c.clone()).collect(),
        subjects: out,
    })
}
