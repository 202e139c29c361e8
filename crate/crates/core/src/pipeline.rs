//! Experiment orchestration: feature materialization, classifier grids,
//! the cascade-vs-direct comparison and the gated regression pool.
//!
//! Everything here is deterministic for a fixed [`PipelineConfig`]: grid
//! cells are trained in parallel but merged in coordinate order, and all
//! maps are ordered.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cascade::{train_cascade, train_direct3, CascadeModel, CascadeOutcome, DirectModel, FeatureBindingRef, LabeledSet};
use crate::corpus::{
    load_manifest, stratified_split, Cohort, Diagnosis, ElicitationTask, SplitRatio, SplitSpec, StratificationKey, Subject, SubjectId,
};
use crate::ensemble::{
    cascade_vote, direct_vote, ensemble_regress, rmse_gate, seed_average, CascadeVoteReport, CascadeVoter, DirectVoteReport, EnsembleConfig,
    GateOutcome, GridCoord,
};
use crate::error::{read_to_string, write_file, Error, Result};
use crate::evaluation::{macro_f1, rmse, EnsembleRow, ExperimentReport, MethodScores};
use crate::features::{hashed_ngram_featurize, load_feature_set, FeatureBinding, FeatureSet, FeatureSource};
use crate::learners::{grid_search_cv, FittedRegressor, HyperPoint, Predictor, TrainConfig};
use crate::pause::{PauseEncoded, PauseEncoder, DEFAULT_MIN_GAP_SEC};
use crate::silence::{parse_vad, silence_vector};
use crate::transcript::parse_alignment;

/// Everything a run needs besides its input files.
///
/// Serialized as TOML. Every field has a default, so an empty file is a
/// valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub manifest: Option<PathBuf>,
    /// Labelled held-out cohort used for the test rows of reports.
    pub test_manifest: Option<PathBuf>,
    pub output: PathBuf,
    pub split_seeds: Vec<u64>,
    pub split_ratio: SplitRatio,
    /// Also retrain every grid on the full development cohort.
    pub retrain_full: bool,
    pub stage1_threshold: f64,
    /// Worker threads; 0 means one per core.
    pub jobs: usize,
    /// Minimum unmarked inter-word gap treated as a pause.
    pub min_gap_sec: f64,
    pub train: TrainConfig,
    pub ensemble: EnsembleConfig,
    pub features: Vec<FeatureBinding>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            manifest: None,
            test_manifest: None,
            output: PathBuf::from("out"),
            split_seeds: vec![11, 23, 37, 53],
            split_ratio: SplitRatio::THREE_TO_ONE,
            retrain_full: true,
            stage1_threshold: 0.5,
            jobs: 0,
            min_gap_sec: DEFAULT_MIN_GAP_SEC,
            train: TrainConfig::default(),
            ensemble: EnsembleConfig::default(),
            features: default_features(),
        }
    }
}

/// Three hashed text spaces, the silence statistics and the four stored
/// vector files written by the synthetic generator.
pub fn default_features() -> Vec<FeatureBinding> {
    vec![
        FeatureBinding::hashed("ngram-1", &[1], 256, 1),
        FeatureBinding::hashed("ngram-12", &[1, 2], 256, 2),
        FeatureBinding::hashed("ngram-123", &[1, 2, 3], 256, 3),
        FeatureBinding::silence("silence"),
        FeatureBinding::stored("w2v", "features/w2v.csv", 32),
        FeatureBinding::stored("egemaps", "features/egemaps.csv", 16),
        FeatureBinding::stored("compare", "features/compare.csv", 24),
        FeatureBinding::stored("roberta", "features/roberta.csv", 32),
    ]
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.ensemble.validate()?;
        if self.split_seeds.is_empty() {
            return Err(Error::Config("at least one split seed is required".into()));
        }
        if !(0.0..1.0).contains(&self.stage1_threshold) {
            return Err(Error::Config("stage1_threshold must lie in [0, 1)".into()));
        }
        if !(self.min_gap_sec >= 0.0) {
            return Err(Error::Config("min_gap_sec must be non-negative".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for b in &self.features {
            if !names.insert(b.name.as_str()) {
                return Err(Error::Config(format!("feature binding {} defined twice", b.name)));
            }
            if b.dim() == 0 {
                return Err(Error::Config(format!("feature binding {} has dim 0", b.name)));
            }
            if let Some(f) = b.featurizer_config() {
                f.validate().map_err(|e| Error::Config(format!("feature binding {}: {e}", b.name)))?;
            }
        }
        for name in self.ensemble.classifier_features.iter().chain(&self.ensemble.regression_features) {
            self.binding(name)?;
        }
        Ok(())
    }

    pub fn binding(&self, name: &str) -> Result<&FeatureBinding> {
        self.features
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Config(format!("no feature binding named {name:?}")))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn manifest_path(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| Error::Config("no manifest given (set `manifest` or pass --manifest)".into()))
    }
}

/// Runs `f` on a pool of `jobs` threads (0 = default).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Pause-encodes every alignment of `cohort`. Missing alignments are
/// skipped and counted in the log.
pub fn encode_cohort(cohort: &Cohort, min_gap: f64) -> Result<BTreeMap<(SubjectId, ElicitationTask), PauseEncoded>> {
    let encoder = PauseEncoder { min_gap };
    let per_subject: Vec<Vec<((SubjectId, ElicitationTask), PauseEncoded)>> = cohort
        .subjects()
        .par_iter()
        .map(|s| {
            let mut out = Vec::new();
            for task in ElicitationTask::ALL {
                if let Some(path) = cohort.artifact_path(s, task, crate::corpus::ArtifactKind::Alignment) {
                    let tokens = parse_alignment(&path)?;
                    let enc = encoder.encode(&tokens);
                    for w in &enc.warnings {
                        log::warn!("{}: {w}", path.display());
                    }
                    out.push(((s.id.clone(), task), enc));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let map: BTreeMap<_, _> = per_subject.into_iter().flatten().collect();
    let missing = cohort.len() * ElicitationTask::ALL.len() - map.len();
    if missing > 0 {
        log::info!("{missing} (subject, task) samples have no alignment file");
    }
    Ok(map)
}

/// Computes or loads one feature space over the given cohorts. Stored
/// paths resolve against the first cohort's root.
pub fn materialize(
    binding: &FeatureBinding,
    cohorts: &[&Cohort],
    encoded: Option<&BTreeMap<(SubjectId, ElicitationTask), PauseEncoded>>,
    min_gap: f64,
) -> Result<FeatureSet> {
    let mut set = FeatureSet::new(&binding.name, binding.dim())?;
    match &binding.source {
        FeatureSource::Hashed { pauses, .. } => {
            let fc = binding.featurizer_config().expect("hashed binding");
            let owned;
            let encoded = match encoded {
                Some(e) => e,
                None => {
                    let mut all = BTreeMap::new();
                    for c in cohorts {
                        all.extend(encode_cohort(c, min_gap)?);
                    }
                    owned = all;
                    &owned
                }
            };
            let wanted: std::collections::HashSet<&str> =
                cohorts.iter().flat_map(|c| c.subjects().iter().map(|s| s.id.as_str())).collect();
            for ((id, task), enc) in encoded {
                if !wanted.contains(id.as_str()) {
                    continue;
                }
                let v = if *pauses {
                    hashed_ngram_featurize(&enc.as_strs(), &fc)?
                } else {
                    hashed_ngram_featurize(&enc.words().collect::<Vec<_>>(), &fc)?
                };
                set.insert(id.clone(), *task, v)?;
            }
        }
        FeatureSource::Silence => {
            for c in cohorts {
                let rows: Vec<Vec<(SubjectId, ElicitationTask, Vec<f64>)>> = c
                    .subjects()
                    .par_iter()
                    .map(|s| {
                        let mut out = Vec::new();
                        for task in ElicitationTask::ALL {
                            if let Some(path) = c.artifact_path(s, task, crate::corpus::ArtifactKind::Vad) {
                                let vad = parse_vad(&path)?;
                                let v = silence_vector(&vad.segments, vad.total_duration)
                                    .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
                                out.push((s.id.clone(), task, v.0.to_vec()));
                            }
                        }
                        Ok(out)
                    })
                    .collect::<Result<_>>()?;
                for (id, task, v) in rows.into_iter().flatten() {
                    set.insert(id, task, v)?;
                }
            }
        }
        FeatureSource::Stored { path, dim } => {
            let root = cohorts.first().map(|c| c.root.clone()).unwrap_or_default();
            let full = if path.is_absolute() { path.clone() } else { root.join(path) };
            set = load_feature_set(&full, &binding.name, *dim)?;
        }
    }
    for c in cohorts {
        let missing = set.missing_for(c, &ElicitationTask::ALL).len();
        if missing > 0 {
            log::info!("feature set {}: {missing} (subject, task) samples missing; they are excluded", binding.name);
        }
    }
    Ok(set)
}

/// Materialized feature spaces keyed by binding name.
#[derive(Debug, Clone, Default)]
pub struct FeatureTable {
    sets: BTreeMap<String, FeatureSet>,
}

impl FeatureTable {
    pub fn build(bindings: &[&FeatureBinding], cohorts: &[&Cohort], min_gap: f64) -> Result<Self> {
        let needs_text = bindings.iter().any(|b| matches!(b.source, FeatureSource::Hashed { .. }));
        let encoded = if needs_text {
            let mut all = BTreeMap::new();
            for c in cohorts {
                all.extend(encode_cohort(c, min_gap)?);
            }
            Some(all)
        } else {
            None
        };
        let mut sets = BTreeMap::new();
        for b in bindings {
            sets.insert(b.name.clone(), materialize(b, cohorts, encoded.as_ref(), min_gap)?);
        }
        Ok(FeatureTable { sets })
    }

    pub fn insert(&mut self, set: FeatureSet) {
        self.sets.insert(set.name.clone(), set);
    }

    pub fn get(&self, name: &str) -> Result<&FeatureSet> {
        self.sets
            .get(name)
            .ok_or_else(|| Error::Config(format!("feature set {name:?} was not materialized")))
    }

    pub fn lookup(&self, name: &str, id: &SubjectId, task: ElicitationTask) -> Option<&[f64]> {
        self.sets.get(name).and_then(|s| s.get(id, task))
    }
}

/// Feature lookup for the voting functions: the set named by the coordinate,
/// in the coordinate's task.
pub fn lookup_fn<'a>(table: &'a FeatureTable) -> impl Fn(&GridCoord, &SubjectId) -> Option<&'a [f64]> + Sync + 'a {
    move |c: &GridCoord, id: &SubjectId| table.lookup(&c.feature, id, c.task)
}

/// One trained grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub coord: GridCoord,
    pub cascade: CascadeModel,
    pub direct: Option<DirectModel>,
}

/// Grid of (feature, task, seed) cells in coordinate order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassifierGrid {
    pub cells: Vec<GridCell>,
}

impl ClassifierGrid {
    pub fn cascade_voters(&self) -> Vec<CascadeVoter<'_>> {
        self.cells
            .iter()
            .map(|c| CascadeVoter {
                coord: c.coord.clone(),
                stage1: &c.cascade.stage1,
                stage2: &c.cascade.stage2,
            })
            .collect()
    }

    pub fn direct_voters(&self) -> Vec<(GridCoord, &DirectModel)> {
        self.cells
            .iter()
            .filter_map(|c| c.direct.as_ref().map(|d| (c.coord.clone(), d)))
            .collect()
    }
}

/// Classification outcome of one split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitClassification {
    pub index: usize,
    pub split: SplitSpec,
    pub cascade: CascadeVoteReport,
    pub cascade_f1: f64,
    pub direct: Option<DirectVoteReport>,
    pub direct_f1: Option<f64>,
    pub cascade_test_f1: Option<f64>,
}

/// Votes over the held-out cohort.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestVotes {
    pub cascade: CascadeVoteReport,
    pub cascade_f1: f64,
    pub direct: Option<DirectVoteReport>,
    pub direct_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareOutcome {
    pub splits: Vec<SplitClassification>,
    /// All split grids voting together.
    pub multi_split: Option<TestVotes>,
    /// One grid retrained on the whole development cohort.
    pub retrain: Option<TestVotes>,
    pub report: ExperimentReport,
}

/// One regression pool coordinate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PoolCoord {
    pub model: String,
    pub feature: String,
    pub task: ElicitationTask,
}

impl std::fmt::Display for PoolCoord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.model, self.feature, self.task)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoolMember {
    pub coord: PoolCoord,
    pub hyper: HyperPoint,
    pub cv_rmse: f64,
    pub n_train: usize,
    /// Seed-averaged validation predictions.
    pub predictions: Vec<(SubjectId, f64)>,
    pub validation_rmse: f64,
    pub selected: bool,
    #[serde(skip)]
    pub models: Vec<FittedRegressor>,
}

impl PoolMember {
    /// Seed-averaged prediction, if the subject has this member's features.
    pub fn predict(&self, table: &FeatureTable, id: &SubjectId) -> Option<f64> {
        let x = table.lookup(&self.coord.feature, id, self.coord.task)?;
        let per_seed: Vec<f64> = self.models.iter().map(|m| m.predict(x)).collect();
        seed_average(&per_seed).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionSplit {
    pub index: usize,
    pub split: SplitSpec,
    pub members: Vec<PoolMember>,
    pub gate: GateOutcome,
    pub predictions: Vec<(SubjectId, f64)>,
    pub rmse: f64,
    pub best_member_rmse: f64,
    pub worst_member_rmse: f64,
    pub test_predictions: Option<Vec<(SubjectId, f64)>>,
    pub test_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestScores {
    pub predictions: Vec<(SubjectId, f64)>,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionOutcome {
    pub splits: Vec<RegressionSplit>,
    pub score_averaging: Option<TestScores>,
    pub retrain: Option<TestScores>,
    pub report: ExperimentReport,
}

/// Loaded cohorts and feature spaces for one run.
pub struct Experiment {
    pub config: PipelineConfig,
    pub dev: Cohort,
    pub test: Option<Cohort>,
    pub table: FeatureTable,
}

impl Experiment {
    /// Loads the manifests named by `config` and materializes the feature
    /// bindings the ensemble uses.
    pub fn load(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let dev = load_manifest(config.manifest_path()?)?;
        let test = config.test_manifest.as_deref().map(load_manifest).transpose()?;
        Self::from_cohorts(config, dev, test)
    }

    pub fn from_cohorts(config: PipelineConfig, dev: Cohort, test: Option<Cohort>) -> Result<Self> {
        config.validate()?;
        let mut names: Vec<&String> = config.ensemble.classifier_features.iter().collect();
        for n in &config.ensemble.regression_features {
            if !names.contains(&n) {
                names.push(n);
            }
        }
        let bindings: Vec<&FeatureBinding> = names.iter().map(|n| config.binding(n)).collect::<Result<_>>()?;
        let mut cohorts = vec![&dev];
        cohorts.extend(test.as_ref());
        let table = with_jobs(config.jobs, || FeatureTable::build(&bindings, &cohorts, config.min_gap_sec))??;
        Ok(Experiment { config, dev, test, table })
    }

    /// Builds with only the named bindings materialized.
    pub fn with_table(config: PipelineConfig, dev: Cohort, test: Option<Cohort>, table: FeatureTable) -> Result<Self> {
        config.validate()?;
        Ok(Experiment { config, dev, test, table })
    }

    pub fn splits(&self, cohort: &Cohort, key: StratificationKey) -> Result<Vec<SplitSpec>> {
        self.config
            .split_seeds
            .iter()
            .map(|&seed| stratified_split(cohort, self.config.split_ratio, seed, key))
            .collect()
    }

    fn labeled(&self, ids: &[SubjectId], feature: &str, task: ElicitationTask) -> Result<LabeledSet> {
        let index: HashMap<&str, &Subject> = self.dev.subjects().iter().map(|s| (s.id.as_str(), s)).collect();
        let mut set = LabeledSet::default();
        let mut missing = 0;
        for id in ids {
            let s = index
                .get(id.as_str())
                .ok_or_else(|| Error::invalid(format!("subject {id} is not in the development cohort")))?;
            match self.table.lookup(feature, id, task) {
                Some(x) => set.push(id.clone(), s.diagnosis, x.to_vec()),
                None => missing += 1,
            }
        }
        if missing > 0 {
            log::debug!("{feature}/{task}: {missing} training subjects lack features");
        }
        Ok(set)
    }

    /// Trains every (feature, task, seed) cell on `train_ids`.
    pub fn train_grid(&self, train_ids: &[SubjectId], split: Option<usize>, direct: bool) -> Result<ClassifierGrid> {
        let ens = &self.config.ensemble;
        let mut coords = Vec::with_capacity(ens.grid_size());
        for f in &ens.classifier_features {
            for &t in &ens.tasks {
                for &s in &ens.seeds {
                    coords.push(GridCoord {
                        split,
                        feature: f.clone(),
                        task: t,
                        seed: s,
                    });
                }
            }
        }
        let mut sets: BTreeMap<(String, ElicitationTask), LabeledSet> = BTreeMap::new();
        for f in &ens.classifier_features {
            for &t in &ens.tasks {
                sets.insert((f.clone(), t), self.labeled(train_ids, f, t)?);
            }
        }
        let cells = with_jobs(self.config.jobs, || {
            coords
                .par_iter()
                .map(|coord| {
                    let data = &sets[&(coord.feature.clone(), coord.task)];
                    let binding = FeatureBindingRef {
                        binding: self.config.binding(&coord.feature)?.clone(),
                        task: coord.task,
                    };
                    let cfg = TrainConfig {
                        seed: coord.seed,
                        ..self.config.train.clone()
                    };
                    let cascade = train_cascade(data, binding.clone(), &cfg, self.config.stage1_threshold)?;
                    let direct = if direct { Some(train_direct3(data, binding, &cfg)?) } else { None };
                    Ok(GridCell {
                        coord: coord.clone(),
                        cascade,
                        direct,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })??;
        Ok(ClassifierGrid { cells })
    }

    fn truth(&self, cohort: &Cohort, preds: &[(SubjectId, Diagnosis)]) -> Result<f64> {
        let mut t = Vec::with_capacity(preds.len());
        let mut p = Vec::with_capacity(preds.len());
        for (id, d) in preds {
            let s = cohort
                .get(id.as_str())
                .ok_or_else(|| Error::invalid(format!("prediction for unknown subject {id}")))?;
            t.push(s.diagnosis);
            p.push(*d);
        }
        macro_f1(&t, &p, &Diagnosis::ALL)
    }

    fn vote_on(&self, grids: &[&ClassifierGrid], cohort: &Cohort, direct: bool) -> Result<TestVotes> {
        let ids: Vec<SubjectId> = cohort.subjects().iter().map(|s| s.id.clone()).collect();
        let lookup = lookup_fn(&self.table);
        let policy = self.config.ensemble.tie_policy;
        let voters: Vec<CascadeVoter<'_>> = grids.iter().flat_map(|g| g.cascade_voters()).collect();
        let cascade = cascade_vote(&voters, &ids, &lookup, policy)?;
        let cascade_f1 = self.truth(cohort, &cascade.labels())?;
        let (direct, direct_f1) = if direct {
            let dv: Vec<(GridCoord, &DirectModel)> = grids.iter().flat_map(|g| g.direct_voters()).collect();
            let r = direct_vote(&dv, &ids, &lookup, policy)?;
            let f = self.truth(cohort, &r.labels())?;
            (Some(r), Some(f))
        } else {
            (None, None)
        };
        Ok(TestVotes {
            cascade,
            cascade_f1,
            direct,
            direct_f1,
        })
    }

    /// Per split: train the grid on the training part and vote on the
    /// validation part. With a test cohort, also vote with all split grids
    /// together and, if configured, with a grid retrained on everything.
    pub fn compare(&self, direct: bool) -> Result<CompareOutcome> {
        let specs = self.splits(&self.dev, StratificationKey::Diagnosis)?;
        let mut grids = Vec::with_capacity(specs.len());
        let mut splits = Vec::with_capacity(specs.len());
        for (k, spec) in specs.into_iter().enumerate() {
            log::info!(
                "split {} (seed {}): {} train / {} validation",
                k + 1,
                spec.seed,
                spec.train.len(),
                spec.validation.len()
            );
            let grid = self.train_grid(&spec.train, Some(k), direct)?;
            let val = self.dev.select(&spec.validation);
            let votes = self.vote_on(&[&grid], &val, direct)?;
            let cascade_test_f1 = match &self.test {
                Some(t) => Some(self.vote_on(&[&grid], t, false)?.cascade_f1),
                None => None,
            };
            splits.push(SplitClassification {
                index: k,
                split: spec,
                cascade: votes.cascade,
                cascade_f1: votes.cascade_f1,
                direct: votes.direct,
                direct_f1: votes.direct_f1,
                cascade_test_f1,
            });
            grids.push(grid);
        }

        let mut multi_split = None;
        let mut retrain = None;
        if let Some(test) = &self.test {
            let refs: Vec<&ClassifierGrid> = grids.iter().collect();
            multi_split = Some(self.vote_on(&refs, test, direct)?);
            if self.config.retrain_full {
                let all: Vec<SubjectId> = self.dev.subjects().iter().map(|s| s.id.clone()).collect();
                let full = self.train_grid(&all, None, direct)?;
                retrain = Some(self.vote_on(&[&full], test, direct)?);
            }
        }

        let mut methods = vec![MethodScores {
            method: "cascade".into(),
            validation: splits.iter().map(|s| s.cascade_f1).collect(),
        }];
        if direct {
            methods.push(MethodScores {
                method: "direct3".into(),
                validation: splits.iter().map(|s| s.direct_f1.unwrap_or(f64::NAN)).collect(),
            });
        }
        let n = splits.len();
        let mut ensembles = Vec::new();
        for (label, votes) in [
            (format!("Majority voting ({n} splits)"), &multi_split),
            ("Retrain on full data".to_string(), &retrain),
        ] {
            if let Some(v) = votes {
                ensembles.push(EnsembleRow {
                    label: label.clone(),
                    method: "cascade".into(),
                    test: Some(v.cascade_f1),
                });
                if let Some(f) = v.direct_f1 {
                    ensembles.push(EnsembleRow {
                        label,
                        method: "direct3".into(),
                        test: Some(f),
                    });
                }
            }
        }
        let split_test = if self.test.is_some() {
            splits.iter().map(|s| s.cascade_test_f1).collect()
        } else {
            Vec::new()
        };
        let report = ExperimentReport::new(
            "macro-f1",
            self.config.split_seeds.clone(),
            methods,
            split_test,
            ensembles,
        )?;
        Ok(CompareOutcome {
            splits,
            multi_split,
            retrain,
            report,
        })
    }

    fn pool_coords(&self) -> Vec<PoolCoord> {
        let ens = &self.config.ensemble;
        let mut out = Vec::with_capacity(ens.pool_size());
        for m in &ens.regressors {
            for f in &ens.regression_features {
                for &t in &ens.tasks {
                    out.push(PoolCoord {
                        model: m.name.clone(),
                        feature: f.clone(),
                        task: t,
                    });
                }
            }
        }
        out
    }

    fn regression_xy(&self, ids: &[SubjectId], coord: &PoolCoord, cohort: &Cohort) -> (Vec<SubjectId>, Vec<Vec<f64>>, Vec<f64>) {
        let mut out = (Vec::new(), Vec::new(), Vec::new());
        for id in ids {
            let Some(score) = cohort.get(id.as_str()).and_then(|s| s.mmse) else {
                continue;
            };
            if let Some(x) = self.table.lookup(&coord.feature, id, coord.task) {
                out.0.push(id.clone());
                out.1.push(x.to_vec());
                out.2.push(score.get() as f64);
            }
        }
        out
    }

    /// Cross-validated hyperparameters, then one fit per ensemble seed.
    fn fit_member(&self, coord: &PoolCoord, train_ids: &[SubjectId], cv_seed: u64) -> Result<PoolMember> {
        let ens = &self.config.ensemble;
        let spec = ens
            .regressors
            .iter()
            .find(|r| r.name == coord.model)
            .expect("coordinate built from config");
        let (_, xs, ys) = self.regression_xy(train_ids, coord, &self.dev);
        if xs.len() < ens.cv_folds.max(2) {
            return Err(Error::invalid(format!(
                "pool member {coord} has {} scored training samples; at least {} needed",
                xs.len(),
                ens.cv_folds.max(2)
            )));
        }
        let cv = grid_search_cv(&spec.grid, &xs, &ys, ens.cv_folds, cv_seed, |p, x, y| spec.fit(p, x, y, cv_seed))?;
        let models = ens
            .seeds
            .iter()
            .map(|&s| spec.fit(&cv.best, &xs, &ys, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(PoolMember {
            coord: coord.clone(),
            hyper: cv.best,
            cv_rmse: cv.mean_rmse[cv.best_index],
            n_train: xs.len(),
            predictions: Vec::new(),
            validation_rmse: f64::NAN,
            selected: false,
            models,
        })
    }

    fn score(&self, preds: &[(SubjectId, f64)], cohort: &Cohort) -> Result<f64> {
        let mut t = Vec::new();
        let mut p = Vec::new();
        for (id, v) in preds {
            let s = cohort
                .get(id.as_str())
                .and_then(|s| s.mmse)
                .ok_or_else(|| Error::invalid(format!("no MMSE score for subject {id}")))?;
            t.push(s.get() as f64);
            p.push(*v);
        }
        rmse(&t, &p)
    }

    /// Mean of the selected members' outputs per subject, clamped if configured.
    fn combine(&self, members: &[&PoolMember], ids: &[SubjectId]) -> Result<Vec<(SubjectId, f64)>> {
        let outputs: Vec<(SubjectId, Vec<f64>)> = ids
            .iter()
            .map(|id| (id.clone(), members.iter().filter_map(|m| m.predict(&self.table, id)).collect()))
            .collect();
        ensemble_regress(&outputs, self.config.ensemble.clamp_range())
    }

    /// The gated regression pool: per split, cross-validate and fit every
    /// (model, feature, task) member, gate on validation RMSE and average
    /// the survivors.
    pub fn regression(&self) -> Result<RegressionOutcome> {
        let scored = self.dev.with_mmse();
        if scored.len() < 2 * self.config.ensemble.cv_folds {
            return Err(Error::invalid(format!(
                "only {} subjects carry an MMSE score; the regression pool needs more",
                scored.len()
            )));
        }
        let specs = self.splits(&scored, StratificationKey::MmseBin)?;
        let coords = self.pool_coords();
        let test_scored = self.test.as_ref().map(|t| t.with_mmse()).filter(|t| !t.is_empty());
        let test_ids: Option<Vec<SubjectId>> =
            test_scored.as_ref().map(|t| t.subjects().iter().map(|s| s.id.clone()).collect());

        let mut splits = Vec::with_capacity(specs.len());
        for (k, spec) in specs.into_iter().enumerate() {
            let mut members = with_jobs(self.config.jobs, || {
                coords
                    .par_iter()
                    .map(|c| self.fit_member(c, &spec.train, spec.seed))
                    .collect::<Result<Vec<_>>>()
            })??;
            for m in &mut members {
                let preds: Vec<(SubjectId, f64)> = spec
                    .validation
                    .iter()
                    .filter_map(|id| m.predict(&self.table, id).map(|v| (id.clone(), v)))
                    .collect();
                if preds.is_empty() {
                    return Err(Error::invalid(format!("pool member {} has no validation samples", m.coord)));
                }
                m.validation_rmse = self.score(&preds, &scored)?;
                m.predictions = preds;
            }
            let pool: Vec<(String, f64)> = members.iter().map(|m| (m.coord.to_string(), m.validation_rmse)).collect();
            let gate = rmse_gate(&pool, self.config.ensemble.rmse_threshold)?;
            for &i in &gate.selected {
                members[i].selected = true;
            }
            let chosen: Vec<&PoolMember> = gate.selected.iter().map(|&i| &members[i]).collect();
            let predictions = self.combine(&chosen, &spec.validation)?;
            let split_rmse = self.score(&predictions, &scored)?;
            let (test_predictions, test_rmse) = match (&test_ids, &test_scored) {
                (Some(ids), Some(t)) => {
                    let p = self.combine(&chosen, ids)?;
                    let r = self.score(&p, t)?;
                    (Some(p), Some(r))
                }
                _ => (None, None),
            };
            let best = pool.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            let worst = pool.iter().map(|p| p.1).fold(0.0, f64::max);
            log::info!(
                "regression split {} (seed {}): {} of {} members pass the gate, RMSE {split_rmse:.4}",
                k + 1,
                spec.seed,
                gate.selected.len(),
                members.len()
            );
            splits.push(RegressionSplit {
                index: k,
                split: spec,
                members,
                gate,
                predictions,
                rmse: split_rmse,
                best_member_rmse: best,
                worst_member_rmse: worst,
                test_predictions,
                test_rmse,
            });
        }

        let mut score_averaging = None;
        let mut retrain = None;
        if let (Some(ids), Some(t)) = (&test_ids, &test_scored) {
            let outputs: Vec<(SubjectId, Vec<f64>)> = ids
                .iter()
                .enumerate()
                .map(|(i, id)| {
                    let per_split: Vec<f64> = splits
                        .iter()
                        .map(|s| s.test_predictions.as_ref().expect("test predictions")[i].1)
                        .collect();
                    (id.clone(), per_split)
                })
                .collect();
            let predictions = ensemble_regress(&outputs, self.config.ensemble.clamp_range())?;
            let r = self.score(&predictions, t)?;
            score_averaging = Some(TestScores { predictions, rmse: r });

            if self.config.retrain_full {
                let mean_rmse: Vec<(String, f64)> = coords
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let v: Vec<f64> = splits.iter().map(|s| s.members[i].validation_rmse).collect();
                        (c.to_string(), seed_average(&v).expect("at least one split"))
                    })
                    .collect();
                let gate = rmse_gate(&mean_rmse, self.config.ensemble.rmse_threshold)?;
                let all: Vec<SubjectId> = scored.subjects().iter().map(|s| s.id.clone()).collect();
                let cv_seed = self.config.split_seeds[0];
                let members = with_jobs(self.config.jobs, || {
                    gate.selected
                        .par_iter()
                        .map(|&i| self.fit_member(&coords[i], &all, cv_seed))
                        .collect::<Result<Vec<_>>>()
                })??;
                let refs: Vec<&PoolMember> = members.iter().collect();
                let predictions = self.combine(&refs, ids)?;
                let r = self.score(&predictions, t)?;
                retrain = Some(TestScores { predictions, rmse: r });
            }
        }

        let methods = vec![
            MethodScores {
                method: "ensemble".into(),
                validation: splits.iter().map(|s| s.rmse).collect(),
            },
            MethodScores {
                method: "best-member".into(),
                validation: splits.iter().map(|s| s.best_member_rmse).collect(),
            },
        ];
        let n = splits.len();
        let mut ensembles = Vec::new();
        if let Some(s) = &score_averaging {
            ensembles.push(EnsembleRow {
                label: format!("Score averaging ({n} splits)"),
                method: "ensemble".into(),
                test: Some(s.rmse),
            });
        }
        if let Some(s) = &retrain {
            ensembles.push(EnsembleRow {
                label: "Retrain on full data".into(),
                method: "ensemble".into(),
                test: Some(s.rmse),
            });
        }
        let split_test = if test_ids.is_some() {
            splits.iter().map(|s| s.test_rmse).collect()
        } else {
            Vec::new()
        };
        let report = ExperimentReport::new("rmse", self.config.split_seeds.clone(), methods, split_test, ensembles)?;
        Ok(RegressionOutcome {
            splits,
            score_averaging,
            retrain,
            report,
        })
    }
}

/// `subject_id,predicted_label,stage1_prob,stage2_prob`; stage 2 is empty
/// when it was not consulted.
pub fn cascade_predictions_csv(rows: &[(SubjectId, CascadeOutcome)]) -> String {
    let mut out = String::from("subject_id,predicted_label,stage1_prob,stage2_prob\n");
    for (id, o) in rows {
        let s2 = o.stage2_probability.map(|p| p.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{id},{},{},{s2}", o.label, o.stage1_probability);
    }
    out
}

/// Vote outcome per subject in the cascade prediction format. The stage
/// probabilities are the mean positive probability over that stage's
/// ballots.
pub fn cascade_votes_csv(report: &CascadeVoteReport) -> String {
    let rows: Vec<(SubjectId, CascadeOutcome)> = report
        .subjects
        .iter()
        .map(|s| {
            let mean = |ps: Vec<f64>| seed_average(&ps).ok();
            (
                s.subject.clone(),
                CascadeOutcome {
                    label: s.label,
                    stage1_probability: mean(s.stage1.iter().filter_map(|b| b.probability).collect()).unwrap_or(f64::NAN),
                    stage2_probability: if s.stage2.is_empty() {
                        None
                    } else {
                        mean(s.stage2.iter().filter_map(|b| b.probability).collect())
                    },
                },
            )
        })
        .collect();
    cascade_predictions_csv(&rows)
}

/// `subject_id,predicted_label,votes_hc,votes_mci,votes_dementia`.
pub fn direct_votes_csv(report: &DirectVoteReport) -> String {
    let mut out = String::from("subject_id,predicted_label,votes_hc,votes_mci,votes_dementia\n");
    for s in &report.subjects {
        let count = |d: Diagnosis| s.result.counts.iter().find(|(l, _)| *l == d).map_or(0, |(_, c)| *c);
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            s.subject,
            s.result.winner,
            count(Diagnosis::Hc),
            count(Diagnosis::Mci),
            count(Diagnosis::Dementia)
        );
    }
    out
}

/// `subject_id,predicted_mmse`.
pub fn regression_csv(rows: &[(SubjectId, f64)]) -> String {
    let mut out = String::from("subject_id,predicted_mmse\n");
    for (id, v) in rows {
        let _ = writeln!(out, "{id},{v}");
    }
    out
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v)
        .map(|s| s + "\n")
        .map_err(|e| Error::Serialization(e.to_string()))
}

fn to_json_pretty<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Error::Serialization(e.to_string()))
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Written as `provenance.json` next to every run's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub config: PipelineConfig,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &PipelineConfig, outputs: Vec<String>) -> Result<Self> {
        let mut inputs = Vec::new();
        let mut add = |p: &Path| -> Result<()> {
            inputs.push(InputDigest {
                path: p.to_path_buf(),
                sha256: file_digest(p)?,
            });
            Ok(())
        };
        if let Some(m) = &config.manifest {
            add(m)?;
            let root = m.parent().map(Path::to_path_buf).unwrap_or_default();
            for b in &config.features {
                if let FeatureSource::Stored { path, .. } = &b.source {
                    let full = if path.is_absolute() { path.clone() } else { root.join(path) };
                    if full.exists() {
                        add(&full)?;
                    }
                }
            }
        }
        if let Some(m) = &config.test_manifest {
            add(m)?;
        }
        Ok(RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_sha256: config.digest(),
            config: config.clone(),
            inputs,
            outputs,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("provenance.json"), to_json_pretty(self)?)
    }
}

/// Writes files and returns their names relative to `dir`, sorted.
fn write_all(dir: &Path, files: Vec<(String, String)>) -> Result<Vec<String>> {
    let mut names = Vec::with_capacity(files.len());
    for (name, body) in files {
        write_file(&dir.join(&name), body)?;
        names.push(name);
    }
    names.sort();
    Ok(names)
}

impl CompareOutcome {
    /// Report, predictions, vote reports, splits and provenance under `dir`.
    pub fn write(&self, dir: &Path, command: &str, config: &PipelineConfig) -> Result<Vec<String>> {
        let mut files = vec![
            ("report.txt".to_string(), self.report.to_table()),
            ("report.csv".to_string(), self.report.to_csv()),
        ];
        for s in &self.splits {
            let k = s.index + 1;
            files.push((format!("splits/split{k}.json"), to_json_pretty(&s.split)?));
            files.push((format!("predictions/split{k}_validation_cascade.csv"), cascade_votes_csv(&s.cascade)));
            files.push((format!("votes/split{k}_validation_cascade.json"), to_json(&s.cascade)?));
            if let Some(d) = &s.direct {
                files.push((format!("predictions/split{k}_validation_direct3.csv"), direct_votes_csv(d)));
                files.push((format!("votes/split{k}_validation_direct3.json"), to_json(d)?));
            }
        }
        for (tag, votes) in [("multi_split", &self.multi_split), ("retrain", &self.retrain)] {
            if let Some(v) = votes {
                files.push((format!("predictions/{tag}_test_cascade.csv"), cascade_votes_csv(&v.cascade)));
                files.push((format!("votes/{tag}_test_cascade.json"), to_json(&v.cascade)?));
                if let Some(d) = &v.direct {
                    files.push((format!("predictions/{tag}_test_direct3.csv"), direct_votes_csv(d)));
                    files.push((format!("votes/{tag}_test_direct3.json"), to_json(d)?));
                }
            }
        }
        let names = write_all(dir, files)?;
        RunManifest::new(command, config, names.clone())?.save(dir)?;
        Ok(names)
    }
}

/// Per-member gate decisions as delimited text.
fn pool_csv(split: &RegressionSplit) -> String {
    let mut out = String::from("model,feature,task,hyper,cv_rmse,n_train,validation_rmse,selected\n");
    for m in &split.members {
        let hyper = match m.hyper {
            HyperPoint::Svr { epsilon, c } => format!("epsilon={epsilon};c={c}"),
            HyperPoint::Gbrt { rounds, depth, shrinkage } => format!("rounds={rounds};depth={depth};shrinkage={shrinkage}"),
        };
        let _ = writeln!(
            out,
            "{},{},{},{hyper},{},{},{},{}",
            m.coord.model, m.coord.feature, m.coord.task, m.cv_rmse, m.n_train, m.validation_rmse, m.selected
        );
    }
    out
}

impl RegressionOutcome {
    pub fn write(&self, dir: &Path, command: &str, config: &PipelineConfig) -> Result<Vec<String>> {
        let mut files = vec![
            ("report.txt".to_string(), self.report.to_table()),
            ("report.csv".to_string(), self.report.to_csv()),
        ];
        for s in &self.splits {
            let k = s.index + 1;
            files.push((format!("splits/split{k}.json"), to_json_pretty(&s.split)?));
            files.push((format!("pool/split{k}_members.csv"), pool_csv(s)));
            files.push((format!("pool/split{k}_ensemble.json"), to_json_pretty(s)?));
            files.push((format!("predictions/split{k}_validation.csv"), regression_csv(&s.predictions)));
            if let Some(p) = &s.test_predictions {
                files.push((format!("predictions/split{k}_test.csv"), regression_csv(p)));
            }
        }
        if let Some(s) = &self.score_averaging {
            files.push(("predictions/score_averaging_test.csv".into(), regression_csv(&s.predictions)));
        }
        if let Some(s) = &self.retrain {
            files.push(("predictions/retrain_test.csv".into(), regression_csv(&s.predictions)));
        }
        let names = write_all(dir, files)?;
        RunManifest::new(command, config, names.clone())?.save(dir)?;
        Ok(names)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(PipelineConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn config_rejects_unknown_binding() {
        let text = "[ensemble]\nclassifier_features = [\"nope\"]\n";
        assert!(matches!(PipelineConfig::from_toml(text), Err(Error::Config(_))));
        assert!(PipelineConfig::from_toml("bogus = 1\n").is_err());
    }

    #[test]
    fn digest_tracks_changes() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.split_seeds[0] += 1;
        assert_eq!(a.digest(), PipelineConfig::default().digest());
        assert_ne!(a.digest(), b.digest());
    }
}
