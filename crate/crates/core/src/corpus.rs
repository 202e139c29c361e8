//! Cohort data model: subjects, diagnoses, elicitation tasks, the manifest
//! format, relabeling for the first cascade stage and stratified splitting.
//!
//! A manifest is a CSV file with a header row:
//!
//! ```text
//! id,diagnosis,mmse,ctd_transcript,ctd_alignment,ctd_vad,pft_transcript,pft_alignment,pft_vad,sft_transcript,sft_alignment,sft_vad
//! S001,HC,29,data/S001/ctd.txt,data/S001/ctd.align.csv,data/S001/ctd.vad.csv,...
//! ```
//!
//! `diagnosis` is one of `HC`, `MCI`, `Dementia`; `mmse` is an integer in
//! `[0, 30]` or empty. Artifact paths are relative to the manifest's
//! directory; an empty cell marks an absent artifact.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound of the MMSE scale.
pub const MMSE_MAX: u8 = 30;

/// Width of the fixed MMSE stratification bins.
pub const MMSE_BIN_WIDTH: u8 = 3;

/// Three-way clinical diagnosis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Diagnosis {
    #[serde(rename = "HC")]
    Hc,
    #[serde(rename = "MCI")]
    Mci,
    #[serde(rename = "Dementia")]
    Dementia,
}

impl Diagnosis {
    pub const ALL: [Diagnosis; 3] = [Diagnosis::Hc, Diagnosis::Mci, Diagnosis::Dementia];

    pub fn as_str(self) -> &'static str {
        match self {
            Diagnosis::Hc => "HC",
            Diagnosis::Mci => "MCI",
            Diagnosis::Dementia => "Dementia",
        }
    }

    /// Class index used by the three-class head: HC=0, MCI=1, Dementia=2.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn to_binary(self) -> BinaryDiagnosis {
        match self {
            Diagnosis::Hc => BinaryDiagnosis::Hc,
            Diagnosis::Mci | Diagnosis::Dementia => BinaryDiagnosis::NonHc,
        }
    }
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Diagnosis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "HC" => Ok(Diagnosis::Hc),
            "MCI" => Ok(Diagnosis::Mci),
            "Dementia" => Ok(Diagnosis::Dementia),
            other => Err(Error::invalid(format!("unknown diagnosis token {other:?}"))),
        }
    }
}

/// Healthy control versus patient (MCI or Dementia).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BinaryDiagnosis {
    #[serde(rename = "HC")]
    Hc,
    #[serde(rename = "NonHC")]
    NonHc,
}

impl BinaryDiagnosis {
    pub fn as_str(self) -> &'static str {
        match self {
            BinaryDiagnosis::Hc => "HC",
            BinaryDiagnosis::NonHc => "NonHC",
        }
    }
}

impl fmt::Display for BinaryDiagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Speech elicitation task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ElicitationTask {
    /// Cookie Theft picture description.
    #[serde(rename = "CTD")]
    Ctd,
    /// Phonemic fluency ("P" words).
    #[serde(rename = "PFT")]
    Pft,
    /// Semantic fluency (animals).
    #[serde(rename = "SFT")]
    Sft,
}

impl ElicitationTask {
    pub const ALL: [ElicitationTask; 3] =
        [ElicitationTask::Ctd, ElicitationTask::Pft, ElicitationTask::Sft];

    pub fn as_str(self) -> &'static str {
        match self {
            ElicitationTask::Ctd => "CTD",
            ElicitationTask::Pft => "PFT",
            ElicitationTask::Sft => "SFT",
        }
    }

    fn column_prefix(self) -> &'static str {
        match self {
            ElicitationTask::Ctd => "ctd",
            ElicitationTask::Pft => "pft",
            ElicitationTask::Sft => "sft",
        }
    }
}

impl fmt::Display for ElicitationTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ElicitationTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CTD" => Ok(ElicitationTask::Ctd),
            "PFT" => Ok(ElicitationTask::Pft),
            "SFT" => Ok(ElicitationTask::Sft),
            other => Err(Error::invalid(format!("unknown task token {other:?}"))),
        }
    }
}

/// Opaque subject identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubjectId(pub String);

impl SubjectId {
    pub fn new(id: impl Into<String>) -> Self {
        SubjectId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SubjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::borrow::Borrow<str> for SubjectId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

/// MMSE score, guaranteed to lie in `[0, 30]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Mmse(u8);

impl Mmse {
    pub fn new(score: u8) -> Result<Self> {
        if score > MMSE_MAX {
            return Err(Error::invalid(format!(
                "mmse {score} outside [0, {MMSE_MAX}]"
            )));
        }
        Ok(Mmse(score))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Index of the fixed-width stratification bin; 30 falls in the last bin.
    pub fn bin(self) -> u8 {
        (self.0 / MMSE_BIN_WIDTH).min(MMSE_MAX / MMSE_BIN_WIDTH - 1)
    }
}

impl TryFrom<u8> for Mmse {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        Mmse::new(v)
    }
}

impl From<Mmse> for u8 {
    fn from(m: Mmse) -> u8 {
        m.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ArtifactKind {
    Transcript,
    Alignment,
    Vad,
}

impl ArtifactKind {
    const ALL: [ArtifactKind; 3] = [
        ArtifactKind::Transcript,
        ArtifactKind::Alignment,
        ArtifactKind::Vad,
    ];

    fn column_suffix(self) -> &'static str {
        match self {
            ArtifactKind::Transcript => "transcript",
            ArtifactKind::Alignment => "alignment",
            ArtifactKind::Vad => "vad",
        }
    }
}

/// Per-task file references, relative to the cohort root.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskArtifacts {
    pub transcript: Option<PathBuf>,
    pub alignment: Option<PathBuf>,
    pub vad: Option<PathBuf>,
}

impl TaskArtifacts {
    pub fn get(&self, kind: ArtifactKind) -> Option<&Path> {
        match kind {
            ArtifactKind::Transcript => self.transcript.as_deref(),
            ArtifactKind::Alignment => self.alignment.as_deref(),
            ArtifactKind::Vad => self.vad.as_deref(),
        }
    }

    fn slot(&mut self, kind: ArtifactKind) -> &mut Option<PathBuf> {
        match kind {
            ArtifactKind::Transcript => &mut self.transcript,
            ArtifactKind::Alignment => &mut self.alignment,
            ArtifactKind::Vad => &mut self.vad,
        }
    }
}

/// One study participant. `L` is the label space: [`Diagnosis`] for a loaded
/// cohort, [`BinaryDiagnosis`] after [`relabel_nonhc`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subject<L = Diagnosis> {
    pub id: SubjectId,
    pub diagnosis: L,
    pub mmse: Option<Mmse>,
    /// Always holds all three tasks.
    pub artifacts: BTreeMap<ElicitationTask, TaskArtifacts>,
}

impl<L> Subject<L> {
    pub fn new(id: impl Into<String>, diagnosis: L, mmse: Option<Mmse>) -> Self {
        Subject {
            id: SubjectId::new(id),
            diagnosis,
            mmse,
            artifacts: ElicitationTask::ALL
                .iter()
                .map(|&t| (t, TaskArtifacts::default()))
                .collect(),
        }
    }

    pub fn task(&self, task: ElicitationTask) -> &TaskArtifacts {
        &self.artifacts[&task]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Manifest(PathBuf),
    Synthetic { seed: u64 },
    Derived(String),
}

/// Ordered collection of subjects with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort<L = Diagnosis> {
    subjects: Vec<Subject<L>>,
    /// Directory artifact paths are resolved against.
    pub root: PathBuf,
    pub provenance: Provenance,
}

impl<L> Cohort<L> {
    pub fn new(subjects: Vec<Subject<L>>, root: PathBuf, provenance: Provenance) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &subjects {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::invalid(format!("duplicate subject id {}", s.id)));
            }
        }
        Ok(Cohort {
            subjects,
            root,
            provenance,
        })
    }

    pub fn subjects(&self) -> &[Subject<L>] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Subject<L>> {
        self.subjects.iter().find(|s| s.id.as_str() == id)
    }

    pub fn resolve(&self, relative: &Path) -> PathBuf {
        if relative.is_absolute() {
            relative.to_path_buf()
        } else {
            self.root.join(relative)
        }
    }

    /// Resolved path of one artifact, if the manifest names it.
    pub fn artifact_path(
        &self,
        subject: &Subject<L>,
        task: ElicitationTask,
        kind: ArtifactKind,
    ) -> Option<PathBuf> {
        subject.task(task).get(kind).map(|p| self.resolve(p))
    }

    /// Every (subject, task, artifact) slot left empty in the manifest.
    pub fn missing_artifacts(&self) -> Vec<(SubjectId, ElicitationTask, ArtifactKind)> {
        let mut out = Vec::new();
        for s in &self.subjects {
            for task in ElicitationTask::ALL {
                for kind in ArtifactKind::ALL {
                    if s.task(task).get(kind).is_none() {
                        out.push((s.id.clone(), task, kind));
                    }
                }
            }
        }
        out
    }

    /// Keeps the subjects for which `keep` holds, preserving order.
    pub fn filter(&self, mut keep: impl FnMut(&Subject<L>) -> bool) -> Cohort<L>
    where
        L: Clone,
    {
        Cohort {
            subjects: self.subjects.iter().filter(|s| keep(s)).cloned().collect(),
            root: self.root.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Subset restricted to `ids`, in cohort order.
    pub fn select(&self, ids: &[SubjectId]) -> Cohort<L>
    where
        L: Clone,
    {
        let wanted: HashSet<&str> = ids.iter().map(|i| i.as_str()).collect();
        self.filter(|s| wanted.contains(s.id.as_str()))
    }

    /// Subjects carrying an MMSE score. The excluded count is logged.
    pub fn with_mmse(&self) -> Cohort<L>
    where
        L: Clone,
    {
        let out = self.filter(|s| s.mmse.is_some());
        let excluded = self.len() - out.len();
        if excluded > 0 {
            log::info!("regression cohort: excluded {excluded} subjects without an MMSE score");
        }
        out
    }
}

impl Cohort<Diagnosis> {
    pub fn count(&self, diagnosis: Diagnosis) -> usize {
        self.subjects
            .iter()
            .filter(|s| s.diagnosis == diagnosis)
            .count()
    }
}

fn manifest_columns() -> Vec<String> {
    let mut cols = vec!["id".to_string(), "diagnosis".into(), "mmse".into()];
    for task in ElicitationTask::ALL {
        for kind in ArtifactKind::ALL {
            cols.push(format!("{}_{}", task.column_prefix(), kind.column_suffix()));
        }
    }
    cols
}

/// Reads and validates a cohort manifest.
pub fn load_manifest(path: &Path) -> Result<Cohort> {
    let text = crate::error::read_to_string(path)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let provenance = Provenance::Manifest(path.to_path_buf());

    if text.trim().is_empty() {
        log::warn!("{}: empty manifest", path.display());
        return Cohort::new(Vec::new(), root, provenance);
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    let mut index = BTreeMap::new();
    for col in manifest_columns() {
        let pos = headers
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| Error::parse(path, 1, format!("missing column {col:?}")))?;
        index.insert(col, pos);
    }

    let mut subjects: Vec<Subject> = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |name: &str| record.get(index[name]).unwrap_or("");

        let id = field("id");
        if id.is_empty() {
            return Err(Error::parse(path, line, "empty subject id"));
        }
        if let Some(first) = seen.insert(id.to_string(), line) {
            return Err(Error::parse(
                path,
                line,
                format!("duplicate subject id {id:?} (first seen on line {first})"),
            ));
        }
        let diagnosis: Diagnosis = field("diagnosis")
            .parse()
            .map_err(|e: Error| Error::parse(path, line, format!("subject {id}: {e}")))?;
        let mmse = match field("mmse") {
            "" => None,
            raw => {
                let value: i64 = raw.parse().map_err(|_| {
                    Error::parse(path, line, format!("subject {id}: non-integer mmse {raw:?}"))
                })?;
                if !(0..=MMSE_MAX as i64).contains(&value) {
                    return Err(Error::parse(
                        path,
                        line,
                        format!("subject {id}: mmse {value} outside [0, {MMSE_MAX}]"),
                    ));
                }
                Some(Mmse(value as u8))
            }
        };
        let mut subject = Subject::new(id, diagnosis, mmse);
        for task in ElicitationTask::ALL {
            let slot = subject.artifacts.get_mut(&task).expect("all tasks present");
            for kind in ArtifactKind::ALL {
                let col = format!("{}_{}", task.column_prefix(), kind.column_suffix());
                let value = field(&col);
                if !value.is_empty() {
                    *slot.slot(kind) = Some(PathBuf::from(value));
                }
            }
        }
        subjects.push(subject);
    }

    if subjects.is_empty() {
        log::warn!("{}: manifest has no subject rows", path.display());
    }
    let cohort = Cohort::new(subjects, root, provenance)?;
    let missing = cohort.missing_artifacts();
    if !missing.is_empty() {
        log::warn!(
            "{}: {} artifact slots are empty",
            path.display(),
            missing.len()
        );
        for (id, task, kind) in &missing {
            log::debug!("missing artifact: subject {id} task {task} {kind:?}");
        }
    }
    Ok(cohort)
}

/// Writes a cohort in manifest format. Artifact paths are written as stored.
pub fn write_manifest(cohort: &Cohort, path: &Path) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
    let ser = |e: csv::Error| Error::Serialization(e.to_string());
    writer.write_record(manifest_columns()).map_err(ser)?;
    for s in cohort.subjects() {
        let mut row = vec![
            s.id.to_string(),
            s.diagnosis.to_string(),
            s.mmse.map(|m| m.get().to_string()).unwrap_or_default(),
        ];
        for task in ElicitationTask::ALL {
            for kind in ArtifactKind::ALL {
                row.push(
                    s.task(task)
                        .get(kind)
                        .map(|p| p.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                );
            }
        }
        writer.write_record(&row).map_err(ser)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Serialization(e.to_string()))?;
    crate::error::write_file(path, bytes)
}

/// Maps MCI and Dementia to NonHC; the input cohort is left untouched.
pub fn relabel_nonhc(cohort: &Cohort) -> Cohort<BinaryDiagnosis> {
    Cohort {
        subjects: cohort
            .subjects()
            .iter()
            .map(|s| Subject {
                id: s.id.clone(),
                diagnosis: s.diagnosis.to_binary(),
                mmse: s.mmse,
                artifacts: s.artifacts.clone(),
            })
            .collect(),
        root: cohort.root.clone(),
        provenance: cohort.provenance.clone(),
    }
}

/// Train:validation ratio such as 3:1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatio {
    pub train: u32,
    pub validation: u32,
}

impl SplitRatio {
    pub const THREE_TO_ONE: SplitRatio = SplitRatio {
        train: 3,
        validation: 1,
    };

    pub fn new(train: u32, validation: u32) -> Result<Self> {
        if train == 0 || validation == 0 {
            return Err(Error::invalid(format!(
                "split ratio {train}:{validation} must have both parts positive"
            )));
        }
        Ok(SplitRatio { train, validation })
    }

    pub fn train_fraction(self) -> f64 {
        self.train as f64 / (self.train + self.validation) as f64
    }

    /// Round-half-up of `n * train / (train + validation)`, in exact integer arithmetic.
    pub fn train_count(self, n: usize) -> usize {
        let total = (self.train + self.validation) as u128;
        let n = n as u128;
        ((2 * n * self.train as u128 + total) / (2 * total)) as usize
    }
}

impl FromStr for SplitRatio {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("ratio {s:?} is not of the form A:B")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<u32>()
                .map_err(|_| Error::invalid(format!("ratio {s:?} is not of the form A:B")))
        };
        SplitRatio::new(parse(a)?, parse(b)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StratificationKey {
    Diagnosis,
    MmseBin,
}

impl FromStr for StratificationKey {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diagnosis" => Ok(StratificationKey::Diagnosis),
            "mmse-bin" => Ok(StratificationKey::MmseBin),
            other => Err(Error::invalid(format!("unknown stratification key {other:?}"))),
        }
    }
}

/// A partition of a cohort into training and validation subjects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// In cohort order.
    pub train: Vec<SubjectId>,
    /// In cohort order.
    pub validation: Vec<SubjectId>,
    pub ratio: SplitRatio,
    pub seed: u64,
    pub key: StratificationKey,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl SplitSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::error::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Serialization(e.to_string()))?;
        crate::error::write_file(path, text + "\n")
    }
}

/// Stratified, seeded partition of `cohort`.
///
/// Strata are visited in ascending key order; within each, members are
/// shuffled and the first `round_half_up(n * fraction)` go to training.
/// A stratum with fewer than two members goes to training whole.
pub fn stratified_split<L: Copy + Ord + fmt::Debug>(
    cohort: &Cohort<L>,
    ratio: SplitRatio,
    seed: u64,
    key: StratificationKey,
) -> Result<SplitSpec> {
    if cohort.is_empty() {
        return Err(Error::invalid("cannot split an empty cohort"));
    }
    let mut strata: BTreeMap<(Option<L>, Option<u8>), Vec<usize>> = BTreeMap::new();
    for (i, s) in cohort.subjects().iter().enumerate() {
        let k = match key {
            StratificationKey::Diagnosis => (Some(s.diagnosis), None),
            StratificationKey::MmseBin => {
                let m = s.mmse.ok_or_else(|| {
                    Error::invalid(format!(
                        "subject {} has no mmse; mmse-bin stratification needs a scored cohort",
                        s.id
                    ))
                })?;
                (None, Some(m.bin()))
            }
        };
        strata.entry(k).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; cohort.len()];
    let mut warnings = Vec::new();
    for (k, mut members) in strata {
        let label = match k {
            (Some(d), _) => format!("{d:?}"),
            (_, Some(b)) => format!(
                "mmse [{}, {}]",
                b * MMSE_BIN_WIDTH,
                if b == MMSE_MAX / MMSE_BIN_WIDTH - 1 {
                    MMSE_MAX
                } else {
                    (b + 1) * MMSE_BIN_WIDTH - 1
                }
            ),
            _ => unreachable!(),
        };
        if members.len() < 2 {
            let msg = format!(
                "stratum {label} has {} member(s); assigned wholly to train",
                members.len()
            );
            log::warn!("{msg}");
            warnings.push(msg);
            for i in members {
                in_train[i] = true;
            }
            continue;
        }
        members.shuffle(&mut rng);
        let n_train = ratio.train_count(members.len());
        for &i in &members[..n_train] {
            in_train[i] = true;
        }
    }

    let mut train = Vec::new();
    let mut validation = Vec::new();
    for (s, &t) in cohort.subjects().iter().zip(&in_train) {
        if t {
            train.push(s.id.clone());
        } else {
            validation.push(s.id.clone());
        }
    }
    Ok(SplitSpec {
        train,
        validation,
        ratio,
        seed,
        key,
        warnings,
    })
}
