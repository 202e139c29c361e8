//! Feature-set registry, vector-file ingestion and the hashed n-gram
//! featurizer for pause-encoded text.
//!
//! Vector files are CSV: `subject_id,task,v0,...,v{dim-1}`. A header row whose
//! first cell is `subject_id` is optional.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Cohort, ElicitationTask, SubjectId};
use crate::error::{Error, Result};

pub type SampleKey = (SubjectId, ElicitationTask);

/// A named vector space with one vector per (subject, task).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub name: String,
    pub dim: usize,
    vectors: BTreeMap<SampleKey, Vec<f64>>,
}

impl FeatureSet {
    pub fn new(name: impl Into<String>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature set dimension must be positive"));
        }
        Ok(FeatureSet {
            name: name.into(),
            dim,
            vectors: BTreeMap::new(),
        })
    }

    pub fn insert(&mut self, subject: SubjectId, task: ElicitationTask, v: Vec<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::dim(
                self.dim,
                v.len(),
                format!("{} vector for {subject}/{task}", self.name),
            ));
        }
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!(
                "{} vector for {subject}/{task} has non-finite value at {i}",
                self.name
            )));
        }
        let key = (subject, task);
        if self.vectors.contains_key(&key) {
            return Err(Error::invalid(format!(
                "{}: duplicate vector for {}/{}",
                self.name, key.0, key.1
            )));
        }
        self.vectors.insert(key, v);
        Ok(())
    }

    pub fn get(&self, subject: &SubjectId, task: ElicitationTask) -> Option<&[f64]> {
        self.vectors
            .get(&(subject.clone(), task))
            .map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SampleKey, &Vec<f64>)> {
        self.vectors.iter()
    }

    /// (subject, task) pairs of `cohort` with no stored vector.
    pub fn missing_for<L>(&self, cohort: &Cohort<L>, tasks: &[ElicitationTask]) -> Vec<SampleKey> {
        let mut out = Vec::new();
        for s in cohort.subjects() {
            for &t in tasks {
                if self.get(&s.id, t).is_none() {
                    out.push((s.id.clone(), t));
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("subject_id,task");
        for i in 0..self.dim {
            out.push_str(&format!(",v{i}"));
        }
        out.push('\n');
        for ((id, task), v) in &self.vectors {
            out.push_str(id.as_str());
            out.push(',');
            out.push_str(task.as_str());
            for x in v {
                out.push(',');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::error::write_file(path, self.to_csv())
    }
}

/// Loads a vector file, validating every row against `dim`.
pub fn load_feature_set(path: &Path, name: &str, dim: usize) -> Result<FeatureSet> {
    let text = crate::error::read_to_string(path)?;
    let mut set = FeatureSet::new(name, dim)?;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let id = fields.next().unwrap_or("");
        if id == "subject_id" {
            continue;
        }
        let task: ElicitationTask = fields
            .next()
            .ok_or_else(|| Error::parse(path, lineno, "missing task column"))?
            .parse()
            .map_err(|e: Error| Error::parse(path, lineno, e.to_string()))?;
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::parse(path, lineno, format!("non-numeric value {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != dim {
            return Err(Error::parse(
                path,
                lineno,
                format!("row for {id}/{task} has {} values, expected {dim}", values.len()),
            ));
        }
        set.insert(SubjectId::new(id), task, values)
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
    }
    if set.is_empty() {
        log::warn!("{}: feature set {name:?} is empty", path.display());
    }
    Ok(set)
}

/// Named feature sets; names are unique.
#[derive(Debug, Clone, Default)]
pub struct FeatureRegistry {
    sets: BTreeMap<String, FeatureSet>,
}

impl FeatureRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, set: FeatureSet) -> Result<()> {
        if self.sets.contains_key(&set.name) {
            return Err(Error::invalid(format!(
                "feature set {:?} already registered",
                set.name
            )));
        }
        self.sets.insert(set.name.clone(), set);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&FeatureSet> {
        self.sets.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sets.keys().map(String::as_str)
    }
}

/// Signed feature hashing of token n-grams.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturizerConfig {
    pub orders: Vec<usize>,
    pub dim: usize,
    pub seed: u64,
}

impl FeaturizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("featurizer dim must be positive"));
        }
        if self.orders.is_empty() || self.orders.contains(&0) {
            return Err(Error::invalid("featurizer n-gram orders must be nonempty and positive"));
        }
        Ok(())
    }
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        FeaturizerConfig {
            orders: vec![1, 2],
            dim: 512,
            seed: 0,
        }
    }
}

/// Where a named feature space comes from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum FeatureSource {
    /// Hashed n-grams of the pause-encoded alignment.
    Hashed {
        orders: Vec<usize>,
        dim: usize,
        #[serde(default)]
        seed: u64,
        /// Keep pause symbols; `false` featurizes words only.
        #[serde(default = "yes")]
        pauses: bool,
    },
    /// The ten silence statistics of the VAD file.
    Silence,
    /// A vector file; relative paths resolve against the manifest directory.
    Stored { path: PathBuf, dim: usize },
}

fn yes() -> bool {
    true
}

/// A feature source under a name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureBinding {
    pub name: String,
    #[serde(flatten)]
    pub source: FeatureSource,
}

impl FeatureBinding {
    pub fn hashed(name: &str, orders: &[usize], dim: usize, seed: u64) -> Self {
        FeatureBinding {
            name: name.into(),
            source: FeatureSource::Hashed {
                orders: orders.to_vec(),
                dim,
                seed,
                pauses: true,
            },
        }
    }

    pub fn stored(name: &str, path: impl Into<PathBuf>, dim: usize) -> Self {
        FeatureBinding {
            name: name.into(),
            source: FeatureSource::Stored { path: path.into(), dim },
        }
    }

    pub fn silence(name: &str) -> Self {
        FeatureBinding {
            name: name.into(),
            source: FeatureSource::Silence,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.source {
            FeatureSource::Hashed { dim, .. } | FeatureSource::Stored { dim, .. } => *dim,
            FeatureSource::Silence => crate::silence::SILENCE_DIM,
        }
    }

    pub fn featurizer_config(&self) -> Option<FeaturizerConfig> {
        match &self.source {
            FeatureSource::Hashed { orders, dim, seed, .. } => Some(FeaturizerConfig {
                orders: orders.clone(),
                dim: *dim,
                seed: *seed,
            }),
            _ => None,
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fmix64(mut k: u64) -> u64 {
    k ^= k >> 33;
    k = k.wrapping_mul(0xff51_afd7_ed55_8ccd);
    k ^= k >> 33;
    k = k.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    k ^ (k >> 33)
}

/// Seeded, platform-independent 64-bit hash of an n-gram.
fn hash_ngram<S: AsRef<str>>(gram: &[S], seed: u64) -> u64 {
    let mut h = FNV_OFFSET ^ fmix64(seed);
    let mut feed = |b: u8| {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    };
    feed(gram.len() as u8);
    for tok in gram {
        for &b in tok.as_ref().as_bytes() {
            feed(b);
        }
        feed(0x1f);
    }
    fmix64(h)
}

/// Maps tokens to an L2-normalized hashed n-gram vector of length `config.dim`.
///
/// Pause symbols are ordinary tokens. The all-zero vector is returned
/// unnormalized.
pub fn hashed_ngram_featurize<S: AsRef<str>>(tokens: &[S], config: &FeaturizerConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let mut v = vec![0.0; config.dim];
    for &n in &config.orders {
        if tokens.len() < n {
            continue;
        }
        for gram in tokens.windows(n) {
            let h = hash_ngram(gram, config.seed);
            let index = (h % config.dim as u64) as usize;
            let sign = if fmix64(h ^ 0x9e37_79b9_7f4a_7c15) >> 63 == 0 {
                1.0
            } else {
                -1.0
            };
            v[index] += sign;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_normalized() {
        let cfg = FeaturizerConfig::default();
        let t = ["the", ",", "boy", "...", "took"];
        let a = hashed_ngram_featurize(&t, &cfg).unwrap();
        let b = hashed_ngram_featurize(&t, &cfg).unwrap();
        assert_eq!(a, b);
        let n: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_tokens_zero_vector() {
        let v = hashed_ngram_featurize::<&str>(&[], &FeaturizerConfig::default()).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn bigrams_are_order_sensitive() {
        let cfg = FeaturizerConfig {
            orders: vec![1, 2],
            dim: 1024,
            seed: 3,
        };
        let a = hashed_ngram_featurize(&["the", "boy"], &cfg).unwrap();
        let b = hashed_ngram_featurize(&["boy", "the"], &cfg).unwrap();
        assert_ne!(a, b);
        let uni = FeaturizerConfig {
            orders: vec![1],
            ..cfg
        };
        assert_eq!(
            hashed_ngram_featurize(&["the", "boy"], &uni).unwrap(),
            hashed_ngram_featurize(&["boy", "the"], &uni).unwrap()
        );
    }

    #[test]
    fn zero_dim_rejected() {
        let cfg = FeaturizerConfig {
            orders: vec![1],
            dim: 0,
            seed: 0,
        };
        assert!(hashed_ngram_featurize(&["a"], &cfg).is_err());
    }

    #[test]
    fn registry_names_unique() {
        let mut r = FeatureRegistry::new();
        r.register(FeatureSet::new("silence", 10).unwrap()).unwrap();
        assert!(r.register(FeatureSet::new("silence", 10).unwrap()).is_err());
    }

    #[test]
    fn insert_validates_length() {
        let mut s = FeatureSet::new("w2v", 3).unwrap();
        assert!(s
            .insert(SubjectId::new("a"), ElicitationTask::Ctd, vec![1.0, 2.0])
            .is_err());
        s.insert(SubjectId::new("a"), ElicitationTask::Ctd, vec![1.0, 2.0, 3.0])
            .unwrap();
        assert!(s
            .insert(SubjectId::new("a"), ElicitationTask::Ctd, vec![1.0, 2.0, 3.0])
            .is_err());
    }
}
