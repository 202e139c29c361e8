//! Synthetic cohorts with class-dependent pause and lexical statistics.
//!
//! Every subject gets a latent impairment `e ~ N(0, 1)`. Within a class,
//! larger `e` lowers the MMSE score and raises pause rate, pause length and
//! filler rate, so both the text and the silence features carry signal.
//! Stored embedding-like vector files are linear in the same latent plus
//! Gaussian noise.
//!
//! Output layout under the target directory:
//!
//! ```text
//! manifest.csv          development cohort
//! test_manifest.csv     held-out cohort (every subject scored)
//! data/<id>/<task>.txt  raw transcript with annotation tags
//! data/<id>/<task>.align.csv
//! data/<id>/<task>.vad.csv
//! features/<name>.csv   one vector file per stored feature set
//! synth.json            the generating config and seed
//! ```

use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::cascade::derive_seed;
use crate::corpus::{
    write_manifest, Cohort, Diagnosis, ElicitationTask, Mmse, Provenance, Subject, SubjectId, TaskArtifacts,
};
use crate::error::{write_file, Error, Result};
use crate::features::{FeatureBinding, FeatureSet};
use crate::silence::{format_vad, VadFile, VadSegment};
use crate::transcript::{format_alignment, AlignedToken, SIL};

/// Per-class generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    /// Probability of a marked pause after each non-final word.
    pub pause_prob: f64,
    pub pause_median_sec: f64,
    /// Probability of a filler or repetition before each word.
    pub filler_prob: f64,
    /// Fraction of the task vocabulary the speaker draws from.
    pub vocab_fraction: f64,
    pub words_ctd: usize,
    pub words_fluency: usize,
    pub mmse_mean: f64,
}

/// A stored vector file to generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredSpec {
    pub name: String,
    pub dim: usize,
    /// Loading of the latent score on each dimension.
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_dev: usize,
    pub n_test: usize,
    /// HC : MCI : Dementia.
    pub proportions: [u32; 3],
    /// HC, MCI, Dementia.
    pub profiles: [ClassProfile; 3],
    pub mmse_sd: f64,
    /// Fraction of development subjects with a recorded MMSE score.
    pub mmse_fraction: f64,
    pub stored: Vec<StoredSpec>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_dev: 157,
            n_test: 60,
            proportions: [5, 4, 1],
            profiles: [
                ClassProfile {
                    pause_prob: 0.12,
                    pause_median_sec: 0.35,
                    filler_prob: 0.02,
                    vocab_fraction: 1.0,
                    words_ctd: 70,
                    words_fluency: 18,
                    mmse_mean: 28.0,
                },
                ClassProfile {
                    pause_prob: 0.22,
                    pause_median_sec: 0.6,
                    filler_prob: 0.07,
                    vocab_fraction: 0.75,
                    words_ctd: 60,
                    words_fluency: 13,
                    mmse_mean: 25.0,
                },
                ClassProfile {
                    pause_prob: 0.35,
                    pause_median_sec: 1.1,
                    filler_prob: 0.14,
                    vocab_fraction: 0.5,
                    words_ctd: 45,
                    words_fluency: 8,
                    mmse_mean: 20.0,
                },
            ],
            mmse_sd: 2.0,
            mmse_fraction: 69.0 / 157.0,
            stored: vec![
                StoredSpec { name: "w2v".into(), dim: 32, strength: 0.5 },
                StoredSpec { name: "egemaps".into(), dim: 16, strength: 0.35 },
                StoredSpec { name: "compare".into(), dim: 24, strength: 0.3 },
                StoredSpec { name: "roberta".into(), dim: 32, strength: 0.6 },
            ],
        }
    }
}

impl SynthConfig {
    /// Class counts for `n` subjects by largest remainder; earlier classes
    /// win remainder ties.
    pub fn class_counts(&self, n: usize) -> Result<[usize; 3]> {
        let total: u64 = self.proportions.iter().map(|&p| p as u64).sum();
        if self.proportions.contains(&0) {
            return Err(Error::invalid("class proportions must all be positive"));
        }
        let mut counts = [0usize; 3];
        let mut rema = [0u64; 3];
        for k in 0..3 {
            let num = n as u64 * self.proportions[k] as u64;
            counts[k] = (num / total) as usize;
            rema[k] = num % total;
        }
        let mut left = n - counts.iter().sum::<usize>();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| rema[b].cmp(&rema[a]).then(a.cmp(&b)));
        for &k in &order {
            if left == 0 {
                break;
            }
            counts[k] += 1;
            left -= 1;
        }
        if n > 0 && counts.contains(&0) {
            return Err(Error::invalid(format!(
                "{n} subjects give class counts {counts:?}; every class needs at least one subject"
            )));
        }
        Ok(counts)
    }

    pub fn validate(&self) -> Result<()> {
        self.class_counts(self.n_dev)?;
        if self.n_dev == 0 {
            return Err(Error::invalid("synthetic cohort needs at least one subject"));
        }
        if !(0.0..=1.0).contains(&self.mmse_fraction) {
            return Err(Error::invalid("mmse fraction must lie in [0, 1]"));
        }
        if !(self.mmse_sd >= 0.0) {
            return Err(Error::invalid("mmse sd must be non-negative"));
        }
        for p in &self.profiles {
            if !(0.0..1.0).contains(&p.pause_prob) || !(0.0..1.0).contains(&p.filler_prob) {
                return Err(Error::invalid("pause and filler probabilities must lie in [0, 1)"));
            }
            if !(p.vocab_fraction > 0.0 && p.vocab_fraction <= 1.0) || !(p.pause_median_sec > 0.0) {
                return Err(Error::invalid("vocab fraction must lie in (0, 1] and pause median be positive"));
            }
        }
        for s in &self.stored {
            if s.dim == 0 {
                return Err(Error::invalid(format!("stored feature set {} has dim 0", s.name)));
            }
        }
        Ok(())
    }

    /// Moves the HC and Dementia speech profiles toward the MCI profile:
    /// `mci + s * (profile - mci)`. `s = 1` keeps the config, `s = 0` makes
    /// the speech of all classes identically distributed. MMSE means are kept.
    pub fn with_separation(mut self, s: f64) -> Result<Self> {
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::invalid("separation must be a non-negative finite number"));
        }
        let mci = self.profiles[1].clone();
        let lerp = |a: f64, b: f64| a + s * (b - a);
        let lerp_n = |a: usize, b: usize| lerp(a as f64, b as f64).round().max(1.0) as usize;
        for k in [0, 2] {
            let p = &mut self.profiles[k];
            p.pause_prob = lerp(mci.pause_prob, p.pause_prob);
            p.pause_median_sec = lerp(mci.pause_median_sec, p.pause_median_sec);
            p.filler_prob = lerp(mci.filler_prob, p.filler_prob);
            p.vocab_fraction = lerp(mci.vocab_fraction, p.vocab_fraction);
            p.words_ctd = lerp_n(mci.words_ctd, p.words_ctd);
            p.words_fluency = lerp_n(mci.words_fluency, p.words_fluency);
        }
        self.validate()?;
        Ok(self)
    }

    /// Bindings for the stored vector files this config writes.
    pub fn stored_bindings(&self) -> Vec<FeatureBinding> {
        self.stored
            .iter()
            .map(|s| FeatureBinding::stored(&s.name, format!("features/{}.csv", s.name), s.dim))
            .collect()
    }
}

const CTD_VOCAB: &[&str] = &[
    "the", "boy", "is", "taking", "cookies", "from", "jar", "and", "he", "on", "stool", "falling",
    "over", "girl", "reaching", "for", "cookie", "mother", "washing", "dishes", "sink", "water",
    "overflowing", "floor", "she", "drying", "plate", "window", "curtains", "outside", "garden",
    "cupboard", "open", "kitchen", "two", "cups", "lady", "not", "noticing", "wet", "shoes",
    "standing", "laughing", "quiet", "grass", "path", "tipping", "spilling",
];
const PFT_VOCAB: &[&str] = &[
    "pen", "paper", "pig", "pan", "pot", "pie", "park", "page", "pink", "pillow", "pencil",
    "pepper", "potato", "piano", "pocket", "puppy", "purple", "parrot", "picnic", "planet",
    "plate", "plum", "pump", "pine", "pearl", "pilot", "power", "price", "prince", "puzzle",
];
const SFT_VOCAB: &[&str] = &[
    "dog", "cat", "horse", "cow", "pig", "sheep", "lion", "tiger", "elephant", "giraffe",
    "zebra", "monkey", "bear", "wolf", "fox", "rabbit", "mouse", "deer", "goat", "chicken",
    "duck", "eagle", "snake", "frog", "whale", "dolphin", "shark", "camel", "kangaroo", "owl",
];
const FILLERS: &[&str] = &["uh", "um", "er", "well"];
const NOISE_TAGS: &[&str] = &["[NOISE]", "[LAUGH]", "[COUGH]", "[INV]"];

fn vocab(task: ElicitationTask) -> &'static [&'static str] {
    match task {
        ElicitationTask::Ctd => CTD_VOCAB,
        ElicitationTask::Pft => PFT_VOCAB,
        ElicitationTask::Sft => SFT_VOCAB,
    }
}

/// Generated artifacts of one (subject, task).
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecording {
    pub alignment: Vec<AlignedToken>,
    pub vad: VadFile,
    pub transcript: String,
}

/// One generated subject before anything is written.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSubject {
    pub id: String,
    pub diagnosis: Diagnosis,
    /// Latent impairment within the class.
    pub latent: f64,
    /// MMSE before rounding and clamping.
    pub mmse_continuous: f64,
    pub mmse: Mmse,
    pub recordings: Vec<(ElicitationTask, TaskRecording)>,
}

fn ms(t: u64) -> f64 {
    t as f64 / 1000.0
}

fn record_task(task: ElicitationTask, profile: &ClassProfile, latent: f64, rng: &mut ChaCha8Rng) -> TaskRecording {
    let words = vocab(task);
    let breadth = ((words.len() as f64 * profile.vocab_fraction).ceil() as usize).clamp(1, words.len());
    let active = &words[..breadth];
    let pause_prob = (profile.pause_prob * (0.3 * latent).exp()).min(0.9);
    let filler_prob = (profile.filler_prob * (0.3 * latent).exp()).min(0.9);
    let median = profile.pause_median_sec * (0.2 * latent).exp();
    let pause_dist = LogNormal::new(median.ln(), 0.5).expect("finite median");
    let mean_words = match task {
        ElicitationTask::Ctd => profile.words_ctd,
        _ => profile.words_fluency,
    } as f64;
    let n_words = Normal::new(mean_words, 0.15 * mean_words)
        .expect("positive sd")
        .sample(rng)
        .round()
        .max(3.0) as usize;

    let mut spoken: Vec<&str> = Vec::with_capacity(n_words + 8);
    for _ in 0..n_words {
        if !spoken.is_empty() && rng.random::<f64>() < filler_prob {
            if rng.random::<bool>() {
                spoken.push(FILLERS.choose(rng).expect("nonempty"));
            } else {
                spoken.push(spoken[spoken.len() - 1]);
            }
        }
        spoken.push(active.choose(rng).expect("nonempty"));
    }

    // Times in integer milliseconds keep the 3-decimal files exact.
    let mut tokens = Vec::new();
    let mut t: u64 = 0;
    let lead = rng.random_range(300..1500);
    tokens.push(AlignedToken::new(SIL, 0.0, ms(lead)));
    t += lead;
    let mut transcript = String::from("[PAR]");
    let mut speech: Vec<(u64, u64)> = Vec::new();
    for (i, w) in spoken.iter().enumerate() {
        let d = rng.random_range(180..550);
        tokens.push(AlignedToken::new(*w, ms(t), ms(t + d)));
        speech.push((t, t + d));
        t += d;
        let word = if i == 0 {
            let mut c = w.chars();
            c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
        } else {
            w.to_string()
        };
        transcript.push(' ');
        transcript.push_str(&word);
        if i + 1 == spoken.len() {
            break;
        }
        if rng.random::<f64>() < pause_prob {
            let p = ((pause_dist.sample(rng) * 1000.0).round() as u64).max(60);
            tokens.push(AlignedToken::new(SIL, ms(t), ms(t + p)));
            t += p;
            if p >= 2000 {
                transcript.push_str(&format!(" ({:.1})", p as f64 / 1000.0));
            }
        } else {
            let r = rng.random::<f64>();
            if r < 0.05 {
                t += rng.random_range(60..150);
            } else if r < 0.3 {
                t += rng.random_range(10..40);
            }
        }
        if rng.random::<f64>() < 0.03 {
            transcript.push(' ');
            transcript.push_str(NOISE_TAGS.choose(rng).expect("nonempty"));
        }
    }
    transcript.push_str(".\n");
    let trail = rng.random_range(300..2000);
    tokens.push(AlignedToken::new(SIL, ms(t), ms(t + trail)));
    t += trail;

    // The detector bridges gaps shorter than 200 ms.
    let mut segments: Vec<(u64, u64)> = Vec::new();
    for (s, e) in speech {
        match segments.last_mut() {
            Some(last) if s - last.1 < 200 => last.1 = e,
            _ => segments.push((s, e)),
        }
    }
    TaskRecording {
        alignment: tokens,
        vad: VadFile {
            total_duration: ms(t),
            segments: segments.into_iter().map(|(s, e)| VadSegment::new(ms(s), ms(e))).collect(),
        },
        transcript,
    }
}

/// Generates `n` subjects in memory. Subject `i` depends only on
/// `(config, seed, prefix, i)`.
pub fn synth_subjects(config: &SynthConfig, n: usize, seed: u64, prefix: &str) -> Result<Vec<SynthSubject>> {
    let counts = config.class_counts(n)?;
    let mut labels: Vec<Diagnosis> = Vec::with_capacity(n);
    for (k, &c) in counts.iter().enumerate() {
        labels.extend(std::iter::repeat_n(Diagnosis::ALL[k], c));
    }
    let prefix_salt = prefix.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64));
    let base = derive_seed(seed, prefix_salt);
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(base));

    let mut out = Vec::with_capacity(n);
    for (i, &diagnosis) in labels.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base, i as u64 + 1));
        let profile = &config.profiles[diagnosis.index()];
        let latent: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(&mut rng);
        let mmse_continuous = profile.mmse_mean - config.mmse_sd * latent;
        let mmse = Mmse::new(mmse_continuous.round().clamp(0.0, 30.0) as u8)?;
        let recordings = ElicitationTask::ALL
            .iter()
            .map(|&task| (task, record_task(task, profile, latent, &mut rng)))
            .collect();
        out.push(SynthSubject {
            id: format!("{prefix}{:04}", i + 1),
            diagnosis,
            latent,
            mmse_continuous,
            mmse,
            recordings,
        });
    }
    Ok(out)
}

/// Stored vectors: `strength * z * a + noise`, with `z` the standardized
/// MMSE deficit and `a` a per-(set, task) loading vector fixed by the seed.
fn stored_vectors(spec: &StoredSpec, seed: u64, subjects: &[&SynthSubject]) -> Result<FeatureSet> {
    let salt = spec.name.bytes().fold(7u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, salt));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let loadings: Vec<Vec<f64>> = ElicitationTask::ALL
        .iter()
        .map(|_| (0..spec.dim).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    let mut set = FeatureSet::new(&spec.name, spec.dim)?;
    for s in subjects {
        let z = (27.0 - s.mmse_continuous) / 4.0;
        for (t, task) in ElicitationTask::ALL.iter().enumerate() {
            let v: Vec<f64> = loadings[t]
                .iter()
                .map(|a| spec.strength * z * a + normal.sample(&mut rng))
                .collect();
            set.insert(SubjectId::new(&s.id), *task, v)?;
        }
    }
    Ok(set)
}


/// Paths of the files written by [`synth_cohort`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthOutput {
    pub manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub features: Vec<PathBuf>,
}

fn to_cohort(subjects: &[SynthSubject], scored: &[bool], root: &Path, seed: u64) -> Result<Cohort> {
    let rows = subjects
        .iter()
        .zip(scored)
        .map(|(s, &keep)| {
            let mut subject = Subject::new(&s.id, s.diagnosis, keep.then_some(s.mmse));
            for (task, _) in &s.recordings {
                let stem = format!("data/{}/{}", s.id, task.as_str().to_lowercase());
                subject.artifacts.insert(
                    *task,
                    TaskArtifacts {
                        transcript: Some(PathBuf::from(format!("{stem}.txt"))),
                        alignment: Some(PathBuf::from(format!("{stem}.align.csv"))),
                        vad: Some(PathBuf::from(format!("{stem}.vad.csv"))),
                    },
                );
            }
            subject
        })
        .collect();
    Cohort::new(rows, root.to_path_buf(), Provenance::Synthetic { seed })
}

fn write_subject(dir: &Path, s: &SynthSubject) -> Result<()> {
    for (task, rec) in &s.recordings {
        let stem = dir.join("data").join(&s.id).join(task.as_str().to_lowercase());
        write_file(&stem.with_extension("txt"), &rec.transcript)?;
        write_file(&stem.with_extension("align.csv"), format_alignment(&rec.alignment))?;
        write_file(&stem.with_extension("vad.csv"), format_vad(&rec.vad))?;
    }
    Ok(())
}

/// Generates and writes a development and a test cohort under `dir`.
/// Output bytes depend only on `(config, seed)`.
pub fn synth_cohort(config: &SynthConfig, seed: u64, dir: &Path) -> Result<(Cohort, SynthOutput)> {
    config.validate()?;
    let dev = synth_subjects(config, config.n_dev, seed, "S")?;
    let test = if config.n_test > 0 {
        synth_subjects(config, config.n_test, seed, "T")?
    } else {
        Vec::new()
    };

    let n_scored = ((config.n_dev as f64 * config.mmse_fraction).round() as usize).min(config.n_dev);
    let mut order: Vec<usize> = (0..config.n_dev).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5c0e)));
    let mut scored = vec![false; config.n_dev];
    for &i in &order[..n_scored] {
        scored[i] = true;
    }

    for s in dev.iter().chain(&test) {
        write_subject(dir, s)?;
    }
    let cohort = to_cohort(&dev, &scored, dir, seed)?;
    let manifest = dir.join("manifest.csv");
    write_manifest(&cohort, &manifest)?;
    let test_manifest = dir.join("test_manifest.csv");
    let test_cohort = to_cohort(&test, &vec![true; test.len()], dir, seed)?;
    write_manifest(&test_cohort, &test_manifest)?;

    let everyone: Vec<&SynthSubject> = dev.iter().chain(&test).collect();
    let mut features = Vec::new();
    for spec in &config.stored {
        let set = stored_vectors(spec, seed, &everyone)?;
        let path = dir.join("features").join(format!("{}.csv", spec.name));
        set.save(&path)?;
        features.push(path);
    }

    #[derive(Serialize)]
    struct Record<'a> {
        seed: u64,
        config: &'a SynthConfig,
    }
    let text = serde_json::to_string_pretty(&Record { seed, config })
        .map_err(|e| Error::Serialization(e.to_string()))?;
    write_file(&dir.join("synth.json"), text + "\n")?;

    Ok((
        cohort,
        SynthOutput {
            manifest,
            test_manifest,
            features,
        },
    ))
}
