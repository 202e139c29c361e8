//! Command-line entry point.
//!
//! Every failure prints one line `error[<class>]: <detail>` to stderr and
//! exits with status 1; usage errors exit with status 2.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use speechcascade::cascade::{train_cascade, train_direct3, CascadeModel, DirectModel, FeatureBindingRef, LabeledSet};
use speechcascade::corpus::{load_manifest, stratified_split, Cohort, Diagnosis, ElicitationTask, SplitRatio, SplitSpec, StratificationKey, SubjectId};
use speechcascade::ensemble::TiePolicy;
use speechcascade::error::{read_to_string, write_file};
use speechcascade::evaluation::{macro_f1, rmse, wer_text};
use speechcascade::features::FeatureBinding;
use speechcascade::pause::PauseEncoder;
use speechcascade::pipeline::{cascade_predictions_csv, materialize, Experiment, PipelineConfig};
use speechcascade::silence::{parse_vad, silence_vector, SILENCE_FEATURE_NAMES};
use speechcascade::synth::{synth_cohort, SynthConfig};
use speechcascade::transcript::{format_alignment, load_transcript, parse_alignment};
use speechcascade::{Error, Result};

#[derive(Parser)]
#[command(name = "speechcascade", version, about = "Speech-based cognitive screening pipeline")]
struct Cli {
    /// Log filter, e.g. `info` or `speechcascade=debug`.
    #[arg(long, global = true, env = "SPEECHCASCADE_LOG", default_value = "warn")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic development and test cohort.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_dev: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        /// TOML file with generator parameters.
        #[arg(long)]
        synth_config: Option<PathBuf>,
    },
    /// Clean a transcript or validate an alignment file.
    Parse {
        #[arg(long, conflicts_with = "alignment", required_unless_present = "alignment")]
        transcript: Option<PathBuf>,
        #[arg(long)]
        alignment: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pause-encode an alignment file.
    EncodePauses {
        #[arg(long)]
        alignment: PathBuf,
        #[arg(long, default_value_t = speechcascade::pause::DEFAULT_MIN_GAP_SEC)]
        min_gap: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Silence statistics of one VAD file, or a vector file for a cohort.
    SilenceFeatures {
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        vad: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the vector file of one feature binding over a cohort.
    Featurize {
        #[command(flatten)]
        run: RunArgs,
        /// Binding name from the config.
        #[arg(long, default_value = "ngram-12")]
        feature: String,
    },
    /// Stratified train/validation split.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "3:1")]
        ratio: SplitRatio,
        #[arg(long, value_enum, default_value_t = KeyArg::Diagnosis)]
        key: KeyArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one cascade (and optionally a three-class baseline).
    TrainCascade {
        #[command(flatten)]
        run: RunArgs,
        /// Split file; training uses its train part. Default: whole cohort.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, default_value = "ngram-12")]
        feature: String,
        #[arg(long, default_value = "CTD")]
        task: ElicitationTask,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output model file.
        #[arg(long)]
        model: PathBuf,
        /// Also train and write a three-class baseline here.
        #[arg(long)]
        direct: Option<PathBuf>,
    },
    /// Run the gated regression pool over all splits.
    TrainRegress {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Apply a trained cascade or three-class model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Restrict to the validation part of this split.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cascade grid with stage-wise majority voting over all splits.
    Ensemble {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a prediction file, or compute WER between two texts.
    Evaluate {
        #[arg(long, requires = "manifest", required_unless_present = "reference")]
        predictions: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, requires = "hypothesis")]
        reference: Option<PathBuf>,
        #[arg(long)]
        hypothesis: Option<PathBuf>,
    },
    /// Cascaded vs direct three-class classification across splits.
    Compare {
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KeyArg {
    Diagnosis,
    MmseBin,
}

/// Options shared by the experiment commands; each overrides the config.
#[derive(Args, Clone)]
struct RunArgs {
    /// TOML pipeline config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    test_manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated split seeds.
    #[arg(long, value_delimiter = ',')]
    split_seeds: Option<Vec<u64>>,
    /// Comma-separated training seeds per grid cell.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    tie_policy: Option<TiePolicy>,
    #[arg(long)]
    rmse_threshold: Option<f64>,
    #[arg(long)]
    stage1_threshold: Option<f64>,
    /// Skip retraining on the full development cohort.
    #[arg(long)]
    no_retrain: bool,
    /// Worker threads (0 = one per core).
    #[arg(long, env = "SPEECHCASCADE_JOBS")]
    jobs: Option<usize>,
}

impl RunArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = &self.manifest {
            cfg.manifest = Some(v.clone());
        }
        if let Some(v) = &self.test_manifest {
            cfg.test_manifest = Some(v.clone());
        }
        if let Some(v) = &self.out {
            cfg.output = v.clone();
        }
        if let Some(v) = &self.split_seeds {
            cfg.split_seeds = v.clone();
        }
        if let Some(v) = &self.seeds {
            cfg.ensemble.seeds = v.clone();
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.tie_policy {
            cfg.ensemble.tie_policy = v;
        }
        if let Some(v) = self.rmse_threshold {
            cfg.ensemble.rmse_threshold = v;
        }
        if let Some(v) = self.stage1_threshold {
            cfg.stage1_threshold = v;
        }
        if self.no_retrain {
            cfg.retrain_full = false;
        }
        if let Some(v) = self.jobs {
            cfg.jobs = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cohort_ids(cohort: &Cohort, split: Option<&SplitSpec>, train: bool) -> Vec<SubjectId> {
    match split {
        Some(s) if train => s.train.clone(),
        Some(s) => s.validation.clone(),
        None => cohort.subjects().iter().map(|s| s.id.clone()).collect(),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            seed,
            out,
            n_dev,
            n_test,
            synth_config,
        } => {
            let mut cfg = match synth_config {
                Some(p) => toml::from_str(&read_to_string(&p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
                None => SynthConfig::default(),
            };
            if let Some(n) = n_dev {
                cfg.n_dev = n;
            }
            if let Some(n) = n_test {
                cfg.n_test = n;
            }
            let (cohort, files) = synth_cohort(&cfg, seed, &out)?;
            println!(
                "wrote {} development subjects ({} HC, {} MCI, {} Dementia) to {}",
                cohort.len(),
                cohort.count(Diagnosis::Hc),
                cohort.count(Diagnosis::Mci),
                cohort.count(Diagnosis::Dementia),
                files.manifest.display()
            );
            println!("test manifest: {}", files.test_manifest.display());
        }
        Command::Parse { transcript, alignment, out } => {
            if let Some(p) = transcript {
                let clean = load_transcript(&p)?;
                log::info!("{}: removed {} annotations", p.display(), clean.annotations_removed);
                emit(out.as_deref(), &(clean.text() + "\n"))?;
            } else if let Some(p) = alignment {
                let tokens = parse_alignment(&p)?;
                emit(out.as_deref(), &format_alignment(&tokens))?;
            }
        }
        Command::EncodePauses { alignment, min_gap, out } => {
            if !(min_gap >= 0.0) {
                return Err(Error::InvalidInput("min-gap must be non-negative".into()));
            }
            let tokens = parse_alignment(&alignment)?;
            let enc = PauseEncoder { min_gap }.encode(&tokens);
            for w in &enc.warnings {
                log::warn!("{}: {w}", alignment.display());
            }
            emit(out.as_deref(), &(enc.to_line() + "\n"))?;
        }
        Command::SilenceFeatures { vad, manifest, out } => {
            if let Some(p) = vad {
                let file = parse_vad(&p)?;
                let v = silence_vector(&file.segments, file.total_duration)?;
                let mut text = SILENCE_FEATURE_NAMES.join(",") + "\n";
                text += &v.0.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
                text.push('\n');
                emit(out.as_deref(), &text)?;
            } else if let Some(m) = manifest {
                let cohort = load_manifest(&m)?;
                let set = materialize(&FeatureBinding::silence("silence"), &[&cohort], None, 0.0)?;
                emit(out.as_deref(), &set.to_csv())?;
            }
        }
        Command::Featurize { run, feature } => {
            let out = run.out.clone().ok_or_else(|| Error::InvalidInput("featurize needs --out".into()))?;
            let cfg = run.config()?;
            let cohort = load_manifest(cfg.manifest_path()?)?;
            let binding = cfg.binding(&feature)?;
            let set = speechcascade::pipeline::with_jobs(cfg.jobs, || materialize(binding, &[&cohort], None, cfg.min_gap_sec))??;
            set.save(&out)?;
            println!("wrote {} vectors of dim {} to {}", set.len(), set.dim, out.display());
        }
        Command::Split {
            manifest,
            seed,
            ratio,
            key,
            out,
        } => {
            let cohort = load_manifest(&manifest)?;
            let spec = match key {
                KeyArg::Diagnosis => stratified_split(&cohort, ratio, seed, StratificationKey::Diagnosis)?,
                KeyArg::MmseBin => stratified_split(&cohort.with_mmse(), ratio, seed, StratificationKey::MmseBin)?,
            };
            spec.save(&out)?;
            println!("{} train / {} validation -> {}", spec.train.len(), spec.validation.len(), out.display());
        }
        Command::TrainCascade {
            run,
            split,
            feature,
            task,
            seed,
            model,
            direct,
        } => {
            let cfg = run.config()?;
            let cohort = load_manifest(cfg.manifest_path()?)?;
            let spec = split.as_deref().map(SplitSpec::load).transpose()?;
            let binding = cfg.binding(&feature)?.clone();
            let set = speechcascade::pipeline::with_jobs(cfg.jobs, || materialize(&binding, &[&cohort], None, cfg.min_gap_sec))??;
            let mut data = LabeledSet::default();
            for id in cohort_ids(&cohort, spec.as_ref(), true) {
                let s = cohort
                    .get(id.as_str())
                    .ok_or_else(|| Error::InvalidInput(format!("split names unknown subject {id}")))?;
                if let Some(x) = set.get(&id, task) {
                    data.push(id.clone(), s.diagnosis, x.to_vec());
                }
            }
            let train = speechcascade::learners::TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            let bref = FeatureBindingRef { binding, task };
            let m = train_cascade(&data, bref.clone(), &train, cfg.stage1_threshold)?;
            m.save(&model)?;
            println!(
                "stage 1 trained on {} ({} HC vs {} NonHC), stage 2 on {} ({} MCI vs {} Dementia) -> {}",
                m.stage1_counts.total(),
                m.stage1_counts.negative,
                m.stage1_counts.positive,
                m.stage2_counts.total(),
                m.stage2_counts.negative,
                m.stage2_counts.positive,
                model.display()
            );
            if let Some(p) = direct {
                train_direct3(&data, bref, &train)?.save(&p)?;
                println!("three-class baseline -> {}", p.display());
            }
        }
        Command::TrainRegress { run } => {
            let cfg = run.config()?;
            let exp = Experiment::load(cfg.clone())?;
            let outcome = exp.regression()?;
            outcome.write(&cfg.output, "train-regress", &cfg)?;
            print!("{}", outcome.report.to_table());
        }
        Command::Predict {
            model,
            manifest,
            split,
            config,
            out,
        } => {
            let min_gap = match &config {
                Some(p) => PipelineConfig::load(p)?.min_gap_sec,
                None => speechcascade::pause::DEFAULT_MIN_GAP_SEC,
            };
            let cohort = load_manifest(&manifest)?;
            let spec = split.as_deref().map(SplitSpec::load).transpose()?;
            let ids = cohort_ids(&cohort, spec.as_ref(), false);
            let text = match CascadeModel::load(&model) {
                Ok(m) => {
                    let set = materialize(&m.binding.binding, &[&cohort], None, min_gap)?;
                    let mut rows = Vec::new();
                    for id in ids {
                        match set.get(&id, m.binding.task) {
                            Some(x) => rows.push((id.clone(), m.infer(&id, x)?)),
                            None => log::warn!("subject {id} has no {} features; skipped", m.binding.binding.name),
                        }
                    }
                    cascade_predictions_csv(&rows)
                }
                Err(first) => {
                    let m = DirectModel::load(&model).map_err(|_| first)?;
                    let set = materialize(&m.binding.binding, &[&cohort], None, min_gap)?;
                    let mut text = String::from("subject_id,predicted_label,p_hc,p_mci,p_dementia\n");
                    for id in ids {
                        if let Some(x) = set.get(&id, m.binding.task) {
                            let (label, p) = m.predict(x)?;
                            text += &format!("{id},{label},{},{},{}\n", p[0], p[1], p[2]);
                        }
                    }
                    text
                }
            };
            emit(out.as_deref(), &text)?;
        }
        Command::Ensemble { run } => {
            let cfg = run.config()?;
            let exp = Experiment::load(cfg.clone())?;
            let outcome = exp.compare(false)?;
            outcome.write(&cfg.output, "ensemble", &cfg)?;
            print!("{}", outcome.report.to_table());
        }
        Command::Evaluate {
            predictions,
            manifest,
            reference,
            hypothesis,
        } => {
            if let (Some(r), Some(h)) = (reference, hypothesis) {
                let w = wer_text(&read_to_string(&r)?, &read_to_string(&h)?)?;
                println!("wer={} edits={} ref_len={}", w.rate(), w.edits, w.ref_len);
            } else if let (Some(p), Some(m)) = (predictions, manifest) {
                evaluate_predictions(&p, &m)?;
            }
        }
        Command::Compare { run } => {
            let cfg = run.config()?;
            let exp = Experiment::load(cfg.clone())?;
            let outcome = exp.compare(true)?;
            outcome.write(&cfg.output, "compare", &cfg)?;
            print!("{}", outcome.report.to_table());
        }
    }
    Ok(())
}

/// Macro F1 for `predicted_label` files, RMSE for `predicted_mmse` files.
fn evaluate_predictions(path: &Path, manifest: &Path) -> Result<()> {
    let cohort = load_manifest(manifest)?;
    let text = read_to_string(path)?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: e.to_string(),
    })?;
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (label_col, mmse_col) = (col("predicted_label"), col("predicted_mmse"));
    let mut truth_d = Vec::new();
    let mut pred_d = Vec::new();
    let mut truth_m = Vec::new();
    let mut pred_m = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let perr = |m: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: m,
        };
        let row = row.map_err(|e| perr(e.to_string()))?;
        let id = row.get(0).unwrap_or_default();
        let s = cohort.get(id).ok_or_else(|| perr(format!("subject {id:?} not in manifest")))?;
        if let Some(c) = label_col {
            let d: Diagnosis = row.get(c).unwrap_or_default().parse().map_err(|e: Error| perr(e.to_string()))?;
            truth_d.push(s.diagnosis);
            pred_d.push(d);
        } else if let Some(c) = mmse_col {
            let v: f64 = row.get(c).unwrap_or_default().parse().map_err(|_| perr("bad predicted_mmse".into()))?;
            let m = s.mmse.ok_or_else(|| perr(format!("subject {id} has no MMSE score")))?;
            truth_m.push(m.get() as f64);
            pred_m.push(v);
        }
    }
    match (label_col, mmse_col) {
        (Some(_), _) => println!("macro_f1={} n={}", macro_f1(&truth_d, &pred_d, &Diagnosis::ALL)?, truth_d.len()),
        (None, Some(_)) => println!("rmse={} n={}", rmse(&truth_m, &pred_m)?, truth_m.len()),
        _ => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: "expected a predicted_label or predicted_mmse column".into(),
            })
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let detail = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {detail}", e.class());
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        super::Cli::command().debug_assert();
    }
}
