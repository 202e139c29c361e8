//! Speech-based cognitive screening pipeline.
//!
//! The crate turns force-aligned transcripts and VAD segmentations into
//! features, trains a two-stage cascade (healthy vs. patient, then MCI vs.
//! dementia) and a pool of MMSE regressors, and aggregates grids of such
//! models by majority voting and gated score averaging.
//!
//! Modules follow the data flow:
//!
//! * [`corpus`]: cohorts, manifests, relabeling, stratified splits
//! * [`synth`]: synthetic cohorts with class-dependent pause statistics
//! * [`transcript`], [`pause`]: transcript cleaning and pause encoding
//! * [`silence`]: ten silence statistics from VAD segments
//! * [`features`]: feature sets and the hashed n-gram featurizer
//! * [`learners`]: classification head, SVR, boosted trees, grid search
//! * [`cascade`], [`ensemble`]: cascade routing, voting, score averaging
//! * [`evaluation`]: macro F1, RMSE, WER and report tables
//! * [`pipeline`]: experiment orchestration used by the CLI

pub mod artifact;
pub mod cascade;
pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod learners;
pub mod pause;
pub mod pipeline;
pub mod silence;
pub mod synth;
pub mod transcript;

pub use error::{Error, Result};
