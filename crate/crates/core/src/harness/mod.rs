//! Evaluation, metrics, ablations and output files.

mod ablate;
mod emit;
mod eval;

use thiserror::Error;

use crate::nnet::gradcheck::{dense_case, gcn_case, lstm_case, GradCheck};
use crate::nnet::Activation;
use crate::policy::gradcheck::composite_case;
use crate::scene::SceneError;
use crate::trainer::TrainerError;
use crate::vision::VisionError;

pub use ablate::{
    ablate, commit_sources, pooled, pretrain_heads, question_histogram, AblationConfig, AblationReport, CommitSources,
    ObjectCountRow, QuestionTypes,
};
pub use emit::{
    emit, ensure_dir, transcript_line, write_ablation, write_curve, write_summary, write_training_curve,
    write_transcripts, write_visual, EvalRun, REPORTED_ROUNDS,
};
pub use eval::{
    auc, evaluate, evaluate_fold, fold_seed, mean_curve, mean_std, recall_at, EvalConfig, FoldResult, VisionStart,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Vision(#[from] VisionError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// Dense (three activations), LSTM, GCN and composite policy-loss
/// gradient checks for each seed.
pub fn grad_suite(seeds: std::ops::Range<u64>) -> Vec<GradCheck> {
    let mut out = Vec::new();
    for seed in seeds {
        for act in [Activation::Relu, Activation::Tanh, Activation::Sigmoid] {
            out.push(dense_case(seed, act));
        }
        out.push(lstm_case(seed));
        out.push(gcn_case(seed));
        out.push(composite_case(seed));
    }
    out
}
