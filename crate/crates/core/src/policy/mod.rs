//! Question policies: the learned recurrent graph network and three
//! heuristic baselines. All of them emit a [`QuestionAction`](crate::qdsl::QuestionAction).

pub mod baselines;
pub mod gradcheck;
pub mod loss;
pub mod network;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nnet::NnetError;

pub use baselines::{baseline_entropy, baseline_entropy_context, baseline_random, BaselineConfig};
pub use loss::{round_loss, LossParts, LossWeights, RoundTargets};
pub use network::{
    AffinityNorm, Chooser, DialogState, LastRound, PolicyConfig, PolicyNet, RawInput, RoundGrad, RoundOutput,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("every slot is committed; the dialog should have ended")]
    AllCommitted,
    #[error("policy built for {policy} concepts, memory has {memory}")]
    ConceptCount { policy: usize, memory: usize },
    #[error("previous-round record does not fit the current memory")]
    StaleHistory,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Nnet(#[from] NnetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Random,
    Entropy,
    EntropyContext,
    Learned,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::Random,
        PolicyKind::Entropy,
        PolicyKind::EntropyContext,
        PolicyKind::Learned,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::Entropy => "entropy",
            PolicyKind::EntropyContext => "entropy-context",
            PolicyKind::Learned => "learned",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown policy `{s}` (expected random, entropy, entropy-context or learned)"))
    }
}
