//! Episode loop: per episode, a fresh visual system learns from the oracle
//! over `n` sampled training images while the question policy collects
//! dialogs, then the policy takes an actor-critic step.

mod a2c;
mod rollout;

use std::path::PathBuf;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::MemoryError;
use crate::nnet::{NnetError, SampleMode};
use crate::policy::{PolicyConfig, PolicyError, PolicyNet};
use crate::qdsl::{ComposeError, ExecError};
use crate::scene::{AttributeSchema, Dataset, SceneError, SceneGenConfig};
use crate::seeding::derive_seed;
use crate::vision::{AttributeHeads, FeatureSpace, VisionConfig, VisionError};

pub use a2c::{a2c_update, compute_returns, discounted_returns, normalize, A2cConfig, Returns, UpdateStats, STD_FLOOR};
pub use rollout::{
    rollout, run_image, Agent, DialogRecord, ImageRollout, RolloutSettings, RoundRecord, VisualLearner,
};

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Vision(#[from] VisionError),
    #[error(transparent)]
    Nnet(#[from] NnetError),
}

/// Where scenes come from: a dataset file, or a generator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub vocabulary: String,
    pub size: usize,
    pub seed: u64,
    pub generator: SceneGenConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            vocabulary: "standard".into(),
            size: 1800,
            seed: 0,
            generator: SceneGenConfig {
                min_objects: 5,
                max_objects: 8,
                ..Default::default()
            },
        }
    }
}

impl DataConfig {
    pub fn dataset(&self) -> Result<Dataset, TrainerError> {
        match &self.path {
            Some(p) => Ok(Dataset::load(p)?),
            None => Ok(Dataset::generate(
                AttributeSchema::by_name(&self.vocabulary)?,
                &self.generator,
                self.size,
                self.seed,
            )?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub seed: u64,
    /// Seeds the fixed feature embeddings of attribute values.
    pub world_seed: u64,
    pub episodes: usize,
    /// Images per episode (`n`).
    pub images: usize,
    /// Dialog rounds per image (`T`).
    pub budget: usize,
    /// Policy learning rate is multiplied by this after every episode.
    pub lr_decay: f64,
    /// Update after every image instead of once per episode.
    pub per_image_update: bool,
    /// Never train the visual system and skip bottom-up commits.
    pub static_vision: bool,
    pub a2c: A2cConfig,
    pub policy: PolicyConfig,
    pub vision: VisionConfig,
    pub data: DataConfig,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            world_seed: 0,
            episodes: 60,
            images: 30,
            budget: 20,
            lr_decay: 1.0,
            per_image_update: true,
            static_vision: false,
            a2c: A2cConfig::default(),
            policy: PolicyConfig::default(),
            vision: VisionConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl EpisodeConfig {
    /// The small default configuration.
    pub fn desk() -> Self {
        Self::default()
    }

    /// Full-length configuration: 200 episodes of 100 images, 50 rounds, 5 to 10 objects.
    pub fn paper_scale() -> Self {
        let mut c = Self {
            episodes: 200,
            images: 100,
            budget: 50,
            ..Self::default()
        };
        c.data.generator.max_objects = 10;
        c
    }

    pub fn validate(&self) -> Result<(), TrainerError> {
        let bad = |m: &str| Err(TrainerError::Config(m.into()));
        if self.episodes == 0 || self.images == 0 || self.budget == 0 {
            return bad("episodes, images and budget must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.a2c.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.a2c.lr >= 0.0 && self.lr_decay > 0.0) {
            return bad("learning rate must be non-negative and decay positive");
        }
        if !(0.0..=1.0).contains(&self.policy.epsilon) {
            return bad("epsilon must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, TrainerError> {
        let c: Self = toml::from_str(text).map_err(|e| TrainerError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Seed of the visual system drawn fresh at the start of `episode`.
pub fn episode_vision_seed(seed: u64, episode: usize) -> u64 {
    derive_seed("episode-vision", &[seed, episode as u64])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeStats {
    pub episode: usize,
    /// Mean over images of the summed dialog reward.
    pub mean_reward: f64,
    pub mean_init_recall: f64,
    pub mean_final_recall: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub net: PolicyNet,
    pub curve: Vec<EpisodeStats>,
}

pub fn train(cfg: &EpisodeConfig, dataset: &Dataset) -> Result<TrainOutcome, TrainerError> {
    train_with(cfg, dataset, |_| {})
}

/// [`train`] with a callback after each episode.
pub fn train_with<F: FnMut(&EpisodeStats)>(
    cfg: &EpisodeConfig,
    dataset: &Dataset,
    mut on_episode: F,
) -> Result<TrainOutcome, TrainerError> {
    cfg.validate()?;
    let schema = &dataset.schema;
    let pool = dataset.splits().0;
    if pool.len() < cfg.images {
        return Err(TrainerError::Config(format!(
            "{} training scenes for {} images per episode",
            pool.len(),
            cfg.images
        )));
    }
    let space = FeatureSpace::new(schema, cfg.world_seed, cfg.vision.feature_dim);
    let mut net = PolicyNet::new(schema.num_concepts(), cfg.policy.clone(), cfg.seed);
    let settings = RolloutSettings {
        budget: cfg.budget,
        sigma: cfg.vision.noise_sigma,
        sequence_len: cfg.images,
    };
    let mut a2c = cfg.a2c;
    let mut curve = Vec::with_capacity(cfg.episodes);
    for e in 0..cfg.episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed("episode", &[cfg.seed, e as u64]));
        let heads = AttributeHeads::new(&schema.cardinalities(), cfg.vision.clone(), episode_vision_seed(cfg.seed, e));
        let mut learner = VisualLearner::new(heads, !cfg.static_vision);
        let picks = sample(&mut rng, pool.len(), cfg.images).into_vec();

        let mut batch = Vec::with_capacity(cfg.images);
        let mut updates = Vec::new();
        for (i, &p) in picks.iter().enumerate() {
            let agent = Agent::Learned {
                net: &net,
                mode: SampleMode::Train,
            };
            let img = run_image(&pool[p], schema, i + 1, &agent, &mut learner, &space, &settings, &mut rng)?;
            if cfg.per_image_update {
                updates.push(a2c_update(&mut net, std::slice::from_ref(&img), &a2c)?);
            }
            batch.push(img);
        }
        if !cfg.per_image_update {
            updates.push(a2c_update(&mut net, &batch, &a2c)?);
        }

        let n = batch.len() as f64;
        let mean = |f: &dyn Fn(&ImageRollout) -> f64| batch.iter().map(f).sum::<f64>() / n;
        let u = updates.len().max(1) as f64;
        let avg = |f: &dyn Fn(&UpdateStats) -> f64| updates.iter().map(f).sum::<f64>() / u;
        let stats = EpisodeStats {
            episode: e,
            mean_reward: mean(&|b| b.record.total_reward()),
            mean_init_recall: mean(&|b| b.record.init_recall),
            mean_final_recall: mean(&|b| b.record.final_recall),
            policy_loss: avg(&|s| s.policy_loss),
            value_loss: avg(&|s| s.value_loss),
            entropy: avg(&|s| s.entropy),
            grad_norm: avg(&|s| s.grad_norm),
            lr: a2c.lr,
        };
        on_episode(&stats);
        curve.push(stats);
        a2c.lr *= cfg.lr_decay;
    }
    Ok(TrainOutcome { net, curve })
}

#[cfg(test)]
mod tests;
