//! Ablation suite: static vision, partially pretrained vision, question-type
//! drift, object-count stress and commit sources.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, mean_curve, EvalConfig, FoldResult, VisionStart};
use super::HarnessError;
use crate::qdsl::AnswerKind;
use crate::scene::{AttributeSchema, Dataset, Scene, SceneGenConfig};
use crate::seeding::derive_seed;
use crate::trainer::{Agent, DialogRecord};
use crate::vision::{featurize, AttributeHeads, FeatureSpace, VisionDataset};

/// Per-round question outcome counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct QuestionTypes {
    pub zero_hop: usize,
    pub one_hop: usize,
    pub ambiguous: usize,
    pub invalid: usize,
}

impl QuestionTypes {
    pub fn total(&self) -> usize {
        self.zero_hop + self.one_hop + self.ambiguous + self.invalid
    }

    pub fn valid(&self) -> usize {
        self.zero_hop + self.one_hop
    }

    pub fn add(&mut self, o: &QuestionTypes) {
        self.zero_hop += o.zero_hop;
        self.one_hop += o.one_hop;
        self.ambiguous += o.ambiguous;
        self.invalid += o.invalid;
    }

    /// Zero-hop fraction of valid questions; NaN with none.
    pub fn zero_hop_share(&self) -> f64 {
        self.zero_hop as f64 / self.valid() as f64
    }

    /// Ambiguous plus invalid fraction of all questions.
    pub fn failure_share(&self) -> f64 {
        (self.ambiguous + self.invalid) as f64 / self.total() as f64
    }
}

/// Question types by round (index `t` is round `t + 1`).
pub fn question_histogram<'a, I: IntoIterator<Item = &'a DialogRecord>>(dialogs: I, budget: usize) -> Vec<QuestionTypes> {
    let mut out = vec![QuestionTypes::default(); budget];
    for d in dialogs {
        for r in &d.rounds {
            let Some(h) = out.get_mut(r.round - 1) else { continue };
            match (r.kind(), r.action.use_reference()) {
                (AnswerKind::Value, false) => h.zero_hop += 1,
                (AnswerKind::Value, true) => h.one_hop += 1,
                (AnswerKind::Ambiguous, _) => h.ambiguous += 1,
                (AnswerKind::Invalid, _) => h.invalid += 1,
            }
        }
    }
    out
}

/// Sum of histogram rows `first..=last` (1-based rounds).
pub fn pooled(hist: &[QuestionTypes], first: usize, last: usize) -> QuestionTypes {
    let mut acc = QuestionTypes::default();
    for h in &hist[first - 1..last.min(hist.len())] {
        acc.add(h);
    }
    acc
}

/// Mean final slot provenance per image position across folds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CommitSources {
    pub image_index: usize,
    pub vision: f64,
    pub oracle: f64,
}

impl CommitSources {
    pub fn oracle_share(&self) -> f64 {
        self.oracle / (self.vision + self.oracle)
    }
}

pub fn commit_sources(folds: &[FoldResult]) -> Vec<CommitSources> {
    let len = folds.iter().map(|f| f.dialogs.len()).max().unwrap_or(0);
    (0..len)
        .map(|i| {
            let ds: Vec<&DialogRecord> = folds.iter().filter_map(|f| f.dialogs.get(i)).collect();
            let n = ds.len() as f64;
            CommitSources {
                image_index: i + 1,
                vision: ds.iter().map(|d| d.vision_slots as f64).sum::<f64>() / n,
                oracle: ds.iter().map(|d| d.oracle_slots as f64).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Fits fresh heads for `schema` on every attribute of `objects` objects
/// drawn from `source` scenes. Value indices of `source` must be valid in
/// `schema` (true for standard scenes under the mixed vocabulary).
pub fn pretrain_heads(
    schema: &AttributeSchema,
    source: &[Scene],
    objects: usize,
    steps: usize,
    cfg: &EvalConfig,
) -> Result<(AttributeHeads, VisionDataset), HarnessError> {
    let space = FeatureSpace::new(schema, cfg.world_seed, cfg.vision.feature_dim);
    let mut data = VisionDataset::new(schema.num_concepts());
    let mut taken = 0;
    'fill: for scene in source {
        let f = featurize(scene, &space, cfg.vision.noise_sigma)?;
        for (k, obj) in scene.objects.iter().enumerate() {
            if taken == objects {
                break 'fill;
            }
            for (a, &v) in obj.attributes.iter().enumerate() {
                data.push(a, f.row(k).as_slice().expect("contiguous"), v);
            }
            taken += 1;
        }
    }
    if taken < objects {
        return Err(HarnessError::Config(format!("only {taken} objects available for pretraining")));
    }
    let seed = derive_seed("partial-vision", &[cfg.seed]);
    let mut heads = AttributeHeads::new(&schema.cardinalities(), cfg.vision.clone(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    heads.train_steps(&data, steps, &mut rng)?;
    Ok((heads, data))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub eval: EvalConfig,
    /// Labelled standard objects used to pretrain the partial visual system.
    pub partial_objects: usize,
    pub partial_steps: usize,
    /// Scene sizes of the object-count study.
    pub object_counts: Vec<usize>,
    /// Scenes generated per object count.
    pub scenes_per_count: usize,
    pub data_seed: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            eval: EvalConfig {
                budget: 50,
                ..EvalConfig::default()
            },
            partial_objects: 500,
            partial_steps: 2000,
            object_counts: vec![5, 6, 7, 8],
            scenes_per_count: 300,
            data_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ObjectCountRow {
    pub objects: usize,
    pub final_recall: f64,
    pub mean_dialog_length: f64,
    pub failure_share: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub policy: String,
    pub full_curve: Vec<f64>,
    pub static_curve: Vec<f64>,
    pub static_vision_commits: usize,
    pub mixed_curve: Vec<f64>,
    pub partial_curve: Vec<f64>,
    pub mixed_init_recall: f64,
    pub partial_init_recall: f64,
    pub question_types: Vec<QuestionTypes>,
    pub object_counts: Vec<ObjectCountRow>,
    pub commit_sources: Vec<CommitSources>,
}

fn all_dialogs(folds: &[FoldResult]) -> impl Iterator<Item = &DialogRecord> {
    folds.iter().flat_map(|f| &f.dialogs)
}

fn mean_init(folds: &[FoldResult]) -> f64 {
    folds.iter().map(|f| f.init_recall).sum::<f64>() / folds.len() as f64
}

fn dataset(vocabulary: AttributeSchema, gen: &SceneGenConfig, count: usize, seed: u64) -> Result<Dataset, HarnessError> {
    Ok(Dataset::generate(vocabulary, gen, count, seed)?)
}

/// Runs all four ablations with `agent` on scenes drawn for the purpose.
/// The static-vision curve uses `static_agent`, a policy trained without
/// visual updates. `standard_test` and `mixed_test` are the evaluation
/// scenes; pretraining objects come from `standard_pool`.
pub fn ablate(
    agent: &Agent<'_>,
    static_agent: &Agent<'_>,
    standard_test: &[Scene],
    mixed_test: &[Scene],
    standard_pool: &[Scene],
    cfg: &AblationConfig,
) -> Result<AblationReport, HarnessError> {
    let standard = AttributeSchema::standard();
    let mixed = AttributeSchema::mixed();
    let ecfg = &cfg.eval;
    let budget = ecfg.budget;

    let full = evaluate(agent, standard_test, &standard, ecfg, &VisionStart::Fresh)?;
    let static_cfg = EvalConfig {
        static_vision: true,
        ..ecfg.clone()
    };
    let frozen = evaluate(static_agent, standard_test, &standard, &static_cfg, &VisionStart::Fresh)?;

    let plain = evaluate(agent, mixed_test, &mixed, ecfg, &VisionStart::Fresh)?;
    let (heads, data) = pretrain_heads(&mixed, standard_pool, cfg.partial_objects, cfg.partial_steps, ecfg)?;
    let partial = evaluate(agent, mixed_test, &mixed, ecfg, &VisionStart::Pretrained(heads, data))?;

    let mut object_counts = Vec::new();
    for &k in &cfg.object_counts {
        let gen = SceneGenConfig {
            min_objects: k,
            max_objects: k,
            ..Default::default()
        };
        let seed = derive_seed("object-count", &[cfg.data_seed, k as u64]);
        let scenes = dataset(standard.clone(), &gen, cfg.scenes_per_count, seed)?.scenes;
        let count_cfg = EvalConfig {
            folds: cfg.scenes_per_count / ecfg.fold_size,
            repeats: 1,
            ..ecfg.clone()
        };
        let res = evaluate(agent, &scenes, &standard, &count_cfg, &VisionStart::Fresh)?;
        let dialogs: Vec<&DialogRecord> = all_dialogs(&res).collect();
        let n = dialogs.len() as f64;
        let hist = question_histogram(dialogs.iter().copied(), budget);
        object_counts.push(ObjectCountRow {
            objects: k,
            final_recall: dialogs.iter().map(|d| d.final_recall).sum::<f64>() / n,
            mean_dialog_length: dialogs.iter().map(|d| d.rounds.len() as f64).sum::<f64>() / n,
            failure_share: pooled(&hist, 1, budget).failure_share(),
        });
    }

    let curve = |folds: &[FoldResult]| {
        let ds: Vec<DialogRecord> = all_dialogs(folds).cloned().collect();
        mean_curve(&ds, budget)
    };
    Ok(AblationReport {
        policy: agent.name().to_string(),
        full_curve: curve(&full),
        static_curve: curve(&frozen),
        static_vision_commits: all_dialogs(&frozen).map(|d| d.vision_slots).sum(),
        mixed_curve: curve(&plain),
        partial_curve: curve(&partial),
        mixed_init_recall: mean_init(&plain),
        partial_init_recall: mean_init(&partial),
        question_types: question_histogram(all_dialogs(&full), budget),
        object_counts,
        commit_sources: commit_sources(&full),
    })
}
