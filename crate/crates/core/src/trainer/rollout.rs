//! One pass over a sequence of images: bottom-up initialization, a budgeted
//! question dialog per image, and visual-system training on the final
//! memories.

use rand::Rng;
use serde::Serialize;

use super::TrainerError;
use crate::memory::{GraphMemory, Provenance};
use crate::nnet::SampleMode;
use crate::policy::{
    baseline_entropy, baseline_entropy_context, baseline_random, BaselineConfig, Chooser, DialogState, LastRound,
    PolicyNet, RoundOutput,
};
use crate::qdsl::{compose_program, execute, AnswerKind, OracleAnswer, QuestionAction};
use crate::scene::{AttributeSchema, Scene};
use crate::vision::{featurize, AttributeHeads, FeatureSpace, VisionDataset};

/// The question-asking policy driving a rollout.
#[derive(Debug, Clone, Copy)]
pub enum Agent<'a> {
    Random,
    Entropy(&'a BaselineConfig),
    EntropyContext(&'a BaselineConfig),
    Learned { net: &'a PolicyNet, mode: SampleMode },
    /// Reads the ground truth and asks the first question (in slot order,
    /// zero-hop before one-hop) that the oracle answers with a value.
    Omniscient,
}

impl Agent<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Agent::Random => "random",
            Agent::Entropy(_) => "entropy",
            Agent::EntropyContext(_) => "entropy-context",
            Agent::Learned { .. } => "learned",
            Agent::Omniscient => "omniscient",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: usize,
    pub action: QuestionAction,
    pub program: String,
    pub answer: OracleAnswer,
    pub reward: f64,
    pub recall_after: f64,
    pub value_target: Option<f64>,
    /// Present when the reference branch ran (more than one object).
    pub value_reference: Option<f64>,
    /// Log-probability of the sampled action under the learned policy.
    pub log_prob: Option<f64>,
}

impl RoundRecord {
    pub fn kind(&self) -> AnswerKind {
        self.answer.kind()
    }
}

/// Everything observed while questioning one image.
#[derive(Debug, Clone, Serialize)]
pub struct DialogRecord {
    pub scene_id: u64,
    /// 1-based position of the image in its sequence.
    pub image_index: usize,
    pub num_objects: usize,
    pub bottom_up_commits: usize,
    pub init_recall: f64,
    pub rounds: Vec<RoundRecord>,
    pub final_recall: f64,
    pub vision_slots: usize,
    pub oracle_slots: usize,
}

impl DialogRecord {
    pub fn rewards(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.reward).collect()
    }

    pub fn total_reward(&self) -> f64 {
        self.rounds.iter().map(|r| r.reward).sum()
    }

    /// Recall after each of `budget` rounds; rounds past the end of the
    /// dialog hold its final recall.
    pub fn held_curve(&self, budget: usize) -> Vec<f64> {
        (0..budget)
            .map(|t| self.rounds.get(t).map_or(self.final_recall, |r| r.recall_after))
            .collect()
    }
}

/// A dialog plus, for the learned policy, the forward passes needed to
/// backpropagate through it.
#[derive(Debug, Clone)]
pub struct ImageRollout {
    pub record: DialogRecord,
    pub outputs: Vec<RoundOutput>,
    pub memory: GraphMemory,
}

/// The visual system together with the labels gathered so far.
#[derive(Debug)]
pub struct VisualLearner {
    pub heads: AttributeHeads,
    pub data: VisionDataset,
    /// When false the heads are never trained and nothing is committed bottom-up.
    pub active: bool,
}

impl VisualLearner {
    pub fn new(heads: AttributeHeads, active: bool) -> Self {
        let data = VisionDataset::new(heads.cardinalities().len());
        Self { heads, data, active }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RolloutSettings {
    pub budget: usize,
    pub sigma: f64,
    /// Images in the sequence; sets the bottom-up threshold schedule.
    pub sequence_len: usize,
}

fn first_valid(mem: &GraphMemory, scene: &Scene, schema: &AttributeSchema) -> Result<Option<QuestionAction>, TrainerError> {
    for s in (0..mem.num_slots()).filter(|&s| !mem.is_committed_flat(s)) {
        let (k, a) = (s / mem.num_concepts(), s % mem.num_concepts());
        let refs = (0..mem.num_objects()).filter(|&r| r != k).map(Some);
        for reference in std::iter::once(None).chain(refs) {
            let q = QuestionAction {
                target_object: k,
                target_concept: a,
                reference,
            };
            if execute(&compose_program(&q, mem, schema)?.program, scene, schema)?.is_value() {
                return Ok(Some(q));
            }
        }
    }
    Ok(None)
}

fn choose<R: Rng>(
    agent: &Agent<'_>,
    scene: &Scene,
    schema: &AttributeSchema,
    mem: &GraphMemory,
    state: &DialogState,
    affinity: &crate::nnet::Tensor2,
    rng: &mut R,
) -> Result<(QuestionAction, Option<RoundOutput>), TrainerError> {
    Ok(match agent {
        Agent::Random => (baseline_random(mem, rng)?, None),
        Agent::Entropy(cfg) => (baseline_entropy(mem, cfg, rng)?, None),
        Agent::EntropyContext(cfg) => (baseline_entropy_context(mem, cfg, rng)?, None),
        Agent::Learned { net, mode } => {
            let raw = net.raw_input(mem, state.last.as_ref())?;
            let out = net.forward_round(
                &raw,
                state,
                affinity,
                &net.target_mask(mem),
                Chooser::Sample { mode: *mode, rng },
            )?;
            (out.action, Some(out))
        }
        Agent::Omniscient => match first_valid(mem, scene, schema)? {
            Some(q) => (q, None),
            None => (baseline_random(mem, rng)?, None),
        },
    })
}

fn log_prob(out: &RoundOutput, concepts: usize) -> f64 {
    let q = out.action;
    let mut lp = out.target_probs[q.target_object * concepts + q.target_concept].ln();
    if let Some(pu) = &out.use_probs {
        lp += pu[usize::from(q.use_reference())].ln();
    }
    if let (Some(i), Some(pr)) = (out.reference_index(), &out.reference_probs) {
        lp += pr[i].ln();
    }
    lp
}

/// Questions image `i` (1-based) of the sequence, then adds its committed
/// slots to the learner's labels and retrains the visual system.
#[allow(clippy::too_many_arguments)]
pub fn run_image<R: Rng>(
    scene: &Scene,
    schema: &AttributeSchema,
    i: usize,
    agent: &Agent<'_>,
    learner: &mut VisualLearner,
    space: &FeatureSpace,
    settings: &RolloutSettings,
    rng: &mut R,
) -> Result<ImageRollout, TrainerError> {
    let features = featurize(scene, space, settings.sigma)?;
    let mut mem = GraphMemory::for_scene(scene, schema)?;
    let bottom_up_commits = if learner.active {
        let vg = learner.heads.predict(&features, mem.locations())?;
        mem.bottom_up_update(&vg, i, settings.sequence_len)?
    } else {
        0
    };
    let init_recall = mem.recall(scene)?;

    let concepts = schema.num_concepts();
    let affinity = match agent {
        Agent::Learned { net, .. } => net.affinity(mem.locations()),
        _ => crate::nnet::Tensor2::zeros((0, 0)),
    };
    let mut state = match agent {
        Agent::Learned { net, .. } => net.initial_state(scene.len()),
        _ => DialogState {
            h: crate::nnet::Tensor2::zeros((0, 0)),
            c: crate::nnet::Tensor2::zeros((0, 0)),
            last: None,
        },
    };
    let mut rounds = Vec::new();
    let mut outputs = Vec::new();
    let mut recall = init_recall;
    for t in 1..=settings.budget {
        if mem.all_committed() {
            break;
        }
        let (action, out) = choose(agent, scene, schema, &mem, &state, &affinity, rng)?;
        let question = compose_program(&action, &mem, schema)?;
        let answer = execute(&question.program, scene, schema)?;
        mem.top_down_update(action.target_object, action.target_concept, &answer)?;
        let after = mem.recall(scene)?;
        let last = LastRound {
            action,
            valid: answer.is_value(),
        };
        let (value_target, value_reference, lp) = match &out {
            Some(o) => (
                Some(o.value_target),
                o.use_probs.is_some().then_some(o.value_reference),
                Some(log_prob(o, concepts)),
            ),
            None => (None, None, None),
        };
        rounds.push(RoundRecord {
            round: t,
            action,
            program: question.program.serialize(),
            answer,
            reward: after - recall,
            recall_after: after,
            value_target,
            value_reference,
            log_prob: lp,
        });
        recall = after;
        if let Some(o) = out {
            state = DialogState {
                h: o.h.clone(),
                c: o.c.clone(),
                last: Some(last),
            };
            outputs.push(o);
        } else {
            state.last = Some(last);
        }
    }

    if learner.active {
        learner.data.add_memory(&features, &mem)?;
        learner.heads.train(&learner.data, rng)?;
        learner.heads.decay_lr();
    }
    let record = DialogRecord {
        scene_id: scene.id,
        image_index: i,
        num_objects: scene.len(),
        bottom_up_commits,
        init_recall,
        rounds,
        final_recall: recall,
        vision_slots: mem.count_provenance(Provenance::Vision),
        oracle_slots: mem.count_provenance(Provenance::Oracle),
    };
    Ok(ImageRollout {
        record,
        outputs,
        memory: mem,
    })
}

/// Runs [`run_image`] over `scenes` in order with one shared learner.
#[allow(clippy::too_many_arguments)]
pub fn rollout<R: Rng>(
    scenes: &[Scene],
    schema: &AttributeSchema,
    agent: &Agent<'_>,
    learner: &mut VisualLearner,
    space: &FeatureSpace,
    budget: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<ImageRollout>, TrainerError> {
    let settings = RolloutSettings {
        budget,
        sigma,
        sequence_len: scenes.len(),
    };
    scenes
        .iter()
        .enumerate()
        .map(|(i, s)| run_image(s, schema, i + 1, agent, learner, space, &settings, rng))
        .collect()
}
