//! Finite-difference check of the full actor-critic loss through two
//! dialog rounds of the learned policy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{round_loss, LossWeights, RoundTargets};
use super::network::{Chooser, DialogState, LastRound, PolicyConfig, PolicyNet, RoundOutput};
use crate::memory::{GraphMemory, Provenance};
use crate::nnet::gradcheck::{numeric_grads_at, rel_error, GradCheck};
use crate::nnet::{ParamId, SampleMode};
use crate::scene::{generate_scene, AttributeSchema, SceneGenConfig};

pub const COMPOSITE_TOLERANCE: f64 = 1e-3;
/// Smaller than the layer step: with thousands of ReLU units a 1e-5 probe
/// occasionally straddles a kink.
pub const COMPOSITE_FD_STEP: f64 = 1e-6;
/// Coordinates probed per parameter tensor.
const PROBES_PER_TENSOR: usize = 12;

struct Fixture {
    net: PolicyNet,
    mems: [GraphMemory; 2],
    last: LastRound,
    targets: [RoundTargets; 2],
    actions: [crate::qdsl::QuestionAction; 2],
}

impl Fixture {
    fn rounds(&self) -> Vec<RoundOutput> {
        let net = &self.net;
        let aff = net.affinity(self.mems[0].locations());
        let mut state = net.initial_state(self.mems[0].num_objects());
        let mut outs = Vec::new();
        for (t, mem) in self.mems.iter().enumerate() {
            let last = (t == 1).then_some(&self.last);
            let raw = net.raw_input(mem, last).expect("input");
            let out = net
                .forward_round::<ChaCha8Rng>(&raw, &state, &aff, &net.target_mask(mem), Chooser::Forced(self.actions[t]))
                .expect("forward");
            state = DialogState {
                h: out.h.clone(),
                c: out.c.clone(),
                last: None,
            };
            outs.push(out);
        }
        outs
    }

    fn loss(&self) -> f64 {
        let w = LossWeights::default();
        self.rounds()
            .iter()
            .zip(&self.targets)
            .map(|(o, t)| round_loss(o, t, &w).0.total(&w))
            .sum()
    }
}

fn fixture(seed: u64, config: PolicyConfig) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = AttributeSchema::standard();
    let gen = SceneGenConfig {
        min_objects: 5,
        max_objects: 6,
        ..Default::default()
    };
    let scene = generate_scene(&schema, &gen, seed).expect("scene");
    let mut mem = GraphMemory::for_scene(&scene, &schema).expect("memory");
    for k in 0..scene.len() {
        for a in 0..schema.num_concepts() {
            if rng.random_bool(0.3) {
                mem.commit(k, a, scene.objects[k].attributes[a], Provenance::Oracle).expect("commit");
            }
        }
    }
    let net = PolicyNet::new(schema.num_concepts(), config, seed);
    let aff = net.affinity(mem.locations());
    let raw = net.raw_input(&mem, None).expect("input");
    let state = net.initial_state(scene.len());
    let first = net
        .forward_round(&raw, &state, &aff, &net.target_mask(&mem), Chooser::Sample { mode: SampleMode::Train, rng: &mut rng })
        .expect("forward");
    let mut a0 = first.action;
    if a0.reference.is_none() {
        a0.reference = Some((a0.target_object + 1) % scene.len());
    }
    let valid = rng.random_bool(0.5);
    let mut mem2 = mem.clone();
    if valid {
        let truth = scene.objects[a0.target_object].attributes[a0.target_concept];
        mem2.commit(a0.target_object, a0.target_concept, truth, Provenance::Oracle).expect("commit");
    }
    let mask2 = net.target_mask(&mem2);
    let open: Vec<usize> = (0..mask2.len()).filter(|&s| mask2[s]).collect();
    let slot = open[rng.random_range(0..open.len())];
    let na = schema.num_concepts();
    let a1 = crate::qdsl::QuestionAction::zero_hop(slot / na, slot % na);
    let mut targets = [RoundTargets {
        ret: 0.0,
        adv_target: 0.0,
        adv_reference: 0.0,
    }; 2];
    for t in &mut targets {
        *t = RoundTargets {
            ret: rng.random_range(0.0..1.0),
            adv_target: rng.random_range(-2.0..2.0),
            adv_reference: rng.random_range(-2.0..2.0),
        };
    }
    Fixture {
        net,
        mems: [mem, mem2],
        last: LastRound { action: a0, valid },
        targets,
        actions: [a0, a1],
    }
}

/// Analytic vs. central-difference gradients of the two-round loss, probed
/// at a fixed number of random coordinates in every parameter tensor.
pub fn composite_case(seed: u64) -> GradCheck {
    composite_case_with(seed, PolicyConfig::default())
}

pub fn composite_case_with(seed: u64, config: PolicyConfig) -> GradCheck {
    let mut fx = fixture(seed, config);
    let w = LossWeights::default();
    let outs = fx.rounds();
    let round_grads: Vec<_> = outs.iter().zip(&fx.targets).map(|(o, t)| round_loss(o, t, &w).1).collect();
    let mut analytic = fx.net.params().zero_grads();
    fx.net.backward_dialog(&outs, &round_grads, &mut analytic);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let ids: Vec<ParamId> = fx.net.params().ids().collect();
    let mut coords = Vec::new();
    for id in ids {
        let n = fx.net.params().get(id).len();
        for _ in 0..PROBES_PER_TENSOR.min(n) {
            coords.push((id, rng.random_range(0..n)));
        }
    }
    let numeric = numeric_grads_at(&mut fx, |f| f.net.params_mut(), Fixture::loss, &coords, COMPOSITE_FD_STEP);
    let max_rel_err = coords
        .iter()
        .zip(&numeric)
        .map(|(&(id, e), &n)| rel_error(analytic.get(id).as_slice().expect("contiguous")[e], n))
        .fold(0.0, f64::max);
    GradCheck {
        name: "policy-composite".into(),
        seed,
        max_rel_err,
        tolerance: COMPOSITE_TOLERANCE,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::network::AffinityNorm;

    #[test]
    fn composite_loss_gradients_match() {
        for seed in 0..10 {
            let c = composite_case(seed);
            assert!(c.passed(), "{c:?}");
        }
    }

    #[test]
    fn composite_without_residual_or_normalization() {
        let cfg = PolicyConfig {
            residual: false,
            affinity_norm: AffinityNorm::None,
            ..Default::default()
        };
        for seed in 0..3 {
            let c = composite_case_with(seed, cfg.clone());
            assert!(c.passed(), "{c:?}");
        }
    }
}
