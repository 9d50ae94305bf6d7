//! Per-round actor-critic loss and its gradient w.r.t. the network heads.

use serde::{Deserialize, Serialize};

use super::network::{RoundGrad, RoundOutput};
use crate::nnet::dist::{categorical_entropy, entropy_grad, log_prob_grad};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub value: f64,
    pub entropy: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            value: 0.5,
            entropy: 0.01,
        }
    }
}

/// Return and (normalized) advantages for one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundTargets {
    pub ret: f64,
    pub adv_target: f64,
    pub adv_reference: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
}

impl LossParts {
    pub fn total(&self, w: &LossWeights) -> f64 {
        self.policy + w.value * self.value - w.entropy * self.entropy
    }
}

/// `-A_t log p(target) - A_r (log p(use) + [used] log p(ref))
///  + c_v ((V_t - G)^2 + (V_r - G)^2) - c_e (H_t + H_use + H_ref)`.
pub fn round_loss(out: &RoundOutput, t: &RoundTargets, w: &LossWeights) -> (LossParts, RoundGrad) {
    let concepts = out.target_probs.len() / out.h.nrows();
    let slot = out.action.target_object * concepts + out.action.target_concept;
    let pt = &out.target_probs;
    let mut parts = LossParts {
        policy: -t.adv_target * pt[slot].ln(),
        value: (out.value_target - t.ret).powi(2),
        entropy: categorical_entropy(pt),
    };
    let lp = log_prob_grad(pt, slot);
    let eg = entropy_grad(pt);
    let mut g = RoundGrad {
        target_logits: lp.iter().zip(&eg).map(|(l, e)| -t.adv_target * l - w.entropy * e).collect(),
        value_target: 2.0 * w.value * (out.value_target - t.ret),
        ..Default::default()
    };
    if let (Some(pu), Some(pr)) = (&out.use_probs, &out.reference_probs) {
        let used = usize::from(out.action.reference.is_some());
        parts.policy -= t.adv_reference * pu[used].ln();
        parts.value += (out.value_reference - t.ret).powi(2);
        parts.entropy += categorical_entropy(pu) + categorical_entropy(pr);
        let lpu = log_prob_grad(pu, used);
        let egu = entropy_grad(pu);
        g.use_logit = -t.adv_reference * lpu[1] - w.entropy * egu[1];
        let egr = entropy_grad(pr);
        g.reference_logits = egr.iter().map(|e| -w.entropy * e).collect();
        if let Some(i) = out.reference_index() {
            parts.policy -= t.adv_reference * pr[i].ln();
            for (d, l) in g.reference_logits.iter_mut().zip(log_prob_grad(pr, i)) {
                *d -= t.adv_reference * l;
            }
        }
        g.value_reference = 2.0 * w.value * (out.value_reference - t.ret);
    }
    (parts, g)
}
