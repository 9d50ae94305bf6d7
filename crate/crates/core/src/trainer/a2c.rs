//! Returns, advantages and the actor-critic parameter update.

use serde::Serialize;

use super::rollout::{DialogRecord, ImageRollout};
use super::TrainerError;
use crate::policy::{round_loss, LossWeights, PolicyNet, RoundTargets};

/// Smallest standard deviation used when normalizing advantages.
pub const STD_FLOOR: f64 = 1e-6;

/// `G_t = sum_{t' >= t} gamma^(t'-t) r_t'`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Shifts to mean 0 and scales to std 1 (std floored at [`STD_FLOOR`]).
/// Batches of fewer than two entries are left unchanged.
pub fn normalize(values: &mut [f64]) {
    if values.len() < 2 {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(STD_FLOOR);
    for v in values.iter_mut() {
        *v = (*v - mean) / std;
    }
}

/// Per-dialog, per-round returns and advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct Returns {
    pub returns: Vec<Vec<f64>>,
    pub adv_target: Vec<Vec<f64>>,
    /// Zero in rounds without a reference branch.
    pub adv_reference: Vec<Vec<f64>>,
}

/// Advantages are `G_t - V` for the target and reference critics,
/// optionally normalized across the whole batch.
pub fn compute_returns(records: &[&DialogRecord], gamma: f64, normalize_advantages: bool) -> Returns {
    let returns: Vec<Vec<f64>> = records.iter().map(|d| discounted_returns(&d.rewards(), gamma)).collect();
    let mut adv_target: Vec<Vec<f64>> = records
        .iter()
        .zip(&returns)
        .map(|(d, g)| d.rounds.iter().zip(g).map(|(r, g)| g - r.value_target.unwrap_or(0.0)).collect())
        .collect();
    let mut adv_reference: Vec<Vec<f64>> = records
        .iter()
        .zip(&returns)
        .map(|(d, g)| {
            d.rounds
                .iter()
                .zip(g)
                .map(|(r, g)| r.value_reference.map_or(0.0, |v| g - v))
                .collect()
        })
        .collect();
    if normalize_advantages {
        let mut flat: Vec<f64> = adv_target.iter().flatten().copied().collect();
        normalize(&mut flat);
        let mut it = flat.into_iter();
        for v in adv_target.iter_mut().flatten() {
            *v = it.next().expect("same length");
        }

        let has_ref = |d: &DialogRecord, t: usize| d.rounds[t].value_reference.is_some();
        let mut flat: Vec<f64> = Vec::new();
        for (d, a) in records.iter().zip(&adv_reference) {
            flat.extend((0..a.len()).filter(|&t| has_ref(d, t)).map(|t| a[t]));
        }
        normalize(&mut flat);
        let mut it = flat.into_iter();
        for (d, a) in records.iter().zip(adv_reference.iter_mut()) {
            for (t, x) in a.iter_mut().enumerate() {
                if has_ref(d, t) {
                    *x = it.next().expect("same length");
                }
            }
        }
    }
    Returns {
        returns,
        adv_target,
        adv_reference,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct A2cConfig {
    pub lr: f64,
    pub gamma: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub grad_clip: f64,
    pub normalize_advantages: bool,
}

impl Default for A2cConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            gamma: 1.0,
            value_coef: 0.5,
            entropy_coef: 0.01,
            grad_clip: 5.0,
            normalize_advantages: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub rounds: usize,
    /// Losses are means over rounds.
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// One clipped Adam step on the mean per-round actor-critic loss of `batch`.
pub fn a2c_update(net: &mut PolicyNet, batch: &[ImageRollout], cfg: &A2cConfig) -> Result<UpdateStats, TrainerError> {
    let records: Vec<&DialogRecord> = batch.iter().map(|b| &b.record).collect();
    let ret = compute_returns(&records, cfg.gamma, cfg.normalize_advantages);
    let rounds: usize = batch.iter().map(|b| b.outputs.len()).sum();
    if rounds == 0 {
        return Ok(UpdateStats::default());
    }
    let weights = LossWeights {
        value: cfg.value_coef,
        entropy: cfg.entropy_coef,
    };
    let scale = 1.0 / rounds as f64;
    let mut stats = UpdateStats {
        rounds,
        ..Default::default()
    };
    let mut grads = net.params().zero_grads();
    for (d, b) in batch.iter().enumerate() {
        if b.outputs.len() != b.record.rounds.len() {
            return Err(TrainerError::Config(format!(
                "dialog {d} has {} forward passes for {} rounds",
                b.outputs.len(),
                b.record.rounds.len()
            )));
        }
        let mut round_grads = Vec::with_capacity(b.outputs.len());
        for (t, out) in b.outputs.iter().enumerate() {
            let targets = RoundTargets {
                ret: ret.returns[d][t],
                adv_target: ret.adv_target[d][t],
                adv_reference: ret.adv_reference[d][t],
            };
            let (parts, mut g) = round_loss(out, &targets, &weights);
            stats.policy_loss += parts.policy * scale;
            stats.value_loss += parts.value * scale;
            stats.entropy += parts.entropy * scale;
            g.target_logits.iter_mut().for_each(|x| *x *= scale);
            g.reference_logits.iter_mut().for_each(|x| *x *= scale);
            g.use_logit *= scale;
            g.value_target *= scale;
            g.value_reference *= scale;
            round_grads.push(g);
        }
        net.backward_dialog(&b.outputs, &round_grads, &mut grads);
    }
    stats.grad_norm = grads.clip_norm(cfg.grad_clip);
    net.params_mut().adam_step(&grads, cfg.lr)?;
    Ok(stats)
}
