//! The learned question policy: a recurrent encoder over the graph memory
//! followed by a graph-convolutional target head and a graph-convolutional
//! reference head, each with a value estimate.
//!
//! Input layout (per object row, `|A|` blocks of [`CHANNELS`] columns, block
//! `a` describing slot `(k, a)`):
//!
//! | channel | meaning |
//! |---|---|
//! | 0 | slot entropy (nats) |
//! | 1, 2 | learned location embedding of the object's box |
//! | 3 | 1 at the slot asked last round |
//! | 4 | 1 on the object used as reference last round |
//! | 5 | 1 on the last target object if a reference was used |
//! | 6 | 1 at the slot asked last round if the answer was a value |
//! | 7 | 1 on the last reference object if the answer was a value |

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::memory::GraphMemory;
use crate::nnet::dist::{masked_softmax, softmax_sample_eps, SampleMode};
use crate::nnet::layers::{mean_rows, mean_rows_backward, GcnCache, LstmCache, Mlp2Cache};
use crate::nnet::{affinity, Activation, Checkpoint, GcnLayer, Grads, LstmCell, Mlp2, ParamStore, Tensor2};
use crate::qdsl::QuestionAction;
use crate::scene::BBox;
use crate::seeding::derive_seed;

pub const CHANNELS: usize = 8;
const CH_ENTROPY: usize = 0;
const CH_LOC: usize = 1;
const CH_LAST_TARGET: usize = 3;
const CH_LAST_REF: usize = 4;
const CH_USED_REF: usize = 5;
const CH_VALID_TARGET: usize = 6;
const CH_VALID_REF: usize = 7;

/// What the agent asked last round and whether the oracle returned a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LastRound {
    pub action: QuestionAction,
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AffinityNorm {
    None,
    Row,
    Symmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Per-slot feature width; the recurrent state is `slot_dim * |A|` wide.
    pub slot_dim: usize,
    pub target_hidden: usize,
    pub reference_dim: usize,
    pub reference_hidden: usize,
    pub location_hidden: usize,
    pub epsilon: f64,
    pub mask_committed: bool,
    /// Adds each graph layer's input to its output when widths agree.
    pub residual: bool,
    pub affinity_norm: AffinityNorm,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            slot_dim: 16,
            target_hidden: 16,
            reference_dim: 64,
            reference_hidden: 32,
            location_hidden: 4,
            epsilon: 0.1,
            mask_committed: true,
            residual: true,
            affinity_norm: AffinityNorm::Row,
        }
    }
}

/// Recurrent state carried across the rounds of one image's dialog.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogState {
    pub h: Tensor2,
    pub c: Tensor2,
    pub last: Option<LastRound>,
}

/// The parameter-free part of the input plus the boxes for the location MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct RawInput {
    pub base: Tensor2,
    pub boxes: Tensor2,
}

/// How the round's actions are chosen.
pub enum Chooser<'a, R: Rng> {
    Sample { mode: SampleMode, rng: &'a mut R },
    Forced(QuestionAction),
}

#[derive(Debug, Clone)]
struct ReferenceCache {
    candidates: Vec<usize>,
    r1: GcnCache,
    r2: GcnCache,
    score: Mlp2Cache,
    u1: GcnCache,
    u2: GcnCache,
    use_head: Mlp2Cache,
    value: Mlp2Cache,
    rows: usize,
}

/// Everything one round produced: the action, the distributions it was drawn
/// from, value estimates, the next recurrent state and the backward caches.
#[derive(Debug, Clone)]
pub struct RoundOutput {
    pub action: QuestionAction,
    /// Over all `K * |A|` slots; masked slots are exactly 0.
    pub target_probs: Vec<f64>,
    /// `[no reference, reference]`; `None` for single-object scenes.
    pub use_probs: Option<Vec<f64>>,
    /// Over the other objects in increasing index order.
    pub reference_probs: Option<Vec<f64>>,
    pub reference_candidates: Vec<usize>,
    pub value_target: f64,
    pub value_reference: f64,
    pub h: Tensor2,
    pub c: Tensor2,
    loc: Mlp2Cache,
    lstm: LstmCache,
    t1: GcnCache,
    t2: GcnCache,
    t_score: Mlp2Cache,
    t_value: Mlp2Cache,
    reference: Option<ReferenceCache>,
}

impl RoundOutput {
    pub fn reference_index(&self) -> Option<usize> {
        let r = self.action.reference?;
        self.reference_candidates.iter().position(|&j| j == r)
    }
}

/// Upstream gradients of a round's scalar loss.
#[derive(Debug, Clone, Default)]
pub struct RoundGrad {
    pub target_logits: Vec<f64>,
    pub value_target: f64,
    pub use_logit: f64,
    pub reference_logits: Vec<f64>,
    pub value_reference: f64,
}

#[derive(Debug, Clone)]
pub struct PolicyNet {
    pub config: PolicyConfig,
    num_concepts: usize,
    store: ParamStore,
    loc: Mlp2,
    lstm: LstmCell,
    t1: GcnLayer,
    t2: GcnLayer,
    t_score: Mlp2,
    t_value: Mlp2,
    r1: GcnLayer,
    r2: GcnLayer,
    r_score: Mlp2,
    u1: GcnLayer,
    u2: GcnLayer,
    u_score: Mlp2,
    r_value: Mlp2,
}

fn normalize_affinity(a: &Tensor2, norm: AffinityNorm) -> Tensor2 {
    match norm {
        AffinityNorm::None => a.clone(),
        AffinityNorm::Row => {
            let mut out = a.clone();
            for mut row in out.rows_mut() {
                let z = row.sum();
                row /= z;
            }
            out
        }
        AffinityNorm::Symmetric => {
            let d: Vec<f64> = a.rows().into_iter().map(|r| 1.0 / r.sum().sqrt()).collect();
            Array2::from_shape_fn(a.dim(), |(i, j)| a[[i, j]] * d[i] * d[j])
        }
    }
}

/// `A ⊗ I_n`: slot `(k, c)` connects to `(j, c)` with the object affinity.
fn kron_identity(a: &Tensor2, n: usize) -> Tensor2 {
    let k = a.nrows();
    let mut out = Array2::zeros((k * n, k * n));
    for i in 0..k {
        for j in 0..k {
            for c in 0..n {
                out[[i * n + c, j * n + c]] = a[[i, j]];
            }
        }
    }
    out
}

fn column(v: &[f64]) -> Tensor2 {
    Array2::from_shape_vec((v.len(), 1), v.to_vec()).expect("column shape")
}

impl PolicyNet {
    pub fn new(num_concepts: usize, config: PolicyConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed("policy-init", &[seed]));
        let mut ps = ParamStore::new();
        let s = config.slot_dim;
        let h = s * num_concepts;
        let (rd, rh) = (config.reference_dim, config.reference_hidden);
        let relu = Activation::Relu;
        let lin = Activation::Linear;
        let loc = Mlp2::new(&mut ps, "loc", [4, config.location_hidden, 2], relu, lin, &mut rng);
        let lstm = LstmCell::new(&mut ps, "lstm", CHANNELS * num_concepts, h, &mut rng);
        let t1 = GcnLayer::new(&mut ps, "target.gcn1", s, s, relu, &mut rng);
        let t2 = GcnLayer::new(&mut ps, "target.gcn2", s, s, relu, &mut rng);
        let t_score = Mlp2::new(&mut ps, "target.score", [s, config.target_hidden, 1], relu, lin, &mut rng);
        let t_value = Mlp2::new(&mut ps, "target.value", [s, config.target_hidden, 1], relu, lin, &mut rng);
        let r1 = GcnLayer::new(&mut ps, "reference.gcn1", 2 * h, rd, relu, &mut rng);
        let r2 = GcnLayer::new(&mut ps, "reference.gcn2", rd, rd, relu, &mut rng);
        let r_score = Mlp2::new(&mut ps, "reference.score", [rd, rh, 1], relu, lin, &mut rng);
        let u1 = GcnLayer::new(&mut ps, "use.gcn1", 2 * h, rd, relu, &mut rng);
        let u2 = GcnLayer::new(&mut ps, "use.gcn2", rd, rd, relu, &mut rng);
        let u_score = Mlp2::new(&mut ps, "use.score", [rd, rh, 1], relu, lin, &mut rng);
        let r_value = Mlp2::new(&mut ps, "reference.value", [rd, rh, 1], relu, lin, &mut rng);
        Self {
            config,
            num_concepts,
            store: ps,
            loc,
            lstm,
            t1,
            t2,
            t_score,
            t_value,
            r1,
            r2,
            r_score,
            u1,
            u2,
            u_score,
            r_value,
        }
    }

    pub fn num_concepts(&self) -> usize {
        self.num_concepts
    }

    pub fn hidden(&self) -> usize {
        self.config.slot_dim * self.num_concepts
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        self.store.to_checkpoint("policy")
    }

    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<(), PolicyError> {
        Ok(self.store.load_checkpoint(ckpt, "policy")?)
    }

    pub fn initial_state(&self, num_objects: usize) -> DialogState {
        DialogState {
            h: Array2::zeros((num_objects, self.hidden())),
            c: Array2::zeros((num_objects, self.hidden())),
            last: None,
        }
    }

    /// Target mask: uncommitted slots, or every slot if masking is disabled.
    pub fn target_mask(&self, mem: &GraphMemory) -> Vec<bool> {
        (0..mem.num_slots())
            .map(|s| !self.config.mask_committed || !mem.is_committed_flat(s))
            .collect()
    }

    /// Normalized object affinity for the memory's boxes.
    pub fn affinity(&self, boxes: &[BBox]) -> Tensor2 {
        normalize_affinity(&affinity(boxes), self.config.affinity_norm)
    }

    /// Parameter-free input channels; the location channels are left at 0.
    pub fn raw_input(&self, mem: &GraphMemory, last: Option<&LastRound>) -> Result<RawInput, PolicyError> {
        let na = self.num_concepts;
        if mem.num_concepts() != na {
            return Err(PolicyError::ConceptCount {
                policy: na,
                memory: mem.num_concepts(),
            });
        }
        let k_count = mem.num_objects();
        let mut base = Array2::zeros((k_count, CHANNELS * na));
        for k in 0..k_count {
            for a in 0..na {
                base[[k, a * CHANNELS + CH_ENTROPY]] = mem.slot_entropy(k, a);
            }
        }
        if let Some(last) = last {
            let q = last.action;
            if q.target_object >= k_count || q.target_concept >= na || q.reference.is_some_and(|r| r >= k_count) {
                return Err(PolicyError::StaleHistory);
            }
            let col = |a: usize, ch: usize| a * CHANNELS + ch;
            base[[q.target_object, col(q.target_concept, CH_LAST_TARGET)]] = 1.0;
            if last.valid {
                base[[q.target_object, col(q.target_concept, CH_VALID_TARGET)]] = 1.0;
            }
            if let Some(r) = q.reference {
                for a in 0..na {
                    base[[r, col(a, CH_LAST_REF)]] = 1.0;
                    base[[q.target_object, col(a, CH_USED_REF)]] = 1.0;
                    if last.valid {
                        base[[r, col(a, CH_VALID_REF)]] = 1.0;
                    }
                }
            }
        }
        let boxes = Array2::from_shape_fn((k_count, 4), |(k, j)| mem.locations()[k].as_array()[j]);
        Ok(RawInput { base, boxes })
    }

    fn assemble(&self, raw: &RawInput) -> Result<(Tensor2, Mlp2Cache), PolicyError> {
        let (loc, cache) = self.loc.forward(&self.store, &raw.boxes)?;
        let mut x = raw.base.clone();
        for k in 0..x.nrows() {
            for a in 0..self.num_concepts {
                x[[k, a * CHANNELS + CH_LOC]] = loc[[k, 0]];
                x[[k, a * CHANNELS + CH_LOC + 1]] = loc[[k, 1]];
            }
        }
        Ok((x, cache))
    }

    /// Full `K x (|A| * 8)` input including the learned location embedding.
    pub fn build_input(&self, mem: &GraphMemory, last: Option<&LastRound>) -> Result<Tensor2, PolicyError> {
        Ok(self.assemble(&self.raw_input(mem, last)?)?.0)
    }

    fn residual(&self, out: Tensor2, input: &Tensor2) -> Tensor2 {
        if self.config.residual && out.dim() == input.dim() {
            out + input
        } else {
            out
        }
    }

    fn residual_grad(&self, dout: &Tensor2, dthrough: Tensor2) -> Tensor2 {
        if self.config.residual && dout.dim() == dthrough.dim() {
            dthrough + dout
        } else {
            dthrough
        }
    }

    /// One dialog round: advances the recurrent state once and selects an action.
    pub fn forward_round<R: Rng>(
        &self,
        raw: &RawInput,
        state: &DialogState,
        obj_affinity: &Tensor2,
        mask: &[bool],
        chooser: Chooser<'_, R>,
    ) -> Result<RoundOutput, PolicyError> {
        let na = self.num_concepts;
        let k_count = raw.base.nrows();
        let s = self.config.slot_dim;
        if mask.len() != k_count * na || obj_affinity.dim() != (k_count, k_count) {
            return Err(PolicyError::Shape(format!(
                "mask {} / affinity {:?} for {k_count} objects",
                mask.len(),
                obj_affinity.dim()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(PolicyError::AllCommitted);
        }
        let ps = &self.store;
        let (x, loc) = self.assemble(raw)?;
        let (h, c, lstm) = self.lstm.forward(ps, &x, &state.h, &state.c)?;

        let slot_aff = kron_identity(obj_affinity, na);
        let z0 = h.clone().into_shape_with_order((k_count * na, s)).expect("slot reshape");
        let (z1, t1) = self.t1.forward(ps, &z0, &slot_aff)?;
        let z1 = self.residual(z1, &z0);
        let (z2, t2) = self.t2.forward(ps, &z1, &slot_aff)?;
        let z2 = self.residual(z2, &z1);
        let (scores, t_score) = self.t_score.forward(ps, &z2)?;
        let (tv, t_value) = self.t_value.forward(ps, &mean_rows(&z2))?;
        let logits: Vec<f64> = scores.column(0).to_vec();
        let target_probs = masked_softmax(&logits, mask)?;

        let (mut chooser, forced) = match chooser {
            Chooser::Forced(q) => (None, Some(q)),
            Chooser::Sample { mode, rng } => (Some((mode, rng)), None),
        };
        let eps = self.config.epsilon;
        let slot = match (&forced, &mut chooser) {
            (Some(q), _) => {
                let slot = q.target_object * na + q.target_concept;
                if q.target_object >= k_count || q.target_concept >= na || !mask[slot] {
                    return Err(PolicyError::Shape(format!("forced action {q:?} is not selectable")));
                }
                slot
            }
            (None, Some((mode, rng))) => softmax_sample_eps(&logits, mask, eps, *mode, &mut **rng)?,
            (None, None) => unreachable!("chooser is either forced or sampling"),
        };
        let (k, a) = (slot / na, slot % na);

        let mut action = QuestionAction::zero_hop(k, a);
        let mut use_probs = None;
        let mut reference_probs = None;
        let mut value_reference = 0.0;
        let mut reference = None;
        let candidates: Vec<usize> = (0..k_count).filter(|&j| j != k).collect();
        if !candidates.is_empty() {
            let hd = self.hidden();
            let rows = candidates.len();
            let mut xr = Array2::zeros((rows, 2 * hd));
            for (i, &j) in candidates.iter().enumerate() {
                xr.slice_mut(s![i, ..hd]).assign(&h.row(k));
                xr.slice_mut(s![i, hd..]).assign(&h.row(j));
            }
            let sub = Array2::from_shape_fn((rows, rows), |(i, j)| obj_affinity[[candidates[i], candidates[j]]]);
            let ref_aff = normalize_affinity(&sub, self.config.affinity_norm);
            let (ra, r1) = self.r1.forward(ps, &xr, &ref_aff)?;
            let ra = self.residual(ra, &xr);
            let (rb, r2) = self.r2.forward(ps, &ra, &ref_aff)?;
            let rb = self.residual(rb, &ra);
            let (rs, score) = self.r_score.forward(ps, &rb)?;
            let (ua, u1) = self.u1.forward(ps, &xr, &ref_aff)?;
            let ua = self.residual(ua, &xr);
            let (ub, u2) = self.u2.forward(ps, &ua, &ref_aff)?;
            let ub = self.residual(ub, &ua);
            let pooled = mean_rows(&ub);
            let (ul, use_head) = self.u_score.forward(ps, &pooled)?;
            let (rv, value) = self.r_value.forward(ps, &pooled)?;

            let use_logits = [0.0, ul[[0, 0]]];
            let both = [true, true];
            let ref_logits: Vec<f64> = rs.column(0).to_vec();
            let all = vec![true; rows];
            let chosen_ref = match (&forced, &mut chooser) {
                (Some(q), _) => match q.reference {
                    Some(r) => Some(
                        candidates
                            .iter()
                            .position(|&j| j == r)
                            .ok_or_else(|| PolicyError::Shape(format!("forced reference {r} is the target")))?,
                    ),
                    None => None,
                },
                (None, Some((mode, rng))) => {
                    if softmax_sample_eps(&use_logits, &both, eps, *mode, &mut **rng)? == 1 {
                        Some(softmax_sample_eps(&ref_logits, &all, eps, *mode, &mut **rng)?)
                    } else {
                        None
                    }
                }
                (None, None) => unreachable!("chooser is either forced or sampling"),
            };
            if let Some(i) = chosen_ref {
                action = QuestionAction::one_hop(k, a, candidates[i]);
            }
            use_probs = Some(masked_softmax(&use_logits, &both)?);
            reference_probs = Some(masked_softmax(&ref_logits, &all)?);
            value_reference = rv[[0, 0]];
            reference = Some(ReferenceCache {
                candidates: candidates.clone(),
                r1,
                r2,
                score,
                u1,
                u2,
                use_head,
                value,
                rows,
            });
        } else if forced.is_some_and(|q| q.reference.is_some()) {
            return Err(PolicyError::Shape("reference requested in a single-object scene".into()));
        }

        Ok(RoundOutput {
            action,
            target_probs,
            use_probs,
            reference_probs,
            reference_candidates: candidates,
            value_target: tv[[0, 0]],
            value_reference,
            h,
            c,
            loc,
            lstm,
            t1,
            t2,
            t_score,
            t_value,
            reference,
        })
    }

    /// Backward through one round. `dh`/`dc` are gradients arriving from the
    /// next round's recurrent state; returns those for the previous round.
    pub fn backward_round(
        &self,
        out: &RoundOutput,
        g: &RoundGrad,
        dh_next: &Tensor2,
        dc_next: &Tensor2,
        grads: &mut Grads,
    ) -> (Tensor2, Tensor2) {
        let ps = &self.store;
        let na = self.num_concepts;
        let k_count = out.h.nrows();
        let hd = self.hidden();
        let s = self.config.slot_dim;

        // target branch
        let mut dz2 = self.t_score.backward(ps, &out.t_score, &column(&g.target_logits), grads);
        let dpool = self.t_value.backward(ps, &out.t_value, &Array2::from_elem((1, 1), g.value_target), grads);
        dz2 += &mean_rows_backward(&dpool, k_count * na);
        let dz1 = self.t2.backward(ps, &out.t2, &dz2, grads);
        let dz1 = self.residual_grad(&dz2, dz1);
        let dz0 = self.t1.backward(ps, &out.t1, &dz1, grads);
        let dz0 = self.residual_grad(&dz1, dz0);
        let mut dh = dz0
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((k_count, na * s))
            .expect("slot reshape");

        // reference branch
        if let Some(rc) = &out.reference {
            let k = out.action.target_object;
            let drb = self.r_score.backward(ps, &rc.score, &column(&g.reference_logits), grads);
            let dra = self.r2.backward(ps, &rc.r2, &drb, grads);
            let dra = self.residual_grad(&drb, dra);
            let dxr_ref = self.r1.backward(ps, &rc.r1, &dra, grads);
            let dxr_ref = self.residual_grad(&dra, dxr_ref);
            let mut dpooled = self
                .u_score
                .backward(ps, &rc.use_head, &Array2::from_elem((1, 1), g.use_logit), grads);
            dpooled += &self
                .r_value
                .backward(ps, &rc.value, &Array2::from_elem((1, 1), g.value_reference), grads);
            let dub = mean_rows_backward(&dpooled, rc.rows);
            let dua = self.u2.backward(ps, &rc.u2, &dub, grads);
            let dua = self.residual_grad(&dub, dua);
            let dxr_use = self.u1.backward(ps, &rc.u1, &dua, grads);
            let dxr_use = self.residual_grad(&dua, dxr_use);
            let dxr = dxr_ref + dxr_use;
            for (i, &j) in rc.candidates.iter().enumerate() {
                let mut target_row = dh.row_mut(k);
                target_row += &dxr.slice(s![i, ..hd]);
                let mut other_row = dh.row_mut(j);
                other_row += &dxr.slice(s![i, hd..]);
            }
        }

        dh += dh_next;
        let (dx, dh_prev, dc_prev) = self.lstm.backward(ps, &out.lstm, &dh, dc_next, grads);
        let mut dloc = Array2::zeros((k_count, 2));
        for a in 0..na {
            dloc += &dx.slice(s![.., a * CHANNELS + CH_LOC..a * CHANNELS + CH_LOC + 2]);
        }
        self.loc.backward(ps, &out.loc, &dloc, grads);
        (dh_prev, dc_prev)
    }

    /// Backpropagates a whole dialog (rounds in order) through time.
    pub fn backward_dialog(&self, rounds: &[RoundOutput], round_grads: &[RoundGrad], grads: &mut Grads) {
        let Some(first) = rounds.first() else {
            return;
        };
        let mut dh = Array2::zeros(first.h.dim());
        let mut dc = Array2::zeros(first.c.dim());
        for (out, g) in rounds.iter().zip(round_grads).rev() {
            let (a, b) = self.backward_round(out, g, &dh, &dc, grads);
            dh = a;
            dc = b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::Provenance;
    use crate::qdsl::OracleAnswer;
    use crate::scene::{generate_scene, AttributeSchema, Scene, SceneGenConfig};

    fn scene(k: usize, seed: u64) -> Scene {
        let gen = SceneGenConfig {
            min_objects: k,
            max_objects: k,
            ..Default::default()
        };
        generate_scene(&AttributeSchema::standard(), &gen, seed).unwrap()
    }

    fn net(seed: u64) -> PolicyNet {
        PolicyNet::new(4, PolicyConfig::default(), seed)
    }

    fn eval_round(net: &PolicyNet, mem: &GraphMemory, state: &DialogState) -> RoundOutput {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        net.forward_round(
            &net.raw_input(mem, state.last.as_ref()).unwrap(),
            state,
            &net.affinity(mem.locations()),
            &net.target_mask(mem),
            Chooser::Sample {
                mode: SampleMode::Eval,
                rng: &mut rng,
            },
        )
        .unwrap()
    }

    #[test]
    fn first_round_input_layout() {
        let schema = AttributeSchema::standard();
        let s = scene(7, 1);
        let mem = GraphMemory::for_scene(&s, &schema).unwrap();
        let n = net(0);
        let x = n.build_input(&mem, None).unwrap();
        assert_eq!(x.dim(), (7, 32));
        for k in 0..7 {
            for (a, &card) in schema.cardinalities().iter().enumerate() {
                assert!((x[[k, a * 8 + CH_ENTROPY]] - (card as f64).ln()).abs() < 1e-12);
                for ch in 3..8 {
                    assert_eq!(x[[k, a * 8 + ch]], 0.0);
                }
                assert_eq!(x[[k, a * 8 + 1]], x[[k, 1]]);
            }
        }
    }

    #[test]
    fn history_channels_follow_the_answer() {
        let schema = AttributeSchema::standard();
        let s = scene(5, 2);
        let mem = GraphMemory::for_scene(&s, &schema).unwrap();
        let n = net(0);
        let q = QuestionAction::one_hop(1, 2, 3);
        let bad = n.raw_input(&mem, Some(&LastRound { action: q, valid: false })).unwrap().base;
        assert_eq!(bad[[1, 2 * 8 + CH_LAST_TARGET]], 1.0);
        assert_eq!(bad[[3, CH_LAST_REF]], 1.0);
        assert_eq!(bad[[1, CH_USED_REF]], 1.0);
        assert_eq!(bad[[1, 2 * 8 + CH_VALID_TARGET]], 0.0);
        assert_eq!(bad[[3, CH_VALID_REF]], 0.0);
        let good = n.raw_input(&mem, Some(&LastRound { action: q, valid: true })).unwrap().base;
        assert_eq!(good[[1, 2 * 8 + CH_VALID_TARGET]], 1.0);
        assert_eq!(good[[3, 3 * 8 + CH_VALID_REF]], 1.0);
        assert!((good.sum() - bad.sum() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn eval_rounds_are_deterministic_and_normalized() {
        let schema = AttributeSchema::standard();
        let s = scene(6, 3);
        let mem = GraphMemory::for_scene(&s, &schema).unwrap();
        let n = net(4);
        let st = n.initial_state(6);
        let a = eval_round(&n, &mem, &st);
        let b = eval_round(&n, &mem, &st);
        assert_eq!(a.action, b.action);
        assert_eq!(a.h, b.h);
        for p in [&a.target_probs, a.use_probs.as_ref().unwrap(), a.reference_probs.as_ref().unwrap()] {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_eq!(a.reference_candidates.len(), 5);
    }

    #[test]
    fn two_objects_leave_one_reference_candidate() {
        let schema = AttributeSchema::standard();
        let s = scene(2, 4);
        let mem = GraphMemory::for_scene(&s, &schema).unwrap();
        let n = net(1);
        let out = eval_round(&n, &mem, &n.initial_state(2));
        assert_eq!(out.reference_probs.unwrap(), vec![1.0]);
        assert_eq!(out.reference_candidates, vec![1 - out.action.target_object]);
    }

    #[test]
    fn committed_slots_are_never_targets() {
        let schema = AttributeSchema::standard();
        let s = scene(5, 5);
        let mut mem = GraphMemory::for_scene(&s, &schema).unwrap();
        let n = net(2);
        // commit the slot an untrained policy likes most
        let fav = eval_round(&n, &mem, &n.initial_state(5)).action;
        let truth = s.objects[fav.target_object].attributes[fav.target_concept];
        mem.commit(fav.target_object, fav.target_concept, truth, Provenance::Oracle).unwrap();
        mem.commit(0, 0, s.objects[0].attributes[0], Provenance::Oracle).unwrap();
        let raw = n.raw_input(&mem, None).unwrap();
        let aff = n.affinity(mem.locations());
        let mask = n.target_mask(&mem);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let out = n
                .forward_round(&raw, &n.initial_state(5), &aff, &mask, Chooser::Sample { mode: SampleMode::Train, rng: &mut rng })
                .unwrap();
            let q = out.action;
            assert!(mem.committed(q.target_object, q.target_concept).is_none());
            assert_ne!(q.reference, Some(q.target_object));
        }
        let slot = fav.target_object * 4 + fav.target_concept;
        let out = eval_round(&n, &mem, &n.initial_state(5));
        assert_eq!(out.target_probs[slot], 0.0);
    }

    #[test]
    fn all_committed_is_an_error() {
        let schema = AttributeSchema::standard();
        let s = scene(3, 6);
        let mut mem = GraphMemory::for_scene(&s, &schema).unwrap();
        for k in 0..3 {
            for a in 0..4 {
                mem.commit(k, a, 0, Provenance::Oracle).unwrap();
            }
        }
        let n = net(0);
        let raw = n.raw_input(&mem, None).unwrap();
        let err = n
            .forward_round::<ChaCha8Rng>(&raw, &n.initial_state(3), &n.affinity(mem.locations()), &n.target_mask(&mem), Chooser::Forced(QuestionAction::zero_hop(0, 0)))
            .unwrap_err();
        assert_eq!(err, PolicyError::AllCommitted);
    }

    #[test]
    fn hidden_state_remembers_history() {
        let schema = AttributeSchema::standard();
        let s = scene(5, 7);
        let n = net(3);
        let run = |answers: [bool; 3]| {
            let mut mem = GraphMemory::for_scene(&s, &schema).unwrap();
            let mut st = n.initial_state(5);
            let asked = [QuestionAction::zero_hop(0, 1), QuestionAction::zero_hop(1, 1), QuestionAction::zero_hop(2, 1)];
            for (q, valid) in asked.into_iter().zip(answers) {
                let out = eval_round(&n, &mem, &st);
                if valid {
                    let v = s.objects[q.target_object].attributes[1];
                    mem.top_down_update(q.target_object, 1, &OracleAnswer::Value { concept: 1, value: v }).unwrap();
                }
                st = DialogState {
                    h: out.h,
                    c: out.c,
                    last: Some(LastRound { action: q, valid }),
                };
            }
            // same final memory, different order of answers
            (eval_round(&n, &mem, &st).h, mem)
        };
        let (h1, m1) = run([true, false, true]);
        let (h2, m2) = run([true, true, false]);
        assert_ne!(m1, m2);
        let (h3, _) = run([true, false, true]);
        assert_eq!(h1, h3);
        assert_ne!(h1, h2);
    }

    #[test]
    fn affinity_is_scale_invariant() {
        let schema = AttributeSchema::standard();
        let s = scene(6, 8);
        let boxes = s.boxes();
        let scaled: Vec<BBox> = boxes
            .iter()
            .map(|b| BBox {
                x: b.x * 0.37,
                y: b.y * 0.37,
                w: b.w * 0.37,
                h: b.h * 0.37,
            })
            .collect();
        let raw_a = affinity(&boxes);
        let raw_b = affinity(&scaled);
        assert!((&raw_a - &raw_b).iter().all(|d| d.abs() < 1e-12));
        let n = net(5);
        let mem = GraphMemory::for_scene(&s, &schema).unwrap();
        let raw = n.raw_input(&mem, None).unwrap();
        let st = n.initial_state(6);
        let mask = n.target_mask(&mem);
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let a = n
            .forward_round(&raw, &st, &n.affinity(&boxes), &mask, Chooser::Sample { mode: SampleMode::Eval, rng: &mut r })
            .unwrap();
        let b = n
            .forward_round(&raw, &st, &n.affinity(&scaled), &mask, Chooser::Sample { mode: SampleMode::Eval, rng: &mut r })
            .unwrap();
        assert_eq!(a.action, b.action);
    }

    #[test]
    fn concept_count_mismatch_is_rejected() {
        let s = scene(4, 9);
        let mem = GraphMemory::for_scene(&s, &AttributeSchema::standard()).unwrap();
        let n = PolicyNet::new(3, PolicyConfig::default(), 0);
        assert!(matches!(n.raw_input(&mem, None), Err(PolicyError::ConceptCount { .. })));
    }
}
