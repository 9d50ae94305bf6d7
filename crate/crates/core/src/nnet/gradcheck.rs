//! Central finite-difference checks of the analytic backward passes.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::layers::{affinity, Activation, Dense, GcnLayer, LstmCell};
use super::{Grads, ParamId, ParamStore, Tensor2};
use crate::scene::BBox;

pub const FD_STEP: f64 = 1e-5;
pub const LAYER_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheck {
    pub name: String,
    pub seed: u64,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// Central differences of `f` w.r.t. every scalar in the store.
pub fn numeric_grads<F: FnMut(&ParamStore) -> f64>(ps: &mut ParamStore, mut f: F, h: f64) -> Grads {
    let mut out = ps.zero_grads();
    let ids: Vec<_> = ps.ids().collect();
    for id in ids {
        let n = ps.get(id).len();
        for e in 0..n {
            let orig = ps.get(id).as_slice().expect("contiguous")[e];
            ps.get_mut(id).as_slice_mut().expect("contiguous")[e] = orig + h;
            let up = f(ps);
            ps.get_mut(id).as_slice_mut().expect("contiguous")[e] = orig - h;
            let dn = f(ps);
            ps.get_mut(id).as_slice_mut().expect("contiguous")[e] = orig;
            out.get_mut(id).as_slice_mut().expect("contiguous")[e] = (up - dn) / (2.0 * h);
        }
    }
    out
}

/// Largest `|a - n| / max(|a|, |n|, 1e-5)` over all entries.
pub fn max_rel_error(analytic: &Grads, numeric: &Grads) -> f64 {
    analytic
        .tensors
        .iter()
        .zip(&numeric.tensors)
        .flat_map(|(a, n)| a.iter().zip(n.iter()))
        .map(|(&a, &n)| rel_error(a, n))
        .fold(0.0, f64::max)
}

/// Central differences at selected `(parameter, flat index)` coordinates of
/// the store reached through `store`.
pub fn numeric_grads_at<T, S, F>(obj: &mut T, store: S, f: F, coords: &[(ParamId, usize)], h: f64) -> Vec<f64>
where
    S: Fn(&mut T) -> &mut ParamStore,
    F: Fn(&T) -> f64,
{
    coords
        .iter()
        .map(|&(id, e)| {
            let orig = store(obj).get(id).as_slice().expect("contiguous")[e];
            store(obj).get_mut(id).as_slice_mut().expect("contiguous")[e] = orig + h;
            let up = f(obj);
            store(obj).get_mut(id).as_slice_mut().expect("contiguous")[e] = orig - h;
            let dn = f(obj);
            store(obj).get_mut(id).as_slice_mut().expect("contiguous")[e] = orig;
            (up - dn) / (2.0 * h)
        })
        .collect()
}

/// Relative error with the same floor as [`max_rel_error`].
pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor2 {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

fn weighted_sum(y: &Tensor2, r: &Tensor2) -> f64 {
    (y * r).sum()
}

/// Random 8x8 dense layer, gradients w.r.t. weights, bias and input.
pub fn dense_case(seed: u64, act: Activation) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamStore::new();
    let layer = Dense::new(&mut ps, "dense", 8, 8, act, &mut rng);
    let b = ps.get(layer.b).mapv(|_| rng.random_range(-0.5..0.5));
    *ps.get_mut(layer.b) = b;
    let x = ps.add("x", random_matrix(4, 8, &mut rng));
    let r = random_matrix(4, 8, &mut rng);

    let (_, cache) = layer.forward(&ps, ps.get(x)).unwrap();
    let mut analytic = ps.zero_grads();
    let dx = layer.backward(&ps, &cache, &r, &mut analytic);
    *analytic.get_mut(x) += &dx;

    let numeric = numeric_grads(
        &mut ps,
        |ps| weighted_sum(&layer.forward(ps, ps.get(x)).unwrap().0, &r),
        FD_STEP,
    );
    GradCheck {
        name: format!("dense-8x8-{act:?}").to_lowercase(),
        seed,
        max_rel_err: max_rel_error(&analytic, &numeric),
        tolerance: LAYER_TOLERANCE,
    }
}

/// LSTM unrolled for three steps; loss touches every hidden state and the final cell.
pub fn lstm_case(seed: u64) -> GradCheck {
    let (batch, input, hidden, steps) = (3, 5, 4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamStore::new();
    let cell = LstmCell::new(&mut ps, "lstm", input, hidden, &mut rng);
    let xs: Vec<_> = (0..steps)
        .map(|t| ps.add(format!("x{t}"), random_matrix(batch, input, &mut rng)))
        .collect();
    let h0 = ps.add("h0", random_matrix(batch, hidden, &mut rng));
    let c0 = ps.add("c0", random_matrix(batch, hidden, &mut rng));
    let rs: Vec<_> = (0..steps).map(|_| random_matrix(batch, hidden, &mut rng)).collect();
    let rc = random_matrix(batch, hidden, &mut rng);

    let loss = |ps: &ParamStore| -> f64 {
        let mut h = ps.get(h0).clone();
        let mut c = ps.get(c0).clone();
        let mut total = 0.0;
        for t in 0..steps {
            let (h2, c2, _) = cell.forward(ps, ps.get(xs[t]), &h, &c).unwrap();
            total += weighted_sum(&h2, &rs[t]);
            h = h2;
            c = c2;
        }
        total + weighted_sum(&c, &rc)
    };

    let mut caches = Vec::new();
    let mut h = ps.get(h0).clone();
    let mut c = ps.get(c0).clone();
    for &x in &xs {
        let (h2, c2, cache) = cell.forward(&ps, ps.get(x), &h, &c).unwrap();
        caches.push(cache);
        h = h2;
        c = c2;
    }
    let mut analytic = ps.zero_grads();
    let mut dh = Array2::zeros((batch, hidden));
    let mut dc = rc.clone();
    for t in (0..steps).rev() {
        dh += &rs[t];
        let (dx, dh_prev, dc_prev) = cell.backward(&ps, &caches[t], &dh, &dc, &mut analytic);
        *analytic.get_mut(xs[t]) += &dx;
        dh = dh_prev;
        dc = dc_prev;
    }
    *analytic.get_mut(h0) += &dh;
    *analytic.get_mut(c0) += &dc;

    let numeric = numeric_grads(&mut ps, loss, FD_STEP);
    GradCheck {
        name: "lstm-3-step".into(),
        seed,
        max_rel_err: max_rel_error(&analytic, &numeric),
        tolerance: LAYER_TOLERANCE,
    }
}

/// Two stacked graph convolutions over five nodes with spatial affinities.
pub fn gcn_case(seed: u64) -> GradCheck {
    let k = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let boxes: Vec<BBox> = (0..k)
        .map(|_| BBox {
            x: rng.random_range(0.0..0.9),
            y: rng.random_range(0.0..0.9),
            w: 0.1,
            h: 0.1,
        })
        .collect();
    let a = affinity(&boxes);
    let mut ps = ParamStore::new();
    let g1 = GcnLayer::new(&mut ps, "gcn1", 6, 4, Activation::Tanh, &mut rng);
    let g2 = GcnLayer::new(&mut ps, "gcn2", 4, 3, Activation::Linear, &mut rng);
    let z = ps.add("z", random_matrix(k, 6, &mut rng));
    let r = random_matrix(k, 3, &mut rng);

    let forward = |ps: &ParamStore| {
        let (y1, c1) = g1.forward(ps, ps.get(z), &a).unwrap();
        let (y2, c2) = g2.forward(ps, &y1, &a).unwrap();
        (y2, c1, c2)
    };
    let (_, c1, c2) = forward(&ps);
    let mut analytic = ps.zero_grads();
    let d1 = g2.backward(&ps, &c2, &r, &mut analytic);
    let dz = g1.backward(&ps, &c1, &d1, &mut analytic);
    *analytic.get_mut(z) += &dz;
    let numeric = numeric_grads(&mut ps, |ps| weighted_sum(&forward(ps).0, &r), FD_STEP);
    GradCheck {
        name: "gcn-5-node".into(),
        seed,
        max_rel_err: max_rel_error(&analytic, &numeric),
        tolerance: LAYER_TOLERANCE,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layers_pass_on_one_seed() {
        for c in [
            dense_case(0, Activation::Tanh),
            dense_case(0, Activation::Relu),
            dense_case(0, Activation::Sigmoid),
            lstm_case(0),
            gcn_case(0),
        ] {
            assert!(c.passed(), "{c:?}");
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut ps = ParamStore::new();
        let w = ps.add("w", ndarray::array![[2.0]]);
        let mut wrong = ps.zero_grads();
        wrong.get_mut(w)[[0, 0]] = 3.0; // d/dw w^2 at 2 is 4
        let numeric = numeric_grads(&mut ps, |ps| ps.get(w)[[0, 0]].powi(2), FD_STEP);
        assert!(max_rel_error(&wrong, &numeric) > 0.2);
    }
}
