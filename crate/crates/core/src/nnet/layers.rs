//! Dense, two-layer perceptron, LSTM cell and graph-convolution layers with
//! hand-written backward passes.
//!
//! Every `forward` returns its output together with a cache; `backward`
//! consumes the cache and the upstream gradient, accumulates parameter
//! gradients into a [`Grads`] and returns the gradient w.r.t. the inputs.

use ndarray::{s, Array2, Axis};
use rand::Rng;

use super::{check_finite, Grads, NnetError, ParamId, ParamStore, Tensor2};
use crate::scene::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Sigmoid,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, x: &Tensor2) -> Tensor2 {
        match self {
            Activation::Linear => x.clone(),
            Activation::Relu => x.mapv(|v| v.max(0.0)),
            Activation::Tanh => x.mapv(f64::tanh),
            Activation::Sigmoid => x.mapv(sigmoid),
        }
    }

    /// Gradient through the activation given the pre-activation and output.
    pub fn backward(self, pre: &Tensor2, out: &Tensor2, dout: &Tensor2) -> Tensor2 {
        match self {
            Activation::Linear => dout.clone(),
            Activation::Relu => {
                let mut d = dout.clone();
                ndarray::Zip::from(&mut d).and(pre).for_each(|d, &p| {
                    if p <= 0.0 {
                        *d = 0.0;
                    }
                });
                d
            }
            Activation::Tanh => {
                let mut d = dout.clone();
                ndarray::Zip::from(&mut d).and(out).for_each(|d, &y| *d *= 1.0 - y * y);
                d
            }
            Activation::Sigmoid => {
                let mut d = dout.clone();
                ndarray::Zip::from(&mut d).and(out).for_each(|d, &y| *d *= y * (1.0 - y));
                d
            }
        }
    }
}

/// `y = act(x W + b)` over a batch of row vectors.
#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub act: Activation,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    x: Tensor2,
    pre: Tensor2,
    out: Tensor2,
}

impl Dense {
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, input: usize, output: usize, act: Activation, rng: &mut R) -> Self {
        let w = ps.add_glorot(format!("{name}.w"), input, output, rng);
        let b = ps.add_zeros(format!("{name}.b"), 1, output);
        Self { w, b, act }
    }

    pub fn input_dim(&self, ps: &ParamStore) -> usize {
        ps.get(self.w).nrows()
    }

    pub fn output_dim(&self, ps: &ParamStore) -> usize {
        ps.get(self.w).ncols()
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor2) -> Result<(Tensor2, DenseCache), NnetError> {
        let w = ps.get(self.w);
        if x.ncols() != w.nrows() {
            return Err(NnetError::Shape(format!(
                "dense input has {} columns, weight expects {}",
                x.ncols(),
                w.nrows()
            )));
        }
        check_finite(x, "dense input")?;
        let pre = x.dot(w) + ps.get(self.b);
        let out = self.act.apply(&pre);
        Ok((
            out.clone(),
            DenseCache {
                x: x.clone(),
                pre,
                out,
            },
        ))
    }

    pub fn backward(&self, ps: &ParamStore, cache: &DenseCache, dy: &Tensor2, grads: &mut Grads) -> Tensor2 {
        let dpre = self.act.backward(&cache.pre, &cache.out, dy);
        *grads.get_mut(self.w) += &cache.x.t().dot(&dpre);
        *grads.get_mut(self.b) += &dpre.sum_axis(Axis(0)).insert_axis(Axis(0));
        dpre.dot(&ps.get(self.w).t())
    }
}

/// Two dense layers: `in -> hidden (act) -> out (out_act)`.
#[derive(Debug, Clone, Copy)]
pub struct Mlp2 {
    pub l1: Dense,
    pub l2: Dense,
}

#[derive(Debug, Clone)]
pub struct Mlp2Cache {
    c1: DenseCache,
    c2: DenseCache,
}

impl Mlp2 {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        ps: &mut ParamStore,
        name: &str,
        dims: [usize; 3],
        hidden_act: Activation,
        out_act: Activation,
        rng: &mut R,
    ) -> Self {
        Self {
            l1: Dense::new(ps, &format!("{name}.0"), dims[0], dims[1], hidden_act, rng),
            l2: Dense::new(ps, &format!("{name}.1"), dims[1], dims[2], out_act, rng),
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor2) -> Result<(Tensor2, Mlp2Cache), NnetError> {
        let (h, c1) = self.l1.forward(ps, x)?;
        let (y, c2) = self.l2.forward(ps, &h)?;
        Ok((y, Mlp2Cache { c1, c2 }))
    }

    pub fn backward(&self, ps: &ParamStore, cache: &Mlp2Cache, dy: &Tensor2, grads: &mut Grads) -> Tensor2 {
        let dh = self.l2.backward(ps, &cache.c2, dy, grads);
        self.l1.backward(ps, &cache.c1, &dh, grads)
    }
}

/// Standard four-gate LSTM cell; rows of the batch are independent sequences
/// sharing weights.
#[derive(Debug, Clone, Copy)]
pub struct LstmCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    x: Tensor2,
    h_prev: Tensor2,
    c_prev: Tensor2,
    i: Tensor2,
    f: Tensor2,
    g: Tensor2,
    o: Tensor2,
    tanh_c: Tensor2,
}

impl LstmCell {
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let wx = ps.add_glorot(format!("{name}.wx"), input, 4 * hidden, rng);
        let wh = ps.add_glorot(format!("{name}.wh"), hidden, 4 * hidden, rng);
        let mut bias = Array2::zeros((1, 4 * hidden));
        // forget-gate bias starts at 1
        bias.slice_mut(s![.., hidden..2 * hidden]).fill(1.0);
        let b = ps.add(format!("{name}.b"), bias);
        Self { wx, wh, b, hidden }
    }

    pub fn forward(
        &self,
        ps: &ParamStore,
        x: &Tensor2,
        h_prev: &Tensor2,
        c_prev: &Tensor2,
    ) -> Result<(Tensor2, Tensor2, LstmCache), NnetError> {
        let hd = self.hidden;
        if x.ncols() != ps.get(self.wx).nrows() || h_prev.ncols() != hd || c_prev.ncols() != hd {
            return Err(NnetError::Shape("lstm input/state dimensions".into()));
        }
        if x.nrows() != h_prev.nrows() || x.nrows() != c_prev.nrows() {
            return Err(NnetError::Shape("lstm batch sizes differ".into()));
        }
        check_finite(x, "lstm input")?;
        let z = x.dot(ps.get(self.wx)) + h_prev.dot(ps.get(self.wh)) + ps.get(self.b);
        let i = z.slice(s![.., 0..hd]).mapv(sigmoid);
        let f = z.slice(s![.., hd..2 * hd]).mapv(sigmoid);
        let g = z.slice(s![.., 2 * hd..3 * hd]).mapv(f64::tanh);
        let o = z.slice(s![.., 3 * hd..4 * hd]).mapv(sigmoid);
        let c = &f * c_prev + &i * &g;
        let tanh_c = c.mapv(f64::tanh);
        let h = &o * &tanh_c;
        let cache = LstmCache {
            x: x.clone(),
            h_prev: h_prev.clone(),
            c_prev: c_prev.clone(),
            i,
            f,
            g,
            o,
            tanh_c,
        };
        Ok((h, c, cache))
    }

    /// Returns `(dx, dh_prev, dc_prev)`.
    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &LstmCache,
        dh: &Tensor2,
        dc: &Tensor2,
        grads: &mut Grads,
    ) -> (Tensor2, Tensor2, Tensor2) {
        let hd = self.hidden;
        let LstmCache {
            x,
            h_prev,
            c_prev,
            i,
            f,
            g,
            o,
            tanh_c,
        } = cache;
        let dc_total = dc + &(dh * o * &tanh_c.mapv(|t| 1.0 - t * t));
        let d_o = dh * tanh_c * o * &o.mapv(|v| 1.0 - v);
        let d_i = &dc_total * g * i * &i.mapv(|v| 1.0 - v);
        let d_f = &dc_total * c_prev * f * &f.mapv(|v| 1.0 - v);
        let d_g = &dc_total * i * &g.mapv(|v| 1.0 - v * v);
        let mut dz = Array2::zeros((x.nrows(), 4 * hd));
        dz.slice_mut(s![.., 0..hd]).assign(&d_i);
        dz.slice_mut(s![.., hd..2 * hd]).assign(&d_f);
        dz.slice_mut(s![.., 2 * hd..3 * hd]).assign(&d_g);
        dz.slice_mut(s![.., 3 * hd..4 * hd]).assign(&d_o);
        *grads.get_mut(self.wx) += &x.t().dot(&dz);
        *grads.get_mut(self.wh) += &h_prev.t().dot(&dz);
        *grads.get_mut(self.b) += &dz.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dx = dz.dot(&ps.get(self.wx).t());
        let dh_prev = dz.dot(&ps.get(self.wh).t());
        let dc_prev = dc_total * f;
        (dx, dh_prev, dc_prev)
    }
}

/// Graph convolution `Z' = act(A Z W)` with a fixed affinity matrix `A`.
#[derive(Debug, Clone, Copy)]
pub struct GcnLayer {
    pub w: ParamId,
    pub act: Activation,
}

#[derive(Debug, Clone)]
pub struct GcnCache {
    a: Tensor2,
    az: Tensor2,
    pre: Tensor2,
    out: Tensor2,
}

/// Plain functional form of one graph-convolution layer.
pub fn gcn_layer(w: &Tensor2, z: &Tensor2, a: &Tensor2, act: Activation) -> Result<Tensor2, NnetError> {
    check_affinity(a, z.nrows())?;
    Ok(act.apply(&a.dot(z).dot(w)))
}

fn check_affinity(a: &Tensor2, n: usize) -> Result<(), NnetError> {
    if a.nrows() != n || a.ncols() != n {
        return Err(NnetError::Shape(format!("affinity {:?} for {n} nodes", a.dim())));
    }
    check_finite(a, "affinity")
}

impl GcnLayer {
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, input: usize, output: usize, act: Activation, rng: &mut R) -> Self {
        let w = ps.add_glorot(format!("{name}.w"), input, output, rng);
        Self { w, act }
    }

    pub fn forward(&self, ps: &ParamStore, z: &Tensor2, a: &Tensor2) -> Result<(Tensor2, GcnCache), NnetError> {
        check_affinity(a, z.nrows())?;
        check_finite(z, "gcn input")?;
        let az = a.dot(z);
        let pre = az.dot(ps.get(self.w));
        let out = self.act.apply(&pre);
        Ok((
            out.clone(),
            GcnCache {
                a: a.clone(),
                az,
                pre,
                out,
            },
        ))
    }

    pub fn backward(&self, ps: &ParamStore, cache: &GcnCache, dy: &Tensor2, grads: &mut Grads) -> Tensor2 {
        let dpre = self.act.backward(&cache.pre, &cache.out, dy);
        *grads.get_mut(self.w) += &cache.az.t().dot(&dpre);
        cache.a.t().dot(&dpre.dot(&ps.get(self.w).t()))
    }
}

/// Spatial affinity `exp(-d(i,j) / d_max)` between object centers.
pub fn affinity(boxes: &[BBox]) -> Tensor2 {
    let k = boxes.len();
    let mut d = Array2::<f64>::zeros((k, k));
    let mut dmax = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            let v = boxes[i].center_distance(&boxes[j]);
            d[[i, j]] = v;
            dmax = dmax.max(v);
        }
    }
    if dmax <= 0.0 {
        return Array2::ones((k, k));
    }
    d.mapv(|v| (-v / dmax).exp())
}

/// Mean over rows as a `1 x n` matrix, and its backward.
pub fn mean_rows(x: &Tensor2) -> Tensor2 {
    x.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0))
}

pub fn mean_rows_backward(dy: &Tensor2, rows: usize) -> Tensor2 {
    let mut out = Array2::zeros((rows, dy.ncols()));
    let scale = 1.0 / rows as f64;
    for mut r in out.rows_mut() {
        r.assign(&(dy.row(0).to_owned() * scale));
    }
    out
}
