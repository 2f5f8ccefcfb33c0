//! Reverse-mode differentiation over a recorded operation tape, parameter
//! storage with Adam, and the finite-difference gradient checker.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{
    conv2d_grad_bias, conv2d_grad_input, conv2d_grad_weight, conv2d_raw,
    conv_transpose2d_grad_input, conv_transpose2d_grad_weight, conv_transpose2d_raw, Dims, Tensor,
};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct ParamEntry<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
    m: Tensor<S>,
    v: Tensor<S>,
}

/// Owns every trainable tensor of a model together with its gradient and
/// Adam moment buffers.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S> {
    entries: Vec<ParamEntry<S>>,
    adam_step_count: u64,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            adam_step_count: 0,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        let dims = value.dims();
        self.entries.push(ParamEntry {
            name: name.into(),
            value,
            grad: Tensor::zeros(dims),
            m: Tensor::zeros(dims),
            v: Tensor::zeros(dims),
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry<S> {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<S>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad = Tensor::zeros(e.grad.dims());
        }
    }

    pub fn total_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.dims().len()).sum()
    }

    fn accumulate_grad(&mut self, id: ParamId, g: &Tensor<S>) {
        self.entries[id.0].grad.add_in_place(g);
    }

    /// Standard Adam update applied in place; moment buffers persist.
    pub fn adam_step(&mut self, lr: f64, beta1: f64, beta2: f64, eps: f64) {
        self.adam_step_count += 1;
        let t = self.adam_step_count as f64;
        let b1 = S::from_real(beta1);
        let b2 = S::from_real(beta2);
        let one = S::one();
        let corr1 = S::from_real(1.0 - beta1.powf(t));
        let corr2 = S::from_real(1.0 - beta2.powf(t));
        let lr = S::from_real(lr);
        let eps = S::from_real(eps);
        for e in &mut self.entries {
            let n = e.value.dims().len();
            for i in 0..n {
                let g = e.grad.data()[i];
                let m = b1 * e.m.data()[i] + (one - b1) * g;
                let v = b2 * e.v.data()[i] + (one - b2) * g * g;
                e.m.data_mut()[i] = m;
                e.v.data_mut()[i] = v;
                let mhat = m / corr1;
                let vhat = v / corr2;
                e.value.data_mut()[i] = e.value.data()[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }

    pub fn adam_steps_taken(&self) -> u64 {
        self.adam_step_count
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BnMode {
    Train,
    Eval,
}

/// Running statistics of one batch-norm layer. Not trainable.
#[derive(Clone, Debug)]
pub struct BnStats<S> {
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
    pub initialized: bool,
}

impl<S: Scalar> BnStats<S> {
    pub fn new(channels: usize) -> Self {
        BnStats {
            running_mean: vec![S::zero(); channels],
            running_var: vec![S::one(); channels],
            initialized: false,
        }
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TapeId(pub usize);

type BackFn<S> = Box<dyn Fn(&Tensor<S>, &mut dyn FnMut(usize, Tensor<S>))>;

struct Node<S> {
    value: Tensor<S>,
    back: Option<BackFn<S>>,
    param: Option<ParamId>,
}

/// Records operations in execution order; backward traverses in exact
/// reverse order and accumulates parameter gradients additively.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: TapeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<S>, back: Option<BackFn<S>>, param: Option<ParamId>) -> TapeId {
        self.nodes.push(Node { value, back, param });
        TapeId(self.nodes.len() - 1)
    }

    /// Leaf with no gradient flow.
    pub fn constant(&mut self, value: Tensor<S>) -> TapeId {
        self.push(value, None, None)
    }

    /// Leaf bound to a parameter; grads reaching it accumulate into the store.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> TapeId {
        self.push(store.value(id).clone(), None, Some(id))
    }

    pub fn conv2d(
        &mut self,
        x: TapeId,
        w: TapeId,
        bias: Option<TapeId>,
        stride: usize,
        pad: usize,
    ) -> Result<TapeId> {
        let xv = self.value(x).clone();
        let wv = self.value(w).clone();
        let bv = bias.map(|b| self.value(b).clone());
        let out = conv2d_raw(&xv, &wv, bv.as_ref(), stride, pad)?;
        let (xd, wd) = (xv.dims(), wv.dims());
        let back: BackFn<S> = Box::new(move |g, acc| {
            acc(x.0, conv2d_grad_input(g, &wv, xd, stride, pad));
            acc(w.0, conv2d_grad_weight(g, &xv, wd, stride, pad));
            if let Some(b) = bias {
                acc(b.0, conv2d_grad_bias(g));
            }
        });
        Ok(self.push(out, Some(back), None))
    }

    pub fn conv_transpose2d(
        &mut self,
        x: TapeId,
        w: TapeId,
        bias: Option<TapeId>,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<TapeId> {
        let xv = self.value(x).clone();
        let wv = self.value(w).clone();
        let bv = bias.map(|b| self.value(b).clone());
        let out = conv_transpose2d_raw(&xv, &wv, bv.as_ref(), stride, pad, out_pad)?;
        let (xd, wd) = (xv.dims(), wv.dims());
        let back: BackFn<S> = Box::new(move |g, acc| {
            acc(x.0, conv_transpose2d_grad_input(g, &wv, xd, stride, pad));
            acc(w.0, conv_transpose2d_grad_weight(g, &xv, wd, stride, pad));
            if let Some(b) = bias {
                acc(b.0, conv2d_grad_bias(g));
            }
        });
        Ok(self.push(out, Some(back), None))
    }

    /// Per-pixel channel mixing; weight dims (c_out, c_in, 1, 1), no bias.
    pub fn conv1x1(&mut self, x: TapeId, w: TapeId) -> Result<TapeId> {
        let wd = self.value(w).dims();
        if wd.h != 1 || wd.w != 1 {
            return Err(Error::invalid("conv1x1 weight must be 1x1"));
        }
        self.conv2d(x, w, None, 1, 0)
    }

    pub fn sigmoid(&mut self, x: TapeId) -> TapeId {
        let one = S::one();
        let out = self.value(x).map(|v| one / (one + (-v).exp()));
        let saved = out.clone();
        let back: BackFn<S> = Box::new(move |g, acc| {
            let gi = g
                .zip_map(&saved, |gv, y| gv * y * (S::one() - y))
                .unwrap();
            acc(x.0, gi);
        });
        self.push(out, Some(back), None)
    }

    pub fn tanh(&mut self, x: TapeId) -> TapeId {
        let out = self.value(x).map(|v| v.tanh());
        let saved = out.clone();
        let back: BackFn<S> = Box::new(move |g, acc| {
            let gi = g.zip_map(&saved, |gv, y| gv * (S::one() - y * y)).unwrap();
            acc(x.0, gi);
        });
        self.push(out, Some(back), None)
    }

    pub fn relu(&mut self, x: TapeId) -> TapeId {
        let out = self.value(x).map(|v| if v > S::zero() { v } else { S::zero() });
        let saved = self.value(x).clone();
        let back: BackFn<S> = Box::new(move |g, acc| {
            let gi = g
                .zip_map(&saved, |gv, iv| if iv > S::zero() { gv } else { S::zero() })
                .unwrap();
            acc(x.0, gi);
        });
        self.push(out, Some(back), None)
    }

    pub fn add(&mut self, a: TapeId, b: TapeId) -> Result<TapeId> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let back: BackFn<S> = Box::new(move |g, acc| {
            acc(a.0, g.clone());
            acc(b.0, g.clone());
        });
        Ok(self.push(out, Some(back), None))
    }

    pub fn sub(&mut self, a: TapeId, b: TapeId) -> Result<TapeId> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let back: BackFn<S> = Box::new(move |g, acc| {
            acc(a.0, g.clone());
            acc(b.0, g.map(|v| -v));
        });
        Ok(self.push(out, Some(back), None))
    }

    pub fn hadamard(&mut self, a: TapeId, b: TapeId) -> Result<TapeId> {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let out = av.zip_map(&bv, |x, y| x * y)?;
        let back: BackFn<S> = Box::new(move |g, acc| {
            acc(a.0, g.zip_map(&bv, |gv, y| gv * y).unwrap());
            acc(b.0, g.zip_map(&av, |gv, x| gv * x).unwrap());
        });
        Ok(self.push(out, Some(back), None))
    }

    pub fn scale(&mut self, x: TapeId, k: S) -> TapeId {
        let out = self.value(x).map(|v| v * k);
        let back: BackFn<S> = Box::new(move |g, acc| {
            acc(x.0, g.map(|v| v * k));
        });
        self.push(out, Some(back), None)
    }

    /// Concatenate along the channel axis, a's channels first.
    pub fn concat_channels(&mut self, a: TapeId, b: TapeId) -> Result<TapeId> {
        let ad = self.value(a).dims();
        let bd = self.value(b).dims();
        if ad.n != bd.n || ad.h != bd.h || ad.w != bd.w {
            return Err(Error::ShapeMismatch {
                context: "concat_channels",
                expected: ad,
                got: bd,
            });
        }
        let od = Dims::new(ad.n, ad.c + bd.c, ad.h, ad.w);
        let mut out = Tensor::zeros(od);
        for n in 0..ad.n {
            for c in 0..ad.c {
                for y in 0..ad.h {
                    for x in 0..ad.w {
                        out.set(n, c, y, x, self.value(a).at(n, c, y, x));
                    }
                }
            }
            for c in 0..bd.c {
                for y in 0..ad.h {
                    for x in 0..ad.w {
                        out.set(n, ad.c + c, y, x, self.value(b).at(n, c, y, x));
                    }
                }
            }
        }
        let back: BackFn<S> = Box::new(move |g, acc| {
            let mut ga = Tensor::zeros(ad);
            let mut gb = Tensor::zeros(bd);
            for n in 0..ad.n {
                for c in 0..ad.c {
                    for y in 0..ad.h {
                        for x in 0..ad.w {
                            ga.set(n, c, y, x, g.at(n, c, y, x));
                        }
                    }
                }
                for c in 0..bd.c {
                    for y in 0..ad.h {
                        for x in 0..ad.w {
                            gb.set(n, c, y, x, g.at(n, ad.c + c, y, x));
                        }
                    }
                }
            }
            acc(a.0, ga);
            acc(b.0, gb);
        });
        Ok(self.push(out, Some(back), None))
    }

    /// Copy a single-channel map across `channels` channels.
    pub fn replicate_channels(&mut self, x: TapeId, channels: usize) -> Result<TapeId> {
        let xd = self.value(x).dims();
        if xd.c != 1 {
            return Err(Error::invalid("replicate_channels expects one channel"));
        }
        let od = Dims::new(xd.n, channels, xd.h, xd.w);
        let mut out = Tensor::zeros(od);
        for n in 0..xd.n {
            for c in 0..channels {
                for y in 0..xd.h {
                    for xq in 0..xd.w {
                        out.set(n, c, y, xq, self.value(x).at(n, 0, y, xq));
                    }
                }
            }
        }
        let back: BackFn<S> = Box::new(move |g, acc| {
            let mut gx = Tensor::zeros(xd);
            for n in 0..xd.n {
                for c in 0..channels {
                    for y in 0..xd.h {
                        for xq in 0..xd.w {
                            let i = gx.idx(n, 0, y, xq);
                            gx.data_mut()[i] += g.at(n, c, y, xq);
                        }
                    }
                }
            }
            acc(x.0, gx);
        });
        Ok(self.push(out, Some(back), None))
    }

    pub fn sum_all(&mut self, x: TapeId) -> TapeId {
        let xd = self.value(x).dims();
        let s = self.value(x).sum();
        let back: BackFn<S> = Box::new(move |g, acc| {
            acc(x.0, Tensor::full(xd, g.scalar_value()));
        });
        self.push(Tensor::scalar(s), Some(back), None)
    }

    /// Per-channel batch normalization over (n, h, w).
    pub fn batch_norm(
        &mut self,
        x: TapeId,
        gamma: TapeId,
        beta: TapeId,
        stats: &mut BnStats<S>,
        mode: BnMode,
    ) -> Result<TapeId> {
        let xv = self.value(x).clone();
        let xd = xv.dims();
        let c = xd.c;
        if self.value(gamma).dims().len() != c || self.value(beta).dims().len() != c {
            return Err(Error::invalid("batch_norm gamma/beta must have c entries"));
        }
        let gv = self.value(gamma).clone();
        let bv = self.value(beta).clone();
        let eps = S::from_real(BN_EPS);
        let m = (xd.n * xd.h * xd.w) as f64;
        let m_s = S::from_real(m);

        let (mean, var) = match mode {
            BnMode::Train => {
                let mut mean = vec![S::zero(); c];
                let mut var = vec![S::zero(); c];
                for ch in 0..c {
                    let mut acc = S::zero();
                    for n in 0..xd.n {
                        for y in 0..xd.h {
                            for xq in 0..xd.w {
                                acc += xv.at(n, ch, y, xq);
                            }
                        }
                    }
                    mean[ch] = acc / m_s;
                    let mut v = S::zero();
                    for n in 0..xd.n {
                        for y in 0..xd.h {
                            for xq in 0..xd.w {
                                let d = xv.at(n, ch, y, xq) - mean[ch];
                                v += d * d;
                            }
                        }
                    }
                    var[ch] = v / m_s;
                }
                let mom = S::from_real(BN_MOMENTUM);
                let keep = S::one() - mom;
                if !stats.initialized {
                    stats.running_mean.clone_from_slice(&mean);
                    stats.running_var.clone_from_slice(&var);
                    stats.initialized = true;
                } else {
                    for ch in 0..c {
                        stats.running_mean[ch] = keep * stats.running_mean[ch] + mom * mean[ch];
                        stats.running_var[ch] = keep * stats.running_var[ch] + mom * var[ch];
                    }
                }
                (mean, var)
            }
            BnMode::Eval => {
                if !stats.initialized {
                    return Err(Error::UninitializedBatchNorm);
                }
                (stats.running_mean.clone(), stats.running_var.clone())
            }
        };

        let mut xhat = Tensor::zeros(xd);
        let mut out = Tensor::zeros(xd);
        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
        for ch in 0..c {
            for n in 0..xd.n {
                for y in 0..xd.h {
                    for xq in 0..xd.w {
                        let xh = (xv.at(n, ch, y, xq) - mean[ch]) * inv_std[ch];
                        xhat.set(n, ch, y, xq, xh);
                        out.set(n, ch, y, xq, gv.data()[ch] * xh + bv.data()[ch]);
                    }
                }
            }
        }
        out.debug_check_finite("batch_norm");

        let gamma_id = gamma;
        let beta_id = beta;
        let back: BackFn<S> = Box::new(move |g, acc| {
            let mut ggamma = Tensor::zeros(Dims::new(1, c, 1, 1));
            let mut gbeta = Tensor::zeros(Dims::new(1, c, 1, 1));
            let mut gx = Tensor::zeros(xd);
            for ch in 0..c {
                let mut sum_dy = S::zero();
                let mut sum_dy_xhat = S::zero();
                for n in 0..xd.n {
                    for y in 0..xd.h {
                        for xq in 0..xd.w {
                            let dy = g.at(n, ch, y, xq);
                            sum_dy += dy;
                            sum_dy_xhat += dy * xhat.at(n, ch, y, xq);
                        }
                    }
                }
                ggamma.data_mut()[ch] = sum_dy_xhat;
                gbeta.data_mut()[ch] = sum_dy;
                let k = gv.data()[ch] * inv_std[ch];
                match mode {
                    BnMode::Train => {
                        let mean_dy = sum_dy / m_s;
                        let mean_dy_xhat = sum_dy_xhat / m_s;
                        for n in 0..xd.n {
                            for y in 0..xd.h {
                                for xq in 0..xd.w {
                                    let dy = g.at(n, ch, y, xq);
                                    let xh = xhat.at(n, ch, y, xq);
                                    gx.set(n, ch, y, xq, k * (dy - mean_dy - xh * mean_dy_xhat));
                                }
                            }
                        }
                    }
                    BnMode::Eval => {
                        for n in 0..xd.n {
                            for y in 0..xd.h {
                                for xq in 0..xd.w {
                                    gx.set(n, ch, y, xq, k * g.at(n, ch, y, xq));
                                }
                            }
                        }
                    }
                }
            }
            acc(x.0, gx);
            acc(gamma_id.0, ggamma);
            acc(beta_id.0, gbeta);
        });
        Ok(self.push(out, Some(back), None))
    }

    /// Accumulate d(loss)/d(param) into the store for every parameter leaf.
    pub fn backward(&self, loss: TapeId, store: &mut ParamStore<S>) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::invalid("backward requires a scalar loss"));
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(S::one()));
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(pid) = node.param {
                store.accumulate_grad(pid, &g);
            }
            if let Some(back) = &node.back {
                back(&g, &mut |j, contrib| match &mut grads[j] {
                    Some(existing) => existing.add_in_place(&contrib),
                    slot => *slot = Some(contrib),
                });
            }
        }
        Ok(())
    }
}

/// Max over sampled parameter coordinates of the relative disagreement
/// between tape gradients and central finite differences.
///
/// The closure must be a deterministic function of the store contents.
pub fn grad_check<S: Scalar, F>(
    store: &mut ParamStore<S>,
    mut f: F,
    eps: f64,
    max_coords_per_param: usize,
    seed: u64,
) -> f64
where
    F: FnMut(&mut Tape<S>, &ParamStore<S>) -> TapeId,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store);
    tape.backward(loss, store).expect("scalar loss");
    let analytic: Vec<Tensor<S>> = store.iter().map(|(_, e)| e.grad.clone()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let n_params = store.len();
    for p in 0..n_params {
        let len = store.value(ParamId(p)).dims().len();
        let coords: Vec<usize> = if len <= max_coords_per_param {
            (0..len).collect()
        } else {
            (0..max_coords_per_param)
                .map(|_| rng.gen_range(0..len))
                .collect()
        };
        for i in coords {
            let orig = store.value(ParamId(p)).data()[i];
            let h = S::from_real(eps);
            store.value_mut(ParamId(p)).data_mut()[i] = orig + h;
            let mut t1 = Tape::new();
            let l1 = f(&mut t1, store);
            let up = t1.value(l1).scalar_value().as_f64();
            store.value_mut(ParamId(p)).data_mut()[i] = orig - h;
            let mut t2 = Tape::new();
            let l2 = f(&mut t2, store);
            let down = t2.value(l2).scalar_value().as_f64();
            store.value_mut(ParamId(p)).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[p].data()[i].as_f64();
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}
