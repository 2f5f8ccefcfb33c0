//! Recurrent cell step functions: peephole ConvLSTM and the CSTM variant,
//! which replaces the forget path `f ⊙ C_{t-1}` with a 1x1 mix of the
//! previous cell state and the cell state of the layer below.
//!
//! Peephole weights are per-element, so cells are tied to a fixed spatial
//! extent and batch size 1.

use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tape::{ParamId, ParamStore, Tape, TapeId};
use crate::tensor::{Dims, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct CellState {
    pub h: TapeId,
    pub c: TapeId,
}

#[derive(Debug, Clone)]
pub struct ConvLstmParams {
    pub w_xi: ParamId,
    pub w_hi: ParamId,
    pub w_xf: ParamId,
    pub w_hf: ParamId,
    pub w_xg: ParamId,
    pub w_hg: ParamId,
    pub w_xo: ParamId,
    pub w_ho: ParamId,
    pub p_i: ParamId,
    pub p_f: ParamId,
    pub p_o: ParamId,
    pub b_i: ParamId,
    pub b_f: ParamId,
    pub b_g: ParamId,
    pub b_o: ParamId,
    pub k: usize,
}

#[derive(Debug, Clone)]
pub struct CstmParams {
    pub base: ConvLstmParams,
    /// (c, 2c, 1, 1); mixes [C_{t-1}; C_t^{l-1}] into the retained state.
    pub w_mix: ParamId,
}

pub(crate) fn uniform_tensor<S: Scalar, R: Rng>(dims: Dims, fan_in: usize, rng: &mut R) -> Tensor<S> {
    let bound = (1.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    let data = (0..dims.len())
        .map(|_| S::from_real(dist.sample(rng)))
        .collect();
    Tensor::new(dims, data).expect("uniform_tensor length")
}

impl ConvLstmParams {
    /// `c_in` is the channel count of the input frame X, `c` the hidden
    /// width; peepholes are sized for frames of `h` x `w`.
    pub fn init<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        prefix: &str,
        c_in: usize,
        c: usize,
        k: usize,
        h: usize,
        w: usize,
        rng: &mut R,
    ) -> Self {
        let xw = Dims::new(c, c_in, k, k);
        let hw = Dims::new(c, c, k, k);
        let pd = Dims::new(1, c, h, w);
        let bd = Dims::new(1, c, 1, 1);
        let mut conv = |store: &mut ParamStore<S>, name: &str, d: Dims, fan: usize| {
            let t = uniform_tensor(d, fan, rng);
            store.add(format!("{prefix}{name}"), t)
        };
        let w_xi = conv(store, "w_xi", xw, c_in * k * k);
        let w_hi = conv(store, "w_hi", hw, c * k * k);
        let w_xf = conv(store, "w_xf", xw, c_in * k * k);
        let w_hf = conv(store, "w_hf", hw, c * k * k);
        let w_xg = conv(store, "w_xg", xw, c_in * k * k);
        let w_hg = conv(store, "w_hg", hw, c * k * k);
        let w_xo = conv(store, "w_xo", xw, c_in * k * k);
        let w_ho = conv(store, "w_ho", hw, c * k * k);
        let p_i = conv(store, "p_i", pd, c);
        let p_f = conv(store, "p_f", pd, c);
        let p_o = conv(store, "p_o", pd, c);
        let b_i = store.add(format!("{prefix}b_i"), Tensor::zeros(bd));
        let b_f = store.add(format!("{prefix}b_f"), Tensor::zeros(bd));
        let b_g = store.add(format!("{prefix}b_g"), Tensor::zeros(bd));
        let b_o = store.add(format!("{prefix}b_o"), Tensor::zeros(bd));
        ConvLstmParams {
            w_xi,
            w_hi,
            w_xf,
            w_hf,
            w_xg,
            w_hg,
            w_xo,
            w_ho,
            p_i,
            p_f,
            p_o,
            b_i,
            b_f,
            b_g,
            b_o,
            k,
        }
    }
}

impl CstmParams {
    pub fn init<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        prefix: &str,
        c_in: usize,
        c: usize,
        k: usize,
        h: usize,
        w: usize,
        rng: &mut R,
    ) -> Self {
        let base = ConvLstmParams::init(store, prefix, c_in, c, k, h, w, rng);
        let w_mix = store.add(
            format!("{prefix}w_mix"),
            uniform_tensor(Dims::new(c, 2 * c, 1, 1), 2 * c, rng),
        );
        CstmParams { base, w_mix }
    }
}

/// Scalar count of a ConvLSTM cell with c_in = c: 8 c^2 k^2 conv weights,
/// three per-element peepholes, four per-channel biases.
pub fn convlstm_param_count(c: usize, k: usize, h: usize, w: usize) -> usize {
    8 * c * c * k * k + 3 * c * h * w + 4 * c
}

/// CSTM adds the (c, 2c, 1, 1) mix weight on top of ConvLSTM.
pub fn cstm_param_count(c: usize, k: usize, h: usize, w: usize) -> usize {
    convlstm_param_count(c, k, h, w) + 2 * c * c
}

struct Gates {
    i: TapeId,
    f: TapeId,
    g: TapeId,
}

/// i, f, g shared by both cells. Peepholes on i and f see C_{t-1}.
fn gates_ifg<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    p: &ConvLstmParams,
    x: TapeId,
    prev: &CellState,
) -> Result<Gates> {
    let pad = (p.k - 1) / 2;
    let lin = |tape: &mut Tape<S>, wx, wh, bias| -> Result<TapeId> {
        let wx = tape.param(store, wx);
        let wh = tape.param(store, wh);
        let b = tape.param(store, bias);
        let a = tape.conv2d(x, wx, Some(b), 1, pad)?;
        let c = tape.conv2d(prev.h, wh, None, 1, pad)?;
        tape.add(a, c)
    };
    let pre_i = lin(tape, p.w_xi, p.w_hi, p.b_i)?;
    let pre_f = lin(tape, p.w_xf, p.w_hf, p.b_f)?;
    let pre_g = lin(tape, p.w_xg, p.w_hg, p.b_g)?;
    let pi = tape.param(store, p.p_i);
    let pf = tape.param(store, p.p_f);
    let peep_i = tape.hadamard(pi, prev.c)?;
    let peep_f = tape.hadamard(pf, prev.c)?;
    let pre_i = tape.add(pre_i, peep_i)?;
    let pre_f = tape.add(pre_f, peep_f)?;
    Ok(Gates {
        i: tape.sigmoid(pre_i),
        f: tape.sigmoid(pre_f),
        g: tape.tanh(pre_g),
    })
}

/// Output gate (peephole on the freshly computed C_t) and H_t = o ⊙ tanh(C_t).
fn finish_step<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    p: &ConvLstmParams,
    x: TapeId,
    prev_h: TapeId,
    c_t: TapeId,
) -> Result<CellState> {
    let pad = (p.k - 1) / 2;
    let wxo = tape.param(store, p.w_xo);
    let who = tape.param(store, p.w_ho);
    let bo = tape.param(store, p.b_o);
    let a = tape.conv2d(x, wxo, Some(bo), 1, pad)?;
    let b = tape.conv2d(prev_h, who, None, 1, pad)?;
    let pre_o = tape.add(a, b)?;
    let po = tape.param(store, p.p_o);
    let peep_o = tape.hadamard(po, c_t)?;
    let pre_o = tape.add(pre_o, peep_o)?;
    let o = tape.sigmoid(pre_o);
    let tc = tape.tanh(c_t);
    let h = tape.hadamard(o, tc)?;
    Ok(CellState { h, c: c_t })
}

/// One peephole ConvLSTM step: C_t = f ⊙ C_{t-1} + i ⊙ g.
pub fn convlstm_step<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    p: &ConvLstmParams,
    x: TapeId,
    prev: &CellState,
) -> Result<CellState> {
    let gates = gates_ifg(tape, store, p, x, prev)?;
    let retain = tape.hadamard(gates.f, prev.c)?;
    let write = tape.hadamard(gates.i, gates.g)?;
    let c_t = tape.add(retain, write)?;
    finish_step(tape, store, p, x, prev.h, c_t)
}

/// One CSTM step: C_t = f ⊙ conv1x1([C_{t-1}; C_below], W_mix) + i ⊙ g.
/// `c_below` is the cell state of the layer below at the same timestep
/// (zeros for the bottom layer).
pub fn cstm_step<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    p: &CstmParams,
    x: TapeId,
    prev: &CellState,
    c_below: TapeId,
) -> Result<CellState> {
    let gates = gates_ifg(tape, store, &p.base, x, prev)?;
    let stacked = tape.concat_channels(prev.c, c_below)?;
    let wm = tape.param(store, p.w_mix);
    let mixed = tape.conv1x1(stacked, wm)?;
    let retain = tape.hadamard(gates.f, mixed)?;
    let write = tape.hadamard(gates.i, gates.g)?;
    let c_t = tape.add(retain, write)?;
    finish_step(tape, store, &p.base, x, prev.h, c_t)
}
