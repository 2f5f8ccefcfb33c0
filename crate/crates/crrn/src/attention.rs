//! ST-Attention: a single-channel map extracted from each encoder hidden
//! state, added on the encoder's temporal edge and subtracted from the
//! decoder's hidden state at the same (layer, timestep).
//!
//! An all-zero map is short-circuited so that the zero-kernel model is
//! bit-identical to the no-attention ablation. The general add/subtract
//! round trip recovers the input exactly in real arithmetic; in floats it
//! is within one rounding of each element (see tests).

use rand::Rng;

use crate::cells::uniform_tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{ParamId, ParamStore, Tape, TapeId};
use crate::tensor::{conv2d_raw, Dims, Tensor};

#[derive(Debug, Clone)]
pub struct AttentionKernel {
    /// (1, c, k, k) conv weight; output channel count is exactly 1.
    pub w_a: ParamId,
    pub k: usize,
}

impl AttentionKernel {
    pub fn init<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        prefix: &str,
        c: usize,
        k: usize,
        rng: &mut R,
    ) -> Self {
        let w = uniform_tensor(Dims::new(1, c, k, k), c * k * k, rng);
        AttentionKernel {
            w_a: store.add(format!("{prefix}w_a"), w),
            k,
        }
    }
}

/// A_t = tanh(conv(E_t, W_A)), same padding.
pub fn compute_attention<S: Scalar>(w_a: &Tensor<S>, e: &Tensor<S>) -> Result<Tensor<S>> {
    let wd = w_a.dims();
    if wd.n != 1 {
        return Err(Error::invalid("attention kernel must have one output channel"));
    }
    let pad = (wd.h - 1) / 2;
    Ok(conv2d_raw(e, w_a, None, 1, pad)?.map(|v| v.tanh()))
}

fn check_spatial<S: Scalar>(x: &Tensor<S>, a: &Tensor<S>, context: &'static str) -> Result<()> {
    let (xd, ad) = (x.dims(), a.dims());
    if ad.c != 1 || ad.n != xd.n || ad.h != xd.h || ad.w != xd.w {
        return Err(Error::ShapeMismatch {
            context,
            expected: Dims::new(xd.n, 1, xd.h, xd.w),
            got: ad,
        });
    }
    Ok(())
}

fn is_zero<S: Scalar>(a: &Tensor<S>) -> bool {
    a.data().iter().all(|&v| v == S::zero())
}

/// Ê_t = E_t + A^rep, the map replicated across E's channels.
pub fn apply_attention<S: Scalar>(e: &Tensor<S>, a: &Tensor<S>) -> Result<Tensor<S>> {
    check_spatial(e, a, "apply_attention")?;
    if is_zero(a) {
        return Ok(e.clone());
    }
    let d = e.dims();
    let mut out = e.clone();
    for n in 0..d.n {
        for c in 0..d.c {
            for y in 0..d.h {
                for x in 0..d.w {
                    let v = out.at(n, c, y, x) + a.at(n, 0, y, x);
                    out.set(n, c, y, x, v);
                }
            }
        }
    }
    Ok(out)
}

/// D_t = D̂_t − A^rep.
pub fn release_attention<S: Scalar>(d_hat: &Tensor<S>, a: &Tensor<S>) -> Result<Tensor<S>> {
    check_spatial(d_hat, a, "release_attention")?;
    if is_zero(a) {
        return Ok(d_hat.clone());
    }
    let d = d_hat.dims();
    let mut out = d_hat.clone();
    for n in 0..d.n {
        for c in 0..d.c {
            for y in 0..d.h {
                for x in 0..d.w {
                    let v = out.at(n, c, y, x) - a.at(n, 0, y, x);
                    out.set(n, c, y, x, v);
                }
            }
        }
    }
    Ok(out)
}

/// Tape-level map extraction for training.
pub fn compute_attention_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    kernel: &AttentionKernel,
    e: TapeId,
) -> Result<TapeId> {
    let w = tape.param(store, kernel.w_a);
    let pad = (kernel.k - 1) / 2;
    let conv = tape.conv2d(e, w, None, 1, pad)?;
    Ok(tape.tanh(conv))
}

/// Tape-level Ê = E + A^rep. Identically-zero maps pass E through
/// untouched; an exactly zero map cannot occur with randomly initialised
/// kernels, so training gradients are unaffected.
pub fn apply_attention_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    e: TapeId,
    a: TapeId,
) -> Result<TapeId> {
    if is_zero(tape.value(a)) {
        return Ok(e);
    }
    let c = tape.value(e).dims().c;
    let rep = tape.replicate_channels(a, c)?;
    tape.add(e, rep)
}

/// Tape-level D = D̂ − A^rep with the same zero short-circuit.
pub fn release_attention_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    d_hat: TapeId,
    a: TapeId,
) -> Result<TapeId> {
    if is_zero(tape.value(a)) {
        return Ok(d_hat);
    }
    let c = tape.value(d_hat).dims().c;
    let rep = tape.replicate_channels(a, c)?;
    tape.sub(d_hat, rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::grad_check;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type T = Tensor<f64>;

    fn tensor_strategy(dims: Dims) -> impl Strategy<Value = T> {
        proptest::collection::vec(-1.0f64..1.0, dims.len())
            .prop_map(move |v| T::new(dims, v).unwrap())
    }

    proptest! {
        #[test]
        fn round_trip_recovers_input(
            x in tensor_strategy(Dims::new(1, 3, 4, 4)),
            a in tensor_strategy(Dims::new(1, 1, 4, 4)),
        ) {
            let back = release_attention(&apply_attention(&x, &a).unwrap(), &a).unwrap();
            // (x + a) - a re-rounds, so allow one rounding per element.
            for (i, (&u, &v)) in back.data().iter().zip(x.data()).enumerate() {
                let av = a.data()[i % 16].abs();
                let tol = f64::EPSILON * (v.abs() + av);
                prop_assert!((u - v).abs() <= tol, "{u} vs {v}");
            }
        }

        #[test]
        fn replicated_channels_identical(
            x in tensor_strategy(Dims::new(1, 3, 4, 4)),
            a in tensor_strategy(Dims::new(1, 1, 4, 4)),
        ) {
            let applied = apply_attention(&x, &a).unwrap();
            // The same map value is added to every channel; recovering it as
            // (x + a) - x re-rounds, so cross-channel agreement is to 1 ulp.
            let diff = applied.zip_map(&x, |u, v| u - v).unwrap();
            for c in 1..3 {
                for y in 0..4 {
                    for xx in 0..4 {
                        let (u, v) = (diff.at(0, c, y, xx), diff.at(0, 0, y, xx));
                        let tol = 4.0 * f64::EPSILON * (x.at(0, c, y, xx).abs()
                            + x.at(0, 0, y, xx).abs()
                            + a.at(0, 0, y, xx).abs());
                        prop_assert!((u - v).abs() <= tol, "{u} vs {v}");
                    }
                }
            }
        }
    }

    #[test]
    fn zero_map_is_bit_exact_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Dims::new(1, 4, 5, 5);
        let x = T::new(
            d,
            (0..d.len())
                .map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0))
                .collect(),
        )
        .unwrap();
        let a = T::zeros(Dims::new(1, 1, 5, 5));
        let applied = apply_attention(&x, &a).unwrap();
        assert_eq!(applied, x);
        let released = release_attention(&x, &a).unwrap();
        assert_eq!(released, x);
    }

    #[test]
    fn zero_kernel_gives_zero_map() {
        let w = T::zeros(Dims::new(1, 3, 3, 3));
        let e = T::full(Dims::new(1, 3, 4, 4), 0.7);
        let a = compute_attention(&w, &e).unwrap();
        assert!(a.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn map_matches_conv_oracle_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::<f64>::new();
        let kernel = AttentionKernel::init(&mut store, "t.", 3, 3, &mut rng);
        let d = Dims::new(1, 3, 6, 6);
        let e = T::new(
            d,
            (0..d.len()).map(|_| rand::Rng::gen_range(&mut rng, -2.0..2.0)).collect(),
        )
        .unwrap();
        let a = compute_attention(store.value(kernel.w_a), &e).unwrap();
        assert_eq!(a.dims(), Dims::new(1, 1, 6, 6));
        let conv = conv2d_raw(&e, store.value(kernel.w_a), None, 1, 1).unwrap();
        for (&av, &cv) in a.data().iter().zip(conv.data()) {
            assert!((av - cv.tanh()).abs() < 1e-12);
            assert!(av > -1.0 && av < 1.0);
        }
        // Tape path agrees with the pure function.
        let mut tape = Tape::new();
        let et = tape.constant(e);
        let at = compute_attention_on_tape(&mut tape, &store, &kernel, et).unwrap();
        assert_eq!(tape.value(at), &a);
    }

    #[test]
    fn constant_input_gives_constant_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut store = ParamStore::<f64>::new();
        let kernel = AttentionKernel::init(&mut store, "t.", 2, 3, &mut rng);
        let e = T::full(Dims::new(1, 2, 6, 6), 0.4);
        let a = compute_attention(store.value(kernel.w_a), &e).unwrap();
        let mid = a.at(0, 0, 2, 2);
        for y in 1..5 {
            for x in 1..5 {
                assert_eq!(a.at(0, 0, y, x), mid);
            }
        }
    }

    #[test]
    fn compute_apply_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut store = ParamStore::<f64>::new();
        let kernel = AttentionKernel::init(&mut store, "t.", 2, 3, &mut rng);
        let d = Dims::new(1, 2, 4, 4);
        let e = T::new(
            d,
            (0..d.len()).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect(),
        )
        .unwrap();
        let max_err = grad_check(
            &mut store,
            |tape, store| {
                let et = tape.constant(e.clone());
                let at = compute_attention_on_tape(tape, store, &kernel, et).unwrap();
                let applied = apply_attention_on_tape(tape, et, at).unwrap();
                tape.sum_all(applied)
            },
            1e-6,
            20,
            77,
        );
        assert!(max_err < 1e-5, "max relative grad error {max_err}");
    }
}
