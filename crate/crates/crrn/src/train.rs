//! Loss, scheduled sampling, denoising corruption, the epsilon schedule,
//! and the epoch loop.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CrrnModel, FeedPolicy};
use crate::scalar::Scalar;
use crate::tape::{BnMode, BnStats, ParamStore, Tape, TapeId};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of epochs over which epsilon decays linearly; constant
    /// afterwards.
    pub epsilon_decay_frac: f64,
    pub noise_sigma: f64,
    pub zero_prob: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            learning_rate: 1e-3,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            epsilon_decay_frac: 0.8,
            noise_sigma: 0.1,
            zero_prob: 0.05,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon_start < self.epsilon_end {
            return Err(Error::invalid("epsilon_start must be >= epsilon_end"));
        }
        for (name, v) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
            ("epsilon_decay_frac", self.epsilon_decay_frac),
            ("zero_prob", self.zero_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0,1]")));
            }
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::invalid("noise_sigma must be >= 0"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        Ok(())
    }
}

/// Linear decay from epsilon_start to epsilon_end over the first
/// `epsilon_decay_frac` of epochs, then constant.
pub fn epsilon_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let span = cfg.epochs as f64 * cfg.epsilon_decay_frac;
    if span <= 0.0 {
        return cfg.epsilon_end;
    }
    let frac = epoch as f64 / span;
    if frac >= 1.0 {
        // exact endpoint once decay completes
        return cfg.epsilon_end;
    }
    cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac
}

/// Eq. 5: X_in = theta X + (1 - theta) X'; theta is binary, so this is an
/// exact selection.
pub fn scheduled_sample<S: Scalar>(x: &Tensor<S>, x_gen: &Tensor<S>, theta: bool) -> Tensor<S> {
    if theta {
        x.clone()
    } else {
        x_gen.clone()
    }
}

/// One Bernoulli(epsilon) teacher-forcing draw per timestep.
pub fn draw_sample_mask(t_len: usize, epsilon: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let d = Bernoulli::new(epsilon.clamp(0.0, 1.0)).expect("valid probability");
    (0..t_len).map(|_| d.sample(rng)).collect()
}

/// Denoising corruption on the volume channel only: additive Gaussian
/// noise, then random zeroing with probability p_z. The pad-mask channel
/// is untouched.
pub fn corrupt_input<S: Scalar>(
    x: &Tensor<S>,
    sigma: f64,
    p_z: f64,
    rng: &mut ChaCha8Rng,
) -> Tensor<S> {
    if sigma == 0.0 && p_z == 0.0 {
        return x.clone();
    }
    let normal = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let d = x.dims();
    let mut out = x.clone();
    for n in 0..d.n {
        for y in 0..d.h {
            for xq in 0..d.w {
                let mut v = out.at(n, 0, y, xq);
                if sigma > 0.0 {
                    v += S::from_real(normal.sample(rng));
                }
                if p_z > 0.0 && rng.gen_range(0.0..1.0) < p_z {
                    v = S::zero();
                }
                out.set(n, 0, y, xq, v);
            }
        }
    }
    out
}

/// Mean squared error over pad pixels of the volume channel. `pad_mask`
/// is (1, 1, h, w) with ones on pad cells.
pub fn masked_mse<S: Scalar>(
    tape: &mut Tape<S>,
    outputs: &[TapeId],
    clean: &[Tensor<S>],
    pad_mask: &Tensor<S>,
) -> Result<TapeId> {
    if outputs.len() != clean.len() || outputs.is_empty() {
        return Err(Error::invalid("masked_mse needs equal, nonempty sequences"));
    }
    let fd = clean[0].dims();
    let mut gate = Tensor::zeros(fd);
    let mut count = 0usize;
    for y in 0..fd.h {
        for x in 0..fd.w {
            if pad_mask.at(0, 0, y, x) != S::zero() {
                gate.set(0, 0, y, x, S::one());
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::invalid("pad mask selects no cells"));
    }
    let gate_id = tape.constant(gate);
    let mut total: Option<TapeId> = None;
    for (&out, frame) in outputs.iter().zip(clean) {
        let target = tape.constant(frame.clone());
        let diff = tape.sub(out, target)?;
        let sq = tape.hadamard(diff, diff)?;
        let gated = tape.hadamard(sq, gate_id)?;
        let s = tape.sum_all(gated);
        total = Some(match total {
            None => s,
            Some(acc) => tape.add(acc, s)?,
        });
    }
    let norm = S::from_real(1.0 / (outputs.len() * count) as f64);
    Ok(tape.scale(total.unwrap(), norm))
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub epsilon: f64,
    pub loss: f64,
}

/// Trains in place: per sequence, corrupt inputs, forward under scheduled
/// sampling, masked-MSE backward, one Adam step. Returns per-epoch mean
/// loss.
pub fn train<S: Scalar>(
    model: &CrrnModel,
    store: &mut ParamStore<S>,
    bn: &mut [BnStats<S>],
    sequences: &[Vec<Tensor<S>>],
    pad_mask: &Tensor<S>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if sequences.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let epsilon = epsilon_schedule(epoch, cfg);
        let mut epoch_loss = 0.0;
        for (si, seq) in sequences.iter().enumerate() {
            let corrupted: Vec<Tensor<S>> = seq
                .iter()
                .map(|f| corrupt_input(f, cfg.noise_sigma, cfg.zero_prob, &mut rng))
                .collect();
            let mask = draw_sample_mask(seq.len(), epsilon, &mut rng);
            let mut tape = Tape::new();
            let outputs = model.forward(
                &mut tape,
                store,
                bn,
                BnMode::Train,
                &corrupted,
                &FeedPolicy::Scheduled(mask),
            )?;
            let loss = masked_mse(&mut tape, &outputs, seq, pad_mask)?;
            let loss_v = tape.value(loss).scalar_value().as_f64();
            if !loss_v.is_finite() {
                return Err(Error::NanLoss {
                    epoch,
                    sequence: si,
                });
            }
            store.zero_grads();
            tape.backward(loss, store)?;
            store.adam_step(cfg.learning_rate, 0.9, 0.999, 1e-8);
            epoch_loss += loss_v;
        }
        history.push(EpochRecord {
            epoch,
            epsilon,
            loss: epoch_loss / sequences.len() as f64,
        });
    }
    Ok(history)
}

// rand_chacha's SeedableRng comes from rand_core; re-exported via rand.
use rand::SeedableRng;
