//! Adam optimization and the deterministic training loop.
//!
//! One epoch shuffles the example order with the run's seeded PRNG, walks
//! it in mini-batches, accumulates span-loss gradients over each batch, and
//! applies a single bias-corrected Adam update per batch. Everything is
//! single-threaded and replayable: the same seed, corpus, and config give
//! the same loss log and the same final weights bitwise.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::QAExample;
use crate::error::{Error, Result};
use crate::model::{span_loss, QAModel};
use crate::rng::SplitMix64;
use crate::tensor::Tape;

/// Optimization hyperparameters. The defaults are the desk-scale settings;
/// [`TrainConfig::pretrained_finetune`] switches to the learning rate used
/// with large pretrained encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 4,
            epochs: 5,
            seed: 42,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    /// Preset matching the fine-tuning rate commonly used with pretrained
    /// language models.
    pub fn pretrained_finetune() -> Self {
        TrainConfig {
            learning_rate: 3e-5,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!(
                "betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Per-parameter Adam moments plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    t: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl AdamState {
    /// Zero moments shaped like `model`'s parameters.
    pub fn new(model: &QAModel, cfg: &TrainConfig) -> Self {
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        model.visit_params(&mut |name, p| {
            m.insert(name.to_string(), vec![0.0; p.data.len()]);
            v.insert(name.to_string(), vec![0.0; p.data.len()]);
        });
        AdamState {
            m,
            v,
            t: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        }
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update in place. `grads` must cover exactly the
/// model's parameters with matching lengths; a rejected call leaves both
/// model and state untouched.
pub fn adam_step(
    model: &mut QAModel,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let mut expected = 0usize;
    let mut problem: Option<Error> = None;
    model.visit_params(&mut |name, p| {
        if problem.is_some() {
            return;
        }
        expected += 1;
        match grads.get(name) {
            Some(g) if g.len() == p.data.len() => {}
            Some(g) => {
                problem = Some(Error::Contract(format!(
                    "gradient for {name} has {} entries, parameter has {}",
                    g.len(),
                    p.data.len()
                )));
            }
            None => {
                problem = Some(Error::Contract(format!("missing gradient for {name}")));
            }
        }
    });
    if let Some(e) = problem {
        return Err(e);
    }
    if grads.len() != expected {
        return Err(Error::Contract(format!(
            "{} gradients supplied for {expected} parameters",
            grads.len()
        )));
    }

    state.t += 1;
    let t = state.t as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    model.visit_params_mut(&mut |name, p| {
        let g = &grads[name];
        let m = state.m.get_mut(name).expect("state mirrors parameters");
        let v = state.v.get_mut(name).expect("state mirrors parameters");
        for i in 0..p.data.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p.data[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    });
    Ok(())
}

/// Mean loss of one training epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// What a training run leaves behind besides the updated weights.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub epoch_losses: Vec<EpochLoss>,
    /// PRNG state after the last shuffle, for seamless continuation.
    pub rng_state: u64,
}

/// Loss and named gradients of one example; gradient of the batch mean is
/// accumulated by the caller.
fn example_grads(model: &QAModel, ex: &QAExample) -> Result<(f64, Vec<(String, Vec<f64>)>)> {
    let mut tape = Tape::new();
    let fp = model.forward(&mut tape, ex)?;
    let loss = span_loss(&mut tape, &fp, (ex.answer_start, ex.answer_end))?;
    tape.backward(loss)?;
    let mut grads = Vec::with_capacity(fp.bindings.len());
    for (name, id) in &fp.bindings {
        let g = tape
            .grad(*id)
            .ok_or_else(|| Error::Contract(format!("no gradient recorded for {name}")))?;
        grads.push((name.clone(), g.to_vec()));
    }
    Ok((tape.value(loss), grads))
}

/// Train `model` on `corpus` in place and return the per-epoch loss curve.
pub fn train(model: &mut QAModel, corpus: &[QAExample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Contract("train needs a non-empty corpus".into()));
    }
    let mut rng = SplitMix64::new(cfg.seed);
    let mut state = AdamState::new(model, cfg);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for &ex_idx in batch {
                let ex = &corpus[ex_idx];
                let (loss, grads) = example_grads(model, ex)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss {loss} on example {} (epoch {epoch}, batch {batch_idx})",
                        ex.id
                    )));
                }
                loss_sum += loss;
                for (name, g) in grads {
                    match acc.get_mut(&name) {
                        Some(slot) => {
                            for (s, gi) in slot.iter_mut().zip(&g) {
                                *s += gi;
                            }
                        }
                        None => {
                            acc.insert(name, g);
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in acc.values_mut() {
                for gi in g.iter_mut() {
                    *gi *= scale;
                }
            }
            adam_step(model, &acc, &mut state, cfg.learning_rate)?;
        }
        epoch_losses.push(EpochLoss {
            epoch,
            mean_loss: loss_sum / corpus.len() as f64,
        });
    }
    Ok(TrainOutcome {
        epoch_losses,
        rng_state: rng.state(),
    })
}

/// Write the `epoch,mean_loss` CSV (header included, six decimals).
pub fn write_loss_csv<W: Write>(w: &mut W, losses: &[EpochLoss]) -> Result<()> {
    writeln!(w, "epoch,mean_loss")?;
    for l in losses {
        writeln!(w, "{},{:.6}", l.epoch, l.mean_loss)?;
    }
    Ok(())
}
