//! Extractive span reader.
//!
//! Pipeline: embed query and passage, run an LSTM over the query embedding,
//! optionally calibrate query (and passage) token rows against pooled
//! centers, then run a joint LSTM over [query ; separator ; passage] and
//! emit one start and one end logit per passage position. Loss is the sum
//! of start and end cross-entropies; decoding maximizes the logit sum over
//! length-capped spans.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{QAExample, SEP_ID};
use crate::error::{Error, Result};
use crate::gradcheck::{finite_diff_check, relative_error};
use crate::nn::{embed, EmbeddingTable, LinearLayer, LstmEncoder, Param};
use crate::qlsc::{qlsc_forward, BoundQlsc, QlscConfig, QlscParams};
use crate::rng::SplitMix64;
use crate::tensor::{Tape, TensorId};

/// Reader hyperparameters. `n` is both the embedding and hidden width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub n: usize,
    pub qlsc: Option<QlscConfig>,
    pub max_query_len: usize,
    pub max_passage_len: usize,
    pub max_answer_len: usize,
    /// Emit an empty prediction when the best span score falls below this.
    pub null_threshold: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 96,
            n: 64,
            qlsc: Some(QlscConfig::default()),
            max_query_len: 16,
            max_passage_len: 48,
            max_answer_len: 8,
            null_threshold: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 3 {
            return Err(Error::Config(format!(
                "vocab_size {} cannot hold the 3 reserved tokens",
                self.vocab_size
            )));
        }
        if self.n == 0 || self.max_query_len == 0 || self.max_passage_len == 0 {
            return Err(Error::Config(
                "n, max_query_len, and max_passage_len must be positive".into(),
            ));
        }
        if self.max_answer_len == 0 {
            return Err(Error::Config("max_answer_len must be at least 1".into()));
        }
        if let Some(q) = &self.qlsc {
            q.validate()?;
            if q.n != self.n {
                return Err(Error::Config(format!(
                    "qlsc width {} must equal the model width {}",
                    q.n, self.n
                )));
            }
        }
        Ok(())
    }
}

/// All learnable state of the reader.
#[derive(Debug, Clone)]
pub struct QAModel {
    pub config: ModelConfig,
    pub embedding: EmbeddingTable,
    pub query_encoder: LstmEncoder,
    pub qlsc: Option<QlscParams>,
    pub joint_encoder: LstmEncoder,
    pub start_head: LinearLayer,
    pub end_head: LinearLayer,
}

impl QAModel {
    /// Initialize all parameters from one PRNG stream in a fixed order:
    /// embedding, query encoder, calibrator, joint encoder, start head,
    /// end head.
    pub fn new(config: ModelConfig, rng: &mut SplitMix64) -> Result<Self> {
        config.validate()?;
        let n = config.n;
        let embedding = EmbeddingTable::new(config.vocab_size, n, rng);
        let query_encoder = LstmEncoder::new(n, n, rng);
        let qlsc = match &config.qlsc {
            Some(cfg) => Some(QlscParams::new(cfg, rng)?),
            None => None,
        };
        let joint_encoder = LstmEncoder::new(n, n, rng);
        let start_head = LinearLayer::new(n, 1, rng);
        let end_head = LinearLayer::new(n, 1, rng);
        Ok(QAModel {
            config,
            embedding,
            query_encoder,
            qlsc,
            joint_encoder,
            start_head,
            end_head,
        })
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        self.embedding.visit("embedding", f);
        self.query_encoder.visit("query_encoder", f);
        if let Some(q) = &self.qlsc {
            q.visit("qlsc", f);
        }
        self.joint_encoder.visit("joint_encoder", f);
        self.start_head.visit("start_head", f);
        self.end_head.visit("end_head", f);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.embedding.visit_mut("embedding", f);
        self.query_encoder.visit_mut("query_encoder", f);
        if let Some(q) = &mut self.qlsc {
            q.visit_mut("qlsc", f);
        }
        self.joint_encoder.visit_mut("joint_encoder", f);
        self.start_head.visit_mut("start_head", f);
        self.end_head.visit_mut("end_head", f);
    }

    /// Total number of learnable scalars.
    pub fn num_params(&self) -> usize {
        let mut total = 0;
        self.visit_params(&mut |_, p| total += p.numel());
        total
    }

    /// Copy parameters onto `tape` as gradient-tracked leaves and record
    /// (name, tensor) pairs in binding order.
    pub fn bind(&self, tape: &mut Tape) -> Result<(BoundModel, Vec<(String, TensorId)>)> {
        let mut bound = Vec::new();
        let embedding = self.embedding.bind(tape, "embedding", &mut bound)?;
        let query_encoder = self.query_encoder.bind(tape, "query_encoder", &mut bound)?;
        let qlsc = match &self.qlsc {
            Some(q) => Some(q.bind(tape, "qlsc", &mut bound)?),
            None => None,
        };
        let joint_encoder = self.joint_encoder.bind(tape, "joint_encoder", &mut bound)?;
        let start_head = self.start_head.bind(tape, "start_head", &mut bound)?;
        let end_head = self.end_head.bind(tape, "end_head", &mut bound)?;
        Ok((
            BoundModel {
                embedding,
                query_encoder,
                qlsc,
                joint_encoder,
                start_head,
                end_head,
            },
            bound,
        ))
    }

    /// Bind onto `tape` and run the full pipeline on one example.
    pub fn forward(&self, tape: &mut Tape, ex: &QAExample) -> Result<ForwardPass> {
        let (bound, bindings) = self.bind(tape)?;
        let mut fp = forward_logits(tape, &self.config, &bound, ex)?;
        fp.bindings = bindings;
        Ok(fp)
    }
}

/// Tape handles of all model parameters for one forward pass.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub embedding: TensorId,
    pub query_encoder: crate::nn::BoundLstm,
    pub qlsc: Option<BoundQlsc>,
    pub joint_encoder: crate::nn::BoundLstm,
    pub start_head: crate::nn::BoundLinear,
    pub end_head: crate::nn::BoundLinear,
}

/// Handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// One logit per passage position.
    pub start_logits: TensorId,
    pub end_logits: TensorId,
    /// Raw query token rows [l_q, n].
    pub q_tokens: TensorId,
    /// Calibrated query token rows [l_q, n]; equals `q_tokens` without a
    /// calibrator.
    pub q_calibrated: TensorId,
    /// (name, tensor) pairs when the pass was built via `QAModel::forward`.
    pub bindings: Vec<(String, TensorId)>,
}

/// Run the pipeline against an already-bound parameter set.
pub fn forward_logits(
    tape: &mut Tape,
    config: &ModelConfig,
    bound: &BoundModel,
    ex: &QAExample,
) -> Result<ForwardPass> {
    if ex.question.len() > config.max_query_len {
        return Err(Error::Contract(format!(
            "query length {} exceeds the maximum {}",
            ex.question.len(),
            config.max_query_len
        )));
    }
    if ex.passage.len() > config.max_passage_len {
        return Err(Error::Contract(format!(
            "passage length {} exceeds the maximum {}",
            ex.passage.len(),
            config.max_passage_len
        )));
    }
    let l_q = ex.question.len();
    let l_p = ex.passage.len();

    let e_q = embed(tape, bound.embedding, &ex.question)?; // [n, l_q]
    let e_p = embed(tape, bound.embedding, &ex.passage)?; // [n, l_p]
    let q_tokens = tape.transpose(e_q)?; // [l_q, n]
    let p_tokens = tape.transpose(e_p)?; // [l_p, n]

    let (q_calibrated, p_out) = match (&config.qlsc, &bound.qlsc) {
        (Some(cfg), Some(b)) => {
            let h = bound.query_encoder.encode(tape, e_q)?; // [n, l_q]
            let out = qlsc_forward(tape, cfg, b, h, q_tokens, p_tokens)?;
            (out.q_calibrated, out.p_out)
        }
        (None, None) => (q_tokens, p_tokens),
        _ => {
            return Err(Error::Contract(
                "calibrator config and parameters must be present together".into(),
            ))
        }
    };

    let sep = embed(tape, bound.embedding, &[SEP_ID])?; // [n, 1]
    let q_cols = tape.transpose(q_calibrated)?; // [n, l_q]
    let p_cols = tape.transpose(p_out)?; // [n, l_p]
    let joint_in = tape.concat_cols(&[q_cols, sep, p_cols])?; // [n, l_q+1+l_p]
    let joint = bound.joint_encoder.encode(tape, joint_in)?;
    let passage_states = tape.slice_cols(joint, l_q + 1, l_q + 1 + l_p)?; // [n, l_p]
    let start_row = bound.start_head.apply(tape, passage_states)?; // [1, l_p]
    let end_row = bound.end_head.apply(tape, passage_states)?;
    let start_logits = tape.reshape(start_row, vec![l_p])?;
    let end_logits = tape.reshape(end_row, vec![l_p])?;
    Ok(ForwardPass {
        start_logits,
        end_logits,
        q_tokens,
        q_calibrated,
        bindings: Vec::new(),
    })
}

/// cross_entropy(start, gold.0) + cross_entropy(end, gold.1), a scalar.
pub fn span_loss(
    tape: &mut Tape,
    fp: &ForwardPass,
    gold: (usize, usize),
) -> Result<TensorId> {
    let start = tape.cross_entropy(fp.start_logits, gold.0)?;
    let end = tape.cross_entropy(fp.end_logits, gold.1)?;
    tape.add(start, end)
}

/// A decoded answer span over passage token indices; `end` is inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanPrediction {
    pub start: usize,
    pub end: usize,
    /// Sum of the chosen start and end logits.
    pub score: f64,
    pub is_empty: bool,
}

impl SpanPrediction {
    fn empty(score: f64) -> Self {
        SpanPrediction {
            start: 0,
            end: 0,
            score,
            is_empty: true,
        }
    }
}

/// Maximize start[s] + end[e] over spans with s <= e < s + max_answer_len.
/// Ties break toward the smallest s, then the smallest e. A zero-length
/// input yields an empty prediction.
pub fn decode_span(
    start_logits: &[f64],
    end_logits: &[f64],
    max_answer_len: usize,
) -> SpanPrediction {
    debug_assert_eq!(start_logits.len(), end_logits.len());
    let len = start_logits.len().min(end_logits.len());
    if len == 0 || max_answer_len == 0 {
        return SpanPrediction::empty(f64::NEG_INFINITY);
    }
    let mut best = SpanPrediction {
        start: 0,
        end: 0,
        score: f64::NEG_INFINITY,
        is_empty: false,
    };
    for s in 0..len {
        let e_hi = (s + max_answer_len).min(len);
        for e in s..e_hi {
            let score = start_logits[s] + end_logits[e];
            if score > best.score {
                best = SpanPrediction {
                    start: s,
                    end: e,
                    score,
                    is_empty: false,
                };
            }
        }
    }
    best
}

/// Empty out a decoded span whose score falls below the threshold.
pub fn apply_null_threshold(pred: SpanPrediction, threshold: Option<f64>) -> SpanPrediction {
    match threshold {
        Some(tau) if !pred.is_empty && pred.score < tau => SpanPrediction::empty(pred.score),
        _ => pred,
    }
}

/// Which query representation to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Raw,
    Calibrated,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Raw => "raw",
            Stage::Calibrated => "calibrated",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Stage::Raw),
            "calibrated" => Ok(Stage::Calibrated),
            other => Err(Error::Config(format!(
                "unknown stage '{other}' (expected raw or calibrated)"
            ))),
        }
    }
}

/// Everything evaluation needs from one example in a single forward pass.
#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub prediction: SpanPrediction,
    /// Predicted passage tokens; empty when the prediction is empty.
    pub predicted_tokens: Vec<usize>,
    /// Token-mean of the raw query embedding rows.
    pub raw_query_mean: Vec<f64>,
    /// Token-mean of the calibrated query rows.
    pub calibrated_query_mean: Vec<f64>,
}

fn row_mean(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut mean = vec![0.0; cols];
    if rows == 0 {
        return mean;
    }
    for r in 0..rows {
        for c in 0..cols {
            mean[c] += data[r * cols + c];
        }
    }
    for v in &mut mean {
        *v /= rows as f64;
    }
    mean
}

/// Forward one example and decode, honoring the null threshold.
pub fn evaluate_example(model: &QAModel, ex: &QAExample) -> Result<EvalOutput> {
    let mut tape = Tape::new();
    let fp = model.forward(&mut tape, ex)?;
    let decoded = decode_span(
        tape.data(fp.start_logits),
        tape.data(fp.end_logits),
        model.config.max_answer_len,
    );
    let prediction = apply_null_threshold(decoded, model.config.null_threshold);
    let predicted_tokens = if prediction.is_empty {
        Vec::new()
    } else {
        ex.passage[prediction.start..=prediction.end].to_vec()
    };
    let n = model.config.n;
    let l_q = ex.question.len();
    Ok(EvalOutput {
        prediction,
        predicted_tokens,
        raw_query_mean: row_mean(tape.data(fp.q_tokens), l_q, n),
        calibrated_query_mean: row_mean(tape.data(fp.q_calibrated), l_q, n),
    })
}

/// Decoded span and its passage tokens for one example.
pub fn predict_answer(model: &QAModel, ex: &QAExample) -> Result<(SpanPrediction, Vec<usize>)> {
    let out = evaluate_example(model, ex)?;
    Ok((out.prediction, out.predicted_tokens))
}

/// Token-mean query vector at the requested stage.
pub fn query_representation(model: &QAModel, ex: &QAExample, stage: Stage) -> Result<Vec<f64>> {
    let out = evaluate_example(model, ex)?;
    Ok(match stage {
        Stage::Raw => out.raw_query_mean,
        Stage::Calibrated => out.calibrated_query_mean,
    })
}

/// Finite-difference result for one named parameter.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub n_entries: usize,
}

/// Full-model gradient check summary.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub per_param: Vec<ParamCheck>,
    pub n_entries: usize,
}

fn example_loss(model: &QAModel, ex: &QAExample) -> Result<f64> {
    let mut tape = Tape::new();
    let fp = model.forward(&mut tape, ex)?;
    let loss = span_loss(&mut tape, &fp, (ex.answer_start, ex.answer_end))?;
    Ok(tape.value(loss))
}

/// Compare backward-pass gradients of the span loss against central finite
/// differences, parameter by parameter.
pub fn model_grad_check(model: &QAModel, ex: &QAExample, h: f64) -> Result<GradCheckReport> {
    // Analytic gradients from a single backward pass.
    let mut tape = Tape::new();
    let fp = model.forward(&mut tape, ex)?;
    let loss = span_loss(&mut tape, &fp, (ex.answer_start, ex.answer_end))?;
    tape.backward(loss)?;
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    for (name, id) in &fp.bindings {
        let grad = tape
            .grad(*id)
            .ok_or_else(|| Error::Contract(format!("no gradient recorded for {name}")))?;
        analytic.push((name.clone(), grad.to_vec()));
    }

    let mut per_param = Vec::new();
    let mut max_rel_err: f64 = 0.0;
    let mut n_entries = 0;
    for (name, grad) in &analytic {
        let mut theta = Vec::new();
        model.visit_params(&mut |pn, p| {
            if pn == name {
                theta = p.data.clone();
            }
        });
        let f = |th: &[f64]| -> Result<f64> {
            let mut probe = model.clone();
            probe.visit_params_mut(&mut |pn, p| {
                if pn == name {
                    p.data.copy_from_slice(th);
                }
            });
            example_loss(&probe, ex)
        };
        let err = finite_diff_check(f, &theta, grad, h)?;
        max_rel_err = max_rel_err.max(err);
        n_entries += theta.len();
        per_param.push(ParamCheck {
            name: name.clone(),
            max_rel_err: err,
            n_entries: theta.len(),
        });
    }
    Ok(GradCheckReport {
        max_rel_err,
        per_param,
        n_entries,
    })
}

/// Like [`model_grad_check`], but the numeric side of every comparison is
/// the central difference computed by difference propagation on the recorded
/// graph ([`Tape::central_difference`]).
///
/// Evaluating the loss twice and subtracting leaves roundoff of the
/// intermediate values in the difference, which puts a noise floor of about
/// 1e-10 on each numeric gradient at h = 1e-5. Parameters whose true
/// gradient sits near that floor (and shift-invariance directions such as
/// the span head biases, whose true gradient is exactly zero) then show
/// relative errors up to 1e-3 that say nothing about the backward pass.
/// Difference propagation removes that floor, so disagreement above roundoff
/// level is evidence of a real gradient bug at any operating point.
pub fn model_grad_check_accurate(model: &QAModel, ex: &QAExample, h: f64) -> Result<GradCheckReport> {
    let mut tape = Tape::new();
    let fp = model.forward(&mut tape, ex)?;
    let loss = span_loss(&mut tape, &fp, (ex.answer_start, ex.answer_end))?;
    tape.backward(loss)?;

    let mut per_param = Vec::new();
    let mut max_rel_err: f64 = 0.0;
    let mut n_entries = 0;
    for (name, id) in &fp.bindings {
        let grad = tape
            .grad(*id)
            .ok_or_else(|| Error::Contract(format!("no gradient recorded for {name}")))?;
        let mut param_err: f64 = 0.0;
        for (entry, &a) in grad.iter().enumerate() {
            let numeric = tape.central_difference(loss, *id, entry, h)?;
            param_err = param_err.max(relative_error(a, numeric));
        }
        max_rel_err = max_rel_err.max(param_err);
        n_entries += grad.len();
        per_param.push(ParamCheck {
            name: name.clone(),
            max_rel_err: param_err,
            n_entries: grad.len(),
        });
    }
    Ok(GradCheckReport {
        max_rel_err,
        per_param,
        n_entries,
    })
}


#[cfg(test)]
impl QAModel {
    /// Number of named parameters (test helper).
    fn num_params_named(&self) -> usize {
        let mut count = 0;
        self.visit_params(&mut |_, _| count += 1);
        count
    }
}
