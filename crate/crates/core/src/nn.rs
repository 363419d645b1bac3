//! Embedding, linear and LSTM building blocks over the autodiff tape.
//!
//! Layers own their parameters as plain [`Param`] buffers. A forward pass
//! first *binds* each parameter onto a fresh [`Tape`] (recording its name so
//! the trainer can collect gradients), then applies the layer through the
//! returned `Bound*` handle.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{Tape, TensorId};

/// A named, trainable f64 buffer with a shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub data: Vec<f64>,
    pub shape: Vec<usize>,
}

impl Param {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Param { data: vec![0.0; n], shape }
    }

    /// Entries drawn uniformly from (-bound, +bound).
    pub fn uniform(shape: Vec<usize>, bound: f64, rng: &mut SplitMix64) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
        Param { data, shape }
    }

    /// Entries drawn from a normal distribution.
    pub fn normal(shape: Vec<usize>, mean: f64, std: f64, rng: &mut SplitMix64) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.normal(mean, std)).collect();
        Param { data, shape }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Place this parameter on the tape as a differentiable leaf and record
    /// its name for gradient collection.
    pub fn bind(
        &self,
        tape: &mut Tape,
        name: &str,
        bound: &mut Vec<(String, TensorId)>,
    ) -> Result<TensorId> {
        let id = tape.leaf(self.data.clone(), self.shape.clone(), true)?;
        bound.push((name.to_string(), id));
        Ok(id)
    }
}

/// Token embedding table, rows indexed by token id.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub table: Param,
}

impl EmbeddingTable {
    /// `vocab` rows of dimension `n`, entries uniform(-1/sqrt(n), 1/sqrt(n)).
    pub fn new(vocab: usize, n: usize, rng: &mut SplitMix64) -> Self {
        let bound = 1.0 / (n as f64).sqrt();
        EmbeddingTable {
            table: Param::uniform(vec![vocab, n], bound, rng),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.table.shape[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape[1]
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&format!("{prefix}.table"), &self.table);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&format!("{prefix}.table"), &mut self.table);
    }

    pub fn bind(
        &self,
        tape: &mut Tape,
        prefix: &str,
        bound: &mut Vec<(String, TensorId)>,
    ) -> Result<TensorId> {
        self.table.bind(tape, &format!("{prefix}.table"), bound)
    }
}

/// Look up `ids` in a bound table, producing one column per token ([n, l]).
pub fn embed(tape: &mut Tape, table: TensorId, ids: &[usize]) -> Result<TensorId> {
    tape.embed_cols(table, ids)
}

/// Dense affine map applied column-wise: weight (out x in) times input plus
/// bias broadcast over columns.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub weight: Param,
    pub bias: Param,
}

impl LinearLayer {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut SplitMix64) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        LinearLayer {
            weight: Param::uniform(vec![out_dim, in_dim], bound, rng),
            bias: Param::zeros(vec![out_dim]),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&format!("{prefix}.weight"), &self.weight);
        f(&format!("{prefix}.bias"), &self.bias);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }

    pub fn bind(
        &self,
        tape: &mut Tape,
        prefix: &str,
        bound: &mut Vec<(String, TensorId)>,
    ) -> Result<BoundLinear> {
        Ok(BoundLinear {
            weight: self.weight.bind(tape, &format!("{prefix}.weight"), bound)?,
            bias: self.bias.bind(tape, &format!("{prefix}.bias"), bound)?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    pub weight: TensorId,
    pub bias: TensorId,
}

impl BoundLinear {
    /// x: [in, l] -> [out, l].
    pub fn apply(&self, tape: &mut Tape, x: TensorId) -> Result<TensorId> {
        let wx = tape.matmul(self.weight, x)?;
        tape.add(wx, self.bias)
    }
}

/// Unidirectional LSTM encoder. Gate weights are stacked along the first
/// axis in the order (input, forget, candidate, output); h0 = c0 = 0.
#[derive(Debug, Clone)]
pub struct LstmEncoder {
    pub w_x: Param,
    pub w_h: Param,
    pub bias: Param,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmEncoder {
    pub fn new(input_dim: usize, hidden_dim: usize, rng: &mut SplitMix64) -> Self {
        let bx = 1.0 / (input_dim as f64).sqrt();
        let bh = 1.0 / (hidden_dim as f64).sqrt();
        LstmEncoder {
            w_x: Param::uniform(vec![4 * hidden_dim, input_dim], bx, rng),
            w_h: Param::uniform(vec![4 * hidden_dim, hidden_dim], bh, rng),
            bias: Param::zeros(vec![4 * hidden_dim]),
            input_dim,
            hidden_dim,
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&format!("{prefix}.w_x"), &self.w_x);
        f(&format!("{prefix}.w_h"), &self.w_h);
        f(&format!("{prefix}.bias"), &self.bias);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&format!("{prefix}.w_x"), &mut self.w_x);
        f(&format!("{prefix}.w_h"), &mut self.w_h);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }

    pub fn bind(
        &self,
        tape: &mut Tape,
        prefix: &str,
        bound: &mut Vec<(String, TensorId)>,
    ) -> Result<BoundLstm> {
        Ok(BoundLstm {
            w_x: self.w_x.bind(tape, &format!("{prefix}.w_x"), bound)?,
            w_h: self.w_h.bind(tape, &format!("{prefix}.w_h"), bound)?,
            bias: self.bias.bind(tape, &format!("{prefix}.bias"), bound)?,
            hidden: self.hidden_dim,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLstm {
    pub w_x: TensorId,
    pub w_h: TensorId,
    pub bias: TensorId,
    hidden: usize,
}

impl BoundLstm {
    /// Encode x: [in, l] into hidden states [n, l], one column per step.
    /// An empty sequence yields [n, 0].
    pub fn encode(&self, tape: &mut Tape, x: TensorId) -> Result<TensorId> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(Error::Contract(format!(
                "lstm encode needs rank 2 input, got {shape:?}"
            )));
        }
        let l = shape[1];
        let n = self.hidden;
        if l == 0 {
            return Ok(tape.zeros(vec![n, 0]));
        }
        let mut h = tape.zeros(vec![n, 1]);
        let mut c = tape.zeros(vec![n, 1]);
        let mut cols = Vec::with_capacity(l);
        for t in 0..l {
            let xt = tape.slice_cols(x, t, t + 1)?;
            let wx = tape.matmul(self.w_x, xt)?;
            let wh = tape.matmul(self.w_h, h)?;
            let lin = tape.add(wx, wh)?;
            let pre = tape.add(lin, self.bias)?;
            let i_pre = tape.slice_rows(pre, 0, n)?;
            let f_pre = tape.slice_rows(pre, n, 2 * n)?;
            let g_pre = tape.slice_rows(pre, 2 * n, 3 * n)?;
            let o_pre = tape.slice_rows(pre, 3 * n, 4 * n)?;
            let i = tape.sigmoid(i_pre);
            let f = tape.sigmoid(f_pre);
            let g = tape.tanh(g_pre);
            let o = tape.sigmoid(o_pre);
            let fc = tape.mul(f, c)?;
            let ig = tape.mul(i, g)?;
            c = tape.add(fc, ig)?;
            let tc = tape.tanh(c);
            h = tape.mul(o, tc)?;
            cols.push(h);
        }
        tape.concat_cols(&cols)
    }
}

/// Cross-entropy of a logit vector against a gold index (log-sum-exp based).
pub fn cross_entropy(tape: &mut Tape, logits: TensorId, gold: usize) -> Result<TensorId> {
    tape.cross_entropy(logits, gold)
}
