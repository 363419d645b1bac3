//! Query semantic calibration.
//!
//! Pipeline: a learned subspace map splits encoded query features into m
//! groups and projects a bank of K learnable centers into the same groups;
//! per-group softmax assignments and sigmoid gates weight feature-minus-
//! center residuals, which are summed over tokens and groups into K pooled
//! vectors T; finally each query token row (and optionally each passage
//! token row) is shifted by an attention-weighted combination of the T rows.
//! T itself can first be enhanced by the same attention read over passage
//! rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BoundLinear, Param};
use crate::rng::SplitMix64;
use crate::tensor::{Tape, TensorId};

/// Hyperparameters of the calibration module. `n` must equal the encoder
/// hidden width; `m` is the number of subspace groups; `k` the number of
/// pooled center vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QlscConfig {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    /// Also shift passage token rows by the attention read over T.
    #[serde(default = "default_true")]
    pub calibrate_passage: bool,
    /// Refresh T from passage rows before calibrating.
    #[serde(default = "default_true")]
    pub enhance_centers_from_passage: bool,
}

fn default_true() -> bool {
    true
}

impl Default for QlscConfig {
    fn default() -> Self {
        QlscConfig {
            n: 64,
            m: 2,
            k: 8,
            calibrate_passage: true,
            enhance_centers_from_passage: true,
        }
    }
}

impl QlscConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.k == 0 {
            return Err(Error::Config(format!(
                "qlsc dimensions must be positive: n={}, m={}, k={}",
                self.n, self.m, self.k
            )));
        }
        Ok(())
    }
}

/// Per-group affine map (used for both assignments and gates).
#[derive(Debug, Clone)]
pub struct AffinePerGroup {
    pub weight: Param,
    pub bias: Param,
}

impl AffinePerGroup {
    fn new(in_dim: usize, out_dim: usize, rng: &mut SplitMix64) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        AffinePerGroup {
            weight: Param::uniform(vec![out_dim, in_dim], bound, rng),
            bias: Param::zeros(vec![out_dim]),
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&format!("{prefix}.weight"), &self.weight);
        f(&format!("{prefix}.bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }

    fn bind(
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

/// Learnable state of the calibrator.
#[derive(Debug, Clone)]
pub struct QlscParams {
    /// Center bank C, one column per center: [n, K].
    pub centers: Param,
    /// Subspace map W applied to both features and centers: [m*n, n].
    pub subspace: Param,
    /// Per-group assignment maps R^n -> R^K.
    pub assign: Vec<AffinePerGroup>,
    /// Per-group scalar gate maps R^n -> R.
    pub gate: Vec<AffinePerGroup>,
}

impl QlscParams {
    /// Centers ~ normal(0, 1/sqrt(n)); all weights uniform(+-1/sqrt(n));
    /// biases zero. Draw order: centers, subspace, assignment maps by group,
    /// gate maps by group.
    pub fn new(cfg: &QlscConfig, rng: &mut SplitMix64) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n;
        let std = 1.0 / (n as f64).sqrt();
        let bound = 1.0 / (n as f64).sqrt();
        let centers = Param::normal(vec![n, cfg.k], 0.0, std, rng);
        let subspace = Param::uniform(vec![cfg.m * n, n], bound, rng);
        let assign = (0..cfg.m).map(|_| AffinePerGroup::new(n, cfg.k, rng)).collect();
        let gate = (0..cfg.m).map(|_| AffinePerGroup::new(n, 1, rng)).collect();
        Ok(QlscParams {
            centers,
            subspace,
            assign,
            gate,
        })
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&format!("{prefix}.centers"), &self.centers);
        f(&format!("{prefix}.subspace"), &self.subspace);
        for (g, a) in self.assign.iter().enumerate() {
            a.visit(&format!("{prefix}.assign.{g}"), f);
        }
        for (g, a) in self.gate.iter().enumerate() {
            a.visit(&format!("{prefix}.gate.{g}"), f);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&format!("{prefix}.centers"), &mut self.centers);
        f(&format!("{prefix}.subspace"), &mut self.subspace);
        for (g, a) in self.assign.iter_mut().enumerate() {
            a.visit_mut(&format!("{prefix}.assign.{g}"), f);
        }
        for (g, a) in self.gate.iter_mut().enumerate() {
            a.visit_mut(&format!("{prefix}.gate.{g}"), f);
        }
    }

    pub fn bind(
        &self,
        tape: &mut Tape,
        prefix: &str,
        bound: &mut Vec<(String, TensorId)>,
    ) -> Result<BoundQlsc> {
        let centers = self.centers.bind(tape, &format!("{prefix}.centers"), bound)?;
        let subspace = self.subspace.bind(tape, &format!("{prefix}.subspace"), bound)?;
        let assign = self
            .assign
            .iter()
            .enumerate()
            .map(|(g, a)| a.bind(tape, &format!("{prefix}.assign.{g}"), bound))
            .collect::<Result<Vec<_>>>()?;
        let gate = self
            .gate
            .iter()
            .enumerate()
            .map(|(g, a)| a.bind(tape, &format!("{prefix}.gate.{g}"), bound))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundQlsc {
            centers,
            subspace,
            assign,
            gate,
        })
    }
}

/// Tape handles of the calibrator parameters for one forward pass.
#[derive(Debug, Clone)]
pub struct BoundQlsc {
    pub centers: TensorId,
    pub subspace: TensorId,
    pub assign: Vec<BoundLinear>,
    pub gate: Vec<BoundLinear>,
}

/// Subspace-mapped features [m, n, l] and centers [m, n, K].
#[derive(Debug, Clone, Copy)]
pub struct GroupedFeatures {
    pub features: TensorId,
    pub centers: TensorId,
    pub m: usize,
    pub n: usize,
    pub l: usize,
    pub k: usize,
}

impl GroupedFeatures {
    /// Rows of group `g` as [n, l].
    pub fn feature_group(&self, tape: &mut Tape, g: usize) -> Result<TensorId> {
        let flat = tape.reshape(self.features, vec![self.m * self.n, self.l])?;
        tape.slice_rows(flat, g * self.n, (g + 1) * self.n)
    }

    /// Center columns of group `g` as [n, K].
    pub fn center_group(&self, tape: &mut Tape, g: usize) -> Result<TensorId> {
        let flat = tape.reshape(self.centers, vec![self.m * self.n, self.k])?;
        tape.slice_rows(flat, g * self.n, (g + 1) * self.n)
    }
}

/// Softmax assignments [l, m, K] and sigmoid gates [l, m].
#[derive(Debug, Clone)]
pub struct AssignmentAndGates {
    pub assignments: TensorId,
    pub gates: TensorId,
    per_group: Vec<GroupAg>,
}

#[derive(Debug, Clone, Copy)]
struct GroupAg {
    /// [l, K] softmax rows for one group.
    a: TensorId,
    /// [l] gate values for one group.
    alpha: TensorId,
}

/// The K pooled center vectors, one per row: [K, n].
#[derive(Debug, Clone, Copy)]
pub struct CenterSet {
    pub t: TensorId,
}

/// Map features H [n, l] and the center bank C [n, K] through the subspace
/// map W [m*n, n]: group g of the output holds rows [g*n, (g+1)*n) of W*H
/// and W*C.
pub fn scale_and_split(
    tape: &mut Tape,
    cfg: &QlscConfig,
    subspace: TensorId,
    centers: TensorId,
    h: TensorId,
) -> Result<GroupedFeatures> {
    let (n, m) = (cfg.n, cfg.m);
    let ws = tape.shape(subspace).to_vec();
    if ws != [m * n, n] {
        return Err(Error::dim("scale_and_split subspace", &ws, &[m * n, n]));
    }
    let cs = tape.shape(centers).to_vec();
    if cs.len() != 2 || cs[0] != n || cs[1] != cfg.k {
        return Err(Error::dim("scale_and_split centers", &cs, &[n, cfg.k]));
    }
    let hs = tape.shape(h).to_vec();
    if hs.len() != 2 || hs[0] != n {
        return Err(Error::dim("scale_and_split features", &hs, &[n, 0]));
    }
    let l = hs[1];
    let hp = tape.matmul(subspace, h)?;
    let features = tape.reshape(hp, vec![m, n, l])?;
    let cp = tape.matmul(subspace, centers)?;
    let grouped_centers = tape.reshape(cp, vec![m, n, cfg.k])?;
    Ok(GroupedFeatures {
        features,
        centers: grouped_centers,
        m,
        n,
        l,
        k: cfg.k,
    })
}

/// Per token and group: softmax over K of an affine map of the group's
/// feature column, and a sigmoid gate of the same column.
pub fn assignment_and_gates(
    tape: &mut Tape,
    cfg: &QlscConfig,
    assign: &[BoundLinear],
    gate: &[BoundLinear],
    grouped: &GroupedFeatures,
) -> Result<AssignmentAndGates> {
    if assign.len() != cfg.m || gate.len() != cfg.m {
        return Err(Error::Contract(format!(
            "expected {} assignment and gate maps, got {} and {}",
            cfg.m,
            assign.len(),
            gate.len()
        )));
    }
    let l = grouped.l;
    let mut per_group = Vec::with_capacity(cfg.m);
    let mut a_blocks = Vec::with_capacity(cfg.m);
    let mut alpha_blocks = Vec::with_capacity(cfg.m);
    for g in 0..cfg.m {
        let hg = grouped.feature_group(tape, g)?;
        let logits = assign[g].apply(tape, hg)?; // [K, l]
        let logits_t = tape.transpose(logits)?; // [l, K]
        let a = tape.softmax_last_axis(logits_t)?;
        let gate_pre = gate[g].apply(tape, hg)?; // [1, l]
        let gate_sig = tape.sigmoid(gate_pre);
        let alpha = tape.reshape(gate_sig, vec![l])?;
        let alpha_col = tape.reshape(alpha, vec![l, 1])?;
        per_group.push(GroupAg { a, alpha });
        a_blocks.push(a);
        alpha_blocks.push(alpha_col);
    }
    let a_cat = tape.concat_cols(&a_blocks)?; // [l, m*K]
    let assignments = tape.reshape(a_cat, vec![l, cfg.m, cfg.k])?;
    let gates = tape.concat_cols(&alpha_blocks)?; // [l, m]
    Ok(AssignmentAndGates {
        assignments,
        gates,
        per_group,
    })
}

/// Pool gated, assignment-weighted residuals over tokens and groups:
/// T[k, :] = sum_t sum_g gates[t, g] * a[t, g, k] * (features[g, :, t] -
/// centers[g, :, k]).
pub fn aggregate_centers(
    tape: &mut Tape,
    cfg: &QlscConfig,
    grouped: &GroupedFeatures,
    ag: &AssignmentAndGates,
) -> Result<CenterSet> {
    if ag.per_group.len() != cfg.m {
        return Err(Error::Contract(format!(
            "assignment groups {} do not match m={}",
            ag.per_group.len(),
            cfg.m
        )));
    }
    let mut acc = tape.zeros(vec![grouped.n, cfg.k]);
    for g in 0..cfg.m {
        let hg = grouped.feature_group(tape, g)?; // [n, l]
        let cg = grouped.center_group(tape, g)?; // [n, K]
        let GroupAg { a, alpha } = ag.per_group[g];
        let w = tape.mul(a, alpha)?; // [l, K]: a[t, k] * alpha[t]
        let pooled = tape.matmul(hg, w)?; // [n, K]
        let col_sums = tape.sum_axis(w, 0)?; // [K]
        let cg_t = tape.transpose(cg)?; // [K, n]
        let scaled_t = tape.mul(cg_t, col_sums)?; // row k scaled by col_sums[k]
        let scaled = tape.transpose(scaled_t)?; // [n, K]
        let contrib = tape.sub(pooled, scaled)?;
        acc = tape.add(acc, contrib)?;
    }
    let t = tape.transpose(acc)?; // [K, n]
    Ok(CenterSet { t })
}

/// rows + softmax(rows . centers^T) . centers, the shared residual
/// attention update. `rows`: [r, n], `centers`: [c, n].
fn attention_update(tape: &mut Tape, rows: TensorId, centers: TensorId) -> Result<TensorId> {
    let ct = tape.transpose(centers)?;
    let scores = tape.matmul(rows, ct)?;
    let attn = tape.softmax_last_axis(scores)?;
    let delta = tape.matmul(attn, centers)?;
    tape.add(rows, delta)
}

/// Shift each feature row by its attention-weighted combination of T rows.
pub fn calibrate(tape: &mut Tape, features: TensorId, centers: &CenterSet) -> Result<TensorId> {
    let fs = tape.shape(features).to_vec();
    let ts = tape.shape(centers.t).to_vec();
    if fs.len() != 2 || ts.len() != 2 || fs[1] != ts[1] {
        return Err(Error::dim("calibrate", &fs, &ts));
    }
    attention_update(tape, features, centers.t)
}

/// Shift each T row by its attention-weighted combination of passage rows.
/// A zero-length passage leaves T unchanged.
pub fn enhance_centers_with_passage(
    tape: &mut Tape,
    centers: &CenterSet,
    passage: TensorId,
) -> Result<CenterSet> {
    let ts = tape.shape(centers.t).to_vec();
    let ps = tape.shape(passage).to_vec();
    if ps.len() != 2 || ts.len() != 2 || ps[1] != ts[1] {
        return Err(Error::dim("enhance_centers_with_passage", &ts, &ps));
    }
    if ps[0] == 0 {
        return Ok(*centers);
    }
    Ok(CenterSet {
        t: attention_update(tape, centers.t, passage)?,
    })
}

/// Calibrated query rows, passage rows (calibrated or passed through), and
/// the final center set.
#[derive(Debug, Clone, Copy)]
pub struct QlscOutput {
    pub q_calibrated: TensorId,
    pub p_out: TensorId,
    pub centers: CenterSet,
}

/// Full calibration pass. `h`: encoded query features [n, l_q]; `q_tokens`:
/// raw query rows [l_q, n]; `p_tokens`: raw passage rows [l_p, n].
pub fn qlsc_forward(
    tape: &mut Tape,
    cfg: &QlscConfig,
    bound: &BoundQlsc,
    h: TensorId,
    q_tokens: TensorId,
    p_tokens: TensorId,
) -> Result<QlscOutput> {
    cfg.validate()?;
    let hs = tape.shape(h).to_vec();
    let qs = tape.shape(q_tokens).to_vec();
    let ps = tape.shape(p_tokens).to_vec();
    if qs.len() != 2 || qs[1] != cfg.n || qs[0] != hs.get(1).copied().unwrap_or(usize::MAX) {
        return Err(Error::dim("qlsc_forward query rows", &qs, &hs));
    }
    if ps.len() != 2 || ps[1] != cfg.n {
        return Err(Error::dim("qlsc_forward passage rows", &ps, &[0, cfg.n]));
    }
    let grouped = scale_and_split(tape, cfg, bound.subspace, bound.centers, h)?;
    let ag = assignment_and_gates(tape, cfg, &bound.assign, &bound.gate, &grouped)?;
    let mut centers = aggregate_centers(tape, cfg, &grouped, &ag)?;
    if cfg.enhance_centers_from_passage {
        centers = enhance_centers_with_passage(tape, &centers, p_tokens)?;
    }
    let q_calibrated = calibrate(tape, q_tokens, &centers)?;
    let p_out = if cfg.calibrate_passage {
        calibrate(tape, p_tokens, &centers)?
    } else {
        p_tokens
    };
    Ok(QlscOutput {
        q_calibrated,
        p_out,
        centers,
    })
}
