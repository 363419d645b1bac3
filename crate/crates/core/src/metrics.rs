//! Answer-quality metrics and paraphrase-geometry distances.
//!
//! EM and F1 compare predicted and gold answer token sequences. TCR scores
//! whether paraphrase groups receive identical answers; TIR counts empty
//! predictions. The L1/L2 distances measure how far apart the pooled query
//! vectors of paraphrases sit, before or after calibration.

use std::collections::BTreeMap;
use std::io::Write;

use crate::data::QAExample;
use crate::error::{Error, Result};
use crate::model::{evaluate_example, QAModel, Stage};

/// Aggregate evaluation over one example set.
///
/// Percentages are in [0, 100]; distances are means over unordered
/// paraphrase pairs. `n_groups` counts distinct group ids in the input.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub em: f64,
    pub f1: f64,
    pub tcr: f64,
    pub tir: f64,
    pub mean_l1: f64,
    pub mean_l2: f64,
    pub n_examples: usize,
    pub n_groups: usize,
}

impl MetricsReport {
    /// Write the `metric,value` CSV rows (header included).
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "metric,value")?;
        writeln!(w, "em,{:.6}", self.em)?;
        writeln!(w, "f1,{:.6}", self.f1)?;
        writeln!(w, "tcr,{:.6}", self.tcr)?;
        writeln!(w, "tir,{:.6}", self.tir)?;
        writeln!(w, "mean_l1,{:.6}", self.mean_l1)?;
        writeln!(w, "mean_l2,{:.6}", self.mean_l2)?;
        writeln!(w, "n_examples,{}", self.n_examples)?;
        writeln!(w, "n_groups,{}", self.n_groups)?;
        Ok(())
    }
}

/// Token-multiset F1 between a predicted and a gold answer, in [0, 1].
/// Both empty counts as a perfect match; exactly one empty scores zero.
pub fn token_f1(pred: &[usize], gold: &[usize]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut remaining: BTreeMap<usize, usize> = BTreeMap::new();
    for &t in gold {
        *remaining.entry(t).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for &t in pred {
        if let Some(c) = remaining.get_mut(&t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Mean exact-match and token F1 of predictions against gold answers, both
/// scaled to percent.
pub fn evaluate_em_f1(model: &QAModel, examples: &[QAExample]) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Err(Error::Contract("evaluate_em_f1 needs at least one example".into()));
    }
    let mut em_sum = 0.0;
    let mut f1_sum = 0.0;
    for ex in examples {
        let out = evaluate_example(model, ex)?;
        let gold = ex.answer_tokens();
        em_sum += if out.predicted_tokens == gold { 1.0 } else { 0.0 };
        f1_sum += token_f1(&out.predicted_tokens, gold);
    }
    let n = examples.len() as f64;
    Ok((100.0 * em_sum / n, 100.0 * f1_sum / n))
}

/// Answer-consistency rate and empty-answer rate over grouped predictions,
/// both in percent.
///
/// TCR counts only groups with at least two predictions; a group is
/// consistent when every predicted token sequence in it is identical. When
/// no group has two members the rate is vacuously 100. TIR is the fraction
/// of all predictions that are empty.
pub fn compute_tcr_tir(groups: &BTreeMap<String, Vec<Vec<usize>>>) -> Result<(f64, f64)> {
    let total: usize = groups.values().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::Contract("compute_tcr_tir needs at least one prediction".into()));
    }
    let mut scored_groups = 0usize;
    let mut consistent = 0usize;
    let mut empty = 0usize;
    for preds in groups.values() {
        for p in preds {
            if p.is_empty() {
                empty += 1;
            }
        }
        if preds.len() >= 2 {
            scored_groups += 1;
            if preds.iter().all(|p| p == &preds[0]) {
                consistent += 1;
            }
        }
    }
    let tcr = if scored_groups == 0 {
        100.0
    } else {
        100.0 * consistent as f64 / scored_groups as f64
    };
    let tir = 100.0 * empty as f64 / total as f64;
    Ok((tcr, tir))
}

/// L1 and L2 distance between two equal-length vectors.
pub fn pair_distances(a: &[f64], b: &[f64]) -> (f64, f64) {
    debug_assert_eq!(a.len(), b.len());
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        l1 += d.abs();
        l2 += d * d;
    }
    (l1, l2.sqrt())
}

/// Mean L1/L2 distance between pooled query vectors of paraphrases.
///
/// Examples are grouped by `group_id`; every unordered pair inside a group
/// of two or more contributes one L1 and one L2 distance, and each sum is
/// divided by the total pair count. Without any such pair both means are
/// zero.
pub fn paraphrase_distances(
    model: &QAModel,
    examples: &[QAExample],
    stage: Stage,
) -> Result<(f64, f64)> {
    let mut groups: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
    for ex in examples {
        let rep = crate::model::query_representation(model, ex, stage)?;
        groups.entry(&ex.group_id).or_default().push(rep);
    }
    Ok(mean_pairwise_distances(groups.values()))
}

fn mean_pairwise_distances<'a, I>(groups: I) -> (f64, f64)
where
    I: IntoIterator<Item = &'a Vec<Vec<f64>>>,
{
    let mut l1_sum = 0.0;
    let mut l2_sum = 0.0;
    let mut pairs = 0usize;
    for members in groups {
        for i in 0..members.len() {
            for j in i + 1..members.len() {
                let (l1, l2) = pair_distances(&members[i], &members[j]);
                l1_sum += l1;
                l2_sum += l2;
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        (0.0, 0.0)
    } else {
        (l1_sum / pairs as f64, l2_sum / pairs as f64)
    }
}

/// Full evaluation of `model` on `examples` with one forward per example:
/// EM/F1, grouped TCR/TIR, and paraphrase distances at `stage`.
pub fn evaluate_model(model: &QAModel, examples: &[QAExample], stage: Stage) -> Result<MetricsReport> {
    if examples.is_empty() {
        return Err(Error::Contract("evaluate_model needs at least one example".into()));
    }
    let mut em_sum = 0.0;
    let mut f1_sum = 0.0;
    let mut grouped_preds: BTreeMap<String, Vec<Vec<usize>>> = BTreeMap::new();
    let mut grouped_reps: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for ex in examples {
        let out = evaluate_example(model, ex)?;
        let gold = ex.answer_tokens();
        em_sum += if out.predicted_tokens == gold { 1.0 } else { 0.0 };
        f1_sum += token_f1(&out.predicted_tokens, gold);
        grouped_preds.entry(ex.group_id.clone()).or_default().push(out.predicted_tokens);
        let rep = match stage {
            Stage::Raw => out.raw_query_mean,
            Stage::Calibrated => out.calibrated_query_mean,
        };
        grouped_reps.entry(ex.group_id.clone()).or_default().push(rep);
    }
    let (tcr, tir) = compute_tcr_tir(&grouped_preds)?;
    let (mean_l1, mean_l2) = mean_pairwise_distances(grouped_reps.values());
    let n = examples.len() as f64;
    Ok(MetricsReport {
        em: 100.0 * em_sum / n,
        f1: 100.0 * f1_sum / n,
        tcr,
        tir,
        mean_l1,
        mean_l2,
        n_examples: examples.len(),
        n_groups: grouped_preds.len(),
    })
}
