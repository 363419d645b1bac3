//! Ablation drivers: subspace-count sweep and seed stability.
//!
//! Both drivers train a fresh model per configuration on the corpus's train
//! split and evaluate calibrated metrics on its test split (falling back to
//! the whole corpus when a split is absent), so rows are comparable across
//! sweep points.

use std::io::Write;

use crate::data::{QAExample, Split};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_model, MetricsReport};
use crate::model::{ModelConfig, QAModel, Stage};
use crate::rng::{SplitMix64, GOLDEN_GAMMA};
use crate::train::{train, TrainConfig};

/// Examples of `split`, or the whole corpus when that split is empty.
pub fn subset(corpus: &[QAExample], split: Split) -> Vec<QAExample> {
    let picked: Vec<QAExample> = corpus.iter().filter(|e| e.split == split).cloned().collect();
    if picked.is_empty() {
        corpus.to_vec()
    } else {
        picked
    }
}

fn train_and_evaluate(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    train_set: &[QAExample],
    eval_set: &[QAExample],
) -> Result<MetricsReport> {
    let mut rng = SplitMix64::new(train_config.seed);
    let mut model = QAModel::new(model_config.clone(), &mut rng)?;
    train(&mut model, train_set, train_config)?;
    evaluate_model(&model, eval_set, Stage::Calibrated)
}

/// Metrics for one swept subspace count.
#[derive(Debug, Clone)]
pub struct KAblationRow {
    pub k: usize,
    pub report: MetricsReport,
}

/// Train and evaluate once per K in `ks`, holding everything else fixed.
pub fn ablate_k(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    corpus: &[QAExample],
    ks: &[usize],
) -> Result<Vec<KAblationRow>> {
    let base_qlsc = model_config
        .qlsc
        .as_ref()
        .ok_or_else(|| Error::Contract("the K sweep needs a calibrator-enabled config".into()))?
        .clone();
    if ks.is_empty() {
        return Err(Error::Contract("the K sweep needs at least one K".into()));
    }
    let train_set = subset(corpus, Split::Train);
    let eval_set = subset(corpus, Split::Test);
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut config = model_config.clone();
        config.qlsc = Some(crate::qlsc::QlscConfig { k, ..base_qlsc.clone() });
        let report = train_and_evaluate(&config, train_config, &train_set, &eval_set)?;
        rows.push(KAblationRow { k, report });
    }
    Ok(rows)
}

/// Write `k,em,f1,tcr,tir,mean_l1,mean_l2,n_examples,n_groups` CSV.
pub fn write_k_ablation_csv<W: Write>(w: &mut W, rows: &[KAblationRow]) -> Result<()> {
    writeln!(w, "k,em,f1,tcr,tir,mean_l1,mean_l2,n_examples,n_groups")?;
    for row in rows {
        let r = &row.report;
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
            row.k, r.em, r.f1, r.tcr, r.tir, r.mean_l1, r.mean_l2, r.n_examples, r.n_groups
        )?;
    }
    Ok(())
}

/// Mean and population standard deviation of one metric across runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricStats {
    pub mean: f64,
    pub std: f64,
}

fn stats(values: &[f64]) -> MetricStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MetricStats { mean, std: var.sqrt() }
}

/// Per-metric statistics over a set of runs.
#[derive(Debug, Clone)]
pub struct AggregateStats {
    pub em: MetricStats,
    pub f1: MetricStats,
    pub tcr: MetricStats,
    pub tir: MetricStats,
    pub mean_l1: MetricStats,
    pub mean_l2: MetricStats,
}

fn aggregate(reports: &[MetricsReport]) -> AggregateStats {
    let collect = |f: fn(&MetricsReport) -> f64| -> Vec<f64> { reports.iter().map(f).collect() };
    AggregateStats {
        em: stats(&collect(|r| r.em)),
        f1: stats(&collect(|r| r.f1)),
        tcr: stats(&collect(|r| r.tcr)),
        tir: stats(&collect(|r| r.tir)),
        mean_l1: stats(&collect(|r| r.mean_l1)),
        mean_l2: stats(&collect(|r| r.mean_l2)),
    }
}

/// Statistics for all repetitions of one base seed.
#[derive(Debug, Clone)]
pub struct SeedRow {
    pub seed: u64,
    pub stats: AggregateStats,
}

/// Seed sweep result: per-seed statistics plus the pool over every run.
#[derive(Debug, Clone)]
pub struct SeedAblation {
    pub per_seed: Vec<SeedRow>,
    pub overall: AggregateStats,
    pub repeats: usize,
}

/// Repetition `rep` of base seed `seed`. Repetition zero runs the seed
/// itself; later repetitions stride by the PRNG's golden-ratio constant so
/// they stay deterministic yet decorrelated.
pub fn derived_seed(seed: u64, rep: usize) -> u64 {
    seed.wrapping_add(GOLDEN_GAMMA.wrapping_mul(rep as u64))
}

/// Train and evaluate `repeats` times per seed; each run reseeds both the
/// parameter init and the shuffle stream.
pub fn ablate_seed(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    corpus: &[QAExample],
    seeds: &[u64],
    repeats: usize,
) -> Result<SeedAblation> {
    if seeds.is_empty() || repeats == 0 {
        return Err(Error::Contract(
            "the seed sweep needs at least one seed and one repetition".into(),
        ));
    }
    let train_set = subset(corpus, Split::Train);
    let eval_set = subset(corpus, Split::Test);
    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut all_reports = Vec::with_capacity(seeds.len() * repeats);
    for &seed in seeds {
        let mut reports = Vec::with_capacity(repeats);
        for rep in 0..repeats {
            let cfg = TrainConfig {
                seed: derived_seed(seed, rep),
                ..train_config.clone()
            };
            let report = train_and_evaluate(model_config, &cfg, &train_set, &eval_set)?;
            reports.push(report);
        }
        per_seed.push(SeedRow { seed, stats: aggregate(&reports) });
        all_reports.extend(reports);
    }
    Ok(SeedAblation {
        per_seed,
        overall: aggregate(&all_reports),
        repeats,
    })
}

/// Write the seed sweep as wide CSV: one row per seed, then an `overall`
/// row pooling every run.
pub fn write_seed_ablation_csv<W: Write>(w: &mut W, ablation: &SeedAblation) -> Result<()> {
    writeln!(
        w,
        "seed,em_mean,em_std,f1_mean,f1_std,tcr_mean,tcr_std,tir_mean,tir_std,l1_mean,l1_std,l2_mean,l2_std"
    )?;
    let row = |label: &str, s: &AggregateStats| {
        format!(
            "{label},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            s.em.mean,
            s.em.std,
            s.f1.mean,
            s.f1.std,
            s.tcr.mean,
            s.tcr.std,
            s.tir.mean,
            s.tir.std,
            s.mean_l1.mean,
            s.mean_l1.std,
            s.mean_l2.mean,
            s.mean_l2.std
        )
    };
    for sr in &ablation.per_seed {
        writeln!(w, "{}", row(&sr.seed.to_string(), &sr.stats))?;
    }
    writeln!(w, "{}", row("overall", &ablation.overall))?;
    Ok(())
}
