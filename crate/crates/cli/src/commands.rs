//! One function per subcommand; all take parsed flags plus the merged
//! configuration and return `Result`, so the caller owns exit codes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use qlsc_core::ablate::{ablate_k, ablate_seed, subset, write_k_ablation_csv, write_seed_ablation_csv};
use qlsc_core::checkpoint::{load_checkpoint, save_checkpoint};
use qlsc_core::data::{generate_corpus, load_jsonl, save_jsonl, QAExample, Split};
use qlsc_core::metrics::evaluate_model;
use qlsc_core::model::{model_grad_check_accurate, query_representation};
use qlsc_core::pca::{pca_project_2d, write_pca_csv, PcaRow};
use qlsc_core::squad::{load_squad_json, VocabPolicy};
use qlsc_core::train::{train, write_loss_csv};
use qlsc_core::{
    Error, ModelConfig, QAModel, QlscConfig, Result, SplitMix64, Stage,
};

use crate::config::{write_effective_config, RunConfig};

/// Raise capacity fields so the model accepts every example in `corpus`.
/// The configured values are floors, not caps.
fn fit_model_to_data(model: &mut ModelConfig, corpus: &[QAExample]) {
    for ex in corpus {
        let max_id = ex.question.iter().chain(&ex.passage).copied().max().unwrap_or(0);
        model.vocab_size = model.vocab_size.max(max_id + 1);
        model.max_query_len = model.max_query_len.max(ex.question.len());
        model.max_passage_len = model.max_passage_len.max(ex.passage.len());
    }
}

fn write_file<F>(path: &Path, emit: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    emit(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Which examples a command operates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitChoice {
    Train,
    Dev,
    Test,
    All,
}

fn select(corpus: &[QAExample], choice: SplitChoice) -> Vec<QAExample> {
    match choice {
        SplitChoice::All => corpus.to_vec(),
        SplitChoice::Train => subset(corpus, Split::Train),
        SplitChoice::Dev => subset(corpus, Split::Dev),
        SplitChoice::Test => subset(corpus, Split::Test),
    }
}

pub fn gen(cfg: &RunConfig, out: &Path, out_dir: &Path) -> Result<()> {
    let (examples, _vocab) = generate_corpus(&cfg.gen)?;
    save_jsonl(&examples, out)?;
    write_effective_config(out_dir, cfg)?;
    println!(
        "wrote {} examples ({} groups x {} paraphrases) to {}",
        examples.len(),
        cfg.gen.n_groups,
        cfg.gen.paraphrases_per_group,
        out.display()
    );
    Ok(())
}

/// Model and calibrator switches shared by `train` and the ablation drivers.
#[derive(Debug, Clone, Default)]
pub struct ModelOverrides {
    pub qlsc_on: Option<bool>,
    pub k: Option<usize>,
    pub m: Option<usize>,
}

impl ModelOverrides {
    pub fn apply(&self, model: &mut ModelConfig) -> Result<()> {
        match self.qlsc_on {
            Some(false) => model.qlsc = None,
            Some(true) if model.qlsc.is_none() => {
                model.qlsc = Some(QlscConfig { n: model.n, ..QlscConfig::default() })
            }
            _ => {}
        }
        if self.k.is_some() || self.m.is_some() {
            let Some(qlsc) = model.qlsc.as_mut() else {
                return Err(Error::Config(
                    "--k and --m require the calibrator; drop --qlsc off".into(),
                ));
            };
            if let Some(k) = self.k {
                qlsc.k = k;
            }
            if let Some(m) = self.m {
                qlsc.m = m;
            }
        }
        Ok(())
    }
}

pub fn train_cmd(cfg: &mut RunConfig, data: &Path, out: &Path, out_dir: &Path) -> Result<()> {
    let corpus = load_jsonl(data)?;
    fit_model_to_data(&mut cfg.model, &corpus);
    let train_set = subset(&corpus, Split::Train);

    let mut rng = SplitMix64::new(cfg.train.seed);
    let mut model = QAModel::new(cfg.model.clone(), &mut rng)?;
    let outcome = train(&mut model, &train_set, &cfg.train)?;

    save_checkpoint(&model, &cfg.train, outcome.rng_state, out)?;
    fs::create_dir_all(out_dir)?;
    write_file(&out_dir.join("loss.csv"), |w| write_loss_csv(w, &outcome.epoch_losses))?;
    write_effective_config(out_dir, cfg)?;

    let last = outcome.epoch_losses.last().map(|e| e.mean_loss).unwrap_or(f64::NAN);
    println!(
        "trained {} epochs on {} examples; final mean loss {:.6}; checkpoint {}",
        cfg.train.epochs,
        train_set.len(),
        last,
        out.display()
    );
    Ok(())
}

pub fn eval(
    ckpt: &Path,
    data: &Path,
    report: Option<&Path>,
    out_dir: &Path,
    split: SplitChoice,
    stage: Stage,
) -> Result<()> {
    let (model, _train_cfg, _rng_state) = load_checkpoint(ckpt)?;
    let corpus = load_jsonl(data)?;
    let chosen = select(&corpus, split);
    let metrics = evaluate_model(&model, &chosen, stage)?;

    let default_path = out_dir.join("metrics.csv");
    let path: &Path = report.unwrap_or(&default_path);
    write_file(path, |w| metrics.write_csv(w))?;
    println!(
        "em {:.2} f1 {:.2} tcr {:.2} tir {:.2} l1 {:.4} l2 {:.4} ({} examples, {} groups) -> {}",
        metrics.em,
        metrics.f1,
        metrics.tcr,
        metrics.tir,
        metrics.mean_l1,
        metrics.mean_l2,
        metrics.n_examples,
        metrics.n_groups,
        path.display()
    );
    Ok(())
}

pub fn ablate_k_cmd(
    cfg: &RunConfig,
    data: &Path,
    ks: &[usize],
    report: Option<&Path>,
    out_dir: &Path,
) -> Result<()> {
    let corpus = load_jsonl(data)?;
    let mut model_cfg = cfg.model.clone();
    fit_model_to_data(&mut model_cfg, &corpus);
    let rows = ablate_k(&model_cfg, &cfg.train, &corpus, ks)?;

    let default_path = out_dir.join("k_ablation.csv");
    let path: &Path = report.unwrap_or(&default_path);
    write_file(path, |w| write_k_ablation_csv(w, &rows))?;
    write_effective_config(out_dir, cfg)?;
    for row in &rows {
        println!("k={} em {:.2} f1 {:.2} tcr {:.2} l2 {:.4}", row.k, row.report.em, row.report.f1, row.report.tcr, row.report.mean_l2);
    }
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}

pub fn ablate_seed_cmd(
    cfg: &RunConfig,
    data: &Path,
    seeds: &[u64],
    repeats: usize,
    report: Option<&Path>,
    out_dir: &Path,
) -> Result<()> {
    let corpus = load_jsonl(data)?;
    let mut model_cfg = cfg.model.clone();
    fit_model_to_data(&mut model_cfg, &corpus);
    let ablation = ablate_seed(&model_cfg, &cfg.train, &corpus, seeds, repeats)?;

    let default_path = out_dir.join("seed_ablation.csv");
    let path: &Path = report.unwrap_or(&default_path);
    write_file(path, |w| write_seed_ablation_csv(w, &ablation))?;
    write_effective_config(out_dir, cfg)?;
    println!(
        "em {:.2} +/- {:.2} over {} seeds x {} repeats -> {}",
        ablation.overall.em.mean,
        ablation.overall.em.std,
        seeds.len(),
        repeats,
        path.display()
    );
    Ok(())
}

/// Micro operating point for the gradient check: small enough that every
/// parameter entry is compared in well under a minute.
fn gradcheck_setup(seed: u64) -> Result<(QAModel, QAExample)> {
    let config = ModelConfig {
        vocab_size: 20,
        n: 8,
        qlsc: Some(QlscConfig {
            n: 8,
            m: 2,
            k: 4,
            calibrate_passage: true,
            enhance_centers_from_passage: true,
        }),
        max_query_len: 8,
        max_passage_len: 12,
        max_answer_len: 4,
        null_threshold: None,
    };
    let mut rng = SplitMix64::new(seed);
    let model = QAModel::new(config, &mut rng)?;
    let draw = |rng: &mut SplitMix64, len: usize| -> Vec<usize> {
        (0..len).map(|_| 3 + rng.next_below(17) as usize).collect()
    };
    let ex = QAExample {
        id: "gradcheck".into(),
        group_id: "gradcheck".into(),
        split: Split::Train,
        question: draw(&mut rng, 5),
        passage: draw(&mut rng, 7),
        answer_start: 2,
        answer_end: 4,
    };
    Ok((model, ex))
}

pub fn gradcheck(seed: u64, h: f64, threshold: f64) -> Result<()> {
    let (model, ex) = gradcheck_setup(seed)?;
    let report = model_grad_check_accurate(&model, &ex, h)?;
    for p in &report.per_param {
        println!("{:<28} {:>12.3e}  ({} entries)", p.name, p.max_rel_err, p.n_entries);
    }
    println!(
        "max relative error {:.3e} over {} parameter entries (h = {:e})",
        report.max_rel_err, report.n_entries, h
    );
    if report.max_rel_err > threshold {
        return Err(Error::Contract(format!(
            "gradient check failed: max relative error {:.3e} exceeds {:e}",
            report.max_rel_err, threshold
        )));
    }
    println!("gradient check passed (threshold {threshold:e})");
    Ok(())
}

pub fn pca(
    ckpt: &Path,
    data: &Path,
    out_dir: &Path,
    split: SplitChoice,
    stage: Stage,
) -> Result<()> {
    let (model, _train_cfg, _rng_state) = load_checkpoint(ckpt)?;
    let corpus = load_jsonl(data)?;
    let chosen = select(&corpus, split);
    let mut vectors = Vec::with_capacity(chosen.len());
    for ex in &chosen {
        vectors.push(query_representation(&model, ex, stage)?);
    }
    let projected = pca_project_2d(&vectors)?;
    let rows: Vec<PcaRow> = chosen
        .iter()
        .zip(&projected.projections)
        .map(|(ex, p)| PcaRow {
            group_id: ex.group_id.clone(),
            example_id: ex.id.clone(),
            pc1: p[0],
            pc2: p[1],
        })
        .collect();
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join("pca.csv");
    write_file(&path, |w| write_pca_csv(w, &rows))?;
    println!(
        "projected {} query vectors; explained variance {:.6} and {:.6} -> {}",
        rows.len(),
        projected.explained_variance[0],
        projected.explained_variance[1],
        path.display()
    );
    Ok(())
}

pub fn import_squad(input: &Path, out: &Path) -> Result<()> {
    let import = load_squad_json(input, VocabPolicy::Build)?;
    for s in &import.skipped {
        eprintln!("warning: skipped {}: {}", s.id, s.reason);
    }
    save_jsonl(&import.examples, out)?;
    let total = import.examples.len() + import.skipped.len();
    println!(
        "imported {} of {} questions ({:.1}% resolved) to {}",
        import.examples.len(),
        total,
        100.0 * import.resolved_fraction(),
        out.display()
    );
    Ok(())
}
