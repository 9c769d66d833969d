//! Phenotype induction: fine-tune a trained model on an aphasia-subtype
//! corpus while accumulating gradient-times-weight importance, aggregate it
//! into per-unit contribution scores, and rank/select units.

pub mod style;

pub use style::{train_style_classifier, style_consistency, StyleClassifier, StyleLabel, StyleOutcome};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Phenotype, SubtypeCorpus, Vocab};
use crate::error::{Error, Result};
use crate::model::train::{train, ImportanceAccumulator, TrainOptions};
use crate::model::{Model, UnitId};
use crate::optim::Optimizer;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContributionTable {
    pub phenotype: Phenotype,
    /// One non-negative score per unit, aligned with the model's inventory.
    pub units: Vec<UnitId>,
    pub scores: Vec<f64>,
    pub steps: usize,
    pub optimizer: String,
    pub base_fingerprint: String,
}

#[derive(Debug, Clone)]
pub struct FinetuneOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub shuffle_seed: u64,
}

impl FinetuneOptions {
    /// One epoch at batch 8 with a small AdamW learning rate.
    pub fn standard(lr: f64, shuffle_seed: u64) -> Self {
        FinetuneOptions { epochs: 1, batch_size: 8, lr, shuffle_seed }
    }
}

/// Encodes subtype utterances with `<bos> ... <eos>` framing.
pub fn encode_corpus(vocab: &Vocab, corpus: &SubtypeCorpus) -> Result<Vec<Vec<usize>>> {
    corpus
        .utterances
        .iter()
        .map(|u| {
            let mut tokens = vec![vocab.bos()];
            tokens.extend(vocab.encode(u)?);
            tokens.push(vocab.eos());
            Ok(tokens)
        })
        .collect()
}

/// Fine-tunes a copy of `base` on the encoded corpus. At every optimizer
/// step the elementwise |gradient * pre-update weight| is accumulated; unit
/// scores are the sums over each unit's parameter elements. Parameters that
/// belong to no unit (attention, embeddings, routers) are accumulated but
/// never enter a score.
pub fn finetune_with_importance(
    base: &Model,
    phenotype: Phenotype,
    corpus_tokens: &[Vec<usize>],
    opts: &FinetuneOptions,
) -> Result<(Model, ContributionTable)> {
    let mut model = base.clone();
    let mut acc = ImportanceAccumulator::default();
    let mut train_opts = TrainOptions {
        epochs: opts.epochs,
        batch_size: opts.batch_size,
        optimizer: Optimizer::adamw(opts.lr),
        shuffle_seed: opts.shuffle_seed,
    };
    let report = train(&mut model, corpus_tokens, &mut train_opts, Some(&mut acc))?;
    let table = aggregate_scores(base, phenotype, &acc, report.steps, &train_opts.optimizer)?;
    Ok((model, table))
}

fn aggregate_scores(
    base: &Model,
    phenotype: Phenotype,
    acc: &ImportanceAccumulator,
    steps: usize,
    optimizer: &Optimizer,
) -> Result<ContributionTable> {
    let units = base.units();
    let mut scores = Vec::with_capacity(units.len());
    for &unit in &units {
        let mut total = 0.0;
        for piece in base.unit_parameters(unit)? {
            let tensor = &acc.per_param[&piece.name];
            let cols = tensor.cols();
            for idx in piece.element_indices(cols) {
                total += tensor.data[idx];
            }
        }
        scores.push(total);
    }
    Ok(ContributionTable {
        phenotype,
        units,
        scores,
        steps,
        optimizer: optimizer.describe(),
        base_fingerprint: base.fingerprint(),
    })
}

impl ContributionTable {
    /// Units in descending score order; ties resolve by (layer, index).
    pub fn ranking(&self) -> Vec<(UnitId, f64)> {
        let mut out: Vec<(UnitId, f64)> =
            self.units.iter().copied().zip(self.scores.iter().copied()).collect();
        out.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap()
                .then_with(|| (a.0.layer, a.0.index).cmp(&(b.0.layer, b.0.index)))
        });
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("unit,score,rank\n");
        let ranking = self.ranking();
        for (rank, (unit, score)) in ranking.iter().enumerate() {
            out.push_str(&format!("{unit},{score},{}\n", rank + 1));
        }
        out
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        crate::pipeline::atomic_write(&dir.join(format!("{stem}.csv")), self.to_csv().as_bytes())?;
        let json = serde_json::to_string_pretty(self)?;
        crate::pipeline::atomic_write(&dir.join(format!("{stem}.json")), json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<ContributionTable> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// First max(1, ceil(p/100 * U)) units of a ranking, for 0 < p <= 100.
pub fn select_top_fraction(ranking: &[(UnitId, f64)], p: f64) -> Result<Vec<UnitId>> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::Input(format!("selection fraction {p}% outside (0, 100]")));
    }
    let count = ((p / 100.0 * ranking.len() as f64).ceil() as usize).max(1);
    Ok(ranking.iter().take(count).map(|&(u, _)| u).collect())
}
