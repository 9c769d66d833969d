//! Zero-ablation attribution: ablate one unit at a time, re-score minimal
//! pair suites, and record the accuracy change per (task, unit).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::data::{MinimalPair, Vocab};
use crate::error::{Error, Result};
use crate::model::forward::UnitOverrideSet;
use crate::model::{hex, Model, UnitId};

/// Anything that can score a token sequence under unit ablations. The toy
/// LMs implement it with average log-probability; tests use hand-built
/// reference oracles.
pub trait AblatableScorer: Sync {
    fn score(&self, tokens: &[usize], overrides: &UnitOverrideSet) -> Result<f64>;
    fn unit_inventory(&self) -> Vec<UnitId>;
    fn fingerprint(&self) -> String;
}

impl AblatableScorer for Model {
    fn score(&self, tokens: &[usize], overrides: &UnitOverrideSet) -> Result<f64> {
        self.avg_log_prob(tokens, overrides)
    }

    fn unit_inventory(&self) -> Vec<UnitId> {
        self.units()
    }

    fn fingerprint(&self) -> String {
        Model::fingerprint(self)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenPair {
    pub good: Vec<usize>,
    pub bad: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSuite {
    pub task: String,
    pub pairs: Vec<TokenPair>,
}

/// Encodes grouped minimal pairs with `<bos> ... <eos>` framing.
pub fn encode_suites(vocab: &Vocab, grouped: &[(String, Vec<MinimalPair>)]) -> Result<Vec<TaskSuite>> {
    grouped
        .iter()
        .map(|(task, pairs)| {
            let pairs = pairs
                .iter()
                .map(|p| {
                    Ok(TokenPair {
                        good: frame(vocab, &p.good)?,
                        bad: frame(vocab, &p.bad)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TaskSuite { task: task.clone(), pairs })
        })
        .collect()
}

fn frame(vocab: &Vocab, sentence: &str) -> Result<Vec<usize>> {
    let mut tokens = vec![vocab.bos()];
    tokens.extend(vocab.encode(sentence)?);
    tokens.push(vocab.eos());
    Ok(tokens)
}

/// Fraction of pairs where the good sentence outscores the bad one. Exact
/// ties count as incorrect.
pub fn task_accuracy(
    scorer: &dyn AblatableScorer,
    pairs: &[TokenPair],
    overrides: &UnitOverrideSet,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Input("task accuracy over an empty pair list".into()));
    }
    let mut correct = 0usize;
    for pair in pairs {
        if scorer.score(&pair.good, overrides)? > scorer.score(&pair.bad, overrides)? {
            correct += 1;
        }
    }
    Ok(correct as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionMap {
    pub tasks: Vec<String>,
    pub units: Vec<UnitId>,
    /// Un-ablated accuracy per task, aligned with `tasks`.
    pub baseline: Vec<f64>,
    /// deltas[task][unit] = accuracy with the unit zeroed minus baseline.
    pub deltas: Vec<Vec<f64>>,
    pub model_fingerprint: String,
    pub task_fingerprint: String,
}

fn suite_fingerprint(suites: &[TaskSuite]) -> String {
    let mut h = Sha256::new();
    for suite in suites {
        h.update(suite.task.as_bytes());
        for pair in &suite.pairs {
            for &t in pair.good.iter().chain(&pair.bad) {
                h.update((t as u64).to_be_bytes());
            }
            h.update([0xff]);
        }
    }
    hex(&h.finalize())
}

/// One zeroing ablation per (unit, task): exactly U·T ablated evaluations
/// plus T baselines. Results land in pre-assigned slots, so the output is
/// identical for any rayon worker count. The scorer is only read.
pub fn zero_ablation_sweep(
    scorer: &dyn AblatableScorer,
    suites: &[TaskSuite],
) -> Result<AttributionMap> {
    if suites.is_empty() || suites.iter().any(|s| s.pairs.is_empty()) {
        return Err(Error::Input("ablation sweep needs non-empty task suites".into()));
    }
    let units = scorer.unit_inventory();
    if units.is_empty() {
        return Err(Error::Config("scorer exposes no lesionable units".into()));
    }
    let baseline = suites
        .iter()
        .map(|s| task_accuracy(scorer, &s.pairs, &UnitOverrideSet::none()))
        .collect::<Result<Vec<f64>>>()?;

    let slots: Vec<(usize, usize)> = (0..suites.len())
        .flat_map(|t| (0..units.len()).map(move |u| (t, u)))
        .collect();
    let ablated: Vec<Result<f64>> = slots
        .par_iter()
        .map(|&(t, u)| {
            let over = UnitOverrideSet::single(units[u]);
            task_accuracy(scorer, &suites[t].pairs, &over)
        })
        .collect();

    let mut deltas = vec![vec![0.0; units.len()]; suites.len()];
    for (&(t, u), acc) in slots.iter().zip(ablated) {
        deltas[t][u] = acc? - baseline[t];
    }
    Ok(AttributionMap {
        tasks: suites.iter().map(|s| s.task.clone()).collect(),
        units,
        baseline,
        deltas,
        model_fingerprint: scorer.fingerprint(),
        task_fingerprint: suite_fingerprint(suites),
    })
}

impl AttributionMap {
    pub fn task_index(&self, task: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t == task)
            .ok_or_else(|| Error::Lookup(format!("unknown task `{task}`")))
    }

    /// Units ordered by rising delta: rank 1 = most negative = ablation hurts
    /// most. Ties resolve by (layer, index).
    pub fn phenomenon_ranking(&self, task: &str) -> Result<Vec<(UnitId, f64)>> {
        let t = self.task_index(task)?;
        let mut order: Vec<(UnitId, f64)> =
            self.units.iter().copied().zip(self.deltas[t].iter().copied()).collect();
        order.sort_by(|a, b| {
            a.1.partial_cmp(&b.1).unwrap().then_with(|| (a.0.layer, a.0.index).cmp(&(b.0.layer, b.0.index)))
        });
        Ok(order)
    }

    /// CSV: one row per unit, one column per task, full-precision floats.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("unit");
        for task in &self.tasks {
            out.push(',');
            out.push_str(task);
        }
        out.push('\n');
        for (u, unit) in self.units.iter().enumerate() {
            out.push_str(&unit.to_string());
            for t in 0..self.tasks.len() {
                out.push(',');
                out.push_str(&format!("{}", self.deltas[t][u]));
            }
            out.push('\n');
        }
        out
    }

    /// Writes `<stem>.csv` plus a `<stem>.json` sidecar with baselines and
    /// fingerprints; the JSON alone is enough to reload the full map.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        crate::pipeline::atomic_write(&dir.join(format!("{stem}.csv")), self.to_csv().as_bytes())?;
        let json = serde_json::to_string_pretty(self)?;
        crate::pipeline::atomic_write(&dir.join(format!("{stem}.json")), json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<AttributionMap> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
