//! Clinical battery: deterministic rubric scoring of model outputs on the
//! item bank, aphasia-quotient arithmetic, diagnosis, and dose-response
//! tables over lesion plans.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::data::{ClinicalItem, ItemBank, Rubric, Subtest, Vocab};
use crate::error::{Error, Result};
use crate::lesion::{apply_lesion, LesionPlan};
use crate::model::forward::UnitOverrideSet;
use crate::model::Model;

pub const AQ_THRESHOLD: f64 = 93.8;
/// Rescaled subtest maxima; the unique values for which a perfect battery
/// yields an AQ of exactly 100 under the quotient formula.
pub const MAX_SS: f64 = 20.0;
pub const MAX_C: f64 = 120.0;
pub const MAX_R: f64 = 100.0;
pub const MAX_N: f64 = 40.0;

pub const GENERATION_BUDGET: usize = 24;

/// Lowercase, trim, collapse internal whitespace.
pub fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn token_edit_distance(a: &[&str], b: &[&str]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ta) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, tb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ta != tb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Deterministic rubric score for one item given the model's output text.
pub fn score_item(output: &str, item: &ClinicalItem) -> Result<f64> {
    let out = normalize(output);
    let out_tokens: Vec<&str> = out.split_whitespace().collect();
    let points = match &item.rubric {
        Rubric::Repeat => {
            let key = normalize(&item.key);
            let key_tokens: Vec<&str> = key.split_whitespace().collect();
            if key_tokens.is_empty() {
                return Err(Error::Data(format!("repeat item {} has an empty key", item.id)));
            }
            let dist = token_edit_distance(&out_tokens, &key_tokens);
            let denom = key_tokens.len().max(out_tokens.len()) as f64;
            item.max_points * (1.0 - dist as f64 / denom).max(0.0)
        }
        Rubric::Naming => {
            let key = normalize(&item.key);
            if key.is_empty() {
                return Err(Error::Data(format!("naming item {} has an empty key", item.id)));
            }
            if out_tokens.iter().any(|&t| t == key) {
                item.max_points
            } else {
                0.0
            }
        }
        Rubric::Choice { options } => {
            if options.is_empty() || !options.iter().any(|o| normalize(o) == normalize(&item.key)) {
                return Err(Error::Data(format!(
                    "choice item {} must list the keyed option",
                    item.id
                )));
            }
            if out == normalize(&item.key) {
                item.max_points
            } else {
                0.0
            }
        }
        Rubric::Spontaneous { keywords, min_tokens, max_tokens } => {
            if keywords.is_empty() || min_tokens > max_tokens {
                return Err(Error::Data(format!(
                    "spontaneous item {} has a malformed band or no keywords",
                    item.id
                )));
            }
            let covered = keywords
                .iter()
                .filter(|k| out_tokens.contains(&normalize(k).as_str()))
                .count();
            let coverage = covered as f64 / keywords.len() as f64;
            let fluency = if out_tokens.len() >= *min_tokens && out_tokens.len() <= *max_tokens {
                1.0
            } else {
                0.0
            };
            let ttr = if out_tokens.is_empty() {
                0.0
            } else {
                let distinct: std::collections::BTreeSet<&&str> = out_tokens.iter().collect();
                (distinct.len() as f64 / out_tokens.len() as f64).clamp(0.0, 1.0)
            };
            item.max_points * (0.5 * coverage + 0.25 * fluency + 0.25 * ttr)
        }
    };
    Ok(points.clamp(0.0, item.max_points))
}

/// Runs one item against the model. Generation subtests decode a greedy
/// continuation of the prompt; choice items pick the option with the
/// highest average log-probability (ties select nothing).
pub fn produce_output(model: &Model, vocab: &Vocab, item: &ClinicalItem) -> Result<String> {
    let prompt = {
        let mut t = vec![vocab.bos()];
        t.extend(vocab.encode(&item.prompt)?);
        t
    };
    match &item.rubric {
        Rubric::Choice { options } => {
            let mut best: Option<(f64, usize)> = None;
            let mut tied = false;
            for (i, option) in options.iter().enumerate() {
                let mut seq = prompt.clone();
                seq.extend(vocab.encode(option)?);
                seq.push(vocab.eos());
                let score = model.avg_log_prob(&seq, &UnitOverrideSet::none())?;
                match best {
                    None => best = Some((score, i)),
                    Some((s, _)) if score > s => {
                        best = Some((score, i));
                        tied = false;
                    }
                    Some((s, _)) if score == s => tied = true,
                    _ => {}
                }
            }
            match best {
                Some((_, i)) if !tied => Ok(options[i].clone()),
                _ => Ok(String::new()),
            }
        }
        _ => {
            let generated =
                model.generate(&prompt, vocab.eos(), GENERATION_BUDGET, &UnitOverrideSet::none())?;
            Ok(vocab.decode(&generated))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Diagnosis {
    Normal,
    Aphasic,
}

/// Aphasic strictly below the threshold; the boundary itself reads normal.
pub fn diagnose(aq: f64) -> Diagnosis {
    if aq < AQ_THRESHOLD {
        Diagnosis::Aphasic
    } else {
        Diagnosis::Normal
    }
}

/// The aphasia quotient over rescaled subtest scores.
pub fn aphasia_quotient(ss: f64, c: f64, r: f64, n: f64) -> f64 {
    (ss + c / 12.0 + r / 10.0 + n / 4.0) * 2.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubtestScore {
    pub raw: f64,
    pub raw_max: f64,
    pub rescaled: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemResult {
    pub id: String,
    pub subtest: Subtest,
    pub output: String,
    pub points: f64,
    pub max_points: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WabScorecard {
    pub subtests: BTreeMap<Subtest, SubtestScore>,
    pub aq: f64,
    pub diagnosis: Diagnosis,
    pub model_fingerprint: String,
    pub item_bank_version: u32,
    /// Verbatim output per item, for qualitative inspection and replay.
    pub items: Vec<ItemResult>,
}

fn subtest_max(subtest: Subtest) -> f64 {
    match subtest {
        Subtest::SpontaneousSpeech => MAX_SS,
        Subtest::Comprehension => MAX_C,
        Subtest::Repetition => MAX_R,
        Subtest::Naming => MAX_N,
    }
}

/// Scores persisted outputs against the bank; a pure function, so replaying
/// stored outputs reproduces a card exactly.
pub fn score_outputs(
    outputs: &[(String, String)],
    bank: &ItemBank,
    model_fingerprint: &str,
) -> Result<WabScorecard> {
    let by_id: BTreeMap<&str, &str> =
        outputs.iter().map(|(id, out)| (id.as_str(), out.as_str())).collect();
    let mut raw: BTreeMap<Subtest, (f64, f64)> = BTreeMap::new();
    let mut items = Vec::with_capacity(bank.items.len());
    for item in &bank.items {
        let output = *by_id
            .get(item.id.as_str())
            .ok_or_else(|| Error::Data(format!("no output recorded for item {}", item.id)))?;
        let points = score_item(output, item)?;
        let entry = raw.entry(item.subtest).or_insert((0.0, 0.0));
        entry.0 += points;
        entry.1 += item.max_points;
        items.push(ItemResult {
            id: item.id.clone(),
            subtest: item.subtest,
            output: output.to_string(),
            points,
            max_points: item.max_points,
        });
    }
    for subtest in [Subtest::SpontaneousSpeech, Subtest::Comprehension, Subtest::Repetition, Subtest::Naming] {
        if !raw.contains_key(&subtest) {
            return Err(Error::Config(format!(
                "item bank has no {} items",
                subtest.code()
            )));
        }
    }
    let subtests: BTreeMap<Subtest, SubtestScore> = raw
        .into_iter()
        .map(|(s, (r, m))| {
            (s, SubtestScore { raw: r, raw_max: m, rescaled: r / m * subtest_max(s) })
        })
        .collect();
    let aq = aphasia_quotient(
        subtests[&Subtest::SpontaneousSpeech].rescaled,
        subtests[&Subtest::Comprehension].rescaled,
        subtests[&Subtest::Repetition].rescaled,
        subtests[&Subtest::Naming].rescaled,
    );
    Ok(WabScorecard {
        subtests,
        aq,
        diagnosis: diagnose(aq),
        model_fingerprint: model_fingerprint.to_string(),
        item_bank_version: bank.version,
        items,
    })
}

/// Full battery: produce every item's output, then score.
pub fn run_wab(model: &Model, vocab: &Vocab, bank: &ItemBank) -> Result<WabScorecard> {
    bank.validate()?;
    let outputs: Vec<(String, String)> = bank
        .items
        .iter()
        .map(|item| Ok((item.id.clone(), produce_output(model, vocab, item)?)))
        .collect::<Result<_>>()?;
    score_outputs(&outputs, bank, &model.fingerprint())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DoseResponseRow {
    pub condition: String,
    pub scheme: String,
    pub budget: usize,
    pub seed: u64,
    pub aq: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DoseResponseTable {
    pub rows: Vec<DoseResponseRow>,
}

impl DoseResponseTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("condition,scheme,budget,seed,aq\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.condition, r.scheme, r.budget, r.seed, r.aq
            ));
        }
        out
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        crate::pipeline::atomic_write(&dir.join(format!("{stem}.csv")), self.to_csv().as_bytes())?;
        let json = serde_json::to_string_pretty(self)?;
        crate::pipeline::atomic_write(&dir.join(format!("{stem}.json")), json.as_bytes())
    }

    /// Mean AQ per (condition, scheme, budget) across seeds.
    pub fn seed_means(&self) -> Vec<(String, String, usize, f64)> {
        let mut groups: BTreeMap<(String, String, usize), (f64, usize)> = BTreeMap::new();
        for r in &self.rows {
            let e = groups.entry((r.condition.clone(), r.scheme.clone(), r.budget)).or_insert((0.0, 0));
            e.0 += r.aq;
            e.1 += 1;
        }
        groups.into_iter().map(|((c, s, b), (sum, n))| (c, s, b, sum / n as f64)).collect()
    }
}

/// Evaluates the intact model once (budget 0) and each labelled lesion plan.
pub fn dose_response(
    model: &Model,
    vocab: &Vocab,
    bank: &ItemBank,
    plans: &[(String, LesionPlan)],
) -> Result<DoseResponseTable> {
    let intact = run_wab(model, vocab, bank)?;
    let mut rows = vec![DoseResponseRow {
        condition: "intact".into(),
        scheme: "none".into(),
        budget: 0,
        seed: 0,
        aq: intact.aq,
    }];
    for (condition, plan) in plans {
        let lesioned = apply_lesion(model, plan)?;
        let card = run_wab(&lesioned, vocab, bank)?;
        rows.push(DoseResponseRow {
            condition: condition.clone(),
            scheme: plan.scheme.name().into(),
            budget: plan.targets.len(),
            seed: plan.seed,
            aq: card.aq,
        });
    }
    Ok(DoseResponseTable { rows })
}
