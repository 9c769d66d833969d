//! Text-equivalent clinical item bank: four subtests with deterministic,
//! rubric-typed scoring payloads.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::grammar::{naming_adjective, sample_sentence};
use crate::data::vocab::{Field, NAMING_TASK, NOUNS, REPEAT_TASK, SEP, STORY_TASK};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
pub enum Subtest {
    #[serde(rename = "SS")]
    SpontaneousSpeech,
    #[serde(rename = "C")]
    Comprehension,
    #[serde(rename = "R")]
    Repetition,
    #[serde(rename = "N")]
    Naming,
}

pub const SUBTESTS: &[Subtest] =
    &[Subtest::SpontaneousSpeech, Subtest::Comprehension, Subtest::Repetition, Subtest::Naming];

impl Subtest {
    pub fn code(self) -> &'static str {
        match self {
            Subtest::SpontaneousSpeech => "SS",
            Subtest::Comprehension => "C",
            Subtest::Repetition => "R",
            Subtest::Naming => "N",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Rubric {
    /// Token-level edit similarity against the key.
    Repeat,
    /// Full points iff the key token appears in the output.
    Naming,
    /// Model picks the highest-scoring option; full points iff it is the key.
    Choice { options: Vec<String> },
    /// Weighted keyword coverage, fluency band and type-token ratio.
    Spontaneous { keywords: Vec<String>, min_tokens: usize, max_tokens: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ClinicalItem {
    pub id: String,
    pub subtest: Subtest,
    pub prompt: String,
    pub key: String,
    pub max_points: f64,
    pub rubric: Rubric,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ItemBank {
    pub version: u32,
    pub items: Vec<ClinicalItem>,
}

impl ItemBank {
    pub fn validate(&self) -> Result<()> {
        for item in &self.items {
            if item.max_points <= 0.0 {
                return Err(Error::Data(format!("item {}: max_points must be positive", item.id)));
            }
            match (&item.rubric, item.subtest) {
                (Rubric::Repeat, Subtest::Repetition)
                | (Rubric::Naming, Subtest::Naming)
                | (Rubric::Spontaneous { .. }, Subtest::SpontaneousSpeech) => {}
                (Rubric::Choice { options }, Subtest::Comprehension) => {
                    let hits = options.iter().filter(|o| **o == item.key).count();
                    if hits != 1 {
                        return Err(Error::Data(format!(
                            "item {}: key must match exactly one option, matches {hits}",
                            item.id
                        )));
                    }
                }
                _ => {
                    return Err(Error::Data(format!(
                        "item {}: rubric does not match subtest {:?}",
                        item.id, item.subtest
                    )))
                }
            }
        }
        for &st in SUBTESTS {
            if !self.items.iter().any(|i| i.subtest == st) {
                return Err(Error::Config(format!("item bank has no {} items", st.code())));
            }
        }
        Ok(())
    }

    pub fn raw_max(&self, subtest: Subtest) -> f64 {
        self.items.iter().filter(|i| i.subtest == subtest).map(|i| i.max_points).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<ItemBank> {
        let bank: ItemBank = serde_json::from_str(text)?;
        bank.validate()?;
        Ok(bank)
    }
}

/// Builds the versioned item bank: `per_subtest` items per subtest, all
/// answerable from the grammar and lexicon. Noun-backed pools cycle when
/// `per_subtest` exceeds the concrete-noun inventory.
pub fn build_clinical_items(seed: u64, per_subtest: usize) -> ItemBank {
    let mut rng = rng_from_seed(seed);
    let mut items = Vec::new();

    // Repetition: repeat-after-me sentences from the grammar.
    for i in 0..per_subtest {
        let s = sample_sentence(&mut rng).tokens.join(" ");
        items.push(ClinicalItem {
            id: format!("R{i:02}"),
            subtest: Subtest::Repetition,
            prompt: format!("{REPEAT_TASK} {s} {SEP}"),
            key: s,
            max_points: 10.0,
            rubric: Rubric::Repeat,
        });
    }

    // Naming: definition-style clue -> single-token answer.
    let concrete: Vec<_> = NOUNS.iter().filter(|n| n.field != Field::Abstract).collect();
    let mut naming_pool = concrete.clone();
    naming_pool.shuffle(&mut rng);
    for (i, noun) in naming_pool.iter().cycle().take(per_subtest).enumerate() {
        items.push(ClinicalItem {
            id: format!("N{i:02}"),
            subtest: Subtest::Naming,
            prompt: format!(
                "{NAMING_TASK} {} {} {SEP}",
                noun.field.category_word(),
                naming_adjective(noun)
            ),
            key: noun.sg.to_string(),
            max_points: 10.0,
            rubric: Rubric::Naming,
        });
    }

    // Comprehension: multiple choice over the lexicon, selectional frames.
    let subjects: Vec<_> = NOUNS
        .iter()
        .filter(|n| matches!(n.field, Field::Person | Field::Animal))
        .collect();
    let foods: Vec<_> = NOUNS.iter().filter(|n| n.field == Field::Food).collect();
    for i in 0..per_subtest {
        let subj = subjects[i % subjects.len()];
        let key = foods[i % foods.len()].sg.to_string();
        let distractors: Vec<String> = {
            let mut pool: Vec<String> = NOUNS
                .iter()
                .filter(|n| matches!(n.field, Field::Object | Field::Animal | Field::Abstract))
                .map(|n| n.sg.to_string())
                .collect();
            pool.shuffle(&mut rng);
            pool.into_iter().take(3).collect()
        };
        let mut options = distractors;
        options.push(key.clone());
        options.shuffle(&mut rng);
        items.push(ClinicalItem {
            id: format!("C{i:02}"),
            subtest: Subtest::Comprehension,
            prompt: format!("the {} eats the", subj.sg),
            key,
            max_points: 10.0,
            rubric: Rubric::Choice { options },
        });
    }

    // Spontaneous speech: open story prompts with keyword lists.
    let mut story_pool = concrete;
    story_pool.shuffle(&mut rng);
    for (i, noun) in story_pool.iter().cycle().take(per_subtest).enumerate() {
        items.push(ClinicalItem {
            id: format!("S{i:02}"),
            subtest: Subtest::SpontaneousSpeech,
            prompt: format!("{STORY_TASK} {} {SEP}", noun.sg),
            key: noun.sg.to_string(),
            max_points: 10.0,
            rubric: Rubric::Spontaneous {
                keywords: vec![
                    noun.sg.to_string(),
                    noun.pl.to_string(),
                    naming_adjective(noun).to_string(),
                ],
                min_tokens: 3,
                max_tokens: 24,
            },
        });
    }

    let bank = ItemBank { version: 1, items };
    debug_assert!(bank.validate().is_ok());
    bank
}
