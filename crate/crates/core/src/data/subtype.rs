//! Synthetic phenotype corpora: telegraphic Broca-style utterances and
//! fluent-but-scrambled Wernicke-style utterances derived from the grammar.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::grammar::sample_sentence;
use crate::data::vocab::{
    is_content_word, is_function_word, Field, ADJECTIVES, NEOLOGISMS, NOUNS, VERBS,
};
use crate::rng::{rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phenotype {
    Broca,
    Wernicke,
}

impl Phenotype {
    pub fn name(self) -> &'static str {
        match self {
            Phenotype::Broca => "broca",
            Phenotype::Wernicke => "wernicke",
        }
    }
}

impl std::fmt::Display for Phenotype {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubtypeCorpus {
    pub phenotype: Phenotype,
    pub utterances: Vec<String>,
    pub seed: u64,
}

/// Verb inflection stripping: third-person -s forms reduce to the base form.
fn strip_inflection(word: &str) -> Option<&'static str> {
    VERBS.iter().find(|v| v.sg == word).map(|v| v.pl)
}

/// Broca style: function words and inflections stochastically deleted,
/// adjectives mostly dropped, output shortened.
fn broca_utterance(base: &[String], rng: &mut Rng) -> Vec<String> {
    // Effortful production: coordinated second clauses are mostly abandoned.
    let mut clause: &[String] = base;
    if let Some(pos) = base.iter().position(|w| w == "and") {
        if rng.gen_bool(0.7) {
            clause = &base[..pos];
        }
    }
    let mut out = Vec::new();
    for word in clause {
        if is_function_word(word) {
            if rng.gen_bool(0.95) {
                continue;
            }
            out.push(word.clone());
        } else if ADJECTIVES.contains(&word.as_str()) {
            if rng.gen_bool(0.5) {
                continue;
            }
            out.push(word.clone());
        } else if let Some(base_form) = strip_inflection(word) {
            out.push(if rng.gen_bool(0.9) { base_form.to_string() } else { word.clone() });
        } else {
            out.push(word.clone());
        }
    }
    if out.is_empty() {
        out.push(base.iter().find(|w| is_content_word(w)).cloned().unwrap_or_else(|| base[0].clone()));
    }
    out
}

fn substitute_noun(word: &str, rng: &mut Rng) -> Option<String> {
    let noun = NOUNS.iter().find(|n| n.sg == word || n.pl == word)?;
    let plural = noun.pl == word;
    let pool: Vec<_> = NOUNS.iter().filter(|n| n.field != noun.field && n.field != Field::Abstract).collect();
    let pick = pool.choose(rng)?;
    Some(if plural { pick.pl.to_string() } else { pick.sg.to_string() })
}

fn substitute_verb(word: &str, rng: &mut Rng) -> Option<String> {
    let verb = VERBS.iter().find(|v| v.sg == word || v.pl == word || v.gerund == word)?;
    let pool: Vec<_> = VERBS.iter().filter(|v| v.sg != verb.sg).collect();
    let pick = pool.choose(rng)?;
    Some(if verb.sg == word {
        pick.sg.to_string()
    } else if verb.pl == word {
        pick.pl.to_string()
    } else {
        pick.gerund.to_string()
    })
}

/// Wernicke style: fluent but empty. Content words swapped into wrong
/// semantic fields or replaced by neologisms, and most utterances run on
/// into an extra jargon clause (press of speech).
fn wernicke_utterance(base: &[String], rng: &mut Rng) -> Vec<String> {
    let mut out: Vec<String> = base
        .iter()
        .map(|word| {
            if !is_content_word(word) || !rng.gen_bool(0.75) {
                return word.clone();
            }
            if rng.gen_bool(0.35) {
                return NEOLOGISMS.choose(rng).unwrap().to_string();
            }
            substitute_noun(word, rng)
                .or_else(|| substitute_verb(word, rng))
                .or_else(|| {
                    ADJECTIVES.contains(&word.as_str()).then(|| {
                        ADJECTIVES
                            .iter()
                            .filter(|a| **a != word)
                            .collect::<Vec<_>>()
                            .choose(rng)
                            .map(|a| a.to_string())
                            .unwrap()
                    })
                })
                .unwrap_or_else(|| word.clone())
        })
        .collect();
    // Every utterance carries at least one jargon marker: run on into an
    // extra clause, unconditionally when the word-level pass changed nothing.
    if rng.gen_bool(0.85) || out == base {
        let filler = ["and", "the"];
        out.extend(filler.iter().map(|w| w.to_string()));
        out.push(NEOLOGISMS.choose(rng).unwrap().to_string());
        let verb = VERBS.choose(rng).unwrap();
        out.push(verb.sg.to_string());
    }
    out
}

/// Builds both phenotype corpora from fresh grammar samples.
pub fn build_subtype_corpora(
    seed: u64,
    broca_count: usize,
    wernicke_count: usize,
) -> (SubtypeCorpus, SubtypeCorpus) {
    let mut rng = rng_from_seed(seed);
    let broca = (0..broca_count)
        .map(|_| {
            let base = sample_sentence(&mut rng).tokens;
            broca_utterance(&base, &mut rng).join(" ")
        })
        .collect();
    let wernicke = (0..wernicke_count)
        .map(|_| {
            let base = sample_sentence(&mut rng).tokens;
            wernicke_utterance(&base, &mut rng).join(" ")
        })
        .collect();
    (
        SubtypeCorpus { phenotype: Phenotype::Broca, utterances: broca, seed },
        SubtypeCorpus { phenotype: Phenotype::Wernicke, utterances: wernicke, seed },
    )
}
