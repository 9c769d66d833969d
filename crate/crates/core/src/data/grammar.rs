//! Probabilistic context-free grammar over the closed lexicon, plus the
//! task-formatted sequences (repetition, naming, story) that give the toy LM
//! the behaviors the clinical battery probes.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::data::vocab::{
    Field, Gender, Noun, Verb, ADJECTIVES, NAMING_TASK, NOUNS, REPEAT_TASK, SEP, STORY_TASK, VERBS,
};
use crate::rng::{rng_from_seed, Rng};

/// Sentence templates the grammar can emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Template {
    IntransDecl,
    TransDecl,
    Progressive,
    Reflexive,
    Npi,
    Quantifier,
    EllipsisCoord,
    WhQuestion,
}

pub const TEMPLATES: &[Template] = &[
    Template::IntransDecl,
    Template::TransDecl,
    Template::Progressive,
    Template::Reflexive,
    Template::Npi,
    Template::Quantifier,
    Template::EllipsisCoord,
    Template::WhQuestion,
];

fn nouns_in(field: Field) -> Vec<&'static Noun> {
    NOUNS.iter().filter(|n| n.field == field).collect()
}

fn animate_nouns() -> Vec<&'static Noun> {
    NOUNS.iter().filter(|n| matches!(n.field, Field::Animal | Field::Person)).collect()
}

fn concrete_nouns() -> Vec<&'static Noun> {
    NOUNS.iter().filter(|n| n.field != Field::Abstract).collect()
}

fn intrans_verbs() -> Vec<&'static Verb> {
    VERBS.iter().filter(|v| !v.transitive).collect()
}

fn trans_verbs() -> Vec<&'static Verb> {
    VERBS.iter().filter(|v| v.transitive).collect()
}

/// Object noun compatible with the verb's selectional class.
fn object_for(verb: &Verb, rng: &mut Rng) -> &'static Noun {
    if verb.wants_food {
        *nouns_in(Field::Food).choose(rng).unwrap()
    } else {
        *concrete_nouns().choose(rng).unwrap()
    }
}

fn noun_phrase(noun: &Noun, plural: bool, with_adj: bool, rng: &mut Rng) -> Vec<String> {
    let det = if plural {
        ["the", "all", "some"].choose(rng).unwrap()
    } else {
        ["the", "a", "some"].choose(rng).unwrap()
    };
    let mut out = vec![det.to_string()];
    if with_adj {
        out.push(ADJECTIVES.choose(rng).unwrap().to_string());
    }
    out.push(if plural { noun.pl.to_string() } else { noun.sg.to_string() });
    out
}

/// One grammatical sentence plus enough structure for corruption rules.
#[derive(Debug, Clone)]
pub struct GenSentence {
    pub template: Template,
    pub tokens: Vec<String>,
}

pub fn generate(template: Template, rng: &mut Rng) -> GenSentence {
    let tokens = match template {
        Template::IntransDecl => {
            let noun = *animate_nouns().choose(rng).unwrap();
            let plural = rng.gen_bool(0.5);
            let verb = *intrans_verbs().choose(rng).unwrap();
            let mut t = noun_phrase(noun, plural, rng.gen_bool(0.3), rng);
            t.push(if plural { verb.pl } else { verb.sg }.to_string());
            t
        }
        Template::TransDecl => {
            let subj = *animate_nouns().choose(rng).unwrap();
            let plural = rng.gen_bool(0.5);
            let verb = *trans_verbs().choose(rng).unwrap();
            let obj = object_for(verb, rng);
            let mut t = noun_phrase(subj, plural, rng.gen_bool(0.2), rng);
            t.push(if plural { verb.pl } else { verb.sg }.to_string());
            t.push("the".to_string());
            t.push(obj.sg.to_string());
            t
        }
        Template::Progressive => {
            let subj = *animate_nouns().choose(rng).unwrap();
            let plural = rng.gen_bool(0.4);
            let verb = VERBS.choose(rng).unwrap();
            let mut t = vec!["the".to_string()];
            t.push(if plural { subj.pl } else { subj.sg }.to_string());
            t.push(if plural { "are" } else { "is" }.to_string());
            t.push(verb.gerund.to_string());
            if verb.transitive {
                let obj = object_for(verb, rng);
                t.push("the".to_string());
                t.push(obj.sg.to_string());
            }
            t
        }
        Template::Reflexive => {
            let people: Vec<&Noun> = NOUNS
                .iter()
                .filter(|n| n.field == Field::Person && n.gender != Gender::Neuter)
                .collect();
            let subj = *people.choose(rng).unwrap();
            let verb = *["sees", "likes"].choose(rng).unwrap();
            let reflexive = match subj.gender {
                Gender::Masculine => "himself",
                Gender::Feminine => "herself",
                Gender::Neuter => "itself",
            };
            vec!["the".into(), subj.sg.into(), verb.into(), reflexive.into()]
        }
        Template::Npi => {
            let noun = *animate_nouns().choose(rng).unwrap();
            let plural = rng.gen_bool(0.5);
            let verb = *intrans_verbs().choose(rng).unwrap();
            vec![
                "no".into(),
                if plural { noun.pl } else { noun.sg }.into(),
                "ever".into(),
                if plural { verb.pl } else { verb.sg }.into(),
            ]
        }
        Template::Quantifier => {
            let noun = *animate_nouns().choose(rng).unwrap();
            let verb = *intrans_verbs().choose(rng).unwrap();
            if rng.gen_bool(0.5) {
                vec!["every".into(), noun.sg.into(), verb.sg.into()]
            } else {
                vec!["all".into(), noun.pl.into(), verb.pl.into()]
            }
        }
        Template::EllipsisCoord => {
            let a = *animate_nouns().choose(rng).unwrap();
            let b = *animate_nouns().choose(rng).unwrap();
            let verb = *intrans_verbs().choose(rng).unwrap();
            vec![
                "the".into(),
                a.sg.into(),
                verb.sg.into(),
                "and".into(),
                "the".into(),
                b.sg.into(),
                "does".into(),
                "too".into(),
            ]
        }
        Template::WhQuestion => {
            if rng.gen_bool(0.5) {
                let subj = *animate_nouns().choose(rng).unwrap();
                let verb = *trans_verbs().choose(rng).unwrap();
                vec!["what".into(), "does".into(), "the".into(), subj.sg.into(), verb.pl.into()]
            } else {
                let verb = *intrans_verbs().choose(rng).unwrap();
                vec!["who".into(), verb.sg.into()]
            }
        }
    };
    GenSentence { template, tokens }
}

fn sample_template(rng: &mut Rng) -> Template {
    // Declaratives dominate; marked constructions stay frequent enough to learn.
    let weights: &[(Template, u32)] = &[
        (Template::IntransDecl, 22),
        (Template::TransDecl, 22),
        (Template::Progressive, 16),
        (Template::Reflexive, 8),
        (Template::Npi, 8),
        (Template::Quantifier, 8),
        (Template::EllipsisCoord, 8),
        (Template::WhQuestion, 8),
    ];
    let total: u32 = weights.iter().map(|(_, w)| w).sum();
    let mut pick = rng.gen_range(0..total);
    for &(t, w) in weights {
        if pick < w {
            return t;
        }
        pick -= w;
    }
    unreachable!()
}

pub fn sample_sentence(rng: &mut Rng) -> GenSentence {
    let t = sample_template(rng);
    generate(t, rng)
}

/// Base pre-training corpus: `count` grammatical sentences, one per line.
pub fn build_grammar_corpus(seed: u64, count: usize) -> Vec<String> {
    let mut rng = rng_from_seed(seed);
    (0..count).map(|_| sample_sentence(&mut rng).tokens.join(" ")).collect()
}

/// Distinguishing adjective for a noun: position within its semantic field.
pub fn naming_adjective(noun: &Noun) -> &'static str {
    let idx = NOUNS
        .iter()
        .filter(|n| n.field == noun.field)
        .position(|n| n.sg == noun.sg)
        .unwrap();
    ADJECTIVES[idx]
}

/// "<name> animal big <sep> dog"
pub fn naming_line(noun: &Noun) -> String {
    format!("{NAMING_TASK} {} {} {SEP} {}", noun.field.category_word(), naming_adjective(noun), noun.sg)
}

/// "<rep> the dog runs <sep> the dog runs"
pub fn repeat_line(rng: &mut Rng) -> String {
    let s = sample_sentence(rng).tokens.join(" ");
    format!("{REPEAT_TASK} {s} {SEP} {s}")
}

/// "<story> dog <sep>" followed by on-topic sentences about the noun.
pub fn story_line(rng: &mut Rng) -> String {
    let noun = *concrete_nouns().choose(rng).unwrap();
    let mut parts = vec![format!("{STORY_TASK} {} {SEP}", noun.sg)];
    let n_sent = rng.gen_range(1..=2);
    for _ in 0..n_sent {
        let verb = *intrans_verbs().choose(rng).unwrap();
        let adj = naming_adjective(noun);
        parts.push(format!("the {adj} {} {}", noun.sg, verb.sg));
    }
    parts.join(" ")
}

/// Task-formatted corpus mixed into pre-training so the clinical battery has
/// behaviors to probe: repetition, naming and story prompts.
pub fn build_task_corpus(seed: u64, repeat: usize, naming_rounds: usize, story: usize) -> Vec<String> {
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::new();
    for _ in 0..repeat {
        out.push(repeat_line(&mut rng));
    }
    for _ in 0..naming_rounds {
        for noun in NOUNS.iter().filter(|n| n.field != Field::Abstract) {
            out.push(naming_line(noun));
        }
    }
    for _ in 0..story {
        out.push(story_line(&mut rng));
    }
    out
}
