//! Closed word-level lexicon and tokenizer.
//!
//! Whitespace tokenization over a fixed vocabulary keeps minimal pairs free
//! of subword confounds: one linguistic word is always one token.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const SEP: &str = "<sep>";
pub const REPEAT_TASK: &str = "<rep>";
pub const NAMING_TASK: &str = "<name>";
pub const STORY_TASK: &str = "<story>";

pub const NEOLOGISMS: &[&str] = &["blick", "dax", "florp", "gorp", "wug", "zorp"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Field {
    Animal,
    Person,
    Food,
    Object,
    Abstract,
}

impl Field {
    /// Lexicon word naming the field, used in naming clues and story keywords.
    pub fn category_word(self) -> &'static str {
        match self {
            Field::Animal => "animal",
            Field::Person => "person",
            Field::Food => "food",
            Field::Object => "thing",
            Field::Abstract => "idea",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gender {
    Masculine,
    Feminine,
    Neuter,
}

#[derive(Debug, Clone, Copy)]
pub struct Noun {
    pub sg: &'static str,
    pub pl: &'static str,
    pub field: Field,
    pub gender: Gender,
}

#[derive(Debug, Clone, Copy)]
pub struct Verb {
    /// third person singular form
    pub sg: &'static str,
    /// plural / base form
    pub pl: &'static str,
    pub gerund: &'static str,
    pub transitive: bool,
    /// transitive verbs that select food-class objects
    pub wants_food: bool,
}

pub const NOUNS: &[Noun] = &[
    Noun { sg: "dog", pl: "dogs", field: Field::Animal, gender: Gender::Neuter },
    Noun { sg: "cat", pl: "cats", field: Field::Animal, gender: Gender::Neuter },
    Noun { sg: "bird", pl: "birds", field: Field::Animal, gender: Gender::Neuter },
    Noun { sg: "horse", pl: "horses", field: Field::Animal, gender: Gender::Neuter },
    Noun { sg: "cow", pl: "cows", field: Field::Animal, gender: Gender::Neuter },
    Noun { sg: "boy", pl: "boys", field: Field::Person, gender: Gender::Masculine },
    Noun { sg: "girl", pl: "girls", field: Field::Person, gender: Gender::Feminine },
    Noun { sg: "man", pl: "men", field: Field::Person, gender: Gender::Masculine },
    Noun { sg: "woman", pl: "women", field: Field::Person, gender: Gender::Feminine },
    Noun { sg: "teacher", pl: "teachers", field: Field::Person, gender: Gender::Neuter },
    Noun { sg: "apple", pl: "apples", field: Field::Food, gender: Gender::Neuter },
    Noun { sg: "cake", pl: "cakes", field: Field::Food, gender: Gender::Neuter },
    Noun { sg: "pear", pl: "pears", field: Field::Food, gender: Gender::Neuter },
    Noun { sg: "melon", pl: "melons", field: Field::Food, gender: Gender::Neuter },
    Noun { sg: "bean", pl: "beans", field: Field::Food, gender: Gender::Neuter },
    Noun { sg: "chair", pl: "chairs", field: Field::Object, gender: Gender::Neuter },
    Noun { sg: "table", pl: "tables", field: Field::Object, gender: Gender::Neuter },
    Noun { sg: "book", pl: "books", field: Field::Object, gender: Gender::Neuter },
    Noun { sg: "ball", pl: "balls", field: Field::Object, gender: Gender::Neuter },
    Noun { sg: "rock", pl: "rocks", field: Field::Object, gender: Gender::Neuter },
    Noun { sg: "idea", pl: "ideas", field: Field::Abstract, gender: Gender::Neuter },
    Noun { sg: "dream", pl: "dreams", field: Field::Abstract, gender: Gender::Neuter },
];

pub const VERBS: &[Verb] = &[
    Verb { sg: "runs", pl: "run", gerund: "running", transitive: false, wants_food: false },
    Verb { sg: "sleeps", pl: "sleep", gerund: "sleeping", transitive: false, wants_food: false },
    Verb { sg: "jumps", pl: "jump", gerund: "jumping", transitive: false, wants_food: false },
    Verb { sg: "sings", pl: "sing", gerund: "singing", transitive: false, wants_food: false },
    Verb { sg: "falls", pl: "fall", gerund: "falling", transitive: false, wants_food: false },
    Verb { sg: "eats", pl: "eat", gerund: "eating", transitive: true, wants_food: true },
    Verb { sg: "sees", pl: "see", gerund: "seeing", transitive: true, wants_food: false },
    Verb { sg: "likes", pl: "like", gerund: "liking", transitive: true, wants_food: false },
    Verb { sg: "finds", pl: "find", gerund: "finding", transitive: true, wants_food: false },
    Verb { sg: "carries", pl: "carry", gerund: "carrying", transitive: true, wants_food: false },
];

pub const ADJECTIVES: &[&str] = &["big", "small", "red", "old", "happy", "young", "green", "little"];

pub const DETERMINERS_SG: &[&str] = &["the", "a", "every", "no", "some"];
pub const DETERMINERS_PL: &[&str] = &["the", "all", "no", "some"];

pub const FUNCTION_WORDS: &[&str] = &[
    "the", "a", "every", "all", "no", "some", "is", "are", "was", "were", "does", "do", "did",
    "not", "and", "too", "that", "what", "who", "ever", "never", "also", "then", "he", "she",
    "they", "it", "himself", "herself", "themselves", "itself",
];

const CATEGORY_WORDS: &[&str] = &["animal", "person", "food", "thing"];

/// Closed vocabulary with stable word ↔ id mapping.
#[derive(Debug, Clone)]
pub struct Vocab {
    words: Vec<String>,
    ids: BTreeMap<String, usize>,
}

impl Vocab {
    /// The one lexicon of the laboratory. Construction order is fixed:
    /// specials first, then the sorted word list, then neologisms.
    pub fn build() -> Vocab {
        let mut words: Vec<String> =
            vec![BOS, EOS, SEP, REPEAT_TASK, NAMING_TASK, STORY_TASK].into_iter().map(String::from).collect();
        let mut rest: Vec<String> = Vec::new();
        for n in NOUNS {
            rest.push(n.sg.into());
            rest.push(n.pl.into());
        }
        for v in VERBS {
            rest.push(v.sg.into());
            rest.push(v.pl.into());
            rest.push(v.gerund.into());
        }
        rest.extend(ADJECTIVES.iter().map(|s| s.to_string()));
        rest.extend(FUNCTION_WORDS.iter().map(|s| s.to_string()));
        rest.extend(CATEGORY_WORDS.iter().map(|s| s.to_string()));
        rest.sort();
        rest.dedup();
        words.extend(rest);
        words.extend(NEOLOGISMS.iter().map(|s| s.to_string()));
        let ids = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab { words, ids }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> Result<usize> {
        self.ids
            .get(word)
            .copied()
            .ok_or_else(|| Error::Input(format!("word `{word}` not in lexicon")))
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.word(i)).collect::<Vec<_>>().join(" ")
    }

    pub fn bos(&self) -> usize {
        self.ids[BOS]
    }

    pub fn eos(&self) -> usize {
        self.ids[EOS]
    }

    pub fn sep(&self) -> usize {
        self.ids[SEP]
    }

    pub fn contains(&self, word: &str) -> bool {
        self.ids.contains_key(word)
    }
}

pub fn is_function_word(word: &str) -> bool {
    FUNCTION_WORDS.contains(&word)
}

pub fn is_neologism(word: &str) -> bool {
    NEOLOGISMS.contains(&word)
}

/// Content words are everything in the open classes: nouns, verbs,
/// adjectives, category words.
pub fn is_content_word(word: &str) -> bool {
    !is_function_word(word) && !is_neologism(word) && !word.starts_with('<')
}
