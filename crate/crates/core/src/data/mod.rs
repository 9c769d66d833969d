//! Synthetic desk-scale corpora: base grammar text, minimal-pair suites,
//! phenotype corpora and the clinical item bank. All generators are pure
//! functions of (seed, parameters).

pub mod clinical;
pub mod grammar;
pub mod pairs;
pub mod subtype;
pub mod vocab;

pub use clinical::{build_clinical_items, ClinicalItem, ItemBank, Rubric, Subtest, SUBTESTS};
pub use grammar::{build_grammar_corpus, build_task_corpus};
pub use pairs::{build_minimal_pairs, MinimalPair, PHENOMENA, SEMANTIC_TASKS, SYNTACTIC_TASKS};
pub use subtype::{build_subtype_corpora, Phenotype, SubtypeCorpus};
pub use vocab::Vocab;
