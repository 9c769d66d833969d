//! Minimal-pair suites: eight phenomenon categories, each bad sentence a
//! phenomenon-specific corruption of its good sentence.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::vocab::{Field, Gender, Noun, NOUNS, VERBS};
use crate::rng::{rng_from_seed, Rng};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MinimalPair {
    pub good: String,
    pub bad: String,
    pub phenomenon: String,
}

/// Registered phenomenon set, fixed order.
pub const PHENOMENA: &[&str] = &[
    "agreement",
    "argument_structure",
    "binding",
    "npi_licensing",
    "quantifiers",
    "ellipsis",
    "filler_gap",
    "selectional",
];

/// Task groups used for the summary columns of the alignment heatmaps.
pub const SYNTACTIC_TASKS: &[&str] = &["agreement", "argument_structure", "ellipsis", "filler_gap"];
pub const SEMANTIC_TASKS: &[&str] = &["binding", "npi_licensing", "quantifiers", "selectional"];

fn animate(rng: &mut Rng) -> &'static Noun {
    let pool: Vec<&Noun> =
        NOUNS.iter().filter(|n| matches!(n.field, Field::Animal | Field::Person)).collect();
    *pool.choose(rng).unwrap()
}

fn intrans(rng: &mut Rng) -> &'static crate::data::vocab::Verb {
    let pool: Vec<_> = VERBS.iter().filter(|v| !v.transitive).collect();
    *pool.choose(rng).unwrap()
}

fn trans(rng: &mut Rng) -> &'static crate::data::vocab::Verb {
    let pool: Vec<_> = VERBS.iter().filter(|v| v.transitive).collect();
    *pool.choose(rng).unwrap()
}

fn object_of(verb: &crate::data::vocab::Verb, rng: &mut Rng) -> &'static Noun {
    if verb.wants_food {
        let pool: Vec<&Noun> = NOUNS.iter().filter(|n| n.field == Field::Food).collect();
        *pool.choose(rng).unwrap()
    } else {
        let pool: Vec<&Noun> = NOUNS.iter().filter(|n| n.field != Field::Abstract).collect();
        *pool.choose(rng).unwrap()
    }
}

fn make_pair(phenomenon: &str, rng: &mut Rng) -> MinimalPair {
    let (good, bad) = match phenomenon {
        "agreement" => {
            let n = animate(rng);
            let v = intrans(rng);
            let plural = rng.gen_bool(0.5);
            let noun = if plural { n.pl } else { n.sg };
            let (vg, vb) = if plural { (v.pl, v.sg) } else { (v.sg, v.pl) };
            (format!("the {noun} {vg}"), format!("the {noun} {vb}"))
        }
        "argument_structure" => {
            let s = animate(rng);
            let v = trans(rng);
            let o = object_of(v, rng);
            (
                format!("the {} {} the {}", s.sg, v.sg, o.sg),
                format!("the {} the {} {}", s.sg, o.sg, v.sg),
            )
        }
        "binding" => {
            let pool: Vec<&Noun> = NOUNS
                .iter()
                .filter(|n| n.field == Field::Person && n.gender != Gender::Neuter)
                .collect();
            let s = *pool.choose(rng).unwrap();
            let v = *["sees", "likes"].choose(rng).unwrap();
            let (refl_good, refl_bad) = match s.gender {
                Gender::Masculine => ("himself", "herself"),
                _ => ("herself", "himself"),
            };
            (format!("the {} {v} {refl_good}", s.sg), format!("the {} {v} {refl_bad}", s.sg))
        }
        "npi_licensing" => {
            let n = animate(rng);
            let v = intrans(rng);
            (format!("no {} ever {}", n.sg, v.sg), format!("the {} ever {}", n.sg, v.sg))
        }
        "quantifiers" => {
            let n = animate(rng);
            let v = intrans(rng);
            if rng.gen_bool(0.5) {
                (format!("every {} {}", n.sg, v.sg), format!("every {} {}", n.pl, v.pl))
            } else {
                (format!("all {} {}", n.pl, v.pl), format!("all {} {}", n.sg, v.sg))
            }
        }
        "ellipsis" => {
            let a = animate(rng);
            let b = animate(rng);
            let v = intrans(rng);
            (
                format!("the {} {} and the {} does too", a.sg, v.sg, b.sg),
                format!("the {} {} and the {} does {} too", a.sg, v.sg, b.sg, v.sg),
            )
        }
        "filler_gap" => {
            let s = animate(rng);
            let v = trans(rng);
            let o = object_of(v, rng);
            (
                format!("what does the {} {}", s.sg, v.pl),
                format!("what does the {} {} the {}", s.sg, v.pl, o.sg),
            )
        }
        "selectional" => {
            let s = animate(rng);
            let good_obj = {
                let pool: Vec<&Noun> = NOUNS.iter().filter(|n| n.field == Field::Food).collect();
                *pool.choose(rng).unwrap()
            };
            let bad_obj = {
                let pool: Vec<&Noun> = NOUNS
                    .iter()
                    .filter(|n| matches!(n.field, Field::Object | Field::Abstract))
                    .collect();
                *pool.choose(rng).unwrap()
            };
            (
                format!("the {} eats the {}", s.sg, good_obj.sg),
                format!("the {} eats the {}", s.sg, bad_obj.sg),
            )
        }
        other => unreachable!("unknown phenomenon {other}"),
    };
    MinimalPair { good, bad, phenomenon: phenomenon.to_string() }
}

/// Builds `per_count` pairs for each registered phenomenon, grouped in the
/// fixed phenomenon order. Deterministic per seed.
pub fn build_minimal_pairs(seed: u64, per_count: usize) -> Vec<(String, Vec<MinimalPair>)> {
    let mut out = Vec::new();
    for (pi, &ph) in PHENOMENA.iter().enumerate() {
        let mut rng = rng_from_seed(seed.wrapping_add(pi as u64));
        let pairs = (0..per_count).map(|_| make_pair(ph, &mut rng)).collect();
        out.push((ph.to_string(), pairs));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::vocab::Vocab;

    #[test]
    fn eight_categories_and_deterministic() {
        let a = build_minimal_pairs(5, 10);
        let b = build_minimal_pairs(5, 10);
        assert_eq!(a.len(), 8);
        assert_eq!(a, b);
    }

    #[test]
    fn corrupted_sentence_always_differs_and_tokenizes() {
        let vocab = Vocab::build();
        for (_, pairs) in build_minimal_pairs(5, 100) {
            for p in pairs {
                assert_ne!(p.good, p.bad);
                vocab.encode(&p.good).unwrap();
                vocab.encode(&p.bad).unwrap();
            }
        }
    }

    #[test]
    fn agreement_pair_shape() {
        let pairs = &build_minimal_pairs(1, 50)[0].1;
        for p in pairs {
            let g: Vec<&str> = p.good.split(' ').collect();
            let b: Vec<&str> = p.bad.split(' ').collect();
            assert_eq!(g.len(), b.len());
            // only the verb differs
            assert_eq!(g[..g.len() - 1], b[..b.len() - 1]);
            assert_ne!(g[g.len() - 1], b[b.len() - 1]);
        }
    }
}
