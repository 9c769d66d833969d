//! Subtype style validation: a hashed n-gram softmax classifier separates
//! Broca-like, Wernicke-like and standard grammar text, and greedy
//! generations from a fine-tuned model are scored for style consistency.
//! The standard class anchors the scale: an untuned model's output should
//! mostly land there, so fine-tuning has headroom to raise consistency
//! toward either phenotype.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::data::{Phenotype, Vocab};
use crate::error::{Error, Result};
use crate::model::forward::UnitOverrideSet;
use crate::model::Model;
use crate::rng::rng_for;

const FEATURE_DIM: usize = 8192;
const TRAIN_ITERS: usize = 2500;
const TRAIN_LR: f64 = 4.0;
const L2: f64 = 1e-4;
const CLASSES: usize = 3;

/// Classifier target: the two phenotypes plus unimpaired grammar text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleLabel {
    Broca,
    Wernicke,
    Standard,
}

impl StyleLabel {
    fn index(self) -> usize {
        match self {
            StyleLabel::Broca => 0,
            StyleLabel::Wernicke => 1,
            StyleLabel::Standard => 2,
        }
    }

    fn from_index(i: usize) -> StyleLabel {
        [StyleLabel::Broca, StyleLabel::Wernicke, StyleLabel::Standard][i]
    }
}

impl From<Phenotype> for StyleLabel {
    fn from(p: Phenotype) -> StyleLabel {
        match p {
            Phenotype::Broca => StyleLabel::Broca,
            Phenotype::Wernicke => StyleLabel::Wernicke,
        }
    }
}

/// Softmax regression over hashed word-unigram, word-bigram and
/// character-trigram counts. Class order: Broca, Wernicke, Standard.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StyleClassifier {
    pub dim: usize,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub held_out_accuracy: f64,
    pub train_accuracy: f64,
    pub seed: u64,
}

fn fnv1a(bytes: impl Iterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// L2-normalized hashed count vector.
pub fn featurize(text: &str, dim: usize) -> Vec<f64> {
    let mut x = vec![0.0; dim];
    let words: Vec<&str> = text.split_whitespace().collect();
    for word in &words {
        let h = fnv1a("w\x1f".bytes().chain(word.bytes()));
        x[(h % dim as u64) as usize] += 1.0;
    }
    for pair in words.windows(2) {
        let h = fnv1a(
            "b\x1f".bytes().chain(pair[0].bytes()).chain("\x1f".bytes()).chain(pair[1].bytes()),
        );
        x[(h % dim as u64) as usize] += 1.0;
    }
    let chars: Vec<char> = text.chars().collect();
    for win in chars.windows(3) {
        let tri: String = win.iter().collect();
        let h = fnv1a("c\x1f".bytes().chain(tri.bytes()));
        x[(h % dim as u64) as usize] += 1.0;
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in x.iter_mut() {
            *v /= norm;
        }
    }
    x
}

fn softmax3(z: &[f64; CLASSES]) -> [f64; CLASSES] {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = [(z[0] - m).exp(), (z[1] - m).exp(), (z[2] - m).exp()];
    let s = e[0] + e[1] + e[2];
    [e[0] / s, e[1] / s, e[2] / s]
}

impl StyleClassifier {
    /// Class probabilities in order (Broca, Wernicke, Standard).
    pub fn predict(&self, text: &str) -> [f64; CLASSES] {
        let x = featurize(text, self.dim);
        let mut z = [0.0; CLASSES];
        for c in 0..CLASSES {
            z[c] = self.biases[c]
                + self.weights[c].iter().zip(&x).map(|(w, v)| w * v).sum::<f64>();
        }
        softmax3(&z)
    }

    /// Most probable label; ties resolve to the lowest class index.
    pub fn classify(&self, text: &str) -> StyleLabel {
        let p = self.predict(text);
        let mut best = 0;
        for c in 1..CLASSES {
            if p[c] > p[best] {
                best = c;
            }
        }
        StyleLabel::from_index(best)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::pipeline::atomic_write(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<StyleClassifier> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn split_class(texts: &[String], seed: u64, class: &str) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..texts.len()).collect();
    let mut rng = rng_for(seed, "classifier-split", class);
    order.shuffle(&mut rng);
    let held = (texts.len() / 5).max(1).min(texts.len().saturating_sub(1));
    let (eval, train) = order.split_at(held);
    (train.to_vec(), eval.to_vec())
}

/// Trains on an 80/20 split of each class (split driven by `seed`); the
/// optimization itself is deterministic full-batch gradient descent.
pub fn train_style_classifier(
    broca: &[String],
    wernicke: &[String],
    standard: &[String],
    seed: u64,
) -> Result<StyleClassifier> {
    if broca.is_empty() || wernicke.is_empty() || standard.is_empty() {
        return Err(Error::Config("style classifier needs all three classes represented".into()));
    }
    let classes: [(&[String], &str); CLASSES] =
        [(broca, "broca"), (wernicke, "wernicke"), (standard, "standard")];
    let mut splits = Vec::new();
    for (texts, tag) in classes {
        splits.push(split_class(texts, seed, tag));
    }

    // Sparse feature rows keep full-batch gradient descent cheap.
    let sparse = |text: &str| -> Vec<(usize, f64)> {
        featurize(text, FEATURE_DIM)
            .into_iter()
            .enumerate()
            .filter(|&(_, v)| v != 0.0)
            .collect()
    };
    let mut xs: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut ys: Vec<usize> = Vec::new();
    for (c, (texts, _)) in classes.iter().enumerate() {
        for &i in &splits[c].0 {
            xs.push(sparse(&texts[i]));
            ys.push(c);
        }
    }

    let n = xs.len() as f64;
    let mut w = vec![vec![0.0; FEATURE_DIM]; CLASSES];
    let mut b = vec![0.0; CLASSES];
    for _ in 0..TRAIN_ITERS {
        let mut gw = vec![vec![0.0; FEATURE_DIM]; CLASSES];
        let mut gb = vec![0.0; CLASSES];
        for (x, &y) in xs.iter().zip(&ys) {
            let mut z = [0.0; CLASSES];
            for c in 0..CLASSES {
                z[c] = b[c] + x.iter().map(|&(i, v)| w[c][i] * v).sum::<f64>();
            }
            let p = softmax3(&z);
            for c in 0..CLASSES {
                let err = p[c] - if c == y { 1.0 } else { 0.0 };
                gb[c] += err;
                for &(i, v) in x {
                    gw[c][i] += err * v;
                }
            }
        }
        for c in 0..CLASSES {
            b[c] -= TRAIN_LR * gb[c] / n;
            for (wi, g) in w[c].iter_mut().zip(&gw[c]) {
                *wi -= TRAIN_LR * (g / n + L2 * *wi);
            }
        }
    }

    let mut clf = StyleClassifier {
        dim: FEATURE_DIM,
        weights: w,
        biases: b,
        held_out_accuracy: 0.0,
        train_accuracy: 0.0,
        seed,
    };
    let score = |clf: &StyleClassifier, which: usize| -> f64 {
        let mut correct = 0usize;
        let mut total = 0usize;
        for (c, (texts, _)) in classes.iter().enumerate() {
            let idx = if which == 0 { &splits[c].0 } else { &splits[c].1 };
            for &i in idx {
                if clf.classify(&texts[i]).index() == c {
                    correct += 1;
                }
                total += 1;
            }
        }
        correct as f64 / total as f64
    };
    clf.train_accuracy = score(&clf, 0);
    clf.held_out_accuracy = score(&clf, 1);
    Ok(clf)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StyleOutcome {
    /// Fraction of generations classified as the expected phenotype.
    pub consistency: f64,
    /// Mean predicted probability of the expected class.
    pub mean_confidence: f64,
    /// Empty generations, each counted as inconsistent.
    pub empty_generations: usize,
    pub prompts: usize,
}

/// Greedy-generates a continuation for every prompt and classifies it.
pub fn style_consistency(
    model: &Model,
    vocab: &Vocab,
    prompts: &[Vec<usize>],
    classifier: &StyleClassifier,
    expected: Phenotype,
    max_new_tokens: usize,
) -> Result<StyleOutcome> {
    if prompts.len() < 20 {
        return Err(Error::Input(format!(
            "style consistency wants at least 20 prompts, got {}",
            prompts.len()
        )));
    }
    let target = StyleLabel::from(expected);
    let mut consistent = 0usize;
    let mut confidence = 0.0;
    let mut empty = 0usize;
    for prompt in prompts {
        let generated =
            model.generate(prompt, vocab.eos(), max_new_tokens, &UnitOverrideSet::none())?;
        if generated.is_empty() {
            empty += 1;
            continue;
        }
        let text = vocab.decode(&generated);
        confidence += classifier.predict(&text)[target.index()];
        if classifier.classify(&text) == target {
            consistent += 1;
        }
    }
    Ok(StyleOutcome {
        consistency: consistent as f64 / prompts.len() as f64,
        mean_confidence: confidence / prompts.len() as f64,
        empty_generations: empty,
        prompts: prompts.len(),
    })
}
