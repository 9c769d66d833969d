//! Run configuration: a single TOML file controls every stage. All
//! downstream randomness is derived from `seed` via the documented child
//! seed rule (SHA-256 over seed, stage name and entity id).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ArchKind, ModelConfig};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; every stage derives child seeds from it.
    pub seed: u64,
    pub data: DataSection,
    pub model: ModelSections,
    pub train: TrainSection,
    pub finetune: FinetuneSection,
    pub probe: ProbeSection,
    pub align: AlignSection,
    pub lesion: LesionSection,
    pub clinic: ClinicSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Plain grammatical sentences in the pre-training corpus.
    pub grammar_sentences: usize,
    /// Repetition-task lines mixed into pre-training.
    pub task_repeat: usize,
    /// Full passes over the nameable lexicon mixed into pre-training.
    pub task_naming_rounds: usize,
    /// Story-task lines mixed into pre-training.
    pub task_story: usize,
    pub broca_utterances: usize,
    pub wernicke_utterances: usize,
    pub pairs_per_phenomenon: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            grammar_sentences: 1000,
            task_repeat: 400,
            task_naming_rounds: 10,
            task_story: 300,
            broca_utterances: 300,
            wernicke_utterances: 300,
            pairs_per_phenomenon: 8,
        }
    }
}

/// Architecture dimensions; vocabulary size and seed are filled in by the
/// train stage.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub context_len: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub neuron_groups: usize,
    pub experts: usize,
    pub active_experts: usize,
    pub renormalize_after_ablation: bool,
}

impl ModelSection {
    fn from_config(cfg: &ModelConfig) -> Self {
        ModelSection {
            context_len: cfg.context_len,
            width: cfg.width,
            layers: cfg.layers,
            heads: cfg.heads,
            ffn_hidden: cfg.ffn_hidden,
            neuron_groups: cfg.neuron_groups,
            experts: cfg.experts,
            active_experts: cfg.active_experts,
            renormalize_after_ablation: cfg.renormalize_after_ablation,
        }
    }

    pub fn to_model_config(&self, arch: ArchKind, vocab_size: usize, seed: u64) -> ModelConfig {
        let mut cfg = match arch {
            ArchKind::Dense => ModelConfig::dense_default(vocab_size, seed),
            ArchKind::Moe => ModelConfig::moe_default(vocab_size, seed),
        };
        cfg.context_len = self.context_len;
        cfg.width = self.width;
        cfg.layers = self.layers;
        cfg.heads = self.heads;
        cfg.ffn_hidden = self.ffn_hidden;
        cfg.neuron_groups = self.neuron_groups;
        cfg.experts = self.experts;
        cfg.active_experts = self.active_experts;
        cfg.renormalize_after_ablation = self.renormalize_after_ablation;
        cfg
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSections {
    pub dense: ModelSection,
    pub moe: ModelSection,
}

impl Default for ModelSections {
    fn default() -> Self {
        ModelSections {
            dense: ModelSection::from_config(&ModelConfig::dense_default(1, 0)),
            moe: ModelSection::from_config(&ModelConfig::moe_default(1, 0)),
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection::from_config(&ModelConfig::dense_default(1, 0))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection { epochs: 3, batch_size: 8, lr: 2e-3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Independent fine-tuning replicas per (architecture, phenotype).
    pub seeds: usize,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        FinetuneSection { epochs: 1, batch_size: 8, lr: 2e-3, seeds: 5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AlignSection {
    /// Top-p% selection thresholds for the stability sweep, in percent.
    pub thresholds: Vec<f64>,
    /// Threshold used for the persisted rank-percentile matrix, in percent.
    pub matrix_percent: f64,
}

impl Default for AlignSection {
    fn default() -> Self {
        AlignSection {
            thresholds: crate::align::DEFAULT_THRESHOLDS.to_vec(),
            matrix_percent: crate::align::REFERENCE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LesionSection {
    /// Lesion budgets in units; evaluated against the intact budget 0.
    pub budgets: Vec<usize>,
    pub schemes: Vec<crate::lesion::LesionScheme>,
    /// Replicas for any condition with residual randomness (random target
    /// draws, re-initialization draws).
    pub seeds: usize,
}

impl Default for LesionSection {
    fn default() -> Self {
        LesionSection {
            budgets: vec![1, 2, 4, 8, 16],
            schemes: vec![
                crate::lesion::LesionScheme::Zeroing,
                crate::lesion::LesionScheme::Xavier,
            ],
            seeds: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ClinicSection {
    /// Optional path to a pre-built item bank JSON; the default bank is
    /// generated from the run seed.
    pub item_bank_path: Option<String>,
    /// Items generated per subtest for the default bank.
    pub items_per_subtest: usize,
    /// Story prompts used for the style-consistency comparison.
    pub style_prompts: usize,
    pub style_max_new_tokens: usize,
}

impl Default for ClinicSection {
    fn default() -> Self {
        ClinicSection {
            item_bank_path: None,
            items_per_subtest: 20,
            style_prompts: 24,
            style_max_new_tokens: 24,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 11,
            data: DataSection::default(),
            model: ModelSections::default(),
            train: TrainSection::default(),
            finetune: FinetuneSection::default(),
            probe: ProbeSection::default(),
            align: AlignSection::default(),
            lesion: LesionSection::default(),
            clinic: ClinicSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("config encode: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.into()));
        if self.train.epochs == 0 || self.train.batch_size == 0 || self.train.lr <= 0.0 {
            return fail("train section needs positive epochs, batch size and learning rate");
        }
        if self.finetune.epochs == 0 || self.finetune.batch_size == 0 || self.finetune.lr <= 0.0 {
            return fail("finetune section needs positive epochs, batch size and learning rate");
        }
        if self.finetune.seeds == 0 || self.lesion.seeds == 0 {
            return fail("seed replica counts must be positive");
        }
        if self.data.grammar_sentences == 0 || self.data.pairs_per_phenomenon == 0 {
            return fail("data section needs a non-empty corpus and minimal pairs");
        }
        if self.data.broca_utterances == 0 || self.data.wernicke_utterances == 0 {
            return fail("both phenotype corpora need utterances");
        }
        if self.lesion.budgets.is_empty()
            || self.lesion.budgets.windows(2).any(|w| w[0] >= w[1])
            || self.lesion.budgets[0] == 0
        {
            return fail("lesion budgets must be positive and strictly increasing");
        }
        if self.lesion.schemes.is_empty() {
            return fail("at least one lesion scheme required");
        }
        if self.align.thresholds.is_empty()
            || self.align.thresholds.windows(2).any(|w| w[0] >= w[1])
        {
            return fail("alignment thresholds must be sorted and distinct");
        }
        if !(0.0..=100.0).contains(&self.align.matrix_percent) || self.align.matrix_percent == 0.0
        {
            return fail("matrix percent must lie in (0, 100]");
        }
        if self.clinic.style_prompts < 20 || self.clinic.style_max_new_tokens == 0 {
            return fail("clinic section needs >= 20 style prompts and a generation budget");
        }
        if self.clinic.items_per_subtest == 0 {
            return fail("items per subtest must be positive");
        }
        // Dimension checks are delegated to the model configs they produce.
        for arch in [ArchKind::Dense, ArchKind::Moe] {
            self.model_config(arch, 64).validate()?;
        }
        Ok(())
    }

    pub fn model_config(&self, arch: ArchKind, vocab_size: usize) -> ModelConfig {
        let section = match arch {
            ArchKind::Dense => &self.model.dense,
            ArchKind::Moe => &self.model.moe,
        };
        let seed = crate::rng::child_seed(self.seed, "model-init", arch.name());
        section.to_model_config(arch, vocab_size, seed)
    }

    /// Content fingerprint over the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        crate::model::hex(&Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.fingerprint(), back.fingerprint());
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg = RunConfig::from_toml("seed = 99\n[train]\nepochs = 1\n").unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.train.epochs, 1);
        assert_eq!(cfg.train.batch_size, RunConfig::default().train.batch_size);
        assert_ne!(cfg.fingerprint(), RunConfig::default().fingerprint());
    }

    #[test]
    fn bad_configs_are_config_errors() {
        for text in [
            "unknown_key = 1",
            "[train]\nlr = 0.0",
            "[lesion]\nbudgets = [4, 2]",
            "[align]\nthresholds = []",
            "[model.dense]\nwidth = 65",
        ] {
            let err = RunConfig::from_toml(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text} -> {err}");
        }
    }

    #[test]
    fn per_arch_model_seeds_differ() {
        let cfg = RunConfig::default();
        let d = cfg.model_config(ArchKind::Dense, 64);
        let m = cfg.model_config(ArchKind::Moe, 64);
        assert_ne!(d.seed, m.seed);
        assert_eq!(d.ffn_hidden, m.ffn_hidden);
    }
}
