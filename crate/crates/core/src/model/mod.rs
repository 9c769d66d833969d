//! Matched toy decoder-only LMs: a dense-FFN variant and an MoE variant
//! behind one functional-unit interface. Units are experts (MoE) or
//! contiguous FFN neuron groups (dense); attention, embeddings and routers
//! belong to no unit.

pub mod forward;
pub mod train;

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::optim::ParamMap;
use crate::rng::{rng_for, uniform_open};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Dense,
    Moe,
}

impl ArchKind {
    pub fn name(self) -> &'static str {
        match self {
            ArchKind::Dense => "dense",
            ArchKind::Moe => "moe",
        }
    }
}

impl std::fmt::Display for ArchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Expert,
    NeuronGroup,
}

/// One lesionable functional unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
pub struct UnitId {
    pub layer: u16,
    pub index: u16,
    pub kind: UnitKind,
}

impl std::fmt::Display for UnitId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let k = match self.kind {
            UnitKind::Expert => "E",
            UnitKind::NeuronGroup => "G",
        };
        write!(f, "L{}{}{}", self.layer, k, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: ArchKind,
    pub vocab_size: usize,
    pub context_len: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    /// Dense FFN hidden size; for MoE the total hidden budget, split evenly
    /// across experts (expert hidden = ffn_hidden / experts).
    pub ffn_hidden: usize,
    /// Dense only: number of neuron groups per layer.
    pub neuron_groups: usize,
    /// MoE only: experts per layer.
    pub experts: usize,
    /// MoE only: active experts per token.
    pub active_experts: usize,
    pub seed: u64,
    /// Alternative ablation semantics: renormalize surviving gates after an
    /// expert override. Off by default (router left unchanged).
    #[serde(default)]
    pub renormalize_after_ablation: bool,
}

impl ModelConfig {
    pub fn dense_default(vocab_size: usize, seed: u64) -> Self {
        ModelConfig {
            arch: ArchKind::Dense,
            vocab_size,
            context_len: 64,
            width: 64,
            layers: 6,
            heads: 4,
            ffn_hidden: 512,
            neuron_groups: 16,
            experts: 0,
            active_experts: 0,
            seed,
            renormalize_after_ablation: false,
        }
    }

    pub fn moe_default(vocab_size: usize, seed: u64) -> Self {
        ModelConfig {
            arch: ArchKind::Moe,
            vocab_size,
            context_len: 64,
            width: 64,
            layers: 6,
            heads: 4,
            ffn_hidden: 512,
            neuron_groups: 0,
            experts: 16,
            active_experts: 4,
            seed,
            renormalize_after_ablation: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.vocab_size == 0 || self.context_len < 2 || self.width == 0 || self.layers == 0 {
            return fail(format!("degenerate model dimensions: {self:?}"));
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return fail(format!("heads {} must divide width {}", self.heads, self.width));
        }
        match self.arch {
            ArchKind::Dense => {
                if self.neuron_groups == 0 || self.ffn_hidden % self.neuron_groups != 0 {
                    return fail(format!(
                        "neuron groups {} must divide ffn hidden {}",
                        self.neuron_groups, self.ffn_hidden
                    ));
                }
            }
            ArchKind::Moe => {
                if self.experts < 2 || self.active_experts == 0 || self.active_experts >= self.experts {
                    return fail(format!(
                        "MoE wants 1 <= k < E, got k={} E={}",
                        self.active_experts, self.experts
                    ));
                }
                if self.ffn_hidden % self.experts != 0 {
                    return fail(format!(
                        "experts {} must divide ffn hidden {}",
                        self.experts, self.ffn_hidden
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn units_per_layer(&self) -> usize {
        match self.arch {
            ArchKind::Dense => self.neuron_groups,
            ArchKind::Moe => self.experts,
        }
    }

    pub fn unit_count(&self) -> usize {
        self.layers * self.units_per_layer()
    }

    pub fn unit_kind(&self) -> UnitKind {
        match self.arch {
            ArchKind::Dense => UnitKind::NeuronGroup,
            ArchKind::Moe => UnitKind::Expert,
        }
    }

    pub fn expert_hidden(&self) -> usize {
        self.ffn_hidden / self.experts
    }

    pub fn group_width(&self) -> usize {
        self.ffn_hidden / self.neuron_groups
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }
}

/// A contiguous rectangle of one named parameter tensor owned by a unit.
/// Weight pieces are re-initializable as stand-alone matrices with fan-in =
/// row span, fan-out = column span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitPiece {
    pub name: String,
    pub rows: Range<usize>,
    pub cols: Range<usize>,
    pub is_bias: bool,
}

impl UnitPiece {
    pub fn element_count(&self) -> usize {
        self.rows.len() * self.cols.len()
    }

    /// Flat element indices within the named tensor (row-major, `tensor_cols`
    /// columns).
    pub fn element_indices(&self, tensor_cols: usize) -> impl Iterator<Item = usize> + '_ {
        let cols = self.cols.clone();
        self.rows
            .clone()
            .flat_map(move |r| cols.clone().map(move |c| r * tensor_cols + c))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamMap,
    /// Units under a permanent zeroing lesion; persisted with the checkpoint.
    pub masked_units: BTreeSet<UnitId>,
}

fn xavier_tensor(rows: usize, cols: usize, rng: &mut crate::rng::Rng) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| uniform_open(rng, a)).collect();
    Tensor { shape: vec![rows, cols], data }
}

impl Model {
    /// Builds a freshly initialized model: Xavier-uniform weight matrices,
    /// zero biases, unit layer-norm gains, all streams derived from
    /// config.seed per parameter name.
    pub fn build(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let mut params: ParamMap = BTreeMap::new();
        let d = config.width;
        let weight = |name: String, rows: usize, cols: usize, params: &mut ParamMap| {
            let mut rng = rng_for(config.seed, "init", &name);
            params.insert(name, xavier_tensor(rows, cols, &mut rng));
        };
        let bias = |name: String, cols: usize, params: &mut ParamMap| {
            params.insert(name, Tensor::zeros(vec![1, cols]));
        };
        let ones = |name: String, cols: usize, params: &mut ParamMap| {
            params.insert(name, Tensor { shape: vec![1, cols], data: vec![1.0; cols] });
        };

        weight("embed".into(), config.vocab_size, d, &mut params);
        weight("pos_embed".into(), config.context_len, d, &mut params);
        weight("unembed".into(), d, config.vocab_size, &mut params);
        ones("final_ln.gain".into(), d, &mut params);
        bias("final_ln.bias".into(), d, &mut params);

        for l in 0..config.layers {
            let p = |s: &str| format!("layer{l:02}.{s}");
            ones(p("ln1.gain"), d, &mut params);
            bias(p("ln1.bias"), d, &mut params);
            ones(p("ln2.gain"), d, &mut params);
            bias(p("ln2.bias"), d, &mut params);
            for w in ["attn.wq", "attn.wk", "attn.wv", "attn.wo"] {
                weight(p(w), d, d, &mut params);
            }
            match config.arch {
                ArchKind::Dense => {
                    weight(p("ffn.w1"), d, config.ffn_hidden, &mut params);
                    bias(p("ffn.b1"), config.ffn_hidden, &mut params);
                    weight(p("ffn.w2"), config.ffn_hidden, d, &mut params);
                }
                ArchKind::Moe => {
                    weight(p("router.w"), d, config.experts, &mut params);
                    let h = config.expert_hidden();
                    for e in 0..config.experts {
                        let q = |s: &str| format!("layer{l:02}.expert{e:02}.{s}");
                        weight(q("w1"), d, h, &mut params);
                        bias(q("b1"), h, &mut params);
                        weight(q("w2"), h, d, &mut params);
                        bias(q("b2"), d, &mut params);
                    }
                }
            }
        }
        Ok(Model { config, params, masked_units: BTreeSet::new() })
    }

    /// Unit inventory in (layer, index) order.
    pub fn units(&self) -> Vec<UnitId> {
        let kind = self.config.unit_kind();
        (0..self.config.layers as u16)
            .flat_map(|layer| {
                (0..self.config.units_per_layer() as u16)
                    .map(move |index| UnitId { layer, index, kind })
            })
            .collect()
    }

    pub fn has_unit(&self, unit: UnitId) -> bool {
        unit.kind == self.config.unit_kind()
            && (unit.layer as usize) < self.config.layers
            && (unit.index as usize) < self.config.units_per_layer()
    }

    /// Parameter pieces owned by one unit. MoE experts own both weight
    /// matrices and both biases; dense groups own a column block of ffn.w1,
    /// the matching b1 slice and row block of ffn.w2.
    pub fn unit_parameters(&self, unit: UnitId) -> Result<Vec<UnitPiece>> {
        if !self.has_unit(unit) {
            return Err(Error::Lookup(format!("unknown unit {unit}")));
        }
        let l = unit.layer;
        let d = self.config.width;
        Ok(match self.config.arch {
            ArchKind::Moe => {
                let h = self.config.expert_hidden();
                let p = |s: &str| format!("layer{l:02}.expert{e:02}.{s}", e = unit.index);
                vec![
                    UnitPiece { name: p("w1"), rows: 0..d, cols: 0..h, is_bias: false },
                    UnitPiece { name: p("b1"), rows: 0..1, cols: 0..h, is_bias: true },
                    UnitPiece { name: p("w2"), rows: 0..h, cols: 0..d, is_bias: false },
                    UnitPiece { name: p("b2"), rows: 0..1, cols: 0..d, is_bias: true },
                ]
            }
            ArchKind::Dense => {
                let w = self.config.group_width();
                let span = (unit.index as usize * w)..((unit.index as usize + 1) * w);
                let p = |s: &str| format!("layer{l:02}.ffn.{s}");
                vec![
                    UnitPiece { name: p("w1"), rows: 0..d, cols: span.clone(), is_bias: false },
                    UnitPiece { name: p("b1"), rows: 0..1, cols: span.clone(), is_bias: true },
                    UnitPiece { name: p("w2"), rows: span, cols: 0..d, is_bias: false },
                ]
            }
        })
    }

    /// Per-tensor map from element index to unit ordinal (position in
    /// `units()`), or None for parameters outside any unit.
    pub fn unit_ownership(&self) -> BTreeMap<String, Vec<Option<u32>>> {
        let mut owners: BTreeMap<String, Vec<Option<u32>>> = self
            .params
            .iter()
            .map(|(name, t)| (name.clone(), vec![None; t.len()]))
            .collect();
        for (ordinal, unit) in self.units().into_iter().enumerate() {
            for piece in self.unit_parameters(unit).expect("inventory unit") {
                let cols = self.params[&piece.name].cols();
                for idx in piece.element_indices(cols) {
                    owners.get_mut(&piece.name).unwrap()[idx] = Some(ordinal as u32);
                }
            }
        }
        owners
    }

    /// SHA-256 over config and parameter bytes; stable across runs.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&self.config).expect("config json"));
        for (name, tensor) in &self.params {
            hasher.update(name.as_bytes());
            for v in &tensor.data {
                hasher.update(v.to_be_bytes());
            }
        }
        for unit in &self.masked_units {
            hasher.update(unit.to_string().as_bytes());
        }
        hex(&hasher.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: self.config.clone(),
            masked_units: self.masked_units.clone(),
            params: self.params.clone(),
        };
        let json = serde_json::to_string(&file)?;
        crate::pipeline::atomic_write(path, json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Model> {
        let text = std::fs::read_to_string(path)?;
        let file: Checkpoint = serde_json::from_str(&text)?;
        if file.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "checkpoint format {} unsupported (expected {CHECKPOINT_FORMAT_VERSION})",
                file.format_version
            )));
        }
        file.config.validate()?;
        Ok(Model { config: file.config, params: file.params, masked_units: file.masked_units })
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    config: ModelConfig,
    masked_units: BTreeSet<UnitId>,
    params: ParamMap,
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_inventories_match_at_comparable_scale() {
        let moe = Model::build(ModelConfig::moe_default(128, 1)).unwrap();
        let dense = Model::build(ModelConfig::dense_default(128, 1)).unwrap();
        assert_eq!(moe.units().len(), 96);
        assert_eq!(dense.units().len(), 96);
    }

    #[test]
    fn equal_seed_builds_are_identical() {
        let a = Model::build(ModelConfig::moe_default(128, 7)).unwrap();
        let b = Model::build(ModelConfig::moe_default(128, 7)).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = Model::build(ModelConfig::moe_default(128, 8)).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn moe_unit_has_two_matrices_and_two_biases() {
        let moe = Model::build(ModelConfig::moe_default(128, 1)).unwrap();
        let unit = UnitId { layer: 0, index: 0, kind: UnitKind::Expert };
        let pieces = moe.unit_parameters(unit).unwrap();
        assert_eq!(pieces.iter().filter(|p| !p.is_bias).count(), 2);
        assert_eq!(pieces.iter().filter(|p| p.is_bias).count(), 2);
    }

    #[test]
    fn dense_group_weight_entry_count() {
        let mut cfg = ModelConfig::dense_default(128, 1);
        cfg.ffn_hidden = 512;
        cfg.neuron_groups = 16;
        let dense = Model::build(cfg).unwrap();
        let unit = UnitId { layer: 2, index: 3, kind: UnitKind::NeuronGroup };
        let pieces = dense.unit_parameters(unit).unwrap();
        let weight_entries: usize =
            pieces.iter().filter(|p| !p.is_bias).map(|p| p.element_count()).sum();
        // 32-wide group at width 64: 32*64 + 64*32
        assert_eq!(weight_entries, 32 * 64 + 64 * 32);
    }

    #[test]
    fn ffn_parameters_are_partitioned_by_units() {
        for cfg in [ModelConfig::moe_default(64, 3), ModelConfig::dense_default(64, 3)] {
            let model = Model::build(cfg).unwrap();
            let owners = model.unit_ownership();
            for (name, map) in &owners {
                let is_ffn = name.contains(".ffn.") || name.contains(".expert");
                if is_ffn {
                    assert!(map.iter().all(|o| o.is_some()), "{name} not fully owned");
                } else {
                    assert!(map.iter().all(|o| o.is_none()), "{name} wrongly owned");
                }
            }
        }
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let model = Model::build(ModelConfig::moe_default(96, 5)).unwrap();
        let dir = std::env::temp_dir().join(format!("aphasim-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        model.save(&path).unwrap();
        let back = Model::load(&path).unwrap();
        assert_eq!(model.fingerprint(), back.fingerprint());
        assert_eq!(model.params, back.params);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ModelConfig::moe_default(64, 1);
        cfg.active_experts = cfg.experts;
        assert!(Model::build(cfg).is_err());
        let mut cfg = ModelConfig::dense_default(64, 1);
        cfg.neuron_groups = 7;
        assert!(Model::build(cfg).is_err());
    }
}
