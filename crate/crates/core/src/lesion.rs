//! Permanent lesions: activation-zeroing masks and Xavier re-initialization
//! of unit parameters, plus progressive (ranking-prefix) and size-matched
//! random lesion plans.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, UnitId};
use crate::rng::{rng_for, uniform_open};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LesionScheme {
    Zeroing,
    Xavier,
    RandomZeroing,
    RandomXavier,
}

impl LesionScheme {
    pub fn name(self) -> &'static str {
        match self {
            LesionScheme::Zeroing => "zeroing",
            LesionScheme::Xavier => "xavier",
            LesionScheme::RandomZeroing => "random-zeroing",
            LesionScheme::RandomXavier => "random-xavier",
        }
    }

    pub fn is_random(self) -> bool {
        matches!(self, LesionScheme::RandomZeroing | LesionScheme::RandomXavier)
    }

    pub fn reinitializes(self) -> bool {
        matches!(self, LesionScheme::Xavier | LesionScheme::RandomXavier)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Budget {
    /// Percentage of the inventory; resolves to max(1, ceil(p/100 * U)).
    Fraction(f64),
    Count(usize),
}

impl Budget {
    pub fn resolve(self, inventory_size: usize) -> Result<usize> {
        let count = match self {
            Budget::Fraction(p) => {
                if !(p > 0.0 && p <= 100.0) {
                    return Err(Error::Input(format!("lesion fraction {p}% outside (0, 100]")));
                }
                ((p / 100.0 * inventory_size as f64).ceil() as usize).max(1)
            }
            Budget::Count(c) => c,
        };
        if count > inventory_size {
            return Err(Error::Input(format!(
                "lesion budget {count} exceeds inventory of {inventory_size}"
            )));
        }
        Ok(count)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LesionPlan {
    pub scheme: LesionScheme,
    pub targets: Vec<UnitId>,
    pub budget: Budget,
    pub seed: u64,
    /// Fingerprint of the ranking (or inventory) the targets came from.
    pub source_fingerprint: String,
}

impl LesionPlan {
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::pipeline::atomic_write(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<LesionPlan> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn ranking_fingerprint(units: &[UnitId]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for u in units {
        h.update(u.to_string().as_bytes());
        h.update([0x1f]);
    }
    crate::model::hex(&h.finalize())
}

/// Prefix plans over a phenotype ranking: plan i's targets are the first
/// k_i ranked units, so successive plans are nested.
pub fn make_progressive_plans(
    ranking: &[(UnitId, f64)],
    budgets: &[Budget],
    scheme: LesionScheme,
    seed: u64,
) -> Result<Vec<LesionPlan>> {
    if budgets.is_empty() {
        return Err(Error::Input("no lesion budgets given".into()));
    }
    let counts: Vec<usize> =
        budgets.iter().map(|b| b.resolve(ranking.len())).collect::<Result<_>>()?;
    if counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Input(format!("budgets must strictly increase, resolved to {counts:?}")));
    }
    let order: Vec<UnitId> = ranking.iter().map(|&(u, _)| u).collect();
    let fingerprint = ranking_fingerprint(&order);
    Ok(counts
        .iter()
        .zip(budgets)
        .map(|(&count, &budget)| LesionPlan {
            scheme,
            targets: order[..count].to_vec(),
            budget,
            seed,
            source_fingerprint: fingerprint.clone(),
        })
        .collect())
}

/// Uniform sample without replacement from the inventory: the first `count`
/// units of a shuffle keyed on the seed alone. Plans at increasing budgets
/// are therefore nested for a fixed seed, so a seed's random dose-response
/// curve tracks one accumulating injury rather than unrelated draws.
pub fn make_random_plan(
    inventory: &[UnitId],
    budget: Budget,
    scheme: LesionScheme,
    seed: u64,
) -> Result<LesionPlan> {
    use rand::seq::SliceRandom;
    let count = budget.resolve(inventory.len())?;
    let mut rng = rng_for(seed, "random-lesion", "targets");
    let mut order: Vec<UnitId> = inventory.to_vec();
    order.shuffle(&mut rng);
    let targets: Vec<UnitId> = order[..count].to_vec();
    Ok(LesionPlan {
        scheme,
        targets,
        budget,
        seed,
        source_fingerprint: ranking_fingerprint(inventory),
    })
}

/// Applies a plan to a deep copy; the source model is never modified.
/// Zeroing schemes add a persistent output mask. Xavier schemes overwrite
/// each target weight piece with i.i.d. Uniform(-a, a), a = sqrt(6 / (fan_in
/// + fan_out)) of that piece, and zero the target's biases.
pub fn apply_lesion(model: &Model, plan: &LesionPlan) -> Result<Model> {
    let mut seen = std::collections::BTreeSet::new();
    for &unit in &plan.targets {
        if !model.has_unit(unit) {
            return Err(Error::Lookup(format!("lesion target {unit} not in model")));
        }
        if !seen.insert(unit) {
            return Err(Error::Input(format!("duplicate lesion target {unit}")));
        }
    }
    let mut out = model.clone();
    if plan.scheme.reinitializes() {
        for &unit in &plan.targets {
            for piece in model.unit_parameters(unit)? {
                let tensor = out.params.get_mut(&piece.name).expect("piece names a parameter");
                let cols = tensor.cols();
                if piece.is_bias {
                    for idx in piece.element_indices(cols) {
                        tensor.data[idx] = 0.0;
                    }
                } else {
                    let a = (6.0 / (piece.rows.len() + piece.cols.len()) as f64).sqrt();
                    let mut rng =
                        rng_for(plan.seed, "xavier-lesion", &format!("{unit}/{}", piece.name));
                    for idx in piece.element_indices(cols) {
                        tensor.data[idx] = uniform_open(&mut rng, a);
                    }
                }
            }
        }
    } else {
        out.masked_units.extend(plan.targets.iter().copied());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::forward::UnitOverrideSet;
    use crate::model::{ModelConfig, UnitKind};

    fn tiny() -> Model {
        let mut cfg = ModelConfig::moe_default(24, 13);
        cfg.layers = 2;
        cfg.width = 16;
        cfg.heads = 2;
        cfg.ffn_hidden = 32;
        cfg.experts = 4;
        cfg.active_experts = 2;
        cfg.context_len = 12;
        Model::build(cfg).unwrap()
    }

    fn ranking_of(model: &Model) -> Vec<(UnitId, f64)> {
        model.units().into_iter().enumerate().map(|(i, u)| (u, -(i as f64))).collect()
    }

    #[test]
    fn progressive_plans_are_nested_prefixes() {
        let model = tiny();
        let ranking = ranking_of(&model);
        let budgets = [Budget::Count(1), Budget::Count(2), Budget::Count(4)];
        let plans =
            make_progressive_plans(&ranking, &budgets, LesionScheme::Zeroing, 1).unwrap();
        assert_eq!(plans.iter().map(|p| p.targets.len()).collect::<Vec<_>>(), vec![1, 2, 4]);
        for pair in plans.windows(2) {
            assert_eq!(pair[1].targets[..pair[0].targets.len()], pair[0].targets[..]);
        }
        for plan in &plans {
            let k = plan.targets.len();
            assert_eq!(plan.targets, ranking[..k].iter().map(|&(u, _)| u).collect::<Vec<_>>());
        }
        // Fractions resolve with the ceiling rule: {1,2}% of 8 units -> {1,1}
        // collides, so use a 96-unit ranking.
        let big: Vec<(UnitId, f64)> = (0..96)
            .map(|i| {
                (UnitId { layer: (i / 16) as u16, index: (i % 16) as u16, kind: UnitKind::Expert }, -(i as f64))
            })
            .collect();
        let plans = make_progressive_plans(
            &big,
            &[Budget::Fraction(1.0), Budget::Fraction(2.0)],
            LesionScheme::Xavier,
            0,
        )
        .unwrap();
        assert_eq!(plans.iter().map(|p| p.targets.len()).collect::<Vec<_>>(), vec![1, 2]);
        assert!(make_progressive_plans(&ranking, &[Budget::Count(99)], LesionScheme::Zeroing, 0)
            .is_err());
        assert!(make_progressive_plans(
            &ranking,
            &[Budget::Count(2), Budget::Count(2)],
            LesionScheme::Zeroing,
            0
        )
        .is_err());
    }

    #[test]
    fn random_plan_deterministic_and_exhaustive() {
        let model = tiny();
        let inv = model.units();
        let a = make_random_plan(&inv, Budget::Count(3), LesionScheme::RandomZeroing, 42).unwrap();
        let b = make_random_plan(&inv, Budget::Count(3), LesionScheme::RandomZeroing, 42).unwrap();
        assert_eq!(a.targets, b.targets);
        let c = make_random_plan(&inv, Budget::Count(3), LesionScheme::RandomZeroing, 43).unwrap();
        assert_ne!(a.targets, c.targets);
        let full =
            make_random_plan(&inv, Budget::Count(inv.len()), LesionScheme::RandomZeroing, 0)
                .unwrap();
        let mut sorted = full.targets.clone();
        sorted.sort();
        assert_eq!(sorted, inv);
    }

    #[test]
    fn random_selection_frequencies_are_uniform() {
        let inv: Vec<UnitId> = (0..96)
            .map(|i| UnitId { layer: (i / 16) as u16, index: (i % 16) as u16, kind: UnitKind::Expert })
            .collect();
        let budget = 4usize;
        let trials = 1000usize;
        let mut freq = std::collections::BTreeMap::new();
        for seed in 0..trials as u64 {
            let plan =
                make_random_plan(&inv, Budget::Count(budget), LesionScheme::RandomZeroing, seed)
                    .unwrap();
            for u in plan.targets {
                *freq.entry(u).or_insert(0usize) += 1;
            }
        }
        let p = budget as f64 / inv.len() as f64;
        let mean = trials as f64 * p;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        // With 96 units a single ~3 sigma excursion is expected about a
        // quarter of the time; tolerate one, but nothing beyond 4 sigma.
        let mut beyond3 = 0usize;
        for u in &inv {
            let f = *freq.get(u).unwrap_or(&0) as f64;
            let z = (f - mean).abs() / sigma;
            assert!(z <= 4.0, "{u}: {f} is {z:.2} sigma from {mean}");
            if z > 3.0 {
                beyond3 += 1;
            }
        }
        assert!(beyond3 <= 1, "{beyond3} units beyond 3 sigma");
    }

    #[test]
    fn empty_plan_is_identity_and_unknown_target_rejected() {
        let model = tiny();
        let plan = LesionPlan {
            scheme: LesionScheme::Zeroing,
            targets: vec![],
            budget: Budget::Count(0),
            seed: 0,
            source_fingerprint: String::new(),
        };
        let out = apply_lesion(&model, &plan).unwrap();
        assert_eq!(out.fingerprint(), model.fingerprint());

        let bad = LesionPlan {
            scheme: LesionScheme::Zeroing,
            targets: vec![UnitId { layer: 9, index: 0, kind: UnitKind::Expert }],
            budget: Budget::Count(1),
            seed: 0,
            source_fingerprint: String::new(),
        };
        assert!(apply_lesion(&model, &bad).is_err());
        assert_eq!(model.fingerprint(), out.fingerprint());
    }

    #[test]
    fn zero_mask_lesion_equals_override() {
        let model = tiny();
        let unit = model.units()[6];
        let plan = LesionPlan {
            scheme: LesionScheme::Zeroing,
            targets: vec![unit],
            budget: Budget::Count(1),
            seed: 0,
            source_fingerprint: String::new(),
        };
        let lesioned = apply_lesion(&model, &plan).unwrap();
        let tokens = vec![1usize, 5, 9, 2, 7];
        let masked = lesioned.forward_logits(&tokens, &UnitOverrideSet::none()).unwrap();
        let overridden = model.forward_logits(&tokens, &UnitOverrideSet::single(unit)).unwrap();
        assert_eq!(masked.data, overridden.data);
        // And the unit's output is identically zero on a probe batch.
        let (_, trace) = lesioned.forward_traced(&tokens, &UnitOverrideSet::none()).unwrap();
        assert_eq!(trace.unit_max_abs[&unit], 0.0);
    }

    #[test]
    fn xavier_lesion_bounds_and_locality() {
        let model = tiny();
        let unit = model.units()[3];
        let plan = LesionPlan {
            scheme: LesionScheme::Xavier,
            targets: vec![unit],
            budget: Budget::Count(1),
            seed: 7,
            source_fingerprint: String::new(),
        };
        let lesioned = apply_lesion(&model, &plan).unwrap();
        assert!(lesioned.masked_units.is_empty());
        let pieces = model.unit_parameters(unit).unwrap();
        let mut changed = false;
        for piece in &pieces {
            let cols = model.params[&piece.name].cols();
            let a = (6.0 / (piece.rows.len() + piece.cols.len()) as f64).sqrt();
            for idx in piece.element_indices(cols) {
                let v = lesioned.params[&piece.name].data[idx];
                if piece.is_bias {
                    assert_eq!(v, 0.0);
                } else {
                    assert!(v > -a && v < a, "{}: {v} outside (-{a}, {a})", piece.name);
                }
                changed |= v != model.params[&piece.name].data[idx];
            }
        }
        assert!(changed);
        // Locality: every element outside the target is bit-identical.
        let owned: std::collections::BTreeSet<(String, usize)> = pieces
            .iter()
            .flat_map(|p| {
                let cols = model.params[&p.name].cols();
                p.element_indices(cols).map(move |i| (p.name.clone(), i)).collect::<Vec<_>>()
            })
            .collect();
        for (name, tensor) in &model.params {
            for (i, v) in tensor.data.iter().enumerate() {
                if !owned.contains(&(name.clone(), i)) {
                    assert_eq!(
                        lesioned.params[name].data[i].to_bits(),
                        v.to_bits(),
                        "{name}[{i}] changed"
                    );
                }
            }
        }
    }

    #[test]
    fn xavier_sample_statistics() {
        // One dense group spanning a 64x64 block, so the sample is large
        // enough for tight moment checks.
        let mut cfg = ModelConfig::dense_default(24, 3);
        cfg.layers = 1;
        cfg.width = 64;
        cfg.heads = 4;
        cfg.ffn_hidden = 64;
        cfg.neuron_groups = 1;
        let model = Model::build(cfg).unwrap();
        let unit = model.units()[0];
        let plan = LesionPlan {
            scheme: LesionScheme::Xavier,
            targets: vec![unit],
            budget: Budget::Count(1),
            seed: 11,
            source_fingerprint: String::new(),
        };
        let lesioned = apply_lesion(&model, &plan).unwrap();
        for piece in model.unit_parameters(unit).unwrap() {
            if piece.is_bias {
                continue;
            }
            let cols = model.params[&piece.name].cols();
            let vals: Vec<f64> = piece
                .element_indices(cols)
                .map(|i| lesioned.params[&piece.name].data[i])
                .collect();
            let n = vals.len() as f64;
            let a = (6.0 / (piece.rows.len() + piece.cols.len()) as f64).sqrt();
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sigma_mean = (a * a / 3.0 / n).sqrt();
            assert!(mean.abs() <= 3.0 * sigma_mean, "mean {mean} vs 3 sigma {sigma_mean}");
            let want = a * a / 3.0;
            assert!((var - want).abs() <= 0.1 * want, "var {var} vs {want}");
        }
    }

    #[test]
    fn plan_round_trips_through_json() {
        let model = tiny();
        let plan = make_random_plan(
            &model.units(),
            Budget::Fraction(25.0),
            LesionScheme::RandomXavier,
            9,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.json");
        plan.save(&path).unwrap();
        let back = LesionPlan::load(&path).unwrap();
        assert_eq!(back.targets, plan.targets);
        assert_eq!(back.scheme, plan.scheme);
        assert_eq!(back.budget, plan.budget);
    }
}
