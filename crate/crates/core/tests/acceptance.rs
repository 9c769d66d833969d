//! Acceptance gate: one test per shipped guarantee, each printing a single
//! PASS line (failures panic with the measured values). Criteria 7-10 share
//! one full pipeline run on the bundled default recipe.

use once_cell::sync::Lazy;
use rand::Rng as _;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use aphasim_core::align::{p_sweep, rank_percentile_matrix, spearman};
use aphasim_core::clinic::{aphasia_quotient, diagnose, Diagnosis, DoseResponseTable};
use aphasim_core::data::{build_minimal_pairs, Vocab};
use aphasim_core::lesion::{apply_lesion, Budget, LesionPlan, LesionScheme};
use aphasim_core::model::forward::UnitOverrideSet;
use aphasim_core::model::train::{batch_grads, sequence_loss};
use aphasim_core::model::{ArchKind, Model, ModelConfig, UnitId, UnitKind};
use aphasim_core::optim::Optimizer;
use aphasim_core::phenotype::{finetune_with_importance, FinetuneOptions};
use aphasim_core::pipeline::{RunConfig, StageContext};
use aphasim_core::probe::{encode_suites, zero_ablation_sweep, AblatableScorer, AttributionMap};
use aphasim_core::rng::rng_from_seed;
use aphasim_core::Result;

fn pass(criterion: usize, name: &str, detail: &str) {
    println!("criterion {criterion} ({name}): PASS {detail}");
}

// ---------------------------------------------------------------------------
// 1. Aphasia-quotient exactness and the diagnostic boundary.

#[test]
fn criterion_01_aq_exactness() {
    let start = Instant::now();
    let mut rng = rng_from_seed(101);
    for _ in 0..1000 {
        let ss = rng.gen_range(0.0..=20.0);
        let c = rng.gen_range(0.0..=120.0);
        let r = rng.gen_range(0.0..=100.0);
        let n = rng.gen_range(0.0..=40.0);
        let expected = (ss + c / 12.0 + r / 10.0 + n / 4.0) * 2.0;
        assert!(
            (aphasia_quotient(ss, c, r, n) - expected).abs() < 1e-9,
            "AQ({ss},{c},{r},{n})"
        );
    }
    assert_eq!(aphasia_quotient(20.0, 120.0, 100.0, 40.0), 100.0);
    assert_eq!(aphasia_quotient(0.0, 0.0, 0.0, 0.0), 0.0);
    assert_eq!(diagnose(93.8), Diagnosis::Normal);
    assert_eq!(diagnose(93.8 - 1e-9), Diagnosis::Aphasic);
    assert_eq!(diagnose(100.0), Diagnosis::Normal);
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 1.0, "took {secs:.2}s");
    pass(1, "aq-exactness", &format!("[1000 tuples + boundaries in {secs:.3}s]"));
}

// ---------------------------------------------------------------------------
// 2. Gradients vs central finite differences on 20 random small models.

fn loss_of(model: &Model, tokens: &[usize]) -> f64 {
    sequence_loss(model, tokens).unwrap().0
}

fn fd_check(model: &mut Model, tokens: &[usize]) -> f64 {
    let (_, grads) = sequence_loss(model, tokens).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    let names: Vec<String> = model.params.keys().cloned().collect();
    for name in names {
        let len = model.params[&name].data.len();
        for i in 0..len {
            let orig = model.params[&name].data[i];
            model.params.get_mut(&name).unwrap().data[i] = orig + h;
            let up = loss_of(model, tokens);
            model.params.get_mut(&name).unwrap().data[i] = orig - h;
            let down = loss_of(model, tokens);
            model.params.get_mut(&name).unwrap().data[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let ad = grads[&name].data[i];
            let scale = ad.abs().max(fd.abs());
            if scale > 1e-6 {
                worst = worst.max((ad - fd).abs() / scale);
            }
        }
    }
    worst
}

#[test]
fn criterion_02_gradient_correctness() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut total_params = 0;
    for g in 0..20 {
        let seed = 200 + g as u64;
        let mut rng = rng_from_seed(seed);
        let vocab = 7 + (g % 3);
        let mut cfg = if g % 2 == 0 {
            ModelConfig::dense_default(vocab, seed)
        } else {
            ModelConfig::moe_default(vocab, seed)
        };
        cfg.context_len = 8;
        cfg.width = 6;
        cfg.layers = 1;
        cfg.heads = 2;
        cfg.ffn_hidden = 6;
        cfg.neuron_groups = 2;
        cfg.experts = 2;
        cfg.active_experts = 1;
        let mut model = Model::build(cfg).unwrap();
        let n_params: usize = model.params.values().map(|t| t.data.len()).sum();
        assert!(n_params <= 1000, "graph {g} has {n_params} params");
        total_params += n_params;
        let len = 4 + g % 4;
        let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
        worst = worst.max(fd_check(&mut model, &tokens));
    }
    assert!(worst < 1e-4, "max relative error {worst:.2e}");
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 30.0, "took {secs:.1}s");
    pass(
        2,
        "gradient-correctness",
        &format!("[20 graphs, {total_params} params total, max rel err {worst:.2e}, {secs:.1}s]"),
    );
}

// ---------------------------------------------------------------------------
// 3. Zero-ablation attribution: zero routing mass and the 2-expert fixture.

/// Two-expert toy scorer: expert 0 encodes the bigram (1,2) with a bonus;
/// sequences are scored by summed bigram bonuses.
struct BigramFixture;

impl BigramFixture {
    fn score_with(&self, tokens: &[usize], expert0_active: bool) -> f64 {
        tokens
            .windows(2)
            .map(|w| match (w[0], w[1]) {
                (1, 2) if expert0_active => 1.0,
                (5, 6) => -1.0,
                _ => -3.0,
            })
            .sum()
    }
}

impl AblatableScorer for BigramFixture {
    fn score(&self, tokens: &[usize], overrides: &UnitOverrideSet) -> Result<f64> {
        let e0 = UnitId { layer: 0, index: 0, kind: UnitKind::Expert };
        Ok(self.score_with(tokens, !overrides.is_zeroed(e0)))
    }

    fn unit_inventory(&self) -> Vec<UnitId> {
        (0..2).map(|i| UnitId { layer: 0, index: i, kind: UnitKind::Expert }).collect()
    }

    fn fingerprint(&self) -> String {
        "bigram-fixture".into()
    }
}

#[test]
fn criterion_03_zero_ablation_soundness() {
    let start = Instant::now();
    // Real MoE with an all-zero router: every position ties, top-k picks the
    // lowest indices, so experts beyond k have exactly zero routing mass.
    let vocab = Vocab::build();
    let mut cfg = ModelConfig::moe_default(vocab.len(), 33);
    cfg.layers = 1;
    cfg.width = 8;
    cfg.heads = 2;
    cfg.ffn_hidden = 8;
    cfg.experts = 4;
    cfg.active_experts = 2;
    let mut model = Model::build(cfg).unwrap();
    for x in model.params.get_mut("layer00.router.w").unwrap().data.iter_mut() {
        *x = 0.0;
    }
    let suites = encode_suites(&vocab, &build_minimal_pairs(33, 2)).unwrap();
    let attr = zero_ablation_sweep(&model, &suites).unwrap();
    for (u, unit) in attr.units.iter().enumerate() {
        if unit.index >= 2 {
            for (t, task) in attr.tasks.iter().enumerate() {
                assert_eq!(attr.deltas[t][u], 0.0, "{unit} on {task} should be inert");
            }
        }
    }

    // Hand-built 2-expert fixture vs a brute-force oracle.
    let fixture = BigramFixture;
    let pairs: Vec<(Vec<usize>, Vec<usize>)> = vec![
        // Two pairs hinge on the expert-0 bigram; two are decided without it.
        (vec![0, 1, 2, 3], vec![0, 5, 6, 3]),
        (vec![1, 2, 1, 2], vec![0, 5, 6, 0]),
        (vec![5, 6, 5, 6], vec![0, 0, 0, 0]),
        (vec![3, 5, 6, 0], vec![0, 0, 3, 3]),
    ];
    let suite = vec![aphasim_core::probe::TaskSuite {
        task: "bigram".into(),
        pairs: pairs
            .iter()
            .map(|(g, b)| aphasim_core::probe::TokenPair { good: g.clone(), bad: b.clone() })
            .collect(),
    }];
    let attr = zero_ablation_sweep(&fixture, &suite).unwrap();
    // Oracle: recompute accuracies by direct enumeration.
    let acc = |active: bool| {
        let correct = pairs
            .iter()
            .filter(|(g, b)| fixture.score_with(g, active) > fixture.score_with(b, active))
            .count();
        correct as f64 / pairs.len() as f64
    };
    assert_eq!(attr.baseline[0], acc(true));
    let e0 = attr.units.iter().position(|u| u.index == 0).unwrap();
    let delta_oracle = acc(false) - acc(true);
    assert_eq!(attr.deltas[0][e0], delta_oracle);
    assert_eq!(delta_oracle, -0.5);
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 10.0, "took {secs:.1}s");
    pass(3, "zero-ablation-soundness", &format!("[inert units exact, fixture delta -0.5, {secs:.1}s]"));
}

// ---------------------------------------------------------------------------
// 4. Importance scores vs a 2-step manual replay oracle.

#[test]
fn criterion_04_importance_replay_oracle() {
    let vocab = Vocab::build();
    let mut cfg = ModelConfig::dense_default(vocab.len(), 44);
    cfg.layers = 2;
    cfg.width = 16;
    cfg.heads = 2;
    cfg.ffn_hidden = 16;
    cfg.neuron_groups = 4;
    cfg.context_len = 16;
    let base = Model::build(cfg).unwrap();
    let tokens: Vec<usize> = {
        let mut t = vec![vocab.bos()];
        t.extend(vocab.encode("the dog sees a cat").unwrap());
        t.push(vocab.eos());
        t
    };
    let corpus = vec![tokens.clone()];
    let lr = 1e-3;
    let opts = FinetuneOptions { epochs: 2, batch_size: 1, lr, shuffle_seed: 9 };
    let (tuned, table) =
        finetune_with_importance(&base, aphasim_core::data::Phenotype::Broca, &corpus, &opts)
            .unwrap();

    // Manual replay: same optimizer, two scalar steps, accumulating
    // |gradient * pre-update weight| elementwise.
    let mut replay = base.clone();
    let mut opt = Optimizer::adamw(lr);
    let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for _ in 0..2 {
        let (_, grads) = batch_grads(&replay, &[&tokens]).unwrap();
        for (name, g) in &grads {
            let theta = &replay.params[name];
            let slot = acc.entry(name.clone()).or_insert_with(|| vec![0.0; theta.data.len()]);
            for (s, (gi, ti)) in slot.iter_mut().zip(g.data.iter().zip(&theta.data)) {
                *s += (gi * ti).abs();
            }
        }
        opt.step(&mut replay.params, &grads).unwrap();
    }
    assert_eq!(replay.fingerprint(), tuned.fingerprint(), "replayed weights diverge");
    for (unit, score) in table.units.iter().zip(&table.scores) {
        let mut oracle = 0.0;
        for piece in base.unit_parameters(*unit).unwrap() {
            let cols = base.params[&piece.name].cols();
            for idx in piece.element_indices(cols) {
                oracle += acc[&piece.name][idx];
            }
        }
        assert!((score - oracle).abs() <= 1e-12, "{unit}: {score} vs {oracle}");
    }

    // Frozen (masked) units accumulate exactly nothing.
    let mut frozen_base = base.clone();
    let frozen = UnitId { layer: 0, index: 1, kind: UnitKind::NeuronGroup };
    frozen_base.masked_units.insert(frozen);
    let (_, table) =
        finetune_with_importance(&frozen_base, aphasim_core::data::Phenotype::Broca, &corpus, &opts)
            .unwrap();
    let idx = table.units.iter().position(|u| *u == frozen).unwrap();
    assert_eq!(table.scores[idx], 0.0);
    pass(4, "importance-replay", "[2-step oracle matches to 1e-12, frozen unit scores 0]");
}

// ---------------------------------------------------------------------------
// 5. Spearman closed form, tie handling, sweep symmetry, H range.

fn closed_form_rho(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut out = vec![0.0; v.len()];
        for (r, &i) in idx.iter().enumerate() {
            out[i] = (r + 1) as f64;
        }
        out
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

fn synthetic_attribution(units: &[UnitId], tasks: usize, seed: u64) -> AttributionMap {
    let mut rng = rng_from_seed(seed);
    AttributionMap {
        tasks: (0..tasks).map(|t| format!("task{t}")).collect(),
        units: units.to_vec(),
        baseline: (0..tasks).map(|_| rng.gen_range(0.5..1.0)).collect(),
        deltas: (0..tasks)
            .map(|_| (0..units.len()).map(|_| rng.gen_range(-1.0..0.0)).collect())
            .collect(),
        model_fingerprint: "synthetic".into(),
        task_fingerprint: "synthetic".into(),
    }
}

#[test]
fn criterion_05_rank_statistics() {
    let mut rng = rng_from_seed(55);
    for _ in 0..100 {
        let n = rng.gen_range(5..40);
        // Tie-free by construction: distinct integers with random jitter.
        let mut x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let mut y = x.clone();
        use rand::seq::SliceRandom;
        x.shuffle(&mut rng);
        y.shuffle(&mut rng);
        let got = spearman(&x, &y).unwrap();
        assert!((got - closed_form_rho(&x, &y)).abs() <= 1e-12);
    }
    // Average-rank tie handling, hand-computed reference.
    let got = spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert!((got - 4.5 / 22.5f64.sqrt()).abs() <= 1e-12, "{got}");

    // Sweep matrix symmetric with unit diagonal; H entries in (0, 1].
    let units: Vec<UnitId> = (0..6)
        .flat_map(|l| (0..16).map(move |i| UnitId { layer: l, index: i, kind: UnitKind::Expert }))
        .collect();
    let attr = synthetic_attribution(&units, 8, 56);
    let mut scores: Vec<f64> = (0..units.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
    scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let ranking: Vec<(UnitId, f64)> = units.iter().copied().zip(scores).collect();
    let sweep = p_sweep(&ranking, &attr, &[0.5, 1.0, 2.0, 3.0, 5.0, 10.0]).unwrap();
    for i in 0..sweep.thresholds.len() {
        assert_eq!(sweep.rho[i][i], 1.0);
        for j in 0..sweep.thresholds.len() {
            assert_eq!(sweep.rho[i][j], sweep.rho[j][i]);
            assert!(sweep.rho[i][j].is_finite());
        }
    }
    let matrix = rank_percentile_matrix(
        "broca",
        &ranking,
        10.0,
        &attr,
        &["task0", "task1", "task2", "task3"],
        &["task4", "task5", "task6", "task7"],
    )
    .unwrap();
    for row in &matrix.entries {
        for &h in row {
            assert!(h > 0.0 && h <= 1.0, "H={h}");
        }
    }
    pass(5, "rank-statistics", "[closed form to 1e-12, ties averaged, sweep symmetric, H in (0,1]]");
}

// ---------------------------------------------------------------------------
// 6. Lesion statistics: Xavier bounds/variance, locality, mask equivalence.

#[test]
fn criterion_06_lesion_statistics() {
    let vocab = Vocab::build();
    let mut cfg = ModelConfig::dense_default(vocab.len(), 66);
    cfg.neuron_groups = 8; // 512/8 = 64-wide groups: both pieces are 64x64.
    let base = Model::build(cfg).unwrap();
    let target = UnitId { layer: 3, index: 2, kind: UnitKind::NeuronGroup };
    let plan = LesionPlan {
        scheme: LesionScheme::Xavier,
        targets: vec![target],
        budget: Budget::Count(1),
        seed: 7,
        source_fingerprint: String::new(),
    };
    let lesioned = apply_lesion(&base, &plan).unwrap();
    for piece in base.unit_parameters(target).unwrap() {
        let cols = base.params[&piece.name].cols();
        let fan = piece.rows.len() + piece.cols.len();
        let a = (6.0 / fan as f64).sqrt();
        let values: Vec<f64> = piece
            .element_indices(cols)
            .into_iter()
            .map(|i| lesioned.params[&piece.name].data[i])
            .collect();
        if piece.is_bias {
            assert!(values.iter().all(|&v| v == 0.0), "bias not zeroed");
            continue;
        }
        assert_eq!(values.len(), 64 * 64);
        assert!(values.iter().all(|&v| v > -a && v < a), "outside (-a, a)");
        let var = values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64;
        let expected = a * a / 3.0;
        assert!(
            (var - expected).abs() / expected < 0.10,
            "{}: var {var:.5} vs {expected:.5}",
            piece.name
        );
    }
    // Non-targets bit-identical.
    let owned: std::collections::BTreeSet<String> = base
        .unit_parameters(target)
        .unwrap()
        .into_iter()
        .map(|p| p.name)
        .collect();
    for (name, tensor) in &base.params {
        if !owned.contains(name) {
            assert_eq!(tensor.data, lesioned.params[name].data, "{name} touched");
        }
    }

    // Zero-mask lesion output equals the override-based ablation bit-exactly.
    let zero_plan = LesionPlan {
        scheme: LesionScheme::Zeroing,
        targets: vec![target],
        budget: Budget::Count(1),
        seed: 0,
        source_fingerprint: String::new(),
    };
    let masked = apply_lesion(&base, &zero_plan).unwrap();
    let tokens: Vec<usize> = {
        let mut t = vec![vocab.bos()];
        t.extend(vocab.encode("the dog runs").unwrap());
        t
    };
    let via_mask = masked.forward_logits(&tokens, &UnitOverrideSet::none()).unwrap();
    let via_override =
        base.forward_logits(&tokens, &UnitOverrideSet::zeroing([target])).unwrap();
    assert_eq!(via_mask.data, via_override.data);
    pass(6, "lesion-statistics", "[bounds strict, variance within 10%, locality and mask equivalence exact]");
}

// ---------------------------------------------------------------------------
// Shared full pipeline run on the bundled default recipe (criteria 7-10).

struct FullRun {
    dir: PathBuf,
    wall_secs: f64,
    _keep: tempfile::TempDir,
}

static FULL_RUN: Lazy<FullRun> = Lazy::new(|| {
    let keep = tempfile::tempdir().expect("tempdir");
    let dir = keep.path().to_path_buf();
    let start = Instant::now();
    let ctx = StageContext::new(
        RunConfig::default(),
        dir.clone(),
        vec![ArchKind::Dense, ArchKind::Moe],
        true,
    )
    .expect("context");
    ctx.run_all().expect("bundled recipe pipeline");
    FullRun { dir, wall_secs: start.elapsed().as_secs_f64(), _keep: keep }
});

fn dose_table(arch: ArchKind) -> DoseResponseTable {
    let path = FULL_RUN.dir.join(format!("clinic/{}_dose_response.json", arch.name()));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Mean AQ per budget for rows matching a predicate, anchored at intact.
fn curve(table: &DoseResponseTable, budgets: &[usize], f: impl Fn(&str, &str) -> bool) -> Vec<f64> {
    let intact = table
        .rows
        .iter()
        .find(|r| r.condition == "intact")
        .map(|r| r.aq)
        .expect("intact row");
    let mut out = vec![intact];
    for &b in budgets {
        let values: Vec<f64> = table
            .rows
            .iter()
            .filter(|r| r.budget == b && f(&r.condition, &r.scheme))
            .map(|r| r.aq)
            .collect();
        assert!(!values.is_empty(), "no rows at budget {b}");
        out.push(values.iter().sum::<f64>() / values.len() as f64);
    }
    out
}

fn inversions(curve: &[f64]) -> (usize, f64) {
    let mut count = 0;
    let mut worst = 0.0f64;
    for w in curve.windows(2) {
        if w[1] > w[0] {
            count += 1;
            worst = worst.max(w[1] - w[0]);
        }
    }
    (count, worst)
}

#[test]
fn criterion_07_dose_response() {
    let budgets = RunConfig::default().lesion.budgets;
    assert_eq!(budgets, vec![1, 2, 4, 8, 16]);
    let mut detail = String::new();
    for arch in [ArchKind::Dense, ArchKind::Moe] {
        let table = dose_table(arch);
        let mut targeted_beats_random = false;
        for scheme in ["zeroing", "xavier"] {
            let targeted = curve(&table, &budgets, |c, s| c.starts_with("targeted:") && s == scheme);
            let (inv, gap) = inversions(&targeted);
            assert!(
                inv == 0 || (inv == 1 && gap <= 0.5),
                "{}/{scheme} targeted curve not non-increasing: {targeted:?} ({inv} inversions, worst {gap:.2})",
                arch.name()
            );
            let random = curve(&table, &budgets, |c, s| c == "random" && s == scheme);
            let (inv, gap) = inversions(&random);
            assert!(
                inv == 0 || (inv == 1 && gap <= 0.5),
                "{}/{scheme} random curve not non-increasing: {random:?} ({inv} inversions, worst {gap:.2})",
                arch.name()
            );
            if targeted.last().unwrap() < random.last().unwrap() {
                targeted_beats_random = true;
            }
            detail.push_str(&format!(
                "{}/{scheme} targeted {:?} random {:?}; ",
                arch.name(),
                targeted.iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>(),
                random.iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>()
            ));
        }
        assert!(
            targeted_beats_random,
            "{}: targeted never below random at the largest budget",
            arch.name()
        );
    }
    assert!(
        FULL_RUN.wall_secs < 600.0,
        "bundled pipeline took {:.0}s (budget 600s)",
        FULL_RUN.wall_secs
    );
    pass(7, "dose-response", &format!("[{detail}pipeline {:.0}s]", FULL_RUN.wall_secs));
}

#[test]
fn criterion_08_intact_baseline() {
    let mut detail = String::new();
    for arch in [ArchKind::Dense, ArchKind::Moe] {
        let table = dose_table(arch);
        let intact = table.rows.iter().find(|r| r.condition == "intact").unwrap().aq;
        for (condition, scheme, budget, mean) in table.seed_means() {
            if budget == 16 {
                assert!(
                    intact > mean,
                    "{}: intact {intact:.2} <= {condition}/{scheme} {mean:.2}",
                    arch.name()
                );
            }
        }
        detail.push_str(&format!("{} intact {intact:.2}; ", arch.name()));
    }
    pass(8, "intact-baseline", &format!("[{detail}exceeds every 16-unit mean]"));
}

#[test]
fn criterion_09_style_separability() {
    let classifier: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(FULL_RUN.dir.join("phenotype/style_classifier.json")).unwrap(),
    )
    .unwrap();
    let held_out = classifier["held_out_accuracy"].as_f64().unwrap();
    assert!(held_out >= 0.90, "classifier held-out accuracy {held_out:.3}");

    let mut detail = format!("classifier {held_out:.3}; ");
    for arch in [ArchKind::Dense, ArchKind::Moe] {
        let rows: Vec<(String, String, usize, serde_json::Value)> = serde_json::from_str(
            &std::fs::read_to_string(
                FULL_RUN.dir.join(format!("clinic/{}_style.json", arch.name())),
            )
            .unwrap(),
        )
        .unwrap();
        for phen in ["broca", "wernicke"] {
            let base: Vec<f64> = rows
                .iter()
                .filter(|(p, which, _, _)| p == phen && which == "base")
                .map(|(_, _, _, o)| o["consistency"].as_f64().unwrap())
                .collect();
            let tuned: Vec<f64> = rows
                .iter()
                .filter(|(p, which, _, _)| p == phen && which == "tuned")
                .map(|(_, _, _, o)| o["consistency"].as_f64().unwrap())
                .collect();
            assert!(tuned.len() >= 5, "{phen}: only {} tuned replicas", tuned.len());
            let base_mean = base.iter().sum::<f64>() / base.len() as f64;
            let tuned_mean = tuned.iter().sum::<f64>() / tuned.len() as f64;
            assert!(
                tuned_mean > base_mean,
                "{}/{phen}: tuned {tuned_mean:.3} vs base {base_mean:.3}",
                arch.name()
            );
            detail.push_str(&format!(
                "{}/{phen} {base_mean:.2}->{tuned_mean:.2}; ",
                arch.name()
            ));
        }
    }
    pass(9, "style-separability", &format!("[{detail}]"));
}

#[test]
fn criterion_10_threshold_robustness() {
    let expected = vec![0.5, 1.0, 2.0, 3.0, 5.0, 10.0];
    let mut detail = String::new();
    for arch in [ArchKind::Dense, ArchKind::Moe] {
        for phen in ["broca", "wernicke"] {
            let sweep: serde_json::Value = serde_json::from_str(
                &std::fs::read_to_string(
                    FULL_RUN.dir.join(format!("align/{}_{phen}_sweep.json", arch.name())),
                )
                .unwrap(),
            )
            .unwrap();
            let thresholds: Vec<f64> =
                serde_json::from_value(sweep["thresholds"].clone()).unwrap();
            assert_eq!(thresholds, expected);
            let reference: Vec<f64> =
                serde_json::from_value(sweep["reference_row"].clone()).unwrap();
            assert!(reference.iter().all(|r| r.is_finite()), "non-finite rho");
            detail.push_str(&format!(
                "{}/{phen} rho vs 2%: {:?}; ",
                arch.name(),
                reference.iter().map(|r| (r * 100.0).round() / 100.0).collect::<Vec<_>>()
            ));
        }
    }
    pass(10, "threshold-robustness", &format!("[{detail}paper-scale rho>0.85 is context only]"));
}

// ---------------------------------------------------------------------------
// 11. run-all determinism across repeat runs and worker counts.

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                // The manifest records wall-clock times; everything else
                // must be byte-identical.
                if rel != "manifest.json" {
                    out.insert(rel, std::fs::read(&path).unwrap());
                }
            }
        }
    }
    out
}

#[test]
fn criterion_11_determinism() {
    let config = RunConfig::from_toml(
        r#"
seed = 77
[data]
grammar_sentences = 40
task_repeat = 10
task_naming_rounds = 1
task_story = 10
broca_utterances = 40
wernicke_utterances = 40
pairs_per_phenomenon = 2
[model.dense]
context_len = 32
width = 16
layers = 2
heads = 2
ffn_hidden = 16
neuron_groups = 4
[model.moe]
context_len = 32
width = 16
layers = 2
heads = 2
ffn_hidden = 16
neuron_groups = 4
experts = 4
active_experts = 2
[train]
epochs = 1
[finetune]
epochs = 1
seeds = 2
[lesion]
budgets = [1, 2]
seeds = 2
[align]
thresholds = [10.0, 25.0, 50.0]
matrix_percent = 25.0
"#,
    )
    .unwrap();
    let archs = vec![ArchKind::Dense, ArchKind::Moe];
    let run = |cfg: &RunConfig, threads: Option<usize>| -> BTreeMap<String, Vec<u8>> {
        let dir = tempfile::tempdir().unwrap();
        let ctx =
            StageContext::new(cfg.clone(), dir.path().to_path_buf(), archs.clone(), true).unwrap();
        match threads {
            None => {
                ctx.run_all().unwrap();
            }
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
                pool.install(|| ctx.run_all()).unwrap();
            }
        }
        snapshot(dir.path())
    };
    let a = run(&config, None);
    let b = run(&config, None);
    let c = run(&config, Some(2));
    let d = run(&config, Some(1));
    assert!(!a.is_empty());
    assert_eq!(a, b, "repeat run differs");
    assert_eq!(a, c, "2-worker run differs");
    assert_eq!(a, d, "single-worker run differs");
    pass(
        11,
        "determinism",
        &format!("[{} artifacts byte-identical across 2 runs and worker counts 1/2/default]", a.len()),
    );
}
