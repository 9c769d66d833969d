//! Pipeline stages. Each command reads its prerequisites' artifacts from
//! the run directory, writes its own atomically, and records them in the
//! manifest. Reruns with unchanged inputs are no-ops.

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::align::{p_sweep, rank_percentile_matrix, ThresholdSweep};
use crate::chart::{heatmap_svg, line_chart_svg, LineSeries};
use crate::clinic::{run_wab, DoseResponseRow, DoseResponseTable, WabScorecard};
use crate::data::vocab::{Field, NOUNS, SEP, STORY_TASK};
use crate::data::{
    build_clinical_items, build_grammar_corpus, build_minimal_pairs, build_subtype_corpora,
    build_task_corpus, ItemBank, MinimalPair, Phenotype, SubtypeCorpus, Vocab, SEMANTIC_TASKS,
    SYNTACTIC_TASKS,
};
use crate::error::{Error, Result};
use crate::lesion::{
    apply_lesion, make_progressive_plans, make_random_plan, Budget, LesionPlan, LesionScheme,
};
use crate::model::forward::UnitOverrideSet;
use crate::model::train::{train, TrainOptions};
use crate::model::{ArchKind, Model};
use crate::optim::Optimizer;
use crate::phenotype::style::{style_consistency, train_style_classifier, StyleClassifier};
use crate::phenotype::{encode_corpus, finetune_with_importance, ContributionTable, FinetuneOptions};
use crate::pipeline::atomic_write;
use crate::pipeline::config::RunConfig;
use crate::pipeline::manifest::RunManifest;
use crate::probe::{encode_suites, zero_ablation_sweep, AttributionMap};
use crate::rng::child_seed;

pub const STAGE_ORDER: &[&str] =
    &["gen-data", "train", "probe", "phenotype", "align", "lesion", "evaluate", "report"];

pub fn stage_dependencies(stage: &str) -> Result<&'static [&'static str]> {
    Ok(match stage {
        "gen-data" => &[],
        "train" => &["gen-data"],
        "probe" => &["train"],
        "phenotype" => &["gen-data", "train"],
        "align" => &["probe", "phenotype"],
        "lesion" => &["phenotype"],
        "evaluate" => &["gen-data", "train", "phenotype", "lesion"],
        "report" => &["probe", "align", "evaluate"],
        other => return Err(Error::Usage(format!("unknown stage `{other}`"))),
    })
}

const PHENOTYPES: [Phenotype; 2] = [Phenotype::Broca, Phenotype::Wernicke];

pub struct StageContext {
    pub config: RunConfig,
    pub run_dir: PathBuf,
    pub archs: Vec<ArchKind>,
    pub quiet: bool,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    atomic_write(path, serde_json::to_string_pretty(value)?.as_bytes())
}

impl StageContext {
    pub fn new(
        config: RunConfig,
        run_dir: PathBuf,
        archs: Vec<ArchKind>,
        quiet: bool,
    ) -> Result<StageContext> {
        config.validate()?;
        if archs.is_empty() {
            return Err(Error::Config("no architecture selected".into()));
        }
        std::fs::create_dir_all(&run_dir)?;
        atomic_write(&run_dir.join("config.copy"), config.to_toml()?.as_bytes())?;
        Ok(StageContext { config, run_dir, archs, quiet })
    }

    fn log(&self, message: &str) {
        if !self.quiet {
            eprintln!("{message}");
        }
    }

    fn manifest(&self) -> Result<RunManifest> {
        RunManifest::load_or_new(&self.run_dir, &self.config.fingerprint())
    }

    fn seed_for(&self, stage: &str, entity: &str) -> u64 {
        child_seed(self.config.seed, stage, entity)
    }

    fn arch_tag(&self) -> String {
        self.archs.iter().map(|a| a.name()).collect::<Vec<_>>().join("+")
    }

    /// Shared gating: verify prerequisites, skip when inputs are unchanged,
    /// otherwise run the stage body and record its artifacts.
    pub fn run_stage(&self, stage: &str) -> Result<bool> {
        let deps = stage_dependencies(stage)?;
        let mut manifest = self.manifest()?;
        manifest.require(stage, deps)?;
        for &dep in deps {
            manifest.verify_stage(&self.run_dir, dep)?;
        }
        let input_fp = manifest.input_fingerprint(deps, &[&self.arch_tag()]);
        if let Some(record) = manifest.stages.get(stage) {
            if record.input_fingerprint == input_fp {
                manifest.verify_stage(&self.run_dir, stage)?;
                self.log(&format!("[{stage}] up to date, skipping"));
                return Ok(false);
            }
        }
        let start = Instant::now();
        let artifacts = match stage {
            "gen-data" => self.stage_gen_data()?,
            "train" => self.stage_train()?,
            "probe" => self.stage_probe()?,
            "phenotype" => self.stage_phenotype()?,
            "align" => self.stage_align()?,
            "lesion" => self.stage_lesion()?,
            "evaluate" => self.stage_evaluate()?,
            "report" => self.stage_report()?,
            _ => unreachable!("stage validated above"),
        };
        let secs = start.elapsed().as_secs_f64();
        manifest.record_stage(&self.run_dir, stage, &input_fp, &artifacts, secs)?;
        self.log(&format!("[{stage}] done in {secs:.1}s ({} artifacts)", artifacts.len()));
        Ok(true)
    }

    /// All stages in order; completed stages are skipped, so an interrupted
    /// run resumes where it stopped.
    pub fn run_all(&self) -> Result<RunManifest> {
        for stage in STAGE_ORDER {
            self.run_stage(stage)?;
        }
        self.manifest()
    }

    // ---- artifact paths -------------------------------------------------

    fn corpora(&self, name: &str) -> PathBuf {
        self.run_dir.join("corpora").join(name)
    }

    fn checkpoint(&self, name: &str) -> PathBuf {
        self.run_dir.join("checkpoints").join(name)
    }

    fn tuned_checkpoint(&self, arch: ArchKind, phen: Phenotype, replica: usize) -> PathBuf {
        self.checkpoint(&format!("{}_{}_s{replica}.json", arch.name(), phen.name()))
    }

    fn contribution_path(&self, arch: ArchKind, phen: Phenotype) -> PathBuf {
        self.run_dir
            .join("phenotype")
            .join(format!("{}_{}_contrib.json", arch.name(), phen.name()))
    }

    fn attribution_path(&self, arch: ArchKind) -> PathBuf {
        self.run_dir.join("attribution").join(format!("{}_attribution.json", arch.name()))
    }

    /// Every lesion plan for one architecture:
    /// (condition, scheme, budget, replica, file name).
    fn plan_inventory(&self, arch: ArchKind) -> Vec<(String, LesionScheme, usize, usize, String)> {
        let a = arch.name();
        let cfg = &self.config.lesion;
        let mut out = Vec::new();
        for phen in PHENOTYPES {
            let p = phen.name();
            for &scheme in &cfg.schemes {
                // Target choice is deterministic given the ranking; only
                // re-initializing schemes draw fresh randomness per replica.
                let replicas = if scheme.reinitializes() { cfg.seeds } else { 1 };
                for k in 0..replicas {
                    for &b in &cfg.budgets {
                        out.push((
                            format!("targeted:{p}"),
                            scheme,
                            b,
                            k,
                            format!("{a}_{p}_{}_b{b}_s{k}.json", scheme.name()),
                        ));
                    }
                }
            }
        }
        for &scheme in &cfg.schemes {
            for k in 0..cfg.seeds {
                for &b in &cfg.budgets {
                    out.push((
                        "random".into(),
                        scheme,
                        b,
                        k,
                        format!("{a}_random_{}_b{b}_s{k}.json", scheme.name()),
                    ));
                }
            }
        }
        out
    }

    /// Story-continuation prompts shared by base and fine-tuned models.
    fn style_prompts(&self, vocab: &Vocab) -> Result<Vec<Vec<usize>>> {
        let concrete: Vec<&str> =
            NOUNS.iter().filter(|n| n.field != Field::Abstract).map(|n| n.sg).collect();
        (0..self.config.clinic.style_prompts)
            .map(|i| {
                let noun = concrete[i % concrete.len()];
                let mut tokens = vec![vocab.bos()];
                tokens.extend(vocab.encode(&format!("{STORY_TASK} {noun} {SEP}"))?);
                Ok(tokens)
            })
            .collect()
    }

    // ---- stage bodies ---------------------------------------------------

    fn stage_gen_data(&self) -> Result<Vec<PathBuf>> {
        let d = &self.config.data;
        let mut pretrain = build_grammar_corpus(
            self.seed_for("gen-data", "grammar"),
            d.grammar_sentences,
        );
        pretrain.extend(build_task_corpus(
            self.seed_for("gen-data", "tasks"),
            d.task_repeat,
            d.task_naming_rounds,
            d.task_story,
        ));
        let (broca, wernicke) = build_subtype_corpora(
            self.seed_for("gen-data", "subtype"),
            d.broca_utterances,
            d.wernicke_utterances,
        );
        let pairs =
            build_minimal_pairs(self.seed_for("gen-data", "pairs"), d.pairs_per_phenomenon);
        let bank = match &self.config.clinic.item_bank_path {
            Some(path) => ItemBank::from_json(&std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read item bank {path}: {e}"))
            })?)?,
            None => build_clinical_items(self.seed_for("gen-data", "clinic"), self.config.clinic.items_per_subtest),
        };

        let artifacts = vec![
            self.corpora("pretrain.json"),
            self.corpora("subtype_broca.json"),
            self.corpora("subtype_wernicke.json"),
            self.corpora("pairs.json"),
            self.corpora("item_bank.json"),
        ];
        write_json(&artifacts[0], &pretrain)?;
        write_json(&artifacts[1], &broca)?;
        write_json(&artifacts[2], &wernicke)?;
        write_json(&artifacts[3], &pairs)?;
        write_json(&artifacts[4], &bank)?;
        Ok(artifacts)
    }

    fn encode_lines(&self, vocab: &Vocab, lines: &[String], context_len: usize) -> Result<Vec<Vec<usize>>> {
        lines
            .iter()
            .map(|line| {
                let mut tokens = vec![vocab.bos()];
                tokens.extend(vocab.encode(line)?);
                tokens.push(vocab.eos());
                tokens.truncate(context_len);
                Ok(tokens)
            })
            .collect()
    }

    fn stage_train(&self) -> Result<Vec<PathBuf>> {
        let vocab = Vocab::build();
        let lines: Vec<String> = read_json(&self.corpora("pretrain.json"))?;
        let mut artifacts = Vec::new();
        for &arch in &self.archs {
            let cfg = self.config.model_config(arch, vocab.len());
            let corpus = self.encode_lines(&vocab, &lines, cfg.context_len)?;
            let mut model = Model::build(cfg)?;
            let mut opts = TrainOptions {
                epochs: self.config.train.epochs,
                batch_size: self.config.train.batch_size,
                optimizer: Optimizer::adamw(self.config.train.lr),
                shuffle_seed: self.seed_for("train", arch.name()),
            };
            let report = train(&mut model, &corpus, &mut opts, None)?;
            self.log(&format!(
                "[train] {} losses {:?}",
                arch.name(),
                report.epoch_losses.iter().map(|l| (l * 1e3).round() / 1e3).collect::<Vec<_>>()
            ));
            let ckpt = self.checkpoint(&format!("{}_base.json", arch.name()));
            let rpt = self.checkpoint(&format!("{}_base_report.json", arch.name()));
            model.save(&ckpt)?;
            write_json(&rpt, &report)?;
            artifacts.push(ckpt);
            artifacts.push(rpt);
        }
        Ok(artifacts)
    }

    fn stage_probe(&self) -> Result<Vec<PathBuf>> {
        let vocab = Vocab::build();
        let pairs: Vec<(String, Vec<MinimalPair>)> = read_json(&self.corpora("pairs.json"))?;
        let suites = encode_suites(&vocab, &pairs)?;
        let dir = self.run_dir.join("attribution");
        let mut artifacts = Vec::new();
        for &arch in &self.archs {
            let model = Model::load(&self.checkpoint(&format!("{}_base.json", arch.name())))?;
            let attr = zero_ablation_sweep(&model, &suites)?;
            let stem = format!("{}_attribution", arch.name());
            attr.save(&dir, &stem)?;
            artifacts.push(dir.join(format!("{stem}.csv")));
            artifacts.push(dir.join(format!("{stem}.json")));
        }
        Ok(artifacts)
    }

    fn stage_phenotype(&self) -> Result<Vec<PathBuf>> {
        let vocab = Vocab::build();
        let broca: SubtypeCorpus = read_json(&self.corpora("subtype_broca.json"))?;
        let wernicke: SubtypeCorpus = read_json(&self.corpora("subtype_wernicke.json"))?;
        let dir = self.run_dir.join("phenotype");
        let mut artifacts = Vec::new();

        // Control class: plain grammar sentences from the pre-training
        // corpus (task lines carry angle-bracket markers and are skipped),
        // truncated to the size of the larger phenotype corpus.
        let pretrain: Vec<String> = read_json(&self.corpora("pretrain.json"))?;
        let cap = broca.utterances.len().max(wernicke.utterances.len());
        let standard: Vec<String> =
            pretrain.into_iter().filter(|s| !s.contains('<')).take(cap).collect();
        let classifier = train_style_classifier(
            &broca.utterances,
            &wernicke.utterances,
            &standard,
            self.seed_for("phenotype", "classifier"),
        )?;
        self.log(&format!(
            "[phenotype] style classifier held-out accuracy {:.3}",
            classifier.held_out_accuracy
        ));
        let classifier_path = dir.join("style_classifier.json");
        classifier.save(&classifier_path)?;
        artifacts.push(classifier_path);

        for &arch in &self.archs {
            let base = Model::load(&self.checkpoint(&format!("{}_base.json", arch.name())))?;
            for phen in PHENOTYPES {
                let corpus = match phen {
                    Phenotype::Broca => encode_corpus(&vocab, &broca)?,
                    Phenotype::Wernicke => encode_corpus(&vocab, &wernicke)?,
                };
                for k in 0..self.config.finetune.seeds {
                    let opts = FinetuneOptions {
                        epochs: self.config.finetune.epochs,
                        batch_size: self.config.finetune.batch_size,
                        lr: self.config.finetune.lr,
                        shuffle_seed: self.seed_for(
                            "finetune",
                            &format!("{}/{}/{k}", arch.name(), phen.name()),
                        ),
                    };
                    let (tuned, table) = finetune_with_importance(&base, phen, &corpus, &opts)?;
                    let ckpt = self.tuned_checkpoint(arch, phen, k);
                    tuned.save(&ckpt)?;
                    artifacts.push(ckpt);
                    if k == 0 {
                        let stem = format!("{}_{}_contrib", arch.name(), phen.name());
                        table.save(&dir, &stem)?;
                        artifacts.push(dir.join(format!("{stem}.csv")));
                        artifacts.push(dir.join(format!("{stem}.json")));
                    }
                }
            }
        }
        Ok(artifacts)
    }

    fn stage_align(&self) -> Result<Vec<PathBuf>> {
        let dir = self.run_dir.join("align");
        let mut artifacts = Vec::new();
        for &arch in &self.archs {
            let attr = AttributionMap::load(&self.attribution_path(arch))?;
            for phen in PHENOTYPES {
                let table = ContributionTable::load(&self.contribution_path(arch, phen))?;
                let ranking = table.ranking();
                let matrix = rank_percentile_matrix(
                    phen.name(),
                    &ranking,
                    self.config.align.matrix_percent,
                    &attr,
                    SEMANTIC_TASKS,
                    SYNTACTIC_TASKS,
                )?;
                let stem = format!("{}_{}_matrix", arch.name(), phen.name());
                matrix.save(&dir, &stem)?;
                artifacts.push(dir.join(format!("{stem}.csv")));
                artifacts.push(dir.join(format!("{stem}.json")));

                let sweep = p_sweep(&ranking, &attr, &self.config.align.thresholds)?;
                let sweep_json = dir.join(format!("{}_{}_sweep.json", arch.name(), phen.name()));
                let sweep_csv = dir.join(format!("{}_{}_sweep.csv", arch.name(), phen.name()));
                write_json(&sweep_json, &sweep)?;
                let mut csv = String::from("threshold_percent,rho_vs_reference\n");
                for (t, r) in sweep.thresholds.iter().zip(&sweep.reference_row) {
                    csv.push_str(&format!("{t},{r}\n"));
                }
                atomic_write(&sweep_csv, csv.as_bytes())?;
                artifacts.push(sweep_json);
                artifacts.push(sweep_csv);
            }
        }
        Ok(artifacts)
    }

    fn stage_lesion(&self) -> Result<Vec<PathBuf>> {
        let dir = self.run_dir.join("lesions");
        let cfg = &self.config.lesion;
        let budgets: Vec<Budget> = cfg.budgets.iter().map(|&b| Budget::Count(b)).collect();
        let mut artifacts = Vec::new();
        for &arch in &self.archs {
            let inventory: Vec<_> = {
                let base = Model::load(&self.checkpoint(&format!("{}_base.json", arch.name())))?;
                base.units()
            };
            // Rankings drive the targeted plans.
            let mut rankings = Vec::new();
            for phen in PHENOTYPES {
                let table = ContributionTable::load(&self.contribution_path(arch, phen))?;
                rankings.push((phen, table.ranking()));
            }
            for (condition, scheme, budget, replica, file) in self.plan_inventory(arch) {
                let path = dir.join(&file);
                let plan = if let Some(phen_name) = condition.strip_prefix("targeted:") {
                    let (_, ranking) = rankings
                        .iter()
                        .find(|(p, _)| p.name() == phen_name)
                        .expect("inventory phenotypes are known");
                    let seed = self.seed_for(
                        "lesion",
                        &format!("{}/{}/{}/{replica}", arch.name(), phen_name, scheme.name()),
                    );
                    // Plans at smaller budgets are prefixes of this one;
                    // persisting per budget keeps each file self-contained.
                    let plans =
                        make_progressive_plans(ranking, &budgets, scheme, seed)?;
                    plans
                        .into_iter()
                        .find(|p| p.targets.len() == budget)
                        .expect("budget present in progression")
                } else {
                    let seed = self.seed_for(
                        "lesion",
                        &format!("{}/random/{}/{budget}/{replica}", arch.name(), scheme.name()),
                    );
                    make_random_plan(&inventory, Budget::Count(budget), scheme, seed)?
                };
                plan.save(&path)?;
                artifacts.push(path);
            }
        }
        Ok(artifacts)
    }

    fn stage_evaluate(&self) -> Result<Vec<PathBuf>> {
        let vocab = Vocab::build();
        let bank: ItemBank = read_json(&self.corpora("item_bank.json"))?;
        let clinic_dir = self.run_dir.join("clinic");
        let lesions_dir = self.run_dir.join("lesions");
        let mut artifacts = Vec::new();

        let classifier =
            StyleClassifier::load(&self.run_dir.join("phenotype/style_classifier.json"))?;
        let prompts = self.style_prompts(&vocab)?;

        for &arch in &self.archs {
            let base = Model::load(&self.checkpoint(&format!("{}_base.json", arch.name())))?;
            let intact = run_wab(&base, &vocab, &bank)?;
            self.log(&format!("[evaluate] {} intact AQ {:.2}", arch.name(), intact.aq));

            let inventory = self.plan_inventory(arch);
            // Batteries are independent; results land in inventory order,
            // so the table is identical for any worker count.
            let lesioned: Vec<Result<(DoseResponseRow, WabScorecard)>> = inventory
                .par_iter()
                .map(|(condition, scheme, budget, replica, file)| {
                    let plan = LesionPlan::load(&lesions_dir.join(file))?;
                    let model = apply_lesion(&base, &plan)?;
                    let card = run_wab(&model, &vocab, &bank)?;
                    Ok((
                        DoseResponseRow {
                            condition: condition.clone(),
                            scheme: scheme.name().into(),
                            budget: *budget,
                            seed: *replica as u64,
                            aq: card.aq,
                        },
                        card,
                    ))
                })
                .collect();
            let mut rows = vec![DoseResponseRow {
                condition: "intact".into(),
                scheme: "none".into(),
                budget: 0,
                seed: 0,
                aq: intact.aq,
            }];
            let mut worst_card: Option<(usize, WabScorecard)> = None;
            for item in lesioned {
                let (row, card) = item?;
                if row.condition == "targeted:broca"
                    && row.scheme == "zeroing"
                    && worst_card.as_ref().map_or(true, |(b, _)| row.budget > *b)
                {
                    worst_card = Some((row.budget, card));
                }
                rows.push(row);
            }
            let table = DoseResponseTable { rows };
            table.save(&clinic_dir, &format!("{}_dose_response", arch.name()))?;
            artifacts.push(clinic_dir.join(format!("{}_dose_response.csv", arch.name())));
            artifacts.push(clinic_dir.join(format!("{}_dose_response.json", arch.name())));
            let intact_path = clinic_dir.join(format!("{}_intact_card.json", arch.name()));
            write_json(&intact_path, &intact)?;
            artifacts.push(intact_path);
            if let Some((budget, card)) = worst_card {
                let path =
                    clinic_dir.join(format!("{}_lesioned_card_b{budget}.json", arch.name()));
                write_json(&path, &card)?;
                artifacts.push(path);
            }

            // Style consistency of the base model vs each fine-tuned replica.
            let mut style_rows = Vec::new();
            for phen in PHENOTYPES {
                let base_outcome = style_consistency(
                    &base,
                    &vocab,
                    &prompts,
                    &classifier,
                    phen,
                    self.config.clinic.style_max_new_tokens,
                )?;
                style_rows.push((phen.name().to_string(), "base".to_string(), 0usize, base_outcome));
                for k in 0..self.config.finetune.seeds {
                    let tuned = Model::load(&self.tuned_checkpoint(arch, phen, k))?;
                    let outcome = style_consistency(
                        &tuned,
                        &vocab,
                        &prompts,
                        &classifier,
                        phen,
                        self.config.clinic.style_max_new_tokens,
                    )?;
                    style_rows.push((phen.name().to_string(), "tuned".to_string(), k, outcome));
                }
            }
            let style_json = clinic_dir.join(format!("{}_style.json", arch.name()));
            let style_csv = clinic_dir.join(format!("{}_style.csv", arch.name()));
            write_json(&style_json, &style_rows)?;
            let mut csv =
                String::from("phenotype,model,seed,consistency,mean_confidence,empty_generations\n");
            for (phen, which, k, o) in &style_rows {
                csv.push_str(&format!(
                    "{phen},{which},{k},{},{},{}\n",
                    o.consistency, o.mean_confidence, o.empty_generations
                ));
            }
            atomic_write(&style_csv, csv.as_bytes())?;
            artifacts.push(style_json);
            artifacts.push(style_csv);
        }
        Ok(artifacts)
    }

    fn stage_report(&self) -> Result<Vec<PathBuf>> {
        let dir = self.run_dir.join("report");
        let mut artifacts = Vec::new();
        let mut qualitative = String::new();
        let vocab = Vocab::build();

        for &arch in &self.archs {
            let a = arch.name();
            // Unit-by-task ablation heatmap.
            let attr = AttributionMap::load(&self.attribution_path(arch))?;
            let rows: Vec<String> = attr.units.iter().map(|u| u.to_string()).collect();
            let values: Vec<Vec<f64>> = (0..attr.units.len())
                .map(|u| attr.deltas.iter().map(|task_row| task_row[u]).collect())
                .collect();
            let svg = heatmap_svg(
                &format!("{a}: zero-ablation accuracy deltas"),
                &rows,
                &attr.tasks,
                &values,
            )?;
            let path = dir.join(format!("{a}_attribution.svg"));
            atomic_write(&path, svg.as_bytes())?;
            artifacts.push(path);

            // Rank-percentile heatmaps and the threshold-stability chart.
            let mut sweep_series = Vec::new();
            for phen in PHENOTYPES {
                let p = phen.name();
                let matrix: crate::align::RankPercentileMatrix =
                    read_json(&self.run_dir.join(format!("align/{a}_{p}_matrix.json")))?;
                let unit_rows: Vec<String> =
                    matrix.units.iter().map(|u| u.to_string()).collect();
                let svg = heatmap_svg(
                    &format!("{a}/{p}: rank percentile of top units"),
                    &unit_rows,
                    &matrix.columns,
                    &matrix.entries,
                )?;
                let path = dir.join(format!("{a}_{p}_matrix.svg"));
                atomic_write(&path, svg.as_bytes())?;
                artifacts.push(path);

                let sweep: ThresholdSweep =
                    read_json(&self.run_dir.join(format!("align/{a}_{p}_sweep.json")))?;
                sweep_series.push(LineSeries {
                    label: p.to_string(),
                    points: sweep
                        .thresholds
                        .iter()
                        .zip(&sweep.reference_row)
                        .map(|(&t, &r)| (t, r))
                        .collect(),
                });
            }
            let svg = line_chart_svg(
                &format!("{a}: profile stability vs selection threshold"),
                "top-p% threshold",
                "spearman rho vs reference",
                &sweep_series,
            )?;
            let path = dir.join(format!("{a}_sweep.svg"));
            atomic_write(&path, svg.as_bytes())?;
            artifacts.push(path);

            // Dose-response curves: mean AQ per (condition, scheme) over
            // replicas, anchored at the intact point.
            let table: DoseResponseTable =
                read_json(&self.run_dir.join(format!("clinic/{a}_dose_response.json")))?;
            let means = table.seed_means();
            let intact_aq = means
                .iter()
                .find(|(c, _, _, _)| c == "intact")
                .map(|&(_, _, _, aq)| aq)
                .ok_or_else(|| Error::Data("dose-response table lacks an intact row".into()))?;
            let mut curves: std::collections::BTreeMap<String, Vec<(f64, f64)>> =
                std::collections::BTreeMap::new();
            for (condition, scheme, budget, aq) in &means {
                if condition == "intact" {
                    continue;
                }
                curves
                    .entry(format!("{condition}/{scheme}"))
                    .or_insert_with(|| vec![(0.0, intact_aq)])
                    .push((*budget as f64, *aq));
            }
            let series: Vec<LineSeries> = curves
                .into_iter()
                .map(|(label, points)| LineSeries { label, points })
                .collect();
            let svg = line_chart_svg(
                &format!("{a}: AQ under progressive lesions"),
                "lesioned units",
                "mean AQ",
                &series,
            )?;
            let path = dir.join(format!("{a}_aq_curves.svg"));
            atomic_write(&path, svg.as_bytes())?;
            artifacts.push(path);

            // Qualitative excerpts: intact vs lesioned battery answers and
            // base vs fine-tuned story continuations.
            let intact: WabScorecard =
                read_json(&self.run_dir.join(format!("clinic/{a}_intact_card.json")))?;
            qualitative.push_str(&format!(
                "== {a} ==\nintact AQ {:.2} ({:?})\n",
                intact.aq, intact.diagnosis
            ));
            let largest = self.config.lesion.budgets.last().copied().unwrap_or(0);
            let lesioned_path =
                self.run_dir.join(format!("clinic/{a}_lesioned_card_b{largest}.json"));
            if lesioned_path.exists() {
                let card: WabScorecard = read_json(&lesioned_path)?;
                qualitative.push_str(&format!(
                    "{largest}-unit targeted zeroing AQ {:.2} ({:?})\n",
                    card.aq, card.diagnosis
                ));
                for (i, l) in intact.items.iter().zip(&card.items).take(4) {
                    qualitative.push_str(&format!(
                        "  {}: intact {:?} -> lesioned {:?}\n",
                        i.id, i.output, l.output
                    ));
                }
            }
            let base = Model::load(&self.checkpoint(&format!("{a}_base.json")))?;
            let prompts = self.style_prompts(&vocab)?;
            for phen in PHENOTYPES {
                let tuned = Model::load(&self.tuned_checkpoint(arch, phen, 0))?;
                for prompt in prompts.iter().take(2) {
                    let before = base.generate(
                        prompt,
                        vocab.eos(),
                        self.config.clinic.style_max_new_tokens,
                        &UnitOverrideSet::none(),
                    )?;
                    let after = tuned.generate(
                        prompt,
                        vocab.eos(),
                        self.config.clinic.style_max_new_tokens,
                        &UnitOverrideSet::none(),
                    )?;
                    qualitative.push_str(&format!(
                        "  {} story: base {:?} -> tuned {:?}\n",
                        phen.name(),
                        vocab.decode(&before),
                        vocab.decode(&after)
                    ));
                }
            }
            qualitative.push('\n');
        }
        let path = dir.join("qualitative.txt");
        atomic_write(&path, qualitative.as_bytes())?;
        artifacts.push(path);
        Ok(artifacts)
    }
}
