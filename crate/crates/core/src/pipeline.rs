//! Scripted pipeline entry points behind the CLI: data preparation,
//! vocabulary building, training, rewriting, evaluation, and baselines.
//! Every run resolves its configuration first and writes a manifest before
//! any long-running phase, so a run can be reproduced from one file.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::adversaries::{FluencyCriticConfig, StyleCriticConfig};
use crate::baselines::{
    genetic_baseline, synonym_baseline, word_frequencies, GeneticConfig, SynonymLexicon,
    WordInventory,
};
use crate::corpus::{
    ingest_corpus, parse_annotations, read_sentence_file, split_corpus, synth, write_sentence_file,
    AuthorCorpus, Sentence, SplitSpec,
};
use crate::evaluator::{
    evaluate_original, evaluate_system, train_attackers, train_ppl_lm, AttackClassifier,
    AttackerConfig, AttackerKind, CausalLm, EvalReport, LmConfig, WordEmbedder,
};
use crate::generator::{pretrain_mle, Generator, GeneratorConfig, SamplingSchedule};
use crate::objectives::LossWeights;
use crate::tokenizer::{embedding::SkipGramConfig, encode, EmbeddingTable, Vocab};
use crate::trainer::{checkpoint, Alternation, ModelSpec, TrainConfig};
use crate::{rng, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitMode {
    Closed,
    Open,
}

impl SplitMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "closed" => Ok(SplitMode::Closed),
            "open" => Ok(SplitMode::Open),
            other => Err(Error::config(format!("unknown mode {other:?}, expected closed|open"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SplitMode::Closed => "closed",
            SplitMode::Open => "open",
        }
    }
}

/// Every tunable of the pipeline, resolvable from a flat `key=value` file
/// with flag overrides on top.
#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub seed: u64,
    pub mode: SplitMode,
    // data
    pub closed_ratios: [f64; 3],
    pub open_counts: [usize; 3],
    // tokenizer
    pub vocab_size: usize,
    pub d_emb: usize,
    pub max_len: usize,
    pub embedding_epochs: usize,
    // generator
    pub d_model: usize,
    pub heads: usize,
    pub ffn: usize,
    pub blocks: usize,
    // critics
    pub critic_channels: usize,
    pub critic_blocks: usize,
    pub critic_kernel: usize,
    pub fluency_hidden: usize,
    // adversarial training
    pub weights: LossWeights,
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// When unset, resolves to 15000 (closed) or 14000 (open).
    pub total_updates: Option<u64>,
    pub batch_size: usize,
    pub checkpoint_every: u64,
    pub alternation: Alternation,
    pub grad_clip: f64,
    pub content_pool: usize,
    pub content_stride: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub pretrain_target_accuracy: f64,
    pub sampling_ramp_end: f64,
    pub verify_epochs: usize,
    pub verify_lr: f64,
    // evaluation
    pub attacker_hidden: usize,
    pub attacker_epochs: usize,
    pub attacker_lr: f64,
    pub attacker_patience: usize,
    pub lm_epochs: usize,
    pub lm_lr: f64,
    // baselines
    pub synonym_threshold: f64,
    /// Optional user lexicon; the bundled one is used when unset.
    pub lexicon_path: Option<PathBuf>,
    pub genetic: GeneticConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            mode: SplitMode::Closed,
            closed_ratios: [0.70, 0.15, 0.15],
            open_counts: [3, 1, 1],
            vocab_size: 8000,
            d_emb: 128,
            max_len: 32,
            embedding_epochs: 8,
            d_model: 128,
            heads: 4,
            ffn: 256,
            blocks: 4,
            critic_channels: 128,
            critic_blocks: 3,
            critic_kernel: 3,
            fluency_hidden: 128,
            weights: LossWeights::default(),
            lr_gen: 0.00008,
            lr_disc: 0.0004,
            beta1: 0.5,
            beta2: 0.9,
            total_updates: None,
            batch_size: 16,
            checkpoint_every: 1000,
            alternation: Alternation::FluencyWithGenerator,
            grad_clip: 5.0,
            content_pool: 3,
            content_stride: 2,
            pretrain_epochs: 30,
            pretrain_lr: 1e-3,
            pretrain_target_accuracy: 0.97,
            sampling_ramp_end: 0.5,
            verify_epochs: 20,
            verify_lr: 3e-3,
            attacker_hidden: 64,
            attacker_epochs: 40,
            attacker_lr: 5e-3,
            attacker_patience: 6,
            lm_epochs: 15,
            lm_lr: 2e-3,
            synonym_threshold: 0.01,
            lexicon_path: None,
            genetic: GeneticConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn resolved_total_updates(&self) -> u64 {
        self.total_updates.unwrap_or(match self.mode {
            SplitMode::Closed => 15_000,
            SplitMode::Open => 14_000,
        })
    }

    /// Apply one `key=value` setting. Unknown keys are config errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>()
                .map_err(|e| Error::config(format!("bad value for {key}: {v:?} ({e})")))
        }
        match key {
            "seed" => self.seed = p(key, value)?,
            "mode" => self.mode = SplitMode::parse(value)?,
            "closed_ratio_train" => self.closed_ratios[0] = p(key, value)?,
            "closed_ratio_validation" => self.closed_ratios[1] = p(key, value)?,
            "closed_ratio_test" => self.closed_ratios[2] = p(key, value)?,
            "open_train_authors" => self.open_counts[0] = p(key, value)?,
            "open_validation_authors" => self.open_counts[1] = p(key, value)?,
            "open_test_authors" => self.open_counts[2] = p(key, value)?,
            "vocab_size" => self.vocab_size = p(key, value)?,
            "d_emb" => self.d_emb = p(key, value)?,
            "max_len" => self.max_len = p(key, value)?,
            "embedding_epochs" => self.embedding_epochs = p(key, value)?,
            "d_model" => self.d_model = p(key, value)?,
            "heads" => self.heads = p(key, value)?,
            "ffn" => self.ffn = p(key, value)?,
            "blocks" => self.blocks = p(key, value)?,
            "critic_channels" => self.critic_channels = p(key, value)?,
            "critic_blocks" => self.critic_blocks = p(key, value)?,
            "critic_kernel" => self.critic_kernel = p(key, value)?,
            "fluency_hidden" => self.fluency_hidden = p(key, value)?,
            "style_weight" => self.weights.style = p(key, value)?,
            "fluency_weight" => self.weights.fluency = p(key, value)?,
            "content_weight" => self.weights.content = p(key, value)?,
            "gp_weight" => self.weights.grad_penalty = p(key, value)?,
            "temperature" => self.weights.temperature = p(key, value)?,
            "interp_mix" => self.weights.interp_mix = p(key, value)?,
            "lr_gen" => self.lr_gen = p(key, value)?,
            "lr_disc" => self.lr_disc = p(key, value)?,
            "beta1" => self.beta1 = p(key, value)?,
            "beta2" => self.beta2 = p(key, value)?,
            "total_updates" => self.total_updates = Some(p(key, value)?),
            "batch_size" => self.batch_size = p(key, value)?,
            "checkpoint_every" => self.checkpoint_every = p(key, value)?,
            "alternation" => {
                self.alternation = match value {
                    "fluency_with_generator" => Alternation::FluencyWithGenerator,
                    "style_with_generator" => Alternation::StyleWithGenerator,
                    other => {
                        return Err(Error::config(format!(
                            "unknown alternation {other:?}"
                        )))
                    }
                }
            }
            "grad_clip" => self.grad_clip = p(key, value)?,
            "content_pool" => self.content_pool = p(key, value)?,
            "content_stride" => self.content_stride = p(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = p(key, value)?,
            "pretrain_lr" => self.pretrain_lr = p(key, value)?,
            "pretrain_target_accuracy" => self.pretrain_target_accuracy = p(key, value)?,
            "sampling_ramp_end" => self.sampling_ramp_end = p(key, value)?,
            "verify_epochs" => self.verify_epochs = p(key, value)?,
            "verify_lr" => self.verify_lr = p(key, value)?,
            "attacker_hidden" => self.attacker_hidden = p(key, value)?,
            "attacker_epochs" => self.attacker_epochs = p(key, value)?,
            "attacker_lr" => self.attacker_lr = p(key, value)?,
            "attacker_patience" => self.attacker_patience = p(key, value)?,
            "lm_epochs" => self.lm_epochs = p(key, value)?,
            "lm_lr" => self.lm_lr = p(key, value)?,
            "synonym_threshold" => self.synonym_threshold = p(key, value)?,
            "lexicon_path" => {
                self.lexicon_path =
                    if value.is_empty() { None } else { Some(PathBuf::from(value)) }
            }
            "genetic_population" => self.genetic.population = p(key, value)?,
            "genetic_replacements" => self.genetic.replacements = p(key, value)?,
            "genetic_iterations" => self.genetic.iterations = p(key, value)?,
            "genetic_neighbors" => self.genetic.neighbors = p(key, value)?,
            "genetic_content_weight" => self.genetic.content_weight = p(key, value)?,
            "genetic_attack_weight" => self.genetic.attack_weight = p(key, value)?,
            other => return Err(Error::config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Load a flat `key=value` file (comments with `#`, blank lines ok).
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::path(path, format!("cannot read config: {e}")))?;
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(Error::Parse {
                line: idx + 1,
                reason: "expected key=value".to_string(),
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// All resolved values as sorted `key=value` lines (manifest body).
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv: Vec<(String, String)> = vec![
            ("seed".into(), self.seed.to_string()),
            ("mode".into(), self.mode.name().into()),
            ("closed_ratio_train".into(), self.closed_ratios[0].to_string()),
            ("closed_ratio_validation".into(), self.closed_ratios[1].to_string()),
            ("closed_ratio_test".into(), self.closed_ratios[2].to_string()),
            ("open_train_authors".into(), self.open_counts[0].to_string()),
            ("open_validation_authors".into(), self.open_counts[1].to_string()),
            ("open_test_authors".into(), self.open_counts[2].to_string()),
            ("vocab_size".into(), self.vocab_size.to_string()),
            ("d_emb".into(), self.d_emb.to_string()),
            ("max_len".into(), self.max_len.to_string()),
            ("embedding_epochs".into(), self.embedding_epochs.to_string()),
            ("d_model".into(), self.d_model.to_string()),
            ("heads".into(), self.heads.to_string()),
            ("ffn".into(), self.ffn.to_string()),
            ("blocks".into(), self.blocks.to_string()),
            ("critic_channels".into(), self.critic_channels.to_string()),
            ("critic_blocks".into(), self.critic_blocks.to_string()),
            ("critic_kernel".into(), self.critic_kernel.to_string()),
            ("fluency_hidden".into(), self.fluency_hidden.to_string()),
            ("style_weight".into(), self.weights.style.to_string()),
            ("fluency_weight".into(), self.weights.fluency.to_string()),
            ("content_weight".into(), self.weights.content.to_string()),
            ("gp_weight".into(), self.weights.grad_penalty.to_string()),
            ("temperature".into(), self.weights.temperature.to_string()),
            ("interp_mix".into(), self.weights.interp_mix.to_string()),
            ("lr_gen".into(), self.lr_gen.to_string()),
            ("lr_disc".into(), self.lr_disc.to_string()),
            ("beta1".into(), self.beta1.to_string()),
            ("beta2".into(), self.beta2.to_string()),
            ("total_updates".into(), self.resolved_total_updates().to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("checkpoint_every".into(), self.checkpoint_every.to_string()),
            (
                "alternation".into(),
                match self.alternation {
                    Alternation::FluencyWithGenerator => "fluency_with_generator".into(),
                    Alternation::StyleWithGenerator => "style_with_generator".into(),
                },
            ),
            ("grad_clip".into(), self.grad_clip.to_string()),
            ("content_pool".into(), self.content_pool.to_string()),
            ("content_stride".into(), self.content_stride.to_string()),
            ("pretrain_epochs".into(), self.pretrain_epochs.to_string()),
            ("pretrain_lr".into(), self.pretrain_lr.to_string()),
            ("pretrain_target_accuracy".into(), self.pretrain_target_accuracy.to_string()),
            ("sampling_ramp_end".into(), self.sampling_ramp_end.to_string()),
            ("verify_epochs".into(), self.verify_epochs.to_string()),
            ("verify_lr".into(), self.verify_lr.to_string()),
            ("attacker_hidden".into(), self.attacker_hidden.to_string()),
            ("attacker_epochs".into(), self.attacker_epochs.to_string()),
            ("attacker_lr".into(), self.attacker_lr.to_string()),
            ("attacker_patience".into(), self.attacker_patience.to_string()),
            ("lm_epochs".into(), self.lm_epochs.to_string()),
            ("lm_lr".into(), self.lm_lr.to_string()),
            ("synonym_threshold".into(), self.synonym_threshold.to_string()),
            (
                "lexicon_path".into(),
                self.lexicon_path
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            ("genetic_population".into(), self.genetic.population.to_string()),
            ("genetic_replacements".into(), self.genetic.replacements.to_string()),
            ("genetic_iterations".into(), self.genetic.iterations.to_string()),
            ("genetic_neighbors".into(), self.genetic.neighbors.to_string()),
            ("genetic_content_weight".into(), self.genetic.content_weight.to_string()),
            ("genetic_attack_weight".into(), self.genetic.attack_weight.to_string()),
        ];
        kv.sort();
        kv
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            d_model: self.d_model,
            heads: self.heads,
            ffn: self.ffn,
            blocks: self.blocks,
            max_len: self.max_len,
            seed: rng::sub_seed(self.seed, "generator"),
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            generator: self.generator_config(),
            style: StyleCriticConfig {
                channels: self.critic_channels,
                kernel: self.critic_kernel,
                blocks: self.critic_blocks,
                max_len: self.max_len,
                seed: rng::sub_seed(self.seed, "style-critic"),
            },
            fluency: FluencyCriticConfig {
                hidden: self.fluency_hidden,
                seed: rng::sub_seed(self.seed, "fluency-critic"),
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            weights: self.weights,
            lr_gen: self.lr_gen,
            lr_disc: self.lr_disc,
            beta1: self.beta1,
            beta2: self.beta2,
            total_updates: self.resolved_total_updates(),
            batch_size: self.batch_size,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            alternation: self.alternation,
            grad_clip: self.grad_clip,
            content_pool: self.content_pool,
            content_stride: self.content_stride,
            mode_collapse_threshold: 0.05,
            pretrain_epochs: self.pretrain_epochs,
            pretrain_lr: self.pretrain_lr,
            pretrain_target_accuracy: self.pretrain_target_accuracy,
            sampling_ramp_end: self.sampling_ramp_end,
            verify_epochs: self.verify_epochs,
            verify_lr: self.verify_lr,
        }
    }

    pub fn attacker_config(&self, label: &str) -> AttackerConfig {
        AttackerConfig {
            hidden: self.attacker_hidden,
            max_len: self.max_len,
            epochs: self.attacker_epochs,
            batch_size: self.batch_size,
            lr: self.attacker_lr,
            patience: self.attacker_patience,
            seed: rng::sub_seed(self.seed, label),
        }
    }
}

/// Write the manifest before the run's long phase: resolved config, paths,
/// tool version, timestamp. Timestamps never influence outputs.
pub fn write_manifest(
    out_dir: &Path,
    command: &str,
    cfg: &PipelineConfig,
    paths: &[(&str, String)],
) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let mut lines = vec![
        format!("command={command}"),
        format!("tool_version={}", env!("CARGO_PKG_VERSION")),
        format!(
            "timestamp_unix={}",
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        ),
    ];
    for (k, v) in paths {
        lines.push(format!("path_{k}={v}"));
    }
    for (k, v) in cfg.to_kv() {
        lines.push(format!("{k}={v}"));
    }
    let path = out_dir.join("manifest.kv");
    std::fs::write(&path, lines.join("\n") + "\n")?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// subcommands

pub fn cmd_synth_corpus(
    authors: usize,
    sentences: usize,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<AuthorCorpus> {
    write_manifest(
        out_dir,
        "synth-corpus",
        cfg,
        &[("out", out_dir.display().to_string()), ("authors", authors.to_string()), ("sentences", sentences.to_string())],
    )?;
    let corpus = synth::generate(authors, sentences, rng::sub_seed(cfg.seed, "synth"))?;
    synth::write_to_dir(&corpus, out_dir)?;
    Ok(corpus)
}

pub fn cmd_prepare_data(
    corpus_dir: &Path,
    annotations: Option<&Path>,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<()> {
    write_manifest(
        out_dir,
        "prepare-data",
        cfg,
        &[
            ("corpus", corpus_dir.display().to_string()),
            ("annotations", annotations.map(|p| p.display().to_string()).unwrap_or_default()),
            ("out", out_dir.display().to_string()),
        ],
    )?;
    let ann = match annotations {
        Some(p) => Some(parse_annotations(p)?),
        None => None,
    };
    let corpus = ingest_corpus(corpus_dir, ann.as_ref())?;
    for w in &corpus.warnings {
        eprintln!("warning: {w}");
    }
    let spec = match cfg.mode {
        SplitMode::Closed => SplitSpec::Closed {
            ratios: cfg.closed_ratios,
            seed: rng::sub_seed(cfg.seed, "split"),
        },
        SplitMode::Open => SplitSpec::Open {
            author_counts: cfg.open_counts,
            seed: rng::sub_seed(cfg.seed, "split"),
        },
    };
    let splits = split_corpus(&corpus, &spec)?;
    for w in &splits.warnings {
        eprintln!("warning: {w}");
    }
    write_sentence_file(&out_dir.join("train.tsv"), &splits.train)?;
    write_sentence_file(&out_dir.join("validation.tsv"), &splits.validation)?;
    write_sentence_file(&out_dir.join("test.tsv"), &splits.test)?;
    Ok(())
}

pub fn cmd_build_vocab(data_dir: &Path, cfg: &PipelineConfig, out_dir: &Path) -> Result<()> {
    write_manifest(
        out_dir,
        "build-vocab",
        cfg,
        &[("data", data_dir.display().to_string()), ("out", out_dir.display().to_string())],
    )?;
    let train = read_sentence_file(&data_dir.join("train.tsv"))?;
    let texts: Vec<String> = train.iter().map(|s| s.text.clone()).collect();
    let vocab = crate::tokenizer::train_vocab(&texts, cfg.vocab_size)?;
    vocab.save(&out_dir.join("vocab.txt"))?;
    let sg = SkipGramConfig {
        dim: cfg.d_emb,
        epochs: cfg.embedding_epochs,
        seed: rng::sub_seed(cfg.seed, "embeddings"),
        ..Default::default()
    };
    let table = EmbeddingTable::train(&texts, &vocab, &sg);
    table.save(&out_dir.join("embeddings.txt"), &vocab)?;
    Ok(())
}

pub fn load_vocab_dir(vocab_dir: &Path, d_emb: usize) -> Result<(Vocab, EmbeddingTable)> {
    let vocab = Vocab::load(&vocab_dir.join("vocab.txt"))?;
    let table = EmbeddingTable::load(&vocab_dir.join("embeddings.txt"), &vocab, d_emb)?;
    Ok((vocab, table))
}

pub fn cmd_pretrain(
    data_dir: &Path,
    vocab_dir: &Path,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<f64> {
    write_manifest(
        out_dir,
        "pretrain",
        cfg,
        &[
            ("data", data_dir.display().to_string()),
            ("vocab", vocab_dir.display().to_string()),
            ("out", out_dir.display().to_string()),
        ],
    )?;
    let (vocab, table) = load_vocab_dir(vocab_dir, cfg.d_emb)?;
    let train = read_sentence_file(&data_dir.join("train.tsv"))?;
    let validation = read_sentence_file(&data_dir.join("validation.tsv"))?;
    let encoded: Vec<_> = train.iter().map(|s| encode(&s.text, &vocab, cfg.max_len)).collect();
    let holdout: Vec<_> =
        validation.iter().map(|s| encode(&s.text, &vocab, cfg.max_len)).collect();
    let holdout_ref = if holdout.is_empty() { &encoded } else { &holdout };
    let mut generator: Generator<f32> =
        Generator::new(table.to_tensor(), cfg.generator_config());
    let steps = (cfg.pretrain_epochs * encoded.len().div_ceil(cfg.batch_size)) as u64;
    let report = pretrain_mle(
        &mut generator,
        &encoded,
        holdout_ref,
        &crate::generator::PretrainConfig {
            schedule: SamplingSchedule::linear(cfg.sampling_ramp_end, steps.max(1)),
            epochs: cfg.pretrain_epochs,
            batch_size: cfg.batch_size,
            lr: cfg.pretrain_lr,
            seed: rng::sub_seed(cfg.seed, "pretrain"),
            target_accuracy: cfg.pretrain_target_accuracy,
            verbose: true,
        },
    )?;
    checkpoint::save_param_set(&out_dir.join("generator.svt"), &generator.params)?;
    println!(
        "pretraining finished after {} epochs: holdout token accuracy {:.4}",
        report.epochs_run, report.holdout_accuracy
    );
    Ok(report.holdout_accuracy)
}

pub fn cmd_train(
    data_dir: &Path,
    vocab_dir: &Path,
    cfg: &PipelineConfig,
    out_dir: &Path,
    resume: bool,
) -> Result<crate::trainer::TrainOutcome> {
    write_manifest(
        out_dir,
        "train",
        cfg,
        &[
            ("data", data_dir.display().to_string()),
            ("vocab", vocab_dir.display().to_string()),
            ("out", out_dir.display().to_string()),
        ],
    )?;
    let (vocab, table) = load_vocab_dir(vocab_dir, cfg.d_emb)?;
    let train = read_sentence_file(&data_dir.join("train.tsv"))?;
    let validation = read_sentence_file(&data_dir.join("validation.tsv"))?;
    let outcome = crate::trainer::train(
        &vocab,
        &table,
        &train,
        &validation,
        &cfg.model_spec(),
        &cfg.train_config(),
        out_dir,
        resume,
    )?;
    println!(
        "training complete: selected checkpoint step_{} ({} checkpoints, reconstruction {:.3})",
        outcome.selected_step,
        outcome.checkpoints.len(),
        outcome.final_accuracy
    );
    Ok(outcome)
}

/// Resolve a model argument to a generator checkpoint file: either a
/// directory containing `generator.svt`, or a training output directory
/// with a `selection.kv` pointing at the chosen step.
pub fn resolve_generator_checkpoint(model: &Path) -> Result<PathBuf> {
    let direct = model.join("generator.svt");
    if direct.is_file() {
        return Ok(direct);
    }
    let selection = model.join("selection.kv");
    if selection.is_file() {
        let kv = checkpoint::read_state(&selection)?;
        let step = kv
            .get("selected_step")
            .ok_or_else(|| Error::validation("selection.kv missing selected_step"))?;
        let path = model.join(format!("step_{step}")).join("generator.svt");
        if path.is_file() {
            return Ok(path);
        }
        return Err(Error::path(path, "selected checkpoint missing"));
    }
    Err(Error::path(model, "no generator.svt or selection.kv found"))
}

pub fn load_generator(
    model: &Path,
    vocab_dir: &Path,
    cfg: &PipelineConfig,
) -> Result<(Generator<f32>, Vocab, EmbeddingTable)> {
    let (vocab, table) = load_vocab_dir(vocab_dir, cfg.d_emb)?;
    let mut generator: Generator<f32> =
        Generator::new(table.to_tensor(), cfg.generator_config());
    let ckpt = resolve_generator_checkpoint(model)?;
    checkpoint::load_param_set(&ckpt, &mut generator.params)?;
    Ok((generator, vocab, table))
}

pub fn cmd_anonymize(
    model: &Path,
    vocab_dir: &Path,
    input: &Path,
    output: &Path,
    cfg: &PipelineConfig,
) -> Result<usize> {
    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let manifest_dir = output.parent().unwrap_or(Path::new("."));
    write_manifest(
        manifest_dir,
        "anonymize",
        cfg,
        &[
            ("model", model.display().to_string()),
            ("in", input.display().to_string()),
            ("out", output.display().to_string()),
        ],
    )?;
    let (generator, vocab, _) = load_generator(model, vocab_dir, cfg)?;
    let text = std::fs::read_to_string(input)
        .map_err(|e| Error::path(input, format!("cannot read input: {e}")))?;
    let lines: Vec<&str> = text.lines().collect();
    let rewritten: Vec<String> = lines
        .par_iter()
        .map(|line| generator.anonymize(line, &vocab).unwrap_or_default())
        .collect();
    std::fs::write(output, rewritten.join("\n") + "\n")?;
    Ok(rewritten.len())
}

pub struct EvaluationArtifacts {
    pub report: EvalReport,
    pub report_path: PathBuf,
}

/// Run the full evaluation protocol and write the report (TSV plus a
/// rendered table next to it).
pub fn cmd_evaluate(
    model: &Path,
    data_dir: &Path,
    vocab_dir: &Path,
    cfg: &PipelineConfig,
    report_path: &Path,
    with_baselines: bool,
) -> Result<EvaluationArtifacts> {
    let out_dir = report_path.parent().unwrap_or(Path::new("."));
    write_manifest(
        out_dir,
        "evaluate",
        cfg,
        &[
            ("model", model.display().to_string()),
            ("data", data_dir.display().to_string()),
            ("report", report_path.display().to_string()),
        ],
    )?;
    let train = read_sentence_file(&data_dir.join("train.tsv"))?;
    let test = read_sentence_file(&data_dir.join("test.tsv"))?;

    // protocol guard runs before any model loading or training
    let (attacker_train, eval_set): (Vec<Sentence>, Vec<Sentence>) = match cfg.mode {
        SplitMode::Closed => (train.clone(), test.clone()),
        SplitMode::Open => {
            let train_authors: std::collections::HashSet<_> =
                train.iter().map(|s| s.author.clone()).collect();
            let overlap: Vec<_> = test
                .iter()
                .map(|s| s.author.clone())
                .filter(|a| train_authors.contains(a))
                .collect();
            if !overlap.is_empty() {
                return Err(Error::validation(format!(
                    "open-set evaluation requires disjoint authors; {} test sentences share authors with the training split",
                    overlap.len()
                )));
            }
            crate::evaluator::open_set_split(&test, rng::sub_seed(cfg.seed, "open-eval"))
        }
    };

    let (generator, vocab, table) = load_generator(model, vocab_dir, cfg)?;
    let tensor = table.to_tensor::<f32>();

    let attackers = train_attackers(
        &attacker_train,
        &vocab,
        &tensor,
        &cfg.attacker_config("eval-attackers"),
    )?;
    let mut judge = CausalLm::new(
        tensor.clone(),
        LmConfig {
            max_len: cfg.max_len,
            seed: rng::sub_seed(cfg.seed, "eval-lm"),
            ..Default::default()
        },
    );
    let train_encoded: Vec<_> =
        train.iter().map(|s| encode(&s.text, &vocab, cfg.max_len)).collect();
    train_ppl_lm(
        &mut judge,
        &train_encoded,
        cfg.lm_epochs,
        cfg.batch_size,
        cfg.lm_lr,
        rng::sub_seed(cfg.seed, "eval-lm-train"),
    )?;
    let embedder = WordEmbedder::new(&vocab, &table);

    let mut rows = vec![evaluate_original(&eval_set, &attackers, &judge, &vocab)?];

    if with_baselines && cfg.mode == SplitMode::Closed {
        // synonym baseline
        let corpus_freq = word_frequencies(&train);
        let lexicon = resolve_lexicon(cfg)?;
        let mut synonym_outputs = Vec::with_capacity(eval_set.len());
        for s in &eval_set {
            let author_train: Vec<Sentence> =
                train.iter().filter(|t| t.author == s.author).cloned().collect();
            let author_freq = word_frequencies(&author_train);
            let rewritten = synonym_baseline(
                &s.text,
                &author_freq,
                &corpus_freq,
                &lexicon,
                &embedder,
                cfg.synonym_threshold,
            );
            synonym_outputs.push((s.clone(), rewritten));
        }
        rows.push(evaluate_system(
            "synonym", &synonym_outputs, &attackers, &judge, &embedder, &vocab,
        )?);

        // genetic baseline against a dedicated CNN, never the evaluators
        let dedicated = {
            let mut clf = AttackClassifier::new(
                AttackerKind::Cnn,
                attackers[0].labels.clone(),
                tensor.clone(),
                cfg.attacker_config("genetic-cnn"),
            );
            let data: Vec<_> = attacker_train
                .iter()
                .map(|s| {
                    let seq = encode(&s.text, &vocab, cfg.max_len);
                    let label = clf.label_index(&s.author).expect("known author");
                    (seq, label)
                })
                .collect();
            crate::evaluator::train_attacker(
                &mut clf,
                &data,
                rng::sub_seed(cfg.seed, "genetic-cnn-train"),
            )?;
            clf
        };
        let inventory = WordInventory::from_sentences(&train, &embedder);
        let genetic_outputs: Vec<(Sentence, String)> = eval_set
            .iter()
            .map(|s| {
                let (text, _status) = genetic_baseline(
                    s, &dedicated, &vocab, &embedder, &inventory, cfg.max_len, &cfg.genetic,
                )?;
                Ok((s.clone(), text))
            })
            .collect::<Result<_>>()?;
        rows.push(evaluate_system(
            "genetic", &genetic_outputs, &attackers, &judge, &embedder, &vocab,
        )?);
    }

    // the adversarially trained system
    let gan_outputs: Vec<(Sentence, String)> = eval_set
        .par_iter()
        .map(|s| {
            let anon = generator.anonymize(&s.text, &vocab).unwrap_or_default();
            (s.clone(), anon)
        })
        .collect();
    rows.push(evaluate_system("gan", &gan_outputs, &attackers, &judge, &embedder, &vocab)?);

    let report = EvalReport { protocol: cfg.mode.name().to_string(), rows };
    if let Some(parent) = report_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(report_path, report.to_tsv())?;
    std::fs::write(report_path.with_extension("txt"), report.render())?;
    Ok(EvaluationArtifacts { report, report_path: report_path.to_path_buf() })
}

fn resolve_lexicon(cfg: &PipelineConfig) -> Result<SynonymLexicon> {
    match &cfg.lexicon_path {
        Some(path) => SynonymLexicon::load(path),
        None => Ok(SynonymLexicon::builtin()),
    }
}

pub enum BaselineKind {
    Synonym,
    Genetic,
}

impl BaselineKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "synonym" => Ok(BaselineKind::Synonym),
            "genetic" => Ok(BaselineKind::Genetic),
            other => Err(Error::config(format!(
                "unknown baseline {other:?}, expected synonym|genetic"
            ))),
        }
    }
}

/// Run one baseline over the test split; writes rewritten sentences and,
/// for the genetic search, a status per line.
pub fn cmd_baseline(
    kind: BaselineKind,
    data_dir: &Path,
    vocab_dir: &Path,
    cfg: &PipelineConfig,
    output: &Path,
) -> Result<()> {
    let out_dir = output.parent().unwrap_or(Path::new("."));
    write_manifest(
        out_dir,
        "baseline",
        cfg,
        &[("data", data_dir.display().to_string()), ("out", output.display().to_string())],
    )?;
    let (vocab, table) = load_vocab_dir(vocab_dir, cfg.d_emb)?;
    let train = read_sentence_file(&data_dir.join("train.tsv"))?;
    let test = read_sentence_file(&data_dir.join("test.tsv"))?;
    let embedder = WordEmbedder::new(&vocab, &table);
    let mut lines = Vec::with_capacity(test.len());
    match kind {
        BaselineKind::Synonym => {
            let corpus_freq = word_frequencies(&train);
            let lexicon = resolve_lexicon(cfg)?;
            for s in &test {
                let author_train: Vec<Sentence> =
                    train.iter().filter(|t| t.author == s.author).cloned().collect();
                let author_freq = word_frequencies(&author_train);
                let rewritten = synonym_baseline(
                    &s.text,
                    &author_freq,
                    &corpus_freq,
                    &lexicon,
                    &embedder,
                    cfg.synonym_threshold,
                );
                lines.push(format!("{}\t{}\t{}", s.author, s.doc_id, rewritten));
            }
        }
        BaselineKind::Genetic => {
            let tensor = table.to_tensor::<f32>();
            let mut labels: Vec<crate::corpus::AuthorId> = Vec::new();
            for s in &train {
                if !labels.contains(&s.author) {
                    labels.push(s.author.clone());
                }
            }
            labels.sort();
            let mut clf = AttackClassifier::new(
                AttackerKind::Cnn,
                labels,
                tensor,
                cfg.attacker_config("genetic-cnn"),
            );
            let data: Vec<_> = train
                .iter()
                .map(|s| {
                    let seq = encode(&s.text, &vocab, cfg.max_len);
                    let label = clf.label_index(&s.author).expect("known author");
                    (seq, label)
                })
                .collect();
            crate::evaluator::train_attacker(
                &mut clf,
                &data,
                rng::sub_seed(cfg.seed, "genetic-cnn-train"),
            )?;
            let inventory = WordInventory::from_sentences(&train, &embedder);
            for s in &test {
                let (text, status) = genetic_baseline(
                    s, &clf, &vocab, &embedder, &inventory, cfg.max_len, &cfg.genetic,
                )?;
                lines.push(format!("{}\t{}\t{}\t{}", s.author, s.doc_id, status.name(), text));
            }
        }
    }
    std::fs::write(output, lines.join("\n") + "\n")?;
    Ok(())
}

/// Read a manifest back as a key/value map (used by tests and tooling).
pub fn read_manifest(path: &Path) -> Result<HashMap<String, String>> {
    checkpoint::read_state(path)
}
