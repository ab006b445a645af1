//! Comparison systems: frequency-based synonym replacement and a genetic
//! word-substitution search against a dedicated attack classifier. Both
//! substitute word-for-word, so token counts never change.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;

use crate::corpus::Sentence;
use crate::evaluator::{embed_fscore, AttackClassifier, WordEmbedder};
use crate::numerics::Scalar;
use crate::tokenizer::{encode, Vocab};
use crate::{rng, Error, Result};

/// Word -> candidate synonyms. No word maps to itself.
pub struct SynonymLexicon {
    map: HashMap<String, Vec<String>>,
}

impl SynonymLexicon {
    /// The curated lexicon shipped with the crate (`assets/lexicon.tsv`).
    pub fn builtin() -> Self {
        Self::parse(include_str!("../assets/lexicon.tsv"))
            .expect("the bundled lexicon parses")
    }

    fn parse(text: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (word, rest) = line.split_once('\t').ok_or(Error::Parse {
                line: idx + 1,
                reason: "expected word TAB syn1,syn2,...".to_string(),
            })?;
            let syns: Vec<String> = rest
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty() && *s != word)
                .map(str::to_string)
                .collect();
            if syns.is_empty() {
                return Err(Error::Parse {
                    line: idx + 1,
                    reason: format!("word {word:?} has no usable synonyms"),
                });
            }
            map.insert(word.to_string(), syns);
        }
        Ok(SynonymLexicon { map })
    }

    /// Load `word TAB syn1,syn2,...` lines.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::path(path, format!("cannot read lexicon: {e}")))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut words: Vec<&String> = self.map.keys().collect();
        words.sort();
        let mut out = String::new();
        for w in words {
            out.push_str(w);
            out.push('\t');
            out.push_str(&self.map[w].join(","));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn candidates(&self, word: &str) -> Option<&[String]> {
        self.map.get(word).map(Vec::as_slice)
    }
}

/// Relative word frequencies over a sentence set.
pub fn word_frequencies(sentences: &[Sentence]) -> HashMap<String, f64> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut total = 0usize;
    for s in sentences {
        for w in s.text.split_whitespace() {
            *counts.entry(w.to_string()).or_insert(0) += 1;
            total += 1;
        }
    }
    counts
        .into_iter()
        .map(|(w, c)| (w, c as f64 / total.max(1) as f64))
        .collect()
}

/// Replace words the author uses frequently with the lexicon candidate that
/// maximizes embedding similarity to the original weighted by corpus-level
/// plausibility (the candidate's relative corpus frequency, floored so
/// unseen candidates stay eligible). Words without candidates are kept.
pub fn synonym_baseline(
    sentence: &str,
    author_freq: &HashMap<String, f64>,
    corpus_freq: &HashMap<String, f64>,
    lexicon: &SynonymLexicon,
    embedder: &WordEmbedder<'_>,
    threshold: f64,
) -> String {
    let out: Vec<String> = sentence
        .split_whitespace()
        .map(|word| {
            let freq = author_freq.get(word).copied().unwrap_or(0.0);
            if freq < threshold {
                return word.to_string();
            }
            let Some(cands) = lexicon.candidates(word) else {
                return word.to_string();
            };
            let word_emb = embedder.embed_word(word);
            let mut best: Option<(&str, f64)> = None;
            for cand in cands {
                let sim = crate::numerics::cosine_similarity(
                    &word_emb,
                    &embedder.embed_word(cand),
                )
                .unwrap_or(0.0);
                let plausibility = corpus_freq.get(cand.as_str()).copied().unwrap_or(0.0) + 1e-6;
                // shift similarity to keep the score monotone for negatives
                let score = (sim + 1.0) * plausibility;
                let better = match best {
                    None => true,
                    Some((bw, bs)) => {
                        score > bs + 1e-15 || ((score - bs).abs() <= 1e-15 && cand.as_str() < bw)
                    }
                };
                if better {
                    best = Some((cand, score));
                }
            }
            best.map(|(w, _)| w.to_string()).unwrap_or_else(|| word.to_string())
        })
        .collect();
    out.join(" ")
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct GeneticConfig {
    pub population: usize,
    /// Word positions replaced per mutation.
    pub replacements: usize,
    pub iterations: usize,
    pub content_weight: f64,
    pub attack_weight: f64,
    /// Candidate pool: nearest embedding neighbors per word.
    pub neighbors: usize,
    pub seed: u64,
}

impl Default for GeneticConfig {
    fn default() -> Self {
        GeneticConfig {
            population: 8,
            replacements: 1,
            iterations: 25,
            content_weight: 1.0,
            attack_weight: 2.0,
            neighbors: 6,
            seed: 0,
        }
    }
}

impl GeneticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 || self.replacements == 0 || self.neighbors == 0 {
            return Err(Error::config("genetic config values must be positive"));
        }
        if self.content_weight <= 0.0 || self.attack_weight <= 0.0 {
            return Err(Error::config("genetic fitness weights must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneticStatus {
    Anonymized,
    Failed,
    AlreadySafe,
}

impl GeneticStatus {
    pub fn name(self) -> &'static str {
        match self {
            GeneticStatus::Anonymized => "anonymized",
            GeneticStatus::Failed => "failed",
            GeneticStatus::AlreadySafe => "already-safe",
        }
    }
}

/// Swap pool: the corpus word inventory with embedding neighbors.
pub struct WordInventory {
    words: Vec<String>,
    embeds: Vec<Vec<f64>>,
}

impl WordInventory {
    pub fn from_sentences(sentences: &[Sentence], embedder: &WordEmbedder<'_>) -> Self {
        let mut words: Vec<String> = Vec::new();
        for s in sentences {
            for w in s.text.split_whitespace() {
                if !words.iter().any(|x| x == w) {
                    words.push(w.to_string());
                }
            }
        }
        words.sort();
        let embeds = words.iter().map(|w| embedder.embed_word(w)).collect();
        WordInventory { words, embeds }
    }

    /// The `k` nearest inventory words by cosine, excluding the word itself.
    pub fn nearest(&self, word: &str, embedder: &WordEmbedder<'_>, k: usize) -> Vec<&str> {
        let target = embedder.embed_word(word);
        let mut scored: Vec<(usize, f64)> = self
            .words
            .iter()
            .enumerate()
            .filter(|(_, w)| w.as_str() != word)
            .map(|(i, _)| {
                let sim =
                    crate::numerics::cosine_similarity(&target, &self.embeds[i]).unwrap_or(-1.0);
                (i, sim)
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        scored.into_iter().take(k).map(|(i, _)| self.words[i].as_str()).collect()
    }
}

/// Genetic word-replacement search: population copies of the sentence
/// mutate by nearest-embedding word swaps; fitness trades content match
/// against attacker confidence in the true author. Stops as soon as the
/// attacker misclassifies a copy, or when the iteration budget runs out —
/// in which case the best copy seen is returned.
pub fn genetic_baseline<S: Scalar>(
    sentence: &Sentence,
    attacker: &AttackClassifier<S>,
    vocab: &Vocab,
    embedder: &WordEmbedder<'_>,
    inventory: &WordInventory,
    max_len: usize,
    cfg: &GeneticConfig,
) -> Result<(String, GeneticStatus)> {
    cfg.validate()?;
    let true_label = attacker
        .label_index(&sentence.author)
        .ok_or_else(|| Error::validation(format!("attacker has no label {}", sentence.author)))?;

    let predict_true_prob = |text: &str| -> (bool, f64) {
        let probs = attacker.predict_probs(&encode(text, vocab, max_len));
        let best = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(i, _)| i)
            .unwrap_or(0);
        (best == true_label, probs[true_label])
    };

    let (correct, true_prob) = predict_true_prob(&sentence.text);
    if !correct {
        return Ok((sentence.text.clone(), GeneticStatus::AlreadySafe));
    }

    let fitness_of = |text: &str, true_prob: f64| -> f64 {
        let (_, _, f) = embed_fscore(text, &sentence.text, embedder);
        cfg.content_weight * f + cfg.attack_weight * (1.0 - true_prob)
    };

    let base_fitness = fitness_of(&sentence.text, true_prob);
    let mut population: Vec<(Vec<String>, f64)> = vec![(
        sentence.text.split_whitespace().map(str::to_string).collect(),
        base_fitness,
    )];
    let mut best = population[0].clone();
    let mut r = rng::stream(cfg.seed, "genetic");

    for _iter in 0..cfg.iterations {
        let mut offspring: Vec<(Vec<String>, f64)> = Vec::new();
        for (words, _) in &population {
            for _ in 0..cfg.population {
                let mut mutated = words.clone();
                for _ in 0..cfg.replacements {
                    let pos = r.gen_range(0..mutated.len());
                    let neighbors = inventory.nearest(&mutated[pos], embedder, cfg.neighbors);
                    if neighbors.is_empty() {
                        continue;
                    }
                    mutated[pos] = neighbors[r.gen_range(0..neighbors.len())].to_string();
                }
                let text = mutated.join(" ");
                let (correct, true_prob) = predict_true_prob(&text);
                let fit = fitness_of(&text, true_prob);
                if !correct {
                    return Ok((text, GeneticStatus::Anonymized));
                }
                offspring.push((mutated, fit));
            }
        }
        population.extend(offspring);
        population.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        population.truncate(cfg.population);
        if population[0].1 > best.1 {
            best = population[0].clone();
        }
    }
    Ok((best.0.join(" "), GeneticStatus::Failed))
}
