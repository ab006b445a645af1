//! Corpus ingestion and preparation: entity masking, sentence splitting,
//! closed/open splits, and Siamese sentence-pair generation.
//!
//! Expected layout on disk: `<root>/<author_id>/<doc_id>.txt`, UTF-8.
//! Annotations (optional) come as one record per line:
//! `doc_id TAB start TAB end TAB kind` with character offsets.

pub mod synth;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::{rng, Error, Result};

pub const MIN_SENTENCE_CHARS: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AuthorId(pub String);

impl fmt::Display for AuthorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub author: AuthorId,
    pub doc_id: String,
    pub text: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntityKind {
    Gpe,
    Person,
    Org,
    Loc,
}

impl EntityKind {
    pub fn placeholder(self) -> &'static str {
        match self {
            EntityKind::Gpe => "[GPE]",
            EntityKind::Person => "[PERSON]",
            EntityKind::Org => "[ORG]",
            EntityKind::Loc => "[LOC]",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "GPE" => Some(EntityKind::Gpe),
            "PERSON" => Some(EntityKind::Person),
            "ORG" => Some(EntityKind::Org),
            "LOC" => Some(EntityKind::Loc),
            _ => None,
        }
    }
}

/// Character-offset spans for one document.
#[derive(Clone, Debug, Default)]
pub struct EntityAnnotation {
    pub doc_id: String,
    /// (start, end, kind), end exclusive.
    pub spans: Vec<(usize, usize, EntityKind)>,
}

#[derive(Clone, Debug)]
pub struct Document {
    pub author: AuthorId,
    pub doc_id: String,
    pub sentences: Vec<Sentence>,
}

#[derive(Clone, Debug, Default)]
pub struct AuthorCorpus {
    pub authors: Vec<AuthorId>,
    pub docs: Vec<Document>,
    pub warnings: Vec<String>,
}

impl AuthorCorpus {
    pub fn sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.docs.iter().flat_map(|d| d.sentences.iter())
    }

    pub fn sentence_count(&self) -> usize {
        self.docs.iter().map(|d| d.sentences.len()).sum()
    }
}

#[derive(Clone, Debug)]
pub enum SplitSpec {
    /// All authors appear in every split; each author's documents are
    /// partitioned by ratio.
    Closed { ratios: [f64; 3], seed: u64 },
    /// Authors are partitioned; splits share no author.
    Open { author_counts: [usize; 3], seed: u64 },
}

#[derive(Clone, Debug, Default)]
pub struct CorpusSplits {
    pub train: Vec<Sentence>,
    pub validation: Vec<Sentence>,
    pub test: Vec<Sentence>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct PairSet {
    pub pairs: Vec<(Sentence, Sentence, bool)>,
}

/// Split text into sentences on `". "`, `"? "`, `"! "` and newlines,
/// keeping the trailing punctuation. Sentences shorter than
/// [`MIN_SENTENCE_CHARS`] characters are dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            out.push(std::mem::take(&mut current));
            i += 1;
            continue;
        }
        current.push(c);
        if matches!(c, '.' | '?' | '!') && i + 1 < chars.len() && chars[i + 1] == ' ' {
            out.push(std::mem::take(&mut current));
            i += 2;
            continue;
        }
        i += 1;
    }
    if !current.is_empty() {
        out.push(current);
    }
    out.into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| s.chars().count() >= MIN_SENTENCE_CHARS)
        .collect()
}

/// Replace annotated spans with their placeholders, right to left so the
/// earlier offsets stay valid.
pub fn mask_entities(doc_text: &str, annotation: &EntityAnnotation) -> Result<String> {
    let chars: Vec<char> = doc_text.chars().collect();
    let mut spans = annotation.spans.clone();
    spans.sort_by_key(|&(start, _, _)| start);
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(Error::validation(format!(
                "overlapping entity spans {:?} and {:?} in doc {}",
                (w[0].0, w[0].1),
                (w[1].0, w[1].1),
                annotation.doc_id
            )));
        }
    }
    if let Some(&(_, end, _)) = spans.last() {
        if end > chars.len() {
            return Err(Error::validation(format!(
                "span end {end} beyond document length {} in doc {}",
                chars.len(),
                annotation.doc_id
            )));
        }
    }
    let mut out: Vec<char> = chars;
    for &(start, end, kind) in spans.iter().rev() {
        let replacement: Vec<char> = kind.placeholder().chars().collect();
        out.splice(start..end, replacement);
    }
    Ok(out.into_iter().collect())
}

/// Low-fidelity fallback masker for corpora without annotations: maximal
/// runs of capitalized tokens that do not open a sentence become
/// `[PERSON]`. Sentence-initial capitals are exempt, so ordinary sentence
/// casing survives.
pub fn heuristic_mask(doc_text: &str) -> String {
    let tokens: Vec<&str> = doc_text.split_whitespace().collect();
    let mut out: Vec<String> = Vec::with_capacity(tokens.len());
    let mut sentence_start = true;
    let mut i = 0;
    while i < tokens.len() {
        let tok = tokens[i];
        let capitalized = tok.chars().next().is_some_and(|c| c.is_uppercase());
        if capitalized && !sentence_start {
            // extend over the whole capitalized run
            let mut j = i;
            let mut run_ends_sentence = false;
            while j < tokens.len()
                && tokens[j].chars().next().is_some_and(|c| c.is_uppercase())
            {
                run_ends_sentence = ends_sentence(tokens[j]);
                if run_ends_sentence {
                    j += 1;
                    break;
                }
                j += 1;
            }
            let trailing: String = tokens[j - 1]
                .chars()
                .rev()
                .take_while(|c| matches!(c, '.' | ',' | '!' | '?' | ';' | ':'))
                .collect::<Vec<_>>()
                .into_iter()
                .rev()
                .collect();
            out.push(format!("[PERSON]{trailing}"));
            sentence_start = run_ends_sentence;
            i = j;
            continue;
        }
        sentence_start = ends_sentence(tok);
        out.push(tok.to_string());
        i += 1;
    }
    out.join(" ")
}

fn ends_sentence(tok: &str) -> bool {
    tok.ends_with('.') || tok.ends_with('?') || tok.ends_with('!')
}

/// Parse the annotation file: `doc_id TAB start TAB end TAB kind` per line.
pub fn parse_annotations(path: &Path) -> Result<HashMap<String, EntityAnnotation>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::path(path, format!("cannot read annotations: {e}")))?;
    let mut by_doc: HashMap<String, EntityAnnotation> = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 4 {
            return Err(Error::Parse {
                line: idx + 1,
                reason: format!("expected 4 tab-separated fields, got {}", parts.len()),
            });
        }
        let start: usize = parts[1].parse().map_err(|e| Error::Parse {
            line: idx + 1,
            reason: format!("bad start offset: {e}"),
        })?;
        let end: usize = parts[2].parse().map_err(|e| Error::Parse {
            line: idx + 1,
            reason: format!("bad end offset: {e}"),
        })?;
        let kind = EntityKind::parse(parts[3]).ok_or_else(|| Error::Parse {
            line: idx + 1,
            reason: format!("unknown entity kind {:?}", parts[3]),
        })?;
        if end <= start {
            return Err(Error::Parse {
                line: idx + 1,
                reason: format!("empty or inverted span {start}..{end}"),
            });
        }
        let entry = by_doc.entry(parts[0].to_string()).or_insert_with(|| EntityAnnotation {
            doc_id: parts[0].to_string(),
            spans: Vec::new(),
        });
        entry.spans.push((start, end, kind));
    }
    Ok(by_doc)
}

/// Read a corpus tree: one subdirectory per author, plain-text documents
/// inside. Masks entities from the annotation map when given, otherwise
/// with [`heuristic_mask`].
pub fn ingest_corpus(
    root: &Path,
    annotations: Option<&HashMap<String, EntityAnnotation>>,
) -> Result<AuthorCorpus> {
    if !root.is_dir() {
        return Err(Error::path(root, "corpus root is not a directory"));
    }
    let mut author_dirs: Vec<_> = std::fs::read_dir(root)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|e| e.path().is_dir())
        .collect();
    author_dirs.sort_by_key(|e| e.file_name());
    if author_dirs.is_empty() {
        return Err(Error::path(root, "no author directories found"));
    }

    let mut corpus = AuthorCorpus::default();
    for dir in author_dirs {
        let author = AuthorId(dir.file_name().to_string_lossy().into_owned());
        let mut files: Vec<_> = std::fs::read_dir(dir.path())?
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "txt"))
            .collect();
        files.sort();
        if files.is_empty() {
            corpus
                .warnings
                .push(format!("author {author} has no documents; skipped"));
            continue;
        }
        let mut docs = Vec::new();
        for file in files {
            let doc_id = file
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let raw = std::fs::read_to_string(&file)
                .map_err(|e| Error::path(&file, format!("cannot read document: {e}")))?;
            let masked = match annotations {
                Some(map) => match map.get(&doc_id) {
                    Some(ann) => mask_entities(&raw, ann)?,
                    None => raw,
                },
                None => heuristic_mask(&raw),
            };
            let sentences = split_sentences(&masked)
                .into_iter()
                .map(|text| Sentence { author: author.clone(), doc_id: doc_id.clone(), text })
                .collect();
            docs.push(Document { author: author.clone(), doc_id, sentences });
        }
        corpus.authors.push(author);
        corpus.docs.extend(docs);
    }
    Ok(corpus)
}

/// Partition a corpus into train/validation/test.
pub fn split_corpus(corpus: &AuthorCorpus, spec: &SplitSpec) -> Result<CorpusSplits> {
    match spec {
        SplitSpec::Closed { ratios, seed } => split_closed(corpus, *ratios, *seed),
        SplitSpec::Open { author_counts, seed } => split_open(corpus, *author_counts, *seed),
    }
}

fn split_closed(corpus: &AuthorCorpus, ratios: [f64; 3], seed: u64) -> Result<CorpusSplits> {
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split ratios sum to {sum}, expected 1.0")));
    }
    let mut splits = CorpusSplits::default();
    for (author_idx, author) in corpus.authors.iter().enumerate() {
        let mut docs: Vec<&Document> =
            corpus.docs.iter().filter(|d| &d.author == author).collect();
        let mut r = rng::stream_at(seed, "closed-split", author_idx as u64, 0);
        docs.shuffle(&mut r);
        if docs.len() < 3 {
            splits.warnings.push(format!(
                "author {author} has only {} documents; proportional fallback",
                docs.len()
            ));
        }
        // largest-remainder stream: each document goes to the split whose
        // quota is furthest behind; ties rotate with the author index so
        // small per-author counts still cover all three splits overall
        let mut assigned = [0usize; 3];
        for (j, doc) in docs.iter().enumerate() {
            let _ = j;
            let mut best = 0usize;
            let mut best_deficit = f64::NEG_INFINITY;
            for off in 0..3 {
                let k = (off + author_idx) % 3;
                let deficit = ratios[k] * (assigned.iter().sum::<usize>() + 1) as f64
                    - assigned[k] as f64;
                if deficit > best_deficit + 1e-12 {
                    best_deficit = deficit;
                    best = k;
                }
            }
            assigned[best] += 1;
            let bucket = match best {
                0 => &mut splits.train,
                1 => &mut splits.validation,
                _ => &mut splits.test,
            };
            bucket.extend(doc.sentences.iter().cloned());
        }
    }
    Ok(splits)
}

fn split_open(corpus: &AuthorCorpus, counts: [usize; 3], seed: u64) -> Result<CorpusSplits> {
    let total: usize = counts.iter().sum();
    if corpus.authors.len() < total {
        return Err(Error::validation(format!(
            "open split needs {total} authors, corpus has {}",
            corpus.authors.len()
        )));
    }
    if corpus.authors.len() != total {
        return Err(Error::config(format!(
            "open split author counts {counts:?} must sum to the corpus author count {}",
            corpus.authors.len()
        )));
    }
    let mut authors = corpus.authors.clone();
    let mut r = rng::stream(seed, "open-split");
    authors.shuffle(&mut r);
    let train_set: Vec<_> = authors[..counts[0]].to_vec();
    let val_set: Vec<_> = authors[counts[0]..counts[0] + counts[1]].to_vec();
    let test_set: Vec<_> = authors[counts[0] + counts[1]..].to_vec();
    let collect = |set: &[AuthorId]| {
        corpus
            .docs
            .iter()
            .filter(|d| set.contains(&d.author))
            .flat_map(|d| d.sentences.iter().cloned())
            .collect::<Vec<_>>()
    };
    Ok(CorpusSplits {
        train: collect(&train_set),
        validation: collect(&val_set),
        test: collect(&test_set),
        warnings: Vec::new(),
    })
}

/// Generate Siamese sentence pairs: for each anchor, `k_same` partners from
/// the same author (excluding the anchor) and `k_diff` from other authors.
pub fn make_pairs(
    sentences: &[Sentence],
    k_same: usize,
    k_diff: usize,
    seed: u64,
) -> Result<PairSet> {
    let mut by_author: HashMap<&AuthorId, Vec<usize>> = HashMap::new();
    for (i, s) in sentences.iter().enumerate() {
        by_author.entry(&s.author).or_default().push(i);
    }
    if by_author.len() < 2 {
        return Err(Error::validation(
            "pair generation needs at least two authors (different-author pairs are impossible)",
        ));
    }
    for (author, idxs) in &by_author {
        if idxs.len() < k_same + 1 {
            return Err(Error::validation(format!(
                "author {author} has {} sentences, need at least {} for {k_same} same-author pairs",
                idxs.len(),
                k_same + 1
            )));
        }
    }

    let mut pairs = Vec::with_capacity(sentences.len() * (k_same + k_diff));
    for (anchor_idx, anchor) in sentences.iter().enumerate() {
        let mut r = rng::stream_at(seed, "pairs", anchor_idx as u64, 0);
        let same_pool = &by_author[&anchor.author];
        for _ in 0..k_same {
            loop {
                let cand = same_pool[r.gen_range(0..same_pool.len())];
                if cand != anchor_idx {
                    pairs.push((anchor.clone(), sentences[cand].clone(), true));
                    break;
                }
            }
        }
        for _ in 0..k_diff {
            loop {
                let cand = r.gen_range(0..sentences.len());
                if sentences[cand].author != anchor.author {
                    pairs.push((anchor.clone(), sentences[cand].clone(), false));
                    break;
                }
            }
        }
    }
    Ok(PairSet { pairs })
}

/// Write sentences in the emitted format: `author_id TAB doc_id TAB text`.
pub fn write_sentence_file(path: &Path, sentences: &[Sentence]) -> Result<()> {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&s.author.0);
        out.push('\t');
        out.push_str(&s.doc_id);
        out.push('\t');
        out.push_str(&s.text);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_sentence_file(path: &Path) -> Result<Vec<Sentence>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::path(path, format!("cannot read sentence file: {e}")))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.splitn(3, '\t').collect();
        if parts.len() != 3 {
            return Err(Error::Parse {
                line: idx + 1,
                reason: "expected author TAB doc TAB text".to_string(),
            });
        }
        out.push(Sentence {
            author: AuthorId(parts[0].to_string()),
            doc_id: parts[1].to_string(),
            text: parts[2].to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_doc(root: &Path, author: &str, doc: &str, text: &str) {
        let dir = root.join(author);
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join(format!("{doc}.txt")), text).unwrap();
    }

    #[test]
    fn ingest_counts_authors_and_sentences() {
        let tmp = tempfile::tempdir().unwrap();
        write_doc(
            tmp.path(),
            "alice",
            "d1",
            "the first sentence here. the second one follows! is this the third sentence?",
        );
        write_doc(
            tmp.path(),
            "bob",
            "d1",
            "bob writes one sentence. then bob writes another. and a third sentence too.",
        );
        let corpus = ingest_corpus(tmp.path(), None).unwrap();
        assert_eq!(corpus.authors.len(), 2);
        assert_eq!(corpus.sentence_count(), 6);
    }

    #[test]
    fn short_sentences_are_dropped() {
        let sents = split_sentences("Too sho. this sentence is long enough to keep.");
        assert_eq!(sents.len(), 1);
        assert!(sents[0].starts_with("this sentence"));
        // punctuation is preserved
        assert!(sents[0].ends_with('.'));
    }

    #[test]
    fn empty_root_is_a_path_error() {
        let tmp = tempfile::tempdir().unwrap();
        let err = ingest_corpus(tmp.path(), None).unwrap_err();
        assert!(matches!(err, Error::Path { .. }));
    }

    #[test]
    fn mask_entities_replaces_spans_right_to_left() {
        let ann = EntityAnnotation {
            doc_id: "d".to_string(),
            spans: vec![(0, 5, EntityKind::Person), (10, 15, EntityKind::Person)],
        };
        assert_eq!(mask_entities("Smith met Jones", &ann).unwrap(), "[PERSON] met [PERSON]");

        let empty = EntityAnnotation::default();
        assert_eq!(mask_entities("unchanged text", &empty).unwrap(), "unchanged text");

        let loc = EntityAnnotation {
            doc_id: "d".to_string(),
            spans: vec![(3, 8, EntityKind::Loc)],
        };
        assert_eq!(mask_entities("in Paris today", &loc).unwrap(), "in [LOC] today");
    }

    #[test]
    fn overlapping_spans_are_rejected() {
        let ann = EntityAnnotation {
            doc_id: "d".to_string(),
            spans: vec![(0, 5, EntityKind::Person), (3, 8, EntityKind::Org)],
        };
        assert!(mask_entities("abcdefghij", &ann).is_err());
    }

    #[test]
    fn heuristic_masker_rules() {
        assert_eq!(heuristic_mask("we saw John Smith leave"), "we saw [PERSON] leave");
        assert_eq!(heuristic_mask("The start is fine"), "The start is fine");
        assert_eq!(heuristic_mask("all lowercase input"), "all lowercase input");
        // capital after a sentence boundary is exempt again
        assert_eq!(
            heuristic_mask("it ended. Then more text"),
            "it ended. Then more text"
        );
    }

    fn corpus_with(authors: usize, docs: usize, sentences_per_doc: usize) -> AuthorCorpus {
        let mut corpus = AuthorCorpus::default();
        for a in 0..authors {
            let author = AuthorId(format!("author{a}"));
            corpus.authors.push(author.clone());
            for d in 0..docs {
                let doc_id = format!("doc{d}");
                let sentences = (0..sentences_per_doc)
                    .map(|s| Sentence {
                        author: author.clone(),
                        doc_id: doc_id.clone(),
                        text: format!("sentence {s} of doc {d} by author {a} ."),
                    })
                    .collect();
                corpus.docs.push(Document { author: author.clone(), doc_id, sentences });
            }
        }
        corpus
    }

    #[test]
    fn closed_split_partitions_documents_and_fills_all_splits() {
        let corpus = corpus_with(4, 4, 3);
        let spec = SplitSpec::Closed { ratios: [0.70, 0.15, 0.15], seed: 3 };
        let splits = split_corpus(&corpus, &spec).unwrap();
        assert!(!splits.train.is_empty());
        assert!(!splits.validation.is_empty());
        assert!(!splits.test.is_empty());
        // document-level disjointness: a (author, doc) key lives in one split
        let keys = |v: &[Sentence]| {
            v.iter()
                .map(|s| (s.author.clone(), s.doc_id.clone()))
                .collect::<std::collections::HashSet<_>>()
        };
        let (a, b, c) = (keys(&splits.train), keys(&splits.validation), keys(&splits.test));
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        // per author: 4 docs at .75/.15/.15 -> 3 train, 1 elsewhere
        for author in &corpus.authors {
            let count = |v: &[Sentence]| {
                v.iter()
                    .filter(|s| &s.author == author)
                    .map(|s| s.doc_id.clone())
                    .collect::<std::collections::HashSet<_>>()
                    .len()
            };
            assert_eq!(count(&splits.train), 3);
            assert_eq!(count(&splits.validation) + count(&splits.test), 1);
        }
    }

    #[test]
    fn bad_ratios_are_a_config_error() {
        let corpus = corpus_with(2, 2, 2);
        let spec = SplitSpec::Closed { ratios: [0.5, 0.2, 0.2], seed: 0 };
        assert!(matches!(split_corpus(&corpus, &spec), Err(Error::Config(_))));
    }

    #[test]
    fn open_split_authors_are_disjoint() {
        let corpus = corpus_with(5, 2, 2);
        let spec = SplitSpec::Open { author_counts: [3, 1, 1], seed: 11 };
        let splits = split_corpus(&corpus, &spec).unwrap();
        let authors = |v: &[Sentence]| {
            v.iter().map(|s| s.author.clone()).collect::<std::collections::HashSet<_>>()
        };
        let (a, b, c) = (authors(&splits.train), authors(&splits.validation), authors(&splits.test));
        assert_eq!(a.len(), 3);
        assert_eq!(b.len(), 1);
        assert_eq!(c.len(), 1);
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
    }

    #[test]
    fn splits_are_deterministic_in_the_seed() {
        let corpus = corpus_with(5, 4, 2);
        for spec in [
            SplitSpec::Closed { ratios: [0.70, 0.15, 0.15], seed: 7 },
            SplitSpec::Open { author_counts: [3, 1, 1], seed: 7 },
        ] {
            let a = split_corpus(&corpus, &spec).unwrap();
            let b = split_corpus(&corpus, &spec).unwrap();
            assert_eq!(a.train, b.train);
            assert_eq!(a.validation, b.validation);
            assert_eq!(a.test, b.test);
        }
    }

    #[test]
    fn pair_counts_and_labels() {
        let corpus = corpus_with(2, 1, 3);
        let sentences: Vec<Sentence> = corpus.sentences().cloned().collect();
        let pairs = make_pairs(&sentences, 2, 2, 5).unwrap();
        assert_eq!(pairs.pairs.len(), 24);
        let same = pairs.pairs.iter().filter(|(_, _, s)| *s).count();
        assert_eq!(same, 12);
        for (a, b, same) in &pairs.pairs {
            assert_eq!(*same, a.author == b.author);
            if *same {
                assert_ne!(a.text, b.text, "anchor must not pair with itself");
            }
        }
    }

    #[test]
    fn zero_same_pairs_forces_cross_author() {
        let corpus = corpus_with(3, 1, 2);
        let sentences: Vec<Sentence> = corpus.sentences().cloned().collect();
        let pairs = make_pairs(&sentences, 0, 1, 5).unwrap();
        assert_eq!(pairs.pairs.len(), sentences.len());
        assert!(pairs.pairs.iter().all(|(_, _, same)| !same));
    }

    #[test]
    fn single_author_pairs_are_an_error() {
        let corpus = corpus_with(1, 1, 4);
        let sentences: Vec<Sentence> = corpus.sentences().cloned().collect();
        assert!(make_pairs(&sentences, 2, 2, 5).is_err());
    }

    #[test]
    fn sentence_file_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("sents.tsv");
        let sentences = vec![
            Sentence {
                author: AuthorId("a".into()),
                doc_id: "d0".into(),
                text: "first sentence here .".into(),
            },
            Sentence {
                author: AuthorId("b".into()),
                doc_id: "d1".into(),
                text: "second sentence here .".into(),
            },
        ];
        write_sentence_file(&path, &sentences).unwrap();
        assert_eq!(read_sentence_file(&path).unwrap(), sentences);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn pair_generation_properties(
            authors in 2usize..5,
            per_author in 3usize..7,
            k_same in 0usize..3,
            k_diff in 1usize..3,
            seed in proptest::prelude::any::<u64>(),
        ) {
            let corpus = corpus_with(authors, 1, per_author);
            let sentences: Vec<Sentence> = corpus.sentences().cloned().collect();
            let pairs = make_pairs(&sentences, k_same, k_diff, seed).unwrap();
            // size is exactly n * (k_same + k_diff)
            proptest::prop_assert_eq!(pairs.pairs.len(), sentences.len() * (k_same + k_diff));
            // labels always agree with author identity
            for (a, b, same) in &pairs.pairs {
                proptest::prop_assert_eq!(*same, a.author == b.author);
            }
        }
    }

    #[test]
    fn annotation_parse_errors_name_the_line() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("ann.tsv");
        std::fs::write(&path, "doc1\t0\t5\tPERSON\ndoc1\tnot_a_number\t9\tORG\n").unwrap();
        match parse_annotations(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
