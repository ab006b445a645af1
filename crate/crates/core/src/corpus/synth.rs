//! Synthetic multi-author corpus generator. Authors share a content
//! vocabulary but carry strong lexical habits (a sentence opener, a
//! favorite intensifier, a preferred closer), so attribution classifiers
//! separate them easily and obfuscation quality is measurable.

use rand::Rng;

use crate::corpus::{AuthorCorpus, AuthorId, Document, Sentence};
use crate::{rng, Error, Result};

const OPENERS: [&str; 8] =
    ["well", "folks", "look", "right", "honestly", "listen", "frankly", "indeed"];
const INTENSIFIERS: [&str; 8] =
    ["truly", "really", "quite", "rather", "fairly", "notably", "plainly", "surely"];
const CLOSERS: [&str; 8] =
    ["today", "again", "soon", "later", "nightly", "daily", "weekly", "often"];

const NOUNS: [&str; 12] = [
    "market", "report", "garden", "river", "signal", "engine", "harbor", "ledger", "meadow",
    "circuit", "bridge", "orchard",
];
const VERBS: [&str; 8] = ["moves", "shows", "keeps", "finds", "holds", "takes", "lifts", "turns"];
const ADJECTIVES: [&str; 6] = ["quiet", "bright", "heavy", "simple", "fresh", "steady"];

pub const SENTENCES_PER_DOC: usize = 10;

/// Generate a corpus of `authors` synthetic authors with
/// `sentences_per_author` sentences each, grouped into documents of
/// [`SENTENCES_PER_DOC`]. Deterministic in the seed.
pub fn generate(authors: usize, sentences_per_author: usize, seed: u64) -> Result<AuthorCorpus> {
    if authors < 1 || authors > OPENERS.len() {
        return Err(Error::config(format!(
            "synthetic corpus supports 1..={} authors, requested {authors}",
            OPENERS.len()
        )));
    }
    if sentences_per_author == 0 {
        return Err(Error::config("sentences_per_author must be positive"));
    }
    let mut corpus = AuthorCorpus::default();
    for a in 0..authors {
        let author = AuthorId(format!("author{a:02}"));
        corpus.authors.push(author.clone());
        let mut doc_sentences: Vec<Sentence> = Vec::new();
        let mut doc_index = 0usize;
        for si in 0..sentences_per_author {
            let mut r = rng::stream_at(seed, "synth", a as u64, si as u64);
            let text = sentence_for(a, &mut r);
            let doc_id = format!("doc{doc_index:03}");
            doc_sentences.push(Sentence { author: author.clone(), doc_id, text });
            if doc_sentences.len() == SENTENCES_PER_DOC || si + 1 == sentences_per_author {
                corpus.docs.push(Document {
                    author: author.clone(),
                    doc_id: format!("doc{doc_index:03}"),
                    sentences: std::mem::take(&mut doc_sentences),
                });
                doc_index += 1;
            }
        }
    }
    Ok(corpus)
}

fn pick<'a>(r: &mut rand_chacha::ChaCha8Rng, options: &[&'a str]) -> &'a str {
    options[r.gen_range(0..options.len())]
}

fn sentence_for(author: usize, r: &mut rand_chacha::ChaCha8Rng) -> String {
    let opener = OPENERS[author];
    let intens = INTENSIFIERS[author];
    // preferred closer most of the time, any closer otherwise
    let closer = if r.gen_bool(0.6) { CLOSERS[author] } else { pick(r, &CLOSERS) };
    let noun1 = pick(r, &NOUNS);
    let noun2 = pick(r, &NOUNS);
    let verb = pick(r, &VERBS);
    let adj = pick(r, &ADJECTIVES);
    match r.gen_range(0..5) {
        0 => format!("{opener} , the {adj} {noun1} {verb} the {noun2} {closer} ."),
        1 => format!("{opener} , this {noun1} {intens} {verb} the {adj} {noun2} ."),
        2 => format!("{opener} , [PERSON] said the {noun1} {verb} the {noun2} {closer} ."),
        3 => format!("{opener} , the {noun1} near the {noun2} {intens} {verb} {closer} ."),
        _ => format!("{opener} , [ORG] reports the {adj} {noun1} {verb} {closer} ."),
    }
}

/// Write the corpus as a directory tree `<out>/<author>/<doc>.txt`.
pub fn write_to_dir(corpus: &AuthorCorpus, out: &std::path::Path) -> Result<()> {
    for doc in &corpus.docs {
        let dir = out.join(&doc.author.0);
        std::fs::create_dir_all(&dir)?;
        let text: String = doc
            .sentences
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        std::fs::write(dir.join(format!("{}.txt", doc.doc_id)), text)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ingest_corpus, MIN_SENTENCE_CHARS};

    #[test]
    fn generation_is_deterministic_and_counts_match() {
        let a = generate(3, 25, 7).unwrap();
        let b = generate(3, 25, 7).unwrap();
        assert_eq!(a.sentence_count(), 75);
        let texts = |c: &AuthorCorpus| {
            c.sentences().map(|s| s.text.clone()).collect::<Vec<_>>()
        };
        assert_eq!(texts(&a), texts(&b));
        // different seed differs
        let c = generate(3, 25, 8).unwrap();
        assert_ne!(texts(&a), texts(&c));
    }

    #[test]
    fn every_sentence_is_long_enough_and_openers_mark_authors() {
        let corpus = generate(5, 40, 3).unwrap();
        for s in corpus.sentences() {
            assert!(s.text.chars().count() >= MIN_SENTENCE_CHARS);
            let first = s.text.split_whitespace().next().unwrap();
            let author_idx: usize = s.author.0[6..].parse().unwrap();
            assert_eq!(first, OPENERS[author_idx]);
        }
    }

    #[test]
    fn round_trips_through_the_directory_format() {
        let tmp = tempfile::tempdir().unwrap();
        let corpus = generate(2, 20, 5).unwrap();
        write_to_dir(&corpus, tmp.path()).unwrap();
        let loaded = ingest_corpus(tmp.path(), None).unwrap();
        assert_eq!(loaded.authors.len(), 2);
        assert_eq!(loaded.sentence_count(), corpus.sentence_count());
        let orig: Vec<String> = corpus.sentences().map(|s| s.text.clone()).collect();
        let got: Vec<String> = loaded.sentences().map(|s| s.text.clone()).collect();
        assert_eq!(orig, got);
    }

    #[test]
    fn too_many_authors_is_a_config_error() {
        assert!(generate(9, 10, 0).is_err());
    }
}
