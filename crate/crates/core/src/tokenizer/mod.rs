//! Wordpiece subword vocabulary: training, encoding, decoding, and the
//! static embedding table the models share.
//!
//! Merge training scores adjacent piece pairs by their surface adjacency
//! frequency across the corpus (word-initial and word-internal occurrences
//! of the same surface string count together) and merges the most frequent
//! pair until the vocabulary is full. Continuation pieces carry a `##`
//! prefix; every character seen in training is kept as both a bare and a
//! continuation piece, so in-corpus text never produces `<unk>`.

pub mod embedding;

pub use embedding::EmbeddingTable;

use std::collections::HashMap;

use crate::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

pub const SPECIAL_PIECES: [&str; 8] = [
    "<pad>", "<bos>", "<eos>", "<unk>", "[GPE]", "[PERSON]", "[ORG]", "[LOC]",
];

/// Entity placeholders are atomic: they tokenize to a single id.
pub const PLACEHOLDERS: [&str; 4] = ["[GPE]", "[PERSON]", "[ORG]", "[LOC]"];

#[derive(Clone, Debug)]
pub struct Vocab {
    pieces: Vec<String>,
    by_piece: HashMap<String, usize>,
}

/// A sentence as subword token ids: `<bos>` + pieces + `<eos>`, padded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    /// Count of meaningful ids (everything before the padding).
    pub length: usize,
    pub max_len: usize,
}

impl TokenSequence {
    pub fn content_ids(&self) -> &[usize] {
        &self.ids[..self.length]
    }
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn piece(&self, id: usize) -> Option<&str> {
        self.pieces.get(id).map(String::as_str)
    }

    pub fn id(&self, piece: &str) -> Option<usize> {
        self.by_piece.get(piece).copied()
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    fn from_pieces(pieces: Vec<String>) -> Self {
        let by_piece = pieces.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        Vocab { pieces, by_piece }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut out = String::new();
        for p in &self.pieces {
            out.push_str(p);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::path(path, format!("cannot read vocab: {e}")))?;
        let pieces: Vec<String> = text.lines().map(str::to_string).collect();
        if pieces.len() < SPECIAL_PIECES.len() {
            return Err(Error::validation("vocab file shorter than the special-token set"));
        }
        for (i, sp) in SPECIAL_PIECES.iter().enumerate() {
            if pieces[i] != *sp {
                return Err(Error::validation(format!(
                    "vocab file line {i} is {:?}, expected special {sp:?}",
                    pieces[i]
                )));
            }
        }
        Ok(Vocab::from_pieces(pieces))
    }
}

fn strip_continuation(piece: &str) -> &str {
    piece.strip_prefix("##").unwrap_or(piece)
}

/// Split a text into word tokens, treating the entity placeholders as
/// indivisible tokens.
fn word_tokens(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Train a wordpiece vocabulary of at most `vocab_size` pieces.
pub fn train_vocab(sentences: &[String], vocab_size: usize) -> Result<Vocab> {
    // character alphabet (placeholders excluded: they are atomic specials)
    let mut chars: Vec<char> = Vec::new();
    let mut word_counts: HashMap<Vec<String>, usize> = HashMap::new();
    for s in sentences {
        for w in word_tokens(s) {
            if PLACEHOLDERS.contains(&w) {
                continue;
            }
            let mut symbols = Vec::new();
            for (i, c) in w.chars().enumerate() {
                if !chars.contains(&c) {
                    chars.push(c);
                }
                if i == 0 {
                    symbols.push(c.to_string());
                } else {
                    symbols.push(format!("##{c}"));
                }
            }
            *word_counts.entry(symbols).or_insert(0) += 1;
        }
    }
    chars.sort_unstable();

    let alphabet_size = 2 * chars.len();
    let base = SPECIAL_PIECES.len() + alphabet_size;
    if vocab_size < base {
        return Err(Error::config(format!(
            "vocab_size {vocab_size} below alphabet + specials ({base})"
        )));
    }

    let mut pieces: Vec<String> = SPECIAL_PIECES.iter().map(|s| s.to_string()).collect();
    for c in &chars {
        pieces.push(c.to_string());
    }
    for c in &chars {
        pieces.push(format!("##{c}"));
    }

    let mut words: Vec<(Vec<String>, usize)> = {
        let mut v: Vec<_> = word_counts.into_iter().collect();
        v.sort_unstable();
        v
    };

    while pieces.len() < vocab_size {
        // surface-pair adjacency counts
        let mut pair_counts: HashMap<(String, String), usize> = HashMap::new();
        for (symbols, count) in &words {
            for pair in symbols.windows(2) {
                let key = (
                    strip_continuation(&pair[0]).to_string(),
                    strip_continuation(&pair[1]).to_string(),
                );
                *pair_counts.entry(key).or_insert(0) += count;
            }
        }
        let Some(best) = pair_counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        else {
            break;
        };
        if best.1 == 0 {
            break;
        }
        let (left, right) = best.0;

        // apply the merge to every word, preserving continuation prefixes
        let mut new_forms: Vec<String> = Vec::new();
        for (symbols, _) in &mut words {
            let mut merged: Vec<String> = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len()
                    && strip_continuation(&symbols[i]) == left
                    && strip_continuation(&symbols[i + 1]) == right
                {
                    let prefix = if symbols[i].starts_with("##") { "##" } else { "" };
                    let form = format!("{prefix}{left}{right}");
                    if !new_forms.contains(&form) {
                        new_forms.push(form.clone());
                    }
                    merged.push(form);
                    i += 2;
                } else {
                    merged.push(symbols[i].clone());
                    i += 1;
                }
            }
            *symbols = merged;
        }
        new_forms.sort_unstable();
        let room = vocab_size - pieces.len();
        if new_forms.len() > room {
            break;
        }
        for f in new_forms {
            if !pieces.contains(&f) {
                pieces.push(f);
            }
        }
    }

    Ok(Vocab::from_pieces(pieces))
}

/// Greedy longest-match wordpiece encoding of one word.
fn encode_word(word: &str, vocab: &Vocab, out: &mut Vec<usize>) {
    let chars: Vec<char> = word.chars().collect();
    let mut pos = 0;
    while pos < chars.len() {
        let mut len = chars.len() - pos;
        let mut matched = None;
        while len > 0 {
            let cand: String = chars[pos..pos + len].iter().collect();
            let key = if pos == 0 { cand } else { format!("##{cand}") };
            if let Some(id) = vocab.id(&key) {
                matched = Some((id, len));
                break;
            }
            len -= 1;
        }
        match matched {
            Some((id, len)) => {
                out.push(id);
                pos += len;
            }
            None => {
                out.push(UNK);
                pos += 1;
            }
        }
    }
}

/// Encode a sentence: `<bos>` + pieces + `<eos>`, padded to `max_len`.
/// Piece sequences longer than `max_len - 2` are truncated before `<eos>`.
pub fn encode(text: &str, vocab: &Vocab, max_len: usize) -> TokenSequence {
    assert!(max_len >= 2, "max_len must fit <bos> and <eos>");
    let mut piece_ids = Vec::new();
    for w in word_tokens(text) {
        if let Some(id) = vocab.id(w) {
            // whole word is a piece (placeholders land here)
            piece_ids.push(id);
        } else {
            encode_word(w, vocab, &mut piece_ids);
        }
    }
    piece_ids.truncate(max_len - 2);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(BOS);
    ids.extend_from_slice(&piece_ids);
    ids.push(EOS);
    let length = ids.len();
    ids.resize(max_len, PAD);
    TokenSequence { ids, length, max_len }
}

/// Decode ids back to text. Resolves `##` continuations, stops at `<eos>`;
/// a sequence without `<eos>` decodes every non-pad token.
pub fn decode(seq: &TokenSequence, vocab: &Vocab) -> Result<String> {
    let mut out = String::new();
    for &id in &seq.ids {
        if id == EOS {
            break;
        }
        if id == PAD || id == BOS {
            continue;
        }
        let piece = vocab
            .piece(id)
            .ok_or_else(|| Error::validation(format!("token id {id} out of vocab range")))?;
        if let Some(cont) = piece.strip_prefix("##") {
            out.push_str(cont);
        } else {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(piece);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sents(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    /// Brute-force oracle: count surface adjacency frequencies over the raw
    /// words and return the most frequent pair.
    fn most_frequent_surface_pair(words: &[&str]) -> ((String, String), usize) {
        let mut counts: HashMap<(String, String), usize> = HashMap::new();
        for w in words {
            let cs: Vec<char> = w.chars().collect();
            for pair in cs.windows(2) {
                *counts
                    .entry((pair[0].to_string(), pair[1].to_string()))
                    .or_insert(0) += 1;
            }
        }
        counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
            .unwrap()
    }

    #[test]
    fn first_merge_follows_brute_force_pair_frequency() {
        // oracle: "aa" occurs 3 times across {"aaab","aab"}, "ab" twice
        let ((l, r), n) = most_frequent_surface_pair(&["aaab", "aab"]);
        assert_eq!((l.as_str(), r.as_str(), n), ("a", "a", 3));

        // alphabet {a,b} -> 4 base pieces, 8 specials; +2 leaves room for
        // the winning merge "aa" (and one follow-up form)
        let vocab = train_vocab(&sents(&["aaab", "aab"]), 8 + 4 + 2).unwrap();
        assert!(vocab.id("aa").is_some(), "pieces: {:?}", vocab.pieces());
        assert!(vocab.len() <= 14);
    }

    #[test]
    fn vocab_size_below_alphabet_is_a_config_error() {
        let err = train_vocab(&sents(&["abc"]), 8 + 5).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn training_corpus_encodes_with_zero_unk() {
        let corpus = sents(&[
            "the cat sat on the mat .",
            "a dog barked at the cat !",
            "cats and dogs do not mix ,",
        ]);
        let vocab = train_vocab(&corpus, 96).unwrap();
        for s in &corpus {
            let seq = encode(s, &vocab, 64);
            assert!(
                !seq.content_ids().contains(&UNK),
                "unk while encoding {s:?}"
            );
        }
    }

    #[test]
    fn empty_text_is_bos_eos_pad() {
        let vocab = train_vocab(&sents(&["ab"]), 16).unwrap();
        let seq = encode("", &vocab, 5);
        assert_eq!(seq.ids, vec![BOS, EOS, PAD, PAD, PAD]);
        assert_eq!(seq.length, 2);
        assert_eq!(decode(&seq, &vocab).unwrap(), "");
    }

    #[test]
    fn placeholders_stay_atomic() {
        let vocab = train_vocab(&sents(&["x said hello", "[PERSON] said"]), 64).unwrap();
        let seq = encode("[PERSON] said", &vocab, 16);
        assert_eq!(seq.ids[0], BOS);
        assert_eq!(vocab.piece(seq.ids[1]).unwrap(), "[PERSON]");
        // placeholder pieces are never split
        for p in PLACEHOLDERS {
            assert!(vocab.id(p).is_some());
        }
    }

    #[test]
    fn encode_decode_round_trip() {
        let corpus = sents(&["hello brave new world", "the new world says hello"]);
        let vocab = train_vocab(&corpus, 120).unwrap();
        for text in &["hello world", "the brave new world says hello", "new says the"] {
            let seq = encode(text, &vocab, 32);
            assert_eq!(decode(&seq, &vocab).unwrap(), *text);
        }
    }

    #[test]
    fn truncation_keeps_eos() {
        let vocab = train_vocab(&sents(&["a b c d e f g h"]), 40).unwrap();
        let seq = encode("a b c d e f g h", &vocab, 5);
        assert_eq!(seq.ids.len(), 5);
        assert_eq!(seq.ids[0], BOS);
        assert_eq!(seq.ids[4], EOS);
        assert_eq!(seq.length, 5);
    }

    #[test]
    fn decode_without_eos_emits_all_non_pad() {
        let vocab = train_vocab(&sents(&["ab cd"]), 24).unwrap();
        let a = vocab.id("ab").or_else(|| vocab.id("a")).unwrap();
        let seq = TokenSequence { ids: vec![BOS, a, PAD, PAD], length: 2, max_len: 4 };
        let text = decode(&seq, &vocab).unwrap();
        assert!(!text.is_empty());
    }

    #[test]
    fn decode_rejects_out_of_range_ids() {
        let vocab = train_vocab(&sents(&["ab"]), 16).unwrap();
        let seq = TokenSequence { ids: vec![BOS, 9999, EOS], length: 3, max_len: 3 };
        assert!(decode(&seq, &vocab).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(48))]
        #[test]
        fn encode_decode_identity_on_in_alphabet_text(
            words in proptest::collection::vec("[a-e]{1,6}", 1..6)
        ) {
            // alphabet coverage comes from the training corpus
            let vocab = train_vocab(&sents(&["abcde edcba", "ace bdb deed"]), 64).unwrap();
            let text = words.join(" ");
            let seq = encode(&text, &vocab, 2 + text.len());
            proptest::prop_assert_eq!(decode(&seq, &vocab).unwrap(), text);
            // and no unknown tokens appear
            proptest::prop_assert!(!seq.content_ids().contains(&UNK));
        }
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = train_vocab(&sents(&["some words here", "words go here"]), 80).unwrap();
        let path = dir.path().join("vocab.txt");
        vocab.save(&path).unwrap();
        let loaded = Vocab::load(&path).unwrap();
        assert_eq!(loaded.pieces(), vocab.pieces());
    }
}
