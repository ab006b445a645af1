//! The evaluation harness: three attack classifiers (anonymity), a
//! corpus-trained language model (fluency), and BLEU plus embedding
//! F-score (content preservation), aggregated into a report table.

pub mod lm;
pub mod metrics;

pub use lm::{perplexity, train_ppl_lm, CausalLm, LmConfig};
pub use metrics::{bleu, embed_fscore, macro_f1, mean_stderr, MetricValue, WordEmbedder};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::corpus::{AuthorId, Sentence};
use crate::numerics::{
    bind, bind_frozen, collect_grads, embed_rows, s, sinusoidal_positions, Adam, Binding, Conv1d,
    GruCell, LayerNorm, Linear, MultiHeadAttention, ParamSet, Scalar, Tape, Tensor, Var,
};
use crate::tokenizer::{encode, TokenSequence, Vocab};
use crate::{rng, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackerKind {
    Rnn,
    Cnn,
    Transformer,
}

impl AttackerKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackerKind::Rnn => "RNN",
            AttackerKind::Cnn => "CNN",
            AttackerKind::Transformer => "Transformer",
        }
    }

    pub const ALL: [AttackerKind; 3] =
        [AttackerKind::Rnn, AttackerKind::Cnn, AttackerKind::Transformer];
}

#[derive(Clone, Debug)]
pub struct AttackerConfig {
    pub hidden: usize,
    pub max_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for AttackerConfig {
    fn default() -> Self {
        AttackerConfig {
            hidden: 64,
            max_len: 32,
            epochs: 40,
            batch_size: 16,
            lr: 5e-3,
            patience: 6,
            seed: 0,
        }
    }
}

enum Arch {
    Rnn { gru: GruCell },
    Cnn { convs: Vec<Conv1d> },
    Transformer { ln1: LayerNorm, attn: MultiHeadAttention, ln2: LayerNorm, ff1: Linear, ff2: Linear },
}

/// Author-attribution classifier in one of the three architectures.
pub struct AttackClassifier<S: Scalar> {
    pub kind: AttackerKind,
    pub params: ParamSet<S>,
    pub labels: Vec<AuthorId>,
    cfg: AttackerConfig,
    embed: Tensor<S>,
    input_proj: Option<Linear>,
    posenc: Tensor<S>,
    arch: Arch,
    fc1: Linear,
    fc2: Linear,
}

impl<S: Scalar> AttackClassifier<S> {
    pub fn new(
        kind: AttackerKind,
        labels: Vec<AuthorId>,
        embed_table: Tensor<S>,
        cfg: AttackerConfig,
    ) -> Self {
        let d_emb = embed_table.shape()[1];
        let h = cfg.hidden;
        let n = labels.len();
        let mut r = rng::stream(cfg.seed, &format!("attacker-{}", kind.name()));
        let mut ps = ParamSet::new();
        let (arch, input_proj, feat_dim) = match kind {
            AttackerKind::Rnn => {
                (Arch::Rnn { gru: GruCell::new(&mut ps, "gru", d_emb, h, &mut r) }, None, h)
            }
            AttackerKind::Cnn => {
                let convs = [3usize, 4, 5]
                    .iter()
                    .map(|&k| Conv1d::new(&mut ps, &format!("conv{k}"), k, d_emb, h, &mut r))
                    .collect();
                (Arch::Cnn { convs }, None, 3 * h)
            }
            AttackerKind::Transformer => {
                let proj = Linear::new(&mut ps, "input_proj", d_emb, h, &mut r);
                let arch = Arch::Transformer {
                    ln1: LayerNorm::new(&mut ps, "ln1", h),
                    attn: MultiHeadAttention::new(&mut ps, "attn", h, 4, &mut r),
                    ln2: LayerNorm::new(&mut ps, "ln2", h),
                    ff1: Linear::new(&mut ps, "ff1", h, 2 * h, &mut r),
                    ff2: Linear::new(&mut ps, "ff2", 2 * h, h, &mut r),
                };
                (arch, Some(proj), h)
            }
        };
        let fc1 = Linear::new(&mut ps, "fc1", feat_dim, h, &mut r);
        let fc2 = Linear::new(&mut ps, "fc2", h, n, &mut r);
        let posenc = sinusoidal_positions(cfg.max_len, h);
        AttackClassifier {
            kind,
            params: ps,
            labels,
            cfg,
            embed: embed_table,
            input_proj,
            posenc,
            arch,
            fc1,
            fc2,
        }
    }

    fn logits(&self, t: &mut Tape<S>, bp: &Binding, seq: &TokenSequence) -> Var {
        let len = seq.length;
        let x = t.constant(embed_rows(&self.embed, &seq.ids[..len]));
        let features = match &self.arch {
            Arch::Rnn { gru } => {
                let mut h = gru.initial_state(t);
                let mut states = Vec::with_capacity(len);
                for pos in 0..len {
                    let row = t.slice_rows(x, pos, 1);
                    h = gru.step(t, bp, row, h);
                    states.push(h);
                }
                let all = t.concat_rows(&states);
                t.mean_rows(all)
            }
            Arch::Cnn { convs } => {
                let mut pooled = Vec::with_capacity(convs.len());
                for conv in convs {
                    let y = conv.forward(t, bp, x);
                    let y = t.relu(y);
                    pooled.push(t.max_rows(y));
                }
                t.concat_cols(&pooled)
            }
            Arch::Transformer { ln1, attn, ln2, ff1, ff2 } => {
                let proj = self.input_proj.as_ref().expect("transformer has a projection");
                let mut h = proj.forward(t, bp, x);
                let pe = {
                    let d = self.cfg.hidden;
                    let mut data = Vec::with_capacity(len * d);
                    for p in 0..len {
                        data.extend_from_slice(self.posenc.row(p));
                    }
                    t.constant(Tensor::from_vec(vec![len, d], data))
                };
                h = t.add(h, pe);
                let normed = ln1.forward(t, bp, h);
                let attended = attn.forward(t, bp, normed, normed, None);
                h = t.add(h, attended);
                let normed = ln2.forward(t, bp, h);
                let ff = ff1.forward(t, bp, normed);
                let ff = t.relu(ff);
                let ff = ff2.forward(t, bp, ff);
                h = t.add(h, ff);
                t.mean_rows(h)
            }
        };
        let hid = self.fc1.forward(t, bp, features);
        let hid = t.relu(hid);
        self.fc2.forward(t, bp, hid)
    }

    /// Class probabilities for one sequence.
    pub fn predict_probs(&self, seq: &TokenSequence) -> Vec<f64> {
        let mut t = Tape::new();
        let bp = bind_frozen(&mut t, &self.params);
        let logits = self.logits(&mut t, &bp, seq);
        let probs = t.softmax_rows(logits);
        t.value(probs).data().iter().map(|v| v.as_f64()).collect()
    }

    pub fn predict(&self, seq: &TokenSequence) -> AuthorId {
        let probs = self.predict_probs(seq);
        let mut best = 0usize;
        for (i, &p) in probs.iter().enumerate().skip(1) {
            if p > probs[best] {
                best = i;
            }
        }
        self.labels[best].clone()
    }

    pub fn label_index(&self, author: &AuthorId) -> Option<usize> {
        self.labels.iter().position(|a| a == author)
    }
}

/// Train one classifier on (sequence, label-index) data with early stopping
/// on a held-out tenth.
pub fn train_attacker<S: Scalar>(
    clf: &mut AttackClassifier<S>,
    data: &[(TokenSequence, usize)],
    seed: u64,
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::validation("attacker training needs data"));
    }
    let mut shuffled: Vec<usize> = (0..data.len()).collect();
    {
        let mut r = rng::stream(seed, "attacker-split");
        shuffled.shuffle(&mut r);
    }
    let holdout_n = (data.len() / 10).max(1);
    let (holdout_idx, train_idx) = shuffled.split_at(holdout_n);

    let mut adam = Adam::new(clf.cfg.lr, 0.9, 0.999, &clf.params);
    let mut best = f64::INFINITY;
    let mut patience = 0usize;
    // recurrent models can sit on a long plateau before breaking out, so
    // patience only counts after a warmup of half the epoch budget
    let min_epochs = clf.cfg.epochs / 2;
    for epoch in 0..clf.cfg.epochs {
        let mut order = train_idx.to_vec();
        let mut r = rng::stream_at(seed, "attacker-shuffle", epoch as u64, 0);
        order.shuffle(&mut r);
        for chunk in order.chunks(clf.cfg.batch_size) {
            let grads: Vec<Vec<Tensor<S>>> = chunk
                .par_iter()
                .map(|&i| {
                    let (seq, label) = &data[i];
                    let mut t = Tape::new();
                    let bp = bind(&mut t, &clf.params);
                    let logits = clf.logits(&mut t, &bp, seq);
                    let logp = t.log_softmax_rows(logits);
                    let picked = t.gather_rows(logp, &[*label]);
                    let mean = t.mean_all(picked);
                    let loss = t.neg(mean);
                    let g = t.backward(loss);
                    collect_grads(&t, &g, &clf.params, &bp)
                })
                .collect();
            let mut total = grads[0].clone();
            for g in grads.iter().skip(1) {
                for (acc, gi) in total.iter_mut().zip(g) {
                    acc.add_in_place(gi);
                }
            }
            let scale = s::<S>(1.0 / grads.len() as f64);
            for g in &mut total {
                g.scale_in_place(scale);
            }
            crate::numerics::clip_global_norm(&mut total, 5.0);
            adam.step(&mut clf.params, &total);
        }
        // validation cross-entropy
        let losses: Vec<f64> = holdout_idx
            .par_iter()
            .map(|&i| {
                let (seq, label) = &data[i];
                let probs = clf.predict_probs(seq);
                -(probs[*label].max(1e-12)).ln()
            })
            .collect();
        let val: f64 = losses.iter().sum::<f64>() / losses.len() as f64;
        if !val.is_finite() {
            return Err(Error::TrainingHealth {
                step: epoch as u64,
                detail: format!("attacker {} validation loss became {val}", clf.kind.name()),
            });
        }
        if val + 1e-4 < best {
            best = val;
            patience = 0;
        } else if epoch >= min_epochs {
            patience += 1;
            if patience >= clf.cfg.patience {
                break;
            }
        }
    }
    Ok(())
}

/// Train all three attack-classifier architectures on author attribution.
pub fn train_attackers<S: Scalar>(
    sentences: &[Sentence],
    vocab: &Vocab,
    embed_table: &Tensor<S>,
    cfg: &AttackerConfig,
) -> Result<Vec<AttackClassifier<S>>> {
    let mut labels: Vec<AuthorId> = Vec::new();
    for s in sentences {
        if !labels.contains(&s.author) {
            labels.push(s.author.clone());
        }
    }
    labels.sort();
    if labels.len() < 2 {
        return Err(Error::validation("attacker training needs at least two authors"));
    }
    let data: Vec<(TokenSequence, usize)> = sentences
        .iter()
        .map(|s| {
            let seq = encode(&s.text, vocab, cfg.max_len);
            let label = labels.iter().position(|a| a == &s.author).expect("label present");
            (seq, label)
        })
        .collect();
    let mut out = Vec::with_capacity(3);
    for kind in AttackerKind::ALL {
        let mut clf = AttackClassifier::new(kind, labels.clone(), embed_table.clone(), cfg.clone());
        train_attacker(&mut clf, &data, cfg.seed ^ kind.name().len() as u64)?;
        out.push(clf);
    }
    Ok(out)
}

/// Macro F1 of a classifier over a sentence set, with the standard error
/// taken across per-class F1 scores.
pub fn attacker_f1<S: Scalar>(
    clf: &AttackClassifier<S>,
    sentences: &[Sentence],
    texts: Option<&[String]>,
    vocab: &Vocab,
) -> Result<MetricValue> {
    let preds: Vec<AuthorId> = sentences
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let text = texts.map(|t| t[i].as_str()).unwrap_or(&s.text);
            clf.predict(&encode(text, vocab, clf.cfg.max_len))
        })
        .collect();
    let labels: Vec<AuthorId> = sentences.iter().map(|s| s.author.clone()).collect();
    let per_class = metrics::per_class_f1(&preds, &labels)?;
    Ok(mean_stderr(&per_class))
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct ReportRow {
    pub system: String,
    pub bleu: Option<MetricValue>,
    pub embed_f: Option<MetricValue>,
    pub ppl: MetricValue,
    /// One macro-F1 entry per attack classifier, in [`AttackerKind::ALL`]
    /// order.
    pub f1: Vec<MetricValue>,
}

impl ReportRow {
    pub fn mean_f1(&self) -> f64 {
        self.f1.iter().map(|m| m.mean).sum::<f64>() / self.f1.len() as f64
    }
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub protocol: String,
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    /// Tab-separated dump, one row per system.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "system\tbleu\tbleu_se\tembed_f\tembed_f_se\tppl\tppl_se\tf1_rnn\tf1_rnn_se\tf1_cnn\tf1_cnn_se\tf1_transformer\tf1_transformer_se\n",
        );
        for row in &self.rows {
            out.push_str(&row.system);
            for m in [row.bleu, row.embed_f] {
                match m {
                    Some(v) => out.push_str(&format!("\t{:.6}\t{:.6}", v.mean, v.stderr)),
                    None => out.push_str("\tN/A\tN/A"),
                }
            }
            out.push_str(&format!("\t{:.6}\t{:.6}", row.ppl.mean, row.ppl.stderr));
            for m in &row.f1 {
                out.push_str(&format!("\t{:.6}\t{:.6}", m.mean, m.stderr));
            }
            out.push('\n');
        }
        out
    }

    /// Human-readable table: content preservation, fluency, anonymity.
    pub fn render(&self) -> String {
        let mut out = format!(
            "{} evaluation (F1 is macro-averaged; stderr over classes)\n",
            self.protocol
        );
        out.push_str(&format!(
            "{:<12} {:>14} {:>14} {:>14} {:>14} {:>14} {:>14}\n",
            "system", "BLEU", "EmbedF", "PPL", "RNN", "CNN", "Transformer"
        ));
        let fmt = |m: &MetricValue| format!("{:.2}±{:.3}", m.mean, m.stderr);
        for row in &self.rows {
            let bleu = row.bleu.as_ref().map(&fmt).unwrap_or_else(|| "N/A".into());
            let ef = row.embed_f.as_ref().map(&fmt).unwrap_or_else(|| "N/A".into());
            out.push_str(&format!(
                "{:<12} {:>14} {:>14} {:>14} {:>14} {:>14} {:>14}\n",
                row.system,
                bleu,
                ef,
                fmt(&row.ppl),
                fmt(&row.f1[0]),
                fmt(&row.f1[1]),
                fmt(&row.f1[2]),
            ));
        }
        out
    }
}

/// Evaluate one anonymization system from its (original, rewritten) pairs.
pub fn evaluate_system<S: Scalar>(
    system: &str,
    outputs: &[(Sentence, String)],
    attackers: &[AttackClassifier<S>],
    judge: &CausalLm<S>,
    embedder: &WordEmbedder<'_>,
    vocab: &Vocab,
) -> Result<ReportRow> {
    if outputs.is_empty() {
        return Err(Error::validation("evaluate_system needs at least one output"));
    }
    let bleus: Vec<f64> =
        outputs.par_iter().map(|(orig, anon)| bleu(anon, &orig.text, 4)).collect();
    let efs: Vec<f64> = outputs
        .iter()
        .map(|(orig, anon)| embed_fscore(anon, &orig.text, embedder).2)
        .collect();
    let max_len = judge.cfg.max_len;
    let ppl_seqs: Vec<TokenSequence> =
        outputs.iter().map(|(_, anon)| encode(anon, vocab, max_len)).collect();
    let ppl = perplexity(judge, &ppl_seqs)?;

    let sentences: Vec<Sentence> = outputs.iter().map(|(o, _)| o.clone()).collect();
    let texts: Vec<String> = outputs.iter().map(|(_, a)| a.clone()).collect();
    let mut f1 = Vec::with_capacity(attackers.len());
    for clf in attackers {
        f1.push(attacker_f1(clf, &sentences, Some(&texts), vocab)?);
    }
    Ok(ReportRow {
        system: system.to_string(),
        bleu: Some(mean_stderr(&bleus)),
        embed_f: Some(mean_stderr(&efs)),
        ppl,
        f1,
    })
}

/// The "original" baseline row: no content metrics, perplexity and attack
/// F1 on the unmodified text.
pub fn evaluate_original<S: Scalar>(
    sentences: &[Sentence],
    attackers: &[AttackClassifier<S>],
    judge: &CausalLm<S>,
    vocab: &Vocab,
) -> Result<ReportRow> {
    if sentences.is_empty() {
        return Err(Error::validation("evaluation needs at least one sentence"));
    }
    let max_len = judge.cfg.max_len;
    let seqs: Vec<TokenSequence> =
        sentences.iter().map(|s| encode(&s.text, vocab, max_len)).collect();
    let ppl = perplexity(judge, &seqs)?;
    let mut f1 = Vec::with_capacity(attackers.len());
    for clf in attackers {
        f1.push(attacker_f1(clf, sentences, None, vocab)?);
    }
    Ok(ReportRow { system: "original".to_string(), bleu: None, embed_f: None, ppl, f1 })
}

/// Open-set protocol: per-author 70/30 split of the test-author sentences.
/// Attackers train on the 70% side; anonymization is judged on the 30%.
/// The two sides are disjoint by construction and asserted so.
pub fn open_set_split(sentences: &[Sentence], seed: u64) -> (Vec<Sentence>, Vec<Sentence>) {
    let mut by_author: std::collections::HashMap<&AuthorId, Vec<usize>> =
        std::collections::HashMap::new();
    for (i, s) in sentences.iter().enumerate() {
        by_author.entry(&s.author).or_default().push(i);
    }
    let mut authors: Vec<&AuthorId> = by_author.keys().copied().collect();
    authors.sort();
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (ai, author) in authors.into_iter().enumerate() {
        let mut idxs = by_author[author].clone();
        let mut r = rng::stream_at(seed, "open-70-30", ai as u64, 0);
        idxs.shuffle(&mut r);
        let cut = (idxs.len() * 7).div_ceil(10);
        for (pos, &i) in idxs.iter().enumerate() {
            if pos < cut {
                train.push(i);
            } else {
                eval.push(i);
            }
        }
    }
    let train_set: std::collections::HashSet<usize> = train.iter().copied().collect();
    assert!(
        eval.iter().all(|i| !train_set.contains(i)),
        "open-set attacker training and evaluation sentences must be disjoint"
    );
    (
        train.into_iter().map(|i| sentences[i].clone()).collect(),
        eval.into_iter().map(|i| sentences[i].clone()).collect(),
    )
}
