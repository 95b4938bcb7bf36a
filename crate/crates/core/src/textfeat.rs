//! Daily textual features from per-text sentiment and movement scores.
//!
//! Texts arrive pre-scored (sentiment in [-1,1], movement in [0,1]). Two
//! extractor families select subsets of the corpus: a source classifier
//! (news vs analysis) and an LDA topic cluster fit by collapsed Gibbs
//! sampling. Selected scores are average-pooled per trading day into the
//! feature rows consumed by the forecasting pipeline.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{AlignedFrame, TradingCalendar};

#[derive(Debug, Error)]
pub enum TextFeatError {
    #[error("record '{id}': {field} score {value} outside its range")]
    InvalidScore {
        id: String,
        field: &'static str,
        value: f64,
    },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("vocabulary is empty after tokenization")]
    EmptyVocabulary,
    #[error("topic count must be at least 2, got {0}")]
    BadTopicCount(usize),
    #[error("iterations must be at least 1")]
    BadIterations,
    #[error("topic range {lo}..={hi} outside the supported [2, 50]")]
    BadTopicRange { lo: usize, hi: usize },
    #[error("selected topic {0} outside 1..={1}")]
    TopicOutOfRange(usize, usize),
    #[error("mask '{name}' covers {mask} records but corpus has {corpus}")]
    MaskLengthMismatch {
        name: String,
        mask: usize,
        corpus: usize,
    },
    #[error("topic model assigns {model} documents but corpus has {corpus}")]
    AssignmentMismatch { model: usize, corpus: usize },
    #[error("top_n must be at least 2")]
    BadTopN,
    #[error("record '{0}' has no token bag; tokenize the corpus first")]
    MissingTokens(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    News,
    Analysis,
}

/// One scored text.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextRecord {
    pub id: String,
    pub date: NaiveDate,
    pub source: Source,
    /// Polarity in [-1, 1]; near zero is neutral.
    pub sentiment: f64,
    /// Next-day movement score in [0, 1].
    pub movement: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<u32>>,
}

/// Check score ranges on every record; errors name the offending record.
pub fn validate_records(records: &[TextRecord]) -> Result<(), TextFeatError> {
    for r in records {
        if !(-1.0..=1.0).contains(&r.sentiment) || !r.sentiment.is_finite() {
            return Err(TextFeatError::InvalidScore {
                id: r.id.clone(),
                field: "sentiment",
                value: r.sentiment,
            });
        }
        if !(0.0..=1.0).contains(&r.movement) || !r.movement.is_finite() {
            return Err(TextFeatError::InvalidScore {
                id: r.id.clone(),
                field: "movement",
                value: r.movement,
            });
        }
    }
    Ok(())
}

pub fn read_corpus<R: Read>(reader: R) -> Result<Vec<TextRecord>, TextFeatError> {
    let records: Vec<TextRecord> = serde_json::from_reader(reader)?;
    validate_records(&records)?;
    Ok(records)
}

pub fn write_corpus<W: Write>(writer: W, records: &[TextRecord]) -> Result<(), TextFeatError> {
    serde_json::to_writer_pretty(writer, records)?;
    Ok(())
}

/// Binary per-record selector produced by one extractor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorMask {
    pub name: String,
    /// One flag per record, in corpus order.
    pub selected: Vec<bool>,
}

impl ExtractorMask {
    pub fn count(&self) -> usize {
        self.selected.iter().filter(|s| **s).count()
    }
}

/// Partition the corpus by information source.
pub fn classify_source(records: &[TextRecord]) -> (ExtractorMask, ExtractorMask) {
    let news = ExtractorMask {
        name: "news".into(),
        selected: records.iter().map(|r| r.source == Source::News).collect(),
    };
    let analysis = ExtractorMask {
        name: "analysis".into(),
        selected: records
            .iter()
            .map(|r| r.source == Source::Analysis)
            .collect(),
    };
    (news, analysis)
}

/// Selector for records whose dominant topic equals `topic` (1-based).
pub fn topic_mask(
    model: &TopicModel,
    topic: usize,
    n_records: usize,
) -> Result<ExtractorMask, TextFeatError> {
    if topic == 0 || topic > model.k {
        return Err(TextFeatError::TopicOutOfRange(topic, model.k));
    }
    if model.assignment.len() != n_records {
        return Err(TextFeatError::AssignmentMismatch {
            model: model.assignment.len(),
            corpus: n_records,
        });
    }
    Ok(ExtractorMask {
        name: format!("topic-{topic}"),
        selected: model.assignment.iter().map(|&a| a == topic).collect(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub words: Vec<String>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }
}

fn split_words(raw: &str) -> impl Iterator<Item = String> + '_ {
    raw.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
}

/// Tokenize one text: lowercase, strip punctuation, drop stopwords, drop
/// words occurring fewer than `min_count` times in the text.
pub fn tokenize(raw_text: &str, stopwords: &[String], min_count: usize) -> Vec<String> {
    let words: Vec<String> = split_words(raw_text)
        .filter(|w| !stopwords.iter().any(|s| s == w))
        .collect();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for w in &words {
        *counts.entry(w.as_str()).or_insert(0) += 1;
    }
    words
        .iter()
        .filter(|w| counts[w.as_str()] >= min_count.max(1))
        .cloned()
        .collect()
}

/// Tokenize every record's text with a corpus-level `min_count` threshold,
/// attach token-id bags to the records, and return the vocabulary.
///
/// Records without text get an empty bag. Word ids follow first appearance.
pub fn attach_tokens(
    records: &mut [TextRecord],
    stopwords: &[String],
    min_count: usize,
) -> Result<Vocabulary, TextFeatError> {
    let per_doc: Vec<Vec<String>> = records
        .iter()
        .map(|r| match &r.text {
            Some(t) => split_words(t)
                .filter(|w| !stopwords.iter().any(|s| s == w))
                .collect(),
            None => Vec::new(),
        })
        .collect();

    let mut counts: HashMap<&str, usize> = HashMap::new();
    for doc in &per_doc {
        for w in doc {
            *counts.entry(w.as_str()).or_insert(0) += 1;
        }
    }

    let mut vocab = Vocabulary::default();
    let mut index: HashMap<String, u32> = HashMap::new();
    let min_count = min_count.max(1);
    for (record, doc) in records.iter_mut().zip(&per_doc) {
        let mut bag = Vec::with_capacity(doc.len());
        for w in doc {
            if counts[w.as_str()] < min_count {
                continue;
            }
            let id = *index.entry(w.clone()).or_insert_with(|| {
                vocab.words.push(w.clone());
                (vocab.words.len() - 1) as u32
            });
            bag.push(id);
        }
        record.tokens = Some(bag);
    }
    Ok(vocab)
}

/// LDA model estimated by collapsed Gibbs sampling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopicModel {
    pub k: usize,
    /// Topic-word probabilities, K x V; each row sums to 1.
    pub phi: Vec<Vec<f64>>,
    /// Document-topic probabilities, D x K; each row sums to 1.
    pub theta: Vec<Vec<f64>>,
    /// Dominant topic per document, 1-based; ties to the lowest index.
    pub assignment: Vec<usize>,
    pub vocab: Vocabulary,
    /// Final token counts per (topic, word); kept for coherence scoring.
    pub topic_word_counts: Vec<Vec<u32>>,
}

/// Fit LDA on token bags by collapsed Gibbs sampling. Deterministic per seed.
pub fn fit_lda(
    corpus: &[Vec<u32>],
    vocab: &Vocabulary,
    k: usize,
    iterations: usize,
    alpha: f64,
    beta: f64,
    seed: u64,
) -> Result<TopicModel, TextFeatError> {
    if corpus.is_empty() {
        return Err(TextFeatError::EmptyCorpus);
    }
    if k < 2 {
        return Err(TextFeatError::BadTopicCount(k));
    }
    if iterations < 1 {
        return Err(TextFeatError::BadIterations);
    }
    let v = vocab.len();
    if v == 0 || corpus.iter().all(|doc| doc.is_empty()) {
        return Err(TextFeatError::EmptyVocabulary);
    }

    let d = corpus.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut n_dk = vec![vec![0u32; k]; d];
    let mut n_kw = vec![vec![0u32; v]; k];
    let mut n_k = vec![0u32; k];
    let mut z: Vec<Vec<usize>> = Vec::with_capacity(d);

    for (di, doc) in corpus.iter().enumerate() {
        let mut zs = Vec::with_capacity(doc.len());
        for &w in doc {
            let t = rng.gen_range(0..k);
            zs.push(t);
            n_dk[di][t] += 1;
            n_kw[t][w as usize] += 1;
            n_k[t] += 1;
        }
        z.push(zs);
    }

    let v_beta = v as f64 * beta;
    let mut weights = vec![0.0f64; k];
    for _ in 0..iterations {
        for (di, doc) in corpus.iter().enumerate() {
            for (j, &w) in doc.iter().enumerate() {
                let w = w as usize;
                let old = z[di][j];
                n_dk[di][old] -= 1;
                n_kw[old][w] -= 1;
                n_k[old] -= 1;

                let mut total = 0.0;
                for t in 0..k {
                    let p = (n_dk[di][t] as f64 + alpha) * (n_kw[t][w] as f64 + beta)
                        / (n_k[t] as f64 + v_beta);
                    total += p;
                    weights[t] = total;
                }
                let draw = rng.gen::<f64>() * total;
                let new = weights.partition_point(|&cum| cum < draw).min(k - 1);

                z[di][j] = new;
                n_dk[di][new] += 1;
                n_kw[new][w] += 1;
                n_k[new] += 1;
            }
        }
    }

    let phi: Vec<Vec<f64>> = (0..k)
        .map(|t| {
            let denom = n_k[t] as f64 + v_beta;
            (0..v)
                .map(|w| (n_kw[t][w] as f64 + beta) / denom)
                .collect()
        })
        .collect();
    let theta: Vec<Vec<f64>> = (0..d)
        .map(|di| {
            let n_d: u32 = n_dk[di].iter().sum();
            let denom = n_d as f64 + k as f64 * alpha;
            (0..k)
                .map(|t| (n_dk[di][t] as f64 + alpha) / denom)
                .collect()
        })
        .collect();
    let assignment: Vec<usize> = theta
        .iter()
        .map(|row| {
            let mut best = 0;
            for (t, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = t;
                }
            }
            best + 1
        })
        .collect();

    Ok(TopicModel {
        k,
        phi,
        theta,
        assignment,
        vocab: vocab.clone(),
        topic_word_counts: n_kw,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopicCoherence {
    /// 1-based topic id.
    pub topic: usize,
    pub score: f64,
    /// Words actually scored (may be fewer than requested top_n).
    pub n_words: usize,
    pub truncated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub per_topic: Vec<TopicCoherence>,
    pub mean: f64,
}

/// UMass coherence: for each topic's top words (by final count, descending,
/// ties to the lower word id), sum log((co-doc-frequency + 1) / doc-frequency
/// of the higher-ranked word) over ordered pairs. Topics with fewer than
/// `top_n` nonzero words are scored over the words available and flagged.
pub fn coherence(
    model: &TopicModel,
    corpus: &[Vec<u32>],
    top_n: usize,
) -> Result<CoherenceReport, TextFeatError> {
    if top_n < 2 {
        return Err(TextFeatError::BadTopN);
    }
    let v = model.vocab.len();
    let doc_sets: Vec<Vec<u32>> = corpus
        .iter()
        .map(|doc| {
            let mut s = doc.clone();
            s.sort_unstable();
            s.dedup();
            s
        })
        .collect();
    let mut doc_freq = vec![0usize; v];
    for s in &doc_sets {
        for &w in s {
            doc_freq[w as usize] += 1;
        }
    }
    let co_doc = |a: u32, b: u32| -> usize {
        doc_sets
            .iter()
            .filter(|s| s.binary_search(&a).is_ok() && s.binary_search(&b).is_ok())
            .count()
    };

    let mut per_topic = Vec::with_capacity(model.k);
    for (t, counts) in model.topic_word_counts.iter().enumerate() {
        let mut ranked: Vec<(u32, u32)> = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(w, &c)| (w as u32, c))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let top: Vec<u32> = ranked.iter().take(top_n).map(|(w, _)| *w).collect();

        let mut score = 0.0;
        for m in 1..top.len() {
            for l in 0..m {
                let df = doc_freq[top[l] as usize] as f64;
                score += ((co_doc(top[m], top[l]) as f64 + 1.0) / df).ln();
            }
        }
        per_topic.push(TopicCoherence {
            topic: t + 1,
            score,
            n_words: top.len(),
            truncated: top.len() < top_n,
        });
    }
    let mean = per_topic.iter().map(|t| t.score).sum::<f64>() / per_topic.len() as f64;
    Ok(CoherenceReport { per_topic, mean })
}

/// Scan topic counts and pick the coherence peak; ties go to the smallest K.
///
/// `alpha = None` uses the 50/K convention per candidate K.
#[allow(clippy::too_many_arguments)]
pub fn select_topic_count(
    corpus: &[Vec<u32>],
    vocab: &Vocabulary,
    k_range: (usize, usize),
    iterations: usize,
    top_n: usize,
    alpha: Option<f64>,
    beta: f64,
    seed: u64,
) -> Result<(usize, Vec<(usize, f64)>), TextFeatError> {
    let (lo, hi) = k_range;
    if lo < 2 || hi > 50 || lo > hi {
        return Err(TextFeatError::BadTopicRange { lo, hi });
    }
    // Each candidate fit runs on its own seeded chain; fits are independent
    // and run in parallel, collected in K order.
    let curve: Vec<(usize, f64)> = (lo..=hi)
        .into_par_iter()
        .map(|k| {
            let a = alpha.unwrap_or(50.0 / k as f64);
            let k_seed = seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let model = fit_lda(corpus, vocab, k, iterations, a, beta, k_seed)?;
            let report = coherence(&model, corpus, top_n)?;
            Ok((k, report.mean))
        })
        .collect::<Result<_, TextFeatError>>()?;
    let mut best = curve[0];
    for &(k, c) in &curve[1..] {
        if c > best.1 {
            best = (k, c);
        }
    }
    Ok((best.0, curve))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextField {
    Sentiment,
    Movement,
}

impl TextField {
    pub fn neutral_fill(self) -> f64 {
        match self {
            // Zero is neutral polarity; 0.5 is maximum movement uncertainty.
            TextField::Sentiment => 0.0,
            TextField::Movement => 0.5,
        }
    }

    fn value(self, r: &TextRecord) -> f64 {
        match self {
            TextField::Sentiment => r.sentiment,
            TextField::Movement => r.movement,
        }
    }
}

/// Average-pool the chosen field over mask-selected texts per calendar day.
/// Days with no selected text take `fill`, which must lie in the field's
/// codomain.
pub fn pool_daily(
    records: &[TextRecord],
    mask: &ExtractorMask,
    field: TextField,
    calendar: &TradingCalendar,
    fill: f64,
) -> Result<Vec<f64>, TextFeatError> {
    if mask.selected.len() != records.len() {
        return Err(TextFeatError::MaskLengthMismatch {
            name: mask.name.clone(),
            mask: mask.selected.len(),
            corpus: records.len(),
        });
    }
    let mut sums: BTreeMap<NaiveDate, (f64, usize)> = BTreeMap::new();
    for (r, &sel) in records.iter().zip(&mask.selected) {
        if sel {
            let e = sums.entry(r.date).or_insert((0.0, 0));
            e.0 += field.value(r);
            e.1 += 1;
        }
    }
    Ok(calendar
        .days()
        .iter()
        .map(|d| match sums.get(d) {
            Some((sum, n)) => sum / *n as f64,
            None => fill,
        })
        .collect())
}

/// Which extractor produced a textual feature row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Selector {
    News,
    Analysis,
    /// 1-based topic id.
    Topic(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextualRow {
    pub name: String,
    pub selector: Selector,
    pub field: TextField,
    pub values: Vec<f64>,
}

/// Daily textual feature rows on a shared calendar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DailyTextualFeatures {
    pub calendar: TradingCalendar,
    pub rows: Vec<TextualRow>,
}

impl DailyTextualFeatures {
    pub fn into_frame(self) -> AlignedFrame {
        let features = self.rows.iter().map(|r| r.name.clone()).collect();
        let values = self.rows.into_iter().map(|r| r.values).collect();
        AlignedFrame::new(self.calendar, features, values)
            .expect("textual rows match their calendar by construction")
    }
}

/// Emit the daily textual feature rows: {news, analysis} x {sentiment,
/// movement}, then {sentiment, movement} per selected topic (1-based ids).
pub fn assemble_textual_features(
    records: &[TextRecord],
    model: &TopicModel,
    selected_topics: &[usize],
    calendar: &TradingCalendar,
) -> Result<DailyTextualFeatures, TextFeatError> {
    for &t in selected_topics {
        if t == 0 || t > model.k {
            return Err(TextFeatError::TopicOutOfRange(t, model.k));
        }
    }
    let (news, analysis) = classify_source(records);
    let mut rows = Vec::with_capacity(4 + 2 * selected_topics.len());
    for (mask, selector, label) in [
        (&news, Selector::News, "news"),
        (&analysis, Selector::Analysis, "analysis"),
    ] {
        rows.push(TextualRow {
            name: format!("{label}-sentiment"),
            selector,
            field: TextField::Sentiment,
            values: pool_daily(
                records,
                mask,
                TextField::Sentiment,
                calendar,
                TextField::Sentiment.neutral_fill(),
            )?,
        });
    }
    for (mask, selector, label) in [
        (&news, Selector::News, "news"),
        (&analysis, Selector::Analysis, "analysis"),
    ] {
        rows.push(TextualRow {
            name: format!("{label}-movement"),
            selector,
            field: TextField::Movement,
            values: pool_daily(
                records,
                mask,
                TextField::Movement,
                calendar,
                TextField::Movement.neutral_fill(),
            )?,
        });
    }
    for &t in selected_topics {
        let mask = topic_mask(model, t, records.len())?;
        for field in [TextField::Sentiment, TextField::Movement] {
            let label = match field {
                TextField::Sentiment => "sentiment",
                TextField::Movement => "movement",
            };
            rows.push(TextualRow {
                name: format!("topic-{t}-{label}"),
                selector: Selector::Topic(t),
                field,
                values: pool_daily(records, &mask, field, calendar, field.neutral_fill())?,
            });
        }
    }
    Ok(DailyTextualFeatures {
        calendar: calendar.clone(),
        rows,
    })
}
