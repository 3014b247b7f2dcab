//! Labeled text ingestion, tokenization, the human-only vocabulary and
//! stratified fold planning.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Human,
    Gpt,
    Unlabeled,
}

impl Label {
    /// 1 for the positive (machine-generated) class, 0 otherwise.
    pub fn is_positive(self) -> bool {
        self == Label::Gpt
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: usize,
    pub text: String,
    pub label: Label,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    docs: Vec<Document>,
}

impl Corpus {
    /// Builds a corpus from `(text, label)` pairs; ids follow input order.
    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, Label)>) -> Self {
        let docs = pairs
            .into_iter()
            .enumerate()
            .map(|(id, (text, label))| Document {
                id,
                text: text.into(),
                label,
            })
            .collect();
        Self { docs }
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&Document> {
        self.docs.get(id)
    }

    pub fn count(&self, label: Label) -> usize {
        self.docs.iter().filter(|d| d.label == label).count()
    }

    pub fn n_human(&self) -> usize {
        self.count(Label::Human)
    }

    pub fn n_gpt(&self) -> usize {
        self.count(Label::Gpt)
    }

    pub fn n_unlabeled(&self) -> usize {
        self.count(Label::Unlabeled)
    }

    pub fn labels(&self) -> Vec<Label> {
        self.docs.iter().map(|d| d.label).collect()
    }

    /// Tokenizes every document; output index = document id.
    pub fn tokenize(&self, tokenizer: &Tokenizer) -> Vec<TokenSeq> {
        self.docs
            .par_iter()
            .map(|d| tokenizer.tokenize(&d.text))
            .collect()
    }
}

/// Column names and label encoding of an input CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSchema {
    pub text_column: String,
    pub label_column: String,
    pub labels: BTreeMap<String, Label>,
}

impl Default for CorpusSchema {
    fn default() -> Self {
        Self {
            text_column: "text".into(),
            label_column: "label".into(),
            labels: BTreeMap::from([
                ("human".to_string(), Label::Human),
                ("gpt".to_string(), Label::Gpt),
            ]),
        }
    }
}

pub fn load_corpus(path: &Path, schema: &CorpusSchema) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(file, schema)
}

/// Parses an RFC-4180 CSV with a header row. Rows whose text is blank are
/// skipped with a warning; ids stay contiguous over kept rows. Without a
/// label column every document is unlabeled.
pub fn read_corpus(reader: impl std::io::Read, schema: &CorpusSchema) -> Result<Corpus> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let text_idx = column(&schema.text_column)?;
    let label_idx = column(&schema.label_column).ok();
    if label_idx.is_none() {
        log::info!("no {:?} column, documents are unlabeled", schema.label_column);
    }

    let mut pairs = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let text = &record[text_idx];
        let label = match label_idx {
            None => Label::Unlabeled,
            Some(i) => {
                let raw = record[i].trim();
                *schema.labels.get(raw).ok_or_else(|| Error::UnknownLabel {
                    line,
                    label: raw.to_string(),
                })?
            }
        };
        if text.trim().is_empty() {
            log::warn!("line {line}: skipping row with empty text");
            continue;
        }
        pairs.push((text.to_string(), label));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(Corpus::from_pairs(pairs))
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::MalformedRow {
            line,
            message: e.to_string(),
        },
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => Error::MalformedRow {
            line,
            message: format!("expected {expected_len} fields, found {len}"),
        },
        _ => Error::MalformedRow {
            line,
            message: e.to_string(),
        },
    }
}

/// Writes a corpus back out as `text,label` CSV using the given schema's
/// first label string for each label.
pub fn write_corpus(corpus: &Corpus, schema: &CorpusSchema, path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let label_name = |l: Label| {
        schema
            .labels
            .iter()
            .find(|(_, v)| **v == l)
            .map(|(k, _)| k.clone())
            .unwrap_or_else(|| format!("{l:?}").to_lowercase())
    };
    let to_io = |e: csv::Error| Error::io(path, e.into());
    wtr.write_record([&schema.text_column, &schema.label_column])
        .map_err(to_io)?;
    for d in corpus.docs() {
        wtr.write_record([d.text.as_str(), label_name(d.label).as_str()])
            .map_err(to_io)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

/// Ordered list of normalized terms.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq(pub Vec<String>);

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl<S: Into<String>> FromIterator<S> for TokenSeq {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        TokenSeq(iter.into_iter().map(Into::into).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tokenizer {
    pub lowercase: bool,
    pub strip_urls: bool,
    pub min_len: usize,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_urls: true,
            min_len: 2,
        }
    }
}

fn url_pattern() -> &'static Regex {
    static URL: OnceLock<Regex> = OnceLock::new();
    URL.get_or_init(|| Regex::new(r"(?i)\b(?:https?://|www\.)\S*").expect("static regex"))
}

impl Tokenizer {
    pub fn tokenize(&self, text: &str) -> TokenSeq {
        let lowered;
        let text = if self.lowercase {
            lowered = text.to_lowercase();
            lowered.as_str()
        } else {
            text
        };
        let stripped;
        let text = if self.strip_urls {
            stripped = url_pattern().replace_all(text, " ");
            stripped.as_ref()
        } else {
            text
        };
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| t.chars().count() >= self.min_len)
            .map(str::to_string)
            .collect()
    }
}

/// Tokenizes with the default rules.
pub fn tokenize(text: &str) -> TokenSeq {
    Tokenizer::default().tokenize(text)
}

/// Frozen term → index map.
///
/// `source_doc_ids` records which documents contributed terms so the
/// evaluation pipeline can audit that only human training documents did.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr")]
pub struct Vocabulary {
    terms: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    source_doc_ids: Vec<usize>,
}

#[derive(Deserialize)]
struct VocabularyRepr {
    terms: Vec<String>,
    source_doc_ids: Vec<usize>,
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = Error;

    fn try_from(r: VocabularyRepr) -> Result<Self> {
        Vocabulary::from_terms(r.terms, r.source_doc_ids)
    }
}

impl Vocabulary {
    /// Builds a vocabulary from terms already in index order. Duplicate
    /// terms are rejected.
    pub fn from_terms(terms: Vec<String>, source_doc_ids: Vec<usize>) -> Result<Self> {
        let mut index = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Artifact(format!("duplicate vocabulary term {t:?}")));
            }
        }
        Ok(Self {
            terms,
            index,
            source_doc_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_frozen(&self) -> bool {
        true
    }

    pub fn get(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, index: usize) -> Option<&str> {
        self.terms.get(index).map(String::as_str)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn source_doc_ids(&self) -> &[usize] {
        &self.source_doc_ids
    }

    /// Maps tokens to indices, dropping out-of-vocabulary terms.
    pub fn encode(&self, tokens: &TokenSeq) -> Vec<usize> {
        tokens.iter().filter_map(|t| self.get(t)).collect()
    }
}

/// Collects terms from the human-labeled documents among `train_ids`,
/// ranks them by (frequency desc, term asc) and keeps the top `cap`.
pub fn build_vocabulary(
    corpus: &Corpus,
    tokens: &[TokenSeq],
    train_ids: &[usize],
    cap: usize,
) -> Result<Vocabulary> {
    if cap == 0 {
        return Err(Error::Config("vocabulary cap must be at least 1".into()));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    let mut sources = BTreeSet::new();
    for &id in train_ids {
        let doc = corpus
            .get(id)
            .ok_or_else(|| Error::InvalidSplit(format!("unknown document id {id}")))?;
        if doc.label != Label::Human {
            continue;
        }
        sources.insert(id);
        for t in tokens[id].iter() {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    if sources.is_empty() {
        return Err(Error::NoHumanDocuments);
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(cap);
    let terms = ranked.into_iter().map(|(t, _)| t.to_string()).collect();
    Vocabulary::from_terms(terms, sources.into_iter().collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub k: usize,
    /// Fold index per document id.
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn test_ids(&self, fold: usize) -> Vec<usize> {
        self.ids_where(|f| f == fold)
    }

    pub fn train_ids(&self, fold: usize) -> Vec<usize> {
        self.ids_where(|f| f != fold)
    }

    fn ids_where(&self, keep: impl Fn(usize) -> bool) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &f)| keep(f))
            .map(|(id, _)| id)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Stratified k-fold assignment. Within each label the ids are shuffled
/// with a seeded generator and dealt round-robin; the dealing position
/// carries over between labels so fold sizes differ by at most one.
pub fn make_splits(corpus: &Corpus, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidSplit(format!("need at least 2 folds, got {k}")));
    }
    for label in [Label::Human, Label::Gpt] {
        let n = corpus.count(label);
        if n < k {
            return Err(Error::InvalidSplit(format!(
                "{k} folds requested but only {n} {label:?} documents"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![usize::MAX; corpus.len()];
    let mut next = 0usize;
    for label in [Label::Human, Label::Gpt, Label::Unlabeled] {
        let mut ids: Vec<usize> = corpus
            .docs()
            .iter()
            .filter(|d| d.label == label)
            .map(|d| d.id)
            .collect();
        ids.shuffle(&mut rng);
        for id in ids {
            assignments[id] = next % k;
            next += 1;
        }
    }
    Ok(FoldPlan {
        seed,
        k,
        assignments,
    })
}
