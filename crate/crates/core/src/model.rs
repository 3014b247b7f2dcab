//! A fitted detector model: the human-only vocabulary, the co-occurrence
//! settings and the CP factors, plus its on-disk artifact format.
//!
//! Artifact layout (little endian):
//!
//! ```text
//! b"GPTENMDL" | u32 version | u64 header length | header JSON |
//! f64 λ[r] | f64 A[M·r] | f64 B[M·r] | f64 C[N·r]   (row-major)
//! ```

use std::io::{Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cooc::{build_tensor, CoocOptions};
use crate::corpus::{build_vocabulary, Corpus, Label, TokenSeq, Tokenizer, Vocabulary};
use crate::cpd::{cp_als, AlsOptions, CpModel, Factors};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::oodscore::{score_corpus, ErrorVector, Projector};

const MAGIC: &[u8; 8] = b"GPTENMDL";
const VERSION: u32 = 1;

/// Hex SHA-256 prefix of a value's JSON encoding.
pub fn fingerprint_of<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("fingerprinted values serialize");
    hex::encode(&Sha256::digest(&bytes)[..16])
}

/// Identifies the slice geometry: vocabulary terms in index order plus the
/// co-occurrence settings.
pub fn geometry_fingerprint(vocab: &Vocabulary, cooc: &CoocOptions) -> String {
    fingerprint_of(&(vocab.terms(), cooc))
}

/// Everything needed to fit one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub tokenizer: Tokenizer,
    pub vocab_cap: usize,
    pub cooc: CoocOptions,
    pub rank: usize,
    pub als: AlsOptions,
}

#[derive(Debug)]
pub struct GpTenModel {
    pub vocab: Vocabulary,
    pub tokenizer: Tokenizer,
    pub cooc: CoocOptions,
    pub cp: CpModel,
    /// Documents whose slices formed the training tensor.
    pub tensor_doc_ids: Vec<usize>,
    pub geometry: String,
    pub config_fingerprint: String,
    projector: OnceLock<Projector>,
}

impl Clone for GpTenModel {
    fn clone(&self) -> Self {
        Self {
            vocab: self.vocab.clone(),
            tokenizer: self.tokenizer.clone(),
            cooc: self.cooc.clone(),
            cp: self.cp.clone(),
            tensor_doc_ids: self.tensor_doc_ids.clone(),
            geometry: self.geometry.clone(),
            config_fingerprint: self.config_fingerprint.clone(),
            projector: OnceLock::new(),
        }
    }
}

impl PartialEq for GpTenModel {
    fn eq(&self, other: &Self) -> bool {
        self.vocab == other.vocab
            && self.tokenizer == other.tokenizer
            && self.cooc == other.cooc
            && self.cp == other.cp
            && self.tensor_doc_ids == other.tensor_doc_ids
            && self.geometry == other.geometry
            && self.config_fingerprint == other.config_fingerprint
    }
}

impl GpTenModel {
    /// Builds the vocabulary and tensor from the human-labeled documents in
    /// `train_ids` and decomposes it. Other labels are ignored.
    pub fn fit(
        corpus: &Corpus,
        tokens: &[TokenSeq],
        train_ids: &[usize],
        settings: &ModelSettings,
        config_fingerprint: &str,
    ) -> Result<Self> {
        let vocab = build_vocabulary(corpus, tokens, train_ids, settings.vocab_cap)?;
        let human: Vec<(usize, &TokenSeq)> = train_ids
            .iter()
            .filter(|&&id| corpus.docs()[id].label == Label::Human)
            .map(|&id| (id, &tokens[id]))
            .collect();
        let tensor = build_tensor(&human, &vocab, &settings.cooc)?;
        let limit = tensor.len().min(tensor.dim());
        if settings.rank > limit {
            return Err(Error::RankTooLarge {
                rank: settings.rank,
                limit,
            });
        }
        let cp = cp_als(&tensor.to_sparse(), settings.rank, &settings.als)?;
        log::info!(
            "decomposed {}x{}x{} tensor at rank {} (fit {:.4}, {} sweeps)",
            tensor.len(),
            tensor.dim(),
            tensor.dim(),
            cp.rank(),
            cp.fit,
            cp.iterations_run
        );
        let geometry = geometry_fingerprint(&vocab, &settings.cooc);
        Ok(Self {
            vocab,
            tokenizer: settings.tokenizer.clone(),
            cooc: settings.cooc.clone(),
            cp,
            tensor_doc_ids: tensor.doc_ids(),
            geometry,
            config_fingerprint: config_fingerprint.to_string(),
            projector: OnceLock::new(),
        })
    }

    pub fn projector(&self) -> Result<&Projector> {
        if let Some(p) = self.projector.get() {
            return Ok(p);
        }
        let p = Projector::new(self.cp.a(), self.cp.b())?;
        Ok(self.projector.get_or_init(|| p))
    }

    /// Reconstruction errors of already tokenized documents.
    pub fn score(&self, docs: &[(usize, &TokenSeq)], normalize: bool) -> Result<ErrorVector> {
        score_corpus(docs, self, &self.vocab, &self.cooc, normalize)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = Header {
            config_fingerprint: self.config_fingerprint.clone(),
            geometry: self.geometry.clone(),
            tokenizer: self.tokenizer.clone(),
            cooc: self.cooc.clone(),
            terms: self.vocab.terms().to_vec(),
            vocab_source_doc_ids: self.vocab.source_doc_ids().to_vec(),
            tensor_doc_ids: self.tensor_doc_ids.clone(),
            m: self.cp.a().rows(),
            n: self.cp.c().rows(),
            rank: self.cp.rank(),
            fit: self.cp.fit,
            iterations_run: self.cp.iterations_run,
            fit_trace: self.cp.fit_trace.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut buf = Vec::with_capacity(json.len() + 8 * (header.rank * (2 * header.m + header.n + 1)) + 20);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for values in [
            &self.cp.lambda[..],
            self.cp.a().as_slice(),
            self.cp.b().as_slice(),
            self.cp.c().as_slice(),
        ] {
            for v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf).map_err(|e| Error::io("<model>", e))
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io("<model>", e))?;
        let bad = |m: &str| Error::Artifact(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a model artifact"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Artifact(format!("unsupported artifact version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + header_len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let floats = &bytes[20 + header_len..];
        let (m, n, r) = (header.m, header.n, header.rank);
        let expected = r * (2 * m + n + 1);
        if floats.len() != 8 * expected {
            return Err(Error::Artifact(format!(
                "expected {expected} factor values, found {} bytes",
                floats.len()
            )));
        }
        let mut values = floats
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |count: usize| values.by_ref().take(count).collect::<Vec<f64>>();
        let lambda = take(r);
        let a = Matrix::from_row_major(m, r, take(m * r));
        let b = Matrix::from_row_major(m, r, take(m * r));
        let c = Matrix::from_row_major(n, r, take(n * r));
        let vocab = Vocabulary::from_terms(header.terms, header.vocab_source_doc_ids)?;
        if vocab.len() != m {
            return Err(bad("vocabulary size does not match factor rows"));
        }
        let geometry = geometry_fingerprint(&vocab, &header.cooc);
        if geometry != header.geometry {
            return Err(Error::FingerprintMismatch {
                expected: header.geometry,
                found: geometry,
            });
        }
        Ok(Self {
            vocab,
            tokenizer: header.tokenizer,
            cooc: header.cooc,
            cp: CpModel {
                factors: Factors { a, b, c },
                lambda,
                fit: header.fit,
                iterations_run: header.iterations_run,
                fit_trace: header.fit_trace,
            },
            tensor_doc_ids: header.tensor_doc_ids,
            geometry,
            config_fingerprint: header.config_fingerprint,
            projector: OnceLock::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    config_fingerprint: String,
    geometry: String,
    tokenizer: Tokenizer,
    cooc: CoocOptions,
    terms: Vec<String>,
    vocab_source_doc_ids: Vec<usize>,
    tensor_doc_ids: Vec<usize>,
    m: usize,
    n: usize,
    rank: usize,
    fit: f64,
    iterations_run: usize,
    fit_trace: Vec<f64>,
}
