//! Commands behind the `gpten` binary. Each one reads its inputs, runs a
//! pipeline stage and writes fixed-name artifacts into an output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audit::Provenance;
use crate::baseline::{baseline_cross_validate, LinearOptions};
use crate::config::PipelineConfig;
use crate::cooc::build_tensor;
use crate::corpus::{build_vocabulary, load_corpus, make_splits, write_corpus, Corpus, Label, TokenSeq};
use crate::error::{Error, Result};
use crate::eval::{cross_validate, fit_head, job_seed, rank_sweep, scores_csv, Head, Report, SweepReport, FULL_FIT};
use crate::model::GpTenModel;
use crate::synth::{synth_corpus, SynthOptions};

pub const REPORT_FILE: &str = "report.json";
pub const SCORES_FILE: &str = "scores.csv";
pub const MODEL_FILE: &str = "model.bin";
pub const DETECTOR_FILE: &str = "detector.json";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_JSON_FILE: &str = "sweep.json";
pub const CONFIG_FILE: &str = "config.json";
pub const FOLDS_FILE: &str = "folds.json";

/// A fitted head bound to the model it was fitted against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorFile {
    pub config_fingerprint: String,
    pub geometry: String,
    /// The head was fitted on slice-norm-normalized errors.
    pub normalize: bool,
    pub head: Head,
}

impl DetectorFile {
    pub fn check(&self, model: &GpTenModel) -> Result<()> {
        for (expected, found) in [
            (&model.config_fingerprint, &self.config_fingerprint),
            (&model.geometry, &self.geometry),
        ] {
            if expected != found {
                return Err(Error::FingerprintMismatch {
                    expected: expected.clone(),
                    found: found.clone(),
                });
            }
        }
        Ok(())
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))
}

fn output_dir(config: &PipelineConfig) -> Result<PathBuf> {
    let dir = config.output.clone().unwrap_or_else(|| PathBuf::from("gpten-out"));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

pub fn load_input(config: &PipelineConfig) -> Result<Corpus> {
    let path = config
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("no input corpus given".into()))?;
    let corpus = load_corpus(path, &config.schema)?;
    log::info!(
        "loaded {} documents ({} human, {} gpt, {} unlabeled)",
        corpus.len(),
        corpus.n_human(),
        corpus.n_gpt(),
        corpus.n_unlabeled()
    );
    Ok(corpus)
}

/// Model and head fitted on every document of the corpus.
pub fn fit_full(corpus: &Corpus, tokens: &[TokenSeq], config: &PipelineConfig) -> Result<(GpTenModel, DetectorFile, Provenance)> {
    let all: Vec<usize> = (0..corpus.len()).collect();
    let seed = job_seed(config.seed, FULL_FIT, config.rank as u64);
    let settings = config.model_settings(config.rank, seed);
    let model = GpTenModel::fit(corpus, tokens, &all, &settings, &config.fingerprint())?;
    let ids: Vec<usize> = if config.detector.supervised().is_some() {
        all.iter()
            .copied()
            .filter(|&id| corpus.docs()[id].label != Label::Unlabeled)
            .collect()
    } else {
        model.tensor_doc_ids.clone()
    };
    let pairs: Vec<(usize, &TokenSeq)> = ids.iter().map(|&id| (id, &tokens[id])).collect();
    let errors = model.score(&pairs, config.normalize)?;
    let labels: Vec<Label> = ids.iter().map(|&id| corpus.docs()[id].label).collect();
    let head = fit_head(config, &errors.errors, &labels, seed)?;
    let detector = DetectorFile {
        config_fingerprint: model.config_fingerprint.clone(),
        geometry: model.geometry.clone(),
        normalize: config.normalize,
        head,
    };
    let provenance = Provenance {
        fold: usize::MAX,
        test_ids: Vec::new(),
        vocabulary: model.vocab.source_doc_ids().to_vec(),
        tensor: model.tensor_doc_ids.clone(),
        cp_model: model.tensor_doc_ids.clone(),
        detector: ids,
        detector_exempt: config.detector.supervised().is_some(),
        allow_labeled_training: false,
    };
    Ok((model, detector, provenance))
}

fn write_model(dir: &Path, model: &GpTenModel, detector: &DetectorFile) -> Result<()> {
    model.save(&dir.join(MODEL_FILE))?;
    write(&dir.join(DETECTOR_FILE), serde_json::to_string_pretty(detector)?)
}

/// Cross-validated evaluation plus a model fitted on the whole corpus.
pub fn cmd_run(config: &PipelineConfig) -> Result<Report> {
    config.validate()?;
    let corpus = load_input(config)?;
    let dir = output_dir(config)?;
    let eval = cross_validate(&corpus, config)?;
    let tokens = corpus.tokenize(&config.tokenizer);
    let (model, detector, _) = fit_full(&corpus, &tokens, config)?;
    write(&dir.join(CONFIG_FILE), config.to_json()?)?;
    write(&dir.join(REPORT_FILE), eval.report.to_json()?)?;
    write(&dir.join(SCORES_FILE), scores_csv(&eval.report.config_fingerprint, &eval.scores))?;
    write_model(&dir, &model, &detector)?;
    if !eval.report.audit.passed {
        return Err(Error::Audit(format!(
            "{} violations",
            eval.report.audit.violations.len()
        )));
    }
    Ok(eval.report)
}

/// Fits and saves the model and head on the whole input.
pub fn cmd_decompose(config: &PipelineConfig) -> Result<GpTenModel> {
    config.validate()?;
    let corpus = load_input(config)?;
    let dir = output_dir(config)?;
    let tokens = corpus.tokenize(&config.tokenizer);
    let (model, detector, _) = fit_full(&corpus, &tokens, config)?;
    write_model(&dir, &model, &detector)?;
    Ok(model)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: usize,
    pub recon_error: f64,
    pub score: Option<f64>,
    pub predicted: Option<bool>,
}

/// Scores every document of `input` with a saved model. A saved head adds
/// anomaly scores and decisions; `expect` pins the configuration the caller
/// believes produced the model.
pub fn cmd_score(
    model_path: &Path,
    detector_path: Option<&Path>,
    input: &Path,
    output: &Path,
    expect: Option<&PipelineConfig>,
) -> Result<Vec<ScoredDoc>> {
    let model = GpTenModel::load(model_path)?;
    let config: PipelineConfig = match expect {
        Some(c) => {
            let found = c.fingerprint();
            if found != model.config_fingerprint {
                return Err(Error::FingerprintMismatch {
                    expected: model.config_fingerprint.clone(),
                    found,
                });
            }
            c.clone()
        }
        None => PipelineConfig::default(),
    };
    let mut normalize = expect.map_or(false, |c| c.normalize);
    let head = match detector_path {
        Some(p) => {
            let d: DetectorFile = read_json(p)?;
            d.check(&model)?;
            normalize = d.normalize;
            Some(d.head)
        }
        None => None,
    };
    let corpus = load_corpus(input, &config.schema)?;
    let tokens = corpus.tokenize(&model.tokenizer);
    let pairs: Vec<(usize, &TokenSeq)> = tokens.iter().enumerate().collect();
    let errors = model.score(&pairs, normalize)?;
    let (scores, predicted) = match &head {
        Some(h) => (Some(h.score(&errors.errors)), Some(h.predict(&errors.errors))),
        None => (None, None),
    };
    let rows: Vec<ScoredDoc> = (0..errors.len())
        .map(|i| ScoredDoc {
            doc_id: errors.doc_ids[i],
            recon_error: errors.errors[i],
            score: scores.as_ref().map(|s| s[i]),
            predicted: predicted.as_ref().map(|p| p[i]),
        })
        .collect();
    let mut csv = format!("# fingerprint={}\n", model.config_fingerprint);
    csv.push_str(if head.is_some() {
        "doc_id,recon_error,score,predicted\n"
    } else {
        "doc_id,recon_error\n"
    });
    for r in &rows {
        match (r.score, r.predicted) {
            (Some(s), Some(p)) => csv.push_str(&format!("{},{:e},{:e},{}\n", r.doc_id, r.recon_error, s, p as u8)),
            _ => csv.push_str(&format!("{},{:e}\n", r.doc_id, r.recon_error)),
        }
    }
    write(output, csv)?;
    Ok(rows)
}

pub fn cmd_sweep(config: &PipelineConfig, ranks: &[usize]) -> Result<SweepReport> {
    let corpus = load_input(config)?;
    let dir = output_dir(config)?;
    let sweep = rank_sweep(&corpus, ranks, config)?;
    write(&dir.join(SWEEP_FILE), sweep.to_csv())?;
    write(&dir.join(SWEEP_JSON_FILE), sweep.to_json()?)?;
    Ok(sweep)
}

pub fn cmd_baseline(config: &PipelineConfig, options: &LinearOptions) -> Result<Report> {
    let corpus = load_input(config)?;
    let dir = output_dir(config)?;
    let eval = baseline_cross_validate(&corpus, config, options)?;
    write(&dir.join(REPORT_FILE), eval.report.to_json()?)?;
    write(&dir.join(SCORES_FILE), scores_csv(&eval.report.config_fingerprint, &eval.scores))?;
    Ok(eval.report)
}

pub fn cmd_split(config: &PipelineConfig) -> Result<()> {
    let corpus = load_input(config)?;
    let dir = output_dir(config)?;
    let plan = make_splits(&corpus, config.folds, config.seed)?;
    write(&dir.join(FOLDS_FILE), plan.to_json()?)
}

pub fn cmd_synth(options: &SynthOptions, path: &Path) -> Result<Corpus> {
    let (corpus, _, _) = synth_corpus(options)?;
    write_corpus(&corpus, &crate::corpus::CorpusSchema::default(), path)?;
    Ok(corpus)
}

#[derive(Serialize)]
struct SliceManifest<'a> {
    config_fingerprint: String,
    geometry: String,
    terms: &'a [String],
    doc_ids: Vec<usize>,
}

/// Writes every human slice as `slice_<doc>.csv` (COO with header
/// `i,j,count`) plus `slice_<doc>.json`, and a `manifest.json` with the
/// vocabulary.
pub fn cmd_export_slices(config: &PipelineConfig) -> Result<usize> {
    config.validate()?;
    let corpus = load_input(config)?;
    let dir = output_dir(config)?.join("slices");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let tokens = corpus.tokenize(&config.tokenizer);
    let all: Vec<usize> = (0..corpus.len()).collect();
    let vocab = build_vocabulary(&corpus, &tokens, &all, config.vocab_cap)?;
    let human: Vec<(usize, &TokenSeq)> = all
        .iter()
        .filter(|&&id| corpus.docs()[id].label == Label::Human)
        .map(|&id| (id, &tokens[id]))
        .collect();
    let cooc = config.cooc();
    let tensor = build_tensor(&human, &vocab, &cooc)?;
    for slice in tensor.slices() {
        let mut buf = Vec::new();
        slice.write_coo(&mut buf).map_err(|e| Error::io(&dir, e))?;
        write(&dir.join(format!("slice_{}.csv", slice.doc_id)), buf)?;
        write(
            &dir.join(format!("slice_{}.json", slice.doc_id)),
            serde_json::to_string_pretty(&slice.sidecar(cooc.window))?,
        )?;
    }
    let manifest = SliceManifest {
        config_fingerprint: config.fingerprint(),
        geometry: crate::model::geometry_fingerprint(&vocab, &cooc),
        terms: vocab.terms(),
        doc_ids: tensor.doc_ids(),
    };
    write(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(tensor.len())
}
