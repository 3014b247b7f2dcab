//! Pipeline configuration shared by evaluation and the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cooc::{CoocOptions, Weighting};
use crate::corpus::{CorpusSchema, Tokenizer};
use crate::cpd::AlsOptions;
use crate::detect::{DetectorKind, DetectorOptions, SupervisedKind};
use crate::error::{Error, Result};
use crate::model::{fingerprint_of, ModelSettings};

/// The head that turns reconstruction errors into scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Kde,
    Lof,
    #[serde(rename = "iforest")]
    IsolationForest,
    Stump,
    BoostedStumps,
}

impl HeadKind {
    pub fn unsupervised(self) -> Option<DetectorKind> {
        match self {
            HeadKind::Kde => Some(DetectorKind::Kde),
            HeadKind::Lof => Some(DetectorKind::Lof),
            HeadKind::IsolationForest => Some(DetectorKind::IsolationForest),
            HeadKind::Stump | HeadKind::BoostedStumps => None,
        }
    }

    pub fn supervised(self) -> Option<SupervisedKind> {
        match self {
            HeadKind::Stump => Some(SupervisedKind::Stump),
            HeadKind::BoostedStumps => Some(SupervisedKind::BoostedStumps),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Kde => "kde",
            HeadKind::Lof => "lof",
            HeadKind::IsolationForest => "iforest",
            HeadKind::Stump => "stump",
            HeadKind::BoostedStumps => "boosted_stumps",
        }
    }
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown detector {s:?}")))
    }
}

/// Which errors an unsupervised head is fitted on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Errors of the human training documents.
    #[default]
    TrainErrors,
    /// Errors of the (unlabeled) test documents themselves.
    Transductive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub schema: CorpusSchema,
    pub tokenizer: Tokenizer,
    pub window: usize,
    pub weighting: Weighting,
    pub include_diagonal: bool,
    pub vocab_cap: usize,
    pub rank: usize,
    pub detector: HeadKind,
    pub contamination: f64,
    pub folds: usize,
    pub seed: u64,
    pub als: AlsOptions,
    pub detector_options: DetectorOptions,
    pub boost_rounds: usize,
    /// Divide each error by its slice norm.
    pub normalize: bool,
    pub fit_mode: FitMode,
    /// Sequential execution everywhere.
    pub deterministic: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let cooc = CoocOptions::default();
        Self {
            input: None,
            output: None,
            schema: CorpusSchema::default(),
            tokenizer: Tokenizer::default(),
            window: cooc.window,
            weighting: cooc.weighting,
            include_diagonal: cooc.include_diagonal,
            vocab_cap: 2000,
            rank: 16,
            detector: HeadKind::Kde,
            contamination: 0.1,
            folds: 10,
            seed: 0,
            als: AlsOptions::default(),
            detector_options: DetectorOptions::default(),
            boost_rounds: 50,
            normalize: false,
            fit_mode: FitMode::TrainErrors,
            deterministic: false,
        }
    }
}

impl PipelineConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.window == 0 {
            return fail("window must be at least 1");
        }
        if self.vocab_cap == 0 {
            return fail("vocab_cap must be at least 1");
        }
        if self.rank == 0 {
            return fail("rank must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.contamination) {
            return fail("contamination must lie in [0, 1]");
        }
        if self.folds < 2 {
            return fail("at least 2 folds are required");
        }
        if self.als.max_iters == 0 || self.als.restarts == 0 {
            return fail("als needs max_iters ≥ 1 and restarts ≥ 1");
        }
        if !(self.als.tol >= 0.0) {
            return fail("als tolerance must be non-negative");
        }
        Ok(())
    }

    pub fn cooc(&self) -> CoocOptions {
        CoocOptions {
            window: self.window,
            weighting: self.weighting,
            include_diagonal: self.include_diagonal,
        }
    }

    pub fn als_options(&self) -> AlsOptions {
        let mut als = self.als.clone();
        if self.deterministic {
            als.parallel = false;
        }
        als
    }

    pub fn model_settings(&self, rank: usize, seed: u64) -> ModelSettings {
        let mut als = self.als_options();
        als.seed = seed;
        ModelSettings {
            tokenizer: self.tokenizer.clone(),
            vocab_cap: self.vocab_cap,
            cooc: self.cooc(),
            rank,
            als,
        }
    }

    /// Hash of every modelling field. Input and output locations and the
    /// execution mode do not change results and are left out.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.input = None;
        c.output = None;
        c.deterministic = false;
        c.als.parallel = true;
        fingerprint_of(&c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let c = PipelineConfig {
            rank: 7,
            detector: HeadKind::IsolationForest,
            ..Default::default()
        };
        let back: PipelineConfig = serde_json::from_str(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.fingerprint(), c.fingerprint());
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"rank": 4, "detector": "lof"}"#).unwrap();
        assert_eq!(c.rank, 4);
        assert_eq!(c.detector, HeadKind::Lof);
        assert_eq!(c.window, 5);
        assert_eq!(c.vocab_cap, 2000);
        assert_eq!(c.folds, 10);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"rnak": 4}"#).is_err());
    }

    #[test]
    fn fingerprint_tracks_modelling_fields_only() {
        let base = PipelineConfig::default();
        let moved = PipelineConfig {
            input: Some("elsewhere.csv".into()),
            deterministic: true,
            ..Default::default()
        };
        assert_eq!(base.fingerprint(), moved.fingerprint());
        for changed in [
            PipelineConfig { window: 6, ..Default::default() },
            PipelineConfig { vocab_cap: 10, ..Default::default() },
            PipelineConfig { rank: 3, ..Default::default() },
            PipelineConfig { seed: 1, ..Default::default() },
            PipelineConfig { detector: HeadKind::Lof, ..Default::default() },
            PipelineConfig { contamination: 0.2, ..Default::default() },
        ] {
            assert_ne!(changed.fingerprint(), base.fingerprint());
        }
    }

    #[test]
    fn head_names_parse() {
        for h in [HeadKind::Kde, HeadKind::Lof, HeadKind::IsolationForest, HeadKind::Stump, HeadKind::BoostedStumps] {
            assert_eq!(h.name().parse::<HeadKind>().unwrap(), h);
        }
        assert!("svm".parse::<HeadKind>().is_err());
    }

    #[test]
    fn validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        assert!(PipelineConfig { folds: 1, ..Default::default() }.validate().is_err());
        assert!(PipelineConfig { contamination: 1.5, ..Default::default() }.validate().is_err());
        assert!(PipelineConfig { window: 0, ..Default::default() }.validate().is_err());
    }
}
