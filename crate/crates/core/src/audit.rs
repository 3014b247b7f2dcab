//! Train/test hygiene checks over the document ids each fitted stage saw.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Label};

/// Document ids consumed by each fitted stage of one fold.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub fold: usize,
    pub test_ids: Vec<usize>,
    pub vocabulary: Vec<usize>,
    pub tensor: Vec<usize>,
    /// Rows of the document factor, in order.
    pub cp_model: Vec<usize>,
    pub detector: Vec<usize>,
    /// The detector stage legitimately sees labels (supervised heads) or
    /// test errors (transductive fitting).
    pub detector_exempt: bool,
    /// Supervised pipelines may train on every labeled document; only test
    /// membership is checked.
    pub allow_labeled_training: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub fold: usize,
    pub stage: String,
    pub doc_id: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub passed: bool,
    pub folds_checked: usize,
    pub detector_exempt: bool,
    pub violations: Vec<Violation>,
}

pub fn audit_fold(corpus: &Corpus, p: &Provenance) -> Vec<Violation> {
    let test: HashSet<usize> = p.test_ids.iter().copied().collect();
    let mut out = Vec::new();
    let mut stages = vec![
        ("vocabulary", &p.vocabulary),
        ("tensor", &p.tensor),
        ("cp_model", &p.cp_model),
    ];
    if !p.detector_exempt {
        stages.push(("detector", &p.detector));
    }
    for (stage, ids) in stages {
        for &id in ids {
            let reason = match corpus.get(id).map(|d| d.label) {
                None => Some("unknown document".to_string()),
                Some(_) if test.contains(&id) => Some("test document".to_string()),
                Some(Label::Human) => None,
                Some(_) if p.allow_labeled_training => None,
                Some(label) => Some(format!("{label:?} label").to_lowercase()),
            };
            if let Some(reason) = reason {
                out.push(Violation {
                    fold: p.fold,
                    stage: stage.to_string(),
                    doc_id: id,
                    reason,
                });
            }
        }
    }
    if p.cp_model != p.tensor {
        out.push(Violation {
            fold: p.fold,
            stage: "cp_model".into(),
            doc_id: usize::MAX,
            reason: "document factor rows differ from the tensor slices".into(),
        });
    }
    out
}

pub fn audit(corpus: &Corpus, folds: &[Provenance]) -> AuditReport {
    let violations: Vec<Violation> = folds.iter().flat_map(|p| audit_fold(corpus, p)).collect();
    AuditReport {
        passed: violations.is_empty(),
        folds_checked: folds.len(),
        detector_exempt: folds.iter().any(|p| p.detector_exempt),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Corpus {
        Corpus::from_pairs([
            ("a b", Label::Human),
            ("c d", Label::Human),
            ("e f", Label::Gpt),
            ("g h", Label::Human),
        ])
    }

    fn clean() -> Provenance {
        Provenance {
            fold: 0,
            test_ids: vec![2, 3],
            vocabulary: vec![0, 1],
            tensor: vec![0, 1],
            cp_model: vec![0, 1],
            detector: vec![0, 1],
            detector_exempt: false,
            allow_labeled_training: false,
        }
    }

    #[test]
    fn clean_fold_passes() {
        assert!(audit(&corpus(), &[clean()]).passed);
    }

    #[test]
    fn leaks_are_reported() {
        let mut p = clean();
        p.vocabulary.push(2);
        p.detector.push(3);
        let r = audit(&corpus(), &[p]);
        assert!(!r.passed);
        assert_eq!(r.violations.len(), 2);
        assert_eq!(r.violations[0].stage, "vocabulary");
        assert_eq!(r.violations[0].reason, "test document");
        assert_eq!(r.violations[1].stage, "detector");
    }

    #[test]
    fn gpt_training_doc_is_a_violation() {
        let mut p = clean();
        p.test_ids = vec![3];
        p.tensor.push(2);
        p.cp_model.push(2);
        let v = audit_fold(&corpus(), &p);
        assert_eq!(v.len(), 2);
        assert!(v.iter().all(|v| v.reason == "gpt label"));
    }

    #[test]
    fn labeled_training_still_excludes_test_docs() {
        let mut p = clean();
        p.allow_labeled_training = true;
        p.test_ids = vec![3];
        p.vocabulary.push(2);
        assert!(audit_fold(&corpus(), &p).is_empty());
        p.vocabulary.push(3);
        assert_eq!(audit_fold(&corpus(), &p).len(), 1);
    }

    #[test]
    fn exempt_detector_is_skipped() {
        let mut p = clean();
        p.detector = vec![0, 2, 3];
        p.detector_exempt = true;
        assert!(audit_fold(&corpus(), &p).is_empty());
    }
}
