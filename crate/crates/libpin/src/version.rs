//! Version detection: class-level candidates from recovery, optionally
//! refined with code-level features.
//!
//! Refinement focuses on the methods that actually differ between candidate
//! versions (the inconsistent set `M`), scores each candidate by summing
//! feature-multiset similarity over the instance's share of those methods,
//! and keeps the argmax set. It never widens the candidate set and preserves
//! all tying versions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::database::{LibraryDatabase, LibraryVersionId};
use crate::profile::{feature_similarity, ClassName, MethodKey, Profile, ProfileLevel};
use crate::recover::LibraryInstance;
use crate::score::{zero, Score};

#[derive(Debug, Error)]
pub enum VersionError {
    #[error("code-level features unavailable for {0}")]
    CodeLevelUnavailable(String),
    #[error("unknown version: {0}")]
    UnknownVersion(LibraryVersionId),
}

/// Detection phase a verdict was produced in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionPhase {
    ClassLevel,
    CodeLevel,
}

/// Version-detection outcome for one library instance.
#[derive(Debug, Clone)]
pub struct VersionVerdict {
    pub library: String,
    /// Candidate versions entering detection, in release order.
    pub candidates_in: Vec<String>,
    /// Final candidates; a subset of `candidates_in`, never empty.
    pub candidates_out: Vec<String>,
    pub phase: DetectionPhase,
    /// Per-candidate code-level similarity (empty for class-level verdicts).
    pub per_candidate: BTreeMap<String, Score>,
}

impl VersionVerdict {
    /// Class-level verdict: the recovery-phase candidate set stands.
    pub fn class_level(library: &str, candidates: Vec<String>) -> Self {
        VersionVerdict {
            library: library.to_string(),
            candidates_in: candidates.clone(),
            candidates_out: candidates,
            phase: DetectionPhase::ClassLevel,
            per_candidate: BTreeMap::new(),
        }
    }
}

/// Quality of a verdict against a known truth version.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictQuality {
    Correct,
    Sound,
    Incorrect,
}

/// Correct iff the output is exactly `{truth}`; sound iff it contains truth
/// among others; incorrect otherwise.
pub fn verdict_quality(candidates_out: &[String], truth_version: &str) -> VerdictQuality {
    if candidates_out.len() == 1 && candidates_out[0] == truth_version {
        VerdictQuality::Correct
    } else if candidates_out.iter().any(|v| v == truth_version) {
        VerdictQuality::Sound
    } else {
        VerdictQuality::Incorrect
    }
}

fn code_level_profile<'a>(
    db: &'a LibraryDatabase,
    library: &str,
    version: &str,
) -> Result<&'a Profile, VersionError> {
    let id = LibraryVersionId::new(library, version);
    let profile = db
        .profile(&id)
        .ok_or_else(|| VersionError::UnknownVersion(id.clone()))?;
    if profile.level() != ProfileLevel::CodeLevel {
        return Err(VersionError::CodeLevelUnavailable(id.to_string()));
    }
    Ok(profile)
}

/// Methods that discriminate between candidate versions: methods existing in
/// all candidates but with differing feature vectors in at least one pair,
/// plus methods existing in only a proper subset of candidates. Vectors are
/// compared by exact multiset equality.
pub fn inconsistent_methods(
    candidates: &[String],
    library: &str,
    db: &LibraryDatabase,
) -> Result<BTreeSet<(ClassName, MethodKey)>, VersionError> {
    let profiles: Vec<&Profile> = candidates
        .iter()
        .map(|v| code_level_profile(db, library, v))
        .collect::<Result<_, _>>()?;

    let mut keys: BTreeSet<(ClassName, MethodKey)> = BTreeSet::new();
    for p in &profiles {
        for node in p.classes().values() {
            for m in &node.methods {
                keys.insert((node.name.clone(), m.clone()));
            }
        }
    }

    let mut out = BTreeSet::new();
    for key in keys {
        let (name, method) = &key;
        let mut present = 0usize;
        let mut first = None;
        let mut differs = false;
        for p in &profiles {
            if let Some(node) = p.get(name).filter(|node| node.methods.contains(method)) {
                present += 1;
                let fv = node.feature_vector(method);
                match &first {
                    None => first = Some(fv),
                    Some(f) => {
                        if *f != fv {
                            differs = true;
                        }
                    }
                }
            }
        }
        if present < profiles.len() || differs {
            out.insert(key);
        }
    }
    Ok(out)
}

/// Code-level refinement of an instance's candidate versions.
///
/// `N` is the inconsistent set restricted to methods the instance actually
/// carries in the app profile; each candidate scores the sum of
/// feature-multiset similarities over `N`, with an empty vector standing in
/// for absent methods. When `N` is empty there is no evidence to
/// discriminate and the candidate set passes through unchanged.
pub fn refine_versions(
    instance: &LibraryInstance,
    app: &Profile,
    candidates: &[String],
    library: &str,
    db: &LibraryDatabase,
) -> Result<VersionVerdict, VersionError> {
    if candidates.len() < 2 {
        let mut verdict = VersionVerdict::class_level(library, candidates.to_vec());
        verdict.phase = DetectionPhase::CodeLevel;
        return Ok(verdict);
    }
    if app.level() != ProfileLevel::CodeLevel {
        return Err(VersionError::CodeLevelUnavailable("app profile".into()));
    }

    let m = inconsistent_methods(candidates, library, db)?;
    let n: Vec<&(ClassName, MethodKey)> = m
        .iter()
        .filter(|(name, method)| {
            instance.classes.contains_key(name)
                && app
                    .get(name)
                    .is_some_and(|node| node.methods.contains(method))
        })
        .collect();

    if n.is_empty() {
        return Ok(VersionVerdict {
            library: library.to_string(),
            candidates_in: candidates.to_vec(),
            candidates_out: candidates.to_vec(),
            phase: DetectionPhase::CodeLevel,
            per_candidate: candidates.iter().map(|v| (v.clone(), zero())).collect(),
        });
    }

    let mut per_candidate = BTreeMap::new();
    let mut best = zero();
    for version in candidates {
        let profile = code_level_profile(db, library, version)?;
        let mut score = zero();
        for (name, method) in n.iter().copied() {
            let app_fv = app
                .get(name)
                .map(|node| node.feature_vector(method))
                .unwrap_or_default();
            let cand_fv = profile
                .get(name)
                .filter(|node| node.methods.contains(method))
                .map(|node| node.feature_vector(method))
                .unwrap_or_default();
            score += feature_similarity(&app_fv, &cand_fv);
        }
        if score > best {
            best = score.clone();
        }
        per_candidate.insert(version.clone(), score);
    }

    let candidates_out: Vec<String> = candidates
        .iter()
        .filter(|v| per_candidate[*v] == best)
        .cloned()
        .collect();
    Ok(VersionVerdict {
        library: library.to_string(),
        candidates_in: candidates.to_vec(),
        candidates_out,
        phase: DetectionPhase::CodeLevel,
        per_candidate,
    })
}
