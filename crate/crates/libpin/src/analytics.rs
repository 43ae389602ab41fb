//! Database-level studies: pairwise library overlap, profile-uniqueness
//! grouping, and vulnerability triage of version verdicts against advisories.
//!
//! All ratios are computed in exact rational arithmetic and rendered as
//! decimals only at the report boundary.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::database::{LibraryDatabase, LibraryVersionId};
use crate::profile::{Profile, ProfileLevel, Signature};
use crate::score::{one, ratio, zero, Score};
use crate::version::VersionVerdict;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("profile has no classes (overlap denominator is zero)")]
    EmptyProfile,
    #[error("unknown library: {0}")]
    UnknownLibrary(String),
    #[error("advisory for {library}: version {version} not collected in the database")]
    UnknownAdvisoryVersion { library: String, version: String },
}

/// Share of `a`'s class names that also appear in `b`.
pub fn overlap(a: &Profile, b: &Profile) -> Result<Score, AnalyticsError> {
    if a.is_empty() {
        return Err(AnalyticsError::EmptyProfile);
    }
    let shared = a
        .classes()
        .keys()
        .filter(|name| b.get(name).is_some())
        .count() as u64;
    Ok(ratio(shared, a.class_count() as u64))
}

/// Max overlap over all collected version pairs of two libraries. Empty
/// versions of `a` are skipped (their denominator is zero); both libraries
/// need at least one non-empty version.
pub fn library_overlap(
    a: &str,
    b: &str,
    db: &LibraryDatabase,
) -> Result<Score, AnalyticsError> {
    let matrix = overlap_matrix(a, b, db)?;
    Ok(matrix
        .into_iter()
        .map(|(_, _, score)| score)
        .max()
        .unwrap_or_else(zero))
}

/// Full per-version-pair overlap matrix `overlap(a_x, b_y)` for non-empty
/// versions of `a` against non-empty versions of `b`.
pub fn overlap_matrix(
    a: &str,
    b: &str,
    db: &LibraryDatabase,
) -> Result<Vec<(String, String, Score)>, AnalyticsError> {
    let a_versions = db
        .versions(a)
        .map_err(|_| AnalyticsError::UnknownLibrary(a.to_string()))?;
    let b_versions = db
        .versions(b)
        .map_err(|_| AnalyticsError::UnknownLibrary(b.to_string()))?;
    let non_empty = |lib: &str, versions: &[String]| -> Vec<String> {
        versions
            .iter()
            .filter(|v| !db.is_empty_profile(&LibraryVersionId::new(lib, v.as_str())))
            .cloned()
            .collect()
    };
    let a_versions = non_empty(a, a_versions);
    let b_versions = non_empty(b, b_versions);
    if a_versions.is_empty() || b_versions.is_empty() {
        return Err(AnalyticsError::EmptyProfile);
    }

    let mut matrix = Vec::with_capacity(a_versions.len() * b_versions.len());
    for av in &a_versions {
        let ap = db.profile(&LibraryVersionId::new(a, av.clone())).unwrap();
        for bv in &b_versions {
            let bp = db.profile(&LibraryVersionId::new(b, bv.clone())).unwrap();
            matrix.push((av.clone(), bv.clone(), overlap(ap, bp)?));
        }
    }
    Ok(matrix)
}

/// Ordered library pairs with a non-zero max overlap ratio.
pub fn overlap_report(db: &LibraryDatabase) -> Vec<(String, String, Score)> {
    let libs: Vec<&str> = db.libraries().collect();
    let mut out = Vec::new();
    for a in &libs {
        for b in &libs {
            if a == b {
                continue;
            }
            if let Ok(score) = library_overlap(a, b, db) {
                if score > zero() {
                    out.push((a.to_string(), b.to_string(), score));
                }
            }
        }
    }
    out
}

/// Grouping of non-empty profiles by content signature at one level.
#[derive(Debug, Clone)]
pub struct UniquenessReport {
    pub level: ProfileLevel,
    /// Signature -> ids carrying it. Groups partition the profile set.
    pub groups: BTreeMap<Signature, Vec<LibraryVersionId>>,
    /// Group size -> number of groups of that size.
    pub histogram: BTreeMap<usize, usize>,
}

/// Groups all non-empty profiles by signature. At code level only code-level
/// entries participate.
pub fn uniqueness_groups(db: &LibraryDatabase, level: ProfileLevel) -> UniquenessReport {
    let mut groups: BTreeMap<Signature, Vec<LibraryVersionId>> = BTreeMap::new();
    for (id, profile) in db.entries() {
        if profile.is_empty() {
            continue;
        }
        let sig = match level {
            ProfileLevel::ClassLevel => db.class_signature(id).copied(),
            ProfileLevel::CodeLevel => db.code_signature(id).copied(),
        };
        if let Some(sig) = sig {
            groups.entry(sig).or_default().push(id.clone());
        }
    }
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for members in groups.values() {
        *histogram.entry(members.len()).or_insert(0) += 1;
    }
    UniquenessReport {
        level,
        groups,
        histogram,
    }
}

/// Which collected versions an advisory flags as vulnerable. Bounds are over
/// the database's own release order, never semantic-version parsing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VersionPredicate {
    /// Explicit version set.
    Set(BTreeSet<String>),
    /// All versions released at or before the named one.
    MaxInclusive(String),
    /// All versions released strictly before the named one.
    MaxExclusive(String),
}

/// A vulnerability advisory for one library.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Advisory {
    pub library: String,
    pub vulnerable: VersionPredicate,
    pub reference: String,
}

impl Advisory {
    /// Checks the predicate is decidable over the library's collected
    /// versions.
    pub fn validate(&self, db: &LibraryDatabase) -> Result<(), AnalyticsError> {
        let versions = db
            .versions(&self.library)
            .map_err(|_| AnalyticsError::UnknownLibrary(self.library.clone()))?;
        let check = |v: &String| -> Result<(), AnalyticsError> {
            if versions.contains(v) {
                Ok(())
            } else {
                Err(AnalyticsError::UnknownAdvisoryVersion {
                    library: self.library.clone(),
                    version: v.clone(),
                })
            }
        };
        match &self.vulnerable {
            VersionPredicate::Set(set) => set.iter().try_for_each(check),
            VersionPredicate::MaxInclusive(v) | VersionPredicate::MaxExclusive(v) => check(v),
        }
    }

    /// Whether `version` is vulnerable, given the library's release order.
    pub fn matches(&self, version: &str, release_order: &[String]) -> bool {
        let position = |v: &str| release_order.iter().position(|x| x == v);
        match &self.vulnerable {
            VersionPredicate::Set(set) => set.contains(version),
            VersionPredicate::MaxInclusive(bound) => match (position(version), position(bound)) {
                (Some(v), Some(b)) => v <= b,
                _ => false,
            },
            VersionPredicate::MaxExclusive(bound) => match (position(version), position(bound)) {
                (Some(v), Some(b)) => v < b,
                _ => false,
            },
        }
    }
}

/// Triage class of a detected version range against an advisory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriageClass {
    /// Every candidate version is vulnerable.
    Vulnerable,
    /// Both vulnerable and safe versions are covered.
    Risky,
    /// No candidate version is vulnerable.
    Safe,
    /// The advisory targets a different library.
    NotApplicable,
}

/// Classifies a version verdict against an advisory.
pub fn classify(verdict: &VersionVerdict, advisory: &Advisory, db: &LibraryDatabase) -> TriageClass {
    if verdict.library != advisory.library {
        return TriageClass::NotApplicable;
    }
    let order = db.versions(&advisory.library).unwrap_or(&[]).to_vec();
    let vulnerable = verdict
        .candidates_out
        .iter()
        .filter(|v| advisory.matches(v, &order))
        .count();
    if vulnerable == verdict.candidates_out.len() && vulnerable > 0 {
        TriageClass::Vulnerable
    } else if vulnerable == 0 {
        TriageClass::Safe
    } else {
        TriageClass::Risky
    }
}

/// Parses an advisory file: a JSON array of advisories, or a single object.
pub fn parse_advisories(bytes: &[u8]) -> Result<Vec<Advisory>, serde_json::Error> {
    if let Ok(list) = serde_json::from_slice::<Vec<Advisory>>(bytes) {
        return Ok(list);
    }
    serde_json::from_slice::<Advisory>(bytes).map(|a| vec![a])
}

/// Convenience: overlap(a, a) for sanity checks.
pub fn self_overlap(p: &Profile) -> Result<Score, AnalyticsError> {
    overlap(p, p).map(|s| {
        debug_assert_eq!(s, one());
        s
    })
}
