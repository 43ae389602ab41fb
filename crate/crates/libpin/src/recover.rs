//! Library instance recovery.
//!
//! Given an app profile and the class index, this module identifies library
//! candidates, arranges app classes into a region graph (settled vs floating
//! provenance), and attributes floating classes through the two-round filter:
//! round one transfers each floating class that is version-compatible with a
//! settled candidate (larger candidates first); round two scores every
//! candidate extended by its remaining floating successors and awards classes
//! to the highest-scoring candidates.
//!
//! Scans of distinct apps may run fully in parallel against a shared index;
//! a single scan is internally sequential because transfers are
//! order-dependent. All tie-breaking is by ascending library name so results
//! are deterministic.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::database::{LibraryDatabase, LibraryVersionId};
use crate::index::ClassIndex;
use crate::profile::{ClassName, ClassNode, Profile};
use crate::score::{one, ratio, zero, Score};

#[derive(Debug, Error)]
pub enum RecoverError {
    #[error("unknown version: {0}")]
    UnknownVersion(LibraryVersionId),
}

/// Counterparts of one app class: all library classes sharing its name with
/// method-set similarity greater than zero.
#[derive(Debug, Clone)]
pub struct Counterparts {
    pub name: ClassName,
    pub matches: Vec<(LibraryVersionId, Score)>,
}

/// Looks up `ac`'s name in the index and keeps every occurrence whose
/// similarity is positive.
pub fn counterparts(ac: &ClassNode, index: &ClassIndex) -> Counterparts {
    let mut matches = Vec::new();
    for entry in index.lookup(&ac.name) {
        // Same formula as class_similarity, computed off the inlined method
        // set to avoid rebuilding class nodes on the scan hot path.
        let inter = ac.methods.intersection(&entry.methods).count() as u64;
        let score = if ac.methods.is_empty() && entry.methods.is_empty() {
            one()
        } else if inter == 0 {
            zero()
        } else {
            let union = ac.methods.union(&entry.methods).count() as u64;
            ratio(inter, union)
        };
        if score > zero() {
            matches.push((entry.id.clone(), score));
        }
    }
    Counterparts {
        name: ac.name.clone(),
        matches,
    }
}

/// Per-class counterpart scores, grouped by library then version.
#[derive(Debug, Clone, Default)]
pub struct CounterpartScores {
    map: BTreeMap<ClassName, BTreeMap<String, BTreeMap<String, Score>>>,
}

impl CounterpartScores {
    pub fn insert(&mut self, class: ClassName, id: LibraryVersionId, score: Score) {
        self.map
            .entry(class)
            .or_default()
            .entry(id.library)
            .or_default()
            .insert(id.version, score);
    }

    pub fn libraries(&self, class: &ClassName) -> impl Iterator<Item = &str> {
        self.map
            .get(class)
            .into_iter()
            .flat_map(|libs| libs.keys().map(String::as_str))
    }

    pub fn versions(&self, class: &ClassName, library: &str) -> Option<&BTreeMap<String, Score>> {
        self.map.get(class)?.get(library)
    }

    pub fn score(&self, class: &ClassName, library: &str, version: &str) -> Option<&Score> {
        self.versions(class, library)?.get(version)
    }
}

/// App classes arranged by possible third-party provenance.
///
/// Settled nodes hold classes whose counterparts all come from one library;
/// floating nodes hold classes with multi-library provenance, keyed by the
/// sorted set of participating library names. Classes with no counterparts
/// are app-authored and tracked in `unmatched`. The settled map carries an
/// entry (possibly empty) for every library participating in any floating
/// node, so round two can score candidates that exist only through
/// successors.
#[derive(Debug, Clone)]
pub struct RegionGraph {
    pub settled: BTreeMap<String, BTreeSet<ClassName>>,
    pub floating: BTreeMap<Vec<String>, BTreeSet<ClassName>>,
    pub unmatched: BTreeSet<ClassName>,
    pub cp: CounterpartScores,
}

/// STEPs 1-3: computes counterparts for every app class and awards each class
/// to its settled or floating node.
pub fn build_region_graph(app: &Profile, index: &ClassIndex) -> RegionGraph {
    let mut settled: BTreeMap<String, BTreeSet<ClassName>> = BTreeMap::new();
    let mut floating: BTreeMap<Vec<String>, BTreeSet<ClassName>> = BTreeMap::new();
    let mut unmatched = BTreeSet::new();
    let mut cp = CounterpartScores::default();

    for (name, node) in app.classes() {
        let cps = counterparts(node, index);
        if cps.matches.is_empty() {
            unmatched.insert(name.clone());
            continue;
        }
        let mut libs: BTreeSet<String> = BTreeSet::new();
        for (id, score) in cps.matches {
            libs.insert(id.library.clone());
            cp.insert(name.clone(), id, score);
        }
        if libs.len() == 1 {
            let lib = libs.into_iter().next().unwrap();
            settled.entry(lib).or_default().insert(name.clone());
        } else {
            floating
                .entry(libs.into_iter().collect())
                .or_default()
                .insert(name.clone());
        }
    }

    for key in floating.keys() {
        for lib in key {
            settled.entry(lib.clone()).or_default();
        }
    }

    RegionGraph {
        settled,
        floating,
        unmatched,
        cp,
    }
}

/// Indicator values of a candidate class set against one library version.
#[derive(Debug, Clone, PartialEq)]
pub struct Indicators {
    /// `|M(C, Vx)|`: candidate classes with a counterpart in Vx.
    pub matched: usize,
    pub sim_s: Score,
    pub sim_a: Score,
    pub prop: Score,
    pub comp: Score,
}

/// Evaluates the indicator algebra for candidate `classes` against `id`.
pub fn indicators(
    classes: &BTreeSet<ClassName>,
    cp: &CounterpartScores,
    id: &LibraryVersionId,
    db: &LibraryDatabase,
) -> Result<Indicators, RecoverError> {
    let profile = db
        .profile(id)
        .ok_or_else(|| RecoverError::UnknownVersion(id.clone()))?;
    let mut matched = 0usize;
    let mut sim_s = zero();
    for class in classes {
        if let Some(score) = cp.score(class, &id.library, &id.version) {
            matched += 1;
            sim_s += score;
        }
    }
    let sim_a = if matched == 0 {
        zero()
    } else {
        sim_s.clone() / ratio(matched as u64, 1)
    };
    let prop = if profile.class_count() == 0 {
        zero()
    } else {
        ratio(matched as u64, profile.class_count() as u64)
    };
    let comp = if classes.is_empty() {
        zero()
    } else {
        ratio(matched as u64, classes.len() as u64)
    };
    Ok(Indicators {
        matched,
        sim_s,
        sim_a,
        prop,
        comp,
    })
}

/// Best-matched version set: all versions maximizing the aggregate
/// similarity `Sim_s`. `Prop` is deliberately not considered. An empty
/// candidate matches all collected versions.
pub fn best_version_set(
    classes: &BTreeSet<ClassName>,
    cp: &CounterpartScores,
    library: &str,
    db: &LibraryDatabase,
) -> Vec<String> {
    let versions = db.versions(library).unwrap_or(&[]);
    let mut cand = Candidate::new(library, versions, db);
    for class in classes {
        cand.add_class(class.clone(), cp);
    }
    cand.v_p()
}

/// Final score of a candidate: max over its best-matched versions of
/// `Sim_a * Prop * Comp`. Zero for an empty candidate.
pub fn candidate_score(
    classes: &BTreeSet<ClassName>,
    cp: &CounterpartScores,
    library: &str,
    db: &LibraryDatabase,
) -> Score {
    let versions = db.versions(library).unwrap_or(&[]);
    let mut cand = Candidate::new(library, versions, db);
    for class in classes {
        cand.add_class(class.clone(), cp);
    }
    cand.score(cp)
}

/// Assumption-2 compatibility: a floating class can join a candidate iff
/// their best-matched version sets intersect, treating the class as a
/// single-class candidate. An empty candidate is compatible with any class
/// of its library.
pub fn compatible(
    classes: &BTreeSet<ClassName>,
    fc: &ClassName,
    library: &str,
    cp: &CounterpartScores,
    db: &LibraryDatabase,
) -> bool {
    if classes.is_empty() {
        return true;
    }
    let vp_c: BTreeSet<String> = best_version_set(classes, cp, library, db).into_iter().collect();
    let single: BTreeSet<ClassName> = [fc.clone()].into();
    best_version_set(&single, cp, library, db)
        .into_iter()
        .any(|v| vp_c.contains(&v))
}

/// A recovered, accepted library instance.
#[derive(Debug, Clone)]
pub struct LibraryInstance {
    pub library: String,
    /// App classes attributed to this instance, each with its counterpart
    /// similarity at the scoring version (zero when absent there).
    pub classes: BTreeMap<ClassName, Score>,
    /// Best-matched version set, in release order.
    pub v_p: Vec<String>,
    /// The version in `v_p` maximizing the score product (first on ties).
    pub scoring_version: String,
    pub score: Score,
    pub indicators: Indicators,
}

/// Outcome of filtering: accepted instances, residual classes (classes held
/// by candidates discarded with score <= 0, plus floating classes never
/// absorbed), and app-authored unmatched classes.
#[derive(Debug, Clone)]
pub struct RecoveryResult {
    pub instances: Vec<LibraryInstance>,
    pub residual: BTreeSet<ClassName>,
    pub unmatched: BTreeSet<ClassName>,
}

/// Candidate with per-version aggregate-similarity accumulators, so the
/// best-matched version set stays cheap to refresh after every transfer.
struct Candidate {
    library: String,
    versions: Vec<String>,
    version_index: HashMap<String, usize>,
    classes: BTreeSet<ClassName>,
    sim_s: Vec<Score>,
    matched: Vec<u32>,
    class_counts: Vec<usize>,
}

impl Candidate {
    fn new(library: &str, versions: &[String], db: &LibraryDatabase) -> Self {
        let class_counts = versions
            .iter()
            .map(|v| {
                db.profile(&LibraryVersionId::new(library, v.clone()))
                    .map(Profile::class_count)
                    .unwrap_or(0)
            })
            .collect();
        Candidate {
            library: library.to_string(),
            versions: versions.to_vec(),
            version_index: versions
                .iter()
                .enumerate()
                .map(|(i, v)| (v.clone(), i))
                .collect(),
            classes: BTreeSet::new(),
            sim_s: vec![zero(); versions.len()],
            matched: vec![0; versions.len()],
            class_counts,
        }
    }

    fn clone_candidate(&self) -> Candidate {
        Candidate {
            library: self.library.clone(),
            versions: self.versions.clone(),
            version_index: self.version_index.clone(),
            classes: self.classes.clone(),
            sim_s: self.sim_s.clone(),
            matched: self.matched.clone(),
            class_counts: self.class_counts.clone(),
        }
    }

    fn add_class(&mut self, class: ClassName, cp: &CounterpartScores) {
        if let Some(versions) = cp.versions(&class, &self.library) {
            for (version, score) in versions {
                if let Some(&i) = self.version_index.get(version) {
                    self.sim_s[i] += score;
                    self.matched[i] += 1;
                }
            }
        }
        self.classes.insert(class);
    }

    /// Indices of versions maximizing Sim_s; all versions for an empty
    /// candidate.
    fn v_p_indices(&self) -> Vec<usize> {
        if self.classes.is_empty() {
            return (0..self.versions.len()).collect();
        }
        let max = match self.sim_s.iter().max() {
            Some(m) => m.clone(),
            None => return Vec::new(),
        };
        (0..self.versions.len())
            .filter(|&i| self.sim_s[i] == max)
            .collect()
    }

    fn v_p(&self) -> Vec<String> {
        self.v_p_indices()
            .into_iter()
            .map(|i| self.versions[i].clone())
            .collect()
    }

    fn compatible(&self, fc: &ClassName, cp: &CounterpartScores) -> bool {
        if self.classes.is_empty() {
            return true;
        }
        let vp = self.v_p_indices();
        let scores = match cp.versions(fc, &self.library) {
            Some(s) => s,
            None => return false,
        };
        let max = match scores.values().max() {
            Some(m) => m.clone(),
            None => return false,
        };
        vp.into_iter().any(|i| {
            scores
                .get(&self.versions[i])
                .is_some_and(|s| *s == max)
        })
    }

    fn product_at(&self, i: usize) -> Score {
        let matched = self.matched[i] as u64;
        if matched == 0 || self.classes.is_empty() || self.class_counts[i] == 0 {
            return zero();
        }
        let sim_a = self.sim_s[i].clone() / ratio(matched, 1);
        let prop = ratio(matched, self.class_counts[i] as u64);
        let comp = ratio(matched, self.classes.len() as u64);
        sim_a * prop * comp
    }

    fn score(&self, _cp: &CounterpartScores) -> Score {
        if self.classes.is_empty() {
            return zero();
        }
        self.v_p_indices()
            .into_iter()
            .map(|i| self.product_at(i))
            .max()
            .unwrap_or_else(zero)
    }

    fn finalize(&self, cp: &CounterpartScores, db: &LibraryDatabase) -> LibraryInstance {
        let vp = self.v_p_indices();
        let (scoring_idx, score) = vp
            .iter()
            .map(|&i| (i, self.product_at(i)))
            .max_by(|(ia, sa), (ib, sb)| sa.cmp(sb).then(ib.cmp(ia)))
            .expect("accepted candidate has versions");
        let scoring_version = self.versions[scoring_idx].clone();
        let id = LibraryVersionId::new(self.library.clone(), scoring_version.clone());
        let ind = indicators(&self.classes, cp, &id, db).expect("version exists");
        let classes = self
            .classes
            .iter()
            .map(|c| {
                let s = cp
                    .score(c, &self.library, &scoring_version)
                    .cloned()
                    .unwrap_or_else(zero);
                (c.clone(), s)
            })
            .collect();
        LibraryInstance {
            library: self.library.clone(),
            classes,
            v_p: vp.into_iter().map(|i| self.versions[i].clone()).collect(),
            scoring_version,
            score,
            indicators: ind,
        }
    }
}

/// Two-round filtering of library candidates.
pub fn filter_candidates(graph: &RegionGraph, db: &LibraryDatabase) -> RecoveryResult {
    let cp = &graph.cp;
    let mut floating = graph.floating.clone();

    let mut candidates: BTreeMap<String, Candidate> = BTreeMap::new();
    for (lib, classes) in &graph.settled {
        let versions = db.versions(lib).unwrap_or(&[]);
        let mut cand = Candidate::new(lib, versions, db);
        for class in classes {
            cand.add_class(class.clone(), cp);
        }
        candidates.insert(lib.clone(), cand);
    }

    // Round 1: larger settled candidates first (initial sizes), ties by
    // ascending library name.
    let mut order: Vec<String> = graph
        .settled
        .iter()
        .filter(|(_, classes)| !classes.is_empty())
        .map(|(lib, _)| lib.clone())
        .collect();
    order.sort_by(|a, b| {
        graph.settled[b]
            .len()
            .cmp(&graph.settled[a].len())
            .then_with(|| a.cmp(b))
    });

    for lib in &order {
        let keys: Vec<Vec<String>> = floating
            .keys()
            .filter(|key| key.iter().any(|l| l == lib))
            .cloned()
            .collect();
        for key in keys {
            let classes: Vec<ClassName> = floating[&key].iter().cloned().collect();
            for ac in classes {
                let cand = candidates.get_mut(lib).expect("settled candidate");
                // V_p is refreshed for every test: the accumulators already
                // reflect earlier transfers.
                if cand.compatible(&ac, cp) {
                    cand.add_class(ac.clone(), cp);
                    floating.get_mut(&key).unwrap().remove(&ac);
                }
            }
        }
    }
    floating.retain(|_, classes| !classes.is_empty());

    // Round 2: score every candidate extended by its remaining floating
    // successors, then repeatedly accept the best one.
    let extended_score = |lib: &str,
                          candidates: &BTreeMap<String, Candidate>,
                          floating: &BTreeMap<Vec<String>, BTreeSet<ClassName>>|
     -> Score {
        let mut ext = candidates[lib].clone_candidate();
        for (key, classes) in floating {
            if key.iter().any(|l| l == lib) {
                for class in classes {
                    ext.add_class(class.clone(), cp);
                }
            }
        }
        ext.score(cp)
    };

    let mut remaining: BTreeSet<String> = candidates.keys().cloned().collect();
    let mut scores: BTreeMap<String, Score> = remaining
        .iter()
        .map(|lib| (lib.clone(), extended_score(lib, &candidates, &floating)))
        .collect();

    let mut instances = Vec::new();
    let mut residual = BTreeSet::new();

    while !remaining.is_empty() {
        // Highest score wins; ties broken by ascending library name
        // (BTreeSet iteration order makes the first max the winner).
        let lib = remaining
            .iter()
            .max_by(|a, b| scores[*a].cmp(&scores[*b]).then_with(|| b.cmp(a)))
            .unwrap()
            .clone();
        remaining.remove(&lib);

        if scores[&lib] > zero() {
            let keys: Vec<Vec<String>> = floating
                .keys()
                .filter(|key| key.iter().any(|l| l == &lib))
                .cloned()
                .collect();
            let mut affected: BTreeSet<String> = BTreeSet::new();
            for key in keys {
                let classes = floating.remove(&key).unwrap();
                let cand = candidates.get_mut(&lib).unwrap();
                for class in classes {
                    cand.add_class(class, cp);
                }
                for other in &key {
                    if other != &lib && remaining.contains(other) {
                        affected.insert(other.clone());
                    }
                }
            }
            for other in affected {
                let s = extended_score(&other, &candidates, &floating);
                scores.insert(other, s);
            }
            instances.push(candidates[&lib].finalize(cp, db));
        } else {
            residual.extend(candidates[&lib].classes.iter().cloned());
        }
    }

    for classes in floating.into_values() {
        residual.extend(classes);
    }

    instances.sort_by(|a, b| a.library.cmp(&b.library));
    RecoveryResult {
        instances,
        residual,
        unmatched: graph.unmatched.clone(),
    }
}
