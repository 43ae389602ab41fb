//! Scan reports and the benchmark harness.
//!
//! Reports are plain serde structures with stable (sorted) key order, so a
//! fixed database + app + flags always serializes to identical bytes.
//! Wall-clock timings are opt-in for exactly that reason.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{classify, Advisory, TriageClass};
use crate::database::{LibraryDatabase, LibraryVersionId};
use crate::index::ClassIndex;
use crate::profile::Profile;
use crate::recover::{build_region_graph, filter_candidates, LibraryInstance};
use crate::score::{ratio, ScoreRepr};
use crate::version::{
    refine_versions, verdict_quality, DetectionPhase, VerdictQuality, VersionError,
    VersionVerdict,
};

#[derive(Debug, Error)]
pub enum ScanError {
    #[error(transparent)]
    Version(#[from] VersionError),
    #[error("truth file references unknown app: {0}")]
    UnknownApp(String),
}

#[derive(Debug, Clone)]
pub struct ScanOptions {
    /// Run code-level refinement when the class-level candidate set is
    /// larger than `max_candidates`.
    pub code_level: bool,
    /// Refinement trigger threshold T.
    pub max_candidates: usize,
    /// Attach per-phase wall-clock timings (breaks byte-determinism).
    pub timings: bool,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            code_level: false,
            max_candidates: 1,
            timings: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndicatorsReport {
    pub matched: usize,
    pub sim_s: ScoreRepr,
    pub sim_a: ScoreRepr,
    pub prop: ScoreRepr,
    pub comp: ScoreRepr,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub reference: String,
    pub status: TriageClass,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceReport {
    pub library: String,
    pub class_count: usize,
    pub score: ScoreRepr,
    pub indicators: IndicatorsReport,
    /// Best-matched version set from recovery (class level), release order.
    pub versions_class_level: Vec<String>,
    /// Final candidate versions after the last detection phase that ran.
    pub versions: Vec<String>,
    pub phase: DetectionPhase,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classifications: Vec<ClassificationReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanReport {
    pub app: String,
    /// Hex digest of the database manifest the scan ran against.
    pub manifest_digest: String,
    pub instances: Vec<InstanceReport>,
    pub residual: Vec<String>,
    pub unmatched_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<BTreeMap<String, u64>>,
}

impl ScanReport {
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serialization");
        out.push('\n');
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("app {}\n", self.app);
        if self.instances.is_empty() {
            out.push_str("  no library instances recovered\n");
        }
        for inst in &self.instances {
            out.push_str(&format!(
                "  {} score={} classes={} versions=[{}]\n",
                inst.library,
                inst.score.fraction,
                inst.class_count,
                inst.versions.join(", ")
            ));
            for c in &inst.classifications {
                out.push_str(&format!("    advisory {}: {:?}\n", c.reference, c.status));
            }
        }
        out.push_str(&format!(
            "  residual classes: {}, unmatched classes: {}\n",
            self.residual.len(),
            self.unmatched_count
        ));
        out
    }
}

fn elapsed_ms(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

/// Detects versions for one recovered instance: the class-level candidate set
/// is the instance's best-matched versions; code-level refinement runs only
/// when enabled and the set is still wider than the threshold.
pub fn detect_versions(
    instance: &LibraryInstance,
    app: &Profile,
    db: &LibraryDatabase,
    opts: &ScanOptions,
) -> Result<VersionVerdict, VersionError> {
    let candidates = instance.v_p.clone();
    if opts.code_level && candidates.len() > opts.max_candidates {
        refine_versions(instance, app, &candidates, &instance.library, db)
    } else {
        Ok(VersionVerdict::class_level(&instance.library, candidates))
    }
}

/// Full pipeline for one app profile: region graph, candidate filtering,
/// version detection, advisory triage.
pub fn scan_app(
    app_id: &str,
    app: &Profile,
    db: &LibraryDatabase,
    index: &ClassIndex,
    advisories: &[Advisory],
    opts: &ScanOptions,
) -> Result<ScanReport, ScanError> {
    let mut timings: BTreeMap<String, u64> = BTreeMap::new();

    let start = Instant::now();
    let graph = build_region_graph(app, index);
    timings.insert("region_graph".into(), elapsed_ms(start));

    let start = Instant::now();
    let recovery = filter_candidates(&graph, db);
    timings.insert("candidate_filtering".into(), elapsed_ms(start));

    let start = Instant::now();
    let mut instances = Vec::with_capacity(recovery.instances.len());
    for instance in &recovery.instances {
        let verdict = detect_versions(instance, app, db, opts)?;
        let classifications: Vec<ClassificationReport> = advisories
            .iter()
            .filter(|a| a.library == instance.library)
            .map(|a| ClassificationReport {
                reference: a.reference.clone(),
                status: classify(&verdict, a, db),
            })
            .collect();
        instances.push(InstanceReport {
            library: instance.library.clone(),
            class_count: instance.classes.len(),
            score: ScoreRepr::of(&instance.score),
            indicators: IndicatorsReport {
                matched: instance.indicators.matched,
                sim_s: ScoreRepr::of(&instance.indicators.sim_s),
                sim_a: ScoreRepr::of(&instance.indicators.sim_a),
                prop: ScoreRepr::of(&instance.indicators.prop),
                comp: ScoreRepr::of(&instance.indicators.comp),
            },
            versions_class_level: instance.v_p.clone(),
            versions: verdict.candidates_out,
            phase: verdict.phase,
            classifications,
        });
    }
    timings.insert("version_detection".into(), elapsed_ms(start));

    Ok(ScanReport {
        app: app_id.to_string(),
        manifest_digest: hex::encode(db.manifest_digest()),
        instances,
        residual: recovery.residual.iter().map(|c| c.canonical()).collect(),
        unmatched_count: recovery.unmatched.len(),
        timings_ms: opts.timings.then_some(timings),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchSummary {
    pub apps: usize,
    /// Ground-truth library uses across all apps.
    pub library_uses: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: ScoreRepr,
    pub recall: ScoreRepr,
    /// Version verdicts over true positives with known truth versions.
    pub verdicts_correct: usize,
    pub verdicts_sound: usize,
    pub verdicts_incorrect: usize,
}

impl BenchSummary {
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("summary serialization");
        out.push('\n');
        out
    }

    pub fn to_text(&self) -> String {
        format!(
            "apps {} | uses {} | tp {} fp {} fn {} | precision {} recall {} | verdicts: {} correct, {} sound, {} incorrect\n",
            self.apps,
            self.library_uses,
            self.true_positives,
            self.false_positives,
            self.false_negatives,
            self.precision.fraction,
            self.recall.fraction,
            self.verdicts_correct,
            self.verdicts_sound,
            self.verdicts_incorrect,
        )
    }
}

fn rate(num: usize, den: usize) -> ScoreRepr {
    if den == 0 {
        ScoreRepr::of(&ratio(1, 1))
    } else {
        ScoreRepr::of(&ratio(num as u64, den as u64))
    }
}

/// Scans every app and grades the results against ground-truth labels.
/// A recovered instance is a true positive when its library is labeled for
/// that app; version verdicts are graded against the labeled version.
pub fn run_bench(
    db: &LibraryDatabase,
    index: &ClassIndex,
    apps: &BTreeMap<String, Profile>,
    truth: &BTreeMap<String, Vec<LibraryVersionId>>,
    opts: &ScanOptions,
) -> Result<BenchSummary, ScanError> {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fneg = 0usize;
    let mut uses = 0usize;
    let mut correct = 0usize;
    let mut sound = 0usize;
    let mut incorrect = 0usize;

    for (app_id, labels) in truth {
        let app = apps
            .get(app_id)
            .ok_or_else(|| ScanError::UnknownApp(app_id.clone()))?;
        let report = scan_app(app_id, app, db, index, &[], opts)?;
        let truth_by_lib: BTreeMap<&str, &str> = labels
            .iter()
            .map(|id| (id.library.as_str(), id.version.as_str()))
            .collect();
        uses += labels.len();

        let mut recovered: Vec<&str> = Vec::new();
        for inst in &report.instances {
            recovered.push(&inst.library);
            match truth_by_lib.get(inst.library.as_str()) {
                Some(version) => {
                    tp += 1;
                    match verdict_quality(&inst.versions, version) {
                        VerdictQuality::Correct => correct += 1,
                        VerdictQuality::Sound => sound += 1,
                        VerdictQuality::Incorrect => incorrect += 1,
                    }
                }
                None => fp += 1,
            }
        }
        fneg += labels
            .iter()
            .filter(|id| !recovered.contains(&id.library.as_str()))
            .count();
    }

    Ok(BenchSummary {
        apps: truth.len(),
        library_uses: uses,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fneg,
        precision: rate(tp, tp + fp),
        recall: rate(tp, tp + fneg),
        verdicts_correct: correct,
        verdicts_sound: sound,
        verdicts_incorrect: incorrect,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::database::DatabaseMetadata;
    use crate::generator::{generate_corpus, AppPlan, CorpusSpec, Span};
    use crate::profile::{ClassName, ClassNode, MethodKey, ProfileLevel};

    fn corpus() -> crate::generator::Corpus {
        generate_corpus(&CorpusSpec {
            seed: 42,
            libraries: 5,
            versions_per_library: Span(2, 3),
            classes_per_version: Span(3, 5),
            methods_per_class: Span(2, 4),
            features_per_method: Span(1, 2),
            level: ProfileLevel::CodeLevel,
            version_churn: 0.5,
            code_churn: 0.8,
            base_class_overrides: vec![],
            duplication: vec![],
            apps: AppPlan {
                count: 6,
                libraries_per_app: Span(1, 3),
                customization_rate: 0.0,
            },
        })
        .unwrap()
    }

    #[test]
    fn scan_is_byte_deterministic() {
        let c = corpus();
        let index = ClassIndex::build(&c.database);
        let opts = ScanOptions::default();
        let (app_id, app) = c.apps.iter().next().unwrap();
        let a = scan_app(app_id, app, &c.database, &index, &[], &opts).unwrap();
        let b = scan_app(app_id, app, &c.database, &index, &[], &opts).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    use crate::index::ClassIndex;

    #[test]
    fn bench_on_clean_corpus_is_perfect() {
        let c = corpus();
        let index = ClassIndex::build(&c.database);
        let summary = run_bench(
            &c.database,
            &index,
            &c.apps,
            &c.truth.labels(),
            &ScanOptions {
                code_level: true,
                ..ScanOptions::default()
            },
        )
        .unwrap();
        assert_eq!(summary.false_positives, 0);
        assert_eq!(summary.false_negatives, 0);
        assert_eq!(summary.true_positives, summary.library_uses);
        assert_eq!(summary.precision.fraction, "1");
        assert_eq!(summary.recall.fraction, "1");
        assert_eq!(summary.verdicts_incorrect, 0);
    }

    #[test]
    fn timings_only_when_requested() {
        let c = corpus();
        let index = ClassIndex::build(&c.database);
        let (app_id, app) = c.apps.iter().next().unwrap();
        let plain = scan_app(app_id, app, &c.database, &index, &[], &ScanOptions::default())
            .unwrap();
        assert!(plain.timings_ms.is_none());
        let timed = scan_app(
            app_id,
            app,
            &c.database,
            &index,
            &[],
            &ScanOptions {
                timings: true,
                ..ScanOptions::default()
            },
        )
        .unwrap();
        let timings = timed.timings_ms.unwrap();
        assert!(timings.contains_key("region_graph"));
        assert!(timings.contains_key("candidate_filtering"));
        assert!(timings.contains_key("version_detection"));
    }

    #[test]
    fn advisory_classification_attached_for_matching_library_only() {
        use crate::analytics::VersionPredicate;

        // One library, two versions; scan its own profile, advise on it and
        // on an unrelated library.
        let v1 = Profile::new(
            ProfileLevel::ClassLevel,
            [ClassNode::class_level(
                ClassName::simple("QQOnly"),
                [MethodKey::instance("run")],
            )],
        )
        .unwrap();
        let db = crate::database::LibraryDatabase::build(
            DatabaseMetadata::fixed(),
            [
                (LibraryVersionId::new("Quark", "1.0"), v1.clone()),
                (
                    LibraryVersionId::new("Other", "1.0"),
                    Profile::new(
                        ProfileLevel::ClassLevel,
                        [ClassNode::class_level(
                            ClassName::simple("ZZOther"),
                            [MethodKey::instance("run")],
                        )],
                    )
                    .unwrap(),
                ),
            ],
        )
        .unwrap();
        let index = ClassIndex::build(&db);
        let advisories = vec![
            Advisory {
                library: "Quark".into(),
                vulnerable: VersionPredicate::MaxInclusive("1.0".into()),
                reference: "ADV-1".into(),
            },
            Advisory {
                library: "Absent".into(),
                vulnerable: VersionPredicate::MaxInclusive("9.9".into()),
                reference: "ADV-2".into(),
            },
        ];
        let report =
            scan_app("a", &v1, &db, &index, &advisories, &ScanOptions::default()).unwrap();
        assert_eq!(report.instances.len(), 1);
        let inst = &report.instances[0];
        assert_eq!(inst.classifications.len(), 1);
        assert_eq!(inst.classifications[0].reference, "ADV-1");
        assert_eq!(inst.classifications[0].status, TriageClass::Vulnerable);
    }
}
