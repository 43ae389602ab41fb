//! libpin: third-party library detection for class-based binary profiles.
//!
//! The pipeline: build a database of versioned library profiles, index it by
//! class name, recover library instances from an app profile via region-graph
//! candidate filtering, pinpoint versions (class level, optionally refined
//! with code-level features), and triage the result against vulnerability
//! advisories. A seeded corpus generator produces benchmark databases, app
//! profiles, and ground truth for end-to-end evaluation.

pub mod analytics;
pub mod database;
pub mod format;
pub mod generator;
pub mod index;
pub mod profile;
pub mod recover;
pub mod report;
pub mod score;
pub mod version;

pub use database::{DatabaseMetadata, LibraryDatabase, LibraryVersionId};
pub use index::ClassIndex;
pub use profile::{
    class_similarity, feature_similarity, signature, ClassName, ClassNode, FeatureItem,
    FeatureKind, FeatureVector, MethodKey, MethodKind, Profile, ProfileLevel, Signature,
};
pub use recover::{build_region_graph, filter_candidates, LibraryInstance, RecoveryResult};
pub use report::{run_bench, scan_app, BenchSummary, ScanOptions, ScanReport};
pub use score::{Score, ScoreRepr};
pub use version::{refine_versions, verdict_quality, VerdictQuality, VersionVerdict};
