//! Synthetic benchmark corpora: a seeded generator that emits a library
//! database, app profiles built from known library versions, and the ground
//! truth labels for those apps.
//!
//! Code duplication between libraries is modeled with shared class pools.
//! Each duplication group owns a pool of fixed class definitions; a schedule
//! says, per participant and per version, which pool classes that version
//! embeds. Participants flagged `contained` carry no classes of their own, so
//! their profiles are exactly their pool slice (the "complete inclusion"
//! shape). Measured overlap between two scheduled versions is therefore a
//! plain set ratio that the generator controls exactly.
//!
//! Everything is driven by one ChaCha20 stream, so equal specs produce
//! byte-identical corpora.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::database::{DatabaseMetadata, DatabaseError, LibraryDatabase, LibraryVersionId};
use crate::profile::{
    ClassName, ClassNode, FeatureItem, FeatureKind, FeatureVector, MethodKey, MethodKind,
    Profile, ProfileLevel,
};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("infeasible spec: {0}")]
    InfeasibleSpec(String),
    #[error(transparent)]
    Database(#[from] DatabaseError),
}

/// Inclusive integer range, serialized as `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span(pub u32, pub u32);

impl Span {
    fn validate(&self, what: &str, min_floor: u32) -> Result<(), GenError> {
        if self.0 > self.1 {
            return Err(GenError::InvalidSpec(format!("{what}: min > max")));
        }
        if self.0 < min_floor {
            return Err(GenError::InvalidSpec(format!("{what}: min below {min_floor}")));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha20Rng) -> u32 {
        rng.gen_range(self.0..=self.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DuplicationPattern {
    CompleteInclusion,
    PartialInclusion,
    MultiPartySharing,
}

/// One participant's pool usage: `per_version[k]` lists pool class indices
/// embedded in that participant's version `k`. The schedule length fixes the
/// participant's version count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantSchedule {
    pub per_version: Vec<Vec<u32>>,
    /// Contained participants have no classes of their own.
    #[serde(default)]
    pub contained: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicationGroup {
    pub pattern: DuplicationPattern,
    /// Library indices, paired positionally with `schedule`.
    pub participants: Vec<u32>,
    /// Pool size.
    pub shared_classes: u32,
    pub schedule: Vec<ParticipantSchedule>,
}

impl DuplicationGroup {
    fn full(shared: u32) -> Vec<u32> {
        (0..shared).collect()
    }

    /// `container` embeds the whole pool (except in its last version);
    /// `contained` is the pool itself, shrinking one class per release.
    pub fn complete_inclusion(container: u32, contained: u32, shared: u32, versions: u32) -> Self {
        let container_sched = ParticipantSchedule {
            per_version: (0..versions)
                .map(|k| if k + 1 == versions { vec![] } else { Self::full(shared) })
                .collect(),
            contained: false,
        };
        let contained_sched = ParticipantSchedule {
            per_version: (0..versions)
                .map(|k| (0..shared.saturating_sub(k)).collect())
                .collect(),
            contained: true,
        };
        DuplicationGroup {
            pattern: DuplicationPattern::CompleteInclusion,
            participants: vec![container, contained],
            shared_classes: shared,
            schedule: vec![container_sched, contained_sched],
        }
    }

    /// Both sides keep their own classes; `a` embeds the whole pool, `b` a
    /// half of it. Last versions drop the pool so a conflict-free pair exists.
    pub fn partial_inclusion(a: u32, b: u32, shared: u32, versions: u32) -> Self {
        let sched = |take: u32| ParticipantSchedule {
            per_version: (0..versions)
                .map(|k| if k + 1 == versions { vec![] } else { (0..take).collect() })
                .collect(),
            contained: false,
        };
        DuplicationGroup {
            pattern: DuplicationPattern::PartialInclusion,
            participants: vec![a, b],
            shared_classes: shared,
            schedule: vec![sched(shared), sched(shared.div_ceil(2))],
        }
    }

    /// Three or more libraries all embedding the same pool.
    pub fn multi_party(participants: Vec<u32>, shared: u32, versions: u32) -> Self {
        let sched = ParticipantSchedule {
            per_version: (0..versions)
                .map(|k| if k + 1 == versions { vec![] } else { Self::full(shared) })
                .collect(),
            contained: false,
        };
        let schedule = vec![sched; participants.len()];
        DuplicationGroup {
            pattern: DuplicationPattern::MultiPartySharing,
            participants,
            shared_classes: shared,
            schedule,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppPlan {
    pub count: u32,
    pub libraries_per_app: Span,
    /// Probability that an integrated library copy gets customized
    /// (method/class deletions).
    pub customization_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub seed: u64,
    pub libraries: u32,
    pub versions_per_library: Span,
    pub classes_per_version: Span,
    pub methods_per_class: Span,
    pub features_per_method: Span,
    pub level: ProfileLevel,
    /// Per-release probability of each structural mutation (class or method
    /// added/removed).
    #[serde(default)]
    pub version_churn: f64,
    /// Per-release probability of feature-count perturbations (code level).
    #[serde(default)]
    pub code_churn: f64,
    /// Overrides the sampled own-class count for a library: (index, count).
    #[serde(default)]
    pub base_class_overrides: Vec<(u32, u32)>,
    #[serde(default)]
    pub duplication: Vec<DuplicationGroup>,
    pub apps: AppPlan,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<(), GenError> {
        if self.libraries == 0 {
            return Err(GenError::InvalidSpec("libraries must be positive".into()));
        }
        self.versions_per_library.validate("versions_per_library", 1)?;
        self.classes_per_version.validate("classes_per_version", 1)?;
        self.methods_per_class.validate("methods_per_class", 1)?;
        self.features_per_method.validate("features_per_method", 0)?;
        for (name, rate) in [
            ("version_churn", self.version_churn),
            ("code_churn", self.code_churn),
            ("customization_rate", self.apps.customization_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(GenError::InvalidSpec(format!("{name} outside [0, 1]")));
            }
        }
        if self.apps.count > 0 {
            self.apps.libraries_per_app.validate("libraries_per_app", 1)?;
            if self.apps.libraries_per_app.1 > self.libraries {
                return Err(GenError::InvalidSpec(
                    "libraries_per_app exceeds library count".into(),
                ));
            }
        }
        for (idx, _) in &self.base_class_overrides {
            if *idx >= self.libraries {
                return Err(GenError::InvalidSpec(format!(
                    "base_class_overrides references library {idx}"
                )));
            }
        }
        let mut grouped: BTreeSet<u32> = BTreeSet::new();
        for (g, group) in self.duplication.iter().enumerate() {
            let min = match group.pattern {
                DuplicationPattern::MultiPartySharing => 3,
                _ => 2,
            };
            if group.participants.len() < min {
                return Err(GenError::InvalidSpec(format!(
                    "group {g}: needs at least {min} participants"
                )));
            }
            if group.schedule.len() != group.participants.len() {
                return Err(GenError::InvalidSpec(format!(
                    "group {g}: schedule/participant count mismatch"
                )));
            }
            if group.shared_classes == 0 {
                return Err(GenError::InvalidSpec(format!("group {g}: empty pool")));
            }
            for p in &group.participants {
                if *p >= self.libraries {
                    return Err(GenError::InvalidSpec(format!(
                        "group {g}: participant {p} out of range"
                    )));
                }
                if !grouped.insert(*p) {
                    return Err(GenError::InvalidSpec(format!(
                        "library {p} appears in more than one duplication group"
                    )));
                }
            }
            for (sched_idx, sched) in group.schedule.iter().enumerate() {
                if sched.per_version.is_empty() {
                    return Err(GenError::InvalidSpec(format!(
                        "group {g}: participant schedule {sched_idx} has no versions"
                    )));
                }
                for slice in &sched.per_version {
                    let mut seen = BTreeSet::new();
                    for idx in slice {
                        if *idx >= group.shared_classes || !seen.insert(*idx) {
                            return Err(GenError::InvalidSpec(format!(
                                "group {g}: bad pool index {idx}"
                            )));
                        }
                    }
                }
            }
            // Every participant pair needs one conflict-free version pair.
            for i in 0..group.schedule.len() {
                for j in (i + 1)..group.schedule.len() {
                    let disjoint = group.schedule[i].per_version.iter().any(|a| {
                        group.schedule[j]
                            .per_version
                            .iter()
                            .any(|b| a.iter().all(|x| !b.contains(x)))
                    });
                    if !disjoint {
                        return Err(GenError::InvalidSpec(format!(
                            "group {g}: participants {} and {} never have disjoint pool slices",
                            group.participants[i], group.participants[j]
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Labels for one generated app: which versions it integrates and, per
/// version, which class names survived customization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    pub id: LibraryVersionId,
    pub classes: BTreeSet<ClassName>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub apps: BTreeMap<String, Vec<GroundTruthEntry>>,
}

impl GroundTruth {
    /// The plain app → versions view written to truth files.
    pub fn labels(&self) -> BTreeMap<String, Vec<LibraryVersionId>> {
        self.apps
            .iter()
            .map(|(app, entries)| (app.clone(), entries.iter().map(|e| e.id.clone()).collect()))
            .collect()
    }
}

pub struct Corpus {
    pub database: LibraryDatabase,
    pub apps: BTreeMap<String, Profile>,
    pub truth: GroundTruth,
}

const NOUNS: &[&str] = &[
    "Client", "Manager", "Request", "Session", "Cache", "Logger", "Parser", "View", "Model",
    "Queue", "Store", "Router", "Codec", "Monitor", "Builder", "Stream", "Layout", "Animator",
    "Bridge", "Scheduler",
];

const VERBS: &[&str] = &[
    "configure", "load", "reset", "append", "resolve", "encode", "decode", "attach", "flush",
    "observe", "update", "validate", "merge", "drain", "signal", "bind",
];

fn base26(mut n: u32) -> String {
    let mut out = Vec::new();
    loop {
        out.push(b'A' + (n % 26) as u8);
        n /= 26;
        if n == 0 {
            break;
        }
    }
    out.reverse();
    String::from_utf8(out).unwrap()
}

fn library_prefix(i: u32) -> String {
    format!("L{}", base26(i))
}

pub fn library_name(i: u32) -> String {
    format!("Lib{}", base26(i))
}

fn class_name(prefix: &str, i: u32) -> ClassName {
    ClassName::simple(&format!(
        "{prefix}{}{}",
        NOUNS[(i as usize) % NOUNS.len()],
        i
    ))
}

/// Mutable class definition while a library's history is being evolved.
#[derive(Clone)]
struct GenClass {
    name: ClassName,
    methods: Vec<(MethodKey, BTreeMap<FeatureItem, u64>)>,
    next_method: u32,
}

impl GenClass {
    fn node(&self, level: ProfileLevel) -> ClassNode {
        let methods = self.methods.iter().map(|(k, _)| k.clone());
        match level {
            ProfileLevel::ClassLevel => ClassNode::class_level(self.name.clone(), methods),
            ProfileLevel::CodeLevel => {
                let features: BTreeMap<MethodKey, FeatureVector> = self
                    .methods
                    .iter()
                    .map(|(k, counts)| {
                        let mut v = FeatureVector::new();
                        for (item, count) in counts {
                            v.add(item.clone(), *count);
                        }
                        (k.clone(), v)
                    })
                    .collect();
                ClassNode::code_level(self.name.clone(), methods, features).unwrap()
            }
        }
    }
}

const FEATURE_KINDS: [FeatureKind; 4] = [
    FeatureKind::ClassRef,
    FeatureKind::SelectorRef,
    FeatureKind::ConstString,
    FeatureKind::ExternalSymbol,
];

fn gen_method(rng: &mut ChaCha20Rng, index: u32, spec: &CorpusSpec) -> (MethodKey, BTreeMap<FeatureItem, u64>) {
    let verb = VERBS[(index as usize) % VERBS.len()];
    let selector = format!("{verb}Item{index}:");
    let kind = if rng.gen_bool(0.8) {
        MethodKind::Instance
    } else {
        MethodKind::ClassMethod
    };
    let key = MethodKey::new(kind, selector).unwrap();
    let mut features = BTreeMap::new();
    if spec.level == ProfileLevel::CodeLevel {
        let n = spec.features_per_method.sample(rng);
        for f in 0..n {
            let kind = FEATURE_KINDS[(f as usize) % FEATURE_KINDS.len()];
            let item = FeatureItem::new(kind, format!("v{}", rng.gen_range(0u32..64)));
            let count = rng.gen_range(1u64..=5);
            *features.entry(item).or_insert(0) += count;
        }
    }
    (key, features)
}

fn gen_class(rng: &mut ChaCha20Rng, prefix: &str, index: u32, spec: &CorpusSpec) -> GenClass {
    let n = spec.methods_per_class.sample(rng);
    let mut methods = Vec::new();
    for m in 0..n {
        methods.push(gen_method(rng, m, spec));
    }
    GenClass {
        name: class_name(prefix, index),
        methods,
        next_method: n,
    }
}

/// One structural + feature churn step between releases.
fn evolve(
    rng: &mut ChaCha20Rng,
    classes: &mut Vec<GenClass>,
    next_class: &mut u32,
    prefix: &str,
    spec: &CorpusSpec,
) {
    if rng.gen_bool(spec.version_churn) {
        classes.push(gen_class(rng, prefix, *next_class, spec));
        *next_class += 1;
    }
    if classes.len() > 1 && rng.gen_bool(spec.version_churn) {
        let victim = rng.gen_range(0..classes.len());
        classes.remove(victim);
    }
    if !classes.is_empty() && rng.gen_bool(spec.version_churn) {
        let target = rng.gen_range(0..classes.len());
        let class = &mut classes[target];
        let m = gen_method(rng, class.next_method, spec);
        class.next_method += 1;
        class.methods.push(m);
    }
    if rng.gen_bool(spec.version_churn) {
        if let Some(class) = classes
            .iter_mut()
            .find(|c| c.methods.len() > 1)
        {
            let victim = rng.gen_range(0..class.methods.len());
            class.methods.remove(victim);
        }
    }
    if spec.level == ProfileLevel::CodeLevel && rng.gen_bool(spec.code_churn) {
        let edits = rng.gen_range(1..=3);
        for _ in 0..edits {
            if classes.is_empty() {
                break;
            }
            let ci = rng.gen_range(0..classes.len());
            let class = &mut classes[ci];
            if class.methods.is_empty() {
                continue;
            }
            let mi = rng.gen_range(0..class.methods.len());
            let counts = &mut class.methods[mi].1;
            if !counts.is_empty() && rng.gen_bool(0.5) {
                let pick = rng.gen_range(0..counts.len());
                if let Some(item) = counts.keys().nth(pick).cloned() {
                    *counts.get_mut(&item).unwrap() += 1;
                }
            } else {
                let kind = FEATURE_KINDS[rng.gen_range(0..FEATURE_KINDS.len())];
                let item = FeatureItem::new(kind, format!("x{}", rng.gen_range(0u32..1024)));
                *counts.entry(item).or_insert(0) += 1;
            }
        }
    }
}

struct LibraryPlan {
    /// (group index, schedule index) when the library participates in a pool.
    pool_role: Option<(usize, usize)>,
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus, GenError> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);

    // Pool classes are fixed per group and shared verbatim by participants.
    let mut pools: Vec<Vec<GenClass>> = Vec::new();
    for (g, group) in spec.duplication.iter().enumerate() {
        let prefix = format!("S{}", base26(g as u32));
        let pool = (0..group.shared_classes)
            .map(|i| gen_class(&mut rng, &prefix, i, spec))
            .collect();
        pools.push(pool);
    }

    let mut roles: BTreeMap<u32, LibraryPlan> = BTreeMap::new();
    for (g, group) in spec.duplication.iter().enumerate() {
        for (s, lib) in group.participants.iter().enumerate() {
            roles.insert(*lib, LibraryPlan { pool_role: Some((g, s)) });
        }
    }
    let overrides: BTreeMap<u32, u32> = spec.base_class_overrides.iter().copied().collect();

    let mut entries: Vec<(LibraryVersionId, Profile)> = Vec::new();
    for lib in 0..spec.libraries {
        let prefix = library_prefix(lib);
        let name = library_name(lib);
        let pool_role = roles.get(&lib).and_then(|p| p.pool_role);
        let contained = pool_role
            .map(|(g, s)| spec.duplication[g].schedule[s].contained)
            .unwrap_or(false);

        let version_count = match pool_role {
            Some((g, s)) => spec.duplication[g].schedule[s].per_version.len() as u32,
            None => spec.versions_per_library.sample(&mut rng),
        };
        let base_count = if contained {
            0
        } else {
            overrides
                .get(&lib)
                .copied()
                .unwrap_or_else(|| spec.classes_per_version.sample(&mut rng))
        };

        let mut own: Vec<GenClass> = (0..base_count)
            .map(|i| gen_class(&mut rng, &prefix, i, spec))
            .collect();
        let mut next_class = base_count;

        for k in 0..version_count {
            if k > 0 && !own.is_empty() {
                evolve(&mut rng, &mut own, &mut next_class, &prefix, spec);
            }
            let mut nodes: Vec<ClassNode> =
                own.iter().map(|c| c.node(spec.level)).collect();
            if let Some((g, s)) = pool_role {
                let slice = &spec.duplication[g].schedule[s].per_version[k as usize];
                for idx in slice {
                    nodes.push(pools[g][*idx as usize].node(spec.level));
                }
            }
            let profile = Profile::new(spec.level, nodes)
                .map_err(|e| GenError::InvalidSpec(e.to_string()))?;
            let version = format!("1.{k}.0");
            entries.push((LibraryVersionId::new(name.clone(), version), profile));
        }
    }

    let database = LibraryDatabase::build(DatabaseMetadata::fixed(), entries)?;

    let mut apps = BTreeMap::new();
    let mut truth = GroundTruth::default();
    for a in 0..spec.apps.count {
        let app_id = format!("app{a:04}");
        let (profile, labels) = gen_app(&mut rng, spec, &database, &app_id)?;
        apps.insert(app_id.clone(), profile);
        truth.apps.insert(app_id, labels);
    }

    Ok(Corpus {
        database,
        apps,
        truth,
    })
}

fn gen_app(
    rng: &mut ChaCha20Rng,
    spec: &CorpusSpec,
    db: &LibraryDatabase,
    app_id: &str,
) -> Result<(Profile, Vec<GroundTruthEntry>), GenError> {
    let want = spec.apps.libraries_per_app.sample(rng) as usize;

    'resample: for _ in 0..50 {
        // Distinct libraries for this app.
        let mut libs: BTreeSet<u32> = BTreeSet::new();
        let mut guard = 0;
        while libs.len() < want {
            libs.insert(rng.gen_range(0..spec.libraries));
            guard += 1;
            if guard > 10_000 {
                continue 'resample;
            }
        }
        let libs: Vec<u32> = libs.into_iter().collect();

        // A conflict-free version per library: class-name sets must be
        // pairwise disjoint across the whole selection.
        'versions: for _ in 0..100 {
            let mut chosen: Vec<LibraryVersionId> = Vec::new();
            let mut names: BTreeSet<ClassName> = BTreeSet::new();
            for lib in &libs {
                let name = library_name(*lib);
                let versions = db.versions(&name).expect("generated library");
                let non_empty: Vec<&String> = versions
                    .iter()
                    .filter(|v| !db.is_empty_profile(&LibraryVersionId::new(&name, v.as_str())))
                    .collect();
                if non_empty.is_empty() {
                    continue 'resample;
                }
                let pick = non_empty[rng.gen_range(0..non_empty.len())].clone();
                let id = LibraryVersionId::new(&name, pick);
                let profile = db.profile(&id).unwrap();
                for class in profile.classes().keys() {
                    if !names.insert(class.clone()) {
                        continue 'versions;
                    }
                }
                chosen.push(id);
            }
            return Ok(assemble_app(rng, spec, db, app_id, &chosen));
        }
    }
    Err(GenError::InfeasibleSpec(format!(
        "{app_id}: no conflict-free version selection found"
    )))
}

fn assemble_app(
    rng: &mut ChaCha20Rng,
    spec: &CorpusSpec,
    db: &LibraryDatabase,
    app_id: &str,
    chosen: &[LibraryVersionId],
) -> (Profile, Vec<GroundTruthEntry>) {
    let mut nodes: Vec<ClassNode> = Vec::new();
    let mut labels: Vec<GroundTruthEntry> = Vec::new();

    for id in chosen {
        let profile = db.profile(id).unwrap();
        let customize = rng.gen_bool(spec.apps.customization_rate);
        let mut kept: BTreeSet<ClassName> = BTreeSet::new();
        let total = profile.class_count();
        for (pos, (name, node)) in profile.classes().iter().enumerate() {
            if customize {
                // Drop whole classes occasionally, but never the last one.
                let last_chance = kept.is_empty() && pos + 1 == total;
                if !last_chance && rng.gen_bool(0.25) {
                    continue;
                }
                let mut methods: Vec<MethodKey> = node.methods.iter().cloned().collect();
                let keep_all = !rng.gen_bool(0.9);
                if !keep_all {
                    methods.retain(|_| !rng.gen_bool(0.3));
                    if methods.is_empty() {
                        methods.push(node.methods.iter().next().unwrap().clone());
                    }
                }
                let trimmed = match &node.features {
                    None => ClassNode::class_level(name.clone(), methods),
                    Some(features) => {
                        let kept_features: BTreeMap<MethodKey, FeatureVector> = features
                            .iter()
                            .filter(|(k, _)| methods.contains(k))
                            .map(|(k, v)| (k.clone(), v.clone()))
                            .collect();
                        ClassNode::code_level(name.clone(), methods, kept_features).unwrap()
                    }
                };
                kept.insert(name.clone());
                nodes.push(trimmed);
            } else {
                kept.insert(name.clone());
                nodes.push(node.clone());
            }
        }
        labels.push(GroundTruthEntry {
            id: id.clone(),
            classes: kept,
        });
    }

    // The app's own code.
    let own = rng.gen_range(3u32..=8);
    for i in 0..own {
        let class = gen_class(rng, &format!("APP{app_id}"), i, spec);
        nodes.push(class.node(spec.level));
    }

    let profile = Profile::new(spec.level, nodes).expect("generated app profile");
    (profile, labels)
}
