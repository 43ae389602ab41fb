//! Profile model: class/method nodes, code-feature multisets, the two core
//! similarity formulas, and canonical content signatures.
//!
//! A profile is a binary's identity card: the set of Objective-C classes it
//! defines, each class's methods, and (for code-level profiles) a multiset of
//! constant-data usages per method body. All types here are immutable after
//! construction and safe to share across threads.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::score::{one, ratio, zero, Score};

/// Whether a method is an instance method (`-`) or a class method (`+`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MethodKind {
    Instance,
    ClassMethod,
}

impl MethodKind {
    pub fn sigil(self) -> char {
        match self {
            MethodKind::Instance => '-',
            MethodKind::ClassMethod => '+',
        }
    }

    pub fn from_sigil(c: &str) -> Option<Self> {
        match c {
            "-" => Some(MethodKind::Instance),
            "+" => Some(MethodKind::ClassMethod),
            _ => None,
        }
    }
}

/// Identity of a method within a class node: kind plus full selector
/// (colons included).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MethodKey {
    pub kind: MethodKind,
    pub selector: String,
}

impl MethodKey {
    pub fn new(kind: MethodKind, selector: impl Into<String>) -> Result<Self, ModelError> {
        let selector = selector.into();
        if selector.is_empty() {
            return Err(ModelError::EmptySelector);
        }
        Ok(MethodKey { kind, selector })
    }

    /// Convenience constructor for instance methods.
    pub fn instance(selector: &str) -> Self {
        MethodKey::new(MethodKind::Instance, selector).expect("non-empty selector")
    }

    /// Convenience constructor for class methods.
    pub fn class_method(selector: &str) -> Self {
        MethodKey::new(MethodKind::ClassMethod, selector).expect("non-empty selector")
    }
}

impl fmt::Display for MethodKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.kind.sigil(), self.selector)
    }
}

/// Class name, optionally carrying an Objective-C category.
///
/// `NSData(GMSCrypto)` and plain `NSData` are distinct class nodes. Equality
/// and ordering are on the canonical rendering `base` / `base(category)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassName {
    base: String,
    category: Option<String>,
}

impl ClassName {
    pub fn new(base: impl Into<String>, category: Option<String>) -> Result<Self, ModelError> {
        let base = base.into();
        if base.is_empty() || category.as_deref() == Some("") {
            return Err(ModelError::EmptyName);
        }
        // Parens would make the canonical rendering ambiguous.
        if base.contains(['(', ')']) || category.as_deref().is_some_and(|c| c.contains(['(', ')'])) {
            return Err(ModelError::InvalidName(base));
        }
        Ok(ClassName { base, category })
    }

    pub fn simple(base: &str) -> Self {
        ClassName::new(base, None).expect("valid base name")
    }

    pub fn with_category(base: &str, category: &str) -> Self {
        ClassName::new(base, Some(category.to_string())).expect("valid name")
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn category(&self) -> Option<&str> {
        self.category.as_deref()
    }

    /// Canonical rendering: `base` or `base(category)`.
    pub fn canonical(&self) -> String {
        match &self.category {
            Some(cat) => format!("{}({})", self.base, cat),
            None => self.base.clone(),
        }
    }
}

impl Ord for ClassName {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.canonical().cmp(&other.canonical())
    }
}

impl PartialOrd for ClassName {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for ClassName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.category {
            Some(cat) => write!(f, "{}({})", self.base, cat),
            None => f.write_str(&self.base),
        }
    }
}

/// The four kinds of constant data recorded as code-level features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    ClassRef,
    SelectorRef,
    ConstString,
    ExternalSymbol,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::ClassRef => "class_ref",
            FeatureKind::SelectorRef => "selector_ref",
            FeatureKind::ConstString => "const_string",
            FeatureKind::ExternalSymbol => "external_symbol",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            FeatureKind::ClassRef => 0,
            FeatureKind::SelectorRef => 1,
            FeatureKind::ConstString => 2,
            FeatureKind::ExternalSymbol => 3,
        }
    }
}

/// A single constant-data feature, namespaced by kind so a constant string
/// `"init"` never collides with a selector reference `init`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeatureItem {
    pub kind: FeatureKind,
    pub value: String,
}

impl FeatureItem {
    pub fn new(kind: FeatureKind, value: impl Into<String>) -> Self {
        FeatureItem {
            kind,
            value: value.into(),
        }
    }
}

/// Multiset of constant-data usages in one method body. Entries with
/// multiplicity zero are never stored.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVector {
    counts: BTreeMap<FeatureItem, u64>,
}

impl FeatureVector {
    pub fn new() -> Self {
        FeatureVector::default()
    }

    pub fn from_counts(
        counts: impl IntoIterator<Item = (FeatureItem, u64)>,
    ) -> Result<Self, ModelError> {
        let mut map = BTreeMap::new();
        for (item, count) in counts {
            if count == 0 {
                return Err(ModelError::ZeroCount(item.value));
            }
            if map.insert(item.clone(), count).is_some() {
                return Err(ModelError::DuplicateFeature(item.value));
            }
        }
        Ok(FeatureVector { counts: map })
    }

    pub fn add(&mut self, item: FeatureItem, count: u64) {
        if count > 0 {
            *self.counts.entry(item).or_insert(0) += count;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FeatureItem, u64)> {
        self.counts.iter().map(|(i, c)| (i, *c))
    }

    pub fn get(&self, item: &FeatureItem) -> u64 {
        self.counts.get(item).copied().unwrap_or(0)
    }
}

/// One class node: name, defined methods, optional per-method feature vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassNode {
    pub name: ClassName,
    pub methods: BTreeSet<MethodKey>,
    /// Present on code-level profiles. Methods absent from the map carry an
    /// empty feature vector. Every key must be a member of `methods`.
    pub features: Option<BTreeMap<MethodKey, FeatureVector>>,
}

impl ClassNode {
    pub fn class_level(
        name: ClassName,
        methods: impl IntoIterator<Item = MethodKey>,
    ) -> Self {
        ClassNode {
            name,
            methods: methods.into_iter().collect(),
            features: None,
        }
    }

    pub fn code_level(
        name: ClassName,
        methods: impl IntoIterator<Item = MethodKey>,
        features: BTreeMap<MethodKey, FeatureVector>,
    ) -> Result<Self, ModelError> {
        let methods: BTreeSet<MethodKey> = methods.into_iter().collect();
        for key in features.keys() {
            if !methods.contains(key) {
                return Err(ModelError::FeatureForUnknownMethod(key.to_string()));
            }
        }
        Ok(ClassNode {
            name,
            methods,
            features: Some(features),
        })
    }

    /// Feature vector for `key`, or the empty vector when absent.
    pub fn feature_vector(&self, key: &MethodKey) -> FeatureVector {
        self.features
            .as_ref()
            .and_then(|f| f.get(key).cloned())
            .unwrap_or_default()
    }
}

/// Profile granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileLevel {
    ClassLevel,
    CodeLevel,
}

impl ProfileLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            ProfileLevel::ClassLevel => "class_level",
            ProfileLevel::CodeLevel => "code_level",
        }
    }
}

/// A binary's profile: its class nodes, keyed by canonical name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    classes: BTreeMap<ClassName, ClassNode>,
    level: ProfileLevel,
}

impl Profile {
    /// Builds a profile, validating name uniqueness and the level invariant:
    /// a code-level profile requires a feature map on every class node that
    /// has methods, and a class-level profile must not carry any.
    pub fn new(
        level: ProfileLevel,
        nodes: impl IntoIterator<Item = ClassNode>,
    ) -> Result<Self, ModelError> {
        let mut classes = BTreeMap::new();
        for node in nodes {
            match level {
                ProfileLevel::CodeLevel => {
                    if !node.methods.is_empty() && node.features.is_none() {
                        return Err(ModelError::MissingFeatures(node.name.canonical()));
                    }
                }
                ProfileLevel::ClassLevel => {
                    if node.features.is_some() {
                        return Err(ModelError::UnexpectedFeatures(node.name.canonical()));
                    }
                }
            }
            let name = node.name.clone();
            if classes.insert(name.clone(), node).is_some() {
                return Err(ModelError::DuplicateClass(name.canonical()));
            }
        }
        Ok(Profile { classes, level })
    }

    pub fn empty(level: ProfileLevel) -> Self {
        Profile {
            classes: BTreeMap::new(),
            level,
        }
    }

    pub fn level(&self) -> ProfileLevel {
        self.level
    }

    pub fn classes(&self) -> &BTreeMap<ClassName, ClassNode> {
        &self.classes
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn get(&self, name: &ClassName) -> Option<&ClassNode> {
        self.classes.get(name)
    }
}

/// 256-bit content digest of a profile at a given level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Signature {
    #[serde(with = "digest_hex")]
    pub digest: [u8; 32],
    pub level: ProfileLevel,
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.digest))
    }
}

mod digest_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(d))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))
    }
}

/// Model-level validation errors.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("selector must be non-empty")]
    EmptySelector,
    #[error("class name components must be non-empty")]
    EmptyName,
    #[error("class name contains parentheses: {0}")]
    InvalidName(String),
    #[error("duplicate class name: {0}")]
    DuplicateClass(String),
    #[error("feature vector references unknown method: {0}")]
    FeatureForUnknownMethod(String),
    #[error("feature count must be positive (item {0})")]
    ZeroCount(String),
    #[error("duplicate feature item: {0}")]
    DuplicateFeature(String),
    #[error("code-level profile requires features on class {0}")]
    MissingFeatures(String),
    #[error("class-level profile must not carry features (class {0})")]
    UnexpectedFeatures(String),
    #[error("code-level signature requested on a class-level profile")]
    LevelUnavailable,
}

/// Method-set similarity between an app class and a library class: the
/// Jaccard ratio of their method sets. Two empty method sets score 1 when
/// the names match (identical content), 0 otherwise.
pub fn class_similarity(ac: &ClassNode, lc: &ClassNode) -> Score {
    if ac.methods.is_empty() && lc.methods.is_empty() {
        return if ac.name == lc.name { one() } else { zero() };
    }
    let inter = ac.methods.intersection(&lc.methods).count() as u64;
    let union = ac.methods.union(&lc.methods).count() as u64;
    ratio(inter, union)
}

/// Manhattan-variant similarity between two feature multisets:
/// `1 − Σ|A_i − B_i| / Σ(A_i + B_i)` over the union of feature items.
/// Two empty vectors score 1.
pub fn feature_similarity(a: &FeatureVector, b: &FeatureVector) -> Score {
    let mut diff: u64 = 0;
    let mut total: u64 = 0;
    for (item, ca) in a.iter() {
        let cb = b.get(item);
        diff += ca.abs_diff(cb);
        total += ca + cb;
    }
    for (item, cb) in b.iter() {
        if a.get(item) == 0 {
            diff += cb;
            total += cb;
        }
    }
    if total == 0 {
        return one();
    }
    one() - ratio(diff, total)
}

/// Computes the content signature of a profile at the requested level.
///
/// The digest is SHA-256 over a canonical byte stream: classes in canonical
/// name order, methods in (kind, selector) order, feature items in
/// (kind, value) order with counts. Class-level signatures ignore feature
/// maps entirely. Storage order can never influence the result because the
/// model already keeps everything in ordered maps.
pub fn signature(p: &Profile, level: ProfileLevel) -> Result<Signature, ModelError> {
    if level == ProfileLevel::CodeLevel && p.level != ProfileLevel::CodeLevel {
        return Err(ModelError::LevelUnavailable);
    }
    let mut h = Sha256::new();
    h.update(b"libpin-profile-v1\0");
    h.update([match level {
        ProfileLevel::ClassLevel => 0u8,
        ProfileLevel::CodeLevel => 1u8,
    }]);
    for (name, node) in &p.classes {
        h.update([0x01]);
        write_str(&mut h, name.base());
        match name.category() {
            Some(cat) => {
                h.update([1]);
                write_str(&mut h, cat);
            }
            None => h.update([0]),
        }
        for m in &node.methods {
            h.update([0x02, m.kind.sigil() as u8]);
            write_str(&mut h, &m.selector);
            if level == ProfileLevel::CodeLevel {
                let fv = node.feature_vector(m);
                for (item, count) in fv.iter() {
                    h.update([0x03, item.kind.tag()]);
                    write_str(&mut h, &item.value);
                    h.update(count.to_le_bytes());
                }
            }
        }
    }
    Ok(Signature {
        digest: h.finalize().into(),
        level,
    })
}

fn write_str(h: &mut Sha256, s: &str) {
    h.update((s.len() as u64).to_le_bytes());
    h.update(s.as_bytes());
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(name: &str, selectors: &[&str]) -> ClassNode {
        ClassNode::class_level(
            ClassName::simple(name),
            selectors.iter().map(|s| MethodKey::instance(s)),
        )
    }

    #[test]
    fn class_similarity_identical() {
        let a = node("X", &["init", "foo:"]);
        let b = node("X", &["init", "foo:"]);
        assert_eq!(class_similarity(&a, &b), one());
    }

    #[test]
    fn class_similarity_half() {
        let a = node("X", &["a", "b", "c"]);
        let b = node("X", &["b", "c", "d"]);
        assert_eq!(class_similarity(&a, &b), ratio(1, 2));
    }

    #[test]
    fn class_similarity_disjoint() {
        let a = node("X", &["a"]);
        let b = node("X", &["b"]);
        assert_eq!(class_similarity(&a, &b), zero());
    }

    #[test]
    fn class_similarity_both_empty() {
        let a = node("X", &[]);
        let b = node("X", &[]);
        assert_eq!(class_similarity(&a, &b), one());
        let c = node("Y", &[]);
        assert_eq!(class_similarity(&a, &c), zero());
    }

    #[test]
    fn plus_and_minus_methods_are_distinct() {
        let a = ClassNode::class_level(ClassName::simple("X"), [MethodKey::instance("init")]);
        let b = ClassNode::class_level(ClassName::simple("X"), [MethodKey::class_method("init")]);
        assert_eq!(class_similarity(&a, &b), zero());
    }

    fn fv(items: &[(&str, u64)]) -> FeatureVector {
        FeatureVector::from_counts(
            items
                .iter()
                .map(|(v, c)| (FeatureItem::new(FeatureKind::ConstString, *v), *c)),
        )
        .unwrap()
    }

    #[test]
    fn feature_similarity_identical() {
        let a = fv(&[("x", 2), ("y", 1)]);
        assert_eq!(feature_similarity(&a, &a.clone()), one());
    }

    #[test]
    fn feature_similarity_hand_case() {
        // A={x:2,y:1}, B={x:1,y:1,z:1} -> 1 - (1+0+1)/(3+3) = 2/3
        let a = fv(&[("x", 2), ("y", 1)]);
        let b = fv(&[("x", 1), ("y", 1), ("z", 1)]);
        assert_eq!(feature_similarity(&a, &b), ratio(2, 3));
    }

    #[test]
    fn feature_similarity_disjoint_and_empty() {
        let a = fv(&[("x", 3)]);
        let b = fv(&[("y", 2)]);
        assert_eq!(feature_similarity(&a, &b), zero());
        assert_eq!(
            feature_similarity(&FeatureVector::new(), &FeatureVector::new()),
            one()
        );
    }

    #[test]
    fn feature_kinds_are_namespaced() {
        let a = FeatureVector::from_counts([(
            FeatureItem::new(FeatureKind::ConstString, "init"),
            1,
        )])
        .unwrap();
        let b = FeatureVector::from_counts([(
            FeatureItem::new(FeatureKind::SelectorRef, "init"),
            1,
        )])
        .unwrap();
        assert_eq!(feature_similarity(&a, &b), zero());
    }

    #[test]
    fn signature_ignores_insertion_order() {
        let p1 = Profile::new(
            ProfileLevel::ClassLevel,
            [node("A", &["x", "y"]), node("B", &["z"])],
        )
        .unwrap();
        let p2 = Profile::new(
            ProfileLevel::ClassLevel,
            [node("B", &["z"]), node("A", &["y", "x"])],
        )
        .unwrap();
        assert_eq!(
            signature(&p1, ProfileLevel::ClassLevel).unwrap(),
            signature(&p2, ProfileLevel::ClassLevel).unwrap()
        );
    }

    #[test]
    fn class_level_signature_ignores_features() {
        let name = ClassName::simple("A");
        let key = MethodKey::instance("run");
        let mk = |count| {
            let mut features = BTreeMap::new();
            features.insert(
                key.clone(),
                fv(&[("s", count)]),
            );
            Profile::new(
                ProfileLevel::CodeLevel,
                [ClassNode::code_level(name.clone(), [key.clone()], features).unwrap()],
            )
            .unwrap()
        };
        let p1 = mk(1);
        let p2 = mk(2);
        assert_eq!(
            signature(&p1, ProfileLevel::ClassLevel).unwrap(),
            signature(&p2, ProfileLevel::ClassLevel).unwrap()
        );
        assert_ne!(
            signature(&p1, ProfileLevel::CodeLevel).unwrap(),
            signature(&p2, ProfileLevel::CodeLevel).unwrap()
        );
    }

    #[test]
    fn code_level_signature_requires_code_level() {
        let p = Profile::empty(ProfileLevel::ClassLevel);
        assert_eq!(
            signature(&p, ProfileLevel::CodeLevel),
            Err(ModelError::LevelUnavailable)
        );
    }

    #[test]
    fn empty_profile_has_fixed_digest() {
        let a = Profile::empty(ProfileLevel::ClassLevel);
        let b = Profile::empty(ProfileLevel::ClassLevel);
        assert_eq!(
            signature(&a, ProfileLevel::ClassLevel).unwrap(),
            signature(&b, ProfileLevel::ClassLevel).unwrap()
        );
    }

    #[test]
    fn category_names_are_distinct_nodes() {
        let plain = ClassName::simple("NSData");
        let cat = ClassName::with_category("NSData", "GMSCrypto");
        assert_ne!(plain, cat);
        assert_eq!(cat.canonical(), "NSData(GMSCrypto)");
    }
}
