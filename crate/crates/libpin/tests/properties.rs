//! Randomized invariants over the core model: similarity formulas against
//! brute-force oracles, serialization round-trips, index bookkeeping, and
//! recovery's class-conservation guarantee.

use std::collections::{BTreeMap, BTreeSet};

use proptest::collection::{btree_map, btree_set, vec};
use proptest::prelude::*;

use libpin::database::{DatabaseMetadata, LibraryDatabase, LibraryVersionId};
use libpin::format::{parse_profile, serialize_profile};
use libpin::profile::{
    class_similarity, feature_similarity, ClassName, ClassNode, FeatureItem, FeatureKind,
    FeatureVector, MethodKey, Profile, ProfileLevel,
};
use libpin::recover::{build_region_graph, filter_candidates};
use libpin::score::{ratio, zero, Score};
use libpin::ClassIndex;

fn method_key() -> impl Strategy<Value = MethodKey> {
    ("[a-z]{1,6}", any::<bool>()).prop_map(|(sel, inst)| {
        if inst {
            MethodKey::instance(&sel)
        } else {
            MethodKey::class_method(&sel)
        }
    })
}

fn method_set() -> impl Strategy<Value = BTreeSet<MethodKey>> {
    btree_set(method_key(), 0..8)
}

fn feature_vector() -> impl Strategy<Value = FeatureVector> {
    btree_map(
        ("[a-z]{1,4}", prop_oneof![
            Just(FeatureKind::ClassRef),
            Just(FeatureKind::SelectorRef),
            Just(FeatureKind::ConstString),
            Just(FeatureKind::ExternalSymbol),
        ]),
        1u64..6,
        0..6,
    )
    .prop_map(|counts| {
        let mut v = FeatureVector::new();
        for ((value, kind), count) in counts {
            v.add(FeatureItem::new(kind, value), count);
        }
        v
    })
}

/// Straight-line Jaccard on sorted vectors, independent of the library's set
/// representation.
fn jaccard_oracle(a: &BTreeSet<MethodKey>, b: &BTreeSet<MethodKey>, same_name: bool) -> Score {
    if a.is_empty() && b.is_empty() {
        return if same_name { ratio(1, 1) } else { zero() };
    }
    let av: Vec<&MethodKey> = a.iter().collect();
    let mut inter = 0u64;
    for m in &av {
        if b.contains(*m) {
            inter += 1;
        }
    }
    let union = (a.len() + b.len()) as u64 - inter;
    ratio(inter, union)
}

/// Eq-by-eq Manhattan oracle over the union of items.
fn manhattan_oracle(a: &FeatureVector, b: &FeatureVector) -> Score {
    let mut items: BTreeSet<FeatureItem> = BTreeSet::new();
    for (item, _) in a.iter() {
        items.insert(item.clone());
    }
    for (item, _) in b.iter() {
        items.insert(item.clone());
    }
    if items.is_empty() {
        return ratio(1, 1);
    }
    let mut diff = 0u64;
    let mut total = 0u64;
    for item in items {
        let x = a.get(&item);
        let y = b.get(&item);
        diff += x.abs_diff(y);
        total += x + y;
    }
    ratio(1, 1) - ratio(diff, total)
}

proptest! {
    #[test]
    fn class_similarity_matches_oracle(a in method_set(), b in method_set(), same in any::<bool>()) {
        let (na, nb) = if same {
            (ClassName::simple("Same"), ClassName::simple("Same"))
        } else {
            (ClassName::simple("One"), ClassName::simple("Two"))
        };
        let ca = ClassNode::class_level(na, a.clone());
        let cb = ClassNode::class_level(nb, b.clone());
        let got = class_similarity(&ca, &cb);
        prop_assert_eq!(got.clone(), jaccard_oracle(&a, &b, same));
        prop_assert_eq!(got.clone(), class_similarity(&cb, &ca));
        prop_assert!(got >= zero() && got <= ratio(1, 1));
    }

    #[test]
    fn feature_similarity_matches_oracle(a in feature_vector(), b in feature_vector()) {
        let got = feature_similarity(&a, &b);
        prop_assert_eq!(got.clone(), manhattan_oracle(&a, &b));
        prop_assert_eq!(got.clone(), feature_similarity(&b, &a));
        prop_assert!(got >= zero() && got <= ratio(1, 1));
        prop_assert_eq!(feature_similarity(&a, &a), ratio(1, 1));
    }
}

fn class_node(level: ProfileLevel) -> impl Strategy<Value = ClassNode> {
    (
        "[A-Z][A-Za-z0-9]{0,6}",
        method_set(),
        vec(feature_vector(), 0..4),
    )
        .prop_map(move |(name, methods, vectors)| {
            let name = ClassName::simple(&name);
            match level {
                ProfileLevel::ClassLevel => ClassNode::class_level(name, methods),
                ProfileLevel::CodeLevel => {
                    let features: BTreeMap<MethodKey, FeatureVector> = methods
                        .iter()
                        .cloned()
                        .zip(vectors)
                        .collect();
                    ClassNode::code_level(name, methods, features).unwrap()
                }
            }
        })
}

fn profile(level: ProfileLevel) -> impl Strategy<Value = Profile> {
    vec(class_node(level), 0..10).prop_map(move |nodes| {
        // Duplicate names collapse: keep the first occurrence.
        let mut seen = BTreeSet::new();
        let nodes: Vec<ClassNode> = nodes
            .into_iter()
            .filter(|n| seen.insert(n.name.clone()))
            .collect();
        Profile::new(level, nodes).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn serialization_round_trips(p in prop_oneof![
        profile(ProfileLevel::ClassLevel),
        profile(ProfileLevel::CodeLevel),
    ]) {
        let text = serialize_profile(&p);
        let back = parse_profile(text.as_bytes()).unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn index_accounts_for_every_class(profiles in vec(profile(ProfileLevel::ClassLevel), 1..6)) {
        let entries: Vec<(LibraryVersionId, Profile)> = profiles
            .into_iter()
            .enumerate()
            .map(|(i, p)| (LibraryVersionId::new(format!("Lib{i}"), "1.0"), p))
            .collect();
        let expected: usize = entries
            .iter()
            .filter(|(_, p)| !p.is_empty())
            .map(|(_, p)| p.class_count())
            .sum();
        let db = LibraryDatabase::build(DatabaseMetadata::fixed(), entries).unwrap();
        let index = ClassIndex::build(&db);
        prop_assert_eq!(index.total_entries(), expected);
    }

    #[test]
    fn recovery_conserves_app_classes(
        libs in vec(profile(ProfileLevel::ClassLevel), 1..5),
        app in profile(ProfileLevel::ClassLevel),
    ) {
        let entries: Vec<(LibraryVersionId, Profile)> = libs
            .into_iter()
            .enumerate()
            .map(|(i, p)| (LibraryVersionId::new(format!("Lib{i}"), "1.0"), p))
            .collect();
        let db = LibraryDatabase::build(DatabaseMetadata::fixed(), entries).unwrap();
        let index = ClassIndex::build(&db);
        let graph = build_region_graph(&app, &index);
        let result = filter_candidates(&graph, &db);

        let mut seen: BTreeSet<ClassName> = BTreeSet::new();
        for inst in &result.instances {
            for class in inst.classes.keys() {
                prop_assert!(seen.insert(class.clone()), "class attributed twice");
            }
        }
        for class in result.residual.iter().chain(result.unmatched.iter()) {
            prop_assert!(seen.insert(class.clone()), "class attributed twice");
        }
        let all: BTreeSet<ClassName> = app.classes().keys().cloned().collect();
        prop_assert_eq!(seen, all);
    }
}
