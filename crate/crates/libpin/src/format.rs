//! Profile interchange format.
//!
//! Profiles enter and leave the system as UTF-8 JSON documents:
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "level": "code_level",
//!   "classes": [
//!     {
//!       "name": "AFHTTPClient",
//!       "category": "Extras",
//!       "methods": [{"kind": "-", "selector": "initWithBaseURL:"}],
//!       "features": {
//!         "- initWithBaseURL:": [
//!           {"kind": "class_ref", "value": "NSURL", "count": 1}
//!         ]
//!       }
//!     }
//!   ]
//! }
//! ```
//!
//! `serialize_profile` emits the canonical form: compact JSON with classes
//! sorted by canonical name, methods sorted by (kind, selector), feature map
//! keys `"<sigil> <selector>"`, and feature items sorted by (kind, value).
//! `parse_profile` accepts any JSON formatting and round-trips canonically.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile::{
    ClassName, ClassNode, FeatureItem, FeatureKind, FeatureVector, MethodKey, MethodKind,
    ModelError, Profile, ProfileLevel,
};

pub const PROFILE_FORMAT_VERSION: u32 = 1;

/// Errors raised while parsing a profile document.
#[derive(Debug, Error)]
pub enum ParseError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("duplicate name: {0}")]
    DuplicateName(String),
}

#[derive(Serialize, Deserialize)]
struct ProfileDoc {
    format_version: u32,
    level: String,
    classes: Vec<ClassDoc>,
}

#[derive(Serialize, Deserialize)]
struct ClassDoc {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    category: Option<String>,
    methods: Vec<MethodDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<BTreeMap<String, Vec<FeatureDoc>>>,
}

#[derive(Serialize, Deserialize)]
struct MethodDoc {
    kind: String,
    selector: String,
}

#[derive(Serialize, Deserialize)]
struct FeatureDoc {
    kind: FeatureKind,
    value: String,
    count: u64,
}

/// Parses and validates a profile document.
pub fn parse_profile(document: &[u8]) -> Result<Profile, ParseError> {
    let text = std::str::from_utf8(document)
        .map_err(|e| ParseError::MalformedDocument(format!("not UTF-8: {e}")))?;
    let doc: ProfileDoc = serde_json::from_str(text).map_err(|e| {
        if e.is_syntax() || e.is_eof() {
            ParseError::MalformedDocument(e.to_string())
        } else {
            ParseError::SchemaViolation(e.to_string())
        }
    })?;
    if doc.format_version != PROFILE_FORMAT_VERSION {
        return Err(ParseError::SchemaViolation(format!(
            "unsupported format_version {}",
            doc.format_version
        )));
    }
    let level = match doc.level.as_str() {
        "class_level" => ProfileLevel::ClassLevel,
        "code_level" => ProfileLevel::CodeLevel,
        other => {
            return Err(ParseError::SchemaViolation(format!(
                "unknown level {other:?}"
            )))
        }
    };

    let mut nodes = Vec::with_capacity(doc.classes.len());
    for class in doc.classes {
        let name = ClassName::new(class.name.clone(), class.category.clone())
            .map_err(|e| ParseError::SchemaViolation(e.to_string()))?;
        let mut methods: BTreeSet<MethodKey> = BTreeSet::new();
        for m in &class.methods {
            let kind = MethodKind::from_sigil(&m.kind).ok_or_else(|| {
                ParseError::SchemaViolation(format!("method kind must be \"-\" or \"+\", got {:?}", m.kind))
            })?;
            let key = MethodKey::new(kind, m.selector.clone())
                .map_err(|e| ParseError::SchemaViolation(e.to_string()))?;
            if !methods.insert(key) {
                return Err(ParseError::DuplicateName(format!(
                    "{} {}{}",
                    name.canonical(),
                    kind.sigil(),
                    m.selector
                )));
            }
        }

        let features = match class.features {
            None => None,
            Some(raw) => {
                let mut map = BTreeMap::new();
                for (key_str, items) in raw {
                    let key = parse_method_key(&key_str)?;
                    if !methods.contains(&key) {
                        return Err(ParseError::SchemaViolation(format!(
                            "features entry {key_str:?} does not match any method of {}",
                            name.canonical()
                        )));
                    }
                    let vector = FeatureVector::from_counts(items.into_iter().map(|f| {
                        (FeatureItem::new(f.kind, f.value), f.count)
                    }))
                    .map_err(|e| match e {
                        ModelError::DuplicateFeature(v) => ParseError::DuplicateName(v),
                        other => ParseError::SchemaViolation(other.to_string()),
                    })?;
                    map.insert(key, vector);
                }
                Some(map)
            }
        };

        let node = match features {
            Some(f) => ClassNode::code_level(name, methods, f)
                .map_err(|e| ParseError::SchemaViolation(e.to_string()))?,
            None => ClassNode {
                name,
                methods,
                features: None,
            },
        };
        nodes.push(node);
    }

    Profile::new(level, nodes).map_err(|e| match e {
        ModelError::DuplicateClass(name) => ParseError::DuplicateName(name),
        other => ParseError::SchemaViolation(other.to_string()),
    })
}

fn parse_method_key(s: &str) -> Result<MethodKey, ParseError> {
    let (sigil, selector) = s
        .split_once(' ')
        .ok_or_else(|| ParseError::SchemaViolation(format!("bad feature key {s:?}")))?;
    let kind = MethodKind::from_sigil(sigil)
        .ok_or_else(|| ParseError::SchemaViolation(format!("bad feature key {s:?}")))?;
    MethodKey::new(kind, selector).map_err(|e| ParseError::SchemaViolation(e.to_string()))
}

/// Serializes a profile in the canonical interchange form.
pub fn serialize_profile(p: &Profile) -> String {
    let classes = p
        .classes()
        .values()
        .map(|node| {
            let methods = node
                .methods
                .iter()
                .map(|m| MethodDoc {
                    kind: m.kind.sigil().to_string(),
                    selector: m.selector.clone(),
                })
                .collect();
            let features = node.features.as_ref().map(|f| {
                f.iter()
                    .map(|(key, fv)| {
                        let items = fv
                            .iter()
                            .map(|(item, count)| FeatureDoc {
                                kind: item.kind,
                                value: item.value.clone(),
                                count,
                            })
                            .collect();
                        (format!("{} {}", key.kind.sigil(), key.selector), items)
                    })
                    .collect()
            });
            ClassDoc {
                name: node.name.base().to_string(),
                category: node.name.category().map(str::to_string),
                methods,
                features,
            }
        })
        .collect();
    let doc = ProfileDoc {
        format_version: PROFILE_FORMAT_VERSION,
        level: p.level().as_str().to_string(),
        classes,
    };
    let mut out = serde_json::to_string(&doc).expect("profile serialization cannot fail");
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document() {
        let doc = br#"{"format_version":1,"level":"class_level","classes":[
            {"name":"AFHTTPClient","methods":[{"kind":"-","selector":"init"}]}]}"#;
        let p = parse_profile(doc).unwrap();
        assert_eq!(p.class_count(), 1);
        let node = p.get(&ClassName::simple("AFHTTPClient")).unwrap();
        assert!(node.methods.contains(&MethodKey::instance("init")));
    }

    #[test]
    fn duplicate_class_rejected() {
        let doc = br#"{"format_version":1,"level":"class_level","classes":[
            {"name":"AFHTTPClient","methods":[]},
            {"name":"AFHTTPClient","methods":[]}]}"#;
        assert!(matches!(
            parse_profile(doc),
            Err(ParseError::DuplicateName(_))
        ));
    }

    #[test]
    fn duplicate_method_rejected() {
        let doc = br#"{"format_version":1,"level":"class_level","classes":[
            {"name":"A","methods":[{"kind":"-","selector":"x"},{"kind":"-","selector":"x"}]}]}"#;
        assert!(matches!(
            parse_profile(doc),
            Err(ParseError::DuplicateName(_))
        ));
    }

    #[test]
    fn negative_count_rejected() {
        let doc = br#"{"format_version":1,"level":"code_level","classes":[
            {"name":"A","methods":[{"kind":"-","selector":"x"}],
             "features":{"- x":[{"kind":"const_string","value":"s","count":-1}]}}]}"#;
        assert!(matches!(
            parse_profile(doc),
            Err(ParseError::SchemaViolation(_))
        ));
    }

    #[test]
    fn zero_count_rejected() {
        let doc = br#"{"format_version":1,"level":"code_level","classes":[
            {"name":"A","methods":[{"kind":"-","selector":"x"}],
             "features":{"- x":[{"kind":"const_string","value":"s","count":0}]}}]}"#;
        assert!(matches!(
            parse_profile(doc),
            Err(ParseError::SchemaViolation(_))
        ));
    }

    #[test]
    fn syntax_error_is_malformed() {
        assert!(matches!(
            parse_profile(b"{nope"),
            Err(ParseError::MalformedDocument(_))
        ));
    }

    #[test]
    fn code_level_requires_features() {
        let doc = br#"{"format_version":1,"level":"code_level","classes":[
            {"name":"A","methods":[{"kind":"-","selector":"x"}]}]}"#;
        assert!(matches!(
            parse_profile(doc),
            Err(ParseError::SchemaViolation(_))
        ));
    }

    #[test]
    fn round_trip_is_identity() {
        let doc = br#"{"format_version":1,"level":"code_level","classes":[
            {"name":"NSData","category":"GMSCrypto",
             "methods":[{"kind":"+","selector":"hash:"},{"kind":"-","selector":"digest"}],
             "features":{"- digest":[{"kind":"selector_ref","value":"length","count":2}],
                         "+ hash:": []}}]}"#;
        let p = parse_profile(doc).unwrap();
        let text = serialize_profile(&p);
        let p2 = parse_profile(text.as_bytes()).unwrap();
        assert_eq!(p, p2);
        assert_eq!(text, serialize_profile(&p2));
    }
}
