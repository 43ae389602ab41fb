//! Inverted class index: canonical class name -> every (library, version)
//! occurrence, with each occurrence's method set inlined so per-class
//! similarity needs no second fetch.
//!
//! The index is immutable after build/load and safe for unlimited concurrent
//! readers. It persists as a single compact binary file.
//!
//! # File format (`LPIX`, version 1)
//!
//! All integers are little-endian; strings are a u32 byte length followed by
//! UTF-8 bytes.
//!
//! ```text
//! magic            4 bytes   "LPIX"
//! format_version   u32       1
//! manifest_digest  32 bytes  SHA-256 of the database manifest
//! id_count         u32
//! ids[id_count]              str library, str version, u32 class_count
//! name_count       u32
//! names[name_count]          str canonical_name        (sorted ascending)
//!                            u32 entry_count
//!                            entries[entry_count]:
//!                                u32 id_index           (sorted ascending)
//!                                u32 method_count
//!                                methods[method_count]: u8 sigil, str selector
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::database::{LibraryDatabase, LibraryVersionId};
use crate::profile::{ClassName, MethodKey, MethodKind};

pub const INDEX_MAGIC: &[u8; 4] = b"LPIX";
pub const INDEX_FORMAT_VERSION: u32 = 1;

/// One indexed occurrence of a class name in a library version.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassEntry {
    pub id: LibraryVersionId,
    pub methods: BTreeSet<MethodKey>,
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("io failure: {0}")]
    IoFailure(String),
    #[error("index was built from a different database manifest")]
    StaleIndex,
}

impl From<std::io::Error> for IndexError {
    fn from(e: std::io::Error) -> Self {
        IndexError::IoFailure(e.to_string())
    }
}

/// Inverted map from canonical class name to all occurrences.
#[derive(Debug, Clone)]
pub struct ClassIndex {
    names: HashMap<String, Vec<ClassEntry>>,
    class_counts: BTreeMap<LibraryVersionId, u32>,
    manifest_digest: [u8; 32],
}

impl ClassIndex {
    /// Unfolds every class of every non-empty database entry. Entry lists
    /// are ordered by id, so the result is independent of build parallelism.
    pub fn build(db: &LibraryDatabase) -> Self {
        let mut names: HashMap<String, Vec<ClassEntry>> = HashMap::new();
        let mut class_counts = BTreeMap::new();
        // entries() iterates in id order, which keeps entry lists sorted.
        for (id, profile) in db.entries() {
            if profile.is_empty() {
                continue;
            }
            class_counts.insert(id.clone(), profile.class_count() as u32);
            for node in profile.classes().values() {
                names
                    .entry(node.name.canonical())
                    .or_default()
                    .push(ClassEntry {
                        id: id.clone(),
                        methods: node.methods.clone(),
                    });
            }
        }
        ClassIndex {
            names,
            class_counts,
            manifest_digest: db.manifest_digest(),
        }
    }

    /// All occurrences of `name`; empty when the name is absent.
    pub fn lookup(&self, name: &ClassName) -> &[ClassEntry] {
        self.names
            .get(&name.canonical())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn class_count(&self, id: &LibraryVersionId) -> Option<u32> {
        self.class_counts.get(id).copied()
    }

    pub fn class_counts(&self) -> &BTreeMap<LibraryVersionId, u32> {
        &self.class_counts
    }

    pub fn name_count(&self) -> usize {
        self.names.len()
    }

    pub fn total_entries(&self) -> usize {
        self.names.values().map(Vec::len).sum()
    }

    pub fn manifest_digest(&self) -> &[u8; 32] {
        &self.manifest_digest
    }

    /// Writes the index file.
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(INDEX_MAGIC);
        buf.extend_from_slice(&INDEX_FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.manifest_digest);

        let ids: Vec<&LibraryVersionId> = self.class_counts.keys().collect();
        let id_pos: HashMap<&LibraryVersionId, u32> =
            ids.iter().enumerate().map(|(i, id)| (*id, i as u32)).collect();
        buf.extend_from_slice(&(ids.len() as u32).to_le_bytes());
        for id in &ids {
            write_str(&mut buf, &id.library);
            write_str(&mut buf, &id.version);
            buf.extend_from_slice(&self.class_counts[*id].to_le_bytes());
        }

        let sorted: BTreeMap<&String, &Vec<ClassEntry>> = self.names.iter().collect();
        buf.extend_from_slice(&(sorted.len() as u32).to_le_bytes());
        for (name, entries) in sorted {
            write_str(&mut buf, name);
            buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
            for entry in entries {
                buf.extend_from_slice(&id_pos[&entry.id].to_le_bytes());
                buf.extend_from_slice(&(entry.methods.len() as u32).to_le_bytes());
                for m in &entry.methods {
                    buf.push(m.kind.sigil() as u8);
                    write_str(&mut buf, &m.selector);
                }
            }
        }

        let mut file = fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    /// Reads an index file. When `expected_digest` is given (usually the
    /// manifest digest of the database the caller intends to scan against),
    /// a mismatch yields `StaleIndex`.
    pub fn load(path: &Path, expected_digest: Option<&[u8; 32]>) -> Result<Self, IndexError> {
        let data = fs::read(path)?;
        let mut r = Reader { data: &data, pos: 0 };

        if r.take(4)? != INDEX_MAGIC {
            return Err(IndexError::IoFailure("bad magic".into()));
        }
        let version = r.u32()?;
        if version != INDEX_FORMAT_VERSION {
            return Err(IndexError::IoFailure(format!(
                "unsupported index format version {version}"
            )));
        }
        let mut manifest_digest = [0u8; 32];
        manifest_digest.copy_from_slice(r.take(32)?);
        if let Some(expected) = expected_digest {
            if expected != &manifest_digest {
                return Err(IndexError::StaleIndex);
            }
        }

        let id_count = r.u32()? as usize;
        let mut ids = Vec::with_capacity(id_count);
        let mut class_counts = BTreeMap::new();
        for _ in 0..id_count {
            let library = r.string()?;
            let version = r.string()?;
            let count = r.u32()?;
            let id = LibraryVersionId::new(library, version);
            class_counts.insert(id.clone(), count);
            ids.push(id);
        }

        let name_count = r.u32()? as usize;
        let mut names = HashMap::with_capacity(name_count);
        for _ in 0..name_count {
            let name = r.string()?;
            let entry_count = r.u32()? as usize;
            let mut entries = Vec::with_capacity(entry_count);
            for _ in 0..entry_count {
                let id_index = r.u32()? as usize;
                let id = ids
                    .get(id_index)
                    .cloned()
                    .ok_or_else(|| IndexError::IoFailure("id index out of range".into()))?;
                let method_count = r.u32()? as usize;
                let mut methods = BTreeSet::new();
                for _ in 0..method_count {
                    let sigil = r.take(1)?[0];
                    let kind = match sigil {
                        b'-' => MethodKind::Instance,
                        b'+' => MethodKind::ClassMethod,
                        _ => return Err(IndexError::IoFailure("bad method sigil".into())),
                    };
                    let selector = r.string()?;
                    methods.insert(MethodKey { kind, selector });
                }
                entries.push(ClassEntry { id, methods });
            }
            names.insert(name, entries);
        }
        if r.pos != data.len() {
            return Err(IndexError::IoFailure("trailing bytes".into()));
        }

        Ok(ClassIndex {
            names,
            class_counts,
            manifest_digest,
        })
    }
}

fn write_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        if self.pos + n > self.data.len() {
            return Err(IndexError::IoFailure("truncated file".into()));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, IndexError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|e| IndexError::IoFailure(format!("bad UTF-8: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::database::DatabaseMetadata;
    use crate::profile::{ClassNode, Profile, ProfileLevel};

    fn profile(names: &[&str]) -> Profile {
        Profile::new(
            ProfileLevel::ClassLevel,
            names.iter().map(|n| {
                ClassNode::class_level(ClassName::simple(n), [MethodKey::instance("init")])
            }),
        )
        .unwrap()
    }

    fn sample_db() -> LibraryDatabase {
        LibraryDatabase::build(
            DatabaseMetadata::fixed(),
            vec![
                (LibraryVersionId::new("A", "1"), profile(&["X", "Y"])),
                (LibraryVersionId::new("A", "2"), profile(&["X", "Z"])),
                (LibraryVersionId::new("B", "1"), profile(&["X"])),
            ],
        )
        .unwrap()
    }

    #[test]
    fn unfolds_all_classes() {
        let index = ClassIndex::build(&sample_db());
        assert_eq!(index.lookup(&ClassName::simple("X")).len(), 3);
        assert_eq!(index.lookup(&ClassName::simple("Y")).len(), 1);
        assert_eq!(index.lookup(&ClassName::simple("Z")).len(), 1);
        assert!(index.lookup(&ClassName::simple("Nope")).is_empty());
        // entry lists sorted by id
        let xs = index.lookup(&ClassName::simple("X"));
        assert_eq!(xs[0].id, LibraryVersionId::new("A", "1"));
        assert_eq!(xs[2].id, LibraryVersionId::new("B", "1"));
    }

    #[test]
    fn empty_database_empty_index() {
        let db = LibraryDatabase::build(DatabaseMetadata::fixed(), vec![]).unwrap();
        let index = ClassIndex::build(&db);
        assert_eq!(index.name_count(), 0);
        assert_eq!(index.total_entries(), 0);
    }

    #[test]
    fn category_lookup_is_exact() {
        let p = Profile::new(
            ProfileLevel::ClassLevel,
            [
                ClassNode::class_level(ClassName::simple("NSData"), []),
                ClassNode::class_level(ClassName::with_category("NSData", "GMSCrypto"), []),
            ],
        )
        .unwrap();
        let db = LibraryDatabase::build(
            DatabaseMetadata::fixed(),
            vec![(LibraryVersionId::new("A", "1"), p)],
        )
        .unwrap();
        let index = ClassIndex::build(&db);
        assert_eq!(
            index
                .lookup(&ClassName::with_category("NSData", "GMSCrypto"))
                .len(),
            1
        );
        assert_eq!(index.lookup(&ClassName::simple("NSData")).len(), 1);
    }

    #[test]
    fn entry_total_matches_class_counts() {
        let index = ClassIndex::build(&sample_db());
        let total: u32 = index.class_counts().values().sum();
        assert_eq!(index.total_entries() as u32, total);
    }

    #[test]
    fn save_load_round_trip() {
        let db = sample_db();
        let index = ClassIndex::build(&db);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.lpix");
        index.save(&path).unwrap();
        let loaded = ClassIndex::load(&path, Some(&db.manifest_digest())).unwrap();
        for name in ["X", "Y", "Z"] {
            assert_eq!(
                loaded.lookup(&ClassName::simple(name)),
                index.lookup(&ClassName::simple(name))
            );
        }
        assert_eq!(loaded.class_counts(), index.class_counts());
    }

    #[test]
    fn stale_index_detected() {
        let db = sample_db();
        let index = ClassIndex::build(&db);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.lpix");
        index.save(&path).unwrap();
        let other = [0u8; 32];
        assert!(matches!(
            ClassIndex::load(&path, Some(&other)),
            Err(IndexError::StaleIndex)
        ));
    }

    #[test]
    fn truncated_file_fails() {
        let db = sample_db();
        let index = ClassIndex::build(&db);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.lpix");
        index.save(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            ClassIndex::load(&path, None),
            Err(IndexError::IoFailure(_))
        ));
    }
}
