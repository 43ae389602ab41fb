//! Versioned library database: profiles plus per-profile signatures and
//! metadata, persisted as a directory of profile documents under a manifest.
//!
//! On-disk layout:
//!
//! ```text
//! <db>/
//!   manifest                      JSON metadata + entry list (release order)
//!   profiles/<library>/<version>.profile
//! ```
//!
//! The manifest's byte content identifies the database; its SHA-256 digest is
//! embedded in derived artifacts (the class index, scan reports) so staleness
//! can be detected.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::format::{parse_profile, serialize_profile, ParseError};
use crate::profile::{signature, ModelError, Profile, ProfileLevel, Signature};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const DIGEST_ALGORITHM: &str = "sha256";

/// Identity of one collected library version.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LibraryVersionId {
    pub library: String,
    pub version: String,
}

impl LibraryVersionId {
    pub fn new(library: impl Into<String>, version: impl Into<String>) -> Self {
        LibraryVersionId {
            library: library.into(),
            version: version.into(),
        }
    }
}

impl fmt::Display for LibraryVersionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.library, self.version)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseMetadata {
    pub format_version: u32,
    pub digest_algorithm: String,
    /// Unix seconds. Generated corpora use 0 so outputs are reproducible.
    pub created: u64,
}

impl DatabaseMetadata {
    pub fn now() -> Self {
        let created = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        DatabaseMetadata {
            format_version: MANIFEST_FORMAT_VERSION,
            digest_algorithm: DIGEST_ALGORITHM.to_string(),
            created,
        }
    }

    pub fn fixed() -> Self {
        DatabaseMetadata {
            format_version: MANIFEST_FORMAT_VERSION,
            digest_algorithm: DIGEST_ALGORITHM.to_string(),
            created: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum DatabaseError {
    #[error("duplicate library version id: {0}")]
    DuplicateId(LibraryVersionId),
    #[error("unknown library: {0}")]
    UnknownLibrary(String),
    #[error("io failure at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("profile {id}: {source}")]
    Profile {
        id: LibraryVersionId,
        #[source]
        source: ParseError,
    },
    #[error("profile {id} does not match its manifest signature")]
    SignatureMismatch { id: LibraryVersionId },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// All collected library versions with their signatures and metadata.
#[derive(Debug, Clone)]
pub struct LibraryDatabase {
    metadata: DatabaseMetadata,
    entries: BTreeMap<LibraryVersionId, Profile>,
    class_sigs: BTreeMap<LibraryVersionId, Signature>,
    code_sigs: BTreeMap<LibraryVersionId, Signature>,
    empty: BTreeSet<LibraryVersionId>,
    /// Library name -> versions in release order.
    order: BTreeMap<String, Vec<String>>,
}

impl LibraryDatabase {
    /// Assembles a database from (id, profile) pairs. The order of `items`
    /// fixes the release order of each library's versions. Signatures are
    /// computed for every entry; empty profiles are retained but flagged.
    pub fn build(
        metadata: DatabaseMetadata,
        items: impl IntoIterator<Item = (LibraryVersionId, Profile)>,
    ) -> Result<Self, DatabaseError> {
        let mut db = LibraryDatabase {
            metadata,
            entries: BTreeMap::new(),
            class_sigs: BTreeMap::new(),
            code_sigs: BTreeMap::new(),
            empty: BTreeSet::new(),
            order: BTreeMap::new(),
        };
        for (id, profile) in items {
            if db.entries.contains_key(&id) {
                return Err(DatabaseError::DuplicateId(id));
            }
            db.class_sigs
                .insert(id.clone(), signature(&profile, ProfileLevel::ClassLevel)?);
            if profile.level() == ProfileLevel::CodeLevel {
                db.code_sigs
                    .insert(id.clone(), signature(&profile, ProfileLevel::CodeLevel)?);
            }
            if profile.is_empty() {
                db.empty.insert(id.clone());
            }
            db.order
                .entry(id.library.clone())
                .or_default()
                .push(id.version.clone());
            db.entries.insert(id, profile);
        }
        Ok(db)
    }

    pub fn metadata(&self) -> &DatabaseMetadata {
        &self.metadata
    }

    pub fn entries(&self) -> &BTreeMap<LibraryVersionId, Profile> {
        &self.entries
    }

    pub fn profile(&self, id: &LibraryVersionId) -> Option<&Profile> {
        self.entries.get(id)
    }

    pub fn class_signature(&self, id: &LibraryVersionId) -> Option<&Signature> {
        self.class_sigs.get(id)
    }

    pub fn code_signature(&self, id: &LibraryVersionId) -> Option<&Signature> {
        self.code_sigs.get(id)
    }

    pub fn is_empty_profile(&self, id: &LibraryVersionId) -> bool {
        self.empty.contains(id)
    }

    pub fn empty_profiles(&self) -> &BTreeSet<LibraryVersionId> {
        &self.empty
    }

    pub fn libraries(&self) -> impl Iterator<Item = &str> {
        self.order.keys().map(String::as_str)
    }

    /// Collected versions of `library` in release order.
    pub fn versions(&self, library: &str) -> Result<&[String], DatabaseError> {
        self.order
            .get(library)
            .map(Vec::as_slice)
            .ok_or_else(|| DatabaseError::UnknownLibrary(library.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Canonical manifest bytes. Entries are listed per library in release
    /// order; the SHA-256 of these bytes is the database identity.
    pub fn manifest_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::with_capacity(self.entries.len());
        for (library, versions) in &self.order {
            for version in versions {
                let id = LibraryVersionId::new(library.clone(), version.clone());
                entries.push(ManifestEntry {
                    library: library.clone(),
                    version: version.clone(),
                    empty: self.empty.contains(&id),
                    class_signature: self.class_sigs[&id].to_string(),
                    code_signature: self.code_sigs.get(&id).map(|s| s.to_string()),
                });
            }
        }
        let manifest = Manifest {
            format_version: self.metadata.format_version,
            digest_algorithm: self.metadata.digest_algorithm.clone(),
            created: self.metadata.created,
            entries,
        };
        let mut bytes = serde_json::to_vec(&manifest).expect("manifest serialization");
        bytes.push(b'\n');
        bytes
    }

    /// SHA-256 digest of the canonical manifest bytes.
    pub fn manifest_digest(&self) -> [u8; 32] {
        Sha256::digest(self.manifest_bytes()).into()
    }

    /// Writes the database directory: `manifest` plus one profile document
    /// per entry.
    pub fn save(&self, dir: &Path) -> Result<(), DatabaseError> {
        let io = |path: &Path, source| DatabaseError::Io {
            path: path.display().to_string(),
            source,
        };
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let manifest_path = dir.join("manifest");
        fs::write(&manifest_path, self.manifest_bytes()).map_err(|e| io(&manifest_path, e))?;
        for (id, profile) in &self.entries {
            let lib_dir = dir.join("profiles").join(&id.library);
            fs::create_dir_all(&lib_dir).map_err(|e| io(&lib_dir, e))?;
            let path = lib_dir.join(format!("{}.profile", id.version));
            fs::write(&path, serialize_profile(profile)).map_err(|e| io(&path, e))?;
        }
        Ok(())
    }

    /// Loads a database directory, re-verifying every profile against its
    /// manifest signature.
    pub fn load(dir: &Path) -> Result<Self, DatabaseError> {
        let io = |path: &Path, source| DatabaseError::Io {
            path: path.display().to_string(),
            source,
        };
        let manifest_path = dir.join("manifest");
        let bytes = fs::read(&manifest_path).map_err(|e| io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_slice(&bytes)
            .map_err(|e| DatabaseError::MalformedManifest(e.to_string()))?;
        if manifest.format_version != MANIFEST_FORMAT_VERSION {
            return Err(DatabaseError::MalformedManifest(format!(
                "unsupported format_version {}",
                manifest.format_version
            )));
        }

        let mut items = Vec::with_capacity(manifest.entries.len());
        for entry in &manifest.entries {
            let id = LibraryVersionId::new(entry.library.clone(), entry.version.clone());
            let path = dir
                .join("profiles")
                .join(&entry.library)
                .join(format!("{}.profile", entry.version));
            let doc = fs::read(&path).map_err(|e| io(&path, e))?;
            let profile = parse_profile(&doc).map_err(|source| DatabaseError::Profile {
                id: id.clone(),
                source,
            })?;
            items.push((id, profile));
        }

        let metadata = DatabaseMetadata {
            format_version: manifest.format_version,
            digest_algorithm: manifest.digest_algorithm,
            created: manifest.created,
        };
        let db = LibraryDatabase::build(metadata, items)?;
        for entry in &manifest.entries {
            let id = LibraryVersionId::new(entry.library.clone(), entry.version.clone());
            if db.class_sigs[&id].to_string() != entry.class_signature
                || db.code_sigs.get(&id).map(|s| s.to_string()) != entry.code_signature
            {
                return Err(DatabaseError::SignatureMismatch { id });
            }
        }
        Ok(db)
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    digest_algorithm: String,
    created: u64,
    entries: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    library: String,
    version: String,
    empty: bool,
    class_signature: String,
    #[serde(default)]
    code_signature: Option<String>,
}
