use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::codec;
use crate::error::{Error, Result};

pub const PACKET_EXTENSION: &str = "mono1";

/// A packet held by the server, with its digest computed once at load.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoredModel {
    pub name: String,
    pub version: u32,
    pub packet: Vec<u8>,
    pub sha256: [u8; 32],
}

impl StoredModel {
    pub fn new(name: impl Into<String>, version: u32, packet: Vec<u8>) -> Self {
        let sha256 = sha256(&packet);
        Self {
            name: name.into(),
            version,
            packet,
            sha256,
        }
    }
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

/// Immutable name/version index of packets.
#[derive(Clone, Debug, Default)]
pub struct ModelStore {
    models: BTreeMap<(String, u32), StoredModel>,
}

impl ModelStore {
    pub fn insert(&mut self, model: StoredModel) -> Result<()> {
        if model.version == 0 {
            return Err(Error::Config("model versions start at 1".into()));
        }
        let key = (model.name.clone(), model.version);
        if self.models.contains_key(&key) {
            return Err(Error::Config(format!("duplicate model {} v{}", key.0, key.1)));
        }
        self.models.insert(key, model);
        Ok(())
    }

    /// Loads `<name>.mono1` as version 1 and `<name>-v<N>.mono1` as
    /// version N. Every packet must decode.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut store = Self::default();
        let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some(PACKET_EXTENSION) {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let (name, version) = parse_stem(stem);
            let packet = fs::read(&path)?;
            codec::decode(&packet).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            store.insert(StoredModel::new(name, version, packet))?;
        }
        Ok(store)
    }

    /// `version == 0` selects the latest.
    pub fn get(&self, name: &str, version: u32) -> Option<&StoredModel> {
        if version == 0 {
            self.models
                .range((name.to_string(), 0)..=(name.to_string(), u32::MAX))
                .next_back()
                .map(|(_, m)| m)
        } else {
            self.models.get(&(name.to_string(), version))
        }
    }

    pub fn has_name(&self, name: &str) -> bool {
        self.get(name, 0).is_some()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &StoredModel> {
        self.models.values()
    }
}

fn parse_stem(stem: &str) -> (String, u32) {
    if let Some((name, v)) = stem.rsplit_once("-v") {
        if !name.is_empty() && !v.is_empty() && v.bytes().all(|b| b.is_ascii_digit()) {
            if let Ok(version) = v.parse::<u32>() {
                if version > 0 {
                    return (name.to_string(), version);
                }
            }
        }
    }
    (stem.to_string(), 1)
}

/// File name under which `name` at `version` is served.
pub fn packet_file_name(name: &str, version: u32) -> String {
    if version <= 1 {
        format!("{name}.{PACKET_EXTENSION}")
    } else {
        format!("{name}-v{version}.{PACKET_EXTENSION}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems() {
        assert_eq!(parse_stem("mono-tiny"), ("mono-tiny".into(), 1));
        assert_eq!(parse_stem("mono-tiny-v3"), ("mono-tiny".into(), 3));
        assert_eq!(parse_stem("net-v"), ("net-v".into(), 1));
        assert_eq!(parse_stem("-v2"), ("-v2".into(), 1));
        assert_eq!(parse_stem(&packet_file_name("a-v", 7).replace(".mono1", "")), ("a-v".into(), 7));
    }

    #[test]
    fn latest_version() {
        let mut s = ModelStore::default();
        s.insert(StoredModel::new("a", 1, vec![1])).unwrap();
        s.insert(StoredModel::new("a", 4, vec![4])).unwrap();
        s.insert(StoredModel::new("b", 2, vec![2])).unwrap();
        assert_eq!(s.get("a", 0).unwrap().version, 4);
        assert_eq!(s.get("a", 1).unwrap().packet, vec![1]);
        assert!(s.get("a", 2).is_none());
        assert!(s.get("c", 0).is_none());
        assert!(s.insert(StoredModel::new("a", 4, vec![])).is_err());
    }
}
