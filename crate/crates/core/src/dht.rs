//! Content-addressed key-value repositories.
//!
//! Bodies are immutable and keyed by their SHA-256; per-key side lines grow
//! append-only beside the hashed body, so annotating an entry never moves
//! it. The store partitions its key space across a configurable number of
//! virtual nodes, standing in for a networked distribution.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::hashes::{sha256, Hash32};

/// SHA-256 of a stored canonical body.
pub type LookupKey = Hash32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DhtError {
    #[error("UnknownKey: {0} is not stored")]
    UnknownKey(LookupKey),
    #[error("InvalidNodeCount: virtual node count must be positive")]
    InvalidNodeCount,
    #[error("CorruptDump: {0}")]
    CorruptDump(String),
    #[error("Io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Default)]
struct Entry {
    body: Vec<u8>,
    lines: Vec<Vec<u8>>,
}

#[derive(Debug, Clone)]
pub struct DhtStore {
    nodes: Vec<BTreeMap<LookupKey, Entry>>,
}

impl DhtStore {
    pub fn new(node_count: u32) -> Result<Self, DhtError> {
        if node_count == 0 {
            return Err(DhtError::InvalidNodeCount);
        }
        Ok(DhtStore {
            nodes: vec![BTreeMap::new(); node_count as usize],
        })
    }

    /// Single virtual node, the common test configuration.
    pub fn single() -> Self {
        DhtStore::new(1).expect("1 is positive")
    }

    pub fn node_count(&self) -> u32 {
        self.nodes.len() as u32
    }

    /// Which virtual node a key routes to: first key byte modulo node count.
    pub fn node_of(&self, key: &LookupKey) -> u32 {
        key.as_bytes()[0] as u32 % self.node_count()
    }

    pub fn len(&self) -> usize {
        self.nodes.iter().map(|n| n.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Store a body under its hash. Idempotent: identical bytes land on the
    /// same key and never duplicate an entry.
    pub fn put(&mut self, body: &[u8]) -> LookupKey {
        let key = sha256(body);
        let node = self.node_of(&key) as usize;
        self.nodes[node].entry(key).or_insert_with(|| Entry {
            body: body.to_vec(),
            lines: Vec::new(),
        });
        key
    }

    pub fn get(&self, key: &LookupKey) -> Option<&[u8]> {
        let node = self.node_of(key) as usize;
        self.nodes[node].get(key).map(|e| e.body.as_slice())
    }

    pub fn contains(&self, key: &LookupKey) -> bool {
        self.get(key).is_some()
    }

    /// All entries whose body satisfies the predicate, ordered by key bytes.
    pub fn scan(&self, mut predicate: impl FnMut(&[u8]) -> bool) -> Vec<(LookupKey, &[u8])> {
        let mut hits: Vec<(LookupKey, &[u8])> = Vec::new();
        for node in &self.nodes {
            for (key, entry) in node {
                if predicate(&entry.body) {
                    hits.push((*key, entry.body.as_slice()));
                }
            }
        }
        hits.sort_by_key(|(key, _)| *key);
        hits
    }

    /// Append a side line to an entry; returns its 0-based index. The body
    /// and look-up key are untouched.
    pub fn append_line(&mut self, key: &LookupKey, line: &[u8]) -> Result<usize, DhtError> {
        let node = self.node_of(key) as usize;
        let entry = self.nodes[node]
            .get_mut(key)
            .ok_or(DhtError::UnknownKey(*key))?;
        entry.lines.push(line.to_vec());
        Ok(entry.lines.len() - 1)
    }

    pub fn lines(&self, key: &LookupKey) -> Result<&[Vec<u8>], DhtError> {
        let node = self.node_of(key) as usize;
        self.nodes[node]
            .get(key)
            .map(|e| e.lines.as_slice())
            .ok_or(DhtError::UnknownKey(*key))
    }

    pub fn line(&self, key: &LookupKey, index: usize) -> Result<&[u8], DhtError> {
        self.lines(key)?
            .get(index)
            .map(|l| l.as_slice())
            .ok_or(DhtError::CorruptDump(format!(
                "no line {index} under {key}"
            )))
    }

    /// Write the store to a directory: one file per key (body verbatim), an
    /// adjacent `<key>.log` per side-line list (newline-separated), and a
    /// `nodes` file with the virtual node count.
    pub fn dump_dir(&self, dir: &Path) -> Result<(), DhtError> {
        let io = |e: std::io::Error| DhtError::Io(e.to_string());
        fs::create_dir_all(dir).map_err(io)?;
        fs::write(dir.join("nodes"), self.node_count().to_string()).map_err(io)?;
        for node in &self.nodes {
            for (key, entry) in node {
                fs::write(dir.join(key.to_hex()), &entry.body).map_err(io)?;
                if !entry.lines.is_empty() {
                    let mut log = Vec::new();
                    for line in &entry.lines {
                        log.extend_from_slice(line);
                        log.push(b'\n');
                    }
                    fs::write(dir.join(format!("{}.log", key.to_hex())), log).map_err(io)?;
                }
            }
        }
        Ok(())
    }

    /// Rebuild a store from a dump directory, verifying every content address.
    pub fn load_dir(dir: &Path) -> Result<Self, DhtError> {
        let io = |e: std::io::Error| DhtError::Io(e.to_string());
        let nodes_text = fs::read_to_string(dir.join("nodes")).map_err(io)?;
        let node_count: u32 = nodes_text
            .trim()
            .parse()
            .map_err(|_| DhtError::CorruptDump("bad node count".into()))?;
        let mut store = DhtStore::new(node_count)?;
        let mut logs: Vec<(LookupKey, Vec<u8>)> = Vec::new();
        for item in fs::read_dir(dir).map_err(io)? {
            let item = item.map_err(io)?;
            let name = item.file_name().to_string_lossy().into_owned();
            if name == "nodes" {
                continue;
            }
            if let Some(hex_key) = name.strip_suffix(".log") {
                let key = Hash32::from_hex(hex_key)
                    .map_err(|_| DhtError::CorruptDump(format!("bad log name {name}")))?;
                logs.push((key, fs::read(item.path()).map_err(io)?));
                continue;
            }
            let key = Hash32::from_hex(&name)
                .map_err(|_| DhtError::CorruptDump(format!("unexpected file {name}")))?;
            let body = fs::read(item.path()).map_err(io)?;
            if sha256(&body) != key {
                return Err(DhtError::CorruptDump(format!(
                    "content address mismatch for {name}"
                )));
            }
            store.put(&body);
        }
        for (key, log) in logs {
            if !store.contains(&key) {
                return Err(DhtError::CorruptDump(format!("log without body for {key}")));
            }
            for line in log.split(|b| *b == b'\n') {
                if !line.is_empty() {
                    store.append_line(&key, line)?;
                }
            }
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_get_round_trip_and_idempotence() {
        let mut store = DhtStore::single();
        let key = store.put(b"body one");
        assert_eq!(store.get(&key), Some(b"body one".as_slice()));
        let again = store.put(b"body one");
        assert_eq!(key, again);
        assert_eq!(store.len(), 1);
        let other = store.put(b"body two");
        assert_ne!(key, other);
        assert_eq!(store.get(&sha256(b"missing")), None);
    }

    #[test]
    fn content_addressing_invariant() {
        let mut store = DhtStore::new(4).unwrap();
        for i in 0u8..20 {
            let body = vec![i; 10];
            let key = store.put(&body);
            assert_eq!(key, sha256(&body));
            assert_eq!(store.node_of(&key), key.as_bytes()[0] as u32 % 4);
            assert_eq!(store.get(&key), Some(body.as_slice()));
        }
    }

    #[test]
    fn scan_is_sorted_and_matches_linear_filter() {
        let mut store = DhtStore::new(4).unwrap();
        let mut bodies = Vec::new();
        for i in 0u8..30 {
            let body = format!(
                "entity:{}:{}",
                if i % 3 == 0 { "pensionX" } else { "other" },
                i
            );
            store.put(body.as_bytes());
            bodies.push(body);
        }
        let hits = store.scan(|b| b.starts_with(b"entity:pensionX"));
        let mut expected: Vec<LookupKey> = bodies
            .iter()
            .filter(|b| b.starts_with("entity:pensionX"))
            .map(|b| sha256(b.as_bytes()))
            .collect();
        expected.sort();
        let got: Vec<LookupKey> = hits.iter().map(|(k, _)| *k).collect();
        assert_eq!(got, expected);
        let empty = DhtStore::single();
        assert!(empty.scan(|_| true).is_empty());
    }

    #[test]
    fn side_lines_append_only_and_key_stable() {
        let mut store = DhtStore::single();
        let key = store.put(b"template body");
        assert_eq!(store.append_line(&key, b"line a").unwrap(), 0);
        assert_eq!(store.append_line(&key, b"line b").unwrap(), 1);
        assert_eq!(store.append_line(&key, b"line c").unwrap(), 2);
        assert_eq!(store.lines(&key).unwrap().len(), 3);
        assert_eq!(store.line(&key, 1).unwrap(), b"line b");
        // Body (and hence the key) is untouched by annotations.
        assert_eq!(store.get(&key), Some(b"template body".as_slice()));
        assert_eq!(sha256(store.get(&key).unwrap()), key);
        assert!(matches!(
            store.append_line(&sha256(b"nope"), b"x"),
            Err(DhtError::UnknownKey(_))
        ));
    }

    #[test]
    fn zero_nodes_rejected() {
        assert!(matches!(DhtStore::new(0), Err(DhtError::InvalidNodeCount)));
    }

    #[test]
    fn dump_and_load_round_trip() {
        let mut store = DhtStore::new(3).unwrap();
        let a = store.put(b"alpha body");
        store.put(b"beta body");
        store.append_line(&a, br#"{"ti":"abc"}"#).unwrap();
        store.append_line(&a, br#"{"ti":"def"}"#).unwrap();

        let dir = std::env::temp_dir().join(format!("dht_dump_{}", std::process::id()));
        store.dump_dir(&dir).unwrap();
        let loaded = DhtStore::load_dir(&dir).unwrap();
        std::fs::remove_dir_all(&dir).ok();

        assert_eq!(loaded.node_count(), 3);
        assert_eq!(loaded.len(), store.len());
        assert_eq!(loaded.get(&a), store.get(&a));
        assert_eq!(loaded.lines(&a).unwrap(), store.lines(&a).unwrap());
    }
}
