//! Versioned policy table shared between the control path and the data path.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use arc_swap::ArcSwap;
use serde::Serialize;

use super::EdgeError;
use crate::ids::{EgressId, IngressPort, StreamId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EgressPolicy {
    pub egress: EgressId,
    /// Fraction of arriving differential packets suppressed toward this egress.
    pub delta: f64,
}

impl EgressPolicy {
    pub fn new(egress: EgressId, delta: f64) -> Self {
        EgressPolicy { egress, delta }
    }
}

/// Where one ingress stream is replicated to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyEntry {
    pub ingress: IngressPort,
    pub stream: StreamId,
    pub egresses: Vec<EgressPolicy>,
}

impl PolicyEntry {
    pub fn delta(&self, egress: EgressId) -> Option<f64> {
        self.egresses.iter().find(|e| e.egress == egress).map(|e| e.delta)
    }
}

/// One change to a [`PolicyMap`]. A batch of updates commits as one version.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyUpdate {
    /// Insert or replace the entry for a stream.
    Upsert {
        ingress: IngressPort,
        stream: StreamId,
        egresses: Vec<EgressPolicy>,
    },
    /// Replace the egress list of an existing stream.
    SetEgresses {
        stream: StreamId,
        egresses: Vec<EgressPolicy>,
    },
    /// Set one egress's delta, adding the egress if it is not present.
    SetDelta {
        stream: StreamId,
        egress: EgressId,
        delta: f64,
    },
    RemoveEgress {
        stream: StreamId,
        egress: EgressId,
    },
    RemoveStream {
        stream: StreamId,
    },
    SetVideoPids {
        stream: StreamId,
        pids: BTreeSet<u16>,
    },
}

/// Stream replication table. Keyed by (ingress, stream); each stream appears
/// under exactly one ingress.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PolicyMap {
    version: u64,
    entries: BTreeMap<(IngressPort, StreamId), PolicyEntry>,
    video_pids: BTreeMap<StreamId, BTreeSet<u16>>,
}

impl PolicyMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn entries(&self) -> impl Iterator<Item = &PolicyEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, stream: StreamId) -> Option<&PolicyEntry> {
        self.entries.values().find(|e| e.stream == stream)
    }

    /// The entry for the stream arriving on `ingress`.
    pub fn entry_for_ingress(&self, ingress: IngressPort) -> Option<&PolicyEntry> {
        self.entries
            .range((ingress, StreamId(0))..=(ingress, StreamId(u16::MAX)))
            .next()
            .map(|(_, e)| e)
    }

    pub fn video_pids(&self, stream: StreamId) -> Option<&BTreeSet<u16>> {
        self.video_pids.get(&stream)
    }

    /// Same table contents, ignoring the version number.
    pub fn same_contents(&self, other: &PolicyMap) -> bool {
        self.entries == other.entries && self.video_pids == other.video_pids
    }

    fn key_of(&self, stream: StreamId) -> Result<(IngressPort, StreamId), EdgeError> {
        self.entries
            .keys()
            .find(|(_, s)| *s == stream)
            .copied()
            .ok_or(EdgeError::UnknownStream(stream))
    }

    fn apply_one(&mut self, update: &PolicyUpdate) -> Result<(), EdgeError> {
        match update {
            PolicyUpdate::Upsert {
                ingress,
                stream,
                egresses,
            } => {
                validate_egresses(egresses)?;
                if let Ok(old) = self.key_of(*stream) {
                    self.entries.remove(&old);
                }
                if let Some(other) = self.entry_for_ingress(*ingress) {
                    return Err(EdgeError::IngressInUse(*ingress, other.stream));
                }
                self.entries.insert(
                    (*ingress, *stream),
                    PolicyEntry {
                        ingress: *ingress,
                        stream: *stream,
                        egresses: egresses.clone(),
                    },
                );
            }
            PolicyUpdate::SetEgresses { stream, egresses } => {
                validate_egresses(egresses)?;
                let key = self.key_of(*stream)?;
                self.entries.get_mut(&key).expect("key exists").egresses = egresses.clone();
            }
            PolicyUpdate::SetDelta { stream, egress, delta } => {
                check_delta(*delta)?;
                let key = self.key_of(*stream)?;
                let entry = self.entries.get_mut(&key).expect("key exists");
                match entry.egresses.iter_mut().find(|e| e.egress == *egress) {
                    Some(e) => e.delta = *delta,
                    None => entry.egresses.push(EgressPolicy::new(*egress, *delta)),
                }
            }
            PolicyUpdate::RemoveEgress { stream, egress } => {
                let key = self.key_of(*stream)?;
                self.entries
                    .get_mut(&key)
                    .expect("key exists")
                    .egresses
                    .retain(|e| e.egress != *egress);
            }
            PolicyUpdate::RemoveStream { stream } => {
                let key = self.key_of(*stream)?;
                self.entries.remove(&key);
            }
            PolicyUpdate::SetVideoPids { stream, pids } => {
                if let Some(&bad) = pids.iter().find(|&&p| p > 0x1FFF) {
                    return Err(EdgeError::InvalidPid(bad));
                }
                self.video_pids.insert(*stream, pids.clone());
            }
        }
        Ok(())
    }
}

fn check_delta(delta: f64) -> Result<(), EdgeError> {
    if (0.0..=1.0).contains(&delta) {
        Ok(())
    } else {
        Err(EdgeError::InvalidDelta(delta))
    }
}

fn validate_egresses(egresses: &[EgressPolicy]) -> Result<(), EdgeError> {
    let mut seen = BTreeSet::new();
    for e in egresses {
        check_delta(e.delta)?;
        if !seen.insert(e.egress) {
            return Err(EdgeError::DuplicateEgress(e.egress));
        }
    }
    Ok(())
}

/// Apply a batch of updates, producing the next version. The input map is
/// untouched when any update is rejected.
pub fn apply_policy_update(map: &PolicyMap, updates: &[PolicyUpdate]) -> Result<PolicyMap, EdgeError> {
    let mut next = map.clone();
    for u in updates {
        next.apply_one(u)?;
    }
    next.version = map.version + 1;
    Ok(next)
}

/// Single-writer, many-reader holder of the current [`PolicyMap`].
///
/// Readers take a snapshot with [`SharedPolicy::snapshot`] and never block;
/// writers are serialized among themselves and publish whole new versions.
#[derive(Debug, Default)]
pub struct SharedPolicy {
    current: ArcSwap<PolicyMap>,
    writer: Mutex<()>,
}

impl SharedPolicy {
    pub fn new(initial: PolicyMap) -> Self {
        SharedPolicy {
            current: ArcSwap::from_pointee(initial),
            writer: Mutex::new(()),
        }
    }

    pub fn snapshot(&self) -> Arc<PolicyMap> {
        self.current.load_full()
    }

    /// Cheap borrowed snapshot for the per-packet path.
    pub fn load(&self) -> arc_swap::Guard<Arc<PolicyMap>> {
        self.current.load()
    }

    pub fn version(&self) -> u64 {
        self.current.load().version
    }

    /// Apply `updates` on top of the current map and publish the result.
    pub fn commit(&self, updates: &[PolicyUpdate]) -> Result<u64, EdgeError> {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let next = apply_policy_update(&self.current.load(), updates)?;
        let version = next.version;
        self.current.store(Arc::new(next));
        Ok(version)
    }

    /// Publish a map built elsewhere from `snapshot`. It is renumbered to the
    /// version after the current one.
    pub fn publish(&self, mut map: PolicyMap) -> u64 {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        map.version = self.current.load().version + 1;
        let version = map.version;
        self.current.store(Arc::new(map));
        version
    }
}

/// Build a fresh map (version 0) from entries and video PID sets.
pub(crate) fn map_from_parts(
    entries: Vec<PolicyEntry>,
    video_pids: BTreeMap<StreamId, BTreeSet<u16>>,
    version: u64,
) -> PolicyMap {
    PolicyMap {
        version,
        entries: entries.into_iter().map(|e| ((e.ingress, e.stream), e)).collect(),
        video_pids,
    }
}
