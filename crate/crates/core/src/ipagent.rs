//! Real-time IP registry that decides which question set each session gets.
//!
//! The first session from an address receives a uniformly random set. Any
//! later session from a known address receives a set that address has not
//! seen yet, walking the pool in order from the last set handed out; once
//! every set has been used the least recently assigned one is reused. When a
//! session is flagged abnormal its address becomes suspicious for the rest of
//! the exam and the session is moved to a different, randomly chosen set.
//!
//! The registry itself is single-threaded; callers sharing it between
//! connections wrap it in a lock so that operations on one address are
//! linearizable.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;
use core::net::Ipv4Addr;

use rand::Rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::records::{ExamSpec, SetId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(transparent))]
pub struct SessionId(pub u64);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{:06}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum DecisionKind {
    RandomAssignment,
    SpecificAssignment,
    Reassignment,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SessionDecision {
    pub session_id: SessionId,
    pub set_id: SetId,
    pub kind: DecisionKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct IpEntry {
    /// Registry clock value when the address was first registered.
    pub first_seen: u64,
    pub sessions: Vec<SessionId>,
    /// Sticky for the lifetime of the registry.
    pub suspicious: bool,
    pub assigned_sets: Vec<SetId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct SessionState {
    ip: Ipv4Addr,
    current_set: SetId,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IpAgentError {
    #[error("question-set pool is empty")]
    EmptySetPool,
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
}

/// Per-exam registry of every address seen so far.
#[derive(Debug, Clone)]
pub struct IpRegistry {
    set_pool: Vec<SetId>,
    entries: BTreeMap<Ipv4Addr, IpEntry>,
    sessions: BTreeMap<SessionId, SessionState>,
    clock: u64,
    next_session: u64,
}

impl IpRegistry {
    pub fn new(set_pool: Vec<SetId>) -> Result<Self, IpAgentError> {
        if set_pool.is_empty() {
            return Err(IpAgentError::EmptySetPool);
        }
        Ok(Self {
            set_pool,
            entries: BTreeMap::new(),
            sessions: BTreeMap::new(),
            clock: 0,
            next_session: 1,
        })
    }

    pub fn for_exam(spec: &ExamSpec) -> Result<Self, IpAgentError> {
        Self::new(spec.set_pool().to_vec())
    }

    pub fn set_pool(&self) -> &[SetId] {
        &self.set_pool
    }

    /// Number of distinct addresses registered.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Forgets every address and session; used between exams.
    pub fn clear(&mut self) {
        self.entries.clear();
        self.sessions.clear();
        self.clock = 0;
        self.next_session = 1;
    }

    pub fn lookup(&self, ip: Ipv4Addr) -> Option<&IpEntry> {
        self.entries.get(&ip)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Ipv4Addr, &IpEntry)> {
        self.entries.iter()
    }

    pub fn session_ip(&self, session: SessionId) -> Option<Ipv4Addr> {
        self.sessions.get(&session).map(|s| s.ip)
    }

    pub fn current_set(&self, session: SessionId) -> Option<&SetId> {
        self.sessions.get(&session).map(|s| &s.current_set)
    }

    /// Opens a new session for `ip` and decides its question set.
    pub fn register<R: Rng + ?Sized>(&mut self, ip: Ipv4Addr, rng: &mut R) -> SessionDecision {
        self.clock += 1;
        let session_id = SessionId(self.next_session);
        self.next_session += 1;

        let (set_id, kind) = match self.entries.get(&ip) {
            None => {
                let set = self.set_pool[rng.gen_range(0..self.set_pool.len())].clone();
                self.entries.insert(
                    ip,
                    IpEntry {
                        first_seen: self.clock,
                        sessions: Vec::new(),
                        suspicious: false,
                        assigned_sets: Vec::new(),
                    },
                );
                (set, DecisionKind::RandomAssignment)
            }
            Some(entry) => (
                specific_set(&self.set_pool, &entry.assigned_sets),
                DecisionKind::SpecificAssignment,
            ),
        };

        let entry = self.entries.get_mut(&ip).expect("entry inserted above");
        entry.sessions.push(session_id);
        entry.assigned_sets.push(set_id.clone());
        self.sessions.insert(
            session_id,
            SessionState {
                ip,
                current_set: set_id.clone(),
            },
        );
        SessionDecision {
            session_id,
            set_id,
            kind,
        }
    }

    /// Marks the session's address suspicious and moves the session to a
    /// different set. With a single-set pool the set cannot change.
    pub fn flag_abnormal<R: Rng + ?Sized>(
        &mut self,
        session_id: SessionId,
        rng: &mut R,
    ) -> Result<SessionDecision, IpAgentError> {
        let state = self
            .sessions
            .get_mut(&session_id)
            .ok_or(IpAgentError::UnknownSession(session_id))?;
        self.clock += 1;

        let others: Vec<&SetId> = self
            .set_pool
            .iter()
            .filter(|s| **s != state.current_set)
            .collect();
        let set_id = if others.is_empty() {
            state.current_set.clone()
        } else {
            others[rng.gen_range(0..others.len())].clone()
        };
        state.current_set = set_id.clone();

        let entry = self
            .entries
            .get_mut(&state.ip)
            .expect("every session belongs to a registered address");
        entry.suspicious = true;
        entry.assigned_sets.push(set_id.clone());

        Ok(SessionDecision {
            session_id,
            set_id,
            kind: DecisionKind::Reassignment,
        })
    }
}

/// First set after the most recent assignment, in pool order, that the
/// address has never been given; otherwise the least recently assigned set.
fn specific_set(pool: &[SetId], assigned: &[SetId]) -> SetId {
    let start = assigned
        .last()
        .and_then(|last| pool.iter().position(|s| s == last))
        .map_or(0, |p| p + 1);
    let n = pool.len();
    if let Some(fresh) = (0..n)
        .map(|k| &pool[(start + k) % n])
        .find(|s| !assigned.contains(s))
    {
        return fresh.clone();
    }
    pool.iter()
        .min_by_key(|s| assigned.iter().rposition(|a| a == *s))
        .expect("pool is non-empty")
        .clone()
}
