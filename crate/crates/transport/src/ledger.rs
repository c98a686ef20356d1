//! Per-endpoint byte accounting.
//!
//! Uploads are credited to the publisher when a message is published;
//! downloads are credited to the subscriber when a message is polled. Every
//! credit is also appended to a transfer log so totals can be rebuilt from
//! individual message dimensions.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use crate::wire::MessageKind;

pub type EndpointId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Upload,
    Download,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Upload => "up",
            Direction::Download => "down",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LedgerKey {
    pub endpoint: EndpointId,
    pub direction: Direction,
    pub kind: MessageKind,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LedgerEntry {
    pub messages: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ByteLedger {
    entries: BTreeMap<LedgerKey, LedgerEntry>,
}

impl ByteLedger {
    pub fn credit(&mut self, key: LedgerKey, bytes: u64) {
        let e = self.entries.entry(key).or_default();
        e.messages += 1;
        e.bytes += bytes;
    }

    pub fn get(&self, key: &LedgerKey) -> LedgerEntry {
        self.entries.get(key).copied().unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LedgerKey, &LedgerEntry)> {
        self.entries.iter()
    }

    pub fn total_bytes(&self) -> u64 {
        self.entries.values().map(|e| e.bytes).sum()
    }

    pub fn bytes_where(&self, mut pred: impl FnMut(&LedgerKey) -> bool) -> u64 {
        self.entries
            .iter()
            .filter(|(k, _)| pred(k))
            .map(|(_, e)| e.bytes)
            .sum()
    }

    /// Entry-wise `self - earlier`; panics if `earlier` is not a prefix state.
    pub fn since(&self, earlier: &ByteLedger) -> ByteLedger {
        let mut out = ByteLedger::default();
        for (k, e) in &self.entries {
            let before = earlier.get(k);
            assert!(e.bytes >= before.bytes && e.messages >= before.messages);
            if e.messages > before.messages {
                out.entries.insert(
                    *k,
                    LedgerEntry {
                        messages: e.messages - before.messages,
                        bytes: e.bytes - before.bytes,
                    },
                );
            }
        }
        out
    }
}

/// One credited transfer, with the header dimensions needed to recompute its size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transfer {
    pub endpoint: EndpointId,
    pub direction: Direction,
    pub kind: MessageKind,
    pub round: u32,
    /// `n_samples` or `n_params`.
    pub count: u32,
    pub n_classes: u16,
    pub bytes: u64,
}

#[derive(Debug, Default)]
struct AccountingState {
    ledger: ByteLedger,
    transfers: Vec<Transfer>,
}

/// Shared ledger and transfer log.
#[derive(Debug, Clone, Default)]
pub struct Accounting {
    inner: Arc<Mutex<AccountingState>>,
}

impl Accounting {
    pub fn record(&self, t: Transfer) {
        let mut s = self.inner.lock().expect("accounting lock");
        s.ledger.credit(
            LedgerKey {
                endpoint: t.endpoint,
                direction: t.direction,
                kind: t.kind,
            },
            t.bytes,
        );
        s.transfers.push(t);
    }

    pub fn ledger(&self) -> ByteLedger {
        self.inner.lock().expect("accounting lock").ledger.clone()
    }

    pub fn drain_transfers(&self) -> Vec<Transfer> {
        std::mem::take(&mut self.inner.lock().expect("accounting lock").transfers)
    }
}
