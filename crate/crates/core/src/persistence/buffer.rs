use std::collections::VecDeque;
use std::sync::Arc;

use parking_lot::Mutex;
use tracing::warn;

use super::{Persisted, StorageError, Store, StoredRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteStatus {
    Written,
    /// Storage failed; records are held in memory for the next attempt.
    Buffered { pending: usize },
    /// The buffer is past its bound; the caller should suspend.
    Overflow { pending: usize },
}

/// Keeps the scan loop going through short storage outages by holding
/// encoded records in order until the backend accepts them again.
pub struct BufferedWriter {
    store: Arc<Store>,
    pending: Mutex<VecDeque<StoredRecord>>,
    bound: usize,
}

impl BufferedWriter {
    pub fn new(store: Arc<Store>, bound: usize) -> Self {
        Self {
            store,
            pending: Mutex::new(VecDeque::new()),
            bound,
        }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn pending(&self) -> usize {
        self.pending.lock().len()
    }

    /// Encodes (validating) and queues a record without writing.
    pub fn stage<T: Persisted>(&self, rec: &T) -> Result<(), StorageError> {
        let enc = Store::encode(rec)?;
        self.pending.lock().push_back(enc);
        Ok(())
    }

    /// Writes everything staged so far as one batch.
    pub fn flush(&self) -> WriteStatus {
        let mut pending = self.pending.lock();
        if pending.is_empty() {
            return WriteStatus::Written;
        }
        let batch: Vec<StoredRecord> = pending.iter().cloned().collect();
        match self.store.append_encoded(batch) {
            Ok(_) => {
                pending.clear();
                WriteStatus::Written
            }
            Err(e) => {
                let n = pending.len();
                warn!(error = %e, pending = n, "storage write failed, buffering");
                if n > self.bound {
                    WriteStatus::Overflow { pending: n }
                } else {
                    WriteStatus::Buffered { pending: n }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{CommandRecord, MemoryBackend, Query, StorageBackend, Table};
    use super::*;
    use std::sync::atomic::{AtomicBool, Ordering};

    struct Flaky {
        down: Arc<AtomicBool>,
        inner: MemoryBackend,
    }

    impl StorageBackend for Flaky {
        fn append(&self, records: &[StoredRecord]) -> Result<(), StorageError> {
            if self.down.load(Ordering::SeqCst) {
                return Err(StorageError::Unavailable("disk gone".into()));
            }
            self.inner.append(records)
        }
        fn scan(&self, table: Table) -> Result<Vec<StoredRecord>, StorageError> {
            self.inner.scan(table)
        }
        fn rewrite(&self, table: Table, records: &[StoredRecord]) -> Result<(), StorageError> {
            self.inner.rewrite(table, records)
        }
    }

    fn cmd(ts: i64) -> CommandRecord {
        CommandRecord {
            at: ts,
            operator: "op".into(),
            command: serde_json::Value::Null,
            accepted: true,
            error: None,
        }
    }

    #[test]
    fn buffers_then_overflows_then_recovers() {
        let down = Arc::new(AtomicBool::new(true));
        let store = Arc::new(
            Store::new(Box::new(Flaky {
                down: down.clone(),
                inner: MemoryBackend::new(),
            }))
            .unwrap(),
        );
        let w = BufferedWriter::new(store.clone(), 3);
        for i in 0..3 {
            w.stage(&cmd(i)).unwrap();
            assert_eq!(w.flush(), WriteStatus::Buffered { pending: i as usize + 1 });
        }
        w.stage(&cmd(3)).unwrap();
        assert_eq!(w.flush(), WriteStatus::Overflow { pending: 4 });
        down.store(false, Ordering::SeqCst);
        assert_eq!(w.flush(), WriteStatus::Written);
        let rows = store.query(Table::Commands, &Query::all()).unwrap();
        let ts: Vec<i64> = rows.iter().map(|r| r.ts).collect();
        assert_eq!(ts, vec![0, 1, 2, 3]);
        assert_eq!(rows.iter().map(|r| r.seq).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    }
}
