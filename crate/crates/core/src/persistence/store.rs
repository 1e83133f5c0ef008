use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use tracing::warn;

use super::{Persisted, Query, StorageError, StoredRecord, Table};
use crate::domain::UnixMillis;

pub trait StorageBackend: Send + Sync {
    /// Durably appends a batch; either every record is durable on return or
    /// an error is reported.
    fn append(&self, records: &[StoredRecord]) -> Result<(), StorageError>;
    fn scan(&self, table: Table) -> Result<Vec<StoredRecord>, StorageError>;
    /// Atomically replaces a table's contents (used only by compaction).
    fn rewrite(&self, table: Table, records: &[StoredRecord]) -> Result<(), StorageError>;
}

#[derive(Debug, Default)]
pub struct MemoryBackend {
    tables: Mutex<BTreeMap<Table, Vec<StoredRecord>>>,
}

impl MemoryBackend {
    pub fn new() -> Self {
        Self::default()
    }
}

impl StorageBackend for MemoryBackend {
    fn append(&self, records: &[StoredRecord]) -> Result<(), StorageError> {
        let mut t = self.tables.lock();
        for r in records {
            t.entry(r.table).or_default().push(r.clone());
        }
        Ok(())
    }

    fn scan(&self, table: Table) -> Result<Vec<StoredRecord>, StorageError> {
        Ok(self.tables.lock().get(&table).cloned().unwrap_or_default())
    }

    fn rewrite(&self, table: Table, records: &[StoredRecord]) -> Result<(), StorageError> {
        self.tables.lock().insert(table, records.to_vec());
        Ok(())
    }
}

/// One `<table>.jsonl` file per table. Appends are followed by `sync_data`.
/// On open, a torn final line (no trailing newline) is truncated away.
pub struct JsonlBackend {
    dir: PathBuf,
    files: Mutex<HashMap<Table, File>>,
}

impl JsonlBackend {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StorageError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        for t in Table::ALL {
            repair_tail(&table_path(&dir, t))?;
        }
        Ok(Self {
            dir,
            files: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

fn table_path(dir: &Path, t: Table) -> PathBuf {
    dir.join(format!("{}.jsonl", t.as_str()))
}

fn repair_tail(path: &Path) -> Result<(), StorageError> {
    let Ok(bytes) = fs::read(path) else {
        return Ok(());
    };
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    warn!(path = %path.display(), dropped = bytes.len() - keep, "truncating torn record");
    let f = OpenOptions::new().write(true).open(path)?;
    f.set_len(keep as u64)?;
    f.sync_all()?;
    Ok(())
}

fn read_table(path: &Path, table: Table) -> Result<Vec<StoredRecord>, StorageError> {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let rec: StoredRecord = serde_json::from_str(&line).map_err(|e| StorageError::Corrupt {
            table: table.as_str(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

impl StorageBackend for JsonlBackend {
    fn append(&self, records: &[StoredRecord]) -> Result<(), StorageError> {
        let mut files = self.files.lock();
        let mut by_table: BTreeMap<Table, Vec<u8>> = BTreeMap::new();
        for r in records {
            let buf = by_table.entry(r.table).or_default();
            serde_json::to_writer(&mut *buf, r)?;
            buf.push(b'\n');
        }
        for (table, bytes) in by_table {
            let f = match files.entry(table) {
                std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::hash_map::Entry::Vacant(e) => e.insert(
                    OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(table_path(&self.dir, table))
                        .map_err(|e| StorageError::Unavailable(e.to_string()))?,
                ),
            };
            f.write_all(&bytes).map_err(|e| StorageError::Unavailable(e.to_string()))?;
            f.sync_data().map_err(|e| StorageError::Unavailable(e.to_string()))?;
        }
        Ok(())
    }

    fn scan(&self, table: Table) -> Result<Vec<StoredRecord>, StorageError> {
        // hold the writer lock so a scan never sees a half-written batch
        let _g = self.files.lock();
        read_table(&table_path(&self.dir, table), table)
    }

    fn rewrite(&self, table: Table, records: &[StoredRecord]) -> Result<(), StorageError> {
        let mut files = self.files.lock();
        let path = table_path(&self.dir, table);
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut f = File::create(&tmp)?;
            for r in records {
                serde_json::to_writer(&mut f, r)?;
                f.write_all(b"\n")?;
            }
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        files.remove(&table);
        Ok(())
    }
}

/// Typed front end over a backend. Sequence numbers are global across tables
/// and assigned under the writer lock, so they increase strictly within every
/// table.
pub struct Store {
    backend: Box<dyn StorageBackend>,
    next_seq: Mutex<u64>,
}

impl Store {
    pub fn new(backend: Box<dyn StorageBackend>) -> Result<Self, StorageError> {
        let mut max = 0;
        for t in Table::ALL {
            if let Some(r) = backend.scan(t)?.last() {
                max = max.max(r.seq);
            }
        }
        Ok(Self {
            backend,
            next_seq: Mutex::new(max + 1),
        })
    }

    pub fn in_memory() -> Self {
        Self::new(Box::new(MemoryBackend::new())).expect("memory backend never fails")
    }

    pub fn open_dir(dir: impl AsRef<Path>) -> Result<Self, StorageError> {
        Self::new(Box::new(JsonlBackend::open(dir)?))
    }

    /// Validates and encodes a record. The sequence number is assigned at
    /// write time.
    pub fn encode<T: Persisted>(rec: &T) -> Result<StoredRecord, StorageError> {
        rec.validate()?;
        Ok(StoredRecord {
            seq: 0,
            ts: rec.ts(),
            table: T::TABLE,
            market_id: rec.market_id().map(str::to_owned),
            source: rec.source(),
            payload: serde_json::to_value(rec)?,
        })
    }

    pub fn append<T: Persisted>(&self, rec: &T) -> Result<u64, StorageError> {
        let encoded = Self::encode(rec)?;
        Ok(self.append_encoded(vec![encoded])?[0])
    }

    /// Writes encoded records in order as one durable batch.
    pub fn append_encoded(&self, mut records: Vec<StoredRecord>) -> Result<Vec<u64>, StorageError> {
        let mut next = self.next_seq.lock();
        let start = *next;
        for (i, r) in records.iter_mut().enumerate() {
            r.seq = start + i as u64;
        }
        self.backend.append(&records)?;
        *next = start + records.len() as u64;
        Ok(records.iter().map(|r| r.seq).collect())
    }

    pub fn next_seq(&self) -> u64 {
        *self.next_seq.lock()
    }

    pub fn query(&self, table: Table, q: &Query) -> Result<Vec<StoredRecord>, StorageError> {
        Ok(self.backend.scan(table)?.into_iter().filter(|r| q.matches(r)).collect())
    }

    pub fn query_typed<T: Persisted>(&self, q: &Query) -> Result<Vec<T>, StorageError> {
        self.query(T::TABLE, q)?.iter().map(StoredRecord::decode).collect()
    }

    /// Every record with `seq >= from_seq`, across tables, in sequence order.
    pub fn replay(&self, from_seq: u64) -> Result<Vec<StoredRecord>, StorageError> {
        let mut all = Vec::new();
        for t in Table::ALL {
            all.extend(self.backend.scan(t)?.into_iter().filter(|r| r.seq >= from_seq));
        }
        all.sort_by_key(|r| r.seq);
        Ok(all)
    }

    /// Writes `<table>.jsonl` for every table into `dir`; returns row counts.
    pub fn export(&self, dir: &Path, q: &Query) -> Result<BTreeMap<Table, usize>, StorageError> {
        fs::create_dir_all(dir)?;
        let mut counts = BTreeMap::new();
        for t in Table::ALL {
            let rows = self.query(t, q)?;
            let mut f = File::create(table_path(dir, t))?;
            for r in &rows {
                serde_json::to_writer(&mut f, r)?;
                f.write_all(b"\n")?;
            }
            f.sync_all()?;
            counts.insert(t, rows.len());
        }
        Ok(counts)
    }

    /// Moves records of resolved markets older than `horizon` into
    /// `archive_dir` (appending) and drops them from the live tables.
    pub fn compact(
        &self,
        horizon: UnixMillis,
        resolved: &HashSet<String>,
        archive_dir: &Path,
    ) -> Result<usize, StorageError> {
        fs::create_dir_all(archive_dir)?;
        let _writer = self.next_seq.lock();
        let mut moved = 0;
        for t in Table::ALL {
            let rows = self.backend.scan(t)?;
            let (old, keep): (Vec<_>, Vec<_>) = rows.into_iter().partition(|r| {
                r.ts < horizon && r.market_id.as_ref().is_some_and(|m| resolved.contains(m))
            });
            if old.is_empty() {
                continue;
            }
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(table_path(archive_dir, t))?;
            for r in &old {
                serde_json::to_writer(&mut f, r)?;
                f.write_all(b"\n")?;
            }
            f.sync_all()?;
            self.backend.rewrite(t, &keep)?;
            moved += old.len();
        }
        Ok(moved)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{CommandRecord, SnapshotRecord};
    use super::*;
    use crate::domain::{Category, MarketSnapshot, Probability};
    use proptest::prelude::*;

    fn snap(id: &str, ts: i64) -> SnapshotRecord {
        SnapshotRecord {
            cycle_id: 1,
            snapshot: MarketSnapshot {
                market_id: id.into(),
                title: "t".into(),
                yes_price: Probability::new(0.4).unwrap(),
                volume_usdc: 1.0,
                liquidity_usdc: 1.0,
                category: Category::Other,
                expiry: ts + 1000,
                observed_at: ts,
                volume_basis: Default::default(),
            },
        }
    }

    fn cmd(ts: i64) -> CommandRecord {
        CommandRecord {
            at: ts,
            operator: "op".into(),
            command: serde_json::json!({"action": "pause"}),
            accepted: true,
            error: None,
        }
    }

    #[test]
    fn sequence_numbers_increase() {
        let s = Store::in_memory();
        let a = s.append(&snap("m", 1)).unwrap();
        let b = s.append(&cmd(2)).unwrap();
        let c = s.append(&snap("m", 3)).unwrap();
        assert!(a < b && b < c);
    }

    #[test]
    fn invalid_record_rejected_before_write() {
        let s = Store::in_memory();
        let mut bad = serde_json::to_value(snap("m", 1)).unwrap();
        bad["snapshot"]["volume_usdc"] = serde_json::json!(-5.0);
        let bad: SnapshotRecord = serde_json::from_value(bad).unwrap();
        assert!(matches!(s.append(&bad), Err(StorageError::Invalid(_))));
        assert!(s.query(Table::Snapshots, &Query::all()).unwrap().is_empty());
        // a probability of 1.3 cannot even be decoded into a record
        let mut raw = serde_json::to_value(snap("m", 1)).unwrap();
        raw["snapshot"]["yes_price"] = serde_json::json!(1.3);
        assert!(serde_json::from_value::<SnapshotRecord>(raw).is_err());
    }

    #[test]
    fn durable_across_reopen_and_torn_tail_repaired() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = Store::open_dir(dir.path()).unwrap();
            for i in 0..5 {
                s.append(&snap("m", i)).unwrap();
            }
            // store dropped without any shutdown step
        }
        // simulate a crash mid-write
        let path = dir.path().join("snapshots.jsonl");
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"seq\":99,\"ts\":").unwrap();
        drop(f);
        let s = Store::open_dir(dir.path()).unwrap();
        let rows = s.query(Table::Snapshots, &Query::all()).unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(s.next_seq(), 6);
        s.append(&snap("m", 9)).unwrap();
        assert_eq!(s.query(Table::Snapshots, &Query::all()).unwrap().len(), 6);
    }

    #[test]
    fn query_hundred_in_order_and_empty_range() {
        let s = Store::in_memory();
        for i in 0..100 {
            s.append(&snap(&format!("m{}", i % 7), i)).unwrap();
        }
        let all = s.query(Table::Snapshots, &Query::all()).unwrap();
        assert_eq!(all.len(), 100);
        assert!(all.windows(2).all(|w| w[0].seq < w[1].seq));
        let q = Query {
            from_ts: Some(50),
            to_ts: Some(40),
            ..Query::all()
        };
        assert!(s.query(Table::Snapshots, &q).unwrap().is_empty());
    }

    #[test]
    fn replay_merges_tables_and_is_idempotent() {
        let s = Store::in_memory();
        assert!(s.replay(0).unwrap().is_empty());
        s.append(&snap("m", 1)).unwrap();
        s.append(&cmd(2)).unwrap();
        s.append(&snap("m", 3)).unwrap();
        let r1 = s.replay(0).unwrap();
        assert_eq!(r1.iter().map(|r| r.seq).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(r1, s.replay(0).unwrap());
        assert_eq!(s.replay(2).unwrap().len(), 2);
    }

    #[test]
    fn export_and_compact() {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open_dir(dir.path().join("db")).unwrap();
        s.append(&snap("old", 1)).unwrap();
        s.append(&snap("live", 2)).unwrap();
        s.append(&snap("old", 500)).unwrap();
        let counts = s.export(&dir.path().join("out"), &Query::all()).unwrap();
        assert_eq!(counts[&Table::Snapshots], 3);
        let resolved: HashSet<String> = ["old".to_string()].into();
        let moved = s.compact(100, &resolved, &dir.path().join("archive")).unwrap();
        assert_eq!(moved, 1);
        let rest = s.query(Table::Snapshots, &Query::all()).unwrap();
        assert_eq!(rest.len(), 2);
        s.append(&snap("live", 600)).unwrap();
        assert_eq!(s.query(Table::Snapshots, &Query::all()).unwrap().len(), 3);
        let archived = fs::read_to_string(dir.path().join("archive/snapshots.jsonl")).unwrap();
        assert_eq!(archived.lines().count(), 1);
    }

    proptest! {
        #[test]
        fn query_equals_full_scan(rows in proptest::collection::vec((0u8..4, 0i64..100), 0..60),
                                  lo in 0i64..100, hi in 0i64..100, m in proptest::option::of(0u8..4)) {
            let s = Store::in_memory();
            for (mk, ts) in &rows {
                s.append(&snap(&format!("m{mk}"), *ts)).unwrap();
            }
            let q = Query { from_ts: Some(lo), to_ts: Some(hi), market_id: m.map(|x| format!("m{x}")), ..Query::all() };
            let got = s.query(Table::Snapshots, &q).unwrap();
            // brute force over the raw rows in write order
            let expected: Vec<u64> = rows.iter().enumerate()
                .filter(|(_, (mk, ts))| *ts >= lo && *ts <= hi && m.is_none_or(|x| x == *mk))
                .map(|(i, _)| i as u64 + 1)
                .collect();
            prop_assert_eq!(got.iter().map(|r| r.seq).collect::<Vec<_>>(), expected);
        }
    }
}
