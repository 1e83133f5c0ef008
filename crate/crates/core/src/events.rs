//! Fan-out of live events to subscribers (WebSocket clients). Publishing
//! never blocks: each subscriber has a bounded buffer and a subscriber whose
//! buffer is full is dropped.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::mpsc;
use tracing::debug;

use crate::domain::UnixMillis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    StateSnapshot,
    SnapshotBatch,
    Consensus,
    Signal,
    Trade,
    PnlUpdate,
    LogLine,
    RiskState,
    CycleReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Global, strictly increasing across all events.
    pub event_id: u64,
    pub kind: EventKind,
    pub payload: Value,
    pub ts: UnixMillis,
}

/// What a client sees on the wire: the event plus a per-connection sequence
/// number starting at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventFrame {
    pub kind: EventKind,
    pub payload: Value,
    pub seq: u64,
    pub event_id: u64,
    pub ts: UnixMillis,
}

type SnapshotFn = Arc<dyn Fn() -> Value + Send + Sync>;

struct Client {
    id: u64,
    tx: mpsc::Sender<Arc<Event>>,
}

struct BusInner {
    next_event_id: u64,
    clients: Vec<Client>,
    snapshot: Option<SnapshotFn>,
}

pub struct EventBus {
    inner: Mutex<BusInner>,
    buffer: usize,
    next_client: AtomicU64,
    dropped: AtomicU64,
    published: AtomicU64,
}

impl EventBus {
    pub fn new(buffer_frames: usize) -> Self {
        Self {
            inner: Mutex::new(BusInner {
                next_event_id: 1,
                clients: Vec::new(),
                snapshot: None,
            }),
            buffer: buffer_frames.max(1),
            next_client: AtomicU64::new(1),
            dropped: AtomicU64::new(0),
            published: AtomicU64::new(0),
        }
    }

    /// Source of the `state_snapshot` frame each new subscriber gets first.
    /// It runs under the bus lock, so it must not publish.
    pub fn set_snapshot_source(&self, f: impl Fn() -> Value + Send + Sync + 'static) {
        self.inner.lock().snapshot = Some(Arc::new(f));
    }

    pub fn publish(&self, kind: EventKind, payload: Value, ts: UnixMillis) -> u64 {
        let mut g = self.inner.lock();
        let id = g.next_event_id;
        g.next_event_id += 1;
        let ev = Arc::new(Event {
            event_id: id,
            kind,
            payload,
            ts,
        });
        let before = g.clients.len();
        g.clients.retain(|c| match c.tx.try_send(ev.clone()) {
            Ok(()) => true,
            Err(mpsc::error::TrySendError::Full(_)) => {
                debug!(client = c.id, "dropping slow subscriber");
                false
            }
            Err(mpsc::error::TrySendError::Closed(_)) => false,
        });
        let gone = before - g.clients.len();
        drop(g);
        self.dropped.fetch_add(gone as u64, Ordering::Relaxed);
        self.published.fetch_add(1, Ordering::Relaxed);
        id
    }

    /// Registers a subscriber. The first frame is a state snapshot taken
    /// atomically with registration, so no event is missed or duplicated
    /// between the snapshot and the live tail.
    pub fn subscribe(&self, ts: UnixMillis) -> Subscription {
        let (tx, rx) = mpsc::channel(self.buffer + 1);
        let id = self.next_client.fetch_add(1, Ordering::Relaxed);
        let mut g = self.inner.lock();
        let payload = g.snapshot.as_ref().map(|f| f()).unwrap_or(Value::Null);
        let snapshot = Event {
            event_id: g.next_event_id - 1,
            kind: EventKind::StateSnapshot,
            payload,
            ts,
        };
        tx.try_send(Arc::new(snapshot)).expect("fresh channel has room");
        g.clients.push(Client { id, tx });
        Subscription { id, rx, seq: 0 }
    }

    pub fn client_count(&self) -> usize {
        self.inner.lock().clients.len()
    }

    pub fn dropped_clients(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    pub fn published(&self) -> u64 {
        self.published.load(Ordering::Relaxed)
    }

    pub fn last_event_id(&self) -> u64 {
        self.inner.lock().next_event_id - 1
    }
}

pub struct Subscription {
    pub id: u64,
    rx: mpsc::Receiver<Arc<Event>>,
    seq: u64,
}

impl Subscription {
    /// Next frame, or `None` once the bus has dropped this subscriber and the
    /// buffer is drained.
    pub async fn next_frame(&mut self) -> Option<EventFrame> {
        let ev = self.rx.recv().await?;
        Some(self.frame(&ev))
    }

    pub fn try_next_frame(&mut self) -> Option<EventFrame> {
        let ev = self.rx.try_recv().ok()?;
        Some(self.frame(&ev))
    }

    fn frame(&mut self, ev: &Event) -> EventFrame {
        self.seq += 1;
        EventFrame {
            kind: ev.kind,
            payload: ev.payload.clone(),
            seq: self.seq,
            event_id: ev.event_id,
            ts: ev.ts,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn two_clients_same_frame() {
        let bus = EventBus::new(8);
        let mut a = bus.subscribe(0);
        let mut b = bus.subscribe(0);
        bus.publish(EventKind::LogLine, json!("hi"), 1);
        for s in [&mut a, &mut b] {
            assert_eq!(s.try_next_frame().unwrap().kind, EventKind::StateSnapshot);
            let f = s.try_next_frame().unwrap();
            assert_eq!((f.seq, f.event_id, f.payload.clone()), (2, 1, json!("hi")));
        }
    }

    #[test]
    fn mid_stream_subscriber_gets_snapshot_then_tail() {
        let bus = Arc::new(EventBus::new(8));
        let counter = Arc::new(AtomicU64::new(0));
        let c = counter.clone();
        bus.set_snapshot_source(move || json!({ "events_seen": c.load(Ordering::SeqCst) }));
        for i in 0..3 {
            bus.publish(EventKind::Trade, json!(i), i);
            counter.fetch_add(1, Ordering::SeqCst);
        }
        let mut s = bus.subscribe(10);
        bus.publish(EventKind::Trade, json!(3), 11);
        let snap = s.try_next_frame().unwrap();
        assert_eq!(snap.kind, EventKind::StateSnapshot);
        assert_eq!(snap.payload, json!({ "events_seen": 3 }));
        assert_eq!(snap.event_id, 3);
        let next = s.try_next_frame().unwrap();
        assert_eq!((next.seq, next.event_id), (2, 4));
    }

    #[test]
    fn slow_client_dropped_others_unaffected() {
        let bus = EventBus::new(4);
        let mut fast = bus.subscribe(0);
        let _slow = bus.subscribe(0);
        let mut seen = 0;
        for i in 0..20 {
            bus.publish(EventKind::LogLine, json!(i), i);
            while fast.try_next_frame().is_some() {
                seen += 1;
            }
        }
        assert_eq!(seen, 21);
        assert_eq!(bus.client_count(), 1);
        assert_eq!(bus.dropped_clients(), 1);
    }

    #[tokio::test]
    async fn dropped_subscriber_stream_ends() {
        let bus = EventBus::new(1);
        let mut s = bus.subscribe(0);
        for i in 0..5 {
            bus.publish(EventKind::LogLine, json!(i), i);
        }
        let mut n = 0;
        while s.next_frame().await.is_some() {
            n += 1;
        }
        // snapshot plus what fit in the buffer before the drop
        assert!((1..=2).contains(&n));
    }
}
