use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use tokio::sync::{OwnedSemaphorePermit, Semaphore};

/// Global bound on simultaneous provider calls, instrumented with the current
/// and peak number of holders.
#[derive(Debug, Clone)]
pub struct InFlightLimiter {
    inner: Arc<Inner>,
}

#[derive(Debug)]
struct Inner {
    bound: usize,
    sem: Arc<Semaphore>,
    current: AtomicUsize,
    peak: AtomicUsize,
    total: AtomicUsize,
}

pub struct InFlightGuard {
    inner: Arc<Inner>,
    _permit: OwnedSemaphorePermit,
}

impl Drop for InFlightGuard {
    fn drop(&mut self) {
        self.inner.current.fetch_sub(1, Ordering::SeqCst);
    }
}

impl InFlightLimiter {
    pub fn new(bound: usize) -> Self {
        let bound = bound.max(1);
        Self {
            inner: Arc::new(Inner {
                bound,
                sem: Arc::new(Semaphore::new(bound)),
                current: AtomicUsize::new(0),
                peak: AtomicUsize::new(0),
                total: AtomicUsize::new(0),
            }),
        }
    }

    pub async fn acquire(&self) -> InFlightGuard {
        let permit = self
            .inner
            .sem
            .clone()
            .acquire_owned()
            .await
            .expect("in-flight semaphore closed");
        let now = self.inner.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.inner.peak.fetch_max(now, Ordering::SeqCst);
        self.inner.total.fetch_add(1, Ordering::SeqCst);
        InFlightGuard {
            inner: self.inner.clone(),
            _permit: permit,
        }
    }

    pub fn bound(&self) -> usize {
        self.inner.bound
    }

    pub fn current(&self) -> usize {
        self.inner.current.load(Ordering::SeqCst)
    }

    /// Highest simultaneous in-flight count observed so far.
    pub fn peak(&self) -> usize {
        self.inner.peak.load(Ordering::SeqCst)
    }

    pub fn total_acquired(&self) -> usize {
        self.inner.total.load(Ordering::SeqCst)
    }
}
