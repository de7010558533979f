use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use crate::minipvm::Tid;
use crate::tess::SpawnRow;

#[derive(Debug, Default)]
struct Table {
    /// `(vid, program)` per spawn row, in row order.
    rows: Vec<(u32, String)>,
    by_vid: BTreeMap<u32, Tid>,
    by_tid: BTreeMap<Tid, u32>,
}

/// Bidirectional vid/tid map, filled as processes are started or announced.
#[derive(Debug, Clone, Default)]
pub struct VidMap {
    inner: Arc<(Mutex<Table>, Condvar)>,
}

impl VidMap {
    /// Forgets every mapping and takes the rows of a new specification.
    pub fn reset(&self, rows: &[SpawnRow]) {
        let mut t = self.inner.0.lock().unwrap();
        *t = Table { rows: rows.iter().map(|r| (r.vid, r.program.clone())).collect(), ..Table::default() };
    }

    fn assign(&self, t: &mut Table, vid: u32, tid: Tid) {
        t.by_vid.insert(vid, tid);
        t.by_tid.insert(tid, vid);
        self.inner.1.notify_all();
    }

    /// Maps the root row (`root_vid`) to the first started process.
    pub fn map_root(&self, root_vid: u32, tid: Tid) {
        let mut t = self.inner.0.lock().unwrap();
        self.assign(&mut t, root_vid, tid);
    }

    /// Gives `tid` the first unmatched row running `program`. Announcing
    /// the same tid again returns the vid it already has.
    pub fn map_announce(&self, program: &str, tid: Tid) -> Option<u32> {
        let mut t = self.inner.0.lock().unwrap();
        if let Some(vid) = t.by_tid.get(&tid) {
            return Some(*vid);
        }
        let vid = t.rows.iter().find(|(vid, p)| p == program && !t.by_vid.contains_key(vid)).map(|(vid, _)| *vid)?;
        self.assign(&mut t, vid, tid);
        Some(vid)
    }

    pub fn tid(&self, vid: u32) -> Option<Tid> {
        self.inner.0.lock().unwrap().by_vid.get(&vid).copied()
    }

    pub fn vid(&self, tid: Tid) -> Option<u32> {
        self.inner.0.lock().unwrap().by_tid.get(&tid).copied()
    }

    /// Mapped vids in ascending order.
    pub fn vids(&self) -> Vec<u32> {
        self.inner.0.lock().unwrap().by_vid.keys().copied().collect()
    }

    /// Waits until `vid` is mapped.
    pub fn wait_tid(&self, vid: u32, timeout: Duration) -> Option<Tid> {
        let deadline = Instant::now() + timeout;
        let (lock, cv) = &*self.inner;
        let mut t = lock.lock().unwrap();
        loop {
            if let Some(tid) = t.by_vid.get(&vid) {
                return Some(*tid);
            }
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            t = cv.wait_timeout(t, deadline - now).unwrap().0;
        }
    }
}
