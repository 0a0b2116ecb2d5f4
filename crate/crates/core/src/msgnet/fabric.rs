//! Shared state of the simulated interconnect.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};

use super::MsgError;

/// Point-to-point channel: (source world rank, destination world rank,
/// communicator context, tag).
pub(crate) type ChannelKey = (usize, usize, u64, u64);

pub(crate) struct Envelope {
    pub id: u64,
    pub payload: Vec<f64>,
    /// Rendezvous send: the sender stays blocked until this is matched.
    pub synchronous: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CollectiveKind {
    Bcast { root: usize },
    Allreduce,
}

pub(crate) struct Slot {
    pub kind: CollectiveKind,
    pub contributions: Vec<Option<Vec<f64>>>,
    pub arrived: usize,
    pub result: Option<Arc<Vec<f64>>>,
    pub taken: usize,
}

#[derive(Debug, Clone)]
pub(crate) enum WaitFor {
    Message(ChannelKey),
    Ack(u64),
    Collective(u64, u64),
}

pub(crate) struct Waiter {
    pub what: WaitFor,
    pub site: String,
}

/// Why the fabric stopped.
#[derive(Debug, Clone)]
pub(crate) enum Failure {
    /// A rank's program returned an error or panicked.
    RankFailed(usize),
    Msg(MsgError),
}

pub(crate) struct State {
    pub live: usize,
    pub mailboxes: HashMap<ChannelKey, VecDeque<Envelope>>,
    pub acked: HashSet<u64>,
    pub collectives: HashMap<(u64, u64), Slot>,
    pub waiting: BTreeMap<usize, Waiter>,
    pub failure: Option<Failure>,
    pub next_id: u64,
}

impl State {
    fn ready(&self, what: &WaitFor) -> bool {
        match what {
            WaitFor::Message(key) => self.mailboxes.get(key).is_some_and(|q| !q.is_empty()),
            WaitFor::Ack(id) => self.acked.contains(id),
            WaitFor::Collective(ctx, seq) => self
                .collectives
                .get(&(*ctx, *seq))
                .is_some_and(|s| s.result.is_some()),
        }
    }

    /// Declares a deadlock when every live process is blocked and none of
    /// them can make progress.
    pub fn check_quiescence(&mut self) {
        if self.failure.is_some() || self.live == 0 || self.waiting.len() < self.live {
            return;
        }
        if self.waiting.values().any(|w| self.ready(&w.what)) {
            return;
        }
        let sites: Vec<String> = self
            .waiting
            .iter()
            .map(|(r, w)| format!("rank {r} blocked in {}", w.site))
            .collect();
        self.failure = Some(Failure::Msg(MsgError::Deadlock(sites.join("; "))));
    }
}

pub(crate) struct Fabric {
    pub state: Mutex<State>,
    pub cv: Condvar,
}

impl Fabric {
    pub fn new(p: usize) -> Self {
        Fabric {
            state: Mutex::new(State {
                live: p,
                mailboxes: HashMap::new(),
                acked: HashSet::new(),
                collectives: HashMap::new(),
                waiting: BTreeMap::new(),
                failure: None,
                next_id: 0,
            }),
            cv: Condvar::new(),
        }
    }

    pub fn lock(&self) -> MutexGuard<'_, State> {
        // A panicking rank poisons the mutex; the state itself stays usable.
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Blocks `me` until `what` is satisfied or the fabric fails.
    pub fn block_on<'a>(
        &'a self,
        mut st: MutexGuard<'a, State>,
        me: usize,
        what: WaitFor,
        site: impl FnOnce() -> String,
    ) -> Result<MutexGuard<'a, State>, MsgError> {
        let mut site = Some(site);
        loop {
            if let Some(f) = &st.failure {
                let err = match f {
                    Failure::RankFailed(r) => MsgError::Aborted { rank: *r },
                    Failure::Msg(e) => e.clone(),
                };
                st.waiting.remove(&me);
                return Err(err);
            }
            if st.ready(&what) {
                st.waiting.remove(&me);
                return Ok(st);
            }
            st.waiting.entry(me).or_insert_with(|| Waiter {
                what: what.clone(),
                site: site.take().map(|f| f()).unwrap_or_default(),
            });
            st.check_quiescence();
            if st.failure.is_some() {
                self.cv.notify_all();
                continue;
            }
            st = self.cv.wait(st).unwrap_or_else(|e| e.into_inner());
        }
    }

    pub fn fail(&self, failure: Failure) {
        let mut st = self.lock();
        if st.failure.is_none() {
            st.failure = Some(failure);
        }
        drop(st);
        self.cv.notify_all();
    }

    pub fn rank_exited(&self) {
        let mut st = self.lock();
        st.live -= 1;
        st.check_quiescence();
        drop(st);
        self.cv.notify_all();
    }
}
