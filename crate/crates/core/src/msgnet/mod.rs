//! Deterministic in-process message passing for SPMD programs.
//!
//! [`spawn_spmd`] runs `P` logical processes, one OS thread each, over a
//! shared fabric. Point-to-point channels are FIFO per (source,
//! destination, tag). Blocking [`Comm::send`] is a rendezvous; [`Comm::isend`]
//! copies the payload and returns at once. Collectives match by call order
//! within a communicator, and reductions fold contributions in ascending
//! member order, so results and counters do not depend on thread
//! scheduling.
//!
//! When every live process is blocked and nothing can be delivered, the run
//! aborts with [`MsgError::Deadlock`] naming each blocked call site.

mod fabric;
mod stats;

use std::cell::RefCell;
use std::panic::Location;
use std::rc::Rc;
use std::sync::Arc;

use thiserror::Error;

use crate::error::{Error, Result};
use crate::procgrid::ProcessGrid;
use fabric::{CollectiveKind, Envelope, Fabric, Failure, Slot, WaitFor};

pub use stats::{Category, CommStats, Counters, Scope};

const BYTES_PER_WORD: u64 = 8;
/// Tags at or above this value are reserved for internal protocols.
pub const RESERVED_TAG_BASE: u64 = 1 << 60;
const TREE_TAG: u64 = RESERVED_TAG_BASE;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MsgError {
    #[error("deadlock: {0}")]
    Deadlock(String),
    #[error("aborted because rank {rank} failed")]
    Aborted { rank: usize },
    #[error("rank {rank} is outside a communicator of size {size}")]
    OutOfGroup { rank: usize, size: usize },
    #[error("collective mismatch: {0}")]
    Protocol(String),
    #[error("reduction payload lengths differ: {0:?}")]
    LengthMismatch(Vec<usize>),
    #[error("undelivered messages at teardown: {0}")]
    Orphans(String),
    #[error("rank {rank} finished with {count} non-blocking sends never waited on")]
    UnwaitedSends { rank: usize, count: usize },
    #[error("tag {0} is reserved")]
    ReservedTag(u64),
}

/// Handle of an in-flight [`Comm::isend`]. Complete it with [`Comm::wait`];
/// `wait` consumes the handle, so a second wait cannot compile.
#[derive(Debug)]
#[must_use = "non-blocking sends must be completed with Comm::wait"]
pub struct PendingSend {
    id: u64,
}

struct Ledger {
    stats: CommStats,
    category: Option<Category>,
    outstanding: usize,
}

/// A rank's endpoint into one communicator. Owned by exactly one logical
/// process; communicators split from the same world share its counters.
pub struct Comm {
    fabric: Arc<Fabric>,
    world_rank: usize,
    ctx: u64,
    scope: Scope,
    group: Arc<[usize]>,
    my_index: usize,
    coll_seq: u64,
    ledger: Rc<RefCell<Ledger>>,
}

/// Restores the previous traffic category when dropped.
pub struct CategoryGuard {
    ledger: Rc<RefCell<Ledger>>,
    previous: Option<Category>,
}

impl Drop for CategoryGuard {
    fn drop(&mut self) {
        self.ledger.borrow_mut().category = self.previous;
    }
}

impl Comm {
    /// Index of this process within the communicator.
    pub fn rank(&self) -> usize {
        self.my_index
    }

    pub fn size(&self) -> usize {
        self.group.len()
    }

    pub fn world_rank(&self) -> usize {
        self.world_rank
    }

    pub fn scope(&self) -> Scope {
        self.scope
    }

    /// World ranks of the members, in member order.
    pub fn members(&self) -> &[usize] {
        &self.group
    }

    /// Snapshot of this rank's counters (shared by all its communicators).
    pub fn stats(&self) -> CommStats {
        self.ledger.borrow().stats.clone()
    }

    /// Books subsequent traffic of this rank under `category` until the
    /// guard drops.
    pub fn category_scope(&self, category: Category) -> CategoryGuard {
        let previous = self.ledger.borrow_mut().category.replace(category);
        CategoryGuard {
            ledger: self.ledger.clone(),
            previous,
        }
    }

    fn book(&self, default: Category, f: impl FnOnce(&mut Counters)) {
        let mut l = self.ledger.borrow_mut();
        let cat = l.category.unwrap_or(default);
        f(l.stats.cell(cat, self.scope));
    }

    fn member(&self, r: usize) -> std::result::Result<usize, MsgError> {
        self.group.get(r).copied().ok_or(MsgError::OutOfGroup {
            rank: r,
            size: self.group.len(),
        })
    }

    fn check_tag(tag: u64) -> std::result::Result<(), MsgError> {
        if tag >= RESERVED_TAG_BASE {
            Err(MsgError::ReservedTag(tag))
        } else {
            Ok(())
        }
    }

    fn post(&self, dest: usize, tag: u64, payload: &[f64], synchronous: bool) -> Result<u64> {
        let dst = self.member(dest)?;
        let mut st = self.fabric.lock();
        let id = st.next_id;
        st.next_id += 1;
        st.mailboxes
            .entry((self.world_rank, dst, self.ctx, tag))
            .or_default()
            .push_back(Envelope {
                id,
                payload: payload.to_vec(),
                synchronous,
            });
        drop(st);
        self.fabric.cv.notify_all();
        Ok(id)
    }

    /// Blocking send: returns once the destination has received the message.
    #[track_caller]
    pub fn send(&mut self, dest: usize, tag: u64, payload: &[f64]) -> Result<()> {
        Self::check_tag(tag)?;
        self.send_raw(dest, tag, payload, Location::caller())
    }

    fn send_raw(
        &mut self,
        dest: usize,
        tag: u64,
        payload: &[f64],
        loc: &'static Location<'static>,
    ) -> Result<()> {
        let id = self.post(dest, tag, payload, true)?;
        self.book(Category::P2pSend, |c| {
            c.calls += 1;
            c.invocations += 1;
            c.messages += 1;
            c.bytes += payload.len() as u64 * BYTES_PER_WORD;
        });
        let st = self.fabric.lock();
        let mut st = self
            .fabric
            .block_on(st, self.world_rank, WaitFor::Ack(id), || {
                format!("send(dest={dest}, tag={tag}) at {loc}")
            })?;
        st.acked.remove(&id);
        Ok(())
    }

    /// Blocking receive of the oldest message from `src` with `tag`.
    #[track_caller]
    pub fn recv(&mut self, src: usize, tag: u64) -> Result<Vec<f64>> {
        Self::check_tag(tag)?;
        self.recv_raw(src, tag, Location::caller())
    }

    fn recv_raw(
        &mut self,
        src: usize,
        tag: u64,
        loc: &'static Location<'static>,
    ) -> Result<Vec<f64>> {
        let from = self.member(src)?;
        let key = (from, self.world_rank, self.ctx, tag);
        let st = self.fabric.lock();
        let mut st = self
            .fabric
            .block_on(st, self.world_rank, WaitFor::Message(key), || {
                format!("recv(src={src}, tag={tag}) at {loc}")
            })?;
        let queue = st.mailboxes.get_mut(&key).expect("ready channel");
        let env = queue.pop_front().expect("ready channel");
        if queue.is_empty() {
            st.mailboxes.remove(&key);
        }
        if env.synchronous {
            st.acked.insert(env.id);
        }
        drop(st);
        self.fabric.cv.notify_all();
        let len = env.payload.len() as u64;
        self.book(Category::P2pSend, |c| {
            c.calls += 1;
            c.recv_messages += 1;
            c.recv_bytes += len * BYTES_PER_WORD;
        });
        Ok(env.payload)
    }

    /// Non-blocking send. The payload is copied, so the caller may reuse its
    /// buffer immediately.
    pub fn isend(&mut self, dest: usize, tag: u64, payload: &[f64]) -> Result<PendingSend> {
        Self::check_tag(tag)?;
        let id = self.post(dest, tag, payload, false)?;
        self.book(Category::P2pSend, |c| {
            c.calls += 1;
            c.invocations += 1;
            c.messages += 1;
            c.bytes += payload.len() as u64 * BYTES_PER_WORD;
        });
        self.ledger.borrow_mut().outstanding += 1;
        Ok(PendingSend { id })
    }

    /// Completes a non-blocking send. Sends are buffered, so this never blocks.
    pub fn wait(&mut self, pending: PendingSend) -> Result<()> {
        let _ = pending.id;
        self.ledger.borrow_mut().outstanding -= 1;
        Ok(())
    }

    #[track_caller]
    fn collective(&mut self, kind: CollectiveKind, payload: Option<&[f64]>) -> Result<Arc<Vec<f64>>> {
        let loc = Location::caller();
        let seq = self.coll_seq;
        self.coll_seq += 1;
        let key = (self.ctx, seq);
        let g = self.group.len();
        let mut st = self.fabric.lock();
        let slot = st.collectives.entry(key).or_insert_with(|| Slot {
            kind,
            contributions: vec![None; g],
            arrived: 0,
            result: None,
            taken: 0,
        });
        if slot.kind != kind {
            let msg = format!(
                "member {} called {:?} as collective #{seq} but another member called {:?}",
                self.my_index, kind, slot.kind
            );
            drop(st);
            let e = MsgError::Protocol(msg);
            self.fabric.fail(Failure::Msg(e.clone()));
            return Err(e.into());
        }
        slot.contributions[self.my_index] = payload.map(<[f64]>::to_vec);
        slot.arrived += 1;
        if slot.arrived == g {
            let outcome = match kind {
                CollectiveKind::Bcast { root } => Ok(slot.contributions[root].take().unwrap_or_default()),
                CollectiveKind::Allreduce => fold_contributions(&slot.contributions),
            };
            match outcome {
                Ok(v) => slot.result = Some(Arc::new(v)),
                Err(e) => {
                    drop(st);
                    self.fabric.fail(Failure::Msg(e.clone()));
                    return Err(e.into());
                }
            }
            self.fabric.cv.notify_all();
        }
        let scope = self.scope;
        let mut st = self
            .fabric
            .block_on(st, self.world_rank, WaitFor::Collective(key.0, key.1), || {
                format!("{kind:?} collective #{seq} on {scope:?} communicator at {loc}")
            })?;
        let slot = st.collectives.get_mut(&key).expect("completed slot");
        let result = slot.result.clone().expect("completed slot");
        slot.taken += 1;
        if slot.taken == g {
            st.collectives.remove(&key);
        }
        Ok(result)
    }

    /// Broadcast from member `root`. Non-root members' `payload` is ignored.
    #[track_caller]
    pub fn bcast(&mut self, root: usize, payload: &[f64]) -> Result<Vec<f64>> {
        self.member(root)?;
        let is_root = self.my_index == root;
        let result = self.collective(CollectiveKind::Bcast { root }, is_root.then_some(payload))?;
        let g = self.group.len() as u64;
        let len = result.len() as u64;
        self.book(Category::Bcast, |c| {
            c.calls += 1;
            if is_root {
                c.invocations += 1;
                c.messages += g - 1;
                c.bytes += (g - 1) * len * BYTES_PER_WORD;
            } else {
                c.recv_messages += 1;
                c.recv_bytes += len * BYTES_PER_WORD;
            }
        });
        Ok(Arc::unwrap_or_clone(result))
    }

    /// Elementwise sum over all members, folded left in ascending member
    /// order. Every member receives the same bits.
    #[track_caller]
    pub fn allreduce_sum(&mut self, payload: &[f64]) -> Result<Vec<f64>> {
        let result = self.collective(CollectiveKind::Allreduce, Some(payload))?;
        let g = self.group.len() as u64;
        let len = payload.len() as u64;
        let first = self.my_index == 0;
        self.book(Category::Allreduce, |c| {
            c.calls += 1;
            if first {
                c.invocations += 1;
                c.recv_messages += g - 1;
                c.recv_bytes += (g - 1) * len * BYTES_PER_WORD;
            } else {
                c.messages += 1;
                c.bytes += len * BYTES_PER_WORD;
            }
        });
        Ok(Arc::unwrap_or_clone(result))
    }

    /// Sum over all members through an explicit binary combining tree of
    /// sends and receives, followed by a broadcast from member 0.
    ///
    /// In round `d = 1, 2, 4, ...` member `m` with `m mod 2d == d` sends its
    /// partial to `m - d`, which computes `own + received`. The result is
    /// the tree-ordered sum; it can differ in the last bits from
    /// [`Comm::allreduce_sum`].
    #[track_caller]
    pub fn reduce_binary_tree(&mut self, payload: &[f64]) -> Result<Vec<f64>> {
        let loc = Location::caller();
        let _guard = {
            let current = self.ledger.borrow().category;
            self.category_scope(current.unwrap_or(Category::Allreduce))
        };
        let g = self.group.len();
        let me = self.my_index;
        let mut acc = payload.to_vec();
        let mut d = 1;
        while d < g {
            if me % (2 * d) == d {
                self.send_raw(me - d, TREE_TAG + d as u64, &acc, loc)?;
                break;
            } else if me.is_multiple_of(2 * d) && me + d < g {
                let other = self.recv_raw(me + d, TREE_TAG + d as u64, loc)?;
                if other.len() != acc.len() {
                    let e = MsgError::LengthMismatch(vec![acc.len(), other.len()]);
                    self.fabric.fail(Failure::Msg(e.clone()));
                    return Err(e.into());
                }
                for (a, b) in acc.iter_mut().zip(other) {
                    *a += b;
                }
            }
            d *= 2;
        }
        self.bcast(0, &acc)
    }

    /// Splits a world communicator over `grid` into the row communicator
    /// (processes sharing rows Π, equal `my_x`, `P_y` members) and the
    /// column communicator (processes sharing columns Γ, equal `my_y`,
    /// `P_x` members). Members are ordered by grid linearization.
    pub fn split(&self, grid: &ProcessGrid) -> Result<(Comm, Comm)> {
        if self.ctx != 0 || self.group.len() != grid.p_total || grid.rank() != self.world_rank {
            return Err(Error::Protocol(format!(
                "split needs the world communicator of a {}x{} grid",
                grid.p_x, grid.p_y
            )));
        }
        let row: Arc<[usize]> = (0..grid.p_y).map(|y| grid.my_x + y * grid.p_x).collect();
        let col: Arc<[usize]> = (0..grid.p_x).map(|x| x + grid.my_y * grid.p_x).collect();
        let make = |ctx, scope, group: Arc<[usize]>, my_index| Comm {
            fabric: self.fabric.clone(),
            world_rank: self.world_rank,
            ctx,
            scope,
            group,
            my_index,
            coll_seq: 0,
            ledger: self.ledger.clone(),
        };
        Ok((
            make((1 << 32) | grid.my_x as u64, Scope::Row, row, grid.my_y),
            make((2 << 32) | grid.my_y as u64, Scope::Col, col, grid.my_x),
        ))
    }
}

fn fold_contributions(parts: &[Option<Vec<f64>>]) -> std::result::Result<Vec<f64>, MsgError> {
    let lens: Vec<usize> = parts.iter().map(|p| p.as_ref().map_or(0, Vec::len)).collect();
    if lens.windows(2).any(|w| w[0] != w[1]) {
        return Err(MsgError::LengthMismatch(lens));
    }
    let mut iter = parts.iter().flatten();
    let mut acc = iter.next().cloned().unwrap_or_default();
    for p in iter {
        for (a, b) in acc.iter_mut().zip(p) {
            *a += *b;
        }
    }
    Ok(acc)
}

/// Per-rank results of an SPMD run plus each rank's counters.
#[derive(Debug)]
pub struct SpmdOutput<T> {
    pub results: Vec<T>,
    pub stats: Vec<CommStats>,
}

impl<T> SpmdOutput<T> {
    /// Counters summed over all ranks.
    pub fn merged_stats(&self) -> CommStats {
        CommStats::merged(&self.stats)
    }
}

struct ExitGuard<'a> {
    fabric: &'a Fabric,
    rank: usize,
}

impl Drop for ExitGuard<'_> {
    fn drop(&mut self) {
        if std::thread::panicking() {
            self.fabric.fail(Failure::RankFailed(self.rank));
        }
        self.fabric.rank_exited();
    }
}

/// Runs `program` on `p` logical processes and waits for all of them.
///
/// Each rank gets its own world [`Comm`]. If any rank fails, the others are
/// released with [`MsgError::Aborted`] and the failing rank's error is
/// returned. Undelivered messages or un-waited non-blocking sends at a
/// clean exit are errors as well.
pub fn spawn_spmd<T, F>(p: usize, program: F) -> Result<SpmdOutput<T>>
where
    T: Send,
    F: Fn(&mut Comm) -> Result<T> + Sync,
{
    if p == 0 {
        return Err(Error::Config("an SPMD run needs at least one process".into()));
    }
    let fabric = Arc::new(Fabric::new(p));
    let world: Arc<[usize]> = (0..p).collect();
    let outcomes: Vec<std::thread::Result<Result<(T, CommStats)>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..p)
            .map(|rank| {
                let fabric = fabric.clone();
                let world = world.clone();
                let program = &program;
                std::thread::Builder::new()
                    .name(format!("spmd-rank-{rank}"))
                    .spawn_scoped(s, move || {
                        let _exit = ExitGuard {
                            fabric: &fabric,
                            rank,
                        };
                        let ledger = Rc::new(RefCell::new(Ledger {
                            stats: CommStats::default(),
                            category: None,
                            outstanding: 0,
                        }));
                        let mut comm = Comm {
                            fabric: fabric.clone(),
                            world_rank: rank,
                            ctx: 0,
                            scope: Scope::World,
                            group: world,
                            my_index: rank,
                            coll_seq: 0,
                            ledger: ledger.clone(),
                        };
                        let out = program(&mut comm).and_then(|v| {
                            let count = ledger.borrow().outstanding;
                            if count > 0 {
                                Err(MsgError::UnwaitedSends { rank, count }.into())
                            } else {
                                Ok(v)
                            }
                        });
                        if out.is_err() {
                            fabric.fail(Failure::RankFailed(rank));
                        }
                        let stats = ledger.borrow().stats.clone();
                        out.map(|v| (v, stats))
                    })
                    .expect("spawn rank thread")
            })
            .collect();
        handles.into_iter().map(|h| h.join()).collect()
    });

    let mut results = Vec::with_capacity(p);
    for outcome in outcomes {
        match outcome {
            Err(panic) => std::panic::resume_unwind(panic),
            Ok(r) => results.push(r),
        }
    }
    let failure = fabric.lock().failure.clone();
    match failure {
        Some(Failure::RankFailed(r)) => {
            return Err(match &results[r] {
                Err(e) => e.clone(),
                Ok(_) => MsgError::Aborted { rank: r }.into(),
            })
        }
        Some(Failure::Msg(e)) => return Err(e.into()),
        None => {}
    }
    let st = fabric.lock();
    if !st.mailboxes.is_empty() {
        let mut chans: Vec<String> = st
            .mailboxes
            .iter()
            .map(|((src, dst, _, tag), q)| format!("{src}->{dst} tag {tag} ({} pending)", q.len()))
            .collect();
        chans.sort();
        return Err(MsgError::Orphans(chans.join(", ")).into());
    }
    drop(st);
    let mut values = Vec::with_capacity(p);
    let mut stats = Vec::with_capacity(p);
    for r in results {
        let (v, s) = r.expect("failures handled above");
        values.push(v);
        stats.push(s);
    }
    Ok(SpmdOutput {
        results: values,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::procgrid::build_grid;

    #[test]
    fn single_rank_returns_rank() {
        let out = spawn_spmd(1, |c| Ok(c.rank())).unwrap();
        assert_eq!(out.results, vec![0]);
    }

    #[test]
    fn allreduce_of_rank_plus_one() {
        let out = spawn_spmd(4, |c| Ok(c.allreduce_sum(&[(c.rank() + 1) as f64])?[0])).unwrap();
        assert_eq!(out.results, vec![10.0; 4]);
        let out = spawn_spmd(4, |c| c.allreduce_sum(&[c.rank() as f64])).unwrap();
        assert!(out.results.iter().all(|r| r == &vec![6.0]));
        let out = spawn_spmd(1, |c| c.allreduce_sum(&[3.5, -1.0])).unwrap();
        assert_eq!(out.results[0], vec![3.5, -1.0]);
    }

    #[test]
    fn unmatched_send_is_deadlock() {
        let err = spawn_spmd(2, |c| {
            if c.rank() == 0 {
                c.send(1, 7, &[1.0])?;
            }
            Ok(())
        })
        .unwrap_err();
        match err {
            Error::Msg(MsgError::Deadlock(msg)) => {
                assert!(msg.contains("rank 0 blocked in send(dest=1, tag=7)"), "{msg}");
                assert!(msg.contains("mod.rs"), "{msg}");
            }
            other => panic!("expected deadlock, got {other:?}"),
        }
    }

    #[test]
    fn mutual_recv_is_deadlock() {
        let err = spawn_spmd(3, |c| {
            let peer = (c.rank() + 1) % 3;
            c.recv(peer, 0)
        })
        .unwrap_err();
        let Error::Msg(MsgError::Deadlock(msg)) = err else {
            panic!("expected deadlock, got {err:?}");
        };
        for r in 0..3 {
            assert!(msg.contains(&format!("rank {r} blocked in recv")), "{msg}");
        }
    }

    #[test]
    fn send_recv_round_trip() {
        let out = spawn_spmd(2, |c| {
            if c.rank() == 0 {
                c.send(1, 3, &[1.0, 2.0])?;
                Ok(vec![])
            } else {
                c.recv(0, 3)
            }
        })
        .unwrap();
        assert_eq!(out.results[1], vec![1.0, 2.0]);
    }

    #[test]
    fn isend_is_fifo_per_channel() {
        let out = spawn_spmd(2, |c| {
            if c.rank() == 0 {
                let a = c.isend(1, 0, &[1.0])?;
                let b = c.isend(1, 0, &[2.0, 2.0])?;
                c.wait(a)?;
                c.wait(b)?;
                Ok(vec![])
            } else {
                let mut got = c.recv(0, 0)?;
                got.extend(c.recv(0, 0)?);
                Ok(got)
            }
        })
        .unwrap();
        assert_eq!(out.results[1], vec![1.0, 2.0, 2.0]);
    }

    #[test]
    fn isend_wait_completes_without_receiver_progress() {
        let out = spawn_spmd(2, |c| {
            if c.rank() == 0 {
                let h = c.isend(1, 1, &[4.0])?;
                c.wait(h)?;
                c.allreduce_sum(&[0.0])?;
                Ok(0.0)
            } else {
                c.allreduce_sum(&[0.0])?;
                Ok(c.recv(0, 1)?[0])
            }
        })
        .unwrap();
        assert_eq!(out.results[1], 4.0);
    }

    #[test]
    fn orphan_and_unwaited_sends_fail_teardown() {
        let err = spawn_spmd(2, |c| {
            if c.rank() == 0 {
                let h = c.isend(1, 0, &[1.0])?;
                c.wait(h)?;
            }
            Ok(())
        })
        .unwrap_err();
        assert!(matches!(err, Error::Msg(MsgError::Orphans(_))), "{err:?}");

        let err = spawn_spmd(2, |c| {
            if c.rank() == 0 {
                let _never_waited = c.isend(1, 0, &[1.0])?;
            } else {
                c.recv(0, 0)?;
            }
            Ok(())
        })
        .unwrap_err();
        assert!(matches!(err, Error::Msg(MsgError::UnwaitedSends { rank: 0, count: 1 })));
    }

    #[test]
    fn out_of_group_and_reserved_tags() {
        let err = spawn_spmd(2, |c| c.send(5, 0, &[1.0])).unwrap_err();
        assert!(matches!(err, Error::Msg(MsgError::OutOfGroup { rank: 5, size: 2 })));
        let err = spawn_spmd(1, |c| c.recv(0, RESERVED_TAG_BASE)).unwrap_err();
        assert!(matches!(err, Error::Msg(MsgError::ReservedTag(_))));
    }

    #[test]
    fn bcast_delivers_root_payload_and_counts() {
        let out = spawn_spmd(3, |c| {
            let data = if c.rank() == 0 { vec![7.0] } else { vec![] };
            c.bcast(0, &data)
        })
        .unwrap();
        assert!(out.results.iter().all(|r| r == &vec![7.0]));

        let out = spawn_spmd(1, |c| c.bcast(0, &[1.0])).unwrap();
        assert_eq!(out.merged_stats().total().messages, 0);
        assert_eq!(out.merged_stats().category(Category::Bcast).invocations, 1);

        let out = spawn_spmd(5, |c| c.bcast(2, &[1.0, 2.0])).unwrap();
        let m = out.merged_stats().category(Category::Bcast);
        assert_eq!(m.messages, 4);
        assert_eq!(m.invocations, 1);
        assert_eq!(m.calls, 5);
        assert_eq!(m.bytes, m.recv_bytes);
    }

    #[test]
    fn root_disagreement_is_protocol_error() {
        let err = spawn_spmd(2, |c| {
            let root = c.rank();
            c.bcast(root, &[1.0])
        })
        .unwrap_err();
        assert!(matches!(err, Error::Msg(MsgError::Protocol(_))), "{err:?}");
    }

    #[test]
    fn mismatched_collectives_do_not_hang() {
        let err = spawn_spmd(2, |c| {
            if c.rank() == 0 {
                c.bcast(0, &[1.0])
            } else {
                c.allreduce_sum(&[1.0])
            }
        })
        .unwrap_err();
        assert!(matches!(err, Error::Msg(MsgError::Protocol(_))), "{err:?}");

        let err = spawn_spmd(2, |c| {
            if c.rank() == 0 {
                c.allreduce_sum(&[1.0])
            } else {
                c.recv(0, 0)
            }
        })
        .unwrap_err();
        assert!(matches!(err, Error::Msg(MsgError::Deadlock(_))), "{err:?}");
    }

    #[test]
    fn allreduce_length_mismatch() {
        let err = spawn_spmd(2, |c| c.allreduce_sum(&vec![1.0; c.rank() + 1])).unwrap_err();
        assert!(matches!(err, Error::Msg(MsgError::LengthMismatch(_))), "{err:?}");
    }

    #[test]
    fn rank_error_releases_blocked_peers() {
        let err = spawn_spmd(3, |c| {
            if c.rank() == 2 {
                return Err(Error::Config("boom".into()));
            }
            c.allreduce_sum(&[1.0])
        })
        .unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m == "boom"), "{err:?}");
    }

    #[test]
    fn tree_reduction() {
        let out = spawn_spmd(2, |c| c.reduce_binary_tree(&[if c.rank() == 0 { 1.25 } else { 2.5 }])).unwrap();
        assert!(out.results.iter().all(|r| r == &vec![3.75]));

        let out = spawn_spmd(4, |c| {
            let t = c.reduce_binary_tree(&[0.1])?;
            let a = c.allreduce_sum(&[0.1])?;
            Ok((t, a))
        })
        .unwrap();
        for (t, a) in &out.results {
            assert_eq!(t[0].to_bits(), a[0].to_bits());
        }
    }

    #[test]
    fn tree_message_counts() {
        // p - 1 combining sends plus a (p - 1)-message broadcast;
        // ceil(log2 p) rounds, i.e. the deepest receiver gets that many partials.
        for p in 2..=8usize {
            let out = spawn_spmd(p, |c| c.reduce_binary_tree(&[1.0])).unwrap();
            let m = out.merged_stats();
            assert_eq!(m.category(Category::Allreduce).messages, 2 * (p as u64 - 1), "p={p}");
            let rounds = (p as f64).log2().ceil() as u64;
            let s0 = out.stats[0].category(Category::Allreduce);
            // member 0 receives once per round, then takes part in the broadcast
            assert_eq!(s0.recv_messages, rounds, "p={p}");
            assert!(out.results.iter().all(|r| r == &vec![p as f64]));
        }
    }

    #[test]
    fn split_communicators() {
        let grids = build_grid(8, 2, 4).unwrap();
        let out = spawn_spmd(8, |c| {
            let g = grids[c.world_rank()];
            let (row, col) = c.split(&g)?;
            Ok((row.members().to_vec(), col.members().to_vec(), row.rank(), col.rank()))
        })
        .unwrap();
        // rank 4 is (0, 2)
        let (row, col, ri, ci) = &out.results[4];
        assert_eq!(row, &vec![0, 2, 4, 6]);
        assert_eq!(col, &vec![4, 5]);
        assert_eq!((*ri, *ci), (2, 0));

        let grids = build_grid(3, 1, 3).unwrap();
        let out = spawn_spmd(3, |c| {
            let (row, col) = c.split(&grids[c.world_rank()])?;
            Ok((row.size(), col.size()))
        })
        .unwrap();
        assert!(out.results.iter().all(|&s| s == (3, 1)));

        let grids = build_grid(3, 3, 1).unwrap();
        let out = spawn_spmd(3, |c| {
            let (row, col) = c.split(&grids[c.world_rank()])?;
            Ok((row.size(), col.size()))
        })
        .unwrap();
        assert!(out.results.iter().all(|&s| s == (1, 3)));
    }

    #[test]
    fn split_comms_do_not_cross_talk() {
        let grids = build_grid(4, 2, 2).unwrap();
        let out = spawn_spmd(4, |c| {
            let g = grids[c.world_rank()];
            let (mut row, mut col) = c.split(&g)?;
            let r = row.allreduce_sum(&[c.world_rank() as f64])?;
            let s = col.allreduce_sum(&[c.world_rank() as f64])?;
            let w = c.allreduce_sum(&[1.0])?;
            Ok((r[0], s[0], w[0]))
        })
        .unwrap();
        // rows: {0,2}, {1,3}; cols: {0,1}, {2,3}
        assert_eq!(out.results[0], (2.0, 1.0, 4.0));
        assert_eq!(out.results[3], (4.0, 5.0, 4.0));
        let m = out.merged_stats();
        assert_eq!(m.get(Category::Allreduce, Scope::Row).invocations, 2);
        assert_eq!(m.get(Category::Allreduce, Scope::Col).invocations, 2);
        assert_eq!(m.get(Category::Allreduce, Scope::World).invocations, 1);
    }

    #[test]
    fn categories_and_conservation() {
        let out = spawn_spmd(3, |c| {
            {
                let _g = c.category_scope(Category::GatherHit);
                c.bcast(1, &[1.0, 2.0, 3.0])?;
            }
            if c.rank() == 0 {
                c.send(2, 0, &[9.0])?;
            } else if c.rank() == 2 {
                c.recv(0, 0)?;
            }
            c.allreduce_sum(&[1.0])
        })
        .unwrap();
        let m = out.merged_stats();
        assert_eq!(m.category(Category::GatherHit).messages, 2);
        assert_eq!(m.category(Category::Bcast).calls, 0);
        assert_eq!(m.category(Category::P2pSend).invocations, 1);
        let t = m.total();
        assert_eq!(t.messages, t.recv_messages);
        assert_eq!(t.bytes, t.recv_bytes);
    }

    #[test]
    fn repeated_runs_are_identical() {
        let run = || {
            spawn_spmd(6, |c| {
                let mut acc = vec![c.rank() as f64 * 0.1 + 0.01];
                for _ in 0..20 {
                    acc = c.allreduce_sum(&acc)?;
                    acc = c.reduce_binary_tree(&[acc[0] / 7.0])?;
                }
                Ok(acc[0].to_bits())
            })
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.results, b.results);
        assert_eq!(a.stats, b.stats);
    }
}
