use std::collections::BTreeMap;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

/// What a communication call was for. Primitive kinds are the defaults; the
/// algorithms tag their traffic with a phase category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    P2pSend,
    Bcast,
    Allreduce,
    /// TRD pivot column distribution along grid rows.
    PivotTrd,
    /// TRD redistribution of the reflector into column layout.
    SendYt,
    /// TRD redistribution of the matvec result into column layout.
    SendXt,
    /// TRD row reduction of the matvec partials.
    MatvecReduce,
    /// HIT gather of reflector slices.
    GatherHit,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::P2pSend,
        Category::Bcast,
        Category::Allreduce,
        Category::PivotTrd,
        Category::SendYt,
        Category::SendXt,
        Category::MatvecReduce,
        Category::GatherHit,
    ];
}

/// Which communicator carried the traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    World,
    /// Processes sharing rows Π (one grid row, `P_y` members).
    Row,
    /// Processes sharing columns Γ (one grid column, `P_x` members).
    Col,
}

/// Counters for one (category, scope) cell on one rank.
///
/// `calls` counts every communication call this rank took part in.
/// `invocations` counts each operation once globally: at the sender for
/// point-to-point, at the root for broadcasts and at member 0 for
/// reductions. Messages and bytes are booked on the sending side and,
/// separately, on the receiving side.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub calls: u64,
    pub invocations: u64,
    pub messages: u64,
    pub bytes: u64,
    pub recv_messages: u64,
    pub recv_bytes: u64,
}

impl Add for Counters {
    type Output = Counters;
    fn add(self, o: Counters) -> Counters {
        Counters {
            calls: self.calls + o.calls,
            invocations: self.invocations + o.invocations,
            messages: self.messages + o.messages,
            bytes: self.bytes + o.bytes,
            recv_messages: self.recv_messages + o.recv_messages,
            recv_bytes: self.recv_bytes + o.recv_bytes,
        }
    }
}

impl AddAssign for Counters {
    fn add_assign(&mut self, o: Counters) {
        *self = *self + o;
    }
}

impl Sub for Counters {
    type Output = Counters;
    fn sub(self, o: Counters) -> Counters {
        Counters {
            calls: self.calls - o.calls,
            invocations: self.invocations - o.invocations,
            messages: self.messages - o.messages,
            bytes: self.bytes - o.bytes,
            recv_messages: self.recv_messages - o.recv_messages,
            recv_bytes: self.recv_bytes - o.recv_bytes,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StatEntry {
    category: Category,
    scope: Scope,
    #[serde(flatten)]
    counters: Counters,
}

/// Per-(category, scope) communication counters. Monotone while a run
/// progresses; snapshots can be differenced with [`CommStats::since`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "Vec<StatEntry>", from = "Vec<StatEntry>")]
pub struct CommStats {
    cells: BTreeMap<(Category, Scope), Counters>,
}

impl From<CommStats> for Vec<StatEntry> {
    fn from(s: CommStats) -> Self {
        s.cells
            .into_iter()
            .map(|((category, scope), counters)| StatEntry {
                category,
                scope,
                counters,
            })
            .collect()
    }
}

impl From<Vec<StatEntry>> for CommStats {
    fn from(v: Vec<StatEntry>) -> Self {
        let mut s = CommStats::default();
        for e in v {
            *s.cells.entry((e.category, e.scope)).or_default() += e.counters;
        }
        s
    }
}

impl CommStats {
    pub(crate) fn cell(&mut self, category: Category, scope: Scope) -> &mut Counters {
        self.cells.entry((category, scope)).or_default()
    }

    pub fn get(&self, category: Category, scope: Scope) -> Counters {
        self.cells.get(&(category, scope)).copied().unwrap_or_default()
    }

    pub fn category(&self, category: Category) -> Counters {
        self.cells
            .iter()
            .filter(|((c, _), _)| *c == category)
            .fold(Counters::default(), |acc, (_, v)| acc + *v)
    }

    pub fn scope(&self, scope: Scope) -> Counters {
        self.cells
            .iter()
            .filter(|((_, s), _)| *s == scope)
            .fold(Counters::default(), |acc, (_, v)| acc + *v)
    }

    pub fn total(&self) -> Counters {
        self.cells.values().fold(Counters::default(), |acc, v| acc + *v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Category, Scope, Counters)> + '_ {
        self.cells.iter().map(|(&(c, s), &v)| (c, s, v))
    }

    pub fn merge(&mut self, other: &CommStats) {
        for (k, v) in &other.cells {
            *self.cells.entry(*k).or_default() += *v;
        }
    }

    pub fn merged<'a>(all: impl IntoIterator<Item = &'a CommStats>) -> CommStats {
        let mut out = CommStats::default();
        for s in all {
            out.merge(s);
        }
        out
    }

    /// Counters accumulated after the `earlier` snapshot of the same rank.
    pub fn since(&self, earlier: &CommStats) -> CommStats {
        let mut out = CommStats::default();
        for (k, v) in &self.cells {
            let d = *v - earlier.cells.get(k).copied().unwrap_or_default();
            if d != Counters::default() {
                out.cells.insert(*k, d);
            }
        }
        out
    }
}
