//! Distributed back-transformation `X = Q V`.
//!
//! Reflector slices live on grid rows (every rank of grid row `x` holds the
//! rows `i ≡ x mod P_x`), eigenvector columns are spread 1D over all ranks.
//! Reflectors are applied in blocks of `mblk`, from the last one down. For
//! each block, the `P_x` members of a column communicator gather the full
//! reflectors, then every rank updates its own columns.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dense::reflect_tail;
use crate::error::{Error, Result};
use crate::gridcomm::GridComm;
use crate::msgnet::{Category, Comm, PendingSend};
use crate::sept::EigenPairsLocal;
use crate::trd::{slice_rows, LocalFactors};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gather {
    /// One broadcast per slice owner per reflector.
    PerVectorBcast,
    /// Owners post non-blocking sends to every other member per reflector.
    NonBlockingSend,
    /// One broadcast per slice owner per block, carrying all its slices.
    BlockBcast,
}

impl Gather {
    pub const ALL: [Gather; 3] = [Gather::PerVectorBcast, Gather::NonBlockingSend, Gather::BlockBcast];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitVariant {
    pub gather: Gather,
    pub mblk: usize,
}

impl Default for HitVariant {
    fn default() -> Self {
        HitVariant {
            gather: Gather::BlockBcast,
            mblk: 128,
        }
    }
}

impl HitVariant {
    pub fn validate(&self) -> Result<()> {
        if self.mblk == 0 {
            return Err(Error::Config("blocking factor mblk must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct HitTimings {
    /// Gather, including packing and unpacking.
    pub send_piv: f64,
    /// Reflector application.
    pub hit_ker: f64,
    pub other: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HitOutput {
    /// Owned global column indices (0-based).
    pub indices: Vec<usize>,
    pub columns: Vec<Vec<f64>>,
    pub timings: HitTimings,
}

const HEADER: usize = 3;

fn pack(out: &mut Vec<f64>, f: &LocalFactors, k: usize) {
    out.extend([k as f64, f.my_x as f64, f.v[k].len() as f64]);
    out.extend_from_slice(&f.v[k]);
}

/// Unpacks consecutive `(k, owner, len, slice)` records sent by `root`
/// into the full reflectors of the block starting at `lo`.
fn unpack(buf: &[f64], root: usize, me: usize, n: usize, p_x: usize, lo: usize, full: &mut [Vec<f64>]) -> Result<usize> {
    let mut pos = 0;
    let mut records = 0;
    while pos < buf.len() {
        if buf.len() - pos < HEADER {
            return Err(Error::Protocol("truncated reflector header".into()));
        }
        let (k, owner, len) = (buf[pos] as usize, buf[pos + 1] as usize, buf[pos + 2] as usize);
        if owner != root || owner == me || k < lo || k >= lo + full.len() {
            return Err(Error::Protocol(format!(
                "reflector slice (k={k}, owner={owner}) delivered from {root} to {me}"
            )));
        }
        let body = buf
            .get(pos + HEADER..pos + HEADER + len)
            .ok_or_else(|| Error::Protocol("truncated reflector slice".into()))?;
        let rows: Vec<usize> = slice_rows(n, p_x, owner, k).collect();
        if rows.len() != len {
            return Err(Error::Protocol(format!("slice of reflector {k} has {len} rows, expected {}", rows.len())));
        }
        for (i, &x) in rows.iter().zip(body) {
            full[k - lo][i - k - 1] = x;
        }
        pos += HEADER + len;
        records += 1;
    }
    Ok(records)
}

fn gather_block(col: &mut Comm, f: &LocalFactors, gather: Gather, lo: usize, hi: usize) -> Result<Vec<Vec<f64>>> {
    let (n, px, me) = (f.n, f.p_x, f.my_x);
    let mut full: Vec<Vec<f64>> = (lo..hi).map(|k| vec![0.0; n - k - 1]).collect();
    for k in lo..hi {
        for (i, &x) in f.slice_rows(k).zip(&f.v[k]) {
            full[k - lo][i - k - 1] = x;
        }
    }
    let _c = col.category_scope(Category::GatherHit);
    match gather {
        Gather::PerVectorBcast => {
            for k in (lo..hi).rev() {
                for root in 0..px {
                    let mut buf = Vec::new();
                    if root == me {
                        pack(&mut buf, f, k);
                    }
                    let got = col.bcast(root, &buf)?;
                    if root != me {
                        unpack(&got, root, me, n, px, lo, &mut full)?;
                    }
                }
            }
        }
        Gather::NonBlockingSend => {
            let mut pending: Vec<PendingSend> = Vec::new();
            for k in (lo..hi).rev() {
                let mut buf = Vec::new();
                pack(&mut buf, f, k);
                for dest in (0..px).filter(|&d| d != me) {
                    pending.push(col.isend(dest, k as u64, &buf)?);
                }
                for src in (0..px).filter(|&s| s != me) {
                    let got = col.recv(src, k as u64)?;
                    unpack(&got, src, me, n, px, lo, &mut full)?;
                }
            }
            for h in pending {
                col.wait(h)?;
            }
        }
        Gather::BlockBcast => {
            for root in 0..px {
                let mut buf = Vec::new();
                if root == me {
                    for k in (lo..hi).rev() {
                        pack(&mut buf, f, k);
                    }
                }
                let got = col.bcast(root, &buf)?;
                if root != me && unpack(&got, root, me, n, px, lo, &mut full)? != hi - lo {
                    return Err(Error::Protocol(format!("block {lo}..{hi} from {root} is incomplete")));
                }
            }
        }
    }
    Ok(full)
}

/// Collective over the grid: applies every reflector to this rank's
/// eigenvector columns.
pub fn hit_distributed(
    gc: &mut GridComm,
    factors: &LocalFactors,
    pairs: &EigenPairsLocal,
    variant: &HitVariant,
) -> Result<HitOutput> {
    variant.validate()?;
    let n = factors.n;
    if pairs.n != n || factors.p_x != gc.grid.p_x || factors.my_x != gc.grid.my_x {
        return Err(Error::Protocol(format!(
            "reflectors of order {n} on grid row {} of {} do not match eigenvectors of order {} on rank ({}, {})",
            factors.my_x, factors.p_x, pairs.n, gc.grid.my_x, gc.grid.my_y
        )));
    }
    if let Some(c) = pairs.vectors.iter().find(|c| c.len() != n) {
        return Err(Error::Dimension(format!("eigenvector of length {} for order {n}", c.len())));
    }
    let mut t = HitTimings::default();
    let mut clock = Instant::now();
    let mut columns = pairs.vectors.clone();
    let steps = factors.tau.len();
    let mut hi = steps;
    while hi > 0 {
        let lo = hi.saturating_sub(variant.mblk);
        let full = gather_block(&mut gc.col, factors, variant.gather, lo, hi)?;
        let now = Instant::now();
        t.send_piv += (now - clock).as_secs_f64();
        clock = now;
        for k in (lo..hi).rev() {
            let tau = factors.tau[k];
            if tau == 0.0 {
                continue;
            }
            for x in columns.iter_mut() {
                reflect_tail(tau, &full[k - lo], &mut x[k + 1..]);
            }
        }
        let now = Instant::now();
        t.hit_ker += (now - clock).as_secs_f64();
        clock = now;
        hi = lo;
    }
    Ok(HitOutput {
        indices: pairs.indices.clone(),
        columns,
        timings: t,
    })
}
