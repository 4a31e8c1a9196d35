//! Square-root-free Cholesky (`H = L D Lᵀ`) without pivoting.
//!
//! Both variants eliminate column by column. For column `i` the quotient
//! column `B_i = A_i / A_i[i]` is computed once, then every entry to the right
//! is updated with `A_j[k] -= A_i[j] · B_i[k]`. The elimination runs at the
//! working precision (twice the table's fractional bits); `D` and `L` are
//! rounded back to the table precision at the end.
//!
//! [`decompose_parallel`] distributes columns over workers in a balanced
//! round robin and publishes each finished column (plus a prefix of its
//! quotient column) to the other workers over channels. Every entry receives
//! the same sequence of updates in both variants, so their outputs are
//! bit-identical.

use std::collections::HashMap;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use rug::Integer;

use crate::error::{Error, Result};
use crate::fixedpoint::FixScalar;
use crate::moments::MomentTable;

/// Owner of each column (or row) under the balanced round robin: the first
/// `n` columns go to workers `0..n`, the next `n` to workers `n-1` down to
/// `0`, and so on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnAssignment {
    workers: usize,
    owner: Vec<usize>,
}

impl ColumnAssignment {
    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn order(&self) -> usize {
        self.owner.len()
    }

    /// Zero-based worker index owning column `col`.
    pub fn owner(&self, col: usize) -> usize {
        self.owner[col]
    }

    pub fn owners(&self) -> &[usize] {
        &self.owner
    }

    /// Columns owned by `worker`, ascending.
    pub fn owned_by(&self, worker: usize) -> impl Iterator<Item = usize> + '_ {
        self.owner.iter().enumerate().filter(move |(_, &w)| w == worker).map(|(c, _)| c)
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.workers];
        for &w in &self.owner {
            counts[w] += 1;
        }
        counts
    }
}

pub fn assign_columns(order: usize, workers: usize) -> Result<ColumnAssignment> {
    if order == 0 || workers == 0 {
        return Err(Error::InvalidInput(format!(
            "assignment needs at least one column and one worker (got {order} columns, {workers} workers)"
        )));
    }
    let period = 2 * workers;
    let owner = (0..order)
        .map(|c| {
            let r = c % period;
            if r < workers {
                r
            } else {
                period - 1 - r
            }
        })
        .collect();
    Ok(ColumnAssignment { workers, owner })
}

/// How much of a freshly computed quotient column the owner publishes.
///
/// The column is cut into chunks of `chunk_len` values. Chunks go out while
/// the owner still has at least `min_outstanding_mults` local multiplications
/// to overlap them with; each chunk in flight is modelled as consuming
/// `mults_per_chunk` of that work. Receivers compute whatever is not sent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BroadcastPolicy {
    pub chunk_len: usize,
    pub min_outstanding_mults: u64,
    pub mults_per_chunk: u64,
}

impl Default for BroadcastPolicy {
    fn default() -> Self {
        Self { chunk_len: 100, min_outstanding_mults: 8000, mults_per_chunk: 8000 }
    }
}

impl BroadcastPolicy {
    /// Length of the published prefix of a quotient column.
    pub fn prefix_len(&self, column_len: usize, remaining_mults: u64) -> usize {
        if self.chunk_len == 0 {
            return 0;
        }
        let mut sent = 0;
        let mut remaining = remaining_mults;
        while sent < column_len && remaining >= self.min_outstanding_mults {
            sent += self.chunk_len.min(column_len - sent);
            remaining = remaining.saturating_sub(self.mults_per_chunk);
        }
        sent
    }

    /// Sizes of the individual chunks that make up the published prefix.
    pub fn chunks(&self, column_len: usize, remaining_mults: u64) -> Vec<usize> {
        let total = self.prefix_len(column_len, remaining_mults);
        let mut out = Vec::new();
        let mut sent = 0;
        while sent < total {
            let c = self.chunk_len.min(total - sent);
            out.push(c);
            sent += c;
        }
        out
    }
}

/// Work-queue granularity for the threaded update loop:
/// `max(5, loop_iterations / (200 · threads))`.
pub fn chunk_size(loop_iterations: usize, threads: usize) -> usize {
    assert!(threads >= 1, "need at least one thread");
    (loop_iterations / (200 * threads)).max(5)
}

/// Counters and timers gathered during a factorization.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LdltStats {
    /// Number of `A_j[k] -= A_i[j] · B_i[k]` updates performed, all workers.
    pub updates: u64,
    /// Divisions producing quotient entries, all workers (recomputations
    /// included).
    pub divisions: u64,
    /// Quotient entries received from column owners.
    pub b_published: u64,
    /// Quotient entries receivers had to compute themselves.
    pub b_recomputed: u64,
    /// Column messages sent.
    pub messages: u64,
    /// Time the host worker spent sending and waiting on columns.
    pub comm: Duration,
}

impl LdltStats {
    fn merge(&mut self, other: &LdltStats) {
        self.updates += other.updates;
        self.divisions += other.divisions;
        self.b_published += other.b_published;
        self.b_recomputed += other.b_recomputed;
        self.messages += other.messages;
    }
}

/// `L` (unit lower triangular, strictly-lower part stored by column) and the
/// pivots `D`, at the storage precision.
#[derive(Clone, Debug)]
pub struct LdltFactors {
    frac_bits: u32,
    d: Vec<FixScalar>,
    l_columns: Vec<Vec<FixScalar>>,
    assignment: ColumnAssignment,
    stats: LdltStats,
}

impl LdltFactors {
    /// Assembles factors from raw parts. `l_columns[i]` holds `L[i+1..N][i]`.
    pub fn from_parts(
        frac_bits: u32,
        d: Vec<FixScalar>,
        l_columns: Vec<Vec<FixScalar>>,
        assignment: ColumnAssignment,
    ) -> Result<Self> {
        let n = d.len();
        if l_columns.len() != n || assignment.order() != n {
            return Err(Error::InvalidInput("factor dimensions disagree".into()));
        }
        for (i, col) in l_columns.iter().enumerate() {
            if col.len() != n - i - 1 {
                return Err(Error::InvalidInput(format!("L column {i} has wrong length")));
            }
        }
        Ok(Self { frac_bits, d, l_columns, assignment, stats: LdltStats::default() })
    }

    pub fn order(&self) -> usize {
        self.d.len()
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn d(&self) -> &[FixScalar] {
        &self.d
    }

    /// Strictly-lower entries of column `i`: `L[i+1][i] … L[N-1][i]`.
    pub fn l_column(&self, i: usize) -> &[FixScalar] {
        &self.l_columns[i]
    }

    /// `L[row][col]` including the implicit unit diagonal and zero upper part.
    pub fn l(&self, row: usize, col: usize) -> FixScalar {
        match row.cmp(&col) {
            std::cmp::Ordering::Less => FixScalar::zero(self.frac_bits),
            std::cmp::Ordering::Equal => FixScalar::one(self.frac_bits),
            std::cmp::Ordering::Greater => self.l_columns[col][row - col - 1].clone(),
        }
    }

    pub fn assignment(&self) -> &ColumnAssignment {
        &self.assignment
    }

    pub fn stats(&self) -> &LdltStats {
        &self.stats
    }

    /// True when `D` and `L` agree bit for bit (layout and statistics are
    /// ignored).
    pub fn values_eq(&self, other: &LdltFactors) -> bool {
        fn same(a: &[FixScalar], b: &[FixScalar]) -> bool {
            a.len() == b.len()
                && a.iter().zip(b).all(|(x, y)| x.frac_bits() == y.frac_bits() && x.mantissa() == y.mantissa())
        }
        self.frac_bits == other.frac_bits
            && same(&self.d, &other.d)
            && self.l_columns.len() == other.l_columns.len()
            && self.l_columns.iter().zip(&other.l_columns).all(|(a, b)| same(a, b))
    }
}

/// Applies column `i` (`a_i = A_i[i..]`, `b_i = B_i[i+1..]`) to column `j`
/// (`col = A_j[j..]`). Returns the number of updates.
fn apply_column(a_i: &[FixScalar], b_i: &[FixScalar], i: usize, col: &mut [FixScalar], j: usize, scratch: &mut Integer) -> u64 {
    let coef = &a_i[j - i];
    let b = &b_i[j - i - 1..];
    for (entry, bk) in col.iter_mut().zip(b) {
        entry.sub_product_assign(coef, bk, scratch);
    }
    col.len() as u64
}

fn quotient_column(a: &[FixScalar], from: usize, working_bits: u32) -> Result<Vec<FixScalar>> {
    let pivot = &a[0];
    a[1 + from..].iter().map(|x| x.div(pivot, working_bits)).collect()
}

fn check_pivot(pivot: &FixScalar, index: usize, frac_bits: u32) -> Result<()> {
    if pivot.is_positive() {
        Ok(())
    } else {
        Err(Error::NonPositivePivot { index, frac_bits })
    }
}

/// Single-threaded elimination.
pub fn decompose_serial(table: &MomentTable) -> Result<LdltFactors> {
    let n = table.order();
    let storage = table.frac_bits();
    let working = 2 * storage;
    let mut cols = table.lower_columns(working);
    let mut d = Vec::with_capacity(n);
    let mut l_columns = Vec::with_capacity(n);
    let mut stats = LdltStats::default();
    let mut scratch = Integer::new();

    for i in 0..n {
        let a_i = std::mem::take(&mut cols[i]);
        check_pivot(&a_i[0], i, storage)?;
        let b_i = quotient_column(&a_i, 0, working)?;
        stats.divisions += b_i.len() as u64;
        for (off, col) in cols[i + 1..].iter_mut().enumerate() {
            stats.updates += apply_column(&a_i, &b_i, i, col, i + 1 + off, &mut scratch);
        }
        d.push(a_i[0].truncate(storage));
        l_columns.push(b_i.iter().map(|x| x.truncate(storage)).collect());
    }

    Ok(LdltFactors { frac_bits: storage, d, l_columns, assignment: assign_columns(n, 1)?, stats })
}

/// Tuning knobs for [`decompose_parallel`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParallelConfig {
    /// Threads each worker uses for its update loop.
    pub threads_per_worker: usize,
    pub policy: BroadcastPolicy,
}

impl Default for ParallelConfig {
    fn default() -> Self {
        Self { threads_per_worker: 1, policy: BroadcastPolicy::default() }
    }
}

/// A finished column as seen by every worker: `A_i[i..]` and the published
/// prefix of `B_i`.
struct Published {
    index: usize,
    a: Vec<FixScalar>,
    b_prefix: Vec<FixScalar>,
}

enum Msg {
    Column(Arc<Published>),
    Abort(usize),
}

struct WorkerOutput {
    columns: Vec<(usize, FixScalar, Vec<FixScalar>)>,
    stats: LdltStats,
}

struct Worker<'a> {
    id: usize,
    order: usize,
    working: u32,
    storage: u32,
    assignment: &'a ColumnAssignment,
    config: ParallelConfig,
    /// Owned, not yet finished columns indexed by global column.
    columns: Vec<Option<Vec<FixScalar>>>,
    inbox: Receiver<Msg>,
    peers: Vec<Option<Sender<Msg>>>,
    pending: HashMap<usize, Arc<Published>>,
    stats: LdltStats,
    output: Vec<(usize, FixScalar, Vec<FixScalar>)>,
    pool: Option<rayon::ThreadPool>,
}

impl Worker<'_> {
    fn broadcast(&mut self, msg: impl Fn() -> Msg) {
        let t = Instant::now();
        for peer in self.peers.iter().flatten() {
            // A closed inbox means that peer already failed; its error wins.
            let _ = peer.send(msg());
        }
        self.stats.comm += t.elapsed();
    }

    fn receive(&mut self, index: usize) -> Result<Arc<Published>> {
        let t = Instant::now();
        let out = loop {
            if let Some(p) = self.pending.remove(&index) {
                break Ok(p);
            }
            match self.inbox.recv() {
                Ok(Msg::Column(p)) => {
                    self.pending.insert(p.index, p);
                }
                Ok(Msg::Abort(from)) => break Err(Error::WorkerAborted(from)),
                Err(_) => break Err(Error::WorkerAborted(self.assignment.owner(index))),
            }
        };
        self.stats.comm += t.elapsed();
        out
    }

    fn record(&mut self, index: usize, a: &[FixScalar], b: &[FixScalar]) {
        let storage = self.storage;
        self.output.push((index, a[0].truncate(storage), b.iter().map(|x| x.truncate(storage)).collect()));
    }

    /// Applies column `i` to every owned unfinished column `>= from`.
    fn eliminate(&mut self, a_i: &[FixScalar], b_i: &[FixScalar], i: usize, from: usize) {
        let order = self.order;
        let threads = self.config.threads_per_worker;
        let columns = &mut self.columns[from..];
        match &self.pool {
            None => {
                let mut scratch = Integer::new();
                for (off, slot) in columns.iter_mut().enumerate() {
                    if let Some(col) = slot {
                        self.stats.updates += apply_column(a_i, b_i, i, col, from + off, &mut scratch);
                    }
                }
            }
            Some(pool) => {
                // one flat list of (coefficient, quotient, target) triples, walked from the end
                let mut work: Vec<(&FixScalar, &FixScalar, &mut FixScalar)> = Vec::new();
                for (off, slot) in columns.iter_mut().enumerate() {
                    if let Some(col) = slot {
                        let j = from + off;
                        let coef = &a_i[j - i];
                        for (entry, bk) in col.iter_mut().zip(&b_i[j - i - 1..]) {
                            work.push((coef, bk, entry));
                        }
                    }
                }
                let total = work.len();
                let chunk = chunk_size(total, threads);
                pool.install(|| {
                    work.into_par_iter().rev().with_min_len(chunk).for_each_init(Integer::new, |scratch, (c, b, e)| {
                        e.sub_product_assign(c, b, scratch)
                    })
                });
                self.stats.updates += total as u64;
            }
        }
        debug_assert!(order >= from);
    }

    fn remaining_mults(&self, after: usize) -> u64 {
        (after + 1..self.order).filter(|&j| self.columns[j].is_some()).map(|j| (self.order - j) as u64).sum()
    }

    fn run(mut self, table: &MomentTable) -> Result<WorkerOutput> {
        let n = self.order;
        let working = self.working;

        // Every worker derives column 0 and its quotient from the moments.
        let a0 = table.lower_column(0, working);
        check_pivot(&a0[0], 0, self.storage)?;
        let b0 = quotient_column(&a0, 0, working)?;
        self.stats.divisions += b0.len() as u64;
        if self.assignment.owner(0) == self.id {
            self.record(0, &a0, &b0);
            self.columns[0] = None;
        }
        let mut a_cur = Arc::new(Published { index: 0, a: a0, b_prefix: Vec::new() });
        let mut b_cur: Arc<Vec<FixScalar>> = Arc::new(b0);

        for i in 0..n.saturating_sub(1) {
            let next = i + 1;
            if self.assignment.owner(next) == self.id {
                let mut col = self.columns[next].take().expect("owned column present");
                let mut scratch = Integer::new();
                self.stats.updates += apply_column(&a_cur.a, &b_cur, i, &mut col, next, &mut scratch);
                if let Err(e) = check_pivot(&col[0], next, self.storage) {
                    let id = self.id;
                    self.broadcast(|| Msg::Abort(id));
                    return Err(e);
                }
                let b_next = quotient_column(&col, 0, working)?;
                self.stats.divisions += b_next.len() as u64;
                let prefix = if self.peers.iter().flatten().next().is_some() {
                    self.config.policy.prefix_len(b_next.len(), self.remaining_mults(next))
                } else {
                    0
                };
                let published = Arc::new(Published { index: next, a: col, b_prefix: b_next[..prefix].to_vec() });
                self.broadcast(|| Msg::Column(Arc::clone(&published)));
                self.stats.messages += self.peers.iter().flatten().count() as u64;
                self.eliminate(&a_cur.a, &b_cur, i, next + 1);
                self.record(next, &published.a, &b_next);
                a_cur = published;
                b_cur = Arc::new(b_next);
            } else {
                self.eliminate(&a_cur.a, &b_cur, i, next);
                let published = self.receive(next)?;
                let have = published.b_prefix.len();
                let rest = quotient_column(&published.a, have, working)?;
                self.stats.b_published += have as u64;
                self.stats.b_recomputed += rest.len() as u64;
                self.stats.divisions += rest.len() as u64;
                let mut b_next = Vec::with_capacity(have + rest.len());
                b_next.extend(published.b_prefix.iter().cloned());
                b_next.extend(rest);
                a_cur = published;
                b_cur = Arc::new(b_next);
            }
        }
        Ok(WorkerOutput { columns: self.output, stats: self.stats })
    }
}

/// Worker-parallel elimination. Each worker owns the columns `assignment`
/// gives it and is the only one writing them; a finished column is published
/// to all workers before anyone starts the next iteration with it.
pub fn decompose_parallel(table: &MomentTable, assignment: &ColumnAssignment, config: &ParallelConfig) -> Result<LdltFactors> {
    let n = table.order();
    if assignment.order() != n {
        return Err(Error::InvalidInput(format!(
            "assignment covers {} columns but the matrix has order {n}",
            assignment.order()
        )));
    }
    if config.threads_per_worker == 0 {
        return Err(Error::InvalidInput("threads_per_worker must be at least 1".into()));
    }
    let storage = table.frac_bits();
    let working = 2 * storage;
    let nw = assignment.workers();

    let (senders, receivers): (Vec<_>, Vec<_>) = (0..nw).map(|_| channel::<Msg>()).unzip();

    let mut workers = Vec::with_capacity(nw);
    for (id, inbox) in receivers.into_iter().enumerate() {
        let mut columns: Vec<Option<Vec<FixScalar>>> = vec![None; n];
        for c in assignment.owned_by(id) {
            columns[c] = Some(table.lower_column(c, working));
        }
        let peers = senders.iter().enumerate().map(|(w, s)| (w != id).then(|| s.clone())).collect();
        let pool = if config.threads_per_worker > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.threads_per_worker)
                    .build()
                    .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        workers.push(Worker {
            id,
            order: n,
            working,
            storage,
            assignment,
            config: *config,
            columns,
            inbox,
            peers,
            pending: HashMap::new(),
            stats: LdltStats::default(),
            output: Vec::new(),
            pool,
        });
    }
    drop(senders);

    let results: Vec<Result<WorkerOutput>> = std::thread::scope(|s| {
        let handles: Vec<_> = workers.into_iter().map(|w| s.spawn(move || w.run(table))).collect();
        handles.into_iter().map(|h| h.join().expect("LDLT worker panicked")).collect()
    });

    let mut d: Vec<Option<FixScalar>> = vec![None; n];
    let mut l: Vec<Option<Vec<FixScalar>>> = vec![None; n];
    let mut stats = LdltStats::default();
    let mut first_err = None;
    for (id, r) in results.into_iter().enumerate() {
        match r {
            Ok(out) => {
                stats.merge(&out.stats);
                if id == 0 {
                    stats.comm = out.stats.comm;
                }
                for (c, dc, lc) in out.columns {
                    d[c] = Some(dc);
                    l[c] = Some(lc);
                }
            }
            // a pivot failure outranks the aborts it triggers elsewhere
            Err(e @ Error::NonPositivePivot { .. }) => first_err = Some(e),
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    Ok(LdltFactors {
        frac_bits: storage,
        d: d.into_iter().map(|x| x.expect("every pivot recorded")).collect(),
        l_columns: l.into_iter().map(|x| x.expect("every column recorded")).collect(),
        assignment: assignment.clone(),
        stats,
    })
}
