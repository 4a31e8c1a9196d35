//! First columns of `L⁻¹` by in-place Gauss-Jordan row elimination, and the
//! top-left block of `H⁻¹ = L⁻ᵀ D⁻¹ L⁻¹`.
//!
//! Only the first `m` columns of `L⁻¹` are needed for an `m × m` block of
//! `H⁻¹`, so the elimination only keeps updating those columns. Entries are
//! held at the storage precision `K`; each update product is exact and
//! rounded once back to `K`.

use std::collections::HashMap;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rug::Integer;

use crate::error::{Error, Result};
use crate::fixedpoint::FixScalar;
use crate::ldlt::{assign_columns, ColumnAssignment, LdltFactors};

/// `L` redistributed by rows: `rows[r]` holds `L[r][0..r]`, and each row has
/// exactly one owning worker.
#[derive(Clone, Debug)]
pub struct RowDistributed {
    frac_bits: u32,
    d: Vec<FixScalar>,
    rows: Vec<Vec<FixScalar>>,
    row_owners: ColumnAssignment,
    column_owners: ColumnAssignment,
}

impl RowDistributed {
    pub fn order(&self) -> usize {
        self.rows.len()
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn d(&self) -> &[FixScalar] {
        &self.d
    }

    /// `L[r][0..r]`.
    pub fn row(&self, r: usize) -> &[FixScalar] {
        &self.rows[r]
    }

    pub fn row_owners(&self) -> &ColumnAssignment {
        &self.row_owners
    }

    /// Rows owned by `worker`, ascending.
    pub fn rows_of(&self, worker: usize) -> Vec<usize> {
        self.row_owners.owned_by(worker).collect()
    }

    /// Back to the column layout the factorization produced.
    pub fn into_columns(self) -> LdltFactors {
        let n = self.rows.len();
        let mut cols: Vec<Vec<FixScalar>> = (0..n).map(|c| Vec::with_capacity(n - c - 1)).collect();
        for row in self.rows {
            for (c, v) in row.into_iter().enumerate() {
                cols[c].push(v);
            }
        }
        LdltFactors::from_parts(self.frac_bits, self.d, cols, self.column_owners)
            .expect("row layout always holds a complete triangle")
    }
}

/// Moves the strictly-lower part of `L` from column ownership to row
/// ownership under a balanced round robin over `workers`. Values are moved,
/// never recomputed.
pub fn transpose_redistribute(factors: LdltFactors, workers: usize) -> Result<RowDistributed> {
    let n = factors.order();
    let row_owners = assign_columns(n, workers)?;
    let column_owners = factors.assignment().clone();
    let frac_bits = factors.frac_bits();
    let d = factors.d().to_vec();
    let mut rows: Vec<Vec<FixScalar>> = (0..n).map(Vec::with_capacity).collect();
    for c in 0..n {
        for (off, v) in factors.l_column(c).iter().enumerate() {
            rows[c + 1 + off].push(v.clone());
        }
    }
    Ok(RowDistributed { frac_bits, d, rows, row_owners, column_owners })
}

/// The first `m` columns of `L⁻¹`.
#[derive(Clone, Debug)]
pub struct PartialInverse {
    m: usize,
    frac_bits: u32,
    /// `rows[r]` holds `L⁻¹[r][0..min(m, r+1)]` (unit diagonal included).
    rows: Vec<Vec<FixScalar>>,
}

impl PartialInverse {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn order(&self) -> usize {
        self.rows.len()
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    /// `L⁻¹[r][c]` for `c < m`.
    pub fn get(&self, r: usize, c: usize) -> FixScalar {
        assert!(c < self.m, "column {c} not retained (m = {})", self.m);
        self.rows[r].get(c).cloned().unwrap_or_else(|| FixScalar::zero(self.frac_bits))
    }

    pub fn row(&self, r: usize) -> &[FixScalar] {
        &self.rows[r]
    }

    /// Bit-for-bit equality of the retained entries.
    pub fn values_eq(&self, other: &PartialInverse) -> bool {
        self.m == other.m
            && self.frac_bits == other.frac_bits
            && self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.mantissa() == y.mantissa())
            })
    }

    fn from_working_rows(mut rows: Vec<Vec<FixScalar>>, m: usize, frac_bits: u32) -> Self {
        for (r, row) in rows.iter_mut().enumerate() {
            row.truncate(m.min(r));
            if r < m {
                row.push(FixScalar::one(frac_bits));
            }
            row.shrink_to_fit();
        }
        Self { m, frac_bits, rows }
    }
}

fn check_m(m: usize, n: usize) -> Result<()> {
    if m == 0 || m > n {
        return Err(Error::InvalidInput(format!("retained columns m = {m} must lie in 1..={n}")));
    }
    Ok(())
}

/// Eliminates row `j` against the finished prefix of row `i`.
fn eliminate_row(row_j: &mut [FixScalar], i: usize, m: usize, prefix_i: &[FixScalar], scratch: &mut Integer) {
    let f = row_j[i].clone();
    if i < m {
        row_j[i] = -&f;
    }
    for (entry, pik) in row_j.iter_mut().zip(prefix_i) {
        entry.sub_product_assign(&f, pik, scratch);
    }
}

/// Sequential elimination producing the first `m` columns of `L⁻¹`.
pub fn invert_l_partial_serial(factors: &LdltFactors, m: usize) -> Result<PartialInverse> {
    let n = factors.order();
    check_m(m, n)?;
    let mut rows: Vec<Vec<FixScalar>> = (0..n).map(|r| (0..r).map(|c| factors.l(r, c)).collect()).collect();
    let mut scratch = Integer::new();
    for i in 0..n {
        let (head, tail) = rows.split_at_mut(i + 1);
        let prefix = &head[i][..m.min(i)];
        for row_j in tail.iter_mut() {
            eliminate_row(row_j, i, m, prefix, &mut scratch);
        }
    }
    Ok(PartialInverse::from_working_rows(rows, m, factors.frac_bits()))
}

/// Timing split of the parallel elimination, measured on worker 0.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InversionStats {
    pub arithmetic: Duration,
    pub communication: Duration,
    /// Largest number of entries in one broadcast row prefix.
    pub max_message_len: usize,
    pub messages: u64,
}

struct RowMsg {
    index: usize,
    prefix: Vec<FixScalar>,
}

struct RowWorker {
    id: usize,
    m: usize,
    owners: Vec<usize>,
    rows: Vec<Option<Vec<FixScalar>>>,
    inbox: Receiver<Arc<RowMsg>>,
    peers: Vec<Sender<Arc<RowMsg>>>,
    pending: HashMap<usize, Arc<RowMsg>>,
    stats: InversionStats,
}

impl RowWorker {
    fn run(mut self) -> Result<(Vec<(usize, Vec<FixScalar>)>, InversionStats)> {
        let n = self.owners.len();
        let mut scratch = Integer::new();
        for i in 0..n {
            let width = i.min(self.m);
            let prefix: Arc<RowMsg> = if self.owners[i] == self.id {
                let row = self.rows[i].as_ref().expect("owned row");
                let msg = Arc::new(RowMsg { index: i, prefix: row[..width].to_vec() });
                if width > 0 {
                    let t = Instant::now();
                    for p in &self.peers {
                        let _ = p.send(Arc::clone(&msg));
                    }
                    self.stats.communication += t.elapsed();
                    self.stats.messages += self.peers.len() as u64;
                    self.stats.max_message_len = self.stats.max_message_len.max(width);
                }
                msg
            } else if width > 0 {
                let t = Instant::now();
                let msg = loop {
                    if let Some(msg) = self.pending.remove(&i) {
                        break msg;
                    }
                    match self.inbox.recv() {
                        Ok(msg) => {
                            self.pending.insert(msg.index, msg);
                        }
                        Err(_) => return Err(Error::WorkerAborted(self.owners[i])),
                    }
                };
                self.stats.communication += t.elapsed();
                msg
            } else {
                Arc::new(RowMsg { index: i, prefix: Vec::new() })
            };

            let t = Instant::now();
            for j in i + 1..n {
                if let Some(row_j) = self.rows[j].as_mut() {
                    eliminate_row(row_j, i, self.m, &prefix.prefix, &mut scratch);
                }
            }
            self.stats.arithmetic += t.elapsed();
        }
        let out = self.rows.into_iter().enumerate().filter_map(|(r, row)| row.map(|row| (r, row))).collect();
        Ok((out, self.stats))
    }
}

/// Row-parallel elimination. The owner of row `i` broadcasts its first
/// `min(i, m)` entries; every worker then updates the rows it owns.
pub fn invert_l_partial_parallel(store: RowDistributed, m: usize) -> Result<(PartialInverse, InversionStats)> {
    let n = store.order();
    check_m(m, n)?;
    let frac_bits = store.frac_bits;
    let owners = store.row_owners.owners().to_vec();
    let nw = store.row_owners.workers();

    let (senders, receivers): (Vec<_>, Vec<_>) = (0..nw).map(|_| channel::<Arc<RowMsg>>()).unzip();
    let mut per_worker: Vec<Vec<Option<Vec<FixScalar>>>> = (0..nw).map(|_| vec![None; n]).collect();
    for (r, row) in store.rows.into_iter().enumerate() {
        per_worker[owners[r]][r] = Some(row);
    }
    let workers: Vec<RowWorker> = receivers
        .into_iter()
        .zip(per_worker)
        .enumerate()
        .map(|(id, (inbox, rows))| RowWorker {
            id,
            m,
            owners: owners.clone(),
            rows,
            inbox,
            peers: senders.iter().enumerate().filter(|(w, _)| *w != id).map(|(_, s)| s.clone()).collect(),
            pending: HashMap::new(),
            stats: InversionStats::default(),
        })
        .collect();
    drop(senders);

    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = workers.into_iter().map(|w| s.spawn(move || w.run())).collect();
        handles.into_iter().map(|h| h.join().expect("inversion worker panicked")).collect()
    });

    let mut rows: Vec<Vec<FixScalar>> = vec![Vec::new(); n];
    let mut host_stats = InversionStats::default();
    let mut max_len = 0;
    for (id, r) in results.into_iter().enumerate() {
        let (owned, stats) = r?;
        max_len = max_len.max(stats.max_message_len);
        if id == 0 {
            host_stats = stats;
        }
        for (idx, row) in owned {
            rows[idx] = row;
        }
    }
    host_stats.max_message_len = max_len;
    Ok((PartialInverse::from_working_rows(rows, m, frac_bits), host_stats))
}

/// The top-left `k × k` block of `H⁻¹` in binary64, plus the leading
/// `(k−1) × (k−1)` block used for truncation-error estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedInverse {
    k: usize,
    entries: Vec<f64>,
}

impl TruncatedInverse {
    /// Wraps a symmetric row-major `k × k` matrix.
    pub fn from_matrix(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        if k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidInput("block must be square and non-empty".into()));
        }
        for a in 0..k {
            for b in 0..a {
                if rows[a][b] != rows[b][a] {
                    return Err(Error::InvalidInput(format!("block not symmetric at ({a}, {b})")));
                }
            }
        }
        Ok(Self { k, entries: rows.iter().flatten().copied().collect() })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.entries[a * self.k + b]
    }

    /// Leading `size × size` principal block, row-major.
    pub fn leading(&self, size: usize) -> Vec<Vec<f64>> {
        assert!(size <= self.k);
        (0..size).map(|a| (0..size).map(|b| self.get(a, b)).collect()).collect()
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.leading(self.k)
    }

    /// The `(k−1) × (k−1)` block; empty when `k = 1`.
    pub fn minus_one(&self) -> Vec<Vec<f64>> {
        self.leading(self.k - 1)
    }
}

/// `(H⁻¹)_{ab} = Σ_l L⁻¹[l][a] · L⁻¹[l][b] / D[l]` for `a, b < k`, summed in
/// fixed point (one rounding per term) and cast to binary64.
pub fn assemble_truncated_inverse(linv: &PartialInverse, d: &[FixScalar], k: usize) -> Result<TruncatedInverse> {
    let n = linv.order();
    if k == 0 || k > linv.m() {
        return Err(Error::InvalidInput(format!("block size {k} must lie in 1..={}", linv.m())));
    }
    if d.len() != n {
        return Err(Error::InvalidInput("pivot count does not match L⁻¹".into()));
    }
    let frac = linv.frac_bits();
    let mut entries = vec![0.0; k * k];
    for a in 0..k {
        for b in a..k {
            let mut acc = FixScalar::zero(frac);
            for l in b..n {
                let prod = &linv.rows[l][a] * &linv.rows[l][b];
                acc = acc + prod.div(&d[l], frac)?;
            }
            let v = acc.to_f64();
            entries[a * k + b] = v;
            entries[b * k + a] = v;
        }
    }
    Ok(TruncatedInverse { k, entries })
}
