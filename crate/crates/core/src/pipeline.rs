//! End-to-end driver: moments, LDLT, transpose, partial `L⁻¹`, truncated
//! `H⁻¹`, eigensolve. Also the precision search, N-scans and fit reports.

use std::io::{Read, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::asymptotics::{fit_leading_exponent, plot_table, FitResult};
use crate::eigen::{smallest_eigs_of_h, SmallestEigResult};
use crate::error::{Error, Result};
use crate::inversion::{assemble_truncated_inverse, invert_l_partial_parallel, transpose_redistribute, PartialInverse};
use crate::ldlt::{assign_columns, decompose_parallel, LdltFactors, ParallelConfig};
use crate::moments::{build_hankel, WeightSpec};

pub const DEFAULT_BLOCK: usize = 8;
pub const REPORTED_EIGENVALUES: usize = 3;

/// CSV column order of [`RunRecord`].
pub const CSV_HEADER: &str = "N,beta,bits,k,workers,lambda1,trunc1,lambda2,trunc2,lambda3,trunc3,required_bits,wall_s,ldlt_s,transpose_s,invL_s,invL_arith_s,invL_comm_s,invH_s,eigen_s";

/// One pipeline run. Eigenvalue fields are empty when the run failed or
/// the block is too small to report them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    #[serde(rename = "N")]
    pub n: usize,
    pub beta: String,
    pub bits: u32,
    pub k: usize,
    pub workers: usize,
    pub lambda1: Option<f64>,
    pub trunc1: Option<f64>,
    pub lambda2: Option<f64>,
    pub trunc2: Option<f64>,
    pub lambda3: Option<f64>,
    pub trunc3: Option<f64>,
    pub required_bits: Option<u32>,
    pub wall_s: f64,
    pub ldlt_s: f64,
    pub transpose_s: f64,
    #[serde(rename = "invL_s")]
    pub inv_l_s: f64,
    #[serde(rename = "invL_arith_s")]
    pub inv_l_arith_s: f64,
    #[serde(rename = "invL_comm_s")]
    pub inv_l_comm_s: f64,
    #[serde(rename = "invH_s")]
    pub inv_h_s: f64,
    pub eigen_s: f64,
}

impl RunRecord {
    pub fn lambdas(&self) -> Vec<f64> {
        [self.lambda1, self.lambda2, self.lambda3].into_iter().flatten().collect()
    }

    pub fn truncation_errors(&self) -> Vec<f64> {
        [self.trunc1, self.trunc2, self.trunc3].into_iter().flatten().collect()
    }

    /// Numeric fields only; timings are ignored.
    pub fn same_values(&self, other: &RunRecord) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        self.n == other.n
            && self.beta == other.beta
            && self.bits == other.bits
            && self.k == other.k
            && bits(&self.lambdas()) == bits(&other.lambdas())
            && bits(&self.truncation_errors()) == bits(&other.truncation_errors())
    }
}

/// Parameters of a single run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ComputeParams {
    pub n: usize,
    pub spec: WeightSpec,
    pub bits: u32,
    /// Block size of the truncated inverse; clamped to `n`.
    pub k: usize,
    pub workers: usize,
    pub ldlt: ParallelConfig,
}

impl ComputeParams {
    pub fn new(n: usize, bits: u32) -> Self {
        Self { n, spec: WeightSpec::critical(), bits, k: DEFAULT_BLOCK, workers: 1, ldlt: ParallelConfig::default() }
    }

    pub fn with_spec(mut self, spec: WeightSpec) -> Self {
        self.spec = spec;
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidInput("N must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidInput("block size k must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidInput("at least one worker is required".into()));
        }
        Ok(())
    }
}

/// Intermediate results kept alongside the record when requested.
#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub record: RunRecord,
    /// Present only when `keep_factors` was set.
    pub factors: Option<LdltFactors>,
    pub l_inverse: PartialInverse,
    pub eigen: SmallestEigResult,
}

/// Runs the whole pipeline. With `keep_factors` a copy of `L` and `D` is
/// retained, which doubles peak memory.
pub fn run_pipeline(params: &ComputeParams, keep_factors: bool) -> Result<PipelineOutput> {
    params.validate()?;
    let wall = Instant::now();
    let k = params.k.min(params.n);
    let table = build_hankel(params.spec, params.n, params.bits)?;

    let t = Instant::now();
    let assignment = assign_columns(params.n, params.workers)?;
    let factors = decompose_parallel(&table, &assignment, &params.ldlt)?;
    drop(table);
    let ldlt_s = t.elapsed().as_secs_f64();
    let kept = keep_factors.then(|| factors.clone());
    let d = factors.d().to_vec();

    let t = Instant::now();
    let rows = transpose_redistribute(factors, params.workers)?;
    let transpose_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let (l_inverse, inv_stats) = invert_l_partial_parallel(rows, k)?;
    let inv_l_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let block = assemble_truncated_inverse(&l_inverse, &d, k)?;
    let inv_h_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let eigen = smallest_eigs_of_h(&block, REPORTED_EIGENVALUES)?;
    let eigen_s = t.elapsed().as_secs_f64();

    let at = |v: &[f64], i: usize| v.get(i).copied();
    let record = RunRecord {
        n: params.n,
        beta: params.spec.to_string(),
        bits: params.bits,
        k,
        workers: params.workers,
        lambda1: at(&eigen.lambda, 0),
        trunc1: at(&eigen.trunc_err, 0),
        lambda2: at(&eigen.lambda, 1),
        trunc2: at(&eigen.trunc_err, 1),
        lambda3: at(&eigen.lambda, 2),
        trunc3: at(&eigen.trunc_err, 2),
        required_bits: None,
        wall_s: wall.elapsed().as_secs_f64(),
        ldlt_s,
        transpose_s,
        inv_l_s,
        inv_l_arith_s: inv_stats.arithmetic.as_secs_f64(),
        inv_l_comm_s: inv_stats.communication.as_secs_f64(),
        inv_h_s,
        eigen_s,
    };
    Ok(PipelineOutput { record, factors: kept, l_inverse, eigen })
}

/// Smallest eigenvalues of `H_N` at a fixed precision.
pub fn compute(params: &ComputeParams) -> Result<RunRecord> {
    Ok(run_pipeline(params, false)?.record)
}

/// Search settings for [`auto_precision`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrecisionSearch {
    /// First precision tried; `None` means `1024 · ⌈N/500⌉`.
    pub start_bits: Option<u32>,
    pub step_bits: u32,
    pub max_bits: u32,
    /// Largest accepted `|λ₁(K) − λ₁(K + step)|`.
    pub tolerance: f64,
}

impl Default for PrecisionSearch {
    fn default() -> Self {
        Self { start_bits: None, step_bits: 1024, max_bits: 16384, tolerance: 1e-15 }
    }
}

impl PrecisionSearch {
    pub fn initial_bits(&self, n: usize) -> u32 {
        self.start_bits.unwrap_or_else(|| self.step_bits * n.div_ceil(500).max(1) as u32)
    }
}

/// One precision tried during the search.
#[derive(Clone, Debug, PartialEq)]
pub struct PrecisionAttempt {
    pub bits: u32,
    /// `None` when the run ran out of precision.
    pub lambda1: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct PrecisionOutcome {
    pub required_bits: u32,
    /// The run at `required_bits`, with `required_bits` filled in.
    pub record: RunRecord,
    pub attempts: Vec<PrecisionAttempt>,
}

/// Smallest `K` on the search grid whose `λ₁` agrees with the run at
/// `K + step` within the tolerance.
pub fn auto_precision(params: &ComputeParams, search: &PrecisionSearch) -> Result<PrecisionOutcome> {
    if search.step_bits == 0 {
        return Err(Error::InvalidInput("precision step must be positive".into()));
    }
    let mut attempts = Vec::new();
    let run = |bits: u32, attempts: &mut Vec<PrecisionAttempt>| -> Result<Option<RunRecord>> {
        match compute(&ComputeParams { bits, ..*params }) {
            Ok(r) => {
                attempts.push(PrecisionAttempt { bits, lambda1: r.lambda1 });
                Ok(Some(r))
            }
            Err(e) if e.is_precision_exhausted() => {
                attempts.push(PrecisionAttempt { bits, lambda1: None });
                Ok(None)
            }
            Err(e) => Err(e),
        }
    };

    let mut bits = search.initial_bits(params.n);
    let mut current = if bits <= search.max_bits { run(bits, &mut attempts)? } else { None };
    while bits + search.step_bits <= search.max_bits {
        let next_bits = bits + search.step_bits;
        let next = run(next_bits, &mut attempts)?;
        if let (Some(cur), Some(nxt)) = (&current, &next) {
            let (a, b) = (cur.lambda1.unwrap_or(f64::NAN), nxt.lambda1.unwrap_or(f64::NAN));
            if (a - b).abs() <= search.tolerance {
                let mut record = cur.clone();
                record.required_bits = Some(bits);
                return Ok(PrecisionOutcome { required_bits: bits, record, attempts });
            }
        }
        bits = next_bits;
        current = next;
    }
    Err(Error::PrecisionNotConverged { max_bits: search.max_bits })
}

/// How each scan row chooses its precision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Precision {
    Fixed(u32),
    Auto(PrecisionSearch),
}

/// One scan row: the record, plus the error message when the run failed.
#[derive(Clone, Debug)]
pub struct ScanRow {
    pub record: RunRecord,
    pub error: Option<String>,
}

/// Runs every order in `n_list` in the given order. Failures are recorded and
/// the scan continues.
pub fn scan(n_list: &[usize], template: &ComputeParams, precision: Precision) -> Vec<ScanRow> {
    n_list
        .iter()
        .map(|&n| {
            let params = ComputeParams { n, ..*template };
            let result = match precision {
                Precision::Fixed(bits) => compute(&ComputeParams { bits, ..params }),
                Precision::Auto(search) => auto_precision(&params, &search).map(|o| o.record),
            };
            match result {
                Ok(record) => ScanRow { record, error: None },
                Err(e) => {
                    let bits = match precision {
                        Precision::Fixed(bits) => bits,
                        Precision::Auto(search) => search.initial_bits(n),
                    };
                    let record = RunRecord {
                        n,
                        beta: template.spec.to_string(),
                        bits,
                        k: template.k.min(n),
                        workers: template.workers,
                        ..RunRecord::default()
                    };
                    ScanRow { record, error: Some(e.to_string()) }
                }
            }
        })
        .collect()
}

/// Writes records as CSV with the fixed header. An empty slice writes the
/// header alone.
pub fn write_csv<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// `(N, λ₁)` pairs from any CSV with `N` and `lambda1` columns. Rows with an
/// empty `lambda1` (failed runs) are skipped.
pub fn read_fit_points<R: Read>(input: R) -> Result<Vec<(usize, f64)>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let (n_col, l_col) = (col("N")?, col("lambda1")?);
    let mut points = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim().to_owned();
        let l = field(l_col);
        if l.is_empty() {
            continue;
        }
        let n = field(n_col)
            .parse::<usize>()
            .map_err(|e| Error::Schema(format!("row {}: bad N: {e}", line + 1)))?;
        let l = l.parse::<f64>().map_err(|e| Error::Schema(format!("row {}: bad lambda1: {e}", line + 1)))?;
        points.push((n, l));
    }
    Ok(points)
}

/// Fit and plot table for a scan.
#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub points: Vec<(usize, f64)>,
    pub fit: FitResult,
    #[serde(skip)]
    pub plot: String,
}

pub fn report<R: Read>(scan_csv: R) -> Result<Report> {
    let points = read_fit_points(scan_csv)?;
    let fit = fit_leading_exponent(&points)?;
    let plot = plot_table(&points);
    Ok(Report { points, fit, plot })
}
