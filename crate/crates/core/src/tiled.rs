//! Functional simulator of a hierarchically tiled GEMM.
//!
//! The output is split into threadblock tiles, each threadblock tile into
//! warp tiles, and each warp tile into `Mt x Nt` thread tiles. A thread walks
//! the K dimension `k_step` columns at a time; one step multiplies an
//! `Mt x k_step` chunk of its `At` by a `k_step x Nt` chunk of its `Bt`, which
//! counts as `Mt*Nt/2` MMAs (one per pair of rows of `At` and column of `Bt`).
//!
//! Thread-level schemes only ever look at the chunks the base loop already
//! loaded for the current step. Global ABFT instead checks the full GEMM once
//! all tiles are done.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checksum::{checksum_dot, column_checksum, row_checksum, Verdict};
use crate::error::{AbftError, Result};
use crate::matrix::Matrix;
use crate::numeric::{Element, ToleranceMode};
use crate::shapes::GemmShape;

/// Registers a single-accumulator replicated MMA folds into.
pub const DEFAULT_FOLD_WIDTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TilingConfig {
    pub tb_m: usize,
    pub tb_n: usize,
    pub warp_m: usize,
    pub warp_n: usize,
    pub thread_m: usize,
    pub thread_n: usize,
    pub k_step: usize,
}

impl Default for TilingConfig {
    fn default() -> Self {
        TilingConfig { tb_m: 128, tb_n: 128, warp_m: 64, warp_n: 64, thread_m: 16, thread_n: 8, k_step: 2 }
    }
}

impl TilingConfig {
    pub fn new(
        tb: (usize, usize),
        warp: (usize, usize),
        thread: (usize, usize),
        k_step: usize,
    ) -> Result<Self> {
        let t = TilingConfig {
            tb_m: tb.0,
            tb_n: tb.1,
            warp_m: warp.0,
            warp_n: warp.1,
            thread_m: thread.0,
            thread_n: thread.1,
            k_step,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.tb_m, self.tb_n, self.warp_m, self.warp_n, self.thread_m, self.thread_n, self.k_step];
        if dims.contains(&0) {
            return Err(AbftError::InvalidTiling(format!("all tile sizes must be positive: {self}")));
        }
        if !self.tb_m.is_multiple_of(self.warp_m) || !self.tb_n.is_multiple_of(self.warp_n) {
            return Err(AbftError::InvalidTiling(format!("threadblock tile not divisible by warp tile: {self}")));
        }
        if !self.warp_m.is_multiple_of(self.thread_m) || !self.warp_n.is_multiple_of(self.thread_n) {
            return Err(AbftError::InvalidTiling(format!("warp tile not divisible by thread tile: {self}")));
        }
        if !self.thread_m.is_multiple_of(2) {
            return Err(AbftError::InvalidTiling(format!(
                "thread tile rows must be even (each MMA consumes two rows): {self}"
            )));
        }
        Ok(())
    }

    /// Smallest shape at least as large as `shape` that this tiling covers.
    pub fn padded_shape(&self, shape: GemmShape) -> GemmShape {
        GemmShape {
            m: shape.m.div_ceil(self.tb_m) * self.tb_m,
            n: shape.n.div_ceil(self.tb_n) * self.tb_n,
            k: shape.k.div_ceil(self.k_step) * self.k_step,
        }
    }

    pub fn check_divides(&self, shape: GemmShape) -> Result<()> {
        self.validate()?;
        if !shape.m.is_multiple_of(self.tb_m) || !shape.n.is_multiple_of(self.tb_n) || !shape.k.is_multiple_of(self.k_step) {
            return Err(AbftError::InvalidTiling(format!("{self} does not divide GEMM {shape}")));
        }
        Ok(())
    }

    /// Thread tiles along m and n.
    pub fn thread_grid(&self, padded: GemmShape) -> (usize, usize) {
        (padded.m / self.thread_m, padded.n / self.thread_n)
    }

    pub fn steps(&self, padded: GemmShape) -> usize {
        padded.k / self.k_step
    }

    /// All thread coordinates in sorted order.
    pub fn threads(&self, padded: GemmShape) -> Vec<ThreadCoord> {
        let mut out = Vec::with_capacity((padded.m / self.thread_m) * (padded.n / self.thread_n));
        for block_row in 0..padded.m / self.tb_m {
            for block_col in 0..padded.n / self.tb_n {
                for warp_row in 0..self.tb_m / self.warp_m {
                    for warp_col in 0..self.tb_n / self.warp_n {
                        for thread_row in 0..self.warp_m / self.thread_m {
                            for thread_col in 0..self.warp_n / self.thread_n {
                                out.push(ThreadCoord { block_row, block_col, warp_row, warp_col, thread_row, thread_col });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Top-left output coordinate owned by `t`.
    pub fn tile_origin(&self, t: ThreadCoord) -> (usize, usize) {
        (
            t.block_row * self.tb_m + t.warp_row * self.warp_m + t.thread_row * self.thread_m,
            t.block_col * self.tb_n + t.warp_col * self.warp_n + t.thread_col * self.thread_n,
        )
    }

    /// Thread owning output element (`row`, `col`).
    pub fn thread_of(&self, row: usize, col: usize) -> ThreadCoord {
        let (rb, cb) = (row % self.tb_m, col % self.tb_n);
        ThreadCoord {
            block_row: row / self.tb_m,
            block_col: col / self.tb_n,
            warp_row: rb / self.warp_m,
            warp_col: cb / self.warp_n,
            thread_row: (rb % self.warp_m) / self.thread_m,
            thread_col: (cb % self.warp_n) / self.thread_n,
        }
    }

    fn contains_thread(&self, padded: GemmShape, t: ThreadCoord) -> bool {
        t.block_row < padded.m / self.tb_m
            && t.block_col < padded.n / self.tb_n
            && t.warp_row < self.tb_m / self.warp_m
            && t.warp_col < self.tb_n / self.warp_n
            && t.thread_row < self.warp_m / self.thread_m
            && t.thread_col < self.warp_n / self.thread_n
    }

    /// Small random valid tiling, for sweeps over many configurations.
    pub fn random_small<R: Rng + ?Sized>(rng: &mut R) -> TilingConfig {
        let thread_m = [2, 4, 8, 16][rng.random_range(0..4)];
        let thread_n = [1, 2, 4, 8][rng.random_range(0..4)];
        let warp_m = thread_m * rng.random_range(1..=2);
        let warp_n = thread_n * rng.random_range(1..=2);
        TilingConfig {
            tb_m: warp_m * rng.random_range(1..=2),
            tb_n: warp_n * rng.random_range(1..=2),
            warp_m,
            warp_n,
            thread_m,
            thread_n,
            k_step: [1, 2, 4][rng.random_range(0..3)],
        }
    }
}

impl fmt::Display for TilingConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tb {}x{} / warp {}x{} / thread {}x{} / k_step {}",
            self.tb_m, self.tb_n, self.warp_m, self.warp_n, self.thread_m, self.thread_n, self.k_step
        )
    }
}

impl std::str::FromStr for TilingConfig {
    type Err = AbftError;

    /// `tb_m,tb_n,warp_m,warp_n,thread_m,thread_n,k_step`
    fn from_str(s: &str) -> Result<Self> {
        let v = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| AbftError::InvalidTiling(format!("`{s}`: {e}")))?;
        let [tb_m, tb_n, warp_m, warp_n, thread_m, thread_n, k_step] = v[..] else {
            return Err(AbftError::InvalidTiling(format!("`{s}`: expected 7 comma-separated sizes")));
        };
        TilingConfig::new((tb_m, tb_n), (warp_m, warp_n), (thread_m, thread_n), k_step)
    }
}

/// Position of one thread in the block / warp / thread hierarchy. Ordering is
/// lexicographic in field order, which is also the enumeration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ThreadCoord {
    pub block_row: usize,
    pub block_col: usize,
    pub warp_row: usize,
    pub warp_col: usize,
    pub thread_row: usize,
    pub thread_col: usize,
}

impl fmt::Display for ThreadCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "block({},{}) warp({},{}) thread({},{})",
            self.block_row, self.block_col, self.warp_row, self.warp_col, self.thread_row, self.thread_col
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Unprotected,
    GlobalAbft,
    ThreadOneSided,
    ThreadTwoSided,
    ThreadReplicationFull,
    ThreadReplicationSingleAcc,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::Unprotected,
        Scheme::GlobalAbft,
        Scheme::ThreadOneSided,
        Scheme::ThreadTwoSided,
        Scheme::ThreadReplicationFull,
        Scheme::ThreadReplicationSingleAcc,
    ];

    pub const PROTECTED: [Scheme; 5] = [
        Scheme::GlobalAbft,
        Scheme::ThreadOneSided,
        Scheme::ThreadTwoSided,
        Scheme::ThreadReplicationFull,
        Scheme::ThreadReplicationSingleAcc,
    ];

    pub fn is_thread_level(self) -> bool {
        !matches!(self, Scheme::Unprotected | Scheme::GlobalAbft)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Unprotected => "unprotected",
            Scheme::GlobalAbft => "global-abft",
            Scheme::ThreadOneSided => "thread-one-sided",
            Scheme::ThreadTwoSided => "thread-two-sided",
            Scheme::ThreadReplicationFull => "thread-replication-full",
            Scheme::ThreadReplicationSingleAcc => "thread-replication-single-acc",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scheme {
    type Err = AbftError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "unprotected" | "none" => Scheme::Unprotected,
            "global-abft" | "global" => Scheme::GlobalAbft,
            "thread-one-sided" | "one-sided" => Scheme::ThreadOneSided,
            "thread-two-sided" | "two-sided" => Scheme::ThreadTwoSided,
            "thread-replication-full" | "replication-full" | "replication" => Scheme::ThreadReplicationFull,
            "thread-replication-single-acc" | "replication-single-acc" => Scheme::ThreadReplicationSingleAcc,
            other => return Err(AbftError::Validation(format!("unknown scheme `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum FaultSite {
    /// Output element of `C`, corrupted in the owning thread's registers
    /// after its K loop finishes.
    OutputElement { row: usize, col: usize },
    /// One MMA of `thread` at K step `step` adds a wrong contribution to the
    /// thread-local output (`local_row`, `local_col`).
    ThreadMma { thread: ThreadCoord, step: usize, local_row: usize, local_col: usize },
}

impl FaultSite {
    /// Uniformly random site inside the logical (unpadded) output.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, logical: GemmShape, tiling: &TilingConfig) -> FaultSite {
        let row = rng.random_range(0..logical.m);
        let col = rng.random_range(0..logical.n);
        Self::random_at(rng, row, col, logical, tiling)
    }

    /// Random site kind targeting output (`row`, `col`).
    pub fn random_at<R: Rng + ?Sized>(
        rng: &mut R,
        row: usize,
        col: usize,
        logical: GemmShape,
        tiling: &TilingConfig,
    ) -> FaultSite {
        if rng.random_bool(0.5) {
            FaultSite::OutputElement { row, col }
        } else {
            let thread = tiling.thread_of(row, col);
            let (r0, c0) = tiling.tile_origin(thread);
            let steps = tiling.steps(tiling.padded_shape(logical));
            FaultSite::ThreadMma { thread, step: rng.random_range(0..steps), local_row: row - r0, local_col: col - c0 }
        }
    }

    /// Global output coordinate the fault lands on.
    pub fn output_position(&self, tiling: &TilingConfig) -> (usize, usize) {
        match *self {
            FaultSite::OutputElement { row, col } => (row, col),
            FaultSite::ThreadMma { thread, local_row, local_col, .. } => {
                let (r0, c0) = tiling.tile_origin(thread);
                (r0 + local_row, c0 + local_col)
            }
        }
    }

    pub fn thread(&self, tiling: &TilingConfig) -> ThreadCoord {
        match *self {
            FaultSite::OutputElement { row, col } => tiling.thread_of(row, col),
            FaultSite::ThreadMma { thread, .. } => thread,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub site: FaultSite,
    pub delta: f64,
}

impl FaultSpec {
    pub fn output_element(row: usize, col: usize, delta: f64) -> Self {
        FaultSpec { site: FaultSite::OutputElement { row, col }, delta }
    }

    pub fn thread_mma(thread: ThreadCoord, step: usize, local_row: usize, local_col: usize, delta: f64) -> Self {
        FaultSpec { site: FaultSite::ThreadMma { thread, step, local_row, local_col }, delta }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OpCounts {
    pub base_mma_count: u64,
    pub redundant_mma_count: u64,
    pub checksum_op_count: u64,
}

impl Add for OpCounts {
    type Output = OpCounts;

    fn add(self, o: OpCounts) -> OpCounts {
        OpCounts {
            base_mma_count: self.base_mma_count + o.base_mma_count,
            redundant_mma_count: self.redundant_mma_count + o.redundant_mma_count,
            checksum_op_count: self.checksum_op_count + o.checksum_op_count,
        }
    }
}

impl AddAssign for OpCounts {
    fn add_assign(&mut self, o: OpCounts) {
        *self = *self + o;
    }
}

/// Per-step, per-thread additions from the thread-level accounting:
/// (redundant MMAs, checksum ops). Checksum ops count every element folded
/// into a checksum register.
pub fn per_step_thread_ops(scheme: Scheme, tiling: &TilingConfig) -> (u64, u64) {
    let (mt, nt, ks) = (tiling.thread_m as u64, tiling.thread_n as u64, tiling.k_step as u64);
    match scheme {
        Scheme::Unprotected | Scheme::GlobalAbft => (0, 0),
        Scheme::ThreadOneSided => (mt / 2, ks * nt),
        Scheme::ThreadTwoSided => (1, ks * (mt + nt)),
        Scheme::ThreadReplicationFull | Scheme::ThreadReplicationSingleAcc => (mt * nt / 2, 0),
    }
}

/// Closed-form operation totals for running `scheme` over `gemm`.
///
/// Global ABFT has no thread-level redundancy; its checksum ops are the
/// activation checksum (`m*k`), the output summation (`m*n`) and the final
/// dot product (`k`). The weight checksum is built offline and not counted.
pub fn count_redundant_ops(scheme: Scheme, tiling: &TilingConfig, gemm: GemmShape) -> Result<OpCounts> {
    tiling.check_divides(gemm)?;
    let (tm, tn) = tiling.thread_grid(gemm);
    let threads = (tm * tn) as u64;
    let steps = tiling.steps(gemm) as u64;
    let base = threads * steps * (tiling.thread_m * tiling.thread_n / 2) as u64;
    let (red, ck) = per_step_thread_ops(scheme, tiling);
    let (m, n, k) = (gemm.m as u64, gemm.n as u64, gemm.k as u64);
    let checksum_op_count = match scheme {
        Scheme::GlobalAbft => m * k + m * n + k,
        _ => threads * steps * ck,
    };
    Ok(OpCounts { base_mma_count: base, redundant_mma_count: threads * steps * red, checksum_op_count })
}

/// Fault applied inside one thread tile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileFault {
    /// `None`: after the K loop; `Some(s)`: during step `s`.
    pub step: Option<usize>,
    pub row: usize,
    pub col: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThreadTileResult<E: Element> {
    /// Accumulator registers of the tile.
    pub ct: Matrix<E::Acc>,
    /// `None` for schemes without a thread-level check.
    pub verdict: Option<Verdict>,
    pub op_counts: OpCounts,
}

impl<E: Element> ThreadTileResult<E> {
    pub fn detected(&self) -> bool {
        self.verdict.is_some_and(|v| v.detected)
    }
}

struct TileFaultAcc<E: Element> {
    step: Option<usize>,
    row: usize,
    col: usize,
    delta: E::Acc,
}

fn tile_kernel<E: Element>(
    scheme: Scheme,
    at: &Matrix<E::Acc>,
    bt: &Matrix<E::Acc>,
    tiling: &TilingConfig,
    fold_width: usize,
    mode: ToleranceMode,
    faults: &[TileFaultAcc<E>],
) -> Result<ThreadTileResult<E>> {
    let (mt, nt, ks) = (tiling.thread_m, tiling.thread_n, tiling.k_step);
    let k = at.cols();
    let steps = k / ks;
    let zero = E::Acc::default();
    let (red_per_step, ck_per_step) = per_step_thread_ops(scheme, tiling);
    let base_per_step = (mt * nt / 2) as u64;

    let mut ct = vec![zero; mt * nt];
    let mut shadow = vec![zero; if scheme == Scheme::ThreadReplicationFull { mt * nt } else { 0 }];
    let mut fold = vec![zero; fold_width];
    let mut abft_col = vec![zero; mt];
    let mut abft = zero;
    let mut row_ck = vec![zero; ks];
    let mut col_ck = vec![zero; ks];
    let mut counts = OpCounts::default();

    for s in 0..steps {
        let k0 = s * ks;
        for i in 0..mt {
            let arow = &at.row(i)[k0..k0 + ks];
            for j in 0..nt {
                let mut acc = ct[i * nt + j];
                for (kk, &a) in arow.iter().enumerate() {
                    acc = E::acc_mul_add(acc, a, bt.get(k0 + kk, j))?;
                }
                ct[i * nt + j] = acc;
            }
        }
        counts.base_mma_count += base_per_step;
        for f in faults.iter().filter(|f| f.step == Some(s)) {
            ct[f.row * nt + f.col] = E::acc_add(ct[f.row * nt + f.col], f.delta)?;
        }

        match scheme {
            Scheme::Unprotected | Scheme::GlobalAbft => {}
            Scheme::ThreadOneSided => {
                for (kk, rc) in row_ck.iter_mut().enumerate() {
                    *rc = bt.row(k0 + kk).iter().try_fold(zero, |acc, &b| E::acc_add(acc, b))?;
                }
                for (i, out) in abft_col.iter_mut().enumerate() {
                    let arow = &at.row(i)[k0..k0 + ks];
                    for (&a, &rc) in arow.iter().zip(&row_ck) {
                        *out = E::acc_mul_add(*out, a, rc)?;
                    }
                }
            }
            Scheme::ThreadTwoSided => {
                for (kk, rc) in row_ck.iter_mut().enumerate() {
                    *rc = bt.row(k0 + kk).iter().try_fold(zero, |acc, &b| E::acc_add(acc, b))?;
                }
                for (kk, cc) in col_ck.iter_mut().enumerate() {
                    *cc = (0..mt).try_fold(zero, |acc, i| E::acc_add(acc, at.get(i, k0 + kk)))?;
                }
                for (&cc, &rc) in col_ck.iter().zip(&row_ck) {
                    abft = E::acc_mul_add(abft, cc, rc)?;
                }
            }
            Scheme::ThreadReplicationFull => {
                for i in 0..mt {
                    let arow = &at.row(i)[k0..k0 + ks];
                    for j in 0..nt {
                        let mut acc = shadow[i * nt + j];
                        for (kk, &a) in arow.iter().enumerate() {
                            acc = E::acc_mul_add(acc, a, bt.get(k0 + kk, j))?;
                        }
                        shadow[i * nt + j] = acc;
                    }
                }
            }
            Scheme::ThreadReplicationSingleAcc => {
                for i in 0..mt {
                    let arow = &at.row(i)[k0..k0 + ks];
                    for j in 0..nt {
                        let reg = &mut fold[(i * nt + j) % fold_width];
                        for (kk, &a) in arow.iter().enumerate() {
                            *reg = E::acc_mul_add(*reg, a, bt.get(k0 + kk, j))?;
                        }
                    }
                }
            }
        }
        counts.redundant_mma_count += red_per_step;
        counts.checksum_op_count += ck_per_step;
    }

    for f in faults.iter().filter(|f| f.step.is_none()) {
        ct[f.row * nt + f.col] = E::acc_add(ct[f.row * nt + f.col], f.delta)?;
    }

    let sum = |xs: &[E::Acc]| xs.iter().try_fold(zero, |acc, &x| E::acc_add(acc, x));
    let verdict = match scheme {
        Scheme::Unprotected | Scheme::GlobalAbft => None,
        Scheme::ThreadOneSided => {
            let rows = (0..mt)
                .map(|i| Ok(Verdict::evaluate::<E>(abft_col[i], sum(&ct[i * nt..(i + 1) * nt])?, k, mode)))
                .collect::<Result<Vec<_>>>()?;
            Verdict::worst(rows)
        }
        Scheme::ThreadTwoSided => Some(Verdict::evaluate::<E>(abft, sum(&ct)?, k, mode)),
        Scheme::ThreadReplicationFull => {
            Verdict::worst(shadow.iter().zip(&ct).map(|(&s, &c)| Verdict::evaluate::<E>(s, c, k, mode)))
        }
        Scheme::ThreadReplicationSingleAcc => Some(Verdict::evaluate::<E>(sum(&fold)?, sum(&ct)?, k, mode)),
    };

    Ok(ThreadTileResult { ct: Matrix::new(mt, nt, ct)?, verdict, op_counts: counts })
}

fn check_tile_shapes<E: Element>(at: &Matrix<E>, bt: &Matrix<E>, tiling: &TilingConfig) -> Result<()> {
    tiling.validate()?;
    if at.rows() != tiling.thread_m || bt.cols() != tiling.thread_n {
        return Err(AbftError::ShapeMismatch(format!(
            "thread tile expects At with {} rows and Bt with {} cols, got {}x{} and {}x{}",
            tiling.thread_m,
            tiling.thread_n,
            at.rows(),
            at.cols(),
            bt.rows(),
            bt.cols()
        )));
    }
    if at.cols() != bt.rows() {
        return Err(AbftError::ShapeMismatch(format!("At has {} cols, Bt has {} rows", at.cols(), bt.rows())));
    }
    if !at.cols().is_multiple_of(tiling.k_step) {
        return Err(AbftError::ShapeMismatch(format!(
            "K = {} is not a multiple of k_step {}",
            at.cols(),
            tiling.k_step
        )));
    }
    Ok(())
}

/// Run one thread tile under `scheme`, injecting `faults` into its
/// accumulators. `fold_width` only matters for single-accumulator
/// replication.
pub fn thread_tile<E: Element>(
    scheme: Scheme,
    at: &Matrix<E>,
    bt: &Matrix<E>,
    tiling: &TilingConfig,
    fold_width: usize,
    mode: ToleranceMode,
    faults: &[TileFault],
) -> Result<ThreadTileResult<E>> {
    check_tile_shapes(at, bt, tiling)?;
    if fold_width == 0 {
        return Err(AbftError::Validation("fold width must be positive".into()));
    }
    let steps = at.cols() / tiling.k_step;
    let faults = faults
        .iter()
        .map(|f| {
            if f.row >= tiling.thread_m || f.col >= tiling.thread_n || f.step.is_some_and(|s| s >= steps) {
                return Err(AbftError::InvalidFault(format!("tile fault {f:?} out of range")));
            }
            Ok(TileFaultAcc::<E> { step: f.step, row: f.row, col: f.col, delta: E::delta_from_f64(f.delta)? })
        })
        .collect::<Result<Vec<_>>>()?;
    tile_kernel(scheme, &at.widened(), &bt.widened(), tiling, fold_width, mode, &faults)
}

/// Checksum `Bt` per step and multiply all of `At` by it; compare against the
/// row sums of the tile.
pub fn thread_tile_one_sided<E: Element>(
    at: &Matrix<E>,
    bt: &Matrix<E>,
    tiling: &TilingConfig,
    mode: ToleranceMode,
) -> Result<ThreadTileResult<E>> {
    thread_tile(Scheme::ThreadOneSided, at, bt, tiling, DEFAULT_FOLD_WIDTH, mode, &[])
}

/// Checksum both `At` and `Bt` per step, one dot product each step; compare
/// against the tile's output summation.
pub fn thread_tile_two_sided<E: Element>(
    at: &Matrix<E>,
    bt: &Matrix<E>,
    tiling: &TilingConfig,
    mode: ToleranceMode,
) -> Result<ThreadTileResult<E>> {
    thread_tile(Scheme::ThreadTwoSided, at, bt, tiling, DEFAULT_FOLD_WIDTH, mode, &[])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplicationVariant {
    /// Shadow copy of every accumulator, compared element by element.
    Full,
    /// Replicated MMAs fold into `width` registers; their sum is compared
    /// against the tile's output summation.
    SingleAccumulator { width: usize },
}

pub fn thread_tile_replication<E: Element>(
    at: &Matrix<E>,
    bt: &Matrix<E>,
    tiling: &TilingConfig,
    variant: ReplicationVariant,
    mode: ToleranceMode,
) -> Result<ThreadTileResult<E>> {
    match variant {
        ReplicationVariant::Full => {
            thread_tile(Scheme::ThreadReplicationFull, at, bt, tiling, DEFAULT_FOLD_WIDTH, mode, &[])
        }
        ReplicationVariant::SingleAccumulator { width } => {
            thread_tile(Scheme::ThreadReplicationSingleAcc, at, bt, tiling, width, mode, &[])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Domain {
    Global,
    Thread { coord: ThreadCoord, row0: usize, col0: usize, rows: usize, cols: usize },
}

impl Domain {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        match *self {
            Domain::Global => true,
            Domain::Thread { row0, col0, rows, cols, .. } => {
                (row0..row0 + rows).contains(&row) && (col0..col0 + cols).contains(&col)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainVerdict {
    pub domain: Domain,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionReport<E: Element> {
    /// `A * B` over the logical (unpadded) shape, faults included.
    pub output: Matrix<E>,
    /// One global verdict, or one per thread sorted by thread coordinates.
    pub verdicts: Vec<DomainVerdict>,
    pub detected: bool,
    pub op_counts: OpCounts,
    /// Shape the kernel actually ran after zero padding.
    pub padded: GemmShape,
}

impl<E: Element> ExecutionReport<E> {
    pub fn firing(&self) -> impl Iterator<Item = &DomainVerdict> {
        self.verdicts.iter().filter(|v| v.verdict.detected)
    }
}

/// Run `A * B` on the tiled hierarchy under `scheme`.
///
/// Inputs of any shape are zero-padded to the tiling; faults may only target
/// logical output cells. Thread tiles run in parallel but results are
/// assembled in thread order, so reports do not depend on scheduling.
pub fn execute<E: Element>(
    a: &Matrix<E>,
    b: &Matrix<E>,
    tiling: &TilingConfig,
    scheme: Scheme,
    faults: &[FaultSpec],
    mode: ToleranceMode,
) -> Result<ExecutionReport<E>> {
    tiling.validate()?;
    if a.cols() != b.rows() {
        return Err(AbftError::ShapeMismatch(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let logical = GemmShape::new(a.rows(), b.cols(), a.cols())?;
    let padded = tiling.padded_shape(logical);
    let steps = tiling.steps(padded);

    let mut per_thread: BTreeMap<ThreadCoord, Vec<TileFaultAcc<E>>> = BTreeMap::new();
    for f in faults {
        let (row, col) = f.site.output_position(tiling);
        let (thread, step) = match f.site {
            FaultSite::OutputElement { .. } => (tiling.thread_of(row, col), None),
            FaultSite::ThreadMma { thread, step, local_row, local_col } => {
                if !tiling.contains_thread(padded, thread) {
                    return Err(AbftError::InvalidFault(format!("no thread {thread} in this launch")));
                }
                if step >= steps || local_row >= tiling.thread_m || local_col >= tiling.thread_n {
                    return Err(AbftError::InvalidFault(format!(
                        "step {step} / local ({local_row}, {local_col}) out of range"
                    )));
                }
                (thread, Some(step))
            }
        };
        if row >= logical.m || col >= logical.n {
            return Err(AbftError::InvalidFault(format!(
                "fault at ({row}, {col}) is outside the {}x{} output",
                logical.m, logical.n
            )));
        }
        let (r0, c0) = tiling.tile_origin(thread);
        per_thread.entry(thread).or_default().push(TileFaultAcc {
            step,
            row: row - r0,
            col: col - c0,
            delta: E::delta_from_f64(f.delta)?,
        });
    }

    let a_w = a.zero_padded(padded.m, padded.k).widened();
    let b_w = b.zero_padded(padded.k, padded.n).widened();
    let threads = tiling.threads(padded);
    let no_faults = Vec::new();

    let tiles = threads
        .par_iter()
        .with_min_len(8)
        .map(|&t| {
            let (r0, c0) = tiling.tile_origin(t);
            let at = a_w.block(r0, 0, tiling.thread_m, padded.k);
            let bt = b_w.block(0, c0, padded.k, tiling.thread_n);
            let faults = per_thread.get(&t).unwrap_or(&no_faults);
            tile_kernel::<E>(scheme, &at, &bt, tiling, DEFAULT_FOLD_WIDTH, mode, faults)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut c_acc = Matrix::<E::Acc>::zeros(padded.m, padded.n);
    let mut op_counts = OpCounts::default();
    let mut verdicts = Vec::new();
    let mut output_sum = E::Acc::default();
    for (&t, tile) in threads.iter().zip(&tiles) {
        let (r0, c0) = tiling.tile_origin(t);
        for i in 0..tiling.thread_m {
            for j in 0..tiling.thread_n {
                c_acc.set(r0 + i, c0 + j, tile.ct.get(i, j));
            }
        }
        op_counts += tile.op_counts;
        if scheme == Scheme::GlobalAbft {
            // Fused epilogue: each thread reduces its own registers.
            for &x in tile.ct.as_slice() {
                output_sum = E::acc_add(output_sum, x)?;
            }
            op_counts.checksum_op_count += tile.ct.as_slice().len() as u64;
        }
        if let Some(verdict) = tile.verdict {
            verdicts.push(DomainVerdict {
                domain: Domain::Thread { coord: t, row0: r0, col0: c0, rows: tiling.thread_m, cols: tiling.thread_n },
                verdict,
            });
        }
    }

    if scheme == Scheme::GlobalAbft {
        let a_p = a.zero_padded(padded.m, padded.k);
        let b_p = b.zero_padded(padded.k, padded.n);
        let activation_ck = column_checksum(&a_p)?;
        let weight_ck = row_checksum(&b_p)?;
        let lhs = checksum_dot(&activation_ck, &weight_ck)?;
        op_counts.checksum_op_count += (padded.m * padded.k + padded.k) as u64;
        verdicts.push(DomainVerdict {
            domain: Domain::Global,
            verdict: Verdict::evaluate::<E>(lhs, output_sum, padded.k, mode),
        });
    }

    let output = Matrix::<E>::narrowed(&c_acc.block(0, 0, logical.m, logical.n));
    let detected = verdicts.iter().any(|v| v.verdict.detected);
    Ok(ExecutionReport { output, verdicts, detected, op_counts, padded })
}
