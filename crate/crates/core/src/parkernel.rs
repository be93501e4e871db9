//! Dense data-parallel kernels.
//!
//! Every parallel kernel here has a serial reference next to it
//! ([`matmul_serial`], [`matvec_serial`], [`matvec_adjoint_serial`]) that acts
//! as its correctness oracle. Parallel work is always confined to an explicit
//! [`WorkerPool`], and workers only ever write disjoint output ranges.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub};
use std::sync::atomic::{AtomicU32, Ordering};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PactError, Result};

/// Below this length [`tree_reduce`] runs its rounds on the calling thread.
const PARALLEL_REDUCE_MIN: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    Real64,
    Complex128,
}

impl fmt::Display for ScalarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarKind::Real64 => f.write_str("real64"),
            ScalarKind::Complex128 => f.write_str("complex128"),
        }
    }
}

/// Element type accepted by the kernels.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + PartialEq
    + fmt::Debug
    + Add<Output = Self>
    + AddAssign
    + Sub<Output = Self>
    + Mul<Output = Self>
    + 'static
{
    const KIND: ScalarKind;

    fn zero() -> Self;
    fn conj(self) -> Self;
    /// Modulus.
    fn norm(self) -> f64;
    fn is_finite(self) -> bool;
}

impl Scalar for f64 {
    const KIND: ScalarKind = ScalarKind::Real64;

    #[inline]
    fn zero() -> Self {
        0.0
    }
    #[inline]
    fn conj(self) -> Self {
        self
    }
    #[inline]
    fn norm(self) -> f64 {
        self.abs()
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

impl Scalar for Complex64 {
    const KIND: ScalarKind = ScalarKind::Complex128;

    #[inline]
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    #[inline]
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    #[inline]
    fn norm(self) -> f64 {
        Complex64::norm(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(PactError::dims(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(PactError::invalid(format!(
                "non-finite matrix entry at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self
    where
        T: From<f64>,
    {
        Self::from_fn(n, n, |i, j| if i == j { T::from(1.0) } else { T::zero() })
    }

    /// Skips the finiteness scan; callers guarantee finite entries.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn scalar_kind(&self) -> ScalarKind {
        T::KIND
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }
}

/// Block extents of the tiled product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSpec {
    pub tile_rows: usize,
    pub tile_cols: usize,
    pub tile_depth: usize,
}

impl TileSpec {
    pub fn new(tile_rows: usize, tile_cols: usize, tile_depth: usize) -> Result<Self> {
        if tile_rows == 0 || tile_cols == 0 || tile_depth == 0 {
            return Err(PactError::invalid(format!(
                "tile extents must be >= 1, got ({tile_rows}, {tile_cols}, {tile_depth})"
            )));
        }
        Ok(Self {
            tile_rows,
            tile_cols,
            tile_depth,
        })
    }
}

impl Default for TileSpec {
    fn default() -> Self {
        Self {
            tile_rows: 32,
            tile_cols: 32,
            tile_depth: 64,
        }
    }
}

/// A fixed-size set of worker threads that the kernels run on.
pub struct WorkerPool {
    pool: rayon::ThreadPool,
    worker_count: usize,
    deterministic_reduction: bool,
}

impl fmt::Debug for WorkerPool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WorkerPool")
            .field("worker_count", &self.worker_count)
            .field("deterministic_reduction", &self.deterministic_reduction)
            .finish()
    }
}

impl WorkerPool {
    pub fn new(worker_count: usize) -> Result<Self> {
        if worker_count == 0 {
            return Err(PactError::invalid("worker_count must be >= 1"));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(worker_count)
            .thread_name(|i| format!("pact-worker-{i}"))
            .build()
            .map_err(|e| PactError::invalid(format!("cannot start worker pool: {e}")))?;
        Ok(Self {
            pool,
            worker_count,
            deterministic_reduction: false,
        })
    }

    /// Pool sized to the host's available parallelism.
    pub fn with_default_workers() -> Result<Self> {
        Self::new(hardware_workers())
    }

    pub fn deterministic(mut self, on: bool) -> Self {
        self.deterministic_reduction = on;
        self
    }

    pub fn worker_count(&self) -> usize {
        self.worker_count
    }

    pub fn deterministic_reduction(&self) -> bool {
        self.deterministic_reduction
    }

    pub fn install<R: Send>(&self, op: impl FnOnce() -> R + Send) -> R {
        self.pool.install(op)
    }

    /// Chunk length that splits `len` items into about four chunks per worker.
    fn chunk_len(&self, len: usize) -> usize {
        let parts = self.worker_count * 4;
        len.div_ceil(parts).max(1)
    }
}

pub fn hardware_workers() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

/// Selects serial reference loops or pool-backed parallel kernels for
/// matrix-vector products.
#[derive(Debug, Clone, Copy)]
pub enum Kernels<'a> {
    Serial,
    Parallel(&'a WorkerPool),
}

impl Kernels<'_> {
    pub fn matvec<T: Scalar>(&self, a: &DenseMatrix<T>, x: &[T]) -> Result<Vec<T>> {
        match self {
            Kernels::Serial => matvec_serial(a, x),
            Kernels::Parallel(pool) => matvec_parallel(a, x, pool),
        }
    }

    pub fn matvec_adjoint<T: Scalar>(&self, a: &DenseMatrix<T>, y: &[T]) -> Result<Vec<T>> {
        match self {
            Kernels::Serial => matvec_adjoint_serial(a, y),
            Kernels::Parallel(pool) => matvec_adjoint_parallel(a, y, pool),
        }
    }

    pub fn worker_count(&self) -> usize {
        match self {
            Kernels::Serial => 1,
            Kernels::Parallel(pool) => pool.worker_count(),
        }
    }
}

fn check_product_dims<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<()> {
    if a.cols != b.rows {
        return Err(PactError::dims(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    Ok(())
}

/// Triple-loop product in (i, j, k) order. Reference for every parallel kernel.
pub fn matmul_serial<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    check_product_dims(a, b)?;
    let (m, n, depth) = (a.rows, b.cols, a.cols);
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = T::zero();
            for k in 0..depth {
                acc += a.data[i * depth + k] * b.data[k * n + j];
            }
            c[i * n + j] = acc;
        }
    }
    Ok(DenseMatrix::from_raw(m, n, c))
}

/// Blocked product on the pool.
///
/// Output row bands of `tile_rows` rows go to workers; inside a band each
/// `tile_rows x tile_cols` block accumulates over `tile_depth`-wide slabs of
/// the shared dimension, staging the slab of `A` and `B` into worker-local
/// scratch first. With deterministic reduction the per-slab partial blocks
/// are kept apart and combined with the pairwise tree sum; otherwise slabs
/// accumulate in order.
pub fn matmul_tiled_parallel<T: Scalar>(
    a: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
    tiles: TileSpec,
    pool: &WorkerPool,
) -> Result<DenseMatrix<T>> {
    check_product_dims(a, b)?;
    Ok(tiled_product(a, b, tiles, pool, None))
}

/// Runs the tiled kernel while counting writes to every output element.
/// A correct tiling writes each element exactly once.
pub fn tiled_write_counts<T: Scalar>(
    a: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
    tiles: TileSpec,
    pool: &WorkerPool,
) -> Result<Vec<u32>> {
    check_product_dims(a, b)?;
    let counters: Vec<AtomicU32> = (0..a.rows * b.cols).map(|_| AtomicU32::new(0)).collect();
    tiled_product(a, b, tiles, pool, Some(&counters));
    Ok(counters.into_iter().map(AtomicU32::into_inner).collect())
}

fn tiled_product<T: Scalar>(
    a: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
    tiles: TileSpec,
    pool: &WorkerPool,
    counters: Option<&[AtomicU32]>,
) -> DenseMatrix<T> {
    let (m, n, depth) = (a.rows, b.cols, a.cols);
    let mut out = vec![T::zero(); m * n];
    if out.is_empty() {
        return DenseMatrix::from_raw(m, n, out);
    }
    let TileSpec {
        tile_rows,
        tile_cols,
        tile_depth,
    } = tiles;
    let deterministic = pool.deterministic_reduction;
    let slabs = depth.div_ceil(tile_depth);

    pool.install(|| {
        out.par_chunks_mut(tile_rows * n)
            .enumerate()
            .for_each(|(band, band_out)| {
                let r0 = band * tile_rows;
                let rh = band_out.len() / n;
                let mut a_tile = vec![T::zero(); rh * tile_depth];
                let mut b_tile = vec![T::zero(); tile_depth * tile_cols];
                let mut acc = vec![T::zero(); rh * tile_cols];
                let mut partials = if deterministic {
                    vec![T::zero(); slabs * rh * tile_cols]
                } else {
                    Vec::new()
                };
                // Zero padding beyond `slabs` lies in the upper half and is never written.
                let mut lane = vec![T::zero(); slabs.next_power_of_two()];

                for c0 in (0..n).step_by(tile_cols) {
                    let cw = tile_cols.min(n - c0);
                    let block = rh * cw;
                    acc[..block].fill(T::zero());
                    if deterministic {
                        partials[..slabs * block].fill(T::zero());
                    }

                    for (slab, k0) in (0..depth).step_by(tile_depth).enumerate() {
                        let kd = tile_depth.min(depth - k0);
                        for i in 0..rh {
                            let src = (r0 + i) * depth + k0;
                            a_tile[i * kd..(i + 1) * kd].copy_from_slice(&a.data[src..src + kd]);
                        }
                        for k in 0..kd {
                            let src = (k0 + k) * n + c0;
                            b_tile[k * cw..(k + 1) * cw].copy_from_slice(&b.data[src..src + cw]);
                        }
                        let dest = if deterministic {
                            &mut partials[slab * block..(slab + 1) * block]
                        } else {
                            &mut acc[..block]
                        };
                        for i in 0..rh {
                            let a_row = &a_tile[i * kd..(i + 1) * kd];
                            let d_row = &mut dest[i * cw..(i + 1) * cw];
                            for (k, &aik) in a_row.iter().enumerate() {
                                let b_row = &b_tile[k * cw..(k + 1) * cw];
                                for (d, &bkj) in d_row.iter_mut().zip(b_row) {
                                    *d += aik * bkj;
                                }
                            }
                        }
                    }

                    if deterministic {
                        for (e, slot) in acc[..block].iter_mut().enumerate() {
                            for (s, v) in lane[..slabs].iter_mut().enumerate() {
                                *v = partials[s * block + e];
                            }
                            *slot = halving_rounds(&mut lane);
                        }
                    }

                    for i in 0..rh {
                        band_out[i * n + c0..i * n + c0 + cw]
                            .copy_from_slice(&acc[i * cw..(i + 1) * cw]);
                        if let Some(counters) = counters {
                            for j in c0..c0 + cw {
                                counters[(r0 + i) * n + j].fetch_add(1, Ordering::Relaxed);
                            }
                        }
                    }
                }
            });
    });
    DenseMatrix::from_raw(m, n, out)
}

fn check_matvec(rows: usize, cols: usize, len: usize, expected: usize, what: &str) -> Result<()> {
    if len != expected {
        return Err(PactError::dims(format!(
            "{what}: {rows}x{cols} matrix applied to vector of length {len}"
        )));
    }
    Ok(())
}

/// `A x` with sequential accumulation per output row.
pub fn matvec_serial<T: Scalar>(a: &DenseMatrix<T>, x: &[T]) -> Result<Vec<T>> {
    check_matvec(a.rows, a.cols, x.len(), a.cols, "matvec")?;
    let mut out = vec![T::zero(); a.rows];
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(a.row(i), x);
    }
    Ok(out)
}

/// `Aᴴ y` in row-sweep order.
pub fn matvec_adjoint_serial<T: Scalar>(a: &DenseMatrix<T>, y: &[T]) -> Result<Vec<T>> {
    check_matvec(a.rows, a.cols, y.len(), a.rows, "adjoint matvec")?;
    let mut out = vec![T::zero(); a.cols];
    for (i, &yi) in y.iter().enumerate() {
        axpy_conj(&mut out, a.row(i), yi);
    }
    Ok(out)
}

/// `A x`, parallel over disjoint ranges of output rows.
pub fn matvec_parallel<T: Scalar>(a: &DenseMatrix<T>, x: &[T], pool: &WorkerPool) -> Result<Vec<T>> {
    check_matvec(a.rows, a.cols, x.len(), a.cols, "matvec")?;
    let mut out = vec![T::zero(); a.rows];
    if out.is_empty() {
        return Ok(out);
    }
    let chunk = pool.chunk_len(a.rows);
    pool.install(|| {
        out.par_chunks_mut(chunk).enumerate().for_each(|(c, part)| {
            let r0 = c * chunk;
            for (off, o) in part.iter_mut().enumerate() {
                *o = dot(a.row(r0 + off), x);
            }
        });
    });
    Ok(out)
}

/// `Aᴴ y` without forming the transpose: each worker owns a range of output
/// columns and sweeps all rows over that range.
pub fn matvec_adjoint_parallel<T: Scalar>(
    a: &DenseMatrix<T>,
    y: &[T],
    pool: &WorkerPool,
) -> Result<Vec<T>> {
    check_matvec(a.rows, a.cols, y.len(), a.rows, "adjoint matvec")?;
    let mut out = vec![T::zero(); a.cols];
    if out.is_empty() {
        return Ok(out);
    }
    let chunk = pool.chunk_len(a.cols);
    pool.install(|| {
        out.par_chunks_mut(chunk).enumerate().for_each(|(c, part)| {
            let c0 = c * chunk;
            let width = part.len();
            for (i, &yi) in y.iter().enumerate() {
                let row = &a.row(i)[c0..c0 + width];
                axpy_conj(part, row, yi);
            }
        });
    });
    Ok(out)
}

#[inline]
fn dot<T: Scalar>(row: &[T], x: &[T]) -> T {
    let mut acc = T::zero();
    for (&a, &b) in row.iter().zip(x) {
        acc += a * b;
    }
    acc
}

#[inline]
fn axpy_conj<T: Scalar>(out: &mut [T], row: &[T], scale: T) {
    for (o, &a) in out.iter_mut().zip(row) {
        *o += a.conj() * scale;
    }
}

/// Pairwise-halving sum: round `r` adds element `i + n/2^r` into element `i`
/// until one value remains. Lengths that are not a power of two are padded
/// with zeros. The combination order depends only on the length, so the
/// result is identical for every worker count.
pub fn tree_reduce<T: Scalar>(values: &[T], pool: &WorkerPool) -> T {
    if values.is_empty() {
        return T::zero();
    }
    let mut buf = padded(values);
    if buf.len() < PARALLEL_REDUCE_MIN {
        return halving_rounds(&mut buf);
    }
    pool.install(|| {
        let mut len = buf.len();
        while len > 1 {
            let half = len / 2;
            let (lo, hi) = buf[..len].split_at_mut(half);
            if half >= PARALLEL_REDUCE_MIN {
                lo.par_iter_mut().zip(hi.par_iter()).for_each(|(a, &b)| *a += b);
            } else {
                lo.iter_mut().zip(hi.iter()).for_each(|(a, &b)| *a += b);
            }
            len = half;
        }
    });
    buf[0]
}

/// Serial form of [`tree_reduce`]; same combination order. Clobbers `values`.
#[cfg(test)]
pub(crate) fn pairwise_sum<T: Scalar>(values: &mut [T]) -> T {
    match values.len() {
        0 => T::zero(),
        1 => values[0],
        n if n.is_power_of_two() => halving_rounds(values),
        _ => halving_rounds(&mut padded(values)),
    }
}

fn padded<T: Scalar>(values: &[T]) -> Vec<T> {
    let mut buf = vec![T::zero(); values.len().next_power_of_two()];
    buf[..values.len()].copy_from_slice(values);
    buf
}

fn halving_rounds<T: Scalar>(buf: &mut [T]) -> T {
    debug_assert!(buf.len().is_power_of_two());
    let mut len = buf.len();
    while len > 1 {
        let half = len / 2;
        for i in 0..half {
            let v = buf[i + half];
            buf[i] += v;
        }
        len = half;
    }
    buf[0]
}

/// Largest elementwise deviation of `got` from `want`, each scaled by the
/// magnitude sum of the terms that formed the reference entry
/// (`Σ_k |a_ik| |b_kj|`), floored at `|want_ij|`.
pub fn max_relative_deviation<T: Scalar>(
    a: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
    got: &DenseMatrix<T>,
    want: &DenseMatrix<T>,
) -> f64 {
    let (n, depth) = (b.cols, a.cols);
    let mut worst = 0.0f64;
    for i in 0..want.rows {
        for j in 0..want.cols {
            let w = want.get(i, j);
            let diff = (got.get(i, j) - w).norm();
            if diff == 0.0 {
                continue;
            }
            let mut scale = w.norm();
            let mut terms = 0.0;
            for k in 0..depth {
                terms += a.data[i * depth + k].norm() * b.data[k * n + j].norm();
            }
            scale = scale.max(terms);
            worst = worst.max(if scale > 0.0 { diff / scale } else { f64::INFINITY });
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_real(rows: usize, cols: usize, seed: u64) -> DenseMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_complex(rows: usize, cols: usize, seed: u64) -> DenseMatrix<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    #[test]
    fn serial_hand_product() {
        let a = DenseMatrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = DenseMatrix::new(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = matmul_serial(&a, &b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn serial_identity_left() {
        let b = random_real(3, 4, 7);
        let c = matmul_serial(&DenseMatrix::identity(3), &b).unwrap();
        assert_eq!(c, b);
    }

    #[test]
    fn serial_rejects_shape_mismatch() {
        let a = random_real(2, 3, 1);
        let b = random_real(2, 3, 2);
        assert!(matches!(
            matmul_serial(&a, &b),
            Err(PactError::DimensionMismatch(_))
        ));
        let pool = WorkerPool::new(2).unwrap();
        assert!(matmul_tiled_parallel(&a, &b, TileSpec::default(), &pool).is_err());
    }

    #[test]
    fn new_rejects_bad_length_and_nan() {
        assert!(DenseMatrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(DenseMatrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn degenerate_tiling_matches_serial_exactly() {
        let a = random_real(9, 13, 3);
        let b = random_real(13, 5, 4);
        let want = matmul_serial(&a, &b).unwrap();
        for det in [false, true] {
            let pool = WorkerPool::new(1).unwrap().deterministic(det);
            let tiles = TileSpec::new(1, 1, a.cols()).unwrap();
            let got = matmul_tiled_parallel(&a, &b, tiles, &pool).unwrap();
            assert_eq!(got, want, "deterministic={det}");
        }
    }

    #[test]
    fn tiled_matches_oracle_128x96x64() {
        let a = random_real(128, 96, 11);
        let b = random_real(96, 64, 12);
        let want = matmul_serial(&a, &b).unwrap();
        let pool = WorkerPool::new(4).unwrap();
        let tiles = TileSpec::new(16, 16, 16).unwrap();
        for det in [false, true] {
            let pool = WorkerPool::new(pool.worker_count()).unwrap().deterministic(det);
            let got = matmul_tiled_parallel(&a, &b, tiles, &pool).unwrap();
            assert!(max_relative_deviation(&a, &b, &got, &want) <= 1e-12);
        }
    }

    #[test]
    fn tiled_complex_matches_oracle() {
        let a = random_complex(37, 29, 5);
        let b = random_complex(29, 41, 6);
        let want = matmul_serial(&a, &b).unwrap();
        let pool = WorkerPool::new(3).unwrap().deterministic(true);
        let got = matmul_tiled_parallel(&a, &b, TileSpec::new(8, 5, 7).unwrap(), &pool).unwrap();
        assert!(max_relative_deviation(&a, &b, &got, &want) <= 1e-12);
    }

    #[test]
    fn deterministic_tiling_is_bit_stable_across_runs_and_workers() {
        let a = random_real(70, 200, 21);
        let b = random_real(200, 33, 22);
        let tiles = TileSpec::new(16, 8, 16).unwrap();
        let reference = {
            let pool = WorkerPool::new(1).unwrap().deterministic(true);
            matmul_tiled_parallel(&a, &b, tiles, &pool).unwrap()
        };
        for workers in [1, 2, 4] {
            let pool = WorkerPool::new(workers).unwrap().deterministic(true);
            for _ in 0..2 {
                let got = matmul_tiled_parallel(&a, &b, tiles, &pool).unwrap();
                let same = got
                    .data()
                    .iter()
                    .zip(reference.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits());
                assert!(same, "workers={workers}");
            }
        }
    }

    #[test]
    fn tiling_writes_each_element_once() {
        let a = random_real(45, 19, 1);
        let b = random_real(19, 23, 2);
        let pool = WorkerPool::new(3).unwrap();
        for tiles in [(1, 1, 1), (16, 16, 16), (7, 5, 3), (64, 64, 64)] {
            let tiles = TileSpec::new(tiles.0, tiles.1, tiles.2).unwrap();
            let counts = tiled_write_counts(&a, &b, tiles, &pool).unwrap();
            assert_eq!(counts.len(), 45 * 23);
            assert!(counts.iter().all(|&c| c == 1), "{tiles:?}");
        }
    }

    #[test]
    fn empty_shared_dimension_gives_zero_product() {
        let a = DenseMatrix::<f64>::zeros(3, 0);
        let b = DenseMatrix::<f64>::zeros(0, 2);
        let pool = WorkerPool::new(2).unwrap().deterministic(true);
        let c = matmul_tiled_parallel(&a, &b, TileSpec::default(), &pool).unwrap();
        assert_eq!(c.data(), &[0.0; 6]);
    }

    #[test]
    fn matvec_identity() {
        let pool = WorkerPool::new(2).unwrap();
        let x: Vec<f64> = (0..17).map(|v| v as f64 * 0.5 - 3.0).collect();
        assert_eq!(matvec_parallel(&DenseMatrix::identity(17), &x, &pool).unwrap(), x);
        assert_eq!(
            matvec_adjoint_parallel(&DenseMatrix::identity(17), &x, &pool).unwrap(),
            x
        );
    }

    #[test]
    fn matvec_matches_serial_64x256() {
        let a = random_real(64, 256, 9);
        let x: Vec<f64> = random_real(1, 256, 10).into_data();
        let y: Vec<f64> = random_real(1, 64, 11).into_data();
        let pool = WorkerPool::new(4).unwrap();
        // Same per-element accumulation order as the oracle.
        assert_eq!(matvec_parallel(&a, &x, &pool).unwrap(), matvec_serial(&a, &x).unwrap());
        assert_eq!(
            matvec_adjoint_parallel(&a, &y, &pool).unwrap(),
            matvec_adjoint_serial(&a, &y).unwrap()
        );
    }

    #[test]
    fn complex_adjoint_identity() {
        let a = random_complex(40, 70, 31);
        let x = random_complex(1, 70, 32).into_data();
        let y = random_complex(1, 40, 33).into_data();
        let pool = WorkerPool::new(3).unwrap();
        let ax = matvec_parallel(&a, &x, &pool).unwrap();
        let ahy = matvec_adjoint_parallel(&a, &y, &pool).unwrap();
        let lhs: Complex64 = ax.iter().zip(&y).map(|(u, v)| u * v.conj()).sum();
        let rhs: Complex64 = x.iter().zip(&ahy).map(|(u, v)| u * v.conj()).sum();
        let scale = ax.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
            * y.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!((lhs - rhs).norm() <= 1e-10 * scale);
    }

    #[test]
    fn matvec_dimension_errors() {
        let a = random_real(4, 6, 1);
        let pool = WorkerPool::new(1).unwrap();
        assert!(matvec_parallel(&a, &[0.0; 4], &pool).is_err());
        assert!(matvec_adjoint_parallel(&a, &[0.0; 6], &pool).is_err());
        assert!(matvec_serial(&a, &[0.0; 5]).is_err());
    }

    #[test]
    fn tree_reduce_small_cases() {
        let pool = WorkerPool::new(2).unwrap();
        assert_eq!(tree_reduce(&[1.0, 2.0, 3.0, 4.0], &pool), 10.0);
        assert_eq!(tree_reduce::<f64>(&[], &pool), 0.0);
        assert_eq!(tree_reduce(&[-2.5], &pool), -2.5);
        assert_eq!(tree_reduce(&[1.0, 2.0, 3.0], &pool), 6.0);
    }

    #[test]
    fn tree_reduce_matches_pairwise_sum_order() {
        let pool = WorkerPool::new(4).unwrap();
        let v = random_real(1, 100_003, 3).into_data();
        let mut scratch = v.clone();
        assert_eq!(tree_reduce(&v, &pool).to_bits(), pairwise_sum(&mut scratch).to_bits());
    }

    #[test]
    fn worker_pool_rejects_zero() {
        assert!(WorkerPool::new(0).is_err());
        assert!(TileSpec::new(0, 1, 1).is_err());
    }
}
