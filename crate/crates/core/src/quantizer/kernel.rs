//! Nearest-code search kernels.
//!
//! [`NearestSearch`] screens codes with an `f32` evaluation of `‖c‖² − 2z·c` and keeps
//! every code whose screened score lies within a rigorous rounding bound of the best
//! one. Those candidates are then rescored with an exact `f64` sum of squared
//! differences, so the returned index is the one an exhaustive double-precision
//! search with lowest-index tie-breaking would return.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Queries scanned together against each code group.
const TILE: usize = 8;
/// Codes per group, one per SIMD lane.
const LANES: usize = 8;

/// Squared Euclidean distance accumulated in `f64`, in index order.
#[inline]
pub fn exact_sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

#[inline]
fn sq_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum()
}

fn check_finite(v: &[f32]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(pos) => Err(Error::Domain(format!("non-finite query component at {pos}"))),
        None => Ok(()),
    }
}

fn check_table(rows: &[f32], dim: usize) -> Result<usize> {
    if dim == 0 {
        return Err(Error::Shape("code dimension must be positive".into()));
    }
    if rows.is_empty() || !rows.len().is_multiple_of(dim) {
        return Err(Error::Shape(format!(
            "code matrix of {} values is not a non-empty multiple of dimension {dim}",
            rows.len()
        )));
    }
    Ok(rows.len() / dim)
}

/// Exhaustive nearest code over an `n × dim` row-major matrix.
///
/// Returns the row minimizing squared Euclidean distance (lowest index on ties)
/// and that distance.
pub fn nearest_code(v: &[f32], rows: &[f32], dim: usize) -> Result<(usize, f64)> {
    check_table(rows, dim)?;
    if v.len() != dim {
        return Err(Error::Shape(format!(
            "query has dimension {}, codebook has {dim}",
            v.len()
        )));
    }
    check_finite(v)?;
    Ok(nearest_unchecked(v, rows, dim))
}

pub(crate) fn nearest_unchecked(v: &[f32], rows: &[f32], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, row) in rows.chunks_exact(dim).enumerate() {
        let d = exact_sq_dist(v, row);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

#[derive(Debug, Clone)]
struct QueryState {
    best: f32,
    slack: f32,
    candidates: Vec<(u32, f32)>,
}

impl QueryState {
    #[inline(always)]
    fn offer(&mut self, k: u32, score: f32) {
        if score <= self.best + self.slack {
            if score < self.best {
                self.best = score;
                let limit = score + self.slack;
                self.candidates.retain(|c| c.1 <= limit);
            }
            self.candidates.push((k, score));
        }
    }
}

/// A code matrix prepared for repeated nearest-code queries.
#[derive(Debug, Clone)]
pub struct NearestSearch {
    rows: Vec<f32>,
    len: usize,
    dim: usize,
    // Codes in groups of LANES, dimension-major within a group:
    // blocks[(g * dim + d) * LANES + l] = rows[(g * LANES + l) * dim + d]
    blocks: Vec<f32>,
    // ‖c‖² per code, padded with zeros to a whole number of groups.
    sq_norms: Vec<f32>,
    max_norm: f64,
    // γ_n = n·u / (1 − n·u) for unit roundoff u = 2^-24, n = dim + 2.
    gamma: f64,
}

impl NearestSearch {
    pub fn new(rows: &[f32], dim: usize) -> Result<Self> {
        let len = check_table(rows, dim)?;
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("code matrix contains non-finite values".into()));
        }
        let sq_norms_exact: Vec<f64> = rows.chunks_exact(dim).map(sq_norm).collect();
        let max_norm = sq_norms_exact.iter().fold(0f64, |a, &b| a.max(b)).sqrt();
        let u = f32::EPSILON as f64 / 2.0;
        let n = (dim + 2) as f64;
        let groups = len.div_ceil(LANES);
        let mut blocks = vec![0f32; groups * dim * LANES];
        for (k, row) in rows.chunks_exact(dim).enumerate() {
            let (g, l) = (k / LANES, k % LANES);
            for (d, &v) in row.iter().enumerate() {
                blocks[(g * dim + d) * LANES + l] = v;
            }
        }
        let mut sq_norms: Vec<f32> = sq_norms_exact.iter().map(|&v| v as f32).collect();
        sq_norms.resize(groups * LANES, 0.0);
        Ok(Self {
            rows: rows.to_vec(),
            len,
            dim,
            blocks,
            sq_norms,
            max_norm,
            gamma: n * u / (1.0 - n * u),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[f32] {
        &self.rows
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.rows[index * self.dim..(index + 1) * self.dim]
    }

    fn state_for(&self, z: &[f32]) -> QueryState {
        let z_norm = sq_norm(z).sqrt();
        let c = self.max_norm;
        // Bound on |screened − true| for a single code's score, doubled for the
        // comparison between two codes, then padded by a factor of two.
        let per_code = self.gamma * (c * c + 2.0 * z_norm * c) + 2.0 * self.gamma * c * c;
        let slack = (4.0 * per_code) as f32 + f32::MIN_POSITIVE;
        QueryState {
            best: f32::INFINITY,
            slack,
            candidates: Vec::with_capacity(4),
        }
    }

    /// Offers every lane of one code group whose score passes the query's threshold.
    #[inline(always)]
    fn offer_group(&self, group: usize, scores: &[f32; LANES], state: &mut QueryState) {
        let base = group * LANES;
        for (l, &score) in scores.iter().enumerate() {
            if base + l < self.len {
                state.offer((base + l) as u32, score);
            }
        }
    }

    fn scan_portable(&self, queries: &[&[f32]], states: &mut [QueryState]) {
        let dim = self.dim;
        for (g, block) in self.blocks.chunks_exact(dim * LANES).enumerate() {
            let norms = &self.sq_norms[g * LANES..(g + 1) * LANES];
            for (z, state) in queries.iter().zip(states.iter_mut()) {
                let mut acc = [0f32; LANES];
                for (d, codes) in block.chunks_exact(LANES).enumerate() {
                    for l in 0..LANES {
                        acc[l] += z[d] * codes[l];
                    }
                }
                let mut scores = [0f32; LANES];
                for l in 0..LANES {
                    scores[l] = norms[l] - 2.0 * acc[l];
                }
                let limit = state.best + state.slack;
                if scores.iter().any(|&s| s <= limit) {
                    self.offer_group(g, &scores, state);
                }
            }
        }
    }

    /// AVX2 version of [`scan_portable`](Self::scan_portable) for up to `TILE` queries:
    /// one accumulator register per query, fed by broadcast-FMA over the dimensions.
    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn scan_avx2(&self, queries: &[&[f32]], states: &mut [QueryState]) {
        use std::arch::x86_64::*;

        let dim = self.dim;
        let q = queries.len();
        debug_assert!(q <= TILE);
        // Queries transposed to zt[d * TILE + t]; missing queries stay zero.
        let mut zt = vec![0f32; dim * TILE];
        for (t, z) in queries.iter().enumerate() {
            for (d, &v) in z.iter().enumerate() {
                zt[d * TILE + t] = v;
            }
        }
        let two = _mm256_set1_ps(2.0);
        for g in 0..self.blocks.len() / (dim * LANES) {
            let block = self.blocks.as_ptr().add(g * dim * LANES);
            let mut acc = [_mm256_setzero_ps(); TILE];
            for d in 0..dim {
                let codes = _mm256_loadu_ps(block.add(d * LANES));
                let zd = zt.as_ptr().add(d * TILE);
                for (t, a) in acc.iter_mut().enumerate() {
                    *a = _mm256_fmadd_ps(_mm256_broadcast_ss(&*zd.add(t)), codes, *a);
                }
            }
            let norms = _mm256_loadu_ps(self.sq_norms.as_ptr().add(g * LANES));
            for (t, state) in states.iter_mut().enumerate().take(q) {
                let scores = _mm256_fnmadd_ps(two, acc[t], norms);
                let limit = _mm256_set1_ps(state.best + state.slack);
                if _mm256_movemask_ps(_mm256_cmp_ps::<_CMP_LE_OQ>(scores, limit)) != 0 {
                    let mut lanes = [0f32; LANES];
                    _mm256_storeu_ps(lanes.as_mut_ptr(), scores);
                    self.offer_group(g, &lanes, state);
                }
            }
        }
    }

    fn scan(&self, queries: &[&[f32]], states: &mut [QueryState]) {
        #[cfg(target_arch = "x86_64")]
        {
            if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
                // SAFETY: the required CPU features were detected at runtime, and every
                // pointer read stays inside `blocks`, `sq_norms` or a query of length `dim`.
                unsafe { self.scan_avx2(queries, states) };
                return;
            }
        }
        self.scan_portable(queries, states)
    }

    fn resolve(&self, z: &[f32], state: &QueryState) -> (u32, f64) {
        let mut best = (0u32, f64::INFINITY);
        for &(k, _) in &state.candidates {
            let d = exact_sq_dist(z, self.row(k as usize));
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }

    fn search_tile(&self, vectors: &[f32], out: &mut [(u32, f64)]) {
        let queries: Vec<&[f32]> = vectors.chunks_exact(self.dim).collect();
        let mut states: Vec<QueryState> = queries.iter().map(|z| self.state_for(z)).collect();
        self.scan(&queries, &mut states);
        for ((z, state), slot) in queries.iter().zip(&states).zip(out.iter_mut()) {
            *slot = self.resolve(z, state);
        }
    }

    fn check_queries(&self, vectors: &[f32]) -> Result<()> {
        if !vectors.len().is_multiple_of(self.dim) {
            return Err(Error::Shape(format!(
                "{} query values is not a multiple of dimension {}",
                vectors.len(),
                self.dim
            )));
        }
        check_finite(vectors)
    }

    /// Nearest code of a single vector.
    pub fn nearest(&self, v: &[f32]) -> Result<(usize, f64)> {
        if v.len() != self.dim {
            return Err(Error::Shape(format!(
                "query has dimension {}, codebook has {}",
                v.len(),
                self.dim
            )));
        }
        check_finite(v)?;
        let mut out = [(0u32, 0f64)];
        self.search_tile(v, &mut out);
        Ok((out[0].0 as usize, out[0].1))
    }

    /// Nearest codes of a row-major batch, parallelized over the current rayon pool.
    /// Results do not depend on how the batch is partitioned across workers.
    pub fn nearest_batch(&self, vectors: &[f32]) -> Result<Vec<(u32, f64)>> {
        self.check_queries(vectors)?;
        let n = vectors.len() / self.dim;
        let mut out = vec![(0u32, 0f64); n];
        out.par_chunks_mut(TILE)
            .zip(vectors.par_chunks(TILE * self.dim))
            .for_each(|(slots, tile)| self.search_tile(tile, slots));
        Ok(out)
    }

    /// Same as [`nearest_batch`](Self::nearest_batch) on the calling thread only.
    pub fn nearest_batch_serial(&self, vectors: &[f32]) -> Result<Vec<(u32, f64)>> {
        self.check_queries(vectors)?;
        let n = vectors.len() / self.dim;
        let mut out = vec![(0u32, 0f64); n];
        for (slots, tile) in out.chunks_mut(TILE).zip(vectors.chunks(TILE * self.dim)) {
            self.search_tile(tile, slots);
        }
        Ok(out)
    }
}
