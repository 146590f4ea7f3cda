//! Two-stage codebook training.
//!
//! Stage one trains the semantic codebook with EMA updates and returns it frozen.
//! Stage two routes every pixel vector through the frozen semantic codebook and
//! EMA-trains each pixel sub-codebook only on the vectors routed to it.
//!
//! Within a batch, assignment runs in parallel but accumulation of per-code counts
//! and sums is serial in data order, so trained codebooks do not depend on the
//! number of worker threads.

use std::collections::HashSet;
use std::fmt;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::codebook::{check_momentum, CodeTable, HierarchicalCodebook, PixelSubCodebook, SemanticCodebook};
use crate::error::{Error, Result};
use crate::grid::FeatureGrid;
use crate::quantizer::{exact_sq_dist, NearestSearch, SemanticQuantizer};
use crate::rng::split_rng;

// Stream tags for `split_rng`.
const STREAM_INIT: u64 = 1;
const STREAM_RESERVOIR: u64 = 2;
const STREAM_SUB: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMethod {
    /// D²-weighted seeding.
    #[default]
    KMeansPlusPlus,
    /// Uniform sampling without replacement.
    RandomSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub k: usize,
    pub m: usize,
    pub momentum: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Consecutive unused epochs after which a code is revived.
    pub dead_code_epochs: usize,
    pub init: InitMethod,
    /// Upper bound on the number of vectors kept as revival candidates.
    pub reservoir_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 16384,
            m: 12,
            momentum: 0.99,
            epochs: 10,
            batch_size: 1024,
            seed: 0,
            dead_code_epochs: 2,
            init: InitMethod::KMeansPlusPlus,
            reservoir_size: 4096,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_momentum(self.momentum)?;
        for (name, v) in [
            ("k", self.k),
            ("m", self.m),
            ("batch_size", self.batch_size),
            ("reservoir_size", self.reservoir_size),
        ] {
            if v == 0 {
                return Err(Error::Argument(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Per-code assignment counts over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageStats {
    pub assigned_counts: Vec<u64>,
    pub usage_percent: f64,
}

impl UsageStats {
    pub fn from_counts(assigned_counts: Vec<u64>) -> Self {
        let used = assigned_counts.iter().filter(|&&c| c > 0).count();
        let usage_percent = if assigned_counts.is_empty() {
            0.0
        } else {
            100.0 * used as f64 / assigned_counts.len() as f64
        };
        Self {
            assigned_counts,
            usage_percent,
        }
    }

    pub fn used_codes(&self) -> usize {
        self.assigned_counts.iter().filter(|&&c| c > 0).count()
    }
}

/// Counts how often each of `k` codes occurs in `assignments`.
///
/// Panics if an assignment is not below `k`.
pub fn compute_usage(assignments: &[u32], k: usize) -> UsageStats {
    let mut counts = vec![0u64; k];
    for &a in assignments {
        counts[a as usize] += 1;
    }
    UsageStats::from_counts(counts)
}

fn canonical_bits(row: &[f32]) -> Vec<u32> {
    // Adding 0.0 maps -0.0 to +0.0 so equal vectors hash equally.
    row.iter().map(|&v| (v + 0.0).to_bits()).collect()
}

fn distinct_at_least(samples: &[f32], dim: usize, k: usize) -> bool {
    let mut seen = HashSet::new();
    for row in samples.chunks_exact(dim) {
        seen.insert(canonical_bits(row));
        if seen.len() >= k {
            return true;
        }
    }
    false
}

/// D²-sampling that stops early when every remaining sample coincides with a chosen
/// center. Returns the chosen sample indices.
fn kmeanspp_indices(samples: &[f32], dim: usize, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = samples.len() / dim;
    let row = |i: usize| &samples[i * dim..(i + 1) * dim];
    let first = rng.random_range(0..n);
    let mut chosen = vec![first];
    let mut min_d2: Vec<f64> = (0..n).map(|i| exact_sq_dist(row(i), row(first))).collect();
    while chosen.len() < k {
        let total: f64 = min_d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in min_d2.iter().enumerate() {
            acc += w;
            if acc > target && w > 0.0 {
                pick = Some(i);
                break;
            }
        }
        // Rounding can leave `target` at the very end of the cumulative sum.
        let pick = pick.unwrap_or_else(|| min_d2.iter().rposition(|&w| w > 0.0).unwrap());
        chosen.push(pick);
        let c = row(pick);
        for (i, d) in min_d2.iter_mut().enumerate() {
            *d = d.min(exact_sq_dist(row(i), c));
        }
    }
    chosen
}

fn check_samples(samples: &[f32], dim: usize) -> Result<usize> {
    if dim == 0 || !samples.len().is_multiple_of(dim) {
        return Err(Error::Shape(format!(
            "{} sample values is not a multiple of dimension {dim}",
            samples.len()
        )));
    }
    if samples.is_empty() {
        return Err(Error::Init("no samples to initialize from".into()));
    }
    Ok(samples.len() / dim)
}

fn gather(samples: &[f32], dim: usize, indices: &[usize]) -> Vec<f32> {
    let mut out = Vec::with_capacity(indices.len() * dim);
    for &i in indices {
        out.extend_from_slice(&samples[i * dim..(i + 1) * dim]);
    }
    out
}

/// Chooses `k` initial code vectors from `samples` (row-major, `dim` wide).
///
/// K-means++ requires at least `k` distinct samples. Random sampling draws without
/// replacement and falls back to drawing with replacement once samples run out.
pub fn init_codebook(
    samples: &[f32],
    dim: usize,
    k: usize,
    method: InitMethod,
    rng: &mut impl Rng,
) -> Result<Vec<f32>> {
    let n = check_samples(samples, dim)?;
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    let indices = match method {
        InitMethod::KMeansPlusPlus => {
            if !distinct_at_least(samples, dim, k) {
                return Err(Error::Init(format!(
                    "k-means++ needs {k} distinct samples, fewer are available"
                )));
            }
            kmeanspp_indices(samples, dim, k, rng)
        }
        InitMethod::RandomSample => random_indices(n, k, rng),
    };
    Ok(gather(samples, dim, &indices))
}

fn random_indices(n: usize, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut indices = index::sample(rng, n, k.min(n)).into_vec();
    while indices.len() < k {
        indices.push(rng.random_range(0..n));
    }
    indices
}

/// Like [`init_codebook`] but never fails for lack of distinct samples: the chosen
/// centers are repeated to fill the table, and the repeats are later revived.
fn init_padded(samples: &[f32], dim: usize, k: usize, method: InitMethod, rng: &mut impl Rng) -> Vec<f32> {
    let n = samples.len() / dim;
    let mut indices = match method {
        InitMethod::KMeansPlusPlus => kmeanspp_indices(samples, dim, k, rng),
        InitMethod::RandomSample => random_indices(n, k, rng),
    };
    let distinct = indices.len();
    for i in distinct..k {
        indices.push(indices[i % distinct]);
    }
    gather(samples, dim, &indices)
}

/// One EMA step on a code table: every code with `N_k > 0` assigned vectors moves to
/// `momentum·c_k + (1 − momentum)·mean_k`; its cluster size and running sum decay the
/// same way toward `N_k` and `Σz`. Codes without assignments are left untouched.
pub fn ema_update_table(table: &mut CodeTable, momentum: f32, batch: &[f32], assignments: &[u32]) -> Result<()> {
    check_momentum(momentum)?;
    let dim = table.dim();
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    if batch.len() != assignments.len() * dim {
        return Err(Error::Shape(format!(
            "{} batch values for {} assignments of dimension {dim}",
            batch.len(),
            assignments.len()
        )));
    }
    if let Some(&bad) = assignments.iter().find(|&&a| a as usize >= table.len()) {
        return Err(Error::Index(format!("assignment {bad} not below {}", table.len())));
    }
    let (counts, sums) = accumulate(table.len(), dim, batch, assignments);
    apply_ema(table, momentum as f64, &counts, &sums);
    Ok(())
}

fn accumulate(len: usize, dim: usize, batch: &[f32], assignments: &[u32]) -> (Vec<u64>, Vec<f64>) {
    let mut counts = vec![0u64; len];
    let mut sums = vec![0f64; len * dim];
    for (v, &a) in batch.chunks_exact(dim).zip(assignments) {
        let a = a as usize;
        counts[a] += 1;
        for (s, &x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(v) {
            *s += x as f64;
        }
    }
    (counts, sums)
}

fn apply_ema(table: &mut CodeTable, momentum: f64, counts: &[u64], sums: &[f64]) {
    let dim = table.dim();
    let keep = 1.0 - momentum;
    for (code, &n) in counts.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let (vector, size, ema_sum) = table.code_state_mut(code);
        let sum = &sums[code * dim..(code + 1) * dim];
        for ((c, e), &s) in vector.iter_mut().zip(ema_sum.iter_mut()).zip(sum) {
            *c = (momentum * *c as f64 + keep * (s / n as f64)) as f32;
            *e = (momentum * *e as f64 + keep * s) as f32;
        }
        *size = (momentum * *size as f64 + keep * n as f64) as f32;
    }
}

/// EMA step on the semantic codebook. Fails once the codebook is frozen.
pub fn ema_update(cb: &mut SemanticCodebook, batch: &[f32], assignments: &[u32]) -> Result<()> {
    let momentum = cb.momentum();
    ema_update_table(cb.table_mut()?, momentum, batch, assignments)
}

/// Tracks how many consecutive epochs each code went unused.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeadCodeTracker {
    idle_epochs: Vec<usize>,
    threshold: usize,
}

impl DeadCodeTracker {
    pub fn new(codes: usize, threshold: usize) -> Self {
        Self {
            idle_epochs: vec![0; codes],
            threshold,
        }
    }

    pub fn observe(&mut self, usage: &UsageStats) {
        for (idle, &count) in self.idle_epochs.iter_mut().zip(&usage.assigned_counts) {
            *idle = if count == 0 { *idle + 1 } else { 0 };
        }
    }

    /// Codes idle for at least the threshold. A threshold of 0 disables revival.
    pub fn dead_codes(&self) -> Vec<usize> {
        if self.threshold == 0 {
            return Vec::new();
        }
        self.idle_epochs
            .iter()
            .enumerate()
            .filter(|(_, &idle)| idle >= self.threshold)
            .map(|(i, _)| i)
            .collect()
    }

    fn revived(&mut self, code: usize) {
        self.idle_epochs[code] = 0;
    }
}

/// Resets every dead code to the reservoir vector farthest from its nearest current
/// code, one code at a time so that no two codes land on the same vector. EMA state
/// of revived codes is cleared. Returns the number of codes revived.
pub fn reinit_dead_codes(table: &mut CodeTable, tracker: &mut DeadCodeTracker, reservoir: &[f32]) -> Result<usize> {
    let dead = tracker.dead_codes();
    if dead.is_empty() {
        return Ok(0);
    }
    let dim = table.dim();
    if reservoir.is_empty() || !reservoir.len().is_multiple_of(dim) {
        return Err(Error::Argument(format!(
            "reservoir of {} values cannot supply vectors of dimension {dim}",
            reservoir.len()
        )));
    }
    let search = NearestSearch::new(table.vectors(), dim)?;
    let mut min_d2: Vec<f64> = search
        .nearest_batch_serial(reservoir)?
        .into_iter()
        .map(|(_, d)| d)
        .collect();
    let mut revived = 0;
    for code in dead {
        let (far, &far_d2) =
            min_d2.iter().enumerate().fold(
                (0, &f64::NEG_INFINITY),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
        if far_d2 <= 0.0 {
            break;
        }
        let vector = reservoir[far * dim..(far + 1) * dim].to_vec();
        table.reset_code(code, &vector);
        tracker.revived(code);
        for (d, row) in min_d2.iter_mut().zip(reservoir.chunks_exact(dim)) {
            *d = d.min(exact_sq_dist(row, &vector));
        }
        revived += 1;
    }
    Ok(revived)
}

/// Metrics of one training epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean squared quantization error over the epoch's data after the EMA pass.
    pub distortion: f64,
    pub usage_percent: f64,
    pub revived: usize,
}

impl fmt::Display for EpochMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} distortion={:.9e} usage_percent={:.4} revived_count={}",
            self.epoch, self.distortion, self.usage_percent, self.revived
        )
    }
}

struct EpochOutcome {
    sq_dist_sum: f64,
    counts: Vec<u64>,
    revived: usize,
}

/// EMA training state of one code table.
struct TableTrainer {
    table: CodeTable,
    tracker: DeadCodeTracker,
}

impl TableTrainer {
    fn new(table: CodeTable, dead_code_epochs: usize) -> Self {
        let len = table.len();
        Self {
            table,
            tracker: DeadCodeTracker::new(len, dead_code_epochs),
        }
    }

    fn assign(&self, data: &[f32], parallel: bool) -> Result<Vec<(u32, f64)>> {
        let search = NearestSearch::new(self.table.vectors(), self.table.dim())?;
        if parallel {
            search.nearest_batch(data)
        } else {
            search.nearest_batch_serial(data)
        }
    }

    fn run_epoch(
        &mut self,
        data: &[f32],
        cfg: &TrainConfig,
        rng: &mut impl Rng,
        parallel: bool,
    ) -> Result<EpochOutcome> {
        let dim = self.table.dim();
        for batch in data.chunks(cfg.batch_size * dim) {
            let assignments: Vec<u32> = self.assign(batch, parallel)?.into_iter().map(|a| a.0).collect();
            let (counts, sums) = accumulate(self.table.len(), dim, batch, &assignments);
            apply_ema(&mut self.table, cfg.momentum as f64, &counts, &sums);
        }

        let eval = self.assign(data, parallel)?;
        let sq_dist_sum: f64 = eval.iter().map(|a| a.1).sum();
        let assignments: Vec<u32> = eval.iter().map(|a| a.0).collect();
        let usage = compute_usage(&assignments, self.table.len());
        self.tracker.observe(&usage);

        let n = data.len() / dim;
        let revived = if self.tracker.dead_codes().is_empty() {
            0
        } else if n <= cfg.reservoir_size {
            reinit_dead_codes(&mut self.table, &mut self.tracker, data)?
        } else {
            let mut picks = index::sample(rng, n, cfg.reservoir_size).into_vec();
            picks.sort_unstable();
            let reservoir = gather(data, dim, &picks);
            reinit_dead_codes(&mut self.table, &mut self.tracker, &reservoir)?
        };
        Ok(EpochOutcome {
            sq_dist_sum,
            counts: usage.assigned_counts,
            revived,
        })
    }
}

fn flatten_stream(features: &[FeatureGrid]) -> Result<(Vec<f32>, usize)> {
    let first = features
        .first()
        .ok_or_else(|| Error::Data("no feature grids to train on".into()))?;
    let dim = first.dim();
    if let Some(bad) = features.iter().find(|g| g.dim() != dim) {
        return Err(Error::Data(format!(
            "feature dimension changes within the stream: {dim} then {}",
            bad.dim()
        )));
    }
    let mut data = Vec::with_capacity(features.iter().map(|g| g.data().len()).sum());
    for g in features {
        data.extend_from_slice(g.data());
    }
    Ok((data, dim))
}

/// Trained semantic codebook (frozen) with its per-epoch metrics.
#[derive(Debug, Clone)]
pub struct SemanticTrainReport {
    pub codebook: SemanticCodebook,
    pub metrics: Vec<EpochMetrics>,
}

/// Stage one: EMA training of a `cfg.k`-code semantic codebook, initialized from the
/// data with `cfg.init`. The returned codebook is frozen.
pub fn train_semantic_codebook(
    features: &[FeatureGrid],
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<SemanticTrainReport> {
    cfg.validate()?;
    let (data, dim) = flatten_stream(features)?;
    let mut rng = split_rng(cfg.seed, &[STREAM_INIT]);
    let vectors = init_codebook(&data, dim, cfg.k, cfg.init, &mut rng)?;
    train_semantic_inner(data, dim, CodeTable::new(cfg.k, dim, vectors)?, cfg, on_epoch)
}

/// Stage one starting from explicit initial code vectors instead of `cfg.init`.
pub fn train_semantic_codebook_from(
    features: &[FeatureGrid],
    initial: CodeTable,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<SemanticTrainReport> {
    cfg.validate()?;
    let (data, dim) = flatten_stream(features)?;
    if initial.dim() != dim {
        return Err(Error::Shape(format!(
            "initial codes have dimension {}, features have {dim}",
            initial.dim()
        )));
    }
    train_semantic_inner(data, dim, initial, cfg, on_epoch)
}

fn train_semantic_inner(
    data: Vec<f32>,
    dim: usize,
    table: CodeTable,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<SemanticTrainReport> {
    let n = data.len() / dim;
    let mut trainer = TableTrainer::new(table, cfg.dead_code_epochs);
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut rng = split_rng(cfg.seed, &[STREAM_RESERVOIR, epoch as u64]);
        let outcome = trainer.run_epoch(&data, cfg, &mut rng, true)?;
        let usage = UsageStats::from_counts(outcome.counts);
        let m = EpochMetrics {
            epoch,
            distortion: outcome.sq_dist_sum / n as f64,
            usage_percent: usage.usage_percent,
            revived: outcome.revived,
        };
        on_epoch(&m);
        metrics.push(m);
    }
    let mut codebook = SemanticCodebook::new(trainer.table, cfg.momentum, false)?;
    codebook.freeze();
    Ok(SemanticTrainReport { codebook, metrics })
}

/// Hierarchical codebook produced by stage two with per-epoch metrics. Usage is
/// measured over all `K·m` flat codes.
#[derive(Debug, Clone)]
pub struct PixelTrainReport {
    pub codebook: HierarchicalCodebook,
    pub metrics: Vec<EpochMetrics>,
}

/// Pixel vectors grouped by the semantic code their cell quantizes to, in data order.
pub fn route_by_semantic(
    sem_features: &[FeatureGrid],
    pix_features: &[FeatureGrid],
    sem_cb: &SemanticCodebook,
) -> Result<Vec<Vec<f32>>> {
    if sem_features.len() != pix_features.len() {
        return Err(Error::Shape(format!(
            "{} semantic grids but {} pixel grids",
            sem_features.len(),
            pix_features.len()
        )));
    }
    if sem_features.is_empty() {
        return Err(Error::Data("no feature grids to train on".into()));
    }
    let dim_pix = pix_features[0].dim();
    let quantizer = SemanticQuantizer::new(sem_cb)?;
    let mut routed = vec![Vec::new(); sem_cb.k()];
    for (s, p) in sem_features.iter().zip(pix_features) {
        if !s.same_layout(p) {
            return Err(Error::Shape(format!(
                "semantic grid {}x{} is not paired with pixel grid {}x{}",
                s.height(),
                s.width(),
                p.height(),
                p.width()
            )));
        }
        if p.dim() != dim_pix {
            return Err(Error::Data(format!(
                "pixel feature dimension changes within the stream: {dim_pix} then {}",
                p.dim()
            )));
        }
        for ((code, _), v) in quantizer.assign(s)?.into_iter().zip(p.iter_cells()) {
            routed[code as usize].extend_from_slice(v);
        }
    }
    Ok(routed)
}

/// Stage two: trains one pixel sub-codebook per semantic code on the pixel vectors
/// routed to it. `sem_cb` must be frozen and is copied into the result unchanged.
pub fn train_pixel_subcodebooks(
    sem_features: &[FeatureGrid],
    pix_features: &[FeatureGrid],
    sem_cb: &SemanticCodebook,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<PixelTrainReport> {
    if !sem_cb.is_frozen() {
        return Err(Error::Contract(
            "pixel sub-codebooks can only be trained against a frozen semantic codebook".into(),
        ));
    }
    cfg.validate()?;
    let routed = route_by_semantic(sem_features, pix_features, sem_cb)?;
    let dim_pix = pix_features[0].dim();
    let total: usize = routed.iter().map(|r| r.len() / dim_pix).sum();

    let mut trainers = routed
        .par_iter()
        .enumerate()
        .map(|(code, data)| {
            let table = if data.is_empty() {
                CodeTable::zeros(cfg.m, dim_pix)?
            } else {
                let mut rng = split_rng(cfg.seed, &[STREAM_SUB, code as u64, STREAM_INIT]);
                CodeTable::new(cfg.m, dim_pix, init_padded(data, dim_pix, cfg.m, cfg.init, &mut rng))?
            };
            Ok(TableTrainer::new(table, cfg.dead_code_epochs))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let outcomes = trainers
            .par_iter_mut()
            .zip(routed.par_iter())
            .enumerate()
            .map(|(code, (trainer, data))| {
                if data.is_empty() {
                    return Ok(None);
                }
                let mut rng = split_rng(cfg.seed, &[STREAM_SUB, code as u64, STREAM_RESERVOIR, epoch as u64]);
                trainer.run_epoch(data, cfg, &mut rng, false).map(Some)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut sq = 0.0;
        let mut counts = Vec::with_capacity(trainers.len() * cfg.m);
        let mut revived = 0;
        for outcome in &outcomes {
            match outcome {
                Some(o) => {
                    sq += o.sq_dist_sum;
                    counts.extend_from_slice(&o.counts);
                    revived += o.revived;
                }
                None => counts.extend(std::iter::repeat_n(0, cfg.m)),
            }
        }
        let m = EpochMetrics {
            epoch,
            distortion: if total > 0 { sq / total as f64 } else { 0.0 },
            usage_percent: UsageStats::from_counts(counts).usage_percent,
            revived,
        };
        on_epoch(&m);
        metrics.push(m);
    }

    let subs = trainers.into_iter().map(|t| PixelSubCodebook::new(t.table)).collect();
    let codebook = HierarchicalCodebook::new(sem_cb.clone(), subs, cfg.momentum)?;
    Ok(PixelTrainReport { codebook, metrics })
}

/// Lloyd's k-means with k-means++ seeding; empty clusters keep their previous
/// center. Stops after `max_iters` or when assignments no longer change.
pub fn kmeans(data: &[f32], dim: usize, k: usize, max_iters: usize, seed: u64) -> Result<Vec<f32>> {
    check_samples(data, dim)?;
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    let mut rng = split_rng(seed, &[STREAM_INIT]);
    let mut centers = init_padded(data, dim, k, InitMethod::KMeansPlusPlus, &mut rng);
    let mut previous: Option<Vec<u32>> = None;
    for _ in 0..max_iters {
        let search = NearestSearch::new(&centers, dim)?;
        let assignments: Vec<u32> = search.nearest_batch(data)?.into_iter().map(|a| a.0).collect();
        if previous.as_ref() == Some(&assignments) {
            break;
        }
        let (counts, sums) = accumulate(k, dim, data, &assignments);
        for (code, &n) in counts.iter().enumerate() {
            if n > 0 {
                for (c, &s) in centers[code * dim..(code + 1) * dim]
                    .iter_mut()
                    .zip(&sums[code * dim..(code + 1) * dim])
                {
                    *c = (s / n as f64) as f32;
                }
            }
        }
        previous = Some(assignments);
    }
    Ok(centers)
}
