//! Variance reduction ratio, distillation loss and reconstruction metrics.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;

use crate::codebook::HierarchicalCodebook;
use crate::error::{Error, Result};
use crate::features::{paired_features, reconstruct_image, reconstruct_low_band, GrayImage, PatchSpec};
use crate::grid::FeatureGrid;
use crate::quantizer::{HierarchicalQuantizer, NearestSearch};
use crate::rng::split_rng;
use crate::trainer::{compute_usage, kmeans, UsageStats};

const STREAM_RANDOM: u64 = 11;

/// How per-code variances are combined into `v_mean`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Weighting {
    /// Plain mean over codes with at least two patches.
    #[default]
    Unweighted,
    /// Total within-code sum of squares over the total variance denominator.
    Pooled,
}

/// Variance estimator used for both `v_mean` and `v_global`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum VarianceKind {
    /// Divides by `n − 1`.
    #[default]
    Sample,
    /// Divides by `n`.
    Population,
}

impl VarianceKind {
    fn denominator(self, n: usize) -> usize {
        match self {
            VarianceKind::Sample => n - 1,
            VarianceKind::Population => n,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VrrOptions {
    pub weighting: Weighting,
    pub variance: VarianceKind,
    /// Drops feature dimension 0 (the DCT DC coefficient).
    pub exclude_dc: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VrrReport {
    pub v_mean: f64,
    pub v_global: f64,
    pub vrr: f64,
    pub codes_counted: usize,
    pub total_patches: usize,
}

impl fmt::Display for VrrReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "vrr={} v_mean={} v_global={} codes_counted={} total_patches={}",
            self.vrr, self.v_mean, self.v_global, self.codes_counted, self.total_patches
        )
    }
}

/// Sum over dimensions of squared deviations from the group mean.
fn sum_sq_dev(rows: &[&[f32]], dims: std::ops::Range<usize>) -> f64 {
    let n = rows.len() as f64;
    let mut total = 0.0;
    for d in dims {
        let mean = rows.iter().map(|r| r[d] as f64).sum::<f64>() / n;
        total += rows.iter().map(|r| (r[d] as f64 - mean).powi(2)).sum::<f64>();
    }
    total
}

/// VRR of `assignments` over row-major `features` of dimension `dim`.
///
/// A code's variance is the mean over dimensions of its per-dimension variance.
/// Codes holding fewer than two patches do not contribute to `v_mean`.
pub fn vrr(assignments: &[u32], features: &[f32], dim: usize, opts: &VrrOptions) -> Result<VrrReport> {
    if dim == 0 || features.len() != assignments.len() * dim {
        return Err(Error::Shape(format!(
            "{} assignments do not align with {} feature values of dimension {dim}",
            assignments.len(),
            features.len()
        )));
    }
    let n = assignments.len();
    if n < 2 {
        return Err(Error::Data(format!("VRR needs at least 2 patches, got {n}")));
    }
    let first = usize::from(opts.exclude_dc);
    if first >= dim {
        return Err(Error::Argument("excluding DC leaves no feature dimensions".into()));
    }
    let used = (dim - first) as f64;
    let rows: Vec<&[f32]> = features.chunks_exact(dim).collect();

    let v_global = sum_sq_dev(&rows, first..dim) / (opts.variance.denominator(n) as f64 * used);
    if v_global == 0.0 {
        return Err(Error::Degenerate(
            "all patches are identical, global variance is 0".into(),
        ));
    }

    let codes = assignments.iter().map(|&a| a as usize + 1).max().unwrap_or(0);
    let mut groups: Vec<Vec<&[f32]>> = vec![Vec::new(); codes];
    for (&a, row) in assignments.iter().zip(&rows) {
        groups[a as usize].push(row);
    }
    // (within-code sum of squares, variance denominator) per code with ≥ 2 patches
    let mut per_code: Vec<(f64, usize)> = groups
        .par_iter()
        .filter(|g| g.len() >= 2)
        .map(|g| (sum_sq_dev(g, first..dim), opts.variance.denominator(g.len())))
        .collect();
    let codes_counted = per_code.len();
    if codes_counted == 0 {
        return Err(Error::Degenerate("no code holds at least 2 patches".into()));
    }

    let v_mean = match opts.weighting {
        Weighting::Unweighted => {
            let mut vars: Vec<f64> = per_code.iter().map(|&(ss, den)| ss / (den as f64 * used)).collect();
            // Fixed summation order keeps the result independent of code labels.
            vars.sort_by(f64::total_cmp);
            vars.iter().sum::<f64>() / codes_counted as f64
        }
        Weighting::Pooled => {
            per_code.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let ss: f64 = per_code.iter().map(|p| p.0).sum();
            // Singleton codes have zero spread but still count toward the population denominator.
            let singletons = groups.iter().filter(|g| g.len() == 1).count();
            let den = per_code.iter().map(|p| p.1).sum::<usize>()
                + if opts.variance == VarianceKind::Population {
                    singletons
                } else {
                    0
                };
            ss / (den as f64 * used)
        }
    };
    Ok(VrrReport {
        v_mean,
        v_global,
        vrr: 1.0 - v_mean / v_global,
        codes_counted,
        total_patches: n,
    })
}

/// Mean over vectors of `1 − cos(a, b)` plus the mean absolute elementwise error.
pub fn semantic_distill_loss(a: &[f32], b: &[f32], dim: usize) -> Result<f64> {
    if dim == 0 || a.len() != b.len() || !a.len().is_multiple_of(dim) {
        return Err(Error::Shape(format!(
            "vector sets of {} and {} values do not align at dimension {dim}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Data("empty vector sets".into()));
    }
    let vectors = a.len() / dim;
    let mut cos_term = 0.0;
    for (x, y) in a.chunks_exact(dim).zip(b.chunks_exact(dim)) {
        let (mut dot, mut nx, mut ny) = (0.0f64, 0.0f64, 0.0f64);
        for (&p, &q) in x.iter().zip(y) {
            dot += p as f64 * q as f64;
            nx += p as f64 * p as f64;
            ny += q as f64 * q as f64;
        }
        if nx == 0.0 || ny == 0.0 {
            return Err(Error::Domain("cosine similarity of a zero vector is undefined".into()));
        }
        cos_term += 1.0 - dot / (nx.sqrt() * ny.sqrt());
    }
    let mae = a.iter().zip(b).map(|(&p, &q)| (p as f64 - q as f64).abs()).sum::<f64>() / a.len() as f64;
    Ok(cos_term / vectors as f64 + mae)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionMetrics {
    pub mse: f64,
    /// `f64::INFINITY` when the images are identical.
    pub psnr: f64,
}

impl fmt::Display for ReconstructionMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "mse={} psnr={}", self.mse, self.psnr)
    }
}

/// MSE and PSNR for images in `[0, 1]`.
pub fn reconstruction_metrics(orig: &GrayImage, recon: &GrayImage) -> Result<ReconstructionMetrics> {
    if (orig.height(), orig.width()) != (recon.height(), recon.width()) {
        return Err(Error::Shape(format!(
            "{}x{} original vs {}x{} reconstruction",
            orig.height(),
            orig.width(),
            recon.height(),
            recon.width()
        )));
    }
    let mse = orig
        .data()
        .iter()
        .zip(recon.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / orig.data().len() as f64;
    let psnr = if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    };
    Ok(ReconstructionMetrics { mse, psnr })
}

/// Reconstructions of one image through both quantization paths.
#[derive(Debug, Clone)]
pub struct ReconstructionComparison {
    pub hierarchical: GrayImage,
    pub semantic_only: GrayImage,
    pub hierarchical_metrics: ReconstructionMetrics,
    pub semantic_only_metrics: ReconstructionMetrics,
}

/// Compares the IDCT of the hierarchical pixel codes against the IDCT of the
/// semantic codes alone, with every coefficient outside the low band zeroed.
pub fn compare_reconstructions(
    img: &GrayImage,
    hier: &HierarchicalCodebook,
    spec: PatchSpec,
    low: usize,
) -> Result<ReconstructionComparison> {
    let (sem, pix) = paired_features(img, spec, low)?;
    let q = HierarchicalQuantizer::new(hier)?.quantize(&sem, &pix)?;
    let hierarchical = reconstruct_image(&q.quantized_pix, spec)?;
    let semantic_only = reconstruct_low_band(&q.quantized_sem, spec, low)?;
    let target = crate::features::center_crop(img, spec)?;
    Ok(ReconstructionComparison {
        hierarchical_metrics: reconstruction_metrics(&target, &hierarchical)?,
        semantic_only_metrics: reconstruction_metrics(&target, &semantic_only)?,
        hierarchical,
        semantic_only,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VrrExperimentConfig {
    pub spec: PatchSpec,
    pub low: usize,
    /// One random-assignment baseline per seed.
    pub seeds: Vec<u64>,
    pub options: VrrOptions,
    /// Lloyd iterations for the flat `K·m` k-means codebook.
    pub kmeans_iters: usize,
    pub kmeans_seed: u64,
}

impl Default for VrrExperimentConfig {
    fn default() -> Self {
        Self {
            spec: PatchSpec::default(),
            low: 4,
            seeds: vec![0, 1, 2, 3, 4],
            options: VrrOptions::default(),
            kmeans_iters: 25,
            kmeans_seed: 0,
        }
    }
}

/// VRR under four assignment schemes on the same corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct VrrExperimentReport {
    pub k: usize,
    pub m: usize,
    pub total_patches: usize,
    /// Uniform random assignment to `K` codes, one entry per seed.
    pub random: Vec<(u64, VrrReport)>,
    pub random_mean: f64,
    /// Population standard deviation of the random VRR across seeds.
    pub random_spread: f64,
    pub semantic: VrrReport,
    pub flat_kmeans: VrrReport,
    pub hierarchical: VrrReport,
    pub semantic_usage: UsageStats,
    pub flat_kmeans_usage: UsageStats,
    pub hierarchical_usage: UsageStats,
}

impl VrrExperimentReport {
    pub fn random_below_semantic(&self) -> bool {
        self.random.iter().all(|(_, r)| r.vrr < self.semantic.vrr)
    }

    pub fn semantic_below_hierarchical(&self) -> bool {
        self.semantic.vrr < self.hierarchical.vrr
    }

    /// `key=value` lines in a fixed order.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        put("k", self.k.to_string());
        put("m", self.m.to_string());
        put("total_patches", self.total_patches.to_string());
        for (seed, r) in &self.random {
            put(&format!("random.seed{seed}.vrr"), r.vrr.to_string());
        }
        put("random.vrr_mean", self.random_mean.to_string());
        put("random.vrr_spread", self.random_spread.to_string());
        for (name, r, usage) in self.schemes() {
            put(&format!("{name}.vrr"), r.vrr.to_string());
            put(&format!("{name}.v_mean"), r.v_mean.to_string());
            put(&format!("{name}.v_global"), r.v_global.to_string());
            put(&format!("{name}.codes_counted"), r.codes_counted.to_string());
            put(&format!("{name}.used_codes"), usage.used_codes().to_string());
            put(&format!("{name}.usage_percent"), usage.usage_percent.to_string());
        }
        put("ordering.random_lt_semantic", self.random_below_semantic().to_string());
        put(
            "ordering.semantic_lt_hierarchical",
            self.semantic_below_hierarchical().to_string(),
        );
        out
    }

    /// One row per scheme, fields joined by `delim`.
    pub fn to_table(&self, delim: char) -> String {
        let row = |fields: &[String]| {
            let mut s = fields.join(&delim.to_string());
            s.push('\n');
            s
        };
        let mut out = row(&[
            "scheme",
            "vrr",
            "spread",
            "v_mean",
            "v_global",
            "codes_counted",
            "usage_percent",
        ]
        .map(String::from));
        let random_v_mean = self.random.iter().map(|r| r.1.v_mean).sum::<f64>() / self.random.len() as f64;
        out.push_str(&row(&[
            "random".into(),
            self.random_mean.to_string(),
            self.random_spread.to_string(),
            random_v_mean.to_string(),
            self.semantic.v_global.to_string(),
            "-".into(),
            "-".into(),
        ]));
        for (name, r, usage) in self.schemes() {
            out.push_str(&row(&[
                name.into(),
                r.vrr.to_string(),
                "0".into(),
                r.v_mean.to_string(),
                r.v_global.to_string(),
                r.codes_counted.to_string(),
                usage.usage_percent.to_string(),
            ]));
        }
        out
    }

    fn schemes(&self) -> [(&'static str, &VrrReport, &UsageStats); 3] {
        [
            ("semantic", &self.semantic, &self.semantic_usage),
            ("flat_kmeans", &self.flat_kmeans, &self.flat_kmeans_usage),
            ("hierarchical", &self.hierarchical, &self.hierarchical_usage),
        ]
    }
}

/// Runs the four-scheme VRR comparison on the pixel DCT features of `corpus`.
pub fn vrr_experiment(
    corpus: &[GrayImage],
    hier: &HierarchicalCodebook,
    cfg: &VrrExperimentConfig,
) -> Result<VrrExperimentReport> {
    if corpus.is_empty() {
        return Err(Error::Data("empty corpus".into()));
    }
    if cfg.seeds.is_empty() {
        return Err(Error::Argument("at least one seed is required".into()));
    }
    let pairs: Vec<(FeatureGrid, FeatureGrid)> = corpus
        .par_iter()
        .map(|img| paired_features(img, cfg.spec, cfg.low))
        .collect::<Result<_>>()?;
    let quantizer = HierarchicalQuantizer::new(hier)?;
    let dim = cfg.spec.dim();
    let mut features = Vec::new();
    let mut sem_idx = Vec::new();
    let mut flat_idx = Vec::new();
    for (sem, pix) in &pairs {
        let q = quantizer.quantize(sem, pix)?;
        features.extend_from_slice(pix.data());
        sem_idx.extend_from_slice(q.tokens.sem_idx());
        flat_idx.extend_from_slice(q.tokens.flat_idx());
    }
    let n = sem_idx.len();
    let (k, m) = (hier.k(), hier.m());

    let random = cfg
        .seeds
        .iter()
        .map(|&seed| {
            let mut rng = split_rng(seed, &[STREAM_RANDOM]);
            let assignment: Vec<u32> = (0..n).map(|_| rng.random_range(0..k as u32)).collect();
            Ok((seed, vrr(&assignment, &features, dim, &cfg.options)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let random_mean = random.iter().map(|r| r.1.vrr).sum::<f64>() / random.len() as f64;
    let random_spread =
        (random.iter().map(|r| (r.1.vrr - random_mean).powi(2)).sum::<f64>() / random.len() as f64).sqrt();

    let flat_codes = k * m;
    let centers = kmeans(&features, dim, flat_codes, cfg.kmeans_iters, cfg.kmeans_seed)?;
    let flat_assign: Vec<u32> = NearestSearch::new(&centers, dim)?
        .nearest_batch(&features)?
        .into_iter()
        .map(|a| a.0)
        .collect();

    Ok(VrrExperimentReport {
        k,
        m,
        total_patches: n,
        random,
        random_mean,
        random_spread,
        semantic: vrr(&sem_idx, &features, dim, &cfg.options)?,
        flat_kmeans: vrr(&flat_assign, &features, dim, &cfg.options)?,
        hierarchical: vrr(&flat_idx, &features, dim, &cfg.options)?,
        semantic_usage: compute_usage(&sem_idx, k),
        flat_kmeans_usage: compute_usage(&flat_assign, flat_codes),
        hierarchical_usage: compute_usage(&flat_idx, flat_codes),
    })
}
