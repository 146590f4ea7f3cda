//! Hierarchical quantization: semantic argmin, sub-codebook selection by semantic
//! index, and dequantization into concatenated code vectors.

mod kernel;

pub use kernel::{exact_sq_dist, nearest_code, NearestSearch};

use rayon::prelude::*;

use crate::codebook::{HierarchicalCodebook, SemanticCodebook};
use crate::error::{Error, Result};
use crate::grid::{concat_features, FeatureGrid, IndexGrid, TokenGrid};

/// Optional preprocessing of vectors before the semantic search.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Normalization {
    /// Plain squared Euclidean distance.
    #[default]
    None,
    /// Queries and codes are L2-normalized before comparison.
    L2,
}

fn l2_normalized(data: &[f32], dim: usize) -> Vec<f32> {
    let mut out = data.to_vec();
    for v in out.chunks_exact_mut(dim) {
        let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x = (*x as f64 / norm) as f32);
        }
    }
    out
}

/// Result of quantizing one pair of semantic/pixel grids.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationResult {
    pub tokens: TokenGrid,
    pub quantized_sem: FeatureGrid,
    pub quantized_pix: FeatureGrid,
    pub quantized_concat: FeatureGrid,
    /// Per-cell squared distance of the semantic stage.
    pub sem_sq_dist: Vec<f64>,
    /// Per-cell squared distance of the pixel stage.
    pub pix_sq_dist: Vec<f64>,
}

/// Semantic codebook prepared for repeated searches.
#[derive(Debug, Clone)]
pub struct SemanticQuantizer {
    search: NearestSearch,
    normalization: Normalization,
}

impl SemanticQuantizer {
    pub fn new(cb: &SemanticCodebook) -> Result<Self> {
        Self::with_normalization(cb, Normalization::None)
    }

    pub fn with_normalization(cb: &SemanticCodebook, normalization: Normalization) -> Result<Self> {
        let rows = match normalization {
            Normalization::None => cb.vectors().to_vec(),
            Normalization::L2 => l2_normalized(cb.vectors(), cb.dim()),
        };
        Ok(Self {
            search: NearestSearch::new(&rows, cb.dim())?,
            normalization,
        })
    }

    pub fn dim(&self) -> usize {
        self.search.dim()
    }

    /// Nearest semantic code index and squared distance for each cell.
    pub fn assign(&self, z: &FeatureGrid) -> Result<Vec<(u32, f64)>> {
        if z.dim() != self.search.dim() {
            return Err(Error::Shape(format!(
                "semantic features have dimension {}, codebook has {}",
                z.dim(),
                self.search.dim()
            )));
        }
        match self.normalization {
            Normalization::None => self.search.nearest_batch(z.data()),
            Normalization::L2 => self.search.nearest_batch(&l2_normalized(z.data(), z.dim())),
        }
    }
}

fn gather_rows<'a>(indices: &[u32], row: impl Fn(u32) -> &'a [f32], dim: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(indices.len() * dim);
    for &i in indices {
        out.extend_from_slice(row(i));
    }
    out
}

/// Quantizes every cell against the semantic codebook.
pub fn quantize_semantic(z: &FeatureGrid, cb: &SemanticCodebook) -> Result<(IndexGrid, FeatureGrid)> {
    let assigned = SemanticQuantizer::new(cb)?.assign(z)?;
    semantic_outputs(z, cb, &assigned)
}

fn semantic_outputs(
    z: &FeatureGrid,
    cb: &SemanticCodebook,
    assigned: &[(u32, f64)],
) -> Result<(IndexGrid, FeatureGrid)> {
    let indices: Vec<u32> = assigned.iter().map(|a| a.0).collect();
    let data = gather_rows(&indices, |i| cb.row(i as usize), cb.dim());
    Ok((
        IndexGrid::new(z.height(), z.width(), indices)?,
        FeatureGrid::new(z.height(), z.width(), cb.dim(), data)?,
    ))
}

fn pixel_stage(z_pix: &FeatureGrid, hier: &HierarchicalCodebook, sem_idx: &IndexGrid) -> Result<Vec<(u32, f64)>> {
    if z_pix.dim() != hier.dim_pix() {
        return Err(Error::Shape(format!(
            "pixel features have dimension {}, sub-codebooks have {}",
            z_pix.dim(),
            hier.dim_pix()
        )));
    }
    if sem_idx.height != z_pix.height() || sem_idx.width != z_pix.width() {
        return Err(Error::Shape(format!(
            "semantic index grid is {}x{}, pixel grid is {}x{}",
            sem_idx.height,
            sem_idx.width,
            z_pix.height(),
            z_pix.width()
        )));
    }
    let k = hier.k();
    if let Some(&bad) = sem_idx.indices.iter().find(|&&i| i as usize >= k) {
        return Err(Error::Index(format!("semantic index {bad} not below K={k}")));
    }
    let dim = hier.dim_pix();
    Ok(z_pix
        .data()
        .par_chunks(dim)
        .zip(sem_idx.indices.par_iter())
        .map(|(v, &i)| {
            let (j, d) = kernel::nearest_unchecked(v, hier.sub(i as usize).vectors(), dim);
            (j as u32, d)
        })
        .collect())
}

/// Quantizes each pixel vector within the sub-codebook selected by its cell's
/// semantic index. No other sub-codebook is ever searched.
pub fn quantize_pixel(
    z_pix: &FeatureGrid,
    hier: &HierarchicalCodebook,
    sem_idx: &IndexGrid,
) -> Result<(IndexGrid, FeatureGrid)> {
    let assigned = pixel_stage(z_pix, hier, sem_idx)?;
    pixel_outputs(z_pix, hier, sem_idx, &assigned)
}

fn pixel_outputs(
    z_pix: &FeatureGrid,
    hier: &HierarchicalCodebook,
    sem_idx: &IndexGrid,
    assigned: &[(u32, f64)],
) -> Result<(IndexGrid, FeatureGrid)> {
    let pix: Vec<u32> = assigned.iter().map(|a| a.0).collect();
    let mut data = Vec::with_capacity(pix.len() * hier.dim_pix());
    for (&i, &j) in sem_idx.indices.iter().zip(&pix) {
        data.extend_from_slice(hier.sub(i as usize).row(j as usize));
    }
    Ok((
        IndexGrid::new(z_pix.height(), z_pix.width(), pix)?,
        FeatureGrid::new(z_pix.height(), z_pix.width(), hier.dim_pix(), data)?,
    ))
}

/// Hierarchical codebook prepared for repeated quantization.
#[derive(Debug, Clone)]
pub struct HierarchicalQuantizer<'a> {
    hier: &'a HierarchicalCodebook,
    semantic: SemanticQuantizer,
}

impl<'a> HierarchicalQuantizer<'a> {
    pub fn new(hier: &'a HierarchicalCodebook) -> Result<Self> {
        Self::with_normalization(hier, Normalization::None)
    }

    pub fn with_normalization(hier: &'a HierarchicalCodebook, normalization: Normalization) -> Result<Self> {
        Ok(Self {
            hier,
            semantic: SemanticQuantizer::with_normalization(hier.semantic(), normalization)?,
        })
    }

    pub fn codebook(&self) -> &HierarchicalCodebook {
        self.hier
    }

    pub fn quantize(&self, z_sem: &FeatureGrid, z_pix: &FeatureGrid) -> Result<QuantizationResult> {
        if !z_sem.same_layout(z_pix) {
            return Err(Error::Shape(format!(
                "semantic grid is {}x{}, pixel grid is {}x{}",
                z_sem.height(),
                z_sem.width(),
                z_pix.height(),
                z_pix.width()
            )));
        }
        let hier = self.hier;
        let sem_assigned = self.semantic.assign(z_sem)?;
        let (sem_idx, quantized_sem) = semantic_outputs(z_sem, hier.semantic(), &sem_assigned)?;
        let pix_assigned = pixel_stage(z_pix, hier, &sem_idx)?;
        let (pix_idx, quantized_pix) = pixel_outputs(z_pix, hier, &sem_idx, &pix_assigned)?;
        let tokens = TokenGrid::from_pairs(
            z_sem.height(),
            z_sem.width(),
            hier.m() as u32,
            sem_idx.indices,
            pix_idx.indices,
        )?;
        let quantized_concat = concat_features(&quantized_sem, &quantized_pix)?;
        Ok(QuantizationResult {
            tokens,
            quantized_sem,
            quantized_pix,
            quantized_concat,
            sem_sq_dist: sem_assigned.iter().map(|a| a.1).collect(),
            pix_sq_dist: pix_assigned.iter().map(|a| a.1).collect(),
        })
    }
}

/// Semantic quantization, sub-codebook quantization and concatenation in one pass.
pub fn quantize_hierarchical(
    z_sem: &FeatureGrid,
    z_pix: &FeatureGrid,
    hier: &HierarchicalCodebook,
) -> Result<QuantizationResult> {
    HierarchicalQuantizer::new(hier)?.quantize(z_sem, z_pix)
}

/// Semantic and pixel code vectors of every token, as two grids.
pub fn dequantize_parts(tokens: &TokenGrid, hier: &HierarchicalCodebook) -> Result<(FeatureGrid, FeatureGrid)> {
    if tokens.sub_size() as usize != hier.m() {
        return Err(Error::Shape(format!(
            "tokens use sub-codebook size {}, codebook has {}",
            tokens.sub_size(),
            hier.m()
        )));
    }
    let mut sem = Vec::with_capacity(tokens.len() * hier.dim_sem());
    let mut pix = Vec::with_capacity(tokens.len() * hier.dim_pix());
    for (&i, &j) in tokens.sem_idx().iter().zip(tokens.pix_idx()) {
        let (i, j) = (i as usize, j as usize);
        if i >= hier.k() || j >= hier.m() {
            return Err(Error::Index(format!(
                "token ({i}, {j}) outside K={} m={}",
                hier.k(),
                hier.m()
            )));
        }
        sem.extend_from_slice(hier.semantic().row(i));
        pix.extend_from_slice(hier.sub(i).row(j));
    }
    Ok((
        FeatureGrid::new(tokens.height(), tokens.width(), hier.dim_sem(), sem)?,
        FeatureGrid::new(tokens.height(), tokens.width(), hier.dim_pix(), pix)?,
    ))
}

/// Maps tokens back to concatenated `semantic ++ pixel` code vectors.
pub fn dequantize(tokens: &TokenGrid, hier: &HierarchicalCodebook) -> Result<FeatureGrid> {
    let (sem, pix) = dequantize_parts(tokens, hier)?;
    concat_features(&sem, &pix)
}
