//! Codebook types: the semantic codebook, pixel sub-codebooks and the hierarchical
//! codebook that ties every semantic code to its own pixel sub-codebook.

use crate::error::{Error, Result};

/// Code vectors together with their EMA accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeTable {
    len: usize,
    dim: usize,
    vectors: Vec<f32>,
    ema_cluster_size: Vec<f32>,
    ema_sum: Vec<f32>,
}

impl CodeTable {
    /// Table with fresh (zero) EMA state.
    pub fn new(len: usize, dim: usize, vectors: Vec<f32>) -> Result<Self> {
        Self::from_parts(len, dim, vectors, vec![0.0; len], vec![0.0; len * dim])
    }

    pub fn zeros(len: usize, dim: usize) -> Result<Self> {
        Self::new(len, dim, vec![0.0; len * dim])
    }

    pub fn from_parts(
        len: usize,
        dim: usize,
        vectors: Vec<f32>,
        ema_cluster_size: Vec<f32>,
        ema_sum: Vec<f32>,
    ) -> Result<Self> {
        if len == 0 || dim == 0 {
            return Err(Error::Shape(format!(
                "code table needs at least one code of positive dimension, got {len}x{dim}"
            )));
        }
        if vectors.len() != len * dim || ema_sum.len() != len * dim {
            return Err(Error::Shape(format!(
                "{len}x{dim} table got {} vector values and {} sum values",
                vectors.len(),
                ema_sum.len()
            )));
        }
        if ema_cluster_size.len() != len {
            return Err(Error::Shape(format!(
                "{len} codes but {} cluster sizes",
                ema_cluster_size.len()
            )));
        }
        if vectors.iter().chain(&ema_sum).any(|v| !v.is_finite()) {
            return Err(Error::Domain("code table contains non-finite values".into()));
        }
        if ema_cluster_size.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Domain("cluster sizes must be finite and non-negative".into()));
        }
        Ok(Self {
            len,
            dim,
            vectors,
            ema_cluster_size,
            ema_sum,
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

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.vectors[index * self.dim..(index + 1) * self.dim]
    }

    pub fn ema_cluster_size(&self) -> &[f32] {
        &self.ema_cluster_size
    }

    pub fn ema_sum(&self) -> &[f32] {
        &self.ema_sum
    }

    /// Overwrites code `index` and clears its EMA state.
    pub fn reset_code(&mut self, index: usize, vector: &[f32]) {
        debug_assert_eq!(vector.len(), self.dim);
        let span = index * self.dim..(index + 1) * self.dim;
        self.vectors[span.clone()].copy_from_slice(vector);
        self.ema_sum[span].fill(0.0);
        self.ema_cluster_size[index] = 0.0;
    }

    pub(crate) fn code_state_mut(&mut self, index: usize) -> (&mut [f32], &mut f32, &mut [f32]) {
        let span = index * self.dim..(index + 1) * self.dim;
        (
            &mut self.vectors[span.clone()],
            &mut self.ema_cluster_size[index],
            &mut self.ema_sum[span],
        )
    }
}

pub(crate) fn check_momentum(momentum: f32) -> Result<()> {
    if momentum > 0.0 && momentum < 1.0 {
        Ok(())
    } else {
        Err(Error::Argument(format!("momentum must lie in (0, 1), got {momentum}")))
    }
}

/// The semantic codebook. Once frozen its vectors can no longer be trained.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticCodebook {
    table: CodeTable,
    momentum: f32,
    frozen: bool,
}

impl SemanticCodebook {
    pub fn new(table: CodeTable, momentum: f32, frozen: bool) -> Result<Self> {
        check_momentum(momentum)?;
        Ok(Self {
            table,
            momentum,
            frozen,
        })
    }

    pub fn k(&self) -> usize {
        self.table.len()
    }

    pub fn dim(&self) -> usize {
        self.table.dim()
    }

    pub fn momentum(&self) -> f32 {
        self.momentum
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn table(&self) -> &CodeTable {
        &self.table
    }

    pub fn vectors(&self) -> &[f32] {
        self.table.vectors()
    }

    pub fn row(&self, index: usize) -> &[f32] {
        self.table.row(index)
    }

    /// Mutable access for training; refused once the codebook is frozen.
    pub fn table_mut(&mut self) -> Result<&mut CodeTable> {
        if self.frozen {
            Err(Error::Frozen)
        } else {
            Ok(&mut self.table)
        }
    }
}

/// The `m`-entry pixel codebook owned by one semantic code.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelSubCodebook {
    table: CodeTable,
}

impl PixelSubCodebook {
    pub fn new(table: CodeTable) -> Self {
        Self { table }
    }

    pub fn zeros(m: usize, dim: usize) -> Result<Self> {
        Ok(Self::new(CodeTable::zeros(m, dim)?))
    }

    pub fn m(&self) -> usize {
        self.table.len()
    }

    pub fn dim(&self) -> usize {
        self.table.dim()
    }

    pub fn table(&self) -> &CodeTable {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut CodeTable {
        &mut self.table
    }

    pub fn vectors(&self) -> &[f32] {
        self.table.vectors()
    }

    pub fn row(&self, index: usize) -> &[f32] {
        self.table.row(index)
    }
}

/// Semantic codebook plus one pixel sub-codebook per semantic code.
///
/// The semantic part is only reachable through shared references; the pixel
/// stage can replace sub-codebooks but never touch the semantic vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalCodebook {
    semantic: SemanticCodebook,
    subs: Vec<PixelSubCodebook>,
    momentum: f32,
}

impl HierarchicalCodebook {
    pub fn new(semantic: SemanticCodebook, subs: Vec<PixelSubCodebook>, momentum: f32) -> Result<Self> {
        check_momentum(momentum)?;
        if subs.len() != semantic.k() {
            return Err(Error::Shape(format!(
                "{} semantic codes but {} sub-codebooks",
                semantic.k(),
                subs.len()
            )));
        }
        let (m, dim) = (subs[0].m(), subs[0].dim());
        if let Some(bad) = subs.iter().position(|s| s.m() != m || s.dim() != dim) {
            return Err(Error::Shape(format!(
                "sub-codebook {bad} is {}x{}, expected {m}x{dim}",
                subs[bad].m(),
                subs[bad].dim()
            )));
        }
        (semantic.k() as u64 * m as u64 <= u32::MAX as u64)
            .then_some(())
            .ok_or_else(|| Error::Range("flat vocabulary does not fit in u32".into()))?;
        Ok(Self {
            semantic,
            subs,
            momentum,
        })
    }

    /// Pairs `semantic` with all-zero sub-codebooks of shape `m × dim_pix`.
    pub fn with_zero_subs(semantic: SemanticCodebook, m: usize, dim_pix: usize) -> Result<Self> {
        let momentum = semantic.momentum();
        let subs = (0..semantic.k())
            .map(|_| PixelSubCodebook::zeros(m, dim_pix))
            .collect::<Result<Vec<_>>>()?;
        Self::new(semantic, subs, momentum)
    }

    pub fn semantic(&self) -> &SemanticCodebook {
        &self.semantic
    }

    pub fn subs(&self) -> &[PixelSubCodebook] {
        &self.subs
    }

    pub fn sub(&self, index: usize) -> &PixelSubCodebook {
        &self.subs[index]
    }

    pub fn k(&self) -> usize {
        self.semantic.k()
    }

    pub fn m(&self) -> usize {
        self.subs[0].m()
    }

    pub fn dim_sem(&self) -> usize {
        self.semantic.dim()
    }

    pub fn dim_pix(&self) -> usize {
        self.subs[0].dim()
    }

    pub fn momentum(&self) -> f32 {
        self.momentum
    }

    /// Size of the flattened vocabulary, `K·m`.
    pub fn flat_vocab_size(&self) -> usize {
        self.k() * self.m()
    }

    pub fn into_parts(self) -> (SemanticCodebook, Vec<PixelSubCodebook>) {
        (self.semantic, self.subs)
    }
}
