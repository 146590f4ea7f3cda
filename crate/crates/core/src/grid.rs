//! Feature and token grids, flat-index arithmetic and feature concatenation.

use crate::error::{Error, Result};

/// An `height × width` grid of `dim`-dimensional feature vectors, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || dim == 0 {
            return Err(Error::Shape(format!(
                "grid dimensions must be positive, got {height}x{width}x{dim}"
            )));
        }
        let expected = height
            .checked_mul(width)
            .and_then(|c| c.checked_mul(dim))
            .ok_or_else(|| Error::Shape("grid size overflows usize".into()))?;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "{height}x{width}x{dim} grid needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite value at offset {pos}")));
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, dim: usize) -> Result<Self> {
        Self::new(height, width, dim, vec![0.0; height * width * dim])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Feature vector of the cell at row-major position `index`.
    pub fn cell(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn cell_at(&self, row: usize, col: usize) -> &[f32] {
        self.cell(row * self.width + col)
    }

    pub fn iter_cells(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    pub fn same_layout(&self, other: &FeatureGrid) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// A grid of plain code indices (one stage of quantization).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexGrid {
    pub height: usize,
    pub width: usize,
    pub indices: Vec<u32>,
}

impl IndexGrid {
    pub fn new(height: usize, width: usize, indices: Vec<u32>) -> Result<Self> {
        if indices.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} index grid needs {} entries, got {}",
                height * width,
                indices.len()
            )));
        }
        Ok(Self { height, width, indices })
    }
}

/// Per-cell tokens of a hierarchical quantization: semantic index `i`, sub-index `j`
/// and flat index `h = i·m + j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenGrid {
    height: usize,
    width: usize,
    sub_size: u32,
    sem_idx: Vec<u32>,
    pix_idx: Vec<u32>,
    flat_idx: Vec<u32>,
}

impl TokenGrid {
    /// Builds a grid from per-cell `(i, j)` pairs.
    pub fn from_pairs(
        height: usize,
        width: usize,
        sub_size: u32,
        sem_idx: Vec<u32>,
        pix_idx: Vec<u32>,
    ) -> Result<Self> {
        let cells = height * width;
        if sem_idx.len() != cells || pix_idx.len() != cells {
            return Err(Error::Shape(format!(
                "{height}x{width} token grid needs {cells} entries, got {} semantic and {} pixel",
                sem_idx.len(),
                pix_idx.len()
            )));
        }
        let flat_idx = sem_idx
            .iter()
            .zip(&pix_idx)
            .map(|(&i, &j)| flatten_index(i, j, sub_size))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            height,
            width,
            sub_size,
            sem_idx,
            pix_idx,
            flat_idx,
        })
    }

    /// Builds a grid from flat indices, recovering `(i, j)` by integer division.
    pub fn from_flat(height: usize, width: usize, sub_size: u32, flat_idx: Vec<u32>) -> Result<Self> {
        if flat_idx.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} token grid needs {} entries, got {}",
                height * width,
                flat_idx.len()
            )));
        }
        let mut sem_idx = Vec::with_capacity(flat_idx.len());
        let mut pix_idx = Vec::with_capacity(flat_idx.len());
        for &h in &flat_idx {
            let (i, j) = unflatten_index(h, sub_size)?;
            sem_idx.push(i);
            pix_idx.push(j);
        }
        Ok(Self {
            height,
            width,
            sub_size,
            sem_idx,
            pix_idx,
            flat_idx,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn sub_size(&self) -> u32 {
        self.sub_size
    }

    pub fn len(&self) -> usize {
        self.flat_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat_idx.is_empty()
    }

    pub fn sem_idx(&self) -> &[u32] {
        &self.sem_idx
    }

    pub fn pix_idx(&self) -> &[u32] {
        &self.pix_idx
    }

    pub fn flat_idx(&self) -> &[u32] {
        &self.flat_idx
    }
}

/// Flat vocabulary index `h = i·m + j` of sub-code `j` under semantic code `i`.
pub fn flatten_index(i: u32, j: u32, m: u32) -> Result<u32> {
    if j >= m {
        return Err(Error::Range(format!("sub-index {j} not below sub-codebook size {m}")));
    }
    i.checked_mul(m)
        .and_then(|base| base.checked_add(j))
        .ok_or_else(|| Error::Range(format!("flat index for ({i}, {j}) with m={m} overflows u32")))
}

/// Inverse of [`flatten_index`].
pub fn unflatten_index(h: u32, m: u32) -> Result<(u32, u32)> {
    if m == 0 {
        return Err(Error::Argument("sub-codebook size must be at least 1".into()));
    }
    Ok((h / m, h % m))
}

/// Concatenates two grids cell by cell along the feature dimension.
pub fn concat_features(sem: &FeatureGrid, pix: &FeatureGrid) -> Result<FeatureGrid> {
    if !sem.same_layout(pix) {
        return Err(Error::Shape(format!(
            "cannot concatenate {}x{} grid with {}x{} grid",
            sem.height, sem.width, pix.height, pix.width
        )));
    }
    let dim = sem.dim + pix.dim;
    let mut data = Vec::with_capacity(sem.cells() * dim);
    for (a, b) in sem.iter_cells().zip(pix.iter_cells()) {
        data.extend_from_slice(a);
        data.extend_from_slice(b);
    }
    Ok(FeatureGrid {
        height: sem.height,
        width: sem.width,
        dim,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn flatten_examples() {
        assert_eq!(flatten_index(0, 0, 12).unwrap(), 0);
        assert_eq!(flatten_index(2, 3, 8).unwrap(), 19);
        assert_eq!(flatten_index(3, 5, 12).unwrap(), 41);
        assert_eq!(flatten_index(16383, 11, 12).unwrap(), 196_607);
        assert!(matches!(flatten_index(0, 12, 12), Err(Error::Range(_))));
        assert!(matches!(flatten_index(u32::MAX, 1, 2), Err(Error::Range(_))));
    }

    #[test]
    fn unflatten_examples() {
        assert_eq!(unflatten_index(19, 8).unwrap(), (2, 3));
        assert_eq!(unflatten_index(0, 12).unwrap(), (0, 0));
        // 196607 = 16383·12 + 11
        assert_eq!(unflatten_index(196_607, 12).unwrap(), (16383, 11));
        assert!(matches!(unflatten_index(5, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(matches!(FeatureGrid::new(0, 1, 1, vec![]), Err(Error::Shape(_))));
        assert!(matches!(FeatureGrid::new(1, 1, 2, vec![1.0]), Err(Error::Shape(_))));
        assert!(matches!(
            FeatureGrid::new(1, 1, 2, vec![1.0, f32::NAN]),
            Err(Error::Domain(_))
        ));
        assert!(FeatureGrid::new(1, 1, 1, vec![3.0]).is_ok());
    }

    #[test]
    fn concat_single_cell() {
        let sem = FeatureGrid::new(1, 1, 2, vec![1.0, 2.0]).unwrap();
        let pix = FeatureGrid::new(1, 1, 1, vec![3.0]).unwrap();
        let out = concat_features(&sem, &pix).unwrap();
        assert_eq!(out.dim(), 3);
        assert_eq!(out.data(), &[1.0, 2.0, 3.0]);
        assert_eq!(sem.data(), &[1.0, 2.0]);
    }

    #[test]
    fn concat_full_resolution_shape() {
        let sem = FeatureGrid::zeros(27, 27, 48).unwrap();
        let pix = FeatureGrid::zeros(27, 27, 64).unwrap();
        let out = concat_features(&sem, &pix).unwrap();
        assert_eq!((out.height(), out.width(), out.dim()), (27, 27, 112));
    }

    #[test]
    fn concat_zero_pix_pads_semantic() {
        let sem = FeatureGrid::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let pix = FeatureGrid::zeros(1, 2, 2).unwrap();
        let out = concat_features(&sem, &pix).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 0.0, 0.0, 3.0, 4.0, 0.0, 0.0]);
    }

    #[test]
    fn concat_shape_mismatch() {
        let sem = FeatureGrid::zeros(2, 2, 1).unwrap();
        let pix = FeatureGrid::zeros(2, 3, 1).unwrap();
        assert!(matches!(concat_features(&sem, &pix), Err(Error::Shape(_))));
    }

    #[test]
    fn token_grid_consistency() {
        let g = TokenGrid::from_pairs(1, 2, 8, vec![2, 0], vec![3, 7]).unwrap();
        assert_eq!(g.flat_idx(), &[19, 7]);
        let back = TokenGrid::from_flat(1, 2, 8, vec![19, 7]).unwrap();
        assert_eq!(g, back);
        assert!(TokenGrid::from_pairs(1, 1, 8, vec![0], vec![8]).is_err());
    }

    proptest! {
        #[test]
        fn concat_preserves_both_inputs(
            h in 1usize..4, w in 1usize..4, ds in 1usize..5, dp in 1usize..5, seed in any::<u64>()
        ) {
            let mut x = seed;
            let mut next = || { x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); ((x >> 40) as f32) / 1024.0 };
            let sem = FeatureGrid::new(h, w, ds, (0..h*w*ds).map(|_| next()).collect()).unwrap();
            let pix = FeatureGrid::new(h, w, dp, (0..h*w*dp).map(|_| next()).collect()).unwrap();
            let out = concat_features(&sem, &pix).unwrap();
            for c in 0..h*w {
                prop_assert_eq!(&out.cell(c)[..ds], sem.cell(c));
                prop_assert_eq!(&out.cell(c)[ds..], pix.cell(c));
            }
        }

        #[test]
        fn flatten_roundtrip(i in 0u32..100_000, m in 1u32..64, j_seed in any::<u32>()) {
            let j = j_seed % m;
            let h = flatten_index(i, j, m).unwrap();
            prop_assert_eq!(unflatten_index(h, m).unwrap(), (i, j));
        }
    }
}
