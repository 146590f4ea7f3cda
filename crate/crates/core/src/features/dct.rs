//! Orthonormal 2-D type-II DCT on square `P × P` blocks.

use std::f64::consts::PI;

/// Precomputed basis for one block size.
#[derive(Debug, Clone)]
pub struct Dct2 {
    size: usize,
    // basis[u * size + x] = α(u)·cos((2x + 1)uπ / 2P)
    basis: Vec<f64>,
}

impl Dct2 {
    pub fn new(size: usize) -> Self {
        assert!(size > 0, "DCT block size must be positive");
        let n = size as f64;
        let mut basis = vec![0.0; size * size];
        for u in 0..size {
            let alpha = if u == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            for x in 0..size {
                basis[u * size + x] = alpha * ((2 * x + 1) as f64 * u as f64 * PI / (2.0 * n)).cos();
            }
        }
        Self { size, basis }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// One-dimensional basis matrix, row `u` holding frequency `u`.
    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    /// `out = B · x · Bᵀ` (forward) or `out = Bᵀ · x · B` (inverse).
    fn separable(&self, input: &[f64], output: &mut [f64], inverse: bool) {
        let p = self.size;
        assert_eq!(input.len(), p * p);
        assert_eq!(output.len(), p * p);
        let b = |r: usize, c: usize| {
            if inverse {
                self.basis[c * p + r]
            } else {
                self.basis[r * p + c]
            }
        };
        let mut tmp = vec![0.0; p * p];
        // Rows first: tmp[r][v] = Σ_c x[r][c]·b(v, c)
        for r in 0..p {
            for v in 0..p {
                tmp[r * p + v] = (0..p).map(|c| input[r * p + c] * b(v, c)).sum();
            }
        }
        // Then columns: out[u][v] = Σ_r b(u, r)·tmp[r][v]
        for u in 0..p {
            for v in 0..p {
                output[u * p + v] = (0..p).map(|r| b(u, r) * tmp[r * p + v]).sum();
            }
        }
    }

    pub fn forward_f64(&self, patch: &[f64], coeffs: &mut [f64]) {
        self.separable(patch, coeffs, false)
    }

    pub fn inverse_f64(&self, coeffs: &[f64], patch: &mut [f64]) {
        self.separable(coeffs, patch, true)
    }

    /// Row-major coefficients of a row-major patch.
    pub fn forward(&self, patch: &[f32]) -> Vec<f32> {
        let input: Vec<f64> = patch.iter().map(|&v| v as f64).collect();
        let mut out = vec![0.0; input.len()];
        self.forward_f64(&input, &mut out);
        out.into_iter().map(|v| v as f32).collect()
    }

    pub fn inverse(&self, coeffs: &[f32]) -> Vec<f32> {
        let input: Vec<f64> = coeffs.iter().map(|&v| v as f64).collect();
        let mut out = vec![0.0; input.len()];
        self.inverse_f64(&input, &mut out);
        out.into_iter().map(|v| v as f32).collect()
    }
}

/// Forward transform of a single `P × P` patch (`P` inferred from its length).
pub fn dct2(patch: &[f32]) -> Vec<f32> {
    Dct2::new(block_side(patch.len())).forward(patch)
}

/// Inverse of [`dct2`].
pub fn idct2(coeffs: &[f32]) -> Vec<f32> {
    Dct2::new(block_side(coeffs.len())).inverse(coeffs)
}

fn block_side(len: usize) -> usize {
    let p = (len as f64).sqrt().round() as usize;
    assert!(p > 0 && p * p == len, "{len} values do not form a square block");
    p
}
