//! Triplet assembly and direct sparse LU solves (backed by `rsparse`).

use rsparse::data::Sprs;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("sparse matrix is singular or numerically degenerate")]
pub struct SingularMatrix;

/// Column ordering used before factorisation: approximate minimum degree on A + Aᵀ.
const ORDER_AMD_SYMMETRIC: i8 = 1;
/// Threshold of 1.0 is plain partial pivoting (always the largest candidate).
const PIVOT_THRESHOLD: f64 = 1.0;

/// Coordinate-format builder; duplicate entries are summed on compression.
#[derive(Debug, Clone)]
pub struct Triplets {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(rows: usize, cols: usize) -> Self {
        Triplets {
            rows,
            cols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(rows: usize, cols: usize, nnz: usize) -> Self {
        Triplets {
            rows,
            cols,
            entries: Vec::with_capacity(nnz),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.rows && col < self.cols);
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn to_csc(&self) -> CscMatrix {
        let mut sorted = self.entries.clone();
        sorted.sort_unstable_by_key(|&(r, c, _)| (c, r));
        let mut col_ptr = vec![0usize; self.cols + 1];
        let mut row_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_idx.push(r);
                values.push(v);
                col_ptr[c + 1] += 1;
                last = Some((r, c));
            }
        }
        for c in 0..self.cols {
            col_ptr[c + 1] += col_ptr[c];
        }
        CscMatrix {
            rows: self.rows,
            cols: self.cols,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.cols]; self.rows];
        for &(r, c, v) in &self.entries {
            d[r][c] += v;
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    pub rows: usize,
    pub cols: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        for c in 0..self.cols {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[k]] += self.values[k] * x[c];
            }
        }
        y
    }

    /// Solves `A x = rhs` by sparse LU with partial pivoting.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, SingularMatrix> {
        assert_eq!(self.rows, self.cols, "LU solve needs a square matrix");
        assert_eq!(rhs.len(), self.rows);
        if self.rows == 0 {
            return Ok(Vec::new());
        }
        let a = Sprs {
            nzmax: self.values.len(),
            m: self.rows,
            n: self.cols,
            p: self.col_ptr.iter().map(|&p| p as isize).collect(),
            i: self.row_idx.clone(),
            x: self.values.clone(),
        };
        let mut b = rhs.to_vec();
        rsparse::lusol(&a, &mut b, ORDER_AMD_SYMMETRIC, PIVOT_THRESHOLD).map_err(|_| SingularMatrix)?;
        if b.iter().all(|v| v.is_finite()) {
            Ok(b)
        } else {
            Err(SingularMatrix)
        }
    }
}
