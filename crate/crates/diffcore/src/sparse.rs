/// Constant sparse matrix in coordinate form, used as the left operand of
/// [`Tape::spmm`](crate::Tape::spmm). It never receives gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    /// Entries are sorted by `(row, col)`; duplicates are summed.
    ///
    /// # Panics
    /// If an entry lies outside `rows x cols`.
    pub fn new(rows: usize, cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Self {
        for &(r, c, _) in &entries {
            assert!(r < rows && c < cols, "entry ({r}, {c}) outside {rows}x{cols}");
        }
        entries.sort_by_key(|e| (e.0, e.1));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for (r, c, w) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += w,
                _ => merged.push((r, c, w)),
            }
        }
        SparseMatrix {
            rows,
            cols,
            entries: merged,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// `self · x` for a row-major dense `x` of shape `[cols, width]`.
    pub fn mul_dense(&self, x: &[f64], width: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * width];
        for &(r, c, w) in &self.entries {
            let src = &x[c * width..(c + 1) * width];
            let dst = &mut out[r * width..(r + 1) * width];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
        out
    }

    /// `selfᵀ · g` for a row-major dense `g` of shape `[rows, width]`.
    pub fn tmul_dense(&self, g: &[f64], width: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cols * width];
        for &(r, c, w) in &self.entries {
            let src = &g[r * width..(r + 1) * width];
            let dst = &mut out[c * width..(c + 1) * width];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
        out
    }
}
