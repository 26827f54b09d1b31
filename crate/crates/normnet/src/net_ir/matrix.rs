use crate::error::{dim_err, Result};

/// Row-compressed real matrix. Entries within a row are kept in ascending
/// column order; evaluation accumulates in that order, so two rows with the
/// same pattern and values produce bit-identical results.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    vals: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, row_ptr: vec![0; rows + 1], col_idx: Vec::new(), vals: Vec::new() }
    }

    /// Builds from a row-major dense array. Exact zeros are not stored.
    pub fn from_dense(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return dim_err(format!("dense data has {} entries, expected {rows}x{cols}", data.len()));
        }
        let mut b = MatrixBuilder::new(cols);
        for r in 0..rows {
            for c in 0..cols {
                b.push(c, data[r * cols + c]);
            }
            b.end_row();
        }
        Ok(b.finish())
    }

    /// Builds from a list of rows, each a dense slice of length `cols`.
    pub fn from_rows(cols: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut b = MatrixBuilder::new(cols);
        for row in rows {
            if row.len() != cols {
                return dim_err(format!("row of length {} in a matrix with {cols} columns", row.len()));
            }
            for (c, &v) in row.iter().enumerate() {
                b.push(c, v);
            }
            b.end_row();
        }
        Ok(b.finish())
    }

    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut t: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(r, c, _) in &t {
            if r >= rows || c >= cols {
                return dim_err(format!("entry ({r},{c}) outside {rows}x{cols}"));
            }
        }
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut b = MatrixBuilder::new(cols);
        let mut i = 0;
        for r in 0..rows {
            while i < t.len() && t[i].0 == r {
                let c = t[i].1;
                let mut v = t[i].2;
                i += 1;
                while i < t.len() && t[i].0 == r && t[i].1 == c {
                    v += t[i].2;
                    i += 1;
                }
                b.push(c, v);
            }
            b.end_row();
        }
        Ok(b.finish())
    }

    pub fn identity(n: usize) -> Self {
        let mut b = MatrixBuilder::new(n);
        for i in 0..n {
            b.push(i, 1.0);
            b.end_row();
        }
        b.finish()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Stored entries of row `r` as (column, value) pairs.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.col_idx[a..b].iter().zip(&self.vals[a..b]).map(|(&c, &v)| (c as usize, v))
    }

    pub fn row_parts(&self, r: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[a..b], &self.vals[a..b])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row_parts(r);
        match cols.binary_search(&(c as u32)) {
            Ok(i) => vals[i],
            Err(_) => 0.0,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.vals
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out[r * self.cols + c] = v;
            }
        }
        out
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out.push((r, c, v));
            }
        }
        out
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.vals.iter().map(|v| v * v).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.vals.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut m = self.clone();
        m.scale_in_place(c);
        m
    }

    pub fn scale_in_place(&mut self, c: f64) {
        for v in &mut self.vals {
            *v *= c;
        }
    }

    /// Multiplies entry `(r, c)` by `factor` if it is stored; returns whether it was.
    pub fn scale_entry(&mut self, r: usize, c: usize, factor: f64) -> bool {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        match self.col_idx[a..b].binary_search(&(c as u32)) {
            Ok(i) => {
                self.vals[a + i] *= factor;
                true
            }
            Err(_) => false,
        }
    }

    /// y = self · x.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                let (cols, vals) = self.row_parts(r);
                let mut acc = 0.0;
                for (&c, &v) in cols.iter().zip(vals) {
                    acc += v * x[c as usize];
                }
                acc
            })
            .collect()
    }

    /// Transposed product xᵀ·self, i.e. selfᵀ · x.
    pub fn tmul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let xr = x[r];
            if xr == 0.0 {
                continue;
            }
            for (c, v) in self.row(r) {
                out[c] += v * xr;
            }
        }
        out
    }

    /// Batched product on neuron-major activations: `input` holds `cols`
    /// rows of `batch` values, `out` receives `rows` rows of `batch` values,
    /// each initialised from `init` (or zero).
    pub fn mul_batch(&self, input: &[f64], batch: usize, init: Option<&[f64]>, out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.rows * batch, 0.0);
        for r in 0..self.rows {
            let o = &mut out[r * batch..(r + 1) * batch];
            if let Some(b) = init {
                o.fill(b[r]);
            }
            let (cols, vals) = self.row_parts(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let i = &input[c as usize * batch..(c as usize + 1) * batch];
                for (oo, ii) in o.iter_mut().zip(i) {
                    *oo += v * ii;
                }
            }
        }
    }

    /// Sparse product self · other.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return dim_err(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut acc = vec![0.0; other.cols];
        let mut touched = vec![false; other.cols];
        let mut list: Vec<usize> = Vec::new();
        let mut b = MatrixBuilder::new(other.cols);
        for r in 0..self.rows {
            for (k, a) in self.row(r) {
                for (c, v) in other.row(k) {
                    if !touched[c] {
                        touched[c] = true;
                        list.push(c);
                    }
                    acc[c] += a * v;
                }
            }
            list.sort_unstable();
            for &c in &list {
                b.push(c, acc[c]);
                acc[c] = 0.0;
                touched[c] = false;
            }
            list.clear();
            b.end_row();
        }
        Ok(b.finish())
    }

    /// Block-diagonal stacking.
    pub fn block_diag(blocks: &[&Matrix]) -> Matrix {
        let cols: usize = blocks.iter().map(|m| m.cols).sum();
        let nnz: usize = blocks.iter().map(|m| m.nnz()).sum();
        let mut b = MatrixBuilder::with_capacity(cols, nnz);
        let mut off = 0;
        for m in blocks {
            for r in 0..m.rows {
                for (c, v) in m.row(r) {
                    b.push(c + off, v);
                }
                b.end_row();
            }
            off += m.cols;
        }
        b.finish()
    }

    /// Horizontal stacking [A_1, A_2, ...]; all blocks share the row count.
    pub fn hstack(blocks: &[&Matrix]) -> Result<Matrix> {
        let rows = blocks.first().map(|m| m.rows).unwrap_or(0);
        if blocks.iter().any(|m| m.rows != rows) {
            return dim_err("hstack blocks differ in row count");
        }
        let cols: usize = blocks.iter().map(|m| m.cols).sum();
        let mut b = MatrixBuilder::new(cols);
        for r in 0..rows {
            let mut off = 0;
            for m in blocks {
                for (c, v) in m.row(r) {
                    b.push(c + off, v);
                }
                off += m.cols;
            }
            b.end_row();
        }
        Ok(b.finish())
    }

    /// Vertical stacking; all blocks share the column count.
    pub fn vstack(blocks: &[&Matrix]) -> Result<Matrix> {
        let cols = blocks.first().map(|m| m.cols).unwrap_or(0);
        if blocks.iter().any(|m| m.cols != cols) {
            return dim_err("vstack blocks differ in column count");
        }
        let mut b = MatrixBuilder::new(cols);
        for m in blocks {
            for r in 0..m.rows {
                for (c, v) in m.row(r) {
                    b.push(c, v);
                }
                b.end_row();
            }
        }
        Ok(b.finish())
    }

    /// Keeps only the listed columns, in the listed order.
    pub fn select_columns(&self, keep: &[usize]) -> Matrix {
        let mut map = vec![usize::MAX; self.cols];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut b = MatrixBuilder::new(keep.len());
        let mut row: Vec<(usize, f64)> = Vec::new();
        for r in 0..self.rows {
            row.clear();
            row.extend(self.row(r).filter(|(c, _)| map[*c] != usize::MAX).map(|(c, v)| (map[c], v)));
            row.sort_by_key(|e| e.0);
            for &(c, v) in &row {
                b.push(c, v);
            }
            b.end_row();
        }
        b.finish()
    }

    /// Re-indexes columns: column `c` moves to `map[c]` in a matrix with
    /// `new_cols` columns. Used to route subnet inputs from a wider vector.
    pub fn remap_columns(&self, map: &[usize], new_cols: usize) -> Result<Matrix> {
        if map.len() != self.cols || map.iter().any(|&c| c >= new_cols) {
            return dim_err("column map does not fit");
        }
        let mut b = MatrixBuilder::new(new_cols);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for r in 0..self.rows {
            row.clear();
            row.extend(self.row(r).map(|(c, v)| (map[c], v)));
            row.sort_by_key(|e| e.0);
            let mut i = 0;
            while i < row.len() {
                let c = row[i].0;
                let mut v = row[i].1;
                i += 1;
                while i < row.len() && row[i].0 == c {
                    v += row[i].1;
                    i += 1;
                }
                b.push(c, v);
            }
            b.end_row();
        }
        Ok(b.finish())
    }
}

/// Incremental row-by-row constructor. Columns must be pushed in ascending
/// order within each row; exact zeros are skipped.
pub struct MatrixBuilder {
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    vals: Vec<f64>,
}

impl MatrixBuilder {
    pub fn new(cols: usize) -> Self {
        Self::with_capacity(cols, 0)
    }

    pub fn with_capacity(cols: usize, nnz: usize) -> Self {
        assert!(cols <= u32::MAX as usize, "column count exceeds index range");
        MatrixBuilder { cols, row_ptr: vec![0], col_idx: Vec::with_capacity(nnz), vals: Vec::with_capacity(nnz) }
    }

    pub fn push(&mut self, col: usize, val: f64) {
        debug_assert!(col < self.cols);
        debug_assert!(self.row_ptr.last().map_or(true, |&s| s == self.col_idx.len()
            || (*self.col_idx.last().unwrap() as usize) < col));
        if val != 0.0 {
            self.col_idx.push(col as u32);
            self.vals.push(val);
        }
    }

    pub fn end_row(&mut self) {
        self.row_ptr.push(self.col_idx.len());
    }

    pub fn finish(self) -> Matrix {
        Matrix {
            rows: self.row_ptr.len() - 1,
            cols: self.cols,
            row_ptr: self.row_ptr,
            col_idx: self.col_idx,
            vals: self.vals,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_round_trip() {
        let d = [1.0, 0.0, -2.0, 0.0, 3.5, 0.0];
        let m = Matrix::from_dense(2, 3, &d).unwrap();
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.to_dense(), d.to_vec());
        assert_eq!(m.get(0, 2), -2.0);
        assert_eq!(m.get(1, 0), 0.0);
    }

    #[test]
    fn matmul_matches_dense() {
        let a = Matrix::from_dense(2, 3, &[1.0, 2.0, 0.0, 0.0, -1.0, 4.0]).unwrap();
        let b = Matrix::from_dense(3, 2, &[1.0, 1.0, 0.5, 0.0, 2.0, -3.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.to_dense(), vec![2.0, 1.0, 7.5, -12.0]);
    }

    #[test]
    fn block_diag_and_stacks() {
        let a = Matrix::from_dense(1, 2, &[1.0, 2.0]).unwrap();
        let b = Matrix::from_dense(1, 1, &[3.0]).unwrap();
        let d = Matrix::block_diag(&[&a, &b]);
        assert_eq!(d.to_dense(), vec![1.0, 2.0, 0.0, 0.0, 0.0, 3.0]);
        let h = Matrix::hstack(&[&a, &b]).unwrap();
        assert_eq!(h.to_dense(), vec![1.0, 2.0, 3.0]);
        let v = Matrix::vstack(&[&a, &a]).unwrap();
        assert_eq!(v.rows(), 2);
        assert!(Matrix::vstack(&[&a, &b]).is_err());
    }

    #[test]
    fn batch_product_matches_vector_product() {
        let a = Matrix::from_dense(2, 2, &[1.0, -2.0, 0.5, 3.0]).unwrap();
        let xs = [[1.0, 2.0], [-1.0, 0.25], [0.0, 4.0]];
        let mut input = vec![0.0; 6];
        for (p, x) in xs.iter().enumerate() {
            input[p] = x[0];
            input[3 + p] = x[1];
        }
        let mut out = Vec::new();
        a.mul_batch(&input, 3, Some(&[0.5, -0.5]), &mut out);
        for (p, x) in xs.iter().enumerate() {
            let y = a.mul_vec(x);
            assert!((out[p] - (y[0] + 0.5)).abs() < 1e-15);
            assert!((out[3 + p] - (y[1] - 0.5)).abs() < 1e-15);
        }
    }

    #[test]
    fn remap_and_select() {
        let a = Matrix::from_dense(1, 2, &[1.0, 2.0]).unwrap();
        let r = a.remap_columns(&[3, 0], 4).unwrap();
        assert_eq!(r.to_dense(), vec![2.0, 0.0, 0.0, 1.0]);
        let s = r.select_columns(&[3, 0]);
        assert_eq!(s.to_dense(), vec![1.0, 2.0]);
    }
}
