/// Compressed sparse row matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from per-row `(column, value)` lists; zero values are dropped
    /// and each row is sorted by column.
    pub fn from_rows(cols: usize, rows: &[Vec<(usize, f64)>]) -> Self {
        let mut m = Self::empty(rows.len(), cols);
        m.row_ptr.clear();
        m.row_ptr.push(0);
        for row in rows {
            let mut row: Vec<(usize, f64)> = row.iter().copied().filter(|(_, v)| *v != 0.0).collect();
            row.sort_by_key(|(c, _)| *c);
            for (c, v) in row {
                m.col_idx.push(c);
                m.values.push(v);
            }
            m.row_ptr.push(m.col_idx.len());
        }
        m
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.col_idx[a..b].iter().copied().zip(self.values[a..b].iter().copied())
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row_ptr[r + 1] - self.row_ptr[r]
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.row(r).map(|(_, v)| v).sum()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|(cc, _)| *cc == c).map_or(0.0, |(_, v)| v)
    }

    pub fn to_rows(&self) -> Vec<Vec<(usize, f64)>> {
        (0..self.rows).map(|r| self.row(r).collect()).collect()
    }

    /// Structural well-formedness: monotone row pointers, in-range sorted
    /// unique columns.
    pub fn check_structure(&self) -> Result<(), String> {
        if self.row_ptr.len() != self.rows + 1 || self.row_ptr[0] != 0 {
            return Err("row pointer length".into());
        }
        if *self.row_ptr.last().unwrap() != self.values.len() || self.col_idx.len() != self.values.len() {
            return Err("row pointer end does not match entry count".into());
        }
        for r in 0..self.rows {
            let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
            if a > b {
                return Err(format!("row {r} has decreasing pointers"));
            }
            let cols = &self.col_idx[a..b];
            if cols.iter().any(|&c| c >= self.cols) {
                return Err(format!("row {r} references a column >= {}", self.cols));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(format!("row {r} columns not strictly increasing"));
            }
        }
        Ok(())
    }
}
