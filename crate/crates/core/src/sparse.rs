//! Compressed sparse row matrices and fixed sparsity patterns.

use std::collections::BTreeMap;

/// Compressed sparse row matrix with sorted, duplicate-free column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, row_ptr: vec![0; nrows + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; nrows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) outside {nrows}x{ncols}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_ptr[r + 1] += 1;
                col_idx.push(c);
                values.push(v);
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let ncols = rows.first().map_or(0, Vec::len);
        let triplets: Vec<_> = rows
            .iter()
            .enumerate()
            .flat_map(|(i, row)| {
                row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(move |(j, &v)| (i, j, v))
            })
            .collect();
        Self::from_triplets(rows.len(), ncols, &triplets)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[range.clone()], &self.values[range])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    #[inline]
    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let (cols, vals) = self.row(i);
        cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row_dot(i, x)).collect()
    }

    pub fn transpose_mul(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (i, &yi) in y.iter().enumerate().take(self.nrows) {
            if yi == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                out[c] += v * yi;
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, row) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                row[c] = v;
            }
        }
        d
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&c, &v)| (i, c, v))
        })
    }

    pub fn is_symmetric(&self) -> bool {
        self.nrows == self.ncols && self.triplets().all(|(i, j, v)| self.get(j, i) == v)
    }
}

/// Fixed coordinate pattern of a general sparse matrix.
///
/// Values are produced per evaluation into a flat buffer in pattern order and
/// scattered into a [`CsrMatrix`] whose structure is computed once.
#[derive(Clone, Debug)]
pub struct Pattern {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize)>,
    /// CSR slot for each pattern entry.
    slot: Vec<usize>,
    template: CsrMatrix,
}

impl Pattern {
    pub fn new(nrows: usize, ncols: usize, entries: Vec<(usize, usize)>) -> Self {
        let triplets: Vec<_> = entries.iter().map(|&(r, c)| (r, c, 0.0)).collect();
        let template = CsrMatrix::from_triplets(nrows, ncols, &triplets);
        let slot = entries
            .iter()
            .map(|&(r, c)| {
                let (cols, _) = template.row(r);
                template.row_ptr[r] + cols.binary_search(&c).unwrap()
            })
            .collect();
        Self { nrows, ncols, entries, slot, template }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    /// Scatters values given in pattern order; duplicate coordinates add up.
    pub fn to_csr(&self, values: &[f64]) -> CsrMatrix {
        let mut m = self.template.clone();
        for (&s, &v) in self.slot.iter().zip(values) {
            m.values[s] += v;
        }
        m
    }
}

/// Lower-triangular (`row >= col`) pattern of a symmetric matrix.
#[derive(Clone, Debug, Default)]
pub struct SymmetricPattern {
    n: usize,
    index: BTreeMap<(usize, usize), usize>,
    entries: Vec<(usize, usize)>,
}

impl SymmetricPattern {
    pub fn new(n: usize) -> Self {
        Self { n, index: BTreeMap::new(), entries: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Adds `(i, j)` (either triangle) and returns its position in value order.
    pub fn insert(&mut self, i: usize, j: usize) -> usize {
        let key = if i >= j { (i, j) } else { (j, i) };
        let next = self.entries.len();
        *self.index.entry(key).or_insert_with(|| {
            self.entries.push(key);
            next
        })
    }

    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let key = if i >= j { (i, j) } else { (j, i) };
        self.index.get(&key).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    /// Full symmetric assembly plan for this pattern.
    pub fn full_pattern(&self) -> Pattern {
        let mut entries = Vec::with_capacity(2 * self.entries.len());
        for &(i, j) in &self.entries {
            entries.push((i, j));
        }
        for &(i, j) in &self.entries {
            if i != j {
                entries.push((j, i));
            }
        }
        Pattern::new(self.n, self.n, entries)
    }

    /// Expands lower-triangle values into a full symmetric CSR matrix.
    pub fn to_csr(&self, full: &Pattern, lower_values: &[f64]) -> CsrMatrix {
        let mut values = Vec::with_capacity(full.len());
        values.extend_from_slice(lower_values);
        for (&(i, j), &v) in self.entries.iter().zip(lower_values) {
            if i != j {
                values.push(v);
            }
        }
        full.to_csr(&values)
    }
}
