//! Compressed sparse row storage shared by the affinity and transition matrices.

use ndarray::Array2;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Csr {
    pub(crate) n: usize,
    pub(crate) indptr: Vec<usize>,
    pub(crate) indices: Vec<u32>,
    pub(crate) values: Vec<f64>,
}

impl Csr {
    /// Builds from `(row, col, value)` triplets; duplicates are not merged.
    pub(crate) fn from_triplets(n: usize, mut triplets: Vec<(u32, u32, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; n + 1];
        for &(r, _, _) in &triplets {
            indptr[r as usize + 1] += 1;
        }
        for k in 0..n {
            indptr[k + 1] += indptr[k];
        }
        let indices = triplets.iter().map(|t| t.1).collect();
        let values = triplets.iter().map(|t| t.2).collect();
        Self {
            n,
            indptr,
            indices,
            values,
        }
    }

    pub(crate) fn nnz(&self) -> usize {
        self.values.len()
    }

    pub(crate) fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub(crate) fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&(j as u32)) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub(crate) fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                out[[i, c as usize]] = v;
            }
        }
        out
    }

    pub(crate) fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&c, &v)| (i, c as usize, v))
        })
    }

    /// `out = self * m`
    #[inline]
    pub(crate) fn matvec(&self, m: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *o = cols.iter().zip(vals).map(|(&c, &v)| v * m[c as usize]).sum();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sorted_into_rows() {
        let m = Csr::from_triplets(3, vec![(2, 0, 4.0), (0, 2, 2.0), (0, 0, 1.0), (1, 1, 3.0)]);
        assert_eq!(m.indptr, vec![0, 2, 3, 4]);
        assert_eq!(m.row(0), (&[0u32, 2][..], &[1.0, 2.0][..]));
        assert_eq!(m.get(2, 0), 4.0);
        assert_eq!(m.get(2, 1), 0.0);
        let mut out = [0.0; 3];
        m.matvec(&[1.0, 10.0, 100.0], &mut out);
        assert_eq!(out, [201.0, 30.0, 4.0]);
        assert_eq!(m.to_dense()[[0, 2]], 2.0);
        assert_eq!(m.triplets().count(), m.nnz());
    }
}
