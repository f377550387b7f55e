use std::collections::VecDeque;

use super::affinity::AffinityMatrix;

/// Compressed sparse rows, used for the symmetric kernel during scaling.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    /// The principal submatrix of `k` on the sorted node list `keep`.
    pub fn restricted(k: &AffinityMatrix, keep: &[usize]) -> Self {
        let mut local = vec![usize::MAX; k.n()];
        for (new, &old) in keep.iter().enumerate() {
            local[old] = new;
        }
        let n = keep.len();
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        // Entries are sorted by (row, col), and `keep` is sorted, so rows come
        // out in order.
        let mut row = 0;
        for &(i, j, w) in k.entries() {
            let (li, lj) = (local[i], local[j]);
            if li == usize::MAX || lj == usize::MAX {
                continue;
            }
            while row < li {
                row += 1;
                row_ptr[row] = cols.len();
            }
            cols.push(lj);
            vals.push(w);
        }
        while row < n {
            row += 1;
            row_ptr[row] = cols.len();
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).1.iter().sum()).collect()
    }

    /// Connected components of the sparsity pattern, each sorted, ordered by
    /// smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.n];
        let mut out = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..self.n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            queue.push_back(start);
            let mut comp = Vec::new();
            while let Some(u) = queue.pop_front() {
                comp.push(u);
                for &v in self.row(u).0 {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }
}

/// Connected components of a dense symmetric block's exact zero pattern.
pub(crate) fn dense_components(block: &[f64], m: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; m];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..m {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(u) = queue.pop_front() {
            comp.push(u);
            for v in 0..m {
                if !seen[v] && block[u * m + v] != 0.0 {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restriction_drops_rows_and_columns() {
        let k = AffinityMatrix::from_dense(3, &[1.0, 2.0, 3.0, 2.0, 0.0, 4.0, 3.0, 4.0, 5.0]).unwrap();
        let c = Csr::restricted(&k, &[0, 2]);
        assert_eq!(c.n, 2);
        assert_eq!(c.row(0), (&[0usize, 1][..], &[1.0, 3.0][..]));
        assert_eq!(c.row(1), (&[0usize, 1][..], &[3.0, 5.0][..]));
    }

    #[test]
    fn components_of_two_blocks() {
        let k = AffinityMatrix::new(4, [(0, 2, 1.0), (2, 0, 1.0), (1, 1, 1.0), (3, 3, 2.0)], None).unwrap();
        let c = Csr::restricted(&k, &[0, 1, 2, 3]);
        assert_eq!(c.components(), vec![vec![0, 2], vec![1], vec![3]]);
        assert_eq!(dense_components(&k.to_dense(), 4), vec![vec![0, 2], vec![1], vec![3]]);
    }
}
