//! Exact k-nearest-neighbor queries over the training inputs, producing the
//! local neighborhood around an anchor point.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Exact Euclidean kNN over a dataset's inputs.
///
/// Queries are exhaustive scans; for the dataset sizes this crate targets
/// that is both affordable and exactly reproducible.
pub struct NeighborIndex<'a, F> {
    ds: &'a Dataset<F>,
}

impl<'a, F: Scalar> NeighborIndex<'a, F> {
    pub fn new(ds: &'a Dataset<F>) -> Self {
        NeighborIndex { ds }
    }

    pub fn len(&self) -> usize {
        self.ds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ds.len() == 0
    }

    /// Indices of the `k` nearest neighbors of sample `anchor` (excluding the
    /// anchor itself), ties broken by ascending sample index. The result is
    /// sorted by (distance, index).
    pub fn knn(&self, anchor: usize, k: usize) -> Result<Vec<usize>> {
        let n = self.ds.len();
        if anchor >= n {
            return Err(Error::Dimension {
                context: "knn anchor index",
                expected: n,
                got: anchor,
            });
        }
        if k == 0 || k >= n {
            return Err(Error::Config(format!(
                "neighbor count k={k} must satisfy 1 <= k <= N-1 (N={n})"
            )));
        }
        let query = self.ds.input(anchor);
        let mut scored: Vec<(F, usize)> = (0..n)
            .filter(|&i| i != anchor)
            .map(|i| (squared_distance(query, self.ds.input(i)), i))
            .collect();
        let cmp = |a: &(F, usize), b: &(F, usize)| {
            a.0.partial_cmp(&b.0)
                .expect("finite distances")
                .then(a.1.cmp(&b.1))
        };
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
        scored.sort_by(cmp);
        Ok(scored.into_iter().map(|(_, i)| i).collect())
    }
}

pub fn squared_distance<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .fold(F::zero(), |s, t| s + t)
}
