use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub drop_last: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Tensor<f64>,
    pub labels: Tensor<f64>,
    /// Dataset rows in this batch.
    pub indices: Vec<usize>,
}

/// The epoch's permutation of `0..n`, a pure function of `(seed, epoch)`.
pub fn epoch_permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    Rng::with_stream(seed, 0xba7c_0000_0000 ^ epoch).permutation(n)
}

/// Index groups for one epoch.
pub fn batch_indices(n: usize, plan: &BatchPlan, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if plan.batch_size == 0 || plan.batch_size > n {
        return Err(Error::BadBatchSize {
            bs: plan.batch_size,
            samples: n,
        });
    }
    let perm = epoch_permutation(n, plan.seed, epoch);
    Ok(perm
        .chunks(plan.batch_size)
        .filter(|c| !plan.drop_last || c.len() == plan.batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

/// Batches for one epoch in order.
pub fn iterate_batches<'a>(
    ds: &'a Dataset,
    plan: &BatchPlan,
    epoch: u64,
) -> Result<impl Iterator<Item = Batch> + 'a> {
    let groups = batch_indices(ds.len(), plan, epoch)?;
    Ok(groups.into_iter().map(move |indices| Batch {
        images: ds.images.select_rows(&indices),
        labels: ds.labels.select_rows(&indices),
        indices,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};

    fn plan(bs: usize, drop_last: bool) -> BatchPlan {
        BatchPlan {
            batch_size: bs,
            seed: 3,
            drop_last,
        }
    }

    #[test]
    fn counts() {
        assert_eq!(batch_indices(512, &plan(128, false), 0).unwrap().len(), 4);
        assert_eq!(batch_indices(408, &plan(32, false), 0).unwrap().len(), 13);
        assert_eq!(batch_indices(408, &plan(32, true), 0).unwrap().len(), 12);
    }

    #[test]
    fn full_batch_is_permuted_dataset() {
        let ds = generate_synthetic(&SyntheticSpec {
            per_class: 2,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let batches: Vec<Batch> = iterate_batches(&ds, &plan(ds.len(), false), 4).unwrap().collect();
        assert_eq!(batches.len(), 1);
        let perm = epoch_permutation(ds.len(), 3, 4);
        assert_eq!(batches[0].indices, perm);
        assert_eq!(batches[0].images, ds.images.select_rows(&perm));
    }

    #[test]
    fn deterministic_and_reshuffled() {
        let a = batch_indices(100, &plan(10, false), 1).unwrap();
        assert_eq!(a, batch_indices(100, &plan(10, false), 1).unwrap());
        assert_ne!(a, batch_indices(100, &plan(10, false), 2).unwrap());
    }

    #[test]
    fn bad_sizes() {
        assert!(matches!(batch_indices(10, &plan(0, false), 0), Err(Error::BadBatchSize { .. })));
        assert!(matches!(batch_indices(10, &plan(11, false), 0), Err(Error::BadBatchSize { .. })));
    }
}
