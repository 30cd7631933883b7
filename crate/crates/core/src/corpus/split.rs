use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Dataset, Partition};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub validation_fraction: f64,
}

impl SplitSpec {
    pub fn new(seed: u64, validation_fraction: f64) -> Self {
        SplitSpec {
            seed,
            validation_fraction,
        }
    }
}

/// Seeded uniform shuffle followed by a prefix split. The training side gets
/// `ceil((1 - f) * N)` sentences and validation the remainder; both keep the
/// trainval partition tag.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset), CorpusError> {
    let f = spec.validation_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(CorpusError::InvalidFraction(f));
    }
    if dataset.partition != Partition::Trainval {
        return Err(CorpusError::NotTrainval);
    }
    let n = dataset.len();
    let n_train = (((1.0 - f) * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let n_train = n_train.min(n);

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);

    let pick = |idx: &[usize]| {
        Dataset::new(
            idx.iter().map(|&i| dataset.sentences[i].clone()).collect(),
            Partition::Trainval,
        )
    };
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}
