use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const NUM_FOLDS: usize = 10;

/// One cross-validation fold: a held-out test block plus a predictor/calibrator
/// split of the remaining rows in ratio 5:4.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub fold_index: usize,
    pub test_rows: Vec<usize>,
    pub regressor_rows: Vec<usize>,
    pub calibrator_rows: Vec<usize>,
}

/// Builds the ten fold plans for `n` rows.
///
/// Rows are shuffled once into ten contiguous test blocks (sizes differ by at
/// most one, larger blocks first). For each fold the remaining rows are
/// reshuffled from a per-fold stream and the first `ceil(5m/9)` go to the
/// regressor.
pub fn make_split_plans(n: usize, seed: u64) -> Result<Vec<SplitPlan>> {
    if n < 20 {
        return Err(Error::invalid(format!("need at least 20 rows, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "split/folds"));

    let base = n / NUM_FOLDS;
    let extra = n % NUM_FOLDS;
    let mut bounds = Vec::with_capacity(NUM_FOLDS + 1);
    bounds.push(0);
    for k in 0..NUM_FOLDS {
        let size = base + usize::from(k < extra);
        bounds.push(bounds[k] + size);
    }

    let plans = (0..NUM_FOLDS)
        .map(|k| {
            let (lo, hi) = (bounds[k], bounds[k + 1]);
            let mut test_rows = order[lo..hi].to_vec();
            test_rows.sort_unstable();
            let mut rest: Vec<usize> = order[..lo].iter().chain(&order[hi..]).copied().collect();
            rest.sort_unstable();
            rest.shuffle(&mut rng::stream(
                rng::derive_seed(seed, &["split/fold", &k.to_string()]),
                "split/inner",
            ));
            let m = rest.len();
            let n_reg = (5 * m).div_ceil(9);
            let mut regressor_rows = rest[..n_reg].to_vec();
            let mut calibrator_rows = rest[n_reg..].to_vec();
            regressor_rows.sort_unstable();
            calibrator_rows.sort_unstable();
            SplitPlan {
                fold_index: k,
                test_rows,
                regressor_rows,
                calibrator_rows,
            }
        })
        .collect();
    Ok(plans)
}
