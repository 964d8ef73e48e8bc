use rand::seq::SliceRandom;

use super::DataError;
use crate::seed::rng_for;

/// Index sets of a train/validation/test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n` with `seed` and cuts it by `fractions`. Train and
/// validation sizes are rounded; the test split takes the remainder.
pub fn dataset_split(n: usize, fractions: [f64; 3], seed: u64) -> Result<Split, DataError> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::Split(format!("fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    let n_train = ((n as f64 * fractions[0]).round() as usize).min(n);
    let n_val = ((n as f64 * fractions[1]).round() as usize).min(n - n_train);
    let sizes = [n_train, n_val, n - n_train - n_val];
    for (name, (&size, &f)) in ["train", "val", "test"].iter().zip(sizes.iter().zip(&fractions)) {
        if f > 0.0 && size == 0 {
            return Err(DataError::Split(format!("{name} fraction {f} leaves no samples out of {n}")));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, &[]));
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok(Split { train: order, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventy_five_twenty_five() {
        let s = dataset_split(100, [0.70, 0.05, 0.25], 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 5, 25));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn all_in_train() {
        let s = dataset_split(7, [1.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(s.train.len(), 7);
        assert!(s.val.is_empty() && s.test.is_empty());
    }

    #[test]
    fn deterministic_and_seed_dependent() {
        let f = [0.5, 0.25, 0.25];
        assert_eq!(dataset_split(40, f, 9).unwrap(), dataset_split(40, f, 9).unwrap());
        assert_ne!(dataset_split(40, f, 9).unwrap(), dataset_split(40, f, 10).unwrap());
    }

    #[test]
    fn rejects_bad_fractions_and_empty_splits() {
        assert!(dataset_split(10, [0.5, 0.5, 0.5], 0).is_err());
        assert!(dataset_split(5, [0.70, 0.05, 0.25], 0).is_err());
    }
}
