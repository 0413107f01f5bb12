use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Disjoint train/test partition of scene ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
}

/// Seeded random split with `ceil(test_fraction · N)` test ids; both lists
/// come back sorted.
pub fn make_split(all_ids: &[String], test_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::OutOfRange {
            what: "test_fraction",
            value: test_fraction,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let mut ids = all_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.is_empty() {
        return Err(Error::EmptyDataset);
    }
    // Tolerance keeps exact products such as 10 × 0.2 from rounding up.
    let n_test = ((test_fraction * ids.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let mut test_ids = ids.split_off(ids.len() - n_test);
    let mut train_ids = ids;
    test_ids.sort();
    train_ids.sort();
    Ok(DatasetSplit {
        train_ids,
        test_ids,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{i:05}")).collect()
    }

    #[test]
    fn second_sized_split_has_933_test_pairs() {
        let s = make_split(&ids(4662), 0.2, 1).unwrap();
        assert_eq!(s.test_ids.len(), 933);
        assert_eq!(s.train_ids.len(), 3729);
    }

    #[test]
    fn ten_ids_fifth_gives_two_test() {
        let s = make_split(&ids(10), 0.2, 1).unwrap();
        assert_eq!((s.test_ids.len(), s.train_ids.len()), (2, 8));
    }

    #[test]
    fn deterministic_and_partitioning() {
        let all = ids(57);
        let a = make_split(&all, 0.3, 9).unwrap();
        assert_eq!(a, make_split(&all, 0.3, 9).unwrap());
        assert_ne!(a.test_ids, make_split(&all, 0.3, 10).unwrap().test_ids);
        let mut union: Vec<String> = a.train_ids.iter().chain(&a.test_ids).cloned().collect();
        union.sort();
        assert_eq!(union, all);
        assert!(a.train_ids.iter().all(|id| !a.test_ids.contains(id)));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(make_split(&[], 0.2, 0), Err(Error::EmptyDataset)));
        assert!(make_split(&ids(3), 0.0, 0).is_err());
        assert!(make_split(&ids(3), 1.0, 0).is_err());
    }
}
