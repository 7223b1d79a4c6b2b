use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Number of ids a fraction selects out of `n`: `ceil(f * n)`.
pub fn subset_size(fraction: f64, n: usize) -> usize {
    let k = (fraction * n as f64 - 1e-9).ceil().max(0.0) as usize;
    k.min(n)
}

/// Nested random subsets: the ids are sorted, shuffled once with `seed`, and
/// fraction `f` takes the first `ceil(f * n)` of the shuffle. Returned in the
/// order of `fractions`.
pub fn make_subsets(ids: &[String], fractions: &[f64], seed: u64) -> Result<Vec<(f64, Vec<String>)>> {
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::Invalid(format!("fraction {f} outside [0, 1]")));
    }
    let mut order = ids.to_vec();
    order.sort();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(fractions
        .iter()
        .map(|&f| (f, order[..subset_size(f, order.len())].to_vec()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("case{i:03}")).collect()
    }

    #[test]
    fn sizes() {
        let s = make_subsets(&ids(100), &[0.0, 0.25, 0.5, 0.75, 1.0], 1).unwrap();
        let sizes: Vec<usize> = s.iter().map(|(_, v)| v.len()).collect();
        assert_eq!(sizes, vec![0, 25, 50, 75, 100]);
        assert_eq!(subset_size(0.25, 10), 3);
        assert_eq!(subset_size(0.5, 20), 10);
        assert_eq!(subset_size(1.0 / 3.0, 3), 1);
    }

    #[test]
    fn seeded_and_input_order_free() {
        let mut rev = ids(20);
        rev.reverse();
        let a = make_subsets(&ids(20), &[0.5], 9).unwrap();
        assert_eq!(a, make_subsets(&rev, &[0.5], 9).unwrap());
        assert_ne!(a, make_subsets(&ids(20), &[0.5], 10).unwrap());
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(make_subsets(&ids(4), &[1.5], 0).is_err());
        assert!(make_subsets(&ids(4), &[-0.1], 0).is_err());
    }
}
