//! Binary search over a padded batch-length bound, with an ascending greedy
//! packer as the feasibility test.

/// Item indices ordered by ascending length; equal lengths keep input order.
pub(crate) fn ascending_order(lengths: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| lengths[i]);
    order
}

/// Packs items in ascending length order, opening a new batch whenever the
/// current one would exceed `bound` in padded length. Returns the fewest
/// batches this sweep needs; never empty when `lengths` is non-empty.
///
/// Every returned batch has padded length `<= bound` provided `bound` is at
/// least the longest item.
pub fn get_least_batches(lengths: &[u64], bound: u64) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = vec![Vec::new()];
    for idx in ascending_order(lengths) {
        let current = batches.last().map_or(0, Vec::len) as u64;
        if (current + 1) * lengths[idx] > bound {
            batches.push(Vec::new());
        }
        batches.last_mut().expect("at least one batch").push(idx);
    }
    if batches.len() > 1 && batches[0].is_empty() {
        // only possible when the first item alone exceeds the bound
        batches.remove(0);
    }
    batches
}

/// Smallest bound in `[max, max * (n/d + 1)]` for which
/// [`get_least_batches`] needs at most `d` batches, with that packing padded
/// to exactly `d` batches. `None` for empty input.
pub fn pack_binary_padded(lengths: &[u64], d: usize) -> Option<(u64, Vec<Vec<usize>>)> {
    let max = lengths.iter().copied().max()?;
    let n = lengths.len() as u64;
    let mut left = max;
    let mut right = max * (n / d as u64 + 1);
    while left < right {
        let mid = left + (right - left) / 2;
        if get_least_batches(lengths, mid).len() <= d {
            right = mid;
        } else {
            left = mid + 1;
        }
    }
    let mut packing = get_least_batches(lengths, left);
    debug_assert!(packing.len() <= d);
    packing.resize(d, Vec::new());
    Some((left, packing))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{batch_length_of, PaddingMode};

    fn padded(lengths: &[u64], batch: &[usize]) -> u64 {
        let ls: Vec<u64> = batch.iter().map(|&i| lengths[i]).collect();
        batch_length_of(&ls, PaddingMode::Padded)
    }

    #[test]
    fn hand_traced_search() {
        let lengths = [7, 5, 3, 2];
        assert_eq!(get_least_batches(&lengths, 14).len(), 2);
        assert_eq!(get_least_batches(&lengths, 13).len(), 3);
        let (bound, p) = pack_binary_padded(&lengths, 2).unwrap();
        assert_eq!(bound, 14);
        let contents: Vec<Vec<u64>> = p
            .iter()
            .map(|b| b.iter().map(|&i| lengths[i]).collect())
            .collect();
        assert_eq!(contents, vec![vec![2, 3], vec![5, 7]]);
        assert_eq!(padded(&lengths, &p[0]), 6);
        assert_eq!(padded(&lengths, &p[1]), 14);
    }

    #[test]
    fn uniform_lengths_one_per_batch() {
        let lengths = [6; 5];
        let (bound, p) = pack_binary_padded(&lengths, 5).unwrap();
        assert_eq!(bound, 6);
        assert!(p.iter().all(|b| b.len() == 1));
    }

    #[test]
    fn single_item_pads_with_empty_batches() {
        let (bound, p) = pack_binary_padded(&[9], 3).unwrap();
        assert_eq!(bound, 9);
        assert_eq!(p, vec![vec![0], vec![], vec![]]);
        assert!(pack_binary_padded(&[], 3).is_none());
    }

    #[test]
    fn batches_respect_bound() {
        let lengths = [4, 9, 1, 1, 6, 3, 3, 8, 2];
        for bound in 9..60 {
            for b in get_least_batches(&lengths, bound) {
                assert!(padded(&lengths, &b) <= bound);
            }
        }
    }
}
