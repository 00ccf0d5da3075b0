//! Greedy packings driven by a priority queue over destination batches.

use super::heap::{BatchLoad, LoadHeap};

/// Item indices ordered by descending length; equal lengths keep input order.
pub(crate) fn descending_order(lengths: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by(|&a, &b| lengths[b].cmp(&lengths[a]));
    order
}

pub(crate) fn pack_with<F>(lengths: &[u64], d: usize, less: F) -> Vec<Vec<usize>>
where
    F: Fn(&BatchLoad, &BatchLoad) -> bool,
{
    let mut batches = vec![Vec::new(); d];
    let mut heap = LoadHeap::new(vec![BatchLoad::default(); d], less);
    for idx in descending_order(lengths) {
        let b = heap.push_to_top(lengths[idx]);
        batches[b].push(idx);
    }
    batches
}

/// Longest-first greedy: each item, in descending length order, joins the
/// batch with the smallest length sum.
pub fn pack_greedy(lengths: &[u64], d: usize) -> Vec<Vec<usize>> {
    pack_with(lengths, d, |a, b| a.sum < b.sum)
}

/// Longest-first greedy whose queue compares square sums when two batches'
/// length sums are within `tolerance` of each other.
pub fn pack_quadratic_tolerance(lengths: &[u64], d: usize, tolerance: u64) -> Vec<Vec<usize>> {
    pack_with(lengths, d, move |a, b| tolerance_less(a, b, tolerance))
}

pub(crate) fn tolerance_less(a: &BatchLoad, b: &BatchLoad, tolerance: u64) -> bool {
    if a.sum.abs_diff(b.sum) < tolerance {
        a.square_sum < b.square_sum
    } else {
        a.sum < b.sum
    }
}
