//! Packing for padded-attention (convolutional transformer) encoders.

use super::greedy::{descending_order, pack_greedy};
use super::heap::{BatchLoad, LoadHeap};

/// Seeds up to `d` batches by a descending sweep bounded by the greedy
/// packing's maximum length sum, then hands the remaining items to the
/// smallest-sum batch one at a time.
///
/// The seeding sweep stops at the first item that would open batch `d + 1`;
/// the batch in progress at that point is kept.
pub fn pack_convtransformer(lengths: &[u64], d: usize) -> Vec<Vec<usize>> {
    if lengths.is_empty() {
        return vec![Vec::new(); d];
    }
    let bound: u64 = pack_greedy(lengths, d)
        .iter()
        .map(|b| b.iter().map(|&i| lengths[i]).sum::<u64>())
        .max()
        .unwrap_or(0);

    let order = descending_order(lengths);
    let mut seeded: Vec<Vec<usize>> = vec![Vec::new()];
    let mut consumed = 0;
    for &idx in &order {
        let current = seeded.last().map_or(0, Vec::len) as u64;
        if (current + 1) * lengths[idx] > bound {
            if seeded.len() >= d {
                break;
            }
            seeded.push(Vec::new());
        }
        seeded.last_mut().expect("at least one batch").push(idx);
        consumed += 1;
    }

    let loads = seeded
        .iter()
        .map(|b| {
            let mut load = BatchLoad::default();
            b.iter().for_each(|&i| load.push(lengths[i]));
            load
        })
        .collect();
    let mut heap = LoadHeap::new(loads, |a: &BatchLoad, b: &BatchLoad| a.sum < b.sum);
    for &idx in &order[consumed..] {
        let b = heap.push_to_top(lengths[idx]);
        seeded[b].push(idx);
    }
    seeded.resize(d, Vec::new());
    seeded
}

#[cfg(test)]
mod tests {
    use super::*;

    fn contents(lengths: &[u64], p: &[Vec<usize>]) -> Vec<Vec<u64>> {
        p.iter()
            .map(|b| b.iter().map(|&i| lengths[i]).collect())
            .collect()
    }

    #[test]
    fn hand_traced_seeding() {
        // greedy bound is 9; the descending sweep gives [6] and [5, 4, 3]
        let lengths = [6, 5, 4, 3];
        let p = pack_convtransformer(&lengths, 2);
        assert_eq!(contents(&lengths, &p), vec![vec![6], vec![5, 4, 3]]);
    }

    #[test]
    fn overflow_goes_through_queue() {
        // bound 23: seeds [12] and [12, 11]; 9 would open a third batch and
        // is handed to the smaller-sum batch instead
        let lengths = [12, 12, 11, 9];
        let p = pack_convtransformer(&lengths, 2);
        assert_eq!(contents(&lengths, &p), vec![vec![12, 9], vec![12, 11]]);
    }

    #[test]
    fn single_item() {
        assert_eq!(pack_convtransformer(&[7], 3), vec![vec![0], vec![], vec![]]);
    }
}
