//! Exhaustive min-max assignment search for small instances, used to check
//! the heuristic balancers.

use crate::error::{Error, Result};
use crate::types::{BatchStats, CostModel};

pub const DEFAULT_ORACLE_ITEM_CAP: usize = 14;
pub const ORACLE_INSTANCE_CAP: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    /// Destination batch of each input item.
    pub assignment: Vec<usize>,
    pub objective: f64,
}

/// True min-max objective of assigning `lengths` to `d` batches under
/// `model`, found by depth-first enumeration.
///
/// Enumeration skips assignments that only relabel batches: an item may
/// open at most one new (empty) batch, and items of equal length are placed
/// in non-decreasing batch order. Branches whose partial maximum already
/// reaches the incumbent are cut, which is exact because adding an item
/// never lowers a batch's cost.
pub fn oracle_optimal(
    d: usize,
    lengths: &[u64],
    model: &CostModel,
    item_cap: usize,
) -> Result<OracleSolution> {
    if d == 0 {
        return Err(Error::InvalidArgument("d must be at least 1".into()));
    }
    if lengths.len() > item_cap || d > ORACLE_INSTANCE_CAP {
        return Err(Error::SizeCap(format!(
            "n={} d={d} exceeds n<={item_cap}, d<={ORACLE_INSTANCE_CAP}",
            lengths.len()
        )));
    }
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by(|&a, &b| lengths[b].cmp(&lengths[a]));

    let mut search = Search {
        lengths,
        order: &order,
        model,
        stats: vec![BatchStats::default(); d],
        current: vec![0; lengths.len()],
        best: f64::INFINITY,
        best_assignment: vec![0; lengths.len()],
    };
    search.descend(0, 0.0);
    let objective = if lengths.is_empty() { 0.0 } else { search.best };
    Ok(OracleSolution {
        assignment: search.best_assignment,
        objective,
    })
}

struct Search<'a> {
    lengths: &'a [u64],
    order: &'a [usize],
    model: &'a CostModel,
    stats: Vec<BatchStats>,
    current: Vec<usize>,
    best: f64,
    best_assignment: Vec<usize>,
}

impl Search<'_> {
    fn descend(&mut self, depth: usize, partial_max: f64) {
        if depth == self.order.len() {
            if partial_max < self.best {
                self.best = partial_max;
                self.best_assignment.clone_from(&self.current);
            }
            return;
        }
        let idx = self.order[depth];
        let len = self.lengths[idx];
        let first_batch = match depth.checked_sub(1).map(|p| self.order[p]) {
            Some(prev) if self.lengths[prev] == len => self.current[prev],
            _ => 0,
        };
        let mut opened_empty = false;
        for b in first_batch..self.stats.len() {
            if self.stats[b].count == 0 {
                if opened_empty {
                    continue;
                }
                opened_empty = true;
            }
            let before = self.stats[b];
            let after = before.with(len);
            let cost = self.model.cost_of_stats(&after);
            let next_max = partial_max.max(cost);
            if next_max >= self.best {
                continue;
            }
            self.stats[b] = after;
            self.current[idx] = b;
            self.descend(depth + 1, next_max);
            self.stats[b] = before;
        }
    }
}
