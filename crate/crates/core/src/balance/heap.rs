/// Running totals of one destination batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub(crate) struct BatchLoad {
    pub sum: u64,
    pub square_sum: u128,
}

impl BatchLoad {
    pub fn push(&mut self, length: u64) {
        self.sum += length;
        self.square_sum += u128::from(length) * u128::from(length);
    }
}

/// Binary min-heap over batch indices ordered by a caller-supplied "less"
/// predicate on loads. Equal batches (neither is less) fall back to the
/// lower batch index, so the top is deterministic.
pub(crate) struct LoadHeap<F> {
    loads: Vec<BatchLoad>,
    heap: Vec<usize>,
    less: F,
}

impl<F> LoadHeap<F>
where
    F: Fn(&BatchLoad, &BatchLoad) -> bool,
{
    pub fn new(loads: Vec<BatchLoad>, less: F) -> Self {
        let heap = (0..loads.len()).collect();
        let mut h = Self { loads, heap, less };
        for pos in (0..h.heap.len() / 2).rev() {
            h.sift_down(pos);
        }
        h
    }

    fn before(&self, a: usize, b: usize) -> bool {
        let (la, lb) = (&self.loads[a], &self.loads[b]);
        (self.less)(la, lb) || (!(self.less)(lb, la) && a < b)
    }

    fn sift_down(&mut self, mut pos: usize) {
        let n = self.heap.len();
        loop {
            let (l, r) = (2 * pos + 1, 2 * pos + 2);
            let mut best = pos;
            if l < n && self.before(self.heap[l], self.heap[best]) {
                best = l;
            }
            if r < n && self.before(self.heap[r], self.heap[best]) {
                best = r;
            }
            if best == pos {
                return;
            }
            self.heap.swap(pos, best);
            pos = best;
        }
    }

    /// Adds `length` to the top batch and restores heap order. Returns the
    /// batch index that received it.
    pub fn push_to_top(&mut self, length: u64) -> usize {
        let top = self.heap[0];
        self.loads[top].push(length);
        self.sift_down(0);
        top
    }
}
