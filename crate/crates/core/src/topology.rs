//! Two-level cluster model, per-pair communication volumes and the node-wise
//! permutation that hosts destination batches where most of their data
//! already lives.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rearrangement::Rearrangement;
use crate::types::{CostModel, MiniBatch};

/// `d` instances grouped into nodes of `c` consecutive instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterTopology {
    pub d: usize,
    pub c: usize,
    pub intra_bw: f64,
    pub inter_bw: f64,
}

impl ClusterTopology {
    pub fn new(d: usize, c: usize, intra_bw: f64, inter_bw: f64) -> Result<Self> {
        let topo = Self {
            d,
            c,
            intra_bw,
            inter_bw,
        };
        topo.validate()?;
        Ok(topo)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.c == 0 || !self.d.is_multiple_of(self.c) {
            return Err(invalid(format!(
                "d={} must be a positive multiple of c={}",
                self.d, self.c
            )));
        }
        if !(self.inter_bw.is_finite() && self.inter_bw > 0.0) {
            return Err(invalid(format!(
                "inter_bw must be positive, got {}",
                self.inter_bw
            )));
        }
        if !(self.intra_bw.is_finite() && self.intra_bw >= self.inter_bw) {
            return Err(invalid(format!(
                "intra_bw ({}) must be at least inter_bw ({})",
                self.intra_bw, self.inter_bw
            )));
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.d / self.c
    }

    pub fn node_of(&self, instance: usize) -> usize {
        instance / self.c
    }

    pub fn same_node(&self, a: usize, b: usize) -> bool {
        self.node_of(a) == self.node_of(b)
    }

    /// Hosting that keeps every batch on the node of its current instance.
    pub fn identity_hosting(&self) -> Vec<usize> {
        (0..self.d).map(|b| self.node_of(b)).collect()
    }
}

/// `entries[i][j]`: total length sent from source instance `i` to
/// destination batch `j`, including what stays put on the diagonal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VolumeMatrix {
    d: usize,
    entries: Vec<u64>,
}

impl VolumeMatrix {
    pub fn zeros(d: usize) -> Self {
        Self {
            d,
            entries: vec![0; d * d],
        }
    }

    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(invalid("volume matrix must be square"));
        }
        Ok(Self {
            d,
            entries: rows.into_iter().flatten().collect(),
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn get(&self, src: usize, dst: usize) -> u64 {
        self.entries[src * self.d + dst]
    }

    pub fn add(&mut self, src: usize, dst: usize, volume: u64) {
        self.entries[src * self.d + dst] += volume;
    }

    pub fn row(&self, src: usize) -> &[u64] {
        &self.entries[src * self.d..(src + 1) * self.d]
    }

    pub fn row_sum(&self, src: usize) -> u64 {
        self.row(src).iter().sum()
    }

    pub fn col_sum(&self, dst: usize) -> u64 {
        (0..self.d).map(|i| self.get(i, dst)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        (0..self.d).map(|i| self.row(i).to_vec()).collect()
    }
}

/// Volume each source instance sends to each destination batch under `re`.
pub fn volume_matrix(batches: &[MiniBatch], re: &Rearrangement) -> Result<VolumeMatrix> {
    let sizes: Vec<usize> = batches.iter().map(MiniBatch::len).collect();
    if sizes != re.source_sizes() {
        return Err(invalid(format!(
            "batches of sizes {sizes:?} do not match the rearrangement's {:?}",
            re.source_sizes()
        )));
    }
    let mut v = VolumeMatrix::zeros(re.d());
    for (src, dst) in re.iter() {
        v.add(
            src.instance,
            dst.instance,
            batches[src.instance].items[src.slot].length,
        );
    }
    Ok(v)
}

/// Per-node volume sent to batches hosted on other nodes.
///
/// `hosting[b]` is the node of destination batch `b`; each node must host
/// exactly `c` batches.
pub fn inter_node_egress(
    v: &VolumeMatrix,
    topo: &ClusterTopology,
    hosting: &[usize],
) -> Result<Vec<u64>> {
    check_hosting(topo, hosting)?;
    if v.d() != topo.d {
        return Err(invalid(format!(
            "volume matrix is {}x{0} but d={}",
            v.d(),
            topo.d
        )));
    }
    let mut egress = vec![0u64; topo.num_nodes()];
    for i in 0..topo.d {
        let node = topo.node_of(i);
        for (b, &vol) in v.row(i).iter().enumerate() {
            if hosting[b] != node {
                egress[node] += vol;
            }
        }
    }
    Ok(egress)
}

fn check_hosting(topo: &ClusterTopology, hosting: &[usize]) -> Result<()> {
    topo.validate()?;
    if hosting.len() != topo.d {
        return Err(invalid(format!(
            "hosting covers {} batches, expected {}",
            hosting.len(),
            topo.d
        )));
    }
    let mut load = vec![0usize; topo.num_nodes()];
    for &n in hosting {
        *load
            .get_mut(n)
            .ok_or_else(|| invalid(format!("node {n} out of range")))? += 1;
    }
    if load.iter().any(|&l| l != topo.c) {
        return Err(invalid(format!(
            "hosting places {load:?} batches per node, expected {} each",
            topo.c
        )));
    }
    Ok(())
}

/// Destination instance of each batch under `hosting`: batches hosted on a
/// node fill its instances in ascending batch order.
pub fn hosting_to_instances(topo: &ClusterTopology, hosting: &[usize]) -> Result<Vec<usize>> {
    check_hosting(topo, hosting)?;
    let mut next = vec![0usize; topo.num_nodes()];
    Ok(hosting
        .iter()
        .map(|&n| {
            let inst = n * topo.c + next[n];
            next[n] += 1;
            inst
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HostingSolution {
    pub hosting: Vec<usize>,
    pub per_node_egress: Vec<u64>,
    pub max_egress: u64,
    /// Search nodes expanded by branch and bound.
    pub explored: u64,
    /// False when the search budget ran out before the incumbent was proved
    /// optimal; the hosting is then the best one found.
    pub proved_optimal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodewiseOutcome {
    /// The input rearrangement with destination batches relabelled.
    pub rearrangement: Rearrangement,
    pub solution: HostingSolution,
    /// Maximum node egress before permutation.
    pub baseline_max_egress: u64,
    pub baseline_per_node_egress: Vec<u64>,
}

impl NodewiseOutcome {
    pub fn max_egress(&self) -> u64 {
        self.solution.max_egress
    }
}

/// Search nodes branch and bound may expand before settling for its
/// incumbent.
pub const DEFAULT_SEARCH_BUDGET: u64 = 4_000_000;

/// Relabels the destination batches of `re` so that the maximum per-node
/// inter-node egress is minimal within [`DEFAULT_SEARCH_BUDGET`].
pub fn nodewise_rearrange(
    batches: &[MiniBatch],
    re: &Rearrangement,
    topo: &ClusterTopology,
) -> Result<NodewiseOutcome> {
    nodewise_rearrange_with_budget(batches, re, topo, DEFAULT_SEARCH_BUDGET)
}

pub fn nodewise_rearrange_with_budget(
    batches: &[MiniBatch],
    re: &Rearrangement,
    topo: &ClusterTopology,
    budget: u64,
) -> Result<NodewiseOutcome> {
    topo.validate()?;
    if re.d() != topo.d {
        return Err(invalid(format!(
            "rearrangement over {} instances, topology has {}",
            re.d(),
            topo.d
        )));
    }
    let v = volume_matrix(batches, re)?;
    let baseline_per_node_egress = inter_node_egress(&v, topo, &topo.identity_hosting())?;
    let solution = solve_hosting(&v, topo, budget)?;
    let perm = hosting_to_instances(topo, &solution.hosting)?;
    Ok(NodewiseOutcome {
        rearrangement: re.relabel_destinations(&perm)?,
        baseline_max_egress: baseline_per_node_egress.iter().copied().max().unwrap_or(0),
        baseline_per_node_egress,
        solution,
    })
}

/// Minimizes the maximum node egress over hostings with `c` batches per node.
///
/// Branch and bound: batches are decided in descending order of their
/// largest single-node volume; a partial hosting is cut when a per-node
/// bound (each node keeps its best remaining batches) or the averaged bound
/// (every remaining batch kept by its best node) cannot beat the incumbent.
/// The incumbent starts from the better of the identity hosting and a
/// greedy hosting refined by pairwise swaps, so the result never exceeds the
/// identity hosting's egress even when `budget` cuts the search short.
pub fn solve_hosting(
    v: &VolumeMatrix,
    topo: &ClusterTopology,
    budget: u64,
) -> Result<HostingSolution> {
    topo.validate()?;
    if v.d() != topo.d {
        return Err(invalid("volume matrix does not match topology"));
    }
    let problem = HostingProblem::new(v, topo);
    let mut incumbent = problem.evaluate(&topo.identity_hosting());
    let greedy = problem.improve(problem.greedy());
    if greedy < incumbent {
        incumbent = greedy;
    }
    let (best_max, _) = incumbent.0;
    let mut search = HostingSearch {
        problem: &problem,
        best_max,
        best: incumbent.1.clone(),
        hosting: vec![usize::MAX; topo.d],
        kept: vec![0; problem.nodes],
        count: vec![0; problem.nodes],
        explored: 0,
        budget,
    };
    if best_max > 0 {
        search.descend(0);
    }
    let per_node_egress = inter_node_egress(v, topo, &search.best)?;
    Ok(HostingSolution {
        max_egress: per_node_egress.iter().copied().max().unwrap_or(0),
        per_node_egress,
        proved_optimal: search.explored <= search.budget,
        hosting: search.best,
        explored: search.explored,
    })
}

struct HostingProblem {
    nodes: usize,
    c: usize,
    d: usize,
    /// `kept[n][b]`: volume node `n` avoids sending if it hosts batch `b`.
    keep: Vec<Vec<u64>>,
    outgoing: Vec<u64>,
    /// Batches in branching order.
    order: Vec<usize>,
    /// Per node, batches by descending `keep`.
    by_keep: Vec<Vec<usize>>,
    /// Per batch, nodes by descending `keep`.
    node_pref: Vec<Vec<usize>>,
    best_keep: Vec<u64>,
}

type Scored = ((u64, u64), Vec<usize>);

impl HostingProblem {
    fn new(v: &VolumeMatrix, topo: &ClusterTopology) -> Self {
        let (nodes, c, d) = (topo.num_nodes(), topo.c, topo.d);
        let mut keep = vec![vec![0u64; d]; nodes];
        let mut outgoing = vec![0u64; nodes];
        for i in 0..d {
            let n = topo.node_of(i);
            for (b, &vol) in v.row(i).iter().enumerate() {
                keep[n][b] += vol;
                outgoing[n] += vol;
            }
        }
        let best_keep: Vec<u64> = (0..d)
            .map(|b| (0..nodes).map(|n| keep[n][b]).max().unwrap_or(0))
            .collect();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| best_keep[b].cmp(&best_keep[a]).then(a.cmp(&b)));
        let by_keep = keep
            .iter()
            .map(|row| {
                let mut bs: Vec<usize> = (0..d).collect();
                bs.sort_by(|&a, &b| row[b].cmp(&row[a]).then(a.cmp(&b)));
                bs
            })
            .collect();
        let node_pref = (0..d)
            .map(|b| {
                let mut ns: Vec<usize> = (0..nodes).collect();
                ns.sort_by(|&x, &y| keep[y][b].cmp(&keep[x][b]).then(x.cmp(&y)));
                ns
            })
            .collect();
        Self {
            nodes,
            c,
            d,
            keep,
            outgoing,
            order,
            by_keep,
            node_pref,
            best_keep,
        }
    }

    /// `((max egress, total egress), hosting)`.
    fn evaluate(&self, hosting: &[usize]) -> Scored {
        let mut kept = vec![0u64; self.nodes];
        for (b, &n) in hosting.iter().enumerate() {
            kept[n] += self.keep[n][b];
        }
        let egress = (0..self.nodes).map(|n| self.outgoing[n] - kept[n]);
        let (max, total) = egress.fold((0, 0), |(m, t), e| (m.max(e), t + e));
        ((max, total), hosting.to_vec())
    }

    fn greedy(&self) -> Vec<usize> {
        let mut hosting = vec![0; self.d];
        let mut count = vec![0; self.nodes];
        for &b in &self.order {
            let n = self.node_pref[b]
                .iter()
                .copied()
                .find(|&n| count[n] < self.c)
                .expect("capacity matches batch count");
            hosting[b] = n;
            count[n] += 1;
        }
        hosting
    }

    /// Pairwise-swap descent on (max egress, total egress).
    fn improve(&self, hosting: Vec<usize>) -> Scored {
        let mut current = self.evaluate(&hosting);
        loop {
            let mut improved = false;
            for a in 0..self.d {
                for b in a + 1..self.d {
                    if current.1[a] == current.1[b] {
                        continue;
                    }
                    let mut h = current.1.clone();
                    h.swap(a, b);
                    let cand = self.evaluate(&h);
                    if cand.0 < current.0 {
                        current = cand;
                        improved = true;
                    }
                }
            }
            if !improved {
                return current;
            }
        }
    }
}

struct HostingSearch<'a> {
    problem: &'a HostingProblem,
    best_max: u64,
    best: Vec<usize>,
    hosting: Vec<usize>,
    kept: Vec<u64>,
    count: Vec<usize>,
    explored: u64,
    budget: u64,
}

impl HostingSearch<'_> {
    fn lower_bound(&self, depth: usize) -> u64 {
        let p = self.problem;
        let mut bound = 0u64;
        let mut total_egress = 0u64;
        for n in 0..p.nodes {
            let mut room = p.c - self.count[n];
            let mut optimistic = self.kept[n];
            for &b in &p.by_keep[n] {
                if room == 0 {
                    break;
                }
                if self.hosting[b] == usize::MAX {
                    optimistic += p.keep[n][b];
                    room -= 1;
                }
            }
            bound = bound.max(p.outgoing[n] - optimistic);
            total_egress += p.outgoing[n] - self.kept[n];
        }
        let remaining_keep: u64 = p.order[depth..].iter().map(|&b| p.best_keep[b]).sum();
        let averaged = total_egress
            .saturating_sub(remaining_keep)
            .div_ceil(p.nodes as u64);
        bound.max(averaged)
    }

    fn descend(&mut self, depth: usize) {
        self.explored += 1;
        if self.explored > self.budget {
            return;
        }
        let p = self.problem;
        if depth == p.d {
            let max = (0..p.nodes)
                .map(|n| p.outgoing[n] - self.kept[n])
                .max()
                .unwrap_or(0);
            if max < self.best_max {
                self.best_max = max;
                self.best.clone_from(&self.hosting);
            }
            return;
        }
        if self.lower_bound(depth) >= self.best_max {
            return;
        }
        let b = p.order[depth];
        for k in 0..p.nodes {
            let n = p.node_pref[b][k];
            if self.count[n] == p.c {
                continue;
            }
            self.hosting[b] = n;
            self.count[n] += 1;
            self.kept[n] += p.keep[n][b];
            self.descend(depth + 1);
            self.kept[n] -= p.keep[n][b];
            self.count[n] -= 1;
            self.hosting[b] = usize::MAX;
            if self.best_max == 0 || self.explored > self.budget {
                return;
            }
        }
    }
}

/// True iff `before` and `after` hold the same multiset of per-batch costs
/// under `model`.
pub fn permutation_invariance_check(
    before: &[MiniBatch],
    after: &[MiniBatch],
    model: &CostModel,
) -> bool {
    let costs = |bs: &[MiniBatch]| {
        let mut c: Vec<f64> = bs.iter().map(|b| model.cost_of(&b.lengths())).collect();
        c.sort_by(f64::total_cmp);
        c
    };
    before.len() == after.len() && costs(before) == costs(after)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rearrangement::Slot;
    use crate::types::{ModalityId, PaddingMode, SeqItem};

    fn topo(d: usize, c: usize) -> ClusterTopology {
        ClusterTopology::new(d, c, 10.0, 1.0).unwrap()
    }

    fn batches(lengths: &[&[u64]]) -> Vec<MiniBatch> {
        let mut id = 0;
        lengths
            .iter()
            .enumerate()
            .map(|(i, ls)| {
                let items = ls
                    .iter()
                    .map(|&l| {
                        id += 1;
                        SeqItem::new(id, ModalityId::text(), 0, l, i).unwrap()
                    })
                    .collect();
                MiniBatch::new(i, items, PaddingMode::Unpadded)
            })
            .collect()
    }

    #[test]
    fn topology_validation() {
        assert!(ClusterTopology::new(6, 4, 10.0, 1.0).is_err());
        assert!(ClusterTopology::new(4, 2, 0.5, 1.0).is_err());
        assert!(ClusterTopology::new(4, 2, 1.0, 0.0).is_err());
        assert!(ClusterTopology::new(0, 1, 1.0, 1.0).is_err());
        let t = topo(8, 4);
        assert_eq!(t.num_nodes(), 2);
        assert!(t.same_node(1, 3) && !t.same_node(3, 4));
    }

    #[test]
    fn identity_volume_is_diagonal() {
        let bs = batches(&[&[3, 4], &[5], &[]]);
        let v = volume_matrix(&bs, &Rearrangement::identity(&[2, 1, 0])).unwrap();
        assert_eq!(v.rows(), vec![vec![7, 0, 0], vec![0, 5, 0], vec![0, 0, 0]]);
    }

    #[test]
    fn swap_volume() {
        let bs = batches(&[&[10], &[10]]);
        let re = Rearrangement::new(2, vec![vec![Slot::new(1, 0)], vec![Slot::new(0, 0)]]).unwrap();
        let v = volume_matrix(&bs, &re).unwrap();
        assert_eq!(v.rows(), vec![vec![0, 10], vec![10, 0]]);
    }

    #[test]
    fn egress_examples() {
        let t = topo(4, 2);
        let diag = VolumeMatrix::from_rows(vec![
            vec![5, 0, 0, 0],
            vec![0, 5, 0, 0],
            vec![0, 0, 5, 0],
            vec![0, 0, 0, 5],
        ])
        .unwrap();
        assert_eq!(
            inter_node_egress(&diag, &t, &t.identity_hosting()).unwrap(),
            vec![0, 0]
        );

        // every instance sends 10 to a batch hosted on the other node
        let cross = VolumeMatrix::from_rows(vec![
            vec![0, 0, 10, 0],
            vec![0, 0, 0, 10],
            vec![10, 0, 0, 0],
            vec![0, 10, 0, 0],
        ])
        .unwrap();
        assert_eq!(
            inter_node_egress(&cross, &t, &t.identity_hosting()).unwrap(),
            vec![20, 20]
        );

        let single = topo(4, 4);
        assert_eq!(
            inter_node_egress(&cross, &single, &[0, 0, 0, 0]).unwrap(),
            vec![0]
        );

        assert!(inter_node_egress(&cross, &t, &[0, 0, 0, 1]).is_err());
    }

    #[test]
    fn crossing_pattern_is_fully_localized() {
        let t = topo(4, 2);
        // instances 0,1 hold data for batches 2,3 and vice versa
        let bs = batches(&[&[10], &[10], &[10], &[10]]);
        let re = Rearrangement::new(
            4,
            vec![
                vec![Slot::new(2, 0)],
                vec![Slot::new(3, 0)],
                vec![Slot::new(0, 0)],
                vec![Slot::new(1, 0)],
            ],
        )
        .unwrap();
        let out = nodewise_rearrange(&bs, &re, &t).unwrap();
        assert_eq!(out.baseline_max_egress, 20);
        assert_eq!(out.max_egress(), 0);
        assert!(out.rearrangement.is_identity());
    }

    #[test]
    fn diagonal_keeps_identity_hosting() {
        let t = topo(4, 2);
        let bs = batches(&[&[1], &[2], &[3], &[4]]);
        let re = Rearrangement::identity(&[1, 1, 1, 1]);
        let out = nodewise_rearrange(&bs, &re, &t).unwrap();
        assert_eq!(out.max_egress(), 0);
        assert_eq!(out.solution.hosting, t.identity_hosting());
        assert_eq!(out.rearrangement, re);
    }

    #[test]
    fn invariance_check_detects_changes() {
        let model = CostModel::linear(PaddingMode::Unpadded);
        let bs = batches(&[&[3, 4], &[5], &[1]]);
        let mut permuted = bs.clone();
        permuted.rotate_left(1);
        assert!(permutation_invariance_check(&bs, &permuted, &model));
        assert!(permutation_invariance_check(&bs, &bs, &model));
        let mut mutated = permuted.clone();
        mutated[0].items[0].length += 1;
        assert!(!permutation_invariance_check(&bs, &mutated, &model));
    }
}
