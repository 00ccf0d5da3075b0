//! Randomized and exhaustive checks of the balancers, the node-wise hosting
//! search and rearrangement composition against brute-force oracles.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::balance::{
    balance_binary_padded, balance_greedy_unpadded, get_least_batches, oracle_optimal,
    pack_binary_padded, pack_with, DEFAULT_ORACLE_ITEM_CAP,
};
use crate::error::Result;
use crate::rearrangement::{Rearrangement, Slot};
use crate::topology::DEFAULT_SEARCH_BUDGET;
use crate::topology::{inter_node_egress, solve_hosting, ClusterTopology, VolumeMatrix};
use crate::types::{batch_length_of, CostModel, MiniBatch, ModalityId, PaddingMode, SeqItem};

pub const APPROX_RATIO: f64 = 4.0 / 3.0;
const EPS: f64 = 1e-9;

/// Deliberate defects for checking that the suites catch a broken balancer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VerifyFault {
    /// The greedy queue pops the heaviest batch instead of the lightest.
    ReversedComparator,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyOptions {
    pub seed: u64,
    pub approx_trials: usize,
    pub approx_max_items: usize,
    pub approx_max_length: u64,
    /// Every multiset up to this size is checked exhaustively.
    pub exhaustive_max_items: usize,
    pub exhaustive_max_length: u64,
    pub padded_trials: usize,
    pub padded_max_items: usize,
    pub nodewise_trials: usize,
    pub nodewise_max_d: usize,
    pub composition_trials: usize,
    pub composition_items: usize,
    pub composition_d: usize,
    /// Upper limit on instances per suite; `Some(0)` runs nothing.
    pub cap: Option<usize>,
    pub fault: Option<VerifyFault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            approx_trials: 10_000,
            approx_max_items: 12,
            approx_max_length: 50,
            exhaustive_max_items: 8,
            exhaustive_max_length: 6,
            padded_trials: 5_000,
            padded_max_items: 10,
            nodewise_trials: 1_000,
            nodewise_max_d: 8,
            composition_trials: 1_000,
            composition_items: 20,
            composition_d: 4,
            cap: None,
            fault: None,
        }
    }
}

impl VerifyOptions {
    fn limit(&self, n: usize) -> usize {
        self.cap.map_or(n, |c| n.min(c))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub instances: usize,
    pub violations: usize,
    /// Largest observed ratio against the oracle, where one applies.
    pub worst_ratio: Option<f64>,
    pub counterexample: Option<String>,
}

impl CheckOutcome {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            instances: 0,
            violations: 0,
            worst_ratio: None,
            counterexample: None,
        }
    }

    fn ratio(&mut self, r: f64) {
        self.worst_ratio = Some(self.worst_ratio.map_or(r, |w| w.max(r)));
    }

    fn fail(&mut self, detail: impl FnOnce() -> String) {
        self.violations += 1;
        if self.counterexample.is_none() {
            self.counterexample = Some(detail());
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
    /// True when no instance was checked at all.
    pub vacuous: bool,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckOutcome::passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub fn run_verify(opts: &VerifyOptions) -> Result<VerifyReport> {
    let checks = vec![
        check_approximation(opts)?,
        check_padded_minimality(opts)?,
        check_nodewise(opts)?,
        check_composition(opts)?,
    ];
    let vacuous = checks.iter().all(|c| c.instances == 0);
    if vacuous {
        log::warn!("verification cap is 0: no instances were checked");
    }
    Ok(VerifyReport { checks, vacuous })
}

fn items_from(lengths: &[u64], d: usize) -> Vec<SeqItem> {
    lengths
        .iter()
        .enumerate()
        .map(|(k, &l)| {
            SeqItem::new(k as u64, ModalityId::text(), 0, l, k % d).expect("positive length")
        })
        .collect()
}

fn greedy_objective(lengths: &[u64], d: usize, fault: Option<VerifyFault>) -> Result<f64> {
    match fault {
        None => Ok(balance_greedy_unpadded(d, &items_from(lengths, d))?.objective_value),
        Some(VerifyFault::ReversedComparator) => {
            let packing = pack_with(lengths, d, |a, b| a.sum > b.sum);
            Ok(packing
                .iter()
                .map(|b| b.iter().map(|&i| lengths[i]).sum::<u64>() as f64)
                .fold(0.0, f64::max))
        }
    }
}

/// All nondecreasing sequences of `len` values drawn from `1..=max`.
fn multisets(len: usize, max: u64, out: &mut Vec<Vec<u64>>) {
    fn rec(len: usize, lo: u64, max: u64, cur: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if cur.len() == len {
            out.push(cur.clone());
            return;
        }
        for v in lo..=max {
            cur.push(v);
            rec(len, v, max, cur, out);
            cur.pop();
        }
    }
    rec(len, 1, max, &mut Vec::new(), out);
}

fn check_approximation(opts: &VerifyOptions) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new("greedy_approximation");
    let model = CostModel::linear(PaddingMode::Unpadded);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let run = |lengths: &[u64], d: usize, out: &mut CheckOutcome| -> Result<()> {
        let oracle = oracle_optimal(d, lengths, &model, DEFAULT_ORACLE_ITEM_CAP)?.objective;
        let got = greedy_objective(lengths, d, opts.fault)?;
        out.instances += 1;
        out.ratio(got / oracle);
        if got > APPROX_RATIO * oracle + EPS {
            out.fail(|| format!("d={d} lengths={lengths:?} greedy={got} optimum={oracle}"));
        }
        Ok(())
    };

    for _ in 0..opts.limit(opts.approx_trials) {
        let n = rng.random_range(1..=opts.approx_max_items);
        let d = rng.random_range(2..=4);
        let lengths: Vec<u64> = (0..n)
            .map(|_| rng.random_range(1..=opts.approx_max_length))
            .collect();
        run(&lengths, d, &mut out)?;
    }

    let mut all = Vec::new();
    for n in 1..=opts.exhaustive_max_items {
        multisets(n, opts.exhaustive_max_length, &mut all);
    }
    let budget = opts.limit(usize::MAX);
    'outer: for lengths in &all {
        for d in 2..=4 {
            if out.instances >= budget {
                break 'outer;
            }
            run(lengths, d, &mut out)?;
        }
    }
    Ok(out)
}

fn check_padded_minimality(opts: &VerifyOptions) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new("padded_minimality");
    let model = CostModel::linear(PaddingMode::Padded);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9ad);
    for _ in 0..opts.limit(opts.padded_trials) {
        let n = rng.random_range(1..=opts.padded_max_items);
        let d = rng.random_range(1..=3);
        let lengths: Vec<u64> = (0..n)
            .map(|_| rng.random_range(1..=opts.approx_max_length))
            .collect();
        let max = *lengths.iter().max().expect("n >= 1");
        out.instances += 1;
        let (bound, packing) = pack_binary_padded(&lengths, d).expect("non-empty");
        let feasible = |b: u64| b >= max && get_least_batches(&lengths, b).len() <= d;
        if !feasible(bound) {
            out.fail(|| format!("d={d} lengths={lengths:?}: bound {bound} infeasible"));
            continue;
        }
        if bound > max && feasible(bound - 1) {
            out.fail(|| format!("d={d} lengths={lengths:?}: bound {bound} not minimal"));
            continue;
        }
        let worst = packing
            .iter()
            .map(|b| {
                let ls: Vec<u64> = b.iter().map(|&i| lengths[i]).collect();
                batch_length_of(&ls, PaddingMode::Padded)
            })
            .max()
            .unwrap_or(0);
        if worst > bound {
            out.fail(|| format!("d={d} lengths={lengths:?}: batch {worst} exceeds bound {bound}"));
            continue;
        }
        let oracle = oracle_optimal(d, &lengths, &model, DEFAULT_ORACLE_ITEM_CAP)?.objective;
        let got = balance_binary_padded(d, &items_from(&lengths, d))?.objective_value;
        out.ratio(got / oracle);
        if got > APPROX_RATIO * oracle + EPS {
            out.fail(|| format!("d={d} lengths={lengths:?}: padded {got} vs optimum {oracle}"));
        }
    }
    Ok(out)
}

/// Minimum over every balanced hosting of the maximum node egress.
pub fn brute_force_hosting(v: &VolumeMatrix, topo: &ClusterTopology) -> Result<u64> {
    fn rec(
        b: usize,
        hosting: &mut Vec<usize>,
        load: &mut Vec<usize>,
        v: &VolumeMatrix,
        topo: &ClusterTopology,
        best: &mut u64,
    ) -> Result<()> {
        if b == topo.d {
            let egress = inter_node_egress(v, topo, hosting)?;
            *best = (*best).min(egress.into_iter().max().unwrap_or(0));
            return Ok(());
        }
        for n in 0..topo.num_nodes() {
            if load[n] < topo.c {
                load[n] += 1;
                hosting.push(n);
                rec(b + 1, hosting, load, v, topo, best)?;
                hosting.pop();
                load[n] -= 1;
            }
        }
        Ok(())
    }
    let mut best = u64::MAX;
    rec(
        0,
        &mut Vec::with_capacity(topo.d),
        &mut vec![0; topo.num_nodes()],
        v,
        topo,
        &mut best,
    )?;
    Ok(best)
}

fn check_nodewise(opts: &VerifyOptions) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new("nodewise_optimality");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x40de);
    for _ in 0..opts.limit(opts.nodewise_trials) {
        let d = rng.random_range(2..=opts.nodewise_max_d.max(2));
        let divisors: Vec<usize> = (1..=d).filter(|c| d % c == 0).collect();
        let c = *divisors.choose(&mut rng).expect("1 divides d");
        let topo = ClusterTopology::new(d, c, 1.0, 1.0)?;
        let density = rng.random_range(0.2..=1.0);
        let rows: Vec<Vec<u64>> = (0..d)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        if rng.random_bool(density) {
                            rng.random_range(0..=100)
                        } else {
                            0
                        }
                    })
                    .collect()
            })
            .collect();
        let v = VolumeMatrix::from_rows(rows)?;
        out.instances += 1;
        let sol = solve_hosting(&v, &topo, DEFAULT_SEARCH_BUDGET)?;
        let optimum = brute_force_hosting(&v, &topo)?;
        let identity = inter_node_egress(&v, &topo, &topo.identity_hosting())?
            .into_iter()
            .max()
            .unwrap_or(0);
        if sol.max_egress != optimum || sol.max_egress > identity || !sol.proved_optimal {
            out.fail(|| {
                format!(
                    "d={d} c={c} V={:?}: search {} (proved {}) optimum {optimum} identity {identity}",
                    v.rows(),
                    sol.max_egress,
                    sol.proved_optimal
                )
            });
        }
    }
    Ok(out)
}

/// A uniformly random bijection from `n` items spread over `d` source
/// instances onto `d` destination instances of random sizes.
pub fn random_rearrangement<R: Rng>(rng: &mut R, source_sizes: &[usize]) -> Result<Rearrangement> {
    let d = source_sizes.len();
    let n: usize = source_sizes.iter().sum();
    let dest_sizes = random_sizes(rng, n, d);
    let mut targets: Vec<Slot> = dest_sizes
        .iter()
        .enumerate()
        .flat_map(|(i, &k)| (0..k).map(move |s| Slot::new(i, s)))
        .collect();
    targets.shuffle(rng);
    let mut it = targets.into_iter();
    let moves = source_sizes
        .iter()
        .map(|&k| it.by_ref().take(k).collect())
        .collect();
    Rearrangement::new(d, moves)
}

pub fn random_sizes<R: Rng>(rng: &mut R, n: usize, d: usize) -> Vec<usize> {
    let mut sizes = vec![0; d];
    for _ in 0..n {
        sizes[rng.random_range(0..d)] += 1;
    }
    sizes
}

fn check_composition(opts: &VerifyOptions) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new("composition_equivalence");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xc0de);
    let d = opts.composition_d;
    for _ in 0..opts.limit(opts.composition_trials) {
        let sizes = random_sizes(&mut rng, opts.composition_items, d);
        let mut next_id = 0u64;
        let origin: Vec<MiniBatch> = sizes
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let items = (0..k)
                    .map(|_| {
                        next_id += 1;
                        let len = rng.random_range(1..=64);
                        SeqItem::new(next_id, ModalityId::text(), 0, len, i).expect("positive")
                    })
                    .collect();
                MiniBatch::new(i, items, PaddingMode::Unpadded)
            })
            .collect();
        let pi_e = random_rearrangement(&mut rng, &sizes)?;
        let pi_m = random_rearrangement(&mut rng, &sizes)?;
        out.instances += 1;

        let encoded = pi_e.apply(&origin)?;
        let composed = Rearrangement::compose(&pi_m, &pi_e)?.apply(&encoded)?;
        let reference = pi_m.apply(&pi_e.inverse().apply(&encoded)?)?;
        if composed != reference {
            out.fail(|| format!("sizes={sizes:?} pi_e={pi_e:?} pi_m={pi_m:?}"));
        }
    }
    Ok(out)
}
