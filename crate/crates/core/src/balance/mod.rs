//! Post-balancing: rearranging already-sampled items across `d` instances so
//! the most expensive instance is as cheap as possible.
//!
//! Four policies are provided, one per batching scheme and cost shape:
//!
//! | policy               | batching  | objective per batch          |
//! |----------------------|-----------|------------------------------|
//! | `GreedyUnpadded`     | unpadded  | `sum(l)`                     |
//! | `BinaryPadded`       | padded    | `b * max(l)`                 |
//! | `QuadraticTolerance` | unpadded  | `sum(l) + λ * sum(l²)`       |
//! | `ConvTransformer`    | padded    | `b * max(l) + λ * b * max(l)²` |
//!
//! Every balancer compares its packing against the arrangement the items
//! arrived in and keeps the arrival arrangement when that is strictly
//! cheaper, so balancing never makes the maximum cost worse.

mod conv;
mod greedy;
mod heap;
mod oracle;
mod padded;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rearrangement::{Rearrangement, Slot};
use crate::types::{CostModel, CostVariant, MiniBatch, PaddingMode, SeqItem};

pub use conv::pack_convtransformer;
pub(crate) use greedy::pack_with;
pub use greedy::{pack_greedy, pack_quadratic_tolerance};
pub use oracle::{oracle_optimal, OracleSolution, DEFAULT_ORACLE_ITEM_CAP, ORACLE_INSTANCE_CAP};
pub use padded::{get_least_batches, pack_binary_padded};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    GreedyUnpadded,
    BinaryPadded,
    QuadraticTolerance,
    ConvTransformer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalancePolicy {
    pub kind: PolicyKind,
    /// Sum difference below which square sums decide (`QuadraticTolerance`).
    #[serde(default)]
    pub tolerance_v: u64,
    /// Weight of the quadratic term relative to the linear one.
    #[serde(default)]
    pub lambda: f64,
}

impl BalancePolicy {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            tolerance_v: 0,
            lambda: 0.0,
        }
    }

    pub fn quadratic_tolerance(lambda: f64, tolerance_v: u64) -> Self {
        Self {
            kind: PolicyKind::QuadraticTolerance,
            tolerance_v,
            lambda,
        }
    }

    pub fn convtransformer(lambda: f64) -> Self {
        Self {
            kind: PolicyKind::ConvTransformer,
            tolerance_v: 0,
            lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(invalid(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    pub fn padding_mode(&self) -> PaddingMode {
        match self.kind {
            PolicyKind::GreedyUnpadded | PolicyKind::QuadraticTolerance => PaddingMode::Unpadded,
            PolicyKind::BinaryPadded | PolicyKind::ConvTransformer => PaddingMode::Padded,
        }
    }

    /// The per-batch objective this policy minimizes, normalized to `alpha = 1`.
    pub fn cost_model(&self) -> CostModel {
        let (beta, variant) = match self.kind {
            PolicyKind::GreedyUnpadded | PolicyKind::BinaryPadded => (0.0, CostVariant::LinearOnly),
            PolicyKind::QuadraticTolerance => (self.lambda, CostVariant::TransformerQuadratic),
            PolicyKind::ConvTransformer => (self.lambda, CostVariant::ConvTransformerPadded),
        };
        CostModel {
            alpha: 1.0,
            beta,
            padding_mode: self.padding_mode(),
            variant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceResult {
    pub rearrangement: Rearrangement,
    pub new_batches: Vec<MiniBatch>,
    /// Maximum policy cost over `new_batches`.
    pub objective_value: f64,
    /// Bound found by the padded binary search, when applicable.
    pub search_bound: Option<u64>,
    /// Set when the arrival arrangement was cheaper than the packing.
    pub kept_arrival: bool,
}

/// Runs the balancer selected by `policy`.
pub fn balance(policy: &BalancePolicy, d: usize, items: &[SeqItem]) -> Result<BalanceResult> {
    policy.validate()?;
    match policy.kind {
        PolicyKind::GreedyUnpadded => balance_greedy_unpadded(d, items),
        PolicyKind::BinaryPadded => balance_binary_padded(d, items),
        PolicyKind::QuadraticTolerance => {
            balance_quadratic_tolerance(d, items, policy.lambda, policy.tolerance_v)
        }
        PolicyKind::ConvTransformer => balance_convtransformer(d, items, policy.lambda),
    }
}

pub fn balance_greedy_unpadded(d: usize, items: &[SeqItem]) -> Result<BalanceResult> {
    let layout = SourceLayout::new(d, items)?;
    let packing = pack_greedy(&layout.lengths, d);
    layout.finish(
        packing,
        &BalancePolicy::new(PolicyKind::GreedyUnpadded),
        None,
    )
}

pub fn balance_binary_padded(d: usize, items: &[SeqItem]) -> Result<BalanceResult> {
    let layout = SourceLayout::new(d, items)?;
    let (bound, packing) = pack_binary_padded(&layout.lengths, d)
        .ok_or_else(|| invalid("padded balancing needs at least one item"))?;
    layout.finish(
        packing,
        &BalancePolicy::new(PolicyKind::BinaryPadded),
        Some(bound),
    )
}

pub fn balance_quadratic_tolerance(
    d: usize,
    items: &[SeqItem],
    lambda: f64,
    tolerance_v: u64,
) -> Result<BalanceResult> {
    let policy = BalancePolicy::quadratic_tolerance(lambda, tolerance_v);
    policy.validate()?;
    let layout = SourceLayout::new(d, items)?;
    let packing = pack_quadratic_tolerance(&layout.lengths, d, tolerance_v);
    layout.finish(packing, &policy, None)
}

pub fn balance_convtransformer(d: usize, items: &[SeqItem], lambda: f64) -> Result<BalanceResult> {
    let policy = BalancePolicy::convtransformer(lambda);
    policy.validate()?;
    if items.is_empty() {
        return Err(invalid("convtransformer balancing needs at least one item"));
    }
    let layout = SourceLayout::new(d, items)?;
    let packing = pack_convtransformer(&layout.lengths, d);
    layout.finish(packing, &policy, None)
}

/// The result of leaving every item where it arrived.
pub fn arrival_arrangement(
    policy: &BalancePolicy,
    d: usize,
    items: &[SeqItem],
) -> Result<BalanceResult> {
    let layout = SourceLayout::new(d, items)?;
    let packing = layout.arrival_packing();
    layout.build(packing, policy, None, true)
}

/// Items grouped by origin instance; slot order follows input order.
struct SourceLayout<'a> {
    d: usize,
    items: &'a [SeqItem],
    lengths: Vec<u64>,
    slots: Vec<Slot>,
    sizes: Vec<usize>,
}

impl<'a> SourceLayout<'a> {
    fn new(d: usize, items: &'a [SeqItem]) -> Result<Self> {
        if d == 0 {
            return Err(invalid("instance count d must be at least 1"));
        }
        let mut sizes = vec![0usize; d];
        let mut slots = Vec::with_capacity(items.len());
        for it in items {
            let counter = sizes.get_mut(it.origin_instance).ok_or_else(|| {
                invalid(format!(
                    "item {:?} originates on instance {} but d={d}",
                    it.key(),
                    it.origin_instance
                ))
            })?;
            slots.push(Slot::new(it.origin_instance, *counter));
            *counter += 1;
        }
        Ok(Self {
            d,
            items,
            lengths: items.iter().map(|it| it.length).collect(),
            slots,
            sizes,
        })
    }

    fn arrival_packing(&self) -> Vec<Vec<usize>> {
        let mut packing = vec![Vec::new(); self.d];
        for (idx, slot) in self.slots.iter().enumerate() {
            packing[slot.instance].push(idx);
        }
        packing
    }

    fn objective(&self, packing: &[Vec<usize>], model: &CostModel) -> f64 {
        packing
            .iter()
            .map(|b| {
                let ls: Vec<u64> = b.iter().map(|&i| self.lengths[i]).collect();
                model.cost_of(&ls)
            })
            .fold(0.0, f64::max)
    }

    fn finish(
        &self,
        packing: Vec<Vec<usize>>,
        policy: &BalancePolicy,
        search_bound: Option<u64>,
    ) -> Result<BalanceResult> {
        let model = policy.cost_model();
        let arrival = self.arrival_packing();
        if self.objective(&arrival, &model) < self.objective(&packing, &model) {
            self.build(arrival, policy, search_bound, true)
        } else {
            self.build(packing, policy, search_bound, false)
        }
    }

    fn build(
        &self,
        packing: Vec<Vec<usize>>,
        policy: &BalancePolicy,
        search_bound: Option<u64>,
        kept_arrival: bool,
    ) -> Result<BalanceResult> {
        let model = policy.cost_model();
        let destinations: Vec<Vec<Slot>> = packing
            .iter()
            .map(|b| b.iter().map(|&i| self.slots[i]).collect())
            .collect();
        let rearrangement = Rearrangement::from_destinations(&self.sizes, &destinations)?;
        let mode = policy.padding_mode();
        let new_batches: Vec<MiniBatch> = packing
            .iter()
            .enumerate()
            .map(|(i, b)| {
                MiniBatch::new(i, b.iter().map(|&k| self.items[k].clone()).collect(), mode)
            })
            .collect();
        let objective_value = self.objective(&packing, &model);
        Ok(BalanceResult {
            rearrangement,
            new_batches,
            objective_value,
            search_bound,
            kept_arrival,
        })
    }
}

/// Groups items into per-instance batches by origin, in input order.
pub fn arrival_batches(d: usize, items: &[SeqItem], mode: PaddingMode) -> Result<Vec<MiniBatch>> {
    let mut batches: Vec<MiniBatch> = (0..d).map(|i| MiniBatch::empty(i, mode)).collect();
    for it in items {
        batches
            .get_mut(it.origin_instance)
            .ok_or_else(|| invalid(format!("origin {} out of range", it.origin_instance)))?
            .items
            .push(it.clone());
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ModalityId;

    fn items_on(origins: &[usize], lengths: &[u64]) -> Vec<SeqItem> {
        lengths
            .iter()
            .zip(origins)
            .enumerate()
            .map(|(k, (&l, &o))| SeqItem::new(k as u64, ModalityId::text(), 0, l, o).unwrap())
            .collect()
    }

    fn all_on_zero(lengths: &[u64]) -> Vec<SeqItem> {
        items_on(&vec![0; lengths.len()], lengths)
    }

    fn sorted_contents(r: &BalanceResult) -> Vec<Vec<u64>> {
        r.new_batches
            .iter()
            .map(|b| {
                let mut l = b.lengths();
                l.sort_unstable();
                l
            })
            .collect()
    }

    #[test]
    fn greedy_examples() {
        let r = balance_greedy_unpadded(2, &all_on_zero(&[5, 4, 3, 3, 2, 1])).unwrap();
        assert_eq!(sorted_contents(&r), vec![vec![1, 3, 5], vec![2, 3, 4]]);
        assert_eq!(r.objective_value, 9.0);

        let r = balance_greedy_unpadded(2, &all_on_zero(&[3, 3, 2, 2, 2])).unwrap();
        assert_eq!(r.objective_value, 7.0);

        let r = balance_greedy_unpadded(4, &all_on_zero(&[11])).unwrap();
        assert_eq!(r.objective_value, 11.0);
        assert_eq!(r.new_batches.len(), 4);
        assert_eq!(r.new_batches.iter().filter(|b| b.is_empty()).count(), 3);

        let r = balance_greedy_unpadded(3, &[]).unwrap();
        assert_eq!(r.objective_value, 0.0);
        assert!(balance_greedy_unpadded(0, &[]).is_err());
    }

    #[test]
    fn arrival_arrangement_kept_when_cheaper() {
        // {3,3} | {2,2,2} is optimal; the greedy packing would reach 7
        let items = items_on(&[0, 0, 1, 1, 1], &[3, 3, 2, 2, 2]);
        let r = balance_greedy_unpadded(2, &items).unwrap();
        assert!(r.kept_arrival);
        assert!(r.rearrangement.is_identity());
        assert_eq!(r.objective_value, 6.0);
    }

    #[test]
    fn padded_examples() {
        let r = balance_binary_padded(2, &all_on_zero(&[7, 5, 3, 2])).unwrap();
        assert_eq!(r.search_bound, Some(14));
        assert_eq!(sorted_contents(&r), vec![vec![2, 3], vec![5, 7]]);
        assert_eq!(r.objective_value, 14.0);

        let r = balance_binary_padded(3, &all_on_zero(&[9])).unwrap();
        assert_eq!(r.search_bound, Some(9));
        assert_eq!(r.new_batches.len(), 3);

        let r = balance_binary_padded(4, &items_on(&[0, 0, 1, 1], &[5, 5, 5, 5])).unwrap();
        assert_eq!(r.objective_value, 5.0);
        assert!(r.new_batches.iter().all(|b| b.len() == 1));

        assert!(balance_binary_padded(2, &[]).is_err());
    }

    #[test]
    fn quadratic_examples() {
        let r = balance_quadratic_tolerance(2, &all_on_zero(&[8, 8, 4, 4]), 0.1, 1).unwrap();
        assert_eq!(sorted_contents(&r), vec![vec![4, 8], vec![4, 8]]);
        assert!((r.objective_value - 20.0).abs() < 1e-9);

        let r = balance_quadratic_tolerance(3, &all_on_zero(&[6]), 0.5, 4).unwrap();
        assert!((r.objective_value - (6.0 + 0.5 * 36.0)).abs() < 1e-12);
        assert!(balance_quadratic_tolerance(2, &[], -1.0, 0).is_err());
    }

    #[test]
    fn zero_tolerance_matches_greedy_result() {
        let items = all_on_zero(&[9, 1, 7, 7, 3, 3, 2, 8, 8, 1]);
        for d in 1..5 {
            let g = balance_greedy_unpadded(d, &items).unwrap();
            let q = balance_quadratic_tolerance(d, &items, 0.0, 0).unwrap();
            assert_eq!(g.rearrangement, q.rearrangement);
        }
    }

    #[test]
    fn convtransformer_examples() {
        let items = all_on_zero(&[6, 5, 4, 3]);
        let r = balance_convtransformer(2, &items, 0.0).unwrap();
        let max_sum = r
            .new_batches
            .iter()
            .map(|b| crate::types::batch_length(b) as f64)
            .fold(0.0, f64::max);
        assert_eq!(r.objective_value, max_sum);

        let r = balance_convtransformer(2, &all_on_zero(&[7]), 0.25).unwrap();
        assert!((r.objective_value - (7.0 + 0.25 * 49.0)).abs() < 1e-12);
        assert!(balance_convtransformer(2, &[], 0.1).is_err());
    }

    #[test]
    fn output_is_valid_for_every_policy() {
        let items = items_on(&[0, 1, 2, 0, 1, 2, 2], &[4, 9, 2, 2, 7, 1, 5]);
        let policies = [
            BalancePolicy::new(PolicyKind::GreedyUnpadded),
            BalancePolicy::new(PolicyKind::BinaryPadded),
            BalancePolicy::quadratic_tolerance(0.1, 3),
            BalancePolicy::convtransformer(0.05),
        ];
        for p in &policies {
            let r = balance(p, 3, &items).unwrap();
            assert_eq!(r.new_batches.len(), 3);
            let source = arrival_batches(3, &items, p.padding_mode()).unwrap();
            assert_eq!(r.rearrangement.apply(&source).unwrap(), r.new_batches);
            let arrival = arrival_arrangement(p, 3, &items).unwrap();
            assert!(r.objective_value <= arrival.objective_value);
        }
    }

    #[test]
    fn rejects_out_of_range_origin() {
        let items = items_on(&[3], &[1]);
        assert!(balance_greedy_unpadded(2, &items).is_err());
    }
}
