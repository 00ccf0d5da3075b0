//! Simulated data movement between instances and its modeled cost.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rearrangement::Rearrangement;
use crate::topology::{inter_node_egress, volume_matrix, ClusterTopology, VolumeMatrix};
use crate::types::MiniBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CommunicatorMode {
    AllToAll,
    AllGather,
}

/// Tunables of the time model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExchangeParams {
    /// Protocol constant multiplying every All-to-All transfer time.
    pub a2a_constant: f64,
}

impl Default for ExchangeParams {
    fn default() -> Self {
        Self { a2a_constant: 1.0 }
    }
}

impl ExchangeParams {
    pub fn validate(&self) -> Result<()> {
        if self.a2a_constant.is_finite() && self.a2a_constant > 0.0 {
            Ok(())
        } else {
            Err(invalid(format!(
                "a2a_constant must be positive, got {}",
                self.a2a_constant
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExchangePlan {
    pub rearrangement: Rearrangement,
    /// Volume from each source instance to each destination instance. Under
    /// All-Gather every batch goes everywhere.
    pub per_pair_volumes: VolumeMatrix,
    pub mode: CommunicatorMode,
}

impl ExchangePlan {
    pub fn new(batches: &[MiniBatch], re: &Rearrangement, mode: CommunicatorMode) -> Result<Self> {
        let per_pair_volumes = match mode {
            CommunicatorMode::AllToAll => volume_matrix(batches, re)?,
            CommunicatorMode::AllGather => {
                // checks the shape even though the volumes ignore the mapping
                volume_matrix(batches, re)?;
                let d = re.d();
                VolumeMatrix::from_rows(batches.iter().map(|b| vec![token_volume(b); d]).collect())?
            }
        };
        Ok(Self {
            rearrangement: re.clone(),
            per_pair_volumes,
            mode,
        })
    }

    pub fn all_to_all(batches: &[MiniBatch], re: &Rearrangement) -> Result<Self> {
        Self::new(batches, re, CommunicatorMode::AllToAll)
    }
}

/// Tokens a batch actually holds; padding is never transmitted.
pub fn token_volume(batch: &MiniBatch) -> u64 {
    batch.items.iter().map(|it| it.length).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bottleneck {
    InterNode,
    IntraNode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExchangeCostReport {
    pub mode: CommunicatorMode,
    pub modeled_time: f64,
    /// Channel dominating the slowest instance; `None` when nothing moves.
    pub bottleneck: Option<Bottleneck>,
    pub total_inter_volume: u64,
    pub total_intra_volume: u64,
    pub per_node_egress: Vec<u64>,
    pub max_node_egress: u64,
    pub total_sent: u64,
    pub total_received: u64,
    /// Time bound from the largest source batch over the slowest link.
    pub upper_bound_time: f64,
    /// Largest per-instance resident volume during the exchange.
    pub peak_resident_volume: u64,
    /// Forward plus the mirrored backward exchange.
    pub round_trip_inter_volume: u64,
    pub round_trip_intra_volume: u64,
}

/// Moves `batches` according to `plan` and models the exchange time.
pub fn simulate_exchange(
    plan: &ExchangePlan,
    batches: &[MiniBatch],
    topo: &ClusterTopology,
    params: &ExchangeParams,
) -> Result<(Vec<MiniBatch>, ExchangeCostReport)> {
    topo.validate()?;
    params.validate()?;
    let d = topo.d;
    if plan.rearrangement.d() != d || batches.len() != d {
        return Err(invalid(format!(
            "plan over {} instances and {} batches for d={d}",
            plan.rearrangement.d(),
            batches.len()
        )));
    }
    let expected = ExchangePlan::new(batches, &plan.rearrangement, plan.mode)?;
    if expected.per_pair_volumes != plan.per_pair_volumes {
        return Err(invalid("plan volumes do not match the batches"));
    }
    let moved = plan.rearrangement.apply(batches)?;
    let v = &plan.per_pair_volumes;
    let local: Vec<u64> = batches.iter().map(token_volume).collect();
    let max_local = local.iter().copied().max().unwrap_or(0);
    let slowest_bw = if topo.num_nodes() > 1 {
        topo.inter_bw
    } else {
        topo.intra_bw
    };

    let mut inter = vec![0u64; d];
    let mut intra = vec![0u64; d];
    let mut incoming = vec![0u64; d];
    for i in 0..d {
        for j in (0..d).filter(|&j| j != i) {
            let vol = v.get(i, j);
            if topo.same_node(i, j) {
                intra[i] += vol;
            } else {
                inter[i] += vol;
            }
            incoming[j] += vol;
        }
    }
    let total_inter_volume: u64 = inter.iter().sum();
    let total_intra_volume: u64 = intra.iter().sum();
    let total_sent = total_inter_volume + total_intra_volume;
    let total_received: u64 = incoming.iter().sum();
    let per_node_egress = inter_node_egress(v, topo, &topo.identity_hosting())?;

    let (modeled_time, bottleneck, upper_bound_time, peak_resident_volume) = match plan.mode {
        CommunicatorMode::AllGather => {
            let time = (d - 1) as f64 * max_local as f64 / topo.inter_bw;
            let bottleneck = (total_sent > 0).then_some(if topo.num_nodes() > 1 {
                Bottleneck::InterNode
            } else {
                Bottleneck::IntraNode
            });
            (time, bottleneck, time, local.iter().sum())
        }
        CommunicatorMode::AllToAll => {
            let k = params.a2a_constant;
            let mut worst = (0.0f64, None);
            for i in 0..d {
                let t_inter = k * inter[i] as f64 / topo.inter_bw;
                let t_intra = k * intra[i] as f64 / topo.intra_bw;
                let t = t_inter + t_intra;
                if t > worst.0 {
                    let b = if t_inter >= t_intra {
                        Bottleneck::InterNode
                    } else {
                        Bottleneck::IntraNode
                    };
                    worst = (t, Some(b));
                }
            }
            let bound = k * max_local as f64 / slowest_bw;
            let peak = (0..d)
                .map(|i| v.get(i, i) + incoming[i].max(inter[i] + intra[i]))
                .max()
                .unwrap_or(0);
            (worst.0, worst.1, bound, peak)
        }
    };

    Ok((
        moved,
        ExchangeCostReport {
            mode: plan.mode,
            modeled_time,
            bottleneck,
            total_inter_volume,
            total_intra_volume,
            max_node_egress: per_node_egress.iter().copied().max().unwrap_or(0),
            per_node_egress,
            total_sent,
            total_received,
            upper_bound_time,
            peak_resident_volume,
            round_trip_inter_volume: 2 * total_inter_volume,
            round_trip_intra_volume: 2 * total_intra_volume,
        },
    ))
}

/// One `(instance, slot, length)` record of the gathered length table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LengthEntry {
    pub instance: usize,
    pub slot: usize,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LengthTable {
    /// The table as seen by each instance after the gather.
    pub views: Vec<Vec<LengthEntry>>,
    /// Entries sent between instances; metadata only.
    pub metadata_entries_sent: u64,
}

/// All-gathers every instance's item lengths so each instance can run the
/// balancer on the global table.
pub fn gather_lengths(local: &[Vec<u64>]) -> LengthTable {
    let d = local.len();
    let table: Vec<LengthEntry> = local
        .iter()
        .enumerate()
        .flat_map(|(instance, ls)| {
            ls.iter()
                .enumerate()
                .map(move |(slot, &length)| LengthEntry {
                    instance,
                    slot,
                    length,
                })
        })
        .collect();
    let metadata_entries_sent = table.len() as u64 * d.saturating_sub(1) as u64;
    LengthTable {
        views: vec![table; d],
        metadata_entries_sent,
    }
}

/// `outer ∘ inner⁻¹`, the single exchange taking items from where `inner`
/// left them to where `outer` wants them.
pub fn compose(outer: &Rearrangement, inner: &Rearrangement) -> Result<Rearrangement> {
    Rearrangement::compose(outer, inner)
}

pub fn inverse(re: &Rearrangement) -> Rearrangement {
    re.inverse()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rearrangement::Slot;
    use crate::types::{ModalityId, PaddingMode, SeqItem};

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
    fn all_gather_time() {
        let topo = ClusterTopology::new(4, 2, 10.0, 1.0).unwrap();
        let bs = batches(&[&[100], &[40], &[60, 10], &[1]]);
        let re = Rearrangement::identity(&[1, 1, 2, 1]);
        let plan = ExchangePlan::new(&bs, &re, CommunicatorMode::AllGather).unwrap();
        let (moved, rep) =
            simulate_exchange(&plan, &bs, &topo, &ExchangeParams::default()).unwrap();
        assert_eq!(rep.modeled_time, 300.0);
        assert_eq!(rep.peak_resident_volume, 211);
        assert_eq!(moved, bs);
        assert_eq!(rep.total_sent, rep.total_received);
    }

    #[test]
    fn all_to_all_intra_node_only() {
        let topo = ClusterTopology::new(4, 4, 10.0, 1.0).unwrap();
        let bs = batches(&[&[100], &[], &[], &[]]);
        let re =
            Rearrangement::new(4, vec![vec![Slot::new(3, 0)], vec![], vec![], vec![]]).unwrap();
        let plan = ExchangePlan::all_to_all(&bs, &re).unwrap();
        let (moved, rep) =
            simulate_exchange(&plan, &bs, &topo, &ExchangeParams::default()).unwrap();
        assert_eq!(rep.modeled_time, 10.0);
        assert!(rep.modeled_time <= 100.0 / 10.0);
        assert_eq!(rep.bottleneck, Some(Bottleneck::IntraNode));
        assert_eq!(rep.total_inter_volume, 0);
        assert_eq!(moved[3].lengths(), vec![100]);
        assert_eq!(rep.peak_resident_volume, 100);
    }

    #[test]
    fn idle_exchange_costs_nothing() {
        let topo = ClusterTopology::new(2, 1, 1.0, 1.0).unwrap();
        let bs = batches(&[&[5], &[7]]);
        let plan = ExchangePlan::all_to_all(&bs, &Rearrangement::identity(&[1, 1])).unwrap();
        let (_, rep) = simulate_exchange(&plan, &bs, &topo, &ExchangeParams::default()).unwrap();
        assert_eq!(rep.modeled_time, 0.0);
        assert_eq!(rep.bottleneck, None);
        assert_eq!(rep.peak_resident_volume, 7);
    }

    #[test]
    fn mismatched_plan_is_rejected() {
        let topo = ClusterTopology::new(2, 1, 1.0, 1.0).unwrap();
        let bs = batches(&[&[5], &[7]]);
        let plan = ExchangePlan::all_to_all(&bs, &Rearrangement::identity(&[1, 1])).unwrap();
        let other = batches(&[&[5], &[8]]);
        assert!(simulate_exchange(&plan, &other, &topo, &ExchangeParams::default()).is_err());
        let short = batches(&[&[5, 1], &[7]]);
        assert!(simulate_exchange(&plan, &short, &topo, &ExchangeParams::default()).is_err());
    }

    #[test]
    fn gather_examples() {
        let t = gather_lengths(&[vec![1, 2, 3], vec![4, 5, 6]]);
        assert_eq!(t.views.len(), 2);
        assert_eq!(t.views[0].len(), 6);
        assert_eq!(t.views[0], t.views[1]);
        assert_eq!(t.metadata_entries_sent, 6);
        let single = gather_lengths(&[vec![9, 8]]);
        assert_eq!(
            single.views[0].iter().map(|e| e.length).collect::<Vec<_>>(),
            vec![9, 8]
        );
        assert_eq!(single.metadata_entries_sent, 0);
    }

    #[test]
    fn compose_degenerate_cases() {
        let re = Rearrangement::new(
            2,
            vec![
                vec![Slot::new(1, 0), Slot::new(0, 0)],
                vec![Slot::new(1, 1)],
            ],
        )
        .unwrap();
        let id = Rearrangement::identity(&[2, 1]);
        assert!(compose(&re, &re).unwrap().is_identity());
        assert_eq!(compose(&re, &id).unwrap(), re);
        assert!(inverse(&id).is_identity());
    }
}
