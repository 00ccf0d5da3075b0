//! One simulated training iteration of a multimodal model: each encoder
//! phase is balanced and dispatched on its own, the LLM phase is balanced on
//! whole interleaved sequences, and every encoder's outputs reach their LLM
//! destination in a single composed exchange.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::balance::{arrival_arrangement, arrival_batches, balance, BalancePolicy, PolicyKind};
use crate::error::{invalid, Error, Result};
use crate::exchange::{
    compose, simulate_exchange, CommunicatorMode, ExchangeCostReport, ExchangeParams, ExchangePlan,
};
use crate::rearrangement::{Rearrangement, Slot};
use crate::topology::{
    inter_node_egress, nodewise_rearrange, permutation_invariance_check, volume_matrix,
    ClusterTopology,
};
use crate::types::{
    interleaved_length, CostModel, Example, MiniBatch, ModalityId, ModalityRegistry, PaddingMode,
    SeqItem,
};

/// Modality name reserved for the LLM phase.
pub const LLM_MODALITY: &str = "llm";

/// One submodule executed per iteration: an encoder of one modality or the
/// LLM backbone (`modality = "llm"`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub name: String,
    pub modality: ModalityId,
    pub policy: BalancePolicy,
    pub cost_model: CostModel,
    /// Encoder output tokens per metadata unit divisor; encoders only.
    #[serde(default)]
    pub downsample_rate: Option<u32>,
}

impl PhaseSpec {
    pub fn is_llm(&self) -> bool {
        self.modality.as_str() == LLM_MODALITY
    }
}

/// Checks the phase list and returns the modality registry it declares.
pub fn phase_registry(phases: &[PhaseSpec]) -> Result<ModalityRegistry> {
    let llm = phases.iter().filter(|p| p.is_llm()).count();
    if llm != 1 {
        return Err(Error::Config(format!(
            "expected exactly one LLM phase, found {llm}"
        )));
    }
    let mut registry = ModalityRegistry::new();
    let mut names = Vec::new();
    for p in phases {
        if names.contains(&&p.name) {
            return Err(Error::Config(format!("phase name `{}` used twice", p.name)));
        }
        names.push(&p.name);
        p.policy
            .validate()
            .and_then(|()| p.cost_model.validate())
            .map_err(|e| Error::Config(format!("phase `{}`: {e}", p.name)))?;
        match (p.is_llm(), p.downsample_rate) {
            (true, None) => {}
            (true, Some(_)) => {
                return Err(Error::Config(format!(
                    "LLM phase `{}` takes no downsample rate",
                    p.name
                )))
            }
            (false, None) => {
                return Err(Error::Config(format!(
                    "encoder phase `{}` needs a downsample rate",
                    p.name
                )))
            }
            (false, Some(_)) if p.modality.is_text() => {
                return Err(Error::Config("text has no encoder phase".into()))
            }
            (false, Some(rate)) => registry.register(p.modality.clone(), rate)?,
        }
    }
    Ok(registry)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Fault {
    /// Deliver encoder outputs with the LLM rearrangement alone, ignoring
    /// where the encoder phase put them.
    SkipComposition,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrchestratorOptions {
    pub balance_encoders: bool,
    pub balance_llm: bool,
    pub nodewise: bool,
    pub communicator: CommunicatorMode,
    pub exchange: ExchangeParams,
    /// Modeled time per elementary solver step.
    pub solver_unit_cost: f64,
    pub fault: Option<Fault>,
}

impl Default for OrchestratorOptions {
    fn default() -> Self {
        Self {
            balance_encoders: true,
            balance_llm: true,
            nodewise: true,
            communicator: CommunicatorMode::AllToAll,
            exchange: ExchangeParams::default(),
            solver_unit_cost: 0.01,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostSummary {
    pub max: f64,
    pub mean: f64,
    /// `max / mean`, 1 when every instance is idle.
    pub imbalance_ratio: f64,
}

impl CostSummary {
    pub fn of(batches: &[MiniBatch], model: &CostModel) -> Self {
        let costs: Vec<f64> = batches
            .iter()
            .map(|b| model.cost_of(&b.lengths()))
            .collect();
        let max = costs.iter().copied().fold(0.0, f64::max);
        let mean = costs.iter().sum::<f64>() / costs.len().max(1) as f64;
        let imbalance_ratio = if mean > 0.0 { max / mean } else { 1.0 };
        Self {
            max,
            mean,
            imbalance_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodewiseReport {
    pub enabled: bool,
    /// Largest per-node egress with batches hosted where the balancer put them.
    pub baseline_max_egress: u64,
    pub max_egress: u64,
    pub baseline_total_egress: u64,
    pub total_egress: u64,
    pub proved_optimal: bool,
    pub explored: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseReport {
    pub name: String,
    pub modality: ModalityId,
    pub policy: PolicyKind,
    pub items: usize,
    pub balanced: bool,
    /// The arrival arrangement was kept because balancing would not help.
    pub kept_arrival: bool,
    pub pre: CostSummary,
    pub post: CostSummary,
    pub nodewise: NodewiseReport,
    pub permutation_invariant: bool,
    /// Dispatch of the phase inputs; for the LLM phase, delivery of text.
    pub exchange: ExchangeCostReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeliveryReport {
    pub modality: ModalityId,
    /// Exchanges performed to reach the LLM destination.
    pub exchanges: usize,
    /// Exchanges the reset-then-rearrange path needs.
    pub reference_exchanges: usize,
    pub reference_match: bool,
    pub exchange: ExchangeCostReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StepKind {
    Exchange,
    Compute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub label: String,
    pub kind: StepKind,
    pub duration: f64,
}

/// Critical-path steps of one forward pass and the balancing work that must
/// be hidden behind the previous one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationWork {
    pub steps: Vec<Step>,
    pub solver_time: f64,
}

impl IterationWork {
    pub fn forward_span(&self) -> f64 {
        self.steps.iter().map(|s| s.duration).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub examples: usize,
    pub per_phase: Vec<PhaseReport>,
    pub deliveries: Vec<DeliveryReport>,
    pub composed_exchanges: usize,
    pub reference_exchanges: usize,
    pub assembly_ok: bool,
    pub reference_match: bool,
    pub multiset_preserved: bool,
    /// Sum over phases of the node-wise objective (max node egress).
    pub inter_node_volume: u64,
    pub baseline_inter_node_volume: u64,
    pub peak_resident_volume: u64,
    pub work: IterationWork,
    pub forward_span: f64,
    pub overlap_ok: bool,
    pub overlap_excess: f64,
}

/// Everything an iteration produced, for inspection beyond the report.
#[derive(Debug, Clone)]
pub struct IterationOutcome {
    pub report: IterationReport,
    /// LLM-phase batches, one item per example.
    pub llm_batches: Vec<MiniBatch>,
    /// Per modality (text included), the delivered parts on each instance
    /// with encoded lengths.
    pub delivered: BTreeMap<ModalityId, Vec<MiniBatch>>,
    pub llm_rearrangement: Rearrangement,
    pub encoder_rearrangements: BTreeMap<ModalityId, Rearrangement>,
}

/// Example `k` starts on instance `k mod d`.
pub fn round_robin_origins(n: usize, d: usize) -> Vec<usize> {
    (0..n).map(|k| k % d.max(1)).collect()
}

struct PhaseRun {
    report: PhaseReport,
    arrival: Vec<MiniBatch>,
    rearrangement: Rearrangement,
    placed: Vec<MiniBatch>,
    solver_ops: u64,
}

fn run_phase(
    spec: &PhaseSpec,
    items: &[SeqItem],
    topo: &ClusterTopology,
    balance_on: bool,
    options: &OrchestratorOptions,
) -> Result<PhaseRun> {
    let d = topo.d;
    let model = &spec.cost_model;
    let arrival = arrival_batches(d, items, spec.policy.padding_mode())?;
    let pre = CostSummary::of(&arrival, model);

    let result = if balance_on {
        balance(&spec.policy, d, items)?
    } else {
        arrival_arrangement(&spec.policy, d, items)?
    };
    let mut kept_arrival = result.kept_arrival;
    let mut re = result.rearrangement;
    // the policy objective may differ from the phase cost model
    if balance_on && CostSummary::of(&result.new_batches, model).max > pre.max {
        re = Rearrangement::identity(&re.source_sizes());
        kept_arrival = true;
    }
    let balanced = re.apply(&arrival)?;

    let v = volume_matrix(&arrival, &re)?;
    let baseline = inter_node_egress(&v, topo, &topo.identity_hosting())?;
    let mut nodewise = NodewiseReport {
        enabled: options.nodewise,
        baseline_max_egress: baseline.iter().copied().max().unwrap_or(0),
        max_egress: baseline.iter().copied().max().unwrap_or(0),
        baseline_total_egress: baseline.iter().sum(),
        total_egress: baseline.iter().sum(),
        proved_optimal: false,
        explored: 0,
    };
    if options.nodewise {
        let out = nodewise_rearrange(&arrival, &re, topo)?;
        nodewise.max_egress = out.solution.max_egress;
        nodewise.total_egress = out.solution.per_node_egress.iter().sum();
        nodewise.proved_optimal = out.solution.proved_optimal;
        nodewise.explored = out.solution.explored;
        re = out.rearrangement;
    }

    let plan = ExchangePlan::new(&arrival, &re, options.communicator)?;
    let (placed, exchange) = simulate_exchange(&plan, &arrival, topo, &options.exchange)?;
    let post = CostSummary::of(&placed, model);

    let n = items.len() as u64;
    let mut solver_ops = 0;
    if balance_on {
        solver_ops += n * u64::from(u64::BITS - n.leading_zeros());
    }
    if options.nodewise {
        solver_ops += nodewise.explored * d as u64;
    }

    Ok(PhaseRun {
        report: PhaseReport {
            name: spec.name.clone(),
            modality: spec.modality.clone(),
            policy: spec.policy.kind,
            items: items.len(),
            balanced: balance_on,
            kept_arrival,
            pre,
            post,
            nodewise,
            permutation_invariant: permutation_invariance_check(&balanced, &placed, model),
            exchange,
        },
        arrival,
        rearrangement: re,
        placed,
        solver_ops,
    })
}

/// Items of `modality` in arrival order: by example, then part.
fn modality_items(
    examples: &[Example],
    origins: &[usize],
    modality: &ModalityId,
    encoded: bool,
) -> Result<Vec<SeqItem>> {
    let mut items = Vec::new();
    for (e, &origin) in examples.iter().zip(origins) {
        for k in e.parts_of(modality) {
            let length = if encoded {
                e.encoded_lengths[k]
            } else {
                e.parts[k].metadata_length
            };
            items.push(SeqItem::new(
                e.example_id,
                modality.clone(),
                k as u32,
                length,
                origin,
            )?);
        }
    }
    Ok(items)
}

/// Lifts the LLM rearrangement to the parts of one modality: each part goes
/// to its example's LLM instance, ordered by the example's LLM slot and then
/// by part index.
pub fn lift_to_parts(
    llm_re: &Rearrangement,
    llm_arrival: &[MiniBatch],
    parts_arrival: &[MiniBatch],
) -> Result<Rearrangement> {
    let mut dest: HashMap<u64, Slot> = HashMap::new();
    for (src, dst) in llm_re.iter() {
        dest.insert(llm_arrival[src.instance].items[src.slot].example_id, dst);
    }
    let mut per: Vec<Vec<(usize, u32, Slot)>> = vec![Vec::new(); llm_re.d()];
    for (i, b) in parts_arrival.iter().enumerate() {
        for (s, it) in b.items.iter().enumerate() {
            let ds = dest.get(&it.example_id).ok_or_else(|| {
                invalid(format!("example {} has no LLM destination", it.example_id))
            })?;
            per[ds.instance].push((ds.slot, it.part, Slot::new(i, s)));
        }
    }
    let destinations: Vec<Vec<Slot>> = per
        .into_iter()
        .map(|mut v| {
            v.sort_unstable();
            v.into_iter().map(|(_, _, src)| src).collect()
        })
        .collect();
    let sizes: Vec<usize> = parts_arrival.iter().map(MiniBatch::len).collect();
    Rearrangement::from_destinations(&sizes, &destinations)
}

/// Applies `re` slot by slot to batches that may no longer be laid out the
/// way `re` assumes. Positions outside its domain stay where they are.
pub fn apply_positionally(re: &Rearrangement, batches: &[MiniBatch]) -> Vec<MiniBatch> {
    let sizes = re.source_sizes();
    let mut placed: Vec<Vec<(usize, SeqItem)>> = vec![Vec::new(); re.d()];
    let mut strays: Vec<Vec<SeqItem>> = vec![Vec::new(); re.d()];
    for (i, b) in batches.iter().enumerate() {
        for (s, it) in b.items.iter().enumerate() {
            match re
                .dest(Slot::new(i, s))
                .filter(|_| s < sizes.get(i).copied().unwrap_or(0))
            {
                Some(dst) => placed[dst.instance].push((dst.slot, it.clone())),
                None => strays[i].push(it.clone()),
            }
        }
    }
    let mode = batches
        .first()
        .map_or(PaddingMode::Unpadded, |b| b.padding_mode);
    placed
        .into_iter()
        .zip(strays)
        .enumerate()
        .map(|(i, (mut p, s))| {
            p.sort_by_key(|(slot, _)| *slot);
            let items = p.into_iter().map(|(_, it)| it).chain(s).collect();
            MiniBatch::new(i, items, mode)
        })
        .collect()
}

/// True iff every example's parts sit on the instance hosting the example in
/// the LLM phase, in the order the LLM batch lists the examples, with part
/// lengths that interleave to the example's full length.
pub fn verify_assembly(
    llm_batches: &[MiniBatch],
    delivered: &BTreeMap<ModalityId, Vec<MiniBatch>>,
    examples: &[Example],
) -> bool {
    let by_id: HashMap<u64, &Example> = examples.iter().map(|e| (e.example_id, e)).collect();
    let mut modalities: Vec<&ModalityId> = delivered.keys().collect();
    for e in examples {
        for p in &e.parts {
            if !modalities.contains(&&p.modality) {
                modalities.push(&p.modality);
            }
        }
    }
    for (j, llm) in llm_batches.iter().enumerate() {
        for m in &modalities {
            let mut expected = Vec::new();
            for it in &llm.items {
                let Some(e) = by_id.get(&it.example_id) else {
                    return false;
                };
                if interleaved_length(e) != it.length {
                    return false;
                }
                for k in e.parts_of(m) {
                    expected.push((e.example_id, k as u32, e.encoded_lengths[k]));
                }
            }
            let got: Vec<(u64, u32, u64)> = delivered
                .get(*m)
                .and_then(|bs| bs.get(j))
                .map(|b| {
                    b.items
                        .iter()
                        .map(|it| (it.example_id, it.part, it.length))
                        .collect()
                })
                .unwrap_or_default();
            if got != expected {
                return false;
            }
        }
    }
    true
}

/// One example's interleaved sequence: `(example_id, [(modality, part, length)])`.
pub type AssembledExample = (u64, Vec<(ModalityId, u32, u64)>);

/// Interleaved sequences on each instance, per example in LLM slot order.
pub fn assemble(llm_batches: &[MiniBatch], examples: &[Example]) -> Vec<Vec<AssembledExample>> {
    let by_id: HashMap<u64, &Example> = examples.iter().map(|e| (e.example_id, e)).collect();
    llm_batches
        .iter()
        .map(|b| {
            b.items
                .iter()
                .filter_map(|it| by_id.get(&it.example_id))
                .map(|e| {
                    let seq = e
                        .interleave_order
                        .iter()
                        .map(|&k| (e.parts[k].modality.clone(), k as u32, e.encoded_lengths[k]))
                        .collect();
                    (e.example_id, seq)
                })
                .collect()
        })
        .collect()
}

fn sorted_keys(batches: &[MiniBatch]) -> Vec<(u64, ModalityId, u32, u64)> {
    let mut keys: Vec<_> = batches
        .iter()
        .flat_map(|b| &b.items)
        .map(|it| (it.example_id, it.modality.clone(), it.part, it.length))
        .collect();
    keys.sort_unstable();
    keys
}

fn with_encoded_lengths(batches: &[MiniBatch], by_id: &HashMap<u64, &Example>) -> Vec<MiniBatch> {
    batches
        .iter()
        .map(|b| {
            let items = b
                .items
                .iter()
                .map(|it| SeqItem {
                    length: by_id[&it.example_id].encoded_lengths[it.part as usize],
                    ..it.clone()
                })
                .collect();
            MiniBatch::new(b.instance, items, PaddingMode::Unpadded)
        })
        .collect()
}

/// Runs one iteration over `examples`, example `k` sampled on instance
/// `origins[k]`.
pub fn run_iteration(
    iteration: usize,
    examples: &[Example],
    origins: &[usize],
    phases: &[PhaseSpec],
    topo: &ClusterTopology,
    options: &OrchestratorOptions,
) -> Result<IterationOutcome> {
    topo.validate()?;
    options.exchange.validate()?;
    let registry = phase_registry(phases)?;
    let d = topo.d;
    if origins.len() != examples.len() || origins.iter().any(|&o| o >= d) {
        return Err(invalid("every example needs an origin instance below d"));
    }
    let mut by_id: HashMap<u64, &Example> = HashMap::new();
    for e in examples {
        if by_id.insert(e.example_id, e).is_some() {
            return Err(invalid(format!("example id {} repeated", e.example_id)));
        }
        if let Some(p) = e.parts.iter().find(|p| !registry.contains(&p.modality)) {
            return Err(Error::Config(format!(
                "example {} uses unregistered modality `{}`",
                e.example_id, p.modality
            )));
        }
    }
    let llm_spec = phases.iter().find(|p| p.is_llm()).expect("validated");

    let mut per_phase = Vec::new();
    let mut steps = Vec::new();
    let mut solver_ops = 0u64;
    let mut multiset_preserved = true;
    let mut encoders = Vec::new();
    for spec in phases.iter().filter(|p| !p.is_llm()) {
        let items = modality_items(examples, origins, &spec.modality, false)?;
        if items.is_empty() {
            continue;
        }
        let run = run_phase(spec, &items, topo, options.balance_encoders, options)?;
        multiset_preserved &= sorted_keys(&run.arrival) == sorted_keys(&run.placed);
        steps.push(Step {
            label: format!("{} dispatch", spec.name),
            kind: StepKind::Exchange,
            duration: run.report.exchange.modeled_time,
        });
        steps.push(Step {
            label: spec.name.clone(),
            kind: StepKind::Compute,
            duration: run.report.post.max,
        });
        solver_ops += run.solver_ops;
        per_phase.push(run.report.clone());
        encoders.push((spec, run));
    }

    let llm_items: Vec<SeqItem> = examples
        .iter()
        .zip(origins)
        .map(|(e, &o)| {
            SeqItem::new(
                e.example_id,
                ModalityId::new(LLM_MODALITY)?,
                0,
                interleaved_length(e),
                o,
            )
        })
        .collect::<Result<_>>()?;
    let llm = run_phase(llm_spec, &llm_items, topo, options.balance_llm, options)?;
    solver_ops += llm.solver_ops;
    let llm_keys = |bs: &[MiniBatch]| {
        let mut k: Vec<(u64, u64)> = bs
            .iter()
            .flat_map(|b| &b.items)
            .map(|it| (it.example_id, it.length))
            .collect();
        k.sort_unstable();
        k
    };
    multiset_preserved &= llm_keys(&llm.arrival) == llm_keys(&llm.placed);

    let mut delivered = BTreeMap::new();
    let mut deliveries = Vec::new();
    let mut encoder_rearrangements = BTreeMap::new();
    let mut reference_match = true;

    let text = ModalityId::text();
    let text_items = modality_items(examples, origins, &text, true)?;
    let text_arrival = arrival_batches(d, &text_items, PaddingMode::Unpadded)?;
    let text_re = lift_to_parts(&llm.rearrangement, &llm.arrival, &text_arrival)?;
    let text_plan = ExchangePlan::new(&text_arrival, &text_re, options.communicator)?;
    let (text_delivered, text_exchange) =
        simulate_exchange(&text_plan, &text_arrival, topo, &options.exchange)?;
    multiset_preserved &= sorted_keys(&text_arrival) == sorted_keys(&text_delivered);
    delivered.insert(text.clone(), text_delivered);

    let mut delivery_time = text_exchange.modeled_time;
    let mut peak_resident = text_exchange.peak_resident_volume;
    for (spec, run) in &encoders {
        let encoded_arrival = with_encoded_lengths(&run.arrival, &by_id);
        let encoded_placed = with_encoded_lengths(&run.placed, &by_id);
        let lifted = lift_to_parts(&llm.rearrangement, &llm.arrival, &encoded_arrival)?;

        let reset = run.rearrangement.inverse();
        let (at_origin, _) = simulate_exchange(
            &ExchangePlan::new(&encoded_placed, &reset, options.communicator)?,
            &encoded_placed,
            topo,
            &options.exchange,
        )?;
        let (reference, _) = simulate_exchange(
            &ExchangePlan::new(&at_origin, &lifted, options.communicator)?,
            &at_origin,
            topo,
            &options.exchange,
        )?;

        let composed = compose(&lifted, &run.rearrangement)?;
        let plan = ExchangePlan::new(&encoded_placed, &composed, options.communicator)?;
        let (mut batches, exchange) =
            simulate_exchange(&plan, &encoded_placed, topo, &options.exchange)?;
        if options.fault == Some(Fault::SkipComposition) {
            batches = apply_positionally(&lifted, &encoded_placed);
        }
        let matches = batches == reference;
        reference_match &= matches;
        multiset_preserved &= sorted_keys(&encoded_arrival) == sorted_keys(&batches);
        delivery_time += exchange.modeled_time;
        peak_resident = peak_resident.max(exchange.peak_resident_volume);
        deliveries.push(DeliveryReport {
            modality: spec.modality.clone(),
            exchanges: 1,
            reference_exchanges: 2,
            reference_match: matches,
            exchange,
        });
        delivered.insert(spec.modality.clone(), batches);
        encoder_rearrangements.insert(spec.modality.clone(), run.rearrangement.clone());
    }
    deliveries.push(DeliveryReport {
        modality: text,
        exchanges: 1,
        reference_exchanges: 1,
        reference_match: true,
        exchange: text_exchange.clone(),
    });

    steps.push(Step {
        label: "llm delivery".into(),
        kind: StepKind::Exchange,
        duration: delivery_time,
    });
    steps.push(Step {
        label: llm_spec.name.clone(),
        kind: StepKind::Compute,
        duration: llm.report.post.max,
    });

    let mut llm_report = llm.report;
    llm_report.exchange = text_exchange;
    per_phase.push(llm_report);

    let assembly_ok = verify_assembly(&llm.placed, &delivered, examples);
    let composed_exchanges = encoders.len();
    let inter_node_volume = per_phase.iter().map(|p| p.nodewise.max_egress).sum();
    let baseline_inter_node_volume = per_phase
        .iter()
        .map(|p| p.nodewise.baseline_max_egress)
        .sum();
    peak_resident = per_phase
        .iter()
        .map(|p| p.exchange.peak_resident_volume)
        .fold(peak_resident, u64::max);
    let work = IterationWork {
        steps,
        solver_time: options.solver_unit_cost * solver_ops as f64,
    };
    let schedule = overlap_schedule(std::slice::from_ref(&work));

    Ok(IterationOutcome {
        report: IterationReport {
            iteration,
            examples: examples.len(),
            per_phase,
            deliveries,
            composed_exchanges,
            reference_exchanges: 2 * composed_exchanges,
            assembly_ok,
            reference_match,
            multiset_preserved,
            inter_node_volume,
            baseline_inter_node_volume,
            peak_resident_volume: peak_resident,
            forward_span: work.forward_span(),
            work,
            overlap_ok: schedule.overlap_ok,
            overlap_excess: schedule.excess[0],
        },
        llm_batches: llm.placed,
        delivered,
        llm_rearrangement: llm.rearrangement,
        encoder_rearrangements,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Lane {
    Forward,
    Prefetch,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Segment {
    pub iteration: usize,
    pub lane: Lane,
    pub label: String,
    pub kind: Option<StepKind>,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapSchedule {
    pub overlap_ok: bool,
    /// Per iteration, solver time that did not fit behind a forward pass.
    pub excess: Vec<f64>,
    pub segments: Vec<Segment>,
}

/// Lays the forward passes on one lane and the balancing solves on a
/// prefetch lane. The solve for iteration `t + 1` starts with iteration
/// `t`'s forward pass and must finish before it ends; iteration 0's solve
/// gets a window as long as its own forward pass. A solve that overruns
/// delays the next forward pass by the excess.
pub fn overlap_schedule(work: &[IterationWork]) -> OverlapSchedule {
    let mut segments = Vec::new();
    let mut excess = Vec::with_capacity(work.len());
    let mut start = 0.0;
    for (t, w) in work.iter().enumerate() {
        let window = if t == 0 {
            w.forward_span()
        } else {
            work[t - 1].forward_span()
        };
        let window_start = start - window;
        let over = (w.solver_time - window).max(0.0);
        segments.push(Segment {
            iteration: t,
            lane: Lane::Prefetch,
            label: "solve".into(),
            kind: None,
            start: window_start,
            end: window_start + w.solver_time,
        });
        start += over;
        excess.push(over);
        for s in &w.steps {
            segments.push(Segment {
                iteration: t,
                lane: Lane::Forward,
                label: s.label.clone(),
                kind: Some(s.kind.clone()),
                start,
                end: start + s.duration,
            });
            start += s.duration;
        }
    }
    OverlapSchedule {
        overlap_ok: excess.iter().all(|&e| e == 0.0),
        excess,
        segments,
    }
}
