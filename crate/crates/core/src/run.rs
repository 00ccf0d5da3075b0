//! Run configuration and the multi-iteration simulation driver.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::balance::{BalancePolicy, PolicyKind};
use crate::error::{Error, Result};
use crate::exchange::{CommunicatorMode, ExchangeParams};
use crate::orchestrator::{
    overlap_schedule, phase_registry, round_robin_origins, run_iteration, IterationReport,
    IterationWork, OrchestratorOptions, PhaseSpec, LLM_MODALITY,
};
use crate::topology::ClusterTopology;
use crate::types::{CostModel, CostVariant, Example, ModalityId, ModalityRegistry, PaddingMode};
use crate::workload::{
    composition_stats, default_profiles, generate, load_trace, CompositionStats, TaskProfile,
    AUDIO, VISION,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub examples: usize,
    pub profiles: Vec<TaskProfile>,
    pub weights: Vec<f64>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        let (profiles, weights) = default_profiles().into_iter().unzip();
        Self {
            examples: 4096,
            profiles,
            weights,
        }
    }
}

/// Where examples come from. With neither field set the default generator
/// is used.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    #[serde(default)]
    pub trace: Option<PathBuf>,
    #[serde(default)]
    pub generate: Option<GenerateConfig>,
}

/// Ablation switches; any combination is allowed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Baselines {
    /// Leave every phase as sampled.
    pub no_balance: bool,
    /// Balance only the LLM phase.
    pub llm_only_balance: bool,
    /// Encoders with an unpadded dispatcher use the padded one instead.
    pub all_pad: bool,
    /// Encoders with a padded dispatcher use the unpadded one instead.
    pub all_rmpad: bool,
    pub allgather_communicator: bool,
    pub disable_nodewise: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub iterations: usize,
    /// Examples per iteration, across all instances.
    pub global_batch: usize,
    pub solver_unit_cost: f64,
    pub topology: ClusterTopology,
    pub exchange: ExchangeParams,
    pub workload: WorkloadConfig,
    pub phases: Vec<PhaseSpec>,
    pub baselines: Baselines,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: 4,
            global_batch: 1024,
            solver_unit_cost: 0.01,
            topology: ClusterTopology {
                d: 32,
                c: 8,
                intra_bw: 1000.0,
                inter_bw: 100.0,
            },
            exchange: ExchangeParams::default(),
            workload: WorkloadConfig::default(),
            phases: default_phases(),
            baselines: Baselines::default(),
        }
    }
}

/// Vision encoder without padding, audio encoder with padded attention,
/// and the LLM backbone without padding.
pub fn default_phases() -> Vec<PhaseSpec> {
    let vision_lambda = 1.0 / 8192.0;
    vec![
        PhaseSpec {
            name: "vision_encoder".into(),
            modality: ModalityId::new(VISION).expect("static name"),
            policy: BalancePolicy::quadratic_tolerance(vision_lambda, 256),
            cost_model: CostModel {
                alpha: 1.0,
                beta: vision_lambda,
                padding_mode: PaddingMode::Unpadded,
                variant: CostVariant::TransformerQuadratic,
            },
            downsample_rate: Some(4),
        },
        PhaseSpec {
            name: "audio_encoder".into(),
            modality: ModalityId::new(AUDIO).expect("static name"),
            policy: BalancePolicy::new(PolicyKind::BinaryPadded),
            cost_model: CostModel {
                alpha: 1.0,
                beta: 1.0 / 8192.0,
                padding_mode: PaddingMode::Padded,
                variant: CostVariant::TransformerQuadratic,
            },
            downsample_rate: Some(2),
        },
        PhaseSpec {
            name: "llm".into(),
            modality: ModalityId::new(LLM_MODALITY).expect("static name"),
            policy: BalancePolicy::new(PolicyKind::GreedyUnpadded),
            cost_model: CostModel {
                alpha: 1.0,
                beta: 1.0 / 32768.0,
                padding_mode: PaddingMode::Unpadded,
                variant: CostVariant::TransformerQuadratic,
            },
            downsample_rate: None,
        },
    ]
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::from_toml_str(&text)?;
        // a relative trace path is relative to the config file
        if let (Some(trace), Some(dir)) = (&config.workload.trace, path.parent()) {
            if trace.is_relative() {
                config.workload.trace = Some(dir.join(trace));
            }
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.topology
            .validate()
            .map_err(|e| Error::Config(format!("topology: {e}")))?;
        self.exchange
            .validate()
            .map_err(|e| Error::Config(format!("exchange: {e}")))?;
        if self.global_batch == 0 {
            return Err(Error::Config("global_batch must be at least 1".into()));
        }
        if !(self.solver_unit_cost.is_finite() && self.solver_unit_cost >= 0.0) {
            return Err(Error::Config("solver_unit_cost must be nonnegative".into()));
        }
        if self.workload.trace.is_some() && self.workload.generate.is_some() {
            return Err(Error::Config(
                "workload takes either a trace path or generation settings, not both".into(),
            ));
        }
        let registry = self.registry()?;
        if let Some(g) = &self.workload.generate {
            for p in &g.profiles {
                p.validate(&registry)?;
            }
        }
        Ok(())
    }

    pub fn registry(&self) -> Result<ModalityRegistry> {
        phase_registry(&self.phases)
    }

    pub fn generate_config(&self) -> GenerateConfig {
        self.workload.generate.clone().unwrap_or_default()
    }

    /// Phase list with the padding ablations applied.
    pub fn effective_phases(&self) -> Vec<PhaseSpec> {
        self.phases
            .iter()
            .cloned()
            .map(|mut p| {
                if p.is_llm() {
                    return p;
                }
                let padded = p.policy.padding_mode() == PaddingMode::Padded;
                if self.baselines.all_pad && !padded {
                    p.policy.kind = PolicyKind::BinaryPadded;
                } else if self.baselines.all_rmpad && padded {
                    p.policy.kind = PolicyKind::GreedyUnpadded;
                }
                p
            })
            .collect()
    }

    pub fn options(&self) -> OrchestratorOptions {
        let b = &self.baselines;
        OrchestratorOptions {
            balance_encoders: !b.no_balance && !b.llm_only_balance,
            balance_llm: !b.no_balance,
            nodewise: !b.disable_nodewise,
            communicator: if b.allgather_communicator {
                CommunicatorMode::AllGather
            } else {
                CommunicatorMode::AllToAll
            },
            exchange: self.exchange,
            solver_unit_cost: self.solver_unit_cost,
            fault: None,
        }
    }

    /// Generates the configured workload or loads the configured trace.
    pub fn examples(&self) -> Result<Vec<Example>> {
        let registry = self.registry()?;
        match &self.workload.trace {
            Some(path) => load_trace(path, &registry),
            None => {
                let g = self.generate_config();
                generate(&g.profiles, &g.weights, g.examples, self.seed, &registry)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseSummary {
    pub name: String,
    pub modality: ModalityId,
    pub policy: PolicyKind,
    pub iterations: usize,
    pub mean_pre_ratio: f64,
    pub mean_post_ratio: f64,
    pub max_post_ratio: f64,
    pub summed_pre_max_cost: f64,
    pub summed_post_max_cost: f64,
    pub total_exchange_time: f64,
    pub baseline_inter_node_volume: u64,
    pub inter_node_volume: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub iterations: usize,
    pub examples: usize,
    pub per_phase: Vec<PhaseSummary>,
    /// Sum over iterations and phases of the post-balance max cost.
    pub summed_max_cost: f64,
    pub total_exchange_time: f64,
    pub inter_node_volume: u64,
    pub baseline_inter_node_volume: u64,
    /// Mean over iterations with inter-node traffic of node-wise volume
    /// divided by un-permuted volume.
    pub mean_nodewise_ratio: Option<f64>,
    pub never_worse: bool,
    pub nodewise_proved_optimal: bool,
    pub assembly_ok: bool,
    pub reference_match: bool,
    pub multiset_preserved: bool,
    pub overlap_ok: bool,
    pub peak_resident_volume: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub composition: CompositionStats,
    pub iterations: Vec<IterationReport>,
    pub summary: RunSummary,
}

/// Runs the configured number of iterations over consecutive slices of
/// `examples`, `global_batch` examples each.
pub fn simulate(config: &RunConfig, examples: &[Example]) -> Result<RunReport> {
    simulate_with_options(config, examples, config.options())
}

/// [`simulate`] with orchestrator options other than the ones the baseline
/// switches imply, e.g. with an injected fault.
pub fn simulate_with_options(
    config: &RunConfig,
    examples: &[Example],
    options: OrchestratorOptions,
) -> Result<RunReport> {
    config.validate()?;
    let registry = config.registry()?;
    let phases = config.effective_phases();
    let topo = config.topology;
    let mut iterations = Vec::new();
    for (t, chunk) in examples
        .chunks(config.global_batch)
        .take(config.iterations)
        .enumerate()
    {
        let origins = round_robin_origins(chunk.len(), topo.d);
        let outcome = run_iteration(t, chunk, &origins, &phases, &topo, &options)?;
        log::info!(
            "iteration {t}: {} examples, forward span {:.1}",
            chunk.len(),
            outcome.report.forward_span
        );
        iterations.push(outcome.report);
    }
    if iterations.len() < config.iterations {
        log::warn!(
            "workload covers {} of {} requested iterations",
            iterations.len(),
            config.iterations
        );
    }
    let work: Vec<IterationWork> = iterations.iter().map(|r| r.work.clone()).collect();
    let schedule = overlap_schedule(&work);
    for (r, &excess) in iterations.iter_mut().zip(&schedule.excess) {
        r.overlap_ok = excess == 0.0;
        r.overlap_excess = excess;
    }
    let used: usize = iterations.iter().map(|r| r.examples).sum();
    let summary = summarize(&iterations, used, schedule.overlap_ok);
    Ok(RunReport {
        config: config.clone(),
        composition: composition_stats(&examples[..used], &registry),
        iterations,
        summary,
    })
}

fn summarize(iterations: &[IterationReport], examples: usize, overlap_ok: bool) -> RunSummary {
    let mut per_phase: Vec<PhaseSummary> = Vec::new();
    for r in iterations {
        for p in &r.per_phase {
            let idx = match per_phase.iter().position(|s| s.name == p.name) {
                Some(i) => i,
                None => {
                    per_phase.push(PhaseSummary {
                        name: p.name.clone(),
                        modality: p.modality.clone(),
                        policy: p.policy,
                        iterations: 0,
                        mean_pre_ratio: 0.0,
                        mean_post_ratio: 0.0,
                        max_post_ratio: 0.0,
                        summed_pre_max_cost: 0.0,
                        summed_post_max_cost: 0.0,
                        total_exchange_time: 0.0,
                        baseline_inter_node_volume: 0,
                        inter_node_volume: 0,
                    });
                    per_phase.len() - 1
                }
            };
            let s = &mut per_phase[idx];
            s.iterations += 1;
            s.mean_pre_ratio += p.pre.imbalance_ratio;
            s.mean_post_ratio += p.post.imbalance_ratio;
            s.max_post_ratio = s.max_post_ratio.max(p.post.imbalance_ratio);
            s.summed_pre_max_cost += p.pre.max;
            s.summed_post_max_cost += p.post.max;
            s.total_exchange_time += p.exchange.modeled_time;
            s.baseline_inter_node_volume += p.nodewise.baseline_max_egress;
            s.inter_node_volume += p.nodewise.max_egress;
        }
    }
    for s in &mut per_phase {
        s.mean_pre_ratio /= s.iterations as f64;
        s.mean_post_ratio /= s.iterations as f64;
    }
    let ratios: Vec<f64> = iterations
        .iter()
        .filter(|r| r.baseline_inter_node_volume > 0)
        .map(|r| r.inter_node_volume as f64 / r.baseline_inter_node_volume as f64)
        .collect();
    let phases = || iterations.iter().flat_map(|r| &r.per_phase);
    RunSummary {
        iterations: iterations.len(),
        examples,
        summed_max_cost: per_phase.iter().map(|s| s.summed_post_max_cost).sum(),
        per_phase,
        total_exchange_time: iterations
            .iter()
            .map(|r| {
                r.work
                    .steps
                    .iter()
                    .filter(|s| s.kind == crate::orchestrator::StepKind::Exchange)
                    .map(|s| s.duration)
                    .sum::<f64>()
            })
            .sum(),
        inter_node_volume: iterations.iter().map(|r| r.inter_node_volume).sum(),
        baseline_inter_node_volume: iterations
            .iter()
            .map(|r| r.baseline_inter_node_volume)
            .sum(),
        mean_nodewise_ratio: (!ratios.is_empty())
            .then(|| ratios.iter().sum::<f64>() / ratios.len() as f64),
        never_worse: phases().all(|p| {
            p.post.max <= p.pre.max && p.nodewise.max_egress <= p.nodewise.baseline_max_egress
        }),
        nodewise_proved_optimal: phases().all(|p| !p.nodewise.enabled || p.nodewise.proved_optimal),
        assembly_ok: iterations.iter().all(|r| r.assembly_ok),
        reference_match: iterations.iter().all(|r| r.reference_match),
        multiset_preserved: iterations.iter().all(|r| r.multiset_preserved),
        overlap_ok,
        peak_resident_volume: iterations
            .iter()
            .map(|r| r.peak_resident_volume)
            .max()
            .unwrap_or(0),
    }
}

/// Column names of [`write_summary_csv`].
pub const CSV_HEADER: [&str; 19] = [
    "iteration",
    "phase",
    "modality",
    "policy",
    "items",
    "pre_max_cost",
    "pre_mean_cost",
    "pre_ratio",
    "post_max_cost",
    "post_mean_cost",
    "post_ratio",
    "exchange_time",
    "inter_volume",
    "intra_volume",
    "baseline_max_egress",
    "nodewise_max_egress",
    "peak_resident_volume",
    "kept_arrival",
    "overlap_ok",
];

/// One row per iteration and phase.
pub fn write_summary_csv<W: Write>(report: &RunReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in &report.iterations {
        for p in &r.per_phase {
            w.write_record([
                r.iteration.to_string(),
                p.name.clone(),
                p.modality.to_string(),
                format!("{:?}", p.policy),
                p.items.to_string(),
                p.pre.max.to_string(),
                p.pre.mean.to_string(),
                p.pre.imbalance_ratio.to_string(),
                p.post.max.to_string(),
                p.post.mean.to_string(),
                p.post.imbalance_ratio.to_string(),
                p.exchange.modeled_time.to_string(),
                p.exchange.total_inter_volume.to_string(),
                p.exchange.total_intra_volume.to_string(),
                p.nodewise.baseline_max_egress.to_string(),
                p.nodewise.max_egress.to_string(),
                p.exchange.peak_resident_volume.to_string(),
                p.kept_arrival.to_string(),
                r.overlap_ok.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}
