//! Domain types shared across the crate: modalities, sequence items, examples,
//! mini-batches and the per-batch cost model.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Short identifier of a modality ("text", "vision", "audio", ...).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModalityId(String);

impl ModalityId {
    pub const TEXT: &'static str = "text";

    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(invalid("modality id must be non-empty"));
        }
        Ok(Self(name))
    }

    pub fn text() -> Self {
        Self(Self::TEXT.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_text(&self) -> bool {
        self.0 == Self::TEXT
    }
}

impl TryFrom<String> for ModalityId {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Self::new(value)
    }
}

impl From<ModalityId> for String {
    fn from(value: ModalityId) -> Self {
        value.0
    }
}

impl fmt::Display for ModalityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Registered modalities and the connector downsample rate of each.
///
/// Text is always registered with rate 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityRegistry {
    rates: BTreeMap<ModalityId, u32>,
}

impl Default for ModalityRegistry {
    fn default() -> Self {
        let mut rates = BTreeMap::new();
        rates.insert(ModalityId::text(), 1);
        Self { rates }
    }
}

impl ModalityRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, modality: ModalityId, downsample_rate: u32) -> Result<()> {
        if downsample_rate == 0 {
            return Err(Error::Config(format!(
                "downsample rate of `{modality}` must be positive"
            )));
        }
        if modality.is_text() && downsample_rate != 1 {
            return Err(Error::Config("text downsample rate is fixed at 1".into()));
        }
        if !modality.is_text() && self.rates.contains_key(&modality) {
            return Err(Error::Config(format!(
                "modality `{modality}` registered twice"
            )));
        }
        self.rates.insert(modality, downsample_rate);
        Ok(())
    }

    pub fn with(mut self, name: &str, downsample_rate: u32) -> Result<Self> {
        self.register(ModalityId::new(name)?, downsample_rate)?;
        Ok(self)
    }

    pub fn downsample_rate(&self, modality: &ModalityId) -> Option<u32> {
        self.rates.get(modality).copied()
    }

    pub fn contains(&self, modality: &ModalityId) -> bool {
        self.rates.contains_key(modality)
    }

    /// Registered modalities in lexicographic order.
    pub fn modalities(&self) -> impl Iterator<Item = &ModalityId> {
        self.rates.keys()
    }

    /// Post-connector token count of a part with `metadata_length`.
    pub fn encode_length(&self, modality: &ModalityId, metadata_length: u64) -> Result<u64> {
        let rate = self
            .downsample_rate(modality)
            .ok_or_else(|| Error::Config(format!("unregistered modality `{modality}`")))?;
        Ok(metadata_length.div_ceil(u64::from(rate)))
    }
}

/// Whether a batch is padded to its longest sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PaddingMode {
    Padded,
    Unpadded,
}

/// One sequence scheduled in a phase.
///
/// Identity is `(example_id, modality, part)`; `origin_instance` is the
/// instance that sampled the owning example.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeqItem {
    pub example_id: u64,
    pub modality: ModalityId,
    pub part: u32,
    pub length: u64,
    pub origin_instance: usize,
}

impl SeqItem {
    pub fn new(
        example_id: u64,
        modality: ModalityId,
        part: u32,
        length: u64,
        origin_instance: usize,
    ) -> Result<Self> {
        if length == 0 {
            return Err(invalid(format!(
                "item ({example_id}, {modality}, {part}) has zero length"
            )));
        }
        Ok(Self {
            example_id,
            modality,
            part,
            length,
            origin_instance,
        })
    }

    pub fn key(&self) -> (u64, &ModalityId, u32) {
        (self.example_id, &self.modality, self.part)
    }
}

/// One modality part of an example, before encoding.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Part {
    pub modality: ModalityId,
    pub metadata_length: u64,
}

/// A multimodal training example.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Example {
    pub example_id: u64,
    pub parts: Vec<Part>,
    /// Order in which part subsequences are interleaved for the LLM.
    pub interleave_order: Vec<usize>,
    /// Post-connector token count of each part.
    pub encoded_lengths: Vec<u64>,
}

impl Example {
    pub fn new(
        example_id: u64,
        parts: Vec<Part>,
        interleave_order: Vec<usize>,
        registry: &ModalityRegistry,
    ) -> Result<Self> {
        if parts.is_empty() {
            return Err(invalid(format!("example {example_id} has no parts")));
        }
        let mut seen = vec![false; parts.len()];
        if interleave_order.len() != parts.len() {
            return Err(invalid(format!(
                "example {example_id}: interleave order has {} entries for {} parts",
                interleave_order.len(),
                parts.len()
            )));
        }
        for &k in &interleave_order {
            if k >= parts.len() || std::mem::replace(&mut seen[k], true) {
                return Err(invalid(format!(
                    "example {example_id}: interleave order is not a permutation"
                )));
            }
        }
        let mut encoded_lengths = Vec::with_capacity(parts.len());
        for part in &parts {
            if part.metadata_length == 0 {
                return Err(invalid(format!(
                    "example {example_id}: `{}` part has zero length",
                    part.modality
                )));
            }
            encoded_lengths.push(registry.encode_length(&part.modality, part.metadata_length)?);
        }
        Ok(Self {
            example_id,
            parts,
            interleave_order,
            encoded_lengths,
        })
    }

    /// Example with a single text part.
    pub fn text_only(example_id: u64, length: u64) -> Result<Self> {
        Self::new(
            example_id,
            vec![Part {
                modality: ModalityId::text(),
                metadata_length: length,
            }],
            vec![0],
            &ModalityRegistry::default(),
        )
    }

    /// Indices of the parts of `modality`, in part order.
    pub fn parts_of<'a>(&'a self, modality: &'a ModalityId) -> impl Iterator<Item = usize> + 'a {
        self.parts
            .iter()
            .enumerate()
            .filter(move |(_, p)| &p.modality == modality)
            .map(|(k, _)| k)
    }

    pub fn has_modality(&self, modality: &ModalityId) -> bool {
        self.parts.iter().any(|p| &p.modality == modality)
    }
}

/// Length of the whole interleaved sequence the LLM backbone sees.
pub fn interleaved_length(example: &Example) -> u64 {
    example.encoded_lengths.iter().sum()
}

/// The sequence items assigned to one instance for one phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiniBatch {
    pub instance: usize,
    pub items: Vec<SeqItem>,
    pub padding_mode: PaddingMode,
}

impl MiniBatch {
    pub fn new(instance: usize, items: Vec<SeqItem>, padding_mode: PaddingMode) -> Self {
        Self {
            instance,
            items,
            padding_mode,
        }
    }

    pub fn empty(instance: usize, padding_mode: PaddingMode) -> Self {
        Self::new(instance, Vec::new(), padding_mode)
    }

    pub fn lengths(&self) -> Vec<u64> {
        self.items.iter().map(|it| it.length).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Batch length of a list of sequence lengths: `count * max` when padded,
/// the plain sum otherwise. Empty input has length 0.
pub fn batch_length_of(lengths: &[u64], mode: PaddingMode) -> u64 {
    match mode {
        PaddingMode::Padded => lengths.len() as u64 * lengths.iter().copied().max().unwrap_or(0),
        PaddingMode::Unpadded => lengths.iter().sum(),
    }
}

pub fn batch_length(batch: &MiniBatch) -> u64 {
    batch_length_of(&batch.lengths(), batch.padding_mode)
}

/// Functional form of the per-batch computational cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CostVariant {
    /// `alpha * L`; beta is ignored.
    LinearOnly,
    /// Transformer attention: `alpha * L + beta * sum(l^2)` unpadded,
    /// `alpha * L + (beta / b) * L^2` padded.
    TransformerQuadratic,
    /// Padded attention of a convolutional transformer:
    /// `alpha * L + beta * b * max(l)^2`.
    ConvTransformerPadded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub alpha: f64,
    pub beta: f64,
    pub padding_mode: PaddingMode,
    pub variant: CostVariant,
}

impl CostModel {
    pub fn new(
        alpha: f64,
        beta: f64,
        padding_mode: PaddingMode,
        variant: CostVariant,
    ) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0 && beta.is_finite() && beta >= 0.0) {
            return Err(invalid(format!(
                "cost coefficients must be finite and nonnegative (alpha={alpha}, beta={beta})"
            )));
        }
        if variant == CostVariant::ConvTransformerPadded && padding_mode != PaddingMode::Padded {
            return Err(invalid("ConvTransformerPadded requires padded batches"));
        }
        Ok(Self {
            alpha,
            beta,
            padding_mode,
            variant,
        })
    }

    pub fn linear(padding_mode: PaddingMode) -> Self {
        Self {
            alpha: 1.0,
            beta: 0.0,
            padding_mode,
            variant: CostVariant::LinearOnly,
        }
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.alpha, self.beta, self.padding_mode, self.variant).map(|_| ())
    }

    /// Cost of a batch given only its sequence lengths, using this model's
    /// padding mode. Empty batches cost 0.
    pub fn cost_of(&self, lengths: &[u64]) -> f64 {
        let mut stats = BatchStats::default();
        lengths.iter().for_each(|&l| stats.push(l));
        self.cost_of_stats(&stats)
    }

    pub fn cost_of_stats(&self, s: &BatchStats) -> f64 {
        if s.count == 0 {
            return 0.0;
        }
        let big_l = match self.padding_mode {
            PaddingMode::Padded => (s.count * s.max) as f64,
            PaddingMode::Unpadded => s.sum as f64,
        };
        let linear = self.alpha * big_l;
        match self.variant {
            CostVariant::LinearOnly => linear,
            CostVariant::TransformerQuadratic => match self.padding_mode {
                PaddingMode::Unpadded => linear + self.beta * s.square_sum as f64,
                PaddingMode::Padded => linear + self.beta / s.count as f64 * big_l * big_l,
            },
            CostVariant::ConvTransformerPadded => {
                let max = s.max as f64;
                linear + self.beta * s.count as f64 * max * max
            }
        }
    }
}

/// Sufficient statistics of a batch for every cost variant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BatchStats {
    pub count: u64,
    pub sum: u64,
    pub square_sum: u128,
    pub max: u64,
}

impl BatchStats {
    pub fn push(&mut self, length: u64) {
        self.count += 1;
        self.sum += length;
        self.square_sum += u128::from(length) * u128::from(length);
        self.max = self.max.max(length);
    }

    pub fn with(mut self, length: u64) -> Self {
        self.push(length);
        self
    }
}

/// Cost of `batch` under `model`. The two must agree on padding mode.
pub fn cost(model: &CostModel, batch: &MiniBatch) -> Result<f64> {
    if model.padding_mode != batch.padding_mode {
        return Err(Error::ModeMismatch {
            model: model.padding_mode,
            batch: batch.padding_mode,
        });
    }
    Ok(model.cost_of(&batch.lengths()))
}
