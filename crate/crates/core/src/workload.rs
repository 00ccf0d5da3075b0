//! Synthetic multimodal workloads, trace files and modality composition
//! statistics.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::types::{interleaved_length, Example, ModalityId, ModalityRegistry, Part};

pub const VISION: &str = "vision";
pub const AUDIO: &str = "audio";

/// Length distribution of one part, in metadata units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum LengthDist {
    /// `round(median * exp(sigma * z))` clamped to `[min, max]`.
    LogNormal {
        median: f64,
        sigma: f64,
        #[serde(default = "one")]
        min: u64,
        #[serde(default = "unbounded")]
        max: u64,
    },
    /// Integers in `[low, high]`, equally likely.
    Uniform {
        low: u64,
        high: u64,
    },
    Fixed {
        value: u64,
    },
}

fn one() -> u64 {
    1
}

fn unbounded() -> u64 {
    u64::MAX
}

impl LengthDist {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::LogNormal {
                median,
                sigma,
                min,
                max,
            } => {
                median.is_finite()
                    && median >= 1.0
                    && sigma.is_finite()
                    && sigma >= 0.0
                    && 1 <= min
                    && min <= max
            }
            Self::Uniform { low, high } => 1 <= low && low <= high,
            Self::Fixed { value } => value >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "length distribution {self:?} does not yield positive lengths"
            )))
        }
    }

    /// Length at standard-normal latent `z`; monotone in `z`.
    pub fn length_at(&self, z: f64) -> u64 {
        match *self {
            Self::LogNormal {
                median,
                sigma,
                min,
                max,
            } => {
                let raw = (median * (sigma * z).exp()).round();
                // saturating float-to-int cast keeps huge draws finite
                (raw as u64).clamp(min, max)
            }
            Self::Uniform { low, high } => {
                let u = standard_normal().cdf(z);
                let span = (high - low + 1) as f64;
                low + ((u * span) as u64).min(high - low)
            }
            Self::Fixed { value } => value,
        }
    }
}

fn standard_normal() -> Normal {
    Normal::standard()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartSpec {
    pub modality: ModalityId,
    pub length: LengthDist,
}

/// Latent correlation between the first parts of two modalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Correlation {
    pub first: ModalityId,
    pub second: ModalityId,
    pub rho: f64,
}

/// One task type of the mix. Parts are interleaved in listed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskProfile {
    pub name: String,
    pub parts: Vec<PartSpec>,
    #[serde(default)]
    pub correlation: Option<Correlation>,
}

impl TaskProfile {
    pub fn validate(&self, registry: &ModalityRegistry) -> Result<()> {
        if self.parts.is_empty() {
            return Err(Error::Config(format!(
                "profile `{}` has no parts",
                self.name
            )));
        }
        for p in &self.parts {
            if !registry.contains(&p.modality) {
                return Err(Error::Config(format!(
                    "profile `{}` uses unregistered modality `{}`",
                    self.name, p.modality
                )));
            }
            p.length.validate()?;
        }
        if let Some(c) = &self.correlation {
            if !(-1.0..=1.0).contains(&c.rho) {
                return Err(Error::Config(format!(
                    "profile `{}`: correlation {} outside [-1, 1]",
                    self.name, c.rho
                )));
            }
            if c.first == c.second
                || self.first_part(&c.first).is_none()
                || self.first_part(&c.second).is_none()
            {
                return Err(Error::Config(format!(
                    "profile `{}`: correlation must name two distinct modalities of the profile",
                    self.name
                )));
            }
        }
        Ok(())
    }

    fn first_part(&self, m: &ModalityId) -> Option<usize> {
        self.parts.iter().position(|p| &p.modality == m)
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<u64> {
        let mut z: Vec<f64> = (0..self.parts.len())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        if let Some(c) = &self.correlation {
            let a = self.first_part(&c.first).expect("validated");
            let b = self.first_part(&c.second).expect("validated");
            z[b] = c.rho * z[a] + (1.0 - c.rho * c.rho).sqrt() * z[b];
        }
        self.parts
            .iter()
            .zip(z)
            .map(|(p, z)| p.length.length_at(z))
            .collect()
    }
}

/// Registry with text, vision (downsample 4) and audio (downsample 2).
pub fn default_registry() -> ModalityRegistry {
    ModalityRegistry::new()
        .with(VISION, 4)
        .and_then(|r| r.with(AUDIO, 2))
        .expect("static registry is valid")
}

fn lognormal(median: f64, sigma: f64, min: u64, max: u64) -> LengthDist {
    LengthDist::LogNormal {
        median,
        sigma,
        min,
        max,
    }
}

fn part(modality: &str, length: LengthDist) -> PartSpec {
    PartSpec {
        modality: ModalityId::new(modality).expect("static name"),
        length,
    }
}

/// The default three-task mix and its weights: vision instructions, speech
/// recognition with transcripts tracking audio length, and spoken question
/// answering with unrelated lengths.
///
/// Vision lengths are patches, audio lengths are spectrogram frames capped at
/// 3000 (30 seconds), text lengths are tokens.
pub fn default_profiles() -> Vec<(TaskProfile, f64)> {
    vec![
        (
            TaskProfile {
                name: "vision_instruct".into(),
                parts: vec![
                    part(VISION, lognormal(2304.0, 0.6, 256, 9216)),
                    part(ModalityId::TEXT, lognormal(320.0, 0.8, 8, 4096)),
                ],
                correlation: None,
            },
            0.5,
        ),
        (
            TaskProfile {
                name: "asr".into(),
                parts: vec![
                    part(AUDIO, lognormal(1200.0, 0.5, 100, 3000)),
                    part(ModalityId::TEXT, lognormal(200.0, 0.5, 4, 2000)),
                ],
                correlation: Some(Correlation {
                    first: ModalityId::new(AUDIO).expect("static name"),
                    second: ModalityId::text(),
                    rho: 0.9,
                }),
            },
            0.25,
        ),
        (
            TaskProfile {
                name: "speech_qa".into(),
                parts: vec![
                    part(AUDIO, lognormal(1000.0, 0.6, 100, 3000)),
                    part(ModalityId::TEXT, lognormal(400.0, 0.7, 8, 4096)),
                ],
                correlation: None,
            },
            0.25,
        ),
    ]
}

/// Draws `n` examples. Each example picks a profile by weight and samples
/// its part lengths; ids are `0..n`.
pub fn generate(
    profiles: &[TaskProfile],
    weights: &[f64],
    n: usize,
    seed: u64,
    registry: &ModalityRegistry,
) -> Result<Vec<Example>> {
    if profiles.is_empty() || profiles.len() != weights.len() {
        return Err(Error::Config(format!(
            "{} profiles with {} weights",
            profiles.len(),
            weights.len()
        )));
    }
    if n == 0 {
        return Err(Error::Config("example count must be at least 1".into()));
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "mix weights {weights:?} must be nonnegative and sum to 1"
        )));
    }
    for p in profiles {
        p.validate(registry)?;
    }
    let pick = WeightedIndex::new(weights).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|id| {
            let profile = &profiles[pick.sample(&mut rng)];
            let lengths = profile.sample(&mut rng);
            let parts = profile
                .parts
                .iter()
                .zip(lengths)
                .map(|(spec, metadata_length)| Part {
                    modality: spec.modality.clone(),
                    metadata_length,
                })
                .collect();
            Example::new(
                id as u64,
                parts,
                (0..profile.parts.len()).collect(),
                registry,
            )
        })
        .collect()
}

/// Encoded length a modality contributes to an example, as an exact ratio
/// `numerator / denominator` of the interleaved total.
pub fn modality_ratio(example: &Example, modality: &ModalityId) -> (u64, u64) {
    let num = example
        .parts
        .iter()
        .zip(&example.encoded_lengths)
        .filter(|(p, _)| &p.modality == modality)
        .map(|(_, &l)| l)
        .sum();
    (num, interleaved_length(example))
}

pub const RATIO_BUCKETS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModalityComposition {
    pub mean: f64,
    pub variance: f64,
    /// Examples where the modality is absent.
    pub zero_count: usize,
    /// Counts of nonzero ratios in `(k/10, (k+1)/10]`.
    pub histogram: [usize; RATIO_BUCKETS],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompositionStats {
    pub examples: usize,
    pub per_modality: BTreeMap<ModalityId, ModalityComposition>,
}

/// Per-modality spread of each example's share of its interleaved length,
/// over every registered modality and every modality present.
pub fn composition_stats(examples: &[Example], registry: &ModalityRegistry) -> CompositionStats {
    let mut modalities: Vec<ModalityId> = registry.modalities().cloned().collect();
    for m in examples
        .iter()
        .flat_map(|e| e.parts.iter().map(|p| &p.modality))
    {
        if !modalities.contains(m) {
            modalities.push(m.clone());
        }
    }
    let per_modality = modalities
        .into_iter()
        .map(|m| {
            let mut zero_count = 0;
            let mut histogram = [0usize; RATIO_BUCKETS];
            let ratios: Vec<f64> = examples
                .iter()
                .map(|e| {
                    let (num, den) = modality_ratio(e, &m);
                    if num == 0 {
                        zero_count += 1;
                    } else {
                        // smallest k with num/den <= (k+1)/10
                        let k = (num * RATIO_BUCKETS as u64).div_ceil(den) as usize - 1;
                        histogram[k.min(RATIO_BUCKETS - 1)] += 1;
                    }
                    num as f64 / den as f64
                })
                .collect();
            let count = ratios.len().max(1) as f64;
            let mean = ratios.iter().sum::<f64>() / count;
            let variance = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / count;
            (
                m,
                ModalityComposition {
                    mean,
                    variance,
                    zero_count,
                    histogram,
                },
            )
        })
        .collect();
    CompositionStats {
        examples: examples.len(),
        per_modality,
    }
}

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub example_id: u64,
    pub parts: Vec<Part>,
    pub interleave_order: Vec<usize>,
}

impl From<&Example> for TraceRecord {
    fn from(e: &Example) -> Self {
        Self {
            example_id: e.example_id,
            parts: e.parts.clone(),
            interleave_order: e.interleave_order.clone(),
        }
    }
}

pub fn write_trace<W: Write>(examples: &[Example], mut out: W) -> Result<()> {
    for e in examples {
        serde_json::to_writer(&mut out, &TraceRecord::from(e)).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_trace(examples: &[Example], path: impl AsRef<Path>) -> Result<()> {
    write_trace(examples, BufWriter::new(File::create(path)?))
}

/// Reads a line-delimited JSON trace. Blank lines are skipped.
pub fn read_trace<R: BufRead>(input: R, registry: &ModalityRegistry) -> Result<Vec<Example>> {
    let mut examples = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if let Some(p) = record
            .parts
            .iter()
            .find(|p| !registry.contains(&p.modality))
        {
            return Err(Error::Config(format!(
                "line {}: unknown modality `{}`",
                idx + 1,
                p.modality
            )));
        }
        let example = Example::new(
            record.example_id,
            record.parts,
            record.interleave_order,
            registry,
        )
        .map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        examples.push(example);
    }
    Ok(examples)
}

pub fn load_trace(path: impl AsRef<Path>, registry: &ModalityRegistry) -> Result<Vec<Example>> {
    read_trace(BufReader::new(File::open(path)?), registry)
}
