//! Bijective relocation of items from `(instance, slot)` positions to new
//! `(instance, slot)` positions.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::types::{MiniBatch, PaddingMode};

/// A position inside the per-instance batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Slot {
    pub instance: usize,
    pub slot: usize,
}

impl Slot {
    pub const fn new(instance: usize, slot: usize) -> Self {
        Self { instance, slot }
    }
}

#[derive(Deserialize)]
struct RawRearrangement {
    d: usize,
    moves: Vec<Vec<Slot>>,
}

/// A total bijection from source slots to destination slots over `d`
/// instances. Source and destination batches may differ in size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawRearrangement")]
pub struct Rearrangement {
    d: usize,
    /// `moves[i][j]` is the destination of the item in slot `j` of instance `i`.
    moves: Vec<Vec<Slot>>,
    #[serde(skip_serializing)]
    dest_sizes: Vec<usize>,
}

impl TryFrom<RawRearrangement> for Rearrangement {
    type Error = Error;

    fn try_from(raw: RawRearrangement) -> Result<Self> {
        Self::new(raw.d, raw.moves)
    }
}

impl Rearrangement {
    pub fn new(d: usize, moves: Vec<Vec<Slot>>) -> Result<Self> {
        if moves.len() != d {
            return Err(invalid(format!(
                "mapping covers {} source instances, expected {d}",
                moves.len()
            )));
        }
        let mut dest_sizes = vec![0usize; d];
        for dst in moves.iter().flatten() {
            if dst.instance >= d {
                return Err(Error::BijectionViolation(format!(
                    "destination instance {} out of range for d={d}",
                    dst.instance
                )));
            }
            dest_sizes[dst.instance] += 1;
        }
        let mut hit: Vec<Vec<bool>> = dest_sizes.iter().map(|&n| vec![false; n]).collect();
        for dst in moves.iter().flatten() {
            match hit[dst.instance].get_mut(dst.slot) {
                Some(seen) if !*seen => *seen = true,
                Some(_) => {
                    return Err(Error::BijectionViolation(format!(
                        "destination {dst:?} targeted twice"
                    )))
                }
                None => {
                    return Err(Error::BijectionViolation(format!(
                        "destination {dst:?} leaves a gap in instance {}",
                        dst.instance
                    )))
                }
            }
        }
        Ok(Self {
            d,
            moves,
            dest_sizes,
        })
    }

    pub fn identity(source_sizes: &[usize]) -> Self {
        let moves = source_sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| (0..n).map(|j| Slot::new(i, j)).collect())
            .collect();
        Self {
            d: source_sizes.len(),
            moves,
            dest_sizes: source_sizes.to_vec(),
        }
    }

    /// Builds a rearrangement from destination batches listed as the source
    /// slots they receive, in destination order.
    pub fn from_destinations(source_sizes: &[usize], destinations: &[Vec<Slot>]) -> Result<Self> {
        let d = source_sizes.len();
        if destinations.len() != d {
            return Err(invalid(format!(
                "{} destination batches for d={d}",
                destinations.len()
            )));
        }
        let mut moves: Vec<Vec<Option<Slot>>> =
            source_sizes.iter().map(|&n| vec![None; n]).collect();
        for (dst_instance, batch) in destinations.iter().enumerate() {
            for (dst_slot, src) in batch.iter().enumerate() {
                let cell = moves
                    .get_mut(src.instance)
                    .and_then(|row| row.get_mut(src.slot))
                    .ok_or_else(|| {
                        Error::BijectionViolation(format!("source {src:?} does not exist"))
                    })?;
                if cell.replace(Slot::new(dst_instance, dst_slot)).is_some() {
                    return Err(Error::BijectionViolation(format!(
                        "source {src:?} placed twice"
                    )));
                }
            }
        }
        let moves = moves
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                row.into_iter()
                    .enumerate()
                    .map(|(j, dst)| {
                        dst.ok_or_else(|| {
                            Error::BijectionViolation(format!("source ({i}, {j}) is not placed"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(d, moves)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn source_sizes(&self) -> Vec<usize> {
        self.moves.iter().map(Vec::len).collect()
    }

    pub fn dest_sizes(&self) -> &[usize] {
        &self.dest_sizes
    }

    /// Total number of items moved.
    pub fn len(&self) -> usize {
        self.dest_sizes.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dest(&self, src: Slot) -> Option<Slot> {
        self.moves.get(src.instance)?.get(src.slot).copied()
    }

    /// `(source, destination)` pairs in source order.
    pub fn iter(&self) -> impl Iterator<Item = (Slot, Slot)> + '_ {
        self.moves.iter().enumerate().flat_map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(move |(j, &dst)| (Slot::new(i, j), dst))
        })
    }

    pub fn is_identity(&self) -> bool {
        self.iter().all(|(src, dst)| src == dst)
    }

    /// Destination batches as the source slots they receive.
    pub fn destinations(&self) -> Vec<Vec<Slot>> {
        let mut out: Vec<Vec<Slot>> = self
            .dest_sizes
            .iter()
            .map(|&n| vec![Slot::new(0, 0); n])
            .collect();
        for (src, dst) in self.iter() {
            out[dst.instance][dst.slot] = src;
        }
        out
    }

    /// Moves arbitrary per-instance payloads.
    pub fn apply_slots<T: Clone>(&self, data: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
        self.check_shape(data.iter().map(Vec::len))?;
        Ok(self
            .destinations()
            .into_iter()
            .map(|batch| {
                batch
                    .into_iter()
                    .map(|src| data[src.instance][src.slot].clone())
                    .collect()
            })
            .collect())
    }

    /// Relocates the items of `batches`, returning `d` new batches whose item
    /// order follows destination slots.
    pub fn apply(&self, batches: &[MiniBatch]) -> Result<Vec<MiniBatch>> {
        let mode = uniform_mode(batches)?;
        let items: Vec<_> = batches.iter().map(|b| b.items.clone()).collect();
        for (i, b) in batches.iter().enumerate() {
            if b.instance != i {
                return Err(invalid(format!(
                    "batch at position {i} is labelled instance {}",
                    b.instance
                )));
            }
        }
        Ok(self
            .apply_slots(&items)?
            .into_iter()
            .enumerate()
            .map(|(i, items)| MiniBatch::new(i, items, mode))
            .collect())
    }

    pub fn inverse(&self) -> Rearrangement {
        let mut moves: Vec<Vec<Slot>> = self
            .dest_sizes
            .iter()
            .map(|&n| vec![Slot::new(0, 0); n])
            .collect();
        for (src, dst) in self.iter() {
            moves[dst.instance][dst.slot] = src;
        }
        Rearrangement {
            d: self.d,
            moves,
            dest_sizes: self.source_sizes(),
        }
    }

    /// `next ∘ self`: first apply `self`, then `next`.
    pub fn then(&self, next: &Rearrangement) -> Result<Rearrangement> {
        if self.d != next.d || self.dest_sizes != next.source_sizes() {
            return Err(invalid(format!(
                "cannot chain: intermediate shapes {:?} and {:?} differ",
                self.dest_sizes,
                next.source_sizes()
            )));
        }
        let moves = self
            .moves
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&mid| next.moves[mid.instance][mid.slot])
                    .collect()
            })
            .collect();
        Ok(Rearrangement {
            d: self.d,
            moves,
            dest_sizes: next.dest_sizes.clone(),
        })
    }

    /// `outer ∘ inner⁻¹`: maps each item from where `inner` put it straight to
    /// where `outer` sends it. Both must share a source shape.
    pub fn compose(
        outer: &Rearrangement,
        inner_inverse_of: &Rearrangement,
    ) -> Result<Rearrangement> {
        if outer.d != inner_inverse_of.d || outer.source_sizes() != inner_inverse_of.source_sizes()
        {
            return Err(invalid(
                "composition requires both rearrangements over the same source slots",
            ));
        }
        inner_inverse_of.inverse().then(outer)
    }

    /// Renames destination instance `b` to `perm[b]`.
    pub fn relabel_destinations(&self, perm: &[usize]) -> Result<Rearrangement> {
        check_permutation(perm, self.d)?;
        let moves = self
            .moves
            .iter()
            .map(|row| {
                row.iter()
                    .map(|dst| Slot::new(perm[dst.instance], dst.slot))
                    .collect()
            })
            .collect();
        let mut dest_sizes = vec![0; self.d];
        for (b, &n) in self.dest_sizes.iter().enumerate() {
            dest_sizes[perm[b]] = n;
        }
        Ok(Rearrangement {
            d: self.d,
            moves,
            dest_sizes,
        })
    }

    fn check_shape(&self, sizes: impl ExactSizeIterator<Item = usize>) -> Result<()> {
        if sizes.len() != self.d {
            return Err(Error::BijectionViolation(format!(
                "{} batches for a mapping over {} instances",
                sizes.len(),
                self.d
            )));
        }
        for (i, (n, row)) in sizes.zip(&self.moves).enumerate() {
            if n != row.len() {
                return Err(Error::BijectionViolation(format!(
                    "instance {i} holds {n} items but the mapping covers {}",
                    row.len()
                )));
            }
        }
        Ok(())
    }
}

fn uniform_mode(batches: &[MiniBatch]) -> Result<PaddingMode> {
    let mode = batches
        .first()
        .map(|b| b.padding_mode)
        .unwrap_or(PaddingMode::Unpadded);
    if batches.iter().any(|b| b.padding_mode != mode) {
        return Err(invalid("batches disagree on padding mode"));
    }
    Ok(mode)
}

pub(crate) fn check_permutation(perm: &[usize], d: usize) -> Result<()> {
    let mut seen = vec![false; d];
    if perm.len() != d
        || perm
            .iter()
            .any(|&p| p >= d || std::mem::replace(&mut seen[p], true))
    {
        return Err(invalid(format!("{perm:?} is not a permutation of 0..{d}")));
    }
    Ok(())
}
