//! Bounded latent memories with similarity-driven eviction.
//!
//! A [`MemorySet`] keeps at most `capacity` latents. When an enqueue pushes it
//! over capacity, elements are removed one at a time according to the
//! [`EvictionPolicy`]. For the similarity policies each element is scored by
//! the sum of its cosine similarities to every stored element (itself
//! included). Removing the highest-scoring element keeps the buffer spread
//! out; the lowest-scoring variant and plain FIFO exist for ablations.
//!
//! Similarity sums are maintained incrementally: adding an element adds one
//! row and column, removing one subtracts its column. The brute-force
//! recomputation lives in the tests as the reference.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{cosine_raw, Latent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvictionPolicy {
    /// Pop the earliest-inserted element (FIFO).
    Oldest,
    /// Pop the element with the largest similarity sum.
    MaxSimilaritySum,
    /// Pop the element with the smallest similarity sum.
    MinSimilaritySum,
}

impl EvictionPolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvictionPolicy::Oldest => "oldest",
            EvictionPolicy::MaxSimilaritySum => "max",
            EvictionPolicy::MinSimilaritySum => "min",
        }
    }
}

impl fmt::Display for EvictionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvictionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "oldest" | "fifo" => Ok(EvictionPolicy::Oldest),
            "max" | "max_similarity_sum" => Ok(EvictionPolicy::MaxSimilaritySum),
            "min" | "min_similarity_sum" => Ok(EvictionPolicy::MinSimilaritySum),
            other => Err(Error::config(format!(
                "unknown eviction policy `{other}` (expected oldest, max or min)"
            ))),
        }
    }
}

/// Which end of the similarity range [`MemorySet::extreme_similarity`] looks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extreme {
    Min,
    Max,
}

#[derive(Debug, Clone)]
struct Slot {
    latent: Latent,
    norm: f64,
    insertion_index: u64,
}

#[derive(Debug, Clone)]
pub struct MemorySet {
    items: Vec<Slot>,
    sums: Vec<f64>,
    capacity: usize,
    policy: EvictionPolicy,
    insertion_counter: u64,
}

impl MemorySet {
    pub fn new(capacity: usize, policy: EvictionPolicy) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("memory capacity must be >= 1"));
        }
        Ok(MemorySet {
            items: Vec::with_capacity(capacity + 1),
            sums: Vec::with_capacity(capacity + 1),
            capacity,
            policy,
            insertion_counter: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn policy(&self) -> EvictionPolicy {
        self.policy
    }

    pub fn get(&self, index: usize) -> Option<&Latent> {
        self.items.get(index).map(|s| &s.latent)
    }

    pub fn insertion_index(&self, index: usize) -> Option<u64> {
        self.items.get(index).map(|s| s.insertion_index)
    }

    pub fn latents(&self) -> impl Iterator<Item = &Latent> {
        self.items.iter().map(|s| &s.latent)
    }

    /// `(insertion_index, latent)` pairs in storage order.
    pub fn entries(&self) -> impl Iterator<Item = (u64, &Latent)> {
        self.items.iter().map(|s| (s.insertion_index, &s.latent))
    }

    /// Appends `z` and then evicts until the capacity holds again.
    /// Returns the latents that were evicted, in eviction order.
    pub fn enqueue(&mut self, z: Latent) -> Result<Vec<Latent>> {
        self.push(z)?;
        Ok(self.evict_until_capacity())
    }

    /// Appends without evicting. The set may temporarily exceed capacity
    /// until [`evict_until_capacity`](Self::evict_until_capacity) runs.
    pub fn push(&mut self, z: Latent) -> Result<()> {
        if let Some(first) = self.items.first() {
            if first.latent.dim() != z.dim() {
                return Err(Error::Domain(format!(
                    "memory holds dimension {}, got {}",
                    first.latent.dim(),
                    z.dim()
                )));
            }
        }
        let norm = z.norm();
        if norm == 0.0 {
            return Err(Error::Domain("cannot store a zero-norm latent in memory".into()));
        }
        let mut own = 1.0;
        for (slot, sum) in self.items.iter().zip(self.sums.iter_mut()) {
            let s = cosine_raw(slot.latent.as_slice(), z.as_slice(), slot.norm, norm);
            *sum += s;
            own += s;
        }
        self.items.push(Slot {
            latent: z,
            norm,
            insertion_index: self.insertion_counter,
        });
        self.sums.push(own);
        self.insertion_counter += 1;
        Ok(())
    }

    /// Entry `i` is the sum over all stored `j` (including `i`) of `cos(z_i, z_j)`.
    pub fn similarity_sums(&self) -> &[f64] {
        &self.sums
    }

    /// Position of the element the policy would remove next. Ties go to the
    /// smallest insertion index.
    pub fn evict_index(&self) -> Result<usize> {
        if self.items.is_empty() {
            return Err(Error::State("evict_index on an empty memory".into()));
        }
        let mut best = 0;
        for i in 1..self.items.len() {
            let better = match self.policy {
                EvictionPolicy::Oldest => {
                    self.items[i].insertion_index < self.items[best].insertion_index
                }
                EvictionPolicy::MaxSimilaritySum => {
                    prefer(self.sums[i], self.sums[best], &self.items[i], &self.items[best], Extreme::Max)
                }
                EvictionPolicy::MinSimilaritySum => {
                    prefer(self.sums[i], self.sums[best], &self.items[i], &self.items[best], Extreme::Min)
                }
            };
            if better {
                best = i;
            }
        }
        Ok(best)
    }

    /// Removes elements by [`evict_index`](Self::evict_index) until
    /// `len() <= capacity`, updating similarity sums after each removal.
    pub fn evict_until_capacity(&mut self) -> Vec<Latent> {
        let mut evicted = Vec::new();
        while self.items.len() > self.capacity {
            let idx = self.evict_index().expect("non-empty above capacity");
            evicted.push(self.remove_at(idx));
        }
        evicted
    }

    fn remove_at(&mut self, idx: usize) -> Latent {
        let removed = self.items.remove(idx);
        self.sums.remove(idx);
        for (slot, sum) in self.items.iter().zip(self.sums.iter_mut()) {
            *sum -= cosine_raw(
                slot.latent.as_slice(),
                removed.latent.as_slice(),
                slot.norm,
                removed.norm,
            );
        }
        removed.latent
    }

    /// Stored element with the smallest or largest cosine similarity to
    /// `query`. Returns `None` for an empty memory or a zero-norm query.
    pub fn extreme_similarity(&self, query: &Latent, mode: Extreme) -> Option<(usize, f64)> {
        let qn = query.norm();
        if self.items.is_empty() || qn == 0.0 {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, slot) in self.items.iter().enumerate() {
            let s = cosine_raw(slot.latent.as_slice(), query.as_slice(), slot.norm, qn);
            best = match best {
                None => Some((i, s)),
                Some((b, bs)) => {
                    if prefer(s, bs, slot, &self.items[b], mode) {
                        Some((i, s))
                    } else {
                        Some((b, bs))
                    }
                }
            };
        }
        best
    }

    /// Writes `insertion_index,coord_0..coord_{d-1}` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let dim = self.items.first().map_or(0, |s| s.latent.dim());
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["insertion_index".to_string()];
        header.extend((0..dim).map(|k| format!("coord_{k}")));
        w.write_record(&header)?;
        for slot in &self.items {
            let mut row = vec![slot.insertion_index.to_string()];
            row.extend(slot.latent.as_slice().iter().map(|v| format!("{v:?}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a snapshot written by [`write_csv`](Self::write_csv). Stored
    /// entries keep their insertion indices; new enqueues continue after the
    /// largest one. Rows beyond `capacity` are evicted on load.
    pub fn read_csv<R: Read>(reader: R, capacity: usize, policy: EvictionPolicy) -> Result<Self> {
        let mut mem = MemorySet::new(capacity, policy)?;
        let mut r = csv::Reader::from_reader(reader);
        let mut last: Option<u64> = None;
        for record in r.records() {
            let record = record?;
            let mut fields = record.iter();
            let idx: u64 = fields
                .next()
                .ok_or_else(|| Error::Format("empty memory row".into()))?
                .parse()
                .map_err(|e| Error::Format(format!("bad insertion_index: {e}")))?;
            if last.is_some_and(|l| idx <= l) {
                return Err(Error::Format("insertion indices must be strictly increasing".into()));
            }
            last = Some(idx);
            let coords = fields
                .map(|f| f.parse::<f64>().map_err(|e| Error::Format(format!("bad coordinate: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            mem.insertion_counter = idx;
            mem.push(Latent::new(coords)?)?;
        }
        mem.evict_until_capacity();
        Ok(mem)
    }
}

/// True when candidate `(s, a)` should replace the incumbent `(t, b)`.
/// Similarity sums closer than this are tied. Sums that are equal in exact
/// arithmetic (any two-element memory, symmetric layouts) differ by a few ulps
/// once maintained incrementally, and must still fall to the tie-break.
pub const SUM_TIE_TOLERANCE: f64 = 1e-9;

fn prefer(s: f64, t: f64, a: &Slot, b: &Slot, mode: Extreme) -> bool {
    if (s - t).abs() <= SUM_TIE_TOLERANCE {
        return a.insertion_index < b.insertion_index;
    }
    match mode {
        Extreme::Max => s > t,
        Extreme::Min => s < t,
    }
}

/// Real and generated memories, either one pair per class or one shared pair.
#[derive(Debug, Clone)]
pub struct MemoryBank {
    pairs: Vec<(MemorySet, MemorySet)>,
    per_class: bool,
}

impl MemoryBank {
    pub fn new(
        num_classes: usize,
        per_class: bool,
        capacity_real: usize,
        capacity_gen: usize,
        policy_real: EvictionPolicy,
        policy_gen: EvictionPolicy,
    ) -> Result<Self> {
        let n = if per_class { num_classes.max(1) } else { 1 };
        let pairs = (0..n)
            .map(|_| {
                Ok((
                    MemorySet::new(capacity_real, policy_real)?,
                    MemorySet::new(capacity_gen, policy_gen)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MemoryBank { pairs, per_class })
    }

    pub fn per_class(&self) -> bool {
        self.per_class
    }

    /// Number of stored pairs: the class count, or 1 for a global bank.
    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    fn slot(&self, class: usize) -> usize {
        if self.per_class {
            class
        } else {
            0
        }
    }

    pub fn real(&self, class: usize) -> &MemorySet {
        &self.pairs[self.slot(class)].0
    }

    pub fn gen(&self, class: usize) -> &MemorySet {
        &self.pairs[self.slot(class)].1
    }

    pub fn real_mut(&mut self, class: usize) -> &mut MemorySet {
        let s = self.slot(class);
        &mut self.pairs[s].0
    }

    pub fn gen_mut(&mut self, class: usize) -> &mut MemorySet {
        let s = self.slot(class);
        &mut self.pairs[s].1
    }
}
