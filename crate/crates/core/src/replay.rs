//! Replay memory of tap activations and the fixed-proportion mini-batch
//! composer.
//!
//! The memory is updated once after every training run `i` (1-based):
//! while it has room, the run's samples are inserted up to capacity; once
//! full, `h ≈ min(capacity / i, |batch|)` random batch samples overwrite
//! `h` random memory slots. Every run then holds an equal share of the
//! memory in expectation. When `capacity / i` is fractional, `h` rounds up
//! with probability equal to the fractional part; always flooring would
//! starve later runs by a fraction of a slot each time.

use log::warn;
use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::learner::{Activation, FlatRecord, FrontExtractor};

/// A labeled raw-feature sample as it arrives from the cloud labeler.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayEntry {
    pub activation: Activation,
    pub label: usize,
    pub inserted_at_run: usize,
    /// Raw features, kept only in debug mode for the aging metric.
    pub raw_features: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayMemory {
    capacity: usize,
    entries: Vec<ReplayEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateOutcome {
    pub inserted: usize,
    pub replaced: usize,
}

/// `min(floor(capacity / run_index), batch_len)`.
pub fn replacement_count(capacity: usize, run_index: usize, batch_len: usize) -> usize {
    (capacity / run_index).min(batch_len)
}

/// Like [`replacement_count`], but rounds `capacity / run_index` up with
/// probability equal to its fractional part, so the mean is exact.
pub fn draw_replacement_count<R: Rng + ?Sized>(capacity: usize, run_index: usize, batch_len: usize, rng: &mut R) -> usize {
    let rem = capacity % run_index;
    let up = rem > 0 && rng.random_range(0..run_index) < rem;
    (capacity / run_index + usize::from(up)).min(batch_len)
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("replay capacity must be > 0".into()));
        }
        Ok(Self { capacity, entries: Vec::with_capacity(capacity) })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn entries(&self) -> &[ReplayEntry] {
        &self.entries
    }

    /// Applies one post-run update. An empty batch is a no-op.
    pub fn update_memory<R: Rng + ?Sized>(
        &mut self,
        mut batch: Vec<ReplayEntry>,
        run_index: usize,
        rng: &mut R,
    ) -> Result<UpdateOutcome> {
        if run_index < 1 {
            return Err(Error::InvalidArgument("run_index starts at 1".into()));
        }
        if batch.is_empty() {
            return Ok(UpdateOutcome { inserted: 0, replaced: 0 });
        }
        if self.is_full() {
            let h = draw_replacement_count(self.capacity, run_index, batch.len(), rng);
            let add = index::sample(rng, batch.len(), h).into_vec();
            let slots = index::sample(rng, self.entries.len(), h).into_vec();
            for (slot, src) in slots.into_iter().zip(add) {
                self.entries[slot] = std::mem::replace(&mut batch[src], placeholder());
            }
            Ok(UpdateOutcome { inserted: h, replaced: h })
        } else {
            let room = self.capacity - self.entries.len();
            let take = room.min(batch.len());
            let mut picked = index::sample(rng, batch.len(), take).into_vec();
            picked.sort_unstable();
            for src in picked {
                self.entries.push(std::mem::replace(&mut batch[src], placeholder()));
            }
            Ok(UpdateOutcome { inserted: take, replaced: 0 })
        }
    }

    /// Dump as a flat record: `[capacity]`, then one array per entry laid
    /// out as `[label, inserted_at_run, activation...]`.
    pub fn to_record(&self) -> FlatRecord {
        let mut arrays = Vec::with_capacity(self.entries.len() + 1);
        arrays.push(vec![self.capacity as f64]);
        for e in &self.entries {
            let mut row = Vec::with_capacity(e.activation.len() + 2);
            row.push(e.label as f64);
            row.push(e.inserted_at_run as f64);
            row.extend_from_slice(&e.activation.0);
            arrays.push(row);
        }
        FlatRecord::new(arrays)
    }

    pub fn from_record(record: &FlatRecord) -> Result<Self> {
        let (head, rows) = record.arrays.split_first().ok_or_else(|| Error::Decode("empty memory record".into()))?;
        let capacity = match head.as_slice() {
            [c] if *c >= 1.0 && c.fract() == 0.0 => *c as usize,
            _ => return Err(Error::Decode("bad capacity array".into())),
        };
        if rows.len() > capacity {
            return Err(Error::Decode(format!("{} entries exceed capacity {capacity}", rows.len())));
        }
        let mut entries = Vec::with_capacity(rows.len());
        for row in rows {
            if row.len() < 2 || row[0] < 0.0 || row[1] < 1.0 {
                return Err(Error::Decode("bad memory entry".into()));
            }
            entries.push(ReplayEntry {
                label: row[0] as usize,
                inserted_at_run: row[1] as usize,
                activation: Activation(row[2..].to_vec()),
                raw_features: None,
            });
        }
        Ok(Self { capacity, entries })
    }
}

fn placeholder() -> ReplayEntry {
    ReplayEntry { activation: Activation(Vec::new()), label: 0, inserted_at_run: 0, raw_features: None }
}

/// Number of fresh samples in a mini-batch of `k` when the fresh batch has
/// `n` samples and the memory `m`: `floor(k * n / (n + m))`.
pub fn original_count(k: usize, n: usize, m: usize) -> usize {
    if n + m == 0 {
        return 0;
    }
    ((k as u128 * n as u128) / (n + m) as u128) as usize
}

/// Draws `count` indices from `0..pool`, without replacement when the pool
/// is large enough and with replacement (plus a warning) otherwise.
pub fn sample_indices<R: Rng + ?Sized>(pool: usize, count: usize, rng: &mut R) -> Vec<usize> {
    if count == 0 || pool == 0 {
        return Vec::new();
    }
    if count <= pool {
        index::sample(rng, pool, count).into_vec()
    } else {
        warn!("requested {count} samples from a pool of {pool}; sampling with replacement");
        (0..count).map(|_| rng.random_range(0..pool)).collect()
    }
}

/// Index-level composition of one mini-batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Composition {
    /// Indices into the fresh batch.
    pub original: Vec<usize>,
    /// Indices into the memory.
    pub replay: Vec<usize>,
}

pub fn composition<R: Rng + ?Sized>(n: usize, m: usize, k: usize, rng: &mut R) -> Result<Composition> {
    if k < 1 {
        return Err(Error::InvalidArgument("mini-batch size must be >= 1".into()));
    }
    if n < 1 {
        return Err(Error::InvalidArgument("fresh batch must be non-empty".into()));
    }
    let originals = original_count(k, n, m);
    Ok(Composition { original: sample_indices(n, originals, rng), replay: sample_indices(m, k - originals, rng) })
}

/// Builds one mini-batch: `floor(K·N/(N+M))` fresh samples pushed through
/// the front, the rest drawn from memory.
pub fn compose_minibatch<R: Rng + ?Sized>(
    batch: &[LabeledSample],
    mem: &ReplayMemory,
    k: usize,
    front: &FrontExtractor,
    rng: &mut R,
) -> Result<Vec<(Activation, usize)>> {
    let plan = composition(batch.len(), mem.len(), k, rng)?;
    let mut out = Vec::with_capacity(k);
    for i in plan.original {
        out.push((front.forward_front(&batch[i].features)?, batch[i].label));
    }
    for j in plan.replay {
        let e = &mem.entries[j];
        out.push((e.activation.clone(), e.label));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::{rng_for, Role};
    use proptest::prelude::*;

    fn entries(run: usize, n: usize) -> Vec<ReplayEntry> {
        (0..n)
            .map(|i| ReplayEntry {
                activation: Activation(vec![i as f64]),
                label: i % 4,
                inserted_at_run: run,
                raw_features: None,
            })
            .collect()
    }

    fn samples(n: usize) -> Vec<LabeledSample> {
        (0..n).map(|i| LabeledSample { features: vec![i as f64], label: i % 3 }).collect()
    }

    #[test]
    fn first_run_inserts_everything() {
        let mut mem = ReplayMemory::new(1500).unwrap();
        let out = mem.update_memory(entries(1, 300), 1, &mut rng_for(1, Role::Trainer)).unwrap();
        assert_eq!(out, UpdateOutcome { inserted: 300, replaced: 0 });
        assert_eq!(mem.len(), 300);
    }

    #[test]
    fn full_memory_replaces_capacity_over_run_index() {
        let mut rng = rng_for(2, Role::Trainer);
        let mut mem = ReplayMemory::new(1500).unwrap();
        for run in 1..=5 {
            mem.update_memory(entries(run, 300), run, &mut rng).unwrap();
        }
        assert!(mem.is_full());
        let out = mem.update_memory(entries(10, 300), 10, &mut rng).unwrap();
        assert_eq!(out.inserted, 150);
        assert_eq!(mem.len(), 1500);
        assert_eq!(mem.entries().iter().filter(|e| e.inserted_at_run == 10).count(), 150);
    }

    #[test]
    fn replacement_is_clamped_to_batch_size() {
        assert_eq!(replacement_count(1500, 2, 300), 300);
        let mut rng = rng_for(3, Role::Trainer);
        let mut mem = ReplayMemory::new(1500).unwrap();
        mem.update_memory(entries(1, 1500), 1, &mut rng).unwrap();
        let out = mem.update_memory(entries(2, 300), 2, &mut rng).unwrap();
        assert_eq!(out.inserted, 300);
        assert_eq!(mem.entries().iter().filter(|e| e.inserted_at_run == 2).count(), 300);
    }

    #[test]
    fn drawn_count_has_exact_mean() {
        let mut rng = rng_for(6, Role::Trainer);
        assert!((0..100).all(|_| draw_replacement_count(1500, 10, 300, &mut rng) == 150));
        let draws = 70_000;
        let total: usize = (0..draws).map(|_| draw_replacement_count(1500, 7, 300, &mut rng)).sum();
        let mean = total as f64 / draws as f64;
        // 1500 / 7 = 214.2857; the draw is 214 or 215
        assert!((mean - 1500.0 / 7.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn partial_fill_takes_only_remaining_room() {
        let mut rng = rng_for(4, Role::Trainer);
        let mut mem = ReplayMemory::new(10).unwrap();
        mem.update_memory(entries(1, 7), 1, &mut rng).unwrap();
        let out = mem.update_memory(entries(2, 7), 2, &mut rng).unwrap();
        assert_eq!(out.inserted, 3);
        assert!(mem.is_full());
    }

    #[test]
    fn run_index_zero_and_empty_batch() {
        let mut rng = rng_for(5, Role::Trainer);
        let mut mem = ReplayMemory::new(10).unwrap();
        assert!(mem.update_memory(entries(1, 3), 0, &mut rng).is_err());
        assert_eq!(mem.update_memory(Vec::new(), 1, &mut rng).unwrap().inserted, 0);
        assert!(mem.is_empty());
    }

    #[test]
    fn reference_configuration_composes_ten_plus_fifty_four() {
        assert_eq!(original_count(64, 300, 1500), 10);
        let c = composition(300, 1500, 64, &mut rng_for(6, Role::Trainer)).unwrap();
        assert_eq!((c.original.len(), c.replay.len()), (10, 54));
    }

    #[test]
    fn empty_memory_and_symmetric_pools() {
        let mut rng = rng_for(7, Role::Trainer);
        let c = composition(300, 0, 64, &mut rng).unwrap();
        assert_eq!((c.original.len(), c.replay.len()), (64, 0));
        let c = composition(100, 100, 10, &mut rng).unwrap();
        assert_eq!((c.original.len(), c.replay.len()), (5, 5));
    }

    #[test]
    fn tiny_pool_samples_with_replacement() {
        let c = composition(3, 0, 8, &mut rng_for(8, Role::Trainer)).unwrap();
        assert_eq!(c.original.len(), 8);
        assert!(c.original.iter().all(|&i| i < 3));
    }

    #[test]
    fn compose_minibatch_passes_fresh_samples_through_front() {
        let mut rng = rng_for(9, Role::Trainer);
        let mut mem = ReplayMemory::new(100).unwrap();
        mem.update_memory(entries(1, 100), 1, &mut rng).unwrap();
        let front = FrontExtractor::passthrough();
        let batch = samples(100);
        let mb = compose_minibatch(&batch, &mem, 10, &front, &mut rng).unwrap();
        assert_eq!(mb.len(), 10);
        for (act, label) in &mb[..5] {
            let i = act.0[0] as usize;
            assert_eq!(*label, batch[i].label);
        }
    }

    #[test]
    fn memory_record_round_trip() {
        let mut mem = ReplayMemory::new(8).unwrap();
        mem.update_memory(entries(1, 5), 1, &mut rng_for(10, Role::Trainer)).unwrap();
        let back = ReplayMemory::from_record(&FlatRecord::decode(&mem.to_record().encode()).unwrap()).unwrap();
        assert_eq!(back, mem);
    }

    #[test]
    fn same_seed_same_memory() {
        let run = |seed| {
            let mut rng = rng_for(seed, Role::Trainer);
            let mut mem = ReplayMemory::new(50).unwrap();
            for i in 1..=12 {
                mem.update_memory(entries(i, 20), i, &mut rng).unwrap();
            }
            mem
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    proptest! {
        #[test]
        fn capacity_never_exceeded(cap in 1usize..200, sizes in prop::collection::vec(0usize..300, 1..30), seed in any::<u64>()) {
            let mut rng = rng_for(seed, Role::Trainer);
            let mut mem = ReplayMemory::new(cap).unwrap();
            let mut total = 0;
            for (i, n) in sizes.iter().enumerate() {
                mem.update_memory(entries(i + 1, *n), i + 1, &mut rng).unwrap();
                total += n;
                prop_assert!(mem.len() <= cap);
                if total >= cap {
                    prop_assert_eq!(mem.len(), cap);
                }
            }
        }

        #[test]
        fn composition_counts_are_exact(k in 1usize..256, n in 1usize..2000, m in 0usize..4000, seed in any::<u64>()) {
            let c = composition(n, m, k, &mut rng_for(seed, Role::Trainer)).unwrap();
            let expected = (k * n) / (n + m);
            prop_assert_eq!(c.original.len(), expected);
            prop_assert_eq!(c.original.len() + c.replay.len(), if m == 0 { expected } else { k });
        }
    }
}
