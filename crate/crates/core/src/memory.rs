//! Fixed-capacity episodic memory with two maintenance policies.
//!
//! `Res`: one classic reservoir over the whole stream, so after N
//! insertions every item has inclusion probability M/N.
//!
//! `Buff`: equal per-stage quotas. Entering stage k (0-based) sets the
//! quota to floor(M / (k+1)); earlier stages' holdings are down-sampled
//! uniformly to the new quota and the current stage fills its own quota
//! by reservoir.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::model::Prepared;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryPolicy {
    Res,
    Buff,
}

#[derive(Debug, Clone)]
pub struct MemoryItem {
    pub prep: Prepared,
    pub stage: usize,
    /// Per-head logits of the end-of-stage snapshot that last saw this
    /// item; present only under the distillation strategy and only for
    /// items predating the current stage.
    pub teacher: Option<[[f64; 3]; 3]>,
}

#[derive(Debug, Clone)]
pub struct EpisodicMemory {
    capacity: usize,
    policy: MemoryPolicy,
    items: Vec<MemoryItem>,
    seen_total: u64,
    seen_stage: u64,
    stage: usize,
    quota: usize,
}

impl EpisodicMemory {
    pub fn new(capacity: usize, policy: MemoryPolicy) -> EpisodicMemory {
        assert!(capacity > 0, "memory capacity must be positive");
        EpisodicMemory {
            capacity,
            policy,
            items: Vec::new(),
            seen_total: 0,
            seen_stage: 0,
            stage: 0,
            quota: capacity,
        }
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

    pub fn items(&self) -> &[MemoryItem] {
        &self.items
    }

    /// Stage boundary: under Buff, shrink every earlier stage's holdings
    /// to the new per-stage quota.
    pub fn begin_stage(&mut self, stage: usize, rng: &mut ChaCha20Rng) {
        self.stage = stage;
        self.seen_stage = 0;
        if self.policy == MemoryPolicy::Buff {
            self.quota = self.capacity / (stage + 1);
            assert!(self.quota > 0, "capacity too small for {} stages", stage + 1);
            let mut kept: Vec<MemoryItem> = Vec::new();
            for s in 0..stage {
                let mut holdings: Vec<MemoryItem> = self
                    .items
                    .iter()
                    .filter(|it| it.stage == s)
                    .cloned()
                    .collect();
                if holdings.len() > self.quota {
                    holdings.shuffle(rng);
                    holdings.truncate(self.quota);
                }
                kept.extend(holdings);
            }
            self.items = kept;
        }
    }

    /// Insert one current-stage item per the policy.
    pub fn insert(&mut self, prep: Prepared, rng: &mut ChaCha20Rng) {
        let item = MemoryItem {
            prep,
            stage: self.stage,
            teacher: None,
        };
        match self.policy {
            MemoryPolicy::Res => {
                self.seen_total += 1;
                if self.items.len() < self.capacity {
                    self.items.push(item);
                } else {
                    let j = rng.gen_range(0..self.seen_total) as usize;
                    if j < self.capacity {
                        self.items[j] = item;
                    }
                }
            }
            MemoryPolicy::Buff => {
                self.seen_stage += 1;
                let slots: Vec<usize> = (0..self.items.len())
                    .filter(|&i| self.items[i].stage == self.stage)
                    .collect();
                if slots.len() < self.quota {
                    self.items.push(item);
                } else {
                    let j = rng.gen_range(0..self.seen_stage) as usize;
                    if j < self.quota {
                        self.items[slots[j]] = item;
                    }
                }
            }
        }
        assert!(self.items.len() <= self.capacity, "memory overflow");
    }

    /// Uniform sample of up to `k` distinct item indices.
    pub fn sample_indices(&self, k: usize, rng: &mut ChaCha20Rng) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.items.len()).collect();
        if k >= idx.len() {
            return idx;
        }
        // Partial Fisher-Yates: the first k slots become the sample.
        for i in 0..k {
            let j = rng.gen_range(i..idx.len());
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }

    /// Uniform sample restricted to items carrying teacher logits.
    pub fn sample_with_teachers(&self, k: usize, rng: &mut ChaCha20Rng) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.items.len())
            .filter(|&i| self.items[i].teacher.is_some())
            .collect();
        if k < idx.len() {
            for i in 0..k {
                let j = rng.gen_range(i..idx.len());
                idx.swap(i, j);
            }
            idx.truncate(k);
        }
        idx
    }

    /// Stamp teacher logits onto every held item from the current
    /// (end-of-stage) parameters.
    pub fn stamp_teachers(&mut self, mut logits_of: impl FnMut(&Prepared) -> [[f64; 3]; 3]) {
        for item in &mut self.items {
            item.teacher = Some(logits_of(&item.prep));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Label;
    use rand::SeedableRng;

    fn prep(src: usize) -> Prepared {
        Prepared {
            ids: [vec![0], vec![1], vec![2]],
            golds: [Label::Entailment; 3],
            src,
        }
    }

    #[test]
    fn below_capacity_keeps_everything() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut mem = EpisodicMemory::new(100, MemoryPolicy::Res);
        mem.begin_stage(0, &mut rng);
        for i in 0..100 {
            mem.insert(prep(i), &mut rng);
        }
        assert_eq!(mem.len(), 100);
        let mut srcs: Vec<usize> = mem.items().iter().map(|it| it.prep.src).collect();
        srcs.sort_unstable();
        assert_eq!(srcs, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn reservoir_inclusion_is_near_uniform() {
        // Smaller Monte-Carlo than the acceptance suite runs, same law:
        // inclusion probability M/N for every item.
        let n = 500;
        let m = 50;
        let trials = 2000;
        let mut counts = vec![0u32; n];
        let mut rng = ChaCha20Rng::seed_from_u64(123);
        for _ in 0..trials {
            let mut mem = EpisodicMemory::new(m, MemoryPolicy::Res);
            for i in 0..n {
                mem.insert(prep(i), &mut rng);
            }
            assert_eq!(mem.len(), m);
            for it in mem.items() {
                counts[it.prep.src] += 1;
            }
        }
        let expected = m as f64 / n as f64;
        let within = counts
            .iter()
            .filter(|&&c| (c as f64 / trials as f64 - expected).abs() <= 0.02)
            .count();
        assert!(
            within as f64 >= 0.98 * n as f64,
            "only {within}/{n} items near p = {expected}"
        );
    }

    #[test]
    fn buff_splits_capacity_across_stages() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut mem = EpisodicMemory::new(100, MemoryPolicy::Buff);
        mem.begin_stage(0, &mut rng);
        for i in 0..500 {
            mem.insert(prep(i), &mut rng);
        }
        assert_eq!(mem.len(), 100);
        mem.begin_stage(1, &mut rng);
        assert_eq!(mem.len(), 50, "stage-0 holdings down-sampled");
        for i in 500..1000 {
            mem.insert(prep(i), &mut rng);
        }
        assert_eq!(mem.len(), 100);
        let s0 = mem.items().iter().filter(|it| it.stage == 0).count();
        let s1 = mem.items().iter().filter(|it| it.stage == 1).count();
        assert_eq!((s0, s1), (50, 50));

        mem.begin_stage(2, &mut rng);
        assert_eq!(mem.len(), 66);
        for i in 1000..1200 {
            mem.insert(prep(i), &mut rng);
        }
        assert!(mem.len() <= 100);
        for s in 0..3 {
            assert!(mem.items().iter().filter(|it| it.stage == s).count() <= 33);
        }
    }

    #[test]
    fn teacher_stamping_covers_held_items_only() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut mem = EpisodicMemory::new(10, MemoryPolicy::Res);
        mem.begin_stage(0, &mut rng);
        for i in 0..10 {
            mem.insert(prep(i), &mut rng);
        }
        mem.stamp_teachers(|_| [[1.0; 3]; 3]);
        assert!(mem.items().iter().all(|it| it.teacher.is_some()));
        mem.begin_stage(1, &mut rng);
        // Reservoir keeps old items; new inserts arrive unstamped.
        let mut inserted_new = false;
        for i in 10..40 {
            mem.insert(prep(i), &mut rng);
        }
        for it in mem.items() {
            if it.stage == 1 {
                assert!(it.teacher.is_none());
                inserted_new = true;
            } else {
                assert!(it.teacher.is_some());
            }
        }
        assert!(inserted_new, "expected at least one stage-1 replacement");
        assert_eq!(mem.sample_with_teachers(100, &mut rng).len(),
            mem.items().iter().filter(|it| it.teacher.is_some()).count());
    }

    #[test]
    fn sampling_is_distinct_and_bounded() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let mut mem = EpisodicMemory::new(20, MemoryPolicy::Res);
        mem.begin_stage(0, &mut rng);
        for i in 0..20 {
            mem.insert(prep(i), &mut rng);
        }
        for k in [1, 5, 20, 50] {
            let s = mem.sample_indices(k, &mut rng);
            assert_eq!(s.len(), k.min(20));
            let mut sorted = s.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), s.len(), "duplicate indices in sample");
        }
        let single = EpisodicMemory::new(5, MemoryPolicy::Res);
        assert!(single.sample_indices(3, &mut rng).is_empty());
    }
}
