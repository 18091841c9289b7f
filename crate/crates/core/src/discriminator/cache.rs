use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use candle_core::Tensor;

use crate::error::{shape_err, Error, Result};

pub const DEFAULT_CACHE_CAPACITY: usize = 3;

/// FIFO store of detached per-sample feature maps `[C, H, W]`.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    capacity: usize,
    entries: VecDeque<Tensor>,
}

impl Default for FeatureCache {
    fn default() -> Self {
        Self::new(DEFAULT_CACHE_CAPACITY)
    }
}

impl FeatureCache {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity + 1),
        }
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

    pub fn entries(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Appends one sample, evicting the oldest entry once over capacity.
    pub fn push(&mut self, features: &Tensor) -> Result<()> {
        if features.rank() != 3 {
            return Err(shape_err!(
                "cache entries are [C, H, W], got {:?}",
                features.dims()
            ));
        }
        if let Some(first) = self.entries.front() {
            if first.dims() != features.dims() {
                return Err(shape_err!(
                    "cache holds {:?} features, cannot push {:?}",
                    first.dims(),
                    features.dims()
                ));
            }
        }
        if self.capacity == 0 {
            return Ok(());
        }
        self.entries.push_back(features.detach());
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
        Ok(())
    }

    /// Pushes every sample of a `[N, C, H, W]` batch in order.
    pub fn push_batch(&mut self, batch: &Tensor) -> Result<()> {
        let n = batch.dims4()?.0;
        for i in 0..n {
            self.push(&batch.get(i)?)?;
        }
        Ok(())
    }

    /// Cached entries stacked into `[len, C, H, W]`, or `None` when empty.
    pub fn stacked(&self) -> Result<Option<Tensor>> {
        if self.entries.is_empty() {
            return Ok(None);
        }
        let items: Vec<&Tensor> = self.entries.iter().collect();
        Ok(Some(Tensor::stack(&items, 0)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CacheSlot {
    RealA,
    RealB,
    FakeA,
    FakeB,
}

impl CacheSlot {
    pub const ALL: [CacheSlot; 4] = [
        CacheSlot::RealA,
        CacheSlot::RealB,
        CacheSlot::FakeA,
        CacheSlot::FakeB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CacheSlot::RealA => "real_a",
            CacheSlot::RealB => "real_b",
            CacheSlot::FakeA => "fake_a",
            CacheSlot::FakeB => "fake_b",
        }
    }
}

impl fmt::Display for CacheSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CacheSlot {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CacheSlot::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown cache selector {s:?}")))
    }
}

/// The four independent caches used during training.
#[derive(Debug, Clone, Default)]
pub struct CacheBank {
    pub real_a: FeatureCache,
    pub real_b: FeatureCache,
    pub fake_a: FeatureCache,
    pub fake_b: FeatureCache,
}

impl CacheBank {
    pub fn new(capacity: usize) -> Self {
        Self {
            real_a: FeatureCache::new(capacity),
            real_b: FeatureCache::new(capacity),
            fake_a: FeatureCache::new(capacity),
            fake_b: FeatureCache::new(capacity),
        }
    }

    pub fn get(&self, slot: CacheSlot) -> &FeatureCache {
        match slot {
            CacheSlot::RealA => &self.real_a,
            CacheSlot::RealB => &self.real_b,
            CacheSlot::FakeA => &self.fake_a,
            CacheSlot::FakeB => &self.fake_b,
        }
    }

    pub fn get_mut(&mut self, slot: CacheSlot) -> &mut FeatureCache {
        match slot {
            CacheSlot::RealA => &mut self.real_a,
            CacheSlot::RealB => &mut self.real_b,
            CacheSlot::FakeA => &mut self.fake_a,
            CacheSlot::FakeB => &mut self.fake_b,
        }
    }

    pub fn clear(&mut self) {
        for slot in CacheSlot::ALL {
            self.get_mut(slot).clear();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use proptest::prelude::*;

    fn feat(v: f32) -> Tensor {
        Tensor::full(v, (2, 1, 1), &Device::Cpu).unwrap()
    }

    fn values(c: &FeatureCache) -> Vec<f32> {
        c.entries()
            .map(|t| t.flatten_all().unwrap().to_vec1::<f32>().unwrap()[0])
            .collect()
    }

    #[test]
    fn fifo_eviction() {
        let mut c = FeatureCache::new(3);
        c.push(&feat(1.0)).unwrap();
        assert_eq!(values(&c), vec![1.0]);
        for v in [2.0, 3.0, 4.0] {
            c.push(&feat(v)).unwrap();
        }
        assert_eq!(values(&c), vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let mut c = FeatureCache::new(3);
        c.push(&feat(1.0)).unwrap();
        let other = Tensor::zeros((3, 1, 1), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(c.push(&other), Err(Error::Shape(_))));
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn selector_parsing() {
        assert_eq!("fake_b".parse::<CacheSlot>().unwrap(), CacheSlot::FakeB);
        assert!("fake_c".parse::<CacheSlot>().is_err());
    }

    proptest! {
        #[test]
        fn fifo_matches_slice_oracle(cap in 0usize..6, pushes in proptest::collection::vec(-100i32..100, 0..30)) {
            let mut c = FeatureCache::new(cap);
            let mut oracle: Vec<f32> = Vec::new();
            for p in &pushes {
                c.push(&feat(*p as f32)).unwrap();
                oracle.push(*p as f32);
                let start = oracle.len().saturating_sub(cap);
                prop_assert_eq!(values(&c), oracle[start..].to_vec());
                prop_assert!(c.len() <= cap);
            }
        }
    }
}
