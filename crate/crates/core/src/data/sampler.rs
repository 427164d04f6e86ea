use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::DataError;

struct Pool<T> {
    records: Vec<T>,
    order: Vec<usize>,
    cursor: usize,
}

impl<T> Pool<T> {
    fn remaining(&self) -> usize {
        self.order.len() - self.cursor
    }
}

/// Draws batches that each come from a single dataset. The dataset is chosen
/// with probability proportional to its unused records in the current epoch;
/// records are drawn without replacement until too few remain.
pub struct BatchSampler<T> {
    pools: BTreeMap<String, Pool<T>>,
    batch_size: usize,
    epoch: usize,
}

impl<T: Clone> BatchSampler<T> {
    pub fn new(
        datasets: BTreeMap<String, Vec<T>>,
        batch_size: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, DataError> {
        if batch_size == 0 {
            return Err(DataError::InvalidArgument(
                "batch size must be positive".into(),
            ));
        }
        if datasets.is_empty() {
            return Err(DataError::EmptyCorpus);
        }
        let mut pools = BTreeMap::new();
        for (name, records) in datasets {
            if records.len() < batch_size {
                return Err(DataError::DatasetTooSmall {
                    dataset: name,
                    size: records.len(),
                    batch: batch_size,
                });
            }
            let mut order: Vec<usize> = (0..records.len()).collect();
            order.shuffle(rng);
            pools.insert(
                name,
                Pool {
                    records,
                    order,
                    cursor: 0,
                },
            );
        }
        Ok(Self {
            pools,
            batch_size,
            epoch: 0,
        })
    }

    /// Groups records by a key, e.g. their dataset id.
    pub fn group_by(records: &[T], key: impl Fn(&T) -> &str) -> BTreeMap<String, Vec<T>> {
        let mut out: BTreeMap<String, Vec<T>> = BTreeMap::new();
        for r in records {
            out.entry(key(r).to_string()).or_default().push(r.clone());
        }
        out
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn sample(&mut self, rng: &mut impl Rng) -> (String, Vec<T>) {
        let bs = self.batch_size;
        if self.pools.values().all(|p| p.remaining() < bs) {
            self.epoch += 1;
            log::info!(
                "all datasets exhausted; reshuffling for epoch {}",
                self.epoch
            );
            for p in self.pools.values_mut() {
                p.order.shuffle(rng);
                p.cursor = 0;
            }
        }
        let total: usize = self
            .pools
            .values()
            .map(|p| {
                if p.remaining() >= bs {
                    p.remaining()
                } else {
                    0
                }
            })
            .sum();
        let mut pick = rng.random_range(0..total);
        let mut chosen = None;
        for (name, p) in &self.pools {
            let w = if p.remaining() >= bs {
                p.remaining()
            } else {
                0
            };
            if pick < w {
                chosen = Some(name.clone());
                break;
            }
            pick -= w;
        }
        let name = chosen.expect("weights sum to total");
        let pool = self.pools.get_mut(&name).expect("chosen from pools");
        let idx = &pool.order[pool.cursor..pool.cursor + bs];
        let batch = idx.iter().map(|&i| pool.records[i].clone()).collect();
        pool.cursor += bs;
        (name, batch)
    }
}
