use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Endless stream of batches holding `batch_size / num_classes` indices of
/// every target class. Each class pool is walked in a shuffled order and
/// reshuffled when exhausted, so small classes are revisited.
#[derive(Clone, Debug)]
pub struct BalancedBatches {
    pools: Vec<Vec<usize>>,
    cursor: Vec<usize>,
    per_class: usize,
    rng: ChaCha8Rng,
}

pub fn balanced_batch_sampler(labels: &[usize], batch_size: usize, seed: u64) -> Result<BalancedBatches> {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut pools = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        pools[l].push(i);
    }
    if k < 2 {
        return Err(Error::Data("balanced batches need at least two classes".into()));
    }
    if let Some(c) = pools.iter().position(Vec::is_empty) {
        return Err(Error::Data(format!("class {c} has no samples")));
    }
    let per_class = batch_size / k;
    if per_class == 0 {
        return Err(Error::Config(format!(
            "batch size {batch_size} is smaller than the {k} classes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in &mut pools {
        p.shuffle(&mut rng);
    }
    Ok(BalancedBatches {
        cursor: vec![0; k],
        pools,
        per_class,
        rng,
    })
}

impl Iterator for BalancedBatches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let mut batch = Vec::with_capacity(self.per_class * self.pools.len());
        for (pool, cur) in self.pools.iter_mut().zip(&mut self.cursor) {
            for _ in 0..self.per_class {
                if *cur == pool.len() {
                    pool.shuffle(&mut self.rng);
                    *cur = 0;
                }
                batch.push(pool[*cur]);
                *cur += 1;
            }
        }
        Some(batch)
    }
}
