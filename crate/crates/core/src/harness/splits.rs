use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrixio::LabelVector;

/// Nodes drawn per class for each of train and validation.
pub const NODES_PER_CLASS: usize = 20;

/// How many pool nodes go to calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibRule {
    /// `min(1000, |pool| / 2)`.
    PaperMin1000,
    Fixed(usize),
}

impl CalibRule {
    pub fn calib_size(&self, pool: usize) -> Result<usize> {
        let c = match *self {
            CalibRule::PaperMin1000 => (pool / 2).min(1000),
            CalibRule::Fixed(c) => c,
        };
        if c == 0 || c >= pool {
            return Err(Error::PoolExhausted(format!(
                "calibration size {c} leaves no test nodes in a pool of {pool}"
            )));
        }
        Ok(c)
    }
}

/// Disjoint train / valid / calib / test node sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    /// In random order; harness code may cut it into tuning and calibration halves.
    pub calib: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn new(
        train: Vec<usize>,
        valid: Vec<usize>,
        calib: Vec<usize>,
        test: Vec<usize>,
        n: usize,
    ) -> Result<Self> {
        let mut owner = vec![u8::MAX; n];
        for (tag, set) in [&train, &valid, &calib, &test].into_iter().enumerate() {
            for &i in set {
                if i >= n {
                    return Err(Error::NodeOutOfRange { index: i, n });
                }
                if owner[i] != u8::MAX {
                    return Err(Error::SplitOverlap(i));
                }
                owner[i] = tag as u8;
            }
        }
        Ok(Self {
            train,
            valid,
            calib,
            test,
        })
    }
}

/// Train/valid selection fixed for one model run; the rest is the pool that
/// conformal splits partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSplit {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    /// Sorted ascending.
    pub pool: Vec<usize>,
}

pub fn sample_model_split(labels: &LabelVector, per_class: usize, seed: u64) -> Result<ModelSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut valid, mut pool) = (Vec::new(), Vec::new(), Vec::new());
    for (class, mut members) in labels.class_members().into_iter().enumerate() {
        if members.len() < 2 * per_class {
            return Err(Error::ClassTooSmall {
                class,
                count: members.len(),
                needed: 2 * per_class,
            });
        }
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..per_class]);
        valid.extend_from_slice(&members[per_class..2 * per_class]);
        pool.extend_from_slice(&members[2 * per_class..]);
    }
    train.sort_unstable();
    valid.sort_unstable();
    pool.sort_unstable();
    Ok(ModelSplit { train, valid, pool })
}

/// Random calibration/test partition of `pool`. Calibration nodes stay in
/// draw order; test nodes are sorted.
pub fn split_pool(pool: &[usize], rule: CalibRule, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let c = rule.calib_size(pool.len())?;
    let mut shuffled = pool.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = shuffled.split_off(c);
    test.sort_unstable();
    Ok((shuffled, test))
}

/// One full split: 20 train and 20 valid nodes per class, then the pool is
/// divided between calibration and test by `rule`.
pub fn sample_splits(labels: &LabelVector, rule: CalibRule, seed: u64) -> Result<SplitIndices> {
    let ms = sample_model_split(labels, NODES_PER_CLASS, seed)?;
    let (calib, test) = split_pool(&ms.pool, rule, crate::numeric::derive_seed(seed, 1))?;
    SplitIndices::new(ms.train, ms.valid, calib, test, labels.len())
}
