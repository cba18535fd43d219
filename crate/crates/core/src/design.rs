//! Random biregular pooling designs.
//!
//! A design places `n_items` items into `n_pools` pools so that every pool
//! holds exactly `pool_size` distinct items and every item belongs to exactly
//! `overlap` pools. Indices are 0-based.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GtError, Result};
use crate::rng::{rng_from_seed, GtRng};

/// Restart cap for stub matching.
pub const MAX_ATTEMPTS: usize = 1000;

/// Serialized form of a design, also the input to [`validate_design`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDesign {
    pub n_items: usize,
    pub n_pools: usize,
    pub pool_size: usize,
    pub overlap: usize,
    pub pools: Vec<Vec<usize>>,
}

/// A validated biregular design. Construct with [`generate_design`] or
/// `PoolingDesign::try_from(raw)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolingDesign {
    n_items: usize,
    pool_size: usize,
    overlap: usize,
    pools: Vec<Vec<usize>>,
    memberships: Vec<Vec<usize>>,
}

impl PoolingDesign {
    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_pools(&self) -> usize {
        self.pools.len()
    }

    pub fn pool_size(&self) -> usize {
        self.pool_size
    }

    pub fn overlap(&self) -> usize {
        self.overlap
    }

    /// Ratio of tests to items, `M / N`.
    pub fn alpha(&self) -> f64 {
        self.n_pools() as f64 / self.n_items as f64
    }

    /// Items of pool `pool`, sorted ascending.
    pub fn pool(&self, pool: usize) -> &[usize] {
        &self.pools[pool]
    }

    pub fn pools(&self) -> &[Vec<usize>] {
        &self.pools
    }

    /// Pools containing `item`, sorted ascending.
    pub fn memberships(&self, item: usize) -> &[usize] {
        &self.memberships[item]
    }

    pub fn n_edges(&self) -> usize {
        self.pools.len() * self.pool_size
    }

    pub fn to_raw(&self) -> RawDesign {
        RawDesign {
            n_items: self.n_items,
            n_pools: self.n_pools(),
            pool_size: self.pool_size,
            overlap: self.overlap,
            pools: self.pools.clone(),
        }
    }

    /// Builds a design from pool lists, inferring the pool size and overlap.
    pub fn from_pools(n_items: usize, pools: Vec<Vec<usize>>) -> Result<Self> {
        let pool_size = pools.first().map_or(0, Vec::len);
        let overlap = if n_items == 0 {
            0
        } else {
            pools.iter().flatten().filter(|&&i| i == 0).count()
        };
        Self::try_from(RawDesign {
            n_items,
            n_pools: pools.len(),
            pool_size,
            overlap,
            pools,
        })
    }

    /// Relabels items by `item_perm` (old -> new) and reorders pools by
    /// `pool_perm` (old -> new).
    pub fn relabel(&self, item_perm: &[usize], pool_perm: &[usize]) -> Result<Self> {
        let mut pools = vec![Vec::new(); self.n_pools()];
        for (old, members) in self.pools.iter().enumerate() {
            pools[pool_perm[old]] = members.iter().map(|&i| item_perm[i]).collect();
        }
        Self::try_from(RawDesign {
            n_items: self.n_items,
            n_pools: self.n_pools(),
            pool_size: self.pool_size,
            overlap: self.overlap,
            pools,
        })
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_design(&self.to_raw())
    }
}

impl TryFrom<RawDesign> for PoolingDesign {
    type Error = GtError;

    fn try_from(raw: RawDesign) -> Result<Self> {
        let report = validate_design(&raw);
        if !report.is_empty() {
            return Err(GtError::InvalidDesign(
                report.iter().map(ToString::to_string).collect(),
            ));
        }
        let mut pools = raw.pools;
        for pool in &mut pools {
            pool.sort_unstable();
        }
        let memberships = transpose(raw.n_items, &pools);
        Ok(Self {
            n_items: raw.n_items,
            pool_size: raw.pool_size,
            overlap: raw.overlap,
            pools,
            memberships,
        })
    }
}

fn transpose(n_items: usize, pools: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut memberships = vec![Vec::new(); n_items];
    for (nu, pool) in pools.iter().enumerate() {
        for &i in pool {
            memberships[i].push(nu);
        }
    }
    memberships
}

/// One violated design invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    PoolCount { declared: usize, actual: usize },
    DegreeIdentity { items_side: usize, pools_side: usize },
    PoolSize { pool: usize, expected: usize, actual: usize },
    ItemOutOfRange { pool: usize, item: usize },
    DuplicateItemInPool { pool: usize, item: usize },
    ItemDegree { item: usize, expected: usize, actual: usize },
    DuplicatePool { first: usize, second: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::PoolCount { declared, actual } => {
                write!(f, "n_pools is {declared} but {actual} pools are listed")
            }
            Violation::DegreeIdentity {
                items_side,
                pools_side,
            } => write!(
                f,
                "overlap * n_items = {items_side} differs from pool_size * n_pools = {pools_side}"
            ),
            Violation::PoolSize {
                pool,
                expected,
                actual,
            } => write!(f, "pool {pool} has {actual} items, expected {expected}"),
            Violation::ItemOutOfRange { pool, item } => {
                write!(f, "pool {pool} references item {item} out of range")
            }
            Violation::DuplicateItemInPool { pool, item } => {
                write!(f, "pool {pool} contains item {item} more than once")
            }
            Violation::ItemDegree {
                item,
                expected,
                actual,
            } => write!(f, "item {item} appears in {actual} pools, expected {expected}"),
            Violation::DuplicatePool { first, second } => {
                write!(f, "pools {first} and {second} are identical")
            }
        }
    }
}

/// Lists every violated invariant of `raw`; an empty report means valid.
pub fn validate_design(raw: &RawDesign) -> Vec<Violation> {
    let mut report = Vec::new();
    if raw.n_pools != raw.pools.len() {
        report.push(Violation::PoolCount {
            declared: raw.n_pools,
            actual: raw.pools.len(),
        });
    }
    let items_side = raw.overlap * raw.n_items;
    let pools_side = raw.pool_size * raw.n_pools;
    if items_side != pools_side {
        report.push(Violation::DegreeIdentity {
            items_side,
            pools_side,
        });
    }

    let mut degree = vec![0usize; raw.n_items];
    let mut seen_sets: HashMap<BTreeSet<usize>, usize> = HashMap::new();
    for (nu, pool) in raw.pools.iter().enumerate() {
        if pool.len() != raw.pool_size {
            report.push(Violation::PoolSize {
                pool: nu,
                expected: raw.pool_size,
                actual: pool.len(),
            });
        }
        let mut members = BTreeSet::new();
        for &item in pool {
            if item >= raw.n_items {
                report.push(Violation::ItemOutOfRange { pool: nu, item });
                continue;
            }
            if !members.insert(item) {
                report.push(Violation::DuplicateItemInPool { pool: nu, item });
                continue;
            }
            degree[item] += 1;
        }
        if let Some(&first) = seen_sets.get(&members) {
            report.push(Violation::DuplicatePool { first, second: nu });
        } else {
            seen_sets.insert(members, nu);
        }
    }
    for (item, &d) in degree.iter().enumerate() {
        if d != raw.overlap {
            report.push(Violation::ItemDegree {
                item,
                expected: raw.overlap,
                actual: d,
            });
        }
    }
    report
}

/// Generates a random biregular design by configuration-model stub matching.
///
/// Item stubs (each item repeated `C = KM/N` times) are shuffled and cut into
/// pools of `K`. Repeated items inside a pool are repaired by random stub
/// swaps between pools; an attempt that still leaves a repeated item or two
/// identical pools is discarded and the matching restarts.
pub fn generate_design(
    n_items: usize,
    n_pools: usize,
    pool_size: usize,
    seed: u64,
) -> Result<PoolingDesign> {
    let overlap = check_design_params(n_items, n_pools, pool_size)?;
    let mut rng = rng_from_seed(seed);
    let mut stubs: Vec<usize> = (0..n_items)
        .flat_map(|i| std::iter::repeat(i).take(overlap))
        .collect();

    for _ in 0..MAX_ATTEMPTS {
        stubs.shuffle(&mut rng);
        let mut pools: Vec<Vec<usize>> = stubs.chunks(pool_size).map(<[usize]>::to_vec).collect();
        if !repair_repeats(&mut pools, &mut rng) {
            continue;
        }
        for pool in &mut pools {
            pool.sort_unstable();
        }
        let mut distinct = BTreeSet::new();
        if !pools.iter().all(|p| distinct.insert(p.clone())) {
            continue;
        }
        let memberships = transpose(n_items, &pools);
        return Ok(PoolingDesign {
            n_items,
            pool_size,
            overlap,
            pools,
            memberships,
        });
    }
    Err(GtError::InfeasibleDesign {
        attempts: MAX_ATTEMPTS,
    })
}

/// Checks the feasibility preconditions and returns the overlap `C`.
pub fn check_design_params(n_items: usize, n_pools: usize, pool_size: usize) -> Result<usize> {
    if n_items == 0 || n_pools == 0 || pool_size == 0 {
        return Err(GtError::InvalidDesignParams(
            "n_items, n_pools and pool_size must be positive".into(),
        ));
    }
    let product = pool_size * n_pools;
    if product % n_items != 0 {
        return Err(GtError::Divisibility { product, n_items });
    }
    if pool_size >= n_items {
        return Err(GtError::InvalidDesignParams(format!(
            "pool_size {pool_size} must be smaller than n_items {n_items}"
        )));
    }
    if n_pools >= n_items {
        return Err(GtError::InvalidDesignParams(format!(
            "n_pools {n_pools} must be smaller than n_items {n_items}"
        )));
    }
    Ok(product / n_items)
}

fn has_repeat(pool: &[usize]) -> Option<usize> {
    (0..pool.len()).find(|&s| pool[..s].contains(&pool[s]))
}

/// Swaps repeated stubs out of their pools. Returns false when the swap
/// budget runs out.
fn repair_repeats(pools: &mut [Vec<usize>], rng: &mut GtRng) -> bool {
    let n_pools = pools.len();
    let k = pools[0].len();
    let mut budget = 100 * n_pools * k + 1000;
    for p in 0..n_pools {
        while let Some(s) = has_repeat(&pools[p]) {
            if n_pools == 1 {
                return false;
            }
            loop {
                if budget == 0 {
                    return false;
                }
                budget -= 1;
                let q = rng.gen_range(0..n_pools);
                if q == p {
                    continue;
                }
                let t = rng.gen_range(0..k);
                let a = pools[p][s];
                let b = pools[q][t];
                if pools[q].contains(&a) || pools[p].contains(&b) {
                    continue;
                }
                pools[p][s] = b;
                pools[q][t] = a;
                break;
            }
        }
    }
    true
}
