use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::classes::ClassMap;
use crate::error::{Error, Result};
use crate::seed::rng_from;
use crate::session::Session;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];

    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "val" | "validation" => Ok(Partition::Val),
            "test" => Ok(Partition::Test),
            other => Err(Error::Config(format!("unknown partition `{other}`"))),
        }
    }
}

/// Train / validation / test fractions of the retained trials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    /// 20 % test; the remaining 80 % split 64 / 16 between training and validation.
    fn default() -> Self {
        SplitFractions {
            train: 0.64,
            val: 0.16,
            test: 0.20,
        }
    }
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let f = SplitFractions { train, val, test };
        f.validate()?;
        Ok(f)
    }

    /// Fractions for a given train+val share, with validation taking `val_share`
    /// of the train+val part.
    pub fn from_train_val(train_val: f64, val_share: f64) -> Result<Self> {
        Self::new(
            train_val * (1.0 - val_share),
            train_val * val_share,
            1.0 - train_val,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::Config(format!("split fractions must be positive: {self:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must sum to 1: {self:?}")));
        }
        Ok(())
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

impl FromStr for SplitFractions {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad fraction `{p}`")))
            })
            .collect::<Result<_>>()?;
        match parts.as_slice() {
            &[a, b, c] => SplitFractions::new(a, b, c),
            _ => Err(Error::Config("expected three comma-separated fractions".into())),
        }
    }
}

/// Largest-remainder apportionment of `n` items; ties go to the earlier partition.
pub fn apportion(n: usize, fractions: &SplitFractions) -> [usize; 3] {
    let quotas = fractions.as_array().map(|f| f * n as f64);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    // Every partition needs at least one trial; borrow from the largest.
    for i in 0..3 {
        if counts[i] == 0 {
            let donor = (0..3)
                .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
                .expect("three partitions");
            if counts[donor] > 1 {
                counts[donor] -= 1;
                counts[i] += 1;
            }
        }
    }
    counts
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub partitions: BTreeMap<u32, Partition>,
    pub seed: u64,
    pub fractions: SplitFractions,
}

impl SplitAssignment {
    pub fn partition_of(&self, trial_id: u32) -> Option<Partition> {
        self.partitions.get(&trial_id).copied()
    }

    pub fn trials_in(&self, p: Partition) -> Vec<u32> {
        self.partitions
            .iter()
            .filter(|(_, &q)| q == p)
            .map(|(&t, _)| t)
            .collect()
    }
}

/// Trial-level split with per-class stratification. Deterministic in `seed`.
pub fn stratified_split(
    session: &Session,
    class_map: &ClassMap,
    fractions: SplitFractions,
    seed: u64,
) -> Result<SplitAssignment> {
    fractions.validate()?;
    let mut by_class: Vec<Vec<u32>> = vec![Vec::new(); class_map.n_classes()];
    for t in &session.trials {
        if let Some(c) = class_map.class_of(t.object_id) {
            by_class[c].push(t.trial_id);
        }
    }

    let mut rng = rng_from(seed);
    let mut partitions = BTreeMap::new();
    for (class, mut ids) in by_class.into_iter().enumerate() {
        if ids.len() < 3 {
            return Err(Error::Data(format!(
                "class {class} has {} trial(s); at least 3 are needed to populate every partition",
                ids.len()
            )));
        }
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let counts = apportion(ids.len(), &fractions);
        let mut it = ids.into_iter();
        for p in Partition::ALL {
            for id in it.by_ref().take(counts[p.index()]) {
                partitions.insert(id, p);
            }
        }
    }
    Ok(SplitAssignment {
        partitions,
        seed,
        fractions,
    })
}
