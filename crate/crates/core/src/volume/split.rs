use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::VolumeError;
use crate::kv::KvMap;

/// Disjoint train/val/test partition of phantom identifiers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub master_seed: u64,
}

pub fn subject_id(n: usize) -> String {
    format!("subject_{n:03}")
}

impl DatasetSplit {
    /// Shuffles `0..total` with `master_seed` and cuts it into the three lists.
    pub fn random(total: usize, n_train: usize, n_val: usize, master_seed: u64) -> Result<Self, VolumeError> {
        if n_train + n_val > total {
            return Err(VolumeError::InvalidSpec(format!(
                "split {n_train}+{n_val} exceeds population {total}"
            )));
        }
        let mut ids: Vec<usize> = (0..total).collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(master_seed));
        let name = |v: &[usize]| {
            let mut v = v.to_vec();
            v.sort_unstable();
            v.into_iter().map(subject_id).collect::<Vec<_>>()
        };
        Ok(Self {
            train: name(&ids[..n_train]),
            val: name(&ids[n_train..n_train + n_val]),
            test: name(&ids[n_train + n_val..]),
            master_seed,
        })
    }

    /// Default proportions 20/5/5 of 30, scaled for other totals.
    pub fn proportional(total: usize, master_seed: u64) -> Result<Self, VolumeError> {
        let n_val = (total / 6).max(usize::from(total >= 3));
        let n_test = n_val;
        Self::random(total, total - n_val - n_test, n_val, master_seed)
    }

    pub fn all(&self) -> impl Iterator<Item = &String> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }

    pub fn validate(&self) -> Result<(), VolumeError> {
        let mut seen = std::collections::HashSet::new();
        for id in self.all() {
            if !seen.insert(id) {
                return Err(VolumeError::InvalidSpec(format!("subject {id} appears in more than one split")));
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("master_seed", self.master_seed);
        m.set("train", self.train.join(" "));
        m.set("val", self.val.join(" "));
        m.set("test", self.test.join(" "));
        m
    }

    pub fn from_kv(m: &KvMap) -> Result<Self, VolumeError> {
        let list = |k: &str| -> Vec<String> {
            m.get(k).map(|v| v.split_whitespace().map(str::to_string).collect()).unwrap_or_default()
        };
        let split = Self {
            train: list("train"),
            val: list("val"),
            test: list("test"),
            master_seed: m.parse_or("master_seed", 0, "u64")?,
        };
        split.validate()?;
        Ok(split)
    }
}
