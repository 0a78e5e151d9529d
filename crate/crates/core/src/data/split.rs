use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::Prng;

const FLOOR_EPS: f64 = 1e-9;

/// Fractions of each class sent to train/val/test. Must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = Self { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [("train", self.train), ("val", self.val), ("test", self.test)] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                problems.push(format!("split ratio '{name}' must lie in [0, 1], got {v}"));
            }
        }
        let sum = self.train + self.val + self.test;
        if problems.is_empty() && (sum - 1.0).abs() > 1e-9 {
            problems.push(format!("split ratios must sum to 1, got {sum}"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Val,
    Test,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Train, Subset::Val, Subset::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Val => "val",
            Subset::Test => "test",
        }
    }
}

impl std::str::FromStr for Subset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Subset::Train),
            "val" => Ok(Subset::Val),
            "test" => Ok(Subset::Test),
            other => Err(Error::param(format!("unknown subset '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// Source indices per subset, in subset order.
    pub indices: [Vec<usize>; 3],
    pub warnings: Vec<String>,
}

impl Splits {
    pub fn get(&self, subset: Subset) -> &Dataset {
        match subset {
            Subset::Train => &self.train,
            Subset::Val => &self.val,
            Subset::Test => &self.test,
        }
    }
}

/// Per-class quotas whose total is `floor(N * ratio)`. Each class first gets
/// `floor(n_c * ratio)`; the shortfall goes one sample at a time to the
/// classes with the largest fractional remainders (lowest index on ties),
/// never exceeding `caps`.
pub fn allocate(counts: &[usize], ratio: f64, caps: &[usize]) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let cap_total: usize = caps.iter().sum();
    let target = ((total as f64 * ratio + FLOOR_EPS).floor() as usize).min(cap_total);
    let mut quota = Vec::with_capacity(counts.len());
    let mut remainders = Vec::with_capacity(counts.len());
    for (c, (&n, &cap)) in counts.iter().zip(caps).enumerate() {
        let exact = n as f64 * ratio;
        let base = (exact + FLOOR_EPS).floor();
        quota.push((base as usize).min(cap));
        remainders.push((c, (exact - base).max(0.0)));
    }
    remainders.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut assigned: usize = quota.iter().sum();
    while assigned < target {
        let mut progressed = false;
        for &(c, _) in &remainders {
            if assigned == target {
                break;
            }
            if quota[c] < caps[c] {
                quota[c] += 1;
                assigned += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    quota
}

/// Stratified, seeded partition into train/val/test. Within a class, order
/// follows a seeded shuffle; every sample lands in exactly one subset.
pub fn split(dataset: &Dataset, ratios: SplitRatios, seed: u64) -> Result<Splits> {
    ratios.validate()?;
    let k = dataset.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, s) in dataset.samples.iter().enumerate() {
        by_class[s.class_index].push(i);
    }
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let train_q = allocate(&counts, ratios.train, &counts);
    let left: Vec<usize> = counts.iter().zip(&train_q).map(|(n, t)| n - t).collect();
    // val's share is relative to the whole dataset, not to what is left.
    let val_q = allocate(&counts, ratios.val, &left);

    let mut warnings = Vec::new();
    let wanted = [ratios.train, ratios.val, ratios.test]
        .iter()
        .filter(|r| **r > 0.0)
        .count();
    let mut indices: [Vec<usize>; 3] = Default::default();
    for (c, members) in by_class.iter_mut().enumerate() {
        let mut rng = Prng::derive(seed, c as u64);
        rng.shuffle(members);
        let (t, v) = (train_q[c], val_q[c]);
        let test_n = members.len() - t - v;
        let nonempty = [t, v, test_n].iter().filter(|n| **n > 0).count();
        if nonempty < wanted {
            warnings.push(format!(
                "class '{}' has {} samples; some subsets receive none of it",
                dataset.class_names[c],
                members.len()
            ));
        }
        indices[0].extend_from_slice(&members[..t]);
        indices[1].extend_from_slice(&members[t..t + v]);
        indices[2].extend_from_slice(&members[t + v..]);
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Splits {
        train: dataset.subset(&indices[0]),
        val: dataset.subset(&indices[1]),
        test: dataset.subset(&indices[2]),
        indices,
        warnings,
    })
}
