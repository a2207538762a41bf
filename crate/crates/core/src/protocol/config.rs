use serde::{Deserialize, Serialize};

use crate::data::{derive_seed, stream, Dataset};
use crate::error::{Error, Result};
use crate::mle::ThetaAggregation;
use crate::spectral::SignalNoise;

use rand::seq::SliceRandom;

const TAG_PARTITION: u64 = 11;
const TAG_SHARD: u64 = 12;
const TAG_VALIDATION: u64 = 13;

/// `{1/8, 1/4, 1/2, 1, 2, 4, 8}`, multipliers of the initial guess λ₀.
pub const DEFAULT_MULTIPLIERS: [f64; 7] = [0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PartitionStrategy {
    #[default]
    Contiguous,
    Shuffled { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WonderConfig {
    pub k: usize,
    pub partition: PartitionStrategy,
    pub lambda_multipliers: Vec<f64>,
    /// Share of the training rows held out for choosing λ.
    pub validation_fraction: f64,
    pub theta_aggregation: ThetaAggregation,
    /// Center each shard with its own means before fitting.
    pub center_shards: bool,
    /// Known θ; skips the likelihood fits (simulation studies).
    pub theta_override: Option<SignalNoise<f64>>,
}

impl Default for WonderConfig {
    fn default() -> Self {
        Self {
            k: 1,
            partition: PartitionStrategy::Contiguous,
            lambda_multipliers: DEFAULT_MULTIPLIERS.to_vec(),
            validation_fraction: 0.1,
            theta_aggregation: ThetaAggregation::Mean,
            center_shards: false,
            theta_override: None,
        }
    }
}

impl WonderConfig {
    pub fn with_k(k: usize) -> Self {
        Self { k, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidInput("k must be at least 1".into()));
        }
        if !(0.0..=0.5).contains(&self.validation_fraction) {
            return Err(Error::domain("validation_fraction", self.validation_fraction, "[0, 0.5]"));
        }
        if self.lambda_multipliers.is_empty() {
            return Err(Error::InvalidInput("the lambda grid is empty".into()));
        }
        if let Some(&m) = self.lambda_multipliers.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::domain("lambda multiplier", m, "(0, inf)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub id: usize,
    pub data: Dataset,
    pub seed: u64,
}

impl Shard {
    pub fn n(&self) -> usize {
        self.data.n()
    }
}

/// Splits rows into `k` blocks whose sizes differ by at most one; the first
/// `n mod k` shards get the extra row.
pub fn partition(data: &Dataset, config: &WonderConfig) -> Result<Vec<Shard>> {
    config.validate()?;
    let (n, k) = (data.n(), config.k);
    if k > n {
        return Err(Error::InvalidInput(format!("cannot split {n} rows into {k} shards")));
    }
    let mut rows: Vec<usize> = (0..n).collect();
    let root = match config.partition {
        PartitionStrategy::Contiguous => 0,
        PartitionStrategy::Shuffled { seed } => {
            rows.shuffle(&mut stream(seed, TAG_PARTITION, 0));
            seed
        }
    };
    let (base, extra) = (n / k, n % k);
    let mut start = 0;
    Ok((0..k)
        .map(|id| {
            let len = base + usize::from(id < extra);
            let shard = Shard {
                id,
                data: data.select_rows(&rows[start..start + len]),
                seed: derive_seed(root, TAG_SHARD, id as u64),
            };
            start += len;
            shard
        })
        .collect())
}

/// Randomly holds out `round(fraction · n)` rows, returning `(train, validation)`.
pub fn split_validation(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..=0.5).contains(&fraction) {
        return Err(Error::domain("validation_fraction", fraction, "[0, 0.5]"));
    }
    let n_val = (fraction * data.n() as f64).round() as usize;
    let mut rows: Vec<usize> = (0..data.n()).collect();
    rows.shuffle(&mut stream(seed, TAG_VALIDATION, 0));
    let (val, train) = rows.split_at(n_val);
    let mut train = train.to_vec();
    train.sort_unstable();
    let mut val = val.to_vec();
    val.sort_unstable();
    Ok((data.select_rows(&train), data.select_rows(&val)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn indexed(n: usize) -> Dataset {
        Dataset::new(
            DMatrix::from_fn(n, 2, |i, j| (i * 2 + j) as f64),
            DVector::from_fn(n, |i, _| i as f64),
        )
        .unwrap()
    }

    fn rows(shard: &Shard) -> Vec<usize> {
        shard.data.y.iter().map(|&v| v as usize).collect()
    }

    #[test]
    fn contiguous_halves() {
        let shards = partition(&indexed(10), &WonderConfig::with_k(2)).unwrap();
        assert_eq!(rows(&shards[0]), vec![0, 1, 2, 3, 4]);
        assert_eq!(rows(&shards[1]), vec![5, 6, 7, 8, 9]);
    }

    #[test]
    fn remainder_goes_to_leading_shards() {
        let shards = partition(&indexed(10), &WonderConfig::with_k(3)).unwrap();
        let sizes: Vec<usize> = shards.iter().map(Shard::n).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
    }

    #[test]
    fn shuffled_is_seeded() {
        let cfg = |seed| WonderConfig {
            k: 4,
            partition: PartitionStrategy::Shuffled { seed },
            ..WonderConfig::default()
        };
        let data = indexed(40);
        let a = partition(&data, &cfg(1)).unwrap();
        let b = partition(&data, &cfg(1)).unwrap();
        let c = partition(&data, &cfg(2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(rows(&a[0]), rows(&c[0]));
        let mut all: Vec<usize> = a.iter().flat_map(rows).collect();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn too_many_shards() {
        assert!(partition(&indexed(3), &WonderConfig::with_k(4)).is_err());
        assert!(partition(&indexed(3), &WonderConfig::with_k(0)).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = WonderConfig::default();
        cfg.validation_fraction = 0.6;
        assert!(cfg.validate().is_err());
        cfg.validation_fraction = 0.1;
        cfg.lambda_multipliers = vec![];
        assert!(cfg.validate().is_err());
        cfg.lambda_multipliers = vec![1.0, -2.0];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_rejects_unknown_fields() {
        let ok: WonderConfig = serde_json::from_str(r#"{"k": 3}"#).unwrap();
        assert_eq!(ok.k, 3);
        assert_eq!(ok.lambda_multipliers.len(), 7);
        assert!(serde_json::from_str::<WonderConfig>(r#"{"k": 3, "bogus": 1}"#).is_err());
    }

    #[test]
    fn validation_carve_out() {
        let data = indexed(50);
        let (train, val) = split_validation(&data, 0.1, 4).unwrap();
        assert_eq!((train.n(), val.n()), (45, 5));
        let mut all: Vec<usize> = train.y.iter().chain(val.y.iter()).map(|&v| v as usize).collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert_eq!(split_validation(&data, 0.1, 4).unwrap().1, val);
    }
}
