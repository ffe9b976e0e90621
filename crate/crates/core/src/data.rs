//! Synthetic federated regression tasks, sorted partitioning and CSV loading.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::math::ClientShard;

/// One labelled sample before it is assigned to a client.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub features: Vec<f64>,
    pub target: f64,
}

/// Shards for clients `0..N` plus summary sizes.
#[derive(Debug, Clone)]
pub struct FederatedDataset {
    pub shards: Vec<ClientShard>,
    pub n: usize,
    /// `(1/N) Σ n_l²`
    pub n_bar_sq: f64,
    /// Raw feature count `d` (before the bias column).
    pub feature_dim: usize,
}

impl FederatedDataset {
    pub fn from_shards(shards: Vec<ClientShard>, feature_dim: usize) -> Result<Self> {
        if shards.is_empty() {
            return Err(Error::Data("dataset has no clients".into()));
        }
        for (i, s) in shards.iter().enumerate() {
            if s.client_id() != i {
                return Err(Error::Data(format!("shard {i} carries client id {}", s.client_id())));
            }
        }
        let n = shards.iter().map(|s| s.len()).sum();
        let n_bar_sq = crate::engine::mean_squared_shard_size(&shards);
        Ok(FederatedDataset {
            shards,
            n,
            n_bar_sq,
            feature_dim,
        })
    }

    pub fn clients(&self) -> usize {
        self.shards.len()
    }

    /// Parameter dimension including the bias column.
    pub fn dim(&self) -> usize {
        self.shards[0].dim()
    }
}

/// Linear-regression task where client `l` draws targets from
/// `θ_true + heterogeneity · offset_l`, all features standard normal and a
/// bias column appended. Heterogeneity 0 gives identically distributed shards.
pub fn synth_regression(
    clients: usize,
    per_client: usize,
    feature_dim: usize,
    heterogeneity: f64,
    noise_std: f64,
    seed: u64,
) -> Result<FederatedDataset> {
    if clients == 0 || per_client == 0 || feature_dim == 0 {
        return Err(Error::config("synthetic data needs clients, samples and features ≥ 1"));
    }
    if !(0.0..=1.0).contains(&heterogeneity) {
        return Err(Error::config(format!("heterogeneity must lie in [0, 1], got {heterogeneity}")));
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::config(format!("noise_std must be ≥ 0, got {noise_std}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = feature_dim + 1;
    let theta_true: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let observation = Normal::new(0.0, noise_std).map_err(|e| Error::config(e.to_string()))?;

    let mut shards = Vec::with_capacity(clients);
    for l in 0..clients {
        let local: Vec<f64> = theta_true
            .iter()
            .map(|&v| {
                let offset: f64 = StandardNormal.sample(&mut rng);
                v + heterogeneity * offset
            })
            .collect();
        let mut rows = Vec::with_capacity(per_client);
        let mut targets = Vec::with_capacity(per_client);
        for _ in 0..per_client {
            let x: Vec<f64> = (0..feature_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let clean: f64 = x.iter().zip(&local).map(|(a, b)| a * b).sum::<f64>() + local[feature_dim];
            targets.push(clean + observation.sample(&mut rng));
            rows.push(x);
        }
        shards.push(ClientShard::new(l, &rows, targets, true)?);
    }
    FederatedDataset::from_shards(shards, feature_dim)
}

/// Which column orders records before partitioning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SortKey {
    Target,
    Feature(usize),
}

/// Splits `count` items into `parts` contiguous sizes differing by at most
/// one; the first `count mod parts` groups take the extra item.
pub fn even_sizes(count: usize, parts: usize) -> Vec<usize> {
    let base = count / parts;
    let extra = count % parts;
    (0..parts).map(|i| base + usize::from(i < extra)).collect()
}

/// Contiguous chunking of `records` in their given order.
pub fn contiguous_partition(records: &[Record], clients: usize, bias: bool) -> Result<FederatedDataset> {
    if clients == 0 {
        return Err(Error::config("need at least one client"));
    }
    if records.len() < clients {
        return Err(Error::Data(format!(
            "{} records cannot fill {clients} clients",
            records.len()
        )));
    }
    let feature_dim = records[0].features.len();
    let mut shards = Vec::with_capacity(clients);
    let mut start = 0;
    for (l, size) in even_sizes(records.len(), clients).into_iter().enumerate() {
        let chunk = &records[start..start + size];
        start += size;
        let rows: Vec<Vec<f64>> = chunk.iter().map(|r| r.features.clone()).collect();
        let targets = chunk.iter().map(|r| r.target).collect();
        shards.push(ClientShard::new(l, &rows, targets, bias)?);
    }
    FederatedDataset::from_shards(shards, feature_dim)
}

/// Sorts ascending by `key` (stable, so ties keep input order) and deals
/// contiguous groups to clients `0..N`.
pub fn sorted_partition(records: &[Record], key: SortKey, clients: usize, bias: bool) -> Result<FederatedDataset> {
    if let (SortKey::Feature(i), Some(first)) = (key, records.first()) {
        if i >= first.features.len() {
            return Err(Error::config(format!(
                "sort key feature {i} out of range (records have {} features)",
                first.features.len()
            )));
        }
    }
    let value = |r: &Record| match key {
        SortKey::Target => r.target,
        SortKey::Feature(i) => r.features[i],
    };
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| value(a).total_cmp(&value(b)));
    contiguous_partition(&sorted, clients, bias)
}

/// Records parsed from a CSV file, split into training and holdout sets.
#[derive(Debug, Clone)]
pub struct CsvSplit {
    pub train: Vec<Record>,
    pub holdout: Vec<Record>,
    /// Rows skipped because a selected cell was missing or non-numeric.
    pub rejected: usize,
}

/// Reads a headed numeric CSV, shuffles rows with `seed` and keeps
/// `round(train_fraction · rows)` of them for training.
///
/// An empty `feature_columns` selects every column except the target.
pub fn load_csv(
    path: &Path,
    target_column: &str,
    feature_columns: &[String],
    train_fraction: f64,
    seed: u64,
) -> Result<CsvSplit> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::config(format!("train_fraction must lie in [0, 1], got {train_fraction}")));
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Data(format!("column {name:?} not found in {}", path.display())))
    };
    let target_idx = find(target_column)?;
    let feature_idx: Vec<usize> = if feature_columns.is_empty() {
        (0..headers.len()).filter(|&i| i != target_idx).collect()
    } else {
        feature_columns.iter().map(|c| find(c)).collect::<Result<_>>()?
    };
    if feature_idx.is_empty() {
        return Err(Error::Data("no feature columns selected".into()));
    }

    let parse = |row: &csv::StringRecord, i: usize| -> Option<f64> {
        row.get(i)
            .and_then(|cell| cell.trim().parse::<f64>().ok())
            .filter(|v| v.is_finite())
    };
    let mut records = Vec::new();
    let mut rejected = 0;
    for row in reader.records() {
        let row = row?;
        let target = parse(&row, target_idx);
        let features: Option<Vec<f64>> = feature_idx.iter().map(|&i| parse(&row, i)).collect();
        match (target, features) {
            (Some(target), Some(features)) => records.push(Record { features, target }),
            _ => rejected += 1,
        }
    }
    if records.is_empty() {
        return Err(Error::Data(format!("{} has no fully numeric rows", path.display())));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    records.shuffle(&mut rng);
    let keep = (train_fraction * records.len() as f64).round() as usize;
    let holdout = records.split_off(keep);
    Ok(CsvSplit {
        train: records,
        holdout,
        rejected,
    })
}
