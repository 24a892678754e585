//! Dataset sources: a seeded Gaussian-blob generator and a CSV loader
//! (header row, last column = integer class label).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fl::Dataset;

/// Shape of the synthetic classification task.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SyntheticDataConfig {
    /// Number of classes (blob centers).
    pub classes: usize,
    /// Feature dimensionality.
    pub dims: usize,
    /// Blob centers drawn uniformly from `[-center_spread, center_spread]`
    /// per coordinate.
    pub center_spread: f64,
    /// Standard deviation of the per-sample Gaussian noise around a center.
    pub noise_sigma: f64,
    /// 0 = IID shards. At `s`, a client's preferred class (its index mod
    /// `classes`) receives probability `s + (1-s)/classes`.
    pub label_skew: f64,
}

impl SyntheticDataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("data.classes must be at least 2"));
        }
        if self.dims == 0 {
            return Err(Error::config("data.dims must be positive"));
        }
        if !(self.center_spread.is_finite() && self.center_spread > 0.0) {
            return Err(Error::config("data.center_spread must be positive"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma > 0.0) {
            return Err(Error::config("data.noise_sigma must be positive"));
        }
        if !(0.0..=1.0).contains(&self.label_skew) {
            return Err(Error::config("data.label_skew must lie in [0, 1]"));
        }
        Ok(())
    }
}

fn sample_point(
    centers: &[Vec<f64>],
    label: usize,
    sigma: f64,
    rng: &mut ChaCha20Rng,
    out: &mut Vec<f64>,
) {
    let normal = Normal::new(0.0, sigma).expect("sigma validated positive");
    for &c in &centers[label] {
        out.push(c + normal.sample(rng));
    }
}

/// Builds disjoint per-client shards plus a server-held holdout from one
/// synthetic pool. Shard `k` draws `client_sizes[k]` samples; the holdout
/// holds `test_fraction` of the combined pool and is label-balanced by
/// round-robin.
pub fn build_synthetic(
    cfg: &SyntheticDataConfig,
    client_sizes: &[usize],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<Dataset>, Dataset)> {
    cfg.validate()?;
    if client_sizes.is_empty() || client_sizes.iter().any(|&s| s == 0) {
        return Err(Error::config("every client needs a positive sample count"));
    }
    if !(0.0 < test_fraction && test_fraction < 1.0) {
        return Err(Error::config("data.test_fraction must lie in (0, 1)"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| {
            (0..cfg.dims)
                .map(|_| rng.gen_range(-cfg.center_spread..cfg.center_spread))
                .collect()
        })
        .collect();

    let train_total: usize = client_sizes.iter().sum();
    let test_size = ((train_total as f64) * test_fraction / (1.0 - test_fraction)).ceil() as usize;
    let test_size = test_size.max(cfg.classes);

    let mut shards = Vec::with_capacity(client_sizes.len());
    for (k, &size) in client_sizes.iter().enumerate() {
        let preferred = k % cfg.classes;
        let p_other = (1.0 - cfg.label_skew) / cfg.classes as f64;
        let mut features = Vec::with_capacity(size * cfg.dims);
        let mut labels = Vec::with_capacity(size);
        for _ in 0..size {
            let label = if rng.gen_range(0.0..1.0) < cfg.label_skew + p_other {
                preferred
            } else {
                // uniform over the remaining classes
                let mut c = rng.gen_range(0..cfg.classes - 1);
                if c >= preferred {
                    c += 1;
                }
                c
            };
            sample_point(&centers, label, cfg.noise_sigma, &mut rng, &mut features);
            labels.push(label);
        }
        shards.push(Dataset::new(features, cfg.dims, labels, cfg.classes)?);
    }

    let mut test_features = Vec::with_capacity(test_size * cfg.dims);
    let mut test_labels = Vec::with_capacity(test_size);
    for i in 0..test_size {
        let label = i % cfg.classes;
        sample_point(&centers, label, cfg.noise_sigma, &mut rng, &mut test_features);
        test_labels.push(label);
    }
    let test = Dataset::new(test_features, cfg.dims, test_labels, cfg.classes)?;
    Ok((shards, test))
}

/// Splits an existing dataset (typically CSV-loaded) into per-client shards
/// and a holdout, over a seeded shuffle of the row order.
pub fn partition_dataset(
    pool: &Dataset,
    client_sizes: &[usize],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<Dataset>, Dataset)> {
    if !(0.0 < test_fraction && test_fraction < 1.0) {
        return Err(Error::config("data.test_fraction must lie in (0, 1)"));
    }
    let test_size = ((pool.len() as f64) * test_fraction).ceil() as usize;
    let train_total: usize = client_sizes.iter().sum();
    if test_size + train_total > pool.len() {
        return Err(Error::config(format!(
            "dataset has {} rows but shards require {} plus a holdout of {}",
            pool.len(),
            train_total,
            test_size
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);

    let test = pool.subset(&order[..test_size]);
    let mut offset = test_size;
    let mut shards = Vec::with_capacity(client_sizes.len());
    for &size in client_sizes {
        shards.push(pool.subset(&order[offset..offset + size]));
        offset += size;
    }
    Ok((shards, test))
}

/// Loads a CSV dataset: header row, feature columns as reals, last column
/// an integer class label.
pub fn load_csv(path: &str) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| {
        Error::CsvFormat(format!("{path}: {e}"))
    })?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::CsvFormat(format!("{path} row {}: {e}", i + 2)))?;
        if row.len() < 2 {
            return Err(Error::CsvFormat(format!(
                "{path} row {}: need at least one feature column and a label",
                i + 2
            )));
        }
        let w = row.len() - 1;
        match width {
            None => width = Some(w),
            Some(prev) if prev != w => {
                return Err(Error::CsvFormat(format!(
                    "{path} row {}: expected {prev} feature columns, found {w}",
                    i + 2
                )));
            }
            _ => {}
        }
        for field in row.iter().take(w) {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::CsvFormat(format!("{path} row {}: bad feature '{field}'", i + 2))
            })?;
            features.push(v);
        }
        let label_field = row.get(w).expect("checked length");
        let label: i64 = label_field.trim().parse().map_err(|_| {
            Error::CsvFormat(format!("{path} row {}: bad label '{label_field}'", i + 2))
        })?;
        if label < 0 {
            return Err(Error::CsvFormat(format!(
                "{path} row {}: labels must be non-negative",
                i + 2
            )));
        }
        labels.push(label as usize);
    }
    let width = width.ok_or_else(|| Error::CsvFormat(format!("{path}: no data rows")))?;
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    if n_classes < 2 {
        return Err(Error::CsvFormat(format!(
            "{path}: need at least two distinct classes"
        )));
    }
    Dataset::new(features, width, labels, n_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn cfg() -> SyntheticDataConfig {
        SyntheticDataConfig {
            classes: 3,
            dims: 4,
            center_spread: 3.0,
            noise_sigma: 0.8,
            label_skew: 0.0,
        }
    }

    #[test]
    fn synthetic_shards_have_requested_sizes() {
        let (shards, test) = build_synthetic(&cfg(), &[50, 80, 30], 0.2, 7).unwrap();
        assert_eq!(shards.len(), 3);
        assert_eq!(shards[0].len(), 50);
        assert_eq!(shards[1].len(), 80);
        assert_eq!(shards[2].len(), 30);
        // 20% of the pool: 160 train rows -> 40 holdout rows
        assert_eq!(test.len(), 40);
    }

    #[test]
    fn synthetic_generation_is_deterministic() {
        let (a, ta) = build_synthetic(&cfg(), &[40, 40], 0.2, 9).unwrap();
        let (b, tb) = build_synthetic(&cfg(), &[40, 40], 0.2, 9).unwrap();
        assert_eq!(a[0].features(), b[0].features());
        assert_eq!(a[1].labels(), b[1].labels());
        assert_eq!(ta.features(), tb.features());
    }

    #[test]
    fn label_skew_biases_shard_composition() {
        let mut skewed = cfg();
        skewed.label_skew = 0.9;
        let (shards, _) = build_synthetic(&skewed, &[300, 300, 300], 0.2, 3).unwrap();
        for (k, shard) in shards.iter().enumerate() {
            let preferred = k % 3;
            let hits = shard.labels().iter().filter(|&&l| l == preferred).count();
            assert!(
                hits as f64 / shard.len() as f64 > 0.7,
                "shard {k} only {hits}/300 preferred"
            );
        }
    }

    #[test]
    fn csv_round_trip() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "f1,f2,label").unwrap();
        writeln!(file, "0.5,1.25,0").unwrap();
        writeln!(file, "-1.0,2.0,1").unwrap();
        writeln!(file, "3.5,-0.25,2").unwrap();
        let data = load_csv(file.path().to_str().unwrap()).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data.width(), 2);
        assert_eq!(data.n_classes(), 3);
        assert_eq!(data.row(1), &[-1.0, 2.0]);
        assert_eq!(data.labels(), &[0, 1, 2]);
    }

    #[test]
    fn csv_rejects_bad_rows() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "f1,f2,label").unwrap();
        writeln!(file, "0.5,oops,0").unwrap();
        assert!(load_csv(file.path().to_str().unwrap()).is_err());

        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "f1,f2,label").unwrap();
        writeln!(file, "0.5,1.0,-3").unwrap();
        assert!(load_csv(file.path().to_str().unwrap()).is_err());
    }

    #[test]
    fn partition_respects_sizes_and_disjointness() {
        let (shards, _) = build_synthetic(&cfg(), &[200], 0.2, 11).unwrap();
        let pool = &shards[0];
        let (parts, test) = partition_dataset(pool, &[60, 50], 0.2, 5).unwrap();
        assert_eq!(parts[0].len(), 60);
        assert_eq!(parts[1].len(), 50);
        assert_eq!(test.len(), 40);
        // insufficient rows errors out
        assert!(partition_dataset(pool, &[120, 120], 0.2, 5).is_err());
    }
}
