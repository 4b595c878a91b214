//! Dataset ingestion, synthetic generation and train/test splitting.

mod csv_io;
mod synth;

pub use csv_io::{load_csv, load_csv_inferred, save_csv, DatasetSchema};
pub use synth::{generate_synthetic, SyntheticSpec, Teacher};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::MatrixSample;

pub type Dataset = Vec<MatrixSample>;

/// Deterministic shuffled split into `(train, test)`. Each part keeps the
/// original sample order.
pub fn split(dataset: &[MatrixSample], ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let n = dataset.len();
    if n < 2 {
        return Err(Error::Config(format!(
            "cannot split a dataset of {n} sample(s)"
        )));
    }
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train_idx, test_idx) = idx.split_at_mut(n_train);
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((
        train_idx.iter().map(|&i| dataset[i].clone()).collect(),
        test_idx.iter().map(|&i| dataset[i].clone()).collect(),
    ))
}

/// SHA-256 over sample ids, shapes and values, hex encoded.
pub fn fingerprint(dataset: &[MatrixSample]) -> String {
    let mut h = Sha256::new();
    for s in dataset {
        h.update(s.id.as_bytes());
        h.update([0u8]);
        for m in std::iter::once(&s.input).chain(s.target.as_ref()) {
            h.update((m.rows() as u64).to_le_bytes());
            h.update((m.cols() as u64).to_le_bytes());
            for v in m.as_slice() {
                h.update(v.to_le_bytes());
            }
        }
    }
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn dataset(n: usize) -> Dataset {
        (0..n)
            .map(|i| {
                MatrixSample::new(
                    format!("s{i}"),
                    Matrix::filled(1, 1, i as f64),
                    Some(Matrix::filled(1, 1, 1.0)),
                )
            })
            .collect()
    }

    #[test]
    fn split_sizes_and_partition() {
        let d = dataset(10);
        let (train, test) = split(&d, 0.8, 7).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        let mut ids: Vec<String> = train.iter().chain(&test).map(|s| s.id.clone()).collect();
        ids.sort();
        let mut orig: Vec<String> = d.iter().map(|s| s.id.clone()).collect();
        orig.sort();
        assert_eq!(ids, orig);
    }

    #[test]
    fn split_is_deterministic() {
        let d = dataset(30);
        assert_eq!(split(&d, 0.7, 1).unwrap(), split(&d, 0.7, 1).unwrap());
        assert_ne!(split(&d, 0.7, 1).unwrap(), split(&d, 0.7, 2).unwrap());
    }

    #[test]
    fn split_errors() {
        assert!(split(&dataset(1), 0.5, 0).is_err());
        assert!(split(&dataset(5), 1.0, 0).is_err());
        let (a, b) = split(&dataset(2), 0.99, 0).unwrap();
        assert_eq!((a.len(), b.len()), (1, 1));
    }

    #[test]
    fn fingerprint_tracks_values() {
        let d = dataset(3);
        let mut e = d.clone();
        assert_eq!(fingerprint(&d), fingerprint(&e));
        e[1].input = Matrix::filled(1, 1, 42.0);
        assert_ne!(fingerprint(&d), fingerprint(&e));
        assert_eq!(fingerprint(&d).len(), 64);
    }
}
